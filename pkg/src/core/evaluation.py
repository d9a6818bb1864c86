"""
Evaluation harness: seeded trial grids, success statistics and reports.

The grid varies one factor at a time around a base cell (first hook, first
material, first slack level): every hook, every material, every slack level.
A run (hook, material, slack) shared by several factors is executed once and
reported under each of them.

eval.csv schema, one row per line, columns in this order:

    row_type    cell | mean | ztest
    factor      hook | material | slack (cell rows)
    hook, material, slack
    method      cell and mean rows
    trials, successes, diverged, s1
    method_a, method_b, z, p, degenerate   (ztest rows)

Unused columns are empty. eval.json carries the same rows plus provenance.
"""

import csv
import io
import json
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from ..models import TrialResult, WorldState
from ..models.enums import Method
from ..utils.config import HarnessConfig, config_hash
from ..utils.exceptions import (DatasetError, GeometryError, SimulationDivergedError, SingularConfigurationError,
                                StrapMpcError, TrialError, ValidationError)
from ..utils.logging import create_operation_context, get_operation_logger
from ..utils.persistence import TRAJECTORY_FORMAT, JsonlWriter, build_provenance, read_jsonl, write_json
from ..utils.validators import require_file, require_in_range, require_int_at_least, require_non_negative
from . import amortizer, dynamics_model, geometry, keypoints, linking, mpc, rope_sim

CSV_COLUMNS = ("row_type", "factor", "hook", "material", "slack", "method", "trials", "successes", "diverged",
               "s1", "method_a", "method_b", "z", "p", "degenerate")
EVAL_FORMAT = "strap-eval"

_log = get_operation_logger(__name__)


def ztest(successes_a: int, n_a: int, successes_b: int, n_b: int) -> Tuple[float, float, bool]:
    """
    Two-proportion pooled z-test, two-sided.

    Returns:
        (z, p, degenerate); a zero pooled variance gives (0, 1, True)

    Raises:
        ValidationError: If a group is empty or has more successes than trials
    """
    for s, n, name in ((successes_a, n_a, "a"), (successes_b, n_b, "b")):
        require_int_at_least(n, 1, f"n_{name}")
        require_in_range(s, 0, n, f"successes_{name}")
    pooled = (successes_a + successes_b) / (n_a + n_b)
    variance = pooled * (1.0 - pooled) * (1.0 / n_a + 1.0 / n_b)
    if variance <= 0.0:
        return 0.0, 1.0, True
    z = (successes_a / n_a - successes_b / n_b) / math.sqrt(variance)
    return z, float(2.0 * norm.sf(abs(z))), False


@dataclass
class TrialConfig:
    """
    Everything that identifies one trial.

    Attributes:
        hook: Hook preset id
        material: Material preset id
        slack: Extra strap length (m)
        seed: Trial seed
        method: Control method
        dynamics_path: Dynamics checkpoint
        cost_path: Amortizer checkpoint
        planner_overrides: ``planner.*`` override strings
    """
    hook: str
    material: str
    slack: float
    seed: int
    method: Method
    dynamics_path: Path
    cost_path: Path
    planner_overrides: List[str] = field(default_factory=list)

    def validate(self, cfg: HarnessConfig) -> None:
        """
        Raises:
            ValidationError: On unknown presets or negative slack
            CheckpointError: If a checkpoint is missing
        """
        if self.hook not in cfg.hooks:
            raise ValidationError("Unknown hook preset", field="hook", value=self.hook,
                                  constraint=f"one of {sorted(cfg.hooks)}")
        if self.material not in cfg.materials:
            raise ValidationError("Unknown material preset", field="material", value=self.material,
                                  constraint=f"one of {sorted(cfg.materials)}")
        require_non_negative(self.slack, "slack")
        require_file(self.dynamics_path, "dynamics checkpoint")
        require_file(self.cost_path, "cost checkpoint")

    def load_models(self) -> mpc.PlannerModels:
        """Load and cross-check both checkpoints."""
        return load_models(self.dynamics_path, self.cost_path)


def load_models(dynamics_path: Path, cost_path: Path) -> mpc.PlannerModels:
    """
    Raises:
        CheckpointError: If a checkpoint is missing, malformed or of another version
        ShapeMismatchError: If the two models disagree on keypoints or history
    """
    return mpc.PlannerModels(dynamics_model.load_dynamics(dynamics_path), amortizer.load_amortizer(cost_path))


def trial_seed(master_seed: int, run_key: str, trial: int) -> int:
    """Seed of one trial; independent of the method so all methods see the same starts."""
    state = np.random.SeedSequence([master_seed, zlib.crc32(run_key.encode("utf-8")), trial]).generate_state(1)
    return int(state[0])


def trial_world(cfg: HarnessConfig, hook: str, material: str, slack: float, seed: int) -> WorldState:
    """Jittered, settled, grasped start of a trial."""
    world = rope_sim.initial_world(cfg, hook, material, slack, rng=np.random.default_rng(seed))
    world, _ = rope_sim.settle(world, cfg.data.settle_steps, min_steps=cfg.data.settle_steps)
    world.step_index = 0
    return world


@dataclass(frozen=True)
class GridRun:
    """One (hook, material, slack) setting."""
    hook: str
    material: str
    slack: float

    @property
    def key(self) -> str:
        return f"{self.hook}/{self.material}/{self.slack:g}"

    @property
    def stem(self) -> str:
        return f"{self.hook}_{self.material}_{self.slack:g}"


@dataclass
class CellResult:
    """Success counts of one method on one grid cell."""
    factor: str
    hook: str
    material: str
    slack: float
    method: str
    trials: int = 0
    successes: int = 0
    diverged: int = 0

    @property
    def s1(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    @property
    def run_key(self) -> str:
        return GridRun(self.hook, self.material, self.slack).key

    def row(self) -> Dict[str, Any]:
        return {"row_type": "cell", "factor": self.factor, "hook": self.hook, "material": self.material,
                "slack": self.slack, "method": self.method, "trials": self.trials,
                "successes": self.successes, "diverged": self.diverged, "s1": self.s1}

    @classmethod
    def from_row(cls, row: Dict[str, Any]) -> "CellResult":
        return cls(str(row["factor"]), str(row["hook"]), str(row["material"]), float(row["slack"]),
                   str(row["method"]), int(row["trials"]), int(row["successes"]), int(row["diverged"]))


@dataclass
class EvalReport:
    """
    Grid outcome.

    Attributes:
        cells: Per-cell, per-method counts in grid order
        means: Mean S₁ over cells per method
        ztests: Pairwise tests on counts pooled over distinct runs
        provenance: Config hash, seed and code version
    """
    cells: List[CellResult] = field(default_factory=list)
    means: Dict[str, float] = field(default_factory=dict)
    ztests: List[Dict[str, Any]] = field(default_factory=list)
    provenance: Dict[str, Any] = field(default_factory=dict)

    def rows(self) -> List[Dict[str, Any]]:
        rows = [c.row() for c in self.cells]
        rows += [{"row_type": "mean", "method": m, "s1": s} for m, s in self.means.items()]
        rows += [{"row_type": "ztest", **t} for t in self.ztests]
        return rows

    def to_dict(self) -> Dict[str, Any]:
        return {"format": EVAL_FORMAT, "provenance": self.provenance, "rows": self.rows()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalReport":
        if not isinstance(data, dict) or data.get("format") != EVAL_FORMAT:
            found = data.get("format") if isinstance(data, dict) else type(data).__name__
            raise ValidationError("Not an evaluation report", field="format", value=found)
        cells = [CellResult.from_row(r) for r in data["rows"] if r["row_type"] == "cell"]
        return summarize(cells, data.get("provenance", {}))


def summarize(cells: List[CellResult], provenance: Optional[Dict[str, Any]] = None) -> EvalReport:
    """Means per method and pairwise z-tests; a run listed under several factors counts once in the tests."""
    methods = list(dict.fromkeys(c.method for c in cells))
    means = {m: float(np.mean([c.s1 for c in cells if c.method == m])) for m in methods}
    pooled: Dict[str, Tuple[int, int]] = {}
    for method in methods:
        seen = {}
        for c in cells:
            if c.method == method:
                seen.setdefault(c.run_key, c)
        pooled[method] = (sum(c.successes for c in seen.values()), sum(c.trials for c in seen.values()))
    tests = []
    for a, b in combinations(methods, 2):
        (sa, na), (sb, nb) = pooled[a], pooled[b]
        if na == 0 or nb == 0:
            continue
        z, p, degenerate = ztest(sa, na, sb, nb)
        tests.append({"method_a": a, "method_b": b, "z": z, "p": p, "degenerate": degenerate})
    return EvalReport(cells, means, tests, provenance or {})


def grid_cells(cfg: HarnessConfig) -> List[Tuple[str, GridRun]]:
    """(factor, run) pairs in report order."""
    grid = cfg.grid
    base_hook, base_material, base_slack = grid.hooks[0], grid.materials[0], grid.slack_levels[0]
    cells = [("hook", GridRun(h, base_material, base_slack)) for h in grid.hooks]
    cells += [("material", GridRun(base_hook, m, base_slack)) for m in grid.materials]
    cells += [("slack", GridRun(base_hook, base_material, float(s))) for s in grid.slack_levels]
    return cells


def run_grid_trial(cfg: HarnessConfig, models: mpc.PlannerModels, run: GridRun, method: Method, seed: int,
                   trial_id: str, log_path: Optional[Path] = None,
                   provenance: Optional[Dict[str, Any]] = None) -> TrialResult:
    """One trial with crash isolation: any error inside the trial becomes a failed trial."""
    try:
        world = trial_world(cfg, run.hook, run.material, run.slack, seed)
        return mpc.trial_for_method(method, world, models, cfg, seed, trial_id=trial_id, log_path=log_path,
                                    provenance=provenance)
    except SimulationDivergedError as e:
        _log.warning(f"Trial {trial_id} diverged before planning: {e}")
        return TrialResult(trial_id, method, seed, diverged=True, error=str(e))
    except StrapMpcError as e:
        error = TrialError(f"Trial failed: {e.message}", trial_id=trial_id, seed=seed, details=e.details)
        _log.error(str(error))
        return TrialResult(trial_id, method, seed, error=str(error))
    except Exception as e:
        error = TrialError(f"Trial crashed: {type(e).__name__}: {e}", trial_id=trial_id, seed=seed)
        _log.error(str(error))
        return TrialResult(trial_id, method, seed, error=str(error))


def _write_csv(path: Path, rows: List[Dict[str, Any]]) -> Path:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell_text(row.get(k)) for k in CSV_COLUMNS})
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buffer.getvalue(), encoding="utf-8")
    return path


def _cell_text(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def eval_grid(cfg: HarnessConfig, models: mpc.PlannerModels, out_dir: Path,
              trials: Optional[int] = None, methods: Optional[Sequence[Method]] = None,
              workers: Optional[int] = None, write_logs: bool = True) -> EvalReport:
    """
    Run every method on every grid cell and write eval.csv / eval.json.

    Trial seeds come from the master seed, the run and the trial index, so
    results do not depend on ``workers``. Diverged trials count as failures.
    """
    grid = cfg.grid
    trials = grid.trials if trials is None else trials
    methods = [Method(m) for m in grid.methods] if methods is None else list(methods)
    workers = grid.workers if workers is None else workers
    require_int_at_least(trials, 1, "grid.trials")
    out_dir = Path(out_dir)
    provenance = build_provenance(config_hash(cfg), grid.master_seed)
    cells = grid_cells(cfg)
    runs = list(dict.fromkeys(run for _, run in cells))
    jobs = [(run, method, t) for run in runs for method in methods for t in range(trials)]

    op = create_operation_context("eval_grid")
    _log.start_operation(op, "Evaluation grid", runs=len(runs), methods=len(methods), trials=trials,
                         workers=workers)

    def job(run: GridRun, method: Method, t: int) -> TrialResult:
        seed = trial_seed(grid.master_seed, run.key, t)
        trial_id = f"{run.stem}_{method}_{t:03d}"
        log_path = out_dir / "trials" / f"{trial_id}.jsonl" if write_logs else None
        return run_grid_trial(cfg, models, run, method, seed, trial_id, log_path, provenance)

    results: List[TrialResult] = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(job, *j) for j in jobs]
            for i, future in enumerate(futures):
                results.append(future.result())
                _log.log_batch_progress(i + 1, len(jobs), results[-1].trial_id)
    else:
        for i, j in enumerate(jobs):
            results.append(job(*j))
            _log.log_batch_progress(i + 1, len(jobs), results[-1].trial_id)

    counts: Dict[Tuple[str, str], List[TrialResult]] = {}
    for (run, method, _), result in zip(jobs, results):
        counts.setdefault((run.key, str(method)), []).append(result)
    rows = []
    for factor, run in cells:
        for method in methods:
            outcomes = counts[(run.key, str(method))]
            rows.append(CellResult(factor, run.hook, run.material, run.slack, str(method), len(outcomes),
                                   sum(r.success for r in outcomes), sum(r.diverged for r in outcomes)))
    report = summarize(rows, provenance)
    _write_csv(out_dir / "eval.csv", report.rows())
    write_json(out_dir / "eval.json", report.to_dict())
    _log.log_artifact("eval_grid", out_dir / "eval.csv", cells=len(rows))
    _log.end_operation(True, ", ".join(f"{m} S1={s:.2f}" for m, s in report.means.items()))
    return report


@dataclass
class ReportSummary:
    """Pooled reports found under a directory, plus the files that could not be read."""
    report: EvalReport
    sources: List[Path] = field(default_factory=list)
    malformed: List[Tuple[Path, str]] = field(default_factory=list)


def pool_cells(reports: Sequence[EvalReport]) -> List[CellResult]:
    """Sum counts of identical (factor, run, method) cells, keeping first-seen order."""
    pooled: Dict[Tuple[str, str, str], CellResult] = {}
    for rep in reports:
        for c in rep.cells:
            key = (c.factor, c.run_key, c.method)
            if key not in pooled:
                pooled[key] = CellResult(c.factor, c.hook, c.material, c.slack, c.method)
            target = pooled[key]
            target.trials += c.trials
            target.successes += c.successes
            target.diverged += c.diverged
    return list(pooled.values())


def format_table(report: EvalReport) -> str:
    """Fixed-width text table of cell, mean and z-test rows."""
    lines = [f"{'factor':<9}{'hook':<6}{'material':<10}{'slack':>7}  {'method':<24}"
             f"{'trials':>7}{'succ':>6}{'div':>5}{'S1':>7}"]
    for c in report.cells:
        lines.append(f"{c.factor:<9}{c.hook:<6}{c.material:<10}{c.slack:>7.3f}  {c.method:<24}"
                     f"{c.trials:>7}{c.successes:>6}{c.diverged:>5}{c.s1:>7.2f}")
    if report.means:
        lines.append("")
        lines += [f"mean S1  {m:<24}{s:.3f}" for m, s in report.means.items()]
    if report.ztests:
        lines.append("")
        for t in report.ztests:
            flag = " (degenerate)" if t["degenerate"] else ""
            lines.append(f"z-test   {t['method_a']} vs {t['method_b']}: z={t['z']:.3f} p={t['p']:.4f}{flag}")
    return "\n".join(lines) + "\n"


def report(directory: Path) -> ReportSummary:
    """
    Pool every eval.json under ``directory`` and write report.txt, report.csv and report.json there.

    Unreadable or malformed inputs are listed and skipped.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError("Report directory does not exist", field="directory", value=str(directory))
    reports, sources, malformed = [], [], []
    for path in sorted(directory.rglob("eval.json")):
        try:
            reports.append(EvalReport.from_dict(json.loads(path.read_text(encoding="utf-8"))))
            sources.append(path)
            _log.log_validation_result(str(path), True)
        except (OSError, ValueError, KeyError, TypeError, StrapMpcError) as e:
            _log.log_validation_result(str(path), False, str(e))
            malformed.append((path, str(e)))
    pooled = summarize(pool_cells(reports), {"sources": [str(p.relative_to(directory)) for p in sources]})
    table = format_table(pooled)
    if malformed:
        table += "\nmalformed inputs:\n" + "".join(f"  {p.relative_to(directory)}: {e}\n" for p, e in malformed)
    (directory / "report.txt").write_text(table, encoding="utf-8")
    _write_csv(directory / "report.csv", pooled.rows())
    data = pooled.to_dict()
    data["malformed"] = [str(p.relative_to(directory)) for p, _ in malformed]
    write_json(directory / "report.json", data)
    _log.log_artifact("report", directory / "report.txt", sources=len(sources), malformed=len(malformed))
    return ReportSummary(pooled, sources, malformed)


def _time_per_call(fn, repeats: int) -> float:
    fn()
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def benchmark(models: mpc.PlannerModels, cfg: HarnessConfig, repeats: int = 5, dense_vertices: int = 1024,
              seed: int = 0) -> Dict[str, Any]:
    """
    Time the learned cost against the exact linking sum.

    Measures one c_link call, a planner-sized batch of K histories and the
    exact sum on a trial start (default discretization and ``dense_vertices``
    per curve). Speedups compare per-history cost.
    """
    world = trial_world(cfg, cfg.data.hook, cfg.data.material, cfg.data.slack, seed)
    cameras = keypoints.make_cameras(cfg)
    history = keypoints.History(models.history_length).push(
        keypoints.extract(world, cameras, models.keypoint_count))
    count = cfg.planner.candidates
    batch = np.repeat(history.features()[None, :], count, axis=0)
    strap = linking.strap_curve(world.rope.positions, cfg.scene.closure_drop)
    hook = linking.hook_curve(world)
    dense_strap = linking.virtual_closure(world.rope.positions, cfg.scene.closure_drop).resample(dense_vertices)
    dense_hook = hook.resample(dense_vertices)

    op = create_operation_context("benchmark")
    _log.start_operation(op, "Benchmark linking cost", candidates=count, repeats=repeats)
    single = _time_per_call(lambda: amortizer.c_link(models.amortizer, history), repeats)
    batched = _time_per_call(lambda: amortizer.c_link_batch(models.amortizer, batch), repeats)
    exact = _time_per_call(lambda: linking.link_with_jitter(strap, hook, seed=seed), repeats)
    exact_dense = _time_per_call(lambda: linking.link_with_jitter(dense_strap, dense_hook, seed=seed),
                                 max(1, repeats // 5))
    per_history = batched / count
    result = {
        "candidates": count,
        "c_link_single_s": single,
        "c_link_batch_s": batched,
        "c_link_per_history_s": per_history,
        "exact_s": exact,
        "exact_vertices": [strap.count, hook.count],
        "exact_dense_s": exact_dense,
        "exact_dense_vertices": [dense_strap.count, dense_hook.count],
        "speedup": exact / per_history,
        "speedup_dense": exact_dense / per_history,
    }
    _log.end_operation(True, f"speedup {result['speedup']:.1f}x ({result['speedup_dense']:.1f}x dense)")
    return result


def oracle_link_trajectory(in_path: Path, out_path: Path, seed: int = 0) -> Dict[str, Any]:
    """
    Annotate a trajectory log with the exact linking value of every frame.

    Reads a ``strap-trajectory`` JSONL log, rebuilds the hook from the header
    and writes the same records to ``out_path`` with a ``link`` field per step.
    A frame that stays singular after jitter retries gets ``link: null``.

    Returns:
        Summary with frame and singular counts and the |link| range

    Raises:
        DatasetError: If the log is not a trajectory or a frame is malformed
    """
    in_path, out_path = Path(in_path), Path(out_path)
    header, records = read_jsonl(in_path)
    if header.get("format") != TRAJECTORY_FORMAT:
        raise DatasetError("Not a trajectory log", path=in_path, reason="format",
                           details={"format": header.get("format")})
    try:
        shape = geometry.shape_from_record(header["hook_shape"])
        drop = float(header["closure_drop"])
    except (KeyError, TypeError, ValueError, GeometryError) as e:
        raise DatasetError("Trajectory header lacks hook geometry", path=in_path, reason="header",
                           details={"error": str(e)}) from e

    op = create_operation_context("oracle_link", in_path.name)
    _log.start_operation(op, "Oracle linking", frames=len(records))
    links: List[float] = []
    singular = 0
    with JsonlWriter(out_path, {**header, "oracle": {"source": str(in_path), "seed": seed}}) as out:
        for number, record in enumerate(records):
            if record.get("type") != "step":
                out.write(record)
                continue
            try:
                positions = np.asarray(record["positions"], dtype=np.float64)
                bar_angle = float(record["bar_angle"])
            except (KeyError, TypeError, ValueError) as e:
                raise DatasetError("Malformed trajectory frame", path=in_path, reason="frame",
                                   details={"record": number, "error": str(e)}) from e
            if positions.ndim != 2 or positions.shape[1] != 3 or positions.shape[0] < 2:
                raise DatasetError("Malformed trajectory frame", path=in_path, reason="frame",
                                   details={"record": number, "shape": list(positions.shape)})
            try:
                link: Optional[float] = linking.frame_link(positions, bar_angle, shape, drop, seed=seed + number)
                links.append(link)
            except SingularConfigurationError as e:
                link = None
                singular += 1
                _log.warning(f"Frame {record.get('step', number)} singular: {e}")
            out.write({**record, "link": link})

    magnitudes = np.abs(np.asarray(links)) if links else np.zeros(0)
    summary = {
        "path": str(out_path),
        "frames": len(links) + singular,
        "singular": singular,
        "min_abs_link": float(magnitudes.min()) if links else None,
        "max_abs_link": float(magnitudes.max()) if links else None,
    }
    _log.log_artifact("oracle_link", out_path, frames=summary["frames"], singular=singular)
    _log.end_operation(True, f"{summary['frames']} frames linked")
    return summary
