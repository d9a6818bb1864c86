"""Tests for the evaluation harness: z-test, grid, reports and benchmark."""

import json

import pytest

from src.core import evaluation as ev
from src.core import linking, mpc, rope_sim
from src.models.enums import Method
from src.utils.config import HarnessConfig
from src.utils.exceptions import CheckpointError, DatasetError, ValidationError
from src.utils.persistence import JsonlWriter, read_jsonl, write_json
from tests.fixtures import RecordingScorer


def cells(*counts):
    """CellResults for (factor, hook, method, trials, successes) tuples on material M1, slack 0."""
    return [ev.CellResult(factor, hook, "M1", 0.0, method, n, s) for factor, hook, method, n, s in counts]


class TestZTest:
    def test_reference_value(self):
        z, p, degenerate = ev.ztest(41, 50, 27, 50)
        assert z == pytest.approx(3.0012, abs=1e-4)
        assert p == pytest.approx(0.0027, abs=1e-4)
        assert not degenerate

    def test_antisymmetric(self):
        z, p, _ = ev.ztest(27, 50, 41, 50)
        assert z == pytest.approx(-3.0012, abs=1e-4)
        assert p == pytest.approx(ev.ztest(41, 50, 27, 50)[1])

    def test_equal_rates(self):
        assert ev.ztest(5, 10, 10, 20) == (0.0, 1.0, False)

    @pytest.mark.parametrize("successes", [0, 10])
    def test_zero_variance(self, successes):
        assert ev.ztest(successes, 10, successes, 10) == (0.0, 1.0, True)

    @pytest.mark.parametrize("args", [(1, 0, 1, 5), (6, 5, 1, 5), (-1, 5, 1, 5), (1, 5, 1, -2)])
    def test_invalid_counts(self, args):
        with pytest.raises(ValidationError):
            ev.ztest(*args)


class TestGrid:
    def test_default_grid_cells(self):
        pairs = ev.grid_cells(HarnessConfig())
        assert len(pairs) == 11
        assert [f for f, _ in pairs].count("hook") == 5
        assert len(set(run for _, run in pairs)) == 9
        assert pairs[0] == ("hook", ev.GridRun("H1", "M1", 0.0))

    def test_run_names(self):
        run = ev.GridRun("H2", "M3", 0.03)
        assert run.key == "H2/M3/0.03"
        assert run.stem == "H2_M3_0.03"
        assert ev.GridRun("H1", "M1", 0.0).key == "H1/M1/0"

    def test_trial_seeds(self):
        seed = ev.trial_seed(0, "H1/M1/0", 3)
        assert seed == ev.trial_seed(0, "H1/M1/0", 3)
        assert seed != ev.trial_seed(0, "H1/M1/0", 4)
        assert seed != ev.trial_seed(0, "H2/M1/0", 3)
        assert seed != ev.trial_seed(1, "H1/M1/0", 3)
        assert isinstance(seed, int) and seed >= 0


class TestSummarize:
    def test_shared_run_counted_once(self):
        rows = cells(("hook", "H1", "a", 10, 8), ("material", "H1", "a", 10, 8), ("hook", "H2", "a", 10, 2),
                     ("hook", "H1", "b", 10, 4), ("material", "H1", "b", 10, 4), ("hook", "H2", "b", 10, 2))
        report = ev.summarize(rows)
        assert report.means == pytest.approx({"a": 0.6, "b": 10 / 30})
        (test,) = report.ztests
        assert (test["method_a"], test["method_b"]) == ("a", "b")
        assert test["z"] == pytest.approx(ev.ztest(10, 20, 6, 20)[0])

    def test_dict_round_trip(self):
        report = ev.summarize(cells(("hook", "H1", "a", 4, 3), ("hook", "H1", "b", 4, 1)), {"seed": 0})
        restored = ev.EvalReport.from_dict(json.loads(json.dumps(report.to_dict())))
        assert [c.row() for c in restored.cells] == [c.row() for c in report.cells]
        assert restored.ztests == report.ztests
        assert restored.provenance == {"seed": 0}

    def test_wrong_format(self):
        with pytest.raises(ValidationError):
            ev.EvalReport.from_dict({"format": "other", "rows": []})

    def test_pool_cells(self):
        a = ev.summarize(cells(("hook", "H1", "a", 4, 3)))
        b = ev.summarize(cells(("hook", "H1", "a", 6, 1), ("hook", "H2", "a", 2, 2)))
        pooled = ev.pool_cells([a, b])
        assert [(c.hook, c.trials, c.successes) for c in pooled] == [("H1", 10, 4), ("H2", 2, 2)]

    def test_table(self):
        report = ev.summarize(cells(("hook", "H1", "a", 10, 0), ("hook", "H1", "b", 10, 0)))
        table = ev.format_table(report)
        assert "mean S1" in table
        assert "z-test   a vs b" in table
        assert "(degenerate)" in table


class TestTrialConfig:
    def make(self, tmp_path, **kwargs):
        dyn, cost = tmp_path / "dyn.npz", tmp_path / "cost.npz"
        dyn.write_bytes(b"x")
        cost.write_bytes(b"x")
        values = dict(hook="H1", material="M1", slack=0.0, seed=0, method=Method.TURN_TAKING,
                      dynamics_path=dyn, cost_path=cost)
        values.update(kwargs)
        return ev.TrialConfig(**values)

    def test_valid(self, tmp_path):
        self.make(tmp_path).validate(HarnessConfig())

    @pytest.mark.parametrize("kwargs", [{"hook": "H7"}, {"material": "M0"}, {"slack": -0.01}])
    def test_invalid(self, tmp_path, kwargs):
        with pytest.raises(ValidationError):
            self.make(tmp_path, **kwargs).validate(HarnessConfig())

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(CheckpointError):
            self.make(tmp_path, cost_path=tmp_path / "absent.npz").validate(HarnessConfig())


class TestEvalGrid:
    def test_tiny_grid(self, tmp_path, cfg, models):
        report = ev.eval_grid(cfg, models, tmp_path)
        assert len(report.cells) == 9
        assert all(c.trials == 1 for c in report.cells)
        assert len(report.ztests) == 3
        assert sorted(p.name for p in (tmp_path / "trials").iterdir()) == [
            "H1_M1_0_baseline-fixed_000.jsonl", "H1_M1_0_baseline-uncontrolled_000.jsonl",
            "H1_M1_0_cart-mpc_000.jsonl"]
        header = (tmp_path / "eval.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header == ",".join(ev.CSV_COLUMNS)
        data = json.loads((tmp_path / "eval.json").read_text(encoding="utf-8"))
        assert data["format"] == ev.EVAL_FORMAT
        assert data["provenance"]["seed"] == cfg.grid.master_seed

    def test_no_logs(self, tmp_path, cfg, models):
        ev.eval_grid(cfg, models, tmp_path, methods=[Method.BASELINE_FIXED], write_logs=False)
        assert not (tmp_path / "trials").exists()

    def test_invalid_trial_count(self, tmp_path, cfg, models):
        with pytest.raises(ValidationError):
            ev.eval_grid(cfg, models, tmp_path, trials=0)

    def test_crash_isolation(self, cfg, models):
        result = ev.run_grid_trial(cfg, models, ev.GridRun("H1", "M9", 0.0), Method.TURN_TAKING, 0, "bad")
        assert not result.success
        assert result.error is not None

    def test_unexpected_error_is_a_failed_trial(self, cfg, models, mocker):
        mocker.patch.object(ev.mpc, "trial_for_method", side_effect=ValueError("operands could not be broadcast"))
        result = ev.run_grid_trial(cfg, models, ev.GridRun("H1", "M1", 0.0), Method.TURN_TAKING, 5, "odd")
        assert not result.success
        assert not result.diverged
        assert "ValueError" in result.error
        assert "Trial: odd" in result.error

    def test_grid_survives_numeric_crash(self, tmp_path, cfg, models, mocker):
        original = ev.mpc.trial_for_method

        def flaky(method, *args, **kwargs):
            if method is Method.TURN_TAKING:
                raise FloatingPointError("overflow encountered in multiply")
            return original(method, *args, **kwargs)

        mocker.patch.object(ev.mpc, "trial_for_method", side_effect=flaky)
        report = ev.eval_grid(cfg, models, tmp_path, write_logs=False)
        assert len(report.cells) == 9
        crashed = [c for c in report.cells if c.method == str(Method.TURN_TAKING)]
        assert crashed and all(c.successes == 0 and c.trials == 1 for c in crashed)


class TestReport:
    def test_missing_directory(self, tmp_path):
        with pytest.raises(ValidationError):
            ev.report(tmp_path / "absent")

    def test_empty_directory(self, tmp_path):
        summary = ev.report(tmp_path)
        assert summary.report.cells == []
        assert (tmp_path / "report.txt").exists()
        assert (tmp_path / "report.csv").exists()
        assert json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))["malformed"] == []

    def test_pools_and_lists_malformed(self, tmp_path):
        one = ev.summarize(cells(("hook", "H1", "a", 4, 3), ("hook", "H1", "b", 4, 1)))
        write_json(tmp_path / "run1" / "eval.json", one.to_dict())
        write_json(tmp_path / "run2" / "eval.json", one.to_dict())
        (tmp_path / "broken").mkdir()
        (tmp_path / "broken" / "eval.json").write_text("{not json", encoding="utf-8")
        write_json(tmp_path / "other" / "eval.json", {"format": "something-else", "rows": []})
        summary = ev.report(tmp_path)
        assert len(summary.sources) == 2
        assert len(summary.malformed) == 2
        assert [(c.method, c.trials, c.successes) for c in summary.report.cells] == [("a", 8, 6), ("b", 8, 2)]
        text = (tmp_path / "report.txt").read_text(encoding="utf-8")
        assert "malformed inputs:" in text
        assert "broken" in text


class TestOracleLinkTrajectory:
    def write(self, path, cfg, models, world):
        mpc.run_trial(world, models, cfg, seed=0, scorer=RecordingScorer(), trajectory_path=path,
                      trajectory_links=True)

    def test_matches_live_links(self, tmp_path, cfg, models, world):
        source = tmp_path / "traj.jsonl"
        self.write(source, cfg, models, world)
        summary = ev.oracle_link_trajectory(source, tmp_path / "traj.oracle.jsonl")
        header, records = read_jsonl(tmp_path / "traj.oracle.jsonl")
        _, live = read_jsonl(source)
        assert summary["frames"] == len(live)
        assert summary["singular"] == 0
        assert header["oracle"]["source"] == str(source)
        assert [r["link"] for r in records] == pytest.approx([r["link"] for r in live], abs=1e-12)
        assert summary["max_abs_link"] == pytest.approx(max(abs(r["link"]) for r in live))

    def test_scripted_frame(self, tmp_path, cfg):
        threaded = rope_sim.threaded_world(cfg, "H1", "M1", 0.0, 0.4)
        source = tmp_path / "one.jsonl"
        with JsonlWriter(source, rope_sim.trajectory_header(threaded)) as log:
            log.write(rope_sim.trajectory_record(threaded))
        ev.oracle_link_trajectory(source, tmp_path / "out.jsonl")
        _, (record,) = read_jsonl(tmp_path / "out.jsonl")
        assert record["link"] == pytest.approx(linking.world_link(threaded), abs=1e-12)
        assert record["bar_angle"] == threaded.bar_angle

    def test_not_a_trajectory(self, tmp_path, cfg, models, world):
        path = tmp_path / "trial.jsonl"
        mpc.run_trial(world, models, cfg, seed=0, scorer=RecordingScorer(), log_path=path)
        with pytest.raises(DatasetError) as info:
            ev.oracle_link_trajectory(path, tmp_path / "out.jsonl")
        assert info.value.reason == "format"

    def test_header_without_hook(self, tmp_path, world):
        path = tmp_path / "traj.jsonl"
        header = rope_sim.trajectory_header(world)
        del header["hook_shape"]
        with JsonlWriter(path, header) as log:
            log.write(rope_sim.trajectory_record(world))
        with pytest.raises(DatasetError) as info:
            ev.oracle_link_trajectory(path, tmp_path / "out.jsonl")
        assert info.value.reason == "header"

    def test_malformed_frame(self, tmp_path, world):
        path = tmp_path / "traj.jsonl"
        with JsonlWriter(path, rope_sim.trajectory_header(world)) as log:
            log.write({**rope_sim.trajectory_record(world), "positions": [[0.0, 0.0]]})
        with pytest.raises(DatasetError) as info:
            ev.oracle_link_trajectory(path, tmp_path / "out.jsonl")
        assert info.value.reason == "frame"


class TestBenchmark:
    def test_fields(self, cfg, models):
        result = ev.benchmark(models, cfg, repeats=1, dense_vertices=32)
        assert result["candidates"] == cfg.planner.candidates
        assert result["exact_dense_vertices"] == [32, 32]
        for key in ("c_link_single_s", "c_link_batch_s", "exact_s", "exact_dense_s", "speedup"):
            assert result[key] > 0
