"""
Logging for the strap tying stack.

Records go to stderr (stdout is reserved for the JSON and tables printed by
the CLI) and optionally to a rotating file. Long jobs such as data generation,
training, trials and grids are bracketed by an OperationLogger so that every
record in between carries the job id and the closing record its duration.
"""

import itertools
import logging
import logging.handlers
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional

from ..models.enums import LogLevel

_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
_operation_counter = itertools.count(1)


class OperationFormatter(logging.Formatter):
    """
    Pipe-separated formatter that prefixes the operation id and appends durations.

    Grid and data workers run in threads; ``include_thread`` adds the thread
    name so interleaved trials can be told apart.
    """

    def __init__(self, include_thread: bool = False, include_process: bool = False):
        fields = ["%(asctime)s", "%(levelname)-8s", "%(name)s"]
        if include_process:
            fields.append("pid=%(process)d")
        if include_thread:
            fields.append("%(threadName)s")
        fields.append("%(message)s")
        super().__init__(fmt=" | ".join(fields), datefmt=_DATE_FORMAT)

    def formatMessage(self, record: logging.LogRecord) -> str:
        text = record.message
        operation_id = getattr(record, "operation_id", None)
        if operation_id:
            text = f"[{operation_id}] {text}"
        elapsed = getattr(record, "elapsed_s", None)
        if elapsed is not None:
            text = f"{text} ({elapsed:.2f}s)"
        decorated = logging.makeLogRecord(record.__dict__)
        decorated.message = text
        return super().formatMessage(decorated)


class OperationLogger:
    """
    Module logger that tracks one operation at a time.

    Create one per concurrent job (``get_operation_logger`` returns a fresh
    instance); trials running in parallel must not share an instance.

    Attributes:
        logger: Underlying standard library logger
        operation_id: Id of the running operation, if any
    """

    def __init__(self, name: str, operation_id: Optional[str] = None):
        self.logger = logging.getLogger(name)
        self.operation_id = operation_id
        self._started: Optional[float] = None

    def start_operation(self, operation_id: str, description: str, **context):
        """
        Open an operation; later records carry ``operation_id``.

        Args:
            operation_id: Id from :func:`create_operation_context`
            description: What is being done, e.g. "Training dynamics model"
            **context: Sizes and settings worth seeing in the log
        """
        self.operation_id = operation_id
        self._started = time.perf_counter()
        self._emit(logging.INFO, _join(f"Starting: {description}", context))

    def end_operation(self, success: bool = True, result: Optional[str] = None, **context):
        """Close the running operation with its outcome and elapsed time."""
        elapsed = time.perf_counter() - self._started if self._started is not None else 0.0
        head = f"{'Completed' if success else 'Failed'}: {self.operation_id or 'operation'}"
        if result:
            head += f" | Result: {result}"
        self._emit(logging.INFO if success else logging.ERROR, _join(head, context), elapsed_s=elapsed)
        self.operation_id = None
        self._started = None

    def log_artifact(self, operation: str, path: Path, success: bool = True,
                     error: Optional[str] = None, **context):
        """
        Record a dataset, checkpoint, log or report read or written.

        The file size is appended when the file exists.
        """
        path = Path(path)
        head = f"{operation.upper()}: {path.name} [{'ok' if success else 'failed'}]"
        if error:
            head += f" | Error: {error}"
        if success and path.is_file():
            context = {**context, "bytes": path.stat().st_size}
        self._emit(logging.INFO if success else logging.ERROR, _join(head, context), artifact_path=str(path))

    def log_batch_progress(self, completed: int, total: int, current_item: Optional[str] = None,
                           every: int = 1):
        """
        Report progress over episodes, epochs or trials.

        Only every ``every``-th item and the last one are logged.
        """
        if completed != total and completed % max(every, 1):
            return
        share = 100.0 * completed / total if total > 0 else 0.0
        head = f"Progress: {completed}/{total} ({share:.0f}%)"
        if current_item:
            head += f" | {current_item}"
        self._emit(logging.INFO, head)

    def log_validation_result(self, item_name: str, valid: bool, reason: Optional[str] = None):
        """Accepted inputs go to debug, rejected ones to warning with the reason."""
        head = f"Validation: {item_name} [{'valid' if valid else 'rejected'}]"
        if reason:
            head += f" | Reason: {reason}"
        self._emit(logging.DEBUG if valid else logging.WARNING, head)

    def debug(self, message: str, **extra):
        self._emit(logging.DEBUG, message, **extra)

    def info(self, message: str, **extra):
        self._emit(logging.INFO, message, **extra)

    def warning(self, message: str, **extra):
        self._emit(logging.WARNING, message, **extra)

    def error(self, message: str, **extra):
        self._emit(logging.ERROR, message, **extra)

    def _emit(self, level: int, message: str, **extra):
        if self.operation_id:
            extra["operation_id"] = self.operation_id
        self.logger.log(level, message, extra=extra)


def _join(head: str, context: Dict[str, object]) -> str:
    if not context:
        return head
    return head + " | " + " | ".join(f"{k}={v}" for k, v in context.items())


def setup_logging(
    level: LogLevel = LogLevel.INFO,
    log_file: Optional[Path] = None,
    console_output: bool = True,
    max_file_size: int = 10 * 1024 * 1024,
    backup_count: int = 5,
    include_thread_info: bool = False,
    include_process_info: bool = False
) -> Dict[str, logging.Handler]:
    """
    Configure the root logger once per process.

    Args:
        level: Minimum level for every handler
        log_file: Rotating log file, created with its parent directories
        console_output: Log to stderr
        max_file_size: Bytes before the file rotates
        backup_count: Rotated files kept
        include_thread_info: Add the thread name to each record
        include_process_info: Add the process id to each record

    Returns:
        Installed handlers by name ("console", "file")
    """
    numeric = level.numeric_level
    formatter = OperationFormatter(include_thread=include_thread_info, include_process=include_process_info)
    root = logging.getLogger()
    root.setLevel(numeric)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        if isinstance(handler, logging.FileHandler):
            handler.close()

    handlers: Dict[str, logging.Handler] = {}
    if console_output:
        handlers["console"] = logging.StreamHandler(sys.stderr)
    if log_file:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers["file"] = logging.handlers.RotatingFileHandler(
            log_file, maxBytes=max_file_size, backupCount=backup_count, encoding="utf-8")
    if not handlers:
        handlers["null"] = logging.NullHandler()
    for handler in handlers.values():
        handler.setLevel(numeric)
        handler.setFormatter(formatter)
        root.addHandler(handler)
    return handlers


def get_operation_logger(name: str, operation_id: Optional[str] = None) -> OperationLogger:
    """A new OperationLogger for ``name`` (usually the module ``__name__``)."""
    return OperationLogger(name, operation_id)


def set_log_level(level: LogLevel):
    """Change the level of the root logger and all of its handlers."""
    numeric = level.numeric_level
    root = logging.getLogger()
    root.setLevel(numeric)
    for handler in root.handlers:
        handler.setLevel(numeric)


def create_operation_context(operation_type: str, tag: Optional[str] = None) -> str:
    """
    Operation id for log correlation: type, optional tag, clock time and a sequence number.

    The id holds wall-clock time; it belongs in logs only, never in artifacts.
    """
    stamp = f"{datetime.now():%H%M%S}-{next(_operation_counter)}"
    if tag:
        return f"{operation_type}_{str(tag)[:24]}_{stamp}"
    return f"{operation_type}_{stamp}"
