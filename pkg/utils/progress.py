"""Progress tracking and user feedback utilities."""
import sys
from contextlib import contextmanager
from typing import Iterable, Optional, TextIO, TypeVar

from tqdm import tqdm

T = TypeVar("T")


class ProgressTracker:
    """Stage-level console feedback plus tqdm bars for training loops."""

    def __init__(self, verbose: bool = True, output: Optional[TextIO] = None):
        self.verbose = verbose
        self.output = output or sys.stdout
        self._step = 0
        self._total_steps = 0

    def set_total_steps(self, total: int) -> None:
        """Set the total number of stages for progress tracking."""
        self._total_steps = total
        self._step = 0

    def _write(self, text: str) -> None:
        if self.verbose:
            self.output.write(text)
            self.output.flush()

    def step(self, message: str, details: Optional[str] = None) -> None:
        """Announce a pipeline stage with optional details."""
        if not self.verbose:
            return
        self._step += 1
        counter = f"[{self._step}/{self._total_steps}]" if self._total_steps > 0 else f"[{self._step}]"
        self._write(f"{counter} {message}...")
        if details:
            self._write(f"\n  → {details}")
        self._write("\n")

    def info(self, message: str) -> None:
        self._write(f"  ℹ {message}\n")

    def warning(self, message: str) -> None:
        self._write(f"  ⚠ {message}\n")

    def success(self, message: str) -> None:
        self._write(f"  ✓ {message}\n")

    def error(self, message: str) -> None:
        self._write(f"  ✗ {message}\n")

    def iterations(self, total: int, description: str) -> tqdm:
        """range(total) wrapped in a tqdm bar (silent unless verbose)."""
        return tqdm(range(total), desc=description, file=self.output,
                    disable=not self.verbose or total == 0, leave=False, dynamic_ncols=True)

    def track(self, items: Iterable[T], description: str, total: Optional[int] = None) -> Iterable[T]:
        return tqdm(items, desc=description, total=total, file=self.output,
                    disable=not self.verbose, leave=False, dynamic_ncols=True)

    @contextmanager
    def step_context(self, message: str):
        """Context manager for a stage that reports its own completion."""
        self._write(f"[{self._step + 1}] {message}...")
        try:
            yield self
            self._write(" ✓\n")
            self._step += 1
        except Exception as e:
            self._write(f" ✗ ({e})\n")
            raise
