"""Run directories: every artifact a command emits goes through one jailed writer."""

import csv
import io
import json
import logging
import os
import pathlib
import tempfile
import threading
from collections.abc import Iterable, Sequence
from typing import Callable

from pydantic import BaseModel


class OutputError(Exception):
    """A run artifact could not be written."""


class RunDirectory:
    """Writes run artifacts under a root directory.

    Writes are atomic (temporary file in the target directory, then
    ``os.replace``), serialized by a reentrant lock, and recorded in
    ``emitted`` in the order they happened. Paths must stay inside the root.
    """

    def __init__(
        self,
        root: pathlib.Path,
        logger: logging.Logger | None = None,
        post_write_hooks: list[Callable[[pathlib.Path], None]] | None = None,
    ):
        self.root = pathlib.Path(root).resolve()
        self.lock = threading.RLock()
        self.logger = logger or logging.getLogger(__name__)
        self.post_write_hooks = post_write_hooks or []
        self.emitted: list[str] = []
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            msg = f"Cannot create run directory {self.root}: {e}"
            self.logger.error(msg)
            raise OutputError(msg) from e

    def _resolve_path(self, rel_path: str | pathlib.Path) -> pathlib.Path:
        rel_path = pathlib.Path(rel_path)
        if rel_path.is_absolute() or ".." in rel_path.parts:
            msg = f"Path must be relative and not contain '..': {rel_path}"
            self.logger.error(msg)
            raise OutputError(msg)
        abs_path = (self.root / rel_path).resolve()
        if self.root not in abs_path.parents:
            msg = f"Resolved path is outside the run directory: {abs_path}"
            self.logger.error(msg)
            raise OutputError(msg)
        return abs_path

    def write_text(self, rel_path: str | pathlib.Path, content: str) -> pathlib.Path:
        abs_path = self._resolve_path(rel_path)
        with self.lock:
            if abs_path.exists() and not abs_path.is_file():
                msg = f"Cannot write: path exists but is not a file: {abs_path}"
                self.logger.error(msg)
                raise OutputError(msg)
            temp_path = None
            try:
                abs_path.parent.mkdir(parents=True, exist_ok=True)
                with tempfile.NamedTemporaryFile(
                    mode="w", encoding="utf-8", newline="", delete=False, dir=abs_path.parent.as_posix()
                ) as tmp_file:
                    tmp_file.write(content)
                    temp_path = tmp_file.name
                os.replace(temp_path, abs_path.as_posix())
                temp_path = None
            except OSError as e:
                msg = f"Error writing file {abs_path}: {e}"
                self.logger.error(msg)
                raise OutputError(msg) from e
            finally:
                if temp_path and os.path.exists(temp_path):
                    os.unlink(temp_path)

            relative = abs_path.relative_to(self.root).as_posix()
            if relative not in self.emitted:
                self.emitted.append(relative)
            self.logger.debug(f"Wrote {abs_path}")
            for hook in self.post_write_hooks:
                name = getattr(hook, "__name__", None) or str(hook)
                try:
                    hook(abs_path)
                except Exception as e:
                    self.logger.error(f"Post-write hook {name} failed for {abs_path}: {e}")
        return abs_path

    def write_snapshot(
        self, rel_path: str | pathlib.Path, header: Sequence[str], rows: Iterable[Sequence[float]]
    ) -> pathlib.Path:
        """Delimited text, one row per node, 17 significant digits."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                msg = f"Row of {len(row)} values under a {len(header)}-column header in {rel_path}"
                self.logger.error(msg)
                raise OutputError(msg)
            writer.writerow(format(float(value), ".17g") for value in row)
        return self.write_text(rel_path, buffer.getvalue())

    def write_report(self, rel_path: str | pathlib.Path, report: BaseModel | dict) -> pathlib.Path:
        """JSON with sorted keys and two-space indent."""
        payload = report.model_dump(mode="json", by_alias=True) if isinstance(report, BaseModel) else report
        return self.write_text(rel_path, json.dumps(payload, sort_keys=True, indent=2) + "\n")
