"""Batch scanning: header extraction across a bounded worker pool."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .dicomio import HeaderRecord, ParseStatus, extract_header, scan_path


@dataclass
class ScanRecord:
    """Per-file scan result: status, size, and the header when recoverable."""

    file_path: str
    file_size: int
    status: ParseStatus
    error_detail: str | None
    header: HeaderRecord | None

    def to_dict(self) -> dict:
        return {
            "file_path": self.file_path,
            "file_size": self.file_size,
            "status": self.status.value,
            "error_detail": self.error_detail,
            "header": self.header.to_dict() if self.header else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanRecord":
        return cls(
            file_path=d["file_path"],
            file_size=d["file_size"],
            status=ParseStatus(d["status"]),
            error_detail=d.get("error_detail"),
            header=HeaderRecord.from_dict(d["header"]) if d.get("header") else None,
        )


def scan_one(root: Path, rel_path: str) -> ScanRecord:
    outcome, size = scan_path(Path(root) / rel_path)
    if outcome.status is ParseStatus.CORRUPT:
        return ScanRecord(rel_path, size, outcome.status, outcome.error_detail, None)
    header = extract_header(outcome, rel_path, size)
    return ScanRecord(rel_path, size, outcome.status, None, header)


def scan_batch(root, rel_paths: Sequence[str], workers: int = 4) -> list[ScanRecord]:
    """Scan the given files under root, preserving input order."""
    root = Path(root)
    if not rel_paths:
        return []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda rel: scan_one(root, rel), rel_paths))


@dataclass
class BenchResult:
    files: int
    elapsed_seconds: float
    files_per_second: float

    def to_dict(self) -> dict:
        return {
            "files": self.files,
            "elapsed_seconds": round(self.elapsed_seconds, 6),
            "files_per_second": round(self.files_per_second, 1),
        }


def measure_scan_rate(root, rel_paths: Sequence[str], workers: int = 4) -> BenchResult:
    """Time a full header scan over the given files."""
    t0 = time.perf_counter()
    records = scan_batch(root, rel_paths, workers=workers)
    elapsed = time.perf_counter() - t0
    n = len(records)
    return BenchResult(n, elapsed, n / elapsed if elapsed > 0 else float("inf"))
