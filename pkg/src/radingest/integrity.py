"""Per-file hash snapshots of received batches.

A snapshot records path, size, and SHA-256 digest for every payload file in
a batch root, serialized as a canonical TSV so two snapshots of the same
tree are byte-identical.  Verification recomputes digests and reports
missing, added, and mismatched paths.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

SNAPSHOT_FILENAME = "_integrity.snapshot.tsv"
SNAPSHOT_MAGIC = "#vision-snapshot v1"

# Batch-root entries owned by the pipeline rather than the transfer payload:
# the two manifests plus anything underscore-prefixed (snapshot, reports).
MANIFEST_FILENAMES = ("studies.manifest.tsv", "files.manifest.tsv")

_CHUNK = 1 << 16


class SnapshotError(Exception):
    """Raised when a snapshot cannot be created or parsed."""


def hash_bytes(data: bytes) -> str:
    """SHA-256 of a byte sequence as lowercase hex."""
    return hashlib.sha256(data).hexdigest()


def hash_file(path) -> str:
    """SHA-256 of a file's contents, read in chunks."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while chunk := fh.read(_CHUNK):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class SnapshotEntry:
    path: str
    size: int
    digest: str


@dataclass
class HashSnapshot:
    batch_id: str
    created_at: str
    entries: list[SnapshotEntry] = field(default_factory=list)

    def by_path(self) -> dict[str, SnapshotEntry]:
        return {e.path: e for e in self.entries}

    def to_tsv(self) -> str:
        lines = [f"{SNAPSHOT_MAGIC}\t{self.batch_id}\t{self.created_at}"]
        lines.extend(f"{e.path}\t{e.size}\t{e.digest}" for e in self.entries)
        return "\n".join(lines) + "\n"


@dataclass
class VerificationReport:
    ok: bool
    missing: list[str]
    added: list[str]
    mismatched: list[str]


def _is_payload_file(rel_posix: str) -> bool:
    parts = rel_posix.split("/")
    if any(p.startswith("_") for p in parts):
        return False
    return parts[-1] not in MANIFEST_FILENAMES


def iter_payload_files(batch_root) -> list[str]:
    """Relative forward-slash paths of payload files, sorted."""
    root = Path(batch_root)
    found = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            rel = (Path(dirpath) / name).relative_to(root).as_posix()
            if _is_payload_file(rel):
                found.append(rel)
    return found


def snapshot_batch(batch_root, batch_id: str, created_at: str = "", workers: int = 4) -> HashSnapshot:
    """Hash every payload file under batch_root into a canonical snapshot.

    Hashing fans out across a small worker pool; assembly is a single
    sorted merge.  Any unreadable file aborts the whole snapshot: integrity
    is all-or-nothing.
    """
    root = Path(batch_root)
    if not root.is_dir():
        raise SnapshotError(f"batch root does not exist: {root}")
    paths = iter_payload_files(root)

    def one(rel: str) -> SnapshotEntry:
        full = root / rel
        try:
            return SnapshotEntry(rel, full.stat().st_size, hash_file(full))
        except OSError as exc:
            raise SnapshotError(f"unreadable file in batch: {rel} ({exc})") from exc

    with ThreadPoolExecutor(max_workers=workers) as pool:
        entries = list(pool.map(one, paths))
    return HashSnapshot(batch_id, created_at, sorted(entries, key=lambda e: e.path))


def parse_snapshot(text: str) -> HashSnapshot:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(SNAPSHOT_MAGIC):
        raise SnapshotError("not a snapshot file (missing magic header)")
    header = lines[0].split("\t")
    batch_id = header[1] if len(header) > 1 else ""
    created_at = header[2] if len(header) > 2 else ""
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise SnapshotError(f"snapshot line {lineno}: expected 3 columns, got {len(parts)}")
        path, size_s, digest = parts
        try:
            size = int(size_s)
        except ValueError:
            raise SnapshotError(f"snapshot line {lineno}: bad size {size_s!r}") from None
        entries.append(SnapshotEntry(path, size, digest))
    return HashSnapshot(batch_id, created_at, entries)


def write_snapshot(snapshot: HashSnapshot, batch_root) -> Path:
    out = Path(batch_root) / SNAPSHOT_FILENAME
    out.write_text(snapshot.to_tsv(), encoding="utf-8", newline="")
    return out


def load_snapshot(batch_root) -> HashSnapshot:
    path = Path(batch_root) / SNAPSHOT_FILENAME
    return parse_snapshot(path.read_text(encoding="utf-8"))


def verify_snapshot(snapshot: HashSnapshot, batch_root) -> VerificationReport:
    """Recompute the batch and diff it against the snapshot.

    Problems are report content, never exceptions.
    """
    root = Path(batch_root)
    recorded = snapshot.by_path()
    on_disk = set(iter_payload_files(root))
    missing = sorted(set(recorded) - on_disk)
    added = sorted(on_disk - set(recorded))
    mismatched = []
    for rel in sorted(on_disk & set(recorded)):
        entry = recorded[rel]
        full = root / rel
        if full.stat().st_size != entry.size or hash_file(full) != entry.digest:
            mismatched.append(rel)
    ok = not (missing or added or mismatched)
    return VerificationReport(ok, missing, added, mismatched)
