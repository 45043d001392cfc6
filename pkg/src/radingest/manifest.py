"""Batch manifest pair: grammar, reconciliation, accession normalization.

Each transferred batch carries two TSV manifests, one study-level and one
file-level.  Reconciliation diffs them against the hash snapshot and the
scanned headers, classifying every discrepancy; legacy batches without
manifests are reported as unverifiable rather than incomplete.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .dicomio import HeaderRecord
from .integrity import HashSnapshot

MANIFEST_MAGIC = "#vision-manifest v1"
STUDY_MANIFEST_FILENAME = "studies.manifest.tsv"
FILE_MANIFEST_FILENAME = "files.manifest.tsv"

_HEX_DIGEST = re.compile(r"[0-9a-f]{64}")


class ManifestError(Exception):
    """Malformed manifest text or violated pair invariants."""


@dataclass(frozen=True)
class StudyManifestRow:
    accession_number: str
    study_uid: str
    modality: str
    expected_file_count: int


@dataclass(frozen=True)
class FileManifestRow:
    path: str
    sop_uid: str
    accession_number: str
    size: int
    digest: str


@dataclass
class BatchManifestPair:
    studies: list[StudyManifestRow]
    files: list[FileManifestRow]

    def expected_total(self) -> int:
        return sum(s.expected_file_count for s in self.studies)

    def file_paths(self) -> set[str]:
        return {f.path for f in self.files}

    def digest_by_path(self) -> dict[str, str]:
        return {f.path: f.digest for f in self.files}


@dataclass(frozen=True)
class NormalizationRules:
    """Accession cleanup policy: ordered prefixes to strip, case folding,
    and the canonical pattern a cleaned accession must match."""

    strip_prefixes: tuple[str, ...] = ()
    pattern: str = r"[A-Z0-9]{4,16}"
    uppercase: bool = True


@dataclass(frozen=True)
class NormalizedAccession:
    normalized: str
    violations: tuple[str, ...] = ()


def normalize_accession(raw: str, rules: NormalizationRules | None = None) -> NormalizedAccession:
    """Fold case, strip configured prefixes to a fixed point, then check the
    canonical pattern.  Stripping repeats until no prefix applies so the
    operation is idempotent for any rule set."""
    if rules is None:
        rules = NormalizationRules()
    s = raw.upper() if rules.uppercase else raw
    changed = True
    while changed:
        changed = False
        for prefix in rules.strip_prefixes:
            if prefix and s.startswith(prefix):
                s = s[len(prefix):]
                changed = True
                break
    violations = []
    if not re.fullmatch(rules.pattern, s):
        violations.append(f"accession {s!r} does not match canonical pattern {rules.pattern}")
    return NormalizedAccession(s, tuple(violations))


def _parse_rows(text: str, which: str, n_columns: int):
    lines = text.splitlines()
    if not lines or lines[0] != MANIFEST_MAGIC:
        raise ManifestError(f"{which} manifest: missing magic header line {MANIFEST_MAGIC!r}")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != n_columns:
            raise ManifestError(
                f"{which} manifest line {lineno}: expected {n_columns} columns, got {len(parts)}"
            )
        yield lineno, parts


def parse_manifests(study_text: str, file_text: str) -> BatchManifestPair:
    """Parse the study/file manifest pair, enforcing the pair invariants.

    Violations are structural errors naming the line or identifier at
    fault, never silently repaired.
    """
    studies = []
    for lineno, (acc, study_uid, modality, count_s) in _parse_rows(study_text, "study", 4):
        try:
            count = int(count_s)
        except ValueError:
            raise ManifestError(f"study manifest line {lineno}: non-numeric file count {count_s!r}") from None
        if count < 0:
            raise ManifestError(f"study manifest line {lineno}: negative file count")
        studies.append(StudyManifestRow(acc, study_uid, modality, count))

    files = []
    for lineno, (path, sop_uid, acc, size_s, digest) in _parse_rows(file_text, "file", 5):
        try:
            size = int(size_s)
        except ValueError:
            raise ManifestError(f"file manifest line {lineno}: non-numeric size {size_s!r}") from None
        if size < 0:
            raise ManifestError(f"file manifest line {lineno}: negative size")
        if not _HEX_DIGEST.fullmatch(digest):
            raise ManifestError(f"file manifest line {lineno}: bad digest {digest!r}")
        files.append(FileManifestRow(path, sop_uid, acc, size, digest))

    study_accessions = {s.accession_number for s in studies}
    for row in files:
        if row.accession_number not in study_accessions:
            raise ManifestError(
                f"file manifest references accession {row.accession_number!r} "
                f"absent from the study manifest"
            )
    seen_sop: set[str] = set()
    for row in files:
        if row.sop_uid in seen_sop:
            raise ManifestError(f"duplicate sop_uid {row.sop_uid!r} in file manifest")
        seen_sop.add(row.sop_uid)
    pair = BatchManifestPair(studies, files)
    if pair.expected_total() != len(files):
        raise ManifestError(
            f"study manifest expects {pair.expected_total()} files "
            f"but file manifest lists {len(files)}"
        )
    return pair


def render_manifests(pair: BatchManifestPair) -> tuple[str, str]:
    """Serialize a pair to the two TSV texts (studies sorted by accession,
    files by path, LF line endings)."""
    study_lines = [MANIFEST_MAGIC]
    for s in sorted(pair.studies, key=lambda r: (r.accession_number, r.study_uid)):
        study_lines.append(f"{s.accession_number}\t{s.study_uid}\t{s.modality}\t{s.expected_file_count}")
    file_lines = [MANIFEST_MAGIC]
    for f in sorted(pair.files, key=lambda r: r.path):
        file_lines.append(f"{f.path}\t{f.sop_uid}\t{f.accession_number}\t{f.size}\t{f.digest}")
    return "\n".join(study_lines) + "\n", "\n".join(file_lines) + "\n"


@dataclass
class ReconciliationReport:
    batch_id: str
    manifest_present: bool
    missing_files: list[str] = field(default_factory=list)
    unexpected_files: list[str] = field(default_factory=list)
    digest_mismatches: list[str] = field(default_factory=list)
    duplicate_sop_uids: list[str] = field(default_factory=list)
    duplicate_accessions: list[str] = field(default_factory=list)
    accession_format_violations: list[str] = field(default_factory=list)
    study_count_deltas: dict[str, tuple[int, int]] = field(default_factory=dict)
    # Set by the pipeline when manifests exist but cannot be parsed.
    manifest_error: str | None = None

    def is_clean(self) -> bool:
        return (
            self.manifest_present
            and self.manifest_error is None
            and not (
                self.missing_files
                or self.unexpected_files
                or self.digest_mismatches
                or self.duplicate_sop_uids
                or self.duplicate_accessions
                or self.accession_format_violations
                or self.study_count_deltas
            )
        )

    def to_dict(self) -> dict:
        return {
            "batch_id": self.batch_id,
            "manifest_present": self.manifest_present,
            "missing_files": list(self.missing_files),
            "unexpected_files": list(self.unexpected_files),
            "digest_mismatches": list(self.digest_mismatches),
            "duplicate_sop_uids": list(self.duplicate_sop_uids),
            "duplicate_accessions": list(self.duplicate_accessions),
            "accession_format_violations": list(self.accession_format_violations),
            "study_count_deltas": {k: list(v) for k, v in sorted(self.study_count_deltas.items())},
            "manifest_error": self.manifest_error,
            "clean": self.is_clean(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReconciliationReport":
        return cls(
            batch_id=d["batch_id"],
            manifest_present=d["manifest_present"],
            missing_files=list(d["missing_files"]),
            unexpected_files=list(d["unexpected_files"]),
            digest_mismatches=list(d["digest_mismatches"]),
            duplicate_sop_uids=list(d["duplicate_sop_uids"]),
            duplicate_accessions=list(d["duplicate_accessions"]),
            accession_format_violations=list(d["accession_format_violations"]),
            study_count_deltas={k: (v[0], v[1]) for k, v in d["study_count_deltas"].items()},
            manifest_error=d.get("manifest_error"),
        )


def reconcile(
    pair: BatchManifestPair | None,
    snapshot: HashSnapshot,
    headers: Sequence[HeaderRecord],
    *,
    batch_id: str = "",
    rules: NormalizationRules | None = None,
    known_accessions: Mapping[str, str] | None = None,
) -> ReconciliationReport:
    """Diff manifests against the snapshot and scan results.

    An on-disk file absent from the manifest whose digest matches a
    manifested file is classified as a duplicate, not an unexpected file.
    When the pair is absent the batch is unverifiable, not incomplete:
    manifest_present is false and all manifest-derived lists stay empty.
    Cross-batch accession reuse is only visible through the caller-supplied
    known_accessions map (accession -> previously cataloged study_uid).
    """
    if rules is None:
        rules = NormalizationRules()
    known_accessions = known_accessions or {}
    report = ReconciliationReport(batch_id=batch_id, manifest_present=pair is not None)

    snap_by_path = snapshot.by_path()
    headers_by_path = {h.file_path: h for h in headers}

    # Duplicate sop_uids among the scanned files themselves.
    seen: dict[str, str] = {}
    dup_uids: set[str] = set()
    for h in headers:
        if h.sop_uid and h.sop_uid in seen:
            dup_uids.add(h.sop_uid)
        elif h.sop_uid:
            seen[h.sop_uid] = h.file_path

    # Accessions observed on disk, and their study identity.
    observed_uids: dict[str, set[str]] = {}
    for h in headers:
        if h.accession_number:
            observed_uids.setdefault(h.accession_number, set()).add(h.study_uid)

    violation_candidates = {h.accession_number for h in headers if h.accession_number}
    dup_accessions: set[str] = set()

    if pair is not None:
        manifest_paths = pair.file_paths()
        manifest_digests = pair.digest_by_path()
        digest_pool = set(manifest_digests.values())

        report.missing_files = sorted(manifest_paths - set(snap_by_path))
        for path in sorted(set(snap_by_path) - manifest_paths):
            if snap_by_path[path].digest in digest_pool:
                h = headers_by_path.get(path)
                dup_uids.add(h.sop_uid if h is not None and h.sop_uid else path)
            else:
                report.unexpected_files.append(path)
        report.digest_mismatches = sorted(
            path
            for path in manifest_paths & set(snap_by_path)
            if snap_by_path[path].digest != manifest_digests[path]
        )

        # Per-accession expectation vs the file rows actually listed.
        expected: dict[str, int] = {}
        study_rows: dict[str, int] = {}
        for s in pair.studies:
            expected[s.accession_number] = expected.get(s.accession_number, 0) + s.expected_file_count
            study_rows[s.accession_number] = study_rows.get(s.accession_number, 0) + 1
        listed: dict[str, int] = {}
        for f in pair.files:
            listed[f.accession_number] = listed.get(f.accession_number, 0) + 1
        for acc, exp in expected.items():
            obs = listed.get(acc, 0)
            if obs != exp:
                report.study_count_deltas[acc] = (exp, obs)
        dup_accessions.update(acc for acc, n in study_rows.items() if n > 1)
        violation_candidates.update(s.accession_number for s in pair.studies)

    dup_accessions.update(acc for acc, uids in observed_uids.items() if len(uids) > 1)
    for acc, uids in observed_uids.items():
        key = normalize_accession(acc, rules).normalized
        prior = known_accessions.get(key, known_accessions.get(acc))
        if prior is not None and any(uid != prior for uid in uids):
            dup_accessions.add(acc)

    for acc in sorted(violation_candidates):
        if normalize_accession(acc, rules).violations:
            report.accession_format_violations.append(acc)

    report.duplicate_sop_uids = sorted(dup_uids)
    report.duplicate_accessions = sorted(dup_accessions)
    return report
