"""Quality profiling: per-batch reports and corpus-level statistics.

Reports are pure functions of their inputs and serialize to canonical JSON
(sorted keys, two-space indent, LF, trailing newline) so the dashboard and
golden-file tests see stable bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .catalog import Catalog, LinkReport
from .dicomio import ParseStatus
from .manifest import ReconciliationReport
from .scanning import ScanRecord

QUALITY_SCHEMA_VERSION = 1
CORPUS_SCHEMA_VERSION = 1

CORPUS_REPORT_FILENAME = "corpus.json"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_canonical_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj), encoding="utf-8", newline="")
    return path


@dataclass
class QualityFinding:
    path: str
    kind: str
    detail: str

    def to_dict(self) -> dict:
        return {"path": self.path, "kind": self.kind, "detail": self.detail}


@dataclass
class QualityReport:
    batch_id: str
    file_count: int
    study_count: int
    status_histogram: dict[str, int]
    error_list: list[QualityFinding]
    bytes_total: int
    files_per_study: dict[str, float]
    manifest_present: bool

    def to_dict(self) -> dict:
        return {
            "schema_version": QUALITY_SCHEMA_VERSION,
            "batch_id": self.batch_id,
            "file_count": self.file_count,
            "study_count": self.study_count,
            "status_histogram": dict(sorted(self.status_histogram.items())),
            "error_list": [f.to_dict() for f in self.error_list],
            "bytes_total": self.bytes_total,
            "files_per_study": self.files_per_study,
            "manifest_present": self.manifest_present,
        }


def profile_batch(
    batch_id: str,
    scans: Sequence[ScanRecord],
    reconciliation: ReconciliationReport,
    link_report: LinkReport | None = None,
) -> QualityReport:
    """Aggregate one batch's scan, reconciliation, and linking findings.

    The error list concatenates parse errors, legacy-format reads,
    reconciliation findings, and this batch's link orphans; it is sorted by
    (kind, path) so repeated profiling is byte-identical.
    """
    histogram = {s.value: 0 for s in ParseStatus}
    findings: list[QualityFinding] = []
    per_study: dict[str, int] = {}
    bytes_total = 0
    for scan in scans:
        histogram[scan.status.value] += 1
        bytes_total += scan.file_size
        if scan.status is ParseStatus.CORRUPT:
            findings.append(QualityFinding(scan.file_path, "PARSE_ERROR", scan.error_detail or ""))
        else:
            if scan.status is ParseStatus.LEGACY:
                findings.append(QualityFinding(
                    scan.file_path, "LEGACY_FORMAT", "force-read succeeded without DICM magic"
                ))
            acc = scan.header.accession_number if scan.header else ""
            if acc:
                per_study[acc] = per_study.get(acc, 0) + 1

    r = reconciliation
    for path in r.missing_files:
        findings.append(QualityFinding(path, "MISSING_FILE", "listed in manifest, absent on disk"))
    for path in r.unexpected_files:
        findings.append(QualityFinding(path, "UNEXPECTED_FILE", "on disk, absent from manifest"))
    for path in r.digest_mismatches:
        findings.append(QualityFinding(path, "DIGEST_MISMATCH", "content differs from manifest digest"))
    for uid in r.duplicate_sop_uids:
        findings.append(QualityFinding("", "DUPLICATE_SOP_UID", uid))
    for acc in r.duplicate_accessions:
        findings.append(QualityFinding("", "DUPLICATE_ACCESSION", acc))
    for acc in r.accession_format_violations:
        findings.append(QualityFinding("", "ACCESSION_FORMAT", acc))
    for acc, (expected, observed) in sorted(r.study_count_deltas.items()):
        findings.append(QualityFinding(
            "", "STUDY_COUNT_DELTA", f"{acc}: expected {expected}, listed {observed}"
        ))

    if link_report is not None:
        for sop_uid in link_report.orphan_images:
            findings.append(QualityFinding("", "LINK_ORPHAN", sop_uid))
        for sop_uid in link_report.ambiguous:
            findings.append(QualityFinding("", "AMBIGUOUS_LINK", sop_uid))

    findings.sort(key=lambda f: (f.kind, f.path, f.detail))
    counts = sorted(per_study.values())
    files_per_study = {
        "min": float(counts[0]) if counts else 0.0,
        "max": float(counts[-1]) if counts else 0.0,
        "mean": round(sum(counts) / len(counts), 4) if counts else 0.0,
    }
    return QualityReport(
        batch_id=batch_id,
        file_count=len(scans),
        study_count=len(per_study),
        status_histogram=histogram,
        error_list=findings,
        bytes_total=bytes_total,
        files_per_study=files_per_study,
        manifest_present=r.manifest_present,
    )


def profile_corpus(catalog: Catalog, batch_records: Iterable[Mapping]) -> dict:
    """Corpus-wide descriptive statistics over the catalog and batch states.

    Per-dimension histograms total the catalog entry count (empty values
    bucket under ""); files_per_study totals the study count; bytes and
    state tallies are per batch.
    """
    entries = catalog.export_entries()
    dimensions: dict[str, dict[str, int]] = {
        "modality": {}, "manufacturer": {}, "view_position": {},
        "parse_status": {}, "link_status": {},
    }
    per_study: dict[str, int] = {}
    bytes_per_batch: dict[str, int] = {}
    for e in entries:
        for dim, value in (
            ("modality", e.modality),
            ("manufacturer", e.manufacturer),
            ("view_position", e.view_position),
            ("parse_status", e.parse_status.value),
            ("link_status", e.link_status.value),
        ):
            dimensions[dim][value] = dimensions[dim].get(value, 0) + 1
        if e.study_uid:
            per_study[e.study_uid] = per_study.get(e.study_uid, 0) + 1
        bytes_per_batch[e.batch_id] = bytes_per_batch.get(e.batch_id, 0) + e.file_size

    files_per_study_hist: dict[str, int] = {}
    for n in per_study.values():
        files_per_study_hist[str(n)] = files_per_study_hist.get(str(n), 0) + 1

    state_tally: dict[str, int] = {}
    for record in batch_records:
        state = record["state"] if isinstance(record, Mapping) else record.state
        key = getattr(state, "value", state)
        state_tally[key] = state_tally.get(key, 0) + 1

    return {
        "schema_version": CORPUS_SCHEMA_VERSION,
        "catalog_entries": len(entries),
        "dimensions": {dim: dict(sorted(hist.items())) for dim, hist in dimensions.items()},
        "files_per_study": dict(sorted(files_per_study_hist.items(), key=lambda kv: int(kv[0]))),
        "bytes_per_batch": dict(sorted(bytes_per_batch.items())),
        "batch_states": dict(sorted(state_tally.items())),
    }
