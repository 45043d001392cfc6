"""Research-side batch state machine.

A received batch moves through hash, reconcile, scan, catalog, and profile
stages to a terminal disposition: VERIFIED (manifest-confirmed), UNVERIFIED
(no manifests to confirm against, still fully processed), or REJECTED.
Every stage persists its outputs under the batch's landing directory before
the state advances, so a killed pipeline resumes from its last completed
stage and converges to the same result.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

from .catalog import (
    CLINICAL_SNAPSHOT_FILENAME,
    Catalog,
    CatalogEntry,
    LinkReport,
    link_clinical,
    load_clinical_snapshot,
)
from .integrity import (
    SNAPSHOT_FILENAME,
    load_snapshot,
    snapshot_batch,
    write_snapshot,
)
from .manifest import (
    FILE_MANIFEST_FILENAME,
    STUDY_MANIFEST_FILENAME,
    BatchManifestPair,
    ManifestError,
    NormalizationRules,
    ReconciliationReport,
    normalize_accession,
    parse_manifests,
    reconcile,
)
from .profiler import profile_batch, write_canonical_json
from .scanning import ScanRecord, scan_batch
from .dicomio import ParseStatus

REPORTS_DIRNAME = "_reports"
RECORD_FILENAME = "record.json"
SCAN_FILENAME = "scan.ndjson"
RECONCILIATION_FILENAME = "reconciliation.json"
LINKS_FILENAME = "links.json"
DUPLICATES_FILENAME = "duplicates.json"


class BatchState(str, Enum):
    RECEIVED = "RECEIVED"
    HASHED = "HASHED"
    RECONCILED = "RECONCILED"
    SCANNED = "SCANNED"
    CATALOGED = "CATALOGED"
    PROFILED = "PROFILED"
    VERIFIED = "VERIFIED"
    UNVERIFIED = "UNVERIFIED"
    REJECTED = "REJECTED"
    CONFIRMED = "CONFIRMED"


# The legal transition relation.  Operator rejection of an unconfirmed
# terminal-disposition batch is included so the dashboard's reject decision
# has a lawful path; RECEIVED batches re-enter only as a fresh batch_id.
TRANSITIONS: dict[BatchState, frozenset[BatchState]] = {
    BatchState.RECEIVED: frozenset({BatchState.HASHED}),
    BatchState.HASHED: frozenset({BatchState.RECONCILED}),
    BatchState.RECONCILED: frozenset({BatchState.SCANNED, BatchState.REJECTED}),
    BatchState.SCANNED: frozenset({BatchState.CATALOGED}),
    BatchState.CATALOGED: frozenset({BatchState.PROFILED}),
    BatchState.PROFILED: frozenset({BatchState.VERIFIED, BatchState.UNVERIFIED}),
    BatchState.VERIFIED: frozenset({BatchState.CONFIRMED, BatchState.REJECTED}),
    BatchState.UNVERIFIED: frozenset({BatchState.CONFIRMED, BatchState.REJECTED}),
    BatchState.REJECTED: frozenset(),
    BatchState.CONFIRMED: frozenset(),
}

PIPELINE_STATES = (
    BatchState.RECEIVED, BatchState.HASHED, BatchState.RECONCILED,
    BatchState.SCANNED, BatchState.CATALOGED, BatchState.PROFILED,
)


class IngestError(Exception):
    pass


class DuplicateBatchError(IngestError):
    """A batch with this id has already been received."""


class UnknownBatchError(IngestError):
    pass


class IllegalTransition(IngestError):
    def __init__(self, batch_id: str, from_state: BatchState, to_state: BatchState):
        self.batch_id = batch_id
        self.from_state = from_state
        self.to_state = to_state
        super().__init__(
            f"batch {batch_id}: illegal transition {from_state.value} -> {to_state.value}"
        )


@dataclass(frozen=True)
class AcceptancePolicy:
    """Thresholds for the automated accept/reject decision.

    Absent manifests are tolerated by default (the batch becomes UNVERIFIED);
    the other hazards reject outright.
    """

    max_corrupt_fraction: float = 0.01
    reject_on_missing_files: bool = True
    reject_on_digest_mismatch: bool = True
    allow_absent_manifest: bool = True
    reject_empty: bool = True

    def __post_init__(self):
        if not 0.0 <= self.max_corrupt_fraction <= 1.0:
            raise ValueError("max_corrupt_fraction must be within [0, 1]")


@dataclass
class BatchCounts:
    files: int = 0
    studies: int = 0
    corrupt: int = 0
    legacy: int = 0
    modern: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class BatchRecord:
    batch_id: str
    state: BatchState
    received_at: str
    counts: BatchCounts = field(default_factory=BatchCounts)
    rejection_reason: str | None = None
    error_detail: str | None = None
    confirmed_at: str | None = None
    retransfer_requested: bool = False

    def advance(self, to: BatchState) -> None:
        if to not in TRANSITIONS[self.state]:
            raise IllegalTransition(self.batch_id, self.state, to)
        self.state = to

    def to_dict(self) -> dict:
        return {
            "batch_id": self.batch_id,
            "state": self.state.value,
            "received_at": self.received_at,
            "counts": self.counts.to_dict(),
            "rejection_reason": self.rejection_reason,
            "error_detail": self.error_detail,
            "confirmed_at": self.confirmed_at,
            "retransfer_requested": self.retransfer_requested,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BatchRecord":
        return cls(
            batch_id=d["batch_id"],
            state=BatchState(d["state"]),
            received_at=d["received_at"],
            counts=BatchCounts(**d["counts"]),
            rejection_reason=d.get("rejection_reason"),
            error_detail=d.get("error_detail"),
            confirmed_at=d.get("confirmed_at"),
            retransfer_requested=d.get("retransfer_requested", False),
        )


@dataclass(frozen=True)
class ConfirmationEvent:
    batch_id: str
    confirmed_at: str


@dataclass
class DuplicateReport:
    dup_files: list[str] = field(default_factory=list)
    dup_studies: list[str] = field(default_factory=list)
    cross_batch: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dup_files": list(self.dup_files),
            "dup_studies": list(self.dup_studies),
            "cross_batch": [list(pair) for pair in self.cross_batch],
        }


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class IngestManager:
    """Owner of the landing zone, the catalog, and all state transitions.

    Batches are processed one at a time; state mutations go through this
    single owner so the catalog sees a total order of changes.
    """

    def __init__(
        self,
        landing,
        clinical_path=None,
        policy: AcceptancePolicy | None = None,
        rules: NormalizationRules | None = None,
        workers: int = 4,
        now_fn: Callable[[], str] = _utc_now,
    ):
        self.landing = Path(landing)
        self.landing.mkdir(parents=True, exist_ok=True)
        self.clinical_path = Path(clinical_path) if clinical_path else self.landing / CLINICAL_SNAPSHOT_FILENAME
        self.policy = policy or AcceptancePolicy()
        self.rules = rules or NormalizationRules()
        self.workers = workers
        self.now_fn = now_fn
        self.catalog = Catalog(self.landing / "catalog.ndjson")

    # -- paths ------------------------------------------------------------

    def batch_root(self, batch_id: str) -> Path:
        return self.landing / batch_id

    def reports_dir(self, batch_id: str) -> Path:
        return self.batch_root(batch_id) / REPORTS_DIRNAME

    def _record_path(self, batch_id: str) -> Path:
        return self.reports_dir(batch_id) / RECORD_FILENAME

    def quality_report_path(self, batch_id: str) -> Path:
        return self.reports_dir(batch_id) / f"{batch_id}.quality.json"

    # -- record persistence -------------------------------------------------

    def _save_record(self, record: BatchRecord) -> None:
        path = self._record_path(record.batch_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(record.to_dict(), sort_keys=True, indent=2) + "\n",
                       encoding="utf-8", newline="")
        os.replace(tmp, path)

    def record(self, batch_id: str) -> BatchRecord:
        path = self._record_path(batch_id)
        if not path.exists():
            raise UnknownBatchError(f"no such batch in landing zone: {batch_id}")
        return BatchRecord.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def batch_ids(self) -> list[str]:
        return sorted(
            p.name for p in self.landing.iterdir()
            if p.is_dir() and not p.name.startswith("_") and self._record_path(p.name).exists()
        )

    def list_records(self) -> list[BatchRecord]:
        return [self.record(b) for b in self.batch_ids()]

    # -- operations ---------------------------------------------------------

    def receive_batch(self, inbox, batch_id: str) -> BatchRecord:
        """Move a delivered batch from the inbox into the landing zone.

        The landing copy is the immutable record of what arrived; a second
        delivery under the same batch_id is refused.
        """
        source = Path(inbox) / batch_id
        if not source.is_dir():
            raise IngestError(f"batch {batch_id} not found in inbox {inbox}")
        dest = self.batch_root(batch_id)
        if dest.exists():
            raise DuplicateBatchError(f"DUPLICATE_BATCH: {batch_id} already received")
        shutil.move(str(source), str(dest))
        record = BatchRecord(batch_id=batch_id, state=BatchState.RECEIVED, received_at=self.now_fn())
        self._save_record(record)
        return record

    def run_pipeline(self, batch_id: str) -> BatchRecord:
        """Drive a batch from its current state to a terminal disposition.

        Idempotent and resumable: each stage rewrites its own artifacts from
        persisted inputs, and the record only advances after the artifacts
        are on disk.
        """
        record = self.record(batch_id)
        stages = {
            BatchState.RECEIVED: self._stage_hash,
            BatchState.HASHED: self._stage_reconcile,
            BatchState.RECONCILED: self._stage_policy,
            BatchState.SCANNED: self._stage_catalog,
            BatchState.CATALOGED: self._stage_profile,
            BatchState.PROFILED: self._stage_finalize,
        }
        while record.state in stages:
            try:
                stages[record.state](record)
            except OSError as exc:
                record.error_detail = f"{record.state.value} stage failed: {exc}"
                self._save_record(record)
                raise IngestError(record.error_detail) from exc
        return record

    def run_single_stage(self, batch_id: str) -> BatchRecord:
        """Execute exactly one stage (used to exercise kill/resume)."""
        record = self.record(batch_id)
        stages = {
            BatchState.RECEIVED: self._stage_hash,
            BatchState.HASHED: self._stage_reconcile,
            BatchState.RECONCILED: self._stage_policy,
            BatchState.SCANNED: self._stage_catalog,
            BatchState.CATALOGED: self._stage_profile,
            BatchState.PROFILED: self._stage_finalize,
        }
        if record.state in stages:
            stages[record.state](record)
        return record

    # -- stages -------------------------------------------------------------

    def _stage_hash(self, record: BatchRecord) -> None:
        root = self.batch_root(record.batch_id)
        snapshot = snapshot_batch(root, record.batch_id, created_at=record.received_at,
                                  workers=self.workers)
        write_snapshot(snapshot, root)
        record.advance(BatchState.HASHED)
        self._save_record(record)

    def _load_manifest_pair(self, batch_id: str) -> tuple[BatchManifestPair | None, str | None]:
        """(pair, error): pair is None when absent or unparseable."""
        root = self.batch_root(batch_id)
        study_path = root / STUDY_MANIFEST_FILENAME
        file_path = root / FILE_MANIFEST_FILENAME
        if not (study_path.exists() and file_path.exists()):
            return None, None
        try:
            pair = parse_manifests(
                study_path.read_text(encoding="utf-8"),
                file_path.read_text(encoding="utf-8"),
            )
            return pair, None
        except ManifestError as exc:
            return None, str(exc)

    def _load_scans(self, batch_id: str) -> list[ScanRecord]:
        path = self.reports_dir(batch_id) / SCAN_FILENAME
        return [
            ScanRecord.from_dict(json.loads(line))
            for line in path.read_text(encoding="utf-8").splitlines()
            if line
        ]

    def _stage_reconcile(self, record: BatchRecord) -> None:
        root = self.batch_root(record.batch_id)
        snapshot = load_snapshot(root)
        scans = scan_batch(root, [e.path for e in snapshot.entries], workers=self.workers)
        scan_path = self.reports_dir(record.batch_id) / SCAN_FILENAME
        scan_path.parent.mkdir(parents=True, exist_ok=True)
        scan_path.write_text(
            "".join(json.dumps(s.to_dict(), sort_keys=True) + "\n" for s in scans),
            encoding="utf-8", newline="",
        )

        pair, manifest_error = self._load_manifest_pair(record.batch_id)
        manifests_on_disk = (root / STUDY_MANIFEST_FILENAME).exists()
        headers = [s.header for s in scans if s.header is not None]
        report = reconcile(
            pair, snapshot, headers,
            batch_id=record.batch_id,
            rules=self.rules,
            known_accessions=self.catalog.accession_study_map(self.rules),
        )
        if manifest_error is not None:
            report.manifest_present = manifests_on_disk
            report.manifest_error = manifest_error
        write_canonical_json(self.reports_dir(record.batch_id) / RECONCILIATION_FILENAME,
                             report.to_dict())

        counts = BatchCounts(files=len(scans))
        for scan in scans:
            if scan.status is ParseStatus.CORRUPT:
                counts.corrupt += 1
            elif scan.status is ParseStatus.LEGACY:
                counts.legacy += 1
            else:
                counts.modern += 1
        counts.studies = len({h.accession_number for h in headers if h.accession_number})
        record.counts = counts
        record.advance(BatchState.RECONCILED)
        self._save_record(record)

    def load_reconciliation(self, batch_id: str) -> ReconciliationReport:
        path = self.reports_dir(batch_id) / RECONCILIATION_FILENAME
        return ReconciliationReport.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def _stage_policy(self, record: BatchRecord) -> None:
        report = self.load_reconciliation(record.batch_id)
        reason = self._rejection_reason(record, report)
        if reason is not None:
            record.rejection_reason = reason
            record.advance(BatchState.REJECTED)
        else:
            record.advance(BatchState.SCANNED)
        self._save_record(record)

    def _rejection_reason(self, record: BatchRecord, report: ReconciliationReport) -> str | None:
        policy = self.policy
        if report.manifest_error is not None:
            return f"invalid manifests: {report.manifest_error}"
        if policy.reject_empty and record.counts.files == 0:
            return "EMPTY_BATCH: no files received"
        if not report.manifest_present and not policy.allow_absent_manifest:
            return "manifest absent and policy forbids unverified batches"
        if policy.reject_on_missing_files and report.missing_files:
            return "missing files: " + ", ".join(report.missing_files)
        if policy.reject_on_digest_mismatch and report.digest_mismatches:
            return "digest mismatches: " + ", ".join(report.digest_mismatches)
        if record.counts.files > 0:
            fraction = record.counts.corrupt / record.counts.files
            if fraction > policy.max_corrupt_fraction:
                return (
                    f"corrupt fraction {fraction:.4f} exceeds "
                    f"policy maximum {policy.max_corrupt_fraction}"
                )
        return None

    def detect_duplicates(self, headers: Sequence, current_batch_id: str = "") -> DuplicateReport:
        """Report collisions between new headers and the existing catalog.

        Entries this same batch already cataloged (a resumed run) are not
        duplicates of themselves.
        """
        report = DuplicateReport()
        dup_files: set[str] = set()
        cross: set[tuple[str, str]] = set()
        for h in headers:
            if not h.sop_uid:
                continue
            prior = self.catalog.get(h.sop_uid)
            if prior is not None and prior.batch_id != current_batch_id:
                dup_files.add(h.sop_uid)
                cross.add((h.sop_uid, prior.batch_id))

        acc_map = self.catalog.accession_study_map(self.rules)
        dup_studies: set[str] = set()
        observed: dict[str, set[str]] = {}
        for h in headers:
            if h.accession_number:
                observed.setdefault(h.accession_number, set()).add(h.study_uid)
        for acc, uids in observed.items():
            if len(uids) > 1:
                dup_studies.add(acc)
                continue
            key = normalize_accession(acc, self.rules).normalized
            prior_uid = acc_map.get(key)
            if prior_uid is not None and any(uid != prior_uid for uid in uids):
                dup_studies.add(acc)
        report.dup_files = sorted(dup_files)
        report.dup_studies = sorted(dup_studies)
        report.cross_batch = sorted(cross)
        return report

    def _stage_catalog(self, record: BatchRecord) -> None:
        batch_id = record.batch_id
        root = self.batch_root(batch_id)
        scans = self._load_scans(batch_id)
        snapshot = load_snapshot(root)
        digests = {e.path: e.digest for e in snapshot.entries}
        pair, _ = self._load_manifest_pair(batch_id)
        manifest_paths = pair.file_paths() if pair is not None else None

        headers = [s.header for s in scans if s.header is not None]
        duplicates = self.detect_duplicates(headers, current_batch_id=batch_id)
        write_canonical_json(self.reports_dir(batch_id) / DUPLICATES_FILENAME,
                             duplicates.to_dict())

        entries: list[CatalogEntry] = []
        for scan in scans:
            if manifest_paths is not None and scan.file_path not in manifest_paths:
                continue  # unlisted files are reported, never cataloged
            digest = digests.get(scan.file_path, "")
            if scan.header is None:
                entries.append(CatalogEntry.for_corrupt_file(
                    scan.file_path, scan.file_size, digest, batch_id, record.received_at,
                ))
            else:
                entry = CatalogEntry.from_header(scan.header, digest, batch_id, record.received_at)
                if not entry.sop_uid:
                    entry.sop_uid = f"nouid:{digest[:16]}"
                entries.append(entry)

        clinical_rows = load_clinical_snapshot(self.clinical_path)
        link_report = link_clinical(
            entries, clinical_rows, rules=self.rules,
            prior_accessions=set(self.catalog.accession_study_map(self.rules)),
        )
        write_canonical_json(self.reports_dir(batch_id) / LINKS_FILENAME, link_report.to_dict())
        self.catalog.upsert_entries(entries)
        record.advance(BatchState.CATALOGED)
        self._save_record(record)

    def _stage_profile(self, record: BatchRecord) -> None:
        batch_id = record.batch_id
        scans = self._load_scans(batch_id)
        recon = self.load_reconciliation(batch_id)
        links_path = self.reports_dir(batch_id) / LINKS_FILENAME
        link_report = None
        if links_path.exists():
            d = json.loads(links_path.read_text(encoding="utf-8"))
            link_report = LinkReport(
                linked=d["linked"], orphan_images=d["orphan_images"],
                orphan_rows=d["orphan_rows"], ambiguous=d["ambiguous"],
            )
        quality = profile_batch(batch_id, scans, recon, link_report)
        write_canonical_json(self.quality_report_path(batch_id), quality.to_dict())
        record.advance(BatchState.PROFILED)
        self._save_record(record)

    def _stage_finalize(self, record: BatchRecord) -> None:
        recon = self.load_reconciliation(record.batch_id)
        target = BatchState.VERIFIED if recon.manifest_present else BatchState.UNVERIFIED
        record.advance(target)
        self._save_record(record)

    # -- operator actions -----------------------------------------------------

    def confirm_receipt(self, batch_id: str) -> ConfirmationEvent:
        """Confirm receipt back to the clinical side; idempotent."""
        record = self.record(batch_id)
        if record.state is BatchState.CONFIRMED:
            return ConfirmationEvent(batch_id, record.confirmed_at or record.received_at)
        record.advance(BatchState.CONFIRMED)
        record.confirmed_at = self.now_fn()
        self._save_record(record)
        return ConfirmationEvent(batch_id, record.confirmed_at)

    def reject_batch(self, batch_id: str, reason: str) -> BatchRecord:
        """Operator rejection of an unconfirmed batch; idempotent."""
        record = self.record(batch_id)
        if record.state is BatchState.REJECTED:
            return record
        record.advance(BatchState.REJECTED)
        record.rejection_reason = reason
        self._save_record(record)
        return record

    def request_retransfer(self, batch_id: str) -> BatchRecord:
        """Flag a rejected batch for re-request from the clinical side."""
        record = self.record(batch_id)
        if record.state is not BatchState.REJECTED:
            raise IllegalTransition(batch_id, record.state, BatchState.REJECTED)
        record.retransfer_requested = True
        self._save_record(record)
        return record
