"""Simulated clinical environment: study generation, staging, and transfer.

Drives the sending half of the two-site protocol on a virtual clock so the
slow parts of the real process (multi-hour extraction, time-of-day transfer
throttling) run in milliseconds.  Batches are generated deterministically
from a seed, optionally with injected faults, and staged batches are only
deleted once the research side has confirmed receipt.
"""

from __future__ import annotations

import json
import random
import shutil
import zlib
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from . import dicomio
from .catalog import ClinicalSnapshotRow
from .dicomio import DicomElement, bytes_element, text_element, ushort_element, write_file
from .integrity import hash_bytes
from .manifest import (
    BatchManifestPair,
    FILE_MANIFEST_FILENAME,
    FileManifestRow,
    STUDY_MANIFEST_FILENAME,
    StudyManifestRow,
    render_manifests,
)

MANUFACTURERS = ("Acme Imaging", "Borealis Medical")
SITE_CODES = ("S508", "S610", "S673")

CR_FILES_MIN, CR_FILES_MAX = 6, 8
MR_FILES_MIN, MR_FILES_MAX = 200, 1600

_DELETIONS_LOG = "_deletions.ndjson"
_CONFIRMATIONS_LOG = "_confirmations.ndjson"


class ClinicError(Exception):
    pass


class ConfirmationRequired(ClinicError):
    """Staged data may only be deleted after confirmed receipt."""


# ---------------------------------------------------------------------------
# Virtual time


class VirtualClock:
    """Monotonic simulation clock (naive local datetimes)."""

    def __init__(self, start: datetime | None = None):
        self._now = start if start is not None else datetime(2026, 1, 5, 8, 0, 0)

    @property
    def now(self) -> datetime:
        return self._now

    def advance_seconds(self, seconds: float) -> datetime:
        if seconds < 0:
            raise ValueError("virtual clock cannot move backwards")
        self._now += timedelta(seconds=seconds)
        return self._now


def _hour_of_day(dt: datetime) -> float:
    return dt.hour + dt.minute / 60 + dt.second / 3600 + dt.microsecond / 3.6e9


def _seconds_to_next_boundary(dt: datetime, boundaries: Sequence[float]) -> float:
    """Seconds until the next rate boundary (boundaries are day-hours)."""
    h = _hour_of_day(dt)
    upcoming = [b for b in sorted(boundaries) if b > h + 1e-9]
    next_hour = upcoming[0] if upcoming else 24.0 + min(boundaries)
    return (next_hour - h) * 3600.0


def _consume_work(clock: VirtualClock, work: float, rate_per_second, boundaries: Sequence[float]) -> float:
    """Advance the clock through `work` units under a piecewise rate.

    rate_per_second(hour_of_day) gives the instantaneous rate; it may only
    change at the listed day-hour boundaries.  Returns elapsed seconds.
    """
    elapsed = 0.0
    remaining = work
    while remaining > 1e-12:
        rate = rate_per_second(_hour_of_day(clock.now))
        if rate <= 0:
            raise ClinicError("rate must be positive")
        window = _seconds_to_next_boundary(clock.now, boundaries)
        capacity = rate * window
        if capacity >= remaining:
            step = remaining / rate
            clock.advance_seconds(step)
            elapsed += step
            remaining = 0.0
        else:
            clock.advance_seconds(window)
            elapsed += window
            remaining -= capacity
    return elapsed


# ---------------------------------------------------------------------------
# Extraction and transfer models


@dataclass(frozen=True)
class ExtractionModel:
    """Rates for accession extraction and site-to-site transfer.

    Defaults calibrate the business-hours extraction rate so 40 accessions
    starting at the business-day open take 9 hours, and make morning
    transfers twice as fast as afternoon ones.
    """

    business_hours_rate: float = 40.0 / 9.0   # accessions/hour, 08:00-17:00
    off_hours_rate: float = 80.0 / 9.0        # accessions/hour otherwise
    business_start_hour: float = 8.0
    business_end_hour: float = 17.0
    transfer_rate_am: float = 10_000_000.0    # bytes/second, 00:00-12:00
    transfer_rate_pm: float = 5_000_000.0     # bytes/second, 12:00-24:00

    def __post_init__(self):
        for name in ("business_hours_rate", "off_hours_rate", "transfer_rate_am", "transfer_rate_pm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.business_start_hour < self.business_end_hour <= 24:
            raise ValueError("business hours must satisfy 0 <= start < end <= 24")

    def in_business_hours(self, hour: float) -> bool:
        return self.business_start_hour <= hour < self.business_end_hour


def simulate_extraction(accessions: Sequence[str], model: ExtractionModel, clock: VirtualClock) -> datetime:
    """Advance the clock through extracting the given accessions.

    Integrates the piecewise hourly rate (slower during business hours);
    an empty list completes immediately.
    """
    if not accessions:
        return clock.now
    boundaries = [model.business_start_hour, model.business_end_hour]

    def rate_per_second(hour: float) -> float:
        per_hour = model.business_hours_rate if model.in_business_hours(hour) else model.off_hours_rate
        return per_hour / 3600.0

    _consume_work(clock, float(len(accessions)), rate_per_second, boundaries)
    return clock.now


@dataclass
class TransferResult:
    bytes_transferred: int
    elapsed_seconds: float
    effective_rate: float
    started_at: datetime
    completed_at: datetime


def transfer_batch(
    batch: "StagedBatch",
    model: ExtractionModel,
    clock: VirtualClock,
    inbox_dir,
    bandwidth_cap: float = float("inf"),
) -> TransferResult:
    """Copy a staged batch into the research inbox under simulated timing.

    The effective rate is the time-of-day rate clamped to bandwidth_cap, so
    the shared connection is never saturated past the agreed ceiling.
    """
    if batch.deleted:
        raise ClinicError(f"batch {batch.batch_id} has been deleted from staging")
    if bandwidth_cap <= 0:
        raise ValueError("bandwidth_cap must be positive")
    root = Path(batch.root)
    total = sum(p.stat().st_size for p in root.rglob("*") if p.is_file())

    def rate_per_second(hour: float) -> float:
        tod = model.transfer_rate_am if hour < 12.0 else model.transfer_rate_pm
        return min(tod, bandwidth_cap)

    started = clock.now
    elapsed = _consume_work(clock, float(total), rate_per_second, [0.0, 12.0]) if total else 0.0
    dest = Path(inbox_dir) / batch.batch_id
    shutil.copytree(root, dest, dirs_exist_ok=True)
    rate = total / elapsed if elapsed > 0 else 0.0
    return TransferResult(total, elapsed, rate, started, clock.now)


# ---------------------------------------------------------------------------
# Study specs and synthesis


@dataclass(frozen=True)
class StudySpec:
    modality: str
    accession_number: str
    patient_id: str
    study_date: str
    file_count: int

    def __post_init__(self):
        if self.modality not in ("CR", "MR"):
            raise ValueError(f"unsupported modality {self.modality!r}")
        if self.modality == "CR" and not CR_FILES_MIN <= self.file_count <= CR_FILES_MAX:
            raise ValueError(
                f"CR study file_count must be in [{CR_FILES_MIN},{CR_FILES_MAX}], got {self.file_count}"
            )
        if self.modality == "MR" and not MR_FILES_MIN <= self.file_count <= MR_FILES_MAX:
            raise ValueError(
                f"MR study file_count must be in [{MR_FILES_MIN},{MR_FILES_MAX}], got {self.file_count}"
            )


@dataclass
class GeneratedFile:
    rel_path: str
    sop_uid: str
    accession_number: str
    size: int
    digest: str


@dataclass
class GeneratedStudy:
    spec: StudySpec
    study_uid: str
    files: list[GeneratedFile]
    clinical_row: ClinicalSnapshotRow


def _make_uid(rng: random.Random, accession: str) -> str:
    return f"1.2.840.99999.{zlib.crc32(accession.encode()) & 0xFFFFFFFF}.{rng.randrange(1, 10**9)}"


def _study_elements(spec: StudySpec, study_uid: str, series_uid: str, sop_uid: str,
                    manufacturer: str, view_position: str, image_type: str) -> list[DicomElement]:
    els = [
        text_element(dicomio.TAG_TRANSFER_SYNTAX, "1.2.840.10008.1.2.1"),
        text_element(dicomio.TAG_IMAGE_TYPE, image_type),
        text_element(dicomio.TAG_SOP_UID, sop_uid),
        text_element(dicomio.TAG_STUDY_DATE, spec.study_date),
        text_element(dicomio.TAG_ACCESSION_NUMBER, spec.accession_number),
        text_element(dicomio.TAG_MODALITY, spec.modality),
        text_element(dicomio.TAG_MANUFACTURER, manufacturer),
        text_element(dicomio.TAG_STUDY_DESCRIPTION,
                     "CHEST 2 VIEWS" if spec.modality == "CR" else "MRI ABDOMEN"),
        text_element(dicomio.TAG_PATIENT_ID, spec.patient_id),
    ]
    if spec.modality == "CR":
        els.append(text_element(dicomio.TAG_KVP, "110"))
    els.append(text_element(dicomio.TAG_SOFTWARE_VERSIONS, "v4.1.2"))
    if spec.modality == "CR":
        els.append(text_element(dicomio.TAG_EXPOSURE_TIME, "12"))
        els.append(text_element(dicomio.TAG_VIEW_POSITION, view_position))
    els.append(text_element(dicomio.TAG_STUDY_UID, study_uid))
    els.append(text_element(dicomio.TAG_SERIES_UID, series_uid))
    els.append(ushort_element(dicomio.TAG_ROWS, 2048 if spec.modality == "CR" else 256))
    els.append(ushort_element(dicomio.TAG_COLUMNS, 2048 if spec.modality == "CR" else 256))
    return els


def generate_study(
    spec: StudySpec,
    seed,
    out_dir,
    payload_bytes: tuple[int, int] = (64, 256),
) -> GeneratedStudy:
    """Write one study's files under out_dir, deterministically in (spec, seed).

    Each file shares the study's accession and study UID, gets its own SOP
    UID, and carries a small pseudo-random trailing payload so per-file
    digests differ.  CR view positions cycle FRONT/SIDE with the first two
    files as originals and the rest as derived versions.
    """
    rng = random.Random(f"study:{seed}:{spec.accession_number}:{spec.study_date}")
    study_uid = _make_uid(rng, spec.accession_number)
    series_uid = study_uid + ".1"
    manufacturer = rng.choice(MANUFACTURERS)
    out_dir = Path(out_dir)
    files: list[GeneratedFile] = []
    lo, hi = payload_bytes
    # Study directory carries a UID-derived suffix so studies that share an
    # accession (a real-world hazard this simulator reproduces) cannot
    # overwrite each other's files.
    study_dir = f"{spec.accession_number}/S{study_uid.rsplit('.', 1)[-1]}"
    for i in range(spec.file_count):
        sop_uid = f"{study_uid}.{i + 1}"
        view = ("FRONT", "SIDE")[i % 2] if spec.modality == "CR" else ""
        image_type = "ORIGINAL\\PRIMARY" if i < 2 else "DERIVED\\SECONDARY"
        els = _study_elements(spec, study_uid, series_uid, sop_uid, manufacturer, view, image_type)
        payload = rng.randbytes(rng.randint(lo, hi))
        els.append(bytes_element(dicomio.PIXEL_DATA_TAG, payload))
        data = write_file(els)
        rel_path = f"{study_dir}/IM{i + 1:04d}.dcm"
        full = out_dir / rel_path
        full.parent.mkdir(parents=True, exist_ok=True)
        full.write_bytes(data)
        files.append(GeneratedFile(rel_path, sop_uid, spec.accession_number, len(data), hash_bytes(data)))

    demo_rng = random.Random(f"clinical:{seed}:{spec.accession_number}")
    clinical_row = ClinicalSnapshotRow(
        patient_id=spec.patient_id,
        accession_number=spec.accession_number,
        birth_year=demo_rng.randint(1930, 2000),
        sex=demo_rng.choice(("M", "F")),
        site_code=demo_rng.choice(SITE_CODES),
        study_date=spec.study_date,
        report_text=(
            f"{'Chest radiograph' if spec.modality == 'CR' else 'Abdominal MRI'}: "
            f"no acute findings. Impression code {demo_rng.randint(100, 999)}."
        ),
    )
    return GeneratedStudy(spec, study_uid, files, clinical_row)


def draw_study_specs(
    n: int,
    modality: str,
    seed,
    *,
    file_counts: Sequence[int] | None = None,
) -> list[StudySpec]:
    """Draw n study specs with unique accession and patient identifiers.

    CR file counts are uniform on {6,7,8}; MR uniform on [200,1600], unless
    explicit file_counts are supplied.
    """
    rng = random.Random(f"specs:{seed}:{modality}:{n}")
    acc_numbers = rng.sample(range(1, 10**7), n)
    pat_numbers = rng.sample(range(1, 10**7), n)
    base_date = datetime(2022, 1, 1)
    specs = []
    for i in range(n):
        if file_counts is not None:
            count = file_counts[i]
        elif modality == "CR":
            count = rng.choice((CR_FILES_MIN, 7, CR_FILES_MAX))
        else:
            count = rng.randint(MR_FILES_MIN, MR_FILES_MAX)
        study_date = (base_date + timedelta(days=rng.randrange(730))).strftime("%Y%m%d")
        specs.append(StudySpec(
            modality=modality,
            accession_number=f"ACC{acc_numbers[i]:07d}",
            patient_id=f"P{pat_numbers[i]:07d}",
            study_date=study_date,
            file_count=count,
        ))
    return specs


def _partition_total(total: int, low: int, high: int, rng: random.Random) -> list[int]:
    """Split `total` into parts within [low, high], exactly."""
    def feasible(r: int) -> bool:
        return r == 0 or low <= r <= high or r >= 2 * low

    counts: list[int] = []
    remaining = total
    while remaining:
        if low <= remaining <= high:
            counts.append(remaining)
            break
        candidates = [d for d in range(low, min(high, remaining) + 1) if feasible(remaining - d)]
        if not candidates:
            raise ValueError(f"cannot partition {total} into parts within [{low},{high}]")
        d = rng.choice(candidates)
        counts.append(d)
        remaining -= d
    return counts


def plan_scaled_corpus(cr_files: int, mr_files: int, seed) -> list[StudySpec]:
    """Plan study specs whose per-modality file totals hit the given targets
    exactly (a miniature of the pilot's corpus mix)."""
    rng = random.Random(f"scale:{seed}")
    cr_counts = _partition_total(cr_files, CR_FILES_MIN, CR_FILES_MAX, rng)
    mr_counts = _partition_total(mr_files, MR_FILES_MIN, MR_FILES_MAX, rng)
    specs = draw_study_specs(len(cr_counts), "CR", f"{seed}:cr", file_counts=cr_counts)
    specs += draw_study_specs(len(mr_counts), "MR", f"{seed}:mr", file_counts=mr_counts)
    return specs


# ---------------------------------------------------------------------------
# Fault injection


class FaultKind(str, Enum):
    OMIT_MANIFESTS = "OMIT_MANIFESTS"
    DROP_FILE = "DROP_FILE"
    DUPLICATE_FILE = "DUPLICATE_FILE"
    CORRUPT_FILE = "CORRUPT_FILE"
    TRUNCATE_FILE = "TRUNCATE_FILE"
    STRIP_DICM_MAGIC = "STRIP_DICM_MAGIC"
    PREFIX_ACCESSION = "PREFIX_ACCESSION"
    DUPLICATE_ACCESSION = "DUPLICATE_ACCESSION"
    EXTRA_UNLISTED_FILE = "EXTRA_UNLISTED_FILE"


@dataclass(frozen=True)
class FaultSpec:
    kind: FaultKind
    count: int = 1
    prefix: str = "ZZ-"


@dataclass
class FaultRecord:
    """Ground truth about one applied fault, for downstream assertions."""

    kind: FaultKind
    details: dict

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "details": self.details}


@dataclass
class StagedBatch:
    batch_id: str
    root: Path
    accession_list: list[str]
    manifests_included: bool
    faults_applied: list[FaultRecord]
    staged_at: datetime | None
    file_digests: list[str] = field(default_factory=list)
    deleted: bool = False


@dataclass
class DeletionRecord:
    batch_id: str
    accession_list: list[str]
    digests: list[str]
    deleted_at: str

    def to_dict(self) -> dict:
        return {
            "batch_id": self.batch_id,
            "accession_list": list(self.accession_list),
            "digests": list(self.digests),
            "deleted_at": self.deleted_at,
        }


def _pick_files(rng: random.Random, files: list[GeneratedFile], count: int) -> list[GeneratedFile]:
    count = min(count, len(files))
    return rng.sample(files, count)


def assemble_batch(
    studies: Sequence[StudySpec],
    faults: Sequence[FaultSpec],
    seed,
    staging_root,
    *,
    batch_id: str | None = None,
    clock: VirtualClock | None = None,
    payload_bytes: tuple[int, int] = (64, 256),
) -> tuple[StagedBatch, list[ClinicalSnapshotRow]]:
    """Generate all studies into a staged batch directory with manifests.

    Identity faults (prefixed or duplicated accessions, stripped DICM
    magic) model conditions that existed at the source, so the manifests
    stay consistent with the bytes on disk; transfer faults (dropped,
    duplicated, corrupted, truncated, or extra files) are applied after the
    manifests are written.  The clinical snapshot rows always carry the
    canonical accession numbers, the way the warehouse records them.
    """
    rng = random.Random(f"batch:{seed}")
    fault_by_kind = {f.kind: f for f in faults}
    unknown = [f for f in faults if not isinstance(f.kind, FaultKind)]
    if unknown:
        raise ClinicError(f"unknown fault kind: {unknown[0].kind!r}")
    if batch_id is None:
        batch_id = f"B{rng.randrange(16**8):08x}"
    root = Path(staging_root) / batch_id
    if root.exists():
        raise ClinicError(f"staging directory already exists for batch {batch_id}")
    root.mkdir(parents=True)

    applied: list[FaultRecord] = []
    specs = list(studies)

    if FaultKind.DUPLICATE_ACCESSION in fault_by_kind and len(specs) >= 2:
        j = rng.randrange(1, len(specs))
        shared = specs[0].accession_number
        specs[j] = replace(specs[j], accession_number=shared)
        applied.append(FaultRecord(FaultKind.DUPLICATE_ACCESSION, {"accession": shared}))

    prefixed_accessions: dict[str, str] = {}
    if FaultKind.PREFIX_ACCESSION in fault_by_kind:
        fspec = fault_by_kind[FaultKind.PREFIX_ACCESSION]
        indices = rng.sample(range(len(specs)), min(fspec.count, len(specs)))
        for idx in indices:
            original = specs[idx].accession_number
            prefixed = fspec.prefix + original
            prefixed_accessions[prefixed] = original
            specs[idx] = replace(specs[idx], accession_number=prefixed)
        applied.append(FaultRecord(
            FaultKind.PREFIX_ACCESSION,
            {"accessions": sorted(prefixed_accessions), "prefix": fspec.prefix},
        ))

    generated: list[GeneratedStudy] = []
    all_files: list[GeneratedFile] = []
    clinical_rows: list[ClinicalSnapshotRow] = []
    for idx, spec in enumerate(specs):
        study = generate_study(spec, f"{seed}:{idx}", root, payload_bytes=payload_bytes)
        generated.append(study)
        all_files.extend(study.files)
        row = study.clinical_row
        if spec.accession_number in prefixed_accessions:
            row = replace(row, accession_number=prefixed_accessions[spec.accession_number])
        clinical_rows.append(row)

    if FaultKind.STRIP_DICM_MAGIC in fault_by_kind:
        fspec = fault_by_kind[FaultKind.STRIP_DICM_MAGIC]
        targets = _pick_files(rng, all_files, fspec.count)
        for gf in targets:
            full = root / gf.rel_path
            stripped = full.read_bytes()[dicomio.PREAMBLE_SIZE + 4:]
            full.write_bytes(stripped)
            gf.size = len(stripped)
            gf.digest = hash_bytes(stripped)
        applied.append(FaultRecord(
            FaultKind.STRIP_DICM_MAGIC, {"paths": sorted(gf.rel_path for gf in targets)}
        ))

    manifests_included = FaultKind.OMIT_MANIFESTS not in fault_by_kind
    pair = BatchManifestPair(
        studies=[
            StudyManifestRow(s.spec.accession_number, s.study_uid, s.spec.modality, len(s.files))
            for s in generated
        ],
        files=[
            FileManifestRow(f.rel_path, f.sop_uid, f.accession_number, f.size, f.digest)
            for f in all_files
        ],
    )
    if manifests_included:
        study_text, file_text = render_manifests(pair)
        (root / STUDY_MANIFEST_FILENAME).write_text(study_text, encoding="utf-8", newline="")
        (root / FILE_MANIFEST_FILENAME).write_text(file_text, encoding="utf-8", newline="")
    else:
        applied.append(FaultRecord(FaultKind.OMIT_MANIFESTS, {}))

    dropped: set[str] = set()
    if FaultKind.DROP_FILE in fault_by_kind:
        fspec = fault_by_kind[FaultKind.DROP_FILE]
        targets = _pick_files(rng, all_files, fspec.count)
        for gf in targets:
            (root / gf.rel_path).unlink()
            dropped.add(gf.rel_path)
        applied.append(FaultRecord(FaultKind.DROP_FILE, {"paths": sorted(gf.rel_path for gf in targets)}))
    on_disk = [gf for gf in all_files if gf.rel_path not in dropped]

    if FaultKind.DUPLICATE_FILE in fault_by_kind and on_disk:
        fspec = fault_by_kind[FaultKind.DUPLICATE_FILE]
        targets = _pick_files(rng, on_disk, fspec.count)
        copies = []
        for gf in targets:
            copy_rel = gf.rel_path[:-len(".dcm")] + "_copy.dcm"
            shutil.copyfile(root / gf.rel_path, root / copy_rel)
            copies.append(copy_rel)
        applied.append(FaultRecord(
            FaultKind.DUPLICATE_FILE,
            {"paths": sorted(copies), "sop_uids": sorted(gf.sop_uid for gf in targets)},
        ))

    if FaultKind.CORRUPT_FILE in fault_by_kind and on_disk:
        fspec = fault_by_kind[FaultKind.CORRUPT_FILE]
        targets = _pick_files(rng, on_disk, fspec.count)
        for gf in targets:
            full = root / gf.rel_path
            raw = bytearray(full.read_bytes())
            raw[-1] ^= 0xFF
            full.write_bytes(bytes(raw))
        applied.append(FaultRecord(FaultKind.CORRUPT_FILE, {"paths": sorted(gf.rel_path for gf in targets)}))

    if FaultKind.TRUNCATE_FILE in fault_by_kind and on_disk:
        fspec = fault_by_kind[FaultKind.TRUNCATE_FILE]
        targets = _pick_files(rng, on_disk, fspec.count)
        for gf in targets:
            full = root / gf.rel_path
            raw = full.read_bytes()
            pixel_off = dicomio.pixel_data_offset(raw)
            # Cut into the element just before the pixel data so the header
            # stream itself is torn, not merely the payload.
            cut = pixel_off - 5 if pixel_off is not None and pixel_off > 5 else (2 * len(raw)) // 3
            full.write_bytes(raw[:cut])
        applied.append(FaultRecord(FaultKind.TRUNCATE_FILE, {"paths": sorted(gf.rel_path for gf in targets)}))

    if FaultKind.EXTRA_UNLISTED_FILE in fault_by_kind:
        fspec = fault_by_kind[FaultKind.EXTRA_UNLISTED_FILE]
        extras = []
        for i in range(fspec.count):
            acc = f"XTRA{rng.randrange(10**6):06d}"
            uid = _make_uid(rng, acc)
            els = [
                text_element(dicomio.TAG_TRANSFER_SYNTAX, "1.2.840.10008.1.2.1"),
                text_element(dicomio.TAG_SOP_UID, uid + ".1"),
                text_element(dicomio.TAG_ACCESSION_NUMBER, acc),
                text_element(dicomio.TAG_MODALITY, "CR"),
                text_element(dicomio.TAG_STUDY_UID, uid),
                bytes_element(dicomio.PIXEL_DATA_TAG, rng.randbytes(64)),
            ]
            rel = f"unlisted/extra{i + 1:02d}.dcm"
            full = root / rel
            full.parent.mkdir(parents=True, exist_ok=True)
            full.write_bytes(write_file(els))
            extras.append(rel)
        applied.append(FaultRecord(FaultKind.EXTRA_UNLISTED_FILE, {"paths": sorted(extras)}))

    batch = StagedBatch(
        batch_id=batch_id,
        root=root,
        accession_list=sorted({s.spec.accession_number for s in generated}),
        manifests_included=manifests_included,
        faults_applied=applied,
        staged_at=clock.now if clock else None,
        file_digests=sorted(f.digest for f in all_files),
    )
    return batch, clinical_rows


# ---------------------------------------------------------------------------
# Staging area lifecycle


class StagingArea:
    """Clinical-side staging: batches live here until receipt is confirmed.

    Confirmations and deletion records are appended to ndjson logs at the
    staging root so the compliance trail survives process restarts.
    """

    def __init__(self, root, clock: VirtualClock | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self._batches: dict[str, StagedBatch] = {}
        self._confirmed: set[str] = set()
        self._deletions: dict[str, DeletionRecord] = {}
        self._load_state()

    def _load_state(self) -> None:
        for entry in sorted(self.root.iterdir()):
            if entry.is_dir() and not entry.name.startswith("_"):
                self._batches[entry.name] = self._batch_from_disk(entry)
        conf = self.root / _CONFIRMATIONS_LOG
        if conf.exists():
            for line in conf.read_text(encoding="utf-8").splitlines():
                if line:
                    self._confirmed.add(json.loads(line)["batch_id"])
        dele = self.root / _DELETIONS_LOG
        if dele.exists():
            for line in dele.read_text(encoding="utf-8").splitlines():
                if line:
                    d = json.loads(line)
                    rec = DeletionRecord(d["batch_id"], d["accession_list"], d["digests"], d["deleted_at"])
                    self._deletions[rec.batch_id] = rec
                    if rec.batch_id in self._batches:
                        self._batches[rec.batch_id].deleted = True

    def _batch_from_disk(self, root: Path) -> StagedBatch:
        accessions: list[str] = []
        digests: list[str] = []
        manifests = (root / STUDY_MANIFEST_FILENAME).exists() and (root / FILE_MANIFEST_FILENAME).exists()
        if manifests:
            from .manifest import parse_manifests

            try:
                pair = parse_manifests(
                    (root / STUDY_MANIFEST_FILENAME).read_text(encoding="utf-8"),
                    (root / FILE_MANIFEST_FILENAME).read_text(encoding="utf-8"),
                )
                accessions = sorted({s.accession_number for s in pair.studies})
                digests = sorted(f.digest for f in pair.files)
            except Exception:
                pass
        return StagedBatch(
            batch_id=root.name, root=root, accession_list=accessions,
            manifests_included=manifests, faults_applied=[], staged_at=None,
            file_digests=digests,
        )

    def stage(self, studies, faults, seed, *, batch_id=None, payload_bytes=(64, 256)):
        batch, clinical_rows = assemble_batch(
            studies, faults, seed, self.root,
            batch_id=batch_id, clock=self.clock, payload_bytes=payload_bytes,
        )
        self._batches[batch.batch_id] = batch
        return batch, clinical_rows

    def batch(self, batch_id: str) -> StagedBatch:
        try:
            return self._batches[batch_id]
        except KeyError:
            raise ClinicError(f"unknown staged batch {batch_id!r}") from None

    def batch_ids(self) -> list[str]:
        return sorted(self._batches)

    def mark_confirmed(self, batch_id: str) -> None:
        if batch_id not in self._batches:
            raise ClinicError(f"unknown staged batch {batch_id!r}")
        if batch_id not in self._confirmed:
            self._confirmed.add(batch_id)
            with open(self.root / _CONFIRMATIONS_LOG, "a", encoding="utf-8", newline="") as fh:
                fh.write(json.dumps({"batch_id": batch_id}) + "\n")

    def is_confirmed(self, batch_id: str) -> bool:
        return batch_id in self._confirmed

    def deletion_record(self, batch_id: str) -> DeletionRecord | None:
        return self._deletions.get(batch_id)

    def delete_on_confirmation(self, batch_id: str) -> DeletionRecord:
        """Remove a staged batch after (and only after) confirmed receipt.

        Deleting twice is a no-op returning the existing audit record.
        """
        batch = self.batch(batch_id)
        if batch_id in self._deletions:
            return self._deletions[batch_id]
        if batch_id not in self._confirmed:
            raise ConfirmationRequired(
                f"CONFIRMATION_REQUIRED: batch {batch_id} has no receipt confirmation"
            )
        when = (self.clock.now if self.clock else datetime.now()).isoformat()
        record = DeletionRecord(batch_id, list(batch.accession_list), list(batch.file_digests), when)
        if batch.root.exists():
            shutil.rmtree(batch.root)
        batch.deleted = True
        self._deletions[batch_id] = record
        with open(self.root / _DELETIONS_LOG, "a", encoding="utf-8", newline="") as fh:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
        return record
