"""Image metadata catalog and clinical snapshot linking.

The catalog persists one record per received image file so researchers can
query selected header metadata without touching the image files.  Storage
is an append-only newline-delimited JSON log (the source of truth) plus a
rebuildable sop_uid index.  Clinical context arrives as a TSV snapshot
keyed by accession number; linking joins the two sides after accession
normalization.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .dicomio import HeaderRecord, ParseStatus
from .manifest import NormalizationRules, normalize_accession

CATALOG_FILENAME = "catalog.ndjson"
INDEX_FILENAME = "catalog.idx"
CLINICAL_SNAPSHOT_FILENAME = "clinical_snapshot.tsv"

_QUERY_FIELDS = (
    "modality",
    "manufacturer",
    "parse_status",
    "link_status",
    "batch_id",
    "study_date_from",
    "study_date_to",
)


class LinkStatus(str, Enum):
    LINKED = "LINKED"
    ORPHAN_IMAGE = "ORPHAN_IMAGE"
    AMBIGUOUS = "AMBIGUOUS"


class CatalogError(Exception):
    pass


class UnknownQueryField(CatalogError):
    def __init__(self, name: str):
        super().__init__(
            f"unknown query field {name!r}; valid fields: {', '.join(_QUERY_FIELDS)}"
        )


@dataclass(frozen=True)
class ClinicalSnapshotRow:
    """One row of the clinical-warehouse extract shipped alongside batches."""

    patient_id: str
    accession_number: str
    birth_year: int
    sex: str
    site_code: str
    study_date: str
    report_text: str

    def to_tsv_line(self) -> str:
        return "\t".join([
            self.patient_id, self.accession_number, str(self.birth_year),
            self.sex, self.site_code, self.study_date, self.report_text,
        ])


def append_clinical_rows(path, rows: Iterable[ClinicalSnapshotRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8", newline="") as fh:
        for row in rows:
            fh.write(row.to_tsv_line() + "\n")


def load_clinical_snapshot(path) -> list[ClinicalSnapshotRow]:
    path = Path(path)
    rows = []
    if not path.exists():
        return rows
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t", 6)
        if len(parts) != 7:
            raise CatalogError(f"clinical snapshot line {lineno}: expected 7 columns")
        try:
            birth_year = int(parts[2])
        except ValueError:
            raise CatalogError(f"clinical snapshot line {lineno}: bad birth year {parts[2]!r}") from None
        rows.append(ClinicalSnapshotRow(parts[0], parts[1], birth_year, parts[3], parts[4], parts[5], parts[6]))
    return rows


@dataclass
class CatalogEntry:
    """One cataloged image file: header metadata plus provenance."""

    sop_uid: str
    accession_number: str
    patient_id: str
    study_uid: str
    series_uid: str
    study_date: str
    modality: str
    manufacturer: str
    software_versions: str
    procedure_description: str
    image_type: str
    view_position: str
    kvp: str | None
    exposure_time: str | None
    rows: int | None
    columns: int | None
    file_path: str
    file_size: int
    parse_status: ParseStatus
    digest: str
    batch_id: str
    ingested_at: str
    link_status: LinkStatus = LinkStatus.ORPHAN_IMAGE

    @classmethod
    def from_header(cls, header: HeaderRecord, digest: str, batch_id: str, ingested_at: str) -> "CatalogEntry":
        return cls(
            **{k: getattr(header, k) for k in (
                "sop_uid", "accession_number", "patient_id", "study_uid", "series_uid",
                "study_date", "modality", "manufacturer", "software_versions",
                "procedure_description", "image_type", "view_position", "kvp",
                "exposure_time", "rows", "columns", "file_path", "file_size",
                "parse_status",
            )},
            digest=digest,
            batch_id=batch_id,
            ingested_at=ingested_at,
        )

    @classmethod
    def for_corrupt_file(cls, file_path: str, file_size: int, digest: str,
                         batch_id: str, ingested_at: str) -> "CatalogEntry":
        """Corrupt files are kept on the books (path, size, digest only) so
        the accounting stays exact; they get a digest-derived key because no
        sop_uid could be recovered."""
        return cls(
            sop_uid=f"corrupt:{digest[:16]}",
            accession_number="", patient_id="", study_uid="", series_uid="",
            study_date="", modality="", manufacturer="", software_versions="",
            procedure_description="", image_type="", view_position="",
            kvp=None, exposure_time=None, rows=None, columns=None,
            file_path=file_path, file_size=file_size,
            parse_status=ParseStatus.CORRUPT, digest=digest,
            batch_id=batch_id, ingested_at=ingested_at,
        )

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["parse_status"] = self.parse_status.value
        d["link_status"] = self.link_status.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CatalogEntry":
        d = dict(d)
        d["parse_status"] = ParseStatus(d["parse_status"])
        d["link_status"] = LinkStatus(d["link_status"])
        return cls(**d)


@dataclass
class UpsertResult:
    inserted: int = 0
    unchanged: int = 0
    conflicted: int = 0


@dataclass
class LinkReport:
    linked: int = 0
    orphan_images: list[str] = field(default_factory=list)
    orphan_rows: list[str] = field(default_factory=list)
    ambiguous: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "linked": self.linked,
            "orphan_images": list(self.orphan_images),
            "orphan_rows": list(self.orphan_rows),
            "ambiguous": list(self.ambiguous),
        }


def link_clinical(
    entries: Sequence[CatalogEntry],
    snapshot_rows: Sequence[ClinicalSnapshotRow],
    rules: NormalizationRules | None = None,
    prior_accessions: set[str] | None = None,
) -> LinkReport:
    """Join catalog entries to clinical rows on normalized accession number.

    Mutates each entry's link_status in place.  Corrupt entries carry no
    identity and are skipped.  orphan_rows lists clinical accessions with no
    received image anywhere (prior_accessions supplies the already-cataloged
    accession set so earlier batches keep counting).
    """
    if rules is None:
        rules = NormalizationRules()
    by_accession: dict[str, list[ClinicalSnapshotRow]] = {}
    for row in snapshot_rows:
        key = normalize_accession(row.accession_number, rules).normalized
        by_accession.setdefault(key, []).append(row)

    report = LinkReport()
    seen_accessions: set[str] = set(prior_accessions or ())
    for entry in entries:
        if entry.parse_status is ParseStatus.CORRUPT:
            continue
        key = normalize_accession(entry.accession_number, rules).normalized
        seen_accessions.add(key)
        matches = by_accession.get(key, [])
        if len(matches) == 1:
            entry.link_status = LinkStatus.LINKED
            report.linked += 1
        elif not matches:
            entry.link_status = LinkStatus.ORPHAN_IMAGE
            report.orphan_images.append(entry.sop_uid)
        else:
            entry.link_status = LinkStatus.AMBIGUOUS
            report.ambiguous.append(entry.sop_uid)
    report.orphan_images.sort()
    report.ambiguous.sort()
    report.orphan_rows = sorted(set(by_accession) - seen_accessions)
    return report


class Catalog:
    """Append-only metadata store with single-writer semantics.

    State is rebuilt by replaying the log on open; the sibling index maps
    sop_uid to the byte offset of its latest record and can be regenerated
    from the log at any time.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.index_path = self.path.with_name(INDEX_FILENAME)
        self._entries: dict[str, CatalogEntry] = {}
        self._offsets: dict[str, int] = {}
        self._digest_audit: dict[str, list[str]] = {}
        self._replay()

    def _replay(self) -> None:
        if not self.path.exists():
            return
        with open(self.path, "r", encoding="utf-8") as fh:
            offset = 0
            for line in fh:
                record = json.loads(line)
                if record.get("type") == "entry":
                    entry = CatalogEntry.from_dict(record["entry"])
                    self._entries[entry.sop_uid] = entry
                    self._offsets[entry.sop_uid] = offset
                    self._digest_audit.setdefault(entry.sop_uid, [])
                    if entry.digest not in self._digest_audit[entry.sop_uid]:
                        self._digest_audit[entry.sop_uid].append(entry.digest)
                elif record.get("type") == "digest_conflict":
                    uid = record["sop_uid"]
                    audit = self._digest_audit.setdefault(uid, [])
                    if record["digest"] not in audit:
                        audit.append(record["digest"])
                    if uid in self._entries:
                        self._entries[uid].link_status = LinkStatus.AMBIGUOUS
                offset += len(line.encode("utf-8"))

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, sop_uid: str) -> CatalogEntry | None:
        return self._entries.get(sop_uid)

    def digest_audit(self, sop_uid: str) -> list[str]:
        return list(self._digest_audit.get(sop_uid, ()))

    def accession_study_map(self, rules: NormalizationRules | None = None) -> dict[str, str]:
        """Normalized accession -> study_uid for every non-corrupt entry."""
        out: dict[str, str] = {}
        for entry in self._entries.values():
            if entry.parse_status is ParseStatus.CORRUPT or not entry.accession_number:
                continue
            key = normalize_accession(entry.accession_number, rules).normalized
            out[key] = entry.study_uid
        return out

    def upsert_entries(self, entries: Sequence[CatalogEntry]) -> UpsertResult:
        """Idempotent insert keyed on (sop_uid, digest).

        A repeat with the identical digest is a no-op; a differing digest is
        a conflict: the stored entry flips to AMBIGUOUS and every digest ever
        seen for that sop_uid stays in the audit list.  The whole call is a
        single buffered append so a failed write leaves nothing partial.
        """
        result = UpsertResult()
        block: list[str] = []
        base_offset = self.path.stat().st_size if self.path.exists() else 0
        pending_offset = base_offset
        for entry in entries:
            existing = self._entries.get(entry.sop_uid)
            if existing is None:
                line = json.dumps({"type": "entry", "entry": entry.to_dict()},
                                  sort_keys=True, separators=(",", ":")) + "\n"
                block.append(line)
                self._entries[entry.sop_uid] = entry
                self._offsets[entry.sop_uid] = pending_offset
                self._digest_audit.setdefault(entry.sop_uid, [])
                if entry.digest not in self._digest_audit[entry.sop_uid]:
                    self._digest_audit[entry.sop_uid].append(entry.digest)
                pending_offset += len(line.encode("utf-8"))
                result.inserted += 1
            elif existing.digest == entry.digest:
                result.unchanged += 1
            else:
                line = json.dumps(
                    {"type": "digest_conflict", "sop_uid": entry.sop_uid,
                     "digest": entry.digest, "batch_id": entry.batch_id},
                    sort_keys=True, separators=(",", ":")) + "\n"
                block.append(line)
                existing.link_status = LinkStatus.AMBIGUOUS
                audit = self._digest_audit.setdefault(entry.sop_uid, [])
                if entry.digest not in audit:
                    audit.append(entry.digest)
                pending_offset += len(line.encode("utf-8"))
                result.conflicted += 1
        if block:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8", newline="") as fh:
                fh.write("".join(block))
            self._write_index()
        return result

    def _write_index(self) -> None:
        tmp = self.index_path.with_suffix(".idx.tmp")
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            for uid in sorted(self._offsets):
                fh.write(f"{uid}\t{self._offsets[uid]}\n")
        os.replace(tmp, self.index_path)

    def rebuild_index(self) -> None:
        self._write_index()

    def export_entries(self) -> list[CatalogEntry]:
        """Every entry in canonical (study_uid, sop_uid) order."""
        return sorted(self._entries.values(), key=lambda e: (e.study_uid, e.sop_uid))

    def query(self, filters: Mapping[str, object] | None = None) -> list[CatalogEntry]:
        """Exact filtering over the supported fields, stable output order.

        study_date_from/to bound the DICOM date text inclusively; all other
        fields match by equality.  Unknown field names raise, naming the
        valid set.
        """
        filters = dict(filters or {})
        for name in filters:
            if name not in _QUERY_FIELDS:
                raise UnknownQueryField(name)

        def keep(e: CatalogEntry) -> bool:
            if "modality" in filters and e.modality != filters["modality"]:
                return False
            if "manufacturer" in filters and e.manufacturer != filters["manufacturer"]:
                return False
            if "parse_status" in filters and e.parse_status.value != str(filters["parse_status"]):
                return False
            if "link_status" in filters and e.link_status.value != str(filters["link_status"]):
                return False
            if "batch_id" in filters and e.batch_id != filters["batch_id"]:
                return False
            if "study_date_from" in filters and e.study_date < str(filters["study_date_from"]):
                return False
            if "study_date_to" in filters and e.study_date > str(filters["study_date_to"]):
                return False
            return True

        return [e for e in self.export_entries() if keep(e)]
