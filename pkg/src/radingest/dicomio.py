"""Header-level DICOM reader/writer.

Reads the tagged element stream of a DICOM file up to (but never into) the
pixel data, classifies each file as modern, legacy, or corrupt, and extracts
the selected header elements used downstream.  Also provides the byte-level
writer the synthetic study generator is built on.

Layout handled: optional 128-byte preamble + "DICM" magic, file meta group
(0002) in explicit-VR little-endian, then the data set in explicit or
implicit VR little-endian (auto-detected).  Pixel decoding, compressed
encapsulation, and DICOM networking are out of scope.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO, Iterable, Sequence

PREAMBLE_SIZE = 128
MAGIC = b"DICM"

PIXEL_DATA_TAG = (0x7FE0, 0x0010)
ITEM_TAG = (0xFFFE, 0xE000)
ITEM_DELIMITER_TAG = (0xFFFE, 0xE00D)
SEQUENCE_DELIMITER_TAG = (0xFFFE, 0xE0DD)
UNDEFINED_LENGTH = 0xFFFFFFFF

# Full standard VR registry (used by the explicit/implicit auto-detection).
KNOWN_VRS = {
    "AE", "AS", "AT", "CS", "DA", "DS", "DT", "FL", "FD", "IS", "LO", "LT",
    "OB", "OD", "OF", "OL", "OV", "OW", "PN", "SH", "SL", "SQ", "SS", "ST",
    "SV", "TM", "UC", "UI", "UL", "UN", "UR", "US", "UT", "UV",
}

# VRs whose explicit encoding carries a 32-bit length after 2 reserved bytes.
LONG_LENGTH_VRS = {"OB", "OD", "OF", "OL", "OV", "OW", "SQ", "UC", "UR", "UT", "UN"}

# String-valued VRs we decode to text; UI pads with NUL, the rest with space.
TEXT_VRS = {"AE", "AS", "CS", "DA", "DS", "DT", "IS", "LO", "LT", "PN", "SH", "ST", "TM", "UI", "UC", "UR", "UT"}

# Selected header elements extracted into a HeaderRecord.
TAG_ACCESSION_NUMBER = (0x0008, 0x0050)
TAG_PATIENT_ID = (0x0010, 0x0020)
TAG_STUDY_UID = (0x0020, 0x000D)
TAG_SERIES_UID = (0x0020, 0x000E)
TAG_SOP_UID = (0x0008, 0x0018)
TAG_STUDY_DATE = (0x0008, 0x0020)
TAG_MODALITY = (0x0008, 0x0060)
TAG_MANUFACTURER = (0x0008, 0x0070)
TAG_SOFTWARE_VERSIONS = (0x0018, 0x1020)
TAG_KVP = (0x0018, 0x0060)
TAG_EXPOSURE_TIME = (0x0018, 0x1150)
TAG_ROWS = (0x0028, 0x0010)
TAG_COLUMNS = (0x0028, 0x0011)
TAG_STUDY_DESCRIPTION = (0x0008, 0x1030)
TAG_IMAGE_TYPE = (0x0008, 0x0008)
TAG_VIEW_POSITION = (0x0018, 0x5101)
TAG_TRANSFER_SYNTAX = (0x0002, 0x0010)

# VR assignments for the tags this pipeline writes and reads.  Implicit-VR
# streams get their VR resolved from this table (unknown tags become "UN").
TAG_VRS: dict[tuple[int, int], str] = {
    TAG_TRANSFER_SYNTAX: "UI",
    TAG_IMAGE_TYPE: "CS",
    TAG_SOP_UID: "UI",
    TAG_STUDY_DATE: "DA",
    TAG_ACCESSION_NUMBER: "SH",
    TAG_MODALITY: "CS",
    TAG_MANUFACTURER: "LO",
    TAG_STUDY_DESCRIPTION: "LO",
    TAG_PATIENT_ID: "LO",
    TAG_KVP: "DS",
    TAG_SOFTWARE_VERSIONS: "LO",
    TAG_EXPOSURE_TIME: "IS",
    TAG_VIEW_POSITION: "CS",
    TAG_STUDY_UID: "UI",
    TAG_SERIES_UID: "UI",
    TAG_ROWS: "US",
    TAG_COLUMNS: "US",
    PIXEL_DATA_TAG: "OB",
}


class ParseStatus(str, Enum):
    MODERN = "MODERN"
    LEGACY = "LEGACY"
    CORRUPT = "CORRUPT"


class StopReason(str, Enum):
    PIXEL_DATA_REACHED = "PIXEL_DATA_REACHED"
    END_OF_FILE = "END_OF_FILE"
    PARSE_ERROR = "PARSE_ERROR"


class DicomWriteError(ValueError):
    """Raised for element specs the writer refuses to encode."""


class _ParseFailure(Exception):
    """Internal: element stream is not coherent at the current offset."""


@dataclass(frozen=True)
class DicomElement:
    """One tagged element: (group, element), VR, and its padded value bytes."""

    group: int
    element: int
    vr: str
    value: bytes

    @property
    def tag(self) -> tuple[int, int]:
        return (self.group, self.element)

    @property
    def length(self) -> int:
        return len(self.value)

    def text(self) -> str:
        """Value decoded as text with trailing pad bytes removed."""
        return self.value.decode("utf-8", errors="replace").rstrip(" \x00")

    def uint(self) -> int:
        """Value decoded as an unsigned little-endian integer (US/UL)."""
        if self.vr == "US":
            return struct.unpack("<H", self.value[:2])[0]
        if self.vr == "UL":
            return struct.unpack("<I", self.value[:4])[0]
        raise ValueError(f"VR {self.vr} is not an unsigned integer VR")


@dataclass
class DicomScanOutcome:
    """Classification plus the recovered element stream for one file."""

    status: ParseStatus
    elements: list[DicomElement]
    stop_reason: StopReason
    error_detail: str | None = None

    def find(self, tag: tuple[int, int]) -> DicomElement | None:
        for el in self.elements:
            if el.tag == tag:
                return el
        return None


@dataclass
class HeaderRecord:
    """Selected header metadata for one scanned file."""

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

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["parse_status"] = self.parse_status.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HeaderRecord":
        d = dict(d)
        d["parse_status"] = ParseStatus(d["parse_status"])
        return cls(**d)


def _read_exact(stream: BinaryIO, n: int, context: str) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise _ParseFailure(f"unexpected end of data while reading {context}")
    return data


def _looks_explicit(first8: bytes) -> bool:
    """VR auto-detection: bytes 4-5 of the first element name a known VR."""
    if len(first8) < 6:
        return False
    try:
        vr = first8[4:6].decode("ascii")
    except UnicodeDecodeError:
        return False
    return vr in KNOWN_VRS


def _skip_undefined_length(stream: BinaryIO, tag: tuple[int, int]) -> bytes:
    """Walk an undefined-length sequence item-by-item, returning raw bytes.

    The walked bytes (items and their contents, delimiters excluded) become
    the element value so the stream stays accounted for; sequence contents
    are never interpreted.
    """
    collected = bytearray()
    while True:
        head = _read_exact(stream, 8, f"item header inside ({tag[0]:04X},{tag[1]:04X})")
        group, element, length = struct.unpack("<HHI", head)
        if (group, element) == SEQUENCE_DELIMITER_TAG:
            return bytes(collected)
        if (group, element) == ITEM_TAG:
            collected += head
            if length == UNDEFINED_LENGTH:
                # Item contents run until the item delimiter.
                while True:
                    inner = _read_exact(stream, 8, "undefined-length item contents")
                    g2, e2, l2 = struct.unpack("<HHI", inner)
                    if (g2, e2) == ITEM_DELIMITER_TAG:
                        break
                    collected += inner
                    collected += _read_exact(stream, l2, "nested element value")
            else:
                collected += _read_exact(stream, length, "item value")
        else:
            raise _ParseFailure(
                f"expected item or delimiter inside undefined-length "
                f"({tag[0]:04X},{tag[1]:04X}), found ({group:04X},{element:04X})"
            )


def _parse_elements(stream: BinaryIO, mode: str | None) -> tuple[list[DicomElement], StopReason]:
    """Parse elements until EOF or pixel data.

    ``mode`` is "explicit", "implicit", or None (detect at the first
    non-file-meta element).  File meta (group 0002) is always explicit.
    Raises _ParseFailure on any incoherence: truncated element, odd value
    length, unknown structure, or tag-order violation.
    """
    elements: list[DicomElement] = []
    prev_tag: tuple[int, int] | None = None
    while True:
        tag_bytes = stream.read(4)
        if len(tag_bytes) == 0:
            return elements, StopReason.END_OF_FILE
        if len(tag_bytes) < 4:
            raise _ParseFailure("unexpected end of data while reading element tag")
        group, element = struct.unpack("<HH", tag_bytes)
        tag = (group, element)
        if tag == PIXEL_DATA_TAG:
            return elements, StopReason.PIXEL_DATA_REACHED
        if prev_tag is not None and tag <= prev_tag:
            raise _ParseFailure(
                f"tag ({group:04X},{element:04X}) out of order after "
                f"({prev_tag[0]:04X},{prev_tag[1]:04X})"
            )
        prev_tag = tag

        explicit = True if group == 0x0002 else None
        if explicit is None:
            if mode is None:
                probe = _read_exact(stream, 4, f"length of ({group:04X},{element:04X})")
                mode = "explicit" if _looks_explicit(tag_bytes + probe) else "implicit"
                rest = probe
            else:
                rest = _read_exact(stream, 4, f"length of ({group:04X},{element:04X})")
            if mode == "explicit":
                vr = rest[:2].decode("ascii", errors="replace")
                if vr not in KNOWN_VRS:
                    raise _ParseFailure(f"unknown VR {vr!r} at ({group:04X},{element:04X})")
                if vr in LONG_LENGTH_VRS:
                    length = struct.unpack("<I", _read_exact(stream, 4, "32-bit length"))[0]
                else:
                    length = struct.unpack("<H", rest[2:4])[0]
            else:
                vr = TAG_VRS.get(tag, "UN")
                length = struct.unpack("<I", rest)[0]
        else:
            vr_bytes = _read_exact(stream, 2, f"VR of ({group:04X},{element:04X})")
            vr = vr_bytes.decode("ascii", errors="replace")
            if vr not in KNOWN_VRS:
                raise _ParseFailure(f"unknown VR {vr!r} at ({group:04X},{element:04X})")
            if vr in LONG_LENGTH_VRS:
                _read_exact(stream, 2, "reserved bytes")
                length = struct.unpack("<I", _read_exact(stream, 4, "32-bit length"))[0]
            else:
                length = struct.unpack("<H", _read_exact(stream, 2, "16-bit length"))[0]

        if length == UNDEFINED_LENGTH:
            if vr not in ("SQ", "UN"):
                raise _ParseFailure(
                    f"undefined length on non-sequence VR {vr} at ({group:04X},{element:04X})"
                )
            value = _skip_undefined_length(stream, tag)
        else:
            if length % 2 != 0:
                raise _ParseFailure(
                    f"odd value length {length} at ({group:04X},{element:04X})"
                )
            value = stream.read(length)
            if len(value) != length:
                raise _ParseFailure(
                    f"element ({group:04X},{element:04X}) declares {length} bytes "
                    f"but only {len(value)} remain"
                )
        elements.append(DicomElement(group, element, vr, value))


def parse_stream(stream: BinaryIO) -> DicomScanOutcome:
    """Classify and parse one DICOM stream.

    Never raises: all failures come back as status CORRUPT.  Parsing stops
    at the pixel data tag without touching its value, so scan cost does not
    depend on payload size.
    """
    head = stream.read(PREAMBLE_SIZE + 4)
    if len(head) == PREAMBLE_SIZE + 4 and head[PREAMBLE_SIZE:] == MAGIC:
        try:
            elements, stop = _parse_elements(stream, mode=None)
            return DicomScanOutcome(ParseStatus.MODERN, elements, stop)
        except _ParseFailure as exc:
            return DicomScanOutcome(ParseStatus.CORRUPT, [], StopReason.PARSE_ERROR, str(exc))

    # Force-read: no magic, retry from offset zero with VR auto-detection.
    if len(head) == 0:
        return DicomScanOutcome(
            ParseStatus.CORRUPT, [], StopReason.PARSE_ERROR, "empty input"
        )
    stream.seek(0)
    first8 = stream.read(8)
    stream.seek(0)
    preferred = "explicit" if _looks_explicit(first8) else "implicit"
    other = "implicit" if preferred == "explicit" else "explicit"
    first_error: str | None = None
    for attempt in (preferred, other):
        stream.seek(0)
        try:
            elements, stop = _parse_elements(stream, mode=attempt)
        except _ParseFailure as exc:
            if first_error is None:
                first_error = str(exc)
            continue
        if elements:
            return DicomScanOutcome(ParseStatus.LEGACY, elements, stop)
        if first_error is None:
            first_error = "no elements recovered"
    return DicomScanOutcome(ParseStatus.CORRUPT, [], StopReason.PARSE_ERROR, first_error)


def parse_file(data: bytes) -> DicomScanOutcome:
    """Parse an in-memory byte sequence; accepts anything, never raises."""
    return parse_stream(io.BytesIO(data))


def scan_path(path) -> tuple[DicomScanOutcome, int]:
    """Scan a file on disk, returning (outcome, file size in bytes).

    Reads sequentially and stops at the pixel data tag, so the trailing
    payload is never pulled off disk.
    """
    import os

    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        return parse_stream(fh), size


def _text_or_empty(outcome: DicomScanOutcome, tag: tuple[int, int]) -> str:
    el = outcome.find(tag)
    return el.text() if el is not None else ""


def _optional_text(outcome: DicomScanOutcome, tag: tuple[int, int]) -> str | None:
    el = outcome.find(tag)
    return el.text() if el is not None else None


def _optional_uint(outcome: DicomScanOutcome, tag: tuple[int, int]) -> int | None:
    el = outcome.find(tag)
    if el is None:
        return None
    try:
        return el.uint()
    except (ValueError, struct.error):
        return None


def extract_header(outcome: DicomScanOutcome, file_path: str, file_size: int) -> HeaderRecord:
    """Build a HeaderRecord from a successful scan.

    Missing optional elements become empty/absent; the quality profiler
    reports on them rather than this function failing.
    """
    if outcome.status is ParseStatus.CORRUPT:
        raise ValueError("cannot extract header fields from a CORRUPT scan")
    return HeaderRecord(
        sop_uid=_text_or_empty(outcome, TAG_SOP_UID),
        accession_number=_text_or_empty(outcome, TAG_ACCESSION_NUMBER),
        patient_id=_text_or_empty(outcome, TAG_PATIENT_ID),
        study_uid=_text_or_empty(outcome, TAG_STUDY_UID),
        series_uid=_text_or_empty(outcome, TAG_SERIES_UID),
        study_date=_text_or_empty(outcome, TAG_STUDY_DATE),
        modality=_text_or_empty(outcome, TAG_MODALITY),
        manufacturer=_text_or_empty(outcome, TAG_MANUFACTURER),
        software_versions=_text_or_empty(outcome, TAG_SOFTWARE_VERSIONS),
        procedure_description=_text_or_empty(outcome, TAG_STUDY_DESCRIPTION),
        image_type=_text_or_empty(outcome, TAG_IMAGE_TYPE),
        view_position=_text_or_empty(outcome, TAG_VIEW_POSITION),
        kvp=_optional_text(outcome, TAG_KVP),
        exposure_time=_optional_text(outcome, TAG_EXPOSURE_TIME),
        rows=_optional_uint(outcome, TAG_ROWS),
        columns=_optional_uint(outcome, TAG_COLUMNS),
        file_path=file_path,
        file_size=file_size,
        parse_status=outcome.status,
    )


def text_element(tag: tuple[int, int], text: str, vr: str | None = None) -> DicomElement:
    """Build a text element, padding to even length per its VR."""
    if vr is None:
        vr = TAG_VRS.get(tag, "LO")
    raw = text.encode("utf-8")
    if len(raw) % 2 != 0:
        raw += b"\x00" if vr == "UI" else b" "
    return DicomElement(tag[0], tag[1], vr, raw)


def ushort_element(tag: tuple[int, int], value: int) -> DicomElement:
    return DicomElement(tag[0], tag[1], "US", struct.pack("<H", value))


def ulong_element(tag: tuple[int, int], value: int) -> DicomElement:
    return DicomElement(tag[0], tag[1], "UL", struct.pack("<I", value))


def bytes_element(tag: tuple[int, int], payload: bytes, vr: str = "OB") -> DicomElement:
    if len(payload) % 2 != 0:
        payload += b"\x00"
    return DicomElement(tag[0], tag[1], vr, payload)


def write_file(
    elements: Sequence[DicomElement],
    *,
    omit_magic: bool = False,
    truncate_at: int | None = None,
    implicit_vr: bool = False,
) -> bytes:
    """Encode an element list as a DICOM byte stream.

    Default output is 128 zero bytes + "DICM" + explicit-VR little-endian
    elements; parse_file of the default output recovers the element list
    exactly.  Tags must be strictly ascending and values even-length.
    """
    out = bytearray()
    if not omit_magic:
        out += b"\x00" * PREAMBLE_SIZE
        out += MAGIC
    prev: tuple[int, int] | None = None
    for el in elements:
        if prev is not None and el.tag <= prev:
            raise DicomWriteError(
                f"element tags must be strictly ascending; "
                f"({el.group:04X},{el.element:04X}) follows ({prev[0]:04X},{prev[1]:04X})"
            )
        prev = el.tag
        if len(el.value) % 2 != 0:
            raise DicomWriteError(
                f"value of ({el.group:04X},{el.element:04X}) has odd length {len(el.value)}"
            )
        out += struct.pack("<HH", el.group, el.element)
        # File meta stays explicit regardless of the data-set encoding.
        if implicit_vr and el.group != 0x0002:
            out += struct.pack("<I", len(el.value))
        elif el.vr in LONG_LENGTH_VRS:
            out += el.vr.encode("ascii") + b"\x00\x00" + struct.pack("<I", len(el.value))
        else:
            if len(el.value) > 0xFFFF:
                raise DicomWriteError(
                    f"value of ({el.group:04X},{el.element:04X}) too long for VR {el.vr}"
                )
            out += el.vr.encode("ascii") + struct.pack("<H", len(el.value))
        out += el.value
    data = bytes(out)
    if truncate_at is not None:
        data = data[:truncate_at]
    return data


def pixel_data_offset(data: bytes) -> int | None:
    """Byte offset of the pixel data tag in an explicit-VR LE stream."""
    marker = struct.pack("<HH", *PIXEL_DATA_TAG)
    idx = data.find(marker)
    return idx if idx >= 0 else None
