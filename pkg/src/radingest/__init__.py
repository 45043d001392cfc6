"""Radiology image batch transfer and ingest pipeline, desk scale.

Two halves: a simulated clinical environment that generates, stages, and
transmits synthetic DICOM study batches (`radingest.clinic`), and the
research-side ingest pipeline that hashes, reconciles, scans, catalogs,
links, and profiles what arrives (`radingest.ingest` and friends).
"""

__version__ = "0.1.0"
