"""Key/value configuration for the simulator and the ingest policy.

Format: one `key = value` per line, `#` comments, blank lines ignored.
Recognized keys are grouped by prefix:

    extraction.business_hours_rate      accessions/hour during business hours
    extraction.off_hours_rate           accessions/hour otherwise
    extraction.business_start_hour      business window start (0-24)
    extraction.business_end_hour        business window end (0-24)
    transfer.rate_am                    bytes/second before noon
    transfer.rate_pm                    bytes/second from noon
    batch.studies                       default studies per batch
    batch.payload_min / batch.payload_max   synthetic payload size range
    policy.max_corrupt_fraction
    policy.reject_on_missing_files      true/false
    policy.reject_on_digest_mismatch    true/false
    policy.allow_absent_manifest        true/false
    policy.reject_empty                 true/false
    normalize.strip_prefixes            comma-separated, in order
    normalize.pattern                   canonical accession regex
"""

from __future__ import annotations

from pathlib import Path

from .clinic import ExtractionModel
from .ingest import AcceptancePolicy
from .manifest import NormalizationRules

DEFAULT_BATCH_STUDIES = 10


class ConfigError(Exception):
    pass


def parse_kv_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_config(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_kv_text(path.read_text(encoding="utf-8"))


def _get_float(cfg: dict[str, str], key: str, default: float) -> float:
    if key not in cfg:
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(f"config key {key}: expected a number, got {cfg[key]!r}") from None


def _get_bool(cfg: dict[str, str], key: str, default: bool) -> bool:
    if key not in cfg:
        return default
    value = cfg[key].lower()
    if value in ("true", "yes", "1"):
        return True
    if value in ("false", "no", "0"):
        return False
    raise ConfigError(f"config key {key}: expected true/false, got {cfg[key]!r}")


def extraction_model_from(cfg: dict[str, str]) -> ExtractionModel:
    base = ExtractionModel()
    return ExtractionModel(
        business_hours_rate=_get_float(cfg, "extraction.business_hours_rate", base.business_hours_rate),
        off_hours_rate=_get_float(cfg, "extraction.off_hours_rate", base.off_hours_rate),
        business_start_hour=_get_float(cfg, "extraction.business_start_hour", base.business_start_hour),
        business_end_hour=_get_float(cfg, "extraction.business_end_hour", base.business_end_hour),
        transfer_rate_am=_get_float(cfg, "transfer.rate_am", base.transfer_rate_am),
        transfer_rate_pm=_get_float(cfg, "transfer.rate_pm", base.transfer_rate_pm),
    )


def policy_from(cfg: dict[str, str]) -> AcceptancePolicy:
    base = AcceptancePolicy()
    return AcceptancePolicy(
        max_corrupt_fraction=_get_float(cfg, "policy.max_corrupt_fraction", base.max_corrupt_fraction),
        reject_on_missing_files=_get_bool(cfg, "policy.reject_on_missing_files", base.reject_on_missing_files),
        reject_on_digest_mismatch=_get_bool(cfg, "policy.reject_on_digest_mismatch", base.reject_on_digest_mismatch),
        allow_absent_manifest=_get_bool(cfg, "policy.allow_absent_manifest", base.allow_absent_manifest),
        reject_empty=_get_bool(cfg, "policy.reject_empty", base.reject_empty),
    )


def rules_from(cfg: dict[str, str]) -> NormalizationRules:
    base = NormalizationRules()
    prefixes = base.strip_prefixes
    if "normalize.strip_prefixes" in cfg:
        prefixes = tuple(p.strip() for p in cfg["normalize.strip_prefixes"].split(",") if p.strip())
    return NormalizationRules(
        strip_prefixes=prefixes,
        pattern=cfg.get("normalize.pattern", base.pattern),
        uppercase=_get_bool(cfg, "normalize.uppercase", base.uppercase),
    )


def payload_range_from(cfg: dict[str, str]) -> tuple[int, int]:
    lo = int(_get_float(cfg, "batch.payload_min", 64))
    hi = int(_get_float(cfg, "batch.payload_max", 256))
    if not 0 < lo <= hi:
        raise ConfigError("batch.payload_min/max must satisfy 0 < min <= max")
    return lo, hi
