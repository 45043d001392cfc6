"""Command-line entry points for every pipeline stage.

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from datetime import datetime
from pathlib import Path

from . import config as config_mod
from .catalog import append_clinical_rows
from .clinic import (
    ClinicError,
    ExtractionModel,
    FaultKind,
    FaultSpec,
    StagingArea,
    VirtualClock,
    draw_study_specs,
    generate_study,
    simulate_extraction,
    transfer_batch,
)
from .config import ConfigError
from .ingest import AcceptancePolicy, IngestManager, IngestError
from .integrity import SnapshotError, load_snapshot, verify_snapshot
from .locking import LockHeld, MutationLock
from .manifest import ManifestError
from .profiler import CORPUS_REPORT_FILENAME, profile_corpus, write_canonical_json
from .scanning import measure_scan_rate


def _load_cfg(args) -> dict[str, str]:
    if getattr(args, "config", None):
        return config_mod.load_config(args.config)
    return {}


def _parse_faults(raw_faults: list[str], prefix: str) -> list[FaultSpec]:
    specs = []
    for raw in raw_faults:
        kind_name, _, count_s = raw.partition(":")
        try:
            kind = FaultKind(kind_name.upper())
        except ValueError:
            valid = ", ".join(k.value for k in FaultKind)
            raise ClinicError(f"unknown fault kind {kind_name!r}; valid kinds: {valid}") from None
        count = int(count_s) if count_s else 1
        specs.append(FaultSpec(kind, count=count, prefix=prefix))
    return specs


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    payload = config_mod.payload_range_from(cfg)
    area = StagingArea(args.staging)
    specs = draw_study_specs(args.studies, args.modality, args.seed)
    faults = _parse_faults(args.fault, args.prefix)
    batch, clinical_rows = area.stage(
        specs, faults, args.seed, batch_id=args.batch_id, payload_bytes=payload,
    )
    append_clinical_rows(args.clinical, clinical_rows)
    if args.model_extraction:
        clock = VirtualClock(datetime.fromisoformat(args.start_time))
        done = simulate_extraction(batch.accession_list, config_mod.extraction_model_from(cfg), clock)
        print(f"extraction modeled: {len(batch.accession_list)} accessions, "
              f"complete at {done.isoformat()}")
    n_files = sum(1 for p in batch.root.rglob("*.dcm"))
    print(f"staged batch {batch.batch_id}: {len(specs)} studies, {n_files} files at {batch.root}")
    return 0


def cmd_transfer(args) -> int:
    cfg = _load_cfg(args)
    area = StagingArea(args.staging)
    batch = area.batch(args.batch)
    model = config_mod.extraction_model_from(cfg)
    clock = VirtualClock(datetime.fromisoformat(args.start_time))
    cap = args.cap if args.cap else float("inf")
    result = transfer_batch(batch, model, clock, args.inbox, bandwidth_cap=cap)
    print(json.dumps({
        "batch_id": batch.batch_id,
        "bytes": result.bytes_transferred,
        "virtual_seconds": round(result.elapsed_seconds, 3),
        "effective_rate_bytes_per_s": round(result.effective_rate, 1),
        "completed_at": result.completed_at.isoformat(),
    }))
    return 0


def _manager(args, cfg) -> IngestManager:
    return IngestManager(
        args.landing,
        clinical_path=args.clinical if getattr(args, "clinical", None) else None,
        policy=config_mod.policy_from(cfg),
        rules=config_mod.rules_from(cfg),
    )


def cmd_ingest(args) -> int:
    cfg = _load_cfg(args)
    with MutationLock(args.landing):
        mgr = _manager(args, cfg)
        try:
            mgr.record(args.batch)
        except IngestError:
            mgr.receive_batch(args.inbox, args.batch)
        record = mgr.run_pipeline(args.batch)
    print(f"batch {record.batch_id}: {record.state.value}")
    if record.rejection_reason:
        print(f"rejection reason: {record.rejection_reason}")
    return 0


def cmd_verify(args) -> int:
    landing = Path(args.landing)
    root = landing / args.batch
    snapshot = load_snapshot(root)
    report = verify_snapshot(snapshot, root)
    if report.ok:
        print(f"batch {args.batch}: integrity ok ({len(snapshot.entries)} files)")
        return 0
    for path in report.mismatched:
        print(f"mismatched: {path}", file=sys.stderr)
    for path in report.missing:
        print(f"missing: {path}", file=sys.stderr)
    for path in report.added:
        print(f"added: {path}", file=sys.stderr)
    return 1


def cmd_query(args) -> int:
    cfg = _load_cfg(args)
    mgr = _manager(args, cfg)
    filters = {}
    for name in ("modality", "manufacturer", "parse_status", "link_status", "batch_id"):
        value = getattr(args, name)
        if value:
            filters[name] = value
    if args.date_from:
        filters["study_date_from"] = args.date_from
    if args.date_to:
        filters["study_date_to"] = args.date_to
    entries = mgr.catalog.query(filters)
    if args.count:
        print(len(entries))
    else:
        for entry in entries:
            print(json.dumps(entry.to_dict(), sort_keys=True))
    return 0


def cmd_profile(args) -> int:
    cfg = _load_cfg(args)
    mgr = _manager(args, cfg)
    if args.batch:
        path = mgr.quality_report_path(args.batch)
        if not path.exists():
            print(f"error: no quality report for batch {args.batch}", file=sys.stderr)
            return 1
        print(path.read_text(encoding="utf-8"), end="")
        return 0
    stats = profile_corpus(mgr.catalog, [r.to_dict() for r in mgr.list_records()])
    out = write_canonical_json(mgr.landing / "_reports" / CORPUS_REPORT_FILENAME, stats)
    print(f"corpus report written to {out}")
    print(f"entries: {stats['catalog_entries']}, batches: {sum(stats['batch_states'].values())}")
    return 0


def cmd_bench(args) -> int:
    workdir = Path(args.dir) if args.dir else Path(tempfile.mkdtemp(prefix="radingest-bench-"))
    spec_seed = args.seed
    rel_paths = []
    # Header-only files: one study's worth of metadata each, minimal payload.
    n_studies = (args.files + 7) // 8
    specs = draw_study_specs(n_studies, "CR", spec_seed, file_counts=[8] * n_studies)
    for i, spec in enumerate(specs):
        study = generate_study(spec, f"bench:{spec_seed}:{i}", workdir, payload_bytes=(8, 16))
        rel_paths.extend(f.rel_path for f in study.files)
        if len(rel_paths) >= args.files:
            break
    rel_paths = rel_paths[: args.files]
    result = measure_scan_rate(workdir, rel_paths, workers=args.workers)
    print(json.dumps(result.to_dict()))
    if args.out:
        write_canonical_json(args.out, result.to_dict())
    if args.min_rate and result.files_per_second < args.min_rate:
        print(f"error: measured {result.files_per_second:.0f} files/s "
              f"below required {args.min_rate}", file=sys.stderr)
        return 1
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app

    cfg = _load_cfg(args)
    lock = MutationLock(args.landing).acquire()
    try:
        app = create_app(
            args.landing,
            staging=args.staging,
            clinical=args.clinical,
            policy=config_mod.policy_from(cfg),
            rules=config_mod.rules_from(cfg),
            ui_dir=args.ui,
        )
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    finally:
        lock.release()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radingest",
        description="Radiology image batch transfer and ingest pipeline (desk scale).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, landing=False, inbox=False, staging=False, clinical=False):
        p.add_argument("--config", help="key/value config file")
        p.add_argument("--seed", type=int, default=0, help="simulation seed")
        if landing:
            p.add_argument("--landing", default="landing", help="research-side landing zone")
        if inbox:
            p.add_argument("--inbox", default="inbox", help="research-side transfer inbox")
        if staging:
            p.add_argument("--staging", default="staging", help="clinical-side staging root")
        if clinical:
            p.add_argument("--clinical", default="clinical_snapshot.tsv",
                           help="clinical snapshot TSV fixture")

    p = sub.add_parser("generate", help="generate and stage a synthetic batch")
    common(p, staging=True, clinical=True)
    p.add_argument("--studies", type=int, default=config_mod.DEFAULT_BATCH_STUDIES)
    p.add_argument("--modality", choices=("CR", "MR"), default="CR")
    p.add_argument("--batch-id", default=None)
    p.add_argument("--fault", action="append", default=[],
                   help="fault KIND[:COUNT], repeatable")
    p.add_argument("--prefix", default="ZZ-", help="prefix for PREFIX_ACCESSION faults")
    p.add_argument("--model-extraction", action="store_true",
                   help="model extraction timing on the virtual clock")
    p.add_argument("--start-time", default="2026-01-05T08:00:00")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("transfer", help="simulate transfer of a staged batch to the inbox")
    common(p, staging=True, inbox=True)
    p.add_argument("--batch", required=True)
    p.add_argument("--cap", type=float, default=None, help="bandwidth cap, bytes/second")
    p.add_argument("--start-time", default="2026-01-05T09:00:00")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("ingest", help="receive a batch and run the full pipeline")
    common(p, landing=True, inbox=True, clinical=True)
    p.add_argument("--batch", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("verify", help="re-verify a landed batch against its hash snapshot")
    common(p, landing=True)
    p.add_argument("--batch", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("query", help="query the metadata catalog")
    common(p, landing=True)
    for name in ("modality", "manufacturer", "parse-status", "link-status", "batch-id"):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), default=None)
    p.add_argument("--date-from", default=None)
    p.add_argument("--date-to", default=None)
    p.add_argument("--count", action="store_true", help="print only the match count")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("profile", help="write corpus statistics (or print one batch's report)")
    common(p, landing=True)
    p.add_argument("--batch", default=None)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("bench", help="measure header-scan throughput")
    common(p)
    p.add_argument("--files", type=int, default=5000)
    p.add_argument("--dir", default=None, help="reuse this directory for bench files")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--out", default=None, help="write the result as canonical JSON")
    p.add_argument("--min-rate", type=float, default=None,
                   help="fail (exit 1) below this files/second floor")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the operator API")
    common(p, landing=True, staging=True, clinical=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8400)
    p.add_argument("--ui", default=None, help="directory of built dashboard assets to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ClinicError, IngestError, SnapshotError, ManifestError, ConfigError, LockHeld) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
