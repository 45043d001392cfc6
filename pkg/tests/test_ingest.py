"""Batch state machine and pipeline integration tests."""

import json
import random

import pytest

from radingest.catalog import append_clinical_rows
from radingest.clinic import FaultKind, FaultSpec, assemble_batch, draw_study_specs
from radingest.dicomio import ParseStatus
from radingest.ingest import (
    TRANSITIONS,
    AcceptancePolicy,
    BatchRecord,
    BatchState,
    DuplicateBatchError,
    IllegalTransition,
    IngestManager,
    UnknownBatchError,
)

FIXED_NOW = "2026-01-05T08:00:00Z"


def make_workspace(tmp_path, n_studies=3, faults=(), seed=1, policy=None, batch_id=None):
    inbox = tmp_path / "inbox"
    landing = tmp_path / "landing"
    specs = draw_study_specs(n_studies, "CR", seed)
    batch, rows = assemble_batch(specs, list(faults), seed, inbox, batch_id=batch_id)
    mgr = IngestManager(landing, policy=policy, now_fn=lambda: FIXED_NOW)
    append_clinical_rows(mgr.clinical_path, rows)
    return mgr, inbox, batch


class TestReceive:
    def test_fresh_batch_received(self, tmp_path):
        mgr, inbox, batch = make_workspace(tmp_path)
        record = mgr.receive_batch(inbox, batch.batch_id)
        assert record.state is BatchState.RECEIVED
        assert mgr.batch_root(batch.batch_id).is_dir()
        assert not (inbox / batch.batch_id).exists()

    def test_duplicate_batch_id_refused(self, tmp_path):
        mgr, inbox, batch = make_workspace(tmp_path, batch_id="B1")
        mgr.receive_batch(inbox, "B1")
        specs = draw_study_specs(1, "CR", 2)
        assemble_batch(specs, [], 2, inbox, batch_id="B1")
        with pytest.raises(DuplicateBatchError, match="DUPLICATE_BATCH"):
            mgr.receive_batch(inbox, "B1")

    def test_missing_inbox_batch(self, tmp_path):
        mgr, inbox, _ = make_workspace(tmp_path)
        with pytest.raises(Exception, match="not found"):
            mgr.receive_batch(inbox, "NOPE")

    def test_unknown_batch_record(self, tmp_path):
        mgr, _, _ = make_workspace(tmp_path)
        with pytest.raises(UnknownBatchError):
            mgr.record("GHOST")


class TestPipeline:
    def test_fault_free_batch_verifies(self, tmp_path):
        mgr, inbox, batch = make_workspace(tmp_path)
        mgr.receive_batch(inbox, batch.batch_id)
        record = mgr.run_pipeline(batch.batch_id)
        assert record.state is BatchState.VERIFIED
        assert record.counts.files == record.counts.modern
        assert record.counts.corrupt == 0
        recon = mgr.load_reconciliation(batch.batch_id)
        assert recon.is_clean()
        quality = json.loads(mgr.quality_report_path(batch.batch_id).read_text())
        assert quality["error_list"] == []

    def test_absent_manifest_goes_unverified(self, tmp_path):
        mgr, inbox, batch = make_workspace(tmp_path, faults=[FaultSpec(FaultKind.OMIT_MANIFESTS)])
        mgr.receive_batch(inbox, batch.batch_id)
        record = mgr.run_pipeline(batch.batch_id)
        assert record.state is BatchState.UNVERIFIED
        recon = mgr.load_reconciliation(batch.batch_id)
        assert recon.missing_files == []
        assert not recon.manifest_present
        # Everything on disk is still cataloged.
        assert len(mgr.catalog.query({"batch_id": batch.batch_id})) == record.counts.files

    def test_dropped_file_rejects_with_path(self, tmp_path):
        mgr, inbox, batch = make_workspace(tmp_path, faults=[FaultSpec(FaultKind.DROP_FILE)])
        mgr.receive_batch(inbox, batch.batch_id)
        record = mgr.run_pipeline(batch.batch_id)
        assert record.state is BatchState.REJECTED
        dropped = next(f for f in batch.faults_applied if f.kind is FaultKind.DROP_FILE)
        assert dropped.details["paths"][0] in record.rejection_reason

    def test_corrupt_file_rejected_by_digest_policy(self, tmp_path):
        mgr, inbox, batch = make_workspace(tmp_path, faults=[FaultSpec(FaultKind.CORRUPT_FILE)])
        mgr.receive_batch(inbox, batch.batch_id)
        record = mgr.run_pipeline(batch.batch_id)
        assert record.state is BatchState.REJECTED
        assert "digest" in record.rejection_reason

    def test_empty_batch_rejected(self, tmp_path):
        inbox = tmp_path / "inbox"
        (inbox / "B0").mkdir(parents=True)
        mgr = IngestManager(tmp_path / "landing", now_fn=lambda: FIXED_NOW)
        mgr.receive_batch(inbox, "B0")
        record = mgr.run_pipeline("B0")
        assert record.state is BatchState.REJECTED
        assert "EMPTY_BATCH" in record.rejection_reason

    def test_legacy_batch_verifies_and_catalogs(self, tmp_path):
        mgr, inbox, batch = make_workspace(
            tmp_path, faults=[FaultSpec(FaultKind.STRIP_DICM_MAGIC, count=2)]
        )
        mgr.receive_batch(inbox, batch.batch_id)
        record = mgr.run_pipeline(batch.batch_id)
        assert record.state is BatchState.VERIFIED
        assert record.counts.legacy == 2
        legacy_entries = mgr.catalog.query(
            {"batch_id": batch.batch_id, "parse_status": "LEGACY"}
        )
        assert len(legacy_entries) == 2

    def test_truncated_file_cataloged_as_corrupt_under_lenient_policy(self, tmp_path):
        policy = AcceptancePolicy(max_corrupt_fraction=1.0, reject_on_digest_mismatch=False)
        mgr, inbox, batch = make_workspace(
            tmp_path, faults=[FaultSpec(FaultKind.TRUNCATE_FILE)], policy=policy
        )
        mgr.receive_batch(inbox, batch.batch_id)
        record = mgr.run_pipeline(batch.batch_id)
        assert record.state is BatchState.VERIFIED
        assert record.counts.corrupt == 1
        corrupt = mgr.catalog.query({"batch_id": batch.batch_id, "parse_status": "CORRUPT"})
        assert len(corrupt) == 1
        assert corrupt[0].digest

    def test_unexpected_files_not_cataloged(self, tmp_path):
        mgr, inbox, batch = make_workspace(
            tmp_path, faults=[FaultSpec(FaultKind.EXTRA_UNLISTED_FILE)]
        )
        mgr.receive_batch(inbox, batch.batch_id)
        record = mgr.run_pipeline(batch.batch_id)
        recon = mgr.load_reconciliation(batch.batch_id)
        assert len(recon.unexpected_files) == 1
        entries = mgr.catalog.query({"batch_id": batch.batch_id})
        assert len(entries) == record.counts.files - 1

    def test_manifest_accounting_identity(self, tmp_path):
        for faults in ([], [FaultSpec(FaultKind.DUPLICATE_FILE)], [FaultSpec(FaultKind.EXTRA_UNLISTED_FILE)]):
            workspace = tmp_path / f"w{len(faults)}{faults[0].kind.value if faults else 'none'}"
            mgr, inbox, batch = make_workspace(workspace, faults=faults, seed=11)
            mgr.receive_batch(inbox, batch.batch_id)
            record = mgr.run_pipeline(batch.batch_id)
            assert record.state is BatchState.VERIFIED
            from radingest.manifest import parse_manifests
            root = mgr.batch_root(batch.batch_id)
            pair = parse_manifests(
                (root / "studies.manifest.tsv").read_text(),
                (root / "files.manifest.tsv").read_text(),
            )
            recon = mgr.load_reconciliation(batch.batch_id)
            entries = mgr.catalog.query({"batch_id": batch.batch_id})
            corrupt = sum(1 for e in entries if e.parse_status is ParseStatus.CORRUPT)
            ok = len(entries) - corrupt
            assert pair.expected_total() == ok + corrupt + len(recon.missing_files)


class TestDuplicateDetection:
    def test_disjoint_batch_is_empty_report(self, tmp_path):
        mgr, inbox, batch = make_workspace(tmp_path)
        mgr.receive_batch(inbox, batch.batch_id)
        mgr.run_pipeline(batch.batch_id)
        report = json.loads((mgr.reports_dir(batch.batch_id) / "duplicates.json").read_text())
        assert report == {"dup_files": [], "dup_studies": [], "cross_batch": []}

    def test_reingest_under_new_id_flags_every_file(self, tmp_path):
        mgr, inbox, batch = make_workspace(tmp_path, seed=3, batch_id="B1")
        mgr.receive_batch(inbox, "B1")
        mgr.run_pipeline("B1")
        # Same studies, same seed: identical files under a new batch id.
        specs = draw_study_specs(3, "CR", 3)
        batch2, _ = assemble_batch(specs, [], 3, inbox, batch_id="B2")
        mgr.receive_batch(inbox, "B2")
        mgr.run_pipeline("B2")
        report = json.loads((mgr.reports_dir("B2") / "duplicates.json").read_text())
        assert len(report["dup_files"]) == mgr.record("B1").counts.files
        assert all(prior == "B1" for _, prior in report["cross_batch"])

    def test_duplicate_accession_fault_flagged(self, tmp_path):
        mgr, inbox, batch = make_workspace(
            tmp_path, faults=[FaultSpec(FaultKind.DUPLICATE_ACCESSION)], seed=8
        )
        mgr.receive_batch(inbox, batch.batch_id)
        mgr.run_pipeline(batch.batch_id)
        report = json.loads((mgr.reports_dir(batch.batch_id) / "duplicates.json").read_text())
        fault = next(f for f in batch.faults_applied if f.kind is FaultKind.DUPLICATE_ACCESSION)
        assert report["dup_studies"] == [fault.details["accession"]]
        recon = mgr.load_reconciliation(batch.batch_id)
        assert recon.duplicate_accessions == [fault.details["accession"]]


class TestOperatorActions:
    def finished(self, tmp_path, **kwargs):
        mgr, inbox, batch = make_workspace(tmp_path, **kwargs)
        mgr.receive_batch(inbox, batch.batch_id)
        mgr.run_pipeline(batch.batch_id)
        return mgr, batch.batch_id

    def test_confirm_verified_batch(self, tmp_path):
        mgr, batch_id = self.finished(tmp_path)
        event = mgr.confirm_receipt(batch_id)
        assert event.batch_id == batch_id
        assert mgr.record(batch_id).state is BatchState.CONFIRMED

    def test_confirm_is_idempotent(self, tmp_path):
        mgr, batch_id = self.finished(tmp_path)
        first = mgr.confirm_receipt(batch_id)
        second = mgr.confirm_receipt(batch_id)
        assert first == second

    def test_confirm_unprocessed_batch_refused(self, tmp_path):
        mgr, inbox, batch = make_workspace(tmp_path)
        mgr.receive_batch(inbox, batch.batch_id)
        with pytest.raises(IllegalTransition):
            mgr.confirm_receipt(batch.batch_id)
        assert mgr.record(batch.batch_id).state is BatchState.RECEIVED

    def test_confirm_rejected_batch_refused(self, tmp_path):
        mgr, batch_id = self.finished(tmp_path, faults=[FaultSpec(FaultKind.DROP_FILE)])
        assert mgr.record(batch_id).state is BatchState.REJECTED
        with pytest.raises(IllegalTransition):
            mgr.confirm_receipt(batch_id)

    def test_operator_reject_then_retransfer(self, tmp_path):
        mgr, batch_id = self.finished(tmp_path)
        mgr.reject_batch(batch_id, "wrong cohort sent")
        record = mgr.record(batch_id)
        assert record.state is BatchState.REJECTED
        assert record.rejection_reason == "wrong cohort sent"
        mgr.request_retransfer(batch_id)
        assert mgr.record(batch_id).retransfer_requested

    def test_retransfer_requires_rejected(self, tmp_path):
        mgr, batch_id = self.finished(tmp_path)
        with pytest.raises(IllegalTransition):
            mgr.request_retransfer(batch_id)


class TestStateMachineGuard:
    def test_legal_edges_only(self):
        rng = random.Random(0)
        states = list(BatchState)
        for _ in range(500):
            record = BatchRecord("B", rng.choice(states), FIXED_NOW)
            target = rng.choice(states)
            legal = target in TRANSITIONS[record.state]
            before = record.state
            if legal:
                record.advance(target)
                assert record.state is target
            else:
                with pytest.raises(IllegalTransition):
                    record.advance(target)
                assert record.state is before

    def test_terminal_states_have_no_exits(self):
        assert TRANSITIONS[BatchState.CONFIRMED] == frozenset()
        assert TRANSITIONS[BatchState.REJECTED] == frozenset()


class TestResumability:
    def run_full(self, tmp_path, seed):
        mgr, inbox, batch = make_workspace(tmp_path, seed=seed)
        mgr.receive_batch(inbox, batch.batch_id)
        record = mgr.run_pipeline(batch.batch_id)
        return mgr, record

    def test_stagewise_restart_converges(self, tmp_path):
        mgr_full, full_record = self.run_full(tmp_path / "full", seed=21)
        full_catalog = (mgr_full.landing / "catalog.ndjson").read_bytes()

        workspace = tmp_path / "staged"
        mgr, inbox, batch = make_workspace(workspace, seed=21)
        mgr.receive_batch(inbox, batch.batch_id)
        landing = mgr.landing
        # Restart the world before every stage.
        for _ in range(12):
            fresh = IngestManager(landing, now_fn=lambda: FIXED_NOW)
            record = fresh.run_single_stage(batch.batch_id)
            if record.state in (BatchState.VERIFIED, BatchState.UNVERIFIED, BatchState.REJECTED):
                break
        assert record.state == full_record.state
        assert (landing / "catalog.ndjson").read_bytes() == full_catalog
        assert record.to_dict() == full_record.to_dict()

    def test_rerunning_finished_pipeline_is_noop(self, tmp_path):
        mgr, record = self.run_full(tmp_path, seed=22)
        size = (mgr.landing / "catalog.ndjson").stat().st_size
        again = mgr.run_pipeline(record.batch_id)
        assert again.state == record.state
        assert (mgr.landing / "catalog.ndjson").stat().st_size == size
