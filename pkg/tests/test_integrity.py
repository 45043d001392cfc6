"""Hash snapshot creation and verification tests."""

import subprocess

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radingest import integrity
from radingest.integrity import (
    SnapshotError,
    hash_bytes,
    load_snapshot,
    parse_snapshot,
    snapshot_batch,
    verify_snapshot,
    write_snapshot,
)


class TestHashBytes:
    def test_empty_input_vector(self):
        # Verified against sha256sum.
        assert hash_bytes(b"") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"

    def test_abc_vector(self):
        assert hash_bytes(b"abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"

    def test_deterministic(self):
        blob = b"\x00\x01\x02" * 997
        assert hash_bytes(blob) == hash_bytes(blob)

    def test_matches_system_utility(self, tmp_path):
        p = tmp_path / "blob.bin"
        p.write_bytes(b"radiology" * 123)
        expected = subprocess.run(
            ["sha256sum", str(p)], capture_output=True, text=True, check=True
        ).stdout.split()[0]
        assert integrity.hash_file(p) == expected


def make_batch(root, files):
    for rel, content in files.items():
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(content)


class TestSnapshot:
    def test_empty_directory(self, tmp_path):
        snap = snapshot_batch(tmp_path, "B1")
        assert snap.entries == []

    def test_three_files_match_per_file_hashes(self, tmp_path):
        files = {"a.dcm": b"one", "sub/b.dcm": b"two", "sub/c.dcm": b"three"}
        make_batch(tmp_path, files)
        snap = snapshot_batch(tmp_path, "B1")
        assert [e.path for e in snap.entries] == ["a.dcm", "sub/b.dcm", "sub/c.dcm"]
        for entry in snap.entries:
            assert entry.digest == hash_bytes(files[entry.path])
            assert entry.size == len(files[entry.path])

    def test_identical_content_same_digest_distinct_paths(self, tmp_path):
        make_batch(tmp_path, {"x.dcm": b"same", "y.dcm": b"same"})
        snap = snapshot_batch(tmp_path, "B1")
        assert snap.entries[0].digest == snap.entries[1].digest
        assert snap.entries[0].path != snap.entries[1].path

    def test_excludes_pipeline_owned_files(self, tmp_path):
        make_batch(tmp_path, {
            "img.dcm": b"data",
            "studies.manifest.tsv": b"m",
            "files.manifest.tsv": b"m",
            "_integrity.snapshot.tsv": b"s",
            "_reports/q.json": b"{}",
        })
        snap = snapshot_batch(tmp_path, "B1")
        assert [e.path for e in snap.entries] == ["img.dcm"]

    def test_missing_root_raises(self, tmp_path):
        with pytest.raises(SnapshotError):
            snapshot_batch(tmp_path / "nope", "B1")

    def test_serialization_is_byte_stable(self, tmp_path):
        make_batch(tmp_path, {"a.dcm": b"alpha", "z/b.dcm": b"beta"})
        one = snapshot_batch(tmp_path, "B1", created_at="2026-01-01T00:00:00Z").to_tsv()
        two = snapshot_batch(tmp_path, "B1", created_at="2026-01-01T00:00:00Z").to_tsv()
        assert one == two
        assert one.startswith("#vision-snapshot v1\tB1\t2026-01-01T00:00:00Z\n")

    def test_tsv_round_trip(self, tmp_path):
        make_batch(tmp_path, {"a.dcm": b"alpha", "sub/b.dcm": b"beta"})
        snap = snapshot_batch(tmp_path, "B9", created_at="2026-02-02T10:00:00Z")
        write_snapshot(snap, tmp_path)
        assert load_snapshot(tmp_path) == snap

    def test_parse_rejects_garbage(self):
        with pytest.raises(SnapshotError):
            parse_snapshot("not a snapshot\n")
        with pytest.raises(SnapshotError):
            parse_snapshot("#vision-snapshot v1\tB\tT\nonly two\tcolumns\n")


class TestVerify:
    def test_unmodified_batch_ok(self, tmp_path):
        make_batch(tmp_path, {"a.dcm": b"alpha", "s/b.dcm": b"beta"})
        snap = snapshot_batch(tmp_path, "B1")
        report = verify_snapshot(snap, tmp_path)
        assert report.ok
        assert report.missing == report.added == report.mismatched == []

    def test_single_byte_flip_detected(self, tmp_path):
        make_batch(tmp_path, {"a.dcm": b"alpha", "s/b.dcm": b"beta"})
        snap = snapshot_batch(tmp_path, "B1")
        raw = bytearray((tmp_path / "s/b.dcm").read_bytes())
        raw[2] ^= 0xFF
        (tmp_path / "s/b.dcm").write_bytes(bytes(raw))
        report = verify_snapshot(snap, tmp_path)
        assert not report.ok
        assert report.mismatched == ["s/b.dcm"]
        assert report.missing == [] and report.added == []

    def test_deleted_file_reported_missing(self, tmp_path):
        make_batch(tmp_path, {"a.dcm": b"alpha", "b.dcm": b"beta"})
        snap = snapshot_batch(tmp_path, "B1")
        (tmp_path / "a.dcm").unlink()
        report = verify_snapshot(snap, tmp_path)
        assert report.missing == ["a.dcm"]
        assert report.added == [] and report.mismatched == []

    def test_added_file_reported(self, tmp_path):
        make_batch(tmp_path, {"a.dcm": b"alpha"})
        snap = snapshot_batch(tmp_path, "B1")
        (tmp_path / "new.dcm").write_bytes(b"sneaky")
        report = verify_snapshot(snap, tmp_path)
        assert report.added == ["new.dcm"]

    @given(
        contents=st.lists(st.binary(min_size=1, max_size=200), min_size=1, max_size=5),
        pick=st.data(),
    )
    @settings(max_examples=40, deadline=None)
    def test_any_single_byte_mutation_detected(self, tmp_path_factory, contents, pick):
        root = tmp_path_factory.mktemp("batch")
        files = {f"f{i}.dcm": blob for i, blob in enumerate(contents)}
        make_batch(root, files)
        snap = snapshot_batch(root, "B1")
        assert verify_snapshot(snap, root).ok

        target = pick.draw(st.sampled_from(sorted(files)))
        offset = pick.draw(st.integers(0, len(files[target]) - 1))
        raw = bytearray(files[target])
        raw[offset] ^= pick.draw(st.integers(1, 255))
        (root / target).write_bytes(bytes(raw))
        report = verify_snapshot(snap, root)
        assert not report.ok
        assert report.mismatched == [target]
