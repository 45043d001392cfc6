"""CLI command tests (in-process via main())."""

import json

import pytest

from radingest.cli import main


def run(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def generate(tmp_path, capsys, name="w", seed=7, extra=()):
    staging = tmp_path / name / "staging"
    clinical = tmp_path / name / "clinical_snapshot.tsv"
    args = ["generate", "--staging", str(staging), "--clinical", str(clinical),
            "--studies", "3", "--modality", "CR", "--seed", str(seed),
            "--batch-id", "B1", *extra]
    code, out, err = run(args, capsys)
    assert code == 0, err
    return staging, clinical


class TestGenerate:
    def test_same_seed_identical_trees(self, tmp_path, capsys):
        s1, _ = generate(tmp_path, capsys, "one", seed=7)
        s2, _ = generate(tmp_path, capsys, "two", seed=7)
        assert tree_bytes(s1 / "B1") == tree_bytes(s2 / "B1")

    def test_different_seed_differs(self, tmp_path, capsys):
        s1, _ = generate(tmp_path, capsys, "one", seed=7)
        s2, _ = generate(tmp_path, capsys, "two", seed=8)
        assert tree_bytes(s1 / "B1") != tree_bytes(s2 / "B1")

    def test_unknown_fault_is_operational_error(self, tmp_path, capsys):
        code, _, err = run(
            ["generate", "--staging", str(tmp_path / "s"), "--clinical",
             str(tmp_path / "c.tsv"), "--fault", "NONSENSE"],
            capsys,
        )
        assert code == 1
        assert "unknown fault kind" in err

    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err.lower()


class TestPipelineCommands:
    def full_flow(self, tmp_path, capsys):
        staging, clinical = generate(tmp_path, capsys)
        inbox = tmp_path / "w" / "inbox"
        landing = tmp_path / "w" / "landing"
        code, out, _ = run(
            ["transfer", "--staging", str(staging), "--inbox", str(inbox), "--batch", "B1"],
            capsys,
        )
        assert code == 0
        result = json.loads(out)
        assert result["bytes"] > 0
        assert result["virtual_seconds"] > 0
        code, out, _ = run(
            ["ingest", "--inbox", str(inbox), "--landing", str(landing),
             "--clinical", str(clinical), "--batch", "B1"],
            capsys,
        )
        assert code == 0
        assert "VERIFIED" in out
        return landing

    def test_full_flow_and_verify(self, tmp_path, capsys):
        landing = self.full_flow(tmp_path, capsys)
        code, out, _ = run(["verify", "--landing", str(landing), "--batch", "B1"], capsys)
        assert code == 0
        assert "integrity ok" in out

    def test_verify_detects_flip(self, tmp_path, capsys):
        landing = self.full_flow(tmp_path, capsys)
        victim = next(p for p in sorted((landing / "B1").rglob("*.dcm")))
        raw = bytearray(victim.read_bytes())
        raw[10] ^= 0x01
        victim.write_bytes(bytes(raw))
        code, _, err = run(["verify", "--landing", str(landing), "--batch", "B1"], capsys)
        assert code == 1
        assert victim.relative_to(landing / "B1").as_posix() in err

    def test_query_and_profile(self, tmp_path, capsys):
        landing = self.full_flow(tmp_path, capsys)
        code, out, _ = run(
            ["query", "--landing", str(landing), "--modality", "CR", "--count"], capsys
        )
        assert code == 0
        count = int(out.strip())
        assert count > 0
        code, out, _ = run(["query", "--landing", str(landing)], capsys)
        lines = [json.loads(line) for line in out.splitlines()]
        assert len(lines) == count
        code, out, _ = run(["profile", "--landing", str(landing)], capsys)
        assert code == 0
        assert (landing / "_reports" / "corpus.json").exists()
        code, out, _ = run(["profile", "--landing", str(landing), "--batch", "B1"], capsys)
        assert code == 0
        assert json.loads(out)["batch_id"] == "B1"


class TestBench:
    def test_bench_reports_rate(self, tmp_path, capsys):
        code, out, _ = run(
            ["bench", "--files", "300", "--dir", str(tmp_path / "bench")], capsys
        )
        assert code == 0
        result = json.loads(out)
        assert result["files"] == 300
        assert result["files_per_second"] > 0

    def test_bench_min_rate_gate(self, tmp_path, capsys):
        code, _, err = run(
            ["bench", "--files", "50", "--dir", str(tmp_path / "bench"),
             "--min-rate", "1e12"],
            capsys,
        )
        assert code == 1
        assert "below required" in err
