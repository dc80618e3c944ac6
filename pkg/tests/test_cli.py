import json
import shutil
from pathlib import Path

import pytest

from cvqa.bench import srcc
from cvqa.cli import build_parser, derive_seed, main

FIX = Path(__file__).parent / "fixtures"


def run(tmp, *argv):
    return main([*argv, "--out", str(tmp)])


def load(path):
    return json.loads(Path(path).read_text())


def q_of(obj):
    return {e["item_id"]: e["q"] for e in obj["entries"]}


# -- rank ---------------------------------------------------------------------


def test_rank_bt_matches_grid_golden(tmp_path):
    assert run(tmp_path, "rank", "--votes", str(FIX / "votes.csv"), "--reg", "0") == 0
    golden = load(FIX / "bt_golden.json")
    combined = load(tmp_path / "scores.json")
    assert combined["schema_version"] == "1.0" and combined["method"] == "bt"
    for g, want in golden["groups"].items():
        got = q_of(load(tmp_path / f"scores_{g}.json"))
        assert set(got) == set(want)
        for item, q in want.items():
            # golden sits on a 0.01 lattice and is rounded to it
            assert got[item] == pytest.approx(q, abs=0.02)


def test_rank_csv_format(tmp_path):
    assert run(tmp_path, "rank", "--votes", str(FIX / "votes.csv"), "--format", "csv") == 0
    lines = (tmp_path / "scores.csv").read_text().splitlines()
    assert lines[0] == "group_id,item_id,q,ci_lo,ci_hi" and len(lines) == 9


def test_rank_elo_seeded_runs_are_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        assert run(d, "rank", "--votes", str(FIX / "votes.csv"), "--method", "elo", "--n-bootstrap", "50", "--seed", "7") == 0
        outs.append([(d / n).read_bytes() for n in ("scores.json", "scores_srcA.json", "scores_srcB.json")])
    assert outs[0] == outs[1]
    d = tmp_path / "other"
    run(d, "rank", "--votes", str(FIX / "votes.csv"), "--method", "elo", "--n-bootstrap", "50", "--seed", "8")
    assert (d / "scores.json").read_bytes() != outs[0][0]


def test_missing_votes_is_a_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run(tmp_path, "rank")
    assert exc.value.code == 2
    assert "--votes" in capsys.readouterr().err


def test_unreadable_input_exits_2(tmp_path, capsys):
    assert run(tmp_path, "rank", "--votes", str(tmp_path / "nope.csv")) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("group_id,item_a,item_b,outcome,observer_id\ng,a,b,maybe,u\n")
    assert run(tmp_path, "rank", "--votes", str(bad)) == 2
    assert "row" in capsys.readouterr().err


def test_rank_validates_items_against_catalog(tmp_path):
    assert run(tmp_path, "rank", "--votes", str(FIX / "votes.csv"), "--items", str(FIX / "joint_items.csv")) == 2


# -- fuse ---------------------------------------------------------------------


def test_fuse_without_ratings_equals_rank_bt(tmp_path, capsys):
    assert run(tmp_path / "r", "rank", "--votes", str(FIX / "votes.csv")) == 0
    assert run(tmp_path / "f", "fuse", "--votes", str(FIX / "votes.csv")) == 0
    assert "no ratings" in capsys.readouterr().err
    fused = q_of(load(tmp_path / "f" / "fused.json"))
    for g in ("srcA", "srcB"):
        for item, q in q_of(load(tmp_path / "r" / f"scores_{g}.json")).items():
            assert fused[item] == pytest.approx(q, abs=1e-9)


def test_fuse_matches_simulation_golden(tmp_path):
    argv = ["fuse", "--votes", str(FIX / "joint_votes.csv"), "--ratings", str(FIX / "joint_ratings.csv")]
    assert run(tmp_path, *argv) == 0
    out = load(tmp_path / "fused.json")
    assert out["converged"] is True
    got, want = q_of(out), q_of(load(FIX / "fused_golden.json"))
    assert set(got) == set(want)
    for k in want:
        assert got[k] == pytest.approx(want[k], abs=1e-6)
    truth = {line.split(",")[0]: float(line.split(",")[1]) for line in (FIX / "joint_q_true.csv").read_text().splitlines()[1:]}
    ids = sorted(truth)
    assert srcc([got[i] for i in ids], [truth[i] for i in ids]).r >= 0.9


def test_fuse_non_convergence_exits_zero_with_warning(tmp_path, capsys):
    argv = ["fuse", "--votes", str(FIX / "joint_votes.csv"), "--ratings", str(FIX / "joint_ratings.csv")]
    assert run(tmp_path, *argv, "--max-iter", "1", "--tol", "1e-30") == 0
    assert load(tmp_path / "fused.json")["converged"] is False
    assert "MAX_ITER" in capsys.readouterr().err


# -- bench / rdae -------------------------------------------------------------


def bench_args(mdir):
    return ["bench", "--items", str(FIX / "joint_items.csv"), "--subjective", str(FIX / "joint_q_true.csv"),
            "--basis", "fused", "--metrics", str(mdir)]


def test_bench_ordering_and_identity(tmp_path):
    assert run(tmp_path, *bench_args(FIX / "metrics")) == 0
    rep = load(tmp_path / "bench.json")
    names = [m["metric"] for m in rep["metrics"]]
    assert names == load(FIX / "bench_order.json")["order"]
    exact = rep["metrics"][0]
    assert exact["rdae"]["rdae"] == pytest.approx(0.0, abs=1e-12)
    assert exact["srcc_global"]["r"] == pytest.approx(1.0, abs=1e-12)


def test_bench_empty_metrics_dir(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run(tmp_path / "o", *bench_args(empty)) == 2
    assert "EMPTY_INPUT" in capsys.readouterr().err


def test_rdae_command(tmp_path):
    argv = ["rdae", "--items", str(FIX / "joint_items.csv"), "--subjective", str(FIX / "joint_q_true.csv"),
            "--metric", str(FIX / "metrics" / "exact.csv")]
    assert run(tmp_path, *argv) == 0
    rep = load(tmp_path / "rdae.json")
    assert rep["rdae"] == pytest.approx(0.0, abs=1e-12)


# -- simulate / diversity / consistency ------------------------------------------


def test_simulate_default_recovers(tmp_path):
    assert run(tmp_path, "simulate", "--n-bootstrap", "0") == 0
    rec = load(tmp_path / "recovery.json")["recovery"]
    assert rec["srcc_fused"] >= 0.95
    for name in ("items.csv", "votes.csv", "ratings.csv", "q_true.csv", "metrics/truth.csv", "metrics/noisy.csv"):
        assert (tmp_path / name).is_file()


def test_diversity_on_two_videos(tmp_path):
    assert run(tmp_path, "diversity", "--y4m", str(FIX / "y4m"), "--k", "2", "--per-cluster", "1") == 0
    rows = (tmp_path / "features.csv").read_text().splitlines()
    assert rows[0].startswith("video_id") and len(rows) == 3
    clusters = load(tmp_path / "clusters.json")
    assert sorted(clusters["assignments"]) == ["busy", "flat"]
    assert len(set(clusters["assignments"].values())) == 2


def test_diversity_k_too_large(tmp_path, capsys):
    assert run(tmp_path, "diversity", "--y4m", str(FIX / "y4m"), "--k", "3") == 2
    assert "K_TOO_LARGE" in capsys.readouterr().err


def test_consistency_command(tmp_path):
    assert run(tmp_path, "consistency", "--ratings", str(FIX / "joint_ratings.csv"), "--n-iter", "20") == 0
    rep = load(tmp_path / "consistency.json")
    assert rep["split_half"]["iterations"] == 20
    assert -1.0 <= rep["intra_subject"]["median_srcc"] <= 1.0


# -- manifest and seeding ---------------------------------------------------------


def test_manifest_digests_and_mismatch_warning(tmp_path, capsys):
    votes = tmp_path / "votes.csv"
    shutil.copy(FIX / "votes.csv", votes)
    out = tmp_path / "out"
    assert run(out, "rank", "--votes", str(votes)) == 0
    man = load(out / "manifest.json")
    assert man["command"] == "rank" and man["config"]["seed"] == 0
    digest = man["inputs"][str(votes)]
    assert len(digest) == 64 and int(digest, 16) >= 0
    assert "scores.json" in man["outputs"]
    capsys.readouterr()

    assert run(out, "rank", "--votes", str(votes)) == 0
    assert "changed" not in capsys.readouterr().err
    votes.write_text(votes.read_text() + "srcA,srcA_v0,srcA_v1,a,extra\n")
    assert run(out, "rank", "--votes", str(votes)) == 0
    assert "changed since the previous run" in capsys.readouterr().err


def test_seed_streams_are_distinct_and_stable():
    assert derive_seed(0, "elo") == derive_seed(0, "elo")
    assert len({derive_seed(s, n) for s in (0, 1) for n in ("elo", "simulate", "kmeans")}) == 6


def test_every_subcommand_has_help():
    p = build_parser()
    for name in ("rank", "fuse", "rdae", "bench", "simulate", "diversity", "consistency"):
        with pytest.raises(SystemExit) as exc:
            p.parse_args([name, "--help"])
        assert exc.value.code == 0


def test_numeric_outputs_are_finite_json(tmp_path):
    run(tmp_path, "fuse", "--votes", str(FIX / "votes.csv"))
    text = (tmp_path / "fused.json").read_text()
    assert "NaN" not in text and "Infinity" not in text
    # the degenerate mode has no joint likelihood; NaN is stored as null
    assert load(tmp_path / "fused.json")["loglik"] is None
