"""Regenerate the checked-in CLI fixtures under tests/fixtures.

The Bradley-Terry golden comes from the brute-force grid oracle in tests/oracles.py,
not from the estimator. The fused golden and the metric tables come from a seeded
simulation with known latent qualities.

    python3 scripts/make_fixtures.py
"""

from __future__ import annotations

import io
import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from oracles import bt_grid_argmax, random_bt_instance, strongly_connected  # noqa: E402

from cvqa import core, diversity, fusion, simulate  # noqa: E402
from cvqa.ranker import DEFAULT_BETA  # noqa: E402

OUT = ROOT / "tests" / "fixtures"


def text(writer, obj) -> str:
    buf = io.StringIO()
    writer(obj, buf)
    return buf.getvalue()


def bt_fixture(rng) -> None:
    votes, golden = [], {}
    for g in ("srcA", "srcB"):
        while True:
            c = random_bt_instance(rng, n=4, max_votes=12)
            if strongly_connected(c):
                q, boundary = bt_grid_argmax(c, DEFAULT_BETA)
                if not boundary:
                    break
        ids = [f"{g}_v{k}" for k in range(4)]
        for i in range(4):
            for j in range(4):
                for v in range(int(c[i, j])):
                    votes.append(core.Vote(g, ids[i], ids[j], core.Outcome.A_WINS, f"u{v}"))
        golden[g] = {ids[k]: round(float(q[k]), 2) for k in range(4)}
    rng.shuffle(votes)
    (OUT / "votes.csv").write_text(text(core.write_votes, core.ComparisonSet(tuple(votes))))
    (OUT / "bt_golden.json").write_text(json.dumps({"grid_step": 0.01, "groups": golden}, indent=2) + "\n")


def joint_fixture() -> None:
    cfg = simulate.SimConfig(n_items=12, items_per_source=None, votes_per_pair=10, n_observers=8, rng_seed=2024)
    votes = simulate.simulate_pairwise(cfg)
    ratings = simulate.simulate_ratings(cfg)
    ids = simulate.item_ids(cfg)
    q_true = simulate.latent_quality(cfg)
    (OUT / "joint_votes.csv").write_text(text(core.write_votes, votes))
    (OUT / "joint_ratings.csv").write_text(text(core.write_ratings, ratings))
    (OUT / "joint_items.csv").write_text(text(core.write_items, simulate.simulate_catalog(cfg)))
    (OUT / "joint_q_true.csv").write_text(text(core.write_metric_table, dict(zip(ids, q_true))))
    c = core.build_comparison_matrix(votes, None, core.TiePolicy.HALF_WIN)
    res = fusion.fuse(c, ratings, DEFAULT_BETA)
    (OUT / "fused_golden.json").write_text(json.dumps(res.to_json_obj(), indent=2) + "\n")

    mdir = OUT / "metrics"
    mdir.mkdir(exist_ok=True)
    noise = np.random.default_rng(7).normal(0.0, 0.8, len(ids))
    (mdir / "exact.csv").write_text(text(core.write_metric_table, dict(zip(ids, q_true))))
    (mdir / "jittered.csv").write_text(text(core.write_metric_table, dict(zip(ids, q_true + noise))))
    # the exact metric reproduces the subjective truth, so it cannot rank below a noisy copy
    (OUT / "bench_order.json").write_text(json.dumps({"order": ["exact", "jittered"]}) + "\n")


def y4m_fixture(rng) -> None:
    ydir = OUT / "y4m"
    ydir.mkdir(exist_ok=True)
    flat = [np.full((16, 16), 90, np.uint8)] * 3
    busy = [rng.integers(0, 256, (16, 16), dtype=np.uint8) for _ in range(3)]
    (ydir / "flat.y4m").write_bytes(diversity.write_y4m(flat))
    (ydir / "busy.y4m").write_bytes(diversity.write_y4m(busy))


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20241015)
    bt_fixture(rng)
    joint_fixture()
    y4m_fixture(rng)
    print(f"fixtures written to {OUT}")


if __name__ == "__main__":
    main()
