"""SRCC against the latent truth for BT, Elo and fusion as the vote budget grows.

    python3 scripts/recovery_sweep.py --seeds 10 --votes 2 5 10 30
"""

from __future__ import annotations

import argparse

import numpy as np

from cvqa.ranker import EloConfig
from cvqa.simulate import SimConfig, recovery_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--votes", type=int, nargs="+", default=[2, 5, 10, 30])
    ap.add_argument("--noise", type=float, default=1.0, help="rating noise sd on the latent scale")
    ap.add_argument("--elo-bootstrap", type=int, default=100)
    args = ap.parse_args()

    print(f"{'votes/pair':>10} {'bt':>8} {'elo':>8} {'fused':>8}")
    for v in args.votes:
        rows = []
        for seed in range(args.seeds):
            cfg = SimConfig(votes_per_pair=v, rating_noise_sd=args.noise, rng_seed=seed)
            rep = recovery_experiment(cfg, EloConfig(n_bootstrap=args.elo_bootstrap, rng_seed=seed))
            rows.append((rep.srcc_bt, rep.srcc_elo, rep.srcc_fused))
        m = np.mean(np.array(rows, dtype=float), axis=0)
        print(f"{v:>10} {m[0]:8.4f} {m[1]:8.4f} {m[2]:8.4f}")


if __name__ == "__main__":
    main()
