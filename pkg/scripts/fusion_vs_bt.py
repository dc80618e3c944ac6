"""How often fusing ratings with scarce votes beats BT alone, under two rating-noise shapes.

The fusion likelihood assumes Gumbel rating noise; the Normal row shows the cost of
that mismatch.

    python3 scripts/fusion_vs_bt.py --seeds 20
"""

from __future__ import annotations

import argparse

from cvqa.simulate import SimConfig, recovery_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--votes", type=int, default=5)
    ap.add_argument("--noise", type=float, default=0.5)
    args = ap.parse_args()

    for shape in ("gumbel", "normal"):
        wins, gain = 0, 0.0
        for seed in range(args.seeds):
            cfg = SimConfig(votes_per_pair=args.votes, rating_noise_sd=args.noise, rating_noise=shape, rng_seed=seed)
            rep = recovery_experiment(cfg, run_elo=False)
            wins += rep.srcc_fused >= rep.srcc_bt
            gain += rep.srcc_fused - rep.srcc_bt
        print(f"{shape:>7}: fused >= bt in {wins}/{args.seeds} seeds, mean SRCC gain {gain / args.seeds:+.4f}")


if __name__ == "__main__":
    main()
