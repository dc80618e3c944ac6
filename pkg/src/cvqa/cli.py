"""Command-line entry point: ``cvqa <subcommand> [options]``."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
import zlib
from collections.abc import Sequence
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from . import bench, core, diversity, fusion, ranker, rdae, simulate
from .core import CvqaError, InputError, Method, TiePolicy

SCHEMA_VERSION = "1.0"


def derive_seed(seed: int, name: str) -> int:
    """Expand the CLI seed into an independent 64-bit seed for one named consumer."""
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Output directory, effective config and input digests of one command."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []

    def read_text(self, path: str | Path) -> str:
        p = Path(path)
        if not p.is_file():
            raise InputError("MISSING_FILE", str(p))
        self.inputs[str(p)] = sha256(p)
        return p.read_text(encoding="utf-8")

    def read_bytes(self, path: str | Path) -> bytes:
        p = Path(path)
        if not p.is_file():
            raise InputError("MISSING_FILE", str(p))
        self.inputs[str(p)] = sha256(p)
        return p.read_bytes()

    def write(self, name: str, text: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        self.outputs.append(name)
        return p

    def write_json(self, name: str, obj: dict[str, Any]) -> Path:
        return self.write(name, json.dumps({"schema_version": SCHEMA_VERSION, **obj}, indent=2, allow_nan=False) + "\n")

    def finish(self) -> None:
        config = {k: v for k, v in sorted(vars(self.args).items()) if k != "func"}
        manifest_path = self.out / "manifest.json"
        if manifest_path.is_file():
            try:
                old = json.loads(manifest_path.read_text())
            except ValueError:
                old = {}
            if old.get("command") == self.args.command:
                for path, digest in old.get("inputs", {}).items():
                    if path in self.inputs and self.inputs[path] != digest:
                        print(f"warning: input {path} changed since the previous run", file=sys.stderr)
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "command": self.args.command,
            "config": config,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": sorted(self.outputs),
        }
        with open(manifest_path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(manifest, f, indent=2, default=str)
            f.write("\n")


def _csv(writer, obj) -> str:
    import io

    buf = io.StringIO()
    writer(obj, buf)
    return buf.getvalue()


def _finite(obj):
    """Replace NaN/inf floats by None so reports stay strict JSON."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _scores_obj(scores: core.QualityScores, group: str | None = None) -> dict[str, Any]:
    obj = scores.to_json_obj()
    if group is not None:
        obj = {"group_id": group, **obj}
    return obj


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def _load_votes(run: Run, args) -> core.ComparisonSet:
    votes = core.parse_votes(run.read_text(args.votes))
    if getattr(args, "items", None):
        catalog = core.parse_items(run.read_text(args.items))
        unknown = sorted({x for v in votes.votes for x in (v.item_a, v.item_b)} - set(catalog.by_id))
        if unknown:
            raise InputError("UNKNOWN_ITEM", f"votes reference items missing from catalog: {', '.join(unknown[:5])}")
    return votes


def _elo_config(args) -> ranker.EloConfig:
    return ranker.EloConfig(
        k_factor=args.k_factor,
        initial_rating=args.initial_rating,
        scale=args.elo_scale,
        n_bootstrap=args.n_bootstrap,
        rng_seed=derive_seed(args.seed, "elo"),
        resample=args.resample,
        early_stop=args.early_stop,
    )


# --------------------------------------------------------------------------
# subcommands


def cmd_rank(args) -> int:
    run = Run(args)
    votes = _load_votes(run, args)
    if not votes.votes:
        raise InputError("EMPTY_INPUT", "no votes")
    tie = TiePolicy(args.tie_policy)
    per_group: dict[str, core.QualityScores] = {}
    for g in votes.groups:
        if args.method == "bt":
            m = core.build_comparison_matrix(votes, g, tie)
            per_group[g] = ranker.bt_fit(m, args.beta, reg=args.reg, tol=args.tol)
        else:
            per_group[g] = ranker.elo_bootstrap(votes, g, _elo_config(args))
    for g, s in per_group.items():
        if args.format == "json":
            run.write_json(f"scores_{_safe(g)}.json", _scores_obj(s, g))
        else:
            run.write(f"scores_{_safe(g)}.csv", _csv(core.write_scores_csv, s))
    if args.format == "json":
        run.write_json("scores.json", {
            "method": args.method,
            "tie_policy": tie.value,
            "groups": [_scores_obj(s, g) for g, s in per_group.items()],
        })
    else:
        lines = ["group_id,item_id,q,ci_lo,ci_hi"]
        for g, s in per_group.items():
            for row in _csv(core.write_scores_csv, s).splitlines()[1:]:
                lines.append(f"{g},{row}")
        run.write("scores.csv", "\n".join(lines) + "\n")
    run.finish()
    return 0


def cmd_fuse(args) -> int:
    run = Run(args)
    votes = _load_votes(run, args)
    tie = TiePolicy(args.tie_policy)
    init = fusion.FusionParams(beta=args.beta, sigma=args.sigma)
    if not args.ratings:
        # no cross-group evidence: each group is ranked on its own, exactly as `rank --method bt`
        print("warning: no ratings given; fusing degenerates to per-group Bradley-Terry", file=sys.stderr)
        entries = {}
        for g in votes.groups:
            s = ranker.bt_fit(core.build_comparison_matrix(votes, g, tie), args.beta, reg=args.reg, tol=args.tol)
            entries.update(s.entries)
        scores = core.QualityScores(entries, Method.FUSED, "per-group mean-zero Bradley-Terry (no ratings)")
        result = fusion.FusedScores(scores, init, float("nan"), True, notes=("degenerate mode: no ratings",))
        obj = result.to_json_obj()
    else:
        ratings = core.parse_ratings(run.read_text(args.ratings))
        C = core.build_comparison_matrix(votes, None, tie) if votes.votes else core.ComparisonMatrix.empty()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", core.CvqaWarning)
            result = fusion.fuse(
                C, ratings, args.beta, init, tol=args.tol, max_iter=args.max_iter,
                use_prior=not args.no_prior, scale_by_n=args.prior_scale == "n",
            )
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        obj = result.to_json_obj()
    obj["tie_policy"] = tie.value
    if args.format == "json":
        run.write_json("fused.json", _finite(obj))
    else:
        run.write("fused.csv", _csv(core.write_scores_csv, result.scores))
    run.finish()
    return 0


def _load_subjective(run: Run, args, catalog: core.ItemCatalog) -> core.QualityScores:
    scores = core.read_scores(run.read_text(args.subjective))
    basis = getattr(args, "basis", None)
    if basis == "dmos":
        return bench.dmos(core.QualityScores(scores.entries, Method.MOS), catalog)
    if basis:
        return core.QualityScores(scores.entries, Method(basis), scores.scale_note, scores.meta)
    return scores


def cmd_rdae(args) -> int:
    run = Run(args)
    catalog = core.parse_items(run.read_text(args.items))
    subj = _load_subjective(run, args, catalog)
    metric = core.read_metric_table(run.read_text(args.metric))
    if subj.method is Method.DMOS:
        subj = core.QualityScores.from_values({k: -v for k, v in subj.as_dict().items()}, Method.DMOS)
    groups = rdae.build_rd_groups(catalog, subj, metric, calibrate=not args.no_calibrate, normalize=not args.no_normalize)
    report = rdae.rdae(groups, rdae.Units(args.units))
    if args.format == "json":
        run.write_json("rdae.json", report.to_json_obj())
    else:
        run.write("rdae.csv", _csv(lambda r, s: r.write_csv(s), report))
    run.finish()
    return 0


def cmd_bench(args) -> int:
    run = Run(args)
    catalog = core.parse_items(run.read_text(args.items))
    subj = _load_subjective(run, args, catalog)
    mdir = Path(args.metrics)
    if not mdir.is_dir():
        raise InputError("MISSING_FILE", str(mdir))
    fr = {x.strip() for x in (args.fr or "").split(",") if x.strip()}
    tables = [
        bench.MetricTable(p.stem, core.read_metric_table(run.read_text(p)), p.stem in fr)
        for p in sorted(mdir.glob("*.csv"))
    ]
    if not tables:
        raise InputError("EMPTY_INPUT", f"no metric tables in {mdir}")
    families = {}
    for spec in args.codec_family or []:
        name, _, codecs = spec.partition("=")
        families[name] = [c for c in codecs.split(",") if c]
    opts = bench.BenchOptions(rdae.Units(args.units), not args.no_calibrate, families)
    report = bench.leaderboard(tables, subj, catalog, opts)
    if args.format == "json":
        run.write_json("bench.json", report.to_json_obj())
    else:
        run.write("bench.csv", _csv(lambda r, s: r.write_csv(s), report))
    run.finish()
    return 0


def default_sim_config() -> dict[str, Any]:
    return json.loads(resources.files("cvqa").joinpath("data/sim_default.json").read_text())


def cmd_simulate(args) -> int:
    run = Run(args)
    cfg_dict = json.loads(run.read_text(args.config)) if args.config else default_sim_config()
    cfg_dict["rng_seed"] = derive_seed(args.seed, "simulate")
    cfg = simulate.SimConfig.from_dict(cfg_dict)
    q = simulate.latent_quality(cfg)
    ids = simulate.item_ids(cfg)
    run.write("items.csv", _csv(core.write_items, simulate.simulate_catalog(cfg)))
    run.write("votes.csv", _csv(core.write_votes, simulate.simulate_pairwise(cfg)))
    run.write("ratings.csv", _csv(core.write_ratings, simulate.simulate_ratings(cfg)))
    run.write("q_true.csv", _csv(core.write_metric_table, dict(zip(ids, q))))
    noise = simulate.stream(cfg.rng_seed, "metric_noise").normal(0.0, args.metric_noise, len(ids))
    run.write("metrics/truth.csv", _csv(core.write_metric_table, dict(zip(ids, q))))
    run.write("metrics/noisy.csv", _csv(core.write_metric_table, dict(zip(ids, q + noise))))
    elo_cfg = None
    if args.n_bootstrap > 0:
        elo_cfg = ranker.EloConfig(n_bootstrap=args.n_bootstrap, rng_seed=derive_seed(args.seed, "elo"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", core.CvqaWarning)
        rec = simulate.recovery_experiment(cfg, elo_cfg, run_elo=args.n_bootstrap > 0)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    run.write_json("recovery.json", _finite({"config": cfg.to_dict(), "recovery": rec.to_json_obj()}))
    run.finish()
    return 0


def cmd_diversity(args) -> int:
    run = Run(args)
    if bool(args.y4m) == bool(args.features):
        raise InputError("USAGE", "give exactly one of --y4m or --features")
    if args.y4m:
        ydir = Path(args.y4m)
        paths = sorted(ydir.glob("*.y4m")) if ydir.is_dir() else []
        if not paths:
            raise InputError("EMPTY_INPUT", f"no .y4m files in {ydir}")
        ids, feats = [], []
        for p in paths:
            fs = diversity.parse_y4m_luma(run.read_bytes(p))
            ids.append(p.stem)
            feats.append(diversity.compute_si_ti(fs, args.pooling))
        run.write("features.csv", _csv(lambda f, s: diversity.write_features(ids, f, s), feats))
        x = np.array([[f.si, f.ti] for f in feats])
        cols = ["si", "ti"]
    else:
        ids, x, cols = diversity.read_features(run.read_text(args.features))
    seed = derive_seed(args.seed, "kmeans")
    res = diversity.kmeans(x, args.k, seed=seed, max_iter=args.max_iter)
    picks = diversity.sample_per_cluster(res.assignments, args.per_cluster, derive_seed(args.seed, "sample"))
    run.write_json("clusters.json", {
        "k": args.k,
        "features": cols,
        "inertia": res.inertia,
        "iterations": res.n_iter,
        "assignments": {i: int(a) for i, a in zip(ids, res.assignments)},
        "centroids_standardized": res.centroids.tolist(),
        "candidates": {str(c): [ids[i] for i in idx] for c, idx in picks.items()},
    })
    run.finish()
    return 0


def cmd_consistency(args) -> int:
    run = Run(args)
    ratings = core.parse_ratings(run.read_text(args.ratings))
    split = bench.split_half_consistency(ratings, args.n_iter, derive_seed(args.seed, "split_half"))
    intra = bench.intra_subject_consistency(ratings)
    run.write_json("consistency.json", {
        "split_half": {"median_srcc": split.median_srcc, "iterations": split.iterations},
        "intra_subject": {
            "median_srcc": intra.median_srcc,
            "excluded": intra.excluded,
            "per_observer": dict(intra.per_observer),
        },
    })
    run.finish()
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed for every random stream (default 0)")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--format", choices=("json", "csv"), default="json", help="report format")

    p = argparse.ArgumentParser(prog="cvqa", description="Subjective video-quality scaling and metric benchmarking.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        sp = sub.add_parser(name, parents=[common], help=help, description=help)
        sp.set_defaults(func=func)
        return sp

    def ranking_flags(sp):
        sp.add_argument("--votes", required=True, help="votes CSV (group_id,item_a,item_b,outcome,observer_id)")
        sp.add_argument("--items", help="item catalog CSV used to validate item ids")
        sp.add_argument("--tie-policy", choices=[t.value for t in TiePolicy], default="half-win")
        sp.add_argument("--beta", type=float, default=ranker.DEFAULT_BETA, help="logistic scale (default 1/ln 3)")
        sp.add_argument("--reg", type=float, default=1e-4, help="ridge penalty of Bradley-Terry fits")

    sp = add("rank", cmd_rank, "Per-group Bradley-Terry or bootstrapped Elo scores from pairwise votes.")
    ranking_flags(sp)
    sp.add_argument("--method", choices=("bt", "elo"), default="bt")
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("--k-factor", type=float, default=32.0)
    sp.add_argument("--initial-rating", type=float, default=1000.0)
    sp.add_argument("--elo-scale", type=float, default=400.0)
    sp.add_argument("--n-bootstrap", type=int, default=1000)
    sp.add_argument("--resample", action="store_true", help="bootstrap votes with replacement instead of permuting")
    sp.add_argument("--early-stop", action="store_true", help="stop once interval bounds settle")

    sp = add("fuse", cmd_fuse, "Fuse pairwise votes and category ratings into one quality scale.")
    ranking_flags(sp)
    sp.add_argument("--ratings", help="ratings CSV (observer_id,item_id,score)")
    sp.add_argument("--sigma", type=float, default=2.0, help="prior spread")
    sp.add_argument("--prior-scale", choices=("n", "plain"), default="n", help="prior variance N*sigma^2 or sigma^2")
    sp.add_argument("--no-prior", action="store_true")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-iter", type=int, default=200)

    def bench_inputs(sp):
        sp.add_argument("--items", required=True, help="item catalog CSV")
        sp.add_argument("--subjective", required=True, help="subjective scores (JSON export or item_id,q CSV)")
        sp.add_argument("--basis", choices=[m.value for m in Method], help="declare or convert the subjective basis")
        sp.add_argument("--units", choices=[u.value for u in rdae.Units], default="gigabits")
        sp.add_argument("--no-calibrate", action="store_true", help="skip quantile alignment of metric scores")

    sp = add("rdae", cmd_rdae, "Rate-Distortion Alignment Error of one metric.")
    bench_inputs(sp)
    sp.add_argument("--metric", required=True, help="metric CSV (item_id,score)")
    sp.add_argument("--no-normalize", action="store_true", help="keep the raw subjective scale")

    sp = add("bench", cmd_bench, "Leaderboard of metric tables by RDAE and correlation.")
    bench_inputs(sp)
    sp.add_argument("--metrics", required=True, help="directory of metric CSVs; file stem is the metric name")
    sp.add_argument("--fr", help="comma-separated names of full-reference metrics")
    sp.add_argument("--codec-family", action="append", metavar="NAME=CODEC,...", help="extra RDAE column per family")

    sp = add("simulate", cmd_simulate, "Simulate observers and run the estimator recovery experiment.")
    sp.add_argument("--config", help="SimConfig JSON (default: bundled config)")
    sp.add_argument("--n-bootstrap", type=int, default=200, help="Elo bootstrap runs in the recovery report (0 skips Elo)")
    sp.add_argument("--metric-noise", type=float, default=0.5, help="noise sd of the synthetic 'noisy' metric")

    sp = add("diversity", cmd_diversity, "SI/TI features and k-means clusters for source selection.")
    sp.add_argument("--y4m", help="directory of .y4m files")
    sp.add_argument("--features", help="features CSV (video_id, feature columns...)")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--per-cluster", type=int, default=10)
    sp.add_argument("--pooling", choices=("max", "mean"), default="max")
    sp.add_argument("--max-iter", type=int, default=300)

    sp = add("consistency", cmd_consistency, "Split-half and intra-subject rating consistency.")
    sp.add_argument("--ratings", required=True)
    sp.add_argument("--n-iter", type=int, default=100)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CvqaError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"error: numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
