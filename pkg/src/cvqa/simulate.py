"""Synthetic observers with known latent quality, used as ground truth for the estimators."""

from __future__ import annotations

import itertools
import zlib
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from .bench import srcc
from .core import (
    SCORE_MAX,
    SCORE_MIN,
    ComparisonSet,
    InputError,
    Item,
    ItemCatalog,
    Outcome,
    Rating,
    RatingSet,
    TiePolicy,
    Vote,
    build_comparison_matrix,
)
from .fusion import FusionParams, fuse
from .ranker import DEFAULT_BETA, EloConfig, bt_fit, elo_bootstrap


@dataclass(frozen=True)
class SimConfig:
    n_items: int = 20
    q_true: tuple[float, ...] | None = None
    q_range: tuple[float, float] = (0.0, 4.0)
    beta: float = DEFAULT_BETA
    votes_per_pair: int = 30
    n_observers: int = 10
    observer_bias_sd: float = 0.0
    rating_noise_sd: float = 1.0
    # "normal" follows the stated observer model; "gumbel" matches the fusion likelihood
    rating_noise: str = "normal"
    a_true: float = 0.25
    b_true: float = -0.5
    rng_seed: int = 0
    # None: every observer rates every item
    ratings_per_observer: int | None = None
    # |perceived difference| below this margin is voted a tie
    tie_margin: float = 0.0
    # None: one source, every pair compared
    items_per_source: int | None = None
    bitrates_kbps: tuple[float, ...] = (1000.0, 2000.0, 4000.0)
    duration_s: float = 10.0

    def __post_init__(self):
        if self.n_items < 2:
            raise InputError("BAD_CONFIG", "n_items must be at least 2")
        if self.q_true is not None and len(self.q_true) != self.n_items:
            raise InputError("BAD_CONFIG", f"q_true has {len(self.q_true)} values for {self.n_items} items")
        if self.q_range[1] < self.q_range[0]:
            raise InputError("BAD_CONFIG", "q_range must be (lo, hi) with lo <= hi")
        if self.votes_per_pair < 1:
            raise InputError("BAD_CONFIG", "votes_per_pair must be at least 1")
        if self.n_observers < 1:
            raise InputError("BAD_CONFIG", "n_observers must be at least 1")
        if self.observer_bias_sd < 0 or self.rating_noise_sd < 0 or self.tie_margin < 0:
            raise InputError("BAD_CONFIG", "spreads and tie margin must be nonnegative")
        if self.rating_noise not in ("normal", "gumbel"):
            raise InputError("BAD_CONFIG", f"rating_noise must be normal or gumbel, got {self.rating_noise!r}")
        if not (self.a_true > 0 and self.beta > 0 and self.duration_s > 0):
            raise InputError("BAD_CONFIG", "a_true, beta and duration_s must be positive")
        if self.ratings_per_observer is not None and not 1 <= self.ratings_per_observer <= self.n_items:
            raise InputError("BAD_CONFIG", "ratings_per_observer must be in [1, n_items]")
        if self.items_per_source is not None and self.items_per_source < 2:
            raise InputError("BAD_CONFIG", "items_per_source must be at least 2")
        if not self.bitrates_kbps or any(b <= 0 for b in self.bitrates_kbps):
            raise InputError("BAD_CONFIG", "bitrates must be positive")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SimConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError("BAD_CONFIG", f"unknown keys: {', '.join(sorted(unknown))}")
        kw = dict(d)
        for key in ("q_true", "q_range", "bitrates_kbps"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


def stream(seed: int, name: str) -> np.random.Generator:
    """Named RNG stream; the same (seed, name) always yields the same draws."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


def item_ids(cfg: SimConfig) -> list[str]:
    width = max(3, len(str(cfg.n_items - 1)))
    return [f"v{i:0{width}d}" for i in range(cfg.n_items)]


def latent_quality(cfg: SimConfig) -> np.ndarray:
    if cfg.q_true is not None:
        return np.asarray(cfg.q_true, dtype=float)
    lo, hi = cfg.q_range
    return stream(cfg.rng_seed, "q_true").uniform(lo, hi, cfg.n_items)


def source_of(cfg: SimConfig, k: int) -> int:
    return 0 if cfg.items_per_source is None else k // cfg.items_per_source


def simulate_catalog(cfg: SimConfig) -> ItemCatalog:
    """Lay items out as sources x codecs x bitrates, higher quality at higher bitrate.

    Within a source, items are dealt into consecutive codec groups of
    ``len(bitrates_kbps)``; a short trailing group keeps the leading bitrates.
    """
    q = latent_quality(cfg)
    ids = item_ids(cfg)
    rng = stream(cfg.rng_seed, "catalog")
    by_source: dict[int, list[int]] = {}
    for k in range(cfg.n_items):
        by_source.setdefault(source_of(cfg, k), []).append(k)
    out: dict[int, Item] = {}
    nb = len(cfg.bitrates_kbps)
    for src, members in by_source.items():
        for g, start in enumerate(range(0, len(members), nb)):
            chunk = members[start:start + nb]
            ranked = sorted(chunk, key=lambda k: (q[k], k))
            for rate, k in zip(cfg.bitrates_kbps, ranked):
                actual = float(round(rate * (1.0 + rng.uniform(-0.05, 0.05)), 3))
                out[k] = Item(ids[k], f"src{src:02d}", f"codec{g:02d}", "medium", float(rate), actual, cfg.duration_s)
    return ItemCatalog(tuple(out[k] for k in range(cfg.n_items)))


def simulate_pairwise(cfg: SimConfig) -> ComparisonSet:
    """Logistic-difference votes for every within-source pair."""
    q = latent_quality(cfg)
    ids = item_ids(cfg)
    rng = stream(cfg.rng_seed, "pairwise")
    votes = []
    for i, j in itertools.combinations(range(cfg.n_items), 2):
        src = source_of(cfg, i)
        if src != source_of(cfg, j):
            continue
        group = f"src{src:02d}"
        diff = q[i] - q[j] + rng.logistic(0.0, cfg.beta, cfg.votes_per_pair)
        flip = rng.random(cfg.votes_per_pair) < 0.5
        observers = rng.integers(0, cfg.n_observers, cfg.votes_per_pair)
        for d, f, o in zip(diff, flip, observers):
            if abs(d) < cfg.tie_margin:
                outcome = Outcome.TIE
            else:
                outcome = Outcome.A_WINS if d > 0 else Outcome.B_WINS
            a, b = ids[i], ids[j]
            if f:
                a, b = b, a
                if outcome is not Outcome.TIE:
                    outcome = Outcome.B_WINS if outcome is Outcome.A_WINS else Outcome.A_WINS
            votes.append(Vote(group, a, b, outcome, f"u{int(o):04d}"))
    return ComparisonSet(tuple(votes))


def simulate_ratings(cfg: SimConfig) -> RatingSet:
    """Ratings ``round((q + bias + noise - b_true) / a_true)`` clamped to 0..20."""
    q = latent_quality(cfg)
    ids = item_ids(cfg)
    rng = stream(cfg.rng_seed, "ratings")
    bias = rng.normal(0.0, cfg.observer_bias_sd, cfg.n_observers) if cfg.observer_bias_sd > 0 else np.zeros(cfg.n_observers)
    out = []
    for k in range(cfg.n_observers):
        if cfg.ratings_per_observer is None:
            rated = np.arange(cfg.n_items)
        else:
            rated = np.sort(rng.choice(cfg.n_items, cfg.ratings_per_observer, replace=False))
        if cfg.rating_noise_sd == 0:
            noise = np.zeros(rated.size)
        elif cfg.rating_noise == "gumbel":
            noise = rng.gumbel(0.0, cfg.rating_noise_sd, rated.size)
        else:
            noise = rng.normal(0.0, cfg.rating_noise_sd, rated.size)
        raw = (q[rated] + bias[k] + noise - cfg.b_true) / cfg.a_true
        scores = np.clip(np.rint(raw), SCORE_MIN, SCORE_MAX).astype(int)
        out.extend(Rating(ids[i], f"u{k:04d}", int(s)) for i, s in zip(rated, scores))
    return RatingSet(tuple(out))


@dataclass(frozen=True)
class RecoveryReport:
    srcc_bt: float
    srcc_elo: float | None
    srcc_fused: float
    param_errors: dict[str, float | None] = field(default_factory=dict)
    converged: bool = True

    def to_json_obj(self) -> dict[str, Any]:
        return asdict(self)


def _rel(est: float, true: float) -> float | None:
    return None if true == 0 else abs(est - true) / abs(true)


def recovery_experiment(
    cfg: SimConfig,
    elo_cfg: EloConfig | None = None,
    run_elo: bool = True,
    fusion_init: FusionParams | None = None,
) -> RecoveryReport:
    """Simulate both data kinds, run every estimator and score it against the truth."""
    q = latent_quality(cfg)
    ids = item_ids(cfg)
    votes = simulate_pairwise(cfg)
    ratings = simulate_ratings(cfg)

    bt_vals, elo_vals = {}, {}
    for g in votes.groups:
        bt_vals.update(bt_fit(build_comparison_matrix(votes, g, TiePolicy.HALF_WIN), cfg.beta).as_dict())
        if run_elo:
            ecfg = elo_cfg or EloConfig(rng_seed=cfg.rng_seed)
            elo_vals.update(elo_bootstrap(votes, g, ecfg).as_dict())
    C = build_comparison_matrix(votes, None, TiePolicy.HALF_WIN)
    fused = fuse(C, ratings, cfg.beta, init=fusion_init)
    fq = fused.scores.as_dict()

    def score(vals):
        return srcc([vals[i] for i in ids], q).r

    p = fused.params
    b_anchored = cfg.b_true - float(np.mean(q))
    errors: dict[str, float | None] = {
        "a": _rel(p.a, cfg.a_true),
        "b": _rel(p.b, b_anchored),
        "c": _rel(p.c, cfg.rating_noise_sd / cfg.beta) if cfg.rating_noise == "gumbel" else None,
    }
    return RecoveryReport(
        srcc_bt=score(bt_vals) if len(votes.groups) == 1 else float("nan"),
        srcc_elo=(score(elo_vals) if len(votes.groups) == 1 else float("nan")) if run_elo else None,
        srcc_fused=score(fq),
        param_errors=errors,
        converged=fused.converged,
    )
