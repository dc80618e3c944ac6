"""Bradley-Terry maximum likelihood and bootstrapped online Elo."""

from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit, log_expit

from .core import (
    ComparisonMatrix,
    ComparisonSet,
    CvqaWarning,
    EstimationError,
    InputError,
    Method,
    Outcome,
    QualityScores,
    ScoreEntry,
)

DEFAULT_BETA = 1.0 / math.log(3.0)


@dataclass(frozen=True)
class BetaScale:
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not self.beta > 0:
            raise InputError("BAD_CONFIG", f"beta must be positive, got {self.beta}")

    def __float__(self) -> float:
        return float(self.beta)


def _beta(beta: BetaScale | float | None) -> float:
    if beta is None:
        return DEFAULT_BETA
    b = float(beta)
    if not b > 0:
        raise InputError("BAD_CONFIG", f"beta must be positive, got {b}")
    return b


def bt_cdf(delta_q, beta: BetaScale | float | None = None):
    """Probability that the item ahead by ``delta_q`` is preferred."""
    return expit(np.asarray(delta_q, dtype=float) / _beta(beta))[()]


# --------------------------------------------------------------------------
# Bradley-Terry


def bt_loglik(c: np.ndarray, q: np.ndarray, beta: float) -> float:
    """Sum of c_ij * log F(q_i - q_j) over ordered pairs (binomial constant dropped)."""
    d = (q[:, None] - q[None, :]) / beta
    mask = c > 0
    return float(np.sum(c[mask] * log_expit(d[mask])))


def bt_gradient(c: np.ndarray, q: np.ndarray, beta: float) -> np.ndarray:
    n_ij = c + c.T
    p = expit((q[:, None] - q[None, :]) / beta)
    return np.sum(c - n_ij * p, axis=1) / beta


def bt_hessian(c: np.ndarray, q: np.ndarray, beta: float) -> np.ndarray:
    n_ij = c + c.T
    p = expit((q[:, None] - q[None, :]) / beta)
    w = n_ij * p * (1.0 - p) / beta**2
    np.fill_diagonal(w, 0.0)
    return w - np.diag(w.sum(axis=1))


def bt_fit(
    m: ComparisonMatrix,
    beta: BetaScale | float | None = None,
    reg: float = 1e-4,
    tol: float = 1e-9,
    max_iter: int = 10_000,
) -> QualityScores:
    """Penalised BT maximum likelihood by damped Newton ascent, anchored to mean zero."""
    b = _beta(beta)
    if reg < 0:
        raise InputError("BAD_CONFIG", "reg must be nonnegative")
    notes = []
    if reg == 0 and not m.is_connected():
        msg = "DISCONNECTED_GRAPH: comparison graph is disconnected and reg = 0"
        warnings.warn(msg, CvqaWarning, stacklevel=2)
        notes.append(msg)

    c = np.asarray(m.c, dtype=float)
    q = np.zeros(m.n)

    def objective(x):
        return bt_loglik(c, x, b) - reg * float(x @ x)

    def gradient(x):
        return bt_gradient(c, x, b) - 2.0 * reg * x

    f = objective(q)
    g = gradient(q)
    it = 0
    while m.n and np.max(np.abs(g)) >= tol:
        if it >= max_iter:
            raise EstimationError("MAX_ITER", f"bt_fit did not converge in {max_iter} iterations")
        it += 1
        h = bt_hessian(c, q, b) - 2.0 * reg * np.eye(m.n)
        # the likelihood is flat along the all-ones direction, lstsq keeps the step orthogonal to it
        step = np.linalg.lstsq(-h, g, rcond=None)[0]
        if not np.all(np.isfinite(step)) or step @ g <= 0:
            step = g
        t = 1.0
        gmax = float(np.max(np.abs(g)))
        while True:
            q_new = q + t * step
            f_new = objective(q_new)
            if f_new >= f + 1e-4 * t * float(step @ g) or t < 1e-12:
                break
            # near the optimum the objective change drops below rounding; trust the gradient instead
            if abs(f_new - f) <= 1e-12 * max(1.0, abs(f)) and np.max(np.abs(gradient(q_new))) < gmax:
                break
            t *= 0.5
        q = q_new - q_new.mean()
        f = objective(q)
        g = gradient(q)

    q = q - q.mean() if m.n else q
    entries = {item: ScoreEntry(float(v)) for item, v in zip(m.item_ids, q)}
    return QualityScores(
        entries,
        Method.BT,
        scale_note=f"mean-zero; logistic scale beta={b!r}",
        meta={"beta": b, "reg": reg, "tie_policy": m.tie_policy.value, "iterations": it},
        warnings=tuple(notes),
    )


# --------------------------------------------------------------------------
# Elo


@dataclass(frozen=True)
class EloConfig:
    k_factor: float = 32.0
    initial_rating: float = 1000.0
    scale: float = 400.0
    n_bootstrap: int = 1000
    rng_seed: int = 0
    # draw votes with replacement instead of only permuting them
    resample: bool = False
    early_stop: bool = False
    ci_level: float = 0.95

    def __post_init__(self):
        if not self.k_factor > 0:
            raise InputError("BAD_CONFIG", "k_factor must be positive")
        if not self.scale > 0:
            raise InputError("BAD_CONFIG", "scale must be positive")
        if self.n_bootstrap < 1:
            raise InputError("BAD_CONFIG", "n_bootstrap must be at least 1")
        if not 0 < self.ci_level < 1:
            raise InputError("BAD_CONFIG", "ci_level must be in (0, 1)")


def _encode_group(votes: ComparisonSet, group_id: str, items: Sequence[str] | None = None):
    if items is None:
        group = votes.group_votes(group_id)
        items = sorted({x for v in group for x in (v.item_a, v.item_b)})
    else:
        group = [v for v in votes.votes if v.group_id == group_id]
        items = sorted(set(items))
        unknown = {x for v in group for x in (v.item_a, v.item_b)} - set(items)
        if unknown:
            raise InputError("UNKNOWN_ITEM", f"votes reference items outside the roster: {sorted(unknown)}")
    index = {x: i for i, x in enumerate(items)}
    a = [index[v.item_a] for v in group]
    b = [index[v.item_b] for v in group]
    s = [1.0 if v.outcome is Outcome.A_WINS else 0.0 if v.outcome is Outcome.B_WINS else 0.5 for v in group]
    return items, a, b, s


def _elo_pass(n_items, a, b, s, order, cfg: EloConfig) -> list[float]:
    r = [float(cfg.initial_rating)] * n_items
    k, scale = cfg.k_factor, cfg.scale
    for idx in order:
        i, j = a[idx], b[idx]
        e = 1.0 / (1.0 + 10.0 ** ((r[j] - r[i]) / scale))
        d = k * (s[idx] - e)
        r[i] += d
        r[j] -= d
    return r


def elo_run(
    votes: ComparisonSet,
    group_id: str,
    cfg: EloConfig | None = None,
    permutation: Sequence[int] | None = None,
    items: Sequence[str] | None = None,
) -> QualityScores:
    """One online Elo pass over the group's votes in ``permutation`` order (file order by default).

    ``items`` fixes the roster; unvoted items then keep the initial rating.
    """
    cfg = cfg or EloConfig()
    items, a, b, s = _encode_group(votes, group_id, items)
    if permutation is None:
        permutation = range(len(a))
    elif sorted(int(p) for p in permutation) != list(range(len(a))):
        raise InputError("BAD_PERMUTATION", "permutation must be a bijection over the group's votes")
    r = _elo_pass(len(items), a, b, s, [int(p) for p in permutation], cfg)
    return QualityScores(
        {x: ScoreEntry(v) for x, v in zip(items, r)},
        Method.ELO,
        scale_note=f"Elo points; initial={cfg.initial_rating}, scale={cfg.scale}",
        meta={"elo_config": asdict(cfg)},
    )


def bootstrap_rng(seed: int, iteration: int) -> np.random.Generator:
    """Independent stream for one bootstrap iteration, fixed by (seed, iteration)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(iteration,)))


def bootstrap_order(seed: int, iteration: int, n_votes: int, resample: bool = False) -> np.ndarray:
    rng = bootstrap_rng(seed, iteration)
    if resample:
        return rng.integers(0, n_votes, size=n_votes)
    return rng.permutation(n_votes)


def elo_bootstrap(votes: ComparisonSet, group_id: str, cfg: EloConfig | None = None) -> QualityScores:
    """Median Elo rating over bootstrap orderings with percentile intervals."""
    cfg = cfg or EloConfig()
    items, a, b, s = _encode_group(votes, group_id)
    tail = 100.0 * (1.0 - cfg.ci_level) / 2.0
    runs = []
    prev_bounds = None
    for it in range(cfg.n_bootstrap):
        order = bootstrap_order(cfg.rng_seed, it, len(a), cfg.resample).tolist()
        runs.append(_elo_pass(len(items), a, b, s, order, cfg))
        if cfg.early_stop and (it + 1) % 100 == 0:
            bounds = np.percentile(np.asarray(runs), [tail, 100.0 - tail], axis=0)
            if prev_bounds is not None and np.max(np.abs(bounds - prev_bounds)) < 1e-3:
                break
            prev_bounds = bounds
    ratings = np.asarray(runs)
    med = np.median(ratings, axis=0)
    lo, hi = np.percentile(ratings, [tail, 100.0 - tail], axis=0)
    entries = {
        x: ScoreEntry(float(m), float(min(l, m)), float(max(h, m))) for x, m, l, h in zip(items, med, lo, hi)
    }
    return QualityScores(
        entries,
        Method.ELO,
        scale_note=(
            f"median over {len(runs)} bootstrap runs; {100 * cfg.ci_level:g}% percentile interval; "
            "k_factor/initial_rating/scale are conventional defaults, not fixed by the source study"
        ),
        meta={"elo_config": asdict(cfg), "iterations": len(runs)},
    )
