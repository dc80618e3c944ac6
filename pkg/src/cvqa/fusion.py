"""Joint MAP estimation of latent quality from pairwise votes and category ratings.

Pairwise counts follow the logistic (Bradley-Terry) observer model; a rating
``m`` of item ``i`` is linked to the same scale through ``a*m + b ~
Gumbel(q_i, c*beta)``; a Gaussian prior on the spread of ``q`` regularises
the solution. All parameters are estimated jointly, with ``a`` and ``c`` in
log-space.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, gammaln, log_expit

from .core import (
    ComparisonMatrix,
    CvqaWarning,
    InputError,
    Method,
    QualityScores,
    RatingSet,
    ScoreEntry,
)
from .ranker import DEFAULT_BETA, _beta, bt_fit

EULER_GAMMA = 0.5772156649015329
LOG_C_BOUNDS = (math.log(1e-3), math.log(1e3))
NEWTON_MAX_DIM = 4000


@dataclass(frozen=True)
class FusionParams:
    a: float = 1.0
    b: float = 0.0
    c: float = 1.0
    beta: float = DEFAULT_BETA
    mu_q: float = 0.0
    sigma: float = 2.0

    def __post_init__(self):
        for name in ("a", "c", "sigma", "beta"):
            if not getattr(self, name) > 0:
                raise InputError("BAD_CONFIG", f"{name} must be positive")


@dataclass(frozen=True)
class FusedScores:
    scores: QualityScores
    params: FusionParams
    loglik: float
    converged: bool
    iterations: int = 0
    grad_norm: float = float("nan")
    notes: tuple[str, ...] = ()

    def to_json_obj(self) -> dict[str, Any]:
        p = self.params
        return {
            "method": Method.FUSED.value,
            "entries": [
                {"item_id": k, "q": e.q, "ci_lo": e.ci_lo, "ci_hi": e.ci_hi}
                for k, e in self.scores.entries.items()
            ],
            "params": {"a": p.a, "b": p.b, "c": p.c, "beta": p.beta, "sigma": p.sigma, "mu_q": p.mu_q},
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "notes": list(self.notes),
        }


# --------------------------------------------------------------------------
# Log-likelihood terms


def pairwise_loglik(C: ComparisonMatrix, q, beta=None, include_binomial: bool = False) -> float:
    """Log-probability of the win-count matrix under the logistic observer model."""
    q = np.asarray(q, dtype=float)
    if q.shape != (C.n,):
        raise InputError("DIMENSION_MISMATCH", f"q has shape {q.shape}, matrix has {C.n} items")
    b = _beta(beta)
    c = np.asarray(C.c)
    iu, ju = np.triu_indices(C.n, k=1)
    cij, cji = c[iu, ju], c[ju, iu]
    keep = (cij + cji) > 0
    iu, ju, cij, cji = iu[keep], ju[keep], cij[keep], cji[keep]
    d = (q[iu] - q[ju]) / b
    total = float(np.sum(cij * log_expit(d) + cji * log_expit(-d)))
    if include_binomial:
        n = cij + cji
        total += float(np.sum(gammaln(n + 1) - gammaln(cij + 1) - gammaln(cji + 1)))
    return total


def rating_loglik(M: RatingSet, q: Mapping[str, float], p: FusionParams) -> float:
    """Sum of Gumbel log-densities of the ratings, including the Jacobian ``a``."""
    total = 0.0
    s = p.c * p.beta
    const = math.log(p.a) - math.log(s)
    for r in M.scores:
        if r.item_id not in q:
            raise InputError("MISSING_QUALITY", f"rated item {r.item_id!r} has no quality value")
        z = (p.a * r.score + p.b - q[r.item_id]) / s
        total += const - z - math.exp(-z)
    return total


def log_prior(q, sigma: float = 2.0, scale_by_n: bool = True) -> float:
    """Gaussian prior on deviations from the current mean quality.

    With ``scale_by_n`` each factor has variance term ``N*sigma**2``;
    otherwise plain ``sigma**2``.
    """
    q = np.asarray(q, dtype=float)
    n = q.size
    if n < 1:
        raise InputError("EMPTY_INPUT", "prior needs at least one item")
    var = n * sigma**2 if scale_by_n else sigma**2
    dev = q - q.mean()
    return float(-0.5 * n * math.log(2.0 * math.pi * var) - np.sum(dev**2) / var)


# --------------------------------------------------------------------------
# Joint problem


@dataclass
class FusionProblem:
    """Objective, gradient and Hessian over ``theta = (q..., log a, b, log c)``."""

    item_ids: tuple[str, ...]
    pair_i: np.ndarray
    pair_j: np.ndarray
    c_ij: np.ndarray
    c_ji: np.ndarray
    cell_item: np.ndarray
    cell_score: np.ndarray
    beta: float = DEFAULT_BETA
    sigma: float = 2.0
    scale_by_n: bool = True
    use_prior: bool = True
    anchor: bool = False
    extra: dict = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        C: ComparisonMatrix,
        M: RatingSet,
        beta: float = DEFAULT_BETA,
        sigma: float = 2.0,
        scale_by_n: bool = True,
        use_prior: bool = True,
    ) -> FusionProblem:
        ids = tuple(sorted(set(C.item_ids) | set(M.item_ids)))
        index = {x: k for k, x in enumerate(ids)}
        remap = np.array([index[x] for x in C.item_ids], dtype=int)
        c = np.asarray(C.c)
        iu, ju = np.triu_indices(C.n, k=1)
        cij, cji = c[iu, ju], c[ju, iu]
        keep = (cij + cji) > 0
        cells = sorted(M.scores, key=lambda r: (index[r.item_id], r.observer_id))
        return cls(
            ids,
            remap[iu[keep]],
            remap[ju[keep]],
            cij[keep].astype(float),
            cji[keep].astype(float),
            np.array([index[r.item_id] for r in cells], dtype=int),
            np.array([r.score for r in cells], dtype=float),
            beta=beta,
            sigma=sigma,
            scale_by_n=scale_by_n,
            use_prior=use_prior,
        )

    @property
    def n(self) -> int:
        return len(self.item_ids)

    @property
    def dim(self) -> int:
        return self.n + 3

    @property
    def has_ratings(self) -> bool:
        return self.cell_score.size > 0

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta[: self.n], theta[self.n], theta[self.n + 1], theta[self.n + 2]

    def pack(self, q, a, b, c) -> np.ndarray:
        return np.concatenate([np.asarray(q, dtype=float), [math.log(a), b, math.log(c)]])

    # pieces ---------------------------------------------------------------

    def _pair_terms(self, q):
        d = (q[self.pair_i] - q[self.pair_j]) / self.beta
        return d, expit(d)

    def _cell_terms(self, q, la, b, lc):
        a, s = math.exp(la), math.exp(lc) * self.beta
        m = self.cell_score
        z = (a * m + b - q[self.cell_item]) / s
        ez = np.exp(-z)
        return a, s, m, z, ez

    def pairwise(self, theta) -> float:
        q = self.split(theta)[0]
        d, _ = self._pair_terms(q)
        return float(np.sum(self.c_ij * log_expit(d) + self.c_ji * log_expit(-d)))

    def rating(self, theta) -> float:
        q, la, b, lc = self.split(theta)
        if not self.has_ratings:
            return 0.0
        _, s, _, z, ez = self._cell_terms(q, la, b, lc)
        return float(np.sum(la - math.log(s) - z - ez))

    def prior(self, theta) -> float:
        if not self.use_prior or self.n == 0:
            return 0.0
        return log_prior(self.split(theta)[0], self.sigma, self.scale_by_n)

    def objective(self, theta) -> float:
        return self.pairwise(theta) + self.rating(theta) + self.prior(theta)

    def gradient(self, theta) -> np.ndarray:
        q, la, b, lc = self.split(theta)
        g = np.zeros(self.dim)
        gq = g[: self.n]
        if self.pair_i.size:
            _, p = self._pair_terms(q)
            w = (self.c_ij - (self.c_ij + self.c_ji) * p) / self.beta
            np.add.at(gq, self.pair_i, w)
            np.add.at(gq, self.pair_j, -w)
        if self.has_ratings:
            a, s, m, z, ez = self._cell_terms(q, la, b, lc)
            u = ez - 1.0
            np.add.at(gq, self.cell_item, -u / s)
            g[self.n] = np.sum(1.0 + u * a * m / s)
            g[self.n + 1] = np.sum(u / s)
            g[self.n + 2] = np.sum(-1.0 - u * z)
        if self.use_prior and self.n:
            gq += -2.0 * (q - q.mean()) / self._var()
        return g

    def hessian(self, theta) -> np.ndarray:
        q, la, b, lc = self.split(theta)
        n = self.n
        h = np.zeros((self.dim, self.dim))
        if self.pair_i.size:
            _, p = self._pair_terms(q)
            w = (self.c_ij + self.c_ji) * p * (1.0 - p) / self.beta**2
            np.add.at(h, (self.pair_i, self.pair_i), -w)
            np.add.at(h, (self.pair_j, self.pair_j), -w)
            np.add.at(h, (self.pair_i, self.pair_j), w)
            np.add.at(h, (self.pair_j, self.pair_i), w)
        if self.has_ratings:
            a, s, m, z, ez = self._cell_terms(q, la, b, lc)
            u, v = ez - 1.0, -ez
            zq, za, zb, zc = -1.0 / s, a * m / s, 1.0 / s, -z
            k = self.cell_item
            ia, ib, ic = n, n + 1, n + 2
            np.add.at(h, (k, k), v * zq * zq)
            qa = v * zq * za
            qb = v * zq * zb
            qc = v * zq * zc + u / s
            for col, vals in ((ia, qa), (ib, qb), (ic, qc)):
                np.add.at(h, (k, np.full_like(k, col)), vals)
                np.add.at(h, (np.full_like(k, col), k), vals)
            h[ia, ia] = np.sum(v * za * za + u * za)
            h[ib, ib] = np.sum(v * zb * zb)
            h[ic, ic] = np.sum(v * zc * zc + u * z)
            h[ia, ib] = h[ib, ia] = np.sum(v * za * zb)
            h[ia, ic] = h[ic, ia] = np.sum(v * za * zc - u * za)
            h[ib, ic] = h[ic, ib] = np.sum(v * zb * zc - u * zb)
        if self.use_prior and n:
            h[:n, :n] += -2.0 * (np.eye(n) - 1.0 / n) / self._var()
        return h

    def _var(self) -> float:
        return self.n * self.sigma**2 if self.scale_by_n else self.sigma**2

    # anchoring penalty: selects the mean-zero point of a shift-invariant optimum

    def penalised(self, theta) -> float:
        f = self.objective(theta)
        if self.anchor:
            f -= 0.5 * self.n * float(np.mean(self.split(theta)[0])) ** 2
        return f

    def penalised_gradient(self, theta) -> np.ndarray:
        g = self.gradient(theta)
        if self.anchor:
            g[: self.n] -= np.mean(self.split(theta)[0])
        return g

    def penalised_hessian(self, theta) -> np.ndarray:
        h = self.hessian(theta)
        if self.anchor:
            h[: self.n, : self.n] -= 1.0 / self.n
        return h


# --------------------------------------------------------------------------
# Optimisation


def _warm_start(C: ComparisonMatrix, M: RatingSet, prob: FusionProblem, init: FusionParams, fit_link: bool):
    index = {x: k for k, x in enumerate(prob.item_ids)}
    q = np.zeros(prob.n)
    have_q = np.zeros(prob.n, dtype=bool)
    if C.n and np.any(C.c > 0):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CvqaWarning)
            bt = bt_fit(C, prob.beta, reg=1e-4, tol=1e-6)
        for x, e in bt.entries.items():
            q[index[x]] = e.q
            have_q[index[x]] = True
    a, b, c = init.a, init.b, init.c
    mos = M.mos()
    both = [x for x in mos if have_q[index[x]]]
    if fit_link and len(both) >= 2:
        xm = np.array([mos[x] for x in both])
        yq = np.array([q[index[x]] for x in both])
        if np.ptp(xm) > 0:
            slope, icpt = np.polyfit(xm, yq, 1)
            if slope > 0:
                a, b = float(slope), float(icpt) + EULER_GAMMA * c * prob.beta
    for x, v in mos.items():
        k = index[x]
        if not have_q[k]:
            q[k] = a * v + b - EULER_GAMMA * c * prob.beta
    return q, a, b, c


def _active(prob: FusionProblem, x: np.ndarray, free: np.ndarray) -> np.ndarray:
    """Free mask with log c removed while it sits on a bound and the gradient pushes outward."""
    k = prob.n + 2
    if not free[k]:
        return free
    gk = prob.penalised_gradient(x)[k]
    lc = x[k]
    if (lc <= LOG_C_BOUNDS[0] + 1e-12 and gk < 0) or (lc >= LOG_C_BOUNDS[1] - 1e-12 and gk > 0):
        free = free.copy()
        free[k] = False
    return free


def _newton(prob: FusionProblem, x: np.ndarray, free_all: np.ndarray, tol: float, max_iter: int):
    f = prob.penalised(x)
    it = 0
    for it in range(1, max_iter + 1):
        free = _active(prob, x, free_all)
        g = prob.penalised_gradient(x)[free]
        if np.max(np.abs(g)) < tol:
            return x, it - 1
        h = prob.penalised_hessian(x)[np.ix_(free, free)]
        neg = -h
        lam = 0.0
        scale = max(1e-8, float(np.max(np.abs(np.diag(neg)))) if neg.size else 1.0)
        while True:
            try:
                L = np.linalg.cholesky(neg + lam * np.eye(neg.shape[0]))
                step = np.linalg.solve(L.T, np.linalg.solve(L, g))
                break
            except np.linalg.LinAlgError:
                lam = max(2.0 * lam, 1e-10 * scale)
        t = 1.0
        slope = float(g @ step)
        gmax = float(np.max(np.abs(g)))
        while True:
            x_new = x.copy()
            x_new[free] += t * step
            x_new[prob.n + 2] = np.clip(x_new[prob.n + 2], *LOG_C_BOUNDS)
            f_new = prob.penalised(x_new)
            if np.isfinite(f_new) and f_new >= f + 1e-4 * t * slope:
                break
            # objective change below roundoff: judge the step by the gradient instead
            if (
                np.isfinite(f_new)
                and abs(f_new - f) <= 1e-12 * max(1.0, abs(f))
                and np.max(np.abs(prob.penalised_gradient(x_new)[free])) < gmax
            ):
                break
            t *= 0.5
            if t < 1e-14:
                return x, it
        x, f = x_new, f_new
    return x, max_iter


def fuse(
    C: ComparisonMatrix,
    M: RatingSet,
    beta=None,
    init: FusionParams | None = None,
    tol: float = 1e-8,
    max_iter: int = 200,
    fit_link: bool = True,
    use_prior: bool = True,
    scale_by_n: bool = True,
) -> FusedScores:
    """Maximise pairwise + rating + prior log-density jointly over (q, a, b, c).

    ``fit_link=False`` freezes (a, b, c) at ``init``. The result is shifted to
    mean zero whenever the objective is invariant to that shift. ``max_iter``
    caps each of the L-BFGS and Newton phases.
    """
    b_ = _beta(beta if beta is not None else (init.beta if init else None))
    init = replace(init or FusionParams(), beta=b_)
    prob = FusionProblem.build(C, M, b_, init.sigma, scale_by_n, use_prior)
    if prob.n == 0:
        raise InputError("EMPTY_INPUT", "no items in comparisons or ratings")
    link_free = fit_link and prob.has_ratings
    prob.anchor = link_free or not prob.has_ratings

    q0, a0, b0, c0 = _warm_start(C, M, prob, init, fit_link)
    x = prob.pack(q0, a0, b0, c0)
    free = np.ones(prob.dim, dtype=bool)
    if not link_free:
        free[prob.n:] = False

    def negf(y):
        z = x.copy()
        z[free] = y
        val = prob.penalised(z)
        return -val if np.isfinite(val) else 1e300

    def negg(y):
        z = x.copy()
        z[free] = y
        return -prob.penalised_gradient(z)[free]

    bounds = [(None, None)] * int(free.sum())
    if link_free:
        bounds[-1] = LOG_C_BOUNDS
    res = minimize(
        negf, x[free], jac=negg, method="L-BFGS-B", bounds=bounds,
        options={"maxiter": max_iter * 50, "ftol": 1e-15, "gtol": tol * 1e-2, "maxcor": 30},
    )
    x[free] = res.x
    iterations = int(res.nit)
    notes = []
    if int(free.sum()) <= NEWTON_MAX_DIM:
        x, nit = _newton(prob, x, free, tol, max_iter)
        iterations += nit
    grad = prob.penalised_gradient(x)[_active(prob, x, free)]
    gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
    converged = bool(gnorm < tol)

    q, la, b_hat, lc = prob.split(x)
    q = q.copy()
    if prob.anchor:
        shift = float(q.mean())
        q -= shift
        if link_free:
            b_hat -= shift
        x = prob.pack(q, math.exp(la), b_hat, math.exp(lc))
    if not link_free:
        x[prob.n:] = prob.pack([], init.a, init.b, init.c)
    q, la, b_hat, lc = prob.split(x)
    loglik = prob.objective(x)
    if not converged:
        msg = f"MAX_ITER: fusion stopped with gradient max-norm {gnorm:.3g} >= tol {tol:g}"
        warnings.warn(msg, CvqaWarning, stacklevel=2)
        notes.append(msg)
    if math.exp(lc) <= math.exp(LOG_C_BOUNDS[0]) * (1 + 1e-9):
        notes.append("rating noise scale c hit its lower bound")
    notes.append("rating density uses Jacobian a/(c*beta)")

    params = FusionParams(
        a=math.exp(la), b=float(b_hat), c=math.exp(lc), beta=b_, mu_q=float(q.mean()), sigma=init.sigma
    )
    scores = QualityScores(
        {x_id: ScoreEntry(float(v)) for x_id, v in zip(prob.item_ids, q)},
        Method.FUSED,
        scale_note=(
            f"logistic scale beta={b_!r}; mean-zero" if prob.anchor else f"logistic scale beta={b_!r}; link-anchored"
        ),
        meta={"sigma": init.sigma, "prior_scale": "N*sigma^2" if scale_by_n else "sigma^2"},
        warnings=tuple(n for n in notes if n.startswith("MAX_ITER")),
    )
    return FusedScores(scores, params, loglik, converged, iterations, gnorm, tuple(notes))
