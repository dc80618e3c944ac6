"""Correlation benchmarking, DMOS and rater-consistency analyses."""

from __future__ import annotations

import csv
import enum
import math
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import IO, Any

import numpy as np
from scipy.stats import rankdata

from .core import CvqaWarning, InputError, ItemCatalog, Method, QualityScores, RatingSet
from .rdae import RDAEReport, Units, build_rd_groups, rdae

PERFECT_CLAMP = 1.0 - 1e-12


class CorrKind(enum.Enum):
    SRCC = "srcc"
    PLCC = "plcc"


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    n: int
    kind: CorrKind

    def __post_init__(self):
        if not abs(self.r) <= 1.0:
            raise InputError("BAD_CORRELATION", f"|r| > 1: {self.r}")
        if self.n < 3:
            raise InputError("TOO_FEW_SAMPLES", f"n = {self.n}")


@dataclass(frozen=True)
class FisherAggregate:
    r_agg: float
    ci_lo: float
    ci_hi: float
    n_groups: int = 0
    total_weight: float = 0.0


def _pair_arrays(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("DIMENSION_MISMATCH", f"lengths {x.shape} and {y.shape}")
    if x.size < 3:
        raise InputError("TOO_FEW_SAMPLES", f"n = {x.size}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise InputError("CONSTANT_INPUT", "correlation undefined for constant input")
    return x, y


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    r = float(xc @ yc / math.sqrt(float(xc @ xc) * float(yc @ yc)))
    return max(-1.0, min(1.0, r))


def plcc(x, y) -> CorrelationResult:
    x, y = _pair_arrays(x, y)
    return CorrelationResult(_pearson(x, y), x.size, CorrKind.PLCC)


def srcc(x, y) -> CorrelationResult:
    """Spearman correlation: Pearson on average ranks."""
    x, y = _pair_arrays(x, y)
    return CorrelationResult(_pearson(rankdata(x), rankdata(y)), x.size, CorrKind.SRCC)


def fisher_aggregate(results: Sequence[CorrelationResult], z_crit: float = 1.959963984540054) -> FisherAggregate:
    """Weighted mean of Fisher-z values with weights n - 3, mapped back by tanh."""
    if not results:
        raise InputError("EMPTY_INPUT", "no correlations to aggregate")
    z = []
    w = []
    for res in results:
        if res.n < 4:
            raise InputError("TOO_FEW_SAMPLES", f"group with n = {res.n} has no Fisher weight")
        r = res.r
        if abs(r) >= 1.0:
            warnings.warn("PERFECT_CORRELATION: |r| = 1 clamped before atanh", CvqaWarning, stacklevel=2)
            r = math.copysign(PERFECT_CLAMP, r)
        z.append(math.atanh(r))
        w.append(res.n - 3.0)
    z = np.asarray(z)
    w = np.asarray(w)
    zbar = float(np.sum(w * z) / np.sum(w))
    half = z_crit / math.sqrt(float(np.sum(w)))
    return FisherAggregate(math.tanh(zbar), math.tanh(zbar - half), math.tanh(zbar + half), len(results), float(np.sum(w)))


# --------------------------------------------------------------------------
# DMOS and consistency


def dmos(ratings_mos: QualityScores, catalog: ItemCatalog) -> QualityScores:
    """Reference MOS minus item MOS, per source."""
    items = catalog.by_id
    ref_mos: dict[str, float] = {}
    for it in catalog.items:
        if it.is_reference and it.item_id in ratings_mos.entries:
            ref_mos[it.source_id] = ratings_mos.q(it.item_id)
    out = {}
    missing = set()
    for item_id, e in ratings_mos.entries.items():
        if item_id not in items:
            raise InputError("UNKNOWN_ITEM", f"{item_id!r} not in catalog")
        src = items[item_id].source_id
        if src not in ref_mos:
            missing.add(src)
            continue
        out[item_id] = ref_mos[src] - e.q
    if missing:
        raise InputError("MISSING_REFERENCE", f"sources without a scored reference: {', '.join(sorted(missing))}")
    return QualityScores.from_values(out, Method.DMOS, scale_note="reference MOS minus item MOS")


@dataclass(frozen=True)
class SplitHalfResult:
    median_srcc: float
    iterations: int
    srccs: tuple[float, ...] = ()


def split_half_consistency(ratings: RatingSet, n_iter: int = 100, seed: int = 0) -> SplitHalfResult:
    """Median SRCC between MOS of two random disjoint halves of each item's raters."""
    by_item = ratings.by_item()
    if len(by_item) < 3:
        raise InputError("INSUFFICIENT_RATINGS", "need at least three rated items")
    scores = []
    for item_id, rs in by_item.items():
        if len(rs) < 2:
            raise InputError("INSUFFICIENT_RATINGS", f"item {item_id!r} has {len(rs)} rating(s)")
        scores.append(np.array([r.score for r in sorted(rs, key=lambda r: r.observer_id)], dtype=float))
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(n_iter):
        h1 = np.empty(len(scores))
        h2 = np.empty(len(scores))
        for k, s in enumerate(scores):
            perm = rng.permutation(s.size)
            cut = s.size // 2
            if s.size % 2 and rng.random() < 0.5:
                cut += 1
            h1[k] = s[perm[:cut]].mean()
            h2[k] = s[perm[cut:]].mean()
        try:
            values.append(srcc(h1, h2).r)
        except InputError:
            values.append(float("nan"))
    return SplitHalfResult(float(np.nanmedian(values)), n_iter, tuple(values))


@dataclass(frozen=True)
class IntraSubjectResult:
    per_observer: Mapping[str, float]
    median_srcc: float
    excluded: int = 0


def intra_subject_consistency(ratings: RatingSet, min_items: int = 3) -> IntraSubjectResult:
    """SRCC of each observer's scores against the overall MOS of the items they rated."""
    mos = ratings.mos()
    per = {}
    excluded = 0
    for obs, rs in ratings.by_observer().items():
        if len(rs) < min_items:
            excluded += 1
            continue
        own = [r.score for r in rs]
        ref = [mos[r.item_id] for r in rs]
        try:
            per[obs] = srcc(own, ref).r
        except InputError:
            excluded += 1
    median = float(np.median(list(per.values()))) if per else float("nan")
    return IntraSubjectResult(per, median, excluded)


# --------------------------------------------------------------------------
# Leaderboard


@dataclass(frozen=True)
class MetricTable:
    name: str
    scores: Mapping[str, float]
    full_reference: bool = False


@dataclass(frozen=True)
class BenchOptions:
    units: Units = Units.GIGABITS
    calibrate: bool = True
    # codec family -> codecs; each family gets its own pooled RDAE column
    codec_families: Mapping[str, Sequence[str]] = field(default_factory=dict)
    min_group_size: int = 4


@dataclass(frozen=True)
class MetricResult:
    name: str
    full_reference: bool
    rdae: RDAEReport | None
    rdae_by_family: Mapping[str, float | None]
    srcc_global: CorrelationResult | None = None
    plcc_global: CorrelationResult | None = None
    srcc_grouped: FisherAggregate | None = None
    plcc_grouped: FisherAggregate | None = None

    @property
    def srcc(self) -> float | None:
        if self.srcc_global is not None:
            return self.srcc_global.r
        return self.srcc_grouped.r_agg if self.srcc_grouped else None

    @property
    def plcc(self) -> float | None:
        if self.plcc_global is not None:
            return self.plcc_global.r
        return self.plcc_grouped.r_agg if self.plcc_grouped else None


@dataclass(frozen=True)
class BenchReport:
    per_metric: tuple[MetricResult, ...]
    subjective_basis: Method
    notes: tuple[str, ...] = ()

    def to_json_obj(self) -> dict[str, Any]:
        def corr(c):
            return None if c is None else {"r": c.r, "n": c.n}

        def agg(a):
            return None if a is None else {"r_agg": a.r_agg, "ci_lo": a.ci_lo, "ci_hi": a.ci_hi, "n_groups": a.n_groups}

        return {
            "subjective_basis": self.subjective_basis.value,
            "notes": list(self.notes),
            "metrics": [
                {
                    "metric": m.name,
                    "type": "FR" if m.full_reference else "NR",
                    "rdae": None if m.rdae is None else m.rdae.to_json_obj(),
                    "rdae_by_family": dict(m.rdae_by_family),
                    "srcc_global": corr(m.srcc_global),
                    "plcc_global": corr(m.plcc_global),
                    "srcc_grouped": agg(m.srcc_grouped),
                    "plcc_grouped": agg(m.plcc_grouped),
                }
                for m in self.per_metric
            ],
        }

    def write_csv(self, stream: IO[str]) -> None:
        families = sorted({f for m in self.per_metric for f in m.rdae_by_family})
        basis = self.subjective_basis.value
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["metric", "type", "rdae", *[f"rdae_{f}" for f in families], f"srcc_{basis}", f"plcc_{basis}"])

        def cell(v):
            return "" if v is None else repr(float(v))

        for m in self.per_metric:
            w.writerow([
                m.name,
                "FR" if m.full_reference else "NR",
                cell(None if m.rdae is None else m.rdae.rdae),
                *[cell(m.rdae_by_family.get(f)) for f in families],
                cell(m.srcc),
                cell(m.plcc),
            ])


def _grouped(metric, subj, catalog, item_ids, min_size):
    by_group: dict[tuple[str, str], list[str]] = {}
    items = catalog.by_id
    for i in item_ids:
        it = items[i]
        by_group.setdefault((it.source_id, it.preset), []).append(i)
    sr, pl = [], []
    for key in sorted(by_group):
        ids = by_group[key]
        if len(ids) < min_size:
            continue
        x = [metric[i] for i in ids]
        y = [subj[i] for i in ids]
        try:
            sr.append(srcc(x, y))
            pl.append(plcc(x, y))
        except InputError:
            continue
    if not sr:
        return None, None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CvqaWarning)
        return fisher_aggregate(sr), fisher_aggregate(pl)


def leaderboard(
    metric_tables: Sequence[MetricTable],
    subjective: QualityScores,
    catalog: ItemCatalog,
    options: BenchOptions | None = None,
) -> BenchReport:
    """Score every metric table by RDAE and correlation; best (lowest) RDAE first.

    MOS, DMOS and fused bases use one correlation over all items; BT and Elo
    scores are only comparable within a (source, preset) group, so those are
    correlated per group and combined with ``fisher_aggregate``. Full-reference
    metrics are correlated against reference-relative scores (negated DMOS)
    when the basis is MOS.
    """
    options = options or BenchOptions()
    if not metric_tables:
        raise InputError("EMPTY_INPUT", "no metric tables")
    basis = subjective.method
    subj = subjective.as_dict()
    if basis is Method.DMOS:
        # keep "higher is better" on both axes
        subj = {k: -v for k, v in subj.items()}
    items = catalog.by_id
    rel = None
    notes = ["Fisher weights n-3, 95% interval"]
    if basis is Method.DMOS:
        notes.append("DMOS basis negated so that higher is better")
    if basis is Method.MOS and any(t.full_reference for t in metric_tables):
        rel = {k: -v for k, v in dmos(subjective, catalog).as_dict().items()}
        notes.append("FR metrics correlated against negated DMOS")
    grouped = basis in (Method.BT, Method.ELO)

    results = []
    for table in metric_tables:
        met = dict(table.scores)
        try:
            groups = build_rd_groups(catalog, subj, met, calibrate=options.calibrate, strict=False)
        except InputError:
            groups = None
        report = rdae(groups, options.units) if groups is not None and len(groups) else None
        fams: dict[str, float | None] = {}
        for fam, codecs in sorted(options.codec_families.items()):
            sub = [g for g in (groups or ()) if g.key[1] in set(codecs)]
            fams[fam] = rdae(sub, options.units).rdae if sub else None

        target = rel if (table.full_reference and rel is not None) else subj
        ids = [i for i in target if i in met and i in items and not items[i].is_reference]
        sg = pg = sa = pa = None
        if grouped:
            sa, pa = _grouped(met, target, catalog, ids, options.min_group_size)
        elif len(ids) >= 3:
            x = [met[i] for i in ids]
            y = [target[i] for i in ids]
            try:
                sg, pg = srcc(x, y), plcc(x, y)
            except InputError:
                pass
        if report is None and sg is None and sa is None:
            raise InputError("EMPTY_INPUT", f"metric {table.name!r} covers no RD group and too few items")
        results.append(MetricResult(table.name, table.full_reference, report, fams, sg, pg, sa, pa))

    def order(m: MetricResult):
        return (m.rdae is None, m.rdae.rdae if m.rdae else 0.0, m.name)

    return BenchReport(tuple(sorted(results, key=order)), basis, tuple(notes))
