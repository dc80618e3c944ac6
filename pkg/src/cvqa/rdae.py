"""Rate-Distortion Alignment Error between subjective and metric RD curves.

Per RD group the subjective curve ``s(b)`` and the metric curve ``s_hat(b)``
are linear interpolants over bitrate. The under-prediction cost integrates
``s - s_hat`` where the metric rates below the viewers, the over-compression
penalty integrates ``s_hat - s`` where it rates above them. Both are averaged
over groups and summed.
"""

from __future__ import annotations

import csv
import enum
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import IO, Any

import numpy as np

from .core import InputError, ItemCatalog, QualityScores

MIN_POINTS = 3
KBIT_PER_GBIT = 1e6


class Units(enum.Enum):
    QUALITY_KBPS = "quality_kbps"
    GIGABITS = "gigabits"


@dataclass(frozen=True)
class CalibrationMap:
    """Nondecreasing piecewise-linear map, clamped outside its knots."""

    knots_x: np.ndarray
    knots_y: np.ndarray

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.knots_x, self.knots_y)[()]


def _plotting_positions(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def align_scales(metric_values: Sequence[float], subjective_values: Sequence[float]) -> CalibrationMap:
    """Monotone quantile map sending metric quantiles onto subjective quantiles.

    Sorted metric values at probabilities ``(k + 0.5)/n`` are matched to the
    subjective quantile function at the same probabilities. Tied metric values
    share the average of their targets.
    """
    xm = np.sort(np.asarray(metric_values, dtype=float))
    ys = np.sort(np.asarray(subjective_values, dtype=float))
    if np.unique(xm).size < 2 or np.unique(ys).size < 2:
        raise InputError("DEGENERATE_INPUT", "need at least two distinct metric and subjective values")
    if not (np.all(np.isfinite(xm)) and np.all(np.isfinite(ys))):
        raise InputError("DEGENERATE_INPUT", "non-finite values")
    if xm.size == ys.size:
        target = ys
    else:
        target = np.interp(_plotting_positions(xm.size), _plotting_positions(ys.size), ys)
    ux, inv = np.unique(xm, return_inverse=True)
    uy = np.bincount(inv, weights=target) / np.bincount(inv)
    return CalibrationMap(ux, uy)


@dataclass(frozen=True)
class RDPoint:
    bitrate_kbps: float
    s: float
    s_hat: float
    item_id: str = ""


@dataclass(frozen=True)
class RDGroup:
    key: tuple[str, str, str]
    points: tuple[RDPoint, ...]
    duration_s: float = 1.0

    def __post_init__(self):
        if len(self.points) < MIN_POINTS:
            raise InputError("TOO_FEW_POINTS", f"group {self.key} has {len(self.points)} points")
        rates = [p.bitrate_kbps for p in self.points]
        if any(r <= 0 for r in rates) or any(b <= a for a, b in zip(rates, rates[1:])):
            raise InputError("BAD_BITRATES", f"group {self.key}: bitrates must be positive and strictly increasing")
        if not self.duration_s > 0:
            raise InputError("NON_POSITIVE_DURATION", f"group {self.key}")

    @classmethod
    def from_arrays(cls, key, bitrates, s, s_hat, duration_s: float = 1.0) -> RDGroup:
        pts = tuple(RDPoint(float(b), float(x), float(y)) for b, x, y in zip(bitrates, s, s_hat))
        return cls(tuple(key), pts, duration_s)

    @property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        b = np.array([p.bitrate_kbps for p in self.points])
        s = np.array([p.s for p in self.points])
        sh = np.array([p.s_hat for p in self.points])
        return b, s, sh


@dataclass(frozen=True)
class DroppedGroup:
    key: tuple[str, str, str]
    n_points: int
    reason: str


@dataclass(frozen=True)
class RDGroupSet:
    """Retained groups in sorted key order plus the ones that were dropped."""

    groups: tuple[RDGroup, ...]
    dropped: tuple[DroppedGroup, ...] = ()
    notes: tuple[str, ...] = ()

    def __iter__(self):
        return iter(self.groups)

    def __len__(self) -> int:
        return len(self.groups)

    def __getitem__(self, k):
        return self.groups[k]


def build_rd_groups(
    catalog: ItemCatalog,
    subjective: QualityScores | Mapping[str, float],
    metric: Mapping[str, float],
    calibrate: bool = True,
    normalize: bool = True,
    strict: bool = True,
) -> RDGroupSet:
    """Partition scored, non-reference items into (source, codec, preset) RD groups.

    Groups with fewer than three scored bitrate points are dropped and listed.
    With ``strict`` an empty result raises NO_VALID_GROUPS.
    """
    subj = subjective.as_dict() if isinstance(subjective, QualityScores) else dict(subjective)
    met = dict(metric)
    scored = [it for it in catalog.items if not it.is_reference and it.item_id in subj and it.item_id in met]
    notes = []
    s_all = np.array([subj[it.item_id] for it in scored])
    m_all = np.array([met[it.item_id] for it in scored])
    if calibrate and scored:
        cal = align_scales(m_all, s_all)
        m_map = {it.item_id: float(cal(met[it.item_id])) for it in scored}
        notes.append("metric calibrated by monotone quantile matching")
    else:
        m_map = {it.item_id: met[it.item_id] for it in scored}
    lo, span = 0.0, 1.0
    if normalize and s_all.size and np.ptp(s_all) > 0:
        lo, span = float(s_all.min()), float(np.ptp(s_all))
        notes.append("quality min-max normalised over subjective scores")

    members: dict[tuple[str, str, str], list] = {}
    for it in catalog.items:
        if not it.is_reference:
            members.setdefault((it.source_id, it.codec, it.preset), []).append(it)

    groups, dropped = [], []
    for key in sorted(members):
        items = sorted(members[key], key=lambda it: (it.actual_bitrate_kbps, it.item_id))
        usable = [it for it in items if it.item_id in m_map]
        if len(usable) < MIN_POINTS:
            dropped.append(DroppedGroup(key, len(usable), f"fewer than {MIN_POINTS} scored bitrate points"))
            continue
        rates = [it.actual_bitrate_kbps for it in usable]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            dropped.append(DroppedGroup(key, len(usable), "duplicate bitrate"))
            continue
        pts = tuple(
            RDPoint(it.actual_bitrate_kbps, (subj[it.item_id] - lo) / span, (m_map[it.item_id] - lo) / span, it.item_id)
            for it in usable
        )
        duration = float(np.mean([it.duration_s for it in usable]))
        groups.append(RDGroup(key, pts, duration))
    if strict and not groups:
        raise InputError("NO_VALID_GROUPS", f"no RD group has {MIN_POINTS}+ scored points ({len(dropped)} dropped)")
    return RDGroupSet(tuple(groups), tuple(dropped), tuple(notes))


def upc_ocp(g: RDGroup) -> tuple[float, float]:
    """Exact integrals of the positive and negative parts of ``s - s_hat`` over bitrate."""
    b, s, sh = g.arrays
    d = s - sh
    upc = ocp = 0.0
    for k in range(len(b) - 1):
        w = b[k + 1] - b[k]
        d0, d1 = d[k], d[k + 1]
        if d0 >= 0 and d1 >= 0:
            upc += 0.5 * (d0 + d1) * w
        elif d0 <= 0 and d1 <= 0:
            ocp -= 0.5 * (d0 + d1) * w
        else:
            t = d0 / (d0 - d1)
            if d0 > 0:
                upc += 0.5 * d0 * t * w
                ocp -= 0.5 * d1 * (1.0 - t) * w
            else:
                ocp -= 0.5 * d0 * t * w
                upc += 0.5 * d1 * (1.0 - t) * w
    return float(upc), float(ocp)


@dataclass(frozen=True)
class GroupCost:
    key: tuple[str, str, str]
    upc: float
    ocp: float


@dataclass(frozen=True)
class RDAEReport:
    per_group: tuple[GroupCost, ...]
    upc_mean: float
    ocp_mean: float
    rdae: float
    units: Units
    dropped: tuple[DroppedGroup, ...] = ()
    notes: tuple[str, ...] = field(default=())

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "units": self.units.value,
            "rdae": self.rdae,
            "upc_mean": self.upc_mean,
            "ocp_mean": self.ocp_mean,
            "n_groups": len(self.per_group),
            "per_group": [
                {"source_id": g.key[0], "codec": g.key[1], "preset": g.key[2], "upc": g.upc, "ocp": g.ocp}
                for g in self.per_group
            ],
            "dropped": [
                {"source_id": d.key[0], "codec": d.key[1], "preset": d.key[2], "n_points": d.n_points,
                 "reason": d.reason}
                for d in self.dropped
            ],
            "notes": list(self.notes),
        }

    def write_csv(self, stream: IO[str]) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["source_id", "codec", "preset", "upc", "ocp"])
        for g in self.per_group:
            w.writerow([*g.key, repr(g.upc), repr(g.ocp)])


def rdae(groups: RDGroupSet | Sequence[RDGroup], units: Units | str = Units.QUALITY_KBPS) -> RDAEReport:
    units = Units(units)
    if isinstance(groups, RDGroupSet):
        dropped, notes = groups.dropped, groups.notes
        groups = groups.groups
    else:
        dropped, notes = (), ()
    if not groups:
        raise InputError("NO_VALID_GROUPS", "rdae needs at least one group")
    costs = []
    for g in sorted(groups, key=lambda g: g.key):
        upc, ocp = upc_ocp(g)
        if units is Units.GIGABITS:
            upc, ocp = upc * g.duration_s / KBIT_PER_GBIT, ocp * g.duration_s / KBIT_PER_GBIT
        costs.append(GroupCost(g.key, upc, ocp))
    upc_mean = float(np.mean([c.upc for c in costs]))
    ocp_mean = float(np.mean([c.ocp for c in costs]))
    notes = (*notes, "shared scale by quantile matching, not a learned transport map")
    return RDAEReport(tuple(costs), upc_mean, ocp_mean, upc_mean + ocp_mean, units, tuple(dropped), notes)
