"""Domain types, CSV ingestion and comparison-matrix construction."""

from __future__ import annotations

import csv
import enum
import io
import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import IO, Any

import numpy as np

SCORE_MIN = 0
SCORE_MAX = 20

ITEM_COLUMNS = (
    "item_id",
    "source_id",
    "codec",
    "preset",
    "target_bitrate_kbps",
    "actual_bitrate_kbps",
    "duration_s",
    "is_reference",
)
VOTE_COLUMNS = ("group_id", "item_a", "item_b", "outcome", "observer_id")
RATING_COLUMNS = ("observer_id", "item_id", "score")


class CvqaError(Exception):
    """Base error carrying a machine-readable code."""

    exit_code = 2

    def __init__(self, code: str, message: str = ""):
        self.code = code
        self.message = message
        super().__init__(f"{code}: {message}" if message else code)


class InputError(CvqaError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class EstimationError(CvqaError):
    """Numerical failure inside an estimator."""

    exit_code = 3


class CvqaWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# Items


@dataclass(frozen=True)
class Item:
    item_id: str
    source_id: str
    codec: str
    preset: str
    target_bitrate_kbps: float
    actual_bitrate_kbps: float
    duration_s: float
    is_reference: bool = False


@dataclass(frozen=True)
class ItemCatalog:
    items: tuple[Item, ...] = ()

    def __post_init__(self):
        seen: set[str] = set()
        refs: dict[str, str] = {}
        for row, it in enumerate(self.items, start=1):
            if it.item_id in seen:
                raise InputError("DUPLICATE_ITEM_ID", f"row {row}: item_id {it.item_id!r} already defined")
            seen.add(it.item_id)
            if it.is_reference:
                if it.source_id in refs:
                    raise InputError(
                        "DUPLICATE_REFERENCE",
                        f"row {row}: source {it.source_id!r} already has reference {refs[it.source_id]!r}",
                    )
                refs[it.source_id] = it.item_id
            elif it.actual_bitrate_kbps <= 0 or it.target_bitrate_kbps <= 0:
                raise InputError("NON_POSITIVE_BITRATE", f"row {row}: item {it.item_id!r}")

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __contains__(self, item_id: object) -> bool:
        return item_id in self.by_id

    @property
    def by_id(self) -> dict[str, Item]:
        return {it.item_id: it for it in self.items}

    def reference_of(self, source_id: str) -> Item | None:
        for it in self.items:
            if it.is_reference and it.source_id == source_id:
                return it
        return None


def _read_rows(stream: IO[str] | str, columns: tuple[str, ...]) -> list[dict[str, str]]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    header = reader.fieldnames or []
    missing = [c for c in columns if c not in header]
    if missing:
        raise InputError("MISSING_COLUMN", f"header lacks {', '.join(missing)}")
    return list(reader)


def _parse_float(value: str, row: int, column: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise InputError("BAD_NUMBER", f"row {row}: column {column} = {value!r}") from None


def _parse_bool(value: str, row: int) -> bool:
    v = (value or "").strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no", ""):
        return False
    raise InputError("BAD_BOOLEAN", f"row {row}: is_reference = {value!r}")


def parse_items(stream: IO[str] | str) -> ItemCatalog:
    """Read an item catalog CSV. Rows are numbered from 1 after the header."""
    items = []
    seen: set[str] = set()
    for row, rec in enumerate(_read_rows(stream, ITEM_COLUMNS), start=1):
        item_id = rec["item_id"]
        if item_id in seen:
            raise InputError("DUPLICATE_ITEM_ID", f"row {row}: item_id {item_id!r} already defined")
        seen.add(item_id)
        is_ref = _parse_bool(rec["is_reference"], row)
        target = _parse_float(rec["target_bitrate_kbps"] or "0", row, "target_bitrate_kbps")
        actual = _parse_float(rec["actual_bitrate_kbps"] or "0", row, "actual_bitrate_kbps")
        duration = _parse_float(rec["duration_s"], row, "duration_s")
        if not is_ref and (target <= 0 or actual <= 0):
            raise InputError("NON_POSITIVE_BITRATE", f"row {row}: item {item_id!r}")
        if duration <= 0:
            raise InputError("NON_POSITIVE_DURATION", f"row {row}: item {item_id!r}")
        items.append(
            Item(item_id, rec["source_id"], rec["codec"], rec["preset"], target, actual, duration, is_ref)
        )
    return ItemCatalog(tuple(items))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_items(catalog: ItemCatalog, stream: IO[str]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(ITEM_COLUMNS)
    for it in catalog.items:
        w.writerow([
            it.item_id, it.source_id, it.codec, it.preset,
            _fmt(it.target_bitrate_kbps), _fmt(it.actual_bitrate_kbps), _fmt(it.duration_s),
            "true" if it.is_reference else "false",
        ])


# --------------------------------------------------------------------------
# Pairwise votes


class Outcome(enum.Enum):
    A_WINS = "a"
    B_WINS = "b"
    TIE = "tie"


class TiePolicy(enum.Enum):
    HALF_WIN = "half-win"
    DROP = "drop"


@dataclass(frozen=True)
class Vote:
    group_id: str
    item_a: str
    item_b: str
    outcome: Outcome
    observer_id: str = ""

    def __post_init__(self):
        if self.item_a == self.item_b:
            raise InputError("SELF_COMPARISON", f"item {self.item_a!r} compared with itself")

    @property
    def winner(self) -> str | None:
        if self.outcome is Outcome.A_WINS:
            return self.item_a
        if self.outcome is Outcome.B_WINS:
            return self.item_b
        return None


@dataclass(frozen=True)
class ComparisonSet:
    votes: tuple[Vote, ...] = ()

    def __post_init__(self):
        home: dict[str, str] = {}
        for n, v in enumerate(self.votes, start=1):
            for item in (v.item_a, v.item_b):
                g = home.setdefault(item, v.group_id)
                if g != v.group_id:
                    raise InputError(
                        "MIXED_GROUP", f"vote {n}: item {item!r} appears in groups {g!r} and {v.group_id!r}"
                    )

    def __len__(self) -> int:
        return len(self.votes)

    @property
    def groups(self) -> list[str]:
        return sorted({v.group_id for v in self.votes})

    def group_votes(self, group_id: str) -> list[Vote]:
        votes = [v for v in self.votes if v.group_id == group_id]
        if not votes:
            raise InputError("UNKNOWN_GROUP", f"group {group_id!r} has no votes")
        return votes

    def group_items(self, group_id: str) -> list[str]:
        return sorted({x for v in self.group_votes(group_id) for x in (v.item_a, v.item_b)})


def parse_votes(stream: IO[str] | str) -> ComparisonSet:
    votes = []
    for row, rec in enumerate(_read_rows(stream, VOTE_COLUMNS), start=1):
        token = (rec["outcome"] or "").strip().lower()
        try:
            outcome = Outcome(token)
        except ValueError:
            raise InputError("BAD_OUTCOME", f"row {row}: outcome {rec['outcome']!r}") from None
        if rec["item_a"] == rec["item_b"]:
            raise InputError("SELF_COMPARISON", f"row {row}: item {rec['item_a']!r}")
        votes.append(Vote(rec["group_id"], rec["item_a"], rec["item_b"], outcome, rec["observer_id"]))
    return ComparisonSet(tuple(votes))


def write_votes(votes: ComparisonSet, stream: IO[str]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(VOTE_COLUMNS)
    for v in votes.votes:
        w.writerow([v.group_id, v.item_a, v.item_b, v.outcome.value, v.observer_id])


@dataclass(frozen=True)
class ComparisonMatrix:
    """Win counts between items; ``c[i, j]`` is how often item i beat item j."""

    item_ids: tuple[str, ...]
    c: np.ndarray
    tie_policy: TiePolicy = TiePolicy.HALF_WIN

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        n = len(self.item_ids)
        if c.shape != (n, n):
            raise InputError("DIMENSION_MISMATCH", f"matrix shape {c.shape} for {n} items")
        if np.any(c < 0):
            raise InputError("NEGATIVE_COUNT")
        if np.any(np.diag(c) != 0):
            raise InputError("NONZERO_DIAGONAL")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return len(self.item_ids)

    @property
    def totals(self) -> np.ndarray:
        """n_ij = c_ij + c_ji."""
        return self.c + self.c.T

    def is_connected(self) -> bool:
        """Whether the undirected comparison graph is connected."""
        if self.n <= 1:
            return True
        adj = self.totals > 0
        seen = np.zeros(self.n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(adj[i] & ~seen):
                seen[j] = True
                stack.append(int(j))
        return bool(seen.all())

    @classmethod
    def empty(cls, item_ids: Iterable[str] = ()) -> ComparisonMatrix:
        ids = tuple(sorted(item_ids))
        return cls(ids, np.zeros((len(ids), len(ids))))


def build_comparison_matrix(
    votes: ComparisonSet,
    group_id: str | None,
    tie_policy: TiePolicy = TiePolicy.HALF_WIN,
) -> ComparisonMatrix:
    """Count wins for one group, or for all groups jointly when ``group_id`` is None."""
    if group_id is None:
        selected = list(votes.votes)
    else:
        selected = votes.group_votes(group_id)
    ids = tuple(sorted({x for v in selected for x in (v.item_a, v.item_b)}))
    index = {x: i for i, x in enumerate(ids)}
    c = np.zeros((len(ids), len(ids)))
    for v in selected:
        a, b = index[v.item_a], index[v.item_b]
        if v.outcome is Outcome.A_WINS:
            c[a, b] += 1
        elif v.outcome is Outcome.B_WINS:
            c[b, a] += 1
        elif tie_policy is TiePolicy.HALF_WIN:
            c[a, b] += 0.5
            c[b, a] += 0.5
    return ComparisonMatrix(ids, c, tie_policy)


# --------------------------------------------------------------------------
# Category ratings


@dataclass(frozen=True)
class Rating:
    item_id: str
    observer_id: str
    score: int


@dataclass(frozen=True)
class RatingSet:
    """Sparse observer-by-item opinion scores on the 0..20 scale."""

    scores: tuple[Rating, ...] = ()

    def __post_init__(self):
        seen = set()
        for n, r in enumerate(self.scores, start=1):
            if not isinstance(r.score, (int, np.integer)) or not SCORE_MIN <= r.score <= SCORE_MAX:
                raise InputError("SCORE_OUT_OF_RANGE", f"rating {n}: {r.score!r}")
            key = (r.item_id, r.observer_id)
            if key in seen:
                raise InputError("DUPLICATE_RATING", f"rating {n}: item {r.item_id!r}, observer {r.observer_id!r}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def item_ids(self) -> list[str]:
        return sorted({r.item_id for r in self.scores})

    @property
    def observer_ids(self) -> list[str]:
        return sorted({r.observer_id for r in self.scores})

    @property
    def N(self) -> int:
        return len(self.item_ids)

    @property
    def J(self) -> int:
        return len(self.observer_ids)

    def by_item(self) -> dict[str, list[Rating]]:
        out: dict[str, list[Rating]] = {}
        for r in self.scores:
            out.setdefault(r.item_id, []).append(r)
        return dict(sorted(out.items()))

    def by_observer(self) -> dict[str, list[Rating]]:
        out: dict[str, list[Rating]] = {}
        for r in self.scores:
            out.setdefault(r.observer_id, []).append(r)
        return dict(sorted(out.items()))

    def mos(self) -> dict[str, float]:
        return {k: float(np.mean([r.score for r in v])) for k, v in self.by_item().items()}


def parse_ratings(stream: IO[str] | str) -> RatingSet:
    out = []
    seen = set()
    for row, rec in enumerate(_read_rows(stream, RATING_COLUMNS), start=1):
        raw = (rec["score"] or "").strip()
        try:
            score = int(raw)
        except ValueError:
            raise InputError("SCORE_OUT_OF_RANGE", f"row {row}: score {raw!r} is not an integer") from None
        if not SCORE_MIN <= score <= SCORE_MAX:
            raise InputError("SCORE_OUT_OF_RANGE", f"row {row}: score {score}")
        key = (rec["item_id"], rec["observer_id"])
        if key in seen:
            raise InputError("DUPLICATE_RATING", f"row {row}: item {key[0]!r}, observer {key[1]!r}")
        seen.add(key)
        out.append(Rating(rec["item_id"], rec["observer_id"], score))
    return RatingSet(tuple(out))


def write_ratings(ratings: RatingSet, stream: IO[str]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(RATING_COLUMNS)
    for r in ratings.scores:
        w.writerow([r.observer_id, r.item_id, int(r.score)])


# --------------------------------------------------------------------------
# Quality scores


class Method(enum.Enum):
    BT = "bt"
    ELO = "elo"
    FUSED = "fused"
    MOS = "mos"
    DMOS = "dmos"


@dataclass(frozen=True)
class ScoreEntry:
    q: float
    ci_lo: float | None = None
    ci_hi: float | None = None

    def __post_init__(self):
        if (self.ci_lo is None) != (self.ci_hi is None):
            raise InputError("BAD_INTERVAL", "ci_lo and ci_hi must be given together")
        if self.ci_lo is not None and not self.ci_lo <= self.q <= self.ci_hi:
            raise InputError("BAD_INTERVAL", f"q={self.q} outside [{self.ci_lo}, {self.ci_hi}]")


@dataclass(frozen=True)
class QualityScores:
    entries: Mapping[str, ScoreEntry]
    method: Method
    scale_note: str = ""
    meta: Mapping[str, Any] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def q(self, item_id: str) -> float:
        return self.entries[item_id].q

    def as_dict(self) -> dict[str, float]:
        return {k: e.q for k, e in self.entries.items()}

    def vector(self, item_ids: Iterable[str]) -> np.ndarray:
        return np.array([self.entries[i].q for i in item_ids], dtype=float)

    @classmethod
    def from_values(cls, values: Mapping[str, float], method: Method, **kw) -> QualityScores:
        return cls({k: ScoreEntry(float(v)) for k, v in values.items()}, method, **kw)

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "method": self.method.value,
            "scale_note": self.scale_note,
            **dict(self.meta),
            "warnings": list(self.warnings),
            "entries": [
                {"item_id": k, "q": e.q, "ci_lo": e.ci_lo, "ci_hi": e.ci_hi}
                for k, e in self.entries.items()
            ],
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping[str, Any]) -> QualityScores:
        entries = {
            e["item_id"]: ScoreEntry(float(e["q"]), e.get("ci_lo"), e.get("ci_hi")) for e in obj["entries"]
        }
        known = {"method", "scale_note", "warnings", "entries"}
        meta = {k: v for k, v in obj.items() if k not in known}
        return cls(entries, Method(obj["method"]), obj.get("scale_note", ""), meta, tuple(obj.get("warnings", ())))


def read_scores(stream: IO[str] | str, method: Method | None = None) -> QualityScores:
    """Load scores from the JSON export or from a two-column CSV (item_id, q)."""
    text = stream if isinstance(stream, str) else stream.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        obj = json.loads(text)
        if "scores" in obj and "entries" not in obj:
            obj = obj["scores"]
        scores = QualityScores.from_json_obj(obj)
        return scores if method is None else QualityScores(scores.entries, method, scores.scale_note, scores.meta)
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and "q" not in rows[0] and "score" in rows[0]:
        key = "score"
    else:
        key = "q"
    values = {}
    for row, rec in enumerate(rows, start=1):
        if "item_id" not in rec or key not in rec:
            raise InputError("MISSING_COLUMN", "scores CSV needs item_id and q (or score)")
        values[rec["item_id"]] = _parse_float(rec[key], row, key)
    return QualityScores.from_values(values, method or Method.MOS)


def write_scores_csv(scores: QualityScores, stream: IO[str]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["item_id", "q", "ci_lo", "ci_hi"])
    for k, e in scores.entries.items():
        w.writerow([k, _fmt(e.q), "" if e.ci_lo is None else _fmt(e.ci_lo), "" if e.ci_hi is None else _fmt(e.ci_hi)])


def read_metric_table(stream: IO[str] | str) -> dict[str, float]:
    """Metric scores CSV with columns item_id and score."""
    values = {}
    for row, rec in enumerate(_read_rows(stream, ("item_id", "score")), start=1):
        if rec["score"] in ("", None):
            continue
        if rec["item_id"] in values:
            raise InputError("DUPLICATE_ITEM_ID", f"row {row}: {rec['item_id']!r}")
        values[rec["item_id"]] = _parse_float(rec["score"], row, "score")
    return values


def write_metric_table(values: Mapping[str, float], stream: IO[str]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["item_id", "score"])
    for k, v in values.items():
        w.writerow([k, _fmt(v)])


def dump_json(obj: Any, stream: IO[str]) -> None:
    json.dump(obj, stream, indent=2, allow_nan=False)
    stream.write("\n")
