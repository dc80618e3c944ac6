"""Spatial/temporal complexity features and k-means clustering for source selection."""

from __future__ import annotations

import csv
import io
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import IO, BinaryIO

import numpy as np

from .core import InputError

Y4M_MAGIC = b"YUV4MPEG2"
_420_TAGS = {"420", "420jpeg", "420paldv", "420mpeg2"}


@dataclass(frozen=True)
class FrameSequence:
    width: int
    height: int
    frames: tuple[np.ndarray, ...]
    consumed: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InputError("BAD_DIMENSIONS", f"{self.width}x{self.height}")
        if not self.frames:
            raise InputError("EMPTY_INPUT", "no frames")
        for k, f in enumerate(self.frames):
            if f.shape != (self.height, self.width):
                raise InputError("BAD_DIMENSIONS", f"frame {k} has shape {f.shape}")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class FeatureVector:
    si: float
    ti: float

    def __post_init__(self):
        if not (np.isfinite(self.si) and np.isfinite(self.ti) and self.si >= 0 and self.ti >= 0):
            raise InputError("BAD_FEATURE", f"si={self.si}, ti={self.ti}")


def parse_y4m_luma(data: bytes | BinaryIO) -> FrameSequence:
    """Extract the luma plane of every frame of an 8-bit 4:2:0 YUV4MPEG2 stream."""
    if not isinstance(data, (bytes, bytearray)):
        data = data.read()
    data = bytes(data)
    nl = data.find(b"\n")
    if nl < 0 or not data.startswith(Y4M_MAGIC + b" ") and data[:nl] != Y4M_MAGIC:
        raise InputError("BAD_MAGIC", repr(data[:10]))
    width = height = None
    colour = "420jpeg"
    for tok in data[len(Y4M_MAGIC):nl].decode("ascii", "replace").split():
        tag, val = tok[0], tok[1:]
        if tag == "W":
            width = int(val)
        elif tag == "H":
            height = int(val)
        elif tag == "C":
            colour = val
    if width is None or height is None:
        raise InputError("BAD_HEADER", "missing W or H")
    if colour not in _420_TAGS:
        raise InputError("UNSUPPORTED_FORMAT", f"colour space C{colour}")
    luma = width * height
    chroma = 2 * ((width + 1) // 2) * ((height + 1) // 2)
    pos = nl + 1
    frames = []
    while pos < len(data):
        if not data.startswith(b"FRAME", pos):
            raise InputError("BAD_FRAME_HEADER", f"byte {pos}")
        end = data.find(b"\n", pos)
        if end < 0:
            raise InputError("TRUNCATED_FRAME", f"frame {len(frames)} header")
        start = end + 1
        if start + luma + chroma > len(data):
            raise InputError("TRUNCATED_FRAME", f"frame {len(frames)}: need {luma + chroma} bytes, have {len(data) - start}")
        plane = np.frombuffer(data, dtype=np.uint8, count=luma, offset=start).reshape(height, width).copy()
        frames.append(plane)
        pos = start + luma + chroma
    return FrameSequence(width, height, tuple(frames), pos)


def write_y4m(frames: Sequence[np.ndarray], stream: BinaryIO | None = None, fps: str = "25:1") -> bytes:
    """Write luma planes as a 4:2:0 stream with neutral chroma."""
    h, w = frames[0].shape
    out = io.BytesIO()
    out.write(f"YUV4MPEG2 W{w} H{h} F{fps} Ip A1:1 C420jpeg\n".encode())
    chroma = bytes([128]) * (2 * ((w + 1) // 2) * ((h + 1) // 2))
    for f in frames:
        out.write(b"FRAME\n")
        out.write(np.asarray(f, dtype=np.uint8).tobytes())
        out.write(chroma)
    raw = out.getvalue()
    if stream is not None:
        stream.write(raw)
    return raw


def sobel_magnitude(frame: np.ndarray) -> np.ndarray:
    """Gradient magnitude on interior pixels (border rows and columns dropped)."""
    f = np.asarray(frame, dtype=float)
    if f.shape[0] < 3 or f.shape[1] < 3:
        return np.zeros((0, 0))
    gx = (
        (f[:-2, 2:] + 2 * f[1:-1, 2:] + f[2:, 2:])
        - (f[:-2, :-2] + 2 * f[1:-1, :-2] + f[2:, :-2])
    )
    gy = (
        (f[2:, :-2] + 2 * f[2:, 1:-1] + f[2:, 2:])
        - (f[:-2, :-2] + 2 * f[:-2, 1:-1] + f[:-2, 2:])
    )
    return np.hypot(gx, gy)


def compute_si_ti(fs: FrameSequence, pooling: str = "max") -> FeatureVector:
    """Spatial and temporal information, pooled over frames by max (default) or mean."""
    if pooling not in ("max", "mean"):
        raise InputError("BAD_CONFIG", f"pooling {pooling!r}")
    pool = np.max if pooling == "max" else np.mean
    si_frames = []
    for f in fs.frames:
        mag = sobel_magnitude(f)
        si_frames.append(float(np.std(mag)) if mag.size else 0.0)
    ti_frames = [
        float(np.std(b.astype(float) - a.astype(float))) for a, b in zip(fs.frames, fs.frames[1:])
    ]
    si = float(pool(si_frames))
    ti = float(pool(ti_frames)) if ti_frames else 0.0
    return FeatureVector(si, ti)


# --------------------------------------------------------------------------
# Clustering


@dataclass(frozen=True)
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    inertia_history: tuple[float, ...] = ()
    n_iter: int = 0
    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scale: np.ndarray = field(default_factory=lambda: np.ones(0))


def standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (x - mean) / sd, mean, sd


def _sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [int(rng.integers(n))]
    d2 = ((x - x[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.choice(np.setdiff1d(np.arange(n), centers)))
        centers.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[centers].copy()


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations on z-scored features, seeded by k-means++.

    An emptied cluster is moved onto the point farthest from its current
    centroid. ``inertia_history`` records the within-cluster sum of squares
    after every assignment step.
    """
    raw = np.asarray(points, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    n = raw.shape[0]
    if k < 1:
        raise InputError("BAD_CONFIG", "k must be positive")
    if k > n:
        raise InputError("K_TOO_LARGE", f"k={k} exceeds {n} points")
    x, mean, sd = standardize(raw)
    rng = np.random.default_rng(seed)
    centroids = kmeans_pp_init(x, k, rng)
    history = []
    assign = None
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dist(x, centroids)
        new_assign = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), new_assign].sum())
        history.append(inertia)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = assign == j
            if members.any():
                centroids[j] = x[members].mean(axis=0)
        for j in range(k):
            if not np.any(assign == j):
                own = d2[np.arange(n), assign]
                far = int(own.argmax())
                assign[far] = j
                centroids[j] = x[far]
                for jj in range(k):
                    members = assign == jj
                    if members.any():
                        centroids[jj] = x[members].mean(axis=0)
    d2 = _sq_dist(x, centroids)
    assign = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), assign].sum())
    return KMeansResult(assign, centroids, inertia, tuple(history), it, mean, sd)


def sample_per_cluster(assignments, per_cluster: int, seed: int = 0) -> dict[int, list[int]]:
    """Up to ``per_cluster`` indices drawn without replacement from each cluster."""
    if per_cluster < 1:
        raise InputError("BAD_CONFIG", "per_cluster must be positive")
    assignments = np.asarray(assignments)
    rng = np.random.default_rng(seed)
    out = {}
    for cl in np.unique(assignments):
        idx = np.flatnonzero(assignments == cl)
        take = min(per_cluster, idx.size)
        out[int(cl)] = sorted(int(i) for i in rng.choice(idx, take, replace=False))
    return out


def read_features(stream: IO[str] | str) -> tuple[list[str], np.ndarray, list[str]]:
    """Features CSV: video_id followed by numeric columns (si, ti and any extras)."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if not header or header[0] != "video_id":
        raise InputError("MISSING_COLUMN", "features CSV must start with video_id")
    cols = header[1:]
    if not cols:
        raise InputError("MISSING_COLUMN", "no feature columns")
    ids, rows = [], []
    for n, rec in enumerate(reader, start=1):
        if not rec:
            continue
        try:
            rows.append([float(v) for v in rec[1:]])
        except ValueError:
            raise InputError("BAD_NUMBER", f"row {n}") from None
        if len(rows[-1]) != len(cols):
            raise InputError("BAD_ROW", f"row {n} has {len(rows[-1])} values for {len(cols)} columns")
        ids.append(rec[0])
    return ids, np.asarray(rows, dtype=float).reshape(len(ids), len(cols)), cols


def write_features(ids: Sequence[str], feats: Sequence[FeatureVector], stream: IO[str]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["video_id", "si", "ti"])
    for i, f in zip(ids, feats):
        w.writerow([i, repr(f.si), repr(f.ti)])
