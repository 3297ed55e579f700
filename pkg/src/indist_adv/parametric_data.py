"""Binary dataset of two disjoint N-dimensional uniform hyper-cubes.

Class 0 is uniform on ``(a, b)^N`` and class 1 on ``(c, d)^N``.  Membership
uses open intervals, so a point on a face of either cube is ``OUTSIDE``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import make_rng


class Membership(enum.IntEnum):
    OUTSIDE = -1
    CLASS0 = 0
    CLASS1 = 1


@dataclass(frozen=True)
class UniformPairSupport:
    dim: int
    class0_range: tuple[float, float] = (-10.0, 10.0)
    class1_range: tuple[float, float] = (20.0, 40.0)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        (a, b), (c, d) = self.class0_range, self.class1_range
        if not (a < b and c < d):
            raise ValueError("each class range must satisfy lo < hi")
        if not (b < c or d < a):
            raise ValueError(f"class ranges overlap: {(a, b)} and {(c, d)}")

    def class_range(self, label: int) -> tuple[float, float]:
        return self.class0_range if label == 0 else self.class1_range

    def ranges(self, label: int) -> np.ndarray:
        """Per-coordinate ``(lo, hi)`` rows of class ``label``'s cube."""
        lo, hi = self.class_range(label)
        return np.tile([lo, hi], (self.dim, 1)).astype(float)

    def to_json(self) -> dict:
        return {"dim": self.dim, "ranges": [list(self.class0_range), list(self.class1_range)]}


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    support: UniformPairSupport
    points: np.ndarray  # (n, dim)
    labels: np.ndarray  # (n,) int
    seed: int | None = None

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != self.support.dim:
            raise ValueError(f"points must have shape (n, {self.support.dim}), got {self.points.shape}")
        if len(self.points) != len(self.labels):
            raise ValueError("points and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def concat(self, points: np.ndarray, labels: np.ndarray) -> LabeledDataset:
        return LabeledDataset(
            self.support,
            np.concatenate([self.points, np.asarray(points, float).reshape(-1, self.support.dim)]),
            np.concatenate([self.labels, np.asarray(labels, dtype=np.int64)]),
            self.seed,
        )


def sample_dataset(support: UniformPairSupport, n_per_class: int, seed: int) -> LabeledDataset:
    """Draw ``n_per_class`` points from each cube, interleaved then shuffled."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = make_rng(seed)
    n = support.dim
    x0 = rng.uniform(*support.class0_range, size=(n_per_class, n))
    x1 = rng.uniform(*support.class1_range, size=(n_per_class, n))
    points = np.empty((2 * n_per_class, n))
    points[0::2], points[1::2] = x0, x1
    labels = np.tile(np.array([0, 1], dtype=np.int64), n_per_class)
    perm = rng.permutation(2 * n_per_class)
    return LabeledDataset(support, points[perm], labels[perm], seed)


def membership_batch(support: UniformPairSupport, X: np.ndarray) -> np.ndarray:
    """Vectorized :func:`membership`; returns ``Membership`` codes as ints."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != support.dim:
        raise ValueError(f"expected shape (m, {support.dim}), got {X.shape}")
    out = np.full(len(X), int(Membership.OUTSIDE), dtype=np.int64)
    for label in (0, 1):
        lo, hi = support.class_range(label)
        inside = np.all((X > lo) & (X < hi), axis=1)
        out[inside] = label
    return out


def membership(support: UniformPairSupport, x) -> Membership:
    x = np.asarray(x, dtype=float)
    if x.shape != (support.dim,):
        raise ValueError(f"dimension mismatch: expected {support.dim}, got {x.shape}")
    return Membership(int(membership_batch(support, x[None])[0]))


def write_dataset(data: LabeledDataset, path) -> None:
    header = {**data.support.to_json(), "n": len(data), "seed": data.seed}
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for p, y in zip(data.points, data.labels):
            fh.write(",".join(repr(float(v)) for v in p) + f",{int(y)}\n")


def read_dataset(path) -> LabeledDataset:
    path = Path(path)
    with open(path) as fh:
        header = json.loads(fh.readline())
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    (a, b), (c, d) = header["ranges"]
    support = UniformPairSupport(int(header["dim"]), (float(a), float(b)), (float(c), float(d)))
    if len(rows) != header["n"]:
        raise ValueError(f"{path}: header says n={header['n']} but found {len(rows)} rows")
    arr = np.array([[float(v) for v in r[:-1]] for r in rows]).reshape(-1, support.dim)
    labels = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    return LabeledDataset(support, arr, labels, header.get("seed"))
