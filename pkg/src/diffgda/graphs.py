"""Graph data model, text-format IO, label augmentation/recovery, and a
contextual stochastic block model generator for synthetic domain pairs.

Text format (UTF-8, LF): line 1 `N F C`; N feature rows of F reals;
`EDGES M`; M lines `u v` (0-based, undirected, u != v); `LABELS`; N lines
of an integer in [0, C) or -1 for unlabeled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray


class GraphParseError(ValueError):
    """Malformed graph file; the message names the offending line."""


@dataclass
class Graph:
    """Node features, binary symmetric adjacency, and optional labels.

    labels uses -1 for unlabeled nodes.
    """

    features: Array
    adjacency: Array
    labels: Array
    c: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.validate()

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def f(self) -> int:
        return self.features.shape[1]

    def fully_labeled(self) -> bool:
        return bool((self.labels >= 0).all())

    def validate(self):
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values")
        if self.adjacency.shape != (n, n):
            raise ValueError(f"adjacency shape {self.adjacency.shape} != ({n}, {n})")
        if not np.array_equal(self.adjacency, self.adjacency.T):
            raise ValueError("adjacency is not symmetric")
        if np.trace(self.adjacency) != 0:
            raise ValueError("adjacency has a nonzero diagonal")
        if not np.isin(self.adjacency, (0.0, 1.0)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        if self.labels.shape != (n,):
            raise ValueError(f"labels length {self.labels.shape} != {n}")
        if self.c < 1:
            raise ValueError("class count must be at least 1")
        if ((self.labels < -1) | (self.labels >= self.c)).any():
            raise ValueError(f"labels must lie in [0, {self.c}) or be -1")


@dataclass
class AugmentedGraph:
    """Features concatenated with one-hot labels, plus the adjacency."""

    xt: Array
    adjacency: Array
    f: int
    c: int

    def __post_init__(self):
        self.xt = np.asarray(self.xt, dtype=np.float64)
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        if self.xt.shape[1] != self.f + self.c:
            raise ValueError(f"xt width {self.xt.shape[1]} != f+c = {self.f + self.c}")

    @property
    def n(self) -> int:
        return self.xt.shape[0]


def augment(g: Graph) -> AugmentedGraph:
    """Concatenate one-hot labels onto the feature matrix (source side only)."""
    if not g.fully_labeled():
        raise ValueError("cannot augment a graph with unlabeled nodes")
    onehot = np.zeros((g.n, g.c))
    onehot[np.arange(g.n), g.labels] = 1.0
    return AugmentedGraph(np.concatenate([g.features, onehot], axis=1),
                          g.adjacency.copy(), g.f, g.c)


def recover_labels(xt: Array, f: int, c: int) -> Array:
    """Argmax over the trailing c columns; ties break to the lowest index."""
    if c < 1:
        raise ValueError("class count must be at least 1")
    xt = np.asarray(xt, dtype=np.float64)
    if not np.isfinite(xt).all():
        raise ValueError("non-finite entries in augmented features")
    return np.argmax(xt[:, f:f + c], axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# Text IO

def load_graph(path) -> Graph:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    pos = 0

    def next_line() -> tuple[str, int]:
        nonlocal pos
        if pos >= len(lines):
            raise GraphParseError(f"line {pos + 1}: unexpected end of file")
        line = lines[pos]
        pos += 1
        return line, pos

    header, ln = next_line()
    parts = header.split()
    if len(parts) != 3:
        raise GraphParseError(f"line {ln}: header must be 'N F C'")
    try:
        n, f, c = (int(p) for p in parts)
    except ValueError:
        raise GraphParseError(f"line {ln}: header must be three integers") from None
    if n < 1 or f < 1 or c < 1:
        raise GraphParseError(f"line {ln}: N, F, C must be positive")

    features = np.empty((n, f))
    for i in range(n):
        row, ln = next_line()
        vals = row.split()
        if len(vals) != f:
            raise GraphParseError(f"line {ln}: expected {f} feature values, got {len(vals)}")
        try:
            features[i] = [float(v) for v in vals]
        except ValueError:
            raise GraphParseError(f"line {ln}: non-numeric feature value") from None
    if not np.isfinite(features).all():
        raise GraphParseError("feature matrix contains non-finite values")

    marker, ln = next_line()
    parts = marker.split()
    if len(parts) != 2 or parts[0] != "EDGES":
        raise GraphParseError(f"line {ln}: expected 'EDGES M'")
    try:
        m = int(parts[1])
    except ValueError:
        raise GraphParseError(f"line {ln}: edge count must be an integer") from None

    adjacency = np.zeros((n, n))
    for _ in range(m):
        row, ln = next_line()
        parts = row.split()
        if len(parts) != 2:
            raise GraphParseError(f"line {ln}: edge line must be 'u v'")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphParseError(f"line {ln}: edge endpoints must be integers") from None
        if not (0 <= u < n and 0 <= v < n):
            raise GraphParseError(f"line {ln}: edge endpoint out of range [0, {n})")
        if u == v:
            continue  # self-loops dropped
        adjacency[u, v] = 1.0
        adjacency[v, u] = 1.0

    marker, ln = next_line()
    if marker.strip() != "LABELS":
        raise GraphParseError(f"line {ln}: expected 'LABELS'")
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        row, ln = next_line()
        try:
            lab = int(row.strip())
        except ValueError:
            raise GraphParseError(f"line {ln}: label must be an integer") from None
        if lab != -1 and not (0 <= lab < c):
            raise GraphParseError(f"line {ln}: label {lab} out of range [0, {c})")
        labels[i] = lab
    return Graph(features, adjacency, labels, c)


def format_real(x: float) -> str:
    """Shortest decimal that round-trips the float64 exactly."""
    return repr(float(x))


def save_graph(g: Graph, path):
    out = [f"{g.n} {g.f} {g.c}"]
    for row in g.features:
        out.append(" ".join(format_real(v) for v in row))
    iu, iv = np.nonzero(np.triu(g.adjacency, k=1))
    out.append(f"EDGES {len(iu)}")
    for u, v in zip(iu, iv):
        out.append(f"{u} {v}")
    out.append("LABELS")
    for lab in g.labels:
        out.append(str(int(lab)))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# Contextual SBM pair generator

@dataclass(frozen=True)
class DomainShift:
    """Target-domain perturbation of the base block model."""

    rotate_degrees: float = 0.0
    intra_delta: float = 0.0
    inter_delta: float = 0.0

    def is_zero(self) -> bool:
        return self.rotate_degrees == 0.0 and self.intra_delta == 0.0 \
            and self.inter_delta == 0.0


@dataclass(frozen=True)
class CsbmSpec:
    """Contextual SBM: class-dependent edge probabilities, Gaussian features."""

    n: int
    c: int
    intra_p: float
    inter_q: float
    class_means: Array
    feature_std: float
    shift: DomainShift = field(default_factory=DomainShift)

    def __post_init__(self):
        means = np.asarray(self.class_means, dtype=np.float64)
        object.__setattr__(self, "class_means", means)
        if not (0.0 <= self.inter_q <= self.intra_p <= 1.0):
            raise ValueError("need 0 <= inter_q <= intra_p <= 1")
        if self.feature_std <= 0.0:
            raise ValueError("feature_std must be positive")
        if means.shape[0] != self.c:
            raise ValueError(f"class_means has {means.shape[0]} rows, expected {self.c}")
        if self.shift.rotate_degrees != 0.0 and means.shape[1] < 2:
            raise ValueError("mean rotation needs at least 2 feature dims")

    @property
    def f(self) -> int:
        return self.class_means.shape[1]


def circle_class_means(c: int, f: int, radius: float = 2.0,
                       anchor: float = 1.5) -> Array:
    """Class means on a circle in the first two dims, each class also
    offset along its own anchor dim so rotations leave class identity
    recoverable."""
    if f < 2 and c > 1:
        raise ValueError("need at least 2 feature dims for distinct means")
    means = np.zeros((c, f))
    for k in range(c):
        angle = 2.0 * math.pi * k / max(c, 1)
        means[k, 0] = radius * math.cos(angle)
        if f >= 2:
            means[k, 1] = radius * math.sin(angle)
        if f > 2:
            means[k, 2 + k % (f - 2)] += anchor
    return means


def _rotate_means(means: Array, degrees: float) -> Array:
    if degrees == 0.0:
        return means.copy()
    theta = math.radians(degrees)
    rot = np.array([[math.cos(theta), -math.sin(theta)],
                    [math.sin(theta), math.cos(theta)]])
    out = means.copy()
    out[:, :2] = means[:, :2] @ rot.T
    return out


def _draw_csbm(rng: np.random.Generator, n: int, c: int, means: Array,
               std: float, intra_p: float, inter_q: float) -> Graph:
    labels = rng.permutation(np.arange(n) % c).astype(np.int64)
    features = means[labels] + std * rng.standard_normal((n, means.shape[1]))
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, intra_p, inter_q)
    draw = rng.random((n, n))
    upper = np.triu(draw < prob, k=1).astype(np.float64)
    adjacency = upper + upper.T
    return Graph(features, adjacency, labels, c)


def gen_csbm_pair(spec: CsbmSpec, seed: int) -> tuple[Graph, Graph]:
    """Draw a (source, target) pair; the target uses the shifted model.

    Target labels are ground truth for evaluation only — the adaptation
    pipeline never reads them.
    """
    src_seed, tgt_seed = np.random.SeedSequence(seed).spawn(2)
    source = _draw_csbm(np.random.default_rng(src_seed), spec.n, spec.c,
                        spec.class_means, spec.feature_std,
                        spec.intra_p, spec.inter_q)
    means_t = _rotate_means(spec.class_means, spec.shift.rotate_degrees)
    intra_t = float(np.clip(spec.intra_p + spec.shift.intra_delta, 0.0, 1.0))
    inter_t = float(np.clip(spec.inter_q + spec.shift.inter_delta, 0.0, 1.0))
    target = _draw_csbm(np.random.default_rng(tgt_seed), spec.n, spec.c,
                        means_t, spec.feature_std, intra_t, inter_t)
    return source, target
