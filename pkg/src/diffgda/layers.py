"""Layer primitives: MLP stacks, normalized graph convolution, masked
multi-head attention over adjacency powers, and a finite-difference
gradient oracle for testing the reverse-accumulation path."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

Array = np.ndarray


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> Array:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


# ---------------------------------------------------------------------------
# MLP

@dataclass
class MlpParams:
    """Affine stack with ReLU hidden activations and a configurable head."""

    weights: list[Tensor]
    biases: list[Tensor]
    head: str = "identity"  # identity | softplus | sigmoid

    def tensors(self) -> list[Tensor]:
        return list(self.weights) + list(self.biases)


def init_mlp(rng: np.random.Generator, dims: list[int], head: str = "identity") -> MlpParams:
    if head not in ("identity", "softplus", "sigmoid"):
        raise ValueError(f"unknown head {head!r}")
    weights = [Tensor(glorot_uniform(rng, dims[i], dims[i + 1])) for i in range(len(dims) - 1)]
    biases = [Tensor(np.zeros(dims[i + 1])) for i in range(len(dims) - 1)]
    return MlpParams(weights, biases, head)


def mlp_preact(p: MlpParams, x) -> Tensor:
    """Forward through the stack, returning the last affine output (no head)."""
    h = x if isinstance(x, Tensor) else Tensor(x)
    xw = h.value.shape[-1]
    if xw != p.weights[0].value.shape[0]:
        raise ValueError(
            f"mlp input width {xw} != first layer width {p.weights[0].value.shape[0]}")
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = ad.add(ad.matmul(h, w), b)
        if i != last:
            h = ad.relu(h)
    return h


def mlp_apply(p: MlpParams, x) -> Tensor:
    h = mlp_preact(p, x)
    if p.head == "softplus":
        return ad.softplus(h)
    if p.head == "sigmoid":
        return ad.sigmoid(h)
    return h


# ---------------------------------------------------------------------------
# Graph convolution

@dataclass
class GnnParams:
    """Stack of graph-convolution weight matrices."""

    weights: list[Tensor]
    hidden: int
    dropout: float = 0.0

    def tensors(self) -> list[Tensor]:
        return list(self.weights)


def init_gnn(rng: np.random.Generator, in_dim: int, hidden: int, layers: int,
             dropout: float = 0.0) -> GnnParams:
    if not 0.0 <= dropout < 1.0:
        raise ValueError(f"dropout {dropout} outside [0, 1)")
    dims = [in_dim] + [hidden] * layers
    weights = [Tensor(glorot_uniform(rng, dims[i], dims[i + 1])) for i in range(layers)]
    return GnnParams(weights, hidden, dropout)


def gcn_norm(a: Array) -> Array:
    """Symmetric degree normalization of a binary adjacency with self-loops."""
    n = a.shape[0]
    a_hat = a + np.eye(n)
    dinv = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return a_hat * dinv[:, None] * dinv[None, :]


def gcn_layer(h, a: Array, w) -> Tensor:
    """ReLU(norm(a) @ h @ w) with symmetric-normalized self-looped adjacency."""
    hv = h.value if isinstance(h, Tensor) else np.asarray(h)
    if hv.shape[0] != a.shape[0]:
        raise ValueError(f"node count mismatch: h has {hv.shape[0]} rows, a has {a.shape[0]}")
    return ad.relu(ad.matmul(ad.matmul(gcn_norm(a), h), w))


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> Array:
    """Inverted-dropout multiplier; rate 0 gives an all-ones mask."""
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


# ---------------------------------------------------------------------------
# Masked multi-head attention over adjacency powers

@dataclass
class GmhParams:
    """Per-(state, power) attention blocks plus a channel projection.

    Block b holds `heads` triples of query/key/value projections; the
    per-head edge maps across all blocks are the channels mixed by
    (proj_w, proj_b) into a single n-by-n edge-logit map.
    """

    wq: list[list[Tensor]]
    wk: list[list[Tensor]]
    wv: list[list[Tensor]]
    proj_w: Tensor
    proj_b: Tensor
    heads: int
    head_dim: int

    def tensors(self) -> list[Tensor]:
        out: list[Tensor] = []
        for group in (self.wq, self.wk, self.wv):
            for block in group:
                out.extend(block)
        out.append(self.proj_w)
        out.append(self.proj_b)
        return out


def init_gmh(rng: np.random.Generator, in_dims: list[int], heads: int,
             head_dim: int) -> GmhParams:
    """One block per entry of in_dims (the width of the hidden state it reads)."""
    wq, wk, wv = [], [], []
    for d in in_dims:
        wq.append([Tensor(glorot_uniform(rng, d, head_dim)) for _ in range(heads)])
        wk.append([Tensor(glorot_uniform(rng, d, head_dim)) for _ in range(heads)])
        wv.append([Tensor(glorot_uniform(rng, d, head_dim)) for _ in range(heads)])
    channels = len(in_dims) * heads
    proj_w = Tensor(rng.uniform(-1.0, 1.0, size=channels) / np.sqrt(channels))
    proj_b = Tensor(np.zeros(1))
    return GmhParams(wq, wk, wv, proj_w, proj_b, heads, head_dim)


def attention_mask(power: Array) -> Array:
    """Pairs admitted by one adjacency power; the diagonal is always admitted."""
    return (power > 0.0) | np.eye(power.shape[0], dtype=bool)


def gmh_attention(p: GmhParams, hidden_states: list, adjacency_powers: list[Array]) -> Tensor:
    """Masked scaled dot-product attention per (state, power) pair.

    Per head, the edge channel is the attention map times the value Gram
    map; channels are concatenated and linearly projected to an n-by-n
    edge-logit map.
    """
    if not hidden_states:
        raise ValueError("empty hidden-state list")
    n = _rows(hidden_states[0])
    for hs in hidden_states:
        if _rows(hs) != n:
            raise ValueError("hidden states disagree on row count")
    for pw in adjacency_powers:
        if pw.shape != (n, n):
            raise ValueError("adjacency power shape mismatch")
    blocks = len(hidden_states) * len(adjacency_powers)
    if len(p.wq) != blocks:
        raise ValueError(f"{len(p.wq)} weight blocks for {blocks} (state, power) pairs")
    if blocks * p.heads != p.proj_w.size:
        raise ValueError("projection width does not match block/head count")

    scale = 1.0 / np.sqrt(float(p.head_dim))
    n_pow = len(adjacency_powers)
    masks = np.stack([attention_mask(pw) for pw in adjacency_powers])
    # channel order is (state, power, head); per state the (power, head)
    # channels are evaluated as one batched attention
    masks_b = np.repeat(masks, p.heads, axis=0)
    out = None
    for i, hs in enumerate(hidden_states):
        b0 = i * n_pow
        heads = [(b0 + k, h) for k in range(n_pow) for h in range(p.heads)]
        wq = ad.stack([p.wq[b][h] for b, h in heads])
        wk = ad.stack([p.wk[b][h] for b, h in heads])
        wv = ad.stack([p.wv[b][h] for b, h in heads])
        q = ad.matmul(hs, wq)
        k = ad.matmul(hs, wk)
        v = ad.matmul(hs, wv)
        att = ad.masked_softmax(
            ad.multiply(ad.matmul(q, ad.swapaxes(k, -1, -2)), scale), masks_b)
        gram = ad.multiply(ad.matmul(v, ad.swapaxes(v, -1, -2)), 1.0 / p.head_dim)
        mix = ad.reshape(p.proj_w[b0 * p.heads:(b0 + n_pow) * p.heads],
                         (len(heads), 1, 1))
        contrib = ad.tsum(ad.multiply(ad.multiply(att, gram), mix), axis=0)
        out = contrib if out is None else ad.add(out, contrib)
    return ad.add(out, p.proj_b)


def _rows(x) -> int:
    return (x.value if isinstance(x, Tensor) else np.asarray(x)).shape[0]


# ---------------------------------------------------------------------------
# Losses

def cross_entropy(logits: Tensor, labels: Array) -> Tensor:
    """Mean softmax cross-entropy; the row max is detached (exact a.e.)."""
    n = logits.value.shape[0]
    rowmax = logits.value.max(axis=1, keepdims=True)
    z = ad.add(logits, -rowmax)
    lse = ad.log(ad.tsum(ad.exp(z), axis=1))
    picked = z[(np.arange(n), labels)]
    return ad.tmean(ad.add(lse, ad.negate(picked)))


def bce_with_logits(logits: Tensor, targets: Array) -> Tensor:
    """Mean binary cross-entropy computed from logits: softplus(z) - t*z."""
    return ad.tmean(ad.add(ad.softplus(logits), ad.negate(ad.multiply(logits, targets))))


# ---------------------------------------------------------------------------
# Finite-difference oracle

def finite_diff_grad(loss_fn, params: list[Tensor], step: float) -> list[Array]:
    """Central-difference gradient of loss_fn() w.r.t. each parameter tensor.

    loss_fn reads the live parameter values; entries are nudged in place
    and restored. Non-finite losses abort.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    grads = []
    for p in params:
        flat = p.value.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(loss_fn())
            flat[i] = orig - step
            lo = float(loss_fn())
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError("non-finite loss during finite differences")
            g[i] = (hi - lo) / (2.0 * step)
        grads.append(g.reshape(p.value.shape))
    return grads


# ---------------------------------------------------------------------------
# Checkpoint plumbing

def mlp_state(prefix: str, p: MlpParams) -> dict[str, Array]:
    out: dict[str, Array] = {}
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        out[f"{prefix}.w{i}"] = w.value
        out[f"{prefix}.b{i}"] = b.value
    return out


def mlp_from_state(state: dict[str, Array], prefix: str,
                   head: str = "identity") -> MlpParams:
    weights, biases = [], []
    i = 0
    while f"{prefix}.w{i}" in state:
        weights.append(Tensor(state[f"{prefix}.w{i}"]))
        biases.append(Tensor(state[f"{prefix}.b{i}"]))
        i += 1
    if not weights:
        raise ValueError(f"no tensors under prefix {prefix!r}")
    return MlpParams(weights, biases, head)


def gnn_state(prefix: str, p: GnnParams) -> dict[str, Array]:
    return {f"{prefix}.w{i}": w.value for i, w in enumerate(p.weights)}


def gnn_from_state(state: dict[str, Array], prefix: str,
                   dropout: float = 0.0) -> GnnParams:
    weights = []
    i = 0
    while f"{prefix}.w{i}" in state:
        weights.append(Tensor(state[f"{prefix}.w{i}"]))
        i += 1
    if not weights:
        raise ValueError(f"no tensors under prefix {prefix!r}")
    return GnnParams(weights, weights[-1].value.shape[1], dropout)


def max_rel_error(analytic: list[Array], numeric: list[Array]) -> float:
    """Worst coordinate disagreement relative to the gradient's own scale."""
    scale = max(max(np.abs(a).max(initial=0.0) for a in analytic),
                max(np.abs(b).max(initial=0.0) for b in numeric), 1e-8)
    worst = 0.0
    for a, b in zip(analytic, numeric):
        worst = max(worst, float(np.abs(a - b).max(initial=0.0)))
    return worst / scale
