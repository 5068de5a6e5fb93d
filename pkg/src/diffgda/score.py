"""Two-headed score network and its denoising score-matching training loop.

The feature head reads the concatenated GCN hidden states (plus a time
channel) and regresses the conditional feature score; the adjacency head
reads masked multi-head attention maps over adjacency powers plus the raw
relaxed adjacency value and the time channel, per entry, and regresses the
conditional adjacency score. Both heads share the GCN trunk.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .graphs import AugmentedGraph
from .layers import (GmhParams, GnnParams, MlpParams, gcn_layer, gmh_attention,
                     gnn_from_state, gnn_state, init_gmh, init_gnn, init_mlp,
                     mlp_apply, mlp_from_state, mlp_state)
from .sde import (DivergenceError, EPS_T, QUANT_THRESHOLD, VeSchedule,
                  incident_pairs, marginal_var, perturb, relaxed_adjacency,
                  select_subset, score_target)

Array = np.ndarray


@dataclass
class ScoreModel:
    gnn: GnnParams
    feat_head: MlpParams
    gmh: GmhParams
    adj_head: MlpParams
    levels: int
    powers: int
    in_width: int

    def tensors(self) -> list[Tensor]:
        return (self.gnn.tensors() + self.feat_head.tensors()
                + self.gmh.tensors() + self.adj_head.tensors())


def init_score_model(rng: np.random.Generator, in_width: int, hidden: int = 64,
                     levels: int = 2, powers: int = 2, heads: int = 4,
                     head_dim: int = 8, feat_hidden: int = 64,
                     adj_hidden: int = 32) -> ScoreModel:
    gnn = init_gnn(rng, in_width, hidden, levels)
    state_widths = [in_width] + [hidden] * levels
    feat_in = sum(state_widths) + 1
    feat_head = init_mlp(rng, [feat_in, feat_hidden, in_width])
    gmh_dims = [w for w in state_widths for _ in range(powers)]
    gmh = init_gmh(rng, gmh_dims, heads, head_dim)
    adj_head = init_mlp(rng, [3, adj_hidden, 1])
    return ScoreModel(gnn, feat_head, gmh, adj_head, levels, powers, in_width)


def binarize_adjacency(at: Array) -> Array:
    """Structure view of a relaxed adjacency for propagation and masks."""
    a = (np.asarray(at) >= QUANT_THRESHOLD).astype(np.float64)
    np.fill_diagonal(a, 0.0)
    return a


def adjacency_power_list(a_bin: Array, powers: int) -> list[Array]:
    out = [a_bin]
    for _ in range(powers - 1):
        out.append(out[-1] @ a_bin)
    return out


def forward_scores(m: ScoreModel, state) -> tuple[Tensor, Tensor]:
    """Both heads' outputs as graph nodes (for training and evaluation)."""
    xt = np.asarray(state.xt)
    n = xt.shape[0]
    if xt.shape[1] != m.in_width:
        raise ValueError(f"state width {xt.shape[1]} != model width {m.in_width}")
    a_bin = binarize_adjacency(state.at)
    tcol = np.full((n, 1), state.t)

    hs: list = [Tensor(xt)]
    for w in m.gnn.weights:
        hs.append(gcn_layer(hs[-1], a_bin, w))

    feat_in = ad.concat(hs + [tcol], axis=1)
    feat = mlp_apply(m.feat_head, feat_in)

    apow = adjacency_power_list(a_bin, m.powers)
    edge_logits = gmh_attention(m.gmh, hs, apow)
    pair_in = ad.concat([ad.reshape(edge_logits, (n * n, 1)),
                         state.at.reshape(n * n, 1),
                         np.full((n * n, 1), state.t)], axis=1)
    raw = ad.reshape(mlp_apply(m.adj_head, pair_in), (n, n))
    sym = ad.multiply(ad.add(raw, ad.transpose(raw)), 0.5)
    adj = ad.multiply(sym, 1.0 - np.eye(n))
    return feat, adj


def score_features(m: ScoreModel, state) -> Array:
    out = forward_scores(m, state)[0].value
    if not np.isfinite(out).all():
        raise DivergenceError("non-finite feature score")
    return out


def score_adjacency(m: ScoreModel, state) -> Array:
    out = forward_scores(m, state)[1].value
    if not np.isfinite(out).all():
        raise DivergenceError("non-finite adjacency score")
    return out


def score_pair(m: ScoreModel, state) -> tuple[Array, Array]:
    feat, adj = forward_scores(m, state)
    if not (np.isfinite(feat.value).all() and np.isfinite(adj.value).all()):
        raise DivergenceError("non-finite score output")
    return feat.value, adj.value


def score_state(m: ScoreModel) -> dict[str, Array]:
    out = {"meta": np.array([m.levels, m.powers, m.gmh.heads, m.gmh.head_dim,
                             m.in_width], dtype=np.float64)}
    out.update(gnn_state("gnn", m.gnn))
    out.update(mlp_state("feat", m.feat_head))
    out.update(mlp_state("adj", m.adj_head))
    for b, block in enumerate(m.gmh.wq):
        for h, w in enumerate(block):
            out[f"gmh.q{b}.{h}"] = w.value
    for b, block in enumerate(m.gmh.wk):
        for h, w in enumerate(block):
            out[f"gmh.k{b}.{h}"] = w.value
    for b, block in enumerate(m.gmh.wv):
        for h, w in enumerate(block):
            out[f"gmh.v{b}.{h}"] = w.value
    out["gmh.proj_w"] = m.gmh.proj_w.value
    out["gmh.proj_b"] = m.gmh.proj_b.value
    return out


def score_from_state(state: dict[str, Array]) -> ScoreModel:
    levels, powers, heads, head_dim, in_width = (int(v) for v in state["meta"])
    gnn = gnn_from_state(state, "gnn")
    feat_head = mlp_from_state(state, "feat")
    adj_head = mlp_from_state(state, "adj")
    blocks = (levels + 1) * powers
    wq = [[Tensor(state[f"gmh.q{b}.{h}"]) for h in range(heads)] for b in range(blocks)]
    wk = [[Tensor(state[f"gmh.k{b}.{h}"]) for h in range(heads)] for b in range(blocks)]
    wv = [[Tensor(state[f"gmh.v{b}.{h}"]) for h in range(heads)] for b in range(blocks)]
    gmh = GmhParams(wq, wk, wv, Tensor(state["gmh.proj_w"]),
                    Tensor(state["gmh.proj_b"]), heads, head_dim)
    return ScoreModel(gnn, feat_head, gmh, adj_head, levels, powers, in_width)


@dataclass
class ScoreTrainConfig:
    epochs: int = 300
    alpha: float = 0.5
    lr: float = 1e-3
    weighting: str = "var"  # var | uniform
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.weighting not in ("var", "uniform"):
            raise ValueError(f"unknown weighting {self.weighting!r}")


def dsm_losses(m: ScoreModel, base: AugmentedGraph, t: float, subset: Array,
               state, s: VeSchedule, weighting: str = "var") -> tuple[Tensor, Tensor]:
    """Weighted denoising losses for one perturbed sample.

    The regression runs only over the perturbed entries: subset feature
    rows and subset-incident upper-triangle adjacency entries.
    """
    lam = marginal_var(s, t) if weighting == "var" else 1.0
    feat, adj = forward_scores(m, state)
    if subset.size:
        ft = score_target(base.xt[subset], state.xt[subset], t, s)
        diff = ad.add(feat[subset], -ft)
        loss_feat = ad.multiply(ad.tmean(ad.square(diff)), lam)
        iu, iv = incident_pairs(base.n, subset)
        at_ = score_target(base.adjacency[iu, iv], state.at[iu, iv], t, s)
        adiff = ad.add(adj[(iu, iv)], -at_)
        loss_adj = ad.multiply(ad.tmean(ad.square(adiff)), lam)
    else:
        loss_feat = Tensor(0.0)
        loss_adj = Tensor(0.0)
    return loss_feat, loss_adj


def train_score(source: AugmentedGraph, m: ScoreModel, cfg: ScoreTrainConfig,
                s: VeSchedule) -> tuple[ScoreModel, list[dict]]:
    """Stochastic DSM training on the source graph's forward process."""
    if source.xt.shape[1] != m.in_width:
        raise ValueError(f"source width {source.xt.shape[1]} != model width {m.in_width}")
    scaled = AugmentedGraph(source.xt, relaxed_adjacency(source.adjacency),
                            source.f, source.c)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    opt = Adam(m.tensors(), cfg.lr)
    trace: list[dict] = []
    with ad.gc_paused():
        for step in range(cfg.epochs):
            t = rng.uniform(EPS_T, 1.0)
            subset = select_subset(scaled.n, cfg.alpha, rng)
            state = perturb(scaled, t, subset, s, rng)
            loss_feat, loss_adj = dsm_losses(m, scaled, t, subset, state, s,
                                             cfg.weighting)
            loss = ad.add(loss_feat, loss_adj)
            lf, la = loss_feat.item(), loss_adj.item()
            if not np.isfinite(lf + la):
                raise DivergenceError(
                    f"non-finite training loss at step {step}, t = {t:.6f}, "
                    f"loss_feat = {lf}, loss_adj = {la}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            trace.append({"step": step, "t": t, "loss_feat": lf, "loss_adj": la})
    return m, trace
