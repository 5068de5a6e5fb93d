"""Domain discrimination, classifier-based density-ratio estimation, the
positive-output guidance networks, and the log-gradient used to steer
reverse diffusion toward the target domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .graphs import AugmentedGraph, Graph
from .layers import (GnnParams, MlpParams, bce_with_logits, gcn_layer,
                     gnn_from_state, gnn_state, init_gnn, init_mlp, mlp_apply,
                     mlp_from_state, mlp_preact, mlp_state)
from .sde import (DivergenceError, EPS_T, VeSchedule, perturb,
                  relaxed_adjacency, select_subset)

Array = np.ndarray

CLF_CLAMP = 1e-4  # bounds (1 - y)/y away from 0 and infinity


@dataclass
class ClassifierConfig:
    epochs: int = 200
    lr: float = 1e-2
    hidden: int = 64
    layers: int = 1
    holdout: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.holdout < 1.0:
            raise ValueError("holdout fraction must lie in [0, 1)")


@dataclass
class DomainClassifier:
    """GNN encoder + MLP readout; y(x) in (0,1) is source-membership."""

    gnn: GnnParams
    readout: MlpParams
    train_accuracy: float = float("nan")
    holdout_accuracy: float = float("nan")

    def tensors(self) -> list[Tensor]:
        return self.gnn.tensors() + self.readout.tensors()


def _classifier_logits(clf: DomainClassifier, features: Array,
                       adjacency: Array) -> Tensor:
    h = Tensor(np.asarray(features, dtype=np.float64))
    for w in clf.gnn.weights:
        h = gcn_layer(h, adjacency, w)
    z = mlp_preact(clf.readout, h)
    return ad.reshape(z, (z.value.shape[0],))


def classifier_prob(clf: DomainClassifier, features: Array,
                    adjacency: Array) -> Array:
    """Per-node probability of source membership."""
    z = _classifier_logits(clf, features, adjacency).value
    return 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))


def train_domain_classifier(source: Graph, target: Graph,
                            cfg: ClassifierConfig) -> DomainClassifier:
    """BCE over both node sets (source = 1); balanced so y is calibrated
    for equal domain priors, which the ratio rule assumes."""
    if source.n == 0 or target.n == 0:
        raise ValueError("both graphs must be nonempty")
    if source.f != target.f:
        raise ValueError(f"feature width mismatch: {source.f} vs {target.f}")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    gnn = init_gnn(rng, source.f, cfg.hidden, cfg.layers)
    readout = init_mlp(rng, [cfg.hidden, cfg.hidden, 1], head="sigmoid")
    clf = DomainClassifier(gnn, readout)

    def split(n: int) -> tuple[Array, Array]:
        held = rng.choice(n, size=int(np.floor(cfg.holdout * n)), replace=False)
        mask = np.zeros(n, dtype=bool)
        mask[held] = True
        return np.nonzero(~mask)[0], np.nonzero(mask)[0]

    train_s, held_s = split(source.n)
    train_t, held_t = split(target.n)
    opt = Adam(clf.tensors(), cfg.lr)
    with ad.gc_paused():
        for _ in range(cfg.epochs):
            zs = _classifier_logits(clf, source.features, source.adjacency)
            zt = _classifier_logits(clf, target.features, target.adjacency)
            loss = ad.multiply(
                ad.add(bce_with_logits(zs[train_s], np.ones(train_s.size)),
                       bce_with_logits(zt[train_t], np.zeros(train_t.size))), 0.5)
            opt.zero_grad()
            loss.backward()
            opt.step()

    ys = classifier_prob(clf, source.features, source.adjacency)
    yt = classifier_prob(clf, target.features, target.adjacency)

    def accuracy(idx_s: Array, idx_t: Array) -> float:
        hits = (ys[idx_s] > 0.5).sum() + (yt[idx_t] <= 0.5).sum()
        total = idx_s.size + idx_t.size
        return float(hits) / total if total else float("nan")

    clf.train_accuracy = accuracy(train_s, train_t)
    clf.holdout_accuracy = accuracy(held_s, held_t)
    return clf


def density_ratio(clf: DomainClassifier, features: Array, adjacency: Array,
                  s_mc: int, rng: np.random.Generator | None = None) -> Array:
    """Per-node target/source ratio (1 - y)/y averaged over s_mc classifier
    evaluations; with a deterministic classifier the draws coincide. y is
    clamped to [CLF_CLAMP, 1 - CLF_CLAMP] before the ratio."""
    if s_mc < 1:
        raise ValueError("s_mc must be at least 1")
    acc = np.zeros(np.asarray(features).shape[0])
    for _ in range(s_mc):
        y = np.clip(classifier_prob(clf, features, adjacency),
                    CLF_CLAMP, 1.0 - CLF_CLAMP)
        acc += (1.0 - y) / y
    return acc / s_mc


# ---------------------------------------------------------------------------
# Guidance networks

@dataclass
class GuidanceModel:
    """Row-wise positive estimators of the conditional density ratio."""

    q1: MlpParams
    q2: MlpParams
    s_mc: int = 16

    def tensors(self) -> list[Tensor]:
        return self.q1.tensors() + self.q2.tensors()


def init_guidance(rng: np.random.Generator, in_width: int, n: int,
                  hidden: int = 512, s_mc: int = 16) -> GuidanceModel:
    q1 = init_mlp(rng, [in_width + 1, hidden, hidden, 1], head="softplus")
    q2 = init_mlp(rng, [n + 1, hidden, hidden, 1], head="softplus")
    return GuidanceModel(q1, q2, s_mc)


@dataclass
class GuidanceTrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    alpha: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def train_guidance(source: AugmentedGraph, clf: DomainClassifier,
                   gm: GuidanceModel, s: VeSchedule,
                   cfg: GuidanceTrainConfig) -> tuple[GuidanceModel, list[dict]]:
    """Regress both heads onto the clean-graph per-node density ratio over
    samples of the forward process."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    ratios = density_ratio(clf, source.xt[:, :source.f], source.adjacency,
                           gm.s_mc, rng)
    targets = ratios.reshape(-1, 1)
    scaled = AugmentedGraph(source.xt, relaxed_adjacency(source.adjacency),
                            source.f, source.c)
    opt = Adam(gm.tensors(), cfg.lr)
    trace: list[dict] = []
    with ad.gc_paused():
        for epoch in range(cfg.epochs):
            t = rng.uniform(EPS_T, 1.0)
            subset = select_subset(scaled.n, cfg.alpha, rng)
            state = perturb(scaled, t, subset, s, rng)
            tcol = np.full((scaled.n, 1), t)
            out1 = mlp_apply(gm.q1, np.concatenate([state.xt, tcol], axis=1))
            out2 = mlp_apply(gm.q2, np.concatenate([state.at, tcol], axis=1))
            loss1 = ad.tmean(ad.square(ad.add(out1, -targets)))
            loss2 = ad.tmean(ad.square(ad.add(out2, -targets)))
            loss = ad.add(loss1, loss2)
            l1, l2 = loss1.item(), loss2.item()
            if not np.isfinite(l1 + l2):
                raise DivergenceError(
                    f"non-finite guidance loss at epoch {epoch}, t = {t:.6f}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            trace.append({"epoch": epoch, "t": t, "loss_feat": l1, "loss_adj": l2})
    return gm, trace


def classifier_state(clf: DomainClassifier) -> dict[str, Array]:
    out = {"meta": np.array([clf.train_accuracy, clf.holdout_accuracy])}
    out.update(gnn_state("gnn", clf.gnn))
    out.update(mlp_state("readout", clf.readout))
    return out


def classifier_from_state(state: dict[str, Array]) -> DomainClassifier:
    train_acc, holdout_acc = (float(v) for v in state["meta"])
    return DomainClassifier(gnn_from_state(state, "gnn"),
                            mlp_from_state(state, "readout", head="sigmoid"),
                            train_acc, holdout_acc)


def guidance_state(gm: GuidanceModel) -> dict[str, Array]:
    out = {"meta": np.array([gm.s_mc], dtype=np.float64)}
    out.update(mlp_state("q1", gm.q1))
    out.update(mlp_state("q2", gm.q2))
    return out


def guidance_from_state(state: dict[str, Array]) -> GuidanceModel:
    return GuidanceModel(mlp_from_state(state, "q1", head="softplus"),
                         mlp_from_state(state, "q2", head="softplus"),
                         int(state["meta"][0]))


_LOG_FLOOR = 1e-30  # keeps log total if softplus underflows to exactly 0


def guidance_gradient(gm: GuidanceModel, state) -> tuple[Array, Array]:
    """Input gradients of log q1 / log q2 by reverse accumulation; the
    adjacency gradient is symmetrized with a zero diagonal."""
    n, width = state.xt.shape
    tcol = np.full((n, 1), state.t)

    xin = Tensor(np.concatenate([state.xt, tcol], axis=1))
    out = ad.tsum(ad.log(ad.add(mlp_apply(gm.q1, xin), _LOG_FLOOR)))
    out.backward()
    feat_grad = xin.grad[:, :width]

    ain = Tensor(np.concatenate([state.at, tcol], axis=1))
    out2 = ad.tsum(ad.log(ad.add(mlp_apply(gm.q2, ain), _LOG_FLOOR)))
    out2.backward()
    raw = ain.grad[:, :n]
    adj_grad = 0.5 * (raw + raw.T)
    np.fill_diagonal(adj_grad, 0.0)

    if not (np.isfinite(feat_grad).all() and np.isfinite(adj_grad).all()):
        raise DivergenceError("non-finite guidance gradient")
    return feat_grad, adj_grad
