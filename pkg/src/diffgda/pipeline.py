"""End-to-end adaptation: guided graph generation, kernel two-sample
alignment, node-classifier training on the generated graph, and F1
evaluation against held-out target labels.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .checkpoint import save_checkpoint
from .graphs import AugmentedGraph, Graph, augment, recover_labels, save_graph
from .guidance import (ClassifierConfig, GuidanceTrainConfig, classifier_state,
                       guidance_state, guidance_gradient, init_guidance,
                       train_domain_classifier, train_guidance)
from .layers import (cross_entropy, dropout_mask, gcn_layer, gcn_norm,
                     glorot_uniform)
from .score import (ScoreModel, ScoreTrainConfig, init_score_model, score_pair,
                    score_state, train_score)
from .sde import (DivergenceError, VeSchedule, perturb, quantize_adjacency,
                  relaxed_adjacency, select_subset, reverse_step)

Array = np.ndarray

LR_CHOICES = (1e-4, 1e-3, 1e-2)


class PipelineStageError(RuntimeError):
    """Failure in one pipeline stage; the message carries the stage label."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage


@dataclass
class TrainConfig:
    """Hyperparameters of the full adaptation run."""

    alpha: float = 0.5
    eta: float = 0.1
    t_steps: int = 50
    lr: float = 1e-3
    hidden: int = 64
    dropout: float = 0.2
    epochs: int = 150
    rounds: int = 5
    s_mc: int = 16
    seed: int = 0
    score_epochs: int = 300
    guidance_epochs: int = 100
    clf_epochs: int = 200
    sigma_min: float = 0.001
    sigma_max: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha = {self.alpha} outside [0, 1]")
        if not 0.0 <= self.eta <= 0.5:
            raise ValueError(f"eta = {self.eta} outside [0, 0.5]")
        if not 1 <= self.t_steps <= 150:
            raise ValueError(f"t_steps = {self.t_steps} outside [1, 150]")
        if self.lr not in LR_CHOICES:
            raise ValueError(f"lr = {self.lr} not one of {LR_CHOICES}")
        if self.hidden < 1:
            raise ValueError("hidden width must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout = {self.dropout} outside [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.rounds < 1:
            raise ValueError("rounds must be positive")
        if self.s_mc < 1:
            raise ValueError("s_mc must be positive")
        if not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")

    def schedule(self) -> VeSchedule:
        return VeSchedule(self.sigma_min, self.sigma_max, self.t_steps)


@dataclass
class Metrics:
    """Per-round best F1 scores plus their mean and standard deviation."""

    mi_rounds: list[float]
    ma_rounds: list[float]
    mi_last: list[float]
    ma_last: list[float]
    mi_mean: float = field(init=False)
    mi_std: float = field(init=False)
    ma_mean: float = field(init=False)
    ma_std: float = field(init=False)

    def __post_init__(self):
        self.mi_mean = float(np.mean(self.mi_rounds))
        self.mi_std = float(np.std(self.mi_rounds))
        self.ma_mean = float(np.mean(self.ma_rounds))
        self.ma_std = float(np.std(self.ma_rounds))

    def summary(self) -> dict:
        return {"mi_mean": self.mi_mean, "mi_std": self.mi_std,
                "ma_mean": self.ma_mean, "ma_std": self.ma_std}


# ---------------------------------------------------------------------------
# Maximum mean discrepancy

@dataclass(frozen=True)
class MmdKernel:
    """Sum of Gaussian kernels exp(-d^2 / (2 bw^2)) over the bandwidths."""

    bandwidths: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if not self.bandwidths or any(bw <= 0.0 for bw in self.bandwidths):
            raise ValueError("bandwidths must be positive")


def _sqdists(a: Array, b: Array) -> Array:
    aa = (a * a).sum(axis=1)
    bb = (b * b).sum(axis=1)
    return np.maximum(aa[:, None] + bb[None, :] - 2.0 * (a @ b.T), 0.0)


def mmd(a: Array, b: Array, kern: MmdKernel) -> float:
    """Biased V-statistic estimate of the squared discrepancy (>= 0)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"sample dims disagree: {a.shape} vs {b.shape}")
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise ValueError("need at least one sample on each side")
    daa, dbb, dab = _sqdists(a, a), _sqdists(b, b), _sqdists(a, b)
    total = 0.0
    for bw in kern.bandwidths:
        s = 2.0 * bw * bw
        total += (np.exp(-daa / s).mean() + np.exp(-dbb / s).mean()
                  - 2.0 * np.exp(-dab / s).mean())
    return max(total, 0.0)


def mmd_loss(a: Tensor, b: Tensor, kern: MmdKernel) -> Tensor:
    """Differentiable counterpart of mmd() for the alignment loss."""

    def sqd(x: Tensor, y: Tensor) -> Tensor:
        xx = ad.tsum(ad.square(x), axis=1, keepdims=True)
        yy = ad.reshape(ad.tsum(ad.square(y), axis=1), (1, y.value.shape[0]))
        return ad.add(ad.add(xx, yy), ad.multiply(ad.matmul(x, ad.transpose(y)), -2.0))

    daa, dbb, dab = sqd(a, a), sqd(b, b), sqd(a, b)
    total = None
    for bw in kern.bandwidths:
        s = -1.0 / (2.0 * bw * bw)
        term = ad.add(
            ad.add(ad.tmean(ad.exp(ad.multiply(daa, s))),
                   ad.tmean(ad.exp(ad.multiply(dbb, s)))),
            ad.multiply(ad.tmean(ad.exp(ad.multiply(dab, s))), -2.0))
        total = term if total is None else ad.add(total, term)
    return total


def median_kernel(a: Array, b: Array, factors=(0.5, 1.0, 2.0)) -> MmdKernel:
    """Multi-bandwidth kernel around the median cross-pair distance."""
    med = float(np.median(np.sqrt(_sqdists(a, b))))
    if med <= 0.0:
        med = 1.0
    return MmdKernel(tuple(f * med for f in factors))


# ---------------------------------------------------------------------------
# F1 evaluation

def evaluate_f1(pred: Array, truth: Array, c: int) -> tuple[float, float]:
    """Micro (pooled) and macro (unweighted per-class mean) F1.

    Classes absent from both pred and truth contribute F1 = 0.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    for name, v in (("pred", pred), ("truth", truth)):
        if ((v < 0) | (v >= c)).any():
            raise ValueError(f"{name} entries outside [0, {c})")
    tp = np.zeros(c)
    fp = np.zeros(c)
    fn = np.zeros(c)
    for k in range(c):
        tp[k] = ((pred == k) & (truth == k)).sum()
        fp[k] = ((pred == k) & (truth != k)).sum()
        fn[k] = ((pred != k) & (truth == k)).sum()
    micro = tp.sum() / (tp.sum() + 0.5 * (fp.sum() + fn.sum()))
    denom = 2.0 * tp + fp + fn
    per_class = np.divide(2.0 * tp, denom, out=np.zeros(c), where=denom > 0)
    return float(micro), float(per_class.mean())


# ---------------------------------------------------------------------------
# Guided generation

def generate_graph(source: AugmentedGraph, model: ScoreModel,
                   guide, cfg: TrainConfig, s: VeSchedule,
                   rng: np.random.Generator) -> Graph:
    """Noise an alpha-subset of the source to t = 1, run the guided reverse
    chain to t = 0, quantize the adjacency, and split features from labels."""
    if source.c < 1:
        raise ValueError("generation needs at least one label channel")
    n = source.n
    subset = select_subset(n, cfg.alpha, rng)
    scaled = AugmentedGraph(source.xt, relaxed_adjacency(source.adjacency),
                            source.f, source.c)
    state = perturb(scaled, 1.0, subset, s, rng)

    score_cache: dict = {}

    def scores(st):
        if score_cache.get("key") != id(st):
            score_cache["key"] = id(st)
            score_cache["val"] = score_pair(model, st)
        return score_cache["val"]

    guide_cache: dict = {}

    def guides(st):
        if guide_cache.get("key") != id(st):
            guide_cache["key"] = id(st)
            guide_cache["val"] = guidance_gradient(guide, st)
        return guide_cache["val"]

    feat_guide = (lambda st: guides(st)[0]) if guide is not None else None
    adj_guide = (lambda st: guides(st)[1]) if guide is not None else None

    dt = 1.0 / cfg.t_steps
    for step in range(cfg.t_steps):
        step_dt = state.t if step == cfg.t_steps - 1 else dt
        try:
            state = reverse_step(state, step_dt,
                                 lambda st: scores(st)[0],
                                 lambda st: scores(st)[1],
                                 feat_guide, adj_guide, s, rng)
        except DivergenceError as e:
            raise DivergenceError(f"reverse step {step}: {e}") from e

    adjacency = quantize_adjacency(state.at)
    features = state.xt[:, :source.f]
    labels = recover_labels(state.xt, source.f, source.c)
    return Graph(features, adjacency, labels, source.c)


# ---------------------------------------------------------------------------
# Classifier training on the generated graph

def _gnn_forward(w1: Tensor, w2: Tensor, features: Array, adjacency: Array,
                 mask: Array | None = None) -> tuple[Tensor, Tensor]:
    """Two-layer graph classifier; returns (hidden embedding, logits)."""
    h1 = gcn_layer(features, adjacency, w1)
    if mask is not None:
        h1 = ad.multiply(h1, mask)
    logits = ad.matmul(ad.matmul(gcn_norm(adjacency), h1), w2)
    return h1, logits


def gnn_embed(params: dict[str, Array], g: Graph) -> tuple[Array, Array]:
    """Evaluation forward pass: (hidden embedding, logits) as arrays."""
    h1, logits = _gnn_forward(Tensor(params["w1"]), Tensor(params["w2"]),
                              g.features, g.adjacency)
    return h1.value, logits.value


def _target_scores(w1: Tensor, w2: Tensor, target: Graph) -> tuple[float, float]:
    _, logits = _gnn_forward(w1, w2, target.features, target.adjacency)
    pred = np.argmax(logits.value, axis=1)
    labeled = target.labels >= 0
    if not labeled.any():
        return float("nan"), float("nan")
    return evaluate_f1(pred[labeled], target.labels[labeled], target.c)


def train_target_gnn(gen: Graph, target: Graph, cfg: TrainConfig,
                     seed_key=None) -> tuple[dict[str, Array], Metrics, list[dict]]:
    """Train the shared classifier on the generated graph with the kernel
    alignment term, tracking per-epoch target F1; per round the maxima over
    epochs are recorded, then averaged over rounds."""
    if gen.c != target.c:
        raise ValueError(f"class count mismatch: {gen.c} vs {target.c}")
    if gen.f != target.f:
        raise ValueError(f"feature width mismatch: {gen.f} vs {target.f}")
    if not gen.fully_labeled():
        raise ValueError("training graph must be fully labeled")
    master = np.random.SeedSequence(cfg.seed if seed_key is None else seed_key)
    round_seeds = master.spawn(cfg.rounds)
    records: list[dict] = []
    mi_rounds, ma_rounds, mi_last, ma_last = [], [], [], []
    params: dict[str, Array] = {}
    for r in range(cfg.rounds):
        rng = np.random.default_rng(round_seeds[r])
        w1 = Tensor(glorot_uniform(rng, gen.f, cfg.hidden))
        w2 = Tensor(glorot_uniform(rng, cfg.hidden, gen.c))
        opt = Adam([w1, w2], cfg.lr)
        best_mi, best_ma = 0.0, 0.0
        mi = ma = float("nan")
        for epoch in range(cfg.epochs):
            mask = dropout_mask(rng, (gen.n, cfg.hidden), cfg.dropout)
            h1_gen, logits = _gnn_forward(w1, w2, gen.features, gen.adjacency, mask)
            loss_ce = cross_entropy(logits, gen.labels)
            loss_mmd_val = 0.0
            loss = loss_ce
            if cfg.eta > 0.0:
                mask_t = dropout_mask(rng, (target.n, cfg.hidden), cfg.dropout)
                h1_tgt, _ = _gnn_forward(w1, w2, target.features,
                                         target.adjacency, mask_t)
                kern = median_kernel(h1_gen.value, h1_tgt.value)
                loss_mmd = mmd_loss(h1_gen, h1_tgt, kern)
                loss_mmd_val = loss_mmd.item()
                loss = ad.add(loss_ce, ad.multiply(loss_mmd, cfg.eta))
            opt.zero_grad()
            loss.backward()
            opt.step()
            mi, ma = _target_scores(w1, w2, target)
            best_mi = max(best_mi, mi) if np.isfinite(mi) else best_mi
            best_ma = max(best_ma, ma) if np.isfinite(ma) else best_ma
            records.append({"round": r, "epoch": epoch, "mi_f1": mi, "ma_f1": ma,
                            "loss_ce": loss_ce.item(), "loss_mmd": loss_mmd_val})
        mi_rounds.append(best_mi)
        ma_rounds.append(best_ma)
        mi_last.append(mi)
        ma_last.append(ma)
        params = {"w1": w1.value, "w2": w2.value}
    return params, Metrics(mi_rounds, ma_rounds, mi_last, ma_last), records


def source_only_baseline(source: Graph, target: Graph,
                         cfg: TrainConfig) -> Metrics:
    """Plain supervised training on the source graph, evaluated on the
    target under the same best-over-epochs protocol. Shares the pipeline's
    classifier-stage seed stream so paired comparisons are exact."""
    plain = replace(cfg, eta=0.0)
    _, metrics, _ = train_target_gnn(source, target, plain,
                                     seed_key=_stage_keys(cfg.seed)["gnn"])
    return metrics


# ---------------------------------------------------------------------------
# Staged pipeline

def _stage_keys(seed: int) -> dict[str, int]:
    keys = np.random.SeedSequence(seed).generate_state(5)
    return {"score": int(keys[0]), "clf": int(keys[1]), "guide": int(keys[2]),
            "generate": int(keys[3]), "gnn": int(keys[4])}


def _stage(label: str, fn):
    try:
        return fn()
    except Exception as e:
        raise PipelineStageError(label, e) from e


def write_jsonl(path, rows: list[dict]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def run_pipeline(source: Graph, target: Graph, cfg: TrainConfig,
                 out_dir=None) -> tuple[Metrics, dict]:
    """Full staged run: augment, score training, guidance training, guided
    generation, classifier training; optionally persists all artifacts."""
    if source.f != target.f:
        raise ValueError(f"feature width mismatch: {source.f} vs {target.f}")
    if source.c != target.c:
        raise ValueError(f"class count mismatch: {source.c} vs {target.c}")
    keys = _stage_keys(cfg.seed)
    sched = cfg.schedule()

    aug = _stage("augment", lambda: augment(source))

    def do_score():
        model = init_score_model(np.random.default_rng(keys["score"]),
                                 aug.f + aug.c, hidden=cfg.hidden)
        return train_score(aug, model, ScoreTrainConfig(
            epochs=cfg.score_epochs, alpha=cfg.alpha, lr=1e-3,
            seed=keys["score"]), sched)

    model, score_trace = _stage("train-score", do_score)

    def do_guidance():
        clf = train_domain_classifier(source, target, ClassifierConfig(
            hidden=cfg.hidden, epochs=cfg.clf_epochs, seed=keys["clf"]))
        gm = init_guidance(np.random.default_rng(keys["guide"]),
                           aug.f + aug.c, aug.n, s_mc=cfg.s_mc)
        gm, trace = train_guidance(aug, clf, gm, sched, GuidanceTrainConfig(
            epochs=cfg.guidance_epochs, alpha=cfg.alpha, seed=keys["guide"]))
        return clf, gm, trace

    clf, gm, guidance_trace = _stage("train-guidance", do_guidance)

    gen = _stage("generate", lambda: generate_graph(
        aug, model, gm, cfg, sched, np.random.default_rng(keys["generate"])))

    params, metrics, records = _stage("adapt", lambda: train_target_gnn(
        gen, target, cfg, seed_key=keys["gnn"]))

    artifacts = {"generated": gen, "metrics": metrics, "records": records,
                 "score_trace": score_trace, "guidance_trace": guidance_trace,
                 "classifier": clf}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            "score_ckpt": os.path.join(out_dir, "score.ckpt"),
            "guidance_ckpt": os.path.join(out_dir, "guidance.ckpt"),
            "classifier_ckpt": os.path.join(out_dir, "classifier.ckpt"),
            "gnn_ckpt": os.path.join(out_dir, "gnn.ckpt"),
            "generated_graph": os.path.join(out_dir, "generated.graph"),
            "metrics": os.path.join(out_dir, "metrics.jsonl"),
            "score_trace": os.path.join(out_dir, "score_trace.jsonl"),
            "guidance_trace": os.path.join(out_dir, "guidance_trace.jsonl"),
            "embeddings": os.path.join(out_dir, "embeddings.txt"),
        }
        save_checkpoint(paths["score_ckpt"], score_state(model))
        save_checkpoint(paths["guidance_ckpt"], guidance_state(gm))
        save_checkpoint(paths["classifier_ckpt"], classifier_state(clf))
        save_checkpoint(paths["gnn_ckpt"], params)
        save_graph(gen, paths["generated_graph"])
        write_jsonl(paths["metrics"], records + [metrics.summary()])
        write_jsonl(paths["score_trace"], score_trace)
        write_jsonl(paths["guidance_trace"], guidance_trace)
        embeddings, _ = gnn_embed(params, target)
        np.savetxt(paths["embeddings"], embeddings, fmt="%.17g")
        artifacts["paths"] = paths
    return metrics, artifacts
