"""Command-line entry point: config parsing, subcommand dispatch, artifact
persistence, and report rendering.

Exit codes: 0 success, 1 usage/config error, 2 runtime/numeric failure.
"""
from __future__ import annotations

import os
import sys


def _setup_threads():
    # DIFFGDA_THREADS caps BLAS worker parallelism; must land before numpy
    # first loads (0 or unset = auto).
    val = os.environ.get("DIFFGDA_THREADS", "")
    if val and val.strip() != "0" and "numpy" not in sys.modules:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, val.strip())


_setup_threads()

import argparse
import json
from dataclasses import dataclass, fields

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .graphs import (CsbmSpec, DomainShift, GraphParseError, augment,
                     circle_class_means, gen_csbm_pair, load_graph, save_graph)
from .guidance import (ClassifierConfig, GuidanceTrainConfig, classifier_state,
                       guidance_from_state, guidance_state, init_guidance,
                       train_domain_classifier, train_guidance)
from .pipeline import (LR_CHOICES, TrainConfig, evaluate_f1, generate_graph,
                       gnn_embed, run_pipeline, train_target_gnn, write_jsonl,
                       _stage_keys)
from .score import (ScoreTrainConfig, init_score_model, score_from_state,
                    score_state, train_score)


class ConfigError(ValueError):
    """Bad key, value, or range in configuration input."""


class UsageError(ValueError):
    """Bad command line."""


@dataclass
class RunConfig:
    """Full run configuration: training hyperparameters plus paths."""

    alpha: float = 0.5
    eta: float = 0.1
    t_steps: int = 50
    lr: float = 1e-3
    hidden: int = 64
    dropout: float = 0.2
    epochs: int = 150
    rounds: int = 5
    s_mc: int = 16
    sigma_min: float = 0.001
    sigma_max: float = 0.01
    score_epochs: int = 300
    guidance_epochs: int = 100
    clf_epochs: int = 200
    seed: int = 0
    guided: bool = True
    synth_n: int = 300
    synth_f: int = 8
    synth_c: int = 3
    synth_intra: float = 0.2
    synth_inter: float = 0.05
    synth_std: float = 1.0
    synth_rotate: float = 60.0
    synth_intra_delta: float = 0.0
    synth_inter_delta: float = 0.1
    source: str = ""
    target: str = ""
    out: str = ""

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            alpha=self.alpha, eta=self.eta, t_steps=self.t_steps, lr=self.lr,
            hidden=self.hidden, dropout=self.dropout, epochs=self.epochs,
            rounds=self.rounds, s_mc=self.s_mc, seed=self.seed,
            score_epochs=self.score_epochs,
            guidance_epochs=self.guidance_epochs, clf_epochs=self.clf_epochs,
            sigma_min=self.sigma_min, sigma_max=self.sigma_max)

    def csbm_spec(self) -> CsbmSpec:
        means = circle_class_means(self.synth_c, self.synth_f)
        return CsbmSpec(self.synth_n, self.synth_c, self.synth_intra,
                        self.synth_inter, means, self.synth_std,
                        DomainShift(self.synth_rotate, self.synth_intra_delta,
                                    self.synth_inter_delta))


# key -> (type tag, constraint); constraint is (lo, hi), a choice tuple,
# or None
_KEY_RULES = {
    "alpha": ("float", (0.0, 1.0)),
    "eta": ("float", (0.0, 0.5)),
    "t_steps": ("int", (1, 150)),
    "lr": ("choice", LR_CHOICES),
    "hidden": ("int", (1, 8192)),
    "dropout": ("float_open_hi", (0.0, 1.0)),
    "epochs": ("int", (1, 1_000_000)),
    "rounds": ("int", (1, 10_000)),
    "s_mc": ("int", (1, 1_000_000)),
    "sigma_min": ("float_open_lo", (0.0, 1e6)),
    "sigma_max": ("float_open_lo", (0.0, 1e6)),
    "score_epochs": ("int", (0, 10_000_000)),
    "guidance_epochs": ("int", (0, 10_000_000)),
    "clf_epochs": ("int", (0, 10_000_000)),
    "seed": ("int", (0, 2**63 - 1)),
    "guided": ("bool", None),
    "synth_n": ("int", (2, 1_000_000)),
    "synth_f": ("int", (1, 100_000)),
    "synth_c": ("int", (1, 10_000)),
    "synth_intra": ("float", (0.0, 1.0)),
    "synth_inter": ("float", (0.0, 1.0)),
    "synth_std": ("float_open_lo", (0.0, 1e6)),
    "synth_rotate": ("float", (-360.0, 360.0)),
    "synth_intra_delta": ("float", (-1.0, 1.0)),
    "synth_inter_delta": ("float", (-1.0, 1.0)),
    "source": ("str", None),
    "target": ("str", None),
    "out": ("str", None),
}


def _parse_value(key: str, raw: str):
    kind, constraint = _KEY_RULES[key]
    if kind == "str":
        return raw
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key} = {raw!r} is not a boolean")
    try:
        value = int(raw) if kind == "int" else float(raw)
    except ValueError:
        raise ConfigError(f"{key} = {raw!r} is not a number") from None
    if kind == "choice":
        if value not in constraint:
            raise ConfigError(f"{key} = {raw} not in {sorted(constraint)}")
        return value
    lo, hi = constraint
    if kind == "int" and not lo <= value <= hi:
        raise ConfigError(f"{key} = {raw} outside [{lo}, {hi}]")
    if kind == "float" and not lo <= value <= hi:
        raise ConfigError(f"{key} = {raw} outside [{lo}, {hi}]")
    if kind == "float_open_lo" and not lo < value <= hi:
        raise ConfigError(f"{key} = {raw} outside ({lo}, {hi}]")
    if kind == "float_open_hi" and not lo <= value < hi:
        raise ConfigError(f"{key} = {raw} outside [{lo}, {hi})")
    return value


def parse_config(path: str | None = None,
                 overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then `key = value` file entries, then flag overrides."""
    values: dict[str, object] = {}

    def absorb(key: str, raw: str, where: str):
        key = key.strip()
        if key not in _KEY_RULES:
            raise ConfigError(f"unknown key {key!r} in {where}")
        values[key] = _parse_value(key, raw.strip())

    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}") from None
        for ln, line in enumerate(lines, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"line {ln}: expected 'key = value'")
            key, raw = body.split("=", 1)
            absorb(key, raw, f"config line {ln}")
    for key, raw in (overrides or {}).items():
        absorb(key, str(raw), "overrides")

    cfg = RunConfig(**values)
    if not cfg.sigma_min < cfg.sigma_max:
        raise ConfigError(
            f"sigma_min = {cfg.sigma_min} must be below sigma_max = {cfg.sigma_max}")
    return cfg


# ---------------------------------------------------------------------------
# Subcommands

def _need_out(cfg: RunConfig) -> str:
    if not cfg.out:
        raise ConfigError("this command needs --out DIR")
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _load(path: str, role: str):
    if not path:
        raise ConfigError(f"this command needs --{role} PATH")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{role} graph file not found: {path}")
    return load_graph(path)


def _source_path(cfg: RunConfig) -> str:
    return cfg.source or os.path.join(cfg.out, "source.graph")


def _target_path(cfg: RunConfig) -> str:
    return cfg.target or os.path.join(cfg.out, "target.graph")


def cmd_gen_synth(cfg: RunConfig) -> int:
    out = _need_out(cfg)
    source, target = gen_csbm_pair(cfg.csbm_spec(), cfg.seed)
    src_path = os.path.join(out, "source.graph")
    tgt_path = os.path.join(out, "target.graph")
    save_graph(source, src_path)
    save_graph(target, tgt_path)
    print(f"wrote {src_path} ({source.n} nodes) and {tgt_path} ({target.n} nodes)")
    return 0


def cmd_train_score(cfg: RunConfig) -> int:
    out = _need_out(cfg)
    source = _load(_source_path(cfg), "source")
    aug = augment(source)
    keys = _stage_keys(cfg.seed)
    sched = cfg.train_config().schedule()
    model = init_score_model(np.random.default_rng(keys["score"]),
                             aug.f + aug.c, hidden=cfg.hidden)
    model, trace = train_score(aug, model, ScoreTrainConfig(
        epochs=cfg.score_epochs, alpha=cfg.alpha, seed=keys["score"]), sched)
    save_checkpoint(os.path.join(out, "score.ckpt"), score_state(model))
    write_jsonl(os.path.join(out, "score_trace.jsonl"), trace)
    print(f"wrote {out}/score.ckpt ({len(trace)} steps)")
    return 0


def cmd_train_guidance(cfg: RunConfig) -> int:
    out = _need_out(cfg)
    source = _load(_source_path(cfg), "source")
    target = _load(_target_path(cfg), "target")
    keys = _stage_keys(cfg.seed)
    sched = cfg.train_config().schedule()
    clf = train_domain_classifier(source, target, ClassifierConfig(
        hidden=cfg.hidden, epochs=cfg.clf_epochs, seed=keys["clf"]))
    aug = augment(source)
    gm = init_guidance(np.random.default_rng(keys["guide"]), aug.f + aug.c,
                       aug.n, s_mc=cfg.s_mc)
    gm, trace = train_guidance(aug, clf, gm, sched, GuidanceTrainConfig(
        epochs=cfg.guidance_epochs, alpha=cfg.alpha, seed=keys["guide"]))
    save_checkpoint(os.path.join(out, "classifier.ckpt"), classifier_state(clf))
    save_checkpoint(os.path.join(out, "guidance.ckpt"), guidance_state(gm))
    write_jsonl(os.path.join(out, "guidance_trace.jsonl"), trace)
    print(f"wrote {out}/guidance.ckpt "
          f"(classifier holdout accuracy {clf.holdout_accuracy:.3f})")
    return 0


def _require_ckpt(out: str, name: str) -> str:
    path = os.path.join(out, name)
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing checkpoint {path}; run the prior stage")
    return path


def cmd_generate(cfg: RunConfig) -> int:
    out = _need_out(cfg)
    source = _load(_source_path(cfg), "source")
    aug = augment(source)
    model = score_from_state(load_checkpoint(_require_ckpt(out, "score.ckpt")))
    guide = None
    if cfg.guided:
        guide = guidance_from_state(
            load_checkpoint(_require_ckpt(out, "guidance.ckpt")))
    keys = _stage_keys(cfg.seed)
    tc = cfg.train_config()
    gen = generate_graph(aug, model, guide, tc, tc.schedule(),
                         np.random.default_rng(keys["generate"]))
    path = os.path.join(out, "generated.graph")
    save_graph(gen, path)
    print(f"wrote {path}")
    return 0


def cmd_adapt(cfg: RunConfig) -> int:
    out = _need_out(cfg)
    gen_path = os.path.join(out, "generated.graph")
    if not os.path.exists(gen_path):
        raise FileNotFoundError(f"missing {gen_path}; run generate first")
    gen = load_graph(gen_path)
    target = _load(_target_path(cfg), "target")
    keys = _stage_keys(cfg.seed)
    params, metrics, records = train_target_gnn(gen, target, cfg.train_config(),
                                                seed_key=keys["gnn"])
    save_checkpoint(os.path.join(out, "gnn.ckpt"), params)
    write_jsonl(os.path.join(out, "metrics.jsonl"),
                records + [metrics.summary()])
    embeddings, _ = gnn_embed(params, target)
    np.savetxt(os.path.join(out, "embeddings.txt"), embeddings, fmt="%.17g")
    print(f"micro-F1 {metrics.mi_mean:.4f} +/- {metrics.mi_std:.4f}, "
          f"macro-F1 {metrics.ma_mean:.4f} +/- {metrics.ma_std:.4f}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    out = _need_out(cfg)
    params = load_checkpoint(_require_ckpt(out, "gnn.ckpt"))
    target = _load(_target_path(cfg), "target")
    _, logits = gnn_embed(params, target)
    pred = np.argmax(logits, axis=1)
    labeled = target.labels >= 0
    if not labeled.any():
        raise ValueError("target graph has no labeled nodes to score against")
    micro, macro = evaluate_f1(pred[labeled], target.labels[labeled], target.c)
    line = {"mi_f1": micro, "ma_f1": macro, "nodes": int(labeled.sum())}
    print(json.dumps(line))
    write_jsonl(os.path.join(out, "eval.jsonl"), [line])
    return 0


def cmd_run(cfg: RunConfig) -> int:
    out = _need_out(cfg)
    source = _load(_source_path(cfg), "source")
    target = _load(_target_path(cfg), "target")
    metrics, _ = run_pipeline(source, target, cfg.train_config(), out_dir=out)
    print(f"micro-F1 {metrics.mi_mean:.4f} +/- {metrics.mi_std:.4f}, "
          f"macro-F1 {metrics.ma_mean:.4f} +/- {metrics.ma_std:.4f}")
    return 0


def cmd_report(cfg: RunConfig) -> int:
    from .plots import render_report
    out = _need_out(cfg)
    written = render_report(out)
    for path in written:
        print(f"wrote {path}")
    return 0


_COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train-score": cmd_train_score,
    "train-guidance": cmd_train_guidance,
    "generate": cmd_generate,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "run": cmd_run,
    "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="diffgda", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name in _COMMANDS:
        p = sub.add_parser(name, add_help=True)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--source", default=None, help="source graph path")
        p.add_argument("--target", default=None, help="target graph path")
        p.add_argument("--out", default=None, help="artifact directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1

    try:
        overrides: dict[str, str] = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, raw = item.split("=", 1)
            overrides[key] = raw
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        if args.source is not None:
            overrides["source"] = args.source
        if args.target is not None:
            overrides["target"] = args.target
        if args.out is not None:
            overrides["out"] = args.out
        cfg = parse_config(args.config, overrides)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1

    try:
        return _COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (FileNotFoundError, GraphParseError, ValueError, RuntimeError) as e:
        print(f"error [{args.command}]: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
