"""Guided graph diffusion for cross-domain node classification.

A labeled source graph is evolved by a variance-exploding diffusion whose
reverse dynamics are steered by a density-ratio guidance network toward an
unlabeled target domain; a node classifier is then trained on the
generated graph with a kernel alignment term and scored by micro/macro F1.
"""

from .graphs import (AugmentedGraph, CsbmSpec, DomainShift, Graph,
                     GraphParseError, augment, circle_class_means,
                     gen_csbm_pair, load_graph, recover_labels, save_graph)
from .guidance import (ClassifierConfig, DomainClassifier, GuidanceModel,
                       GuidanceTrainConfig, classifier_prob, density_ratio,
                       guidance_gradient, init_guidance,
                       train_domain_classifier, train_guidance)
from .pipeline import (Metrics, MmdKernel, PipelineStageError, TrainConfig,
                       evaluate_f1, generate_graph, mmd, run_pipeline,
                       source_only_baseline, train_target_gnn)
from .score import (ScoreModel, ScoreTrainConfig, init_score_model,
                    score_adjacency, score_features, train_score)
from .sde import (DiffusionState, DivergenceError, VeSchedule, marginal_var,
                  perturb, quantize_adjacency, reverse_step, score_target,
                  select_subset, sigma)

__all__ = [
    "AugmentedGraph", "ClassifierConfig", "CsbmSpec", "DiffusionState",
    "DivergenceError", "DomainClassifier", "DomainShift", "Graph",
    "GraphParseError", "GuidanceModel", "GuidanceTrainConfig", "Metrics",
    "MmdKernel", "PipelineStageError", "ScoreModel", "ScoreTrainConfig",
    "TrainConfig", "VeSchedule", "augment", "circle_class_means",
    "classifier_prob", "density_ratio", "evaluate_f1", "gen_csbm_pair",
    "generate_graph", "guidance_gradient", "init_guidance",
    "init_score_model", "load_graph", "marginal_var", "mmd", "perturb",
    "quantize_adjacency", "recover_labels", "reverse_step", "run_pipeline",
    "save_graph", "score_adjacency", "score_features", "score_target",
    "select_subset", "sigma", "source_only_baseline",
    "train_domain_classifier", "train_guidance", "train_score",
    "train_target_gnn",
]

__version__ = "0.1.0"
