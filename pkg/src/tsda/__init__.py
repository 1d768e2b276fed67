"""Taxonomy-structured domain adaptation."""
from .analysis import (
    DiscreteGameSpec,
    OracleReport,
    ProbeResult,
    ablate,
    alignment_probe,
    evaluate,
    export_encodings,
    lambda_sweep,
    lt_decomposition_check,
    optimal_discriminator_oracle,
    run_oracle_suite,
)
from .estimators import (
    DANNClassifier,
    DomainEmbedder,
    PairwiseDANNClassifier,
    SourceOnlyClassifier,
    TSDAClassifier,
)
from .model import TsdaModel, encode, load_model, pretrain_domain_embeddings, save_model
from .synthgen import GaussBenchmark, make_dt14, make_dt40, make_flat, read_benchmark, write_benchmark
from .taxonomy import Taxonomy, TaxonomyError, distance_matrix, flat_taxonomy, parse_taxonomy
from .training import TrainConfig, infer, train, train_dann, train_pairwise_dann, train_source_only

__all__ = [
    "DiscreteGameSpec",
    "OracleReport",
    "ProbeResult",
    "ablate",
    "alignment_probe",
    "evaluate",
    "export_encodings",
    "lambda_sweep",
    "lt_decomposition_check",
    "optimal_discriminator_oracle",
    "run_oracle_suite",
    "DANNClassifier",
    "DomainEmbedder",
    "PairwiseDANNClassifier",
    "SourceOnlyClassifier",
    "TSDAClassifier",
    "TsdaModel",
    "encode",
    "load_model",
    "pretrain_domain_embeddings",
    "save_model",
    "GaussBenchmark",
    "make_dt14",
    "make_dt40",
    "make_flat",
    "read_benchmark",
    "write_benchmark",
    "Taxonomy",
    "TaxonomyError",
    "distance_matrix",
    "flat_taxonomy",
    "parse_taxonomy",
    "TrainConfig",
    "infer",
    "train",
    "train_dann",
    "train_pairwise_dann",
    "train_source_only",
]

__version__ = "0.1.0"
