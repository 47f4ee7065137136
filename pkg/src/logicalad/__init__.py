"""Logical and structural anomaly synthesis by edge manipulation, plus localization and metrics."""

from .edges import ClassicalEdgeBackend, extract_edge_map, extract_edges
from .generator import GeneratorConfig, GeneratorModel, generate, generate_pair, train_generator
from .imaging import SSIMConfig, ssim_map
from .jnd import compute_jnd
from .manipulation import SynthesisStrategy, merge_edges, remove_edges, replace_edges, synthesize_anomaly_edges
from .metrics import MetricsReport, au_spro, auroc, average_precision, evaluate, image_score, spro_curve
from .network import LogicALNet, NetConfig, localize, reconstruct
from .regions import RegionPolicy, sample_arbitrary_region, semantic_candidates
from .synthesis import AnomalySynthesizer, StrategyToggles, build_ground_truth
from .tps import TPSWarp, tps_warp
from .trainer import RunConfig, train_localizer

__version__ = "0.1.0"

__all__ = [
    "AnomalySynthesizer", "ClassicalEdgeBackend", "GeneratorConfig", "GeneratorModel", "LogicALNet",
    "MetricsReport", "NetConfig", "RegionPolicy", "RunConfig", "SSIMConfig", "StrategyToggles",
    "SynthesisStrategy", "TPSWarp", "au_spro", "auroc", "average_precision", "build_ground_truth",
    "compute_jnd", "evaluate", "extract_edge_map", "extract_edges", "generate", "generate_pair",
    "image_score", "localize", "merge_edges", "reconstruct", "remove_edges", "replace_edges",
    "sample_arbitrary_region", "semantic_candidates", "spro_curve", "ssim_map", "synthesize_anomaly_edges",
    "tps_warp", "train_generator", "train_localizer",
]
