"""Multimodal sarcasm detection with text-conditioned visual features and co-attention.

Everything runs on a small numpy autograd engine (``filmsarc.autograd``).
"""

from .config import TrainConfig, load_config
from .data import GeneratorConfig, generate_synthetic, read_jsonl, split_dataset, write_jsonl
from .metrics import MetricsReport, compute_metrics
from .model import ModelConfig, SarcasmModel, Variant, load_checkpoint, save_checkpoint
from .train import RunRecord, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "GeneratorConfig", "MetricsReport", "ModelConfig", "RunRecord", "SarcasmModel", "TrainConfig",
    "Variant", "compute_metrics", "evaluate", "generate_synthetic", "load_checkpoint", "load_config",
    "read_jsonl", "save_checkpoint", "split_dataset", "train", "write_jsonl",
]
