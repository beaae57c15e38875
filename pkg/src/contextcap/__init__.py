"""Context-conditioned caption generation over precomputed visual features.

A relational-graph-enhanced transformer encoder-decoder, trained with
teacher forcing on byte-level BPE tokens of captions, conditioned on
named-entity context tokens and CLIP/DETR-style feature files.  Everything
runs on a from-scratch reverse-mode autodiff tape over numpy.
"""

from . import autodiff, bpe, context, graph, metrics, model, training, visual
from .bpe import BpeVocab, train_merges
from .context import ENTITY_TYPES, NerDictionary, NerRecord, build_context
from .errors import (ContextcapError, ContractError, DataError, DimensionError,
                     InputError, ParseError, SchemaError, TrainingError,
                     VocabularyError)
from .estimator import BpeTokenizer, CaptionGenerator
from .metrics import EvalItem, bleu4, cider, evaluate_corpus, meteor, rouge_l
from .model import (AblationFlags, ModelConfig, ModelParams, generate,
                    load_checkpoint, save_checkpoint)
from .training import TrainConfig, build_dataset, make_train_sample, train
from .visual import VisualRecord, load_features, save_features, synth_features

__version__ = "0.1.0"

__all__ = [
    "AblationFlags", "BpeTokenizer", "BpeVocab", "CaptionGenerator",
    "ContextcapError", "ContractError", "DataError", "DimensionError",
    "ENTITY_TYPES", "EvalItem", "InputError", "ModelConfig", "ModelParams",
    "NerDictionary", "NerRecord", "ParseError", "SchemaError", "TrainConfig",
    "TrainingError", "VisualRecord", "VocabularyError", "autodiff", "bleu4",
    "bpe", "build_context", "build_dataset", "cider", "context",
    "evaluate_corpus", "generate", "graph", "load_checkpoint",
    "load_features", "make_train_sample", "meteor", "metrics", "model",
    "rouge_l", "save_checkpoint", "save_features", "synth_features", "train",
    "train_merges", "training", "visual",
]
