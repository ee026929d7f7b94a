"""Addressee and response selection for multi-party conversations."""

from .baselines import (ChanceSelector, TfIdfModel, TfIdfSelector, chance_select,
                        direct_recent_tfidf_select, recent_tfidf_select)
from .config import TrainConfig
from .corpus import DialogContext, SelectionSample, Turn, Vocab
from .evalkit import EvalReport, SynthSpec, addressing_distance, evaluate, generate_synthetic
from .model import Model
from .selector import ScoredPair, select_joint, select_separate
from .trainer import train

__all__ = [
    "ChanceSelector", "DialogContext", "EvalReport", "Model", "ScoredPair", "SelectionSample",
    "SynthSpec", "TfIdfModel", "TfIdfSelector", "TrainConfig", "Turn", "Vocab",
    "addressing_distance", "chance_select", "direct_recent_tfidf_select", "evaluate",
    "generate_synthetic", "recent_tfidf_select", "select_joint", "select_separate", "train",
]
