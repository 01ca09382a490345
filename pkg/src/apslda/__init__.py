"""Asynchronous parameter-server LDA with an O(1) Metropolis-Hastings sampler."""

from .aliastable import AliasTable
from .corpus import Corpus, Document, load_libsvm
from .kernels import BACKEND
from .rng import Rng
from .sampler import Hyperparams
from .trainer import TrainedModel, TrainerConfig, train

__all__ = [
    "AliasTable",
    "BACKEND",
    "Corpus",
    "Document",
    "Hyperparams",
    "Rng",
    "TrainedModel",
    "TrainerConfig",
    "load_libsvm",
    "train",
]
