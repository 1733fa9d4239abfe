"""Desk-scale transformer laboratory.

A small pre-norm causal transformer with rotary attention, hand-written
reverse-mode gradients, and a deterministic Adam loop, used to exercise the
context-extension recipe end to end: train short, swap in a scaled
frequency table, continue training on separator-packed data, and measure
token-space needle retrieval.
"""

from .model import ToyModel, ToyModelConfig, forward, init_model, loss_and_gradients
from .train import TrainConfig, train
from .corpus import ToyCorpusSpec, make_toy_corpus, RESERVED
from .extend import extend, widen
from .niah import toy_niah_eval, mean_accuracy
from .checkpoint import save_checkpoint, load_checkpoint, parameter_digest
from .ablate import ExperimentSpec, Stage, ablation_run, standard_arms, train_base, run_stages

__all__ = [
    "ToyModel", "ToyModelConfig", "forward", "init_model", "loss_and_gradients",
    "TrainConfig", "train", "ToyCorpusSpec", "make_toy_corpus", "RESERVED",
    "extend", "widen", "toy_niah_eval", "mean_accuracy", "save_checkpoint",
    "load_checkpoint", "parameter_digest", "ExperimentSpec", "Stage",
    "ablation_run", "standard_arms", "train_base", "run_stages",
]
