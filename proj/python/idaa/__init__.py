"""Targeted adversarial example toolkit.

Thin re-export of the compiled extension: dataset generation, classifier
training, attack crafting, and the experiment grid runner.
"""

from idaa._idaa import (
    Dataset,
    FormatError,
    Model,
    ShapeError,
    ValueError,
    attack,
    load_idx,
    load_model,
    run_experiment,
    synth_dataset,
    train,
)

__all__ = [
    "Dataset",
    "FormatError",
    "Model",
    "ShapeError",
    "ValueError",
    "attack",
    "load_idx",
    "load_model",
    "run_experiment",
    "synth_dataset",
    "train",
]
