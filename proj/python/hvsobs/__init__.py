"""Python bindings for the hvsobs C++ core.

Stacks are numpy arrays shaped (nz, ny, nx) in drive units [0, 1].
"""

from ._core import (
    HvsobsError,
    auc,
    auc_statistic,
    background,
    fft3,
    ifft3,
    insert_lesion,
    lg_channels,
    mask_weight,
    masked_threshold,
    noise_field,
    perceive,
    psychometric,
    run_experiment,
    stcsf,
    train_mscho,
)

HvsobsError.code = property(lambda self: self.args[0] if self.args else None)

__all__ = [
    "HvsobsError",
    "auc",
    "auc_statistic",
    "background",
    "fft3",
    "ifft3",
    "insert_lesion",
    "lg_channels",
    "mask_weight",
    "masked_threshold",
    "noise_field",
    "perceive",
    "psychometric",
    "run_experiment",
    "stcsf",
    "train_mscho",
]
