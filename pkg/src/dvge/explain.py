"""Input-gradient explanations of latent-code classifiers.

A focus is the gradient, with respect to the latent code, of the
classifier's cross-entropy against its *own* argmax prediction, so no
ground-truth labels are needed. Samples are independent: each row of the
returned array is that sample's gradient, regardless of batch size.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from dvge.autodiff import Tensor, backward
from dvge.nn import DivergenceError, Mlp, cross_entropy

PSI = ("identity", "abs", "abs_normalized")


def focus(model: Mlp, z: np.ndarray) -> np.ndarray:
    """Per-sample ``d CE(model(z), argmax model(z)) / dz``; the model is not modified."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != model.spec.input_width:
        raise ValueError(f"latent batch {z.shape} does not match model input width {model.spec.input_width}")
    zt = Tensor(z, requires_grad=True)
    logits = model(zt)
    predicted = np.argmax(logits.data, axis=1)
    # summed, not averaged, so each row is exactly that sample's own gradient
    loss = cross_entropy(logits, predicted, reduction="sum")
    g = backward(loss, [zt])[zt]
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite focus gradient")
    return g


def explanation_map(f: np.ndarray, z: np.ndarray, psi: str = "abs_normalized") -> np.ndarray:
    """``psi(focus * z)`` for inspection; the perturbation itself uses raw focuses."""
    f = np.asarray(f, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if f.shape != z.shape:
        raise ValueError(f"focus {f.shape} and latent code {z.shape} differ in shape")
    e = f * z
    if psi == "identity":
        return e
    if psi not in PSI:
        raise ValueError(f"unknown post-processing {psi!r}; expected one of {PSI}")
    e = np.abs(e)
    if psi == "abs":
        return e
    peak = e.max(axis=-1, keepdims=True)
    return np.divide(e, peak, out=np.zeros_like(e), where=peak > 0)


def write_explanations_csv(path, maps: np.ndarray, sample_ids=None) -> Path:
    """Long-format dump: one ``sample_id,dim,value`` row per entry."""
    maps = np.atleast_2d(np.asarray(maps, dtype=np.float64))
    ids = range(len(maps)) if sample_ids is None else sample_ids
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "dim", "value"])
        for sid, row in zip(ids, maps):
            for dim, value in enumerate(row):
                w.writerow([sid, dim, repr(float(value))])
    return path
