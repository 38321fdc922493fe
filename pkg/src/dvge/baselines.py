"""Comparison methods and the sensitive-information ablations.

* sensitive classifiers on latent codes (also the ``d`` used by DVGE),
* adversarial training with a gradient-reversal sensitive branch (ADT),
* removal of the latent dimensions most correlated with the sensitive attribute,
* ablations that measure how much sensitive information survives perturbation,
  either by retraining a classifier on perturbed codes or by scoring the
  original, fixed classifier on them.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from dvge.autodiff import backward, reverse_grad
from dvge.debias import PerturbationConfig, perturb
from dvge.explain import focus
from dvge.nn import Adam, FitConfig, Mlp, MlpSpec, accuracy_of, batches, check_finite, cross_entropy, fit_classifier, train_rngs


@dataclass
class SensitiveClassifier:
    """Classifier ``d(z)`` kept at its best held-out epoch."""

    model: Mlp
    epochs: int
    heldout_accuracy: float
    history: list[float] = field(default_factory=list)

    @property
    def best_heldout_accuracy(self) -> float:
        return max(self.history) if self.history else self.heldout_accuracy


def _check_binary(s: np.ndarray, what: str) -> np.ndarray:
    s = np.asarray(s, dtype=np.int64)
    if not np.isin(s, (0, 1)).all():
        raise ValueError(f"{what} must be binary")
    if len(np.unique(s)) < 2:
        raise ValueError(f"{what} contains a single class; a classifier cannot be trained")
    return s


def train_sensitive_classifier(
    z,
    s,
    fit: FitConfig,
    hidden=(64,) * 5,
    seed: int = 0,
    z_val=None,
    s_val=None,
) -> SensitiveClassifier:
    """Cross-entropy training on codes; keeps the parameters of the best held-out epoch.

    Without an explicit validation set, 20% of the rows (seeded) are held out.
    """
    z = np.asarray(z, dtype=np.float64)
    s = _check_binary(s, "sensitive labels")
    if z_val is None:
        order = np.random.default_rng(seed).permutation(len(z))
        cut = int(round(0.8 * len(z)))
        z, z_val, s, s_val = z[order[:cut]], z[order[cut:]], s[order[:cut]], s[order[cut:]]
    z_val = np.asarray(z_val, dtype=np.float64)
    s_val = np.asarray(s_val, dtype=np.int64)

    init_rng, shuffle_rng = train_rngs(seed)
    model = Mlp.init(MlpSpec.build(z.shape[1], hidden, 2), init_rng)
    history: list[float] = []
    best = {"acc": -1.0, "params": None}

    def track(epoch, m, loss):
        acc = accuracy_of(m, z_val, s_val)
        history.append(acc)
        if acc > best["acc"]:
            best["acc"] = acc
            best["params"] = [a.copy() for a in m.arrays()]

    fit_classifier(model, z, s, fit, shuffle_rng, on_epoch=track)
    frozen = Mlp.from_arrays(model.spec, best["params"])
    return SensitiveClassifier(frozen, fit.epochs, best["acc"], history)


# ---------------------------------------------------------------------------
# adversarial training


@dataclass
class AdtModel:
    encoder: Mlp
    sensitive_branch: Mlp
    task_branch: Mlp
    lam: float

    @property
    def params(self):
        return self.encoder.params + self.task_branch.params + self.sensitive_branch.params

    def predict(self, x) -> np.ndarray:
        return self.task_branch.predict(self.encoder(np.asarray(x, dtype=np.float64)).data)


def adt_loss(model: AdtModel, x, y, s):
    """Task loss plus sensitive loss, the latter reaching the encoder sign-flipped and scaled by ``lam``."""
    h = model.encoder(x)
    task = cross_entropy(model.task_branch(h), y)
    sens = cross_entropy(model.sensitive_branch(reverse_grad(h, model.lam)), s)
    return task + sens


def init_adt(input_width: int, lam: float, hidden, feature_width: int, rng) -> AdtModel:
    encoder = Mlp.init(MlpSpec.build(input_width, hidden, feature_width), rng)
    task = Mlp.init(MlpSpec.build(feature_width, hidden, 2), rng)
    sens = Mlp.init(MlpSpec.build(feature_width, hidden, 2), rng)
    return AdtModel(encoder, sens, task, float(lam))


def train_adt(x, y, s, lam: float, fit: FitConfig, hidden=(64,) * 5, feature_width: int = 10, seed: int = 0) -> AdtModel:
    if lam < 0:
        raise ValueError("reversal weight lambda must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    init_rng, shuffle_rng = train_rngs(seed)
    model = init_adt(x.shape[1], lam, hidden, feature_width, init_rng)
    opt = Adam(model.params, fit.lr, fit.betas)
    for epoch in range(fit.epochs):
        for idx in batches(len(x), fit.batch_size, shuffle_rng):
            loss = adt_loss(model, x[idx], y[idx], s[idx])
            check_finite(loss.item(), f"ADT loss (epoch {epoch})")
            grads = backward(loss, model.params)
            opt.step([grads[p] for p in model.params])
    return model


# ---------------------------------------------------------------------------
# dimension removal


def dimension_correlations(z, s) -> np.ndarray:
    """|Pearson r| between every latent dimension and ``s``; constant columns count as 0."""
    z = np.asarray(z, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    zc = z - z.mean(axis=0)
    sc = s - s.mean()
    denom = np.sqrt((zc * zc).sum(axis=0) * (sc * sc).sum())
    num = np.abs(zc.T @ sc)
    return np.divide(num, denom, out=np.zeros(z.shape[1]), where=denom > 0)


def select_sensitive_dims(z, s, k: int) -> list[int]:
    """The ``k`` most correlated dimensions, strongest first; ties go to the lower index."""
    z = np.asarray(z, dtype=np.float64)
    if not 0 <= k < z.shape[1]:
        raise ValueError(f"k must lie in [0, {z.shape[1]}), got {k}")
    corr = dimension_correlations(z, s)
    return [int(i) for i in np.argsort(-corr, kind="stable")[:k]]


def remove_dims(z, dims: Sequence[int]) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    dims = sorted(set(int(d) for d in dims))
    if any(d < 0 or d >= z.shape[1] for d in dims):
        raise ValueError(f"dimension indices {dims} out of range for width {z.shape[1]}")
    if len(dims) == z.shape[1]:
        raise ValueError("cannot remove every latent dimension")
    return np.delete(z, dims, axis=1)


# ---------------------------------------------------------------------------
# ablations


@dataclass
class AblationRow:
    """One encoder's row of an ablation table."""

    encoder: str
    no_removal: float
    removed: float
    by_eta: dict[float, float]

    def values(self) -> list[float]:
        return [self.no_removal, self.removed] + list(self.by_eta.values())


def _sensitive_perturbation(d: Mlp, z: np.ndarray, eta1: float, eps_ratio: float) -> np.ndarray:
    cfg = PerturbationConfig(eta1=eta1, eta2=0.0, eps_ratio=eps_ratio)
    return perturb(z, focus(d, z), np.zeros_like(z), cfg)


def ablation_retrained(
    d: Mlp,
    z_train,
    s_train,
    z_test,
    s_test,
    eta1_grid: Sequence[float],
    fit: FitConfig,
    hidden=(64,) * 5,
    seed: int = 0,
    k: int = 1,
    eps_ratio: float = 0.1,
    encoder: str = "vanilla",
) -> AblationRow:
    """Best held-out accuracy of sensitive classifiers retrained on modified codes."""
    z_train = np.asarray(z_train, dtype=np.float64)
    z_test = np.asarray(z_test, dtype=np.float64)

    def retrain(ztr, zte):
        return train_sensitive_classifier(ztr, s_train, fit, hidden, seed, zte, s_test).best_heldout_accuracy

    no_removal = retrain(z_train, z_test)
    dims = select_sensitive_dims(z_train, s_train, k)
    removed = retrain(remove_dims(z_train, dims), remove_dims(z_test, dims))
    by_eta = {}
    for eta in eta1_grid:
        by_eta[float(eta)] = retrain(
            _sensitive_perturbation(d, z_train, eta, eps_ratio),
            _sensitive_perturbation(d, z_test, eta, eps_ratio),
        )
    return AblationRow(encoder, no_removal, removed, by_eta)


def ablation_fixed(
    d: Mlp,
    z_train,
    s_train,
    z_test,
    s_test,
    eta1_grid: Sequence[float],
    k: int = 1,
    eps_ratio: float = 0.1,
    encoder: str = "vanilla",
) -> AblationRow:
    """Accuracy of the original classifier ``d`` on modified test codes, without retraining.

    For the removal column the selected dimensions are replaced by their
    training-set mean, since ``d`` expects full-width input.
    """
    z_train = np.asarray(z_train, dtype=np.float64)
    z_test = np.asarray(z_test, dtype=np.float64)
    no_removal = accuracy_of(d, z_test, s_test)
    dims = select_sensitive_dims(z_train, s_train, k)
    masked = z_test.copy()
    masked[:, dims] = z_train[:, dims].mean(axis=0)
    removed = accuracy_of(d, masked, s_test)
    by_eta = {float(eta): accuracy_of(d, _sensitive_perturbation(d, z_test, eta, eps_ratio), s_test) for eta in eta1_grid}
    return AblationRow(encoder, no_removal, removed, by_eta)


def mean_rows(rows: Sequence[AblationRow]) -> AblationRow:
    """Element-wise mean of rows sharing an encoder and grid (e.g. across seeds)."""
    if not rows:
        raise ValueError("no ablation rows to average")
    grid = list(rows[0].by_eta)
    return AblationRow(
        rows[0].encoder,
        float(np.mean([r.no_removal for r in rows])),
        float(np.mean([r.removed for r in rows])),
        {eta: float(np.mean([r.by_eta[eta] for r in rows])) for eta in grid},
    )


def write_ablation_csv(path, rows: Sequence[AblationRow]) -> Path:
    """Columns ``encoder,no_removal,removed,<eta1 values...>``."""
    path = Path(path)
    grid = list(rows[0].by_eta) if rows else []
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["encoder", "no_removal", "removed"] + [f"{eta:g}" for eta in grid])
        for r in rows:
            w.writerow([r.encoder] + [f"{v:.6f}" for v in r.values()])
    return path
