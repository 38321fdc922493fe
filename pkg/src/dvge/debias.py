"""Training downstream models on bidirectionally perturbed latent codes.

Each batch of codes ``z`` is shifted by
``clamp(eta1 * F_sens - eta2 * F_task, -eps, eps)`` with
``eps = eps_ratio * |z|`` per dimension, where ``F_sens`` comes from the
frozen sensitive classifier and ``F_task`` from the task model as it is
at that step. Only the task model is updated; inference uses the raw codes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dvge import kernels
from dvge.autodiff import backward
from dvge.explain import focus
from dvge.fairness import FairnessReport
from dvge.nn import (
    Adam,
    FitConfig,
    Mlp,
    MlpSpec,
    batches,
    check_finite,
    cross_entropy,
    fit_classifier,
    train_rngs,
)
from dvge.vae import VaeModel


@dataclass(frozen=True)
class PerturbationConfig:
    eta1: float = 0.0
    eta2: float = 0.0
    eps_ratio: float = 0.1

    def __post_init__(self):
        for name in ("eta1", "eta2", "eps_ratio"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite value >= 0, got {value}")


def clip_eps(v, eps) -> np.ndarray:
    """Clamp each entry of ``v`` into ``[-eps_i, eps_i]``."""
    v = np.asarray(v, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps < 0):
        raise ValueError("clip thresholds must be >= 0")
    return np.minimum(np.maximum(v, -eps), eps)


def perturb(z, f_sens, f_task, cfg: PerturbationConfig) -> np.ndarray:
    """Return the perturbed codes; ``|z'_i - z_i| <= eps_ratio * |z_i|`` holds exactly."""
    z = np.asarray(z, dtype=np.float64)
    f_sens = np.asarray(f_sens, dtype=np.float64)
    f_task = np.asarray(f_task, dtype=np.float64)
    if not (z.shape == f_sens.shape == f_task.shape):
        raise ValueError(f"shape mismatch: z {z.shape}, f_sens {f_sens.shape}, f_task {f_task.shape}")
    for name, arr in (("z", z), ("f_sens", f_sens), ("f_task", f_task)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} contains non-finite values")
    return kernels.perturb_clip(z, f_sens, f_task, cfg.eta1, cfg.eta2, cfg.eps_ratio)


def task_spec(latent_dim: int, hidden=(64,) * 5) -> MlpSpec:
    return MlpSpec.build(latent_dim, hidden, 2)


@dataclass
class DvgeTrainRun:
    """Everything one debiased training run needs besides the data.

    ``vae`` may be ``None`` when the caller already holds latent codes.
    """

    sensitive: Mlp
    perturbation: PerturbationConfig
    fit: FitConfig = field(default_factory=lambda: FitConfig(epochs=50))
    hidden: tuple[int, ...] = (64,) * 5
    seed: int = 0
    vae: VaeModel | None = None
    losses: list[float] = field(default_factory=list)


@dataclass
class DvgeResult:
    model: Mlp
    losses: list[float]
    trace: list[FairnessReport]


def _codes(run: DvgeTrainRun, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return run.vae.encode_mean(x) if run.vae is not None else x


def train_dvge(run: DvgeTrainRun, x, y, eval_set=None) -> DvgeResult:
    """Train a fresh task model on perturbed codes.

    ``eval_set`` is an optional ``(x, y, s)`` triple evaluated (without
    perturbation) after every epoch to build the fairness trace.
    """
    if run.sensitive is None:
        raise ValueError("a trained sensitive classifier is required")
    cfg = run.perturbation
    codes = _codes(run, x)
    y = np.asarray(y, dtype=np.int64)
    if len(codes) != len(y) or len(codes) == 0:
        raise ValueError("codes and labels must be non-empty and equally long")
    if codes.shape[1] != run.sensitive.spec.input_width:
        raise ValueError("sensitive classifier width does not match the latent codes")
    frozen = (run.sensitive.checksum(), run.vae.checksum() if run.vae is not None else None)

    eval_codes = None
    if eval_set is not None:
        eval_codes = _codes(run, eval_set[0])

    init_rng, shuffle_rng = train_rngs(run.seed)
    model = Mlp.init(task_spec(codes.shape[1], run.hidden), init_rng)
    opt = Adam(model.params, run.fit.lr, run.fit.betas)
    trace = []
    for epoch in range(run.fit.epochs):
        total = 0.0
        for idx in batches(len(codes), run.fit.batch_size, shuffle_rng):
            zb = codes[idx]
            f_sens = focus(run.sensitive, zb) if cfg.eta1 != 0 else np.zeros_like(zb)
            f_task = focus(model, zb) if cfg.eta2 != 0 else np.zeros_like(zb)
            z_pert = perturb(zb, f_sens, f_task, cfg)
            loss = cross_entropy(model(z_pert), y[idx])
            check_finite(loss.item(), f"task loss (epoch {epoch})")
            grads = backward(loss, model.params)
            opt.step([grads[p] for p in model.params])
            total += loss.item() * len(idx)
        run.losses.append(total / len(codes))
        if eval_codes is not None:
            trace.append(FairnessReport.evaluate(infer(model, eval_codes), eval_set[1], eval_set[2]))

    after = (run.sensitive.checksum(), run.vae.checksum() if run.vae is not None else None)
    if after != frozen:
        raise RuntimeError("frozen models changed during debiased training")
    return DvgeResult(model, list(run.losses), trace)


def train_plain(codes, y, fit: FitConfig, hidden=(64,) * 5, seed: int = 0) -> Mlp:
    """Ordinary supervised training of a task model on unperturbed codes."""
    codes = np.asarray(codes, dtype=np.float64)
    init_rng, shuffle_rng = train_rngs(seed)
    model = Mlp.init(task_spec(codes.shape[1], hidden), init_rng)
    fit_classifier(model, codes, y, fit, shuffle_rng)
    return model


def infer(model: Mlp, z) -> np.ndarray:
    """Predicted classes on raw codes; no focus is computed and nothing is perturbed."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != model.spec.input_width:
        raise ValueError(f"codes {z.shape} do not match model input width {model.spec.input_width}")
    return model.predict(z)
