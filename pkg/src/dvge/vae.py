"""MLP variational autoencoders: a vanilla ELBO model and a total-correlation-penalised variant.

The factorized trainer adds ``gamma * mean(logit_joint - logit_permuted)``
from a latent discriminator to the VAE loss, and trains that discriminator
to tell real latent batches from batches whose dimensions were shuffled
independently across samples.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from dvge.autodiff import Tensor, as_tensor, backward, exp, mean, mul, slice_, sum_
from dvge.nn import (
    Adam,
    CheckpointError,
    Mlp,
    MlpSpec,
    batches,
    check_finite,
    cross_entropy,
    mlp_from_dict,
    mlp_to_dict,
    read_checkpoint,
    write_checkpoint,
)

log = logging.getLogger(__name__)


@dataclass
class VaeConfig:
    latent_dim: int = 10
    hidden: tuple[int, ...] = (64,) * 5
    disc_hidden: tuple[int, ...] = (64,) * 5
    gamma: float = 0.0
    # weight on the summed squared reconstruction error (a fixed Gaussian decoder variance)
    recon_weight: float = 50.0
    lr_vae: float = 1e-3
    betas_vae: tuple[float, float] = (0.9, 0.999)
    lr_disc: float = 1e-4
    betas_disc: tuple[float, float] = (0.5, 0.9)
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.disc_hidden = tuple(self.disc_hidden)
        self.betas_vae = tuple(self.betas_vae)
        self.betas_disc = tuple(self.betas_disc)
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.latent_dim < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("latent_dim, epochs and batch_size must be positive")


@dataclass
class VaeModel:
    encoder: Mlp
    decoder: Mlp
    latent_dim: int
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.encoder.spec.output_width != 2 * self.latent_dim:
            raise ValueError("encoder must output 2 * latent_dim values (mean and log-variance)")
        if self.decoder.spec.input_width != self.latent_dim:
            raise ValueError("decoder input width must equal latent_dim")

    @classmethod
    def init(cls, input_width: int, config: VaeConfig, rng: np.random.Generator) -> "VaeModel":
        enc = Mlp.init(MlpSpec.build(input_width, config.hidden, 2 * config.latent_dim), rng)
        dec = Mlp.init(MlpSpec.build(config.latent_dim, config.hidden, input_width), rng)
        return cls(enc, dec, config.latent_dim)

    @property
    def params(self) -> list[Tensor]:
        return self.encoder.params + self.decoder.params

    @property
    def input_width(self) -> int:
        return self.encoder.spec.input_width

    def encode(self, x) -> tuple[Tensor, Tensor]:
        return encode(self, x)

    def encode_mean(self, x) -> np.ndarray:
        """Deterministic latent code (the posterior mean) used by every downstream stage."""
        return encode(self, x)[0].data

    def decode(self, z) -> Tensor:
        return self.decoder(z)

    def checksum(self) -> str:
        return self.encoder.checksum() + self.decoder.checksum()


class TcDiscriminator:
    """Two-logit classifier on latent codes: class 0 = joint sample, class 1 = dimension-permuted."""

    def __init__(self, mlp: Mlp):
        self.mlp = mlp

    @classmethod
    def init(cls, latent_dim: int, hidden, rng: np.random.Generator) -> "TcDiscriminator":
        return cls(Mlp.init(MlpSpec.build(latent_dim, hidden, 2), rng))

    @property
    def params(self) -> list[Tensor]:
        return self.mlp.params

    def __call__(self, z) -> Tensor:
        return self.mlp(z)


def encode(model: VaeModel, x) -> tuple[Tensor, Tensor]:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != model.input_width:
        raise ValueError(f"input shape {x.shape} does not match encoder width {model.input_width}")
    out = model.encoder(x)
    k = model.latent_dim
    return slice_(out, (slice(None), slice(0, k))), slice_(out, (slice(None), slice(k, 2 * k)))


def reparameterize(mu, logvar, noise) -> Tensor:
    """``mu + exp(0.5 * logvar) * noise``."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    noise = np.asarray(noise, dtype=np.float64)
    if not (mu.shape == logvar.shape == noise.shape):
        raise ValueError(f"shape mismatch: mu {mu.shape}, logvar {logvar.shape}, noise {noise.shape}")
    return mu + exp(mul(logvar, 0.5)) * noise


def kl_standard_normal(mu, logvar) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over dimensions and averaged over the batch."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ValueError(f"shape mismatch: mu {mu.shape}, logvar {logvar.shape}")
    per_elem = mul(mu * mu + exp(logvar) - 1.0 - logvar, 0.5)
    if per_elem.ndim == 1:
        return sum_(per_elem)
    return mean(sum_(per_elem, axis=1))


def reconstruction_loss(recon: Tensor, x, weight: float) -> Tensor:
    diff = recon - as_tensor(x)
    return mul(mean(sum_(diff * diff, axis=1)), weight)


def vae_loss(model: VaeModel, x, noise, recon_weight: float) -> Tensor:
    """Negative ELBO for one batch given the reparameterisation noise."""
    mu, logvar = encode(model, x)
    z = reparameterize(mu, logvar, noise)
    return reconstruction_loss(model.decode(z), x, recon_weight) + kl_standard_normal(mu, logvar)


def permute_dims(z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Shuffle every latent dimension independently across the batch."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    for j in range(z.shape[1]):
        out[:, j] = z[rng.permutation(z.shape[0]), j]
    return out


def tc_term(disc: TcDiscriminator, z) -> Tensor:
    """Mean log density-ratio estimate ``logit_joint - logit_permuted``."""
    logits = disc(z)
    return mean(slice_(logits, (slice(None), 0)) - slice_(logits, (slice(None), 1)))


def discriminator_loss(disc: TcDiscriminator, z_joint: np.ndarray, z_perm: np.ndarray) -> Tensor:
    zeros = np.zeros(len(z_joint), dtype=np.int64)
    ones = np.ones(len(z_perm), dtype=np.int64)
    return mul(cross_entropy(disc(z_joint), zeros) + cross_entropy(disc(z_perm), ones), 0.5)


def _stream_rngs(seed: int):
    vae_seq, disc_seq = np.random.SeedSequence(seed).spawn(2)
    init, shuffle, noise = (np.random.default_rng(s) for s in vae_seq.spawn(3))
    disc_init, perm = (np.random.default_rng(s) for s in disc_seq.spawn(2))
    return init, shuffle, noise, disc_init, perm


def _train(data, config: VaeConfig, factorized: bool):
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("VAE training data must be a non-empty 2-D array")
    init_rng, shuffle_rng, noise_rng, disc_rng, perm_rng = _stream_rngs(config.seed)
    model = VaeModel.init(x.shape[1], config, init_rng)
    opt = Adam(model.params, config.lr_vae, config.betas_vae)
    disc = dopt = None
    if factorized:
        disc = TcDiscriminator.init(config.latent_dim, config.disc_hidden, disc_rng)
        dopt = Adam(disc.params, config.lr_disc, config.betas_disc)

    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for idx in batches(len(x), config.batch_size, shuffle_rng):
            xb = x[idx]
            noise = noise_rng.standard_normal((len(idx), config.latent_dim))
            mu, logvar = encode(model, xb)
            z = reparameterize(mu, logvar, noise)
            loss = reconstruction_loss(model.decode(z), xb, config.recon_weight) + kl_standard_normal(mu, logvar)
            if factorized and config.gamma > 0:
                loss = loss + mul(tc_term(disc, z), config.gamma)
            check_finite(loss.item(), f"VAE loss (epoch {epoch})")
            grads = backward(loss, model.params)
            opt.step([grads[p] for p in model.params])
            total += loss.item() * len(idx)
            count += len(idx)

            if factorized:
                z_joint = z.data
                dloss = discriminator_loss(disc, z_joint, permute_dims(z_joint, perm_rng))
                check_finite(dloss.item(), f"discriminator loss (epoch {epoch})")
                dgrads = backward(dloss, disc.params)
                dopt.step([dgrads[p] for p in disc.params])
        model.history.append(total / count)
        if epoch == 0 or (epoch + 1) % 50 == 0:
            log.info("vae epoch %d loss %.5f", epoch + 1, model.history[-1])
    return model, disc


def train_vanilla_vae(data, config: VaeConfig) -> VaeModel:
    return _train(data, config, factorized=False)[0]


def train_factor_vae(data, config: VaeConfig) -> tuple[VaeModel, TcDiscriminator]:
    """Total-correlation-penalised training; ``gamma = 0`` reproduces the vanilla trajectory exactly."""
    return _train(data, config, factorized=True)


def train_vae(data, config: VaeConfig, kind: str) -> tuple[VaeModel, TcDiscriminator | None]:
    if kind == "vanilla":
        return train_vanilla_vae(data, config), None
    if kind == "factor":
        return train_factor_vae(data, config)
    raise ValueError(f"unknown encoder kind {kind!r}")


def fit_tc_discriminator(
    z: np.ndarray,
    epochs: int = 30,
    batch_size: int = 128,
    lr: float = 1e-3,
    betas=(0.5, 0.9),
    hidden=(64, 64),
    seed: int = 0,
) -> TcDiscriminator:
    """Train a discriminator on fixed latent samples (used to probe total correlation)."""
    z = np.asarray(z, dtype=np.float64)
    init_rng, shuffle_rng, perm_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    disc = TcDiscriminator.init(z.shape[1], hidden, init_rng)
    opt = Adam(disc.params, lr, betas)
    for _ in range(epochs):
        for idx in batches(len(z), batch_size, shuffle_rng):
            zb = z[idx]
            loss = discriminator_loss(disc, zb, permute_dims(zb, perm_rng))
            grads = backward(loss, disc.params)
            opt.step([grads[p] for p in disc.params])
    return disc


def estimate_tc(disc: TcDiscriminator, z: np.ndarray) -> float:
    return tc_term(disc, np.asarray(z, dtype=np.float64)).item()


def discriminator_accuracy(disc: TcDiscriminator, z: np.ndarray, rng: np.random.Generator) -> float:
    """Balanced accuracy on ``z`` (label 0) against a dimension-permuted copy (label 1)."""
    z = np.asarray(z, dtype=np.float64)
    joint_hit = np.mean(disc.mlp.predict(z) == 0)
    perm_hit = np.mean(disc.mlp.predict(permute_dims(z, rng)) == 1)
    return float(0.5 * (joint_hit + perm_hit))


# ---------------------------------------------------------------------------
# checkpoints


def save_vae(path, model: VaeModel, config: VaeConfig | None = None, disc: TcDiscriminator | None = None) -> Path:
    payload = {
        "latent_dim": model.latent_dim,
        "encoder": mlp_to_dict(model.encoder),
        "decoder": mlp_to_dict(model.decoder),
        "history": list(model.history),
        "config": asdict(config) if config is not None else None,
        "discriminator": mlp_to_dict(disc.mlp) if disc is not None else None,
    }
    return write_checkpoint(path, "vae", payload)


def load_vae(path) -> tuple[VaeModel, TcDiscriminator | None]:
    doc = read_checkpoint(path, "vae")
    try:
        enc = mlp_from_dict(doc["encoder"], str(path))
        dec = mlp_from_dict(doc["decoder"], str(path))
        model = VaeModel(enc, dec, int(doc["latent_dim"]), list(doc.get("history", [])))
        disc = TcDiscriminator(mlp_from_dict(doc["discriminator"], str(path))) if doc.get("discriminator") else None
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing field {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: inconsistent VAE checkpoint ({exc})") from exc
    return model, disc
