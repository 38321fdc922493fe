"""Feed-forward networks, cross-entropy, Adam, and JSON checkpoints."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from dvge import kernels
from dvge.autodiff import Tensor, as_tensor, backward, gather, leaky_relu, log_softmax, matmul, relu

ACTIVATIONS = ("relu", "leaky_relu", "none")
CHECKPOINT_FORMAT = "dvge-checkpoint"
CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


class CheckpointError(ValueError):
    """A checkpoint file is unreadable or inconsistent."""


@dataclass(frozen=True)
class MlpSpec:
    """Layer layout of an MLP.

    ``layer_widths`` starts with the input width and lists every hidden
    width after it; a final linear layer maps the last entry to
    ``output_width``. ``layer_widths=(2,)`` is therefore a single linear
    layer.
    """

    layer_widths: tuple[int, ...]
    output_width: int
    activation: str = "leaky_relu"
    slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if not self.layer_widths:
            raise ValueError("MlpSpec needs at least the input width")
        if any(w < 1 for w in self.layer_widths) or self.output_width < 1:
            raise ValueError(f"all widths must be >= 1: {self.layer_widths} -> {self.output_width}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    def param_shapes(self) -> list[tuple[int, ...]]:
        widths = list(self.layer_widths) + [self.output_width]
        shapes = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        return shapes

    @classmethod
    def build(cls, input_width: int, hidden: Sequence[int], output_width: int, **kwargs) -> "MlpSpec":
        return cls((input_width, *hidden), output_width, **kwargs)


class Mlp:
    """Weights ``W_i`` of shape ``(fan_in, fan_out)`` and biases ``b_i``; computes ``x @ W + b``."""

    def __init__(self, spec: MlpSpec, params: Sequence[Tensor]):
        shapes = spec.param_shapes()
        if len(params) != len(shapes):
            raise ValueError(f"expected {len(shapes)} parameter tensors, got {len(params)}")
        for i, (p, shape) in enumerate(zip(params, shapes)):
            if p.shape != shape:
                raise ValueError(f"parameter {i} has shape {p.shape}, spec needs {shape}")
        self.spec = spec
        self.params = list(params)

    @classmethod
    def init(cls, spec: MlpSpec, rng: np.random.Generator) -> "Mlp":
        """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` init for weights and biases."""
        params = []
        shapes = spec.param_shapes()
        for w_shape, b_shape in zip(shapes[::2], shapes[1::2]):
            bound = 1.0 / math.sqrt(w_shape[0])
            params.append(Tensor(rng.uniform(-bound, bound, size=w_shape), requires_grad=True))
            params.append(Tensor(rng.uniform(-bound, bound, size=b_shape), requires_grad=True))
        return cls(spec, params)

    @classmethod
    def from_arrays(cls, spec: MlpSpec, arrays: Sequence[np.ndarray]) -> "Mlp":
        return cls(spec, [Tensor(a, requires_grad=True) for a in arrays])

    def __call__(self, x) -> Tensor:
        return mlp_forward(self, x)

    def arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.params]

    def copy(self) -> "Mlp":
        return Mlp.from_arrays(self.spec, [a.copy() for a in self.arrays()])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def predict(self, x) -> np.ndarray:
        """Argmax class per row; ties go to the lower index."""
        return np.argmax(mlp_forward(self, x).data, axis=1)


def mlp_forward(model: Mlp, x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != model.spec.input_width:
        raise ValueError(f"input shape {x.shape} does not match MLP input width {model.spec.input_width}")
    h = x
    n_layers = len(model.params) // 2
    for i in range(n_layers):
        h = matmul(h, model.params[2 * i]) + model.params[2 * i + 1]
        if i < n_layers - 1:
            if model.spec.activation == "leaky_relu":
                h = leaky_relu(h, model.spec.slope)
            elif model.spec.activation == "relu":
                h = relu(h)
    return h


def cross_entropy(logits: Tensor, targets, reduction: str = "mean") -> Tensor:
    """Negative log-softmax probability of the target class.

    ``reduction`` is ``"mean"`` (default), ``"sum"`` or ``"none"``.
    """
    targets = np.asarray(targets)
    n_classes = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise ValueError(f"targets must lie in [0, {n_classes})")
    picked = gather(log_softmax(logits), targets.astype(np.int64))
    if reduction == "mean":
        return -picked.mean()
    if reduction == "sum":
        return -picked.sum()
    if reduction == "none":
        return -picked
    raise ValueError(f"unknown reduction {reduction!r}")


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> "AdamState":
        return cls(
            lr=lr,
            beta1=betas[0],
            beta2=betas[1],
            eps=eps,
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place (params and state)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {i} at Adam step {state.step + 1}")
    state.step += 1
    bias1 = 1.0 - state.beta1**state.step
    bias2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        kernels.adam_update(p.data, g, m, v, state.lr, state.beta1, state.beta2, state.eps, bias1, bias2)


class Adam:
    """Thin holder pairing a parameter list with its :class:`AdamState`."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(self.params, lr, betas, eps)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        adam_step(self.params, grads, self.state)


@dataclass
class FitConfig:
    """Optimisation settings for supervised classifier training."""

    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    betas: tuple[float, float] = (0.5, 0.9)

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


def train_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (init, shuffle) generators for one training run."""
    init_seq, shuffle_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(shuffle_seq)


def batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def check_finite(value: float, what: str) -> None:
    if not math.isfinite(value):
        raise DivergenceError(f"{what} became non-finite ({value})")


def fit_classifier(
    model: Mlp,
    x: np.ndarray,
    y: np.ndarray,
    config: FitConfig,
    shuffle_rng: np.random.Generator,
    on_epoch: Callable[[int, Mlp, float], None] | None = None,
) -> list[float]:
    """Minimise mean cross-entropy with Adam; returns per-epoch mean batch loss."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("cannot train on an empty dataset")
    opt = Adam(model.params, config.lr, config.betas)
    history = []
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for idx in batches(len(x), config.batch_size, shuffle_rng):
            loss = cross_entropy(model(x[idx]), y[idx])
            check_finite(loss.item(), f"classifier loss (epoch {epoch})")
            grads = backward(loss, model.params)
            opt.step([grads[p] for p in model.params])
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(total / count)
        if on_epoch is not None:
            on_epoch(epoch, model, history[-1])
    return history


def accuracy_of(model: Mlp, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(model.predict(x) == np.asarray(y)))


# ---------------------------------------------------------------------------
# checkpoints


def spec_to_dict(spec: MlpSpec) -> dict:
    d = asdict(spec)
    d["layer_widths"] = list(spec.layer_widths)
    return d


def mlp_to_dict(model: Mlp) -> dict:
    return {
        "spec": spec_to_dict(model.spec),
        "params": [{"shape": list(a.shape), "values": a.reshape(-1).tolist()} for a in model.arrays()],
    }


def mlp_from_dict(payload: dict, source: str = "<memory>") -> Mlp:
    try:
        spec = MlpSpec(**{**payload["spec"], "layer_widths": tuple(payload["spec"]["layer_widths"])})
        arrays = []
        for entry, expected in zip(payload["params"], spec.param_shapes(), strict=True):
            shape = tuple(entry["shape"])
            if shape != expected:
                raise CheckpointError(f"{source}: parameter shape {shape} does not match spec {expected}")
            values = np.asarray(entry["values"], dtype=np.float64)
            if values.size != int(np.prod(shape)):
                raise CheckpointError(f"{source}: parameter with shape {shape} holds {values.size} values")
            arrays.append(values.reshape(shape))
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{source}: malformed MLP record ({exc})") from exc
    return Mlp.from_arrays(spec, arrays)


def write_checkpoint(path, kind: str, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": kind, **payload}
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)
    return path


def read_checkpoint(path, kind: str) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a dvge checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    if doc.get("kind") != kind:
        raise CheckpointError(f"{path}: holds a {doc.get('kind')!r} checkpoint, expected {kind!r}")
    return doc


def save_mlp(path, model: Mlp, **metadata) -> Path:
    return write_checkpoint(path, "mlp", {"model": mlp_to_dict(model), "metadata": metadata})


def load_mlp(path) -> Mlp:
    doc = read_checkpoint(path, "mlp")
    try:
        return mlp_from_dict(doc["model"], str(path))
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing field {exc}") from exc
