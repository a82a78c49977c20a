"""Minimal dense-network training harness with exact per-layer statistics.

Models are lists of weight-and-bias matrices acting on bias-augmented
inputs, so a layer is ``s = Wbar [a; 1]``.  The backward pass exposes, per
layer, the bias-augmented inputs, the per-sample pre-activation gradients,
and the averaged weight gradient; those are exactly the raw materials the
curvature factors are built from.  The training loop supports plain SGD,
Adam, and factored preconditioning through any solve backend, and reports a
simulated time budget split into digital and analog parts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kfac import (
    KfacConfig,
    KroneckerFactorPair,
    compute_factors_mlp,
    ema_update,
    kfac_update_inversion,
    kfac_update_linsys,
    apply_update,
    make_backend,
)
from .thermo import HardwareModel, SolverConfig

OPTIMIZERS = ("sgd", "adam", "kfac")
LOSSES = ("softmax-cross-entropy", "mean-squared-error")
ACTIVATION_NAMES = ("relu", "tanh", "identity")
GENERATORS = ("blobs", "rings")

_MAX_DATASET_SIZE = 10_000


def _act(name: str, s: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(s, 0.0)
    if name == "tanh":
        return np.tanh(s)
    return s


def _act_deriv(name: str, s: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (s > 0.0).astype(np.float64)
    if name == "tanh":
        t = np.tanh(s)
        return 1.0 - t * t
    return np.ones_like(s)


@dataclass
class MlpModel:
    """Stack of dense layers with bias columns folded into the weights.

    ``weights[l]`` has shape (n_out, n_in + 1); ``activations[l]`` names the
    nonlinearity applied to layer l's pre-activation.  The last layer is
    conventionally "identity" so losses act on raw outputs.
    """

    weights: list
    activations: list

    def __post_init__(self):
        if len(self.weights) != len(self.activations):
            raise ValueError(
                f"{len(self.weights)} weight matrices but {len(self.activations)} activations"
            )
        if not self.weights:
            raise ValueError("model needs at least one layer")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        for l, w in enumerate(self.weights):
            if w.ndim != 2 or w.shape[1] < 2:
                raise ValueError(f"layer {l} weight must be (n_out, n_in+1), got {w.shape}")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"layer {l} weight contains non-finite entries")
        for l in range(len(self.weights) - 1):
            n_out = self.weights[l].shape[0]
            if self.weights[l + 1].shape[1] != n_out + 1:
                raise ValueError(
                    f"layer {l + 1} expects input dim {self.weights[l + 1].shape[1] - 1}, "
                    f"but layer {l} outputs {n_out}"
                )
        for name in self.activations:
            if name not in ACTIVATION_NAMES:
                raise ValueError(f"unknown activation {name!r}")

    @property
    def layer_sizes(self) -> list:
        sizes = [self.weights[0].shape[1] - 1]
        sizes.extend(w.shape[0] for w in self.weights)
        return sizes

    @classmethod
    def initialize(cls, layer_sizes, hidden_activation: str, rng: np.random.Generator):
        """Uniform init in ``[-1/sqrt(n_in), 1/sqrt(n_in)]`` with zero biases."""
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        weights = []
        activations = []
        for l in range(len(layer_sizes) - 1):
            n_in, n_out = layer_sizes[l], layer_sizes[l + 1]
            bound = 1.0 / math.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=(n_out, n_in))
            weights.append(np.hstack([w, np.zeros((n_out, 1))]))
            activations.append(hidden_activation if l < len(layer_sizes) - 2 else "identity")
        return cls(weights=weights, activations=activations)


@dataclass
class ForwardCache:
    """Per-layer bias-augmented inputs and pre-activations for one batch."""

    inputs: list  # inputs[l]: (b, n_in_l + 1)
    preacts: list  # preacts[l]: (b, n_out_l)


@dataclass
class BatchTrace:
    """Everything the curvature machinery needs from one batch.

    activations[l]: bias-augmented input to layer l, shape (b, n_in+1).
    preact_grads[l]: per-sample loss gradient w.r.t. layer l's
        pre-activation, shape (b, n_out); no batch normalization applied.
    layer_grads[l]: averaged weight gradient, exactly
        ``preact_grads[l].T @ activations[l] / b``.
    loss: batch-mean loss value.
    """

    activations: list
    preact_grads: list
    layer_grads: list
    loss: float


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def mlp_forward(model: MlpModel, x) -> tuple:
    """Run the network; returns (outputs, cache)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"x must be (batch, features), got shape {x.shape}")
    if x.shape[1] != model.layer_sizes[0]:
        raise ValueError(
            f"x has {x.shape[1]} features, model expects {model.layer_sizes[0]}"
        )
    inputs = []
    preacts = []
    a = x
    for w, act in zip(model.weights, model.activations):
        abar = _augment(a)
        inputs.append(abar)
        s = abar @ w.T
        preacts.append(s)
        a = _act(act, s)
    return a, ForwardCache(inputs=inputs, preacts=preacts)


def _loss_and_output_grad(outputs: np.ndarray, labels: np.ndarray, loss: str,
                          n_classes: int) -> tuple:
    """Batch-mean loss and per-sample gradient w.r.t. the raw outputs."""
    b = outputs.shape[0]
    onehot = np.zeros((b, n_classes))
    onehot[np.arange(b), labels] = 1.0
    if loss == "softmax-cross-entropy":
        shifted = outputs - outputs.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_z
        value = float(-(log_probs[np.arange(b), labels]).mean())
        grad = np.exp(log_probs) - onehot
    elif loss == "mean-squared-error":
        diff = outputs - onehot
        value = float(0.5 * (diff * diff).sum(axis=1).mean())
        grad = diff
    else:
        raise ValueError(f"loss must be one of {LOSSES}, got {loss!r}")
    return value, grad


def mlp_backward(model: MlpModel, x, labels, loss: str) -> BatchTrace:
    """Forward plus reverse pass; gradients averaged over the batch."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError(f"labels must be 1-dimensional, got shape {labels.shape}")
    outputs, cache = mlp_forward(model, x)
    b = outputs.shape[0]
    if labels.shape[0] != b:
        raise ValueError(f"batch mismatch: {b} inputs vs {labels.shape[0]} labels")
    n_classes = model.weights[-1].shape[0]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    value, g = _loss_and_output_grad(outputs, labels, loss, n_classes)

    preact_grads = [None] * len(model.weights)
    layer_grads = [None] * len(model.weights)
    for l in range(len(model.weights) - 1, -1, -1):
        if l < len(model.weights) - 1:
            g = g * _act_deriv(model.activations[l], cache.preacts[l])
        preact_grads[l] = g
        layer_grads[l] = g.T @ cache.inputs[l] / b
        if l > 0:
            g = g @ model.weights[l][:, :-1]
    return BatchTrace(activations=cache.inputs, preact_grads=preact_grads,
                      layer_grads=layer_grads, loss=value)


def sgd_step(theta: np.ndarray, grad: np.ndarray, learning_rate: float) -> np.ndarray:
    if theta.shape != grad.shape:
        raise ValueError(f"shape mismatch: theta {theta.shape} vs grad {grad.shape}")
    return theta - learning_rate * grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, theta: np.ndarray):
        return cls(m=np.zeros_like(theta), v=np.zeros_like(theta), step=0)


def adam_step(state: AdamState, theta: np.ndarray, grad: np.ndarray,
              learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple:
    """One Adam update with bias correction; returns (state, theta)."""
    if theta.shape != grad.shape:
        raise ValueError(f"shape mismatch: theta {theta.shape} vs grad {grad.shape}")
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_theta = theta - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(m=m, v=v, step=t), new_theta


@dataclass
class DatasetSpec:
    """Synthetic two-class dataset description.

    "blobs" draws two Gaussian clusters separated along the first axis;
    "rings" draws two concentric circles with radial noise (always 2-D).
    ``noise`` is the standard deviation of the scatter in either case.
    """

    generator: str = "blobs"
    size: int = 1024
    noise: float = 0.25
    input_dim: int = 2
    val_fraction: float = 0.25

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if int(self.size) != self.size or not 2 <= self.size <= _MAX_DATASET_SIZE:
            raise ValueError(f"size must be an integer in [2, {_MAX_DATASET_SIZE}], got {self.size}")
        self.size = int(self.size)
        if self.noise < 0.0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")
        if self.generator == "rings":
            self.input_dim = 2
        elif self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


def make_dataset(spec: DatasetSpec, rng: np.random.Generator) -> tuple:
    """Generate (x, y) with y in {0, 1}, shuffled."""
    n0 = spec.size // 2
    n1 = spec.size - n0
    if spec.generator == "blobs":
        center = np.zeros(spec.input_dim)
        center[0] = 1.5
        x0 = -center + spec.noise * rng.standard_normal((n0, spec.input_dim))
        x1 = center + spec.noise * rng.standard_normal((n1, spec.input_dim))
    else:
        theta0 = rng.uniform(0.0, 2.0 * math.pi, n0)
        theta1 = rng.uniform(0.0, 2.0 * math.pi, n1)
        r0 = 1.0 + spec.noise * rng.standard_normal(n0)
        r1 = 2.0 + spec.noise * rng.standard_normal(n1)
        x0 = np.stack([r0 * np.cos(theta0), r0 * np.sin(theta0)], axis=1)
        x1 = np.stack([r1 * np.cos(theta1), r1 * np.sin(theta1)], axis=1)
    x = np.vstack([x0, x1])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    order = rng.permutation(spec.size)
    return x[order], y[order]


@dataclass
class TrainConfig:
    optimizer: str = "sgd"
    learning_rate: float = 0.1
    batch_size: int = 32
    steps: int = 100
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    loss: str = "softmax-cross-entropy"
    kfac: KfacConfig | None = None
    hidden_sizes: tuple = (16,)
    activation: str = "tanh"
    digital_ops_per_second: float = 1e9
    debug_checks: bool = False

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.learning_rate < 0.0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValueError(f"batch_size must be a positive integer, got {self.batch_size}")
        self.batch_size = int(self.batch_size)
        if int(self.steps) != self.steps or self.steps < 0:
            raise ValueError(f"steps must be a non-negative integer, got {self.steps}")
        self.steps = int(self.steps)
        if self.activation not in ACTIVATION_NAMES:
            raise ValueError(f"activation must be one of {ACTIVATION_NAMES}, got {self.activation!r}")
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError(f"hidden sizes must be >= 1, got {self.hidden_sizes}")
        if not self.digital_ops_per_second > 0.0:
            raise ValueError(
                f"digital_ops_per_second must be positive, got {self.digital_ops_per_second}"
            )


@dataclass
class MetricsRow:
    """One line of the training log.

    ``loss`` is evaluated on the full training split at the current
    parameters (so a zero learning rate yields a constant series), and
    ``accuracy`` on the validation split.  Times are cumulative simulated
    seconds; metric evaluation itself is instrumentation and costs nothing.
    """

    step: int
    loss: float
    accuracy: float
    digital_time_s: float
    analog_time_s: float
    total_time_s: float


@dataclass
class TrainResult:
    rows: list
    model: MlpModel
    digital_ops: float
    analog_seconds: float


def _full_loss(model, x, y, loss):
    outputs, _ = mlp_forward(model, x)
    value, _ = _loss_and_output_grad(outputs, y, loss, model.weights[-1].shape[0])
    return value


def _accuracy(model, x, y):
    outputs, _ = mlp_forward(model, x)
    return float((outputs.argmax(axis=1) == y).mean())


def _fwd_bwd_ops(model, b):
    total = 0.0
    for w in model.weights:
        total += 6.0 * b * w.shape[0] * w.shape[1]
    return total


def train(config: TrainConfig, solver_config: SolverConfig | None = None,
          hardware: HardwareModel | None = None) -> TrainResult:
    """Run the training loop described by ``config``.

    All randomness (data, init, batch order, and any stochastic solves)
    derives from ``config.seed``, so two runs with identical configs produce
    identical metric rows.  Row 0 records the untrained model.
    """
    data_rng = np.random.default_rng([config.seed, 7, 0])
    init_rng = np.random.default_rng([config.seed, 7, 1])
    batch_rng = np.random.default_rng([config.seed, 7, 2])

    x_all, y_all = make_dataset(config.dataset, data_rng)
    n_val = int(round(config.dataset.val_fraction * config.dataset.size))
    n_train = config.dataset.size - n_val
    if n_train < 1:
        raise ValueError("validation fraction leaves no training data")
    x_train, y_train = x_all[:n_train], y_all[:n_train]
    if n_val > 0:
        x_val, y_val = x_all[n_train:], y_all[n_train:]
    else:
        x_val, y_val = x_train, y_train

    n_classes = int(y_all.max()) + 1
    sizes = [config.dataset.input_dim, *config.hidden_sizes, n_classes]
    model = MlpModel.initialize(sizes, config.activation, init_rng)

    backend = None
    kcfg = None
    pairs: list = [None] * len(model.weights)
    adam_states = None
    if config.optimizer == "kfac":
        kcfg = config.kfac if config.kfac is not None else KfacConfig()
        solver_cfg = replace(solver_config if solver_config is not None else SolverConfig(),
                             seed=config.seed)
        backend = make_backend(kcfg, solver_cfg, hardware)
    elif config.optimizer == "adam":
        adam_states = [AdamState.zeros_like(w) for w in model.weights]

    manual_ops = 0.0

    def current_times():
        backend_ops = backend.digital_ops if backend is not None else 0.0
        analog = backend.analog_seconds if backend is not None else 0.0
        digital = (manual_ops + backend_ops) / config.digital_ops_per_second
        return digital, analog

    rows = [MetricsRow(step=0, loss=_full_loss(model, x_train, y_train, config.loss),
                       accuracy=_accuracy(model, x_val, y_val),
                       digital_time_s=0.0, analog_time_s=0.0, total_time_s=0.0)]

    for step in range(1, config.steps + 1):
        idx = batch_rng.integers(0, n_train, size=config.batch_size)
        trace = mlp_backward(model, x_train[idx], y_train[idx], config.loss)
        manual_ops += _fwd_bwd_ops(model, config.batch_size)
        if config.debug_checks:
            for l in range(len(model.weights)):
                ref = trace.preact_grads[l].T @ trace.activations[l] / config.batch_size
                gap = float(np.max(np.abs(ref - trace.layer_grads[l])))
                if gap > 1e-12:
                    raise RuntimeError(
                        f"gradient identity violated at layer {l}: max gap {gap:.3e}"
                    )

        if config.optimizer == "sgd":
            for l, w in enumerate(model.weights):
                model.weights[l] = sgd_step(w, trace.layer_grads[l], config.learning_rate)
                manual_ops += 2.0 * w.size
        elif config.optimizer == "adam":
            for l, w in enumerate(model.weights):
                adam_states[l], model.weights[l] = adam_step(
                    adam_states[l], w, trace.layer_grads[l], config.learning_rate)
                manual_ops += 10.0 * w.size
        else:
            refresh = (step - 1) % kcfg.update_interval == 0
            if refresh:
                for l in range(len(model.weights)):
                    current = compute_factors_mlp(trace.activations[l], trace.preact_grads[l])
                    pairs[l] = ema_update(current, pairs[l], kcfg.ema_decay_a, kcfg.ema_decay_g)
                    m_dim = current.a.shape[0]
                    n_dim = current.g.shape[0]
                    manual_ops += 2.0 * config.batch_size * (m_dim ** 2 + n_dim ** 2)
            update_fn = kfac_update_inversion if kcfg.method == "inversion" else kfac_update_linsys
            for l, w in enumerate(model.weights):
                u = update_fn(pairs[l], trace.layer_grads[l], kcfg, backend, layer=str(l))
                model.weights[l] = apply_update(w, u, kcfg.learning_rate)
                if kcfg.method == "inversion":
                    n_dim, m_dim = w.shape
                    manual_ops += 2.0 * n_dim * m_dim * (n_dim + m_dim)
                manual_ops += 2.0 * w.size

        digital, analog = current_times()
        rows.append(MetricsRow(step=step,
                               loss=_full_loss(model, x_train, y_train, config.loss),
                               accuracy=_accuracy(model, x_val, y_val),
                               digital_time_s=digital, analog_time_s=analog,
                               total_time_s=digital + analog))

    digital, analog = current_times()
    return TrainResult(rows=rows, model=model,
                       digital_ops=manual_ops + (backend.digital_ops if backend else 0.0),
                       analog_seconds=analog)
