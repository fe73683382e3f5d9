"""The hybrid 3-D/2-D CNN + Bi-LSTM classifier, its optimizer and training loop."""

import copy
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import conv as C
from . import recurrent as R
from .tensor import ShapeError, glorot_init, make_rng, softmax

log = logging.getLogger(__name__)

LOSS_EPS = 1e-12


class ArchitectureError(ValueError):
    """The requested layer chain does not fit the input size."""


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch, batch):
        super().__init__(f"loss became non-finite at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class Architecture:
    window: int = 25
    bands: int = 30
    classes: int = 16
    filters3d: tuple = (8, 16, 32)
    kernels3d: tuple = ((3, 3, 7), (3, 3, 5), (3, 3, 3))
    filters2d: tuple = (64, 128)
    kernels2d: tuple = ((3, 3), (3, 3))
    hidden: int = 64
    dropout: float = 0.25
    peepholes: bool = False

    def to_dict(self):
        d = asdict(self)
        for k in ("filters3d", "filters2d"):
            d[k] = list(d[k])
        for k in ("kernels3d", "kernels2d"):
            d[k] = [list(x) for x in d[k]]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("filters3d", "filters2d"):
            if k in d:
                d[k] = tuple(int(x) for x in d[k])
        for k in ("kernels3d", "kernels2d"):
            if k in d:
                d[k] = tuple(tuple(int(v) for v in x) for x in d[k])
        return cls(**d)


# Small kernels so the shrunken inputs still leave a multi-step sequence.
REDUCED_KERNELS = {
    "kernels3d": ((3, 3, 3), (3, 3, 3), (1, 1, 1)),
    "kernels2d": ((2, 2), (2, 2)),
}

PRESETS = {
    "full": {},
    "reduced": dict(window=11, bands=8, classes=3, filters3d=(4, 8, 16),
                    filters2d=(16, 32), hidden=16, **REDUCED_KERNELS),
    "gradcheck": dict(window=9, bands=8, classes=3, filters3d=(2, 4, 8),
                      filters2d=(8, 16), hidden=8, **REDUCED_KERNELS),
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return Architecture(**{**PRESETS[name], **overrides})


@dataclass
class DenseLayer:
    weights: np.ndarray  # (N, in)
    bias: np.ndarray

    @property
    def parameter_count(self):
        return self.weights.size + self.bias.size

    def params(self):
        return {"weights": self.weights, "bias": self.bias}


LAYER_NAMES = ("conv3d_1", "conv3d_2", "conv3d_3", "conv2d_1", "conv2d_2",
               "bidirectional_1", "bidirectional_2", "dense_1")


class HssnbModel:
    """Layers in order: conv3d x3, reshape, conv2d x2, reshape, Bi-LSTM (sequence),
    dropout, Bi-LSTM (last step), dense + softmax."""

    def __init__(self, arch, conv3d, conv2d, bilstm1, dropout, bilstm2, dense):
        self.arch = arch
        self.conv3d = list(conv3d)
        self.conv2d = list(conv2d)
        self.bilstm1 = bilstm1
        self.dropout = dropout
        self.bilstm2 = bilstm2
        self.dense = dense

    def layers(self):
        return dict(zip(LAYER_NAMES, [*self.conv3d, *self.conv2d, self.bilstm1, self.bilstm2, self.dense]))

    def parameters(self):
        """Ordered ``"layer.tensor" -> array`` mapping (arrays are live views)."""
        out = {}
        for lname, layer in self.layers().items():
            for pname, arr in layer.params().items():
                out[f"{lname}.{pname}"] = arr
        return out

    def parameter_counts(self):
        return {name: layer.parameter_count for name, layer in self.layers().items()}

    @property
    def parameter_count(self):
        return sum(self.parameter_counts().values())

    @property
    def dtype(self):
        return self.dense.weights.dtype

    @property
    def input_shape(self):
        return (self.arch.window, self.arch.window, self.arch.bands)

    def astype(self, dtype):
        clone = copy.deepcopy(self)
        for layer in clone.layers().values():
            _cast_layer(layer, dtype)
        return clone

    def shape_chain(self):
        """Per-sample output shape after every stage, Table-1 style."""
        shape = (*self.input_shape, 1)
        chain = [("input_1", shape)]
        for i, layer in enumerate(self.conv3d):
            shape = layer.output_shape(shape)
            chain.append((f"conv3d_{i + 1}", shape))
        h, w, d, f = shape
        shape = (h, w, d * f)
        chain.append(("reshape_1", shape))
        for i, layer in enumerate(self.conv2d):
            shape = layer.output_shape(shape)
            chain.append((f"conv2d_{i + 1}", shape))
        h, w, f = shape
        chain.append(("reshape_2", (h, w * f)))
        chain.append(("bidirectional_1", (h, 2 * self.arch.hidden)))
        chain.append(("dropout_1", (h, 2 * self.arch.hidden)))
        chain.append(("bidirectional_2", (2 * self.arch.hidden,)))
        chain.append(("dense_1", (self.arch.classes,)))
        return chain

    # ------------------------------------------------------------ passes

    def forward(self, patches, training=False, rng=None):
        """Class probabilities for a batch ``(B, D, D, S)`` (or a single ``(D, D, S[, 1])`` patch)."""
        x = np.asarray(patches)
        single = x.shape in (self.input_shape, (*self.input_shape, 1))
        if single:
            x = x[None]
        if x.ndim == 4:
            x = x[..., None]
        if x.shape[1:] != (*self.input_shape, 1):
            raise ShapeError(f"patch shape {x.shape[1:]} does not match model input {self.input_shape}")
        x = x.astype(self.dtype, copy=False)

        cache = {"single": single, "shapes": [x.shape[1:]]}
        c3 = []
        for layer in self.conv3d:
            x, c = C.conv3d_forward(layer, x)
            c3.append(c)
            cache["shapes"].append(x.shape[1:])
        cache["pre_reshape1"] = x.shape
        x = C.reshape_3d_to_2d(x)
        cache["shapes"].append(x.shape[1:])
        c2 = []
        for layer in self.conv2d:
            x, c = C.conv2d_forward(layer, x)
            c2.append(c)
            cache["shapes"].append(x.shape[1:])
        cache["pre_reshape2"] = x.shape
        x = C.reshape_2d_to_seq(x)
        cache["shapes"].append(x.shape[1:])
        x, cache["bilstm1"] = R.bilstm_forward(self.bilstm1, x)
        cache["shapes"].append(x.shape[1:])
        x, cache["dropout"] = R.dropout_forward(self.dropout, x, training, rng)
        cache["shapes"].append(x.shape[1:])
        x, cache["bilstm2"] = R.bilstm_forward(self.bilstm2, x)
        cache["shapes"].append(x.shape[1:])
        cache["dense_in"] = x
        logits = x @ self.dense.weights.T + self.dense.bias
        probs = softmax(logits)
        cache["shapes"].append(probs.shape[1:])
        cache["conv3d"] = c3
        cache["conv2d"] = c2
        return (probs[0] if single else probs), cache

    def backward(self, cache, dlogits):
        """Parameter gradients (keyed like :meth:`parameters`) for upstream ``dL/dlogits``."""
        g = np.asarray(dlogits)
        if cache["single"]:
            g = g[None]
        grads = {}
        x = cache["dense_in"]
        grads["dense_1.weights"] = g.T @ x
        grads["dense_1.bias"] = g.sum(axis=0)
        d = g @ self.dense.weights

        bg, d = R.bilstm_backward(self.bilstm2, cache["bilstm2"], d)
        grads.update({f"bidirectional_2.{k}": v for k, v in bg.items()})
        d = R.dropout_backward(cache["dropout"], d)
        bg, d = R.bilstm_backward(self.bilstm1, cache["bilstm1"], d)
        grads.update({f"bidirectional_1.{k}": v for k, v in bg.items()})

        d = d.reshape(cache["pre_reshape2"])
        for i in reversed(range(len(self.conv2d))):
            d, kg, bgr = C.conv2d_backward(self.conv2d[i], cache["conv2d"][i], d)
            grads[f"conv2d_{i + 1}.kernels"] = kg
            grads[f"conv2d_{i + 1}.bias"] = bgr
        d = d.reshape(cache["pre_reshape1"])
        for i in reversed(range(len(self.conv3d))):
            d, kg, bgr = C.conv3d_backward(self.conv3d[i], cache["conv3d"][i], d, need_input_grad=i > 0)
            grads[f"conv3d_{i + 1}.kernels"] = kg
            grads[f"conv3d_{i + 1}.bias"] = bgr
        return {k: grads[k] for k in self.parameters()}

    def loss_and_grads(self, patches, one_hot, training=False, rng=None):
        probs, cache = self.forward(patches, training, rng)
        loss, dlogits = cross_entropy_loss(probs, one_hot)
        return loss, self.backward(cache, dlogits), probs


def _cast_layer(layer, dtype):
    if isinstance(layer, (C.ConvLayer,)):
        layer.kernels = layer.kernels.astype(dtype)
        layer.bias = layer.bias.astype(dtype)
    elif isinstance(layer, DenseLayer):
        layer.weights = layer.weights.astype(dtype)
        layer.bias = layer.bias.astype(dtype)
    elif isinstance(layer, R.BiLstmLayer):
        for p in (layer.forward_params, layer.backward_params):
            for d in (p.W, p.R, p.b, p.p):
                for k in d:
                    d[k] = d[k].astype(dtype)


def build_model(arch=None, rng=None, dtype=np.float64, **overrides):
    """Glorot-initialized weights, zero biases.

    ``arch`` defaults to the full-size configuration; keyword overrides are
    applied on top.  Raises :class:`ArchitectureError` naming the first layer
    that does not fit.
    """
    arch = Architecture(**{**asdict(arch or Architecture()), **overrides})
    if rng is None:
        rng = make_rng(0)
    if arch.window < 1 or arch.window % 2 == 0:
        raise ArchitectureError(f"window must be a positive odd number, got {arch.window}")
    if len(arch.filters3d) != len(arch.kernels3d) or len(arch.filters2d) != len(arch.kernels2d):
        raise ArchitectureError("filter and kernel lists must have equal length")

    shape = (arch.window, arch.window, arch.bands, 1)
    conv3d = []
    for i, (f, k) in enumerate(zip(arch.filters3d, arch.kernels3d)):
        layer = C.init_conv(f, tuple(k), shape[-1], rng, dtype=dtype)
        try:
            shape = layer.output_shape(shape)
        except ShapeError as exc:
            raise ArchitectureError(f"conv3d_{i + 1} cannot fit input {shape}: {exc}") from None
        conv3d.append(layer)
    h, w, d, f = shape
    shape = (h, w, d * f)
    conv2d = []
    for i, (f, k) in enumerate(zip(arch.filters2d, arch.kernels2d)):
        layer = C.init_conv(f, tuple(k), shape[-1], rng, dtype=dtype)
        try:
            shape = layer.output_shape(shape)
        except ShapeError as exc:
            raise ArchitectureError(f"conv2d_{i + 1} cannot fit input {shape}: {exc}") from None
        conv2d.append(layer)
    h, w, f = shape
    bilstm1 = R.init_bilstm(w * f, arch.hidden, rng, "sequence", arch.peepholes, dtype)
    bilstm2 = R.init_bilstm(2 * arch.hidden, arch.hidden, rng, "last", arch.peepholes, dtype)
    dense = DenseLayer(
        glorot_init((arch.classes, 2 * arch.hidden), 2 * arch.hidden, arch.classes, rng, dtype),
        np.zeros(arch.classes, dtype=dtype),
    )
    return HssnbModel(arch, conv3d, conv2d, bilstm1, R.DropoutLayer(arch.dropout), bilstm2, dense)


# ---------------------------------------------------------------- loss and optimizer


def cross_entropy_loss(probs, one_hot):
    """Mean categorical cross-entropy and its gradient w.r.t. the softmax logits.

    ``probs`` may be ``(N,)`` or ``(B, N)``.  Probabilities are clamped at
    1e-12 before the log.
    """
    p = np.asarray(probs)
    y = np.asarray(one_hot, dtype=p.dtype)
    if p.shape != y.shape:
        raise ShapeError(f"probs {p.shape} and labels {y.shape} differ")
    batch = 1 if p.ndim == 1 else p.shape[0]
    loss = -np.sum(y * np.log(np.maximum(p, LOSS_EPS))) / batch
    # exact gradient of -sum(y * log softmax); equals p - y for one-hot rows
    grad = (p * y.sum(axis=-1, keepdims=True) - y) / batch
    return float(loss), grad


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    bc1 = 1 - beta1 ** state.t
    bc2 = 1 - beta2 ** state.t
    for name, theta in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    train_fraction: float = 0.3
    window: int = 25
    pca: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd number")


def seed_for(seed, purpose):
    """Fixed fan-out of the top-level seed into independent streams."""
    offsets = {"init": 1, "split": 2, "shuffle": 3, "dropout": 4}
    return seed + offsets[purpose]


def train(model, train_set, config, on_epoch=None):
    """Mini-batch Adam on ``train_set``.  Returns a list of per-epoch dicts
    ``{"epoch", "loss", "train_accuracy"}`` measured on the training batches."""
    if len(train_set) == 0:
        raise ValueError("empty training set")
    shuffle_rng = make_rng(seed_for(config.seed, "shuffle"))
    dropout_rng = make_rng(seed_for(config.seed, "dropout"))
    state = AdamState()
    params = model.parameters()
    n = len(train_set)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            x = train_set.patches[idx]
            y = train_set.labels[idx]
            loss, grads, probs = model.loss_and_grads(x, y, training=True, rng=dropout_rng)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, b)
            total_loss += loss * len(idx)
            correct += int(np.sum(probs.argmax(axis=1) == y.argmax(axis=1)))
            if config.learning_rate != 0:
                adam_step(params, grads, state, config.learning_rate,
                          config.beta1, config.beta2, config.adam_eps)
        rec = {"epoch": epoch, "loss": total_loss / n, "train_accuracy": correct / n}
        history.append(rec)
        log.info("epoch %d loss %.6f acc %.4f", epoch, rec["loss"], rec["train_accuracy"])
        if on_epoch is not None:
            on_epoch(rec)
    return history


def predict_proba(model, patches, batch_size=64):
    out = []
    for start in range(0, len(patches), batch_size):
        probs, _ = model.forward(patches[start:start + batch_size], training=False)
        out.append(probs)
    return np.concatenate(out, axis=0)


def predict(model, patches, batch_size=64):
    """1-based class labels; ties go to the lower class index."""
    return predict_proba(model, patches, batch_size).argmax(axis=1) + 1


# ---------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    errors: dict  # tensor name -> max relative error
    tolerance: float

    @property
    def failures(self):
        return [k for k, e in self.errors.items() if not e < self.tolerance]

    @property
    def passed(self):
        return not self.failures

    @property
    def max_error(self):
        return max(self.errors.values())

    def per_layer(self):
        out = {}
        for k, e in self.errors.items():
            layer = k.split(".")[0]
            out[layer] = max(out.get(layer, 0.0), e)
        return out

    def summary(self):
        lines = [f"{k:45s} {e:.3e} {'ok' if e < self.tolerance else 'FAIL'}" for k, e in self.errors.items()]
        lines.append(f"max relative error {self.max_error:.3e} (tolerance {self.tolerance:g}): "
                     + ("PASS" if self.passed else "FAIL " + ", ".join(self.failures)))
        return "\n".join(lines)


def jitter_for_check(model, rng, scale=0.1):
    """Move zero-initialised biases and peepholes to small random values.

    Zero biases leave exact-zero ReLU pre-activations wherever a layer's
    inputs are all dead, and central differences straddle the kink there.
    """
    for name, arr in model.parameters().items():
        tensor = name.split(".")[-1]
        if tensor == "bias" or tensor.startswith(("b_", "p_")):
            arr[...] = rng.uniform(-scale, scale, arr.shape)
    return model


def relative_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(model, patch, one_hot, epsilon=1e-5, tolerance=1e-4, dropout_seed=0,
               analytic=None, fd_dtype=np.longdouble):
    """Central differences against backprop for every parameter tensor.

    Dropout runs in training mode with a mask fixed by ``dropout_seed``.  The
    numeric side is evaluated in ``fd_dtype`` (extended precision by default)
    so rounding noise stays well under the tolerance for small components.
    ``analytic`` lets a caller supply (possibly tampered) gradients.
    """
    if analytic is None:
        _, analytic, _ = model.loss_and_grads(patch, one_hot, training=True, rng=make_rng(dropout_seed))

    fd_model = model.astype(fd_dtype)
    def fd_loss():
        probs, _ = fd_model.forward(np.asarray(patch, dtype=fd_dtype), training=True, rng=make_rng(dropout_seed))
        y = np.asarray(one_hot, dtype=fd_dtype)
        return -np.sum(y * np.log(np.maximum(probs, LOSS_EPS)))

    errors = {}
    eps = fd_dtype(epsilon)
    for name, theta in fd_model.parameters().items():
        numeric = np.zeros(theta.shape)
        flat = theta.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = fd_loss()
            flat[i] = orig - eps
            lm = fd_loss()
            flat[i] = orig
            numeric.flat[i] = float((lp - lm) / (2 * eps))
        a = np.asarray(analytic[name], dtype=np.float64)
        errors[name] = float(relative_error(a, numeric).max()) if a.size else 0.0
    return GradCheckReport(errors, tolerance)
