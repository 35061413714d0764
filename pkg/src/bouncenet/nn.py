"""Stacked peephole LSTM classifier written directly against numpy.

Gate layout inside the stacked matrices is ``[input, forget, candidate,
output]``.  All arithmetic is float64.

Cell equations (per layer, ``c_prev``/``h_prev`` from the previous step)::

    i = sigmoid(W_ix x + W_im h_prev + W_ic * c_prev + b_i)
    f = sigmoid(W_fx x + W_fm h_prev + W_fc * c_prev + b_f)
    c = f * c_prev + i * tanh(W_cx x + W_cm h_prev + b_c)
    o = sigmoid(W_ox x + W_om h_prev + W_oc * c + b_o)
    h = o * tanh(c)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels

GATES = ("i", "f", "c", "o")
PEEPHOLES = ("ic", "fc", "oc")
N_CLASSES = 2
CHECKPOINT_VERSION = 1


class NonFiniteGradientError(FloatingPointError):
    pass


def sigmoid(z):
    # tanh form is overflow-free for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LstmLayerParams:
    W_ix: np.ndarray
    W_fx: np.ndarray
    W_cx: np.ndarray
    W_ox: np.ndarray
    W_im: np.ndarray
    W_fm: np.ndarray
    W_cm: np.ndarray
    W_om: np.ndarray
    W_ic: np.ndarray
    W_fc: np.ndarray
    W_oc: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    @property
    def input_size(self) -> int:
        return self.W_ix.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W_ix.shape[0]

    def validate(self):
        H, D = self.hidden_size, self.input_size
        for g in GATES:
            _check_shape(getattr(self, f"W_{g}x"), (H, D), f"W_{g}x")
            _check_shape(getattr(self, f"W_{g}m"), (H, H), f"W_{g}m")
            _check_shape(getattr(self, f"b_{g}"), (H,), f"b_{g}")
        for p in PEEPHOLES:
            _check_shape(getattr(self, f"W_{p}"), (H,), f"W_{p}")

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmLayerParams":
        H, D = hidden_size, input_size
        kw = {}
        for g in GATES:
            kw[f"W_{g}x"] = np.zeros((H, D))
            kw[f"W_{g}m"] = np.zeros((H, H))
            kw[f"b_{g}"] = np.zeros(H)
        for p in PEEPHOLES:
            kw[f"W_{p}"] = np.zeros(H)
        return cls(**kw)

    def stacked(self):
        """(Wx (D, 4H), Wh (H, 4H), bias (4H,), peepholes (3, H))."""
        Wx = np.concatenate([getattr(self, f"W_{g}x") for g in GATES], axis=0).T
        Wh = np.concatenate([getattr(self, f"W_{g}m") for g in GATES], axis=0).T
        b = np.concatenate([getattr(self, f"b_{g}") for g in GATES])
        peep = np.stack([getattr(self, f"W_{p}") for p in PEEPHOLES])
        return np.ascontiguousarray(Wx), np.ascontiguousarray(Wh), b, peep

    @classmethod
    def from_stacked(cls, Wx, Wh, b, peep) -> "LstmLayerParams":
        H = Wh.shape[0]
        kw = {}
        for k, g in enumerate(GATES):
            sl = slice(k * H, (k + 1) * H)
            kw[f"W_{g}x"] = np.ascontiguousarray(Wx[:, sl].T)
            kw[f"W_{g}m"] = np.ascontiguousarray(Wh[:, sl].T)
            kw[f"b_{g}"] = b[sl].copy()
        for k, p in enumerate(PEEPHOLES):
            kw[f"W_{p}"] = peep[k].copy()
        return cls(**kw)


def _check_shape(arr, shape, name):
    if arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")


@dataclass
class ModelParams:
    layers: list
    head_W: np.ndarray
    head_b: np.ndarray
    dropout_rate: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def hidden_size(self) -> int:
        return self.layers[-1].hidden_size

    def validate(self):
        for k, layer in enumerate(self.layers):
            layer.validate()
            if k and layer.input_size != self.layers[k - 1].hidden_size:
                raise ValueError(f"layer {k} input size mismatch")
        _check_shape(self.head_W, (N_CLASSES, self.hidden_size), "head_W")
        _check_shape(self.head_b, (N_CLASSES,), "head_b")

    def arrays(self) -> dict:
        """Ordered name -> array view of every trainable tensor."""
        out = {}
        for k, layer in enumerate(self.layers):
            for name in layer.__dataclass_fields__:
                out[f"layer{k + 1}.{name}"] = getattr(layer, name)
        out["head.W"] = self.head_W
        out["head.b"] = self.head_b
        return out

    def copy(self) -> "ModelParams":
        return ModelParams([replace(l, **{n: getattr(l, n).copy() for n in l.__dataclass_fields__})
                            for l in self.layers], self.head_W.copy(), self.head_b.copy(),
                           self.dropout_rate)

    def zeros_like(self) -> "ModelParams":
        z = self.copy()
        for a in z.arrays().values():
            a[...] = 0.0
        return z

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays().values())

    @classmethod
    def zeros(cls, input_size=3, hidden_size=64, n_layers=2, dropout_rate=0.8) -> "ModelParams":
        layers = [LstmLayerParams.zeros(input_size if k == 0 else hidden_size, hidden_size)
                  for k in range(n_layers)]
        return cls(layers, np.zeros((N_CLASSES, hidden_size)), np.zeros(N_CLASSES), dropout_rate)


def init_params(input_size: int = 3, hidden_size: int = 64, n_layers: int = 2,
                dropout_rate: float = 0.8, seed: int = 0, scale: float = 0.08,
                forget_bias: float = 1.0) -> ModelParams:
    """Uniform(-scale, scale) weights, zero biases except the forget gate."""
    rng = np.random.default_rng(seed)
    params = ModelParams.zeros(input_size, hidden_size, n_layers, dropout_rate)
    for name, arr in params.arrays().items():
        if ".b_" in name or name == "head.b":
            continue
        arr[...] = rng.uniform(-scale, scale, size=arr.shape)
    for layer in params.layers:
        layer.b_f[...] = forget_bias
    return params


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray


def lstm_cell_step(x, prev: CellState, params: LstmLayerParams) -> CellState:
    """One peephole LSTM step for a single vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_size or prev.h.shape[-1] != params.hidden_size:
        raise ValueError("input or state size does not match the layer")
    Wx, Wh, b, peep = params.stacked()
    H = params.hidden_size
    a = x @ Wx + prev.h @ Wh + b
    i = sigmoid(a[..., :H] + peep[0] * prev.c)
    f = sigmoid(a[..., H:2 * H] + peep[1] * prev.c)
    g = np.tanh(a[..., 2 * H:3 * H])
    c = f * prev.c + i * g
    o = sigmoid(a[..., 3 * H:] + peep[2] * c)
    return CellState(o * np.tanh(c), c)


@dataclass
class LayerTape:
    """Time-major activations of one layer over a batch."""
    inputs: np.ndarray   # (T, N, D)
    gates: np.ndarray    # (T, N, 4H) post-activation i, f, g, o
    c: np.ndarray        # (T+1, N, H); index 0 is the zero initial state
    h: np.ndarray        # (T+1, N, H)
    tanh_c: np.ndarray   # (T, N, H)


@dataclass
class TrainingTape:
    layers: list
    lengths: np.ndarray
    readout: np.ndarray        # (N, H) top-layer h at t = true_len (pre-dropout)
    dropout_mask: np.ndarray | None = None  # (N, H), already scaled by 1/keep
    features: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return self.layers[0].gates.shape[0]


def _run_layer(inputs, Wx, Wh, b, peep):
    T, N, D = inputs.shape
    H = Wh.shape[0]
    # input projection hoisted out of the time loop
    pre = (inputs.reshape(T * N, D) @ Wx + b).reshape(T, N, 4 * H)
    gates = np.empty((T, N, 4 * H))
    c = np.zeros((T + 1, N, H))
    h = np.zeros((T + 1, N, H))
    tanh_c = np.empty((T, N, H))
    a = np.empty((N, 4 * H))
    z = np.empty((N, 3 * H))
    zz = np.empty((N, 2 * H))
    peep = np.ascontiguousarray(peep)
    # sigmoid(x) = 1 / (1 + exp(-x)), tanh(x) = 2 / (1 + exp(-2x)) - 1
    with np.errstate(over="ignore"):
        for t in range(T):
            np.matmul(h[t], Wh, out=a)
            _kernels.gate_preact(a, pre[t], c[t], peep, z, H)
            np.exp(z, out=z)
            _kernels.cell_update(z, a, c[t], peep, gates[t], c[t + 1], zz, H)
            np.exp(zz, out=zz)
            _kernels.cell_output(zz, gates[t], tanh_c[t], h[t + 1], H)
    return LayerTape(inputs, gates, c, h, tanh_c)


def _as_batch(sequences, lengths):
    x = np.asarray(sequences, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3:
        raise ValueError("sequence must be (T, D) or (N, T, D)")
    lengths = np.atleast_1d(np.asarray(lengths, dtype=np.int64))
    if lengths.shape != (x.shape[0],):
        raise ValueError("one true length per sequence required")
    if np.any(lengths < 1) or np.any(lengths > x.shape[1]):
        raise ValueError("true_len must satisfy 1 <= true_len <= sequence length")
    return x, lengths, single


def forward(sequences, lengths, params: ModelParams, mode: str = "eval", rng=None,
            dropout_mask=None):
    """Run the stacked LSTM and the softmax head.

    ``sequences`` is (T, D) or (N, T, D).  The head reads the top layer's h at
    each sequence's true length; frames past it never influence the logits.
    In ``train`` mode an inverted-dropout mask is drawn from ``rng`` (or
    taken from ``dropout_mask``).  Returns ``(logits, tape)``.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    x, lengths, single = _as_batch(sequences, lengths)
    if x.shape[2] != params.input_size:
        raise ValueError(f"expected {params.input_size} input features, got {x.shape[2]}")
    t_max = int(lengths.max())
    layer_in = np.ascontiguousarray(x[:, :t_max].transpose(1, 0, 2))
    tapes = []
    for layer in params.layers:
        tape = _run_layer(layer_in, *layer.stacked())
        tapes.append(tape)
        layer_in = tape.h[1:]
    readout = tapes[-1].h[lengths, np.arange(len(lengths))]
    feats = readout
    mask = None
    if mode == "train" and params.dropout_rate > 0.0:
        keep = 1.0 - params.dropout_rate
        if dropout_mask is None:
            if rng is None:
                raise ValueError("train mode with dropout needs an rng or a mask")
            dropout_mask = (rng.random(readout.shape) < keep) / keep
        mask = np.asarray(dropout_mask, dtype=np.float64)
        feats = readout * mask
    logits = feats @ params.head_W.T + params.head_b
    tape = TrainingTape(tapes, lengths, readout, mask, feats)
    if single:
        return logits[0], tape
    return logits, tape


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shift = logits - logits.max(axis=-1, keepdims=True)
    return shift - np.log(np.exp(shift).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def loss(logits, labels) -> float:
    """Mean softmax cross-entropy (log-sum-exp stabilized)."""
    lp = np.atleast_2d(log_softmax(logits))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    return float(-lp[np.arange(len(labels)), labels].mean())


def backward(tape: TrainingTape, labels, params: ModelParams, truncation_window: int | None = None,
             reduction: str = "mean") -> ModelParams:
    """Gradients of the cross-entropy w.r.t. every parameter.

    Only timesteps ``true_len - 1 - truncation_window .. true_len - 1`` (0-based)
    of each sequence contribute; ``None`` means full BPTT.  ``reduction`` is
    ``"mean"`` (batch-averaged loss) or ``"sum"``.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    N = len(tape.lengths)
    if labels.shape != (N,) or len(tape.layers) != len(params.layers):
        raise ValueError("tape does not match labels/params")
    if tape.features.shape[1] != params.hidden_size:
        raise ValueError("tape does not match params")
    if reduction not in ("mean", "sum"):
        raise ValueError("reduction must be 'mean' or 'sum'")
    scale = 1.0 / N if reduction == "mean" else 1.0

    logits = tape.features @ params.head_W.T + params.head_b
    dlogits = softmax(logits)
    dlogits[np.arange(N), labels] -= 1.0
    dlogits *= scale
    grads = params.zeros_like()
    grads.head_W[...] = dlogits.T @ tape.features
    grads.head_b[...] = dlogits.sum(axis=0)
    d_read = dlogits @ params.head_W
    if tape.dropout_mask is not None:
        d_read = d_read * tape.dropout_mask

    lengths = tape.lengths
    T = len(tape)
    last = lengths - 1
    if truncation_window is None or truncation_window >= T:
        first = np.zeros(N, dtype=np.int64)
    else:
        if truncation_window < 0:
            raise ValueError("truncation_window must be >= 0")
        first = np.maximum(last - int(truncation_window), 0)
    t_lo = int(first.min())
    steps = np.arange(T)
    # (T, N, 1) mask of timesteps inside each sequence's window
    active = ((steps[:, None] >= first[None]) & (steps[:, None] <= last[None]))
    active = active[..., None].astype(np.float64)

    d_out = np.zeros((T, N, params.hidden_size))
    d_out[last, np.arange(N)] = d_read
    for k in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[k]
        lt = tape.layers[k]
        Wx, Wh, b, peep = layer.stacked()
        H = layer.hidden_size
        dA = _layer_backward(lt, d_out, Wh, peep, active, t_lo)
        rows = (T - t_lo) * N
        A2 = dA[t_lo:].reshape(rows, 4 * H)
        dWx = lt.inputs[t_lo:].reshape(rows, -1).T @ A2
        dWh = lt.h[t_lo:T].reshape(rows, H).T @ A2
        db = A2.sum(axis=0)
        c_prev = lt.c[t_lo:T].reshape(rows, H)
        c_new = lt.c[t_lo + 1:T + 1].reshape(rows, H)
        dpeep = np.stack([np.einsum("ij,ij->j", A2[:, :H], c_prev),
                          np.einsum("ij,ij->j", A2[:, H:2 * H], c_prev),
                          np.einsum("ij,ij->j", A2[:, 3 * H:], c_new)])
        g = LstmLayerParams.from_stacked(dWx, dWh, db, dpeep)
        for name in g.__dataclass_fields__:
            getattr(grads.layers[k], name)[...] = getattr(g, name)
        if k:
            d_out = np.zeros((T, N, Wx.shape[0]))
            d_out[t_lo:] = (A2 @ Wx.T).reshape(T - t_lo, N, -1)
    return grads


def _layer_backward(lt: LayerTape, d_out, Wh, peep, active, t_lo):
    T, N, H = lt.tanh_c.shape
    dA = np.zeros((T, N, 4 * H))
    return _kernels.layer_backward(lt.gates, lt.c, lt.tanh_c, np.ascontiguousarray(d_out),
                                   np.ascontiguousarray(Wh.T), np.ascontiguousarray(peep),
                                   np.ascontiguousarray(active[..., 0]), t_lo, dA)


def finite_diff_gradient(sequences, lengths, labels, params: ModelParams,
                         perturbation: float = 1e-5) -> ModelParams:
    """Central-difference gradient of the mean loss, dropout disabled."""
    work = params.copy()
    grads = params.zeros_like()

    def f():
        logits, _ = forward(sequences, lengths, work, mode="eval")
        return loss(logits, labels)

    for (name, arr), garr in zip(work.arrays().items(), grads.arrays().values()):
        flat, gflat = arr.reshape(-1), garr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + perturbation
            up = f()
            flat[j] = orig - perturbation
            down = f()
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * perturbation)
    return grads


def max_relative_error(a: ModelParams, b: ModelParams, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor) over every parameter entry."""
    worst = 0.0
    for x, y in zip(a.arrays().values(), b.arrays().values()):
        den = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        worst = max(worst, float(np.max(np.abs(x - y) / den)))
    return worst


def global_norm(grads: ModelParams) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.arrays().values()))


def clip_gradients(grads: ModelParams, max_norm: float = 5.0) -> float:
    """Rescale in place so the global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm:
        for g in grads.arrays().values():
            g *= max_norm / norm
    return norm


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.arrays().items()},
                   {k: np.zeros_like(a) for k, a in params.arrays().items()})


def adam_update(params: ModelParams, grads: ModelParams, state: AdamState,
                learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8):
    """Bias-corrected Adam step applied in place; returns ``(params, state)``."""
    garrs = grads.arrays()
    for name, g in garrs.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in {name}")
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for name, p in params.arrays().items():
        g = garrs[name]
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if learning_rate:
            p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, stats=None, meta: dict | None = None) -> None:
    """Write an ``.npz`` holding every named tensor plus JSON metadata."""
    header = {
        "version": CHECKPOINT_VERSION,
        "input_size": params.input_size,
        "hidden_size": params.hidden_size,
        "n_layers": len(params.layers),
        "n_classes": N_CLASSES,
        "dropout_rate": params.dropout_rate,
        "meta": meta or {},
    }
    arrays = dict(params.arrays())
    if stats is not None:
        arrays["norm.std"] = np.asarray(stats.std, dtype=np.float64)
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(json.dumps(header, sort_keys=True).encode(), np.uint8),
                 **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`: ``(params, std or None, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
        params = ModelParams.zeros(header["input_size"], header["hidden_size"], header["n_layers"],
                                   header["dropout_rate"])
        for name, arr in params.arrays().items():
            arr[...] = z[name]
        std = tuple(z["norm.std"].tolist()) if "norm.std" in z.files else None
    return params, std, header["meta"]
