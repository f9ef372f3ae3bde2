"""MLP encoder with a hand-written backward pass.

Hidden layers are affine + ReLU, the last layer is affine, and the output is
L2-normalised per row so embeddings live on the unit sphere.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CCLError, CheckpointError, DivergenceError

CHECKPOINT_MAGIC = b"CCL1"


@dataclass
class EncoderParams:
    weights: list  # each (out, in)
    biases: list  # each (out,)

    @property
    def widths(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def embed_dim(self):
        return self.weights[-1].shape[0]

    def arrays(self):
        """Parameters in checkpoint order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return EncoderParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self):
        return EncoderParams([np.zeros_like(w) for w in self.weights],
                             [np.zeros_like(b) for b in self.biases])

    def equals(self, other):
        """Bitwise equality of architecture and every parameter."""
        if self.widths != other.widths:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre_activations: list = field(default_factory=list)
    activations: list = field(default_factory=list)  # input to each layer
    outputs: np.ndarray = None  # pre-normalisation final layer output
    norms: np.ndarray = None
    embeddings: np.ndarray = None


def init_params(widths, seed):
    """Glorot-uniform weights, zero biases; ``widths`` is ``[in, h1, ..., D]``."""
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise CCLError("empty architecture")
    if any(w < 1 for w in widths):
        raise CCLError("layer widths must be >= 1")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(weights, biases)


def forward(params, batch):
    """Embed ``batch`` (B x in); returns ``(embeddings, trace)``."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.widths[0]:
        raise CCLError(f"batch has shape {x.shape}, encoder expects {params.widths[0]} columns")
    trace = ForwardTrace(inputs=x)
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        trace.activations.append(h)
        a = h @ w.T + b
        trace.pre_activations.append(a)
        h = np.maximum(a, 0.0) if i < last else a
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms < 1e-12):
        raise CCLError("degenerate embedding")
    z = h / norms[:, None]
    trace.outputs, trace.norms, trace.embeddings = h, norms, z
    return z, trace


def embed(params, batch):
    return forward(params, batch)[0]


def backward(trace, params, grad_embeddings):
    """Gradient of ``sum(grad_embeddings * embeddings)`` w.r.t. every parameter."""
    g = np.asarray(grad_embeddings, dtype=np.float64)
    z = trace.embeddings
    if g.shape != z.shape:
        raise CCLError("gradient shape mismatch")
    # through the row normalisation: (I - z z^T) g / ||h||
    g = (g - z * np.sum(z * g, axis=1, keepdims=True)) / trace.norms[:, None]
    grads = params.zeros_like()
    last = len(params.weights) - 1
    for i in range(last, -1, -1):
        if i < last:
            g = g * (trace.pre_activations[i] > 0)
        grads.weights[i] = g.T @ trace.activations[i]
        grads.biases[i] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i]
    return grads


def sgd_step(params, grads, velocity, lr, momentum=0.9, weight_decay=1e-4):
    """One SGD-with-momentum step; returns ``(new_params, new_velocity)``.

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    """
    if not lr > 0:
        raise CCLError("lr must be positive")
    if not 0 <= momentum < 1:
        raise CCLError("momentum must be in [0, 1)")
    if weight_decay < 0:
        raise CCLError("weight_decay must be >= 0")
    for g in grads.arrays():
        if not np.all(np.isfinite(g)):
            raise DivergenceError("diverged")
    new_p, new_v = params.zeros_like(), params.zeros_like()
    for name in ("weights", "biases"):
        ps, gs, vs = getattr(params, name), getattr(grads, name), getattr(velocity, name)
        for i in range(len(ps)):
            v = momentum * vs[i] + gs[i] + weight_decay * ps[i]
            getattr(new_v, name)[i] = v
            getattr(new_p, name)[i] = ps[i] - lr * v
    return new_p, new_v


def momentum_update(target, source, m):
    """Exponential moving average ``target <- m * target + (1 - m) * source``."""
    if not 0 <= m <= 1:
        raise CCLError("momentum must be in [0, 1]")
    if target.widths != source.widths:
        raise CCLError("architecture mismatch")
    return EncoderParams(
        [m * t + (1.0 - m) * s for t, s in zip(target.weights, source.weights)],
        [m * t + (1.0 - m) * s for t, s in zip(target.biases, source.biases)],
    )


def flatten(params):
    return np.concatenate([a.ravel() for a in params.arrays()])


def unflatten(vector, like):
    vector = np.asarray(vector, dtype=np.float64)
    if vector.size != sum(a.size for a in like.arrays()):
        raise CCLError("parameter vector has the wrong length")
    arrays, pos = [], 0
    for a in like.arrays():
        arrays.append(vector[pos:pos + a.size].reshape(a.shape).copy())
        pos += a.size
    return EncoderParams(arrays[0::2], arrays[1::2])


def save_checkpoint(params, path):
    """Write ``CCL1`` + int32 layer count + int32 widths + float64 LE parameters."""
    widths = params.widths
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<i", len(widths) - 1))
        fh.write(struct.pack(f"<{len(widths)}i", *widths))
        for a in params.arrays():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path, expected_widths=None):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    try:
        (n_layers,) = struct.unpack_from("<i", data, 4)
        if n_layers < 1:
            raise CheckpointError(f"{path}: bad layer count {n_layers}")
        widths = list(struct.unpack_from(f"<{n_layers + 1}i", data, 8))
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if expected_widths is not None and list(expected_widths) != widths:
        raise CheckpointError(f"{path}: architecture {widths} does not match {list(expected_widths)}")
    pos = 8 + 4 * (n_layers + 1)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        for shape, dest in (((fan_out, fan_in), weights), ((fan_out,), biases)):
            n = int(np.prod(shape))
            chunk = data[pos:pos + 8 * n]
            if len(chunk) != 8 * n:
                raise CheckpointError(f"{path}: truncated parameters")
            dest.append(np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64))
            pos += 8 * n
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes")
    return EncoderParams(weights, biases)
