"""Small dense networks with hand-written backprop, Adam, and checkpoints.

Everything runs in float64 so analytic gradients can be validated against
central finite differences to tight tolerances.
"""
from __future__ import annotations

import io
import json
import struct

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

CHECKPOINT_MAGIC = b"FWRL"
CHECKPOINT_VERSION = 1


class MLP:
    """Feed-forward net: tanh hidden layers, linear output."""

    def __init__(self, sizes, rng: np.random.Generator):
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            scale = np.sqrt(2.0 / (n_in + n_out))
            self.weights.append(rng.normal(0.0, scale, size=(n_in, n_out)))
            self.biases.append(np.zeros(n_out))

    def forward(self, x):
        """Returns (output, cache) where cache holds layer activations."""
        x = np.asarray(x, dtype=float)
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts, dout):
        """Gradient of sum(dout * output) w.r.t. params and input."""
        grads_W = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        g = np.asarray(dout, dtype=float)
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (1.0 - acts[i + 1] ** 2)  # through tanh
            grads_W[i] = acts[i].T @ g
            grads_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads_W, grads_b, g

    def params(self):
        return self.weights + self.biases

    def set_params(self, params):
        n = len(self.weights)
        self.weights = [np.array(p, dtype=float) for p in params[:n]]
        self.biases = [np.array(p, dtype=float) for p in params[n:]]


class Adam:
    def __init__(self, shapes, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params, grads):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def clip_grads_(grads, max_norm):
    """Global-norm clip in place; returns the pre-clip norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


class RunningNorm:
    """Streaming mean/variance normalizer (Welford batch merge)."""

    def __init__(self, dim, clip=10.0, eps=1e-8):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip
        self.eps = eps
        self.frozen = False

    def update(self, x):
        if self.frozen:
            return
        x = np.asarray(x, dtype=float).reshape(-1, self.mean.shape[0])
        bmean = x.mean(axis=0)
        bvar = x.var(axis=0)
        bcount = x.shape[0]
        delta = bmean - self.mean
        tot = self.count + bcount
        new_mean = self.mean + delta * bcount / tot
        m_a = self.var * self.count
        m_b = bvar * bcount
        m2 = m_a + m_b + delta ** 2 * self.count * bcount / tot
        self.mean = new_mean
        self.var = m2 / tot
        self.count = tot

    def normalize(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / np.sqrt(self.var + self.eps)
        return np.clip(z, -self.clip, self.clip)

    def state(self):
        return {"mean": self.mean.tolist(), "var": self.var.tolist(),
                "count": self.count, "clip": self.clip}

    @classmethod
    def from_state(cls, s):
        rn = cls(len(s["mean"]), clip=s["clip"])
        rn.mean = np.array(s["mean"])
        rn.var = np.array(s["var"])
        rn.count = float(s["count"])
        return rn


# ---------------------------------------------------------------------------
# Checkpoint format: magic, uint32 header length, JSON header, then raw
# float64 little-endian arrays in declaration order.
# ---------------------------------------------------------------------------

def save_checkpoint(path, arrays, meta):
    """`arrays` is an ordered list of float64 ndarrays, `meta` a JSON dict."""
    header = dict(meta)
    header["version"] = CHECKPOINT_VERSION
    header["shapes"] = [list(a.shape) for a in arrays]
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (arrays, header)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version")
        arrays = []
        for shape in header["shapes"]:
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(n * 8)
            arrays.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
    return arrays, header
