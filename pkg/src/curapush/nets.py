"""Minimal feed-forward machinery: float64 MLPs with hand-written backprop.

Small tanh networks, a diagonal-Gaussian policy head, Adam, and a binary
checkpoint format. Gradients are exact reverse-mode and are validated against
central finite differences in the test suite, so keep every forward detail
(input scaling, output scaling, clamps) mirrored in backward.
"""

from __future__ import annotations

import math
import struct

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class Mlp:
    """Fully connected net: tanh hidden layers, linear output.

    Parameters are float64. `input_scale` is a fixed per-feature multiplier
    applied before the first layer and `output_scale` a fixed multiplier after
    the last; both are part of the function (and of checkpoints), not learned.

    Args:
        layer_sizes: [in, hidden..., out].
        seed: init seed; weights ~ N(0, 1/fan_in), biases zero.
        input_scale: optional (in,) vector.
        output_scale: scalar multiplier on the output.
        final_gain: extra multiplier on the last layer's init (small values
            make the initial output near zero, useful for policy means).
    """

    def __init__(self, layer_sizes, seed=0, input_scale=None, output_scale=1.0, final_gain=1.0):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.output_scale = float(output_scale)
        if input_scale is None:
            self.input_scale = np.ones(self.layer_sizes[0])
        else:
            self.input_scale = np.asarray(input_scale, dtype=float).reshape(self.layer_sizes[0]).copy()
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        n_layers = len(self.layer_sizes) - 1
        for i in range(n_layers):
            fan_in = self.layer_sizes[i]
            fan_out = self.layer_sizes[i + 1]
            w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_out, fan_in))
            if i == n_layers - 1:
                w *= final_gain
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self):
        """Flat parameter list [W0, b0, W1, b1, ...]; arrays are live views."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_params(self, params):
        for i in range(len(self.weights)):
            self.weights[i][...] = params[2 * i]
            self.biases[i][...] = params[2 * i + 1]

    def forward(self, x):
        y, _ = self.forward_cache(x)
        return y

    def forward_cache(self, x):
        """Forward pass returning (output, cache) for a later backward call."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        a = np.atleast_2d(x) * self.input_scale
        acts = [a]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if i == last else np.tanh(z)
            acts.append(a)
        y = a * self.output_scale
        return (y[0] if single else y), (acts, single)

    def backward(self, cache, grad_out):
        """Backpropagate grad_out (same shape as the forward output).

        Returns (param_grads, grad_input). Parameter gradients are summed over
        the batch; grad_input matches the input's shape.
        """
        if cache is None:
            raise ValueError("backward requires the cache from forward_cache")
        acts, single = cache
        g = np.atleast_2d(np.asarray(grad_out, dtype=float)) * self.output_scale
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            grads[2 * i] = g.T @ acts[i]
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i]
        grad_in = g * self.input_scale
        return grads, (grad_in[0] if single else grad_in)

    def to_entries(self, prefix=""):
        entries = {prefix + "layer_sizes": np.array(self.layer_sizes, dtype=float)}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            entries[prefix + "W%d" % i] = w
            entries[prefix + "b%d" % i] = b
        entries[prefix + "input_scale"] = self.input_scale
        entries[prefix + "output_scale"] = np.array([self.output_scale])
        return entries

    @staticmethod
    def from_entries(entries, prefix=""):
        sizes = [int(s) for s in entries[prefix + "layer_sizes"]]
        mlp = Mlp(sizes, seed=0,
                  input_scale=entries[prefix + "input_scale"],
                  output_scale=float(entries[prefix + "output_scale"][0]))
        for i in range(len(sizes) - 1):
            mlp.weights[i][...] = entries[prefix + "W%d" % i]
            mlp.biases[i][...] = entries[prefix + "b%d" % i]
        return mlp


class GaussianPolicy:
    """Diagonal Gaussian over actions: mean from an Mlp, state-independent log_std.

    log_std is clamped to [LOG_STD_MIN, LOG_STD_MAX] wherever it is used; the
    clamp also zeroes its gradient outside the range.
    """

    def __init__(self, mlp: Mlp, log_std_init=-0.9):
        self.mlp = mlp
        self.action_dim = mlp.layer_sizes[-1]
        self.log_std = np.full(self.action_dim, float(log_std_init))

    def _std(self):
        ls = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        return ls, np.exp(ls)

    def mean(self, obs):
        return self.mlp.forward(obs)

    def sample(self, obs, rng):
        """Draw action(s) and return (action, log_prob) for the pre-clamp action.

        log_prob is computed from the stored action (not from eps) so that a
        later recomputation under the same parameters is bit-identical.
        """
        mean = self.mlp.forward(obs)
        ls, std = self._std()
        eps = rng.standard_normal(mean.shape)
        action = mean + std * eps
        u = (action - mean) / std
        logp = -0.5 * np.sum(u ** 2, axis=-1) - np.sum(ls) - self.action_dim * _HALF_LOG_2PI
        return action, logp

    def log_prob(self, obs, actions):
        mean = self.mlp.forward(obs)
        ls, std = self._std()
        u = (np.asarray(actions) - mean) / std
        return -0.5 * np.sum(u ** 2, axis=-1) - np.sum(ls) - self.action_dim * _HALF_LOG_2PI

    def entropy(self):
        """Entropy of the (state-independent-width) Gaussian, one scalar."""
        ls, _ = self._std()
        return float(np.sum(ls) + self.action_dim * (0.5 + _HALF_LOG_2PI))

    def log_prob_grads(self, obs, actions, dlogp, dentropy=0.0):
        """Gradients of sum_i dlogp[i]*logp_i + dentropy*H wrt policy parameters.

        Returns (logp (B,), mlp_grads, log_std_grad). This is the single entry
        point the trainer uses, so the clipped-surrogate chain rule lives in
        one place.
        """
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        actions = np.atleast_2d(np.asarray(actions, dtype=float))
        dlogp = np.asarray(dlogp, dtype=float).reshape(obs.shape[0])
        mean, cache = self.mlp.forward_cache(obs)
        ls, std = self._std()
        u = (actions - mean) / std
        logp = -0.5 * np.sum(u ** 2, axis=-1) - np.sum(ls) - self.action_dim * _HALF_LOG_2PI

        dmean = dlogp[:, None] * (u / std)
        mlp_grads, _ = self.mlp.backward(cache, dmean)
        active = ((self.log_std > LOG_STD_MIN) & (self.log_std < LOG_STD_MAX)).astype(float)
        log_std_grad = (dlogp[:, None] * (u ** 2 - 1.0)).sum(axis=0) * active
        log_std_grad += float(dentropy) * active
        return logp, mlp_grads, log_std_grad

    @property
    def params(self):
        return self.mlp.params + [self.log_std]

    def to_entries(self, prefix=""):
        entries = self.mlp.to_entries(prefix)
        entries[prefix + "log_std"] = self.log_std
        return entries

    @staticmethod
    def from_entries(entries, prefix=""):
        pol = GaussianPolicy(Mlp.from_entries(entries, prefix))
        pol.log_std[...] = entries[prefix + "log_std"]
        return pol


# --- Adam --------------------------------------------------------------------

class AdamState:
    """Per-parameter-list Adam moments."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def to_entries(self, prefix=""):
        entries = {prefix + "adam_meta": np.array([self.lr, self.beta1, self.beta2, self.eps, float(self.t)])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            entries[prefix + "adam_m%d" % i] = m
            entries[prefix + "adam_v%d" % i] = v
        return entries

    @staticmethod
    def from_entries(entries, params, prefix=""):
        meta = entries[prefix + "adam_meta"]
        st = AdamState(params, lr=meta[0], beta1=meta[1], beta2=meta[2], eps=meta[3])
        st.t = int(meta[4])
        for i in range(len(params)):
            st.m[i][...] = entries[prefix + "adam_m%d" % i]
            st.v[i][...] = entries[prefix + "adam_v%d" % i]
        return st


def adam_step(params, grads, state: AdamState):
    """One in-place Adam update with bias correction.

    Raises ValueError if any gradient entry is not finite (divergence guard:
    better to stop than to write NaN into every parameter).
    """
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient passed to adam_step")
    state.t += 1
    b1t = 1.0 - state.beta1 ** state.t
    b2t = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / b1t) / (np.sqrt(v / b2t) + state.eps)


# --- checkpoint io -----------------------------------------------------------

_MAGIC = b"CPNET001"


def save_arrays(path, entries):
    """Write named float64 arrays: versioned magic, size manifest, then raw
    little-endian payloads in declaration order."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(entries)))
        arrays = []
        for name, arr in entries.items():
            arr = np.ascontiguousarray(np.asarray(arr, dtype=float))
            arrays.append(arr)
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
        for arr in arrays:
            f.write(arr.astype("<f8", copy=False).tobytes())


def load_arrays(path):
    """Read a checkpoint written by save_arrays; returns name -> array (ordered)."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _MAGIC:
            raise ValueError("not a checkpoint file (bad magic): %r" % magic)
        (n,) = struct.unpack("<I", f.read(4))
        shapes = []
        for _ in range(n):
            (ln,) = struct.unpack("<H", f.read(2))
            name = f.read(ln).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            shapes.append((name, shape))
        out = {}
        for name, shape in shapes:
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * count), dtype="<f8").astype(float)
            out[name] = data.reshape(shape)
    return out
