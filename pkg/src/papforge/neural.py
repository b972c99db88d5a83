"""Small dense networks with hand-written reverse-mode gradients and Adam."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LEAKY_SLOPE = 0.01
ACTIVATIONS = ("leaky_relu", "hard_tanh", "identity")


def leaky_relu(h):
    # max(h, a*h) equals the piecewise form for 0 < a < 1
    return np.maximum(h, LEAKY_SLOPE * h)


def hard_tanh(h):
    return np.clip(h, -1.0, 1.0)


def _activate(name, h):
    if name == "leaky_relu":
        return leaky_relu(h)
    if name == "hard_tanh":
        return hard_tanh(h)
    if name == "identity":
        return h
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name, h, grad):
    if name == "leaky_relu":
        return np.where(h > 0, grad, LEAKY_SLOPE * grad)
    if name == "hard_tanh":
        return np.where((h > -1.0) & (h < 1.0), grad, 0.0).astype(grad.dtype, copy=False)
    return grad


@dataclass
class Dense:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: str


@dataclass
class ForwardCache:
    owner: object
    inputs: list
    pre: list


class DenseNet:
    """Chain of affine layers, each followed by an elementwise activation."""

    def __init__(self, layers):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.weight.shape[1],):
                raise ValueError("bias does not match layer width")

    @classmethod
    def init(cls, sizes, activations, rng, dtype=np.float32):
        """He-style initialization for layer widths ``sizes``."""
        if len(activations) != len(sizes) - 1:
            raise ValueError("one activation per layer")
        layers = []
        for n_in, n_out, act in zip(sizes, sizes[1:], activations):
            w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out)).astype(dtype)
            layers.append(Dense(w, np.zeros(n_out, dtype=dtype), act))
        return cls(layers)

    @staticmethod
    def param_count(sizes):
        return sum(a * b + b for a, b in zip(sizes, sizes[1:]))

    @classmethod
    def from_flat(cls, flat, sizes, activations):
        """Network whose weights are views into the 1-D array ``flat``."""
        if flat.shape != (cls.param_count(sizes),):
            raise ValueError(f"flat vector has {flat.size} entries, "
                             f"architecture needs {cls.param_count(sizes)}")
        layers, o = [], 0
        for n_in, n_out, act in zip(sizes, sizes[1:], activations):
            w = flat[o:o + n_in * n_out].reshape(n_in, n_out)
            o += n_in * n_out
            layers.append(Dense(w, flat[o:o + n_out], act))
            o += n_out
        return cls(layers)

    @property
    def sizes(self):
        return [self.layers[0].weight.shape[0]] + [l.weight.shape[1] for l in self.layers]

    @property
    def activations(self):
        return [l.activation for l in self.layers]

    def parameters(self):
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def flat_parameters(self):
        return np.concatenate([p.ravel() for p in self.parameters()])

    def forward(self, x):
        x = np.asarray(x)
        if x.shape[-1] != self.layers[0].weight.shape[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.layers[0].weight.shape[0]}")
        inputs, pre = [], []
        h = x
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.weight + layer.bias
            pre.append(z)
            h = _activate(layer.activation, z)
        return h, ForwardCache(self, inputs, pre)

    def __call__(self, x):
        """Inference only: no cache, activations applied in place."""
        x = np.asarray(x)
        if x.shape[-1] != self.layers[0].weight.shape[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.layers[0].weight.shape[0]}")
        h = x
        for layer in self.layers:
            h = h @ layer.weight
            h += layer.bias
            if layer.activation == "leaky_relu":
                np.maximum(h, LEAKY_SLOPE * h, out=h)
            elif layer.activation == "hard_tanh":
                np.clip(h, -1.0, 1.0, out=h)
        return h

    def backward(self, cache, grad_out):
        """Gradients ``[(dW, db), ...]`` and the gradient w.r.t. the input."""
        if cache.owner is not self or len(cache.pre) != len(self.layers):
            raise ValueError("forward cache does not belong to this network")
        grads = [None] * len(self.layers)
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g = _activation_grad(layer.activation, cache.pre[i], g)
            x = cache.inputs[i]
            if x.ndim == 1:
                dw, db = np.outer(x, g), g
            else:
                dw, db = x.T @ g, g.sum(axis=0)
            grads[i] = (dw, db)
            g = g @ layer.weight.T
        return grads, g

    @staticmethod
    def flatten_grads(grads):
        return np.concatenate([a.ravel() for pair in grads for a in pair])

    def to_arrays(self, prefix):
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}.{i}.weight"] = layer.weight
            out[f"{prefix}.{i}.bias"] = layer.bias
        return out

    @classmethod
    def from_arrays(cls, arrays, prefix, activations):
        return cls([Dense(arrays[f"{prefix}.{i}.weight"], arrays[f"{prefix}.{i}.bias"], act)
                    for i, act in enumerate(activations)])

    def copy(self):
        return DenseNet([Dense(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])


def dense_forward(net, x):
    return net.forward(x)


def dense_backward(net, cache, upstream_grad):
    return net.backward(cache, upstream_grad)


def kl_standard_gaussian(mu, sigma):
    """KL(N(mu, sigma^2 I) || N(0, I)), summed over the last axis."""
    mu, sigma = np.asarray(mu), np.asarray(sigma)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    return 0.5 * np.sum(mu**2 + sigma**2 - 1.0 - 2.0 * np.log(sigma), axis=-1)


class Adam:
    """Adaptive-moment optimizer with bias correction, updating arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        if len(params) != len(self.m):
            raise ValueError("parameter list does not match optimizer state")
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        step = self.lr * np.sqrt(c2) / c1
        eps = self.eps * np.sqrt(c2)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (step * m / (np.sqrt(v) + eps)).astype(p.dtype, copy=False)
        return params


def optimizer_step(state, params, grads):
    return state.step(params, grads)


def save_bundle(path, arrays, meta=None):
    """Write ``path.json`` (names, shapes, offsets) and ``path.bin`` (little-endian f32)."""
    path = Path(path)
    entries, offset, chunks = [], 0, []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        chunks.append(a.ravel())
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    path.with_suffix(".bin").write_bytes(blob.astype("<f4").tobytes())
    manifest = {"dtype": "float32-le", "arrays": entries, "meta": meta or {}}
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_bundle(path):
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    blob = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f4")
    arrays = {}
    for e in manifest["arrays"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arrays[e["name"]] = blob[e["offset"]:e["offset"] + n].astype(np.float32).reshape(e["shape"])
    return arrays, manifest["meta"]
