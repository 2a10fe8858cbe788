"""Multilayer perceptrons on top of :mod:`pseudeq.autodiff`, plus SGD/ADAM steps."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Gradients, Tape, Tensor

ACTIVATIONS = ("relu", "softmax", "identity")


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class Layer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    act: str = "identity"

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ValueError(f"bad layer shapes w={self.w.shape} b={self.b.shape}")


@dataclass
class MlpParams:
    layers: list[Layer]

    def __post_init__(self):
        for k in range(len(self.layers) - 1):
            out_k, in_next = self.layers[k].w.shape[0], self.layers[k + 1].w.shape[1]
            if out_k != in_next:
                raise ValueError(f"layer {k} out-dim {out_k} != layer {k + 1} in-dim {in_next}")
        for layer in self.layers[:-1]:
            if layer.act == "softmax":
                raise ValueError("softmax is only allowed on the final layer")

    @property
    def in_dim(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[0]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.w, layer.b]
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        it = iter(arrays)
        return MlpParams([Layer(next(it), next(it), l.act) for l in self.layers])

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def to_dict(self) -> dict:
        return {"layers": [{"w": l.w.tolist(), "b": l.b.tolist(), "act": l.act} for l in self.layers]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MlpParams":
        return cls([Layer(np.array(l["w"], dtype=np.float64).reshape(len(l["w"]), -1),
                          l["b"], l["act"]) for l in d["layers"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "MlpParams":
        return cls.from_dict(json.loads(s))


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, hidden_act="relu",
             out_act="identity") -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    layers = []
    for k, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        lim = np.sqrt(6.0 / (fi + fo))
        act = out_act if k == len(sizes) - 2 else hidden_act
        layers.append(Layer(rng.uniform(-lim, lim, size=(fo, fi)), np.zeros(fo), act))
    return MlpParams(layers)


def forward(params: MlpParams, x, tape: Tape) -> Tensor:
    """Apply the network to the last axis of ``x`` (leading axes are batch)."""
    if not isinstance(x, Tensor):
        x = tape.const(x)
    if x.shape[-1] != params.in_dim:
        raise ValueError(f"input last dim {x.shape} does not match first layer in-dim "
                         f"{params.layers[0].w.shape}")
    leaves = tape.watch(params, params.arrays())
    h = x
    for k, layer in enumerate(params.layers):
        w, b = leaves[2 * k], leaves[2 * k + 1]
        h = ad.matmul(h, ad.transpose(w)) + b
        if layer.act == "relu":
            h = ad.relu(h)
        elif layer.act == "softmax":
            h = ad.softmax(h, axis=-1)
    return h


def param_grads(params: MlpParams, tape: Tape, grads: Gradients) -> list[np.ndarray]:
    leaves = tape.watched(params)
    if leaves is None:
        return [np.zeros_like(a) for a in params.arrays()]
    return [grads.wrt(t) for t in leaves]


# --------------------------------------------------------------------------
# optimisers

ParamTree = Union[MlpParams, Mapping[str, MlpParams]]


def _flatten(params: ParamTree) -> list[np.ndarray]:
    if isinstance(params, MlpParams):
        return params.arrays()
    out = []
    for key in sorted(params):
        out += params[key].arrays()
    return out


def _unflatten(params: ParamTree, arrays: list[np.ndarray]) -> ParamTree:
    if isinstance(params, MlpParams):
        return params.with_arrays(arrays)
    out, i = {}, 0
    for key in sorted(params):
        n = len(params[key].arrays())
        out[key] = params[key].with_arrays(arrays[i:i + n])
        i += n
    return out


def tree_grads(params: ParamTree, tape: Tape, grads: Gradients) -> list[np.ndarray]:
    if isinstance(params, MlpParams):
        return param_grads(params, tape, grads)
    out = []
    for key in sorted(params):
        out += param_grads(params[key], tape, grads)
    return out


@dataclass
class OptState:
    kind: str = "adam"          # "sgd" | "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "t": self.t, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "OptState":
        return cls(d["kind"], d["beta1"], d["beta2"], d["eps"], d["t"],
                   [np.array(a, dtype=np.float64) for a in d["m"]],
                   [np.array(a, dtype=np.float64) for a in d["v"]])


def step(params: ParamTree, grads: Sequence[np.ndarray], opt: OptState, lr: float,
         ascent: bool = False) -> ParamTree:
    """One optimiser update. Returns new parameters; ``opt`` is advanced in place."""
    ps = _flatten(params)
    if len(grads) != len(ps) or any(g.shape != p.shape for g, p in zip(grads, ps)):
        raise ValueError("gradient shapes do not match parameter shapes")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("non-finite gradient")
    sign = 1.0 if ascent else -1.0
    opt.t += 1
    if opt.kind == "sgd":
        new = [p + sign * lr * g for p, g in zip(ps, grads)]
    elif opt.kind == "adam":
        if not opt.m:
            opt.m = [np.zeros_like(p) for p in ps]
            opt.v = [np.zeros_like(p) for p in ps]
        bc1 = 1.0 - opt.beta1 ** opt.t
        bc2 = 1.0 - opt.beta2 ** opt.t
        new = []
        for i, (p, g) in enumerate(zip(ps, grads)):
            opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g
            opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g
            new.append(p + sign * lr * (opt.m[i] / bc1) / (np.sqrt(opt.v[i] / bc2) + opt.eps))
    else:
        raise ValueError(f"unknown optimiser {opt.kind!r}")
    with np.errstate(over="ignore", invalid="ignore"):
        if not all(np.all(np.isfinite(p)) for p in new):
            raise NonFiniteGradient("update produced non-finite parameters")
    return _unflatten(params, new)
