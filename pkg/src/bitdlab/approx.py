"""State features and the two-head value network.

The net has a shared rectifier torso (or the identity, for the linear case)
and two physical scalar heads ``A`` and ``B``.  Each parameterization names
which value function every head realizes and which one is the composite::

    BiTD_FR : forward = A,      backward = B,      bidirectional = A + B
    BiTD_BiR: bidirectional = A, backward = B,     forward = A - B
    BiTD_FBi: forward = A,      bidirectional = B, backward = B - A

Parameters live in one flat array laid out as
``[W1 (hidden x inputs, row-major) | b1 | wA | bA | wB | bB]``; the identity
torso drops ``W1``, ``b1`` and both head biases.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

HEADS = ("forward", "backward", "bidirectional")
PARAMETERIZATIONS = ("BiTD_FR", "BiTD_BiR", "BiTD_FBi")
TORSOS = ("relu", "identity")

# head -> (coefficient on A, coefficient on B)
HEAD_COMBOS = {
    "BiTD_FR": {"forward": (1.0, 0.0), "backward": (0.0, 1.0), "bidirectional": (1.0, 1.0)},
    "BiTD_BiR": {"forward": (1.0, -1.0), "backward": (0.0, 1.0), "bidirectional": (1.0, 0.0)},
    "BiTD_FBi": {"forward": (1.0, 0.0), "backward": (-1.0, 1.0), "bidirectional": (0.0, 1.0)},
}


@dataclass(frozen=True)
class FeatureMap:
    """Deterministic encoding of non-terminal state indices ``0 .. n_states-1``."""

    kind: str
    n_states: int
    anchors: tuple[int, ...] = ()
    _table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "one_hot":
            table = np.eye(self.n_states)
        elif self.kind == "triangular_overlap":
            anchors = tuple(int(a) for a in self.anchors)
            if len(anchors) < 2 or list(anchors) != sorted(set(anchors)):
                raise ValueError("need at least two strictly increasing anchors")
            if anchors[0] < 0 or anchors[-1] >= self.n_states:
                raise ValueError("anchors must lie on states")
            object.__setattr__(self, "anchors", anchors)
            pos = np.arange(self.n_states, dtype=float)
            table = np.stack([np.interp(pos, anchors, col) for col in np.eye(len(anchors))], axis=1)
        else:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        table.setflags(write=False)
        object.__setattr__(self, "_table", table)

    @classmethod
    def one_hot(cls, n_states: int) -> "FeatureMap":
        return cls("one_hot", n_states)

    @classmethod
    def triangular(cls, n_states: int, anchors=None) -> "FeatureMap":
        if anchors is None:
            anchors = range(0, n_states, 2)
        return cls("triangular_overlap", n_states, tuple(anchors))

    @property
    def dim(self) -> int:
        return self._table.shape[1]

    def encode(self, state: int) -> np.ndarray:
        if not 0 <= state < self.n_states:
            raise IndexError(f"state {state} outside 0..{self.n_states - 1}")
        return self._table[state]

    def matrix(self, total_states: int | None = None) -> np.ndarray:
        """Feature rows for every state index; rows past ``n_states`` are zero."""
        total = self.n_states if total_states is None else total_states
        out = np.zeros((total, self.dim))
        out[: self.n_states] = self._table
        return out


def encode(fmap: FeatureMap, state: int) -> np.ndarray:
    return fmap.encode(state)


class Layout(NamedTuple):
    n_inputs: int
    hidden: int
    torso: str

    @property
    def size(self) -> int:
        if self.torso == "identity":
            return 2 * self.n_inputs
        return self.hidden * self.n_inputs + 3 * self.hidden + 2

    def slices(self) -> dict[str, slice]:
        d, h = self.n_inputs, self.hidden
        if self.torso == "identity":
            return {"wA": slice(0, d), "wB": slice(d, 2 * d)}
        o = h * d
        return {"W1": slice(0, o), "b1": slice(o, o + h),
                "wA": slice(o + h, o + 2 * h), "bA": slice(o + 2 * h, o + 2 * h + 1),
                "wB": slice(o + 2 * h + 1, o + 3 * h + 1),
                "bB": slice(o + 3 * h + 1, o + 3 * h + 2)}


@dataclass(frozen=True)
class MultiHeadNet:
    params: np.ndarray
    n_inputs: int
    hidden: int
    parameterization: str = "BiTD_FR"
    torso: str = "relu"

    def __post_init__(self):
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
        if self.torso not in TORSOS:
            raise ValueError(f"torso must be one of {TORSOS}")
        if self.torso == "identity" and self.hidden != self.n_inputs:
            raise ValueError("identity torso requires hidden == n_inputs")
        p = np.array(self.params, dtype=float)
        if p.shape != (self.layout.size,):
            raise ValueError(f"expected {self.layout.size} parameters, got {p.shape}")
        p.setflags(write=False)
        object.__setattr__(self, "params", p)

    @property
    def layout(self) -> Layout:
        return Layout(self.n_inputs, self.hidden, self.torso)

    def part(self, name: str) -> np.ndarray:
        return self.params[self.layout.slices()[name]]

    @property
    def W1(self) -> np.ndarray:
        return self.part("W1").reshape(self.hidden, self.n_inputs)

    def with_params(self, params: np.ndarray) -> "MultiHeadNet":
        return MultiHeadNet(params, self.n_inputs, self.hidden, self.parameterization, self.torso)

    def with_parameterization(self, parameterization: str) -> "MultiHeadNet":
        return MultiHeadNet(self.params, self.n_inputs, self.hidden, parameterization, self.torso)

    # -- serialization --
    def to_json(self) -> str:
        header = {"n_inputs": self.n_inputs, "hidden": self.hidden,
                  "parameterization": self.parameterization, "torso": self.torso,
                  "size": self.layout.size}
        return json.dumps({"shape": header, "params": [float(x) for x in self.params]})

    @classmethod
    def from_json(cls, text: str) -> "MultiHeadNet":
        blob = json.loads(text)
        hdr = blob["shape"]
        net = cls(np.array(blob["params"], dtype=float), hdr["n_inputs"], hdr["hidden"],
                  hdr["parameterization"], hdr["torso"])
        if net.layout.size != hdr["size"]:
            raise ValueError("shape header disagrees with parameter count")
        return net


def init_net(n_inputs: int, hidden: int, rng: np.random.Generator,
             parameterization: str = "BiTD_FR", torso: str = "relu",
             scale: float = 0.5, bias_scale: float = 0.0) -> MultiHeadNet:
    """Weights uniform in ``[-scale, scale]``; biases uniform in ``[-bias_scale, bias_scale]``."""
    layout = Layout(n_inputs, hidden if torso == "relu" else n_inputs, torso)
    params = np.zeros(layout.size)
    for name, sl in layout.slices().items():
        width = scale if name in ("W1", "wA", "wB") else bias_scale
        n = sl.stop - sl.start
        params[sl] = rng.uniform(-width, width, size=n) if width > 0 else 0.0
    return MultiHeadNet(params, n_inputs, layout.hidden, parameterization, torso)


def zero_net(n_inputs: int, hidden: int, parameterization: str = "BiTD_FR",
             torso: str = "relu") -> MultiHeadNet:
    layout = Layout(n_inputs, hidden if torso == "relu" else n_inputs, torso)
    return MultiHeadNet(np.zeros(layout.size), n_inputs, layout.hidden, parameterization, torso)


def _check_input(net: MultiHeadNet, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.shape != (net.n_inputs,):
        raise ValueError(f"expected {net.n_inputs} features, got shape {x.shape}")
    return x


def physical_heads(net: MultiHeadNet, features: np.ndarray) -> tuple[float, float]:
    x = _check_input(net, features)
    if net.torso == "identity":
        return float(net.part("wA") @ x), float(net.part("wB") @ x)
    h = np.maximum(net.W1 @ x + net.part("b1"), 0.0)
    return (float(net.part("wA") @ h + net.part("bA")[0]),
            float(net.part("wB") @ h + net.part("bB")[0]))


def physical_gradients(net: MultiHeadNet, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of heads ``A`` and ``B`` with respect to the flat parameters."""
    x = _check_input(net, features)
    sl = net.layout.slices()
    gA = np.zeros(net.layout.size)
    gB = np.zeros(net.layout.size)
    if net.torso == "identity":
        gA[sl["wA"]] = x
        gB[sl["wB"]] = x
        return gA, gB
    z = net.W1 @ x + net.part("b1")
    active = (z > 0.0).astype(float)  # subgradient 0 at the kink
    h = z * active
    for g, w, wname, bname in ((gA, net.part("wA"), "wA", "bA"),
                               (gB, net.part("wB"), "wB", "bB")):
        back = w * active
        g[sl["W1"]] = np.outer(back, x).ravel()
        g[sl["b1"]] = back
        g[sl[wname]] = h
        g[sl[bname]] = 1.0
    return gA, gB


def forward_all(net: MultiHeadNet, features: np.ndarray) -> tuple[float, float, float]:
    """``(v_forward, v_backward, v_bidirectional)`` from one pass."""
    a, b = physical_heads(net, features)
    combos = HEAD_COMBOS[net.parameterization]
    out = []
    for head in HEADS:
        ca, cb = combos[head]
        if cb == 0.0:
            out.append(a)
        elif ca == 0.0:
            out.append(b)
        else:
            out.append(ca * a + cb * b)
    return out[0], out[1], out[2]


@dataclass(frozen=True)
class GradientVector:
    values: np.ndarray
    head: str

    def __add__(self, other: "GradientVector") -> np.ndarray:
        return self.values + other.values


def gradient(net: MultiHeadNet, features: np.ndarray, head: str) -> GradientVector:
    """Exact partial derivatives of one head's value.

    Composite heads return the signed sum of their constituents' gradients.
    """
    if head not in HEADS:
        raise ValueError(f"head must be one of {HEADS}")
    gA, gB = physical_gradients(net, features)
    ca, cb = HEAD_COMBOS[net.parameterization][head]
    if cb == 0.0:
        g = gA
    elif ca == 0.0:
        g = gB
    else:
        g = ca * gA + cb * gB
    return GradientVector(g, head)


def head_parameter_mask(net: MultiHeadNet, head: str) -> np.ndarray:
    """Boolean mask of the parameters a head depends on (theta, phi or psi)."""
    sl = net.layout.slices()
    mask = np.zeros(net.layout.size, dtype=bool)
    ca, cb = HEAD_COMBOS[net.parameterization][head]
    shared = ("W1", "b1") if net.torso == "relu" else ()
    for name in shared:
        mask[sl[name]] = True
    for coef, names in ((ca, ("wA", "bA")), (cb, ("wB", "bB"))):
        if coef != 0.0:
            for name in names:
                if name in sl:
                    mask[sl[name]] = True
    return mask


def sgd_step(net: MultiHeadNet, grad: GradientVector | np.ndarray, coefficient: float) -> MultiHeadNet:
    """Return a copy with ``params + coefficient * grad``."""
    g = grad.values if isinstance(grad, GradientVector) else np.asarray(grad, float)
    if coefficient == 0.0:
        return net
    return net.with_params(net.params + coefficient * g)
