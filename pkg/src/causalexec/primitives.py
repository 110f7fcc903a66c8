"""Causal primitives: typed slots, activation conditions, a parametric
executor, an activation map into [0,1], and a nonnegative uncertainty map.

Executor families are desk-scale stand-ins, one per abstraction layer:
affine networks for continuous dynamics, neurally scored finite-state
transitions, fixed-horizon linear recurrences for event encodings, and
soft logic over truth values.  Every family is differentiable in its
parameters through the reverse-mode tape.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ag
from . import numerics as nx
from .typesys import (
    TypeSig,
    format_sig,
    parse_sig,
    sig_dim,
    value_dim,
)

LAYERS = ("Phys", "Func", "Event", "Rule")
LAYER_INDEX = {name: i for i, name in enumerate(LAYERS)}

SCHEMA_VERSION = 1


class SignatureError(ValueError):
    """A value map does not conform to a primitive's signature."""

    def __init__(self, slot: str, message: str):
        super().__init__(f"slot {slot!r}: {message}")
        self.slot = slot


class ConditionError(ValueError):
    """An activation condition references a slot the signature lacks."""


# ---------------------------------------------------------------------
# condition predicates: threshold, equality, conjunction
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class Predicate:
    """Soft predicate over input slots, truth value in [0,1].

    kinds: ``ge``/``le`` (sigmoid threshold on the slot mean), ``eq``
    (Gaussian bump around a value), ``and`` (product of children).
    """

    kind: str
    slot: str = ""
    value: float = 0.0
    sharpness: float = 4.0
    children: tuple["Predicate", ...] = ()

    def referenced_slots(self) -> set[str]:
        if self.kind == "and":
            out: set[str] = set()
            for c in self.children:
                out |= c.referenced_slots()
            return out
        return {self.slot}

    def truth(self, inputs: dict):
        if self.kind == "and":
            t = 1.0
            for c in self.children:
                t = t * c.truth(inputs)
            return t
        if self.slot not in inputs:
            raise ConditionError(f"condition references missing slot {self.slot!r}")
        m = ag.mean_(inputs[self.slot])
        if self.kind == "ge":
            return ag.sigmoid(self.sharpness * (m - self.value))
        if self.kind == "le":
            return ag.sigmoid(self.sharpness * (self.value - m))
        if self.kind == "eq":
            d = m - self.value
            return ag.exp(-self.sharpness * d * d)
        raise ValueError(f"unknown predicate kind {self.kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "and":
            return {"kind": "and", "children": [c.to_dict() for c in self.children]}
        return {
            "kind": self.kind,
            "slot": self.slot,
            "value": self.value,
            "sharpness": self.sharpness,
        }

    @staticmethod
    def from_dict(d: dict) -> "Predicate":
        if d["kind"] == "and":
            return Predicate(
                "and", children=tuple(Predicate.from_dict(c) for c in d["children"])
            )
        return Predicate(d["kind"], d["slot"], d["value"], d.get("sharpness", 4.0))


# ---------------------------------------------------------------------
# executor families
# ---------------------------------------------------------------------

class Executor:
    """Parametric map from a flat input vector to a flat output vector."""

    family: str = ""
    in_dim: int = 0
    out_dim: int = 0
    n_params: int = 0

    def forward(self, params, x):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class AffineNet(Executor):
    """Stacked affine layers with an elementwise nonlinearity in between.

    ``out_nonlinearity`` optionally squashes the last layer (used for
    rule-valued outputs that must stay in [0,1]).
    """

    widths: tuple[int, ...]
    nonlinearity: str = "tanh"
    out_nonlinearity: str = "linear"
    family: str = field(default="affine", init=False)

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("affine net needs at least input and output widths")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @property
    def n_params(self) -> int:
        return sum(
            self.widths[i + 1] * self.widths[i] + self.widths[i + 1]
            for i in range(len(self.widths) - 1)
        )

    def _nl(self, name: str, z):
        if name == "linear":
            return z
        if name == "tanh":
            return ag.tanh(z)
        if name == "sigmoid":
            return ag.sigmoid(z)
        if name == "relu":
            return ag.relu(z)
        raise ValueError(f"unknown nonlinearity {name!r}")

    def forward(self, params, x):
        off = 0
        h = x
        last = len(self.widths) - 2
        for i in range(len(self.widths) - 1):
            n_in, n_out = self.widths[i], self.widths[i + 1]
            w = ag.reshape(params[off:off + n_out * n_in], (n_out, n_in))
            off += n_out * n_in
            b = params[off:off + n_out]
            off += n_out
            h = ag.matmul(w, h) + b
            h = self._nl(self.out_nonlinearity if i == last else self.nonlinearity, h)
        return h

    def to_dict(self) -> dict:
        return {
            "family": "affine",
            "widths": list(self.widths),
            "nonlinearity": self.nonlinearity,
            "out_nonlinearity": self.out_nonlinearity,
        }


@dataclass(frozen=True)
class Fsm(Executor):
    """Finite-state step with a neurally scored transition table.

    Input is a state distribution (length ``n_states``) optionally
    followed by a drive vector; output is the next state distribution.
    With ``state_input`` False the prior over states is uniform and only
    the drive vector is consumed.
    """

    n_states: int
    drive_dim: int = 0
    state_input: bool = True
    family: str = field(default="fsm", init=False)

    @property
    def in_dim(self) -> int:
        return (self.n_states if self.state_input else 0) + self.drive_dim

    @property
    def out_dim(self) -> int:
        return self.n_states

    @property
    def n_params(self) -> int:
        return self.n_states * self.n_states + self.drive_dim * self.n_states

    def forward(self, params, x):
        s2 = self.n_states * self.n_states
        base = ag.reshape(params[:s2], (self.n_states, self.n_states))
        if self.state_input:
            state = x[: self.n_states]
            drive = x[self.n_states:]
        else:
            state = np.full(self.n_states, 1.0 / self.n_states)
            drive = x
        logits = base
        if self.drive_dim:
            u = ag.reshape(params[s2:], (self.drive_dim, self.n_states))
            logits = logits + ag.matmul(drive, u)
        probs = ag.softmax(logits, axis=-1)
        return ag.matmul(state, probs)

    def to_dict(self) -> dict:
        return {
            "family": "fsm",
            "n_states": self.n_states,
            "drive_dim": self.drive_dim,
            "state_input": self.state_input,
        }


@dataclass(frozen=True)
class SeqPattern(Executor):
    """Fixed-horizon linear recurrence over an event encoding."""

    horizon: int
    input_dim: int
    state_dim: int
    family: str = field(default="seq", init=False)

    @property
    def in_dim(self) -> int:
        return self.input_dim

    @property
    def out_dim(self) -> int:
        return self.state_dim

    @property
    def n_params(self) -> int:
        return self.state_dim * self.state_dim + self.state_dim * self.input_dim

    def forward(self, params, x):
        d, k = self.state_dim, self.input_dim
        a = ag.reshape(params[: d * d], (d, d))
        b = ag.reshape(params[d * d:], (d, k))
        h = ag.matmul(b, x)
        for _ in range(self.horizon - 1):
            h = ag.matmul(a, h) + ag.matmul(b, x)
        return h

    def to_dict(self) -> dict:
        return {
            "family": "seq",
            "horizon": self.horizon,
            "input_dim": self.input_dim,
            "state_dim": self.state_dim,
        }


@dataclass(frozen=True)
class SoftRule(Executor):
    """Differentiable logic over truth values in [0,1].

    ``and``:      prod_i (1 - w_i (1 - p_i))
    ``or``:       1 - prod_i (1 - w_i p_i)
    ``implies``:  1 - AND(body) * (1 - p_head), head is the last input
    with per-input gates w_i = sigmoid(param_i).
    """

    n_inputs: int
    kind: str = "and"
    family: str = field(default="rule", init=False)

    def __post_init__(self):
        if self.kind not in ("and", "or", "implies"):
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.kind == "implies" and self.n_inputs < 2:
            raise ValueError("implication needs a body and a head")

    @property
    def in_dim(self) -> int:
        return self.n_inputs

    @property
    def out_dim(self) -> int:
        return 1

    @property
    def n_params(self) -> int:
        return self.n_inputs

    def _conj(self, w, p, n: int):
        out = 1.0
        for i in range(n):
            out = out * (1.0 - w[i] * (1.0 - p[i]))
        return out

    def forward(self, params, x):
        w = ag.sigmoid(params)
        if self.kind == "and":
            val = self._conj(w, x, self.n_inputs)
        elif self.kind == "or":
            prod = 1.0
            for i in range(self.n_inputs):
                prod = prod * (1.0 - w[i] * x[i])
            val = 1.0 - prod
        else:
            body = self._conj(w, x, self.n_inputs - 1)
            val = 1.0 - body * (1.0 - x[self.n_inputs - 1])
        return ag.reshape(val, (1,))

    def to_dict(self) -> dict:
        return {"family": "rule", "n_inputs": self.n_inputs, "kind": self.kind}


def executor_from_dict(d: dict) -> Executor:
    fam = d["family"]
    if fam == "affine":
        return AffineNet(
            tuple(d["widths"]), d.get("nonlinearity", "tanh"),
            d.get("out_nonlinearity", "linear"),
        )
    if fam == "fsm":
        return Fsm(d["n_states"], d.get("drive_dim", 0), d.get("state_input", True))
    if fam == "seq":
        return SeqPattern(d["horizon"], d["input_dim"], d["state_dim"])
    if fam == "rule":
        return SoftRule(d["n_inputs"], d.get("kind", "and"))
    raise ValueError(f"unknown executor family {fam!r}")


# ---------------------------------------------------------------------
# the primitive itself
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class ActivationSpec:
    """`constant` pins the activation; `sigmoid_affine` maps condition
    truths through a learned affine into a sigmoid."""

    kind: str = "sigmoid_affine"
    value: float = 1.0

    def n_params(self, n_conditions: int) -> int:
        return 0 if self.kind == "constant" else n_conditions + 1


@dataclass(frozen=True)
class UncertaintySpec:
    """`constant` pins the uncertainty; `quadratic` is a softplus of a
    learned form over squared input/output magnitudes."""

    kind: str = "quadratic"
    value: float = 0.0

    def n_params(self) -> int:
        return 0 if self.kind == "constant" else 3


class PrimitiveBase:
    """Shared surface of atomic primitives and algebra composites."""

    id: str
    layer: str
    in_sig: TypeSig
    out_sig: TypeSig

    @property
    def n_params(self) -> int:
        raise NotImplementedError

    def get_params(self) -> np.ndarray:
        raise NotImplementedError

    def activate(self, inputs: dict, params=None):
        """Return (activation in [0,1], output slot map, uncertainty >= 0)."""
        raise NotImplementedError

    def run(self, inputs: dict, params=None) -> dict:
        """Outputs only; activation and uncertainty discarded."""
        return self.activate(inputs, params)[1]

    def check_inputs(self, inputs: dict) -> None:
        for name, t in self.in_sig.slots:
            if name not in inputs:
                raise SignatureError(name, "missing input slot")
            v = ag.value_of(inputs[name])
            want = value_dim(t)
            if v.ndim != 1 or v.shape[0] != want:
                raise SignatureError(
                    name, f"expected a vector of length {want}, got shape {v.shape}"
                )
            nx.ensure_finite(v, f"input slot {name!r}")
        for name in inputs:
            if name not in self.in_sig.names():
                raise SignatureError(name, "not an input slot of this primitive")


@dataclass(frozen=True)
class Primitive(PrimitiveBase):
    id: str
    layer: str
    in_sig: TypeSig
    out_sig: TypeSig
    conditions: tuple[Predicate, ...]
    executor: Executor
    activation: ActivationSpec
    uncertainty: UncertaintySpec
    params: np.ndarray

    def __post_init__(self):
        if self.layer not in LAYERS:
            raise ValueError(f"unknown layer {self.layer!r}")
        if self.executor.in_dim != sig_dim(self.in_sig):
            raise ValueError(
                f"{self.id}: executor consumes {self.executor.in_dim} values, "
                f"input signature carries {sig_dim(self.in_sig)}"
            )
        if self.executor.out_dim != sig_dim(self.out_sig):
            raise ValueError(
                f"{self.id}: executor produces {self.executor.out_dim} values, "
                f"output signature carries {sig_dim(self.out_sig)}"
            )
        in_names = set(self.in_sig.names())
        for cond in self.conditions:
            bad = cond.referenced_slots() - in_names
            if bad:
                raise ConditionError(
                    f"{self.id}: condition references missing slots {sorted(bad)}"
                )
        if self.params.shape != (self.n_params,):
            raise ValueError(
                f"{self.id}: expected {self.n_params} parameters, "
                f"got shape {self.params.shape}"
            )
        object.__setattr__(
            self, "params", np.ascontiguousarray(self.params, dtype=np.float64)
        )

    # parameter layout: executor | activation | uncertainty
    @property
    def n_params(self) -> int:
        return (
            self.executor.n_params
            + self.activation.n_params(len(self.conditions))
            + self.uncertainty.n_params()
        )

    def get_params(self) -> np.ndarray:
        return self.params

    def _slices(self):
        e = self.executor.n_params
        a = self.activation.n_params(len(self.conditions))
        return slice(0, e), slice(e, e + a), slice(e + a, self.n_params)

    def with_params(self, params: np.ndarray) -> "Primitive":
        return replace(self, params=np.asarray(params, dtype=np.float64))

    def activate(self, inputs: dict, params=None):
        self.check_inputs(inputs)
        p = self.params if params is None else params
        es, as_, us = self._slices()

        x = ag.concat([inputs[name] for name in self.in_sig.names()])
        truths = [c.truth(inputs) for c in self.conditions]

        if self.activation.kind == "constant":
            a = float(self.activation.value)
        else:
            w = p[as_]
            z = w[len(truths)]
            for i, t in enumerate(truths):
                z = z + w[i] * t
            a = ag.sigmoid(z)

        y = self.executor.forward(p[es], x)
        y_val = ag.value_of(y)
        if y_val.shape != (sig_dim(self.out_sig),):
            raise SignatureError(
                self.out_sig.names()[0] if len(self.out_sig) else "?",
                f"executor returned shape {y_val.shape}",
            )
        nx.ensure_finite(y_val, f"{self.id} executor output")

        outputs: dict = {}
        off = 0
        for name, t in self.out_sig.slots:
            d = value_dim(t)
            outputs[name] = y[off:off + d]
            off += d

        if self.uncertainty.kind == "constant":
            u = float(self.uncertainty.value)
        else:
            w = p[us]
            feat_x = ag.mean_(ag.square(x))
            feat_y = ag.mean_(ag.square(y))
            u = ag.softplus(w[0] * feat_x + w[1] * feat_y + w[2])
        return a, outputs, u


# ---------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class PrimitiveSpec:
    id: str
    layer: str
    in_sig: TypeSig
    out_sig: TypeSig
    executor: Executor
    conditions: tuple[Predicate, ...] = ()
    activation: ActivationSpec = ActivationSpec()
    uncertainty: UncertaintySpec = UncertaintySpec()
    init_scale: float = 0.1


def make_primitive(spec: PrimitiveSpec, rng: np.random.Generator) -> Primitive:
    """Build a primitive with parameters drawn uniformly from ±init_scale."""
    n = (
        spec.executor.n_params
        + spec.activation.n_params(len(spec.conditions))
        + spec.uncertainty.n_params()
    )
    params = rng.uniform(-spec.init_scale, spec.init_scale, size=n)
    return Primitive(
        id=spec.id,
        layer=spec.layer,
        in_sig=spec.in_sig,
        out_sig=spec.out_sig,
        conditions=spec.conditions,
        executor=spec.executor,
        activation=spec.activation,
        uncertainty=spec.uncertainty,
        params=params,
    )


def identity_primitive(pid: str, s: TypeSig, layer: str = "Phys") -> Primitive:
    """Echoes its inputs; activation pinned to 1, uncertainty to 0."""
    d = sig_dim(s)
    net = AffineNet((d, d), nonlinearity="linear")
    params = np.concatenate([np.eye(d).ravel(), np.zeros(d)])
    return Primitive(
        id=pid, layer=layer, in_sig=s, out_sig=s, conditions=(),
        executor=net, activation=ActivationSpec("constant", 1.0),
        uncertainty=UncertaintySpec("constant", 0.0), params=params,
    )


def linear_primitive(
    pid: str,
    in_sig: TypeSig,
    out_sig: TypeSig,
    weight: np.ndarray,
    bias: Optional[np.ndarray] = None,
    layer: str = "Phys",
    activation_value: float = 1.0,
    uncertainty_value: float = 0.0,
) -> Primitive:
    """y = W x + b with pinned activation and uncertainty; a test workhorse."""
    weight = np.atleast_2d(np.asarray(weight, dtype=np.float64))
    d_out, d_in = weight.shape
    if bias is None:
        bias = np.zeros(d_out)
    net = AffineNet((d_in, d_out), nonlinearity="linear")
    params = np.concatenate([weight.ravel(), np.asarray(bias, dtype=np.float64)])
    return Primitive(
        id=pid, layer=layer, in_sig=in_sig, out_sig=out_sig, conditions=(),
        executor=net, activation=ActivationSpec("constant", activation_value),
        uncertainty=UncertaintySpec("constant", uncertainty_value), params=params,
    )


# ---------------------------------------------------------------------
# entropy and fitting
# ---------------------------------------------------------------------

def estimate_entropy(
    p: PrimitiveBase, samples: Sequence[dict], bins: int = 16
) -> float:
    """Shannon entropy (bits) of executor outputs, histogram-estimated.

    16 bins per output dimension over the sampled range, entropies
    averaged across dimensions; constant outputs give exactly 0.
    """
    if len(samples) < 2:
        raise ValueError("entropy estimation needs at least 2 samples")
    rows = []
    for s in samples:
        outs = p.run(s)
        rows.append(np.concatenate([ag.value_of(outs[n]) for n in p.out_sig.names()]))
    data = np.stack(rows)
    total = 0.0
    for j in range(data.shape[1]):
        col = data[:, j]
        lo, hi = float(col.min()), float(col.max())
        if hi <= lo:
            continue
        hist, _ = np.histogram(col, bins=bins, range=(lo, hi))
        freq = hist[hist > 0] / hist.sum()
        total += float(-(freq * np.log2(freq)).sum())
    return total / data.shape[1]


def fit_primitive(
    p: Primitive,
    dataset: Sequence[tuple[dict, dict]],
    cfg: nx.OptimizerConfig,
) -> tuple[Primitive, list[float]]:
    """Fit the executor parameters to (inputs, targets) pairs by descent
    on mean squared error; activation/uncertainty parameters untouched."""
    if not dataset:
        raise ValueError("empty dataset")
    es, _, _ = p._slices()
    xs = []
    ys = []
    for inputs, targets in dataset:
        p.check_inputs(inputs)
        xs.append(np.concatenate([ag.value_of(inputs[n]) for n in p.in_sig.names()]))
        row = []
        for name, t in p.out_sig.slots:
            if name not in targets:
                raise SignatureError(name, "missing target slot")
            v = ag.value_of(targets[name])
            if v.shape != (value_dim(t),):
                raise SignatureError(name, f"target shape {v.shape} mismatches type")
            row.append(v)
        ys.append(np.concatenate(row))
    x_mat = np.stack(xs)
    y_mat = np.stack(ys)

    def objective(theta):
        loss = 0.0
        for i in range(x_mat.shape[0]):
            pred = p.executor.forward(theta, x_mat[i])
            diff = pred - y_mat[i]
            loss = loss + ag.sum_(ag.square(diff))
        return loss / float(x_mat.shape[0])

    if cfg.max_iters == 0:
        return p, [float(ag.value_of(objective(p.params[es])))]
    result = nx.descend(objective, p.params[es], cfg)
    new_params = p.params.copy()
    new_params[es] = result.x
    return p.with_params(new_params), result.trace


# ---------------------------------------------------------------------
# serialization (versioned JSON)
# ---------------------------------------------------------------------

def primitive_to_dict(p: Primitive) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "kind": "primitive",
        "id": p.id,
        "layer": p.layer,
        "in_sig": format_sig(p.in_sig),
        "out_sig": format_sig(p.out_sig),
        "conditions": [c.to_dict() for c in p.conditions],
        "executor": p.executor.to_dict(),
        "activation": {"kind": p.activation.kind, "value": p.activation.value},
        "uncertainty": {"kind": p.uncertainty.kind, "value": p.uncertainty.value},
        "params": p.params.tolist(),
    }


def primitive_from_dict(d: dict) -> Primitive:
    if d.get("version") != SCHEMA_VERSION or d.get("kind") != "primitive":
        raise ValueError("not a recognized primitive document")
    return Primitive(
        id=d["id"],
        layer=d["layer"],
        in_sig=parse_sig(d["in_sig"]),
        out_sig=parse_sig(d["out_sig"]),
        conditions=tuple(Predicate.from_dict(c) for c in d["conditions"]),
        executor=executor_from_dict(d["executor"]),
        activation=ActivationSpec(**d["activation"]),
        uncertainty=UncertaintySpec(**d["uncertainty"]),
        params=np.asarray(d["params"], dtype=np.float64),
    )


def primitive_to_json(p: Primitive) -> str:
    return json.dumps(primitive_to_dict(p))


def primitive_from_json(text: str) -> Primitive:
    return primitive_from_dict(json.loads(text))


def save_library(prims: Sequence[Primitive], path: str) -> None:
    doc = {
        "version": SCHEMA_VERSION,
        "kind": "library",
        "primitives": [primitive_to_dict(p) for p in prims],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_library(path: str) -> list[Primitive]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("kind") != "library":
        raise ValueError("not a library document")
    return [primitive_from_dict(d) for d in doc["primitives"]]
