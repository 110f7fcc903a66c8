"""Composition algebra over primitives: sequential and parallel operators,
the abstraction partial order, and a behavioral axiom-checking harness.

Sequential composition chains executors through a slot binding and
multiplies activations / adds uncertainties.  Parallel composition takes
disjoint unions of slot spaces (names qualified by child id), runs the
children independently, and uses the same product/sum laws.  Axioms are
checked extensionally on probe inputs: structurally different trees are
compared leaf-by-leaf.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ag
from .primitives import LAYER_INDEX, LAYERS, PrimitiveBase
from .typesys import TypeSig, signatures_compatible, value_dim


class CompositionError(TypeError):
    """Sequential composition rejected: no total slot binding exists."""


class AbstractionError(ValueError):
    """Registering this pair would break the strict partial order."""


def _split_params(left: PrimitiveBase, params):
    if params is None:
        return None, None
    n1 = left.n_params
    return params[:n1], params[n1:]


class Seq(PrimitiveBase):
    """p1 then p2 through the lexicographically-first slot binding."""

    def __init__(self, p1: PrimitiveBase, p2: PrimitiveBase):
        binding = signatures_compatible(p1.out_sig, p2.in_sig)
        if binding is None:
            raise CompositionError(
                f"cannot feed {p1.id!r} (outputs {p1.out_sig}) "
                f"into {p2.id!r} (inputs {p2.in_sig})"
            )
        self.p1 = p1
        self.p2 = p2
        self.binding = binding
        self.id = f"seq({p1.id},{p2.id})"
        self.layer = LAYERS[max(LAYER_INDEX[p1.layer], LAYER_INDEX[p2.layer])]
        self.in_sig = p1.in_sig
        self.out_sig = p2.out_sig

    @property
    def n_params(self) -> int:
        return self.p1.n_params + self.p2.n_params

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.p1.get_params(), self.p2.get_params()])

    def activate(self, inputs: dict, params=None):
        q1, q2 = _split_params(self.p1, params)
        a1, out1, u1 = self.p1.activate(inputs, q1)
        mid = {name: out1[self.binding[name]] for name in self.p2.in_sig.names()}
        a2, out2, u2 = self.p2.activate(mid, q2)
        return a1 * a2, out2, u1 + u2


class Par(PrimitiveBase):
    """p1 alongside p2 on disjoint slot spaces.

    Slot names are qualified as ``<child id>:<slot>`` (with ``#0``/``#1``
    inserted when the children share an id), so the two operand orders
    expose the same slot names and parallel composition is commutative
    up to slot reordering.
    """

    def __init__(self, p1: PrimitiveBase, p2: PrimitiveBase):
        self.p1 = p1
        self.p2 = p2
        if p1.id == p2.id:
            self.prefixes = (f"{p1.id}#0:", f"{p2.id}#1:")
        else:
            self.prefixes = (f"{p1.id}:", f"{p2.id}:")
        self.id = f"par({p1.id},{p2.id})"
        self.layer = LAYERS[max(LAYER_INDEX[p1.layer], LAYER_INDEX[p2.layer])]
        self.in_sig = TypeSig(
            tuple((self.prefixes[0] + n, t) for n, t in p1.in_sig.slots)
            + tuple((self.prefixes[1] + n, t) for n, t in p2.in_sig.slots)
        )
        self.out_sig = TypeSig(
            tuple((self.prefixes[0] + n, t) for n, t in p1.out_sig.slots)
            + tuple((self.prefixes[1] + n, t) for n, t in p2.out_sig.slots)
        )

    @property
    def n_params(self) -> int:
        return self.p1.n_params + self.p2.n_params

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.p1.get_params(), self.p2.get_params()])

    def pack_inputs(self, child_inputs: Sequence[dict]) -> dict:
        packed = {}
        for prefix, child, ins in zip(
            self.prefixes, (self.p1, self.p2), child_inputs
        ):
            for name in child.in_sig.names():
                packed[prefix + name] = ins[name]
        return packed

    def unpack_outputs(self, outputs: dict) -> list[dict]:
        return [
            {n: outputs[prefix + n] for n in child.out_sig.names()}
            for prefix, child in zip(self.prefixes, (self.p1, self.p2))
        ]

    def activate(self, inputs: dict, params=None):
        q1, q2 = _split_params(self.p1, params)
        in1 = {n: inputs[self.prefixes[0] + n] for n in self.p1.in_sig.names()}
        in2 = {n: inputs[self.prefixes[1] + n] for n in self.p2.in_sig.names()}
        a1, out1, u1 = self.p1.activate(in1, q1)
        a2, out2, u2 = self.p2.activate(in2, q2)
        outputs = {self.prefixes[0] + n: v for n, v in out1.items()}
        outputs.update({self.prefixes[1] + n: v for n, v in out2.items()})
        return a1 * a2, outputs, u1 + u2


def compose_seq(p1: PrimitiveBase, p2: PrimitiveBase) -> Seq:
    return Seq(p1, p2)


def compose_par(p1: PrimitiveBase, p2: PrimitiveBase) -> Par:
    return Par(p1, p2)


# ---------------------------------------------------------------------
# abstraction partial order
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class Certificate:
    probe_count: int
    max_error: float


def _order_adapter(low_sig: TypeSig, high_sig: TypeSig) -> Optional[dict[str, str]]:
    """Map high slots to low slots when the signatures are the same
    multiset of types (possibly reordered); None otherwise."""
    if len(low_sig) != len(high_sig):
        return None
    used: set[str] = set()
    mapping: dict[str, str] = {}
    for h_name, h_type in high_sig.slots:
        for l_name, l_type in low_sig.slots:
            if l_name not in used and l_type == h_type:
                used.add(l_name)
                mapping[h_name] = l_name
                break
        else:
            return None
    return mapping


def is_abstraction_of(
    low: PrimitiveBase,
    high: PrimitiveBase,
    probes: Sequence[dict],
    gamma: float,
) -> tuple[bool, Certificate]:
    """Does ``high`` reproduce ``low`` within gamma on the probes, one or
    more layers up?  Probes are input maps in ``low``'s slot names."""
    if not probes:
        raise ValueError("abstraction check needs at least one probe")
    if LAYER_INDEX[low.layer] > LAYER_INDEX[high.layer]:
        return False, Certificate(len(probes), float("inf"))
    in_map = _order_adapter(low.in_sig, high.in_sig)
    out_map = _order_adapter(low.out_sig, high.out_sig)
    if in_map is None or out_map is None:
        return False, Certificate(len(probes), float("inf"))
    worst = 0.0
    for probe in probes:
        low_out = low.run(probe)
        high_out = high.run({hn: probe[ln] for hn, ln in in_map.items()})
        for h_name, l_name in out_map.items():
            d = ag.value_of(high_out[h_name]) - ag.value_of(low_out[l_name])
            worst = max(worst, float(np.max(np.abs(d))) if d.size else 0.0)
    return worst <= gamma, Certificate(len(probes), worst)


class AbstractionRegistry:
    """Strict partial order over primitive ids with validation
    certificates; the transitive closure is maintained on registration
    and registrations that would close a cycle are rejected."""

    def __init__(self):
        self._certs: dict[tuple[str, str], Certificate] = {}
        self._closure: set[tuple[str, str]] = set()

    def register(self, low_id: str, high_id: str, cert: Certificate) -> None:
        if low_id == high_id:
            raise AbstractionError("a primitive cannot strictly abstract itself")
        if (high_id, low_id) in self._closure:
            raise AbstractionError(
                f"registering {low_id} <= {high_id} would create a cycle"
            )
        self._certs[(low_id, high_id)] = cert
        self._closure.add((low_id, high_id))
        # splice the new edge into the closure
        changed = True
        while changed:
            changed = False
            for (a, b) in list(self._closure):
                for (c, d) in list(self._closure):
                    if b == c and (a, d) not in self._closure:
                        if a == d:
                            raise AbstractionError(
                                f"closure of {low_id} <= {high_id} creates a cycle"
                            )
                        self._closure.add((a, d))
                        changed = True

    def holds(self, low_id: str, high_id: str) -> bool:
        return low_id == high_id or (low_id, high_id) in self._closure

    def certificate(self, low_id: str, high_id: str) -> Optional[Certificate]:
        return self._certs.get((low_id, high_id))

    def pairs(self) -> list[tuple[str, str]]:
        return sorted(self._certs)


# ---------------------------------------------------------------------
# axiom harness
# ---------------------------------------------------------------------

@dataclass
class AxiomResult:
    axiom: str
    max_output_error: float
    max_activation_error: float
    max_uncertainty_error: float
    compares_modulation: bool
    passed: bool


@dataclass
class AxiomReport:
    tol: float
    results: list[AxiomResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


def _max_abs(outputs_a: dict, outputs_b: dict, names_a, names_b) -> float:
    worst = 0.0
    for na, nb in zip(names_a, names_b):
        d = ag.value_of(outputs_a[na]) - ag.value_of(outputs_b[nb])
        worst = max(worst, float(np.max(np.abs(d))) if d.size else 0.0)
    return worst


def check_axioms(
    triples: Sequence[tuple[PrimitiveBase, PrimitiveBase, PrimitiveBase]],
    probe_maker,
    n_probes: int,
    tol: float,
) -> AxiomReport:
    """Behavioral check of the four algebra axioms over primitive triples.

    ``probe_maker(p, rng_index)`` must return an input map for primitive
    ``p``.  Sequential/parallel associativity and parallel commutativity
    compare outputs, activation, and uncertainty.  Distributivity
    duplicates the left factor across the parallel branches, which
    multiplies its activation in twice and adds its uncertainty twice,
    so only outputs are compared there (the composition laws make the
    modulation sides provably unequal).
    """
    errs = {
        "seq_associativity": [0.0, 0.0, 0.0],
        "par_associativity": [0.0, 0.0, 0.0],
        "par_commutativity": [0.0, 0.0, 0.0],
        "distributivity": [0.0, 0.0, 0.0],
    }

    def _upd(key, out_err, a_err, u_err):
        e = errs[key]
        e[0] = max(e[0], out_err)
        e[1] = max(e[1], a_err)
        e[2] = max(e[2], u_err)

    def _scalar(x) -> float:
        return float(ag.value_of(x))

    for (p1, p2, p3) in triples:
        for probe_idx in range(n_probes):
            # (p1*p2)*p3 == p1*(p2*p3): identical signatures, compare directly
            try:
                left = compose_seq(compose_seq(p1, p2), p3)
                right = compose_seq(p1, compose_seq(p2, p3))
            except CompositionError:
                left = right = None
            if left is not None:
                x = probe_maker(left, probe_idx)
                a_l, o_l, u_l = left.activate(x)
                a_r, o_r, u_r = right.activate(x)
                _upd(
                    "seq_associativity",
                    _max_abs(o_l, o_r, left.out_sig.names(), right.out_sig.names()),
                    abs(_scalar(a_l) - _scalar(a_r)),
                    abs(_scalar(u_l) - _scalar(u_r)),
                )

            # (p1+p2)+p3 == p1+(p2+p3): compare leaf by leaf
            in1 = probe_maker(p1, probe_idx)
            in2 = probe_maker(p2, probe_idx)
            in3 = probe_maker(p3, probe_idx)
            pl_inner = compose_par(p1, p2)
            pl = compose_par(pl_inner, p3)
            pr_inner = compose_par(p2, p3)
            pr = compose_par(p1, pr_inner)
            xl = pl.pack_inputs([pl_inner.pack_inputs([in1, in2]), in3])
            xr = pr.pack_inputs([in1, pr_inner.pack_inputs([in2, in3])])
            a_l, o_l, u_l = pl.activate(xl)
            a_r, o_r, u_r = pr.activate(xr)
            l_inner, l_p3 = pl.unpack_outputs(o_l)
            l_p1, l_p2 = pl_inner.unpack_outputs(l_inner)
            r_p1, r_inner = pr.unpack_outputs(o_r)
            r_p2, r_p3 = pr_inner.unpack_outputs(r_inner)
            out_err = max(
                _max_abs(l_p1, r_p1, p1.out_sig.names(), p1.out_sig.names()),
                _max_abs(l_p2, r_p2, p2.out_sig.names(), p2.out_sig.names()),
                _max_abs(l_p3, r_p3, p3.out_sig.names(), p3.out_sig.names()),
            )
            _upd(
                "par_associativity",
                out_err,
                abs(_scalar(a_l) - _scalar(a_r)),
                abs(_scalar(u_l) - _scalar(u_r)),
            )

            # p1+p2 == p2+p1
            c12 = compose_par(p1, p2)
            c21 = compose_par(p2, p1)
            a_l, o_l, u_l = c12.activate(c12.pack_inputs([in1, in2]))
            a_r, o_r, u_r = c21.activate(c21.pack_inputs([in2, in1]))
            f_p1, f_p2 = c12.unpack_outputs(o_l)
            g_p2, g_p1 = c21.unpack_outputs(o_r)
            out_err = max(
                _max_abs(f_p1, g_p1, p1.out_sig.names(), p1.out_sig.names()),
                _max_abs(f_p2, g_p2, p2.out_sig.names(), p2.out_sig.names()),
            )
            _upd(
                "par_commutativity",
                out_err,
                abs(_scalar(a_l) - _scalar(a_r)),
                abs(_scalar(u_l) - _scalar(u_r)),
            )

            # p1*(p2+p3) == (p1*p2)+(p1*p3), outputs only
            try:
                branches = compose_par(p2, p3)
                lhs = compose_seq(p1, branches)
                rhs = compose_par(compose_seq(p1, p2), compose_seq(p1, p3))
            except CompositionError:
                continue
            x1 = probe_maker(p1, probe_idx)
            _, o_l, _ = lhs.activate(x1)
            l_p2, l_p3 = branches.unpack_outputs(o_l)
            _, o_r, _ = rhs.activate(rhs.pack_inputs([x1, x1]))
            r_s12, r_s13 = rhs.unpack_outputs(o_r)
            out_err = max(
                _max_abs(l_p2, r_s12, p2.out_sig.names(), p2.out_sig.names()),
                _max_abs(l_p3, r_s13, p3.out_sig.names(), p3.out_sig.names()),
            )
            _upd("distributivity", out_err, 0.0, 0.0)

    results = []
    for name, (oe, ae, ue) in errs.items():
        modulated = name != "distributivity"
        passed = oe <= tol and (not modulated or (ae <= tol and ue <= tol))
        results.append(AxiomResult(name, oe, ae, ue, modulated, passed))
    return AxiomReport(tol=tol, results=results)


# ---------------------------------------------------------------------
# composition expression grammar: seq(a,b) / par(a,b), nested
# ---------------------------------------------------------------------

def expression_of(p: PrimitiveBase) -> str:
    if isinstance(p, Seq):
        return f"seq({expression_of(p.p1)},{expression_of(p.p2)})"
    if isinstance(p, Par):
        return f"par({expression_of(p.p1)},{expression_of(p.p2)})"
    return p.id


def parse_expression(text: str, library: dict[str, PrimitiveBase]) -> PrimitiveBase:
    text = text.strip()
    pos = 0

    def error(msg):
        raise ValueError(f"{msg} at position {pos} in {text!r}")

    def ident():
        nonlocal pos
        start = pos
        while pos < len(text) and (text[pos].isalnum() or text[pos] in "_.-#:"):
            pos += 1
        if start == pos:
            error("expected identifier")
        return text[start:pos]

    def expr():
        nonlocal pos
        if text.startswith("seq(", pos) or text.startswith("par(", pos):
            op = text[pos:pos + 3]
            pos += 4
            left = expr()
            if pos >= len(text) or text[pos] != ",":
                error("expected ','")
            pos += 1
            right = expr()
            if pos >= len(text) or text[pos] != ")":
                error("expected ')'")
            pos += 1
            return compose_seq(left, right) if op == "seq" else compose_par(left, right)
        name = ident()
        if name not in library:
            error(f"unknown primitive {name!r}")
        return library[name]

    out = expr()
    if pos != len(text):
        error("trailing text")
    return out
