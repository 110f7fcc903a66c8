import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalexec import autodiff as ag
from causalexec import numerics as nx
from causalexec.library import library_by_id, seed_library, seed_specs
from causalexec.primitives import (
    ActivationSpec,
    AffineNet,
    ConditionError,
    Fsm,
    Predicate,
    Primitive,
    PrimitiveSpec,
    SeqPattern,
    SignatureError,
    SoftRule,
    UncertaintySpec,
    estimate_entropy,
    fit_primitive,
    identity_primitive,
    linear_primitive,
    make_primitive,
    primitive_from_json,
    primitive_to_json,
)
from causalexec.typesys import EVENT, PHYS, RULE, STATE, Tensor, sig

V2 = Tensor(PHYS, (2,))
E = sig(("e", PHYS))


def val(x):
    return ag.value_of(x)


# ---------------------------------------------------------------------
# activate
# ---------------------------------------------------------------------

def test_identity_primitive_echoes_inputs():
    p = identity_primitive("id", sig(("q", V2)))
    a, out, u = p.activate({"q": np.array([0.4, -1.2])})
    assert float(val(a)) == 1.0
    assert np.allclose(val(out["q"]), [0.4, -1.2])
    assert float(val(u)) == 0.0


def test_soft_rule_and_of_ones_is_one():
    rng = nx.make_rng(0)
    spec = PrimitiveSpec(
        "r", "Rule", sig(("x", RULE), ("y", RULE)), sig(("z", RULE)),
        SoftRule(2, "and"),
    )
    p = make_primitive(spec, rng)
    _, out, _ = p.activate({"x": np.array([1.0]), "y": np.array([1.0])})
    assert float(val(out["z"])[0]) == pytest.approx(1.0)


def test_linear_executor_and_parameter_gradient():
    p = linear_primitive("double", E, E, [[2.0]])
    _, out, _ = p.activate({"e": np.array([0.5])})
    assert np.allclose(val(out["e"]), [1.0])

    def f(theta):
        _, o, _ = p.activate({"e": np.array([0.5])}, params=theta)
        return ag.sum_(o["e"])

    err = nx.relative_gradient_error(
        nx.grad(f, p.params), nx.finite_difference_gradient(f, p.params)
    )
    assert err < 1e-4


def test_missing_slot_raises_typed_error():
    p = identity_primitive("id", sig(("q", V2)))
    with pytest.raises(SignatureError, match="'q'"):
        p.activate({})
    with pytest.raises(SignatureError):
        p.activate({"q": np.array([0.4, -1.2]), "extra": np.zeros(1)})
    with pytest.raises(SignatureError):
        p.activate({"q": np.zeros(3)})


def test_condition_on_missing_slot_rejected_at_construction():
    with pytest.raises(ConditionError):
        Primitive(
            id="bad", layer="Phys", in_sig=sig(("q", V2)), out_sig=sig(("q", V2)),
            conditions=(Predicate("ge", "nope", 0.0),),
            executor=AffineNet((2, 2), nonlinearity="linear"),
            activation=ActivationSpec("constant", 1.0),
            uncertainty=UncertaintySpec("constant", 0.0),
            params=np.zeros(6),
        )


def test_executor_signature_dimension_mismatch_rejected():
    with pytest.raises(ValueError, match="executor"):
        make_primitive(
            PrimitiveSpec("bad", "Phys", sig(("q", V2)), sig(("q", V2)),
                          AffineNet((2, 3))),
            nx.make_rng(0),
        )


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 31))
def test_runtime_conformance_and_ranges_fuzzed(seed, idx):
    rng = nx.make_rng(seed)
    lib = seed_library(nx.make_rng(7))
    p = lib[idx]
    inputs = {
        name: rng.normal(scale=1.5, size=val_dim)
        for name, val_dim in zip(
            p.in_sig.names(),
            [len(np.zeros(_dim)) for _dim in map_dims(p)],
        )
    }
    a, out, u = p.activate(inputs)
    assert 0.0 <= float(val(a)) <= 1.0
    assert float(val(u)) >= 0.0
    for name, t in p.out_sig.slots:
        v = val(out[name])
        assert v.shape == (dim_of(t),)
        assert np.all(np.isfinite(v))


def map_dims(p):
    from causalexec.typesys import value_dim

    return [value_dim(t) for _, t in p.in_sig.slots]


def dim_of(t):
    from causalexec.typesys import value_dim

    return value_dim(t)


# ---------------------------------------------------------------------
# seed library / construction
# ---------------------------------------------------------------------

def test_seed_library_has_32_across_four_layers():
    lib = seed_library(nx.make_rng(1))
    assert len(lib) == 32
    by_layer = {}
    for p in lib:
        by_layer.setdefault(p.layer, []).append(p)
    assert set(by_layer) == {"Phys", "Func", "Event", "Rule"}
    assert all(len(v) == 8 for v in by_layer.values())
    assert len(library_by_id(lib)) == 32


def test_zero_parameter_constant_primitive():
    p = linear_primitive("const", E, E, [[0.0]], bias=np.array([0.7]))
    for x in [0.0, 1.0, -3.0]:
        _, out, _ = p.activate({"e": np.array([x])})
        assert np.allclose(val(out["e"]), [0.7])


def test_serialization_roundtrip_probe_equality():
    rng = nx.make_rng(5)
    lib = seed_library(rng)
    probe_rng = nx.make_rng(17)
    for p in lib[:6] + lib[12:14] + lib[24:26]:
        q = primitive_from_json(primitive_to_json(p))
        assert q.id == p.id and q.layer == p.layer
        assert q.in_sig == p.in_sig and q.out_sig == p.out_sig
        assert np.array_equal(q.params, p.params)
        for _ in range(16):
            inputs = {
                name: probe_rng.normal(size=dim_of(t))
                for name, t in p.in_sig.slots
            }
            a1, o1, u1 = p.activate(inputs)
            a2, o2, u2 = q.activate(inputs)
            assert float(val(a1)) == float(val(a2))
            assert float(val(u1)) == float(val(u2))
            for n in p.out_sig.names():
                assert np.array_equal(val(o1[n]), val(o2[n]))


def test_json_document_is_versioned():
    p = identity_primitive("id", E)
    doc = json.loads(primitive_to_json(p))
    assert doc["version"] == 1 and doc["kind"] == "primitive"


# ---------------------------------------------------------------------
# entropy
# ---------------------------------------------------------------------

def test_entropy_constant_executor_is_zero():
    p = linear_primitive("const", E, E, [[0.0]], bias=np.array([1.0]))
    samples = [{"e": np.array([float(i)])} for i in range(50)]
    assert estimate_entropy(p, samples) == 0.0


def test_entropy_uniform_four_bins_is_two_bits():
    p = identity_primitive("id", E)
    samples = [{"e": np.array([float(i % 4)])} for i in range(64)]
    assert estimate_entropy(p, samples) == pytest.approx(2.0)


def test_entropy_matches_direct_histogram_oracle():
    rng = nx.make_rng(23)
    p = identity_primitive("id", E)
    draws = rng.normal(size=10_000)
    samples = [{"e": np.array([x])} for x in draws]
    got = estimate_entropy(p, samples)
    # independent histogram-entropy computation
    hist, _ = np.histogram(draws, bins=16, range=(draws.min(), draws.max()))
    freq = hist[hist > 0] / hist.sum()
    want = float(-(freq * np.log2(freq)).sum())
    assert got == pytest.approx(want, abs=1e-12)


def test_entropy_needs_two_samples():
    p = identity_primitive("id", E)
    with pytest.raises(ValueError):
        estimate_entropy(p, [{"e": np.zeros(1)}])


# ---------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------

def test_fit_recovers_slope_three():
    rng = nx.make_rng(2)
    p = linear_primitive("fit", E, E, [[0.0]])
    xs = rng.uniform(-1, 1, size=100)
    data = [({"e": np.array([x])}, {"e": np.array([3.0 * x])}) for x in xs]
    cfg = nx.OptimizerConfig(max_iters=300, tol=1e-16)
    fitted, trace = fit_primitive(p, data, cfg)
    # closed-form least squares says exactly 3 for noiseless data
    assert abs(fitted.params[0] - 3.0) < 1e-6
    assert trace[-1] <= trace[0]


def test_fit_constant_target_gives_mean_bias():
    rng = nx.make_rng(3)
    p = linear_primitive("fit", E, E, [[0.0]])
    ys = rng.normal(loc=2.0, size=64)
    data = [({"e": np.array([0.0])}, {"e": np.array([y])}) for y in ys]
    fitted, _ = fit_primitive(p, data, nx.OptimizerConfig(max_iters=400, tol=1e-16))
    assert fitted.params[1] == pytest.approx(float(ys.mean()), abs=1e-6)


def test_fit_zero_budget_is_identity():
    p = linear_primitive("fit", E, E, [[1.5]])
    data = [({"e": np.array([1.0])}, {"e": np.array([0.0])})]
    fitted, trace = fit_primitive(p, data, nx.OptimizerConfig(max_iters=0))
    assert np.array_equal(fitted.params, p.params)
    assert len(trace) == 1


def test_fit_trace_nonincreasing_for_linear_executor():
    rng = nx.make_rng(4)
    p = make_primitive(
        PrimitiveSpec("net", "Phys", sig(("q", V2)), sig(("q", V2)),
                      AffineNet((2, 2), nonlinearity="linear")),
        rng,
    )
    data = []
    w = np.array([[1.0, -0.5], [0.3, 0.8]])
    for _ in range(40):
        x = rng.normal(size=2)
        data.append(({"q": x}, {"q": w @ x}))
    _, trace = fit_primitive(p, data, nx.OptimizerConfig(max_iters=150, tol=1e-16))
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))


# ---------------------------------------------------------------------
# differentiability of every executor family
# ---------------------------------------------------------------------

@pytest.mark.parametrize(
    "spec",
    [
        PrimitiveSpec("a", "Phys", sig(("q", V2)), sig(("q", V2)),
                      AffineNet((2, 5, 2))),
        PrimitiveSpec("f", "Func", sig(("s", Tensor(STATE, (4,))), ("d", V2)),
                      sig(("s", Tensor(STATE, (4,)))), Fsm(4, 2, True)),
        PrimitiveSpec("e", "Event", sig(("e", Tensor(EVENT, (3,)))),
                      sig(("e", Tensor(EVENT, (3,)))), SeqPattern(3, 3, 3)),
        PrimitiveSpec("r", "Rule", sig(("x", RULE), ("y", RULE)),
                      sig(("z", RULE)), SoftRule(2, "implies")),
    ],
    ids=["affine", "fsm", "seq", "rule"],
)
def test_every_family_gradient_matches_fd(spec):
    rng = nx.make_rng(11)
    p = make_primitive(spec, rng)
    inputs = {
        name: rng.uniform(0.1, 0.9, size=dim_of(t)) for name, t in p.in_sig.slots
    }

    def f(theta):
        a, out, u = p.activate(inputs, params=theta)
        total = a + u
        for n in p.out_sig.names():
            total = total + ag.sum_(out[n])
        return total

    err = nx.relative_gradient_error(
        nx.grad(f, p.params), nx.finite_difference_gradient(f, p.params)
    )
    assert err < 1e-4
