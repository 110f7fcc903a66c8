import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalexec import autodiff as ag
from causalexec import numerics as nx
from causalexec.algebra import (
    AbstractionError,
    AbstractionRegistry,
    Certificate,
    CompositionError,
    check_axioms,
    compose_par,
    compose_seq,
    expression_of,
    is_abstraction_of,
    parse_expression,
)
from causalexec.library import library_by_id, seed_library
from causalexec.primitives import identity_primitive, linear_primitive
from causalexec.typesys import PHYS, RULE, Tensor, sig, value_dim

E = sig(("e", PHYS))
V2 = Tensor(PHYS, (2,))


def val(x):
    return ag.value_of(x)


def probe_for(p, rng):
    return {n: rng.normal(size=value_dim(t)) for n, t in p.in_sig.slots}


# ---------------------------------------------------------------------
# sequential composition
# ---------------------------------------------------------------------

def test_identity_then_p_behaves_like_p():
    rng = nx.make_rng(0)
    lib = seed_library(nx.make_rng(7))
    p = lib[0]
    ident = identity_primitive("id2", p.in_sig)
    comp = compose_seq(ident, p)
    for _ in range(32):
        x = probe_for(p, rng)
        a1, o1, u1 = p.activate(x)
        a2, o2, u2 = comp.activate(x)
        for n in p.out_sig.names():
            assert np.allclose(val(o1[n]), val(o2[n]), atol=1e-14)
        assert float(val(a1)) == pytest.approx(float(val(a2)))
        assert float(val(u1)) == pytest.approx(float(val(u2)))


def test_activation_product_and_uncertainty_sum_laws():
    p1 = linear_primitive("p1", E, E, [[1.0]], activation_value=0.5,
                          uncertainty_value=0.3)
    p2 = linear_primitive("p2", E, E, [[1.0]], activation_value=0.4,
                          uncertainty_value=0.2)
    a, _, u = compose_seq(p1, p2).activate({"e": np.array([1.0])})
    assert float(val(a)) == pytest.approx(0.2)
    assert float(val(u)) == pytest.approx(0.5)


def test_three_linear_chain_matches_manual_composition():
    c = compose_seq(
        compose_seq(
            linear_primitive("x2", E, E, [[2.0]]),
            linear_primitive("x3", E, E, [[3.0]]),
        ),
        linear_primitive("xh", E, E, [[0.5]]),
    )
    out = c.run({"e": np.array([1.0])})
    assert np.allclose(val(out["e"]), [3.0])
    # manual function composition oracle
    manual = 0.5 * (3.0 * (2.0 * 1.0))
    assert float(val(out["e"])[0]) == pytest.approx(manual)


def test_incompatible_composition_rejected_with_typed_error():
    p_phys = linear_primitive("a", E, E, [[1.0]])
    p_rule = linear_primitive("b", sig(("x", RULE)), sig(("x", RULE)), [[1.0]],
                              layer="Rule")
    with pytest.raises(CompositionError):
        compose_seq(p_phys, p_rule)


def test_composite_signature_inheritance():
    lib = library_by_id(seed_library(nx.make_rng(7)))
    c = compose_seq(lib["phys.lift"], lib["phys.project"])
    assert c.in_sig == lib["phys.lift"].in_sig
    assert c.out_sig == lib["phys.project"].out_sig


# ---------------------------------------------------------------------
# parallel composition
# ---------------------------------------------------------------------

def test_par_doubles_slots_even_for_same_primitive():
    p = identity_primitive("same", E)
    c = compose_par(p, p)
    assert len(c.in_sig) == 2
    assert len(c.out_sig) == 2
    x = c.pack_inputs([{"e": np.array([1.0])}, {"e": np.array([2.0])}])
    outs = c.unpack_outputs(c.run(x))
    assert np.allclose(val(outs[0]["e"]), [1.0])
    assert np.allclose(val(outs[1]["e"]), [2.0])


def test_par_activation_product():
    p1 = linear_primitive("p1", E, E, [[1.0]], activation_value=0.3)
    p2 = linear_primitive("p2", E, E, [[1.0]], activation_value=0.5)
    c = compose_par(p1, p2)
    a, _, _ = c.activate(
        c.pack_inputs([{"e": np.array([1.0])}, {"e": np.array([1.0])}])
    )
    assert float(val(a)) == pytest.approx(0.15)


def test_par_commutativity_probe_equality():
    rng = nx.make_rng(3)
    lib = seed_library(nx.make_rng(7))
    p1, p2 = lib[0], lib[16]
    c12, c21 = compose_par(p1, p2), compose_par(p2, p1)
    for _ in range(8):
        in1, in2 = probe_for(p1, rng), probe_for(p2, rng)
        a1, o1, u1 = c12.activate(c12.pack_inputs([in1, in2]))
        a2, o2, u2 = c21.activate(c21.pack_inputs([in2, in1]))
        f1, f2 = c12.unpack_outputs(o1)
        g2, g1 = c21.unpack_outputs(o2)
        for n in p1.out_sig.names():
            assert np.array_equal(val(f1[n]), val(g1[n]))
        for n in p2.out_sig.names():
            assert np.array_equal(val(f2[n]), val(g2[n]))
        assert float(val(a1)) == float(val(a2))
        assert float(val(u1)) == float(val(u2))


# ---------------------------------------------------------------------
# axiom harness
# ---------------------------------------------------------------------

def test_axiom_report_on_linear_triples():
    rng = nx.make_rng(5)
    triples = []
    for k in range(6):
        triples.append(
            (
                linear_primitive(f"a{k}", E, E, [[1.0 + 0.1 * k]],
                                 activation_value=0.9, uncertainty_value=0.1),
                linear_primitive(f"b{k}", E, E, [[0.5]], activation_value=0.8,
                                 uncertainty_value=0.2),
                linear_primitive(f"c{k}", E, E, [[-0.7]], activation_value=0.7,
                                 uncertainty_value=0.3),
            )
        )
    probes = {}

    def probe_maker(p, idx):
        key = (p.id, idx)
        if key not in probes:
            probes[key] = probe_for(p, rng)
        return probes[key]

    report = check_axioms(triples, probe_maker, n_probes=4, tol=1e-9)
    assert report.passed
    by_name = {r.axiom: r for r in report.results}
    assert by_name["seq_associativity"].max_output_error <= 1e-12
    assert by_name["par_commutativity"].max_output_error == 0.0
    assert by_name["distributivity"].max_output_error <= 1e-9
    assert not by_name["distributivity"].compares_modulation


def test_axioms_on_seed_library_triples():
    lib = seed_library(nx.make_rng(7))
    rng = nx.make_rng(9)
    # handpicked composable chains from the seed library
    ids = library_by_id(lib)
    triples = [
        (ids["phys.drift"], ids["phys.force"], ids["phys.drift"]),
        (ids["event.echo"], ids["event.script"], ids["event.echo"]),
        (ids["rule.norm_gate"], ids["rule.sanction"], ids["rule.norm_gate"]),
    ]
    cache = {}

    def probe_maker(p, idx):
        key = (p.id, idx)
        if key not in cache:
            cache[key] = probe_for(p, rng)
        return cache[key]

    report = check_axioms(triples, probe_maker, n_probes=8, tol=1e-9)
    assert report.passed


# ---------------------------------------------------------------------
# abstraction order
# ---------------------------------------------------------------------

def test_abstraction_reflexive_in_behavior():
    p = linear_primitive("p", E, E, [[1.3]])
    rng = nx.make_rng(1)
    probes = [probe_for(p, rng) for _ in range(8)]
    ok, cert = is_abstraction_of(p, p, probes, gamma=1e-9)
    assert ok and cert.max_error == 0.0


def test_abstraction_accept_matches_probe_max_oracle():
    rng = nx.make_rng(2)
    low = compose_seq(
        linear_primitive("s1", E, E, [[0.8]]), linear_primitive("s2", E, E, [[1.1]])
    )
    # a fitted stand-in that is close but not exact
    high = linear_primitive("h", E, E, [[0.8 * 1.1 + 0.01]], layer="Func")
    probes = [probe_for(low, rng) for _ in range(16)]
    direct = max(
        float(np.max(np.abs(val(low.run(x)["e"]) - val(high.run(x)["e"]))))
        for x in probes
    )
    ok_tight, cert = is_abstraction_of(low, high, probes, gamma=direct - 1e-12)
    ok_loose, _ = is_abstraction_of(low, high, probes, gamma=direct + 1e-12)
    assert cert.max_error == pytest.approx(direct)
    assert not ok_tight and ok_loose


def test_abstraction_layer_order_enforced():
    low = linear_primitive("lo", E, E, [[1.0]], layer="Rule")
    high = linear_primitive("hi", E, E, [[1.0]], layer="Phys")
    probes = [{"e": np.array([0.5])}]
    ok, _ = is_abstraction_of(low, high, probes, gamma=1.0)
    assert not ok


def test_registry_transitivity_and_cycles():
    reg = AbstractionRegistry()
    cert = Certificate(4, 0.01)
    reg.register("a", "b", cert)
    reg.register("b", "c", cert)
    assert reg.holds("a", "c")
    assert reg.holds("a", "a")
    with pytest.raises(AbstractionError):
        reg.register("c", "a", cert)
    with pytest.raises(AbstractionError):
        reg.register("a", "a", cert)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=12))
def test_registry_never_becomes_cyclic(pairs):
    reg = AbstractionRegistry()
    for lo, hi in pairs:
        try:
            reg.register(f"p{lo}", f"p{hi}", Certificate(1, 0.0))
        except AbstractionError:
            pass
    for a, b in reg.pairs():
        assert not (reg.holds(b, a) and reg.holds(a, b))


# ---------------------------------------------------------------------
# expression grammar
# ---------------------------------------------------------------------

def test_expression_roundtrip():
    lib = library_by_id(seed_library(nx.make_rng(7)))
    text = "seq(seq(phys.drift,phys.force),phys.drift)"
    tree = parse_expression(text, lib)
    assert expression_of(tree) == text
    nested = "par(seq(phys.drift,phys.lift),event.echo)"
    assert expression_of(parse_expression(nested, lib)) == nested


def test_expression_errors():
    lib = library_by_id(seed_library(nx.make_rng(7)))
    with pytest.raises(ValueError, match="unknown primitive"):
        parse_expression("seq(nope,phys.drift)", lib)
    with pytest.raises(ValueError):
        parse_expression("seq(phys.drift phys.force)", lib)
