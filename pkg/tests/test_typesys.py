import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalexec import typesys as ts
from causalexec.typesys import (
    EVENT,
    PHYS,
    RULE,
    STATE,
    Base,
    Func,
    Product,
    Sum,
    Tensor,
    TypeSig,
    format_type,
    is_subtype,
    parse_sig,
    parse_type,
    sig,
    signatures_compatible,
    type_similarity,
)

# ---------------------------------------------------------------------
# a brute-force rule interpreter, independent of the production code
# ---------------------------------------------------------------------

def oracle_subtype(a, b):
    if type(a) is not type(b):
        return False
    if isinstance(a, Base):
        return a.kind == b.kind
    if isinstance(a, Tensor):
        return a.dims == b.dims and oracle_subtype(a.elem, b.elem)
    if isinstance(a, Func):
        return oracle_subtype(b.src, a.src) and oracle_subtype(a.dst, b.dst)
    if isinstance(a, Product):
        return len(a.parts) == len(b.parts) and all(
            oracle_subtype(x, y) for x, y in zip(a.parts, b.parts)
        )
    if isinstance(a, Sum):
        return len(a.alts) == len(b.alts) and all(
            oracle_subtype(x, y) for x, y in zip(a.alts, b.alts)
        )
    raise AssertionError


def all_types_depth2(bases=(PHYS, STATE)):
    depth1 = list(bases)
    depth2 = list(depth1)
    for t in depth1:
        depth2.append(Tensor(t, (2,)))
        depth2.append(Tensor(t, (3,)))
    for a, b in itertools.product(depth1, repeat=2):
        depth2.append(Func(a, b))
        depth2.append(Product((a, b)))
        depth2.append(Sum((a, b)))
    return depth2


def test_exhaustive_depth2_matches_oracle():
    universe = all_types_depth2()
    for a, b in itertools.product(universe, repeat=2):
        assert is_subtype(a, b) == oracle_subtype(a, b), (a, b)


def test_reflexive():
    for t in all_types_depth2((PHYS, STATE, EVENT, RULE)):
        assert is_subtype(t, t)


def test_tensor_dim_mismatch():
    assert not is_subtype(Tensor(PHYS, (3,)), Tensor(PHYS, (4,)))


def test_base_kinds_incomparable():
    for a, b in itertools.permutations([PHYS, STATE, EVENT, RULE], 2):
        assert not is_subtype(a, b)


_type_strategy = st.recursive(
    st.sampled_from([PHYS, STATE, EVENT, RULE]),
    lambda children: st.one_of(
        st.builds(Tensor, children, st.tuples(st.integers(1, 4))),
        st.builds(Func, children, children),
        st.builds(lambda a, b: Product((a, b)), children, children),
        st.builds(lambda a, b: Sum((a, b)), children, children),
    ),
    max_leaves=6,
)


@settings(max_examples=200, deadline=None)
@given(_type_strategy, _type_strategy, _type_strategy)
def test_partial_order_properties(a, b, c):
    assert is_subtype(a, a)
    if is_subtype(a, b) and is_subtype(b, a):
        assert a == b  # antisymmetry up to structural equality
    if is_subtype(a, b) and is_subtype(b, c):
        assert is_subtype(a, c)


@settings(max_examples=200, deadline=None)
@given(_type_strategy, _type_strategy)
def test_similarity_bounds_and_symmetry(a, b):
    s = type_similarity(a, b)
    assert 0.0 <= s <= 1.0
    assert s == pytest.approx(type_similarity(b, a))
    if a == b:
        assert s == 1.0


def test_similarity_examples():
    assert type_similarity(PHYS, PHYS) == 1.0
    assert type_similarity(PHYS, RULE) == 0.0
    got = type_similarity(Product((PHYS, STATE)), Product((PHYS, EVENT)))
    assert got == pytest.approx((1.0 + 0.0) / 2.0)


def test_similarity_one_only_when_equal():
    assert type_similarity(Tensor(PHYS, (3,)), Tensor(PHYS, (4,))) < 1.0


# ---------------------------------------------------------------------
# signature compatibility vs exhaustive search
# ---------------------------------------------------------------------

def oracle_accepts(out_sig, in_sig):
    """Exhaustive: try every total assignment of inputs to outputs."""
    if not in_sig.slots:
        return True
    out_slots = list(out_sig.slots)
    if not out_slots:
        return False
    choices = [range(len(out_slots))] * len(in_sig.slots)
    for combo in itertools.product(*choices):
        ok = True
        for (in_name, in_type), oi in zip(in_sig.slots, combo):
            if not oracle_subtype(in_type, out_slots[oi][1]):
                ok = False
                break
        if ok:
            return True
    return False


def test_signature_binding_examples():
    out = sig(("a", PHYS))
    assert signatures_compatible(out, sig(("x", PHYS))) == {"x": "a"}
    assert signatures_compatible(out, sig(("x", RULE))) is None


def test_signature_binding_lexicographic_choice():
    out = sig(("a", PHYS), ("b", PHYS))
    binding = signatures_compatible(out, sig(("x", PHYS), ("y", PHYS)))
    assert binding == {"x": "a", "y": "a"}


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_random_signatures_match_exhaustive_matcher(data):
    pool = all_types_depth2((PHYS, STATE, EVENT))
    n_out = data.draw(st.integers(0, 4))
    n_in = data.draw(st.integers(0, 4))
    out_types = [data.draw(st.sampled_from(pool)) for _ in range(n_out)]
    in_types = [data.draw(st.sampled_from(pool)) for _ in range(n_in)]
    out_sig = TypeSig(tuple((f"o{i}", t) for i, t in enumerate(out_types)))
    in_sig = TypeSig(tuple((f"i{i}", t) for i, t in enumerate(in_types)))
    binding = signatures_compatible(out_sig, in_sig)
    assert (binding is not None) == oracle_accepts(out_sig, in_sig)
    if binding is not None:
        assert set(binding) == set(in_sig.names())  # total, never partial
        for in_name, out_name in binding.items():
            assert is_subtype(in_sig.type_of(in_name), out_sig.type_of(out_name))


# ---------------------------------------------------------------------
# canonical text form
# ---------------------------------------------------------------------

@pytest.mark.parametrize(
    "text",
    [
        "Phys",
        "Tensor[Phys;3,3]",
        "Func[State->Event]",
        "Product[Phys,State,Rule]",
        "Sum[Event,Rule]",
        "Func[Func[Phys->State]->Tensor[Rule;2]]",
        "Tensor[Product[Phys,State];4]",
    ],
)
def test_type_text_roundtrip(text):
    assert format_type(parse_type(text)) == text


@settings(max_examples=200, deadline=None)
@given(_type_strategy)
def test_type_roundtrip_random(t):
    assert parse_type(format_type(t)) == t


def test_sig_text_roundtrip():
    s = sig(("a", Tensor(PHYS, (2,))), ("b", Func(STATE, EVENT)))
    assert parse_sig(ts.format_sig(s)) == s


def test_parse_rejects_garbage():
    for bad in ["", "Bogus", "Tensor[Phys]", "Tensor[Phys;0]", "Phys,", "Func[Phys]"]:
        with pytest.raises(ts.TypeError_):
            parse_type(bad)


def test_duplicate_slot_names_rejected():
    with pytest.raises(ts.TypeError_):
        sig(("a", PHYS), ("a", STATE))


def test_value_dims():
    assert ts.value_dim(PHYS) == 1
    assert ts.value_dim(Tensor(PHYS, (3, 2))) == 6
    assert ts.value_dim(Product((PHYS, Tensor(STATE, (4,))))) == 5
    assert not ts.is_value_type(Func(PHYS, PHYS))
