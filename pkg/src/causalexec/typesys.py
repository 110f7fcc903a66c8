"""Causal type system: base kinds, constructors, subtyping, signature matching.

Base kinds are mutually incomparable (tau <= tau only); all structural
richness comes from the Tensor/Func/Product/Sum constructors, so the
subtype relation is a partial order by construction.  Types print to and
parse from a canonical text form, round-tripping exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

BASE_KINDS = ("Phys", "State", "Event", "Rule")


class TypeError_(ValueError):
    """Malformed type, signature, or type text."""


class CausalType:
    """Marker base class; concrete types are the frozen dataclasses below."""

    __slots__ = ()

    def __str__(self) -> str:
        return format_type(self)


@dataclass(frozen=True)
class Base(CausalType):
    kind: str

    def __post_init__(self):
        if self.kind not in BASE_KINDS:
            raise TypeError_(f"unknown base kind {self.kind!r}")


@dataclass(frozen=True)
class Tensor(CausalType):
    elem: CausalType
    dims: tuple[int, ...]

    def __post_init__(self):
        if not self.dims or any(d <= 0 for d in self.dims):
            raise TypeError_(f"tensor dims must be positive, got {self.dims}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))


@dataclass(frozen=True)
class Func(CausalType):
    src: CausalType
    dst: CausalType


@dataclass(frozen=True)
class Product(CausalType):
    parts: tuple[CausalType, ...]

    def __post_init__(self):
        if not self.parts:
            raise TypeError_("product of zero types")
        object.__setattr__(self, "parts", tuple(self.parts))


@dataclass(frozen=True)
class Sum(CausalType):
    alts: tuple[CausalType, ...]

    def __post_init__(self):
        if not self.alts:
            raise TypeError_("sum of zero types")
        object.__setattr__(self, "alts", tuple(self.alts))


PHYS = Base("Phys")
STATE = Base("State")
EVENT = Base("Event")
RULE = Base("Rule")


def is_subtype(a: CausalType, b: CausalType) -> bool:
    """a <= b: Tensor covariant with equal dims, Func contra/covariant,
    Product/Sum componentwise at equal arity, bases only reflexively."""
    if isinstance(a, Base) and isinstance(b, Base):
        return a.kind == b.kind
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return a.dims == b.dims and is_subtype(a.elem, b.elem)
    if isinstance(a, Func) and isinstance(b, Func):
        return is_subtype(b.src, a.src) and is_subtype(a.dst, b.dst)
    if isinstance(a, Product) and isinstance(b, Product):
        return len(a.parts) == len(b.parts) and all(
            is_subtype(x, y) for x, y in zip(a.parts, b.parts)
        )
    if isinstance(a, Sum) and isinstance(b, Sum):
        return len(a.alts) == len(b.alts) and all(
            is_subtype(x, y) for x, y in zip(a.alts, b.alts)
        )
    return False


def type_similarity(a: CausalType, b: CausalType) -> float:
    """Similarity in [0,1]: 1 iff mutually subtype-equal, 0 across
    constructors or base kinds, otherwise the mean over components
    (tensor dims count as one component)."""
    if isinstance(a, Base) and isinstance(b, Base):
        return 1.0 if a.kind == b.kind else 0.0
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        dims = 1.0 if a.dims == b.dims else 0.0
        return (type_similarity(a.elem, b.elem) + dims) / 2.0
    if isinstance(a, Func) and isinstance(b, Func):
        return (type_similarity(a.src, b.src) + type_similarity(a.dst, b.dst)) / 2.0
    if isinstance(a, Product) and isinstance(b, Product):
        if len(a.parts) != len(b.parts):
            return 0.0
        return sum(type_similarity(x, y) for x, y in zip(a.parts, b.parts)) / len(a.parts)
    if isinstance(a, Sum) and isinstance(b, Sum):
        if len(a.alts) != len(b.alts):
            return 0.0
        return sum(type_similarity(x, y) for x, y in zip(a.alts, b.alts)) / len(a.alts)
    return 0.0


# ---------------------------------------------------------------------
# signatures
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class TypeSig:
    """Ordered named slots; names unique within a signature."""

    slots: tuple[tuple[str, CausalType], ...]

    def __post_init__(self):
        names = [n for n, _ in self.slots]
        if len(set(names)) != len(names):
            raise TypeError_(f"duplicate slot names in signature: {names}")
        object.__setattr__(self, "slots", tuple(self.slots))

    def names(self) -> list[str]:
        return [n for n, _ in self.slots]

    def type_of(self, name: str) -> CausalType:
        for n, t in self.slots:
            if n == name:
                return t
        raise KeyError(name)

    def __len__(self) -> int:
        return len(self.slots)

    def __str__(self) -> str:
        return ", ".join(f"{n}:{format_type(t)}" for n, t in self.slots)


def sig(*slots: tuple[str, CausalType]) -> TypeSig:
    return TypeSig(tuple(slots))


def signatures_compatible(out_sig: TypeSig, in_sig: TypeSig) -> Optional[dict[str, str]]:
    """Total map from every input slot to a feeding output slot, or None.

    Each input slot binds to the first (in output slot order) output slot
    whose type it is a subtype of; input slots are processed in order, so
    the result is the lexicographically-first total binding.
    """
    binding: dict[str, str] = {}
    for in_name, in_type in in_sig.slots:
        for out_name, out_type in out_sig.slots:
            if is_subtype(in_type, out_type):
                binding[in_name] = out_name
                break
        else:
            return None
    return binding


def signature_similarity(out_sig: TypeSig, in_sig: TypeSig) -> float:
    """Mean over input slots of the best type similarity against any output slot."""
    if not in_sig.slots:
        return 1.0
    total = 0.0
    for _, in_type in in_sig.slots:
        best = 0.0
        for _, out_type in out_sig.slots:
            best = max(best, type_similarity(in_type, out_type))
        total += best
    return total / len(in_sig.slots)


# ---------------------------------------------------------------------
# canonical text form
# ---------------------------------------------------------------------

def format_type(t: CausalType) -> str:
    if isinstance(t, Base):
        return t.kind
    if isinstance(t, Tensor):
        dims = ",".join(str(d) for d in t.dims)
        return f"Tensor[{format_type(t.elem)};{dims}]"
    if isinstance(t, Func):
        return f"Func[{format_type(t.src)}->{format_type(t.dst)}]"
    if isinstance(t, Product):
        return "Product[" + ",".join(format_type(p) for p in t.parts) + "]"
    if isinstance(t, Sum):
        return "Sum[" + ",".join(format_type(a) for a in t.alts) + "]"
    raise TypeError_(f"not a causal type: {t!r}")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, msg: str):
        raise TypeError_(f"{msg} at position {self.pos} in {self.text!r}")

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str):
        if not self.text.startswith(ch, self.pos):
            self.error(f"expected {ch!r}")
        self.pos += len(ch)

    def ident(self) -> str:
        start = self.pos
        while self.pos < len(self.text) and (
            self.text[self.pos].isalnum() or self.text[self.pos] in "_"
        ):
            self.pos += 1
        if start == self.pos:
            self.error("expected identifier")
        return self.text[start:self.pos]

    def integer(self) -> int:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if start == self.pos:
            self.error("expected integer")
        return int(self.text[start:self.pos])

    def parse(self) -> CausalType:
        t = self.type_()
        if self.pos != len(self.text):
            self.error("trailing text")
        return t

    def type_(self) -> CausalType:
        name = self.ident()
        if name in BASE_KINDS:
            return Base(name)
        if name == "Tensor":
            self.expect("[")
            elem = self.type_()
            self.expect(";")
            dims = [self.integer()]
            while self.peek() == ",":
                self.expect(",")
                dims.append(self.integer())
            self.expect("]")
            return Tensor(elem, tuple(dims))
        if name == "Func":
            self.expect("[")
            src = self.type_()
            self.expect("->")
            dst = self.type_()
            self.expect("]")
            return Func(src, dst)
        if name in ("Product", "Sum"):
            self.expect("[")
            parts = [self.type_()]
            while self.peek() == ",":
                self.expect(",")
                parts.append(self.type_())
            self.expect("]")
            return Product(tuple(parts)) if name == "Product" else Sum(tuple(parts))
        self.error(f"unknown type constructor {name!r}")


def parse_type(text: str) -> CausalType:
    return _Parser(text.strip()).parse()


def format_sig(s: TypeSig) -> str:
    return ",".join(f"{n}:{format_type(t)}" for n, t in s.slots)


def parse_sig(text: str) -> TypeSig:
    text = text.strip()
    if not text:
        return TypeSig(())
    slots = []
    # split on commas at bracket depth zero
    depth = 0
    start = 0
    pieces = []
    for i, ch in enumerate(text):
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        elif ch == "," and depth == 0:
            pieces.append(text[start:i])
            start = i + 1
    pieces.append(text[start:])
    for piece in pieces:
        name, _, type_text = piece.partition(":")
        if not type_text:
            raise TypeError_(f"slot missing type: {piece!r}")
        slots.append((name.strip(), parse_type(type_text)))
    return TypeSig(tuple(slots))


# ---------------------------------------------------------------------
# value layout: every executable slot value is a flat float64 vector
# ---------------------------------------------------------------------

def value_dim(t: CausalType) -> int:
    """Length of the flat vector carrying a value of this type.

    Only value types (bases, tensors over value types, products of value
    types) are executable; Func and Sum slots have no runtime carrier.
    """
    if isinstance(t, Base):
        return 1
    if isinstance(t, Tensor):
        n = 1
        for d in t.dims:
            n *= d
        return n * value_dim(t.elem)
    if isinstance(t, Product):
        return sum(value_dim(p) for p in t.parts)
    raise TypeError_(f"{format_type(t)} is not an executable value type")


def is_value_type(t: CausalType) -> bool:
    try:
        value_dim(t)
        return True
    except TypeError_:
        return False


def sig_dim(s: TypeSig) -> int:
    return sum(value_dim(t) for _, t in s.slots)
