"""Seed library: 32 primitives, eight per abstraction layer.

The type palette is small on purpose: planar and spatial physical
vectors, a scalar magnitude, four-way state distributions with a scalar
mode, three-channel event encodings with a scalar outcome, and rule
truth values.  Cross-layer encoders give composition chains realistic
accept/reject behavior.
"""
from __future__ import annotations

import numpy as np

from .primitives import (
    ActivationSpec,
    AffineNet,
    Fsm,
    Predicate,
    Primitive,
    PrimitiveSpec,
    SeqPattern,
    SoftRule,
    make_primitive,
)
from .typesys import EVENT, PHYS, RULE, STATE, Tensor, sig

V2 = Tensor(PHYS, (2,))
V3 = Tensor(PHYS, (3,))
S4 = Tensor(STATE, (4,))
EV3 = Tensor(EVENT, (3,))


def seed_specs() -> list[PrimitiveSpec]:
    ge = lambda slot, v: Predicate("ge", slot, v)  # noqa: E731
    le = lambda slot, v: Predicate("le", slot, v)  # noqa: E731
    specs = [
        # -- physical dynamics --------------------------------------
        PrimitiveSpec("phys.drift", "Phys", sig(("q", V2)), sig(("q", V2)),
                      AffineNet((2, 4, 2))),
        PrimitiveSpec("phys.force", "Phys", sig(("q", V2)), sig(("f", V2)),
                      AffineNet((2, 4, 2))),
        PrimitiveSpec("phys.spring", "Phys", sig(("q", V2), ("v", V2)),
                      sig(("q", V2)), AffineNet((4, 4, 2)),
                      conditions=(ge("v", -1.0),)),
        PrimitiveSpec("phys.field", "Phys", sig(("x", V3)), sig(("x", V3)),
                      AffineNet((3, 5, 3))),
        PrimitiveSpec("phys.project", "Phys", sig(("x", V3)), sig(("q", V2)),
                      AffineNet((3, 4, 2))),
        PrimitiveSpec("phys.lift", "Phys", sig(("q", V2)), sig(("x", V3)),
                      AffineNet((2, 4, 3))),
        PrimitiveSpec("phys.energy", "Phys", sig(("q", V2)), sig(("e", PHYS)),
                      AffineNet((2, 3, 1)), conditions=(ge("q", 0.0),)),
        PrimitiveSpec("phys.dissipate", "Phys", sig(("e", PHYS)), sig(("e", PHYS)),
                      AffineNet((1, 3, 1))),
        # -- object function ----------------------------------------
        PrimitiveSpec("func.switch", "Func", sig(("s", S4), ("drive", V2)),
                      sig(("s", S4)), Fsm(4, 2, True),
                      conditions=(ge("drive", 0.0),)),
        PrimitiveSpec("func.gate", "Func", sig(("s", S4)), sig(("s", S4)),
                      Fsm(4, 0, True)),
        PrimitiveSpec("func.sense", "Func", sig(("q", V2)), sig(("s", S4)),
                      Fsm(4, 2, False)),
        PrimitiveSpec("func.sense_level", "Func", sig(("e", PHYS)), sig(("s", S4)),
                      Fsm(4, 1, False)),
        PrimitiveSpec("func.mode", "Func", sig(("s", S4)), sig(("m", STATE)),
                      AffineNet((4, 1), nonlinearity="linear")),
        PrimitiveSpec("func.mode_drive", "Func", sig(("m", STATE)), sig(("s", S4)),
                      Fsm(4, 1, False)),
        PrimitiveSpec("func.relay", "Func", sig(("s", S4)), sig(("s", S4)),
                      Fsm(4, 0, True)),
        PrimitiveSpec("func.blend", "Func", sig(("s", S4), ("m", STATE)),
                      sig(("s", S4)), Fsm(4, 1, True)),
        # -- event patterns ------------------------------------------
        PrimitiveSpec("event.echo", "Event", sig(("e", EV3)), sig(("e", EV3)),
                      SeqPattern(3, 3, 3)),
        PrimitiveSpec("event.script", "Event", sig(("e", EV3)), sig(("e", EV3)),
                      SeqPattern(2, 3, 3)),
        PrimitiveSpec("event.from_state", "Event", sig(("s", S4)), sig(("e", EV3)),
                      SeqPattern(2, 4, 3)),
        PrimitiveSpec("event.from_mode", "Event", sig(("m", STATE)), sig(("e", EV3)),
                      SeqPattern(2, 1, 3)),
        PrimitiveSpec("event.outcome", "Event", sig(("e", EV3)), sig(("o", EVENT)),
                      SeqPattern(2, 3, 1)),
        PrimitiveSpec("event.chain", "Event", sig(("e", EV3), ("o", EVENT)),
                      sig(("e", EV3)), SeqPattern(2, 4, 3),
                      conditions=(le("o", 2.0),)),
        PrimitiveSpec("event.onset", "Event", sig(("o", EVENT)), sig(("e", EV3)),
                      SeqPattern(3, 1, 3)),
        PrimitiveSpec("event.track", "Event", sig(("e", EV3)), sig(("o", EVENT)),
                      SeqPattern(3, 3, 1)),
        # -- social / abstract rules ---------------------------------
        PrimitiveSpec("rule.conj", "Rule", sig(("x", RULE), ("y", RULE)),
                      sig(("z", RULE)), SoftRule(2, "and")),
        PrimitiveSpec("rule.disj", "Rule", sig(("x", RULE), ("y", RULE)),
                      sig(("z", RULE)), SoftRule(2, "or")),
        PrimitiveSpec("rule.implies", "Rule", sig(("x", RULE), ("y", RULE)),
                      sig(("z", RULE)), SoftRule(2, "implies")),
        PrimitiveSpec("rule.conj3", "Rule",
                      sig(("x", RULE), ("y", RULE), ("w", RULE)),
                      sig(("z", RULE)), SoftRule(3, "and")),
        PrimitiveSpec("rule.judge_outcome", "Rule", sig(("o", EVENT)),
                      sig(("x", RULE)),
                      AffineNet((1, 3, 1), out_nonlinearity="sigmoid"),
                      conditions=(ge("o", 0.0),)),
        PrimitiveSpec("rule.judge_event", "Rule", sig(("e", EV3)), sig(("x", RULE)),
                      AffineNet((3, 3, 1), out_nonlinearity="sigmoid")),
        PrimitiveSpec("rule.norm_gate", "Rule", sig(("x", RULE)), sig(("y", RULE)),
                      SoftRule(1, "and")),
        PrimitiveSpec("rule.sanction", "Rule", sig(("x", RULE)), sig(("y", RULE)),
                      SoftRule(1, "or")),
    ]
    return specs


def seed_library(rng: np.random.Generator) -> list[Primitive]:
    """The 32-primitive seed library with seeded parameter init."""
    return [make_primitive(s, rng) for s in seed_specs()]


def library_by_id(prims) -> dict[str, Primitive]:
    return {p.id: p for p in prims}
