"""causalexec: typed causal primitives, dual-channel routing, differentiable
causal execution graphs, synthetic causal worlds, and a constrained
meta-evolution loop, all at desk scale on float64 numpy."""

__version__ = "0.1.0"
