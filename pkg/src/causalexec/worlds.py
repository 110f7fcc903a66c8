"""Synthetic ground-truth causal worlds with exact observation,
intervention, and counterfactual oracles.

Three families: linear-Gaussian structural models (exact counterfactuals
by abduction), Lipschitz-tagged function chains (for error-bound tests),
and stochastic finite-state processes (exact enumeration, rule-labeled
transitions for social-style scenarios).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .numerics import make_rng

SCHEMA_VERSION = 1


class WorldError(ValueError):
    pass


def _check_acyclic(adjacency: np.ndarray) -> list[int]:
    """Topological order of a boolean adjacency (i -> j); raises on cycles."""
    n = adjacency.shape[0]
    indeg = adjacency.sum(axis=0).astype(int)
    order = [i for i in range(n) if indeg[i] == 0]
    seen = list(order)
    frontier = list(order)
    while frontier:
        nxt = []
        for i in frontier:
            for j in range(n):
                if adjacency[i, j]:
                    indeg[j] -= 1
                    if indeg[j] == 0:
                        nxt.append(j)
                        seen.append(j)
        frontier = nxt
    if len(seen) != n:
        raise WorldError("adjacency has a cycle")
    return seen


@dataclass(frozen=True)
class LinearGaussianScm:
    """x_j = sum_i coefficients[i, j] * x_i + noise_j.

    ``adjacency[i, j]`` marks a direct edge i -> j; zero-noise variables
    are allowed so deterministic worlds are expressible.
    """

    variables: tuple[str, ...]
    adjacency: np.ndarray
    coefficients: np.ndarray
    noise_sd: np.ndarray

    def __post_init__(self):
        n = len(self.variables)
        adj = np.asarray(self.adjacency, dtype=bool)
        coef = np.asarray(self.coefficients, dtype=np.float64)
        sd = np.asarray(self.noise_sd, dtype=np.float64)
        if adj.shape != (n, n) or coef.shape != (n, n) or sd.shape != (n,):
            raise WorldError("inconsistent shapes")
        if np.any(sd < 0):
            raise WorldError("noise sd must be nonnegative")
        if np.any(coef[~adj] != 0.0):
            raise WorldError("coefficients outside the adjacency must be zero")
        order = _check_acyclic(adj)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "noise_sd", sd)
        object.__setattr__(self, "_order", tuple(order))

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def index(self, name: str) -> int:
        try:
            return self.variables.index(name)
        except ValueError:
            raise WorldError(f"unknown variable {name!r}") from None

    def _propagate(self, noise: np.ndarray, do_idx: dict[int, float]) -> np.ndarray:
        x = np.zeros_like(noise)
        for j in self._order:
            if j in do_idx:
                x[:, j] = do_idx[j]
            else:
                x[:, j] = x @ self.coefficients[:, j] + noise[:, j]
        return x

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise WorldError("need n >= 1 samples")
        noise = rng.normal(size=(n, self.n_vars)) * self.noise_sd
        return self._propagate(noise, {})

    def intervene(
        self, do_map: dict[str, float], n: int, rng: np.random.Generator
    ) -> np.ndarray:
        noise = rng.normal(size=(n, self.n_vars)) * self.noise_sd
        do_idx = {self.index(k): float(v) for k, v in do_map.items()}
        return self._propagate(noise, do_idx)

    def abduct(self, evidence: dict[str, float]) -> np.ndarray:
        """Solve the noise terms exactly from a full observation."""
        missing = [v for v in self.variables if v not in evidence]
        if missing:
            raise WorldError(f"evidence incomplete, missing {missing}")
        x = np.array([evidence[v] for v in self.variables], dtype=np.float64)
        return x - x @ self.coefficients

    def counterfactual(
        self, evidence: dict[str, float], do_map: dict[str, float]
    ) -> dict[str, float]:
        """Abduction, action, prediction; exact in the linear case."""
        u = self.abduct(evidence)
        do_idx = {self.index(k): float(v) for k, v in do_map.items()}
        x = self._propagate(u[None, :], do_idx)[0]
        return {v: float(x[i]) for i, v in enumerate(self.variables)}

    def counterfactual_closed_form(
        self, evidence: dict[str, float], do_map: dict[str, float]
    ) -> dict[str, float]:
        """Matrix oracle: x = (I - D C^T)^{-1} (D u + (I - D) v)."""
        n = self.n_vars
        u = self.abduct(evidence)
        keep = np.ones(n)
        forced = np.zeros(n)
        for name, v in do_map.items():
            i = self.index(name)
            keep[i] = 0.0
            forced[i] = float(v)
        d = np.diag(keep)
        a = np.eye(n) - d @ self.coefficients.T
        x = np.linalg.solve(a, d @ u + (np.eye(n) - d) @ forced)
        return {v: float(x[i]) for i, v in enumerate(self.variables)}

    def true_graph(self) -> np.ndarray:
        return self.adjacency.copy()

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "kind": "world",
            "family": "linear_gaussian",
            "variables": list(self.variables),
            "adjacency": self.adjacency.astype(int).tolist(),
            "coefficients": self.coefficients.tolist(),
            "noise_sd": self.noise_sd.tolist(),
        }


@dataclass(frozen=True)
class ChainWorld:
    """k stages of Lipschitz-tagged maps x_{t+1} = scale_t * tanh(A_t x_t).

    Each A_t is orthogonal, so the declared per-stage Lipschitz constant
    is exactly ``scales[t]`` and the end-to-end constant is at most the
    product of the scales.
    """

    n_stages: int
    dim: int
    scales: tuple[float, ...]
    matrices: tuple = ()

    def __post_init__(self):
        if self.n_stages < 1:
            raise WorldError("need at least one stage")
        if len(self.scales) != self.n_stages or any(s <= 0 for s in self.scales):
            raise WorldError("one positive Lipschitz scale per stage")
        if len(self.matrices) != self.n_stages:
            raise WorldError("one matrix per stage")

    @staticmethod
    def random(n_stages: int, dim: int, scales, rng: np.random.Generator):
        mats = []
        for _ in range(n_stages):
            q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
            mats.append(q)
        return ChainWorld(n_stages, dim, tuple(float(s) for s in scales), tuple(mats))

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(f"stage{t}" for t in range(self.n_stages + 1))

    def stage_map(self, t: int, x: np.ndarray) -> np.ndarray:
        return self.scales[t] * np.tanh(x @ self.matrices[t].T)

    def run(self, x0: np.ndarray) -> list[np.ndarray]:
        xs = [np.asarray(x0, dtype=np.float64)]
        for t in range(self.n_stages):
            xs.append(self.stage_map(t, xs[-1]))
        return xs

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise WorldError("need n >= 1 samples")
        xs = self.run(rng.normal(size=(n, self.dim)))
        return np.concatenate(xs, axis=1)

    def intervene(
        self, do_map: dict[str, np.ndarray], n: int, rng: np.random.Generator
    ) -> np.ndarray:
        stage_of = {name: t for t, name in enumerate(self.variables)}
        for name in do_map:
            if name not in stage_of:
                raise WorldError(f"unknown variable {name!r}")
        xs = [np.broadcast_to(np.zeros(self.dim), (n, self.dim)).copy()]
        x0 = rng.normal(size=(n, self.dim))
        xs[0] = (
            np.broadcast_to(np.asarray(do_map["stage0"], dtype=np.float64), (n, self.dim)).copy()
            if "stage0" in do_map
            else x0
        )
        for t in range(self.n_stages):
            nxt = self.stage_map(t, xs[-1])
            name = f"stage{t + 1}"
            if name in do_map:
                nxt = np.broadcast_to(
                    np.asarray(do_map[name], dtype=np.float64), (n, self.dim)
                ).copy()
            xs.append(nxt)
        return np.concatenate(xs, axis=1)

    def lipschitz_bound(self) -> float:
        out = 1.0
        for s in self.scales:
            out *= s
        return out

    def true_graph(self) -> np.ndarray:
        n = self.n_stages + 1
        adj = np.zeros((n, n), dtype=bool)
        for t in range(self.n_stages):
            adj[t, t + 1] = True
        return adj

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "kind": "world",
            "family": "chain",
            "n_stages": self.n_stages,
            "dim": self.dim,
            "scales": list(self.scales),
            "matrices": [m.tolist() for m in self.matrices],
        }


@dataclass(frozen=True)
class FsmWorld:
    """A length-L stochastic state process; variables are s0..sL.

    Transition rows sum to one; transitions may carry rule labels for
    social-style scenarios.  Small state sets enumerate exactly.
    """

    states: tuple[str, ...]
    init_dist: np.ndarray
    transitions: np.ndarray
    n_steps: int
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        s = len(self.states)
        init = np.asarray(self.init_dist, dtype=np.float64)
        trans = np.asarray(self.transitions, dtype=np.float64)
        if init.shape != (s,) or trans.shape != (s, s):
            raise WorldError("inconsistent shapes")
        if not np.isclose(init.sum(), 1.0) or np.any(init < 0):
            raise WorldError("initial distribution must be a distribution")
        if not np.allclose(trans.sum(axis=1), 1.0) or np.any(trans < 0):
            raise WorldError("transition rows must sum to 1")
        if self.n_steps < 1:
            raise WorldError("need at least one step")
        object.__setattr__(self, "init_dist", init)
        object.__setattr__(self, "transitions", trans)

    @property
    def is_discrete(self) -> bool:
        return True

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(f"s{t}" for t in range(self.n_steps + 1))

    def _step_of(self, name: str) -> int:
        if not name.startswith("s"):
            raise WorldError(f"unknown variable {name!r}")
        try:
            t = int(name[1:])
        except ValueError:
            raise WorldError(f"unknown variable {name!r}") from None
        if not 0 <= t <= self.n_steps:
            raise WorldError(f"unknown variable {name!r}")
        return t

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.intervene({}, n, rng)

    def intervene(
        self, do_map: dict[str, int], n: int, rng: np.random.Generator
    ) -> np.ndarray:
        if n < 1:
            raise WorldError("need n >= 1 samples")
        forced = {self._step_of(k): int(v) for k, v in do_map.items()}
        s = len(self.states)
        out = np.zeros((n, self.n_steps + 1))
        cur = (
            np.full(n, forced[0])
            if 0 in forced
            else rng.choice(s, size=n, p=self.init_dist)
        )
        out[:, 0] = cur
        for t in range(1, self.n_steps + 1):
            if t in forced:
                cur = np.full(n, forced[t])
            else:
                u = rng.random(n)
                cdf = np.cumsum(self.transitions[cur], axis=1)
                cur = (u[:, None] > cdf).sum(axis=1)
            out[:, t] = cur
        return out

    def marginals(self, do_map: Optional[dict[str, int]] = None) -> np.ndarray:
        """Exact per-step marginal distributions under graph surgery."""
        forced = {self._step_of(k): int(v) for k, v in (do_map or {}).items()}
        s = len(self.states)
        dists = np.zeros((self.n_steps + 1, s))
        cur = self.init_dist.copy()
        if 0 in forced:
            cur = np.zeros(s)
            cur[forced[0]] = 1.0
        dists[0] = cur
        for t in range(1, self.n_steps + 1):
            if t in forced:
                cur = np.zeros(s)
                cur[forced[t]] = 1.0
            else:
                cur = cur @ self.transitions
            dists[t] = cur
        return dists

    def support(self, name: str) -> list[int]:
        self._step_of(name)
        return list(range(len(self.states)))

    def true_graph(self) -> np.ndarray:
        n = self.n_steps + 1
        adj = np.zeros((n, n), dtype=bool)
        for t in range(self.n_steps):
            adj[t, t + 1] = True
        return adj

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "kind": "world",
            "family": "fsm",
            "states": list(self.states),
            "init_dist": self.init_dist.tolist(),
            "transitions": self.transitions.tolist(),
            "n_steps": self.n_steps,
            "labels": {f"{k[0]},{k[1]}": v for k, v in self.labels.items()},
        }


def world_from_dict(d: dict) -> object:
    if d.get("kind") != "world":
        raise WorldError("not a world document")
    fam = d["family"]
    if fam == "linear_gaussian":
        return LinearGaussianScm(
            tuple(d["variables"]),
            np.asarray(d["adjacency"], dtype=bool),
            np.asarray(d["coefficients"], dtype=np.float64),
            np.asarray(d["noise_sd"], dtype=np.float64),
        )
    if fam == "chain":
        return ChainWorld(
            d["n_stages"], d["dim"], tuple(d["scales"]),
            tuple(np.asarray(m, dtype=np.float64) for m in d["matrices"]),
        )
    if fam == "fsm":
        labels = {
            tuple(int(x) for x in k.split(",")): v
            for k, v in d.get("labels", {}).items()
        }
        return FsmWorld(
            tuple(d["states"]), np.asarray(d["init_dist"]),
            np.asarray(d["transitions"]), d["n_steps"], labels,
        )
    raise WorldError(f"unknown world family {fam!r}")


def save_world(world, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(world.to_dict(), fh)


def load_world(path: str):
    with open(path) as fh:
        return world_from_dict(json.load(fh))


def dataset_to_csv(data: np.ndarray, variables: Sequence[str], path: str) -> None:
    header = ",".join(variables)
    np.savetxt(path, data, delimiter=",", header=header, comments="")


# ---------------------------------------------------------------------
# structural Hamming distance
# ---------------------------------------------------------------------

def shd(a: np.ndarray, b: np.ndarray) -> int:
    """Edge insertions + deletions + reversals between two digraphs;
    a reversal counts as one edit."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise WorldError("adjacency shapes differ")
    n = a.shape[0]
    dist = 0
    for i in range(n):
        for j in range(i + 1, n):
            pa = (a[i, j], a[j, i])
            pb = (b[i, j], b[j, i])
            if pa == pb:
                continue
            if any(pa) and any(pb):
                # reversal, or 2-cycle vs single edge: one edit
                dist += 1
            else:
                dist += int(pa[0] != pb[0]) + int(pa[1] != pb[1])
    return dist


# ---------------------------------------------------------------------
# the seeded toy suite
# ---------------------------------------------------------------------

def random_scm(
    rng: np.random.Generator,
    n_vars: int = 5,
    edge_prob: float = 0.4,
    coef_low: float = 0.5,
    coef_high: float = 2.0,
    noise_sd: float = 0.1,
) -> LinearGaussianScm:
    """Random DAG over a shuffled order; signed coefficients bounded away
    from zero so every edge is detectable."""
    order = rng.permutation(n_vars)
    adj = np.zeros((n_vars, n_vars), dtype=bool)
    coef = np.zeros((n_vars, n_vars))
    for a in range(n_vars):
        for b in range(a + 1, n_vars):
            if rng.random() < edge_prob:
                i, j = order[a], order[b]
                adj[i, j] = True
                mag = rng.uniform(coef_low, coef_high)
                coef[i, j] = mag if rng.random() < 0.5 else -mag
    names = tuple(f"x{k}" for k in range(n_vars))
    return LinearGaussianScm(names, adj, coef, np.full(n_vars, noise_sd))


def toy_suite(seed: int = 0, count: int = 20) -> list[LinearGaussianScm]:
    return [random_scm(make_rng(seed + 1000 * k)) for k in range(count)]
