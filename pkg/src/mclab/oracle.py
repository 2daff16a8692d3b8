"""Exact ground truth for chains with at most four atoms.

A state records, for every initial atom ``a``, the atom ``owner[a]`` whose
location now carries ``a``'s mass.  Survivors own themselves, so the valid
states are the idempotent maps ``owner[owner[a]] == owner[a]``: one state
per set partition and survivor choice (1, 3, 10 and 41 states for n = 1..4).

Transient laws come from uniformization: with ``L >= max_i |Q_ii|`` and
``K = I + Q/L``, ``pi(t) = sum_k Pois(k; L t) pi(0) K^k``, truncated once
the Poisson tail drops below ``1e-10``.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import DiscreteMeasure, MetricSpace, RateFunction, TestFunction

MAX_ATOMS = 4
TAIL = 1e-10


class CapacityError(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


class OracleInconsistency(AssertionError):
    pass


@dataclass(frozen=True)
class OwnershipState:
    owner: tuple

    @property
    def n(self) -> int:
        return len(self.owner)

    @property
    def survivors(self) -> tuple:
        return tuple(a for a in range(self.n) if self.owner[a] == a)

    @property
    def blocks(self) -> dict:
        out: dict = {}
        for a, s in enumerate(self.owner):
            out.setdefault(s, []).append(a)
        return out

    def block_mass(self, masses: Sequence[float]) -> dict:
        return {s: float(sum(masses[a] for a in members)) for s, members in self.blocks.items()}

    def mass_at(self, i: int, masses: Sequence[float]) -> float:
        """Mass sitting at atom ``i``'s location (0 unless ``i`` survives)."""
        return float(sum(masses[a] for a in range(self.n) if self.owner[a] == i))

    def partition_repr(self) -> str:
        return "|".join("".join(str(a + 1) for a in members) for _, members in sorted(self.blocks.items()))

    @property
    def absorbing(self) -> bool:
        return len(self.survivors) == 1


def enumerate_states(n: int) -> list:
    """All ownership states of ``n`` atoms, ordered by decreasing survivor count then lexicographically."""
    if not 1 <= n <= MAX_ATOMS:
        raise CapacityError(f"the oracle handles 1 to {MAX_ATOMS} atoms, got {n}")
    states = [
        OwnershipState(o)
        for o in itertools.product(range(n), repeat=n)
        if all(o[o[a]] == o[a] for a in range(n))
    ]
    states.sort(key=lambda s: (-len(s.survivors), s.owner))
    return states


def state_index(states: Sequence[OwnershipState]) -> dict:
    return {s.owner: k for k, s in enumerate(states)}


@dataclass
class CTMCOracle:
    states: list
    Q: np.ndarray
    initial: int
    masses: np.ndarray
    locations: tuple

    @property
    def index(self) -> dict:
        return state_index(self.states)

    def initial_vector(self) -> np.ndarray:
        v = np.zeros(len(self.states))
        v[self.initial] = 1.0
        return v


def build_generator(states, measure: DiscreteMeasure, space: MetricSpace, phi: RateFunction) -> CTMCOracle:
    n = len(measure)
    masses = measure.masses
    arr = measure.array
    dmat = space.cross(arr, arr)
    idx = state_index(states)
    Q = np.zeros((len(states), len(states)))
    for k, st in enumerate(states):
        surv = st.survivors
        bm = st.block_mass(masses)
        for a, b in itertools.combinations(surv, 2):
            if dmat[a, b] == 0:
                raise DegenerateInput(f"atoms {a} and {b} share a location")
            nu = float(phi(dmat[a, b]))
            for win, lose in ((a, b), (b, a)):
                target = tuple(win if s == lose else s for s in st.owner)
                Q[k, idx[target]] += nu * bm[win] / (bm[a] + bm[b])
        Q[k, k] = -Q[k].sum()
    start = idx[tuple(range(n))]
    return CTMCOracle(list(states), Q, start, np.asarray(masses, dtype=float), tuple(measure.locations))


def oracle_for(measure: DiscreteMeasure, space: MetricSpace, phi: RateFunction) -> CTMCOracle:
    return build_generator(enumerate_states(len(measure)), measure, space, phi)


def _poisson_weights(lam: float) -> np.ndarray:
    """Poisson(lam) pmf from 0 until the remaining tail is below ``TAIL``."""
    if lam == 0:
        return np.ones(1)
    w = []
    total = 0.0
    k = 0
    while True:
        wk = math.exp(-lam + k * math.log(lam) - math.lgamma(k + 1))
        w.append(wk)
        total += wk
        if k > lam and 1.0 - total < TAIL:
            break
        k += 1
    return np.asarray(w)


def transient_from(oracle: CTMCOracle, p0: np.ndarray, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("time must be nonnegative")
    Q = oracle.Q
    lam = float(np.max(-np.diag(Q))) if len(Q) else 0.0
    p = np.asarray(p0, dtype=float)
    if lam == 0 or t == 0:
        return p.copy()
    K = np.eye(len(Q)) + Q / lam
    weights = _poisson_weights(lam * t)
    out = np.zeros_like(p)
    v = p.copy()
    for wk in weights:
        out += wk * v
        v = v @ K
    # the truncated tail is all mass that has not been redistributed yet; it
    # is below TAIL, so renormalising changes nothing beyond that
    return out / out.sum()


def transient(oracle: CTMCOracle, t: float) -> np.ndarray:
    return transient_from(oracle, oracle.initial_vector(), t)


def pair_moment_closed_form(measure: DiscreteMeasure, space: MetricSpace, phi: RateFunction, i: int, j: int, t: float) -> float:
    m = measure.masses
    d = space.distance(measure.locations[i], measure.locations[j])
    return float(m[i] * m[j] * math.exp(-float(phi(d)) * t))


def exact_pair_moment(oracle: CTMCOracle, i: int, j: int, t: float, space: MetricSpace, phi: RateFunction) -> float:
    """``E[p_i(t) p_j(t)]`` from the state sum, checked against the closed form."""
    if i == j:
        raise ValueError("need two different atoms")
    pi = transient(oracle, t)
    m = oracle.masses
    state_sum = float(sum(p * s.mass_at(i, m) * s.mass_at(j, m) for p, s in zip(pi, oracle.states)))
    measure = DiscreteMeasure(space, oracle.locations, m, check=False)
    closed = pair_moment_closed_form(measure, space, phi, i, j, t)
    if abs(closed - state_sum) > 1e-8:
        raise OracleInconsistency(f"closed form {closed} vs state sum {state_sum}")
    return state_sum


def state_values(oracle: CTMCOracle, f: TestFunction, space: MetricSpace) -> np.ndarray:
    """``mu(f)`` for every state."""
    fv = np.asarray(f(space.as_array(oracle.locations)), dtype=float)
    m = oracle.masses
    return np.array([sum(m[a] * fv[s.owner[a]] for a in range(s.n)) for s in oracle.states])


def law_of_f(oracle: CTMCOracle, t: float, f: TestFunction, space: MetricSpace, tol: float = 1e-12) -> dict:
    """Law of ``mu_t(f)`` as ``{value: probability}``; values closer than ``tol`` are merged."""
    pi = transient(oracle, t)
    vals = state_values(oracle, f, space)
    out: dict = {}
    for v, p in sorted(zip(vals.tolist(), pi.tolist())):
        for key in out:
            if abs(key - v) <= tol:
                out[key] += p
                break
        else:
            out[v] = p
    return out


def moment_of_f(oracle: CTMCOracle, t: float, f: TestFunction, space: MetricSpace, k: int) -> float:
    pi = transient(oracle, t)
    return float(np.dot(pi, state_values(oracle, f, space) ** k))


def export_transient(oracle: CTMCOracle, t: float, path) -> None:
    pi = transient(oracle, t)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state_id", "partition_repr", "survivors", "probability"])
        for k, (s, p) in enumerate(zip(oracle.states, pi)):
            w.writerow([k, s.partition_repr(), " ".join(str(a + 1) for a in s.survivors), f"{p:.17g}"])


# ---------------------------------------------------------------------------
# meeting trees


@dataclass(frozen=True)
class MeetingTree:
    """Time-zero groups (each listed lowest token first) and ordered ``(loser, winner)`` merges.

    Tokens are numbered from 1.
    """

    groups: tuple
    merges: tuple


def _zero_groups(pattern: Sequence) -> tuple:
    groups: dict = {}
    for tok, lab in enumerate(pattern, start=1):
        groups.setdefault(lab, []).append(tok)
    return tuple(tuple(g) for g in groups.values() if len(g) > 1)


def enumerate_meeting_trees(n: int, pattern: Sequence | None = None, realizable: bool = True) -> list:
    """All meeting trees on ``n <= 3`` tokens with the given coincidence pattern.

    A tree is valid when every token loses at most once and every loser has
    a higher index than its winner.  With ``realizable`` a winner must also
    still be alive, i.e. not have lost earlier in the list.
    """
    if n > 3:
        raise CapacityError("meeting trees are enumerated for n <= 3")
    pattern = list(range(n)) if pattern is None else list(pattern)
    groups = _zero_groups(pattern)
    dead0 = {tok for g in groups for tok in g[1:]}
    alive = [tok for tok in range(1, n + 1) if tok not in dead0]
    pairs = [(j, i) for i in alive for j in alive if j > i]
    trees = []
    for r in range(len(alive)):
        for seq in itertools.permutations(pairs, r):
            losers = [lo for lo, _ in seq]
            if len(set(losers)) != len(losers):
                continue
            if realizable and any(w in losers[:k] for k, (_, w) in enumerate(seq)):
                continue
            trees.append(MeetingTree(groups, tuple(seq)))
    return trees


def observed_tree(state, pattern: Sequence) -> MeetingTree:
    """Meeting tree of a token history (``PartitionState`` with 0-based events)."""
    merges = tuple((ev.loser + 1, ev.winner + 1) for ev in state.events if ev.time > 0)
    return MeetingTree(_zero_groups(pattern), merges)
