"""Coupled token processes for two nearby initial measures.

Each token draws its pair of starting points from a transport plan, and the
two meeting clocks of a pair are coupled whenever both pairs of locations
are distinct.  :func:`classify` evaluates the six goodness conditions on a
realization and :func:`sup_diff` measures how far the two empirical paths of
``mu^N_t(f)`` drift apart.

Two exponential couplings are available.  ``"superposition"`` sets
``Y = min(X, Z)`` with ``X ~ Exp(lo)`` and an independent ``Z ~ Exp(hi - lo)``
and disagrees with probability exactly ``1 - lo/hi``.  ``"maximal"`` draws
from the overlap of the two densities; its disagreement probability is the
total variation distance ``exp(-lo x*) - exp(-hi x*)`` with
``x* = log(hi/lo) / (hi - lo)``, which is smaller.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import DiscreteMeasure, MetricSpace, RateFunction, TestFunction
from .tokens import TokenSystem, owners_at


class InvalidRate(ValueError):
    pass


class InvalidPlan(ValueError):
    pass


# ---------------------------------------------------------------------------
# exponential couplings


def crossover(lo: float, hi: float) -> float:
    """Point where the two exponential densities cross (``lo < hi``)."""
    return math.log(hi / lo) / (hi - lo)


def disagreement_probability(a: float, b: float, method: str = "superposition") -> float:
    lo, hi = min(a, b), max(a, b)
    if lo == hi:
        return 0.0
    if method == "superposition":
        return 1.0 - lo / hi
    x = crossover(lo, hi)
    return math.exp(-lo * x) - math.exp(-hi * x)


def _superposition(lo, hi, rng, size):
    slow = rng.standard_exponential(size) / lo
    z = rng.standard_exponential(size) / np.where(hi > lo, hi - lo, 1.0)
    fast = np.where(hi > lo, np.minimum(slow, z), slow)
    return slow, fast


def _maximal(lo, hi, rng, size):
    slow = np.empty(size)
    fast = np.empty(size)
    equal = hi == lo
    e = rng.standard_exponential(size) / lo
    slow[equal] = fast[equal] = e[equal]
    idx = np.nonzero(~equal)[0]
    if len(idx) == 0:
        return slow, fast
    a, b = lo[idx], hi[idx]
    x = np.log(b / a) / (b - a)
    head = -np.expm1(-a * x)  # overlap mass on [0, x*] under the slow density
    tail = np.exp(-b * x)  # overlap mass on (x*, inf) under the fast density
    overlap = head + tail
    u = rng.random(len(idx))
    same = u < overlap
    v = rng.random(len(idx)) * overlap
    inside = v < head
    shared = np.where(inside, -np.log1p(-np.minimum(v, head)) / a, x + rng.standard_exponential(len(idx)) / b)
    s_out = shared.copy()
    f_out = shared.copy()
    todo = np.nonzero(~same)[0]
    # slow residual lives on (x*, inf): propose x* + Exp(a), accept w.p. 1 - (b/a) e^{-(b-a)y}
    pend = todo.copy()
    while len(pend):
        y = x[pend] + rng.standard_exponential(len(pend)) / a[pend]
        acc = rng.random(len(pend)) < 1.0 - (b[pend] / a[pend]) * np.exp(-(b[pend] - a[pend]) * y)
        s_out[pend[acc]] = y[acc]
        pend = pend[~acc]
    # fast residual lives on [0, x*]: truncated Exp(b), accept w.p. 1 - (a/b) e^{(b-a)y}
    pend = todo.copy()
    while len(pend):
        mass = -np.expm1(-b[pend] * x[pend])
        y = -np.log1p(-rng.random(len(pend)) * mass) / b[pend]
        acc = rng.random(len(pend)) < 1.0 - (a[pend] / b[pend]) * np.exp((b[pend] - a[pend]) * y)
        f_out[pend[acc]] = y[acc]
        pend = pend[~acc]
    slow[idx] = s_out
    fast[idx] = f_out
    return slow, fast


def couple_exponentials(a, b, rng: np.random.Generator, size: int | None = None, method: str = "superposition"):
    """Coupled draws ``X ~ Exp(a)``, ``Y ~ Exp(b)``; ``a`` and ``b`` may be arrays.

    Returns scalars when ``a``, ``b`` are scalars and ``size`` is ``None``.
    """
    scalar = np.ndim(a) == 0 and np.ndim(b) == 0 and size is None
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(~(a > 0)) or np.any(~(b > 0)) or np.any(~np.isfinite(a)) or np.any(~np.isfinite(b)):
        raise InvalidRate("rates must be finite and positive")
    shape = np.broadcast_shapes(a.shape, b.shape) if size is None else (size,)
    a = np.broadcast_to(a, shape).reshape(-1)
    b = np.broadcast_to(b, shape).reshape(-1)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    n = len(a)
    if method == "superposition":
        slow, fast = _superposition(lo, hi, rng, n)
    elif method == "maximal":
        slow, fast = _maximal(lo, hi, rng, n)
    else:
        raise ValueError(f"unknown coupling method {method!r}")
    x = np.where(a <= b, slow, fast).reshape(shape)
    y = np.where(a <= b, fast, slow).reshape(shape)
    if scalar:
        return float(x), float(y)
    return x, y


# ---------------------------------------------------------------------------
# transport plans and coupled systems


@dataclass(frozen=True)
class TransportPlan:
    """Joint law on ``supp(mu) x supp(nu)`` given as index pairs into the two measures."""

    mu: DiscreteMeasure
    nu: DiscreteMeasure
    pairs: tuple  # ((i, j, mass), ...)

    def __post_init__(self):
        mrow = np.zeros(len(self.mu))
        mcol = np.zeros(len(self.nu))
        for i, j, w in self.pairs:
            if w < 0:
                raise InvalidPlan("joint masses must be nonnegative")
            mrow[i] += w
            mcol[j] += w
        if np.max(np.abs(mrow - self.mu.masses)) > 1e-9 or np.max(np.abs(mcol - self.nu.masses)) > 1e-9:
            raise InvalidPlan("plan marginals do not match the measures")

    @classmethod
    def identity(cls, mu: DiscreteMeasure) -> "TransportPlan":
        return cls(mu, mu, tuple((k, k, float(m)) for k, m in enumerate(mu.masses)))

    @classmethod
    def atomwise(cls, mu: DiscreteMeasure, nu: DiscreteMeasure) -> "TransportPlan":
        """Pair atom ``k`` of ``mu`` with atom ``k`` of ``nu`` (same atom count, same masses)."""
        if len(mu) != len(nu):
            raise InvalidPlan("atomwise plans need equal atom counts")
        return cls(mu, nu, tuple((k, k, float(m)) for k, m in enumerate(mu.masses)))

    def max_displacement(self, space: MetricSpace) -> float:
        return max(space.distance(self.mu.locations[i], self.nu.locations[j]) for i, j, w in self.pairs if w > 0)

    def prokhorov_upper(self, space: MetricSpace) -> float:
        """``inf{e : P(d > e) <= e}`` under the plan, an upper bound on the Prokhorov distance."""
        d = np.array([space.distance(self.mu.locations[i], self.nu.locations[j]) for i, j, _ in self.pairs])
        w = np.array([p[2] for p in self.pairs])

        def tail(e):
            return float(w[d > e].sum())

        # the infimum sits at 0, at a jump of the tail function or on one of its levels
        cands = sorted({0.0, *d.tolist(), *(tail(e) for e in d.tolist())})
        return next(e for e in cands if tail(e) <= e + 1e-15)


def split_atoms(mu: DiscreteMeasure, offsets: Sequence[float], space: MetricSpace):
    """``nu`` putting half of each atom at ``s`` and half at ``s + offset``, plus the natural plan."""
    locs, masses, pairs = [], [], []
    for k, ((s, m), off) in enumerate(zip(mu, offsets)):
        locs += [s, s + off]
        masses += [m / 2, m / 2]
        pairs += [(k, 2 * k, m / 2), (k, 2 * k + 1, m / 2)]
    nu = DiscreteMeasure(space, locs, masses)
    return nu, TransportPlan(mu, nu, tuple(pairs))


@dataclass(frozen=True)
class CouplingParams:
    """Goodness thresholds; zero ``eps`` or ``t_star`` are accepted for boundary checks."""

    eps: float
    d1: float
    d2: float
    t_star: float

    def __post_init__(self):
        if self.eps < 0 or self.d1 <= 0 or self.d2 < self.d1 or self.t_star < 0:
            raise ValueError("need eps >= 0, 0 < d1 <= d2 and t_star >= 0")

    @property
    def eps_small_enough(self) -> bool:
        return self.eps <= self.d1 / 5


@dataclass(eq=False)
class CoupledTokens:
    left: TokenSystem
    right: TokenSystem
    clock_coupled: np.ndarray

    @property
    def N(self) -> int:
        return self.left.N


def build_coupled(
    plan: TransportPlan,
    N: int,
    space: MetricSpace,
    phi: RateFunction,
    rng: np.random.Generator,
    method: str = "superposition",
) -> CoupledTokens:
    w = np.array([p[2] for p in plan.pairs])
    pick = np.minimum(np.searchsorted(np.cumsum(w) / w.sum(), rng.random(N), side="right"), len(w) - 1)
    left_locs = plan.mu.array[[plan.pairs[k][0] for k in pick]]
    right_locs = plan.nu.array[[plan.pairs[k][1] for k in pick]]
    dl = space.pairwise(left_locs)
    dr = space.pairwise(right_locs)
    both = (dl > 0) & (dr > 0)
    tl = np.zeros(len(dl))
    tr = np.zeros(len(dr))
    if both.any():
        x, y = couple_exponentials(phi(dl[both]), phi(dr[both]), rng, method=method)
        tl[both] = x
        tr[both] = y
    only_l = (dl > 0) & ~both
    only_r = (dr > 0) & ~both
    tl[only_l] = rng.standard_exponential(int(only_l.sum())) / np.asarray(phi(dl[only_l]))
    tr[only_r] = rng.standard_exponential(int(only_r.sum())) / np.asarray(phi(dr[only_r]))
    left = TokenSystem(space, phi, left_locs, tl, space.equal_rows(left_locs))
    right = TokenSystem(space, phi, right_locs, tr, space.equal_rows(right_locs))
    return CoupledTokens(left, right, both)


@dataclass(frozen=True)
class GoodnessReport:
    g1: bool
    g2: bool
    g3: bool
    g4: bool
    g5: bool
    g6: bool

    @property
    def flags(self) -> tuple:
        return (self.g1, self.g2, self.g3, self.g4, self.g5, self.g6)

    @property
    def good(self) -> bool:
        return all(self.flags)


def classify(coupled: CoupledTokens, params: CouplingParams) -> GoodnessReport:
    L, R = coupled.left, coupled.right
    space = L.space
    dl = space.pairwise(L.locations)
    dr = space.pairwise(R.locations)
    same = dl == 0
    n = L.N
    disp = np.array([space.distance(L.point(i), R.point(i)) for i in range(n)])
    return GoodnessReport(
        g1=bool(np.all(same | (dl >= params.d1))),
        g2=bool(np.all(disp <= params.eps)),
        g3=bool(np.all(L.clocks[~same] == R.clocks[~same])),
        g4=bool(np.all(L.clocks[~same] >= params.t_star)) and params.t_star > 0,
        g5=bool(np.all(R.clocks[same] <= params.t_star)),
        g6=bool(np.all(dl <= params.d2) and np.all(dr <= params.d2)),
    )


def _path_values(system: TokenSystem, f: TestFunction, times: np.ndarray) -> np.ndarray:
    D, P = system.history()
    fv = np.asarray(f(system.locations), dtype=float)
    out = np.empty(len(times))
    for k, t in enumerate(times):
        out[k] = fv[owners_at(D, P, t)].mean()
    return out


def sup_diff(coupled: CoupledTokens, f: TestFunction, from_t: float, horizon: float = math.inf) -> float:
    """``sup |mu^N_t(f) - nu^N_t(f)|`` over ``[from_t, horizon]``.

    Both paths are right-continuous step functions, so the supremum is
    attained at ``from_t`` or at an event time of either side.
    """
    if from_t < 0:
        raise ValueError("from_t must be nonnegative")
    ev = []
    for s in (coupled.left, coupled.right):
        D, _ = s.history()
        ev.append(D[np.isfinite(D) & (D > from_t) & (D <= horizon)])
    times = np.unique(np.concatenate([[from_t]] + ev))
    diff = _path_values(coupled.left, f, times) - _path_values(coupled.right, f, times)
    return float(np.max(np.abs(diff)))


# ---------------------------------------------------------------------------
# the explicit bound on P(not good)


def _pair_distance_law(mu: DiscreteMeasure, space: MetricSpace):
    arr = mu.array
    return space.cross(arr, arr), np.outer(mu.masses, mu.masses)


def G_modulus(phi: RateFunction, lo: float, hi: float, z: float, grid: int = 2001, offsets: int = 201) -> float:
    """Grid evaluation of ``sup{1 - min/max of phi(x), phi(y) : x, y in [lo, hi], |x - y| <= z}``."""
    if z <= 0:
        return 0.0
    x = np.linspace(lo, hi, grid)
    best = 0.0
    for h in np.linspace(0.0, min(z, hi - lo), offsets)[1:]:
        xs = x[x + h <= hi]
        a = np.asarray(phi(xs))
        b = np.asarray(phi(xs + h))
        best = max(best, float(np.max(1.0 - np.minimum(a, b) / np.maximum(a, b))))
    return best


def pgood_bound(mu: DiscreteMeasure, N: int, params: CouplingParams, space: MetricSpace, phi: RateFunction, grid: int = 2001) -> dict:
    """The six-term union bound on ``P(not good)``, term by term.

    ``phi_max`` and ``phi_min`` are evaluated on grids over ``[d1, d2]`` and
    ``(0, 2 eps]``.  The last term uses ``Fbar(d2 / 2)`` with the ``C(N, 2)``
    prefactor as displayed in the statement of the bound.
    """
    eps, d1, d2, ts = params.eps, params.d1, params.d2, params.t_star
    d, w = _pair_distance_law(mu, space)
    pairs = N * (N - 1) / 2
    F_d1 = float(w[(d > 0) & (d <= d1)].sum())
    Fbar = float(w[d >= d2 / 2].sum())
    phimax = float(np.max(phi(np.linspace(d1, d2, grid))))
    if eps > 0:
        phimin = float(np.min(phi(np.linspace(2 * eps / grid, 2 * eps, grid))))
    else:
        phimin = math.inf
    terms = {
        "g1": pairs * F_d1,
        "g2": N * eps,
        "g3": pairs * G_modulus(phi, d1 / 2, d2, 2 * eps),
        "g4": pairs * -math.expm1(-phimax * ts),
        "g5": pairs * math.exp(-phimin * ts),
        "g6": pairs * Fbar,
    }
    terms["total"] = float(sum(terms.values()))
    return terms


def export_goodness(rows: Sequence, path) -> None:
    """Rows of ``(replicate, GoodnessReport, sup_diff)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "g1", "g2", "g3", "g4", "g5", "g6", "good", "sup_diff"])
        for r, rep, s in rows:
            w.writerow([r, *[int(g) for g in rep.flags], int(rep.good), f"{s:.17g}"])


# ---------------------------------------------------------------------------
# Feller-continuity demonstration


def feller_demo(mu: DiscreteMeasure, nus: Sequence, f: TestFunction, t: float, space: MetricSpace, phi: RateFunction, moments=(1, 2, 3)):
    """Gaps ``|E mu_t(f)^k - E nu_t(f)^k|`` for each ``(displacement, nu)``.

    The first moment never separates the two laws because both are
    martingales, and for ``k = 2`` the pair-moment identity makes the gap
    depend on ``phi`` only through pair distances, so it shrinks even for
    bounded rates.  The third moment exposes the failure of continuity.
    Exact oracle values are used, so measures are limited to four atoms.
    """
    from .oracle import moment_of_f, oracle_for

    base = oracle_for(mu, space, phi)
    ref = {k: moment_of_f(base, t, f, space, k) for k in moments}
    rows = []
    for disp, nu in nus:
        o = oracle_for(nu, space, phi)
        rows.append((float(disp), *[abs(moment_of_f(o, t, f, space, k) - ref[k]) for k in moments]))
    return rows
