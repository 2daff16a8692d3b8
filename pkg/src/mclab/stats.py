"""Monte Carlo checks of the closed-form claims about the process.

Every check draws its replicates through :func:`mclab.rng.map_chunks` with
its own key, so a report depends only on ``(config, seed)``.  Atomic initial
measures are simulated with the jump chain; other initial measures go through
the token process with ``N`` tokens.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import oracle as orc
from .coalescent import location_masses, simulate_ensemble, state_codes
from .model import (
    CoordinateProjection,
    DiscreteMeasure,
    InitialMeasure,
    MetricSpace,
    Mixture,
    TestFunction,
    UniformBox,
    phi_min as _phi_min,
)
from .rng import child_rng, map_chunks
from .tokens import batch_histories, block_sizes, owners_at


@dataclass
class TestConfig:
    __test__ = False

    replicates: int = 10_000
    base_seed: int = 0
    sigma: float = 4.0
    threads: int = 1
    time_grid: tuple = ()

    def __post_init__(self):
        if self.replicates < 100:
            raise ValueError("at least 100 replicates are required")


@dataclass
class EstimatorReport:
    check: str
    estimate: float
    stderr: float
    target: float
    z: float
    replicates: int
    verdict: bool
    kind: str = "point"
    p_value: float | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _z(est: float, se: float, target: float) -> float:
    if se == 0:
        return 0.0 if abs(est - target) <= 1e-12 else math.copysign(math.inf, est - target)
    return (est - target) / se


def point_report(check, samples, target, sigma, target_se=0.0, details=None) -> EstimatorReport:
    samples = np.asarray(samples, dtype=float)
    est = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(len(samples))) if len(samples) > 1 else 0.0
    pooled = math.hypot(se, target_se)
    z = _z(est, pooled, target)
    return EstimatorReport(check, est, pooled, float(target), z, len(samples), bool(abs(z) <= sigma), "point", None, details or {})


def upper_report(check, samples, bound, sigma, details=None) -> EstimatorReport:
    samples = np.asarray(samples, dtype=float)
    est = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(len(samples)))
    z = _z(est, se, bound)
    return EstimatorReport(check, est, se, float(bound), z, len(samples), bool(est <= bound + sigma * se), "upper", None, details or {})


def lower_report(check, samples, bound, sigma, details=None) -> EstimatorReport:
    samples = np.asarray(samples, dtype=float)
    est = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(len(samples)))
    z = _z(est, se, bound)
    return EstimatorReport(check, est, se, float(bound), z, len(samples), bool(est >= bound - sigma * se), "lower", None, details or {})


# ---------------------------------------------------------------------------
# chi-square


def chi2_sf(x: float, dof: int) -> float:
    """Upper tail of the chi-square law by the Wilson-Hilferty cube-root approximation."""
    if dof <= 0:
        raise ValueError("dof must be positive")
    if x <= 0:
        return 1.0
    k = float(dof)
    z = ((x / k) ** (1.0 / 3.0) - (1.0 - 2.0 / (9.0 * k))) / math.sqrt(2.0 / (9.0 * k))
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def chi2_gof(counts: np.ndarray, probs: np.ndarray):
    """Pearson statistic, degrees of freedom and p-value; zero-probability cells must be empty."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    n = counts.sum()
    pos = probs > 0
    if np.any(counts[~pos] > 0):
        return math.inf, int(pos.sum()) - 1, 0.0
    expected = n * probs[pos]
    stat = float(np.sum((counts[pos] - expected) ** 2 / expected))
    dof = int(pos.sum()) - 1
    if dof == 0:
        return 0.0, 0, 1.0
    return stat, dof, chi2_sf(stat, dof)


def multinomial_cells(counts, probs, sigma):
    """Per-cell z scores of observed frequencies; returns ``(max |z|, ok)``."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    n = counts.sum()
    freq = counts / n
    worst = 0.0
    ok = True
    for f, p in zip(freq, probs):
        if p <= 1e-15:
            if f > 0:
                ok = False
                worst = math.inf
            continue
        z = abs(f - p) / math.sqrt(p * (1 - p) / n) if p < 1 else 0.0
        worst = max(worst, z)
    return worst, bool(ok and worst <= sigma)


# ---------------------------------------------------------------------------
# replicate drivers


def ensemble(measure, phi, space, cfg: TestConfig, key, times=(), t_max=None, replicates=None):
    from .coalescent import Ensemble

    R = cfg.replicates if replicates is None else replicates
    parts = map_chunks(
        lambda r, size: simulate_ensemble(measure, phi, space, size, r, times=times, t_max=t_max),
        R,
        cfg.base_seed,
        key,
        threads=cfg.threads,
    )
    return Ensemble.concat(parts)


def token_statistic(measure, N, space, phi, cfg: TestConfig, key, stat, replicates=None) -> np.ndarray:
    """Apply ``stat(locs, D, P)`` to batches of independent token systems and stack the rows."""
    R = cfg.replicates if replicates is None else replicates

    def run(rng, size):
        return np.concatenate([stat(l, D, P) for l, D, P in batch_histories(measure, N, space, phi, size, rng)])

    return np.concatenate(map_chunks(run, R, cfg.base_seed, key, threads=cfg.threads))


def token_f_values(f: TestFunction, locs: np.ndarray, owner: np.ndarray) -> np.ndarray:
    """``mu^N_t(f)`` per system from owners ``(R, N)``."""
    fv = np.asarray(f(locs.reshape((-1,) + locs.shape[2:])), dtype=float).reshape(owner.shape)
    return np.take_along_axis(fv, owner, axis=1).mean(axis=1)


def reference_mean(measure: InitialMeasure, f: TestFunction, space: MetricSpace, rng, n: int = 1_000_000):
    """``mu(f)`` and its standard error (0 when computed exactly)."""
    if isinstance(measure, DiscreteMeasure):
        return measure.integrate(f), 0.0
    if isinstance(measure, UniformBox) and isinstance(f, CoordinateProjection):
        return 0.5 * (measure.lo[f.axis] + measure.hi[f.axis]), 0.0
    if isinstance(measure, Mixture):
        parts = [reference_mean(c, f, space, rng, n) for c in measure.components]
        return (
            float(sum(w * v for w, (v, _) in zip(measure.weights, parts))),
            float(math.sqrt(sum((w * s) ** 2 for w, (_, s) in zip(measure.weights, parts)))),
        )
    vals = np.asarray(f(measure.sample_array(space, rng, n)), dtype=float)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


def _oracle_ok(measure) -> bool:
    return isinstance(measure, DiscreteMeasure) and len(measure) <= orc.MAX_ATOMS


# ---------------------------------------------------------------------------
# checks


def check_winner_law(measure: DiscreteMeasure, phi, space, cfg: TestConfig) -> EstimatorReport:
    """Frequency with which atom 0 absorbs atom 1 in a two-atom chain."""
    if len(measure) != 2:
        raise ValueError("the winner check uses a two-atom measure")
    ens = ensemble(measure, phi, space, cfg, "winner")
    wins = (ens.final_owner[:, 1] == 0).astype(float)
    return point_report("winner_law", wins, measure.masses[0], cfg.sigma)


def check_martingale(measure, f, t, cfg, space, phi, N: int = 512) -> EstimatorReport:
    target, target_se = reference_mean(measure, f, space, child_rng(cfg.base_seed, "martingale", "ref"))
    if isinstance(measure, DiscreteMeasure):
        if _oracle_ok(measure):
            exact = orc.moment_of_f(orc.oracle_for(measure, space, phi), t, f, space, 1)
            if abs(exact - target) > 1e-8:
                raise orc.OracleInconsistency(f"oracle mean {exact} vs {target}")
        fv = np.asarray(f(measure.array), dtype=float)
        ens = ensemble(measure, phi, space, cfg, "martingale", times=[t])
        vals = location_masses(ens.owners[0], measure.masses) @ fv
        return point_report("martingale", vals, target, cfg.sigma, details={"path": "coalescent", "t": t})

    def stat(locs, D, P):
        return token_f_values(f, locs, owners_at(D, P, t))

    vals = token_statistic(measure, N, space, phi, cfg, "martingale", stat)
    return point_report("martingale", vals, target, cfg.sigma, target_se, {"path": "tokens", "N": N, "t": t})


def qv_exact(measure: DiscreteMeasure, f, t, space, phi) -> float:
    """``(1/2) sum_{i != j} p_i p_j (1 - exp(-phi(d_ij) t)) (f_i - f_j)^2``."""
    arr = measure.array
    m = measure.masses
    fv = np.asarray(f(arr), dtype=float)
    d = space.cross(arr, arr)
    off = ~np.eye(len(m), dtype=bool)
    with np.errstate(divide="ignore"):
        rates = np.asarray(phi(d[off]), dtype=float)
    w = np.outer(m, m)[off] * -np.expm1(-rates * t) * (fv[:, None] - fv[None, :])[off] ** 2
    return 0.5 * float(w.sum())


def qv_estimate(measure: InitialMeasure, f, t, space, phi, rng, pairs: int = 1_000_000):
    a = measure.sample_array(space, rng, pairs)
    b = measure.sample_array(space, rng, pairs)
    if a.ndim == 1:
        d = np.abs(a - b)
    else:
        d = np.sqrt(np.sum((a - b) ** 2, axis=1))
    with np.errstate(divide="ignore"):
        rates = np.asarray(phi(d), dtype=float)
    vals = 0.5 * -np.expm1(-rates * t) * (np.asarray(f(a)) - np.asarray(f(b))) ** 2
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(pairs))


def check_quadratic_variation(measure, f, t, cfg, space, phi, N: int = 512) -> EstimatorReport:
    """``E(mu_t(f) - mu_0(f))^2`` against the pair integral.

    On the token path the start is ``mu^N_0``, for which the same identity
    holds exactly with the IID-pair integral scaled by ``(N - 1)/N``.
    """
    if isinstance(measure, DiscreteMeasure):
        target = qv_exact(measure, f, t, space, phi)
        fv = np.asarray(f(measure.array), dtype=float)
        start = float(measure.masses @ fv)
        if _oracle_ok(measure):
            o = orc.oracle_for(measure, space, phi)
            pi = orc.transient(o, t)
            exact = float(pi @ (orc.state_values(o, f, space) - start) ** 2)
            if abs(exact - target) > 1e-8:
                raise orc.OracleInconsistency(f"oracle {exact} vs pair sum {target}")
        ens = ensemble(measure, phi, space, cfg, "qv", times=[t])
        vals = (location_masses(ens.owners[0], measure.masses) @ fv - start) ** 2
        return point_report("quadratic_variation", vals, target, cfg.sigma, details={"path": "coalescent", "t": t})

    rhs, rhs_se = qv_estimate(measure, f, t, space, phi, child_rng(cfg.base_seed, "qv", "rhs"))
    scale = (N - 1) / N

    def stat(locs, D, P):
        n0 = np.tile(np.arange(N), (len(D), 1))
        return (token_f_values(f, locs, owners_at(D, P, t)) - token_f_values(f, locs, n0)) ** 2

    vals = token_statistic(measure, N, space, phi, cfg, "qv", stat)
    return point_report(
        "quadratic_variation", vals, scale * rhs, cfg.sigma, scale * rhs_se,
        {"path": "tokens", "N": N, "t": t, "pair_integral": rhs},
    )


def check_pair_moment(measure: DiscreteMeasure, i, j, t, cfg, space, phi) -> EstimatorReport:
    target = orc.pair_moment_closed_form(measure, space, phi, i, j, t)
    details = {"t": t}
    if _oracle_ok(measure):
        details["oracle"] = orc.exact_pair_moment(orc.oracle_for(measure, space, phi), i, j, t, space, phi)
    ens = ensemble(measure, phi, space, cfg, "pair_moment", times=[t])
    lm = location_masses(ens.owners[0], measure.masses)
    return point_report("pair_moment", lm[:, i] * lm[:, j], target, cfg.sigma, details=details)


def sbo_probability(masses: Sequence[float]) -> float:
    """Probability that masses listed first-to-last come out in that size-biased order."""
    m = np.asarray(masses, dtype=float)
    tails = np.cumsum(m[::-1])[::-1]
    return float(np.prod(m / tails))


def first_appearance(measure: DiscreteMeasure, R: int, rng, block: int = 64) -> np.ndarray:
    """Position of the first IID draw landing on each atom, shape ``(R, n)``."""
    n = len(measure)
    pos = np.full((R, n), np.inf)
    offset = 0
    todo = np.arange(R)
    while len(todo):
        draws = measure.sample_indices(rng, len(todo) * block).reshape(len(todo), block)
        for a in range(n):
            hit = draws == a
            first = np.where(hit.any(axis=1), hit.argmax(axis=1) + offset, np.inf)
            pos[todo, a] = np.minimum(pos[todo, a], first)
        offset += block
        todo = todo[~np.all(np.isfinite(pos[todo]), axis=1)]
    return pos


def check_sbo(measure: DiscreteMeasure, ordering: Sequence[int], cfg, space=None, phi=None, t0: float = 0.0) -> EstimatorReport:
    """Lowest-token order of atoms against size-biased ordering.

    At ``t0 = 0`` the estimate is the probability that the first IID tokens
    on the listed atoms appear in the listed order.  For ``t0 > 0`` the
    chain is driven by that order (lower rank wins every meeting) and the
    statistic ``1(listed atoms alive) * (1(order) - SBO(mu_t0))`` must have
    mean 0.
    """
    ordering = list(ordering)
    if len(set(ordering)) != len(ordering):
        raise ValueError("ordering must list distinct atoms")

    if t0 == 0:
        def run(rng, size):
            pos = first_appearance(measure, size, rng)[:, ordering]
            return np.all(np.diff(pos, axis=1) > 0, axis=1).astype(float)

        vals = np.concatenate(map_chunks(run, cfg.replicates, cfg.base_seed, "sbo", threads=cfg.threads))
        return point_report("sbo", vals, sbo_probability(measure.masses[ordering]), cfg.sigma, details={"t0": 0.0})

    def run(rng, size):
        ranks = first_appearance(measure, size, rng)
        ens = simulate_ensemble(measure, phi, space, size, rng, times=[t0], ranks=ranks)
        lm = location_masses(ens.owners[0], measure.masses)[:, ordering]
        alive = np.all(lm > 0, axis=1)
        in_order = np.all(np.diff(ranks[:, ordering], axis=1) > 0, axis=1)
        tails = np.cumsum(lm[:, ::-1], axis=1)[:, ::-1]
        with np.errstate(invalid="ignore", divide="ignore"):
            sbo = np.prod(np.where(alive[:, None], lm / tails, 1.0), axis=1)
        return np.where(alive, in_order - sbo, 0.0)

    vals = np.concatenate(map_chunks(run, cfg.replicates, cfg.base_seed, "sbo_t0", threads=cfg.threads))
    return point_report("sbo", vals, 0.0, cfg.sigma, details={"t0": t0})


def check_kingman_bound(measure: DiscreteMeasure, region, witness, t, cfg, space, phi) -> EstimatorReport:
    """Mean number of atoms alive inside ``region`` at ``t`` against ``2 / (t phi_min)``."""
    pm = _phi_min(space, phi, witness)
    bound = 2.0 / (t * pm)
    inside = np.array([bool(region(loc)) for loc in measure.locations])
    ens = ensemble(measure, phi, space, cfg, ("kingman", float(t)), times=[t])
    alive = ens.owners[0] == np.arange(len(measure))
    counts = (alive & inside).sum(axis=1)
    return upper_report("kingman_bound", counts, bound, cfg.sigma, {"t": t, "phi_min": pm})


def check_coalescence_law(measure: DiscreteMeasure, cfg, space, phi, alpha: float = 1e-3) -> EstimatorReport:
    n = len(measure)
    if _oracle_ok(measure) and n > 1:
        law = absorption_law(orc.oracle_for(measure, space, phi))
        if np.max(np.abs(law - measure.masses)) > 1e-8:
            raise orc.OracleInconsistency(f"oracle absorption law {law} vs masses")
    if n == 1:
        return EstimatorReport("coalescence_law", 0.0, 0.0, 0.0, 0.0, cfg.replicates, True, "gof", 1.0, {"dof": 0})
    ens = ensemble(measure, phi, space, cfg, "coalescence")
    counts = np.bincount(ens.final_owner[:, 0], minlength=n)
    stat, dof, p = chi2_gof(counts, measure.masses)
    return EstimatorReport(
        "coalescence_law", stat, 0.0, float(dof), math.nan, cfg.replicates, bool(p > alpha), "gof", p,
        {"dof": dof, "counts": counts.tolist()},
    )


def absorption_law(oracle) -> np.ndarray:
    """Exact law of the surviving atom from the embedded jump chain.

    States are ordered by decreasing survivor count, so every jump moves
    forward and one sweep propagates the probability mass.
    """
    Q = oracle.Q
    mass = oracle.initial_vector()
    n = oracle.states[0].n
    out = np.zeros(n)
    for k, st in enumerate(oracle.states):
        if st.absorbing:
            out[st.survivors[0]] += mass[k]
            continue
        rates = Q[k].copy()
        rates[k] = 0
        mass += mass[k] * rates / rates.sum()
        mass[k] = 0
    return out


def check_dust(measure, t, N_grid, cfg, space, phi):
    """Mean singleton fraction on prefixes of one large system per replicate.

    Prefix systems are exact restrictions, so one history per replicate
    serves every ``N`` in the grid.
    """
    N_grid = sorted(int(n) for n in N_grid)
    Nmax = N_grid[-1]

    def stat(locs, D, P):
        own = owners_at(D, P, t)
        out = np.empty((len(D), len(N_grid)))
        for k, n in enumerate(N_grid):
            sizes = block_sizes(own[:, :n])
            out[:, k] = (sizes == 1).sum(axis=1) / n
        return out

    vals = token_statistic(measure, Nmax, space, phi, cfg, ("dust", float(t)), stat)
    means = vals.mean(axis=0)
    ses = vals.std(axis=0, ddof=1) / math.sqrt(len(vals))
    rows = []
    ok = True
    for k, n in enumerate(N_grid):
        if k:
            diff = vals[:, k] - vals[:, k - 1]
            pooled = diff.std(ddof=1) / math.sqrt(len(diff))
            if diff.mean() > 2 * pooled:
                ok = False
        rows.append((n, float(means[k]), float(ses[k])))
    return rows, ok


def check_exchangeability(measure, N, t, K, cfg, space, phi):
    """Paired checks of ``P(1~2) = P(2~3)`` and ``P(u_{K+1} = K) = P(u_{K+2} = K)``.

    Tokens are numbered from 1 in the arguments and from 0 internally.
    """

    def stat(locs, D, P):
        own = owners_at(D, P, t)
        a = (own[:, 0] == own[:, 1]).astype(float) - (own[:, 1] == own[:, 2])
        b = (own[:, K] == K - 1).astype(float) - (own[:, K + 1] == K - 1)
        return np.stack([a, b], axis=1)

    vals = token_statistic(measure, N, space, phi, cfg, "exchangeability", stat)
    return (
        point_report("exchangeability_symmetric", vals[:, 0], 0.0, cfg.sigma, details={"N": N, "t": t}),
        point_report("exchangeability_asymmetric", vals[:, 1], 0.0, cfg.sigma, details={"N": N, "t": t, "K": K}),
    )


def check_oracle_equivalence(measure: DiscreteMeasure, t, cfg, space, phi) -> EstimatorReport:
    o = orc.oracle_for(measure, space, phi)
    pi = orc.transient(o, t)
    ens = ensemble(measure, phi, space, cfg, ("oracle_equivalence", float(t)), times=[t])
    codes = state_codes(ens.owners[0])
    lookup = {int(state_codes(np.array(s.owner))): k for k, s in enumerate(o.states)}
    counts = np.zeros(len(o.states))
    for c, n in zip(*np.unique(codes, return_counts=True)):
        counts[lookup[int(c)]] = n
    worst, ok = multinomial_cells(counts, pi, cfg.sigma)
    stat, dof, p = chi2_gof(counts, pi)
    return EstimatorReport(
        "oracle_equivalence", worst, 0.0, cfg.sigma, worst, cfg.replicates, ok, "cells", p,
        {"t": t, "chi2": stat, "dof": dof},
    )


def check_tv_monotonicity(measure, N, M, t0, realizations, cfg, space, phi) -> EstimatorReport:
    """Pathwise ``sup_{t >= t0} d_TV(mu^N_t, mu^M_t) <= d_TV(mu^N_t0, mu^M_t0)`` on prefix pairs."""
    from .tokens import pathwise_tv_check

    def stat(locs, D, P):
        out = np.empty((len(D), 2))
        for r in range(len(D)):
            out[r] = pathwise_tv_check(D[r], P[r], N, t0)
        return out

    vals = token_statistic(measure, M, space, phi, cfg, "tv_monotone", stat, replicates=realizations)
    violations = int(np.sum(vals[:, 1] > vals[:, 0]))
    return EstimatorReport(
        "tv_monotonicity", float(violations), 0.0, 0.0, 0.0, realizations, violations == 0, "exact", None,
        {"N": N, "M": M, "t0": t0, "mean_tv_t0": float(np.mean(vals[:, 0]) / (2 * N * M))},
    )


# ---------------------------------------------------------------------------
# export


def reports_to_json(reports: Sequence[EstimatorReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=2, default=_jsonable)


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "pass" if x else "fail"
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def reports_to_csv(reports: Sequence[EstimatorReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "estimate", "stderr", "target", "z", "verdict"])
        for r in reports:
            w.writerow([r.check, fmt(r.estimate), fmt(r.stderr), fmt(r.target), fmt(r.z), fmt(r.verdict)])
