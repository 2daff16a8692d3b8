"""The acceptance suite: one function per criterion, each returning reports.

``run_suite`` executes every criterion and builds a deterministic summary
(no timings, sorted keys) so two runs with the same seed serialise to the
same bytes whatever the thread count.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import coupling as cp
from . import experiments as ex
from . import oracle as orc
from .model import Constant, DiscreteMeasure, Euclidean, Interval, InversePower, PiecewiseLinear, UniformBox
from .rng import child_rng
from .stats import (
    EstimatorReport,
    TestConfig,
    check_coalescence_law,
    check_exchangeability,
    check_oracle_equivalence,
    check_pair_moment,
    check_quadratic_variation,
    check_tv_monotonicity,
    check_winner_law,
    point_report,
    upper_report,
)

IDENTITY = PiecewiseLinear(((0.0, 0.0), (1.0, 1.0)))


@dataclass(frozen=True)
class SuiteConfig:
    seed: int = 0
    sigma: float = 4.0
    threads: int = 1
    replicates: int | None = None  # overrides every per-criterion count when set

    def cfg(self, replicates: int) -> TestConfig:
        n = replicates if self.replicates is None else self.replicates
        return TestConfig(replicates=n, base_seed=self.seed, sigma=self.sigma, threads=self.threads)


@dataclass
class CriterionResult:
    number: int
    name: str
    reports: list
    seconds: float = 0.0
    budget: float = math.inf

    @property
    def passed(self) -> bool:
        return all(r.verdict for r in self.reports)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        parts = [
            f"{r.check}: est={r.estimate:.6g} target={r.target:.6g} "
            + (f"p={r.p_value:.3g}" if r.p_value is not None and r.kind == "gof" else f"z={r.z:.3g}")
            for r in self.reports
        ]
        return f"[{tag}] {self.number:2d} {self.name} ({self.seconds:.2f}s / {self.budget:g}s) " + "; ".join(parts)


def _exact(check: str, ok: bool, estimate: float = 0.0, target: float = 0.0, replicates: int = 1, details=None) -> EstimatorReport:
    return EstimatorReport(check, float(estimate), 0.0, float(target), 0.0, replicates, bool(ok), "exact", None, details or {})


# ---------------------------------------------------------------------------
# criteria


def winner_law(sc: SuiteConfig) -> list:
    sp = Interval()
    mu = DiscreteMeasure(sp, [0.0, 1.0], [0.3, 0.7])
    return [check_winner_law(mu, InversePower(1.0), sp, sc.cfg(100_000))]


def coalescence_law(sc: SuiteConfig) -> list:
    sp = Interval()
    mu = DiscreteMeasure(sp, [0.0, 0.3, 0.6, 1.0], [0.1, 0.2, 0.3, 0.4])
    return [check_coalescence_law(mu, sc.cfg(100_000), sp, InversePower(1.0))]


def _two_atoms():
    sp = Interval()
    return sp, DiscreteMeasure(sp, [0.0, 1.0], [0.5, 0.5])


def pair_moment(sc: SuiteConfig) -> list:
    sp, mu = _two_atoms()
    phi = InversePower(1.0)
    rep = check_pair_moment(mu, 0, 1, 1.0, sc.cfg(100_000), sp, phi)
    closed = orc.pair_moment_closed_form(mu, sp, phi, 0, 1, 1.0)
    gap = abs(rep.details["oracle"] - closed)
    return [rep, _exact("pair_moment_oracle", gap <= 1e-8, gap, 1e-8)]


def quadratic_variation(sc: SuiteConfig) -> list:
    sp, mu = _two_atoms()
    return [check_quadratic_variation(mu, IDENTITY, 1.0, sc.cfg(100_000), sp, InversePower(1.0))]


def oracle_equivalence(sc: SuiteConfig) -> list:
    sp = Interval()
    phi = InversePower(1.0)
    mu = DiscreteMeasure(sp, [0.0, 0.3, 1.0], [0.2, 0.3, 0.5])
    out = [check_oracle_equivalence(mu, t, sc.cfg(1_000_000), sp, phi) for t in (0.3, 1.0)]
    o = orc.oracle_for(mu, sp, phi)
    gap = 0.0
    for s, u in ((0.3, 0.7), (0.1, 0.2), (1.0, 2.5)):
        direct = orc.transient(o, s + u)
        composed = orc.transient_from(o, orc.transient(o, s), u)
        gap = max(gap, float(np.max(np.abs(direct - composed))))
    out.append(_exact("semigroup", gap <= 1e-8, gap, 1e-8))
    return out


def kingman_bound(sc: SuiteConfig) -> list:
    """One ensemble snapshotted on the whole grid; the reported line is the tightest t."""
    mu = ex.equal_atoms(50)
    cfg = sc.cfg(10_000)
    res = ex.kingman_sweep(mu, mu.locations, np.round(np.arange(1, 11) / 10, 10), cfg, Interval(), InversePower(1.0))
    cols = {c: res.column(c) for c in res.columns}
    z = [(m - b) / s for m, b, s in zip(cols["mean_count"], cols["bound"], cols["stderr"])]
    k = int(np.argmax(z))
    return [
        EstimatorReport(
            "kingman_bound", cols["mean_count"][k], cols["stderr"][k], cols["bound"][k], z[k], cfg.replicates,
            res.passed, "upper", None, {"t": cols["t"], "mean_count": cols["mean_count"], "bound": cols["bound"]},
        )
    ]


def tv_monotonicity(sc: SuiteConfig) -> list:
    sp = Euclidean(2)
    mu = UniformBox((0.0, 0.0), (1.0, 1.0))
    cfg = sc.cfg(200)
    return [check_tv_monotonicity(mu, 128, 512, 0.2, cfg.replicates, cfg, sp, InversePower(1.0))]


def exponential_coupling(sc: SuiteConfig) -> list:
    cfg = sc.cfg(100_000)
    out = []
    for a, b in ((1.0, 2.0), (1.0, 5.0), (3.0, 3.0)):
        rng = child_rng(sc.seed, "coupling", a, b)
        x, y = cp.couple_exponentials(a, b, rng, size=cfg.replicates)
        target = cp.disagreement_probability(a, b)
        rep = point_report(f"coupling_{a:g}_{b:g}", (x != y).astype(float), target, cfg.sigma)
        if a == b:
            rep = replace(rep, verdict=bool(np.all(x == y)))
        out.append(rep)
    # maximal coupling: disagreement equals the total-variation distance
    for a, b in ((1.0, 2.0), (1.0, 5.0)):
        rng = child_rng(sc.seed, "maximal", a, b)
        x, y = cp.couple_exponentials(a, b, rng, size=cfg.replicates, method="maximal")
        out.append(point_report(f"maximal_{a:g}_{b:g}", (x != y).astype(float), cp.disagreement_probability(a, b, "maximal"), cfg.sigma))
    return out


def good_outcome(sc: SuiteConfig) -> list:
    sp = Interval()
    phi = InversePower(1.0)
    mu = DiscreteMeasure(sp, [0.0, 0.5, 1.0], [0.3, 0.3, 0.4])
    eps = 1e-4
    alpha = eps  # f is 1-Lipschitz, so eps <= delta_f(alpha) = alpha
    delta = eps**2 / 2
    _, plan = cp.split_atoms(mu, [delta, -delta, -delta], sp)
    params = cp.CouplingParams(eps, 0.4, 2.5, 0.002)
    N = 4
    cfg = sc.cfg(1_000)
    rng = child_rng(sc.seed, "good_outcome")
    good = bad_diff = 0
    worst = 0.0
    not_good = np.zeros(cfg.replicates)
    for r in range(cfg.replicates):
        c = cp.build_coupled(plan, N, sp, phi, rng)
        if cp.classify(c, params).good:
            good += 1
            s = cp.sup_diff(c, IDENTITY, params.t_star)
            worst = max(worst, s)
            bad_diff += s > alpha
        else:
            not_good[r] = 1.0
    bound = cp.pgood_bound(mu, N, params, sp, phi)["total"]
    return [
        _exact("good_sup_diff", bad_diff == 0, worst, alpha, cfg.replicates, {"good": good, "violations": int(bad_diff)}),
        upper_report("not_good_vs_bound", not_good, bound, cfg.sigma),
    ]


# reference value for the 2/3 lower bound; the expression itself evaluates
# slightly higher and is reported alongside
STATED_LOWER_BOUND = 0.021416


def bounded_rate(sc: SuiteConfig) -> list:
    cfg = sc.cfg(100_000)
    res = ex.bounded_phi_counterexample(InversePower(1.0), 0.5, 1.0, cfg)
    row = dict(zip(res.columns, res.rows[0]))
    p, se = row["p2_3"], row["stderr_2_3"]
    z = (p - row["oracle_2_3"]) / se
    out = [
        EstimatorReport("bounded_vs_oracle", p, se, row["oracle_2_3"], z, cfg.replicates, bool(abs(z) <= cfg.sigma)),
        _exact("bounded_above_stated_bound", p >= STATED_LOWER_BOUND - cfg.sigma * se, p, STATED_LOWER_BOUND, cfg.replicates,
               {"expression": row["lower_bound_2_3"]}),
        _exact("bounded_law_vs_oracle", bool(res.verdicts["law_matches_oracle"]), p, row["oracle_2_3"], cfg.replicates),
    ]
    const = ex.bounded_phi_counterexample(Constant(1.0), [0.5, 1 / 8, 2**-5, 2**-7, 2**-9], 1.0, sc.cfg(20_000))
    p_min = min(const.column("p2_3"))
    out.append(
        _exact(
            "constant_rate_gap", const.passed, p_min, const.params["liminf_floor"], const.params["replicates"],
            {"feller": const.verdicts["feller"], "limit_2_3": const.rows[0][-1]},
        )
    )
    return out


def sparse_support(sc: SuiteConfig) -> list:
    cfg = sc.cfg(100_000)
    res = ex.sparse_support(ex.inverse_power_rule(3.0), 20, 1.0, cfg)
    row = dict(zip(res.columns, res.rows[0]))
    est, se, bound = row["p_no_meeting"], row["stderr"], row["bound"]
    z = (est - bound) / se
    return [EstimatorReport("sparse_support", est, se, bound, z, cfg.replicates, bool(est >= bound - cfg.sigma * se), "lower",
                            None, {"q_hat": row["q_hat"]})]


def exchangeability(sc: SuiteConfig) -> list:
    sp = Euclidean(2)
    mu = UniformBox((0.0, 0.0), (1.0, 1.0))
    return list(check_exchangeability(mu, 64, 0.5, 2, sc.cfg(10_000), sp, InversePower(1.0)))


def determinism(sc: SuiteConfig) -> list:
    """Same seed, different thread counts: identical serialised reports."""
    probe = [winner_law, coalescence_law]
    blobs = []
    for threads in (1, 3):
        s = replace(sc, threads=threads)
        blobs.append(json.dumps(_clean([r.to_dict() for fn in probe for r in fn(s)]), sort_keys=True))
    return [_exact("thread_invariance", blobs[0] == blobs[1])]


CRITERIA: list = [
    (1, "winner law", winner_law, 5),
    (2, "coalescence law", coalescence_law, 30),
    (3, "pair second moment", pair_moment, 20),
    (4, "quadratic variation", quadratic_variation, 20),
    (5, "oracle equivalence", oracle_equivalence, 60),
    (6, "kingman bound", kingman_bound, 60),
    (7, "pathwise TV monotonicity", tv_monotonicity, 60),
    (8, "exponential coupling", exponential_coupling, 5),
    (9, "good-outcome bound", good_outcome, 60),
    (10, "bounded-rate counterexample", bounded_rate, 60),
    (11, "sparse support", sparse_support, 30),
    (12, "exchangeability", exchangeability, 60),
    (13, "determinism", determinism, 60),
]


def run_criterion(number: int, sc: SuiteConfig) -> CriterionResult:
    for n, name, fn, budget in CRITERIA:
        if n == number:
            t = time.perf_counter()
            reports = fn(sc)
            return CriterionResult(n, name, reports, time.perf_counter() - t, budget)
    raise KeyError(number)


def run_suite(sc: SuiteConfig, only=None, log: Callable[[str], None] | None = None) -> list:
    out = []
    for n, *_ in CRITERIA:
        if only is not None and n not in only:
            continue
        res = run_criterion(n, sc)
        if log is not None:
            log(res.line())
        out.append(res)
    return out


def _clean(x):
    """Plain JSON types; non-finite floats become strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_clean(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def summary(results: list, sc: SuiteConfig) -> dict:
    return _clean({
        "seed": sc.seed,
        "sigma": sc.sigma,
        "replicates_override": sc.replicates,
        "passed": all(r.passed for r in results),
        "criteria": [
            {"number": r.number, "name": r.name, "passed": r.passed, "checks": [rep.to_dict() for rep in r.reports]}
            for r in results
        ],
    })


def summary_json(results: list, sc: SuiteConfig) -> str:
    return json.dumps(summary(results, sc), sort_keys=True, indent=2) + "\n"
