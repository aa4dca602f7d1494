"""Experiment drivers shared by the CLI and the acceptance suite."""
from __future__ import annotations

import multiprocessing as mp
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import oracle as orc
from ..empirical import generator_action, pair_empirical
from ..pde import PdeSolution, SolverConfig, cell_average_bins, solve, weak_residual_dirichlet, \
    weak_residual_robin
from ..simulator import DynkinTables, EnsembleResult, RateTable, simulate_ensemble
from ..species import ModelParams, RegimeSpec
from ..testfns import TestFunction, dirichlet_family, robin_family
from .config import ConfigError, ExperimentConfig

__all__ = [
    "initial_profile",
    "run_ensemble",
    "comparison_error",
    "ComparisonRow",
    "hydro_trend",
    "run_pde",
    "residual_rows",
    "oracle_suite",
    "mc_vs_exact",
    "expansion_check",
]


# ---------------------------------------------------------------------------
# initial profiles


def initial_profile(cfg: ExperimentConfig) -> Callable[[np.ndarray], np.ndarray]:
    v = cfg.values
    left = np.asarray(v["model.left"], float)
    right = np.asarray(v["model.right"], float)
    preset = v["initial.preset"]
    if preset == "constant":
        c = np.asarray(v["initial.value"], float)
        return lambda u: np.repeat(c[:, None], np.size(u), axis=1)
    if preset == "linear":
        return lambda u: np.outer(left, 1 - np.asarray(u)) + np.outer(right, np.asarray(u))
    if preset == "step":
        u0 = float(v["initial.u0"])
        return lambda u: np.where(np.asarray(u)[None, :] < u0, left[:, None], right[:, None])
    # bump: constant triple with mass moved from E to A in the middle
    c = np.asarray(v["initial.value"], float)
    amp = float(v["initial.amplitude"])
    if amp < 0 or amp > min(c[0], 1 - c[0], c[2]):
        raise ConfigError("initial.amplitude too large for initial.value")
    shift = np.array([1.0, 0.0, -1.0])
    return lambda u: c[:, None] + amp * np.outer(shift, np.sin(np.pi * np.asarray(u)))


# ---------------------------------------------------------------------------
# replica fan-out


def _worker(args):
    return simulate_ensemble(*args)


def run_ensemble(params: ModelParams, profile, t_end: float, times, base_seed: int,
                 replicas: int, jobs: int = 1, rates: RateTable | None = None,
                 dynkin: DynkinTables | None = None) -> EnsembleResult:
    """Replicas ``0..replicas-1``, optionally split across ``jobs`` processes.

    The result is independent of ``jobs``: every replica draws from its own
    seeded stream and the pieces are merged in replica order.
    """
    if callable(profile):
        profile = np.asarray(profile(np.arange(1, params.N) / params.N), float)
    ids = np.arange(replicas)
    if jobs <= 1 or replicas < 2:
        return simulate_ensemble(params, profile, t_end, times, base_seed, ids, rates, dynkin)
    chunks = [c for c in np.array_split(ids, min(jobs, replicas)) if c.size]
    args = [(params, profile, t_end, times, base_seed, c, rates, dynkin) for c in chunks]
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    with ctx.Pool(len(chunks)) as pool:
        parts = pool.map(_worker, args)
    return EnsembleResult.concatenate(parts)


# ---------------------------------------------------------------------------
# particle vs PDE comparison


def _site_edges(N: int) -> np.ndarray:
    """Cells of the piecewise-constant empirical profile, widened to cover [0, 1]."""
    e = (np.arange(1, N) + 0.5) / N
    e[-1] = 1.0
    return np.concatenate([[0.0], e])


def _pde_at(sol: PdeSolution, t: float) -> np.ndarray:
    return sol.at(t)


def comparison_error(ens: EnsembleResult, k: int, sol: PdeSolution, norm: str = "L1",
                     bins: int | None = 16, phis: list[TestFunction] | None = None
                     ) -> tuple[float, float]:
    """Distance between the replica-mean profile at snapshot ``k`` and the PDE solution.

    ``L1`` / ``L2`` compare averages over ``bins`` equal subintervals of
    [0, 1] (exact integrals of the two piecewise-constant profiles); with
    ``bins=None`` the comparison is site by site at ``x/N`` instead.  The
    ``sup-pairing`` norm is ``max_phi max_a |<pi, phi> - int phi rho|`` over
    the preset test functions.  Returns ``(error, stderr)``, the latter from
    the replica spread by the delta method.
    """
    t = float(ens.times[k])
    rho = _pde_at(sol, t)
    N = ens.params.N
    R = ens.replicas
    ind = np.stack([(ens.snapshots[:, k, :] == s) for s in range(3)], axis=1).astype(float)
    if norm == "sup-pairing":
        phis = phis or (dirichlet_family() + robin_family())
        u_sites = np.arange(1, N) / N
        best, best_se = -1.0, 0.0
        for phi in phis:
            w = phi.phi(t, u_sites) / N
            emp = ind @ w  # (R, 3)
            ref = rho @ phi.phi(t, sol.grid.centers) * sol.grid.h
            diff = np.abs(emp.mean(axis=0) - ref)
            a = int(np.argmax(diff))
            if diff[a] > best:
                best = float(diff[a])
                best_se = float(emp[:, a].std(ddof=1) / np.sqrt(R)) if R > 1 else 0.0
        return best, best_se
    if bins:
        emp = cell_average_bins(ind, _site_edges(N), bins)  # (R, 3, B)
        ref = cell_average_bins(rho, sol.grid.faces, bins)
        weight = 1.0 / bins
    else:
        emp = ind
        u_sites = np.arange(1, N) / N
        ref = np.stack([np.interp(u_sites, sol.grid.centers, rho[s]) for s in range(3)])
        weight = 1.0 / N
    mean = emp.mean(axis=0)
    se = emp.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.zeros_like(mean)
    diff = mean - ref
    if norm == "L1":
        err = weight * np.abs(diff).sum()
        err_se = weight * np.sqrt(np.sum(se ** 2))
    elif norm == "L2":
        err = np.sqrt(weight * np.sum(diff ** 2))
        err_se = weight * np.sqrt(np.sum((diff * se) ** 2)) / max(err, 1e-300)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return float(err), float(err_se)


@dataclass(frozen=True)
class ComparisonRow:
    N: int
    R: int
    t: float
    norm: str
    error: float
    stderr: float


def run_pde(cfg: ExperimentConfig, M: int | None = None) -> PdeSolution:
    params = cfg.params(cfg.N_list[0])
    times = tuple(cfg.pde_times)
    conf = SolverConfig(int(M or cfg["pde.M"]), float(cfg["sim.t_end"]), times,
                        float(cfg["pde.safety"]))
    return solve(initial_profile(cfg), params, cfg.regime(), conf)


def hydro_trend(cfg: ExperimentConfig, jobs: int = 1, sol: PdeSolution | None = None,
                ensembles: dict | None = None) -> list[ComparisonRow]:
    """Comparison rows for every N in ``sim.N`` and every snapshot time > 0.

    Pass a dict as ``ensembles`` to receive the simulated ensembles keyed by N.
    """
    sol = sol or run_pde(cfg)
    profile = initial_profile(cfg)
    norm = cfg["compare.norm"]
    bins = int(cfg["compare.bins"]) or None
    rows = []
    for N in cfg.N_list:
        params = cfg.params(N)
        ens = run_ensemble(params, profile, float(cfg["sim.t_end"]), cfg.sim_times,
                           int(cfg["sim.seed"]), int(cfg["sim.replicas"]), jobs)
        if ensembles is not None:
            ensembles[N] = ens
        for k, t in enumerate(ens.times):
            if t <= 0:
                continue
            if not np.any(np.abs(sol.times - t) < 1e-12):
                raise ConfigError(f"time {t} missing from the PDE output times")
            err, se = comparison_error(ens, k, sol, norm, bins)
            rows.append(ComparisonRow(N, ens.replicas, float(t), norm, err, se))
    return rows


# ---------------------------------------------------------------------------
# weak residuals


def residual_rows(sol: PdeSolution, regime: RegimeSpec | None = None) -> list[tuple[str, float, float]]:
    """``(phi name, t, max_a |residual|)`` for every output time and preset."""
    regime = regime or sol.regime
    rows = []
    fam = dirichlet_family() if regime.is_dirichlet else robin_family()
    for t in sol.times:
        for phi in fam:
            res = (weak_residual_dirichlet(sol, phi, t) if regime.is_dirichlet
                   else weak_residual_robin(sol, phi, t, regime))
            rows.append((phi.label(), float(t), float(np.max(np.abs(res)))))
    return rows


# ---------------------------------------------------------------------------
# oracle suite


def expansion_check(params: ModelParams, rng: np.random.Generator, trials: int = 200
                    ) -> orc.IdentityReport:
    """Generator expansion against brute-force event sums on the full generator."""
    from ..testfns import bump, cosine
    gen = orc.build_generator(params)
    states = gen.space.all_states()
    N = params.N
    worst = 0.0
    for k in range(trials):
        if k % 2:
            phi = cosine(rng.uniform(0.5, 3.0), rng.uniform(0, np.pi), offset=rng.uniform(-1, 1))
        else:
            a = rng.uniform(0.02, 0.4)
            phi = bump(a, rng.uniform(a + 0.3, 0.98), rng.normal(size=3))
        alpha = int(rng.integers(3))
        i = int(rng.integers(gen.space.size))
        obs = np.array([pair_empirical(s, phi, alpha) for s in states])
        direct = N * N * float(gen.Q[i] @ obs)
        expanded = generator_action(states[i], phi, alpha, params)
        worst = max(worst, abs(direct - expanded) / max(abs(direct), 1.0))
    return orc.IdentityReport("generator_expansion", worst, 1e-10, {"trials": trials})


def mc_vs_exact(params: ModelParams, times, replicas: int, seed: int,
                rates: RateTable | None = None, initial=None) -> tuple[orc.IdentityReport, list]:
    """z-scores of simulated site occupations against the exact transient law."""
    gen = orc.build_generator(params)
    space = gen.space
    L = params.N - 1
    if initial is None:
        initial = np.array([i % 3 for i in range(L)], dtype=np.int8)
    p0 = np.zeros(space.size)
    p0[space.encode(initial)] = 1.0
    ens = simulate_ensemble(params, initial, max(times), list(times), seed, replicas, rates)
    rows = []
    worst = 0.0
    for k, t in enumerate(ens.times):
        for site in range(1, L + 1):
            for a in range(3):
                exact = orc.exact_expectation(gen, p0, space.indicator(site, a), t)
                x = ens.snapshots[:, k, site - 1] == a
                mean = float(x.mean())
                se = float(x.std(ddof=1) / np.sqrt(replicas))
                # an exact zero-variance match is a pass; otherwise a zero stderr is a miss
                z = 0.0 if abs(mean - exact) < 1e-12 else abs(mean - exact) / max(se, 1e-300)
                rows.append((float(t), site, a, exact, mean, se, z))
                worst = max(worst, z)
    return orc.IdentityReport(f"mc_vs_exact_N{params.N}", worst, 3.0,
                              {"replicas": replicas}), rows


def oracle_suite(cfg: ExperimentConfig, rates_factory=None) -> list[orc.IdentityReport]:
    """All oracle identities at the configured small N.

    ``rates_factory(params) -> RateTable`` replaces the simulator/generator
    rates (negative controls inject a faulty table here).
    """
    rng = np.random.default_rng(int(cfg["oracle.seed"]))
    N = int(cfg["oracle.N"])
    params = cfg.params(N)
    rates = rates_factory(params) if rates_factory else None
    reports = []
    gen = orc.build_generator(params, rates=rates)
    reports.append(orc.IdentityReport("generator_row_sums", gen.max_row_sum(), 1e-12))
    reports.append(orc.IdentityReport("generator_offdiag_nonnegative",
                                      max(0.0, -gen.min_offdiag()), 0.0))
    left, right = params.left.as_tuple(), params.right.as_tuple()
    middle = rng.dirichlet(np.ones(3), size=N - 3) * 0.9 + 0.1 / 3
    nu = orc.ProductMeasure(np.vstack([left, middle, right]))
    pairs = int(cfg["oracle.pairs"])
    for side in ("left", "right"):
        reports.append(orc.adjoint_identity(params, nu, side, rng, pairs, rates))
    if N <= 6:
        p = nu.probabilities(gen.space)
        f = rng.exponential(size=gen.space.size)
        f /= np.sum(p * f)
        reports.extend(orc.dirichlet_form_identity(params, nu, f))
    # entropy bound against a product measure with minimum marginal r0
    worst = -np.inf
    r0 = float(nu.marginals.min())
    for _ in range(pairs):
        mu = rng.dirichlet(np.full(gen.space.size, 0.3))
        worst = max(worst, orc.relative_entropy(mu, nu) - (N - 1) * np.log(1 / r0))
    reports.append(orc.IdentityReport("entropy_bound", max(worst, 0.0), 0.0))
    reports.append(expansion_check(params, rng, 200))
    mc_params = cfg.params(int(cfg["oracle.mc_N"]))
    mc_rates = rates_factory(mc_params) if rates_factory else None
    rep, _ = mc_vs_exact(mc_params, (0.05, 0.2), int(cfg["oracle.mc_replicas"]),
                         int(cfg["oracle.seed"]), mc_rates)
    reports.append(rep)
    return reports
