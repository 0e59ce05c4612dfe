"""Trial and sweep execution with Monte-Carlo averaging and CSV emission.

A trial samples one ChannelSet, runs the requested scheme's optimizer, and
scores the final state on a fresh held-out batch of realizations so reported
rates are not biased by the optimization draws.  Trials are paired: every
scheme at a given (config, trial index) consumes identical channel draws.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import optimizer, system
from .channel import sample_static_channels, sample_uncertain_realization
from .config import ParseError, ScenarioConfig, ValidationError, load_scenario  # noqa: F401 (re-exported)
from .optimizer import AoReport, SaaStats, initial_state, ssca_ao, update_aux_stage2
from .system import LN2, SolverState

SCHEMES = ("active-harvesting", "passive-ris", "no-ris")
SWEEP_AXES = ("M", "e_mse", "P_max", "alpha_r", "B", "iterations")


class UnknownAxis(Exception):
    """Sweep axis outside the supported set."""


def _trial_seeds(cfg: ScenarioConfig, trial_index: int):
    """Independent streams for channels, optimization draws, and held-out
    evaluation, all derived from (master seed, trial index) and shared by
    every scheme so trials stay paired."""
    root = np.random.SeedSequence(entropy=(int(cfg.seed), int(trial_index)))
    return root.spawn(3)


def _baseline_loop(cs, pm, cfg, rng, unit_modulus: bool):
    """Shared AO loop of both baselines: full-period reflection-stage rate
    (tau = 0), no harvesting, no energy constraints.

    unit_modulus=True keeps an RIS with amplitudes pinned to one (passive);
    False removes the RIS entirely (theta = 0)."""
    k = cs.n_users
    m = cs.m_elements if unit_modulus else 0
    norms = np.linalg.norm(cs.h_bu, axis=1)
    w = np.sqrt(pm.p_max / k) * cs.h_bu / norms[:, None]
    if m:
        g_h = cs.g_br @ cs.h_bu[0]
        theta = np.exp(-1j * np.angle(np.conj(cs.h_ru[0]) * g_h))
    else:
        theta = np.zeros(0, dtype=complex)
    stats = SaaStats.empty(cs.n_jammers, k, m)
    cs_eval = cs if unit_modulus else _without_ris(cs)
    realizations = []
    report = AoReport(timings={})
    state = SolverState(tau=0.0, w1=w.copy(), w2=w.copy(), theta=theta)
    best_state = state.copy()
    prev_v = None
    flat_streak = 0
    for r in range(1, cfg.r_max + 1):
        sub = np.random.default_rng(rng.spawn(1)[0])
        rlz = sample_uncertain_realization(cs, cfg.e_mse, cfg, sub, index=r)
        if not unit_modulus:
            rlz = _without_ris_rlz(rlz)
        realizations.append(rlz)
        optimizer.update_saa_stats(stats, rlz, cs_eval)
        v = system.sum_rate_nats(0.0, state.w1, state.w2, state.theta, realizations,
                                 cs_eval, pm.sigma1_sq, pm.sigma2_sq, pm.sigma_r_sq)
        report.objective_nats.append(v)
        report.objective_bits.append(v / LN2)
        report.iterations = r
        if v > report.best_objective_nats:
            report.best_objective_nats = v
            best_state = state.copy()
        if prev_v is not None and abs(v - prev_v) < cfg.varsigma * max(abs(v), 1e-12):
            flat_streak += 1
        else:
            flat_streak = 0
        if r > 5 and flat_streak >= 2:
            report.converged = True
            break
        prev_v = v

        state.omega2, state.nu2 = update_aux_stage2(state.w2, state.theta, cs_eval, stats,
                                                    pm.sigma_r_sq, pm.sigma2_sq)
        h_eff = system.effective_channels(state.theta, cs_eval)
        prob = optimizer._beam_problem(h_eff, state.omega2, state.nu2, pm.p_max)
        state.w2 = optimizer.solve_concave_qcqp(prob, tol=1e-9).reshape(k, -1)
        state.w1 = state.w2
        if m:
            gamma, lam = optimizer.theta_quadratic_model(state, cs_eval, stats, pm.sigma_r_sq)
            prob_t = optimizer.QcqpProblem(quad=gamma, lin=lam, constraints=[],
                                           caps=np.ones(m))
            raw = optimizer.solve_concave_qcqp(prob_t, tol=1e-8)
            mag = np.abs(raw)
            state.theta = np.where(mag > 0, raw / np.where(mag > 0, mag, 1.0), 1.0 + 0j)
        state.iteration = r
    report.state = best_state
    # baselines carry no energy-supply constraint (no harvesting stage, no
    # amplification draw), so the report checks powers and amplitude only
    full = system.check_feasibility(best_state, cs_eval, pm)
    report.feasibility = system.FeasibilityReport(
        power1_slack=full.power1_slack, power2_slack=full.power2_slack,
        energy_slack=0.0, amplitude_slack=full.amplitude_slack, tol=full.tol,
    )
    return report


def _without_ris(cs):
    """ChannelSet view with zero reflecting elements."""
    m0 = 0
    return replace(
        cs,
        g_br=np.zeros((m0, cs.n_antennas), dtype=complex),
        h_ru=np.zeros((cs.n_users, m0), dtype=complex),
        g_jr_est=np.zeros((cs.n_jammers, m0, cs.h_ju_est.shape[2]), dtype=complex),
    )


def _without_ris_rlz(rlz):
    return replace(rlz, g_jr=np.zeros((rlz.g_jr.shape[0], 0, rlz.g_jr.shape[2]), dtype=complex))


def baseline_passive(cs, cfg, rng) -> AoReport:
    """Conventional passive-RIS AO: unit-modulus reflection (amplitudes fixed
    at one), full period for data, no harvesting or RIS power draw."""
    return _baseline_loop(cs, cfg.power_model(), cfg, rng, unit_modulus=True)


def baseline_noris(cs, cfg, rng) -> AoReport:
    """Transmit beamforming without any RIS against the SAA-averaged jamming
    and interference."""
    return _baseline_loop(cs, cfg.power_model(), cfg, rng, unit_modulus=False)


@dataclass
class TrialResult:
    scheme: str
    trial_index: int
    rate_bits: float        # held-out evaluation
    objective_bits: float   # training objective at the reported state
    feasible: bool
    converged: bool
    iterations: int


def run_trial(cfg: ScenarioConfig, scheme: str, trial_index: int) -> TrialResult:
    """One seeded trial: sample channels, optimize, score on held-out draws."""
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    ss_chan, ss_opt, ss_eval = _trial_seeds(cfg, trial_index)
    cs = sample_static_channels(cfg.geometry(), cfg, np.random.default_rng(ss_chan))
    pm = cfg.power_model()
    try:
        if scheme == "active-harvesting":
            report = ssca_ao(cs, pm, cfg, ss_opt)
            cs_eval, tau = cs, report.state.tau
        elif scheme == "passive-ris":
            report = baseline_passive(cs, cfg, ss_opt)
            cs_eval, tau = cs, 0.0
        else:
            report = baseline_noris(cs, cfg, ss_opt)
            cs_eval, tau = _without_ris(cs), 0.0
    except optimizer.EnergyInfeasible as exc:
        raise optimizer.EnergyInfeasible(
            f"trial {trial_index}: {exc}", iteration=exc.iteration, best_state=exc.best_state
        ) from exc
    rng_eval = np.random.default_rng(ss_eval)
    heldout = [
        sample_uncertain_realization(cs, cfg.e_mse, cfg, rng_eval, index=i + 1)
        for i in range(cfg.heldout)
    ]
    if scheme == "no-ris":
        heldout = [_without_ris_rlz(r) for r in heldout]
    st = report.state
    rate = system.sum_rate(tau, st.w1, st.w2, st.theta, heldout, cs_eval,
                           pm.sigma1_sq, pm.sigma2_sq, pm.sigma_r_sq)
    return TrialResult(
        scheme=scheme, trial_index=trial_index, rate_bits=rate,
        objective_bits=report.best_objective_bits,
        feasible=report.feasibility.all_ok, converged=report.converged,
        iterations=report.iterations,
    )


def _apply_axis(cfg: ScenarioConfig, axis: str, value: float) -> ScenarioConfig:
    if axis == "M":
        return replace(cfg, m=int(value))
    if axis == "e_mse":
        return replace(cfg, e_mse=float(value))
    if axis == "P_max":
        return replace(cfg, p_max_dbm=float(value))
    if axis == "alpha_r":
        return replace(cfg, alpha_br=float(value), alpha_ru=float(value))
    if axis == "B":
        return replace(cfg, b=int(value))
    raise UnknownAxis(f"axis must be one of {SWEEP_AXES}, got {axis!r}")


@dataclass
class SweepResult:
    axis: str
    values: list
    schemes: list
    mean_rate: dict = field(default_factory=dict)      # (value, scheme) -> mean bits
    stderr: dict = field(default_factory=dict)
    mean_objective: dict = field(default_factory=dict)
    trials: int = 0
    seed: int = 0
    wall_clock: dict = field(default_factory=dict)     # value -> seconds

    def rows(self):
        for value in self.values:
            for scheme in self.schemes:
                key = (value, scheme)
                yield (self.axis, value, scheme, self.mean_rate[key], self.stderr[key],
                       self.trials, self.seed, self.mean_objective[key])


CSV_HEADER = "axis,value,scheme,mean_rate_bits,stderr,trials,seed,objective_bits"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.6g}"


def write_csv(result: SweepResult, path: str):
    lines = [CSV_HEADER]
    for row in result.rows():
        lines.append(",".join(_fmt(v) if not isinstance(v, str) else v for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _run_point(args):
    cfg, scheme, idx = args
    return run_trial(cfg, scheme, idx)


def run_sweep(cfg: ScenarioConfig, axis: str, values, schemes=SCHEMES, jobs: int = 1,
              out: str | None = None) -> SweepResult:
    """Paired Monte-Carlo sweep over one axis; optionally writes the CSV.

    Trials may execute in separate processes (jobs > 1); results are merged
    by trial index so the output is deterministic either way.
    """
    if isinstance(schemes, str):
        schemes = [schemes]
    schemes = list(schemes)
    for s in schemes:
        if s not in SCHEMES:
            raise ValueError(f"unknown scheme {s!r}")
    if axis == "iterations":
        return _iteration_trace(cfg, schemes, out)
    if axis not in SWEEP_AXES:
        raise UnknownAxis(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    result = SweepResult(axis=axis, values=values, schemes=schemes,
                         trials=cfg.trials, seed=cfg.seed)
    for value in values:
        cfg_v = _apply_axis(cfg, axis, value)
        t0 = time.perf_counter()
        tasks = [(cfg_v, scheme, idx) for scheme in schemes for idx in range(cfg.trials)]
        if jobs and jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                outputs = list(pool.map(_run_point, tasks, chunksize=4))
        else:
            outputs = [_run_point(t) for t in tasks]
        by_scheme = {s: sorted((r for r in outputs if r.scheme == s), key=lambda r: r.trial_index)
                     for s in schemes}
        for scheme in schemes:
            rates = np.array([r.rate_bits for r in by_scheme[scheme]])
            objs = np.array([r.objective_bits for r in by_scheme[scheme]])
            key = (value, scheme)
            result.mean_rate[key] = float(rates.mean())
            result.stderr[key] = float(rates.std(ddof=1) / np.sqrt(rates.size)) if rates.size > 1 else 0.0
            result.mean_objective[key] = float(objs.mean())
        result.wall_clock[value] = time.perf_counter() - t0
    if out:
        write_csv(result, out)
    return result


def _iteration_trace(cfg: ScenarioConfig, schemes, out):
    """Per-iteration objective trace of a single trial (convergence curve)."""
    traces = {}
    for scheme in schemes:
        ss_chan, ss_opt, _ = _trial_seeds(cfg, 0)
        cs = sample_static_channels(cfg.geometry(), cfg, np.random.default_rng(ss_chan))
        if scheme == "active-harvesting":
            report = ssca_ao(cs, cfg.power_model(), cfg, ss_opt)
        elif scheme == "passive-ris":
            report = baseline_passive(cs, cfg, ss_opt)
        else:
            report = baseline_noris(cs, cfg, ss_opt)
        traces[scheme] = report.objective_bits
    length = max(len(t) for t in traces.values())
    values = list(range(1, length + 1))
    result = SweepResult(axis="iterations", values=values, schemes=list(schemes),
                         trials=1, seed=cfg.seed)
    for r, value in enumerate(values):
        for scheme in schemes:
            t = traces[scheme]
            v = t[min(r, len(t) - 1)]
            result.mean_rate[(value, scheme)] = float(v)
            result.stderr[(value, scheme)] = 0.0
            result.mean_objective[(value, scheme)] = float(v)
    if out:
        write_csv(result, out)
    return result
