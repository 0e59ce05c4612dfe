"""Two-stage TD-SWIPT system model: SINRs, rates, energy, and feasibility.

Stage 1: direct transmission while the RIS harvests.  Stage 2: transmission
assisted by the reflecting (amplifying) RIS.  All evaluation here uses the
actual (estimate + error) channels carried by a Realization; the optimizer
only ever sees sample averages of these quantities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, Realization

LN2 = float(np.log(2.0))


@dataclass
class PowerModel:
    """Amplifier/energy bookkeeping of the active RIS plus noise powers (watts)."""

    p_max: float
    eta1: float
    xi: float
    p_dc: float
    p_sc: float
    a_max: float
    sigma1_sq: float
    sigma2_sq: float
    sigma_r_sq: float

    def __post_init__(self):
        if not (0 < self.eta1 <= 1):
            raise ValueError("eta1 must lie in (0, 1]")
        if self.xi < 1:
            raise ValueError("xi must be >= 1")
        if self.a_max < 1:
            raise ValueError("a_max must be >= 1")
        for name in ("p_max", "p_dc", "p_sc", "sigma1_sq", "sigma2_sq", "sigma_r_sq"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SolverState:
    """Current iterates of the alternating optimization."""

    tau: float
    w1: np.ndarray      # (K, N)
    w2: np.ndarray      # (K, N)
    theta: np.ndarray   # (M,)
    omega1: np.ndarray = None
    nu1: np.ndarray = None
    omega2: np.ndarray = None
    nu2: np.ndarray = None
    iteration: int = 0

    def copy(self) -> "SolverState":
        return SolverState(
            tau=self.tau, w1=self.w1.copy(), w2=self.w2.copy(), theta=self.theta.copy(),
            omega1=None if self.omega1 is None else self.omega1.copy(),
            nu1=None if self.nu1 is None else self.nu1.copy(),
            omega2=None if self.omega2 is None else self.omega2.copy(),
            nu2=None if self.nu2 is None else self.nu2.copy(),
            iteration=self.iteration,
        )


def harvested_energy(w1: np.ndarray, tau: float, g_br: np.ndarray, eta1: float) -> float:
    """Energy collected by the RIS during the harvesting stage:
    tau * eta1 * sum_k ||G_BR w1_k||^2."""
    return float(tau * eta1 * np.sum(np.abs(g_br @ w1.T) ** 2))


def effective_channels(theta: np.ndarray, cs: ChannelSet) -> np.ndarray:
    """(K, N) stage-2 channels h_k = h_BU,k + G_BR^H Theta^H h_RU,k
    (so that h_k^H = h_BU,k^H + h_RU,k^H Theta G_BR)."""
    if theta.size == 0:
        return cs.h_bu.copy()
    casc = (np.conj(theta)[None, :] * cs.h_ru) @ np.conj(cs.g_br)  # (K, M) @ (M, N)
    return cs.h_bu + casc


def jam_interference_stage1(k: int, rlz: Realization) -> float:
    """Z_1,k: jamming plus co-channel interference power at UE k, stage 1."""
    z = 0.0
    for iq in range(rlz.h_ju.shape[0]):
        z += abs(np.vdot(rlz.h_ju[iq, k], rlz.z_j[iq, k])) ** 2
    for ib in range(rlz.h_iu.shape[0]):
        z += abs(np.vdot(rlz.h_iu[ib, k], rlz.z_i[ib, k])) ** 2
    return z


def jam_interference_stage2(k: int, theta: np.ndarray, rlz: Realization, cs: ChannelSet) -> float:
    """Z_2,k with the jammer paths bounced through the RIS:
    h_J,qk = h_JU,qk + G_JR,q^H Theta^H h_RU,k."""
    z = 0.0
    for iq in range(rlz.h_ju.shape[0]):
        h_eff = rlz.h_ju[iq, k]
        if theta.size:
            h_eff = h_eff + rlz.g_jr[iq].conj().T @ (np.conj(theta) * cs.h_ru[k])
        z += abs(np.vdot(h_eff, rlz.z_j[iq, k])) ** 2
    for ib in range(rlz.h_iu.shape[0]):
        z += abs(np.vdot(rlz.h_iu[ib, k], rlz.z_i[ib, k])) ** 2
    return z


def stage1_sinr(k: int, w1: np.ndarray, rlz: Realization, cs: ChannelSet, sigma1_sq: float) -> float:
    """Received SINR of UE k during the harvesting stage."""
    gains = np.abs(cs.h_bu[k].conj() @ w1.T) ** 2  # |h_k^H w_j|^2 over j
    signal = gains[k]
    interf = float(np.sum(gains)) - signal
    return signal / (interf + jam_interference_stage1(k, rlz) + sigma1_sq)


def stage2_sinr(k: int, w2: np.ndarray, theta: np.ndarray, rlz: Realization, cs: ChannelSet,
                sigma2_sq: float, sigma_r_sq: float) -> float:
    """Received SINR of UE k during the reflection stage, including the
    amplified RIS noise term sigma_R^2 ||h_RU,k^H Theta||^2."""
    h_eff = effective_channels(theta, cs)
    gains = np.abs(h_eff[k].conj() @ w2.T) ** 2
    signal = gains[k]
    interf = float(np.sum(gains)) - signal
    ris_noise = sigma_r_sq * float(np.sum(np.abs(cs.h_ru[k]) ** 2 * np.abs(theta) ** 2)) if theta.size else 0.0
    denom = interf + ris_noise + jam_interference_stage2(k, theta, rlz, cs) + sigma2_sq
    return signal / denom


def sum_rate_nats(tau: float, w1: np.ndarray, w2: np.ndarray, theta: np.ndarray,
                  realizations, cs: ChannelSet, sigma1_sq: float, sigma2_sq: float,
                  sigma_r_sq: float) -> float:
    """Sample-average sum rate in nats per channel use over the given draws."""
    k_users = cs.n_users
    h_eff = effective_channels(theta, cs)
    e1 = cs.h_bu.conj() @ w1.T  # (K, K): e1[k, j] = h_k^H w1_j
    e2 = h_eff.conj() @ w2.T
    g1 = np.abs(e1) ** 2
    g2 = np.abs(e2) ** 2
    sig1 = np.diag(g1)
    sig2 = np.diag(g2)
    int1 = g1.sum(axis=1) - sig1
    int2 = g2.sum(axis=1) - sig2
    if theta.size:
        ris_noise = sigma_r_sq * np.sum(np.abs(cs.h_ru) ** 2 * np.abs(theta)[None, :] ** 2, axis=1)
    else:
        ris_noise = np.zeros(k_users)
    total = 0.0
    for rlz in realizations:
        for k in range(k_users):
            z1 = jam_interference_stage1(k, rlz)
            z2 = jam_interference_stage2(k, theta, rlz, cs)
            r1 = np.log1p(sig1[k] / (int1[k] + z1 + sigma1_sq))
            r2 = np.log1p(sig2[k] / (int2[k] + ris_noise[k] + z2 + sigma2_sq))
            total += tau * r1 + (1.0 - tau) * r2
    return total / len(realizations)


def sum_rate(tau, w1, w2, theta, realizations, cs, sigma1_sq, sigma2_sq, sigma_r_sq) -> float:
    """Sample-average achievable rate in bits per channel use (unit period)."""
    return sum_rate_nats(tau, w1, w2, theta, realizations, cs,
                         sigma1_sq, sigma2_sq, sigma_r_sq) / LN2


def ris_power(w2: np.ndarray, theta: np.ndarray, g_br: np.ndarray, pm: PowerModel) -> float:
    """Total RIS power draw during reflection:
    xi * (sum_k ||Theta G_BR w2_k||^2 + sigma_R^2 sum_m |theta_m|^2) + M (P_dc + P_sc)."""
    m = theta.size
    if m == 0:
        return 0.0
    incident = g_br @ w2.T  # (M, K)
    amp_out = float(np.sum(np.abs(theta[:, None] * incident) ** 2))
    amp_noise = pm.sigma_r_sq * float(np.sum(np.abs(theta) ** 2))
    return pm.xi * (amp_out + amp_noise) + m * (pm.p_dc + pm.p_sc)


@dataclass
class FeasibilityReport:
    """Constraint slacks (nonnegative = satisfied) and per-constraint flags."""

    power1_slack: float
    power2_slack: float
    energy_slack: float
    amplitude_slack: float
    tol: float = 1e-8
    checks: dict = field(default_factory=dict)

    def __post_init__(self):
        self.checks = {
            "power_stage1": self.power1_slack >= -self.tol,
            "power_stage2": self.power2_slack >= -self.tol,
            "energy_supply": self.energy_slack >= -self.tol,
            "amplitude": self.amplitude_slack >= -self.tol,
        }

    @property
    def all_ok(self) -> bool:
        return all(self.checks.values())


def check_feasibility(state: SolverState, cs: ChannelSet, pm: PowerModel,
                      tol: float = 1e-8) -> FeasibilityReport:
    """Slacks for both transmit-power caps, the energy-supply inequality, and
    the per-element amplitude bound."""
    p1 = float(np.sum(np.abs(state.w1) ** 2))
    p2 = float(np.sum(np.abs(state.w2) ** 2))
    e_r = harvested_energy(state.w1, state.tau, cs.g_br, pm.eta1)
    p_r = ris_power(state.w2, state.theta, cs.g_br, pm)
    amp = float(np.max(np.abs(state.theta))) if state.theta.size else 0.0
    return FeasibilityReport(
        power1_slack=pm.p_max - p1,
        power2_slack=pm.p_max - p2,
        energy_slack=e_r - (1.0 - state.tau) * p_r,
        amplitude_slack=pm.a_max - amp,
        tol=tol,
    )
