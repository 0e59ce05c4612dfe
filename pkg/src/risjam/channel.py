"""Channel synthesis from scenario geometry.

Links are distance-based path loss times Nakagami-m small-scale fading with
uniform phases.  User positions follow the random-waypoint (RWP) stationary
distance law; jammer/interferer channels are known only through estimates,
and per-realization draws add circular-Gaussian estimation errors plus fresh
isotropic transmit vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Generator
from scipy.special import gammainc, gammaln

REF_DISTANCE = 1.0  # meters


class BadDistance(Exception):
    """Distance below the 1 m path-loss reference."""


class BadParams(Exception):
    """RWP/Nakagami parameter invariants violated."""


def path_loss_linear(d: float, alpha_pl: float, zeta0_db: float) -> float:
    """Linear power gain 10^(-PL/10) with PL = zeta0 + 10*alpha*log10(d/d0), d0 = 1 m."""
    if d < REF_DISTANCE:
        raise BadDistance(f"d = {d} m below reference distance {REF_DISTANCE} m")
    pl_db = zeta0_db + 10.0 * alpha_pl * np.log10(d / REF_DISTANCE)
    return float(10.0 ** (-pl_db / 10.0))


@dataclass
class Geometry:
    """Node placement in meters: fixed BS/RIS, UE disc, jammer/interferer boxes."""

    bs: np.ndarray
    ris: np.ndarray
    ue_center: np.ndarray
    ue_radius: float
    jammer_box: tuple
    interferer_box: tuple

    def __post_init__(self):
        self.bs = np.asarray(self.bs, dtype=float)
        self.ris = np.asarray(self.ris, dtype=float)
        self.ue_center = np.asarray(self.ue_center, dtype=float)
        self.jammer_box = tuple(np.asarray(c, dtype=float) for c in self.jammer_box)
        self.interferer_box = tuple(np.asarray(c, dtype=float) for c in self.interferer_box)
        pts = [self.bs, self.ris, self.ue_center, *self.jammer_box, *self.interferer_box]
        if not all(np.all(np.isfinite(p)) for p in pts):
            raise ValueError("geometry coordinates must be finite")
        if self.ue_radius <= 0:
            raise ValueError("UE disc radius must be positive")
        for lo, hi in (self.jammer_box, self.interferer_box):
            if np.any(hi - lo < 0):
                raise ValueError("box corners must satisfy max >= min")


@dataclass
class RwpParams:
    """Parameters of the RWP-based Nakagami-m channel-power law.

    b_coeffs/upsilon define the polynomial stationary distance density on
    [d_lower, d_upper]; m_nakagami and n_f shape the conditional Gamma power;
    alpha is the path-loss exponent and p_t the transmit power scale.
    """

    b_coeffs: np.ndarray
    upsilon: np.ndarray
    m_nakagami: float
    alpha: float
    d_lower: float
    d_upper: float
    p_t: float
    n_f: int

    def __post_init__(self):
        self.b_coeffs = np.asarray(self.b_coeffs, dtype=float)
        self.upsilon = np.asarray(self.upsilon, dtype=float)
        if self.b_coeffs.shape != self.upsilon.shape or self.b_coeffs.ndim != 1:
            raise BadParams("b_coeffs and upsilon must be 1-D and of equal length")
        if not (self.d_upper > self.d_lower > 0):
            raise BadParams("need d_upper > d_lower > 0")
        if self.m_nakagami < 0.5:
            raise BadParams("Nakagami shape must be >= 0.5")
        if self.alpha <= 0 or self.p_t <= 0 or self.n_f < 1:
            raise BadParams("alpha, p_t must be positive and n_f >= 1")

    @property
    def n_terms(self) -> int:
        return self.b_coeffs.size


def _distance_norm(p: RwpParams) -> float:
    """Mass of the unnormalized polynomial density on [d_lower, d_upper]."""
    up1 = p.upsilon + 1.0
    return float(np.sum(p.b_coeffs * (1.0 - (p.d_lower / p.d_upper) ** up1) / up1))


def rwp_distance_pdf(r, p: RwpParams):
    """Normalized RWP stationary distance density on [d_lower, d_upper]."""
    r = np.asarray(r, dtype=float)
    up = p.upsilon[:, None]
    dens = np.sum(p.b_coeffs[:, None] * r[None, :] ** up / p.d_upper ** (up + 1.0), axis=0)
    dens = np.where((r >= p.d_lower) & (r <= p.d_upper), dens, 0.0)
    return dens / _distance_norm(p)


def rwp_nakagami_pdf(x, p: RwpParams):
    """Density of the channel power ||h||^2 under RWP mobility and Nakagami-m fading.

    Mixture of the conditional Gamma(n_f*m, p_t r^-alpha / m) power law over
    the stationary distance density; the incomplete-Gamma difference is the
    closed form of the distance integral from d_lower to d_upper.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x <= 0):
        raise BadParams("channel power must be positive")
    m, pt, alpha = p.m_nakagami, p.p_t, p.alpha
    shape0 = p.n_f * m
    out = np.zeros_like(x)
    logx = np.log(x)
    for b_n, ups in zip(p.b_coeffs, p.upsilon):
        e_n = (ups + 1.0) / alpha
        a_n = e_n + shape0
        u_hi = (m / pt) * x * p.d_upper ** alpha
        u_lo = (m / pt) * x * p.d_lower ** alpha
        gam_diff = gammainc(a_n, u_hi) - gammainc(a_n, u_lo)
        logc = (
            gammaln(a_n)
            - gammaln(shape0)
            - np.log(alpha)
            - (ups + 1.0) * np.log(p.d_upper)
            + e_n * np.log(pt / m)
            - (e_n + 1.0) * logx
        )
        out += b_n * gam_diff * np.exp(logc)
    out /= _distance_norm(p)
    return out if out.size > 1 else float(out[0])


def rwp_nakagami_cdf(x, p: RwpParams, nodes: int = 240):
    """CDF of the channel power via Gauss-Legendre quadrature over distance.

    Independent of the closed-form PDF route; used for distribution checks.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t, w = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * (p.d_upper - p.d_lower) * t + 0.5 * (p.d_upper + p.d_lower)
    wr = 0.5 * (p.d_upper - p.d_lower) * w * rwp_distance_pdf(r, p)
    shape0 = p.n_f * p.m_nakagami
    u = (p.m_nakagami / p.p_t) * x[:, None] * r[None, :] ** p.alpha
    cdf = gammainc(shape0, u) @ wr
    return cdf if cdf.size > 1 else float(cdf[0])


def sample_rwp_distance(rng: Generator, n: int, b_coeffs, upsilon, d_lo: float, d_hi: float,
                        grid_points: int = 10000) -> np.ndarray:
    """Draw distances from the polynomial RWP density by inverse CDF on a grid."""
    b = np.asarray(b_coeffs, dtype=float)
    ups = np.asarray(upsilon, dtype=float)
    grid = np.linspace(d_lo, d_hi, grid_points + 1)
    up1 = ups[:, None] + 1.0
    anti = np.sum(b[:, None] * (grid[None, :] ** up1 - d_lo ** up1) / (up1 * d_hi ** up1), axis=0)
    cdf = anti / anti[-1]
    return np.interp(rng.random(n), cdf, grid)


def nakagami_fading(rng: Generator, shape, m: float) -> np.ndarray:
    """Unit-mean-power Nakagami-m fades: Gamma(m, 1/m) power, uniform phase."""
    power = rng.gamma(m, 1.0 / m, size=shape)
    while np.any(power == 0.0):  # exact zeros break the nonzero-entry invariant
        power = np.where(power == 0.0, rng.gamma(m, 1.0 / m, size=shape), power)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=shape)
    return np.sqrt(power) * np.exp(1j * phase)


@dataclass
class ChannelSet:
    """Deterministic channels plus stored jammer/interferer channel estimates.

    Shapes: g_br (M,N); h_bu (K,N); h_ru (K,M); h_ju_est (Q,K,N_jam);
    g_jr_est (Q,M,N_jam); h_iu_est (B,K,N).  Vectors are stored untransposed,
    so h^H w is computed as h.conj() @ w.
    """

    g_br: np.ndarray
    h_bu: np.ndarray
    h_ru: np.ndarray
    h_ju_est: np.ndarray
    g_jr_est: np.ndarray
    h_iu_est: np.ndarray
    z_jam: np.ndarray  # (Q,K,N_jam) adversary beams, fixed for the trial
    z_int: np.ndarray  # (B,K,N)
    ue_pos: np.ndarray
    jammer_pos: np.ndarray
    interferer_pos: np.ndarray

    @property
    def m_elements(self) -> int:
        return self.g_br.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.g_br.shape[1]

    @property
    def n_users(self) -> int:
        return self.h_bu.shape[0]

    @property
    def n_jammers(self) -> int:
        return self.h_ju_est.shape[0]

    @property
    def n_interferers(self) -> int:
        return self.h_iu_est.shape[0]


@dataclass
class Realization:
    """One draw of the uncertain channels and adversary transmit vectors."""

    index: int
    h_ju: np.ndarray  # (Q,K,N_jam) actual = estimate + error
    g_jr: np.ndarray  # (Q,M,N_jam)
    h_iu: np.ndarray  # (B,K,N)
    z_j: np.ndarray   # (Q,K,N_jam), sum_k ||z_j[q,k]||^2 = P_J
    z_i: np.ndarray   # (B,K,N),     sum_k ||z_i[b,k]||^2 = P_I


def _uniform_box(rng: Generator, lo: np.ndarray, hi: np.ndarray, n: int) -> np.ndarray:
    return lo + rng.random((n, 3)) * (hi - lo)


def _link(rng: Generator, shape, dist: float, alpha: float, zeta0_db: float, m: float) -> np.ndarray:
    gain = path_loss_linear(dist, alpha, zeta0_db)
    return np.sqrt(gain) * nakagami_fading(rng, shape, m)


def sample_static_channels(geom: Geometry, cfg, rng: Generator) -> ChannelSet:
    """Place UEs/jammers/interferers and synthesize every channel of one trial.

    cfg provides counts (n, m, k, q, b, n_jam), path-loss exponents,
    zeta0_db, m_nakagami, and the RWP polynomial (rwp_b, rwp_upsilon).
    """
    k, q, bq = cfg.k, cfg.q, cfg.b
    radius = geom.ue_radius
    r_ue = sample_rwp_distance(rng, k, cfg.rwp_b, cfg.rwp_upsilon, 1e-6 * radius, radius)
    ang = rng.uniform(0.0, 2.0 * np.pi, size=k)
    ue_pos = geom.ue_center + np.stack([r_ue * np.cos(ang), r_ue * np.sin(ang), np.zeros(k)], axis=1)
    jam_pos = _uniform_box(rng, *geom.jammer_box, q)
    int_pos = _uniform_box(rng, *geom.interferer_box, bq)

    z0, m_f = cfg.zeta0_db, cfg.m_nakagami
    d_br = float(np.linalg.norm(geom.bs - geom.ris))
    g_br = _link(rng, (cfg.m, cfg.n), d_br, cfg.alpha_br, z0, m_f)
    h_bu = np.stack([
        _link(rng, (cfg.n,), float(np.linalg.norm(geom.bs - ue_pos[i])), cfg.alpha_bu, z0, m_f)
        for i in range(k)
    ])
    h_ru = np.stack([
        _link(rng, (cfg.m,), float(np.linalg.norm(geom.ris - ue_pos[i])), cfg.alpha_ru, z0, m_f)
        for i in range(k)
    ])
    h_ju = np.stack([
        np.stack([
            _link(rng, (cfg.n_jam,), float(np.linalg.norm(jam_pos[iq] - ue_pos[ik])), cfg.alpha_ju, z0, m_f)
            for ik in range(k)
        ])
        for iq in range(q)
    ]) if q else np.zeros((0, k, cfg.n_jam), dtype=complex)
    g_jr = np.stack([
        _link(rng, (cfg.m, cfg.n_jam), float(np.linalg.norm(jam_pos[iq] - geom.ris)), cfg.alpha_jr, z0, m_f)
        for iq in range(q)
    ]) if q else np.zeros((0, cfg.m, cfg.n_jam), dtype=complex)
    h_iu = np.stack([
        np.stack([
            _link(rng, (cfg.n,), float(np.linalg.norm(int_pos[ib] - ue_pos[ik])), cfg.alpha_iu, z0, m_f)
            for ik in range(k)
        ])
        for ib in range(bq)
    ]) if bq else np.zeros((0, k, cfg.n), dtype=complex)

    # adversary transmit vectors are constants of the trial (the uncertainty
    # index applies to the channels only); each transmitter meets its budget
    z_jam = np.stack([
        _isotropic_power_vectors(rng, (k, cfg.n_jam), cfg.p_jam_w) for _ in range(q)
    ]) if q else np.zeros((0, k, cfg.n_jam), dtype=complex)
    z_int = np.stack([
        _isotropic_power_vectors(rng, (k, cfg.n), cfg.p_int_w) for _ in range(bq)
    ]) if bq else np.zeros((0, k, cfg.n), dtype=complex)

    return ChannelSet(g_br=g_br, h_bu=h_bu, h_ru=h_ru, h_ju_est=h_ju, g_jr_est=g_jr,
                      h_iu_est=h_iu, z_jam=z_jam, z_int=z_int,
                      ue_pos=ue_pos, jammer_pos=jam_pos, interferer_pos=int_pos)


def _add_estimation_error(est: np.ndarray, e_mse: float, rng: Generator) -> np.ndarray:
    """actual = estimate + CN(0, e_mse * mean|estimate|^2) per entry."""
    if e_mse == 0.0 or est.size == 0:
        return est.copy()
    var = e_mse * float(np.mean(np.abs(est) ** 2))
    noise = np.sqrt(var / 2.0) * (rng.standard_normal(est.shape) + 1j * rng.standard_normal(est.shape))
    return est + noise


def _isotropic_power_vectors(rng: Generator, shape, total_power: float) -> np.ndarray:
    """(K, N) complex Gaussian directions scaled so sum_k ||v_k||^2 = total_power."""
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    norm2 = float(np.sum(np.abs(v) ** 2))
    while norm2 == 0.0:
        v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        norm2 = float(np.sum(np.abs(v) ** 2))
    return v * np.sqrt(total_power / norm2)


def sample_uncertain_realization(cs: ChannelSet, e_mse: float, cfg, rng: Generator,
                                 index: int = 0) -> Realization:
    """Draw one realization of the uncertain channels and adversary signals.

    Errors are circular Gaussian with per-entry variance e_mse times the mean
    squared magnitude of the corresponding estimate block.  The adversary
    transmit vectors are the trial constants stored in the ChannelSet; only
    the channels carry the realization index.
    """
    if e_mse < 0:
        raise BadParams("e_mse must be nonnegative")
    q, k = cs.n_jammers, cs.n_users
    bq = cs.n_interferers
    h_ju = np.stack([
        np.stack([_add_estimation_error(cs.h_ju_est[iq, ik], e_mse, rng) for ik in range(k)])
        for iq in range(q)
    ]) if q else cs.h_ju_est.copy()
    g_jr = np.stack([
        _add_estimation_error(cs.g_jr_est[iq], e_mse, rng) for iq in range(q)
    ]) if q else cs.g_jr_est.copy()
    h_iu = np.stack([
        np.stack([_add_estimation_error(cs.h_iu_est[ib, ik], e_mse, rng) for ik in range(k)])
        for ib in range(bq)
    ]) if bq else cs.h_iu_est.copy()
    return Realization(index=index, h_ju=h_ju, g_jr=g_jr, h_iu=h_iu,
                       z_j=cs.z_jam, z_i=cs.z_int)
