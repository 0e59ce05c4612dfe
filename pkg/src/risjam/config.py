"""Scenario configuration: physical constants, geometry, and algorithm knobs.

Powers cross the boundary in dBm (keys carry a _dbm suffix) and are converted
to watts here; all internal arithmetic is in watts.  A flat ``key = value``
text file can override any default, see load_scenario.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .channel import Geometry, RwpParams
from .system import PowerModel


class ParseError(Exception):
    """Scenario file syntax or schema problem; message carries the line number."""


class ValidationError(Exception):
    """A configuration invariant is violated; message names the invariant."""


def dbm_to_watts(v: float) -> float:
    return 10.0 ** (v / 10.0) * 1e-3


def db_to_linear(v: float) -> float:
    return 10.0 ** (v / 10.0)


@dataclass
class ScenarioConfig:
    # counts
    n: int = 8            # BS antennas
    m: int = 25           # reflecting elements
    k: int = 4            # UEs
    q: int = 3            # jammers
    b: int = 4            # interferers
    n_jam: int = 8        # antennas per jammer

    # powers (dBm at the boundary)
    p_max_dbm: float = 27.0
    p_j_dbm: float = 10.0
    p_i_dbm: float = 10.0
    noise_dbm: float = -105.0
    p_dc_dbm: float = -20.0   # 10 uW per element
    p_sc_dbm: float = -20.0   # 10 uW per element
    a_max_db: float = 40.0    # maximum amplification gain A_max^2 in dB
    eta1: float = 0.9         # harvesting efficiency
    xi: float = 1.1           # reciprocal amplifier efficiency

    # geometry (meters)
    bs_pos: tuple = (30.0, 0.0, 5.0)
    ris_pos: tuple = (0.0, 40.0, 10.0)
    ue_center: tuple = (30.0, 150.0, 0.0)
    ue_radius: float = 20.0
    jammer_box_min: tuple = (40.0, 80.0, 0.0)
    jammer_box_max: tuple = (60.0, 100.0, 0.0)
    interferer_box_min: tuple = (-50.0, 200.0, 0.0)
    interferer_box_max: tuple = (50.0, 220.0, 0.0)

    # path loss
    alpha_bu: float = 2.75
    alpha_br: float = 2.2
    alpha_ru: float = 2.2
    alpha_ju: float = 2.5
    alpha_jr: float = 2.5
    alpha_iu: float = 2.7
    zeta0_db: float = 0.0     # reference path loss at 1 m, net of antenna gains

    # RWP mobility / fading
    rwp_b: tuple = (735.0 / 72.0, -1190.0 / 72.0, 455.0 / 72.0)
    rwp_upsilon: tuple = (1.0, 3.0, 5.0)
    m_nakagami: float = 1.0

    # imperfect CSI (0 = ideal estimates; sweeps probe 0.05-0.2)
    e_mse: float = 0.0

    # algorithm
    r_max: int = 50
    i_max: int = 15
    varsigma: float = 1e-3
    varsigma1: float = 1e-3
    heldout: int = 100

    # harness
    trials: int = 500
    seed: int = 20240

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("n", "m", "k", "n_jam"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"count {name} must be positive")
        for name in ("q", "b"):
            if int(getattr(self, name)) < 0:
                raise ValidationError(f"count {name} must be nonnegative")
        for name in ("alpha_bu", "alpha_br", "alpha_ru", "alpha_ju", "alpha_jr", "alpha_iu"):
            v = getattr(self, name)
            if not (1.5 <= v <= 6.0):
                raise ValidationError(f"path-loss exponent {name} = {v} outside [1.5, 6]")
        if self.e_mse < 0:
            raise ValidationError("e_mse must be nonnegative")
        if not (0 < self.eta1 <= 1):
            raise ValidationError("eta1 must lie in (0, 1]")
        if self.xi < 1:
            raise ValidationError("xi must be >= 1")
        if self.a_max_db < 0:
            raise ValidationError("a_max_db must be nonnegative (A_max >= 1)")
        if len(self.rwp_b) != len(self.rwp_upsilon):
            raise ValidationError("rwp_b and rwp_upsilon must have equal length")
        if self.m_nakagami < 0.5:
            raise ValidationError("m_nakagami must be >= 0.5")
        if self.ue_radius <= 0:
            raise ValidationError("ue_radius must be positive")
        if self.r_max < 1 or self.i_max < 1 or self.trials < 1 or self.heldout < 1:
            raise ValidationError("iteration caps and trial counts must be positive")
        if self.varsigma <= 0 or self.varsigma1 <= 0:
            raise ValidationError("convergence tolerances must be positive")

    # derived quantities -------------------------------------------------
    @property
    def p_max_w(self) -> float:
        return dbm_to_watts(self.p_max_dbm)

    @property
    def p_jam_w(self) -> float:
        return dbm_to_watts(self.p_j_dbm)

    @property
    def p_int_w(self) -> float:
        return dbm_to_watts(self.p_i_dbm)

    @property
    def noise_w(self) -> float:
        return dbm_to_watts(self.noise_dbm)

    @property
    def a_max(self) -> float:
        return float(np.sqrt(db_to_linear(self.a_max_db)))

    def geometry(self) -> Geometry:
        return Geometry(
            bs=np.array(self.bs_pos), ris=np.array(self.ris_pos),
            ue_center=np.array(self.ue_center), ue_radius=self.ue_radius,
            jammer_box=(np.array(self.jammer_box_min), np.array(self.jammer_box_max)),
            interferer_box=(np.array(self.interferer_box_min), np.array(self.interferer_box_max)),
        )

    def power_model(self) -> PowerModel:
        return PowerModel(
            p_max=self.p_max_w, eta1=self.eta1, xi=self.xi,
            p_dc=dbm_to_watts(self.p_dc_dbm), p_sc=dbm_to_watts(self.p_sc_dbm),
            a_max=self.a_max, sigma1_sq=self.noise_w, sigma2_sq=self.noise_w,
            sigma_r_sq=self.noise_w,
        )

    def rwp_params(self) -> RwpParams:
        """Theorem-style power-law parameters for the BS-to-UE-disc link."""
        geom = self.geometry()
        d_xy = float(np.linalg.norm((geom.bs - geom.ue_center)[:2]))
        dz = abs(float(geom.bs[2] - geom.ue_center[2]))
        d_lo = float(np.hypot(max(d_xy - self.ue_radius, 0.0), dz))
        d_hi = float(np.hypot(d_xy + self.ue_radius, dz))
        return RwpParams(
            b_coeffs=np.array(self.rwp_b), upsilon=np.array(self.rwp_upsilon),
            m_nakagami=self.m_nakagami, alpha=self.alpha_bu,
            d_lower=d_lo, d_upper=d_hi, p_t=1.0, n_f=self.n,
        )


def paper_profile(**overrides) -> ScenarioConfig:
    """Full-scale scenario (counts and powers of the reference simulations)."""
    return replace(ScenarioConfig(), **overrides) if overrides else ScenarioConfig()


def desk_profile(**overrides) -> ScenarioConfig:
    """Reduced-scale profile for CI runtime: fewer nodes, fewer trials."""
    base = dict(n=4, k=2, q=1, b=2, m=8, n_jam=4, trials=50)
    base.update(overrides)
    return replace(ScenarioConfig(), **base)


_TUPLE_FIELDS = {
    "bs_pos", "ris_pos", "ue_center", "jammer_box_min", "jammer_box_max",
    "interferer_box_min", "interferer_box_max", "rwp_b", "rwp_upsilon",
}
_INT_FIELDS = {"n", "m", "k", "q", "b", "n_jam", "r_max", "i_max", "trials", "seed", "heldout"}


def _field_map():
    return {f.name.lower(): f.name for f in fields(ScenarioConfig)}


def load_scenario(path: str, profile: str = "paper") -> ScenarioConfig:
    """Parse a flat ``key = value`` scenario file over the named profile.

    Keys are case-insensitive and match the ScenarioConfig field names;
    comma-separated values populate tuple fields.  '#' starts a comment.
    Raises ParseError (with line number) on syntax/unknown keys and
    ValidationError when a resulting invariant is violated.
    """
    names = _field_map()
    overrides = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, value = line.partition("=")
            key = key.strip().lower()
            value = value.strip()
            if key not in names:
                raise ParseError(f"line {lineno}: unknown key {key!r}")
            name = names[key]
            try:
                if name in _TUPLE_FIELDS:
                    overrides[name] = tuple(float(v) for v in value.split(","))
                elif name in _INT_FIELDS:
                    overrides[name] = int(value)
                else:
                    overrides[name] = float(value)
            except ValueError as exc:
                raise ParseError(f"line {lineno}: bad value for {name!r}: {value!r}") from exc
    maker = desk_profile if profile == "desk" else paper_profile
    return maker(**overrides)
