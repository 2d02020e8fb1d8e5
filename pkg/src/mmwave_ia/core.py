"""System parameters, blockage models, beam patterns and path loss.

Everything here is linear-scale internally.  Decibel quantities exist only on
:class:`SystemConfig` as the user-facing fields; their linear counterparts are
computed once when the config is built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Union

import numpy as np

TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    """Invalid or inconsistent configuration value."""


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x)


def dbm_to_watt(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Scalar system parameters.

    Defaults reproduce the evaluation setup: 100 BS/km^2, 1000 users/km^2,
    28 GHz / 100 MHz, 30/23 dBm, -94 dBm noise, LOS/NLOS exponents 2/4,
    61.4 dB at 1 m, -4 dB detection thresholds, 14.3 us symbols, 20 ms cycle,
    64 preambles, 10 dB user front-back parameter, N = 4 user beams.
    """

    lambda_bs_per_km2: float = 100.0
    lambda_u_per_km2: float = 1000.0
    fc_ghz: float = 28.0
    bandwidth_hz: float = 100e6
    p_bs_dbm: float = 30.0
    p_user_dbm: float = 23.0
    noise_dbm: float = -94.0
    alpha_los: float = 2.0
    alpha_nlos: float = 4.0
    beta_db: float = 61.4
    gamma_cs_db: float = -4.0
    gamma_ra_db: float = -4.0
    tau_cs_s: float = 14.3e-6
    tau_ra_s: float = 14.3e-6
    cycle_t_s: float = 20e-3
    n_pa: int = 64
    c0_front_back_db: float = 10.0
    m_antennas: int = 8
    n_antennas: int = 4

    # linear quantities, filled in __post_init__
    lambda_bs: float = field(init=False, repr=False, compare=False)
    lambda_u: float = field(init=False, repr=False, compare=False)
    beta: float = field(init=False, repr=False, compare=False)
    p_bs: float = field(init=False, repr=False, compare=False)
    p_user: float = field(init=False, repr=False, compare=False)
    noise: float = field(init=False, repr=False, compare=False)
    gamma_cs: float = field(init=False, repr=False, compare=False)
    gamma_ra: float = field(init=False, repr=False, compare=False)
    c0: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._validate()
        derived = {
            "lambda_bs": self.lambda_bs_per_km2 * 1e-6,
            "lambda_u": self.lambda_u_per_km2 * 1e-6,
            "beta": float(db_to_linear(self.beta_db)),
            "p_bs": dbm_to_watt(self.p_bs_dbm),
            "p_user": dbm_to_watt(self.p_user_dbm),
            "noise": dbm_to_watt(self.noise_dbm),
            "gamma_cs": float(db_to_linear(self.gamma_cs_db)),
            "gamma_ra": float(db_to_linear(self.gamma_ra_db)),
            # back-lobe suppression factor inside the front-back ratio
            "c0": float(db_to_linear(-self.c0_front_back_db)),
        }
        for k, v in derived.items():
            object.__setattr__(self, k, v)

    def _validate(self):
        if self.lambda_bs_per_km2 < 0 or self.lambda_u_per_km2 < 0:
            raise ConfigError("densities must be nonnegative")
        for name in ("bandwidth_hz", "tau_cs_s", "tau_ra_s", "cycle_t_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0 < self.alpha_los <= self.alpha_nlos:
            raise ConfigError("need 0 < alpha_los <= alpha_nlos")
        if self.n_pa < 1:
            raise ConfigError("n_pa must be >= 1")
        if self.m_antennas < 1 or self.n_antennas < 1:
            raise ConfigError("beam counts must be >= 1")
        if self.m_antennas % self.n_antennas:
            raise ConfigError(
                f"m_antennas/n_antennas must be a positive integer "
                f"(got {self.m_antennas}/{self.n_antennas})")

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    @classmethod
    def input_fields(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.init]


@dataclass(frozen=True)
class LosBall:
    """Generalized LOS ball: LOS with probability ``prob_p`` inside ``radius_rc_m``."""

    radius_rc_m: float = 100.0
    prob_p: float = 1.0

    def __post_init__(self):
        if not self.radius_rc_m > 1.0:
            raise ConfigError("LOS ball radius must exceed 1 m")
        if not 0.0 <= self.prob_p <= 1.0:
            raise ConfigError("LOS ball probability must lie in [0, 1]")

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return (self.radius_rc_m,)

    @property
    def los_support(self) -> float:
        return self.radius_rc_m if self.prob_p > 0 else 0.0

    @property
    def los_length(self) -> float:
        return self.radius_rc_m

    def los_probability(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self.radius_rc_m, self.prob_p, 0.0)

    def los_mass(self, r):
        """Return the integral of h(s) s ds over [0, r]."""
        r = np.minimum(np.asarray(r, dtype=float), self.radius_rc_m)
        return 0.5 * self.prob_p * r * r

    @property
    def label(self) -> str:
        return f"losball:{self.radius_rc_m:g}:{self.prob_p:g}"


@dataclass(frozen=True)
class Exponential:
    """Exponential blockage, h(r) = exp(-r / mu)."""

    mu_m: float = 100.0

    def __post_init__(self):
        if not self.mu_m > 0:
            raise ConfigError("exponential blockage mu must be > 0")

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return ()

    @property
    def los_support(self) -> float:
        return math.inf

    @property
    def los_length(self) -> float:
        """Distance over which LOS links die out."""
        return self.mu_m

    def los_probability(self, r):
        return np.exp(-np.asarray(r, dtype=float) / self.mu_m)

    def los_mass(self, r):
        x = np.asarray(r, dtype=float) / self.mu_m
        # mu^2 (1 - e^-x (1 + x)), written to stay accurate for small x
        return self.mu_m ** 2 * (-np.expm1(-x) - x * np.exp(-x))

    @property
    def label(self) -> str:
        return f"exp:{self.mu_m:g}"


BlockageModel = Union[LosBall, Exponential]


def los_probability(r, model: BlockageModel):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distance must be nonnegative")
    return model.los_probability(r)


def nlos_mass(r, model: BlockageModel):
    """Integral of (1 - h(s)) s ds over [0, r]."""
    r = np.asarray(r, dtype=float)
    return 0.5 * r * r - model.los_mass(r)


def parse_blockage(text: str) -> BlockageModel:
    """Parse ``losball:RC:P`` or ``exp:MU`` (lengths in metres)."""
    parts = text.strip().lower().split(":")
    try:
        if parts[0] in ("losball", "ball", "los_ball") and len(parts) == 3:
            return LosBall(float(parts[1]), float(parts[2]))
        if parts[0] in ("exp", "exponential") and len(parts) == 2:
            return Exponential(float(parts[1]))
    except ValueError as exc:
        raise ConfigError(f"bad blockage spec {text!r}: {exc}") from exc
    raise ConfigError(f"bad blockage spec {text!r}; expected losball:RC:P or exp:MU")


class ProtocolName(str, Enum):
    BASELINE = "baseline"
    FAST_RA = "fast_ra"
    FAST_CS = "fast_cs"
    OMNI_RX = "omni_rx"


_ALIASES = {
    "baseline": ProtocolName.BASELINE,
    "fastra": ProtocolName.FAST_RA,
    "fast_ra": ProtocolName.FAST_RA,
    "fastcs": ProtocolName.FAST_CS,
    "fast_cs": ProtocolName.FAST_CS,
    "omnirx": ProtocolName.OMNI_RX,
    "omni_rx": ProtocolName.OMNI_RX,
}


@dataclass(frozen=True)
class Protocol:
    """Beam-direction counts of one initial access protocol."""

    name: ProtocolName
    m_cs: int
    n_cs: int
    m_ra: int
    n_ra: int
    m: int
    n: int

    def __post_init__(self):
        if self.k_cs % self.m_cs or self.k_cs % self.n_cs:
            raise ConfigError("cell-search beam counts must divide each other")
        if self.k_cs % self.n_data:
            raise ConfigError(
                f"K_cs/N = {self.k_cs}/{self.n_data} is not a positive integer")

    @classmethod
    def build(cls, name, m: int, n: int, m_cs_coarse: int = 4) -> "Protocol":
        key = _ALIASES.get(str(getattr(name, "value", name)).lower().replace("-", "_"))
        if key is None:
            raise ConfigError(f"unknown protocol {name!r}")
        if m % n:
            raise ConfigError(f"M/N must be a positive integer (got {m}/{n})")
        if key is ProtocolName.BASELINE:
            counts = (m, n, m, 1)
        elif key is ProtocolName.FAST_RA:
            counts = (m, n, 1, 1)
        elif key is ProtocolName.FAST_CS:
            if not n <= m_cs_coarse <= m:
                raise ConfigError(f"fast CS needs N <= m_cs <= M (m_cs={m_cs_coarse})")
            counts = (m_cs_coarse, n, m, 1)
        else:
            counts = (m, 1, 1, n)
        return cls(key, *counts, m=m, n=n)

    @property
    def k_cs(self) -> int:
        return max(self.m_cs, self.n_cs)

    @property
    def n_data(self) -> int:
        return max(self.n_cs, self.n_ra)

    @property
    def q(self) -> int:
        return self.k_cs // self.n_data

    @property
    def ia_duration(self):
        """Per-cycle (cs_slots, ra_slots)."""
        return self.m_cs * self.n_cs, self.m_ra * self.n_ra


ALL_PROTOCOLS = tuple(p.value for p in ProtocolName)


@dataclass(frozen=True)
class BeamGain:
    main: float
    side: float
    beamwidth: float


def user_beam_gain(beamwidth: float, cfg: SystemConfig) -> BeamGain:
    if not 0.0 < beamwidth < TWO_PI:
        raise ValueError("user beamwidth must lie in (0, 2*pi)")
    gamma = TWO_PI / (cfg.c0 * (TWO_PI - beamwidth))
    main = TWO_PI / beamwidth * gamma / (gamma + 1.0)
    side = TWO_PI / (TWO_PI - beamwidth) / (gamma + 1.0)
    return BeamGain(main, side, beamwidth)


def bs_beam_gain(beamwidth: float) -> BeamGain:
    if not 0.0 < beamwidth <= TWO_PI:
        raise ValueError("BS beamwidth must lie in (0, 2*pi]")
    return BeamGain(TWO_PI / beamwidth, 0.0, beamwidth)


def user_gains(n_beams: int, cfg: SystemConfig) -> tuple[float, float]:
    """(main, side) gain of a user sweeping ``n_beams`` sectors; omni is (1, 1)."""
    if n_beams == 1:
        return 1.0, 1.0
    g = user_beam_gain(TWO_PI / n_beams, cfg)
    return g.main, g.side


def path_loss(r, los, cfg: SystemConfig):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("path loss needs r > 0")
    alpha = np.where(los, cfg.alpha_los, cfg.alpha_nlos)
    out = cfg.beta * r ** alpha
    return out if out.ndim else float(out)


def inverse_path_loss(z, los: bool, cfg: SystemConfig):
    z = np.asarray(z, dtype=float)
    if np.any(z < cfg.beta * (1 - 1e-12)):
        raise ValueError("path loss below the 1 m reference has no distance")
    alpha = cfg.alpha_los if los else cfg.alpha_nlos
    out = (z / cfg.beta) ** (1.0 / alpha)
    return out if out.ndim else float(out)


def sector_index(angle, n_sectors: int):
    """Index of the equal angular sector containing ``angle`` (radians)."""
    a = np.mod(angle, TWO_PI)
    idx = np.floor(a * (n_sectors / TWO_PI)).astype(np.int64)
    return np.minimum(idx, n_sectors - 1)
