"""Network model shared by the analytical evaluator and the simulator.

Holds the parameter record, the sectored antenna-gain laws, association
distance laws on the LoS ball and the Nakagami/Gamma fading helpers.
All powers are linear (mW); decibels only appear in the converters.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

# Main-lobe width of an N-element ULA is 102 degrees / N.
BEAMWIDTH_DEG = 102.0

MAX_FADING_SHAPE = 8
MAX_UE_ANTENNAS = 32


class ParameterError(ValueError):
    """Base class for invalid network parameters."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class NonPositive(ParameterError):
    pass


class ProbabilityOutOfRange(ParameterError):
    pass


class NonIntegerShape(ParameterError):
    pass


class OutOfRange(ParameterError):
    pass


class OutOfSupport(ValueError):
    pass


def db_to_linear(x_db):
    """Convert dB (or dBm) to linear scale (or mW)."""
    if np.ndim(x_db):
        return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)
    return 10.0 ** (float(x_db) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x) if np.ndim(x) else 10.0 * math.log10(x)


@dataclass(frozen=True)
class NetworkParams:
    """Scalar parameters of the relay-assisted network.

    Densities are the raw (pre-LoS-thinning) ones; use :meth:`from_effective`
    to build a record from LoS densities such as the ones listed in Table-I
    style configurations. Powers are linear mW.
    """

    raw_bs_density: float
    raw_relay_density: float
    bs_los_prob: float
    ue_los_prob: float
    bs_los_radius: float
    ue_los_radius: float
    bs_power: float
    ue_power: float
    noise_power: float
    bs_antennas: int
    ue_antennas: int
    pathloss_exp: float
    m_bd: int
    m_br: int
    m_rd: int
    multiplexing_factor: float
    # carried for completeness, no coverage formula depends on it
    raw_dest_density: float = 1e-3

    @classmethod
    def from_effective(cls, bs_density: float, relay_density: float, **kwargs) -> "NetworkParams":
        """Build params from LoS densities lambda_b, lambda_r."""
        if kwargs.get("bs_los_prob", 1.0) <= 0 or kwargs.get("ue_los_prob", 1.0) <= 0:
            raise ProbabilityOutOfRange("los_prob", "effective densities need a positive LoS probability")
        return cls(
            raw_bs_density=bs_density / kwargs["bs_los_prob"],
            raw_relay_density=relay_density / kwargs["ue_los_prob"],
            **kwargs,
        )

    @property
    def bs_density(self) -> float:
        """LoS BS density lambda_b."""
        return self.bs_los_prob * self.raw_bs_density

    @property
    def relay_density(self) -> float:
        """LoS relay density lambda_r."""
        return self.ue_los_prob * self.raw_relay_density

    @property
    def interferer_density(self) -> float:
        """Density of LoS co-channel interfering UEs, lambda_i."""
        return self.ue_los_prob * self.multiplexing_factor * self.raw_bs_density

    def with_bs_density(self, bs_density: float) -> "NetworkParams":
        """Copy with a new LoS BS density; interfering-UE density follows."""
        return replace(self, raw_bs_density=bs_density / self.bs_los_prob)

    def derived(self) -> dict:
        return {
            "bs_density": self.bs_density,
            "relay_density": self.relay_density,
            "interferer_density": self.interferer_density,
        }

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def reference_params(**overrides) -> NetworkParams:
    """Reference parameter set (35 dBm BS, 25 dBm UE, N_b=10, N_u=4, m=2, ...)."""
    base = dict(
        bs_los_prob=0.9,
        ue_los_prob=0.63,
        bs_los_radius=100.0,
        ue_los_radius=20.0,
        bs_power=db_to_linear(35.0),
        ue_power=db_to_linear(25.0),
        noise_power=db_to_linear(0.0),
        bs_antennas=10,
        ue_antennas=4,
        pathloss_exp=2.4,
        m_bd=2,
        m_br=2,
        m_rd=2,
        multiplexing_factor=0.9,
    )
    bs_density = overrides.pop("bs_density", 2e-4)
    relay_density = overrides.pop("relay_density", 2e-3)
    base.update(overrides)
    return validate(NetworkParams.from_effective(bs_density, relay_density, **base))


def _as_count(name: str, value, upper: int | None = None) -> int:
    if isinstance(value, bool) or not float(value).is_integer():
        raise NonIntegerShape(name, f"must be a positive integer, got {value!r}")
    value = int(value)
    if value < 1:
        raise NonPositive(name, f"must be >= 1, got {value}")
    if upper is not None and value > upper:
        raise OutOfRange(name, f"must be <= {upper}, got {value}")
    return value


def validate(params: NetworkParams) -> NetworkParams:
    """Check every field and return a normalized copy.

    Raises a :class:`ParameterError` subclass naming the offending field.
    """
    for name in ("raw_bs_density", "raw_relay_density", "raw_dest_density",
                 "bs_los_radius", "ue_los_radius", "bs_power", "ue_power", "noise_power"):
        value = getattr(params, name)
        if not (math.isfinite(value) and value > 0):
            raise NonPositive(name, f"must be > 0, got {value!r}")
    for name in ("bs_los_prob", "ue_los_prob"):
        value = getattr(params, name)
        if not 0.0 <= value <= 1.0:
            raise ProbabilityOutOfRange(name, f"must lie in [0, 1], got {value!r}")
    if not params.multiplexing_factor >= 0:
        raise NonPositive("multiplexing_factor", f"must be >= 0, got {params.multiplexing_factor!r}")
    if not params.pathloss_exp >= 2:
        raise OutOfRange("pathloss_exp", f"must be >= 2, got {params.pathloss_exp!r}")
    counts = {
        "m_bd": _as_count("m_bd", params.m_bd, MAX_FADING_SHAPE),
        "m_br": _as_count("m_br", params.m_br, MAX_FADING_SHAPE),
        "m_rd": _as_count("m_rd", params.m_rd, MAX_FADING_SHAPE),
        "bs_antennas": _as_count("bs_antennas", params.bs_antennas),
        "ue_antennas": _as_count("ue_antennas", params.ue_antennas, MAX_UE_ANTENNAS),
    }
    return replace(params, **counts)


# -- directional gains ------------------------------------------------------

@dataclass(frozen=True)
class GainDistribution:
    """Discrete law of a linear power gain; equal gain values are merged."""

    entries: tuple[tuple[float, float], ...]

    def __post_init__(self):
        merged: dict[float, float] = {}
        for gain, prob in self.entries:
            if not gain > 0:
                raise ValueError(f"gain values must be positive, got {gain}")
            if not 0.0 <= prob <= 1.0:
                raise ValueError(f"probability out of [0, 1]: {prob}")
            merged[float(gain)] = merged.get(float(gain), 0.0) + float(prob)
        total = math.fsum(merged.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "entries", tuple(sorted(merged.items(), reverse=True)))

    @property
    def gains(self) -> np.ndarray:
        return np.array([g for g, _ in self.entries])

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.entries])

    def mean(self) -> float:
        return math.fsum(g * p for g, p in self.entries)

    def __mul__(self, other: "GainDistribution") -> "GainDistribution":
        """Law of the product of two independent gains."""
        return GainDistribution(tuple(
            (g1 * g2, p1 * p2) for g1, p1 in self.entries for g2, p2 in other.entries
        ))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if len(self.entries) == 1:
            return np.full(size, self.entries[0][0])
        cdf = np.cumsum(self.probs)
        idx = np.searchsorted(cdf, rng.random(size), side="right")
        return self.gains[np.minimum(idx, len(self.entries) - 1)]


def main_lobe_prob(n_antennas: int) -> float:
    """theta / (2 pi) with theta = 102 pi / (180 N)."""
    return BEAMWIDTH_DEG / (360.0 * n_antennas)


def _sectored_pmf(n_antennas: int) -> GainDistribution:
    p_main = main_lobe_prob(n_antennas)
    return GainDistribution(((float(n_antennas), p_main), (1.0 / n_antennas, 1.0 - p_main)))


def bs_gain_pmf(params: NetworkParams) -> GainDistribution:
    return _sectored_pmf(params.bs_antennas)


def ue_gain_pmf(params: NetworkParams) -> GainDistribution:
    return _sectored_pmf(params.ue_antennas)


def joint_gain_pmf(params: NetworkParams) -> GainDistribution:
    """Gain from an interfering BS into a relay: BS gain times relay gain."""
    return bs_gain_pmf(params) * ue_gain_pmf(params)


# -- links --------------------------------------------------------------------

class LinkKind(enum.Enum):
    DIRECT = "direct"
    BR = "br"
    RD = "rd"


class Exclusion(enum.Enum):
    BEYOND_ASSOCIATED = "beyond_associated"
    WHOLE_BALL = "whole_ball"


@dataclass(frozen=True)
class LinkSpec:
    """Constants of one hop as seen by its receiver."""

    kind: LinkKind
    assoc_density: float
    interferer_density: float
    ball_radius: float
    fading_shape: int
    desired_gain: float
    interference_gains: GainDistribution
    tx_power: float
    noise_power: float
    pathloss_exp: float
    interferer_exclusion: Exclusion = field(default=Exclusion.BEYOND_ASSOCIATED)

    @property
    def nonempty_prob(self) -> float:
        return nonempty_prob(self.assoc_density, self.ball_radius)


def link_spec(params: NetworkParams, kind: LinkKind) -> LinkSpec:
    n_b, n_u = params.bs_antennas, params.ue_antennas
    common = dict(noise_power=params.noise_power, pathloss_exp=params.pathloss_exp)
    if kind is LinkKind.DIRECT:
        return LinkSpec(kind, params.bs_density, params.bs_density, params.bs_los_radius,
                        params.m_bd, float(n_b), bs_gain_pmf(params), params.bs_power, **common)
    if kind is LinkKind.BR:
        return LinkSpec(kind, params.bs_density, params.bs_density, params.bs_los_radius,
                        params.m_br, float(n_b * n_u), joint_gain_pmf(params), params.bs_power,
                        **common)
    if kind is LinkKind.RD:
        return LinkSpec(kind, params.relay_density, params.interferer_density,
                        params.ue_los_radius, params.m_rd, float(n_u), ue_gain_pmf(params),
                        params.ue_power, interferer_exclusion=Exclusion.WHOLE_BALL, **common)
    raise ValueError(kind)


def nonempty_prob(density: float, radius: float) -> float:
    """Probability that a PPP of the given density has a point in the disk."""
    return -math.expm1(-math.pi * density * radius * radius)


def association_distance_pdf(link: LinkSpec, x):
    """Density of the nearest-point distance on the ball, given it is nonempty."""
    x_arr = np.asarray(x, dtype=float)
    if np.any((x_arr <= 0) | (x_arr >= link.ball_radius)):
        raise OutOfSupport(f"distance must lie in (0, {link.ball_radius})")
    return nearest_distance_pdf(x_arr if np.ndim(x) else float(x), link.assoc_density,
                                link.ball_radius)


def nearest_distance_pdf(x, density: float, radius: float):
    lam = density
    return 2 * math.pi * lam * x * np.exp(-math.pi * lam * np.square(x)) / nonempty_prob(lam, radius)


# -- fading -------------------------------------------------------------------

def nakagami_alpha(m: int) -> float:
    """Constant of the exponential-power lower bound on the Gamma(m, 1/m) CDF."""
    if m < 1:
        raise ValueError("shape must be >= 1")
    if m == 1:
        return 1.0
    return m * math.exp(-math.lgamma(m + 1) / m)


def gamma_cdf(m: int, x):
    """Exact CDF of a Gamma(m, 1/m) power gain (integer m)."""
    x = np.asarray(x, dtype=float)
    mx = m * x
    term = np.ones_like(mx)
    acc = np.ones_like(mx)
    for w in range(1, m):
        term = term * mx / w
        acc = acc + term
    return 1.0 - np.exp(-mx) * acc


def gamma_cdf_bound(m: int, x):
    """Lower bound (1 - exp(-alpha x))^m used by the closed forms."""
    return (-np.expm1(-nakagami_alpha(m) * np.asarray(x, dtype=float))) ** m


def sample_gamma_fading(m: int, rng: np.random.Generator, size=None):
    """Unit-mean Gamma(m, 1/m) power gain."""
    return rng.gamma(m, 1.0 / m, size)


def sample_bound_fading(m: int, rng: np.random.Generator, size=None):
    """Draw from the law whose CDF is the bound (1 - exp(-alpha x))^m.

    That law is the maximum of m i.i.d. exponentials with rate alpha.
    """
    alpha = nakagami_alpha(m)
    shape = (m,) if size is None else (*np.atleast_1d(size), m)
    return rng.exponential(1.0 / alpha, shape).max(axis=-1)


@dataclass(frozen=True)
class CoverageResult:
    probability: float
    method: str
    ci_low: float | None = None
    ci_high: float | None = None
    trials: int | None = None
