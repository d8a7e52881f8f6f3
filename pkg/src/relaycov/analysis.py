"""Closed-form SINR coverage of the relay-assisted network.

The direct and RD links use selection combining over the destination's
antennas, so their coverage is an inclusion-exclusion series over the
number of jointly covered antennas. Each term expands into weak
compositions of that number, and each composition contributes a nested
integral (associated distance outside, interference PGFL inside) that is
evaluated with fixed Gauss-Legendre rules.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .model import (
    Exclusion,
    LinkKind,
    LinkSpec,
    NetworkParams,
    link_spec,
    nakagami_alpha,
    nearest_distance_pdf,
    validate,
)

MAX_COMPOSITIONS = 10**6
# raw alternating sums may leave [0, 1] by this much before we call it a failure
RANGE_SLACK = 1e-4


class NumericalInstability(ArithmeticError):
    pass


class CombinatorialBlowup(ValueError):
    pass


class NotAchievable(ValueError):
    def __init__(self, cap: int):
        self.cap = cap
        super().__init__(f"target not reached for any antenna count up to {cap}")


class Mode(enum.Enum):
    CORRELATED = "correlated"
    UNCORRELATED = "uncorrelated"


@dataclass(frozen=True)
class Composition:
    """Weak composition (j_1, ..., j_m) of kappa."""

    parts: tuple[int, ...]

    @property
    def kappa(self) -> int:
        return sum(self.parts)

    @property
    def omega(self) -> int:
        """Weighted size sum_q q * j_q."""
        return sum(q * j for q, j in enumerate(self.parts, start=1))


@dataclass(frozen=True)
class QuadratureConfig:
    outer_nodes: int = 128
    inner_nodes: int = 128
    abs_tol: float = 1e-6
    self_check: bool = True

    def __post_init__(self):
        if self.outer_nodes < 8 or self.inner_nodes < 8:
            raise ValueError("quadrature needs at least 8 nodes per axis")

    def doubled(self) -> "QuadratureConfig":
        return replace(self, outer_nodes=2 * self.outer_nodes,
                       inner_nodes=2 * self.inner_nodes, self_check=False)


def enumerate_compositions(m: int, kappa: int) -> list[Composition]:
    """All weak compositions of kappa into m ordered parts, lexicographically."""
    if m < 1 or kappa < 0:
        raise ValueError("need m >= 1 and kappa >= 0")
    count = math.comb(kappa + m - 1, m - 1)
    if count > MAX_COMPOSITIONS:
        raise CombinatorialBlowup(f"{count} compositions of {kappa} into {m} parts")
    return [Composition(p) for p in _compositions(m, kappa)]


@lru_cache(maxsize=None)
def _compositions(m: int, kappa: int) -> tuple[tuple[int, ...], ...]:
    if m == 1:
        return ((kappa,),)
    return tuple((first, *rest) for first in range(kappa + 1)
                 for rest in _compositions(m - 1, kappa - first))


def beta_coefficient(comp: Composition, m: int) -> int:
    """Signed weight of a composition in the product expansion.

    Multinomial(kappa; j) * prod_q C(m, q)^j_q * (-1)^(kappa + omega); exact
    integer arithmetic.
    """
    if len(comp.parts) != m:
        raise ValueError(f"composition has {len(comp.parts)} parts, expected {m}")
    coef = math.factorial(comp.kappa)
    for j in comp.parts:
        coef //= math.factorial(j)
    for q, j in enumerate(comp.parts, start=1):
        coef *= math.comb(m, q) ** j
    return -coef if (comp.kappa + comp.omega) % 2 else coef


def delta_scale(link: LinkSpec, tau: float, x):
    """alpha * tau / (P * G_desired * x^-eta)."""
    alpha = nakagami_alpha(link.fading_shape)
    return alpha * tau * np.power(x, link.pathloss_exp) / (link.tx_power * link.desired_gain)


def v_kernel(link: LinkSpec, comp: Composition, delta, ell):
    """Interference-gain mixture of prod_q (1 + q delta P G ell^-eta / m)^(-m j_q).

    This is the per-interferer Laplace factor of the composition at distance
    ``ell``; it lies in (0, 1] and tends to 1 as ``ell`` grows.
    """
    m = link.fading_shape
    delta = np.asarray(delta, dtype=float)
    ell = np.asarray(ell, dtype=float)
    out = 0.0
    for gain, prob in link.interference_gains.entries:
        z = delta * link.tx_power * gain * np.power(ell, -link.pathloss_exp) / m
        log_v = sum(-m * j * np.log1p(q * z) for q, j in enumerate(comp.parts, start=1) if j)
        out = out + prob * np.exp(log_v)
    return out


@lru_cache(maxsize=16)
def _gauss_legendre(n: int):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights


class _LinkIntegrator:
    """Nested quadrature of one link at a fixed threshold and node count."""

    def __init__(self, link: LinkSpec, tau: float, quad: QuadratureConfig):
        self.link = link
        m = link.fading_shape
        radius = link.ball_radius
        t_out, w_out = _gauss_legendre(quad.outer_nodes)
        t_in, w_in = _gauss_legendre(quad.inner_nodes)

        x = 0.5 * radius * (t_out + 1.0)
        self.x_weights = 0.5 * radius * w_out * nearest_distance_pdf(x, link.assoc_density, radius)
        if link.interferer_exclusion is Exclusion.WHOLE_BALL:
            lower = np.zeros_like(x)
        else:
            lower = x
        half = 0.5 * (radius - lower)[:, None]
        ell = lower[:, None] + half * (t_in[None, :] + 1.0)
        # weights already carry the polar-area factor ell
        self.ell_weights = half * w_in[None, :] * ell

        delta = delta_scale(link, tau, x)
        self.noise_per_omega = delta * link.noise_power
        path = np.power(ell, -link.pathloss_exp)
        # log1p(q z_g) for every gain g and every q = 1..m, shape (G, m, nx, nl)
        self.log_terms = np.stack([
            np.stack([np.log1p(q * delta[:, None] * link.tx_power * gain * path / m)
                      for q in range(1, m + 1)])
            for gain in link.interference_gains.gains
        ])
        self.gain_probs = link.interference_gains.probs
        self.pgfl_scale = 2.0 * math.pi * link.interferer_density

    def term(self, comp: Composition) -> float:
        """Outer integral of one composition (without Xi and beta)."""
        m = self.link.fading_shape
        j = np.asarray(comp.parts, dtype=float)
        exponent = -m * np.tensordot(j, self.log_terms, axes=([0], [1]))
        one_minus_v = np.tensordot(self.gain_probs, -np.expm1(exponent), axes=1)
        inner = self.pgfl_scale * np.sum(self.ell_weights * one_minus_v, axis=1)
        integrand = np.exp(-comp.omega * self.noise_per_omega - inner)
        return float(np.dot(self.x_weights, integrand))


def _selection_coverage_once(link: LinkSpec, n_antennas: int, tau: float,
                             quad: QuadratureConfig) -> float:
    integrator = _LinkIntegrator(link, tau, quad)
    m = link.fading_shape
    terms: list[float] = []
    magnitude = 0.0
    for kappa in range(1, n_antennas + 1):
        weighted = [beta_coefficient(c, m) * integrator.term(c)
                    for c in enumerate_compositions(m, kappa)]
        scale = math.comb(n_antennas, kappa)
        terms.append((-1) ** (kappa + 1) * scale * math.fsum(weighted))
        magnitude += scale * math.fsum(abs(w) for w in weighted)
    # each term carries a relative rounding error of a few ulp; the series
    # cancels down from `magnitude` to a probability
    rounding = magnitude * np.finfo(float).eps
    if rounding > quad.abs_tol:
        raise NumericalInstability(
            f"{link.kind.value} link: inclusion-exclusion over {n_antennas} antennas cancels "
            f"from {magnitude:.3g}, rounding error ~{rounding:.1g}")
    raw = link.nonempty_prob * math.fsum(terms)
    if not -RANGE_SLACK <= raw <= 1.0 + RANGE_SLACK:
        raise NumericalInstability(
            f"{link.kind.value} link: coverage series evaluated to {raw!r}")
    return min(max(raw, 0.0), 1.0)


def selection_coverage(link: LinkSpec, n_antennas: int, tau: float,
                       quad: QuadratureConfig | None = None) -> float:
    """Coverage of a link with selection combining over ``n_antennas``.

    With ``quad.self_check`` the value is recomputed on a doubled grid and a
    disagreement beyond ``abs_tol`` raises :class:`NumericalInstability`.
    """
    quad = quad or QuadratureConfig()
    if tau <= 0:
        raise ValueError("threshold must be positive")
    value = _selection_coverage_once(link, n_antennas, tau, quad)
    if quad.self_check:
        fine = _selection_coverage_once(link, n_antennas, tau, quad.doubled())
        if abs(fine - value) >= quad.abs_tol:
            raise NumericalInstability(
                f"{link.kind.value} link: node doubling moved coverage by {abs(fine - value):.3g}")
    return value


def coverage_direct_correlated(params: NetworkParams, tau: float,
                               quad: QuadratureConfig | None = None) -> float:
    params = validate(params)
    return selection_coverage(link_spec(params, LinkKind.DIRECT), params.ue_antennas, tau, quad)


def coverage_rd_correlated(params: NetworkParams, tau: float,
                           quad: QuadratureConfig | None = None) -> float:
    params = validate(params)
    return selection_coverage(link_spec(params, LinkKind.RD), params.ue_antennas, tau, quad)


def coverage_br(params: NetworkParams, tau: float,
                quad: QuadratureConfig | None = None) -> float:
    """BR-link coverage. The relay has one beamformed output, so no combining."""
    params = validate(params)
    return selection_coverage(link_spec(params, LinkKind.BR), 1, tau, quad)


def single_antenna_params(params: NetworkParams) -> NetworkParams:
    """The same network with single-antenna UEs, as used by the independence model."""
    return replace(params, ue_antennas=1)


def coverage_direct_uncorrelated(params: NetworkParams, tau: float,
                                 quad: QuadratureConfig | None = None) -> float:
    params = validate(params)
    p1 = coverage_direct_correlated(single_antenna_params(params), tau, quad)
    return -math.expm1(params.ue_antennas * math.log1p(-p1)) if p1 < 1 else 1.0


def coverage_rd_uncorrelated(params: NetworkParams, tau: float,
                             quad: QuadratureConfig | None = None) -> float:
    """1 - (1 - P_1,rd)^N_u where P_1,rd is the RD coverage of the N_u = 1 network."""
    params = validate(params)
    p1 = coverage_rd_correlated(single_antenna_params(params), tau, quad)
    return -math.expm1(params.ue_antennas * math.log1p(-p1)) if p1 < 1 else 1.0


@dataclass(frozen=True)
class LinkBreakdown:
    direct: float
    br: float
    rd: float
    total: float
    mode: Mode


def combine(direct: float, br: float, rd: float) -> float:
    """Direct mode, or relay mode when both hops succeed (independent links)."""
    return 1.0 - (1.0 - direct) * (1.0 - br * rd)


def coverage_breakdown(params: NetworkParams, tau: float, mode: Mode = Mode.CORRELATED,
                       quad: QuadratureConfig | None = None) -> LinkBreakdown:
    params = validate(params)
    if mode is Mode.CORRELATED:
        direct = coverage_direct_correlated(params, tau, quad)
        rd = coverage_rd_correlated(params, tau, quad)
    else:
        direct = coverage_direct_uncorrelated(params, tau, quad)
        rd = coverage_rd_uncorrelated(params, tau, quad)
    br = coverage_br(params, tau, quad)
    total = combine(direct, br, rd)
    assert total >= direct - 1e-15, "relay mode cannot reduce coverage"
    return LinkBreakdown(direct, br, rd, total, mode)


def coverage_total(params: NetworkParams, tau: float, mode: Mode = Mode.CORRELATED,
                   quad: QuadratureConfig | None = None) -> float:
    return coverage_breakdown(params, tau, mode, quad).total


def min_antennas(params: NetworkParams, tau: float, xi: float, mode: Mode = Mode.CORRELATED,
                 cap: int = 32, quad: QuadratureConfig | None = None) -> int:
    """Smallest N_u whose total coverage strictly exceeds ``xi``."""
    if not 0.0 < xi < 1.0:
        raise ValueError("target must lie in (0, 1)")
    for n_u in range(1, cap + 1):
        if coverage_total(replace(params, ue_antennas=n_u), tau, mode, quad) > xi:
            return n_u
    raise NotAchievable(cap)


def optimal_bs_density(params: NetworkParams, tau: float, grid: Sequence[float],
                       mode: Mode = Mode.CORRELATED,
                       quad: QuadratureConfig | None = None) -> tuple[float, float]:
    """Grid argmax of total coverage over the LoS BS density.

    The interfering-UE density scales with the BS density. Ties go to the
    smaller density.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty density grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("density grid must be strictly ascending")
    best = None
    for density in grid:
        value = coverage_total(params.with_bs_density(density), tau, mode, quad)
        if best is None or value > best[1]:
            best = (density, value)
    return best
