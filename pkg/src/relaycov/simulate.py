"""Monte Carlo estimator of the network coverage.

Trials are processed in fixed-size blocks. Block ``b`` always draws from a
Philox stream keyed by ``(seed, b)``, so the estimate does not depend on how
blocks are spread over worker processes.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .analysis import single_antenna_params
from .model import (
    CoverageResult,
    Exclusion,
    LinkKind,
    LinkSpec,
    NetworkParams,
    link_spec,
    sample_bound_fading,
    sample_gamma_fading,
    validate,
)

BLOCK_SIZE = 1 << 14


class CorrelationMode(enum.Enum):
    SHARED = "shared"
    INDEPENDENT = "independent"


class LinkCoupling(enum.Enum):
    # the three hops get independent geometries, matching the product form
    INDEPENDENT_LINKS = "independent_links"


class DesiredFading(enum.Enum):
    """Law of the desired-signal power gain.

    ``GAMMA`` is the physical Nakagami model. ``BOUND`` draws from the law
    whose CDF is (1 - exp(-alpha x))^m, i.e. exactly the approximation the
    closed forms rest on, so that estimates become unbiased for them.
    """

    GAMMA = "gamma"
    BOUND = "bound"


class EmptyProcess(LookupError):
    pass


@dataclass(frozen=True)
class SimConfig:
    trials: int
    seed: int = 0
    correlation_mode: CorrelationMode = CorrelationMode.SHARED
    link_coupling: LinkCoupling = LinkCoupling.INDEPENDENT_LINKS
    confidence_level: float = 0.99
    desired_fading: DesiredFading = DesiredFading.GAMMA
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0.0 < self.confidence_level < 1.0:
            raise ValueError("confidence_level must lie in (0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Counter-based stream for one block of trials."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


# -- sampling -----------------------------------------------------------------

@dataclass(frozen=True)
class LinkRealization:
    """One trial of one link as seen by one receiver (possibly multi-antenna)."""

    kind: LinkKind
    assoc_distance: float | None
    desired_power: float  # P * G of the associated transmitter
    desired_fading: np.ndarray  # (n_antennas,)
    interferer_distances: np.ndarray
    interferer_powers: np.ndarray  # P * G_k per interferer
    interferer_fading: np.ndarray  # (n_interferers, n_antennas)

    @property
    def is_empty(self) -> bool:
        return self.assoc_distance is None

    def sinr(self, pathloss_exp: float, noise_power: float) -> np.ndarray:
        if self.is_empty:
            raise EmptyProcess(f"no {self.kind.value} transmitter inside the LoS ball")
        path = self.interferer_powers * self.interferer_distances ** -pathloss_exp
        interference = path @ self.interferer_fading
        signal = self.desired_power * self.assoc_distance ** -pathloss_exp * self.desired_fading
        return signal / (interference + noise_power)


@dataclass(frozen=True)
class LinkBatch:
    """Many trials of one link; interferers stored flat with trial ids."""

    link: LinkSpec
    assoc_distance: np.ndarray  # (B,), nan when the process is empty
    desired_fading: np.ndarray  # (B, n_antennas)
    interferer_trial: np.ndarray
    interferer_distances: np.ndarray
    interferer_powers: np.ndarray
    interferer_fading: np.ndarray  # (n_interferers, n_antennas)

    @property
    def size(self) -> int:
        return self.assoc_distance.shape[0]

    def sinr(self) -> np.ndarray:
        """(B, n_antennas) SINR, zero where the link has no transmitter."""
        eta = self.link.pathloss_exp
        path = self.interferer_powers * self.interferer_distances ** -eta
        n_ant = self.desired_fading.shape[1]
        interference = np.empty((self.size, n_ant))
        for a in range(n_ant):
            interference[:, a] = np.bincount(self.interferer_trial,
                                             weights=path * self.interferer_fading[:, a],
                                             minlength=self.size)
        empty = np.isnan(self.assoc_distance)
        dist = np.where(empty, 1.0, self.assoc_distance)
        signal = (self.link.tx_power * self.link.desired_gain * dist ** -eta)[:, None] * self.desired_fading
        out = signal / (interference + self.link.noise_power)
        out[empty] = 0.0
        return out

    def realization(self, t: int) -> LinkRealization:
        sel = self.interferer_trial == t
        d = self.assoc_distance[t]
        return LinkRealization(
            kind=self.link.kind,
            assoc_distance=None if np.isnan(d) else float(d),
            desired_power=self.link.tx_power * self.link.desired_gain,
            desired_fading=self.desired_fading[t].copy(),
            interferer_distances=self.interferer_distances[sel],
            interferer_powers=self.interferer_powers[sel],
            interferer_fading=self.interferer_fading[sel],
        )


def _disk_points(rng: np.random.Generator, density: float, radius: float, size: int):
    """Poisson counts per trial and uniform radii of all points (count-then-place)."""
    counts = rng.poisson(density * math.pi * radius * radius, size)
    radii = radius * np.sqrt(rng.random(int(counts.sum())))
    trial = np.repeat(np.arange(size), counts)
    return counts, radii, trial


def sample_link_batch(link: LinkSpec, n_antennas: int, size: int, rng: np.random.Generator,
                      desired: DesiredFading = DesiredFading.GAMMA) -> LinkBatch:
    """Sample ``size`` independent trials of one link."""
    counts, radii, trial = _disk_points(rng, link.assoc_density, link.ball_radius, size)
    assoc = np.full(size, np.nan)
    nonempty = counts > 0
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    if radii.size:
        assoc[nonempty] = np.minimum.reduceat(radii, starts[nonempty])

    if link.interferer_exclusion is Exclusion.BEYOND_ASSOCIATED:
        # the remaining points of the associating process interfere
        keep = radii != assoc[trial]
        i_radii, i_trial = radii[keep], trial[keep]
    else:
        _, i_radii, i_trial = _disk_points(rng, link.interferer_density, link.ball_radius, size)

    gains = link.interference_gains.sample(rng, i_radii.size)
    m = link.fading_shape
    i_fading = sample_gamma_fading(m, rng, (i_radii.size, n_antennas))
    if desired is DesiredFading.GAMMA:
        d_fading = sample_gamma_fading(m, rng, (size, n_antennas))
    else:
        d_fading = sample_bound_fading(m, rng, (size, n_antennas))
    return LinkBatch(link, assoc, d_fading, i_trial, i_radii, link.tx_power * gains, i_fading)


@dataclass(frozen=True)
class NetworkRealization:
    """One trial of all three hops.

    In shared mode ``direct`` and ``rd`` hold a single multi-antenna
    realization; in independent mode they hold one single-antenna
    realization per destination antenna.
    """

    direct: tuple[LinkRealization, ...]
    br: LinkRealization
    rd: tuple[LinkRealization, ...]

    @staticmethod
    def _pick(parts: tuple[LinkRealization, ...], n: int) -> tuple[LinkRealization, int]:
        if len(parts) == 1:
            return parts[0], n
        return parts[n], 0


class _BlockSampler:
    """Draws the three hops for a block in a fixed order."""

    def __init__(self, params: NetworkParams, mode: CorrelationMode, desired: DesiredFading):
        self.n_u = params.ue_antennas
        self.mode = mode
        self.desired = desired
        self.direct = link_spec(params, LinkKind.DIRECT)
        self.br = link_spec(params, LinkKind.BR)
        if mode is CorrelationMode.SHARED:
            self.rd = link_spec(params, LinkKind.RD)
        else:
            # each antenna behaves as an independent single-antenna destination
            self.rd = link_spec(single_antenna_params(params), LinkKind.RD)

    def sample(self, size: int, rng: np.random.Generator):
        if self.mode is CorrelationMode.SHARED:
            direct = [sample_link_batch(self.direct, self.n_u, size, rng, self.desired)]
        else:
            direct = [sample_link_batch(self.direct, 1, size, rng, self.desired)
                      for _ in range(self.n_u)]
        br = sample_link_batch(self.br, 1, size, rng, self.desired)
        if self.mode is CorrelationMode.SHARED:
            rd = [sample_link_batch(self.rd, self.n_u, size, rng, self.desired)]
        else:
            rd = [sample_link_batch(self.rd, 1, size, rng, self.desired)
                  for _ in range(self.n_u)]
        return direct, br, rd


def sample_realization(params: NetworkParams, rng: np.random.Generator,
                       mode: CorrelationMode = CorrelationMode.SHARED,
                       desired: DesiredFading = DesiredFading.GAMMA) -> NetworkRealization:
    params = validate(params)
    direct, br, rd = _BlockSampler(params, mode, desired).sample(1, rng)
    return NetworkRealization(
        direct=tuple(b.realization(0) for b in direct),
        br=br.realization(0),
        rd=tuple(b.realization(0) for b in rd),
    )


def sinr_direct(real: NetworkRealization, params: NetworkParams, n: int) -> float:
    link, a = NetworkRealization._pick(real.direct, n)
    return float(link.sinr(params.pathloss_exp, params.noise_power)[a])


def sinr_br(real: NetworkRealization, params: NetworkParams) -> float:
    return float(real.br.sinr(params.pathloss_exp, params.noise_power)[0])


def sinr_rd(real: NetworkRealization, params: NetworkParams, n: int) -> float:
    link, a = NetworkRealization._pick(real.rd, n)
    return float(link.sinr(params.pathloss_exp, params.noise_power)[a])


# -- estimation ---------------------------------------------------------------

OUTCOMES = ("direct", "br", "rd", "total")


def _best_sinr(batches: list[LinkBatch]) -> np.ndarray:
    """Selection combining: per-trial maximum SINR over all antennas."""
    return np.max(np.concatenate([b.sinr() for b in batches], axis=1), axis=1)


def _run_block(args) -> np.ndarray:
    params, taus, sim, block, size = args
    rng = block_rng(sim.seed, block)
    direct, br, rd = _BlockSampler(params, sim.correlation_mode, sim.desired_fading).sample(size, rng)
    g_direct = _best_sinr(direct)
    g_br = br.sinr()[:, 0]
    g_rd = _best_sinr(rd)
    counts = np.zeros((len(OUTCOMES), len(taus)), dtype=np.int64)
    for i, tau in enumerate(taus):
        ok_d, ok_br, ok_rd = g_direct > tau, g_br > tau, g_rd > tau
        counts[:, i] = (ok_d.sum(), ok_br.sum(), ok_rd.sum(), (ok_d | (ok_br & ok_rd)).sum())
    return counts


def _blocks(trials: int):
    n_blocks = -(-trials // BLOCK_SIZE)
    return [(b, min(BLOCK_SIZE, trials - b * BLOCK_SIZE)) for b in range(n_blocks)]


def simulate_counts(params: NetworkParams, taus: Sequence[float], sim: SimConfig) -> np.ndarray:
    """Success counts, shape (4, len(taus)) in the order of ``OUTCOMES``."""
    params = validate(params)
    taus = tuple(float(t) for t in taus)
    jobs = [(params, taus, sim, b, size) for b, size in _blocks(sim.trials)]
    if sim.workers == 1 or len(jobs) == 1:
        parts = map(_run_block, jobs)
        return sum(parts, np.zeros((len(OUTCOMES), len(taus)), dtype=np.int64))
    with ProcessPoolExecutor(max_workers=sim.workers) as pool:
        parts = pool.map(_run_block, jobs)
        return sum(parts, np.zeros((len(OUTCOMES), len(taus)), dtype=np.int64))


def confidence_interval(successes: int, trials: int, level: float) -> tuple[float, float]:
    """Normal-approximation interval, Wilson near 0 or 1; clipped to [0, 1]."""
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    p = successes / trials
    if p * (1.0 - p) * trials < 25:
        denom = 1.0 + z * z / trials
        centre = (p + z * z / (2 * trials)) / denom
        half = z / denom * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    else:
        centre = p
        half = z * math.sqrt(p * (1 - p) / trials)
    return max(0.0, min(centre - half, p)), min(1.0, max(centre + half, p))


def _method(sim: SimConfig) -> str:
    return "sim_shared" if sim.correlation_mode is CorrelationMode.SHARED else "sim_indep"


def to_result(successes: int, sim: SimConfig, method: str | None = None) -> CoverageResult:
    lo, hi = confidence_interval(int(successes), sim.trials, sim.confidence_level)
    return CoverageResult(successes / sim.trials, method or _method(sim), lo, hi, sim.trials)


def estimate_all(params: NetworkParams, taus: Sequence[float],
                 sim: SimConfig) -> dict[str, list[CoverageResult]]:
    """Estimates of every outcome at every threshold from one shared run."""
    counts = simulate_counts(params, taus, sim)
    return {name: [to_result(c, sim) for c in row] for name, row in zip(OUTCOMES, counts)}


def estimate_coverage(params: NetworkParams, tau: float, sim: SimConfig) -> CoverageResult:
    """Covered iff direct succeeds, or both BR and RD succeed."""
    return estimate_all(params, [tau], sim)["total"][0]


def estimate_link_coverage(params: NetworkParams, tau: float, sim: SimConfig,
                           kind: LinkKind) -> CoverageResult:
    return estimate_all(params, [tau], sim)[kind.value][0]
