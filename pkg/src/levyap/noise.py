"""Sampling of the driving noise: Brownian increments plus truncated
power-law jumps, and closed-form moments of the jump measure.

The jump measure is symmetric alpha-stable restricted to magnitudes in
[floor_delta, cutoff_c):  nu(dz) = c_alpha |z|^(-1-alpha) dz.  Components of
a d-dimensional driver are independent, each carrying the one-dimensional
measure.

Reproducibility contract
------------------------
Every trajectory owns two generator streams derived from a 64-bit master
seed and the trajectory index by the splitting rule

    key      = master_seed XOR (index * 0x9E3779B97F4A7C15 mod 2^64)
    brownian = default_rng(SeedSequence([key, 0, attempt]))
    jumps    = default_rng(SeedSequence([key, 1, attempt]))

(`attempt` counts restarts after an exit).  Within a trajectory, increments
are drawn block-wise in a fixed order (``sample_block``), so results are
bit-reproducible given (seed, index) independent of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import DivergentMoment, InvalidMeasure, InvalidParameter
from .quadrature import nu_nodes, nu_nodes_regularized

GOLDEN64 = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class JumpMeasureSpec:
    """Truncated symmetric alpha-stable jump measure.

    alpha       stability index in (0, 2)
    c_alpha     intensity constant >= 0 (0 means no jump part)
    cutoff_c    large-jump truncation radius > 0
    floor_delta small-jump floor in [0, cutoff_c); sampling requires > 0
    dimension   number of independent driving components
    """

    alpha: float
    c_alpha: float
    cutoff_c: float
    floor_delta: float = 0.0
    dimension: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise InvalidParameter(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.c_alpha < 0.0:
            raise InvalidParameter("c_alpha must be nonnegative")
        if self.cutoff_c <= 0.0:
            raise InvalidParameter("cutoff_c must be positive")
        if not 0.0 <= self.floor_delta < self.cutoff_c:
            raise InvalidParameter("floor_delta must lie in [0, cutoff_c)")
        if self.dimension < 1:
            raise InvalidParameter("dimension must be >= 1")

    @property
    def has_jumps(self) -> bool:
        return self.c_alpha > 0.0

    def intensity(self, lo: Optional[float] = None, hi: Optional[float] = None) -> float:
        """Total mass nu({lo <= |z| < hi}) of one component."""
        lo = self.floor_delta if lo is None else lo
        hi = self.cutoff_c if hi is None else hi
        if not self.has_jumps or hi <= lo:
            return 0.0
        if lo <= 0.0:
            raise DivergentMoment("jump intensity is infinite without a floor")
        return 2.0 * self.c_alpha * (lo ** -self.alpha - hi ** -self.alpha) / self.alpha


def jump_moment(measure: JumpMeasureSpec, p: float, lo: float, hi: float,
                signed: bool = False) -> float:
    """Closed form of  int_{lo <= |z| < hi} |z|^p nu(dz).

    With ``signed=True`` the integrand is z^p over the signed symmetric
    region; for odd p this vanishes identically by symmetry.
    """
    if not 0.0 <= lo < hi or hi > measure.cutoff_c * (1 + 1e-12):
        raise InvalidParameter(f"need 0 <= lo < hi <= cutoff_c, got [{lo}, {hi})")
    if not measure.has_jumps:
        return 0.0
    if signed and int(p) == p and int(p) % 2 == 1:
        return 0.0
    a, C = measure.alpha, measure.c_alpha
    if lo == 0.0 and p <= a:
        raise DivergentMoment(f"moment p={p} diverges at the origin for alpha={a}")
    if abs(p - a) < 1e-12:
        return 2.0 * C * math.log(hi / lo)
    return 2.0 * C * (hi ** (p - a) - lo ** (p - a)) / (p - a)


@dataclass(frozen=True)
class NoiseModel:
    """Full driving-noise description used by integrators and estimators.

    brownian        include the unit-covariance Brownian part
    ar_small_jumps  Asmussen-Rosinski mode: dropped jumps |z| < floor_delta
                    are replaced by a variance-matched Gaussian
    ar_threshold    if above floor_delta, jumps in [floor_delta, ar_threshold)
                    are also replaced by a variance-matched Gaussian; only the
                    remaining band [ar_threshold, cutoff_c) is sampled as
                    discrete events.  Keeps the second moment exact while
                    making very-high-activity measures affordable.
    """

    measure: Optional[JumpMeasureSpec]
    brownian: bool = True
    ar_small_jumps: bool = False
    ar_threshold: float = 0.0

    @property
    def dimension(self) -> int:
        return self.measure.dimension if self.measure is not None else 1

    @property
    def sampling_floor(self) -> float:
        m = self.measure
        if m is None or not m.has_jumps:
            return 0.0
        return max(m.floor_delta, self.ar_threshold)

    @property
    def gaussian_rate(self) -> float:
        """Variance per unit time of the continuous part of each component."""
        rate = 1.0 if self.brownian else 0.0
        m = self.measure
        if m is not None and m.has_jumps:
            if self.ar_small_jumps and m.floor_delta > 0.0:
                rate += jump_moment(m, 2.0, 0.0, m.floor_delta)
            if self.ar_threshold > m.floor_delta:
                hi = min(self.ar_threshold, m.cutoff_c)
                rate += jump_moment(m, 2.0, m.floor_delta, hi)
        return rate

    @property
    def jump_rate(self) -> float:
        """Poisson rate (per unit time, per component) of sampled jump events."""
        m = self.measure
        if m is None or not m.has_jumps or self.sampling_floor >= m.cutoff_c:
            return 0.0
        if self.sampling_floor <= 0.0:
            raise InvalidMeasure(
                "jump activity is infinite: choose floor_delta > 0 or enable "
                "the Gaussian small-jump substitute")
        return m.intensity(self.sampling_floor, m.cutoff_c)


def trajectory_streams(master_seed: int, index: int, attempt: int = 0):
    """Brownian and jump generator streams for one trajectory."""
    key = (int(master_seed) ^ ((index * GOLDEN64) & _MASK64)) & _MASK64
    mk = lambda role: np.random.default_rng(np.random.SeedSequence([key, role, attempt]))
    return mk(0), mk(1)


def sample_brownian(dim: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian increment vector with per-component variance dt.

    dt = 0 returns zeros without consuming the stream.
    """
    if dt < 0:
        raise InvalidParameter("dt must be nonnegative")
    if dt == 0.0:
        return np.zeros(dim)
    return rng.normal(0.0, math.sqrt(dt), dim)


@dataclass
class IncrementBatch:
    """Noise for a single step: Gaussian vector plus time-ordered jumps.

    jumps are (offset, component, mark) triples with offsets increasing in
    [0, dt) and |mark| in [sampling floor, cutoff_c).
    """

    dt: float
    brownian: np.ndarray
    jump_offsets: np.ndarray = field(default_factory=lambda: np.empty(0))
    jump_components: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    jump_marks: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n_jumps(self) -> int:
        return len(self.jump_marks)

    def jump_vectors(self, dim: int) -> np.ndarray:
        """Marks as (n_jumps, dim) one-hot vectors."""
        z = np.zeros((self.n_jumps, dim))
        z[np.arange(self.n_jumps), self.jump_components] = self.jump_marks
        return z


def _invcdf_magnitudes(measure: JumpMeasureSpec, lo: float, u: np.ndarray) -> np.ndarray:
    a = measure.alpha
    lo_p = lo ** -a
    hi_p = measure.cutoff_c ** -a
    return (lo_p - u * (lo_p - hi_p)) ** (-1.0 / a)


def sample_jumps(measure: JumpMeasureSpec, dt: float, rng: np.random.Generator,
                 lo: Optional[float] = None):
    """Jumps of one step: Poisson count, inverse-CDF magnitudes, fair signs,
    uniform offsets sorted increasingly.  Returns (offsets, components, marks).
    """
    if dt < 0:
        raise InvalidParameter("dt must be nonnegative")
    lo = measure.floor_delta if lo is None else lo
    if measure.has_jumps and lo <= 0.0:
        raise InvalidMeasure(
            "floor_delta = 0 has infinite jump activity; choose a positive "
            "floor or enable the Gaussian small-jump substitute")
    empty = (np.empty(0), np.empty(0, dtype=np.int64), np.empty(0))
    if dt == 0.0 or not measure.has_jumps or lo >= measure.cutoff_c:
        return empty
    rate = measure.intensity(lo, measure.cutoff_c)
    offs, comps, marks = [], [], []
    for k in range(measure.dimension):
        n = int(rng.poisson(rate * dt))
        if n == 0:
            continue
        t = dt * rng.random(n)
        mag = _invcdf_magnitudes(measure, lo, rng.random(n))
        sgn = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        offs.append(t)
        comps.append(np.full(n, k, dtype=np.int64))
        marks.append(sgn * mag)
    if not offs:
        return empty
    offs = np.concatenate(offs)
    comps = np.concatenate(comps)
    marks = np.concatenate(marks)
    order = np.argsort(offs, kind="stable")
    return offs[order], comps[order], marks[order]


@dataclass
class BlockIncrements:
    """Pre-sampled noise for a run of consecutive steps.

    gauss has shape (n_steps, dim) and is already scaled to the model's
    continuous variance rate.  Jump events are sorted by (step, offset).
    """

    dt: float
    n_steps: int
    gauss: np.ndarray
    jump_steps: np.ndarray
    jump_offsets: np.ndarray
    jump_components: np.ndarray
    jump_marks: np.ndarray

    def batch(self, i: int, jlo: int, jhi: int) -> IncrementBatch:
        return IncrementBatch(self.dt, self.gauss[i],
                              self.jump_offsets[jlo:jhi],
                              self.jump_components[jlo:jhi],
                              self.jump_marks[jlo:jhi])

    def step_mark_sums(self) -> np.ndarray:
        """Per-step sum of marks of each component, shape (n_steps, dim)."""
        dim = self.gauss.shape[1]
        s = np.zeros((self.n_steps, dim))
        if len(self.jump_marks):
            np.add.at(s, (self.jump_steps, self.jump_components), self.jump_marks)
        return s


def sample_block(noise: NoiseModel, dt: float, n_steps: int,
                 rng_brownian: np.random.Generator,
                 rng_jumps: np.random.Generator) -> BlockIncrements:
    """Draw all increments for ``n_steps`` consecutive steps.

    Draw order (fixed; part of the reproducibility contract):
      1. Gaussian table (n_steps, dim) from the brownian stream, std
         sqrt(gaussian_rate * dt) per entry;
      2. per component: Poisson counts per step, then offsets, magnitudes
         and signs for all events of the block in bulk from the jump stream.
    """
    dim = noise.dimension
    rate = noise.gaussian_rate
    if rate > 0.0 and dt > 0.0:
        gauss = rng_brownian.normal(0.0, math.sqrt(rate * dt), (n_steps, dim))
    else:
        gauss = np.zeros((n_steps, dim))
    steps, offs, comps, marks = [], [], [], []
    jrate = noise.jump_rate
    if jrate > 0.0 and dt > 0.0:
        m = noise.measure
        lo = noise.sampling_floor
        per_comp = jrate  # intensity of one component over [lo, c)
        for k in range(dim):
            counts = rng_jumps.poisson(per_comp * dt, n_steps)
            total = int(counts.sum())
            if total == 0:
                continue
            t = dt * rng_jumps.random(total)
            mag = _invcdf_magnitudes(m, lo, rng_jumps.random(total))
            sgn = np.where(rng_jumps.random(total) < 0.5, -1.0, 1.0)
            steps.append(np.repeat(np.arange(n_steps), counts))
            offs.append(t)
            comps.append(np.full(total, k, dtype=np.int64))
            marks.append(sgn * mag)
    if steps:
        steps = np.concatenate(steps)
        offs = np.concatenate(offs)
        comps = np.concatenate(comps)
        marks = np.concatenate(marks)
        order = np.lexsort((offs, steps))
        steps, offs, comps, marks = steps[order], offs[order], comps[order], marks[order]
    else:
        steps = np.empty(0, dtype=np.int64)
        offs = np.empty(0)
        comps = np.empty(0, dtype=np.int64)
        marks = np.empty(0)
    return BlockIncrements(dt, n_steps, gauss, steps, offs, comps, marks)


@lru_cache(maxsize=256)
def _nu_nodes_cached(alpha: float, c_alpha: float, lo: float, hi: float,
                     per_panel: int):
    z, w = nu_nodes(alpha, c_alpha, lo, hi, per_panel=per_panel)
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


def nu_quadrature(measure: JumpMeasureSpec, lo: Optional[float] = None,
                  per_panel: int = 16):
    """One-sided (z, w) nodes for smooth integrands over [lo, cutoff_c).

    Cached per measure; callers must not mutate the returned arrays.
    """
    lo = measure.floor_delta if lo is None else lo
    if not measure.has_jumps:
        return np.empty(0), np.empty(0)
    return _nu_nodes_cached(measure.alpha, measure.c_alpha, lo,
                            measure.cutoff_c, per_panel)


def nu_quadrature_quadratic(measure: JumpMeasureSpec, n: int = 64,
                            lo: float = 0.0):
    """One-sided (z, w) nodes for integrands z^2 G(z), valid from lo = 0.

    Weights absorb the z^2 factor: sum w_i G(z_i).
    """
    if not measure.has_jumps:
        return np.empty(0), np.empty(0)
    return nu_nodes_regularized(measure.alpha, measure.c_alpha,
                                measure.cutoff_c, n=n, lo=lo)
