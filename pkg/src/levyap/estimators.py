"""Top-Lyapunov-exponent estimators.

Three routes are provided:

* ``lyapunov_direct``      tangent-growth accumulation with periodic
                           renormalization;
* ``lyapunov_khasminskii`` ergodic average of the log-radius drift of the
                           rescaled angle process (martingale parts are not
                           accumulated -- their time average vanishes);
* ``lyapunov_theorem33``   leading-order formula: eps^(2/3) times the
                           occupation average of the growth-rate integrand.

plus ``scaling_sweep`` fitting the log-log slope across a list of epsilons.

Constant-shear systems dispatch to vectorized lane kernels; everything else
runs through the generic Marcus integrator and moving-frame machinery.
Replicates are split into contiguous index chunks across worker processes;
per-replicate streams depend only on (seed, index), so results are
bit-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import frame as fr
from ._lanes import shear_angle_lanes, shear_direct_lanes
from .errors import (AllTrajectoriesExited, EmptyMeasure, ExitDetected,
                     InvalidParameter, NonPositiveEstimate)
from .marcus import StepperConfig, TrajectoryState, integrate, step
from .noise import (JumpMeasureSpec, NoiseModel, nu_quadrature,
                    nu_quadrature_quadratic, sample_block, trajectory_streams)
from .quadrature import check_converged, gauss_legendre
from .systems import rho_jump_even_sum


@dataclass
class EstimatorConfig:
    dt: float = 1e-3
    horizon: float = 1000.0
    replicates: int = 16
    seed: int = 0
    burn_in: float = 0.1
    renorm_interval: int = 10
    beta: float = 2.0 / 3.0
    workers: int = 1
    drift_stride: int = 10
    theta_bins: int = 256
    block_steps: int = 16384
    flow_substeps: int = 8
    max_restarts: int = 64
    x0: Optional[Sequence[float]] = None
    v0: Sequence[float] = (1.0, 0.5)
    theta0: float = 0.7

    def __post_init__(self):
        if self.replicates < 1:
            raise InvalidParameter("replicates must be >= 1")
        if not 0.0 <= self.burn_in < 1.0:
            raise InvalidParameter("burn_in fraction must lie in [0, 1)")


@dataclass
class LyapunovEstimate:
    value: float
    stderr: float
    method: str
    epsilon: float
    beta: float
    horizon: float
    replicates: int
    renorm_interval: int
    per_replicate: list = field(default_factory=list)
    restarts: int = 0
    exits: int = 0
    unreliable: bool = False
    extras: dict = field(default_factory=dict)


@dataclass
class OccupationMeasure:
    """Normalized histogram over the angle grid, optionally times x bins.

    theta-only: weights has shape (B,).  With ``x_centers`` of shape (nx, 2),
    weights has shape (nx, B) and the measure lives on the product grid.
    """

    theta_centers: np.ndarray
    weights: np.ndarray
    x_centers: Optional[np.ndarray] = None

    def __post_init__(self):
        total = float(np.sum(self.weights))
        if total <= 0.0:
            raise EmptyMeasure("occupation measure has no mass")
        self.weights = np.asarray(self.weights, dtype=float) / total


@dataclass
class SweepResult:
    epsilons: list
    estimates: list
    slope: float
    intercept: float
    residual: float
    excluded: list = field(default_factory=list)


def _chunks(n: int, workers: int):
    workers = max(1, min(workers, n))
    base, extra = divmod(n, workers)
    out, lo = [], 0
    for w in range(workers):
        hi = lo + base + (1 if w < extra else 0)
        if hi > lo:
            out.append(tuple(range(lo, hi)))
        lo = hi
    return out


def _run_chunked(worker: Callable, payload: tuple, n: int, workers: int) -> list:
    chunks = _chunks(n, workers)
    if len(chunks) == 1:
        return worker(payload, chunks[0])
    results = []
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        futures = [pool.submit(worker, payload, ch) for ch in chunks]
        for f in futures:
            results.extend(f.result())
    return results


def _spread(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    if len(arr) < 2:
        return mean, 0.0
    return mean, float(arr.std(ddof=1) / math.sqrt(len(arr)))


# ---------------------------------------------------------------------------
# direct route
# ---------------------------------------------------------------------------

def _direct_lane_worker(payload, indices):
    system, noise, epsilon, cfg = payload
    res = shear_direct_lanes(system.a, system.sigma,
                             np.full(len(indices), epsilon), noise,
                             cfg.dt, cfg.horizon, cfg.seed, indices,
                             renorm_interval=cfg.renorm_interval,
                             burn_in=cfg.burn_in, block_steps=cfg.block_steps,
                             v0=cfg.v0)
    lam = res.log_growth / res.growth_time
    return [(float(v), 0, False) for v in lam]


def _direct_generic_one(system, noise, epsilon, cfg, index):
    fields = system.fields(epsilon)
    scfg = StepperConfig(dt=cfg.dt, flow_substeps=cfg.flow_substeps,
                         tol_crit=system.hamiltonian().tol_crit,
                         block_steps=cfg.block_steps)
    x0 = np.asarray(cfg.x0 if cfg.x0 is not None else system.default_x0, float)
    growth = 0.0
    gtime = 0.0
    consumed = 0.0
    restarts = 0
    attempt = 0
    burn = cfg.burn_in * cfg.horizon
    while consumed < cfg.horizon and attempt <= cfg.max_restarts:
        streams = trajectory_streams(cfg.seed, index, attempt)
        summary = integrate(fields, noise, x0, cfg.horizon - consumed, scfg,
                            streams, v0=np.asarray(cfg.v0, float),
                            renorm_interval=cfg.renorm_interval,
                            burn_in_time=max(burn - consumed, 0.0),
                            raise_on_exit=False)
        growth += summary.log_growth
        gtime += summary.growth_time
        consumed += summary.final.t
        if not summary.exited:
            break
        restarts += 1
        attempt += 1
    failed = gtime < 0.5 * (1.0 - cfg.burn_in) * cfg.horizon
    lam = growth / gtime if gtime > 0 else math.nan
    return lam, restarts, failed


def _direct_generic_worker(payload, indices):
    system, noise, epsilon, cfg = payload
    return [_direct_generic_one(system, noise, epsilon, cfg, i) for i in indices]


def lyapunov_direct(system, noise: NoiseModel, epsilon: float,
                    cfg: EstimatorConfig) -> LyapunovEstimate:
    """Tangent-growth estimate; replicate spread gives the standard error."""
    worker = _direct_lane_worker if system.constant_shear else _direct_generic_worker
    rows = _run_chunked(worker, (system, noise, epsilon, cfg), cfg.replicates,
                        cfg.workers)
    lams = [r[0] for r in rows]
    restarts = sum(r[1] for r in rows)
    failures = sum(1 for r in rows if r[2])
    if failures == cfg.replicates:
        raise AllTrajectoriesExited(
            "every replicate exited before accumulating half the horizon")
    good = [l for l, _, f in rows if not f]
    value, stderr = _spread(good)
    return LyapunovEstimate(value, stderr, "direct", epsilon, cfg.beta,
                            cfg.horizon, cfg.replicates, cfg.renorm_interval,
                            per_replicate=lams, restarts=restarts,
                            exits=failures,
                            unreliable=restarts > 0.1 * cfg.replicates)


# ---------------------------------------------------------------------------
# Khasminskii drift-averaging route
# ---------------------------------------------------------------------------

def _khas_lane_worker(payload, indices):
    system, noise, epsilon, cfg = payload
    res = shear_angle_lanes(system.a, system.sigma,
                            np.full(len(indices), epsilon), cfg.beta, noise,
                            cfg.dt, cfg.horizon, cfg.seed, indices,
                            burn_in=cfg.burn_in, drift_stride=cfg.drift_stride,
                            theta_bins=cfg.theta_bins,
                            block_steps=cfg.block_steps,
                            theta0=cfg.theta0)
    return [(float(res.lam[j]), res.occupation[j], float(res.martingale_rate[j]),
             0, False) for j in range(len(indices))]


def _khas_generic_one(system, noise, epsilon, cfg, index):
    """Pair (x, theta) simulation with drift accumulation.

    On exit the pair restarts from the initial point with a fresh stream
    (the rest of the current noise block is discarded) and accumulation
    resumes; restarts are counted.
    """
    beta = cfg.beta
    fields = system.fields(epsilon)
    model = system.hamiltonian()
    scfg = StepperConfig(dt=cfg.dt, flow_substeps=cfg.flow_substeps,
                         tol_crit=model.tol_crit, block_steps=cfg.block_steps)
    coeffs_fn = system.coeffs
    v_fn = system.v_values
    rate = noise.gaussian_rate
    dt = cfg.dt
    n = int(round(cfg.horizon / dt))
    burn_steps = int(round(cfg.burn_in * n))
    x0 = np.asarray(cfg.x0 if cfg.x0 is not None else system.default_x0, float)
    x = x0.copy()
    theta = cfg.theta0
    acc = 0.0
    acc_irho = 0.0
    n_acc = 0
    n_irho = 0
    occ = np.zeros(cfg.theta_bins)
    bin_w = 2.0 * math.pi / cfg.theta_bins
    restarts = 0
    attempt = 0
    e_sh = epsilon ** beta
    step_no = 0
    streams = trajectory_streams(cfg.seed, index, attempt)
    while step_no < n:
        m = min(cfg.block_steps, n - step_no)
        block = sample_block(noise, dt, m, *streams)
        jpos = 0
        restart = False
        for i in range(m):
            jhi = jpos
            while jhi < len(block.jump_steps) and block.jump_steps[jhi] == i:
                jhi += 1
            co = system.coeffs_with_actions(x)
            wz1, wz2 = fr.wz_corrections(co, theta, epsilon, beta)
            sc = math.sin(theta) * math.cos(theta)
            if step_no >= burn_steps:
                acc += e_sh * co.shear * sc + 0.5 * rate * wz2
                n_acc += 1
                if step_no % cfg.drift_stride == 0:
                    acc_irho += compute_Irho(system, noise.measure, x, theta,
                                             epsilon, beta, noise=noise)
                    n_irho += 1
                    idx = int((theta % (2.0 * math.pi)) / bin_w) % cfg.theta_bins
                    occ[idx] += 1.0
            drift_th = (-e_sh * co.shear * math.sin(theta) ** 2
                        + 0.5 * rate * wz1)
            batch = block.batch(i, jpos, jhi)
            nojump = block.batch(i, len(block.jump_steps), len(block.jump_steps))
            try:
                state = step(fields, noise, TrajectoryState(0.0, x), nojump, scfg)
            except ExitDetected:
                restarts += 1
                attempt += 1
                step_no += 1
                if attempt > cfg.max_restarts:
                    return math.nan, restarts, True, occ
                x = x0.copy()
                theta = cfg.theta0
                streams = trajectory_streams(cfg.seed, index, attempt)
                restart = True
                break
            xc = state.x
            theta = theta + dt * drift_th
            s1, _ = fr.polar_fields(coeffs_fn(xc), theta, epsilon, beta)
            theta = theta + float(s1 @ batch.brownian)
            for j in range(batch.n_jumps):
                z = np.zeros(fields.d)
                z[batch.jump_components[j]] = batch.jump_marks[j]
                y = fr.angle_jump_flow(coeffs_fn, v_fn, z, xc, theta, epsilon,
                                       beta, cfg.flow_substeps)
                xc, theta = y[:2], float(y[2])
            x = xc
            jpos = jhi
            step_no += 1
        if restart:
            continue
    if n_acc == 0:
        return math.nan, restarts, True, occ
    lam = acc / n_acc + (acc_irho / n_irho if n_irho else 0.0)
    return lam, restarts, False, occ


def _khas_generic_worker(payload, indices):
    system, noise, epsilon, cfg = payload
    out = []
    for i in indices:
        lam, restarts, failed, occ = _khas_generic_one(system, noise, epsilon, cfg, i)
        out.append((lam, occ, math.nan, restarts, failed))
    return out


def lyapunov_khasminskii(system, noise: NoiseModel, epsilon: float,
                         cfg: EstimatorConfig,
                         force_generic: bool = False) -> LyapunovEstimate:
    """Ergodic average of the log-radius drift of the rescaled pair process.

    Accumulates the shear drift term, the Wong-Zakai correction of the
    continuous noise, and the jump compensator integral (by quadrature on a
    sample stride).  Brownian and compensated-jump martingale increments are
    not accumulated.
    """
    use_lanes = system.constant_shear and not force_generic
    worker = _khas_lane_worker if use_lanes else _khas_generic_worker
    rows = _run_chunked(worker, (system, noise, epsilon, cfg), cfg.replicates,
                        cfg.workers)
    lams = [r[0] for r in rows]
    restarts = sum(r[3] for r in rows)
    failures = sum(1 for r in rows if r[4])
    if failures == cfg.replicates:
        raise AllTrajectoriesExited(
            "every replicate exited before accumulating half the horizon")
    good = [r[0] for r in rows if not r[4]]
    value, stderr = _spread(good)
    occ = np.sum([r[1] for r in rows], axis=0)
    mart = [r[2] for r in rows if not math.isnan(r[2])]
    est = LyapunovEstimate(value, stderr, "khasminskii", epsilon, cfg.beta,
                           cfg.horizon, cfg.replicates, cfg.renorm_interval,
                           per_replicate=lams, restarts=restarts,
                           exits=failures,
                           unreliable=restarts > 0.1 * cfg.replicates)
    est.extras["occupation"] = occ
    if mart:
        est.extras["martingale_rate"] = _spread(mart)
    return est


# ---------------------------------------------------------------------------
# compensator integral of the log-radius equation
# ---------------------------------------------------------------------------

def compute_Irho(system, measure: Optional[JumpMeasureSpec], x, theta: float,
                 epsilon: float, beta: float = 2.0 / 3.0,
                 noise: Optional[NoiseModel] = None, z_panel_nodes: int = 16,
                 check: bool = False) -> float:
    """int [ zeta2(z)(x, theta) - sum_k z_k sigma2_k(x, theta) ] nu(dz).

    Constant-shear systems use the closed-form even-sum of the log-radius
    jump (the linear part cancels under the symmetric measure); other
    systems integrate the joint jump flow.
    """
    if measure is None or not measure.has_jumps:
        return 0.0
    lo = noise.sampling_floor if noise is not None else measure.floor_delta
    if system.constant_shear:
        amp = epsilon ** (1.0 - beta) * system.sigma
        if lo > 0.0:
            z, w = nu_quadrature(measure, lo=lo, per_panel=z_panel_nodes)
            out = float(rho_jump_even_sum(theta, amp * z) @ w)
            if check:
                z2, w2 = nu_quadrature(measure, lo=lo, per_panel=2 * z_panel_nodes)
                check_converged(out, float(rho_jump_even_sum(theta, amp * z2) @ w2))
            return out
        z, w = nu_quadrature_quadratic(measure, n=4 * z_panel_nodes)
        vals = rho_jump_even_sum(theta, amp * z) / (z * z)
        return float(vals @ w)
    coeffs_fn = system.coeffs
    v_fn = system.v_values
    return fr.compute_Irho_generic(coeffs_fn, v_fn, measure, x, theta, epsilon,
                                   beta=beta, z_panel_nodes=z_panel_nodes,
                                   check=check)


# ---------------------------------------------------------------------------
# leading-order formula route
# ---------------------------------------------------------------------------

def shear_sigma0_profile(system, noise: NoiseModel, epsilon: float,
                         theta_grid: np.ndarray, beta: float = 2.0 / 3.0,
                         inner_nodes: int = 8, z_panel_nodes: int = 16):
    """Growth-rate integrand on an angle grid for a constant-shear system,
    split into the shear block and the noise block (they enter the
    leading-order formula at eps^beta and eps^(2-2beta) respectively),
    fully vectorized (grid x z-nodes x flow-nodes)."""
    th = np.asarray(theta_grid, dtype=float)
    a, sig = system.a, system.sigma
    rate = noise.gaussian_rate
    shear_part = a * np.sin(th) * np.cos(th)
    noise_part = rate * sig ** 2 * (
        0.5 * np.cos(th) ** 2 - np.sin(th) ** 2 * np.cos(th) ** 2)
    measure = noise.measure
    if measure is None or not measure.has_jumps or noise.sampling_floor >= measure.cutoff_c:
        return shear_part, noise_part
    z, w = nu_quadrature(measure, lo=noise.sampling_floor, per_panel=z_panel_nodes)
    bq, bw = gauss_legendre(inner_nodes, 0.0, 1.0)
    amp = epsilon ** (1.0 - beta) * sig
    # zeta1 flow of the shear in closed form, both mark signs
    jump_total = np.zeros_like(th)
    for sgn in (1.0, -1.0):
        s = sgn * amp * z[None, :, None] * bq[None, None, :]   # (1, nz, nb)
        zeta = np.arctan2(np.sin(th)[:, None, None] + s * np.cos(th)[:, None, None],
                          np.cos(th)[:, None, None])
        g = np.cos(2.0 * zeta) * np.cos(zeta) ** 2              # (nth, nz, nb)
        inner = g @ (bw * (1.0 - bq))                           # (nth, nz)
        jump_total += sig ** 2 * (inner * (z * z)) @ w
    return shear_part, noise_part + jump_total


def lyapunov_theorem33(system, noise: NoiseModel, epsilon: float,
                       occupation: OccupationMeasure,
                       beta: float = 2.0 / 3.0, **quad_kw) -> float:
    """Leading-order formula: the occupation average of the growth-rate
    integrand, the shear block scaled by eps^beta and the noise block by
    eps^(2-2beta).  At the standard beta = 2/3 this is eps^(2/3) times the
    average of the combined integrand."""
    th = occupation.theta_centers
    e_sh = epsilon ** beta
    e_nz = epsilon ** (2.0 - 2.0 * beta)
    if system.constant_shear:
        shear_part, noise_part = shear_sigma0_profile(system, noise, epsilon,
                                                      th, beta=beta, **quad_kw)
        w = occupation.weights
        if w.ndim == 2:
            w = w.sum(axis=0)
        return float(w @ (e_sh * shear_part + e_nz * noise_part))
    if occupation.x_centers is None:
        raise InvalidParameter(
            "position-dependent systems need an occupation measure with x bins")
    coeffs_fn = system.coeffs
    v_fn = system.v_values
    total = 0.0
    for ix, xc in enumerate(occupation.x_centers):
        for it, t in enumerate(th):
            wgt = occupation.weights[ix, it]
            if wgt > 0.0:
                xc_ = np.asarray(xc, float)
                full = fr.sigma0(coeffs_fn, v_fn, noise.measure, xc_, float(t),
                                 epsilon, beta=beta, **quad_kw)
                shear_part = coeffs_fn(xc_).shear * math.sin(t) * math.cos(t)
                total += wgt * (e_sh * shear_part + e_nz * (full - shear_part))
    return float(total)


def gather_occupation(system, noise: NoiseModel, epsilon: float,
                      cfg: EstimatorConfig) -> OccupationMeasure:
    """Angle histogram of a burned-in run of the rescaled pair process."""
    est = lyapunov_khasminskii(system, noise, epsilon, cfg)
    bins = cfg.theta_bins
    centers = (np.arange(bins) + 0.5) * 2.0 * math.pi / bins
    return OccupationMeasure(centers, est.extras["occupation"])


def lyapunov_theorem33_estimate(system, noise: NoiseModel, epsilon: float,
                                cfg: EstimatorConfig) -> LyapunovEstimate:
    """Theorem-route estimate with replicate spread from per-replicate
    occupation histograms."""
    worker = _khas_lane_worker if system.constant_shear else _khas_generic_worker
    rows = _run_chunked(worker, (system, noise, epsilon, cfg), cfg.replicates,
                        cfg.workers)
    bins = cfg.theta_bins
    centers = (np.arange(bins) + 0.5) * 2.0 * math.pi / bins
    lams = []
    for r in rows:
        occ = OccupationMeasure(centers, r[1])
        lams.append(lyapunov_theorem33(system, noise, epsilon, occ, beta=cfg.beta))
    value, stderr = _spread(lams)
    return LyapunovEstimate(value, stderr, "theorem33", epsilon, cfg.beta,
                            cfg.horizon, cfg.replicates, cfg.renorm_interval,
                            per_replicate=lams)


# ---------------------------------------------------------------------------
# epsilon sweep
# ---------------------------------------------------------------------------

def scaling_sweep(system, noise: NoiseModel, eps_list, cfg: EstimatorConfig,
                  estimate_fn: Optional[Callable] = None) -> SweepResult:
    """Direct estimates per epsilon and a least-squares log-log slope fit.

    Nonpositive estimates are excluded from the fit (reported in
    ``excluded``); fewer than three positive values raise
    NonPositiveEstimate.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 4:
        raise InvalidParameter("a sweep needs at least 4 epsilon values")
    if any(e2 <= e1 for e1, e2 in zip(eps_list, eps_list[1:])):
        raise InvalidParameter("epsilon values must be strictly increasing")
    if max(eps_list) < 4.0 * min(eps_list):
        raise InvalidParameter("epsilon values must span at least a factor of 4")
    fn = estimate_fn or lyapunov_direct
    estimates = [fn(system, noise, e, cfg) for e in eps_list]
    pts = [(e, est.value) for e, est in zip(eps_list, estimates)]
    excluded = [e for e, v in pts if v <= 0.0]
    kept = [(e, v) for e, v in pts if v > 0.0]
    if len(kept) < 3:
        raise NonPositiveEstimate(
            f"only {len(kept)} positive estimates; cannot fit the log-log slope")
    lx = np.log([e for e, _ in kept])
    ly = np.log([v for _, v in kept])
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = float(np.sqrt(res[0] / len(kept))) if len(res) else 0.0
    return SweepResult(eps_list, estimates, float(slope), float(intercept),
                       resid, excluded)
