"""Posterior-accuracy metrics, drift statistics and convergence bounds.

Provides

* exact 2-Wasserstein distances between Gaussians and moment fits of
  empirical particle clouds;
* posterior-mean mean-squared-error summaries of runs;
* the theoretical convergence bound for the federated Langevin protocols on a
  strongly log-concave target, as a per-iteration sequence;
* the client-drift upper bounds ``E[V_theta] <= v_theta_bound`` and
  ``E[V_c] <= K^2 L^2 E[V_theta] + K sum_k sigma_k^2``;
* predictive-error helpers for comparing ensemble and point estimates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import GaussianDist, RegularityConstants


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def gaussian_w2_squared(p: GaussianDist, q: GaussianDist) -> float:
    """Squared 2-Wasserstein distance between two Gaussians.

    Uses the closed form ||m1 - m2||^2 + tr(C1 + C2 - 2 (C2^1/2 C1 C2^1/2)^1/2)
    with symmetric eigendecompositions throughout; the trace term is clamped
    at zero to absorb rounding on near-identical inputs.
    """
    dm = p.mean - q.mean
    root_q = _psd_sqrt(q.covariance)
    cross = _psd_sqrt(root_q @ p.covariance @ root_q)
    trace_term = float(np.trace(p.covariance) + np.trace(q.covariance) - 2.0 * np.trace(cross))
    return float(dm @ dm) + max(trace_term, 0.0)


def empirical_gaussian(samples: np.ndarray) -> GaussianDist:
    """Moment-match a Gaussian to rows of ``samples`` (shape (n, d), n >= d + 1)."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ValueError(f"expected a 2-d sample array, got shape {samples.shape}")
    n, d = samples.shape
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} samples to fit a {d}-dimensional Gaussian, got {n}")
    mean = samples.mean(axis=0)
    cov = np.cov(samples, rowvar=False, ddof=1).reshape(d, d)
    vals = np.linalg.eigvalsh(cov)
    if vals[0] < 0:
        if vals[0] < -1e-8 * max(vals[-1], 1.0):
            warnings.warn(f"sample covariance has negative eigenvalue {vals[0]:.3e}; clamping")
        vecs = np.linalg.eigh(cov)[1]
        cov = (vecs * np.clip(np.linalg.eigvalsh(cov), 0.0, None)) @ vecs.T
        cov = 0.5 * (cov + cov.T)
    return GaussianDist(mean=mean, covariance=cov)


# ----------------------------------------------------------- run summaries --- #


def posterior_mean_estimate(device_mean: np.ndarray) -> np.ndarray:
    """Posterior-mean point estimates, one per replicate.

    ``device_mean`` has shape (replicates, devices, dim) holding per-device
    post-burn-in time averages; the estimate averages over devices as well.
    """
    return np.asarray(device_mean).mean(axis=1)


def squared_error(estimates: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-replicate squared distance ||estimate - target||^2."""
    diff = np.atleast_2d(estimates) - target
    return np.sum(diff * diff, axis=-1)


def per_device_mse(device_mean: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Device-averaged squared error of the per-device posterior-mean estimates.

    This is the headline accuracy metric: each device's own post-burn-in time
    average is compared to the target and the squared errors are averaged over
    devices, so inter-device particle drift contributes.  Returns one value
    per replicate.
    """
    dm = np.asarray(device_mean)
    diff = dm - target
    return np.sum(diff * diff, axis=-1).mean(axis=-1)


def running_mse(avg_traj: np.ndarray, s_burn: int, target: np.ndarray) -> np.ndarray:
    """Running posterior-mean MSE per iteration, replicate-averaged.

    Entry s is the squared error of the time average of the device-averaged
    iterates over rounds (s_burn, s], averaged over replicates; entries with
    s <= s_burn are nan.
    """
    traj = np.asarray(avg_traj)
    R, S1, d = traj.shape
    out = np.full(S1 - 1, np.nan)
    csum = np.cumsum(traj[:, s_burn + 1:, :], axis=1)
    counts = np.arange(1, S1 - 1 - s_burn + 1)
    est = csum / counts[None, :, None]
    err = np.sum((est - target) ** 2, axis=2)
    out[s_burn:] = err.mean(axis=0)
    return out


def w2_trajectory(avg_traj: np.ndarray, posterior: GaussianDist,
                  iterations) -> np.ndarray:
    """Empirical squared 2-Wasserstein distance to ``posterior`` at chosen rounds.

    At each requested round the device-averaged particles across replicates
    are moment-matched to a Gaussian and compared in closed form.
    """
    traj = np.asarray(avg_traj)
    out = np.empty(len(iterations))
    for i, s in enumerate(iterations):
        fit = empirical_gaussian(traj[:, s, :])
        out[i] = gaussian_w2_squared(fit, posterior)
    return out


# ------------------------------------------------------- convergence bound --- #


def contraction_gamma(eta: float, strong_convexity: float, smoothness: float) -> float:
    """Per-step contraction factor of the Langevin recursion on the benchmark.

    Valid for step sizes up to 2/smoothness; below 2/(mu + L) the factor is
    1 - eta mu, between the two thresholds it is eta L - 1.
    """
    mu, L = strong_convexity, smoothness
    if eta <= 0:
        raise ValueError("step size must be positive")
    if eta <= 2.0 / (mu + L):
        return 1.0 - eta * mu
    if eta <= 2.0 / L:
        return eta * L - 1.0
    raise ValueError(f"step size {eta} exceeds 2/smoothness = {2.0 / L:.6g}; no contraction guarantee")


@dataclass
class BoundInputs:
    """Everything the convergence-bound evaluator needs.

    ``beta_by_round`` is the realized residual channel-noise power per round
    (zero on rounds without wireless aggregation); ``w2_init_sq`` the squared
    2-Wasserstein distance between the (deterministic) initialization and the
    target posterior.
    """

    smoothness: float
    strong_convexity: float
    grad_bound: float
    sigma_sq_sum: float
    eta: float
    p_c: float
    k: int
    dim: int
    w2_init_sq: float
    beta_by_round: np.ndarray

    @classmethod
    def from_run(cls, result, posterior: GaussianDist, replicate: int = 0) -> "BoundInputs":
        c = result.constants
        cfg = result.config
        init = GaussianDist(mean=np.zeros(cfg.dim), covariance=np.zeros((cfg.dim, cfg.dim)))
        return cls(smoothness=c.smoothness, strong_convexity=c.strong_convexity,
                   grad_bound=c.grad_bound, sigma_sq_sum=c.grad_noise_sq_sum,
                   eta=cfg.eta, p_c=cfg.p_c, k=cfg.k, dim=cfg.dim,
                   w2_init_sq=gaussian_w2_squared(init, posterior),
                   beta_by_round=result.beta_by_round(replicate))


def drift_free_term(inputs: BoundInputs) -> float:
    """The iteration-independent part of the convergence bound."""
    eta, L, K, pc, d = inputs.eta, inputs.smoothness, inputs.k, inputs.p_c, inputs.dim
    G2 = inputs.grad_bound ** 2
    gamma = contraction_gamma(eta, inputs.strong_convexity, L)
    bracket = (eta ** 4 * L ** 3 * d / (3.0 * K)
               + eta ** 3 * L ** 2 * d
               + (eta ** 2 / K + 4.0 * eta ** 4 * L ** 2 / (K * pc)) * inputs.sigma_sq_sum
               + 6.0 * eta ** 4 * L ** 2 * G2 / pc ** 2
               + 4.0 * eta ** 3 * L ** 2 * (K - 1) * d / (K * pc))
    return 8.0 * (1.0 + gamma) / (3.0 * (1.0 - gamma) ** 2) * bracket


def w2_bound_sequence(inputs: BoundInputs, beta_mode: str = "per_round") -> np.ndarray:
    """Upper bound on the squared 2-Wasserstein distance after each round.

    Returns an array of length S + 1 (entry s bounds the distance after s
    rounds).  ``beta_mode`` selects how the residual-channel-noise term is
    accumulated:

    * ``"per_round"``: each round's realized residual power enters once and
      is contracted forward; rounds without wireless aggregation contribute
      zero, so the aggregation frequency is already reflected in the realized
      sequence.
    * ``"final"``: the residual power is frozen at its most recent realized
      value and weighted by the aggregation probability inside a full
      geometric sum, matching a reading where a single representative power
      level stands in for the whole history.

    Both variants upper bound the distance whenever the realized powers
    dominate their per-round expectations.
    """
    if beta_mode not in ("per_round", "final"):
        raise ValueError(f"unknown beta_mode {beta_mode!r}")
    beta = np.asarray(inputs.beta_by_round, dtype=float)
    S = len(beta)
    gamma = contraction_gamma(inputs.eta, inputs.strong_convexity, inputs.smoothness)
    r2 = ((1.0 + gamma) / 2.0) ** 2
    const = drift_free_term(inputs)
    d, pc = inputs.dim, inputs.p_c

    out = np.empty(S + 1)
    out[0] = inputs.w2_init_sq
    contracted = inputs.w2_init_sq
    channel = 0.0
    last_beta = 0.0
    for s in range(1, S + 1):
        contracted *= r2
        b = beta[s - 1]
        if b > 0.0:
            last_beta = b
        if beta_mode == "per_round":
            channel = channel * r2 + r2 * d * b
        else:
            channel = last_beta * pc * d * r2 * (1.0 - r2 ** s) / (1.0 - r2)
        out[s] = contracted + channel + const
    return out


# ------------------------------------------------------------ client drift --- #


def drift_bounds(constants: RegularityConstants, eta: float, p_c: float,
                 k: int, dim: int, v_theta_measured: float) -> tuple[float, float]:
    """Theoretical ceilings for the two client-drift statistics.

    Returns ``(v_theta_bound, v_c_bound)`` where the second substitutes the
    measured divergence average for its expectation.
    """
    sig = constants.grad_noise_sq_sum
    G2 = constants.grad_bound ** 2
    v_theta_bound = (2.0 * (1.0 - p_c) / p_c) * (
        (2.0 + p_c) * eta ** 2 / p_c * G2
        + eta ** 2 / k * sig
        + 2.0 * (k - 1) * eta * dim / k)
    v_c_bound = k ** 2 * constants.smoothness ** 2 * v_theta_measured + k * sig
    return v_theta_bound, v_c_bound


# ------------------------------------------------------- predictive errors --- #


def predictive_error(theta, test_inputs: np.ndarray, test_targets: np.ndarray) -> float:
    """Mean squared prediction error on a held-out set.

    ``theta`` may be a single parameter vector or an ensemble (rows are
    particles); an ensemble predicts with its posterior-predictive mean.
    ``test_inputs`` has covariates in columns (shape (d, m)).
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 2:
        theta = theta.mean(axis=0)
    resid = theta @ test_inputs - test_targets
    return float(np.mean(resid * resid))


def batch_means_se(chain: np.ndarray) -> np.ndarray:
    """Monte-Carlo standard error of a correlated chain's mean via batch means.

    Splits the chain into floor(sqrt(n)) consecutive batches and uses the
    batch-mean spread; works per coordinate for 2-d input (n, d).
    """
    chain = np.asarray(chain, dtype=float)
    squeeze = chain.ndim == 1
    if squeeze:
        chain = chain[:, None]
    n = chain.shape[0]
    nb = int(np.sqrt(n))
    if nb < 2:
        raise ValueError(f"chain of length {n} is too short for batch means")
    m = n // nb
    batches = chain[:nb * m].reshape(nb, m, -1).mean(axis=1)
    se = batches.std(axis=0, ddof=1) / np.sqrt(nb)
    return se[0] if squeeze else se
