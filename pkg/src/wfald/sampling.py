"""Langevin sampling steps and the federated averaging round.

The local update on device k is

    theta_k <- theta_k - eta * grad_k + sqrt(2 eta) * xi_k

where xi_k mixes a round-shared draw xi_c with a private draw,

    xi_k = sqrt(tau / K) * xi_c + sqrt(1 - tau) * xi_private_k.

Each coordinate of xi_k has variance tau/K + (1 - tau); at tau = 1 every
device receives the identical vector xi_c / sqrt(K), so averaging the K local
states yields a single chain driven by sqrt(2 eta / K) * xi_c, i.e. a global
Langevin step with rate eta / K.

The Bernoulli(p_c) aggregation flag for a round is drawn from the shared flag
stream before the local update (equivalent to drawing it at aggregation time,
since the flag stream is dedicated and iteration-indexed); tau is 1 on
aggregation rounds and 0 otherwise unless explicitly overridden.

Stream-consumption contract (load-bearing for determinism and for fair
cross-algorithm comparisons): the flag stream is consumed once per round; a
device's batch stream is consumed once per round (skipped entirely at
p_b = 1); the common stream is consumed only when tau > 0; a device's private
noise stream is consumed only when tau < 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LocalDataset, stochastic_grad
from . import rng as _rng


@dataclass
class DeviceState:
    """Mutable per-device state: particle plus the two device-owned streams."""

    index: int
    theta: np.ndarray
    batch_rng: np.random.Generator
    noise_rng: np.random.Generator


@dataclass
class SharedRandomness:
    """Common randomness all devices observe: round flags and shared noise."""

    seed: int
    flag_rng: np.random.Generator
    common_rng: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int, replicate: int = 0, grid_path: tuple = (0, 0)) -> "SharedRandomness":
        streams = _rng.run_streams(seed, replicate, 0, grid_path)
        return cls(seed=seed, flag_rng=streams.flags, common_rng=streams.common)


def sgld_step(theta: np.ndarray, grad: np.ndarray, eta: float,
              rng: np.random.Generator) -> np.ndarray:
    """One Langevin step: theta - eta * grad + sqrt(2 eta) * standard normal."""
    if eta <= 0:
        raise ValueError(f"step size must be positive, got {eta}")
    return theta - eta * grad + np.sqrt(2.0 * eta) * rng.standard_normal(theta.shape[0])


def correlated_noise(tau: float, k_total: int, dim: int,
                     common_draw: np.ndarray | None,
                     device_rng: np.random.Generator | None) -> np.ndarray:
    """Mix the round-shared draw with a private draw.

    ``common_draw`` is the round's shared vector (identical across devices;
    the caller draws it once per round).  It may be None iff tau == 0.  The
    private draw is skipped when tau == 1 so the device stream is consumed
    only when its sample matters.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    out = np.zeros(dim)
    if tau > 0.0:
        if common_draw is None:
            raise ValueError("tau > 0 requires the round's shared draw")
        out += np.sqrt(tau / k_total) * common_draw
    if tau < 1.0:
        if device_rng is None:
            raise ValueError("tau < 1 requires the device noise stream")
        out += np.sqrt(1.0 - tau) * device_rng.standard_normal(dim)
    return out


def draw_round_flag(shared: SharedRandomness, p_c: float) -> int:
    """Bernoulli(p_c) aggregation flag from the shared flag stream."""
    if not 0.0 < p_c <= 1.0:
        raise ValueError(f"aggregation probability must be in (0, 1], got {p_c}")
    return int(shared.flag_rng.random() < p_c)


def fald_round(devices: list[DeviceState], shards: list[LocalDataset], eta: float,
               p_b: float, p_c: float, k_total: int, shared: SharedRandomness,
               tau_override: float | None = None) -> np.ndarray | None:
    """One noiseless federated Langevin round; mutates ``devices`` in place.

    Draws the round flag, performs every device's local step with the
    appropriate noise correlation, and on aggregation rounds replaces all
    particles with their average.  Returns the aggregate when the round
    aggregated, else None.
    """
    if len(devices) != k_total or len(shards) != k_total:
        raise ValueError("devices/shards must both have length k_total")
    dim = devices[0].theta.shape[0]
    flag = draw_round_flag(shared, p_c)
    tau = tau_override if tau_override is not None else (1.0 if flag else 0.0)

    common_draw = shared.common_rng.standard_normal(dim) if tau > 0.0 else None
    scale = np.sqrt(2.0 * eta)
    for dev in devices:
        grad = stochastic_grad(dev.theta, shards[dev.index], p_b, dev.batch_rng, k_total)
        xi = correlated_noise(tau, k_total, dim, common_draw, dev.noise_rng)
        dev.theta = dev.theta - eta * grad + scale * xi

    if flag:
        aggregate = np.mean([dev.theta for dev in devices], axis=0)
        for dev in devices:
            dev.theta = aggregate.copy()
        return aggregate
    return None
