"""Analog multiple-access uplink used for over-the-air model aggregation.

All K devices transmit simultaneously in one block of d channel uses; the
receiver observes the superposition

    y = sum_k h_k x_k + z,    z ~ N(0, noise_level * I_d),

subject to a per-block transmit power constraint ||x_k||^2 <= power.  With
scaled channel inversion x_k = (alpha / h_k) * payload_k the superposition
equals alpha * sum_k payload_k, so y / (K alpha) is the device average plus
the rescaled channel noise z / (K alpha), whose per-coordinate variance is
noise_level / (alpha K)^2.

The Langevin sampler needs common noise of variance exactly 2 eta / K per
coordinate on an aggregation round.  The common gain is therefore capped so
the rescaled channel noise never falls below that target,

    alpha = min{ sqrt(noise_level / (2 eta K)),
                 min_k sqrt(power) |h_k| / ||payload_k|| },

and the excess beyond the target is the residual noise power

    beta = max{0, noise_level / (alpha K)^2 - 2 eta / K},

which is zero exactly when the power constraint is slack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ProtocolError(RuntimeError):
    """A protocol invariant failed at runtime (power violation, divergence...)."""


@dataclass(frozen=True)
class ChannelConfig:
    """Static channel parameters.

    ``snr`` is the per-block signal-to-noise ratio power/(d * noise_level)
    with d = block_dim.  ``gain_model`` is "constant" (every |h_k| equal to
    ``gain_value``) or "rayleigh" (|h_k| Rayleigh with scale chosen so
    E[h^2] = 2 * rayleigh_scale^2; the default scale 1/sqrt(2) gives unit
    mean-square gain).  Signs are taken positive: phase is assumed
    pre-compensated.
    """

    power: float = 1.0
    noise_level: float = 0.0
    block_dim: int = 1
    gain_model: str = "constant"
    gain_value: float = 1.0
    rayleigh_scale: float = 2 ** -0.5

    def __post_init__(self):
        if self.power <= 0:
            raise ValueError(f"power budget must be positive, got {self.power}")
        if self.noise_level < 0:
            raise ValueError(f"noise level must be nonnegative, got {self.noise_level}")
        if self.block_dim < 1:
            raise ValueError("block_dim must be at least 1")
        if self.gain_model not in ("constant", "rayleigh"):
            raise ValueError(f"unknown gain model {self.gain_model!r}")
        if self.gain_model == "constant" and self.gain_value <= 0:
            raise ValueError("constant gain must be positive")

    @property
    def snr(self) -> float:
        if self.noise_level == 0:
            return np.inf
        return self.power / (self.block_dim * self.noise_level)

    @classmethod
    def from_snr_db(cls, snr_db: float | None, block_dim: int, power: float = 1.0,
                    **kwargs) -> "ChannelConfig":
        """Channel with noise level set from an SNR in dB (None = noiseless)."""
        if snr_db is None:
            noise_level = 0.0
        else:
            noise_level = power / (block_dim * 10.0 ** (snr_db / 10.0))
        return cls(power=power, noise_level=noise_level, block_dim=block_dim, **kwargs)

    def draw_gains(self, k_total: int, rng: np.random.Generator) -> np.ndarray:
        if self.gain_model == "constant":
            return np.full(k_total, self.gain_value)
        return rng.rayleigh(self.rayleigh_scale, k_total)


@dataclass(frozen=True)
class ChannelRound:
    """Diagnostics for one wireless aggregation round."""

    iteration: int
    gains: np.ndarray
    noise: np.ndarray
    alpha: float
    beta: float
    payload_norms: np.ndarray


def transmit_signal(theta: np.ndarray, grad: np.ndarray, eta: float,
                    alpha_k: float) -> np.ndarray:
    """Device transmit block: alpha_k * (theta - eta * grad)."""
    return alpha_k * (theta - eta * grad)


def power_gain(payloads: np.ndarray, gains: np.ndarray, power: float,
               noise_level: float, eta: float, k_total: int) -> float:
    """Common gain alpha: Langevin noise cap intersected with power feasibility.

    ``payloads`` is (K, d).  Devices with zero payload norm impose no power
    constraint.  At noise_level = 0 the cap branch is degenerate (it would
    force alpha = 0), so the gain comes from the power branch alone; the
    protocol layer restores the missing common-noise variance explicitly.
    """
    norms = np.linalg.norm(payloads, axis=1)
    gains = np.asarray(gains, dtype=float)
    active = norms > 0
    if active.any():
        power_branch = float(np.min(np.sqrt(power) * gains[active] / norms[active]))
    else:
        power_branch = np.inf
    if noise_level > 0:
        cap = float(np.sqrt(noise_level / (2.0 * eta * k_total)))
        alpha = min(cap, power_branch)
    else:
        alpha = power_branch
    if not np.isfinite(alpha):
        # every payload is zero; any gain transmits the zero signal
        alpha = 1.0
    return alpha


def inversion_power_gain(payloads: np.ndarray, gains: np.ndarray, power: float) -> float:
    """Pure scaled channel inversion at full power (no Langevin noise cap)."""
    norms = np.linalg.norm(payloads, axis=1)
    gains = np.asarray(gains, dtype=float)
    active = norms > 0
    if not active.any():
        return 1.0
    return float(np.min(np.sqrt(power) * gains[active] / norms[active]))


def noma_superpose(signals: np.ndarray, gains: np.ndarray,
                   rng: np.random.Generator, noise_level: float):
    """Superpose the K transmit blocks and add receiver noise.

    Returns (received vector, noise draw).  The noise draw is always a scaled
    standard-normal block so stream consumption does not depend on the noise
    level (a noiseless channel consumes the same randomness and adds zero).
    """
    signals = np.asarray(signals, dtype=float)
    if signals.ndim != 2:
        raise ValueError("signals must be (K, d)")
    z = np.sqrt(noise_level) * rng.standard_normal(signals.shape[1])
    y = np.asarray(gains, dtype=float) @ signals + z
    return y, z


def receive_aggregate(y: np.ndarray, alpha: float, k_total: int) -> np.ndarray:
    """Receiver post-scaling y / (K alpha)."""
    if alpha <= 0:
        raise ValueError(f"common gain must be positive, got {alpha}")
    return y / (k_total * alpha)


def residual_noise_power(alpha: float, noise_level: float, eta: float,
                         k_total: int) -> float:
    """Per-coordinate channel noise variance in excess of the Langevin target.

    When the scaling factor sits on its noise-matched value the subtraction
    is exact in real arithmetic; remnants within a few ulps of the target are
    rounding noise and snap to zero.
    """
    target = 2.0 * eta / k_total
    excess = noise_level / (alpha * k_total) ** 2 - target
    if excess <= 16.0 * np.finfo(float).eps * target:
        return 0.0
    return excess


def check_power(signals: np.ndarray, power: float) -> np.ndarray:
    """Boolean per-device feasibility ||x_k||^2 <= power (tiny float slack)."""
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    sq = np.sum(signals * signals, axis=1)
    return sq <= power * (1.0 + 1e-9) + 1e-300
