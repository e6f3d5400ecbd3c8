"""End-to-end training/sampling protocols.

Four protocols share one engine:

* ``run_wfald``    -- federated Langevin sampling with wireless over-the-air
  aggregation: on aggregation rounds devices transmit their SGLD payload
  (particle minus scaled stochastic gradient, no injected noise) through the
  analog channel, and the receiver's scaled channel noise plays the role of
  the shared Langevin noise.
* ``run_fald``     -- the noiseless counterpart: aggregation rounds average the
  locally updated particles exactly, with the shared noise drawn from the
  common stream.
* ``run_sgld``     -- centralized single-chain Langevin sampling on the full
  dataset; implemented as the K = 1, p_c = 1 degenerate case of the noiseless
  protocol (the device cost with K = 1 is the full posterior cost).
* ``run_wfedavg``  -- frequentist over-the-air federated averaging: identical
  scheduling, batching and channel, but no Langevin noise anywhere and pure
  full-power scaled channel inversion; the estimate is the final iterate.

Determinism: every replicate's streams are derived from
(master_seed, grid position, replicate) as described in :mod:`wfald.rng`;
re-running an identical configuration reproduces results bitwise.  Runs of
different algorithms under one master seed draw identical aggregation-flag
sequences and identical mini-batch index sequences.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .channel import (ChannelConfig, ChannelRound, ProtocolError, check_power,
                      inversion_power_gain, noma_superpose, power_gain,
                      receive_aggregate, residual_noise_power)
from .model import (Dataset, RegularityConstants, batch_size, exact_posterior,
                    measure_constants, partition_even)

ALGORITHMS = ("WFALD", "FALD", "SGLD", "WFedAvg")

#: benchmark regression coefficients for the d = 5 reference problem
BENCHMARK_THETA_STAR = np.array([-0.0615, -1.6057, 1.7629, 1.0240, -1.5902])


# ---------------------------------------------------------------- config --- #


@dataclass
class RunConfig:
    """Everything needed to reproduce one experiment.

    ``snr_db`` of None means a noiseless channel.  ``region_radius`` of None
    resolves to five posterior standard deviations (largest axis).
    ``force_final_agg`` of None resolves to True for WFedAvg (its estimate is
    a single shared iterate) and False otherwise.  ``seed_path`` locates the
    run on a sweep grid for stream derivation; direct runs keep the default.
    """

    algorithm: str = "WFALD"
    k: int = 30
    dim: int = 5
    n_samples: int = 1200
    eta: float = 3e-3
    p_c: float = 0.5
    p_b: float = 0.4
    s_total: int = 200
    s_burn: int = 100
    snr_db: float | None = 20.0
    power: float = 1.0
    gain_model: str = "constant"
    gain_value: float = 1.0
    noise_std: float = 1.0
    theta_star: np.ndarray | None = None
    master_seed: int = 0
    replicates: int = 1
    region_radius: float | None = None
    tau_override: float | None = None
    force_final_agg: bool | None = None
    store_device_trajectories: bool = True
    thin_stride: int = 1
    store_batch_indices: bool = False
    seed_path: tuple = (0, 0)

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.k < 1:
            raise ValueError("need at least one device")
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if self.n_samples < self.k:
            raise ValueError(f"cannot shard {self.n_samples} samples across {self.k} devices")
        if self.eta <= 0:
            raise ValueError(f"step size must be positive, got {self.eta}")
        if not 0 < self.p_c <= 1:
            raise ValueError(f"aggregation probability must be in (0, 1], got {self.p_c}")
        if not 0 < self.p_b <= 1:
            raise ValueError(f"batch fraction must be in (0, 1], got {self.p_b}")
        if self.s_total < 1:
            raise ValueError("need at least one iteration")
        if not 0 <= self.s_burn < self.s_total:
            raise ValueError(f"burn-in {self.s_burn} must lie in [0, s_total)")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if self.power <= 0:
            raise ValueError("transmit power budget must be positive")
        if self.thin_stride < 1:
            raise ValueError("thin_stride must be at least 1")
        if self.tau_override is not None:
            if self.algorithm != "FALD":
                raise ValueError("tau_override is only meaningful for FALD")
            if not 0 <= self.tau_override <= 1:
                raise ValueError(f"tau_override must be in [0, 1], got {self.tau_override}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.region_radius is not None and self.region_radius <= 0:
            raise ValueError("region_radius must be positive")

    @property
    def s_use(self) -> int:
        return self.s_total - self.s_burn

    def channel(self) -> ChannelConfig:
        return ChannelConfig.from_snr_db(self.snr_db, block_dim=self.dim, power=self.power,
                                         gain_model=self.gain_model, gain_value=self.gain_value)

    def resolve_theta_star(self, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.theta_star is not None:
            return np.asarray(self.theta_star, dtype=float)
        if self.dim == len(BENCHMARK_THETA_STAR):
            return BENCHMARK_THETA_STAR.copy()
        if rng is None:
            raise ValueError(f"no default theta_star for dim={self.dim}; supply one")
        return rng.standard_normal(self.dim)


@dataclass
class RunResult:
    """Per-replicate trajectories and diagnostics of one configuration.

    ``avg_traj[r, s]`` is the device average after s update rounds (index 0 is
    the shared zero initialization), ``device_mean`` the per-device
    post-burn-in time averages, ``v_theta``/``v_c`` the client-drift
    statistics measured at the top of each round from the current particles
    and realized stochastic gradients.
    """

    config: RunConfig
    constants: RegularityConstants
    region_radius: float
    flags: np.ndarray
    avg_traj: np.ndarray
    device_mean: np.ndarray
    theta_final: np.ndarray
    v_theta: np.ndarray
    v_c: np.ndarray
    channel_rounds: list
    final_agg_forced: bool
    device_traj: np.ndarray | None = None
    stored_iterations: np.ndarray | None = None
    batch_indices: list | None = None

    def beta_by_round(self, replicate: int) -> np.ndarray:
        """Residual channel noise power per round (zero on non-wireless rounds)."""
        out = np.zeros(self.config.s_total)
        for rec in self.channel_rounds[replicate]:
            out[rec.iteration] = rec.beta
        return out

    def alpha_by_round(self, replicate: int) -> np.ndarray:
        out = np.full(self.config.s_total, np.nan)
        for rec in self.channel_rounds[replicate]:
            out[rec.iteration] = rec.alpha
        return out


# ------------------------------------------------------------- internals --- #


@dataclass
class _DeviceGroup:
    """Devices with equal shard size, stacked for vectorized gradient math."""

    members: np.ndarray          # device indices, ascending
    U: np.ndarray                # (g, d, n_k)
    v: np.ndarray                # (g, n_k)
    n: int
    m: int
    hessian: np.ndarray          # (g, d, d): U U^T + I/K, full-batch fast path
    lin: np.ndarray              # (g, d): U v


def _build_groups(shards, k_total: int, p_b: float) -> list[_DeviceGroup]:
    by_size: dict[int, list[int]] = {}
    for shard in shards:
        by_size.setdefault(shard.size, []).append(shard.owner)
    groups = []
    d = shards[0].dim
    eye = np.eye(d)
    for n, members in sorted(by_size.items()):
        U = np.stack([shards[k].covariates for k in members])
        v = np.stack([shards[k].targets for k in members])
        hess = np.einsum("gdn,gen->gde", U, U) + eye / k_total
        lin = np.einsum("gdn,gn->gd", U, v)
        groups.append(_DeviceGroup(members=np.array(members), U=U, v=v, n=n,
                                   m=batch_size(p_b, n), hessian=hess, lin=lin))
    return groups


def _group_batches(group: _DeviceGroup, streams, s_total: int, p_b: float):
    """Pre-draw every member's batch indices for the whole run.

    Drawing a device's (s_total, n) key block in one call consumes its batch
    stream exactly as s_total sequential per-round draws would, so the
    realized batches match a round-by-round reference implementation.
    """
    if group.m >= group.n:
        return None
    idx = np.empty((len(group.members), s_total, group.m), dtype=np.intp)
    for j, k in enumerate(group.members):
        keys = streams.batch[k].random((s_total, group.n))
        idx[j] = np.argpartition(keys, group.m, axis=1)[:, :group.m]
    return idx


def _group_grads(group: _DeviceGroup, idx, thetas_g: np.ndarray, s: int,
                 p_b: float, k_total: int) -> np.ndarray:
    if idx is None:
        # the prior term sits inside the precomputed per-device hessian
        return np.einsum("gde,ge->gd", group.hessian, thetas_g) - group.lin
    cols = idx[:, s, :]
    Ub = np.take_along_axis(group.U, cols[:, None, :], axis=2)
    vb = np.take_along_axis(group.v, cols, axis=1)
    resid = np.einsum("gdm,gd->gm", Ub, thetas_g) - vb
    return np.einsum("gdm,gm->gd", Ub, resid) / p_b + thetas_g / k_total


def _replicate(config: RunConfig, data: Dataset, groups, A_global, b_global,
               chan: ChannelConfig, streams: _rng.RunStreams):
    """Run one replicate with explicit streams; returns per-replicate records."""
    algo = config.algorithm
    S, K, d = config.s_total, config.k, config.dim
    eta, p_b, p_c = config.eta, config.p_b, config.p_c
    wireless = algo in ("WFALD", "WFedAvg")
    langevin = algo in ("WFALD", "FALD", "SGLD")
    noise_target = 2.0 * eta / K

    force_final = config.force_final_agg
    if force_final is None:
        force_final = algo == "WFedAvg"

    flags = streams.flags.random(S) < p_c
    if force_final:
        flags[-1] = True

    batch_idx = [_group_batches(g, streams, S, p_b) for g in groups]

    keep_dev = config.store_device_trajectories
    stride = config.thin_stride
    stored = None
    if keep_dev:
        stored = sorted(set(range(0, S + 1, stride)) | {S})
        dev_traj = np.empty((len(stored), K, d))
        stored_pos = {it: i for i, it in enumerate(stored)}

    thetas = np.zeros((K, d))
    avg_traj = np.empty((S + 1, d))
    avg_traj[0] = 0.0
    if keep_dev:
        dev_traj[0] = 0.0
    v_theta = np.empty(S)
    v_c = np.empty(S)
    mean_acc = np.zeros((K, d))
    chan_log = []
    grads = np.empty((K, d))
    sqrt2eta = np.sqrt(2.0 * eta)

    for s in range(S):
        avg = thetas.mean(axis=0)
        for g, idx in zip(groups, batch_idx):
            grads[g.members] = _group_grads(g, idx, thetas[g.members], s, p_b, K)
        # dispersion measured relative to particle 0 so bitwise-equal
        # particles (the state right after an aggregation) give exactly 0
        dev = thetas - thetas[0]
        dev -= dev.mean(axis=0)
        v_theta[s] = float(np.mean(np.sum(dev * dev, axis=1)))
        diff = (A_global @ avg - b_global) - grads.sum(axis=0)
        v_c[s] = float(diff @ diff)

        agg = bool(flags[s])
        if wireless and agg:
            payloads = thetas - eta * grads
            gains = chan.draw_gains(K, streams.gains)
            if gains.min() < 1e-6 * np.median(gains):
                raise ProtocolError(
                    f"near-zero channel gain {gains.min():.3e} at round {s}; "
                    "inversion power control would explode")
            if algo == "WFALD":
                alpha = power_gain(payloads, gains, chan.power, chan.noise_level, eta, K)
            else:
                alpha = inversion_power_gain(payloads, gains, chan.power)
            signals = (alpha / gains)[:, None] * payloads
            ok = check_power(signals, chan.power)
            if not ok.all():
                bad = int(np.argmin(ok))
                raise ProtocolError(
                    f"transmit power violated by device {bad} at round {s}: "
                    f"||x||^2 = {float(np.sum(signals[bad]**2)):.6g} > {chan.power}")
            y, z = noma_superpose(signals, gains, streams.channel, chan.noise_level)
            received = receive_aggregate(y, alpha, K)
            if algo == "WFALD" and chan.noise_level == 0.0:
                # a noiseless channel cannot supply the Langevin noise the
                # receiver normally repurposes; restore it at full strength
                received = received + np.sqrt(noise_target) * streams.channel.standard_normal(d)
            chan_log.append(ChannelRound(
                iteration=s, gains=gains, noise=z, alpha=alpha,
                beta=residual_noise_power(alpha, chan.noise_level, eta, K),
                payload_norms=np.linalg.norm(payloads, axis=1)))
            thetas[:] = received
        else:
            if langevin:
                if algo == "FALD" and config.tau_override is not None:
                    tau = config.tau_override
                else:
                    tau = 1.0 if agg else 0.0
                xi = np.zeros((K, d))
                if tau > 0.0:
                    xi += np.sqrt(tau / K) * streams.common.standard_normal(d)
                if tau < 1.0:
                    priv = np.empty((K, d))
                    for k in range(K):
                        priv[k] = streams.noise[k].standard_normal(d)
                    xi += np.sqrt(1.0 - tau) * priv
                tilde = thetas - eta * grads + sqrt2eta * xi
            else:
                tilde = thetas - eta * grads
            if agg:
                thetas[:] = tilde.mean(axis=0)
            else:
                thetas = tilde

        if not np.isfinite(thetas).all():
            bad = int(np.argmax(~np.isfinite(thetas).all(axis=1)))
            raise ProtocolError(f"non-finite particle on device {bad} at iteration {s + 1}; "
                                "the step size is likely too large for this problem")

        avg_traj[s + 1] = thetas.mean(axis=0)
        if s + 1 > config.s_burn:
            mean_acc += thetas
        if keep_dev and (s + 1) in stored_pos:
            dev_traj[stored_pos[s + 1]] = thetas

    out = {
        "flags": flags,
        "avg_traj": avg_traj,
        "device_mean": mean_acc / config.s_use,
        "theta_final": thetas.copy(),
        "v_theta": v_theta,
        "v_c": v_c,
        "channel": chan_log,
        "final_agg_forced": force_final,
    }
    if keep_dev:
        out["device_traj"] = dev_traj
        out["stored"] = np.array(stored)
    if config.store_batch_indices:
        out["batches"] = batch_idx
    return out


def _run(config: RunConfig, data: Dataset) -> RunResult:
    config.validate()
    if data.dim != config.dim:
        raise ValueError(f"dataset dimension {data.dim} != config dim {config.dim}")
    if data.size != config.n_samples:
        raise ValueError(f"dataset size {data.size} != config n_samples {config.n_samples}")

    shards = partition_even(data, config.k)
    groups = _build_groups(shards, config.k, config.p_b)
    A_global = data.covariates @ data.covariates.T + np.eye(config.dim)
    b_global = data.covariates @ data.targets
    chan = config.channel()

    posterior = exact_posterior(data)
    radius = config.region_radius
    if radius is None:
        radius = 5.0 * float(np.sqrt(np.linalg.eigvalsh(posterior.covariance)[-1]))
    constants = measure_constants(shards, config.k, radius, config.p_b)

    reps = []
    for r in range(config.replicates):
        streams = _rng.run_streams(config.master_seed, r, config.k, config.seed_path)
        reps.append(_replicate(config, data, groups, A_global, b_global, chan, streams))

    R = config.replicates
    result = RunResult(
        config=config,
        constants=constants,
        region_radius=radius,
        flags=np.stack([r["flags"] for r in reps]),
        avg_traj=np.stack([r["avg_traj"] for r in reps]),
        device_mean=np.stack([r["device_mean"] for r in reps]),
        theta_final=np.stack([r["theta_final"] for r in reps]),
        v_theta=np.stack([r["v_theta"] for r in reps]),
        v_c=np.stack([r["v_c"] for r in reps]),
        channel_rounds=[r["channel"] for r in reps],
        final_agg_forced=reps[0]["final_agg_forced"],
    )
    if config.store_device_trajectories:
        result.device_traj = np.stack([r["device_traj"] for r in reps])
        result.stored_iterations = reps[0]["stored"]
    if config.store_batch_indices:
        result.batch_indices = [r["batches"] for r in reps]
    return result


# ----------------------------------------------------------- entry points --- #


def run_wfald(config: RunConfig, data: Dataset) -> RunResult:
    """Federated Langevin sampling with over-the-air aggregation."""
    if config.algorithm != "WFALD":
        config = dataclasses.replace(config, algorithm="WFALD")
    return _run(config, data)


def run_fald(config: RunConfig, data: Dataset) -> RunResult:
    """Noiseless federated Langevin sampling (exact averaging)."""
    if config.algorithm != "FALD":
        config = dataclasses.replace(config, algorithm="FALD")
    return _run(config, data)


def run_sgld(config: RunConfig, data: Dataset) -> RunResult:
    """Centralized Langevin sampling on the full dataset.

    Runs the noiseless engine with a single device holding all data and
    aggregation every round; with K = 1 the device cost carries the full
    prior, so each round is exactly one SGLD step on the posterior, and the
    chain's noise comes from the common stream.

    The chain's step size is ``config.eta / config.k``: averaging K local
    steps advances the federated protocols by eta/K times the full gradient
    with noise scale sqrt(2 eta / K) per round, so this is the centralized
    chain their round clock corresponds to.  Pass ``k = 1`` for a standalone
    chain at the literal step size.  The returned config records the step
    actually taken.
    """
    config = dataclasses.replace(config, algorithm="SGLD", k=1, p_c=1.0,
                                 eta=config.eta / config.k, tau_override=None)
    return _run(config, data)


def run_wfedavg(config: RunConfig, data: Dataset) -> RunResult:
    """Frequentist over-the-air federated averaging (no Langevin noise)."""
    if config.algorithm != "WFedAvg":
        config = dataclasses.replace(config, algorithm="WFedAvg")
    return _run(config, data)


def run(config: RunConfig, data: Dataset) -> RunResult:
    """Dispatch on ``config.algorithm``."""
    table = {"WFALD": run_wfald, "FALD": run_fald, "SGLD": run_sgld, "WFedAvg": run_wfedavg}
    config.validate()
    return table[config.algorithm](config, data)
