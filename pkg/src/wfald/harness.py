"""Experiment harness: config files, dataset builders, sweeps and file output.

Config grammar
--------------
Plain text, one ``key = value`` per line, ``#`` starts a comment.  Run keys
use the bare RunConfig field names (``eta = 3e-3``, ``snr_db = 20`` or
``snr_db = none``); sweep keys carry a ``sweep.`` prefix.  Grid values are
comma separated.  The same ``key=value`` strings can be passed as command
line overrides, which win over the file.

Output contracts
----------------
``run_sweep`` writes ``results.csv`` (one row per grid point, fixed column
order, floats serialized with ``repr`` so reruns are byte-identical) and
``manifest.json`` (schema and seed provenance, no timestamps).  Sweep rows
come out in canonical order regardless of worker count.  ``emit_plotdata``
reshapes ``results.csv`` into tidy series tables for plotting.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._version import __version__
from .analysis import (BoundInputs, drift_bounds, empirical_gaussian,
                       gaussian_w2_squared, per_device_mse, predictive_error,
                       running_mse, w2_bound_sequence)
from .model import Dataset, exact_posterior, generate_synthetic
from .protocol import ALGORITHMS, RunConfig, RunResult, run
from .rng import data_generator, test_data_generator


class ConfigurationError(ValueError):
    """A config file or override is malformed or out of range."""


RESULT_COLUMNS = (
    "algorithm", "p_c", "snr_db", "replicates",
    "mse_mean", "mse_se", "w2_sq",
    "bound_final_mean", "bound_final_se",
    "v_theta_mean", "v_theta_se", "v_c_mean", "v_c_se",
    "v_theta_bound", "v_c_bound",
    "test_ens_mean", "test_ens_se", "test_freq_mean", "test_freq_se",
)

ITERATION_COLUMNS = (
    "s", "mse", "w2_sq", "bound", "v_theta", "v_c",
    "v_theta_bound", "v_c_bound", "beta", "alpha",
)

_BOUNDED = ("WFALD", "FALD")  # algorithms the convergence bound applies to


# -------------------------------------------------------------- datasets --- #


def build_dataset(config: RunConfig) -> Dataset:
    """Deterministic benchmark dataset for a config (master seed only).

    The data stream depends on the master seed alone, so every algorithm and
    every grid point of a sweep sees the same dataset.  For dimensions
    without a stored ground truth the coefficient vector is drawn first from
    the same stream.
    """
    rng = data_generator(config.master_seed)
    star = config.resolve_theta_star(rng)
    return generate_synthetic(config.n_samples, config.dim, star, config.noise_std, rng)


def build_test_set(config: RunConfig, theta_star: np.ndarray,
                   per_device: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """Held-out per-device test data, shapes (k, dim, per_device) and (k, per_device)."""
    rng = test_data_generator(config.master_seed)
    us, vs = [], []
    for _ in range(config.k):
        d = generate_synthetic(per_device, config.dim, theta_star, config.noise_std, rng)
        us.append(d.covariates)
        vs.append(d.targets)
    return np.stack(us), np.stack(vs)


# -------------------------------------------------------- config parsing --- #

_INT_KEYS = {"k", "dim", "n_samples", "s_total", "s_burn", "master_seed",
             "replicates", "thin_stride"}
_FLOAT_KEYS = {"eta", "p_c", "p_b", "power", "gain_value", "noise_std"}
_OPT_FLOAT_KEYS = {"snr_db", "region_radius", "tau_override"}
_BOOL_KEYS = {"store_device_trajectories", "store_batch_indices"}
_OPT_BOOL_KEYS = {"force_final_agg"}
_STR_KEYS = {"algorithm", "gain_model"}
_LIST_KEYS = {"theta_star"}
_SWEEP_KEYS = {"sweep.pc_grid", "sweep.snr_db_grid", "sweep.algorithms",
               "sweep.replicates", "sweep.workers"}
_NONE_TOKENS = {"none", "null", "noiseless"}


def _parse_scalar(key: str, text: str):
    text = text.strip()
    try:
        if key in _INT_KEYS:
            return int(text)
        if key in _FLOAT_KEYS:
            return float(text)
        if key in _OPT_FLOAT_KEYS:
            return None if text.lower() in _NONE_TOKENS else float(text)
        if key in _BOOL_KEYS or key in _OPT_BOOL_KEYS:
            low = text.lower()
            if key in _OPT_BOOL_KEYS and low in _NONE_TOKENS:
                return None
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if key in _LIST_KEYS:
            return np.array([float(t) for t in text.split(",") if t.strip()])
        return text
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {exc}") from None


def read_config_text(text: str) -> dict:
    """Parse config file text into a raw {key: string} mapping."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {body!r}")
        key, _, value = body.partition("=")
        raw[key.strip()] = value.strip()
    return raw


def parse_config(path: str | None = None, overrides: list[str] | None = None) -> dict:
    """Merge a config file with command line overrides into raw strings."""
    raw = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            raw.update(read_config_text(fh.read()))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        raw[key.strip()] = value.strip()
    return raw


def build_run_config(raw: dict) -> RunConfig:
    """Resolve raw key/value strings into a validated RunConfig."""
    known = {f.name for f in dataclasses.fields(RunConfig)} - {"seed_path"}
    kwargs = {}
    for key, text in raw.items():
        if key in _SWEEP_KEYS:
            continue
        if key not in known:
            raise ConfigurationError(f"unknown config key: {key}")
        kwargs[key] = _parse_scalar(key, text)
    config = RunConfig(**kwargs)
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    return config


@dataclass
class SweepSpec:
    """A grid of runs sharing one base configuration."""

    base: RunConfig
    pc_grid: tuple
    snr_db_grid: tuple
    algorithms: tuple
    replicates: int

    def validate(self):
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigurationError(f"unknown algorithm in sweep: {a!r}")
        for p in self.pc_grid:
            if not 0 < p <= 1:
                raise ConfigurationError(f"sweep p_c value out of range: {p}")
        if self.replicates < 1:
            raise ConfigurationError("sweep.replicates must be at least 1")
        if not self.pc_grid or not self.snr_db_grid:
            raise ConfigurationError("sweep grids must be non-empty")


def build_sweep_spec(raw: dict) -> SweepSpec:
    base = build_run_config(raw)

    def grid_floats(key, default):
        if key not in raw:
            return default
        vals = []
        for tok in raw[key].split(","):
            tok = tok.strip()
            if not tok:
                continue
            vals.append(None if tok.lower() in _NONE_TOKENS else float(tok))
        return tuple(vals)

    pc_grid = grid_floats("sweep.pc_grid", (base.p_c,))
    snr_grid = grid_floats("sweep.snr_db_grid", (base.snr_db,))
    if any(p is None for p in pc_grid):
        raise ConfigurationError("sweep.pc_grid entries must be numbers")
    algos = tuple(t.strip() for t in raw.get("sweep.algorithms", base.algorithm).split(",") if t.strip())
    reps = int(raw["sweep.replicates"]) if "sweep.replicates" in raw else base.replicates
    spec = SweepSpec(base=base, pc_grid=pc_grid, snr_db_grid=snr_grid,
                     algorithms=algos, replicates=reps)
    spec.validate()
    return spec


# ------------------------------------------------------------- summaries --- #


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else float("nan")
    return mean, se


def summarize_run(result: RunResult, posterior, test_inputs=None, test_targets=None):
    """Aggregate a run into a summary row and a per-iteration table.

    Per-iteration rows are indexed by completed round s = 1..S: drift columns
    describe the particle state entering round s, channel columns the round-s
    transmission (nan when round s did not aggregate over the air), and
    accuracy columns the state after round s.
    """
    cfg = result.config
    R, S = cfg.replicates, cfg.s_total
    errors = per_device_mse(result.device_mean, posterior.mean)
    mse_mean, mse_se = _mean_se(errors)

    w2_final = float("nan")
    w2_per_iter = np.full(S, np.nan)
    if R >= cfg.dim + 2:
        for s in range(1, S + 1):
            fit = empirical_gaussian(result.avg_traj[:, s, :])
            w2_per_iter[s - 1] = gaussian_w2_squared(fit, posterior)
        w2_final = w2_per_iter[-1]

    bound_mean = bound_se = float("nan")
    bound_per_iter = np.full(S, np.nan)
    if cfg.algorithm in _BOUNDED:
        seqs = np.stack([
            w2_bound_sequence(BoundInputs.from_run(result, posterior, r))
            for r in range(R)])
        bound_per_iter = seqs[:, 1:].mean(axis=0)
        bound_mean, bound_se = _mean_se(seqs[:, -1])

    vt_rep = result.v_theta[:, cfg.s_burn:].mean(axis=1)
    vc_rep = result.v_c[:, cfg.s_burn:].mean(axis=1)
    vt_mean, vt_se = _mean_se(vt_rep)
    vc_mean, vc_se = _mean_se(vc_rep)
    vt_bound, vc_bound = drift_bounds(result.constants, cfg.eta, cfg.p_c,
                                      cfg.k, cfg.dim, vt_mean)

    test_cols = dict(test_ens_mean=float("nan"), test_ens_se=float("nan"),
                     test_freq_mean=float("nan"), test_freq_se=float("nan"))
    if test_inputs is not None:
        ens, freq = [], []
        for r in range(R):
            theta_ens = result.device_mean[r].mean(axis=0)
            theta_last = result.theta_final[r].mean(axis=0)
            per_dev_e = [predictive_error(theta_ens, test_inputs[k], test_targets[k])
                         for k in range(cfg.k)]
            per_dev_f = [predictive_error(theta_last, test_inputs[k], test_targets[k])
                         for k in range(cfg.k)]
            ens.append(np.mean(per_dev_e))
            freq.append(np.mean(per_dev_f))
        test_cols["test_ens_mean"], test_cols["test_ens_se"] = _mean_se(np.array(ens))
        test_cols["test_freq_mean"], test_cols["test_freq_se"] = _mean_se(np.array(freq))

    summary = {
        "algorithm": cfg.algorithm,
        "p_c": cfg.p_c,
        "snr_db": float("nan") if cfg.snr_db is None else cfg.snr_db,
        "replicates": R,
        "mse_mean": mse_mean, "mse_se": mse_se,
        "w2_sq": w2_final,
        "bound_final_mean": bound_mean, "bound_final_se": bound_se,
        "v_theta_mean": vt_mean, "v_theta_se": vt_se,
        "v_c_mean": vc_mean, "v_c_se": vc_se,
        "v_theta_bound": vt_bound, "v_c_bound": vc_bound,
        **test_cols,
    }

    mse_run = running_mse(result.avg_traj, cfg.s_burn, posterior.mean)
    betas = np.stack([result.beta_by_round(r) for r in range(R)])
    alphas = np.stack([result.alpha_by_round(r) for r in range(R)])
    alpha_cnt = (~np.isnan(alphas)).sum(axis=0)
    alpha_sum = np.nansum(alphas, axis=0)
    alpha_mean = np.divide(alpha_sum, alpha_cnt,
                           out=np.full(S, np.nan), where=alpha_cnt > 0)
    vt_iter = result.v_theta.mean(axis=0)
    vc_iter = result.v_c.mean(axis=0)

    table = []
    for s in range(1, S + 1):
        vt_s = vt_iter[s - 1]
        table.append({
            "s": s,
            "mse": float(mse_run[s - 1]),
            "w2_sq": float(w2_per_iter[s - 1]),
            "bound": float(bound_per_iter[s - 1]),
            "v_theta": float(vt_s),
            "v_c": float(vc_iter[s - 1]),
            "v_theta_bound": vt_bound,
            "v_c_bound": drift_bounds(result.constants, cfg.eta, cfg.p_c,
                                      cfg.k, cfg.dim, float(vt_s))[1],
            "beta": float(betas[:, s - 1].mean()),
            "alpha": float(alpha_mean[s - 1]),
        })
    return summary, table


# ----------------------------------------------------------------- sweeps --- #


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if np.isnan(value) else repr(float(value))
    return str(value)


def write_csv(path: str, columns, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def sweep_points(spec: SweepSpec) -> list[tuple]:
    """Canonical (algorithm, p_c, snr_db, seed_path) grid with duplicates removed.

    The seed path is the (p_c index, SNR index) grid position shared by all
    algorithms at that point, so paired comparisons ride on common random
    numbers.  Channel-free algorithms collapse the SNR axis (and SGLD also
    the p_c axis) to a single entry.
    """
    points, seen = [], set()
    order = [a for a in ALGORITHMS if a in spec.algorithms]
    order += [a for a in spec.algorithms if a not in order]
    for algo in order:
        wireless = algo in ("WFALD", "WFedAvg")
        for i, pc in enumerate(spec.pc_grid):
            for j, snr in enumerate(spec.snr_db_grid):
                eff_pc = pc if algo != "SGLD" else None
                eff_snr = snr if wireless else None
                key = (algo, eff_pc, eff_snr)
                if key in seen:
                    continue
                seen.add(key)
                pi = i if algo != "SGLD" else 0
                pj = j if wireless else 0
                points.append((algo, eff_pc, eff_snr, (pi, pj)))
    return points


def _evaluate_point(args):
    idx, config = args
    data = build_dataset(config)
    posterior = exact_posterior(data)
    star = config.resolve_theta_star(data_generator(config.master_seed))
    result = run(config, data)
    test_u, test_v = build_test_set(result.config, star)
    summary, _ = summarize_run(result, posterior, test_u, test_v)
    return idx, summary


def sweep_configs(spec: SweepSpec) -> list[RunConfig]:
    configs = []
    for algo, pc, snr, path in sweep_points(spec):
        configs.append(dataclasses.replace(
            spec.base, algorithm=algo,
            p_c=spec.base.p_c if pc is None else pc,
            snr_db=snr, replicates=spec.replicates, seed_path=path,
            store_device_trajectories=False, store_batch_indices=False))
    return configs


def run_sweep(spec: SweepSpec, output_dir: str, workers: int = 1) -> list[dict]:
    """Run every grid point and write results.csv plus manifest.json.

    Output is independent of ``workers``: rows are keyed by grid index and
    emitted in canonical order, and all randomness is derived from the seed
    scheme rather than execution order.
    """
    spec.validate()
    os.makedirs(output_dir, exist_ok=True)
    configs = sweep_configs(spec)
    tasks = list(enumerate(configs))
    if workers <= 1:
        results = dict(map(_evaluate_point, tasks))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_evaluate_point, tasks))
    rows = [results[i] for i in range(len(tasks))]
    # report the effective grid coordinates, nan where an axis is collapsed
    for row, (algo, pc, snr, _) in zip(rows, sweep_points(spec)):
        row["p_c"] = float("nan") if pc is None else pc
        row["snr_db"] = float("nan") if snr is None else snr

    write_csv(os.path.join(output_dir, "results.csv"), RESULT_COLUMNS, rows)
    manifest = sweep_manifest(spec)
    with open(os.path.join(output_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return rows


def sweep_manifest(spec: SweepSpec) -> dict:
    base = dataclasses.asdict(spec.base)
    base["theta_star"] = None if spec.base.theta_star is None else list(map(float, spec.base.theta_star))
    base["seed_path"] = list(spec.base.seed_path)
    payload = {
        "base_config": base,
        "pc_grid": list(spec.pc_grid),
        "snr_db_grid": [None if s is None else s for s in spec.snr_db_grid],
        "algorithms": list(spec.algorithms),
        "replicates": spec.replicates,
    }
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
    return {
        "schema_version": 1,
        "tool_version": __version__,
        "master_seed": spec.base.master_seed,
        "seed_scheme": ("streams spawned from SeedSequence(master_seed, spawn_key=(namespace, ...)); "
                        "data namespace 1, runs namespace 2 keyed by (grid position, replicate), "
                        "held-out data namespace 3; algorithms share paths at equal grid positions"),
        "config_sha256": digest,
        "row_count": len(sweep_points(spec)),
        **payload,
    }


# -------------------------------------------------------------- plot data --- #


PLOT_COLUMNS = ("figure", "series", "x", "y", "y_stderr")
FIGURES = ("pc_curve", "snr_curve", "baseline_compare")


def _load_results(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            row = dict(rec)
            for key in RESULT_COLUMNS:
                if key in ("algorithm",):
                    continue
                row[key] = float(rec[key]) if rec[key] != "" else float("nan")
            rows.append(row)
    return rows


def emit_plotdata(results_path: str, figure: str) -> list[dict]:
    """Reshape a results table into tidy (series, x, y) records for one figure."""
    if figure not in FIGURES:
        raise ConfigurationError(f"unknown figure {figure!r}; expected one of {FIGURES}")
    rows = _load_results(results_path)
    out = []
    if figure == "pc_curve":
        for row in rows:
            if np.isnan(row["p_c"]):
                continue
            snr = "noiseless" if np.isnan(row["snr_db"]) else f"snr={row['snr_db']:g}dB"
            out.append({"figure": figure, "series": f"{row['algorithm']} {snr}",
                        "x": row["p_c"], "y": row["mse_mean"], "y_stderr": row["mse_se"]})
    elif figure == "snr_curve":
        for row in rows:
            if np.isnan(row["snr_db"]):
                continue
            out.append({"figure": figure, "series": f"{row['algorithm']} pc={row['p_c']:g}",
                        "x": row["snr_db"], "y": row["mse_mean"], "y_stderr": row["mse_se"]})
    else:
        for row in rows:
            if np.isnan(row["snr_db"]):
                continue
            freq = row["algorithm"] == "WFedAvg"
            out.append({"figure": figure, "series": row["algorithm"],
                        "x": row["snr_db"],
                        "y": row["test_freq_mean"] if freq else row["test_ens_mean"],
                        "y_stderr": row["test_freq_se"] if freq else row["test_ens_se"]})
    out.sort(key=lambda r: (r["series"], r["x"]))
    return out


def plotdata_csv(records: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PLOT_COLUMNS)
    for rec in records:
        writer.writerow([_fmt(rec[c]) for c in PLOT_COLUMNS])
    return buf.getvalue()
