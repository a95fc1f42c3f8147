"""Synthetic benchmark generator and the two MSE sweep experiments.

Each instance draws a scalar process covariate X and noise driver N,
then builds species measurements Y_i = w_x[i] X + g_i(w_n[i] N) + eps
with randomized sigmoids g_i.  The sweeps compare 3QS (alternate form,
joint features (X, Y_-1)) against plain half-sibling regression on the
reconstruction of species 1, with paired instances across methods.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimators import center, hs_estimate, tqs_eq2

DEFAULT_N_OBS = 500
SPECIES_GRID = (2, 3, 5, 7, 10)
SIGMA_GRID = (0.0, 0.05, 0.1, 0.2, 0.4)


@dataclass(frozen=True)
class SynthConfig:
    n_species: int = 2
    n_obs: int = DEFAULT_N_OBS
    sigma_eps: float = 0.0
    tie_noise_functions: bool = False
    seed: int = 0
    amplitude_range: tuple = (0.5, 2.0)
    slope_range: tuple = (1.0, 5.0)
    center_range: tuple = (-0.5, 0.5)
    w_n_range: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.n_species < 2:
            raise ValueError("need at least 2 species")
        if self.n_obs < 50:
            raise ValueError("need at least 50 observations")
        if self.sigma_eps < 0:
            raise ValueError("sigma_eps must be >= 0")
        for rng_pair in (self.amplitude_range, self.slope_range,
                         self.center_range, self.w_n_range):
            if rng_pair[1] < rng_pair[0]:
                raise ValueError("empty parameter interval")


@dataclass(frozen=True)
class SynthInstance:
    x: np.ndarray
    noise: np.ndarray
    z: np.ndarray
    y: np.ndarray
    w_x: np.ndarray
    w_n: np.ndarray
    sigmoid_params: np.ndarray  # (n, 3) rows of (amplitude, slope, center)
    eps: np.ndarray

    def noise_term(self):
        a = self.sigmoid_params[:, 0]
        b = self.sigmoid_params[:, 1]
        c = self.sigmoid_params[:, 2]
        t = self.noise[:, None] * self.w_n[None, :]
        return a[None, :] / (1.0 + np.exp(-b[None, :] * (t - c[None, :])))


def generate(config):
    """Draw one instance; fully determined by ``config.seed``."""
    rng = np.random.default_rng(np.random.SeedSequence(int(config.seed) & 0xFFFFFFFF))
    m = config.n_obs
    n = config.n_species
    x = rng.uniform(-1.0, 1.0, size=m)
    noise = rng.uniform(-1.0, 1.0, size=m)
    w_x = rng.uniform(-1.0, 1.0, size=n)
    w_n = rng.uniform(*config.w_n_range, size=n)
    a = rng.uniform(*config.amplitude_range, size=n)
    b = rng.uniform(*config.slope_range, size=n)
    c = rng.uniform(*config.center_range, size=n)
    if config.tie_noise_functions:
        w_n = np.full(n, w_n[0])
        a = np.full(n, a[0])
        b = np.full(n, b[0])
        c = np.full(n, c[0])
    eps = rng.normal(0.0, config.sigma_eps, size=(m, n)) if config.sigma_eps > 0 \
        else np.zeros((m, n))
    z = x[:, None] * w_x[None, :]
    inst = SynthInstance(
        x=x, noise=noise, z=z, y=np.empty(0), w_x=w_x, w_n=w_n,
        sigmoid_params=np.column_stack([a, b, c]), eps=eps,
    )
    y = z + inst.noise_term() + eps
    return SynthInstance(
        x=x, noise=noise, z=z, y=y, w_x=w_x, w_n=w_n,
        sigmoid_params=inst.sigmoid_params, eps=eps,
    )


def reconstruction_mse(z_hat, z_true):
    """MSE after centering the estimate to the mean of the truth.

    The estimators recover the latent value only up to a constant
    offset, so the offset is removed before scoring.
    """
    z_hat = np.asarray(z_hat, dtype=float).ravel()
    z_true = np.asarray(z_true, dtype=float).ravel()
    if z_hat.shape != z_true.shape:
        raise ValueError("length mismatch")
    return float(np.mean((center(z_hat, z_true.mean()) - z_true) ** 2))


def trial_seed(master_seed, grid_index, trial_index):
    ss = np.random.SeedSequence(
        [int(master_seed) & 0xFFFFFFFF, int(grid_index), int(trial_index)]
    )
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class SweepRow:
    sweep_value: float
    method: str
    mean_mse: float
    stderr_mse: float  # nan when trials == 1
    trials: int


def _trial_mses(inst, cfg):
    """(3QS, HS) reconstruction MSE for species 1 on one instance."""
    y1 = inst.y[:, 0]
    y_rest = inst.y[:, 1:]
    x = inst.x[:, None]
    z1 = inst.z[:, 0]
    z_tqs = tqs_eq2(y1, x, y_rest, cfg, cfg)
    z_hs = hs_estimate(y1, y_rest, cfg)
    return reconstruction_mse(z_tqs, z1), reconstruction_mse(z_hs, z1)


def _summarize(values):
    arr = np.asarray(values, dtype=float)
    stderr = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else float("nan")
    return float(arr.mean()), stderr


def _run_cell(args):
    kind, grid_index, sweep_value, trial, cfg, master_seed, n_obs = args
    seed = trial_seed(master_seed, grid_index, trial)
    if kind == "species":
        sc = SynthConfig(n_species=int(sweep_value), n_obs=n_obs,
                         sigma_eps=0.0, seed=seed)
    else:
        sc = SynthConfig(n_species=2, n_obs=n_obs, sigma_eps=float(sweep_value),
                         tie_noise_functions=True, seed=seed)
    return _trial_mses(generate(sc), cfg)


def _run_sweep(kind, grid, trials, cfg, master_seed, n_obs, jobs):
    tasks = [
        (kind, gi, gv, t, cfg, master_seed, n_obs)
        for gi, gv in enumerate(grid)
        for t in range(trials)
    ]
    if jobs and jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    rows = []
    for gi, gv in enumerate(grid):
        cell = results[gi * trials:(gi + 1) * trials]
        for mi, method in enumerate(("3qs", "hs")):
            mean, stderr = _summarize([r[mi] for r in cell])
            rows.append(SweepRow(float(gv), method, mean, stderr, trials))
    return rows


def run_species_sweep(ns, trials, cfg, master_seed=0, n_obs=DEFAULT_N_OBS, jobs=1):
    """Reconstruction MSE vs number of species, sigma_eps fixed at 0."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return _run_sweep("species", list(ns), trials, cfg, master_seed, n_obs, jobs)


def run_noise_sweep(sigmas, trials, cfg, master_seed=0, n_obs=DEFAULT_N_OBS, jobs=1):
    """Reconstruction MSE vs sigma_eps, n = 2 with tied noise functions."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return _run_sweep("noise", list(sigmas), trials, cfg, master_seed, n_obs, jobs)


def sweep_to_csv(rows, path, preamble=()):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in preamble:
            fh.write(f"# {line}\n")
        fh.write("sweep_value,method,mean_mse,stderr_mse,trials\n")
        for r in rows:
            stderr = "" if np.isnan(r.stderr_mse) else repr(r.stderr_mse)
            fh.write(f"{r.sweep_value!r},{r.method},{r.mean_mse!r},{stderr},{r.trials}\n")
