"""Denoising estimators: half-sibling and three-quarter-sibling forms.

``hs_estimate`` removes the component of a measurement predictable from
measurements that share only a noise cause.  The 3QS variants first
condition on observed process covariates so that intrinsic dependence
between the latent quantities is preserved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import regress
from .regress import RegressorConfig, fit, predict


class EstimationError(RuntimeError):
    pass


def species_seed(master_seed, species_index):
    """Per-species seed independent of processing order."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, int(species_index)])
    return int(ss.generate_state(1)[0])


def center(values, target_mean=0.0):
    """Shift ``values`` to have mean ``target_mean``."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("cannot center an empty vector")
    return v - v.mean() + target_mean


def _as_2d(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def hs_estimate(y1, y2, config):
    """Half-sibling estimate: y1 minus its prediction from y2."""
    y1 = np.asarray(y1, dtype=float).ravel()
    y2 = _as_2d(y2)
    model = fit(config, y2, y1)
    return y1 - predict(model, y2)


def tqs_eq1(y1, x, y2, cfg_x, cfg_joint):
    """3QS residual form: y1 - E[y1 - E[y1|x] | x, y2]."""
    y1 = np.asarray(y1, dtype=float).ravel()
    x = _as_2d(x)
    y2 = _as_2d(y2)
    model_x = fit(cfg_x, x, y1)
    r = y1 - predict(model_x, x)
    joint = np.hstack([x, y2])
    model_joint = fit(cfg_joint, joint, r)
    return y1 - predict(model_joint, joint)


def tqs_eq2(y1, x, y2, cfg_x, cfg_joint):
    """3QS alternate form: y1 - E[y1|x, y2] + E[y1|x]."""
    y1 = np.asarray(y1, dtype=float).ravel()
    x = _as_2d(x)
    y2 = _as_2d(y2)
    joint = np.hstack([x, y2])
    model_joint = fit(cfg_joint, joint, y1)
    model_x = fit(cfg_x, x, y1)
    return y1 - predict(model_joint, joint) + predict(model_x, x)


@dataclass(frozen=True)
class DenoiseResult:
    """Denoised estimates plus the intermediate fits that produced them."""

    z_hat: np.ndarray
    residuals: np.ndarray
    covariate_models: tuple
    residual_models: tuple
    method: str

    def training_diagnostics(self, table):
        """Training MSE of each internal regression, per species."""
        out = []
        x = table.covariates
        for i, name in enumerate(table.species_names):
            entry = {"species": name}
            if self.covariate_models[i] is not None:
                pred = predict(self.covariate_models[i], x)
                entry["covariate_model_mse"] = float(
                    np.mean((table.counts[:, i] - pred) ** 2)
                )
            others = [j for j in range(table.n_species) if j != i]
            pred_r = predict(self.residual_models[i], self.residuals[:, others])
            entry["residual_model_mse"] = float(
                np.mean((self.residuals[:, i] - pred_r) ** 2)
            )
            out.append(entry)
        return out


def tqs_multi_species(table, cfg_x, cfg_res):
    """Residual-form 3QS denoising of every species in a table.

    Per species i: fit E[Y_i|X], form the residual R_i, fit E[R_i|R_-i]
    and subtract its prediction from Y_i.  Each species uses seeds
    derived from (master seed, species index), so results do not depend
    on processing order.
    """
    s = table.n_species
    if s < 2:
        raise EstimationError("need >= 2 species for multi-species denoising")
    if table.covariates.shape[1] < 1:
        raise EstimationError("need >= 1 process covariate")
    y = table.counts
    x = table.covariates
    m = table.n_rows

    cov_models = []
    residuals = np.empty((m, s))
    for i in range(s):
        cfg = cfg_x.with_seed(species_seed(cfg_x.seed, i))
        try:
            model = fit(cfg, x, y[:, i])
        except regress.RegressionError as e:
            raise EstimationError(f"covariate model failed for species {i}: {e}") from e
        cov_models.append(model)
        residuals[:, i] = y[:, i] - predict(model, x)

    res_models = []
    z_hat = np.empty((m, s))
    for i in range(s):
        others = [j for j in range(s) if j != i]
        cfg = cfg_res.with_seed(species_seed(cfg_res.seed, i))
        try:
            model = fit(cfg, residuals[:, others], residuals[:, i])
        except regress.RegressionError as e:
            raise EstimationError(f"residual model failed for species {i}: {e}") from e
        res_models.append(model)
        z_hat[:, i] = y[:, i] - predict(model, residuals[:, others])

    return DenoiseResult(
        z_hat=z_hat,
        residuals=residuals,
        covariate_models=tuple(cov_models),
        residual_models=tuple(res_models),
        method="3QS_residual",
    )


def save_denoise_result(result, table, csv_path, json_path, preamble=()):
    """Write z-hat per species to CSV and fit diagnostics to JSON."""
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        for line in preamble:
            fh.write(f"# {line}\n")
        fh.write(",".join(table.species_names) + "\n")
        for row in result.z_hat:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    diag = {
        "method": result.method,
        "per_species": result.training_diagnostics(table),
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(diag, fh, indent=2, sort_keys=True)
        fh.write("\n")
