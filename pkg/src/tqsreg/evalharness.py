"""Leave-one-year-out evaluation harness and survey simulation.

For every held-out test year, the denoising models are fit on the
remaining years pooled; a per-year smoother is then fit to the
denoised counts of each single training year and scored on the raw
test-year counts.  Also provides the moon-driven survey simulation
used in place of the (non-redistributable) field data, and the
correlation / retained-variability diagnostics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import data_model
from .data_model import ObservationTable, split_by_group
from .estimators import hs_estimate, species_seed, tqs_multi_species
from .regress import RegressorConfig, fit, predict

METHODS = ("raw", "hs", "3qs", "mb", "global")

LUNAR_PERIOD = 29.5
BRIGHTNESS_ZERO_DEFAULT = 0.05


class EvalError(ValueError):
    pass


def method_suite():
    """All comparison methods: raw smoother, HS, 3QS, brightness-feature
    model, and the pooled-years oracle smoother."""
    return list(METHODS)


def percent_improvement(mse_method, mse_baseline):
    """100 * (baseline - method) / baseline."""
    if mse_baseline <= 0:
        raise EvalError("baseline MSE must be positive")
    return 100.0 * (mse_baseline - mse_method) / mse_baseline


def external_correlation(table, z_hat, column):
    """Pearson correlation with an external column before/after denoising."""
    if column not in table.diagnostics:
        raise EvalError(f"no diagnostic column {column!r}")
    ext = table.diagnostics[column]
    if np.std(ext) == 0:
        raise EvalError(f"diagnostic column {column!r} has zero variance")
    z_hat = np.asarray(z_hat, dtype=float)
    if z_hat.shape != table.counts.shape:
        raise EvalError("z_hat shape does not match counts")
    out = []
    for i in range(table.n_species):
        before = float(np.corrcoef(table.counts[:, i], ext)[0, 1])
        after = float(np.corrcoef(z_hat[:, i], ext)[0, 1])
        out.append((before, after))
    return out


def retained_std_fraction(counts, z_hat):
    """std(z_hat_i) / std(counts_i) per species."""
    counts = np.asarray(counts, dtype=float)
    z_hat = np.asarray(z_hat, dtype=float)
    if counts.shape != z_hat.shape:
        raise EvalError("shape mismatch")
    stds = counts.std(axis=0)
    if np.any(stds == 0):
        raise EvalError("zero-variance species column")
    return list(z_hat.std(axis=0) / stds)


def brightness_zero_subset(table, column, threshold=None):
    """Boolean row mask of (near-)dark observations."""
    if column not in table.diagnostics:
        raise EvalError(f"no diagnostic column {column!r}")
    col = table.diagnostics[column]
    if threshold is None:
        threshold = BRIGHTNESS_ZERO_DEFAULT * float(col.max())
    return col <= threshold


# ---------------------------------------------------------------------------
# denoisers over tables


def _aux_species(counts, i, n_aux):
    """Indices of the n_aux most abundant other species, descending."""
    totals = counts.sum(axis=0)
    others = [j for j in range(counts.shape[1]) if j != i]
    others.sort(key=lambda j: (-totals[j], j))
    return others[:n_aux]


def denoise_3qs(table, cfg_x, cfg_res, n_aux=None):
    """Residual-form 3QS z-hat matrix for every species of a table.

    ``n_aux`` limits how many other-species residuals feed each
    regression, most abundant first; None uses all of them.
    """
    if n_aux is None:
        return tqs_multi_species(table, cfg_x, cfg_res).z_hat
    s = table.n_species
    if s < 2:
        raise EvalError("need >= 2 species")
    y = table.counts
    x = table.covariates
    residuals = np.empty_like(y)
    for i in range(s):
        model = fit(cfg_x.with_seed(species_seed(cfg_x.seed, i)), x, y[:, i])
        residuals[:, i] = y[:, i] - predict(model, x)
    z_hat = np.empty_like(y)
    for i in range(s):
        others = _aux_species(y, i, n_aux)
        model = fit(
            cfg_res.with_seed(species_seed(cfg_res.seed, i)),
            residuals[:, others],
            residuals[:, i],
        )
        z_hat[:, i] = y[:, i] - predict(model, residuals[:, others])
    return z_hat


def denoise_hs(table, cfg_res, n_aux=None):
    """Half-sibling z-hat matrix, re-centered to each species' mean."""
    s = table.n_species
    if s < 2:
        raise EvalError("need >= 2 species")
    y = table.counts
    z_hat = np.empty_like(y)
    for i in range(s):
        others = _aux_species(y, i, n_aux) if n_aux is not None \
            else [j for j in range(s) if j != i]
        cfg = cfg_res.with_seed(species_seed(cfg_res.seed, i))
        # HS output is a residual; restore the observed mean so the
        # downstream smoother works on the measurement scale
        z_hat[:, i] = hs_estimate(y[:, i], y[:, others], cfg) + y[:, i].mean()
    return z_hat


# ---------------------------------------------------------------------------
# leave-one-year-out protocol


@dataclass(frozen=True)
class EvalCell:
    species: str
    train_group: str
    test_group: str
    method: str
    mse: float


@dataclass(frozen=True)
class EvalReport:
    cells: tuple
    improvements: dict  # method -> mean percent improvement vs the baseline
    diagnostics: dict
    baseline: str = "raw"

    def mean_mse(self, method):
        vals = [c.mse for c in self.cells if c.method == method]
        if not vals:
            raise EvalError(f"no cells for method {method!r}")
        return float(np.mean(vals))

    def to_json(self, path, preamble=None):
        doc = {
            "meta": dict(preamble or {}),
            "baseline": self.baseline,
            "improvements": self.improvements,
            "diagnostics": self.diagnostics,
            "cells": [
                {
                    "species": c.species,
                    "train_group": c.train_group,
                    "test_group": c.test_group,
                    "method": c.method,
                    "mse": c.mse,
                }
                for c in self.cells
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path, preamble=()):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for line in preamble:
                fh.write(f"# {line}\n")
            fh.write("species,train_group,test_group,method,mse\n")
            for c in self.cells:
                fh.write(
                    f"{c.species},{c.train_group},{c.test_group},{c.method},{c.mse!r}\n"
                )


def _unique_groups(table):
    seen = []
    for g in table.group_labels:
        if g not in seen:
            seen.append(g)
    return seen


def compute_diagnostics(table, cfg_x, cfg_res, column):
    """Table-1-style diagnostics from a full-table denoise per method."""
    out = {}
    for method, z_hat in (
        ("3qs", denoise_3qs(table, cfg_x, cfg_res)),
        ("hs", denoise_hs(table, cfg_res)),
    ):
        corr = external_correlation(table, z_hat, column)
        retained = retained_std_fraction(table.counts, z_hat)
        out[method] = {
            "correlation_before": [c[0] for c in corr],
            "correlation_after": [c[1] for c in corr],
            "retained_std": retained,
        }
    out["species"] = list(table.species_names)
    return out


def loyo_evaluate(table, methods, cfg_x, cfg_res, smooth_cfg, test_filter=None,
                  brightness_column=None, n_aux=None, with_diagnostics=False):
    """Leave-one-group-out predictive evaluation of denoising methods.

    ``methods`` is a subset of ``method_suite()``.  ``test_filter``, if
    given, maps the test-year table to a boolean row mask (e.g. a
    brightness-zero rule).  ``n_aux`` caps the auxiliary species used
    by hs/3qs.  Test rows never touch any fitted model.
    """
    methods = list(methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise EvalError(f"unknown methods: {sorted(unknown)}")
    groups = _unique_groups(table)
    if len(groups) < 2:
        raise EvalError("need >= 2 distinct group labels")
    if table.n_species < 2:
        raise EvalError("need >= 2 species")
    needs_brightness = "mb" in methods
    if (needs_brightness or with_diagnostics) and brightness_column is None:
        if len(table.diagnostics) == 1:
            brightness_column = next(iter(table.diagnostics))
        else:
            raise EvalError("mb/diagnostics require a brightness column")
    if needs_brightness and brightness_column not in table.diagnostics:
        raise EvalError(f"no diagnostic column {brightness_column!r}")

    score_methods = list(dict.fromkeys(["raw"] + methods))
    cells = []
    for test_g in groups:
        train, test = split_by_group(table, test_g)
        mask = np.asarray(test_filter(test), dtype=bool) if test_filter is not None \
            else np.ones(test.n_rows, dtype=bool)
        if not mask.any():
            raise EvalError(f"empty test subset for group {test_g!r}")
        test_x = test.covariates[mask]
        test_y = test.counts[mask]
        test_bright = (
            test.diagnostics[brightness_column][mask] if needs_brightness else None
        )

        denoised = {"raw": train.counts}
        if "3qs" in score_methods:
            denoised["3qs"] = denoise_3qs(train, cfg_x, cfg_res, n_aux=n_aux)
        if "hs" in score_methods:
            denoised["hs"] = denoise_hs(train, cfg_res, n_aux=n_aux)
        train_groups = [g for g in groups if g != test_g]
        train_labels = np.array(train.group_labels)

        global_mse = {}
        if "global" in score_methods:
            for i, sp in enumerate(table.species_names):
                model = fit(smooth_cfg, train.covariates, train.counts[:, i])
                pred = predict(model, test_x)
                global_mse[sp] = float(np.mean((test_y[:, i] - pred) ** 2))

        for train_g in train_groups:
            rows = train_labels == train_g
            year_x = train.covariates[rows]
            for i, sp in enumerate(table.species_names):
                for method in score_methods:
                    if method == "global":
                        mse = global_mse[sp]
                    elif method == "mb":
                        bright = train.diagnostics[brightness_column][rows]
                        feats = np.column_stack([year_x[:, 0], bright])
                        model = fit(cfg_res.with_seed(species_seed(cfg_res.seed, i)),
                                    feats, train.counts[rows, i])
                        pred = predict(
                            model, np.column_stack([test_x[:, 0], test_bright])
                        )
                        mse = float(np.mean((test_y[:, i] - pred) ** 2))
                    else:
                        model = fit(smooth_cfg, year_x, denoised[method][rows, i])
                        pred = predict(model, test_x)
                        mse = float(np.mean((test_y[:, i] - pred) ** 2))
                    cells.append(EvalCell(sp, train_g, test_g, method, mse))

    # aggregate as improvement of the mean MSE over all cells; a mean of
    # per-cell ratios is dominated by cells where the baseline happens
    # to be tiny
    raw_mean = float(np.mean([c.mse for c in cells if c.method == "raw"]))
    improvements = {}
    for method in methods:
        method_mean = float(np.mean([c.mse for c in cells if c.method == method]))
        improvements[method] = percent_improvement(method_mean, raw_mean)

    diagnostics = {}
    if with_diagnostics:
        diagnostics = compute_diagnostics(table, cfg_x, cfg_res, brightness_column)

    return EvalReport(
        cells=tuple(c for c in cells if c.method in methods),
        improvements=improvements,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# survey simulation


@dataclass(frozen=True)
class MothSimulation:
    table: ObservationTable
    true_log_abundance: np.ndarray  # (rows, species) noise-free log counts


def simulate_moth_survey(years=5, days_per_year=180, n_species=10, seed=0,
                         beta=1.0, idio_sigma=0.1, weather_floor=0.0,
                         activity_scale=0.25):
    """Moon-driven survey simulation with known ground truth.

    Per species the latent log-abundance is a sum of 1-2 seasonal
    Gaussian bumps with year-jittered timing and height.  Detection
    noise has two shared nightly channels plus small idiosyncratic
    noise: -beta_i times the effective moon brightness, and a slowly
    varying activity/weather factor.  Brightness follows a 29.5-day
    cycle whose phase shifts per year; the effective (ground) value is
    the astronomical one scaled by a nightly weather factor in
    [weather_floor, 1].  The diagnostic column stores only the
    astronomical brightness: an imperfect proxy for the detection
    conditions, as in real surveys.
    """
    if years < 2:
        raise EvalError("need >= 2 years")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 77]))
    days = np.arange(1.0, days_per_year + 1.0)
    m = years * days_per_year

    n_bumps = rng.integers(1, 3, size=n_species)
    margin = min(30.0, days_per_year / 4.0)
    centers = rng.uniform(margin, days_per_year - margin, size=(n_species, 2))
    widths = rng.uniform(10.0, 30.0, size=(n_species, 2))
    heights = rng.uniform(1.5, 3.0, size=(n_species, 2))
    loadings = rng.uniform(0.8, 1.2, size=n_species)
    phases = rng.uniform(0.0, LUNAR_PERIOD, size=years)

    covariates = np.empty((m, 1))
    labels = []
    brightness = np.empty(m)
    truth = np.empty((m, n_species))
    for yidx in range(years):
        rows = slice(yidx * days_per_year, (yidx + 1) * days_per_year)
        covariates[rows, 0] = days
        labels += [f"y{2013 + yidx}"] * days_per_year
        brightness[rows] = np.abs(np.sin(np.pi * (days + phases[yidx]) / LUNAR_PERIOD))
        for i in range(n_species):
            curve = np.zeros(days_per_year)
            for b in range(n_bumps[i]):
                c = centers[i, b] + rng.normal(0.0, 5.0)
                h = heights[i, b] * np.exp(rng.normal(0.0, 0.15))
                curve += h * np.exp(-0.5 * ((days - c) / widths[i, b]) ** 2)
            truth[rows, i] = curve
    # scale each species' detection loss with its seasonal variability so
    # the brightness correlation stays in a comparable band across species
    betas = beta * loadings * truth.std(axis=0)
    weather = rng.uniform(weather_floor, 1.0, size=m)
    effective = brightness * weather
    # smooth shared activity factor (~10-day correlation, zero mean,
    # unit variance per year); looks like seasonal signal to a smoother
    activity = np.empty(m)
    kernel = np.exp(-0.5 * (np.arange(-15, 16) / 5.0) ** 2)
    kernel /= np.sqrt(np.sum(kernel**2))
    for yidx in range(years):
        rows = slice(yidx * days_per_year, (yidx + 1) * days_per_year)
        white = rng.normal(0.0, 1.0, size=days_per_year + 30)
        smooth = np.convolve(white, kernel, mode="valid")
        activity[rows] = smooth - smooth.mean()
    act_load = rng.uniform(0.8, 1.2, size=n_species)
    gammas = activity_scale * act_load * truth.std(axis=0)
    idio = rng.normal(0.0, idio_sigma, size=(m, n_species))
    observed = (
        truth
        - betas[None, :] * effective[:, None]
        - gammas[None, :] * activity[:, None]
        + idio
    )

    table = ObservationTable(
        covariates=covariates,
        counts=observed,
        species_names=[f"species_{i:02d}" for i in range(n_species)],
        group_labels=labels,
        diagnostics={"moon_brightness": brightness},
        covariate_names=("day_of_year",),
        group_name="year",
    )
    return MothSimulation(table=table, true_log_abundance=truth)
