"""Gate-coefficient sensitivity sweep and its regression analysis.

Runs the gated trainer over a grid of (alpha, beta, gamma, delta, eps_ca)
values, collects test accuracy per cell, and summarizes each coefficient's
influence two ways: Pearson correlation of accuracy against the coefficient
column, and standardized least-squares regression coefficients (all columns
z-scored), whose absolute values rank relative impact.
"""

import itertools
import warnings
from dataclasses import replace

import numpy as np

from .learner import GateConfig, Hyperparams, MlpArchitecture, train

COEFF_NAMES = ("alpha", "beta", "gamma", "delta", "eps_ca")


def expand_grid(grid: dict) -> list:
    """Cartesian product of per-coefficient value lists, as dicts."""
    names = [n for n in COEFF_NAMES if n in grid]
    if not names or any(len(grid[n]) == 0 for n in names):
        raise ValueError("sweep grid must give at least one value per coefficient")
    cells = []
    for combo in itertools.product(*(grid[n] for n in names)):
        cells.append(dict(zip(names, combo)))
    return cells


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sx, sy = x.std(), y.std()
    if sx == 0 or sy == 0:
        return float("nan")
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


def standardized_coefficients(columns: dict, response) -> dict:
    """Least-squares coefficients after z-scoring every column and the response.

    Constant columns get coefficient 0 (they carry no variation to attribute).
    """
    y = np.asarray(response, dtype=np.float64)
    names = list(columns)
    mats = []
    active = []
    for name in names:
        col = np.asarray(columns[name], dtype=np.float64)
        sd = col.std()
        if sd == 0:
            continue
        mats.append((col - col.mean()) / sd)
        active.append(name)
    out = {name: 0.0 for name in names}
    if not mats or y.std() == 0:
        warnings.warn("degenerate sweep: no varying columns or constant accuracy")
        return out
    A = np.stack(mats, axis=1)
    yz = (y - y.mean()) / y.std()
    coef, *_ = np.linalg.lstsq(A, yz, rcond=None)
    out.update(dict(zip(active, coef)))
    return out


def run_sweep(train_set, test_set, architecture: MlpArchitecture, grid: dict,
              base_gate: GateConfig, hypers: Hyperparams, epochs: int,
              seed: int, signal_stream=None, sample_aligned_signal=False,
              jobs=1):
    """Accuracy per grid cell plus correlation/regression summaries.

    Cells are independent; ``jobs`` > 1 fans them out over a thread pool
    (the training kernel releases the GIL).
    """
    cells = expand_grid(grid)

    def one(cell):
        gate = replace(base_gate, **cell)
        _, metrics = train(train_set, architecture, gate, hypers,
                           epochs=epochs, seed=seed, mode="gated",
                           signal_stream=signal_stream, eval_set=test_set,
                           sample_aligned_signal=sample_aligned_signal)
        return {**{n: gate.coeff_dict()[n] for n in COEFF_NAMES},
                "accuracy": metrics[-1].accuracy}

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one, cells))
    else:
        rows = [one(cell) for cell in cells]
    acc = [r["accuracy"] for r in rows]
    columns = {n: [r[n] for r in rows] for n in COEFF_NAMES}
    if len(rows) < 2:
        warnings.warn("single-cell sweep: correlations are undefined")
        correlations = {n: float("nan") for n in COEFF_NAMES}
        coefficients = {n: float("nan") for n in COEFF_NAMES}
    else:
        correlations = {n: pearson(columns[n], acc) for n in COEFF_NAMES}
        coefficients = standardized_coefficients(columns, acc)
    return {
        "cells": rows,
        "correlations": correlations,
        "standardized_coefficients": coefficients,
    }


def top_coefficient(coefficients: dict) -> str:
    """Name of the largest-|coefficient| entry (NaNs excluded)."""
    best, best_val = None, -1.0
    for name, val in coefficients.items():
        if np.isnan(val):
            continue
        if abs(val) > best_val:
            best, best_val = name, abs(val)
    return best
