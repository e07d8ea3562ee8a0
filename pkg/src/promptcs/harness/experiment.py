"""Experiment grids: Christoffel laws, the compatibility matrix and reconstruction sweeps.

Every grid cell draws its randomness from seeds derived from the master seed
and the cell coordinates, so cells can run in any order (or in parallel) and
the written tables do not depend on scheduling.
"""

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .. import rng as rng_mod
from ..christoffel import (christoffel_exact_subspace, christoffel_linear,
                           christoffel_monte_carlo, lambda_grid, sampling_law, uniform_law,
                           write_grid_csv, write_json, write_values_csv)
from ..errors import DegenerateClassError, DivergenceError, PromptCSError
from ..generators import LinearGenerator, enumerate_cones
from ..measurement import add_noise, apply, apply_array, draw_plan, zero_filled
from ..recovery import recover
from ..signals import Signal, psnr, read_signal_csv, relative_error
from .config import UNIFORM

log = logging.getLogger(__name__)

ROW_FIELDS = ("scenario", "c_s", "c_r", "ratio", "trial", "seed", "psnr_db", "rel_error",
              "residual", "steps", "wall_time", "estimator", "peak", "status", "config_hash")
SUMMARY_FIELDS = ("scenario", "estimator", "c_s", "c_r", "ratio", "count", "diverged",
                  "exact", "mean_rel_error", "se_rel_error", "ci95_rel_error",
                  "mean_psnr_db", "se_psnr_db", "ci95_psnr_db")


def fmt(x):
    """Shortest round-tripping text for a float; ``exact`` for infinite PSNR."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isinf(x) and x > 0:
        return "exact"
    return repr(x)


# ---------------------------------------------------------------------------
# Christoffel laws and the compatibility matrix


@dataclass
class LambdaResult:
    prompts: list
    estimates: dict
    laws: dict
    report: object
    degenerate: list


def estimate_christoffel(G, c, cfg):
    if cfg.christoffel_mode == "exact":
        if isinstance(G, LinearGenerator):
            return christoffel_linear(G, c, c)
        decomp = enumerate_cones(G, c)
        return christoffel_exact_subspace(decomp, decomp, G.channels,
                                          seed=rng_mod.derive_seed(cfg.seed, "K-lower", c))
    return christoffel_monte_carlo(G, c, c, cfg.christoffel_trials,
                                   seed=rng_mod.derive_seed(cfg.seed, "K", c))


def run_lambda_grid(cfg, G=None, prompts=None):
    """Christoffel estimate and law per prompt, then the full compatibility matrix.

    Degenerate prompts (every sampled secant zero) are left out of the matrix
    and listed in ``degenerate``.
    """
    G = G or cfg.generator()
    prompts = list(prompts or cfg.prompts)
    estimates, laws, degenerate = {}, {}, []
    for c in prompts:
        try:
            estimates[c] = estimate_christoffel(G, c, cfg)
            laws[c] = sampling_law(estimates[c], floor=cfg.floor)
        except DegenerateClassError:
            log.warning("prompt %s is degenerate; excluded from the matrix", c)
            degenerate.append(c)
            estimates.pop(c, None)
    usable = [c for c in prompts if c in laws]
    report = lambda_grid(estimates, laws, usable) if usable else None
    return LambdaResult(prompts, estimates, laws, report, degenerate)


def write_lambda_outputs(out_dir, res):
    os.makedirs(os.path.join(out_dir, "laws"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "reports"), exist_ok=True)
    for c in res.laws:
        write_values_csv(os.path.join(out_dir, "laws", f"K_{c}.csv"), res.estimates[c].values, "K")
        write_values_csv(os.path.join(out_dir, "laws", f"mu_{c}.csv"), res.laws[c].probs, "mu")
    if res.report is not None:
        write_grid_csv(os.path.join(out_dir, "lambda.csv"), res.report)
    rows = {}
    for c in res.prompts:
        if c in res.degenerate:
            rows[str(c)] = {"status": "degenerate"}
        else:
            est, law = res.estimates[c], res.laws[c]
            rows[str(c)] = {"status": "ok", "kappa": est.kappa, "mode": est.mode,
                            "trials": est.trials, "min_prob": law.min_prob,
                            "floor_applied": law.floor_applied}
    doc = {"prompts": rows,
           "labels": [str(l) for l in res.report.labels] if res.report else [],
           "table": res.report.table.tolist() if res.report else [],
           "diagonal_argmin": res.report.argmax_index if res.report else None}
    write_json(os.path.join(out_dir, "reports", "lambda.json"), doc)


# ---------------------------------------------------------------------------
# reconstruction sweep


def _target_prompt(cfg, c_r):
    if cfg.scenario == "in_range_matched":
        return c_r
    held = cfg.target.get("held_out")
    return held["name"] if held else cfg.target.get("prompt", c_r)


def _spike_component(G, cfg, trial):
    """Sparse spikes with the generator's class ranges projected out."""
    n, C = G.n, G.channels
    rng = rng_mod.stream(cfg.seed, "spikes", trial)
    count = int(cfg.target.get("spikes", 3))
    v = np.zeros(C * n)
    v[rng.choice(C * n, size=min(count, C * n), replace=False)] = rng.choice([-1.0, 1.0], count)
    spans = []
    for c in G.conditions:
        if isinstance(G, LinearGenerator):
            spans.append(G.basis(c))
        else:
            Z = rng_mod.stream(cfg.seed, "span", c).standard_normal((4 * G.latent_dim, G.latent_dim))
            spans.append(G.forward_batch(Z, c).real.T)
    Q, s, _ = np.linalg.svd(np.hstack(spans), full_matrices=False)
    Q = Q[:, s > 1e-10 * s[0]]
    v = v - Q @ (Q.T @ v)
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def make_target(G, cfg, c_r, trial):
    """Ground truth for one (recovery prompt, trial); shared by every sampling law."""
    if cfg.scenario == "out_of_range" and "signal" in cfg.target:
        return read_signal_csv(os.path.join(cfg.base_dir, cfg.target["signal"]))
    c_t = _target_prompt(cfg, c_r)
    rng = rng_mod.stream(cfg.seed, "target", str(c_t), trial)
    z = rng.standard_normal(G.latent_dim)
    z *= min(1.0, 0.5 * G.radius / max(np.linalg.norm(z), 1e-300))
    f = G.forward_batch(z[None, :], c_t)[0]
    if cfg.scenario == "out_of_range":
        frac = float(cfg.target.get("fraction", 0.3))
        f = f + frac * np.linalg.norm(f) * _spike_component(G, cfg, trial)
    return Signal(f, G.channels, G.n)


def _metrics(f_star, f_hat, peak):
    return psnr(f_star, f_hat, peak), relative_error(f_star, f_hat)


def run_cell(G, cfg, laws, cell):
    """Recover one (c_s, c_r, ratio, trial) cell; returns model and baseline rows."""
    c_s, c_r, ratio, trial = cell
    t0 = time.perf_counter()
    seed = rng_mod.derive_seed(cfg.seed, "cell", str(c_s), str(c_r), repr(ratio), trial)
    f_star = make_target(G, cfg, c_r, trial)
    peak = cfg.psnr_peak or float(np.max(np.abs(f_star.data)))
    law = uniform_law(G.n) if c_s == UNIFORM else laws[c_s]
    m = min(G.n, max(1, int(round(ratio * G.n))))
    plan = draw_plan(law, m, cfg.draw_mode, seed=rng_mod.derive_seed(cfg.seed, "plan", str(c_s),
                                                                      repr(ratio), trial),
                     channels=G.channels)
    y = apply(plan, f_star)
    if cfg.noise_scale > 0:
        y = add_noise(plan, y, scale=cfg.noise_scale, seed=seed)
    base = dict(scenario=cfg.scenario, c_s=str(c_s), c_r=str(c_r), ratio=ratio, trial=trial,
                seed=seed, peak=peak, config_hash=cfg.hash)
    f_zf = zero_filled(plan, y)
    zf_res = float(np.linalg.norm(apply_array(plan, f_zf.data) - y.blocks))
    p, e = _metrics(f_star, f_zf, peak)
    baseline = dict(base, estimator="zero_filled", psnr_db=p, rel_error=e, residual=zf_res,
                    steps=0, status="ok")
    try:
        res = recover(G, c_r, plan, y, replace(cfg.recovery, seed=seed))
        p, e = _metrics(f_star, res.f_hat, peak)
        if not (math.isfinite(e) and math.isfinite(res.residual_norm)):
            raise DivergenceError("non-finite recovery metrics")
        model = dict(base, estimator="gcs", psnr_db=p, rel_error=e,
                     residual=res.residual_norm, steps=res.steps_used, status="ok")
    except (DivergenceError, FloatingPointError) as exc:
        log.warning("cell %s diverged: %s", cell, exc)
        model = dict(base, estimator="gcs", psnr_db=None, rel_error=None, residual=None,
                     steps=None, status="diverged")
    wall = time.perf_counter() - t0
    for row in (model, baseline):
        row["wall_time"] = wall if cfg.record_timing else None
    return [model, baseline]


def grid_cells(cfg, sampling=None, recovery=None):
    sampling = list(sampling or cfg.sampling_prompts or cfg.prompts)
    if cfg.include_uniform and UNIFORM not in sampling:
        sampling.append(UNIFORM)
    recovery = list(recovery or cfg.recovery_prompts or cfg.prompts)
    return [(s, r, ratio, t) for s in sampling for r in recovery
            for ratio in cfg.ratios for t in range(cfg.trials)]


def run_reconstruction_grid(cfg, G=None, laws=None, workers=1, cells=None):
    """Full sweep; rows come back in cell order whatever the worker count."""
    G = G or cfg.generator()
    if laws is None:
        laws = run_lambda_grid(cfg, G).laws
    cells = cells if cells is not None else grid_cells(cfg)
    missing = {s for s, *_ in cells if s != UNIFORM and s not in laws}
    if missing:
        raise PromptCSError(f"no sampling law for {sorted(map(str, missing))}")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda cell: run_cell(G, cfg, laws, cell), cells))
    else:
        chunks = [run_cell(G, cfg, laws, cell) for cell in cells]
    return [row for chunk in chunks for row in chunk]


def summarize(rows):
    """Mean, standard error and 95% half-width per (scenario, estimator, c_s, c_r, ratio)."""
    groups = {}
    for row in rows:
        key = tuple(row[k] for k in ("scenario", "estimator", "c_s", "c_r", "ratio"))
        groups.setdefault(key, []).append(row)
    out = []
    for key, members in groups.items():
        ok = [r for r in members if r["status"] == "ok"]
        errs = np.array([r["rel_error"] for r in ok], dtype=float)
        psnrs = np.array([r["psnr_db"] for r in ok], dtype=float)
        finite = psnrs[np.isfinite(psnrs)]
        me, se = mean_se(errs)
        mp, sp = mean_se(finite)
        if finite.size == 0 and psnrs.size:
            mp = math.inf
        out.append(dict(zip(("scenario", "estimator", "c_s", "c_r", "ratio"), key),
                        count=len(members), diverged=len(members) - len(ok),
                        exact=int(psnrs.size - finite.size),
                        mean_rel_error=me, se_rel_error=se, ci95_rel_error=_ci(se),
                        mean_psnr_db=mp, se_psnr_db=sp, ci95_psnr_db=_ci(sp)))
    return out


def mean_se(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return None, None
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return mean, se


def _ci(se):
    return None if se is None else 1.96 * se


def write_rows_csv(path, rows, fields=ROW_FIELDS):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([fmt(row.get(f)) for f in fields])


def read_rows_csv(path):
    """Rows as dicts with numeric fields parsed (``exact`` PSNR becomes ``inf``)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in ("ratio", "psnr_db", "rel_error", "residual", "peak", "wall_time"):
            if key in row:
                v = row[key]
                row[key] = None if v == "" else (math.inf if v == "exact" else float(v))
        for key in ("trial", "seed", "steps"):
            if key in row:
                row[key] = None if row[key] == "" else int(row[key])
    return rows


def run_experiment(cfg, out_dir, workers=1):
    """Lambda grid plus reconstruction sweep, written under ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    G = cfg.generator()
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg.raw, fh, indent=2, sort_keys=True)
    lam = run_lambda_grid(cfg, G)
    write_lambda_outputs(out_dir, lam)
    cells = [c for c in grid_cells(cfg) if c[0] == UNIFORM or c[0] in lam.laws]
    rows = run_reconstruction_grid(cfg, G, lam.laws, workers, cells)
    write_rows_csv(os.path.join(out_dir, "rows.csv"), rows)
    summary = summarize(rows)
    write_rows_csv(os.path.join(out_dir, "summary.csv"), summary, SUMMARY_FIELDS)
    write_json(os.path.join(out_dir, "reports", "run.json"),
               {"config_hash": cfg.hash, "seed": cfg.seed, "cells": len(cells),
                "rows": len(rows), "degenerate": [str(c) for c in lam.degenerate],
                "diverged": sum(r["status"] == "diverged" for r in rows)})
    return lam, rows, summary
