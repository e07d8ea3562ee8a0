"""Command-line entry point.

Each subcommand reads a JSON config, writes its artifacts under ``--out``
(default ``results/<subcommand>-<config hash>-s<seed>``) and prints one
summary line.  Exit status: 0 success, 1 usage or config error, 2 failed
verification check.
"""

import argparse
import logging
import math
import os
import sys
from types import SimpleNamespace

import numpy as np

from .. import rng as rng_mod
from ..christoffel import (SamplingLaw, read_values_csv, sampling_law, sampling_seminorm,
                           uniform_law, write_json, write_values_csv)
from ..errors import NoCertificateError, PromptCSError
from ..generators import enumerate_cones
from ..measurement import (IID, apply, apply_array, draw_plan, read_measurements_csv,
                           read_plan_json, write_measurements_csv, write_plan_json)
from ..recovery import RecoveryConfig, recover
from ..signals import read_signal_csv, write_signal_csv
from ..verification import (SecantClass, check_nondegeneracy, check_srec, complexity_lipschitz,
                            complexity_net, complexity_piecewise, complexity_relu,
                            concentration_experiment, srec_pair_check)
from .config import ConfigError, _get, build_generator, config_hash, load_json, parse_experiment
from .experiment import estimate_christoffel, run_experiment, run_lambda_grid, write_lambda_outputs

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser():
    p = _Parser(prog="promptcs", description="Prompt-conditioned generative compressed sensing")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="JSON config path")
        sp.add_argument("--out", help="results directory")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--workers", type=int, default=1, help="parallel grid workers")
        sp.add_argument("--constant", type=float, help="theorem constant override")
        return sp

    add("christoffel", "estimate a Christoffel function")
    add("law", "build a sampling law from a prompt or a Christoffel CSV")
    add("lambda", "compatibility matrix over a prompt family")
    add("sample", "draw a measurement plan")
    add("recover", "latent recovery from measurements")
    add("verify", "run a verification check").add_argument(
        "--check", required=True, choices=("nondegeneracy", "srec", "seminorm", "concentration"))
    add("experiment", "full lambda and reconstruction grid")
    add("complexity", "sample-complexity calculator").add_argument(
        "--regime", required=True, choices=("relu", "lipschitz", "piecewise", "net"))
    return p


# ---------------------------------------------------------------------------
# shared config helpers


def _seed(args, cfg):
    if args.seed is not None:
        return int(args.seed)
    return _get(cfg, "seed", "$", int, 0)


def _out_dir(args, cfg, seed):
    out = args.out or os.path.join("results", f"{args.command}-{config_hash(cfg)}-s{seed}")
    os.makedirs(out, exist_ok=True)
    return out


def _path(base, p):
    return p if os.path.isabs(p) else os.path.join(base, p)


def _prompt(cfg, G, key="prompt"):
    c = _get(cfg, key, "$", str, required=True)
    if c not in G.conditions:
        raise ConfigError(f"$.{key}", f"unknown condition {c!r}")
    return c


def _law(cfg, G, seed, base):
    """Law from ``law`` (``uniform`` or a mu CSV path) or estimated for ``prompt``."""
    spec = cfg.get("law")
    if spec == "uniform":
        return uniform_law(G.n if G else int(cfg["n"]))
    if isinstance(spec, str):
        probs = read_values_csv(_path(base, spec))
        return SamplingLaw(probs / probs.sum())
    if G is None:
        raise ConfigError("$.law", "need a law path or a generator")
    est = estimate_christoffel(G, _prompt(cfg, G), _kcfg(cfg, seed))
    return sampling_law(est, floor=_get(cfg, "floor", "$", float, 1e-12))


def _kcfg(cfg, seed):
    mode = _get(cfg, "christoffel_mode", "$", str, "monte_carlo")
    if mode not in ("monte_carlo", "exact"):
        raise ConfigError("$.christoffel_mode", "must be 'monte_carlo' or 'exact'")
    return SimpleNamespace(christoffel_mode=mode, seed=seed,
                           christoffel_trials=_get(cfg, "christoffel_trials", "$", int, 500))


def _generator(cfg, base, required=True):
    if "generator" in cfg or "family" in cfg:
        return build_generator(cfg, base_dir=base)
    if required:
        raise ConfigError("$.generator", "missing required field")
    return None


def _plan(cfg, G, seed, base):
    if "plan" in cfg:
        return read_plan_json(_path(base, cfg["plan"]))
    law = _law(cfg, G, seed, base)
    if "m" in cfg:
        m = _get(cfg, "m", "$", int)
    elif "ratio" in cfg:
        m = max(1, int(round(_get(cfg, "ratio", "$", float) * law.n)))
    else:
        raise ConfigError("$.m", "need m, ratio or plan")
    draw_mode = _get(cfg, "draw_mode", "$", str, IID)
    return draw_plan(law, m, draw_mode, seed=rng_mod.derive_seed(seed, "cli-plan"),
                     channels=G.channels if G else _get(cfg, "channels", "$", int, 1))


def _decomp(G, c):
    return enumerate_cones(G, c)


# ---------------------------------------------------------------------------
# subcommands; each returns (exit code, summary line)


def cmd_christoffel(args, cfg, seed, out, base):
    G = _generator(cfg, base)
    c = _prompt(cfg, G)
    est = estimate_christoffel(G, c, _kcfg(cfg, seed))
    write_values_csv(os.path.join(out, "K.csv"), est.values, "K")
    os.makedirs(os.path.join(out, "reports"), exist_ok=True)
    write_json(os.path.join(out, "reports", "christoffel.json"), est.to_json())
    return EXIT_OK, f"christoffel {c}: mode={est.mode} kappa={est.kappa:.6g} n={est.n}"


def cmd_law(args, cfg, seed, out, base):
    if "christoffel" in cfg:
        K = read_values_csv(_path(base, cfg["christoffel"]))
        law = sampling_law(K, floor=_get(cfg, "floor", "$", float, 1e-12))
    else:
        G = _generator(cfg, base)
        law = _law(cfg, G, seed, base)
    write_values_csv(os.path.join(out, "mu.csv"), law.probs, "mu")
    write_json(os.path.join(out, "law.json"), law.to_json())
    return EXIT_OK, f"law: n={law.n} kappa={law.kappa:.6g} min_prob={law.min_prob:.3g}"


def cmd_lambda(args, cfg, seed, out, base):
    exp = parse_experiment(cfg, base_dir=base, seed=seed)
    res = run_lambda_grid(exp)
    write_lambda_outputs(out, res)
    if res.report is None:
        return EXIT_OK, f"lambda: every prompt degenerate ({len(res.degenerate)})"
    diag = np.diag(res.report.table)
    return EXIT_OK, (f"lambda: {len(res.report.labels)}x{len(res.report.labels)} grid, "
                     f"diagonal min {diag.min():.6g}, degenerate={len(res.degenerate)}")


def cmd_sample(args, cfg, seed, out, base):
    G = _generator(cfg, base, required=False)
    plan = _plan(cfg, G, seed, base)
    write_plan_json(os.path.join(out, "plan.json"), plan)
    return EXIT_OK, f"sample: m={plan.m} n={plan.n} mode={plan.mode} draw={plan.draw_mode}"


def cmd_recover(args, cfg, seed, out, base):
    G = _generator(cfg, base)
    c = _prompt(cfg, G)
    plan = _plan(cfg, G, seed, base)
    if "measurements" in cfg:
        y = read_measurements_csv(_path(base, cfg["measurements"]))
    elif "signal" in cfg:
        y = apply(plan, read_signal_csv(_path(base, cfg["signal"])))
    else:
        raise ConfigError("$.measurements", "need measurements or signal")
    try:
        rc = RecoveryConfig.from_dict(dict(cfg.get("recovery", {}), seed=seed))
    except (PromptCSError, TypeError) as exc:
        raise ConfigError("$.recovery", str(exc)) from None
    res = recover(G, c, plan, y, rc)
    write_signal_csv(os.path.join(out, "f_hat.csv"), res.f_hat)
    write_plan_json(os.path.join(out, "plan.json"), plan)
    write_measurements_csv(os.path.join(out, "measurements.csv"), y)
    os.makedirs(os.path.join(out, "reports"), exist_ok=True)
    write_json(os.path.join(out, "reports", "recover.json"), res.to_json())
    return EXIT_OK, (f"recover {c}: residual_norm={res.residual_norm:.6g} "
                     f"steps={res.steps_used} restart={res.restart_index}")


def _verify_nondegeneracy(cfg, seed, base):
    G = _generator(cfg, base)
    c = _prompt(cfg, G)
    plan = _plan(cfg, G, seed, base)
    tau = _get(cfg, "tau", "$", float, required=True)
    method = _get(cfg, "method", "$", str, "exact_spectral")
    rep = check_nondegeneracy(_decomp(G, c), plan, tau, method,
                              probes=_get(cfg, "probes", "$", int, 100_000), seed=seed)
    return G, c, plan, rep


def cmd_verify(args, cfg, seed, out, base):
    os.makedirs(os.path.join(out, "reports"), exist_ok=True)
    report_path = os.path.join(out, "reports", f"{args.check}.json")
    if args.check == "nondegeneracy":
        _, _, _, rep = _verify_nondegeneracy(cfg, seed, base)
        write_json(report_path, rep.to_json())
        code = EXIT_OK if rep.passed else EXIT_FAILED
        return code, f"nondegeneracy: tau_hat={rep.tau_hat:.6g} tau={rep.tau} passed={rep.passed}"
    if args.check == "srec":
        G, c, plan, rep = _verify_nondegeneracy(cfg, seed, base)
        try:
            srec = check_srec(rep)
        except NoCertificateError as exc:
            write_json(report_path, {"nondegeneracy": rep.to_json(), "certificate": None})
            return EXIT_FAILED, f"srec: no certificate ({exc})"
        pairs = _get(cfg, "pairs", "$", int, 10_000)
        violations, worst = srec_pair_check(G, c, plan, srec.gamma, srec.q, pairs, seed)
        write_json(report_path, {"nondegeneracy": rep.to_json(), "srec": srec.to_json(),
                                 "pairs": pairs, "violations": violations, "worst_margin": worst})
        code = EXIT_OK if violations == 0 else EXIT_FAILED
        return code, f"srec: gamma={srec.gamma:.6g} violations={violations}/{pairs}"
    G = _generator(cfg, base)
    c = _prompt(cfg, G)
    law = _law(cfg, G, seed, base)
    secants = SecantClass(G, c, cfg.get("prompt2"))
    rng = rng_mod.stream(seed, "cli-verify", args.check)
    if args.check == "seminorm":
        pairs = _get(cfg, "pairs", "$", int, 10_000)
        m = _get(cfg, "m", "$", int, max(1, law.n // 4))
        H = secants.sample(rng, pairs)
        worst, violations = -math.inf, 0
        for j, h in enumerate(H):
            plan = draw_plan(law, m, seed=rng_mod.derive_seed(seed, "seminorm-plan", j),
                             channels=G.channels)
            lhs = float(np.linalg.norm(apply_array(plan, h)))
            rhs = sampling_seminorm(SimpleNamespace(data=h, channels=G.channels), law)
            worst = max(worst, lhs - rhs)
            violations += lhs > rhs + 1e-12
        write_json(report_path, {"pairs": pairs, "m": m, "violations": violations,
                                 "worst_excess": worst})
        return (EXIT_OK if violations == 0 else EXIT_FAILED,
                f"seminorm: violations={violations}/{pairs} worst_excess={worst:.3g}")
    m_grid = _get(cfg, "m_grid", "$", list, [4, 16, 64])
    eps = _get(cfg, "eps", "$", float, 0.5)
    trials = _get(cfg, "trials", "$", int, 10_000)
    H = secants.sample(rng, _get(cfg, "secants", "$", int, 3))
    table = concentration_experiment(H, law, m_grid, eps, trials, seed, G.channels)
    write_json(report_path, {"rows": table.rows, "monotone": table.monotone,
                             "unbiased": table.unbiased})
    ok = table.monotone and table.unbiased
    return (EXIT_OK if ok else EXIT_FAILED,
            f"concentration: unbiased={table.unbiased} monotone={table.monotone}")


def cmd_experiment(args, cfg, seed, out, base):
    exp = parse_experiment(cfg, base_dir=base, seed=seed)
    lam, rows, summary = run_experiment(exp, out, workers=max(1, args.workers))
    diverged = sum(r["status"] == "diverged" for r in rows)
    return EXIT_OK, (f"experiment {exp.scenario}: {len(rows)} rows, {len(summary)} cells, "
                     f"diverged={diverged}, hash={exp.hash}")


def cmd_complexity(args, cfg, seed, out, base):
    const = args.constant if args.constant is not None else _get(cfg, "constant", "$", float, 1.0)
    fields = {"relu": ("k", "d", "widths", "tau", "delta", "mu_min", "Lambda"),
              "lipschitz": ("k", "L", "R", "xi", "tau", "delta", "mu_min", "Lambda"),
              "piecewise": ("N", "k", "tau", "delta", "mu_min", "Lambda"),
              "net": ("net_size", "tau", "delta", "Lambda")}[args.regime]
    missing = [f for f in fields if f not in cfg]
    if missing:
        raise ConfigError(f"$.{missing[0]}", "missing required field")
    fn = {"relu": complexity_relu, "lipschitz": complexity_lipschitz,
          "piecewise": complexity_piecewise, "net": complexity_net}[args.regime]
    budget = fn(*(cfg[f] for f in fields), constant=const)
    write_json(os.path.join(out, "complexity.json"), budget.to_json())
    return EXIT_OK, f"complexity {budget.regime}: m_required={budget.m_required}"


COMMANDS = {"christoffel": cmd_christoffel, "law": cmd_law, "lambda": cmd_lambda,
            "sample": cmd_sample, "recover": cmd_recover, "verify": cmd_verify,
            "experiment": cmd_experiment, "complexity": cmd_complexity}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _parser().parse_args(argv)
        cfg = load_json(args.config)
        if not isinstance(cfg, dict):
            raise ConfigError("$", "config must be a JSON object")
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        seed = _seed(args, cfg)
        out = _out_dir(args, cfg, seed)
        base = os.path.dirname(os.path.abspath(args.config))
        code, line = COMMANDS[args.command](args, cfg, seed, out, base)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PromptCSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(line)
    return code


if __name__ == "__main__":
    sys.exit(main())
