"""JSON experiment configuration with field-path error reporting."""

import hashlib
import json
import os
from dataclasses import dataclass, field

from ..errors import InvalidInputError
from ..generators import (derive_condition, from_json, linear_tightness_family,
                          relu_tightness_family)
from ..recovery import RecoveryConfig

SCENARIOS = ("in_range_matched", "in_range_mismatched", "out_of_range")
UNIFORM = "uniform"


class ConfigError(InvalidInputError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(path, "file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(path, f"invalid JSON ({exc})") from None


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _get(obj, key, path, kind, default=None, required=False):
    if key not in obj:
        if required:
            raise ConfigError(f"{path}.{key}", "missing required field")
        return default
    value = obj[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}")
    return value


def build_generator(obj, path="$", base_dir="."):
    """Generator from an inline spec, a file path, or a ``family`` constructor."""
    if "generator" in obj:
        spec = obj["generator"]
        if isinstance(spec, str):
            spec = load_json(os.path.join(base_dir, spec))
        try:
            return from_json(spec)
        except InvalidInputError as exc:
            raise ConfigError(f"{path}.generator", str(exc)) from None
    fam = _get(obj, "family", path, dict, required=True)
    fpath = f"{path}.family"
    kind = _get(fam, "kind", fpath, str, required=True)
    prompts = _get(fam, "prompts", fpath, list, default=obj.get("prompts"))
    if not prompts:
        raise ConfigError(f"{fpath}.prompts", "prompt list is empty")
    unc = fam.get("unconditioned", obj.get("unconditioned"))
    named = [p for p in prompts if p != unc]
    common = dict(n=_get(fam, "n", fpath, int, required=True),
                  k=_get(fam, "k", fpath, int, required=True),
                  prompts=named,
                  theta=_get(fam, "theta", fpath, float, 0.8),
                  channels=_get(fam, "channels", fpath, int, 1),
                  seed=_get(fam, "seed", fpath, int, 0),
                  unconditioned=unc,
                  shared_width=_get(fam, "shared_width", fpath, int, 2),
                  band_width=_get(fam, "band_width", fpath, int, None))
    try:
        if kind == "linear_tightness":
            return linear_tightness_family(**common)
        if kind == "relu_tightness":
            hidden = _get(fam, "hidden", fpath, list, required=True)
            return relu_tightness_family(hidden=hidden, **common)
    except InvalidInputError as exc:
        raise ConfigError(fpath, str(exc)) from None
    raise ConfigError(f"{fpath}.kind", f"unknown family {kind!r}")


@dataclass
class ExperimentConfig:
    raw: dict
    prompts: list
    ratios: list
    trials: int = 5
    draw_mode: str = "without_replacement_dc"
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    christoffel_trials: int = 500
    christoffel_mode: str = "monte_carlo"
    floor: float = 1e-12
    seed: int = 0
    scenario: str = "in_range_matched"
    target: dict = field(default_factory=dict)
    sampling_prompts: list = None
    recovery_prompts: list = None
    include_uniform: bool = False
    noise_scale: float = 0.0
    psnr_peak: float = None
    record_timing: bool = False
    base_dir: str = "."

    @property
    def hash(self):
        return config_hash(self.raw)

    def generator(self):
        G = build_generator(self.raw, base_dir=self.base_dir)
        held = self.target.get("held_out")
        if held:
            G = derive_condition(G, held["base"], held["name"], float(held["theta"]),
                                 seed=int(held.get("seed", 0)))
        return G


def parse_experiment(obj, base_dir=".", seed=None):
    """Validate an experiment config dict; ``seed`` overrides ``obj['seed']``."""
    if not isinstance(obj, dict):
        raise ConfigError("$", "config must be a JSON object")
    obj = dict(obj)
    if seed is not None:
        obj["seed"] = int(seed)
    prompts = _get(obj, "prompts", "$", list, required=True)
    if not prompts:
        raise ConfigError("$.prompts", "prompt family must be nonempty")
    ratios = _get(obj, "ratios", "$", list, [0.1, 0.25])
    for i, r in enumerate(ratios):
        if not isinstance(r, (int, float)) or not 0 < r <= 1:
            raise ConfigError(f"$.ratios[{i}]", "ratios must lie in (0, 1]")
    trials = _get(obj, "trials", "$", int, 5)
    if trials < 1:
        raise ConfigError("$.trials", "must be >= 1")
    scenario = _get(obj, "scenario", "$", str, "in_range_matched")
    if scenario not in SCENARIOS:
        raise ConfigError("$.scenario", f"must be one of {SCENARIOS}")
    rec = _get(obj, "recovery", "$", dict, {})
    try:
        rec_cfg = RecoveryConfig.from_dict(rec)
    except (InvalidInputError, TypeError) as exc:
        raise ConfigError("$.recovery", str(exc)) from None
    mode = _get(obj, "christoffel_mode", "$", str, "monte_carlo")
    if mode not in ("monte_carlo", "exact"):
        raise ConfigError("$.christoffel_mode", "must be 'monte_carlo' or 'exact'")
    target = _get(obj, "target", "$", dict, {})
    cfg = ExperimentConfig(
        raw=obj, prompts=list(prompts), ratios=[float(r) for r in ratios], trials=trials,
        draw_mode=_get(obj, "draw_mode", "$", str, "without_replacement_dc"),
        recovery=rec_cfg,
        christoffel_trials=_get(obj, "christoffel_trials", "$", int, 500),
        christoffel_mode=mode,
        floor=_get(obj, "floor", "$", float, 1e-12),
        seed=_get(obj, "seed", "$", int, 0),
        scenario=scenario, target=target,
        sampling_prompts=_get(obj, "sampling_prompts", "$", list, None),
        recovery_prompts=_get(obj, "recovery_prompts", "$", list, None),
        include_uniform=_get(obj, "include_uniform", "$", bool, False),
        noise_scale=_get(obj, "noise_scale", "$", float, 0.0),
        psnr_peak=_get(obj, "psnr_peak", "$", float, None),
        record_timing=_get(obj, "record_timing", "$", bool, False),
        base_dir=base_dir)
    if cfg.christoffel_trials < 1:
        raise ConfigError("$.christoffel_trials", "must be >= 1")
    if cfg.draw_mode not in ("without_replacement_dc", "iid_with_replacement"):
        raise ConfigError("$.draw_mode", "unknown draw mode")
    for name in ("sampling_prompts", "recovery_prompts"):
        sub = getattr(cfg, name)
        if sub is not None:
            for i, p in enumerate(sub):
                if p not in cfg.prompts and not (name == "sampling_prompts" and p == UNIFORM):
                    raise ConfigError(f"$.{name}[{i}]", f"{p!r} is not in the prompt family")
    if scenario == "in_range_mismatched" and "held_out" not in target and "prompt" not in target:
        raise ConfigError("$.target", "mismatched scenario needs target.held_out or target.prompt")
    if "held_out" in target:
        held = target["held_out"]
        for key in ("base", "name", "theta"):
            if key not in held:
                raise ConfigError(f"$.target.held_out.{key}", "missing required field")
    return cfg
