"""Run configuration: JSON schema, validation with JSON-pointer errors, and builders."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import operators as ops
from .errors import ConfigError
from .latentmap import LatentMap, identity_map, linear_map, mlp_map
from .optim import ConsistencyConfig
from .prior import GaussianMixturePrior
from .problems import phantom_basis, phantom_prior, random_modes_prior, two_mode_prior
from .sampler import REMAP_MODES, SamplerConfig
from .schedule import build_linear_schedule, build_timetable

SOLVERS = ("resample", "latent_dps", "fbp")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT = {"type": "integer"}
_POSINT = {"type": "integer", "minimum": 1}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_MAT = {"type": "array", "items": _VEC, "minItems": 1}
_SHAPE = {"type": "array", "items": _POSINT, "minItems": 1}
_SHAPE2 = {"type": "array", "items": _POSINT, "minItems": 2, "maxItems": 2}

# kind -> (properties, required)
PRIOR_KINDS = {
    "two_mode": ({"separation": _POS, "variance": _POS}, []),
    "phantom": ({}, []),
    "random_modes": ({"K": _POSINT, "d": _POSINT, "spread": _NONNEG, "variance": _POS, "seed": _INT},
                     ["K", "d"]),
    "explicit": ({"weights": _VEC, "means": _MAT, "covariances": {"type": "array", "items": _MAT}},
                 ["weights", "means", "covariances"]),
}
MAP_KINDS = {
    "identity": ({"dim": _POSINT}, ["dim"]),
    "linear": ({"W": _MAT, "b": _VEC}, ["W"]),
    "phantom_basis": ({"grid": _POSINT, "edge": _POS}, []),
    "mlp": ({"d_latent": _POSINT, "d_pixel": _POSINT, "seed": _INT, "hidden": _POSINT},
            ["d_latent", "d_pixel"]),
}
OPERATOR_KINDS = {
    "identity": ({"n": _POSINT}, ["n"]),
    "mask": ({"n": _POSINT, "keep": {"type": "array", "items": _INT}}, ["n", "keep"]),
    "random_mask": ({"n": _POSINT, "keep_fraction": _POS, "seed": _INT}, ["n"]),
    "box_mask": ({"shape": _SHAPE2, "top": _INT, "left": _INT, "height": _POSINT, "width": _POSINT},
                 ["shape", "top", "left", "height", "width"]),
    "downsample": ({"shape": _SHAPE, "factor": _POSINT}, ["shape", "factor"]),
    "gaussian_blur": ({"shape": _SHAPE, "size": _POSINT, "sigma": _POS}, ["shape"]),
    "nonlinear_blur": ({"shape": _SHAPE, "size": _POSINT, "sigma": _POS, "gain": _POS}, ["shape"]),
    "radon": ({"grid": _POSINT, "n_angles": _POSINT, "n_detectors": _POSINT, "spacing": _POS,
               "damping": _NONNEG}, ["grid"]),
    "matrix": ({"A": _MAT, "damping": _NONNEG}, ["A"]),
}


def _kinded(kinds: dict) -> dict:
    branches = []
    for kind, (props, required) in kinds.items():
        branches.append({
            "if": {"properties": {"kind": {"const": kind}}, "required": ["kind"]},
            "then": {"properties": {"kind": {"const": kind}, **props},
                     "required": ["kind", *required], "additionalProperties": False},
        })
    return {"type": "object", "required": ["kind"],
            "properties": {"kind": {"enum": list(kinds)}}, "allOf": branches}


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["seed", "prior", "latent_map", "operator", "sigma_y", "schedule", "timetable",
                 "gamma", "consistency", "solver", "remap_mode"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "prior": _kinded(PRIOR_KINDS),
        "latent_map": _kinded(MAP_KINDS),
        "operator": _kinded(OPERATOR_KINDS),
        "sigma_y": _NONNEG,
        "measurement": {"type": "object", "additionalProperties": False,
                        "properties": {"y": _VEC}, "required": ["y"]},
        "truth": {"type": "object", "additionalProperties": False,
                  "properties": {"z": _VEC}, "required": ["z"]},
        "image_shape": _SHAPE2,
        "schedule": {"type": "object", "additionalProperties": False, "required": ["T"],
                     "properties": {"T": {"type": "integer", "minimum": 2}, "beta_min": _POS,
                                    "beta_max": _POS, "eta": _NONNEG}},
        "timetable": {"type": "object", "additionalProperties": False,
                      "properties": {"preset": {"enum": ["natural", "medical"]}, "skip": _POSINT}},
        "gamma": _NONNEG,
        "consistency": {"type": "object", "additionalProperties": False,
                        "properties": {"tau": _NONNEG, "max_iters_latent": _POSINT,
                                       "max_iters_pixel": _POSINT, "step_size": _POS,
                                       "kappa": {"type": "number", "minimum": 0, "maximum": 1},
                                       "cg_iters": _POSINT, "cg_tol": _NONNEG,
                                       "beta1": _NONNEG, "beta2": _NONNEG}},
        "latent_dps": {"oneOf": [{"type": "null"}, _NONNEG]},
        "check_tweedie": {"type": "boolean"},
        "solver": {"enum": list(SOLVERS)},
        "remap_mode": {"enum": list(REMAP_MODES)},
        "output_dir": {"type": "string"},
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(CONFIG_SCHEMA)


def _pointer(parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def _leaf_errors(err):
    if err.context:
        for sub in err.context:
            yield from _leaf_errors(sub)
    else:
        yield err


def _describe(err) -> ConfigError:
    base = list(err.absolute_path)
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        return ConfigError(f"missing required property {missing[0]!r}", _pointer(base + [missing[0]]))
    if err.validator == "additionalProperties":
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        return ConfigError(f"unknown property {extra[0]!r}", _pointer(base + [extra[0]]))
    return ConfigError(err.message, _pointer(base))


def validate_config(cfg: dict) -> dict:
    """Raise :class:`ConfigError` for the first schema violation, in document order."""
    errors = []
    for err in _VALIDATOR.iter_errors(cfg):
        errors.extend(_leaf_errors(err))
    if errors:
        errors.sort(key=lambda e: ([str(p) for p in e.absolute_path], e.validator != "required"))
        raise _describe(errors[0])
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("top level must be a JSON object")
    return cfg


def parse_override(text: str):
    """``a.b.c=value``; the value is parsed as JSON when possible, else kept as text."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(cfg: dict, overrides) -> dict:
    cfg = copy.deepcopy(cfg)
    for text in overrides or ():
        path, value = parse_override(text)
        node = cfg
        for part in path[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"cannot override inside non-object {part!r}", _pointer(path))
            node = nxt
        node[path[-1]] = value
    return cfg


def config_hash(cfg: dict) -> str:
    """Short digest of the canonical JSON form; the output location does not count."""
    body = {k: v for k, v in cfg.items() if k != "output_dir"}
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


# ---------------------------------------------------------------- builders

def build_prior(spec: dict) -> GaussianMixturePrior:
    p = {k: v for k, v in spec.items() if k != "kind"}
    kind = spec["kind"]
    if kind == "two_mode":
        return two_mode_prior(**p)
    if kind == "phantom":
        return phantom_prior()
    if kind == "random_modes":
        return random_modes_prior(**p)
    return GaussianMixturePrior(np.asarray(p["weights"]), np.asarray(p["means"]),
                                np.asarray(p["covariances"]))


def build_latent_map(spec: dict) -> LatentMap:
    p = {k: v for k, v in spec.items() if k != "kind"}
    kind = spec["kind"]
    if kind == "identity":
        return identity_map(p["dim"])
    if kind == "linear":
        return linear_map(p["W"], p.get("b"))
    if kind == "phantom_basis":
        return linear_map(phantom_basis(**p))
    return mlp_map(**p)


def build_operator(spec: dict) -> ops.ForwardOperator:
    p = {k: v for k, v in spec.items() if k != "kind"}
    kind = spec["kind"]
    if kind == "identity":
        return ops.Identity(p["n"])
    if kind == "mask":
        return ops.Mask(p["n"], p["keep"])
    if kind == "random_mask":
        return ops.random_mask(**p)
    if kind == "box_mask":
        return ops.box_mask(tuple(p.pop("shape")), **p)
    if kind == "downsample":
        return ops.Downsample(tuple(p["shape"]), p["factor"])
    if kind == "gaussian_blur":
        return ops.GaussianBlur(tuple(p.pop("shape")), **p)
    if kind == "nonlinear_blur":
        return ops.NonlinearBlur(tuple(p.pop("shape")), **p)
    if kind == "radon":
        return ops.make_radon(**p)
    return ops.MatrixOperator(np.asarray(p["A"]), damping=p.get("damping", 0.0))


def build_sampler_config(cfg: dict) -> SamplerConfig:
    s = cfg["schedule"]
    schedule = build_linear_schedule(s["T"], s.get("beta_min", 1e-4), s.get("beta_max", 0.02),
                                     s.get("eta", 0.0))
    tt = cfg["timetable"]
    timetable = build_timetable(schedule, skip=tt.get("skip", 10), mode=tt.get("preset", "natural"))
    return SamplerConfig(schedule, timetable, gamma=cfg["gamma"],
                         consistency=ConsistencyConfig(**cfg["consistency"]),
                         latent_dps=cfg.get("latent_dps"), remap_mode=cfg["remap_mode"],
                         check_tweedie=cfg.get("check_tweedie", False))


@dataclass
class RunSetup:
    prior: GaussianMixturePrior
    dmap: LatentMap
    op: ops.ForwardOperator
    sampler: SamplerConfig
    image_shape: tuple[int, int] | None


def _image_shape(cfg: dict, dmap: LatentMap):
    if "image_shape" in cfg:
        h, w = cfg["image_shape"]
        if h * w != dmap.d_pixel:
            raise ConfigError(f"image_shape {h}x{w} does not match {dmap.d_pixel} pixels",
                              "/image_shape")
        return (h, w)
    lm = cfg["latent_map"]
    if lm["kind"] == "phantom_basis":
        g = lm.get("grid", 33)
        return (g, g)
    shape = cfg["operator"].get("shape") or (
        [cfg["operator"]["grid"]] * 2 if cfg["operator"]["kind"] == "radon" else None)
    if shape is not None and len(shape) == 2 and shape[0] * shape[1] == dmap.d_pixel:
        return tuple(shape)
    return None


def build_setup(cfg: dict) -> RunSetup:
    """Construct every object a validated config refers to.

    Construction failures are reported as :class:`ConfigError` at the
    offending section.
    """
    sections = {}
    for key, fn in (("prior", build_prior), ("latent_map", build_latent_map),
                    ("operator", build_operator)):
        try:
            sections[key] = fn(cfg[key])
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), "/" + key) from exc
    prior, dmap, op = sections["prior"], sections["latent_map"], sections["operator"]
    if prior.dim != dmap.d_latent:
        raise ConfigError(f"prior dimension {prior.dim} != latent dimension {dmap.d_latent}",
                          "/latent_map")
    if op.n != dmap.d_pixel:
        raise ConfigError(f"operator input size {op.n} != decoder output size {dmap.d_pixel}",
                          "/operator")
    try:
        sampler = build_sampler_config(cfg)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), "/schedule") from exc
    if "measurement" in cfg and len(cfg["measurement"]["y"]) != op.m:
        raise ConfigError(f"measurement has {len(cfg['measurement']['y'])} entries, "
                          f"operator produces {op.m}", "/measurement/y")
    if "truth" in cfg and len(cfg["truth"]["z"]) != prior.dim:
        raise ConfigError("truth dimension does not match the prior", "/truth/z")
    if cfg["solver"] == "fbp" and op.kind != "radon":
        raise ConfigError("the fbp solver needs a radon operator", "/solver")
    return RunSetup(prior, dmap, op, sampler, _image_shape(cfg, dmap))


def resolve_config(path=None, overrides=(), base: dict | None = None) -> dict:
    """Load, apply overrides, validate."""
    cfg = load_config(path) if base is None else copy.deepcopy(base)
    return validate_config(apply_overrides(cfg, overrides))
