"""Run configuration: a versioned JSON document, schema-checked before any work.

Unknown keys are errors. :func:`resolve` fills every default so the emitted
``resolved_config.json`` reproduces a run on its own.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .coupling import CouplingParams
from .errors import ValidationError
from .fields import FieldSpec
from .grid import TorusGrid, make_grid
from .hamiltonian import PowerHamiltonian, SampleSpec
from .stationary import SolverConfig

SCHEMA_VERSION = 1

_FIELD = {
    "oneOf": [
        {"type": "number"},
        {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "const": {"type": "number"},
                "fourier": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "minItems": 3,
                        "maxItems": 3,
                        "prefixItems": [
                            {"anyOf": [{"type": "integer"}, {"type": "array", "items": {"type": "integer"}}]},
                            {"type": "number"},
                            {"type": "number"},
                        ],
                    },
                },
            },
        },
    ]
}

_NUM_LIST = {"type": "array", "items": {"type": "number"}}


def _obj(props, required=()):
    return {"type": "object", "additionalProperties": False, "properties": props, "required": list(required)}


SCHEMA = _obj(
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "problem": {"enum": ["stationary", "time"]},
        "grid": _obj({"dim": {"enum": [1, 2]}, "n": {"type": "integer", "minimum": 8, "multipleOf": 2}}, ["dim", "n"]),
        "model": _obj({"a": _FIELD, "V": _FIELD, "gamma": {"type": "number", "exclusiveMinimum": 1}}, ["gamma"]),
        "coupling": _obj(
            {
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "eps_schedule": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
                "weight": {"type": "number", "minimum": 0},
            },
            ["alpha"],
        ),
        "data": _obj(
            {
                "uT": _FIELD,
                "m0": _FIELD,
                "T": {"type": "number", "exclusiveMinimum": 0},
                "nt": {"type": "integer", "minimum": 1},
            }
        ),
        "solver": _obj(
            {
                "theta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "picard_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "linear_tol": {"type": "number", "exclusiveMinimum": 0},
                "upwinding": {"type": "boolean"},
                "cfl": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "dt_max": {"type": "number", "exclusiveMinimum": 0},
                "hjb_max_steps": {"type": "integer", "minimum": 1},
            }
        ),
        "verify": _obj(
            {
                "p_list": _NUM_LIST,
                "samples": _obj(
                    {
                        "n_x": {"type": "integer", "minimum": 1},
                        "n_p": {"type": "integer", "minimum": 2},
                        "p_max": {"type": "number", "exclusiveMinimum": 0},
                        "n_triples": {"type": "integer", "minimum": 1},
                        "m_max": {"type": "number", "exclusiveMinimum": 0},
                    }
                ),
                "deltas": _NUM_LIST,
            }
        ),
        "probe": _obj(
            {
                "x0": _NUM_LIST,
                "tau": {"type": "number", "minimum": 0},
                "moll_width": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "nu": _NUM_LIST,
                "q": _NUM_LIST,
                "C": {"type": "number", "exclusiveMinimum": 0},
            }
        ),
        "simulate": _obj(
            {
                "particles": {"type": "integer", "minimum": 1000},
                "bandwidth": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "x0": {"type": "array", "items": _NUM_LIST},
                "t": {"type": "number", "minimum": 0},
                "substeps": {"type": "integer", "minimum": 1},
                "v_cap": {"type": "number", "exclusiveMinimum": 0},
                "T_sim": {"type": "number", "exclusiveMinimum": 0},
                "burn_in": {"type": "number", "minimum": 0},
                "dt_sim": {"type": "number", "exclusiveMinimum": 0},
            }
        ),
        "input_dir": {"type": ["string", "null"]},
        "seed": {"type": "integer", "minimum": 0},
    },
    ["schema_version", "grid", "model", "coupling"],
)

DEFAULTS = {
    "problem": "stationary",
    "model": {"a": {"const": 1.0}, "V": {"const": 0.0}},
    "coupling": {"weight": 1.0},
    "data": {"uT": {"const": 0.0}, "m0": {"const": 1.0}, "T": 1.0},
    "solver": {
        "theta": 0.5,
        "picard_tol": 1e-8,
        "max_iters": 500,
        "linear_tol": 1e-10,
        "upwinding": True,
        "cfl": 0.9,
        "dt_max": 0.5,
        "hjb_max_steps": 200000,
    },
    "verify": {
        "p_list": [],
        "samples": {"n_x": 16, "n_p": 64, "p_max": 10.0, "n_triples": 10000, "m_max": 10.0},
        "deltas": [0.1, 0.25, 0.5, 0.75, 0.9],
    },
    "probe": {"tau": 0.0, "moll_width": None, "nu": [0.5], "q": [2.0], "C": 10.0},
    "simulate": {
        "particles": 100000,
        "bandwidth": None,
        "t": 0.0,
        "substeps": 1,
        "v_cap": 100.0,
        "T_sim": 50.0,
        "burn_in": 10.0,
        "dt_sim": 0.01,
    },
    "input_dir": None,
    "seed": 0,
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(raw: dict) -> dict:
    """Schema-check ``raw`` and return it with every default filled in."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config {where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    grid = cfg["grid"]
    cp = cfg["coupling"]
    sched = cp.get("eps_schedule")
    if sched is not None and any(b >= a for a, b in zip(sched, sched[1:])):
        raise ValidationError(f"config coupling/eps_schedule: must be strictly decreasing, got {sched}")
    if "eps" not in cp:
        if sched is None:
            raise ValidationError("config coupling: give eps or eps_schedule")
        cp["eps"] = sched[-1]
    if sched is None:
        cp["eps_schedule"] = [cp["eps"]]
    data = cfg["data"]
    data.setdefault("nt", max(1, int(round(data["T"] * grid["n"]))))
    h = 1.0 / grid["n"]
    cfg["probe"].setdefault("x0", [0.5] * grid["dim"])
    if cfg["probe"]["moll_width"] is None:
        cfg["probe"]["moll_width"] = 4 * h
    if cfg["simulate"]["bandwidth"] is None:
        cfg["simulate"]["bandwidth"] = 2 * h
    cfg["simulate"].setdefault("x0", [[0.5] * grid["dim"]])
    for x in [cfg["probe"]["x0"], *cfg["simulate"]["x0"]]:
        if len(x) != grid["dim"]:
            raise ValidationError(f"config: point {x} does not have {grid['dim']} coordinates")
    # building the objects runs the remaining semantic checks
    RunConfig.from_resolved(cfg)
    return cfg


def load(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    return resolve(raw)


@dataclass
class RunConfig:
    """Typed view of a resolved config."""

    raw: dict
    grid: TorusGrid
    model: PowerHamiltonian
    coupling: CouplingParams
    schedule: list
    solver: SolverConfig
    samples: SampleSpec
    seed: int

    @classmethod
    def from_resolved(cls, cfg: dict) -> "RunConfig":
        grid = make_grid(cfg["grid"]["dim"], cfg["grid"]["n"])
        model = PowerHamiltonian.from_config(cfg["model"], grid.dim)
        cp = cfg["coupling"]
        coupling = CouplingParams(cp["alpha"], cp["eps"], cp["weight"])
        solver = SolverConfig(**cfg["solver"])
        samples = SampleSpec(**cfg["verify"]["samples"], seed=cfg["seed"])
        out = cls(cfg, grid, model, coupling, list(cp["eps_schedule"]), solver, samples, cfg["seed"])
        if not (out.field("m0") > 0).all():
            raise ValidationError("config data/m0: initial density must be positive")
        out.field("uT")
        return out

    def field(self, name):
        return FieldSpec.from_config(self.raw["data"][name])(self.grid.coords)

    @property
    def T(self) -> float:
        return float(self.raw["data"]["T"])

    @property
    def nt(self) -> int:
        return int(self.raw["data"]["nt"])
