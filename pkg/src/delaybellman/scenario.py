"""JSON scenario files: schema validation and construction of model objects."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .sysmodel import ControlLaw, CostWeights, History, SystemModel, ThetaGrid, DEFAULT_N_THETA

SCHEMA_VERSION = 1

_matrix = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_vector = {"type": "array", "minItems": 1, "items": {"type": "number"}}
_matfun = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["zero", "constant", "samples"]},
        "value": _matrix,
        "samples": {"type": "array", "minItems": 2, "items": _matrix},
    },
    "required": ["kind"],
    "allOf": [
        {"if": {"properties": {"kind": {"const": "constant"}}}, "then": {"required": ["value"]}},
        {"if": {"properties": {"kind": {"const": "samples"}}}, "then": {"required": ["samples"]}},
    ],
    "additionalProperties": False,
}
_positive = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "r": {"type": "integer", "minimum": 1},
        "A": _matrix,
        "B": _matrix,
        "D": _matrix,
        "h": _positive,
        "E": _matfun,
        "Q": _matrix,
        "R": _matrix,
        "law": {
            "type": "object",
            "properties": {"Gamma0": _matrix, "Gamma1": _matfun},
            "required": ["Gamma0"],
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "properties": {"n_theta": {"type": "integer", "minimum": 1}, "dt": _positive, "horizon": _positive},
            "additionalProperties": False,
        },
        "history": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["constant", "samples"]},
                "value": _vector,
                "samples": {"type": "array", "minItems": 2, "items": _vector},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "synthesis": {
            "type": "object",
            "properties": {"tol": _positive, "max_iter": {"type": "integer", "minimum": 1},
                           "route": {"enum": ["lyapunov", "direct"]}},
            "additionalProperties": False,
        },
        "verify": {
            "type": "object",
            "properties": {"M": _matrix, "n_histories": {"type": "integer", "minimum": 1},
                           "seed": {"type": "integer"}},
            "additionalProperties": False,
        },
        "bounds": {
            "type": "object",
            "properties": {
                "alpha": _positive,
                "t_star": _positive,
                "kernels": {"type": "boolean"},
                "overrides": {
                    "type": "object",
                    "properties": {k: {"type": "number", "minimum": 0} for k in
                                   ("norm_A0", "norm_A1", "g", "int_G", "L", "C2", "phi0_norm", "int_phi")},
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "plant": {
            "type": "object",
            "properties": {
                "a0": {"type": "number"}, "a1": {"type": "number"}, "b": {"type": "number"}, "h": _positive,
                "u_min": {"type": "number"}, "u_max": {"type": "number"}, "ambient": {"type": "number"},
                "Q": _positive, "R": _positive, "Kp": {"type": "number"}, "Ki": {"type": "number"},
                "T": _positive, "dt": _positive, "r_load": _positive,
                "n_theta": {"type": "integer", "minimum": 1},
                "law": {
                    "type": "object",
                    "properties": {"Gamma0": {"type": "number"}, "Gamma1": _vector},
                    "required": ["Gamma0", "Gamma1"],
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
    },
    "anyOf": [{"required": ["A", "B", "D", "h", "Q", "R"]}, {"required": ["plant"]}],
    "additionalProperties": False,
}


class ScenarioError(ValueError):
    """Scenario file is not valid JSON, fails the schema, or is internally inconsistent."""


@dataclass(frozen=True)
class Scenario:
    data: dict
    path: Path | None = None

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
        return cls.from_dict(data, path)

    @classmethod
    def from_dict(cls, data: dict, path=None) -> "Scenario":
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ScenarioError(f"schema violation at {loc}: {exc.message}") from exc
        sc = cls(data, path)
        if sc.has_system:
            sc._check_dimensions()
        return sc

    @property
    def has_system(self) -> bool:
        return "A" in self.data

    @property
    def has_plant(self) -> bool:
        return "plant" in self.data

    @property
    def name(self) -> str:
        return self.data.get("name", self.path.stem if self.path else "scenario")

    def _check_dimensions(self) -> None:
        d = self.data
        A = np.asarray(d["A"], float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ScenarioError("A must be square")
        n = A.shape[0]
        if d.get("n", n) != n:
            raise ScenarioError(f"n={d['n']} does not match A ({n}x{n})")
        D = np.asarray(d["D"], float)
        if D.ndim != 2 or D.shape[0] != n:
            raise ScenarioError(f"D must have {n} rows")
        if d.get("r", D.shape[1]) != D.shape[1]:
            raise ScenarioError(f"r={d['r']} does not match D")
        for key, shape in (("B", (n, n)), ("Q", (n, n)), ("R", (D.shape[1],) * 2)):
            if np.asarray(d[key], float).shape != shape:
                raise ScenarioError(f"{key} must be {shape[0]}x{shape[1]}")
        if "law" in d and np.asarray(d["law"]["Gamma0"], float).shape != (D.shape[1], n):
            raise ScenarioError(f"Gamma0 must be {D.shape[1]}x{n}")

    # grid settings, with command-line overrides applied by the caller
    def n_theta(self, override: int | None = None) -> int:
        return override or self.data.get("grid", {}).get("n_theta", DEFAULT_N_THETA)

    def dt(self, override: float | None = None) -> float | None:
        return override or self.data.get("grid", {}).get("dt")

    def horizon(self, override: float | None = None) -> float | None:
        return override or self.data.get("grid", {}).get("horizon")

    def system(self, n_theta: int | None = None) -> SystemModel:
        d = self.data
        grid = ThetaGrid(float(d["h"]), self.n_theta(n_theta))
        n = len(d["A"])
        E = _matrix_function(d.get("E", {"kind": "zero"}), grid, (n, n), "E")
        try:
            return SystemModel(np.asarray(d["A"], float), np.asarray(d["B"], float), np.asarray(d["D"], float),
                               float(d["h"]), E, grid)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc

    def weights(self) -> CostWeights:
        try:
            return CostWeights(self.data["Q"], self.data["R"])
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc

    def law(self, sys: SystemModel) -> ControlLaw:
        source = self.data.get("law")
        if source is None:
            return ControlLaw.zero(sys)
        g0 = np.asarray(source["Gamma0"], float)
        g1 = _matrix_function(source.get("Gamma1", {"kind": "zero"}), sys.grid, g0.shape, "Gamma1")
        return ControlLaw(g0, g1)

    def history(self, sys: SystemModel) -> History:
        source = self.data.get("history", {"kind": "constant", "value": [1.0] * sys.n})
        if source["kind"] == "constant":
            if "value" not in source or len(source["value"]) != sys.n:
                raise ScenarioError(f"history value must have {sys.n} entries")
            return History.constant(source["value"], sys.grid)
        samples = np.asarray(source.get("samples", []), float)
        if samples.ndim != 2 or samples.shape[1] != sys.n:
            raise ScenarioError("history samples must be a list of n-vectors")
        src = ThetaGrid(sys.h, len(samples) - 1)
        return History(samples, src).resampled(sys.grid)


def _matrix_function(source: dict, grid: ThetaGrid, shape, name: str) -> np.ndarray:
    kind = source["kind"]
    if kind == "zero":
        return np.zeros((len(grid),) + tuple(shape))
    if kind == "constant":
        M = np.asarray(source["value"], float)
        if M.shape != tuple(shape):
            raise ScenarioError(f"{name} value must be {shape[0]}x{shape[1]}")
        return np.broadcast_to(M, (len(grid),) + M.shape).copy()
    S = np.asarray(source["samples"], float)
    if S.ndim != 3 or S.shape[1:] != tuple(shape):
        raise ScenarioError(f"{name} samples must be a list of {shape[0]}x{shape[1]} matrices")
    # samples are taken on their own uniform grid and resampled linearly
    return ThetaGrid(grid.h, len(S) - 1).interp(S, grid.nodes)
