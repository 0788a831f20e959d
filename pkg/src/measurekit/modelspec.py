"""Declarative model files: schema-validated JSON with exact endpoints.

Interval endpoints, breakpoints, and map coefficients are written as
fraction strings ("1/3", "0.25") and parsed into exact rationals; weights
and density values are decimal strings round-tripped through float repr.
Atom keys are plain strings for labels and ``{"point": "1/2"}`` for exact
points.  Unknown fields are rejected.
"""
from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path
from typing import Any

import jsonschema

from .measure import (
    AtomKey,
    HybridMeasure,
    Space,
    StepDensity,
    StepFunction,
)
from .joint import (
    CurveComponent,
    JointMeasure,
    KernelSection,
    TrackingAtom,
    TransitionKernel,
)
from .bayes import LikelihoodModel
from .bayesnet import BayesNet, NetNode
from .sequential import ExperimentConfig, Placement

SCHEMA_VERSION = 1


class ModelValidationError(ValueError):
    """The document does not validate against the model-file schema."""


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

_FRACTION = {"type": "string", "pattern": r"^-?\d+(/\d+|\.\d+)?$"}
_NUMBER = {"type": "string"}
_KEY = {"oneOf": [{"type": "string"},
                  {"type": "object", "properties": {"point": _FRACTION},
                   "required": ["point"], "additionalProperties": False}]}
_CELL = {"type": "array", "items": _FRACTION, "minItems": 2, "maxItems": 2}
_CELLS = {"type": "array", "items": _CELL}
_VALUES = {"type": "array", "items": _NUMBER}

_SPACE = {
    "type": "object",
    "properties": {"atoms": {"type": "array", "items": {"type": "string"}},
                   "intervals": _CELLS},
    "additionalProperties": False,
}

_WEIGHTS = {"type": "array",
            "items": {"type": "array", "minItems": 2, "maxItems": 2,
                      "prefixItems": [_KEY, _NUMBER]}}

_DENSITY = {
    "type": "object",
    "properties": {"cells": _CELLS, "values": _VALUES},
    "required": ["cells", "values"],
    "additionalProperties": False,
}

_MEASURE = {
    "type": "object",
    "properties": {"space": _SPACE, "atom_weights": _WEIGHTS,
                   "density": _DENSITY, "normalized": {"type": "boolean"}},
    "required": ["space"],
    "additionalProperties": False,
}

_STEP_FUNCTION = {
    "type": "object",
    "properties": {"atom_values": _WEIGHTS, "cells": _CELLS, "values": _VALUES},
    "additionalProperties": False,
}

_CURVE = {
    "type": "object",
    "properties": {
        "axis": {"enum": ["x", "y"]},
        "slope": _FRACTION,
        "intercept": {"oneOf": [_FRACTION, {"type": "null"}]},
        "target": {"oneOf": [_KEY, {"type": "null"}]},
        "cells": _CELLS,
        "values": _VALUES,
        "weight": _NUMBER,
    },
    "required": ["axis", "cells", "values"],
    "additionalProperties": False,
}

_JOINT = {
    "type": "object",
    "properties": {
        "x_space": _SPACE, "y_space": _SPACE,
        "point_atoms": {"type": "array", "items": {
            "type": "object",
            "properties": {"x": _KEY, "y": _KEY, "weight": _NUMBER},
            "required": ["x", "y", "weight"], "additionalProperties": False}},
        "x_cells": _CELLS, "y_cells": _CELLS,
        "grid": {"type": "array", "items": _VALUES},
        "curves": {"type": "array", "items": _CURVE},
        "normalized": {"type": "boolean"},
    },
    "required": ["x_space", "y_space"],
    "additionalProperties": False,
}

_SECTION = {
    "type": "object",
    "properties": {
        "label_atoms": {"type": "object", "additionalProperties": _NUMBER},
        "point_atoms": {"type": "array", "items": {
            "type": "array", "minItems": 2, "maxItems": 2}},
        "tracking": {"type": "array", "items": {
            "type": "object",
            "properties": {"slope": _FRACTION, "intercept": _FRACTION,
                           "weight": _NUMBER},
            "required": ["slope", "intercept", "weight"],
            "additionalProperties": False}},
        "density": _DENSITY,
    },
    "additionalProperties": False,
}

_KERNEL = {
    "type": "object",
    "properties": {
        "from_space": _SPACE, "to_space": _SPACE,
        "cells": _CELLS,
        "cell_sections": {"type": "array", "items": _SECTION},
        "atom_sections": {"type": "object", "additionalProperties": _SECTION},
        "point_sections": {"type": "array", "items": {
            "type": "array", "minItems": 2, "maxItems": 2}},
        "normalized": {"type": "boolean"},
    },
    "required": ["from_space", "to_space"],
    "additionalProperties": False,
}

_NET_NODE = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "space": _SPACE,
        "cells": _CELLS,
        "parents": {"type": "array", "items": {"type": "string"}},
        "table": {"type": "array", "items": _VALUES},
    },
    "required": ["name", "space", "table"],
    "additionalProperties": False,
}

_PLACEMENT = {
    "type": "object",
    "properties": {
        "label": {"type": "string"},
        "outcomes": {"type": "array", "items": {"type": "string"}},
        "functions": {"type": "object", "additionalProperties": _STEP_FUNCTION},
    },
    "required": ["label", "outcomes", "functions"],
    "additionalProperties": False,
}

MODEL_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "kind": {"enum": ["joint", "likelihood", "net", "experiment"]},
        "joint": _JOINT,
        "prior": _MEASURE,
        "kernel": _KERNEL,
        "nodes": {"type": "array", "items": _NET_NODE},
        "theta_prior": _MEASURE,
        "placements": {"type": "array", "items": _PLACEMENT},
        "t_max": {"type": "integer", "minimum": 1},
        "policy": {"enum": ["greedy", "fixed"]},
        "entropy_threshold": {"type": ["number", "null"]},
        "zero_gain_stop": {"type": "boolean"},
        "fixed_sequence": {"type": "array", "items": {"type": "string"}},
        "seed": {"type": "integer"},
    },
    "required": ["version", "kind"],
    "additionalProperties": False,
}


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _frac(s) -> Fraction:
    return Fraction(s)


def _key(doc) -> AtomKey:
    if isinstance(doc, str):
        return doc
    return Fraction(doc["point"])


def _cell(doc):
    return (Fraction(doc[0]), Fraction(doc[1]))


def _weights(doc) -> dict:
    return {_key(k): float(v) for k, v in (doc or [])}


def parse_space(doc) -> Space:
    return Space(atoms=tuple(doc.get("atoms", ())),
                 intervals=tuple(_cell(c) for c in doc.get("intervals", ())))


def parse_measure(doc) -> HybridMeasure:
    space = parse_space(doc["space"])
    dens = doc.get("density")
    density = StepDensity(tuple(_cell(c) for c in dens["cells"]),
                          tuple(float(v) for v in dens["values"])) \
        if dens else StepDensity.zero(space)
    return HybridMeasure(space, _weights(doc.get("atom_weights")), density,
                         normalized=doc.get("normalized", False))


def parse_step_function(space: Space, doc) -> StepFunction:
    return StepFunction(space, _weights(doc.get("atom_values")),
                        tuple(_cell(c) for c in doc.get("cells", ())),
                        tuple(float(v) for v in doc.get("values", ())))


def parse_curve(doc) -> CurveComponent:
    slope = Fraction(doc.get("slope", "0"))
    intercept = doc.get("intercept")
    target = doc.get("target")
    return CurveComponent(
        doc["axis"],
        tuple(_cell(c) for c in doc["cells"]),
        tuple(float(v) for v in doc["values"]),
        slope,
        Fraction(intercept) if intercept is not None else None,
        _key(target) if target is not None else None,
        float(doc.get("weight", 1.0)))


def parse_joint(doc) -> JointMeasure:
    return JointMeasure(
        parse_space(doc["x_space"]), parse_space(doc["y_space"]),
        {(_key(a["x"]), _key(a["y"])): float(a["weight"])
         for a in doc.get("point_atoms", ())},
        tuple(_cell(c) for c in doc.get("x_cells", ())),
        tuple(_cell(c) for c in doc.get("y_cells", ())),
        tuple(tuple(float(v) for v in row) for row in doc.get("grid", ())),
        tuple(parse_curve(c) for c in doc.get("curves", ())),
        normalized=doc.get("normalized", False))


def parse_section(doc) -> KernelSection:
    dens = doc.get("density")
    return KernelSection(
        {k: float(v) for k, v in doc.get("label_atoms", {}).items()},
        {Fraction(k): float(v) for k, v in doc.get("point_atoms", ())},
        tuple(TrackingAtom(Fraction(t["slope"]), Fraction(t["intercept"]),
                           float(t["weight"])) for t in doc.get("tracking", ())),
        StepDensity(tuple(_cell(c) for c in dens["cells"]),
                    tuple(float(v) for v in dens["values"])) if dens else None)


def parse_kernel(doc) -> TransitionKernel:
    return TransitionKernel(
        parse_space(doc["from_space"]), parse_space(doc["to_space"]),
        tuple(_cell(c) for c in doc.get("cells", ())),
        tuple(parse_section(s) for s in doc.get("cell_sections", ())),
        {k: parse_section(s) for k, s in doc.get("atom_sections", {}).items()},
        {Fraction(k): parse_section(s) for k, s in doc.get("point_sections", ())},
        normalized=doc.get("normalized", True))


def parse_net(doc) -> BayesNet:
    names = [n["name"] for n in doc["nodes"]]
    index = {name: i for i, name in enumerate(names)}
    nodes = []
    for n in doc["nodes"]:
        parents = tuple(index[p] for p in n.get("parents", ()))
        nodes.append(NetNode(
            n["name"], parse_space(n["space"]),
            tuple(_cell(c) for c in n.get("cells", ())),
            parents,
            tuple(tuple(float(v) for v in row) for row in n["table"])))
    return BayesNet(tuple(nodes))


def parse_experiment(doc) -> ExperimentConfig:
    prior = parse_measure(doc["theta_prior"])
    placements = []
    for p in doc["placements"]:
        fns = {o: parse_step_function(prior.space, f)
               for o, f in p["functions"].items()}
        placements.append(Placement(p["label"], tuple(p["outcomes"]), fns))
    return ExperimentConfig(
        prior, tuple(placements),
        t_max=doc["t_max"],
        policy=doc.get("policy", "greedy"),
        entropy_threshold=doc.get("entropy_threshold"),
        zero_gain_stop=doc.get("zero_gain_stop", False),
        fixed_sequence=tuple(doc.get("fixed_sequence", ())),
        seed=doc.get("seed", 0))


_REQUIRED_BY_KIND = {
    "joint": ("joint",),
    "likelihood": ("prior", "kernel"),
    "net": ("nodes",),
    "experiment": ("theta_prior", "placements", "t_max"),
}


def validate_document(doc: Any) -> None:
    try:
        jsonschema.validate(doc, MODEL_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ModelValidationError(e.message) from None
    for field in _REQUIRED_BY_KIND[doc["kind"]]:
        if field not in doc:
            raise ModelValidationError(
                f"kind {doc['kind']!r} requires field {field!r}")


def load_document(source) -> dict:
    if isinstance(source, (str, Path)):
        doc = json.loads(Path(source).read_text())
    else:
        doc = source
    validate_document(doc)
    return doc


def build(doc: dict):
    """Construct the typed object a validated document describes."""
    kind = doc["kind"]
    try:
        if kind == "joint":
            return parse_joint(doc["joint"])
        if kind == "likelihood":
            return LikelihoodModel(parse_measure(doc["prior"]),
                                   parse_kernel(doc["kernel"]))
        if kind == "net":
            return parse_net(doc)
        return parse_experiment(doc)
    except (ValueError, KeyError) as e:
        raise ModelValidationError(str(e)) from e


def load(source):
    return build(load_document(source))


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def _frac_str(x: Fraction) -> str:
    return str(x)


def _key_doc(key: AtomKey):
    if isinstance(key, str):
        return key
    return {"point": _frac_str(key)}


def _cell_doc(cell):
    return [_frac_str(cell[0]), _frac_str(cell[1])]


def dump_space(space: Space) -> dict:
    return {"atoms": list(space.atoms),
            "intervals": [_cell_doc(c) for c in space.intervals]}


def dump_measure(m: HybridMeasure) -> dict:
    return {"space": dump_space(m.space),
            "atom_weights": [[_key_doc(k), repr(w)]
                             for k, w in m.atom_weights.items()],
            "density": {"cells": [_cell_doc(c) for c in m.density.cells],
                        "values": [repr(v) for v in m.density.values]},
            "normalized": m.normalized}


def dump_step_function(f: StepFunction) -> dict:
    return {"atom_values": [[_key_doc(k), repr(v)]
                            for k, v in f.atom_values.items()],
            "cells": [_cell_doc(c) for c in f.cells],
            "values": [repr(v) for v in f.values]}


def dump_curve(c: CurveComponent) -> dict:
    return {"axis": c.axis,
            "slope": _frac_str(c.slope),
            "intercept": _frac_str(c.intercept) if c.intercept is not None else None,
            "target": _key_doc(c.target) if c.target is not None else None,
            "cells": [_cell_doc(x) for x in c.cells],
            "values": [repr(v) for v in c.values],
            "weight": "1.0"}


def dump_joint(j: JointMeasure) -> dict:
    return {"x_space": dump_space(j.x_space), "y_space": dump_space(j.y_space),
            "point_atoms": [{"x": _key_doc(kx), "y": _key_doc(ky),
                             "weight": repr(w)}
                            for (kx, ky), w in j.point_atoms.items()],
            "x_cells": [_cell_doc(c) for c in j.x_cells],
            "y_cells": [_cell_doc(c) for c in j.y_cells],
            "grid": [[repr(v) for v in row] for row in j.grid],
            "curves": [dump_curve(c) for c in j.curves],
            "normalized": j.normalized}


def joint_document(j: JointMeasure) -> dict:
    return {"version": SCHEMA_VERSION, "kind": "joint", "joint": dump_joint(j)}
