"""Versioned JSON instance files.

Reward values are plain numbers, or {"n": ..., "eps": ...} integer-times-step
pairs when the table lives on a declared grid; the pair form survives
round-trips with exact equality intact. All documents carry schema_version 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import jsonschema
import numpy as np

from .continuum import ContinuumInstance, L2Ball
from .core import FunctionClass, GreedyTrapError, ProblemInstance, RewardFunction
from .dmso import Model, ModelClass, OutcomeSpace

SCHEMA_VERSION = 1


class InstanceFileError(GreedyTrapError):
    pass


_VALUE = {
    "oneOf": [
        {"type": "number"},
        {"type": "object",
         "properties": {"n": {"type": "integer"}, "eps": {"type": "number", "exclusiveMinimum": 0}},
         "required": ["n", "eps"], "additionalProperties": False},
    ]
}
_TABLE = {"type": "array", "minItems": 1,
          "items": {"type": "array", "minItems": 1, "items": _VALUE}}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"enum": ["mab", "cb", "dmso", "continuum"]},
        "sigma": {"type": "number", "minimum": 0},
        "bounded_rewards": {"type": "boolean"},
        "arms": {"type": "integer", "minimum": 1},
        "contexts": {"type": "integer", "minimum": 1},
        "context_probs": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "class": {
            "oneOf": [
                {"type": "array", "minItems": 1, "items": _TABLE},
                {"type": "object",
                 "properties": {
                     "parametric": {
                         "type": "object",
                         "properties": {
                             "type": {"const": "l2_ball"},
                             "center": {"type": "array", "items": {"type": "number"}},
                             "radius": {"type": "number", "exclusiveMinimum": 0},
                         },
                         "required": ["type", "center", "radius"],
                         "additionalProperties": False},
                 },
                 "required": ["parametric"], "additionalProperties": False},
                {"type": "object",
                 "properties": {
                     "models": {"type": "array", "minItems": 1,
                                "items": {"type": "object",
                                          "properties": {"probs": {"type": "array"}},
                                          "required": ["probs"]}},
                 },
                 "required": ["models"], "additionalProperties": False},
            ]
        },
        "true_index": {"type": "integer", "minimum": 0},
        "true_table": {"type": "array", "items": {"type": "number"}},
        "decoy_table": {"type": "array", "items": {"type": "number"}},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "warmup": {},
        "warmup_per_policy": {"type": "integer", "minimum": 2},
        "decoy_hint": {"type": "integer", "minimum": 0},
        "best_arm_unique": {"type": "boolean"},
        "rewards": {"type": "array", "items": {"type": "number"}},
        "observations": {"type": "array", "items": {"type": "string"}},
    },
    "required": ["schema_version", "kind", "sigma", "class"],
}


@dataclass
class LoadedInstance:
    kind: str
    instance: object
    decoy_index: Optional[int]
    decoy_table: Optional[np.ndarray]
    eps: Optional[float]
    n0: Optional[int]
    raw: dict


def _decode_value(v):
    if isinstance(v, dict):
        return v["n"] * v["eps"], (v["n"], v["eps"])
    return float(v), None


def _decode_table(rows) -> RewardFunction:
    values = np.empty((len(rows), len(rows[0])))
    units = np.empty_like(values, dtype=np.int64)
    eps_seen = set()
    all_pairs = True
    for i, row in enumerate(rows):
        if len(row) != len(rows[0]):
            raise InstanceFileError("reward tables must be rectangular")
        for j, v in enumerate(row):
            val, pair = _decode_value(v)
            values[i, j] = val
            if pair is None:
                all_pairs = False
            else:
                units[i, j] = pair[0]
                eps_seen.add(pair[1])
    if all_pairs and len(eps_seen) == 1:
        return RewardFunction.from_units(units, eps_seen.pop())
    return RewardFunction(values)


def _encode_table(f: RewardFunction):
    if f.grid_units is not None:
        return [[{"n": int(n), "eps": f.grid_eps} for n in row] for row in f.grid_units]
    return [[float(v) for v in row] for row in f.values]


def validate_document(doc: dict) -> None:
    """Schema-check a raw document; errors carry the JSON path."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: e.json_path)
    if errors:
        e = errors[0]
        raise InstanceFileError(f"schema violation at {e.json_path}: {e.message}")


def load_instance(path) -> LoadedInstance:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceFileError(f"not valid JSON: {exc}") from exc
    return instance_from_dict(doc)


def instance_from_dict(doc: dict) -> LoadedInstance:
    validate_document(doc)
    kind = doc["kind"]
    sigma = float(doc["sigma"])
    try:
        if kind in ("mab", "cb"):
            members = tuple(_decode_table(t) for t in doc["class"])
            cls = FunctionClass(members, best_arm_unique=doc.get("best_arm_unique", False))
            true_index = doc.get("true_index", 0)
            warmup = doc.get("warmup")
            instance = ProblemInstance(
                members[true_index], cls, noise_sigma=sigma,
                context_probs=doc.get("context_probs"),
                warmup_counts=np.asarray(warmup) if warmup is not None else None,
                bounded_rewards=doc.get("bounded_rewards", False))
            return LoadedInstance(kind=kind, instance=instance,
                                  decoy_index=doc.get("decoy_hint"), decoy_table=None,
                                  eps=doc.get("eps"), n0=None, raw=doc)
        if kind == "continuum":
            par = doc["class"]["parametric"]
            ball = L2Ball(center=np.asarray(par["center"], dtype=np.float64),
                          radius=float(par["radius"]))
            warmup = doc.get("warmup")
            instance = ContinuumInstance(
                true_table=np.asarray(doc["true_table"], dtype=np.float64),
                function_class=ball, noise_sigma=sigma,
                warmup_counts=np.asarray(warmup) if warmup is not None else None,
                bounded_rewards=doc.get("bounded_rewards", False))
            decoy_table = doc.get("decoy_table")
            return LoadedInstance(kind=kind, instance=instance, decoy_index=None,
                                  decoy_table=np.asarray(decoy_table, dtype=np.float64)
                                  if decoy_table is not None else None,
                                  eps=doc.get("eps"), n0=None, raw=doc)
        # dmso
        space = OutcomeSpace(rewards=tuple(doc["rewards"]),
                             observations=tuple(doc["observations"]))
        members = tuple(Model(space, np.asarray(m["probs"], dtype=np.float64))
                        for m in doc["class"]["models"])
        cls = ModelClass(members, true_index=doc.get("true_index", 0))
        return LoadedInstance(kind=kind, instance=cls,
                              decoy_index=doc.get("decoy_hint"), decoy_table=None,
                              eps=None, n0=doc.get("warmup_per_policy"), raw=doc)
    except InstanceFileError:
        raise
    except (KeyError, IndexError, ValueError, GreedyTrapError) as exc:
        raise InstanceFileError(f"invalid instance: {exc}") from exc


def instance_to_dict(loaded_or_instance, kind: Optional[str] = None,
                     decoy_index: Optional[int] = None,
                     decoy_table=None, eps: Optional[float] = None,
                     n0: Optional[int] = None) -> dict:
    obj = loaded_or_instance
    if isinstance(obj, LoadedInstance):
        return instance_to_dict(obj.instance, kind=obj.kind, decoy_index=obj.decoy_index,
                                decoy_table=obj.decoy_table, eps=obj.eps, n0=obj.n0)
    doc: dict = {"schema_version": SCHEMA_VERSION}
    if isinstance(obj, ProblemInstance):
        doc["kind"] = kind or ("mab" if obj.is_mab else "cb")
        doc["sigma"] = float(obj.noise_sigma)
        doc["bounded_rewards"] = bool(obj.bounded_rewards)
        doc["arms"] = obj.n_arms
        if not obj.is_mab:
            doc["contexts"] = obj.n_contexts
            doc["context_probs"] = [float(p) for p in obj.context_probs]
        doc["class"] = [_encode_table(m) for m in obj.function_class.members]
        doc["true_index"] = obj.true_index
        doc["warmup"] = [[int(c) for c in row] for row in obj.warmup_counts]
        doc["best_arm_unique"] = bool(obj.function_class.best_arm_unique)
        if decoy_index is not None:
            doc["decoy_hint"] = int(decoy_index)
        if eps is not None:
            doc["eps"] = float(eps)
        return doc
    if isinstance(obj, ContinuumInstance):
        ball = obj.function_class
        if not isinstance(ball, L2Ball):
            raise InstanceFileError("only the L2 ball class has a file form")
        doc["kind"] = "continuum"
        doc["sigma"] = float(obj.noise_sigma)
        doc["bounded_rewards"] = bool(obj.bounded_rewards)
        doc["arms"] = obj.n_arms
        doc["class"] = {"parametric": {"type": "l2_ball",
                                       "center": [float(v) for v in ball.center],
                                       "radius": float(ball.radius)}}
        doc["true_table"] = [float(v) for v in obj.true_table]
        doc["warmup"] = [int(c) for c in obj.warmup_counts]
        if decoy_table is not None:
            doc["decoy_table"] = [float(v) for v in np.asarray(decoy_table).ravel()]
        if eps is not None:
            doc["eps"] = float(eps)
        return doc
    if isinstance(obj, ModelClass):
        doc["kind"] = "dmso"
        doc["sigma"] = 0.0
        doc["class"] = {"models": [{"probs": [[float(p) for p in row] for row in m.probs]}
                                   for m in obj.members]}
        doc["true_index"] = obj.true_index
        doc["rewards"] = [float(r) for r in obj.outcome_space.rewards]
        doc["observations"] = list(obj.outcome_space.observations)
        if decoy_index is not None:
            doc["decoy_hint"] = int(decoy_index)
        if n0 is not None:
            doc["warmup_per_policy"] = int(n0)
        return doc
    raise InstanceFileError(f"cannot serialize {type(obj)!r}")


def save_instance(path, instance, **kwargs) -> None:
    doc = instance_to_dict(instance, **kwargs)
    validate_document(doc)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
