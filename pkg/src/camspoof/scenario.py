"""Scenario files: one JSON document describing a complete session.

Validated against :data:`SCHEMA` (version 1). Errors name the offending field
as a dotted path, e.g. ``sim.scene.seed``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import jsonschema

from camspoof.attacker import AttackKind, AttackPlan, MetadataPolicy
from camspoof.detectors import DetectorConfig
from camspoof.pixels import SceneConfig, SignLabel, make_template, mosaic, paste, scene_rgb
from camspoof.sim import DefensePlan, SimConfig

SCHEMA_VERSION = 1

_INT = {"type": "integer"}
_NONNEG = {"type": "integer", "minimum": 0}
_EVEN_POS = {"type": "integer", "minimum": 2, "multipleOf": 2}
_PAIR = {"type": "array", "items": _INT, "minItems": 2, "maxItems": 2}
_LABEL = {"enum": [label.value for label in SignLabel]}

SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["version", "sim"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "sim": {
            "type": "object",
            "required": ["scene", "duration_frames", "seed"],
            "additionalProperties": False,
            "properties": {
                "fps": {"type": "number", "exclusiveMinimum": 0},
                "loss_prob": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "camera_delay_frames": {"enum": [0, 1]},
                "duration_frames": _NONNEG,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "max_payload": {"type": "integer", "minimum": 1},
                "packet_spacing_ns": {"type": "integer", "minimum": 2},
                "scene": {
                    "type": "object",
                    "required": ["seed", "width", "height"],
                    "additionalProperties": False,
                    "properties": {
                        "seed": _NONNEG,
                        "width": _EVEN_POS,
                        "height": _EVEN_POS,
                        "motion": _PAIR,
                        "texture_scale": {"type": "number", "exclusiveMinimum": 0},
                        "corner_density": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "attack": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["kind", "start_frame", "duration_frames", "payload", "injected_width"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": [k.value for k in AttackKind]},
                        "start_frame": _NONNEG,
                        "duration_frames": _NONNEG,
                        "injected_width": _EVEN_POS,
                        "stripe_rows": _EVEN_POS,
                        "patch_position": _PAIR,
                        "metadata_policy": {"enum": [m.value for m in MetadataPolicy]},
                        "rate_multiplier": {"type": "number", "exclusiveMinimum": 0},
                        "static_block_id": _NONNEG,
                        "static_timestamp_ns": _NONNEG,
                        "payload": {
                            "type": "object",
                            "required": ["type"],
                            "additionalProperties": False,
                            "properties": {
                                "type": {"enum": ["scene", "sign"]},
                                "seed": _NONNEG,
                                "frame": _NONNEG,
                                "height": _EVEN_POS,
                                "sign": _LABEL,
                                "position": _PAIR,
                            },
                        },
                    },
                },
            ]
        },
        "defense": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["key_hex", "b"],
                    "additionalProperties": False,
                    "properties": {
                        "key_hex": {"type": "string", "pattern": "^([0-9a-fA-F]{2}){1,256}$"},
                        "b": {"type": "integer", "minimum": 1, "maximum": 8},
                        "d_max": _NONNEG,
                        "w_max": _EVEN_POS,
                    },
                },
            ]
        },
        "detectors": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "expected_width": _EVEN_POS,
                "expected_height": _EVEN_POS,
                "expected_format": _NONNEG,
                "id_window": {"type": "integer", "minimum": 1},
                "ts_tolerance_ns": {"type": "integer", "minimum": 1},
                "mse_threshold": {"type": "number", "exclusiveMinimum": 0},
                "hist_threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "flow_error_threshold": {"type": "number", "exclusiveMinimum": 0},
                "flow_min_match_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "hue_bins": {"type": "integer", "minimum": 1},
                "sat_bins": {"type": "integer", "minimum": 1},
                "max_corners": {"type": "integer", "minimum": 1},
                "min_corners": {"type": "integer", "minimum": 1},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                name: {"type": "string", "minLength": 1}
                for name in ("capture", "verdicts", "width_verdicts", "summary")
            },
        },
    },
}

DEFAULT_OUTPUTS = {
    "capture": "capture.gvsc",
    "verdicts": "verdicts.csv",
    "width_verdicts": "width_verdicts.csv",
    "summary": "summary.json",
}


class ScenarioError(ValueError):
    """Scenario document that fails validation; ``path`` is the dotted field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


def _dotted(error: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "required":
        present = error.instance if isinstance(error.instance, dict) else {}
        missing = [name for name in error.validator_value if name not in present]
        if missing:
            parts.append(missing[0])
    elif error.validator == "additionalProperties" and isinstance(error.instance, dict):
        allowed = error.schema.get("properties", {})
        extra = sorted(k for k in error.instance if k not in allowed)
        if extra:
            parts.append(extra[0])
    return ".".join(parts)


def validate(doc: Any) -> None:
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        # oneOf failures hide the real cause one level down
        err = errors[0]
        while err.context:
            err = min(err.context, key=lambda e: (e.validator == "type", len(e.absolute_path) * -1))
        raise ScenarioError(_dotted(err), err.message)


@dataclass
class Scenario:
    """A parsed, validated scenario plus the document it came from."""

    doc: Dict[str, Any]
    sim: SimConfig
    attack: Optional[AttackPlan]
    defense: Optional[DefensePlan]
    detectors: DetectorConfig
    outputs: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_OUTPUTS))

    def effective(self) -> Dict[str, Any]:
        """The full configuration with every default filled in."""
        doc = copy.deepcopy(self.doc)
        doc["sim"] = self.sim.to_dict()
        doc["detectors"] = asdict(self.detectors)
        doc["outputs"] = dict(self.outputs)
        doc.setdefault("attack", None)
        doc.setdefault("defense", None)
        if self.defense is not None:
            doc["defense"] = {
                "key_hex": self.defense.key.hex(),
                "b": self.defense.bits_per_frame,
                "d_max": self.defense.d_max,
                "w_max": self.defense.w_max,
            }
        return doc


def _build_payload(payload: Dict[str, Any], width: int, height: int):
    sign = payload.get("sign")
    if payload["type"] == "sign":
        if sign is None:
            raise ScenarioError("attack.payload.sign", "sign payload needs a sign label")
        return make_template(sign)
    rgb = scene_rgb(SceneConfig(seed=payload.get("seed", 0), width=width, height=payload.get("height", height)),
                    payload.get("frame", 0))
    if sign is not None:
        row, col = payload.get("position", (0, 0))
        rgb = paste(rgb, make_template(sign), row, col)
    return mosaic(rgb)


def from_dict(doc: Dict[str, Any], seed_override: Optional[int] = None) -> Scenario:
    validate(doc)
    doc = copy.deepcopy(doc)
    if seed_override is not None:
        doc["sim"]["seed"] = seed_override
    try:
        sim = SimConfig.from_dict(doc["sim"])
    except (ValueError, TypeError) as exc:
        raise ScenarioError("sim", str(exc)) from exc

    attack = None
    if doc.get("attack"):
        a = doc["attack"]
        try:
            attack = AttackPlan(
                kind=AttackKind(a["kind"]),
                start_frame=a["start_frame"],
                duration_frames=a["duration_frames"],
                payload_image=_build_payload(a["payload"], a["injected_width"], sim.scene.height),
                injected_width=a["injected_width"],
                stripe_rows=a.get("stripe_rows", 0),
                patch_position=tuple(a.get("patch_position", (0, 0))),
                metadata_policy=MetadataPolicy(a.get("metadata_policy", "Static")),
                rate_multiplier=a.get("rate_multiplier", 1.0),
                static_block_id=a.get("static_block_id", 1),
                static_timestamp_ns=a.get("static_timestamp_ns", 0),
            )
            attack.check_session(sim.scene.width, sim.scene.height, sim.duration_frames)
        except ScenarioError:
            raise
        except ValueError as exc:
            raise ScenarioError("attack", str(exc)) from exc

    defense = None
    if doc.get("defense"):
        d = doc["defense"]
        defense = DefensePlan(bytes.fromhex(d["key_hex"]), d["b"], d.get("d_max", 1), d.get("w_max", sim.scene.width))

    det = dict(doc.get("detectors", {}))
    det.setdefault("expected_width", sim.scene.width)
    det.setdefault("expected_height", sim.scene.height)
    det["period_ns"] = sim.period_ns
    try:
        detectors = DetectorConfig(**det)
    except ValueError as exc:
        raise ScenarioError("detectors", str(exc)) from exc
    outputs = dict(DEFAULT_OUTPUTS)
    outputs.update(doc.get("outputs", {}))
    return Scenario(doc, sim, attack, defense, detectors, outputs)


def load(path: Union[str, Path], seed_override: Optional[int] = None) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"not valid JSON: {exc}") from exc
    return from_dict(doc, seed_override)


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``clean.json``."""
    return Path(__file__).with_name("scenarios") / name


def list_bundled() -> List[str]:
    return sorted(p.name for p in (Path(__file__).with_name("scenarios")).glob("*.json"))
