"""JSON Schemas for every machine-readable report the command line emits."""

from __future__ import annotations

_NUMBER = {"type": "number"}
_LABELS = {"type": "array", "items": {"type": "string"}}

FIELD = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["real", "mod"]},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "d": {"type": "integer", "minimum": 2},
    },
    "additionalProperties": False,
}

GRAPH_SUMMARY = {
    "type": "object",
    "required": ["vertices", "inputs", "outputs", "edges"],
    "properties": {
        "vertices": {"type": "integer", "minimum": 0},
        "edges": {"type": "integer", "minimum": 0},
        "inputs": _LABELS,
        "outputs": _LABELS,
    },
}

ERROR = {
    "type": "object",
    "required": ["command", "status", "error"],
    "properties": {
        "command": {"type": "string"},
        "status": {"const": "error"},
        "error": {
            "type": "object",
            "required": ["code", "message"],
            "properties": {"code": {"type": "string"}, "message": {"type": "string"}},
        },
    },
}

REFUSAL = {
    "type": "object",
    "required": ["command", "status", "reason", "message"],
    "properties": {
        "command": {"type": "string"},
        "status": {"const": "refused"},
        "reason": {"enum": ["io_mismatch", "no_flow", "invalid_flow"]},
        "message": {"type": "string"},
    },
}

FLOW = {
    "type": "object",
    "required": ["command", "status", "field", "graph", "verdict", "flow_exists", "causal_flow", "depth", "layers"],
    "properties": {
        "command": {"const": "flow"},
        "status": {"const": "ok"},
        "field": FIELD,
        "graph": GRAPH_SUMMARY,
        "verdict": {"enum": ["causal_flow", "cv_flow", "gflow", "zd_flow", "none"]},
        "flow_exists": {"type": "boolean"},
        "causal_flow": {"type": "boolean"},
        "depth": {"type": ["integer", "null"]},
        "layers": {"type": "array", "items": _LABELS},
        "corrections": {
            "type": "object",
            "additionalProperties": {"type": "object", "additionalProperties": _NUMBER},
        },
        "successor": {"type": ["object", "null"], "additionalProperties": {"type": "string"}},
    },
}

GATE = {
    "type": "object",
    "required": ["kind", "wires", "weight"],
    "properties": {
        "kind": {"enum": ["J", "CZ", "CX"]},
        "wires": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1, "maxItems": 2},
        "weight": _NUMBER,
        "params": {"type": "array", "items": _NUMBER, "maxItems": 3},
        "vertices": _LABELS,
    },
    "additionalProperties": False,
}

CIRCUIT = {
    "type": "object",
    "required": ["field", "wires", "gates", "sections"],
    "properties": {
        "field": FIELD,
        "wires": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["index", "path"],
                "properties": {"index": {"type": "integer"}, "path": _LABELS},
            },
        },
        "gates": {"type": "array", "items": GATE},
        "sections": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["layer", "start", "stop"],
                "properties": {
                    "layer": {"type": "integer", "minimum": 0},
                    "start": {"type": "integer", "minimum": 0},
                    "stop": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
}

EXTRACT = {
    "type": "object",
    "required": ["command", "status", "circuit", "path_cover", "gate_counts"],
    "properties": {
        "command": {"const": "extract"},
        "status": {"const": "ok"},
        "circuit": CIRCUIT,
        "path_cover": {"type": "array", "items": _LABELS},
        "gate_counts": {
            "type": "object",
            "required": ["J", "CZ", "CX"],
            "additionalProperties": {"type": "integer", "minimum": 0},
        },
    },
}

_BRANCH = {
    "type": "object",
    "required": ["outcomes", "probability"],
    "properties": {
        "outcomes": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
        "probability": _NUMBER,
        "fidelity": _NUMBER,
        "amplitudes": {"type": "array", "items": {"type": "array", "items": _NUMBER, "minItems": 3, "maxItems": 3}},
    },
}

VERIFY = {
    "type": "object",
    "required": [
        "command",
        "status",
        "d",
        "tol",
        "branch_policy",
        "exhaustive",
        "passed",
        "deterministic",
        "uniform_probabilities",
        "probability_total",
        "min_fidelity",
        "branch_count",
        "branches",
    ],
    "properties": {
        "command": {"const": "verify"},
        "status": {"const": "ok"},
        "d": {"type": "integer"},
        "tol": _NUMBER,
        "branch_policy": {"type": "string"},
        "exhaustive": {"type": "boolean"},
        "passed": {"type": "boolean"},
        "deterministic": {"type": "boolean"},
        "uniform_probabilities": {"type": "boolean"},
        "probability_total": _NUMBER,
        "min_fidelity": _NUMBER,
        "branch_count": {"type": "integer", "minimum": 0},
        "branches": {"type": "array", "items": _BRANCH},
    },
}

SIMULATE = {
    "type": "object",
    "required": ["command", "status", "d", "input", "branch_policy", "branch_count", "deterministic", "branches"],
    "properties": {
        "command": {"const": "simulate"},
        "status": {"const": "ok"},
        "d": {"type": "integer"},
        "input": {"type": "array", "items": {"type": "integer"}},
        "branch_policy": {"type": "string"},
        "branch_count": {"type": "integer"},
        "deterministic": {"type": "boolean"},
        "probability_total": _NUMBER,
        "branches": {"type": "array", "items": _BRANCH},
    },
}

DEMO = {
    "type": "object",
    "required": ["command", "status", "demo", "passed"],
    "properties": {
        "command": {"const": "demo"},
        "status": {"const": "ok"},
        "demo": {"enum": ["adder", "gflow_not_cvflow", "cvflow_not_gflow"]},
        "passed": {"type": "boolean"},
        "layers": {"type": "integer"},
        "gflow": {"type": "boolean"},
        "cv_flow": {"type": "boolean"},
        "output_digit": {"type": "integer"},
        "expected_digit": {"type": "integer"},
        "verification": {"type": "object"},
        "circuit": CIRCUIT,
    },
}

REPORTS = {
    "flow": FLOW,
    "extract": EXTRACT,
    "verify": VERIFY,
    "simulate": SIMULATE,
    "demo": DEMO,
    "error": ERROR,
    "refusal": REFUSAL,
}


def schema_for(report: dict) -> dict:
    """The schema a report must satisfy, chosen from its status and command."""
    status = report.get("status")
    if status == "error":
        return ERROR
    if status == "refused":
        return REFUSAL
    return REPORTS[report["command"]]
