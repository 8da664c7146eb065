"""Command-line front end.

Every command prints one JSON document on standard output (or writes it to
``--out``) and a short human summary on standard error. Exit codes: 0 success,
2 negative verdict or refused request, 1 error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import fixtures
from .extract import (
    ExtractionError,
    IoMismatch,
    build_path_cover,
    circuit_to_json,
    extract_circuit,
    render_ascii,
)
from .field_linalg import ModField, RealField, is_prime, rref, Matrix
from .flow import (
    causal_to_flow,
    find_causal_flow,
    find_flow,
    flow_from_json,
    flow_to_json,
    simultaneous_correction,
)
from .open_graph import GraphError, OpenGraph, read_graph
from .qudit_sim import (
    QuditState,
    SimulationError,
    h_matrix,
    parse_branch_policy,
    run_mbqc,
    states_equal_up_to_phase,
    verify_against_circuit,
)

EXIT_OK, EXIT_ERROR, EXIT_NEGATIVE = 0, 1, 2
DEMOS = ("adder", "gflow_not_cvflow", "cvflow_not_gflow")


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are errors, not negative verdicts
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunConfig:
    command: str
    graph: str | None = None
    field: str | None = None
    eps: float | None = None
    d: int | None = None
    angles: str | None = None
    branches: str = "exhaustive"
    out: str | None = None
    format: str = "json"
    tol: float = 1e-9
    flow: str | None = None
    input: str | None = None
    demo: str | None = None
    n: int = 3
    inputs: str | None = None

    def __post_init__(self) -> None:
        if self.eps is not None and not self.eps > 0:
            raise CliError("bad_config", f"--eps must be positive, got {self.eps}")
        if self.d is not None and not is_prime(self.d):
            raise CliError("bad_config", f"--d must be prime, got {self.d}")
        if self.field == "mod" and self.d is None:
            raise CliError("bad_config", "--field mod needs --d")
        if not self.tol > 0:
            raise CliError("bad_config", f"--tol must be positive, got {self.tol}")
        try:
            parse_branch_policy(self.branches)
        except SimulationError as exc:
            raise CliError("bad_config", str(exc)) from None


# ---------------------------------------------------------------- helpers


def _load(cfg: RunConfig) -> OpenGraph:
    if not cfg.graph:
        raise CliError("bad_config", f"{cfg.command} needs --graph")
    try:
        g = read_graph(cfg.graph)
    except OSError as exc:
        raise CliError("io_error", f"{cfg.graph}: {exc.strerror or exc}") from None
    except GraphError as exc:
        raise CliError(exc.code if hasattr(exc, "code") else "invalid_graph", f"{cfg.graph}: {exc}") from None
    field = None
    if cfg.field == "real" or (cfg.field is None and cfg.eps is not None and cfg.d is None):
        field = RealField(cfg.eps) if cfg.eps is not None else RealField()
    elif cfg.d is not None:
        field = ModField(cfg.d)
    if field is not None:
        try:
            g = g.with_field(field)
        except (GraphError, ValueError) as exc:
            raise CliError("invalid_graph", str(exc)) from None
    return g


def _angles(cfg: RunConfig):
    if not cfg.angles:
        return None
    try:
        with open(cfg.angles, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CliError("io_error", f"{cfg.angles}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError("malformed_document", f"{cfg.angles}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise CliError("malformed_document", f"{cfg.angles}: expected an object of vertex -> [a, b, c]")
    return doc


def _graph_summary(g: OpenGraph) -> dict:
    return {
        "vertices": g.n,
        "edges": len(g.edges()),
        "inputs": g.labels(g.inputs),
        "outputs": g.labels(g.outputs),
    }


def _generalised_name(g: OpenGraph) -> str:
    if g.field.kind == "real":
        return "cv_flow"
    return "gflow" if g.field.d == 2 else "zd_flow"


def _require_mod(g: OpenGraph) -> int:
    if g.field.kind != "mod":
        raise CliError("needs_prime_field", "simulation needs a Z_d graph; pass --d P")
    return g.field.d


def _best_flow(g: OpenGraph):
    cf = find_causal_flow(g)
    fr = find_flow(g)
    if fr is None and cf is not None:
        fr = causal_to_flow(g, cf)
    return cf, fr


def _verification_json(g: OpenGraph, v, policy: str) -> dict:
    return {
        "d": v.d,
        "tol": v.tol,
        "branch_policy": policy,
        "exhaustive": v.exhaustive,
        "passed": v.passed,
        "deterministic": v.deterministic,
        "uniform_probabilities": v.uniform_probabilities,
        "probability_total": v.probability_total,
        "min_fidelity": v.min_fidelity,
        "branch_count": len(v.branches),
        "branches": [
            {
                "outcomes": dict(zip(g.labels(v.measured), b.outcomes)),
                "probability": b.probability,
                "fidelity": b.fidelity,
            }
            for b in v.branches
        ],
    }


def _refusal(command: str, reason: str, message: str) -> dict:
    return {"command": command, "status": "refused", "reason": reason, "message": message}


# ---------------------------------------------------------------- commands


def cmd_flow(cfg: RunConfig) -> tuple[dict, int, str]:
    g = _load(cfg)
    cf, fr = _best_flow(g)
    if cf is not None:
        verdict = "causal_flow"
    elif fr is not None:
        verdict = _generalised_name(g)
    else:
        verdict = "none"
    report = {
        "command": "flow",
        "status": "ok",
        "field": g.field.to_json(),
        "graph": _graph_summary(g),
        "verdict": verdict,
        "flow_exists": fr is not None,
        "causal_flow": cf is not None,
        "depth": fr.depth if fr is not None else None,
        "layers": [],
        "corrections": {},
        "successor": {g.label(j): g.label(t) for j, t in cf.f.items()} if cf is not None else None,
    }
    if fr is not None:
        doc = flow_to_json(g, fr)
        report["layers"] = doc["layers"]
        report["corrections"] = doc["corrections"]
    summary = f"verdict: {verdict}" + (f" (depth {fr.depth})" if fr is not None else "")
    return report, EXIT_OK if fr is not None else EXIT_NEGATIVE, summary


def _flow_or_refuse(command: str, g: OpenGraph):
    fr = find_flow(g)
    if fr is None:
        return None, _refusal(command, "no_flow", "the graph has no flow over " + g.field.describe())
    return fr, None


def cmd_extract(cfg: RunConfig) -> tuple[dict | str, int, str]:
    g = _load(cfg)
    fr, refusal = _flow_or_refuse("extract", g)
    if refusal:
        return refusal, EXIT_NEGATIVE, refusal["message"]
    try:
        circuit = extract_circuit(g, fr, _angles(cfg))
        cover = build_path_cover(g, fr)
    except IoMismatch as exc:
        return _refusal("extract", "io_mismatch", str(exc)), EXIT_NEGATIVE, str(exc)
    except ExtractionError as exc:
        return _refusal("extract", "invalid_flow", str(exc)), EXIT_NEGATIVE, str(exc)
    summary = (
        f"{circuit.width} wires, {len(circuit.gates)} gates in {len(circuit.sections)} sections "
        f"(J {circuit.count('J')}, CZ {circuit.count('CZ')}, CX {circuit.count('CX')})"
    )
    if cfg.format == "ascii":
        return render_ascii(circuit), EXIT_OK, summary
    report = {
        "command": "extract",
        "status": "ok",
        "circuit": circuit_to_json(circuit),
        "path_cover": [g.labels(p) for p in cover.paths],
        "gate_counts": {k: circuit.count(k) for k in ("J", "CZ", "CX")},
    }
    return report, EXIT_OK, summary


def _flow_for_corrections(cfg: RunConfig, g: OpenGraph, fallback):
    if not cfg.flow:
        return fallback
    try:
        with open(cfg.flow, encoding="utf-8") as fh:
            doc = json.load(fh)
        return flow_from_json(g, doc)
    except OSError as exc:
        raise CliError("io_error", f"{cfg.flow}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError("malformed_document", f"{cfg.flow}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except (KeyError, TypeError, ValueError, GraphError) as exc:
        raise CliError("malformed_document", f"{cfg.flow}: bad flow document ({exc})") from None


def cmd_verify(cfg: RunConfig) -> tuple[dict, int, str]:
    g = _load(cfg)
    _require_mod(g)
    fr, refusal = _flow_or_refuse("verify", g)
    if refusal:
        return refusal, EXIT_NEGATIVE, refusal["message"]
    angles = _angles(cfg)
    try:
        circuit = extract_circuit(g, fr, angles)
    except IoMismatch as exc:
        return _refusal("verify", "io_mismatch", str(exc)), EXIT_NEGATIVE, str(exc)
    pattern_flow = _flow_for_corrections(cfg, g, fr)
    v = verify_against_circuit(g, pattern_flow, circuit, angles, cfg.branches, cfg.tol)
    report = {"command": "verify", "status": "ok", **_verification_json(g, v, cfg.branches)}
    summary = f"{'pass' if v.passed else 'FAIL'}: {len(v.branches)} branches, min fidelity {v.min_fidelity:.12f}"
    return report, EXIT_OK if v.passed else EXIT_NEGATIVE, summary


def _parse_digits(text: str | None, count: int, d: int, what: str) -> list[int]:
    if text is None:
        return [0] * count
    try:
        digits = [int(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise CliError("bad_config", f"{what} must be comma-separated integers") from None
    if len(digits) != count:
        raise CliError("bad_config", f"{what} needs {count} values, got {len(digits)}")
    return [x % d for x in digits]


def _amplitudes(state: QuditState, cutoff: float = 1e-12) -> list[list[float]]:
    return [[int(i), float(a.real), float(a.imag)] for i, a in enumerate(state.amplitudes) if abs(a) > cutoff]


def cmd_simulate(cfg: RunConfig) -> tuple[dict, int, str]:
    g = _load(cfg)
    d = _require_mod(g)
    fr, refusal = _flow_or_refuse("simulate", g)
    if refusal:
        return refusal, EXIT_NEGATIVE, refusal["message"]
    fr = _flow_for_corrections(cfg, g, fr)
    digits = _parse_digits(cfg.input, len(g.inputs), d, "--input")
    records = run_mbqc(g, fr, _angles(cfg), cfg.branches, QuditState.basis(d, digits))
    ref = records[0].state
    deterministic = all(states_equal_up_to_phase(ref, r.state, cfg.tol) for r in records)
    report = {
        "command": "simulate",
        "status": "ok",
        "d": d,
        "input": digits,
        "branch_policy": cfg.branches,
        "branch_count": len(records),
        "deterministic": deterministic,
        "probability_total": float(sum(r.probability for r in records)),
        "branches": [
            {
                "outcomes": {g.label(v): m for v, m in r.outcomes},
                "probability": r.probability,
                "amplitudes": _amplitudes(r.state),
            }
            for r in records
        ],
    }
    return report, EXIT_OK, f"{len(records)} branches, deterministic={deterministic}"


def _fourier_input(d: int, digits: Sequence[int]) -> QuditState:
    h = h_matrix(d)
    vec = np.ones(1, dtype=np.complex128)
    for k in digits:
        vec = np.kron(h[:, k], vec)
    return QuditState(d, len(digits), vec)


def _demo_adder(cfg: RunConfig) -> dict:
    d = cfg.d or 5
    n = cfg.n
    if n < 1:
        raise CliError("bad_config", "--n must be at least 1")
    digits = _parse_digits(cfg.inputs, n, d, "--inputs") if cfg.inputs else [(k + 1) % d for k in range(n)]
    g = fixtures.adder_chain(n, ModField(d))
    fr = find_flow(g)
    if fr is None:
        raise CliError("internal", "adder chain has no flow")
    outcomes = {f"i{k}": k for k in range(1, n + 1)}
    op = simultaneous_correction(g, fr, 1, outcomes)
    amounts = {g.label(t.vertex): int(t.amount) for t in op.terms if t.axis == "X"}
    prefix = {f"o{k}": (-sum(range(1, k + 1))) % d for k in range(1, n + 1)}
    circuit = extract_circuit(g, fr)
    v = verify_against_circuit(g, fr, circuit, None, cfg.branches, cfg.tol)
    records = run_mbqc(g, fr, None, cfg.branches, _fourier_input(d, digits))
    last = []
    for r in records:
        probs = np.abs(r.state.amplitudes.reshape(d, -1)) ** 2
        marginal = probs.sum(axis=1)
        last.append((int(np.argmax(marginal)), float(marginal.max())))
    digit = last[0][0]
    expected = sum(digits) % d
    consistent = all(x == digit and p > 1 - cfg.tol for x, p in last)
    passed = fr.depth == 1 and amounts == {k: v_ for k, v_ in prefix.items() if v_} and v.passed and consistent
    passed = passed and digit == expected
    return {
        "demo": "adder",
        "n": n,
        "d": d,
        "inputs": digits,
        "layers": fr.depth,
        "correction_amounts": amounts,
        "output_digit": digit,
        "expected_digit": expected,
        "passed": bool(passed),
        "verification": {k: val for k, val in _verification_json(g, v, cfg.branches).items() if k != "branches"},
        "circuit": circuit_to_json(circuit),
    }


def _rref_is_identity(rows, field) -> bool:
    m = Matrix.from_rows(field, rows)
    return rref(m).matrix.equals(Matrix.identity(field, m.rows))


def _demo_separation(name: str) -> dict:
    if name == "gflow_not_cvflow":
        build = fixtures.gflow_not_cvflow
    else:
        build = fixtures.hexagon
    real = build(RealField())
    gflow = find_flow(build(ModField(2))) is not None
    fr_real = find_flow(real)
    cv = fr_real is not None
    report = {"demo": name, "gflow": gflow, "cv_flow": cv}
    if name == "gflow_not_cvflow":
        mats = fixtures.appendix_matrices()
        report["reduced_to_identity"] = {
            key: {
                "Z_2": _rref_is_identity(rows, ModField(2)),
                "R": _rref_is_identity(rows, RealField()),
            }
            for key, rows in mats.items()
        }
        report["passed"] = gflow and not cv
    else:
        report["corrections"] = flow_to_json(real, fr_real)["corrections"] if cv else {}
        report["passed"] = cv and not gflow
    flow_graph, flow = (real, fr_real) if cv else (build(ModField(2)), find_flow(build(ModField(2))))
    if flow is not None:
        try:
            extract_circuit(flow_graph, flow)
            report["extraction"] = "ok"
        except IoMismatch:
            report["extraction"] = "io_mismatch"
    return report


def cmd_demo(cfg: RunConfig) -> tuple[dict, int, str]:
    if cfg.demo not in DEMOS:
        raise CliError("unknown_demo", f"unknown demo {cfg.demo!r}; choose from {', '.join(DEMOS)}")
    body = _demo_adder(cfg) if cfg.demo == "adder" else _demo_separation(cfg.demo)
    report = {"command": "demo", "status": "ok", **body}
    if cfg.demo == "adder":
        summary = (
            f"adder N={body['n']} d={body['d']}: layers={body['layers']}, "
            f"last wire {body['output_digit']} (expected {body['expected_digit']})"
        )
    else:
        summary = f"{cfg.demo}: gflow={body['gflow']}, cv_flow={body['cv_flow']}"
    return report, EXIT_OK if body["passed"] else EXIT_NEGATIVE, summary


COMMANDS = {
    "flow": cmd_flow,
    "extract": cmd_extract,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "demo": cmd_demo,
}


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cvflow", description="Flow analysis, circuit extraction and qudit verification.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, graph=True):
        if graph:
            p.add_argument("--graph", required=True, help="graph JSON file")
        p.add_argument("--field", choices=["real", "mod"], help="reinterpret weights in this field")
        p.add_argument("--eps", type=float, help="zero tolerance for the real field")
        p.add_argument("--d", type=int, help="prime modulus (implies --field mod)")
        p.add_argument("--out", help="write the JSON report here instead of standard output")
        p.add_argument("--tol", type=float, default=1e-9, help="fidelity tolerance")

    p = sub.add_parser("flow", help="decide causal / generalised flow")
    common(p)
    p = sub.add_parser("extract", help="extract an equivalent circuit")
    common(p)
    p.add_argument("--angles", help="JSON file holding an object vertex -> [a, b, c]")
    p.add_argument("--format", choices=["json", "ascii"], default="json")
    for name, text in (("simulate", "run the measurement pattern"), ("verify", "compare pattern and circuit")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--angles", help="JSON file holding an object vertex -> [a, b, c]")
        p.add_argument("--branches", default="exhaustive", help="exhaustive or sample:N:SEED")
        p.add_argument("--flow", help="flow JSON whose corrections drive the pattern")
        if name == "simulate":
            p.add_argument("--input", help="comma-separated basis digits for the inputs")
    p = sub.add_parser("demo", help="built-in demonstrations")
    p.add_argument("demo", help=f"one of: {', '.join(DEMOS)}")
    common(p, graph=False)
    p.add_argument("--n", type=int, default=3, help="adder length")
    p.add_argument("--inputs", help="comma-separated adder inputs")
    p.add_argument("--branches", default="exhaustive", help="exhaustive or sample:N:SEED")
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    keys = RunConfig.__dataclass_fields__
    return RunConfig(**{k: v for k, v in vars(ns).items() if k in keys and v is not None})


def _emit(payload, out: str | None) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv: Sequence[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    out = getattr(ns, "out", None)
    try:
        cfg = config_from_args(ns)
        payload, code, summary = COMMANDS[cfg.command](cfg)
    except CliError as exc:
        payload, code, summary = _error(ns.command, exc.code, str(exc))
    except (GraphError, ExtractionError, SimulationError) as exc:
        payload, code, summary = _error(ns.command, getattr(exc, "code", type(exc).__name__), str(exc))
    try:
        _emit(payload, out)
    except OSError as exc:
        print(f"cvflow: cannot write {out}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_ERROR
    print(summary, file=sys.stderr)
    return code


def _error(command: str, code: str, message: str):
    report = {"command": command, "status": "error", "error": {"code": code, "message": message}}
    return report, EXIT_ERROR, f"error: {message}"


if __name__ == "__main__":
    sys.exit(main())
