"""Command line interface: ``delaystab <command> <config.json> [options]``.

Exit status: 0 certified/pass, 1 not certified/fail, 2 error.
"""
from __future__ import annotations

import argparse
import copy
import datetime as _dt
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .decay import Channel, DecayError, default_window, estimate_decay
from .expr import ExprError, evaluate_array, parse
from .model import (
    COEFFICIENTS,
    DELAYS,
    SIGNED,
    CoefficientSpec,
    DelaySpec,
    NormMode,
    SystemSpec,
    sample_grid,
    validate,
)
from .simulate import ForcingSpec, InitialData, integrate, verify_apriori
from .stability import (
    Certificate,
    certify_corollary31,
    certify_theorem31,
    check_first_order,
    perron_root_oracle,
    spectral_radius,
)

COMMANDS = ("validate", "certify", "certify-corollary", "simulate", "decay", "apriori",
            "reproduce-example")

REPORT_KEYS = ("verdict", "matrix", "spectral_radius", "minors", "hypotheses", "norms",
               "decay", "apriori", "metadata")

# majorant printed with the worked example, and its reported spectral radius
PUBLISHED_MATRIX = [
    [0.0, 0.1, 0.505, 0.5, 0.0],
    [0.25, 0.0, 0.1, 0.1, 0.0],
    [0.25, 1.01, 0.0, 0.1, 0.0],
    [0.5, 0.0, 0.0, 0.0, 0.1],
    [0.1, 0.0, 0.0, 0.3, 0.0],
]
PUBLISHED_RADIUS = 0.8443

_number = {"type": "number"}
_expr = {"type": "string", "minLength": 1}
_coef = {
    "type": "object",
    "required": ["expr", "upper"],
    "properties": {"expr": _expr, "lower": _number, "upper": _number,
                   "signed": {"type": "boolean"}},
    "additionalProperties": False,
}
_delay = {
    "type": "object",
    "required": ["lag", "max_lag"],
    "properties": {"lag": _expr, "max_lag": {"type": "number", "minimum": 0}},
    "additionalProperties": False,
}
_positive_or_null = {"type": ["number", "null"], "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["system"],
    "additionalProperties": False,
    "properties": {
        "description": {"type": "string"},
        "system": {
            "type": "object",
            "required": list(COEFFICIENTS + DELAYS),
            "additionalProperties": False,
            "properties": {"t0": {"type": "number", "minimum": 0},
                           **{k: _coef for k in COEFFICIENTS},
                           **{k: _delay for k in DELAYS}},
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"phi1": _expr, "phi2": _expr, "psi": _expr},
        },
        "forcing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"f1": _expr, "f2": _expr,
                           "f1_bound": {"type": "number", "minimum": 0},
                           "f2_bound": {"type": "number", "minimum": 0}},
        },
        "numerics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "step": _positive_or_null,
                "t_end": _positive_or_null,
                "grid_step": _positive_or_null,
                "horizon": _positive_or_null,
                "period_hint": _positive_or_null,
                "window": _positive_or_null,
                "channel": {"enum": [c.value for c in Channel]},
                "mode": {"enum": [m.value for m in NormMode]},
                "apriori_t1": _positive_or_null,
                "tolerance": _positive_or_null,
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"report": {"type": "string"}, "trajectory": {"type": "string"},
                           "plot_data": {"type": "string"}},
        },
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class Numerics:
    step: float | None = None
    t_end: float = 100.0
    grid_step: float | None = None
    horizon: float | None = None
    period_hint: float | None = None
    window: float | None = None
    channel: str = "max"
    mode: str = "declared"
    apriori_t1: float | None = None
    tolerance: float = 1e-9


@dataclass
class RunConfig:
    system: SystemSpec
    initial: InitialData
    forcing: ForcingSpec
    numerics: Numerics
    outputs: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    sha256: str = ""


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def _schema_error(err: jsonschema.ValidationError) -> ConfigError:
    path = list(err.absolute_path)
    if err.validator == "required" and isinstance(err.instance, dict):
        missing = [k for k in err.validator_value if k not in err.instance]
        if missing:
            return ConfigError(f"{_pointer(path + [missing[0]])}: required field is missing")
    return ConfigError(f"{_pointer(path)}: {err.message}")


def _parse_at(source: str, pointer: str):
    try:
        return parse(source)
    except ExprError as exc:
        raise ConfigError(f"{pointer}: {exc}") from None


def config_from_dict(raw: dict) -> RunConfig:
    """Validate a parsed JSON config and build the run objects."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        raise _schema_error(errors[0])
    sysd = raw["system"]
    t0 = float(sysd.get("t0", 0.0))
    kwargs = {}
    for name in COEFFICIENTS:
        c = sysd[name]
        ptr = f"/system/{name}"
        signed = c.get("signed", name in SIGNED)
        lower = c.get("lower", 0.0 if signed else None)
        if lower is None:
            raise ConfigError(f"{ptr}/lower: required field is missing")
        try:
            kwargs[name] = CoefficientSpec(_parse_at(c["expr"], f"{ptr}/expr"),
                                           lower, c["upper"], signed)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{ptr}: {exc}") from None
    probe = sample_grid(t0, t0 + 100.0, 0.1)
    for name in DELAYS:
        d = sysd[name]
        ptr = f"/system/{name}"
        lag = _parse_at(d["lag"], f"{ptr}/lag")
        try:
            values = evaluate_array(lag, probe)
        except ExprError as exc:
            raise ConfigError(f"{ptr}/lag: {exc}") from None
        if np.any(values < 0):
            k = int(np.flatnonzero(values < 0)[0])
            raise ConfigError(
                f"{ptr}/lag: negative lag {values[k]!r} at t = {probe[k]!r}; "
                "lags t - h(t) must be >= 0")
        kwargs[name] = DelaySpec(lag, d["max_lag"])
    system = SystemSpec(**kwargs, t0=t0)

    ini = raw.get("initial", {})
    initial = InitialData(*(
        _parse_at(ini.get(k, "0"), f"/initial/{k}") for k in ("phi1", "phi2", "psi")))
    fo = raw.get("forcing", {})
    forcing = ForcingSpec(_parse_at(fo.get("f1", "0"), "/forcing/f1"),
                          _parse_at(fo.get("f2", "0"), "/forcing/f2"),
                          float(fo.get("f1_bound", 0.0)), float(fo.get("f2_bound", 0.0)))
    nu = {k: v for k, v in raw.get("numerics", {}).items() if v is not None}
    numerics = Numerics(**nu)
    if numerics.t_end <= t0:
        raise ConfigError("/numerics/t_end: must exceed /system/t0")
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return RunConfig(system, initial, forcing, numerics, dict(raw.get("outputs", {})),
                     copy.deepcopy(raw), hashlib.sha256(canonical.encode()).hexdigest())


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(raw)


def example_config_path() -> Path:
    return Path(str(resources.files("delaystab") / "data" / "worked_example.json"))


# ---------------------------------------------------------------- reports

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _empty_report(cfg: RunConfig | None, command: str) -> dict:
    report = {k: None for k in REPORT_KEYS}
    report["command"] = command
    report["metadata"] = {
        "tool": "delaystab",
        "version": __version__,
        "config_sha256": cfg.sha256 if cfg else None,
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    return report


def _fill_certificate(report: dict, cert: Certificate) -> None:
    d = cert.to_dict()
    report["verdict"] = d["verdict"]
    report["matrix"] = d["matrix"]
    report["spectral_radius"] = d["spectral_radius"]
    report["minors"] = d["minors"]
    report["hypotheses"] = d["hypotheses"]
    report["norms"] = d["norms"]
    report["certificate"] = {k: d[k] for k in ("method", "reason", "marginal", "notes")}
    for k in ("corollary_lhs", "cross_check"):
        if k in d:
            report["certificate"][k] = d[k]


def _first_order(cfg: RunConfig, three_halves: bool) -> dict:
    b1, sigma1 = cfg.system.b1.upper, cfg.system.sigma1
    out = {"sigma1": sigma1, "b1_upper": b1, "product": sigma1 * b1,
           "three_halves": three_halves,
           "passes": check_first_order(b1, sigma1, three_halves)}
    if three_halves:
        out["note"] = "constant 3/2 is a sharper bound taken from the literature"
    return out


def _simulate(cfg: RunConfig, opts):
    n = cfg.numerics
    return integrate(cfg.system, cfg.initial, cfg.forcing, opts.t_end or n.t_end,
                     opts.step or n.step)


def _decay(cfg: RunConfig, traj, opts):
    n = cfg.numerics
    window = opts.window or n.window
    if window is None:
        window = default_window(traj.max_lag)
        span = float(traj.t[-1] - traj.t[0])
        if span / window < 10:
            window = span / 10
    return estimate_decay(traj, n.channel, window)


def run(command: str, cfg: RunConfig | None, opts) -> tuple[int, dict]:
    """Execute ``command`` and return ``(exit_status, report)``."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    if cfg is None:
        if command != "reproduce-example":
            raise ConfigError("a config file is required")
        cfg = load_config(example_config_path())
    report = _empty_report(cfg, command)
    n = cfg.numerics
    mode = opts.mode or n.mode
    spec = cfg.system

    if command == "validate":
        hyp = validate(spec, n.grid_step, n.horizon)
        horizon = hyp.horizon
        forcing = cfg.forcing.validate(spec.t0, horizon, hyp.grid_step)
        ok = hyp.all_passed and forcing.all_passed
        report["verdict"] = "pass" if ok else "fail"
        report["hypotheses"] = hyp.to_dict()
        report["forcing"] = forcing.to_dict()
        failure = hyp.first_failure or forcing.first_failure
        if failure is not None:
            report["first_failure"] = {"name": failure.name, "detail": failure.detail,
                                       "t": failure.first_violation_t}
        return (0 if ok else 1), report

    if command == "certify":
        cert = certify_theorem31(spec, mode, n.grid_step, n.horizon)
        _fill_certificate(report, cert)
        report["first_order"] = _first_order(cfg, opts.three_halves)
        return (0 if cert.certified else 1), report

    if command == "certify-corollary":
        cert = certify_corollary31(spec, n.grid_step, n.horizon, mode)
        _fill_certificate(report, cert)
        return (0 if cert.certified else 1), report

    if command == "simulate":
        traj = _simulate(cfg, opts)
        path = cfg.outputs.get("trajectory", "trajectory.csv")
        traj.to_csv(path)
        report["verdict"] = "pass"
        report["trajectory"] = {"path": path, "points": len(traj.t), "step": traj.step,
                                "t_end": float(traj.t[-1]), "sup": traj.sup_norms(),
                                "diagnostics": traj.diagnostics}
        return 0, report

    if command == "decay":
        traj = _simulate(cfg, opts)
        est = _decay(cfg, traj, opts)
        if "plot_data" in cfg.outputs:
            est.write_plot_data(cfg.outputs["plot_data"])
        report["decay"] = est.to_dict()
        ok = est.mu > 0
        report["verdict"] = "pass" if ok else "fail"
        return (0 if ok else 1), report

    if command == "apriori":
        cert = certify_theorem31(spec, mode, n.grid_step, n.horizon)
        _fill_certificate(report, cert)
        if not cert.certified:
            return 1, report
        t1 = opts.t_end or n.apriori_t1 or n.t_end
        ap = verify_apriori(spec, cfg.forcing, t1, opts.step or n.step, cert,
                            tol=n.tolerance)
        report["apriori"] = ap.to_dict()
        report["verdict"] = "pass" if ap.passed else "fail"
        return (0 if ap.passed else 1), report

    # reproduce-example
    rho_published = spectral_radius(PUBLISHED_MATRIX)
    rho_oracle = perron_root_oracle(PUBLISHED_MATRIX)
    cert = certify_theorem31(spec, mode, n.grid_step, n.horizon)
    _fill_certificate(report, cert)
    traj = _simulate(cfg, opts)
    est = _decay(cfg, traj, opts)
    report["decay"] = est.to_dict()
    a = np.asarray(cert.matrix.entries) if cert.matrix is not None else None
    dominated = bool(a is not None and np.all(a <= np.asarray(PUBLISHED_MATRIX) + 1e-12))
    report["comparison"] = {
        "published_radius": PUBLISHED_RADIUS,
        "radius_of_published_matrix": rho_published,
        "radius_oracle": rho_oracle,
        "config_radius": cert.spectral_radius,
        "config_matrix_dominated_by_published_matrix": dominated,
        "alpha1_sq_vs_4A2": [spec.a1.lower ** 2, 4 * spec.a2.upper],
        "published_verdict": "uniformly exponentially stable",
        "empirical_mu": est.mu,
    }
    ok = (cert.certified and abs(rho_published - PUBLISHED_RADIUS) <= 1e-3 and dominated
          and est.mu > 0)
    return (0 if ok else 1), report


def format_comparison(report: dict) -> str:
    c = report["comparison"]
    rows = [
        ("quantity", "published", "computed"),
        ("r(A~)", f"~{c['published_radius']}", f"{c['radius_of_published_matrix']:.10f}"),
        ("r(A~) char. poly", "", f"{c['radius_oracle']:.10f}"),
        ("r(A) config", "<= r(A~)", f"{c['config_radius']:.10f}"),
        ("0 <= A <= A~", "yes", "yes" if c["config_matrix_dominated_by_published_matrix"] else "no"),
        ("alpha1^2 >= 4 A2", "1 >= 1",
         f"{c['alpha1_sq_vs_4A2'][0]:g} >= {c['alpha1_sq_vs_4A2'][1]:g}"),
        ("verdict", "stable", report["verdict"]),
        ("empirical mu", "(not given)", f"{c['empirical_mu']:.6f}"),
    ]
    w = [max(len(r[i]) for r in rows) for i in range(3)]
    return "\n".join("  ".join(r[i].ljust(w[i]) for i in range(3)).rstrip() for r in rows)


def dump_report(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=False) + "\n"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="delaystab",
        description="Exponential stability certificates for a coupled delay system.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("config", nargs="?", help="JSON config (optional for reproduce-example)")
    p.add_argument("--step", type=float, default=None, help="integration step")
    p.add_argument("--t-end", dest="t_end", type=float, default=None, help="simulation horizon")
    p.add_argument("--mode", choices=[m.value for m in NormMode], default=None)
    p.add_argument("--three-halves", dest="three_halves", action="store_true",
                   help="use the constant 3/2 in the first-order delay test")
    p.add_argument("--window", type=float, default=None, help="decay-fit window length")
    p.add_argument("--out", default=None, help="write the JSON report here")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else None
        status, report = run(args.command, cfg, args)
    except Exception as exc:  # exit-code contract: any failure to run is status 2
        module = type(exc).__module__.replace("delaystab.", "")
        print(f"delaystab: error [{module}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    text = dump_report(report)
    out = args.out or (cfg.outputs.get("report") if cfg else None)
    if args.command == "reproduce-example":
        print(format_comparison(report))
        if out:
            Path(out).write_text(text)
    elif out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
