"""Command-line entry point.

    vortexblob <command> [--config run.yaml] [--set key=value ...] [--out DIR]

Exit codes: 0 success, 1 failed check, 2 usage or configuration error,
3 numerical abort (blow-up guard).
"""
from __future__ import annotations

import argparse
import copy
import logging
import math
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import yaml

from .exceptions import BlowUpError, ParameterError, VortexBlobError

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_BLOWUP = 0, 1, 2, 3
COMMANDS = ("simulate", "verify", "stability", "existence", "kernel-check", "probe")

log = logging.getLogger("vortexblob")

# every accepted key with its default; anything else is rejected
DEFAULTS = {
    "command": None,
    "initial": {"kind": "rankine", "params": {"omega0": 1.0, "radius": 1.0}},
    "eps": 0.04,
    "dt": 0.002,
    "T": 0.2,
    "N": 50,
    "theta": 0.4,
    "order": 8,
    "method": "auto",
    "integrator": "rk4",
    "mollifier": "gaussian",
    "output": "vortexblob-out",
    "deterministic": True,
    "threads": "auto",
    "plots": False,
    "simulate": {"label_spacing": 0.0},
    "verify": {"center": [0.3, 0.1], "radius": 0.5, "time_stride": 1, "tolerance": 1e-3},
    "stability": {"perturbation": "strong_l1", "n_levels": 3, "gamma": 0.05, "r": 2.0,
                  "label_spacing": 0.0625, "n_times": 5, "eps0": 0.08, "n0": 8,
                  "v_spacing": 0.05},
    "existence": {"eps_levels": [0.16, 0.08, 0.04], "gamma": 0.01, "r": 2.0,
                  "label_spacing": 0.0625, "n_times": 5, "v_spacing": 0.05},
    "kernel_check": {"p_list": [4 / 3, 1.5, 5 / 3],
                     "h_list": [0.5, 0.25, 0.125, 0.0625, 0.03125]},
    "probe": {"deltas": [1e-2, 1e-3, 1e-4], "gamma": 1e-3, "r": 1.0,
              "label_spacing": 0.025, "n_times": 5, "min_slope": 0.9},
}

POSITIVE = {"eps", "dt", "T", "N", "theta", "order",
            "verify.radius", "verify.time_stride", "verify.tolerance",
            "simulate.label_spacing",
            "stability.n_levels", "stability.gamma", "stability.r",
            "stability.label_spacing", "stability.n_times", "stability.eps0",
            "stability.n0", "stability.v_spacing",
            "existence.gamma", "existence.r", "existence.label_spacing",
            "existence.n_times", "existence.v_spacing",
            "probe.gamma", "probe.r", "probe.label_spacing", "probe.n_times"}
ENUMS = {"method": ("auto", "direct", "tree"), "integrator": ("rk4", "rk2"),
         "mollifier": ("gaussian", "compact_bump"),
         "stability.perturbation": ("strong_l1", "weak_oscillatory")}
# zero switches label tracing off in simulate
NON_NEGATIVE = {"simulate.label_spacing"}


class ConfigError(VortexBlobError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class RunConfig:
    command: str
    values: dict = dc_field(default_factory=dict)

    def __getitem__(self, key):
        node = self.values
        for part in key.split("."):
            node = node[part]
        return node

    @property
    def output(self):
        return Path(self.values["output"])


def _merge(base, update, prefix=""):
    for k, v in update.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(key, "unknown configuration key")
        if isinstance(base[k], dict) and k != "initial":
            if not isinstance(v, dict):
                raise ConfigError(key, "expected a mapping")
            _merge(base[k], v, key + ".")
        else:
            base[k] = v


def _parse_override(text):
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw) if raw else ""
    nested = value
    for part in reversed(key.split(".")):
        nested = {part: nested}
    return key, nested


def _check_number(key, value, allow_zero=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if not math.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(key, f"must be positive, got {value!r}")


def _validate(cfg):
    for key in POSITIVE:
        node = cfg
        for part in key.split("."):
            node = node[part]
        _check_number(key, node, allow_zero=key in NON_NEGATIVE)
    for key, allowed in ENUMS.items():
        node = cfg
        for part in key.split("."):
            node = node[part]
        if node not in allowed:
            raise ConfigError(key, f"must be one of {list(allowed)}, got {node!r}")
    if not 0 < cfg["theta"] < 1:
        raise ConfigError("theta", "must lie in (0, 1)")
    if cfg["dt"] > cfg["T"]:
        raise ConfigError("dt", "must not exceed T")
    threads = cfg["threads"]
    if threads != "auto" and (isinstance(threads, bool) or not isinstance(threads, int)
                              or threads < 1):
        raise ConfigError("threads", "must be a positive integer or 'auto'")
    init = cfg["initial"]
    if not isinstance(init, dict) or "kind" not in init:
        raise ConfigError("initial", "needs a 'kind'")
    extra = set(init) - {"kind", "params"}
    if extra:
        raise ConfigError(f"initial.{sorted(extra)[0]}", "unknown configuration key")
    from .field import InitialVorticitySpec

    try:
        InitialVorticitySpec(init["kind"], init.get("params") or {})
    except ParameterError as exc:
        raise ConfigError("initial", str(exc)) from None
    for key in ("eps_levels",):
        for v in cfg["existence"][key]:
            _check_number(f"existence.{key}", v)
    for key in ("p_list", "h_list"):
        for v in cfg["kernel_check"][key]:
            _check_number(f"kernel_check.{key}", v)
    for v in cfg["probe"]["deltas"]:
        _check_number("probe.deltas", v)
    try:
        out = Path(cfg["output"])
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError("output", f"directory not writable ({exc})") from None


def parse_config(path=None, overrides=(), command=None, output=None):
    """Merge defaults, a YAML file and key=value overrides; validate."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("config", f"file {p} does not exist")
        loaded = yaml.safe_load(p.read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config", "top level must be a mapping")
        _merge(cfg, loaded)
    for text in overrides:
        key, nested = _parse_override(text)
        if key.startswith("initial.") and "initial" in nested:
            sub = nested["initial"]
            for k, v in sub.items():
                if k == "params":
                    cfg["initial"].setdefault("params", {}).update(v)
                else:
                    cfg["initial"][k] = v
            continue
        _merge(cfg, nested)
    if command is not None:
        cfg["command"] = command
    if output is not None:
        cfg["output"] = str(output)
    if cfg["command"] is None:
        raise ConfigError("command", "missing required key")
    if cfg["command"] not in COMMANDS:
        raise ConfigError("command", f"must be one of {list(COMMANDS)}")
    _validate(cfg)
    return RunConfig(cfg["command"], cfg)


# -- commands ----------------------------------------------------------------

def _spec(cfg):
    from .field import InitialVorticitySpec

    init = cfg["initial"]
    return InitialVorticitySpec(init["kind"], init.get("params") or {})


def _flow_config(cfg, **kw):
    from .flow import FlowConfig

    args = dict(dt=cfg["dt"], integrator=cfg["integrator"], method=cfg["method"],
                theta=cfg["theta"], order=int(cfg["order"]))
    args.update(kw)
    return FlowConfig(**args)


def _simulate(cfg):
    from .field import discretize
    from .flow import integrate_flow
    from .grid import UniformGrid
    from .io import save_field, save_flow, write_csv

    spec = _spec(cfg)
    field0 = discretize(spec, cfg["eps"], int(cfg["N"]), cfg["mollifier"])
    labels = None
    if cfg["simulate.label_spacing"] > 0:
        lo, hi = spec.support_box()
        labels = UniformGrid.covering_box(lo, hi, cfg["simulate.label_spacing"])
    flow = integrate_flow(field0, cfg["T"], _flow_config(cfg), labels=labels)
    out = cfg.output
    hist = flow.history
    save_field(field0, out / "field_initial.csv")
    save_field(hist.field(hist.n_steps), out / "field_final.csv")
    save_flow(flow, out / "flow.npz")
    circ = [(k, hist.times[k], hist.field(k).total_circulation)
            for k in range(hist.n_steps + 1)]
    write_csv(out / "circulation.csv", "circulation", ["step", "time", "circulation"], circ)
    drift = max(abs(c - circ[0][2]) for *_, c in circ)
    write_csv(out / "summary.csv", "simulate-summary", ["quantity", "value"],
              [("n_particles", len(field0)), ("n_steps", hist.n_steps),
               ("T", cfg["T"]), ("circulation_drift", drift)])
    return flow, field0, EXIT_OK if drift == 0.0 else EXIT_FAILED


def _verify(cfg):
    from .io import write_csv
    from .weakform import (arctan_nonlinearity, divfree_from_stream, make_bump,
                           renormalized_residual, sym_weak_identity_gap,
                           symmetrized_velocity_residual, symmetrized_vorticity_residual,
                           weak_velocity_residual)

    flow, field0, code = _simulate(cfg)
    v = cfg["verify"]
    T = cfg["T"]
    stride = int(v["time_stride"])
    phi = make_bump(v["center"], v["radius"], T)
    psi = divfree_from_stream(make_bump(v["center"], v["radius"], T))
    reports = [
        renormalized_residual(flow, arctan_nonlinearity(), phi, field0, time_stride=stride,
                              method=cfg["method"]),
        symmetrized_vorticity_residual(flow, phi, time_stride=stride),
        symmetrized_velocity_residual(flow, psi, time_stride=stride, method=cfg["method"]),
        weak_velocity_residual(flow, psi, time_stride=stride, method=cfg["method"]),
    ]
    # the cosine profile vanishes at T, so the identity is checked with a steady psi
    steady = divfree_from_stream(make_bump(v["center"], v["radius"], T, profile="constant"))
    gap = sym_weak_identity_gap(flow.history.field(flow.history.n_steps), steady, t=T,
                                method=cfg["method"])
    tol = v["tolerance"]
    rows = []
    ok = True
    for rep in reports:
        passed = abs(rep.residual) <= tol * rep.scale or rep.residual == 0.0
        ok &= passed
        rows.append((rep.formulation, rep.residual, rep.scale, rep.relative,
                     rep.quadrature_error_estimate, passed))
    gap_ok = gap.gap <= tol * gap.scale or gap.gap == 0.0
    ok &= gap_ok
    rows.append(("identity_gap", gap.gap, gap.scale, gap.relative, 0.0, gap_ok))
    write_csv(cfg.output / "residuals.csv", "residuals",
              ["formulation", "residual", "scale", "relative", "quadrature_error", "passed"],
              rows)
    for row in rows:
        print(f"{row[0]:>24s}  residual {row[1]: .3e}  relative {row[3]:.3e}  "
              f"{'ok' if row[-1] else 'FAIL'}")
    return EXIT_OK if ok and code == EXIT_OK else EXIT_FAILED


def _stability(cfg):
    from .experiments import run_stability_experiment

    s = cfg["stability"]
    rep = run_stability_experiment(
        _spec(cfg), s["perturbation"], int(s["n_levels"]), cfg["T"], _flow_config(cfg),
        gamma=s["gamma"], r=s["r"], label_spacing=s["label_spacing"],
        n_times=int(s["n_times"]), v_spacing=s["v_spacing"], eps0=s["eps0"],
        n0=int(s["n0"]))
    rep.write(cfg.output, cfg.values, cfg["plots"])
    for name, passed in sorted(rep.checks().items()):
        print(f"{name:>32s}  {'ok' if passed else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_FAILED


def _existence(cfg):
    from .experiments import run_existence_pipeline

    e = cfg["existence"]
    rep = run_existence_pipeline(_spec(cfg), e["eps_levels"], cfg["T"], _flow_config(cfg),
                                 gamma=e["gamma"], r=e["r"],
                                 label_spacing=e["label_spacing"],
                                 n_times=int(e["n_times"]), v_spacing=e["v_spacing"])
    rep.write(cfg.output, cfg.values, cfg["plots"])
    for row in rep.rows():
        print("eps %g -> %g: flow %.4g  omega %.4g  velocity %.4g" % row)
    return EXIT_OK if rep.passed else EXIT_FAILED


def _kernel_check(cfg):
    from .experiments import run_kernel_scaling_experiment

    k = cfg["kernel_check"]
    rep = run_kernel_scaling_experiment(k["p_list"], k["h_list"])
    rep.write(cfg.output, cfg.values, cfg["plots"])
    for f in rep.fits:
        print(f"p={f.p:.4f}  alpha={f.alpha:.4f}  slope={f.slope:.4f}"
              f"{'  inconclusive' if f.inconclusive else ''}")
    return EXIT_OK if rep.passed else EXIT_FAILED


def _probe(cfg):
    from .experiments import run_perturbation_probe
    from .field import discretize

    p = cfg["probe"]
    field0 = discretize(_spec(cfg), cfg["eps"], int(cfg["N"]), cfg["mollifier"])
    rep = run_perturbation_probe(field0, p["deltas"], p["gamma"], p["r"], T=cfg["T"],
                                 cfg=_flow_config(cfg), label_spacing=p["label_spacing"],
                                 n_times=int(p["n_times"]))
    rep.write(cfg.output, cfg.values, cfg["plots"])
    slope = rep.slope()
    print(f"log-log slope of flow distance against velocity distance: {slope:.4f}")
    return EXIT_OK if slope >= p["min_slope"] else EXIT_FAILED


HANDLERS = {"simulate": lambda c: _simulate(c)[2], "verify": _verify,
            "stability": _stability, "existence": _existence,
            "kernel-check": _kernel_check, "probe": _probe}


def _set_threads(cfg):
    import numba

    if cfg["deterministic"]:
        # every kernel is reduction-order stable; one thread also fixes timing noise
        numba.set_num_threads(1)
    elif cfg["threads"] != "auto":
        numba.set_num_threads(min(int(cfg["threads"]), numba.config.NUMBA_NUM_THREADS))


def dispatch(cfg):
    """Run the configured command and return its exit code."""
    from .io import write_snapshot

    _set_threads(cfg)
    write_snapshot(cfg.output / "effective_config.yaml", cfg.values)
    print(yaml.safe_dump(cfg.values, sort_keys=True), end="")
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return HANDLERS[cfg.command](cfg)
    except BlowUpError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except (ParameterError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def build_parser():
    ap = argparse.ArgumentParser(
        prog="vortexblob",
        description="Vortex-blob solver for 2D Euler and checks of its weak formulations.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", "-c", help="YAML run configuration")
    ap.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="KEY=VALUE",
                    help="override a configuration key, e.g. --set dt=0.01 "
                         "--set stability.gamma=0.02 (repeatable)")
    ap.add_argument("--out", help="output directory (overrides 'output')")
    ap.add_argument("--plots", action="store_true", help="also write SVG plots")
    ap.add_argument("--no-deterministic", action="store_true",
                    help="allow multi-threaded kernels (results stay order-stable)")
    ap.add_argument("--threads", help="thread count or 'auto'")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = list(args.overrides)
    if args.plots:
        overrides.append("plots=true")
    if args.no_deterministic:
        overrides.append("deterministic=false")
    if args.threads:
        overrides.append(f"threads={args.threads}")
    try:
        cfg = parse_config(args.config, overrides, command=args.command, output=args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
