"""Command-line workbench: one JSON config, five verbs, one manifest per run.

    vcontrol simulate    --config cfg.json --out runs/
    vcontrol fit-bath    ...
    vcontrol decoherence ...
    vcontrol train-rl    ... [--resume]
    vcontrol run-oct     ...
    vcontrol schema      (prints the config schema)

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance-threshold failure (fit-bath).
"""

import argparse
import copy
import csv
import datetime as _dt
import hashlib
import json
import os
import sys
import warnings

import jsonschema
import numpy as np

from . import __version__, bath, heom, lindblad, model, oct as oct_mod, rl
from .errors import CapacityError, ConfigurationError, DataError, WorkbenchError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_THRESHOLD = 4

FIT_BATH_TOLERANCE = 1e-3
MANIFEST = "manifest.json"
FIELD_HEADER = ("t_reduced", "env_y", "env_z")
OCT_FIELD_HEADER = ("t_reduced", "field_y", "field_z")

BACKENDS = rl.BACKENDS
FIELD_SOURCES = ("zero", "file", "constant", "sine-squared")
INITIAL_STATES = {"ground": (0, 0), "excited1": (1, 1), "excited2": (2, 2)}


def _num(**kw):
    return {"type": "number", **kw}


def _obj(props, **kw):
    return {"type": "object", "properties": props, "additionalProperties": False, **kw}


_TERMS = {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                     "minItems": 3, "maxItems": 3}}
_BATH = _obj({"strength": _num(minimum=0), "width": _num(exclusiveMinimum=0), "terms": _TERMS})
_RATE_FN = _obj({"kind": {"enum": list(lindblad.RATE_KINDS)},
                 "params": {"type": "array", "items": {"type": "number"}},
                 "times": {"type": "array", "items": {"type": "number"}}})
_GUESS = _obj({"shape": {"enum": ["sine-squared", "constant"]},
               "area_y": _num(), "area_z": _num()})

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "WorkbenchConfig",
    **_obj({
        "system": _obj({k: _num() for k in ("e1", "e2", "mu_y", "mu_z", "omega_y", "omega_z",
                                            "detuning_y", "detuning_z")}),
        "baths": _obj({"temperature_k": _num(exclusiveMinimum=0),
                       "tuning": _BATH, "coupling": _BATH,
                       "include_matsubara": {"type": "boolean"},
                       "n_matsubara": {"type": "integer", "minimum": 0}}),
        "rates": _obj({"values": {"type": "array", "items": _num(), "minItems": 4, "maxItems": 4},
                       "functions": {"type": "array", "items": _RATE_FN, "minItems": 4,
                                     "maxItems": 4}}),
        "heom": _obj({"depth": {"type": "integer", "minimum": 0},
                      "step_limit": _num(exclusiveMinimum=0),
                      "substeps": {"type": ["integer", "null"], "minimum": 1},
                      "trace_tol": _num(exclusiveMinimum=0),
                      "ado_cap": {"type": "integer", "minimum": 1}}),
        "simulate": _obj({"backend": {"type": "string"},
                          "picture": {"enum": list(model.PICTURES) + [None]},
                          "initial": {"enum": list(INITIAL_STATES)},
                          "field": _obj({"source": {"enum": list(FIELD_SOURCES)},
                                         "area_y": _num(), "area_z": _num(),
                                         "path": {"type": "string"},
                                         "n_steps": {"type": "integer", "minimum": 1}})}),
        "decoherence": _obj({"backend": {"enum": ["heom", "lindblad-const"]},
                             "n_steps": {"type": "integer", "minimum": 8},
                             "resolution_tol": _num(exclusiveMinimum=0)}),
        "rl": _obj({"backend": {"type": "string"},
                    "action_mode": {"enum": [rl.ABSOLUTE, rl.DELTA]},
                    "low": _num(), "high": _num(),
                    "n_steps": {"type": ["integer", "null"], "minimum": 1},
                    "picture": {"enum": list(model.PICTURES) + [None]},
                    "guess": _GUESS,
                    "episodes": {"type": "integer", "minimum": 0},
                    "batch_size": {"type": "integer", "minimum": 1},
                    "learning_rate": _num(exclusiveMinimum=0),
                    "optimizer": {"enum": ["adam", "sgd"]},
                    "baseline": {"type": "boolean"}}),
        "oct": _obj({"alpha": _num(exclusiveMinimum=0),
                     "iterations": {"type": "integer", "minimum": 0},
                     "n_steps": {"type": "integer", "minimum": 1},
                     "gradient": {"enum": [oct_mod.FULL, oct_mod.TOP]},
                     "backend": {"enum": ["heom", "isolated"]},
                     "snapshots": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                     "guess": _GUESS}),
        "run": _obj({"seed": {"type": "integer", "minimum": 0},
                     "out": {"type": "string"},
                     "experiment_id": {"type": "string"}}),
    }),
}

DEFAULTS = {
    "system": {},
    "baths": {"temperature_k": bath.ROOM_TEMPERATURE_K,
              "tuning": {"strength": bath.DEFAULT_TUNING_STRENGTH, "width": bath.DEFAULT_WIDTH},
              "coupling": {"strength": bath.DEFAULT_COUPLING_STRENGTH, "width": bath.DEFAULT_WIDTH},
              "include_matsubara": False, "n_matsubara": 0},
    "rates": {"values": list(lindblad.DEFAULT_RATES)},
    "heom": {"depth": 6, "step_limit": 0.05, "substeps": None, "trace_tol": 1e-5,
             "ado_cap": heom.DEFAULT_ADO_CAP},
    "simulate": {"backend": rl.ISOLATED, "picture": None, "initial": "ground",
                 "field": {"source": "constant", "area_y": model.PI_OVER_SQRT2,
                           "area_z": model.PI_OVER_SQRT2}},
    "decoherence": {"backend": "heom", "n_steps": 200, "resolution_tol": 0.05},
    "rl": {"backend": rl.ISOLATED, "action_mode": rl.ABSOLUTE, "low": 0.0, "high": 3.0,
           "n_steps": None, "picture": None,
           "guess": {"shape": "sine-squared", "area_y": model.PI_OVER_SQRT2,
                     "area_z": model.PI_OVER_SQRT2},
           "episodes": 100, "batch_size": 10, "learning_rate": 1e-3, "optimizer": "adam",
           "baseline": True},
    "oct": {"alpha": 2e-4, "iterations": 15, "n_steps": 400, "gradient": oct_mod.FULL,
            "backend": "heom", "snapshots": [],
            "guess": {"shape": "sine-squared", "area_y": model.PI_OVER_SQRT2,
                      "area_z": model.PI_OVER_SQRT2}},
    "run": {"seed": 0, "out": "runs", "experiment_id": "default"},
}


# config ------------------------------------------------------------------

def _line_of(text, path):
    """Best-effort line number of the JSON key at ``path`` in ``text``."""
    pos = 0
    line = None
    for key in path:
        if isinstance(key, int):
            continue
        i = text.find(f'"{key}"', pos)
        if i < 0:
            break
        pos = i
        line = text.count("\n", 0, i) + 1
    return line


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(text=None, path=None):
    """Parse, validate and fill defaults; errors carry line numbers where possible."""
    if text is None:
        if path is None:
            text = "{}"
        else:
            try:
                with open(path) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    where = path or "<config>"
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{where}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            p = list(e.absolute_path)
            if e.validator == "additionalProperties":
                extra = sorted(set(e.instance) - set(e.schema.get("properties", {})))
                p = p + extra[:1]
            line = _line_of(text, p)
            loc = f"{where}:{line}" if line else where
            key = "/".join(str(x) for x in p) or "<root>"
            msgs.append(f"{loc}: {key}: {e.message}")
        raise ConfigurationError("\n".join(msgs))
    cfg = _merge(DEFAULTS, raw)
    for block in ("simulate", "rl"):
        if cfg[block]["backend"] not in BACKENDS:
            line = _line_of(text, [block, "backend"])
            raise ConfigurationError(
                f"{where}:{line or '?'}: {block}/backend: unknown backend "
                f"{cfg[block]['backend']!r} (choose from {', '.join(BACKENDS)})")
    return cfg


def system_spec(cfg):
    return model.SystemSpec(**cfg["system"])


def _bath_terms(block):
    if "terms" in block:
        return bath.LorentzianParams(tuple(tuple(t) for t in block["terms"]))
    return bath.default_terms(block["strength"], block["width"])


def bath_specs(cfg):
    b = cfg["baths"]
    beta = model.beta_reduced(b["temperature_k"])
    kw = dict(include_matsubara=b["include_matsubara"], n_matsubara=b["n_matsubara"])
    return [bath.BathSpec(_bath_terms(b["tuning"]), beta, bath.tuning_operator(), bath.TUNING, **kw),
            bath.BathSpec(_bath_terms(b["coupling"]), beta, bath.coupling_operator(),
                          bath.COUPLING, **kw)]


def heom_config(cfg, spec=None):
    h = cfg["heom"]
    return heom.HeomConfig(depth=h["depth"], baths=bath_specs(cfg), spec=spec or system_spec(cfg),
                           step_limit=h["step_limit"], substeps=h["substeps"],
                           trace_tol=h["trace_tol"], ado_cap=h["ado_cap"])


def channels(cfg, constant_only=False):
    r = cfg["rates"]
    if "functions" in r and not constant_only:
        fns = [lindblad.RateFunction.from_dict(f) for f in r["functions"]]
        return [lindblad.CollapseChannel(op.copy(), fn, lab)
                for op, fn, lab in zip(lindblad.CHANNEL_OPS, fns, lindblad.CHANNEL_LABELS)]
    return lindblad.default_channels(tuple(r["values"]))


def _guess_field(block, n_steps, picture, spec, interpolation):
    ay, az = block["area_y"], block["area_z"]
    if block["shape"] == "constant":
        return model.ControlField.constant(ay, az, n_steps=n_steps, picture=picture, spec=spec,
                                           interpolation=interpolation)
    return model.ControlField.sine_squared(ay, az, n_steps=n_steps, picture=picture, spec=spec,
                                           interpolation=interpolation)


def read_field_csv(path, picture, spec):
    try:
        data = np.genfromtxt(path, delimiter=",", names=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot read field file {path}: {exc}") from exc
    if data.dtype.names is None or any(c not in data.dtype.names for c in FIELD_HEADER):
        raise ConfigurationError(f"field file {path} needs columns {', '.join(FIELD_HEADER)}")
    t = np.atleast_1d(data["t_reduced"])
    n = len(t) - 1
    if n < 1 or not np.allclose(t, np.linspace(0.0, 1.0, n + 1), atol=1e-9):
        raise DataError(f"field file {path} must sample a uniform grid on [0, 1]")
    kw = {}
    if picture == model.SCHRODINGER:
        kw = dict(omega_y=spec.omega_y, omega_z=spec.omega_z)
    return model.ControlField(t, np.atleast_1d(data["env_y"]), np.atleast_1d(data["env_z"]),
                              picture=picture, **kw)


def simulate_field(cfg, picture, spec):
    f = cfg["simulate"]["field"]
    src = f.get("source", "constant")
    n = f.get("n_steps", 100 if picture == model.SCHRODINGER else 50)
    if src == "file":
        if "path" not in f:
            raise ConfigurationError("simulate/field: the file source needs a path")
        return read_field_csv(f["path"], picture, spec)
    ay = f.get("area_y", model.PI_OVER_SQRT2)
    az = f.get("area_z", ay)
    if src == "zero":
        return model.ControlField.zeros(n_steps=n, picture=picture, spec=spec)
    if src == "constant":
        return model.ControlField.constant(ay, az, n_steps=n, picture=picture, spec=spec)
    return model.ControlField.sine_squared(ay, az, n_steps=n, picture=picture, spec=spec)


# output ------------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


class RunDir:
    """Output directory of one command; files are tracked for the manifest."""

    def __init__(self, root, experiment_id, command):
        self.path = os.path.join(root, experiment_id, command)
        os.makedirs(self.path, exist_ok=True)
        self.files = []

    def file(self, name):
        p = os.path.join(self.path, name)
        if name not in self.files:
            self.files.append(name)
        return p

    def write_csv(self, name, header, rows):
        with open(self.file(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])

    def write_json(self, name, obj):
        with open(self.file(name), "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_manifest(self, command, cfg, seed, started, status, extra=None):
        man = {
            "experiment_id": cfg["run"]["experiment_id"],
            "command": command,
            "config": cfg,
            "code_version": __version__,
            "seed": seed,
            "started": started,
            "finished": _now(),
            "status": status,
            "artifacts": [{"file": f, "sha256": _sha256(os.path.join(self.path, f))}
                          for f in sorted(self.files)],
        }
        if extra:
            man.update(extra)
        tmp = os.path.join(self.path, MANIFEST + ".tmp")
        with open(tmp, "w") as fh:
            json.dump(man, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")
        os.replace(tmp, os.path.join(self.path, MANIFEST))
        return man


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def field_rows(fld):
    return list(zip(fld.grid, fld.env_y, fld.env_z))


def _log(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr, flush=True)


# verbs -------------------------------------------------------------------

def cmd_simulate(cfg, args):
    spec = system_spec(cfg)
    s = cfg["simulate"]
    backend = s["backend"]
    picture = s["picture"] or (model.SCHRODINGER if backend == rl.HEOM else model.RWA)
    if backend == rl.HEOM and picture != model.SCHRODINGER:
        raise ConfigurationError("the heom backend runs in the Schrodinger picture")
    fld = simulate_field(cfg, picture, spec)
    i, j = INITIAL_STATES[s["initial"]]
    rho0 = model.projector(i, j)
    if backend == rl.HEOM:
        res = heom.propagate_heom(rho0, fld, heom_config(cfg, spec))
        times, states = res.times, res.rho
    elif backend == rl.ISOLATED:
        traj = model.propagate_isolated(rho0, fld, spec)
        times, states = traj.times, traj.states
    else:
        chans = channels(cfg, constant_only=backend == rl.LINDBLAD_CONST)
        if backend == rl.LINDBLAD_TD and "functions" not in cfg["rates"]:
            raise ConfigurationError("lindblad-td needs rates/functions (see the decoherence verb)")
        traj = lindblad.propagate_lindblad(rho0, fld, chans, spec)
        times, states = traj.times, traj.states
    out = RunDir(cfg["run"]["out"], cfg["run"]["experiment_id"], "simulate")
    out.write_csv("trajectory.csv", heom.TRAJECTORY_HEADER, heom.trajectory_rows(times, states))
    out.write_csv("field.csv", FIELD_HEADER, field_rows(fld))
    target = model.carrier_frame_target(spec=spec) if picture == model.SCHRODINGER else \
        model.target_state()
    fid = model.fidelity(states[-1], target)
    _log(args, f"final fidelity {fid:.6f}, |rho12| {abs(states[-1][1, 2]):.6f}")
    out.write_manifest("simulate", cfg, cfg["run"]["seed"], args.started, "ok",
                       {"final_fidelity": fid})
    return EXIT_OK


def cmd_fit_bath(cfg, args):
    specs = bath_specs(cfg)
    rows, exps, worst = [], [], 0.0
    for b in specs:
        exp = bath.expand_correlation(b)
        err, _ = bath.reconstruction_error(exp, b)
        exps.append(exp)
        worst = max(worst, err)
        rows.append((b.label, exp.n_modes, err, FIT_BATH_TOLERANCE, err <= FIT_BATH_TOLERANCE))
        _log(args, f"{b.label}: {exp.n_modes} modes, reconstruction error {err:.3e}")
    out = RunDir(cfg["run"]["out"], cfg["run"]["experiment_id"], "fit-bath")
    bath.write_expansion_csv(exps, out.file("expansion.csv"))
    out.write_csv("reconstruction.csv", ("bath", "n_modes", "error", "tolerance", "passed"), rows)
    ok = worst <= FIT_BATH_TOLERANCE
    out.write_manifest("fit-bath", cfg, cfg["run"]["seed"], args.started,
                       "ok" if ok else "threshold-failed", {"max_reconstruction_error": worst})
    if not ok:
        _log(args, f"reconstruction error {worst:.3e} exceeds {FIT_BATH_TOLERANCE:g}")
        return EXIT_THRESHOLD
    return EXIT_OK


def cmd_decoherence(cfg, args):
    spec = system_spec(cfg)
    d = cfg["decoherence"]
    n = d["n_steps"]
    times = np.linspace(0.0, 1.0, n + 1)
    h0 = model.build_h0(spec)
    if d["backend"] == "heom":
        times, maps = heom.basis_map(heom_config(cfg, spec), n_steps=n)
    else:
        maps = lindblad.basis_map_lindblad(channels(cfg, constant_only=True), times, h0)
    dm = lindblad.decoherence_matrix(maps, times, h0=h0, resolution_tol=d["resolution_tol"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", lindblad.FitQualityWarning)
        chans, fits = lindblad.fit_rate_functions(dm, targets=tuple(cfg["rates"]["values"]))
    for w in caught:
        _log(args, f"warning: {w.message}")
    out = RunDir(cfg["run"]["out"], cfg["run"]["experiment_id"], "decoherence")
    k = dm.D.shape[1]
    header = ["t"] + [f"{p}_d{i + 1}{j + 1}" for i in range(k) for j in range(k)
                      for p in ("re", "im")]
    rows = []
    for t, dd in zip(dm.times, dm.D):
        flat = []
        for v in dd.reshape(-1):
            flat += [v.real, v.imag]
        rows.append([t] + flat)
    out.write_csv("decoherence_matrix.csv", header, rows)
    out.write_csv("canonical_rates.csv",
                  ["t"] + [f"gamma_{i + 1}" for i in range(k)] + ["rate_sum"],
                  [[t, *ev, s] for t, ev, s in zip(dm.times, dm.canonical_rates, dm.rate_sum)])
    out.write_json("rate_functions.json", {
        "rates": {"values": list(cfg["rates"]["values"]),
                  "functions": [c.rate.to_dict() for c in chans]},
        "fits": {str(i): f.to_dict() for i, f in fits.items()},
    })
    neg = bool(np.any(dm.rate_sum < 0))
    _log(args, f"rate sum range [{dm.rate_sum.min():.4g}, {dm.rate_sum.max():.4g}]"
               f"{' (negative values: non-Markovian)' if neg else ''}")
    out.write_manifest("decoherence", cfg, cfg["run"]["seed"], args.started, "ok",
                       {"rate_sum_min": float(dm.rate_sum.min()), "rate_sum_negative": neg})
    return EXIT_OK


def rl_configs(cfg, seed):
    spec = system_spec(cfg)
    r = cfg["rl"]
    backend = r["backend"]
    picture = r["picture"] or (model.SCHRODINGER if backend == rl.HEOM else model.RWA)
    n_steps = r["n_steps"] or (100 if picture == model.SCHRODINGER else 50)
    guess = None
    if r["action_mode"] == rl.DELTA:
        guess = _guess_field(r["guess"], n_steps, picture, spec, "previous")
    kw = {}
    if backend in (rl.LINDBLAD_CONST, rl.LINDBLAD_TD):
        if backend == rl.LINDBLAD_TD and "functions" not in cfg["rates"]:
            raise ConfigurationError("lindblad-td needs rates/functions (see the decoherence verb)")
        kw["channels"] = channels(cfg, constant_only=backend == rl.LINDBLAD_CONST)
    if backend == rl.HEOM:
        kw["heom_config"] = heom_config(cfg, spec)
    env = rl.EnvConfig(backend=backend, n_steps=n_steps, action_mode=r["action_mode"],
                       low=r["low"], high=r["high"], guess=guess, spec=spec, picture=picture, **kw)
    tc = rl.TrainerConfig(learning_rate=r["learning_rate"], batch_size=r["batch_size"],
                          episodes=r["episodes"], seed=seed, baseline=r["baseline"],
                          optimizer=r["optimizer"])
    return env, tc


def cmd_train_rl(cfg, args):
    seed = cfg["run"]["seed"]
    env, tc = rl_configs(cfg, seed)
    out = RunDir(cfg["run"]["out"], cfg["run"]["experiment_id"], "train-rl")
    ck = os.path.join(out.path, "training_state.npz")
    hist = rl.train(env, tc, progress=lambda ep, r: _log(args, f"episode {ep + 1}: {r:.4f}"),
                    checkpoint_path=ck, resume=args.resume)
    out.file("training_state.npz")
    hist.write_csv(out.file("history.csv"))
    out.write_csv("trajectory_returns.csv",
                  ["episode"] + [f"member_{m + 1}" for m in range(tc.batch_size)],
                  [[i + 1, *r] for i, r in enumerate(hist.trajectory_returns)])
    with open(out.file("policy.bin"), "wb") as fh:
        fh.write(hist.policy.to_bytes())
    if hist.best_field is not None:
        out.write_csv("best_field.csv", FIELD_HEADER, field_rows(hist.best_field))
    out.write_csv("final_field.csv", FIELD_HEADER, field_rows(hist.final_field))
    _log(args, f"final return {hist.final_return:.4f}, best {hist.best_return:.4f}")
    out.write_manifest("train-rl", cfg, seed, args.started, "ok",
                       {"final_return": hist.final_return, "best_return": hist.best_return,
                        "final_areas": list(hist.final_field.areas()),
                        "skipped_updates": hist.skipped_updates})
    return EXIT_OK


def oct_config(cfg, spec=None):
    spec = spec or system_spec(cfg)
    o = cfg["oct"]
    if o["backend"] == "heom":
        hc = heom_config(cfg, spec)
    else:
        h = cfg["heom"]
        hc = oct_mod.isolated_config(spec, step_limit=h["step_limit"], substeps=h["substeps"])
    return oct_mod.OctConfig(alpha=o["alpha"], iterations=o["iterations"], heom_config=hc,
                             gradient=o["gradient"])


def cmd_run_oct(cfg, args):
    spec = system_spec(cfg)
    o = cfg["oct"]
    g = o["guess"]
    if g["shape"] == "constant":
        grid = np.linspace(0.0, 1.0, o["n_steps"] + 1)
        tm = grid + 0.5 / o["n_steps"]
        guess = oct_mod.raw_field(g["area_y"] * np.cos(spec.omega_y * tm),
                                  g["area_z"] * np.cos(spec.omega_z * tm), grid, spec)
    else:
        guess = oct_mod.sine_squared_guess(g["area_y"], g["area_z"], o["n_steps"], spec)
    oc = oct_config(cfg, spec)
    res = oct_mod.run_oct(guess, oc, progress=lambda k, f: _log(args, f"iteration {k + 1}: {f:.6f}"))
    out = RunDir(cfg["run"]["out"], cfg["run"]["experiment_id"], "run-oct")
    res.write_csv(out.file("iterations.csv"))
    snaps = sorted(set(o["snapshots"]) | {len(res.fields) - 1})
    for k in snaps:
        if k < len(res.fields):
            out.write_csv(f"field_iter{k:03d}.csv", OCT_FIELD_HEADER, field_rows(res.fields[k]))
    _log(args, f"fidelity {res.fidelities[0]:.4f} -> {res.fidelities[-1]:.4f}")
    out.write_manifest("run-oct", cfg, cfg["run"]["seed"], args.started, "ok",
                       {"alpha": oc.alpha, "final_fidelity": res.fidelities[-1],
                        "final_areas": list(res.areas[-1])})
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-bath": cmd_fit_bath,
    "decoherence": cmd_decoherence,
    "train-rl": cmd_train_rl,
    "run-oct": cmd_run_oct,
}


def build_parser():
    p = argparse.ArgumentParser(prog="vcontrol", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="workbench JSON config (defaults if omitted)")
        s.add_argument("--out", help="output root directory (overrides run/out)")
        s.add_argument("--seed", type=int, help="override run/seed")
        s.add_argument("--quiet", action="store_true", help="suppress progress output")
        if name == "train-rl":
            s.add_argument("--resume", action="store_true",
                           help="continue from training_state.npz in the run directory")
    sub.add_parser("schema", help="print the config JSON schema")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "schema":
        print(json.dumps(CONFIG_SCHEMA, indent=2))
        return EXIT_OK
    args.started = _now()
    try:
        cfg = load_config(path=args.config)
        if args.out is not None:
            cfg["run"]["out"] = args.out
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigurationError("--seed must be non-negative")
            cfg["run"]["seed"] = args.seed
        return COMMANDS[args.command](cfg, args)
    except (ConfigurationError, CapacityError, DataError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WorkbenchError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
