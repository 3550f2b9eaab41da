"""Command-line front end.

Every run is described by a flat JSON config.  Values come from the
subcommand defaults, then ``--config FILE``, then explicit flags.  The
digest of the resolved config and the seed go into every output: CSV
outputs start with a ``#`` provenance line, JSON-lines records carry
them as fields.  Outputs contain no timestamps, so reruns are
byte-identical.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 acceptance failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import fractal, kernel, occupation, pipelines
from .simulate import FactorizationError, GridSpec, load_field, sample_field, save_field

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ACCEPTANCE = 4

THREADS_ENV = "STRINGLAB_THREADS"


class ConfigError(ValueError):
    pass


class AcceptanceFailure(RuntimeError):
    pass


GRID_KEYS = ("t_min", "t_max", "x_min", "x_max", "n_t", "n_x")

DEFAULTS = {
    "kernel": {"x_grid": [0.0, 0.5, 1.0, 2.0, 5.0, 10.0], "mode": "closed_form"},
    "simulate": {"t_min": 0.0, "t_max": 1.0, "x_min": 0.0, "x_max": 1.0, "n_t": 32, "n_x": 32,
                 "d": 1, "seed": 0, "replica": 0, "output": None},
    "dims": {"d_max": 13},
    "estimate": {"pipeline": "level", "t_min": 0.0, "t_max": 1.0, "x_min": 0.0, "x_max": 1.0,
                 "n_t": 64, "n_x": 128, "d": 1, "seed": 0, "replicas": 20, "kappa": 1.0,
                 "u": None, "scales": None, "separation": None, "tolerance": 0.25,
                 "threads": None, "output": None},
    "lnd-check": {"lemmas": ["L13", "L14", "L15"], "epsilon": 0.2, "L": 0.3, "h0": 0.01,
                  "samples": 10000, "seed": 0, "necessity_factor": 10.0, "output": None},
    "localtime": {"field": None, "u": [0.0], "n": 1000.0, "region": None, "output": None},
    "energy": {"gammas": [2.0, 4.0, 5.5, 8.0], "resolutions": [32, 64, 128], "output": None},
}

TYPES = {
    "x_grid": "floats", "mode": str, "t_min": float, "t_max": float, "x_min": float, "x_max": float,
    "n_t": int, "n_x": int, "d": int, "seed": int, "replica": int, "output": str, "d_max": int,
    "pipeline": str, "replicas": int, "kappa": float, "u": "floats", "scales": "floats",
    "separation": float, "tolerance": float, "threads": int, "lemmas": "strs", "epsilon": float,
    "L": float, "h0": float, "samples": int, "necessity_factor": float, "field": str, "n": float,
    "region": "floats", "gammas": "floats", "resolutions": "ints",
}


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

def _coerce(key, value):
    kind = TYPES[key]
    if value is None:
        return None
    try:
        if kind == "floats":
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            return [float(v) for v in value]
        if kind == "ints":
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            return [int(v) for v in value]
        if kind == "strs":
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            return [str(v) for v in value]
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field '{key}': cannot interpret {value!r}") from exc


def resolve_config(command: str, file_values: dict, flag_values: dict) -> dict:
    base = dict(DEFAULTS[command])
    for source in (file_values, flag_values):
        for key, value in source.items():
            if key not in base:
                raise ConfigError(f"field '{key}' is not valid for '{command}'")
            base[key] = _coerce(key, value)
    if command == "estimate" and base["threads"] is None:
        env = os.environ.get(THREADS_ENV)
        base["threads"] = _coerce("threads", env) if env else 1
    cfg = {"command": command, **base}
    _validate(cfg)
    return cfg


def _validate(cfg: dict):
    cmd = cfg["command"]
    if cmd in ("simulate", "estimate"):
        try:
            GridSpec(*(cfg[k] for k in GRID_KEYS))
        except ValueError as exc:
            raise ConfigError(f"field 'grid': {exc}") from exc
        if cfg["d"] < 1:
            raise ConfigError("field 'd': must be >= 1")
    if cmd == "kernel" and cfg["mode"] not in [m.value for m in kernel.KernelMode]:
        raise ConfigError(f"field 'mode': unknown mode {cfg['mode']!r}")
    if cmd == "estimate":
        try:
            pipelines.Pipeline(cfg["pipeline"])
        except ValueError:
            names = ", ".join(p.value for p in pipelines.Pipeline)
            raise ConfigError(f"field 'pipeline': {cfg['pipeline']!r} is not one of {names}") from None
        if cfg["replicas"] < 1:
            raise ConfigError("field 'replicas': must be >= 1")
        if cfg["kappa"] <= 0:
            raise ConfigError("field 'kappa': must be positive")
        if cfg["threads"] < 1:
            raise ConfigError("field 'threads': must be >= 1")
        if cfg["scales"] is not None and (len(cfg["scales"]) < 4 or min(cfg["scales"]) <= 0):
            raise ConfigError("field 'scales': need at least 4 positive scales")
    if cmd == "dims" and cfg["d_max"] < 1:
        raise ConfigError("field 'd_max': must be >= 1")
    if cmd == "lnd-check":
        for name in cfg["lemmas"]:
            if name not in [m.value for m in kernel.Lemma]:
                raise ConfigError(f"field 'lemmas': unknown lemma {name!r}")
        if not 0 < cfg["epsilon"] < 1:
            raise ConfigError("field 'epsilon': must lie in (0, 1)")
        if cfg["samples"] < 1:
            raise ConfigError("field 'samples': must be >= 1")
    if cmd == "localtime":
        if not cfg["field"]:
            raise ConfigError("field 'field': a field CSV path is required")
        if cfg["n"] <= 0:
            raise ConfigError("field 'n': must be positive")
        if cfg["region"] is not None and len(cfg["region"]) != 4:
            raise ConfigError("field 'region': expected t_min,t_max,x_min,x_max")
    if cmd == "energy":
        if any(g <= 0 for g in cfg["gammas"]):
            raise ConfigError("field 'gammas': values must be positive")
        if any(r < 1 for r in cfg["resolutions"]):
            raise ConfigError("field 'resolutions': values must be positive")


def config_digest(cfg: dict) -> str:
    # the output path does not change results, so it stays out of the digest
    body = {k: v for k, v in cfg.items() if k != "output"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _provenance(cfg: dict) -> str:
    return f"# stringlab {cfg['command']} config_digest={config_digest(cfg)} seed={cfg.get('seed', 'none')}\n"


def _csv(cfg: dict, header, rows) -> str:
    buf = io.StringIO()
    buf.write(_provenance(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True, default=_json_default) + "\n" for r in records)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _emit(text: str, output):
    if output:
        Path(output).write_text(text, newline="")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_kernel(cfg: dict) -> int:
    kc = kernel.KernelConfig(mode=kernel.KernelMode(cfg["mode"]))
    xs = np.asarray(cfg["x_grid"], dtype=float)
    if not np.all(np.isfinite(xs)):
        raise ConfigError("field 'x_grid': values must be finite")
    rows = [(x, float(kernel.h_func(x, kc)), float(kernel.f_func(x, kc)), float(kernel.h_tail(abs(x))))
            for x in xs]
    _emit(_csv(cfg, ["x", "H", "F", "h_tail"], rows), None)
    return EXIT_OK


def cmd_simulate(cfg: dict) -> int:
    if not cfg["output"]:
        raise ConfigError("field 'output': simulate needs an output path")
    grid = GridSpec(*(cfg[k] for k in GRID_KEYS))
    sample = sample_field(grid, cfg["d"], cfg["seed"], cfg["replica"])
    meta_path = save_field(sample, cfg["output"])
    meta = json.loads(meta_path.read_text())
    meta["config_digest"] = config_digest(cfg)
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(_jsonl([{"config_digest": config_digest(cfg), "seed": cfg["seed"],
                              "output": str(cfg["output"]), "jitter_used": sample.jitter_used}]))
    return EXIT_OK


def dims_rows(d_max: int = 13) -> list:
    return [(r["d"], r["range"], r["graph"], r["level"], r["double_I"], r["double_II"])
            for r in fractal.theory_table(range(1, d_max + 1))]


def _fmt_dim(v):
    if v is fractal.EMPTY:
        return "EMPTY"
    return f"{v:g}"


def cmd_dims(cfg: dict) -> int:
    rows = [[d] + [_fmt_dim(v) for v in vals] for d, *vals in dims_rows(cfg["d_max"])]
    _emit(_csv(cfg, ["d", "range", "graph", "level", "double_I", "double_II"], rows), None)
    return EXIT_OK


def cmd_estimate(cfg: dict) -> int:
    s = pipelines.EstimateSettings(
        pipeline=pipelines.Pipeline(cfg["pipeline"]),
        grid=GridSpec(*(cfg[k] for k in GRID_KEYS)), d=cfg["d"], seed=cfg["seed"],
        replicas=cfg["replicas"], kappa=cfg["kappa"], u=cfg["u"], scales=cfg["scales"],
        separation=cfg["separation"], tolerance=cfg["tolerance"], workers=cfg["threads"],
    )
    try:
        results, agg = pipelines.run_estimate(s)
    except fractal.NoAdmissiblePairsError as exc:
        raise ConfigError(f"field 'separation': {exc}") from exc
    digest = config_digest(cfg)
    records = [{"config_digest": digest, **r.as_dict()} for r in results]
    records.append({"config_digest": digest, "seed": cfg["seed"], **agg.as_dict()})
    _emit(_jsonl(records), cfg["output"])
    if agg.used == 0 and agg.target is not fractal.EMPTY:
        return EXIT_NUMERIC
    return EXIT_ACCEPTANCE if agg.passed is False else EXIT_OK


def cmd_lnd_check(cfg: dict) -> int:
    digest = config_digest(cfg)
    records, ok = [], True
    for name in cfg["lemmas"]:
        lemma = kernel.Lemma(name)
        kw = {"h0": cfg["h0"]} if lemma is kernel.Lemma.L15 else {}
        res = kernel.lnd_ratio_scan(lemma, cfg["epsilon"], cfg["L"], cfg["samples"], cfg["seed"], **kw)
        ok &= res.min_ratio > 0
        records.append({"config_digest": digest, "seed": cfg["seed"], **res.summary()})
        if lemma is kernel.Lemma.L15:
            free = kernel.lnd_ratio_scan(lemma, cfg["epsilon"], cfg["L"], cfg["samples"], cfg["seed"], h0=None)
            gap = res.min_ratio / free.min_ratio if free.min_ratio > 0 else math.inf
            probe_ok = gap >= cfg["necessity_factor"]
            ok &= probe_ok
            records.append({"config_digest": digest, "seed": cfg["seed"], "probe": "L15-unrestricted",
                            **free.summary(), "gap": gap, "required_gap": cfg["necessity_factor"],
                            "pass": probe_ok})
    _emit(_jsonl(records), cfg["output"])
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def cmd_localtime(cfg: dict) -> int:
    path = Path(cfg["field"])
    if not path.exists():
        raise ConfigError(f"field 'field': {path} does not exist")
    try:
        f = load_field(path)
    except (KeyError, ValueError, FileNotFoundError) as exc:
        raise ConfigError(f"field 'field': {exc}") from exc
    region = occupation.Region(*cfg["region"]) if cfg["region"] else None
    u = cfg["u"]
    if len(u) % f.d:
        raise ConfigError(f"field 'u': length must be a multiple of d = {f.d}")
    try:
        points = np.asarray(u).reshape(-1, f.d)
        rows = []
        for p in points:
            est = occupation.local_time_at(f, region, p, cfg["n"])
            rows.append((";".join(repr(v) for v in est.u), est.n, est.value))
    except ValueError as exc:
        raise ConfigError(f"field 'region': {exc}") from exc
    c = dict(cfg, seed=f.seed)
    _emit(_csv(c, ["u", "n", "estimate"], rows), cfg["output"])
    return EXIT_OK


def cmd_energy(cfg: dict) -> int:
    rows = [(g, r, occupation.energy_integral(g, r)) for g in cfg["gammas"] for r in cfg["resolutions"]]
    _emit(_csv(cfg, ["gamma", "resolution", "value"], rows), cfg["output"])
    return EXIT_OK


COMMANDS = {"kernel": cmd_kernel, "simulate": cmd_simulate, "dims": cmd_dims,
            "estimate": cmd_estimate, "lnd-check": cmd_lnd_check, "localtime": cmd_localtime,
            "energy": cmd_energy}


# ---------------------------------------------------------------------------
# Self-check: fast kernel identities
# ---------------------------------------------------------------------------

def self_check() -> list[tuple[str, bool, str]]:
    out = []
    xs = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0]
    diff = max(abs(float(kernel.f_func(x)) - float(kernel.f_func(x, kernel.QUADRATURE_CONFIG))) for x in xs)
    out.append(("closed form vs quadrature", diff <= 1e-8, f"max diff {diff:.2e}"))
    fmin = float(np.min(kernel.f_func(np.linspace(0, 20, 2001))))
    out.append(("F lower bound", fmin >= kernel.INV_SQRT_2PI, f"min F {fmin:.6f}"))
    tail = kernel.h_tail(np.linspace(0, 10, 1001))
    ok = bool(np.all(np.diff(tail) <= 0) and tail[-1] <= 1e-6)
    out.append(("h_tail decay", ok, f"h_tail(10) {tail[-1]:.2e}"))
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        t, x, s, y = rng.uniform(0, 1, 4)
        for c in (0.5, 2.0, 3.0):
            ref = max(1.0, c * c * kernel.gamma((t, x), (s, y)))
            worst = max(worst, kernel.scaling_check((t, x), (s, y), c) / ref)
    out.append(("scaling identity", worst <= 1e-12, f"max rel {worst:.1e}"))
    return out


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


HELP = {
    "x_grid": "comma-separated x values", "mode": "closed_form or quadrature",
    "pipeline": "level, range, graph, space-slice, time-slice, double-I, double-II",
    "u": "comma-separated value-space point(s)", "scales": "comma-separated box sizes",
    "separation": "L for double-I, spatial separation for double-II",
    "threads": f"worker threads (default from ${THREADS_ENV}, else 1)",
    "lemmas": "comma-separated subset of L13,L14,L15", "region": "t_min,t_max,x_min,x_max",
    "field": "field CSV written by 'simulate'", "n": "kernel precision",
    "necessity_factor": "required gap between restricted and unrestricted L15 scans",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stringlab", description=__doc__.splitlines()[0])
    parser.add_argument("--self-check", action="store_true",
                        help="run the fast kernel identity checks first; abort on failure")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with any of this command's fields")
        for key, default in defaults.items():
            p.add_argument(_flag(key), dest=key, default=argparse.SUPPRESS,
                           help=f"{HELP.get(key, key)} (default: {default})")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    do_check = args.pop("self_check")
    config_path = args.pop("config", None)
    try:
        file_values = {}
        if config_path:
            try:
                file_values = json.loads(Path(config_path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"config file {config_path}: {exc}") from exc
            if not isinstance(file_values, dict):
                raise ConfigError(f"config file {config_path}: expected a JSON object")
            file_values.pop("command", None)
        cfg = resolve_config(command, file_values, args)
        if do_check:
            results = self_check()
            for label, ok, detail in results:
                print(f"self-check {label}: {'pass' if ok else 'FAIL'} ({detail})", file=sys.stderr)
            if not all(ok for _, ok, _ in results):
                return EXIT_ACCEPTANCE
        return COMMANDS[command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FactorizationError, FloatingPointError, np.linalg.LinAlgError, fractal.TooFewScalesError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
