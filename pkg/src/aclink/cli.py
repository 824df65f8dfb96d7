"""Command-line front end: scenario runs, Bode sweeps, THD reports, sweeps.

Configuration files are INI style with a ``[scenario]`` section and a
``[params]`` section whose keys are :class:`ConverterParams` field names in
SI units.  Any key can be overridden by an environment variable
``ACLINK_<KEY>`` (case-insensitive).

Exit codes: 0 success, 2 configuration or input error, 3 simulation fault.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .circuit import NonFiniteState
from .params import PARAM_FIELDS, ConfigError, ConverterParams, coerce_field
from .sequencer import GuardTimeout
from .simulation import PRESETS, Scenario, preset, run, write_csv

log = logging.getLogger("aclink")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAULT = 3
ENV_PREFIX = "ACLINK_"
SCENARIO_KEYS = ("name", "preset", "fidelity", "damping", "schedule", "duration", "decimation")
BODE_SYSTEMS = ("gp", "gig", "loop", "hpf", "gi", "inner", "closed")
FIGURES = ("fig6", "fig7") + PRESETS[:-1]


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


def _env_overrides(environ) -> tuple[dict, dict]:
    params, scen = {}, {}
    by_upper = {f.upper(): f for f in PARAM_FIELDS}
    for key, value in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].upper()
        if name in by_upper:
            params[by_upper[name]] = value
        elif name.lower() in SCENARIO_KEYS:
            scen[name.lower()] = value
        else:
            raise ConfigError(f"{key}: unknown configuration key")
    return params, scen


def parse_schedule(text: str) -> tuple:
    """``"0:0:2, 0.05:0:4"`` -> ((0, 0, 2), (0.05, 0, 4)); ``"0:100"`` for v_out refs."""
    entries = []
    for chunk in text.replace(";", ",").split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            entries.append(tuple(float(v) for v in chunk.split(":")))
        except ValueError as exc:
            raise ConfigError(f"schedule entry {chunk!r} is not numeric") from exc
    if not entries:
        raise ConfigError("schedule is empty")
    return tuple(entries)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse {text!r} as a boolean")


def read_config(path: str | None, environ=None) -> tuple[dict, dict]:
    """Raw ``(scenario, params)`` key/value maps from file plus environment."""
    environ = os.environ if environ is None else environ
    scen: dict = {}
    params: dict = {}
    if path:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in cp.sections():
            if section not in ("scenario", "params"):
                raise ConfigError(f"{path}: unknown section [{section}]")
        if cp.has_section("scenario"):
            for k, v in cp.items("scenario"):
                if k not in SCENARIO_KEYS:
                    raise ConfigError(f"{path}: unknown scenario key {k!r}")
                scen[k] = v
        if cp.has_section("params"):
            params.update(cp.items("params"))
    env_p, env_s = _env_overrides(environ)
    params.update(env_p)
    scen.update(env_s)
    return scen, params


def build_params(raw: dict) -> ConverterParams:
    values = {k: coerce_field(k, v) for k, v in raw.items()}
    try:
        return ConverterParams(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def build_scenario(scen: dict, params: ConverterParams) -> Scenario:
    base = None
    if "preset" in scen:
        try:
            base = preset(scen["preset"].strip(), params)
        except KeyError as exc:
            raise ConfigError(f"unknown preset {scen['preset'].strip()!r}") from exc
        params = base.params
    kw = {
        "name": scen.get("name", base.name if base else "run").strip(),
        "params": params,
        "fidelity": scen.get("fidelity", base.fidelity if base else "switch").strip(),
        "damping": _parse_bool(scen["damping"]) if "damping" in scen else (base.damping if base else True),
        "schedule": parse_schedule(scen["schedule"]) if "schedule" in scen else (base.schedule if base else ((0.0, 0.0, 2.0),)),
    }
    try:
        kw["duration"] = float(scen["duration"]) if "duration" in scen else (base.duration if base else 0.2)
        if "decimation" in scen:
            kw["decimation"] = int(scen["decimation"])
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from exc
    return Scenario(**kw)


def load_scenario(path: str | None, environ=None) -> Scenario:
    scen, raw = read_config(path, environ)
    return build_scenario(scen, build_params(raw))


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------


def write_bode_csv(path, points) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("f,magnitude_db,phase_deg,pole_on_axis\n")
        for b in points:
            fh.write(f"{b.f!r},{b.magnitude_db!r},{b.phase_deg!r},{int(b.pole_on_axis)}\n")


def write_spectrum_csv(path, sp: analysis.Spectrum, f0: float, n: int) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("f,amplitude,harmonic\n")
        hi = int(math.floor((n + 0.5) * sp.periods))
        for j in range(1, min(hi, len(sp.freqs) - 1) + 1):
            h = j / sp.periods
            tag = str(int(h)) if j % sp.periods == 0 else ""
            fh.write(f"{float(sp.freqs[j])!r},{float(sp.amplitudes[j])!r},{tag}\n")


def read_waveform_column(path, column: str) -> tuple[np.ndarray, np.ndarray]:
    """Read ``t`` and one column from a waveform CSV, reporting bad lines."""
    ts, ys = [], []
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ConfigError(f"{path}: line 1: empty file")
        header = [h.strip() for h in header]
        if "t" not in header or column not in header:
            raise ConfigError(f"{path}: line 1: header needs columns 't' and {column!r}")
        it, iy = header.index("t"), header.index(column)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                ts.append(float(row[it]))
                ys.append(float(row[iy]))
            except ValueError as exc:
                raise ConfigError(f"{path}: line {lineno}: {exc}") from exc
    if len(ts) < 2:
        raise ConfigError(f"{path}: need at least two samples")
    return np.array(ts), np.array(ys)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_run(args) -> int:
    sc = load_scenario(args.config)
    res = run(sc)
    out = Path(args.out) if args.out else Path(f"{sc.name}.csv")
    write_csv(out, res.waveform)
    for line in res.report.lines():
        print(line)
    print(f"waveform            {out}")
    return EXIT_OK


def cmd_bode(args) -> int:
    _, raw = read_config(args.config)
    params = build_params(raw)
    systems = analysis.table_systems(params)
    tf = systems[args.system]
    pts = analysis.bode(tf, args.f_min, args.f_max, args.n)
    out = Path(args.out) if args.out else Path(f"bode_{args.system}.csv")
    write_bode_csv(out, pts)
    best = max((b for b in pts if not b.pole_on_axis), key=lambda b: b.magnitude_db, default=None)
    print(f"system {args.system}: {len(pts)} points -> {out}")
    if best is not None:
        print(f"max {best.magnitude_db:.3f} dB at {best.f:.2f} Hz")
    return EXIT_OK


def cmd_thd(args) -> int:
    t, y = read_waveform_column(args.file, args.column)
    fs = (len(t) - 1) / (t[-1] - t[0])
    m = whole_period_window(len(y), fs, args.f0, args.cycles)
    y = y[-m:]
    try:
        rep = analysis.thd_report(y, fs, args.f0, args.n)
    except (analysis.NoFundamental, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    sp = analysis.spectrum(y, fs, args.f0)
    print(f"THD {rep.thd:.4f} %  (harmonic {rep.harmonic_thd:.4f} %, interharmonic {rep.interharmonic:.4f} %)")
    print(f"fundamental {rep.fundamental:.6g}")
    if args.out:
        write_spectrum_csv(args.out, sp, args.f0, args.n)
        print(f"spectrum -> {args.out}")
    return EXIT_OK


def whole_period_window(n_samples: int, fs: float, f0: float, cycles: int = 0) -> int:
    """Largest tail length spanning a whole number of periods (at most ``cycles``)."""
    k = int(math.floor(n_samples * f0 / fs + 1e-9))
    if cycles:
        k = min(k, cycles)
    per = fs / f0
    for j in range(k, 0, -1):
        m = j * per
        if abs(m - round(m)) <= 1e-6 * m:
            return int(round(m))
    raise ConfigError("record holds no whole number of fundamental periods at this sample rate")


def _sweep_one(job):
    value, sc = job
    if isinstance(sc, Exception):
        return value, f"{type(sc).__name__}: {sc}", None
    try:
        return value, "ok", run(sc).report
    except (GuardTimeout, NonFiniteState) as exc:
        return value, f"{type(exc).__name__}: {exc}", None


def sweep_scenario(base: Scenario, param: str, value: float) -> Scenario:
    """``base`` with one parameter changed; ``xi`` is mapped to ``k_damp``."""
    if param == "xi":
        k = analysis.damping_gain(value, base.params.L_f, base.params.C_f)
        params = base.params.replace(k_damp=k)
    elif param in PARAM_FIELDS:
        params = base.params.replace(**{param: value})
    else:
        raise ConfigError(f"unknown parameter {param!r}")
    return Scenario(f"{base.name}-{param}={value:g}", params, base.fidelity, base.damping,
                    base.schedule, base.duration, base.decimation)


def parse_values(text: str) -> list[float]:
    try:
        return sorted(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"--values: {exc}") from exc


def run_sweep(base: Scenario, param: str, values, jobs: int = 1) -> list:
    """``(value, status, report | None)`` rows sorted by value."""
    if param != "xi" and param not in PARAM_FIELDS:
        raise ConfigError(f"unknown parameter {param!r}")
    work = []
    for v in sorted(values):
        try:
            work.append((v, sweep_scenario(base, param, v)))
        except (ConfigError, ValueError) as exc:
            work.append((v, exc))
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_one, work))
    else:
        rows = [_sweep_one(w) for w in work]
    return sorted(rows, key=lambda r: r[0])


def cmd_sweep(args) -> int:
    base = load_scenario(args.config)
    rows = run_sweep(base, args.param, parse_values(args.values), args.jobs)
    print(f"{args.param:>12} {'thd_a%':>9} {'thd_b%':>9} {'thd_c%':>9} {'pf':>8} {'zvs_V':>10} {'q_err':>9}  status")
    for v, status, rep in rows:
        if rep is None:
            print(f"{v:12.6g} {'':>9} {'':>9} {'':>9} {'':>8} {'':>10} {'':>9}  {status}")
        else:
            c = rep.cycles
            print(f"{v:12.6g} {rep.thd[0]:9.3f} {rep.thd[1]:9.3f} {rep.thd[2]:9.3f} {rep.power_factor:8.5f} "
                  f"{c.zvs_worst:10.3g} {c.charge_error_worst:9.2e}  {status}")
    return EXIT_OK


def cmd_figure(args) -> int:
    _, raw = read_config(args.config)
    params = build_params(raw)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = args.name
    if name in ("fig6", "fig7"):
        systems = analysis.table_systems(params)
        keys = ("gp", "gig") if name == "fig6" else ("loop", "inner")
        for key in keys:
            path = out / f"{name}_{key}.csv"
            write_bode_csv(path, analysis.bode(systems[key], 10.0, 1e5, 2000))
            print(f"{key} -> {path}")
        return EXIT_OK
    sc = preset(name, params)
    res = run(sc)
    path = out / f"{name}.csv"
    write_csv(path, res.waveform)
    for line in res.report.lines():
        print(line)
    if name in ("fig9", "fig11"):
        w = res.waveform.last_cycles(6, params.f_grid)
        sp = analysis.spectrum(w.i_grid[:, 0], w.fs, params.f_grid)
        spath = out / f"{name}_spectrum.csv"
        write_spectrum_csv(spath, sp, params.f_grid, 50)
        print(f"spectrum -> {spath}")
    print(f"waveform -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aclink", description="AC-link rectifier simulator and control toolbox")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write its waveform CSV")
    p.add_argument("config", help="INI configuration file")
    p.add_argument("-o", "--out", help="waveform CSV path (default <name>.csv)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bode", help="frequency response of one of the design systems")
    p.add_argument("system", choices=BODE_SYSTEMS)
    p.add_argument("config", nargs="?", help="INI configuration file (defaults if omitted)")
    p.add_argument("--f-min", type=float, default=10.0)
    p.add_argument("--f-max", type=float, default=1e5)
    p.add_argument("--n", type=int, default=4001)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_bode)

    p = sub.add_parser("thd", help="THD and spectrum of one waveform column")
    p.add_argument("file")
    p.add_argument("--f0", type=float, default=60.0, help="fundamental frequency [Hz]")
    p.add_argument("--n", type=int, default=50, help="highest harmonic included")
    p.add_argument("--column", default="ia")
    p.add_argument("--cycles", type=int, default=6, help="analyse the last N periods (0 = all)")
    p.add_argument("-o", "--out", help="spectrum CSV path")
    p.set_defaults(func=cmd_thd)

    p = sub.add_parser("sweep", help="run a scenario for several values of one parameter")
    p.add_argument("config")
    p.add_argument("--param", required=True, help="ConverterParams field, or 'xi' for the damping ratio")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("figure", help="reproduce one figure's data set")
    p.add_argument("name", choices=FIGURES)
    p.add_argument("config", nargs="?")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_figure)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GuardTimeout, NonFiniteState) as exc:
        print(f"simulation fault at t = {exc.t:.9g} s: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
