"""Batch command-line front end.

Configuration is an INI-style text file (sections of key = value lines)::

    [map]
    kind = pm            ; pm | lsv | doubling | custom
    alpha = 0.5
    ; custom maps: one branch row "a b k s c q beta side" per line
    ; branches =
    ;     0 0.5 0 2 0 0 0 1
    ;     0.5 1 -1 2 0 0 0 1

    [run]
    seed = 1
    eps = 0.001
    samples = 1000000
    horizon = 4096
    grid = 4096
    threads = 1

    [tail]
    quantity = escape    ; escape | mK | mV
    radius = 0.1
    K = 4
    delta = 0.05

Exit codes: 0 success (trend criteria outcomes are data), 1 computation or
validation failure, 2 configuration error.
"""

import argparse
import configparser
import datetime as _dt
import os
import platform
import sys
import time

import numba
import numpy as np
import scipy

from . import __version__, experiments, maps, rds, returns, transfer
from ._philox import numpy_generator
from .errors import ConfigError, IntermittencyError, MapDefinitionError
from .svg import line_chart

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


# ---------------------------------------------------------------- config


def read_config(path):
    if path is None:
        return configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_string(fh.read(), source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cp


def map_from_config(cp):
    if not cp.has_section("map"):
        raise ConfigError("config has no [map] section")
    sec = cp["map"]
    if "file" in sec:
        return maps.load_map(sec["file"])
    lines = [f"kind = {sec.get('kind', '')}"]
    if "alpha" in sec:
        lines.append(f"alpha = {sec['alpha']}")
    for row in sec.get("branches", "").splitlines():
        if row.strip():
            lines.append(f"branch = {row.strip()}")
    return maps.parse_map_text("\n".join(lines))


def _get(cp, section, key, conv, default=None, required=False):
    if cp.has_section(section) and key in cp[section]:
        raw = cp[section][key]
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None
    if required:
        raise ConfigError(f"[{section}] {key} is required")
    return default


def _floats(s):
    return tuple(float(v) for v in s.replace(",", " ").split())


class Settings:
    """Merged view of config file and command-line overrides."""

    def __init__(self, args, cp):
        self.cp = cp
        self.seed = args.seed if args.seed is not None else _get(cp, "run", "seed", int)
        eps = _floats(args.eps) if args.eps else _get(cp, "run", "eps", _floats, (0.0,))
        if any(not (0.0 <= e <= rds.EPS_MAX) for e in eps):
            raise ConfigError(f"eps values must lie in [0, {rds.EPS_MAX}]")
        self.eps = eps
        self.samples = _get(cp, "run", "samples", int, 100_000)
        self.horizon = _get(cp, "run", "horizon", int, 4096)
        self.grid = args.grid if args.grid else _get(cp, "run", "grid", int, 4096)
        self.threads = args.threads if args.threads else _get(cp, "run", "threads", int, 1)
        self.out = args.out

    def need_seed(self):
        if self.seed is None:
            raise ConfigError("no seed given (config [run] seed or --seed); refusing to use "
                              "ambient randomness")
        return self.seed

    def get(self, section, key, conv, default=None, required=False):
        return _get(self.cp, section, key, conv, default, required)


# ---------------------------------------------------------------- outputs


class Outputs:
    """Collects written files; the manifest is written last, atomically."""

    def __init__(self, out_dir):
        self.dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.files = []
        self.started = _dt.datetime.now(_dt.timezone.utc)
        self.t0 = time.perf_counter()

    def write(self, name, text):
        path = os.path.join(self.dir, name)
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
        self.files.append(path)
        return path

    def write_bytes_of(self, name, writer, obj):
        path = os.path.join(self.dir, name)
        writer(path, obj)
        self.files.append(path)
        return path

    def manifest(self, config_lines, results=None):
        end = _dt.datetime.now(_dt.timezone.utc)
        lines = list(config_lines)
        lines += [
            f"artifact_version={__version__}",
            f"python={platform.python_version()}",
            f"numpy={np.__version__}",
            f"scipy={scipy.__version__}",
            f"numba={numba.__version__}",
            f"start={self.started.isoformat()}",
            f"end={end.isoformat()}",
            f"wall_seconds={time.perf_counter() - self.t0:.3f}",
        ]
        for k, v in (results or {}).items():
            lines.append(f"result.{k}={_fmt(v)}")
        for i, p in enumerate(self.files):
            lines.append(f"output.{i}={os.path.basename(p)}")
        path = os.path.join(self.dir, "manifest.txt")
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
        return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ---------------------------------------------------------------- commands


def cmd_validate_map(args, st):
    f = map_from_config(st.cp)
    out = Outputs(st.out)
    rep = maps.validate_class(f)
    text = "\n".join(rep.lines()) + "\n"
    sys.stdout.write(text)
    out.write("validation.txt", text)
    cfg = ["command=validate-map"] + _map_lines(f)
    out.manifest(cfg, {"valid": rep.ok, "failures": len(rep.failures())})
    return EXIT_OK if rep.ok else EXIT_FAIL


def _map_lines(f):
    return [f"map.{ln.split('=', 1)[0].strip()}={ln.split('=', 1)[1].strip()}"
            for ln in experiments.map_source(f).strip().splitlines()]


def cmd_simulate(args, st):
    f = map_from_config(st.cp)
    seed = st.need_seed()
    eps = st.eps[0]
    n = st.get("simulate", "steps", int, 1000)
    x0 = st.get("simulate", "x0", float, None)
    if x0 is None:
        x0 = float(numpy_generator(seed, 0, 1 << 32).random())
    out = Outputs(st.out)
    ts = rds.sample_noise(eps, n, seed)
    orb = rds.orbit(f, x0, ts)
    rows = ["step,x,t,Df"]
    for i in range(n + 1):
        t = ts.values[i] if i < n else 0.0
        d = orb.step_derivs_right[i] if i < n else float("nan")
        rows.append(f"{i},{float(orb.points[i])!r},{float(t)!r},{float(d)!r}")
    out.write("orbit.csv", "\n".join(rows) + "\n")
    out.write_bytes_of("noise.bin", rds.write_noise, ts)
    out.write("orbit.svg", line_chart([("x_n", range(n + 1), orb.points)],
                                      "random orbit", "n", "x"))
    cfg = ["command=simulate"] + _map_lines(f) + [f"seed={seed}", f"eps={eps!r}",
                                                  f"steps={n}", f"x0={x0!r}"]
    out.manifest(cfg, {"log_cocycle": float(orb.log_cocycle[-1])})
    return EXIT_OK


def cmd_ulam(args, st):
    f = map_from_config(st.cp)
    eps = st.eps[0]
    tol = st.get("ulam", "tol", float, 1e-12)
    graded = st.get("ulam", "graded", int, 1)
    out = Outputs(st.out)
    grid = transfer.default_grid(f, st.grid) if graded else transfer.Grid.uniform(st.grid)
    A = transfer.annealed_build(f, grid, eps)
    rho = transfer.stationary(A, tol)
    out.write("stationary.csv", transfer.density_csv(rho))
    out.write_bytes_of("stationary.bin", transfer.write_binary, rho)
    if st.get("ulam", "save_matrix", int, 0):
        out.write_bytes_of("matrix.bin", transfer.write_binary, A)
    out.write("stationary.svg", line_chart(
        [("density", grid.centers, rho.values)], f"stationary density, eps={eps:g}", "x",
        "density", logy=True))
    cfg = ["command=ulam"] + _map_lines(f) + [f"eps={eps!r}", f"grid_N={st.grid}",
                                              f"graded={graded}", f"tol={tol!r}"]
    out.manifest(cfg, {"iterations": rho.iterations, "residual": rho.residual})
    return EXIT_OK


def _tail_config(st, f):
    q = st.get("tail", "quantity", str, "escape")
    seed = st.need_seed()
    eps = st.eps[0]
    radius = st.get("tail", "radius", float, 0.1)
    base = dict(map_text=experiments.map_source(f), eps=(eps,), samples=st.samples,
                horizon=st.horizon, seed=seed, threads=st.threads)
    points = st.get("tail", "points", int, 64)
    wlo = st.get("tail", "window_lo", int, 16)
    whi = st.get("tail", "window_hi", int, st.horizon)
    common = (("points", points), ("window_lo", wlo), ("window_hi", whi))
    if q == "escape":
        return experiments.ExperimentConfig("tail_escape", params=(("radius", radius),) + common,
                                            **base)
    if q == "mK":
        I = returns.build_I(f, eps, radius)
        K = st.get("tail", "K", float, required=True)
        ab = experiments.alpha_bar(f.alpha, st.get("tail", "alpha_bar", float))
        return experiments.ExperimentConfig(
            "tail_mK", params=(("K", K), ("radius", radius), ("tau", returns.tau_star(f, I)),
                               ("probes", 33), ("alpha_bar", ab)) + common, **base)
    if q == "mV":
        ab = experiments.alpha_bar(f.alpha, st.get("tail", "alpha_bar", float))
        I = returns.build_I(f, eps, radius)
        return experiments.ExperimentConfig(
            "tail_mV", params=(("delta", st.get("tail", "delta", float, 0.05)),
                               ("tau", returns.tau_star(f, I)),
                               ("lambda", returns.lambda_star(f, I)), ("probes", 33),
                               ("alpha_bar", ab), ("nice_horizon", 200)) + common, **base)
    raise ConfigError(f"[tail] quantity must be escape, mK or mV, not {q!r}")


def _write_report(out, rep, name):
    cfg = rep.config
    if isinstance(rep, experiments.TailReport):
        out.write(f"{name}.csv", rep.csv())
        out.write(f"{name}.svg", line_chart(
            [(f"P({rep.kind} >= m)", rep.m_grid, rep.survival),
             ("wilson low", rep.m_grid, rep.lower), ("wilson high", rep.m_grid, rep.upper)],
            f"{rep.kind} survival, eps={cfg.eps[0]:g}", "m", "survival", logx=True, logy=True))
    elif isinstance(rep, experiments.StabilityReport):
        out.write(f"{name}.csv", rep.csv())
        out.write(f"{name}.svg", line_chart(
            [("l1(N)", rep.eps_grid, rep.l1_curve), ("l1(2N)", rep.eps_grid, rep.l1_refined)],
            "L1 distance to the invariant density", "eps", "L1"))
    elif isinstance(rep, experiments.BirkhoffReport):
        out.write(f"{name}.csv", rep.csv())
        out.write(f"{name}_density.csv", transfer.density_csv(rep.stationary))
        out.write(f"{name}.svg", line_chart(
            [("ulam", rep.stationary.grid.centers, rep.stationary.values),
             ("histogram", rep.histogram.grid.centers, rep.histogram.values)],
            f"stationary density, eps={rep.eps:g}", "x", "density", logy=True))
    elif isinstance(rep, experiments.BadsetReport):
        out.write(f"{name}_omega.csv", rep.csv_omega())
        out.write(f"{name}_bad.csv", rep.csv_bad())
        out.write(f"{name}.svg", line_chart(
            [("theta(Omega-hat(n))", rep.n_list, rep.omega_is)], "Omega-hat decay", "n",
            "probability", logy=True))
    out.manifest(cfg.lines(), rep.summary())


def _run_config(cfg, st, name):
    out = Outputs(st.out)
    rep = experiments.run(cfg)
    _write_report(out, rep, name)
    return EXIT_OK


def cmd_tail(args, st):
    f = map_from_config(st.cp)
    return _run_config(_tail_config(st, f), st, "survival")


def cmd_stability(args, st):
    f = map_from_config(st.cp)
    eps = st.eps if st.eps != (0.0,) else (0.04, 0.02, 0.01, 0.005, 0.0025)
    cfg = experiments.ExperimentConfig(
        "stability", experiments.map_source(f), eps, 1, 1, st.seed if st.seed is not None else 0,
        st.grid, st.threads,
        params=(("tol", st.get("stability", "tol", float, 1e-12)),
                ("refine", st.get("stability", "refine", int, 1)),
                ("core_radius", st.get("stability", "core_radius", float, 4e-5)),
                ("graded", st.get("stability", "graded", int, 1)),
                ("max_iters", st.get("stability", "max_iters", int, 400_000))))
    return _run_config(cfg, st, "stability")


def cmd_birkhoff(args, st):
    f = map_from_config(st.cp)
    seed = st.need_seed()
    cfg = experiments.ExperimentConfig(
        "birkhoff", experiments.map_source(f), (st.eps[0],),
        st.get("birkhoff", "steps", int, 10**7), st.get("birkhoff", "burn_in", int, 10_000),
        seed, st.grid, st.threads,
        params=(("lanes", st.get("birkhoff", "lanes", int, 16)),
                ("batches", st.get("birkhoff", "batches", int, 64)),
                ("tol", st.get("birkhoff", "tol", float, 1e-12))))
    return _run_config(cfg, st, "birkhoff")


def cmd_badset(args, st):
    seed = st.need_seed()
    eps = st.eps[0]
    Ns = tuple(int(v) for v in st.get("badset", "N_list", _floats, (1, 2, 3, 4)))
    alpha = st.get("badset", "alpha", float, 0.5)
    horizon = st.get("badset", "horizon", int,
                     int(16 * max(Ns) * eps ** (-alpha)) + 1 if eps > 0 else 1)
    cfg = experiments.ExperimentConfig(
        "badset", f"kind = doubling\nalpha = {alpha!r}\n", (eps,), st.samples, horizon, seed,
        threads=st.threads, params=(("N_list", Ns), ("n_max", 64), ("fit_lo", 4),
                                    ("fit_hi", 64)))
    return _run_config(cfg, st, "badset")


def cmd_rerun(args, st):
    """Rerun an experiment from the config echo of a manifest."""
    path = args.manifest
    if not os.path.isfile(path):
        raise ConfigError(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        cfg = experiments.ExperimentConfig.from_lines(fh.read().splitlines())
    if args.threads:
        cfg = cfg.with_threads(args.threads)
    names = {"tail_escape": "survival", "tail_mK": "survival", "tail_mV": "survival",
             "stability": "stability", "birkhoff": "birkhoff", "badset": "badset"}
    return _run_config(cfg, st, names[cfg.experiment])


COMMANDS = {
    "validate-map": cmd_validate_map,
    "simulate": cmd_simulate,
    "tail": cmd_tail,
    "ulam": cmd_ulam,
    "stability": cmd_stability,
    "birkhoff": cmd_birkhoff,
    "badset": cmd_badset,
    "rerun": cmd_rerun,
}


def build_parser():
    p = argparse.ArgumentParser(prog="intermittency",
                                description="Noisy intermittent circle maps: experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="INI config file")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--seed", type=int, help="u64 seed (overrides config)")
        s.add_argument("--threads", type=int, help="worker threads")
        s.add_argument("--grid", type=int, help="number of grid cells")
        s.add_argument("--eps", help="comma-separated noise levels")
        if name == "rerun":
            s.add_argument("manifest", help="manifest.txt of an earlier run")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command != "rerun" and args.config is None:
            raise ConfigError("--config is required")
        cp = read_config(args.config)
        st = Settings(args, cp)
        if st.seed is not None and not (0 <= st.seed < 2 ** 64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return COMMANDS[args.command](args, st)
    except (ConfigError, MapDefinitionError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntermittencyError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
