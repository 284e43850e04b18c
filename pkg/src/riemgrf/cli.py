"""Command-line front end.

    riemgrf <command> CONFIG.ini [--section.key=value ...]

Commands: simulate, krige, condsim, loglik, fit, covcurve.  The INI file
holds one section per concern (``job``, ``mesh``, ``anisotropy``, ``model``,
``data``, ``solver``, ``likelihood``, ``fit``, ``covcurve``, ``output``);
every key can be overridden on the command line.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, GRFError, IoError
from .export import export_field, read_observations, read_targets, write_points
from .fem import build_bundle
from .fieldops import PriorSampler, conditional_mean, conditional_simulate
from .likelihood import FitConfig, fit_mle, log_likelihood
from .mesh import AnisotropyField, build_grid, load_anisotropy, load_mesh
from .oracle import covariance_curve_fft
from .solver import SolverConfig
from .spectral import PositivePolynomialParam, SpectralModel

COMMANDS = ("simulate", "krige", "condsim", "loglik", "fit", "covcurve")
DEFAULT_SEED = 20240101

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SOLVER, EXIT_MODEL = 0, 2, 3, 4, 5


def _floats(s):
    return [float(t) for t in str(s).replace(";", ",").split(",") if t.strip()]


def _ints(s):
    return [int(t) for t in str(s).replace(";", ",").split(",") if t.strip()]


@dataclass
class JobConfig:
    command: str
    raw: configparser.ConfigParser
    base_dir: Path = field(default_factory=Path.cwd)

    def get(self, section, key, default=None, conv=str):
        if self.raw.has_option(section, key):
            val = self.raw.get(section, key).strip()
            try:
                return conv(val)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{section}] {key}={val!r}: {exc}") from exc
        return default

    def path(self, section, key, must_exist=True):
        val = self.get(section, key)
        if not val:
            return None
        p = Path(val)
        p = p if p.is_absolute() else self.base_dir / p
        if must_exist and not p.exists():
            raise ConfigError(f"[{section}] {key}: file {p} does not exist")
        return p

    @property
    def seed(self):
        return self.get("job", "seed", DEFAULT_SEED, int)

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; choose from {', '.join(COMMANDS)}")
        if self.command != "covcurve":
            has_grid = self.raw.has_option("mesh", "cells")
            has_file = self.raw.has_option("mesh", "file")
            if has_grid == has_file:
                raise ConfigError("exactly one of [mesh] cells or [mesh] file is required")
            if has_file:
                self.path("mesh", "file")
                self.path("mesh", "simplices", must_exist=True)
        for key in ("observations", "targets"):
            self.path("data", key)
        if self.raw.has_option("anisotropy", "file"):
            self.path("anisotropy", "file")
        if self.command in ("krige", "condsim", "loglik", "fit") and not self.raw.has_option("data", "observations"):
            raise ConfigError(f"{self.command} needs [data] observations")
        return self


def load_config(command, path, overrides=()):
    raw = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        raw.read(p)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    for item in overrides:
        if not item.startswith("--") or "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form --section.key=value")
        key, val = item[2:].split("=", 1)
        section, opt = key.split(".", 1)
        if not raw.has_section(section):
            raw.add_section(section)
        raw.set(section, opt, val)
    return JobConfig(command, raw, p.resolve().parent).validate()


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def make_mesh(cfg):
    if cfg.raw.has_option("mesh", "cells"):
        cells = _ints(cfg.get("mesh", "cells"))
        sizes = _floats(cfg.get("mesh", "spacing", "1"))
        origin = cfg.get("mesh", "origin", None, _floats)
        kw = {}
        cap = cfg.get("mesh", "max_vertices", None, int)
        if cap:
            kw["max_vertices"] = cap
        try:
            return build_grid(len(cells), cells, sizes if len(sizes) > 1 else sizes[0], origin, **kw)
        except GRFError:
            raise
        except ValueError as exc:
            raise ConfigError(f"[mesh] {exc}") from exc
    fmt = cfg.get("mesh", "format", "off")
    return load_mesh(cfg.path("mesh", "file"), fmt, cfg.path("mesh", "simplices"))


def make_anisotropy(cfg, mesh):
    source = cfg.get("anisotropy", "source", "none").lower()
    if source == "none":
        return None
    if source == "file":
        return load_anisotropy(cfg.path("anisotropy", "file"), mesh.dim)
    if source == "constant":
        ranges = cfg.get("anisotropy", "ranges", None, _floats)
        if not ranges or len(ranges) != mesh.dim:
            raise ConfigError(f"[anisotropy] ranges needs {mesh.dim} values")
        if mesh.dim == 2:
            rot = math.radians(cfg.get("anisotropy", "angle", 0.0, float))
        else:
            entries = cfg.get("anisotropy", "rotation", "1,0,0,0,1,0,0,0,1", _floats)
            if len(entries) != 9:
                raise ConfigError("[anisotropy] rotation needs 9 entries (row-major 3x3)")
            rot = np.array(entries).reshape(3, 3)
        return AnisotropyField.constant_field(mesh.n, ranges, rot)
    raise ConfigError(f"[anisotropy] source must be none, constant or file, not {source!r}")


def make_model(cfg):
    tau2 = cfg.get("model", "tau2", 1.0, float)
    try:
        if cfg.raw.has_option("model", "coefficients"):
            return SpectralModel.from_coefficients(cfg.get("model", "coefficients", conv=_floats), tau2)
        if cfg.raw.has_option("model", "p1"):
            p1 = cfg.get("model", "p1", conv=_floats)
            p2 = cfg.get("model", "p2", [0.0], _floats)
            eps = cfg.get("model", "epsilon", 1e-3, float)
            return SpectralModel.from_param(PositivePolynomialParam(p1, p2, eps), tau2)
        if cfg.raw.has_option("model", "kappa"):
            from .oracle import matern_polynomial

            kappa = cfg.get("model", "kappa", conv=float)
            alpha = cfg.get("model", "alpha", 2, int)
            return SpectralModel(matern_polynomial(kappa, alpha), tau2)
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}") from exc
    raise ConfigError("[model] needs coefficients, p1/p2 or kappa")


def make_solver(cfg):
    return SolverConfig(tol=cfg.get("solver", "tol", 1e-8, float),
                        maxit=cfg.get("solver", "maxit", None, int))


def _output(cfg, default):
    p = cfg.path("output", "path", must_exist=False) or (cfg.base_dir / default)
    return p, cfg.get("output", "format", "csv")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def run(cfg: JobConfig, out=None):
    """Execute one job; returns the summary dict."""
    out = out or sys.stdout
    t0 = time.perf_counter()
    summary = {"command": cfg.command, "seed": cfg.seed}
    timings = {}

    if cfg.command == "covcurve":
        model = make_model(cfg)
        d = cfg.get("covcurve", "dim", 2, int)
        curve = covariance_curve_fft(model.poly, d, grid=cfg.get("covcurve", "grid", 1024, int),
                                     max_lag=cfg.get("covcurve", "max_lag", None, float))
        if cfg.get("covcurve", "normalize", "false").lower() in ("1", "true", "yes"):
            curve = curve.normalized()
        path, _ = _output(cfg, "covcurve.csv")
        curve.to_csv(path)
        summary.update(lags=len(curve.lags), sill=curve.sill, output=str(path))
        return _finish(cfg, summary, timings, t0, out)

    t = time.perf_counter()
    mesh = make_mesh(cfg)
    field_ = make_anisotropy(cfg, mesh)
    model = make_model(cfg)
    obs_locs = obs_vals = targets = None
    if cfg.raw.has_option("data", "observations"):
        obs_locs, obs_vals = read_observations(cfg.path("data", "observations"), mesh.ambient_dim)
    if cfg.raw.has_option("data", "targets"):
        targets = read_targets(cfg.path("data", "targets"), mesh.ambient_dim)
    bundle = build_bundle(mesh, field_, obs_locs, targets)
    timings["assembly"] = time.perf_counter() - t
    summary.update(n=bundle.n, p=bundle.p, q=bundle.q)
    solver = make_solver(cfg)
    seed = cfg.seed

    t = time.perf_counter()
    if cfg.command in ("simulate", "condsim"):
        sampler = PriorSampler(bundle, model, degree=cfg.get("simulate", "degree", None, int))
        summary["chebyshev_degree"] = sampler.degree
        if cfg.command == "simulate":
            values = sampler.sample(seed)
        else:
            values, rep = conditional_simulate(bundle, model, obs_vals, seed, solver, sampler,
                                               return_report=True)
            summary["iterations"] = rep.iterations
        ext = "vtk" if cfg.get("output", "format", "csv") == "vtk" else "csv"
        path, fmt = _output(cfg, f"{cfg.command}.{ext}")
        export_field(mesh, values, path, fmt)
        summary["output"] = str(path)
    elif cfg.command == "krige":
        X, rep = conditional_mean(bundle, model, obs_vals, solver, return_report=True)
        summary["iterations"] = rep.iterations
        summary["final_relative_residual"] = rep.final_relative_residual
        path, fmt = _output(cfg, "krige.csv")
        if bundle.q:
            write_points(path, targets, bundle.M_T @ X)
        else:
            export_field(mesh, X, path, fmt)
        summary["output"] = str(path)
    elif cfg.command == "loglik":
        M = cfg.get("likelihood", "probes", 10, int)
        ll = log_likelihood(bundle, model, obs_vals, M=M, seed=seed,
                            degree=cfg.get("likelihood", "degree", 256, int), solver=solver,
                            kind=cfg.get("likelihood", "probe_kind", "rademacher"))
        summary.update(loglik=ll, probes=M)
    elif cfg.command == "fit":
        fc = FitConfig(
            p1_degree=cfg.get("fit", "p1_degree", 1, int),
            p2_degree=cfg.get("fit", "p2_degree", 1, int),
            restarts=cfg.get("fit", "restarts", 8, int),
            phase_probes=tuple(cfg.get("fit", "phase_probes", [1, 10], _ints)),
            epsilon=cfg.get("fit", "epsilon", 1e-3, float),
            tau2_start=cfg.get("fit", "tau2_start", 1.0, float),
            init_p1=cfg.get("fit", "init_p1", None, _floats),
            init_p2=cfg.get("fit", "init_p2", None, _floats),
            log_degree=cfg.get("likelihood", "degree", 256, int),
            maxiter=cfg.get("fit", "maxiter", None, int),
            seed=seed,
            probe_kind=cfg.get("likelihood", "probe_kind", "rademacher"),
            solver=solver,
        )
        rep = fit_mle(bundle, obs_vals, fc)
        result = {
            "p1": rep.theta_hat.p1.tolist(),
            "p2": rep.theta_hat.p2.tolist(),
            "tau2": rep.theta_hat.tau2,
            "P": rep.model.poly.coeffs.tolist(),
            "loglik": rep.loglik,
            "restarts": rep.restarts,
            "evaluations": rep.evaluations,
            "probe_seed": rep.probe_seed,
            "beta_hat": None if rep.beta_hat is None else rep.beta_hat.tolist(),
        }
        path, _ = _output(cfg, "fit.json")
        try:
            path.write_text(json.dumps(result, indent=2) + "\n")
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc
        summary.update(loglik=rep.loglik, tau2_hat=rep.theta_hat.tau2, output=str(path))
    timings[cfg.command] = time.perf_counter() - t
    return _finish(cfg, summary, timings, t0, out)


def _finish(cfg, summary, timings, t0, out):
    timings["total"] = time.perf_counter() - t0
    summary["timings"] = {k: round(v, 4) for k, v in timings.items()}
    for k, v in summary.items():
        if k == "timings":
            v = " ".join(f"{a}={b:.3f}s" for a, b in v.items())
        print(f"{k}: {v}", file=out)
    spath = cfg.path("output", "summary", must_exist=False)
    if spath:
        try:
            spath.write_text(json.dumps(summary, indent=2, default=float) + "\n")
        except OSError as exc:
            raise IoError(f"cannot write {spath}: {exc}") from exc
    return summary


def _limit_threads(cfg):
    threads = cfg.get("job", "threads", 0, int)
    if threads and threads > 0:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=threads)
    return None


def main(argv=None):
    parser = argparse.ArgumentParser(prog="riemgrf", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config")
    args, overrides = parser.parse_known_args(argv)
    try:
        cfg = load_config(args.command, args.config, overrides)
        limiter = _limit_threads(cfg)
        try:
            run(cfg)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except GRFError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
