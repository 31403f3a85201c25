"""Command line front end.

Every subcommand reads an optional ``key = value`` config file; command line
flags override it. Exit status is 0 on success, 1 for usage or configuration
errors and 2 for runtime or data errors.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

import numpy as np

from .calibrate import STATISTICS, CalibrationTable, NoiseModel, build_table
from .core import BasisSet, read_grid, write_grid
from .detect import PROCEDURES, bh_select, bonferroni_select, select_candidates
from .evaluation import ExperimentConfig, run_experiment, write_report_csv
from .localize import estimate_delta
from .scoremap import score_map
from .synth import fourier_bessel_basis, make_scene, observe, sigma_for_snr

__all__ = ["main", "ConfigError"]

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _read_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + p.read_text())
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    out = dict(parser["run"])
    for sec in parser.sections():
        if sec != "run":
            out.update(parser[sec])
    return out


class _Settings:
    """Merged config file and flags with typed accessors."""

    def __init__(self, args, config: dict):
        self.values = {k.replace("-", "_").lower(): v for k, v in config.items()}
        for k, v in vars(args).items():
            if v is not None and k not in ("command", "config", "func"):
                self.values[k.lower()] = v

    def raw(self, key, default=None):
        return self.values.get(key.lower(), default)

    def _get(self, key, cast, default, required):
        key = key.lower()
        v = self.values.get(key)
        if v is None:
            if required:
                raise ConfigError(f"missing required setting {key!r}")
            return default
        try:
            return cast(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for {key!r}: {v!r}") from exc

    def int(self, key, default=None, required=False, lo=None):
        v = self._get(key, lambda s: int(str(s).strip()), default, required)
        if v is not None and lo is not None and v < lo:
            raise ConfigError(f"{key} must be at least {lo}")
        return v

    def float(self, key, default=None, required=False):
        return self._get(key, lambda s: float(str(s).strip()), default, required)

    def floats(self, key, default=None, required=False):
        def cast(s):
            if isinstance(s, (list, tuple)):
                return tuple(float(x) for x in s)
            return tuple(float(x) for x in str(s).replace(",", " ").split())

        return self._get(key, cast, default, required)

    def path(self, key, default=None, required=False):
        return self._get(key, lambda s: Path(str(s).strip()), default, required)

    def choice(self, key, options, default=None):
        v = self.values.get(key, default)
        if v is None:
            return None
        v = str(v).strip().lower().replace("-", "_")
        if v not in options:
            raise ConfigError(f"{key} must be one of {', '.join(options)}")
        return v

    def threads(self):
        n = self.int("threads", None, lo=1)
        return n if n is not None else (os.cpu_count() or 1)

    def seed(self):
        s = self.int("seed", 0, lo=0)
        if s >= 2**64:
            raise ConfigError("seed must fit in 64 bits")
        return s

    def delta(self, basis_fn):
        v = self.values.get("delta")
        if v is None:
            raise ConfigError("missing required setting 'delta'")
        if str(v).strip().lower() == "auto":
            return float(estimate_delta(basis_fn()).delta)
        try:
            return float(v)
        except ValueError as exc:
            raise ConfigError(f"invalid value for 'delta': {v!r}") from exc

    def noise(self, seed, basis):
        """Noise model from ``sigma``, or from ``snr`` for unit-norm objects."""
        kind = self.choice("noise", ("gaussian_kernel", "white"), "gaussian_kernel")
        sigma = self.float("sigma", 1.0)
        snr = self.float("snr")
        if snr is not None:
            if snr <= 0:
                raise ConfigError("snr must be positive")
            sigma = sigma_for_snr(snr, 1.0, basis.support, basis.ndim)
        try:
            return NoiseModel(kind, sigma, self.float("length_scale", 1.0), seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _load_basis(s: _Settings) -> BasisSet:
    path = s.path("basis")
    if path is not None:
        return BasisSet.from_field(read_grid(path))
    B = s.int("B", required=True, lo=4)
    M = s.int("M", required=True, lo=1)
    return fourier_bessel_basis(B, M)


def _basis_factory(s):
    cache = {}

    def get():
        if "b" not in cache:
            cache["b"] = _load_basis(s)
        return cache["b"]

    return get


def cmd_synth(s: _Settings) -> int:
    basis = _basis_factory(s)()
    out = s.path("out", Path("."))
    L = s.int("L", required=True, lo=1)
    density = s.float("density", required=True)
    if not 0.0 < density < 1.0:
        raise ConfigError("density must lie in (0, 1)")
    seed = s.seed()
    delta = s.delta(lambda: basis)
    # keep the observation noise off the streams used for calibration
    noise_seed = int(np.random.SeedSequence(seed, spawn_key=(1,)).generate_state(1, np.uint64)[0])
    noise = s.noise(noise_seed, basis)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    scene = make_scene(L, basis, delta, density, noise, rng)
    x, y = observe(scene, basis)
    out.mkdir(parents=True, exist_ok=True)
    scene.save(out / "scene.json")
    write_grid(x, out / "x.grid")
    write_grid(y, out / "y.grid")
    write_grid(basis.as_field(), out / "basis.grid")
    print(f"wrote {scene.N} objects to {out}")
    return EXIT_OK


def cmd_calibrate(s: _Settings) -> int:
    get_basis = _basis_factory(s)
    basis = get_basis()
    kind = s.choice("statistic", STATISTICS, "tilde_z")
    n_sim = s.int("n_sim", 10_000, lo=1)
    r = s.float("r")
    if r is None:
        r = 2.0 * basis.support + s.delta(get_basis)
    out = s.path("out", Path("table.grid"))
    noise = s.noise(s.seed(), basis)
    table = build_table(noise, basis, r, n_sim, kind, s.threads())
    out.parent.mkdir(parents=True, exist_ok=True)
    sidecar = table.save(out)
    print(f"wrote {table.n_sim} samples to {out} ({sidecar.name})")
    return EXIT_OK


def cmd_detect(s: _Settings) -> int:
    get_basis = _basis_factory(s)
    y_path = s.path("y", required=True)
    table_path = s.path("table", required=True)
    if not table_path.is_file():
        raise FileNotFoundError(f"calibration table not found: {table_path}")
    basis = get_basis()
    y = read_grid(y_path)
    table = CalibrationTable.load(table_path)
    kind = s.choice("statistic", STATISTICS, table.kind)
    if kind != table.kind:
        raise ValueError(f"table holds {table.kind!r} samples but {kind!r} was requested")
    r = s.float("r")
    if r is None:
        r = 2.0 * basis.support + s.delta(get_basis)
    if abs(table.box_side - r / 2.0) > 1e-9:
        raise ValueError(f"table box side {table.box_side} does not match r/2 = {r / 2.0}")
    checksum = table.meta.get("basis")
    if checksum is not None and checksum != basis.checksum():
        raise ValueError("calibration table was built for a different basis")
    alpha = s.float("alpha", 0.05)
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    proc = s.choice("procedure", PROCEDURES, "bh")
    cands = select_candidates(score_map(y, basis), r)
    select = bonferroni_select if proc == "bonferroni" else bh_select
    result = select(cands, table, alpha, max(y.shape))
    out = s.path("out", Path("detections.csv"))
    result.to_csv(out)
    print(f"{len(result.accepted)} of {len(cands)} candidates accepted; wrote {out}")
    return EXIT_OK


def cmd_evaluate(s: _Settings) -> int:
    procs = s.choice("procedure", PROCEDURES + ("both",), "both")
    try:
        cfg = ExperimentConfig(
            L=s.int("L", 512, lo=1),
            B=s.int("B", 32, lo=4),
            M=s.int("M", 12, lo=1),
            density=s.float("density", 0.5),
            delta="auto" if str(s.raw("delta", "")).strip().lower() == "auto" else s.float("delta", 5.0),
            alpha=s.float("alpha", 0.05),
            snrs=s.floats("snr", (1.0, 0.5, 0.4, 0.35)),
            n_trials=s.int("n_trials", 100, lo=1),
            n_sim=s.int("n_sim", 10_000, lo=1),
            statistic=s.choice("statistic", STATISTICS, "tilde_z"),
            procedures=PROCEDURES if procs == "both" else (procs,),
            length_scale=s.float("length_scale", 1.0),
            seed=s.seed(),
            n_jobs=s.threads(),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    basis = _load_basis(s) if s.raw("basis") is not None else None
    out = s.path("out", Path("report.csv"))
    out.parent.mkdir(parents=True, exist_ok=True)
    reports = run_experiment(cfg, basis, trial_csv=s.path("trials_out"))
    write_report_csv(reports, out)
    for rep in reports:
        print(
            f"snr={rep.snr:g} {rep.procedure}: fwer={rep.fwer_hat:.3f} "
            f"fdr={rep.fdr_hat:.4f} power={rep.power_hat:.3f}"
        )
    return EXIT_OK


def cmd_estimate_delta(s: _Settings) -> int:
    basis = _basis_factory(s)()
    stride = s.int("stride", None, lo=1)
    cert = estimate_delta(basis, stride)
    out = s.path("out", Path("delta.json"))
    cert.save(out)
    print(json.dumps({"delta": cert.delta, "g_value": cert.g_value, "stride": cert.stride}))
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--seed", type=int, help="master RNG seed")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--out", help="output path")
    common.add_argument("--basis", help="basis grid file (M, B, ..., B)")

    p = _Parser(prog="lsmdetect", description="Detection under the linear subspace model.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("synth", parents=[common], help="simulate a scene and its observation")
    q.add_argument("--L", type=int)
    q.add_argument("--B", type=int)
    q.add_argument("--M", type=int)
    q.add_argument("--density", type=float)
    q.add_argument("--delta")
    q.add_argument("--snr", type=float)
    q.set_defaults(func=cmd_synth)

    q = sub.add_parser("calibrate", parents=[common], help="build a null calibration table")
    q.add_argument("--B", type=int)
    q.add_argument("--M", type=int)
    q.add_argument("--delta")
    q.add_argument("--r", type=float)
    q.add_argument("--n-sim", dest="n_sim", type=int)
    q.add_argument("--statistic")
    q.set_defaults(func=cmd_calibrate)

    q = sub.add_parser("detect", parents=[common], help="detect objects in one image")
    q.add_argument("y", nargs="?")
    q.add_argument("--table")
    q.add_argument("--B", type=int)
    q.add_argument("--M", type=int)
    q.add_argument("--delta")
    q.add_argument("--r", type=float)
    q.add_argument("--alpha", type=float)
    q.add_argument("--procedure")
    q.add_argument("--statistic")
    q.set_defaults(func=cmd_detect)

    q = sub.add_parser("evaluate", parents=[common], help="run the repeated-trial experiment")
    q.add_argument("--trials-out", dest="trials_out")
    q.add_argument("--n-trials", dest="n_trials", type=int)
    q.add_argument("--n-sim", dest="n_sim", type=int)
    q.set_defaults(func=cmd_evaluate)

    q = sub.add_parser("estimate-delta", parents=[common], help="certify a localization radius")
    q.add_argument("--B", type=int)
    q.add_argument("--M", type=int)
    q.add_argument("--stride", type=int)
    q.set_defaults(func=cmd_estimate_delta)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        settings = _Settings(args, _read_config(args.config))
        return args.func(settings)
    except ConfigError as exc:
        print(f"lsmdetect: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 2
        print(f"lsmdetect: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
