"""Command-line entry point.

Exit codes: 0 when every check passes, 2 when a verification fails, 1 for
configuration or usage errors.  Every output file carries the sha256 of the
canonical configuration and the seed.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import market, realize, simlab
from .curvealg import SpaceParams, curve_from_json
from .errors import HJMError
from .realize import AffineRealization, VerificationReport, _jsonable
from .volspec import VolatilitySpec

EXIT_OK, EXIT_CONFIG, EXIT_FAIL = 0, 1, 2

COMMANDS = ("build", "verify", "simulate", "price", "singular", "oracle-compare")
KNOWN_KEYS = {"space", "preset", "preset_params", "vol", "h0", "parametrization", "realization",
              "sim", "grid", "price", "paths", "maturities", "seed", "out", "checks"}


class ConfigError(Exception):
    pass


# configuration ------------------------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical configuration; the output directory is not part of it."""
    body = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()


class RunConfig:
    """Validated view of a JSON configuration with command-line overrides applied."""

    def __init__(self, raw: dict, base_dir: Path = Path(".")):
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(raw) - KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        self.raw = raw
        self.base_dir = base_dir
        sp = raw.get("space", {})
        self.space = SpaceParams(float(sp.get("beta", 0.5)), float(sp.get("beta_prime", 1.5)))
        if not 0 < self.space.beta < self.space.beta_prime:
            raise ConfigError("need 0 < beta < beta_prime")
        self.seed = int(raw.get("seed", 0))
        self.out = Path(raw.get("out", "out"))
        self.parametrization = raw.get("parametrization", "shift")
        self.preset = None
        if "preset" in raw:
            try:
                self.preset = market.preset(raw["preset"], self.space, **raw.get("preset_params", {}))
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
        elif "vol" not in raw and "realization" not in raw:
            raise ConfigError("configuration needs one of 'preset', 'vol' or 'realization'")
        try:
            self.h0 = curve_from_json(raw["h0"]) if "h0" in raw else None
            sim = raw.get("sim", {})
            self.sim = simlab.SimConfig(dt=float(sim.get("dt", 1e-3)), n_steps=int(sim.get("n_steps", 1000)),
                                        seed=self.seed, scheme=sim.get("scheme", "euler"),
                                        save_every=int(sim.get("save_every", 10)))
            grid = raw.get("grid", {})
            self.grid = simlab.GridConfig(float(grid.get("x_max", 10.0)), int(grid.get("n_x", 1000)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        self.price = {"T": 5.0, "t": 1.0, "n_paths": 10_000, "zero_drift": False, **raw.get("price", {})}
        self.paths = int(raw.get("paths", 1))
        self.maturities = [float(v) for v in raw.get("maturities", [])]
        self.checks = {"n_samples": 100, "seed": 0, **raw.get("checks", {})}
        self.hash = config_hash(raw)

    @property
    def is_cir(self) -> bool:
        return self.preset is not None and self.preset.name == "hull_white_cir"

    def vol_spec(self) -> VolatilitySpec:
        if self.preset is not None:
            return self.preset.vol_spec()
        data = dict(self.raw["vol"])
        data.setdefault("beta", self.space.beta)
        data.setdefault("beta_prime", self.space.beta_prime)
        return VolatilitySpec.from_json(data)

    def realization(self, prefer_dump: bool = False) -> AffineRealization:
        src = self.raw.get("realization")
        dump = self.out / "realization.json"
        if src is None and prefer_dump and dump.exists():
            src = str(dump.resolve())
        if src is not None:
            if isinstance(src, str):
                path = self.base_dir / src
                if not path.exists():
                    raise ConfigError(f"realization file {path} does not exist")
                src = json.loads(path.read_text())
            return AffineRealization.from_json(src.get("realization", src))
        if self.h0 is None:
            raise ConfigError("configuration needs an initial curve 'h0'")
        if self.preset is not None and self.preset.name == "ho_lee":
            return realize.build(self.vol_spec(), self.h0, "constant_vol")
        return realize.build(self.vol_spec(), self.h0, self.parametrization)


def load_config(path: str | None, args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    base = Path(".")
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        base = p.parent
    raw = dict(raw)
    if args.preset:
        raw["preset"] = args.preset
        raw.pop("vol", None)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    if args.paths is not None:
        if args.command == "price":
            raw["price"] = {**raw.get("price", {}), "n_paths": args.paths}
        else:
            raw["paths"] = args.paths
    if args.dt is not None:
        sim = dict(raw.get("sim", {}))
        horizon = float(sim.get("dt", 1e-3)) * int(sim.get("n_steps", 1000))
        sim["dt"] = args.dt
        sim["n_steps"] = int(round(horizon / args.dt))
        raw["sim"] = sim
        if args.command == "price":
            raw["price"] = {**raw.get("price", {}), "dt": args.dt}
    if args.xmax is not None or args.nx is not None:
        grid = dict(raw.get("grid", {}))
        if args.xmax is not None:
            grid["x_max"] = args.xmax
        if args.nx is not None:
            grid["n_x"] = args.nx
        raw["grid"] = grid
    return RunConfig(raw, base)


# output --------------------------------------------------------------------------------

def _provenance(cfg: RunConfig, command: str) -> dict:
    return {"config_hash": cfg.hash, "seed": cfg.seed, "command": command}


def write_json(path: Path, payload: dict, cfg: RunConfig, command: str):
    body = {**_jsonable(payload), "provenance": _provenance(cfg, command)}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, sort_keys=True, indent=2, allow_nan=True) + "\n")


def write_csv(path: Path, text: str, cfg: RunConfig):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(f"# config_hash={cfg.hash} seed={cfg.seed}\n" + text)


# commands --------------------------------------------------------------------------------

def _run_checks(real: AffineRealization, cfg: RunConfig) -> tuple[VerificationReport, VerificationReport]:
    n, seed = int(cfg.checks["n_samples"]), int(cfg.checks["seed"])
    inv = realize.check_invariance(real, n_samples=n, seed=seed)
    try:
        ric = realize.riccati_check(real, seed=seed + 1)
    except HJMError as exc:
        ric = VerificationReport("riccati", [realize.Check("riccati_residual", math.inf, 1e-8, [])],
                                 {"error": str(exc)})
    return inv, ric


def _cir_reports(cfg: RunConfig):
    model = market.CIRShortRate(cfg.preset, cfg.h0, cfg.sim.horizon, cfg.sim.dt)
    res = model.invariance_residuals(int(cfg.checks["n_samples"]), int(cfg.checks["seed"]))
    inv = VerificationReport("invariance", [realize.Check("drift_tangency", float(res.max()), 1e-9, res)],
                             {"short_rate_realization": True})
    ric = VerificationReport("riccati", [realize.Check("riccati_residual", model.riccati_residual(), 1e-10, [])],
                             {"a": model.kappa, "b": 0.5 * model.vol_sq, "gamma": model.lam.gamma_param})
    dump = {"kind": "cir_short_rate", "d": 1, "direction": model.lam.to_json(),
            "c": model.c, "eps": model.eps, "h0": cfg.h0.to_json(),
            "membership_warning": cfg.preset.membership_warning}
    return dump, inv, ric


def cmd_build(cfg: RunConfig, verify_only: bool = False) -> int:
    command = "verify" if verify_only else "build"
    if cfg.is_cir:
        dump, inv, ric = _cir_reports(cfg)
    else:
        real = cfg.realization(prefer_dump=verify_only)
        inv, ric = _run_checks(real, cfg)
        dump = {"realization": real.to_json()}
        if cfg.preset is not None:
            dump["membership_warning"] = cfg.preset.membership_warning
    if not verify_only:
        write_json(cfg.out / "realization.json", dump, cfg, command)
    write_json(cfg.out / "invariance_report.json", inv.to_json(), cfg, command)
    write_json(cfg.out / "riccati_report.json", ric.to_json(), cfg, command)
    ok = inv.passed and ric.passed
    print(f"{command}: invariance {'pass' if inv.passed else 'FAIL'} "
          f"(max residual {max(c.residual for c in inv.checks):.3e}), "
          f"riccati {'pass' if ric.passed else 'FAIL'} "
          f"(max residual {max(c.residual for c in ric.checks):.3e})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.is_cir:
        raise ConfigError("simulate needs an exp-poly realization; the CIR preset is priced only")
    real = cfg.realization()
    for i in range(cfg.paths):
        sim = simlab.SimConfig(cfg.sim.dt, cfg.sim.n_steps, cfg.seed, cfg.sim.scheme, 0.0,
                               cfg.sim.save_every, i)
        path = simlab.simulate_coords(real, None, sim)
        write_csv(cfg.out / f"path_{i:04d}.csv", simlab.path_csv(path, cfg.maturities), cfg)
    print(f"simulate: wrote {cfg.paths} path(s) to {cfg.out}")
    return EXIT_OK


def cmd_price(cfg: RunConfig) -> int:
    pr = cfg.price
    if cfg.preset is not None and "realization" not in cfg.raw:
        if cfg.h0 is None:
            raise ConfigError("configuration needs an initial curve 'h0'")
        target, h0 = cfg.preset, cfg.h0
    else:
        target = cfg.realization()
        h0 = target.h0
    rep = market.martingale_test(target, h0, float(pr["T"]), float(pr["t"]), int(pr["n_paths"]),
                                 float(pr.get("dt", cfg.sim.dt)), cfg.seed, bool(pr["zero_drift"]),
                                 bool(pr.get("antithetic", True)))
    write_json(cfg.out / "price_report.json", rep.to_json(), cfg, "price")
    write_csv(cfg.out / "price_summary.csv", market.MartingaleReport.csv_header() + "\n" + rep.csv_line() + "\n", cfg)
    print(rep.csv_line())
    ok = rep.z_score > 5 if rep.zero_drift else rep.z_score < 3
    return EXIT_OK if ok else EXIT_FAIL


def cmd_singular(cfg: RunConfig) -> int:
    if cfg.is_cir:
        raise ConfigError("singular needs an exp-poly realization")
    real = cfg.realization()
    h0 = cfg.h0 if cfg.h0 is not None else real.h0
    t0 = realize.entry_time(real, h0)
    S = realize.singular_set(real)
    payload = {"t0": "inf" if math.isinf(t0) else t0, "sigma_dimension": S.dimension,
               "offset": S.offset.to_json(), "span": [b.to_json() for b in S.span_basis],
               "initial_in_singular": bool(realize.in_singular(real, h0))}
    write_json(cfg.out / "singular.json", payload, cfg, "singular")
    print(f"t0={payload['t0']} sigma_dimension={S.dimension}")
    return EXIT_OK


def cmd_oracle_compare(cfg: RunConfig) -> int:
    """Realization path against the grid solver on shared increments, plus Gaussian moments."""
    if cfg.is_cir:
        raise ConfigError("oracle-compare needs an exp-poly realization")
    real = cfg.realization()
    vol, h0 = real.vol, cfg.h0 if cfg.h0 is not None else real.h0
    dW = simlab.brownian_increments(cfg.seed, cfg.sim.n_steps, cfg.sim.dt, 1, 0)[0]
    path = simlab.simulate_coords(real, None, cfg.sim, dW)
    grid = simlab.simulate_spde(vol, h0, cfg.sim, cfg.grid, dW)
    cmp = simlab.compare_paths(path, grid, grid.x)
    payload = {"pathwise": cmp.to_json(), "pathwise_tolerance": 5e-2}
    ok = cmp.max_rel_sup < 5e-2
    if vol.constant_vol and vol.p == 1:
        lam = vol.directions[0].scale(float(vol.functionals[0](h0)))
        x = np.linspace(0.0, min(5.0, cfg.grid.x_max), 20)
        t = cfg.sim.horizon
        lin = real if real.parametrization == "constant_vol" else realize.build(vol, h0, "constant_vol")
        m, c = simlab.realization_moments(lin, t, x)
        mo, co = simlab.gaussian_oracle(lam, h0, t, x)
        mean_err, cov_err = float(np.max(np.abs(m - mo))), float(np.max(np.abs(c - co)))
        payload["gaussian"] = {"t": t, "x": x, "mean_error": mean_err, "cov_error": cov_err, "tolerance": 1e-8}
        ok = ok and mean_err < 1e-8 and cov_err < 1e-8
    write_json(cfg.out / "oracle_compare.json", payload, cfg, "oracle-compare")
    write_csv(cfg.out / "spde_grid.csv", simlab.grid_csv(grid), cfg)
    print(f"oracle-compare: max relative sup error {cmp.max_rel_sup:.3e}"
          + (f", gaussian mean/cov error {payload['gaussian']['mean_error']:.3e}/"
             f"{payload['gaussian']['cov_error']:.3e}" if "gaussian" in payload else ""))
    return EXIT_OK if ok else EXIT_FAIL


# entry point ---------------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hjmaffine", description="Affine realizations of forward-rate models")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON configuration file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--paths", type=int, help="number of paths (simulate) or Monte Carlo paths (price)")
    ap.add_argument("--dt", type=float)
    ap.add_argument("--xmax", type=float)
    ap.add_argument("--nx", type=int)
    ap.add_argument("--preset", choices=market.PRESETS)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, args)
        handler = {
            "build": cmd_build,
            "verify": lambda c: cmd_build(c, verify_only=True),
            "simulate": cmd_simulate,
            "price": cmd_price,
            "singular": cmd_singular,
            "oracle-compare": cmd_oracle_compare,
        }[args.command]
        return handler(cfg)
    except (ConfigError, HJMError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
