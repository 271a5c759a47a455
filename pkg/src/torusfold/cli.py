"""Command-line runner: build the maps, run certifications and experiments,
write JSON reports and CSV data.

Settings are resolved as defaults < config file < TORUSFOLD_* environment
variables < command-line flags. Exit status is 0 when every check run by the
command passes, 1 when one fails and 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import conefield, critical, dynamics, flatten
from .bumpkit import (A_MAX, build_chi, build_mu, build_omega, build_phi, build_psi,
                      solve_params, sup_abs_derivative, verify_params)
from .errors import ConfigInvalid, TorusFoldError
from .reporting import write_csv, write_json
from .torusmap import BaseMap, LinearMap, base_point

ENV_PREFIX = "TORUSFOLD_"
MAPS = ("A", "f", "H", "g_collapse", "nf_demo")
COMMANDS = ("params", "profiles", "certify-cones", "critical-set", "folds",
            "flatten-check", "collapse", "orbit", "coverage", "report")


@dataclass(frozen=True)
class RunConfig:
    n: int = 3
    a: float = 0.3
    eps: float = 1e-2
    seed: int = 0
    grid: int | None = None
    samples: int | None = None
    out: str = "torusfold-out"
    map: str = "f"
    threads: int = 1
    steps: int = 1000
    rho_halvings: int = 4

    def validate(self) -> "RunConfig":
        if not 2 <= self.n <= 64:
            raise ConfigInvalid(f"n must lie in [2, 64], got {self.n}")
        if not 0 < self.a < A_MAX:
            raise ConfigInvalid(f"a must lie in (0, 3/7), got {self.a}")
        if not self.eps > 0:
            raise ConfigInvalid(f"eps must be positive, got {self.eps}")
        if self.map not in MAPS:
            raise ConfigInvalid(f"map must be one of {', '.join(MAPS)}, got {self.map}")
        for name in ("grid", "samples"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigInvalid(f"{name} must be positive, got {v}")
        if self.threads < 1 or self.steps < 1 or self.rho_halvings < 0:
            raise ConfigInvalid("threads and steps must be positive, rho-halvings non-negative")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELDS[name].type
    try:
        if kind in ("int", "int | None"):
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigInvalid(f"bad value for {name}: {raw!r}") from exc


def read_config_file(path) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k not in _FIELDS:
            raise ConfigInvalid(f"{path}:{lineno}: unknown key {k!r}")
        out[k] = _coerce(k, v)
    return out


def read_env(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name in _FIELDS:
        key = ENV_PREFIX + name.upper()
        if key in environ:
            out[name] = _coerce(name, environ[key])
    return out


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    values.update(read_env(environ))
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values).validate()


# ---------------------------------------------------------------------------
# commands


def _params(cfg: RunConfig):
    return solve_params(cfg.n, cfg.a, cfg.eps)


def _build_map(cfg: RunConfig, params=None):
    params = params or _params(cfg)
    if cfg.map == "A":
        return LinearMap(cfg.n)
    f = BaseMap(params)
    if cfg.map == "f":
        return f
    H = flatten.FlattenedMap(f)
    if cfg.map == "H":
        return H
    if cfg.map == "g_collapse":
        return flatten.build_collapse(H)
    raise ConfigInvalid(f"map {cfg.map} is not a torus map for this command")


def cmd_params(cfg: RunConfig, out: Path) -> dict:
    p = _params(cfg)
    rep = verify_params(p, build_psi(p.theta))
    (out / "params.txt").write_text(p.to_text(), encoding="utf-8")
    return {"params": dataclasses.asdict(p), "slacks": rep.as_dict(),
            "failures": rep.failures(), "passed": rep.passed, "criteria": [2]}


def _profile_rows(prof, points=2001):
    lo, hi = prof.support
    x = np.linspace(lo, hi, points)
    v, d1, d2 = prof.eval(x)
    return zip(x, v, d1, d2)


def cmd_profiles(cfg: RunConfig, out: Path) -> dict:
    p = _params(cfg)
    psi, phi = build_psi(p.theta), build_phi(p.delta)
    omega, mu, chi = build_omega(p.l), build_mu(p.r), build_chi(p.rho)
    for prof in (psi, phi, omega, mu, chi):
        write_csv(out / f"profile_{prof.kind}.csv", ["x", "value", "d1", "d2"],
                  _profile_rows(prof))
    q = 0.25 + p.delta / 8
    points = {
        "psi(1/16) = 4": abs(psi.value(1 / 16) - 4.0),
        "phi(1/4) = 0": abs(phi.value(0.25)),
        "phi'(1/4) = 1/2": abs(phi.d1(0.25) - 0.5),
        "phi'(1/4 + delta/8) = 1": abs(phi.d1(q) - 1.0),
        "omega(l) = 1": abs(omega.value(p.l) - 1.0),
        "omega(2l) = 0": abs(omega.value(2 * p.l)),
        "mu(r/2) = 0": abs(mu.value(p.r / 2)),
        "mu(r) = 1": abs(mu.value(p.r) - 1.0),
    }
    caps = {
        "sup|omega'| < 2/l": (sup_abs_derivative(omega, 1), 2 / p.l),
        "sup|omega''| < 8/l^2": (sup_abs_derivative(omega, 2), 8 / p.l**2),
        "sup|mu'| < 4/r": (sup_abs_derivative(mu, 1), 4 / p.r),
        "sup|chi'| < 4/rho": (sup_abs_derivative(chi, 1), 4 / p.rho),
        "min phi' > -3/4": (-float(np.min(phi.d1(np.linspace(*phi.support, 20001)))), 0.75),
    }
    ok = all(v < 1e-10 for v in points.values()) and all(g < 0.99 * c for g, c in caps.values())
    return {"point_errors": points,
            "caps": {k: {"sup": g, "cap": c, "margin": 1 - g / c} for k, (g, c) in caps.items()},
            "passed": ok, "criteria": [1]}


def cmd_certify_cones(cfg: RunConfig, out: Path) -> dict:
    fmap = _build_map(cfg)
    rep = conefield.certify_cones(fmap, cfg.a, grid_density=cfg.grid or 9,
                                  samples_per_point=cfg.samples or 32,
                                  rng_seed=cfg.seed, threads=cfg.threads)
    return rep.as_dict() | {"criteria": [3]}


def cmd_critical_set(cfg: RunConfig, out: Path) -> dict:
    fmap = BaseMap(_params(cfg))
    levels, per = cfg.grid or 200, cfg.samples or 200
    S = critical.sample_critical_set(fmap, levels, per, seed=cfg.seed)
    write_csv(out / "critical_set.csv",
              ["level", "radius", "residual", "fold"] + [f"x{k + 1}" for k in range(fmap.n)],
              ([lv, rr, res, int(fd), *pt] for lv, rr, res, fd, pt
               in zip(S.level, S.radius, S.residual, S.fold, S.points)))
    write_csv(out / "level_radii.csv", ["level", "d", "D"],
              ([lr.level, lr.d, lr.D] for lr in S.radii))
    interior = [lr for lr in S.radii if 0.25 < lr.level < lr.c]
    ends = [lr for lr in S.radii if lr.coincident]
    max_res = float(np.max(np.abs(S.residual)))
    two_radii = all(lr.d < lr.D for lr in interior)
    ends_ok = all(abs(lr.d - 1 / 16) <= 1e-8 for lr in ends) and len(ends) >= 1
    return {"samples": len(S), "levels": len(S.radii), "max_abs_residual": max_res,
            "interior_two_radii": two_radii, "endpoint_single_radius": ends_ok,
            "c": critical.level_end(fmap),
            "passed": max_res < 1e-10 and two_radii and ends_ok, "criteria": [5]}


def cmd_folds(cfg: RunConfig, out: Path) -> dict:
    fmap = BaseMap(_params(cfg))
    S = critical.sample_critical_set(fmap, cfg.grid or 200, cfg.samples or 50, seed=cfg.seed)
    eq = critical.equator(fmap)
    nonfold = ~np.asarray(S.fold)
    where = np.abs(S.level[nonfold] - eq)
    ok = bool(np.all(where < 1e-8)) and bool(np.any(nonfold))
    return {"samples": len(S), "nonfold": int(nonfold.sum()),
            "nonfold_levels": sorted({float(v) for v in S.level[nonfold]}),
            "equator": eq, "passed": ok, "criteria": [5]}


def _dump_u(H, out: Path, points: int = 201):
    fl, l = H.flat, H.params.l
    ax = np.linspace(-2.2 * l, 2.2 * l, points)
    if H.n == 2:
        z = ax[:, None]
        rows = zip(ax, fl.eval_u(z))
        write_csv(out / "u.csv", ["z1", "u"], rows)
        return
    g1, g2 = np.meshgrid(ax, ax, indexing="ij")
    z = np.zeros((g1.size, H.n - 1))
    z[:, 0], z[:, 1] = g1.ravel(), g2.ravel()
    write_csv(out / "u.csv", ["z1", "z2", "u_minus_half"],
              zip(z[:, 0], z[:, 1], fl.u_offset(z)))


def cmd_flatten_check(cfg: RunConfig, out: Path) -> dict:
    p = _params(cfg)
    H = flatten.FlattenedMap(BaseMap(p))
    samples = cfg.samples or 4000
    dist = flatten.c2_distance_F_Id(H.flat, samples, cfg.seed)
    defect = flatten.volume_defect_bound(H.flat, samples, cfg.seed)
    x = np.random.default_rng(cfg.seed).random((10_000, H.n))
    det_dev = float(np.max(np.abs(np.linalg.det(H.flat.jac_F(x)) - 1.0)))
    flat = flatten.flatness_check(H, samples, cfg.seed)
    bounds = critical.Phi_bounds(H.fmap, p.W)
    _dump_u(H, out)
    ok = (dist.passed and det_dev < flatten.VOLUME_TOL and flat.passed
          and bounds.holds(p.eps_prime))
    return {"c2_distance": dist.as_dict(), "volume_defect_bound": defect,
            "det_jac_F_max_dev": det_dev, "flatness": flat.as_dict(),
            "Phi_bounds": dataclasses.asdict(bounds), "W": p.W,
            "passed": ok, "criteria": [6, 7]}


def cmd_collapse(cfg: RunConfig, out: Path) -> dict:
    p = _params(cfg)
    H = flatten.FlattenedMap(BaseMap(p))
    rows = flatten.collapse_sweep(H, cfg.rho_halvings, cfg.samples or 4000, cfg.seed)
    write_csv(out / "collapse_gaps.csv", ["rho", "gap0", "gap1", "gap2"],
              ([r.rho, r.gap0, r.gap1, r.gap2] for r in rows))
    g0 = [r.gap0 for r in rows]
    g1 = [r.gap1 for r in rows]
    g2 = [r.gap2 for r in rows]
    dec = lambda v: all(b < a for a, b in zip(v, v[1:]))  # noqa: E731
    floor = min(g2)
    demo = flatten.nf_fold_demo(cfg.eps / 8, cfg.eps, cfg.n, seed=cfg.seed)
    ok = dec(g0) and dec(g1) and floor > 0 and demo.passed
    return {"rows": [dataclasses.asdict(r) for r in rows], "gap0_decreasing": dec(g0),
            "gap1_decreasing": dec(g1), "gap2_floor": floor, "nf_demo": demo.as_dict(),
            "passed": ok, "criteria": [8, 9]}


def cmd_orbit(cfg: RunConfig, out: Path) -> dict:
    p = _params(cfg)
    fmap = _build_map(cfg, p)
    if cfg.map == "g_collapse":
        x0 = dynamics.ball_cloud(base_point(cfg.n), p.rho / 2, cfg.samples or 200, cfg.seed)
    else:
        x0 = base_point(cfg.n)
    rec = dynamics.iterate_orbit(fmap, x0, cfg.steps)
    first = rec.points if rec.points.ndim == 2 else rec.points[:, 0, :]
    write_csv(out / f"orbit_{cfg.map}.csv", ["step"] + [f"x{k + 1}" for k in range(cfg.n)],
              ([k, *pt] for k, pt in enumerate(first, start=1)))
    last = np.abs(np.asarray(rec.last))
    tail = float(np.max(np.minimum(last[1:], 1 - last[1:]))) if cfg.steps > 1 else 0.0
    result = {"map": cfg.map, "steps": cfg.steps, "max_abs_xn_from_step2": tail,
              "criteria": [9]}
    result["passed"] = tail < 1e-9 if cfg.map == "g_collapse" else True
    return result


def cmd_coverage(cfg: RunConfig, out: Path) -> dict:
    p = _params(cfg)
    fmap = _build_map(cfg, p)
    samples = cfg.samples or (1_000_000 if cfg.n >= 3 else 100_000)
    grid = dynamics.coverage_scan(fmap, base_point(cfg.n), p.rho / 2, cfg.grid or 32,
                                  60, samples, cfg.seed)
    write_csv(out / f"coverage_{cfg.map}.csv", ["iterate", "fraction"],
              enumerate(grid.history))
    full = grid.covered_at is not None
    ok = (not full) if cfg.map == "g_collapse" else full
    return {"map": cfg.map, "resolution": grid.resolution, "samples": samples,
            "final_fraction": grid.fraction, "covered_at": grid.covered_at,
            "passed": ok, "criteria": [9]}


def cmd_report(cfg: RunConfig, out: Path) -> dict:
    criteria: dict[int, list] = {k: [] for k in range(1, 13)}
    for path in sorted(out.glob("*.json")):
        if path.name == "report.json":
            continue
        data = json.loads(path.read_text(encoding="utf-8"))
        for c in data.get("criteria", []):
            criteria[c].append((path.name, bool(data.get("passed"))))
    summary = {}
    for c, entries in criteria.items():
        if not entries:
            summary[str(c)] = {"status": "not run", "sources": []}
        else:
            summary[str(c)] = {"status": "pass" if all(ok for _, ok in entries) else "fail",
                               "sources": [name for name, _ in entries]}
    ran = [v for v in summary.values() if v["status"] != "not run"]
    return {"criteria": summary, "passed": all(v["status"] == "pass" for v in ran)}


HANDLERS = {
    "params": cmd_params, "profiles": cmd_profiles, "certify-cones": cmd_certify_cones,
    "critical-set": cmd_critical_set, "folds": cmd_folds, "flatten-check": cmd_flatten_check,
    "collapse": cmd_collapse, "orbit": cmd_orbit, "coverage": cmd_coverage,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run configuration")
    g.add_argument("--n", type=int, help="torus dimension (default 3)")
    g.add_argument("--a", type=float, help="cone parameter in (0, 3/7) (default 0.3)")
    g.add_argument("--eps", type=float, help="flattening C^2 budget (default 1e-2)")
    g.add_argument("--seed", type=int, help="RNG seed recorded in every report (default 0)")
    g.add_argument("--grid", type=int, help="lattice density / level count / cells per axis")
    g.add_argument("--samples", type=int, help="sample count for the command")
    g.add_argument("--out", help="output directory (default torusfold-out)")
    g.add_argument("--map", choices=MAPS, help="map selector (default f)")
    g.add_argument("--threads", type=int, help="worker cap for sampling (default 1)")
    g.add_argument("--steps", type=int, help="orbit length (default 1000)")
    g.add_argument("--rho-halvings", dest="rho_halvings", type=int,
                   help="collapse radius halvings (default 4)")
    g.add_argument("--config", help="key = value file; flags and TORUSFOLD_* env override it")

    parser = argparse.ArgumentParser(
        prog="torusfold",
        description="Certify and experiment with a singular expanding endomorphism of T^n.",
        epilog=f"Every flag also reads from the environment as {ENV_PREFIX}<NAME>, "
               f"e.g. {ENV_PREFIX}SEED=7.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "params": "solve and verify the parameter chain",
        "profiles": "build the bump profiles, check point values and derivative caps",
        "certify-cones": "sampled unstable-cone certification for --map",
        "critical-set": "sample the critical set sphere bundle",
        "folds": "classify critical points as fold / non-fold",
        "flatten-check": "implicit-function bounds, C^2 distance of F, det DF, flatness",
        "collapse": "C^0/C^1/C^2 gaps of the collapse map over halvings of rho",
        "orbit": "iterate --map from p (or from B(p, rho/2) for g_collapse)",
        "coverage": "grid coverage of the orbit cloud of B(p, rho/2)",
        "report": "aggregate the JSON reports in --out per acceptance criterion",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def failed_checks(result: dict) -> list[str]:
    """Names of the invariants behind a failing report."""
    names = list(result.get("failures", [])) + list(result.get("precondition_failures", []))
    for k, v in result.items():
        if k == "passed":
            continue
        if v is False:
            names.append(k)
        elif isinstance(v, dict) and v.get("passed") is False:
            names.append(k)
    if result.get("violations"):
        names.append(f"{result['violations']} cone violations")
    return names


def main(argv=None, environ=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args, environ)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = HANDLERS[args.command](cfg, out)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TorusFoldError as exc:
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    result = {"command": args.command, "seed": cfg.seed, "n": cfg.n} | result
    name = args.command.replace("-", "_")
    if args.command in ("certify-cones", "orbit", "coverage"):
        name += f"_{cfg.map}"
    write_json(out / f"{name}.json", result)
    status = "PASS" if result.get("passed") else "FAIL"
    print(f"{args.command}: {status} -> {out / (name + '.json')}")
    if not result.get("passed"):
        names = failed_checks(result)
        if names:
            print(f"failed: {'; '.join(names)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
