"""Command-line front end.

Subcommands: catalog | critical | commute | flow | displace | fiber | report.
Configuration comes from an optional flat key=value file plus command-line
overrides; all randomness is seeded, so identical configurations produce
byte-identical outputs.  Floats are serialized with 17 significant digits
for exact round-tripping.

Exit codes: 0 success/verified, 1 verification failed, 2 usage error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import brackets, critical, displacement, dynamics, fiberscan, systems
from .critical import OptimizerSpec, SigmaSet, sphere_bundle, zero_section
from .displacement import GridSpec
from .errors import (ConstructionError, IntegrationFailure, LiouvilleError,
                     ParameterError, PreconditionError, UsageError)
from .geometry import SpaceKind

SCHEMA_VERSION = "1"

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if x != x:
        return '"nan"'
    if x == math.inf:
        return '"inf"'
    if x == -math.inf:
        return '"-inf"'
    if x == int(x) and abs(x) < 1e16:
        return f"{x:.1f}"
    return format(x, ".17g")


def to_json(obj, indent: int = 0) -> str:
    """Deterministic JSON with 17-significant-digit floats."""
    pad = "  " * indent
    pad2 = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return '"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(obj, (list, tuple, np.ndarray)):
        items = [to_json(v, indent + 1) for v in obj]
        if not items:
            return "[]"
        if all(len(s) < 24 and "\n" not in s for s in items) and len(items) <= 12:
            return "[" + ", ".join(items) + "]"
        return "[\n" + ",\n".join(pad2 + s for s in items) + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        rows = [f'{pad2}"{k}": ' + to_json(v, indent + 1) for k, v in obj.items()]
        return "{\n" + ",\n".join(rows) + "\n" + pad + "}"
    raise UsageError(f"cannot serialize {type(obj)!r}")


def _emit(doc: dict, out: str | None, suffix: str = ".json"):
    text = to_json(doc) + "\n"
    if out:
        path = out if out.endswith(suffix) else out + suffix
        with open(path, "w") as fh:
            fh.write(text)
        print(f"wrote {path}")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Configuration plumbing
# ---------------------------------------------------------------------------

def _parse_params(text: str | None) -> dict:
    if not text:
        return {}
    out = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise UsageError(f"bad parameter {item!r}; expected key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = float(v)
    return out


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"bad config line {line!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _parse_sigma(space, text: str | None) -> SigmaSet:
    if not text or text == "zero":
        return zero_section(space)
    if text.startswith("sphere:"):
        return sphere_bundle(space, float(text.split(":", 1)[1]))
    raise UsageError(f"bad sigma {text!r}; use 'zero' or 'sphere:R'")


def _build(args) -> systems.IntegrableSystem:
    cfg = _read_config(getattr(args, "config", None))
    name = args.system or cfg.get("system")
    if not name:
        raise UsageError("no system given (use --system)")
    params = _parse_params(cfg.get("params"))
    params.update(_parse_params(args.params))
    return systems.build_system(name, params)


def _header(args, system=None) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "seed": int(args.seed)}
    if system is not None:
        doc["system"] = system.name
        doc["params"] = {k: float(v) for k, v in system.params.items()}
    return doc


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_catalog(args) -> int:
    print("available systems:")
    for name, entry in systems.CATALOG.items():
        defaults = ", ".join(f"{k}={v:g}" for k, v in entry.defaults.items()) or "-"
        print(f"  {name:20s} params: {entry.param_schema}")
        print(f"  {'':20s} defaults: {defaults}")
        print(f"  {'':20s} critical fiber value: {entry.y0_formula}")
    return EXIT_OK


def cmd_critical(args) -> int:
    system = _build(args)
    opt = OptimizerSpec(seed=args.seed,
                        grid_density=args.grid if args.grid else None)
    sigma = _parse_sigma(system.space, args.sigma)
    report = critical.singleton_check(system, sigma, opt)
    doc = _header(args, system)
    doc["critical"] = report.to_dict()
    _emit(doc, args.out)
    ok = report.is_singleton and (report.matches_prediction is not False)
    return EXIT_OK if ok else EXIT_FAILED


def cmd_commute(args) -> int:
    system = _build(args)
    rep = brackets.verify_commutation(system, n=args.samples, seed=args.seed)
    doc = _header(args, system)
    doc["commutation"] = {
        "max_abs_bracket": rep.max_abs,
        "worst_pair": list(rep.worst_pair),
        "n_samples": rep.n_samples,
        "tolerance": 1e-8,
        "passed": rep.max_abs <= 1e-8,
    }
    _emit(doc, args.out)
    return EXIT_OK if rep.max_abs <= 1e-8 else EXIT_FAILED


def _state_row(space, x):
    if space.kind is SpaceKind.CIRCLE:
        return [float(x.q), float(x.p)]
    if space.kind is SpaceKind.SPHERE2:
        return [*np.asarray(x.q).tolist(), *np.asarray(x.p).tolist()]
    return [*np.asarray(x.q).ravel().tolist(), *np.asarray(x.p).tolist()]


def _state_header(space):
    if space.kind is SpaceKind.CIRCLE:
        return ["q", "p"]
    if space.kind is SpaceKind.SPHERE2:
        return ["q1", "q2", "q3", "p1", "p2", "p3"]
    return [f"Q{i}{j}" for i in range(1, 4) for j in range(1, 4)] + \
        ["l1", "l2", "l3"]


def cmd_flow(args) -> int:
    system = _build(args)
    rng = np.random.default_rng(args.seed)
    x0 = brackets.sample_phase_points(system.space, 1, rng,
                                      momentum_radius=args.radius)[0]
    spec = dynamics.FlowSpec(T=args.T, h=args.h, method=args.method)
    traj = dynamics.flow(system.components[0], x0, spec)
    rep = dynamics.conservation_report(system, x0, spec)
    base = args.out or "trajectory"
    csv_path = base + ".csv"
    stride = max(1, len(traj) // args.max_rows)
    with open(csv_path, "w") as fh:
        cols = ["t"] + _state_header(system.space) + \
            [f"Phi{i + 1}" for i in range(system.k)]
        fh.write(",".join(cols) + "\n")
        for i in range(0, len(traj), stride):
            x = traj[i]
            t = i * spec.T / max(1, len(traj) - 1)
            row = [t] + _state_row(system.space, x) + \
                [float(c.eval(x)) for c in system.components]
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")
    doc = _header(args, system)
    doc["flow"] = {
        "T": spec.T, "h": spec.h, "method": spec.method,
        "steps": rep.steps,
        "component_drifts": list(rep.component_drifts),
        "casimir_drifts": rep.casimir_drifts,
        "constraint_max": rep.constraint_max,
        "initial_values": list(rep.initial_values),
        "trajectory_csv": csv_path,
    }
    _emit(doc, base + "_report")
    return EXIT_OK


def cmd_displace(args) -> int:
    system = _build(args)
    sigma = _parse_sigma(system.space, args.sigma)
    H = system.components[0]
    grid = GridSpec(density=args.grid if args.grid else None, seed=args.seed)
    if args.fiber:
        y = tuple(float(v) for v in args.fiber.split(","))
        res = displacement.classify_fibers(system, [y], sigma, grid=grid)[0]
        doc = _header(args, system)
        doc["fiber_classification"] = res.to_dict()
        _emit(doc, args.out)
        if res.status in ("CRITICAL", "DISJOINT"):
            return EXIT_OK
        if res.status == "DISPLACED":
            return EXIT_OK if res.certificate.valid else EXIT_FAILED
        return EXIT_FAILED
    if args.level is None:
        raise UsageError("need --level or --fiber")
    cert = displacement.search_displacing_function(
        H, args.level, sigma, grid=grid, seed=args.seed,
        system_name=system.name)
    doc = _header(args, system)
    doc["certificate"] = cert.to_dict()
    _emit(doc, args.out)
    return EXIT_OK if cert.valid else EXIT_FAILED


def cmd_fiber(args) -> int:
    system = _build(args)
    if not args.fiber:
        raise UsageError("need --fiber y1,y2,...")
    y = tuple(float(v) for v in args.fiber.split(","))
    if len(y) != system.k:
        raise UsageError(f"fiber value needs {system.k} components")
    rep = critical.singleton_check(system)
    fs = fiberscan.sample_fiber(system, y, n=args.samples, seed=args.seed,
                                targeted=rep.S_points[:16])
    cov = fiberscan.projection_coverage(system, y, q_grid=args.grid or 500,
                                        seed=args.seed)
    doc = _header(args, system)
    doc["fiber"] = fs.to_dict()
    doc["fiber"]["projection_coverage"] = cov
    _emit(doc, args.out)
    if args.out:
        csv_path = args.out + "_points.csv"
        with open(csv_path, "w") as fh:
            cols = _state_header(system.space) + ["rank"]
            fh.write(",".join(cols) + "\n")
            for x, r in zip(fs.points, fs.ranks):
                row = _state_row(system.space, x)
                fh.write(",".join(format(v, ".17g") for v in row)
                         + f",{r}\n")
        print(f"wrote {csv_path}")
    return EXIT_OK


def _report_certificate(system, report, seed):
    """Displacement certificate for a canonical sub-critical level."""
    H = system.components[0]
    sigma = system.natural_sigma or zero_section(system.space)
    h = critical.restricted_hamiltonian(H, sigma)
    g = critical.restricted_gradient(H, sigma)
    neg_best, _, _ = critical.maximize_on_configuration(
        system.space, lambda q: -h(q), lambda q: -np.asarray(g(q)),
        OptimizerSpec(starts=16, grid_density=4000))
    h_min = -neg_best
    m_H = report.m_H
    if m_H - h_min < 1e-9:
        return None, ("restricted Hamiltonian is constant on the base; "
                      "no level lies strictly below the minimax value")
    c = h_min + 0.25 * (m_H - h_min)
    density = 30_000 if system.space.kind is SpaceKind.ROTATION_GROUP else 10_000
    cert = displacement.search_displacing_function(
        H, c, sigma, grid=GridSpec(density=density, seed=seed),
        seed=seed, m_H=m_H, system_name=system.name)
    return cert, None


def cmd_report(args) -> int:
    rows = []
    all_ok = True
    for system in systems.headline_catalog():
        rep = critical.singleton_check(
            system, optimizer=OptimizerSpec(seed=args.seed))
        com = brackets.verify_commutation(system, n=1000, seed=args.seed)
        cert, note = _report_certificate(system, rep, args.seed)
        row = {
            "system": system.name,
            "params": {k: float(v) for k, v in system.params.items()},
            "m_H": rep.m_H,
            "y0_computed": [float(v) for v in rep.y0],
            "y0_predicted": [float(v) for v in rep.predicted_y0],
            "y0_match": bool(rep.matches_prediction),
            "singleton_diameter": rep.singleton_diameter,
            "is_singleton": rep.is_singleton,
            "continuum": rep.continuum,
            "commutation_max": com.max_abs,
            "commutation_ok": com.max_abs <= 1e-8,
        }
        if cert is not None:
            row["certificate"] = cert.to_dict()
            all_ok = all_ok and cert.valid
        else:
            row["certificate_note"] = note
        all_ok = all_ok and row["y0_match"] and row["commutation_ok"] \
            and rep.is_singleton
        rows.append(row)
    doc = {"schema_version": SCHEMA_VERSION, "seed": int(args.seed),
           "systems": rows}
    base = args.out or "report"
    _emit(doc, base)
    md = _report_markdown(rows)
    with open(base + ".md", "w") as fh:
        fh.write(md)
    print(f"wrote {base}.md")
    return EXIT_OK if all_ok else EXIT_FAILED


def _report_markdown(rows) -> str:
    def fmt_vec(v):
        return "(" + ", ".join(format(x, ".6g") for x in v) + ")"

    lines = [
        "| system | m_H | y0 computed | y0 predicted | match | max bracket | certificate margin |",
        "|---|---|---|---|---|---|---|",
    ]
    for r in rows:
        cert = r.get("certificate")
        margin = format(cert["margin"], ".4g") if cert else "n/a"
        lines.append(
            f"| {r['system']} | {format(r['m_H'], '.10g')} | "
            f"{fmt_vec(r['y0_computed'])} | {fmt_vec(r['y0_predicted'])} | "
            f"{'yes' if r['y0_match'] else 'NO'} | "
            f"{format(r['commutation_max'], '.3g')} | {margin} |")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _common(sp):
    sp.add_argument("--system", help="catalog system name")
    sp.add_argument("--params", help="comma-separated key=value overrides")
    sp.add_argument("--config", help="flat key=value config file")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="output path base (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="liouville",
        description="integrable-system toolkit: commutation checks, critical "
                    "fiber values, flows, fibers, and displacement certificates")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("catalog", help="list systems and parameter schemas")

    sp = sub.add_parser("critical", help="minimax value and singleton check")
    _common(sp)
    sp.add_argument("--sigma", default="zero")
    sp.add_argument("--grid", type=int, help="certification grid density")

    sp = sub.add_parser("commute", help="max |{Phi_i, Phi_j}| over samples")
    _common(sp)
    sp.add_argument("--samples", type=int, default=1000)

    sp = sub.add_parser("flow", help="integrate the distinguished Hamiltonian")
    _common(sp)
    sp.add_argument("--T", type=float, default=50.0)
    sp.add_argument("--h", type=float, default=1e-3)
    sp.add_argument("--method", default="symmetric2",
                    choices=["symmetric2", "adaptive5"])
    sp.add_argument("--radius", type=float, default=0.5,
                    help="momentum-ball radius for the seeded start point")
    sp.add_argument("--max-rows", type=int, default=5000,
                    help="max trajectory rows in the CSV")

    sp = sub.add_parser("displace", help="graph-shift displacement certificate")
    _common(sp)
    sp.add_argument("--sigma", default="zero")
    sp.add_argument("--level", type=float, help="sublevel value c")
    sp.add_argument("--fiber", help="fiber value y1,y2,... to classify")
    sp.add_argument("--grid", type=int, help="verification grid density")

    sp = sub.add_parser("fiber", help="sample a fiber and its rank profile")
    _common(sp)
    sp.add_argument("--fiber", help="fiber value y1,y2,...")
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--grid", type=int, help="coverage grid density")

    sp = sub.add_parser("report", help="full catalog summary table")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="output path base (default: report)")
    return ap


_HANDLERS = {
    "catalog": cmd_catalog,
    "critical": cmd_critical,
    "commute": cmd_commute,
    "flow": cmd_flow,
    "displace": cmd_displace,
    "fiber": cmd_fiber,
    "report": cmd_report,
}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0,) else 0
    try:
        return _HANDLERS[args.command](args)
    except (UsageError, ParameterError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (PreconditionError, ConstructionError, IntegrationFailure) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LiouvilleError as e:   # pragma: no cover
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
