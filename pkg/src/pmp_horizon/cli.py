"""``pmp-horizon`` command line: run a certification and write the report.

Exit status: 0 CERTIFIED-EXTREMAL, 2 FAIL, 3 NON-CERTIFIED, 1 usage or
configuration error.  Log verbosity is read from ``PMP_HORIZON_LOG``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import certify as cf
from .catalog import CATALOG, catalog_names, catalog_raw, describe
from .pipeline import Analysis, Numerics, RunConfig, analyze
from .problem import ProblemError, validate

__all__ = ["main", "ConfigError", "load_config", "build_report", "write_csv", "EXIT"]

log = logging.getLogger("pmp_horizon")

EXIT = {"CERTIFIED-EXTREMAL": 0, "FAIL": 2, "NON-CERTIFIED": 3}
EXIT_USAGE = 1


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pmp-horizon", description="Certify candidate extremals of infinite-horizon control problems.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="run the certification pipeline")
    r.add_argument("--catalog", metavar="NAME", help="built-in problem (see `list`)")
    r.add_argument("--config", metavar="FILE", help="TOML run configuration")
    r.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="sets",
                   help="override a parameter, candidate.uJ, numerics.*, truncation.schedule or continuity.*")
    r.add_argument("--out", metavar="DIR", default=".", help="output directory (default: current)")
    r.add_argument("--csv", action="store_true", help="also write the per-node trace as CSV")
    sub.add_parser("list", help="list catalog problems")
    return p


# ---------------------------------------------------------------------------
# configuration


def _floats(v: Any, key: str) -> tuple[float, ...]:
    if isinstance(v, str):
        v = [s for s in v.replace(" ", "").split(",") if s]
    try:
        return tuple(float(s) for s in v)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a list of numbers, got {v!r}") from None


def _number(v: Any, key: str) -> float:
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {v!r}") from None


def load_config(catalog: str | None, config: str | None, sets: Sequence[str]) -> tuple[RunConfig, str, dict]:
    """Build a :class:`RunConfig` and its hash.

    The hash is the sha256 of the config file bytes when a file is given,
    otherwise of the canonical JSON of the catalog name and ``--set`` list.
    """
    doc: dict[str, Any] = {}
    if config is not None:
        path = Path(config)
        try:
            data = path.read_bytes()
        except OSError as err:
            raise ConfigError(f"cannot read config {config}: {err.strerror or err}") from None
        try:
            doc = tomllib.loads(data.decode("utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as err:
            raise ConfigError(f"{config}: {err}") from None
        digest = hashlib.sha256(data).hexdigest()
    else:
        canon = json.dumps({"catalog": catalog, "set": list(sets)}, sort_keys=True, separators=(",", ":"))
        digest = hashlib.sha256(canon.encode()).hexdigest()

    prob = dict(doc.get("problem", {}))
    numerics = dict(doc.get("numerics", {}))
    trunc = dict(doc.get("truncation", {}))
    cont = dict(doc.get("continuity", {}))
    name = catalog or prob.pop("catalog", None)
    params = dict(prob.pop("params", {})) if name else {}
    candidate: dict[int, str] = {}
    inline_params: dict[str, float] = {}

    for item in sets:
        key, sep, value = item.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        head, _, tail = key.partition(".")
        if head == "numerics" and tail:
            numerics[tail] = value
        elif head == "truncation" and tail == "schedule":
            trunc["schedule"] = value
        elif head == "continuity" and tail in ("radii", "samples", "seed"):
            cont[tail] = value
        elif head == "candidate" and tail.startswith("u") and tail[1:].isdigit():
            candidate[int(tail[1:])] = value
        elif not tail:
            (params if name else inline_params)[key] = _number(value, key)
        else:
            raise ConfigError(f"unknown --set key {key!r}")

    if name:
        if prob:
            raise ConfigError("a catalog problem takes only 'params' in [problem]")
        try:
            raw = catalog_raw(name, {k: _number(v, k) for k, v in params.items()})
        except ProblemError as err:
            raise ConfigError(str(err)) from None
    elif prob:
        raw = prob
        raw.setdefault("name", Path(config).stem if config else "inline")
        raw["params"] = {**dict(raw.get("params", {})), **inline_params}
    else:
        raise ConfigError("no problem given: use --catalog NAME or a [problem] table in --config")

    if candidate:
        k = int(raw.get("control_dim", 1))
        cur = raw.get("candidate")
        piece = list(cur) if isinstance(cur, list) and len(cur) == k else ["0"] * k
        for j, v in candidate.items():
            if j >= k:
                raise ConfigError(f"candidate.u{j}: control has only {k} component(s)")
            piece[j] = v
        raw["candidate"] = piece

    known = {f.name for f in fields(Numerics)}
    bad = set(numerics) - known
    if bad:
        raise ConfigError(f"unknown numerics key(s): {sorted(bad)}")
    nm_kw = {k: (int(_number(v, k)) if k == "u_resolution" else _number(v, k)) for k, v in numerics.items()}
    bad = (set(trunc) - {"schedule"}) | (set(cont) - {"radii", "samples", "seed"})
    if bad:
        raise ConfigError(f"unknown key(s): {sorted(bad)}")
    try:
        kw: dict[str, Any] = {"problem": raw, "numerics": Numerics(**nm_kw)}
        if "schedule" in trunc:
            kw["schedule"] = _floats(trunc["schedule"], "truncation.schedule")
        if "radii" in cont:
            kw["radii"] = _floats(cont["radii"], "continuity.radii")
        if "samples" in cont:
            kw["samples"] = int(_number(cont["samples"], "continuity.samples"))
        if "seed" in cont:
            kw["seed"] = int(_number(cont["seed"], "continuity.seed"))
        cfg = RunConfig(**kw)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    source = {"catalog": name} if name else {"config": str(config)}
    return cfg, digest, source


# ---------------------------------------------------------------------------
# report


def _clean(v: Any) -> Any:
    """JSON-safe copy: arrays to lists, non-finite floats to null."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def build_report(a: Analysis, cfg: RunConfig, digest: str, source: dict) -> dict[str, Any]:
    cert = a.cert
    rep = a.report
    return _clean({
        "config_hash": digest,
        "problem": {"name": a.spec.name, **source, "params": dict(sorted(a.spec.params.items())),
                    "state_dim": a.spec.state_dim, "control_dim": a.spec.control_dim},
        "numerics": {**asdict(cfg.numerics), "schedule": list(cfg.schedule),
                     "continuity": {"radii": list(cfg.radii), "samples": cfg.samples, "seed": cfg.seed}},
        "lambda0": cert.lambda0 if cert else None,
        "Lambda0": cert.Lambda0 if cert else None,
        "converged": bool(a.trace.converged) if a.trace else False,
        "onset": a.trace.onset if a.trace else None,
        "checks": [{"name": c.name, "summary": c.summary, "tol": c.tol, "status": c.status}
                   for c in rep.checks],
        "truncation": [{"tau": r.tau, "deviation": r.deviation} for r in a.truncation or []],
        "continuity": [{"radius": r.radius, "deviation": r.deviation} for r in a.continuity or []],
        "verdict": rep.verdict,
        "failures": list(rep.failures),
        "reason": rep.reason or None,
        "provenance": rep.provenance,
    })


def write_csv(a: Analysis, path: Path) -> None:
    """One row per mesh node; 17 significant digits."""
    fund, cert, trace = a.fund, a.cert, a.trace
    if fund is None:
        return
    t = fund.mesh
    m = a.spec.state_dim
    x = fund.state.values
    nan = np.full((t.size, m), np.nan)
    if cert is not None and cert.certified:
        psi = cert.psi.values
        psiA = np.linalg.norm(np.einsum("ni,nij->nj", psi, fund.A.values), axis=-1)
        H = cf.hamiltonian_values(a.spec, fund.state, cert, t)
        try:
            r = a.report.check("max-condition").values
        except KeyError:
            r = np.full(t.size, np.nan)
    else:
        psi, psiA, H, r = nan, np.full(t.size, np.nan), np.full(t.size, np.nan), np.full(t.size, np.nan)
    header = (["t"] + [f"x[{i}]" for i in range(m)] + [f"psi[{i}]" for i in range(m)] + ["psiA_norm"]
              + [f"I[{i}]" for i in range(m)] + ["H", "max_residual"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for n in range(t.size):
            row = [t[n], *x[n], *psi[n], psiA[n], *trace.values[n], H[n], r[n]]
            w.writerow([format(float(v), ".17g") for v in row])


# ---------------------------------------------------------------------------


def _cmd_list() -> int:
    for name in catalog_names():
        defaults = CATALOG[name][1]
        ps = ", ".join(f"{k}={v:g}" for k, v in defaults.items()) or "-"
        print(f"{name:16s} [{ps}]  {describe(name)}")
    return 0


def _cmd_run(args) -> int:
    try:
        cfg, digest, source = load_config(args.catalog, args.config, args.sets)
        spec = validate(cfg.problem, check_horizon=cfg.numerics.T_max)
    except (ConfigError, ProblemError) as err:
        print(f"pmp-horizon: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    a = analyze(spec, cfg)
    report = build_report(a, cfg, digest, source)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        stem = spec.name
        (out / f"{stem}.report.json").write_text(json.dumps(report, indent=2) + "\n")
        if args.csv:
            write_csv(a, out / f"{stem}.trace.csv")
    except OSError as err:
        print(f"pmp-horizon: error: cannot write output: {err}", file=sys.stderr)
        return EXIT_USAGE
    for c in report["checks"]:
        s = "-" if c["summary"] is None else f"{c['summary']:.3e}"
        print(f"  {c['name']:26s} {s:>10s}  tol {c['tol']:.0e}  {c['status']}")
    lam = report["lambda0"]
    print(f"{spec.name}: lambda0={lam if lam is None else format(lam, '.10g')} verdict={a.report.verdict}")
    if a.report.reason:
        print(f"  reason: {a.report.reason}")
    return EXIT[a.report.verdict]


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("PMP_HORIZON_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    if args.command == "list":
        return _cmd_list()
    return _cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
