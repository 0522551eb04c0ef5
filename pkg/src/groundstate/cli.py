"""Configuration-driven pipeline: hypotheses, exponents, shooting, separation, expansion, evolution.

A config is a TOML file with one table per stage::

    [potential]
    family = "PurePower"
    q = 4.0

    [run]
    n = 13
    alphas = [1.0, 2.0, 4.0]

Every stage after the hypothesis check is skipped when a hypothesis fails.
Artifacts are deterministic: identical config and version give identical
CSV and JSON files. A ``manifest.json`` lists every file with its hash.

Exit codes: 0 all verdicts pass, 1 a verdict failed or a stage was skipped,
2 usage, config or IO error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .errors import ConfigError, GroundStateError, InvalidSpecError, SubcriticalError
from .exponents import derive_exponents
from .expand import fowler_expand, residual_report
from .parabolic import (
    RadialField,
    SchemeConfig,
    build_grid,
    evolve,
    profile_on_grid,
    run_stability_experiment,
    run_weak_asymptotic_experiment,
)
from .potentials import PotentialSpec, check_hypotheses
from .separation import (
    verify_coefficient_monotonicity,
    verify_ordering,
    verify_phase_bounds,
    verify_singular_majorant,
)
from .stationary import classify_decay, fit_tail, shoot, singular_orbit

log = logging.getLogger("groundstate")

STAGES = ("check", "exponents", "shoot", "fit", "separation", "expand", "evolve", "experiment")
GATED = {"shoot", "fit", "separation", "expand", "evolve", "experiment", "exponents"}
REQUIRED_HYPOTHESES = ("G0", "G1", "G2", "G3", "G4", "K")

DEFAULTS = {
    "run": {"n": 13, "alphas": [1.0, 2.0, 4.0], "stages": list(STAGES)},
    "shoot": {"rMax": 1e3, "tol": 1e-10, "pointsPerDecade": 32, "method": "RK45", "singular": False},
    "fit": {"tol": 1e-12, "method": "DOP853"},
    "separation": {"alphas": None, "rMax": 1e2, "rMin": 1e-3, "halvings": 3},
    "expand": {"alpha": None, "a": None, "b": None, "theta": None},
    "evolve": {"alpha": 1.0, "T": 10.0, "scale": 1.0, "Rmax": 1e3, "pointsPerDecade": 48,
               "wellBalanced": False, "dtMax": 0.05, "ceiling": 1e8, "samples": 21},
    "experiment": {"kinds": ["stability", "weak"], "alpha": 1.0, "d": 0.5, "lPrime": None, "T": 10.0,
                   "k": 1, "Rmax": None, "pointsPerDecade": 48, "samples": 21},
    "output": {"dir": "out"},
}
POTENTIAL_KEYS = {"family", "q", "delta", "kInf", "amp", "eta", "gamma",
                  "q1", "q2", "delta1", "delta2", "kInf1", "amp1", "eta1", "gamma1",
                  "kInf2", "amp2", "eta2", "gamma2"}


# ---------------------------------------------------------------------------
# config

def parse_override(text: str) -> tuple[list[str], object]:
    """``table.key=value`` with the value read as a TOML literal, else as a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = key.strip().split(".")
    if len(path) != 2 or not all(path):
        raise ConfigError(f"override key {key!r} must be table.key")
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()
    return path, value


def load_config(path, overrides=()) -> tuple[dict, str]:
    """Parse, apply overrides, validate and fill defaults.

    Returns
    -------
    config : dict
    input_hash : str
        sha256 of the config bytes and the override strings.

    Raises
    ------
    ConfigError
        Unreadable or unparseable file, unknown table or key, bad value.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = tomli.loads(data.decode("utf-8"))
    except (tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    h = hashlib.sha256(data)
    for ov in overrides:
        (table, key), value = parse_override(ov)
        raw.setdefault(table, {})[key] = value
        h.update(b"\0" + ov.encode("utf-8"))
    return validate_config(raw), h.hexdigest()


def validate_config(raw: dict) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    for table, body in raw.items():
        if not isinstance(body, dict):
            raise ConfigError(f"top-level key {table!r} must be a table")
        if table == "potential":
            bad = set(body) - POTENTIAL_KEYS
            if bad:
                raise ConfigError(f"unknown key {sorted(bad)[0]!r} in [potential]")
            cfg["potential"] = dict(body)
            continue
        if table not in cfg:
            raise ConfigError(f"unknown table [{table}]")
        for key, value in body.items():
            if key not in cfg[table]:
                raise ConfigError(f"unknown key {key!r} in [{table}]")
            cfg[table][key] = value
    if "potential" not in cfg:
        raise ConfigError("missing table [potential]")
    try:
        PotentialSpec.from_dict(cfg["potential"])
    except (InvalidSpecError, TypeError, ValueError) as exc:
        raise ConfigError(f"[potential]: {exc}") from None
    for st in cfg["run"]["stages"]:
        if st not in STAGES:
            raise ConfigError(f"unknown stage {st!r} in [run].stages")
    for kind in cfg["experiment"]["kinds"]:
        if kind not in ("stability", "weak"):
            raise ConfigError(f"unknown experiment kind {kind!r}")
    alphas = cfg["run"]["alphas"]
    if not isinstance(alphas, list) or not alphas or not all(isinstance(a, (int, float)) for a in alphas):
        raise ConfigError("[run].alphas must be a non-empty list of numbers")
    return cfg


# ---------------------------------------------------------------------------
# artifacts

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(obj, complex):
        return {"re": _clean(obj.real), "im": _clean(obj.imag)}
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


class Artifacts:
    """Writes files under the output directory and remembers them for the manifest."""

    def __init__(self, out: Path):
        self.out = Path(out)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def json(self, name: str, obj) -> str:
        with open(self.path(name), "w") as fh:
            json.dump(_clean(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return name

    def csv(self, name: str, header, rows) -> str:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(x)) for x in row])
        return name


def _label(alpha: float) -> str:
    return f"{float(alpha):g}"


# ---------------------------------------------------------------------------
# stages; each returns (verdict, files)

def stage_check(ctx):
    rep = check_hypotheses(ctx.spec, ctx.n)
    ctx.hypotheses = rep
    files = [ctx.art.json("hypotheses.json", rep.to_dict())]
    failed = [h for h in REQUIRED_HYPOTHESES if rep.verdicts.get(h) == "fail"]
    return ("pass" if not failed else "fail: " + ", ".join(failed)), files


def stage_exponents(ctx):
    try:
        table = derive_exponents(ctx.spec, ctx.n)
    except SubcriticalError as exc:
        body = exc.table.to_dict() if exc.table is not None else {}
        body["error"] = str(exc)
        return "fail: subcritical", [ctx.art.json("exponents.json", body)]
    ctx.table = table
    return "pass", [ctx.art.json("exponents.json", table.to_dict())]


def _table(ctx):
    if ctx.table is None:
        ctx.table = derive_exponents(ctx.spec, ctx.n)
    return ctx.table


def stage_shoot(ctx):
    c = ctx.cfg["shoot"]
    table = _table(ctx)
    files, decays = [], {}
    for a in ctx.alphas:
        gs = shoot(ctx.spec, ctx.n, a, rMax=c["rMax"], tol=c["tol"],
                   points_per_decade=c["pointsPerDecade"], method=c["method"])
        ctx.profiles[a] = gs
        name = f"profile_alpha_{_label(a)}.csv"
        gs.to_csv(ctx.art.path(name))
        files.append(name)
        try:
            decays[_label(a)] = classify_decay(gs, table)
        except GroundStateError as exc:
            decays[_label(a)] = f"inconclusive: {exc}"
    if c["singular"]:
        so = singular_orbit(ctx.spec, ctx.n, tol=c["tol"], method=c["method"])
        so.to_csv(ctx.art.path("profile_singular.csv"))
        files.append("profile_singular.csv")
    files.append(ctx.art.json("shoot.json", {"decay": decays, "rMax": c["rMax"]}))
    bad = [k for k, v in decays.items() if v not in ("slow", "fast")]
    return ("pass" if not bad else "fail: decay " + ", ".join(bad)), files


def _fit(ctx, alpha):
    if alpha not in ctx.fits:
        c = ctx.cfg["fit"]
        gs = shoot(ctx.spec, ctx.n, alpha, rMax=1e3, tol=c["tol"], method=c["method"])
        ctx.fits[alpha] = fit_tail(gs, _table(ctx), ctx.spec)
    return ctx.fits[alpha]


def stage_fit(ctx):
    out = {}
    for a in ctx.alphas:
        A, B, diag = _fit(ctx, a)
        out[_label(a)] = {"tailA": A, "tailB": B, "diagnostics": diag}
    return "pass", [ctx.art.json("fit.json", out)]


def stage_separation(ctx):
    c = ctx.cfg["separation"]
    alphas = [float(a) for a in (c["alphas"] or ctx.alphas)]
    table = _table(ctx)
    reps = {"ordering": verify_ordering(ctx.spec, ctx.n, alphas, rMax=c["rMax"], rMin=c["rMin"])}
    phase = {}
    for a in alphas:
        gs = ctx.profiles.get(a) or shoot(ctx.spec, ctx.n, a)
        phase[_label(a)] = verify_phase_bounds(gs, table, ctx.spec)
    reps["singularMajorant"] = verify_singular_majorant(ctx.spec, ctx.n, alphas, rRange=(c["rMin"], c["rMax"]))
    reps["coefficientMonotonicity"] = verify_coefficient_monotonicity(
        ctx.spec, ctx.n, alphas, rMax=c["rMax"], rMin=c["rMin"], halvings=c["halvings"])
    body = {k: v.to_dict() for k, v in reps.items()}
    body["phaseBounds"] = {k: v.to_dict() for k, v in phase.items()}
    files = [ctx.art.json("separation.json", body)]
    if reps["ordering"].curves:
        reps["ordering"].to_csv(ctx.art.path("separation_gaps.csv"))
        files.append("separation_gaps.csv")
    verdicts = {k: v.verdict for k, v in reps.items()}
    verdicts.update({f"phaseBounds {k}": v.verdict for k, v in phase.items()})
    bad = [k for k, v in verdicts.items() if v not in ("pass", "at bound")]
    return ("pass" if not bad else "fail: " + ", ".join(bad)), files


def stage_expand(ctx):
    c = ctx.cfg["expand"]
    table = _table(ctx)
    if c["a"] is None or c["b"] is None:
        alpha = float(c["alpha"] if c["alpha"] is not None else ctx.alphas[0])
        a, b, _ = _fit(ctx, alpha)
    else:
        a, b = float(c["a"]), float(c["b"])
    ex = fowler_expand(table, ctx.spec, a, b, theta=c["theta"])
    body = ex.to_dict()
    body["residual"] = residual_report(ex.series)
    ok = body["residual"]["max_relative_residual"] < 1e-10
    return ("pass" if ok else "fail: residual"), [ctx.art.json("expansion.json", body)]


def _trace_rows(trace):
    names = list(trace.norms)
    header = ["t", "umax", "umin"] + names
    rows = [[t, trace.umax[i], trace.umin[i]] + [trace.norms[k][i] for k in names]
            for i, t in enumerate(trace.times)]
    return header, rows


def stage_evolve(ctx):
    c = ctx.cfg["evolve"]
    grid = build_grid(c["Rmax"], c["pointsPerDecade"])
    U = profile_on_grid(ctx.spec, ctx.n, float(c["alpha"]), grid)
    phi = RadialField(grid, float(c["scale"]) * U.values)
    scheme = SchemeConfig(dtMax=c["dtMax"], ceiling=c["ceiling"], wellBalanced=U if c["wellBalanced"] else None)
    times = np.linspace(0.0, float(c["T"]), int(c["samples"]))
    trace, final = evolve(ctx.spec, ctx.n, phi, float(c["T"]), scheme, sampleTimes=times)
    files = [ctx.art.csv("evolve_trace.csv", *_trace_rows(trace))]
    final.to_csv(ctx.art.path("evolve_final.csv"))
    files.append("evolve_final.csv")
    files.append(ctx.art.json("evolve.json", trace.to_dict()))
    return "pass", files


def stage_experiment(ctx):
    c = ctx.cfg["experiment"]
    table = _table(ctx)
    grid = build_grid(c["Rmax"], c["pointsPerDecade"]) if c["Rmax"] is not None else None
    files, verdicts = [], {}
    if "stability" in c["kinds"]:
        res = run_stability_experiment(ctx.spec, ctx.n, float(c["alpha"]), float(c["d"]), T=float(c["T"]),
                                       grid=grid, samples=int(c["samples"]))
        body = res.to_dict()
        body["details"]["boundsAtOrigin"] = {"lower": float(res.bounds["lower"].values[0]),
                                             "upper": float(res.bounds["upper"].values[0])}
        files.append(ctx.art.json("stability.json", body))
        files.append(ctx.art.csv("stability_trace.csv", *_trace_rows(res.trace)))
        verdicts["stability"] = res.verdict
    if "weak" in c["kinds"]:
        lp = c["lPrime"]
        if lp is None:
            lp = table.m_s + abs(float(np.real(table.lambda2))) - 0.5
        res = run_weak_asymptotic_experiment(ctx.spec, ctx.n, float(c["alpha"]), float(lp), T=float(c["T"]),
                                             k=int(c["k"]), grid=grid, samples=int(c["samples"]))
        files.append(ctx.art.json("weak.json", res.to_dict()))
        files.append(ctx.art.csv("weak_trace.csv", *_trace_rows(res.trace)))
        verdicts["weak"] = res.verdict
    bad = [k for k, v in verdicts.items() if v != "pass"]
    return ("pass" if not bad else "fail: " + ", ".join(bad)), files


STAGE_FUNCS = {"check": stage_check, "exponents": stage_exponents, "shoot": stage_shoot, "fit": stage_fit,
               "separation": stage_separation, "expand": stage_expand, "evolve": stage_evolve,
               "experiment": stage_experiment}


class _Context:
    def __init__(self, cfg: dict, art: Artifacts):
        self.cfg = cfg
        self.art = art
        self.spec = PotentialSpec.from_dict(cfg["potential"])
        self.n = cfg["run"]["n"]
        self.alphas = [float(a) for a in cfg["run"]["alphas"]]
        self.table = None
        self.hypotheses = None
        self.profiles: dict = {}
        self.fits: dict = {}


def run_config(path, stages=None, out=None, overrides=()) -> tuple[int, dict]:
    """Run the requested stages in dependency order and write the manifest.

    Parameters
    ----------
    path : path-like
        TOML config.
    stages : sequence of str, optional
        Defaults to ``[run].stages``. The hypothesis check runs first whenever a
        gated stage is requested.
    out : path-like, optional
        Overrides ``[output].dir``.
    overrides : sequence of str
        ``table.key=value`` strings.

    Returns
    -------
    status : int
        0 all pass, 1 a verdict failed or a stage was skipped.
    manifest : dict

    Raises
    ------
    ConfigError
        Unparseable config or unwritable output.
    """
    cfg, digest = load_config(path, overrides)
    art = Artifacts(out if out is not None else cfg["output"]["dir"])
    wanted = list(stages) if stages is not None else list(cfg["run"]["stages"])
    if any(s in GATED for s in wanted) and "check" not in wanted and wanted != ["exponents"]:
        wanted = ["check"] + wanted
    order = [s for s in STAGES if s in wanted]
    ctx = _Context(cfg, art)
    results = {}
    blocked = None
    for st in order:
        if blocked is not None and st in GATED:
            results[st] = {"verdict": f"skipped (hypothesis {blocked} failed)", "files": []}
            continue
        log.info("stage %s", st)
        try:
            verdict, files = STAGE_FUNCS[st](ctx)
        except ConfigError:
            raise
        except GroundStateError as exc:
            verdict, files = f"error: {type(exc).__name__}: {exc}", []
        results[st] = {"verdict": verdict, "files": files}
        if st == "check" and verdict != "pass":
            blocked = verdict.split(": ", 1)[1]
    manifest = {
        "version": __version__,
        "inputHash": digest,
        "config": cfg,
        "stages": results,
        "files": [{"path": f, "sha256": _sha256(art.out / f)} for f in art.files],
    }
    with open(art.out / "manifest.json", "w") as fh:
        json.dump(_clean(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    status = 0 if all(r["verdict"] == "pass" for r in results.values()) else 1
    return status, manifest


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# report

def _read_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]]) if len(rows) > 1 else np.zeros((0, len(header)))
    return header, data


def _save(fig, path: Path) -> None:
    import matplotlib.pyplot as plt
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_report(out, plots: bool = True) -> tuple[str, list[str]]:
    """Summary of a manifest plus static SVG plots written next to it.

    Returns
    -------
    summary : str
    missing : list of str
        Artifacts listed in the manifest but absent on disk.
    """
    out = Path(out)
    try:
        manifest = json.loads((out / "manifest.json").read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read manifest in {out}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest in {out} is not valid JSON: {exc}") from None
    stages = manifest.get("stages", {})
    files = [f["path"] for f in manifest.get("files", [])]
    missing = [f for f in files if not (out / f).exists()]
    lines = []
    if stages:
        width = max(len(s) for s in stages)
        lines.append(f"{'stage'.ljust(width)}  verdict")
        rank = {s: i for i, s in enumerate(STAGES)}
        for name, res in sorted(stages.items(), key=lambda kv: (rank.get(kv[0], len(rank)), kv[0])):
            lines.append(f"{name.ljust(width)}  {res['verdict']}")
    for f in missing:
        lines.append(f"missing artifact: {f}")
    present = [f for f in files if f not in missing]
    if plots and present:
        lines.extend(_plots(out, present))
    return "\n".join(lines), missing


def _plots(out: Path, files: list[str]) -> list[str]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "groundstate"
    made = []
    profiles = sorted(f for f in files if f.startswith("profile_") and f.endswith(".csv"))
    if profiles:
        fig, ax = plt.subplots()
        for f in profiles:
            _, d = _read_csv(out / f)
            ax.loglog(d[:, 0], d[:, 1], label=f[len("profile_"):-4])
        ax.set_xlabel("r")
        ax.set_ylabel("U")
        ax.legend()
        _save(fig, out / "profiles.svg")
        made.append("plot: profiles.svg")
    if "separation_gaps.csv" in files:
        h, d = _read_csv(out / "separation_gaps.csv")
        fig, ax = plt.subplots()
        for j, name in enumerate(h[1:], start=1):
            ax.semilogx(d[:, 0], d[:, j], label=name)
        ax.axhline(0.0, color="k", lw=0.5)
        ax.set_xlabel("r")
        ax.set_ylabel("gap")
        ax.legend()
        _save(fig, out / "separation_gaps.svg")
        made.append("plot: separation_gaps.svg")
    for f in sorted(f for f in files if f.endswith("_trace.csv")):
        h, d = _read_csv(out / f)
        fig, ax = plt.subplots()
        norm_cols = [j for j in range(3, len(h))]
        if norm_cols:
            for j in norm_cols:
                ax.semilogy(d[:, 0], np.maximum(d[:, j], 1e-300), label=h[j])
            ax.set_ylabel("norm")
        else:
            ax.plot(d[:, 0], d[:, 1], label="max u")
            ax.set_ylabel("max u")
        if f == "stability_trace.csv" and "stability.json" in files:
            b = json.loads((out / "stability.json").read_text())["details"].get("boundsAtOrigin")
            if b:
                ax2 = ax.twinx()
                ax2.plot(d[:, 0], d[:, 1], "k-", label="max u")
                ax2.axhline(b["lower"], ls="--", color="C3")
                ax2.axhline(b["upper"], ls="--", color="C3")
                ax2.set_ylabel("max u and sandwich bounds")
        ax.set_xlabel("t")
        ax.legend()
        name = f[:-4] + ".svg"
        _save(fig, out / name)
        made.append(f"plot: {name}")
    return made


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="groundstate", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES + ("run",):
        sp = sub.add_parser(name, help="full pipeline" if name == "run" else f"{name} stage")
        sp.add_argument("--config", required=True, help="TOML experiment config")
        sp.add_argument("--out", help="output directory (overrides [output].dir)")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="table.key=value, value read as TOML")
        sp.add_argument("-v", "--verbose", action="store_true")
    rp = sub.add_parser("report", help="summarize a manifest and write SVG plots")
    rp.add_argument("--out", help="directory holding manifest.json")
    rp.add_argument("--config", help="config whose [output].dir holds the manifest")
    rp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    rp.add_argument("--no-plots", action="store_true")
    rp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "report":
            if args.out is None and args.config is None:
                print("report needs --out or --config", file=sys.stderr)
                return 2
            out = args.out if args.out is not None else load_config(args.config, args.override)[0]["output"]["dir"]
            summary, _ = emit_report(out, plots=not args.no_plots)
            if summary:
                print(summary)
            return 0
        stages = None if args.command == "run" else [args.command]
        status, manifest = run_config(args.config, stages, args.out, args.override)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, res in manifest["stages"].items():
        print(f"{name}: {res['verdict']}")
    return status


if __name__ == "__main__":
    sys.exit(main())
