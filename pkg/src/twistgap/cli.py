"""Command line driver: ``twistgap <subcommand> CONFIG``.

The configuration is one JSON object. Every numeric table is written as
tab-separated UTF-8 text with floats printed to 17 significant digits, so
identical configurations give byte-identical tables.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .acceptance import DEFAULT_THRESHOLDS, run_criteria
from .bands import analyze_edge, find_gaps, sweep_bands
from .bsch import bs_check
from .coupling import CouplingFunction, compute_eta, edge_eigenfunction, eta_l1_report
from .effective import (FAMILIES, Channel, DecayProfile, EffectiveModel, classify_regime, count_curve,
                        edge_model, fit_log_law, fit_power_law)
from .errors import ConfigError, TwistGapError
from .fiber import DEFAULT_TOL, TwistProfile
from .fulltube import assemble_tube, gap_window_count
from .geometry import CrossSectionShape, assemble_polar, assemble_transverse, build_grid, build_polar_grid

log = logging.getLogger("twistgap")

SCHEMA_VERSION = 1
OUTPUT_ENV = "TWISTGAP_OUTPUT_DIR"
STAGES = ("bands", "edges", "coupling", "count", "bs", "tube")
REQUIRES = {"edges": ("bands",), "coupling": ("edges",)}

NUMERIC_DEFAULTS = {
    "h": 1 / 16,
    "ell_max": 4,
    "n_k": 32,
    "bands": 4,
    "tol": DEFAULT_TOL,
    "lambda_min": 1e-6,
    "lambda_max": 1e-1,
    "lambda_points": 25,
    "kappa": 0.25,
    "R0": None,
    "dphi_boundary": "dirichlet",
    "full_eta": False,
}


# --- configuration ----------------------------------------------------------------

@dataclass
class RunConfig:
    raw: dict
    shape: CrossSectionShape | None
    grid: dict
    beta: TwistProfile
    eps: DecayProfile | None
    numerics: dict
    stages: tuple
    bs: dict
    tube: dict
    channels: list
    verify: dict
    output_dir: Path

    @property
    def digest(self):
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def _need(d, key, where, kind=float):
    if key not in d:
        raise ConfigError(f"{where}: missing '{key}'")
    try:
        return kind(d[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}: {exc}") from exc


def _shape(cs):
    kind = cs.get("kind")
    offset = tuple(cs.get("offset", (0.0, 0.0)))
    try:
        if kind == "unit_square":
            return CrossSectionShape.unit_square()
        if kind == "rectangle":
            return CrossSectionShape.rectangle(_need(cs, "width", "cross_section"),
                                               _need(cs, "height", "cross_section"), offset)
        if kind == "ellipse":
            return CrossSectionShape.ellipse(_need(cs, "a", "cross_section"), _need(cs, "b", "cross_section"), offset)
        if kind == "disk":
            r = _need(cs, "radius", "cross_section")
            return CrossSectionShape.ellipse(r, r, offset)
        if kind == "polygon":
            return CrossSectionShape.polygon(cs["vertices"], offset)
    except TwistGapError as exc:
        raise ConfigError(f"cross_section: {exc}") from exc
    raise ConfigError(f"cross_section.kind must be unit_square, rectangle, ellipse, disk or polygon, got {kind!r}")


def _profile(e):
    fam = e.get("family")
    if fam not in FAMILIES:
        raise ConfigError(f"eps.family must be one of {FAMILIES}, got {fam!r}")
    try:
        if fam in ("power", "signed_power"):
            alpha = _need(e, "alpha", "eps")
            if alpha <= 0:
                raise ConfigError("eps.alpha must be positive")
            return DecayProfile(fam, _need(e, "c", "eps"), alpha)
        if fam == "power_with_limit":
            return DecayProfile.power_with_limit(_need(e, "L", "eps"))
        return DecayProfile(fam, _need(e, "c", "eps"), np.inf, _need(e, "R", "eps"))
    except ValueError as exc:
        raise ConfigError(f"eps: {exc}") from exc


def _coupling(v, where):
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, dict):
        mean = float(v.get("mean", 0.0))
        cos = [float(x) for x in v.get("cos", [])]
        sin = [float(x) for x in v.get("sin", [])]
        deg = max(len(cos), len(sin), 1)

        def f(x):
            out = np.full_like(x, mean)
            for m, a in enumerate(cos, 1):
                out += a * np.cos(m * x)
            for m, b in enumerate(sin, 1):
                out += b * np.sin(m * x)
            return out

        return CouplingFunction.from_function(f, deg)
    raise ConfigError(f"{where}: coupling must be a number or an object with mean/cos/sin")


def parse_config(raw: dict, output_override: str | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
    cs = raw.get("cross_section")
    shape = _shape(cs) if cs is not None else None
    grid = {"kind": "cartesian"}
    if cs is not None:
        grid = {"kind": cs.get("grid", "cartesian"), "nr": int(cs.get("nr", 24)), "nphi": int(cs.get("nphi", 32))}
        if grid["kind"] not in ("cartesian", "polar"):
            raise ConfigError("cross_section.grid must be 'cartesian' or 'polar'")
        if shape.is_centered_disk and grid["kind"] == "cartesian":
            log.warning("centred disk configured: the twist acts trivially on the first band")
    b = raw.get("beta", {"mean": 0.0})
    try:
        beta = TwistProfile.from_trig(float(b.get("mean", 0.0)), [float(x) for x in b.get("cos", [])],
                                      [float(x) for x in b.get("sin", [])])
    except (ValueError, TypeError, AttributeError) as exc:
        raise ConfigError(f"beta: {exc}") from exc
    eps = _profile(raw["eps"]) if raw.get("eps") is not None else None
    num = dict(NUMERIC_DEFAULTS)
    unknown = set(raw.get("numerics", {})) - set(num)
    if unknown:
        raise ConfigError(f"numerics: unknown keys {sorted(unknown)}")
    num.update(raw.get("numerics", {}))
    if not num["h"] > 0 or num["ell_max"] < 0 or num["n_k"] < 16 or num["n_k"] % 2 or num["bands"] < 1:
        raise ConfigError("numerics out of range: need h > 0, ell_max >= 0, even n_k >= 16, bands >= 1")
    if not 0 < num["lambda_min"] < num["lambda_max"]:
        raise ConfigError("numerics: need 0 < lambda_min < lambda_max")
    stages = tuple(raw.get("stages", ("bands",) if cs is not None else ()))
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stages {bad}")
    for s in stages:
        for dep in REQUIRES.get(s, ()):
            if dep not in stages:
                raise ConfigError(f"stage '{s}' needs stage '{dep}'")
    channels = [Channel(float(c.get("mu", 1.0)), eps, _coupling(c.get("coupling", 1.0), "effective.channels"))
                for c in raw.get("effective", {}).get("channels", [])] if eps is not None else []
    if "count" in stages and "coupling" not in stages and not channels:
        raise ConfigError("stage 'count' needs the coupling stage or effective.channels")
    if any(s in stages for s in ("count", "bs", "tube")) and eps is None:
        raise ConfigError("stages count, bs and tube need an 'eps' block")
    if any(s in stages for s in ("bands", "tube")) and shape is None:
        raise ConfigError("stages bands and tube need a 'cross_section' block")
    tube = dict(raw.get("tube", {}))
    try:
        X = float(tube.get("X", 8 * np.pi))
        step = float(tube.get("x3_step", 2 * np.pi / 16))
        [float(c) for c in tube.get("c", [])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"tube: {exc}") from exc
    periods = X / (2 * np.pi)
    if X <= 0 or abs(periods - round(periods)) > 1e-9:
        raise ConfigError("tube.X must be a positive multiple of 2 pi")
    cells = 2 * X / step if step > 0 else 0.0
    if step <= 0 or abs(cells - round(cells)) > 1e-9 * cells:
        raise ConfigError("tube.x3_step must be positive and divide 2 X")
    out = output_override or os.environ.get(OUTPUT_ENV) or raw.get("output_dir", "twistgap-out")
    return RunConfig(raw, shape, grid, beta, eps, num, stages, dict(raw.get("bs", {})), tube,
                     channels, dict(raw.get("verify", {})), Path(out))


def load_config(path, output_override=None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return parse_config(raw, output_override)


# --- output helpers --------------------------------------------------------------------

def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if v is None:
        return "nan"
    return str(v)


def write_table(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# schema {SCHEMA_VERSION}\n")
        fh.write("\t".join(header) + "\n")
        for r in rows:
            fh.write("\t".join(fmt(v) for v in r) + "\n")


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    return v


# --- pipeline -------------------------------------------------------------------------

@dataclass
class RunReport:
    artifacts: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)


class StageError(TwistGapError):
    def __init__(self, stage, exc):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage
        self.cause = exc


def _transverse(cfg):
    if cfg.grid["kind"] == "polar":
        return assemble_polar(build_polar_grid(cfg.shape, cfg.grid["nr"], cfg.grid["nphi"]))
    return assemble_transverse(build_grid(cfg.shape, cfg.numerics["h"]), cfg.numerics["dphi_boundary"])


def _stage_bands(cfg, rep, ctx, workers):
    num = cfg.numerics
    ctx["ops"] = _transverse(cfg)
    chart = sweep_bands(ctx["ops"], cfg.beta, num["bands"], num["n_k"], num["ell_max"], num["tol"], workers)
    gaps = find_gaps(chart)
    rep.artifacts["bands"] = chart
    rep.artifacts["gaps"] = gaps
    out = cfg.output_dir
    write_table(out / "bands.tsv", ["k"] + [f"E{l}" for l in range(1, chart.L + 1)],
                [[k, *row] for k, row in zip(chart.k_samples, chart.bands)])
    write_table(out / "gaps.tsv", ["index", "lower", "upper", "band_below", "band_above"],
                [[g.index, g.lower, g.upper, g.band_below, g.band_above] for g in gaps])
    for l in range(1, chart.L + 1):
        write_table(out / "plot" / f"band_E{l}.dat", ["k", f"E{l}"], zip(chart.k_samples, chart.band(l)))
    rep.files += ["bands.tsv", "gaps.tsv"]


def _stage_edges(cfg, rep, ctx, workers):
    chart, gaps = rep.artifacts["bands"], rep.artifacts["gaps"]
    reports = []
    for g in gaps:
        for side in (("+",) if g.band_below is None else ("-", "+")):
            reports.append(analyze_edge(chart, g, side, ctx["ops"], cfg.beta, cfg.numerics["tol"] * 100))
    rep.artifacts["edges"] = reports
    rows = []
    for r in reports:
        for m, e in enumerate(r.extremizers):
            rows.append([r.gap_index, r.side, r.edge_value, r.band_index, m, e.k, e.mu, e.mu_error, e.slope,
                         r.regularity["i"], r.regularity["ii"], r.regularity["iii"], r.regularity["slope"],
                         r.regularity["mass_resolved"]])
    write_table(cfg.output_dir / "edges.tsv",
                ["gap", "side", "edge", "band", "m", "k", "mu", "mu_error", "slope", "i", "ii", "iii", "stationary",
                 "mass_resolved"],
                rows)
    rep.files.append("edges.tsv")


def _stage_coupling(cfg, rep, ctx, workers):
    out = {}
    rows = []
    for r in rep.artifacts["edges"]:
        if not r.is_regular:
            log.warning("skipping coupling for irregular edge %s of gap %d", r.side, r.gap_index)
            continue
        etas = []
        for m, e in enumerate(r.extremizers):
            psi = edge_eigenfunction(ctx["ops"], cfg.beta, e.k, r.band_index, cfg.numerics["ell_max"],
                                     cfg.numerics["tol"])
            eta = compute_eta(psi, cfg.beta, ctx["ops"])
            etas.append(eta)
            l1, tail = eta_l1_report(eta, cfg.beta.order)
            rows.append([r.gap_index, r.side, m, e.k, eta.mean, l1, tail, psi.residual])
            name = f"eta_gap{r.gap_index}{'p' if r.side == '+' else 'm'}_{m}.dat"
            x = np.linspace(0, 2 * np.pi, 129)
            write_table(cfg.output_dir / "plot" / name, ["x3", "eta"], zip(x, eta(x)))
        out[(r.gap_index, r.side)] = etas
    rep.artifacts["coupling"] = out
    write_table(cfg.output_dir / "coupling.tsv",
                ["gap", "side", "m", "k", "mean", "l1_norm", "tail_fraction", "residual"], rows)
    rep.files.append("coupling.tsv")


def _models(cfg, rep):
    models = {}
    if "coupling" in rep.artifacts:
        edges = {(r.gap_index, r.side): r for r in rep.artifacts["edges"]}
        for key, etas in rep.artifacts["coupling"].items():
            models[f"gap{key[0]}{'p' if key[1] == '+' else 'm'}"] = edge_model(edges[key], etas, cfg.eps,
                                                                            cfg.numerics["full_eta"])
    if cfg.channels:
        models["effective"] = EffectiveModel(tuple(cfg.channels))
    return models


def _fit(model, cur, alpha, L):
    coeffs = [ch.coefficient for ch in model.channels]
    mus = [ch.mu for ch in model.channels]
    regime, grows = classify_regime(coeffs, alpha, L, mus)
    if regime == "i" and grows:
        try:
            f = fit_power_law(cur, alpha)
            return regime, "power_exponent", f.exponent, f.predicted, f.ratio_at_min
        except TwistGapError as exc:
            return regime, "power_exponent", None, 0.5 - 1 / alpha, str(exc)
    if regime == "iii":
        c = max(coeffs)
        mu = mus[int(np.argmax(coeffs))]
        try:
            f = fit_log_law(cur, mu, c, L)
            return regime, "log_slope", f.slope, f.predicted, f.bounded
        except TwistGapError as exc:
            return regime, "log_slope", None, 0.0, str(exc)
    return regime, "bounded_last_decade", cur.constant_over_last(1.0), True, None


def _stage_count(cfg, rep, ctx, workers):
    num = cfg.numerics
    curves, fits = {}, []
    for name, model in _models(cfg, rep).items():
        sup = model.sup_potential()
        if sup == 0:
            log.warning("model %s has zero potential; counts vanish", name)
            continue
        cur = count_curve(model, num["lambda_min"] * sup, num["lambda_max"] * sup, num["lambda_points"],
                          kappa=num["kappa"], R=num["R0"], raise_on_failure=False)
        curves[name] = cur
        write_table(cfg.output_dir / f"counts_{name}.tsv",
                    ["lambda", "count", "R", "n", "converged", "semiclassical"], cur.rows())
        write_table(cfg.output_dir / "plot" / f"count_{name}.dat", ["lambda", "count"],
                    zip(cur.lambdas, cur.counts))
        regime, quantity, value, predicted, extra = _fit(model, cur, cfg.eps.alpha, cfg.eps.limit_L)
        fits.append([name, regime, quantity, value, predicted, extra])
        if cur.semiclassical is not None:
            resid = cur.counts - cur.semiclassical
            write_table(cfg.output_dir / "plot" / f"fit_residuals_{name}.dat", ["lambda", "N_minus_weyl"],
                        zip(cur.lambdas, resid))
        rep.files.append(f"counts_{name}.tsv")
    rep.artifacts["counts"] = curves
    rep.artifacts["fits"] = fits
    rep.summary += fits
    write_table(cfg.output_dir / "fits.tsv", ["model", "regime", "quantity", "value", "predicted", "extra"], fits)
    rep.files.append("fits.tsv")


def _stage_bs(cfg, rep, ctx, workers):
    rows = []
    for name, model in _models(cfg, rep).items():
        for j, ch in enumerate(model.channels):
            for lam in cfg.bs.get("lambdas", [0.5, 1.0]):
                r = bs_check(ch, float(lam))
                rows.append([name, j, r.lam, r.bs, r.bs_converged, r.inertia, r.inertia_converged, r.agrees])
    rep.artifacts["bs"] = rows
    write_table(cfg.output_dir / "bs.tsv",
                ["model", "channel", "lambda", "bs_count", "bs_converged", "count", "count_converged", "agrees"], rows)
    rep.files.append("bs.tsv")


def _stage_tube(cfg, rep, ctx, workers):
    t = cfg.tube
    ops = ctx.get("ops") or _transverse(cfg)
    X = float(t.get("X", 8 * np.pi))
    step = float(t.get("x3_step", 2 * np.pi / 16))
    margin = float(t.get("margin", 0.02))
    allowance = int(t.get("allowance", 4))
    if "window" in t:
        a, b = map(float, t["window"])
    else:
        chart = rep.artifacts.get("bands") or sweep_bands(ops, cfg.beta, 2, 16, cfg.numerics["ell_max"])
        a, b = 0.0, float(find_gaps(chart)[0].upper) - margin
    rows = []
    for c in t.get("c", [1.0, 2.0, 4.0]):
        n1 = gap_window_count(assemble_tube(ops, cfg.beta, cfg.eps, X, step, c=float(c)), a, b).count
        n2 = gap_window_count(assemble_tube(ops, cfg.beta, cfg.eps, 2 * X, step, c=float(c)), a, b).count
        rows.append([float(c), a, b, X, n1, n2, abs(n1 - n2) <= allowance])
    rep.artifacts["tube"] = rows
    write_table(cfg.output_dir / "tube.tsv", ["c", "a", "b", "X", "count_X", "count_2X", "stable"], rows)
    rep.files.append("tube.tsv")


STAGE_FUNCS = {"bands": _stage_bands, "edges": _stage_edges, "coupling": _stage_coupling,
               "count": _stage_count, "bs": _stage_bs, "tube": _stage_tube}


def run(cfg: RunConfig, stages=None, workers=1) -> RunReport:
    """Execute ``stages`` (default: the configured ones) in dependency order."""
    stages = cfg.stages if stages is None else stages
    (cfg.output_dir / "plot").mkdir(parents=True, exist_ok=True)
    rep = RunReport()
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    ctx = {}
    for s in STAGES:
        if s not in stages:
            continue
        log.info("stage %s", s)
        try:
            STAGE_FUNCS[s](cfg, rep, ctx, workers)
        except TwistGapError as exc:
            raise StageError(s, exc) from exc
    rep.provenance = {"config_sha256": cfg.digest, "version": __version__, "schema_version": SCHEMA_VERSION,
                      "started": started, "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                      "stages": [s for s in STAGES if s in stages]}
    with open(cfg.output_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(_jsonable({"provenance": rep.provenance, "files": rep.files, "summary": rep.summary}), fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    return rep


def verify(cfg: RunConfig, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    v = cfg.verify
    th = dict(DEFAULT_THRESHOLDS)
    th.update(v.get("thresholds", {}))
    results = run_criteria(v.get("criteria"), th)
    stream.write("criterion\tpart\tstatus\tseconds\n")
    for r in results:
        stream.write(f"{r.number}\t{r.part}\t{r.status}\t{r.seconds:.1f}\n")
    for r in results:
        log.info(r.line())
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    write_table(cfg.output_dir / "verify.tsv", ["criterion", "part", "status"],
                [[r.number, r.part, r.status] for r in results])
    return 0 if all(r.status != "fail" for r in results) else 1


SUBCOMMAND_STAGES = {
    "bands": ("bands",),
    "edges": ("bands", "edges"),
    "coupling": ("bands", "edges", "coupling"),
    "bs-check": ("bs",),
    "tube-check": ("tube",),
}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="twistgap", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["bands", "edges", "coupling", "count", "bs-check", "tube-check",
                                       "verify", "run"])
    p.add_argument("config", help="JSON configuration file")
    p.add_argument("--workers", type=int, default=1, help="cap on parallel workers")
    p.add_argument("--output", help="output directory (overrides config and $%s)" % OUTPUT_ENV)
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.output)
        if args.command == "verify":
            return verify(cfg)
        if args.command == "run":
            stages = cfg.stages
        elif args.command == "count":
            stages = ("bands", "edges", "coupling", "count") if not cfg.channels else ("count",)
        else:
            stages = SUBCOMMAND_STAGES[args.command]
        if any(s in stages for s in ("bands", "tube")) and cfg.shape is None:
            raise ConfigError(f"'{args.command}' needs a cross_section block")
        if any(s in stages for s in ("count", "bs", "tube")) and cfg.eps is None:
            raise ConfigError(f"'{args.command}' needs an eps block")
        rep = run(cfg, stages, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (TwistGapError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for row in rep.summary:
        print("\t".join(fmt(v) for v in row))
    print(f"wrote {len(rep.files)} tables to {cfg.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
