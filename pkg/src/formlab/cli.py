"""Experiment configuration, suite orchestration, and report emission.

A config is a single JSON document (key/value tree).  ``run_suite`` builds
the space and form once, computes the heat kernel once, dispatches the
configured checks, and evaluates the cross-consistency matrix: whenever the
two-sided bound with indicator lower profile certifies, the equivalent
condition package (Harnack, two-sided jump comparability, Poincare,
generalized capacity, diagonal bounds) is expected to certify too, and any
deviation is listed rather than silently passed.

Exit codes: 0 when every verdict is acceptable or matches the configured
expectation, 2 on unexpected verdicts or cross-matrix deviations, 3 on
execution errors.
"""

from __future__ import annotations

import argparse
import hashlib
import importlib.resources
import json
import math
import sys
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .envelopes import (chain_lower_check, check_pc_equivalence, diag_checks,
                        dominance_map, envelope_ratio_rows, fit_hk,
                        tail_probability_check)
from .form import (JumpKernel, assemble, gap_check, heat_kernel,
                   kernel_certificates, meyer_check, subordinate,
                   subordinate_intensity_quadrature)
from .functionals import (ConditionReport, ball_family, check_cs, check_exit,
                          check_fk, check_gcap, check_pi, fit_jpsi,
                          tail_and_ujs, function_family)
from .harnack import CylinderSpec, check_phi, check_regularity
from .render import svg_curves, svg_heatmap, write_rows_csv
from .scales import ScaleFunction, ScaleTriple
from .space import build_space, chain_check, volume_report

OK_VERDICTS = {"certified", "certified-for-family", "one-sided-certificate"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str
    space: dict
    scales: dict
    jump: dict
    local_weight: float = 1.0
    checks: list = field(default_factory=list)
    check_params: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)
    expect: dict = field(default_factory=dict)
    mode: str = "necessary"
    seed: int = 0x5EED
    out: str | None = None

    @property
    def raw(self):
        return {
            "name": self.name, "space": self.space, "scales": self.scales,
            "jump": self.jump, "local_weight": self.local_weight,
            "checks": self.checks, "check_params": self.check_params,
            "grids": self.grids, "expect": self.expect, "mode": self.mode,
            "seed": self.seed,
        }

    def hash(self):
        blob = json.dumps(self.raw, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(source) -> ExperimentConfig:
    """Load a config from a path, or by bundled name (e.g. ``z1_alpha1``)."""
    if isinstance(source, dict):
        data = source
    else:
        p = Path(str(source))
        if p.exists():
            data = json.loads(p.read_text())
        else:
            ref = importlib.resources.files("formlab.configs").joinpath(
                f"{source}.json"
            )
            if not ref.is_file():
                raise ConfigError(f"no config file or bundled name {source!r}")
            data = json.loads(ref.read_text())
    return validate_config(data)


def validate_config(data: dict) -> ExperimentConfig:
    for key in ("name", "space", "scales"):
        if key not in data:
            raise ConfigError(f"config missing required key {key!r}")
    known = {"name", "space", "scales", "jump", "local_weight", "checks",
             "check_params", "grids", "expect", "mode", "seed", "out"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    cfg = ExperimentConfig(
        name=data["name"], space=dict(data["space"]),
        scales=dict(data["scales"]), jump=dict(data.get("jump", {"kind": "none"})),
        local_weight=float(data.get("local_weight", 1.0)),
        checks=list(data.get("checks", [])),
        check_params=dict(data.get("check_params", {})),
        grids=dict(data.get("grids", {})), expect=dict(data.get("expect", {})),
        mode=str(data.get("mode", "necessary")),
        seed=int(data.get("seed", 0x5EED)), out=data.get("out"),
    )
    bad = [c for c in cfg.checks if c not in CHECKS]
    if bad:
        raise ConfigError(f"unknown checks: {bad}; known: {sorted(CHECKS)}")
    # resource guard: refuse oversized requests at validation time
    kind = cfg.space.get("kind")
    if kind == "lattice_box":
        n = int(cfg.space.get("side", 0)) ** int(cfg.space.get("dim", 1))
        if n > 4096:
            raise ConfigError(f"space of {n} points exceeds the spectral cap")
    if kind == "gasket" and int(cfg.space.get("level", 0)) > 7:
        raise ConfigError("gasket level capped at 7")
    # scales must pass the triple invariants at load time
    _build_scales(cfg)
    return cfg


def _build_scales(cfg: ExperimentConfig) -> ScaleTriple:
    pc = ScaleFunction.from_config(cfg.scales["phi_c"])
    pj = ScaleFunction.from_config(cfg.scales["phi_j"])
    return ScaleTriple(pc, pj)


def _build_jump(cfg, space, scales):
    kind = cfg.jump.get("kind", "none")
    if kind == "none":
        return None
    if kind == "stable_like":
        return JumpKernel.stable_like(
            space, scales.phi_j, coeff=cfg.jump.get("coeff", 1.0),
            cmin=cfg.jump.get("cmin", 1.0), cmax=cfg.jump.get("cmax", 1.0),
            seed=cfg.seed,
        )
    if kind == "power_law":
        return JumpKernel.power_law(space, alpha=cfg.jump["alpha"],
                                    coeff=cfg.jump.get("coeff", 1.0))
    if kind == "two_regime":
        return JumpKernel.two_regime(
            space, alpha=cfg.jump["alpha"], beta=cfg.jump["beta"],
            regime_break=cfg.jump["regime_break"],
            coeff=cfg.jump.get("coeff", 1.0),
        )
    raise ConfigError(f"unknown jump kind {kind!r}")


class SuiteContext:
    """Space, scales, form and the shared kernel table, built once."""

    def __init__(self, cfg: ExperimentConfig, thin: int = 1):
        self.cfg = cfg
        self.thin = max(1, int(thin))
        self.scales = _build_scales(cfg)
        self.space = build_space(cfg.space["kind"], **{
            k: v for k, v in cfg.space.items() if k != "kind"
        })
        self.jump = _build_jump(cfg, self.space, self.scales)
        self.form = assemble(self.space, cfg.local_weight, self.jump)
        g = cfg.grids
        n_times = max(3, int(g.get("n_times", 24)) // self.thin)
        t_lo = self.scales.phi(1.0)
        t_hi = self.scales.phi(max(self.space.interior_margin, 2.0))
        self.times = list(np.geomspace(t_lo, max(t_hi, 2.0 * t_lo), n_times))
        self._table = None
        radii = g.get("radii")
        if radii is None:
            top = max(self.space.interior_margin, 4.0)
            radii = [top / 4.0, top / 2.0, top]
        self.radii = [float(r) for r in radii]
        self.max_centers = max(2, int(g.get("max_centers", 4)) // self.thin)

    @property
    def table(self):
        if self._table is None:
            self._table = heat_kernel(self.form, self.times)
        return self._table


# -- check implementations -----------------------------------------------------


def _chk_volume(ctx, **kw):
    vr = volume_report(ctx.space, **kw)
    verdict = "certified" if np.isfinite(vr.C_mu) else "failed"
    rep = ConditionReport(
        "VD/RVD", verdict,
        constants={"C_mu": vr.C_mu, "l_mu": vr.l_mu, "c_mu": vr.c_mu,
                   "rvd": vr.rvd_passes, "d1": vr.d1, "d2": vr.d2,
                   "c_tilde": vr.c_tilde, "C_tilde": vr.C_tilde},
        ranges={"radius_range": list(vr.radius_range),
                "n_centers": vr.n_centers},
        notes="RVD verdict applies to the restricted radius range only",
    )
    return rep, None


def _chk_chain(ctx, samples=30, **kw):
    cr = chain_check(ctx.space, samples=samples // ctx.thin + 1,
                     seed=ctx.cfg.seed, **kw)
    verdict = "certified" if np.isfinite(cr.constant) else "failed"
    rep = ConditionReport("chain-condition", verdict,
                          constants={"C": cr.constant},
                          witness={} if cr.witness is None else
                          {"disconnected_pair": list(cr.witness)},
                          ranges={"samples": cr.samples})
    return rep, None


def _chk_kernel(ctx, **kw):
    certs = kernel_certificates(ctx.form, ctx.table)
    ok = (certs["symmetry"] < 1e-10 and certs["chapman_kolmogorov"] < 1e-10
          and certs["unit_mass"] < 1e-10)
    rep = ConditionReport("kernel-exactness",
                          "certified" if ok else "failed",
                          constants=certs,
                          ranges={"times": list(ctx.times),
                                  "method": ctx.table.method})
    return rep, None


def _chk_fk(ctx, **kw):
    return check_fk(ctx.form, ctx.scales, ctx.radii,
                    max_centers=ctx.max_centers, **kw), None


def _chk_pi(ctx, **kw):
    kw.setdefault("kappas", (1.0, 2.0))
    return check_pi(ctx.form, ctx.scales, ctx.radii,
                    max_centers=ctx.max_centers, **kw), None


def _gcap_families(ctx):
    fams = []
    for r in ctx.radii:
        R = 2.0 * r
        centers = ctx.space.usable_centers(R + 2.0 * r + 1e-9)
        if len(centers) == 0:
            continue
        take = np.unique(
            np.linspace(0, len(centers) - 1, min(ctx.max_centers, len(centers)))
            .round().astype(int)
        )
        fams.extend((int(centers[i]), R, r) for i in take)
    return fams


def _chk_gcap(ctx, **kw):
    fns = function_family(ctx.form, seed=ctx.cfg.seed)
    return check_gcap(ctx.form, ctx.scales, _gcap_families(ctx), fns, **kw), None


def _chk_cs(ctx, **kw):
    fns = function_family(ctx.form, seed=ctx.cfg.seed)
    kw.setdefault("rho_grid", [max(ctx.radii), 2.0 * max(ctx.radii)])
    return check_cs(ctx.form, ctx.scales, _gcap_families(ctx), fns, **kw), None


def _chk_exit(ctx, **kw):
    return check_exit(ctx.form, ctx.scales, ctx.radii,
                      max_centers=ctx.max_centers, **kw), None


def _chk_tail_ujs(ctx, spread_cap=8.0, **kw):
    rep = tail_and_ujs(ctx.form, ctx.scales, ctx.radii, seed=ctx.cfg.seed, **kw)
    if rep.constants.get("J_phij_spread", math.inf) > spread_cap:
        rep.verdict = "failed"
        rep.notes = (rep.notes + " two-sided comparability spread over "
                     f"cap {spread_cap}").strip()
    rep.constants["spread_cap"] = spread_cap
    return rep, None


def _chk_jpsi_alt(ctx, phi_j=None, spread_cap=4.0, **kw):
    if phi_j is None:
        raise ConfigError("jpsi_alt needs an alternative phi_j piece list")
    psi = ScaleFunction.from_config(phi_j)
    c1, c2, table = fit_jpsi(ctx.form, psi)
    spread = c2 / c1 if c1 > 0 else math.inf
    plateau = max((row["max_ratio"] for row in table), default=math.inf)
    rows = [{"d": row["d"], "max_ratio": row["max_ratio"],
             "violation": plateau / row["max_ratio"]} for row in table]
    verdict = "failed" if spread > spread_cap else "certified"
    rep = ConditionReport(
        "J_psi-alt", verdict,
        constants={"c1": c1, "c2": c2, "spread": spread,
                   "spread_cap": spread_cap},
        ranges={"pieces": phi_j}, rows=rows,
        notes="two-sided comparability against the alternative scale",
    )
    return rep, None


def _chk_hk(ctx, mode="HK", **kw):
    params, rep = fit_hk(ctx.table, ctx.scales, ctx.space, mode=mode, **kw)
    art = {"envelope_params": params}
    if mode in ("HK", "HK_local"):
        rows = envelope_ratio_rows(ctx.table, ctx.scales, ctx.space, params)
        rep.rows = rows
        art["ratio_rows"] = rows
    return rep, art


def _chk_hk_minus(ctx, **kw):
    params, rep = fit_hk(ctx.table, ctx.scales, ctx.space, mode="HK_minus", **kw)
    return rep, {"envelope_params": params}


def _chk_uhk_weak(ctx, **kw):
    params, rep = fit_hk(ctx.table, ctx.scales, ctx.space, mode="UHK_weak", **kw)
    return rep, {"envelope_params": params}


def _chk_diag(ctx, **kw):
    kw.setdefault("ndl_radii", ctx.radii[:2])
    return diag_checks(ctx.table, ctx.scales, ctx.space, ctx.form, **kw), None


def _chk_pc_equiv(ctx, **kw):
    kw.setdefault("n_per_axis", max(10, 30 // ctx.thin))
    out = check_pc_equivalence(ctx.scales, **kw)
    rep = ConditionReport(
        "pc-equivalence", "certified",
        constants={k: v for k, v in out.items() if k != "grid"},
        ranges=out["grid"],
    )
    return rep, None


def _chk_dominance(ctx, t=None, **kw):
    if t is None:
        t = float(ctx.times[0])
    dm = dominance_map(ctx.table, ctx.scales, ctx.space, t, **kw)
    cross = dm.crossover[np.isfinite(dm.crossover)]
    rep = ConditionReport(
        "dominance-map", "certified",
        constants={"t": dm.t, "diag_edge": dm.diag_edge,
                   "crossover_min": float(cross.min()) if cross.size else math.nan,
                   "crossover_max": float(cross.max()) if cross.size else math.nan,
                   "c3": dm.c3, "c4": dm.c4, "log_ratio": dm.log_ratio,
                   "r_star": dm.r_star, "degenerate_root": dm.degenerate},
        ranges={"centers": int(len(dm.xs))},
    )
    return rep, {"dominance_map": dm}


def _chk_tail_probability(ctx, **kw):
    return tail_probability_check(ctx.table, ctx.scales, ctx.space, **kw), None


def _chk_chain_lower(ctx, times=None, **kw):
    table = ctx.table if times is None else heat_kernel(ctx.form, times)
    return chain_lower_check(table, ctx.scales, ctx.space, **kw), None


def _chk_phi(ctx, R=None, mode=None, **kw):
    radii = R if R is not None else ctx.cfg.grids.get("phi_R", [ctx.radii[0]])
    mode = ctx.cfg.mode if mode is None else mode
    n_centers = 1 if mode == "full" else min(3, ctx.max_centers)
    cyls = []
    for r in radii:
        reach = 5.0 * float(r)
        centers = ctx.space.usable_centers(reach + 1e-9)
        if len(centers) == 0:
            continue
        take = np.unique(
            np.linspace(0, len(centers) - 1, n_centers).round().astype(int)
        )
        cyls.extend(CylinderSpec(x0=int(centers[i]), R=float(r))
                    for i in take)
    if not cyls:
        return ConditionReport("PHI(phi)", "failed",
                               notes="no cylinder fits the space"), None
    rep = check_phi(ctx.form, ctx.scales, cyls, mode=mode, **kw)
    return rep, {"phi_rows": rep.rows, "phi_witness": rep.witness}


def _chk_regularity(ctx, **kw):
    kw.setdefault("radii", ctx.cfg.grids.get("phi_R", [ctx.radii[0]]))
    kw.setdefault("max_centers", min(2, ctx.max_centers))
    return check_regularity(ctx.form, ctx.scales, seed=ctx.cfg.seed, **kw), None


def _chk_meyer(ctx, rho_grid=None, **kw):
    rhos = rho_grid or [r for r in ctx.radii]
    fits = {}
    for rho in rhos:
        fits[f"c1(rho={rho:g})"] = meyer_check(
            ctx.form, ctx.scales, rho, ctx.times[:3], **kw
        )["c1"]
    vals = [v for v in fits.values()]
    ok = all(np.isfinite(v) for v in vals)
    rep = ConditionReport(
        "meyer-decomposition", "certified" if ok else "failed",
        constants={**fits, "max_over_min": (max(vals) / min(vals))
                   if min(vals) > 0 else math.inf},
        ranges={"rhos": list(map(float, rhos))},
    )
    return rep, None


def _chk_gap(ctx, rho_grid=None, **kw):
    fns = function_family(ctx.form, seed=ctx.cfg.seed)
    rhos = rho_grid or [r for r in ctx.radii]
    fits = {f"c0(rho={rho:g})": gap_check(ctx.form, ctx.scales, rho, fns)
            for rho in rhos}
    rep = ConditionReport(
        "truncation-gap", "certified",
        constants=fits, ranges={"rhos": list(map(float, rhos))},
    )
    return rep, None


def _chk_subordination(ctx, b=1.0, gamma=0.5, n_pairs=40, tol=0.01, **kw):
    sub = subordinate(ctx.form, b=b, gamma=gamma, times=ctx.times[:2])
    rng = np.random.RandomState(ctx.cfg.seed)
    interior = ctx.space.interior()
    pairs = []
    while len(pairs) < n_pairs:
        x, y = rng.choice(interior, 2, replace=False)
        pairs.append((int(x), int(y)))
    quadv = subordinate_intensity_quadrature(ctx.form, gamma, pairs)
    specv = np.array([sub.intensity[x, y] for x, y in pairs])
    rel = float(np.max(np.abs(quadv - specv) / np.maximum(specv, 1e-300)))
    ident = subordinate(ctx.form, b=0.0, gamma=1.0 - 1e-12,
                        times=[ctx.times[0]])
    base = heat_kernel(ctx.form, [ctx.times[0]])
    id_err = float(np.abs(ident.table.kernels[0] - base.kernels[0]).max())
    ok = rel <= tol and id_err <= 1e-8
    rep = ConditionReport(
        "subordination", "certified" if ok else "failed",
        constants={"b": b, "gamma": gamma, "quadrature_rel_err": rel,
                   "identity_case_err": id_err},
        ranges={"pairs": len(pairs)},
    )
    return rep, None


CHECKS = {
    "volume": _chk_volume,
    "chain": _chk_chain,
    "kernel": _chk_kernel,
    "fk": _chk_fk,
    "pi": _chk_pi,
    "gcap": _chk_gcap,
    "cs": _chk_cs,
    "exit": _chk_exit,
    "tail_ujs": _chk_tail_ujs,
    "jpsi_alt": _chk_jpsi_alt,
    "hk": _chk_hk,
    "hk_minus": _chk_hk_minus,
    "uhk_weak": _chk_uhk_weak,
    "diag": _chk_diag,
    "pc_equivalence": _chk_pc_equiv,
    "dominance": _chk_dominance,
    "tail_probability": _chk_tail_probability,
    "chain_lower": _chk_chain_lower,
    "phi": _chk_phi,
    "regularity": _chk_regularity,
    "meyer": _chk_meyer,
    "gap": _chk_gap,
    "subordination": _chk_subordination,
}

# cross-consistency rules: (premise check, expected checks, policy).
# "strict" lists unconfigured expected checks as deviations; the Harnack-side
# rule only binds checks that actually ran.
CROSS_EXPECTED = ("phi", "tail_ujs", "pi", "gcap", "diag")
CROSS_RULES = (
    ("hk_minus", CROSS_EXPECTED, "strict"),
    ("phi", ("uhk_weak", "diag", "tail_ujs"), "configured-only"),
)


@dataclass
class SuiteReport:
    report: dict
    artifacts: dict = field(default_factory=dict)


def run_suite(cfg: ExperimentConfig, thin: int = 1, threads: int = 1,
              mode: str | None = None) -> SuiteReport:
    t_start = time.time()
    if mode:
        cfg.mode = mode
    ctx = SuiteContext(cfg, thin=thin)
    checks = list(cfg.checks)   # an empty list yields an empty report
    reports: dict[str, ConditionReport] = {}
    artifacts: dict = {}

    def run_one(name):
        params = dict(cfg.check_params.get(name, {}))
        try:
            return name, CHECKS[name](ctx, **params)
        except Exception as exc:  # marked errored, suite continues
            rep = ConditionReport(name, "errored",
                                  notes=f"{type(exc).__name__}: {exc}")
            rep.rows = [{"traceback": traceback.format_exc(limit=3)}]
            return name, (rep, None)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_one, checks))
    else:
        results = [run_one(name) for name in checks]
    for name, (rep, art) in results:
        reports[name] = rep
        if art:
            artifacts[name] = art

    rules = []
    deviations = []
    evaluated_any = False
    for premise, expected, policy in CROSS_RULES:
        entry = {"premise": f"{premise} certified",
                 "expected": list(expected), "evaluated": False,
                 "deviations": [], "skipped": []}
        prem = reports.get(premise)
        if prem is not None and prem.verdict in OK_VERDICTS:
            entry["evaluated"] = True
            evaluated_any = True
            for name in expected:
                rep = reports.get(name)
                if rep is None:
                    if policy == "strict":
                        entry["deviations"].append(
                            {"check": name, "reason": "not configured"}
                        )
                    else:
                        entry["skipped"].append(name)
                elif rep.verdict not in OK_VERDICTS:
                    entry["deviations"].append(
                        {"check": name, "reason": f"verdict {rep.verdict}"}
                    )
        rules.append(entry)
        deviations.extend(entry["deviations"])
    cross = {"evaluated": evaluated_any, "rules": rules,
             "deviations": deviations}

    outcome = []
    for name, rep in reports.items():
        expected = cfg.expect.get(name)
        if expected is not None:
            matched = rep.verdict == expected
            outcome.append({"check": name, "verdict": rep.verdict,
                            "expected": expected, "ok": matched})
        else:
            outcome.append({"check": name, "verdict": rep.verdict,
                            "expected": None,
                            "ok": rep.verdict in OK_VERDICTS})

    report = {
        "name": cfg.name,
        "checks": {name: rep.to_dict() for name, rep in reports.items()},
        "cross_matrix": cross,
        "outcome": outcome,
        "all_ok": bool(all(o["ok"] for o in outcome)
                       and not cross["deviations"]),
        "provenance": {
            "config_hash": cfg.hash(),
            "version": __version__,
            "wall_time_s": round(time.time() - t_start, 3),
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        },
    }
    artifacts["_rows"] = {name: rep.rows for name, rep in reports.items()
                          if rep.rows}
    return SuiteReport(report, artifacts)


def render_report(suite: SuiteReport, out_dir, formats=("json", "csv", "svg")):
    """Emit report.json (canonical, key-sorted), per-check CSV ratio tables,
    and SVG plots.  Byte-stable given identical inputs and version."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {exc}") from exc
    written = []
    if "json" in formats:
        path = out / "report.json"
        path.write_text(json.dumps(_jsonable(suite.report), sort_keys=True,
                                   indent=2) + "\n")
        written.append(path)
    if "csv" in formats:
        for name, rows in suite.artifacts.get("_rows", {}).items():
            path = out / f"ratios_{name}.csv"
            if write_rows_csv(rows, path):
                written.append(path)
    if "svg" in formats:
        dom = suite.artifacts.get("dominance", {}).get("dominance_map")
        if dom is not None:
            path = out / "dominance.svg"
            svg_heatmap(dom.labels, path,
                        title=f"dominance map t={dom.t:g}")
            written.append(path)
        phi_art = suite.artifacts.get("phi", {})
        worst = phi_art.get("phi_witness", {}).get("worst", {})
        if "trace_minus" in worst:
            path = out / "caloric_worst.svg"
            tm = np.asarray(worst["trace_minus"], dtype=float)
            tp = np.asarray(worst["trace_plus"], dtype=float)
            xs = np.arange(tm.shape[1])
            series = [(f"Q- t{i}", xs, tm[i]) for i in range(tm.shape[0])]
            series += [(f"Q+ t{i}", xs, tp[i]) for i in range(tp.shape[0])]
            svg_curves(series, path, title="worst caloric function")
            written.append(path)
        hk_art = suite.artifacts.get("hk", {})
        rows = hk_art.get("ratio_rows")
        if rows:
            t_last = max(r["t"] for r in rows)
            sel = [r for r in rows if r["t"] == t_last]
            xs_centers = sorted({r["x"] for r in sel})
            x_mid = xs_centers[len(xs_centers) // 2]
            curve = sorted(
                ((abs(r["y"] - x_mid), r) for r in sel if r["x"] == x_mid),
                key=lambda c: c[0],
            )
            ds = [c[0] for c in curve]
            path = out / "envelope_ratio.svg"
            svg_curves(
                [("kernel/upper", ds,
                  [c[1]["kernel_over_upper"] for c in curve]),
                 ("kernel/lower", ds,
                  [c[1]["kernel_over_lower"] for c in curve])],
                path, title=f"envelope ratios at t={t_last:g}",
            )
            written.append(path)
    return written


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, float) and math.isnan(obj):
        return "nan"
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="formlab",
        description="Dirichlet-form laboratory: build finite diffusion+jump "
                    "models and verify scaling conditions with fitted "
                    "constants.",
    )
    parser.add_argument("--config", required=False,
                        help="config path or bundled name")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--grid-thin", type=int, default=1,
                        help="divide grid densities by this factor")
    parser.add_argument("--mode", choices=("necessary", "full"), default=None)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", help="validate the config and exit")
    sub.add_parser("build", help="build the space/form, export the point CSV")
    p_check = sub.add_parser("check", help="run a single check")
    p_check.add_argument("check_name")
    sub.add_parser("suite", help="run the configured checks and emit reports")
    p_rep = sub.add_parser("report", help="re-render an existing report.json")
    p_rep.add_argument("report_path")
    args = parser.parse_args(argv)

    try:
        if args.command == "report":
            data = json.loads(Path(args.report_path).read_text())
            out = Path(args.out or ".")
            out.mkdir(parents=True, exist_ok=True)
            (out / "report.json").write_text(
                json.dumps(data, sort_keys=True, indent=2) + "\n"
            )
            return 0
        if not args.config:
            print("--config is required", file=sys.stderr)
            return 3
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"config {cfg.name} valid ({cfg.hash()})")
            return 0
        if args.command == "build":
            ctx = SuiteContext(cfg, thin=args.grid_thin)
            out = Path(args.out or cfg.out or ".")
            out.mkdir(parents=True, exist_ok=True)
            ctx.space.export_points_csv(out / "points.csv")
            print(f"built space n={ctx.space.n}, form assembled; "
                  f"points -> {out / 'points.csv'}")
            return 0
        if args.command == "check":
            if args.check_name not in CHECKS:
                print(f"unknown check {args.check_name!r}", file=sys.stderr)
                return 3
            cfg.checks = [args.check_name]
        suite = run_suite(cfg, thin=args.grid_thin, threads=args.threads,
                          mode=args.mode)
        out_dir = args.out or cfg.out
        if out_dir:
            render_report(suite, out_dir)
        for o in suite.report["outcome"]:
            exp = "" if o["expected"] is None else f" (expected {o['expected']})"
            flag = "ok" if o["ok"] else "UNEXPECTED"
            print(f"{o['check']:>18}: {o['verdict']}{exp} [{flag}]")
        for dev in suite.report["cross_matrix"]["deviations"]:
            print(f"cross-matrix deviation: {dev}")
        return 0 if suite.report["all_ok"] else 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:
        print(f"execution error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
