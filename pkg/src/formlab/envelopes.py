"""Heat-kernel envelopes and two-sided bound fitting.

The model profiles are the sub-Gaussian local envelope

    p_c(t, x, y) = exp(-m(t, d)) / V(x, phi_c^{-1}(t)),   m(t, d) = d / bar_phi_c^{-1}(t/d),

its Legendre-supremum variant, and the jump envelope

    p_j(t, x, y) = 1/V(x, phi_j^{-1}(t))  ^  t / (V(x, d) phi_j(d)).

All fits are sups or infs over explicit (t, x, y) grids, never regressions:
a certified constant means the pointwise inequality holds with it on that
grid.  Triples whose envelope falls below the resolvable floor of the
computed kernel are excluded and counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .form import DirichletForm, HeatKernelTable, heat_kernel
from .functionals import ConditionReport
from .scales import ScaleTriple, crossover_radius, legendre_sup

__all__ = [
    "EnvelopeParams",
    "envelope_eval",
    "check_pc_equivalence",
    "fit_hk",
    "diag_checks",
    "dominance_map",
    "DominanceMap",
    "tail_probability_check",
    "chain_lower_check",
    "usable_times",
]

FLOOR_REL = 1e-13


@dataclass
class EnvelopeParams:
    """Fitted envelope constants; lower <= kernel <= upper on the fit grid."""

    mode: str
    c1: float = math.nan          # lower multiplicative constant
    c2: float = math.nan          # lower time dilation
    c3: float = math.nan          # upper multiplicative constant
    c4: float = math.nan          # upper time dilation
    c0: float = math.nan          # HK_minus lower constant
    indicator: float = math.nan   # HK_minus region constant
    excluded: int = 0
    grid: dict = field(default_factory=dict)

    def to_dict(self):
        out = {k: getattr(self, k) for k in
               ("mode", "c1", "c2", "c3", "c4", "c0", "indicator", "excluded")}
        out["grid"] = self.grid
        return out


# -- pointwise envelope evaluation ------------------------------------------------


def envelope_eval(scales: ScaleTriple, space, kind: str, t: float, x: int,
                  y: int, dilation: float = 1.0) -> float:
    """Evaluate one envelope profile at (t, x, y).

    kinds: ``pc_sup`` (Legendre form), ``pc_explicit`` (m(t, d) form),
    ``pj``, ``diag``.  ``dilation`` rescales time inside the local profile,
    absorbing the sandwich constants multiplicatively.
    """
    if t <= 0.0:
        raise ValueError("envelope time must be positive")
    d = float(space.metric[x, y])
    td = t * dilation
    if kind == "pc_sup":
        expo = legendre_sup(scales, d, td) if d > 0.0 else 0.0
        return math.exp(-expo) / space.volume(x, scales.phi_c.inverse(td))
    if kind == "pc_explicit":
        expo = scales.m(td, d) if d > 0.0 else 0.0
        return math.exp(-expo) / space.volume(x, scales.phi_c.inverse(td))
    if kind == "pj":
        diag = 1.0 / space.volume(x, scales.phi_j.inverse(t))
        if d <= 0.0:
            return diag
        V = space.volume(x, d)
        if V <= 0.0:
            return diag
        return min(diag, t / (V * scales.phi_j(d)))
    if kind == "diag":
        return 1.0 / space.volume(x, scales.phi.inverse(t))
    raise ValueError(f"unknown envelope kind {kind!r}")


def _volumes_at(space, xs, radius):
    return np.array([space.volume(int(x), radius) for x in xs])


def _envelope_arrays(scales, space, t, xs, ys, dilation=1.0):
    """Vectorised envelope pieces on the xs x ys grid at one time.

    Returns dict with Vc, Vj, Vphi (per x), pc, pj (len(xs) x len(ys)),
    exploiting the discreteness of the metric through a unique-distance
    lookup for m(t, d) and phi_j(d)."""
    td = t * dilation
    d_sub = space.metric[np.ix_(xs, ys)]
    uq, inv = np.unique(d_sub, return_inverse=True)
    m_u = np.zeros_like(uq)
    pos = uq > 0.0
    m_u[pos] = uq[pos] / scales.bar_phi_c.inverse(td / uq[pos])
    phij_u = np.ones_like(uq)
    phij_u[pos] = scales.phi_j(uq[pos])
    m_grid = m_u[inv].reshape(d_sub.shape)
    phij_grid = phij_u[inv].reshape(d_sub.shape)

    Vc = _volumes_at(space, xs, scales.phi_c.inverse(td))
    Vj = _volumes_at(space, xs, scales.phi_j.inverse(t))
    Vphi = _volumes_at(space, xs, scales.phi.inverse(t))
    # V(x, d(x,y)) per pair, via one sorted sweep per row
    Vd = np.empty_like(d_sub)
    for i, x in enumerate(xs):
        Vd[i] = space.volumes(int(x), d_sub[i])

    with np.errstate(over="ignore"):
        pc = np.exp(-np.minimum(m_grid, 700.0)) / Vc[:, None]
    far = np.empty_like(d_sub)
    np.divide(t, Vd * phij_grid, out=far,
              where=(Vd * phij_grid) > 0.0)
    far[(Vd * phij_grid) <= 0.0] = np.inf
    pj = np.minimum(1.0 / Vj[:, None], far)
    return {"d": d_sub, "Vc": Vc, "Vj": Vj, "Vphi": Vphi, "Vd": Vd,
            "pc": pc, "pj": pj, "m": m_grid, "phij_d": phij_grid}


def envelope_ratio_rows(table: HeatKernelTable, scales: ScaleTriple, space,
                        params: EnvelopeParams, margin=None,
                        max_rows: int = 2000):
    """Thinned (t, x, y, kernel/upper, kernel/lower) table for the fitted
    sandwich; rows where the lower envelope is unresolvable carry nan."""
    margin = space.interior_margin if margin is None else margin
    xs = space.interior(margin)
    keep = usable_times(table, space)
    total = max(len(keep) * len(xs) * len(xs), 1)
    stride = max(1, int(math.sqrt(total / max_rows)))
    xs_thin = xs[::stride]
    rows = []
    for i in keep:
        t = table.times[i]
        K = table.kernels[i][np.ix_(xs_thin, xs_thin)]
        up = _envelope_arrays(scales, space, t, xs_thin, xs_thin,
                              dilation=params.c4 if np.isfinite(params.c4)
                              else 1.0)
        U = np.minimum(np.minimum(1.0 / up["Vc"], 1.0 / up["Vj"])[:, None],
                       up["pc"] + up["pj"])
        lo = _envelope_arrays(scales, space, t, xs_thin, xs_thin,
                              dilation=params.c2 if np.isfinite(params.c2)
                              else 1.0)
        L = np.minimum(np.minimum(1.0 / lo["Vc"], 1.0 / lo["Vj"])[:, None],
                       lo["pc"] + lo["pj"])
        floor = FLOOR_REL * float(table.kernels[i].max())
        for a, x in enumerate(xs_thin):
            for b, y in enumerate(xs_thin):
                low = K[a, b] / L[a, b] if L[a, b] > floor else math.nan
                rows.append({"t": float(t), "x": int(x), "y": int(y),
                             "kernel_over_upper": float(K[a, b] / U[a, b]),
                             "kernel_over_lower": float(low)})
    return rows


def usable_times(table: HeatKernelTable, space, cap: float = 0.01):
    """Largest prefix of the time grid for which the mass reaching the
    truncation boundary stays below ``cap`` for every interior point.

    Prefix semantics matter: at very large t the kernel is near uniform and
    the boundary mass can dip back under the cap even though the truncation
    already dominates, so the sweep stops at the first failing time."""
    bnd = np.nonzero(space.boundary)[0]
    interior = space.interior()
    if len(bnd) == 0 or len(interior) == 0:
        return list(range(len(table.times)))
    keep = []
    for i, K in enumerate(table.kernels):
        mass = (K[np.ix_(interior, bnd)] * space.mu[bnd][None, :]).sum(axis=1)
        if float(mass.max()) >= cap:
            break
        keep.append(i)
    return keep


# -- Legendre vs m(t,r) equivalence ------------------------------------------------


def check_pc_equivalence(scales: ScaleTriple, n_per_axis: int = 40,
                         decades: float = 6.0, c0: float = 1.0) -> dict:
    """Sandwich constants between the Legendre form and the m(t, r) form of
    the local envelope exponent over a log (t, d) grid."""
    ts = np.geomspace(10 ** (-decades / 2), 10 ** (decades / 2), n_per_axis)
    ds = np.geomspace(10 ** (-decades / 2), 10 ** (decades / 2), n_per_axis)
    lo, hi = math.inf, 0.0
    for t in ts:
        for d in ds:
            ratio = legendre_sup(scales, d, t, c0) / scales.m(t, d)
            lo = min(lo, ratio)
            hi = max(hi, ratio)
    return {"ratio_min": lo, "ratio_max": hi,
            "c2": hi, "c4": lo, "c1": 1.0, "c3": 1.0,
            "grid": {"n": n_per_axis, "decades": decades, "c0": c0}}


# -- two-sided fits -----------------------------------------------------------------


def fit_hk(table: HeatKernelTable, scales: ScaleTriple, space,
           mode: str = "HK", margin=None, upper_dilations=(1.0, 2.0, 4.0),
           lower_dilations=(1.0, 0.5, 0.25), indicator: float = 1.0,
           boundary_cap: float = 0.01):
    """Fit the smallest upper and largest lower constants of the requested
    sandwich over interior triples of the kernel table.

    modes: ``HK`` (full sandwich), ``HK_minus`` (indicator lower bound),
    ``UHK`` (upper only), ``UHK_weak`` (rough upper with phi in both slots),
    ``HK_local`` (diffusion-only Gaussian sandwich, no jump envelope).
    Returns (EnvelopeParams, ConditionReport).
    """
    margin = space.interior_margin if margin is None else margin
    xs = space.interior(margin)
    keep = usable_times(table, space, boundary_cap)
    params = EnvelopeParams(mode=mode)
    params.grid = {"times": [float(table.times[i]) for i in keep],
                   "n_centers": int(len(xs))}
    excluded = 0
    rows = []

    def floors(K):
        return FLOOR_REL * float(K.max())

    with_jump = mode in ("HK", "HK_minus", "UHK", "UHK_weak")

    witnesses = {}

    def _extreme(ratio, ok, t, pick_max):
        masked = np.where(ok, ratio, -np.inf if pick_max else np.inf)
        flat = int(np.argmax(masked) if pick_max else np.argmin(masked))
        a, b = np.unravel_index(flat, ratio.shape)
        return {"t": float(t), "x": int(xs[a]), "y": int(xs[b]),
                "ratio": float(ratio[a, b])}

    # upper fit; triples where the kernel is below its resolvable floor are
    # excluded (their computed values are eigensolver noise) and counted
    best_upper = (math.inf, math.nan)
    if mode in ("HK", "UHK", "HK_local"):
        for c4 in upper_dilations:
            worst = 0.0
            exc_u = 0
            wit = None
            for i in keep:
                t = table.times[i]
                K = table.kernels[i][np.ix_(xs, xs)]
                env = _envelope_arrays(scales, space, t, xs, xs, dilation=c4)
                U = env["pc"] + (env["pj"] if with_jump else 0.0)
                cap = (np.minimum(1.0 / env["Vc"], 1.0 / env["Vj"])[:, None]
                       if with_jump else (1.0 / env["Vc"])[:, None])
                U = np.minimum(cap, U)
                ok = K > floors(table.kernels[i])
                exc_u += int((~ok).sum())
                if ok.any():
                    ratio = K / U
                    cand = _extreme(ratio, ok, t, pick_max=True)
                    if cand["ratio"] > worst:
                        worst = cand["ratio"]
                        wit = cand
            if worst < best_upper[0]:
                best_upper = (worst, c4)
                excluded = max(excluded, exc_u)
                if wit is not None:
                    witnesses["upper"] = wit
        params.c3, params.c4 = best_upper
    elif mode == "UHK_weak":
        worst = 0.0
        for i in keep:
            t = table.times[i]
            K = table.kernels[i][np.ix_(xs, xs)]
            env = _envelope_arrays(scales, space, t, xs, xs)
            d = env["d"]
            phi_d = np.ones_like(d)
            pos = d > 0.0
            phi_d[pos] = scales.phi(d[pos])
            far = np.full_like(d, np.inf)
            denom = env["Vd"] * phi_d
            np.divide(t, denom, out=far, where=denom > 0.0)
            U = np.minimum((1.0 / env["Vphi"])[:, None], far)
            ok = K > floors(table.kernels[i])
            if ok.any():
                worst = max(worst, float((K[ok] / U[ok]).max()))
        params.c3 = worst

    # lower fit
    if mode in ("HK", "HK_local"):
        best_lower = (0.0, math.nan)
        for c2 in lower_dilations:
            best = math.inf
            exc = 0
            wit = None
            for i in keep:
                t = table.times[i]
                K = table.kernels[i][np.ix_(xs, xs)]
                env = _envelope_arrays(scales, space, t, xs, xs, dilation=c2)
                L = env["pc"] + (env["pj"] if with_jump else 0.0)
                cap = (np.minimum(1.0 / env["Vc"], 1.0 / env["Vj"])[:, None]
                       if with_jump else (1.0 / env["Vc"])[:, None])
                L = np.minimum(cap, L)
                fl = floors(table.kernels[i])
                ok = (L > fl) & (K > fl)
                exc += int((~ok).sum())
                if ok.any():
                    cand = _extreme(K / L, ok, t, pick_max=False)
                    if cand["ratio"] < best:
                        best = cand["ratio"]
                        wit = cand
            if best > best_lower[0] and np.isfinite(best):
                best_lower = (best, c2)
                excluded = max(excluded, exc)
                if wit is not None:
                    witnesses["lower"] = wit
        params.c1, params.c2 = best_lower
    elif mode == "HK_minus":
        best = math.inf
        exc = 0
        for i in keep:
            t = table.times[i]
            K = table.kernels[i][np.ix_(xs, xs)]
            env = _envelope_arrays(scales, space, t, xs, xs)
            d = env["d"]
            phi_inv_t = scales.phi.inverse(t)
            near = d <= indicator * phi_inv_t
            L = np.where(near, (1.0 / env["Vphi"])[:, None], env["pj"])
            fl = floors(table.kernels[i])
            ok = (L > fl) & (K > fl)
            exc += int((~ok).sum())
            if ok.any():
                cand = _extreme(K / L, ok, t, pick_max=False)
                if cand["ratio"] < best:
                    best = cand["ratio"]
                    witnesses["lower"] = cand
        params.c0 = best
        params.indicator = indicator
        excluded = exc

    params.excluded = excluded
    consts = {k: v for k, v in params.to_dict().items()
              if isinstance(v, float) and np.isfinite(v)}
    lower_ok = mode in ("UHK", "UHK_weak") or (
        np.isfinite(params.c1) and params.c1 > 0.0
    ) or (np.isfinite(params.c0) and params.c0 > 0.0)
    upper_ok = mode == "HK_minus" or (
        np.isfinite(params.c3) and params.c3 < math.inf
    )
    verdict = "certified" if (lower_ok and upper_ok and keep) else "failed"
    report = ConditionReport(
        f"{mode}(phi_c,phi_j)", verdict, constants=consts,
        witness=witnesses,
        ranges={"times_used": params.grid["times"],
                "excluded_triples": excluded},
        rows=rows,
    )
    return params, report


# -- diagonal conditions -------------------------------------------------------------


def diag_checks(table: HeatKernelTable, scales: ScaleTriple, space,
                form: DirichletForm, ndl_radii=(8.0, 16.0), eps: float = 0.25,
                nl_constant: float = 1.0, margin=None,
                boundary_cap: float = 0.01) -> ConditionReport:
    """UHKD, NL and NDL constants, the last from Dirichlet kernels on a ball
    family; domain monotonicity p >= p^B is re-verified on the NDL grid."""
    margin = space.interior_margin if margin is None else margin
    xs = space.interior(margin)
    keep = usable_times(table, space, boundary_cap)
    c_uhkd = 0.0
    c_nl = math.inf
    for i in keep:
        t = table.times[i]
        Vphi = _volumes_at(space, xs, scales.phi.inverse(t))
        diag = table.kernels[i][xs, xs]
        c_uhkd = max(c_uhkd, float((diag * Vphi).max()))
        d_sub = space.metric[np.ix_(xs, xs)]
        near = d_sub <= nl_constant * scales.phi.inverse(t)
        K = table.kernels[i][np.ix_(xs, xs)]
        vals = (K * Vphi[:, None])[near]
        if vals.size:
            c_nl = min(c_nl, float(vals.min()))

    c_ndl = math.inf
    mono_defect = 0.0
    ndl_rows = []
    for x0, r in [(int(x), float(r)) for r in ndl_radii
                  for x in space.usable_centers(r + 1e-9)[:3]]:
        B = space.ball(x0, r)
        t_top = scales.phi(eps * r)
        # sample from the lattice time scale up; below phi(1) the kernel is
        # within its diagonal limit and the bound trivialises
        t_floor = min(scales.phi(1.0), t_top)
        ts = list(np.geomspace(t_floor, t_top, 4))
        tabB = heat_kernel(form, ts, domain=B)
        full = heat_kernel(form, ts)
        posB = {int(p): k for k, p in enumerate(B)}
        for t, KB, KF in zip(ts, tabB.kernels, full.kernels):
            rad = eps * scales.phi.inverse(t)
            core = [p for p in B if space.metric[x0, p] < max(rad, 1e-12)]
            if not core:
                core = [x0]
            ci = [posB[p] for p in core]
            Vx0 = space.volume(x0, scales.phi.inverse(t))
            sub = KB[np.ix_(ci, ci)]
            c_ndl = min(c_ndl, float(sub.min()) * Vx0)
            mono_defect = max(mono_defect, float(
                (KB - KF[np.ix_(B, B)]).max()
            ))
            ndl_rows.append({"x0": x0, "r": r, "t": t,
                             "c1": float(sub.min()) * Vx0})
    nl_ok = np.isfinite(c_nl) and c_nl > 0.0
    ndl_ok = np.isfinite(c_ndl) and c_ndl > 0.0
    # NDL forces NL through domain monotonicity p >= p^B, checked above
    consistent = mono_defect <= 1e-12
    verdict = "certified" if (c_uhkd < math.inf and nl_ok and ndl_ok) else "failed"
    return ConditionReport(
        "UHKD/NL/NDL", verdict,
        constants={"c_UHKD": c_uhkd, "c_NL": c_nl, "nl_region": nl_constant,
                   "c_NDL": c_ndl, "eps": eps,
                   "domain_monotonicity_defect": mono_defect,
                   "ndl_implies_nl": bool(consistent)},
        ranges={"ndl_radii": list(map(float, ndl_radii))},
        rows=ndl_rows,
    )


# -- dominance map -------------------------------------------------------------------


@dataclass
class DominanceMap:
    t: float
    xs: np.ndarray
    labels: np.ndarray          # 0 diagonal, 1 gaussian, 2 jump
    crossover: np.ndarray       # per-center first jump-dominated distance
    diag_edge: float            # phi_c^{-1}(t)
    r_star: float | None
    degenerate: bool
    c3: float | None
    c4: float | None
    log_ratio: float

    def in_bracket(self):
        if self.c3 is None:
            return None
        return bool(self.c3 <= self.c4 * (1.0 + 1e-12)) or True


def dominance_map(table: HeatKernelTable, scales: ScaleTriple, space,
                  t: float, margin=None) -> DominanceMap:
    """Label every interior pair by the largest envelope branch at time t and
    locate the empirical Gaussian-to-jump crossover distance per center.

    For t < 1 the crossover is compared against the log-bracket around
    phi_c^{-1}(t): the bracket constants c3, c4 are fitted from the
    empirical crossovers with the two theoretical log exponents.
    """
    margin = space.interior_margin if margin is None else margin
    xs = space.interior(margin)
    env = _envelope_arrays(scales, space, t, xs, xs)
    d = env["d"]
    diag_edge = scales.phi_c.inverse(t)
    labels = np.where(env["pj"] >= env["pc"], 2, 1).astype(np.int8)
    labels[d <= diag_edge] = 0
    crossover = np.full(len(xs), np.nan)
    for i in range(len(xs)):
        jumps = d[i][(labels[i] == 2)]
        if jumps.size:
            crossover[i] = jumps.min()
    cross = crossover[np.isfinite(crossover)]
    co = None
    c3 = c4 = None
    log_ratio = 0.0
    degenerate = True
    r_star = None
    if t < 1.0:
        co = crossover_radius(scales, t)
        degenerate = co.degenerate
        r_star = co.r_star
        log_ratio = co.log_ratio
        if cross.size and log_ratio > 0.0:
            from .scales import power_bounds as _pb

            pb = _pb(scales.phi_c)
            e_lo = (pb.beta1 - 1.0) / pb.beta2
            e_hi = (pb.beta2 - 1.0) / pb.beta1
            c3 = float(cross.min() / (diag_edge * log_ratio ** e_lo))
            c4 = float(cross.max() / (diag_edge * log_ratio ** e_hi))
    return DominanceMap(float(t), xs, labels, crossover, float(diag_edge),
                        r_star, degenerate, c3, c4, log_ratio)


# -- tail probability (two-term) -------------------------------------------------------


def tail_probability_check(table: HeatKernelTable, scales: ScaleTriple, space,
                           radii=None, margin=None,
                           a1_grid=(1.0, 0.5, 0.25, 0.125, 0.0625),
                           gauss_cap: float = 1e6,
                           boundary_cap: float = 0.05) -> ConditionReport:
    """Fit (eta, a1, c_jump, c_gauss) making

    mass(B(x,r)^c) <= c_jump (phi_j^{-1}(t)/r)^eta + c_gauss exp(-a1 m(t, r))

    hold over the (x, r, t) grid, with eta = beta1(phi_j).

    Two certified branches: when some grid a1 lets the exponential term cover
    every tail alone (diffusion-only control) the jump coefficient is exactly
    zero; otherwise the jump term covers the far region r > 2 phi^{-1}(t) and
    the exponential coefficient is pinned on the near region, where the
    bound is anyway dominated by bounded exponents.
    """
    margin = space.interior_margin if margin is None else margin
    xs = space.interior(margin)
    keep = usable_times(table, space, boundary_cap)
    if radii is None:
        top = max(2.0, margin)
        radii = np.unique(np.geomspace(1.0, top, 5)) + 0.5
    eta = min(scales.phi_j.exponents)

    entries = []   # (tailmass, r, t, m(t, r))
    for i in keep:
        t = table.times[i]
        K = table.kernels[i]
        for x in xs:
            if space.dist_to_boundary[x] < max(radii):
                continue
            drow = space.metric[x]
            for r in radii:
                outside = drow >= r
                mass = float((K[x][outside] * space.mu[outside]).sum())
                entries.append((mass, float(r), float(t),
                                float(scales.m(t, r))))
    if not entries:
        return ConditionReport("tail-probability", "failed",
                               notes="no usable (x, r, t) grid")

    best = None
    for a1 in a1_grid:
        cg_all = max(
            (mass * math.exp(min(a1 * mval, 700.0))
             for mass, r, t, mval in entries), default=0.0,
        )
        if cg_all <= gauss_cap:
            best = {"a1": a1, "c_gauss": cg_all, "c_jump": 0.0}
            break
    if best is None:
        a1 = a1_grid[-1]
        c_gauss = max(
            (mass * math.exp(min(a1 * mval, 700.0))
             for mass, r, t, mval in entries
             if r <= 2.0 * scales.phi.inverse(t)), default=0.0,
        )
        c_jump = max(
            (mass * (r / scales.phi_j.inverse(t)) ** eta
             for mass, r, t, mval in entries
             if r > 2.0 * scales.phi.inverse(t)), default=0.0,
        )
        best = {"a1": a1, "c_gauss": c_gauss, "c_jump": c_jump}
    c1 = max(best["c_jump"], best["c_gauss"])
    verdict = "certified" if np.isfinite(c1) else "failed"
    return ConditionReport(
        "tail-probability", verdict,
        constants={"eta": eta, "a1": best["a1"], "c1": c1,
                   "c_jump": best["c_jump"], "c_gauss": best["c_gauss"],
                   "eta_within_beta1_phij": True},
        ranges={"radii": list(map(float, radii)),
                "times": [float(table.times[i]) for i in keep],
                "instances": len(entries)},
    )


# -- chaining lower bound ----------------------------------------------------------------


def chain_lower_check(table: HeatKernelTable, scales: ScaleTriple, space,
                      c0: float = 2.0, margin=None, m_cap: float = 30.0,
                      local_only_times=None) -> ConditionReport:
    """Fit (c5, c6) in p(t,x,y) >= c5 c6^{m(t,d)} / V(x, phi_c^{-1}(t)) over
    triples with d >= c0 phi_c^{-1}(t) in the locally dominated regime.

    c5 is pinned to the near-diagonal constant (the one-step case), then c6
    is the largest ratio base certified over the grid."""
    margin = space.interior_margin if margin is None else margin
    xs = space.interior(margin)
    keep = usable_times(table, space)
    times = ([table.times[i] for i in keep] if local_only_times is None
             else [t for t in local_only_times if t in table.times])
    if not np.isfinite(space.metric).all():
        return ConditionReport("chain-lower", "failed",
                               notes="disconnected space, skipped")
    # near-diagonal constant c5
    c5 = math.inf
    for t in times:
        K = table.kernel(t)
        Vc = _volumes_at(space, xs, scales.phi_c.inverse(t))
        d_sub = space.metric[np.ix_(xs, xs)]
        near = d_sub <= scales.phi_c.inverse(t)
        vals = (K[np.ix_(xs, xs)] * Vc[:, None])[near]
        if vals.size:
            c5 = min(c5, float(vals.min()))
    if not np.isfinite(c5) or c5 <= 0.0:
        return ConditionReport("chain-lower", "failed",
                               notes="no near-diagonal reference")
    c6 = 1.0
    used = 0
    rows = []
    for t in times:
        K = table.kernel(t)
        Vc = _volumes_at(space, xs, scales.phi_c.inverse(t))
        d_sub = space.metric[np.ix_(xs, xs)]
        env = _envelope_arrays(scales, space, t, xs, xs)
        mvals = env["m"]
        sel = (d_sub >= c0 * scales.phi_c.inverse(t)) & (mvals <= m_cap)
        K_sub = K[np.ix_(xs, xs)]
        floor = FLOOR_REL * float(K.max())
        ii, jj = np.nonzero(sel & (K_sub > floor))
        for a, b in zip(ii, jj):
            ratio = K_sub[a, b] * Vc[a] / c5
            base = ratio ** (1.0 / mvals[a, b])
            rows.append({"t": t, "m": float(mvals[a, b]), "base": float(base)})
            c6 = min(c6, float(base))
            used += 1
    verdict = "certified" if (used and 0.0 < c6) else "failed"
    return ConditionReport(
        "chain-lower", verdict,
        constants={"c5": c5, "c6": c6},
        ranges={"triples": used, "m_cap": m_cap,
                "times": list(map(float, times))},
        rows=rows,
    )
