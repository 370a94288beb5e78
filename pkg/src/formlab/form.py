"""Dirichlet forms E = E^(c) + E^(j) on finite spaces.

The strongly local part is modelled by nearest-neighbour conductances (the
standing discretisation convention: a discrete form is never strongly local
in the continuum sense).  The generator convention is fixed once:

    L f(x) = (1/mu(x)) sum_y w(x,y) (f(y) - f(x))
             + 2 sum_y J(x,y) (f(y) - f(x)) mu(y),

so that <-L f, g>_mu = E(f, g) with

    E(f, g) = sum_{edges} w (f(x)-f(y))(g(x)-g(y))
              + sum_{x != y} (f(x)-f(y))(g(x)-g(y)) J(x,y) mu(x) mu(y),

the jump sum running over ordered pairs.  Heat kernels are computed from the
symmetrised generator; spectral mode is exact at machine precision for
n <= 4096 and an exponential-action fallback covers the rest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.linalg import eigh
from scipy.sparse.linalg import expm_multiply
from scipy.special import gamma as gamma_fn

from .space import MetricMeasureSpace

__all__ = [
    "FormError",
    "JumpKernel",
    "DirichletForm",
    "HeatKernelTable",
    "TruncatedForm",
    "ExitStats",
    "assemble",
    "heat_kernel",
    "truncate",
    "gap_check",
    "meyer_check",
    "subordinate",
    "subordinate_intensity_quadrature",
    "exit_stats",
    "energy_and_champ",
    "kernel_certificates",
    "mediant_max_ratio",
]

SPECTRAL_CAP = 4096


class FormError(ValueError):
    """Invalid form construction or query."""


# -- jump kernels ------------------------------------------------------------


@dataclass
class JumpKernel:
    """Symmetric jump intensity J(x, y) >= 0 with zero diagonal."""

    matrix: np.ndarray
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    comparability: tuple | None = None   # (c1, c2) against 1/(V(x,d) psi(d))

    def __post_init__(self):
        J = np.asarray(self.matrix, dtype=float)
        asym = np.abs(J - J.T)
        scale = max(float(np.abs(J).max()), 1e-300)
        if asym.max() > 1e-12 * scale:
            i, j = np.unravel_index(np.argmax(asym), asym.shape)
            raise FormError(
                f"jump kernel not symmetric: worst witness ({i}, {j}) with "
                f"J[i,j]={J[i, j]!r}, J[j,i]={J[j, i]!r}"
            )
        if np.any(J < 0.0):
            raise FormError("jump intensities must be nonnegative")
        J = 0.5 * (J + J.T)
        np.fill_diagonal(J, 0.0)
        self.matrix = J

    @staticmethod
    def _dense_cap(space):
        if space.n > SPECTRAL_CAP:
            raise FormError(
                f"dense jump matrices capped at n = {SPECTRAL_CAP}; "
                "supply a banded custom kernel beyond that"
            )

    @classmethod
    def stable_like(cls, space: MetricMeasureSpace, psi, coeff: float = 1.0,
                    cmin: float = 1.0, cmax: float = 1.0, seed: int = 0x5EED):
        """J(x,y) = c(x,y) / (sqrt(V(x,d) V(y,d)) psi(d)).

        The geometric mean keeps J exactly symmetric; c(x,y) is a seeded
        symmetric field in [cmin, cmax] (constant when cmin == cmax), and the
        fitted two-sided comparability against 1/(V(x,d) psi(d)) is
        recorded."""
        cls._dense_cap(space)
        n = space.n
        d = space.metric
        off = ~np.eye(n, dtype=bool)
        V = np.empty((n, n))
        for x in range(n):
            V[x] = space.volumes(x, d[x] + 1e-9)  # closed-ball volume at d(x,y)
        if not (0.0 < cmin <= cmax):
            raise FormError("need 0 < cmin <= cmax")
        if cmin == cmax:
            c_field = np.full((n, n), cmin)
        else:
            rng = np.random.RandomState(seed)
            c_field = rng.uniform(cmin, cmax, size=(n, n))
            iu = np.triu_indices(n, k=1)
            c_field[(iu[1], iu[0])] = c_field[iu]
        J = np.zeros((n, n))
        psid = np.ones_like(d)
        psid[off] = psi(d[off])
        J[off] = coeff * c_field[off] / (np.sqrt(V[off] * V.T[off]) * psid[off])
        ref = coeff / (V[off] * psid[off])
        ratio = J[off] / ref
        kern = cls(J, kind="stable_like",
                   params={"coeff": coeff, "cmin": cmin, "cmax": cmax})
        kern.comparability = (float(ratio.min()), float(ratio.max()))
        return kern

    @classmethod
    def power_law(cls, space: MetricMeasureSpace, alpha: float, coeff: float = 1.0):
        """Translation-invariant J(x,y) = coeff * d(x,y)^{-(1+alpha)}."""
        cls._dense_cap(space)
        d = space.metric
        off = ~np.eye(space.n, dtype=bool)
        J = np.zeros_like(d)
        J[off] = coeff * d[off] ** (-(1.0 + alpha))
        return cls(J, kind="power_law", params={"alpha": alpha, "coeff": coeff})

    @classmethod
    def two_regime(cls, space: MetricMeasureSpace, alpha: float, beta: float,
                   regime_break: float, coeff: float = 1.0):
        """d^{-(1+alpha)} below the regime break, matched continuously to
        break^{beta-alpha} d^{-(1+beta)} above it."""
        cls._dense_cap(space)
        d = space.metric
        off = ~np.eye(space.n, dtype=bool)
        J = np.zeros_like(d)
        small = off & (d <= regime_break)
        large = off & (d > regime_break)
        J[small] = coeff * d[small] ** (-(1.0 + alpha))
        J[large] = coeff * regime_break ** (beta - alpha) * d[large] ** (-(1.0 + beta))
        return cls(
            J, kind="two_regime",
            params={"alpha": alpha, "beta": beta, "regime_break": regime_break,
                    "coeff": coeff},
        )


# -- the form ---------------------------------------------------------------


class DirichletForm:
    """E = local conductance part + symmetric jump part, no killing."""

    def __init__(self, space: MetricMeasureSpace, w_edges, jump: JumpKernel | None):
        n = space.n
        self.space = space
        edges = space.edges
        if np.isscalar(w_edges):
            w_edges = np.full(len(edges), float(w_edges))
        w_edges = np.asarray(w_edges, dtype=float)
        if len(w_edges) != len(edges):
            raise FormError("need one conductance per nearest-neighbour edge")
        if np.any(w_edges < 0.0):
            raise FormError("conductances must be nonnegative")
        self.w_edges = w_edges
        self.jump = jump

        W = np.zeros((n, n))
        if len(edges):
            W[edges[:, 0], edges[:, 1]] = w_edges
            W[edges[:, 1], edges[:, 0]] = w_edges
        self.W = W
        K = np.zeros((n, n))
        if jump is not None:
            K = jump.matrix * np.outer(space.mu, space.mu)
        # energy matrix: E(f, g) = f @ A @ g
        A = -(W + 2.0 * K)
        np.fill_diagonal(A, 0.0)
        A[np.diag_indices(n)] = -A.sum(axis=1)
        self.A = A
        self.mu = space.mu
        self._sqmu = np.sqrt(space.mu)
        self._spec = None
        sym_err = float(np.abs(A - A.T).max())
        if sym_err > 1e-12 * max(float(np.abs(A).max()), 1e-300):
            raise FormError(f"generator lost mu-symmetry: {sym_err}")
        self.symmetry_defect = sym_err

    @property
    def n(self):
        return self.space.n

    def energy(self, f, g=None):
        g = f if g is None else g
        return float(np.asarray(f) @ self.A @ np.asarray(g))

    def generator_matrix(self):
        """Dense matrix of L acting on functions."""
        return -(self.A / self.mu[:, None])

    def apply_generator(self, f):
        return -(self.A @ np.asarray(f)) / self.mu

    def sym_generator(self):
        """S = Mu^{-1/2} A Mu^{-1/2}; spec(S) >= 0 and p(t) is built from it."""
        return self.A / np.outer(self._sqmu, self._sqmu)

    def spectral(self):
        if self._spec is None:
            if self.n > SPECTRAL_CAP:
                raise FormError(
                    f"spectral mode capped at n = {SPECTRAL_CAP}; got {self.n}"
                )
            lam, Q = eigh(self.sym_generator())
            self._spec = (np.maximum(lam, 0.0), Q)
        return self._spec

    # restricted energies used by the condition checks

    def local_energy_within(self, f, idx):
        """Conductance energy over edges with both endpoints in idx."""
        mask = np.zeros(self.n, dtype=bool)
        mask[idx] = True
        e = self.space.edges
        if not len(e):
            return 0.0
        sel = mask[e[:, 0]] & mask[e[:, 1]]
        df = np.asarray(f)[e[sel, 0]] - np.asarray(f)[e[sel, 1]]
        return float(np.sum(self.w_edges[sel] * df ** 2))

    def jump_energy_between(self, f, idx_x, idx_y):
        """Ordered-pair jump energy over idx_x x idx_y."""
        if self.jump is None:
            return 0.0
        f = np.asarray(f)
        J = self.jump.matrix[np.ix_(idx_x, idx_y)]
        df = f[idx_x][:, None] - f[idx_y][None, :]
        muxy = np.outer(self.mu[idx_x], self.mu[idx_y])
        return float(np.sum(df ** 2 * J * muxy))


def assemble(space: MetricMeasureSpace, local_weights, jump: JumpKernel | None
             ) -> DirichletForm:
    """Assemble the form; raises on asymmetric jump input (with the worst
    witness) and verifies mu-symmetry of the generator to 1e-12."""
    return DirichletForm(space, local_weights, jump)


# -- heat kernels -------------------------------------------------------------


@dataclass
class HeatKernelTable:
    """p(t, x, y) on a time grid.  ``domain`` marks a Dirichlet restriction
    (killing outside); kernels are indexed by the domain's points then."""

    times: tuple
    kernels: list
    method: str
    domain: np.ndarray | None = None
    tol: float = 0.0

    def kernel(self, t):
        for tt, k in zip(self.times, self.kernels):
            if abs(tt - t) <= 1e-12 * max(abs(t), 1.0):
                return k
        raise KeyError(f"time {t} not in table")

    def export_csv(self, path, thin=1):
        with open(path, "w") as fh:
            fh.write("t,x,y,p\n")
            for t, K in zip(self.times, self.kernels):
                for x in range(0, K.shape[0], thin):
                    for y in range(0, K.shape[1], thin):
                        fh.write(f"{t!r},{x},{y},{K[x, y]!r}\n")

    def export_binary(self, path):
        """Compact block: JSON header line, then row-major float64."""
        import json

        header = {
            "times": list(map(float, self.times)),
            "shape": list(self.kernels[0].shape),
            "method": self.method,
        }
        with open(path, "wb") as fh:
            fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
            for K in self.kernels:
                fh.write(np.ascontiguousarray(K, dtype="<f8").tobytes())


def _spectral_kernel(form, times, idx=None):
    if idx is None:
        lam, Q = form.spectral()
        sqmu = form._sqmu
    else:
        S = form.sym_generator()[np.ix_(idx, idx)]
        lam, Q = eigh(S)
        lam = np.maximum(lam, 0.0)
        sqmu = form._sqmu[idx]
    kernels = []
    B = Q / sqmu[:, None]
    for t in times:
        K = (B * np.exp(-lam * t)) @ B.T
        kernels.append(0.5 * (K + K.T))
    return kernels


def _expm_kernel(form, times, idx=None):
    n = form.n if idx is None else len(idx)
    if idx is None:
        Lmat = form.generator_matrix()
        invmu = 1.0 / form.mu
    else:
        Lmat = -(form.A[np.ix_(idx, idx)] / form.mu[idx][:, None])
        invmu = 1.0 / form.mu[idx]
    kernels = []
    for t in times:
        K = expm_multiply(t * Lmat, np.diag(invmu))
        kernels.append(0.5 * (K + K.T))
    return kernels


def heat_kernel(form: DirichletForm, times, domain=None, method="auto"
                ) -> HeatKernelTable:
    """Heat kernel table; ``domain`` gives the Dirichlet kernel p^D by
    deleting rows and columns outside the domain (killing on exit)."""
    times = tuple(float(t) for t in times)
    if any(t <= 0.0 for t in times):
        raise FormError("kernel times must be positive")
    idx = None if domain is None else np.asarray(domain, dtype=int)
    if idx is not None and len(idx) == 0:
        raise FormError("empty Dirichlet domain")
    size = form.n if idx is None else len(idx)
    if method == "auto":
        method = "spectral" if size <= SPECTRAL_CAP else "expm"
    if method == "spectral":
        try:
            kernels = _spectral_kernel(form, times, idx)
        except np.linalg.LinAlgError:
            method = "expm"
            kernels = _expm_kernel(form, times, idx)
    elif method == "expm":
        kernels = _expm_kernel(form, times, idx)
    else:
        raise FormError(f"unknown kernel method {method!r}")
    tol = 0.0 if method == "spectral" else 1e-10
    return HeatKernelTable(times, kernels, method, idx, tol)


def kernel_certificates(form: DirichletForm, table: HeatKernelTable) -> dict:
    """Symmetry, Chapman-Kolmogorov and conservation defects of a table.

    CK is checked against a freshly computed half-time kernel:
    p(t) == integral p(t/2, x, y) p(t/2, y, z) mu(dy).
    """
    mu = form.mu if table.domain is None else form.mu[table.domain]
    sym = 0.0
    mass = 0.0
    ck = 0.0
    for t, K in zip(table.times, table.kernels):
        sym = max(sym, float(np.abs(K - K.T).max()))
        if table.domain is None:
            mass = max(mass, float(np.abs((K * mu[None, :]).sum(axis=1) - 1.0).max()))
        half = heat_kernel(form, [t / 2.0], domain=table.domain,
                           method=table.method).kernels[0]
        comp = (half * mu[None, :]) @ half
        ck = max(ck, float(np.abs(comp - K).max() / max(K.max(), 1e-300)))
    return {"symmetry": sym, "chapman_kolmogorov": ck, "unit_mass": mass}


# -- truncation and Meyer decomposition --------------------------------------


class TruncatedForm(DirichletForm):
    """Form with jumps of range > rho removed; E^(rho) <= E."""

    def __init__(self, parent: DirichletForm, rho: float):
        if rho <= 0.0:
            raise FormError("truncation radius must be positive")
        jump = None
        if parent.jump is not None:
            Jm = parent.jump.matrix.copy()
            Jm[parent.space.metric > rho] = 0.0
            jump = JumpKernel(Jm, kind=parent.jump.kind + f"|rho={rho:g}",
                              params=dict(parent.jump.params))
        super().__init__(parent.space, parent.w_edges, jump)
        self.parent = parent
        self.rho = float(rho)


def truncate(form: DirichletForm, rho: float) -> TruncatedForm:
    return TruncatedForm(form, rho)


def gap_check(form: DirichletForm, scales, rho: float, fns) -> float:
    """Fit the smallest c0 with E(u,u) - E^(rho)(u,u) <= c0 ||u||_2^2 / phi(rho)
    over the supplied test functions."""
    trunc = truncate(form, rho)
    phi_rho = scales.phi(rho)
    if isinstance(fns, np.ndarray) and fns.ndim == 1:
        fns = [fns]
    c0 = 0.0
    for u in fns:
        gapv = form.energy(u) - trunc.energy(u)
        nrm = float(np.sum(np.asarray(u) ** 2 * form.mu))
        if nrm > 0.0:
            c0 = max(c0, gapv * phi_rho / nrm)
    return c0


def meyer_check(form: DirichletForm, scales, rho: float, times,
                margin=None) -> dict:
    """Smallest c1 with
    p(t,x,y) <= q^(rho)(t,x,y) + c1 t / (V(x,rho) phi_j(rho)) exp(c1 t / phi(rho))
    over interior (t, x, y), found by bisection (the right side is monotone
    increasing in c1)."""
    space = form.space
    margin = space.interior_margin if margin is None else margin
    interior = space.interior(margin)
    table_p = heat_kernel(form, times)
    table_q = heat_kernel(truncate(form, rho), times)
    phi_rho = scales.phi(rho)
    phij_rho = scales.phi_j(rho)
    Vrho = np.array([space.volume(x, rho) for x in interior])

    def excess(c1):
        worst = -np.inf
        for t, P, Qk in zip(times, table_p.kernels, table_q.kernels):
            diff = (P - Qk)[np.ix_(interior, interior)]
            bound = c1 * t / (Vrho[:, None] * phij_rho) * math.exp(
                c1 * t / phi_rho
            )
            worst = max(worst, float((diff - bound).max()))
        return worst

    if excess(0.0) <= 0.0:
        return {"c1": 0.0, "rho": rho}
    lo, hi = 0.0, 1.0
    while excess(hi) > 0.0:
        hi *= 2.0
        if hi > 1e12:
            return {"c1": math.inf, "rho": rho}
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return {"c1": hi, "rho": rho}


# -- subordination -------------------------------------------------------------


@dataclass
class SubordinationResult:
    table: HeatKernelTable
    jump: JumpKernel
    intensity: np.ndarray            # generator off-diagonal: int q(u,x,y) nu(u) du
    b: float
    gamma: float


def subordinate(form: DirichletForm, b: float, gamma: float, times
                ) -> SubordinationResult:
    """Subordinate semigroup exp(-t psi(-L)) with psi(lam) = b lam + lam^gamma
    by functional calculus on the eigenvalues.

    The returned jump kernel follows the form convention (half the generator
    off-diagonal intensity); ``intensity`` carries the full off-diagonal of
    (-L)^gamma over mu, which equals int_0^inf q(u,x,y) nu(u) du for the
    gamma-stable Levy density nu.  The drift contributes only locally.
    """
    if not (0.0 < gamma <= 1.0):
        raise FormError("gamma must lie in (0, 1]")
    if b < 0.0:
        raise FormError("drift must be nonnegative")
    lam, Q = form.spectral()
    sqmu = form._sqmu
    psi = b * lam + lam ** gamma
    B = Q / sqmu[:, None]
    kernels = []
    for t in times:
        K = (B * np.exp(-psi * float(t))) @ B.T
        kernels.append(0.5 * (K + K.T))
    table = HeatKernelTable(tuple(map(float, times)), kernels, "spectral")
    # symmetrised (-L)^gamma, expressed as kernel against mu x mu
    G = (B * lam ** gamma) @ B.T
    intensity = -G
    np.fill_diagonal(intensity, 0.0)
    intensity = np.maximum(0.5 * (intensity + intensity.T), 0.0)
    jump = JumpKernel(0.5 * intensity, kind="subordinate",
                      params={"b": b, "gamma": gamma})
    return SubordinationResult(table, jump, intensity, b, gamma)


def subordinate_intensity_quadrature(form: DirichletForm, gamma: float,
                                     pairs) -> np.ndarray:
    """Direct quadrature oracle int_0^inf q(u, x, y) nu(u) du with
    nu(u) = gamma / Gamma(1 - gamma) u^{-1-gamma}, evaluated per pair.

    Independent of the Bernstein identity: the integrand uses only the base
    heat kernel, and the integral is done numerically (u = v^2 substitution
    below u = 1 to tame the endpoint)."""
    lam, Q = form.spectral()
    sqmu = form._sqmu
    cnu = gamma / gamma_fn(1.0 - gamma)
    out = np.empty(len(pairs))
    B = Q / sqmu[:, None]
    for k, (x, y) in enumerate(pairs):
        cxy = B[x] * B[y]

        def q_of(u):
            return float(cxy @ np.exp(-lam * u))

        def g_small(v):
            u = v * v
            return q_of(u) * cnu * u ** (-1.0 - gamma) * 2.0 * v

        def g_large(u):
            return q_of(u) * cnu * u ** (-1.0 - gamma)

        i1, _ = quad(g_small, 0.0, 1.0, limit=200)
        i2, _ = quad(g_large, 1.0, np.inf, limit=200)
        out[k] = i1 + i2
    return out


# -- exit statistics -----------------------------------------------------------


@dataclass
class ExitStats:
    ball: np.ndarray
    mean: np.ndarray          # E^x[tau_B] for x in ball
    times: tuple
    survival: np.ndarray      # P^x(tau_B > t), shape (len(times), len(ball))


def exit_stats(form: DirichletForm, ball_idx, times) -> ExitStats:
    """Mean exit time (linear solve A_B u = mu_B) and survival curves
    (Dirichlet semigroup applied to 1)."""
    idx = np.asarray(ball_idx, dtype=int)
    if len(idx) == 0:
        raise FormError("empty ball in exit_stats")
    A_B = form.A[np.ix_(idx, idx)]
    mu_B = form.mu[idx]
    try:
        mean = np.linalg.solve(A_B, mu_B)
    except np.linalg.LinAlgError as exc:
        raise FormError("singular restriction in exit_stats") from exc
    table = heat_kernel(form, [t for t in times if t > 0.0], domain=idx)
    surv = np.empty((len(times), len(idx)))
    j = 0
    for i, t in enumerate(times):
        if t <= 0.0:
            surv[i] = 1.0
        else:
            surv[i] = table.kernels[j] @ mu_B
            j += 1
    return ExitStats(idx, mean, tuple(times), np.clip(surv, 0.0, 1.0))


# -- energy measures -----------------------------------------------------------


def energy_and_champ(form: DirichletForm, f, rho: float | None = None):
    """Energy value and per-point energy measures.

    Returns (E(f,f), gamma_c, gamma_j, gamma_j_rho) where gamma_c(x) =
    1/2 sum_y w(x,y)(f(x)-f(y))^2 is a plain measure mass and gamma_j(x) =
    sum_y (f(x)-f(y))^2 J(x,y) mu(y) is a density against mu, so that
    sum_x gamma_c(x) + sum_x gamma_j(x) mu(x) = E(f, f).
    """
    f = np.asarray(f, dtype=float)
    n = form.n
    gamma_c = np.zeros(n)
    e = form.space.edges
    if len(e):
        df2 = (f[e[:, 0]] - f[e[:, 1]]) ** 2 * form.w_edges
        np.add.at(gamma_c, e[:, 0], 0.5 * df2)
        np.add.at(gamma_c, e[:, 1], 0.5 * df2)
    gamma_j = np.zeros(n)
    gamma_j_rho = None
    if form.jump is not None:
        diff2 = (f[:, None] - f[None, :]) ** 2
        gamma_j = (diff2 * form.jump.matrix * form.mu[None, :]).sum(axis=1)
        if rho is not None:
            Jr = form.jump.matrix.copy()
            Jr[form.space.metric > rho] = 0.0
            gamma_j_rho = (diff2 * Jr * form.mu[None, :]).sum(axis=1)
    energy = form.energy(f)
    return energy, gamma_c, gamma_j, gamma_j_rho


def mediant_max_ratio(numers, denoms) -> float:
    """max over z of u_z(p)/u_z(q); dominates (sum a u(p)) / (sum a u(q)) for
    any nonnegative weights a (mediant inequality)."""
    numers = np.asarray(numers, dtype=float)
    denoms = np.asarray(denoms, dtype=float)
    ok = denoms > 0.0
    if not ok.any():
        return math.inf
    return float(np.max(numers[ok] / denoms[ok]))
