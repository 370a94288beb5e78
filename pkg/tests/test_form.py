import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from formlab.form import (FormError, JumpKernel, assemble, energy_and_champ,
                          exit_stats, gap_check, heat_kernel,
                          kernel_certificates, mediant_max_ratio, meyer_check,
                          subordinate, subordinate_intensity_quadrature,
                          truncate)
from formlab.scales import ScaleFunction, ScaleTriple
from formlab.space import build_space


def z1(side=65, margin=None, alpha=1.0, with_jump=True):
    sp = build_space("lattice_box", dim=1, side=side, margin=margin)
    jump = JumpKernel.power_law(sp, alpha=alpha) if with_jump else None
    return sp, assemble(sp, 1.0, jump)


def alpha1_triple():
    return ScaleTriple(ScaleFunction.single_power(2.0),
                       ScaleFunction.single_power(1.0))


class TestAssembly:
    def test_path_laplacian_stencil(self):
        sp = build_space("lattice_box", dim=1, side=3, margin=0)
        form = assemble(sp, 1.0, None)
        L = form.generator_matrix()
        assert np.allclose(L.sum(axis=1), 0.0)
        assert L[1, 1] == pytest.approx(-2.0)

    def test_delta_energy_direct_sum(self):
        sp, form = z1(side=33, margin=0)
        x = 16
        delta = np.zeros(sp.n)
        delta[x] = 1.0
        J = form.jump.matrix
        # direct summation oracle: edges at x plus ordered jump pairs
        w_sum = 2.0      # two unit edges at an interior point
        expect = w_sum + 2.0 * J[x].sum()
        assert form.energy(delta) == pytest.approx(expect, rel=1e-12)

    def test_no_killing(self):
        _, form = z1(side=17, margin=0)
        assert abs(form.energy(np.ones(form.n))) < 1e-12

    def test_asymmetric_jump_rejected(self):
        J = np.zeros((4, 4))
        J[0, 1] = 1.0   # no symmetric partner
        with pytest.raises(FormError, match="witness"):
            JumpKernel(J)

    def test_stable_like_comparability_band(self):
        sp = build_space("lattice_box", dim=1, side=33, margin=0)
        psi = ScaleFunction.single_power(1.0)
        kern = JumpKernel.stable_like(sp, psi, cmin=0.5, cmax=2.0)
        c1, c2 = kern.comparability
        # c(x,y) in [0.5, 2] times the volume symmetrisation spread
        assert 0.2 <= c1 <= 1.0 <= c2 <= 5.0
        assert np.abs(kern.matrix - kern.matrix.T).max() == 0.0

    def test_generator_mu_symmetry(self):
        sp = build_space("gasket", level=3)
        mu = 1.0 + 0.5 * np.sin(np.arange(sp.n))**2
        sp.mu = mu
        form = assemble(sp, 1.0, JumpKernel.power_law(sp, alpha=0.8))
        rng = np.random.RandomState(5)
        L = form.generator_matrix()
        for _ in range(20):
            f, g = rng.standard_normal((2, sp.n))
            lhs = np.sum((L @ f) * g * mu)
            rhs = np.sum(f * (L @ g) * mu)
            assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


class TestHeatKernel:
    def test_identity_limit(self):
        _, form = z1(side=33, margin=0)
        K = heat_kernel(form, [1e-6]).kernels[0]
        defect = np.abs(K * form.mu[None, :] - np.eye(form.n)).max()
        assert defect < 1e-4

    def test_dirichlet_midpoint(self):
        sp = build_space("lattice_box", dim=1, side=3, margin=0)
        form = assemble(sp, 1.0, None)
        for t in (0.3, 1.0, 2.0):
            KD = heat_kernel(form, [t], domain=[1]).kernels[0]
            assert KD[0, 0] == pytest.approx(math.exp(-2.0 * t), rel=1e-12)

    def test_certificates(self):
        _, form = z1(side=49, margin=0)
        table = heat_kernel(form, [0.5, 1.0, 3.0])
        certs = kernel_certificates(form, table)
        assert certs["symmetry"] < 1e-12
        assert certs["chapman_kolmogorov"] < 1e-10
        assert certs["unit_mass"] < 1e-10

    def test_spectral_vs_expm(self):
        _, form = z1(side=64, margin=0)
        ts = [0.5, 2.0]
        spec = heat_kernel(form, ts, method="spectral")
        expm = heat_kernel(form, ts, method="expm")
        for A, B in zip(spec.kernels, expm.kernels):
            assert np.abs(A - B).max() < 1e-8

    def test_domain_monotonicity(self):
        sp, form = z1(side=33, margin=0)
        rng = np.random.RandomState(6)
        full = heat_kernel(form, [1.0]).kernels[0]
        for _ in range(5):
            D = np.sort(rng.choice(sp.n, size=rng.randint(5, 20),
                                   replace=False))
            KD = heat_kernel(form, [1.0], domain=D).kernels[0]
            assert np.all(KD <= full[np.ix_(D, D)] + 1e-12)


class TestTruncation:
    def test_full_range_no_gap(self):
        sp, form = z1(side=33, margin=0)
        tr = alpha1_triple()
        rho = sp.diameter + 1.0
        fns = [np.sin(np.arange(sp.n) / 3.0)]
        assert gap_check(form, tr, rho, fns) == pytest.approx(0.0, abs=1e-15)

    def test_delta_gap_integral_comparison(self):
        # gap(delta_x) = 2 sum_{|k| > rho} |k|^{-1-a} <= (4/a) rho^{-a}
        alpha = 1.0
        sp, form = z1(side=129, margin=0, alpha=alpha)
        x = 64
        delta = np.zeros(sp.n)
        delta[x] = 1.0
        for rho in (4.0, 8.0, 16.0):
            gap = form.energy(delta) - truncate(form, rho).energy(delta)
            direct = 2.0 * sum(
                abs(k - x) ** (-1 - alpha) for k in range(sp.n)
                if abs(k - x) > rho
            )
            assert gap == pytest.approx(direct, rel=1e-12)
            assert gap <= (4.0 / alpha) * rho ** (-alpha)

    def test_gap_monotone_in_rho(self):
        sp, form = z1(side=65, margin=0)
        u = np.cos(np.arange(sp.n) / 5.0)
        gaps = [form.energy(u) - truncate(form, rho).energy(u)
                for rho in (2.0, 4.0, 8.0, 16.0)]
        assert all(a >= b - 1e-12 for a, b in zip(gaps, gaps[1:]))


class TestMeyer:
    def test_no_jump_fits_zero(self):
        _, form = z1(side=33, with_jump=False)
        out = meyer_check(form, alpha1_triple(), rho=4.0, times=[0.5, 1.0])
        assert out["c1"] == 0.0

    def test_alpha1_stable_across_rho(self):
        # fit at times matched to the truncation scale: t in phi(rho)/{8, 4}
        sp, form = z1(side=129, margin=16)
        tr = alpha1_triple()
        fits = []
        for rho in (4.0, 8.0, 16.0):
            phir = tr.phi(rho)
            fits.append(meyer_check(form, tr, rho=rho,
                                    times=[phir / 8.0, phir / 4.0])["c1"])
        assert all(np.isfinite(c) and c > 0.0 for c in fits)
        assert max(fits) / min(fits) <= 3.0

    def test_small_time_linearised_bound(self):
        sp, form = z1(side=65, margin=8)
        tr = alpha1_triple()
        rho = 8.0
        t = 0.05   # t << phi(rho): exp factor within 20% of 1
        c1 = meyer_check(form, tr, rho=rho, times=[t])["c1"]
        P = heat_kernel(form, [t]).kernels[0]
        Q = heat_kernel(truncate(form, rho), [t]).kernels[0]
        interior = sp.interior()
        for x in interior[::4]:
            V = sp.volume(int(x), rho)
            bound = 1.2 * c1 * t / (V * tr.phi_j(rho))
            assert np.all((P - Q)[x][interior] <= bound + 1e-15)


class TestSubordination:
    def test_identity_case(self):
        g = build_space("gasket", level=3)
        form = assemble(g, 1.0, None)
        out = subordinate(form, b=0.0, gamma=1.0 - 1e-12, times=[0.7])
        base = heat_kernel(form, [0.7]).kernels[0]
        assert np.abs(out.table.kernels[0] - base).max() < 1e-8

    def test_semigroup_property(self):
        g = build_space("gasket", level=3)
        form = assemble(g, 1.0, None)
        out = subordinate(form, b=1.0, gamma=0.5, times=[0.5, 1.0])
        K, K2 = out.table.kernels
        comp = (K * form.mu[None, :]) @ K
        assert np.abs(comp - K2).max() < 1e-10

    def test_intensity_matches_quadrature(self):
        # oracle: direct quadrature of int q(u,x,y) nu(u) du
        sp = build_space("lattice_box", dim=1, side=33, margin=0)
        form = assemble(sp, 1.0, None)
        out = subordinate(form, b=1.0, gamma=0.5, times=[1.0])
        pairs = [(5, 9), (10, 20), (16, 17), (3, 30)]
        quad = subordinate_intensity_quadrature(form, 0.5, pairs)
        spec = np.array([out.intensity[x, y] for x, y in pairs])
        assert np.max(np.abs(quad - spec) / spec) < 1e-4

    def test_walk_intensity_power_law_shape(self):
        # drift + 1/2-stable subordination of the nearest-neighbour walk on Z
        # has jump intensity ~ c / d^2 at mid-range distances
        sp = build_space("lattice_box", dim=1, side=65, margin=0)
        form = assemble(sp, 1.0, None)
        out = subordinate(form, b=1.0, gamma=0.5, times=[1.0])
        x = 32
        ds = np.array([2, 3, 4, 6, 8, 12])
        vals = np.array([out.intensity[x, x + d] for d in ds])
        fitted = vals * ds ** 2.0
        assert fitted.max() / fitted.min() < 10.0

    def test_gamma_domain(self):
        sp = build_space("lattice_box", dim=1, side=9, margin=0)
        form = assemble(sp, 1.0, None)
        with pytest.raises(FormError):
            subordinate(form, b=1.0, gamma=1.5, times=[1.0])
        with pytest.raises(FormError):
            subordinate(form, b=1.0, gamma=0.0, times=[1.0])

    def test_subordinating_a_jump_form(self):
        # subordination applies to any mu-symmetric form, including one
        # that already jumps; the result stays a semigroup with a
        # symmetric nonnegative intensity
        sp, form = z1(side=33, margin=0)
        out = subordinate(form, b=0.5, gamma=0.7, times=[0.5, 1.0])
        K, K2 = out.table.kernels
        assert np.abs((K * form.mu[None, :]) @ K - K2).max() < 1e-10
        assert np.abs(out.intensity - out.intensity.T).max() == 0.0
        assert out.intensity.min() >= 0.0


class TestExitStats:
    def test_tridiagonal_oracle(self):
        sp, form = z1(side=65, margin=0, with_jump=False)
        r = 8.0
        B = sp.ball(32, r)
        st_ = exit_stats(form, B, [0.0, 1.0, 5.0])
        c = int(np.nonzero(B == 32)[0][0])
        assert st_.mean[c] == pytest.approx(r * r / 2.0, rel=1e-12)
        # independent tridiagonal solve
        m = len(B)
        T = np.zeros((m, m))
        for i in range(m):
            T[i, i] = 2.0
            if i > 0:
                T[i, i - 1] = -1.0
            if i + 1 < m:
                T[i, i + 1] = -1.0
        oracle = np.linalg.solve(T, np.ones(m))
        assert np.allclose(st_.mean, oracle)

    def test_survival_curve(self):
        sp, form = z1(side=33, margin=0)
        B = sp.ball(16, 4.0)
        st_ = exit_stats(form, B, [0.0, 0.5, 1.0, 2.0])
        assert np.all(st_.survival[0] == 1.0)
        diffs = np.diff(st_.survival, axis=0)
        assert np.all(diffs <= 1e-12)

    def test_empty_ball_rejected(self):
        sp, form = z1(side=9, margin=0)
        with pytest.raises(FormError):
            exit_stats(form, [], [1.0])

    def test_nonpositive_time_rejected(self):
        sp, form = z1(side=9, margin=0)
        with pytest.raises(FormError):
            heat_kernel(form, [1.0, -0.5])


class TestEnergyMeasures:
    def test_constant_vanishes(self):
        _, form = z1(side=17, margin=0)
        e, gc, gj, _ = energy_and_champ(form, np.full(form.n, 3.7))
        assert e == pytest.approx(0.0, abs=1e-12)
        assert np.abs(gc).max() == 0.0
        assert np.abs(gj).max() < 1e-15

    def test_delta_total_matches_energy(self):
        sp, form = z1(side=17, margin=0)
        delta = np.zeros(sp.n)
        delta[8] = 1.0
        e, gc, gj, _ = energy_and_champ(form, delta)
        assert gc.sum() + (gj * sp.mu).sum() == pytest.approx(e, rel=1e-12)
        # local part concentrates on the point and its neighbours
        assert set(np.nonzero(gc)[0]) == {7, 8, 9}

    def test_cauchy_schwarz_random_trials(self):
        sp, form = z1(side=21, margin=0)
        rng = np.random.RandomState(7)
        J = form.jump.matrix
        edges = sp.edges

        def gamma_pointwise(u, v):
            out = np.zeros(sp.n)
            du = (u[edges[:, 0]] - u[edges[:, 1]])
            dv = (v[edges[:, 0]] - v[edges[:, 1]])
            np.add.at(out, edges[:, 0], 0.5 * form.w_edges * du * dv)
            np.add.at(out, edges[:, 1], 0.5 * form.w_edges * du * dv)
            dU = u[:, None] - u[None, :]
            dV = v[:, None] - v[None, :]
            out += (dU * dV * J * sp.mu[None, :]).sum(axis=1) * sp.mu
            return out

        for _ in range(25):
            u, v, f, g = rng.standard_normal((4, sp.n))
            lam = 10 ** rng.uniform(-1, 1)
            lhs = abs(np.sum(f * g * gamma_pointwise(u, v)))
            rhs = (np.sum(f * f * gamma_pointwise(u, u)) / (2 * lam)
                   + lam / 2 * np.sum(g * g * gamma_pointwise(v, v)))
            assert lhs <= rhs + 1e-9


class TestExports:
    def test_kernel_csv(self, tmp_path):
        sp, form = z1(side=9, margin=0)
        table = heat_kernel(form, [0.5, 1.0])
        path = tmp_path / "kernel.csv"
        table.export_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,x,y,p"
        assert len(lines) == 1 + 2 * sp.n * sp.n

    def test_kernel_binary_roundtrip(self, tmp_path):
        import json as _json

        sp, form = z1(side=9, margin=0)
        table = heat_kernel(form, [0.5, 1.0])
        path = tmp_path / "kernel.bin"
        table.export_binary(path)
        raw = path.read_bytes()
        nl = raw.index(b"\n")
        header = _json.loads(raw[:nl])
        assert header["times"] == [0.5, 1.0]
        body = np.frombuffer(raw[nl + 1:], dtype="<f8")
        K0 = body[: sp.n * sp.n].reshape(sp.n, sp.n)
        assert np.allclose(K0, table.kernels[0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.0, 10.0), st.floats(0.01, 10.0),
                          st.floats(0.0, 5.0)), min_size=1, max_size=8))
def test_mediant_bound(data):
    numers = np.array([d[0] for d in data])
    denoms = np.array([d[1] for d in data])
    weights = np.array([d[2] for d in data])
    if weights @ denoms <= 0.0:
        return
    mix = (weights @ numers) / (weights @ denoms)
    assert mix <= mediant_max_ratio(numers, denoms) + 1e-12
