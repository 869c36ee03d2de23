import numpy as np
import pytest

from cgmix import models


def batch(*rows):
    return np.asarray(rows, dtype=float)


# independent right-hand sides, written directly from the model equations
def l63_rhs(p, x, y, z):
    return np.array(
        [p.sigma * (y - x), x * (p.rho - z) - y, x * y - p.beta * z]
    )


def climate_rhs(p, x1, x2, y1, y2):
    swirl = p.L12 + p.a1 * x1 + p.a2 * x2
    return np.array(
        [
            -x2 * swirl + p.d1 * x1 + p.F1 + p.L13 * y1 + p.b123 * x2 * y1,
            x1 * swirl + p.d2 * x2 + p.F2 + p.L24 * y2 + p.b213 * x1 * y1,
            -p.L13 * x1 + p.b312 * x1 * x2 + p.F3 - p.gamma1 / p.epsilon * y1,
            -p.L24 * x2 + p.F4 - p.gamma2 / p.epsilon * y2,
        ]
    )


def triad_rhs(p, t, u1, u2, u3):
    F = p.forcing_base + p.forcing_amp * np.sin(2 * np.pi * t)
    return np.array(
        [
            -p.gamma1 * u1 + p.L12 * u2 + p.L13 * u3 + p.coupling * u1 * u2 + F,
            -p.L12 * u1 - p.gamma2 / p.epsilon * u2 + p.L23 * u3 - p.coupling * u1**2,
            -p.L13 * u1 - p.L23 * u2 - p.gamma3 / p.epsilon * u3,
        ]
    )


def turb_rhs(p, u, v):
    du = -p.d_u * u + p.F_u + sum(g * u * vi for g, vi in zip(p.gammas, v))
    dv = [-d * vi - g * u**2 for d, g, vi in zip(p.d_v, p.gammas, v)]
    return np.array([du] + dv)


def l96_rhs(p, I, J, u, v):
    du = np.empty(I)
    for i in range(I):
        du[i] = (
            u[(i - 1) % I] * (u[(i + 1) % I] - u[(i - 2) % I])
            + p.lam * v[i].sum()
            - p.d1 * u[i]
            + p.F
        )
    dv = np.empty((I, J))
    for i in range(I):
        for j in range(J):
            dv[i, j] = (
                (p.a_L * u[i] / p.epsilon) * (v[i, (j - 1) % J] - v[i, (j + 2) % J])
                - p.lam * u[i]
                - p.d2 * v[i, j]
            )
    return np.concatenate([du, dv.ravel()])


class TestDriftAssembly:
    def test_l63_hand_values(self):
        spec = models.build_l63()
        d = spec.drift(0.0, batch([1.0]), batch([1.0, 1.0]))[0]
        assert np.allclose(d, [0.0, 26.0, -5.0 / 3.0], atol=1e-14)
        d0 = spec.drift(0.0, batch([0.0]), batch([0.0, 0.0]))[0]
        assert np.allclose(d0, 0.0, atol=1e-15)

    def test_l63_matches_direct_rhs(self, rng):
        spec = models.build_l63()
        p = models.L63Params()
        for _ in range(50):
            x, y, z = rng.normal(scale=10.0, size=3)
            got = spec.drift(0.0, batch([x]), batch([y, z]))[0]
            want = l63_rhs(p, x, y, z)
            assert np.allclose(got, want, rtol=1e-14, atol=1e-12)

    def test_l63_alternative_partition(self, rng):
        spec = models.build_l63(observe="yz")
        p = models.L63Params()
        assert spec.obs_labels == ("y", "z")
        for _ in range(20):
            x, y, z = rng.normal(scale=8.0, size=3)
            got = spec.drift(0.0, batch([y, z]), batch([x]))[0]
            want = l63_rhs(p, x, y, z)
            # state ordering (y, z, x)
            assert np.allclose(got, want[[1, 2, 0]], rtol=1e-14, atol=1e-12)

    def test_climate_matches_direct_rhs(self, rng):
        spec = models.build_climate4d()
        p = models.Climate4DParams()
        assert p.b312 == pytest.approx(-3.0)
        for _ in range(50):
            x1, x2, y1, y2 = rng.normal(scale=3.0, size=4)
            got = spec.drift(0.0, batch([x1, x2]), batch([y1, y2]))[0]
            want = climate_rhs(p, x1, x2, y1, y2)
            assert np.allclose(got, want, rtol=1e-14, atol=1e-12)

    def test_triad_hand_value_and_rhs(self, rng):
        spec = models.build_triad3("I")
        d = spec.drift(0.0, batch([1.0]), batch([1.0, 1.0]))[0]
        assert d[0] == pytest.approx(5.3, abs=1e-12)
        for regime in ("I", "II", "III"):
            sp = models.build_triad3(regime)
            p = models.triad_regime_params(regime)
            for _ in range(30):
                t = rng.uniform(0, 3)
                u1, u2, u3 = rng.normal(scale=2.0, size=3)
                got = sp.drift(t, batch([u1]), batch([u2, u3]))[0]
                want = triad_rhs(p, t, u1, u2, u3)
                assert np.allclose(got, want, rtol=1e-14, atol=1e-12)

    def test_triad_forcing(self):
        p = models.triad_regime_params("II")
        F = lambda t: p.forcing_base + p.forcing_amp * np.sin(2 * np.pi * t)
        assert F(0.25) == pytest.approx(4.0)
        for t in (0.0, 0.3, 1.7):
            assert F(t) == pytest.approx(F(t + 1.0), abs=1e-12)
        # regime I forcing is constant
        assert models.triad_regime_params("I").forcing_amp == 0.0

    def test_turb6d(self, rng):
        spec = models.build_turbulence6d()
        p = models.Turb6DParams()
        d = spec.drift(0.0, batch([0.5]), np.zeros((1, 5)))[0]
        assert d[0] == pytest.approx(0.45, abs=1e-14)
        coupling = spec.hid_coupling(0.0, batch([0.3]))[0]
        assert np.allclose(coupling, np.diag([-0.2, -0.5, -1.0, -2.0, -5.0]))
        for _ in range(30):
            u = rng.normal(scale=3.0)
            v = rng.normal(scale=2.0, size=5)
            got = spec.drift(0.0, batch([u]), v[None, :])[0]
            assert np.allclose(got, turb_rhs(p, u, v), rtol=1e-14, atol=1e-12)

    def test_l96_two_layer(self, rng):
        I, J = 5, 3
        spec = models.build_lorenz96_two_layer(I, J)
        p = models.L96TwoLayerParams()
        zero = spec.drift(0.0, np.zeros((1, I)), np.zeros((1, I * J)))[0]
        assert np.allclose(zero[:I], p.F)
        for _ in range(20):
            u = rng.normal(size=I)
            v = rng.normal(size=(I, J))
            got = spec.drift(0.0, u[None, :], v.reshape(1, -1))[0]
            assert np.allclose(got, l96_rhs(p, I, J, u, v), rtol=1e-13, atol=1e-11)

    def test_l96_hand_value(self):
        I, J = 4, 2
        spec = models.build_lorenz96_two_layer(I, J)
        u = np.ones((1, I))
        v = np.zeros((1, I * J))
        d = spec.drift(0.0, u, v)[0]
        # with lam = d2 = 1 and zero fast state, every fast mode feels -u_i
        assert np.allclose(d[I:], -1.0)

    def test_l96_periodic_rotation(self, rng):
        I, J = 6, 2
        spec = models.build_lorenz96_two_layer(I, J)
        u = rng.normal(size=I)
        v = rng.normal(size=(I, J))
        d = spec.drift(0.0, u[None, :], v.reshape(1, -1))[0]
        u_rot = np.roll(u, 1)
        v_rot = np.roll(v, 1, axis=0)
        d_rot = spec.drift(0.0, u_rot[None, :], v_rot.reshape(1, -1))[0]
        assert np.allclose(np.roll(d[:I], 1), d_rot[:I], rtol=1e-12, atol=1e-12)
        assert np.allclose(
            np.roll(d[I:].reshape(I, J), 1, axis=0).ravel(), d_rot[I:], rtol=1e-12, atol=1e-12
        )


class TestValidation:
    def test_l63_rejects_nonpositive_noise(self):
        with pytest.raises(ValueError):
            models.build_l63(models.L63Params(sigma_x=0.0))

    def test_climate_rejects_bad_epsilon(self):
        with pytest.raises(ValueError, match="epsilon"):
            models.build_climate4d(models.Climate4DParams(epsilon=0.0))

    def test_unknown_regime(self):
        with pytest.raises(ValueError, match="regime"):
            models.build_triad3("IV")

    def test_l96_caps(self):
        with pytest.raises(ValueError, match="cap"):
            models.build_lorenz96_two_layer(40, 20)
        with pytest.raises(ValueError):
            models.build_lorenz96_two_layer(3, 2)

    def test_l63_bad_partition(self):
        with pytest.raises(ValueError, match="partition"):
            models.build_l63(observe="zz")

    def test_registry(self):
        for mid in models.model_ids():
            spec = models.build_model(mid)
            assert spec.n_obs >= 1 and spec.n_hid >= 1
        with pytest.raises(ValueError, match="unknown model"):
            models.build_model("nope")
        with pytest.raises(ValueError, match="unknown parameters"):
            models.build_model("l63", {"not_a_param": 1.0})
        spec = models.build_model("l63", {"rho": 30.0})
        d = spec.drift(0.0, batch([1.0]), batch([1.0, 1.0]))[0]
        assert d[1] == pytest.approx(28.0)  # 1*(30-1) - 1


class TestEnergyConservation:
    def test_all_models_conserve(self):
        for mid in models.model_ids():
            spec = models.build_model(mid)
            report = models.check_energy_conservation(spec, trials=1000, tol=1e-12, seed=5)
            assert report.applicable
            assert report.passed, f"{mid}: {report.max_violation}"

    def test_skew_cancellation_examples(self):
        spec = models.build_l63()
        u = batch([1.0, 2.0, 3.0])
        assert float(u[0] @ spec.quad_energy(u)[0]) == pytest.approx(0.0, abs=1e-14)
        clim = models.build_climate4d()
        w = batch([1.0, -1.0, 2.0, 0.5])
        assert float(w[0] @ clim.quad_energy(w)[0]) == pytest.approx(0.0, abs=1e-13)
        triad = models.build_triad3("III")
        rep = models.check_energy_conservation(triad, trials=1000, tol=1e-12, seed=1)
        assert rep.passed

    def test_detects_broken_quadratics(self):
        base = models.build_l63()

        def broken(u):
            out = base.quad_energy(u)
            out = out.copy()
            out[:, 1] += 0.1 * u[:, 0] ** 2
            return out

        from dataclasses import replace

        spec = replace(base, quad_energy=broken)
        report = models.check_energy_conservation(spec, trials=1000, tol=1e-12, seed=2)
        assert not report.passed

    def test_missing_quadratic_is_not_applicable(self):
        from dataclasses import replace

        spec = replace(models.build_l63(), quad_energy=None)
        report = models.check_energy_conservation(spec)
        assert not report.applicable and not report.passed
