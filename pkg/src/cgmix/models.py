"""Partially observed stochastic models with closed-form hidden-state filters.

Every system here has the structure

    d u_obs = [f(t, u_obs) + F(t, u_obs) u_hid] dt + S_obs(t, u_obs) dW_obs
    d u_hid = [g(t, u_obs) + G(t, u_obs) u_hid] dt + S_hid(t, u_obs) dW_hid

i.e. the hidden block enters both drifts linearly with coefficients that
depend only on time and the observed block.  Conditioned on one observed
trajectory the hidden state is then exactly Gaussian, which is what the
filtering module exploits.  :class:`CGSystemSpec` bundles the six
coefficient callables plus dimensions and labels.

Coefficient callables are batched: they accept ``u_obs`` of shape
``(B, n_obs)`` and return arrays with a leading batch axis.  They must be
pure (safe to call concurrently) and cheap, since the integrator calls
them once per time step per member chunk.

The concrete systems are turbulence-style testbeds whose quadratic
interactions move energy between scales without creating or destroying
it; :func:`check_energy_conservation` verifies that structural identity
numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Callable, Optional

import numpy as np

__all__ = [
    "CGSystemSpec",
    "EnergyReport",
    "L63Params",
    "Climate4DParams",
    "TriadParams",
    "Turb6DParams",
    "L96TwoLayerParams",
    "build_l63",
    "build_climate4d",
    "build_triad3",
    "build_turbulence6d",
    "build_lorenz96_two_layer",
    "check_energy_conservation",
    "build_model",
    "model_ids",
]

Coef = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CGSystemSpec:
    """Coefficient bundle defining one conditionally Gaussian system.

    Shapes for a batch of ``B`` observed states ``u_obs`` of shape
    ``(B, n_obs)``:

    ==============  =====================  =========================
    callable        returns                role
    ==============  =====================  =========================
    obs_drift       (B, n_obs)             drift of u_obs, hid-free part
    obs_coupling    (B, n_obs, n_hid)      matrix on u_hid in obs drift
    hid_drift       (B, n_hid)             drift of u_hid, hid-free part
    hid_coupling    (B, n_hid, n_hid)      matrix on u_hid in hid drift
    obs_noise       (B, n_obs, n_obs)      diffusion of u_obs
    hid_noise       (B, n_hid, n_hid)      diffusion of u_hid
    ==============  =====================  =========================

    ``obs_noise`` must be invertible wherever the filter runs; the filter
    gain involves the inverse of ``obs_noise @ obs_noise.T``.

    ``quad_energy``, when present, maps full states ``(B, n_obs+n_hid)``
    (observed block first) to the energy-conserving quadratic part of the
    drift, satisfying ``sum(u * quad_energy(u)) == 0``.
    """

    name: str
    n_obs: int
    n_hid: int
    obs_labels: tuple[str, ...]
    hid_labels: tuple[str, ...]
    obs_drift: Coef
    obs_coupling: Coef
    hid_drift: Coef
    hid_coupling: Coef
    obs_noise: Coef
    hid_noise: Coef
    quad_energy: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def n_total(self) -> int:
        return self.n_obs + self.n_hid

    @property
    def labels(self) -> tuple[str, ...]:
        return self.obs_labels + self.hid_labels

    def drift(self, t: float, u_obs: np.ndarray, u_hid: np.ndarray) -> np.ndarray:
        """Full-state drift ``(B, n_obs + n_hid)`` assembled from the blocks."""
        du_obs = self.obs_drift(t, u_obs) + np.einsum(
            "bij,bj->bi", self.obs_coupling(t, u_obs), u_hid
        )
        du_hid = self.hid_drift(t, u_obs) + np.einsum(
            "bij,bj->bi", self.hid_coupling(t, u_obs), u_hid
        )
        return np.concatenate([du_obs, du_hid], axis=-1)


@dataclass(frozen=True)
class EnergyReport:
    applicable: bool
    max_violation: float
    passed: bool


def check_energy_conservation(
    spec: CGSystemSpec,
    trials: int = 1000,
    tol: float = 1e-12,
    seed: int = 0,
    scale: float = 3.0,
) -> EnergyReport:
    """Probe ``|u . B(u,u)| / (1 + |u|^3)`` over random states.

    The cubic normalizer makes the measure relative: the contraction is a
    sum of cubic monomials, so violations grow like ``|u|^3``.
    """
    if spec.quad_energy is None:
        return EnergyReport(applicable=False, max_violation=float("nan"), passed=False)
    rng = np.random.default_rng(seed)
    u = scale * rng.standard_normal((trials, spec.n_total))
    dots = np.einsum("bi,bi->b", u, spec.quad_energy(u))
    rel = np.abs(dots) / (1.0 + np.linalg.norm(u, axis=1) ** 3)
    worst = float(rel.max())
    return EnergyReport(applicable=True, max_violation=worst, passed=worst <= tol)


def _const_matrix(mat: np.ndarray) -> Coef:
    mat = np.asarray(mat, dtype=float)

    def coef(t, u_obs):
        B = u_obs.shape[0]
        return np.broadcast_to(mat, (B,) + mat.shape)

    return coef


def _require_positive(**named) -> None:
    for name, value in named.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


# ---------------------------------------------------------------------------
# chaotic three-variable convection model with additive noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class L63Params:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    sigma_x: float = 10.0
    sigma_y: float = 10.0
    sigma_z: float = 10.0


def build_l63(params: L63Params | None = None, observe: str = "x") -> CGSystemSpec:
    """Noisy three-variable convection model.

        dx = sigma (y - x) dt + sigma_x dWx
        dy = (x (rho - z) - y) dt + sigma_y dWy
        dz = (x y - beta z) dt + sigma_z dWz

    The quadratic pair (-xz, +xy) exchanges energy between y and z.  With
    ``observe="x"`` the scalar x drives the filter for (y, z); the
    alternative partition ``observe="yz"`` treats x as hidden.
    """
    p = params or L63Params()
    _require_positive(sigma_x=p.sigma_x, sigma_y=p.sigma_y, sigma_z=p.sigma_z)

    if observe == "x":

        def obs_drift(t, u_obs):
            return -p.sigma * u_obs

        def obs_coupling(t, u_obs):
            B = u_obs.shape[0]
            out = np.zeros((B, 1, 2))
            out[:, 0, 0] = p.sigma
            return out

        def hid_drift(t, u_obs):
            B = u_obs.shape[0]
            out = np.zeros((B, 2))
            out[:, 0] = p.rho * u_obs[:, 0]
            return out

        def hid_coupling(t, u_obs):
            B = u_obs.shape[0]
            x = u_obs[:, 0]
            out = np.zeros((B, 2, 2))
            out[:, 0, 0] = -1.0
            out[:, 0, 1] = -x
            out[:, 1, 0] = x
            out[:, 1, 1] = -p.beta
            return out

        def quad_energy(u):
            # state order (x, y, z)
            x, y, z = u[:, 0], u[:, 1], u[:, 2]
            out = np.zeros_like(u)
            out[:, 1] = -x * z
            out[:, 2] = x * y
            return out

        return CGSystemSpec(
            name="l63",
            n_obs=1,
            n_hid=2,
            obs_labels=("x",),
            hid_labels=("y", "z"),
            obs_drift=obs_drift,
            obs_coupling=obs_coupling,
            hid_drift=hid_drift,
            hid_coupling=hid_coupling,
            obs_noise=_const_matrix([[p.sigma_x]]),
            hid_noise=_const_matrix([[p.sigma_y, 0.0], [0.0, p.sigma_z]]),
            quad_energy=quad_energy,
        )

    if observe == "yz":

        def obs_drift(t, u_obs):
            y, z = u_obs[:, 0], u_obs[:, 1]
            out = np.empty_like(u_obs)
            out[:, 0] = -y
            out[:, 1] = -p.beta * z
            return out

        def obs_coupling(t, u_obs):
            y, z = u_obs[:, 0], u_obs[:, 1]
            B = u_obs.shape[0]
            out = np.zeros((B, 2, 1))
            out[:, 0, 0] = p.rho - z
            out[:, 1, 0] = y
            return out

        def hid_drift(t, u_obs):
            return p.sigma * u_obs[:, :1]

        def hid_coupling(t, u_obs):
            B = u_obs.shape[0]
            return np.full((B, 1, 1), -p.sigma)

        def quad_energy(u):
            # state order (y, z, x)
            y, z, x = u[:, 0], u[:, 1], u[:, 2]
            out = np.zeros_like(u)
            out[:, 0] = -x * z
            out[:, 1] = x * y
            return out

        return CGSystemSpec(
            name="l63",
            n_obs=2,
            n_hid=1,
            obs_labels=("y", "z"),
            hid_labels=("x",),
            obs_drift=obs_drift,
            obs_coupling=obs_coupling,
            hid_drift=hid_drift,
            hid_coupling=hid_coupling,
            obs_noise=_const_matrix([[p.sigma_y, 0.0], [0.0, p.sigma_z]]),
            hid_noise=_const_matrix([[p.sigma_x]]),
            quad_energy=quad_energy,
        )

    raise ValueError(f"unknown partition {observe!r}, expected 'x' or 'yz'")


# ---------------------------------------------------------------------------
# four-variable slow/fast climate-style model with multiplicative coupling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Climate4DParams:
    L12: float = 1.0
    L13: float = 0.5
    L24: float = 0.5
    a1: float = 2.0
    a2: float = 1.0
    d1: float = -1.0
    d2: float = -0.4
    epsilon: float = 1.0
    sigma_x1: float = 0.5
    sigma_x2: float = 2.0
    sigma_y1: float = 0.5
    sigma_y2: float = 1.0
    b123: float = 1.5
    b213: float = 1.5
    gamma1: float = 1.0
    gamma2: float = 1.0
    F1: float = 0.0
    F2: float = 0.0
    F3: float = 0.0
    F4: float = 0.0

    @property
    def b312(self) -> float:
        # third triad coefficient fixed by the zero-sum constraint
        return -(self.b123 + self.b213)


def build_climate4d(params: Climate4DParams | None = None) -> CGSystemSpec:
    """Slow climate pair (x1, x2) coupled to fast weather pair (y1, y2).

        dx1 = (-x2 (L12 + a1 x1 + a2 x2) + d1 x1 + F1 + L13 y1 + b123 x2 y1) dt + sigma_x1 dW
        dx2 = ( x1 (L12 + a1 x1 + a2 x2) + d2 x2 + F2 + L24 y2 + b213 x1 y1) dt + sigma_x2 dW
        dy1 = (-L13 x1 + b312 x1 x2 + F3 - gamma1/eps y1) dt + sigma_y1/sqrt(eps) dW
        dy2 = (-L24 x2 + F4 - gamma2/eps y2) dt + sigma_y2/sqrt(eps) dW

    The triad coefficients satisfy b123 + b213 + b312 = 0, which makes the
    quadratic interactions energy-neutral.  Each equation carries its own
    independent Wiener process.
    """
    p = params or Climate4DParams()
    if p.epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {p.epsilon}")
    _require_positive(
        sigma_x1=p.sigma_x1, sigma_x2=p.sigma_x2, sigma_y1=p.sigma_y1, sigma_y2=p.sigma_y2
    )
    root_eps = np.sqrt(p.epsilon)

    def obs_drift(t, u_obs):
        x1, x2 = u_obs[:, 0], u_obs[:, 1]
        swirl = p.L12 + p.a1 * x1 + p.a2 * x2
        out = np.empty_like(u_obs)
        out[:, 0] = -x2 * swirl + p.d1 * x1 + p.F1
        out[:, 1] = x1 * swirl + p.d2 * x2 + p.F2
        return out

    def obs_coupling(t, u_obs):
        x1, x2 = u_obs[:, 0], u_obs[:, 1]
        B = u_obs.shape[0]
        out = np.zeros((B, 2, 2))
        out[:, 0, 0] = p.L13 + p.b123 * x2
        out[:, 1, 0] = p.b213 * x1
        out[:, 1, 1] = p.L24
        return out

    def hid_drift(t, u_obs):
        x1, x2 = u_obs[:, 0], u_obs[:, 1]
        out = np.empty_like(u_obs)
        out[:, 0] = -p.L13 * x1 + p.b312 * x1 * x2 + p.F3
        out[:, 1] = -p.L24 * x2 + p.F4
        return out

    hid_coupling = _const_matrix(
        [[-p.gamma1 / p.epsilon, 0.0], [0.0, -p.gamma2 / p.epsilon]]
    )

    def quad_energy(u):
        x1, x2, y1 = u[:, 0], u[:, 1], u[:, 2]
        out = np.zeros_like(u)
        out[:, 0] = -x2 * (p.a1 * x1 + p.a2 * x2) + p.b123 * x2 * y1
        out[:, 1] = x1 * (p.a1 * x1 + p.a2 * x2) + p.b213 * x1 * y1
        out[:, 2] = p.b312 * x1 * x2
        return out

    return CGSystemSpec(
        name="climate4d",
        n_obs=2,
        n_hid=2,
        obs_labels=("x1", "x2"),
        hid_labels=("y1", "y2"),
        obs_drift=obs_drift,
        obs_coupling=obs_coupling,
        hid_drift=hid_drift,
        hid_coupling=hid_coupling,
        obs_noise=_const_matrix([[p.sigma_x1, 0.0], [0.0, p.sigma_x2]]),
        hid_noise=_const_matrix(
            [[p.sigma_y1 / root_eps, 0.0], [0.0, p.sigma_y2 / root_eps]]
        ),
        quad_energy=quad_energy,
    )


# ---------------------------------------------------------------------------
# three-variable triad with intermittent bursts and periodic forcing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TriadParams:
    gamma1: float = 2.0
    gamma2: float = 0.2
    gamma3: float = 0.4
    L12: float = 0.2
    L13: float = 0.1
    L23: float = 0.0
    sigma1: float = 0.5
    sigma2: float = 1.2
    sigma3: float = 0.8
    coupling: float = 5.0
    epsilon: float = 1.0
    forcing_base: float = 2.0
    forcing_amp: float = 0.0


_TRIAD_REGIMES = {
    "I": TriadParams(),
    "II": TriadParams(
        gamma2=0.6,
        L12=1.0,
        L13=0.5,
        sigma2=0.1,
        sigma3=0.1,
        epsilon=0.1,
        forcing_amp=2.0,
    ),
    "III": TriadParams(
        gamma2=0.6,
        L12=1.0,
        L13=1.0,
        L23=10.0,
        sigma2=0.1,
        sigma3=0.1,
        epsilon=0.1,
        forcing_amp=2.0,
    ),
}


def triad_regime_params(regime: str) -> TriadParams:
    try:
        return _TRIAD_REGIMES[regime]
    except KeyError:
        raise ValueError(
            f"unknown regime {regime!r}, expected one of {sorted(_TRIAD_REGIMES)}"
        ) from None


def build_triad3(regime: str = "I", params: TriadParams | None = None) -> CGSystemSpec:
    """Nonlinear triad: slow u1 observed, (u2, u3) hidden.

        du1 = (-gamma1 u1 + L12 u2 + L13 u3 + c u1 u2 + F(t)) dt + sigma1 dW1
        du2 = (-L12 u1 - gamma2/eps u2 + L23 u3 - c u1^2) dt + sigma2/sqrt(eps) dW2
        du3 = (-L13 u1 - L23 u2 - gamma3/eps u3) dt + sigma3/sqrt(eps) dW3

    The (u1, u2) dyad interaction c(u1 u2, -u1^2) conserves energy and
    produces intermittent bursts; the skew L23 pair rotates (u2, u3).
    Forcing is F(t) = base + amp sin(2 pi t), 1-periodic, with amp = 0 in
    the weakly coupled regime.
    """
    p = params or triad_regime_params(regime)
    if regime not in _TRIAD_REGIMES:
        raise ValueError(
            f"unknown regime {regime!r}, expected one of {sorted(_TRIAD_REGIMES)}"
        )
    if p.epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {p.epsilon}")
    _require_positive(sigma1=p.sigma1, sigma2=p.sigma2, sigma3=p.sigma3)
    root_eps = np.sqrt(p.epsilon)

    def forcing(t: float) -> float:
        return p.forcing_base + p.forcing_amp * np.sin(2.0 * np.pi * t)

    def obs_drift(t, u_obs):
        return -p.gamma1 * u_obs + forcing(t)

    def obs_coupling(t, u_obs):
        u1 = u_obs[:, 0]
        B = u_obs.shape[0]
        out = np.empty((B, 1, 2))
        out[:, 0, 0] = p.L12 + p.coupling * u1
        out[:, 0, 1] = p.L13
        return out

    def hid_drift(t, u_obs):
        u1 = u_obs[:, 0]
        B = u_obs.shape[0]
        out = np.empty((B, 2))
        out[:, 0] = -p.L12 * u1 - p.coupling * u1**2
        out[:, 1] = -p.L13 * u1
        return out

    hid_coupling = _const_matrix(
        [[-p.gamma2 / p.epsilon, p.L23], [-p.L23, -p.gamma3 / p.epsilon]]
    )

    def quad_energy(u):
        u1, u2 = u[:, 0], u[:, 1]
        out = np.zeros_like(u)
        out[:, 0] = p.coupling * u1 * u2
        out[:, 1] = -p.coupling * u1**2
        return out

    return CGSystemSpec(
        name=f"triad3:{regime}",
        n_obs=1,
        n_hid=2,
        obs_labels=("u1",),
        hid_labels=("u2", "u3"),
        obs_drift=obs_drift,
        obs_coupling=obs_coupling,
        hid_drift=hid_drift,
        hid_coupling=hid_coupling,
        obs_noise=_const_matrix([[p.sigma1]]),
        hid_noise=_const_matrix(
            [[p.sigma2 / root_eps, 0.0], [0.0, p.sigma3 / root_eps]]
        ),
        quad_energy=quad_energy,
    )


# ---------------------------------------------------------------------------
# six-variable cascade: one large scale feeding five damped small scales
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Turb6DParams:
    d_u: float = 0.1
    F_u: float = 0.5
    sigma_u: float = 2.0
    gammas: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25, 0.25)
    sigma_v: tuple[float, ...] = (0.5, 0.2, 0.1, 0.1, 0.1)
    d_v: tuple[float, ...] = (0.2, 0.5, 1.0, 2.0, 5.0)


def build_turbulence6d(params: Turb6DParams | None = None) -> CGSystemSpec:
    """Scalar large-scale mode u driving five small-scale modes v_i.

        du   = (-d_u u + F_u + sum_i g_i u v_i) dt + sigma_u dW
        dv_i = (-d_i v_i - g_i u^2) dt + sigma_i dW_i

    Each dyad g_i (u v_i, -u^2) is energy-neutral; increasing damping
    d_1 < ... < d_5 gives the v_i progressively faster scales and fatter
    transient tails.
    """
    p = params or Turb6DParams()
    m = len(p.gammas)
    if not (len(p.sigma_v) == len(p.d_v) == m):
        raise ValueError("gammas, sigma_v and d_v must have equal length")
    _require_positive(sigma_u=p.sigma_u, **{f"sigma_v{i+1}": s for i, s in enumerate(p.sigma_v)})
    gammas = np.asarray(p.gammas, dtype=float)

    def obs_drift(t, u_obs):
        return -p.d_u * u_obs + p.F_u

    def obs_coupling(t, u_obs):
        u = u_obs[:, 0]
        return (gammas[None, None, :] * u[:, None, None]).copy()

    def hid_drift(t, u_obs):
        u = u_obs[:, 0]
        return -gammas[None, :] * (u**2)[:, None]

    hid_coupling = _const_matrix(np.diag([-d for d in p.d_v]))

    def quad_energy(u):
        big = u[:, 0]
        v = u[:, 1:]
        out = np.zeros_like(u)
        out[:, 0] = (gammas[None, :] * v).sum(axis=1) * big
        out[:, 1:] = -gammas[None, :] * (big**2)[:, None]
        return out

    return CGSystemSpec(
        name="turb6d",
        n_obs=1,
        n_hid=m,
        obs_labels=("u",),
        hid_labels=tuple(f"v{i+1}" for i in range(m)),
        obs_drift=obs_drift,
        obs_coupling=obs_coupling,
        hid_drift=hid_drift,
        hid_coupling=hid_coupling,
        obs_noise=_const_matrix([[p.sigma_u]]),
        hid_noise=_const_matrix(np.diag(p.sigma_v)),
        quad_energy=quad_energy,
    )


# ---------------------------------------------------------------------------
# two-layer ring lattice: slow ring u_i, fast sub-ring v_ij per site
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class L96TwoLayerParams:
    lam: float = 1.0
    d1: float = 1.0
    d2: float = 1.0
    F: float = 8.0
    epsilon: float = 0.1
    a_L: float = 1.0
    sigma_u: float = 1.0
    # the fast layer carries no intrinsic noise in the original model; a
    # small floor keeps the filter covariance nondegenerate
    sigma_v: float = 0.1
    max_hidden: int = 512


def build_lorenz96_two_layer(
    I: int, J: int, params: L96TwoLayerParams | None = None
) -> CGSystemSpec:
    """Advective slow ring of I sites, each with a fast sub-ring of J modes.

        du_i     = (u_{i-1}(u_{i+1} - u_{i-2}) + lam sum_j v_ij - d1 u_i + F) dt
                   + sigma_u dW_i
        dv_{i,j} = ((a_L u_i / eps)(v_{i,j-1} - v_{i,j+2}) - lam u_i - d2 v_ij) dt
                   + sigma_v dW_ij

    Indices are periodic in i and in (i, j).  This is the slow-fast case
    (no fast-layer self-advection), which keeps the hidden block linear
    given the slow ring.  ``quad_energy`` exposes the slow advection,
    the part of the quadratic drift that conserves energy on its own;
    the cross-layer transport term redistributes but does not conserve.
    """
    p = params or L96TwoLayerParams()
    if I < 4:
        raise ValueError("need I >= 4 for the advective stencil")
    if J < 1:
        raise ValueError("need J >= 1")
    if I * J > p.max_hidden:
        raise ValueError(
            f"hidden dimension I*J = {I * J} exceeds the configured cap {p.max_hidden}"
        )
    if p.epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {p.epsilon}")
    _require_positive(sigma_u=p.sigma_u, sigma_v=p.sigma_v)

    n_hid = I * J
    # constant coupling of the slow ring to its own sub-ring sums
    lam_matrix = np.zeros((I, n_hid))
    for i in range(I):
        lam_matrix[i, i * J : (i + 1) * J] = p.lam

    # sparse stencil v_{i,j-1} - v_{i,j+2} within each sub-ring
    stencil = np.zeros((n_hid, n_hid))
    for i in range(I):
        for j in range(J):
            row = i * J + j
            stencil[row, i * J + (j - 1) % J] += 1.0
            stencil[row, i * J + (j + 2) % J] -= 1.0
    eye_hid = np.eye(n_hid)
    row_site = np.repeat(np.arange(I), J)

    def slow_advection(u):
        return np.roll(u, 1, axis=1) * (np.roll(u, -1, axis=1) - np.roll(u, 2, axis=1))

    def obs_drift(t, u_obs):
        return slow_advection(u_obs) - p.d1 * u_obs + p.F

    obs_coupling = _const_matrix(lam_matrix)

    def hid_drift(t, u_obs):
        return -p.lam * u_obs[:, row_site]

    def hid_coupling(t, u_obs):
        u_rows = u_obs[:, row_site]
        return (p.a_L / p.epsilon) * u_rows[:, :, None] * stencil[None, :, :] - (
            p.d2 * eye_hid
        )[None, :, :]

    def quad_energy(u):
        out = np.zeros_like(u)
        out[:, :I] = slow_advection(u[:, :I])
        return out

    return CGSystemSpec(
        name="l96two",
        n_obs=I,
        n_hid=n_hid,
        obs_labels=tuple(f"u{i+1}" for i in range(I)),
        hid_labels=tuple(f"v{i+1}_{j+1}" for i in range(I) for j in range(J)),
        obs_drift=obs_drift,
        obs_coupling=obs_coupling,
        hid_drift=hid_drift,
        hid_coupling=hid_coupling,
        obs_noise=_const_matrix(p.sigma_u * np.eye(I)),
        hid_noise=_const_matrix(p.sigma_v * np.eye(n_hid)),
        quad_energy=quad_energy,
    )


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------


def _with_overrides(cls, overrides: dict):
    base = cls()
    known = {f.name for f in fields(cls)}
    bad = set(overrides) - known
    if bad:
        raise ValueError(f"unknown parameters for {cls.__name__}: {sorted(bad)}")
    return replace(base, **overrides)


def build_model(model_id: str, overrides: dict | None = None) -> CGSystemSpec:
    """Construct a registered model from its string id.

    Ids: ``l63``, ``climate4d``, ``triad3:I``, ``triad3:II``, ``triad3:III``,
    ``turb6d``, ``l96two``.  ``overrides`` maps parameter names to values;
    for ``l96two`` the ring sizes are the ``I`` and ``J`` keys.
    """
    overrides = dict(overrides or {})
    if model_id == "l63":
        return build_l63(_with_overrides(L63Params, overrides))
    if model_id == "climate4d":
        return build_climate4d(_with_overrides(Climate4DParams, overrides))
    if model_id.startswith("triad3:"):
        regime = model_id.split(":", 1)[1]
        base = triad_regime_params(regime)
        known = {f.name for f in fields(TriadParams)}
        bad = set(overrides) - known
        if bad:
            raise ValueError(f"unknown parameters for TriadParams: {sorted(bad)}")
        return build_triad3(regime, replace(base, **overrides))
    if model_id == "turb6d":
        return build_turbulence6d(_with_overrides(Turb6DParams, overrides))
    if model_id == "l96two":
        ring = int(overrides.pop("I", 4))
        sub = int(overrides.pop("J", 2))
        return build_lorenz96_two_layer(
            ring, sub, _with_overrides(L96TwoLayerParams, overrides)
        )
    raise ValueError(f"unknown model id {model_id!r}; known: {', '.join(model_ids())}")


def model_ids() -> list[str]:
    return ["l63", "climate4d", "triad3:I", "triad3:II", "triad3:III", "turb6d", "l96two"]
