"""Equal-weight Gaussian mixtures with block-diagonal components.

The recovered joint density is a mixture of L Gaussians, one per
ensemble member: the observed block carries the member's trajectory
endpoint with the shared kernel bandwidth as covariance, the hidden
block carries the member's posterior mean and covariance.  No component
has an explicit observed/hidden cross covariance; cross correlations
emerge from how component means co-vary, and the whole mixture converges
to the true joint density as L grows because the kernel bandwidth decays
with L.

Marginalization is exact sub-block selection; moments are closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cg_filter import ConditionalGaussianState
from .density import DensityField, GridSpec
from .kde import BandwidthMatrix

__all__ = [
    "MixtureAxis",
    "GaussianMixture",
    "assemble_joint",
    "marginal",
    "evaluate_on_grid",
    "mixture_pdf",
    "mixture_moments",
    "mixture_mean_cov",
]

_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class MixtureAxis:
    label: str
    block: str  # "obs" or "hid"
    index: int  # column inside its block


@dataclass
class GaussianMixture:
    """L equally weighted Gaussian components over the retained axes.

    ``means`` is (L, d) in axis order.  Observed axes share one diagonal
    covariance entry (``obs_var``); hidden axes share the per-component
    matrix ``hid_cov``.  Components never mix blocks, so every component
    covariance is block diagonal by construction.
    """

    t: float
    axes: tuple[MixtureAxis, ...]
    means: np.ndarray
    obs_var: np.ndarray  # (n_obs_axes,)
    hid_cov: np.ndarray  # (L, n_hid_axes, n_hid_axes)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.obs_var = np.asarray(self.obs_var, dtype=float)
        self.hid_cov = np.asarray(self.hid_cov, dtype=float)
        if self.means.ndim != 2 or self.means.shape[1] != len(self.axes):
            raise ValueError("means must be (L, n_axes)")
        n_obs = sum(1 for a in self.axes if a.block == "obs")
        n_hid = len(self.axes) - n_obs
        if self.obs_var.shape != (n_obs,):
            raise ValueError("obs_var size does not match observed axes")
        if self.hid_cov.shape != (self.n_components, n_hid, n_hid):
            raise ValueError("hid_cov shape does not match hidden axes")
        if np.any(self.obs_var <= 0) and n_obs:
            raise ValueError("observed kernel variances must be positive")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_components, 1.0 / self.n_components)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(a.label for a in self.axes)

    def axis_variances(self) -> np.ndarray:
        """Per-component marginal variance of every axis, shape (L, d)."""
        out = np.empty((self.n_components, self.ndim))
        for pos, ax in enumerate(self.axes):
            if ax.block == "obs":
                out[:, pos] = self.obs_var[ax.index]
            else:
                out[:, pos] = self.hid_cov[:, ax.index, ax.index]
        return out

    def component_cov(self, i: int) -> np.ndarray:
        """Dense covariance of component i in axis order."""
        d = self.ndim
        cov = np.zeros((d, d))
        for p1, a1 in enumerate(self.axes):
            for p2, a2 in enumerate(self.axes):
                if a1.block == a2.block == "obs":
                    if a1.index == a2.index:
                        cov[p1, p2] = self.obs_var[a1.index]
                elif a1.block == a2.block == "hid":
                    cov[p1, p2] = self.hid_cov[i, a1.index, a2.index]
        return cov


def assemble_joint(
    uI_endpoints: np.ndarray,
    bandwidth: BandwidthMatrix | np.ndarray,
    hid_states: "list[ConditionalGaussianState] | tuple[np.ndarray, np.ndarray, float]",
    obs_labels: tuple[str, ...] | None = None,
    hid_labels: tuple[str, ...] | None = None,
) -> GaussianMixture:
    """Joint mixture from observed endpoints plus per-member posteriors.

    Component i is centered at (endpoint_i, posterior_mean_i) with
    covariance diag(kernel variances) on the observed block and the
    posterior covariance on the hidden block.  ``hid_states`` is either a
    list of states sharing one timestamp or a pre-stacked
    (means, covs, t) triple.
    """
    uI_endpoints = np.asarray(uI_endpoints, dtype=float)
    if uI_endpoints.ndim == 1:
        uI_endpoints = uI_endpoints[:, None]
    obs_var = bandwidth.diag if isinstance(bandwidth, BandwidthMatrix) else np.atleast_1d(
        np.asarray(bandwidth, dtype=float)
    )
    L, p = uI_endpoints.shape
    if obs_var.size != p:
        raise ValueError(f"bandwidth has {obs_var.size} entries for {p} observed dims")

    if isinstance(hid_states, tuple):
        hid_means, hid_covs, t = hid_states
        hid_means = np.asarray(hid_means, dtype=float)
        hid_covs = np.asarray(hid_covs, dtype=float)
    else:
        if not hid_states:
            raise ValueError("need at least one hidden state")
        times = {float(s.t) for s in hid_states}
        if len(times) > 1:
            raise ValueError(f"hidden states carry mixed timestamps {sorted(times)}")
        t = times.pop()
        hid_means = np.stack([s.mean for s in hid_states])
        hid_covs = np.stack([s.cov for s in hid_states])
    if hid_means.shape[0] != L:
        raise ValueError(
            f"{hid_means.shape[0]} hidden states for {L} observed endpoints"
        )
    q = hid_means.shape[1]
    obs_labels = obs_labels or tuple(f"obs{i}" for i in range(p))
    hid_labels = hid_labels or tuple(f"hid{i}" for i in range(q))
    axes = tuple(MixtureAxis(lab, "obs", i) for i, lab in enumerate(obs_labels)) + tuple(
        MixtureAxis(lab, "hid", i) for i, lab in enumerate(hid_labels)
    )
    means = np.concatenate([uI_endpoints, hid_means], axis=1)
    return GaussianMixture(float(t), axes, means, obs_var, hid_covs)


def marginal(mix: GaussianMixture, dims: list[int]) -> GaussianMixture:
    """Marginal mixture over the selected axis positions (order kept)."""
    if not dims:
        raise ValueError("dims must be non-empty")
    if any(d < 0 or d >= mix.ndim for d in dims):
        raise ValueError(f"axis index out of range for {mix.ndim} axes: {dims}")
    picked = [mix.axes[d] for d in dims]
    obs_sel = [a.index for a in picked if a.block == "obs"]
    hid_sel = [a.index for a in picked if a.block == "hid"]
    new_axes = []
    obs_pos, hid_pos = 0, 0
    for a in picked:
        if a.block == "obs":
            new_axes.append(MixtureAxis(a.label, "obs", obs_pos))
            obs_pos += 1
        else:
            new_axes.append(MixtureAxis(a.label, "hid", hid_pos))
            hid_pos += 1
    return GaussianMixture(
        mix.t,
        tuple(new_axes),
        mix.means[:, dims],
        mix.obs_var[obs_sel],
        mix.hid_cov[:, np.ix_(hid_sel, hid_sel)[0], np.ix_(hid_sel, hid_sel)[1]]
        if hid_sel
        else np.zeros((mix.n_components, 0, 0)),
    )


def _axis_kernel_matrix(
    points: np.ndarray, centers: np.ndarray, variances: np.ndarray | float
) -> np.ndarray:
    """(L, n) matrix of 1D normal pdfs; variances scalar or per-component."""
    var = np.broadcast_to(np.asarray(variances, dtype=float), centers.shape)
    diff = points[None, :] - centers[:, None]
    return np.exp(-0.5 * diff**2 / var[:, None]) / np.sqrt(_TWO_PI * var[:, None])


def _bivariate_fields(
    mix: GaussianMixture, hid_positions: list[int], grids: list[np.ndarray]
) -> np.ndarray:
    """Per-component densities of a 2-hidden-axis pair on a product grid.

    Returns (L, ny, nz).  Components are evaluated in chunks with the
    explicit 2x2 inverse.
    """
    a1 = mix.axes[hid_positions[0]]
    a2 = mix.axes[hid_positions[1]]
    mu1 = mix.means[:, hid_positions[0]]
    mu2 = mix.means[:, hid_positions[1]]
    v11 = mix.hid_cov[:, a1.index, a1.index]
    v22 = mix.hid_cov[:, a2.index, a2.index]
    v12 = mix.hid_cov[:, a1.index, a2.index]
    det = v11 * v22 - v12**2
    if np.any(det <= 0):
        raise ValueError("degenerate hidden 2x2 covariance in mixture component")
    g1, g2 = grids
    L = mix.n_components
    out = np.empty((L, g1.size, g2.size))
    chunk = max(1, int(4_000_000 / (g1.size * g2.size)))
    for lo in range(0, L, chunk):
        sl = slice(lo, min(lo + chunk, L))
        d1 = g1[None, :, None] - mu1[sl, None, None]
        d2 = g2[None, None, :] - mu2[sl, None, None]
        p11 = (v22[sl] / det[sl])[:, None, None]
        p22 = (v11[sl] / det[sl])[:, None, None]
        p12 = (-v12[sl] / det[sl])[:, None, None]
        expo = -0.5 * (p11 * d1**2 + 2.0 * p12 * d1 * d2 + p22 * d2**2)
        out[sl] = np.exp(expo) / (_TWO_PI * np.sqrt(det[sl])[:, None, None])
    return out


def mixture_pdf(mix: GaussianMixture, points: np.ndarray) -> np.ndarray:
    """Exact mixture density at arbitrary points (Q, d)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != mix.ndim:
        raise ValueError(f"points have {points.shape[1]} dims, mixture has {mix.ndim}")
    obs_pos = [i for i, a in enumerate(mix.axes) if a.block == "obs"]
    hid_pos = [i for i, a in enumerate(mix.axes) if a.block == "hid"]
    hid_idx = [mix.axes[i].index for i in hid_pos]
    Q = points.shape[0]
    L = mix.n_components
    nh = len(hid_pos)
    total = np.zeros(Q)
    chunk = max(1, int(15_000_000 / max(Q * max(nh, 1), 1)))
    hid_cov = mix.hid_cov[:, np.ix_(hid_idx, hid_idx)[0], np.ix_(hid_idx, hid_idx)[1]] if nh else None
    for lo in range(0, L, chunk):
        sl = slice(lo, min(lo + chunk, L))
        factor = np.ones((sl.stop - sl.start, Q))
        if obs_pos:
            var = mix.obs_var[[mix.axes[i].index for i in obs_pos]]
            diff = points[None, :, obs_pos] - mix.means[sl][:, None, obs_pos]
            expo = -0.5 * np.einsum("cqd,d->cq", diff**2, 1.0 / var)
            factor *= np.exp(expo) / np.sqrt(np.prod(_TWO_PI * var))
        if nh:
            diff = points[None, :, hid_pos] - mix.means[sl][:, None, hid_pos]
            chol = np.linalg.cholesky(hid_cov[sl])
            solved = np.linalg.solve(chol, diff.transpose(0, 2, 1))
            quad = np.einsum("chq,chq->cq", solved, solved)
            logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
            factor *= np.exp(-0.5 * (quad + logdet[:, None] + nh * np.log(_TWO_PI)))
        total += factor.sum(axis=0)
    return total / L


def evaluate_on_grid(mix: GaussianMixture, grid: GridSpec) -> DensityField:
    """Mixture density on a product grid, exploiting the block structure.

    Observed axes and single hidden axes factorize, so 1D/2D fields reduce
    to per-axis kernel matrices combined by a matrix product.  Pairs of
    hidden axes are evaluated jointly; three or more hidden axes fall back
    to pointwise evaluation.
    """
    if grid.ndim != mix.ndim:
        raise ValueError(f"grid has {grid.ndim} axes, mixture has {mix.ndim}")
    L = mix.n_components
    pts = grid.points()
    hid_positions = [i for i, a in enumerate(mix.axes) if a.block == "hid"]
    meta = {"kind": "mixture", "t": mix.t, "n_components": L}

    if len(hid_positions) <= 1:
        # fully separable: every axis is an independent 1D kernel
        variances = mix.axis_variances()
        per_axis = [
            _axis_kernel_matrix(pts[pos], mix.means[:, pos], variances[:, pos])
            for pos in range(mix.ndim)
        ]
        values = _combine_separable(per_axis) / L
    elif len(hid_positions) == 2:
        pair = _bivariate_fields(mix, hid_positions, [pts[i] for i in hid_positions])
        obs_positions = [i for i in range(mix.ndim) if i not in hid_positions]
        if not obs_positions:
            values = pair.mean(axis=0)
        else:
            variances = mix.axis_variances()
            obs_mats = [
                _axis_kernel_matrix(pts[i], mix.means[:, i], variances[:, i])
                for i in obs_positions
            ]
            if len(obs_mats) == 1:
                flat = obs_mats[0].T @ pair.reshape(L, -1) / L
                canonical = flat.reshape((obs_mats[0].shape[1],) + pair.shape[1:])
            else:
                canonical = np.einsum("li,lj,lmn->ijmn", *obs_mats, pair) / L
            # canonical axes run obs positions first, then the hidden pair
            order = obs_positions + hid_positions
            values = np.transpose(canonical, np.argsort(order))
    else:
        values = mixture_pdf(mix, grid.flat_points()).reshape(grid.shape)

    return DensityField(grid, np.asarray(values), meta)


def _combine_separable(per_axis: list[np.ndarray]) -> np.ndarray:
    if len(per_axis) == 1:
        return per_axis[0].sum(axis=0)
    if len(per_axis) == 2:
        return per_axis[0].T @ per_axis[1]
    if len(per_axis) == 3:
        return np.einsum("li,lj,lk->ijk", *per_axis)
    raise ValueError("separable combination supports at most 3 axes")


def mixture_moments(mix: GaussianMixture, dim: int) -> dict[str, float]:
    """Closed-form 1D moments of one axis: mean, variance, skewness,
    kurtosis (non-excess; a Gaussian scores 3)."""
    if dim < 0 or dim >= mix.ndim:
        raise ValueError(f"axis {dim} out of range")
    mu = mix.means[:, dim]
    var = mix.axis_variances()[:, dim]
    m1 = mu.mean()
    raw2 = np.mean(mu**2 + var)
    raw3 = np.mean(mu**3 + 3.0 * mu * var)
    raw4 = np.mean(mu**4 + 6.0 * mu**2 * var + 3.0 * var**2)
    variance = raw2 - m1**2
    if variance <= 0:
        raise ValueError("mixture axis has zero variance; higher moments undefined")
    c3 = raw3 - 3.0 * m1 * raw2 + 2.0 * m1**3
    c4 = raw4 - 4.0 * m1 * raw3 + 6.0 * m1**2 * raw2 - 3.0 * m1**4
    return {
        "mean": float(m1),
        "variance": float(variance),
        "skewness": float(c3 / variance**1.5),
        "kurtosis": float(c4 / variance**2),
    }


def mixture_mean_cov(mix: GaussianMixture) -> tuple[np.ndarray, np.ndarray]:
    """Mixture mean vector and covariance matrix (law of total covariance)."""
    mean = mix.means.mean(axis=0)
    d = mix.ndim
    within = np.zeros((d, d))
    for p1, a1 in enumerate(mix.axes):
        for p2, a2 in enumerate(mix.axes):
            if a1.block == a2.block == "obs" and a1.index == a2.index:
                within[p1, p2] = mix.obs_var[a1.index]
            elif a1.block == a2.block == "hid":
                within[p1, p2] = mix.hid_cov[:, a1.index, a2.index].mean()
    between = np.cov(mix.means.T, bias=True).reshape(d, d)
    return mean, within + between
