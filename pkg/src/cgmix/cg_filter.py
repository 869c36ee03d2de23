"""Closed-form posterior for the hidden block along one observed path.

Given one trajectory of the observed variables, the hidden block of the
systems in :mod:`cgmix.models` is exactly Gaussian.  Its mean and
covariance obey

    d m = (g + G m) dt + R F' (S S')^{-1} [du_obs - (f + F m) dt]
    d R = (G R + R G' + Q - R F' (S S')^{-1} F R) dt

with f, F the observed-drift blocks, g, G the hidden-drift blocks,
S = obs_noise, Q = hid_noise hid_noise'.  Structurally this is a
Kalman-Bucy filter whose coefficients ride on the observed path.  Both
equations are stepped with explicit Euler at the path resolution; the
covariance is re-symmetrized and eigenvalue-clamped every step because
explicit stepping can leave rounding-scale asymmetry that compounds.

Members are independent, so an ensemble of filters is advanced as one
batched computation; results are identical to running members one at a
time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kde import solve_bandwidth_1d
from .models import CGSystemSpec
from .simulate import EnsemblePaths

__all__ = [
    "ConditionalGaussianState",
    "FilterInit",
    "FilterSnapshots",
    "filter_step",
    "run_filter",
    "run_filter_ensemble",
    "init_states",
    "save_states",
    "load_states",
]

# default point-mode covariance: 1e-4 of the sample variance, floored
_POINT_EPS_FRACTION = 1e-4
_POINT_EPS_FLOOR = 1e-6


@dataclass
class ConditionalGaussianState:
    """Posterior mean and covariance of the hidden block at one time."""

    mean: np.ndarray
    cov: np.ndarray
    t: float

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        n = self.mean.size
        if self.cov.shape != (n, n):
            raise ValueError(f"cov shape {self.cov.shape} does not match mean size {n}")
        asym = np.abs(self.cov - self.cov.T).max() if n > 1 else 0.0
        scale = max(np.abs(self.cov).max(), 1.0)
        if asym > 1e-8 * scale:
            raise ValueError("covariance is not symmetric")
        self.cov = 0.5 * (self.cov + self.cov.T)
        eigvals = np.linalg.eigvalsh(self.cov)
        trace = max(float(np.trace(self.cov)), np.finfo(float).tiny)
        if eigvals[0] < -1e-10 * trace:
            raise ValueError(f"covariance has eigenvalue {eigvals[0]:.3e} below tolerance")
        if eigvals[0] < 0:
            self.cov = _clamp_psd(self.cov[None])[0]


@dataclass(frozen=True)
class FilterInit:
    """How to seed the per-member posterior at t = 0.

    ``point_with_epsilon``: tight diagonal covariance around each member's
    hidden sample; epsilon=None applies the variance-scaled default.
    ``kde_diagonal``: diagonal covariance from per-dimension 1D kernel
    bandwidths, for initial laws with substantial spread.
    """

    mode: str = "kde_diagonal"
    epsilon: float | None = None

    def __post_init__(self):
        if self.mode not in ("point_with_epsilon", "kde_diagonal"):
            raise ValueError(f"unknown init mode {self.mode!r}")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class FilterSnapshots:
    """Batched posterior states at requested times.

    ``max_clamp_violation`` is the worst pre-clamp negative eigenvalue
    seen anywhere in the run, relative to the covariance trace.
    """

    times: np.ndarray
    means: np.ndarray  # (S, L, n_hid)
    covs: np.ndarray  # (S, L, n_hid, n_hid)
    max_clamp_violation: float = 0.0

    def state(self, snap: int, member: int) -> ConditionalGaussianState:
        return ConditionalGaussianState(
            self.means[snap, member], self.covs[snap, member], float(self.times[snap])
        )


def _clamp_psd(covs: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(covs)
    vals = np.clip(vals, 0.0, None)
    return np.einsum("bij,bj,bkj->bik", vecs, vals, vecs)


def _step_batch(
    spec: CGSystemSpec,
    t: float,
    u_obs: np.ndarray,
    du_obs: np.ndarray,
    means: np.ndarray,
    covs: np.ndarray,
    dt: float,
) -> tuple[np.ndarray, np.ndarray, float]:
    f = spec.obs_drift(t, u_obs)
    F = spec.obs_coupling(t, u_obs)
    g = spec.hid_drift(t, u_obs)
    G = spec.hid_coupling(t, u_obs)
    s_obs = spec.obs_noise(t, u_obs)
    s_hid = spec.hid_noise(t, u_obs)

    obs_cov = np.einsum("bik,bjk->bij", s_obs, s_obs)
    hid_cov_rate = np.einsum("bik,bjk->bij", s_hid, s_hid)
    coupled = np.einsum("bij,bjk->bik", F, covs)  # F R, (B, p, q)
    try:
        solved = np.linalg.solve(obs_cov, coupled)  # (S S')^{-1} F R
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            f"observed-noise covariance is singular at t={t:.6g}"
        ) from exc
    gain = solved.transpose(0, 2, 1)  # R F' (S S')^{-1}

    innovation = du_obs - (f + np.einsum("bij,bj->bi", F, means)) * dt
    new_means = (
        means
        + (g + np.einsum("bij,bj->bi", G, means)) * dt
        + np.einsum("bij,bj->bi", gain, innovation)
    )

    growth = np.einsum("bij,bjk->bik", G, covs)
    reduction = np.einsum("bij,bjk->bik", gain, coupled)
    new_covs = covs + (
        growth + growth.transpose(0, 2, 1) + hid_cov_rate - reduction
    ) * dt
    new_covs = 0.5 * (new_covs + new_covs.transpose(0, 2, 1))

    if not (np.isfinite(new_means).all() and np.isfinite(new_covs).all()):
        bad = ~(
            np.isfinite(new_means).all(axis=1)
            & np.isfinite(new_covs).reshape(new_covs.shape[0], -1).all(axis=1)
        )
        members = np.nonzero(bad)[0].tolist()
        raise RuntimeError(
            f"filter update went non-finite at t={t + dt:.6g} for members {members[:10]}"
        )

    eigmin = np.linalg.eigvalsh(new_covs)[:, 0]
    traces = np.maximum(np.trace(new_covs, axis1=1, axis2=2), np.finfo(float).tiny)
    violation = float(np.max(-eigmin / traces, initial=0.0))
    if (eigmin < 0).any():
        fix = eigmin < 0
        new_covs[fix] = _clamp_psd(new_covs[fix])
    return new_means, new_covs, max(violation, 0.0)


def filter_step(
    spec: CGSystemSpec,
    state: ConditionalGaussianState,
    t: float,
    uI_t: np.ndarray,
    duI: np.ndarray,
    dt: float,
) -> ConditionalGaussianState:
    """One explicit Euler update of the posterior for a single member.

    ``duI`` is the observed increment over [t, t+dt] taken from the
    member's trajectory.
    """
    u_obs = np.atleast_1d(np.asarray(uI_t, dtype=float))[None, :]
    du_obs = np.atleast_1d(np.asarray(duI, dtype=float))[None, :]
    means, covs, _ = _step_batch(
        spec, t, u_obs, du_obs, state.mean[None, :], state.cov[None, :, :], dt
    )
    return ConditionalGaussianState(means[0], covs[0], t + dt)


def run_filter(
    spec: CGSystemSpec,
    uI_path: np.ndarray,
    times: np.ndarray,
    init: ConditionalGaussianState,
    snapshot_times: list[float],
    thin: int = 1,
) -> list[ConditionalGaussianState]:
    """Sequential filtering along one observed trajectory.

    Returns posterior states at the requested snapshot times, which must
    lie on the (possibly thinned) path grid.  An empty request returns an
    empty list.
    """
    uI_path = np.asarray(uI_path, dtype=float)
    if uI_path.ndim == 1:
        uI_path = uI_path[:, None]
    if uI_path.shape[0] != len(times):
        raise ValueError("uI_path must have one row per time point")
    if not snapshot_times:
        return []
    paths = EnsemblePaths(
        np.asarray(times, dtype=float),
        uI_path[None, :, :],
        np.zeros((1, uI_path.shape[0], spec.n_hid)),
        seed=0,
        dt=float(times[1] - times[0]) if len(times) > 1 else 1.0,
    )
    snaps = run_filter_ensemble(
        spec,
        paths,
        init.mean[None, :],
        init.cov[None, :, :],
        snapshot_times,
        thin=thin,
    )
    return [snaps.state(s, 0) for s in range(len(snapshot_times))]


def run_filter_ensemble(
    spec: CGSystemSpec,
    paths: EnsemblePaths,
    means0: np.ndarray,
    covs0: np.ndarray,
    snapshot_times: list[float],
    thin: int = 1,
) -> FilterSnapshots:
    """Advance all member filters together along their own trajectories.

    ``thin`` consumes every thin-th path point with effective step
    thin * dt, trading accuracy for speed.
    """
    if thin < 1:
        raise ValueError("thin must be >= 1")
    L, T, _ = paths.uI_paths.shape
    if means0.shape[0] != L:
        raise ValueError(f"{means0.shape[0]} initial states for {L} trajectories")
    idx = []
    for t in snapshot_times:
        k = paths.step_index(t)
        if k % thin:
            raise ValueError(f"snapshot time {t} not on the thinned grid (thin={thin})")
        idx.append(k)
    S = len(snapshot_times)
    means = means0.astype(float).copy()
    covs = covs0.astype(float).copy()
    out_means = np.empty((S, L, spec.n_hid))
    out_covs = np.empty((S, L, spec.n_hid, spec.n_hid))
    worst = 0.0

    def record(step: int) -> None:
        for s, want in enumerate(idx):
            if want == step:
                out_means[s] = means
                out_covs[s] = covs

    record(0)
    last = max(idx, default=0)
    dt_eff = paths.dt * thin
    for k in range(0, last, thin):
        t = paths.times[k]
        u_obs = paths.uI_paths[:, k, :]
        du_obs = paths.uI_paths[:, k + thin, :] - u_obs
        means, covs, viol = _step_batch(spec, float(t), u_obs, du_obs, means, covs, dt_eff)
        worst = max(worst, viol)
        record(k + thin)
    return FilterSnapshots(
        np.asarray(snapshot_times, dtype=float), out_means, out_covs, worst
    )


def init_states(
    uII_samples_at_0: np.ndarray, init: FilterInit
) -> tuple[np.ndarray, np.ndarray]:
    """Per-member initial posteriors from the hidden samples at t = 0.

    Returns (means (L, q), covs (L, q, q)).  Means are the samples
    themselves.  Point mode uses a tight diagonal; kde mode sets each
    diagonal entry to the squared per-dimension 1D kernel bandwidth.
    Dimensions where the bandwidth is undefined (single member or zero
    spread) fall back to the point rule.
    """
    samples = np.atleast_2d(np.asarray(uII_samples_at_0, dtype=float))
    L, q = samples.shape
    if L < 1:
        raise ValueError("need at least one member")

    variances = samples.var(axis=0)
    point_diag = (
        np.full(q, init.epsilon)
        if init.epsilon is not None
        else np.maximum(_POINT_EPS_FRACTION * variances, _POINT_EPS_FLOOR)
    )
    diag = point_diag.copy()
    if init.mode == "kde_diagonal":
        for j in range(q):
            try:
                diag[j] = solve_bandwidth_1d(samples[:, j]) ** 2
            except ValueError:
                pass  # degenerate dimension: keep the point rule
    covs = np.zeros((L, q, q))
    covs[:, np.arange(q), np.arange(q)] = diag
    return samples.copy(), covs


def save_states(states: FilterSnapshots, path: str | Path) -> Path:
    """JSON snapshot dump: per time, per member mean and packed lower cov."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    q = states.means.shape[2]
    rows, cols = np.tril_indices(q)
    payload = {
        "n_hid": q,
        "snapshots": [
            {
                "t": float(states.times[s]),
                "means": states.means[s].tolist(),
                "cov_lower": states.covs[s][:, rows, cols].tolist(),
            }
            for s in range(len(states.times))
        ],
        "max_clamp_violation": states.max_clamp_violation,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")
    return path


def load_states(path: str | Path) -> FilterSnapshots:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    q = payload["n_hid"]
    rows, cols = np.tril_indices(q)
    times, means, covs = [], [], []
    for snap in payload["snapshots"]:
        times.append(snap["t"])
        means.append(snap["means"])
        packed = np.asarray(snap["cov_lower"], dtype=float)
        cov = np.zeros((packed.shape[0], q, q))
        cov[:, rows, cols] = packed
        cov[:, cols, rows] = packed
        covs.append(cov)
    return FilterSnapshots(
        np.asarray(times),
        np.asarray(means, dtype=float),
        np.asarray(covs, dtype=float),
        payload.get("max_clamp_violation", 0.0),
    )
