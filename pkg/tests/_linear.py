"""Constant-coefficient test systems shared across test modules."""

import numpy as np

from cgmix.models import CGSystemSpec


def const(mat):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))

    def coef(t, u_obs):
        return np.broadcast_to(mat, (u_obs.shape[0],) + mat.shape)

    return coef


def linear_spec(
    name,
    obs_mat,
    obs_coupling,
    hid_mat_on_obs,
    hid_coupling,
    obs_noise,
    hid_noise,
):
    """System with drift [A x + B z ; C x + D z] and constant noise."""
    A = np.atleast_2d(np.asarray(obs_mat, dtype=float))
    C = np.atleast_2d(np.asarray(hid_mat_on_obs, dtype=float))
    p = A.shape[0]
    q = np.atleast_2d(np.asarray(hid_coupling, dtype=float)).shape[0]
    return CGSystemSpec(
        name=name,
        n_obs=p,
        n_hid=q,
        obs_labels=tuple(f"x{i+1}" for i in range(p)),
        hid_labels=tuple(f"z{i+1}" for i in range(q)),
        obs_drift=lambda t, u: u @ A.T,
        obs_coupling=const(obs_coupling),
        hid_drift=lambda t, u: u @ C.T,
        hid_coupling=const(hid_coupling),
        obs_noise=const(obs_noise),
        hid_noise=const(hid_noise),
    )


def scalar_riccati_spec(sigma_obs=1.0, sigma_hid=1.0):
    """Observed increment drifts with the hidden state one-for-one; the
    steady posterior variance solves 1 - 2R - R^2 = 0."""
    return linear_spec(
        "scalar-riccati",
        obs_mat=[[0.0]],
        obs_coupling=[[1.0]],
        hid_mat_on_obs=[[0.0]],
        hid_coupling=[[-1.0]],
        obs_noise=[[sigma_obs]],
        hid_noise=[[sigma_hid]],
    )


def ou_pair_spec(gamma=1.0, sigma=1.0):
    """Independent observed/hidden Ornstein-Uhlenbeck pair."""
    return linear_spec(
        "ou-pair",
        obs_mat=[[-gamma]],
        obs_coupling=[[0.0]],
        hid_mat_on_obs=[[0.0]],
        hid_coupling=[[-1.0]],
        obs_noise=[[sigma]],
        hid_noise=[[1.0]],
    )


def full_linear_3d():
    """One observed, two hidden, cross-coupled and stable; the full-state
    drift matrix and noise diagonal are returned for analytic work."""
    F = np.array(
        [[-1.0, 0.5, -0.25], [0.3, -1.0, 0.0], [-0.2, 0.0, -0.5]]
    )
    noise = np.array([0.5, 0.6, 0.4])
    spec = linear_spec(
        "linear-3d",
        obs_mat=F[:1, :1],
        obs_coupling=F[:1, 1:],
        hid_mat_on_obs=F[1:, :1],
        hid_coupling=F[1:, 1:],
        obs_noise=[[noise[0]]],
        hid_noise=np.diag(noise[1:]),
    )
    return spec, F, noise
