"""Pure numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and semantics; ``cagetwin.backend`` picks one at import time.
"""

import numpy as np


def weighted_sqdist(X, Y, w):
    """Return D[i, j] = sum_k w[k] * (X[i, k] - Y[j, k])**2."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    w = np.asarray(w, dtype=float)
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,k->ij", diff * diff, w)


def se_ard(X, Y, w, amp):
    """Squared-exponential ARD covariance ``amp * exp(-0.5 * D)``."""
    return amp * np.exp(-0.5 * weighted_sqdist(X, Y, w))


def edge_forces(pos, edges, rest_len, axial):
    """Internal forces of a linear spring network and per-edge tangent blocks.

    Returns ``(forces, tension, blocks)`` where ``forces`` is (N, 3) with the
    force each node receives, ``tension`` is (E,) and ``blocks`` is (E, 3, 3)
    holding the tangent stiffness k_e; node a of edge e sees dF_a/dx_a = -k_e
    and dF_a/dx_b = +k_e.
    """
    pos = np.asarray(pos, dtype=float)
    a = edges[:, 0]
    b = edges[:, 1]
    vec = pos[b] - pos[a]
    length = np.sqrt(np.einsum("ij,ij->i", vec, vec))
    e = vec / length[:, None]
    stiff = axial / rest_len
    tension = stiff * (length - rest_len)
    f = tension[:, None] * e
    forces = np.zeros_like(pos)
    np.add.at(forces, a, f)
    np.add.at(forces, b, -f)
    eet = e[:, :, None] * e[:, None, :]
    eye = np.eye(3)[None, :, :]
    blocks = stiff[:, None, None] * eet + (tension / length)[:, None, None] * (eye - eet)
    return forces, tension, blocks


def _skew(v):
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def panel_drag(pos, panels, weights, velocity, c_normal, c_tangent):
    """Quadratic screen drag on quad panels and its Jacobian blocks.

    A panel is four node slots (a, b, c, d); a triangle repeats its last
    node. The vector area is ``0.5 * (c - a) x (d - b)``. Normal drag is
    ``c_normal * (u.s)|u.s| s / A**2`` and tangential drag is
    ``c_tangent * |u| * (A u - (u.s) s / A)``; slot i receives
    ``weights[p, i]`` of the panel force.

    Returns ``(forces, blocks)`` with ``blocks[p, i, j]`` = dF_slot_i / dx_slot_j.
    """
    pos = np.asarray(pos, dtype=float)
    pa, pb, pc, pd = (pos[panels[:, k]] for k in range(4))
    s = 0.5 * np.cross(pc - pa, pd - pb)
    area = np.sqrt(np.einsum("ij,ij->i", s, s))
    u = np.asarray(velocity, dtype=float)
    speed = np.sqrt(np.einsum("ij,ij->i", u, u))
    un = np.einsum("ij,ij->i", u, s)
    live = (area > 0.0) & (speed > 0.0)
    A = np.where(live, area, 1.0)
    A2 = A * A
    force = (c_normal * un * np.abs(un) / A2)[:, None] * s
    force += (c_tangent * speed)[:, None] * (A[:, None] * u - (un / A)[:, None] * s)
    force[~live] = 0.0

    eye = np.eye(3)[None]
    ss = s[:, :, None] * s[:, None, :]
    su = s[:, :, None] * u[:, None, :]
    us = u[:, :, None] * s[:, None, :]
    G = (c_normal * 2.0 * np.abs(un) / A2)[:, None, None] * su
    G += (c_normal * un * np.abs(un))[:, None, None] * (eye / A2[:, None, None] - 2.0 * ss / (A2 * A2)[:, None, None])
    G += (c_tangent * speed)[:, None, None] * (
        (us - su) / A[:, None, None]
        - un[:, None, None] * (eye / A[:, None, None] - ss / (A2 * A)[:, None, None])
    )
    G[~live] = 0.0

    half_db = 0.5 * _skew(pd - pb)
    half_ca = 0.5 * _skew(pc - pa)
    M = np.stack([half_db, -half_ca, -half_db, half_ca], axis=1)  # (P, 4, 3, 3)
    GM = np.einsum("pab,pjbc->pjac", G, M)
    blocks = weights[:, :, None, None, None] * GM[:, None, :, :, :]

    forces = np.zeros_like(pos)
    for k in range(4):
        np.add.at(forces, panels[:, k], weights[:, k, None] * force)
    return forces, blocks
