"""Face-flux assembly for the conservative finite-volume update.

Every face carries ``G = σ (u_R - u_L)/h + pressure + chemotaxis`` and the
cell update is ``Σ_axes (G_{i+1/2} - G_{i-1/2}) / h``. The pressure part is
``(P_R - P_L)/h`` in divergence form, or ``u_up (P_R - P_L)/h`` in drift form
with ``u_up`` taken upwind of the drift ``-∇P``. The chemotaxis part is
``-u_up v`` with ``v`` the face average of ``∇c`` and ``u_up`` upwind of ``v``.
Boundary faces carry no flux.

The numba kernels reproduce the numpy accumulation order exactly, so both
paths agree bit for bit.
"""

from __future__ import annotations

import numpy as np

from ._accel import njit, select


def _face_slices(ndim: int, axis: int):
    left = [slice(None)] * ndim
    right = [slice(None)] * ndim
    left[axis] = slice(0, -1)
    right[axis] = slice(1, None)
    return tuple(left), tuple(right)


def face_fluxes_numpy(u, pot, grad_c, sigma, h, drift_form):
    """Face fluxes ``G`` per axis (array of shape ``n-1`` along that axis)."""
    out = []
    for axis in range(u.ndim):
        sl, sr = _face_slices(u.ndim, axis)
        u_l, u_r = u[sl], u[sr]
        g = sigma * (u_r - u_l) / h
        slope = (pot[sr] - pot[sl]) / h
        if drift_form:
            g = g + np.where(slope < 0, u_l, u_r) * slope
        else:
            g = g + slope
        if grad_c is not None:
            c = grad_c[axis]
            v = 0.5 * (c[sl] + c[sr])
            g = g - np.where(v > 0, u_l, u_r) * v
        out.append(g)
    return out


def flux_divergence_numpy(u, pot, grad_c, sigma, h, drift_form):
    du = np.zeros_like(u)
    for axis, g in enumerate(face_fluxes_numpy(u, pot, grad_c, sigma, h, drift_form)):
        sl, sr = _face_slices(u.ndim, axis)
        du[sl] += g / h
        du[sr] -= g / h
    return du


@njit
def _face(ul, ur, pl, pr, cl, cr, sigma, h, drift_form, chemo):
    g = sigma * (ur - ul) / h
    slope = (pr - pl) / h
    if drift_form:
        if slope < 0:
            g = g + ul * slope
        else:
            g = g + ur * slope
    else:
        g = g + slope
    if chemo:
        v = 0.5 * (cl + cr)
        if v > 0:
            g = g - ul * v
        else:
            g = g - ur * v
    return g


@njit
def _divergence_2d(u, pot, cx, cy, sigma, h, drift_form, chemo):
    n0, n1 = u.shape
    du = np.zeros_like(u)
    for i in range(n0):
        for j in range(n1):
            acc = 0.0
            if i < n0 - 1:
                acc += _face(u[i, j], u[i + 1, j], pot[i, j], pot[i + 1, j], cx[i, j], cx[i + 1, j], sigma, h, drift_form, chemo) / h
            if i > 0:
                acc -= _face(u[i - 1, j], u[i, j], pot[i - 1, j], pot[i, j], cx[i - 1, j], cx[i, j], sigma, h, drift_form, chemo) / h
            if j < n1 - 1:
                acc += _face(u[i, j], u[i, j + 1], pot[i, j], pot[i, j + 1], cy[i, j], cy[i, j + 1], sigma, h, drift_form, chemo) / h
            if j > 0:
                acc -= _face(u[i, j - 1], u[i, j], pot[i, j - 1], pot[i, j], cy[i, j - 1], cy[i, j], sigma, h, drift_form, chemo) / h
            du[i, j] = acc
    return du


@njit
def _divergence_3d(u, pot, cx, cy, cz, sigma, h, drift_form, chemo):
    n0, n1, n2 = u.shape
    du = np.zeros_like(u)
    for i in range(n0):
        for j in range(n1):
            for k in range(n2):
                acc = 0.0
                if i < n0 - 1:
                    acc += _face(u[i, j, k], u[i + 1, j, k], pot[i, j, k], pot[i + 1, j, k], cx[i, j, k], cx[i + 1, j, k], sigma, h, drift_form, chemo) / h
                if i > 0:
                    acc -= _face(u[i - 1, j, k], u[i, j, k], pot[i - 1, j, k], pot[i, j, k], cx[i - 1, j, k], cx[i, j, k], sigma, h, drift_form, chemo) / h
                if j < n1 - 1:
                    acc += _face(u[i, j, k], u[i, j + 1, k], pot[i, j, k], pot[i, j + 1, k], cy[i, j, k], cy[i, j + 1, k], sigma, h, drift_form, chemo) / h
                if j > 0:
                    acc -= _face(u[i, j - 1, k], u[i, j, k], pot[i, j - 1, k], pot[i, j, k], cy[i, j - 1, k], cy[i, j, k], sigma, h, drift_form, chemo) / h
                if k < n2 - 1:
                    acc += _face(u[i, j, k], u[i, j, k + 1], pot[i, j, k], pot[i, j, k + 1], cz[i, j, k], cz[i, j, k + 1], sigma, h, drift_form, chemo) / h
                if k > 0:
                    acc -= _face(u[i, j, k - 1], u[i, j, k], pot[i, j, k - 1], pot[i, j, k], cz[i, j, k - 1], cz[i, j, k], sigma, h, drift_form, chemo) / h
                du[i, j, k] = acc
    return du


def flux_divergence_numba(u, pot, grad_c, sigma, h, drift_form):
    chemo = grad_c is not None
    comps = grad_c if chemo else (u,) * u.ndim
    comps = [np.ascontiguousarray(c) for c in comps]
    u = np.ascontiguousarray(u)
    pot = np.ascontiguousarray(pot)
    if u.ndim == 2:
        return _divergence_2d(u, pot, comps[0], comps[1], float(sigma), float(h), bool(drift_form), chemo)
    return _divergence_3d(u, pot, comps[0], comps[1], comps[2], float(sigma), float(h), bool(drift_form), chemo)


flux_divergence = select(flux_divergence_numba, flux_divergence_numpy)
