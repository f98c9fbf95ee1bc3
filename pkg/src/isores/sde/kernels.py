"""Hot loops: Euler-Maruyama steppers for both frames and the RK4 step-doubling integrator.

Each stepper exists twice: a numba kernel that loops over paths then steps,
and a numpy version vectorised over paths.  ``USE_NUMBA`` picks one; both
consume identical per-step coefficient tables so their results agree to
rounding.

Status codes: 0 running/completed, 1 absorbed at r_min, 2 exited R_max.
"""

from __future__ import annotations

import math

import numpy as np

from ._jit import HAVE_NUMBA, njit

USE_NUMBA = HAVE_NUMBA

RUNNING, ABSORBED, EXITED = 0, 1, 2


# ---------------------------------------------------------------- Cartesian frame
@njit
def _cartesian_nb(x1, x2, status, fpx1, fpx2, fco, gpx1, gco, normals, cdt, sdt, R_max,
                  stride, step0, rec1, rec2, rec_base):
    n_paths = x1.shape[0]
    n_steps = fco.shape[0]
    nf = fpx1.shape[0]
    ng = gpx1.shape[0]
    R2 = R_max * R_max
    for k in range(n_paths):
        if status[k] != 0:
            continue
        a = x1[k]
        b = x2[k]
        for i in range(n_steps):
            f = 0.0
            for j in range(nf):
                f += fco[i, j] * a ** fpx1[j] * b ** fpx2[j]
            g = 0.0
            for j in range(ng):
                g += gco[i, j] * a ** gpx1[j]
            na = cdt * a + sdt * b
            nb = -sdt * a + cdt * b + f + g * normals[k, i, 0]
            a = na
            b = nb
            gi = step0 + i + 1
            if gi % stride == 0:
                rec1[k, gi // stride - rec_base] = a
                rec2[k, gi // stride - rec_base] = b
            if a * a + b * b > R2:
                status[k] = 2
                break
        x1[k] = a
        x2[k] = b


def _cartesian_np(x1, x2, status, fpx1, fpx2, fco, gpx1, gco, normals, cdt, sdt, R_max,
                  stride, step0, rec1, rec2, rec_base):
    alive = status == 0
    R2 = R_max * R_max
    for i in range(fco.shape[0]):
        a, b = x1, x2
        f = np.zeros_like(a)
        for j in range(fpx1.shape[0]):
            f += fco[i, j] * a ** fpx1[j] * b ** fpx2[j]
        g = np.zeros_like(a)
        for j in range(gpx1.shape[0]):
            g += gco[i, j] * a ** gpx1[j]
        na = cdt * a + sdt * b
        nb = -sdt * a + cdt * b + f + g * normals[:, i, 0]
        x1 = np.where(alive, na, x1)
        x2 = np.where(alive, nb, x2)
        gi = step0 + i + 1
        if gi % stride == 0:
            rec1[alive, gi // stride - rec_base] = x1[alive]
            rec2[alive, gi // stride - rec_base] = x2[alive]
        out = alive & (x1 * x1 + x2 * x2 > R2)
        if out.any():
            status[out] = EXITED
            alive = alive & ~out
    return x1, x2


def cartesian_steps(x1, x2, status, fpx1, fpx2, fco, gpx1, gco, normals, dt, R_max, stride,
                    step0, rec1, rec2, rec_base):
    """Advance ``fco.shape[0]`` steps in place.

    ``fco[i, j]`` already carries ``mu^n dt`` and the S-trig factor of f-term
    ``j`` at step ``i``; ``gco`` carries ``eps mu^p sqrt(dt)`` likewise.
    """
    cdt, sdt = math.cos(dt), math.sin(dt)
    if USE_NUMBA:
        _cartesian_nb(x1, x2, status, fpx1, fpx2, fco, gpx1, gco, normals, cdt, sdt, R_max,
                      stride, step0, rec1, rec2, rec_base)
    else:
        a, b = _cartesian_np(x1, x2, status, fpx1, fpx2, fco, gpx1, gco, normals, cdt, sdt,
                             R_max, stride, step0, rec1, rec2, rec_base)
        x1[:] = a
        x2[:] = b


# ---------------------------------------------------------------- polar frame
# Term slots: 0 drift rho, 1 drift phi, 2..5 diffusion entries (row-major).
@njit
def _polar_nb(rho, phd, status, slot, rpow, jphi, coef, sphase, nu_t, normals, dt, sqdt,
              r_min, R_max, stride, step0, rec1, rec2, rec_base):
    n_paths = rho.shape[0]
    n_steps = coef.shape[0]
    nt = slot.shape[0]
    acc = np.zeros(6)
    for k in range(n_paths):
        if status[k] != 0:
            continue
        r = rho[k]
        d = phd[k]
        for i in range(n_steps):
            phi = d + nu_t[i]
            for s in range(6):
                acc[s] = 0.0
            for j in range(nt):
                ang = jphi[j] * phi + sphase[i, j]
                v = coef[i, j] * r ** rpow[j]
                acc[slot[j]] += v * math.cos(ang)
            w1 = normals[k, i, 0] * sqdt
            w2 = normals[k, i, 1] * sqdt
            r = r + acc[0] * dt + acc[2] * w1 + acc[3] * w2
            d = d + acc[1] * dt + acc[4] * w1 + acc[5] * w2
            gi = step0 + i + 1
            if gi % stride == 0:
                rec1[k, gi // stride - rec_base] = r
                rec2[k, gi // stride - rec_base] = d
            if r < r_min:
                status[k] = 1
                break
            if r > R_max:
                status[k] = 2
                break
        rho[k] = r
        phd[k] = d


def _polar_np(rho, phd, status, slot, rpow, jphi, coef, sphase, nu_t, normals, dt, sqdt,
              r_min, R_max, stride, step0, rec1, rec2, rec_base):
    alive = status == 0
    slots = [np.nonzero(slot == s)[0] for s in range(6)]
    for i in range(coef.shape[0]):
        phi = phd + nu_t[i]
        acc = []
        for s in range(6):
            idx = slots[s]
            if idx.size == 0:
                acc.append(0.0)
                continue
            ang = jphi[idx][None, :] * phi[:, None] + sphase[i, idx][None, :]
            acc.append((coef[i, idx][None, :] * rho[:, None] ** rpow[idx][None, :]
                        * np.cos(ang)).sum(axis=1))
        w1 = normals[:, i, 0] * sqdt
        w2 = normals[:, i, 1] * sqdt
        nr = rho + acc[0] * dt + acc[2] * w1 + acc[3] * w2
        nd = phd + acc[1] * dt + acc[4] * w1 + acc[5] * w2
        rho = np.where(alive, nr, rho)
        phd = np.where(alive, nd, phd)
        gi = step0 + i + 1
        if gi % stride == 0:
            rec1[alive, gi // stride - rec_base] = rho[alive]
            rec2[alive, gi // stride - rec_base] = phd[alive]
        low = alive & (rho < r_min)
        high = alive & ~low & (rho > R_max)
        if low.any() or high.any():
            status[low] = ABSORBED
            status[high] = EXITED
            alive = alive & ~low & ~high
    return rho, phd


def polar_steps(rho, phd, status, slot, rpow, jphi, coef, sphase, nu_t, normals, dt, r_min,
                R_max, stride, step0, rec1, rec2, rec_base):
    """Advance in place.  ``phd`` is the phase minus ``nu_t``, the unperturbed rotation.

    Every term is ``coef * r^rpow * cos(jphi*phi + sphase)``; sine terms enter
    with their phase shifted by ``-pi/2``.
    """
    sqdt = math.sqrt(dt)
    args = (slot, rpow, jphi, coef, sphase, nu_t, normals, dt, sqdt, r_min, R_max, stride,
            step0, rec1, rec2, rec_base)
    if USE_NUMBA:
        _polar_nb(rho, phd, status, *args)
    else:
        a, b = _polar_np(rho, phd, status, *args)
        rho[:] = a
        phd[:] = b


# ---------------------------------------------------------------- RK4 on averaged systems
@njit
def _rhs(t, y0, y1, family, alpha, slot, rpow, jpsi, kmu, coef, is_sin, out):
    m = t ** (-alpha)
    if family == 1:
        m *= math.log(t)
    out[0] = 0.0
    out[1] = 0.0
    for j in range(slot.shape[0]):
        v = coef[j] * m ** kmu[j] * y0 ** rpow[j]
        if is_sin[j]:
            v *= math.sin(jpsi[j] * y1)
        elif jpsi[j] != 0:
            v *= math.cos(jpsi[j] * y1)
        out[slot[j]] += v


@njit
def _rk4_step(t, h, y, family, alpha, slot, rpow, jpsi, kmu, coef, is_sin, out):
    k1 = np.empty(2)
    k2 = np.empty(2)
    k3 = np.empty(2)
    k4 = np.empty(2)
    _rhs(t, y[0], y[1], family, alpha, slot, rpow, jpsi, kmu, coef, is_sin, k1)
    _rhs(t + 0.5 * h, y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1], family, alpha, slot,
         rpow, jpsi, kmu, coef, is_sin, k2)
    _rhs(t + 0.5 * h, y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1], family, alpha, slot,
         rpow, jpsi, kmu, coef, is_sin, k3)
    _rhs(t + h, y[0] + h * k3[0], y[1] + h * k3[1], family, alpha, slot, rpow, jpsi, kmu, coef,
         is_sin, k4)
    for i in range(2):
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit
def _rk4_run(y0, t0, dt, n_steps, family, alpha, slot, rpow, jpsi, kmu, coef, is_sin, tol,
             r_min, R_max, stride, max_halvings, rec):
    """Fixed grid of ``n_steps`` intervals; each is subdivided by step doubling until
    the full-vs-two-halves difference is below ``tol``.  Returns (status, steps_done, halvings)."""
    y = y0.copy()
    full = np.empty(2)
    half = np.empty(2)
    two = np.empty(2)
    total_halvings = 0
    for i in range(n_steps):
        t = t0 + i * dt
        t_end = t0 + (i + 1) * dt
        h = dt
        while t < t_end - 1e-14 * abs(t_end):
            if t + h > t_end:
                h = t_end - t
            _rk4_step(t, h, y, family, alpha, slot, rpow, jpsi, kmu, coef, is_sin, full)
            _rk4_step(t, 0.5 * h, y, family, alpha, slot, rpow, jpsi, kmu, coef, is_sin, half)
            _rk4_step(t + 0.5 * h, 0.5 * h, half, family, alpha, slot, rpow, jpsi, kmu, coef,
                      is_sin, two)
            err = max(abs(two[0] - full[0]), abs(two[1] - full[1]))
            if err > tol and total_halvings < max_halvings:
                h *= 0.5
                total_halvings += 1
                continue
            y[0] = two[0]
            y[1] = two[1]
            t += h
        if (i + 1) % stride == 0:
            rec[(i + 1) // stride, 0] = y[0]
            rec[(i + 1) // stride, 1] = y[1]
        if y[0] < r_min:
            return 1, i + 1, total_halvings
        if y[0] > R_max:
            return 2, i + 1, total_halvings
    return 0, n_steps, total_halvings


def rk4_run(y0, t0, dt, n_steps, family, alpha, table, tol, r_min, R_max, stride,
            max_halvings=10 ** 7):
    """Integrate the S-free averaged system; ``table`` comes from :func:`averaged_table`."""
    slot, rpow, jpsi, kmu, coef, is_sin = table
    rec = np.full((n_steps // stride + 1, 2), np.nan)
    rec[0] = y0
    st, done, halvings = _rk4_run(np.asarray(y0, float), float(t0), float(dt), int(n_steps),
                                  int(family), float(alpha), slot, rpow, jpsi, kmu, coef, is_sin,
                                  float(tol), float(r_min), float(R_max), int(stride),
                                  int(max_halvings), rec)
    return rec, int(st), int(done), int(halvings)
