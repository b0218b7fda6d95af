"""Jitted kernels of the perturbation-dynamics module.

Sign and reflection conventions (image route = sources mirrored across
the wall, integration over the lower half of the light cone):

* electric kernels keep the particle velocity and replace the cone
  direction omega by omega_bar = (o0, o1, -o2); their image terms carry
  the parity sigma = (-1, -1, +1) per component,
* magnetic kernels replace the velocity by its mirror (first-order
  closure: reflected first moment) and their image terms enter with the
  same sign as the direct ones,
* Kirchhoff data terms reflect odd (tangential E, normal B) or even
  (normal E, tangential B).

Momentum integrals use the first-order closure
int k(vhat) f dv ~= k(0) M0 + grad_vhat k(0) . M1.
"""

import math

import numpy as np

from ._accel import njit, prange
from .characteristics import _rk4_once
from .dyninit import init_f_moments, init_f_value, init_field_dt, init_field_grad, init_field_value
from .steady import _profile_value

_SIGMA = (-1.0, -1.0, 1.0)


@njit(cache=True, fastmath=True, inline="always")
def _g1(grid, spec, x0, x1, x2):
    """Scalar trilinear fetch of an (n0, n1, n2) grid; zero outside."""
    n0 = int(spec[6])
    n1 = int(spec[7])
    n2 = int(spec[8])
    f0 = (x0 - spec[0]) / spec[3]
    f1 = (x1 - spec[1]) / spec[4]
    f2 = (x2 - spec[2]) / spec[5]
    if f0 < 0.0 or f1 < 0.0 or f2 < 0.0 or f0 > n0 - 1 or f1 > n1 - 1 or f2 > n2 - 1:
        return 0.0
    i0 = min(int(f0), n0 - 2)
    i1 = min(int(f1), n1 - 2)
    i2 = min(int(f2), n2 - 2)
    a = f0 - i0
    b = f1 - i1
    c = f2 - i2
    v00 = grid[i0, i1, i2] * (1 - a) + grid[i0 + 1, i1, i2] * a
    v10 = grid[i0, i1 + 1, i2] * (1 - a) + grid[i0 + 1, i1 + 1, i2] * a
    v01 = grid[i0, i1, i2 + 1] * (1 - a) + grid[i0 + 1, i1, i2 + 1] * a
    v11 = grid[i0, i1 + 1, i2 + 1] * (1 - a) + grid[i0 + 1, i1 + 1, i2 + 1] * a
    return (v00 * (1 - b) + v10 * b) * (1 - c) + (v01 * (1 - b) + v11 * b) * c


@njit(cache=True, fastmath=True, inline="always")
def _g2(grid, spec, x0, x1):
    """Bilinear fetch of an (n0, n1) plane grid; zero outside."""
    n0 = int(spec[6])
    n1 = int(spec[7])
    f0 = (x0 - spec[0]) / spec[3]
    f1 = (x1 - spec[1]) / spec[4]
    if f0 < 0.0 or f1 < 0.0 or f0 > n0 - 1 or f1 > n1 - 1:
        return 0.0
    i0 = min(int(f0), n0 - 2)
    i1 = min(int(f1), n1 - 2)
    a = f0 - i0
    b = f1 - i1
    return (grid[i0, i1] * (1 - a) + grid[i0 + 1, i1] * a) * (1 - b) + (
        grid[i0, i1 + 1] * (1 - a) + grid[i0 + 1, i1 + 1] * a
    ) * b


@njit(cache=True, fastmath=True, inline="always")
def _stack3(stack, it, wt, two, spec, x0, x1, x2, k):
    """Time-interpolated component fetch from an (nt, n0, n1, n2, 3) stack."""
    if two:
        return (1 - wt) * _g1(stack[it, :, :, :, k], spec, x0, x1, x2) + wt * _g1(
            stack[it + 1, :, :, :, k], spec, x0, x1, x2
        )
    return _g1(stack[it, :, :, :, k], spec, x0, x1, x2)


@njit(cache=True, fastmath=True)
def assemble_point(
    t, x0, x1, x2, spec,
    M0s, M1s, Es, Bs, nt_cur, dth,
    Estg, Bstg, M0st, M1st, Mb0, Mb1,
    initpk, mp, mm, g, Eext, Bext,
    glx_s, glw_s, nphi_s,
    glx_r, glw_r, n_rpan, glx_v, glw_v, nphi_v,
    glx_b, glw_b, nphi_b,
    r_max, Eterms, Bterms,
):
    """All perturbation-field terms at one target (t, x).

    Eterms rows: hom, b1_dir, b1_img, b2_dir, b2_img, T_dir, T_img,
    Sacc_dir, Sacc_img, Sst_dir, Sst_img, add3.
    Bterms rows: hom, neu, T_dir, T_img, b1_dir, b1_img.
    """
    for i in range(12):
        for k in range(3):
            Eterms[i, k] = 0.0
    for i in range(6):
        for k in range(3):
            Bterms[i, k] = 0.0
    val = np.empty(3)
    grd = np.empty((3, 3))
    dtv = np.empty(3)
    if t <= 0.0:
        init_field_value(initpk, 0, x0, x1, x2, val)
        for k in range(3):
            Eterms[0, k] = val[k]
        init_field_value(initpk, 1, x0, x1, x2, val)
        for k in range(3):
            Bterms[0, k] = val[k]
        return
    masses = (mp, mm)

    # ---- light-cone sphere: Kirchhoff data + distribution data terms ----
    nth_s = glx_s.shape[0]
    cstar = -x2 / t
    for half in range(2):
        if half == 0:
            clo = cstar if cstar > -1.0 else -1.0
            chi = 1.0
        else:
            clo = -1.0
            chi = cstar if cstar < 1.0 else 1.0
        if chi <= clo:
            continue
        for a_i in range(nth_s):
            cth = 0.5 * (chi - clo) * glx_s[a_i] + 0.5 * (chi + clo)
            wth = 0.5 * (chi - clo) * glw_s[a_i]
            sth = math.sqrt(max(1.0 - cth * cth, 0.0))
            for p_i in range(nphi_s):
                phi = 2.0 * math.pi * p_i / nphi_s
                wq = wth * (2.0 * math.pi / nphi_s)
                w0 = math.cos(phi) * sth
                w1 = math.sin(phi) * sth
                w2 = cth
                y0 = x0 + t * w0
                y1 = x1 + t * w1
                y2 = x2 + t * w2
                if half == 0:
                    s2 = y2
                    o2 = w2
                else:
                    s2 = -y2  # mirrored source point (positive third coord)
                    o2 = -w2  # omega_bar third component
                # Kirchhoff blocks: integrand t*W' + W + grad W . (t omega')
                init_field_value(initpk, 0, y0, y1, s2, val)
                init_field_grad(initpk, 0, y0, y1, s2, grd)
                init_field_dt(initpk, 0, y0, y1, s2, dtv)
                for k in range(3):
                    integ = t * dtv[k] + val[k] + t * (grd[k, 0] * w0 + grd[k, 1] * w1 + grd[k, 2] * o2)
                    if half == 0:
                        Eterms[0, k] += wq / (4.0 * math.pi) * integ
                    else:
                        Eterms[0, k] += (_SIGMA[k]) * wq / (4.0 * math.pi) * integ
                init_field_value(initpk, 1, y0, y1, s2, val)
                init_field_grad(initpk, 1, y0, y1, s2, grd)
                init_field_dt(initpk, 1, y0, y1, s2, dtv)
                for k in range(3):
                    integ = t * dtv[k] + val[k] + t * (grd[k, 0] * w0 + grd[k, 1] * w1 + grd[k, 2] * o2)
                    if half == 0:
                        Bterms[0, k] += wq / (4.0 * math.pi) * integ
                    else:
                        Bterms[0, k] += (-_SIGMA[k]) * wq / (4.0 * math.pi) * integ
                # distribution initial-data terms on the sphere
                m8 = init_f_moments(initpk, y0, y1, s2)
                for sp in range(2):
                    iota = 1.0 if sp == 0 else -1.0
                    if sp == 0:
                        M0v = m8[0]
                        u0 = m8[1]
                        u1 = m8[2]
                        u2 = m8[3]
                    else:
                        M0v = m8[4]
                        u0 = m8[5]
                        u1 = m8[6]
                        u2 = m8[7]
                    if M0v == 0.0 and u0 == 0.0 and u1 == 0.0 and u2 == 0.0:
                        continue
                    # E data kernel (plain velocity, direction omega'):
                    odm = w0 * u0 + w1 * u1 + o2 * u2
                    fac = iota * t * wq * (M0v - odm)
                    # B data kernel (mirrored velocity on the image route)
                    b2c = u2 if half == 0 else -u2
                    bb0 = w1 * b2c - o2 * u1
                    bb1 = o2 * u0 - w0 * b2c
                    bb2 = w0 * u1 - w1 * u0
                    if half == 0:
                        Eterms[1, 0] += fac * w0
                        Eterms[1, 1] += fac * w1
                        Eterms[1, 2] += fac * o2
                        Bterms[4, 0] += iota * t * wq * bb0
                        Bterms[4, 1] += iota * t * wq * bb1
                        Bterms[4, 2] += iota * t * wq * bb2
                    else:
                        Eterms[2, 0] += _SIGMA[0] * fac * w0
                        Eterms[2, 1] += _SIGMA[1] * fac * w1
                        Eterms[2, 2] += _SIGMA[2] * fac * o2
                        Bterms[5, 0] += iota * t * wq * bb0
                        Bterms[5, 1] += iota * t * wq * bb1
                        Bterms[5, 2] += iota * t * wq * bb2

    # ---- retarded volume terms ----
    rmax_eff = min(t, r_max)
    two = nt_cur >= 2
    if rmax_eff > 1e-12 and nt_cur >= 1:
        ngl_r = glx_r.shape[0]
        nth_v = glx_v.shape[0]
        dr_pan = rmax_eff / n_rpan
        for pan in range(n_rpan):
            ra = pan * dr_pan
            for q_i in range(ngl_r):
                r = ra + 0.5 * dr_pan * (glx_r[q_i] + 1.0)
                wrr = 0.5 * dr_pan * glw_r[q_i]
                tau = t - r
                f = tau / dth
                if two:
                    if f <= 0.0:
                        it = 0
                        wt = 0.0
                    elif f >= nt_cur - 1:
                        it = nt_cur - 2
                        wt = 1.0
                    else:
                        it = int(f)
                        wt = f - it
                else:
                    it = 0
                    wt = 0.0
                cst = -x2 / r
                for half in range(2):
                    if half == 0:
                        clo = cst if cst > -1.0 else -1.0
                        chi = 1.0
                    else:
                        clo = -1.0
                        chi = cst if cst < 1.0 else 1.0
                    if chi <= clo:
                        continue
                    for a_i in range(nth_v):
                        cth = 0.5 * (chi - clo) * glx_v[a_i] + 0.5 * (chi + clo)
                        wth = 0.5 * (chi - clo) * glw_v[a_i]
                        sth = math.sqrt(max(1.0 - cth * cth, 0.0))
                        for p_i in range(nphi_v):
                            phi = 2.0 * math.pi * p_i / nphi_v
                            wq = wrr * wth * (2.0 * math.pi / nphi_v)
                            w0 = math.cos(phi) * sth
                            w1 = math.sin(phi) * sth
                            w2 = cth
                            y0 = x0 + r * w0
                            y1 = x1 + r * w1
                            y2 = x2 + r * w2
                            if half == 0:
                                s2 = y2
                                o2 = w2
                            else:
                                s2 = -y2
                                o2 = -w2
                            # perturbation fields at the source point
                            pe0 = _stack3(Es, it, wt, two, spec, y0, y1, s2, 0)
                            pe1 = _stack3(Es, it, wt, two, spec, y0, y1, s2, 1)
                            pe2 = _stack3(Es, it, wt, two, spec, y0, y1, s2, 2)
                            pb0 = _stack3(Bs, it, wt, two, spec, y0, y1, s2, 0)
                            pb1 = _stack3(Bs, it, wt, two, spec, y0, y1, s2, 1)
                            pb2 = _stack3(Bs, it, wt, two, spec, y0, y1, s2, 2)
                            te0 = pe0 + _g1(Estg[:, :, :, 0], spec, y0, y1, s2) + Eext[0]
                            te1 = pe1 + _g1(Estg[:, :, :, 1], spec, y0, y1, s2) + Eext[1]
                            te2 = pe2 + _g1(Estg[:, :, :, 2], spec, y0, y1, s2) + Eext[2]
                            tb0 = pb0 + _g1(Bstg[:, :, :, 0], spec, y0, y1, s2) + Bext[0]
                            tb1 = pb1 + _g1(Bstg[:, :, :, 1], spec, y0, y1, s2) + Bext[1]
                            tb2 = pb2 + _g1(Bstg[:, :, :, 2], spec, y0, y1, s2) + Bext[2]
                            for sp in range(2):
                                iota = 1.0 if sp == 0 else -1.0
                                mass = masses[sp]
                                if two:
                                    M0v = (1 - wt) * _g1(M0s[it, sp], spec, y0, y1, s2) + wt * _g1(M0s[it + 1, sp], spec, y0, y1, s2)
                                    u0 = (1 - wt) * _g1(M1s[it, sp, :, :, :, 0], spec, y0, y1, s2) + wt * _g1(M1s[it + 1, sp, :, :, :, 0], spec, y0, y1, s2)
                                    u1 = (1 - wt) * _g1(M1s[it, sp, :, :, :, 1], spec, y0, y1, s2) + wt * _g1(M1s[it + 1, sp, :, :, :, 1], spec, y0, y1, s2)
                                    u2 = (1 - wt) * _g1(M1s[it, sp, :, :, :, 2], spec, y0, y1, s2) + wt * _g1(M1s[it + 1, sp, :, :, :, 2], spec, y0, y1, s2)
                                else:
                                    M0v = _g1(M0s[0, sp], spec, y0, y1, s2)
                                    u0 = _g1(M1s[0, sp, :, :, :, 0], spec, y0, y1, s2)
                                    u1 = _g1(M1s[0, sp, :, :, :, 1], spec, y0, y1, s2)
                                    u2 = _g1(M1s[0, sp, :, :, :, 2], spec, y0, y1, s2)
                                s0v = _g1(M0st[sp], spec, y0, y1, s2)
                                sv0 = _g1(M1st[sp, :, :, :, 0], spec, y0, y1, s2)
                                sv1 = _g1(M1st[sp, :, :, :, 1], spec, y0, y1, s2)
                                sv2 = _g1(M1st[sp, :, :, :, 2], spec, y0, y1, s2)
                                has_f = M0v != 0.0 or u0 != 0.0 or u1 != 0.0 or u2 != 0.0
                                has_st = s0v != 0.0 or sv0 != 0.0 or sv1 != 0.0 or sv2 != 0.0
                                if not (has_f or has_st):
                                    continue
                                if has_f:
                                    # electric transport closure (plain M1, direction omega')
                                    odm = w0 * u0 + w1 * u1 + o2 * u2
                                    et0 = -w0 * M0v - u0 + 2.0 * w0 * odm
                                    et1 = -w1 * M0v - u1 + 2.0 * w1 * odm
                                    et2 = -o2 * M0v - u2 + 2.0 * o2 * odm
                                    if half == 0:
                                        Eterms[5, 0] += -iota * wq * et0
                                        Eterms[5, 1] += -iota * wq * et1
                                        Eterms[5, 2] += -iota * wq * et2
                                    else:
                                        Eterms[6, 0] += _SIGMA[0] * (-iota) * wq * et0
                                        Eterms[6, 1] += _SIGMA[1] * (-iota) * wq * et1
                                        Eterms[6, 2] += _SIGMA[2] * (-iota) * wq * et2
                                    # magnetic transport closure (mirrored M1 on image)
                                    b2c = u2 if half == 0 else -u2
                                    bt0 = w1 * b2c - o2 * u1
                                    bt1 = o2 * u0 - w0 * b2c
                                    bt2 = w0 * u1 - w1 * u0
                                    bi = 2 if half == 0 else 3
                                    Bterms[bi, 0] += iota * wq * bt0
                                    Bterms[bi, 1] += iota * wq * bt1
                                    Bterms[bi, 2] += iota * wq * bt2
                                    # acceleration source closure
                                    W00 = iota * te0
                                    W01 = iota * te1
                                    W02 = iota * te2 - mass * g
                                    kodW = w0 * W00 + w1 * W01 + o2 * W02
                                    koM = odm
                                    cb0 = iota * (u1 * tb2 - u2 * tb1)
                                    cb1 = iota * (u2 * tb0 - u0 * tb2)
                                    cb2 = iota * (u0 * tb1 - u1 * tb0)
                                    koCB = w0 * cb0 + w1 * cb1 + o2 * cb2
                                    for i3 in range(3):
                                        koi = w0 if i3 == 0 else (w1 if i3 == 1 else o2)
                                        W0i = W00 if i3 == 0 else (W01 if i3 == 1 else W02)
                                        M1i = u0 if i3 == 0 else (u1 if i3 == 1 else u2)
                                        CBi = cb0 if i3 == 0 else (cb1 if i3 == 1 else cb2)
                                        h0 = (W0i - koi * kodW) / mass
                                        dh = (-W0i * koM - M1i * kodW + 2.0 * koi * koM * kodW) / mass
                                        hB = (CBi - koi * koCB) / mass
                                        valS = h0 * M0v + dh + hB
                                        if half == 0:
                                            Eterms[7, i3] += iota * wq * r * valS
                                        else:
                                            Eterms[8, i3] += _SIGMA[i3] * iota * wq * r * valS
                                if has_st:
                                    # stationary source closure (perturbation fields only)
                                    G00 = iota * pe0
                                    G01 = iota * pe1
                                    G02 = iota * pe2
                                    kodG = w0 * G00 + w1 * G01 + o2 * G02
                                    koS = w0 * sv0 + w1 * sv1 + o2 * sv2
                                    gb0 = iota * (sv1 * pb2 - sv2 * pb1)
                                    gb1 = iota * (sv2 * pb0 - sv0 * pb2)
                                    gb2 = iota * (sv0 * pb1 - sv1 * pb0)
                                    koGB = w0 * gb0 + w1 * gb1 + o2 * gb2
                                    for i3 in range(3):
                                        koi = w0 if i3 == 0 else (w1 if i3 == 1 else o2)
                                        G0i = G00 if i3 == 0 else (G01 if i3 == 1 else G02)
                                        S1i = sv0 if i3 == 0 else (sv1 if i3 == 1 else sv2)
                                        GBi = gb0 if i3 == 0 else (gb1 if i3 == 1 else gb2)
                                        g0 = (G0i - koi * kodG) / mass
                                        dg = (-G0i * koS - S1i * kodG + 2.0 * koi * koS * kodG) / mass
                                        gB = (GBi - koi * koGB) / mass
                                        valS = g0 * s0v + dg + gB
                                        if half == 0:
                                            Eterms[9, i3] += iota * wq * r * valS
                                        else:
                                            Eterms[10, i3] += _SIGMA[i3] * iota * wq * r * valS

    # ---- boundary-disk terms ----
    if t > x2 and nt_cur >= 1:
        rho_max = math.sqrt(t * t - x2 * x2)
        nrho = glx_b.shape[0]
        for q_i in range(nrho):
            rho = 0.5 * rho_max * (glx_b[q_i] + 1.0)
            wrho = 0.5 * rho_max * glw_b[q_i] * rho
            dist = math.sqrt(rho * rho + x2 * x2)
            tau = t - dist
            f = tau / dth
            if two:
                if f <= 0.0:
                    it = 0
                    wt = 0.0
                elif f >= nt_cur - 1:
                    it = nt_cur - 2
                    wt = 1.0
                else:
                    it = int(f)
                    wt = f - it
            else:
                it = 0
                wt = 0.0
            for p_i in range(nphi_b):
                phi = 2.0 * math.pi * p_i / nphi_b
                wq = wrho * (2.0 * math.pi / nphi_b) / dist
                y0 = x0 + rho * math.cos(phi)
                y1 = x1 + rho * math.sin(phi)
                o0 = rho * math.cos(phi) / dist
                o1 = rho * math.sin(phi) / dist
                o2 = -x2 / dist
                for sp in range(2):
                    iota = 1.0 if sp == 0 else -1.0
                    if two:
                        b0 = (1 - wt) * _g2(Mb0[it, sp], spec, y0, y1) + wt * _g2(Mb0[it + 1, sp], spec, y0, y1)
                        c0 = (1 - wt) * _g2(Mb1[it, sp, :, :, 0], spec, y0, y1) + wt * _g2(Mb1[it + 1, sp, :, :, 0], spec, y0, y1)
                        c1 = (1 - wt) * _g2(Mb1[it, sp, :, :, 1], spec, y0, y1) + wt * _g2(Mb1[it + 1, sp, :, :, 1], spec, y0, y1)
                        c2 = (1 - wt) * _g2(Mb1[it, sp, :, :, 2], spec, y0, y1) + wt * _g2(Mb1[it + 1, sp, :, :, 2], spec, y0, y1)
                    else:
                        b0 = _g2(Mb0[0, sp], spec, y0, y1)
                        c0 = _g2(Mb1[0, sp, :, :, 0], spec, y0, y1)
                        c1 = _g2(Mb1[0, sp, :, :, 1], spec, y0, y1)
                        c2 = _g2(Mb1[0, sp, :, :, 2], spec, y0, y1)
                    if b0 == 0.0 and c0 == 0.0 and c1 == 0.0 and c2 == 0.0:
                        continue
                    # boundary-trace kernel closure: delta_i3 b0 - omega'_i c2
                    Eterms[3, 0] += -iota * wq * (-o0 * c2)
                    Eterms[3, 1] += -iota * wq * (-o1 * c2)
                    Eterms[3, 2] += -iota * wq * (b0 - o2 * c2)
                    # image variant (omega_bar) with parity per component
                    Eterms[4, 0] += _SIGMA[0] * (-iota) * wq * (-o0 * c2)
                    Eterms[4, 1] += _SIGMA[1] * (-iota) * wq * (-o1 * c2)
                    Eterms[4, 2] += _SIGMA[2] * (-iota) * wq * (b0 - (-o2) * c2)
                    # extra normal-component boundary term
                    Eterms[11, 2] += -iota * 2.0 * wq * b0
                    # magnetic Neumann disk term 2 (-1)^j vhat_j
                    Bterms[1, 0] += 2.0 * iota * wq * c1
                    Bterms[1, 1] += -2.0 * iota * wq * c0


@njit(cache=True, fastmath=True, parallel=True)
def assemble_grid(
    t, axes0, axes1, axes2, z_cut, spec,
    M0s, M1s, Es, Bs, nt_cur, dth,
    Estg, Bstg, M0st, M1st, Mb0, Mb1,
    initpk, mp, mm, g, Eext, Bext,
    glx_s, glw_s, nphi_s, glx_r, glw_r, n_rpan, glx_v, glw_v, nphi_v,
    glx_b, glw_b, nphi_b, r_max,
):
    n0, n1, n2 = len(axes0), len(axes1), len(axes2)
    Eg = np.zeros((n0, n1, n2, 3))
    Bg = np.zeros((n0, n1, n2, 3))
    for i0 in prange(n0):
        Eterms = np.empty((12, 3))
        Bterms = np.empty((6, 3))
        for i1 in range(n1):
            for i2 in range(n2):
                if axes2[i2] > z_cut:
                    continue
                assemble_point(
                    t, axes0[i0], axes1[i1], axes2[i2], spec,
                    M0s, M1s, Es, Bs, nt_cur, dth,
                    Estg, Bstg, M0st, M1st, Mb0, Mb1,
                    initpk, mp, mm, g, Eext, Bext,
                    glx_s, glw_s, nphi_s, glx_r, glw_r, n_rpan,
                    glx_v, glw_v, nphi_v, glx_b, glw_b, nphi_b,
                    r_max, Eterms, Bterms,
                )
                for k in range(3):
                    se = 0.0
                    sb = 0.0
                    for q in range(12):
                        se += Eterms[q, k]
                    for q in range(6):
                        sb += Bterms[q, k]
                    Eg[i0, i1, i2, k] = se
                    Bg[i0, i1, i2, k] = sb
    return Eg, Bg


# ---------------------------------------------------------------------------
# mild-form evaluation of the distribution perturbation
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True, inline="always")
def _Fst_ball(profpk, m, g, x0, x1, x2, p0, p1, p2):
    """Gravity-only stationary pull-back in closed form."""
    if x2 <= 0.0 and p2 <= 0.0:
        return _profile_value(profpk[0], profpk[1], profpk[2], profpk[3], x0, x1, p0, p1, p2)
    mu2 = m * m + p0 * p0 + p1 * p1
    v0 = math.sqrt(mu2 + p2 * p2)
    me = v0 + m * g * x2
    rad = me * me - mu2
    rt = math.sqrt(rad) if rad > 0.0 else 0.0
    tb = (rt - p2) / (m * g)
    p2b = p2 + m * g * tb
    mu = math.sqrt(mu2)
    it = (math.asinh(p2b / mu) - math.asinh(p2 / mu)) / (m * g)
    xb0 = x0 - p0 * it
    xb1 = x1 - p1 * it
    return _profile_value(profpk[0], profpk[1], profpk[2], profpk[3], xb0, xb1, p0, p1, p2b)


@njit(cache=True, fastmath=True, inline="always")
def _grad_v_Fst_ball(profpk, m, g, x0, x1, x2, p0, p1, p2, h):
    ga = (_Fst_ball(profpk, m, g, x0, x1, x2, p0 + h, p1, p2)
          - _Fst_ball(profpk, m, g, x0, x1, x2, p0 - h, p1, p2)) / (2 * h)
    gb = (_Fst_ball(profpk, m, g, x0, x1, x2, p0, p1 + h, p2)
          - _Fst_ball(profpk, m, g, x0, x1, x2, p0, p1 - h, p2)) / (2 * h)
    gc = (_Fst_ball(profpk, m, g, x0, x1, x2, p0, p1, p2 + h)
          - _Fst_ball(profpk, m, g, x0, x1, x2, p0, p1, p2 - h)) / (2 * h)
    return ga, gb, gc


@njit(cache=True, fastmath=True, inline="always")
def _duhamel_src(s, a0, a1, a2, q0, q1, q2, m, g, spec, Es, Bs, nt_cur, dth, profpk, hfd):
    """Source integrand: (field perturbation at (s, a)) . grad_v F_st."""
    two = nt_cur >= 2
    f = s / dth
    if two:
        if f <= 0.0:
            it = 0
            wt = 0.0
        elif f >= nt_cur - 1:
            it = nt_cur - 2
            wt = 1.0
        else:
            it = int(f)
            wt = f - it
    else:
        it = 0
        wt = 0.0
    pe0 = _stack3(Es, it, wt, two, spec, a0, a1, a2, 0)
    pe1 = _stack3(Es, it, wt, two, spec, a0, a1, a2, 1)
    pe2 = _stack3(Es, it, wt, two, spec, a0, a1, a2, 2)
    pb0 = _stack3(Bs, it, wt, two, spec, a0, a1, a2, 0)
    pb1 = _stack3(Bs, it, wt, two, spec, a0, a1, a2, 1)
    pb2 = _stack3(Bs, it, wt, two, spec, a0, a1, a2, 2)
    ve = math.sqrt(m * m + q0 * q0 + q1 * q1 + q2 * q2)
    vh0 = q0 / ve
    vh1 = q1 / ve
    vh2 = q2 / ve
    F0 = pe0 + vh1 * pb2 - vh2 * pb1
    F1 = pe1 + vh2 * pb0 - vh0 * pb2
    F2 = pe2 + vh0 * pb1 - vh1 * pb0
    ga, gb, gc = _grad_v_Fst_ball(profpk, m, g, a0, a1, a2, q0, q1, q2, hfd)
    return F0 * ga + F1 * gb + F2 * gc


@njit(cache=True, fastmath=True)
def eval_f_point(
    sp, t, x0, x1, x2, p0, p1, p2,
    m, g, spec, Es, Bs, nt_cur, dth, Estg, Bstg, Eext, Bext,
    initpk, profpk, dt_tr, duh_stride, tol_x, horizon_fac,
):
    """Mild-form value of the distribution perturbation at (t, x, v).

    Backward trace under the total fields; source integral of
    (field perturbation) . grad_v F_st accumulated by the trapezoid rule
    on every duh_stride-th trajectory node; initial pull-back added when
    the floor s = 0 is reached before the wall.
    """
    iota = 1.0 if sp == 0 else -1.0
    zc = np.zeros(3)
    v0 = math.sqrt(m * m + p0 * p0 + p1 * p1 + p2 * p2)
    horizon = horizon_fac * (v0 + m * g * x2) / (m * g)
    hfd = 1e-5 * (1.0 + math.sqrt(p0 * p0 + p1 * p1 + p2 * p2))
    acc = 0.0
    s_prev = t
    src_prev = _duhamel_src(
        t, x0, x1, x2, p0, p1, p2, m, g, spec, Es, Bs, nt_cur, dth, profpk, hfd)
    a0 = x0
    a1 = x1
    a2 = x2
    q0 = p0
    q1 = p1
    q2 = p2
    s = t
    elapsed = 0.0
    nstep = 0
    fin_part = 0.0
    while elapsed < horizon:
        ds = dt_tr
        hit_floor = False
        if s - ds <= 0.0:
            ds = s
            hit_floor = True
            if ds <= 1e-15:
                fin_part = init_f_value(initpk, sp, a0, a1, a2, q0, q1, q2)
                break
        na0, na1, na2, nq0, nq1, nq2, fe, fb = _rk4_once(
            2, m, iota, g, s, a0, a1, a2, q0, q1, q2, -ds,
            zc, zc, Eext, Bext, Estg, Bstg, Es, Bs, 0.0, dth, spec)
        if na2 < 0.0:
            # wall crossing: bisect, final source node at the exit
            lo = 0.0
            hi = ds
            ca0 = na0
            ca1 = na1
            ca2 = na2
            cq0 = nq0
            cq1 = nq1
            cq2 = nq2
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                ca0, ca1, ca2, cq0, cq1, cq2, fe, fb = _rk4_once(
                    2, m, iota, g, s, a0, a1, a2, q0, q1, q2, -mid,
                    zc, zc, Eext, Bext, Estg, Bstg, Es, Bs, 0.0, dth, spec)
                if ca2 > tol_x:
                    lo = mid
                elif ca2 < -tol_x:
                    hi = mid
                else:
                    break
                if hi - lo < 1e-15 * (1.0 + ds):
                    break
            sm = s - 0.5 * (lo + hi)
            src_cur = _duhamel_src(sm, ca0, ca1, max(ca2, 0.0), cq0, cq1, cq2, m, g, spec, Es, Bs, nt_cur, dth, profpk, hfd)
            acc += 0.5 * (src_prev + src_cur) * (s_prev - sm)
            break
        a0 = na0
        a1 = na1
        a2 = na2
        q0 = nq0
        q1 = nq1
        q2 = nq2
        s -= ds
        elapsed += ds
        nstep += 1
        if hit_floor or nstep % duh_stride == 0 or s <= 0.0:
            src_cur = _duhamel_src(s, a0, a1, a2, q0, q1, q2, m, g, spec, Es, Bs, nt_cur, dth, profpk, hfd)
            acc += 0.5 * (src_prev + src_cur) * (s_prev - s)
            src_prev = src_cur
            s_prev = s
        if hit_floor or s <= 1e-15:
            fin_part = init_f_value(initpk, sp, a0, a1, a2, q0, q1, q2)
            break
    return fin_part - iota * acc


@njit(cache=True, fastmath=True, parallel=True)
def f_moments_submesh(
    t, axes0, axes1, axes2, vnodes, vweights,
    mp, mm, g, beta, prune_log,
    spec, Es, Bs, nt_cur, dth, Estg, Bstg, Eext, Bext,
    initpk, prof_p, prof_m, dt_tr, duh_stride, tol_x, horizon_fac,
):
    """(M0, M1) of the distribution perturbation per species on a submesh."""
    n0, n1, n2 = len(axes0), len(axes1), len(axes2)
    nv = vnodes.shape[0]
    M0 = np.zeros((2, n0, n1, n2))
    M1 = np.zeros((2, n0, n1, n2, 3))
    for i0 in prange(n0):
        for i1 in range(n1):
            for i2 in range(n2):
                x0 = axes0[i0]
                x1 = axes1[i1]
                x2 = axes2[i2]
                for sp in range(2):
                    m = mp if sp == 0 else mm
                    base = 0.25 * beta * m * g * x2 + 0.5 * beta * math.sqrt(x0 * x0 + x1 * x1)
                    if base > prune_log:
                        continue
                    acc0 = 0.0
                    ac0 = 0.0
                    ac1 = 0.0
                    ac2 = 0.0
                    for iv in range(nv):
                        q0 = vnodes[iv, 0]
                        q1 = vnodes[iv, 1]
                        q2 = vnodes[iv, 2]
                        ve = math.sqrt(m * m + q0 * q0 + q1 * q1 + q2 * q2)
                        if base + 0.25 * beta * (ve - m) > prune_log:
                            continue
                        # skip the trace when even the a-priori envelope is negligible
                        fv = eval_f_point(
                            sp, t, x0, x1, x2, q0, q1, q2,
                            m, g, spec, Es, Bs, nt_cur, dth, Estg, Bstg, Eext, Bext,
                            initpk, prof_p if sp == 0 else prof_m,
                            dt_tr, duh_stride, tol_x, horizon_fac,
                        )
                        if fv == 0.0:
                            continue
                        w = vweights[iv] * fv
                        acc0 += w
                        ac0 += w * q0 / ve
                        ac1 += w * q1 / ve
                        ac2 += w * q2 / ve
                    M0[sp, i0, i1, i2] = acc0
                    M1[sp, i0, i1, i2, 0] = ac0
                    M1[sp, i0, i1, i2, 1] = ac1
                    M1[sp, i0, i1, i2, 2] = ac2
    return M0, M1


@njit(cache=True, fastmath=True, parallel=True)
def f_boundary_moments(
    t, axes0, axes1, vnodes, vweights,
    mp, mm, g, beta, prune_log,
    spec, Es, Bs, nt_cur, dth, Estg, Bstg, Eext, Bext,
    initpk, prof_p, prof_m, dt_tr, duh_stride, tol_x, horizon_fac,
):
    """Outgoing-half moments of the perturbation on the wall plane."""
    n0, n1 = len(axes0), len(axes1)
    nv = vnodes.shape[0]
    Mb0 = np.zeros((2, n0, n1))
    Mb1 = np.zeros((2, n0, n1, 3))
    for i0 in prange(n0):
        for i1 in range(n1):
            x0 = axes0[i0]
            x1 = axes1[i1]
            for sp in range(2):
                m = mp if sp == 0 else mm
                base = 0.5 * beta * math.sqrt(x0 * x0 + x1 * x1)
                if base > prune_log:
                    continue
                acc0 = 0.0
                ac0 = 0.0
                ac1 = 0.0
                ac2 = 0.0
                for iv in range(nv):
                    q0 = vnodes[iv, 0]
                    q1 = vnodes[iv, 1]
                    q2 = vnodes[iv, 2]
                    if q2 >= 0.0:
                        continue
                    ve = math.sqrt(m * m + q0 * q0 + q1 * q1 + q2 * q2)
                    if base + 0.25 * beta * (ve - m) > prune_log:
                        continue
                    fv = eval_f_point(
                        sp, t, x0, x1, 0.0, q0, q1, q2,
                        m, g, spec, Es, Bs, nt_cur, dth, Estg, Bstg, Eext, Bext,
                        initpk, prof_p if sp == 0 else prof_m,
                        dt_tr, duh_stride, tol_x, horizon_fac,
                    )
                    if fv == 0.0:
                        continue
                    w = vweights[iv] * fv
                    acc0 += w
                    ac0 += w * q0 / ve
                    ac1 += w * q1 / ve
                    ac2 += w * q2 / ve
                Mb0[sp, i0, i1] = acc0
                Mb1[sp, i0, i1, 0] = ac0
                Mb1[sp, i0, i1, 1] = ac1
                Mb1[sp, i0, i1, 2] = ac2
    return Mb0, Mb1


@njit(cache=True, fastmath=True, parallel=True)
def f_cloud_eval(
    t, Xc, Vc, sp_arr,
    mp, mm, g,
    spec, Es, Bs, nt_cur, dth, Estg, Bstg, Eext, Bext,
    initpk, prof_p, prof_m, dt_tr, duh_stride, tol_x, horizon_fac,
):
    n = Xc.shape[0]
    out = np.empty(n)
    for i in prange(n):
        sp = sp_arr[i]
        m = mp if sp == 0 else mm
        out[i] = eval_f_point(
            sp, t, Xc[i, 0], Xc[i, 1], Xc[i, 2], Vc[i, 0], Vc[i, 1], Vc[i, 2],
            m, g, spec, Es, Bs, nt_cur, dth, Estg, Bstg, Eext, Bext,
            initpk, prof_p if sp == 0 else prof_m, dt_tr, duh_stride, tol_x, horizon_fac,
        )
    return out
