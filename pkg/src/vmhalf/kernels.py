"""Momentum-direction kernels of the light-cone field representations.

All kernels are functions of the relativistic velocity vhat = v / v0 and
a unit direction omega (or a nonzero vector Y for the magnetic ones).
The denominator 1 + vhat . omega degenerates as |vhat| -> 1 with omega
near -vhat/|vhat|; it is evaluated in the cancellation-free form

    1 + vhat.omega = m^2 / (v0 (v0 + |v|)) + |vhat| |u + omega|^2 / 2,

with u = v/|v|, both terms nonnegative.  Scalar entry points delegate to
the vectorized (..., 3) implementations used by the bound samplers.
"""

import numpy as np

from .errors import ZeroY

_TINY = 1e-300


def _v0(m, v):
    return np.sqrt(m * m + np.sum(v * v, axis=-1))


def one_plus_vhat_omega(m, v, omega):
    """1 + vhat(v) . omega without catastrophic cancellation; inputs (..., 3)."""
    v = np.asarray(v, dtype=float)
    omega = np.asarray(omega, dtype=float)
    vv = np.sqrt(np.sum(v * v, axis=-1))
    v0 = np.sqrt(m * m + vv * vv)
    u = v / np.maximum(vv, _TINY)[..., None]
    s = np.sum((u + omega) ** 2, axis=-1)
    out = m * m / (v0 * (v0 + vv)) + (vv / v0) * 0.5 * s
    return np.where(vv < _TINY, 1.0 + np.sum(v * omega, axis=-1), out)


def kernel_K(m, omega, v):
    """Projection matrix K_ij = delta_ij - (omega_i + vhat_i) vhat_j / (1 + vhat.omega)."""
    v = np.asarray(v, dtype=float)
    omega = np.asarray(omega, dtype=float)
    vh = v / _v0(m, v)[..., None]
    den = one_plus_vhat_omega(m, v, omega)
    outer = (omega + vh)[..., :, None] * vh[..., None, :]
    eye = np.broadcast_to(np.eye(3), outer.shape)
    return eye - outer / den[..., None, None]


def kernel_K_omega(m, omega, v):
    """Contraction K . omega appearing in the light-cone data terms."""
    v = np.asarray(v, dtype=float)
    omega = np.asarray(omega, dtype=float)
    vh = v / _v0(m, v)[..., None]
    den = one_plus_vhat_omega(m, v, omega)
    womega = np.sum(vh * omega, axis=-1)
    return omega - (omega + vh) * (womega / den)[..., None]


def kernel_aE_split(m, omega, v):
    """Momentum gradient of (omega_i + vhat_i)/(1 + vhat.omega), split in two parts.

    Returns (a1, a2) with shape (..., 3, 3); row i is the gradient of the
    i-th scalar kernel.  a1 carries the identity-minus-dyad part, a2 the
    denominator derivative.
    """
    v = np.asarray(v, dtype=float)
    omega = np.asarray(omega, dtype=float)
    v0 = _v0(m, v)
    vh = v / v0[..., None]
    den = one_plus_vhat_omega(m, v, omega)
    eye = np.broadcast_to(np.eye(3), vh.shape[:-1] + (3, 3))
    dyad = vh[..., :, None] * vh[..., None, :]
    a1 = (eye - dyad) / (v0 * den)[..., None, None]
    wv = np.sum(omega * vh, axis=-1)
    vec = omega - wv[..., None] * vh
    a2 = -(omega + vh)[..., :, None] * vec[..., None, :] / (v0 * den * den)[..., None, None]
    return a1, a2


def kernel_aE(m, omega, v):
    a1, a2 = kernel_aE_split(m, omega, v)
    return a1 + a2


def kernel_ET(m, omega, v):
    """Transport kernel (|vhat|^2 - 1)(vhat + omega) / (1 + vhat.omega)^2."""
    v = np.asarray(v, dtype=float)
    omega = np.asarray(omega, dtype=float)
    v0 = _v0(m, v)
    vh = v / v0[..., None]
    den = one_plus_vhat_omega(m, v, omega)
    # 1 - |vhat|^2 = m^2 / v0^2 exactly
    fac = -(m * m) / (v0 * v0)
    return fac[..., None] * (vh + omega) / (den * den)[..., None]


def kernel_BT(m, Y, v, reflected=False):
    """Magnetic transport kernel (Y x vhat)(1 - |vhat|^2) / (|Y|^3 (1 + vhat.Y/|Y|)^2).

    The reflected variant replaces vhat by (vhat1, vhat2, -vhat3).
    """
    Y = np.asarray(Y, dtype=float)
    v = np.asarray(v, dtype=float)
    ny = np.sqrt(np.sum(Y * Y, axis=-1))
    if np.any(ny < 1e-14):
        raise ZeroY("kernel_BT needs Y != 0")
    omega = Y / ny[..., None]
    v0 = _v0(m, v)
    vh = v / v0[..., None]
    if reflected:
        vh = vh * np.array([1.0, 1.0, -1.0])
    vref = vh * v0[..., None]
    den = one_plus_vhat_omega(m, vref, omega)
    fac = (m * m) / (v0 * v0)
    return np.cross(omega, vh) * (fac / (ny * ny * den * den))[..., None]


def kernel_b2(m, omega, v, reflected=False):
    """Boundary-trace kernel (0,0,1)^T - (omega + vhat) vhat3 / (1 + vhat.omega).

    The reflected variant uses omega_bar = (omega1, omega2, -omega3).
    """
    v = np.asarray(v, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if reflected:
        omega = omega * np.array([1.0, 1.0, -1.0])
    v0 = _v0(m, v)
    vh = v / v0[..., None]
    den = one_plus_vhat_omega(m, v, omega)
    e3 = np.zeros(vh.shape)
    e3[..., 2] = 1.0
    return e3 - (omega + vh) * (vh[..., 2] / den)[..., None]


def kernel_b1_B(m, omega, v, reflected=False):
    """Initial-data kernel (omega x vhat) / (1 + vhat.omega) of the magnetic field."""
    v = np.asarray(v, dtype=float)
    omega = np.asarray(omega, dtype=float)
    v0 = _v0(m, v)
    vh = v / v0[..., None]
    if reflected:
        vh = vh * np.array([1.0, 1.0, -1.0])
    den = one_plus_vhat_omega(m, vh * v0[..., None], omega)
    return np.cross(omega, vh) / den[..., None]


def _mag_kernel_of_v(Y, m):
    """W(v) = (Y/|Y|^2) x vhat/(1 + vhat.Y/|Y|) as a function of momentum."""
    Y = np.asarray(Y, dtype=float)
    ny = float(np.linalg.norm(Y))
    if ny < 1e-14:
        raise ZeroY("Y must be nonzero")
    A = Y / (ny * ny)
    u = Y / ny

    def W(v):
        v = np.asarray(v, dtype=float)
        vh = v / _v0(m, v)[..., None]
        den = one_plus_vhat_omega(m, v, u)
        return np.cross(A, vh / den[..., None])

    return W


def check_div_v_vanish(Y, v, m, h=None):
    """Momentum divergence of the magnetic kernel: analytic and FD residuals.

    The product-rule expansion of div_v [(Y/|Y|^2) x vhat/(1+vhat.Y/|Y|)]
    leaves only scalar triple products with a repeated vector, so the
    analytic value is identically zero.  The finite-difference residual is
    returned relative to the summed gradient magnitude of the kernel.
    """
    Y = np.asarray(Y, dtype=float)
    v = np.asarray(v, dtype=float)
    W = _mag_kernel_of_v(Y, m)
    analytic = float(np.dot(v, np.cross(Y, Y)))  # repeated-vector triple product
    if h is None:
        h = 1e-5 * (1.0 + float(np.linalg.norm(v)))
    div = 0.0
    scale = 0.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        dW = (W(v + e) - W(v - e)) / (2 * h)
        div += dW[i]
        scale += float(np.linalg.norm(dW))
    return analytic, div / max(scale, _TINY)


def check_kernelB1_identity(Y, v, m, h=None):
    """Directional-derivative identity of the magnetic kernel.

    Left side: vhat . grad_Y [(Y/|Y|^2) x vhat/(1+vhat.Y/|Y|)] by central
    differences.  Right side (analytic):
    -(u x vhat) (2 vhat.u + |vhat|^2 + (vhat.u)^2) / (|Y|^2 (1+vhat.u)^2).
    Returns the relative residual.
    """
    Y = np.asarray(Y, dtype=float)
    v = np.asarray(v, dtype=float)
    ny = float(np.linalg.norm(Y))
    if ny < 1e-14:
        raise ZeroY("Y must be nonzero")
    v0 = float(_v0(m, v))
    vh = v / v0
    u = Y / ny
    den = float(one_plus_vhat_omega(m, v, u))
    vu = float(np.dot(vh, u))
    rhs = -np.cross(u, vh) * (2 * vu + float(vh @ vh) + vu * vu) / (ny * ny * den * den)

    def W(Yq):
        nyq = np.linalg.norm(Yq)
        uq = Yq / nyq
        dq = float(one_plus_vhat_omega(m, v, uq))
        return np.cross(Yq / (nyq * nyq), vh / dq)

    if h is None:
        h = 1e-6 * ny
    nvh = float(np.linalg.norm(vh))
    if nvh < 1e-12:
        return 0.0
    uh = vh / nvh
    # differentiate along the unit direction, then scale: well conditioned
    # even for tiny velocities
    lhs = nvh * (W(Y + h * uh) - W(Y - h * uh)) / (2 * h)
    num = float(np.linalg.norm(lhs - rhs))
    return num / max(float(np.linalg.norm(rhs)) + float(np.linalg.norm(lhs)), _TINY)


def combined_transport_residual(Y, v, m):
    """Residual of (Y x vhat)/|Y|^3 + B1-derivative term = transport kernel."""
    Y = np.asarray(Y, dtype=float)
    v = np.asarray(v, dtype=float)
    ny = float(np.linalg.norm(Y))
    if ny < 1e-14:
        raise ZeroY("Y must be nonzero")
    v0 = float(_v0(m, v))
    vh = v / v0
    u = Y / ny
    den = float(one_plus_vhat_omega(m, v, u))
    vu = float(np.dot(vh, u))
    raw = np.cross(Y, vh) / ny**3
    corr = -np.cross(u, vh) * (2 * vu + float(vh @ vh) + vu * vu) / (ny * ny * den * den)
    target = kernel_BT(m, Y, v)
    resid = raw + corr - target
    return float(np.linalg.norm(resid)) / max(float(np.linalg.norm(target)) + float(np.linalg.norm(raw)), _TINY)


# ---------------------------------------------------------------------------
# sampling helpers for the sup-bound checks
# ---------------------------------------------------------------------------

def sample_sphere(rng, n):
    z = rng.normal(size=(n, 3))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sample_momenta(rng, n, vmax):
    """Momenta with log-uniform magnitudes up to vmax (stresses |vhat| -> 1)."""
    r = np.exp(rng.uniform(np.log(1e-3), np.log(vmax), size=n))
    return sample_sphere(rng, n) * r[:, None]


def sample_directions_stratified(rng, v, m):
    """One direction per momentum, half concentrated near -vhat/|vhat|.

    The concentrated half lies within polar angle 1/v0 of the worst
    direction, where the kernel denominators are smallest.
    """
    n = v.shape[0]
    omega = sample_sphere(rng, n)
    v0 = _v0(m, v)
    nv = np.linalg.norm(v, axis=1)
    mask = (rng.random(n) < 0.5) & (nv > 1e-12)
    idx = np.nonzero(mask)[0]
    if idx.size:
        axis = -v[idx] / nv[idx, None]
        cosmax = np.cos(np.minimum(1.0 / v0[idx], np.pi))
        c = rng.uniform(cosmax, 1.0, size=idx.size)
        s = np.sqrt(np.maximum(1 - c * c, 0.0))
        phi = rng.uniform(0, 2 * np.pi, size=idx.size)
        local = np.stack([s * np.cos(phi), s * np.sin(phi), c], axis=1)
        # rotate local z-axis onto each target axis
        zaxis = np.array([0.0, 0.0, 1.0])
        dots = axis @ zaxis
        k = np.cross(np.broadcast_to(zaxis, axis.shape), axis)
        nk = np.linalg.norm(k, axis=1)
        rotated = np.empty_like(local)
        for j in range(idx.size):
            if nk[j] < 1e-12:
                rotated[j] = local[j] if dots[j] > 0 else local[j] * np.array([1, -1, -1])
                continue
            kk = k[j] / nk[j]
            cth = dots[j]
            sth = nk[j]
            rotated[j] = (
                local[j] * cth
                + np.cross(kk, local[j]) * sth
                + kk * np.dot(kk, local[j]) * (1 - cth)
            )
        omega[idx] = rotated / np.linalg.norm(rotated, axis=1, keepdims=True)
    return omega


def kernel_bound_report(name, m, rng, n, vmax=50.0, chunk=200_000):
    """Violation count and worst ratio of one named kernel sup-bound.

    Names: K_omega, a1, a2, ET, BT, b2, one_minus_vhat2.
    Returns dict {kernel, samples, max_ratio, violations}.
    """
    worst = 0.0
    violations = 0
    done = 0
    while done < n:
        k = min(chunk, n - done)
        v = sample_momenta(rng, k, vmax)
        omega = sample_directions_stratified(rng, v, m)
        v0 = _v0(m, v)
        if name == "K_omega":
            val = np.linalg.norm(kernel_K_omega(m, omega, v), axis=-1)
            bound = 2.0 * v0 / m
        elif name == "a1":
            a1, _ = kernel_aE_split(m, omega, v)
            val = np.linalg.norm(a1, axis=-1).max(axis=-1)
            bound = 4.0 * v0 / (m * m)
        elif name == "a2":
            _, a2 = kernel_aE_split(m, omega, v)
            val = np.linalg.norm(a2, axis=-1).max(axis=-1)
            bound = 3.0 * v0 / (m * m)
        elif name == "ET":
            # envelope 2 * 3 * v0/m from the two-factor decomposition
            val = np.linalg.norm(kernel_ET(m, omega, v), axis=-1)
            bound = 6.0 * v0 / m
        elif name == "BT":
            ny = 1.0 + rng.random(k)
            Y = omega * ny[:, None]
            val = np.linalg.norm(kernel_BT(m, Y, v), axis=-1) * ny * ny
            bound = 2.0 * v0 / m
        elif name == "b2":
            val = np.linalg.norm(kernel_b2(m, omega, v), axis=-1)
            vh3 = np.abs(v[:, 2]) / v0
            bound = 1.0 + vh3 * v0 / m
        elif name == "one_minus_vhat2":
            den = one_plus_vhat_omega(m, v, omega)
            val = (m * m) / (v0 * v0) / den
            bound = np.full(k, 2.0)
        else:
            raise ValueError(f"unknown kernel bound {name!r}")
        ratio = val / bound
        worst = max(worst, float(ratio.max()))
        violations += int(np.count_nonzero(ratio > 1.0 + 1e-12))
        done += k
    return {"kernel": name, "samples": n, "max_ratio": worst, "violations": violations}
