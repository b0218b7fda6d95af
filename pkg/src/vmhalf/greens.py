"""Half-space Green kernels, Kirchhoff formulas, and sphere quadrature.

Conventions: ybar = (y1, y2, -y3) is the mirror point; the odd kernel
1/|x-y| - 1/|x-ybar| vanishes on y3 = 0, the even kernel 1/|x-y| +
1/|x-ybar| has vanishing normal derivative on x3 = 0.  Sphere quadrature
is tensor Gauss-Legendre in cos(theta) times trapezoid in phi, and planes
cutting a sphere are handled by splitting the cos(theta) interval at the
cap angle, never by indicator sampling.
"""

from dataclasses import dataclass

import numpy as np

from .errors import QuadratureFailure, Singular

EPS_SING = 1e-12

_R = np.array([1.0, 1.0, -1.0])


def reflect(y):
    """Mirror across the boundary plane: (y1, y2, -y3)."""
    return np.asarray(y, dtype=float) * _R


def g_image(parity, x, y):
    """Image-charge Poisson kernel 1/|x-y| -+ 1/|x-ybar| (odd/even)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d1 = np.linalg.norm(x - y)
    d2 = np.linalg.norm(x - y * _R)
    if d1 < EPS_SING or d2 < EPS_SING:
        raise Singular(f"evaluation within {EPS_SING} of the kernel singularity")
    if parity == "odd":
        return 1.0 / d1 - 1.0 / d2
    if parity == "even":
        return 1.0 / d1 + 1.0 / d2
    raise ValueError("parity must be 'odd' or 'even'")


def grad_g_image(parity, x, y, wrt="x"):
    """Analytic gradient of the image kernel with respect to x or y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d1v = x - y
    d2v = x - y * _R
    d1 = np.linalg.norm(d1v)
    d2 = np.linalg.norm(d2v)
    if d1 < EPS_SING or d2 < EPS_SING:
        raise Singular(f"evaluation within {EPS_SING} of the kernel singularity")
    sgn = -1.0 if parity == "odd" else 1.0
    if parity not in ("odd", "even"):
        raise ValueError("parity must be 'odd' or 'even'")
    if wrt == "x":
        return -d1v / d1**3 + sgn * (-d2v / d2**3)
    if wrt == "y":
        return d1v / d1**3 + sgn * (d2v * _R) / d2**3
    raise ValueError("wrt must be 'x' or 'y'")


def spherical_cap_area(R0, t, x):
    """Solid angle of {omega : |x + t omega| <= R0}: max(pi (R0^2-(t-|x|)^2)/(t|x|), 0).

    Valid whenever the support sphere does not enclose the whole unit
    sphere of directions, i.e. (t + |x|) >= R0.
    """
    r = float(np.linalg.norm(x))
    if t <= 0 or r <= 0:
        raise ValueError("t > 0 and |x| > 0 required")
    return max(np.pi * (R0 * R0 - (t - r) ** 2) / (t * r), 0.0)


def solid_angle_in_ball(R0, t, x):
    """Clamped solid angle of {omega : |x + t omega| <= R0} (covers all cases)."""
    r = float(np.linalg.norm(x))
    if t <= 0 or r <= 0:
        raise ValueError("t > 0 and |x| > 0 required")
    R = (t * t + r * r - R0 * R0) / (2 * t * r)
    return 2 * np.pi * (1.0 - min(max(R, -1.0), 1.0))


def sphere_nodes(n_theta, n_phi, cos_lo=-1.0, cos_hi=1.0):
    """Gauss-Legendre x trapezoid nodes on a theta-band of the unit sphere.

    Returns (omegas (N, 3), weights (N,)) with sum(weights) equal to the
    band solid angle 2 pi (cos_hi - cos_lo).
    """
    if cos_hi <= cos_lo:
        return np.zeros((0, 3)), np.zeros(0)
    xg, wg = np.polynomial.legendre.leggauss(n_theta)
    c = 0.5 * (cos_hi - cos_lo) * xg + 0.5 * (cos_hi + cos_lo)
    wc = 0.5 * (cos_hi - cos_lo) * wg
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    wphi = 2 * np.pi / n_phi
    s = np.sqrt(np.maximum(1 - c * c, 0.0))
    omegas = np.empty((n_theta * n_phi, 3))
    weights = np.empty(n_theta * n_phi)
    k = 0
    for i in range(n_theta):
        omegas[k : k + n_phi, 0] = s[i] * np.cos(phi)
        omegas[k : k + n_phi, 1] = s[i] * np.sin(phi)
        omegas[k : k + n_phi, 2] = c[i]
        weights[k : k + n_phi] = wc[i] * wphi
        k += n_phi
    return omegas, weights


def clipped_sphere_nodes(x3, r, n_theta, n_phi, hemisphere):
    """Quadrature nodes on {|y - x| = r} intersected with a half space.

    ``hemisphere`` selects y3 > 0 ('upper'), y3 < 0 ('lower') or 'full'.
    The cut cos(theta) = -x3/r is resolved analytically.
    """
    if hemisphere == "full":
        return sphere_nodes(n_theta, n_phi)
    cstar = -x3 / r
    if hemisphere == "upper":
        if cstar <= -1.0:
            return sphere_nodes(n_theta, n_phi)
        if cstar >= 1.0:
            return np.zeros((0, 3)), np.zeros(0)
        return sphere_nodes(n_theta, n_phi, cos_lo=cstar, cos_hi=1.0)
    if hemisphere == "lower":
        if cstar <= -1.0:
            return np.zeros((0, 3)), np.zeros(0)
        if cstar >= 1.0:
            return sphere_nodes(n_theta, n_phi)
        return sphere_nodes(n_theta, n_phi, cos_lo=-1.0, cos_hi=cstar)
    raise ValueError("hemisphere must be 'upper', 'lower' or 'full'")


def retarded_surface_integral(t, x, integrand, hemisphere="upper", n_theta=64, n_phi=128):
    """Integral of ``integrand(y, omega)`` over the sphere |y - x| = t.

    ``integrand`` must be vectorized over (N, 3) inputs.  The surface
    measure t^2 d(omega) is included; the hemisphere refers to y3 sign.
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    x = np.asarray(x, dtype=float)
    omegas, weights = clipped_sphere_nodes(x[2], t, n_theta, n_phi, hemisphere)
    if len(weights) == 0:
        return 0.0
    y = x[None, :] + t * omegas
    vals = np.asarray(integrand(y, omegas), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise QuadratureFailure("non-finite integrand on the retarded sphere")
    return float(t * t * np.sum(weights * vals))


@dataclass
class InitialWaveData:
    """Compactly supported scalar wave data (value, velocity, gradient).

    Evaluators must be vectorized over (N, 3) points and vanish for
    |y| > R0.
    """

    u0: object
    u1: object
    grad_u0: object
    R0: float


def kirchhoff_hom(data, t, x, parity, n_theta=64, n_phi=128):
    """Half-space free-wave value at (t, x) from reflected spherical means.

    (1/4 pi t^2) [ int_{|y-x|=t, y3>0} (t u1 + u0 + grad u0 . (y - x)) dS
                   -+ int_{|y-x|=t, y3<0} (t u1(ybar) + u0(ybar)
                                           + grad u0(ybar) . (ybar - xbar)) dS ]

    with '-' for odd parity (Dirichlet) and '+' for even (Neumann).
    """
    x = np.asarray(x, dtype=float)
    if t < 0:
        raise ValueError("t must be >= 0")
    if t < 1e-14:
        return float(np.asarray(data.u0(x[None, :]))[0])
    sgn = -1.0 if parity == "odd" else 1.0
    if parity not in ("odd", "even"):
        raise ValueError("parity must be 'odd' or 'even'")

    def upper(y, om):
        return t * data.u1(y) + data.u0(y) + np.sum(data.grad_u0(y) * (y - x), axis=1)

    xb = x * _R

    def lower(y, om):
        yb = y * _R
        return t * data.u1(yb) + data.u0(yb) + np.sum(data.grad_u0(yb) * (yb - xb), axis=1)

    up = retarded_surface_integral(t, x, upper, "upper", n_theta, n_phi)
    lo = retarded_surface_integral(t, x, lower, "lower", n_theta, n_phi)
    return (up + sgn * lo) / (4 * np.pi * t * t)


def grad_image_potential(x, source, parity, r_cut, n_r=24, n_theta=16, n_phi=32, panels=4):
    """Gradient of the image-kernel Newtonian potential of a half-space source.

    Computes grad_x of int_{y3>=0} G_parity(x, y) source(y) dy in shifted
    spherical coordinates (the r^2 Jacobian cancels the kernel), i.e.

        int_0^{r_cut} dr  oint  omega * source_ext(x + r omega) d(omega),

    where source_ext is the odd/even extension across y3 = 0.  ``source``
    must be vectorized over (N, 3) points and vanish outside its support.
    """
    x = np.asarray(x, dtype=float)
    sgn = -1.0 if parity == "odd" else 1.0
    omegas, weights = sphere_nodes(n_theta, n_phi)
    xg, wg = np.polynomial.legendre.leggauss(n_r)
    total = np.zeros(3)
    edges = np.linspace(0.0, r_cut, panels + 1)
    for a, b in zip(edges[:-1], edges[1:]):
        rr = 0.5 * (b - a) * xg + 0.5 * (b + a)
        wr = 0.5 * (b - a) * wg
        for r, w in zip(rr, wr):
            y = x[None, :] + r * omegas
            above = y[:, 2] >= 0.0
            vals = np.zeros(len(y))
            if np.any(above):
                vals[above] = source(y[above])
            if np.any(~above):
                vals[~above] = sgn * source(y[~above] * _R)
            total += w * np.sum((weights * vals)[:, None] * omegas, axis=0)
    if not np.all(np.isfinite(total)):
        raise QuadratureFailure("non-finite value in image-potential gradient")
    return total
