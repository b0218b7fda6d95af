"""Compactly supported perturbation initial data.

The distribution perturbations are polynomial-bump-in-x times drifting
Gaussians in momentum, with the two species sharing one spatial profile
and density-matched in momentum so the initial charge density vanishes
identically (which makes the divergence constraint on the initial
electric field exact for curl-type field data).  The initial fields are
curls of bump potentials, hence divergence-free and compact.  Their
first time derivatives are derived from the field equations at t = 0:

    E' = curl B_in - 4 pi J(0),    B' = -curl E_in.

All evaluators are closed-form and jitted; the momentum moments of the
distribution data factor into (spatial bump) x (constant vectors).
"""

import math
from dataclasses import dataclass, field as dfield

import numpy as np

from ._accel import njit
from .domain import BOTH_SPECIES, Species

# packed layout of the init-data parameter vector (see pack())
# [0]  R0
# [1:4]  f-bump center
# [4]  f kappa (Gaussian momentum width)
# [5]  A_plus, [6] A_minus
# [7:10]  drift_plus, [10:13] drift_minus
# [13] m_plus, [14] m_minus
# [15:18] c1_plus = int vhat gauss dv, [18:21] c1_minus
# [21] c0 = int gauss dv (shared)
# [22:25] E-potential amplitude vector, [25:28] B-potential amplitude vector
# [28] 4*pi coefficient cache
# [29] vertical decay rate of the spatial profile (keeps weighted norms finite)
NPACK = 30


@njit(cache=True, fastmath=True, inline="always")
def _bump(u):
    """(1 - u)^3 for u < 1 else 0; u is the squared scaled radius."""
    if u >= 1.0:
        return 0.0
    w = 1.0 - u
    return w * w * w


@njit(cache=True, fastmath=True, inline="always")
def _bump_du(u):
    if u >= 1.0:
        return 0.0
    w = 1.0 - u
    return -3.0 * w * w


@njit(cache=True, fastmath=True, inline="always")
def _bump_duu(u):
    if u >= 1.0:
        return 0.0
    return 6.0 * (1.0 - u)


@njit(cache=True, fastmath=True)
def init_f_value(pk, sp, x0, x1, x2, p0, p1, p2):
    """Initial distribution perturbation of species sp (0 plus, 1 minus)."""
    R0 = pk[0]
    dx0 = x0 - pk[1]
    dx1 = x1 - pk[2]
    dx2 = x2 - pk[3]
    u = (dx0 * dx0 + dx1 * dx1 + dx2 * dx2) / (R0 * R0)
    if u >= 1.0:
        return 0.0
    kap = pk[4]
    zdec = math.exp(-pk[29] * x2) if x2 > 0.0 else 1.0
    if sp == 0:
        A = pk[5]
        d0 = pk[7]
        d1 = pk[8]
        d2 = pk[9]
    else:
        A = pk[6]
        d0 = pk[10]
        d1 = pk[11]
        d2 = pk[12]
    q0 = p0 - d0
    q1 = p1 - d1
    q2 = p2 - d2
    return A * zdec * _bump(u) * math.exp(-kap * (q0 * q0 + q1 * q1 + q2 * q2))


@njit(cache=True, fastmath=True)
def init_f_moments(pk, y0, y1, y2):
    """(M0+, M1+(3), M0-, M1-(3)) of the initial distributions at y."""
    R0 = pk[0]
    dx0 = y0 - pk[1]
    dx1 = y1 - pk[2]
    dx2 = y2 - pk[3]
    u = (dx0 * dx0 + dx1 * dx1 + dx2 * dx2) / (R0 * R0)
    b = _bump(u) * (math.exp(-pk[29] * y2) if y2 > 0.0 else 1.0)
    c0 = pk[21]
    m0p = pk[5] * b * c0
    m0m = pk[6] * b * c0
    return (
        m0p, pk[5] * b * pk[15], pk[5] * b * pk[16], pk[5] * b * pk[17],
        m0m, pk[6] * b * pk[18], pk[6] * b * pk[19], pk[6] * b * pk[20],
    )


@njit(cache=True, fastmath=True)
def _pot_parts(pk, y0, y1, y2):
    """Bump value, radial factors, and offsets shared by the field data."""
    R0 = pk[0]
    u = (y0 * y0 + y1 * y1 + y2 * y2) / (R0 * R0)
    return u, _bump(u), _bump_du(u), _bump_duu(u)


@njit(cache=True, fastmath=True)
def init_field_value(pk, which, y0, y1, y2, out):
    """Initial field E_in (which=0) or B_in (which=1): curl(phi c) = grad phi x c."""
    u, b, bu, _ = _pot_parts(pk, y0, y1, y2)
    R0 = pk[0]
    gu0 = 2.0 * y0 / (R0 * R0)
    gu1 = 2.0 * y1 / (R0 * R0)
    gu2 = 2.0 * y2 / (R0 * R0)
    gp0 = bu * gu0
    gp1 = bu * gu1
    gp2 = bu * gu2
    o = 22 if which == 0 else 25
    c0 = pk[o]
    c1 = pk[o + 1]
    c2 = pk[o + 2]
    out[0] = gp1 * c2 - gp2 * c1
    out[1] = gp2 * c0 - gp0 * c2
    out[2] = gp0 * c1 - gp1 * c0


@njit(cache=True, fastmath=True)
def init_field_grad(pk, which, y0, y1, y2, out):
    """Gradient out[i, l] = d_l (field_i) from the bump Hessian."""
    u, b, bu, buu = _pot_parts(pk, y0, y1, y2)
    R0 = pk[0]
    r2 = R0 * R0
    gu = (2.0 * y0 / r2, 2.0 * y1 / r2, 2.0 * y2 / r2)
    o = 22 if which == 0 else 25
    c = (pk[o], pk[o + 1], pk[o + 2])
    # Hessian of phi: H_jl = buu gu_j gu_l + bu * 2 delta_jl / r2
    for i in range(3):
        j = (i + 1) % 3
        k = (i + 2) % 3
        for l in range(3):
            Hjl = buu * gu[j] * gu[l] + (2.0 * bu / r2 if j == l else 0.0)
            Hkl = buu * gu[k] * gu[l] + (2.0 * bu / r2 if k == l else 0.0)
            out[i, l] = Hjl * c[k] - Hkl * c[j]


@njit(cache=True, fastmath=True)
def init_field_dt(pk, which, y0, y1, y2, out):
    """First time derivative of the initial field from the field equations.

    which=0: E' = curl B_in - 4 pi J(0); which=1: B' = -curl E_in.
    curl(grad phi x c) = -c laplace(phi) + (c . grad) grad phi.
    """
    u, b, bu, buu = _pot_parts(pk, y0, y1, y2)
    R0 = pk[0]
    r2 = R0 * R0
    gu = (2.0 * y0 / r2, 2.0 * y1 / r2, 2.0 * y2 / r2)
    src = 25 if which == 0 else 22
    c = (pk[src], pk[src + 1], pk[src + 2])
    gu2 = gu[0] * gu[0] + gu[1] * gu[1] + gu[2] * gu[2]
    lap = buu * gu2 + bu * 6.0 / r2
    cdotgu = c[0] * gu[0] + c[1] * gu[1] + c[2] * gu[2]
    sgn = 1.0 if which == 0 else -1.0
    for i in range(3):
        cg = buu * cdotgu * gu[i] + 2.0 * bu * c[i] / r2
        out[i] = sgn * (cg - c[i] * lap)
    if which == 0:
        m = init_f_moments(pk, y0, y1, y2)
        fourpi = pk[28]
        out[0] -= fourpi * (m[1] - m[5])
        out[1] -= fourpi * (m[2] - m[6])
        out[2] -= fourpi * (m[3] - m[7])


@dataclass
class PerturbationInit:
    """Perturbation initial data: distributions plus curl-type fields.

    ``amp_f`` scales both species' distribution bumps (with per-species
    relative factors), ``drift`` separates their momentum Gaussians so
    the initial current is nonzero while the initial charge density
    vanishes pointwise.
    """

    params: object
    R0: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)
    amp_f_plus: float = 1.0
    amp_f_minus: float = 1.0
    kappa: float = 4.0
    drift_plus: tuple = (0.3, 0.0, 0.0)
    drift_minus: tuple = (-0.3, 0.0, 0.0)
    amp_E: tuple = (0.0, 0.0, 0.0)
    amp_B: tuple = (0.0, 0.0, 0.0)
    z_decay: float = None

    def __post_init__(self):
        if self.z_decay is None:
            self.z_decay = self.params.beta * self.params.min_mass * self.params.g
        self._pk = self._build_pack()
        self.norm_wf = self._weighted_sup()

    def _gauss_moments(self, species):
        m = self.params.mass(species)
        d = np.asarray(self.drift_plus if species is Species.PLUS else self.drift_minus)
        n = 40
        x, w = np.polynomial.legendre.leggauss(n)
        half = 5.0 / math.sqrt(self.kappa)
        pts = half * x
        wts = half * w
        P0, P1, P2 = np.meshgrid(pts, pts, pts, indexing="ij")
        W = (
            wts[:, None, None] * wts[None, :, None] * wts[None, None, :]
        )
        V = np.stack([P0 + d[0], P1 + d[1], P2 + d[2]], axis=-1)
        gs = np.exp(-self.kappa * (P0**2 + P1**2 + P2**2))
        v0 = np.sqrt(m * m + np.sum(V * V, axis=-1))
        c0 = float(np.sum(W * gs))
        c1 = np.array([float(np.sum(W * gs * V[..., k] / v0)) for k in range(3)])
        return c0, c1

    def _build_pack(self):
        pk = np.zeros(NPACK)
        pk[0] = self.R0
        pk[1:4] = self.center
        pk[4] = self.kappa
        pk[5] = self.amp_f_plus
        pk[6] = self.amp_f_minus
        pk[7:10] = self.drift_plus
        pk[10:13] = self.drift_minus
        pk[13] = self.params.m_plus
        pk[14] = self.params.m_minus
        c0p, c1p = self._gauss_moments(Species.PLUS)
        c0m, c1m = self._gauss_moments(Species.MINUS)
        pk[15:18] = c1p
        pk[18:21] = c1m
        pk[21] = c0p  # same as c0m: the Gaussian total is drift independent
        pk[22:25] = self.amp_E
        pk[25:28] = self.amp_B
        pk[28] = 4.0 * math.pi
        pk[29] = self.z_decay
        return pk

    @property
    def pack(self):
        return self._pk

    def f_value(self, species, x, v):
        sp = 0 if species is Species.PLUS else 1
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        return init_f_value(self._pk, sp, x[0], x[1], x[2], v[0], v[1], v[2])

    def field(self, which, y):
        out = np.empty(3)
        y = np.asarray(y, dtype=float)
        init_field_value(self._pk, which, y[0], y[1], y[2], out)
        return out

    def field_dt(self, which, y):
        out = np.empty(3)
        y = np.asarray(y, dtype=float)
        init_field_dt(self._pk, which, y[0], y[1], y[2], out)
        return out

    def field_grad(self, which, y):
        out = np.empty((3, 3))
        y = np.asarray(y, dtype=float)
        init_field_grad(self._pk, which, y[0], y[1], y[2], out)
        return out

    def _weighted_sup(self):
        """Dense-grid sup of w f_in over both species."""
        beta = self.params.beta
        worst = 0.0
        n = 24
        for sp in BOTH_SPECIES:
            m = self.params.mass(sp)
            d = np.asarray(self.drift_plus if sp is Species.PLUS else self.drift_minus)
            xs = np.linspace(self.center[0] - self.R0, self.center[0] + self.R0, n)
            ys = np.linspace(self.center[1] - self.R0, self.center[1] + self.R0, n)
            zs = np.linspace(max(self.center[2] - self.R0, 0.0), self.center[2] + self.R0, n)
            vs = np.linspace(-5.0 / math.sqrt(self.kappa), 5.0 / math.sqrt(self.kappa), n)
            for x0 in xs:
                for y0 in ys:
                    for z0 in zs:
                        u = ((x0 - self.center[0]) ** 2 + (y0 - self.center[1]) ** 2 + (z0 - self.center[2]) ** 2) / self.R0**2
                        if u >= 1:
                            continue
                        b = (1 - u) ** 3 * math.exp(-self.z_decay * max(z0, 0.0))
                        for dv in vs:
                            vv = d + dv * np.array([1.0, 0, 0])
                            v0 = math.sqrt(m * m + float(vv @ vv))
                            lw = beta * (v0 + m * self.params.g * z0) + 0.5 * beta * math.hypot(x0, y0)
                            amp = (self.amp_f_plus if sp is Species.PLUS else self.amp_f_minus)
                            val = amp * b * math.exp(-self.kappa * dv * dv)
                            if lw < 600:
                                worst = max(worst, math.exp(lw) * val)
        return worst

    def scaled_to(self, target_norm):
        """Return a copy with distribution amplitudes scaled so ||w f_in|| <= target."""
        if self.norm_wf == 0:
            return self
        s = target_norm / self.norm_wf
        return PerturbationInit(
            params=self.params, R0=self.R0, center=self.center,
            amp_f_plus=self.amp_f_plus * s, amp_f_minus=self.amp_f_minus * s,
            kappa=self.kappa, drift_plus=self.drift_plus, drift_minus=self.drift_minus,
            amp_E=self.amp_E, amp_B=self.amp_B, z_decay=self.z_decay,
        )

    def to_dict(self):
        return {
            "R0": self.R0, "center": list(self.center),
            "amp_f_plus": self.amp_f_plus, "amp_f_minus": self.amp_f_minus,
            "kappa": self.kappa,
            "drift_plus": list(self.drift_plus), "drift_minus": list(self.drift_minus),
            "amp_E": list(self.amp_E), "amp_B": list(self.amp_B),
            "z_decay": self.z_decay, "norm_wf": self.norm_wf,
        }
