"""Perturbation dynamics around a stationary state.

The distribution perturbation is evaluated in mild form (initial-data
pull-back plus a source integral along characteristics traced under the
total fields, fields lagging trajectories by one step).  Field
perturbations are assembled from their light-cone representations:
reflected Kirchhoff data terms, initial-data sphere terms, boundary-disk
terms, and retarded volume terms in shifted spherical coordinates.
Momentum integrals against direction kernels use a first-order closure
in the relativistic velocity; the history buffer carries the per-species
moment grids M0 = int f dv, M1 = int vhat f dv this closure needs, plus
the perturbation-field grids and wall-trace moments.

The electric assembler carries twelve named terms (Kirchhoff data, data
sphere, wall trace, transport and two source families, each in direct
and image routes, plus the extra normal-component wall term); the
magnetic assembler carries exactly six (Kirchhoff data, Neumann disk,
transport and data sphere in direct and image routes) - no source or
wall-trace terms arise there.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field as dfield

import numpy as np

from . import _dynkernels as dk
from .domain import BOTH_SPECIES, Species
from .dyninit import PerturbationInit
from .errors import HistoryUnderrun, QuadratureFailure
from .kernels import kernel_K
from .mesh import Mesh3
from .steady import MomentumQuad, SteadyState, momentum_cutoff

E_TERMS = (
    "hom", "b1_dir", "b1_img", "b2_dir", "b2_img", "T_dir", "T_img",
    "Sacc_dir", "Sacc_img", "Sst_dir", "Sst_img", "add3",
)
B_TERMS = ("hom", "neu", "T_dir", "T_img", "b1_dir", "b1_img")


@dataclass
class DynConfig:
    dt: float = 0.05
    t_end: float = 10.0
    cloud_n: int = 500
    n_vr: int = 16
    n_vtheta: int = 8
    n_vphi: int = 16
    vmax: float = None
    moment_stride: int = 2
    trace_dt: float = 0.02
    duh_stride: int = 4
    prune_log: float = 26.0
    n_theta_s: int = 8
    n_phi_s: int = 16
    n_rpan: int = 10
    n_gl_r: int = 3
    n_theta_v: int = 3
    n_phi_v: int = 8
    n_rho_b: int = 12
    n_phi_b: int = 12
    z_field_cut: float = None
    boundary_stride: int = 2
    seed: int = 77
    tol_x: float = 1e-10
    diag_every: int = 5
    diag_points: int = 32

    def resolve(self, params):
        if self.vmax is None:
            self.vmax = momentum_cutoff(0.25 * params.beta, params.min_mass, tol=1e-7)
        return self


class HistoryBuffer:
    """Time-stamped snapshots of everything the retarded integrals read."""

    def __init__(self, mesh, n_steps, dt):
        self.mesh = mesh
        self.dt = dt
        n = tuple(mesh.shape)
        self.M0 = np.zeros((n_steps + 1, 2) + n)
        self.M1 = np.zeros((n_steps + 1, 2) + n + (3,))
        self.E = np.zeros((n_steps + 1,) + n + (3,))
        self.B = np.zeros((n_steps + 1,) + n + (3,))
        self.Mb0 = np.zeros((n_steps + 1, 2, n[0], n[1]))
        self.Mb1 = np.zeros((n_steps + 1, 2, n[0], n[1], 3))
        self.n_filled = 0

    @property
    def newest_time(self):
        return (self.n_filled - 1) * self.dt

    def require(self, t):
        if self.n_filled == 0 or t > self.newest_time + self.dt + 1e-12:
            raise HistoryUnderrun(
                f"history covers up to t={self.newest_time:.4g}, requested {t:.4g}"
            )

    def rho_J(self, k):
        """Charge and current grids of snapshot k."""
        rho = self.M0[k, 0] - self.M0[k, 1]
        J = self.M1[k, 0] - self.M1[k, 1]
        return rho, J


def _refine(coarse_axes, fine_axes, vals):
    """Separable linear refinement of a grid sampled on coarse axes."""
    out = vals
    for ax in range(3):
        ca, fa = coarse_axes[ax], fine_axes[ax]
        if len(ca) == len(fa) and np.allclose(ca, fa):
            continue
        idx = np.clip(np.searchsorted(ca, fa) - 1, 0, len(ca) - 2)
        w = (fa - ca[idx]) / (ca[idx + 1] - ca[idx])
        w = np.clip(w, 0.0, 1.0)
        mo = np.moveaxis(out, ax, 0)
        ref = mo[idx] * (1 - w).reshape((-1,) + (1,) * (mo.ndim - 1)) + mo[idx + 1] * w.reshape(
            (-1,) + (1,) * (mo.ndim - 1)
        )
        out = np.moveaxis(ref, 0, ax)
    return out


class DynamicState:
    """One running perturbation simulation."""

    def __init__(self, steady, init, cfg):
        self.steady = steady
        self.init = init
        self.cfg = cfg.resolve(steady.params)
        self.params = steady.params
        self.mesh = steady.mesh
        self.n_steps = int(round(cfg.t_end / cfg.dt))
        self.hist = HistoryBuffer(self.mesh, self.n_steps, cfg.dt)
        self.vquad = MomentumQuad.build(cfg.n_vr, cfg.n_vtheta, cfg.n_vphi, cfg.vmax)
        self.spec = self.mesh.pack()
        ax = self.mesh.axes()
        self.axes = ax
        stride = max(cfg.moment_stride, 1)
        self.sub_axes = [a[::stride] if (len(a) - 1) % stride == 0 else np.unique(np.append(a[::stride], a[-1])) for a in ax]
        bstride = max(cfg.boundary_stride, 1)
        self.bsub_axes = [self.sub_axes[0], self.sub_axes[1]]
        # static steady-state inputs of the assembler
        self.Estg = np.ascontiguousarray(steady.Egrid)
        self.Bstg = np.ascontiguousarray(steady.Bgrid)
        M0st, M1st = steady.moment_grids(self.vquad)
        self.M0st = np.stack([M0st["PLUS"], M0st["MINUS"]])
        self.M1st = np.stack([M1st["PLUS"], M1st["MINUS"]])
        self.initpk = init.pack
        self.prof_p = steady.profile.pack(Species.PLUS)
        self.prof_m = steady.profile.pack(Species.MINUS)
        p = self.params
        self.Eext = np.asarray(p.ext_E, dtype=float)
        self.Bext = np.asarray(p.ext_B, dtype=float)
        # quadrature reference nodes
        self.glx_s, self.glw_s = np.polynomial.legendre.leggauss(cfg.n_theta_s)
        self.glx_r, self.glw_r = np.polynomial.legendre.leggauss(cfg.n_gl_r)
        self.glx_v, self.glw_v = np.polynomial.legendre.leggauss(cfg.n_theta_v)
        self.glx_b, self.glw_b = np.polynomial.legendre.leggauss(cfg.n_rho_b)
        lo, hi = self.mesh.lo, self.mesh.hi
        self.r_max = math.sqrt(
            max(abs(lo[0]), hi[0]) ** 2 + max(abs(lo[1]), hi[1]) ** 2
        ) + 2 * hi[2]
        self.z_cut = cfg.z_field_cut if cfg.z_field_cut is not None else hi[2]
        # sample cloud for the decay series
        rng = np.random.default_rng(cfg.seed)
        n = cfg.cloud_n
        R0 = init.R0
        self.Xc = np.empty((n, 3))
        self.Xc[:, 0] = rng.uniform(-R0, R0, n)
        self.Xc[:, 1] = rng.uniform(-R0, R0, n)
        self.Xc[:, 2] = rng.uniform(0.0, R0, n) + 1e-3
        vscale = 2.0 / math.sqrt(init.kappa)
        self.Vc = rng.normal(0.0, vscale, (n, 3))
        self.sp_c = (rng.random(n) < 0.5).astype(np.int64)
        self.series = DecaySeries()
        self._sub_prev = None
        self._sub_cur = None
        self.k = -1
        self._seed_initial()

    # -- helpers -------------------------------------------------------
    def _hist_args(self):
        h = self.hist
        return (
            self.spec, h.M0, h.M1, h.E, h.B, h.n_filled, h.dt,
            self.Estg, self.Bstg, self.M0st, self.M1st, h.Mb0, h.Mb1,
            self.initpk, self.params.m_plus, self.params.m_minus, self.params.g,
            self.Eext, self.Bext,
        )

    def _quad_args(self):
        c = self.cfg
        return (
            self.glx_s, self.glw_s, c.n_phi_s,
            self.glx_r, self.glw_r, c.n_rpan,
            self.glx_v, self.glw_v, c.n_phi_v,
            self.glx_b, self.glw_b, c.n_phi_b,
            self.r_max,
        )

    def _f_args(self):
        h = self.hist
        return (
            self.spec, h.E, h.B, h.n_filled, h.dt, self.Estg, self.Bstg,
            self.Eext, self.Bext, self.initpk, self.prof_p, self.prof_m,
            self.cfg.trace_dt, self.cfg.duh_stride, self.cfg.tol_x, 2.0 * 16.0 / 5.0,
        )

    def assemble_terms(self, t, x):
        """Per-term field values at one point; dicts keyed by term name."""
        self.hist.require(t)
        Et = np.empty((12, 3))
        Bt = np.empty((6, 3))
        dk.assemble_point(
            t, x[0], x[1], x[2], *self._hist_args(), *self._quad_args(), Et, Bt
        )
        return (
            {name: Et[i].copy() for i, name in enumerate(E_TERMS)},
            {name: Bt[i].copy() for i, name in enumerate(B_TERMS)},
        )

    def assemble_E(self, i, t, x):
        """Perturbation electric-field component i at (t, x)."""
        Et, _ = self.assemble_terms(t, x)
        return float(sum(v[i] for v in Et.values()))

    def assemble_B(self, i, t, x):
        Et, Bt = self.assemble_terms(t, x)
        return float(sum(v[i] for v in Bt.values()))

    def eval_f(self, species, t, x, v):
        """Mild-form distribution perturbation at (t, x, v)."""
        self.hist.require(t)
        sp = 0 if species is Species.PLUS else 1
        m = self.params.mass(species)
        return float(
            dk.eval_f_point(
                sp, t, x[0], x[1], x[2], v[0], v[1], v[2], m, self.params.g,
                *self._f_args(),
            )
        )

    # -- stepping ------------------------------------------------------
    def _seed_initial(self):
        """Snapshot 0: analytic initial data on the mesh."""
        h = self.hist
        ax = self.axes
        X, Y, Z = np.meshgrid(*ax, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
        m0 = np.zeros((2,) + tuple(self.mesh.shape))
        m1 = np.zeros((2,) + tuple(self.mesh.shape) + (3,))
        E0 = np.zeros(tuple(self.mesh.shape) + (3,))
        B0 = np.zeros(tuple(self.mesh.shape) + (3,))
        for idx, p in enumerate(pts):
            i0, i1, i2 = np.unravel_index(idx, self.mesh.shape)
            m8 = dk.init_f_moments(self.initpk, p[0], p[1], p[2])
            m0[0, i0, i1, i2] = m8[0]
            m1[0, i0, i1, i2] = m8[1:4]
            m0[1, i0, i1, i2] = m8[4]
            m1[1, i0, i1, i2] = m8[5:8]
            E0[i0, i1, i2] = self.init.field(0, p)
            B0[i0, i1, i2] = self.init.field(1, p)
        h.M0[0] = m0
        h.M1[0] = m1
        h.E[0] = E0
        h.B[0] = B0
        # wall-trace moments of the initial data (outgoing half)
        vn = self.vquad.nodes
        vw = self.vquad.weights
        neg = vn[:, 2] < 0
        c = self.init.center
        reach2 = self.init.R0**2 - c[2] ** 2
        for sp, spn in enumerate((Species.PLUS, Species.MINUS)):
            if reach2 <= 0:
                break
            m = self.params.mass(spn)
            for i0, x0 in enumerate(ax[0]):
                for i1, x1 in enumerate(ax[1]):
                    if (x0 - c[0]) ** 2 + (x1 - c[1]) ** 2 >= reach2:
                        continue
                    vals = np.array(
                        [
                            dk.init_f_value(self.initpk, sp, x0, x1, 0.0, v[0], v[1], v[2])
                            for v in vn[neg]
                        ]
                    )
                    if not np.any(vals):
                        continue
                    w = vw[neg] * vals
                    h.Mb0[0, sp, i0, i1] = w.sum()
                    ve = np.sqrt(m * m + np.sum(vn[neg] ** 2, axis=1))
                    h.Mb1[0, sp, i0, i1] = (w[:, None] * vn[neg] / ve[:, None]).sum(axis=0)
        h.n_filled = 1
        # submesh moments of the initial data (for the continuity residual)
        sax = self.sub_axes
        sM0 = np.zeros((2, len(sax[0]), len(sax[1]), len(sax[2])))
        sM1 = np.zeros((2, len(sax[0]), len(sax[1]), len(sax[2]), 3))
        for i0, x0 in enumerate(sax[0]):
            for i1, x1 in enumerate(sax[1]):
                for i2, x2 in enumerate(sax[2]):
                    m8 = dk.init_f_moments(self.initpk, x0, x1, x2)
                    sM0[0, i0, i1, i2] = m8[0]
                    sM1[0, i0, i1, i2] = m8[1:4]
                    sM0[1, i0, i1, i2] = m8[4]
                    sM1[1, i0, i1, i2] = m8[5:8]
        self._sub_cur = (sM0, sM1)
        self.k = 0
        self._record_series(0.0)

    def advance(self):
        """One step: new moment snapshot, then new field grids."""
        cfg = self.cfg
        h = self.hist
        k1 = self.k + 1
        if k1 > self.n_steps:
            raise HistoryUnderrun("run past configured t_end")
        t1 = k1 * cfg.dt
        sax = self.sub_axes
        M0s, M1s = dk.f_moments_submesh(
            t1, sax[0], sax[1], sax[2], self.vquad.nodes, self.vquad.weights,
            self.params.m_plus, self.params.m_minus, self.params.g, self.params.beta,
            cfg.prune_log, *self._f_args(),
        )
        self._sub_prev = self._sub_cur
        self._sub_cur = (M0s, M1s)
        for sp in range(2):
            h.M0[k1, sp] = _refine(sax, self.axes, M0s[sp])
            for c in range(3):
                h.M1[k1, sp, :, :, :, c] = _refine(sax, self.axes, M1s[sp, :, :, :, c])
        bax = self.bsub_axes
        Mb0s, Mb1s = dk.f_boundary_moments(
            t1, bax[0], bax[1], self.vquad.nodes, self.vquad.weights,
            self.params.m_plus, self.params.m_minus, self.params.g, self.params.beta,
            cfg.prune_log, *self._f_args(),
        )
        for sp in range(2):
            h.Mb0[k1, sp] = _refine_2d(bax, self.axes[:2], Mb0s[sp])
            for c in range(3):
                h.Mb1[k1, sp, :, :, c] = _refine_2d(bax, self.axes[:2], Mb1s[sp, :, :, c])
        # moments now reach k1; the field stacks lag one step - extend them
        # by zeroth order so retarded lookups near the cone tip stay sane
        h.E[k1] = h.E[k1 - 1]
        h.B[k1] = h.B[k1 - 1]
        Eg, Bg = dk.assemble_grid(
            t1, self.axes[0], self.axes[1], self.axes[2], self.z_cut,
            self.spec, h.M0, h.M1, h.E, h.B, h.n_filled + 1, h.dt,
            self.Estg, self.Bstg, self.M0st, self.M1st, h.Mb0, h.Mb1,
            self.initpk, self.params.m_plus, self.params.m_minus, self.params.g,
            self.Eext, self.Bext, *self._quad_args(),
        )
        h.E[k1] = Eg
        h.B[k1] = Bg
        h.n_filled = k1 + 1
        self.k = k1
        self._record_series(t1)
        return t1

    def _record_series(self, t):
        h = self.hist
        k = self.k
        fv = dk.f_cloud_eval(
            t, self.Xc, self.Vc, self.sp_c,
            self.params.m_plus, self.params.m_minus, self.params.g, *self._f_args(),
        )
        beta = self.params.beta
        masses = np.where(self.sp_c == 0, self.params.m_plus, self.params.m_minus)
        v0 = np.sqrt(masses**2 + np.sum(self.Vc**2, axis=1))
        logw = 0.5 * beta * np.hypot(self.Xc[:, 0], self.Xc[:, 1]) + 0.25 * beta * (
            v0 + masses * self.params.g * self.Xc[:, 2]
        )
        sup_f = float(np.max(np.exp(np.minimum(logw, 600.0)) * np.abs(fv)))
        supE = float(np.max(np.linalg.norm(h.E[k], axis=-1)))
        supB = float(np.max(np.linalg.norm(h.B[k], axis=-1)))
        charge = self.charge_residual(k) if k >= 1 else 0.0
        terms = None
        if self.cfg.diag_every and k % self.cfg.diag_every == 0:
            terms = self._term_sups(t)
        self.series.append(t, sup_f, supE, supB, charge, terms)

    def _term_sups(self, t):
        nE = len(E_TERMS)
        supsE = np.zeros(nE)
        supsB = np.zeros(len(B_TERMS))
        Et = np.empty((12, 3))
        Bt = np.empty((6, 3))
        for p in self.Xc[: self.cfg.diag_points]:
            dk.assemble_point(
                t, p[0], p[1], p[2], *self._hist_args(), *self._quad_args(), Et, Bt
            )
            supsE = np.maximum(supsE, np.linalg.norm(Et, axis=1))
            supsB = np.maximum(supsB, np.linalg.norm(Bt, axis=1))
        return {
            "E": {n: float(v) for n, v in zip(E_TERMS, supsE)},
            "B": {n: float(v) for n, v in zip(B_TERMS, supsB)},
        }

    def charge_residual(self, k):
        """Relative continuity residual between the last two moment sweeps.

        Time difference of the charge grid against the spatial divergence
        of the midpoint current grid on the raw submesh (no refinement
        noise); the scale is the sup of the two individually large terms.
        """
        if self._sub_prev is None:
            return 0.0
        M0a, M1a = self._sub_prev
        M0b, M1b = self._sub_cur
        rho0 = M0a[0] - M0a[1]
        rho1 = M0b[0] - M0b[1]
        Jm = 0.5 * ((M1a[0] - M1a[1]) + (M1b[0] - M1b[1]))
        dt = self.hist.dt
        dtrho = (rho1 - rho0) / dt
        sax = self.sub_axes
        div = (
            np.gradient(Jm[..., 0], sax[0], axis=0)
            + np.gradient(Jm[..., 1], sax[1], axis=1)
            + np.gradient(Jm[..., 2], sax[2], axis=2)
        )
        resid = (dtrho + div)[1:-1, 1:-1, 1:-1]
        scale = float(np.max(np.abs(dtrho))) + float(np.max(np.abs(div))) + 1e-300
        return float(np.max(np.abs(resid))) / scale


def _refine_2d(coarse_axes, fine_axes, vals):
    out = vals
    for ax in range(2):
        ca, fa = coarse_axes[ax], fine_axes[ax]
        if len(ca) == len(fa) and np.allclose(ca, fa):
            continue
        idx = np.clip(np.searchsorted(ca, fa) - 1, 0, len(ca) - 2)
        w = np.clip((fa - ca[idx]) / (ca[idx + 1] - ca[idx]), 0.0, 1.0)
        mo = np.moveaxis(out, ax, 0)
        ref = mo[idx] * (1 - w).reshape((-1,) + (1,) * (mo.ndim - 1)) + mo[idx + 1] * w.reshape(
            (-1,) + (1,) * (mo.ndim - 1)
        )
        out = np.moveaxis(ref, 0, ax)
    return out


@dataclass
class DecaySeries:
    """Per-step sup norms and their (1 + t)-weighted products."""

    t: list = dfield(default_factory=list)
    sup_f_weighted: list = dfield(default_factory=list)
    sup_E: list = dfield(default_factory=list)
    sup_B: list = dfield(default_factory=list)
    charge_residual: list = dfield(default_factory=list)
    term_sups: list = dfield(default_factory=list)

    def append(self, t, sup_f, supE, supB, charge, terms):
        self.t.append(t)
        self.sup_f_weighted.append(sup_f)
        self.sup_E.append(supE)
        self.sup_B.append(supB)
        self.charge_residual.append(charge)
        if terms is not None:
            self.term_sups.append({"t": t, **terms})

    def weighted_products(self):
        t = np.asarray(self.t)
        return {
            "t": t,
            "f": (1 + t) * np.asarray(self.sup_f_weighted),
            "E": (1 + t) * np.asarray(self.sup_E),
            "B": (1 + t) * np.asarray(self.sup_B),
        }

    def summary(self):
        w = self.weighted_products()
        return {
            "sup_(1+t)_f_weighted": float(np.max(w["f"])) if len(self.t) else 0.0,
            "sup_(1+t)_E": float(np.max(w["E"])) if len(self.t) else 0.0,
            "sup_(1+t)_B": float(np.max(w["B"])) if len(self.t) else 0.0,
            "max_charge_residual": float(np.max(self.charge_residual)) if len(self.t) else 0.0,
            "n_steps": len(self.t) - 1,
        }

    def to_csv(self, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as f:
            wtr = csv.writer(f)
            wtr.writerow(
                ["t", "sup_f_weighted", "sup_E", "sup_B",
                 "onept_f", "onept_E", "onept_B", "charge_residual"]
            )
            for i, t in enumerate(self.t):
                wtr.writerow(
                    [
                        f"{t:.17g}", f"{self.sup_f_weighted[i]:.17g}",
                        f"{self.sup_E[i]:.17g}", f"{self.sup_B[i]:.17g}",
                        f"{(1 + t) * self.sup_f_weighted[i]:.17g}",
                        f"{(1 + t) * self.sup_E[i]:.17g}",
                        f"{(1 + t) * self.sup_B[i]:.17g}",
                        f"{self.charge_residual[i]:.17g}",
                    ]
                )
        os.replace(tmp, path)

    def terms_to_csv(self, path):
        if not self.term_sups:
            return
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        cols = ["t"] + [f"E_{n}" for n in E_TERMS] + [f"B_{n}" for n in B_TERMS]
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as f:
            wtr = csv.writer(f)
            wtr.writerow(cols)
            for rec in self.term_sups:
                row = [f"{rec['t']:.17g}"]
                row += [f"{rec['E'][n]:.17g}" for n in E_TERMS]
                row += [f"{rec['B'][n]:.17g}" for n in B_TERMS]
                wtr.writerow(row)
        os.replace(tmp, path)


def run_dynamic(steady, init, cfg, progress=None, sweeps=1):
    """March the perturbation to t_end; returns (DynamicState, DecaySeries).

    With sweeps > 1 the whole window is re-run using the previous sweep's
    field history as the lagged input, and the inter-sweep sup difference
    of the field stacks is recorded in state.sweep_diffs.
    """
    state = DynamicState(steady, init, cfg)
    for k in range(state.n_steps):
        t = state.advance()
        if progress:
            progress(k + 1, state.n_steps, t)
    if sweeps > 1:
        prev = (state.hist.E.copy(), state.hist.B.copy())
        diffs = []
        for s in range(1, sweeps):
            nxt = DynamicState(steady, init, cfg)
            # feed the previous sweep's fields as the lagged input
            nxt.hist.E[:] = prev[0]
            nxt.hist.B[:] = prev[1]
            nxt.hist.n_filled = 1
            for k in range(nxt.n_steps):
                nxt.advance()
            d = max(
                float(np.max(np.abs(nxt.hist.E - prev[0]))),
                float(np.max(np.abs(nxt.hist.B - prev[1]))),
            )
            diffs.append(d)
            prev = (nxt.hist.E.copy(), nxt.hist.B.copy())
            state = nxt
        state.sweep_diffs = diffs
    return state, state.series


def rrcn_diagnostic(params, init, t, x, n_theta=24, n_phi=48, n_v=16):
    """Initial radiation-neutrality integral over the sphere |y - x| = t.

    Max absolute entry of int dS int dv (K+ f+(0) - K- f-(0)); data below
    the wall contribute nothing.
    """
    if t < 1.0:
        raise ValueError("diagnostic defined for t >= 1")
    from .greens import sphere_nodes

    omegas, weights = sphere_nodes(n_theta, n_phi)
    x = np.asarray(x, dtype=float)
    y = x[None, :] + t * omegas
    above = y[:, 2] >= 0.0
    if not np.any(above):
        return 0.0
    # momentum nodes covering both drifting Gaussians
    half = 4.5 / math.sqrt(init.kappa)
    gx, gw = np.polynomial.legendre.leggauss(n_v)
    drift_span = max(
        np.linalg.norm(init.drift_plus), np.linalg.norm(init.drift_minus)
    )
    pts = (half + drift_span) * gx
    wts = (half + drift_span) * gw
    V = np.stack(np.meshgrid(pts, pts, pts, indexing="ij"), axis=-1).reshape(-1, 3)
    W = (wts[:, None, None] * wts[None, :, None] * wts[None, None, :]).ravel()
    total = np.zeros((3, 3))
    for yi, oi, wi in zip(y[above], omegas[above], weights[above]):
        acc = np.zeros((3, 3))
        for sp, spn, sgn in ((0, Species.PLUS, 1.0), (1, Species.MINUS, -1.0)):
            m = params.mass(spn)
            fv = np.array(
                [dk.init_f_value(init.pack, sp, yi[0], yi[1], yi[2], v[0], v[1], v[2]) for v in V]
            )
            nz = fv != 0.0
            if not np.any(nz):
                continue
            K = kernel_K(m, oi, V[nz])
            acc += sgn * np.sum((W[nz] * fv[nz])[:, None, None] * K, axis=0)
        total += wi * t * t * acc
    return float(np.max(np.abs(total)))
