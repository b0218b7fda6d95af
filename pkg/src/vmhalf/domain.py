"""Core parameters, phase-space types, weights and relativistic kinematics.

Units: the speed of light and the elementary charge are normalized to 1;
the only free physical parameters are the two species masses, the gravity
g and the inverse temperature beta.  Positions live in the half space
x3 >= 0; gravity points in -e3.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import Grazing, NegativeRadicand, WeightOverflow

#: exclusion tolerance around the grazing set (x3 = 0, v3 = 0)
EPS_GRAZE = 1e-10

#: cap on exponents fed to np.exp inside weight evaluations
EXP_CAP = 700.0


class Species(Enum):
    PLUS = 1
    MINUS = -1

    @property
    def charge(self):
        return float(self.value)


BOTH_SPECIES = (Species.PLUS, Species.MINUS)


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the two-species half-space model.

    ``field_bound`` is the sup-norm cap on the self-consistent (E, B)
    assumed by the trajectory-level bounds; it defaults to min(m) g / 8.
    Optional constant ambient fields ``ext_E``/``ext_B`` must satisfy
    |ext_E3| <= min(m) g / 16 and |ext_B1|, |ext_B2| <= min(m) g / 16.
    """

    m_plus: float = 1.0
    m_minus: float = 1.0
    g: float = 1.0
    beta: float = 2.0
    c0: float | None = None
    field_bound: float | None = None
    ext_E: tuple = (0.0, 0.0, 0.0)
    ext_B: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("m_plus", "m_minus", "g"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.beta <= 1:
            raise ValueError("beta must be > 1")
        object.__setattr__(self, "ext_E", tuple(float(c) for c in self.ext_E))
        object.__setattr__(self, "ext_B", tuple(float(c) for c in self.ext_B))
        if len(self.ext_E) != 3 or len(self.ext_B) != 3:
            raise ValueError("ext_E and ext_B must be 3-vectors")
        mg = self.min_mass * self.g
        if abs(self.ext_E[2]) > mg / 16 + 1e-15:
            raise ValueError("|ext_E3| must be <= min(m) g / 16")
        if max(abs(self.ext_B[0]), abs(self.ext_B[1])) > mg / 16 + 1e-15:
            raise ValueError("|ext_B1|, |ext_B2| must be <= min(m) g / 16")
        if self.field_bound is None:
            object.__setattr__(self, "field_bound", mg / 8.0)
        if self.c0 is None:
            # gravity minus the field caps keeps the boundary force below this
            object.__setattr__(self, "c0", 0.5 * mg)
        if self.c0 <= 0:
            raise ValueError("c0 must be > 0")

    @property
    def min_mass(self):
        return min(self.m_plus, self.m_minus)

    def mass(self, species):
        return self.m_plus if species is Species.PLUS else self.m_minus

    def to_dict(self):
        return {
            "m_plus": self.m_plus,
            "m_minus": self.m_minus,
            "g": self.g,
            "beta": self.beta,
            "c0": self.c0,
            "field_bound": self.field_bound,
            "ext_E": list(self.ext_E),
            "ext_B": list(self.ext_B),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            m_plus=d["m_plus"],
            m_minus=d["m_minus"],
            g=d["g"],
            beta=d["beta"],
            c0=d.get("c0"),
            field_bound=d.get("field_bound"),
            ext_E=tuple(d.get("ext_E", (0.0, 0.0, 0.0))),
            ext_B=tuple(d.get("ext_B", (0.0, 0.0, 0.0))),
        )


@dataclass(frozen=True)
class PhaseState:
    """One phase-space point (t, x, v) of a tagged species."""

    species: Species
    t: float
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if self.t < 0:
            raise ValueError("t must be >= 0")
        if self.x[2] < 0:
            raise ValueError("x3 must be >= 0")


def energy(m, v):
    """Relativistic particle energy sqrt(m^2 + |v|^2) of momentum v."""
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(m * m + v @ v))


def vhat(m, v):
    """Relativistic velocity v / sqrt(m^2 + |v|^2); always |vhat| < 1."""
    v = np.asarray(v, dtype=float)
    return v / np.sqrt(m * m + v @ v)


def energy_arr(m, v):
    """Vectorized ``energy`` for an (..., 3) momentum array."""
    v = np.asarray(v, dtype=float)
    return np.sqrt(m * m + np.sum(v * v, axis=-1))


def vhat_arr(m, v):
    """Vectorized ``vhat`` for an (..., 3) momentum array."""
    v = np.asarray(v, dtype=float)
    return v / energy_arr(m, v)[..., None]


def mechanical_energy(m, g, x, v):
    """Kinetic-plus-gravitational energy v0 + m g x3; conserved when E = 0."""
    return energy(m, v) + m * g * float(np.asarray(x)[2])


def juttner_weight(params, species, x, v, exp_cap=EXP_CAP):
    """Localization weight exp(beta (v0 + m g x3) + beta |x_par| / 2).

    Raises WeightOverflow when the exponent exceeds ``exp_cap``.
    """
    x = np.asarray(x, dtype=float)
    m = params.mass(species)
    expo = params.beta * (energy(m, v) + m * params.g * x[2]) + 0.5 * params.beta * float(
        np.hypot(x[0], x[1])
    )
    if expo > exp_cap:
        raise WeightOverflow(f"weight exponent {expo:.3g} exceeds cap {exp_cap:.3g}")
    return float(np.exp(expo))


def log_juttner_weight(params, species, x, v):
    """Logarithm of ``juttner_weight``; never overflows."""
    x = np.asarray(x, dtype=float)
    m = params.mass(species)
    return params.beta * (energy(m, v) + m * params.g * x[2]) + 0.5 * params.beta * float(
        np.hypot(x[0], x[1])
    )


@dataclass(frozen=True)
class WeightSpec:
    """Parameters of the localization weight for one species."""

    beta: float
    m: float
    g: float

    def log_value(self, x, v):
        x = np.asarray(x, dtype=float)
        return self.beta * (energy(self.m, v) + self.m * self.g * x[2]) + 0.5 * self.beta * float(
            np.hypot(x[0], x[1])
        )

    def value(self, x, v, exp_cap=EXP_CAP):
        lv = self.log_value(x, v)
        if lv > exp_cap:
            raise WeightOverflow(f"weight exponent {lv:.3g} exceeds cap {exp_cap:.3g}")
        return float(np.exp(lv))


def is_grazing(x, m, v, eps=EPS_GRAZE):
    """True within the exclusion tolerance of the grazing set."""
    x = np.asarray(x, dtype=float)
    vh3 = abs(vhat(m, v)[2])
    return x[2] + vh3 < eps


@dataclass
class KineticWeight:
    """Boundary-degenerate weight taming normal derivatives near grazing.

    ``boundary_force3(t, x_par, v)`` must return the third force component
    at the boundary point (x_par, 0) for the species; it is required to
    stay below -c0 < 0 (net downward force).  The squared base weight is

        alpha^2 = x3^2 + vhat3^2 - 2 F3(t, x_par, 0, v) x3 / v0,

    and the bounded variant is alpha_tilde = alpha / sqrt(1 + alpha^2),
    which equals |vhat3| / sqrt(1 + vhat3^2) on the boundary.
    """

    species: Species
    m: float
    c0: float
    boundary_force3: object = None  # callable (t, x_par, v) -> float
    eps_graze: float = EPS_GRAZE

    def alpha_sq(self, t, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        v0 = energy(self.m, v)
        vh3 = v[2] / v0
        f3 = float(self.boundary_force3(t, x[:2], v))
        if -f3 <= self.c0:
            raise NegativeRadicand(
                f"boundary force F3={f3:.3g} does not satisfy -F3 > c0={self.c0:.3g}"
            )
        rad = x[2] * x[2] + vh3 * vh3 - 2.0 * f3 * x[2] / v0
        if rad < 0:
            raise NegativeRadicand(f"alpha^2 = {rad:.3g} < 0")
        return rad

    def alpha_tilde(self, t, x, v):
        if is_grazing(x, self.m, v, self.eps_graze):
            raise Grazing("alpha_tilde requested inside the grazing exclusion zone")
        a2 = self.alpha_sq(t, x, v)
        return float(np.sqrt(a2 / (1.0 + a2)))


def alpha_intro(m, x, v):
    """Alternate boundary weight built from x3^2 + vhat3^2 + x3/(2 v0).

    Used for cross-checks only; the force-based variant above is the one
    entering the trajectory envelope checks.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    v0 = energy(m, v)
    vh3 = v[2] / v0
    bar2 = x[2] * x[2] + vh3 * vh3 + 0.5 * x[2] / v0
    return float(np.sqrt(bar2 / (1.0 + bar2)))


def gravity_boundary_force3(params, species, const_E=(0.0, 0.0, 0.0), const_B=(0.0, 0.0, 0.0)):
    """Boundary F3 evaluator for gravity plus constant fields."""
    m = params.mass(species)
    q = species.charge
    E = np.asarray(const_E, dtype=float) + np.asarray(params.ext_E, dtype=float)
    B = np.asarray(const_B, dtype=float) + np.asarray(params.ext_B, dtype=float)
    g = params.g

    def f3(t, x_par, v):
        vh = vhat(m, v)
        return q * (E[2] + vh[0] * B[1] - vh[1] * B[0]) - m * g

    return f3
