"""LCL filter + Thevenin grid: parameters, equilibrium and linearization.

All quantities are per unit except time (s) and angular frequencies
(rad/s). The circuit is written in the grid synchronous frame with the
grid voltage on the d-axis::

    L_f/w_n di/dt   = e - v - R_f i - j w_g L_f i
    C_f/w_n dv/dt   = i - i_g - j w_g C_f v
    L_g/w_n di_g/dt = v - V_g - R_g i_g - j w_g L_g i_g

with complex dq vectors ``x = x_d + j x_q``. The circuit is linear in
this frame; the only nonlinearities are the measured powers and the
voltage magnitude.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, NumericalFailure
from .poly import Polynomial, RationalFn, StateSpaceModel, ss_to_rational

STATE_NAMES = ("i_d", "i_q", "v_d", "v_q", "i_gd", "i_gq")
OUTPUT_NAMES = ("p", "q", "V")

# Nameplate of the 5 MW PMSG wind turbine.
NAMEPLATE_5MW = dict(S_n=5e6, V_n=690.0, f_n=50.0, L_f=32e-6, C_f=1.6e-3,
                         L_g=60e-6, x_over_r=8.0)


class NonPositiveBase(InvalidInput):
    pass


class NoConvergence(NumericalFailure):
    """Newton iteration budget exhausted; ``best`` holds the best iterate."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class InfeasibleSetpoint(NumericalFailure):
    pass


class ControlLaw(str, enum.Enum):
    DROOP = "droop"
    DROOP_I = "droop-i"

    @classmethod
    def parse(cls, value) -> "ControlLaw":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "-")
        aliases = {"droopi": "droop-i", "droop-i": "droop-i", "droop": "droop"}
        if key not in aliases:
            raise InvalidInput(f"unknown control law {value!r} (droop | droop-i)")
        return cls(aliases[key])


def _bases(S_n, V_n, f_n):
    if min(S_n, V_n, f_n) <= 0:
        raise NonPositiveBase("S_n, V_n and f_n must be positive")
    w_n = 2 * math.pi * f_n
    Z_base = V_n ** 2 / S_n
    return w_n, Z_base, Z_base / w_n, 1.0 / (Z_base * w_n)


def to_per_unit(S_n: float, V_n: float, f_n: float, L_f: float, C_f: float,
                L_g: float, x_over_r: float | None = 8.0, **extra) -> "PlantParams":
    """Convert nameplate values (VA, V line-line RMS, Hz, H, F) to per unit.

    ``Z_base = V_n^2 / S_n``, ``L_base = Z_base / w_n``,
    ``C_base = 1 / (Z_base w_n)``. Remaining keyword arguments (``V_g``,
    ``omega_g``, ``R_f``) pass through unchanged as per-unit values.
    """
    _, _, L_base, C_base = _bases(S_n, V_n, f_n)
    for name, val in (("L_f", L_f), ("C_f", C_f), ("L_g", L_g)):
        if val <= 0:
            raise NonPositiveBase(f"{name} must be positive")
    return PlantParams(S_n=S_n, V_n=V_n, f_n=f_n, L_f=L_f / L_base,
                       C_f=C_f / C_base, L_g=L_g / L_base, x_over_r=x_over_r, **extra)


_W, _Z, _LB, _CB = _bases(5e6, 690.0, 50.0)


@dataclass(frozen=True)
class PlantParams:
    """Per-unit LCL filter and Thevenin grid.

    ``R_g`` follows from ``x_over_r`` when that is set (``R_g = w_g L_g /
    x_over_r``); pass ``x_over_r=None`` to give ``R_g`` directly.
    """

    S_n: float = 5e6
    V_n: float = 690.0
    f_n: float = 50.0
    L_f: float = 32e-6 / _LB
    C_f: float = 1.6e-3 / _CB
    L_g: float = 0.2
    R_f: float = 0.0
    R_g: float | None = None
    x_over_r: float | None = 8.0
    V_g: float = 1.0
    omega_g: float = 1.0

    def __post_init__(self):
        if min(self.L_f, self.C_f, self.L_g) <= 0:
            raise InvalidInput("L_f, C_f and L_g must be positive")
        if self.R_f < 0:
            raise InvalidInput("R_f must be non-negative")
        _bases(self.S_n, self.V_n, self.f_n)
        if self.x_over_r is not None:
            if self.x_over_r <= 0:
                raise InvalidInput("x_over_r must be positive")
            r_g = self.omega_g * self.L_g / self.x_over_r
            if self.R_g is not None and not math.isclose(self.R_g, r_g, rel_tol=1e-9, abs_tol=1e-15):
                raise InvalidInput(f"R_g={self.R_g} inconsistent with x_over_r (expects {r_g})")
            object.__setattr__(self, "R_g", r_g)
        elif self.R_g is None:
            object.__setattr__(self, "R_g", 0.0)
        if self.R_g < 0:
            raise InvalidInput("R_g must be non-negative")

    @property
    def omega_n(self) -> float:
        return 2 * math.pi * self.f_n

    @property
    def lossless(self) -> bool:
        return self.R_f == 0 and self.R_g == 0

    def replace(self, **changes) -> "PlantParams":
        """Copy with changes; ``R_g`` is re-derived unless given explicitly."""
        if self.x_over_r is not None and "R_g" not in changes:
            changes["R_g"] = None
        return dataclasses.replace(self, **changes)

    def without_losses(self) -> "PlantParams":
        return dataclasses.replace(self, R_f=0.0, R_g=0.0, x_over_r=None)


@dataclass(frozen=True)
class ControlParams:
    """Swing-equation active power loop and droop / droop-I reactive loop."""

    law: ControlLaw = ControlLaw.DROOP
    H: float = 0.5
    D_p: float = 50.0
    D_q: float = 10.0
    T_q: float = 0.051
    k_pq: float = 0.0
    k_iq: float = 4.0
    P_st: float = 0.5
    Q_st: float = 0.0
    V_st: float = 1.0
    omega_st: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "law", ControlLaw.parse(self.law))
        if self.H <= 0:
            raise InvalidInput("H must be positive")
        if self.D_q <= 0:
            raise InvalidInput("D_q must be positive")
        if self.law is ControlLaw.DROOP and self.T_q <= 0:
            raise InvalidInput("T_q must be positive under droop control")
        if self.law is ControlLaw.DROOP_I and self.k_iq <= 0:
            raise InvalidInput("k_iq must be positive under droop-I control")

    def replace(self, **changes) -> "ControlParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class OperatingPoint:
    delta: float
    E: float
    e_d: float
    e_q: float
    v_d: float
    v_q: float
    i_d: float
    i_q: float
    i_gd: float
    i_gq: float
    p: float
    q: float
    V: float
    residual: float

    @property
    def state(self) -> np.ndarray:
        return np.array([self.i_d, self.i_q, self.v_d, self.v_q, self.i_gd, self.i_gq])

    @property
    def v_conv(self) -> tuple[float, float]:
        """Capacitor voltage in the frame aligned with the inverter voltage."""
        c, s = math.cos(self.delta), math.sin(self.delta)
        return self.v_d * c + self.v_q * s, -self.v_d * s + self.v_q * c


@dataclass(frozen=True)
class ResonanceProfile:
    omega_LC: float
    omega_LCL: float
    omega_1: float
    omega_2: float
    omega_Lg: float


def resonance_frequencies(pp: PlantParams) -> ResonanceProfile:
    """LC / LCL resonances and their dq-frame images, all in rad/s."""
    wn = pp.omega_n
    w_lc = wn * math.sqrt(1.0 / (pp.L_f * pp.C_f))
    w_lcl = wn * math.sqrt((pp.L_f + pp.L_g) / (pp.L_f * pp.C_f * pp.L_g))
    w_lg = wn * pp.omega_g
    return ResonanceProfile(w_lc, w_lcl, w_lcl - w_lg, w_lcl + w_lg, w_lg)


def circuit_matrices(pp: PlantParams):
    """``x' = A x + B e + b_vg * V_g`` for the six circuit states (rad/s units)."""
    wn, wg = pp.omega_n, pp.omega_g
    I2 = np.eye(2)
    J = np.array([[0.0, -1.0], [1.0, 0.0]])  # multiplication by j
    A = np.zeros((6, 6))
    A[0:2, 0:2] = wn / pp.L_f * (-pp.R_f * I2 - wg * pp.L_f * J)
    A[0:2, 2:4] = -wn / pp.L_f * I2
    A[2:4, 0:2] = wn / pp.C_f * I2
    A[2:4, 2:4] = -wn * wg * J
    A[2:4, 4:6] = -wn / pp.C_f * I2
    A[4:6, 2:4] = wn / pp.L_g * I2
    A[4:6, 4:6] = wn / pp.L_g * (-pp.R_g * I2 - wg * pp.L_g * J)
    B = np.zeros((6, 2))
    B[0:2, :] = wn / pp.L_f * I2
    b_vg = np.zeros(6)
    b_vg[4] = -wn / pp.L_g
    return A, B, b_vg


def output_rows(op: OperatingPoint) -> np.ndarray:
    """Jacobian of ``(p, q, V)`` with respect to the circuit states."""
    C = np.zeros((3, 6))
    C[0, 2:6] = [op.i_gd, op.i_gq, op.v_d, op.v_q]
    C[1, 2:6] = [-op.i_gq, op.i_gd, op.v_q, -op.v_d]
    C[2, 2:4] = [op.v_d / op.V, op.v_q / op.V]
    return C


def solve_operating_point(pp: PlantParams, cp: ControlParams, tol: float = 1e-12,
                          max_iter: int = 50) -> OperatingPoint:
    """Steady state of circuit, swing equation and reactive-power law.

    The circuit is linear, so for a given inverter voltage ``(E, delta)``
    it is solved exactly; Newton iterates on ``(E, delta)`` only, starting
    from ``E = 1``, ``delta = 0``. A full step that increases the residual
    is halved (up to eight times).
    """
    A, B, b_vg = circuit_matrices(pp)
    A_inv_B = np.linalg.solve(A, B)
    x_grid = -np.linalg.solve(A, b_vg * pp.V_g)
    p_target = cp.P_st - cp.D_p * (pp.omega_g - cp.omega_st)

    def evaluate(z):
        E, d = z
        c, s = math.cos(d), math.sin(d)
        x = x_grid - A_inv_B @ (E * np.array([c, s]))
        dx = -A_inv_B @ np.array([[c, -E * s], [s, E * c]])  # d x / d(E, delta)
        v, ig = x[2:4], x[4:6]
        p = v @ ig
        q = v[1] * ig[0] - v[0] * ig[1]
        V = math.hypot(*v)
        dp = ig @ dx[2:4] + v @ dx[4:6]
        dqv = np.array([-ig[1], ig[0], v[1], -v[0]]) @ dx[2:6]
        dV = v @ dx[2:4] / V
        if cp.law is ControlLaw.DROOP:
            f2 = E - (cp.V_st + (cp.Q_st - q) / cp.D_q)
            df2 = np.array([1.0, 0.0]) + dqv / cp.D_q
        else:
            f2 = V - (cp.V_st + (cp.Q_st - q) / cp.D_q)
            df2 = dV + dqv / cp.D_q
        F = np.array([p - p_target, f2])
        return F, np.vstack((dp, df2)), x, (p, q, V)

    z = np.array([1.0, 0.0])
    F, Jac, x, out = evaluate(z)
    best = (np.max(np.abs(F)), z)
    for _ in range(max_iter):
        if np.max(np.abs(F)) < tol:
            break
        try:
            step = np.linalg.solve(Jac, -F)
        except np.linalg.LinAlgError as exc:
            raise InfeasibleSetpoint("singular Newton Jacobian") from exc
        lam = 1.0
        for _ in range(8):
            zn = z + lam * step
            Fn, Jn, xn, outn = evaluate(zn)
            if np.all(np.isfinite(Fn)) and np.max(np.abs(Fn)) <= np.max(np.abs(F)):
                break
            lam *= 0.5
        if not np.all(np.isfinite(Fn)) or abs(zn[1]) > 10:
            raise InfeasibleSetpoint("Newton iteration diverged")
        z, F, Jac, x, out = zn, Fn, Jn, xn, outn
        if np.max(np.abs(F)) < best[0]:
            best = (np.max(np.abs(F)), z)
    E, d = z
    e = E * np.array([math.cos(d), math.sin(d)])
    p, q, V = out
    op = OperatingPoint(delta=float(d), E=float(E), e_d=float(e[0]), e_q=float(e[1]),
                        v_d=float(x[2]), v_q=float(x[3]), i_d=float(x[0]), i_q=float(x[1]),
                        i_gd=float(x[4]), i_gq=float(x[5]), p=float(p), q=float(q),
                        V=float(V), residual=0.0)
    residual = float(max(np.max(np.abs(F)), np.max(np.abs(circuit_residual(pp, op)))))
    op = dataclasses.replace(op, residual=residual)
    if residual > 1e-10:
        raise NoConvergence(f"operating point residual {residual:.2e}", best=op)
    if abs(d) > math.pi / 2:
        raise InfeasibleSetpoint(f"load angle {d:.3f} rad beyond pi/2")
    return op


def circuit_residual(pp: PlantParams, op: OperatingPoint) -> np.ndarray:
    """Per-unit residuals of the six circuit equations at ``op``."""
    wg = pp.omega_g
    i = complex(op.i_d, op.i_q)
    v = complex(op.v_d, op.v_q)
    ig = complex(op.i_gd, op.i_gq)
    e = complex(op.e_d, op.e_q)
    r = [e - v - pp.R_f * i - 1j * wg * pp.L_f * i,
         i - ig - 1j * wg * pp.C_f * v,
         v - pp.V_g - pp.R_g * ig - 1j * wg * pp.L_g * ig]
    return np.array([c for z in r for c in (z.real, z.imag)])


@dataclass(frozen=True, eq=False)
class LinearPlant:
    """Small-signal circuit model around an operating point.

    ``ss`` maps ``(de_d, de_q)`` to ``(dp, dq, dV)``. It has six circuit
    states plus any active-damping filter states added by
    :func:`gfmstab.loops.apply_ad`.
    """

    pp: PlantParams
    op: OperatingPoint
    ss: StateSpaceModel
    G_pdelta: RationalFn
    G_qE: RationalFn
    G_VE: RationalFn
    det_A: Polynomial
    det_B: Polynomial
    resonance: ResonanceProfile
    ad: tuple = field(default=())

    @property
    def den(self) -> Polynomial:
        return self.G_qE.den

    def poles(self) -> np.ndarray:
        return self.G_qE.poles(scale=self.resonance.omega_LCL)

    @property
    def e_direction(self) -> np.ndarray:
        return np.array([math.cos(self.op.delta), math.sin(self.op.delta)])

    @property
    def delta_direction(self) -> np.ndarray:
        return self.op.E * np.array([-math.sin(self.op.delta), math.cos(self.op.delta)])


def lossless_determinants(pp: PlantParams):
    """``det(A)`` and ``det(B)`` of the 2x2 impedance-like operators, in s (rad/s).

    ``det(A) = s^2 / w_n^2 + w_g^2`` and
    ``det(B) = L_g^2 / w_LC^4 (s^2 + w_1^2)(s^2 + w_2^2)``.
    """
    rp = resonance_frequencies(pp)
    det_a = Polynomial([pp.omega_g ** 2, 0.0, 1.0 / pp.omega_n ** 2])
    k = pp.L_g ** 2 / rp.omega_LC ** 4
    det_b = k * Polynomial([rp.omega_1 ** 2, 0, 1]) * Polynomial([rp.omega_2 ** 2, 0, 1])
    return det_a, det_b


def siso_channels(pp: PlantParams, op: OperatingPoint, ss: StateSpaceModel):
    """Extract ``G_pdelta``, ``G_qE`` and ``G_VE`` from a plant realization."""
    d = op.delta
    e_dir = np.array([math.cos(d), math.sin(d)])
    d_dir = op.E * np.array([-math.sin(d), math.cos(d)])
    scale = resonance_frequencies(pp).omega_LCL
    B2 = np.column_stack((ss.B @ e_dir, ss.B @ d_dir))
    tf = ss_to_rational(StateSpaceModel(ss.A, B2, ss.C), scale=scale)
    return tf[0][1], tf[1][0], tf[2][0]


def linearize(pp: PlantParams, op: OperatingPoint) -> LinearPlant:
    """Jacobian of the circuit and output equations at ``op``.

    The inverter-voltage perturbation is split into magnitude,
    ``de = dE [cos d0, sin d0]``, and angle, ``de = E0 [-sin d0, cos d0] dd``.
    """
    if op.residual > 1e-8:
        raise InvalidInput(f"operating point residual {op.residual:.1e} too large")
    A, B, _ = circuit_matrices(pp)
    ss = StateSpaceModel(A, B, output_rows(op))
    g_pd, g_qe, g_ve = siso_channels(pp, op, ss)
    det_a, det_b = lossless_determinants(pp)
    return LinearPlant(pp=pp, op=op, ss=ss, G_pdelta=g_pd, G_qE=g_qe, G_VE=g_ve,
                       det_A=det_a, det_B=det_b, resonance=resonance_frequencies(pp))
