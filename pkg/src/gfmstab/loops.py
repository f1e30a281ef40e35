"""Open-loop models of the power loops and active-damping augmentation.

Every :class:`OlModel` carries two independent descriptions of the same
loop: the rational transfer function ``tf`` assembled from the plant
channels, and a state-space ``realization`` wired from the plant matrices
and controller states. Closing the loop is unity negative feedback,
``u = -y``, in both.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .plant import (ControlLaw, ControlParams, LinearPlant, OperatingPoint, PlantParams,
                    circuit_matrices, linearize, output_rows, resonance_frequencies,
                    siso_channels, solve_operating_point)
from .poly import (DEFAULT_TOL_MATCH, CancellationFailure, Polynomial, RationalFn,
                   StateSpaceModel, cancel, roots)

STABILITY_EPS_REL = 1e-6


class AdKind(str, enum.Enum):
    INVERTER_CURRENT = "inv-current"
    GRID_CURRENT = "grid-current"
    CAP_VOLTAGE = "cap-voltage"

    @classmethod
    def parse(cls, value) -> "AdKind":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "-")
        aliases = {"inv-current": "inv-current", "inverter-current": "inv-current",
                   "grid-current": "grid-current", "cap-voltage": "cap-voltage",
                   "capacitor-voltage": "cap-voltage"}
        if key not in aliases:
            raise InvalidInput(f"unknown AD kind {value!r}")
        return cls(aliases[key])

    @property
    def measured_states(self) -> tuple[int, int]:
        return {"inv-current": (0, 1), "grid-current": (4, 5), "cap-voltage": (2, 3)}[self.value]


# (gain, time constant) of the three design examples
AD_DESIGNS = {
    AdKind.INVERTER_CURRENT: (5.5e-5, 1 / (90 * math.pi)),
    AdKind.GRID_CURRENT: (1.3e-4, 1 / (180 * math.pi)),
    AdKind.CAP_VOLTAGE: (2.2e-6, 1 / (4000 * math.pi)),
}


@dataclass(frozen=True)
class AdController:
    """Active damping ``k s / (T s + 1)`` subtracted from the voltage reference.

    The grid-current design is a negative high-pass filter, so its
    effective feedback ``tf`` carries a minus sign while ``gain`` stays
    positive as quoted.
    """

    kind: AdKind
    gain: float
    time_const: float

    def __post_init__(self):
        object.__setattr__(self, "kind", AdKind.parse(self.kind))
        if self.time_const <= 0:
            raise InvalidInput("AD time constant must be positive")

    @classmethod
    def design_example(cls, kind) -> "AdController":
        kind = AdKind.parse(kind)
        gain, tc = AD_DESIGNS[kind]
        return cls(kind, gain, tc)

    @property
    def feedback_sign(self) -> float:
        return -1.0 if self.kind is AdKind.GRID_CURRENT else 1.0

    @property
    def tf(self) -> RationalFn:
        return RationalFn(Polynomial([0.0, self.feedback_sign * self.gain]),
                          Polynomial([1.0, self.time_const]))

    def replace(self, **changes) -> "AdController":
        import dataclasses
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class CharCoeffs:
    """Lossless droop-I characteristic polynomial ``s^5 + a3 s^3 + a2 s^2 + a1 s + a0``."""

    a3: float
    a2: float
    a1: float
    a0: float

    def polynomial(self) -> Polynomial:
        # the s^4 coefficient is structurally zero
        return Polynomial([self.a0, self.a1, self.a2, self.a3, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class OlModel:
    tf: RationalFn
    ol_poles: np.ndarray
    p_count: int
    law: str
    realization: StateSpaceModel
    omega_ref: float
    cancelled_pairs: list = field(default_factory=list)
    stability_eps: float = 0.0

    def rhp_poles(self) -> np.ndarray:
        return self.ol_poles[self.ol_poles.real > self.stability_eps]

    def hf_poles(self) -> np.ndarray:
        """Poles above half the LCL resonance (the filter resonance modes)."""
        return self.ol_poles[np.abs(self.ol_poles.imag) > 0.5 * self.omega_ref]


def _make_ol(tf, ol_poles, law, realization, omega_ref, pairs=()):
    ol_poles = np.asarray(ol_poles, dtype=complex)
    eps = STABILITY_EPS_REL * omega_ref
    order = np.lexsort((ol_poles.imag, ol_poles.real))
    ol_poles = ol_poles[order]
    return OlModel(tf=tf, ol_poles=ol_poles, p_count=int(np.sum(ol_poles.real > eps)),
                   law=law, realization=realization, omega_ref=omega_ref,
                   cancelled_pairs=list(pairs), stability_eps=eps)


def _channel_vectors(plant: LinearPlant):
    ss = plant.ss
    b_e = ss.B @ plant.e_direction
    b_d = ss.B @ plant.delta_direction
    c_p, c_q, c_v = ss.C
    return b_e, b_d, c_p, c_q, c_v


def build_droop_ol(plant: LinearPlant, D_q: float, T_q: float) -> OlModel:
    """Reactive loop under droop: ``G_qE(s) / (D_q (T_q s + 1))``.

    The low-pass pole ``-1/T_q`` is simply appended to the plant poles; the
    droop loop leaves the resonance untouched.
    """
    if T_q <= 0:
        raise InvalidInput("T_q must be positive")
    w_ref = plant.resonance.omega_LCL
    tf = RationalFn(plant.G_qE.num, plant.G_qE.den * Polynomial([D_q, D_q * T_q]))
    poles = np.concatenate((plant.poles(), [-1.0 / T_q]))

    A = plant.ss.A
    n = A.shape[0]
    b_e, _, _, c_q, _ = _channel_vectors(plant)
    A_ol = np.zeros((n + 1, n + 1))
    A_ol[:n, :n] = A
    A_ol[n, :n] = c_q / T_q
    A_ol[n, n] = -1.0 / T_q
    B_ol = np.concatenate((b_e, [0.0]))
    C_ol = np.concatenate((np.zeros(n), [1.0 / D_q]))
    return _make_ol(tf, poles, ControlLaw.DROOP.value, StateSpaceModel(A_ol, B_ol, C_ol), w_ref)


def build_droopI_ol(plant: LinearPlant, D_q: float, k_pq: float, k_iq: float,
                    tol_match: float = DEFAULT_TOL_MATCH) -> OlModel:
    """Reactive loop under droop-I with the inner voltage-magnitude feedback closed.

    ``G = C G_qE / (s + C D_q G_VE)`` with ``C = k_pq s + k_iq``. Written
    over the common plant denominator ``d`` this is::

        C N_qE d / ((s d + C D_q N_VE) d)

    and the plant denominator cancels. The cancellation is carried out
    explicitly and each cancelled pole is checked against the plant poles.
    """
    if k_iq <= 0:
        raise InvalidInput("k_iq must be positive")
    w_ref = plant.resonance.omega_LCL
    den = plant.G_qE.den
    if not np.array_equal(den.coeffs, plant.G_VE.den.coeffs):
        raise CancellationFailure("G_qE and G_VE do not share a denominator")
    ctrl = Polynomial([k_iq, k_pq])
    char = Polynomial([0.0, 1.0]) * den + D_q * ctrl * plant.G_VE.num
    unreduced = RationalFn(ctrl * plant.G_qE.num * den, char * den)
    _, pairs = cancel(unreduced, tol_match, scale=w_ref,
                      num_factors=[ctrl, plant.G_qE.num, den], den_factors=[char, den])

    plant_poles = plant.poles()
    cancelled = np.array([p for _, p in pairs])
    for p in plant_poles:
        if cancelled.size == 0 or np.min(np.abs(cancelled - p)) > tol_match * max(abs(p), 1.0):
            raise CancellationFailure(f"plant pole {p:.6g} found no matching zero")
    tf = RationalFn(ctrl * plant.G_qE.num, char)
    poles = roots(char, scale=w_ref)

    A = plant.ss.A
    n = A.shape[0]
    b_e, _, _, c_q, c_v = _channel_vectors(plant)
    A_ol = np.zeros((n + 1, n + 1))
    A_ol[:n, :n] = A - k_pq * D_q * np.outer(b_e, c_v)
    A_ol[:n, n] = b_e
    A_ol[n, :n] = -k_iq * D_q * c_v
    B_ol = np.concatenate((k_pq * b_e, [k_iq]))
    C_ol = np.concatenate((c_q, [0.0]))
    return _make_ol(tf, poles, ControlLaw.DROOP_I.value,
                    StateSpaceModel(A_ol, B_ol, C_ol), w_ref, pairs)


def build_ap_ol(plant: LinearPlant, H: float, D_p: float) -> OlModel:
    """Active power loop: ``G_pdelta(s) w_n / (s (2 H s + D_p))``."""
    if H <= 0:
        raise InvalidInput("H must be positive")
    w_ref = plant.resonance.omega_LCL
    wn = plant.pp.omega_n
    tf = RationalFn(plant.G_pdelta.num * wn, plant.G_pdelta.den * Polynomial([0.0, D_p, 2 * H]))
    poles = np.concatenate((plant.poles(), [0.0, -D_p / (2 * H)]))

    A = plant.ss.A
    n = A.shape[0]
    _, b_d, c_p, _, _ = _channel_vectors(plant)
    # states: plant, delta, omega
    A_ol = np.zeros((n + 2, n + 2))
    A_ol[:n, :n] = A
    A_ol[:n, n] = b_d
    A_ol[n, n + 1] = wn
    A_ol[n + 1, n + 1] = -D_p / (2 * H)
    B_ol = np.zeros(n + 2)
    B_ol[n + 1] = 1.0 / (2 * H)
    C_ol = np.concatenate((c_p, [0.0, 0.0]))
    return _make_ol(tf, poles, "ap", StateSpaceModel(A_ol, B_ol, C_ol), w_ref)


def build_rap_ol(plant: LinearPlant, cp: ControlParams) -> OlModel:
    """Dispatch on ``cp.law``."""
    if cp.law is ControlLaw.DROOP:
        return build_droop_ol(plant, cp.D_q, cp.T_q)
    return build_droopI_ol(plant, cp.D_q, cp.k_pq, cp.k_iq)


def char_coeffs_lossless(pp: PlantParams, op: OperatingPoint, D_q: float, k_pq: float,
                         k_iq: float) -> CharCoeffs:
    """Closed-form coefficients of the lossless droop-I characteristic factor.

    The voltage components are taken in the frame of the inverter voltage
    (``op.v_conv``); in the grid frame the formulas only hold for
    ``delta0 = 0``.
    """
    rp = resonance_frequencies(pp)
    w1, w2, wlc, wlg = rp.omega_1, rp.omega_2, rp.omega_LC, rp.omega_Lg
    v_d, v_q = op.v_conv
    g = D_q * wlc ** 2 / op.V
    return CharCoeffs(
        a3=w1 ** 2 + w2 ** 2 + g * k_pq * v_d,
        a2=g * (k_iq * v_d - 2 * k_pq * wlg * v_q),
        a1=w1 ** 2 * w2 ** 2 + g * (w1 * w2 * k_pq * v_d - 2 * k_iq * wlg * v_q),
        a0=v_d * k_iq * g * w1 * w2,
    )


def _selector(kind: AdKind, n: int) -> np.ndarray:
    M = np.zeros((2, n))
    i, j = kind.measured_states
    M[0, i] = M[1, j] = 1.0
    return M


def apply_ad(plant: LinearPlant, ad: AdController) -> LinearPlant:
    """Close an active-damping feedback around the plant.

    Two filter states ``z`` (d and q axis) realize ``k s / (T s + 1)`` as
    ``y = (k/T)(m - z)``, ``z' = (m - z)/T``; ``y`` is subtracted from the
    inverter voltage. Inputs and outputs of the returned plant keep their
    meaning, so ``G_qE`` and ``G_VE`` are simply re-extracted.
    """
    if ad.time_const <= 0:
        raise InvalidInput("AD time constant must be positive")
    ss = plant.ss
    n = ss.A.shape[0]
    T = ad.time_const
    kf = ad.feedback_sign * ad.gain / T
    M = _selector(ad.kind, n)
    A = np.zeros((n + 2, n + 2))
    A[:n, :n] = ss.A - kf * ss.B @ M
    A[:n, n:] = kf * ss.B
    A[n:, :n] = M / T
    A[n:, n:] = -np.eye(2) / T
    B = np.vstack((ss.B, np.zeros((2, 2))))
    C = np.hstack((ss.C, np.zeros((ss.C.shape[0], 2))))
    new_ss = StateSpaceModel(A, B, C)
    g_pd, g_qe, g_ve = siso_channels(plant.pp, plant.op, new_ss)
    return LinearPlant(pp=plant.pp, op=plant.op, ss=new_ss, G_pdelta=g_pd, G_qE=g_qe,
                       G_VE=g_ve, det_A=plant.det_A, det_B=plant.det_B,
                       resonance=plant.resonance, ad=plant.ad + (ad,))


def rap_model(pp: PlantParams, cp: ControlParams, ad: AdController | None = None):
    """Operating point, linear plant (with AD if given) and RAP open loop."""
    op = solve_operating_point(pp, cp)
    plant = linearize(pp, op)
    if ad is not None:
        plant = apply_ad(plant, ad)
    return op, plant, build_rap_ol(plant, cp)


def full_linear_model(pp: PlantParams, cp: ControlParams, ad: AdController | None = None,
                      op: OperatingPoint | None = None) -> StateSpaceModel:
    """Linearization of the complete nonlinear converter model.

    States follow :mod:`gfmstab.simulator`: six circuit states, ``delta``,
    ``omega``, the reactive controller state and (with AD) two filter
    states expressed in the controller frame. The single input is the grid
    voltage magnitude ``V_g``; outputs are ``(p, q, V)``.
    """
    op = op or solve_operating_point(pp, cp)
    A6, B6, b_vg = circuit_matrices(pp)
    C3 = output_rows(op)
    c_p, c_q, c_v = C3
    n_ad = 2 if ad is not None else 0
    N = 9 + n_ad
    iD, iW, iC = 6, 7, 8
    wn = pp.omega_n
    d0 = op.delta
    R0 = np.array([[math.cos(d0), -math.sin(d0)], [math.sin(d0), math.cos(d0)]])
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    e_dir = R0 @ [1.0, 0.0]
    d_dir = J @ R0 @ [op.E, 0.0]

    # dE as a row over the full state
    dE = np.zeros(N)
    if cp.law is ControlLaw.DROOP:
        dE[iC] = -1.0 / cp.D_q
    else:
        derr = np.zeros(N)
        derr[:6] = -cp.D_q * c_v - c_q
        dE[iC] = 1.0
        dE += cp.k_pq * derr
    # de (grid frame, 2 x N)
    de = np.outer(e_dir, dE)
    de[:, iD] += d_dir
    if ad is not None:
        T = ad.time_const
        kf = ad.feedback_sign * ad.gain / T
        M = _selector(ad.kind, 6)
        x0 = op.state
        m0 = M @ x0
        Rm = R0.T
        dmc = np.zeros((2, N))
        dmc[:, :6] = Rm @ M
        dmc[:, iD] = -J @ Rm @ m0
        dz = np.zeros((2, N))
        dz[:, 9:11] = np.eye(2)
        dy = kf * (dmc - dz)
        de -= R0 @ dy

    A = np.zeros((N, N))
    A[:6, :6] = A6
    A[:6] += B6 @ de
    A[iD, iW] = wn
    A[iW, :6] = -c_p / (2 * cp.H)
    A[iW, iW] = -cp.D_p / (2 * cp.H)
    if cp.law is ControlLaw.DROOP:
        A[iC, :6] = c_q / cp.T_q
        A[iC, iC] = -1.0 / cp.T_q
    else:
        A[iC, :6] = cp.k_iq * (-cp.D_q * c_v - c_q)
    if ad is not None:
        A[9:11] = (dmc - dz) / ad.time_const
    B = np.zeros(N)
    B[:6] = b_vg
    C = np.zeros((3, N))
    C[:, :6] = C3
    return StateSpaceModel(A, B, C)
