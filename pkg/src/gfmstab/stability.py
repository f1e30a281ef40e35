"""Routh arrays, Nyquist winding numbers, margins and closed-loop verdicts.

Sign convention
---------------
``NyquistReport.winding_number`` counts counterclockwise turns of
``G(jw) + 1`` around the origin as ``w`` runs from ``-inf`` to ``+inf``.
``NyquistReport.encirclements`` is the clockwise count, ``N = -winding``,
so that the number of closed-loop right-half-plane poles is ``Z = N + P``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import NumericalFailure
from .loops import OlModel
from .poly import Polynomial, RationalFn, roots

NYQUIST_DG_BOUND = 0.05
NYQUIST_MAX_SAMPLES = 400_000
_LAURENT_TERMS = 16


class PoleOnContour(NumericalFailure):
    """An open-loop pole sits on the imaginary axis; the contour is not indented."""

    hint = "add grid resistance (x_over_r) so no open-loop pole lies on the jw axis"


class ContourUnresolved(NumericalFailure):
    pass


class CrossCheckFailure(NumericalFailure):
    pass


# ---------------------------------------------------------------- Routh

class _Laurent:
    """Truncated Laurent series ``sum_k c[k] eps^(order + k)`` about ``eps = 0``.

    Enough to decide the limit of every tableau entry as ``eps -> 0+``.
    """

    __slots__ = ("order", "c")

    def __init__(self, order: int, c):
        c = np.zeros(_LAURENT_TERMS) if c is None else np.asarray(c, dtype=float)
        c = np.pad(c, (0, max(0, _LAURENT_TERMS - c.size)))[:_LAURENT_TERMS]
        nz = np.flatnonzero(c)
        if nz.size == 0:
            self.order, self.c = 0, np.zeros(_LAURENT_TERMS)
            return
        k = nz[0]
        self.order = order + k
        self.c = np.concatenate((c[k:], np.zeros(k)))

    @classmethod
    def const(cls, x: float) -> "_Laurent":
        return cls(0, [x])

    @classmethod
    def eps(cls) -> "_Laurent":
        return cls(1, [1.0])

    @property
    def is_zero(self) -> bool:
        return not self.c[0]

    def _aligned(self, other):
        o = min(self.order, other.order)
        a = np.concatenate((np.zeros(self.order - o), self.c))[:_LAURENT_TERMS]
        b = np.concatenate((np.zeros(other.order - o), other.c))[:_LAURENT_TERMS]
        return o, a, b

    def __sub__(self, other: "_Laurent") -> "_Laurent":
        o, a, b = self._aligned(other)
        d = a - b
        # cancellation to rounding level is an exact zero
        d[np.abs(d) <= 1e-11 * (np.abs(a) + np.abs(b))] = 0.0
        return _Laurent(o, d)

    def __mul__(self, other):
        if not isinstance(other, _Laurent):
            return _Laurent(self.order, self.c * other)
        return _Laurent(self.order + other.order, np.convolve(self.c, other.c)[:_LAURENT_TERMS])

    def __truediv__(self, other: "_Laurent") -> "_Laurent":
        if other.is_zero:
            raise ZeroDivisionError("Laurent division by zero")
        b = other.c
        inv = np.zeros(_LAURENT_TERMS)
        inv[0] = 1.0 / b[0]
        for k in range(1, _LAURENT_TERMS):
            inv[k] = -np.dot(b[1:k + 1], inv[k - 1::-1][:k]) / b[0]
        return self * _Laurent(-other.order, inv)

    def limit(self) -> float:
        if self.is_zero:
            return 0.0
        if self.order < 0:
            return math.copysign(math.inf, self.c[0])
        return float(self.c[0]) if self.order == 0 else 0.0

    def sign(self) -> int:
        return 0 if self.is_zero else int(np.sign(self.c[0]))

    def leading(self) -> str:
        if self.is_zero:
            return "0"
        if self.order == 0:
            return f"{self.c[0]:.6g}"
        return f"{self.c[0]:.6g}*eps^{self.order}"


@dataclass(frozen=True)
class RouthEntry:
    power: int
    limit: float
    sign: int
    leading_term: str
    uses_epsilon: bool


@dataclass(frozen=True)
class RouthReport:
    """First column of the Routh tableau with ``eps -> 0+`` limits.

    ``leading_term`` shows the dominant term of each entry on the
    frequency-scaled polynomial ``p(scale * s)``; signs and limits of
    zero/infinity are scale invariant.
    """

    first_column: list
    sign_changes: int
    rhp_count: int
    used_epsilon: bool
    zero_rows: list = field(default_factory=list)
    inconclusive: bool = False
    scale: float = 1.0

    def format(self) -> str:
        lines = [f"# routh (s -> {self.scale:.6g} s); eps -> 0+",
                 "power,leading_term,limit,sign"]
        for e in self.first_column:
            lines.append(f"s^{e.power},{e.leading_term},{e.limit:.6g},{'+' if e.sign > 0 else '-' if e.sign < 0 else '0'}")
        lines.append(f"# sign_changes={self.sign_changes} rhp_count={self.rhp_count} "
                     f"used_epsilon={self.used_epsilon} zero_rows={self.zero_rows} "
                     f"inconclusive={self.inconclusive}")
        return "\n".join(lines)


def routh(p: Polynomial, scale: float | None = None) -> RouthReport:
    """Routh tableau with symbolic ``eps`` for zero pivots.

    A vanishing pivot is replaced by ``eps``; an all-zero row by the
    derivative of the auxiliary polynomial formed from the row above.
    Each first-column entry is classified by its limit as ``eps -> 0+``.
    The polynomial is frequency-scaled first (``s -> scale s``), which
    leaves the root signs unchanged.
    """
    if p.degree < 1:
        raise ValueError("routh needs degree >= 1")
    c = np.asarray(p.coeffs, dtype=float)
    n = p.degree
    if scale is None:
        nz = np.flatnonzero(c)
        scale = abs(c[nz[0]] / c[-1]) ** (1.0 / (n - nz[0])) if nz[0] < n else 1.0
    cs = c * scale ** np.arange(n + 1)
    cs = cs / np.max(np.abs(cs))
    desc = cs[::-1]
    width = n // 2 + 1

    def row_of(vals):
        out = [_Laurent.const(v) for v in vals]
        return out + [_Laurent(0, None)] * (width - len(out))

    rows = [row_of(desc[0::2]), row_of(desc[1::2])]
    used_eps, zero_rows, inconclusive = False, [], False
    eps_flags = [False, False]

    def fix_pivot(k):
        nonlocal used_eps
        if rows[k][0].is_zero:
            rows[k][0] = _Laurent.eps()
            used_eps = True
            eps_flags[k] = True

    for k in range(1, n + 1):
        if all(e.is_zero for e in rows[k]):
            # auxiliary polynomial from row k-1 (powers n-k+1, n-k-1, ...)
            order = n - k + 1
            zero_rows.append(order - 1)
            rows[k] = [rows[k - 1][j] * float(order - 2 * j) for j in range(width)]
            if all(e.is_zero for e in rows[k]):
                inconclusive = True
                break
        fix_pivot(k)
        if k == n:
            break
        a, b = rows[k - 1], rows[k]
        new = []
        for j in range(width):
            if j + 1 < width:
                new.append((b[0] * a[j + 1] - a[0] * b[j + 1]) / b[0])
            else:
                new.append(_Laurent(0, None))
        rows.append(new)
        eps_flags.append(used_eps)
    first = []
    for k, r in enumerate(rows[:n + 1]):
        e = r[0]
        first.append(RouthEntry(power=n - k, limit=e.limit(), sign=e.sign(),
                                leading_term=e.leading(), uses_epsilon=eps_flags[k]))
    signs = [e.sign for e in first if e.sign != 0]
    changes = int(sum(1 for s0, s1 in zip(signs, signs[1:]) if s0 != s1))
    if len(signs) < len(first):
        inconclusive = True
    return RouthReport(first_column=first, sign_changes=changes, rhp_count=changes,
                       used_epsilon=used_eps, zero_rows=zero_rows,
                       inconclusive=inconclusive, scale=float(scale))


# -------------------------------------------------------------- Nyquist

@dataclass(frozen=True, eq=False)
class NyquistReport:
    """Samples of ``G(jw)`` for ``w`` in ``[0, w_max]`` plus the point at infinity.

    The negative-frequency half follows by conjugation and is not stored.
    """

    omega: np.ndarray
    G: np.ndarray
    G_inf: complex
    winding_number: int
    closest_approach: float
    omega_max: float

    @property
    def encirclements(self) -> int:
        """Clockwise encirclements of ``-1``; ``Z = N + P``."""
        return -self.winding_number

    @property
    def samples(self):
        return list(zip(self.omega.tolist(), self.G.tolist()))

    def to_csv(self, path, hz: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["freq_hz" if hz else "omega", "re", "im"])
            f = self.omega / (2 * math.pi) if hz else self.omega
            for x, g in zip(f, self.G):
                w.writerow([repr(float(x)), repr(float(g.real)), repr(float(g.imag))])


def _check_contour(poles: np.ndarray, rtol: float = 1e-6) -> None:
    for p in poles:
        if abs(p.real) <= rtol * max(abs(p), 1.0):
            raise PoleOnContour(f"open-loop pole {p:.6g} lies on the imaginary axis; "
                                + PoleOnContour.hint)


def _eval_jw(tf: RationalFn, w: np.ndarray) -> np.ndarray:
    s = 1j * w
    return tf.num(s) / tf.den(s)


def _seed_grid(m: OlModel, w_min: float, w_max: float, pts: int) -> np.ndarray:
    grid = [np.array([0.0]), np.geomspace(w_min, w_max, pts)]
    feats = np.concatenate((m.ol_poles, m.tf.zeros(scale=m.omega_ref)))
    offsets = np.array([0.0, 0.125, 0.25, 0.5, 1, 2, 4, 8, 16])
    for p in feats:
        if p.imag <= 0:
            continue
        width = max(abs(p.real), 1e-6 * abs(p))
        cand = np.concatenate((p.imag - offsets * width, p.imag + offsets * width))
        grid.append(cand[(cand > 0) & (cand < w_max)])
    return np.unique(np.concatenate(grid))


def nyquist(m: OlModel, omega_min: float = 1.0, omega_max: float | None = None,
            pts: int = 2000, dg_bound: float = NYQUIST_DG_BOUND) -> NyquistReport:
    """Sample ``G(jw)`` and count encirclements of ``-1``.

    The grid is logarithmic on ``[omega_min, omega_max]`` (default upper
    end ``10 w_LCL``), prefixed by ``w = 0`` and seeded around every pole
    and zero. Intervals are bisected until ``|dG| < dg_bound (1 + |G|)`` and
    the argument of ``G + 1`` turns by less than ``pi/8`` per step.
    """
    _check_contour(m.ol_poles)
    tf = m.tf
    if tf.relative_degree < 0:
        raise ValueError("improper open loop")
    G_inf = complex(tf.num.leading / tf.den.leading) if tf.relative_degree == 0 else 0j
    w_max = omega_max or 10 * m.omega_ref
    for _ in range(6):
        if abs(_eval_jw(tf, np.array([w_max]))[0]) < 0.5:
            break
        w_max *= 10
    w = _seed_grid(m, omega_min, w_max, pts)
    for _ in range(80):
        G = _eval_jw(tf, w)
        g1 = G + 1
        dG = np.abs(np.diff(G))
        turn = np.abs(np.angle(g1[1:] / g1[:-1]))
        bad = (dG >= dg_bound * (1 + np.abs(G[:-1]))) | (turn > math.pi / 8)
        bad &= np.diff(w) > 1e-12 * w[1:]
        if not bad.any():
            break
        if w.size + bad.sum() > NYQUIST_MAX_SAMPLES:
            raise ContourUnresolved("Nyquist refinement exceeded the sample budget")
        lo, hi = w[:-1][bad], w[1:][bad]
        mids = np.where(lo > 0, np.sqrt(lo * np.maximum(hi, lo)), 0.5 * hi)
        mids = np.where((mids <= lo) | (mids >= hi), 0.5 * (lo + hi), mids)
        w = np.unique(np.concatenate((w, mids)))
    else:
        raise ContourUnresolved("Nyquist refinement did not settle")
    G = _eval_jw(tf, w)
    g1 = np.concatenate((G, [G_inf])) + 1
    if np.any(np.abs(g1) == 0):
        raise PoleOnContour("closed-loop pole on the imaginary axis (G = -1 sampled)")
    total = np.sum(np.angle(g1[1:] / g1[:-1]))
    # the negative-frequency half contributes the same angle
    turns = total / math.pi
    winding = int(round(turns))
    if abs(turns - winding) > 1e-3:
        raise ContourUnresolved(f"non-integer winding {turns:.4f}")
    return NyquistReport(omega=w, G=G, G_inf=G_inf, winding_number=winding,
                         closest_approach=float(np.min(np.abs(g1))), omega_max=float(w_max))


@dataclass(frozen=True)
class StabilityVerdict:
    P: int
    N: int
    Z: int
    minimum_phase: bool
    stable: bool
    law: str = ""
    closest_approach: float = math.nan

    def format(self) -> str:
        return "\n".join([
            "# verdict: N = clockwise encirclements of -1, Z = N + P",
            f"law={self.law}",
            f"P={self.P}",
            f"N={self.N}",
            f"Z={self.Z}",
            f"minimum_phase={str(self.minimum_phase).lower()}",
            f"stable={str(self.stable).lower()}",
            f"closest_approach={self.closest_approach:.6g}",
        ])


def verdict(m: OlModel, n: NyquistReport) -> StabilityVerdict:
    P = m.p_count
    N = n.encirclements
    Z = N + P
    return StabilityVerdict(P=P, N=N, Z=Z, minimum_phase=P == 0, stable=Z == 0, law=m.law,
                            closest_approach=n.closest_approach)


@dataclass(frozen=True)
class MarginReport:
    """Classical margins; meaningless as robustness measures when ``P > 0``.

    ``phase_margin`` is ``(arg G mod 360) - 180`` degrees at the unity-gain
    crossing that minimizes it; ``gain_margin`` is ``-20 log10 |G|`` at the
    negative-real-axis crossing that minimizes it. Absent crossings give
    ``inf``.
    """

    gain_margin: float
    phase_margin: float
    gm_omega: float
    pm_omega: float
    reliable: bool
    P: int

    def format(self) -> str:
        return "\n".join([
            "gain_margin_db,gm_omega,phase_margin_deg,pm_omega,reliable,P",
            f"{self.gain_margin:.6g},{self.gm_omega:.6g},{self.phase_margin:.6g},"
            f"{self.pm_omega:.6g},{str(self.reliable).lower()},{self.P}",
        ])


def _crossings(f, w, vals):
    out = []
    idx = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)
    for i in idx:
        out.append(brentq(f, w[i], w[i + 1], xtol=1e-12 * w[i + 1], rtol=1e-14))
    return out


def margins(m: OlModel, report: NyquistReport | None = None) -> MarginReport:
    n = report or nyquist(m)
    w, G = n.omega, n.G
    tf = m.tf

    def im(x):
        return _eval_jw(tf, np.array([x]))[0].imag

    def mag(x):
        return abs(_eval_jw(tf, np.array([x]))[0]) - 1.0

    gm, gm_w = math.inf, math.nan
    cands = _crossings(im, w, G.imag)
    if G[0].real < 0 and w[0] == 0:
        cands.append(0.0)
    for x in cands:
        g = _eval_jw(tf, np.array([x]))[0]
        if g.real < 0:
            val = -20 * math.log10(abs(g.real))
            if val < gm:
                gm, gm_w = val, x
    pm, pm_w = math.inf, math.nan
    for x in _crossings(mag, w, np.abs(G) - 1.0):
        g = _eval_jw(tf, np.array([x]))[0]
        val = math.degrees(math.atan2(g.imag, g.real)) % 360.0 - 180.0
        if val < pm:
            pm, pm_w = val, x
    return MarginReport(gain_margin=gm, phase_margin=pm, gm_omega=gm_w, pm_omega=pm_w,
                        reliable=m.p_count == 0, P=m.p_count)


# ----------------------------------------------------------- closed loop

def _match(a: np.ndarray, b: np.ndarray, rtol: float) -> float:
    """Worst relative distance of a greedy nearest pairing of two pole sets."""
    b = list(b)
    worst = 0.0
    for x in sorted(a, key=lambda z: -abs(z)):
        d = np.abs(np.array(b) - x)
        k = int(np.argmin(d))
        worst = max(worst, d[k] / max(abs(x), 1.0))
        b.pop(k)
    return worst


def closed_loop_poles(m: OlModel, check: bool = True, rtol: float = 1e-6) -> np.ndarray:
    """Roots of ``num + den`` (unity negative feedback).

    With ``check`` the result is compared with the eigenvalues of
    ``A - B C`` from the model's own state realization.
    """
    char = m.tf.num + m.tf.den
    cl = roots(char, scale=m.omega_ref)
    if check:
        r = m.realization
        A_cl = r.A - np.outer(r.B[:, 0], r.C[0])
        eig = np.linalg.eigvals(A_cl)
        if eig.size != cl.size:
            raise CrossCheckFailure(f"order mismatch: {cl.size} roots vs {eig.size} states")
        err = _match(cl, eig, rtol)
        if err > rtol:
            raise CrossCheckFailure(f"closed-loop poles disagree (rel. {err:.2e})")
    return cl


def rhp_count(poles: np.ndarray, eps: float) -> int:
    return int(np.sum(np.asarray(poles).real > eps))
