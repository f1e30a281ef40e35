"""Real polynomial and rational-function algebra.

Coefficients are stored in ascending order, ``p(s) = c[0] + c[1] s + ...``.
Rational functions are never reduced implicitly; pole-zero cancellation
is an explicit call to :func:`cancel`.

Polynomials arising from the LCL plant have roots around 5e3 rad/s, so a
degree-7 characteristic polynomial spans more than 25 decades of
coefficient magnitude. Root finding and the resolvent recursion therefore
work in a frequency-scaled variable ``s = scale * s_tilde``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInput, NumericalFailure

DEFAULT_TOL = 1e-9
DEFAULT_TOL_MATCH = 1e-6


class NonConvergence(NumericalFailure):
    """Root polishing left residuals above tolerance.

    The partial root set and the per-root scaled residuals are attached.
    """

    def __init__(self, msg, roots, residuals):
        super().__init__(msg)
        self.roots = roots
        self.residuals = residuals


class PoleHit(NumericalFailure):
    """A rational function was evaluated (numerically) on one of its poles."""


class DimensionMismatch(InvalidInput):
    pass


class CancellationFailure(NumericalFailure):
    pass


@dataclass(frozen=True, eq=False)
class Polynomial:
    """Real polynomial with ascending coefficients, trailing zeros trimmed."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float, ndmin=1)
        if c.ndim != 1 or c.size == 0:
            raise InvalidInput("polynomial needs at least one coefficient")
        if not np.all(np.isfinite(c)):
            raise InvalidInput("polynomial coefficients must be finite")
        nz = np.flatnonzero(c)
        c = c[: nz[-1] + 1] if nz.size else c[:1]
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_roots(cls, roots: Sequence[complex], leading: float = 1.0) -> "Polynomial":
        """Build ``leading * prod(s - r)``; roots must be closed under conjugation."""
        c = np.array([1.0 + 0j])
        for r in roots:
            c = np.concatenate(([0.0], c)) - r * np.concatenate((c, [0.0]))
        if np.any(np.abs(c.imag) > 1e-9 * np.max(np.abs(c))):
            raise InvalidInput("root set is not closed under conjugation")
        return cls(leading * c.real)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    @property
    def leading(self) -> float:
        return float(self.coeffs[-1])

    def is_zero(self) -> bool:
        return self.degree == 0 and self.coeffs[0] == 0.0

    def norm(self) -> float:
        return float(np.max(np.abs(self.coeffs)))

    def __call__(self, s):
        # Horner
        s = np.asarray(s)
        out = np.zeros_like(s, dtype=complex if np.iscomplexobj(s) else float)
        for c in self.coeffs[::-1]:
            out = out * s + c
        return out[()] if out.ndim == 0 else out

    def abs_sum(self, s) -> np.ndarray:
        """``sum |c_k| |s|^k``, the natural scale for evaluation error at ``s``."""
        a = np.abs(np.asarray(s))
        out = np.zeros_like(a, dtype=float)
        for c in self.coeffs[::-1]:
            out = out * a + abs(c)
        return out

    def deriv(self) -> "Polynomial":
        if self.degree == 0:
            return Polynomial([0.0])
        return Polynomial(self.coeffs[1:] * np.arange(1, self.coeffs.size))

    def monic(self) -> "Polynomial":
        return Polynomial(self.coeffs / self.leading)

    def scale_var(self, w: float) -> "Polynomial":
        """Return ``q(x) = p(w x)``."""
        return Polynomial(self.coeffs * w ** np.arange(self.coeffs.size))

    def __add__(self, other):
        other = _as_poly(other)
        n = max(self.coeffs.size, other.coeffs.size)
        return Polynomial(_pad(self.coeffs, n) + _pad(other.coeffs, n))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(-self.coeffs)

    def __sub__(self, other):
        return self + (-_as_poly(other))

    def __rsub__(self, other):
        return _as_poly(other) - self

    def __mul__(self, other):
        if isinstance(other, RationalFn):
            return NotImplemented
        other = _as_poly(other)
        return Polynomial(np.convolve(self.coeffs, other.coeffs))

    __rmul__ = __mul__

    def __repr__(self):
        return f"Polynomial({np.array2string(self.coeffs, precision=6)})"

    def roots(self, tol: float = DEFAULT_TOL, scale: float | None = None) -> np.ndarray:
        return roots(self, tol=tol, scale=scale)


def _pad(c, n):
    return np.concatenate((c, np.zeros(n - c.size)))


def _as_poly(x) -> Polynomial:
    if isinstance(x, Polynomial):
        return x
    if np.isscalar(x):
        return Polynomial([float(x)])
    raise TypeError(f"cannot interpret {type(x).__name__} as a polynomial")


def poly_arith(a: Polynomial, b: Polynomial, kind: str) -> Polynomial:
    """Exact coefficient arithmetic, ``kind`` one of ``add``, ``sub``, ``mul``."""
    if kind == "add":
        return a + b
    if kind == "sub":
        return a - b
    if kind == "mul":
        return a * b
    raise InvalidInput(f"unknown polynomial operation {kind!r}")


def _auto_scale(c: np.ndarray) -> float:
    # geometric mean of root magnitudes, |c0/cn|^(1/n)
    n = c.size - 1
    w = (abs(c[0]) / abs(c[-1])) ** (1.0 / n)
    return w if np.isfinite(w) and w > 0 else 1.0


def roots(p: Polynomial, tol: float = DEFAULT_TOL, scale: float | None = None,
          max_iter: int = 30) -> np.ndarray:
    """All complex roots of ``p``, multiplicity preserved.

    Companion-matrix eigenvalues of the frequency-scaled polynomial, then
    Newton polishing. A polishing step is only accepted when it lowers the
    residual, so residuals never increase. Real roots stay real and complex
    roots are returned as exact conjugate pairs.

    The acceptance test is the relative backward error
    ``|q(r)| / sum |q_k| |r|^k < tol`` of the scaled polynomial
    ``q(x) = p(scale * x)``.

    Parameters
    ----------
    p : Polynomial
        Degree at least one.
    tol : float
        Relative residual bound.
    scale : float, optional
        Frequency scale (e.g. the LCL resonance). Defaults to the geometric
        mean root magnitude.
    """
    if p.degree < 1:
        raise InvalidInput("roots() needs a polynomial of degree >= 1")
    c = p.coeffs
    n_zero = int(np.flatnonzero(c)[0])
    core = c[n_zero:]
    zeros = np.zeros(n_zero, dtype=complex)
    if core.size == 1:
        return zeros
    w = float(scale) if scale else _auto_scale(core)
    q = core * w ** np.arange(core.size)
    q = q / np.max(np.abs(q))
    qp = Polynomial(q)
    dq = qp.deriv()

    if core.size == 2:
        r = np.array([-q[0] / q[1] + 0j])
    else:
        comp = np.polynomial.polynomial.polycompanion(q)
        r = np.linalg.eigvals(comp).astype(complex)

    # LAPACK returns exact conjugates for a real matrix, so polish the
    # closed upper half-plane and mirror it.
    upper = r[r.imag >= 0]
    upper = np.array([_polish(qp, dq, x, upper, max_iter) for x in upper])
    real = upper[upper.imag == 0]
    cplx = upper[upper.imag > 0]
    r = np.concatenate((real, cplx, cplx.conj()))
    if r.size != core.size - 1:
        raise NonConvergence("conjugate pairing failed", r * w, np.full(r.size, np.inf))

    res = np.abs(qp(r)) / qp.abs_sum(r)
    r = r * w
    if np.any(res >= tol):
        raise NonConvergence(
            f"root residual {res.max():.2e} exceeds tol {tol:.1e}", r, res)
    order = np.lexsort((r.imag, r.real))
    return np.concatenate((zeros, r[order]))


def _polish(q: Polynomial, dq: Polynomial, x: complex, others: np.ndarray,
            max_iter: int) -> complex:
    is_real = x.imag == 0
    x = x.real if is_real else x
    d = np.abs(others - x)
    d = d[d > 0]
    # never let a step jump onto a neighbouring root
    max_step = 0.5 * d.min() if d.size else np.inf
    fx = abs(q(x))
    for _ in range(max_iter):
        if fx == 0:
            break
        dfx = dq(x)
        if dfx == 0:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            step = q(x) / dfx
            if not abs(step) <= max_step:
                break
            xn = x - step
            fn = abs(q(xn))
        # also rejects nan from overflow
        if not fn < fx:
            break
        x, fx = xn, fn
    if is_real:
        return complex(x, 0.0)
    return complex(x.real, abs(x.imag)) if x.imag != 0 else complex(x)


@dataclass(frozen=True, eq=False)
class RationalFn:
    """``num(s) / den(s)``; stored exactly as given, never auto-reduced."""

    num: Polynomial
    den: Polynomial

    def __post_init__(self):
        object.__setattr__(self, "num", _as_poly(self.num))
        object.__setattr__(self, "den", _as_poly(self.den))
        if self.den.is_zero():
            raise InvalidInput("denominator is identically zero")

    def __call__(self, s):
        return evaluate(self, s)

    @property
    def relative_degree(self) -> int:
        return self.den.degree - self.num.degree

    def is_strictly_proper(self) -> bool:
        return self.num.is_zero() or self.relative_degree > 0

    def poles(self, tol: float = DEFAULT_TOL, scale: float | None = None) -> np.ndarray:
        return roots(self.den, tol, scale) if self.den.degree else np.zeros(0, complex)

    def zeros(self, tol: float = DEFAULT_TOL, scale: float | None = None) -> np.ndarray:
        if self.num.is_zero() or self.num.degree == 0:
            return np.zeros(0, complex)
        return roots(self.num, tol, scale)

    def __mul__(self, other):
        if isinstance(other, RationalFn):
            return RationalFn(self.num * other.num, self.den * other.den)
        return RationalFn(self.num * _as_poly(other), self.den)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, RationalFn):
            return RationalFn(self.num * other.den, self.den * other.num)
        return RationalFn(self.num, self.den * _as_poly(other))

    def __repr__(self):
        return f"RationalFn(num={self.num!r}, den={self.den!r})"


def evaluate(r: RationalFn, s, pole_tol: float = 1e-13):
    """Horner evaluation of ``num(s)/den(s)``.

    Raises :class:`PoleHit` when ``|den(s)|`` is below ``pole_tol`` times
    the evaluation scale ``sum |d_k| |s|^k``.
    """
    s = np.asarray(s)
    d = r.den(s)
    if np.any(np.abs(d) <= pole_tol * r.den.abs_sum(s)):
        raise PoleHit("evaluation point lies on a pole")
    return r.num(s) / d


def cancel(r: RationalFn, tol_match: float = DEFAULT_TOL_MATCH,
           scale: float | None = None, num_factors=None, den_factors=None):
    """Remove numerator/denominator root pairs closer than ``tol_match``.

    Distance is relative to the pole magnitude (absolute below 1 rad/s).
    Pairing is greedy by increasing distance, which keeps conjugate pairs
    together. When ``r`` is known as a product of factors, pass them as
    ``num_factors`` / ``den_factors``; each factor is then rooted on its
    own, which avoids the accuracy loss of rooting a product with
    clustered roots.

    Returns
    -------
    reduced : RationalFn
        Rebuilt from the surviving roots with the original gain ratio.
    pairs : list of (zero, pole)
    """
    z = _factor_roots(num_factors, scale) if num_factors else r.zeros(scale=scale)
    p = _factor_roots(den_factors, scale) if den_factors else r.poles(scale=scale)
    if z.size == 0 or p.size == 0:
        return r, []
    dist = np.abs(z[:, None] - p[None, :]) / np.maximum(np.abs(p)[None, :], 1.0)
    pairs = []
    used_z, used_p = set(), set()
    for flat in np.argsort(dist, axis=None, kind="stable"):
        i, j = np.unravel_index(flat, dist.shape)
        if dist[i, j] > tol_match:
            break
        if i in used_z or j in used_p:
            continue
        used_z.add(i)
        used_p.add(j)
        pairs.append((complex(z[i]), complex(p[j])))
    if not pairs:
        return r, []
    zk = np.delete(z, list(used_z))
    pk = np.delete(p, list(used_p))
    num = Polynomial.from_roots(zk, r.num.leading)
    den = Polynomial.from_roots(pk, r.den.leading)
    return RationalFn(num, den), pairs


def _factor_roots(factors, scale):
    parts = [roots(f, scale=scale) for f in factors if f.degree >= 1]
    return np.concatenate(parts) if parts else np.zeros(0, complex)


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """``x' = A x + B u``, ``y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        C = np.asarray(self.C, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        B = B.reshape(n, -1) if B.ndim < 2 else B
        C = C.reshape(1, -1) if C.ndim < 2 else C
        if B.shape[0] != n:
            raise DimensionMismatch(f"B has {B.shape[0]} rows, A has {n}")
        if C.shape[1] != n:
            raise DimensionMismatch(f"C has {C.shape[1]} columns, A has {n}")
        D = np.zeros((C.shape[0], B.shape[1])) if self.D is None else np.asarray(self.D, float)
        D = np.atleast_2d(D)
        if D.shape != (C.shape[0], B.shape[1]):
            raise DimensionMismatch(f"D must be {(C.shape[0], B.shape[1])}, got {D.shape}")
        for name, val in zip("ABCD", (A, B, C, D)):
            val = val.copy()
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def poles(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)


def charpoly_adjugate(A: np.ndarray, scale: float | None = None):
    """Faddeev-LeVerrier resolvent recursion.

    Returns ``(den, adj)`` with ``det(sI - A) = sum den[k] s^k`` (monic) and
    ``adj(sI - A) = sum adj[k] s^k``, ``adj`` shaped ``(n, n, n)``.
    The recursion runs on ``A / scale`` to keep the traces well conditioned.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.array([1.0]), np.zeros((0, 0, 0))
    w = float(scale) if scale else float(np.linalg.norm(A, 2))
    if w == 0:
        w = 1.0
    At = A / w
    den = np.zeros(n + 1)
    den[n] = 1.0
    adj = np.zeros((n, n, n))
    M = np.eye(n)
    for k in range(1, n + 1):
        # M_k multiplies s^(n-k); in unscaled s it picks up w^(k-1)
        adj[n - k] = M * w ** (k - 1)
        AM = At @ M
        ck = -np.trace(AM) / k
        den[n - k] = ck * w ** k
        M = AM + ck * np.eye(n)
    return den, adj


def ss_to_rational(m: StateSpaceModel, scale: float | None = None):
    """Exact transfer matrix ``C (sI - A)^-1 B + D`` as nested lists of RationalFn.

    Every entry shares the denominator ``det(sI - A)``; nothing is cancelled.
    """
    if not isinstance(m, StateSpaceModel):
        raise DimensionMismatch("ss_to_rational expects a StateSpaceModel")
    den_c, adj = charpoly_adjugate(m.A, scale)
    den = Polynomial(den_c)
    out = []
    for i in range(m.C.shape[0]):
        row = []
        for j in range(m.B.shape[1]):
            num_c = np.einsum("n,knm,m->k", m.C[i], adj, m.B[:, j]) if adj.size else np.zeros(1)
            num = Polynomial(num_c) + Polynomial(den_c * m.D[i, j])
            row.append(RationalFn(num, den))
        out.append(row)
    return out


def siso_rational(m: StateSpaceModel, scale: float | None = None) -> RationalFn:
    tf = ss_to_rational(m, scale)
    if len(tf) != 1 or len(tf[0]) != 1:
        raise DimensionMismatch("model is not single-input single-output")
    return tf[0][0]
