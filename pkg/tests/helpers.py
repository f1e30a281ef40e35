"""Shared oracles for the test suite."""
import numpy as np


def match_sets(a, b, floor=1.0):
    """Worst relative distance of a greedy nearest-neighbour pairing of two root sets."""
    a, b = list(np.asarray(a)), list(np.asarray(b))
    assert len(a) == len(b), f"sizes differ: {len(a)} vs {len(b)}"
    worst = 0.0
    for z in sorted(a, key=lambda v: -abs(v)):
        d = np.abs(np.array(b) - z)
        k = int(np.argmin(d))
        worst = max(worst, d[k] / max(abs(z), floor))
        b.pop(k)
    return worst


def nearest(poles, target):
    poles = np.asarray(poles)
    return poles[np.argmin(np.abs(poles - target))]


def ol_from_tf(num, den):
    """Open-loop model of ``num(s)/den(s)`` (ascending coefficients), controllable canonical form."""
    from gfmstab.loops import OlModel, STABILITY_EPS_REL
    from gfmstab.poly import Polynomial, RationalFn, StateSpaceModel, roots

    n_p, d_p = Polynomial(num), Polynomial(den)
    d = d_p.coeffs / d_p.coeffs[-1]
    nc = np.zeros(len(d) - 1)
    nc[:n_p.coeffs.size] = n_p.coeffs / d_p.coeffs[-1]
    k = len(d) - 1
    A = np.zeros((k, k))
    A[:-1, 1:] = np.eye(k - 1)
    A[-1] = -d[:-1]
    B = np.zeros((k, 1))
    B[-1] = 1.0
    poles = roots(d_p)
    ref = max(1.0, float(np.max(np.abs(poles))))
    eps = STABILITY_EPS_REL * ref
    return OlModel(tf=RationalFn(n_p, d_p), ol_poles=poles,
                   p_count=int(np.sum(poles.real > eps)), law="test",
                   realization=StateSpaceModel(A, B, nc[None, :]), omega_ref=ref,
                   stability_eps=eps)
