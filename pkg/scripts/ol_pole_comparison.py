"""Open-loop RAP and resonance poles under droop and droop-I control.

Three operating cases: moderate bandwidth, high bandwidth, weak grid.

    python3 scripts/ol_pole_comparison.py [--p-st 0.5] [--csv out.csv]
"""
import argparse
import csv
import sys

import numpy as np

from gfmstab import ControlParams, to_per_unit
from gfmstab.plant import NAMEPLATE_5MW
from gfmstab.loops import rap_model
from gfmstab.stability import nyquist, verdict

CASES = [
    # label, L_g (None keeps the nameplate value), droop T_q, droop-I k_iq
    ("moderate", None, 0.051, 2.99),
    ("high bandwidth", None, 0.014, 10.97),
    ("weak grid", 0.5, 0.051, 2.99),
]


def shown_poles(m):
    """RAP pole plus upper-half resonance poles, slowest first."""
    p = m.ol_poles
    keep = (np.abs(p.imag) < 1e-9) | (p.imag > 0.5 * m.omega_ref)
    return sorted(p[keep], key=lambda z: (abs(z.imag) > 0, -z.imag))


def fmt(z):
    return f"{z.real:.1f}" if abs(z.imag) < 1e-9 else f"{z.real:.1f} +/- j{z.imag:.1f}"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p-st", type=float, default=0.5, help="active power set-point (p.u.)")
    ap.add_argument("--csv", help="also write rows to this file")
    args = ap.parse_args(argv)

    base = to_per_unit(**NAMEPLATE_5MW)
    rows = []
    for label, L_g, T_q, k_iq in CASES:
        pp = base if L_g is None else base.replace(L_g=L_g)
        for law, cp in (("droop", ControlParams(law="droop", T_q=T_q, P_st=args.p_st)),
                        ("droop-i", ControlParams(law="droop-i", k_iq=k_iq, P_st=args.p_st))):
            _, _, m = rap_model(pp, cp)
            v = verdict(m, nyquist(m))
            poles = shown_poles(m)
            rows.append(dict(case=label, law=law, L_g=pp.L_g, P=v.P, N=v.N, Z=v.Z,
                             poles="; ".join(fmt(z) for z in poles)))
            print(f"{label:15s} {law:8s} L_g={pp.L_g:.3f}  P={v.P} N={v.N} Z={v.Z}  "
                  + "  ".join(fmt(z) for z in poles))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
