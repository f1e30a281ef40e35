"""Open-loop poles with the three active-damping designs at the worst case.

Worst case: T_q = 0.014 (droop), k_iq = 10.97 (droop-I), L_g = 0.5 p.u.
Optionally scans the AD gain to find where droop-I becomes minimum phase.

    python3 scripts/ad_pole_comparison.py [--scan]
"""
import argparse
import sys

import numpy as np

from gfmstab import ControlParams, to_per_unit
from gfmstab.plant import NAMEPLATE_5MW
from gfmstab.loops import AdController, AdKind, rap_model
from gfmstab.stability import closed_loop_poles, nyquist, verdict


def hf_upper(m):
    p = m.ol_poles
    rap = p[np.abs(p.imag) < 1e-9]
    hf = sorted(p[p.imag > 0.5 * m.omega_ref], key=lambda z: -z.imag)
    return rap[np.argmin(np.abs(rap + 80))], hf


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scan", action="store_true", help="scan AD gain for droop-I")
    args = ap.parse_args(argv)

    pp = to_per_unit(**NAMEPLATE_5MW).replace(L_g=0.5)
    laws = {"droop": ControlParams(law="droop", T_q=0.014),
            "droop-i": ControlParams(law="droop-i", k_iq=10.97)}
    for kind in AdKind:
        ad = AdController.design_example(kind)
        print(f"{kind.value}: gain {ad.gain:g}, T {ad.time_const:.4g} s")
        for name, cp in laws.items():
            _, _, m = rap_model(pp, cp, ad)
            v = verdict(m, nyquist(m))
            rap, hf = hf_upper(m)
            hf_s = "  ".join(f"{z.real:+.1f} +/- j{z.imag:.1f}" for z in hf)
            print(f"  {name:8s} P={v.P} N={v.N} stable={v.stable}  {rap.real:.1f}  {hf_s}")
        if args.scan:
            for g in ad.gain * np.array([1.0, 1.25, 1.5, 2.0, 3.0, 4.0, 6.0]):
                _, _, m = rap_model(pp, laws["droop-i"], ad.replace(gain=float(g)))
                cl = closed_loop_poles(m)
                print(f"    gain {g:.3g}: P={m.p_count}  max CL real {cl.real.max():+.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
