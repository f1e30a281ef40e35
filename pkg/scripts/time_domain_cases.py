"""Run the 15 s time-domain scenarios and report oscillation frequency and decay.

Each scenario is a JSON file in configs/ (``sim_*.json``). Traces and a
summary are written to ``--out`` (default ``results/time_domain``).

    python3 scripts/time_domain_cases.py [--only sim_kiq_step] [--out DIR]
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

from gfmstab.config import load_config
from gfmstab.simulator import (SimScenario, WindowTooShort, auto_window, decay_time,
                               dominant_frequency, simulate)

ROOT = Path(__file__).resolve().parent.parent


def run_case(path: Path, out: Path) -> str:
    cfg = load_config(path)
    a = cfg.analysis
    t0 = time.perf_counter()
    tr = simulate(SimScenario(cfg.plant, cfg.control, cfg.ad, a.events, t_end=a.t_end, dt=a.dt,
                              record=a.record, record_every=a.record_every))
    elapsed = time.perf_counter() - t0
    tr.to_csv(out / f"{path.stem}.csv")
    q_tail = tr["q"][tr.t > a.events[0].t + 1.0]
    line = f"{path.stem:28s} {elapsed:5.1f} s  q p-p after transient {np.ptp(q_tail):.3g}"
    try:
        f = a.fft
        win = f.window if f.window is not None else auto_window(tr, "q", f.t_start, f.max_dev)
        rep = dominant_frequency(tr, "q", win, f.f_min)
        line += f"  f={rep.dominant_freq:.1f} Hz growth={rep.growth_rate:+.2f}/s"
        ad_steps = [ev for ev in a.events if ev.target == "ad.gain"]
        if ad_steps and rep.growth_rate > 0:
            td = decay_time(tr, "q", ad_steps[-1].t, rep.dominant_freq)
            line += f"  decay to 1% in {td:.2f} s"
    except WindowTooShort:
        line += "  (no oscillation to analyse)"
    return line


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--only", help="run a single scenario by stem")
    ap.add_argument("--out", default=str(ROOT / "results" / "time_domain"))
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cases = sorted((ROOT / "configs").glob("sim_*.json"))
    if args.only:
        cases = [c for c in cases if c.stem == args.only]
    lines = [run_case(c, out) for c in cases]
    for line in lines:
        print(line)
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
