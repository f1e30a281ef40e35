"""Command-line front end.

Exit codes: 0 analysis completed (also when the verdict is unstable or a
simulation diverged), 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, load_config
from .errors import InvalidInput, NumericalFailure
from .loops import char_coeffs_lossless, rap_model
from .plant import ControlLaw, solve_operating_point
from .simulator import (SimScenario, WindowTooShort, auto_window, dominant_frequency,
                        simulate)
from .stability import closed_loop_poles, margins, nyquist, routh, verdict

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
POLE_COLUMNS = ("label", "re", "im", "kind", "rhp")


# ------------------------------------------------------------ analyses

def _label_poles(poles: np.ndarray, omega_ref: float, kind: str, eps: float, hz: bool):
    poles = sorted(poles, key=lambda p: (abs(p.imag) <= 0.5 * omega_ref, -p.imag, p.real))
    rows, counts = [], {"hf": 0, "lf": 0}
    for p in poles:
        band = "hf" if abs(p.imag) > 0.5 * omega_ref else "lf"
        counts[band] += 1
        im = p.imag / (2 * math.pi) if hz else p.imag
        rows.append({"label": f"{band}{counts[band]}", "re": float(p.real), "im": float(im),
                     "kind": kind, "rhp": bool(p.real > eps)})
    return rows


def pole_table(cfg: ScenarioConfig, hz: bool = False) -> list:
    """Open- and closed-loop poles of the reactive power loop."""
    _, _, m = rap_model(cfg.plant, cfg.control, cfg.ad)
    cl = closed_loop_poles(m)
    return (_label_poles(m.ol_poles, m.omega_ref, "OL", m.stability_eps, hz)
            + _label_poles(cl, m.omega_ref, "CL", m.stability_eps, hz))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows: list, columns, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])


def read_pole_csv(fh) -> list:
    rows = []
    reader = csv.DictReader(fh)
    for r in reader:
        im_key = "im" if "im" in r else "im_hz"
        rows.append({"label": r["label"], "re": float(r["re"]), "im": float(r[im_key]),
                     "kind": r["kind"], "rhp": r["rhp"] == "true"})
    return rows


def verdict_for(cfg: ScenarioConfig):
    _, _, m = rap_model(cfg.plant, cfg.control, cfg.ad)
    a = cfg.analysis
    rep = nyquist(m, a.omega_min, a.omega_max, a.pts)
    return m, rep, verdict(m, rep)


def routh_for(cfg: ScenarioConfig):
    """Routh report of the open-loop pole polynomial.

    With ``lossless_routh`` under droop-I the closed-form quintic of the
    lossless plant is used instead.
    """
    if cfg.analysis.lossless_routh:
        pp = cfg.plant.without_losses()
        if cfg.control.law is ControlLaw.DROOP_I:
            op = solve_operating_point(pp, cfg.control)
            c = cfg.control
            return routh(char_coeffs_lossless(pp, op, c.D_q, c.k_pq, c.k_iq).polynomial())
        _, _, m = rap_model(pp, cfg.control, cfg.ad)
    else:
        _, _, m = rap_model(cfg.plant, cfg.control, cfg.ad)
    return routh(m.tf.den)


# -------------------------------------------------------------- output

class _Sink:
    def __init__(self, out: str | None):
        self.dir = Path(out) if out else None
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def emit(self, name: str, text: str) -> None:
        if self.dir is None:
            sys.stdout.write(text if text.endswith("\n") else text + "\n")
        else:
            (self.dir / name).write_text(text if text.endswith("\n") else text + "\n")

    def info(self, text: str) -> None:
        if self.dir is not None:
            print(text)


def _csv_text(rows, columns) -> str:
    buf = io.StringIO()
    write_csv(rows, columns, buf)
    return buf.getvalue()


def _pole_columns(hz: bool):
    return ("label", "re", "im_hz" if hz else "im", "kind", "rhp")


def _rename_im(rows, hz):
    if not hz:
        return rows
    return [dict(r, im_hz=r["im"]) for r in rows]


def cmd_poles(cfg, args, sink) -> int:
    rows = pole_table(cfg, args.hz)
    sink.emit("poles.csv", _csv_text(_rename_im(rows, args.hz), _pole_columns(args.hz)))
    sink.info(f"poles: {len(rows)} rows, rhp={sum(r['rhp'] for r in rows if r['kind'] == 'OL')} OL / "
              f"{sum(r['rhp'] for r in rows if r['kind'] == 'CL')} CL")
    return EXIT_OK


def cmd_routh(cfg, args, sink) -> int:
    sink.emit("routh.txt", routh_for(cfg).format())
    return EXIT_OK


def cmd_nyquist(cfg, args, sink) -> int:
    _, rep, v = verdict_for(cfg)
    if sink.dir is not None:
        rep.to_csv(sink.dir / "nyquist.csv", hz=args.hz)
        sink.emit("verdict.txt", v.format())
        print(v.format())
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["freq_hz" if args.hz else "omega", "re", "im"])
        f = rep.omega / (2 * math.pi) if args.hz else rep.omega
        for x, g in zip(f, rep.G):
            w.writerow([repr(float(x)), repr(float(g.real)), repr(float(g.imag))])
        sys.stdout.write(buf.getvalue())
        print(v.format())
    return EXIT_OK


def cmd_margins(cfg, args, sink) -> int:
    m, rep, _ = verdict_for(cfg)
    sink.emit("margins.csv", margins(m, rep).format())
    return EXIT_OK


def cmd_verdict(cfg, args, sink) -> int:
    _, _, v = verdict_for(cfg)
    sink.emit("verdict.txt", v.format())
    if sink.dir is not None:
        print(v.format())
    return EXIT_OK


def cmd_simulate(cfg, args, sink) -> int:
    a = cfg.analysis
    sc = SimScenario(cfg.plant, cfg.control, cfg.ad, a.events, t_end=a.t_end, dt=a.dt,
                     record=a.record, record_every=a.record_every)
    tr = simulate(sc)
    if sink.dir is not None:
        tr.to_csv(sink.dir / "trace.csv")
    lines = [f"diverged_at={'none' if tr.diverged_at is None else f'{tr.diverged_at:.6g}'}"]
    f = a.fft
    if f.signal in tr.signals:
        try:
            if f.window is not None:
                win = (f.window[0], min(f.window[1], float(tr.t[-1])))
            else:
                t0 = f.t_start if f.t_start is not None else (
                    a.events[-1].t + 0.05 if a.events else float(tr.t[0]))
                win = auto_window(tr, f.signal, t0, f.max_dev)
            lines.append(dominant_frequency(tr, f.signal, win, f.f_min).format())
        except WindowTooShort as exc:
            lines.append(f"fft=unavailable ({exc})")
    else:
        lines.append(f"fft=unavailable (signal {f.signal!r} not recorded)")
    text = "\n".join(lines)
    sink.emit("fft.txt", text)
    if sink.dir is not None:
        print(text)
    return EXIT_OK


def _sweep_one(job):
    idx, cfg, hz, output = job
    sw = cfg.sweep
    value = sw.values[idx]
    c = cfg.with_parameter(sw.parameter, value)
    base = {"index": idx, "parameter": sw.parameter, "value": value}
    if output == "poles":
        return [dict(base, **r) for r in pole_table(c, hz)]
    m, rep, v = verdict_for(c)
    cl = closed_loop_poles(m)
    return [dict(base, P=v.P, N=v.N, Z=v.Z, stable=v.stable, max_cl_re=float(cl.real.max()))]


def cmd_sweep(cfg, args, sink) -> int:
    sw = cfg.sweep
    if sw is None:
        raise InvalidInput("sweep: block missing from config")
    jobs = [(i, cfg, args.hz, sw.output) for i in range(len(sw.values))]
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as ex:
        chunks = list(ex.map(_sweep_one, jobs))  # ordered by sweep index
    rows = [r for chunk in chunks for r in chunk]
    if sw.output == "poles":
        cols = ("index", "parameter", "value") + _pole_columns(args.hz)
        rows = _rename_im(rows, args.hz)
    else:
        cols = ("index", "parameter", "value", "P", "N", "Z", "stable", "max_cl_re")
    sink.emit("sweep.csv", _csv_text(rows, cols))
    sink.info(f"sweep: {len(sw.values)} values of {sw.parameter}")
    return EXIT_OK


COMMANDS = {"poles": cmd_poles, "routh": cmd_routh, "nyquist": cmd_nyquist,
            "margins": cmd_margins, "verdict": cmd_verdict, "simulate": cmd_simulate,
            "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario JSON file")
    common.add_argument("--out", help="output directory (default: stdout)")
    common.add_argument("--law", choices=["droop", "droop-i"], help="override control.law")
    common.add_argument("--ad", choices=["none", "inv-current", "grid-current", "cap-voltage"],
                        help="override the active damping block")
    common.add_argument("--hz", action="store_true", help="frequency columns in Hz")
    parser = argparse.ArgumentParser(prog="gfmstab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1, help="parallel workers")
        if name == "routh":
            p.add_argument("--lossless", action="store_true",
                           help="analyse the lossless characteristic polynomial")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.law:
            cfg = cfg.with_law(args.law)
        if args.ad:
            cfg = cfg.with_ad(args.ad)
        if getattr(args, "lossless", False):
            cfg = dataclasses.replace(cfg, analysis=dataclasses.replace(cfg.analysis,
                                                                         lossless_routh=True))
        return COMMANDS[args.command](cfg, args, _Sink(args.out))
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
