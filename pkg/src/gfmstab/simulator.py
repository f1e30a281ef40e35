"""Nonlinear average-model simulation of the converter on a Thevenin grid.

State vector (p.u., except ``delta`` in rad)::

    0..5   i_d, i_q, v_d, v_q, i_gd, i_gq   grid frame
    6      delta                             inverter voltage angle
    7      omega                             virtual rotor speed
    8      x_c                               droop filter output / droop-I integrator
    9, 10  z_d, z_q                          AD filter states, controller frame

The AD states are always allocated and stay frozen when no AD is used.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import signal as sps

from .errors import InvalidInput
from .loops import AdController
from .plant import (ControlLaw, ControlParams, PlantParams, circuit_matrices,
                    resonance_frequencies, solve_operating_point)

STATE_NAMES = ("i_d", "i_q", "v_d", "v_q", "i_gd", "i_gq", "delta", "omega", "x_c",
               "z_d", "z_q")
DERIVED_NAMES = ("p", "q", "V", "E", "e_d", "e_q")
SIGNAL_NAMES = STATE_NAMES + DERIVED_NAMES
DIVERGENCE_LIMIT = 100.0
INITIAL_RESIDUAL_TOL = 1e-8
MIN_FFT_SAMPLES = 1024

_CONTROL_FIELDS = ("H", "D_p", "D_q", "T_q", "k_pq", "k_iq", "P_st", "Q_st", "V_st", "omega_st")
_P = {name: i for i, name in enumerate(_CONTROL_FIELDS)}
_P.update(V_g=10, ad_gain=11, ad_T=12, law=13, has_ad=14, m0=15, m1=16, wn=17, wg=18)
_NPAR = 19


class InvalidScenario(InvalidInput):
    pass


class InitialResidualTooLarge(InvalidInput):
    pass


class WindowTooShort(InvalidInput):
    pass


@dataclass(frozen=True)
class EventStep:
    """Set ``target`` to ``new_value`` at time ``t``.

    Targets: ``control.<field>`` for the numeric fields of
    :class:`~gfmstab.plant.ControlParams`, ``ad.gain``, ``ad.time_const``
    and ``grid.V_g``.
    """

    t: float
    target: str
    new_value: float

    def __post_init__(self):
        group, _, name = self.target.partition(".")
        ok = ((group == "control" and name in _CONTROL_FIELDS)
              or (group == "ad" and name in ("gain", "time_const"))
              or (group == "grid" and name == "V_g"))
        if not ok:
            raise InvalidScenario(f"event target {self.target!r} is not a mutable scalar")
        if not math.isfinite(self.new_value):
            raise InvalidScenario(f"event value for {self.target} is not finite")


@dataclass(frozen=True)
class SimScenario:
    pp: PlantParams
    cp: ControlParams
    ad: AdController | None = None
    events: tuple = ()
    t_end: float = 1.0
    dt: float = 5e-6
    record: tuple = ("p", "q", "V", "omega", "delta")
    record_every: int = 4
    x0_offset: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "record", tuple(self.record))
        if self.dt <= 0 or self.t_end <= 0:
            raise InvalidScenario("dt and t_end must be positive")
        f_lcl = resonance_frequencies(self.pp).omega_LCL / (2 * math.pi)
        if self.dt > 1.0 / (20 * f_lcl):
            raise InvalidScenario(f"dt={self.dt:g} s exceeds 1/(20 f_LCL) = {1 / (20 * f_lcl):.3g} s")
        if self.record_every < 1:
            raise InvalidScenario("record_every must be >= 1")
        times = [ev.t for ev in self.events]
        if times != sorted(times):
            raise InvalidScenario("events must be sorted by time")
        if any(t < 0 or t >= self.t_end for t in times):
            raise InvalidScenario("event times must lie in [0, t_end)")
        for name in self.record:
            if name not in SIGNAL_NAMES:
                raise InvalidScenario(f"unknown signal {name!r}")
        for name in self.x0_offset:
            if name not in STATE_NAMES:
                raise InvalidScenario(f"unknown state {name!r} in x0_offset")
        if self.ad is None and any(ev.target.startswith("ad.") for ev in self.events):
            raise InvalidScenario("AD event without an AD controller")


@dataclass(frozen=True, eq=False)
class SimTrace:
    t: np.ndarray
    signals: dict
    diverged_at: float | None = None

    def __post_init__(self):
        n = len(self.t)
        for k, v in self.signals.items():
            if len(v) != n:
                raise ValueError(f"signal {k} has {len(v)} samples, expected {n}")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else math.nan

    def __getitem__(self, name: str) -> np.ndarray:
        return self.signals[name]

    def to_csv(self, path) -> None:
        names = list(self.signals)
        data = np.column_stack([self.t] + [self.signals[k] for k in names])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + names)
            for row in data:
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path, diverged_at: float | None = None) -> "SimTrace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        if header[0] != "t":
            raise InvalidInput("trace CSV must start with a 't' column")
        return cls(t=body[:, 0], signals={k: body[:, i + 1] for i, k in enumerate(header[1:])},
                   diverged_at=diverged_at)


@numba.njit(cache=True)
def _rhs(x, A, B, bvg, par, out):
    c = math.cos(x[6])
    s = math.sin(x[6])
    vd, vq, igd, igq = x[2], x[3], x[4], x[5]
    p = vd * igd + vq * igq
    q = vq * igd - vd * igq
    V = math.sqrt(vd * vd + vq * vq)
    if par[13] == 0.0:
        E = par[8] + (par[7] - x[8]) / par[2]
        out[8] = (q - x[8]) / par[3]
    else:
        err = par[2] * (par[8] - V) + par[7] - q
        E = x[8] + par[4] * err
        out[8] = par[5] * err
    ecd = E
    ecq = 0.0
    if par[14] != 0.0:
        md = x[int(par[15])]
        mq = x[int(par[16])]
        mcd = c * md + s * mq
        mcq = -s * md + c * mq
        T = par[12]
        kf = par[11] / T
        ecd -= kf * (mcd - x[9])
        ecq -= kf * (mcq - x[10])
        out[9] = (mcd - x[9]) / T
        out[10] = (mcq - x[10]) / T
    else:
        out[9] = 0.0
        out[10] = 0.0
    ed = c * ecd - s * ecq
    eq = s * ecd + c * ecq
    for i in range(6):
        acc = bvg[i] * par[10] + B[i, 0] * ed + B[i, 1] * eq
        for j in range(6):
            acc += A[i, j] * x[j]
        out[i] = acc
    out[6] = par[17] * (x[7] - par[18])
    out[7] = (par[6] - p - par[1] * (x[7] - par[9])) / (2.0 * par[0])


@numba.njit(cache=True)
def _rk4(x, A, B, bvg, par, dt, k0, n_steps, stride, rec, n_rec, limit):
    """Advance ``n_steps`` steps from global step ``k0``; record every ``stride``.

    Returns ``(n_rec, diverged_step)`` with ``diverged_step = -1`` if bounded.
    """
    n = x.size
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for step in range(n_steps):
        k = k0 + step
        if k % stride == 0:
            for i in range(n):
                rec[n_rec, i] = x[i]
            n_rec += 1
        _rhs(x, A, B, bvg, par, k1)
        for i in range(n):
            tmp[i] = x[i] + 0.5 * dt * k1[i]
        _rhs(tmp, A, B, bvg, par, k2)
        for i in range(n):
            tmp[i] = x[i] + 0.5 * dt * k2[i]
        _rhs(tmp, A, B, bvg, par, k3)
        for i in range(n):
            tmp[i] = x[i] + dt * k3[i]
        _rhs(tmp, A, B, bvg, par, k4)
        bad = False
        for i in range(n):
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not abs(x[i]) <= limit:
                bad = True
        if bad:
            return n_rec, k + 1
    return n_rec, -1


def _param_vector(pp: PlantParams, cp: ControlParams, ad: AdController | None) -> np.ndarray:
    par = np.zeros(_NPAR)
    for name in _CONTROL_FIELDS:
        par[_P[name]] = getattr(cp, name)
    par[_P["V_g"]] = pp.V_g
    par[_P["law"]] = 0.0 if cp.law is ControlLaw.DROOP else 1.0
    par[_P["wn"]] = pp.omega_n
    par[_P["wg"]] = pp.omega_g
    if ad is not None:
        par[_P["has_ad"]] = 1.0
        par[_P["ad_gain"]] = ad.feedback_sign * ad.gain
        par[_P["ad_T"]] = ad.time_const
        par[_P["m0"]], par[_P["m1"]] = ad.kind.measured_states
    return par


def initial_state(pp: PlantParams, cp: ControlParams, ad: AdController | None = None):
    """Equilibrium state vector and operating point (flat start)."""
    op = solve_operating_point(pp, cp)
    x = np.zeros(len(STATE_NAMES))
    x[:6] = op.state
    x[6] = op.delta
    x[7] = pp.omega_g
    x[8] = op.q if cp.law is ControlLaw.DROOP else op.E
    if ad is not None:
        i, j = ad.kind.measured_states
        c, s = math.cos(op.delta), math.sin(op.delta)
        x[9] = c * x[i] + s * x[j]
        x[10] = -s * x[i] + c * x[j]
    return x, op


def rhs(x: np.ndarray, pp: PlantParams, cp: ControlParams,
        ad: AdController | None = None) -> np.ndarray:
    """Time derivative of the full state (python entry to the compiled model)."""
    A, B, bvg = circuit_matrices(pp)
    out = np.empty(len(STATE_NAMES))
    _rhs(np.asarray(x, dtype=float), A, B, bvg, _param_vector(pp, cp, ad), out)
    return out


def check_initial_state(x: np.ndarray, pp: PlantParams, cp: ControlParams,
                        ad: AdController | None = None, tol: float = INITIAL_RESIDUAL_TOL) -> float:
    """Per-unit equilibrium residual of ``x``; raises above ``tol``."""
    res = _scaled_residual(rhs(x, pp, cp, ad), pp, cp, ad)
    if res > tol:
        raise InitialResidualTooLarge(f"initial residual {res:.2e} exceeds {tol:.1e}")
    return res


def _scaled_residual(f: np.ndarray, pp: PlantParams, cp: ControlParams, ad) -> float:
    wn = pp.omega_n
    scale = np.array([pp.L_f, pp.L_f, pp.C_f, pp.C_f, pp.L_g, pp.L_g]) / wn
    r = list(np.abs(f[:6]) * scale)
    r.append(abs(f[6]) / wn)
    r.append(abs(f[7]) * 2 * cp.H)
    r.append(abs(f[8]) * (cp.T_q if cp.law is ControlLaw.DROOP else 1.0 / cp.k_iq))
    if ad is not None:
        r.extend(np.abs(f[9:11]) * ad.time_const)
    return float(max(r))


def _derived(X: np.ndarray, par: np.ndarray) -> dict:
    vd, vq, igd, igq = X[:, 2], X[:, 3], X[:, 4], X[:, 5]
    p = vd * igd + vq * igq
    q = vq * igd - vd * igq
    V = np.hypot(vd, vq)
    if par[_P["law"]] == 0.0:
        E = par[_P["V_st"]] + (par[_P["Q_st"]] - X[:, 8]) / par[_P["D_q"]]
    else:
        err = par[_P["D_q"]] * (par[_P["V_st"]] - V) + par[_P["Q_st"]] - q
        E = X[:, 8] + par[_P["k_pq"]] * err
    c, s = np.cos(X[:, 6]), np.sin(X[:, 6])
    ecd, ecq = E.copy(), np.zeros_like(E)
    if par[_P["has_ad"]]:
        md, mq = X[:, int(par[_P["m0"]])], X[:, int(par[_P["m1"]])]
        kf = par[_P["ad_gain"]] / par[_P["ad_T"]]
        ecd -= kf * (c * md + s * mq - X[:, 9])
        ecq -= kf * (-s * md + c * mq - X[:, 10])
    return dict(p=p, q=q, V=V, E=E, e_d=c * ecd - s * ecq, e_q=s * ecd + c * ecq)


def _apply_event(par: np.ndarray, ev: EventStep, cp: ControlParams, ad) -> tuple:
    group, _, name = ev.target.partition(".")
    try:
        if group == "control":
            cp = cp.replace(**{name: ev.new_value})
            par[_P[name]] = ev.new_value
        elif group == "ad":
            ad = ad.replace(**{name: ev.new_value})
            par[_P["ad_gain"]] = ad.feedback_sign * ad.gain
            par[_P["ad_T"]] = ad.time_const
        else:
            if ev.new_value <= 0:
                raise InvalidInput("V_g must be positive")
            par[_P["V_g"]] = ev.new_value
    except InvalidInput as exc:
        raise InvalidScenario(f"event at t={ev.t}: {exc}") from exc
    return cp, ad


def simulate(sc: SimScenario) -> SimTrace:
    """Fixed-step RK4 from the operating point, events between steps.

    A run whose state leaves ``|x| <= 100`` is cut short and flagged with
    ``diverged_at``; that is a result, not an error.
    """
    x, _ = initial_state(sc.pp, sc.cp, sc.ad)
    check_initial_state(x, sc.pp, sc.cp, sc.ad)
    for name, dv in sc.x0_offset.items():
        x[STATE_NAMES.index(name)] += dv
    A, B, bvg = circuit_matrices(sc.pp)
    par = _param_vector(sc.pp, sc.cp, sc.ad)
    n_total = int(round(sc.t_end / sc.dt))
    stride = sc.record_every
    rec = np.empty((n_total // stride + 2, x.size))
    bounds = [int(round(ev.t / sc.dt)) for ev in sc.events] + [n_total]
    cp, ad = sc.cp, sc.ad
    n_rec, k, diverged = 0, 0, None
    derived_blocks = []
    for i, k_next in enumerate(bounds):
        start_rec = n_rec
        n_rec, dstep = _rk4(x, A, B, bvg, par, sc.dt, k, k_next - k, stride, rec, n_rec,
                            DIVERGENCE_LIMIT)
        derived_blocks.append((start_rec, n_rec, par.copy()))
        if dstep >= 0:
            diverged = dstep * sc.dt
            break
        k = k_next
        if i < len(sc.events):
            cp, ad = _apply_event(par, sc.events[i], cp, ad)
    else:
        if n_total % stride == 0:
            rec[n_rec] = x
            derived_blocks.append((n_rec, n_rec + 1, par.copy()))
            n_rec += 1
    X = rec[:n_rec]
    t = np.arange(n_rec) * stride * sc.dt
    want_derived = [name for name in sc.record if name in DERIVED_NAMES]
    derived = {name: np.empty(n_rec) for name in want_derived}
    if want_derived:
        for a, b, pv in derived_blocks:
            if b > a:
                d = _derived(X[a:b], pv)
                for name in want_derived:
                    derived[name][a:b] = d[name]
    signals = {}
    for name in sc.record:
        signals[name] = derived[name] if name in derived else X[:, STATE_NAMES.index(name)].copy()
    return SimTrace(t=t, signals=signals, diverged_at=diverged)


# ------------------------------------------------------------- spectra

@dataclass(frozen=True)
class FftReport:
    signal: str
    dominant_freq: float
    amplitude: float
    window: tuple
    growth_rate: float

    def format(self) -> str:
        return "\n".join([
            "signal,dominant_freq_hz,amplitude,t_start,t_end,growth_rate",
            f"{self.signal},{self.dominant_freq:.6g},{self.amplitude:.6g},"
            f"{self.window[0]:.6g},{self.window[1]:.6g},{self.growth_rate:.6g}",
        ])


def _window_slice(tr: SimTrace, window) -> slice:
    t0, t1 = window
    if t0 < tr.t[0] - 1e-12 or t1 > tr.t[-1] + 1e-12 or t1 <= t0:
        raise InvalidInput(f"window {window} outside trace [{tr.t[0]}, {tr.t[-1]}]")
    i0 = int(np.searchsorted(tr.t, t0 - 1e-12))
    i1 = int(np.searchsorted(tr.t, t1 + 1e-12))
    if i1 - i0 < MIN_FFT_SAMPLES:
        raise WindowTooShort(f"{i1 - i0} samples in window, need {MIN_FFT_SAMPLES}")
    return slice(i0, i1)


def band_envelope(x: np.ndarray, dt: float, f0: float, rel_band: float = 0.2) -> np.ndarray:
    """Magnitude of the analytic signal of ``x`` band-passed around ``f0``."""
    nyq = 0.5 / dt
    lo = max(f0 * (1 - rel_band), 1e-3 * nyq)
    hi = min(f0 * (1 + rel_band), 0.99 * nyq)
    sos = sps.butter(4, [lo, hi], btype="bandpass", fs=1.0 / dt, output="sos")
    y = sps.sosfiltfilt(sos, x - np.mean(x))
    return np.abs(sps.hilbert(y))


def dominant_frequency(tr: SimTrace, signal: str, window: tuple,
                       f_min: float = 0.0) -> FftReport:
    """Hann-windowed FFT peak with quadratic interpolation, plus envelope growth.

    The peak search ignores bins below ``f_min`` (Hz). ``growth_rate`` is
    the least-squares slope of the log envelope of the signal band-passed
    around the peak, over the central 80% of the window.
    """
    sl = _window_slice(tr, window)
    x = np.asarray(tr[signal][sl], dtype=float)
    t = tr.t[sl]
    dt = tr.dt
    n = x.size
    w = sps.get_window("hann", n)
    X = np.abs(np.fft.rfft(sps.detrend(x) * w))
    f = np.fft.rfftfreq(n, dt)
    valid = np.flatnonzero((f >= f_min) & (f > 0))
    k = int(valid[np.argmax(X[valid])])
    delta = 0.0
    if 0 < k < X.size - 1 and min(X[k - 1], X[k], X[k + 1]) > 0:
        a, b, c = np.log(X[k - 1:k + 2])
        den = a - 2 * b + c
        delta = 0.5 * (a - c) / den if den != 0 else 0.0
    f0 = float((k + delta) * f[1])
    amp = float(2 * X[k] / np.sum(w))
    env = band_envelope(x, dt, f0)
    m = slice(n // 10, n - n // 10)
    good = env[m] > 0
    slope = np.polyfit(t[m][good], np.log(env[m][good]), 1)[0] if good.sum() > 2 else math.nan
    return FftReport(signal=signal, dominant_freq=f0, amplitude=amp,
                     window=(float(t[0]), float(t[-1])), growth_rate=float(slope))


def auto_window(tr: SimTrace, signal: str, t_start: float, max_dev: float = 0.05) -> tuple:
    """From ``t_start`` until the signal first departs ``max_dev`` from its value there.

    Keeps FFT windows in the small-signal regime of a growing oscillation.
    """
    i0 = int(np.searchsorted(tr.t, t_start))
    x = tr[signal]
    dev = np.abs(x[i0:] - x[i0])
    over = np.flatnonzero(dev > max_dev)
    i1 = i0 + int(over[0]) if over.size else x.size - 1
    return float(tr.t[i0]), float(tr.t[i1])


def decay_time(tr: SimTrace, signal: str, t_event: float, f0: float, level: float = 0.01,
               rel_band: float = 0.2) -> float:
    """Time after ``t_event`` at which the oscillation envelope last exceeds ``level`` of its peak.

    The peak is taken from ``t_event`` onwards; ``0`` means the envelope
    never exceeds the level after the peak.
    """
    env = band_envelope(tr[signal], tr.dt, f0, rel_band)
    i0 = int(np.searchsorted(tr.t, t_event))
    # ignore filter edge effects at the end of the record
    tail = max(1, int(0.05 / tr.dt))
    e = env[i0:-tail]
    peak_i = int(np.argmax(e))
    above = np.flatnonzero(e[peak_i:] > level * e[peak_i])
    return float(tr.t[i0 + peak_i + above[-1]] - t_event)
