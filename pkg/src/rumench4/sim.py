"""Deterministic synthetic traces with a ground-truth ledger.

The in-rumen channel follows a fill-and-vent model: gas accumulates at a
production rate (raised for a while after each meal, zero during rest
windows around postural changes), clips at the sensor ceiling and drops
instantly by a random fraction at each eructation.  Eructations inside
a presence interval also push a diluted puff into the ambient sampler,
shaped by its first-order response, on top of a drifting ambient
baseline.  The in-rumen logger clock drifts linearly.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .core import (MAX_DRIFT_S, SCOUT_CEILING_PPM, SNIFFER_SENSOR, IntervalSet, Series, Unit,
                   format_timestamp)
from .errors import ConfigError, DataError
from .units import M_CH4, M_CO2, ppm_to_mg_m3

TRUTH_SCHEMA = "rumench4.simtruth/1"


@dataclass(frozen=True)
class SimConfig:
    seed: int = 42
    start_utc: float = 1726099200.0  # 2024-09-12T00:00:00Z
    duration_h: float = 24.0
    scout_dt: float = 10.0
    sniffer_dt: float = 1.0
    # in-rumen gas
    baseline_rumen_ppm: float = 2500.0
    initial_rumen_ppm: float = 20000.0
    production_ppm_s: float = 25.0
    vent_scale_ppm: float = 12000.0
    eructation_rate_factor: float = 1.0
    vent_frac_min: float = 0.35
    vent_frac_max: float = 0.65
    min_vent_ppm: float = 8000.0
    refractory_s: float = 60.0
    ceiling_ppm: float = SCOUT_CEILING_PPM
    scout_noise_ppm: float = 20.0
    scout_resolution_ppm: float = 100.0
    scout_init_nan_s: float = 120.0
    clock_drift_s_per_day: float = 45.0
    # schedules
    meals_per_day: float = 4.0
    meal_min_range: tuple[float, float] = (45.0, 75.0)
    feeding_lag_s: float = 1800.0
    feeding_boost_ppm_s: float = 75.0
    feeding_halfwidth_s: float = 600.0
    meal_vent_ramp: float = 0.0  # eructation-rate gain reached by the end of a meal
    # slow latent activity: raises eructation rate and lowers dilution together
    episode_timescale_s: float = 0.0  # 0 disables
    episode_rate_gain: float = 0.0
    episode_dilution_gain: float = 0.0
    presence_frac: float = 0.17
    visit_min_range: tuple[float, float] = (3.0, 8.0)
    posture_per_day: float = 4.0
    sitting_min_range: tuple[float, float] = (40.0, 80.0)
    posture_step_ppm: float = 14500.0
    posture_quiet_s: float = 1000.0
    pump_resets_per_day: float = 10.0
    # ambient sampler
    dilution_min: float = 100.0
    dilution_max: float = 1000.0
    puff_rise_s: float = 5.0
    puff_plateau_s: float = 10.0
    puff_fall_s: float = 5.0
    sniffer_tau_s: float = SNIFFER_SENSOR.tau_s
    hood_residence_s: float = 0.0  # slow washout of gas retained in the hood; 0 disables
    hood_gain: float = 0.0
    ambient_ch4_ppm: float = 300.0
    ambient_ch4_slope_ppm_day: float = 100.0
    ambient_ch4_amp_ppm: float = 40.0
    ch4_noise_ppm: float = 3.0
    ambient_co2_ppm: float = 450.0
    ambient_co2_amp_ppm: float = 30.0
    co2_noise_ppm: float = 5.0
    presence_co2_min_ppm: float = 700.0
    presence_co2_max_ppm: float = 1200.0
    co2_ramp_s: float = 15.0
    flow_l_min: float = 1.1
    flow_noise_l_min: float = 0.01
    reset_low_min_s: float = 5.0
    reset_low_max_s: float = 15.0
    reset_recovery_s: float = 20.0
    temp_c: float = 15.0
    temp_amp_c: float = 5.0
    pressure_mbar: float = 1013.25
    pressure_amp_mbar: float = 3.0

    def __post_init__(self):
        if self.duration_h <= 0 or self.scout_dt <= 0 or self.sniffer_dt <= 0:
            raise ConfigError("durations and sampling intervals must be positive")
        if self.scout_dt % self.sniffer_dt != 0 or self.sniffer_dt != 1.0:
            raise ConfigError("the simulator runs on a 1 s clock; scout_dt must be a whole number of seconds")
        if not 1.0 <= self.dilution_min <= self.dilution_max:
            raise ConfigError("dilution factors must satisfy 1 <= min <= max")
        rates = (self.production_ppm_s, self.meal_vent_ramp, self.eructation_rate_factor, self.meals_per_day,
                 self.posture_per_day, self.pump_resets_per_day, self.feeding_boost_ppm_s)
        if any(r < 0 for r in rates):
            raise ConfigError("rates must be non-negative")
        if not 0 < self.vent_frac_min <= self.vent_frac_max < 1:
            raise ConfigError("vent fractions must lie in (0, 1)")
        if not 0 <= self.presence_frac < 1:
            raise ConfigError("presence_frac must lie in [0, 1)")
        if min(self.episode_timescale_s, self.episode_rate_gain, self.episode_dilution_gain) < 0:
            raise ConfigError("episode settings must be non-negative")
        if self.hood_residence_s < 0 or self.hood_gain < 0:
            raise ConfigError("hood_residence_s and hood_gain must be non-negative")
        if abs(self.clock_drift_s_per_day) * self.duration_h / 24.0 > MAX_DRIFT_S:
            raise ConfigError(f"accumulated clock drift exceeds the correctable {MAX_DRIFT_S:.0f} s")
        if self.vent_scale_ppm <= 0:
            raise ConfigError("vent_scale_ppm must be positive")


@dataclass
class SimTruth:
    """Ground-truth ledger of one simulated deployment."""

    start: float
    end: float
    scout_dt: float
    sniffer_dt: float
    eructations: list[dict] = field(default_factory=list)
    presence: list[list[float]] = field(default_factory=list)
    pump_resets: list[list[float]] = field(default_factory=list)
    feeding: list[float] = field(default_factory=list)
    posture: list[dict] = field(default_factory=list)
    quiet: list[list[float]] = field(default_factory=list)
    ambient_ch4: dict = field(default_factory=dict)
    clock_anchors: list[list[float]] = field(default_factory=list)
    programmed: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["schema"] = TRUTH_SCHEMA
        return json.dumps(d, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SimTruth":
        d = json.loads(text)
        if d.pop("schema", None) != TRUTH_SCHEMA:
            raise DataError("not a simulator truth file")
        return cls(**d)

    @property
    def presence_set(self) -> IntervalSet:
        return IntervalSet.from_pairs(self.presence)

    @property
    def reset_set(self) -> IntervalSet:
        return IntervalSet.from_pairs(self.pump_resets)

    def ambient_at(self, t) -> np.ndarray:
        a = self.ambient_ch4
        grid = a["t0"] + a["dt"] * np.arange(len(a["values"]))
        return np.interp(np.asarray(t, dtype=float), grid, a["values"])


@dataclass
class SimOutput:
    scout_csv: str
    sniffer_csv: str
    behavior_csv: str
    truth: SimTruth

    FILENAMES = ("scout.csv", "sniffer.csv", "behavior.csv", "truth.json")

    def contents(self) -> dict[str, str]:
        return dict(zip(self.FILENAMES, (self.scout_csv, self.sniffer_csv,
                                         self.behavior_csv, self.truth.to_json())))

    def write(self, out_dir) -> dict[str, Path]:
        from .fileio import atomic_write_text
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, text in self.contents().items():
            paths[name] = out / name
            atomic_write_text(paths[name], text)
        return paths


def coupled_scenario(seed: int = 42, **overrides) -> SimConfig:
    """Long feeding bouts with activity episodes coupling both channels.

    Frequent small vents keep the in-rumen level tracking the eructation
    rate, which rises with a slow latent activity; during the same
    episodes the animal's head sits deeper in the hood (lower dilution)
    and vented gas lingers in the hood.  Fast mixing noise on the
    in-rumen channel masks the coupling in short windows.
    """
    kw = dict(
        seed=seed, duration_h=96.0, clock_drift_s_per_day=25.0,
        meals_per_day=4.0, meal_min_range=(100.0, 150.0), presence_frac=0.3,
        posture_per_day=0.0, pump_resets_per_day=2.0,
        production_ppm_s=100.0, vent_scale_ppm=5000.0, vent_frac_min=0.15, vent_frac_max=0.25,
        min_vent_ppm=4000.0, refractory_s=30.0, scout_noise_ppm=5000.0,
        hood_residence_s=300.0, hood_gain=15.0,
        episode_timescale_s=1200.0, episode_rate_gain=0.8, episode_dilution_gain=1.0,
    )
    kw.update(overrides)
    return SimConfig(**kw)


# --------------------------------------------------------------------------
# Building blocks


def puff_shape(cfg: SimConfig) -> np.ndarray:
    """Unit-height puff at 1 s resolution: cosine rise, plateau, cosine fall."""
    rise = 0.5 * (1 - np.cos(np.pi * np.arange(1, int(cfg.puff_rise_s) + 1) / (cfg.puff_rise_s + 1)))
    flat = np.ones(int(cfg.puff_plateau_s))
    return np.concatenate([rise, flat, rise[::-1]])


def sensor_response(u: np.ndarray, tau_s: float, dt: float = 1.0) -> np.ndarray:
    """First-order lag with time constant ``tau_s`` (unit DC gain)."""
    a = math.exp(-dt / tau_s)
    return lfilter([1.0 - a], [1.0, -a], u)


def sniffer_pulse(magnitude_ppm: float, dilution: float, cfg: SimConfig = SimConfig()) -> np.ndarray:
    """Ambient-sampler response to one eructation, before smoothing."""
    shape = puff_shape(cfg)
    u = np.concatenate([shape, np.zeros(int(10 * cfg.sniffer_tau_s) + 1)])
    return sensor_response(u * magnitude_ppm / dilution, cfg.sniffer_tau_s)


def _bump(u: np.ndarray, halfwidth: float) -> np.ndarray:
    return np.where(np.abs(u) < halfwidth, 0.5 * (1 + np.cos(np.pi * u / halfwidth)), 0.0)


class _Timeline:
    def __init__(self):
        self.busy: dict[str, list[tuple[float, float]]] = {}

    def add(self, kind, a, b):
        self.busy.setdefault(kind, []).append((a, b))

    def free(self, a, b, kinds, gap=0.0):
        for k in kinds:
            for s, e in self.busy.get(k, ()):
                if a < e + gap and b > s - gap:
                    return False
        return True


def _place(rng, lo, hi, length_fn, check, what, attempts=2000):
    for _ in range(attempts):
        length = length_fn()
        if hi - length <= lo:
            break
        a = float(np.floor(rng.uniform(lo, hi - length)))
        if check(a, a + length):
            return a, length
    raise ConfigError(f"infeasible schedule: cannot place {what}")


def _schedule(cfg: SimConfig, rng, D: float):
    tl = _Timeline()
    lo, hi = 1800.0, D - 3600.0
    per_day = D / 86400.0
    feed_reserve_after = cfg.feeding_lag_s + cfg.feeding_halfwidth_s + 900.0

    meals = []
    n_meals = int(round(cfg.meals_per_day * per_day))
    if n_meals:
        slot = D / n_meals
        for m in range(n_meals):
            f = float(np.floor(max(lo, m * slot + rng.uniform(0.1, 0.3) * slot)))
            dur = 60.0 * rng.uniform(*cfg.meal_min_range)
            if not tl.free(f, f + dur, ["presence"], gap=120.0):
                raise ConfigError("infeasible schedule: meals overlap")
            meals.append((f, f + dur))
            tl.add("presence", f, f + dur)
            tl.add("feed_window", f - 600.0, f + feed_reserve_after)

    postures = []
    Q = cfg.posture_quiet_s
    for _ in range(int(round(cfg.posture_per_day * per_day))):
        sit = [0.0]

        def length():
            sit[0] = 60.0 * rng.uniform(*cfg.sitting_min_range)
            return Q + max(Q, sit[0])

        def ok(a, b):
            return (tl.free(a, b, ["feed_window", "posture"])
                    and tl.free(a, a + Q + sit[0], ["presence"], gap=60.0))

        a, _ = _place(rng, lo, hi, length, ok, "posture change")
        p = a + Q
        postures.append((p, p + sit[0]))
        tl.add("posture", a, p + max(Q, sit[0]))
        tl.add("sitting", p - Q, p + sit[0])

    visits = []
    remaining = cfg.presence_frac * D - sum(e - s for s, e in meals)
    while remaining > 60.0:
        dur = min(60.0 * rng.uniform(*cfg.visit_min_range), max(remaining, 60.0))
        a, _ = _place(rng, lo, hi, lambda: dur,
                      lambda a, b: tl.free(a, b, ["presence"], gap=120.0) and tl.free(a, b, ["sitting"], gap=60.0),
                      "hood visit")
        visits.append((a, a + dur))
        tl.add("presence", a, a + dur)
        remaining -= dur

    resets = []
    for _ in range(int(round(cfg.pump_resets_per_day * per_day))):
        low = rng.uniform(cfg.reset_low_min_s, cfg.reset_low_max_s)
        a, _ = _place(rng, 600.0, D - 600.0, lambda: 60.0,
                      lambda a, b: tl.free(a, b, ["reset"], gap=300.0), "pump reset")
        resets.append((a, low))
        tl.add("reset", a, a + 60.0)
    return meals, postures, sorted(visits), sorted(resets)


# --------------------------------------------------------------------------


def _fmt(x, nd):
    return "" if not math.isfinite(x) else f"{x:.{nd}f}"


def simulate(cfg: SimConfig = SimConfig()) -> SimOutput:
    """Generate the four files of one deployment plus truth.

    Identical configurations give byte-identical output.
    """
    rng = np.random.default_rng(cfg.seed)
    D = float(round(cfg.duration_h * 3600.0))
    N = int(D)
    T0 = float(cfg.start_utc)
    k = np.arange(N, dtype=float)

    meals, postures, visits, resets = _schedule(cfg, rng, D)
    presence = sorted(meals + visits)
    pres_set = IntervalSet.from_pairs(presence)

    # --- in-rumen dynamics on a 1 s clock
    prod = np.full(N, cfg.production_ppm_s)
    for f, _ in meals:
        prod += cfg.feeding_boost_ppm_s * _bump(k - (f + cfg.feeding_lag_s), cfg.feeding_halfwidth_s)
    quiet = np.zeros(N, dtype=bool)
    quiet_windows = []
    for p, _ in postures:
        a, b = int(p - cfg.posture_quiet_s), int(p + cfg.posture_quiet_s)
        quiet[max(a, 0):min(b, N)] = True
        quiet_windows.append([T0 + a, T0 + b])
    prod[quiet] = 0.0
    lam = prod / cfg.vent_scale_ppm * cfg.eructation_rate_factor
    for f, e in meals:
        a, b = int(f), min(int(e), N)
        lam[a:b] *= 1.0 + cfg.meal_vent_ramp * (k[a:b] - f) / (e - f)
    activity = np.zeros(N)
    if cfg.episode_timescale_s > 0:
        phi = math.exp(-1.0 / cfg.episode_timescale_s)
        activity = lfilter([math.sqrt(1 - phi * phi)], [1.0, -phi], rng.normal(0.0, 1.0, N))
        g = cfg.episode_rate_gain
        lam *= np.exp(g * activity)
    u = rng.random(N)
    frac = rng.uniform(cfg.vent_frac_min, cfg.vent_frac_max, N)
    steps = {int(p): cfg.posture_step_ppm for p, _ in postures}

    state = np.empty(N)
    s = min(cfg.initial_rumen_ppm, cfg.ceiling_ppm)
    last = -math.inf
    ceil_, floor_ = cfg.ceiling_ppm, cfg.baseline_rumen_ppm
    erucs = []
    prod_l, lam_l, u_l, frac_l, quiet_l = prod.tolist(), lam.tolist(), u.tolist(), frac.tolist(), quiet.tolist()
    for i in range(N):
        if i in steps:
            s = min(ceil_, s + steps[i])
        s = min(ceil_, s + prod_l[i])
        if not quiet_l[i] and i - last >= cfg.refractory_s and u_l[i] < lam_l[i]:
            vent = min(frac_l[i] * s, s - floor_)
            if vent >= cfg.min_vent_ppm:
                s -= vent
                last = i
                erucs.append((i, vent))
        state[i] = s

    # --- in-rumen logger
    n_sc = int(D // cfg.scout_dt)
    sc_idx = (np.arange(n_sc) * cfg.scout_dt).astype(int)
    noise = rng.normal(0.0, cfg.scout_noise_ppm, n_sc)
    res = cfg.scout_resolution_ppm
    scout_ppm = np.clip(np.round((state[sc_idx] + noise) / res) * res, 0.0, cfg.ceiling_ppm)
    t_true = T0 + sc_idx
    drift = cfg.clock_drift_s_per_day / 86400.0
    t_logged = t_true + drift * (t_true - T0)
    temp_in = 39.0 + rng.normal(0.0, 0.1, n_sc)
    buf = io.StringIO()
    buf.write("timestamp,ch4_ppm,temp_c,status\n")
    for i in range(n_sc):
        init = sc_idx[i] < cfg.scout_init_nan_s
        val = "NaN" if init else f"{scout_ppm[i]:.0f}"
        buf.write(f"{format_timestamp(t_logged[i])},{val},{temp_in[i]:.2f},{'INIT' if init else 'OK'}\n")
    scout_csv = buf.getvalue()

    # --- ambient sampler
    t_sn = T0 + k
    phase = 2 * np.pi * k / 86400.0
    ambient = (cfg.ambient_ch4_ppm + cfg.ambient_ch4_slope_ppm_day * k / 86400.0
               + cfg.ambient_ch4_amp_ppm * np.sin(phase - np.pi / 3))
    shape = puff_shape(cfg)
    drive = np.zeros(N)
    eruc_ledger = []
    for i, vent in erucs:
        inside = bool(pres_set.contains(float(i)))
        rec = {"t": T0 + i, "magnitude_ppm": vent, "in_presence": inside}
        if inside:
            d = float(rng.uniform(cfg.dilution_min, cfg.dilution_max))
            d = max(1.0, d * math.exp(-cfg.episode_dilution_gain * activity[i]))
            amp = vent / d
            seg = drive[i:i + shape.size]
            seg += amp * shape[:seg.size]
            rec.update(dilution=d, pulse_ppm=amp)
        eruc_ledger.append(rec)
    pulses = sensor_response(drive, cfg.sniffer_tau_s)
    if cfg.hood_residence_s > 0 and cfg.hood_gain > 0:
        pool = sensor_response(drive, cfg.hood_residence_s)
        pulses = pulses + cfg.hood_gain * sensor_response(pool, cfg.sniffer_tau_s)
    ch4 = ambient + pulses + rng.normal(0.0, cfg.ch4_noise_ppm, N)

    co2 = cfg.ambient_co2_ppm + cfg.ambient_co2_amp_ppm * np.sin(phase + np.pi / 4)
    elev = np.zeros(N)
    for a, b in presence:
        ia, ib = int(a), int(b)
        level = rng.uniform(cfg.presence_co2_min_ppm, cfg.presence_co2_max_ppm)
        kk = np.arange(ia, ib, dtype=float)
        ramp = np.clip(np.minimum(kk - a + 1, b - kk) / cfg.co2_ramp_s, 0.0, 1.0)
        wobble = lfilter([math.sqrt(1 - 0.98 ** 2)], [1.0, -0.98], rng.normal(0.0, 60.0, kk.size))
        elev[ia:ib] = ramp * (level + wobble)
    co2 = co2 + sensor_response(elev, cfg.sniffer_tau_s) + rng.normal(0.0, cfg.co2_noise_ppm, N)

    flow = cfg.flow_l_min + rng.normal(0.0, cfg.flow_noise_l_min, N)
    reset_ledger = []
    for a, low_s in resets:
        ia = int(a)
        depth = rng.uniform(0.0, 0.1)
        n_low = int(round(low_s))
        rec = np.linspace(depth, cfg.flow_l_min, int(cfg.reset_recovery_s) + 1)[1:]
        prof = np.concatenate([np.full(n_low, depth), rec])
        flow[ia:ia + prof.size] = prof + rng.normal(0.0, cfg.flow_noise_l_min, prof.size)
        below = np.flatnonzero(flow[ia:ia + prof.size] < 0.75)
        reset_ledger.append([T0 + ia, T0 + ia + int(below[-1]) + 1])
        # sampling disrupted while the pump restarts and purges
        da, db = ia - 1, ia + n_low + 30
        ch4[da:db] = ch4[da:db] * rng.uniform(0.0, 0.3, db - da)
        co2[da:db] = co2[da:db] * rng.uniform(0.0, 0.3, db - da)
    flow = np.maximum(flow, 0.0)

    temp = np.round(cfg.temp_c + cfg.temp_amp_c * np.sin(phase - np.pi / 2), 2)
    pres = np.round(cfg.pressure_mbar + cfg.pressure_amp_mbar * np.sin(phase / 2), 2)
    ch4_mg = ppm_to_mg_m3(ch4, temp, pres, M_CH4)
    co2_mg = ppm_to_mg_m3(co2, temp, pres, M_CO2)
    buf = io.StringIO()
    buf.write("timestamp,ch4_mg_m3,co2_mg_m3,flow_l_min,temp_c,pressure_mbar\n")
    for i in range(N):
        buf.write(f"{format_timestamp(t_sn[i])},{ch4_mg[i]:.5f},{co2_mg[i]:.4f},"
                  f"{flow[i]:.3f},{temp[i]:.2f},{pres[i]:.2f}\n")
    sniffer_csv = buf.getvalue()

    # --- behavior log
    rows = [(T0 + a, T0 + b, "head_in_hood") for a, b in presence]
    rows += [(T0 + a, T0 + b, "feeding") for a, b in meals]
    rows += [(T0 + p, T0 + e, "sitting") for p, e in postures]
    rows.sort()
    behavior_csv = "start,end,label\n" + "".join(
        f"{format_timestamp(a)},{format_timestamp(b)},{lab}\n" for a, b, lab in rows)

    amb_grid = np.arange(0, N + 60, 60, dtype=float)
    amb_grid = amb_grid[amb_grid <= N]
    amb_vals = (cfg.ambient_ch4_ppm + cfg.ambient_ch4_slope_ppm_day * amb_grid / 86400.0
                + cfg.ambient_ch4_amp_ppm * np.sin(2 * np.pi * amb_grid / 86400.0 - np.pi / 3))
    cfg_dict = {k_: (list(v) if isinstance(v, tuple) else v) for k_, v in dataclasses.asdict(cfg).items()}
    truth = SimTruth(
        start=T0, end=T0 + D, scout_dt=cfg.scout_dt, sniffer_dt=cfg.sniffer_dt,
        eructations=eruc_ledger,
        presence=[[T0 + a, T0 + b] for a, b in presence],
        pump_resets=reset_ledger,
        feeding=[T0 + f for f, _ in meals],
        posture=[{"t": T0 + p, "step_ppm": cfg.posture_step_ppm} for p, _ in postures],
        quiet=quiet_windows,
        ambient_ch4={"t0": T0, "dt": 60.0, "values": amb_vals.tolist()},
        clock_anchors=[[T0, T0], [T0 + D + drift * D, T0 + D]],
        programmed={"feeding_lag_s": cfg.feeding_lag_s, "posture_step_ppm": cfg.posture_step_ppm,
                    "warmup_nan_s": cfg.scout_init_nan_s},
        config=cfg_dict,
    )
    return SimOutput(scout_csv, sniffer_csv, behavior_csv, truth)


def filter_benchmark(cfg: SimConfig = SimConfig(), duration_s: int = 7200, n_puffs: int = 40,
                     level_ppm: float = 300.0) -> tuple[Series, Series, IntervalSet]:
    """Ambient-sampler trace of isolated eructation puffs for filter scoring.

    Returns (noisy series, noise-free truth, truth peak intervals).  Puff
    magnitudes and dilutions follow the simulator configuration.
    """
    rng = np.random.default_rng(cfg.seed)
    shape = puff_shape(cfg)
    gap = duration_s // (n_puffs + 1)
    drive = np.zeros(duration_s)
    peaks = []
    for j in range(n_puffs):
        t = (j + 1) * gap + int(rng.integers(-gap // 4, gap // 4 + 1))
        vent = rng.uniform(cfg.min_vent_ppm, 0.65 * cfg.ceiling_ppm)
        d = rng.uniform(cfg.dilution_min, min(cfg.dilution_max, 300.0))
        drive[t:t + shape.size] += vent / d * shape[:max(0, duration_s - t)]
        peaks.append((cfg.start_utc + t, cfg.start_utc + t + shape.size + 3 * cfg.sniffer_tau_s))
    clean = level_ppm + sensor_response(drive, cfg.sniffer_tau_s)
    noisy = clean + rng.normal(0.0, cfg.ch4_noise_ppm, duration_s)
    ok = np.ones(duration_s, bool)
    return (Series(cfg.start_utc, 1.0, noisy, ok, Unit.PPM),
            Series(cfg.start_utc, 1.0, clean, ok, Unit.PPM),
            IntervalSet.from_pairs(peaks))


# --------------------------------------------------------------------------
# Scoring against truth


def _match(truth: IntervalSet | list, detected: list[tuple[float, float]]) -> tuple[int, int]:
    """(truth intervals hit, detections hitting any truth interval)."""
    det = IntervalSet.from_pairs(detected) if detected else IntervalSet.empty()
    hit_truth = sum(det.overlaps(a, b) for a, b in truth)
    tset = IntervalSet.from_pairs(list(truth)) if len(truth) else IntervalSet.empty()
    hit_det = sum(tset.overlaps(a, b) for a, b in detected)
    return int(hit_truth), int(hit_det)


def _ratio(a, b):
    return a / b if b else None


def score_pipeline(truth: SimTruth, *, eructations: list | None = None,
                   pump_resets: IntervalSet | None = None, presence=None,
                   baseline: Series | None = None, posture_mean_ppm: float | None = None,
                   feeding_lag_s: float | None = None) -> dict:
    """Compare pipeline outputs with the truth ledger.

    Eructations match by interval overlap with ``[t - scout_dt, t + scout_dt]``
    (only eructations from ``t0 + warm-up + scout_dt`` onward are scorable).
    Presence is scored per valid sample of ``presence`` (a mask object with
    ``times``/``mask``, optionally ``valid``).  Baseline RMSE is taken over
    truth-absence samples where the baseline is valid.
    """
    report: dict = {"schema": "rumench4.score/1"}
    span = (truth.start, truth.end)

    def check_range(lo, hi, what):
        if lo < span[0] - 60.0 or hi > span[1] + 60.0:
            from .errors import AlignmentError
            raise AlignmentError(f"{what} time range lies outside the simulated span")

    if eructations is not None:
        det = [(e.start, e.end) if hasattr(e, "start") else tuple(e) for e in eructations]
        if det:
            check_range(min(a for a, _ in det), max(b for _, b in det), "eructation")
        first = truth.start + truth.programmed.get("warmup_nan_s", 0.0) + 180.0 + truth.scout_dt
        tr = [(e["t"] - truth.scout_dt, e["t"] + truth.scout_dt) for e in truth.eructations
              if first <= e["t"] <= truth.end - truth.scout_dt]
        ht, hd = _match(tr, det)
        report["eructations"] = {
            "truth": len(tr), "detected": len(det), "matched_truth": ht,
            "recall": _ratio(ht, len(tr)), "precision": _ratio(hd, len(det)),
            "false_positives": len(det) - hd,
        }
    if pump_resets is not None:
        tr = [tuple(r) for r in truth.pump_resets]
        det = list(pump_resets)
        ht, hd = _match(tr, det)
        report["pump_resets"] = {"truth": len(tr), "detected": len(det), "recovered": ht,
                                 "false_events": len(det) - hd, "all_recovered": ht == len(tr)}
    if presence is not None:
        times = presence.times
        check_range(times[0], times[-1], "presence")
        valid = getattr(presence, "valid", None)
        valid = np.ones(times.size, bool) if valid is None else np.asarray(valid, bool)
        want = truth.presence_set.contains(times)
        got = np.asarray(presence.mask, bool)
        tp = int(np.count_nonzero(want & got & valid))
        report["presence"] = {
            "truth_samples": int(np.count_nonzero(want & valid)),
            "flagged_samples": int(np.count_nonzero(got & valid)),
            "recall": _ratio(tp, np.count_nonzero(want & valid)),
            "precision": _ratio(tp, np.count_nonzero(got & valid)),
            "pct_time_truth": 100.0 * float(np.mean(want)),
            "pct_time_detected": 100.0 * float(np.mean(got)),
        }
    if baseline is not None:
        times = baseline.times
        check_range(times[0], times[-1], "baseline")
        use = baseline.valid & ~truth.presence_set.contains(times)
        ref = truth.ambient_at(times[use])
        err = baseline.values[use] - ref
        rmse = float(np.sqrt(np.mean(err ** 2))) if err.size else None
        mean_amb = float(np.mean(ref)) if ref.size else None
        report["baseline"] = {"rmse_ppm": rmse, "mean_ambient_ppm": mean_amb,
                              "rmse_frac": _ratio(rmse, mean_amb) if rmse is not None else None,
                              "samples": int(err.size)}
    if posture_mean_ppm is not None:
        step = truth.programmed["posture_step_ppm"]
        report["posture"] = {"programmed_ppm": step, "recovered_ppm": posture_mean_ppm,
                             "rel_error": abs(posture_mean_ppm - step) / step}
    if feeding_lag_s is not None:
        lag = truth.programmed["feeding_lag_s"]
        report["feeding"] = {"programmed_s": lag, "recovered_s": feeding_lag_s,
                             "abs_error_s": abs(feeding_lag_s - lag)}
    return report
