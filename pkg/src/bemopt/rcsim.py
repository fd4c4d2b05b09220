"""Two-node lumped-RC thermal simulation of one building week.

Stand-in for a detailed building energy model: maps static building
parameters, management-system schedules, occupancy and weather to the
eight hourly output channels. The zone is reduced to an air node and an
envelope mass node. All drivers are constant within an hour and the
proportional HVAC branch is linear in the state, so the trajectory is
integrated exactly (eigendecomposition of the 2x2 system) with explicit
event handling where the controller changes regime (off / proportional /
saturated). The per-hour energy ledger therefore balances to machine
precision and refining the sub-step partition cannot change the result
beyond float rounding.

Control timing: the HVAC mode (heat / cool / off) is latched once per
hour from the air temperature at the hour start, which makes heating and
cooling mutually exclusive within any hour by construction. The latched
branch then acts as an exact continuous proportional controller.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .schema import (
    HOURS_PER_DAY,
    HOURS_PER_WEEK,
    BmsSchedule,
    BuildingParams,
    OccupancySchedule,
    SimOutput,
    WeatherSeries,
    expand_daily,
)

# Fixed vertical wall areas; walls 1..4 carry the parameterized windows.
FACADE_AREAS_M2 = (3521.0, 2692.0, 3257.0, 599.0)
WALL5_AREA_M2 = 16329.0
TOTAL_WALL_AREA_M2 = sum(FACADE_AREAS_M2) + WALL5_AREA_M2

T_SANITY_LO = -30.0
T_SANITY_HI = 60.0

_OFF, _ACTIVE, _SAT = 0, 1, 2
_MAX_EVENTS_PER_HOUR = 64


class NumericalError(RuntimeError):
    """Simulation state went non-finite or left the sanity band."""

    def __init__(self, hour: int, message: str):
        super().__init__(f"hour {hour}: {message}")
        self.hour = hour


@dataclass(frozen=True)
class RcModelConfig:
    """Fixed physical constants of the simulated building.

    Everything the sampled BuildingParams do not cover: geometry, envelope
    construction, internal gain intensities and the control constants.
    """

    base_resistance_m2k_w: float = 0.5  # opaque assembly without insulation
    insulation_lambda_w_mk: float = 0.04
    window_u_w_m2k: float = 2.6
    wall5_u_w_m2k: float = 0.35  # fifth wall: fixed construction, no windows
    ground_u_w_m2k: float = 0.3
    facade_areas_m2: tuple[float, float, float, float] = FACADE_AREAS_M2
    wall5_area_m2: float = WALL5_AREA_M2
    roof_area_m2: float = 5747.0
    ground_area_m2: float = 5747.0
    floor_area_m2: float = 28733.0
    volume_m3: float = 86199.0
    shgc: float = 0.6
    solar_projection: float = 0.35  # horizontal-global to in-window projection
    solar_air_fraction: float = 0.4  # remainder of solar gain lands on the mass
    film_w_m2k: float = 8.0  # air-to-surface coupling
    occupant_gain_w: float = 100.0
    pc_gain_w: float = 120.0
    light_w_m2: float = 8.0
    air_heat_capacity_kj_m3k: float = 1.206
    ground_temp_c: float = 12.0
    hvac_gain_kw_k: float = 50.0
    deadband_k: float = 0.5
    substeps: int = 6

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            vals = v if isinstance(v, tuple) else (v,)
            if any(not (x > 0) for x in vals) and f.name != "ground_temp_c":
                raise ValueError(f"RcModelConfig.{f.name} must be positive, got {v}")
        if not 0 < self.solar_air_fraction <= 1:
            raise ValueError("solar_air_fraction must lie in (0, 1]")
        total = sum(self.facade_areas_m2) + self.wall5_area_m2
        if abs(total - TOTAL_WALL_AREA_M2) > 1e-6 * TOTAL_WALL_AREA_M2:
            raise ValueError(
                f"vertical wall area {total} m² deviates from the fixed total {TOTAL_WALL_AREA_M2} m²"
            )
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError("substeps must be a positive integer")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["facade_areas_m2"] = list(self.facade_areas_m2)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "RcModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown RcModelConfig fields: {sorted(unknown)}")
        kw = dict(d)
        if "facade_areas_m2" in kw:
            kw["facade_areas_m2"] = tuple(float(x) for x in kw["facade_areas_m2"])
        if "substeps" in kw:
            kw["substeps"] = int(kw["substeps"])
        return cls(**kw)

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "RcModelConfig":
        with open(path) as f:
            try:
                d = json.load(f)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        cfg = cls.from_dict(d)
        cfg.validate()
        return cfg


DEFAULT_RC_CONFIG = RcModelConfig()


@dataclass
class ZoneState:
    """Air and envelope-mass node temperatures (°C)."""

    t_air: float
    t_mass: float

    def check(self, hour: int) -> None:
        if not (math.isfinite(self.t_air) and math.isfinite(self.t_mass)):
            raise NumericalError(hour, f"non-finite state T_air={self.t_air}, T_mass={self.t_mass}")
        if not (T_SANITY_LO <= self.t_air <= T_SANITY_HI):
            raise NumericalError(
                hour, f"T_air={self.t_air:.2f} outside sanity band [{T_SANITY_LO}, {T_SANITY_HI}]"
            )


@dataclass(frozen=True)
class HvacDemand:
    heat_kw: float
    cool_kw: float
    setpoint: float  # the setpoint the active branch tracks


def _scheduled(hour_of_day: float, start: float, end: float) -> bool:
    return start <= hour_of_day < end


def hvac_control(
    t: float,
    hour: int,
    bms: BmsSchedule,
    gain: float = 50.0,
    heat_cap: float = math.inf,
    cool_cap: float = math.inf,
    deadband: float = 0.5,
) -> HvacDemand:
    """Proportional heating/cooling demand at one hour of the week.

    Setpoints follow the schedule (comfort value inside [start, end),
    reduced value outside). Cooling engages only above
    max(cooling setpoint, heating setpoint + deadband), so the two bands
    can never overlap even when the schedules would cross.
    """
    day = (hour // HOURS_PER_DAY) % 7
    hod = hour % HOURS_PER_DAY
    heat_sp = (
        bms.t_heat_conf_day[day]
        if _scheduled(hod, bms.start_heat_day[day], bms.end_heat_day[day])
        else bms.t_heat_red_day[day]
    )
    cool_sp = (
        bms.t_clim_conf_day[day]
        if _scheduled(hod, bms.start_clim_day[day], bms.end_clim_day[day])
        else bms.t_clim_red_day[day]
    )
    cool_threshold = max(cool_sp, heat_sp + deadband)
    heat = min(max(gain * (heat_sp - t), 0.0), heat_cap)
    cool = min(max(gain * (t - cool_threshold), 0.0), cool_cap)
    return HvacDemand(heat, cool, cool_threshold if cool > 0 else heat_sp)


def ahu_load(
    hour: int, bms: BmsSchedule, weather: WeatherSeries, cfg: RcModelConfig = DEFAULT_RC_CONFIG
) -> tuple[float, float]:
    """(Q_AHU_H, Q_AHU_C) in kW: tempering outside air to the supply setpoint."""
    day = (hour // HOURS_PER_DAY) % 7
    hod = hour % HOURS_PER_DAY
    if not _scheduled(hod, bms.start_ventilation_day[day], bms.end_ventilation_day[day]):
        return 0.0, 0.0
    g_vent = (
        cfg.air_heat_capacity_kj_m3k * bms.vol_ventilation_day[day] * cfg.volume_m3 / 3600.0
    )  # kW/K
    tamb = float(weather.tamb[hour])
    lift = bms.t_ventilation_day[day] - tamb
    if lift > 0:
        return g_vent * lift, 0.0
    return 0.0, -g_vent * lift


@dataclass
class EnergyLedger:
    """Per-hour stored-energy changes vs integrated fluxes (kWh)."""

    air_delta: np.ndarray
    air_flux: np.ndarray
    mass_delta: np.ndarray
    mass_flux: np.ndarray

    def max_relative_error(self) -> float:
        num = np.abs(self.air_delta - self.air_flux) + np.abs(self.mass_delta - self.mass_flux)
        scale = np.maximum(
            1e-9,
            np.abs(self.air_flux) + np.abs(self.mass_flux) + np.abs(self.air_delta) + np.abs(self.mass_delta),
        )
        return float(np.max(num / scale))


@dataclass
class SimResult:
    output: SimOutput
    ledger: EnergyLedger
    t_air: np.ndarray  # 169 node values at hour boundaries
    t_mass: np.ndarray


def _u_opaque(thickness_m: float, cfg: RcModelConfig) -> float:
    return 1.0 / (cfg.base_resistance_m2k_w + thickness_m / cfg.insulation_lambda_w_mk)


class _LinearSystem:
    """Exact solution machinery for dx/dt = A x + b with 2x2 Hurwitz A.

    Holds the eigendecomposition of A; b varies hour to hour, so the
    fixed point is supplied per segment.
    """

    __slots__ = ("a11", "a12", "a21", "a22", "ai11", "ai12", "ai21", "ai22",
                 "l1", "l2", "v11", "v12", "v21", "v22", "w11", "w12", "w21", "w22")

    def __init__(self, a11: float, a12: float, a21: float, a22: float):
        self.a11, self.a12, self.a21, self.a22 = a11, a12, a21, a22
        det = a11 * a22 - a12 * a21
        self.ai11, self.ai12 = a22 / det, -a12 / det
        self.ai21, self.ai22 = -a21 / det, a11 / det
        half = 0.5 * (a11 + a22)
        disc = math.sqrt(max(0.25 * (a11 - a22) ** 2 + a12 * a21, 0.0))
        l1, l2 = half + disc, half - disc
        if abs(l1 - l2) < 1e-9 * max(abs(l1), abs(l2)):
            # RC networks have distinct real eigenvalues away from degenerate
            # corners; nudge apart so the diagonalized form stays usable
            l2 -= 1e-9 * max(abs(l1), abs(l2))
        self.l1, self.l2 = l1, l2
        # eigenvectors (a12, λ−a11); a12 = G_ma/C_air > 0 keeps them independent
        self.v11, self.v21 = a12, l1 - a11
        self.v12, self.v22 = a12, l2 - a11
        dv = self.v11 * self.v22 - self.v12 * self.v21
        self.w11, self.w12 = self.v22 / dv, -self.v12 / dv
        self.w21, self.w22 = -self.v21 / dv, self.v11 / dv

    def fixed_point(self, ba: float, bm: float) -> tuple[float, float]:
        return -(self.ai11 * ba + self.ai12 * bm), -(self.ai21 * ba + self.ai22 * bm)

    def coeffs(self, ta: float, tm: float, xsa: float, xsm: float) -> tuple[float, float]:
        """Modal coordinates of the deviation from the fixed point."""
        da, dm = ta - xsa, tm - xsm
        return self.w11 * da + self.w12 * dm, self.w21 * da + self.w22 * dm

    def t_air_at(self, w1: float, w2: float, xsa: float, s: float) -> float:
        return xsa + self.v11 * w1 * math.exp(self.l1 * s) + self.v12 * w2 * math.exp(self.l2 * s)

    def advance(self, w1: float, w2: float, xsa: float, xsm: float, s: float):
        """State at time s and exact ∫x dt over [0, s]."""
        e1, e2 = math.exp(self.l1 * s), math.exp(self.l2 * s)
        xa = xsa + self.v11 * w1 * e1 + self.v12 * w2 * e2
        xm = xsm + self.v21 * w1 * e1 + self.v22 * w2 * e2
        g1, g2 = (e1 - 1.0) / self.l1, (e2 - 1.0) / self.l2
        ia = xsa * s + self.v11 * w1 * g1 + self.v12 * w2 * g2
        im = xsm * s + self.v21 * w1 * g1 + self.v22 * w2 * g2
        return xa, xm, ia, im

    def earliest_crossing(self, w1, w2, xsa, s_max, levels, skip_level=None) -> tuple[float, float] | None:
        """First time in (0, s_max] where T_air hits one of ``levels``.

        T_air(s) is a constant plus two exponentials, so it has at most one
        interior extremum; splitting there gives monotone pieces on which a
        sign change pins the root for bisection. ``skip_level`` marks a
        boundary the segment starts on: its residual at s=0 is rounding
        noise, so the departure sign is probed just inside instead.
        """
        alpha, beta = self.v11 * w1 * self.l1, self.v12 * w2 * self.l2
        knots = [0.0, s_max]
        if alpha != 0.0 and beta != 0.0 and alpha * beta < 0:
            s_ext = math.log(-beta / alpha) / (self.l1 - self.l2)
            if 0.0 < s_ext < s_max:
                knots = [0.0, s_ext, s_max]
        best = None
        for level in levels:
            for lo, hi in zip(knots, knots[1:]):
                if lo == 0.0 and level == skip_level:
                    lo = min(1e-9, 0.5 * hi)
                f_lo = self.t_air_at(w1, w2, xsa, lo) - level
                f_hi = self.t_air_at(w1, w2, xsa, hi) - level
                if f_lo == 0.0 and lo == 0.0:
                    continue  # segment starts on this boundary; regime already chosen
                if f_lo * f_hi > 0:
                    continue
                a, b = lo, hi
                for _ in range(80):
                    mid = 0.5 * (a + b)
                    fm = self.t_air_at(w1, w2, xsa, mid) - level
                    if f_lo * fm <= 0:
                        b = mid
                    else:
                        a, f_lo = mid, fm
                s_hit = 0.5 * (a + b)
                if s_hit > 1e-15 and (best is None or s_hit < best[0]):
                    best = (s_hit, level)
                break  # earlier piece wins for this level
        return best


def simulate_week_detailed(
    params: BuildingParams,
    bms: BmsSchedule,
    occ: OccupancySchedule,
    weather: WeatherSeries,
    cfg: RcModelConfig = DEFAULT_RC_CONFIG,
    t0: float = 20.0,
) -> SimResult:
    n_sub = int(cfg.substeps)
    dt = 1.0 / n_sub  # hours

    win_frac = params.window_fractions
    window_area = sum(a * w for a, w in zip(cfg.facade_areas_m2, win_frac))
    opaque_facade = [
        (a * (1.0 - w), _u_opaque(th, cfg))
        for a, w, th in zip(cfg.facade_areas_m2, win_frac, params.facade_thicknesses)
    ]
    g_win = cfg.window_u_w_m2k * window_area / 1000.0
    g_inf = (
        cfg.air_heat_capacity_kj_m3k * params.airchange_infiltration_vol_per_h * cfg.volume_m3 / 3600.0
    )
    g_om = (
        sum(a * u for a, u in opaque_facade)
        + cfg.wall5_u_w_m2k * cfg.wall5_area_m2
        + _u_opaque(params.roof_1_thickness_3, cfg) * cfg.roof_area_m2
    ) / 1000.0
    g_gnd = cfg.ground_u_w_m2k * cfg.ground_area_m2 / 1000.0
    mass_surface = (
        sum(a for a, _ in opaque_facade) + cfg.wall5_area_m2 + cfg.roof_area_m2 + cfg.ground_area_m2
    )
    g_ma = cfg.film_w_m2k * mass_surface / 1000.0
    c_air = cfg.air_heat_capacity_kj_m3k * cfg.volume_m3 / 3600.0  # kWh/K
    c_mass = params.capacitance_kJ_perdegreK_perm3 * cfg.volume_m3 / 3600.0

    gain = cfg.hvac_gain_kw_k
    cap_heat = float(params.power_VCV_kW_heat)
    cap_cool = float(params.power_VCV_kW_clim)

    systems: dict[tuple[float, bool], _LinearSystem] = {}

    def system(g_vent: float, closed_loop: bool) -> _LinearSystem:
        key = (round(g_vent, 9), closed_loop)
        if key not in systems:
            a11 = -(g_win + g_inf + g_vent + g_ma) / c_air
            if closed_loop:
                a11 -= gain / c_air
            systems[key] = _LinearSystem(
                a11, g_ma / c_air, g_ma / c_mass, -(g_ma + g_om + g_gnd) / c_mass
            )
        return systems[key]

    occupied = expand_daily(occ)
    tamb_series = weather.tamb
    iglob = weather.channel("IGLOB_H")
    solar_coeff = cfg.solar_projection * cfg.shgc * window_area / 1000.0  # kW per (W/m²)
    f_air = cfg.solar_air_fraction

    q_people_occ = params.nb_occupants * cfg.occupant_gain_w / 1000.0
    q_eqp_day = params.nb_PCs * cfg.pc_gain_w / 1000.0
    q_eqp_night = q_eqp_day * params.percent_PCs_night / 100.0
    q_light_day = cfg.light_w_m2 * cfg.floor_area_m2 / 1000.0
    q_light_night = q_light_day * params.percent_light_night / 100.0

    out = np.zeros((HOURS_PER_WEEK, 8))
    air_delta = np.zeros(HOURS_PER_WEEK)
    air_flux = np.zeros(HOURS_PER_WEEK)
    mass_delta = np.zeros(HOURS_PER_WEEK)
    mass_flux = np.zeros(HOURS_PER_WEEK)
    t_air_trace = np.zeros(HOURS_PER_WEEK + 1)
    t_mass_trace = np.zeros(HOURS_PER_WEEK + 1)

    state = ZoneState(float(t0), float(t0))
    state.check(0)
    t_air_trace[0] = state.t_air
    t_mass_trace[0] = state.t_mass
    tg = cfg.ground_temp_c

    for hour in range(HOURS_PER_WEEK):
        day = hour // HOURS_PER_DAY
        hod = hour % HOURS_PER_DAY
        tamb = float(tamb_series[hour])
        vent_on = _scheduled(hod, bms.start_ventilation_day[day], bms.end_ventilation_day[day])
        g_vent = (
            cfg.air_heat_capacity_kj_m3k * bms.vol_ventilation_day[day] * cfg.volume_m3 / 3600.0
            if vent_on
            else 0.0
        )
        t_vent = bms.t_ventilation_day[day]

        is_occ = occupied[hour] > 0
        q_people = occupied[hour] * q_people_occ
        q_eqp = q_eqp_day if is_occ else q_eqp_night
        q_light = q_light_day if is_occ else q_light_night
        q_int = q_people + q_eqp + q_light
        q_sol = solar_coeff * float(iglob[hour])

        ba_open = ((g_win + g_inf) * tamb + g_vent * t_vent + q_int + f_air * q_sol) / c_air
        bm = (g_om * tamb + g_gnd * tg + (1.0 - f_air) * q_sol) / c_mass

        demand = hvac_control(
            state.t_air, hour, bms, gain=gain, heat_cap=cap_heat, cool_cap=cap_cool, deadband=cfg.deadband_k
        )
        if demand.heat_kw > 0:
            mode, sp, cap = 1, demand.setpoint, cap_heat
        elif demand.cool_kw > 0:
            mode, sp, cap = -1, demand.setpoint, cap_cool
        else:
            mode, sp, cap = 0, demand.setpoint, 0.0

        sys_open = system(g_vent, False)
        sys_closed = system(g_vent, True) if mode != 0 else sys_open
        # temperature levels where the latched branch changes regime
        if mode == 1:
            level_off, level_sat = sp, sp - cap / gain
        elif mode == -1:
            level_off, level_sat = sp, sp + cap / gain
        else:
            level_off, level_sat = math.inf, -math.inf

        def classify(ta: float) -> int:
            if mode == 0:
                return _OFF
            if mode == 1:
                if ta >= level_off:
                    return _OFF
                if ta <= level_sat:
                    return _SAT
                return _ACTIVE
            if ta <= level_off:
                return _OFF
            if ta >= level_sat:
                return _SAT
            return _ACTIVE

        def regime_after_hit(level: float, ta: float, tm: float) -> int:
            # The applied flux is continuous across a regime boundary, so the
            # drift direction there is regime-independent and decides which
            # side the trajectory continues on.
            q_b = (cap if mode == 1 else -cap) if level == level_sat else 0.0
            drift = sys_open.a11 * ta + sys_open.a12 * tm + ba_open + q_b / c_air
            if level == level_off:
                leaving = drift > 0 if mode == 1 else drift < 0
                return _OFF if leaving else _ACTIVE
            entering_band = drift > 0 if mode == 1 else drift < 0
            return _ACTIVE if entering_band else _SAT

        heat_kwh = 0.0
        cool_kwh = 0.0
        int_ta_h = 0.0
        ta0_h, tm0_h = state.t_air, state.t_mass
        events = 0
        forced_regime: int | None = None
        on_level: float | None = None

        for _ in range(n_sub):
            s_left = dt
            while s_left > 1e-14:
                regime = forced_regime if forced_regime is not None else classify(state.t_air)
                forced_regime = None
                if regime == _ACTIVE:
                    sys = sys_closed
                    ba = ba_open + gain * sp / c_air
                    q_const = 0.0
                    levels = [level_off] if cap == math.inf else [level_off, level_sat]
                elif regime == _SAT:
                    sys = sys_open
                    q_const = cap if mode == 1 else -cap
                    ba = ba_open + q_const / c_air
                    levels = [level_sat]
                else:
                    sys = sys_open
                    ba = ba_open
                    q_const = 0.0
                    levels = [] if mode == 0 else [level_off]

                xsa, xsm = sys.fixed_point(ba, bm)
                w1, w2 = sys.coeffs(state.t_air, state.t_mass, xsa, xsm)
                hit = (
                    sys.earliest_crossing(w1, w2, xsa, s_left, levels, skip_level=on_level)
                    if levels
                    else None
                )
                s_seg = hit[0] if hit else s_left
                xa, xm, ia, im = sys.advance(w1, w2, xsa, xsm, s_seg)

                if regime == _ACTIVE:
                    q_hvac_kwh = gain * (sp * s_seg - ia)  # ∫ gain·(sp − T) dt, signed
                else:
                    q_hvac_kwh = q_const * s_seg
                if mode == 1:
                    heat_kwh += q_hvac_kwh
                elif mode == -1:
                    cool_kwh += -q_hvac_kwh

                int_ta_h += ia
                air_flux[hour] += (
                    (g_win + g_inf) * (tamb * s_seg - ia)
                    + g_vent * (t_vent * s_seg - ia)
                    + g_ma * (im - ia)
                    + (q_int + f_air * q_sol) * s_seg
                    + q_hvac_kwh
                )
                mass_flux[hour] += (
                    g_ma * (ia - im)
                    + g_om * (tamb * s_seg - im)
                    + g_gnd * (tg * s_seg - im)
                    + (1.0 - f_air) * q_sol * s_seg
                )

                state.t_air = hit[1] if hit else xa  # land exactly on the boundary
                state.t_mass = xm
                s_left -= s_seg
                if hit:
                    on_level = hit[1]
                    forced_regime = regime_after_hit(hit[1], state.t_air, state.t_mass)
                    events += 1
                    if events > _MAX_EVENTS_PER_HOUR:
                        raise NumericalError(hour, "HVAC regime chatter: too many control events")
                else:
                    on_level = None

        state.check(hour)
        air_delta[hour] = c_air * (state.t_air - ta0_h)
        mass_delta[hour] = c_mass * (state.t_mass - tm0_h)
        t_air_trace[hour + 1] = state.t_air
        t_mass_trace[hour + 1] = state.t_mass

        q_ahu_h, q_ahu_c = ahu_load(hour, bms, weather, cfg)
        out[hour] = (
            max(cool_kwh, 0.0),  # Q_AC_OFFICE: kWh over one hour = mean kW
            max(heat_kwh, 0.0),
            q_people,
            q_eqp,
            q_light,
            q_ahu_c,
            q_ahu_h,
            int_ta_h,  # hour-mean air temperature
        )

    ledger = EnergyLedger(air_delta, air_flux, mass_delta, mass_flux)
    return SimResult(SimOutput(out), ledger, t_air_trace, t_mass_trace)


def simulate_week(
    params: BuildingParams,
    bms: BmsSchedule,
    occ: OccupancySchedule,
    weather: WeatherSeries,
    cfg: RcModelConfig = DEFAULT_RC_CONFIG,
    t0: float = 20.0,
) -> SimOutput:
    """Simulate one week; see simulate_week_detailed for diagnostics."""
    return simulate_week_detailed(params, bms, occ, weather, cfg, t0).output
