"""Variable schemas, schedules and the hourly episode representation.

Everything downstream (simulator, surrogate, calibration, optimization)
speaks in terms of the types defined here: static building parameters,
daily management-system and occupancy schedules, hourly weather, and the
assembled per-week episode matrix. All containers are immutable after
construction (arrays are marked read-only), so they can be shared freely
across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

HOURS_PER_DAY = 24
DAYS_PER_WEEK = 7
WEEKDAYS = 5  # week starts Monday (hour 0 = Monday 00:00)
HOURS_PER_WEEK = HOURS_PER_DAY * DAYS_PER_WEEK

DAY_NAMES = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")

WEATHER_CHANNELS = ("DNI", "IBEAM_H", "IBEAM_N", "IDIFF_H", "IGLOB_H", "RHUM", "TAMB")
OUTPUT_CHANNELS = (
    "Q_AC_OFFICE",
    "Q_HEAT_OFFICE",
    "Q_PEOPLE",
    "Q_EQP",
    "Q_LIGHT",
    "Q_AHU_C",
    "Q_AHU_H",
    "T_INT_OFFICE",
)
T_INT_INDEX = OUTPUT_CHANNELS.index("T_INT_OFFICE")
# Channels summed into the "heat consumption" sensor aggregate.
HEAT_AGGREGATE_CHANNELS = ("Q_HEAT_OFFICE", "Q_AHU_H", "Q_EQP", "Q_LIGHT")
HEAT_AGGREGATE_INDICES = tuple(OUTPUT_CHANNELS.index(c) for c in HEAT_AGGREGATE_CHANNELS)

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """A value or declaration violates the variable schema."""


@dataclass(frozen=True)
class VariableSpec:
    """One sampled variable: its range, granularity and time kind."""

    name: str
    min: float
    max: float
    step: float
    kind: str  # "static" | "daily" | "hourly"

    def __post_init__(self):
        if self.kind not in ("static", "daily", "hourly"):
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if not self.min <= self.max:
            raise SchemaError(f"{self.name}: min {self.min} > max {self.max}")
        if not self.step > 0:
            raise SchemaError(f"{self.name}: step must be > 0, got {self.step}")
        ratio = (self.max - self.min) / self.step
        if abs(ratio - round(ratio)) > 1e-9:
            raise SchemaError(
                f"{self.name}: span {self.max - self.min} is not a multiple of step {self.step}"
            )

    @property
    def n_levels(self) -> int:
        """Number of points on the sampling grid (both endpoints included)."""
        return int(round((self.max - self.min) / self.step)) + 1

    def grid(self) -> np.ndarray:
        return self.min + self.step * np.arange(self.n_levels)

    def sample(self, rng: np.random.Generator) -> float:
        """Uniform draw over the quantized grid."""
        return float(self.min + self.step * rng.integers(0, self.n_levels))

    def quantize(self, value: float) -> float:
        """Snap to the nearest grid point, clipped to the range."""
        k = round((value - self.min) / self.step)
        k = min(max(k, 0), self.n_levels - 1)
        return float(self.min + self.step * k)

    def contains(self, value: float) -> bool:
        return self.min - 1e-9 <= value <= self.max + 1e-9


# Ranges from the building-parameter table.
BUILDING_SPECS = (
    VariableSpec("airchange_infiltration_vol_per_h", 0.1, 0.5, 0.1, "static"),
    VariableSpec("capacitance_kJ_perdegreK_perm3", 50, 300, 10, "static"),
    VariableSpec("power_VCV_kW_heat", 0, 1000, 100, "static"),
    VariableSpec("power_VCV_kW_clim", 0, 1000, 100, "static"),
    VariableSpec("nb_occupants", 1000, 2000, 200, "static"),
    VariableSpec("nb_PCs", 1000, 2000, 200, "static"),
    VariableSpec("percent_light_night", 0, 70, 10, "static"),
    VariableSpec("percent_PCs_night", 0, 70, 10, "static"),
    VariableSpec("facade_1_thickness_2", 0.05, 0.15, 0.05, "static"),
    VariableSpec("facade_2_thickness_2", 0.05, 0.15, 0.05, "static"),
    VariableSpec("facade_3_thickness_2", 0.05, 0.15, 0.05, "static"),
    VariableSpec("facade_4_thickness_2", 0.05, 0.15, 0.05, "static"),
    VariableSpec("roof_1_thickness_3", 0.05, 0.15, 0.05, "static"),
    VariableSpec("facade_1_window_area_percent", 40, 50, 5, "static"),
    VariableSpec("facade_2_window_area_percent", 40, 50, 5, "static"),
    VariableSpec("facade_3_window_area_percent", 40, 50, 5, "static"),
    VariableSpec("facade_4_window_area_percent", 40, 50, 5, "static"),
)

# Daily management-system settings; each holds one value per day of week.
# vol_ventilation_day: the published step (0.3) does not divide the range
# width; 0.25 keeps both endpoints on the grid.
BMS_SPECS = (
    VariableSpec("start_clim_day", 7, 9, 1, "daily"),
    VariableSpec("end_clim_day", 18, 20, 1, "daily"),
    VariableSpec("t_clim_red_day", 24, 30, 0.5, "daily"),
    VariableSpec("t_clim_conf_day", 20, 24, 0.5, "daily"),
    VariableSpec("start_heat_day", 6, 8, 1, "daily"),
    VariableSpec("end_heat_day", 17, 19, 1, "daily"),
    VariableSpec("t_heat_red_day", 17, 22, 0.5, "daily"),
    VariableSpec("t_heat_conf_day", 22, 24, 0.5, "daily"),
    VariableSpec("start_ventilation_day", 7, 9, 1, "daily"),
    VariableSpec("end_ventilation_day", 18, 20, 1, "daily"),
    VariableSpec("t_ventilation_day", 18, 26, 0.5, "daily"),
    VariableSpec("vol_ventilation_day", 0.7, 1.7, 0.25, "daily"),
)

# Occupancy window; applies to weekdays only, weekends are unoccupied.
OCCUPANCY_SPECS = (
    VariableSpec("start_occupation", 7, 9, 1, "daily"),
    VariableSpec("end_occupation", 17, 20, 1, "daily"),
)


@dataclass(frozen=True)
class Schema:
    """The full variable declaration shared by a dataset and its models."""

    version: int = SCHEMA_VERSION
    building: tuple[VariableSpec, ...] = BUILDING_SPECS
    bms: tuple[VariableSpec, ...] = BMS_SPECS
    occupancy: tuple[VariableSpec, ...] = OCCUPANCY_SPECS
    weather_channels: tuple[str, ...] = WEATHER_CHANNELS
    output_channels: tuple[str, ...] = OUTPUT_CHANNELS

    def spec(self, name: str) -> VariableSpec:
        for s in self.building + self.bms + self.occupancy:
            if s.name == name:
                return s
        raise SchemaError(f"unknown variable {name!r}")

    @property
    def input_channel_names(self) -> tuple[str, ...]:
        return (
            tuple(s.name for s in self.building)
            + tuple(s.name for s in self.bms)
            + ("occupancy_fraction",)
            + self.weather_channels
        )

    @property
    def d_in(self) -> int:
        """Input width of one episode row, derived from the declaration."""
        return len(self.input_channel_names)

    @property
    def d_out(self) -> int:
        return len(self.output_channels)

    def to_dict(self) -> dict:
        def rows(specs):
            return [
                {"name": s.name, "min": s.min, "max": s.max, "step": s.step, "kind": s.kind}
                for s in specs
            ]

        return {
            "version": self.version,
            "building": rows(self.building),
            "bms": rows(self.bms),
            "occupancy": rows(self.occupancy),
            "weather_channels": list(self.weather_channels),
            "output_channels": list(self.output_channels),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        def specs(group):
            out = []
            for i, row in enumerate(d.get(group, [])):
                try:
                    out.append(
                        VariableSpec(
                            str(row["name"]),
                            float(row["min"]),
                            float(row["max"]),
                            float(row["step"]),
                            str(row["kind"]),
                        )
                    )
                except (KeyError, TypeError, ValueError, SchemaError) as exc:
                    raise SchemaError(f"{group} row {i + 1}: {exc}") from exc
            return tuple(out)

        return cls(
            version=int(d.get("version", SCHEMA_VERSION)),
            building=specs("building"),
            bms=specs("bms"),
            occupancy=specs("occupancy"),
            weather_channels=tuple(d.get("weather_channels", WEATHER_CHANNELS)),
            output_channels=tuple(d.get("output_channels", OUTPUT_CHANNELS)),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path) as f:
            try:
                d = json.load(f)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(d)


DEFAULT_SCHEMA = Schema()


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class BuildingParams:
    """Static geometric/thermal parameters, one per building-table row."""

    airchange_infiltration_vol_per_h: float
    capacitance_kJ_perdegreK_perm3: float
    power_VCV_kW_heat: float
    power_VCV_kW_clim: float
    nb_occupants: float
    nb_PCs: float
    percent_light_night: float
    percent_PCs_night: float
    facade_1_thickness_2: float
    facade_2_thickness_2: float
    facade_3_thickness_2: float
    facade_4_thickness_2: float
    roof_1_thickness_3: float
    facade_1_window_area_percent: float
    facade_2_window_area_percent: float
    facade_3_window_area_percent: float
    facade_4_window_area_percent: float

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> "BuildingParams":
        names = [f.name for f in fields(cls)]
        if len(v) != len(names):
            raise SchemaError(f"expected {len(names)} building values, got {len(v)}")
        return cls(**{n: float(x) for n, x in zip(names, v)})

    @classmethod
    def from_dict(cls, d: Mapping[str, float]) -> "BuildingParams":
        return cls(**{f.name: float(d[f.name]) for f in fields(cls)})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def validate(self, schema: Schema = DEFAULT_SCHEMA) -> None:
        for spec in schema.building:
            value = getattr(self, spec.name)
            if not spec.contains(value):
                raise SchemaError(
                    f"{spec.name}={value} outside [{spec.min}, {spec.max}]"
                )

    @property
    def facade_thicknesses(self) -> tuple[float, float, float, float]:
        return (
            self.facade_1_thickness_2,
            self.facade_2_thickness_2,
            self.facade_3_thickness_2,
            self.facade_4_thickness_2,
        )

    @property
    def window_fractions(self) -> tuple[float, float, float, float]:
        return (
            self.facade_1_window_area_percent / 100.0,
            self.facade_2_window_area_percent / 100.0,
            self.facade_3_window_area_percent / 100.0,
            self.facade_4_window_area_percent / 100.0,
        )


_BMS_FIELDS = tuple(s.name for s in BMS_SPECS)


@dataclass(frozen=True)
class BmsSchedule:
    """Management-system settings; every field holds 7 per-day values (Mon..Sun)."""

    start_clim_day: tuple[float, ...]
    end_clim_day: tuple[float, ...]
    t_clim_red_day: tuple[float, ...]
    t_clim_conf_day: tuple[float, ...]
    start_heat_day: tuple[float, ...]
    end_heat_day: tuple[float, ...]
    t_heat_red_day: tuple[float, ...]
    t_heat_conf_day: tuple[float, ...]
    start_ventilation_day: tuple[float, ...]
    end_ventilation_day: tuple[float, ...]
    t_ventilation_day: tuple[float, ...]
    vol_ventilation_day: tuple[float, ...]

    def __post_init__(self):
        for name in _BMS_FIELDS:
            values = tuple(float(v) for v in getattr(self, name))
            if len(values) != DAYS_PER_WEEK:
                raise SchemaError(f"{name}: expected {DAYS_PER_WEEK} daily values, got {len(values)}")
            object.__setattr__(self, name, values)
        for day in range(DAYS_PER_WEEK):
            for start, end in (
                ("start_clim_day", "end_clim_day"),
                ("start_heat_day", "end_heat_day"),
                ("start_ventilation_day", "end_ventilation_day"),
            ):
                if not getattr(self, start)[day] < getattr(self, end)[day]:
                    raise SchemaError(
                        f"{start}[{DAY_NAMES[day]}]={getattr(self, start)[day]} "
                        f"must be < {end}[{DAY_NAMES[day]}]={getattr(self, end)[day]}"
                    )
            if getattr(self, "t_heat_conf_day")[day] < getattr(self, "t_heat_red_day")[day]:
                raise SchemaError(
                    f"t_heat_conf_day[{DAY_NAMES[day]}] below t_heat_red_day[{DAY_NAMES[day]}]"
                )

    @classmethod
    def constant(cls, **daily_values: float) -> "BmsSchedule":
        """Same value every day; keyword per variable name."""
        missing = set(_BMS_FIELDS) - set(daily_values)
        extra = set(daily_values) - set(_BMS_FIELDS)
        if missing or extra:
            raise SchemaError(f"constant schedule: missing {sorted(missing)}, unknown {sorted(extra)}")
        return cls(**{k: (float(v),) * DAYS_PER_WEEK for k, v in daily_values.items()})

    @classmethod
    def from_dict(cls, d: Mapping[str, Sequence[float]]) -> "BmsSchedule":
        return cls(**{name: tuple(float(v) for v in d[name]) for name in _BMS_FIELDS})

    def to_dict(self) -> dict:
        return {name: list(getattr(self, name)) for name in _BMS_FIELDS}

    def validate(self, schema: Schema = DEFAULT_SCHEMA) -> None:
        for spec in schema.bms:
            for day, value in enumerate(getattr(self, spec.name)):
                if not spec.contains(value):
                    raise SchemaError(
                        f"{spec.name}[{DAY_NAMES[day]}]={value} outside [{spec.min}, {spec.max}]"
                    )

    def replace(self, **daily_arrays) -> "BmsSchedule":
        d = self.to_dict()
        d.update({k: list(v) for k, v in daily_arrays.items()})
        return BmsSchedule.from_dict(d)

    def as_matrix(self) -> np.ndarray:
        """(7, 12) day-by-variable matrix in schema order."""
        return np.array([getattr(self, name) for name in _BMS_FIELDS], dtype=np.float64).T


@dataclass(frozen=True)
class OccupancySchedule:
    """Weekday occupation window; the building is empty on weekends."""

    start_occupation: tuple[float, ...]  # Mon..Fri arrival hour
    end_occupation: tuple[float, ...]  # Mon..Fri departure hour
    max_occupants: float = 0.0

    def __post_init__(self):
        for name in ("start_occupation", "end_occupation"):
            values = tuple(float(v) for v in getattr(self, name))
            if len(values) != WEEKDAYS:
                raise SchemaError(f"{name}: expected {WEEKDAYS} weekday values, got {len(values)}")
            object.__setattr__(self, name, values)
        for day in range(WEEKDAYS):
            if not 7 <= self.start_occupation[day] <= 9:
                raise SchemaError(f"start_occupation[{DAY_NAMES[day]}] outside [7, 9]")
            if not 17 <= self.end_occupation[day] <= 20:
                raise SchemaError(f"end_occupation[{DAY_NAMES[day]}] outside [17, 20]")

    @classmethod
    def constant(cls, start: float, end: float, max_occupants: float = 0.0) -> "OccupancySchedule":
        return cls((float(start),) * WEEKDAYS, (float(end),) * WEEKDAYS, max_occupants)

    @classmethod
    def from_dict(cls, d: Mapping) -> "OccupancySchedule":
        return cls(
            tuple(float(v) for v in d["start_occupation"]),
            tuple(float(v) for v in d["end_occupation"]),
            float(d.get("max_occupants", 0.0)),
        )

    def to_dict(self) -> dict:
        return {
            "start_occupation": list(self.start_occupation),
            "end_occupation": list(self.end_occupation),
            "max_occupants": self.max_occupants,
        }

    def scheduled_hours(self) -> float:
        """Total weekday occupation hours in one week."""
        return float(sum(e - s for s, e in zip(self.start_occupation, self.end_occupation)))


@dataclass(frozen=True)
class WeatherSeries:
    """One week of hourly weather, channels in WEATHER_CHANNELS order."""

    data: np.ndarray  # (168, 7)

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.shape != (HOURS_PER_WEEK, len(WEATHER_CHANNELS)):
            raise SchemaError(f"weather must be {(HOURS_PER_WEEK, len(WEATHER_CHANNELS))}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise SchemaError("weather contains non-finite values")
        irr = a[:, : WEATHER_CHANNELS.index("RHUM")]
        if np.any(irr < 0):
            raise SchemaError("irradiance channels must be >= 0")
        rhum = a[:, WEATHER_CHANNELS.index("RHUM")]
        if np.any((rhum < 0) | (rhum > 100)):
            raise SchemaError("RHUM must lie in [0, 100]")
        object.__setattr__(self, "data", _readonly(a))

    def channel(self, name: str) -> np.ndarray:
        return self.data[:, WEATHER_CHANNELS.index(name)]

    @property
    def tamb(self) -> np.ndarray:
        return self.channel("TAMB")


@dataclass(frozen=True)
class SimOutput:
    """One simulated week: 7 consumption channels (kW) and indoor temperature."""

    data: np.ndarray  # (168, 8)

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.shape != (HOURS_PER_WEEK, len(OUTPUT_CHANNELS)):
            raise SchemaError(f"outputs must be {(HOURS_PER_WEEK, len(OUTPUT_CHANNELS))}, got {a.shape}")
        q = np.delete(a, T_INT_INDEX, axis=1)
        if np.any(q < -1e-12):
            raise SchemaError("consumption channels must be >= 0")
        object.__setattr__(self, "data", _readonly(a))

    def channel(self, name: str) -> np.ndarray:
        return self.data[:, OUTPUT_CHANNELS.index(name)]

    @property
    def t_int(self) -> np.ndarray:
        return self.data[:, T_INT_INDEX]

    @property
    def heat_aggregate(self) -> np.ndarray:
        """The sensor-comparable heat consumption sum (kW)."""
        return self.data[:, list(HEAT_AGGREGATE_INDICES)].sum(axis=1)


def heat_aggregate_of(targets: np.ndarray) -> np.ndarray:
    """Aggregate heat consumption of an output matrix (..., 168, 8) -> (..., 168)."""
    return np.asarray(targets)[..., list(HEAT_AGGREGATE_INDICES)].sum(axis=-1)


def expand_daily(schedule, horizon: int = HOURS_PER_WEEK) -> np.ndarray:
    """Expand a daily schedule to hourly channels over ``horizon`` hours.

    BmsSchedule -> (horizon, 12) matrix: each day's settings repeated for
    its 24 hours. OccupancySchedule -> (horizon,) presence fraction: 1.0
    inside [start, end) on weekdays, 0.0 otherwise (weekends included).
    """
    if horizon % HOURS_PER_DAY != 0:
        raise SchemaError(f"horizon {horizon} is not a multiple of {HOURS_PER_DAY}")
    n_days = horizon // HOURS_PER_DAY
    day_of_hour = np.arange(horizon) // HOURS_PER_DAY % DAYS_PER_WEEK
    hour_of_day = np.arange(horizon) % HOURS_PER_DAY

    if isinstance(schedule, BmsSchedule):
        per_day = schedule.as_matrix()  # (7, 12)
        return per_day[day_of_hour]
    if isinstance(schedule, OccupancySchedule):
        frac = np.zeros(horizon)
        for h in range(horizon):
            d = day_of_hour[h]
            if d < WEEKDAYS:
                frac[h] = 1.0 if schedule.start_occupation[d] <= hour_of_day[h] < schedule.end_occupation[d] else 0.0
        return frac
    raise TypeError(f"cannot expand {type(schedule).__name__}")


@dataclass(frozen=True)
class Episode:
    """One model example: assembled hourly inputs, targets, occupation mask."""

    inputs: np.ndarray  # (168, D_in)
    targets: np.ndarray | None  # (168, 8) or None before labeling
    occupied_mask: np.ndarray  # (168,) bool

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != HOURS_PER_WEEK:
            raise SchemaError(f"inputs must be (168, D_in), got {x.shape}")
        object.__setattr__(self, "inputs", _readonly(x))
        if self.targets is not None:
            y = np.asarray(self.targets, dtype=np.float64)
            if y.shape != (HOURS_PER_WEEK, len(OUTPUT_CHANNELS)):
                raise SchemaError(f"targets must be (168, 8), got {y.shape}")
            object.__setattr__(self, "targets", _readonly(y))
        m = np.asarray(self.occupied_mask, dtype=bool)
        if m.shape != (HOURS_PER_WEEK,):
            raise SchemaError(f"occupied_mask must be (168,), got {m.shape}")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "occupied_mask", m)

    @property
    def d_in(self) -> int:
        return self.inputs.shape[1]


def assemble_inputs(
    params: BuildingParams,
    bms: BmsSchedule,
    occ: OccupancySchedule,
    weather: WeatherSeries,
    schema: Schema = DEFAULT_SCHEMA,
) -> np.ndarray:
    """Stack (static | daily BMS | occupancy fraction | weather) into (168, D_in)."""
    static = np.tile(params.as_vector(), (HOURS_PER_WEEK, 1))
    bms_channels = expand_daily(bms)
    occ_frac = expand_daily(occ)[:, None]
    x = np.hstack([static, bms_channels, occ_frac, weather.data])
    if x.shape[1] != schema.d_in:
        raise SchemaError(f"assembled width {x.shape[1]} != schema width {schema.d_in}")
    return x


def make_episode(
    params: BuildingParams,
    bms: BmsSchedule,
    occ: OccupancySchedule,
    weather: WeatherSeries,
    targets: np.ndarray | None = None,
    schema: Schema = DEFAULT_SCHEMA,
) -> Episode:
    inputs = assemble_inputs(params, bms, occ, weather, schema)
    mask = expand_daily(occ) > 0
    return Episode(inputs, targets, mask)


@dataclass(frozen=True)
class NormStats:
    """Invertible per-channel transforms fitted on the training split.

    Inputs are min-max mapped to [0, 1]: bounded variables use their
    schema ranges, the occupancy fraction uses [0, 1], weather channels
    use the training-set min/max. Targets are standardized with the
    training-set mean/std. Channels with zero width map to the constant
    0.5 (inputs) or 0.0 (targets) and are listed in ``flagged``.
    """

    input_lo: np.ndarray
    input_hi: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray
    input_names: tuple[str, ...]
    target_names: tuple[str, ...]
    flagged: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "input_lo", _readonly(self.input_lo))
        object.__setattr__(self, "input_hi", _readonly(self.input_hi))
        object.__setattr__(self, "target_mean", _readonly(self.target_mean))
        object.__setattr__(self, "target_std", _readonly(self.target_std))

    @classmethod
    def fit(
        cls,
        schema: Schema,
        train_inputs: Iterable[np.ndarray],
        train_targets: Iterable[np.ndarray],
    ) -> "NormStats":
        names = schema.input_channel_names
        lo = np.empty(schema.d_in)
        hi = np.empty(schema.d_in)
        ranged = {s.name: s for s in schema.building + schema.bms}
        weather_start = schema.d_in - len(schema.weather_channels)
        for i, name in enumerate(names):
            if name in ranged:
                lo[i], hi[i] = ranged[name].min, ranged[name].max
            elif name == "occupancy_fraction":
                lo[i], hi[i] = 0.0, 1.0
            else:
                lo[i], hi[i] = np.inf, -np.inf  # filled from data below
        stacked = None
        for x in train_inputs:
            w = np.asarray(x)[:, weather_start:]
            lo[weather_start:] = np.minimum(lo[weather_start:], w.min(axis=0))
            hi[weather_start:] = np.maximum(hi[weather_start:], w.max(axis=0))
        ys = [np.asarray(y) for y in train_targets]
        if not ys:
            raise SchemaError("cannot fit normalization without training targets")
        all_y = np.concatenate(ys, axis=0)
        mean = all_y.mean(axis=0)
        std = all_y.std(axis=0)

        flagged = []
        for i, name in enumerate(names):
            if not hi[i] > lo[i]:
                flagged.append(name)
        for j, name in enumerate(schema.output_channels):
            if std[j] == 0:
                std[j] = 1.0
                flagged.append(name)
        return cls(lo, hi, mean, std, tuple(names), tuple(schema.output_channels), tuple(flagged))

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        width = self.input_hi - self.input_lo
        safe = np.where(width > 0, width, 1.0)
        out = (np.asarray(x) - self.input_lo) / safe
        return np.where(width > 0, out, 0.5)

    def denormalize_inputs(self, x01: np.ndarray) -> np.ndarray:
        width = self.input_hi - self.input_lo
        return np.where(width > 0, np.asarray(x01) * width + self.input_lo, self.input_lo)

    def normalize_targets(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y) - self.target_mean) / self.target_std

    def denormalize_targets(self, yn: np.ndarray) -> np.ndarray:
        return np.asarray(yn) * self.target_std + self.target_mean

    def to_dict(self) -> dict:
        return {
            "input_lo": self.input_lo.tolist(),
            "input_hi": self.input_hi.tolist(),
            "target_mean": self.target_mean.tolist(),
            "target_std": self.target_std.tolist(),
            "input_names": list(self.input_names),
            "target_names": list(self.target_names),
            "flagged": list(self.flagged),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormStats":
        return cls(
            np.array(d["input_lo"], dtype=np.float64),
            np.array(d["input_hi"], dtype=np.float64),
            np.array(d["target_mean"], dtype=np.float64),
            np.array(d["target_std"], dtype=np.float64),
            tuple(d["input_names"]),
            tuple(d["target_names"]),
            tuple(d.get("flagged", ())),
        )


def building_case_to_dict(params: BuildingParams, bms: BmsSchedule, occ: OccupancySchedule) -> dict:
    return {"building": params.to_dict(), "bms": bms.to_dict(), "occupancy": occ.to_dict()}


def building_case_from_dict(d: Mapping) -> tuple[BuildingParams, BmsSchedule, OccupancySchedule]:
    params = BuildingParams.from_dict(d["building"])
    bms = BmsSchedule.from_dict(d["bms"])
    occ_d = dict(d["occupancy"])
    occ_d.setdefault("max_occupants", params.nb_occupants)
    occ = OccupancySchedule.from_dict(occ_d)
    return params, bms, occ
