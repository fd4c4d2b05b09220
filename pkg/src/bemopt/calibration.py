"""Derivative-free calibration of model inputs against sensor traces.

A self-contained CMA-ES (ask/tell) searches a box-bounded space of free
building/schedule variables, rescaled to [0,1] per dimension; the frozen
surrogate maps each candidate to predicted sensor series and the cost is
one minus the mean coefficient of determination over the two channels.
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import model as mdl
from .schema import (
    DAY_NAMES,
    DAYS_PER_WEEK,
    DEFAULT_SCHEMA,
    HOURS_PER_WEEK,
    WEEKDAYS,
    BmsSchedule,
    BuildingParams,
    NormStats,
    OccupancySchedule,
    Schema,
    SchemaError,
    WeatherSeries,
    assemble_inputs,
    expand_daily,
    heat_aggregate_of,
)
from .seeding import stream
from .training import T_INT_INDEX, predict, r2_score

__all__ = [
    "CmaState",
    "cma_ask",
    "cma_tell",
    "cma_minimize",
    "SensorTrace",
    "FreeVariable",
    "CalibrationSpace",
    "FrozenModel",
    "cost_from_series",
    "calibration_cost",
    "calibrate",
    "CalibrationReport",
]

WORST_COST = math.inf


# ---------------------------------------------------------------------------
# CMA-ES


class CmaState:
    """Mean, step size, covariance, and evolution paths of one CMA-ES run.

    The search space is the unit box [0,1]^n; candidates are folded back
    into the box by coordinate-wise reflection. Strategy constants follow
    the standard (mu/mu_w, lambda) formulas.
    """

    def __init__(self, n: int, seed: int, sigma0: float = 0.3, mean0=None, lam: int | None = None):
        if n < 1:
            raise ValueError(f"dimension must be >= 1, got {n}")
        if sigma0 <= 0:
            raise ValueError(f"sigma0 must be > 0, got {sigma0}")
        self.n = n
        self.sigma = float(sigma0)
        self.m = np.full(n, 0.5) if mean0 is None else np.array(mean0, dtype=np.float64)
        if self.m.shape != (n,):
            raise ValueError(f"mean0 must have shape ({n},), got {self.m.shape}")

        self.lam = int(lam) if lam is not None else 4 + int(3 * math.log(n))
        self.mu = self.lam // 2
        w = np.log((self.lam + 1) / 2) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mu_eff = 1.0 / np.sum(self.weights**2)

        self.c_sigma = (self.mu_eff + 2) / (n + self.mu_eff + 5)
        self.d_sigma = 1 + 2 * max(0.0, math.sqrt((self.mu_eff - 1) / (n + 1)) - 1) + self.c_sigma
        self.c_c = (4 + self.mu_eff / n) / (n + 4 + 2 * self.mu_eff / n)
        self.c_1 = 2 / ((n + 1.3) ** 2 + self.mu_eff)
        self.c_mu = min(1 - self.c_1, 2 * (self.mu_eff - 2 + 1 / self.mu_eff) / ((n + 2) ** 2 + self.mu_eff))
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

        self.C = np.eye(n)
        self.p_sigma = np.zeros(n)
        self.p_c = np.zeros(n)
        self.generation = 0
        self.repairs = 0
        self.best_x = self.m.copy()
        self.best_f = math.inf
        self.rng = stream(seed, "cma")
        self._decompose()

    def _decompose(self) -> None:
        """Refresh the eigenfactors of C, repairing it if degenerate."""
        self.C = 0.5 * (self.C + self.C.T)
        if not np.all(np.isfinite(self.C)):
            self.C = np.eye(self.n)
            self.repairs += 1
        vals, vecs = np.linalg.eigh(self.C)
        floor = 1e-14
        if vals[0] < floor:
            vals = np.maximum(vals, floor)
            self.C = (vecs * vals) @ vecs.T
            self.repairs += 1
        self._B = vecs
        self._D = np.sqrt(vals)


def _reflect_into_unit_box(x: np.ndarray) -> np.ndarray:
    r = np.mod(x, 2.0)
    return np.where(r > 1.0, 2.0 - r, r)


def cma_ask(state: CmaState) -> np.ndarray:
    """Sample lambda candidates around the mean, reflected into [0,1]^n."""
    z = state.rng.standard_normal((state.lam, state.n))
    y = z * state._D @ state._B.T  # rows: B @ (D * z_k)
    return _reflect_into_unit_box(state.m + state.sigma * y)


def _ranked_indices(fitnesses: np.ndarray) -> np.ndarray:
    """Ascending fitness order; non-finite values rank last."""
    f = np.array(fitnesses, dtype=np.float64)
    f[~np.isfinite(f)] = math.inf
    return np.argsort(f, kind="stable")


def cma_tell(state: CmaState, candidates: np.ndarray, fitnesses) -> None:
    """Standard mean/path/covariance/step-size update from one generation."""
    candidates = np.asarray(candidates, dtype=np.float64)
    fitnesses = np.asarray(fitnesses, dtype=np.float64)
    if candidates.shape != (state.lam, state.n) or fitnesses.shape != (state.lam,):
        raise ValueError(
            f"cma_tell: want ({state.lam}, {state.n}) candidates and {state.lam} "
            f"fitnesses, got {candidates.shape} and {fitnesses.shape}"
        )
    order = _ranked_indices(fitnesses)
    if np.isfinite(fitnesses[order[0]]) and fitnesses[order[0]] < state.best_f:
        state.best_f = float(fitnesses[order[0]])
        state.best_x = candidates[order[0]].copy()

    sel = candidates[order[: state.mu]]
    y_sel = (sel - state.m) / state.sigma
    y_w = state.weights @ y_sel
    state.m = state.weights @ sel

    # C^{-1/2} y_w through the cached eigenfactors
    c_inv_half_yw = state._B @ ((state._B.T @ y_w) / state._D)
    cs = state.c_sigma
    state.p_sigma = (1 - cs) * state.p_sigma + math.sqrt(cs * (2 - cs) * state.mu_eff) * c_inv_half_yw

    state.generation += 1
    norm_ps = float(np.linalg.norm(state.p_sigma))
    h_sigma = norm_ps / math.sqrt(1 - (1 - cs) ** (2 * state.generation)) < (1.4 + 2 / (state.n + 1)) * state.chi_n
    cc = state.c_c
    state.p_c = (1 - cc) * state.p_c
    if h_sigma:
        state.p_c = state.p_c + math.sqrt(cc * (2 - cc) * state.mu_eff) * y_w

    delta_h = (1 - float(h_sigma)) * cc * (2 - cc)
    rank_mu = (y_sel.T * state.weights) @ y_sel
    state.C = (
        (1 - state.c_1 - state.c_mu) * state.C
        + state.c_1 * (np.outer(state.p_c, state.p_c) + delta_h * state.C)
        + state.c_mu * rank_mu
    )
    state.sigma *= math.exp((cs / state.d_sigma) * (norm_ps / state.chi_n - 1))
    state._decompose()


def cma_minimize(fn, n: int, seed: int, max_evals: int, sigma0: float = 0.3,
                 mean0=None, target: float | None = None):
    """Ask/tell loop helper; fn maps a [0,1]^n vector to a scalar cost.

    Returns (best_x, best_f, evals, history of per-generation bests).
    """
    state = CmaState(n, seed, sigma0=sigma0, mean0=mean0)
    history = []
    evals = 0
    while evals < max_evals:
        xs = cma_ask(state)
        fs = [fn(x) for x in xs]
        evals += len(xs)
        cma_tell(state, xs, fs)
        history.append(state.best_f)
        if target is not None and state.best_f < target:
            break
    return state.best_x, state.best_f, evals, history


# ---------------------------------------------------------------------------
# sensor traces


@dataclass(frozen=True)
class SensorTrace:
    """One week of building-level observations: mean indoor temperature
    and the aggregate heat consumption, both hourly."""

    t_int: np.ndarray  # (168,) deg C
    q_heat: np.ndarray  # (168,) kW

    def __post_init__(self):
        for name in ("t_int", "q_heat"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != (HOURS_PER_WEEK,):
                raise ValueError(f"{name}: want ({HOURS_PER_WEEK},), got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name}: non-finite values")
            a = a.copy()
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @classmethod
    def from_output(cls, targets: np.ndarray) -> "SensorTrace":
        """Aggregate a full (168, 8) output matrix down to the two sensors."""
        targets = np.asarray(targets, dtype=np.float64)
        return cls(targets[:, T_INT_INDEX], heat_aggregate_of(targets))

    def save_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("hour,t_int,q_heat\n")
            for h in range(HOURS_PER_WEEK):
                f.write(f"{h},{float(self.t_int[h])!r},{float(self.q_heat[h])!r}\n")

    @classmethod
    def load_csv(cls, path) -> "SensorTrace":
        t, q = np.empty(HOURS_PER_WEEK), np.empty(HOURS_PER_WEEK)
        with open(path) as f:
            header = f.readline().strip()
            if header != "hour,t_int,q_heat":
                raise ValueError(f"{path}: unexpected header {header!r}")
            count = 0
            for lineno, line in enumerate(f, start=2):
                if not line.strip():
                    continue
                parts = line.split(",")
                try:
                    h = int(parts[0])
                    t[h], q[h] = float(parts[1]), float(parts[2])
                except (IndexError, ValueError) as e:
                    raise ValueError(f"{path} line {lineno}: {e}") from None
                count += 1
        if count != HOURS_PER_WEEK:
            raise ValueError(f"{path}: {count} rows, want {HOURS_PER_WEEK}")
        return cls(t, q)


# ---------------------------------------------------------------------------
# the search space


@dataclass(frozen=True)
class FreeVariable:
    """One schema variable freed for calibration.

    Daily variables expand to one dimension per day when per_day is set,
    otherwise a single dimension drives every day in lockstep.
    """

    name: str
    per_day: bool = False


class CalibrationSpace:
    """Ordered free variables plus the pinned values of everything else."""

    def __init__(self, free, base_params: BuildingParams, base_bms: BmsSchedule,
                 base_occ: OccupancySchedule, schema: Schema = DEFAULT_SCHEMA):
        self.schema = schema
        self.free = tuple(FreeVariable(f.name, f.per_day) if isinstance(f, FreeVariable)
                          else FreeVariable(*f) if isinstance(f, tuple) else FreeVariable(f)
                          for f in free)
        if not self.free:
            raise SchemaError("calibration space needs at least one free variable")
        self.base_params = base_params
        self.base_bms = base_bms
        self.base_occ = base_occ

        self._building = {s.name for s in schema.building}
        self._bms = {s.name for s in schema.bms}
        self._occ = {s.name for s in schema.occupancy}
        self._dims = []  # (label, spec, kind, day)
        for fv in self.free:
            spec = schema.spec(fv.name)  # raises on unknown names
            if fv.name in self._building:
                if fv.per_day:
                    raise SchemaError(f"{fv.name} is static, per_day does not apply")
                self._dims.append((fv.name, spec, "static", None))
            else:
                n_days = DAYS_PER_WEEK if fv.name in self._bms else WEEKDAYS
                if fv.per_day:
                    for d in range(n_days):
                        self._dims.append((f"{fv.name}[{DAY_NAMES[d]}]", spec, "daily", d))
                else:
                    self._dims.append((fv.name, spec, "daily", None))
        seen = set()
        for label, *_ in self._dims:
            if label in seen:
                raise SchemaError(f"duplicate free variable {label}")
            seen.add(label)

    @property
    def dim(self) -> int:
        return len(self._dims)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(label for label, *_ in self._dims)

    def bounds(self):
        lo = np.array([spec.min for _, spec, _, _ in self._dims])
        hi = np.array([spec.max for _, spec, _, _ in self._dims])
        return lo, hi

    def decode(self, x01, quantize: bool = True):
        """[0,1]^n vector -> (params, bms, occ); snaps to grids when asked."""
        x01 = np.asarray(x01, dtype=np.float64)
        if x01.shape != (self.dim,):
            raise ValueError(f"decode: want ({self.dim},), got {x01.shape}")
        params_d = self.base_params.to_dict()
        bms_d = self.base_bms.to_dict()
        occ_d = self.base_occ.to_dict()
        for (label, spec, kind, day), u in zip(self._dims, x01):
            v = spec.min + float(np.clip(u, 0.0, 1.0)) * (spec.max - spec.min)
            if quantize:
                v = spec.quantize(v)
            if kind == "static":
                params_d[spec.name] = v
            elif spec.name in self._bms:
                if day is None:
                    bms_d[spec.name] = [v] * DAYS_PER_WEEK
                else:
                    bms_d[spec.name][day] = v
            else:
                if day is None:
                    occ_d[spec.name] = [v] * WEEKDAYS
                else:
                    occ_d[spec.name][day] = v
        return (
            BuildingParams.from_dict(params_d),
            BmsSchedule.from_dict(bms_d),
            OccupancySchedule.from_dict(occ_d),
        )

    def assemble(self, x01, weather: WeatherSeries, quantize: bool = True) -> np.ndarray:
        params, bms, occ = self.decode(x01, quantize)
        return assemble_inputs(params, bms, occ, weather, self.schema)

    # A hand-picked informative subset: envelope and internal-gain levers
    # that shape both channels without the full 100+ dim schedule space.
    DEFAULT_FREE = (
        "capacitance_kJ_perdegreK_perm3",
        "airchange_infiltration_vol_per_h",
        "nb_occupants",
        "nb_PCs",
        "percent_light_night",
        "percent_PCs_night",
        "facade_1_window_area_percent",
        "facade_3_window_area_percent",
    )

    @classmethod
    def default(cls, base_params, base_bms, base_occ, schema: Schema = DEFAULT_SCHEMA):
        return cls(cls.DEFAULT_FREE, base_params, base_bms, base_occ, schema)

    def to_dict(self) -> dict:
        return {
            "free": [{"name": f.name, "per_day": f.per_day} for f in self.free],
            "base_params": self.base_params.to_dict(),
            "base_bms": self.base_bms.to_dict(),
            "base_occ": self.base_occ.to_dict(),
        }

    @classmethod
    def from_dict(cls, d, schema: Schema = DEFAULT_SCHEMA) -> "CalibrationSpace":
        free = [FreeVariable(f["name"], bool(f.get("per_day", False))) for f in d["free"]]
        return cls(
            free,
            BuildingParams.from_dict(d["base_params"]),
            BmsSchedule.from_dict(d["base_bms"]),
            OccupancySchedule.from_dict(d["base_occ"]),
            schema,
        )


# ---------------------------------------------------------------------------
# cost


@dataclass(frozen=True)
class FrozenModel:
    """A trained surrogate with everything needed to run it."""

    params: dict
    config: mdl.MetamodelConfig
    kind: str
    norm: NormStats

    @classmethod
    def load(cls, path) -> "FrozenModel":
        params, cfg, kind, meta = mdl.load_model(path)
        if "norm" not in meta:
            raise ValueError(f"{path}: checkpoint lacks normalization stats")
        return cls(params, cfg, kind, NormStats.from_dict(meta["norm"]))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name].data, dtype="<f8").tobytes())
        return h.hexdigest()


def cost_from_series(pred_t, pred_q, trace: SensorTrace) -> float:
    """1 - (R2_T + R2_Q)/2 between predicted series and the trace."""
    pred_t = np.asarray(pred_t, dtype=np.float64)
    pred_q = np.asarray(pred_q, dtype=np.float64)
    if not (np.all(np.isfinite(pred_t)) and np.all(np.isfinite(pred_q))):
        return WORST_COST
    return 1.0 - 0.5 * (r2_score(trace.t_int, pred_t) + r2_score(trace.q_heat, pred_q))


def calibration_cost(x01, space: CalibrationSpace, model: FrozenModel,
                     trace: SensorTrace, weather: WeatherSeries,
                     quantize: bool = True) -> float:
    inputs = space.assemble(x01, weather, quantize)
    pred = predict(model.params, model.config, model.kind, inputs, model.norm)
    return cost_from_series(pred[:, T_INT_INDEX], heat_aggregate_of(pred), trace)


# ---------------------------------------------------------------------------
# the calibration loop


def _trace_metrics(pred_t, pred_q, trace: SensorTrace, mask) -> dict:
    out = {
        "mse_t": float(np.mean((pred_t - trace.t_int) ** 2)),
        "mse_q": float(np.mean((pred_q - trace.q_heat) ** 2)),
        "r2_t": r2_score(trace.t_int, pred_t),
        "r2_q": r2_score(trace.q_heat, pred_q),
    }
    if mask.any():
        out["mse_t_occ"] = float(np.mean((pred_t[mask] - trace.t_int[mask]) ** 2))
        out["mse_q_occ"] = float(np.mean((pred_q[mask] - trace.q_heat[mask]) ** 2))
    else:
        out["mse_t_occ"] = None
        out["mse_q_occ"] = None
    return out


@dataclass
class CalibrationReport:
    names: tuple
    values: tuple  # quantized physical values of the best candidate
    best_cost: float
    initial_cost: float
    history: list  # best-so-far cost per generation
    week_metrics: list  # per calibration week
    holdout_metrics: list  # per held-out week
    generations: int
    evaluations: int

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "values": list(self.values),
            "best_cost": self.best_cost,
            "initial_cost": self.initial_cost,
            "history": list(self.history),
            "week_metrics": self.week_metrics,
            "holdout_metrics": self.holdout_metrics,
            "generations": self.generations,
            "evaluations": self.evaluations,
        }


def calibrate(
    space: CalibrationSpace,
    model: FrozenModel,
    traces,
    weathers,
    budget: int = 500,
    seed: int = 0,
    holdout_traces=(),
    holdout_weathers=(),
    sigma0: float = 0.3,
    log=None,
):
    """CMA-ES over the space for `budget` generations; the model stays frozen.

    Returns (best_x01, report). Candidate fitness is the mean cost over the
    calibration weeks; every candidate of a generation is evaluated in one
    batched forward pass per week.
    """
    traces = list(traces)
    weathers = list(weathers)
    if len(traces) != len(weathers) or not traces:
        raise ValueError(f"need matching traces/weathers, got {len(traces)}/{len(weathers)}")
    if len(holdout_traces) != len(holdout_weathers):
        raise ValueError("held-out traces and weathers differ in length")

    def population_costs(xs) -> np.ndarray:
        costs = np.zeros(len(xs))
        for trace, weather in zip(traces, weathers):
            batch = np.stack([space.assemble(x, weather) for x in xs])
            preds = predict(model.params, model.config, model.kind, batch, model.norm)
            for i, p in enumerate(preds):
                costs[i] += cost_from_series(p[:, T_INT_INDEX], heat_aggregate_of(p), trace)
        return costs / len(traces)

    state = CmaState(space.dim, seed, sigma0=sigma0)
    initial_cost = float(population_costs([state.m])[0])
    best_x, best_f = state.m.copy(), initial_cost
    history = []
    evaluations = 1
    for gen in range(budget):
        xs = cma_ask(state)
        fs = population_costs(xs)
        evaluations += len(xs)
        cma_tell(state, xs, fs)
        if state.best_f < best_f:
            best_f, best_x = state.best_f, state.best_x.copy()
        history.append(best_f)
        if log is not None and (gen + 1) % 50 == 0:
            log(gen + 1, best_f)

    def week_rows(ts, ws):
        rows = []
        _, _, occ = space.decode(best_x)
        mask = expand_daily(occ) > 0
        for k, (trace, weather) in enumerate(zip(ts, ws)):
            inputs = space.assemble(best_x, weather)
            pred = predict(model.params, model.config, model.kind, inputs, model.norm)
            row = _trace_metrics(pred[:, T_INT_INDEX], heat_aggregate_of(pred), trace, mask)
            row["week"] = k
            rows.append(row)
        return rows

    report = CalibrationReport(
        names=space.names,
        values=tuple(
            float(v)
            for v in _decoded_vector(space, best_x)
        ),
        best_cost=best_f,
        initial_cost=initial_cost,
        history=history,
        week_metrics=week_rows(traces, weathers),
        holdout_metrics=week_rows(list(holdout_traces), list(holdout_weathers)),
        generations=budget,
        evaluations=evaluations,
    )
    return best_x, report


def _decoded_vector(space: CalibrationSpace, x01) -> np.ndarray:
    """Physical (quantized) values of each free dimension, in space order."""
    params, bms, occ = space.decode(x01)
    values = []
    for label, spec, kind, day in space._dims:
        if kind == "static":
            values.append(getattr(params, spec.name))
        elif spec.name in space._bms:
            arr = getattr(bms, spec.name)
            values.append(arr[day if day is not None else 0])
        else:
            arr = getattr(occ, spec.name)
            values.append(arr[day if day is not None else 0])
    return np.array(values)
