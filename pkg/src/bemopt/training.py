"""Dataset sampling, the training loss, Table-style metrics, and the fit loop.

The sampling side draws every declared variable uniformly on its quantized
grid, attaches one weather week per example, and labels the episode with the
reference simulator. The training side runs minibatch Adam on the composite
loss and keeps the best-validation checkpoint.
"""

import csv
import hashlib
import json
import math
import multiprocessing
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .schema import (
    DEFAULT_SCHEMA,
    HEAT_AGGREGATE_INDICES,
    HOURS_PER_WEEK,
    T_INT_INDEX,
    BmsSchedule,
    BuildingParams,
    NormStats,
    OccupancySchedule,
    Schema,
    SchemaError,
    heat_aggregate_of,
    make_episode,
)
from .rcsim import simulate_week
from .seeding import stream, substream

__all__ = [
    "LossWeights",
    "AUX_WEIGHT",
    "Dataset",
    "TrainResult",
    "MetricStat",
    "MetricReport",
    "split_counts",
    "sample_episode_config",
    "sample_dataset",
    "r2_score",
    "loss",
    "training_loss",
    "metrics",
    "kfold_assignments",
    "kfold_split",
    "predict",
    "train",
    "save_history_csv",
    "load_history_csv",
]

# Weight of the auxiliary all-channel MSE folded into the training objective
# (the reported loss stays the two-term temperature/consumption form).
AUX_WEIGHT = 0.1

SPLIT_RATIOS = (0.95, 0.025, 0.025)
SPLIT_NAMES = ("train", "val", "test")

DATASET_ARRAYS = "arrays.bin"
DATASET_MANIFEST = "manifest.json"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    """Relative weight of the temperature and consumption error terms."""

    alpha: float = 1.0
    beta: float = 0.3

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"loss weights must be >= 0, got ({self.alpha}, {self.beta})")
        if self.alpha == 0 and self.beta == 0:
            raise ValueError("loss weights cannot both be zero")


# ---------------------------------------------------------------------------
# dataset sampling


def split_counts(n_total: int, ratios=SPLIT_RATIOS) -> tuple[int, int, int]:
    """Train/val/test counts; val and test round to nearest, train absorbs."""
    if n_total < 3:
        raise ValueError(f"need at least 3 examples to split, got {n_total}")
    n_val = max(1, round(n_total * ratios[1]))
    n_test = max(1, round(n_total * ratios[2]))
    n_train = n_total - n_val - n_test
    if n_train < 1:
        raise ValueError(f"split of {n_total} leaves no training examples")
    return n_train, n_val, n_test


def sample_episode_config(schema: Schema, n_weather: int, rng):
    """Draw one episode's free variables; returns (params, bms, occ, week index).

    Draw order is part of the on-disk determinism contract: building
    statics in declaration order, then each daily variable as 7 draws
    Mon..Sun, then the weekday occupation window, then the weather index.
    """
    statics = [spec.sample(rng) for spec in schema.building]
    params = BuildingParams.from_vector(statics)
    daily = {}
    for spec in schema.bms:
        daily[spec.name] = tuple(spec.sample(rng) for _ in range(7))
    bms = BmsSchedule(**daily)
    start = tuple(schema.occupancy[0].sample(rng) for _ in range(5))
    end = tuple(schema.occupancy[1].sample(rng) for _ in range(5))
    occ = OccupancySchedule(start, end, max_occupants=params.nb_occupants)
    week = int(rng.integers(0, n_weather))
    return params, bms, occ, week


def _label_one(args):
    params, bms, occ, weather = args
    return simulate_week(params, bms, occ, weather).data


@dataclass
class Dataset:
    """Sampled, labeled, split, and normalization-fitted training corpus."""

    schema: Schema
    inputs: np.ndarray  # (n, 168, d_in) physical units
    targets: np.ndarray  # (n, 168, 8) physical units
    masks: np.ndarray  # (n, 168) bool, occupied hours
    weather_index: np.ndarray  # (n,) which pool week each episode used
    splits: dict  # name -> np.ndarray of episode indices
    norm: NormStats
    seed: int
    n_weather: int

    @property
    def n_episodes(self) -> int:
        return self.inputs.shape[0]

    def split_arrays(self, name: str):
        idx = self.splits[name]
        return self.inputs[idx], self.targets[idx], self.masks[idx]

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        ad.save_tensors(
            os.path.join(directory, DATASET_ARRAYS),
            {
                "inputs": self.inputs,
                "targets": self.targets,
                "masks": self.masks.astype(np.float64),
                "weather_index": self.weather_index.astype(np.float64),
            },
            meta={"n_episodes": int(self.n_episodes)},
        )
        manifest = {
            "schema": self.schema.to_dict(),
            "seed": int(self.seed),
            "n_weather": int(self.n_weather),
            "splits": {k: [int(i) for i in v] for k, v in self.splits.items()},
            "norm": self.norm.to_dict(),
        }
        with open(os.path.join(directory, DATASET_MANIFEST), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, directory) -> "Dataset":
        path = os.path.join(directory, DATASET_MANIFEST)
        try:
            with open(path) as f:
                manifest = json.load(f)
        except FileNotFoundError:
            raise TrainingError(f"{directory}: no dataset manifest found") from None
        except json.JSONDecodeError as e:
            raise TrainingError(f"{path}: manifest is not valid JSON ({e})") from None
        tensors, _ = ad.load_tensors(os.path.join(directory, DATASET_ARRAYS))
        return cls(
            schema=Schema.from_dict(manifest["schema"]),
            inputs=tensors["inputs"],
            targets=tensors["targets"],
            masks=tensors["masks"].astype(bool),
            weather_index=tensors["weather_index"].astype(np.int64),
            splits={k: np.array(v, dtype=np.int64) for k, v in manifest["splits"].items()},
            norm=NormStats.from_dict(manifest["norm"]),
            seed=int(manifest["seed"]),
            n_weather=int(manifest["n_weather"]),
        )


def sample_dataset(
    schema: Schema,
    weather_pool,
    n_total: int,
    seed: int,
    counts: tuple[int, int, int] | None = None,
    jobs: int = 1,
) -> Dataset:
    """Draw n_total labeled episodes and split them train/val/test.

    All draws come from per-episode named substreams, so the result is
    reproducible bit-for-bit regardless of the labeling parallelism.
    """
    if not weather_pool:
        raise ValueError("weather pool is empty")
    if counts is None:
        counts = split_counts(n_total)
    if sum(counts) != n_total:
        raise ValueError(f"split counts {counts} do not sum to n_total={n_total}")

    configs = []
    for i in range(n_total):
        rng = substream(seed, "episode", i)
        configs.append(sample_episode_config(schema, len(weather_pool), rng))

    work = [(p, b, o, weather_pool[w]) for p, b, o, w in configs]
    if jobs > 1:
        with multiprocessing.get_context("fork").Pool(jobs) as pool:
            labels = pool.map(_label_one, work, chunksize=16)
    else:
        labels = [_label_one(w) for w in work]

    d_in = schema.d_in
    inputs = np.empty((n_total, HOURS_PER_WEEK, d_in))
    targets = np.empty((n_total, HOURS_PER_WEEK, schema.d_out))
    masks = np.empty((n_total, HOURS_PER_WEEK), dtype=bool)
    for i, ((params, bms, occ, w), y) in enumerate(zip(configs, labels)):
        ep = make_episode(params, bms, occ, weather_pool[w], y, schema)
        inputs[i] = ep.inputs
        targets[i] = ep.targets
        masks[i] = ep.occupied_mask

    # contiguous split: episodes are i.i.d. draws, so position carries no signal
    n_train, n_val, n_test = counts
    splits = {
        "train": np.arange(0, n_train),
        "val": np.arange(n_train, n_train + n_val),
        "test": np.arange(n_train + n_val, n_total),
    }
    norm = NormStats.fit(schema, inputs[splits["train"]], targets[splits["train"]])
    return Dataset(
        schema=schema,
        inputs=inputs,
        targets=targets,
        masks=masks,
        weather_index=np.array([w for _, _, _, w in configs], dtype=np.int64),
        splits=splits,
        norm=norm,
        seed=seed,
        n_weather=len(weather_pool),
    )


# ---------------------------------------------------------------------------
# loss


def _pooled_rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((a - b) ** 2)))


def loss(pred: np.ndarray, target: np.ndarray, weights: LossWeights = LossWeights()) -> float:
    """alpha*log(1+D_T) + beta*log(1+D_Q) on physical-unit outputs.

    D_T is the pooled RMSE of the indoor temperature channel, D_Q the
    pooled RMSE of the four-channel heat consumption aggregate; both over
    every hour of every episode passed in.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"loss: prediction {pred.shape} vs target {target.shape}")
    d_t = _pooled_rmse(pred[..., T_INT_INDEX], target[..., T_INT_INDEX])
    d_q = _pooled_rmse(heat_aggregate_of(pred), heat_aggregate_of(target))
    return weights.alpha * math.log1p(d_t) + weights.beta * math.log1p(d_q)


def training_loss(
    pred,
    target_norm: np.ndarray,
    norm: NormStats,
    weights: LossWeights = LossWeights(),
):
    """Differentiable objective on normalized predictions.

    Returns (total, reported): the optimized total adds an auxiliary MSE
    over all normalized channels at weight AUX_WEIGHT so that every output
    head receives gradient; `reported` is the plain two-term loss, computed
    in physical units inside the same graph.
    """
    target_norm = np.asarray(target_norm, dtype=np.float64)
    if pred.shape != target_norm.shape:
        raise ValueError(f"training_loss: prediction {pred.shape} vs target {target_norm.shape}")

    std = ad.constant(norm.target_std)
    mean = ad.constant(norm.target_mean)
    pred_phys = ad.add(ad.mul(pred, std), mean)
    target_phys = norm.denormalize_targets(target_norm)

    def rmse(delta):
        return ad.sqrt(ad.mean(ad.square(delta)))

    t = ad.slice_last(pred_phys, T_INT_INDEX, T_INT_INDEX + 1)
    d_t = rmse(ad.sub(t, ad.constant(target_phys[..., T_INT_INDEX:T_INT_INDEX + 1])))

    q_parts = [ad.slice_last(pred_phys, j, j + 1) for j in HEAT_AGGREGATE_INDICES]
    q = q_parts[0]
    for part in q_parts[1:]:
        q = ad.add(q, part)
    d_q = rmse(ad.sub(q, ad.constant(heat_aggregate_of(target_phys)[..., None])))

    reported = ad.add(weights.alpha * ad.log1p(d_t), weights.beta * ad.log1p(d_q))
    aux = ad.mean(ad.square(ad.sub(pred, ad.constant(target_norm))))
    total = ad.add(reported, AUX_WEIGHT * aux)
    return total, reported


# ---------------------------------------------------------------------------
# metrics


def r2_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination, constant-target convention included."""
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"r2_score: {y_true.shape} vs {y_pred.shape}")
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class MetricStat:
    mean: float
    std: float

    def to_dict(self):
        return {"mean": self.mean, "std": self.std}


def _stat(values) -> MetricStat | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    a = np.asarray(vals, dtype=np.float64)
    return MetricStat(float(a.mean()), float(a.std()))


_METRIC_FIELDS = ("loss", "mse_t", "mse_q", "mse_t_occ", "mse_q_occ", "r2_t", "r2_q")


@dataclass(frozen=True)
class MetricReport:
    """Per-episode metric distribution: mean and std across episodes.

    The occupied-hours variants are None when no passed episode has any
    occupied hour (absent, not zero).
    """

    loss: MetricStat
    mse_t: MetricStat
    mse_q: MetricStat
    mse_t_occ: MetricStat | None
    mse_q_occ: MetricStat | None
    r2_t: MetricStat
    r2_q: MetricStat
    n_episodes: int

    def to_dict(self):
        d = {"n_episodes": self.n_episodes}
        for name in _METRIC_FIELDS:
            stat = getattr(self, name)
            d[name] = None if stat is None else stat.to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "MetricReport":
        kw = {"n_episodes": int(d["n_episodes"])}
        for name in _METRIC_FIELDS:
            v = d[name]
            kw[name] = None if v is None else MetricStat(float(v["mean"]), float(v["std"]))
        return cls(**kw)


def metrics(
    preds: np.ndarray,
    targets: np.ndarray,
    masks: np.ndarray,
    weights: LossWeights = LossWeights(),
) -> MetricReport:
    """Episode-wise error suite on physical-unit outputs.

    preds/targets are (n, 168, 8); masks is (n, 168) marking occupied hours.
    MSE_T and R2_T read the indoor temperature channel, MSE_Q and R2_Q the
    heat consumption aggregate.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    if preds.ndim == 2:
        preds, targets, masks = preds[None], targets[None], masks[None]
    if preds.shape != targets.shape or masks.shape != preds.shape[:2]:
        raise ValueError(
            f"metrics: shapes {preds.shape}, {targets.shape}, {masks.shape} do not line up"
        )

    rows = {name: [] for name in _METRIC_FIELDS}
    for i in range(preds.shape[0]):
        p_t = preds[i, :, T_INT_INDEX]
        y_t = targets[i, :, T_INT_INDEX]
        p_q = heat_aggregate_of(preds[i])
        y_q = heat_aggregate_of(targets[i])
        m = masks[i]
        rows["loss"].append(loss(preds[i], targets[i], weights))
        rows["mse_t"].append(float(np.mean((p_t - y_t) ** 2)))
        rows["mse_q"].append(float(np.mean((p_q - y_q) ** 2)))
        if m.any():
            rows["mse_t_occ"].append(float(np.mean((p_t[m] - y_t[m]) ** 2)))
            rows["mse_q_occ"].append(float(np.mean((p_q[m] - y_q[m]) ** 2)))
        else:
            rows["mse_t_occ"].append(None)
            rows["mse_q_occ"].append(None)
        rows["r2_t"].append(r2_score(y_t, p_t))
        rows["r2_q"].append(r2_score(y_q, p_q))

    return MetricReport(
        n_episodes=preds.shape[0],
        **{name: _stat(rows[name]) for name in _METRIC_FIELDS},
    )


# ---------------------------------------------------------------------------
# k-fold assignment (hash of the episode index, stable under resampling)


def kfold_assignments(n: int, k: int, seed: int) -> np.ndarray:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    folds = np.empty(n, dtype=np.int64)
    for i in range(n):
        digest = hashlib.sha256(f"{seed}:fold:{i}".encode()).digest()
        folds[i] = int.from_bytes(digest[:8], "little") % k
    return folds


def kfold_split(indices: np.ndarray, k: int, seed: int, fold: int):
    """(train, val) index arrays for one fold of the given episode indices."""
    if not 0 <= fold < k:
        raise ValueError(f"fold {fold} outside [0, {k})")
    indices = np.asarray(indices)
    assignment = kfold_assignments(len(indices), k, seed)
    return indices[assignment != fold], indices[assignment == fold]


# ---------------------------------------------------------------------------
# training loop


def predict(params, cfg, kind, inputs, norm: NormStats, batch_size: int = 32) -> np.ndarray:
    """Forward raw physical inputs through a model; physical-unit outputs."""
    forward = mdl.forward_for(kind)
    x = np.asarray(inputs, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    xn = norm.normalize_inputs(x)
    outs = []
    for lo in range(0, x.shape[0], batch_size):
        z = forward(params, cfg, ad.constant(xn[lo:lo + batch_size]))
        outs.append(norm.denormalize_targets(z.data))
    out = np.concatenate(outs, axis=0)
    return out[0] if squeeze else out


@dataclass
class TrainResult:
    params: dict
    config: object
    kind: str
    history: list
    best_epoch: int
    best_val_loss: float
    diverged: bool
    report: MetricReport  # validation metrics of the retained checkpoint


_HISTORY_COLUMNS = ("epoch", "train_objective", "train_loss", "val_loss", "val_r2_t", "val_r2_q")


def save_history_csv(path, history) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in _HISTORY_COLUMNS[1:]])


def load_history_csv(path) -> list:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            parsed = {"epoch": int(row["epoch"])}
            parsed.update({c: float(row[c]) for c in _HISTORY_COLUMNS[1:]})
            out.append(parsed)
    return out


def train(
    dataset: Dataset,
    kind: str = "transformer",
    config=None,
    epochs: int = 60,
    batch_size: int = 16,
    lr: float = 1e-3,
    seed: int = 0,
    weights: LossWeights = LossWeights(),
    indices=None,
    out_dir=None,
    log=None,
) -> TrainResult:
    """Minibatch Adam on the training split; keeps the best-validation weights.

    `indices` overrides the dataset's own train/val indices (for k-fold);
    validation selection uses the reported two-term loss pooled over the
    whole validation set. A non-finite training loss aborts the run and the
    last good checkpoint is returned with diverged=True.
    """
    if config is None:
        config = mdl.MetamodelConfig(d_in=dataset.schema.d_in)
    if config.d_in != dataset.schema.d_in or config.d_out != dataset.schema.d_out:
        raise ValueError(
            f"model widths ({config.d_in}, {config.d_out}) do not match "
            f"dataset ({dataset.schema.d_in}, {dataset.schema.d_out})"
        )
    forward = mdl.forward_for(kind)
    if indices is None:
        train_idx, val_idx = dataset.splits["train"], dataset.splits["val"]
    else:
        train_idx, val_idx = (np.asarray(ix, dtype=np.int64) for ix in indices)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise ValueError("empty train or validation split")

    norm = dataset.norm
    xn = norm.normalize_inputs(dataset.inputs)
    yn = norm.normalize_targets(dataset.targets)

    params = mdl.INITS[kind](config, stream(seed, kind + "-init"))
    plist = mdl.param_list(params)
    state = ad.AdamState(plist, lr=lr)

    def val_metrics(p):
        pred = predict(p, config, kind, dataset.inputs[val_idx], norm)
        rep = metrics(pred, dataset.targets[val_idx], dataset.masks[val_idx], weights)
        pooled = loss(pred, dataset.targets[val_idx], weights)
        return pooled, rep

    best_val, best_report = val_metrics(params)
    best_snapshot = {k: v.data.copy() for k, v in params.items()}
    best_epoch = 0
    history = [
        {
            "epoch": 0,
            "train_objective": float("nan"),
            "train_loss": float("nan"),
            "val_loss": best_val,
            "val_r2_t": best_report.r2_t.mean,
            "val_r2_q": best_report.r2_q.mean,
        }
    ]
    diverged = False

    for epoch in range(1, epochs + 1):
        order = train_idx[substream(seed, "shuffle", epoch).permutation(len(train_idx))]
        batch_objectives = []
        batch_reported = []
        for lo in range(0, len(order), batch_size):
            sel = order[lo:lo + batch_size]
            pred = forward(params, config, ad.constant(xn[sel]))
            total, reported = training_loss(pred, yn[sel], norm, weights)
            if not np.isfinite(total.data):
                diverged = True
                break
            total.backward()
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in plist]
            ad.adam_step(plist, grads, state)
            ad.zero_grads(plist)
            batch_objectives.append(float(total.data))
            batch_reported.append(float(reported.data))
        if diverged:
            break

        val_loss, report = val_metrics(params)
        history.append(
            {
                "epoch": epoch,
                "train_objective": float(np.mean(batch_objectives)),
                "train_loss": float(np.mean(batch_reported)),
                "val_loss": val_loss,
                "val_r2_t": report.r2_t.mean,
                "val_r2_q": report.r2_q.mean,
            }
        )
        if val_loss < best_val:
            best_val = val_loss
            best_report = report
            best_epoch = epoch
            best_snapshot = {k: v.data.copy() for k, v in params.items()}
        if log is not None:
            log(history[-1])

    for name, p in params.items():
        p.data = best_snapshot[name]

    result = TrainResult(
        params=params,
        config=config,
        kind=kind,
        history=history,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        diverged=diverged,
        report=best_report,
    )
    if out_dir is not None:
        write_train_artifacts(out_dir, result, norm, seed)
    return result


def write_train_artifacts(out_dir, result: TrainResult, norm: NormStats, seed: int) -> list:
    """model.bin + history.csv for a finished run; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    model_path = os.path.join(out_dir, "model.bin")
    mdl.save_model(
        model_path,
        result.params,
        result.config,
        result.kind,
        extra_meta={
            "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss,
            "diverged": result.diverged,
            "seed": seed,
            "norm": norm.to_dict(),
        },
    )
    history_path = os.path.join(out_dir, "history.csv")
    save_history_csv(history_path, result.history)
    return [model_path, history_path]
