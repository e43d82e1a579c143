"""Structure-preserving denoising of piecewise-constant images, learned through the filter.

The guided feature is the noisy input scaled by a learnable factor, so the
joint edge distance is (1 + s^2) times the input distance and the guidance
leg of the gradient is exercised.  Validation always filters on the minimum
spanning tree of a fresh noise draw.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .feature_map import FeatureMap
from .gradients import backward
from .grid_graph import UnaryParams
from .tree_filter import FilterInvariantError, transform

log = logging.getLogger(__name__)

TREE_MODES = ("mst", "learnable-random")


@dataclass(frozen=True)
class ToyTask:
    height: int = 24
    width: int = 24
    channels: int = 3
    n_regions: int = 6
    noise_sigma: float = 0.15
    seed: int = 0


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    learning_rate: float = 8.0
    tree_mode: str = "mst"
    sample_seed: int = 0
    groups: int = 1
    beta_init: float = 0.0
    guide_scale_init: float = 1.0
    learn_guide_scale: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.tree_mode not in TREE_MODES:
            raise ValueError(f"tree_mode must be one of {TREE_MODES}")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


def _clean_image(task: ToyTask) -> np.ndarray:
    rng = np.random.default_rng((task.seed, 0))
    img = np.empty((task.height, task.width, task.channels))
    img[:] = rng.random(task.channels)
    for _ in range(task.n_regions - 1):
        y0, y1 = np.sort(rng.integers(0, task.height + 1, 2))
        x0, x1 = np.sort(rng.integers(0, task.width + 1, 2))
        if y1 == y0:
            y1 = min(y0 + 1, task.height)
            y0 = y1 - 1
        if x1 == x0:
            x1 = min(x0 + 1, task.width)
            x0 = x1 - 1
        img[y0:y1, x0:x1] = rng.random(task.channels)
    return img


def generate_task(task: ToyTask, split: int = 0) -> tuple[FeatureMap, FeatureMap]:
    """(noisy, clean); ``split`` selects an independent noise draw over the same image."""
    if task.height < 1 or task.width < 1 or task.channels < 1 or task.n_regions < 1:
        raise ValueError(f"degenerate task {task}")
    if task.height * task.width < 2:
        raise ValueError("task needs at least two pixels")
    if task.noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    clean = _clean_image(task)
    noise = np.random.default_rng((task.seed, 1 + split)).normal(size=clean.shape)
    noisy = clean + task.noise_sigma * noise
    return FeatureMap(noisy), FeatureMap(clean)


@dataclass
class Params:
    pi: np.ndarray
    beta: np.ndarray
    guide_scale: float

    def unary(self) -> UnaryParams:
        return UnaryParams(self.pi, self.beta)


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    initial_val_loss: float = float("nan")
    final_val_loss: float = float("nan")
    unfiltered_loss: float = float("nan")
    params: Params | None = None


def _regroup(fmap: FeatureMap, groups: int) -> FeatureMap:
    return fmap if fmap.groups == groups else fmap.with_groups(groups)


def loss_and_grad(params: Params, noisy: FeatureMap, clean: FeatureMap, tree_mode: str = "mst",
                  seed=0, need_grad: bool = True):
    x = noisy
    g = FeatureMap(params.guide_scale * noisy.data, groups=noisy.groups)
    mode = "random" if tree_mode == "learnable-random" else "mst"
    state = transform(x, g, params.unary(), tree_mode=mode, seed=seed)
    resid = state.output.data - clean.data
    loss = float(np.mean(resid * resid))
    if not need_grad:
        return loss, None
    grads = backward(state, params.unary(), x, g, 2.0 * resid / resid.size)
    d_scale = float(np.sum(grads.d_guided * noisy.data))
    return loss, (grads.d_pi, grads.d_beta, d_scale)


def validation_loss(params: Params, task: ToyTask, groups: int) -> float:
    noisy, clean = generate_task(task, split=1)
    loss, _ = loss_and_grad(params, _regroup(noisy, groups), clean, "mst", need_grad=False)
    return loss


def init_params(task: ToyTask, config: TrainConfig) -> Params:
    if task.channels % config.groups:
        raise ValueError("channels must be divisible by groups")
    return Params(np.zeros((config.groups, task.channels // config.groups)),
                  np.full(config.groups, float(config.beta_init)),
                  float(config.guide_scale_init))


def train(task: ToyTask, config: TrainConfig) -> TrainResult:
    """Plain gradient descent on the training noise draw."""
    noisy, clean = generate_task(task, split=0)
    noisy = _regroup(noisy, config.groups)
    params = init_params(task, config)
    result = TrainResult()
    result.initial_val_loss = validation_loss(params, task, config.groups)
    val_noisy, val_clean = generate_task(task, split=1)
    result.unfiltered_loss = float(np.mean((val_noisy.data - val_clean.data) ** 2))
    lr = config.learning_rate
    for step in range(config.steps):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                loss, (d_pi, d_beta, d_scale) = loss_and_grad(
                    params, noisy, clean, config.tree_mode, seed=(config.sample_seed, step))
        except (ValueError, FilterInvariantError) as exc:
            if step == 0:
                raise
            # parameters from an update saturated the unary or overflowed a transmission
            raise TrainingDiverged(step, float("nan")) from exc
        if not np.isfinite(loss):
            raise TrainingDiverged(step, loss)
        result.losses.append(loss)
        params = Params(params.pi - lr * d_pi, params.beta - lr * d_beta,
                        params.guide_scale - lr * d_scale if config.learn_guide_scale
                        else params.guide_scale)
        if not (np.all(np.isfinite(params.pi)) and np.all(np.isfinite(params.beta))
                and np.isfinite(params.guide_scale)):
            raise TrainingDiverged(step, loss)
    result.params = params
    result.final_val_loss = validation_loss(params, task, config.groups)
    log.info("train %s: val %.5f -> %.5f (unfiltered %.5f)", config.tree_mode,
             result.initial_val_loss, result.final_val_loss, result.unfiltered_loss)
    return result


@dataclass
class CompareSummary:
    rows: list  # (seed, mode, initial_val_loss, final_val_loss, unfiltered_loss)
    means: dict  # mode -> mean final validation loss
    mean_initial: dict
    mean_unfiltered: float

    def direction_holds(self, margin: float = 0.10) -> bool:
        return self.means["learnable-random"] <= self.means["mst"] * (1.0 + margin)

    def csv(self) -> str:
        lines = ["seed,mode,final_loss"]
        lines += [f"{seed},{mode},{final:.10g}" for seed, mode, _, final, _ in self.rows]
        return "\n".join(lines) + "\n"


def compare_tree_modes(task: ToyTask, base_config: TrainConfig, n_seeds: int = 5) -> CompareSummary:
    """Train both tree modes on ``n_seeds`` tasks (task seed and sampler seed both vary)."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be positive")
    rows = []
    for k in range(n_seeds):
        seeded = replace(task, seed=task.seed + k)
        for mode in TREE_MODES:
            res = train(seeded, replace(base_config, tree_mode=mode,
                                        sample_seed=base_config.sample_seed + k))
            rows.append((seeded.seed, mode, res.initial_val_loss, res.final_val_loss,
                         res.unfiltered_loss))
    means = {m: float(np.mean([r[3] for r in rows if r[1] == m])) for m in TREE_MODES}
    mean_initial = {m: float(np.mean([r[2] for r in rows if r[1] == m])) for m in TREE_MODES}
    mean_unfiltered = float(np.mean([r[4] for r in rows if r[1] == "mst"]))
    return CompareSummary(rows, means, mean_initial, mean_unfiltered)
