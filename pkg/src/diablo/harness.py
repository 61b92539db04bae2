"""Training, evaluation, and ablation sweeps over run configs.

Every run is a pure function of (config, seed): sub-seeds for parameter
initialization, class splits, and batch sampling are all derived from the
run seed, so metrics files and checkpoints are byte-identical across
repeated runs. Ablation cells are independent runs and may execute in
parallel threads; each run stays single-threaded and owns its output
directory.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import attention, training
from .backbone import LayerStack, LayerStackConfig, extract_features, init_stack
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config
from .data import Dataset, generate_synthetic, load_idx
from .errors import ConfigError, FormatError
from .evaluation import EmbeddingIndex, SplitPlan, make_splits, recall_at_k
from .tensor import Tape, Tensor

ABLATION_AXES = ("strategy", "mode", "N")
ABLATION_BRANCH_CHOICES = (1, 2, 4, 8, 16)


@dataclass
class Model:
    """Extractor plus attention-block config and parameters."""

    extractor: LayerStack
    patch_grid: tuple
    config: attention.DiabloConfig
    params: attention.DiabloParams

    def named_parameters(self):
        return self.extractor.parameters("extractor") + self.params.parameters()

    def embed(self, image) -> Tensor:
        feats = extract_features(image, self.extractor, self.patch_grid)
        return attention.diablo_forward(feats, self.config, self.params)


def _sub_seed(*entropy) -> int:
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def resolve_dataset(cfg: RunConfig) -> Dataset:
    if cfg.idx is not None:
        return load_idx(cfg.idx.images, cfg.idx.labels)
    return generate_synthetic(cfg.synthetic)


def build_model(cfg: RunConfig, image_size: int, seed: int) -> Model:
    """Instantiate extractor and attention block for images of a given size."""
    m = cfg.model
    gh, gw = m.patch_grid
    if image_size % gh or image_size % gw:
        raise ConfigError(
            f"model.patch_grid: image size {image_size} not divisible by {m.patch_grid}")
    patch_len = (image_size // gh) * (image_size // gw)
    c = m.feature_channels
    width = m.direction_width if m.direction_width is not None else c
    extractor_cfg = LayerStackConfig(patch_len, m.extractor_widths or (c,),
                                     seed=_sub_seed(seed, 0))
    phi_cfg = LayerStackConfig(c, m.phi_widths or (c, width), seed=_sub_seed(seed, 1))
    psi_cfg = LayerStackConfig(c, m.psi_widths or (c, c), seed=_sub_seed(seed, 2))
    dcfg = attention.DiabloConfig(
        strategy=m.strategy, mode=m.mode, branches=m.branches,
        embedding_size=m.embedding_size, hardness=m.hardness, phi=phi_cfg, psi=psi_cfg)
    params = attention.init_params(dcfg, seed=_sub_seed(seed, 3))
    return Model(init_stack(extractor_cfg), (gh, gw), dcfg, params)


def embed_many(model: Model, images) -> np.ndarray:
    """Tape-free embeddings as one (n, E) array."""
    return np.stack([model.embed(img).values for img in images])


def _val_recall(model: Model, val: Dataset, ks) -> dict:
    index = EmbeddingIndex(embed_many(model, val.images), val.labels)
    return recall_at_k(index, ks)


@dataclass
class RunResult:
    out_dir: str
    epoch_losses: list
    epoch_r1: list
    final_recalls: dict

    @property
    def final_r1(self) -> float:
        return self.epoch_r1[-1]


def train_run(cfg: RunConfig, out_dir) -> RunResult:
    """Train per config, logging per-epoch metrics and a final checkpoint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = resolve_dataset(cfg)

    plan = SplitPlan(repetitions=1, train_fraction=1.0 - cfg.eval.val_fraction,
                     seed=_sub_seed(cfg.seed, 100))
    train_classes, val_classes = make_splits(dataset.labels, plan)[0]
    train_set = dataset.subset(train_classes)
    val_set = dataset.subset(val_classes)

    model = build_model(cfg, dataset.image_size, cfg.seed)
    named = model.named_parameters()
    params = [p for _, p in named]
    state = training.AdamState.init(
        params, learning_rate=cfg.optimizer.learning_rate, beta1=cfg.optimizer.beta1,
        beta2=cfg.optimizer.beta2, epsilon=cfg.optimizer.epsilon)
    loss_fn = training.loss_fn(cfg.loss.kind)

    metrics_path = out / "metrics.csv"
    epoch_losses, epoch_r1 = [], []
    with open(metrics_path, "w", encoding="utf-8", newline="") as metrics:
        metrics.write("epoch,loss,r_at_1\n")
        for epoch in range(1, cfg.train.epochs + 1):
            batch_losses = []
            for b in range(cfg.train.batches_per_epoch):
                batch = training.sample_batch(
                    train_set, cfg.train.classes_per_batch, cfg.train.samples_per_class,
                    seed=_sub_seed(cfg.seed, epoch, b))
                images = [train_set.images[i] for i in batch.indices]
                if cfg.train.augment_flip:
                    flip_rng = np.random.default_rng(_sub_seed(cfg.seed, epoch, b, 7))
                    images = [np.fliplr(img) if flip_rng.integers(2) else img
                              for img in images]
                with Tape() as tape:
                    batch.embeddings = [model.embed(img) for img in images]
                    loss = loss_fn(batch, cfg.loss)
                tape.backward(loss)
                training.adam_step(params, [p.grad for p in params], state)
                batch_losses.append(loss.item())
            mean_loss = float(np.mean(batch_losses))
            r1 = _val_recall(model, val_set, [1])[1]
            epoch_losses.append(mean_loss)
            epoch_r1.append(r1)
            metrics.write(f"{epoch},{mean_loss!r},{r1!r}\n")

    final_recalls = _val_recall(model, val_set, cfg.eval.ks)
    save_checkpoint(out / "checkpoint.bin",
                    [(name, p.values) for name, p in named], cfg.to_dict())
    with open(out / "config.json", "w", encoding="utf-8") as f:
        f.write(cfg.to_json())
    return RunResult(str(out), epoch_losses, epoch_r1, final_recalls)


def load_model(checkpoint_path) -> tuple:
    """Rebuild (config, model) from a checkpoint, restoring exact weights."""
    config_dict, tensors = load_checkpoint(checkpoint_path)
    cfg = parse_config(config_dict)
    dataset = resolve_dataset(cfg)
    model = build_model(cfg, dataset.image_size, cfg.seed)
    for name, param in model.named_parameters():
        if name not in tensors:
            raise FormatError(f"{checkpoint_path}: missing parameter {name}")
        if tensors[name].shape != param.values.shape:
            raise FormatError(
                f"{checkpoint_path}: parameter {name} has shape {tensors[name].shape}, "
                f"expected {param.values.shape}")
        param.values = tensors[name].copy()
    extra = set(tensors) - {name for name, _ in model.named_parameters()}
    if extra:
        raise FormatError(f"{checkpoint_path}: unexpected parameter {sorted(extra)[0]}")
    return cfg, model, dataset


def evaluate_run(checkpoint_path, ks=None) -> list:
    """Recall@K on the checkpoint's validation split, as (k, recall) rows."""
    cfg, model, dataset = load_model(checkpoint_path)
    plan = SplitPlan(repetitions=1, train_fraction=1.0 - cfg.eval.val_fraction,
                     seed=_sub_seed(cfg.seed, 100))
    _, val_classes = make_splits(dataset.labels, plan)[0]
    val_set = dataset.subset(val_classes)
    use_ks = list(ks) if ks else list(cfg.eval.ks)
    recalls = _val_recall(model, val_set, use_ks)
    return [(k, recalls[k]) for k in use_ks]


# ---------------------------------------------------------------------------
# ablation sweeps


def _cell_configs(base: RunConfig, axes, branch_values):
    """Cartesian product of the swept axes, all other fields from the base."""
    for axis in axes:
        if axis not in ABLATION_AXES:
            raise ConfigError(f"unknown ablation axis {axis!r} (choose from {ABLATION_AXES})")
    for n in branch_values:
        if n not in ABLATION_BRANCH_CHOICES:
            raise ConfigError(f"N={n} not in {ABLATION_BRANCH_CHOICES}")
    choices = []
    for axis in axes:
        if axis == "strategy":
            choices.append([("strategy", s) for s in attention.STRATEGIES])
        elif axis == "mode":
            choices.append([("mode", m) for m in attention.MODES])
        else:
            choices.append([("N", n) for n in branch_values])
    for combo in product(*choices):
        fields = dict(combo)
        model = base.model
        if "strategy" in fields:
            model = replace(model, strategy=fields["strategy"])
        if "mode" in fields:
            model = replace(model, mode=fields["mode"])
        if "N" in fields:
            if base.model.embedding_size % fields["N"]:
                raise ConfigError(
                    f"N={fields['N']} does not divide embedding_size "
                    f"{base.model.embedding_size}")
            model = replace(model, branches=fields["N"])
        name = "_".join(f"{k}-{v}" for k, v in combo)
        yield name, dict(combo), replace(base, model=model)


def sweep_threads(explicit=None) -> int:
    if explicit is not None:
        return max(1, int(explicit))
    env = os.environ.get("DIABLO_THREADS")
    return max(1, int(env)) if env else 1


@dataclass
class AblationResult:
    out_dir: str
    cells: list  # (name, axis dict, per-seed r1 list, median, spread)


def ablate(base: RunConfig, axes, branch_values=(1, 2, 4, 8, 16), seeds: int = 5,
           out_dir="ablation", threads=None) -> AblationResult:
    """One training run per (cell, seed); summary has median and IQR of R@1."""
    axes = list(axes)
    if not axes:
        raise ConfigError("ablation needs at least one axis")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = list(_cell_configs(base, axes, branch_values))

    jobs = []
    for name, fields, cfg in cells:
        for rep in range(seeds):
            run_cfg = replace(cfg, seed=base.seed + rep)
            jobs.append((name, rep, run_cfg, out / name / f"seed_{base.seed + rep}"))

    results = {}

    def run(job):
        name, rep, run_cfg, run_dir = job
        results[(name, rep)] = train_run(run_cfg, run_dir).final_r1

    n_threads = sweep_threads(threads)
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(run, jobs))
    else:
        for job in jobs:
            run(job)

    summary = []
    for name, fields, _ in cells:
        r1s = [results[(name, rep)] for rep in range(seeds)]
        median = float(np.median(r1s))
        spread = float(np.percentile(r1s, 75) - np.percentile(r1s, 25))
        summary.append((name, fields, r1s, median, spread))

    axis_cols = ",".join(axes)
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as f:
        f.write(f"cell,{axis_cols},r1_median,r1_iqr,seeds\n")
        for name, fields, r1s, median, spread in summary:
            vals = ",".join(str(fields[a]) for a in axes)
            f.write(f"{name},{vals},{median!r},{spread!r},{seeds}\n")
    return AblationResult(str(out), summary)
