"""Run configuration: a strict JSON schema for reproducible experiments.

Unknown keys are rejected and every error names the offending field path,
so sweep configs stay auditable. All defaults are desk scale; the loss
margins keep their customary values (triplet 0.1, margin 0.5, negative
weight 25), while the learning rate defaults to 1e-3 (1e-5 is
impractically slow at toy sizes and remains available by config).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .attention import MODES, STRATEGIES
from .data import SyntheticSpec
from .errors import ConfigError
from .training import LOSS_KINDS, LossConfig


@dataclass(frozen=True)
class IdxPaths:
    images: str
    labels: str


@dataclass(frozen=True)
class ModelConfig:
    # hardness 2.0 is the desk-scale default (soft enough that starved
    # branches still see signal through 16-location maps); the attention
    # module itself defaults to 5.0
    strategy: str = "pre-attention"
    mode: str = "dimension-wise"
    branches: int = 8
    embedding_size: int = 64
    hardness: float = 2.0
    patch_grid: tuple = (4, 4)
    feature_channels: int = 16
    direction_width: int = None
    extractor_widths: tuple = None
    phi_widths: tuple = None
    psi_widths: tuple = None


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    classes_per_batch: int = 4
    samples_per_class: int = 4
    batches_per_epoch: int = 8
    augment_flip: bool = False  # horizontal flip is the only augmentation


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple = (1, 2, 4, 8)
    val_fraction: float = 0.5


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    idx: IdxPaths = None  # when set, overrides the synthetic source
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        """Canonical snapshot; omits out_dir, which is not part of a run's identity."""
        data = {"synthetic": asdict(self.synthetic)} if self.idx is None else {"idx": asdict(self.idx)}
        return {
            "seed": self.seed,
            "data": data,
            "model": {k: (list(v) if isinstance(v, tuple) else v)
                      for k, v in asdict(self.model).items() if v is not None},
            "loss": asdict(self.loss),
            "optimizer": asdict(self.optimizer),
            "train": asdict(self.train),
            "eval": {"ks": list(self.eval.ks), "val_fraction": self.eval.val_fraction},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# strict parsing


def _mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object")
    return value


def _reject_unknown(d, allowed, path):
    unknown = set(d) - set(allowed)
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"{path}.{name}: unknown key" if path else f"{name}: unknown key")


def _int(value, path, minimum=None):
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{path}: expected an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}")
    return value


def _number(value, path, minimum=None, exclusive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number")
    v = float(value)
    if minimum is not None and (v <= minimum if exclusive else v < minimum):
        raise ConfigError(f"{path}: must be {'>' if exclusive else '>='} {minimum}")
    return v

def _string(value, path, choices=None):
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string")
    if choices and value not in choices:
        raise ConfigError(f"{path}: must be one of {', '.join(choices)}")
    return value


def _int_list(value, path, length=None):
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{path}: expected a non-empty list of integers")
    if length is not None and len(value) != length:
        raise ConfigError(f"{path}: expected exactly {length} entries")
    return tuple(_int(v, f"{path}[{i}]", minimum=1) for i, v in enumerate(value))


def _parse_synthetic(d, path):
    _reject_unknown(d, ("num_classes", "samples_per_class", "image_size", "noise_std",
                        "jitter", "pattern_blobs", "seed"), path)
    defaults = SyntheticSpec()
    try:
        return SyntheticSpec(
            num_classes=_int(d.get("num_classes", defaults.num_classes), f"{path}.num_classes", 1),
            samples_per_class=_int(d.get("samples_per_class", defaults.samples_per_class),
                                   f"{path}.samples_per_class", 1),
            image_size=_int(d.get("image_size", defaults.image_size), f"{path}.image_size", 1),
            noise_std=_number(d.get("noise_std", defaults.noise_std), f"{path}.noise_std", 0.0),
            jitter=_int(d.get("jitter", defaults.jitter), f"{path}.jitter", 0),
            pattern_blobs=_int(d.get("pattern_blobs", defaults.pattern_blobs),
                               f"{path}.pattern_blobs", 1),
            seed=_int(d.get("seed", defaults.seed), f"{path}.seed"),
        )
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e


def _parse_data(d, path):
    _reject_unknown(d, ("synthetic", "idx"), path)
    if "idx" in d and "synthetic" in d:
        raise ConfigError(f"{path}: choose either synthetic or idx, not both")
    if "idx" in d:
        idx = _mapping(d["idx"], f"{path}.idx")
        _reject_unknown(idx, ("images", "labels"), f"{path}.idx")
        if "images" not in idx or "labels" not in idx:
            raise ConfigError(f"{path}.idx: needs images and labels paths")
        return None, IdxPaths(_string(idx["images"], f"{path}.idx.images"),
                              _string(idx["labels"], f"{path}.idx.labels"))
    synth = _parse_synthetic(_mapping(d.get("synthetic", {}), f"{path}.synthetic"),
                             f"{path}.synthetic")
    return synth, None


def _parse_model(d, path):
    _reject_unknown(d, ("strategy", "mode", "branches", "embedding_size", "hardness",
                        "patch_grid", "feature_channels", "direction_width",
                        "extractor_widths", "phi_widths", "psi_widths"), path)
    defaults = ModelConfig()
    branches = _int(d.get("branches", defaults.branches), f"{path}.branches", 1)
    embedding = _int(d.get("embedding_size", defaults.embedding_size), f"{path}.embedding_size", 1)
    if embedding % branches:
        raise ConfigError(f"{path}.branches: {branches} must divide embedding_size {embedding}")
    channels = _int(d.get("feature_channels", defaults.feature_channels),
                    f"{path}.feature_channels", 1)
    direction = d.get("direction_width")
    if direction is not None:
        direction = _int(direction, f"{path}.direction_width", 1)
    widths = {}
    for key in ("extractor_widths", "phi_widths", "psi_widths"):
        if d.get(key) is not None:
            widths[key] = _int_list(d[key], f"{path}.{key}")
    extractor = widths.get("extractor_widths")
    if extractor is not None and extractor[-1] != channels:
        raise ConfigError(f"{path}.extractor_widths: last width must equal "
                          f"feature_channels {channels}")
    return ModelConfig(
        strategy=_string(d.get("strategy", defaults.strategy), f"{path}.strategy", STRATEGIES),
        mode=_string(d.get("mode", defaults.mode), f"{path}.mode", MODES),
        branches=branches,
        embedding_size=embedding,
        hardness=_number(d.get("hardness", defaults.hardness), f"{path}.hardness", 0.0, True),
        patch_grid=_int_list(d.get("patch_grid", list(defaults.patch_grid)),
                             f"{path}.patch_grid", length=2),
        feature_channels=channels,
        direction_width=direction,
        extractor_widths=extractor,
        phi_widths=widths.get("phi_widths"),
        psi_widths=widths.get("psi_widths"),
    )


def _parse_loss(d, path):
    _reject_unknown(d, ("kind", "triplet_margin", "margin", "negative_weight", "scale"), path)
    defaults = LossConfig()
    try:
        return LossConfig(
            kind=_string(d.get("kind", defaults.kind), f"{path}.kind", LOSS_KINDS),
            triplet_margin=_number(d.get("triplet_margin", defaults.triplet_margin),
                                   f"{path}.triplet_margin", 0.0, True),
            margin=_number(d.get("margin", defaults.margin), f"{path}.margin", 0.0, True),
            negative_weight=_number(d.get("negative_weight", defaults.negative_weight),
                                    f"{path}.negative_weight", 0.0, True),
            scale=_number(d.get("scale", defaults.scale), f"{path}.scale", 0.0, True),
        )
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e


def _parse_optimizer(d, path):
    _reject_unknown(d, ("learning_rate", "beta1", "beta2", "epsilon"), path)
    defaults = OptimizerConfig()
    return OptimizerConfig(
        learning_rate=_number(d.get("learning_rate", defaults.learning_rate),
                              f"{path}.learning_rate", 0.0, True),
        beta1=_number(d.get("beta1", defaults.beta1), f"{path}.beta1", 0.0),
        beta2=_number(d.get("beta2", defaults.beta2), f"{path}.beta2", 0.0),
        epsilon=_number(d.get("epsilon", defaults.epsilon), f"{path}.epsilon", 0.0, True),
    )


def _parse_train(d, path):
    _reject_unknown(d, ("epochs", "classes_per_batch", "samples_per_class",
                        "batches_per_epoch", "augment_flip"), path)
    defaults = TrainConfig()
    flip = d.get("augment_flip", defaults.augment_flip)
    if not isinstance(flip, bool):
        raise ConfigError(f"{path}.augment_flip: expected a boolean")
    return TrainConfig(
        epochs=_int(d.get("epochs", defaults.epochs), f"{path}.epochs", 1),
        classes_per_batch=_int(d.get("classes_per_batch", defaults.classes_per_batch),
                               f"{path}.classes_per_batch", 1),
        samples_per_class=_int(d.get("samples_per_class", defaults.samples_per_class),
                               f"{path}.samples_per_class", 1),
        batches_per_epoch=_int(d.get("batches_per_epoch", defaults.batches_per_epoch),
                               f"{path}.batches_per_epoch", 1),
        augment_flip=flip,
    )


def _parse_eval(d, path):
    _reject_unknown(d, ("ks", "val_fraction"), path)
    defaults = EvalConfig()
    ks = defaults.ks if d.get("ks") is None else _int_list(d["ks"], f"{path}.ks")
    fraction = _number(d.get("val_fraction", defaults.val_fraction), f"{path}.val_fraction")
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"{path}.val_fraction: must be inside (0, 1)")
    return EvalConfig(ks=ks, val_fraction=fraction)


def parse_config(raw: dict) -> RunConfig:
    """Validate a JSON object against the run-config schema."""
    d = _mapping(raw, "config")
    _reject_unknown(d, ("seed", "out_dir", "data", "model", "loss", "optimizer",
                        "train", "eval"), "")
    synth, idx = _parse_data(_mapping(d.get("data", {}), "data"), "data")
    cfg = RunConfig(
        seed=_int(d.get("seed", 0), "seed"),
        out_dir=None if d.get("out_dir") is None else _string(d["out_dir"], "out_dir"),
        synthetic=synth if synth is not None else SyntheticSpec(),
        idx=idx,
        model=_parse_model(_mapping(d.get("model", {}), "model"), "model"),
        loss=_parse_loss(_mapping(d.get("loss", {}), "loss"), "loss"),
        optimizer=_parse_optimizer(_mapping(d.get("optimizer", {}), "optimizer"), "optimizer"),
        train=_parse_train(_mapping(d.get("train", {}), "train"), "train"),
        eval=_parse_eval(_mapping(d.get("eval", {}), "eval"), "eval"),
    )
    return cfg


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return parse_config(raw)
