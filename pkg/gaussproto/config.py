"""
Run configuration.

Config files are flat ``key=value`` text parsed with python-dotenv. Every
key is declared in ``CONFIG_SCHEMA``; unknown keys are errors. Defaults for
the output and data directories can come from the environment (or a
``.env`` file): ``GAUSSPROTO_OUTPUT_DIR`` and ``GAUSSPROTO_DATA_DIR``.
"""

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import dotenv_values, load_dotenv

from .datagen import DatasetSpec
from .errors import ConfigError, ContractViolation
from .objective import HyperParams
from .schema import ConfigKey, ConfigSchema, DataType

# Load environment variables from .env file
load_dotenv()

# row name -> (representation, prototype, negatives)
ABLATION_ROWS = {
    "baseline": ("deterministic", "none", "none"),
    "baseline_plus": ("deterministic", "ema", "none"),
    "pr": ("probabilistic", "none", "none"),
    "pr_gdp": ("probabilistic", "gdp", "none"),
    "pr_gdp_vn": ("probabilistic", "gdp", "vn"),
    "pr_gdp_bank": ("probabilistic", "gdp", "memory_bank"),
}

_DATASET_KEYS = {
    "num_scenes": "num_scenes",
    "labeled_fraction": "labeled_fraction",
    "num_classes": "num_classes",
    "grid_size": "grid_size",
    "feature_dim": "feature_dim",
    "class_separation": "class_separation",
    "noise_sigma": "noise_sigma",
    "boundary_blur": "boundary_blur",
    "data_seed": "seed",
}


def _schema() -> ConfigSchema:
    ds = DatasetSpec()
    hp = HyperParams()
    F, I, S, B, L = (
        DataType.FLOAT,
        DataType.INTEGER,
        DataType.STRING,
        DataType.BOOLEAN,
        DataType.LIST,
    )
    keys = [
        # dataset
        ConfigKey("num_scenes", I, ds.num_scenes, "scenes to generate", minimum=0),
        ConfigKey(
            "labeled_fraction",
            F,
            ds.labeled_fraction,
            "labeled share of train",
            minimum=0.0,
            maximum=1.0,
        ),
        ConfigKey("num_classes", I, ds.num_classes, "classes C", minimum=2),
        ConfigKey("grid_size", I, ds.grid_size, "scene side G", minimum=1),
        ConfigKey("feature_dim", I, ds.feature_dim, "pixel features F", minimum=1),
        ConfigKey(
            "class_separation",
            F,
            ds.class_separation,
            "mean centroid distance",
            minimum=0.0,
        ),
        ConfigKey("noise_sigma", F, ds.noise_sigma, "feature noise", minimum=0.0),
        ConfigKey(
            "boundary_blur",
            F,
            ds.boundary_blur,
            "boundary mixing probability",
            minimum=0.0,
            maximum=1.0,
        ),
        ConfigKey("data_seed", I, ds.seed, "dataset seed"),
        ConfigKey(
            "val_fraction",
            F,
            0.2,
            "held-out validation share",
            minimum=0.0,
            maximum=0.95,
        ),
        # hyperparameters
        ConfigKey("tau", F, hp.tau, "contrastive temperature"),
        ConfigKey("delta_s", F, hp.delta_s, "anchor (strong) threshold"),
        ConfigKey("delta_w", F, hp.delta_w, "validity (weak) threshold"),
        ConfigKey("delta_u", F, hp.delta_u, "unsupervised loss threshold"),
        ConfigKey("beta", F, hp.beta, "virtual radius"),
        ConfigKey(
            "vn_scale",
            S,
            hp.vn_scale,
            "VN noise scale",
            enum_values=["variance", "stddev"],
        ),
        ConfigKey("lambda_c0", F, hp.lambda_c0, "initial contrastive weight"),
        ConfigKey("alpha_sched", F, hp.alpha_sched, "contrastive weight growth"),
        ConfigKey("vn_count", I, hp.vn_count, "virtual negatives per class"),
        ConfigKey("anchors_per_class", I, hp.anchors_per_class, "anchors per class"),
        ConfigKey("negatives_total", I, hp.negatives_total, "real negatives per class"),
        ConfigKey("teacher_momentum", F, hp.teacher_momentum, "teacher EMA"),
        ConfigKey("ema_proto_momentum", F, hp.ema_proto_momentum, "prototype EMA"),
        ConfigKey("lr_main", F, hp.lr_main, "base learning rate"),
        ConfigKey("lr_prob_head", F, hp.lr_prob_head, "probability head rate"),
        ConfigKey("temperature_n", F, hp.temperature_n, "negative class softmax T"),
        ConfigKey("fixed_sigma2", F, hp.fixed_sigma2, "variance in deterministic mode"),
        ConfigKey("seed", I, hp.seed, "training seed"),
        # strategies
        ConfigKey(
            "representation",
            S,
            "probabilistic",
            "embedding type",
            enum_values=["deterministic", "probabilistic"],
        ),
        ConfigKey(
            "prototype",
            S,
            "gdp",
            "prototype update",
            enum_values=["none", "ema", "gdp"],
        ),
        ConfigKey(
            "negatives",
            S,
            "vn",
            "global negatives",
            enum_values=["none", "memory_bank", "vn"],
        ),
        ConfigKey(
            "memory_bank_capacity", I, 30000, "memory bank slots per class", minimum=1
        ),
        # network
        ConfigKey("hidden_dim", I, 32, "encoder width H", minimum=1),
        ConfigKey("head_hidden", I, 32, "head hidden width", minimum=1),
        ConfigKey("embed_dim", I, 16, "embedding dimension D", minimum=1),
        # schedule
        ConfigKey("total_iters", I, 4000, "training iterations", minimum=1),
        ConfigKey("eval_every", I, 500, "iterations between evaluations", minimum=1),
        ConfigKey("batch_labeled", I, 2, "labeled scenes per iteration", minimum=1),
        ConfigKey("batch_unlabeled", I, 2, "unlabeled scenes per iteration", minimum=0),
        ConfigKey("metric_points", I, 1024, "points for silhouette/DBI", minimum=2),
        ConfigKey("dump_points", I, 2048, "pixels in the embedding dump", minimum=0),
        # paths
        ConfigKey(
            "output_dir",
            S,
            os.environ.get("GAUSSPROTO_OUTPUT_DIR", "runs"),
            "run artifacts directory",
        ),
        ConfigKey(
            "data_dir",
            S,
            os.environ.get("GAUSSPROTO_DATA_DIR", "data"),
            "dataset directory",
        ),
        # ablation
        ConfigKey(
            "ablate_rows",
            L,
            ["baseline", "pr", "pr_gdp", "pr_gdp_vn"],
            "strategy rows",
            enum_values=list(ABLATION_ROWS),
        ),
        ConfigKey("ablate_seeds", I, 5, "seeds per row", minimum=1),
        ConfigKey("ablate_workers", I, 1, "worker processes", minimum=1),
        ConfigKey("use_cache", B, True, "reuse cached sub-run results"),
    ]
    return ConfigSchema(keys, name="config")


CONFIG_SCHEMA = _schema()


@dataclass(frozen=True)
class RunConfig:
    """Dataset spec, hyperparameters, strategy flags and run settings."""

    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    hp: HyperParams = field(default_factory=HyperParams)
    representation: str = "probabilistic"
    prototype: str = "gdp"
    negatives: str = "vn"
    memory_bank_capacity: int = 30000
    val_fraction: float = 0.2
    hidden_dim: int = 32
    head_hidden: int = 32
    embed_dim: int = 16
    total_iters: int = 4000
    eval_every: int = 500
    batch_labeled: int = 2
    batch_unlabeled: int = 2
    metric_points: int = 1024
    dump_points: int = 2048
    output_dir: str = "runs"
    data_dir: str = "data"
    ablate_rows: tuple = ("baseline", "pr", "pr_gdp", "pr_gdp_vn")
    ablate_seeds: int = 5
    ablate_workers: int = 1
    use_cache: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        Raises:
            ConfigError: If strategy flags are inconsistent
        """
        if self.negatives == "vn" and self.prototype != "gdp":
            raise ConfigError("negatives=vn requires prototype=gdp", key="negatives")
        if self.prototype == "gdp" and self.representation != "probabilistic":
            raise ConfigError(
                "prototype=gdp requires representation=probabilistic",
                key="prototype",
            )
        try:
            self.dataset.validate()
        except ContractViolation as e:
            raise ConfigError(str(e)) from e

    @property
    def probabilistic(self) -> bool:
        return self.representation == "probabilistic"

    @property
    def strategy_name(self) -> str:
        return f"{self.representation}/{self.prototype}/{self.negatives}"

    def with_strategy(self, row: str) -> "RunConfig":
        representation, prototype, negatives = ABLATION_ROWS[row]
        return replace(
            self,
            representation=representation,
            prototype=prototype,
            negatives=negatives,
        )

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, hp=replace(self.hp, seed=seed))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["ablate_rows"] = list(self.ablate_rows)
        return data

    def fingerprint(self) -> str:
        """SHA256 of everything that influences a training run's results."""
        data = self.to_dict()
        for key in ("output_dir", "ablate_rows", "ablate_seeds", "ablate_workers"):
            data.pop(key)
        data.pop("use_cache")
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


def config_from_dict(raw: Dict[str, Any]) -> RunConfig:
    """
    Build a RunConfig from raw (string or typed) values.

    Raises:
        ConfigError: Naming the offending key
    """
    typed = CONFIG_SCHEMA.convert_data(raw)
    dataset = DatasetSpec(
        **{field_name: typed[key] for key, field_name in _DATASET_KEYS.items()}
    )
    hp_fields = HyperParams.field_names()
    hp = HyperParams(**{name: typed[name] for name in hp_fields})
    if not math.isfinite(hp.alpha_sched):
        raise ConfigError("alpha_sched must be finite", key="alpha_sched")
    used = set(_DATASET_KEYS) | set(hp_fields)
    rest = {k: v for k, v in typed.items() if k not in used}
    rest["ablate_rows"] = tuple(rest["ablate_rows"])
    return RunConfig(dataset=dataset, hp=hp, **rest)


def read_config_file(path: Union[str, Path]) -> Dict[str, Optional[str]]:
    """
    Parse a key=value file.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: If a key has no value
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    values = dict(dotenv_values(path, interpolate=False))
    for key, value in values.items():
        if value is None:
            raise ConfigError(f"Config key '{key}' has no value", key=key)
    return values


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """
    Load a config file (optional) and apply overrides on top.

    Args:
        path: key=value config file; defaults only if None
        overrides: Values taking precedence over the file (e.g. ``--seed``)

    Returns:
        A validated RunConfig
    """
    raw: Dict[str, Any] = read_config_file(path) if path is not None else {}
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return config_from_dict(raw)
    except ContractViolation as e:
        raise ConfigError(str(e)) from e
