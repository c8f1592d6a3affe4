"""
Exporter module for Gaussproto.

This module writes every artifact a run produces: dataset containers,
checkpoints, the metrics and timing CSVs, the embedding dump and the
ablation tables. Tabular outputs go through pandas.
"""

import json
import os
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .core import METRIC_COLUMNS, Checkpoint
from .datagen import DatasetSpec, DatasetSplits, ToyScene
from .errors import ContractViolation

DATASET_MAGIC = b"GPDS"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"GPCK"
CHECKPOINT_VERSION = 2
EMBEDDING_SCHEMA_VERSION = 1

# magic, version, G, F, C, scene count
DATASET_HEADER = struct.Struct("<4sIIIII")
# scene id, is_labeled
SCENE_HEADER = struct.Struct("<IB")
# magic, version, D, C, F, H, G, iteration
CHECKPOINT_HEADER = struct.Struct("<4sIIIIIIq")
LENGTH = struct.Struct("<I")

TIMING_COLUMNS = ["iteration", "ms_per_iter"]
EVAL_COLUMNS = ["iteration", "miou", "silhouette", "davies_bouldin"]
ABLATION_RUN_COLUMNS = [
    "row",
    "seed",
    "representation",
    "prototype",
    "negatives",
    "status",
    "miou",
    "silhouette",
    "davies_bouldin",
    "prototype_shift",
    "negative_state_bytes",
    "ms_per_iter",
    "error",
]


def _write_atomic(filepath: Union[str, Path], payload: bytes) -> None:
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    tmp = filepath.with_name(filepath.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, filepath)


def _json_block(data: Dict[str, Any]) -> bytes:
    encoded = json.dumps(data, sort_keys=True).encode("utf-8")
    return LENGTH.pack(len(encoded)) + encoded


def export_scenes(
    scenes: Sequence[ToyScene],
    filepath: Union[str, Path],
    spec: Optional[DatasetSpec] = None,
) -> None:
    """
    Write scenes to a binary dataset container.

    Layout (little-endian): header ``(magic, version, G, F, C, n)``, a
    length-prefixed JSON echo of the generating spec, then per scene its
    id, labeled flag, ``G*G`` label bytes and ``G*G*F`` float32 features.

    Args:
        scenes: Scenes sharing one grid size and feature dimension
        filepath: Destination path; parent directories are created
        spec: Generating spec, echoed into the file

    Raises:
        ContractViolation: If scenes disagree on shape
    """
    if spec is not None:
        grid, features, classes = spec.grid_size, spec.feature_dim, spec.num_classes
    elif scenes:
        grid = int(scenes[0].labels.shape[0])
        features = int(scenes[0].features.shape[-1])
        classes = int(max(int(s.labels.max()) for s in scenes) + 1)
    else:
        grid = features = classes = 0

    parts = [
        DATASET_HEADER.pack(
            DATASET_MAGIC, DATASET_VERSION, grid, features, classes, len(scenes)
        ),
        _json_block(spec.to_dict() if spec is not None else {}),
    ]
    for scene in scenes:
        if scene.labels.shape != (grid, grid) or scene.features.shape != (
            grid,
            grid,
            features,
        ):
            raise ContractViolation(
                f"scene {scene.scene_id} does not match the {grid}x{grid}x{features} "
                "layout of this dataset"
            )
        parts.append(SCENE_HEADER.pack(scene.scene_id, int(scene.is_labeled)))
        parts.append(np.ascontiguousarray(scene.labels, dtype=np.uint8).tobytes())
        parts.append(np.ascontiguousarray(scene.features, dtype="<f4").tobytes())
    _write_atomic(filepath, b"".join(parts))


def _array_block(name: str, array: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    shape = np.asarray(array).shape
    header = LENGTH.pack(len(encoded)) + encoded + LENGTH.pack(len(shape))
    header += struct.pack(f"<{len(shape)}I", *shape)
    return header + np.ascontiguousarray(array, dtype="<f8").tobytes()


def write_checkpoint(checkpoint: Checkpoint, filepath: Union[str, Path]) -> None:
    """
    Write a checkpoint container.

    Layout (little-endian): header ``(magic, version, D, C, F, H, G,
    iteration)``, the head hidden width K, a length-prefixed JSON block with
    strategy flags, the parameter block count followed by named float64
    blocks (student, then teacher with a ``teacher.`` prefix), and finally
    the prototype records as a float64 block.
    """
    dims = checkpoint.student.dims
    header = CHECKPOINT_HEADER.pack(
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        dims["D"],
        dims["C"],
        dims["F"],
        dims["H"],
        checkpoint.grid_size,
        checkpoint.iteration,
    )
    blocks = [(name, value) for name, value in checkpoint.student.arrays.items()]
    blocks += [
        (f"teacher.{name}", value) for name, value in checkpoint.teacher.arrays.items()
    ]
    parts = [header, LENGTH.pack(dims["K"]), _json_block(checkpoint.meta)]
    parts.append(LENGTH.pack(len(blocks)))
    parts += [_array_block(name, value) for name, value in blocks]
    parts.append(_array_block("prototypes", checkpoint.prototypes))
    _write_atomic(filepath, b"".join(parts))


def _to_csv(df: pd.DataFrame, filepath: Union[str, Path]) -> None:
    Path(filepath).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(filepath, index=False)


def write_metrics_csv(rows: List[Dict[str, Any]], filepath: Union[str, Path]) -> None:
    """
    Write one row per evaluation with the fixed column order:
    iteration, loss_sup, loss_unsup, loss_contrast, lambda, miou,
    silhouette, davies_bouldin, prototype_shift, negative_state_bytes.
    """
    _to_csv(pd.DataFrame(rows, columns=METRIC_COLUMNS), filepath)


def write_timing_csv(rows: List[Dict[str, Any]], filepath: Union[str, Path]) -> None:
    """Write wall-clock milliseconds per iteration for each evaluation window."""
    _to_csv(pd.DataFrame(rows, columns=TIMING_COLUMNS), filepath)


def write_eval_csv(rows: List[Dict[str, Any]], filepath: Union[str, Path]) -> None:
    _to_csv(pd.DataFrame(rows, columns=EVAL_COLUMNS), filepath)


def write_embedding_dump(
    records: List[Dict[str, Any]], filepath: Union[str, Path]
) -> None:
    """
    Write the embedding dump as JSON lines, one record per sampled pixel.

    Each record has ``schema_version``, ``scene_id``, ``pixel``, ``mu``,
    ``sigma2``, ``pred`` and ``gt``.
    """
    columns = ["schema_version", "scene_id", "pixel", "mu", "sigma2", "pred", "gt"]
    df = pd.DataFrame(records, columns=columns[1:])
    df.insert(0, "schema_version", EMBEDDING_SCHEMA_VERSION)
    Path(filepath).parent.mkdir(parents=True, exist_ok=True)
    if df.empty:
        Path(filepath).write_text("")
        return
    df.to_json(filepath, orient="records", lines=True, double_precision=15)


def summarize_ablation(runs: pd.DataFrame) -> pd.DataFrame:
    """
    Aggregate sub-runs per strategy row over successful runs: mean and
    standard deviation of the final mIoU, plus means of the clustering
    scores, the prototype shift, negative-state bytes and ms per iteration.
    """
    keys = ["row", "representation", "prototype", "negatives"]
    values = ["miou", "silhouette", "davies_bouldin", "prototype_shift"]
    values += ["negative_state_bytes", "ms_per_iter"]
    runs = runs.assign(failed=runs["status"] != "ok")
    runs[values] = runs[values].astype(float)
    # failed runs are counted but never averaged
    runs.loc[runs["failed"], values] = np.nan
    summary = (
        runs.groupby(keys, sort=False)
        .agg(
            runs=("status", "size"),
            failed=("failed", "sum"),
            miou_mean=("miou", "mean"),
            miou_std=("miou", "std"),
            silhouette_mean=("silhouette", "mean"),
            davies_bouldin_mean=("davies_bouldin", "mean"),
            prototype_shift_mean=("prototype_shift", "mean"),
            negative_state_bytes=("negative_state_bytes", "mean"),
            ms_per_iter=("ms_per_iter", "mean"),
        )
        .reset_index()
    )
    summary["failed"] = summary["failed"].astype(int)
    return summary


def write_ablation_tables(
    runs: List[Dict[str, Any]], directory: Union[str, Path]
) -> pd.DataFrame:
    """
    Write ``ablation_runs.csv`` (one line per row and seed) and
    ``ablation_summary.csv`` (one line per row).

    Returns:
        The summary DataFrame
    """
    directory = Path(directory)
    df = pd.DataFrame(runs, columns=ABLATION_RUN_COLUMNS)
    _to_csv(df, directory / "ablation_runs.csv")
    summary = summarize_ablation(df)
    _to_csv(summary, directory / "ablation_summary.csv")
    return summary


SPLIT_FILES = {
    "labeled": "labeled.gpds",
    "unlabeled": "unlabeled.gpds",
    "val": "val.gpds",
}


def export_splits(
    splits: DatasetSplits, directory: Union[str, Path], spec: DatasetSpec
) -> List[Path]:
    """
    Write the labeled, unlabeled and validation scenes as three containers.

    Returns:
        Paths of the written files
    """
    directory = Path(directory)
    written = []
    for split, name in SPLIT_FILES.items():
        path = directory / name
        export_scenes(getattr(splits, split), path, spec)
        written.append(path)
    return written
