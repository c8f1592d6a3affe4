"""
Gaussproto - Dataset and checkpoint readers

This module decodes the binary containers written by ``exporters``. Any
truncation or corruption raises ParseError with the byte offset at which
decoding failed; nothing partial is ever returned.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Tuple, Union

import numpy as np

from .core import Checkpoint
from .datagen import DatasetSplits, ToyScene
from .errors import CheckpointMismatch, ParseError
from .exporters import (
    CHECKPOINT_HEADER,
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    DATASET_HEADER,
    DATASET_MAGIC,
    DATASET_VERSION,
    LENGTH,
    SCENE_HEADER,
    SPLIT_FILES,
)
from .network import ModelParams, param_shapes

logger = logging.getLogger(__name__)


class DatasetFile(NamedTuple):
    """Decoded dataset container."""

    spec: Dict[str, Any]
    grid_size: int
    feature_dim: int
    num_classes: int
    scenes: List[ToyScene]


class _Cursor:
    """Sequential reader over a byte string that reports offsets on failure."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if size < 0 or self.offset + size > len(self.data):
            raise ParseError(f"truncated file while reading {what}", self.offset)
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, layout: struct.Struct, what: str) -> tuple:
        return layout.unpack(self.take(layout.size, what))

    def json_block(self, what: str) -> Dict[str, Any]:
        start = self.offset
        (length,) = self.unpack(LENGTH, what)
        try:
            return json.loads(self.take(length, what).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ParseError(f"malformed {what}: {e}", start) from e

    def array_block(self, what: str):
        (name_len,) = self.unpack(LENGTH, what)
        start = self.offset
        try:
            name = self.take(name_len, what).decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(f"malformed name in {what}", start) from e
        (ndim,) = self.unpack(LENGTH, f"{name} rank")
        shape = struct.unpack(f"<{ndim}I", self.take(4 * ndim, f"{name} shape"))
        count = int(np.prod(shape)) if shape else 1
        raw = self.take(8 * count, f"{name} data")
        return name, np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)

    def finish(self, what: str) -> None:
        if self.offset != len(self.data):
            raise ParseError(f"trailing bytes after {what}", self.offset)


def _read_bytes(filepath: Union[str, Path]) -> bytes:
    filepath = Path(filepath)
    if not filepath.exists():
        raise FileNotFoundError(f"File not found: {filepath}")
    return filepath.read_bytes()


def read_dataset(filepath: Union[str, Path]) -> DatasetFile:
    """
    Read a dataset container written by ``export_scenes``.

    Raises:
        FileNotFoundError: If the file does not exist
        ParseError: If the file is malformed or truncated
    """
    cursor = _Cursor(_read_bytes(filepath))
    magic, version, grid, features, classes, count = cursor.unpack(
        DATASET_HEADER, "dataset header"
    )
    if magic != DATASET_MAGIC:
        raise ParseError(f"not a dataset file (magic {magic!r})", 0)
    if version != DATASET_VERSION:
        raise ParseError(f"unsupported dataset version {version}", 4)
    spec = cursor.json_block("spec echo")

    scenes = []
    for index in range(count):
        scene_id, is_labeled = cursor.unpack(SCENE_HEADER, f"scene {index} header")
        labels = np.frombuffer(
            cursor.take(grid * grid, f"scene {index} labels"), dtype=np.uint8
        ).reshape(grid, grid)
        if classes and np.any(labels >= classes):
            raise ParseError(
                f"scene {index} has a label outside [0, {classes})", cursor.offset
            )
        values = np.frombuffer(
            cursor.take(4 * grid * grid * features, f"scene {index} features"),
            dtype="<f4",
        )
        scenes.append(
            ToyScene(
                scene_id,
                values.astype(np.float32).reshape(grid, grid, features),
                labels.copy(),
                bool(is_labeled),
            )
        )
    cursor.finish("dataset")
    logger.debug("Read %d scenes from %s", len(scenes), filepath)
    return DatasetFile(spec, grid, features, classes, scenes)


def import_scenes(filepath: Union[str, Path]) -> List[ToyScene]:
    """
    Read the scenes of a dataset container.

    Examples:
        >>> scenes = import_scenes("data/labeled.gpds")
    """
    return read_dataset(filepath).scenes


def read_checkpoint(filepath: Union[str, Path]) -> Checkpoint:
    """
    Read a checkpoint written by ``write_checkpoint``.

    Raises:
        FileNotFoundError: If the file does not exist
        ParseError: If the container is malformed or truncated
        CheckpointMismatch: If the version is not supported or parameter
            blocks do not match the header
    """
    cursor = _Cursor(_read_bytes(filepath))
    magic, version, D, C, F, H, G, iteration = cursor.unpack(
        CHECKPOINT_HEADER, "checkpoint header"
    )
    if magic != CHECKPOINT_MAGIC:
        raise ParseError(f"not a checkpoint file (magic {magic!r})", 0)
    if version != CHECKPOINT_VERSION:
        raise CheckpointMismatch(
            f"checkpoint version {version} is not supported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    (K,) = cursor.unpack(LENGTH, "head hidden width")
    meta = cursor.json_block("checkpoint metadata")
    (n_blocks,) = cursor.unpack(LENGTH, "parameter block count")
    blocks = dict(cursor.array_block(f"parameter block {i}") for i in range(n_blocks))
    _, prototypes = cursor.array_block("prototype records")
    cursor.finish("checkpoint")

    dims = {"F": F, "H": H, "C": C, "D": D, "K": K}
    student, teacher = {}, {}
    for name, shape in param_shapes(dims).items():
        for prefix, target in (("", student), ("teacher.", teacher)):
            key = prefix + name
            if key not in blocks:
                raise CheckpointMismatch(f"checkpoint is missing parameter '{key}'")
            if blocks[key].shape != shape:
                raise CheckpointMismatch(
                    f"parameter '{key}' has shape {blocks[key].shape}, "
                    f"expected {shape}"
                )
            target[name] = blocks[key]

    return Checkpoint(
        student=ModelParams(dict(dims), student),
        teacher=ModelParams(dict(dims), teacher),
        prototypes=prototypes.reshape(-1, 2 + 2 * D),
        grid_size=G,
        iteration=iteration,
        meta=meta,
    )


def read_splits(directory: Union[str, Path]) -> Tuple[DatasetSplits, int]:
    """
    Read the three containers written by ``export_splits``.

    Returns:
        ``(splits, num_classes)``

    Raises:
        FileNotFoundError: If a split file is missing
        ParseError: If the files disagree on layout
    """
    directory = Path(directory)
    files = {
        split: read_dataset(directory / name) for split, name in SPLIT_FILES.items()
    }
    layouts = {(f.grid_size, f.feature_dim, f.num_classes) for f in files.values()}
    if len(layouts) != 1:
        raise ParseError(f"split files in {directory} disagree on layout {layouts}", 0)
    splits = DatasetSplits(**{split: f.scenes for split, f in files.items()})
    return splits, files["labeled"].num_classes


def read_split_bytes(directory: Union[str, Path]) -> List[bytes]:
    """Raw bytes of every split file, in a fixed order."""
    directory = Path(directory)
    return [_read_bytes(directory / name) for name in SPLIT_FILES.values()]
