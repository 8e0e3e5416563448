"""Training-record container: fixed-size binary records plus a JSON sidecar.

File layout (little-endian): magic "CAAD", version u32, record count u32,
grid height u32, grid width u32, vocabulary hash u64, then the records.
The sidecar (same path + ".json") carries the vocabulary summary, episode
index, and collection metadata, so checkpoints stay self-describing.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tokens import TokenVocabulary

MAGIC = b"CAAD"
VERSION = 1
HEADER = struct.Struct("<4sIIIIQ")

EGO_DIM = 5      # v, a_long, a_lat, sin psi, cos psi
GOAL_DIM = 4     # dx, dy, sin dpsi, cos dpsi (ego frame)
CTRL_TOKENS = 16
WP_TOKENS = 12


class DatasetError(ValueError):
    pass


def record_dtype(grid_size: int) -> np.dtype:
    cells = grid_size * grid_size
    return np.dtype([
        ("bev", np.uint8, (cells,)),
        ("ego", "<f4", (EGO_DIM,)),
        ("goal", "<f4", (GOAL_DIM,)),
        ("ctrl_tokens", "<u2", (CTRL_TOKENS,)),
        ("wp_tokens", "<u2", (WP_TOKENS,)),
        ("seg", np.uint8, (cells,)),
        ("pose", "<f4", (3,)),
        ("disp", "<f4", (2,)),
    ])


@dataclass
class Dataset:
    records: np.ndarray          # structured array, record_dtype
    grid_size: int
    vocab_hash: int
    episodes: list[tuple[int, int]]   # (start index, frame count) per episode
    meta: dict

    def __len__(self) -> int:
        return len(self.records)

    def episode_slices(self) -> list[slice]:
        return [slice(s, s + n) for s, n in self.episodes]


def save_dataset(path, records: np.ndarray, grid_size: int,
                 vocab: TokenVocabulary, episodes: list[tuple[int, int]],
                 meta: dict | None = None) -> None:
    path = Path(path)
    header = HEADER.pack(MAGIC, VERSION, len(records), grid_size, grid_size,
                         vocab.content_hash())
    path.write_bytes(header + records.tobytes())
    sidecar = {
        "vocabulary": vocab.summary(),
        "vocab_hash": vocab.content_hash(),
        "grid_size": grid_size,
        "record_count": int(len(records)),
        "episodes": [[int(s), int(n)] for s, n in episodes],
        "meta": meta or {},
    }
    Path(str(path) + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < HEADER.size:
        raise DatasetError(f"{path}: truncated header")
    magic, version, count, h, w, vocab_hash = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    if h != w:
        raise DatasetError(f"{path}: non-square grid {h}x{w}")
    dt = record_dtype(h)
    expected = HEADER.size + count * dt.itemsize
    if len(blob) != expected:
        raise DatasetError(f"{path}: size {len(blob)} != expected {expected}")
    records = np.frombuffer(blob, dtype=dt, offset=HEADER.size, count=count)

    sidecar_path = Path(str(path) + ".json")
    episodes: list[tuple[int, int]] = []
    meta: dict = {}
    if sidecar_path.exists():
        sidecar = json.loads(sidecar_path.read_text())
        episodes = [tuple(e) for e in sidecar.get("episodes", [])]
        meta = sidecar.get("meta", {})
        if sidecar.get("vocab_hash") != vocab_hash:
            raise DatasetError(f"{path}: sidecar vocab hash mismatch")
    return Dataset(records=records, grid_size=h, vocab_hash=vocab_hash,
                   episodes=episodes, meta=meta)


def check_vocab(dataset: Dataset, vocab: TokenVocabulary) -> None:
    if dataset.vocab_hash != vocab.content_hash():
        raise DatasetError(
            "dataset was tokenized with a different vocabulary "
            f"(hash {dataset.vocab_hash:#x} != {vocab.content_hash():#x})")
