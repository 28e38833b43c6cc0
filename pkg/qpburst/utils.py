from __future__ import annotations

import hashlib
import os
import shutil
import zlib
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Tuple, Union

import numpy as np

from .logger import dry_run

SeedKey = Union[int, str]


def _key_to_int(key: SeedKey) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        raise ValueError(f"seed keys must be non-negative, got {key}")
    return int(key)


def derive_seed(master: int, *keys: SeedKey) -> np.random.SeedSequence:
    """Counter-based child seed: the same (master, keys) always gives the same stream."""
    return np.random.SeedSequence([_key_to_int(master), *(_key_to_int(k) for k in keys)])


def derive_rng(master: int, *keys: SeedKey) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))


def child_seed(master: int, *keys: SeedKey) -> int:
    """Integer seed for an independent sub-stream."""
    return int(derive_seed(master, *keys).generate_state(1, dtype=np.uint32)[0])


RngLike = Union[int, np.random.Generator]


def as_rng(seed: RngLike, *keys: SeedKey) -> np.random.Generator:
    """Pass generators through; derive one from an integer seed otherwise."""
    if isinstance(seed, np.random.Generator):
        return seed
    return derive_rng(seed, *keys)


def iter_files_recursively(root: Path) -> Iterator[Tuple[Path, List[str]]]:
    for dirpath, _, files in os.walk(root):
        yield Path(dirpath), sorted(files)


def list_relative_files(root: Path) -> List[str]:
    """Every file under ``root`` as sorted POSIX paths relative to it."""
    out: List[str] = []
    for dirpath, files in iter_files_recursively(root):
        for name in files:
            out.append((dirpath / name).relative_to(root).as_posix())
    return sorted(out)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path, chunk_size: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(chunk_size), b""):
            h.update(block)
    return h.hexdigest()


def ensure_dir(path: Path, dry_run_flag: bool) -> None:
    if dry_run_flag:
        dry_run(f"would ensure folder '{path}'")
        return
    try:
        path.mkdir(parents=True, exist_ok=True)
    except (OSError, PermissionError) as e:
        from .logger import error
        error(f"Cannot create directory: {path}", e)
        raise


@contextmanager
def managed_tmp_dir(path: Path) -> Iterator[Path]:
    """Scratch folder that is always removed, whether the block succeeds or not."""
    try:
        path.mkdir(parents=True, exist_ok=True)
    except (OSError, PermissionError) as e:
        from .logger import error
        error(f"Cannot create temp directory: {path}", e)
        raise
    try:
        yield path
    finally:
        shutil.rmtree(path, ignore_errors=True)


def promote_files(src_dir: Path, dst_dir: Path) -> List[Path]:
    """Move every file of a finished stage's scratch folder into the run directory."""
    moved: List[Path] = []
    for dirpath, files in iter_files_recursively(src_dir):
        for name in files:
            src = dirpath / name
            dst = dst_dir / src.relative_to(src_dir)
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(src, dst)
            moved.append(dst)
    return sorted(moved)
