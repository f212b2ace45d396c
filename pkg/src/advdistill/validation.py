"""Input validation helpers shared by the estimators and the pipeline."""

from __future__ import annotations

import numbers
from typing import Sequence

import numpy as np


def check_sequences(X, vocab_size: int | None = None, max_len: int | None = None,
                    truncate: bool = False) -> list[np.ndarray]:
    """Validate a collection of token-id sequences.

    Returns a list of int64 arrays.  Raises ``ValueError`` on empty
    sequences, ids outside ``[0, vocab_size)`` and (unless ``truncate``)
    sequences longer than ``max_len``.
    """
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = list(X)
    if isinstance(X, (str, bytes)) or not hasattr(X, "__len__"):
        raise TypeError("expected a sequence of token-id sequences")
    out = []
    for i, seq in enumerate(X):
        arr = np.asarray(seq)
        if arr.ndim != 1:
            raise ValueError(f"sequence {i}: expected a flat list of token ids")
        if arr.size == 0:
            raise ValueError(f"sequence {i} is empty")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.mod(arr, 1) == 0):
                raise ValueError(f"sequence {i}: token ids must be integers")
        arr = arr.astype(np.int64)
        if max_len is not None and arr.size > max_len:
            if not truncate:
                raise ValueError(f"sequence {i} has length {arr.size} > max_seq_len {max_len}")
            arr = arr[:max_len]
        if arr.min() < 0 or (vocab_size is not None and arr.max() >= vocab_size):
            raise ValueError(f"sequence {i}: token id outside [0, {vocab_size})")
        out.append(arr)
    return out


def pad_batch(sequences, vocab_size: int, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad validated sequences with id 0; returns ``(ids [B, L], lengths [B])``."""
    seqs = check_sequences(sequences, vocab_size, max_len)
    if not seqs:
        raise ValueError("empty batch")
    lengths = np.array([s.size for s in seqs], dtype=np.int64)
    ids = np.zeros((len(seqs), int(lengths.max())), dtype=np.int64)
    for row, s in enumerate(seqs):
        ids[row, :s.size] = s
    return ids, lengths


def check_labels(y, n: int | None = None, num_classes: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {y.shape}")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise ValueError("labels must be integer class ids")
    y = y.astype(np.int64)
    if n is not None and y.size != n:
        raise ValueError(f"got {y.size} labels for {n} sequences")
    if y.size and y.min() < 0:
        raise ValueError("labels must be non-negative")
    if num_classes is not None and y.size and y.max() >= num_classes:
        raise ValueError(f"label {y.max()} outside [0, {num_classes})")
    return y


def check_positive(name: str, value, integer: bool = False) -> None:
    kind = numbers.Integral if integer else numbers.Real
    if not isinstance(value, kind) or isinstance(value, bool) or value <= 0:
        raise ValueError(f"{name} must be a positive {'integer' if integer else 'number'}, got {value!r}")


def check_choice(name: str, value, choices: Sequence) -> None:
    if value not in choices:
        raise ValueError(f"{name} must be one of {list(choices)}, got {value!r}")
