"""Item, positional, and user embedding tables and attention-input assembly.

Item id 0 is the padding row and is pinned to zero: its gradient is projected
out before every optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class EmbeddingTables:
    item: np.ndarray        # [n_items + 1, d], row 0 fixed at zero
    positional: np.ndarray  # [max_len, d]
    user: np.ndarray        # [n_users, d]


def init_tables(n_items: int, n_users: int, dim: int, max_len: int,
                rng: np.random.Generator, dtype=np.float32) -> EmbeddingTables:
    scale = 1.0 / np.sqrt(dim)
    item = rng.normal(0.0, scale, size=(n_items + 1, dim)).astype(dtype)
    item[0] = 0.0
    positional = rng.normal(0.0, scale, size=(max_len, dim)).astype(dtype)
    user = rng.normal(0.0, scale, size=(n_users, dim)).astype(dtype)
    return EmbeddingTables(item, positional, user)


def build_inputs(seq_row: np.ndarray, tables: EmbeddingTables) -> np.ndarray:
    """X[t] = item[id_t] + positional[t] for one padded id row."""
    ids = np.asarray(seq_row)
    if ids.min() < 0 or ids.max() >= tables.item.shape[0]:
        raise DataError(f"item id out of range [0, {tables.item.shape[0]})")
    if ids.shape[-1] != tables.positional.shape[0]:
        raise DataError(
            f"row length {ids.shape[-1]} != positional table length {tables.positional.shape[0]}")
    return tables.item[ids] + tables.positional


def lookup_user(user_id: int, tables: EmbeddingTables) -> np.ndarray:
    if not 0 <= user_id < tables.user.shape[0]:
        raise DataError(f"user id {user_id} out of range [0, {tables.user.shape[0]})")
    return tables.user[user_id]
