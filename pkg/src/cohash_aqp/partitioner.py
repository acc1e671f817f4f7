"""Co-hash placement of a database into simulated chunks.

Every hierarchy keeps a membership table per relation: one row per
(source row, cluster) pair.  A tuple that joins parents in several clusters
has several rows; the cluster code is the provenance tag used for exact
deduplication.  Chunk contents are derived views over these tables.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from .catalog import CoHashHierarchy, CoHashScheme
from .datagen import Database
from ._validation import check_positive_int


def _encode(values: Sequence[Any]) -> bytes:
    parts = []
    for v in values:
        if isinstance(v, (bool, np.bool_)):
            parts.append(f"b{int(v)}")
        elif isinstance(v, (int, np.integer)):
            parts.append(f"i{int(v)}")
        elif isinstance(v, (float, np.floating)):
            parts.append(f"i{int(v)}" if float(v).is_integer() else f"f{float(v)!r}")
        else:
            parts.append(f"s{v}")
    return "\x1f".join(parts).encode()


def hash_to_chunk(values: Sequence[Any] | Any, M: int, seed: int = 0) -> int:
    """Chunk id of a clustering-value tuple under a seeded 64-bit hash.

    Parameters
    ----------
    values : sequence or scalar
        Clustering attribute values; a scalar is treated as a 1-tuple.
    M : int
        Number of chunks.
    seed : int
        Keys the hash so different seeds give independent placements.
    """
    if isinstance(M, bool) or not isinstance(M, (int, np.integer)) or M < 1:
        raise ValueError(f"chunk count must be a positive integer, got {M!r}")
    if isinstance(values, (str, bytes)) or not isinstance(values, Sequence):
        values = (values,)
    key = int(seed).to_bytes(16, "little", signed=True)
    digest = hashlib.blake2b(_encode(values), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little") % int(M)


@dataclass
class Cluster:
    root_key: tuple
    members: dict[str, pd.DataFrame]

    def size(self) -> int:
        return sum(len(df) for df in self.members.values())


@dataclass
class Chunk:
    id: int
    fragments: dict[tuple[str, str], pd.DataFrame]
    replicated: dict[str, pd.DataFrame]


@dataclass
class HierarchyLayout:
    """Cluster structure of one hierarchy.

    ``members[rel]`` has columns ``rid`` and ``cluster``; ``cluster_keys`` lists
    each cluster's clustering values (orphan pseudo-clusters carry their
    relation and key instead); ``chunk_of_cluster`` maps cluster code to chunk.
    """

    hierarchy: CoHashHierarchy
    members: dict[str, pd.DataFrame]
    cluster_keys: list[tuple]
    chunk_of_cluster: np.ndarray
    n_root_clusters: int

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_keys)


def _cluster_codes(df: pd.DataFrame, attrs: Sequence[str]) -> tuple[np.ndarray, list[tuple]]:
    if len(df) == 0:
        return np.zeros(0, dtype=np.int64), []
    grouped = df.groupby(list(attrs), sort=True)
    codes = grouped.ngroup().to_numpy(dtype=np.int64)
    keys = [k if isinstance(k, tuple) else (k,) for k in grouped.groups.keys()]
    return codes, keys


def layout_hierarchy(db: Database, h: CoHashHierarchy, M: int, seed: int) -> HierarchyLayout:
    root_df = db[h.root]
    codes, keys = _cluster_codes(root_df, h.cluster_attrs)
    members = {h.root: pd.DataFrame({"rid": np.arange(len(root_df)), "cluster": codes})}
    cluster_keys = list(keys)
    chunks = [hash_to_chunk(k, M, seed) for k in keys]
    n_root = len(keys)
    for rel in h.relations[1:]:
        cond = h.condition(rel)
        parent = cond.right
        p_members = members[parent]
        p_vals = db[parent][list(cond.right_attrs)].iloc[p_members["rid"].to_numpy()].reset_index(drop=True)
        p_vals.columns = [f"k{i}" for i in range(len(cond.pairs))]
        p_vals["cluster"] = p_members["cluster"].to_numpy()
        p_vals = p_vals.drop_duplicates()
        child = db[rel][list(cond.left_attrs)].reset_index(drop=True)
        child.columns = [f"k{i}" for i in range(len(cond.pairs))]
        child["rid"] = np.arange(len(child))
        joined = child.merge(p_vals, on=[f"k{i}" for i in range(len(cond.pairs))], how="inner")
        m = joined[["rid", "cluster"]].drop_duplicates().sort_values(["rid", "cluster"])
        orphans = np.setdiff1d(np.arange(len(child)), m["rid"].to_numpy())
        if len(orphans):
            key_attrs = db.relations[rel].columns.intersection(list(h.keys.get(rel, ()))).tolist()
            key_attrs = key_attrs or list(db[rel].columns)
            start = len(cluster_keys)
            orphan_codes = np.arange(start, start + len(orphans))
            for rid in orphans:
                pk = tuple(db[rel][key_attrs].iloc[int(rid)].tolist())
                cluster_keys.append(("orphan", rel) + pk)
                chunks.append(hash_to_chunk(pk, M, seed))
            m = pd.concat([m, pd.DataFrame({"rid": orphans, "cluster": orphan_codes})])
        members[rel] = m.reset_index(drop=True).astype(np.int64)
    return HierarchyLayout(h, members, cluster_keys, np.asarray(chunks, dtype=np.int64), n_root)


class PartitionedDatabase:
    """A database spread over ``M`` chunks by a co-hash scheme."""

    def __init__(self, db: Database, scheme: CoHashScheme, M: int, seed: int,
                 layouts: dict[str, HierarchyLayout]):
        self.db = db
        self.scheme = scheme
        self.M = M
        self.seed = seed
        self.layouts = layouts

    @property
    def cluster_counts(self) -> dict[str, int]:
        return {name: lay.n_clusters for name, lay in self.layouts.items()}

    def chunk_tallies(self, hierarchy: str) -> np.ndarray:
        """Clusters of ``hierarchy`` stored in each chunk."""
        lay = self.layouts[hierarchy]
        return np.bincount(lay.chunk_of_cluster, minlength=self.M)

    def members(self, hierarchy: str, relation: str) -> pd.DataFrame:
        """Membership rows with the chunk of each row's cluster attached."""
        lay = self.layouts[hierarchy]
        m = lay.members[relation].copy()
        m["chunk"] = lay.chunk_of_cluster[m["cluster"].to_numpy()]
        return m

    def fragment(self, hierarchy: str, relation: str, chunk: int) -> pd.DataFrame:
        """Tuples of ``relation`` stored in ``chunk`` for ``hierarchy``, tagged with their cluster."""
        m = self.members(hierarchy, relation)
        m = m[m["chunk"] == chunk]
        out = self.db[relation].iloc[m["rid"].to_numpy()].reset_index(drop=True)
        out["_cluster"] = m["cluster"].to_numpy()
        return out

    def chunk(self, k: int) -> Chunk:
        if not 0 <= k < self.M:
            raise IndexError(f"chunk {k} out of range")
        frags = {
            (name, rel): self.fragment(name, rel, k)
            for name, lay in self.layouts.items() for rel in lay.members
        }
        reps = {rel: self.db[rel] for rel in sorted(self.scheme.replicated)}
        return Chunk(k, frags, reps)

    @property
    def chunks(self) -> list[Chunk]:
        return [self.chunk(k) for k in range(self.M)]

    def dump_chunks(self, directory: str | Path) -> None:
        base = Path(directory)
        for k in range(self.M):
            d = base / f"chunk_{k:04d}"
            d.mkdir(parents=True, exist_ok=True)
            for (hname, rel), df in self.chunk(k).fragments.items():
                df.to_csv(d / f"{hname}__{rel}.csv", index=False, lineterminator="\n")


def partition(db: Database, scheme: CoHashScheme, M: int, seed: int = 0) -> PartitionedDatabase:
    """Place every hierarchy's clusters into ``M`` chunks by hashing the clustering values."""
    check_positive_int(M, "M")
    layouts = {h.name: layout_hierarchy(db, h, M, seed) for h in scheme.hierarchies}
    return PartitionedDatabase(db, scheme, M, seed, layouts)


def _normalize_key(root_key) -> tuple:
    if isinstance(root_key, tuple):
        return root_key
    if isinstance(root_key, list):
        return tuple(root_key)
    return (root_key,)


def cluster_of(pdb: PartitionedDatabase, hierarchy: str, root_key) -> Cluster:
    """Recursive co-location set of a root value, computed directly from the source data."""
    h = pdb.scheme.hierarchy(hierarchy)
    key = _normalize_key(root_key)
    db = pdb.db
    root_df = db[h.root]
    mask = np.ones(len(root_df), dtype=bool)
    for attr, v in zip(h.cluster_attrs, key):
        mask &= (root_df[attr] == v).to_numpy()
    if len(key) != len(h.cluster_attrs) or not mask.any():
        raise KeyError(f"unknown root key {root_key!r} in {hierarchy}")
    members = {h.root: root_df[mask].reset_index(drop=True)}
    for rel in h.relations[1:]:
        cond = h.condition(rel)
        parent_rows = members[cond.right]
        wanted = set(map(tuple, parent_rows[list(cond.right_attrs)].itertuples(index=False, name=None)))
        child = db[rel]
        child_keys = list(child[list(cond.left_attrs)].itertuples(index=False, name=None))
        keep = np.fromiter((k in wanted for k in child_keys), dtype=bool, count=len(child))
        members[rel] = child[keep].reset_index(drop=True)
    return Cluster(key, members)
