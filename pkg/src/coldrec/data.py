"""Feedback matrices, artist maps, and artist-disjoint splitting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class DataError(ValueError):
    """Malformed input data (bad triples, missing mappings, bad ratios)."""


@dataclass
class FeedbackMatrix:
    """Sparse user x item play-count matrix.

    Stored counts are always >= 1; a zero count is simply absent. Row/column
    indices are dense, 0-based, and aligned with ``user_ids`` / ``item_ids``.
    """

    user_ids: list[str]
    item_ids: list[str]
    counts: sp.csr_matrix  # int64, shape (len(user_ids), len(item_ids))

    def __post_init__(self):
        self.counts = sp.csr_matrix(self.counts, dtype=np.int64)
        self.counts.eliminate_zeros()
        if self.counts.shape != (len(self.user_ids), len(self.item_ids)):
            raise DataError(
                f"count matrix shape {self.counts.shape} does not match "
                f"{len(self.user_ids)} users x {len(self.item_ids)} items"
            )
        if self.counts.nnz and self.counts.data.min() < 1:
            raise DataError("feedback counts must be >= 1")

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def total_plays(self) -> int:
        return int(self.counts.sum())

    def entry(self, user: str, item: str) -> int:
        u = self.user_ids.index(user)
        i = self.item_ids.index(item)
        return int(self.counts[u, i])

    @staticmethod
    def from_entries(user_ids, item_ids, entries: dict[tuple[int, int], int]) -> "FeedbackMatrix":
        """Build from a {(user_index, item_index): count} map."""
        user_ids = list(user_ids)
        item_ids = list(item_ids)
        mat = sp.dok_matrix((len(user_ids), len(item_ids)), dtype=np.int64)
        for (u, i), c in entries.items():
            mat[u, i] = c
        return FeedbackMatrix(user_ids, item_ids, mat.tocsr())


@dataclass
class ArtistMap:
    """Total map from item identifier to artist identifier."""

    item_to_artist: dict[str, str]

    def artist_of(self, item: str) -> str:
        try:
            return self.item_to_artist[item]
        except KeyError:
            raise DataError(f"item {item!r} has no artist mapping") from None

    def artists(self) -> list[str]:
        seen: dict[str, None] = {}
        for a in self.item_to_artist.values():
            seen.setdefault(a, None)
        return list(seen)


@dataclass
class SplitBundle:
    """Artist-disjoint train/validation/test partition of a feedback matrix."""

    train: FeedbackMatrix
    validation: FeedbackMatrix
    test: FeedbackMatrix
    artist_assignment: dict[str, str]  # artist -> "train" | "val" | "test"

    PARTS = ("train", "val", "test")

    def matrix_for(self, part: str) -> FeedbackMatrix:
        return {"train": self.train, "val": self.validation, "test": self.test}[part]


def load_triples(path) -> FeedbackMatrix:
    """Read a `user<TAB>item<TAB>count` TSV into a FeedbackMatrix.

    Duplicate (user, item) lines sum their counts. Identifier order is
    first-appearance order.
    """
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    entries: dict[tuple[int, int], int] = {}
    n_lines = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            n_lines += 1
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            user, item, count_s = parts
            try:
                count = int(count_s)
            except ValueError:
                raise DataError(f"{path}:{lineno}: count {count_s!r} is not an integer") from None
            if count < 1:
                raise DataError(f"{path}:{lineno}: count must be >= 1, got {count}")
            u = user_index.setdefault(user, len(user_index))
            i = item_index.setdefault(item, len(item_index))
            entries[(u, i)] = entries.get((u, i), 0) + count
    if n_lines == 0:
        raise DataError(f"{path}: empty triples file")
    return FeedbackMatrix.from_entries(list(user_index), list(item_index), entries)


def save_triples(m: FeedbackMatrix, path) -> None:
    """Write a FeedbackMatrix as a TSV that load_triples round-trips exactly."""
    coo = m.counts.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as fh:
        for idx in order:
            u, i, c = coo.row[idx], coo.col[idx], coo.data[idx]
            fh.write(f"{m.user_ids[u]}\t{m.item_ids[i]}\t{c}\n")


def load_artist_map(path) -> ArtistMap:
    """Read an `item<TAB>artist` TSV."""
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 tab-separated fields")
            mapping[parts[0]] = parts[1]
    return ArtistMap(mapping)


def save_artist_map(am: ArtistMap, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item, artist in am.item_to_artist.items():
            fh.write(f"{item}\t{artist}\n")


def aggregate_to_artist(m: FeedbackMatrix, am: ArtistMap) -> FeedbackMatrix:
    """Sum each user's play counts over every artist's songs.

    Result rows are the users of ``m``; columns are the distinct artists of
    its items in first-appearance order.
    """
    artist_index: dict[str, int] = {}
    col_to_artist = np.empty(m.n_items, dtype=np.int64)
    for i, item in enumerate(m.item_ids):
        artist = am.artist_of(item)
        col_to_artist[i] = artist_index.setdefault(artist, len(artist_index))
    n_artists = len(artist_index)
    # item -> artist aggregation as a sparse 0/1 matrix product
    agg = sp.csr_matrix(
        (np.ones(m.n_items, dtype=np.int64), (np.arange(m.n_items), col_to_artist)),
        shape=(m.n_items, n_artists),
    )
    return FeedbackMatrix(list(m.user_ids), list(artist_index), m.counts @ agg)


def split_by_artist(
    m: FeedbackMatrix,
    am: ArtistMap,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitBundle:
    """Partition a feedback matrix by artist into train/val/test.

    Artists are shuffled by a seeded generator and partitioned by the ratios:
    validation and test sizes are floored, the remainder goes to train. Each
    item's whole feedback column follows its artist. Users are shared across
    the parts.
    """
    r_train, r_val, r_test = ratios
    if abs(r_train + r_val + r_test - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    artists = sorted({am.artist_of(item) for item in m.item_ids})
    n = len(artists)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = int(n * r_val)
    n_test = int(n * r_test)
    n_train = n - n_val - n_test
    for count, ratio, name in ((n_train, r_train, "train"), (n_val, r_val, "val"), (n_test, r_test, "test")):
        if ratio > 0 and count == 0:
            raise DataError(f"partition {name!r} has positive ratio but received zero artists")
    assignment: dict[str, str] = {}
    for rank, idx in enumerate(perm):
        if rank < n_train:
            part = "train"
        elif rank < n_train + n_val:
            part = "val"
        else:
            part = "test"
        assignment[artists[idx]] = part
    parts = {}
    for part in SplitBundle.PARTS:
        cols = [i for i, item in enumerate(m.item_ids) if assignment[am.artist_of(item)] == part]
        sub = m.counts[:, cols] if cols else sp.csr_matrix((m.n_users, 0), dtype=np.int64)
        parts[part] = FeedbackMatrix(list(m.user_ids), [m.item_ids[i] for i in cols], sub)
    return SplitBundle(parts["train"], parts["val"], parts["test"], assignment)


def save_split(bundle: SplitBundle, out_dir) -> None:
    """Persist a SplitBundle as three triples files plus artist_assignment.tsv."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    for part in SplitBundle.PARTS:
        save_triples(bundle.matrix_for(part), os.path.join(out_dir, f"{part}.tsv"))
    with open(os.path.join(out_dir, "artist_assignment.tsv"), "w", encoding="utf-8") as fh:
        for artist, part in sorted(bundle.artist_assignment.items()):
            fh.write(f"{artist}\t{part}\n")


def load_assignment(path) -> dict[str, str]:
    assignment: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            artist, _, part = line.partition("\t")
            if part not in SplitBundle.PARTS:
                raise DataError(f"{path}:{lineno}: unknown partition {part!r}")
            assignment[artist] = part
    return assignment
