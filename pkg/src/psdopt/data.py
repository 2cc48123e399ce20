"""Ingestion, synthetic generation, splitting and evaluation metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ParseError
from .objectives import Factor, MetricProblem, RatingSet

RATING_MIN, RATING_MAX = 1.0, 5.0


@dataclass(frozen=True)
class LabeledPoints:
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        labels = np.asarray(self.labels, dtype=np.int64)
        if pts.shape[0] != labels.shape[0]:
            raise InvalidInputError("points and labels must have equal length")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.size


@dataclass(frozen=True)
class SplitRatings:
    train: RatingSet
    test: RatingSet
    seed: int
    singleton_users: int = 0


@dataclass(frozen=True)
class ParsedRatings:
    """Ratings with the original-to-dense id maps and a duplicate counter."""

    ratings: RatingSet
    user_ids: np.ndarray
    item_ids: np.ndarray
    duplicates_dropped: int


_SEPARATORS = {"tab": "\t", "double-colon": "::"}


def parse_movielens(path, fmt: str = "tab") -> ParsedRatings:
    """Parse `user<sep>item<sep>rating[<sep>timestamp]` rating files.

    Original ids are remapped to dense 0-based indices (sorted order); on a
    duplicate (user, item) the last occurrence wins and the drop is counted.
    """
    if fmt not in _SEPARATORS:
        raise InvalidInputError(f"unknown format {fmt!r}; use 'tab' or 'double-colon'")
    sep = _SEPARATORS[fmt]
    users, items, values = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) < 3:
                raise ParseError(f"line {lineno}: expected at least 3 fields, "
                                 f"got {len(parts)}", line=lineno)
            try:
                users.append(int(parts[0]))
                items.append(int(parts[1]))
                values.append(float(parts[2]))
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}", line=lineno) from exc
    if not users:
        raise ParseError("no entries found", line=None)

    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    values = np.asarray(values, dtype=float)

    user_ids, u_dense = np.unique(users, return_inverse=True)
    item_ids, i_dense = np.unique(items, return_inverse=True)
    keys = u_dense * item_ids.size + i_dense
    # keep the last occurrence of each key
    order = np.arange(keys.size)
    last = {}
    for pos, key in zip(order, keys):
        last[key] = pos
    keep = np.sort(np.fromiter(last.values(), dtype=np.int64))
    dropped = keys.size - keep.size
    if dropped:
        warnings.warn(f"dropped {dropped} duplicate (user, item) entries "
                      "(last occurrence wins)")
    ratings = RatingSet(num_users=user_ids.size, num_items=item_ids.size,
                        users=u_dense[keep], items=i_dense[keep],
                        values=values[keep])
    return ParsedRatings(ratings=ratings, user_ids=user_ids, item_ids=item_ids,
                         duplicates_dropped=dropped)


def write_movielens(path, ratings: RatingSet, fmt: str = "tab",
                    user_ids: np.ndarray | None = None,
                    item_ids: np.ndarray | None = None) -> None:
    """Serialize a rating set in the 4-column format (timestamp written as 0).

    Without explicit id maps, dense indices are written 1-based so that a
    parse round-trip reproduces the same dense set.
    """
    if fmt not in _SEPARATORS:
        raise InvalidInputError(f"unknown format {fmt!r}")
    sep = _SEPARATORS[fmt]
    u = user_ids[ratings.users] if user_ids is not None else ratings.users + 1
    it = item_ids[ratings.items] if item_ids is not None else ratings.items + 1
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, r in zip(u, it, ratings.values):
            fh.write(f"{a}{sep}{b}{sep}{r:.17g}{sep}0\n")


def split_per_user(ratings: RatingSet, train_frac: float, seed: int) -> SplitRatings:
    """Per-user split: floor(count * train_frac) ratings to train (at least 1
    when the user has >= 2), remainder to test.  Users with a single rating
    go to train and are counted."""
    if not (0.0 < train_frac < 1.0):
        raise InvalidInputError("train_frac must be in (0, 1)")
    rng = np.random.default_rng(seed)
    # canonical order so the split depends only on content and seed
    order = np.lexsort((ratings.items, ratings.users))
    users = ratings.users[order]
    items = ratings.items[order]
    values = ratings.values[order]

    train_mask = np.zeros(len(ratings), dtype=bool)
    singletons = 0
    boundaries = np.flatnonzero(np.diff(users)) + 1
    for chunk in np.split(np.arange(users.size), boundaries):
        count = chunk.size
        if count == 1:
            train_mask[chunk] = True
            singletons += 1
            continue
        n_train = max(1, int(np.floor(count * train_frac)))
        picked = rng.permutation(count)[:n_train]
        train_mask[chunk[picked]] = True
    if singletons:
        warnings.warn(f"{singletons} users with a single rating went to train")

    def subset(mask):
        return RatingSet(num_users=ratings.num_users, num_items=ratings.num_items,
                         users=users[mask], items=items[mask], values=values[mask])

    return SplitRatings(train=subset(train_mask), test=subset(~train_mask),
                        seed=seed, singleton_users=singletons)


CLUSTER_NOISE_STD = 0.25


def gen_clusters(dim: int, n_points: int, seed: int) -> LabeledPoints:
    """Two-class synthetic data: points are N(0, I_d), the first two
    coordinates are replaced by one of four cluster centers (two per class,
    rotated by a random 2-d rotation drawn per seed) plus a small Gaussian
    perturbation of scale 0.25 per coordinate.

    With the perturbation variance at 0.25 instead, the two classes overlap
    enough that even the exact metric optimum scores Q around 0.955, so a
    run gated on Q > 0.99 could never terminate; 0.25 must be the scale.
    """
    if dim < 2:
        raise InvalidInputError("dim must be >= 2")
    if n_points < 1:
        raise InvalidInputError("n_points must be >= 1")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    centers = np.array([[-1.0, 1.0], [-1.0, -1.0],
                        [1.0, -1.0], [1.0, 1.0]]) @ rot.T
    pts = rng.standard_normal((n_points, dim))
    which = rng.integers(0, 4, size=n_points)
    noise = CLUSTER_NOISE_STD * rng.standard_normal((n_points, 2))
    pts[:, :2] = centers[which] + noise
    labels = np.where(which < 2, 1, 2)
    return LabeledPoints(points=pts, labels=labels)


def build_pairs(data: LabeledPoints, max_pairs: int | None = None,
                seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """All unordered pairs split by label equality; optional uniform
    subsampling of each set to ``max_pairs``."""
    n = len(data)
    ii, jj = np.triu_indices(n, k=1)
    same = data.labels[ii] == data.labels[jj]
    pairs = np.column_stack([ii, jj])
    similar = pairs[same]
    dissimilar = pairs[~same]
    if max_pairs is not None:
        rng = np.random.default_rng(seed)
        if similar.shape[0] > max_pairs:
            similar = similar[np.sort(rng.choice(similar.shape[0], max_pairs,
                                                 replace=False))]
        if dissimilar.shape[0] > max_pairs:
            dissimilar = dissimilar[np.sort(rng.choice(dissimilar.shape[0],
                                                       max_pairs, replace=False))]
    return similar, dissimilar


def metric_problem_from_labels(data: LabeledPoints, lam: float = 1.0,
                               max_pairs: int | None = None, seed: int = 0,
                               floor_delta: float = 1e-12) -> MetricProblem:
    """Build the metric problem from labels; needs both pair sets nonempty,
    so at least two distinct labels must be present."""
    if np.unique(data.labels).size < 2:
        raise InvalidInputError("metric learning needs at least 2 distinct labels")
    similar, dissimilar = build_pairs(data, max_pairs=max_pairs, seed=seed)
    return MetricProblem(points=data.points, similar=similar,
                         dissimilar=dissimilar, lam=lam,
                         floor_delta=floor_delta)


def rmse(test: RatingSet, V: Factor, num_users: int) -> float:
    """Root-mean-square error on held-out ratings; predictions are inner
    products of user and item factor rows, clipped to the rating range."""
    if len(test) == 0:
        raise InvalidInputError("empty test set")
    if V.rows != num_users + test.num_items:
        raise InvalidInputError(
            f"factor has {V.rows} rows, expected {num_users + test.num_items}")
    ve = V.entries
    preds = np.einsum("ij,ij->i", ve[test.users], ve[test.items + num_users])
    preds = np.clip(preds, RATING_MIN, RATING_MAX)
    resid = preds - test.values
    return float(np.sqrt(np.mean(resid * resid)))


def quality_q(data: LabeledPoints, similar: np.ndarray, dissimilar: np.ndarray,
              V: Factor) -> float:
    """Fraction of (anchor, similar, dissimilar) triples where the similar
    point is strictly closer; ties score zero."""
    similar = np.asarray(similar, dtype=np.int64).reshape(-1, 2)
    dissimilar = np.asarray(dissimilar, dtype=np.int64).reshape(-1, 2)
    if similar.size == 0 or dissimilar.size == 0:
        raise InvalidInputError("need nonempty similar and dissimilar sets")
    pts = data.points
    ve = V.entries

    def pair_dists(pairs):
        proj = (pts[pairs[:, 0]] - pts[pairs[:, 1]]) @ ve
        return np.sqrt(np.einsum("ij,ij->i", proj, proj))

    d_sim = pair_dists(similar)
    d_dis = pair_dists(dissimilar)

    n = len(data)
    sim_by_anchor: list[list[float]] = [[] for _ in range(n)]
    dis_by_anchor: list[list[float]] = [[] for _ in range(n)]
    for (a, b), d in zip(similar, d_sim):
        sim_by_anchor[a].append(d)
        sim_by_anchor[b].append(d)
    for (a, b), d in zip(dissimilar, d_dis):
        dis_by_anchor[a].append(d)
        dis_by_anchor[b].append(d)

    xi = 0
    hits = 0.0
    for i in range(n):
        if not sim_by_anchor[i] or not dis_by_anchor[i]:
            continue
        ds = np.sort(np.asarray(dis_by_anchor[i]))
        xi += len(sim_by_anchor[i]) * ds.size
        # strictly greater dissimilar distances per similar distance
        pos = np.searchsorted(ds, np.asarray(sim_by_anchor[i]), side="right")
        hits += float(np.sum(ds.size - pos))
    if xi == 0:
        raise InvalidInputError("no (anchor, similar, dissimilar) triples")
    return hits / xi


def build_covariance(raw: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Covariance of column-standardized data.  Zero-variance columns get
    scale 1 with a warning."""
    x = np.atleast_2d(np.asarray(raw, dtype=float))
    if x.shape[0] < 2:
        raise InvalidInputError("need at least 2 rows")
    centered = x - x.mean(axis=0)
    if normalize:
        std = centered.std(axis=0)
        degenerate = std <= 0
        if np.any(degenerate):
            warnings.warn(f"{int(degenerate.sum())} zero-variance columns "
                          "kept with unit scale")
            std = np.where(degenerate, 1.0, std)
        centered = centered / std
    return (centered.T @ centered) / x.shape[0]


def sparsity_and_variance(A: np.ndarray, V: Factor,
                          zero_tol: float = 1e-3) -> tuple[float, float]:
    """Sparsity and explained variance of the unit top eigenvector x of
    V V': fraction of entries with |x_i| <= zero_tol * max|x|, and x' A x."""
    if V.rank == 0 or not np.any(V.entries):
        raise InvalidInputError("factor must be nonzero")
    u, s, _ = np.linalg.svd(V.entries, full_matrices=False)
    x = u[:, 0]
    thresh = zero_tol * np.max(np.abs(x))
    sparsity = float(np.mean(np.abs(x) <= thresh))
    variance = float(x @ (np.asarray(A) @ x))
    return sparsity, variance


# ---------------------------------------------------------------------------
# Labeled CSV files (last column is the class label)
# ---------------------------------------------------------------------------

def parse_labeled_csv(path) -> LabeledPoints:
    """Rows of numeric features with a trailing label column; labels are
    mapped to integers 1..L in sorted order."""
    feats, raw_labels = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise ParseError(f"line {lineno}: expected features and a label",
                                 line=lineno)
            try:
                feats.append([float(p) for p in parts[:-1]])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}", line=lineno) from exc
            raw_labels.append(parts[-1].strip())
    if not feats:
        raise ParseError("no rows found", line=None)
    widths = {len(f) for f in feats}
    if len(widths) != 1:
        raise ParseError(f"inconsistent feature counts {sorted(widths)}", line=None)
    uniq = sorted(set(raw_labels))
    label_map = {lab: i + 1 for i, lab in enumerate(uniq)}
    labels = np.array([label_map[lab] for lab in raw_labels], dtype=np.int64)
    return LabeledPoints(points=np.asarray(feats), labels=labels)


def write_labeled_csv(path, data: LabeledPoints) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row, lab in zip(data.points, data.labels):
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{int(lab)}\n")


def stratified_subsample(data: LabeledPoints, size: int, seed: int) -> LabeledPoints:
    """Class-proportional uniform subsample of the requested size."""
    if size < 1 or size > len(data):
        raise InvalidInputError("subsample size out of range")
    rng = np.random.default_rng(seed)
    labels = data.labels
    classes, counts = np.unique(labels, return_counts=True)
    quota = np.floor(size * counts / len(data)).astype(int)
    quota = np.maximum(quota, 1)
    while quota.sum() > size:
        quota[np.argmax(quota)] -= 1
    while quota.sum() < size:
        quota[np.argmax(counts - quota)] += 1
    picked = []
    for cls, q in zip(classes, quota):
        idx = np.flatnonzero(labels == cls)
        picked.append(rng.choice(idx, size=q, replace=False))
    picked = np.sort(np.concatenate(picked))
    return LabeledPoints(points=data.points[picked], labels=labels[picked])
