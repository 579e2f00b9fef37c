"""ListMLE listwise ranking loss with a linear per-item scorer.

Scores are f(x)_l = W[l] . x for an item weight matrix W of shape
(n_items, p); the loss of a query with relevance list (y_1, ..., y_k) is

    sum_j [ logsumexp_{l in C_j} s_l - s_{y_j} ],   C_j = present \ {y_1..y_{j-1}}.

Items are the data objects: dropping item i removes it from every relevance
list (later positions shift up) and from every logsumexp; W[i] is frozen.
An optional ridge term keeps the objective strictly convex (the raw loss is
invariant to adding one vector to every row of W).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NoPresentItemsError
from .losscore import LossModel, PresenceVector, TargetFunction


@dataclass(frozen=True)
class RankingDataset:
    """Query features (m, p) plus one ordered relevance list per query."""

    features: np.ndarray
    rel_lists: tuple
    n_items: int

    def __post_init__(self):
        f = np.ascontiguousarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] == 0:
            raise DataError("features must be a nonempty (m, p) array")
        if not np.all(np.isfinite(f)):
            raise DataError("non-finite feature values")
        if self.n_items < 1:
            raise DataError("n_items must be >= 1")
        lists = []
        for qi, lst in enumerate(self.rel_lists):
            ids = tuple(int(v) for v in lst)
            if len(ids) == 0:
                raise DataError(f"query {qi}: empty relevance list")
            if len(set(ids)) != len(ids):
                raise DataError(f"query {qi}: repeated item in relevance list")
            if min(ids) < 0 or max(ids) >= self.n_items:
                raise DataError(f"query {qi}: item id out of range")
            lists.append(ids)
        if len(lists) != f.shape[0]:
            raise DataError("one relevance list per query required")
        f.setflags(write=False)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "rel_lists", tuple(lists))

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_csv(cls, queries_path, labels_path) -> "RankingDataset":
        """queries.csv: query_id,x1..xp ; labels.csv: query_id,rank,item_id."""
        with open(queries_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "query_id":
                raise DataError(f"{queries_path}: expected header query_id,x1,...")
            rows = list(reader)
        if not rows:
            raise DataError(f"{queries_path}: no data rows")
        try:
            qids = [int(r[0]) for r in rows]
            feats = np.array([[float(v) for v in r[1:]] for r in rows])
        except (ValueError, IndexError) as exc:
            raise DataError(f"{queries_path}: malformed row ({exc})") from None
        if qids != list(range(len(qids))):
            raise DataError(f"{queries_path}: query_id must be 0..m-1 in order")

        per_query: dict[int, list[tuple[int, int]]] = {q: [] for q in qids}
        with open(labels_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["query_id", "rank", "item_id"]:
                raise DataError(f"{labels_path}: expected header query_id,rank,item_id")
            for lineno, row in enumerate(reader, 2):
                try:
                    q, rank, item = int(row[0]), int(row[1]), int(row[2])
                except (ValueError, IndexError):
                    raise DataError(f"{labels_path}:{lineno}: malformed row") from None
                if q not in per_query:
                    raise DataError(f"{labels_path}:{lineno}: unknown query_id {q}")
                per_query[q].append((rank, item))
        lists = []
        max_item = -1
        for q in qids:
            entries = sorted(per_query[q])
            if [r for r, _ in entries] != list(range(len(entries))):
                raise DataError(f"labels for query {q}: ranks must be 0..k-1")
            ids = [item for _, item in entries]
            if ids:
                max_item = max(max_item, max(ids))
            lists.append(tuple(ids))
        return cls(features=feats, rel_lists=tuple(lists), n_items=max_item + 1)


def _filtered_list(lst, mask):
    return [item for item in lst if mask[item]]


def _lse(scores, cand):
    vals = scores[cand]
    shift = vals.max()
    return float(np.log(np.exp(vals - shift).sum()) + shift)


def _softmax_embed(scores, cand, n):
    """Softmax over the candidate mask, embedded as a length-n vector."""
    p = np.zeros(n)
    vals = scores[cand]
    ex = np.exp(vals - vals.max())
    p[cand] = ex / ex.sum()
    return p


class ListMLEModel(LossModel):
    """ListMLE over a fixed item universe, with items as the data objects."""

    is_convex = True

    def __init__(self, data: RankingDataset, l2: float = 0.0):
        if l2 < 0:
            raise ValueError("l2 must be >= 0")
        self.data = data
        self.l2 = float(l2)

    @property
    def n_objects(self) -> int:
        return self.data.n_items

    @property
    def dim(self) -> int:
        return self.data.n_items * self.data.p

    @property
    def layout(self) -> dict:
        return {"W": (0, self.dim)}

    def _w(self, theta):
        return np.asarray(theta, dtype=np.float64).reshape(self.data.n_items, self.data.p)

    def _mask(self, b: PresenceVector):
        if b.n != self.data.n_items:
            raise ValueError("presence vector length does not match the item universe")
        if b.count == 0:
            raise NoPresentItemsError("no present items")
        return b.bits

    def value(self, theta, b):
        w = self._w(theta)
        mask = self._mask(b)
        total = 0.5 * self.l2 * float(np.asarray(theta) @ np.asarray(theta))
        for x, lst in zip(self.data.features, self.data.rel_lists):
            flist = _filtered_list(lst, mask)
            if not flist:
                continue
            scores = w @ x
            cand = mask.copy()
            for item in flist:
                total += _lse(scores, cand) - scores[item]
                cand[item] = False
        return float(total)

    def gradient(self, theta, b):
        w = self._w(theta)
        mask = self._mask(b)
        n = self.data.n_items
        g = np.zeros_like(w)
        for x, lst in zip(self.data.features, self.data.rel_lists):
            flist = _filtered_list(lst, mask)
            if not flist:
                continue
            scores = w @ x
            cand = mask.copy()
            coef = np.zeros(n)
            for item in flist:
                coef += _softmax_embed(scores, cand, n)
                coef[item] -= 1.0
                cand[item] = False
            g += np.outer(coef, x)
        out = g.ravel()
        if self.l2:
            out = out + self.l2 * np.asarray(theta, dtype=np.float64)
        return out

    def hessian(self, theta, b):
        w = self._w(theta)
        mask = self._mask(b)
        n, p = self.data.n_items, self.data.p
        h4 = np.zeros((n, p, n, p))
        for x, lst in zip(self.data.features, self.data.rel_lists):
            flist = _filtered_list(lst, mask)
            if not flist:
                continue
            scores = w @ x
            cand = mask.copy()
            m_items = np.zeros((n, n))
            for item in flist:
                prob = _softmax_embed(scores, cand, n)
                m_items += np.diag(prob) - np.outer(prob, prob)
                cand[item] = False
            xx = np.outer(x, x)
            h4 += m_items[:, None, :, None] * xx[None, :, None, :]
        h = h4.reshape(self.dim, self.dim)
        if self.l2:
            h = h + self.l2 * np.eye(self.dim)
        return h

    def num_terms(self, b: PresenceVector) -> int:
        return self.data.m

    def term_gradient_sum(self, theta, b, idx):
        w = self._w(theta)
        mask = self._mask(b)
        n = self.data.n_items
        g = np.zeros_like(w)
        chosen = np.zeros(self.data.m, dtype=bool)
        chosen[np.asarray(idx, dtype=np.int64)] = True
        for qi in np.flatnonzero(chosen):
            x = self.data.features[qi]
            flist = _filtered_list(self.data.rel_lists[qi], mask)
            if not flist:
                continue
            scores = w @ x
            cand = mask.copy()
            coef = np.zeros(n)
            for item in flist:
                coef += _softmax_embed(scores, cand, n)
                coef[item] -= 1.0
                cand[item] = False
            g += np.outer(coef, x)
        out = g.ravel()
        if self.l2:
            # ridge is part of the full objective; spread evenly over terms
            out = out + self.l2 * np.asarray(theta, dtype=np.float64) * (
                len(np.flatnonzero(chosen)) / self.data.m
            )
        return out

    def delta_gradient(self, theta, i):
        """grad L(theta, 1) - grad L(theta, 1_-i) by per-position cancellation.

        For each query, positions after item i is consumed match the masked
        run exactly and cancel.  What remains, per query, is the softmax
        difference with and without i in the denominator for the positions
        before i's slot, plus the full term at i's own position; the ridge
        is presence-independent and drops out entirely.
        """
        w = self._w(theta)
        n = self.data.n_items
        full = np.ones(n, dtype=bool)
        g = np.zeros_like(w)
        for x, lst in zip(self.data.features, self.data.rel_lists):
            scores = w @ x
            cand = full.copy()
            coef = np.zeros(n)
            for item in lst:
                p_with = _softmax_embed(scores, cand, n)
                if item == i:
                    coef += p_with
                    coef[item] -= 1.0
                    break
                cand_wo = cand.copy()
                cand_wo[i] = False
                coef += p_with - _softmax_embed(scores, cand_wo, n)
                cand[item] = False
            g += np.outer(coef, x)
        return g.ravel()


def listmle_value(theta, data: RankingDataset, b: PresenceVector, l2: float = 0.0) -> float:
    return ListMLEModel(data, l2).value(theta, b)


def listmle_gradient(theta, data: RankingDataset, b: PresenceVector, l2: float = 0.0) -> np.ndarray:
    return ListMLEModel(data, l2).gradient(theta, b)


def listmle_hessian(theta, data: RankingDataset, b: PresenceVector, l2: float = 0.0) -> np.ndarray:
    return ListMLEModel(data, l2).hessian(theta, b)


class QueryLossTarget(TargetFunction):
    """ListMLE loss of one held-out query over the full item universe."""

    def __init__(self, x_test, y_list, n_items: int, p: int):
        self.x = np.ascontiguousarray(x_test, dtype=np.float64)
        self.y_list = tuple(int(v) for v in y_list)
        self.n_items = int(n_items)
        self.p = int(p)
        if self.x.shape != (self.p,):
            raise ValueError("test features have the wrong dimension")
        if len(set(self.y_list)) != len(self.y_list) or not self.y_list:
            raise ValueError("y_list must be nonempty with distinct items")
        if min(self.y_list) < 0 or max(self.y_list) >= self.n_items:
            raise ValueError("y_list item out of range")

    def value(self, theta):
        w = np.asarray(theta, dtype=np.float64).reshape(self.n_items, self.p)
        scores = w @ self.x
        cand = np.ones(self.n_items, dtype=bool)
        total = 0.0
        for item in self.y_list:
            total += _lse(scores, cand) - scores[item]
            cand[item] = False
        return float(total)

    def gradient(self, theta):
        w = np.asarray(theta, dtype=np.float64).reshape(self.n_items, self.p)
        scores = w @ self.x
        cand = np.ones(self.n_items, dtype=bool)
        coef = np.zeros(self.n_items)
        for item in self.y_list:
            coef += _softmax_embed(scores, cand, self.n_items)
            coef[item] -= 1.0
            cand[item] = False
        return np.outer(coef, self.x).ravel()


def query_loss_target(model: ListMLEModel, x_test, y_list) -> QueryLossTarget:
    return QueryLossTarget(x_test, y_list, model.data.n_items, model.data.p)
