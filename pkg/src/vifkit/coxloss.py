"""Cox proportional hazards partial likelihood under presence masking.

The loss is the negative log partial likelihood

    L(theta, b) = -sum_{i present, event} (eta_i - log sum_{j in R_i} exp(eta_j)),

with eta = X theta and at-risk sets R_i = {j present : y_j >= y_i}.  Ties in
the observed times are rejected at load time, so risk sets are unambiguous.
All sums are evaluated in one reverse sweep over the time-sorted records,
O(n d^2) per call, with a max-shift on eta for stability.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, EmptyRiskSetError, NoEventsError
from .losscore import LossModel, PresenceVector, TargetFunction
from .numkit import solve_spd


@dataclass(frozen=True)
class SurvivalDataset:
    """Right-censored survival records: features x, times y, event flags delta."""

    x: np.ndarray
    y: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        d = np.ascontiguousarray(self.delta, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or d.ndim != 1:
            raise DataError("x must be (n, d); y and delta must be (n,)")
        n = x.shape[0]
        if y.shape[0] != n or d.shape[0] != n or n == 0:
            raise DataError("x, y, delta must share a nonzero first dimension")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("non-finite values in survival data")
        if np.any(y <= 0):
            raise DataError("observed times must be positive")
        if not np.all((d == 0) | (d == 1)):
            raise DataError("delta must be 0 or 1")
        if np.unique(y).shape[0] != n:
            raise DataError("tied observed times are not supported; jitter the data")
        for name, arr in (("x", x), ("y", y), ("delta", d)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @classmethod
    def from_csv(cls, path) -> "SurvivalDataset":
        """Load records from a CSV with header y,delta,x1,...,xd."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            if len(header) < 3 or header[0] != "y" or header[1] != "delta":
                raise DataError(f"{path}: expected header y,delta,x1,...")
            rows = list(reader)
        if not rows:
            raise DataError(f"{path}: no data rows")
        try:
            arr = np.array(rows, dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric cell ({exc})") from None
        if arr.shape[1] != len(header):
            raise DataError(f"{path}: ragged rows")
        return cls(x=arr[:, 2:], y=arr[:, 0], delta=arr[:, 1])

    def without(self, i: int) -> "SurvivalDataset":
        keep = np.ones(self.n, dtype=bool)
        keep[i] = False
        return SurvivalDataset(self.x[keep], self.y[keep], self.delta[keep])


def risk_sets(data: SurvivalDataset, b: PresenceVector) -> list[np.ndarray]:
    """At-risk sets for each present event, as sorted index arrays.

    Quadratic reference implementation used by tests; the model itself never
    materializes these.
    """
    out = []
    present = b.present_indices()
    for i in present:
        if data.delta[i] == 1:
            members = present[data.y[present] >= data.y[i]]
            if members.size == 0:
                raise EmptyRiskSetError(f"event {i} has an empty at-risk set")
            out.append(members)
    return out


def _sweep(data: SurvivalDataset, theta: np.ndarray, b: PresenceVector, want_s2: bool):
    """Suffix sums over time-sorted present records.

    Returns a dict with records sorted by ascending y: suffix sums s0, s1
    (and s2 if requested) of exp(eta - eta_max) weights, event positions,
    and the sort bookkeeping.
    """
    present = b.present_indices()
    if present.size == 0:
        raise NoEventsError("no present records")
    xs = data.x[present]
    ys = data.y[present]
    ds = data.delta[present]
    order = np.argsort(ys, kind="stable")
    xs, ys, ds = xs[order], ys[order], ds[order]
    eta = xs @ theta
    shift = eta.max()
    w = np.exp(eta - shift)

    s0 = np.cumsum(w[::-1])[::-1]
    s1 = np.cumsum((w[:, None] * xs)[::-1], axis=0)[::-1]
    s2 = None
    if want_s2:
        outer = w[:, None, None] * (xs[:, :, None] * xs[:, None, :])
        s2 = np.cumsum(outer[::-1], axis=0)[::-1]

    ev = np.flatnonzero(ds == 1)
    if ev.size == 0:
        raise NoEventsError("no uncensored events among present records")
    return {
        "present": present,
        "order": order,
        "xs": xs,
        "ys": ys,
        "ds": ds,
        "eta": eta,
        "shift": shift,
        "w": w,
        "s0": s0,
        "s1": s1,
        "s2": s2,
        "ev": ev,
    }


def cox_value(theta: np.ndarray, data: SurvivalDataset, b: PresenceVector) -> float:
    s = _sweep(data, theta, b, want_s2=False)
    ev = s["ev"]
    log_denom = s["shift"] + np.log(s["s0"][ev])
    return float(-(s["eta"][ev] - log_denom).sum())


def cox_gradient(theta: np.ndarray, data: SurvivalDataset, b: PresenceVector) -> np.ndarray:
    s = _sweep(data, theta, b, want_s2=False)
    ev = s["ev"]
    ratios = s["s1"][ev] / s["s0"][ev, None]
    return -(s["xs"][ev] - ratios).sum(axis=0)


def cox_hessian(theta: np.ndarray, data: SurvivalDataset, b: PresenceVector) -> np.ndarray:
    s = _sweep(data, theta, b, want_s2=True)
    ev = s["ev"]
    r1 = s["s1"][ev] / s["s0"][ev, None]
    h = (s["s2"][ev] / s["s0"][ev, None, None]).sum(axis=0)
    h -= np.einsum("ki,kj->ij", r1, r1)
    return 0.5 * (h + h.T)


class CoxModel(LossModel):
    """Negative log partial likelihood as a presence-masked LossModel.

    Data objects are the survival records; unit terms (for per-term Hessian
    sampling) are the per-event contributions.
    """

    is_convex = True

    def __init__(self, data: SurvivalDataset):
        self.data = data
        self._cache_key = None
        self._cache_val = None

    @property
    def n_objects(self) -> int:
        return self.data.n

    @property
    def dim(self) -> int:
        return self.data.d

    def value(self, theta, b):
        return cox_value(theta, self.data, b)

    def gradient(self, theta, b):
        return cox_gradient(theta, self.data, b)

    def hessian(self, theta, b):
        return cox_hessian(theta, self.data, b)

    def num_terms(self, b: PresenceVector) -> int:
        return int(self.data.delta[b.present_indices()].sum())

    def _full_sweep(self, theta: np.ndarray):
        key = theta.tobytes()
        if key != self._cache_key:
            self._cache_val = _sweep(
                self.data, theta, PresenceVector.all_ones(self.data.n), want_s2=False
            )
            self._cache_key = key
        return self._cache_val

    def per_term_hvp(self, j, theta, b, v):
        """(s2/s0 - r1 r1^T) v at the j-th present event, O(n d)."""
        s = _sweep(self.data, theta, b, want_s2=False)
        k = s["ev"][j]
        xs, w, s0 = s["xs"], s["w"], s["s0"][k]
        xv = xs @ v
        # suffix sum of w * (x^T v) * x starting at position k
        s2v = ((w * xv)[k:, None] * xs[k:]).sum(axis=0)
        r1 = s["s1"][k] / s0
        return s2v / s0 - r1 * float(r1 @ v)

    def term_gradient_sum(self, theta, b, idx):
        s = _sweep(self.data, theta, b, want_s2=False)
        ev = s["ev"][np.asarray(idx, dtype=np.int64)]
        ratios = s["s1"][ev] / s["s0"][ev, None]
        return -(s["xs"][ev] - ratios).sum(axis=0)

    def delta_gradient(self, theta, i):
        """grad L(theta, 1) - grad L(theta, 1_-i), by direct cancellation.

        Dropping record i removes its own event term (if any) and removes
        exp(eta_i) from the at-risk sums of every earlier event:

            delta = -delta_i (x_i - s1/s0|_{y_i})
                    + sum_{events j: y_j < y_i} [ s1/s0|_{y_j}
                        - (s1 - w_i x_i)/(s0 - w_i)|_{y_j} ].
        """
        s = self._full_sweep(np.ascontiguousarray(theta, dtype=np.float64))
        pos = int(np.flatnonzero(s["present"][s["order"]] == i)[0])
        x_i = s["xs"][pos]
        w_i = s["w"][pos]
        out = np.zeros(self.dim)
        if s["ds"][pos] == 1:
            out -= x_i - s["s1"][pos] / s["s0"][pos]
        earlier = s["ev"][s["ev"] < pos]
        if earlier.size:
            s0e = s["s0"][earlier]
            s1e = s["s1"][earlier]
            reduced = (s1e - w_i * x_i) / (s0e - w_i)[:, None]
            out += (s1e / s0e[:, None] - reduced).sum(axis=0)
        return out


def reid_if(theta: np.ndarray, data: SurvivalDataset, i: int) -> np.ndarray:
    """Reid-and-Crepeau-style influence of record i on the Cox estimate.

    With S0, S1 the (1/n)-scaled at-risk sums at theta over the full data,

        IF_i = -[H/n]^{-1} score_i - [H/n]^{-1} C_i,
        score_i = -delta_i (x_i - S1/S0|_{y_i}),
        C_i = exp(eta_i) (1/n) sum_{events j: y_j <= y_i}
                  (x_i - S1/S0|_{y_j}) / S0|_{y_j}.

    A record censored before every event time has IF_i = 0.
    """
    b = PresenceVector.all_ones(data.n)
    s = _sweep(data, theta, b, want_s2=False)
    n = data.n
    pos = int(np.flatnonzero(s["present"][s["order"]] == i)[0])
    x_i = s["xs"][pos]
    w_i = s["w"][pos]

    score = np.zeros(data.d)
    if s["ds"][pos] == 1:
        score -= x_i - s["s1"][pos] / s["s0"][pos]

    upto = s["ev"][s["ev"] <= pos]
    c_i = np.zeros(data.d)
    if upto.size:
        # exp(eta_i)/S0(y_j) = n w_i/s0_j in shift-consistent units, and the
        # leading 1/n cancels it, leaving plain w_i/s0_j per event term.
        ratios = s["s1"][upto] / s["s0"][upto, None]
        weights = w_i / s["s0"][upto]
        c_i = (weights[:, None] * (x_i[None, :] - ratios)).sum(axis=0)
    h_n = cox_hessian(theta, data, b) / n
    return -solve_spd(h_n, score + c_i)


class RelativeRiskTarget(TargetFunction):
    """f(theta) = exp(theta . x_test), the relative risk of a test profile."""

    def __init__(self, x_test):
        self.x_test = np.ascontiguousarray(x_test, dtype=np.float64)

    def value(self, theta):
        return float(np.exp(theta @ self.x_test))

    def gradient(self, theta):
        return np.exp(theta @ self.x_test) * self.x_test


def relative_risk_target(x_test) -> RelativeRiskTarget:
    return RelativeRiskTarget(x_test)
