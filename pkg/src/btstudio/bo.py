"""Bayesian optimization of a fixed tree structure's continuous parameters
(offsets and angles of unlocked leaves). A Gaussian-process surrogate with
a squared-exponential kernel and constant mean models the episode score;
candidates maximize expected improvement via multi-start local search.
Everything is deterministic under a fixed rng.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .tree import BehaviorTree, Node, preorder, replace_node

OFFSET_BOUND = 1.5  # meters, per axis
ANGLE_BOUND = math.pi


@dataclass(frozen=True)
class ParamSpec:
    node_id: str
    kind: str        # "offset" | "angle"
    index: int       # component for offsets, 0 for angle
    lower: float
    upper: float


@dataclass(frozen=True)
class ParamVector:
    values: tuple[float, ...]
    spec: tuple[ParamSpec, ...]

    def __post_init__(self):
        if len(self.values) != len(self.spec):
            raise ValueError("values and spec lengths differ")

    @property
    def dims(self) -> int:
        return len(self.values)

    def bounds(self) -> list[tuple[float, float]]:
        return [(s.lower, s.upper) for s in self.spec]


def extract_params(tree: BehaviorTree,
                   offset_bound: float = OFFSET_BOUND) -> ParamVector:
    """Unlocked continuous leaf parameters in canonical preorder; locked
    nodes contribute no dimensions.
    """
    values: list[float] = []
    spec: list[ParamSpec] = []
    for node in preorder(tree.root):
        if not node.is_leaf or node.locked:
            continue
        if node.params.offset is not None:
            for i, v in enumerate(node.params.offset):
                values.append(v)
                spec.append(ParamSpec(node.node_id, "offset", i,
                                      -offset_bound, offset_bound))
        if node.params.angle is not None:
            values.append(node.params.angle)
            spec.append(ParamSpec(node.node_id, "angle", 0,
                                  -ANGLE_BOUND, ANGLE_BOUND))
    return ParamVector(tuple(values), tuple(spec))


def apply_params(tree: BehaviorTree, vector: ParamVector) -> BehaviorTree:
    """Write a vector back into the tree without structural change."""
    expected = extract_params(tree)
    if expected.spec != vector.spec:
        raise ValueError("parameter vector does not match this tree's layout")
    by_node: dict[str, list[tuple[ParamSpec, float]]] = {}
    for s, v in zip(vector.spec, vector.values):
        by_node.setdefault(s.node_id, []).append((s, v))
    out = tree
    for node_id, entries in by_node.items():
        node = out.node(node_id)
        offset = list(node.params.offset) if node.params.offset is not None else None
        angle = node.params.angle
        for s, v in entries:
            if s.kind == "offset":
                offset[s.index] = v
            else:
                angle = v
        params = replace(node.params,
                         offset=tuple(offset) if offset is not None else None,
                         angle=angle)
        out = replace_node(out, node_id, replace(node, params=params))
    return out


# ---------------------------------------------------------------------------
# Gaussian-process surrogate

_NOISE = 1e-6
_JITTER = 1e-10


class Surrogate:
    """GP regression over inputs scaled to the unit box; constant mean;
    isotropic squared-exponential kernel, hyperparameters refit by
    likelihood maximization.

    Targets are fit through a Gaussian-copula (rank -> normal scores)
    transform: episode scores have cliff-shaped failure plateaus many
    orders of magnitude below the useful range, and a linear scaling would
    let one catastrophic sample flatten the model everywhere else.
    Predictions map back to raw scores through the monotone inverse.
    """

    def __init__(self, bounds: Sequence[tuple[float, float]]):
        if len(bounds) == 0:
            raise ValueError("nothing to tune: zero-dimensional bounds")
        self.bounds = [(float(lo), float(hi)) for lo, hi in bounds]
        self.X: list[tuple[float, ...]] = []
        self.y: list[float] = []
        self.best_vector: Optional[tuple[float, ...]] = None
        self.best_score = -math.inf
        self._log_length = 0.0   # of unit-box inputs
        self._log_signal = 0.0   # of normal-score targets
        self._chol = None
        self._alpha = None
        self._ns = None          # normal scores aligned with self.y
        self._knots = None       # (sorted unique normal score, raw score)

    @property
    def dims(self) -> int:
        return len(self.bounds)

    def n_observations(self) -> int:
        return len(self.y)

    def _scale(self, x: Sequence[float]) -> np.ndarray:
        out = np.empty(len(x))
        for i, ((lo, hi), v) in enumerate(zip(self.bounds, x)):
            out[i] = (v - lo) / (hi - lo) if hi > lo else 0.0
        return out

    def _kernel(self, A: np.ndarray, B: np.ndarray,
                log_length: float, log_signal: float) -> np.ndarray:
        length = math.exp(log_length)
        signal2 = math.exp(2.0 * log_signal)
        d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
        return signal2 * np.exp(-0.5 * d2 / (length * length))

    def _neg_log_marginal(self, theta: np.ndarray, X: np.ndarray,
                          y: np.ndarray) -> float:
        K = self._kernel(X, X, theta[0], theta[1])
        K[np.diag_indices_from(K)] += _NOISE + _JITTER
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            return 1e12
        alpha = np.linalg.solve(L.T, np.linalg.solve(L, y))
        return float(0.5 * y @ alpha + np.log(np.diag(L)).sum()
                     + 0.5 * len(y) * math.log(2.0 * math.pi))

    def _refit(self) -> None:
        X = np.array([self._scale(x) for x in self.X])
        y = np.array(self.y, dtype=float)
        n = len(y)
        ranks = stats.rankdata(y, method="average")
        ns = stats.norm.ppf(ranks / (n + 1.0))
        self._ns = ns
        order = np.argsort(ns)
        uniq_ns, uniq_idx = np.unique(ns[order], return_index=True)
        self._knots = (uniq_ns, y[order][uniq_idx])
        # the posterior refits on every observation; the hyperparameter
        # search is O(n^3) per step, so it re-runs on a thinning schedule
        if n >= 2 and (n <= 20 or n % 5 == 0):
            best = None
            for start in ((math.log(0.3), 0.0), (math.log(1.0), 0.0),
                          (math.log(0.1), 0.0)):
                res = optimize.minimize(
                    self._neg_log_marginal, np.array(start), args=(X, ns),
                    method="L-BFGS-B", options={"maxiter": 40},
                    bounds=[(math.log(1e-2), math.log(1e2))] * 2)
                if best is None or res.fun < best.fun:
                    best = res
            self._log_length, self._log_signal = best.x
        K = self._kernel(X, X, self._log_length, self._log_signal)
        K[np.diag_indices_from(K)] += _NOISE + _JITTER
        self._chol = np.linalg.cholesky(K)
        self._alpha = np.linalg.solve(self._chol.T,
                                      np.linalg.solve(self._chol, ns))
        self._X_scaled = X

    def _predict_scores(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior in normal-score space for rows of ``xs``."""
        if not self.y:
            raise ValueError("no observations yet")
        scaled = np.array([self._scale(x) for x in np.atleast_2d(xs)])
        Ks = self._kernel(scaled, self._X_scaled, self._log_length,
                          self._log_signal)
        means = Ks @ self._alpha
        v = np.linalg.solve(self._chol, Ks.T)
        var = (math.exp(2.0 * self._log_signal) + _NOISE
               - (v * v).sum(axis=0))
        return means, np.sqrt(np.clip(var, 0.0, None))

    def _to_raw(self, ns_values: np.ndarray) -> np.ndarray:
        knots_ns, knots_y = self._knots
        if len(knots_ns) == 1:
            return np.full_like(ns_values, knots_y[0])
        return np.interp(ns_values, knots_ns, knots_y)

    def _raw_slope(self) -> float:
        knots_ns, knots_y = self._knots
        if len(knots_ns) < 2:
            return 1.0
        return float((knots_y[-1] - knots_y[0]) / (knots_ns[-1] - knots_ns[0]))

    def predict_batch(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior means and standard deviations on the raw score scale."""
        means_ns, stds_ns = self._predict_scores(xs)
        return self._to_raw(means_ns), stds_ns * self._raw_slope()

    def predict(self, x: Sequence[float]) -> tuple[float, float]:
        """Posterior mean and standard deviation at one point."""
        means, stds = self.predict_batch(np.asarray(x, dtype=float))
        return float(means[0]), float(stds[0])


def observe(surrogate: Surrogate, vector: ParamVector, score: float) -> Surrogate:
    """Record one (parameters, score) pair and refit the model."""
    if not math.isfinite(score):
        raise ValueError(f"non-finite score {score!r}")
    for v, (lo, hi) in zip(vector.values, surrogate.bounds):
        if not lo - 1e-9 <= v <= hi + 1e-9:
            raise ValueError(f"value {v} outside bounds [{lo}, {hi}]")
    surrogate.X.append(tuple(vector.values))
    surrogate.y.append(float(score))
    if score > surrogate.best_score:
        surrogate.best_score = float(score)
        surrogate.best_vector = tuple(vector.values)
    surrogate._refit()
    return surrogate


def expected_improvement(mean: float, std: float, best: float) -> float:
    """EI for maximization; exactly zero where the model is certain."""
    if std <= 0.0:
        return 0.0
    z = (mean - best) / std
    return std * (z * stats.norm.cdf(z) + stats.norm.pdf(z))


EXPLORE_EVERY = 4  # every n-th suggestion is a space-filling probe


def suggest_next(surrogate: Surrogate, bounds: Sequence[tuple[float, float]],
                 rng: random.Random, n_starts: int = 16,
                 spec: Optional[tuple[ParamSpec, ...]] = None) -> ParamVector:
    """Next candidate: the best of ``n_starts`` local EI climbs, with a
    quasi-random space-filling draw before any observation and on every
    fourth call. The periodic probes guard against the acquisition getting
    pinned when failure plateaus mislead the surrogate fit.
    """
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    if len(bounds) == 0:
        raise ValueError("nothing to tune: zero-dimensional bounds")
    spec = spec or tuple(ParamSpec(f"dim{i}", "offset", 0, lo, hi)
                         for i, (lo, hi) in enumerate(bounds))

    n_seen = 0 if surrogate is None else surrogate.n_observations()
    if n_seen == 0 or n_seen % EXPLORE_EVERY == EXPLORE_EVERY - 1:
        sampler = stats.qmc.Sobol(d=len(bounds), scramble=True,
                                  seed=rng.getrandbits(32))
        unit = sampler.random(1)[0]
        values = tuple(lo + u * (hi - lo) for u, (lo, hi) in zip(unit, bounds))
        return ParamVector(values, spec)

    # improvement is judged on the surrogate's (rank-transformed) scale
    best = float(np.max(surrogate._ns))

    def ei_batch(xs: np.ndarray) -> np.ndarray:
        means, stds = surrogate._predict_scores(xs)
        out = np.zeros(len(means))
        ok = stds > 0.0
        z = (means[ok] - best) / stds[ok]
        out[ok] = stds[ok] * (z * stats.norm.cdf(z) + stats.norm.pdf(z))
        return out

    def neg_ei(x: np.ndarray) -> float:
        return -float(ei_batch(x[None, :])[0])

    starts = []
    for _ in range(max(1, n_starts // 2)):
        starts.append([rng.uniform(lo, hi) for lo, hi in bounds])
    if surrogate.best_vector is not None:
        for _ in range(n_starts - len(starts)):
            starts.append([min(hi, max(lo, bv + rng.gauss(0.0, 0.1 * (hi - lo))))
                           for bv, (lo, hi) in zip(surrogate.best_vector, bounds)])
    lows = np.array([lo for lo, _ in bounds])
    highs = np.array([hi for _, hi in bounds])
    span = highs - lows
    # local search via batch-scored shrinking neighborhoods; numerical
    # gradients get prohibitive as tree dimensionality grows
    cands = np.clip(np.array(starts), lows, highs)
    champion = cands[0]
    champion_ei = -1.0
    for step in range(4):
        ei = ei_batch(cands)
        i = int(np.argmax(ei))
        if float(ei[i]) > champion_ei:
            champion_ei = float(ei[i])
            champion = cands[i].copy()
        sigma = 0.15 * (0.4 ** step)
        cands = np.array([
            [min(hi, max(lo, c + rng.gauss(0.0, sigma * s)))
             for c, lo, hi, s in zip(champion, lows, highs, span)]
            for _ in range(len(starts))])
    if len(bounds) <= 4:  # cheap enough for gradient polish in low dims
        res = optimize.minimize(neg_ei, champion, method="L-BFGS-B",
                                bounds=bounds, options={"maxiter": 30})
        if -res.fun > champion_ei:
            champion = res.x
    values = tuple(float(min(hi, max(lo, v)))
                   for v, (lo, hi) in zip(champion, bounds))
    return ParamVector(values, spec)
