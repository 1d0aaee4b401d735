"""Temporal feature model: fitted time distributions and candidate scoring.

Four families of temporal regularities are estimated from training data and
turned into per-candidate scores at query time:

* recurrence - how likely a relation is to appear (again) on an entity;
* temporal order - how likely the query relation starts before another
  relation seen on the candidate;
* relation-pair gap - the distribution (Gaussian or exponential, chosen by
  likelihood) of the year gap between the query start and the closest start
  of another relation;
* duration - a truncated Gaussian over interval lengths per relation, used
  to impute missing endpoints.

Evidence for a candidate comes in three parts: facts from the candidate to
the query subject, the candidate's other facts, and the constrained walks
connecting subject and candidate.  Scores from the parts are blended with
learnable simplex weights; probabilities within a part are blended with the
softmax-weighted affine combination ``integrate_scores``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from . import autodiff as ad
from .autodiff import ParamStore, Var
from .errors import ContractViolation
from .graph import TemporalGraph
from .intervals import Interval

_LOG_2PI = math.log(2.0 * math.pi)
SIGMA_FLOOR = 0.5
MEAN_FLOOR = 0.5
FALLBACK_SIGMA = 100.0

GAP_FALLBACK, GAP_GAUSSIAN, GAP_EXPONENTIAL = 0, 1, 2


# ---------------------------------------------------------------------------
# elementary fitters


def fit_bernoulli(xs) -> float:
    xs = np.asarray(xs, dtype=np.float64)
    return float(xs.mean()) if len(xs) else 0.5


def fit_gaussian(samples) -> tuple[float, float]:
    """Mean and std (floored at half a year against degenerate fits)."""
    x = np.asarray(samples, dtype=np.float64)
    return float(x.mean()), max(float(x.std()), SIGMA_FLOOR)


def fit_exponential(samples) -> float:
    """Rate 1/mean with the mean floored at half a year."""
    x = np.asarray(samples, dtype=np.float64)
    return 1.0 / max(float(x.mean()), MEAN_FLOOR)


def fit_truncated_gaussian(samples, floor=SIGMA_FLOOR) -> tuple[float, float]:
    """Maximum-likelihood (mu, sigma) of a Gaussian truncated to [0, inf).

    Plain sample moments are biased when the truncation is active (mass
    below zero), so the negative log likelihood, which includes the
    normalizer P(X >= 0) = Phi(mu/sigma), is minimized directly.
    """
    x = np.asarray(samples, dtype=np.float64)
    if len(x) == 0:
        raise ContractViolation("cannot fit a duration distribution to no samples")
    m = float(x.mean())
    s = float(x.std())
    if s < 1e-9:
        return m, floor

    def nll(theta):
        mu, log_sig = theta
        if abs(mu) > 1e6 or not -20.0 < log_sig < 20.0:
            return 1e300
        sig = math.exp(log_sig)
        with np.errstate(over="ignore"):
            z = (x - mu) / sig
            val = 0.5 * float(np.sum(z * z)) + len(x) * (
                math.log(sig) + 0.5 * _LOG_2PI + float(stats.norm.logcdf(mu / sig))
            )
        return val if np.isfinite(val) else 1e300

    res = optimize.minimize(nll, [m, math.log(max(s, floor))], method="Nelder-Mead")
    mu_hat = float(res.x[0])
    sigma_hat = math.exp(float(res.x[1]))
    if not np.isfinite(res.fun):
        mu_hat, sigma_hat = m, s
    return mu_hat, max(sigma_hat, floor)


def _gap_fit_from_stats(n, total, total_sq):
    """Pick Gaussian vs exponential for one pair's gap sample by likelihood.

    Works from sufficient statistics (n, sum, sum of squares) so fitting
    stays a single accumulation pass.
    """
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    sigma = max(math.sqrt(var), SIGMA_FLOOR)
    lam = 1.0 / max(mean, MEAN_FLOOR)
    ll_gauss = -n * (math.log(sigma) + 0.5 * _LOG_2PI) - n * var / (2.0 * sigma * sigma)
    ll_exp = n * math.log(lam) - lam * total
    if ll_gauss >= ll_exp:
        return GAP_GAUSSIAN, mean, sigma, lam
    return GAP_EXPONENTIAL, mean, sigma, lam


def gaussian_density(x, mu, sigma):
    z = (x - mu) / sigma
    return math.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))


def exponential_density(x, lam):
    return lam * math.exp(-lam * x) if x >= 0 else 0.0


# ---------------------------------------------------------------------------
# duration model


@dataclass
class DurationModel:
    """Per-relation truncated Gaussian over interval lengths."""

    mu: np.ndarray
    sigma: np.ndarray
    n_obs: np.ndarray
    global_mu: float
    global_sigma: float

    def params_for(self, relation: int) -> tuple[float, float]:
        if 0 <= relation < len(self.mu) and self.n_obs[relation] > 0:
            return float(self.mu[relation]), float(self.sigma[relation])
        return self.global_mu, self.global_sigma

    def sample(self, relation: int, rng: np.random.Generator) -> float:
        """One draw from the relation's truncated Gaussian (never negative)."""
        mu, sigma = self.params_for(relation)
        if sigma < 1e-9:
            return max(mu, 0.0)
        a = (0.0 - mu) / sigma
        return float(stats.truncnorm.rvs(a, np.inf, loc=mu, scale=sigma, random_state=rng))


def fit_duration_model(graph: TemporalGraph) -> DurationModel:
    """Fit duration distributions from facts with both endpoints known."""
    known = np.isfinite(graph.starts) & np.isfinite(graph.ends)
    durations = (graph.ends - graph.starts)[known]
    rels = graph.relations[known]
    R = graph.num_relations
    mu = np.zeros(R)
    sigma = np.full(R, SIGMA_FLOOR)
    n_obs = np.zeros(R, dtype=np.int64)
    for r in np.unique(rels):
        d = durations[rels == r]
        n_obs[r] = len(d)
        if len(d) >= 2:
            mu[r], sigma[r] = fit_truncated_gaussian(d)
        elif len(d) == 1:
            mu[r], sigma[r] = float(d[0]), SIGMA_FLOOR
    if len(durations) >= 2:
        g_mu, g_sigma = fit_truncated_gaussian(durations)
    elif len(durations) == 1:
        g_mu, g_sigma = float(durations[0]), SIGMA_FLOOR
    else:
        g_mu, g_sigma = 1.0, 1.0
    return DurationModel(mu, sigma, n_obs, g_mu, g_sigma)


def impute_duration(
    interval: Interval, relation: int, model: DurationModel, seed: int = 0
) -> Interval:
    """Fill an unknown end as start + a drawn duration, rounded to years."""
    if interval.start is None:
        raise ContractViolation("cannot impute a duration without a start year")
    if interval.resolved:
        return interval
    rng = np.random.default_rng(seed)
    d = model.sample(relation, rng)
    return Interval(interval.start, interval.start + int(round(d)))


# ---------------------------------------------------------------------------
# fitted distribution parameters

_PART_NAMES = ("direct", "other", "walks")


@dataclass
class DistributionParams:
    """All fitted temporal-feature distributions.

    Index 0/1/2 of the leading axis is the evidence part: facts from the
    candidate to the subject, the candidate's other facts, and walk
    evidence.  Pairs with fewer than two observations keep the wide
    fallback prior and are flagged by a zero ``pair_kind`` / low count.
    """

    num_relations: int
    rec_p: np.ndarray  # (2, R)
    rec_n: np.ndarray
    order_p: np.ndarray  # (3, R, R)
    order_n: np.ndarray
    pair_kind: np.ndarray  # (3, R, R) int8
    pair_mu: np.ndarray
    pair_sigma: np.ndarray
    pair_lambda: np.ndarray
    pair_n: np.ndarray
    duration: DurationModel

    @classmethod
    def empty(cls, num_relations: int, duration: DurationModel | None = None):
        R = num_relations
        return cls(
            num_relations=R,
            rec_p=np.full((2, R), 0.5),
            rec_n=np.zeros((2, R), dtype=np.int64),
            order_p=np.full((3, R, R), 0.5),
            order_n=np.zeros((3, R, R), dtype=np.int64),
            pair_kind=np.zeros((3, R, R), dtype=np.int8),
            pair_mu=np.zeros((3, R, R)),
            pair_sigma=np.full((3, R, R), FALLBACK_SIGMA),
            pair_lambda=np.full((3, R, R), 1.0 / FALLBACK_SIGMA),
            pair_n=np.zeros((3, R, R), dtype=np.int64),
            duration=duration
            or DurationModel(
                np.zeros(R), np.full(R, SIGMA_FLOOR), np.zeros(R, dtype=np.int64), 1.0, 1.0
            ),
        )

    def gap_density(self, part: int, r: int, rp: int, gap: float) -> float:
        kind = self.pair_kind[part, r, rp]
        if kind == GAP_EXPONENTIAL:
            return exponential_density(gap, self.pair_lambda[part, r, rp])
        return gaussian_density(gap, self.pair_mu[part, r, rp], self.pair_sigma[part, r, rp])

    def is_fallback_pair(self, part: int, r: int, rp: int) -> bool:
        return self.pair_n[part, r, rp] < 2

    def save(self, path):
        np.savez_compressed(
            path,
            rec_p=self.rec_p,
            rec_n=self.rec_n,
            order_p=self.order_p,
            order_n=self.order_n,
            pair_kind=self.pair_kind,
            pair_mu=self.pair_mu,
            pair_sigma=self.pair_sigma,
            pair_lambda=self.pair_lambda,
            pair_n=self.pair_n,
            dur_mu=self.duration.mu,
            dur_sigma=self.duration.sigma,
            dur_n=self.duration.n_obs,
            dur_global=np.array([self.duration.global_mu, self.duration.global_sigma]),
            num_relations=np.array([self.num_relations]),
        )

    @classmethod
    def load(cls, path):
        with np.load(path) as d:
            duration = DurationModel(
                d["dur_mu"],
                d["dur_sigma"],
                d["dur_n"],
                float(d["dur_global"][0]),
                float(d["dur_global"][1]),
            )
            return cls(
                num_relations=int(d["num_relations"][0]),
                rec_p=d["rec_p"],
                rec_n=d["rec_n"],
                order_p=d["order_p"],
                order_n=d["order_n"],
                pair_kind=d["pair_kind"],
                pair_mu=d["pair_mu"],
                pair_sigma=d["pair_sigma"],
                pair_lambda=d["pair_lambda"],
                pair_n=d["pair_n"],
                duration=duration,
            )

    def to_json_summary(self) -> str:
        """Human-inspectable dump of the fitted (non-fallback) entries."""
        out = {"recurrence": {}, "order": {}, "gap": {}}
        for k in range(2):
            for r in np.flatnonzero(self.rec_n[k] > 0):
                out["recurrence"][f"{_PART_NAMES[k]}/{r}"] = round(float(self.rec_p[k, r]), 6)
        for k in range(3):
            part = _PART_NAMES[k]
            for r, rp in zip(*np.nonzero(self.order_n[k] >= 2)):
                out["order"][f"{part}/{r},{rp}"] = round(float(self.order_p[k, r, rp]), 6)
            for r, rp in zip(*np.nonzero(self.pair_n[k] >= 2)):
                kind = int(self.pair_kind[k, r, rp])
                if kind == GAP_EXPONENTIAL:
                    desc = {"dist": "exponential", "rate": round(float(self.pair_lambda[k, r, rp]), 6)}
                else:
                    desc = {
                        "dist": "gaussian",
                        "mean": round(float(self.pair_mu[k, r, rp]), 6),
                        "std": round(float(self.pair_sigma[k, r, rp]), 6),
                    }
                out["gap"][f"{part}/{r},{rp}"] = desc
        return json.dumps(out, indent=1)


# ---------------------------------------------------------------------------
# evidence


@dataclass
class EvidenceSets:
    """Per-(query, candidate) evidence, split into the three parts.

    ``rels[k]`` holds the distinct relations present in part k and
    ``closest_start[k]`` maps each of them to the start year nearest the
    query's start.  ``direct`` and ``other`` partition the candidate's
    outgoing facts (to the subject vs elsewhere).
    """

    direct: np.ndarray
    other: np.ndarray
    walks: list
    rels: tuple
    closest_start: tuple


def _closest_starts(rel_arr, start_arr, query_start):
    rels = np.unique(rel_arr)
    closest = {}
    for r in rels:
        starts = start_arr[rel_arr == r]
        closest[int(r)] = float(starts[np.argmin(np.abs(starts - query_start))])
    return rels.astype(np.int64), closest


def collect_evidence(
    graph: TemporalGraph,
    subject: int,
    candidate: int,
    query_start: float,
    walks=None,
    exclude_edge_ids=frozenset(),
) -> EvidenceSets:
    """Gather the three evidence parts for one candidate.

    ``walks`` are the constrained walks from the subject to the candidate
    found by rule application (an empty part is fine).  Facts whose edge id
    is excluded (the query's own edge during fitting) are ignored.
    """
    graph._require_resolved()
    idx = graph.facts_from(candidate)
    if len(exclude_edge_ids):
        keep = ~np.isin(graph.edge_ids[idx], list(exclude_edge_ids))
        idx = idx[keep]
    to_subject = graph.objects[idx] == subject
    direct = idx[to_subject]
    other = idx[~to_subject]
    walks = list(walks) if walks else []

    rels, closest = [], []
    for part_idx in (direct, other):
        r, c = _closest_starts(
            graph.relations[part_idx], graph.resolved_starts[part_idx], query_start
        )
        rels.append(r)
        closest.append(c)
    walk_facts = sorted({f for w in walks for f in w})
    if walk_facts:
        wf = np.asarray(walk_facts, dtype=np.int64)
        r, c = _closest_starts(graph.relations[wf], graph.resolved_starts[wf], query_start)
    else:
        r, c = np.empty(0, dtype=np.int64), {}
    rels.append(r)
    closest.append(c)

    return EvidenceSets(
        direct=direct,
        other=other,
        walks=walks,
        rels=tuple(rels),
        closest_start=tuple(closest),
    )


@dataclass
class FeatureTables:
    """Numeric probability tables for one candidate, ready to score.

    Everything that depends only on fitted distributions is precomputed
    here; the learnable weights enter later, so phase-2 training can reuse
    these tables across steps.
    """

    query_relation: int
    rec_x: np.ndarray  # (2,) 0/1
    rec_h: np.ndarray  # (2,)
    rels: tuple  # 3 int arrays
    order_h: tuple  # 3 float arrays aligned with rels
    pair_h: tuple  # 3 float arrays


def build_tables(
    evidence: EvidenceSets,
    params: DistributionParams,
    query_relation: int,
    query_start: float,
) -> FeatureTables:
    r = query_relation
    rec_x = np.zeros(2)
    rec_h = np.zeros(2)
    for k in range(2):
        x = 1.0 if r in evidence.closest_start[k] else 0.0
        p = params.rec_p[k, r]
        rec_x[k] = x
        rec_h[k] = p if x else 1.0 - p

    order_h, pair_h = [], []
    for k in range(3):
        rels_k = evidence.rels[k]
        oh = np.empty(len(rels_k))
        ph = np.empty(len(rels_k))
        for i, rp in enumerate(rels_k):
            t = evidence.closest_start[k][int(rp)]
            p = params.order_p[k, r, rp]
            oh[i] = p if query_start < t else 1.0 - p
            ph[i] = params.gap_density(k, r, int(rp), abs(query_start - t))
        order_h.append(oh)
        pair_h.append(ph)
    return FeatureTables(
        query_relation=r,
        rec_x=rec_x,
        rec_h=rec_h,
        rels=tuple(evidence.rels),
        order_h=tuple(order_h),
        pair_h=tuple(pair_h),
    )


# ---------------------------------------------------------------------------
# fitting from training examples


def fit_distributions(
    graph: TemporalGraph,
    duration: DurationModel | None = None,
    walks_by_example: dict | None = None,
    example_indices=None,
) -> DistributionParams:
    """Fit all feature distributions in one pass over training positives.

    Every stored fact (inverses included) acts as a positive example
    ``(subject, relation, ?)`` answered by its object; the candidate-side
    evidence excludes the example's own edge.  ``walks_by_example`` maps a
    fact index to the discovery walks between its endpoints and feeds the
    walk part; pairs never observed in walks keep the part-2 statistics as
    a stand-in so walk evidence still scores at query time.
    """
    graph._require_resolved()
    if duration is None:
        duration = fit_duration_model(graph)
    R = graph.num_relations
    params = DistributionParams.empty(R, duration)

    rec_sum = np.zeros((2, R))
    rec_n = np.zeros((2, R), dtype=np.int64)
    order_sum = np.zeros((3, R, R))
    order_n = np.zeros((3, R, R), dtype=np.int64)
    gap_n = np.zeros((3, R, R), dtype=np.int64)
    gap_sum = np.zeros((3, R, R))
    gap_sq = np.zeros((3, R, R))

    if example_indices is None:
        example_indices = range(graph.num_facts)
    for f in example_indices:
        r = int(graph.relations[f])
        subject = int(graph.subjects[f])
        candidate = int(graph.objects[f])
        t_s = float(graph.resolved_starts[f])
        walks = (walks_by_example or {}).get(int(f))
        ev = collect_evidence(
            graph,
            subject,
            candidate,
            t_s,
            walks=walks,
            exclude_edge_ids={int(graph.edge_ids[f])},
        )
        for k in range(2):
            rec_sum[k, r] += 1.0 if r in ev.closest_start[k] else 0.0
            rec_n[k, r] += 1
        parts = range(3) if walks is not None else range(2)
        for k in parts:
            for rp, t in ev.closest_start[k].items():
                order_sum[k, r, rp] += 1.0 if t_s < t else 0.0
                order_n[k, r, rp] += 1
                gap = abs(t_s - t)
                gap_n[k, r, rp] += 1
                gap_sum[k, r, rp] += gap
                gap_sq[k, r, rp] += gap * gap

    seen = rec_n > 0
    params.rec_p[seen] = rec_sum[seen] / rec_n[seen]
    params.rec_n = rec_n

    enough = order_n >= 2
    params.order_p[enough] = order_sum[enough] / order_n[enough]
    params.order_n = order_n

    for k, r, rp in zip(*np.nonzero(gap_n >= 2)):
        kind, mu, sigma, lam = _gap_fit_from_stats(
            gap_n[k, r, rp], gap_sum[k, r, rp], gap_sq[k, r, rp]
        )
        params.pair_kind[k, r, rp] = kind
        params.pair_mu[k, r, rp] = mu
        params.pair_sigma[k, r, rp] = sigma
        params.pair_lambda[k, r, rp] = lam
    params.pair_n = gap_n

    if walks_by_example is not None:
        # walk-part pairs never seen during discovery fall back to part-2 fits
        unseen = params.pair_n[2] < 2
        donor = params.pair_n[1] >= 2
        take = unseen & donor
        params.pair_kind[2][take] = params.pair_kind[1][take]
        params.pair_mu[2][take] = params.pair_mu[1][take]
        params.pair_sigma[2][take] = params.pair_sigma[1][take]
        params.pair_lambda[2][take] = params.pair_lambda[1][take]
        unseen_o = params.order_n[2] < 2
        donor_o = params.order_n[1] >= 2
        take_o = unseen_o & donor_o
        params.order_p[2][take_o] = params.order_p[1][take_o]
    else:
        # no walk evidence collected: mirror part 2 wholesale
        params.order_p[2] = params.order_p[1]
        params.pair_kind[2] = params.pair_kind[1]
        params.pair_mu[2] = params.pair_mu[1]
        params.pair_sigma[2] = params.pair_sigma[1]
        params.pair_lambda[2] = params.pair_lambda[1]

    return params


# ---------------------------------------------------------------------------
# learnable weights and scoring


class FeatureWeights:
    """Learnable integration weights for the feature model.

    Per-part simplex weights are kept as softmax logits (``mix_*``) so each
    part's weights always sum to one; the part and top-level combination
    weights live as raw values mapped through softplus, keeping them
    non-negative.
    """

    def __init__(self, num_relations: int, store: ParamStore | None = None):
        self.num_relations = int(num_relations)
        R = self.num_relations
        if store is None:
            tensors = {
                "rec_w_1": np.ones(R),
                "rec_b_1": np.zeros(R),
                "rec_w_2": np.ones(R),
                "rec_b_2": np.zeros(R),
                "mix_1": np.zeros(3),
                "mix_2": np.zeros(3),
                "mix_3": np.zeros(2),
                "part_raw": np.zeros(3),
                "top_raw": np.zeros(2),
            }
            for k in (1, 2, 3):
                tensors[f"order_w_{k}"] = np.zeros((R, R))
                tensors[f"order_b_{k}"] = np.zeros((R, R))
                tensors[f"pair_w_{k}"] = np.zeros((R, R))
                tensors[f"pair_b_{k}"] = np.zeros((R, R))
            store = ParamStore(tensors)
        self.store = store

    def copy(self):
        return FeatureWeights(self.num_relations, self.store.copy())

    # evaluation-path views -------------------------------------------------
    def mix(self, part: int) -> np.ndarray:
        logits = self.store.tensors[f"mix_{part + 1}"]
        e = np.exp(logits - logits.max())
        return e / e.sum()

    def part_weights(self) -> np.ndarray:
        return np.logaddexp(0.0, self.store.tensors["part_raw"])

    def top_weights(self) -> np.ndarray:
        return np.logaddexp(0.0, self.store.tensors["top_raw"])

    def save(self, path):
        arrays = dict(self.store.tensors)
        arrays["feature_meta_json"] = np.frombuffer(
            json.dumps({"num_relations": self.num_relations}).encode("utf-8"),
            dtype=np.uint8,
        )
        np.savez_compressed(path, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            meta = json.loads(bytes(data["feature_meta_json"]).decode("utf-8"))
            tensors = {k: data[k] for k in data.files if k != "feature_meta_json"}
        return cls(meta["num_relations"], ParamStore(tensors))


def integrate_scores(h_values, w_row, b_row, relation_set) -> float:
    """Softmax-weighted affine blend of probabilities over a relation set.

    Returns ``sum_r' exp(w[r']) (h[r'] + b[r']) / sum_r'' exp(w[r''])``;
    an empty relation set scores a neutral 0.
    """
    rels = np.asarray(relation_set, dtype=np.int64)
    if rels.size == 0:
        return 0.0
    w = w_row[rels]
    e = np.exp(w - w.max())
    weights = e / e.sum()
    return float(weights @ (np.asarray(h_values, dtype=np.float64) + b_row[rels]))


def recurrence_score(weights: FeatureWeights, tables: FeatureTables, part: int) -> float:
    """Affine score of the recurrence probability (parts 0 and 1 only)."""
    if part not in (0, 1):
        raise ContractViolation("recurrence evidence exists only in parts 0 and 1")
    r = tables.query_relation
    t = weights.store.tensors
    return float(t[f"rec_w_{part + 1}"][r] * tables.rec_h[part] + t[f"rec_b_{part + 1}"][r])


def order_score(weights: FeatureWeights, tables: FeatureTables, part: int) -> float:
    r = tables.query_relation
    t = weights.store.tensors
    return integrate_scores(
        tables.order_h[part],
        t[f"order_w_{part + 1}"][r],
        t[f"order_b_{part + 1}"][r],
        tables.rels[part],
    )


def gap_score(weights: FeatureWeights, tables: FeatureTables, part: int) -> float:
    r = tables.query_relation
    t = weights.store.tensors
    return integrate_scores(
        tables.pair_h[part],
        t[f"pair_w_{part + 1}"][r],
        t[f"pair_b_{part + 1}"][r],
        tables.rels[part],
    )


def part_score(weights: FeatureWeights, tables: FeatureTables, part: int) -> float:
    mix = weights.mix(part)
    if part < 2:
        comps = (
            recurrence_score(weights, tables, part),
            order_score(weights, tables, part),
            gap_score(weights, tables, part),
        )
    else:
        comps = (order_score(weights, tables, 2), gap_score(weights, tables, 2))
    return float(mix @ np.asarray(comps))


def feature_score(weights: FeatureWeights, tables: FeatureTables) -> float:
    """Combined temporal-feature score of one candidate."""
    gammas = weights.part_weights()
    return float(sum(gammas[k] * part_score(weights, tables, k) for k in range(3)))


# -- tape versions for phase-2 training -------------------------------------


def _integrate_node(h_values, w_row: Var, b_row: Var) -> Var:
    weights = ad.softmax(w_row)
    return ad.vsum(weights * (Var(h_values) + b_row))


def feature_score_node(leaves: dict, tables: FeatureTables) -> Var:
    """Differentiable feature score built on shared weight leaves."""
    r = tables.query_relation
    parts = []
    for k in range(3):
        rels = tables.rels[k]
        comps = []
        if k < 2:
            rec = leaves[f"rec_w_{k + 1}"][r] * tables.rec_h[k] + leaves[f"rec_b_{k + 1}"][r]
            comps.append(rec)
        if len(rels):
            comps.append(
                _integrate_node(
                    tables.order_h[k], leaves[f"order_w_{k + 1}"][r, rels], leaves[f"order_b_{k + 1}"][r, rels]
                )
            )
            comps.append(
                _integrate_node(
                    tables.pair_h[k], leaves[f"pair_w_{k + 1}"][r, rels], leaves[f"pair_b_{k + 1}"][r, rels]
                )
            )
        else:
            comps.extend([Var(0.0), Var(0.0)])
        mix = ad.softmax(leaves[f"mix_{k + 1}"])
        parts.append(ad.vsum(mix * ad.stack(comps)))
    gammas = ad.softplus(leaves["part_raw"])
    return ad.vsum(gammas * ad.stack(parts))
