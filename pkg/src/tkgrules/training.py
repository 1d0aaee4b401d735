"""Two-phase optimization: attention parameters, then feature weights.

Phase 1 learns the attention system by maximizing the aggregate rule score
of each positive example's true answer against the candidates its rules
reach (cross-entropy over the candidate set).  Rule application does not
depend on the parameters, so each example is prepared once as an
arriving-rate matrix and reused every epoch.

Phase 2 freezes attention, fits the feature distributions elsewhere, and
trains only the integration weights of the feature model on the combined
score, again with a candidate cross-entropy (in softmax form, since feature
scores are affine and may be negative).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, SGD, Var
from .attention import AttentionParams, forward_attention, score_rules
from .errors import ContractViolation
from .features import FeatureTables, FeatureWeights, feature_score_node
from .ranking import Query, apply_rules
from .walks import RuleSet

EPSILON = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-2
    lr_decay: float = 0.95
    batch_size: int = 32
    optimizer: str = "adam"
    seed: int = 0

    def make_optimizer(self):
        if self.optimizer == "adam":
            return Adam(lr=self.lr)
        if self.optimizer == "sgd":
            return SGD(lr=self.lr)
        raise ContractViolation(f"unknown optimizer {self.optimizer!r}")


# ---------------------------------------------------------------------------
# phase 1


@dataclass
class PreparedExample:
    """One positive example reduced to its arriving-rate matrix.

    ``rates[c, j]`` is the fraction of rule j's successful walks that end
    at candidate row c; the truth row is always present (possibly all
    zero when no rule reaches the answer).  ``fact_index`` points back at
    the stored fact this example came from.
    """

    predicate: int
    candidates: np.ndarray
    rates: np.ndarray
    truth_row: int
    fact_index: int = -1
    walks_by_candidate: dict = field(default_factory=dict)


def prepare_examples(
    graph,
    example_fact_indices,
    rules: RuleSet,
    max_walks_per_rule=None,
    exclude_own_edge=True,
    keep_groundings=0,
):
    """Apply each predicate's rules to its positive examples once.

    Examples none of whose rules reach any entity are skipped (there is
    nothing to rank the answer against); the skip count is returned.
    ``keep_groundings`` retains up to that many walks per candidate for
    later feature-evidence collection.
    """
    prepared = []
    skipped = 0
    for f in example_fact_indices:
        f = int(f)
        predicate = int(graph.relations[f])
        subject = int(graph.subjects[f])
        truth = int(graph.objects[f])
        interval = (float(graph.resolved_starts[f]), float(graph.resolved_ends[f]))
        rule_list = rules.rules_for(predicate)
        if not rule_list:
            skipped += 1
            continue
        exclude = {int(graph.edge_ids[f])} if exclude_own_edge else set()
        apps = apply_rules(
            graph,
            Query(subject, predicate, interval),
            rule_list,
            cap=max_walks_per_rule,
            exclude_edge_ids=exclude,
            keep_groundings=keep_groundings,
        )
        if not apps:
            skipped += 1
            continue
        cand_ids = sorted({c for app in apps for c in app.counts} | {truth})
        row = {c: i for i, c in enumerate(cand_ids)}
        rates = np.zeros((len(cand_ids), len(rule_list)))
        walks_by_candidate: dict[int, list] = {}
        for app in apps:
            for c, n in app.counts.items():
                rates[row[c], app.rule_index] = n / app.total
            for c, ws in app.groundings.items():
                walks_by_candidate.setdefault(c, []).extend(ws)
        prepared.append(
            PreparedExample(
                predicate=predicate,
                candidates=np.asarray(cand_ids, dtype=np.int64),
                rates=rates,
                truth_row=row[truth],
                fact_index=f,
                walks_by_candidate=walks_by_candidate,
            )
        )
    return prepared, skipped


def candidate_nll(scores_by_entity: dict, correct, eps: float = EPSILON) -> float:
    """Cross-entropy of the correct candidate under smoothed score shares."""
    if not scores_by_entity:
        raise ContractViolation("empty candidate set")
    if correct not in scores_by_entity:
        raise ContractViolation("correct candidate missing from the scored set")
    total = sum(s + eps for s in scores_by_entity.values())
    return float(-np.log((scores_by_entity[correct] + eps) / total))


def _example_loss(scores: Var, example: PreparedExample, eps: float = EPSILON) -> Var:
    phi = ad.matmul(Var(example.rates), scores)
    numer = phi[example.truth_row] + eps
    denom = ad.vsum(phi) + len(example.candidates) * eps
    return ad.log(denom) - ad.log(numer)


def _batch_loss(params: AttentionParams, batch, rules: RuleSet, leaves=None) -> Var:
    if leaves is None:
        leaves = params.store.leaves()
    bundles = {}
    scores = {}
    losses = []
    for ex in batch:
        if ex.predicate not in bundles:
            bundles[ex.predicate] = forward_attention(params, ex.predicate, leaves)
            scores[ex.predicate] = score_rules(
                bundles[ex.predicate], rules.rules_for(ex.predicate)
            )
        losses.append(_example_loss(scores[ex.predicate], ex))
    return ad.mean(ad.stack(losses))


@dataclass
class TrainResult:
    params: object
    trace: list[float] = field(default_factory=list)
    skipped: int = 0


def train_phase1(
    params: AttentionParams,
    prepared,
    rules: RuleSet,
    config: TrainConfig,
    on_step=None,
) -> TrainResult:
    """Gradient-train the attention parameters on prepared examples.

    Deterministic under the config seed.  With no examples the parameters
    are returned untouched.  A non-finite loss aborts with a diagnostic.
    """
    result = TrainResult(params=params)
    if not prepared:
        return result
    rng = np.random.default_rng(config.seed)
    opt = config.make_optimizer()
    order = np.arange(len(prepared))
    for epoch in range(config.epochs):
        opt.lr = config.lr * (config.lr_decay**epoch)
        rng.shuffle(order)
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = [prepared[i] for i in order[lo : lo + config.batch_size]]
            leaves = params.store.leaves()
            loss = _batch_loss(params, batch, rules, leaves)
            ad.check_finite(loss.value, "phase-1 loss")
            ad.backward(loss)
            opt.step(params.store, leaves)
            total += float(loss.value) * len(batch)
            if on_step is not None:
                on_step(params, epoch, lo // config.batch_size)
        result.trace.append(total / len(order))
    return result


def gradient_check(
    params: AttentionParams, batch, rules: RuleSet, step: float = 1e-4
) -> float:
    """Max relative error of tape gradients against central differences.

    Every entry of every tensor is perturbed; the relative error guard
    floor keeps finite-difference noise on (near-)dead parameters from
    registering as disagreement.
    """
    leaves = params.store.leaves()
    loss = _batch_loss(params, batch, rules, leaves)
    ad.backward(loss)
    analytic = {
        name: (var.grad if var.grad is not None else np.zeros_like(var.value))
        for name, var in leaves.items()
    }

    worst = 0.0
    for name, tensor in params.store.tensors.items():
        flat = tensor.reshape(-1)
        got = analytic[name].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = float(_batch_loss(params, batch, rules).value)
            flat[i] = keep - step
            down = float(_batch_loss(params, batch, rules).value)
            flat[i] = keep
            fd = (up - down) / (2 * step)
            denom = max(abs(got[i]), abs(fd), 1e-6)
            worst = max(worst, abs(got[i] - fd) / denom)
    return worst


# ---------------------------------------------------------------------------
# phase 2


@dataclass
class PreparedFeatureExample:
    """Frozen logic scores plus feature tables for each candidate."""

    logic: np.ndarray  # (n_cand,) aggregate rule scores, fixed in phase 2
    tables: list  # FeatureTables per candidate
    truth_row: int


def _softmax_nll(scores: Var, truth_row: int) -> Var:
    shift = float(scores.value.max())
    lse = ad.log(ad.vsum(ad.exp(scores - shift))) + shift
    return lse - scores[truth_row]


def _feature_batch_loss(weights: FeatureWeights, batch, leaves=None) -> Var:
    if leaves is None:
        leaves = weights.store.leaves()
    top = ad.softplus(leaves["top_raw"])
    losses = []
    for ex in batch:
        feats = ad.stack([feature_score_node(leaves, t) for t in ex.tables])
        combined = top[0] * Var(ex.logic) + top[1] * feats
        losses.append(_softmax_nll(combined, ex.truth_row))
    return ad.mean(ad.stack(losses))


def train_phase2(
    weights: FeatureWeights,
    prepared,
    config: TrainConfig,
    on_step=None,
) -> TrainResult:
    """Train the feature-model weights with attention frozen.

    Simplex constraints hold by construction (softmax logits); part and
    top-level weights stay non-negative through softplus.
    """
    result = TrainResult(params=weights)
    if not prepared or config.epochs == 0:
        return result
    rng = np.random.default_rng(config.seed)
    opt = config.make_optimizer()
    order = np.arange(len(prepared))
    for epoch in range(config.epochs):
        opt.lr = config.lr * (config.lr_decay**epoch)
        rng.shuffle(order)
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = [prepared[i] for i in order[lo : lo + config.batch_size]]
            leaves = weights.store.leaves()
            loss = _feature_batch_loss(weights, batch, leaves)
            ad.check_finite(loss.value, "phase-2 loss")
            ad.backward(loss)
            opt.step(weights.store, leaves)
            total += float(loss.value) * len(batch)
            if on_step is not None:
                on_step(weights, epoch, lo // config.batch_size)
        result.trace.append(total / len(order))
    return result
