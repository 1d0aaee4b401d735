"""Recurrent attention system producing shared rule-confidence factors.

For one target predicate the model emits, per rule length l: an attention
vector over predicates and one over TR classes at every body step, an
attention vector over TR classes for every pair of body steps, and one
attention vector over rule lengths.  A rule's confidence is the product of
the entries its template selects, so rules sharing constraints share
confidence mass instead of being estimated independently.

States are driven by a small recurrent cell whose input is the target
predicate's embedding for that rule length; pairwise vectors project the
concatenated states of the two steps involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Var
from .errors import ContractViolation
from .walks import RuleTemplate, pair_keys

NUM_TR = 3

CELLS = ("gated", "tanh")


class AttentionParams:
    """All learnable tensors of the attention system.

    Tensors live in a :class:`ParamStore` keyed by name: per-length
    predicate embeddings ``embed_0 .. embed_L`` (index 0 feeds the length
    attention), the recurrent cell, and the four projection heads
    (predicate, query TR, pairwise TR, length).
    """

    def __init__(self, num_relations, max_len, dim, cell="gated", store=None):
        if cell not in CELLS:
            raise ContractViolation(f"unknown cell {cell!r}; expected one of {CELLS}")
        self.num_relations = int(num_relations)
        self.max_len = int(max_len)
        self.dim = int(dim)
        self.cell = cell
        self.store = store if store is not None else self._zero_store()

    def _shapes(self):
        r, L, d = self.num_relations, self.max_len, self.dim
        shapes = {f"embed_{l}": (r, d) for l in range(L + 1)}
        shapes.update(
            gate_w=(d, 2 * d),
            gate_b=(d,),
            cell_wh=(d, d),
            cell_wx=(d, d),
            cell_b=(d,),
            pred_w=(r, d),
            pred_b=(r,),
            trq_w=(NUM_TR, d),
            trq_b=(NUM_TR,),
            trp_w=(NUM_TR, 2 * d),
            trp_b=(NUM_TR,),
            len_w=(L, d),
            len_b=(L,),
        )
        return shapes

    def _zero_store(self):
        return ParamStore({k: np.zeros(s) for k, s in self._shapes().items()})

    @classmethod
    def init(cls, num_relations, max_len, dim, cell="gated", seed=0, scale=0.1):
        params = cls(num_relations, max_len, dim, cell=cell)
        rng = np.random.default_rng(seed)
        for name, shape in params._shapes().items():
            if name.endswith("_b"):
                continue
            params.store.tensors[name] = scale * rng.standard_normal(shape)
        return params

    @classmethod
    def zeros(cls, num_relations, max_len, dim, cell="gated"):
        return cls(num_relations, max_len, dim, cell=cell)

    def copy(self):
        return AttentionParams(
            self.num_relations, self.max_len, self.dim, self.cell, self.store.copy()
        )

    def save(self, path):
        arrays = dict(self.store.tensors)
        meta = {
            "num_relations": self.num_relations,
            "max_len": self.max_len,
            "dim": self.dim,
            "cell": self.cell,
        }
        arrays["attention_meta_json"] = np.frombuffer(
            json.dumps(meta).encode("utf-8"), dtype=np.uint8
        )
        np.savez_compressed(path, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            meta = json.loads(bytes(data["attention_meta_json"]).decode("utf-8"))
            tensors = {
                k: data[k] for k in data.files if k != "attention_meta_json"
            }
        return cls(
            meta["num_relations"],
            meta["max_len"],
            meta["dim"],
            meta["cell"],
            ParamStore(tensors),
        )


@dataclass
class AttentionBundle:
    """Attention vectors for one target predicate, as tape nodes.

    Lists are 0-indexed by step (entry i is body step i+1).  Every vector
    is a softmax output, so it is non-negative and sums to one.
    """

    predicate: int
    length: Var  # (L,)
    pred: dict  # l -> [Var (R,)] per step
    tr_query: dict  # l -> [Var (3,)] per step
    tr_pairs: dict  # l -> {(j, k): Var (3,)}
    hidden: dict  # l -> [Var (d,)] per step

    @property
    def max_len(self):
        return self.length.value.shape[0]

    def all_vectors(self):
        yield self.length
        for l in self.pred:
            yield from self.pred[l]
            yield from self.tr_query[l]
            yield from self.tr_pairs[l].values()


def _cell_step(leaves, h, x, cell):
    pre = ad.matmul(leaves["cell_wh"], h) + ad.matmul(leaves["cell_wx"], x) + leaves["cell_b"]
    candidate = ad.tanh(pre)
    if cell == "tanh":
        return candidate
    z = ad.sigmoid(ad.matmul(leaves["gate_w"], ad.concat([h, x])) + leaves["gate_b"])
    return (1.0 - z) * h + z * candidate


def forward_attention(params: AttentionParams, predicate: int, leaves=None) -> AttentionBundle:
    """Run the recurrent system for one target predicate.

    ``leaves`` may supply shared tape leaves (one Var per tensor) so that
    several forward passes in a batch accumulate into the same gradients;
    otherwise fresh leaves are created, which is the evaluation mode.
    """
    if not 0 <= predicate < params.num_relations:
        raise ContractViolation(f"predicate {predicate} out of vocabulary")
    if leaves is None:
        leaves = params.store.leaves()
    L, d = params.max_len, params.dim

    x_len = leaves["embed_0"][predicate]
    length = ad.softmax(ad.matmul(leaves["len_w"], x_len) + leaves["len_b"])

    pred, tr_query, tr_pairs, hidden = {}, {}, {}, {}
    for l in range(1, L + 1):
        x = leaves[f"embed_{l}"][predicate]
        h = Var(np.zeros(d))
        states = []
        for _ in range(l):
            h = _cell_step(leaves, h, x, params.cell)
            states.append(h)
        hidden[l] = states
        pred[l] = [
            ad.softmax(ad.matmul(leaves["pred_w"], s) + leaves["pred_b"]) for s in states
        ]
        tr_query[l] = [
            ad.softmax(ad.matmul(leaves["trq_w"], s) + leaves["trq_b"]) for s in states
        ]
        pairs = {}
        for j, k in pair_keys(l):
            joint = ad.concat([states[j - 1], states[k - 1]])
            pairs[(j, k)] = ad.softmax(ad.matmul(leaves["trp_w"], joint) + leaves["trp_b"])
        tr_pairs[l] = pairs

    return AttentionBundle(
        predicate=predicate,
        length=length,
        pred=pred,
        tr_query=tr_query,
        tr_pairs=tr_pairs,
        hidden=hidden,
    )


def rule_score(bundle: AttentionBundle, rule: RuleTemplate) -> Var:
    """Confidence of one rule: the product of its selected attention entries."""
    l = rule.length
    if l > bundle.max_len:
        raise ContractViolation(
            f"rule length {l} exceeds configured maximum {bundle.max_len}"
        )
    factors = [bundle.length[l - 1]]
    for i, p in enumerate(rule.predicates):
        factors.append(bundle.pred[l][i][p])
    for i, t in enumerate(rule.tr_query):
        factors.append(bundle.tr_query[l][i][t])
    for (j, k), t in zip(pair_keys(l), rule.tr_pairs):
        factors.append(bundle.tr_pairs[l][(j, k)][t])
    return ad.prod(ad.stack(factors), axis=0)


def score_rules(bundle: AttentionBundle, rules) -> Var:
    """Score a list of rules at once, grouped internally by length."""
    rules = list(rules)
    if not rules:
        return Var(np.zeros(0))
    by_len: dict[int, list[int]] = {}
    for i, r in enumerate(rules):
        if r.length > bundle.max_len:
            raise ContractViolation(
                f"rule length {r.length} exceeds configured maximum {bundle.max_len}"
            )
        by_len.setdefault(r.length, []).append(i)

    chunks = []
    positions = []
    for l in sorted(by_len):
        idx = by_len[l]
        group = [rules[i] for i in idx]
        m = len(group)
        cols = [ad.stack([bundle.length[l - 1]] * m)]
        pred_idx = np.array([r.predicates for r in group], dtype=np.intp)
        trq_idx = np.array([r.tr_query for r in group], dtype=np.intp)
        for i in range(l):
            cols.append(bundle.pred[l][i][pred_idx[:, i]])
            cols.append(bundle.tr_query[l][i][trq_idx[:, i]])
        keys = pair_keys(l)
        if keys:
            pair_idx = np.array([r.tr_pairs for r in group], dtype=np.intp)
            for c, jk in enumerate(keys):
                cols.append(bundle.tr_pairs[l][jk][pair_idx[:, c]])
        scores_l = ad.prod(ad.stack(cols, axis=1), axis=1)
        chunks.append(scores_l)
        positions.extend(idx)

    grouped = ad.concat(chunks) if len(chunks) > 1 else chunks[0]
    inverse = np.empty(len(rules), dtype=np.intp)
    inverse[np.array(positions, dtype=np.intp)] = np.arange(len(rules))
    return grouped[inverse]
