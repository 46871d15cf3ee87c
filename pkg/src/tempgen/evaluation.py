"""Entity and relation scoring with optimal alignment, plus a paired
bootstrap significance test.

Entity-level scoring (CEAF style) aligns predicted entities with gold
entities through a maximum-score injective assignment; a predicted
entity is correct iff its mention set is a subset of its aligned gold
entity's mentions. Relation scoring first aligns predicted entities to
gold entities by mention overlap, then requires the mapped relation to
match a gold relation in both entities and types. Mentions compare by
normalized surface (case-insensitive, whitespace collapsed): generated
text carries no reliable spans.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .codec import normalize_surface
from .corpus import Entity


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Optimal assignment

@dataclass(frozen=True)
class Assignment:
    """Injective pairing of row indices to column indices, maximizing the
    summed score. ``total`` sums the matched entries in row order."""
    pairs: tuple[tuple[int, int], ...]
    total: float


def _lsa_pairs(scores: np.ndarray) -> list[tuple[int, int]]:
    rows, cols = linear_sum_assignment(scores, maximize=True)
    return list(zip(rows.tolist(), cols.tolist()))


def _lsa_total(scores: np.ndarray) -> float:
    if scores.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(scores, maximize=True)
    return float(scores[rows, cols].sum())


def kuhn_munkres(scores: Sequence[Sequence[float]] | np.ndarray) -> Assignment:
    """Maximum-total-score assignment of min(m, n) pairs.

    Among equally scoring optima, returns the one whose (row, column)
    pair list is lexicographically smallest: rows are fixed in ascending
    order to the smallest column that still permits an optimal
    completion. Near-ties within 1e-9 (relative) count as optimal.
    """
    matrix = np.asarray(scores, dtype=np.float64)
    if matrix.ndim != 2:
        raise EvalError(f"score matrix must be 2-d, got shape {matrix.shape}")
    if matrix.size and not np.isfinite(matrix).all():
        raise EvalError("score matrix contains non-finite entries")
    m, n = matrix.shape
    if m == 0 or n == 0:
        return Assignment(pairs=(), total=0.0)

    best = _lsa_total(matrix)
    tol = 1e-9 * max(1.0, abs(best))

    pairs: list[tuple[int, int]] = []
    committed = 0.0
    free_rows = list(range(m))
    free_cols = list(range(n))
    while free_rows and free_cols:
        row = free_rows[0]
        chosen = None
        for col in free_cols:
            sub = matrix[np.ix_([r for r in free_rows if r != row],
                                [c for c in free_cols if c != col])]
            if committed + matrix[row, col] + _lsa_total(sub) >= best - tol:
                chosen = col
                break
        if chosen is None:
            # Row must stay unmatched in every optimum (only when m > n).
            free_rows.remove(row)
            continue
        pairs.append((row, chosen))
        committed += matrix[row, chosen]
        free_rows.remove(row)
        free_cols.remove(chosen)

    total = float(sum(matrix[r, c] for r, c in pairs))
    return Assignment(pairs=tuple(pairs), total=total)


# ---------------------------------------------------------------------------
# Precision / recall / F1

@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, correct: int, n_pred: int, n_gold: int) -> "PRF":
        """Standard convention: an empty prediction against an empty gold
        is perfect; otherwise an empty side scores zero."""
        if n_pred == 0 and n_gold == 0:
            return cls(1.0, 1.0, 1.0)
        p = correct / n_pred if n_pred else 0.0
        r = correct / n_gold if n_gold else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f1)


@dataclass(frozen=True)
class RoleCounts:
    correct: int = 0
    n_pred: int = 0
    n_gold: int = 0

    def __add__(self, other: "RoleCounts") -> "RoleCounts":
        return RoleCounts(self.correct + other.correct,
                          self.n_pred + other.n_pred,
                          self.n_gold + other.n_gold)

    @property
    def prf(self) -> PRF:
        return PRF.from_counts(self.correct, self.n_pred, self.n_gold)


def _mention_strings(entity) -> frozenset[str]:
    """Normalized mention surfaces of an entity. Accepts corpus entities
    or plain iterables of strings, which keeps small test cases terse."""
    if isinstance(entity, Entity):
        surfaces = (m.surface for m in entity.mentions)
    elif isinstance(entity, str):
        surfaces = (entity,)
    else:
        surfaces = entity
    out = frozenset(normalize_surface(s) for s in surfaces)
    return frozenset(s for s in out if s)


# ---------------------------------------------------------------------------
# Entity-level scoring

def ceaf_ree_counts(pred: Mapping[str, Sequence], gold: Mapping[str, Sequence]
                    ) -> dict[str, RoleCounts]:
    """Per-role correct/predicted/gold counts for one document.

    For each role, predicted entities align with gold entities through
    kuhn_munkres over the 0/1 subset-compatibility matrix; a matched pair
    counts as correct when compatible.
    """
    counts: dict[str, RoleCounts] = {}
    for role in sorted(set(pred) | set(gold)):
        pred_sets = [_mention_strings(e) for e in pred.get(role, ())]
        gold_sets = [_mention_strings(e) for e in gold.get(role, ())]
        if pred_sets and gold_sets:
            compat = np.array(
                [[1.0 if p and p <= g else 0.0 for g in gold_sets]
                 for p in pred_sets])
            correct = int(round(kuhn_munkres(compat).total))
        else:
            correct = 0
        counts[role] = RoleCounts(correct=correct, n_pred=len(pred_sets),
                                  n_gold=len(gold_sets))
    return counts


@dataclass(frozen=True)
class EntityScore:
    per_role: dict[str, RoleCounts]
    micro: PRF

    @property
    def per_role_prf(self) -> dict[str, PRF]:
        return {role: c.prf for role, c in self.per_role.items()}


def ceaf_ree(pred: Mapping[str, Sequence], gold: Mapping[str, Sequence]
             ) -> EntityScore:
    """Score one document: per-role PRF plus the micro average pooling
    correct/predicted/gold counts across roles."""
    counts = ceaf_ree_counts(pred, gold)
    pooled = sum(counts.values(), RoleCounts())
    return EntityScore(per_role=counts, micro=pooled.prf)


def pool_entity_counts(per_doc: Iterable[dict[str, RoleCounts]]) -> EntityScore:
    """Aggregate per-document role counts into corpus-level scores."""
    merged: dict[str, RoleCounts] = {}
    for counts in per_doc:
        for role, c in counts.items():
            merged[role] = merged.get(role, RoleCounts()) + c
    pooled = sum(merged.values(), RoleCounts())
    return EntityScore(per_role=merged, micro=pooled.prf)


# ---------------------------------------------------------------------------
# Relation scoring

Relation = Sequence[tuple[int, str]]  # (entity index, entity type) pairs


def align_entities(pred_entities: Sequence, gold_entities: Sequence
                   ) -> dict[int, int]:
    """Injective map from predicted to gold entity indices maximizing the
    total count of shared normalized mentions; ties resolve toward the
    earliest gold index. Pairs sharing no mention are left unaligned.
    """
    if not pred_entities or not gold_entities:
        return {}
    pred_sets = [_mention_strings(e) for e in pred_entities]
    gold_sets = [_mention_strings(e) for e in gold_entities]
    overlap = np.array([[float(len(p & g)) for g in gold_sets]
                        for p in pred_sets])
    assignment = kuhn_munkres(overlap)
    return {p: g for p, g in assignment.pairs if overlap[p, g] > 0}


def _canonical_relation(relation: Relation) -> frozenset[tuple[int, str]]:
    return frozenset((int(i), str(t)) for i, t in relation)


def relation_counts(pred_relations: Sequence[Relation],
                    gold_relations: Sequence[Relation],
                    pred_entities: Sequence, gold_entities: Sequence,
                    arity: int | None = None) -> RoleCounts:
    """Correct/predicted/gold counts for one document's relations.

    Predicted relations are mapped through the entity alignment; a
    relation containing an unaligned entity cannot be correct. Duplicates
    on either side are removed before counting. A gold relation whose
    arity disagrees with ``arity`` is an error; a predicted one stays in
    the denominator but can never match.
    """
    gold_set = set()
    for relation in gold_relations:
        rel = _canonical_relation(relation)
        if arity is not None and len(rel) != arity:
            raise EvalError(
                f"gold relation has arity {len(rel)}, expected {arity}")
        gold_set.add(rel)
    pred_set = {_canonical_relation(r) for r in pred_relations}
    mapping = align_entities(pred_entities, gold_entities)

    correct = 0
    for relation in pred_set:
        if arity is not None and len(relation) != arity:
            continue
        if any(i not in mapping for i, _ in relation):
            continue
        mapped = frozenset((mapping[i], t) for i, t in relation)
        if mapped in gold_set:
            correct += 1
    return RoleCounts(correct=correct, n_pred=len(pred_set),
                      n_gold=len(gold_set))


def relation_f1(pred_relations: Sequence[Relation],
                gold_relations: Sequence[Relation],
                pred_entities: Sequence, gold_entities: Sequence,
                arity: int | None = None) -> PRF:
    return relation_counts(pred_relations, gold_relations, pred_entities,
                           gold_entities, arity).prf


# ---------------------------------------------------------------------------
# Paired bootstrap

@dataclass(frozen=True)
class SignificanceResult:
    delta: float        # observed mean(a) - mean(b)
    p_value: float
    resamples: int
    seed: int


def paired_bootstrap(scores_a: Sequence[float], scores_b: Sequence[float],
                     resamples: int = 10000, seed: int = 0
                     ) -> SignificanceResult:
    """Resample paired per-document scores with replacement; the p-value
    is the fraction of resamples whose mean difference is <= 0. With a
    positive observed delta this estimates how often chance alone erases
    system A's advantage. Deterministic under the seed."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise EvalError(
            f"score lists must be equal-length vectors, got {a.shape} "
            f"and {b.shape}")
    if a.size == 0:
        raise EvalError("cannot bootstrap empty score lists")
    if resamples < 1:
        raise EvalError("resamples must be >= 1")

    diff = a - b
    rng = np.random.default_rng(seed)
    n = a.size
    hits = 0
    chunk = 1000
    done = 0
    while done < resamples:
        take = min(chunk, resamples - done)
        idx = rng.integers(0, n, size=(take, n))
        hits += int((diff[idx].mean(axis=1) <= 0.0).sum())
        done += take
    return SignificanceResult(delta=float(diff.mean()),
                              p_value=hits / resamples,
                              resamples=resamples, seed=seed)
