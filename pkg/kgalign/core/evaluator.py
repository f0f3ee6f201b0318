"""
Evaluator - ranking and threshold classification over trained parameters

Ranking: the true L2 triple of a seed is ranked against its corruption set
(or, optionally, every other stored L2 triple) by distance to the L1 triple.
Ties are broken pessimistically:

    rank = 1 + #{candidates c : dist(T1, c) <= dist(T1, T2)}

Threshold classification: a pair of atoms (any arities) is predicted aligned
iff dist < theta.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Union

import numpy as np

from kgalign.core import metrics
from kgalign.core.editdist import distance_dp, distance_general_arity, project_triple
from kgalign.core.exceptions import CatalogParseError, EvaluationError
from kgalign.core.logging import get_logger
from kgalign.core.params import ParamStore
from kgalign.db.kg_store import AlignmentSeed, KgCatalog, KgId, Triple, corruption_set, read_tsv_rows
from kgalign.models.schemas import RankingMetrics, ThresholdReport

logger = get_logger(__name__)

CandidateMode = Literal["corruptions", "all_triples"]


@dataclass(frozen=True)
class LabeledPair:
    left: Triple
    right: Triple
    label: bool


def _candidates(seed: AlignmentSeed, catalog: KgCatalog, mode: CandidateMode) -> List[Triple]:
    if mode == "all_triples":
        return [t for t in catalog.triples(KgId.L2) if t != seed.right]
    return corruption_set(seed.right, catalog)


def rank_true_triple(seed: AlignmentSeed, store: ParamStore, catalog: KgCatalog,
                     candidates: CandidateMode = "corruptions") -> int:
    """Pessimistic rank of the true L2 triple among its candidates (1 = best)."""
    x = project_triple(seed.left, store, catalog)
    eps = store.null_vec
    true_dist = distance_dp(x, project_triple(seed.right, store, catalog), eps).value
    worse_or_tied = 0
    for cand in _candidates(seed, catalog, candidates):
        if distance_dp(x, project_triple(cand, store, catalog), eps).value <= true_dist:
            worse_or_tied += 1
    return 1 + worse_or_tied


def metrics_from_ranks(ranks: Sequence[int]) -> RankingMetrics:
    if not ranks:
        raise EvaluationError("Cannot compute ranking metrics without queries")
    r = np.asarray(ranks, dtype=np.float64)
    return RankingMetrics(
        mrr=float(np.mean(1.0 / r)),
        hits_at_1=float(np.mean(r <= 1)),
        hits_at_10=float(np.mean(r <= 10)),
        mean_rank=float(np.mean(r)),
        n_queries=len(ranks),
    )


def evaluate(seeds: Sequence[AlignmentSeed], store: ParamStore, catalog: KgCatalog,
             candidates: CandidateMode = "corruptions", workers: int = 1) -> RankingMetrics:
    """
    MRR, Hits@1, Hits@10 and mean rank over `seeds`.

    With workers > 1 queries run on a thread pool against a private snapshot
    of the store; result order matches `seeds`.
    """
    if not seeds:
        raise EvaluationError("Evaluation needs at least one test seed")

    snapshot = store.copy()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ranks = list(pool.map(lambda s: rank_true_triple(s, snapshot, catalog, candidates), seeds))
    else:
        ranks = [rank_true_triple(s, snapshot, catalog, candidates) for s in seeds]

    result = metrics_from_ranks(ranks)
    metrics.record_eval_queries(len(ranks))
    logger.info("Evaluation completed", candidates=candidates, **result.model_dump())
    return result


# ---------------------------------------------------------------------------
# Threshold classification
# ---------------------------------------------------------------------------

def load_labeled_pairs(path: Union[str, Path], catalog: KgCatalog) -> List[LabeledPair]:
    """Read `atomL<TAB>atomR<TAB>label` lines; atomL resolves in L1, atomR in L2."""
    pairs = []
    for line_no, raw, cols in read_tsv_rows(path):
        if raw.startswith("#"):
            continue
        if len(cols) != 3:
            raise CatalogParseError(path, line_no, f"expected 3 columns, got {len(cols)}")
        if cols[2] not in ("0", "1"):
            raise CatalogParseError(path, line_no, f"label must be 0 or 1, got {cols[2]!r}")
        pairs.append(LabeledPair(
            catalog.resolve_atom(cols[0], KgId.L1),
            catalog.resolve_atom(cols[1], KgId.L2),
            cols[2] == "1",
        ))
    return pairs


def pair_distances(pairs: Sequence[LabeledPair], store: ParamStore, catalog: KgCatalog) -> np.ndarray:
    return np.array([distance_general_arity(p.left, p.right, store, catalog).value for p in pairs])


def _report(theta: float, distances: np.ndarray, labels: np.ndarray) -> ThresholdReport:
    predicted = distances < theta
    tp = int(np.sum(predicted & labels))
    fp = int(np.sum(predicted & ~labels))
    fn = int(np.sum(~predicted & labels))
    return ThresholdReport(
        theta=theta,
        accuracy=float(np.mean(predicted == labels)),
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        n_pairs=len(labels),
    )


def classify_at_threshold(pairs: Sequence[LabeledPair], theta: float, store: ParamStore,
                          catalog: KgCatalog) -> ThresholdReport:
    """Predict aligned iff dist < theta; precision/recall are 0 when undefined."""
    if not pairs:
        raise EvaluationError("Threshold classification needs at least one labeled pair")
    labels = np.array([p.label for p in pairs], dtype=bool)
    return _report(theta, pair_distances(pairs, store, catalog), labels)


def select_threshold(pairs: Sequence[LabeledPair], store: ParamStore, catalog: KgCatalog) -> ThresholdReport:
    """Accuracy-maximizing theta among midpoints between sorted distances (plus both ends)."""
    if not pairs:
        raise EvaluationError("Threshold selection needs at least one labeled pair")
    labels = np.array([p.label for p in pairs], dtype=bool)
    distances = pair_distances(pairs, store, catalog)
    ordered = np.unique(distances)
    thresholds = np.concatenate(([0.0], (ordered[:-1] + ordered[1:]) / 2.0, [ordered[-1] + 1.0]))

    best: Optional[ThresholdReport] = None
    for theta in thresholds:
        report = _report(float(theta), distances, labels)
        if best is None or report.accuracy > best.accuracy:
            best = report
    return best
