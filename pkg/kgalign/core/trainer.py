"""
Trainer - margin ranking over seed-aligned triple pairs

Objective per (seed, negative) pair:

    [gamma_a + dist(T1, T2) - dist(T1, T2')]_+

plus a soft penalty lambda_c * sum max(0, |v M|^2 - 1) over every projected
vector used in a minibatch. Gradients are computed by hand: reverse
accumulation through the edit lattice, then through the projections.

Updates are plain synchronous SGD by a single writer; entity/relation rows are
clamped into the unit ball after every step.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np

from kgalign.core import metrics
from kgalign.core.editdist import (
    CharSource,
    ProjectedString,
    delannoy,
    distance_dp,
    project_triple,
)
from kgalign.core.evaluator import evaluate
from kgalign.core.exceptions import (
    DegenerateCatalogError,
    DivergenceError,
    MissingLatticeError,
    NonFiniteParameterError,
)
from kgalign.core.logging import get_logger
from kgalign.core.params import (
    NORM_TOLERANCE,
    NULL,
    ParamKey,
    ParamStore,
    check_finite,
    clamp_to_unit_ball,
    init,
)
from kgalign.core.rng import STREAM_NEGATIVES, STREAM_SHUFFLE, substream
from kgalign.db.kg_store import AlignmentSeed, KgCatalog, Triple, corruption_set_size, sample_negative
from kgalign.models.schemas import EpochRecord, TrainConfig, TrainReport

logger = get_logger(__name__)

# squared-norm bound matching the clamp tolerance
_FEASIBLE_SQ_NORM = (1.0 + NORM_TOLERANCE) ** 2


class GradientBuffer:
    """Sparse gradient accumulator: only touched parameter blocks are stored."""

    def __init__(self):
        self._blocks: Dict[ParamKey, np.ndarray] = {}

    def add(self, key: ParamKey, grad: np.ndarray) -> None:
        existing = self._blocks.get(key)
        if existing is None:
            self._blocks[key] = np.array(grad, dtype=np.float64, copy=True)
        else:
            existing += grad

    def merge(self, other: "GradientBuffer") -> None:
        for key, grad in other.items():
            self.add(key, grad)

    def get(self, key: ParamKey) -> Optional[np.ndarray]:
        return self._blocks.get(key)

    def drop(self, tensor: str) -> None:
        for key in [k for k in self._blocks if k[0] == tensor]:
            del self._blocks[key]

    def keys(self) -> List[ParamKey]:
        return list(self._blocks)

    def items(self) -> Iterator[Tuple[ParamKey, np.ndarray]]:
        return iter(self._blocks.items())

    def is_zero(self) -> bool:
        return all(not np.any(g) for g in self._blocks.values())

    def check_finite(self) -> None:
        for (name, row), grad in self._blocks.items():
            if not np.all(np.isfinite(grad)):
                raise NonFiniteParameterError(f"gradient of {name}", row)

    def __contains__(self, key: ParamKey) -> bool:
        return key in self._blocks

    def __len__(self) -> int:
        return len(self._blocks)


@dataclass
class LatticeGradient:
    x: np.ndarray    # [m, k]
    y: np.ndarray    # [n, k]
    eps: np.ndarray  # [k]


@dataclass
class PairLoss:
    value: float
    grads: GradientBuffer
    dist_pos: float
    dist_neg: float
    sources: Set[CharSource] = field(default_factory=set)

    @property
    def active(self) -> bool:
        return self.value > 0


@dataclass
class PenaltyResult:
    value: float
    grads: GradientBuffer
    violations: int


@dataclass
class BatchResult:
    loss: float
    penalty: float
    grads: GradientBuffer
    active: int
    pairs: int
    violations: int


# ---------------------------------------------------------------------------
# Reverse mode through the lattice and the projections
# ---------------------------------------------------------------------------

def backward_through_lattice(lattice, upstream: float) -> LatticeGradient:
    """Gradients of upstream * distance w.r.t. every character of x, y and eps."""
    if lattice is None:
        raise MissingLatticeError("distance_dp was called without keep_lattice")

    m, n, D = lattice.m, lattice.n, lattice.cells
    grad_cells = np.zeros_like(D)
    grad_cells[m, n] = upstream / delannoy(m, n)
    g_sub2 = np.zeros_like(lattice.sub2)
    g_del2 = np.zeros_like(lattice.del2)
    g_ins2 = np.zeros_like(lattice.ins2)

    # reverse row-major order: every successor of (p, q) is already done
    for p in range(m, -1, -1):
        for q in range(n, -1, -1):
            g = grad_cells[p, q]
            if p > 0 and q > 0:
                grad_cells[p - 1, q - 1] += g * lattice.sub2[p - 1, q - 1]
                g_sub2[p - 1, q - 1] += g * D[p - 1, q - 1]
            if p > 0:
                grad_cells[p - 1, q] += g * lattice.del2[p - 1]
                g_del2[p - 1] += g * D[p - 1, q]
            if q > 0:
                grad_cells[p, q - 1] += g * lattice.ins2[q - 1]
                g_ins2[q - 1] += g * D[p, q - 1]

    g_sub = 2.0 * lattice.sub * g_sub2
    g_del = 2.0 * lattice.dele * g_del2
    g_ins = 2.0 * lattice.ins * g_ins2
    return LatticeGradient(
        x=g_sub.sum(axis=1) + g_del,
        y=-g_sub.sum(axis=0) - g_ins,
        eps=g_ins.sum(axis=0) - g_del.sum(axis=0),
    )


def backprop_projection(projected: ProjectedString, char_grads: np.ndarray,
                        store: ParamStore, grads: GradientBuffer) -> None:
    """Chain character gradients through c = v @ M onto v and M."""
    for src, g in zip(projected.provenance, char_grads):
        vec = store.block(src.vector)
        mat = store.block(src.matrix)
        grads.add(src.vector, mat @ g)
        grads.add(src.matrix, np.outer(vec, g))


def accumulate_distance_grads(x: ProjectedString, y: ProjectedString, lattice, store: ParamStore,
                              upstream: float, grads: GradientBuffer) -> None:
    """Add upstream * d dist(x, y) / d params into `grads`."""
    lg = backward_through_lattice(lattice, upstream)
    backprop_projection(x, lg.x, store, grads)
    backprop_projection(y, lg.y, store, grads)
    grads.add((NULL, 0), lg.eps)


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------

def hinge(gamma_a: float, dist_pos: float, dist_neg: float) -> float:
    margin = gamma_a + (dist_pos - dist_neg)
    # nan passes through so the trainer sees it
    return margin if margin > 0 or math.isnan(margin) else 0.0


def pair_loss(seed: AlignmentSeed, negative: Triple, store: ParamStore, catalog: KgCatalog,
              gamma_a: float) -> PairLoss:
    """
    Ranking hinge for one positive/negative pair with gradients.

    An inactive hinge returns an empty (all-zero) gradient buffer.
    """
    x = project_triple(seed.left, store, catalog)
    y_pos = project_triple(seed.right, store, catalog)
    y_neg = project_triple(negative, store, catalog)
    sources = set(x.provenance) | set(y_pos.provenance) | set(y_neg.provenance)

    pos = distance_dp(x, y_pos, store.null_vec, keep_lattice=True)
    neg = distance_dp(x, y_neg, store.null_vec, keep_lattice=True)
    value = hinge(gamma_a, pos.value, neg.value)

    grads = GradientBuffer()
    if value > 0:
        accumulate_distance_grads(x, y_pos, pos.lattice, store, 1.0, grads)
        accumulate_distance_grads(x, y_neg, neg.lattice, store, -1.0, grads)
    return PairLoss(value, grads, pos.value, neg.value, sources)


def composite_penalty(sources: Iterable[CharSource], store: ParamStore, lambda_c: float) -> PenaltyResult:
    """lambda_c * sum max(0, |v M|^2 - 1) over the distinct projected vectors in `sources`."""
    grads = GradientBuffer()
    if lambda_c == 0:
        return PenaltyResult(0.0, grads, 0)

    value = 0.0
    violations = 0
    for src in sorted(set(sources), key=lambda s: (s.vector, s.matrix)):
        vec = store.block(src.vector)
        mat = store.block(src.matrix)
        c = vec @ mat
        sq = float(c @ c)
        if sq <= _FEASIBLE_SQ_NORM:
            continue
        violations += 1
        value += lambda_c * (sq - 1.0)
        g = 2.0 * lambda_c * c
        grads.add(src.vector, mat @ g)
        grads.add(src.matrix, np.outer(vec, g))
    return PenaltyResult(value, grads, violations)


def batch_objective(pairs: Sequence[Tuple[AlignmentSeed, Triple]], store: ParamStore,
                    catalog: KgCatalog, gamma_a: float, lambda_c: float) -> BatchResult:
    """Summed ranking loss of a minibatch plus the composite penalty of every vector it used."""
    grads = GradientBuffer()
    loss = 0.0
    active = 0
    sources: Set[CharSource] = set()
    for seed, negative in pairs:
        pl = pair_loss(seed, negative, store, catalog, gamma_a)
        loss += pl.value
        active += int(pl.active)
        grads.merge(pl.grads)
        sources |= pl.sources
    pen = composite_penalty(sources, store, lambda_c)
    grads.merge(pen.grads)
    return BatchResult(loss, pen.value, grads, active, len(pairs), pen.violations)


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

def finite_diff_grad(f: Callable[[ParamStore], float], store: ParamStore, h: float,
                     keys: Iterable[ParamKey]) -> GradientBuffer:
    """Central differences (f(θ+h) - f(θ-h)) / 2h for every coordinate of the given blocks."""
    if h <= 0:
        raise ValueError("finite difference step must be positive")
    numeric = GradientBuffer()
    for key in keys:
        block = store.block(key)
        grad = np.zeros_like(block)
        for idx in np.ndindex(block.shape):
            original = block[idx]
            block[idx] = original + h
            f_plus = f(store)
            block[idx] = original - h
            f_minus = f(store)
            block[idx] = original
            grad[idx] = (f_plus - f_minus) / (2.0 * h)
        numeric.add(key, grad)
    return numeric


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _diverged(epoch: int, loss: float, reason: str) -> DivergenceError:
    logger.error("Training diverged", epoch=epoch, loss=loss, reason=reason)
    return DivergenceError(epoch, loss)


def _batches(order: np.ndarray, size: int) -> Iterator[np.ndarray]:
    for start in range(0, len(order), size):
        yield order[start:start + size]


def train(catalog: KgCatalog, config: TrainConfig, store: Optional[ParamStore] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> Tuple[ParamStore, TrainReport]:
    """
    Run SGD on the margin ranking objective over the training seeds.

    Negatives are resampled every epoch. With config.workers == 1 the run is
    fully determined by config.seed.

    Raises:
        DegenerateCatalogError: when no training seeds exist
        DivergenceError: when a batch objective, a gradient or an updated
            parameter is not finite
    """
    seeds = catalog.seeds["train"]
    if not seeds:
        raise DegenerateCatalogError("Training needs at least one training seed")

    if store is None:
        store = init(catalog, config.dims, config.seed, config.init_noise)
    shuffle_rng = substream(config.seed, STREAM_SHUFFLE)
    negatives_rng = substream(config.seed, STREAM_NEGATIVES)

    degenerate = sum(1 for s in seeds if corruption_set_size(s.right, catalog) == 0)
    if degenerate:
        logger.warning("Seeds with empty corruption sets will be skipped", count=degenerate)

    report = TrainReport(workers=config.workers)
    started = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        epoch_start = time.perf_counter()
        order = shuffle_rng.permutation(len(seeds))
        total_loss = total_penalty = 0.0
        pairs = active = violations = clamped = skipped = 0

        for batch_idx in _batches(order, config.batch_size):
            batch_pairs = []
            for i in batch_idx:
                seed = seeds[int(i)]
                if corruption_set_size(seed.right, catalog) == 0:
                    skipped += 1
                    continue
                for _ in range(config.negatives_per_positive):
                    negative = sample_negative(seed.right, catalog, negatives_rng, config.negative_sampling)
                    batch_pairs.append((seed, negative))
            if not batch_pairs:
                continue

            result = batch_objective(batch_pairs, store, catalog, config.gamma_a, config.lambda_c)
            if not config.update_null:
                result.grads.drop(NULL)
            batch_loss = result.loss / result.pairs
            if not math.isfinite(result.loss) or not math.isfinite(result.penalty):
                raise _diverged(epoch, batch_loss, "non-finite batch objective")
            try:
                result.grads.check_finite()
                store.apply_sgd(result.grads.items(), config.lr)
                check_finite(store)
            except NonFiniteParameterError as exc:
                raise _diverged(epoch, batch_loss, str(exc)) from exc
            clamped += clamp_to_unit_ball(store)

            total_loss += result.loss
            total_penalty += result.penalty
            pairs += result.pairs
            active += result.active
            violations += result.violations

        mean_loss = total_loss / pairs if pairs else 0.0
        if not math.isfinite(mean_loss) or not math.isfinite(total_penalty):
            raise _diverged(epoch, mean_loss, "non-finite epoch totals")

        validation = None
        if config.eval_every and epoch % config.eval_every == 0 and catalog.seeds["valid"]:
            validation = evaluate(catalog.seeds["valid"], store, catalog,
                                  candidates=config.eval_candidates, workers=config.workers)

        record = EpochRecord(
            epoch=epoch,
            mean_loss=mean_loss,
            active_fraction=active / pairs if pairs else 0.0,
            violations=violations,
            penalty=total_penalty,
            clamped=clamped,
            skipped=skipped,
            validation=validation,
        )
        report.epochs.append(record)

        duration = time.perf_counter() - epoch_start
        metrics.record_epoch(mean_loss, total_penalty, duration)
        metrics.record_pairs(active, pairs - active)
        metrics.record_skipped(skipped)
        metrics.record_clamped(clamped)
        logger.info(
            "Epoch completed",
            epoch=epoch, mean_loss=mean_loss, active_fraction=record.active_fraction,
            penalty=total_penalty, violations=violations, clamped=clamped,
            val_mrr=validation.mrr if validation else None,
            duration=round(duration, 4),
        )
        if on_epoch is not None:
            on_epoch(record)

    report.wall_clock_seconds = time.perf_counter() - started
    return store, report

