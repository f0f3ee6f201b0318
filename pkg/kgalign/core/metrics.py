from pathlib import Path
from typing import Union

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

from kgalign.core.logging import get_logger
from kgalign.core.settings import get_settings

logger = get_logger(__name__)

REGISTRY = CollectorRegistry(auto_describe=True)

# Metrics definitions
TRAIN_EPOCHS = Counter(
    'kgalign_train_epochs_total',
    'Completed training epochs',
    registry=REGISTRY,
)

SCORED_PAIRS = Counter(
    'kgalign_scored_pairs_total',
    'Positive/negative pairs scored by the ranking loss',
    ['active'],
    registry=REGISTRY,
)

SKIPPED_PAIRS = Counter(
    'kgalign_skipped_pairs_total',
    'Positives skipped because their corruption set is empty',
    registry=REGISTRY,
)

CLAMPED_ROWS = Counter(
    'kgalign_clamped_rows_total',
    'Embedding rows rescaled onto the unit sphere',
    registry=REGISTRY,
)

EVAL_QUERIES = Counter(
    'kgalign_eval_queries_total',
    'Ranking queries evaluated',
    registry=REGISTRY,
)

EPOCH_LOSS = Gauge(
    'kgalign_epoch_mean_loss',
    'Mean ranking loss of the last epoch',
    registry=REGISTRY,
)

EPOCH_PENALTY = Gauge(
    'kgalign_epoch_penalty',
    'Composite norm penalty summed over the last epoch',
    registry=REGISTRY,
)

EPOCH_DURATION = Histogram(
    'kgalign_epoch_duration_seconds',
    'Epoch wall-clock duration in seconds',
    registry=REGISTRY,
)


def record_epoch(mean_loss: float, penalty: float, duration: float):
    """Record one finished epoch."""
    TRAIN_EPOCHS.inc()
    EPOCH_LOSS.set(mean_loss)
    EPOCH_PENALTY.set(penalty)
    EPOCH_DURATION.observe(duration)


def record_pairs(active: int, inactive: int):
    """Record scored pairs split by hinge activity."""
    if active:
        SCORED_PAIRS.labels(active="true").inc(active)
    if inactive:
        SCORED_PAIRS.labels(active="false").inc(inactive)


def record_skipped(count: int):
    if count:
        SKIPPED_PAIRS.inc(count)


def record_clamped(count: int):
    if count:
        CLAMPED_ROWS.inc(count)


def record_eval_queries(count: int):
    EVAL_QUERIES.inc(count)


def write_metrics(out_dir: Union[str, Path]) -> bool:
    """Write the registry in Prometheus text format to `<out_dir>/metrics.prom`."""
    if not get_settings().enable_metrics:
        return False

    path = Path(out_dir) / "metrics.prom"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_to_textfile(str(path), REGISTRY)
        return True
    except OSError as e:
        logger.error("Failed to write metrics", path=str(path), error=str(e))
        return False
