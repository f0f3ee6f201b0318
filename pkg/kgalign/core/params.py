"""
ParamStore - every learnable tensor of the alignment model

Tensors (all float64):
- entity_emb  [entities x k_e]    both graphs, L1 rows first
- relation_emb [relations x k_r]  both graphs, L1 rows first
- rel_proj    [relations x k_r x k_s]  one projection per relation
- type_proj   [types x k_e x k_s]      one projection per entity type, shared by all relations
- null_vec    [k_s]                    the null character used by deletions/insertions

Entity and relation rows are kept inside the unit ball by clamp_to_unit_ball
after every optimizer step. The projected norms are only penalized softly
(see trainer.composite_penalty).
"""

from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np

from kgalign.core.exceptions import DegenerateCatalogError, NonFiniteParameterError
from kgalign.core.logging import get_logger
from kgalign.core.rng import STREAM_INIT, substream
from kgalign.models.schemas import Dims

logger = get_logger(__name__)

# rows already on the sphere up to rounding are left alone
NORM_TOLERANCE = 1e-12

ENTITY = "entity"
RELATION = "relation"
REL_PROJ = "rel_proj"
TYPE_PROJ = "type_proj"
NULL = "null"

# Parameter key: (tensor name, row). The null vector always uses row 0.
ParamKey = Tuple[str, int]

TENSOR_ORDER = (ENTITY, RELATION, REL_PROJ, TYPE_PROJ, NULL)


@dataclass
class ParamStore:
    entity_emb: np.ndarray
    relation_emb: np.ndarray
    rel_proj: np.ndarray
    type_proj: np.ndarray
    null_vec: np.ndarray
    dims: Dims

    def tensor(self, name: str) -> np.ndarray:
        return {
            ENTITY: self.entity_emb,
            RELATION: self.relation_emb,
            REL_PROJ: self.rel_proj,
            TYPE_PROJ: self.type_proj,
            NULL: self.null_vec,
        }[name]

    def block(self, key: ParamKey) -> np.ndarray:
        """Writable view of one parameter row (the whole vector for NULL)."""
        name, row = key
        return self.null_vec if name == NULL else self.tensor(name)[row]

    @property
    def counts(self) -> Dict[str, int]:
        return {
            "entities": self.entity_emb.shape[0],
            "relations": self.relation_emb.shape[0],
            "types": self.type_proj.shape[0],
        }

    def copy(self) -> "ParamStore":
        """Independent snapshot for readers while a writer keeps updating."""
        return ParamStore(
            entity_emb=self.entity_emb.copy(),
            relation_emb=self.relation_emb.copy(),
            rel_proj=self.rel_proj.copy(),
            type_proj=self.type_proj.copy(),
            null_vec=self.null_vec.copy(),
            dims=self.dims,
        )

    def equals(self, other: "ParamStore") -> bool:
        """Element-wise (bit-level) equality of every tensor."""
        return self.dims == other.dims and all(
            np.array_equal(self.tensor(n), other.tensor(n)) for n in TENSOR_ORDER
        )

    def apply_sgd(self, grads: Iterable[Tuple[ParamKey, np.ndarray]], lr: float) -> None:
        """Plain SGD: block -= lr * grad for every touched block."""
        if lr == 0:
            return
        for key, grad in grads:
            block = self.block(key)
            block -= lr * grad


def _uniform_rows(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    bound = 6.0 / np.sqrt(k)
    rows = rng.uniform(-bound, bound, size=(n, k))
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return np.where(norms > 1.0, rows / np.maximum(norms, 1e-300), rows)


def _identity_plus_noise(rng: np.random.Generator, n: int, rows: int, cols: int, noise: float) -> np.ndarray:
    base = np.broadcast_to(np.eye(rows, cols), (n, rows, cols))
    if noise == 0:
        return np.array(base, dtype=np.float64)
    return base + rng.uniform(-noise, noise, size=(n, rows, cols))


def init_params(num_entities: int, num_relations: int, num_types: int, dims: Dims,
                seed: int, noise: float = 0.01) -> ParamStore:
    """
    Initialize a store deterministically from `seed`.

    Embedding rows are drawn uniform in [-6/sqrt(k), 6/sqrt(k)] and scaled into
    the unit ball; projections start at a truncated identity plus uniform noise
    in [-noise, noise]; the null vector starts at zero.
    """
    if num_entities == 0 or num_relations == 0:
        raise DegenerateCatalogError(
            f"Cannot initialize parameters for {num_entities} entities and {num_relations} relations"
        )
    if num_types == 0:
        raise DegenerateCatalogError("Cannot initialize parameters without entity types")

    rng = substream(seed, STREAM_INIT)
    store = ParamStore(
        entity_emb=_uniform_rows(rng, num_entities, dims.k_e),
        relation_emb=_uniform_rows(rng, num_relations, dims.k_r),
        rel_proj=_identity_plus_noise(rng, num_relations, dims.k_r, dims.k_s, noise),
        type_proj=_identity_plus_noise(rng, num_types, dims.k_e, dims.k_s, noise),
        null_vec=np.zeros(dims.k_s, dtype=np.float64),
        dims=dims,
    )
    logger.info(
        "Parameters initialized",
        entities=num_entities, relations=num_relations, types=num_types,
        k_e=dims.k_e, k_r=dims.k_r, k_s=dims.k_s, seed=seed, noise=noise,
    )
    return store


def init(catalog, dims: Dims, seed: int, noise: float = 0.01) -> ParamStore:
    """init_params sized from a KgCatalog."""
    return init_params(catalog.num_entities, catalog.num_relations, catalog.num_types, dims, seed, noise)


def check_finite(store: ParamStore) -> None:
    for name in TENSOR_ORDER:
        t = store.tensor(name)
        if name == NULL:
            if not np.all(np.isfinite(t)):
                raise NonFiniteParameterError(name, 0)
            continue
        bad = ~np.isfinite(t.reshape(t.shape[0], -1)).all(axis=1)
        if bad.any():
            raise NonFiniteParameterError(name, int(np.flatnonzero(bad)[0]))


def clamp_to_unit_ball(store: ParamStore) -> int:
    """
    Rescale every entity/relation row with norm > 1 (beyond NORM_TOLERANCE) to norm 1.

    Returns:
        Number of rows clamped.

    Raises:
        NonFiniteParameterError naming the first offending row.
    """
    clamped = 0
    for name in (ENTITY, RELATION):
        table = store.tensor(name)
        finite = np.isfinite(table).all(axis=1)
        if not finite.all():
            raise NonFiniteParameterError(name, int(np.flatnonzero(~finite)[0]))
        norms = np.linalg.norm(table, axis=1)
        over = norms > 1.0 + NORM_TOLERANCE
        if over.any():
            table[over] /= norms[over][:, None]
            clamped += int(over.sum())
    if clamped:
        logger.debug("Rows clamped to unit ball", rows=clamped)
    return clamped

