"""
Edit distance between triples in string space

A triple r(h, t) is projected into string space as the three-character string
[r M_r, h M_type(h), t M_type(t)]. Edit operations are vectors:

    substitution  a - b
    deletion      a - eps
    insertion     eps - b

An edit sequence is a monotone path through the (m+1) x (n+1) alignment grid
(diagonal = substitution, down = deletion, right = insertion). Its value is
sum_i (prod_k delta_k[i])^2, and the distance is the average of that value
over all delannoy(m, n) paths.

Two implementations:
- distance_bruteforce: explicit path enumeration, the reference oracle
- distance_dp: per-coordinate lattice recurrence in O(m * n * k_s)

    D[p][q] = D[p-1][q-1] * sub^2(p, q) + D[p-1][q] * del^2(p) + D[p][q-1] * ins^2(q)

with D[0][0] = 1, so D[m][n][i] sums the squared path products of coordinate i.
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from kgalign.core.exceptions import DimensionMismatchError, EditDistanceError, PathLengthError
from kgalign.core.params import ENTITY, REL_PROJ, RELATION, TYPE_PROJ, ParamKey, ParamStore

MAX_BRUTEFORCE_LENGTH = 6


class EditOpKind(str, Enum):
    SUBSTITUTION = "sub"
    DELETION = "del"
    INSERTION = "ins"


@dataclass(frozen=True)
class CharSource:
    """Which rows produced one projected character: vector row times projection matrix."""
    vector: ParamKey
    matrix: ParamKey


@dataclass
class ProjectedString:
    chars: np.ndarray
    provenance: Optional[Tuple[CharSource, ...]] = None

    def __post_init__(self):
        self.chars = np.atleast_2d(np.asarray(self.chars, dtype=np.float64))
        if self.chars.ndim != 2 or self.chars.shape[0] < 1:
            raise EditDistanceError("Projected strings need at least one character")
        if self.chars.shape[1] < 1:
            raise EditDistanceError("Projected characters need at least one dimension")

    @classmethod
    def from_vectors(cls, vectors: Sequence[Sequence[float]]) -> "ProjectedString":
        return cls(np.asarray(vectors, dtype=np.float64))

    def __len__(self) -> int:
        return self.chars.shape[0]

    @property
    def dim(self) -> int:
        return self.chars.shape[1]


@dataclass(frozen=True)
class EditOpVector:
    kind: EditOpKind
    vec: np.ndarray


@dataclass
class EditLattice:
    """Forward DP table with the intermediates the backward pass needs."""
    m: int
    n: int
    cells: np.ndarray      # [m+1, n+1, k]
    sub: np.ndarray        # [m, n, k]  x_p - y_q
    dele: np.ndarray       # [m, k]     x_p - eps
    ins: np.ndarray        # [n, k]     eps - y_q
    sub2: np.ndarray
    del2: np.ndarray
    ins2: np.ndarray


@dataclass
class DistanceResult:
    value: float
    path_count: int
    lattice: Optional[EditLattice] = field(default=None, repr=False)

    @property
    def total(self) -> float:
        """Sum over edit sequences instead of the average."""
        return self.value * self.path_count


# ---------------------------------------------------------------------------
# Projection and edit operations
# ---------------------------------------------------------------------------

def project_triple(t, store: ParamStore, catalog) -> ProjectedString:
    """
    Render a triple (of any arity) as [relation, arg1, ..., argN] in string space.

    The relation uses its own projection; each entity uses the projection of its type.
    """
    keys = []
    rel_row = catalog.relation_row(t.relation)
    keys.append(CharSource((RELATION, rel_row), (REL_PROJ, rel_row)))
    for arg in t.args:
        type_ref = catalog.type_of(arg)
        keys.append(CharSource((ENTITY, catalog.entity_row(arg)), (TYPE_PROJ, type_ref.index)))

    chars = np.empty((len(keys), store.dims.k_s), dtype=np.float64)
    for i, src in enumerate(keys):
        chars[i] = store.block(src.vector) @ store.block(src.matrix)
    return ProjectedString(chars, tuple(keys))


def edit_op(kind: EditOpKind, a: Optional[np.ndarray], b: Optional[np.ndarray], eps: np.ndarray) -> EditOpVector:
    eps = np.asarray(eps, dtype=np.float64)
    if kind == EditOpKind.SUBSTITUTION:
        if a is None or b is None:
            raise EditDistanceError("Substitution needs both characters")
        left, right = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    elif kind == EditOpKind.DELETION:
        if a is None:
            raise EditDistanceError("Deletion needs the source character")
        left, right = np.asarray(a, dtype=np.float64), eps
    else:
        if b is None:
            raise EditDistanceError("Insertion needs the target character")
        left, right = eps, np.asarray(b, dtype=np.float64)
    if left.shape != right.shape:
        raise DimensionMismatchError(left.shape[-1], right.shape[-1])
    return EditOpVector(kind, left - right)


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def delannoy(m: int, n: int) -> int:
    """Number of monotone diagonal/down/right paths from (0, 0) to (m, n)."""
    if m < 0 or n < 0:
        raise ValueError("delannoy is defined for non-negative lengths")
    if m == 0 or n == 0:
        return 1
    return delannoy(m - 1, n) + delannoy(m, n - 1) + delannoy(m - 1, n - 1)


def enumerate_paths(m: int, n: int) -> List[Tuple[EditOpKind, ...]]:
    """All edit sequences between lengths m and n, depth-first with diagonal/down/right priority."""
    paths: List[Tuple[EditOpKind, ...]] = []
    prefix: List[EditOpKind] = []

    def walk(p: int, q: int) -> None:
        if p == m and q == n:
            paths.append(tuple(prefix))
            return
        for kind, dp, dq in ((EditOpKind.SUBSTITUTION, 1, 1), (EditOpKind.DELETION, 1, 0), (EditOpKind.INSERTION, 0, 1)):
            if p + dp <= m and q + dq <= n:
                prefix.append(kind)
                walk(p + dp, q + dq)
                prefix.pop()

    walk(0, 0)
    return paths


def path_ops(x: ProjectedString, y: ProjectedString, eps: np.ndarray,
             path: Sequence[EditOpKind]) -> List[EditOpVector]:
    """Concrete operation vectors along one path."""
    ops = []
    p = q = 0
    for kind in path:
        if kind == EditOpKind.SUBSTITUTION:
            ops.append(edit_op(kind, x.chars[p], y.chars[q], eps))
            p, q = p + 1, q + 1
        elif kind == EditOpKind.DELETION:
            ops.append(edit_op(kind, x.chars[p], None, eps))
            p += 1
        else:
            ops.append(edit_op(kind, None, y.chars[q], eps))
            q += 1
    return ops


def edq_of_path(ops: Sequence[EditOpVector]) -> float:
    """Squared norm of the element-wise product of the operation vectors."""
    if not ops:
        raise EditDistanceError("An edit sequence needs at least one operation")
    product = np.ones_like(ops[0].vec)
    for op in ops:
        if op.vec.shape != product.shape:
            raise DimensionMismatchError(product.shape[0], op.vec.shape[0])
        product = product * op.vec
    return float(np.sum(product * product))


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------

def _check_dims(x: ProjectedString, y: ProjectedString, eps: np.ndarray) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    if x.dim != y.dim:
        raise DimensionMismatchError(x.dim, y.dim)
    if eps.shape != (x.dim,):
        raise DimensionMismatchError(x.dim, eps.shape[-1] if eps.ndim else 0)
    return eps


def distance_bruteforce(x: ProjectedString, y: ProjectedString, eps: np.ndarray) -> DistanceResult:
    """Average edit-sequence value by explicit enumeration; lengths are capped at MAX_BRUTEFORCE_LENGTH."""
    eps = _check_dims(x, y, eps)
    m, n = len(x), len(y)
    if m > MAX_BRUTEFORCE_LENGTH or n > MAX_BRUTEFORCE_LENGTH:
        raise PathLengthError(m, n, MAX_BRUTEFORCE_LENGTH)
    paths = enumerate_paths(m, n)
    total = sum(edq_of_path(path_ops(x, y, eps, path)) for path in paths)
    return DistanceResult(total / len(paths), len(paths))


def distance_dp(x: ProjectedString, y: ProjectedString, eps: np.ndarray,
                keep_lattice: bool = False) -> DistanceResult:
    """Average edit-sequence value via the lattice recurrence; keep_lattice retains intermediates for backprop."""
    eps = _check_dims(x, y, eps)
    m, n = len(x), len(y)
    k = x.dim

    sub = x.chars[:, None, :] - y.chars[None, :, :]
    dele = x.chars - eps
    ins = eps - y.chars
    sub2, del2, ins2 = sub * sub, dele * dele, ins * ins

    cells = np.empty((m + 1, n + 1, k), dtype=np.float64)
    cells[0, 0] = 1.0
    for q in range(1, n + 1):
        cells[0, q] = cells[0, q - 1] * ins2[q - 1]
    for p in range(1, m + 1):
        cells[p, 0] = cells[p - 1, 0] * del2[p - 1]
        for q in range(1, n + 1):
            cells[p, q] = (cells[p - 1, q - 1] * sub2[p - 1, q - 1]
                           + cells[p - 1, q] * del2[p - 1]
                           + cells[p, q - 1] * ins2[q - 1])

    count = delannoy(m, n)
    value = float(np.sum(cells[m, n])) / count
    lattice = EditLattice(m, n, cells, sub, dele, ins, sub2, del2, ins2) if keep_lattice else None
    return DistanceResult(value, count, lattice)


def distance_general_arity(atom1, atom2, store: ParamStore, catalog, keep_lattice: bool = False) -> DistanceResult:
    """Distance between atoms of any (possibly different) arities."""
    x = project_triple(atom1, store, catalog)
    y = project_triple(atom2, store, catalog)
    return distance_dp(x, y, store.null_vec, keep_lattice=keep_lattice)


def triple_distance(t1, t2, store: ParamStore, catalog) -> float:
    return distance_general_arity(t1, t2, store, catalog).value
