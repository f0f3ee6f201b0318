"""
KG Store - ingestion, interning and corruption sets for two knowledge graphs

Purpose:
- Parse the triples / type map / seed TSV files of two knowledge graphs
- Intern surface forms into dense per-KG indices (file order of first appearance)
- Serve corruption sets and negative samples for the ranking objective

File formats:
- Triples: `head<TAB>relation<TAB>tail`, or `relation<TAB>arg1<TAB>...<TAB>argN`
  when a `#nary` header precedes the data. Other `#` lines are comments.
- Types: `entity<TAB>type`
- Seeds: `head1<TAB>rel1<TAB>tail1<TAB>head2<TAB>rel2<TAB>tail2`

The catalog is immutable after load and safe to share between readers.
Negative sampling takes an explicit generator so every worker owns its stream.
"""

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from kgalign.core.exceptions import (
    AtomParseError,
    CatalogParseError,
    CatalogValidationError,
    DegenerateCatalogError,
    UnknownSymbolError,
    UnsupportedArityError,
)
from kgalign.core.logging import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]
SamplingMode = Literal["mode_uniform", "global_uniform"]

NARY_HEADER = "#nary"
SPLITS = ("train", "valid", "test")


class KgId(str, Enum):
    L1 = "L1"
    L2 = "L2"


@dataclass(frozen=True, order=True)
class EntityRef:
    kg: KgId
    index: int


@dataclass(frozen=True, order=True)
class RelationRef:
    kg: KgId
    index: int


@dataclass(frozen=True, order=True)
class TypeRef:
    """Types are global: one vocabulary shared by both graphs."""
    index: int


@dataclass(frozen=True)
class Triple:
    """A relation applied to an ordered argument list (length 2 for standard triples)."""
    relation: RelationRef
    args: Tuple[EntityRef, ...]

    def __post_init__(self):
        if len(self.args) < 1:
            raise ValueError("Triple needs at least one argument")
        if any(arg.kg != self.relation.kg for arg in self.args):
            raise ValueError("All references of a triple must belong to one knowledge graph")

    @property
    def kg(self) -> KgId:
        return self.relation.kg

    @property
    def arity(self) -> int:
        return len(self.args)

    def replace(self, relation: Optional[RelationRef] = None, slot: Optional[int] = None,
                entity: Optional[EntityRef] = None) -> "Triple":
        """Copy with the relation and/or one argument slot swapped."""
        args = list(self.args)
        if slot is not None:
            args[slot] = entity
        return Triple(relation or self.relation, tuple(args))


@dataclass(frozen=True)
class AlignmentSeed:
    left: Triple
    right: Triple

    def __post_init__(self):
        if self.left.kg != KgId.L1 or self.right.kg != KgId.L2:
            raise ValueError("Alignment seeds pair an L1 triple with an L2 triple")


class Vocabulary:
    """Injective surface-form ↔ dense index map."""

    def __init__(self):
        self._index: Dict[str, int] = {}
        self._symbols: List[str] = []

    def intern(self, symbol: str) -> int:
        idx = self._index.get(symbol)
        if idx is None:
            idx = len(self._symbols)
            self._index[symbol] = idx
            self._symbols.append(symbol)
        return idx

    def index(self, symbol: str) -> Optional[int]:
        return self._index.get(symbol)

    def lookup(self, idx: int) -> str:
        return self._symbols[idx]

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    def __len__(self) -> int:
        return len(self._symbols)

    def __iter__(self) -> Iterator[str]:
        return iter(self._symbols)


@dataclass
class KgGraph:
    """Vocabularies and triples of one knowledge graph."""
    kg: KgId
    entities: Vocabulary = field(default_factory=Vocabulary)
    relations: Vocabulary = field(default_factory=Vocabulary)
    triples: List[Triple] = field(default_factory=list)
    duplicate_count: int = 0
    nary: bool = False

    def __post_init__(self):
        self._triple_set = set()

    def add_triple(self, relation: str, args: Sequence[str]) -> None:
        triple = Triple(
            RelationRef(self.kg, self.relations.intern(relation)),
            tuple(EntityRef(self.kg, self.entities.intern(a)) for a in args),
        )
        if triple in self._triple_set:
            self.duplicate_count += 1
            return
        self._triple_set.add(triple)
        self.triples.append(triple)

    def contains(self, triple: Triple) -> bool:
        return triple in self._triple_set

    def find_triple(self, relation: str, args: Sequence[str]) -> Optional[Triple]:
        rel_idx = self.relations.index(relation)
        arg_idx = [self.entities.index(a) for a in args]
        if rel_idx is None or any(i is None for i in arg_idx):
            return None
        triple = Triple(RelationRef(self.kg, rel_idx), tuple(EntityRef(self.kg, i) for i in arg_idx))
        return triple if triple in self._triple_set else None


class KgCatalog:
    """
    Interned view of two knowledge graphs, their entity types and seed alignments.

    Parameter rows are global: L1 entities occupy rows [0, |E1|), L2 entities
    follow. Relations are laid out the same way.
    """

    def __init__(self, graphs: Dict[KgId, KgGraph], types: Vocabulary,
                 entity_types: Dict[EntityRef, TypeRef], seeds: Dict[str, List[AlignmentSeed]]):
        self.graphs = graphs
        self.types = types
        self.entity_types = entity_types
        self.seeds = {split: list(seeds.get(split, [])) for split in SPLITS}

    def graph(self, kg: KgId) -> KgGraph:
        return self.graphs[kg]

    def triples(self, kg: KgId) -> List[Triple]:
        return self.graphs[kg].triples

    # --- sizes and global rows ---

    @property
    def num_entities(self) -> int:
        return sum(len(g.entities) for g in self.graphs.values())

    @property
    def num_relations(self) -> int:
        return sum(len(g.relations) for g in self.graphs.values())

    @property
    def num_types(self) -> int:
        return len(self.types)

    def entity_row(self, ref: EntityRef) -> int:
        return ref.index if ref.kg == KgId.L1 else len(self.graphs[KgId.L1].entities) + ref.index

    def relation_row(self, ref: RelationRef) -> int:
        return ref.index if ref.kg == KgId.L1 else len(self.graphs[KgId.L1].relations) + ref.index

    def type_of(self, ref: EntityRef) -> TypeRef:
        try:
            return self.entity_types[ref]
        except KeyError:
            raise CatalogValidationError(
                f"Entity {self.entity_name(ref)!r} in {ref.kg.value} has no type assignment"
            ) from None

    # --- surface forms ---

    def entity_name(self, ref: EntityRef) -> str:
        return self.graphs[ref.kg].entities.lookup(ref.index)

    def relation_name(self, ref: RelationRef) -> str:
        return self.graphs[ref.kg].relations.lookup(ref.index)

    def render_triple(self, triple: Triple) -> str:
        args = ",".join(self.entity_name(a) for a in triple.args)
        return f"{self.relation_name(triple.relation)}({args})"

    def resolve_atom(self, text: str, kg: KgId) -> Triple:
        """Resolve `rel(a,b,...)` against the vocabularies of `kg`; the atom need not be a stored triple."""
        relation, args = parse_atom(text)
        graph = self.graphs[kg]
        rel_idx = graph.relations.index(relation)
        if rel_idx is None:
            raise UnknownSymbolError(relation, "relation", kg.value)
        refs = []
        for arg in args:
            idx = graph.entities.index(arg)
            if idx is None:
                raise UnknownSymbolError(arg, "entity", kg.value)
            refs.append(EntityRef(kg, idx))
        return Triple(RelationRef(kg, rel_idx), tuple(refs))


_ATOM_RE = re.compile(r"^\s*([^\s(),]+)\s*\((.*)\)\s*$")


def parse_atom(text: str) -> Tuple[str, List[str]]:
    """Split `rel(arg1,...,argN)` into its relation and argument symbols."""
    match = _ATOM_RE.match(text)
    if not match:
        raise AtomParseError(text, "expected rel(arg1,...,argN)")
    relation, body = match.group(1), match.group(2)
    args = [a.strip() for a in body.split(",")]
    if not args or any(not a or "(" in a or ")" in a for a in args):
        raise AtomParseError(text, "empty or malformed argument")
    return relation, args


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def read_tsv_rows(path: PathLike) -> Iterator[Tuple[int, str, List[str]]]:
    """Yield (line_no, raw_line, columns) for every non-blank line, comments included.

    Raises:
        CatalogParseError: for a line that is not valid UTF-8
    """
    with open(path, "rb") as f:
        for line_no, data in enumerate(f, start=1):
            try:
                line = data.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CatalogParseError(path, line_no, f"invalid UTF-8 at byte {exc.start}") from exc
            stripped = line.rstrip("\r\n")
            if not stripped.strip():
                continue
            yield line_no, stripped, stripped.split("\t")


def _load_triples(path: PathLike, kg: KgId) -> KgGraph:
    graph = KgGraph(kg)
    seen_data = False
    for line_no, raw, cols in read_tsv_rows(path):
        if raw.startswith("#"):
            if raw.strip() == NARY_HEADER and not seen_data:
                graph.nary = True
            continue
        seen_data = True
        if graph.nary:
            if len(cols) < 2:
                raise CatalogParseError(path, line_no, f"expected relation and >= 1 argument, got {len(cols)} columns")
            graph.add_triple(cols[0], cols[1:])
        else:
            if len(cols) != 3:
                raise CatalogParseError(path, line_no, f"expected 3 columns, got {len(cols)}")
            head, relation, tail = cols
            graph.add_triple(relation, (head, tail))
    if graph.duplicate_count:
        logger.warning("Duplicate triples skipped", path=str(path), kg=kg.value, duplicates=graph.duplicate_count)
    return graph


def _load_types(path: PathLike, graphs: Dict[KgId, KgGraph]) -> Tuple[Vocabulary, Dict[EntityRef, TypeRef]]:
    types = Vocabulary()
    assignment: Dict[EntityRef, TypeRef] = {}
    ignored = 0
    for line_no, raw, cols in read_tsv_rows(path):
        if raw.startswith("#"):
            continue
        if len(cols) != 2:
            raise CatalogParseError(path, line_no, f"expected 2 columns, got {len(cols)}")
        entity, type_name = cols
        type_ref = TypeRef(types.intern(type_name))
        matched = False
        for kg, graph in graphs.items():
            idx = graph.entities.index(entity)
            if idx is not None:
                assignment[EntityRef(kg, idx)] = type_ref
                matched = True
        if not matched:
            ignored += 1
    if ignored:
        logger.debug("Type lines for entities outside any triple ignored", path=str(path), ignored=ignored)
    return types, assignment


def _load_seeds(path: PathLike, graphs: Dict[KgId, KgGraph]) -> List[AlignmentSeed]:
    seeds = []
    for line_no, raw, cols in read_tsv_rows(path):
        if raw.startswith("#"):
            continue
        if len(cols) != 6:
            raise CatalogParseError(path, line_no, f"expected 6 columns, got {len(cols)}")
        h1, r1, t1, h2, r2, t2 = cols
        left = graphs[KgId.L1].find_triple(r1, (h1, t1))
        right = graphs[KgId.L2].find_triple(r2, (h2, t2))
        if left is None:
            raise CatalogValidationError(f"{path}:{line_no}: seed references unknown L1 triple {h1} {r1} {t1}")
        if right is None:
            raise CatalogValidationError(f"{path}:{line_no}: seed references unknown L2 triple {h2} {r2} {t2}")
        seeds.append(AlignmentSeed(left, right))
    return seeds


def load_catalog(triples_l1: PathLike, triples_l2: PathLike, types: PathLike, seeds_train: PathLike,
                 seeds_valid: Optional[PathLike] = None, seeds_test: Optional[PathLike] = None) -> KgCatalog:
    """
    Load and intern both knowledge graphs.

    Index assignment follows file order of first appearance, so the same files
    always produce the same catalog.

    Raises:
        CatalogParseError: wrong column count (with line number)
        CatalogValidationError: untyped entity, or seed naming an unknown triple
    """
    graphs = {
        KgId.L1: _load_triples(triples_l1, KgId.L1),
        KgId.L2: _load_triples(triples_l2, KgId.L2),
    }
    type_vocab, assignment = _load_types(types, graphs)

    for kg, graph in graphs.items():
        missing = [graph.entities.lookup(i) for i in range(len(graph.entities))
                   if EntityRef(kg, i) not in assignment]
        if missing:
            preview = ", ".join(missing[:5])
            raise CatalogValidationError(
                f"{len(missing)} {kg.value} entities have no type assignment (e.g. {preview})"
            )

    seed_paths = {"train": seeds_train, "valid": seeds_valid, "test": seeds_test}
    seeds = {split: _load_seeds(p, graphs) if p is not None else [] for split, p in seed_paths.items()}

    catalog = KgCatalog(graphs, type_vocab, assignment, seeds)
    logger.info(
        "Catalog loaded",
        entities_l1=len(graphs[KgId.L1].entities),
        entities_l2=len(graphs[KgId.L2].entities),
        relations_l1=len(graphs[KgId.L1].relations),
        relations_l2=len(graphs[KgId.L2].relations),
        triples_l1=len(graphs[KgId.L1].triples),
        triples_l2=len(graphs[KgId.L2].triples),
        types=len(type_vocab),
        seeds={split: len(s) for split, s in catalog.seeds.items()},
        duplicates=sum(g.duplicate_count for g in graphs.values()),
    )
    return catalog


# ---------------------------------------------------------------------------
# Corruption and negative sampling
# ---------------------------------------------------------------------------

def _require_binary(t2: Triple, operation: str) -> None:
    if t2.arity != 2:
        raise UnsupportedArityError(t2.arity, operation)


def corruption_set(t2: Triple, catalog: KgCatalog) -> List[Triple]:
    """
    All single-slot corruptions of `t2`: relation swaps, then head swaps, then tail swaps.

    The uncorrupted triple is excluded from each group, so the size is
    (|R|-1) + 2(|E|-1) over the vocabularies of t2's graph.
    """
    _require_binary(t2, "corruption_set")
    graph = catalog.graph(t2.kg)
    out = [t2.replace(relation=RelationRef(t2.kg, r))
           for r in range(len(graph.relations)) if r != t2.relation.index]
    for slot in (0, 1):
        out.extend(t2.replace(slot=slot, entity=EntityRef(t2.kg, e))
                   for e in range(len(graph.entities)) if e != t2.args[slot].index)
    return out


def corruption_set_size(t2: Triple, catalog: KgCatalog) -> int:
    """|corruption_set(t2)| without materializing it; 0 for non-binary triples."""
    if t2.arity != 2:
        return 0
    graph = catalog.graph(t2.kg)
    return (len(graph.relations) - 1) + 2 * (len(graph.entities) - 1)


def _draw_excluding(rng: np.random.Generator, size: int, excluded: int) -> int:
    """Uniform index in range(size) minus `excluded`."""
    idx = int(rng.integers(size - 1))
    return idx + 1 if idx >= excluded else idx


def sample_negative(t2: Triple, catalog: KgCatalog, rng: np.random.Generator,
                    mode: SamplingMode = "mode_uniform") -> Triple:
    """
    Draw one corruption of `t2`.

    mode_uniform picks a non-empty corruption mode (relation/head/tail)
    uniformly, then a candidate uniformly inside it, so relation swaps are not
    swamped when |E| >> |R|. global_uniform draws uniformly over the whole set.
    """
    _require_binary(t2, "sample_negative")
    graph = catalog.graph(t2.kg)
    n_rel, n_ent = len(graph.relations), len(graph.entities)
    sizes = [n_rel - 1, n_ent - 1, n_ent - 1]
    total = sum(sizes)
    if total == 0:
        raise DegenerateCatalogError(f"Corruption set of {catalog.render_triple(t2)} is empty")

    if mode == "global_uniform":
        pick = int(rng.integers(total))
        mode_idx = 0
        while pick >= sizes[mode_idx]:
            pick -= sizes[mode_idx]
            mode_idx += 1
        offset = pick
    else:
        modes = [i for i, s in enumerate(sizes) if s > 0]
        mode_idx = modes[int(rng.integers(len(modes)))]
        offset = None

    if mode_idx == 0:
        excluded = t2.relation.index
        r = _draw_excluding(rng, n_rel, excluded) if offset is None else offset + (offset >= excluded)
        return t2.replace(relation=RelationRef(t2.kg, r))
    slot = mode_idx - 1
    excluded = t2.args[slot].index
    e = _draw_excluding(rng, n_ent, excluded) if offset is None else offset + (offset >= excluded)
    return t2.replace(slot=slot, entity=EntityRef(t2.kg, e))
