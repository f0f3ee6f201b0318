"""Shared fixtures: a tiny pair of knowledge graphs written into tmp_path."""

from pathlib import Path
from typing import Dict, Iterable, Sequence

import pytest

from kgalign.core.params import init_params
from kgalign.db.kg_store import EntityRef, KgCatalog, KgId, RelationRef, load_catalog
from kgalign.models.schemas import Dims

L1_TRIPLES = [
    ("alice", "bornIn", "paris"),
    ("bob", "bornIn", "london"),
    ("alice", "livesIn", "london"),
]

L2_TRIPLES = [
    ("a2", "born", "p2"),
    ("b2", "born", "l2"),
    ("a2", "lives", "l2"),
]

TYPES = [
    ("alice", "person"), ("bob", "person"), ("paris", "city"), ("london", "city"),
    ("a2", "person"), ("b2", "person"), ("p2", "city"), ("l2", "city"),
]

SEEDS_TRAIN = [
    ("alice", "bornIn", "paris", "a2", "born", "p2"),
    ("bob", "bornIn", "london", "b2", "born", "l2"),
]

SEEDS_TEST = [
    ("alice", "livesIn", "london", "a2", "lives", "l2"),
]


def write_tsv(path: Path, rows: Iterable[Sequence[str]], header: str = None) -> Path:
    lines = [header] if header else []
    lines += ["\t".join(row) for row in rows]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


@pytest.fixture
def tiny_files(tmp_path) -> Dict[str, Path]:
    return {
        "triples_l1": write_tsv(tmp_path / "l1.tsv", L1_TRIPLES),
        "triples_l2": write_tsv(tmp_path / "l2.tsv", L2_TRIPLES),
        "types": write_tsv(tmp_path / "types.tsv", TYPES),
        "seeds_train": write_tsv(tmp_path / "seeds_train.tsv", SEEDS_TRAIN),
        "seeds_valid": write_tsv(tmp_path / "seeds_valid.tsv", SEEDS_TRAIN[:1]),
        "seeds_test": write_tsv(tmp_path / "seeds_test.tsv", SEEDS_TEST),
    }


@pytest.fixture
def tiny_catalog(tiny_files) -> KgCatalog:
    return load_catalog(**tiny_files)


@pytest.fixture
def small_dims() -> Dims:
    return Dims(k_e=3, k_r=3, k_s=3)


@pytest.fixture
def tiny_store(tiny_catalog, small_dims):
    return init_params(tiny_catalog.num_entities, tiny_catalog.num_relations, tiny_catalog.num_types,
                       small_dims, seed=0)


def entity(catalog: KgCatalog, kg: KgId, name: str) -> EntityRef:
    return EntityRef(kg, catalog.graph(kg).entities.index(name))


def relation(catalog: KgCatalog, kg: KgId, name: str) -> RelationRef:
    return RelationRef(kg, catalog.graph(kg).relations.index(name))


def scalar_store(catalog: KgCatalog, entity_values: Dict[str, float], relation_values: Dict[str, float]):
    """k = 1 store with identity projections, zero null vector and hand-picked values.

    Keys are `KG:name`, e.g. "L1:alice".
    """
    store = init_params(catalog.num_entities, catalog.num_relations, catalog.num_types,
                        Dims(k_e=1, k_r=1, k_s=1), seed=0, noise=0.0)
    store.entity_emb[:] = 0.0
    store.relation_emb[:] = 0.0
    for key, value in entity_values.items():
        kg, name = key.split(":")
        store.entity_emb[catalog.entity_row(entity(catalog, KgId(kg), name))] = value
    for key, value in relation_values.items():
        kg, name = key.split(":")
        store.relation_emb[catalog.relation_row(relation(catalog, KgId(kg), name))] = value
    return store
