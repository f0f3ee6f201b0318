"""
Synthetic aligned knowledge graphs for acceptance runs.

L1 is a random graph over entities e0..e{E-1} and relations r0..r{R-1}; L2 is
the same graph with identifiers renamed (e17 -> f17, r3 -> s3). Every entity
gets type t{i mod T}, identically in both graphs, and each triple index i
yields the seed (L1 triple i, L2 triple i). Seeds are split 80/10/10 by the
hash order of their index.
"""

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

from kgalign.core.exceptions import ConfigError
from kgalign.core.logging import get_logger
from kgalign.core.rng import STREAM_SYNTH, substream

logger = get_logger(__name__)

TRAIN_FRACTION = 0.8
VALID_FRACTION = 0.1


@dataclass(frozen=True)
class SynthPaths:
    triples_l1: Path
    triples_l2: Path
    types: Path
    seeds_train: Path
    seeds_valid: Path
    seeds_test: Path
    config: Path


def _sample_triples(n_entities: int, n_relations: int, n_triples: int, seed: int) -> List[Tuple[int, int, int]]:
    rng = substream(seed, STREAM_SYNTH)
    space = n_entities * n_entities * n_relations
    if n_triples * 2 > space:
        codes = [int(c) for c in rng.permutation(space)[:n_triples]]
    else:
        seen = set()
        codes = []
        while len(codes) < n_triples:
            c = int(rng.integers(space))
            if c not in seen:
                seen.add(c)
                codes.append(c)
    triples = []
    for c in codes:
        h, rest = divmod(c, n_entities * n_relations)
        r, t = divmod(rest, n_entities)
        triples.append((h, r, t))
    return triples


def _split_order(n: int, seed: int) -> List[int]:
    def key(i: int) -> str:
        return hashlib.sha256(f"{seed}:{i}".encode("utf-8")).hexdigest()
    return sorted(range(n), key=key)


def _write_lines(path: Path, lines: List[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(line + "\n" for line in lines)


def generate(n_entities: int, n_relations: int, n_triples: int, out_dir: Union[str, Path],
             seed: int, n_types: int = 3) -> SynthPaths:
    """
    Write a synthetic aligned pair of graphs into `out_dir`.

    Raises:
        ConfigError: non-positive counts, or more triples than entities^2 * relations
    """
    if n_entities < 1 or n_relations < 1 or n_types < 1:
        raise ConfigError("entities, relations and types must be positive")
    if n_triples < 1:
        raise ConfigError("at least one triple must be requested")
    if n_triples > n_entities * n_entities * n_relations:
        raise ConfigError(
            f"{n_triples} triples requested but only {n_entities}^2 * {n_relations} distinct triples exist"
        )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = SynthPaths(
        triples_l1=out / "triples_l1.tsv",
        triples_l2=out / "triples_l2.tsv",
        types=out / "types.tsv",
        seeds_train=out / "seeds_train.tsv",
        seeds_valid=out / "seeds_valid.tsv",
        seeds_test=out / "seeds_test.tsv",
        config=out / "synth.conf",
    )

    triples = _sample_triples(n_entities, n_relations, n_triples, seed)
    l1 = [(f"e{h}", f"r{r}", f"e{t}") for h, r, t in triples]
    l2 = [(f"f{h}", f"s{r}", f"f{t}") for h, r, t in triples]
    _write_lines(paths.triples_l1, ["\t".join(t) for t in l1])
    _write_lines(paths.triples_l2, ["\t".join(t) for t in l2])

    type_lines = [f"e{i}\tt{i % n_types}" for i in range(n_entities)]
    type_lines += [f"f{i}\tt{i % n_types}" for i in range(n_entities)]
    _write_lines(paths.types, type_lines)

    order = _split_order(n_triples, seed)
    n_train = int(n_triples * TRAIN_FRACTION)
    n_valid = int(n_triples * VALID_FRACTION)
    splits = {
        paths.seeds_train: order[:n_train],
        paths.seeds_valid: order[n_train:n_train + n_valid],
        paths.seeds_test: order[n_train + n_valid:],
    }
    for path, indices in splits.items():
        _write_lines(path, ["\t".join(l1[i] + l2[i]) for i in sorted(indices)])

    _write_lines(paths.config, [
        f"triples_l1 = {paths.triples_l1}",
        f"triples_l2 = {paths.triples_l2}",
        f"types = {paths.types}",
        f"seeds_train = {paths.seeds_train}",
        f"seeds_valid = {paths.seeds_valid}",
        f"seeds_test = {paths.seeds_test}",
    ])

    logger.info(
        "Synthetic graphs written",
        out_dir=str(out), entities=n_entities, relations=n_relations, triples=n_triples,
        types=n_types, seed=seed,
        split={"train": n_train, "valid": n_valid, "test": n_triples - n_train - n_valid},
    )
    return paths
