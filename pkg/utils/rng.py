"""
Counter-based random streams

Every stream is a Philox generator keyed by (base_seed, experiment id, seed index,
module tag), so independent tasks get independent, reproducible streams without
any coordination between workers.
"""

import hashlib
from typing import Union

import numpy as np


def _tag_word(tag: Union[str, int]) -> int:
    if isinstance(tag, int):
        return tag & 0xFFFFFFFF
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def stream(
    base_seed: int,
    experiment: str = "",
    seed_index: int = 0,
    module_tag: str = "",
) -> np.random.Generator:
    """
    Derive the generator for one (experiment, seed, module) task

    Args:
        base_seed (int): Global seed of the run
        experiment (str): Experiment id
        seed_index (int): Index of the Monte Carlo seed
        module_tag (str): Consumer tag, e.g. "gff" or "loewner"

    Returns:
        numpy Generator backed by Philox
    """
    entropy = [
        int(base_seed) & 0xFFFFFFFF,
        _tag_word(experiment),
        int(seed_index) & 0xFFFFFFFF,
        _tag_word(module_tag),
    ]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def as_generator(rng: Union[None, int, np.random.Generator]) -> np.random.Generator:
    """Accept a seed, a generator or None and return a generator"""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return stream(0)
    return stream(int(rng))
