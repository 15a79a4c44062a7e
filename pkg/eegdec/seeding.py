import zlib
from typing import Any, Dict

import numpy as np

STREAMS = ("data", "init", "dropout", "cropping")


def substream(seed: int, name: str) -> np.random.Generator:
    """
    Named random stream derived from a single seed.

    Streams with different names are statistically independent, so changing how
    often one of them is consumed (e.g. turning dropout off) never shifts another.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), key])))


def generator_state(rng: np.random.Generator) -> Dict[str, Any]:
    return rng.bit_generator.state


def restore_generator(state: Dict[str, Any]) -> np.random.Generator:
    bit_generator = np.random.PCG64()
    bit_generator.state = state
    return np.random.Generator(bit_generator)
