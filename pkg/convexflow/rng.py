# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

"""
Seeded counter-based random streams.

All randomness of a run flows from ``(seed, labels...)``: every label is hashed into a
spawn key, so the stream of one method never depends on how many draws another method made.
"""

import hashlib
from typing import Union

import numpy as np

GENERATOR_NAME = "numpy.random.Philox"


def label_key(label: Union[str, int]) -> int:
    '''
    Stable 32 bit key for a stream label. Python's hash() is salted per process, so use sha256.
    '''
    if isinstance(label, int):
        return label
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def make_generator(seed: int, *labels: Union[str, int]) -> np.random.Generator:
    """
    Create the generator for the substream ``(seed, *labels)``.

    Args:
        seed (int): The experiment seed.
        labels (str | int): Substream path, e.g. ``("batches", "implicit")``.

    Returns:
        numpy.random.Generator: A Philox-backed generator. Identical arguments give
        bit-identical streams.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(label_key(label) for label in labels))
    return np.random.Generator(np.random.Philox(sequence))
