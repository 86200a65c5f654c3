"""Seeding policy: one root seed, named per-stage streams.

All randomness flows from a single 64-bit root seed through numpy's
PCG64 generator. Stages are separated with ``SeedSequence`` spawn keys so
that, say, data generation and sampler draws never share a stream even
when they are handed the same root seed. Stream layout:

    stage 0  synthetic data generation (one child per split)
    stage 1  projection-head initialization
    stage 2  ERM training (epoch shuffles)
    stage 3  recalibration training (children: shuffle, sampler, cs-batch)

PCG64 streams are reproducible bit-for-bit across platforms for a fixed
numpy major version, which is what the determinism contract relies on.
"""

from __future__ import annotations

import numpy as np

STAGE_DATA = 0
STAGE_HEAD_INIT = 1
STAGE_ERM = 2
STAGE_CFR = 3


def stage_rng(seed: int, stage: int) -> np.random.Generator:
    """Generator for one stage of the pipeline under the given root seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stage,))))


def stage_streams(seed: int, stage: int, n: int) -> list[np.random.Generator]:
    """``n`` independent child generators for one stage, in a fixed order."""
    ss = np.random.SeedSequence(seed, spawn_key=(stage,))
    return [np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(n)]
