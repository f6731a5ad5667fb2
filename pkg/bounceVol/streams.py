from __future__ import annotations

import enum

import numpy as np

__all__ = ("StreamPurpose", "derive_stream")


class StreamPurpose(enum.IntEnum):
    """Which part of a run a random stream feeds.

    Tuning draws never share a stream with production draws.
    """

    production = 0
    tuning = 1
    rejection = 2
    sample = 3


def derive_stream(
    seed: int, repeat: int = 0, phase: int = 0, purpose: StreamPurpose = StreamPurpose.production
) -> np.random.Generator:
    """Return an independent counter-based random stream for ``(seed, repeat, phase, purpose)``.

    Parameters
    ----------
    seed: int
        The 64-bit run seed.
    repeat: int
        The repeat index. Defaults to ``0``.
    phase: int
        The phase index. Defaults to ``0``.
    purpose: :class:`StreamPurpose`
        What the stream is used for. Defaults to :attr:`StreamPurpose.production`.

    Returns
    -------
    :class:`numpy.random.Generator`
        A generator over :class:`numpy.random.Philox`. Its ``bit_generator.state`` can be saved and restored
        to replay the stream exactly.
    """
    sequence = np.random.SeedSequence(seed & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=(repeat, phase, int(purpose)))
    return np.random.Generator(np.random.Philox(sequence))
