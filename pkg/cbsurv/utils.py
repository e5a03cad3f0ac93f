import os
import hashlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

# Stream ids, one per consumer of randomness
SAMPLING_STREAM = 0
SIMULATION_STREAM = 1
FOLD_STREAM = 2
MC_STREAM = 3
JITTER_STREAM = 4

DEFAULT_SEED = 20090101


def make_rng(seed, stream=0, chunk=0):
    """
    Returns a counter-based generator for (seed, stream, chunk).

    Philox keyed through a SeedSequence gives the same draws on every
    platform, and independent generators for every (stream, chunk) pair.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(chunk)))
    return np.random.Generator(np.random.Philox(seq))


def default_threads():
    value = os.environ.get("CBSURV_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def map_chunks(fn, chunks, threads=None):
    """
    Applies fn to every chunk and returns results in chunk order, regardless
    of how many workers ran them.
    """
    chunks = list(chunks)
    threads = threads or default_threads()

    if threads == 1 or len(chunks) < 2:
        return [fn(c) for c in chunks]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def round_half_up(x):
    return int(np.floor(x + 0.5))


def fingerprint_frame(frame: pd.DataFrame) -> str:
    hashed = pd.util.hash_pandas_object(frame, index=False).values
    return hashlib.sha256(hashed.tobytes()).hexdigest()


def fingerprint_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
