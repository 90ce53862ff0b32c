"""Order-preserving chunked map over a thread pool.

Chunk boundaries depend only on ``chunk`` (never on the worker count), and
results are concatenated in input order, so output is identical for any
number of threads.
"""

from concurrent.futures import ThreadPoolExecutor


def chunk_ranges(n, chunk):
    return [(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def map_chunks(fn, n, chunk, threads=1):
    """Call ``fn(start, stop)`` for each fixed-size chunk of ``range(n)``; return results in order."""
    ranges = chunk_ranges(n, max(int(chunk), 1))
    if threads <= 1 or len(ranges) <= 1:
        return [fn(s, e) for s, e in ranges]
    with ThreadPoolExecutor(max_workers=int(threads)) as pool:
        return list(pool.map(lambda se: fn(*se), ranges))
