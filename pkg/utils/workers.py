from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, items, jobs=1):
    """Maps fn over items on up to `jobs` threads; results keep input order.

    Work items must carry their own seeds so the result does not depend on
    the number of workers.
    """
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))
