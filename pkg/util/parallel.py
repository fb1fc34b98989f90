from functools import partial

import torch
import torch.multiprocessing as mp


def _init_worker():
    torch.set_num_threads(1)


def parallel_map(fn, tasks, workers=1):
    """Map ``fn`` over ``tasks`` on a spawn pool; results come back in task order.

    Tasks carry their own random streams, so the output does not depend on
    ``workers``. ``fn`` and the tasks must be picklable.
    """
    tasks = list(tasks)
    if not tasks:
        return []
    if workers <= 1 or len(tasks) == 1:
        return [fn(t) for t in tasks]
    ctx = mp.get_context("spawn")
    with ctx.Pool(processes=min(int(workers), len(tasks)), initializer=_init_worker) as pool:
        return pool.map(fn, tasks, chunksize=1)


def get_map(workers):
    return partial(parallel_map, workers=workers)
