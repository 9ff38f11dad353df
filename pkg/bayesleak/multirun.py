"""
Parallel execution of independent work items (attack trials, grid cells)
"""

import os
import signal
from functools import wraps
from typing import Callable, Optional, Sequence

import multiprocessing
from tqdm import tqdm

ctrl_c_entered = False
default_sigint_handler = signal.default_int_handler


def handle_ctrl_c(func):
    @wraps(func)
    def wrapper(*args, **kwargs):
        global ctrl_c_entered
        if not ctrl_c_entered:
            signal.signal(signal.SIGINT, default_sigint_handler)  # the default
            try:
                return func(*args, **kwargs)
            except KeyboardInterrupt:
                ctrl_c_entered = True
                return KeyboardInterrupt
            finally:
                signal.signal(signal.SIGINT, pool_ctrl_c_handler)
        else:
            return KeyboardInterrupt

    return wrapper


def pool_ctrl_c_handler(*args, **kwargs):
    global ctrl_c_entered
    ctrl_c_entered = True


def init_pool():
    # set global variable for each process in the pool:
    global ctrl_c_entered
    global default_sigint_handler
    ctrl_c_entered = False
    default_sigint_handler = signal.signal(signal.SIGINT, pool_ctrl_c_handler)


@handle_ctrl_c
def run_item(args):
    function, item = args
    return function(item)


def resolve_jobs(jobs: Optional[int]) -> int:
    """Number of worker processes; ``None`` or 0 means all available cores."""
    if jobs:
        return int(jobs)
    return int(os.getenv("SLURM_CPUS_PER_TASK") or os.cpu_count() or 1)


def run_parallel(
    function: Callable,
    items: Sequence,
    jobs: Optional[int] = 1,
    desc: Optional[str] = None,
    show_progress: bool = False,
) -> list:
    """Apply ``function`` to every item, returning results in input order.

    ``function`` and the items must be picklable when ``jobs > 1``. Each item carries
    its own seed, so results do not depend on the number of jobs.
    """
    items = list(items)
    jobs = min(resolve_jobs(jobs), max(len(items), 1))
    if jobs == 1:
        return [
            function(item)
            for item in tqdm(items, desc=desc, disable=not show_progress)
        ]

    # Ignore the interrupt signal while the pool forks
    previous_handler = signal.signal(signal.SIGINT, signal.SIG_IGN)
    try:
        with multiprocessing.Pool(processes=jobs, initializer=init_pool) as pool:
            results = list(
                tqdm(
                    pool.imap(run_item, [(function, item) for item in items]),
                    total=len(items),
                    desc=desc,
                    disable=not show_progress,
                )
            )
    finally:
        signal.signal(signal.SIGINT, previous_handler)
    if any(result is KeyboardInterrupt for result in results):
        raise KeyboardInterrupt
    return results
