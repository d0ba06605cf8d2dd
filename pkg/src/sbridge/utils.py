"""Collection of utilities shared by the sbridge modules: random streams and parallel execution."""
import traceback
import multiprocessing
import logging
from collections.abc import Iterable
from typing import Optional, Union, Literal, Callable, Sequence, List, Any
from concurrent.futures import ProcessPoolExecutor
from threadpoolctl import threadpool_limits
from warnings import warn

import numpy as np

from .errors import DivergenceError


# Necessary definitions to avoid parallelization bugs, Inherited from SpikeInterface experience
# see
# https://stackoverflow.com/questions/10117073/how-to-use-initializer-to-set-up-my-multiprocess-pool
# the tricks is : these 2 variables are global per worker
# so they are not share in the same process
global _worker_context
global _operation_to_run


def stream(seed: int, *key: int) -> np.random.Generator:
    """
    Create an independent random stream keyed by ``(seed, *key)``.

    The stream is a Philox counter-based generator seeded through a ``SeedSequence`` with
    ``spawn_key=key``, so ``stream(seed, i)`` for different ``i`` are statistically independent
    and the values drawn from one stream do not depend on how many other streams exist.
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def path_noise(seed: int, path_indices: Sequence[int], n_steps: int, dim: int, *key: int) -> np.ndarray:
    """
    Draw the standard normal increments of a set of paths, one stream per path.

    :returns: array of shape (n_steps, len(path_indices), dim); column ``j`` depends only on
              ``(seed, *key, path_indices[j])``
    """
    noise = np.empty((n_steps, len(path_indices), dim))
    for j, index in enumerate(path_indices):
        noise[:, j, :] = stream(seed, *key, index).standard_normal((n_steps, dim))
    return noise


def check_finite(x: np.ndarray, what: str, **location):
    """Raise a DivergenceError if x holds a NaN or inf"""
    if not np.all(np.isfinite(x)):
        raise DivergenceError("non-finite %s encountered" % what, **location)


def split_evenly(n_items: int, n_blocks: int) -> List[range]:
    """Split range(n_items) into at most n_blocks contiguous, ordered blocks"""
    n_blocks = max(1, min(n_blocks, n_items))
    bounds = np.linspace(0, n_items, n_blocks + 1).astype(int)
    return [range(bounds[i], bounds[i + 1]) for i in range(n_blocks) if bounds[i + 1] > bounds[i]]


class ParallelMap:
    """
    Helper class used to evaluate independent units of work, e.g., blocks of SDE paths or
    seeds of a Sinkhorn sweep, either serially or on a process pool.

    Results are always returned in the order of the submitted arguments, so as long as every
    unit draws from its own random stream the output does not depend on scheduling.

    :param number_of_jobs: The number of jobs used. The default is 1 (serial, in-process).
    :type number_of_jobs: integer
    :param max_threads_per_process: Limits the number of threads used by each process. The default is None (no limits).
    :type max_threads_per_process: integer or None
    :param multiprocessing_context: Context for multiprocessing. It can be None (default), "fork" or "spawn".
    Note that "fork" is only available on UNIX systems (not Windows).
    :type multiprocessing_context: string or None
    :param display_progress: Show a tqdm progress bar if tqdm is installed.
    :type display_progress: bool
    """
    def __init__(
        self,
        number_of_jobs: int = 1,
        max_threads_per_process: Union[None, int] = None,
        multiprocessing_context: Union[None, Literal["fork", "spawn"]] = None,
        display_progress: bool = False,
        description: str = "sbridge",
    ):
        self.logger = logging.getLogger('%s.%s' % (self.__class__.__module__, self.__class__.__qualname__))

        self.number_of_jobs = number_of_jobs
        self.max_threads_per_process = max_threads_per_process
        self.multiprocessing_context = multiprocessing_context
        self.display_progress = display_progress
        self.description = description

    def map(self, operation: Callable, arguments: Iterable) -> List[Any]:
        """
        Evaluate ``operation(*args)`` for every tuple in ``arguments`` and return the results in order.

        The operation must be a picklable module-level callable when number_of_jobs > 1.
        """
        arguments = [tuple(args) for args in arguments]
        self.logger.debug(f"Running {len(arguments)} units of work with {self.number_of_jobs} jobs")
        if self.number_of_jobs <= 1 or len(arguments) <= 1:
            if self.max_threads_per_process is None:
                results = [operation(*args) for args in self._progress(arguments, len(arguments))]
            else:
                with threadpool_limits(limits=self.max_threads_per_process):
                    results = [operation(*args) for args in self._progress(arguments, len(arguments))]
            return results

        process_initialization = dict
        initialization_arguments = ()
        with ProcessPoolExecutor(
            max_workers=self.number_of_jobs,
            initializer=self.initializer_wrapper,
            mp_context=multiprocessing.get_context(method=self.multiprocessing_context),
            initargs=(
                operation,
                process_initialization,
                initialization_arguments,
                self.max_threads_per_process
            ),
        ) as executor:
            # executor map must be iterated to deploy commands over jobs
            results = list(self._progress(executor.map(self.function_wrapper, arguments), len(arguments)))
        self.logger.debug(f"Collected {len(results)} results")
        return results

    def _progress(self, iterable: Iterable, total: int) -> Iterable:
        if not self.display_progress:
            return iterable
        try:  # Import warnings are also issued at the level of the iterator instantiation
            from tqdm import tqdm

            return tqdm(iterable=iterable, total=total, desc=f"{self.description} ({self.number_of_jobs} jobs)")
        except Exception as exception:  # pragma: no cover
            warn(
                message=(
                    "Unable to setup progress bar due to"
                    f"\n{type(exception)}: {str(exception)}\n\n{traceback.format_exc()}"
                ),
                stacklevel=2,
            )
            return iterable

    @staticmethod
    def initializer_wrapper(
        operation_to_run: Callable,
        process_initialization: Callable,
        initialization_arguments: Iterable,
        max_threads_per_process: Optional[int] = None
    ):  # keyword arguments here are just for readability, ProcessPool only takes a tuple
        """
        Needed as a part of a bug fix with cloud memory leaks discovered by SpikeInterface team.

        Recommended fix is to have global wrappers for the working initializer that limits the
        threads used per process.
        """
        global _worker_context
        global _operation_to_run

        if max_threads_per_process is None:
            _worker_context = process_initialization(*initialization_arguments)
        else:
            with threadpool_limits(limits=max_threads_per_process):
                _worker_context = process_initialization(*initialization_arguments)
        _worker_context["max_threads_per_process"] = max_threads_per_process
        _operation_to_run = operation_to_run

    @staticmethod
    def function_wrapper(args: tuple):
        """
        Needed as a part of a bug fix with cloud memory leaks discovered by SpikeInterface team.

        Recommended fix is to have a global wrapper for the executor.map level.
        """
        global _worker_context
        global _operation_to_run

        max_threads_per_process = _worker_context["max_threads_per_process"]
        if max_threads_per_process is None:
            return _operation_to_run(*args)
        else:
            with threadpool_limits(limits=max_threads_per_process):
                return _operation_to_run(*args)
