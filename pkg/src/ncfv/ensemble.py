"""Deterministic disorder sampling and parallel ensemble averaging.

Configuration ``i`` of an ensemble with master seed ``s`` draws its disorder
from ``numpy.random.SeedSequence(entropy=s, spawn_key=(i,))``, so every
configuration is reproducible on its own and the ensemble result does not
depend on evaluation order or worker count. Results are reduced in index
order.
"""

from __future__ import annotations

import hashlib
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NcfvError, NumericalError, ValidationError
from .lattice import DisorderConfig, FluxMatrix, TorusGeometry, build_hamiltonian
from .models import make_model
from .observables import (KuboWeights, ccc, chern_even_from_eigensystem, chern_odd,
                          delta_loc_length, dos, window_projection)
from .spectral import chiral_fermi_unitary, eigh

TASK_KINDS = ("dos", "kubo", "chern", "winding", "ccc", "loclength", "filling")


@dataclass(frozen=True)
class Task:
    """One observable evaluated on every configuration.

    ``kind`` is one of ``TASK_KINDS`` and ``options`` holds its parameters
    (plain Python values so that tasks can be sent to worker processes).
    """

    kind: str
    options: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValidationError(f"unknown task {self.kind!r}; choose from {TASK_KINDS}")
        if not self.name:
            object.__setattr__(self, "name", self.kind)


@dataclass(frozen=True)
class EnsembleSpec:
    """Everything needed to rebuild and evaluate any configuration.

    Attributes
    ----------
    model : str
        Registry name, see :data:`ncfv.models.MODELS`.
    params : dict
    sizes : tuple of int
    flux : dict
        ``{(i, j): target}`` flux fractions, quantized on the torus.
    master_seed : int
        64-bit seed.
    count : int
        Number of configurations.
    tasks : tuple of Task
    """

    model: str
    params: dict
    sizes: tuple
    flux: dict = field(default_factory=dict)
    master_seed: int = 0
    count: int = 1
    tasks: tuple = ()

    def __post_init__(self):
        if self.count < 1:
            raise ValidationError("config count must be >= 1")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValidationError("master seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "sizes", tuple(int(m) for m in self.sizes))
        object.__setattr__(self, "tasks", tuple(self.tasks))

    def build_model(self):
        return make_model(self.model, self.params)

    def geometry(self, model=None):
        model = model or self.build_model()
        return TorusGeometry(self.sizes, model.N)

    def flux_matrix(self, geometry):
        if not self.flux:
            return None
        fm = FluxMatrix.quantized(self.flux, geometry)
        fm.check(geometry)
        return fm


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    """Mean, sample standard deviation and standard error over configurations.

    The standard deviation of complex data is that of ``|x - mean|``.
    """

    mean: np.ndarray
    std: np.ndarray
    stderr: np.ndarray
    count: int
    raw: np.ndarray | None = None

    @classmethod
    def from_samples(cls, samples, keep_raw=True):
        x = np.asarray(samples)
        n = x.shape[0]
        mean = x.mean(axis=0)
        if n > 1:
            std = np.sqrt((np.abs(x - mean) ** 2).sum(axis=0) / (n - 1))
        else:
            std = np.zeros(np.shape(mean))
        return cls(mean, std, std / np.sqrt(n), n, x if keep_raw else None)


def sample_config(spec, index, geometry=None, channels=None):
    """Disorder of configuration ``index``: i.i.d. uniform on ``[-1/2, 1/2]``."""
    if not 0 <= index < spec.count:
        raise ValidationError(f"index {index} outside 0..{spec.count - 1}")
    if geometry is None or channels is None:
        model = spec.build_model()
        geometry = spec.geometry(model)
        channels = model.channels
    seq = np.random.SeedSequence(entropy=int(spec.master_seed), spawn_key=(int(index),))
    rng = np.random.default_rng(seq)
    values = rng.uniform(-0.5, 0.5, size=(geometry.ncells, channels))
    return DisorderConfig(values, int(spec.master_seed), int(index))


class EigenCache:
    """Eigensystems keyed by a hash of the Hamiltonian bytes."""

    def __init__(self, maxsize=1):
        self.maxsize = maxsize
        self._store = {}

    @staticmethod
    def key(h):
        data = np.ascontiguousarray(h.data)
        return hashlib.sha256(data.view(np.uint8)).hexdigest()

    def get(self, h):
        k = self.key(h)
        if k not in self._store:
            if len(self._store) >= self.maxsize:
                self._store.pop(next(iter(self._store)))
            self._store[k] = eigh(h)
        return self._store[k]


def _evaluate(task, model, h, cache):
    opt = task.options
    if task.kind == "winding":
        if model.chiral_grading is None:
            raise ValidationError("winding needs a chiral model")
        u = chiral_fermi_unitary(h, model.chiral_grading)
        return np.array([chern_odd(u, opt.get("directions")).value])
    es = cache.get(h)
    levels = np.atleast_1d(np.asarray(opt.get("fermi_levels", [0.0]), dtype=float))
    if task.kind == "chern":
        plane = tuple(opt.get("plane", (0, 1)))
        return np.array([chern_even_from_eigensystem(es, e, plane).value for e in levels])
    if task.kind == "filling":
        return np.array([(es.values <= e).sum() / h.geometry.ncells for e in levels])
    if task.kind == "kubo":
        # shape (components, temperatures, fermi levels); Gamma is paired with T
        temps = np.atleast_1d(np.asarray(opt["temperature"], dtype=float))
        gammas = np.broadcast_to(np.asarray(opt["gamma"], dtype=float), temps.shape)
        out = []
        for i, j in opt.get("components", [(0, 0)]):
            weights = {}
            rows = []
            for t, g in zip(temps, gammas):
                if g not in weights:
                    weights[g] = KuboWeights.compute(h, es, i, j, float(g))
                rows.append([weights[g].conductivity(e, t) for e in levels])
            out.append(rows)
        return np.array(out)
    grid = np.asarray(opt["grid"], dtype=float)
    if task.kind == "dos":
        return dos(es, grid, float(opt.get("delta", 0.01))).values
    if task.kind == "ccc":
        return ccc(h, es, grid, float(opt.get("r", 0.02))).values
    if task.kind == "loclength":
        width = float(opt["width"])
        return np.array([delta_loc_length(window_projection(es, e - width / 2, e + width / 2))
                         for e in grid])
    raise ValidationError(f"unknown task {task.kind!r}")  # pragma: no cover


def run_config(spec, index):
    """Evaluate every task on configuration ``index``; returns ``{task name: array}``."""
    model = spec.build_model()
    geometry = spec.geometry(model)
    config = sample_config(spec, index, geometry, model.channels)
    h = build_hamiltonian(model, geometry, spec.flux_matrix(geometry), config)
    cache = EigenCache()
    return {task.name: _evaluate(task, model, h, cache) for task in spec.tasks}


def _timed(spec, index):
    t0 = time.perf_counter()
    try:
        out = run_config(spec, index)
    except NcfvError as exc:
        return index, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0
    return index, out, None, time.perf_counter() - t0


class EnsembleFailure(NumericalError):
    """One or more configurations failed; ``failures`` maps index to message."""

    def __init__(self, failures):
        self.failures = dict(failures)
        lines = ", ".join(f"{i}: {m}" for i, m in sorted(self.failures.items()))
        super().__init__(f"{len(self.failures)} configuration(s) failed ({lines})")


def run_ensemble(spec, workers=1, keep_raw=True, progress=True, indices=None):
    """Evaluate all tasks on all configurations and average.

    Parameters
    ----------
    spec : EnsembleSpec
    workers : int
        Process count; 1 runs in the calling process. The result is
        bit-identical for every worker count.
    keep_raw : bool
        Retain per-configuration values in the statistics.
    progress : bool
        One line per finished configuration on stderr.
    indices : iterable of int, optional
        Subset of configurations (defaults to all).

    Returns
    -------
    dict of str to EnsembleStats

    Raises
    ------
    EnsembleFailure
        If any configuration raised a library error.
    """
    indices = list(range(spec.count)) if indices is None else sorted(set(indices))
    results, failures = {}, {}

    def record(item):
        index, out, err, wall = item
        if progress:
            status = "ok" if err is None else "FAILED"
            print(f"config {index} {status} {wall:.2f}s", file=sys.stderr, flush=True)
        if err is None:
            results[index] = out
        else:
            failures[index] = err

    if workers <= 1 or len(indices) <= 1:
        for i in indices:
            record(_timed(spec, i))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for item in pool.map(_timed, [spec] * len(indices), indices):
                record(item)
    if failures:
        raise EnsembleFailure(failures)
    return {task.name: EnsembleStats.from_samples([results[i][task.name] for i in indices],
                                                  keep_raw)
            for task in spec.tasks}
