"""Adding-problem benchmark: continuation versus plain SGD.

Each seed fixes the data (1000 train / 100 test sequences of length 10), the
split, the initial weights and the minibatch order, and both methods start
from the same point. The score of a run is the first epoch at which the
last-step test MSE reaches ``target`` (None if not within ``max_epochs``).

Hyperparameters for both methods are chosen by :func:`tune` over the grids
below on tuning seeds that are disjoint from the evaluation seeds;
``scripts/tune_adding.py`` runs it and writes ``benchmarks/adding_grid.csv``.
The winners are frozen in :data:`TUNED_DIFFUSION` and :data:`TUNED_SGD`.
"""

import csv
import itertools
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .activations import DiffusedActivation
from .model import Dims, init_params
from .optimizer import ContinuationSchedule, StepRule, continuation_train, sgd_train
from .tasks import gen_adding, split

__all__ = [
    "AddingSetup",
    "DiffusionSettings",
    "SgdSettings",
    "DIFFUSION_GRID",
    "SGD_GRID",
    "TUNING_SEEDS",
    "EVAL_SEEDS",
    "TUNED_DIFFUSION",
    "TUNED_SGD",
    "RunResult",
    "run_diffusion",
    "run_sgd",
    "tune",
    "paired_comparison",
]

TUNING_SEEDS = (100, 101, 102)
EVAL_SEEDS = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class AddingSetup:
    n_train: int = 1000
    n_test: int = 100
    length: int = 10
    hidden: int = 10
    batch_size: int = 50
    supervision: str = "last"
    init: str = "uniform"
    init_scale: float = 0.1
    target: float = 0.02
    max_epochs: int = 200

    def data(self, seed):
        full = gen_adding(self.n_train + self.n_test, self.length, seed, supervision=self.supervision)
        return split(full, self.n_train, self.n_test, seed)

    def params0(self, seed):
        return init_params(Dims(2, self.hidden, 1), self.init, self.init_scale, seed)


@dataclass(frozen=True)
class DiffusionSettings:
    sigma0: float
    gamma: float
    n_stages: int
    stage_epochs: int
    eta: float
    lam: float
    floor: float = 0.01

    def schedule(self, setup):
        # the sigma = 0 rung gets whatever is left of the epoch budget
        final = setup.max_epochs - self.n_stages * self.stage_epochs
        if final < 0:
            raise ValueError("positive-bandwidth rungs exceed the epoch budget")
        return ContinuationSchedule.geometric(
            self.sigma0,
            self.gamma,
            self.n_stages,
            max_epochs=[self.stage_epochs] * self.n_stages + [final],
            grad_tol=0.0,
            batch_size=setup.batch_size,
        )

    def rule(self):
        return StepRule(self.eta, True, self.floor)


@dataclass(frozen=True)
class SgdSettings:
    lr: float


DIFFUSION_GRID = [
    DiffusionSettings(s0, g, 6, ep, eta, lam)
    for s0, g, ep, eta, lam in itertools.product((1.0, 2.0), (0.5, 0.7), (10, 20), (0.2, 0.4), (0.0, 0.1))
]
SGD_GRID = [SgdSettings(lr) for lr in (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4)]

# frozen output of tune() on TUNING_SEEDS; see benchmarks/adding_grid.csv
TUNED_DIFFUSION = DiffusionSettings(2.0, 0.5, 6, 10, 0.2, 0.0)
TUNED_SGD = SgdSettings(0.2)


@dataclass(frozen=True)
class RunResult:
    method: str
    seed: int
    epochs_to_target: object
    best_test_mse: float
    seconds: float


def run_diffusion(settings, seed, setup=AddingSetup(), act=None):
    act = act or DiffusedActivation("erf")
    train, test = setup.data(seed)
    start = time.perf_counter()
    _, log = continuation_train(
        setup.params0(seed),
        train,
        act,
        settings.schedule(setup),
        settings.rule(),
        settings.lam,
        seed,
        test,
        setup.target,
    )
    return RunResult(
        "diffusion", seed, log.epochs_to(setup.target), float(log.column("test_mse").min()), time.perf_counter() - start
    )


def run_sgd(settings, seed, setup=AddingSetup(), act=None):
    act = act or DiffusedActivation("erf")
    train, test = setup.data(seed)
    start = time.perf_counter()
    _, log = sgd_train(
        setup.params0(seed), train, act, setup.batch_size, settings.lr, setup.max_epochs, seed, test, setup.target
    )
    return RunResult(
        "sgd", seed, log.epochs_to(setup.target), float(log.column("test_mse").min()), time.perf_counter() - start
    )


def median_epochs(results):
    """Median epochs-to-target, a run that never gets there counting as infinite."""
    return float(np.median([math.inf if r.epochs_to_target is None else r.epochs_to_target for r in results]))


def tune(seeds=TUNING_SEEDS, setup=AddingSetup(), csv_path=None, progress=None):
    """Score every grid point on ``seeds``; return the best settings per method.

    Ties on the median are broken by the mean of the finite epoch counts.
    """
    rows = []
    best = {}
    jobs = [("sgd", s, run_sgd) for s in SGD_GRID] + [("diffusion", s, run_diffusion) for s in DIFFUSION_GRID]
    for method, settings, runner in jobs:
        results = [runner(settings, seed, setup) for seed in seeds]
        med = median_epochs(results)
        finite = [r.epochs_to_target for r in results if r.epochs_to_target is not None]
        key = (med, np.mean(finite) if finite else math.inf)
        row = {
            "method": method,
            **{k: v for k, v in asdict(settings).items()},
            "median_epochs": med,
            **{f"epochs_seed{r.seed}": r.epochs_to_target for r in results},
            "seconds": round(sum(r.seconds for r in results), 1),
        }
        rows.append(row)
        if progress:
            progress(row)
        if method not in best or key < best[method][0]:
            best[method] = (key, settings)
    if csv_path:
        columns = []
        for row in rows:
            columns += [c for c in row if c not in columns]
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns)
            writer.writeheader()
            writer.writerows(rows)
    return best["diffusion"][1], best["sgd"][1], rows


def paired_comparison(seeds=EVAL_SEEDS, diffusion=TUNED_DIFFUSION, sgd=TUNED_SGD, setup=AddingSetup()):
    """Run both methods from identical data and initial weights on every seed."""
    diff = [run_diffusion(diffusion, seed, setup) for seed in seeds]
    base = [run_sgd(sgd, seed, setup) for seed in seeds]
    return diff, base
