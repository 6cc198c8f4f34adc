import math

import numpy as np
import pytest

from diffrnn.activations import DiffusedActivation
from diffrnn.cost import diffused_cost
from diffrnn.exceptions import DivergenceError, DomainError
from diffrnn.grad import gradient
from diffrnn.model import Dims, RnnParams, init_params
from diffrnn.optimizer import (
    LOG_COLUMNS,
    ContinuationSchedule,
    LogRow,
    StepRule,
    TrainLog,
    ackley,
    continuation_train,
    count_local_minima,
    grid_diffuse_demo,
    mc_diffused_gradient,
    plain_gradient_batched,
    sgd_train,
    step_size,
)
from diffrnn.tasks import gen_adding
from oracles import tiny_instance

ERF = DiffusedActivation("erf")


def strip_wall(log):
    return [r[:-1] for r in (tuple(vars(row).values()) for row in log)]


class TestStepRule:
    def test_examples(self):
        assert step_size(StepRule(eta=0.1), 2.0) == pytest.approx(0.2, rel=1e-15)
        assert step_size(StepRule(eta=0.1, floor=1e-3), 0.0) == 1e-3
        rule = StepRule(eta=0.3, floor=1e-4)
        assert step_size(rule, 0.5) == step_size(rule, 1.0) / 2

    def test_validation(self):
        with pytest.raises(DomainError):
            StepRule(eta=0.0)
        with pytest.raises(DomainError):
            StepRule(floor=0.0)
        with pytest.raises(DomainError):
            step_size(StepRule(), -1.0)


class TestSchedule:
    def test_geometric_default(self):
        s = ContinuationSchedule.geometric()
        assert s.sigmas == (2.0, 1.0, 0.5, 0.25, 0.125, 0.0625, 0.0)
        assert s.total_epochs == 7 * 50

    def test_validation(self):
        with pytest.raises(DomainError):
            ContinuationSchedule((1.0, 1.0))
        with pytest.raises(DomainError):
            ContinuationSchedule((1.0, -0.5))
        with pytest.raises(DomainError):
            ContinuationSchedule((1.0, 0.0), max_epochs=(1, 2, 3))
        with pytest.raises(DomainError):
            ContinuationSchedule((1.0,), batch_size=0)

    def test_per_stage_budget(self):
        s = ContinuationSchedule((1.0, 0.0), max_epochs=(2, 5))
        assert s.max_epochs == (2, 5) and s.total_epochs == 7


class TestTrainLog:
    def test_ordering(self):
        log = TrainLog()
        log.append(LogRow(0, 1, 1.0, 0.1, 1.0, 0.5, 0.1, 1.0))
        with pytest.raises(ValueError):
            log.append(LogRow(0, 1, 1.0, 0.1, 1.0, 0.5, 0.1, 2.0))
        log.append(LogRow(1, 2, 0.5, 0.05, 0.9, 0.01, 0.1, 3.0))
        assert log.epochs_to(0.02) == 2
        assert log.epochs_to(0.001) is None

    def test_csv_round_trip(self, tmp_path):
        p, d = tiny_instance()
        _, log = continuation_train(p, d, ERF, ContinuationSchedule((1.0, 0.0), 2), StepRule(), test=d)
        log.to_csv(tmp_path / "log.csv")
        header = (tmp_path / "log.csv").read_text().splitlines()[0]
        assert header == "stage,epoch,sigma,step,train_cost,test_mse,grad_norm,wall_ms"
        assert tuple(header.split(",")) == LOG_COLUMNS
        back = TrainLog.from_csv(tmp_path / "log.csv")
        assert back.rows == log.rows


class TestContinuation:
    def test_single_stage_is_plain_gd(self):
        p, d = tiny_instance(seed=3)
        sched = ContinuationSchedule((0.0,), max_epochs=8, grad_tol=0.0)
        lr = 0.2
        pc, _ = continuation_train(p, d, ERF, sched, StepRule(eta=1.0, normalize=False, floor=lr), lam=1.0)
        ps, _ = sgd_train(p, d, ERF, batch_size=len(d), lr=lr, epochs=8)
        np.testing.assert_allclose(pc.to_vector(), ps.to_vector(), rtol=1e-13, atol=1e-15)
        # and by hand
        q = p
        for _ in range(8):
            g = gradient(q, d, ERF, 0.0, 0.0)
            q = RnnParams(*(b - lr / len(d) * gb for b, gb in zip(q.blocks(), g.blocks())))
        np.testing.assert_allclose(pc.to_vector(), q.to_vector(), rtol=1e-13, atol=1e-15)

    def test_warm_start_chain(self):
        p, d = tiny_instance(seed=1)
        rule = StepRule(eta=0.2)
        both, log = continuation_train(p, d, ERF, ContinuationSchedule((1.0, 0.5), 3, grad_tol=0.0), rule)
        first, _ = continuation_train(p, d, ERF, ContinuationSchedule((1.0,), 3, grad_tol=0.0), rule)
        second, _ = continuation_train(first, d, ERF, ContinuationSchedule((0.5,), 3, grad_tol=0.0), rule)
        assert both.equals(second)
        assert [r.stage for r in log] == [0, 0, 0, 1, 1, 1]
        assert [r.epoch for r in log] == [1, 2, 3, 4, 5, 6]

    def test_step_annealing(self):
        p, d = tiny_instance(seed=2)
        sched = ContinuationSchedule.geometric(2.0, 0.5, 6, max_epochs=2, grad_tol=0.0)
        rule = StepRule(eta=0.1, floor=1e-3)
        _, log = continuation_train(p, d, ERF, sched, rule)
        steps = log.column("step")
        assert np.all(np.diff(steps) <= 0)
        for row in log:
            assert row.step == max(0.1 * row.sigma, 1e-3)

    def test_deterministic(self):
        data = gen_adding(40, 5, seed=1)
        p = init_params(Dims(2, 4, 1), seed=1)
        sched = ContinuationSchedule((1.0, 0.3, 0.0), 2, batch_size=8)
        a = continuation_train(p, data, ERF, sched, StepRule(eta=0.1), seed=5, test=data)
        b = continuation_train(p, data, ERF, sched, StepRule(eta=0.1), seed=5, test=data)
        assert a[0].equals(b[0])
        assert strip_wall(a[1]) == strip_wall(b[1])
        c = continuation_train(p, data, ERF, sched, StepRule(eta=0.1), seed=6, test=data)
        assert not a[0].equals(c[0])

    def test_cost_monotone_small_steps(self):
        p, d = tiny_instance(seed=4)
        sched = ContinuationSchedule((1.0, 0.5, 0.0), 10, grad_tol=0.0)
        _, log = continuation_train(p, d, ERF, sched, StepRule(eta=0.05, normalize=False, floor=0.02))
        for stage in range(3):
            cost = log.column("train_cost")[log.column("stage") == stage]
            assert np.all(np.diff(cost) <= 1e-15)

    def test_grad_tolerance_stops_stage(self):
        p, d = tiny_instance()
        _, log = continuation_train(p, d, ERF, ContinuationSchedule((1.0, 0.0), 5, grad_tol=1e9), StepRule())
        assert [r.stage for r in log] == [0, 1]

    def test_stop_at(self):
        p, d = tiny_instance()
        _, log = continuation_train(p, d, ERF, ContinuationSchedule((1.0, 0.0), 5), StepRule(), test=d, stop_at=10.0)
        assert len(log) == 1

    def test_divergence_reports_location(self):
        d = gen_adding(4, 5, seed=0)
        p = init_params(Dims(2, 2, 1), "zeros")
        p = RnnParams(p.a, p.b, p.m0, np.full((2, 2), 1.5e308), p.V, p.W)
        with pytest.raises(DivergenceError) as info:
            continuation_train(p, d, ERF, ContinuationSchedule((1.0, 0.0), 2), StepRule())
        assert info.value.location["stage"] == 0 and info.value.location["epoch"] == 1
        with pytest.raises(DivergenceError):
            sgd_train(p, d, ERF, 2, 0.1, 1)


class TestSgd:
    def test_zero_lr(self):
        p, d = tiny_instance()
        out, log = sgd_train(p, d, ERF, 1, 0.0, 3)
        assert out.equals(p) and len(log) == 3

    def test_cost_decreases(self):
        data = gen_adding(60, 6, seed=2, supervision="last")
        p = init_params(Dims(2, 5, 1), "uniform", 0.1, 2)
        _, log = sgd_train(p, data, ERF, 10, 0.05, 10, seed=1)
        cost = log.column("train_cost")
        from diffrnn.cost import plain_cost

        assert cost[-1] < plain_cost(p, data, ERF)
        assert cost[-1] < cost[0]

    def test_batch_validation(self):
        p, d = tiny_instance()
        with pytest.raises(DomainError):
            sgd_train(p, d, ERF, 0, 0.1, 1)
        with pytest.raises(DomainError):
            sgd_train(p, d, ERF, 3, 0.1, 1)


class TestNoiseInjection:
    def test_batched_plain_gradient(self):
        p, d = tiny_instance(seed=1)
        stack = tuple(np.stack([b, 2 * b]) for b in p.blocks())
        got = plain_gradient_batched(stack, d, ERF)
        for j, scale in enumerate((1.0, 2.0)):
            q = RnnParams(*(scale * b for b in p.blocks()))
            want = gradient(q, d, ERF, 0.0, 0.0).blocks()
            for g, w in zip(got, want):
                np.testing.assert_allclose(g[j], w, rtol=1e-12, atol=1e-14)

    def test_vanishing_noise(self):
        p, d = tiny_instance(seed=2)
        g = mc_diffused_gradient(p, d, ERF, 1e-300, n_samples=1)
        np.testing.assert_allclose(g.to_vector(), gradient(p, d, ERF, 0.0, 0.0).to_vector(), rtol=1e-12, atol=1e-14)

    def test_variance_halves(self):
        p, d = tiny_instance(seed=0)
        draw = lambda J, seeds: np.array(  # noqa: E731
            [mc_diffused_gradient(p, d, ERF, 0.3, n_samples=J, seed=s).to_vector() for s in seeds]
        )
        small = draw(100, range(200))
        big = draw(200, range(1000, 1200))
        ratio = np.median(small.var(axis=0, ddof=1) / big.var(axis=0, ddof=1))
        assert 1.6 < ratio < 2.5

    def test_deterministic_and_guards(self):
        p, d = tiny_instance()
        a = mc_diffused_gradient(p, d, ERF, 0.3, n_samples=50, seed=3)
        b = mc_diffused_gradient(p, d, ERF, 0.3, n_samples=50, seed=3)
        np.testing.assert_array_equal(a.to_vector(), b.to_vector())
        with pytest.raises(DomainError):
            mc_diffused_gradient(p, d, ERF, 0.0)
        with pytest.raises(DomainError):
            mc_diffused_gradient(p, d, ERF, 0.3, n_samples=0)


class TestGridDemo:
    def test_identity_and_constant(self):
        x = np.linspace(-5, 5, 201)
        vals = ackley(x[:, None])
        out = grid_diffuse_demo(vals, [0.0, 1.0], spacing=x[1] - x[0])
        np.testing.assert_array_equal(out[0], vals)
        const = grid_diffuse_demo(np.full((30, 40), 3.5), [0.5, 2.0], spacing=0.1)
        for c in const:
            np.testing.assert_allclose(c, 3.5, rtol=1e-14)

    def test_ackley_values(self):
        assert ackley(np.zeros(2)) == pytest.approx(0.0, abs=1e-14)
        assert ackley(np.array([1.0])) == pytest.approx(-20 * math.exp(-0.2) - math.e + 20 + math.e)

    def test_large_sigma_single_minimum(self):
        x = np.linspace(-5, 5, 1001)
        vals = ackley(x[:, None])
        assert count_local_minima(vals) > 5
        smooth = grid_diffuse_demo(vals, [2.0], spacing=x[1] - x[0])[0]
        assert count_local_minima(smooth) == 1
        assert abs(x[np.argmin(smooth)]) < 0.05

    def test_two_dimensional(self):
        g = np.linspace(-5, 5, 201)
        X, Y = np.meshgrid(g, g, indexing="ij")
        vals = ackley(np.stack([X, Y], axis=-1))
        assert count_local_minima(vals) > 20
        assert count_local_minima(grid_diffuse_demo(vals, [2.0], spacing=g[1] - g[0])[0]) == 1

    def test_too_coarse(self):
        with pytest.raises(DomainError):
            grid_diffuse_demo(np.zeros(10), [0.5], spacing=1.0)
        with pytest.raises(DomainError):
            grid_diffuse_demo(np.zeros((2, 2, 2)), [1.0])


class TestPairedRuns:
    """Empirical comparisons on small seeded adding instances."""

    @staticmethod
    def instance(seed):
        return init_params(Dims(2, 5, 1), "uniform", 0.1, seed), gen_adding(64, 6, seed, supervision="last")

    def test_continuation_beats_plain_gd(self):
        from diffrnn.cost import plain_cost

        rule = StepRule(eta=0.5, normalize=True, floor=0.05)
        start, cont, same_rule, gd = [], [], [], []
        for seed in range(5):
            p0, d = self.instance(seed)
            pc, log = continuation_train(p0, d, ERF, ContinuationSchedule((2.0, 1.0, 0.5, 0.1, 0.0), 20, grad_tol=0.0), rule, lam=0.0)
            pz, _ = continuation_train(p0, d, ERF, ContinuationSchedule((0.0,), 100, grad_tol=0.0), rule, lam=0.0)
            pg, _ = sgd_train(p0, d, ERF, len(d), 0.5, 100)
            start.append(plain_cost(p0, d, ERF))
            cont.append(plain_cost(pc, d, ERF))
            same_rule.append(plain_cost(pz, d, ERF))
            gd.append(plain_cost(pg, d, ERF))
            assert len(log) == 100
        med = np.median
        assert med(cont) <= med(start)
        assert med(cont) <= med(same_rule)
        assert med(cont) <= med(gd)


@pytest.fixture(scope="module")
def init_outcomes():
    """Final test MSE over 5 inits drawn from a wide Gaussian, fixed data."""
    from diffrnn.cost import mse
    from diffrnn.tasks import split

    train, test = split(gen_adding(320, 6, 0, supervision="last"), 256, 64, 0)
    sched = ContinuationSchedule.geometric(1.0, 0.5, 6, max_epochs=[20] * 6 + [100], grad_tol=0.0, batch_size=32)
    cont, sgd = [], {0.1: [], 0.3: []}
    for seed in range(100, 105):
        p0 = init_params(Dims(2, 5, 1), "gaussian", 1.0, seed)
        pc, _ = continuation_train(p0, train, ERF, sched, StepRule(0.4, True, 0.01), lam=0.0, seed=seed)
        cont.append(mse(pc, test, ERF))
        for lr in sgd:
            ps, _ = sgd_train(p0, train, ERF, 32, lr, 220, seed=seed)
            sgd[lr].append(mse(ps, test, ERF))
    return np.array(cont), {k: np.array(v) for k, v in sgd.items()}


@pytest.mark.slow
class TestInitRobustness:
    def test_worst_case_better(self, init_outcomes):
        cont, sgd = init_outcomes
        assert cont.max() < min(v.max() for v in sgd.values())
        assert np.median(cont) < min(np.median(v) for v in sgd.values())

    @pytest.mark.xfail(reason="IQR ordering flips with the shuffling seed; see ledger", strict=False)
    def test_interquartile_range_smaller(self, init_outcomes):
        cont, sgd = init_outcomes
        iqr = lambda v: np.subtract(*np.percentile(v, [75, 25]))  # noqa: E731
        assert all(iqr(cont) < iqr(v) for v in sgd.values())
