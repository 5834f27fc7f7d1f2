import numpy as np
import pytest

from backend.attack.apgd import (
    AttackConfig,
    _run,
    apgd_single,
    attack_with_restarts,
    checkpoint_schedule,
    ensemble_best,
    mos_attack,
    project_set,
    read_trace_csv,
    write_trace_csv,
)
from backend.classifier.dataset import LabeledPoint
from backend.classifier.network import ClassifierWeights, predict
from backend.errors import InvalidArgumentError, NumericError
from backend.losses.surrogates import ALL_LOSSES
from backend.objective.scalarization import LossMatrix, SetGradient, grad_objective_at


def constant_model(bias=(2.0, 1.0, 0.0)):
    """Ignores its input: logits are the bias."""
    return ClassifierWeights((2, 3), (np.zeros((3, 2)),), (np.array(bias),))


def linear_model():
    """Logits equal the input, so class 0 wins iff x0 >= x1."""
    return ClassifierWeights((2, 2), (np.eye(2),), (np.zeros(2),))


class TestProjection:
    def test_ball_clamp(self):
        assert project_set([[0.75]], [0.5], 0.1)[0, 0] == pytest.approx(0.6)

    def test_box_clamp_dominates(self):
        assert project_set([[-0.2]], [0.05], 0.1)[0, 0] == 0.0

    def test_feasible_input_unchanged(self, rng):
        x = rng.uniform(size=4)
        X = project_set(x + rng.uniform(-0.3, 0.3, size=(3, 4)), x, 0.1)
        np.testing.assert_array_equal(project_set(X, x, 0.1), X)


class TestCheckpointSchedule:
    def test_fifty_iterations(self):
        assert checkpoint_schedule(50) == [0, 11, 21, 29, 35, 40, 44, 47, 50]

    def test_hundred_iterations(self):
        assert checkpoint_schedule(100) == [0, 22, 41, 57, 70, 80, 87, 93, 99, 100]

    def test_single_iteration(self):
        assert checkpoint_schedule(1) == [0, 1]

    def test_strictly_increasing(self):
        for n in range(1, 200):
            schedule = checkpoint_schedule(n)
            assert schedule[0] == 0 and schedule[-1] == n
            assert all(a < b for a, b in zip(schedule, schedule[1:]))

    def test_rejects_zero(self):
        with pytest.raises(InvalidArgumentError):
            checkpoint_schedule(0)


class TestAttackConfig:
    def test_default_step_size(self):
        assert AttackConfig(epsilon=0.05).step_size == pytest.approx(0.1)
        assert AttackConfig(epsilon=0.05, eta0=0.3).step_size == 0.3

    @pytest.mark.parametrize(
        "changes",
        [{"epsilon": -0.1}, {"rho": 1.0}, {"alpha": 0.0}, {"K": 0}, {"n_iter": 0}, {"step_rule": "adam"}, {"mu": 0.0}],
    )
    def test_validation(self, changes):
        with pytest.raises(InvalidArgumentError):
            AttackConfig(**changes).validate()

    def test_from_dict_ignores_unknown_keys(self):
        cfg = AttackConfig.from_dict({"epsilon": 0.2, "K": 3, "unused": 1, "losses": "MOS-3"})
        assert (cfg.epsilon, cfg.K, cfg.losses) == (0.2, 3, (0, 1, 2))

    def test_replace_validates(self):
        with pytest.raises(InvalidArgumentError):
            AttackConfig().replace(K=0)


class TestAttackInvariants:
    def test_seeded_runs(self, tiny_model):
        rng = np.random.default_rng(5)
        cfg0 = AttackConfig(epsilon=0.1, n_iter=30, record_iterates=True)
        schedule = set(checkpoint_schedule(cfg0.n_iter))
        for seed in range(100):
            x = rng.uniform(size=2)
            point = LabeledPoint(x, int(rng.integers(0, 3)))
            cfg = cfg0.replace(seed=seed, K=int(rng.integers(1, 5)))
            outcome = mos_attack(tiny_model, point, cfg)
            assert not outcome.failed

            for X in outcome.iterates:
                assert np.all(np.abs(X - x) <= cfg.epsilon + 1e-12)
                assert np.all(X >= -1e-12) and np.all(X <= 1.0 + 1e-12)

            g = [row.g for row in outcome.trace]
            g_max = [row.g_max for row in outcome.trace]
            eta = [row.eta for row in outcome.trace]
            assert all(b >= a for a, b in zip(g_max, g_max[1:]))
            assert g_max[-1] == pytest.approx(max(g), abs=1e-12)

            for t in range(1, len(eta)):
                if eta[t] != eta[t - 1]:
                    assert eta[t] == eta[t - 1] / 2.0
                    assert (t - 1) in schedule and (t - 1) in outcome.halvings

            for k, X_restart in outcome.restart_iterates.items():
                best = g_max[k]
                t_star = min(t for t in range(k + 1) if g[t] == best)
                np.testing.assert_array_equal(X_restart, outcome.iterates[t_star])

            best = grad_objective_at(tiny_model, x + outcome.best_delta, point.y, cfg.losses, cfg.mu)
            assert best.value == pytest.approx(outcome.g_max, abs=1e-9)

    @pytest.mark.parametrize("seed", range(20))
    def test_single_member_single_loss_reproduces_apgd(self, tiny_model, seed):
        rng = np.random.default_rng(100 + seed)
        point = LabeledPoint(rng.uniform(size=2), int(rng.integers(0, 3)))
        cfg = AttackConfig(epsilon=0.1, n_iter=50, K=1, losses=(0,), mu=float(rng.choice([0.1, 1.0, 10.0])), seed=seed, record_iterates=True)
        mos = mos_attack(tiny_model, point, cfg)
        single = apgd_single(tiny_model, point, 0, cfg)
        assert len(mos.iterates) == len(single.iterates)
        for a, b in zip(mos.iterates, single.iterates):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)
        assert mos.success == single.success
        assert mos.halvings == single.halvings

    def test_constant_model(self):
        model = constant_model()
        point = LabeledPoint(np.array([0.3, 0.9]), 0)
        outcome = mos_attack(model, point, AttackConfig(n_iter=20, K=3, record_iterates=True))
        assert not outcome.success
        assert len({row.g for row in outcome.trace}) == 1
        for X in outcome.iterates:
            assert np.all(np.abs(X - point.x) <= 0.1 + 1e-12)

    def test_zero_budget_returns_clean_input(self, tiny_model, rng):
        cfg = AttackConfig(epsilon=0.0, n_iter=10, K=2)
        for _ in range(10):
            point = LabeledPoint(rng.uniform(size=2), int(rng.integers(0, 3)))
            outcome = mos_attack(tiny_model, point, cfg)
            np.testing.assert_array_equal(outcome.final_delta, np.zeros((2, 2)))
            assert outcome.success == (predict(tiny_model, point.x) != point.y)

    @pytest.mark.parametrize("K", [2, 3])
    def test_permutation_equivariance(self, tiny_model, K):
        rng = np.random.default_rng(K)
        point = LabeledPoint(np.array([0.4, 0.6]), 1)
        init = rng.uniform(-0.1, 0.1, size=(K, 2))
        perm = rng.permutation(K)
        cfg = AttackConfig(n_iter=20, K=K)
        a = mos_attack(tiny_model, point, cfg, init_deltas=init)
        b = mos_attack(tiny_model, point, cfg, init_deltas=init[perm])
        np.testing.assert_allclose(b.final_delta, a.final_delta[perm], atol=1e-9)
        assert a.success == b.success

    def test_early_stop(self):
        model = linear_model()
        point = LabeledPoint(np.array([0.52, 0.5]), 0)
        outcome = mos_attack(model, point, AttackConfig(n_iter=50, K=2, losses=(0, 1), early_stop=True))
        assert outcome.success
        assert outcome.trace[-1].iteration == outcome.success_iteration
        assert predict(model, outcome.adversarial) != point.y

    def test_success_is_checked_at_every_iteration(self):
        model = linear_model()
        point = LabeledPoint(np.array([0.52, 0.5]), 0)
        outcome = mos_attack(model, point, AttackConfig(n_iter=20, K=1, losses=(0,)))
        assert outcome.success
        assert outcome.trace[outcome.success_iteration].success
        assert all(row.success for row in outcome.trace[outcome.success_iteration :])

    def test_sign_steps_stay_feasible(self, tiny_model, toy_point):
        cfg = AttackConfig(n_iter=15, K=2, step_rule="sign", record_iterates=True)
        outcome = mos_attack(tiny_model, toy_point, cfg)
        for X in outcome.iterates:
            assert np.all(np.abs(X - toy_point.x) <= cfg.epsilon + 1e-12)

    def test_final_losses_are_per_loss_maxima(self, tiny_model, toy_point):
        outcome = mos_attack(tiny_model, toy_point, AttackConfig(n_iter=5, K=3))
        assert outcome.final_matrix.shape == (8, 3)
        for i, loss in enumerate(ALL_LOSSES):
            assert outcome.final_losses[int(loss)] == outcome.final_matrix[i].max()


def scripted(values, K=1):
    """Evaluator that replays objective values and never moves or succeeds."""
    it = iter(values)

    def evaluate(X):
        value = next(it)
        return SetGradient(
            value=value,
            matrix=LossMatrix(np.full((1, K), value)),
            grads=np.zeros_like(X),
            logits=np.tile([5.0, 0.0, 0.0], (X.shape[0], 1)),
        )

    return evaluate


class TestCheckpointConditions:
    """First checkpoint at n_iter=50 is iteration 11, a window of 11 with rho * 11 = 8.25."""

    def run(self, tiny_model, head):
        values = head + [head[-1]] * (51 - len(head))
        point = LabeledPoint(np.array([0.5, 0.5]), 0)
        return _run(tiny_model, point, AttackConfig(n_iter=50), scripted(values), (0,), 1)

    def test_enough_increases_keep_step_size(self, tiny_model):
        head = [0.0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 5, 4]
        outcome = self.run(tiny_model, head)
        assert 11 not in outcome.halvings
        assert outcome.trace[12].eta == outcome.trace[11].eta

    def test_too_few_increases_halve(self, tiny_model):
        head = [0.0, 1, 2, 3, 4, 5, 6, 7, 8, 7, 6, 5]
        outcome = self.run(tiny_model, head)
        assert 11 in outcome.halvings
        assert outcome.trace[12].eta == outcome.trace[11].eta / 2

    def test_stalled_best_value_halves(self, tiny_model):
        head = [10.0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9.5]
        outcome = self.run(tiny_model, head)
        assert 11 in outcome.halvings
        assert outcome.trace[11].g_max == 10.0

    def test_halvings_only_at_checkpoints(self, tiny_model):
        outcome = self.run(tiny_model, [0.0])
        assert set(outcome.halvings) <= set(checkpoint_schedule(50))
        assert outcome.halvings == [11, 21, 29, 35, 40, 44, 47]

    def test_numeric_failure_is_recorded(self, tiny_model, toy_point):
        calls = {"n": 0}
        inner = scripted([0.0] * 51)

        def evaluate(X):
            calls["n"] += 1
            if calls["n"] == 3:
                raise NumericError("non-finite loss or gradient", loss_id=4)
            return inner(X)

        outcome = _run(tiny_model, toy_point, AttackConfig(n_iter=10), evaluate, (0,), 1)
        assert outcome.failed
        assert outcome.failure_iteration == 2
        assert "loss id 4" in outcome.message


class TestRestartsAndEnsembles:
    def test_restarts_keep_first_best(self):
        point = LabeledPoint(np.array([0.3, 0.9]), 0)
        cfg = AttackConfig(n_iter=5, K=1, restarts=3, seed=11)
        outcome = attack_with_restarts(constant_model(), point, cfg, loss=0)
        assert not outcome.success
        assert outcome.restart == 0 and outcome.seed == 11

    def test_restarts_return_first_success(self):
        point = LabeledPoint(np.array([0.52, 0.5]), 0)
        outcome = attack_with_restarts(linear_model(), point, AttackConfig(n_iter=10, restarts=4, losses=(1,)))
        assert outcome.success and outcome.restart == 0

    def test_ensemble_best(self, tiny_model, toy_point):
        fail = mos_attack(constant_model(), LabeledPoint(np.array([0.3, 0.9]), 0), AttackConfig(n_iter=2))
        win = mos_attack(linear_model(), LabeledPoint(np.array([0.52, 0.5]), 0), AttackConfig(n_iter=10, losses=(0, 1)))
        assert not ensemble_best([fail, fail])
        assert ensemble_best([fail, win])
        assert not ensemble_best([])

    def test_trace_csv(self, tiny_model, toy_point, tmp_path):
        outcome = mos_attack(tiny_model, toy_point, AttackConfig(n_iter=6, K=2))
        path = write_trace_csv(outcome, tmp_path / "trace.csv")
        assert path.read_text().splitlines()[0] == "# mosattack-trace v1"
        frame = read_trace_csv(path)
        assert list(frame.columns) == ["iteration", "g", "g_max", "eta", "success"]
        assert frame["iteration"].tolist() == list(range(7))
        assert frame["g"].tolist() == [row.g for row in outcome.trace]
