import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import separable_groups
from qgen.errors import ContractViolation, SchemaVersionError, TrainingDiverged
from qgen.scorer import (
    FEATURE_NAMES,
    N_FEATURES,
    RankTrainConfig,
    ScorerModel,
    TrainingGroup,
    extract_features,
    fit,
    group_gradient,
    group_loss,
    kl_divergence,
    softmax_scaled,
    train,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def _pad(rows):
    X = np.zeros((len(rows), N_FEATURES))
    X[:, : len(rows[0])] = rows
    return X


def _group(X, r):
    k = len(r)
    return TrainingGroup("c", "a", tuple(f"q{i}" for i in range(k)), "q", np.asarray(r, float), np.asarray(X, float))


class TestDistributions:
    def test_softmax_example(self):
        p = softmax_scaled([100, 200, 300], 1e-3)
        assert p == pytest.approx([0.300609605356, 0.332224993533, 0.367165401111], abs=1e-9)

    def test_softmax_trivial_cases(self):
        assert softmax_scaled([0, 0, 0], 3.7) == pytest.approx([1 / 3] * 3)
        assert list(softmax_scaled([5], 1.0)) == [1.0]

    def test_kl_examples(self):
        assert kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.143841036226, abs=1e-10)
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)

    def test_kl_rejects_non_distributions(self):
        with pytest.raises(ContractViolation):
            kl_divergence([0.5, 0.6], [0.5, 0.5])
        with pytest.raises(ContractViolation):
            kl_divergence([0.5, 0.5], [1.0, 0.0])
        with pytest.raises(ContractViolation):
            kl_divergence([1.0], [0.5, 0.5])

    def test_softmax_rejects_bad_input(self):
        with pytest.raises(ContractViolation):
            softmax_scaled([1.0], 0.0)
        with pytest.raises(ContractViolation):
            softmax_scaled([], 1.0)

    @given(arrays(float, st.integers(1, 12), elements=finite), st.floats(1e-4, 10))
    def test_softmax_sums_to_one_and_matches_oracle(self, v, alpha):
        p = softmax_scaled(v, alpha)
        assert abs(p.sum() - 1) <= 1e-9
        assert np.allclose(p, [float(x) for x in oracles.mp_softmax(v, alpha)], atol=1e-12)

    @given(arrays(float, st.integers(1, 12), elements=finite), st.floats(-100, 100), st.floats(1e-3, 10))
    def test_shift_invariance(self, v, c, alpha):
        assert np.allclose(softmax_scaled(v, alpha), softmax_scaled(v + c, alpha), atol=1e-9)

    @given(st.lists(st.integers(-2000, 2000), min_size=2, max_size=12, unique=True), st.floats(1e-4, 10))
    def test_argmax_preserved(self, ints, alpha):
        # gaps of at least 0.5 stay resolvable after scaling
        v = np.asarray(ints) * 0.5
        assert int(np.argmax(softmax_scaled(v, alpha))) == int(np.argmax(v))

    @given(arrays(float, st.integers(1, 10), elements=st.floats(-20, 20)), arrays(float, 10, elements=st.floats(-20, 20)))
    def test_kl_nonneg_and_self_zero(self, a, b):
        p = softmax_scaled(a, 1.0)
        q = softmax_scaled(b[: len(a)], 1.0)
        assert kl_divergence(p, p) == 0.0 or kl_divergence(p, p) < 1e-15
        assert kl_divergence(p, q) >= 0


class TestLoss:
    X3 = _pad([[1, 0, 0.5], [0, 1, 0.2], [0.3, 0.3, 1]])
    PHI3 = np.array([200.0, -100.0, 50.0] + [0.0] * (N_FEATURES - 3))
    R3 = [0.9, 0.2, 0.5]

    def test_three_candidate_fixture(self):
        cfg = RankTrainConfig()
        loss = group_loss(ScorerModel(self.PHI3), _group(self.X3, self.R3), cfg)
        assert loss == pytest.approx(0.00780656564487239, abs=1e-12)
        oracle = oracles.mp_group_loss(self.PHI3, self.X3, self.R3, 1e-3, 1e-2)
        assert loss == pytest.approx(float(oracle), abs=1e-14)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        cfg = RankTrainConfig()
        for _ in range(5):
            k = int(rng.integers(2, 8))
            X = rng.normal(size=(k, N_FEATURES))
            r = rng.uniform(0, 1, size=k)
            phi = rng.normal(size=N_FEATURES) / cfg.alpha_p
            analytic = group_gradient(ScorerModel(phi), _group(X, r), cfg)
            fd = np.array(oracles.central_difference_gradient(phi, X, r, cfg.alpha_p, cfg.alpha_r))
            scale = np.maximum(np.abs(fd), 1e-12)
            assert np.all(np.abs(analytic - fd) / scale < 1e-4)

    def test_zero_gradient_when_matched(self):
        # alpha_p * X phi == alpha_r * r  =>  p == q and the gradient vanishes
        X = _pad([[1.0], [2.0], [3.0]])
        r = np.array([0.1, 0.2, 0.3])
        phi = np.zeros(N_FEATURES)
        phi[0] = 0.1 * 1e-2 / 1e-3
        cfg = RankTrainConfig()
        g = group_gradient(ScorerModel(phi), _group(X, r), cfg)
        assert group_loss(ScorerModel(phi), _group(X, r), cfg) < 1e-15
        assert np.max(np.abs(g)) < 1e-12

    def test_zero_phi_unequal_targets_positive(self):
        X = _pad([[1.0], [0.0], [0.5]])
        assert group_loss(ScorerModel.zeros(), _group(X, [0.9, 0.1, 0.4]), RankTrainConfig()) > 0
        assert group_loss(ScorerModel.zeros(), _group(X, [0.4, 0.4, 0.4]), RankTrainConfig()) == 0.0

    def test_feature_scaling_chain_rule(self):
        # doubling X while halving phi leaves p unchanged and doubles the gradient
        rng = np.random.default_rng(3)
        cfg = RankTrainConfig()
        X = rng.normal(size=(5, N_FEATURES))
        r = rng.uniform(size=5)
        phi = rng.normal(size=N_FEATURES) / cfg.alpha_p
        g1 = group_gradient(ScorerModel(phi), _group(X, r), cfg)
        g2 = group_gradient(ScorerModel(phi / 2), _group(2 * X, r), cfg)
        assert np.allclose(g2, 2 * g1, rtol=1e-10, atol=1e-15)

    def test_needs_two_candidates(self):
        with pytest.raises(ContractViolation):
            group_loss(ScorerModel.zeros(), _group(_pad([[1.0]]), [0.5]), RankTrainConfig())


class TestFeatures:
    def test_length_and_names(self):
        x = extract_features("Why did the king cry?", "The king cried.", "he was sad")
        assert x.shape == (N_FEATURES,) == (len(FEATURE_NAMES),)
        assert x[FEATURE_NAMES.index("bias")] == 1.0
        assert x[FEATURE_NAMES.index("wh_why")] == 1.0
        assert sum(x[5:13]) == 1.0

    def test_bounded(self):
        x = extract_features(" ".join(["word"] * 100), "context", "answer")
        assert np.all((x >= 0) & (x <= 1))
        assert x[FEATURE_NAMES.index("question_length")] == 1.0
        assert x[FEATURE_NAMES.index("wh_other")] == 1.0

    def test_coverage_and_novelty(self):
        x = extract_features("what did tom paint", "tom lived near a hill", "painted a cup")
        assert x[FEATURE_NAMES.index("answer_coverage")] == 0.0
        # "what", "did", "paint" are novel, "tom" is in the context
        assert x[FEATURE_NAMES.index("question_novelty")] == pytest.approx(3 / 4)


class TestTraining:
    def test_uniform_targets_keep_phi_near_zero(self):
        rng = np.random.default_rng(0)
        groups = [_group(rng.normal(size=(4, N_FEATURES)), np.full(4, 0.5)) for _ in range(10)]
        model, trace = fit(groups, RankTrainConfig(epochs=50))
        # loss at phi = 0 is exactly zero, so the best iterate is the start
        assert trace.losses[0] == pytest.approx(0.0, abs=1e-15)
        assert np.allclose(model.phi, 0.0)

    def test_loss_decreases_and_best_is_kept(self):
        groups = separable_groups(30, seed=2)
        model, trace = fit(groups, RankTrainConfig(epochs=100))
        assert trace.losses[-1] < trace.losses[0]
        assert trace.running_min[-1] == min(trace.losses)
        cfg = RankTrainConfig()
        best = np.mean([group_loss(model, g, cfg) for g in groups])
        assert best == pytest.approx(min(trace.losses), rel=1e-9, abs=1e-15)

    def test_separable_fixture_argmax_agreement(self):
        groups = separable_groups(200, seed=0)
        for g in groups:
            # brute-force check that the construction gives a unique top target
            top = max(g.targets)
            assert sum(t == top for t in g.targets) == 1
        model = train(groups)
        hits = sum(int(np.argmax(model.scores(g.features))) == int(np.argmax(g.targets)) for g in groups)
        assert hits / len(groups) >= 0.95

    def test_deterministic(self):
        groups = separable_groups(20, seed=5)
        a = train(groups, RankTrainConfig(epochs=30))
        b = train(groups, RankTrainConfig(epochs=30))
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())

    def test_minibatch_seeded(self):
        groups = separable_groups(20, seed=5)
        cfg = RankTrainConfig(epochs=10, batch_size=4, rng_seed=9)
        assert np.array_equal(train(groups, cfg).phi, train(groups, cfg).phi)

    def test_divergence_is_reported(self):
        # huge inputs overflow to inf and the run stops with a hint
        X = np.zeros((2, N_FEATURES))
        X[0, 0] = 1e308
        X[1, 0] = -1e308
        with pytest.raises(TrainingDiverged, match="learning rate"):
            fit([_group(X, [1.0, 0.0])], RankTrainConfig(learning_rate=1e6, epochs=5))

    def test_rejects_singleton_groups(self):
        with pytest.raises(ContractViolation):
            fit([_group(_pad([[1.0]]), [0.5])])

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 1000))
    def test_fingerprint_recorded(self, seed):
        groups = separable_groups(3, seed=seed)
        model = train(groups, RankTrainConfig(epochs=2))
        assert model.trained_on.startswith("sha256:")


class TestModelIO:
    def test_round_trip(self, tmp_path):
        m = ScorerModel(np.arange(N_FEATURES, dtype=float) / 7, trained_on="sha256:x")
        m.save(tmp_path / "m.json")
        back = ScorerModel.load(tmp_path / "m.json")
        assert np.array_equal(back.phi, m.phi) and back.trained_on == m.trained_on

    def test_schema_mismatch(self, tmp_path):
        d = ScorerModel.zeros().to_dict()
        d["feature_schema_version"] = 99
        (tmp_path / "m.json").write_text(json.dumps(d))
        with pytest.raises(SchemaVersionError):
            ScorerModel.load(tmp_path / "m.json")

    def test_wrong_length(self):
        with pytest.raises(ContractViolation):
            ScorerModel(np.zeros(3))

    def test_group_round_trip(self):
        g = separable_groups(1)[0]
        back = TrainingGroup.from_dict(json.loads(json.dumps(g.to_dict())))
        assert back.candidates == g.candidates
        assert np.allclose(back.targets, g.targets)
        assert np.allclose(back.features, g.features)
