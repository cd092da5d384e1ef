"""GMM oracle against sampled mixtures, detection/selection rules, annotators."""

import math
import threading
import time

import numpy as np
import pytest

from mmrlab import data, hil
from mmrlab.data import GeneratorSpec
from mmrlab.hil import (
    AnnotationInbox, Gmm1d, HilConfig, InteractiveAnnotator, OracleAnnotator,
    QueryItem, ScriptedAnnotator,
)
from mmrlab.model import MmrModel, ModelConfig


def sample_mixture(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    comp = rng.random(n) < 0.5
    x = np.where(comp, rng.normal(1.0, 0.1, n), rng.normal(0.1, 0.02, n))
    return x, comp.astype(int)  # 1 = high-loss component


def auc(scores, labels):
    order = np.argsort(scores)
    ranks = np.empty(len(scores))
    ranks[order] = np.arange(1, len(scores) + 1)
    pos = labels == 1
    n_pos, n_neg = pos.sum(), (~pos).sum()
    return (ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


class TestPerSampleLosses:
    def _model_and_ds(self):
        cfg = ModelConfig(arch="dense", in_shape=(1, 4, 6), dense_hidden=8,
                          embed_dim=4, classifier_hidden=4, dtype="float64")
        model = MmrModel(cfg, seed=1)
        spec = GeneratorSpec(seed=2, n=12, height=4, width=6)
        return model, data.generate(spec)

    def test_matches_scalar_loop(self):
        model, ds = self._model_and_ds()
        vec = hil.per_sample_losses(model, ds)
        probs = model.classifier_probs(ds.features.astype(np.float64))
        for i in range(ds.n):
            expect = 0.0
            for c in range(2):
                expect -= 0.5 * ds.labels_train[i, c] * math.log(
                    min(max(probs[i, c], 1e-12), 1.0))
            assert vec[i] == pytest.approx(expect, abs=1e-12)

    def test_uniform_prediction_value(self):
        # a (0.5,0.5) prediction against a one-hot label costs ln(2)/2
        logp = math.log(0.5)
        assert -0.5 * logp == pytest.approx(0.346574, abs=1e-6)


class TestFitGmm:
    def test_recovers_separated_means(self):
        x, _ = sample_mixture()
        gmm = hil.fit_gmm(x)
        lo, hi = sorted(gmm.means)
        assert abs(lo - 0.1) < 0.05
        assert abs(hi - 1.0) < 0.05

    def test_loglik_nondecreasing(self):
        x, _ = sample_mixture(seed=3)
        gmm = hil.fit_gmm(x)
        trace = np.array(gmm.loglik_trace)
        assert len(trace) >= 2
        assert np.all(np.diff(trace) >= -1e-9)

    def test_identical_losses_single_mode(self):
        gmm = hil.fit_gmm(np.full(50, 0.7))
        assert gmm.single_mode
        assert gmm.means[0] == gmm.means[1]
        assert np.all(hil.p_false(gmm, np.full(50, 0.7)) == 0.0)

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError, match="at least 4"):
            hil.fit_gmm(np.array([0.1, 0.2, 0.3]))

    def test_detection_auc_against_component_identity(self):
        x, comp = sample_mixture(seed=4)
        gmm = hil.fit_gmm(x)
        assert auc(hil.p_false(gmm, x), comp) >= 0.99

    def test_ranking_invariant_to_uniform_scaling(self):
        x, _ = sample_mixture(n=500, seed=5)
        pf1 = hil.p_false(hil.fit_gmm(x), x)
        pf2 = hil.p_false(hil.fit_gmm(3.7 * x), 3.7 * x)
        assert np.array_equal(np.argsort(pf1, kind="stable"),
                              np.argsort(pf2, kind="stable"))


class TestPFalse:
    def test_extremes_on_fitted_mixture(self):
        x, _ = sample_mixture(seed=6)
        gmm = hil.fit_gmm(x)
        hi_mean = max(gmm.means)
        lo_mean = min(gmm.means)
        assert hil.p_false(gmm, np.array([hi_mean]))[0] > 0.99
        assert hil.p_false(gmm, np.array([lo_mean]))[0] < 0.01

    def test_equal_means_symmetric(self):
        gmm = Gmm1d(weights=np.array([0.5, 0.5]), means=np.array([0.4, 0.4]),
                    variances=np.array([0.01, 0.01]))
        assert hil.p_false(gmm, np.array([0.9]))[0] == pytest.approx(0.5)


class TestDetect:
    def test_threshold_filter(self):
        pf = np.array([0.95, 0.5, 0.81])
        assert hil.detect(pf, 0.8).tolist() == [0, 2]

    def test_empty_when_all_below(self):
        assert hil.detect(np.array([0.1, 0.79, 0.8]), 0.8).size == 0

    def test_sorted_descending(self):
        pf = np.array([0.85, 0.99, 0.92, 0.3])
        assert hil.detect(pf, 0.8).tolist() == [1, 2, 0]


class TestSelectQueries:
    def test_empty_detected(self):
        out = hil.select_queries(np.array([], dtype=int), np.array([]), 0.01, 100, 1, 0)
        assert out == []

    def test_small_case_union(self):
        pf = np.array([0.99, 0.95, 0.9, 0.85, 0.81])
        detected = hil.detect(pf, 0.8)
        # per-direction count 2 (rho=0.02 of 100)
        out = hil.select_queries(detected, pf, 0.02, 100, 1, 0)
        got = {(q.sample_id, q.direction) for q in out}
        assert got == {(0, "descending"), (1, "descending"),
                       (4, "ascending"), (3, "ascending")}

    def test_overlap_deduplicated_within_round(self):
        pf = np.array([0.9, 0.85])
        detected = hil.detect(pf, 0.8)
        out = hil.select_queries(detected, pf, 0.05, 100, 1, 0)  # 5 per direction
        assert len(out) == 2
        assert len({q.sample_id for q in out}) == 2

    def test_bounded_by_two_ceil_rho_n(self):
        rng = np.random.default_rng(7)
        pf = rng.uniform(0.81, 0.99, size=400)
        detected = hil.detect(pf, 0.8)
        out = hil.select_queries(detected, pf, 0.011, 400, 1, 0)
        assert len(out) <= 2 * math.ceil(0.011 * 400)

    def test_dedupe_flag_skips_history(self):
        pf = np.array([0.99, 0.95, 0.9])
        detected = hil.detect(pf, 0.8)
        out = hil.select_queries(detected, pf, 0.01, 100, 2, 3,
                                 annotated_history={0, 2}, dedupe=True)
        assert [q.sample_id for q in out] == [1]

    def test_requery_allowed_without_dedupe(self):
        pf = np.array([0.99, 0.95, 0.9])
        detected = hil.detect(pf, 0.8)
        out = hil.select_queries(detected, pf, 0.01, 100, 2, 3,
                                 annotated_history={0, 2}, dedupe=False)
        assert 0 in {q.sample_id for q in out}

    def test_cumulative_unique_fraction_order_of_magnitude(self):
        # with per-round re-queries allowed, ~52 rounds at rho=0.55% of the
        # training set should touch on the order of half the samples
        rng = np.random.default_rng(8)
        n = 3225
        queried = set()
        for _ in range(52):
            pf = np.clip(rng.beta(0.4, 0.8, size=n), 0.0, 0.999)
            detected = hil.detect(pf, 0.8)
            out = hil.select_queries(detected, pf, 0.0055, n, 1, 0)
            queried.update(q.sample_id for q in out)
        frac = len(queried) / n
        assert 0.2 <= frac <= 0.9


class TestAnnotators:
    def _queries(self):
        return [QueryItem(sample_id=i, p_false=0.9, direction="descending",
                          round_index=1) for i in (0, 2)]

    def test_oracle_returns_truth(self):
        labels = np.array([1, 0, 1])
        out = OracleAnnotator(labels).annotate(self._queries())
        assert [(q.label, q.status, q.source) for q in out] == \
            [(1, "labeled", "oracle"), (1, "labeled", "oracle")]

    def test_scripted_replays_oracle(self):
        labels = np.array([1, 0, 1])
        oracle_out = OracleAnnotator(labels).annotate(self._queries())
        rows = [q.to_row() for q in oracle_out]
        scripted = ScriptedAnnotator(rows).annotate(self._queries())
        assert [q.label for q in scripted] == [q.label for q in oracle_out]
        assert all(q.source == "scripted" for q in scripted)

    def test_scripted_missing_id_errors(self):
        with pytest.raises(KeyError, match="no answer"):
            ScriptedAnnotator([]).annotate(self._queries())

    def test_interactive_timeout_oracle_fallback(self):
        inbox = AnnotationInbox()
        ann = InteractiveAnnotator(inbox, labels_true=np.array([1, 0, 1]),
                                   timeout_seconds=0.1, fallback="oracle",
                                   poll_interval=0.01)
        out = ann.annotate(self._queries())
        assert all(q.status == "labeled" for q in out)
        assert all(q.source == "timeout-fallback" for q in out)
        assert [q.label for q in out] == [1, 1]

    def test_interactive_timeout_skip(self):
        inbox = AnnotationInbox()
        ann = InteractiveAnnotator(inbox, labels_true=np.array([1, 0, 1]),
                                   timeout_seconds=0.05, fallback="skip",
                                   poll_interval=0.01)
        out = ann.annotate(self._queries())
        assert all(q.status == "expired" for q in out)

    def test_interactive_accepts_submissions(self):
        inbox = AnnotationInbox()
        ann = InteractiveAnnotator(inbox, labels_true=np.array([1, 0, 1]),
                                   timeout_seconds=5.0, fallback="skip",
                                   poll_interval=0.01)

        def submit_later():
            time.sleep(0.05)
            assert inbox.submit(0, "unstable") == "ok"
            assert inbox.submit(0, "stable") == "conflict"
            assert inbox.submit(99, "stable") == "not-found"
            assert inbox.submit(2, "stable") == "ok"

        worker = threading.Thread(target=submit_later)
        worker.start()
        out = ann.annotate(self._queries())
        worker.join()
        by_id = {q.sample_id: q for q in out}
        assert by_id[0].label == 1 and by_id[0].source == "human"
        assert by_id[2].label == 0 and by_id[2].source == "human"

    def test_inbox_atomic_single_transition(self):
        inbox = AnnotationInbox()
        inbox.publish(self._queries())
        results = []

        def hammer():
            results.append(inbox.submit(0, "stable"))

        threads = [threading.Thread(target=hammer) for _ in range(8)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert results.count("ok") == 1
        assert results.count("conflict") == 7


def test_hil_config_validation():
    with pytest.raises(ValueError):
        HilConfig(tau=1.5).validate()
    with pytest.raises(ValueError):
        HilConfig(rho=0.0).validate()
    with pytest.raises(ValueError):
        HilConfig(period=0).validate()
    with pytest.raises(ValueError):
        HilConfig(fallback="requeue").validate()
    HilConfig().validate()
