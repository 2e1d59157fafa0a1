import numpy as np
import pytest
from sklearn.base import clone

from ciqa import CausalQualityScorer
from ciqa.errors import InputError

from conftest import SCREEN_SEED, SCREEN_TAU, fixture_paths


def make_estimator(**overrides):
    graph, spec = fixture_paths("tiny_vgg")
    kw = dict(graph_path=str(graph), spec_path=str(spec), seed=SCREEN_SEED,
              tau_rel=SCREEN_TAU)
    kw.update(overrides)
    return CausalQualityScorer(**kw)


@pytest.fixture(scope="module")
def calibration_pairs(desk_corpus):
    records = desk_corpus["manifest"].records[::6][:8]
    return [(r.ref_path, r.dist_path) for r in records]


@pytest.fixture(scope="module")
def eval_pairs(desk_corpus):
    records = desk_corpus["manifest"].records[:24]
    pairs = [(r.ref_path, r.dist_path) for r in records]
    labels = [r.mos_norm for r in records]
    return pairs, labels


class TestSklearnProtocol:
    def test_get_set_params_roundtrip(self):
        est = make_estimator()
        params = est.get_params()
        assert params["tau_rel"] == SCREEN_TAU
        est.set_params(tau_rel=0.1)
        assert est.get_params()["tau_rel"] == 0.1

    def test_clone(self):
        est = make_estimator(mode="eta_complement")
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_unfitted_predict_raises_for_gamma(self, eval_pairs):
        est = make_estimator()
        with pytest.raises(InputError):
            est.predict(eval_pairs[0][:2])


class TestFitPredict:
    def test_fit_builds_dictionary(self, calibration_pairs):
        est = make_estimator().fit(calibration_pairs)
        assert est.dictionary_.backbone_id == "tiny_vgg"
        assert est.dictionary_.channel_counts() == (8, 12, 16, 20, 24)
        assert est.n_causal_ > 0

    def test_predict_shape_and_polarity(self, calibration_pairs, eval_pairs):
        est = make_estimator().fit(calibration_pairs)
        pairs, _ = eval_pairs
        scores = est.predict(pairs)
        assert scores.shape == (len(pairs),)
        assert np.all(scores >= 0.0)

    def test_identical_pair_scores_zero(self, calibration_pairs, desk_corpus):
        est = make_estimator().fit(calibration_pairs)
        ref = desk_corpus["refs"][0]
        assert est.predict([(ref, ref)])[0] == 0.0

    def test_theta_mode_needs_no_fit(self, eval_pairs):
        est = make_estimator(mode="theta_all")
        pairs, _ = eval_pairs
        scores = est.predict(pairs[:4])
        assert np.all(scores > 0.0)

    def test_score_is_rank_correlation(self, calibration_pairs, eval_pairs):
        est = make_estimator().fit(calibration_pairs)
        pairs, labels = eval_pairs
        s = est.score(pairs, labels)
        assert -1.0 <= s <= 1.0
        assert s > 0.5  # distances anti-rank quality on the desk corpus

    def test_fit_accepts_manifest(self, desk_corpus):
        manifest = desk_corpus["manifest"]
        sub = manifest.records[::12][:4]
        import dataclasses
        small = dataclasses.replace(manifest, records=list(sub))
        est = make_estimator().fit(small)
        assert hasattr(est, "dictionary_")

    def test_threaded_predict_matches_serial(self, calibration_pairs, eval_pairs):
        pairs, _ = eval_pairs
        serial = make_estimator().fit(calibration_pairs)
        threaded = make_estimator(n_jobs=4).fit(calibration_pairs)
        assert np.array_equal(serial.predict(pairs[:8]), threaded.predict(pairs[:8]))

    def test_empty_fit_rejected(self):
        with pytest.raises(InputError):
            make_estimator().fit([])
