import io

import numpy as np
import pytest
from PIL import Image

from ciqa import (
    ConfounderDictionary,
    InterventionSpec,
    ScoringConfig,
    complement,
    predict_quality,
    realize_perturbation,
    regression_invariance_check,
)
from ciqa.errors import DimMismatchBetweenPair, InputError
from ciqa.scoring import invariance_from_stacks

from conftest import make_stack


def png_bytes(arr):
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture(scope="module")
def image_pair(desk_corpus):
    rec = desk_corpus["manifest"].records[1]
    from pathlib import Path
    return Path(rec.ref_path).read_bytes(), Path(rec.dist_path).read_bytes()


class TestPredictQuality:
    def test_identical_images_score_zero(self, vgg_handle, image_pair):
        ref, _ = image_pair
        q = predict_quality(ref, ref, vgg_handle, None,
                            ScoringConfig(ablation_mode="theta_all"))
        assert q.value == 0.0
        assert all(v == 0.0 for v in q.per_stage)

    def test_distorted_pair_scores_positive(self, vgg_handle, image_pair):
        ref, dist = image_pair
        q = predict_quality(ref, dist, vgg_handle, None,
                            ScoringConfig(ablation_mode="theta_all"))
        assert q.value > 0.0
        assert q.backbone_id == "tiny_vgg"

    def test_gamma_with_all_ones_equals_theta(self, vgg_handle, image_pair):
        ref, dist = image_pair
        counts = (8, 12, 16, 20, 24)
        ones = ConfounderDictionary.all_ones("tiny_vgg", counts)
        q_theta = predict_quality(ref, dist, vgg_handle, None,
                                  ScoringConfig(ablation_mode="theta_all"))
        q_gamma = predict_quality(ref, dist, vgg_handle, ones,
                                  ScoringConfig(ablation_mode="gamma_causal"))
        assert q_gamma.value == q_theta.value

    def test_symmetry(self, vgg_handle, image_pair, vgg_dictionary):
        ref, dist = image_pair
        cfg = ScoringConfig(ablation_mode="gamma_causal")
        a = predict_quality(ref, dist, vgg_handle, vgg_dictionary, cfg)
        b = predict_quality(dist, ref, vgg_handle, vgg_dictionary, cfg)
        assert a.value == b.value

    def test_mode_partition(self, vgg_handle, image_pair, vgg_dictionary):
        """gamma and eta channel sets are disjoint and union to theta's set."""
        eta_dict = complement(vgg_dictionary)
        for wg, we in zip(vgg_dictionary.weights, eta_dict.weights):
            assert not np.any((wg > 0) & (we > 0))
            assert np.all((wg > 0) | (we > 0))

    def test_dim_mismatch_between_pair(self, vgg_handle):
        a = png_bytes(np.zeros((48, 48, 3), dtype=np.uint8))
        b = png_bytes(np.zeros((64, 64, 3), dtype=np.uint8))
        with pytest.raises(DimMismatchBetweenPair):
            predict_quality(a, b, vgg_handle, None,
                            ScoringConfig(ablation_mode="theta_all"))

    def test_gamma_requires_dictionary(self, vgg_handle, image_pair):
        ref, dist = image_pair
        with pytest.raises(InputError):
            predict_quality(ref, dist, vgg_handle, None,
                            ScoringConfig(ablation_mode="gamma_causal"))

    def test_negate_mapping(self, vgg_handle, image_pair):
        ref, dist = image_pair
        plain = predict_quality(ref, dist, vgg_handle, None,
                                ScoringConfig(ablation_mode="theta_all"))
        neg = predict_quality(ref, dist, vgg_handle, None,
                              ScoringConfig(ablation_mode="theta_all", mapping="negate"))
        assert neg.value == -plain.value


class TestRegressionInvariance:
    def test_zero_only_grid_gives_zero_deviation(self, vgg_handle, image_pair,
                                                 vgg_dictionary):
        ref, dist = image_pair
        spec = InterventionSpec(intensity_grid=(0.0,))
        report = regression_invariance_check(ref, dist, vgg_handle, vgg_dictionary,
                                             spec=spec)
        assert report.max_score_deviation == 0.0

    def test_identical_images_report_zero(self, vgg_handle, image_pair,
                                          vgg_dictionary):
        ref, _ = image_pair
        spec = InterventionSpec(intensity_grid=(0.0, 0.1), master_seed=1)
        report = regression_invariance_check(ref, ref, vgg_handle, vgg_dictionary,
                                             spec=spec)
        assert report.baseline_score == 0.0
        assert report.max_score_deviation == 0.0

    def test_eta_deviates_more_than_gamma_on_toy(self):
        """The causal channel carries the pair's difference as a clean shift,
        whose distributional distance is invariant under a shared additive
        intervention. The noise channel's difference is a spatial
        rearrangement with a near-zero distributional distance, which a shared
        intervention inflates enormously in relative terms. Cross-checked
        against an inline brute-force computation."""
        rng = np.random.default_rng(8)
        base = rng.normal(size=(24, 24))
        shuffled = rng.permutation(base.ravel()).reshape(24, 24)
        f_i = make_stack("toy", [np.stack([base, base])])
        f_d = make_stack("toy", [np.stack([base + 0.8,
                                           shuffled + 1e-3 * rng.normal(size=(24, 24))])])
        gamma = ConfounderDictionary("toy", [np.array([1.0, 0.0])])
        eta = complement(gamma)
        spec = InterventionSpec(intensity_grid=(0.0, 0.2), master_seed=5,
                                draws_per_intensity=3, stage_scales=(1.0,))
        rep_gamma = invariance_from_stacks(f_i, f_d, gamma, spec)
        rep_eta = invariance_from_stacks(f_i, f_d, eta, spec)
        assert rep_eta.max_score_deviation > 10 * rep_gamma.max_score_deviation

        # brute-force both deviations with independent arithmetic
        def w2(x, y):
            xs, ys = np.sort(x.ravel()), np.sort(y.ravel())
            return float(np.sqrt(np.mean((xs - ys) ** 2)))

        for channel, report in ((0, rep_gamma), (1, rep_eta)):
            baseline = w2(f_i.stages[0][channel], f_d.stages[0][channel])
            worst = 0.0
            for d in range(3):
                noise = realize_perturbation(spec, [(2, 24, 24)], 1, d)[0]
                score = w2(f_i.stages[0][channel] + noise[channel],
                           f_d.stages[0][channel] + noise[channel])
                worst = max(worst, abs(score - baseline) / baseline)
            assert report.max_score_deviation == pytest.approx(worst, rel=1e-5,
                                                               abs=1e-6)

    def test_report_serializes(self, vgg_handle, image_pair, vgg_dictionary):
        ref, dist = image_pair
        spec = InterventionSpec(intensity_grid=(0.0, 0.1), master_seed=3)
        report = regression_invariance_check(ref, dist, vgg_handle, vgg_dictionary,
                                             spec=spec)
        doc = report.to_dict()
        assert set(doc) == {"baseline_score", "max_score_deviation", "per_intensity"}
        assert report.baseline_score > 0.0
