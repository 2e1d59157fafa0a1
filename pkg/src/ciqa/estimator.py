"""Scikit-learn style estimator wrapping the screening + scoring pipeline.

``fit`` runs seeded intervention sweeps over calibration pairs and screens
channels into a confounder dictionary; ``predict`` scores new pairs with the
transport cost (lower = better quality). Composes with sklearn tooling via
get_params/set_params.
"""

from __future__ import annotations

import threading
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .backbone import BackboneSpec, extract_features_for_bytes, load_backbone
from .confounder import ScreeningConfig, screen_channels
from .errors import DimMismatchBetweenPair, InputError
from .intervention import (
    DEFAULT_INTENSITY_GRID,
    InterventionSpec,
    calibrate_stage_scales,
    sweep,
)
from .metrics import srcc
from .scoring import ABLATION_MODES, effective_dictionary
from .transport import DistanceConfig, cot_distance


def _as_pairs(X):
    if hasattr(X, "records"):
        return [(r.ref_path, r.dist_path) for r in X.records]
    pairs = [(str(a), str(b)) for a, b in X]
    return pairs


class PairScorer:
    """Callable scoring (ref_path, dist_path) pairs with feature memoization.

    Thread-safe; paths listed in `memoize` keep their feature stacks in
    memory (pass the paths that recur, typically the references).
    """

    def __init__(self, handle, dictionary, mode="gamma_causal",
                 distance: DistanceConfig | None = None, memoize=(),
                 cache_dir=None):
        if mode not in ABLATION_MODES:
            raise ValueError(f"mode must be one of {ABLATION_MODES}")
        self.handle = handle
        self.dictionary = dictionary
        self.mode = mode
        self.distance = distance or DistanceConfig()
        self.cache_dir = cache_dir
        self._memoize = set(memoize)
        self._stacks = {}
        self._lock = threading.Lock()

    def stack_for(self, path):
        path = str(path)
        if path in self._memoize:
            with self._lock:
                hit = self._stacks.get(path)
            if hit is not None:
                return hit
        stack = extract_features_for_bytes(
            self.handle, Path(path).read_bytes(), self.cache_dir)
        if path in self._memoize:
            with self._lock:
                self._stacks[path] = stack
        return stack

    def __call__(self, ref_path, dist_path):
        return self.score_pair(ref_path, dist_path).total

    def score_pair(self, ref_path, dist_path):
        f_ref = self.stack_for(ref_path)
        f_dist = self.stack_for(dist_path)
        if [s.shape for s in f_ref.stages] != [s.shape for s in f_dist.stages]:
            raise DimMismatchBetweenPair(
                f"{ref_path} and {dist_path} have different pixel dimensions")
        eff = effective_dictionary(self.dictionary, self.mode,
                                   f_ref.channel_counts(), self.handle.spec.id)
        return cot_distance(f_ref, f_dist, eff, self.distance)


class CausalQualityScorer(BaseEstimator):
    """Full-reference quality scorer with causal channel screening.

    Parameters mirror the pipeline configuration: the backbone graph and its
    sidecar, the intervention family used for screening, the screening
    thresholds, and the scoring distance. After ``fit(pairs)`` the screened
    dictionary is available as ``dictionary_``; ``predict(pairs)`` returns
    distances (lower = better quality).
    """

    def __init__(self, graph_path=None, spec_path=None, mode="gamma_causal",
                 metric="wasserstein2", stage_weights=None,
                 intervention_kind="additive_gaussian",
                 intensity_grid=DEFAULT_INTENSITY_GRID, draws_per_intensity=2,
                 seed=0, tau_rel=0.05, screening_rule="all_intensities",
                 min_baseline=1e-8, n_jobs=1, cache_dir=None):
        self.graph_path = graph_path
        self.spec_path = spec_path
        self.mode = mode
        self.metric = metric
        self.stage_weights = stage_weights
        self.intervention_kind = intervention_kind
        self.intensity_grid = intensity_grid
        self.draws_per_intensity = draws_per_intensity
        self.seed = seed
        self.tau_rel = tau_rel
        self.screening_rule = screening_rule
        self.min_baseline = min_baseline
        self.n_jobs = n_jobs
        self.cache_dir = cache_dir

    def _load_handle(self):
        if self.graph_path is None:
            raise InputError("graph_path is required")
        spec_path = self.spec_path or str(Path(self.graph_path).with_suffix("")) + ".spec.json"
        spec = BackboneSpec.from_json(spec_path)
        return load_backbone(self.graph_path, spec)

    def _distance(self):
        return DistanceConfig(per_channel_metric=self.metric,
                              stage_weights=self.stage_weights)

    def fit(self, X, y=None):
        """Screen channels on calibration pairs X (list of (ref, dist) paths)."""
        pairs = _as_pairs(X)
        if not pairs:
            raise InputError("fit needs at least one calibration pair")
        self.handle_ = self._load_handle()
        dist_cfg = self._distance()
        spec = InterventionSpec(kind=self.intervention_kind,
                                intensity_grid=self.intensity_grid,
                                draws_per_intensity=self.draws_per_intensity,
                                master_seed=self.seed)
        stacks = []
        pair_stacks = []
        for ref, dst in pairs:
            f_ref = extract_features_for_bytes(self.handle_, Path(ref).read_bytes(),
                                               self.cache_dir)
            f_dst = extract_features_for_bytes(self.handle_, Path(dst).read_bytes(),
                                               self.cache_dir)
            pair_stacks.append((f_ref, f_dst))
            stacks.extend((f_ref, f_dst))
        spec = calibrate_stage_scales(spec, stacks)
        outcomes = [sweep(a, b, spec, dist_cfg) for a, b in pair_stacks]
        cfg = ScreeningConfig(tau_rel=self.tau_rel, rule=self.screening_rule,
                              min_baseline=self.min_baseline,
                              calibration_pairs=len(pairs))
        self.intervention_ = spec
        self.dictionary_ = screen_channels(outcomes, cfg,
                                           backbone_id=self.handle_.spec.id)
        self.n_causal_ = self.dictionary_.n_causal()
        return self

    def _scorer(self, pairs):
        if self.mode == "theta_all":
            dictionary = None
            if not hasattr(self, "handle_"):
                self.handle_ = self._load_handle()
        else:
            if not hasattr(self, "dictionary_"):
                raise InputError("estimator is not fitted; call fit or use mode='theta_all'")
            dictionary = self.dictionary_
        refs = {r for r, _ in pairs}
        return PairScorer(self.handle_, dictionary, mode=self.mode,
                          distance=self._distance(), memoize=refs,
                          cache_dir=self.cache_dir)

    def predict(self, X):
        """Transport-cost scores for pairs X; lower is better quality."""
        pairs = _as_pairs(X)
        scorer = self._scorer(pairs)
        if self.n_jobs and self.n_jobs > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                scores = list(pool.map(lambda p: scorer(*p), pairs))
        else:
            scores = [scorer(*p) for p in pairs]
        return np.asarray(scores, dtype=np.float64)

    def score(self, X, y):
        """Spearman rank correlation between predictions and MOS labels y."""
        pred = self.predict(X)
        return srcc(-pred, np.asarray(y, dtype=np.float64))
