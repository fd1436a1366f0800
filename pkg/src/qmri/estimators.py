"""Estimator wrappers with the familiar fit / predict / transform surface.

``fit`` prepares whatever does not depend on the data (the fingerprint dictionary), and
``predict`` maps k-space data to a :class:`ParameterMap`.
"""
from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .baselines import BlipConfig, blip_reconstruct, mrf_reconstruct
from .bloch import PulseSequence
from .dictionary import build_dictionary, grid_range
from .maps import FeasibleBox
from .solver import SolverConfig, solve_lm
from .validation import check_kspace, check_map, check_sequence, check_support


class _DictionaryEstimator(BaseEstimator):
    def _grids(self):
        t1 = grid_range(*self.t1_grid) if len(self.t1_grid) == 3 else np.asarray(self.t1_grid)
        t2 = grid_range(*self.t2_grid) if len(self.t2_grid) == 3 else np.asarray(self.t2_grid)
        return t1, t2

    def fit(self, D=None, y=None):
        seq = check_sequence(self.sequence)
        if D is not None:
            check_kspace(D, seq)
        self.dictionary_ = build_dictionary(*self._grids(), seq)
        return self

    def transform(self, D, support=None):
        """(P, C) unknowns of the reconstructed map on its effective domain."""
        return self.predict(D, support).to_vector()


class MRFReconstructor(_DictionaryEstimator):
    """Zero-filled frames matched pixel by pixel against a (T1, T2) dictionary.

    Grids are either explicit arrays or ``(start, stop, step)`` triples.
    """

    def __init__(self, sequence: PulseSequence = None, t1_grid=(200.0, 5000.0, 200.0),
                 t2_grid=(20.0, 500.0, 20.0), complex_rho=False):
        self.sequence = sequence
        self.t1_grid = t1_grid
        self.t2_grid = t2_grid
        self.complex_rho = complex_rho

    def predict(self, D, support=None):
        check_is_fitted(self, "dictionary_")
        check_kspace(D, self.sequence)
        t0 = time.perf_counter()
        out = mrf_reconstruct(D, self.dictionary_, check_support(support, D.N), self.complex_rho)
        self.wall_time_ = time.perf_counter() - t0
        return out


class BLIPReconstructor(_DictionaryEstimator):
    def __init__(self, sequence: PulseSequence = None, t1_grid=(200.0, 5000.0, 200.0),
                 t2_grid=(20.0, 500.0, 20.0), iterations=20, step=None, step_rule="backtracking",
                 density="norm", complex_rho=False):
        self.sequence = sequence
        self.t1_grid = t1_grid
        self.t2_grid = t2_grid
        self.iterations = iterations
        self.step = step
        self.step_rule = step_rule
        self.density = density
        self.complex_rho = complex_rho

    def predict(self, D, support=None):
        check_is_fitted(self, "dictionary_")
        check_kspace(D, self.sequence)
        cfg = BlipConfig(self.dictionary_, self.iterations, self.step, self.step_rule,
                         complex_rho=self.complex_rho, density=self.density)
        t0 = time.perf_counter()
        self.result_ = blip_reconstruct(D, cfg, check_support(support, D.N))
        self.wall_time_ = time.perf_counter() - t0
        return self.result_.map


class ProjectedLMReconstructor(BaseEstimator):
    """Projected Levenberg-Marquardt on the full Bloch-Fourier model.

    Without an explicit ``x0`` the iteration starts from a coarse-dictionary BLIP estimate
    built in ``fit``; its cost is included in ``wall_time_``.
    """

    def __init__(self, sequence: PulseSequence = None, lambda0=None, beta=0.01, epsilon=0.0, max_iters=25,
                 project=True, box=None, init_t1_grid=(400.0, 5000.0, 400.0),
                 init_t2_grid=(40.0, 500.0, 40.0), init_iterations=20, complex_rho=False):
        self.sequence = sequence
        self.lambda0 = lambda0
        self.beta = beta
        self.epsilon = epsilon
        self.max_iters = max_iters
        self.project = project
        self.box = box
        self.init_t1_grid = init_t1_grid
        self.init_t2_grid = init_t2_grid
        self.init_iterations = init_iterations
        self.complex_rho = complex_rho

    def fit(self, D=None, y=None):
        seq = check_sequence(self.sequence)
        if D is not None:
            check_kspace(D, seq)
        self.config_ = SolverConfig(lambda0=self.lambda0, beta=self.beta, epsilon=self.epsilon,
                                    max_iters=self.max_iters, project=self.project,
                                    box=self.box or FeasibleBox())
        self.initializer_ = BLIPReconstructor(seq, self.init_t1_grid, self.init_t2_grid,
                                              self.init_iterations, complex_rho=self.complex_rho).fit()
        return self

    def predict(self, D, support=None, x0=None):
        check_is_fitted(self, "config_")
        check_kspace(D, self.sequence)
        t0 = time.perf_counter()
        if x0 is None:
            x0 = self.initializer_.predict(D, support)
        check_map(x0, D.N)
        self.map_, self.report_ = solve_lm(x0, D, self.sequence, cfg=self.config_)
        self.wall_time_ = time.perf_counter() - t0
        return self.map_

    def transform(self, D, support=None):
        return self.predict(D, support).to_vector()


__all__ = ["MRFReconstructor", "BLIPReconstructor", "ProjectedLMReconstructor"]
