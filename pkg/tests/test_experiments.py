"""Simulation experiments at full scale (1000 trials). Run with ``pytest -m slow``."""
import numpy as np
import pytest
from scipy import stats

from bayes.random import POSTERIOR
from calibrate.bootstrap import residual_bootstrap
from calibrate.pp import bias_corrected_pp, pp_curve
from calibrate.quantiles import QuantityPosterior
from models.csd import csd_fit
from models.dti import dti_fit_wls, fa_posterior_samples, md_from_coefficients, md_posterior, rtop_posterior_samples
from models.peaks import crossing_angle, detect_peaks
from models.sh import response_from_tensor
from phantom.acquisition import hcp_scheme
from phantom.noise import NoiseSpec
from phantom.tensors import double_tensor_phantom, single_tensor_phantom
from phantom.trials import simulate_trials

pytestmark = pytest.mark.slow

TRIALS = 1000
SEED = 0
NOISE = NoiseSpec("rician", 0.05)


def _dti_fits(ts):
    return [dti_fit_wls(ts.scheme, ts.noisy[t]) for t in range(ts.n_trials)]


@pytest.fixture(scope="module")
def single_tensor_fits():
    ts = simulate_trials(single_tensor_phantom(), hcp_scheme(1000.0), NOISE, TRIALS, SEED)
    return ts, _dti_fits(ts)


class TestDtiCalibration:
    def test_md_coverage(self, single_tensor_fits):
        ts, fits = single_tensor_fits
        curve = pp_curve([QuantityPosterior.closed(md_posterior(f)) for f in fits], ts.truth.md)
        assert curve.max_deviation(0.05, 0.95) <= 0.05

    def test_bootstrap_agrees_with_bayesian(self, single_tensor_fits):
        ts, fits = single_tensor_fits
        bayes = pp_curve([QuantityPosterior.closed(md_posterior(f)) for f in fits], ts.truth.md)
        boot = [
            QuantityPosterior.empirical(residual_bootstrap(f.system, f.posterior, md_from_coefficients, 1000, SEED, t).samples)
            for t, f in enumerate(fits)
        ]
        assert np.max(np.abs(pp_curve(boot, ts.truth.md).coverage - bayes.coverage)) <= 0.03

    def test_fa_bias_grows_at_low_anisotropy(self):
        scheme = hcp_scheme(1000.0)
        bias = {}
        for fa in (0.2, 0.8):
            ts = simulate_trials(single_tensor_phantom(fa=fa), scheme, NOISE, TRIALS, SEED)
            means = np.array(
                [fa_posterior_samples(f, 200, SEED, POSTERIOR, t).values.mean() for t, f in enumerate(_dti_fits(ts))]
            )
            bias[fa] = means.mean() - fa
            if fa == 0.2:
                assert stats.ttest_1samp(means, fa, alternative="greater").pvalue < 0.01
        assert bias[0.8] < bias[0.2]


class TestRtopBiasCorrection:
    def test_crossing_rtop(self):
        # DTI の当てはめ範囲 b <= 1000 で二重テンソル信号を生成
        ts = simulate_trials(double_tensor_phantom(60.0), hcp_scheme(1000.0), NOISE, TRIALS, SEED)
        posteriors = []
        for t, fit in enumerate(_dti_fits(ts)):
            derived = rtop_posterior_samples(fit, ts.scheme.diffusion_time, 200, SEED, POSTERIOR, t)
            if derived.values.size:
                posteriors.append(QuantityPosterior.empirical(derived.values))
        raw = pp_curve(posteriors, ts.truth.rtop)
        corrected = bias_corrected_pp(posteriors, ts.truth.rtop)
        assert raw.max_deviation() >= 0.10
        assert corrected.max_deviation() <= 0.07


class TestCrossingAngle:
    @pytest.mark.parametrize("angle,expected,min_detection", [(45.0, 47.2, 0.95), (60.0, 60.0, 0.99)])
    def test_csd_detects_crossing(self, angle, expected, min_detection):
        phantom = double_tensor_phantom(angle)
        scheme = hcp_scheme(3000.0)
        mask = scheme.b0_mask | scheme.select_shell(3000.0)
        shell = scheme.subset(mask)
        ts = simulate_trials(phantom, shell, NOISE, TRIALS, SEED)
        response = response_from_tensor(phantom.tensors[0], 3000.0, 10)

        angles = []
        for t in range(ts.n_trials):
            fit = csd_fit(shell, ts.noisy[t], response, order=10, lam=5.0, tau=0.1)
            a = crossing_angle(detect_peaks(fit.posterior.mean, 10))
            if a is not None:
                angles.append(a)
        assert len(angles) / TRIALS >= min_detection
        assert np.mean(angles) == pytest.approx(expected, abs=2.0)
