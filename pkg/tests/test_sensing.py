import numpy as np
import numpy.testing as npt
import pytest

from shrinkmatch.dictionary import (SpatialDictionary, TemporalDictionary, ground_truth_spatial,
                                    ground_truth_temporal, model_covariance)
from shrinkmatch.sensing import (SensingError, SensingParams, SensingReport, detect_aoas, noise_floor,
                                 shrink_and_match, spatial_filter, ssm, ssm_from_covariances, ssm_scenario,
                                 subcarriers_of)
from shrinkmatch.signal_model import (ObservationSet, PuPath, Scenario, ScenarioSpec, SystemDims, draw_scenario,
                                      full_stream_length, steering, synthesize_rx)
from shrinkmatch.sparse_match import NnOmpParams

DIMS = SystemDims(N=16, L_p=4, N_T=1, N_R=4, B=36, A=36, P=1, p_l=0, I=1, L=1, ifft_norm="unit")


def _one_pu(snr_db=20.0, aoa=9, subcarriers=(2, 5, 11)):
    path = PuPath(pu=0, path=0, gain_var=1.0, delay=0, doppler=0, aoa=aoa, aod=0)
    return Scenario(DIMS, (3,), (path,), (tuple(subcarriers),), 10 ** (-snr_db / 10))


def test_spatial_filter_shapes_and_inverse():
    Phi, pinv, rows = spatial_filter([3, 20], DIMS)
    assert Phi.shape == (4, 2) and pinv.shape == (2, 4)
    npt.assert_allclose(pinv @ Phi, np.eye(2), atol=1e-12)
    npt.assert_allclose(rows, np.sum(np.abs(pinv) ** 2, axis=1))


def test_spatial_filter_rejects_too_many():
    with pytest.raises(SensingError):
        spatial_filter(range(5), DIMS)
    with pytest.raises(ValueError):
        spatial_filter([], DIMS)


def test_noise_floor_value():
    assert noise_floor(8.0, 4, 16, 3.0) == pytest.approx(1.5)


def test_subcarriers_of_uses_index_mod_n():
    td = TemporalDictionary(DIMS)
    c = ground_truth_temporal(_one_pu())
    assert subcarriers_of(c, DIMS) == {2, 5, 11}
    assert all(td.params(i)[2] == i % DIMS.N for i in c.support)


def test_ssm_single_pu_high_snr():
    rep = ssm_scenario(_one_pu(), K=40, seed=3)
    assert rep.aoas == [9]
    assert rep.subcarriers == {2, 5, 11}
    assert rep.subcarriers_per_direction == [{2, 5, 11}]


def test_ssm_idle_spectrum_reports_nothing():
    sc = Scenario(DIMS, (), (), (), 1.0)
    rep = ssm_scenario(sc, K=30, seed=0)
    assert rep.aoas == [] and rep.subcarriers == set()
    assert rep.to_rows()[0] == ("aoas", "")


def test_ssm_rejects_short_stream():
    with pytest.raises(ValueError):
        ssm(np.zeros((4, 10), dtype=complex), DIMS, 1.0, 5)


def test_shrink_and_match_dimension_check():
    with pytest.raises(ValueError):
        shrink_and_match(np.ones((3, 4)), SpatialDictionary(DIMS), 1.0)
    with pytest.raises(ValueError):
        shrink_and_match(np.ones((4, 4)), SpatialDictionary(DIMS), -1.0)


def test_detect_aoas_rejects_temporal_obs():
    with pytest.raises(ValueError):
        detect_aoas(ObservationSet(np.ones((4, 3), dtype=complex), "temporal"), SpatialDictionary(DIMS), 1.0)


def test_detect_aoas_caps_at_n_r():
    rng = np.random.default_rng(0)
    Y = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
    aoas, _, diag = detect_aoas(Y, SpatialDictionary(DIMS), 0.0, SensingParams(detect_threshold=0.0))
    assert len(aoas) <= DIMS.N_R
    assert diag.iterations <= DIMS.N_R


def test_threads_do_not_change_result():
    dims = SystemDims(N=16, L_p=4, N_T=1, N_R=4, B=36, A=36, P=1, p_l=0, I=2, L=1, ifft_norm="unit")
    sc = draw_scenario(dims, 11, ScenarioSpec(subcarriers_per_pu=4, snr_db=10.0))
    stream = synthesize_rx(sc, full_stream_length(dims, 20), 5)
    a = ssm(stream, dims, sc.noise_var, 20, SensingParams(threads=1))
    b = ssm(stream, dims, sc.noise_var, 20, SensingParams(threads=2))
    assert a.to_dict() == b.to_dict()


def test_oracle_path_exact_single_pu():
    sc = _one_pu().with_noise(0.0)
    sd, td = SpatialDictionary(DIMS), TemporalDictionary(DIMS)
    tight = NnOmpParams(tau_omp=1e-9)
    rep = ssm_from_covariances(model_covariance(ground_truth_spatial(sc), 0.0, sd),
                               lambda phi: model_covariance(ground_truth_temporal(sc, phi), 0.0, td),
                               DIMS, 0.0, SensingParams(spatial_omp=tight, temporal_omp=tight), sd, td)
    assert rep.aoas == [9] and rep.subcarriers == {2, 5, 11}


def test_report_serialization():
    rep = ssm_scenario(_one_pu(), K=20, seed=1)
    d = rep.to_dict()
    assert set(d) == {"aoas", "subcarriers", "subcarriers_per_direction", "spatial", "temporal"}
    assert isinstance(SensingReport.idle(rep.spatial_coeffs).subcarriers, set)


def test_params_validation():
    with pytest.raises(ValueError):
        SensingParams(detect_threshold=-1)
    with pytest.raises(ValueError):
        SensingParams(threads=0)
    with pytest.raises(ValueError):
        SensingParams(spatial_max_support=0)


def test_filtered_noise_variance_scaling():
    # pinv rows of a steering pair carry ||phi||^2 > 1/N_R of the noise power
    _, pinv, rows = spatial_filter([0, 1], DIMS)
    assert np.all(rows >= 1 / DIMS.N_R - 1e-12)
    e = steering(0.0, DIMS.N_R)
    npt.assert_allclose(pinv[0] @ e, 1.0, atol=1e-12)
