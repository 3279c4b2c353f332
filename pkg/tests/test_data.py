import warnings

import numpy as np
import pytest

from sigmaflow import NoiseSignalSpec, SampleSet, estimate_moments, gen_noise_signal, load_csv, save_csv, whiten
from sigmaflow.data import CovarianceFloorWarning, noise_monitors
from sigmaflow.errors import ConfigError, DegenerateCovarianceError


def _ss(x, y=None):
    x = np.asarray(x, dtype=float)
    return SampleSet(x, np.zeros(len(x)) if y is None else y)


# -- SampleSet -------------------------------------------------------------------------------


def test_sampleset_validation():
    with pytest.raises(ConfigError):
        SampleSet(np.zeros((1, 2)), np.zeros(1))
    with pytest.raises(ConfigError):
        SampleSet(np.zeros((3, 2)), np.zeros(4))
    with pytest.raises(ConfigError):
        SampleSet(np.array([[0.0], [np.nan]]), np.zeros(2))
    s = SampleSet(np.arange(4.0), [1, 2, 3, 4])
    assert s.x.shape == (4, 1) and s.y.dtype == complex
    with pytest.raises(ValueError):
        s.x[0, 0] = 3.0  # immutable


# -- moments -------------------------------------------------------------------------------


def test_moments_four_point_example():
    m = estimate_moments(_ss([[1, 0], [-1, 0], [0, 1], [0, -1]]))
    np.testing.assert_allclose(m.mean, 0, atol=1e-15)
    np.testing.assert_allclose(m.cov, np.diag([0.5, 0.5]), atol=1e-15)
    np.testing.assert_allclose(m.whitener, np.diag([np.sqrt(2)] * 2), atol=1e-14)


def test_moments_scalar_example():
    m = estimate_moments(_ss([[2.0], [-2.0]]))
    assert m.cov[0, 0] == pytest.approx(4.0)
    assert m.whitener[0, 0] == pytest.approx(0.5)


def test_identity_whitener_for_white_data():
    x = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    m = estimate_moments(_ss(x))
    np.testing.assert_allclose(m.whitener, np.eye(2), atol=1e-14)
    np.testing.assert_allclose(whiten(_ss(x), m).x, x, atol=1e-12)


def test_whitening_properties(rng):
    x = rng.standard_normal((300, 4)) @ rng.standard_normal((4, 4)) + 5.0
    s = _ss(x, rng.standard_normal(300))
    m = estimate_moments(s)
    w = whiten(s, m)
    cov = np.cov(w.x.T, bias=True)
    assert np.max(np.abs(cov - np.eye(4))) <= 1e-10
    assert np.linalg.norm(w.x.mean(axis=0)) <= 1e-12
    np.testing.assert_allclose(m.whitener @ m.cov @ m.whitener.T, np.eye(4), atol=1e-10)
    np.testing.assert_allclose(m.unwhitener @ m.whitener, np.eye(4), atol=1e-10)
    # idempotence and translation invariance
    w2 = whiten(w, estimate_moments(w))
    assert np.max(np.abs(w2.x - w.x)) <= 1e-10
    shifted = _ss(x - 3.0, s.y)
    assert np.max(np.abs(whiten(shifted, estimate_moments(shifted)).x - w.x)) <= 1e-10
    np.testing.assert_array_equal(w.y, s.y)


def test_degenerate_covariance_clamped_or_strict():
    x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [0.0, 0.0]])
    with pytest.warns(CovarianceFloorWarning):
        m = estimate_moments(_ss(x))
    assert m.clamped == 1 and m.notes
    with pytest.raises(DegenerateCovarianceError) as ei:
        estimate_moments(_ss(x), strict=True)
    null = ei.value.null_directions
    assert null.shape == (1, 2)
    assert abs(null[0] @ np.array([1.0, 1.0])) < 1e-8


# -- generator -------------------------------------------------------------------------------


def test_linear_generator_reproduces_signal_coordinate():
    s = gen_noise_signal(NoiseSignalSpec(n=50, d_noise=1, d_signal=1, signal_fn="linear", signal_params={"a": 1.0}))
    np.testing.assert_array_equal(s.y.real, s.x[:, 1])
    assert np.all(s.y.imag == 0)


def test_generator_determinism():
    spec = NoiseSignalSpec(n=100, d_noise=2, d_signal=2, signal_fn="product", label_noise_sd=0.3, seed=7)
    a, b = gen_noise_signal(spec), gen_noise_signal(spec)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    c = gen_noise_signal(NoiseSignalSpec(n=100, d_noise=2, d_signal=2, signal_fn="product", label_noise_sd=0.3, seed=8))
    assert not np.array_equal(a.x, c.x)


def test_noise_coordinates_uninformative():
    n = 10_000
    s = gen_noise_signal(NoiseSignalSpec(n=n, d_noise=3, d_signal=2, signal_fn="sine", seed=3))
    y = s.y.real
    for j in range(3):
        assert abs(np.corrcoef(s.x[:, j], y)[0, 1]) <= 3 / np.sqrt(n)
    cross = np.cov(s.x.T)[:3, 3:]
    assert np.max(np.abs(cross)) <= 5 / np.sqrt(n)


@pytest.mark.parametrize("fn,params", [("sine", {"amp": 2.0, "freq": 0.5}), ("step", {"height": 3.0, "threshold": 0.2}),
                                       ("product", {"scale": 0.5}), ("linear", {"a": [1.0, -1.0]})])
def test_signal_functions(fn, params):
    s = gen_noise_signal(NoiseSignalSpec(n=30, d_noise=1, d_signal=2, signal_fn=fn, signal_params=params, seed=1))
    xs = s.x[:, 1:]
    expected = {
        "sine": 2.0 * np.sin(0.5 * xs[:, 0]),
        "step": 3.0 * (xs[:, 0] > 0.2),
        "product": 0.5 * xs[:, 0] * xs[:, 1],
        "linear": xs[:, 0] - xs[:, 1],
    }[fn]
    np.testing.assert_allclose(s.y.real, expected, rtol=1e-15)


def test_bimodal_signal_and_noise_covariance():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    s = gen_noise_signal(NoiseSignalSpec(n=20_000, d_noise=2, d_signal=1, noise_cov=cov, signal_dist="bimodal",
                                         signal_sep=2.0, seed=4))
    np.testing.assert_allclose(np.cov(s.x[:, :2].T), cov, atol=0.06)
    assert np.mean(np.abs(s.x[:, 2])) > 1.5  # two separated modes


@pytest.mark.parametrize(
    "kw",
    [
        dict(signal_fn="cubic"),
        dict(signal_dist="uniform"),
        dict(signal_params={"freq": 1.0, "phase": 0.0}),
        dict(label_noise_sd=-1.0),
        dict(noise_cov=[[1.0, 2.0], [2.0, 1.0]]),
        dict(noise_cov=[[1.0]]),
        dict(n=1),
    ],
)
def test_generator_spec_validation(kw):
    base = dict(n=10, d_noise=2, d_signal=1)
    base.update(kw)
    if "noise_cov" in kw:
        base["noise_cov"] = np.array(kw["noise_cov"])
    with pytest.raises(ConfigError):
        NoiseSignalSpec(**base)


def test_noise_monitors_orthonormal_and_span_noise_axes(rng):
    raw = gen_noise_signal(NoiseSignalSpec(n=500, d_noise=2, d_signal=2, seed=2))
    m = estimate_moments(raw)
    mon = noise_monitors(m, 2)
    np.testing.assert_allclose(mon @ mon.T, np.eye(2), atol=1e-12)
    # span equals the whitened images of the raw noise axes
    imgs = m.whitener[:, :2]
    resid = imgs - mon.T @ (mon @ imgs)
    assert np.max(np.abs(resid)) < 1e-12


# -- CSV -------------------------------------------------------------------------------------


def test_csv_round_trip_exact(tmp_path):
    s = SampleSet(np.random.default_rng(0).standard_normal((20, 3)), np.random.default_rng(1).standard_normal(20) * (1 + 0.5j))
    p = save_csv(s, tmp_path / "d.csv")
    t = load_csv(p)
    np.testing.assert_array_equal(s.x, t.x)
    np.testing.assert_array_equal(s.y, t.y)
    assert p.read_text().splitlines()[0] == "x0,x1,x2,y_re,y_im"


@pytest.mark.parametrize(
    "text,match",
    [
        ("", "empty"),
        ("a,b,c\n1,2,3\n", "header"),
        ("x0,y_re,y_im\n1,2\n", "expected 3 columns"),
        ("x0,y_re,y_im\n1,2,abc\n", "non-numeric"),
    ],
)
def test_csv_validation(tmp_path, text, match):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_csv(p)


def test_clamped_whitening_still_finite():
    x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [0.0, 0.0]])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = estimate_moments(_ss(x))
    assert np.all(np.isfinite(whiten(_ss(x), m).x))
