import json

import numpy as np
import pytest

from countyshap import synthetic
from countyshap.data import Dataset, Schema
from countyshap.ols import (
    OlsFit,
    RankDeficientError,
    fit_wls,
    fit_wls_arrays,
    out_of_range,
    predict,
    stars,
    summary_record,
    summary_table,
)


def test_recovers_slope_under_noise():
    ds = synthetic.linear(500, [-0.5], 0.9, seed=2, sigma=0.01)
    fit = fit_wls(ds)
    assert -0.52 <= fit.coefficients["x1"] <= -0.48
    assert fit.coefficients["const"] == pytest.approx(0.9, abs=0.01)


def test_zero_noise_exact_recovery():
    coef = np.array([0.3, -1.2, 2.5])
    ds = synthetic.linear(40, coef, 0.7, seed=5)
    fit = fit_wls(ds)
    np.testing.assert_allclose(fit.beta(), [*coef, 0.7], rtol=1e-10)


def test_weight_scaling_invariance(county_ds):
    a = fit_wls(county_ds)
    df = county_ds.frame.copy()
    df["pop_adult"] *= 7
    b = fit_wls(Dataset(df, county_ds.schema))
    for n in a.names:
        assert b.coefficients[n] == pytest.approx(a.coefficients[n], rel=1e-10)
        assert b.std_errors[n] == pytest.approx(a.std_errors[n], rel=1e-10)


def duplicated(X, y, w):
    reps = w.astype(int)
    return np.repeat(X, reps, axis=0), np.repeat(y, reps), np.ones(reps.sum())


@pytest.mark.parametrize("seed", range(5))
def test_frequency_weights_equal_row_duplication(seed):
    rng = np.random.default_rng(seed)
    n = 40
    X = rng.random((n, 3))
    y = 0.2 + X @ [0.5, -0.3, 0.1] + rng.normal(0, 0.05, n)
    w = rng.integers(1, 6, n).astype(float)
    names = ["a", "b", "c"]
    weighted = fit_wls_arrays(X, y, w, names, weight_kind="frequency")
    Xd, yd, wd = duplicated(X, y, w)
    plain = fit_wls_arrays(Xd, yd, wd, names, weight_kind="frequency")
    plain_a = fit_wls_arrays(Xd, yd, wd, names, weight_kind="analytic")
    for n_ in weighted.names:
        assert weighted.coefficients[n_] == pytest.approx(plain.coefficients[n_], rel=1e-10)
        assert weighted.std_errors[n_] == pytest.approx(plain.std_errors[n_], rel=1e-10)
        # unit weights: both conventions coincide
        assert plain_a.std_errors[n_] == pytest.approx(plain.std_errors[n_], rel=1e-12)
    # analytic weights share the coefficients but not the degrees of freedom
    analytic = fit_wls_arrays(X, y, w, names)
    assert analytic.coefficients["a"] == pytest.approx(plain.coefficients["a"], rel=1e-10)
    assert analytic.df2 == n - 4
    assert weighted.df2 == w.sum() - 4


def test_residual_orthogonality(county_ds):
    fit = fit_wls(county_ds)
    X = county_ds.X
    resid = county_ds.y - fit.predict_many(X)
    w = county_ds.w
    scale = np.abs(w * resid).sum() * np.abs(X).max()
    for j in range(X.shape[1]):
        assert abs(np.sum(w * resid * X[:, j])) <= 1e-8 * scale
    assert abs(np.sum(w * resid)) <= 1e-8 * scale


def test_matches_statsmodels(county_ds):
    sm = pytest.importorskip("statsmodels.api")
    fit = fit_wls(county_ds)
    X = sm.add_constant(county_ds.X, prepend=False)
    ref = sm.WLS(county_ds.y, X, weights=county_ds.w).fit()
    np.testing.assert_allclose(fit.beta(), ref.params, rtol=1e-9)
    np.testing.assert_allclose([fit.std_errors[n] for n in fit.names], ref.bse, rtol=1e-8)
    np.testing.assert_allclose([fit.p_values[n] for n in fit.names], ref.pvalues, rtol=1e-6, atol=1e-300)
    assert fit.r2 == pytest.approx(ref.rsquared, rel=1e-10)
    assert fit.adj_r2 == pytest.approx(ref.rsquared_adj, rel=1e-10)
    assert fit.f_stat == pytest.approx(ref.fvalue, rel=1e-8)
    assert fit.residual_std_error == pytest.approx(np.sqrt(ref.scale), rel=1e-10)


def test_fit_invariants(county_ds):
    fit = fit_wls(county_ds)
    assert len(fit.coefficients) == len(county_ds.predictors) + 1
    assert fit.adj_r2 <= fit.r2 <= 1
    assert all(0 <= p <= 1 for p in fit.p_values.values())
    assert fit.df2 == fit.n_obs - 8
    assert fit.df1 == 7


def test_rank_deficient():
    rng = np.random.default_rng(0)
    X = rng.random((30, 2))
    X = np.column_stack([X, X[:, 0] * 2 - X[:, 1]])
    with pytest.raises(RankDeficientError):
        fit_wls_arrays(X, rng.random(30), np.ones(30), ["a", "b", "c"])


@pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
def test_nonpositive_weights(bad):
    rng = np.random.default_rng(0)
    w = np.ones(20)
    w[3] = bad
    with pytest.raises(ValueError, match="weights"):
        fit_wls_arrays(rng.random((20, 1)), rng.random(20), w, ["a"])


def _table_fit(**coefs):
    names = ("perc_rep", "const")
    return OlsFit(names=names, coefficients=coefs, std_errors={n: 0.01 for n in names},
                  t_stats={n: 1.0 for n in names}, p_values={n: 0.001 for n in names}, r2=0.5, adj_r2=0.49,
                  f_stat=10.0, f_pvalue=0.001, df1=1, df2=100, residual_std_error=1.0, n_obs=102,
                  sum_weights=102.0)


def test_predict_intercept_and_arithmetic():
    fit = _table_fit(perc_rep=-0.522, const=0.945)
    assert predict(fit, {"perc_rep": 0.0}) == 0.945
    assert predict(fit, {"perc_rep": 0.5}) == pytest.approx(0.684, abs=1e-12)
    with pytest.raises(KeyError):
        predict(fit, {"perc_black": 0.1})


def test_predict_passes_through_weighted_centroid(county_ds):
    fit = fit_wls(county_ds)
    w = county_ds.w
    centroid = dict(zip(county_ds.predictors, (w @ county_ds.X) / w.sum()))
    assert fit.predict(centroid) == pytest.approx(county_ds.weighted_target_mean(), abs=1e-12)


def test_predictions_not_clamped():
    fit = _table_fit(perc_rep=-0.522, const=0.945)
    p = fit.predict_many(np.array([[2.5], [0.5], [-1.0]]))
    assert p[0] < 0 and p[2] > 1
    assert list(out_of_range(p)) == [0, 2]


@pytest.mark.parametrize("p,expected", [(0.04, "**"), (0.5, ""), (0.009, "***"), (0.09, "*"), (0.05, "*"),
                                        (0.01, "**"), (0.1, "")])
def test_stars(p, expected):
    assert stars(p) == expected


def test_summary_table_layout(county_ds):
    fit = fit_wls(county_ds)
    text = summary_table(fit)
    assert "Note:" in text and "*p<0.1; **p<0.05; ***p<0.01" in text
    assert "Observations" in text and f"{fit.n_obs:,}" in text
    assert f"(df = 7; {fit.n_obs - 8})" in text
    line = next(l for l in text.splitlines() if l.startswith("perc_rep"))
    assert f"{fit.coefficients['perc_rep']:.3f}" in line and f"({fit.std_errors['perc_rep']:.3f})" in line
    rec = json.loads(summary_record(fit))
    assert rec["coefficients"]["perc_rep"] == fit.coefficients["perc_rep"]
    assert OlsFit.from_dict(fit.to_dict()) == fit


def test_table_row_format_for_reported_values():
    names = ("perc_rep", "const")
    fit = OlsFit(names=names, coefficients={"perc_rep": -0.522, "const": 0.945},
                 std_errors={"perc_rep": 0.015, "const": 0.023}, t_stats={n: 0.0 for n in names},
                 p_values={"perc_rep": 1e-50, "const": 1e-50}, r2=0.498, adj_r2=0.497, f_stat=371.924,
                 f_pvalue=1e-100, df1=7, df2=2622, residual_std_error=27.831, n_obs=2630, sum_weights=1.0,
                 target="PercVacFull")
    text = summary_table(fit)
    assert "-0.522*** (0.015)" in text
    assert "0.945*** (0.023)" in text
    assert "27.831 (df = 2,622)" in text
    assert "371.924*** (df = 7; 2,622)" in text
    assert "2,630" in text


def test_ols_generic_schema_columns():
    ds = synthetic.linear(30, [1.0, 2.0], 0.5, seed=1)
    assert ds.schema == Schema.generic(["x1", "x2"])
    fit = fit_wls(ds, predictors=["x2"])
    assert fit.predictors == ("x2",)
