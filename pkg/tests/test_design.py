import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geemort.dataio import MortalityRecord, PanelDataset, to_panel
from geemort.design import KtSeries, ModelSpec, build_design, compute_kt, future_design
from geemort.errors import KtCoverageGap, RaggedPanel, Singular, UnknownLevel
from geemort.gee import fit

from helpers import grid_records


def panel_from(values, ages=(20, 21), years=(1991, 1992), countries=("CZE",), genders=("m",), mode="single"):
    """Panel whose log rate at (c, g, age, year) is ``values(c, g, age, year)``."""
    recs = grid_records(countries, genders, ages, years, rate=lambda c, g, a, t: math.exp(values(c, g, a, t)))
    return to_panel(recs, ModelSpec(population_mode=mode, age_range=(min(ages), max(ages)),
                                    train_years=(min(years), max(years))))


def test_kt_constant():
    kt = compute_kt(panel_from(lambda c, g, a, t: -3.0, years=(1991, 1992, 1993)))
    assert kt.years.tolist() == [1991, 1992, 1993]
    assert np.allclose(kt.values, -3.0, atol=1e-15)


def test_kt_two_point_mean():
    kt = compute_kt(panel_from(lambda c, g, a, t: -2.0 if a == 20 else -4.0, years=(1991,)))
    assert kt.values[0] == pytest.approx(-3.0, abs=1e-15)


def test_kt_multipopulation_bruteforce():
    cells = [(c, g, a) for c in ("A", "B") for g in ("f", "m") for a in (30, 31)]
    index = {cell: i for i, cell in enumerate(cells)}
    years = (2000, 2001, 2002)

    def value(c, g, a, t):
        return -float(index[(c, g, a)] + 8 * (t - 2000) + 1)

    kt = compute_kt(panel_from(value, ages=(30, 31), years=years, countries=("A", "B"),
                               genders=("f", "m"), mode="multi"))
    for t, k in zip(years, kt.values):
        vals = [value(c, g, a, t) for c, g, a in cells]
        assert k == pytest.approx(sum(vals) / 8, abs=1e-12)


def test_kt_ragged():
    recs = grid_records(ages=(20, 21), years=(1991, 1992))[:-1]
    with pytest.raises(RaggedPanel):
        compute_kt(to_panel(recs, ModelSpec(age_range=(20, 21), train_years=(1991, 1992))))


def test_ktseries_gap():
    with pytest.raises(KtCoverageGap):
        KtSeries([1991, 1993], [0.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_kt_permutation_and_shift(seed, c):
    rng = np.random.default_rng(seed)
    panel = panel_from(lambda *_: float(rng.normal(-5, 2)), ages=(20, 21, 22), years=(1991, 1992, 1993, 1994))
    # a valid panel keeps waves ordered within a cluster, so permute cluster blocks
    blocks = list(panel.cluster_index.values())
    perm = np.concatenate([blocks[i] for i in rng.permutation(len(blocks))])
    shuffled = PanelDataset(panel.population_mode, [panel.cluster_id[i] for i in perm], panel.wave[perm],
                            panel.y[perm], panel.weight[perm], panel.country[perm], panel.gender[perm],
                            panel.age[perm])
    assert np.array_equal(compute_kt(panel).values, compute_kt(shuffled).values)
    shifted = PanelDataset(panel.population_mode, panel.cluster_id, panel.wave, panel.y + c, panel.weight,
                           panel.country, panel.gender, panel.age)
    assert np.allclose(compute_kt(shifted).values, compute_kt(panel).values + c, rtol=0, atol=1e-12)


def single_design(ages=range(20, 81), years=range(1991, 2011), **spec):
    panel = panel_from(lambda c, g, a, t: -9 + 0.09 * a - 0.02 * (t - 1991) + 0.001 * ((a * 7 + t) % 5),
                       ages=tuple(ages), years=tuple(years))
    s = ModelSpec(age_range=(min(ages), max(ages)), train_years=(min(years), max(years)), **spec)
    return build_design(panel, compute_kt(panel), s)


def test_single_column_count_and_names():
    d = single_design()
    assert d.n_params == 61 * 4 == 244
    assert d.column_names[:2] == ["age20", "age21"]
    assert d.column_names[61:63] == ["age20:kt", "age21:kt"]
    assert "age65" in d.column_names and "age65:kt2" in d.column_names and "age65:cohort" in d.column_names
    assert d.n_params == len(set(d.column_names))


def test_multi_column_count():
    recs = grid_records(("CZE", "SVK"), ("f", "m"), range(20, 81), (2000, 2001, 2002))
    spec = ModelSpec(population_mode="multi", age_range=(20, 80), train_years=(2000, 2002))
    panel = to_panel(recs, spec)
    d = build_design(panel, compute_kt(panel), spec)
    assert d.n_params == 1 + 1 + 61 + 3 * 244 == 795
    assert d.column_names[:3] == ["countrySVK", "genderm", "age20"]
    assert "countryCZE:genderf:age65:kt" in d.column_names
    row = next(i for i in range(d.n_obs) if d.country[i] == "SVK" and d.gender[i] == "m" and d.age[i] == 65)
    nz = {d.column_names[j] for j in np.flatnonzero(d.X[row])}
    assert {"countrySVK", "genderm", "age65", "countrySVK:genderm:age65:kt"} <= nz
    assert not any(n.startswith("countryCZE") for n in nz)


def test_age_block_one_hot():
    d = single_design(ages=range(20, 31), years=range(1991, 1996))
    age_cols = [j for j, n in enumerate(d.column_names) if n.startswith("age") and ":" not in n]
    block = d.X[:, age_cols]
    assert np.all((block == 0) | (block == 1))
    assert np.all(np.count_nonzero(block, axis=1) == 1)


def test_cohort_centering():
    d = single_design(ages=(20, 21), years=(1991, 1992), cohort_centering=1930.0)
    j = d.column_names.index("age20:cohort")
    i = next(i for i in range(d.n_obs) if d.age[i] == 20 and d.waves[i] == 1992)
    assert d.X[i, j] == (1992 - 20) - 1930
    auto = single_design(ages=(20, 21), years=(1991, 1992))
    assert auto.cohort_center == round(np.mean([1971, 1972, 1970, 1971]))


def test_kt_coverage_gap():
    panel = panel_from(lambda *_: -3.0, years=(1991, 1992))
    with pytest.raises(KtCoverageGap):
        build_design(panel, KtSeries([1991], [-3.0]), ModelSpec(age_range=(20, 21), train_years=(1991, 1992)))


def test_kt_equal_kt2_is_singular_at_fit():
    # k_t alternates 0, 1 so the k_t and k_t^2 columns coincide
    panel = panel_from(lambda c, g, a, t: float((t - 1991) % 2) + (0.5 if a == 20 else -0.5),
                       years=(1991, 1992, 1993, 1994, 1995))
    kt = compute_kt(panel)
    assert set(np.round(kt.values, 12)) == {0.0, 1.0}
    d = build_design(panel, kt, ModelSpec(age_range=(20, 21), train_years=(1991, 1995), cohort=False))
    with pytest.raises(Singular):
        fit(d, "independence")


def test_future_design():
    d = single_design(ages=range(20, 81), years=range(1991, 2011), cohort_centering=1930.0)
    ktf = KtSeries([2011, 2012], [-5.0, -5.1], [0.1, 0.2])
    fd = future_design(d, [("CZE", "m")], [65, 20], [2011, 2012], ktf)
    assert fd.column_names == d.column_names
    assert fd.age.tolist() == [65, 65, 20, 20] and fd.waves.tolist() == [2011, 2012, 2011, 2012]
    assert fd.X[0, fd.column_names.index("age65:cohort")] == 16.0
    assert fd.X[1, fd.column_names.index("age65:kt2")] == pytest.approx(5.1 ** 2)
    assert fd.kt_variance.tolist() == [0.1, 0.2, 0.1, 0.2]
    assert np.all(np.isnan(fd.y))
    with pytest.raises(UnknownLevel):
        future_design(d, [("CZE", "m")], [85], [2011], ktf)
    with pytest.raises(UnknownLevel):
        future_design(d, [("SVK", "m")], [65], [2011], ktf)
    with pytest.raises(KtCoverageGap):
        future_design(d, [("CZE", "m")], [65], [2013], ktf)
    empty = future_design(d, [("CZE", "m")], [65], [], ktf)
    assert empty.X.shape == (0, d.n_params) and empty.column_names == d.column_names
