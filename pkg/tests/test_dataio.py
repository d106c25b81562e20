import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geemort.dataio import (
    MortalityRecord, load_csv, load_mx, read_panel_csv, to_panel, write_panel_csv, write_records_csv,
)
from geemort.design import ModelSpec
from geemort.errors import (
    BadValue, DuplicateKey, EmptyInput, InconsistentPanel, InputIOError, MissingColumn, MissingExposure,
)

from helpers import grid_records

HEADER = "country,gender,year,age,rate,exposure\n"
SINGLE = ModelSpec(age_range=(0, 110), train_years=(1900, 2100))
MULTI = ModelSpec(population_mode="multi", age_range=(0, 110), train_years=(1900, 2100))


def write(tmp_path, text, name="in.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_row_parse(tmp_path):
    recs = load_csv(write(tmp_path, HEADER + "CZE,m,1991,65,0.0312,10000\n"))
    assert recs == [MortalityRecord("CZE", "m", 1991, 65, 0.0312, 10000.0)]


@pytest.mark.parametrize("rate", ["0", "", "-0.1", "abc", "nan"])
def test_bad_rate(tmp_path, rate):
    with pytest.raises(BadValue) as info:
        load_csv(write(tmp_path, HEADER + "CZE,m,1991,65,0.02,1\n" + f"CZE,m,1992,65,{rate},1\n"))
    assert info.value.row == 3 and info.value.column == "rate"
    assert info.value.code == "E_BAD_VALUE"


def test_duplicate_key(tmp_path):
    with pytest.raises(DuplicateKey):
        load_csv(write(tmp_path, HEADER + "CZE,m,1991,65,0.03,1\nCZE,m,1991,65,0.04,1\n"))


def test_missing_column_and_file(tmp_path):
    with pytest.raises(MissingColumn):
        load_csv(write(tmp_path, "country,gender,year,age,mx\nCZE,m,1991,65,0.03\n"))
    with pytest.raises(InputIOError) as info:
        load_csv(tmp_path / "absent.csv")
    assert str(info.value).endswith("absent.csv")


def test_schema_mapping_and_trimming(tmp_path):
    p = write(tmp_path, "cntry,sex,yr,x,mx\n CZE , m ,1991,110+,0.5\n")
    recs = load_csv(p, {"country": "cntry", "gender": "sex", "year": "yr", "age": "x", "rate": "mx"})
    assert recs == [MortalityRecord("CZE", "m", 1991, 110, 0.5, None)]


def test_labels_case_sensitive():
    recs = [MortalityRecord("CZE", "m", 2000, 30, 0.01), MortalityRecord("cze", "m", 2000, 30, 0.01)]
    assert to_panel(recs, MULTI).n_clusters == 2


def test_to_panel_counts_and_log():
    panel = to_panel(grid_records(ages=(20, 21), years=(1991, 1992, 1993)), SINGLE)
    assert panel.n_clusters == 2 and panel.cluster_sizes() == {20: 3, 21: 3}
    p1 = to_panel([MortalityRecord("CZE", "m", 1991, 65, 0.0312)], SINGLE)
    assert p1.y[0] == pytest.approx(-3.4673, abs=1e-4) and p1.y[0] == math.log(0.0312)


def test_multipopulation_cluster_count():
    recs = grid_records(countries=("CZE", "SVK"), genders=("f", "m"), ages=range(20, 81), years=(2000, 2001))
    panel = to_panel(recs, MULTI)
    assert panel.n_clusters == 244 == 2 * 2 * 61


def test_filtering_sorting_and_weights():
    recs = grid_records(ages=(19, 20, 21), years=(1990, 1991, 1992))[::-1]
    recs[0] = MortalityRecord(recs[0].country, recs[0].gender, recs[0].year, recs[0].age, recs[0].rate, 3000.0)
    spec = ModelSpec(weighted=True, age_range=(20, 21), train_years=(1991, 1992))
    panel = to_panel(recs, spec)
    assert panel.cluster_id == [20, 20, 21, 21]
    assert panel.wave.tolist() == [1991, 1992, 1991, 1992]
    assert panel.weight.mean() == pytest.approx(1.0)
    # exposures 1000, 1000, 1000, 3000 over a mean of 1500
    assert np.allclose(panel.weight, [2 / 3, 2 / 3, 2 / 3, 2.0], rtol=1e-15)
    assert np.all(to_panel(recs, ModelSpec(age_range=(19, 21), train_years=(1990, 1992))).weight == 1.0)


def test_weighting_requires_exposure():
    recs = [MortalityRecord("CZE", "m", 1991, 20, 0.01, None)]
    with pytest.raises(MissingExposure):
        to_panel(recs, ModelSpec(weighted=True, age_range=(20, 20), train_years=(1991, 1991)))


def test_empty_and_inconsistent():
    with pytest.raises(EmptyInput):
        to_panel([], SINGLE)
    with pytest.raises(EmptyInput):
        to_panel(grid_records(), ModelSpec(age_range=(50, 60)))
    # two populations collapse onto one age cluster in single mode
    with pytest.raises(InconsistentPanel):
        to_panel(grid_records(countries=("A", "B")), SINGLE)


def test_mx_layout(tmp_path):
    text = (
        "Czechia, Death rates (period 1x1)\tLast modified: 01 Jan 2024\n\n"
        "  Year          Age             Female            Male           Total\n"
        "  1991           0             0.010000          0.012000        0.011000\n"
        "  1991         110+            .                 .               .\n"
        "  1992           0             0.009000          0.011000        0.010000\n"
    )
    p = write(tmp_path, text, "CZE.Mx_1x1.txt")
    recs = load_mx(p, ages=(0, 100))
    assert [(r.country, r.gender, r.year, r.age, r.rate) for r in recs] == [
        ("CZE", "f", 1991, 0, 0.01), ("CZE", "m", 1991, 0, 0.012),
        ("CZE", "f", 1992, 0, 0.009), ("CZE", "m", 1992, 0, 0.011),
    ]
    with pytest.raises(BadValue):
        load_mx(p)
    ages = write(tmp_path, "Year,Age,Female,Male,Total\n1991,110+,0.5,0.6,0.55\n", "x.csv")
    assert load_mx(ages, country="X", sexes=["Total"])[0].age == 110


def test_mx_exposure_file(tmp_path):
    mx = write(tmp_path, "Year Age Female Male Total\n1991 30 0.001 0.002 0.0015\n", "A.Mx_1x1.txt")
    ex = write(tmp_path, "Year Age Female Male Total\n1991 30 5000 4000 9000\n", "A.Exposures_1x1.txt")
    recs = load_mx(mx, sexes=["Male"], exposure_path=ex)
    assert recs == [MortalityRecord("A", "m", 1991, 30, 0.002, 4000.0)]
    with pytest.raises(MissingExposure):
        load_mx(write(tmp_path, "Year Age Female Male Total\n1992 30 1 1 1\n", "B.txt"), exposure_path=ex)


labels = st.text(alphabet="ABCXYZfm", min_size=1, max_size=3)
record_sets = st.lists(
    st.tuples(labels, labels, st.integers(1950, 2020), st.integers(0, 100),
              st.floats(1e-6, 1.0, allow_subnormal=False), st.floats(1.0, 1e6)),
    min_size=1, max_size=40, unique_by=lambda t: t[:4],
)


@settings(max_examples=50, deadline=None)
@given(record_sets)
def test_panel_roundtrip_partition_and_log(tmp_path_factory, rows):
    recs = [MortalityRecord(*r) for r in rows]
    spec = ModelSpec(population_mode="multi", weighted=True, age_range=(0, 100), train_years=(1950, 2020))
    panel = to_panel(recs, spec)
    assert sum(panel.cluster_sizes().values()) == len(panel)
    seen = np.concatenate(list(panel.cluster_index.values()))
    assert sorted(seen.tolist()) == list(range(len(panel)))
    rates = {r.key: r.rate for r in recs}
    for i in range(len(panel)):
        rate = rates[(panel.country[i], panel.gender[i], int(panel.wave[i]), int(panel.age[i]))]
        assert abs(math.exp(panel.y[i]) - rate) <= 1e-12 * rate
    path = tmp_path_factory.mktemp("rt") / "panel.csv"
    write_panel_csv(panel, path)
    assert read_panel_csv(path) == panel


@settings(max_examples=30, deadline=None)
@given(record_sets)
def test_records_csv_roundtrip(tmp_path_factory, rows):
    recs = [MortalityRecord(*r) for r in rows]
    path = tmp_path_factory.mktemp("rec") / "recs.csv"
    write_records_csv(recs, path)
    assert load_csv(path) == recs
