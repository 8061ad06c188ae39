import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from segnoise.core import NoiseMask
from segnoise.metrics import (
    DEFAULT_TAUS,
    MetricsReport,
    ThresholdSweep,
    ana,
    metric_rows,
    retained_pixels,
    srm,
)

from oracles import ana_loop, srm_loop

GRID = np.array([[0.2, 0.4], [0.6, 0.8]])


class TestRetained:
    def test_no_threshold_keeps_all(self):
        O = NoiseMask(np.random.default_rng(0).uniform(size=(8, 9)))
        assert retained_pixels(O, -0.1).all()

    def test_direct_comparison(self):
        O = NoiseMask(np.array([[0.05, 0.2], [0.0, 0.15]]))
        keep = retained_pixels(O, 0.1)
        assert set(zip(*np.nonzero(keep))) == {(0, 1), (1, 1)}

    def test_empty_gives_null(self):
        O = NoiseMask(GRID)
        assert not retained_pixels(O, 1.0).any()
        assert ana(O, 1.0) is None and srm(O, 1.0) is None

    def test_rejects_non_finite_tau(self):
        with pytest.raises(ValueError):
            retained_pixels(NoiseMask(GRID), float("nan"))


class TestAnaSrm:
    def test_zeros(self):
        O = NoiseMask(np.zeros((4, 4)))
        assert ana(O, -0.1) == 0.0 and srm(O, -0.1) == 0.0

    def test_mean(self):
        assert ana(NoiseMask(GRID), -0.1) == pytest.approx(0.5)

    def test_thresholded_mean(self):
        assert ana(NoiseMask(GRID), 0.5) == pytest.approx(0.7)

    def test_second_moment(self):
        assert srm(NoiseMask(GRID), -0.1) == pytest.approx(0.30)

    def test_constant_identity(self):
        O = NoiseMask(np.full((5, 5), 0.5))
        assert srm(O) == pytest.approx(0.25)
        assert srm(O) == pytest.approx(ana(O) ** 2)


class TestSweep:
    def test_default(self):
        assert ThresholdSweep().taus == (-0.1, 0.0, 0.1, 0.2, 0.3)

    @pytest.mark.parametrize("taus", [(0.1, 0.1), (0.2, 0.1), ()])
    def test_must_increase(self, taus):
        with pytest.raises(ValueError):
            ThresholdSweep(taus)


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, (6, 7), elements=st.floats(0, 1)))
def test_properties_random_masks(values):
    O = NoiseMask(values)
    prev = -np.inf
    for tau in DEFAULT_TAUS:
        a, s = ana(O, tau), srm(O, tau)
        assert a == pytest.approx(ana_loop(values, tau), abs=1e-12) if a is not None else ana_loop(values, tau) is None
        if a is None:
            continue
        assert s <= a + 1e-15
        assert a >= prev - 1e-15
        prev = a


def test_report_cardinality_and_csv_roundtrip(tmp_path):
    sweep = ThresholdSweep()
    rng = np.random.default_rng(0)
    report = MetricsReport()
    for method in ("a", "b", "c"):
        for i in range(20):
            report.rows.extend(metric_rows(NoiseMask(rng.uniform(size=(8, 8))), sweep, method, "mul", f"img{i}"))
    assert len(report.rows) == 300
    path = report.write_csv(tmp_path / "r.csv")
    back = MetricsReport.from_csv(path)
    assert back.to_csv() == report.to_csv()
    agg = report.aggregate()
    assert len(agg) == 15
    assert all(0 <= e["ana_mean"] <= 1 for e in agg)


def test_null_rows_serialize_empty(tmp_path):
    rows = metric_rows(NoiseMask(np.full((4, 4), 0.05)), ThresholdSweep((-0.1, 0.1)), "m", "mul", "x")
    report = MetricsReport(rows=rows)
    assert rows[1].ana is None and rows[1].retained_pixel_fraction == 0.0
    line = report.to_csv().splitlines()[2]
    assert line.split(",")[4:6] == ["", ""]
    assert report.aggregate()[1]["ana_null"] == 1
    payload = report.to_json()
    assert payload["schema_version"] == 1


def test_ranking_lowest_first():
    rows = []
    sweep = ThresholdSweep((-0.1,))
    rows += metric_rows(NoiseMask(np.full((4, 4), 0.7)), sweep, "worse", "mul", "0")
    rows += metric_rows(NoiseMask(np.full((4, 4), 0.2)), sweep, "better", "mul", "0")
    assert MetricsReport(rows=rows).ranking(-0.1) == ["better", "worse"]
