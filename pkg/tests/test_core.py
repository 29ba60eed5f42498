import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbsizing.core import (
    DEFAULT_TOU_BANDS,
    Band,
    CbsParams,
    CostBreakdown,
    PriceSeries,
    TariffSchedule,
    TimeGrid,
    UserParams,
    discomfort,
    discomfort_coefficients,
    horizon_price_reference,
    time_weight,
)

kappas = st.floats(0.0, 5.0)
taus = st.floats(0.0, 1.0)
horizon_pos = st.integers(1, 64)


class TestTimeWeight:
    @pytest.mark.parametrize("h,kappa,tau,expected", [(4, 0.0, 0.2, 1.0), (4, 0.5, 1.0, 1.0), (4, 0.5, 0.2, 1.4 / 3)])
    def test_examples(self, h, kappa, tau, expected):
        assert time_weight(h, kappa, tau) == pytest.approx(expected, abs=1e-12)

    def test_rejects_zero_position(self):
        with pytest.raises(ValueError):
            time_weight(0, 0.3, 0.2)

    @given(horizon_pos, taus)
    def test_no_discounting_without_kappa(self, h, tau):
        assert time_weight(h, 0.0, tau) == 1.0

    @given(horizon_pos, kappas)
    def test_unit_tau_gives_one(self, h, kappa):
        assert time_weight(h, kappa, 1.0) == pytest.approx(1.0, abs=1e-12)

    @given(horizon_pos, kappas, st.floats(0.0, 0.999))
    def test_non_increasing_in_h(self, h, kappa, tau):
        assert time_weight(h + 1, kappa, tau) <= time_weight(h, kappa, tau) + 1e-15


class TestDiscomfort:
    @pytest.mark.parametrize("x,expected", [(1.0, 0.0), (1.2, -0.016), (0.8, 0.024)])
    def test_examples(self, x, expected):
        assert discomfort(x, 1.0, -0.5, 0.10) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("x_hat,beta", [(0.0, -0.5), (-1.0, -0.5), (1.0, 0.0), (1.0, 0.3)])
    def test_rejects_bad_domain(self, x_hat, beta):
        with pytest.raises(ValueError):
            discomfort(1.0, x_hat, beta, 0.1)

    @given(st.floats(0.05, 5.0), st.floats(-2.0, 2.0), st.floats(-0.9, -0.05), st.floats(0.001, 2.0))
    def test_polynomial_coefficients_match(self, x_hat, x, beta, lam):
        q, lin, const = discomfort_coefficients(x_hat, beta, lam)
        assert q > 0
        assert q * x * x + lin * x + const == pytest.approx(discomfort(x, x_hat, beta, lam), abs=1e-10)

    @given(st.floats(0.05, 5.0), st.floats(-0.9, -0.05), st.floats(0.001, 2.0))
    def test_slope_at_expected_is_minus_reference_price(self, x_hat, beta, lam):
        step = 1e-5 * x_hat
        slope = (discomfort(x_hat + step, x_hat, beta, lam) - discomfort(x_hat - step, x_hat, beta, lam)) / (2 * step)
        assert slope == pytest.approx(-lam, rel=1e-6)

    @settings(max_examples=50)
    @given(st.floats(0.05, 5.0), st.floats(-0.9, -0.05), st.floats(0.001, 2.0), st.floats(0.01, 1.0))
    def test_convex(self, x_hat, beta, lam, d):
        mid = discomfort(x_hat, x_hat, beta, lam)
        assert discomfort(x_hat + d, x_hat, beta, lam) + discomfort(x_hat - d, x_hat, beta, lam) > 2 * mid


class TestPriceReference:
    @pytest.mark.parametrize("row,expected", [([0.05, 0.30, 0.10], 0.30), ([-0.10, -0.02], 0.01), ([0.30], 0.30)])
    def test_examples(self, row, expected):
        assert horizon_price_reference(row, floor=0.01) == expected

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            horizon_price_reference([])

    @given(st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=20), st.randoms())
    def test_permutation_invariant(self, row, rnd):
        shuffled = list(row)
        rnd.shuffle(shuffled)
        assert horizon_price_reference(row) == horizon_price_reference(shuffled)


class TestTypes:
    def test_grid_validation(self):
        with pytest.raises(ValueError):
            TimeGrid(rebound_len=40, horizon_len=32)
        with pytest.raises(ValueError):
            TimeGrid(delta_h=0)
        with pytest.raises(ValueError):
            TimeGrid(n_total=0)

    def test_grid_bookkeeping(self):
        g = TimeGrid(0.5, 10, 4, 2, start_hour=23.0)
        assert g.n_series == 13
        assert g.horizon_slice(3) == slice(3, 7)
        assert g.hours_of_day()[:3].tolist() == [23.0, 23.5, 0.0]

    def test_price_series_shape_checked(self):
        with pytest.raises(ValueError):
            PriceSeries(np.zeros(4), np.zeros((3, 3)))
        with pytest.raises(ValueError):
            PriceSeries(np.array([0.0, np.nan, 0.0]), np.zeros((2, 2)))
        p = PriceSeries(np.arange(4.0), np.zeros((2, 3)))
        assert p.rt_target().tolist() == [[0, 1, 2], [1, 2, 3]]

    def test_negative_prices_allowed(self):
        assert PriceSeries(np.full(3, -1.0), np.full((2, 2), -1.0)).n_total == 2

    def test_default_bands_tile_day(self):
        t = TariffSchedule()
        hours = np.array([0.5, 3.0, 7.0, 12.0, 15.0, 21.0])
        assert t.import_charge(hours).tolist() == pytest.approx([0.033095] * 4 + [0.277957, 0.033095])
        assert t.export_charge(hours)[4] < 0

    def test_gap_in_bands_rejected(self):
        with pytest.raises(ValueError):
            TariffSchedule(bands=(Band(0, 10, 0, 0), Band(11, 24, 0, 0)))
        with pytest.raises(ValueError):
            TariffSchedule(bands=DEFAULT_TOU_BANDS + (Band(2, 3, 0, 0),))

    def test_user_validation(self):
        ok = dict(expected=[1.0, 1.0], pv_gross=[0.0, 0.0], elasticity=[-0.3, -0.3])
        UserParams(**ok)
        with pytest.raises(ValueError):
            UserParams(**{**ok, "elasticity": [-0.3, 0.0]})
        with pytest.raises(ValueError):
            UserParams(**{**ok, "expected": [-1.0, 1.0]})
        with pytest.raises(ValueError):
            UserParams(**ok, lb_factor=1.2)
        with pytest.raises(ValueError):
            UserParams(**ok, tau=1.5)

    def test_cbs_validation(self):
        with pytest.raises(ValueError):
            CbsParams(round_trip_eff=0)
        with pytest.raises(ValueError):
            CbsParams(soc_min_frac=0.5, soc_max_frac=0.5)
        assert CbsParams().power_limit(10) == 5

    def test_cost_breakdown_total(self):
        c = CostBreakdown(10.0, 1.0, 2.0, 4.0, 3.0)
        assert c.total == 12.0
        with pytest.raises(ValueError):
            CostBreakdown(10.0, 1.0, 2.0, 4.0, 3.0, total=13.0)
        assert c.scaled(2.0).total == 24.0

    def test_peak_and_capital_rates(self):
        assert TariffSchedule().peak_charge_for(365) == pytest.approx(0.33 * 365)
        assert CbsParams().capital_for(365) == pytest.approx(800 * 0.1175)
        assert math.isclose(CbsParams().capital_for(7), 800 * 0.1175 * 7 / 365)
