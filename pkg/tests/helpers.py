import numpy as np

from cbsizing.core import TimeGrid, UserParams


def make_user(x_hat, pv=None, beta=-0.4, **kw):
    x_hat = np.asarray(x_hat, dtype=float)
    pv = np.zeros_like(x_hat) if pv is None else np.asarray(pv, dtype=float)
    return UserParams(x_hat, pv, np.full_like(x_hat, beta), **kw)


def small_grid(n_total, horizon, rebound=None, start_hour=0.0):
    return TimeGrid(0.5, n_total, horizon, rebound or horizon, start_hour)


def perfect_neighbourhood(net, horizon, export=None):
    """Users whose plans equal their commitments (demand known in advance)."""
    from cbsizing.enduser import Neighbourhood

    net = np.asarray(net, dtype=float)
    n = len(net) - horizon + 1
    export = np.zeros_like(net) if export is None else np.asarray(export, dtype=float)
    idx = np.arange(n)[:, None] + np.arange(horizon)[None, :]
    return Neighbourhood(net[idx], export[idx], net[:n].copy(), export[:n].copy())


def hand_scenario(net, rt, horizon, tariff=None, cbs=None, pd=None):
    """Sizing scenario over given aggregate net demand and RT prices (PD = RT unless given)."""
    from cbsizing.core import CbsParams, PriceSeries, TariffSchedule
    from cbsizing.dataio import ScenarioBundle
    from cbsizing.sizing import Scenario

    rt = np.asarray(rt, dtype=float)
    n = len(rt) - horizon + 1
    if pd is None:
        pd = np.array([rt[j:j + horizon] for j in range(n)])
    grid = small_grid(n, horizon)
    bundle = ScenarioBundle(grid, PriceSeries(rt, pd), [make_user(np.ones(len(rt)))],
                            tariff or TariffSchedule(), cbs or CbsParams())
    return Scenario.from_neighbourhood(bundle, perfect_neighbourhood(net, horizon))
