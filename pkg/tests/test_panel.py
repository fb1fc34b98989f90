import numpy as np
import pytest

from model.gompertz import gompertz_unit
from model.panel import PanelModel, UnitModel, as_unit_list, build_panel, get_unit_params, plot_data, simulate, unit_panel
from util.errors import CapabilityError, ConstructionError
from util.params import ParamSet
from util.rng import Stream


def test_unit_rejects_bad_times():
    with pytest.raises(ConstructionError):
        UnitModel("a", [1.0, 1.0], 0.0)
    with pytest.raises(ConstructionError):
        UnitModel("a", [1.0, 2.0], 1.5)
    with pytest.raises(ConstructionError):
        UnitModel("a", [1.0, 2.0], 0.0, data=[[1.0, 2.0, 3.0]])


def test_require_reports_missing_slots():
    u = UnitModel("a", [1.0], 0.0)
    with pytest.raises(CapabilityError):
        u.require("rprocess")
    g = gompertz_unit("g", [1.0, 2.0])
    with pytest.raises(CapabilityError):
        g.require("dmeasure")


def test_build_panel_classifies_parameters():
    units = [gompertz_unit("a", [1.0, 2.0]), gompertz_unit("b", [1.0, 2.0])]
    panel = build_panel(units, shared={"r": 0.2, "sigma": 0.1}, specific={"K": [1.0, 2.0], "tau": 0.1, "X_0": 1.0})
    assert panel.params.shared_names == ("r", "sigma")
    assert panel.params.specific_names == ("K", "tau", "X_0")
    assert panel.unit("b").params["K"] == 2.0
    assert panel.coef()["K[b]"] == 2.0
    with pytest.raises(ConstructionError):
        build_panel([gompertz_unit("a", [1.0]), gompertz_unit("a", [1.0])])
    with pytest.raises(ConstructionError):
        build_panel(units, shared={"r": 0.2}, specific=["K"])


def test_panel_rejects_mismatched_params():
    u = gompertz_unit("a", [1.0])
    with pytest.raises(ConstructionError):
        PanelModel([u], ParamSet({}, None, (), ("b",)))


def test_with_coef_and_sub_panel(gomp):
    p = gomp.with_coef({"K[unit2]": 3.0})
    assert p.params.unit_params("unit2")["K"] == 3.0
    assert gomp.params.unit_params("unit2")["K"] == 1.0
    sub = gomp.sub_panel(["unit3", "unit1"])
    assert sub.unit_names == ("unit3", "unit1")
    assert sub.params.unit_params("unit3") == gomp.params.unit_params("unit3")


def test_simulate_is_keyed_by_unit(gomp):
    a = simulate(gomp, nsim=2, rng=Stream(5))
    b = simulate(gomp, nsim=2, rng=Stream(5))
    assert np.array_equal(a[1].unit("unit2").data, b[1].unit("unit2").data)
    assert not np.array_equal(a[0].unit("unit2").data, a[1].unit("unit2").data)
    sub = simulate(gomp.sub_panel(["unit2"]), nsim=2, rng=Stream(5))
    assert np.array_equal(a[0].unit("unit2").data, sub[0].unit("unit2").data)


def test_simulate_without_noise_follows_the_deterministic_skeleton():
    u = gompertz_unit("a", [1.0, 2.0, 3.0], K=2.0, r=0.5, sigma=0.0, tau=0.1, X_0=1.0)
    panel = unit_panel(u)
    sim = simulate(panel, nsim=1, rng=Stream(1), keep_states=True)[0]
    x, S = 1.0, np.exp(-0.5)
    expected = []
    for _ in range(3):
        x = 2.0 ** (1 - S) * x ** S
        expected.append(x)
    assert sim.unit("a").states[0] == pytest.approx(expected, rel=1e-12)


def test_plot_data_is_tidy(gomp):
    sim = simulate(gomp, nsim=1, rng=Stream(1), keep_states=True)[0]
    table = plot_data(sim)
    assert table.columns == ("unit", "time", "variable", "value")
    assert len(table) == 3 * 20 * 2
    assert set(table.column("variable")) == {"X", "Y"}


def test_unit_list_carries_panel_values(gomp):
    p = gomp.with_coef({"tau[unit3]": 0.3, "r": 0.2})
    units = as_unit_list(p)
    assert [u.name for u in units] == list(gomp.unit_names)
    assert units[2].params["tau"] == 0.3 and units[0].params["r"] == 0.2
    assert get_unit_params(p, "unit3") == units[2].params
