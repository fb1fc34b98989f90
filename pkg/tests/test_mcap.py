import math

import numpy as np
import pytest
from scipy import stats

from lib.mcap import ProfileTable, kalman_profile, loess_smooth, mcap, run_profile, tricube
from lib.mcap.profile import _max_per_focal
from lib.mif import MifSettings
from model.build_model import kalman_loglik
from model.gompertz import panel_gompertz
from util.errors import SmoothingError
from util.params import RwSdSpec, profile_design
from util.parallel import get_map
from util.rng import Stream

CHI2_HALF = stats.chi2.ppf(0.95, df=1) / 2.0


def test_tricube():
    assert tricube(np.array([0.0, 1.0, 2.0])).tolist() == [1.0, 0.0, 0.0]
    assert tricube(np.array([0.5]))[0] == pytest.approx((1 - 0.125) ** 3)


def test_loess_reproduces_a_quadratic():
    x = np.linspace(0.0, 2.0, 21)
    y = -(x - 1.0) ** 2 + 3.0
    fitted, var = loess_smooth(x, y, span=0.5)
    assert fitted == pytest.approx(y, abs=1e-8)
    assert np.all(var > 0)


def test_loess_input_checks():
    with pytest.raises(SmoothingError):
        loess_smooth([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(SmoothingError):
        loess_smooth([1.0] * 6, list(range(6)))
    with pytest.raises(SmoothingError):
        loess_smooth(list(range(6)), [0.0, 1.0, float("nan"), 1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        loess_smooth(list(range(6)), list(range(6)), span=1.5)


def test_mcap_on_an_exact_quadratic_profile():
    x = np.linspace(0.05, 0.15, 21)
    s = 0.02
    ll = -0.5 * ((x - 0.1) / s) ** 2 - 100.0
    m = mcap(ll, x, ngrid=1001)
    assert m.concave
    assert m.mle == pytest.approx(0.1, abs=1e-4)
    assert m.se_stat == pytest.approx(s, rel=1e-4)
    assert m.se_mc == pytest.approx(0.0, abs=1e-6)
    assert m.delta == pytest.approx(CHI2_HALF, rel=1e-6)
    half = s * math.sqrt(2 * CHI2_HALF)
    assert m.ci[0] == pytest.approx(0.1 - half, abs=2e-4)
    assert m.ci[1] == pytest.approx(0.1 + half, abs=2e-4)
    assert not m.lower_open and not m.upper_open


def test_mcap_widens_with_monte_carlo_noise():
    rng = np.random.RandomState(0)
    x = np.linspace(0.0, 0.2, 40)
    ll = -0.5 * ((x - 0.1) / 0.02) ** 2 + rng.normal(scale=0.2, size=x.size)
    m = mcap(ll, x)
    assert m.concave
    assert m.se_mc > 0
    assert m.delta > CHI2_HALF
    assert m.ci[0] < m.mle < m.ci[1]
    summary = m.summary()
    assert summary.row(0)["delta"] == m.delta
    assert len(m.curve()) == 1000


def test_mcap_flags_an_open_interval():
    x = np.linspace(0.0, 1.0, 21)
    m = mcap(-(x - 3.0) ** 2, x)
    assert m.upper_open and not m.lower_open
    assert m.ci[1] == pytest.approx(1.0)
    # the smoothed curve is the quadratic itself, topping out at -4 on the right edge
    assert m.ci[0] == pytest.approx(3.0 - math.sqrt(4.0 + CHI2_HALF), abs=2e-3)


def test_mcap_without_concavity():
    x = np.linspace(0.0, 2.0, 21)
    m = mcap((x - 1.0) ** 2, x)
    assert not m.concave
    assert m.delta == pytest.approx(CHI2_HALF)
    assert m.se_stat == math.inf and math.isnan(m.se_mc)


def test_mcap_length_mismatch():
    with pytest.raises(ValueError):
        mcap([1.0, 2.0], [1.0])


def test_max_per_focal():
    columns = ["r", "loglik", "loglik_se"]
    rows = [[0.2, -5.0, 0.1], [0.1, -3.0, 0.1], [0.2, -4.0, 0.2], [0.1, -7.0, 0.1]]
    assert _max_per_focal(columns, rows, "r") == [[0.1, -3.0, 0.1], [0.2, -4.0, 0.2]]


def test_profile_table_columns(tmp_path):
    with pytest.raises(ValueError):
        ProfileTable(["r", "loglik"])
    t = ProfileTable(["r", "loglik", "loglik_se"], [[0.1, -3.0, 0.1]], focal="r")
    path = t.to_csv(str(tmp_path / "profile.csv"))
    back = ProfileTable.from_csv(path, focal="r")
    assert back.parameter() == [0.1]
    assert back.loglik() == [-3.0]


def test_run_profile_holds_the_focal_parameter(rw):
    grid = [0.5, 1.0, 1.5]
    lower = {"sigmaX": 0.5, "X_0[rw1]": -1.0, "X_0[rw2]": -1.0}
    upper = {"sigmaX": 2.0, "X_0[rw1]": 1.0, "X_0[rw2]": 1.0}
    design = profile_design("sigmaY", grid, lower, upper, 2, Stream(1))
    settings = MifSettings(M=2, J=30, rw_sd=RwSdSpec(sigmaX=0.02, sigmaY=0.02))
    table = run_profile(rw, "sigmaY", design, settings=settings, reps=2, J_eval=30, rng=Stream(2))
    assert table.parameter() == grid
    assert table.columns[-2:] == ("loglik", "loglik_se")
    assert table.dropped == 0
    assert all(np.isfinite(table.loglik()))
    with pytest.raises(ValueError):
        run_profile(rw, "sigmaY", design, settings=settings, reps=1, rng=Stream(2))


def test_run_profile_with_block_refinement(rw):
    design = profile_design("sigmaY", [1.0, 2.0], {"sigmaX": 1.0, "X_0[rw1]": 0.0, "X_0[rw2]": 0.0},
                            {"sigmaX": 1.0, "X_0[rw1]": 0.0, "X_0[rw2]": 0.0}, 1, Stream(1))
    settings = MifSettings(M=1, J=20, rw_sd=RwSdSpec(sigmaX=0.02, X_0=0.1))
    table = run_profile(rw, "sigmaY", design, settings=settings, reps=2, J_eval=20, block_reps=1, rng=Stream(2))
    assert table.parameter() == [1.0, 2.0]


def test_kalman_profile(rw):
    grid = [2.0, 0.5, 1.0]
    table = kalman_profile(rw, "sigmaY", grid, ["sigmaX", "sigmaY"])
    assert table.parameter() == [0.5, 1.0, 2.0]
    assert table.column("loglik_se") == [0.0, 0.0, 0.0]
    for g, ll in zip(table.parameter(), table.loglik()):
        assert ll >= kalman_loglik(rw.with_coef({"sigmaY": g}))[1] - 1e-9


def test_mcap_ignores_a_vertical_shift():
    rng = np.random.RandomState(1)
    x = np.linspace(0.0, 0.2, 30)
    ll = -0.5 * ((x - 0.1) / 0.03) ** 2 + rng.normal(scale=0.1, size=x.size)
    # dyadic values so that adding the shift is exact
    ll = np.round(ll * 2 ** 20) / 2 ** 20
    a, b = mcap(ll, x), mcap(ll + 2048.0, x)
    assert b.mle == a.mle
    assert b.delta == a.delta
    assert b.ci == a.ci
    assert (b.se_stat, b.se_mc) == (a.se_stat, a.se_mc)
    assert b.quadratic["c"] == pytest.approx(a.quadratic["c"] + 2048.0, abs=1e-9)
    assert b.smoothed == pytest.approx(a.smoothed + 2048.0, abs=1e-9)


def test_mcap_interval_grows_with_the_level():
    rng = np.random.RandomState(2)
    x = np.linspace(0.0, 0.2, 30)
    ll = -0.5 * ((x - 0.1) / 0.03) ** 2 + rng.normal(scale=0.1, size=x.size)
    narrow, wide = mcap(ll, x, level=0.90), mcap(ll, x, level=0.95)
    assert narrow.mle == wide.mle
    assert narrow.delta < wide.delta
    assert wide.ci[0] <= narrow.ci[0] <= narrow.ci[1] <= wide.ci[1]


def test_delta_never_drops_below_the_chi_square_cutoff():
    rng = np.random.RandomState(3)
    x = np.linspace(0.0, 0.2, 25)
    for scale in (0.0, 0.05, 0.5, 2.0):
        ll = -0.5 * ((x - 0.1) / 0.03) ** 2 + scale * rng.normal(size=x.size)
        assert mcap(ll, x).delta >= CHI2_HALF - 1e-12


def test_run_profile_over_a_unit_specific_parameter(gomp):
    focal = "tau[unit1]"
    grid = [0.07, 0.13, 0.23]
    fixed = {n: v for n, v in gomp.params.flatten().items() if n != focal}
    design = profile_design(focal, grid, fixed, fixed, 1, Stream(1))
    settings = MifSettings(M=1, J=20, rw_sd=RwSdSpec(r=0.02, tau=0.02))
    table = run_profile(gomp, focal, design, settings=settings, reps=2, J_eval=20, rng=Stream(3))
    assert table.parameter() == grid
    assert table.parameter("tau[unit2]") != [gomp.params.flatten()["tau[unit2]"]] * 3


@pytest.mark.slow
def test_profile_interval_covers_the_truth():
    grid = np.linspace(0.02, 0.32, 15).tolist()
    settings = MifSettings(M=25, J=300, rw_sd=RwSdSpec(sigma=0.02, tau=0.02))
    covered = 0
    for s in range(50):
        panel = panel_gompertz(U=3, N=40, rng=100 + s)
        truth = panel.params.flatten()
        lower = {n: v for n, v in truth.items() if n != "r"}
        upper = dict(lower)
        for n in lower:
            if n == "sigma" or n.startswith("tau["):
                lower[n], upper[n] = 0.05, 0.2
        design = profile_design("r", grid, lower, upper, 3, Stream(s))
        table = run_profile(panel, "r", design, settings=settings, reps=4, J_eval=1000, rng=Stream(1000 + s),
                            map_fn=get_map(8))
        m = mcap(table.loglik(), table.parameter())
        covered += int(m.ci[0] <= truth["r"] <= m.ci[1])
    assert covered >= 42
