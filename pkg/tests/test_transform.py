import math
import warnings

import pytest
import torch

from util.errors import TransformDomainError
from util.params import ParamSet, from_est, to_est
from util.transform import ParTrans


def test_log_and_logit_round_trip():
    pt = ParTrans(log=["K", "r"], logit=["rho"])
    values = {"K": torch.tensor([0.5, 2.0], dtype=torch.float64), "r": 0.1, "rho": 0.25, "x": -3.0}
    est = pt.to_est(values)
    assert float(est["r"]) == pytest.approx(math.log(0.1))
    assert float(est["rho"]) == pytest.approx(math.log(0.25 / 0.75))
    assert float(est["x"]) == -3.0
    back = pt.from_est(est)
    assert torch.allclose(back["K"], values["K"])
    assert float(back["rho"]) == pytest.approx(0.25)


def test_log_rejects_nonpositive():
    with pytest.raises(TransformDomainError):
        ParTrans(log=["K"]).to_est({"K": 0.0})


def test_barycentric_group_lands_on_simplex():
    pt = ParTrans(barycentric={"p": ["a", "b", "c"]})
    est = pt.to_est({"a": 0.2, "b": 0.3, "c": 0.5})
    est["a"] = est["a"] + 1.0
    back = pt.from_est(est)
    assert float(back["a"] + back["b"] + back["c"]) == pytest.approx(1.0)
    assert pt.group_of("b") == ("a", "b", "c")
    with pytest.raises(TransformDomainError):
        pt.to_est({"a": 0.2, "b": 0.3, "c": 0.6})
    with pytest.raises(ValueError):
        pt.to_est({"a": 0.2, "b": 0.8})


def test_parameter_claimed_twice():
    with pytest.raises(ValueError):
        ParTrans(log=["K"], logit=["K"])


def test_tags():
    pt = ParTrans(log=["K"], custom={"z": (lambda v: 2 * v, lambda v: v / 2)})
    assert pt.tag("K") == "log"
    assert pt.tag("z") == "custom"
    assert pt.tag("other") == "identity"
    assert float(pt.to_est({"z": 3.0})["z"]) == 6.0


def test_param_set_estimation_scale():
    pt = ParTrans(log=["r", "tau"])
    p = ParamSet({"r": 0.1}, [[0.2, 0.4]], ("tau",), ("u1", "u2"))
    v = to_est(p, pt)
    assert v["tau[u2]"] == pytest.approx(math.log(0.4))
    back = from_est(v, pt, p.layout)
    assert back.shared["r"] == pytest.approx(0.1)
    assert back.specific_row("tau") == pytest.approx([0.2, 0.4])


def test_estimation_scale_of_a_read_only_matrix_warns_nothing():
    pt = ParTrans(log=["tau"])
    p = ParamSet({"r": 0.1}, [[0.2, 0.4]], ("tau",), ("u1", "u2"))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        v = to_est(p, pt)
    assert v["tau[u1]"] == pytest.approx(math.log(0.2))
