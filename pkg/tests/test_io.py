import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdaevar import io
from sdaevar.exceptions import ModelError


def bundled_dict(name):
    return json.loads(io.bundled_path(name).read_text())


class TestRoundTrip:
    @pytest.mark.parametrize("name", ["micro3", "wscc9"])
    def test_bundled_round_trip_is_identity(self, name):
        m1 = io.load_bundled(name)
        m2 = io.loads_model(io.dumps_model(m1))
        assert io.model_to_dict(m1) == io.model_to_dict(m2)
        assert m1 == m2

    def test_sigma_entry_serializes_as_b(self):
        d = bundled_dict("micro3")
        d["noise"] = [{"tag": "p_L3", "kind": "ou", "alpha": 0.5, "sigma": 0.06},
                      {"tag": "q_L3", "kind": "ou", "alpha": 0.01, "b": 0.001}]
        m = io.model_from_dict(d)
        spec = m.noise.spec("p_L3")
        assert spec.b == pytest.approx(0.06 * math.sqrt(2 * 0.5), rel=1e-15)
        assert spec.sigma == pytest.approx(0.06, rel=1e-14)
        out = io.model_to_dict(m)["noise"][0]
        assert "b" in out and "sigma" not in out

    @settings(max_examples=40, deadline=None)
    @given(
        alpha=st.floats(1e-3, 10.0),
        sigma=st.floats(1e-6, 1.0),
        scale=st.floats(0.5, 2.0),
        gamma=st.floats(0.0, 3.0),
    )
    def test_round_trip_property(self, alpha, sigma, scale, gamma):
        d = bundled_dict("micro3")
        d["noise"][0] = {"tag": "p_L3", "kind": "ou", "alpha": alpha, "sigma": sigma}
        d["loads"][0]["p0"] *= scale
        d["loads"][0]["gamma"] = gamma
        m1 = io.model_from_dict(d)
        m2 = io.loads_model(io.dumps_model(m1))
        assert m1 == m2

    def test_weibull_entry_round_trip(self):
        d = bundled_dict("micro3")
        d["noise"][1] = {"tag": "q_L3", "kind": "weibull", "alpha": 0.1, "kappa": 2.0, "lambda": 8.0}
        m1 = io.model_from_dict(d)
        m2 = io.loads_model(io.dumps_model(m1))
        assert m1 == m2
        assert m2.noise.spec("q_L3").kind == "weibull"

    def test_save_and_load(self, tmp_path, micro3):
        path = tmp_path / "m.json"
        io.save_model(micro3, path)
        assert io.load_model(path) == micro3


class TestValidation:
    def test_invalid_json_reports_position(self):
        with pytest.raises(ModelError, match=r"line 2, column"):
            io.loads_model('{"buses": [\n  oops]}')

    def test_missing_required_field(self):
        d = bundled_dict("micro3")
        del d["machines"][0]["M"]
        with pytest.raises(ModelError, match=r"machines/0"):
            io.model_from_dict(d)

    def test_unknown_field_rejected(self):
        d = bundled_dict("micro3")
        d["loads"][0]["colour"] = "red"
        with pytest.raises(ModelError, match=r"loads/0"):
            io.model_from_dict(d)

    def test_ou_needs_exactly_one_of_b_and_sigma(self):
        d = bundled_dict("micro3")
        d["noise"][0]["b"] = 0.1
        with pytest.raises(ModelError, match=r"noise/0"):
            io.model_from_dict(d)
        del d["noise"][0]["sigma"]
        del d["noise"][0]["b"]
        with pytest.raises(ModelError, match=r"noise/0"):
            io.model_from_dict(d)

    def test_unknown_noise_kind(self):
        d = bundled_dict("micro3")
        d["noise"][0]["kind"] = "levy"
        with pytest.raises(ModelError):
            io.model_from_dict(d)

    def test_two_slack_buses_named(self):
        d = bundled_dict("micro3")
        d["buses"][1]["kind"] = "slack"
        with pytest.raises(ModelError, match=r"1, 2"):
            io.model_from_dict(d)

    def test_dangling_bus_reference(self):
        d = bundled_dict("micro3")
        d["branches"][0]["to"] = "99"
        with pytest.raises(ModelError, match=r"99"):
            io.model_from_dict(d)

    def test_dangling_noise_tag(self):
        d = bundled_dict("micro3")
        d["loads"][0]["noise_p"] = "nope"
        with pytest.raises(ModelError, match=r"nope"):
            io.model_from_dict(d)

    def test_negative_alpha_rejected(self):
        d = bundled_dict("micro3")
        d["noise"][0]["alpha"] = -1.0
        with pytest.raises(ModelError):
            io.model_from_dict(d)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelError, match=r"cannot read"):
            io.load_model(tmp_path / "absent.json")


class TestBundledDefaults:
    def test_wscc9_noise_is_five_percent_of_base(self, wscc9):
        by_tag = dict(wscc9.noise.processes)
        for ld in wscc9.loads:
            assert by_tag[ld.noise_p].sigma == pytest.approx(0.05 * ld.p0, rel=1e-12)
            assert by_tag[ld.noise_q].sigma == pytest.approx(0.05 * ld.q0, rel=1e-12)
        for w in wscc9.wind_plants:
            assert by_tag[w.noise_w].sigma == pytest.approx(0.05 * w.vw0, rel=1e-12)
        assert np.all(wscc9.noise.alphas == 0.01)
        assert all(ld.gamma == 2.0 for ld in wscc9.loads)

    def test_wscc9_shape(self, wscc9):
        assert len(wscc9.buses) == 9
        assert len(wscc9.machines) == 3
        assert len(wscc9.wind_plants) == 1

    def test_micro3_shape(self, micro3):
        assert len(micro3.buses) == 3
        assert len(micro3.machines) == 2
