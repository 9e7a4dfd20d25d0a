"""Self-check property suite and the layer-level gradient checker."""

import pytest

from odconv.errors import ParameterError
from odconv.layer import ODConvConfig
from odconv.ops import ConvGeometry
from odconv.verify import PROPERTIES, gradcheck_layer, run_properties


def test_property_names_are_stable():
    assert set(PROPERTIES) == {
        "conv-oracle",
        "reduction",
        "mixture-equivalence",
        "se-variant",
        "linearity",
    }


def test_all_properties_pass():
    results = run_properties()
    assert len(results) == len(PROPERTIES)
    for r in results:
        assert r.passed, f"{r.name}: {r.max_error} > {r.tolerance}"
        assert r.max_error <= r.tolerance
        assert r.instances >= 20


def test_property_filter():
    results = run_properties(["reduction", "linearity"])
    assert [r.name for r in results] == ["reduction", "linearity"]
    with pytest.raises(ParameterError):
        run_properties(["reduction", "no-such-check"])


def test_injected_fault_is_caught():
    # scrambling the kernel mixture on one side must break linearity and
    # nothing else
    results = run_properties(fault="combine-order")
    by_name = {r.name: r for r in results}
    assert not by_name["linearity"].passed
    assert by_name["linearity"].max_error > by_name["linearity"].tolerance
    for name, r in by_name.items():
        if name != "linearity":
            assert r.passed, name


def test_gradcheck_layer_full_config():
    cfg = ODConvConfig(3, 3, ConvGeometry(3, 1, 1, 1), n=4, r=1.0 / 16.0,
                       hidden_floor=2)
    errs = gradcheck_layer(cfg, seed=0)
    assert set(errs) == {"x", "weights", "w_reduce", "w_spatial", "w_in",
                         "w_filter", "w_kernel"}
    for group, err in errs.items():
        assert err < 1e-4, f"{group}: {err}"


def test_gradcheck_layer_respects_disabled_branches():
    cfg = ODConvConfig(3, 3, ConvGeometry(3, 1, 1, 1), n=1, r=0.25,
                       hidden_floor=2, enable_spatial=False,
                       enable_in_channel=False)
    errs = gradcheck_layer(cfg, seed=1)
    assert set(errs) == {"x", "weights", "w_reduce", "w_filter"}
    for group, err in errs.items():
        assert err < 1e-4, f"{group}: {err}"
