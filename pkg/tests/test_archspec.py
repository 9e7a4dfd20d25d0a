"""Architecture description parsing and the bundled model zoo."""

import pytest

from odconv.archspec import (
    ArchSpec,
    DynamicSpec,
    load_zoo_arch,
    parse_arch,
    zoo_names,
)
from odconv.errors import ArchError, FormatError

BASIC = """
# toy network
name toy
input 3 8 8
layer kind=conv c_out=4 k=3 stride=1 padding=1 role=stem block=stem
layer kind=bn
layer kind=activation
layer kind=conv c_out=8 k=3 stride=2 padding=1 block=b1
layer kind=gap
layer kind=fc c_out=10 role=head block=head
"""


def test_parse_basic_chain():
    arch = parse_arch(BASIC)
    assert arch.name == "toy"
    assert arch.input_shape == (3, 8, 8)
    kinds = [d.kind for d in arch.layers]
    assert kinds == ["conv", "bn", "activation", "conv", "gap", "fc"]
    first, second = arch.convs()
    assert (first.c_in, first.c_out, first.h_in, first.h_out) == (3, 4, 8, 8)
    assert (second.c_in, second.c_out, second.h_in, second.h_out) == (4, 8, 8, 4)
    assert first.role == "stem" and first.block == "stem"
    fc = arch.layers[-1]
    assert (fc.kind, fc.c_in, fc.c_out, fc.role) == ("fc", 8, 10, "head")


def test_comments_and_blank_lines_ignored():
    arch = parse_arch("name t\ninput 1 4 4\n\n# note\nlayer kind=conv c_out=2 k=1  # inline\n")
    assert len(arch.layers) == 1


def test_repeat_expands_and_rechains():
    arch = parse_arch(
        "name t\ninput 4 8 8\n"
        "layer kind=conv c_out=4 k=3 padding=1 stride=2 repeat=2\n")
    a, b = arch.layers
    assert (a.h_in, a.h_out) == (8, 4)
    assert (b.h_in, b.h_out) == (4, 2)


def test_shortcut_does_not_advance_the_chain():
    arch = parse_arch(
        "name t\ninput 4 8 8\n"
        "layer kind=conv c_out=16 k=1 stride=2 role=shortcut block=b1\n"
        "layer kind=conv c_out=16 k=3 stride=2 padding=1 block=b1\n"
        "layer kind=conv c_out=16 k=3 padding=1 block=b1\n")
    sc, main1, main2 = arch.layers
    assert sc.role == "shortcut" and sc.c_in == 4 and sc.h_out == 4
    # the main path still sees the pre-shortcut state
    assert main1.c_in == 4 and main1.h_in == 8
    assert main2.c_in == 16 and main2.h_in == 4


def test_c_in_override_and_grouped_conv():
    arch = parse_arch(
        "name t\ninput 8 4 4\n"
        "layer kind=conv c_out=8 k=3 padding=1 groups=8\n"
        "layer kind=conv c_in=16 c_out=4 k=1\n")
    dw, pw = arch.layers
    assert dw.groups == 8
    assert pw.c_in == 16  # explicit override wins over the chained value


def test_bn_takes_optional_width():
    arch = parse_arch(
        "name t\ninput 4 4 4\nlayer kind=bn c_out=9\nlayer kind=bn\n")
    assert arch.layers[0].c_out == 9
    assert arch.layers[1].c_out == 4


def test_pool_defaults_stride_to_k():
    arch = parse_arch("name t\ninput 4 8 8\nlayer kind=pool k=2\n")
    p = arch.layers[0]
    assert (p.stride, p.h_out, p.w_out) == (2, 4, 4)


def test_format_errors():
    cases = [
        "input 1 4 4\nlayer kind=conv c_out=1 k=1\n",  # missing name
        "name t\nlayer kind=conv c_out=1 k=1\n",  # layer before input
        "name t\ninput 1 4\n",  # input arity
        "name t\ninput 1 4 4\nlayer kind=conv c_out=1\n",  # conv needs k
        "name t\ninput 1 4 4\nlayer kind=warp c_out=1 k=1\n",  # unknown kind
        "name t\ninput 1 4 4\nlayer kind=conv c_out=x k=1\n",  # bad int
        "name t\ninput 1 4 4\nlayer kind=conv c_out=1 k=1 pad=0\n",  # bad field
        "name t\ninput 1 4 4\nlayer kind=conv c_out=1 k=1 role=side\n",  # bad role
        "name t\ninput 1 4 4\nwires kind=conv\n",  # unknown statement
        "name t\ninput 1 4 4\nlayer kind=fc\n",  # fc needs c_out
        "name t\ninput 1 4 4\nlayer kind=pool\n",  # pool needs k
        "name t\ninput 1 4 4\nlayer kind=conv c_out=1 k=1 repeat=0\n",
    ]
    for text in cases:
        with pytest.raises(FormatError):
            parse_arch(text)


def test_arch_errors():
    cases = [
        "name t\ninput 0 4 4\nlayer kind=conv c_out=1 k=1\n",  # bad input
        "name t\ninput 3 4 4\nlayer kind=conv c_out=4 k=3 groups=2\n",  # groups
        "name t\ninput 1 2 2\nlayer kind=conv c_out=1 k=3\n",  # degenerate out
        "name t\ninput 1 4 4\n",  # no layers
    ]
    for text in cases:
        with pytest.raises(ArchError):
            parse_arch(text)


def test_dynamic_spec_validation():
    spec = DynamicSpec("odconv", 4)
    assert spec.r == pytest.approx(1.0 / 16.0)
    assert spec.hidden_floor == 16
    with pytest.raises(ArchError):
        DynamicSpec("hyper", 4)
    with pytest.raises(ArchError):
        DynamicSpec("odconv", 0)
    with pytest.raises(ArchError):
        DynamicSpec("odconv", 4, r=0.0)
    with pytest.raises(ArchError):
        DynamicSpec("odconv", 4, hidden_floor=0)


def test_zoo_names_are_bundled():
    names = zoo_names()
    for expected in ("resnet18", "resnet50", "resnet101",
                     "mobilenetv2-1.0", "mobilenetv2-0.75", "mobilenetv2-0.5"):
        assert expected in names


def test_zoo_archs_parse_and_chain():
    for name in zoo_names():
        arch = load_zoo_arch(name)
        assert isinstance(arch, ArchSpec)
        assert arch.input_shape[1] == arch.input_shape[2] == 224
        assert len(arch.convs()) > 10
        # every architecture ends with a classifier over 1000 classes
        assert arch.layers[-1].kind == "fc"
        assert arch.layers[-1].c_out == 1000


def test_unknown_zoo_arch_lists_options():
    with pytest.raises(ArchError) as err:
        load_zoo_arch("resnet34")
    assert "resnet18" in str(err.value)
