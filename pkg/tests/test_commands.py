import pytest
from hypothesis import given, strategies as st

from vpfmu import commands as C
from vpfmu.kernel import SIMTIME_MAX
from vpfmu.values import ValueType

segment = st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,6}", fullmatch=True)
keys = st.lists(segment, min_size=1, max_size=4).map(".".join)
text = st.text(st.characters(min_codepoint=0x20, max_codepoint=0x7E,
                             blacklist_characters="$#"), max_size=30)
vtypes = st.sampled_from(list(ValueType))

commands = st.one_of(
    st.just(C.List()), st.just(C.GetTime()), st.just(C.Quit()),
    st.builds(C.Get, keys), st.builds(C.Set, keys, text),
    st.builds(C.Step, st.integers(0, SIMTIME_MAX)))
responses = st.one_of(
    st.just(C.Ok()), st.builds(C.OkTime, st.integers(0, SIMTIME_MAX)),
    st.builds(C.OkValue, vtypes, text),
    st.builds(C.OkList, st.lists(st.tuples(keys, vtypes), max_size=4).map(tuple)),
    st.builds(C.Err, st.sampled_from(list(C.ErrorCode)), text))


@given(commands)
def test_command_round_trip(cmd):
    assert C.parse_command(C.render_command(cmd)) == cmd


@given(responses)
def test_response_round_trip(resp):
    assert C.parse_response(C.render_response(resp)) == resp


def test_examples():
    assert C.parse_command("step,1000000") == C.Step(1_000_000)
    assert C.parse_command("set,system.max31855.temp,55.0") == \
        C.Set("system.max31855.temp", "55.0")
    assert C.render_response(C.OkList(())) == "OK,"
    assert C.parse_response("OK,UInt32,1") == C.OkValue(ValueType.UINT32, "1")
    assert C.parse_response("E,1,unknown key x") == C.Err(C.ErrorCode.UNKNOWN_KEY, "unknown key x")


@pytest.mark.parametrize("payload", [
    "", "LIST", "list,", "get", "get,", "get,a..b", "get,a,b", "set,a", "step,", "step,-1",
    "step,01", "step,1.5", f"step,{SIMTIME_MAX + 1}", "time,0", "quit,now", "bogus",
])
def test_bad_commands(payload):
    with pytest.raises(C.BadCommand):
        C.parse_command(payload)


def test_set_value_may_contain_commas():
    assert C.parse_command("set,a.b,x,y") == C.Set("a.b", "x,y")


@pytest.mark.parametrize("payload", ["", "ok", "OK,Int8,1", "E,9,x", "E,x,y", "OK,a:Int8"])
def test_bad_responses(payload):
    with pytest.raises(C.BadCommand):
        C.parse_response(payload)


def test_classification():
    assert C.classifies(C.Step(1), C.OkTime(1))
    assert not C.classifies(C.Step(1), C.Ok())
    assert not C.classifies(C.Get("a"), C.OkTime(3))
    assert C.classifies(C.Get("a"), C.Err(C.ErrorCode.UNKNOWN_KEY, "a"))
