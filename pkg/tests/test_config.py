import pytest
from hypothesis import given, strategies as st

from entlink.config import (DIRECTIONS, FaultSpec, MessageSpec, ScenarioConfig, generated_payload,
                            parse_config, render_config)
from entlink.errors import ParseError, UnknownKey


def test_minimal_file_gives_defaults():
    assert parse_config("seed=1\n") == ScenarioConfig()
    assert parse_config("") == ScenarioConfig()


def test_full_file():
    cfg = parse_config("""
# comment
seed = 4
fragment_size = 8
watchdog = off

[message]
at = 3
direction = B->A
payload = hi
count = 2
every = 5

[message]
at = 9
direction = A->B
size = 10

[fault]
at = 50
kind = stall

[fault]
at = 0
kind = RECEIVER_PRESSURE
probability = 0.25
seed = 3
""")
    assert cfg.seed == 4 and cfg.fragment_size == 8 and cfg.watchdog is False
    assert cfg.workload == (MessageSpec(3, "B->A", b"hi", 2, 5), MessageSpec(9, "A->B", generated_payload(10)))
    assert cfg.faults == (FaultSpec(50, "STALL"), FaultSpec(0, "RECEIVER_PRESSURE", probability=0.25, seed=3))


@pytest.mark.parametrize("text,line", [
    ("fragment_size=0", None),
    ("seed=1\nseed=2", 2),
    ("seed=x", 1),
    ("[bogus]", 1),
    ("just words", 1),
    ("[message]\nat=1", 1),
    ("[message]\nat=1\ndirection=A->C", None),
    ("[message]\nat=1\ndirection=A->B\npayload=a\nsize=3", 1),
    ("[fault]\nat=1\nkind=BITFLIP", None),
    ("[fault]\nat=1\nkind=RECEIVER_PRESSURE\nprobability=2", None),
    ("[fault]\nat=1\nkind=WIRETAP_INSERT\nmode=loud", None),
    ("[fault]\nat=1\nkind=METEOR", None),
])
def test_parse_errors(text, line):
    with pytest.raises(ParseError) as err:
        parse_config(text)
    if line is not None:
        assert err.value.lineno == line
        assert str(err.value).startswith(f"line {line}:")


def test_unknown_keys():
    with pytest.raises(UnknownKey) as err:
        parse_config("seed=1\ncolour=blue")
    assert err.value.lineno == 2
    with pytest.raises(UnknownKey):
        parse_config("[fault]\nat=1\nkind=KILL\nbit=2\ncolour=blue")


def test_constructor_validates():
    with pytest.raises(ParseError):
        ScenarioConfig(latency_l2r=0)
    with pytest.raises(ParseError):
        ScenarioConfig().with_(retry_limit=-1)


messages = st.builds(MessageSpec, st.integers(0, 500), st.sampled_from(DIRECTIONS), st.binary(max_size=40),
                     st.integers(1, 5), st.integers(1, 20))
faults = st.one_of(
    st.builds(FaultSpec, st.integers(0, 500), st.sampled_from(["STALL", "UNSTALL", "KILL"])),
    st.builds(FaultSpec, st.integers(0, 500), st.just("BITFLIP"), bit=st.integers(0, 200)),
    st.builds(FaultSpec, st.integers(0, 500), st.just("WIRETAP_INSERT"), mode=st.sampled_from(["pass", "masquerade"])),
    st.builds(FaultSpec, st.integers(0, 500), st.just("RECEIVER_PRESSURE"),
              probability=st.floats(0, 1), seed=st.none() | st.integers(0, 99)),
)
configs = st.builds(
    ScenarioConfig,
    seed=st.integers(0, 2**31), fragment_size=st.integers(1, 512), queue_capacity=st.integers(1, 64),
    latency_l2r=st.integers(1, 9), latency_r2l=st.integers(1, 9), watchdog=st.booleans(),
    watchdog_timeout=st.integers(1, 500), watchdog_poll=st.integers(1, 50), retry_limit=st.integers(0, 20),
    duration=st.integers(1, 10**6), max_events=st.integers(0, 10**6),
    workload=st.lists(messages, max_size=4).map(tuple), faults=st.lists(faults, max_size=4).map(tuple),
)


@given(configs)
def test_render_parse_roundtrip(cfg):
    assert parse_config(render_config(cfg)) == cfg
