"""Acceptance criteria, one test each.  Every test prints a single PASS/FAIL line."""

import random
import time
from pathlib import Path

import pytest

from entlink import cell, codec, explore, sim
from entlink.cli import main
from entlink.codec import Direction, HeaderVector, Intent
from entlink.config import FaultSpec, MessageSpec, ScenarioConfig, generated_payload, parse_config
from entlink.errors import InvalidCodeword

from linkpair import Pair

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion (bypassing capture), then fail if it did not hold."""
    def emit(number: int, ok: bool, detail: str, started: float):
        line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail} ({time.perf_counter() - started:.2f}s)"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def scenario(name):
    return parse_config((SCENARIOS / f"{name}.scn").read_text())


def test_01_encoding_table(verdict):
    t0 = time.perf_counter()
    golden = {
        (Direction.L2R, Intent.IDLE): (0, 0, 0), (Direction.R2L, Intent.IDLE): (1, 1, 1),
        (Direction.L2R, Intent.OFFER): (1, 0, 0), (Direction.R2L, Intent.OFFER): (1, 0, 1),
        (Direction.L2R, Intent.ACCEPT): (0, 1, 0), (Direction.R2L, Intent.ACCEPT): (0, 1, 1),
    }
    ok = all(codec.encode_header(*k).bits == v and codec.decode_header(HeaderVector.from_bits(v)) == k
             for k, v in golden.items())
    rejected = 0
    for bits in ((0, 0, 1), (1, 1, 0)):
        try:
            codec.decode_header(HeaderVector.from_bits(bits))
        except InvalidCodeword:
            rejected += 1
    ok = ok and rejected == 2 and time.perf_counter() - t0 < 1
    verdict(1, ok, f"6 codewords bit-exact, {rejected}/2 unused patterns rejected", t0)


def test_02_complement_laws(verdict):
    t0 = time.perf_counter()
    involution = all(codec.complement(codec.complement(h)) == h for h in codec.ALL_PATTERNS)
    by = {h.label: h for h in codec.VALID_CODEWORDS}
    pairs = [("L-TICK", "R-TICK"), ("L-TECK", "R-TACK"), ("R-TECK", "L-TACK"), ("L-TACK", "R-TECK")]
    realized = sum(codec.complement(by[a]) == by[b] for a, b in pairs)
    ok = involution and realized == 4 and time.perf_counter() - t0 < 1
    verdict(2, ok, f"involution on 8/8 patterns: {involution}, pairings realized {realized}/4", t0)


def test_03_four_phase_trace(verdict):
    t0 = time.perf_counter()
    p = Pair()
    p.push("L", 0, b"P")
    snd, rcv = p.queues["L"][0], p.queues["R"][1]
    rows = []

    def state():
        s, r = snd.find(1, 0), rcv.find(1, 0)
        return (s.state.value if s else None, s.observable if s else None,
                r.state.value if r else None, r.observable if r else None)

    p.start()
    rows.append(state())
    for _ in range(3):
        p.step()
        rows.append(state())
    expected_rows = [
        ("in_flight", False, None, None),  # share P into the sender's register
        ("in_flight", False, "held_unrevealed", False),  # copy P into the receiver's register
        ("retired", False, "held_unrevealed", False),  # sender retires P, confirms
        ("retired", False, "revealed", True),  # make P observable at the receiver
    ]
    p.step()
    ok = (p.trace[:4] == ["L-TECK", "R-TACK", "L-TICK", "R-TICK"] and rows == expected_rows
          and snd.entries == [] and time.perf_counter() - t0 < 1)
    verdict(3, ok, f"trace {p.trace[:4]}, queue rows match: {rows == expected_rows}", t0)


def test_04_observability_safety(verdict):
    t0 = time.perf_counter()
    configs = [(1, 1, 0, 1, 1), (2, 1, 0, 1, 1), (2, 2, 0, 1, 1), (3, 1, 0, 1, 1), (3, 2, 0, 1, 1),
               (3, 2, 0, 2, 2), (2, 2, 1, 1, 1)]
    total, problems = 0, []
    for packets, cap, r2l, nacks, restarts in configs:
        r = explore.explore_exhaustive(packets, cap, r2l_packets=r2l, max_nacks=nacks, max_restarts=restarts)
        total += r.states
        problems += r.violations
    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 60
    verdict(4, ok, f"{len(configs)} configurations up to 3 packets / capacity 2 with NACK and restart "
                   f"branches, {total} states, {len(problems)} violations", t0)


def test_05_exterior_quantization(verdict):
    t0 = time.perf_counter()
    idle = sim.run_scenario(ScenarioConfig(max_events=10_000, duration=10**7))
    idle_frames = idle.verdict.summary["frames"]
    idle_ext = [c["exterior"] for c in idle.verdict.summary["clocks"].values()]

    frag = 4
    sizes = [17, 4, 0, 9]
    workload = tuple(MessageSpec(10 + 200 * i, "A->B", generated_payload(n, i)) for i, n in enumerate(sizes))
    busy = sim.run_scenario(ScenarioConfig(fragment_size=frag, duration=2000, workload=workload))
    n_data = sum(len(cell.packetize(codec.Message(1, bytes(n)), frag)) for n in sizes)
    expected = n_data + 4 * len(sizes)
    ext = [c["exterior"] for c in busy.verdict.summary["clocks"].values()]
    ok = (idle_frames == 10_000 and idle_ext == [0, 0] and ext == [expected, expected]
          and busy.verdict.ok and time.perf_counter() - t0 < 5)
    verdict(5, ok, f"{idle_frames} idle events moved exterior by {idle_ext}; {n_data} packets + "
                   f"{4 * len(sizes)} control cycles gave exterior {ext} (expected {expected})", t0)


def test_06_exactly_once_under_backpressure(verdict):
    t0 = time.perf_counter()
    payload = generated_payload(100, 6)
    cfg = ScenarioConfig(seed=6, fragment_size=1, duration=5_000,
                         workload=(MessageSpec(5, "A->B", payload),),
                         faults=(FaultSpec(0, "RECEIVER_PRESSURE", probability=0.5, seed=2024),))
    r = sim.run_scenario(cfg)
    seqs = [x.frame["seq"] for x in r.log
            if x.kind == "REVEAL" and x.actor == "B" and x.frame["message_id"] == 1]
    retries = r.verdict.summary["retries"]
    ok = (seqs == list(range(100)) and retries > 0 and r.verdict.ok
          and r.sim.cells["B"].inbox[0].payload == payload and time.perf_counter() - t0 < 5)
    verdict(6, ok, f"{len(seqs)} packets revealed, in order: {seqs == sorted(seqs)}, "
                   f"unique: {len(set(seqs)) == len(seqs)}, retries {retries}", t0)


def test_07_stall_detection_and_recovery(verdict):
    t0 = time.perf_counter()
    cfg = scenario("stall")
    r = sim.run_scenario(cfg)
    stall_at = next(x.time for x in r.log if x.kind == "STALL")
    bound = cfg.watchdog_timeout + cfg.watchdog_poll
    delays = {}
    for x in r.log:
        if x.kind == "WATCHDOG" and x.actor not in delays:
            delays[x.actor] = x.time - stall_at
    reveals = [(x.actor, x.frame["message_id"], x.frame["seq"]) for x in r.log if x.kind == "REVEAL"]
    s = r.verdict.summary
    ok = (set(delays) == {"A", "B"} and max(delays.values()) <= bound and s["restarts"] == 1
          and s["messages_delivered"] == s["messages_injected"] and len(reveals) == len(set(reveals))
          and r.verdict.ok and time.perf_counter() - t0 < 5)
    verdict(7, ok, f"watchdog delays {delays} (bound {bound}), restarts {s['restarts']}, "
                   f"{s['messages_delivered']}/{s['messages_injected']} messages, no duplicate reveal", t0)


def test_08_message_atomicity_under_kill(verdict):
    t0 = time.perf_counter()
    partial, silent, diverged = 0, 0, 0
    for seed in range(50):
        rng = random.Random(seed)
        sizes = [rng.randint(5, 60) for _ in range(3)]
        workload = tuple(MessageSpec(10 + 40 * i, "A->B", generated_payload(n, seed + i)) for i, n in enumerate(sizes))
        cfg = ScenarioConfig(seed=seed, fragment_size=4, duration=800, workload=workload,
                             faults=(FaultSpec(rng.randint(15, 250), "KILL"),))
        r = sim.run_scenario(cfg)
        a, b = r.sim.cells["A"], r.sim.cells["B"]
        sent = {m.message_id: m.payload for m in a.outbox}
        partial += sum(1 for m in b.inbox if sent.get(m.message_id) != m.payload)
        if set(a.delivered) != {m.message_id for m in b.inbox}:
            diverged += 1
            alarmed = {x.actor for x in r.log if x.kind == "WATCHDOG"}
            silent += alarmed != {"A", "B"}
        silent += not r.verdict.ok
    ok = partial == 0 and silent == 0 and time.perf_counter() - t0 < 10
    verdict(8, ok, f"50 KILL runs: {partial} partial inbox messages, {diverged} M-DONE/inbox divergences "
                   f"all flagged by both watchdogs: {silent == 0}", t0)


def test_09_tamper_detection(verdict):
    t0 = time.perf_counter()
    cases = sim.tamper_matrix()
    counts = {k: sum(c.outcome == k for c in cases) for k in ("detected", "preserved", "undetected")}
    ok = len(cases) == 24 and counts["undetected"] == 0 and time.perf_counter() - t0 < 10
    verdict(9, ok, f"{len(cases)} single-bit header flips over 4 phases x 2 directions: {counts}", t0)


def test_10_timescale_separation(verdict):
    t0 = time.perf_counter()
    low = sim.run_scenario(scenario("canonical")).verdict.summary["timescales"]
    sat = sim.run_scenario(scenario("saturation")).verdict.summary["timescales"]
    ok = (low["message_over_packet"] > 1 and low["packet_over_tick"] > 1 and not low["flagged"]
          and sat["flagged"] and time.perf_counter() - t0 < 5)
    verdict(10, ok, f"canonical dt_M/dt_P={low['message_over_packet']:.2f} dt_P/dt_tick={low['packet_over_tick']:.2f}; "
                    f"saturation dt_M/dt_P={sat['message_over_packet']:.2f} flagged={sat['flagged']}", t0)


def test_11_determinism(verdict, tmp_path, capsys):
    t0 = time.perf_counter()
    names = sorted(p.stem for p in SCENARIOS.glob("*.scn"))
    same = 0
    for name in names:
        for run in ("one", "two"):
            main(["run", str(SCENARIOS / f"{name}.scn"), "--out", str(tmp_path / run), "--quiet"])
        logs = [str(tmp_path / run / f"{name}.events.jsonl") for run in ("one", "two")]
        same += main(["trace-diff", *logs, "--quiet"]) == 0
    capsys.readouterr()
    ok = same == len(names) and time.perf_counter() - t0 < 5
    verdict(11, ok, f"{same}/{len(names)} scenarios byte-identical across two runs (trace-diff exit 0)", t0)
