"""Deterministic discrete-event harness for a two-cell entangled link.

Time is an integer observer clock.  Events at the same instant run in a
fixed order (faults, message injections, frame deliveries, watchdog
polls), ties broken by scheduling order, so a (config, seed) pair always
yields the same event log.
"""

from __future__ import annotations

import heapq
import itertools
import json
import random
from dataclasses import dataclass, field

from . import cell as cellmod
from . import codec
from . import link
from . import queue as q
from .cell import CONTROL_BIT, CellAgent, Health
from .config import FaultSpec, ScenarioConfig
from .errors import ConfigError, ProtocolViolation

CELL_IDS = ("A", "B")

# same-instant ordering
_PRIO_FAULT, _PRIO_INJECT, _PRIO_DELIVER, _PRIO_POLL = 0, 1, 2, 3

SIGNAL_KINDS = frozenset({"L-TICK", "R-TICK", "L-TECK", "R-TECK", "L-TACK", "R-TACK", "L-NACK", "R-NACK"})


@dataclass
class EventRecord:
    time: int
    actor: str
    kind: str
    frame: dict | None
    clocks: dict
    detail: str | None = None

    def to_json(self) -> str:
        return json.dumps(
            {"time": self.time, "actor": self.actor, "kind": self.kind,
             "frame": self.frame, "clocks": self.clocks, "detail": self.detail},
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "EventRecord":
        d = json.loads(line)
        return cls(d["time"], d["actor"], d["kind"], d["frame"], d["clocks"], d.get("detail"))


def dump_log(records) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def load_log(text: str) -> list[EventRecord]:
    return [EventRecord.from_json(line) for line in text.splitlines() if line.strip()]


@dataclass
class InFlight:
    ident: int
    data: bytes
    sender: str
    deliver_at: int
    flipped: bool = False


@dataclass
class Channel:
    latency_l2r: int = 1
    latency_r2l: int = 1
    frames: dict[int, InFlight] = field(default_factory=dict)
    stalled: bool = False
    killed: bool = False
    armed_flip: int | None = None
    wiretap: str | None = None
    pressure: tuple[float, random.Random] | None = None

    def latency(self, direction: codec.Direction) -> int:
        return self.latency_l2r if direction is codec.Direction.L2R else self.latency_r2l


@dataclass
class Violation:
    time: int
    kind: str
    detail: str


class GodlikeObserver:
    """Reads the whole system between events and records invariant breaches.

    It never mutates agent state.
    """

    def __init__(self):
        self.violations: list[Violation] = []
        self._reveals: dict[tuple[str, int, int], int] = {}
        self._next_seq: dict[tuple[str, int], int] = {}
        self._cell_violations = {c: 0 for c in CELL_IDS}
        self._seen: set[tuple[str, str]] = set()

    def flag(self, now: int, kind: str, detail: str):
        # the same breach persisting across events is reported once
        if (kind, detail) in self._seen:
            return
        self._seen.add((kind, detail))
        self.violations.append(Violation(now, kind, detail))

    def on_reveal(self, now: int, receiver: str, p: codec.Packet):
        key = (receiver, p.message_id, p.seq)
        self._reveals[key] = self._reveals.get(key, 0) + 1
        if self._reveals[key] > 1:
            self.flag(now, "duplicate-reveal", f"{receiver} revealed {p.key} twice")
        if p.message_id & CONTROL_BIT:
            return
        want = self._next_seq.get((receiver, p.message_id), 0)
        if p.seq != want:
            self.flag(now, "reveal-order", f"{receiver} revealed {p.key}, expected seq {want}")
        self._next_seq[(receiver, p.message_id)] = max(want, p.seq + 1)

    def check(self, sim: "Simulation", now: int):
        a, b = sim.cells["A"], sim.cells["B"]
        for snd, rcv in ((a, b), (b, a)):
            seen = set(snd.q_send.observable_keys())
            for key in rcv.q_recv.observable_keys():
                if key in seen:
                    self.flag(now, "double-observable", f"{key} observable at {snd.id} and {rcv.id}")
            sent = {m.message_id: m for m in snd.outbox}
            for i, msg in enumerate(rcv.inbox):
                if i >= len(snd.outbox) or snd.outbox[i].message_id != msg.message_id:
                    self.flag(now, "inbox-order", f"{rcv.id} inbox position {i} holds message {msg.message_id}")
                elif sent[msg.message_id].payload != msg.payload:
                    self.flag(now, "inbox-corrupt", f"{rcv.id} got message {msg.message_id} with altered payload")
        if a.endpoint.alive and b.endpoint.alive and not sim.channel.killed:
            if len(sim.channel.frames) != 1:
                self.flag(now, "token", f"{len(sim.channel.frames)} frames in flight on a live link")
            if (link.is_quiescent(a.endpoint, a.q_send, a.q_recv)
                    and link.is_quiescent(b.endpoint, b.q_send, b.q_recv)
                    and a.endpoint.clocks.exterior != b.endpoint.clocks.exterior):
                self.flag(now, "exterior-clock",
                          f"quiescent link with exterior clocks {a.endpoint.clocks.exterior} "
                          f"and {b.endpoint.clocks.exterior}")
        for c in (a, b):
            for msg in c.violations[self._cell_violations[c.id]:]:
                self.flag(now, "message-layer", f"{c.id}: {msg}")
            self._cell_violations[c.id] = len(c.violations)
            wd = c.watchdog
            if wd.enabled and now - wd.last_activity > wd.timeout + wd.poll_interval:
                self.flag(now, "watchdog-liveness", f"{c.id} silent since {wd.last_activity}")

    def audit_atomicity(self, sim: "Simulation", now: int):
        """End of run: a message in one side's ledger but not the other's must not go unnoticed.

        On a live link the gap between the sender's M-DONE and the receiver's
        inbox is one transient frame, so only a broken link is audited.
        """
        a, b = sim.cells["A"], sim.cells["B"]
        if a.endpoint.alive and b.endpoint.alive and not sim.channel.killed:
            return
        alarmed = {r.actor for r in sim.log if r.kind == "WATCHDOG"}
        for snd, rcv in ((a, b), (b, a)):
            diverged = set(snd.delivered) ^ {m.message_id for m in rcv.inbox}
            if diverged and not {snd.id, rcv.id} <= alarmed:
                self.flag(now, "silent-divergence",
                          f"messages {sorted(diverged)} disagree between {snd.id} and {rcv.id} unflagged")


@dataclass
class Verdict:
    violations: list[Violation]
    summary: dict

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class ScenarioResult:
    log: list[EventRecord]
    verdict: Verdict
    sim: "Simulation"

    def log_text(self) -> str:
        return dump_log(self.log)


class Simulation:
    def __init__(self, cfg: ScenarioConfig):
        if not isinstance(cfg, ScenarioConfig):
            raise ConfigError(f"expected a ScenarioConfig, got {type(cfg).__name__}")
        self.cfg = cfg
        self.cells: dict[str, CellAgent] = {}
        for i, cid in enumerate(CELL_IDS):
            c = cellmod.make_cell(cid, cfg.queue_capacity, cfg.fragment_size, cfg.retry_limit,
                                  seed=cfg.seed * 2 + i)
            c.watchdog = cellmod.WatchdogClock(cfg.watchdog_timeout, cfg.watchdog_poll, 0, cfg.watchdog)
            self.cells[cid] = c
        self.channel = Channel(cfg.latency_l2r, cfg.latency_r2l)
        self.observer = GodlikeObserver()
        self.log: list[EventRecord] = []
        self.now = 0
        self.frames_sent = 0
        self.bootstraps = 0
        self.stall_open = False
        self.wiretap_seen: list[bytes] = []
        self._heap: list = []
        self._order = itertools.count()
        self._ids = itertools.count()

    # scheduling and logging

    def schedule(self, time: int, prio: int, kind: str, *args):
        heapq.heappush(self._heap, (time, prio, next(self._order), kind, args))

    def clocks(self) -> dict:
        return {cid: c.endpoint.clocks.as_dict() for cid, c in self.cells.items()}

    def record(self, actor: str, kind: str, frame: dict | None = None, detail: str | None = None):
        self.log.append(EventRecord(self.now, actor, kind, frame, self.clocks(), detail))

    def violation(self, kind: str, detail: str):
        # logged by _observe once the event finishes
        self.observer.flag(self.now, kind, detail)

    def peer(self, cid: str) -> CellAgent:
        return self.cells["B" if cid == "A" else "A"]

    # main loop

    def run(self) -> ScenarioResult:
        cfg = self.cfg
        for f in cfg.faults:
            self.schedule(f.at, _PRIO_FAULT, "fault", f)
        for m in cfg.workload:
            for k in range(m.count):
                self.schedule(m.at + k * m.every, _PRIO_INJECT, "inject", m, k)
        self.schedule(0, _PRIO_DELIVER, "check")
        if cfg.watchdog:
            self.schedule(cfg.watchdog_poll, _PRIO_POLL, "poll")

        while self._heap:
            time, _, _, kind, args = self._heap[0]
            if time > cfg.duration or (cfg.max_events and self.frames_sent >= cfg.max_events):
                break
            heapq.heappop(self._heap)
            self.now = time
            getattr(self, f"_on_{kind}")(*args)
            self._maybe_bootstrap()
            self._observe()
        self._observe(final=True)
        return ScenarioResult(self.log, self._verdict(), self)

    def _observe(self, final: bool = False):
        before = len(self.observer.violations)
        self.observer.check(self, self.now)
        if final:
            self.observer.audit_atomicity(self, self.now)
        for v in self.observer.violations[before:]:
            self.record("observer", "VIOLATION", None, f"{v.kind}: {v.detail}")

    def _on_check(self):
        pass

    def _on_fault(self, f: FaultSpec):
        inject_fault(self, f)

    def _on_inject(self, m, k: int):
        src = self.cells[m.direction[0]]
        msg = cellmod.submit(src, m.payload, self.now)
        self.record(src.id, "INJECT", None, f"message {msg.message_id} ({len(m.payload)} bytes)")
        self._service(src)

    def _on_poll(self):
        for c in self.cells.values():
            ep = c.endpoint
            verdict = cellmod.watchdog_poll(c, self.now)
            if verdict is Health.STALLED or ep.phase is link.Phase.DEAD:
                self.record(c.id, "WATCHDOG", None, f"entanglement-loss: no signal since {c.watchdog.last_activity}")
                if not self.stall_open:
                    self.stall_open = True
                    self.record(c.id, "STALL_DETECTED", None, None)
                if ep.phase is not link.Phase.BOOTSTRAPPING:
                    link.restart(ep, q_send=c.q_send)
                    self.record(c.id, "RESTART", None, "endpoint back to bootstrapping")
                c.watchdog.touch(self.now)
        nxt = self.now + self.cfg.watchdog_poll
        self.schedule(nxt, _PRIO_POLL, "poll")

    def _on_deliver(self, ident: int):
        frame = self.channel.frames.get(ident)
        if frame is None:
            return  # flushed by a restart
        if self.channel.stalled:
            return  # held; UNSTALL reschedules it
        del self.channel.frames[ident]
        receiver = self.peer(frame.sender)
        ep = receiver.endpoint
        if not ep.alive:
            self.record(receiver.id, "DROP", None, f"frame arrived while {ep.phase.value}")
            return
        admit = None
        if self.channel.pressure is not None:
            prob, rng = self.channel.pressure
            admit = lambda p: rng.random() >= prob  # noqa: E731
        cellmod.note_frame(receiver, self.now)
        try:
            reply = link.receive_bytes(ep, frame.data, receiver.q_send, receiver.q_recv, admit)
        except ProtocolViolation as exc:
            self.record(receiver.id, "DEAD", None, str(exc))
            kind = "detected-tamper" if frame.flipped else "entanglement-loss"
            self.violation(kind, str(exc))
            return
        self._service(receiver)
        self._send(receiver, reply)

    # helpers

    def _service(self, c: CellAgent):
        for kind, arg in cellmod.service(c, self.now):
            if kind == "REVEAL":
                p = self._last_consumed(c, arg)
                self.observer.on_reveal(self.now, c.id, p)
                self.record(c.id, "REVEAL", p.to_dict(), None)
            elif kind in ("DELIVERED", "BACKPRESSURE"):
                self.record(c.id, kind, None, f"{arg[0]},{arg[1]}")
            else:
                self.record(c.id, kind, None, f"message {arg}")

    @staticmethod
    def _last_consumed(c: CellAgent, key) -> codec.Packet:
        payload = c.q_recv.consumed[key]
        return codec.Packet(codec.encode_header(codec.Direction.L2R, codec.Intent.OFFER), key[0], key[1], payload)

    def _send(self, c: CellAgent, p: codec.Packet):
        cellmod.note_frame(c, self.now, p)
        self.frames_sent += 1
        self.record(c.id, p.label, p.to_dict(), None)
        ch = self.channel
        if ch.killed:
            self.record("channel", "DISCARD", None, f"{p.label} from {c.id} lost on a dead line")
            return
        data = codec.encode_frame(p)
        if ch.wiretap is not None:
            self.wiretap_seen.append(data)
            if ch.wiretap == "masquerade" and p.is_data_offer and not p.message_id & CONTROL_BIT:
                data = codec.encode_frame(codec.Packet(p.header, p.message_id, p.seq,
                                                       bytes(x ^ 0xFF for x in p.payload), p.last))
        flipped = False
        if ch.armed_flip is not None:
            data = codec.flip_bit(data, ch.armed_flip % (8 * len(data)))
            self.record("channel", "BITFLIP", None, f"bit {ch.armed_flip} of {p.label} from {c.id}")
            ch.armed_flip = None
            flipped = True
        ident = next(self._ids)
        at = self.now + ch.latency(p.direction)
        ch.frames[ident] = InFlight(ident, data, c.id, at, flipped)
        self.schedule(at, _PRIO_DELIVER, "deliver", ident)

    def _maybe_bootstrap(self):
        a, b = self.cells["A"].endpoint, self.cells["B"].endpoint
        if a.phase is not link.Phase.BOOTSTRAPPING or b.phase is not link.Phase.BOOTSTRAPPING:
            return
        if self.channel.stalled or self.channel.killed:
            return
        self.channel.frames.clear()
        while True:
            na, nb = link.draw_nonce(a), link.draw_nonce(b)
            ra = link.bootstrap_step(a, na, nb)
            if ra is link.REDRAW:
                continue
            link.bootstrap_step(b, nb, na)
            break
        self.bootstraps += 1
        self.stall_open = False
        detail = "initial" if self.bootstraps == 1 else f"restart {self.bootstraps - 1}"
        self.record("link", "BOOTSTRAP", None, f"{detail}: A={a.role.value} B={b.role.value}")
        for c in self.cells.values():
            c.watchdog.touch(self.now)
        left = self.cells["A"] if a.role is link.Role.LEFT else self.cells["B"]
        self._send(left, link.start(left.endpoint, left.q_send))

    def _verdict(self) -> Verdict:
        return Verdict(list(self.observer.violations), summarize(self.log))


def inject_fault(sim: Simulation, fault: FaultSpec) -> Simulation:
    """Apply one scheduled fault to the running simulation."""
    ch = sim.channel
    detail = None
    if fault.kind == "STALL":
        ch.stalled = True
    elif fault.kind == "UNSTALL":
        ch.stalled = False
        for frame in sorted(ch.frames.values(), key=lambda f: f.ident):
            frame.deliver_at = max(frame.deliver_at, sim.now)
            sim.schedule(frame.deliver_at, _PRIO_DELIVER, "deliver", frame.ident)
    elif fault.kind == "KILL":
        ch.killed = True
        ch.frames.clear()
    elif fault.kind == "BITFLIP":
        ch.armed_flip = fault.bit
        detail = f"bit {fault.bit} armed"
        if ch.frames:
            frame = ch.frames[min(ch.frames)]
            frame.data = codec.flip_bit(frame.data, fault.bit % (8 * len(frame.data)))
            frame.flipped = True
            ch.armed_flip = None
            detail = f"bit {fault.bit} of in-flight frame from {frame.sender}"
    elif fault.kind == "WIRETAP_INSERT":
        ch.wiretap = fault.mode or "pass"
        detail = ch.wiretap
    elif fault.kind == "RECEIVER_PRESSURE":
        seed = fault.seed if fault.seed is not None else sim.cfg.seed
        ch.pressure = (fault.probability, random.Random(seed))
        detail = f"p={fault.probability} seed={seed}"
    else:
        raise ConfigError(f"unknown fault {fault.kind}")
    # the pass-through tap is invisible at the endpoints, so it leaves no record there
    sim.record("channel" if fault.kind != "WIRETAP_INSERT" else "wiretap", fault.kind, None, detail)
    return sim


def _cycle_durations(records) -> list[int]:
    """First offer to confirmed delivery, per packet, from the log."""
    first: dict[tuple, int] = {}
    out = []
    for r in records:
        if r.kind.endswith("TECK") and r.frame and r.frame["payload"]:
            first.setdefault((r.actor, r.frame["message_id"], r.frame["seq"]), r.time)
        elif r.kind == "DELIVERED":
            mid, seq = (int(x) for x in r.detail.split(","))
            out.append(r.time - first.pop((r.actor, mid, seq), r.time))
    return out


def summarize(records) -> dict:
    """Metrics derived from the event log alone."""
    frames = [r for r in records if r.kind in SIGNAL_KINDS]
    reveals = [r for r in records if r.kind == "REVEAL"]
    data = [r for r in reveals if not r.frame["message_id"] & CONTROL_BIT]
    injects = [r.time for r in records if r.kind == "INJECT"]
    cycles = _cycle_durations(records)
    delivered = [r for r in records if r.kind == "INBOX"]
    last = records[-1].clocks if records else {}
    timescales = None
    if delivered and injects and cycles and frames:
        m_over_p, p_over_tick = cellmod.timescale_ratios(injects, cycles, [r.time for r in frames])
        timescales = {"message_over_packet": round(m_over_p, 6), "packet_over_tick": round(p_over_tick, 6),
                      "flagged": m_over_p <= 1 or p_over_tick <= 1}
    return {
        "frames": len(frames),
        "packets_delivered": len(reveals),
        "data_packets_delivered": len(data),
        "messages_injected": len(injects),
        "messages_delivered": len(delivered),
        "retries": sum(1 for r in frames if r.kind.endswith("NACK")),
        "backpressure": sum(1 for r in records if r.kind == "BACKPRESSURE"),
        "stalls": sum(1 for r in records if r.kind == "STALL_DETECTED"),
        "restarts": sum(1 for r in records if r.kind == "BOOTSTRAP" and r.detail.startswith("restart")),
        "dead": sum(1 for r in records if r.kind == "DEAD"),
        "clocks": last,
        "timescales": timescales,
        "divergences": _divergences(records),
        "violations": [r.detail for r in records if r.kind == "VIOLATION"],
    }


def _divergences(records) -> int:
    """Messages the sender saw M-DONE for that never reached the peer's inbox, or vice versa."""
    done = {(r.actor, r.detail) for r in records if r.kind == "MDONE"}
    got = {("A" if r.actor == "B" else "B", r.detail) for r in records if r.kind == "INBOX"}
    return len(done ^ got)


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    return Simulation(cfg).run()


def endpoint_view(records) -> list[str]:
    """Log lines produced by the two cells, as the endpoints see them."""
    return [r.to_json() for r in records if r.actor in CELL_IDS]


# tamper enumeration

@dataclass(frozen=True)
class TamperCase:
    direction: str
    phase: int
    signal: str
    bit: int
    flipped_header: str
    outcome: str
    reason: str


def _fresh_pair(sender_role: link.Role):
    """Two bootstrapped endpoints; the sender side has one packet queued."""
    left = link.LinkEndpoint("L")
    right = link.LinkEndpoint("R")
    link.bootstrap_step(left, 2, 1)
    link.bootstrap_step(right, 1, 2)
    queues = {ep.name: (q.ObservableQueue(q.Side.SENDER, 2), q.ObservableQueue(q.Side.RECEIVER, 2))
              for ep in (left, right)}
    sender = left if sender_role is link.Role.LEFT else right
    q.push_send(queues[sender.name][0], cellmod._queued(1, 0, b"payload", last=True))
    return left, right, queues


def _run_cycle(sender_role: link.Role, tamper_at: int | None = None, bit: int = 0):
    """Drive one transfer, optionally flipping ``bit`` of the cycle's frame ``tamper_at``.

    Returns (list of cycle labels, outcome dict).
    """
    left, right, queues = _fresh_pair(sender_role)
    eps = {"L": left, "R": right}
    frame = link.start(left, queues["L"][0])
    at = left
    labels, cycle_index = [], None
    for _ in range(12):
        to = right if at is left else left
        if frame.is_data_offer:
            cycle_index = 0
        if cycle_index is not None and cycle_index < 4:
            labels.append(frame.label)
        data = codec.encode_frame(frame)
        tampered = cycle_index == tamper_at and tamper_at is not None
        if tampered:
            data = codec.flip_bit(data, bit)
        reveals_before = sum(1 for e in queues[to.name][1].entries if e.state is q.EntryState.REVEALED)
        try:
            frame = link.receive_bytes(to, data, *queues[to.name])
        except ProtocolViolation as exc:
            return labels, {"detected": True, "reason": str(exc), "tampered": tampered,
                            "revealed_after": reveals_before}
        if tampered:
            revealed = sum(1 for e in queues[to.name][1].entries if e.state is q.EntryState.REVEALED)
            return labels, {"detected": False, "reason": "accepted", "tampered": True,
                            "revealed_after": revealed, "reveals_before": reveals_before}
        if cycle_index is not None:
            cycle_index += 1
        at = to
    return labels, {"detected": False, "reason": "no tamper", "tampered": False, "eps": eps, "queues": queues}


def tamper_matrix() -> list[TamperCase]:
    """Flip every header bit of every signal of a transfer, both directions.

    Outcomes:

    - "detected": the flipped frame kills the receiving endpoint before it reveals anything;
    - "preserved": the flipped frame still decodes to the same legal packet;
    - "undetected": anything else.
    """
    cases = []
    for role in (link.Role.LEFT, link.Role.RIGHT):
        clean, _ = _run_cycle(role)
        for phase in range(4):
            for bit in range(3):
                labels, out = _run_cycle(role, phase, bit)
                orig = _label_packet(clean[phase]).header
                flipped = codec.HeaderVector.from_byte(orig.to_byte() ^ (1 << bit))
                if out["detected"] and out["tampered"]:
                    outcome = "detected"
                elif flipped == orig:
                    outcome = "preserved"
                else:
                    outcome = "undetected"
                cases.append(TamperCase(role.direction.name, phase, clean[phase], bit, str(flipped),
                                        outcome, out["reason"]))
    return cases


def _label_packet(label: str) -> codec.Packet:
    side, name = label.split("-")
    direction = codec.Direction.L2R if side == "L" else codec.Direction.R2L
    intent = {"TICK": codec.Intent.IDLE, "TECK": codec.Intent.OFFER, "TACK": codec.Intent.ACCEPT,
              "NACK": codec.Intent.OFFER}[name]
    payload = b"x" if name == "TECK" else b""
    return codec.signal(direction, intent, payload=payload)
