"""Breadth-first enumeration of every reachable link state at desk scale.

The explorer drives the real endpoint and queue code.  Nondeterminism
comes from the cells (when packets are pushed, when revealed packets are
consumed) and from bounded fault branches: a forced NACK and a full link
restart.  Interior and subtime clocks grow without bound during idling,
so they are left out of the state key; exterior clocks stay in.
"""

from __future__ import annotations

import copy
import time
from collections import deque
from dataclasses import dataclass, field

from . import codec
from . import link
from . import queue as q
from .errors import ProtocolViolation, StateSpaceOverflow

DEFAULT_MAX_STATES = 2_000_000

# packets from LEFT use message id 1, packets from RIGHT message id 2
_SOURCES = {"L": 1, "R": 2}


@dataclass
class _State:
    eps: dict
    queues: dict  # name -> (send, recv)
    frame: codec.Packet | None
    pushed: dict
    reveals: dict
    nacks: int = 0
    restarts: int = 0

    def protocol_key(self) -> tuple:
        return (
            self.eps["L"].snapshot(), self.eps["R"].snapshot(),
            tuple(qq.snapshot() for name in "LR" for qq in self.queues[name]),
            self.frame,
            tuple(sorted(self.pushed.items())),
            tuple(sorted(self.reveals.items())),
        )

    def key(self) -> tuple:
        return self.protocol_key() + (self.nacks, self.restarts)


@dataclass
class ReachableStateReport:
    max_packets: int
    capacity: int
    states: int
    protocol_states: int
    transitions: int
    complete_states: int
    recurrent_states: int = 0
    violations: list[str] = field(default_factory=list)
    # (our last signal, peer's answer) label pairs seen on delivered frames
    reflection_pairs: set = field(default_factory=set)
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations


def _packet(source: str, seq: int, total: int) -> codec.Packet:
    return codec.signal(codec.Direction.L2R, codec.Intent.OFFER, _SOURCES[source], seq,
                        bytes([seq + 1]), last=(seq == total - 1))


def _initial(capacity: int, retry_limit: int) -> _State:
    eps = {}
    for name, nonces in (("L", (2, 1)), ("R", (1, 2))):
        ep = link.LinkEndpoint(name, retry_limit=retry_limit, rng=None)
        link.bootstrap_step(ep, *nonces)
        eps[name] = ep
    queues = {n: (q.ObservableQueue(q.Side.SENDER, capacity), q.ObservableQueue(q.Side.RECEIVER, capacity))
              for n in "LR"}
    s = _State(eps, queues, None, {"L": 0, "R": 0}, {})
    s.frame = link.start(eps["L"], queues["L"][0])
    return s


def _collect_reveals(s: _State, name: str):
    ep = s.eps[name]
    for kind, key in ep.notices:
        if kind == "revealed":
            s.reveals[key] = s.reveals.get(key, 0) + 1
    ep.notices.clear()


def _successors(s: _State, totals: dict, max_nacks: int, max_restarts: int, pairs: set):
    """Yield (label, successor) pairs."""
    if s.frame is not None:
        to = "R" if s.frame.direction is codec.Direction.L2R else "L"
        if s.eps[to].last_sent is not None:
            pairs.add((s.eps[to].last_sent.label, s.frame.label))
        refusals = [False]
        if s.frame.is_data_offer and s.nacks < max_nacks:
            refusals.append(True)
        for refuse in refusals:
            t = copy.deepcopy(s)
            admit = (lambda p: False) if refuse else None
            try:
                t.frame = link.on_receive(t.eps[to], t.frame, *t.queues[to], admit=admit)
            except ProtocolViolation as exc:
                yield f"violation: {exc}", None
                continue
            if refuse:
                t.nacks += 1
            _collect_reveals(t, to)
            yield ("nack" if refuse else "deliver"), t

    for name in "LR":
        if s.pushed[name] < totals[name] and not s.queues[name][0].is_full:
            t = copy.deepcopy(s)
            q.push_send(t.queues[name][0], _packet(name, t.pushed[name], totals[name]))
            t.pushed[name] += 1
            yield f"push {name}", t
        if any(e.state is q.EntryState.REVEALED for e in s.queues[name][1].entries):
            t = copy.deepcopy(s)
            q.consume(t.queues[name][1])
            yield f"consume {name}", t

    if s.restarts < max_restarts:
        t = copy.deepcopy(s)
        for name, nonces in (("L", (2, 1)), ("R", (1, 2))):
            link.restart(t.eps[name], q_send=t.queues[name][0])
            link.bootstrap_step(t.eps[name], *nonces)
        t.restarts += 1
        t.frame = link.start(t.eps["L"], t.queues["L"][0])
        yield "restart", t


def _is_complete(s: _State, totals: dict) -> bool:
    for name in "LR":
        if s.pushed[name] < totals[name] or s.queues[name][0].entries:
            return False
        for seq in range(totals[name]):
            if s.reveals.get((_SOURCES[name], seq)) != 1:
                return False
    return True


def _check(s: _State, totals: dict) -> list[str]:
    problems = []
    if s.frame is None:
        problems.append("no frame in flight (token lost)")
    for snd, rcv in (("L", "R"), ("R", "L")):
        both = set(s.queues[snd][0].observable_keys()) & set(s.queues[rcv][1].observable_keys())
        for key in both:
            problems.append(f"{key} observable at both ends")
        src = _SOURCES[snd]
        pending = {e.key for e in s.queues[snd][0].entries}
        for seq in range(s.pushed[snd]):
            key = (src, seq)
            if key not in pending and s.reveals.get(key, 0) == 0:
                problems.append(f"{key} confirmed at sender but never revealed (lost)")
            if seq > 0 and s.reveals.get(key, 0) and not s.reveals.get((src, seq - 1), 0):
                problems.append(f"{key} revealed before seq {seq - 1}")
    for key, n in s.reveals.items():
        if n > 1:
            problems.append(f"{key} revealed {n} times")
    L, R = s.eps["L"], s.eps["R"]
    if (link.is_quiescent(L, *s.queues["L"]) and link.is_quiescent(R, *s.queues["R"])
            and L.clocks.exterior != R.clocks.exterior):
        problems.append(f"quiescent with exterior clocks {L.clocks.exterior} / {R.clocks.exterior}")
    return problems


def explore_exhaustive(max_packets: int, capacity: int = 1, *, r2l_packets: int = 0,
                       max_nacks: int = 1, max_restarts: int = 1,
                       retry_limit: int = link.DEFAULT_RETRY_LIMIT,
                       max_states: int = DEFAULT_MAX_STATES) -> ReachableStateReport:
    """Enumerate all reachable states and check the link's safety properties.

    Every state is checked for:

    - exactly one frame in flight;
    - no packet observable at both ends;
    - no packet lost, revealed twice or revealed out of order;
    - equal exterior clocks whenever both ends are quiescent;
    - at least one successor.

    Finally every state must still be able to reach full delivery.
    """
    if max_packets < 0 or r2l_packets < 0 or capacity < 1:
        raise ValueError("packet counts must be non-negative and capacity positive")
    started = time.perf_counter()
    totals = {"L": max_packets, "R": r2l_packets}
    init = _initial(capacity, retry_limit)
    index = {init.key(): 0}
    protocol = {init.protocol_key()}
    preds: list[list[int]] = [[]]
    complete: list[int] = []
    violations: list[str] = []
    transitions = 0
    pairs: set = set()
    frontier = deque([(0, init)])
    while frontier:
        i, s = frontier.popleft()
        for problem in _check(s, totals):
            violations.append(f"state {i}: {problem}")
        if _is_complete(s, totals):
            complete.append(i)
        n_succ = 0
        for label, t in _successors(s, totals, max_nacks, max_restarts, pairs):
            if t is None:
                violations.append(f"state {i}: {label}")
                continue
            n_succ += 1
            transitions += 1
            k = t.key()
            j = index.get(k)
            if j is None:
                j = len(preds)
                if j >= max_states:
                    raise StateSpaceOverflow(f"more than {max_states} states")
                index[k] = j
                preds.append([])
                protocol.add(t.protocol_key())
                frontier.append((j, t))
            preds[j].append(i)
        if n_succ == 0:
            violations.append(f"state {i}: deadlock")

    # every state must still be able to reach completion
    can_finish = [False] * len(preds)
    work = deque(complete)
    for i in complete:
        can_finish[i] = True
    while work:
        j = work.popleft()
        for i in preds[j]:
            if not can_finish[i]:
                can_finish[i] = True
                work.append(i)
    stuck = [i for i, ok in enumerate(can_finish) if not ok]
    if stuck:
        violations.append(f"{len(stuck)} states cannot reach full delivery (first: {stuck[0]})")

    return ReachableStateReport(max_packets, capacity, len(preds), len(protocol), transitions,
                                len(complete), _recurrent(preds), violations, pairs,
                                time.perf_counter() - started)


def _recurrent(preds: list[list[int]]) -> int:
    """Count states lying on some cycle (Kosaraju, iterative)."""
    n = len(preds)
    succs: list[list[int]] = [[] for _ in range(n)]
    for j, ps in enumerate(preds):
        for i in ps:
            succs[i].append(j)
    order, seen = [], [False] * n
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        stack = [(root, iter(succs[root]))]
        while stack:
            v, it = stack[-1]
            for w in it:
                if not seen[w]:
                    seen[w] = True
                    stack.append((w, iter(succs[w])))
                    break
            else:
                stack.pop()
                order.append(v)
    comp = [-1] * n
    count = 0
    for root in reversed(order):
        if comp[root] != -1:
            continue
        members, stack = [], [root]
        comp[root] = root
        while stack:
            v = stack.pop()
            members.append(v)
            for w in preds[v]:
                if comp[w] == -1:
                    comp[w] = root
                    stack.append(w)
        if len(members) > 1 or root in succs[root]:
            count += len(members)
    return count
