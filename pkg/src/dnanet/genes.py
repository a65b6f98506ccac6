"""Standard gene library (codes 101-108) and the node-side state they use."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any

from .agent import (
    EMERGENCY_TYPE,
    MONITOR_TYPE,
    DeviceCommand,
    GeneContext,
    InvalidStrand,
    MessageKind,
    MoveTo,
    Report,
    SendMessage,
    SpawnTwin,
    WriteBlackboard,
    reprogram_children,
    reproduce_step,
    twin_genome,
    twin_sync,
    twin_watch,
)
from .codec import AGE_INDEX, DecodeError, DnaError, Scope, decode, decode_repro, first_match
from .registry import GeneHandler, GeneRegistry, Role
from .store import open_local

SPREAD = 101
HEARTBEAT_SYNC = 102
TWIN_WATCH = 103
MONITOR_WALK = 104
EMERGENCY_DISPATCH = 105
BATTERY_CONTROL = 106
BLACKBOARD_PUBLISH = 107
DNA_REPROGRAM = 108

CHARGE_OFF = 0
CHARGE_ON = 1

OP_REPROGRAM = 1


class ScopeViolation(Exception):
    pass


@dataclass
class DeviceState:
    kind: str = "battery"
    level: float = 100.0
    drain_per_tick: float = 0.5
    charge_rate: float = 2.0
    charging: bool = False

    def apply(self, command: int) -> None:
        self.charging = command == CHARGE_ON

    def advance(self) -> None:
        level = self.level + (self.charge_rate if self.charging else 0.0) - self.drain_per_tick
        self.level = min(100.0, max(0.0, level))


@dataclass(frozen=True)
class BlackboardEntry:
    value: tuple[int, ...]
    writer: int
    tick: int


@dataclass
class Blackboard:
    """Node-local shared memory of one cluster."""

    entries: dict[Any, BlackboardEntry] = field(default_factory=dict)

    def get(self, key):
        entry = self.entries.get(key)
        return None if entry is None else entry.value

    def write(self, key, value, writer: int, tick: int) -> None:
        self.entries[key] = BlackboardEntry(tuple(value), writer, tick)


@dataclass(frozen=True)
class MonitorObservation:
    agent_id: int
    last_seen_age: int
    checksum_ok: bool
    type_ok: bool
    tick: int


def _check_scope(ctx: GeneContext) -> None:
    if ctx.gene.scope is Scope.OUTER:
        raise ScopeViolation(f"gene {ctx.gene.gene_code} has outer scope and may not use the blackboard")


def bb_get(ctx: GeneContext, key):
    _check_scope(ctx)
    return ctx.node.blackboard.get(key) if ctx.node.blackboard is not None else None


def bb_put(ctx: GeneContext, key, value) -> WriteBlackboard:
    _check_scope(ctx)
    return WriteBlackboard(key, tuple(value))


# --- 101 spread -------------------------------------------------------------

def spread(ctx: GeneContext) -> list:
    """Announce occupancy to neighbours and fork onto unoccupied ones.

    A node counts as occupied if an OCCUPY beacon from it arrived this tick,
    or if this agent forked there (or came from there) on the previous tick,
    before that node's first beacon could arrive.
    """
    agent, node, tick = ctx.agent, ctx.node, ctx.tick
    st = ctx.state
    claimed = st.get("claimed")
    if claimed is None:
        claimed = st["claimed"] = {}
        if agent.parent_node is not None:
            claimed[agent.parent_node] = agent.born_tick
    for n in [n for n, t in claimed.items() if t < tick - 1]:
        del claimed[n]
    occupied = {m.src_node for m in ctx.inbox if m.kind is MessageKind.OCCUPY}
    occupied.update(claimed)
    spawns = reproduce_step(agent, node, occupied)
    for s in spawns:
        claimed[s.target] = tick
    agent.set_links(neighbors=[n for n in node.neighbors if n in occupied or n in claimed])
    beacons = [SendMessage(MessageKind.OCCUPY, n, (node.index, agent.type_code)) for n in node.neighbors]
    return [*spawns, *beacons]


# --- 102/103 twins ------------------------------------------------------------

def heartbeat_sync(ctx: GeneContext) -> list:
    agent = ctx.agent
    if agent.twin_id is not None and not any(r.id == agent.twin_id for r in ctx.node.residents):
        agent.twin_id = None
    if agent.twin_id is None:
        return [SpawnTwin(twin_genome(agent.genome))]
    return twin_sync(agent, ctx.tick, ctx.params)


def twin_watch_gene(ctx: GeneContext) -> list:
    return twin_watch(ctx.agent, ctx.inbox, ctx.tick, ctx.params)


# --- 104 monitor ----------------------------------------------------------------

def _inspect(ctx: GeneContext) -> list[Report]:
    st = ctx.state
    seen: dict[int, int] = st.setdefault("seen", {})
    flagged: set = st.setdefault("flagged", set())
    log: list = st.setdefault("log", [])
    reports = []
    for r in ctx.node.residents:
        if r.id == ctx.agent.id:
            continue
        problems = []
        try:
            stored = decode(r.codons, r.attrs)
            checksum_ok = True
        except DecodeError as exc:
            stored = None
            checksum_ok = False
            problems.append(("checksum", exc.kind))
        age = r.codons[AGE_INDEX] if len(r.codons) > AGE_INDEX else 0
        if r.id in seen and age < seen[r.id]:
            problems.append(("age", f"{seen[r.id]}->{age}"))
        type_ok = True
        if stored is not None and r.sequenced and not r.reprogrammed and not r.mobile:
            try:
                expected = first_match(stored.repro.child_type_rules, ctx.node.attrs)
            except DnaError:
                expected = None
            if expected != stored.type_code:
                type_ok = False
                problems.append(("type", f"{stored.type_code}!={expected}"))
        seen[r.id] = max(age, seen.get(r.id, age))
        log.append(MonitorObservation(r.id, seen[r.id], checksum_ok, type_ok, ctx.tick))
        for check, detail in problems:
            if (r.id, check) not in flagged:
                flagged.add((r.id, check))
                reports.append(Report("anomaly", f"agent={r.id} check={check} {detail} "
                                                  f"node={ctx.node.label(ctx.node.index)}"))
    return reports


def _circuit_move(ctx: GeneContext) -> list[MoveTo]:
    """Depth-first circuit over the spanning tree discovered while walking.

    The first pass explores online; once it is back at its root the recorded
    walk (2(n-1) moves) is replayed. A changed neighbourhood or a rejected
    move restarts exploration from the current node.
    """
    st = ctx.state
    here = ctx.node.index
    nbrs = set(ctx.node.neighbors)
    tour = st.get("tour")
    if tour is not None:
        pos = st["pos"]
        if tour[pos] == here and nbrs <= st["tour_nodes"]:
            nxt = tour[(pos + 1) % len(tour)]
            if nxt == here:
                return []
            if nxt in nbrs:
                st["pos"] = (pos + 1) % len(tour)
                return [MoveTo(nxt)]
        del st["tour"]
        st.pop("walk", None)
    walk = st.get("walk")
    if walk is None or walk[-1] != here:
        walk = st["walk"] = [here]
        st["visited"] = {here}
        st["stack"] = []
    visited, stack = st["visited"], st["stack"]
    fresh = sorted(n for n in nbrs if n not in visited)
    if fresh:
        stack.append(here)
        visited.add(fresh[0])
        walk.append(fresh[0])
        return [MoveTo(fresh[0])]
    if stack:
        back = stack.pop()
        walk.append(back)
        return [MoveTo(back)]
    circuit = walk[:-1] if len(walk) > 1 else walk
    del st["walk"]
    st["tour"] = circuit
    st["tour_nodes"] = set(circuit)
    st["pos"] = 0
    if len(circuit) > 1:
        st["pos"] = 1
        return [MoveTo(circuit[1])]
    return []


def monitor_walk(ctx: GeneContext) -> list:
    """Inspect co-resident agents, then take one step of the walk."""
    if ctx.agent.type_code != MONITOR_TYPE:
        return []
    reports = _inspect(ctx)
    if ctx.params.monitor_mode == "circuit":
        return [*reports, *_circuit_move(ctx)]
    if not ctx.node.neighbors:
        return reports
    return [*reports, MoveTo(ctx.rng.choice(ctx.node.neighbors))]


# --- 105 emergency ------------------------------------------------------------------

def emergency_dispatch(ctx: GeneContext) -> list:
    """Walk the reverse of each EMERGENCY flood path to its origin, FIFO.

    A message received at trail position ``i`` and started later from
    position ``j`` first retraces the trail back to where it was received.
    """
    if ctx.agent.type_code != EMERGENCY_TYPE:
        return []
    st = ctx.state
    here = ctx.node.index
    trail: list[int] = st.setdefault("trail", [])
    if not trail or trail[-1] != here:
        trail.append(here)
    seen: set = st.setdefault("seen", set())
    queue: deque = st.setdefault("queue", deque())
    for m in ctx.inbox:
        if m.kind is MessageKind.EMERGENCY and m.flood_id not in seen:
            seen.add(m.flood_id)
            queue.append({"flood": m.flood_id, "path": list(m.path_trace),
                          "payload": m.payload, "at": len(trail) - 1})
    label = ctx.node.label
    out: list = []
    while True:
        job = st.get("job")
        if job is None:
            if not queue:
                return out
            job = queue.popleft()
            back = list(reversed(trail[job["at"]:-1]))
            job["route"] = back + list(reversed(job["path"]))[1:]
            st["job"] = job
            out.append(Report("dispatch", f"flood={job['flood']} origin={label(job['path'][0])} "
                                          f"hops={len(job['route'])} "
                                          f"path={'-'.join(label(n) for n in job['path'])}"))
        route = job["route"]
        payload = ",".join(map(str, job["payload"]))
        if not route:
            out.append(Report("handled", f"flood={job['flood']} origin={label(here)} payload={payload}"))
            st["job"] = None
            continue
        if route[0] not in ctx.node.neighbors:
            out.append(Report("unreachable", f"flood={job['flood']} at={label(here)} "
                                             f"next={label(route[0])} payload={payload}"))
            st["job"] = None
            continue
        out.append(MoveTo(route.pop(0)))
        return out


# --- 106 battery ------------------------------------------------------------------

def battery_control(ctx: GeneContext) -> list:
    """Hysteresis band controller: charge below the band, stop above it."""
    device = ctx.node.device
    if device is None or device.kind != "battery":
        return []
    if device.level < ctx.params.band_low:
        return [DeviceCommand(CHARGE_ON)]
    if device.level > ctx.params.band_high:
        return [DeviceCommand(CHARGE_OFF)]
    return []


# --- 107 blackboard ------------------------------------------------------------------

def blackboard_publish(ctx: GeneContext) -> list:
    """Publish this agent's status under its type; remember what peers posted."""
    agent = ctx.agent
    key = f"status/{agent.type_code}"
    ctx.state["last_read"] = bb_get(ctx, key)
    return [bb_put(ctx, key, (agent.id, agent.age, ctx.tick))]


# --- 108 reprogram ------------------------------------------------------------------

def dna_reprogram(ctx: GeneContext) -> list:
    """Apply REPROGRAM app messages carrying an encoded reproductive strand."""
    out = []
    for m in ctx.inbox:
        if m.kind is not MessageKind.APP or not m.payload or m.payload[0] != OP_REPROGRAM:
            continue
        try:
            strand = decode_repro(m.payload[1:], ctx.agent.attrs)
            reprogram_children(ctx.agent, strand)
        except (DecodeError, InvalidStrand) as exc:
            out.append(Report("reprogram-rejected", str(exc)))
            continue
        types = ",".join(str(r.child_type) for r in strand.child_type_rules)
        out.append(Report("reprogram", f"child_types={types}"))
    return out


STANDARD_HANDLERS: dict[int, GeneHandler] = {
    SPREAD: GeneHandler(SPREAD, spread),
    HEARTBEAT_SYNC: GeneHandler(HEARTBEAT_SYNC, heartbeat_sync),
    TWIN_WATCH: GeneHandler(TWIN_WATCH, twin_watch_gene, frozenset({Role.TWIN})),
    MONITOR_WALK: GeneHandler(MONITOR_WALK, monitor_walk),
    EMERGENCY_DISPATCH: GeneHandler(EMERGENCY_DISPATCH, emergency_dispatch),
    BATTERY_CONTROL: GeneHandler(BATTERY_CONTROL, battery_control),
    BLACKBOARD_PUBLISH: GeneHandler(BLACKBOARD_PUBLISH, blackboard_publish),
    DNA_REPROGRAM: GeneHandler(DNA_REPROGRAM, dna_reprogram),
}


def standard_registry(manifest=None) -> GeneRegistry:
    return GeneRegistry.from_store(open_local(manifest), STANDARD_HANDLERS)
