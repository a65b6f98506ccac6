"""Deterministic tick-based network simulator.

Each tick runs the same six phases in order:

1. inject the tick's events (link edits queued by the previous tick apply first)
2. deliver last tick's messages, FIFO per (src, dst) node pair, pairs ascending
3. step alive agents in ascending id order
4. arbitrate actions (spawn conflicts go to the lowest parent id)
5. advance device physics
6. record the metrics snapshot

Tick 0 places the seeds and injects its events; agents first act at tick 1.
"""

from __future__ import annotations

import hashlib
import json
import random
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

from .agent import (
    Agent,
    AgentIds,
    Message,
    MessageKind,
    MoveTo,
    NodeView,
    Params,
    PromoteSelf,
    Report,
    SendMessage,
    SpawnChild,
    SpawnTwin,
    WriteBlackboard,
    DeviceCommand,
    birth,
    promote,
    step,
)
from .codec import (
    AttrDict,
    CODON_MAX,
    DnaError,
    Genome,
    ReproStrand,
    decode,
    encode_repro,
    from_bytes,
    genome_strings,
    is_binary,
    parse_text,
    validate,
)
from .genes import OP_REPROGRAM, STANDARD_HANDLERS, Blackboard, DeviceState
from .registry import GeneRegistry, RegistryError, reachable_codes
from .store import MemoryStore, StoreBackend, open_local, verify_store

class ScenarioError(Exception):
    """Malformed scenario or failed preflight (exit status 1)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SimulationError(Exception):
    """Runtime fault inside the simulator (exit status 2)."""


# ---------------------------------------------------------------------------
# Topology


@dataclass
class Topology:
    names: list[str] = field(default_factory=list)
    attrs: list[dict[str, str]] = field(default_factory=list)
    adj: list[set[int]] = field(default_factory=list)
    devices: dict[int, DeviceState] = field(default_factory=dict)
    dictionary: AttrDict = field(default_factory=AttrDict)
    index: dict[str, int] = field(default_factory=dict)

    def add_node(self, name: str, attrs: dict[str, str] | None = None) -> int:
        if name in self.index:
            raise ValueError(f"duplicate NODE {name!r}")
        attrs = dict(attrs or {})
        i = len(self.names)
        self.names.append(name)
        self.attrs.append(attrs)
        self.adj.append(set())
        self.index[name] = i
        for k, v in attrs.items():
            self.dictionary.intern(k)
            self.dictionary.intern(v)
        return i

    def add_edge(self, a: int, b: int) -> None:
        if a == b:
            raise ValueError(f"self-loop on {self.names[a]!r}")
        self.adj[a].add(b)
        self.adj[b].add(a)

    def remove_edge(self, a: int, b: int) -> None:
        self.adj[a].discard(b)
        self.adj[b].discard(a)

    def node(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise ValueError(f"unknown node {name!r}") from None

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    @property
    def n_edges(self) -> int:
        return sum(len(a) for a in self.adj) // 2

    def edges(self) -> list[tuple[int, int]]:
        return sorted((a, b) for a in range(len(self.adj)) for b in self.adj[a] if a < b)

    def copy(self) -> Topology:
        return Topology(list(self.names), [dict(a) for a in self.attrs], [set(a) for a in self.adj],
                        {k: DeviceState(**vars(d)) for k, d in self.devices.items()},
                        self.dictionary.copy(), dict(self.index))


def grid(w: int, h: int, topo: Topology | None = None) -> Topology:
    topo = topo or Topology()
    base = topo.n_nodes
    for i in range(w * h):
        topo.add_node(f"n{i + 1}")
    for r in range(h):
        for c in range(w):
            i = base + r * w + c
            if c + 1 < w:
                topo.add_edge(i, i + 1)
            if r + 1 < h:
                topo.add_edge(i, i + w)
    return topo


def cycle(n: int, topo: Topology | None = None) -> Topology:
    topo = topo or Topology()
    base = topo.n_nodes
    for i in range(n):
        topo.add_node(f"n{i + 1}")
    for i in range(n):
        j = (i + 1) % n
        if i != j:
            topo.add_edge(base + i, base + j)
    return topo


def star(n: int, topo: Topology | None = None) -> Topology:
    topo = topo or Topology()
    base = topo.n_nodes
    for i in range(n):
        topo.add_node(f"n{i + 1}")
    for i in range(1, n):
        topo.add_edge(base, base + i)
    return topo


# ---------------------------------------------------------------------------
# Scenario


@dataclass(frozen=True)
class CrashAgent:
    node: str
    agent: int | None = None


@dataclass(frozen=True)
class CorruptDna:
    agent: int | str  # agent id, or "@node" for the node's primary resident
    index: int
    value: int


@dataclass(frozen=True)
class Emergency:
    node: str
    code: int


@dataclass(frozen=True)
class LinkDown:
    a: str
    b: str


@dataclass(frozen=True)
class LinkUp:
    a: str
    b: str


@dataclass(frozen=True)
class Reprogram:
    node: str
    repro: ReproStrand


Event = CrashAgent | CorruptDna | Emergency | LinkDown | LinkUp | Reprogram


@dataclass
class Scenario:
    topology: Topology
    seeds: list[tuple[str, Genome]] = field(default_factory=list)
    events: list[tuple[int, Event]] = field(default_factory=list)
    run_length: int = 100
    rng_seed: int = 0
    params: Params = field(default_factory=Params)


_PARAM_TYPES = {
    "sync_interval": int,
    "missed_sync_limit": int,
    "band_low": float,
    "band_high": float,
    "monitor_mode": str,
}


def _kv(tokens: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        k, sep, v = tok.partition("=")
        if not sep or not k or not v:
            raise ScenarioError(f"expected k=v, got {tok!r}", lineno)
        if k in out:
            raise ScenarioError(f"attribute {k!r} repeated", lineno)
        out[k] = v
    return out


def _uint(tok: str, what: str, lineno: int, bits: int = 32) -> int:
    if not tok.isdigit() or int(tok) >= 1 << bits:
        raise ScenarioError(f"{what} must be an unsigned {bits}-bit integer, got {tok!r}", lineno)
    return int(tok)


def _lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if tokens:
            yield lineno, tokens


_TOPOLOGY_WORDS = {"NODE", "GRID", "CYCLE", "STAR", "EDGE", "DEVICE"}


def _topology_line(topo: Topology, word: str, args: list[str], lineno: int) -> None:
    try:
        if word == "NODE":
            if not args:
                raise ScenarioError("NODE needs an id", lineno)
            topo.add_node(args[0], _kv(args[1:], lineno))
        elif word in ("GRID", "CYCLE", "STAR"):
            want = 2 if word == "GRID" else 1
            if len(args) != want:
                raise ScenarioError(f"{word} takes {want} size argument(s)", lineno)
            sizes = [_uint(a, "size", lineno) for a in args]
            {"GRID": grid, "CYCLE": cycle, "STAR": star}[word](*sizes, topo=topo)
        elif word == "EDGE":
            if len(args) != 2:
                raise ScenarioError("EDGE takes two node ids", lineno)
            topo.add_edge(topo.node(args[0]), topo.node(args[1]))
        elif word == "DEVICE":
            if len(args) < 2 or args[1] != "battery":
                raise ScenarioError("expected 'DEVICE <node> battery [k=v ...]'", lineno)
            node = topo.node(args[0])
            opts = _kv(args[2:], lineno)
            dev = DeviceState()
            for k, v in opts.items():
                if k == "level":
                    dev.level = float(v)
                elif k == "charge_rate":
                    dev.charge_rate = float(v)
                elif k == "drain":
                    dev.drain_per_tick = float(v)
                elif k == "charging":
                    dev.charging = v in ("1", "true", "on")
                else:
                    raise ScenarioError(f"unknown DEVICE option {k!r}", lineno)
            topo.devices[node] = dev
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc), lineno) from None


def build_topology(text: str) -> Topology:
    """Build just the topology from scenario text; other lines are ignored."""
    topo = Topology()
    for lineno, tokens in _lines(text):
        if tokens[0] in _TOPOLOGY_WORDS:
            _topology_line(topo, tokens[0], tokens[1:], lineno)
    return topo


def load_genome(path: Path, dictionary: AttrDict) -> Genome:
    """Read a ``.dna`` text or compiled binary genome.

    Strings of text genomes are interned into ``dictionary``.
    Raises OSError if unreadable, DnaError if malformed.
    """
    data = path.read_bytes()
    if is_binary(data):
        return decode(from_bytes(data), dictionary)
    genome = parse_text(data.decode("utf-8"))
    for s in genome_strings(genome):
        dictionary.intern(s)
    return genome


def parse_scenario(text: str, base_dir: str | Path = ".") -> Scenario:
    """Parse a scenario document; referenced genome files are loaded from ``base_dir``.

    Raises:
        ScenarioError: syntax or consistency problems, including malformed genomes.
        OSError: a referenced genome file cannot be read.
    """
    base_dir = Path(base_dir)
    lines = list(_lines(text))
    if not lines or lines[0][1] != ["NET"]:
        raise ScenarioError("scenario must start with NET", lines[0][0] if lines else 1)
    topo = Topology()
    seeds_raw: list[tuple[int, str, str]] = []
    events_raw: list[tuple[int, list[str]]] = []
    params = Params()
    run = None
    for lineno, tokens in lines[1:]:
        word, args = tokens[0], tokens[1:]
        if word in _TOPOLOGY_WORDS:
            _topology_line(topo, word, args, lineno)
        elif word == "SEED":
            if len(args) != 2:
                raise ScenarioError("expected 'SEED <node> <genome-file>'", lineno)
            seeds_raw.append((lineno, args[0], args[1]))
        elif word == "PARAM":
            if len(args) != 2 or args[0] not in _PARAM_TYPES:
                raise ScenarioError(f"expected 'PARAM <name> <value>' with name in {sorted(_PARAM_TYPES)}", lineno)
            try:
                setattr(params, args[0], _PARAM_TYPES[args[0]](args[1]))
            except ValueError:
                raise ScenarioError(f"bad value for {args[0]}: {args[1]!r}", lineno) from None
        elif word == "EVENT":
            events_raw.append((lineno, args))
        elif word == "RUN":
            if run is not None:
                raise ScenarioError("duplicate RUN", lineno)
            if not args:
                raise ScenarioError("RUN needs a tick count", lineno)
            ticks = _uint(args[0], "tick count", lineno)
            opts = _kv(args[1:], lineno)
            if set(opts) - {"seed"}:
                raise ScenarioError(f"unknown RUN option(s) {sorted(set(opts) - {'seed'})}", lineno)
            run = (ticks, _uint(opts.get("seed", "0"), "seed", lineno, bits=64))
        else:
            raise ScenarioError(f"unknown keyword {word!r}", lineno)
    if run is None:
        raise ScenarioError("missing RUN line", lines[-1][0])
    if params.sync_interval < 1 or params.missed_sync_limit < 1:
        raise ScenarioError("sync_interval and missed_sync_limit must be positive")
    if params.monitor_mode not in ("random", "circuit"):
        raise ScenarioError(f"monitor_mode must be random or circuit, got {params.monitor_mode!r}")

    dictionary = topo.dictionary
    seeds = []
    for lineno, node, file in seeds_raw:
        if node not in topo.index:
            raise ScenarioError(f"SEED on unknown node {node!r}", lineno)
        seeds.append((node, _genome_or_error(base_dir / file, dictionary, lineno)))
    events = [_parse_event(args, lineno, topo, run[0], base_dir) for lineno, args in events_raw]
    events.sort(key=lambda e: e[0])
    return Scenario(topo, seeds, events, run[0], run[1], params)


def _genome_or_error(path: Path, dictionary: AttrDict, lineno: int) -> Genome:
    try:
        return load_genome(path, dictionary)
    except DnaError as exc:
        raise ScenarioError(f"{path}: {exc}", lineno) from None


def _parse_event(args: list[str], lineno: int, topo: Topology, run_length: int,
                 base_dir: Path) -> tuple[int, Event]:
    if len(args) < 2:
        raise ScenarioError("expected 'EVENT <tick> <kind> ...'", lineno)
    tick = _uint(args[0], "event tick", lineno)
    if tick > run_length:
        raise ScenarioError(f"event tick {tick} is after the run length {run_length}", lineno)
    kind, rest = args[1], args[2:]

    def node(name: str) -> str:
        if name not in topo.index:
            raise ScenarioError(f"unknown node {name!r}", lineno)
        return name

    if kind == "crash" and len(rest) in (1, 2):
        return tick, CrashAgent(node(rest[0]), _uint(rest[1], "agent id", lineno) if len(rest) == 2 else None)
    if kind == "corrupt" and len(rest) == 3:
        target: int | str
        if rest[0].startswith("@"):
            target = "@" + node(rest[0][1:])
        else:
            target = _uint(rest[0], "agent id", lineno)
        return tick, CorruptDna(target, _uint(rest[1], "codon index", lineno), _uint(rest[2], "codon value", lineno))
    if kind == "emergency" and len(rest) == 2:
        return tick, Emergency(node(rest[0]), _uint(rest[1], "payload code", lineno))
    if kind in ("linkdown", "linkup") and len(rest) == 2:
        cls = LinkDown if kind == "linkdown" else LinkUp
        return tick, cls(node(rest[0]), node(rest[1]))
    if kind == "reprogram" and len(rest) == 2:
        genome = _genome_or_error(base_dir / rest[1], topo.dictionary, lineno)
        return tick, Reprogram(node(rest[0]), genome.repro)
    raise ScenarioError(f"malformed {kind!r} event", lineno)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), path.parent)


# ---------------------------------------------------------------------------
# Metrics and trace


@dataclass(frozen=True)
class TraceRecord:
    tick: int
    agent: int | None
    kind: str
    detail: str = ""

    def line(self) -> str:
        return f"{self.tick}\t{'-' if self.agent is None else self.agent}\t{self.kind}\t{self.detail}"


@dataclass
class Metrics:
    nodes: int = 0
    ticks: int = 0
    seed: int = 0
    coverage: list[float] = field(default_factory=list)
    full_coverage_tick: int | None = None
    messages: dict[str, int] = field(default_factory=dict)
    anomalies: int = 0
    failovers: list[dict] = field(default_factory=list)
    age_histogram: dict[int, int] = field(default_factory=dict)
    born: int = 0
    alive: int = 0
    dead: int = 0
    lineage_violations: int = 0

    def to_json(self) -> str:
        doc = dict(vars(self))
        doc["age_histogram"] = {str(k): v for k, v in sorted(self.age_histogram.items())}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> Metrics:
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise ValueError("metrics document must be an object")
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown metrics fields {sorted(unknown)}")
        m = cls(**doc)
        m.age_histogram = {int(k): int(v) for k, v in m.age_histogram.items()}
        if not isinstance(m.coverage, list) or not all(isinstance(c, (int, float)) for c in m.coverage):
            raise ValueError("coverage must be a list of numbers")
        return m


def coverage(metrics: Metrics, tick: int) -> float:
    """Fraction of nodes hosting at least one primary-enabled agent at ``tick``."""
    if not 0 <= tick < len(metrics.coverage):
        raise ValueError(f"tick {tick} outside 0..{len(metrics.coverage) - 1}")
    return metrics.coverage[tick]


def trace_text(trace: Iterable[TraceRecord]) -> str:
    return "".join(r.line() + "\n" for r in trace)


def trace_hash(trace: Iterable[TraceRecord]) -> str:
    return hashlib.sha256(trace_text(trace).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Simulation


class Simulation:
    """Runs one scenario. Use :func:`run` for the batch path.

    ``observers`` are called as ``fn(sim)`` after every tick's snapshot.
    """

    def __init__(self, scenario: Scenario, registry: GeneRegistry | None = None,
                 store: StoreBackend | None = None,
                 observers: Iterable[Callable[[Simulation], None]] = ()):
        if registry is None:
            store = store or open_local()
            registry = GeneRegistry.from_store(store, STANDARD_HANDLERS)
        elif store is None:
            store = MemoryStore(registry.entry(c) for c in sorted(registry.codes()))
        self.scenario = scenario
        self.registry = registry
        self.store = store
        self.topo = scenario.topology.copy()
        self.params = scenario.params
        self.rng = random.Random(scenario.rng_seed)
        self.ids = AgentIds()
        self.agents: dict[int, Agent] = {}
        self.tick = 0
        self.trace: list[TraceRecord] = []
        self.metrics = Metrics(nodes=self.topo.n_nodes, ticks=scenario.run_length, seed=scenario.rng_seed)
        self.observers = list(observers)
        self.blackboards: dict[int, Blackboard] = defaultdict(Blackboard)
        self._queue: list[Message] = []
        self._flood_seen: list[set[int]] = [set() for _ in range(self.topo.n_nodes)]
        self._next_flood = 1
        self._link_edits: list[tuple[int, Event]] = []
        self._crash_ticks: dict[int, int] = {}
        self._events = defaultdict(list)
        for t, ev in scenario.events:
            self._events[t].append(ev)
        self._started = False

    # -- bookkeeping ------------------------------------------------------

    def record(self, agent: int | None, kind: str, detail: str = "") -> None:
        self.trace.append(TraceRecord(self.tick, agent, kind, detail))

    def name(self, node: int) -> str:
        return self.topo.names[node]

    def alive_agents(self) -> list[Agent]:
        return [a for a in self.agents.values() if a.alive]

    def residents(self, node: int) -> list[Agent]:
        return [a for a in self.agents.values() if a.alive and a.node == node]

    def primary_resident(self, node: int) -> Agent | None:
        for a in self.agents.values():
            if a.alive and a.node == node and a.is_primary and not a.mobile:
                return a
        return None

    def primaries_by_lineage(self) -> dict[int, int]:
        out: dict[int, int] = defaultdict(int)
        for a in self.agents.values():
            if a.alive and a.is_primary:
                out[a.lineage] += 1
        return dict(out)

    def covered_nodes(self) -> set[int]:
        return {a.node for a in self.agents.values() if a.alive and a.is_primary}

    def _enqueue(self, m: Message) -> None:
        self._queue.append(replace(m, sent_tick=self.tick))
        self.metrics.messages[m.kind.value] = self.metrics.messages.get(m.kind.value, 0) + 1

    # -- lifecycle --------------------------------------------------------

    def preflight(self) -> None:
        genomes = [g for _, g in self.scenario.seeds]
        genomes += [Genome(g.main, ev.repro) for g in genomes[:1]
                    for _, ev in self.scenario.events if isinstance(ev, Reprogram)]
        required: set[int] = set()
        problems = []
        for g in genomes:
            problems += [str(d) for d in validate(g)]
            required |= reachable_codes(g)
        for _, ev in self.scenario.events:
            if isinstance(ev, Reprogram):
                required |= {x.gene_code for x in ev.repro.gene_template}
        problems += verify_store(self.store, required)
        problems += [f"gene {c} has no handler" for c in sorted(required) if c not in self.registry]
        if problems:
            raise ScenarioError("preflight failed: " + "; ".join(problems))

    def start(self) -> None:
        if self._started:
            return
        self.preflight()
        self._started = True
        self.tick = 0
        for node_name, genome in self.scenario.seeds:
            node = self.topo.node(node_name)
            agent = self._birth(genome, node)
            self.record(agent.id, "born", f"seed node={node_name} type={agent.type_code} "
                                           f"membrane={_codes(agent)}")
        self._inject(0)
        self._snapshot()

    def run(self, until: int | None = None) -> Metrics:
        self.start()
        end = self.scenario.run_length if until is None else min(until, self.scenario.run_length)
        while self.tick < end:
            self.step_tick()
        if self.tick >= self.scenario.run_length:
            self._finish()
        return self.metrics

    def step_tick(self) -> None:
        self.start()
        self.tick += 1
        t = self.tick
        self._apply_link_edits()
        self._inject(t)
        inboxes = self._deliver()
        views: dict[int, NodeView] = {}
        stepped: list[tuple[Agent, list]] = []
        for agent in self.alive_agents():
            if not agent.alive:
                continue
            view = views.get(agent.node)
            if view is None:
                view = views[agent.node] = self._view(agent.node)
            actions = step(agent, view, inboxes.get(agent.id, ()), self.rng, t, self.params)
            self.record(agent.id, "step", f"genes={','.join(map(str, agent.last_invoked))} age={agent.age}")
            stepped.append((agent, actions))
        self._arbitrate(stepped)
        for dev in self.topo.devices.values():
            dev.advance()
        self._snapshot()

    def _finish(self) -> None:
        hist: dict[int, int] = defaultdict(int)
        for a in self.agents.values():
            hist[a.age] += 1
        self.metrics.age_histogram = dict(sorted(hist.items()))

    # -- phases -----------------------------------------------------------

    def _birth(self, genome: Genome, node: int, **extra) -> Agent:
        try:
            agent = birth(genome, self.topo.attrs[node], self.registry, ids=self.ids, node=node,
                          dictionary=self.topo.dictionary, tick=self.tick, **extra)
        except RegistryError as exc:
            raise SimulationError(f"tick {self.tick}: {exc}") from exc
        except DnaError as exc:
            raise SimulationError(f"tick {self.tick}: cannot encode genome: {exc}") from exc
        self.agents[agent.id] = agent
        self.metrics.born += 1
        return agent

    def _apply_link_edits(self) -> None:
        edits, self._link_edits = self._link_edits, []
        for _, ev in edits:
            a, b = self.topo.node(ev.a), self.topo.node(ev.b)
            if isinstance(ev, LinkDown):
                self.topo.remove_edge(a, b)
            elif a != b:
                self.topo.add_edge(a, b)

    def _inject(self, t: int) -> None:
        for ev in self._events.get(t, ()):
            if isinstance(ev, CrashAgent):
                node = self.topo.node(ev.node)
                if ev.agent is None:
                    target = self.primary_resident(node)
                else:
                    target = self.agents.get(ev.agent)
                    if target is not None and (not target.alive or target.node != node):
                        target = None
                if target is None:
                    self.record(None, "event-noop", f"crash node={ev.node} agent={ev.agent}")
                    continue
                target.alive = False
                self.metrics.dead += 1
                if target.is_primary:
                    self._crash_ticks.setdefault(target.lineage, t)
                self.record(target.id, "crash", f"node={ev.node} lineage={target.lineage}")
            elif isinstance(ev, CorruptDna):
                if isinstance(ev.agent, str):
                    target = self.primary_resident(self.topo.node(ev.agent[1:]))
                else:
                    target = self.agents.get(ev.agent)
                if target is None or not target.alive or not 0 <= ev.index < len(target.codons):
                    self.record(None, "event-noop", f"corrupt agent={ev.agent} index={ev.index}")
                    continue
                old = target.codons[ev.index]
                target.codons[ev.index] = ev.value & CODON_MAX
                self.record(target.id, "corrupt", f"index={ev.index} {old}->{ev.value}")
            elif isinstance(ev, Emergency):
                origin = self.topo.node(ev.node)
                fid = self._new_flood()
                self._enqueue(Message(MessageKind.EMERGENCY, None, origin, origin, (ev.code,),
                                           (origin,), flood_id=fid))
                self.record(None, "emergency", f"flood={fid} node={ev.node} code={ev.code}")
            elif isinstance(ev, (LinkDown, LinkUp)):
                kind = "linkdown" if isinstance(ev, LinkDown) else "linkup"
                self._link_edits.append((t, ev))
                self.record(None, kind, f"{ev.a}-{ev.b}")
            elif isinstance(ev, Reprogram):
                node = self.topo.node(ev.node)
                try:
                    payload = (OP_REPROGRAM, *encode_repro(ev.repro, self.topo.dictionary))
                except DnaError as exc:
                    raise SimulationError(str(exc)) from exc
                self._enqueue(Message(MessageKind.APP, None, node, node, payload))
                self.record(None, "reprogram-sent", f"node={ev.node}")

    def _new_flood(self) -> int:
        fid = self._next_flood
        self._next_flood += 1
        return fid

    def _deliver(self) -> dict[int, list[Message]]:
        msgs, self._queue = self._queue, []
        msgs.sort(key=lambda m: (m.src_node, m.dest_node))
        by_node: dict[int, list[Agent]] = defaultdict(list)
        for a in self.agents.values():
            if a.alive:
                by_node[a.node].append(a)
        inboxes: dict[int, list[Message]] = defaultdict(list)
        ttl = max(1, self.topo.n_nodes)
        for m in msgs:
            if m.flood_id is not None:
                seen = self._flood_seen[m.dest_node]
                if m.flood_id in seen:
                    continue
                seen.add(m.flood_id)
                if len(m.path_trace) <= ttl:
                    prev = m.path_trace[-2] if len(m.path_trace) > 1 else None
                    for y in sorted(self.topo.adj[m.dest_node]):
                        if y != prev:
                            self._enqueue(Message(m.kind, m.src_agent, m.dest_node, y, m.payload,
                                                       m.path_trace + (y,), flood_id=m.flood_id))
            for a in by_node.get(m.dest_node, ()):
                if m.dest_agent is not None and a.id != m.dest_agent:
                    continue
                if a.id == m.src_agent:
                    continue
                inboxes[a.id].append(m)
        return inboxes

    def _view(self, node: int) -> NodeView:
        nbrs = tuple(sorted(self.topo.adj[node]))
        return NodeView(
            index=node,
            attrs=self.topo.attrs[node],
            neighbors=nbrs,
            neighbor_attrs={n: self.topo.attrs[n] for n in nbrs},
            residents=tuple(self.residents(node)),
            blackboard=self.blackboards[node],
            device=self.topo.devices.get(node),
            names=self.topo.names,
        )

    def _send(self, agent: Agent, a: SendMessage) -> None:
        src = agent.node
        if a.flood:
            fid = self._new_flood()
            self._enqueue(Message(a.kind, agent.id, src, src, a.payload, (src,), flood_id=fid))
            return
        if a.dest_node != src and a.dest_node not in self.topo.adj[src]:
            self.record(agent.id, "send-rejected", f"{a.kind.value} {self.name(src)}->{self.name(a.dest_node)}")
            return
        path = (src,) if a.dest_node == src else (src, a.dest_node)
        self._enqueue(Message(a.kind, agent.id, src, a.dest_node, a.payload, path, a.dest_agent))

    def _arbitrate(self, stepped: list[tuple[Agent, list]]) -> None:
        twins: list[tuple[Agent, SpawnTwin]] = []
        children: list[tuple[Agent, SpawnChild]] = []
        for agent, actions in stepped:
            for a in actions:
                if isinstance(a, Report):
                    self._report(agent, a)
                elif isinstance(a, SendMessage):
                    self._send(agent, a)
                elif isinstance(a, WriteBlackboard):
                    self.blackboards[agent.node].write(a.key, a.value, agent.id, self.tick)
                elif isinstance(a, DeviceCommand):
                    dev = self.topo.devices.get(agent.node)
                    if dev is not None:
                        before = dev.charging
                        dev.apply(a.command)
                        if dev.charging != before:
                            self.record(agent.id, "device", f"charging={int(dev.charging)} level={dev.level:g}")
                elif isinstance(a, MoveTo):
                    if a.target in self.topo.adj[agent.node]:
                        self.record(agent.id, "move", f"{self.name(agent.node)}->{self.name(a.target)}")
                        agent.node = a.target
                    else:
                        self.record(agent.id, "move-rejected", f"{self.name(agent.node)}->{self.name(a.target)}")
                elif isinstance(a, PromoteSelf):
                    self._promote(agent)
                elif isinstance(a, SpawnTwin):
                    twins.append((agent, a))
                elif isinstance(a, SpawnChild):
                    children.append((agent, a))
                else:
                    raise SimulationError(f"unknown action {a!r}")
        for agent, a in twins:
            if not agent.alive:
                continue
            twin = self._birth(a.genome, agent.node, lineage=agent.lineage, twin_of=agent.id,
                               parent_id=agent.id, parent_node=agent.node,
                               sequenced=agent.sequenced, reprogrammed=agent.reprogrammed)
            twin.memory[103] = {"leader": list(agent.codons), "missed": 0}
            agent.twin_id = twin.id
            self.record(twin.id, "born", f"twin-of={agent.id} node={self.name(agent.node)} "
                                         f"type={twin.type_code} membrane={_codes(twin)}")
        occupied = {a.node for a in self.agents.values() if a.alive and not a.mobile}
        for parent, a in children:
            target = a.target
            if target not in self.topo.adj[parent.node]:
                self.record(parent.id, "spawn-rejected", f"node={self.name(target)} reason=not-adjacent")
                continue
            if target in occupied:
                self.record(parent.id, "spawn-rejected", f"node={self.name(target)} reason=occupied")
                continue
            child = self._birth(a.genome, target, parent_id=parent.id, parent_node=parent.node,
                                sequenced=True)
            if not child.mobile:
                occupied.add(target)
            parent.set_links(children=(*parent.genome.main.child_links, child.id))
            self.record(child.id, "born", f"parent={parent.id} node={self.name(target)} "
                                          f"type={child.type_code} membrane={_codes(child)}")

    def _report(self, agent: Agent, a: Report) -> None:
        self.record(agent.id, a.kind, a.detail)
        if a.kind == "anomaly":
            self.metrics.anomalies += 1
        elif a.kind == "fault":
            self.metrics.dead += 1
            if agent.is_primary:
                self._crash_ticks.setdefault(agent.lineage, self.tick)
                twin = self.agents.get(agent.twin_id) if agent.twin_id is not None else None
                if twin is not None and twin.alive:
                    # death notice: an empty SYNC short-circuits the missed-window wait
                    self._enqueue(Message(MessageKind.SYNC, agent.id, agent.node, agent.node,
                                               (), (agent.node,), twin.id))

    def _promote(self, agent: Agent) -> None:
        old = self.agents.get(agent.twin_of) if agent.twin_of is not None else None
        if old is not None and old.alive:
            old.alive = False
            self.metrics.dead += 1
            self.record(old.id, "fenced", f"replaced-by={agent.id}")
        promote(agent, self.topo.attrs[agent.node], self.registry)
        crash = self._crash_ticks.pop(agent.lineage, None)
        latency = None if crash is None else self.tick - crash
        self.metrics.failovers.append({"lineage": agent.lineage, "agent": agent.id,
                                       "crash_tick": crash, "promote_tick": self.tick,
                                       "latency": latency})
        self.record(agent.id, "promote", f"lineage={agent.lineage} node={self.name(agent.node)} "
                                         f"latency={latency} membrane={_codes(agent)}")

    def _snapshot(self) -> None:
        n = self.topo.n_nodes
        covered = len(self.covered_nodes())
        ratio = covered / n if n else 0.0
        self.metrics.coverage.append(ratio)
        if ratio == 1.0 and self.metrics.full_coverage_tick is None:
            self.metrics.full_coverage_tick = self.tick
        self.metrics.alive = sum(1 for a in self.agents.values() if a.alive)
        self.metrics.lineage_violations += sum(1 for c in self.primaries_by_lineage().values() if c > 1)
        for fn in self.observers:
            fn(self)


def _codes(agent: Agent) -> str:
    return ",".join(map(str, agent.membrane.codes)) or "-"


def run(scenario: Scenario, registry: GeneRegistry | None = None, *,
        observers: Iterable[Callable[[Simulation], None]] = ()) -> tuple[Metrics, list[TraceRecord]]:
    """Run a scenario to completion and return its metrics and trace."""
    sim = Simulation(scenario, registry, observers=observers)
    metrics = sim.run()
    return metrics, sim.trace
