"""The agent cell and its lifecycle, from sequencing to twin promotion."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

from .codec import (
    AGE_INDEX,
    TWIN_INDEX,
    AttrDict,
    DecodeError,
    Genome,
    ReproStrand,
    Scope,
    TwinFlag,
    decode,
    encode,
    encode_links,
    first_match,
    links_span,
    validate,
)
from .registry import GeneRegistry, Membrane, Role, load_membrane

MONITOR_TYPE = 8
EMERGENCY_TYPE = 9
MOBILE_TYPES = frozenset({MONITOR_TYPE, EMERGENCY_TYPE})

TWIN_WATCH_GENE = 103


class MessageKind(enum.Enum):
    OCCUPY = "OCCUPY"
    SYNC = "SYNC"
    EMERGENCY = "EMERGENCY"
    ANOMALY = "ANOMALY"
    APP = "APP"


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    src_agent: int | None
    src_node: int
    dest_node: int
    payload: tuple[int, ...] = ()
    path_trace: tuple[int, ...] = ()
    dest_agent: int | None = None
    flood_id: int | None = None
    sent_tick: int | None = None


# Actions emitted by gene handlers and applied by the scheduler.

@dataclass(frozen=True)
class SendMessage:
    kind: MessageKind
    dest_node: int
    payload: tuple[int, ...] = ()
    dest_agent: int | None = None
    flood: bool = False


@dataclass(frozen=True)
class SpawnChild:
    target: int
    genome: Genome


@dataclass(frozen=True)
class SpawnTwin:
    genome: Genome


@dataclass(frozen=True)
class PromoteSelf:
    pass


@dataclass(frozen=True)
class WriteBlackboard:
    key: Any
    value: tuple[int, ...]


@dataclass(frozen=True)
class DeviceCommand:
    command: int


@dataclass(frozen=True)
class MoveTo:
    target: int


@dataclass(frozen=True)
class Report:
    kind: str
    detail: str = ""


Action = SendMessage | SpawnChild | SpawnTwin | PromoteSelf | WriteBlackboard | DeviceCommand | MoveTo | Report


@dataclass
class Params:
    sync_interval: int = 5
    missed_sync_limit: int = 2
    band_low: float = 40.0
    band_high: float = 60.0
    monitor_mode: str = "random"


@dataclass
class NodeView:
    """What an agent can see of its host node during one tick."""

    index: int
    attrs: Mapping[str, str]
    neighbors: tuple[int, ...] = ()
    neighbor_attrs: Mapping[int, Mapping[str, str]] = field(default_factory=dict)
    residents: tuple[Agent, ...] = ()
    blackboard: Any = None
    device: Any = None
    names: Sequence[str] = ()

    def label(self, index: int) -> str:
        return self.names[index] if index < len(self.names) else f"#{index}"


class AgentFault(Exception):
    pass


class InvalidStrand(ValueError):
    pass


@dataclass(eq=False)
class Agent:
    id: int
    node: int
    genome: Genome
    codons: list[int]
    membrane: Membrane
    attrs: AttrDict
    lineage: int
    born_tick: int = 0
    parent_id: int | None = None
    parent_node: int | None = None
    sequenced: bool = False
    reprogrammed: bool = False
    twin_of: int | None = None
    twin_id: int | None = None
    alive: bool = True
    memory: dict = field(default_factory=dict)
    last_invoked: tuple[int, ...] = ()

    @property
    def age(self) -> int:
        return self.genome.main.age

    @property
    def type_code(self) -> int:
        return self.genome.main.type_code

    @property
    def is_primary(self) -> bool:
        return self.genome.main.twin_flag is TwinFlag.PRIMARY

    @property
    def mobile(self) -> bool:
        return self.type_code in MOBILE_TYPES

    def set_age(self, age: int) -> None:
        self.genome = self.genome.with_main(age=age)
        self.codons[AGE_INDEX] = age

    def set_twin_flag(self, flag: TwinFlag) -> None:
        self.genome = self.genome.with_main(twin_flag=flag)
        self.codons[TWIN_INDEX] = int(flag)

    def set_links(self, neighbors: Sequence[int] | None = None,
                  children: Sequence[int] | None = None) -> None:
        """Rewrite the dynamic link segments in place; static codons are untouched."""
        main = self.genome.main
        nl = tuple(main.neighbor_links if neighbors is None else neighbors)
        cl = tuple(main.child_links if children is None else children)
        if nl == main.neighbor_links and cl == main.child_links:
            return
        start, end = links_span(self.genome)
        self.codons[start:end] = encode_links(nl, cl)
        self.genome = self.genome.with_main(neighbor_links=nl, child_links=cl)


def role_of(genome: Genome) -> Role:
    return Role.PRIMARY if genome.main.twin_flag is TwinFlag.PRIMARY else Role.TWIN


def context_of(genome: Genome) -> Scope:
    """Walker types run in the outer context; everything else is a cluster member."""
    return Scope.OUTER if genome.main.type_code in MOBILE_TYPES else Scope.INNER


def bind_membrane(genome: Genome, attrs: Mapping[str, str], registry: GeneRegistry) -> Membrane:
    role = role_of(genome)
    loaded = load_membrane(genome, attrs, context_of(genome), registry)
    return Membrane(tuple(b for b in loaded.bound if role in b.handler.roles))


def sequence_child(parent: Genome, target: Mapping[str, str]) -> Genome:
    """Build a newborn's genome from the parent's reproductive strand.

    The child type comes from the first rule matching the target node; the
    gene template becomes the child's gene segment and the reproductive
    strand is copied unchanged.
    """
    child_type = first_match(parent.repro.child_type_rules, target)
    main = replace(parent.main, type_code=child_type, age=0, twin_flag=TwinFlag.PRIMARY,
                   genes=parent.repro.gene_template, neighbor_links=(), child_links=())
    return Genome(main, parent.repro)


class AgentIds:
    """Strictly increasing agent identifiers."""

    def __init__(self, start: int = 1):
        self.next_id = start

    def issue(self) -> int:
        i = self.next_id
        self.next_id += 1
        return i


def birth(genome: Genome, attrs: Mapping[str, str], registry: GeneRegistry, *,
          ids: AgentIds, node: int = 0, dictionary: AttrDict | None = None,
          tick: int = 0, lineage: int | None = None, **extra) -> Agent:
    """Create an agent with an empty core and load its membrane.

    Raises UnresolvedGene if an active gene has no handler.
    """
    diags = validate(genome)
    if diags:
        raise InvalidStrand("; ".join(map(str, diags)))
    genome = genome.with_main(age=0)
    membrane = bind_membrane(genome, attrs, registry)
    dictionary = dictionary if dictionary is not None else AttrDict.from_genome(genome)
    agent_id = ids.issue()
    return Agent(
        id=agent_id,
        node=node,
        genome=genome,
        codons=encode(genome, dictionary),
        membrane=membrane,
        attrs=dictionary,
        lineage=agent_id if lineage is None else lineage,
        born_tick=tick,
        **extra,
    )


@dataclass
class GeneContext:
    agent: Agent
    gene: Any
    node: NodeView
    inbox: Sequence[Message]
    rng: random.Random
    tick: int
    params: Params

    @property
    def state(self) -> dict:
        return self.agent.memory.setdefault(self.gene.gene_code, {})


def step(agent: Agent, node: NodeView, inbox: Sequence[Message], rng: random.Random,
         tick: int = 0, params: Params | None = None) -> list[Action]:
    """Run every membrane handler once, in order, and age the agent.

    A handler exception fails the agent: its actions for the tick are
    dropped and a single ``fault`` report is returned instead.
    """
    if not agent.alive:
        raise AgentFault(f"agent {agent.id} is not alive")
    params = params or Params()
    actions: list[Action] = []
    invoked = []
    for bound in agent.membrane.bound:
        invoked.append(bound.spec.gene_code)
        ctx = GeneContext(agent, bound.spec, node, inbox, rng, tick, params)
        try:
            actions.extend(bound.handler(ctx))
        except Exception as exc:
            agent.alive = False
            agent.last_invoked = tuple(invoked)
            agent.set_age(agent.age + len(invoked))
            return [Report("fault", f"gene {bound.spec.gene_code}: {exc}")]
    agent.last_invoked = tuple(invoked)
    if invoked:
        agent.set_age(agent.age + len(invoked))
    return actions


def reproduce_step(agent: Agent, node: NodeView, occupied: set[int] | frozenset[int]) -> list[SpawnChild]:
    if not agent.is_primary:
        return []
    return [SpawnChild(n, sequence_child(agent.genome, node.neighbor_attrs.get(n, {})))
            for n in node.neighbors if n not in occupied]


def twin_genome(genome: Genome) -> Genome:
    return genome.with_main(age=0, twin_flag=TwinFlag.TWIN)


def twin_sync(agent: Agent, tick: int, params: Params) -> list[SendMessage]:
    if not agent.is_primary or agent.twin_id is None or tick % params.sync_interval:
        return []
    return [SendMessage(MessageKind.SYNC, agent.node, tuple(agent.codons), dest_agent=agent.twin_id)]


def adopted_genome(agent: Agent) -> Genome:
    """Genome a twin takes over on promotion: the leader's last synced strands,
    its own age, primary flag. Falls back to its own copy if the synced DNA
    does not decode."""
    own = agent.genome
    leader_codons = agent.memory.get(TWIN_WATCH_GENE, {}).get("leader")
    base = own
    if leader_codons:
        try:
            base = decode(leader_codons, agent.attrs)
        except DecodeError:
            base = own
    return Genome(replace(base.main, age=own.main.age, twin_flag=TwinFlag.PRIMARY), base.repro)


def twin_watch(agent: Agent, inbox: Sequence[Message], tick: int, params: Params) -> list[Action]:
    """Count missed SYNC windows; promote after ``missed_sync_limit`` of them.

    SYNC is sent on ticks that are multiples of ``sync_interval`` and lands one
    tick later. An empty SYNC payload is a death notice from a failing leader
    and promotes immediately.
    """
    if agent.is_primary or agent.twin_of is None:
        return []
    st = agent.memory.setdefault(TWIN_WATCH_GENE, {})
    st.setdefault("missed", 0)
    got_sync = False
    notice = False
    for m in inbox:
        if m.kind is MessageKind.SYNC and m.src_agent == agent.twin_of:
            if m.payload:
                st["leader"] = list(m.payload)
                got_sync = True
            else:
                notice = True
    k = params.sync_interval
    if got_sync:
        st["missed"] = 0
    elif tick % k == 1 % k and tick - 1 > agent.born_tick:
        st["missed"] += 1
    if not notice and st["missed"] < params.missed_sync_limit:
        return []
    new = adopted_genome(agent)
    why = "death-notice" if notice else f"missed={st['missed']}"
    return [
        PromoteSelf(),
        SpawnTwin(twin_genome(new)),
        SendMessage(MessageKind.EMERGENCY, agent.node, (1, agent.twin_of), flood=True),
        Report("failover", f"leader={agent.twin_of} {why}"),
    ]


def promote(agent: Agent, attrs: Mapping[str, str], registry: GeneRegistry) -> None:
    """Flip a twin to primary and rebind its membrane for the primary role."""
    new = adopted_genome(agent)
    if new.repro != agent.genome.repro:
        agent.reprogrammed = True
    agent.genome = new
    agent.codons = encode(new, agent.attrs)
    agent.membrane = bind_membrane(new, attrs, registry)
    agent.twin_of = None
    agent.memory.pop(TWIN_WATCH_GENE, None)


def reprogram_children(agent: Agent, new_repro: ReproStrand) -> None:
    """Replace the agent's reproductive strand; later children use it.

    Raises:
        InvalidStrand: the strand fails validation; the genome is unchanged.
    """
    candidate = Genome(agent.genome.main, new_repro)
    diags = [d for d in validate(candidate) if d.where.startswith("repro")]
    if diags:
        raise InvalidStrand("; ".join(map(str, diags)))
    fresh = encode(candidate, agent.attrs)
    _, end = links_span(candidate)
    # keep the stored head as is so earlier corruption stays detectable
    agent.codons = agent.codons[:end] + fresh[end:]
    agent.genome = candidate
    agent.reprogrammed = True
