"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import random
from pathlib import Path

import networkx as nx

from dnanet.codec import ChildRule, GeneSpec, Genome, MainStrand, ReproStrand, Scope, TwinFlag, parse_text
from dnanet.netsim import Scenario, Topology, parse_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

SPREAD_DNA = (SCENARIOS / "spread.dna").read_text()


def scenario_from(text: str, base_dir: Path = SCENARIOS) -> Scenario:
    return parse_scenario(text, base_dir)


def random_connected_topology(rng: random.Random, n: int, extra: float = 0.05) -> Topology:
    """Random spanning tree plus a sprinkle of extra edges."""
    topo = Topology()
    for i in range(n):
        topo.add_node(f"v{i}")
    for i in range(1, n):
        topo.add_edge(i, rng.randrange(i))
    for _ in range(int(extra * n * n / 2)):
        a, b = rng.randrange(n), rng.randrange(n)
        if a != b:
            topo.add_edge(a, b)
    return topo


def spread_scenario(topo: Topology, seed_node: int, ticks: int, rng_seed: int = 0) -> Scenario:
    return Scenario(topo, [(topo.names[seed_node], parse_text(SPREAD_DNA))], [], ticks, rng_seed)


def bfs_eccentricity(topo: Topology, source: int) -> int:
    """Oracle: networkx, sharing no code with the simulator."""
    g = nx.Graph()
    g.add_nodes_from(range(topo.n_nodes))
    g.add_edges_from(topo.edges())
    return nx.eccentricity(g, v=source)


KEYS = ["role", "zone", "device", "tier"]
VALUES = ["a", "b", "c", "battery", "edge"]


def random_conditions(rng: random.Random, max_len: int = 3) -> tuple[tuple[str, str], ...]:
    keys = rng.sample(KEYS, rng.randint(0, max_len))
    return tuple((k, rng.choice(VALUES)) for k in keys)


def random_gene(rng: random.Random) -> GeneSpec:
    return GeneSpec(rng.randint(1, 2**32 - 1) if rng.random() < 0.2 else rng.randint(101, 108),
                    rng.choice(list(Scope)), random_conditions(rng))


def random_genome(rng: random.Random, max_genes: int = 6) -> Genome:
    rules = [ChildRule(random_conditions(rng) or (("role", "a"),), rng.randint(1, 50))
             for _ in range(rng.randint(0, 3))]
    rules.append(ChildRule((), rng.randint(1, 50)))
    main = MainStrand(
        protocol_code=rng.randint(0, 2**32 - 1),
        type_code=rng.randint(1, 2**32 - 1),
        age=rng.randint(0, 2**32 - 1),
        twin_flag=rng.choice(list(TwinFlag)),
        genes=tuple(random_gene(rng) for _ in range(rng.randint(0, max_genes))),
        neighbor_links=tuple(rng.randint(1, 500) for _ in range(rng.randint(0, 3))),
        child_links=tuple(rng.randint(1, 500) for _ in range(rng.randint(0, 3))),
    )
    repro = ReproStrand(tuple(rules), tuple(random_gene(rng) for _ in range(rng.randint(0, max_genes))))
    return Genome(main, repro)


def trace_records(trace, kind: str):
    return [r for r in trace if r.kind == kind]


def detail_fields(detail: str) -> dict[str, str]:
    return dict(tok.split("=", 1) for tok in detail.split() if "=" in tok)
