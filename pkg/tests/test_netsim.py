import random
from dataclasses import replace

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnanet.codec import encode, parse_text, to_bytes
from dnanet.genes import STANDARD_HANDLERS
from dnanet.netsim import (
    Metrics,
    Scenario,
    ScenarioError,
    Simulation,
    SimulationError,
    Topology,
    build_topology,
    coverage,
    load_scenario,
    parse_scenario,
    run,
    trace_hash,
    trace_text,
)
from dnanet.registry import GeneRegistry
from dnanet.store import MemoryStore, open_local

from helpers import (
    SCENARIOS,
    bfs_eccentricity,
    random_connected_topology,
    scenario_from,
    spread_scenario,
    trace_records,
)


# --- topology ---------------------------------------------------------------

def test_grid_counts():
    t = build_topology("NET\nGRID 3 3\n")
    assert (t.n_nodes, t.n_edges) == (9, 12)


def test_cycle_counts():
    t = build_topology("NET\nCYCLE 5\n")
    assert (t.n_nodes, t.n_edges) == (5, 5)


def test_star_hub_is_first_node():
    t = build_topology("NET\nSTAR 6\n")
    assert (t.n_nodes, t.n_edges) == (6, 5)
    assert t.adj[0] == set(range(1, 6))


def test_node_attributes_and_edges():
    t = build_topology("NET\nNODE a role=relay zone=1\nNODE b\nEDGE a b\n")
    assert t.attrs[0] == {"role": "relay", "zone": "1"}
    assert t.edges() == [(0, 1)]
    assert "relay" in t.dictionary


@pytest.mark.parametrize("text,line,needle", [
    ("NET\nNODE a\nEDGE a b\n", 3, "unknown node"),
    ("NET\nNODE a\nNODE a\n", 3, "duplicate NODE"),
    ("NET\nNODE a\nEDGE a a\n", 3, "self-loop"),
    ("NET\nGRID 3\n", 2, "GRID"),
    ("NET\nNODE a x\n", 2, "k=v"),
])
def test_topology_errors_carry_line(text, line, needle):
    with pytest.raises(ScenarioError, match=needle) as exc:
        build_topology(text)
    assert exc.value.line == line


@pytest.mark.parametrize("text,needle", [
    ("NODE a\nRUN 1\n", "start with NET"),
    ("NET\nNODE a\n", "missing RUN"),
    ("NET\nNODE a\nRUN 5\nRUN 6\n", "duplicate RUN"),
    ("NET\nNODE a\nBLAH\nRUN 1\n", "unknown keyword"),
    ("NET\nNODE a\nSEED b spread.dna\nRUN 1\n", "unknown node"),
    ("NET\nNODE a\nEVENT 9 crash a\nRUN 5\n", "after the run length"),
    ("NET\nNODE a\nEVENT 1 explode a\nRUN 5\n", "malformed"),
    ("NET\nNODE a\nEVENT 1 crash zz\nRUN 5\n", "unknown node"),
    ("NET\nNODE a\nPARAM speed 3\nRUN 5\n", "PARAM"),
    ("NET\nNODE a\nPARAM monitor_mode spiral\nRUN 5\n", "monitor_mode"),
    ("NET\nNODE a\nRUN 5 seed=-1\n", "seed"),
    ("NET\nNODE a\nDEVICE a solar\nRUN 5\n", "DEVICE"),
])
def test_scenario_errors(text, needle):
    with pytest.raises(ScenarioError, match=needle):
        scenario_from(text)


def test_missing_genome_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        parse_scenario("NET\nNODE a\nSEED a nope.dna\nRUN 1\n", tmp_path)


def test_malformed_genome_is_scenario_error(tmp_path):
    (tmp_path / "bad.dna").write_text("DNA 1\nMAIN\n")
    with pytest.raises(ScenarioError):
        parse_scenario("NET\nNODE a\nSEED a bad.dna\nRUN 1\n", tmp_path)


def test_compiled_genome_seed(tmp_path):
    g = parse_text((SCENARIOS / "spread.dna").read_text())
    (tmp_path / "s.dnab").write_bytes(to_bytes(encode(g)))
    sc = parse_scenario("NET\nGRID 2 2\nSEED n1 s.dnab\nRUN 3\n", tmp_path)
    assert sc.seeds[0][1] == g
    assert run(sc)[0].full_coverage_tick == 2


# --- coverage ---------------------------------------------------------------

def test_single_node_no_genes_full_at_tick_zero(tmp_path):
    (tmp_path / "idle.dna").write_text("DNA 1\nMAIN\nHEADER type=1 protocol=1\nREPRO\nCHILD default -> 1\nEND\n")
    m, _ = run(parse_scenario("NET\nNODE a\nSEED a idle.dna\nRUN 3\n", tmp_path))
    assert coverage(m, 0) == 1.0
    assert m.full_coverage_tick == 0


def test_path_coverage_series():
    m, _ = run(scenario_from("NET\nNODE a\nNODE b\nNODE c\nEDGE a b\nEDGE b c\nSEED a spread.dna\nRUN 4\n"))
    assert [round(coverage(m, t) * 3) for t in range(3)] == [1, 2, 3]
    assert m.full_coverage_tick == 2


def test_single_seed_initial_coverage():
    m, _ = run(scenario_from("NET\nGRID 4 4\nSEED n6 spread.dna\nRUN 8\n"))
    assert coverage(m, 0) == pytest.approx(1 / 16)
    assert coverage(m, 8) == 1.0


def test_coverage_tick_out_of_range():
    with pytest.raises(ValueError):
        coverage(Metrics(coverage=[0.5]), 3)


def test_disconnected_coverage_limited_to_component():
    text = "NET\nCYCLE 6\nNODE x\nNODE y\nNODE z\nEDGE x y\nSEED n1 spread.dna\nRUN 20\n"
    m, _ = run(scenario_from(text))
    assert max(m.coverage) == pytest.approx(6 / 9)
    assert m.full_coverage_tick is None


# --- dynamics ---------------------------------------------------------------

def test_fully_occupied_neighbourhood_no_spawns():
    text = "NET\nNODE a\nNODE b\nEDGE a b\nSEED a spread.dna\nSEED b spread.dna\nRUN 5\n"
    sim = Simulation(scenario_from(text))
    sim.run()
    assert sim.metrics.born == 2


def test_two_parents_one_target_lowest_id_wins():
    text = "NET\nNODE a\nNODE b\nNODE c\nEDGE a c\nEDGE b c\nSEED b spread.dna\nSEED a spread.dna\nRUN 1\n"
    sim = Simulation(scenario_from(text))
    sim.run()
    born = [r for r in trace_records(sim.trace, "born") if "parent=" in r.detail]
    rejected = trace_records(sim.trace, "spawn-rejected")
    assert len(born) == 1 and "parent=1" in born[0].detail
    assert [r.agent for r in rejected] == [2]


def test_crash_without_agent_is_noop():
    _, trace = run(scenario_from("NET\nGRID 3 1\nSEED n1 spread.dna\nEVENT 1 crash n3\nRUN 3\n"))
    assert len(trace_records(trace, "event-noop")) == 1


def test_crash_of_lone_primary_removes_coverage():
    m, trace = run(scenario_from("NET\nGRID 3 1\nSEED n1 spread.dna\nEVENT 4 crash n3\nRUN 4\n"))
    assert coverage(m, 3) == 1.0 and coverage(m, 4) == pytest.approx(2 / 3)
    assert m.dead == 1


def test_link_edits_apply_next_tick():
    text = "NET\nNODE a\nNODE b\nSEED a spread.dna\nEVENT 2 linkup a b\nRUN 4\n"
    m, _ = run(scenario_from(text))
    assert m.full_coverage_tick == 3


def test_linkdown_partitions_spread():
    text = "NET\nGRID 4 1\nSEED n1 spread.dna\nEVENT 0 linkdown n2 n3\nRUN 6\n"
    m, _ = run(scenario_from(text))
    assert max(m.coverage) == 0.5


def test_failover_scenario_records_latency():
    m, trace = run(load_scenario(SCENARIOS / "failover.scn"))
    assert len(m.failovers) == 1
    fo = m.failovers[0]
    assert fo["latency"] == fo["promote_tick"] - fo["crash_tick"] <= 11
    assert trace_records(trace, "failover")
    assert m.lineage_violations == 0


def test_reprogram_scenario_changes_new_children_only():
    sim = Simulation(load_scenario(SCENARIOS / "reprogram.scn"))
    sim.run()
    types = {a.id: a.type_code for a in sim.agents.values()}
    assert types == {1: 1, 2: 1, 3: 3}


def test_preflight_rejects_unknown_gene(tmp_path):
    (tmp_path / "g.dna").write_text(
        "DNA 1\nMAIN\nHEADER type=1 protocol=1\nGENE 101\nREPRO\nCHILD default -> 1\nGENE 999\nEND\n")
    sc = parse_scenario("NET\nNODE a\nSEED a g.dna\nRUN 2\n", tmp_path)
    with pytest.raises(ScenarioError, match="missing 999"):
        Simulation(sc).run()


def test_dead_agents_do_not_act():
    seen_dead: dict[int, int] = {}
    sim = Simulation(load_scenario(SCENARIOS / "failover.scn"),
                     observers=[lambda s: seen_dead.update({a.id: s.tick for a in s.agents.values()
                                                            if not a.alive and a.id not in seen_dead})])
    sim.run()
    for r in trace_records(sim.trace, "step"):
        if r.agent in seen_dead:
            assert r.tick <= seen_dead[r.agent]


def test_metrics_json_round_trip():
    m, _ = run(load_scenario(SCENARIOS / "grid.scn"))
    assert Metrics.from_json(m.to_json()) == m
    assert sum(m.age_histogram.values()) == m.born


@pytest.mark.parametrize("doc", ["[]", '{"bogus": 1}', '{"coverage": "x"}'])
def test_metrics_from_json_rejects_malformed(doc):
    with pytest.raises(ValueError):
        Metrics.from_json(doc)


def test_trace_format():
    _, trace = run(load_scenario(SCENARIOS / "grid.scn"))
    for line in trace_text(trace).splitlines():
        tick, agent, kind, detail = line.split("\t")
        assert tick.isdigit() and (agent.isdigit() or agent == "-") and kind


def test_seed_override_changes_walk_but_not_coverage(tmp_path):
    base = load_scenario(SCENARIOS / "monitor.scn")
    clean = replace(base, events=[], run_length=200)
    m1, t1 = run(clean)
    m2, t2 = run(replace(clean, rng_seed=7))
    assert trace_hash(t1) != trace_hash(t2)
    assert m1.coverage == m2.coverage and m1.full_coverage_tick == m2.full_coverage_tick


def _handlerless_sim():
    g = parse_text((SCENARIOS / "spread.dna").read_text())
    sc = Scenario(build_topology("NET\nNODE a\nNODE b\nEDGE a b\n"), [("a", g)], [], 3, 0)
    # the store lists 101 but the registry has no handler for it
    reg = GeneRegistry.from_entries([open_local().get(102)], STANDARD_HANDLERS)
    return Simulation(sc, reg, store=MemoryStore(open_local().list())), g


def test_preflight_requires_handlers():
    sim, _ = _handlerless_sim()
    with pytest.raises(ScenarioError, match="no handler"):
        sim.run()


def test_birth_failure_is_simulation_error():
    sim, g = _handlerless_sim()
    with pytest.raises(SimulationError):
        sim._birth(g, 0)


# --- invariants ----------------------------------------------------------------

class Audited(Simulation):
    """Checks message causality on every delivery."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.adjacency = {}
        self.observers.append(lambda s: s.adjacency.__setitem__(s.tick, [set(x) for x in s.topo.adj]))
        self.violations = []

    def _deliver(self):
        for m in self._queue:
            if m.src_agent is None and m.sent_tick == self.tick and m.src_node == m.dest_node:
                continue  # external injection lands where it is injected
            if m.sent_tick != self.tick - 1:
                self.violations.append(("tick", m))
            elif m.src_node != m.dest_node and m.dest_node not in self.adjacency[m.sent_tick][m.src_node]:
                self.violations.append(("edge", m))
        return super()._deliver()


@pytest.mark.parametrize("name", sorted(p.name for p in SCENARIOS.glob("*.scn")))
def test_message_causality(name):
    sim = Audited(load_scenario(SCENARIOS / name))
    sim.run()
    assert sim.violations == []


def test_message_causality_with_link_churn():
    text = ("NET\nGRID 4 4\nSEED n1 failover.dna\nSEED n16 emergency.dna\nEVENT 3 linkdown n1 n2\n"
            "EVENT 4 emergency n1 5\nEVENT 6 linkup n1 n2\nEVENT 8 linkdown n6 n7\nRUN 30 seed=1\n")
    sim = Audited(scenario_from(text))
    sim.run()
    assert sim.violations == []


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 60), st.integers(0, 2**32), st.sampled_from([0.0, 0.02, 0.1]))
def test_pervasion_matches_bfs(n, seed, extra):
    rng = random.Random(seed)
    topo = random_connected_topology(rng, n, extra)
    src = rng.randrange(n)
    ecc = bfs_eccentricity(topo, src)
    m, _ = run(spread_scenario(topo, src, ecc + 1))
    assert m.full_coverage_tick == ecc


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32))
def test_disconnected_coverage_matches_component(n, seed):
    rng = random.Random(seed)
    topo = Topology()
    for i in range(n):
        topo.add_node(f"v{i}")
    for _ in range(n):
        a, b = rng.randrange(n), rng.randrange(n)
        if a != b:
            topo.add_edge(a, b)
    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from(topo.edges())
    src = rng.randrange(n)
    comp = nx.node_connected_component(g, src)
    m, _ = run(spread_scenario(topo, src, n + 1))
    assert max(m.coverage) == pytest.approx(len(comp) / n)
    assert m.coverage[-1] == pytest.approx(len(comp) / n)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.lists(st.tuples(st.integers(1, 40), st.integers(1, 16)), max_size=6))
def test_conservation_and_determinism(seed, crashes):
    events = "".join(f"EVENT {t} crash n{node}\n" for t, node in crashes)
    text = f"NET\nGRID 4 4\nSEED n1 failover.dna\n{events}RUN 45 seed={seed % 2**32}\n"
    checks = []
    sim = Simulation(scenario_from(text), observers=[lambda s: checks.append(
        s.metrics.born == len(s.agents) == s.metrics.alive + s.metrics.dead)])
    sim.run()
    assert all(checks)
    assert sim.metrics.lineage_violations == 0
    assert trace_hash(sim.trace) == trace_hash(run(scenario_from(text))[1])
