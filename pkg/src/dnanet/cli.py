"""Command-line driver. Exit codes: 0 ok, 1 validation, 2 runtime fault, 3 I/O."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import codec
from .netsim import Metrics, ScenarioError, Simulation, SimulationError, load_scenario, trace_text

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_IO = 3


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise _Exit(EXIT_IO, f"cannot read {path}: {exc}") from None


def _parse_checked(path: str) -> codec.Genome:
    try:
        genome = codec.parse_text(_read_text(path))
    except codec.DnaError as exc:
        raise _Exit(EXIT_VALIDATION, f"{path}: {exc}") from None
    diags = codec.validate(genome)
    if diags:
        raise _Exit(EXIT_VALIDATION, "\n".join(f"{path}: {d}" for d in diags))
    return genome


def _scenario_dict(path: str | None) -> codec.AttrDict | None:
    if path is None:
        return None
    try:
        return load_scenario(path).topology.dictionary
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot read {path}: {exc}") from None
    except ScenarioError as exc:
        raise _Exit(EXIT_VALIDATION, f"{path}: {exc}") from None


def cmd_compile(args) -> int:
    genome = _parse_checked(args.input)
    attrs = _scenario_dict(args.dict)
    try:
        codons = codec.encode(genome, attrs)
    except codec.UnknownAttribute as exc:
        raise _Exit(EXIT_VALIDATION, f"{args.input}: {exc}") from None
    try:
        Path(args.output).write_bytes(codec.to_bytes(codons))
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot write {args.output}: {exc}") from None
    cs = codons[-1]
    print(f"genes={len(genome.main.genes)} checksum=0x{cs:08x}")
    return EXIT_OK


def cmd_validate(args) -> int:
    genome = _parse_checked(args.input)
    print(f"ok: type={genome.main.type_code} genes={len(genome.main.genes)}")
    return EXIT_OK


def cmd_decompile(args) -> int:
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot read {args.input}: {exc}") from None
    attrs = _scenario_dict(args.dict)
    try:
        genome = codec.decode(codec.from_bytes(data), attrs)
    except codec.DnaError as exc:
        raise _Exit(EXIT_VALIDATION, f"{args.input}: {exc}") from None
    sys.stdout.write(codec.format_text(genome))
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot read scenario input: {exc}") from None
    except ScenarioError as exc:
        raise _Exit(EXIT_VALIDATION, f"{args.scenario}: {exc}") from None
    if args.seed is not None:
        scenario = replace(scenario, rng_seed=args.seed)
    if args.ticks is not None:
        scenario = replace(scenario, run_length=args.ticks)
    try:
        sim = Simulation(scenario)
        sim.preflight()
        metrics = sim.run()
    except ScenarioError as exc:
        raise _Exit(EXIT_VALIDATION, str(exc)) from None
    except SimulationError as exc:
        raise _Exit(EXIT_RUNTIME, f"runtime fault: {exc}") from None
    try:
        if args.trace:
            Path(args.trace).write_text(trace_text(sim.trace))
        if args.metrics:
            Path(args.metrics).write_text(metrics.to_json())
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot write output: {exc}") from None
    full = "never" if metrics.full_coverage_tick is None else str(metrics.full_coverage_tick)
    print(f"full-coverage-tick={full} anomalies={metrics.anomalies} "
          f"failovers={len(metrics.failovers)} messages={sum(metrics.messages.values())}")
    return EXIT_OK


def render_report(m: Metrics) -> str:
    out = ["tick  coverage"]
    out += [f"{t:>4}  {c:.3f}" for t, c in enumerate(m.coverage)]
    out.append("")
    out.append("kind       count")
    out += [f"{k:<9}  {v}" for k, v in sorted(m.messages.items())]
    out.append("")
    if m.failovers:
        out.append("failovers:")
        for f in m.failovers:
            out.append(f"  lineage {f['lineage']}: crash {f['crash_tick']} -> promote "
                       f"{f['promote_tick']} (latency {f['latency']})")
    else:
        out.append("failovers: none")
    out.append("")
    out.append("age  agents")
    out += [f"{age:>3}  {n}" for age, n in sorted(m.age_histogram.items())]
    return "\n".join(out) + "\n"


def cmd_report(args) -> int:
    text = _read_text(args.metrics)
    try:
        metrics = Metrics.from_json(text)
    except (ValueError, TypeError, AttributeError) as exc:
        raise _Exit(EXIT_IO, f"malformed metrics {args.metrics}: {exc}") from None
    sys.stdout.write(render_report(metrics))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dnanet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="compile a .dna text genome to binary")
    c.add_argument("input")
    c.add_argument("-o", "--output", required=True)
    c.add_argument("--dict", metavar="SCENARIO", help="use the scenario's attribute dictionary")
    c.set_defaults(fn=cmd_compile)

    v = sub.add_parser("validate", help="parse and validate a .dna text genome")
    v.add_argument("input")
    v.set_defaults(fn=cmd_validate)

    d = sub.add_parser("decompile", help="print a binary genome as canonical text")
    d.add_argument("input")
    d.add_argument("--dict", metavar="SCENARIO", help="resolve attribute codes via the scenario")
    d.set_defaults(fn=cmd_decompile)

    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("scenario")
    r.add_argument("--trace")
    r.add_argument("--metrics")
    r.add_argument("--seed", type=int)
    r.add_argument("--ticks", type=int)
    r.set_defaults(fn=cmd_run)

    rep = sub.add_parser("report", help="render a metrics file as tables")
    rep.add_argument("metrics")
    rep.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _Exit as exc:
        print(f"dnanet: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
