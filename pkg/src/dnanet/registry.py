"""Gene registry mapping gene codes to duty handlers, plus membrane loading."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterable, Mapping

from .codec import GeneSpec, Genome, Scope

if TYPE_CHECKING:
    from .store import StoreBackend


class Role(enum.Enum):
    PRIMARY = "primary"
    TWIN = "twin"


class RegistryError(Exception):
    pass


class DuplicateGene(RegistryError):
    pass


class UnresolvedGene(RegistryError):
    def __init__(self, code: int):
        self.code = code
        super().__init__(f"gene {code} is not in the registry")


class ManifestError(RegistryError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    code: int
    name: str
    version: int = 1
    pack: str = "standard"


@dataclass(frozen=True)
class GeneHandler:
    """Executable duty bound to a gene code.

    ``fn`` receives a gene context and returns the list of actions the gene
    emits this tick. ``roles`` says which twin roles bind the handler.
    """

    code: int
    fn: Callable
    roles: frozenset[Role] = frozenset({Role.PRIMARY})

    def __call__(self, ctx):
        return self.fn(ctx)


@dataclass(frozen=True)
class BoundGene:
    spec: GeneSpec
    handler: GeneHandler


@dataclass(frozen=True)
class Membrane:
    bound: tuple[BoundGene, ...] = ()

    def __len__(self) -> int:
        return len(self.bound)

    @property
    def codes(self) -> tuple[int, ...]:
        return tuple(b.spec.gene_code for b in self.bound)


def parse_manifest(text: str, source: str = "<manifest>") -> list[ManifestEntry]:
    """Parse ``GENEPACK <name> <version>`` / ``GENE <code> <name>`` lines."""
    entries: list[ManifestEntry] = []
    seen: set[int] = set()
    pack = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        where = f"{source}:{lineno}"
        if tokens[0] == "GENEPACK":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise ManifestError(f"{where}: expected 'GENEPACK <name> <version>'")
            pack = (tokens[1], int(tokens[2]))
        elif tokens[0] == "GENE":
            if pack is None:
                raise ManifestError(f"{where}: GENE before any GENEPACK")
            if len(tokens) != 3 or not tokens[1].isdigit() or int(tokens[1]) == 0:
                raise ManifestError(f"{where}: expected 'GENE <code> <name>'")
            code = int(tokens[1])
            if code in seen:
                raise DuplicateGene(f"{where}: gene {code} listed twice")
            seen.add(code)
            entries.append(ManifestEntry(code, tokens[2], pack[1], pack[0]))
        else:
            raise ManifestError(f"{where}: unknown keyword {tokens[0]!r}")
    return entries


@dataclass
class GeneRegistry:
    _entries: dict[int, ManifestEntry] = field(default_factory=dict)
    _handlers: dict[int, GeneHandler] = field(default_factory=dict)

    def register(self, entry: ManifestEntry, handler: GeneHandler) -> GeneRegistry:
        if entry.code in self._entries:
            raise DuplicateGene(f"gene {entry.code} is already registered")
        if handler.code != entry.code:
            raise RegistryError(f"handler for {handler.code} registered under {entry.code}")
        self._entries[entry.code] = entry
        self._handlers[entry.code] = handler
        return self

    def resolve(self, code: int) -> GeneHandler:
        try:
            return self._handlers[code]
        except KeyError:
            raise UnresolvedGene(code) from None

    def entry(self, code: int) -> ManifestEntry:
        try:
            return self._entries[code]
        except KeyError:
            raise UnresolvedGene(code) from None

    def codes(self) -> frozenset[int]:
        return frozenset(self._entries)

    def __contains__(self, code: object) -> bool:
        return code in self._entries

    @classmethod
    def from_entries(cls, entries: Iterable[ManifestEntry],
                     handlers: Mapping[int, GeneHandler]) -> GeneRegistry:
        reg = cls()
        for e in entries:
            if e.code not in handlers:
                raise UnresolvedGene(e.code)
            reg.register(e, handlers[e.code])
        return reg

    @classmethod
    def from_manifest(cls, path: str | Path, handlers: Mapping[int, GeneHandler]) -> GeneRegistry:
        path = Path(path)
        return cls.from_entries(parse_manifest(path.read_text(), str(path)), handlers)

    @classmethod
    def from_store(cls, store: StoreBackend, handlers: Mapping[int, GeneHandler]) -> GeneRegistry:
        return cls.from_entries(store.list(), handlers)


def gene_active(gene: GeneSpec, attrs: Mapping[str, str], context: Scope) -> bool:
    if gene.scope is not Scope.ANY and gene.scope is not context:
        return False
    return all(attrs.get(k) == v for k, v in gene.conditions)


def active_genes(genome: Genome, attrs: Mapping[str, str], context: Scope) -> list[GeneSpec]:
    """Genes of the main strand that are active at a node, in strand order.

    A gene is active when its scope is ``any`` or equals ``context`` and
    every one of its conditions matches the node attributes exactly.
    """
    if context is Scope.ANY:
        raise ValueError("context must be inner or outer")
    return [g for g in genome.main.genes if gene_active(g, attrs, context)]


def load_membrane(genome: Genome, attrs: Mapping[str, str], context: Scope,
                  registry: GeneRegistry) -> Membrane:
    """Bind the handlers of every active gene. Raises UnresolvedGene."""
    return Membrane(tuple(BoundGene(g, registry.resolve(g.gene_code))
                          for g in active_genes(genome, attrs, context)))


def reachable_codes(genome: Genome) -> set[int]:
    """Every gene code a genome or any of its descendants can activate."""
    return {g.gene_code for g in (*genome.main.genes, *genome.repro.gene_template)}
