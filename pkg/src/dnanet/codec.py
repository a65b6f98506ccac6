"""Genome data model with its text form and checksummed codon wire format.

A genome is two strands of integer codons. The main strand carries the
header (protocol, type, age, twin flag), the gene segment and the dynamic
link segments; the reproductive strand carries the child-type rules and the
gene template copied into children.
"""

from __future__ import annotations

import enum
import re
import struct
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Mapping, Sequence

MAGIC = 7001
VERSION = 1

TAG_MAIN = 100
TAG_HEADER = 10
TAG_GENES = 20
TAG_NEIGHBORS = 30
TAG_CHILDREN = 31
TAG_REPRO = 200
TAG_RULES = 40

# Fixed header offsets in the wire form.
AGE_INDEX = 6
TWIN_INDEX = 7

CODON_MAX = 0xFFFFFFFF

FNV_OFFSET = 2166136261
FNV_PRIME = 16777619


class TwinFlag(enum.IntEnum):
    PRIMARY = 0
    TWIN = 1


class Scope(enum.IntEnum):
    INNER = 0
    OUTER = 1
    ANY = 2


Condition = tuple[str, str]


@dataclass(frozen=True)
class GeneSpec:
    gene_code: int
    scope: Scope = Scope.ANY
    conditions: tuple[Condition, ...] = ()


@dataclass(frozen=True)
class ChildRule:
    conditions: tuple[Condition, ...]
    child_type: int

    @property
    def is_default(self) -> bool:
        return not self.conditions


@dataclass(frozen=True)
class MainStrand:
    protocol_code: int
    type_code: int
    age: int = 0
    twin_flag: TwinFlag = TwinFlag.PRIMARY
    genes: tuple[GeneSpec, ...] = ()
    neighbor_links: tuple[int, ...] = ()
    child_links: tuple[int, ...] = ()


@dataclass(frozen=True)
class ReproStrand:
    child_type_rules: tuple[ChildRule, ...]
    gene_template: tuple[GeneSpec, ...] = ()


@dataclass(frozen=True)
class Genome:
    main: MainStrand
    repro: ReproStrand

    @property
    def type_code(self) -> int:
        return self.main.type_code

    @property
    def age(self) -> int:
        return self.main.age

    def with_main(self, **changes) -> Genome:
        return replace(self, main=replace(self.main, **changes))


class DnaError(Exception):
    """Base class for codec failures."""


class DnaSyntaxError(DnaError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class DecodeError(DnaError):
    """Wire-form decoding failure. ``kind`` is a stable short name."""

    def __init__(self, kind: str, message: str, index: int | None = None):
        self.kind = kind
        self.index = index
        super().__init__(f"{kind}: {message}")


class UnknownAttribute(DnaError):
    pass


@dataclass(frozen=True)
class Diagnostic:
    code: str
    where: str
    message: str

    def __str__(self) -> str:
        return f"{self.code} at {self.where}: {self.message}"


# ---------------------------------------------------------------------------
# Attribute dictionary


_LITERAL = re.compile(r"^@(\d+)$")


class AttrDict:
    """Bijective string <-> code table for attribute keys and values.

    Keys and values share one code space. Codes start at 1. A string of the
    form ``@<n>`` is a literal code and always maps to ``n``; decoding with
    no dictionary renders codes that way.
    """

    def __init__(self, strings: Iterable[str] = ()):
        self._codes: dict[str, int] = {}
        self._strings: dict[int, str] = {}
        for s in strings:
            self.intern(s)

    def intern(self, s: str) -> int:
        if s in self._codes:
            return self._codes[s]
        m = _LITERAL.match(s)
        if m:
            code = int(m.group(1))
            if code in self._strings:
                raise UnknownAttribute(f"literal {s!r} collides with {self._strings[code]!r}")
        else:
            code = len(self._strings) + 1
            while code in self._strings:
                code += 1
        self._codes[s] = code
        self._strings[code] = s
        return code

    def code(self, s: str) -> int:
        try:
            return self._codes[s]
        except KeyError:
            raise UnknownAttribute(f"attribute string {s!r} is not in the dictionary") from None

    def string(self, code: int) -> str:
        try:
            return self._strings[code]
        except KeyError:
            raise UnknownAttribute(f"attribute code {code} is not in the dictionary") from None

    def __contains__(self, s: object) -> bool:
        return s in self._codes

    def __len__(self) -> int:
        return len(self._codes)

    def items(self) -> Iterator[tuple[str, int]]:
        return iter(self._codes.items())

    def copy(self) -> AttrDict:
        other = AttrDict()
        other._codes = dict(self._codes)
        other._strings = dict(self._strings)
        return other

    @classmethod
    def from_genome(cls, genome: Genome) -> AttrDict:
        d = cls()
        # literal codes first so interned strings never take their slot
        strings = list(genome_strings(genome))
        for s in strings:
            if _LITERAL.match(s):
                d.intern(s)
        for s in strings:
            d.intern(s)
        return d


class _NumericDict(AttrDict):
    def code(self, s: str) -> int:
        m = _LITERAL.match(s)
        if not m:
            raise UnknownAttribute(f"attribute string {s!r} is not in the dictionary")
        return int(m.group(1))

    def string(self, code: int) -> str:
        return f"@{code}"


def genome_strings(genome: Genome) -> Iterator[str]:
    """Yield every attribute key/value string in strand order."""
    for gene in (*genome.main.genes, *genome.repro.gene_template):
        for k, v in gene.conditions:
            yield k
            yield v
    for rule in genome.repro.child_type_rules:
        for k, v in rule.conditions:
            yield k
            yield v


# ---------------------------------------------------------------------------
# Checksum


def fnv1a_32(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & 0xFFFFFFFF
    return h


def checksum(static_codons: Sequence[int]) -> int:
    """FNV-1a/32 over the big-endian 4-byte form of each codon."""
    return fnv1a_32(struct.pack(f">{len(static_codons)}I", *static_codons))


# ---------------------------------------------------------------------------
# Validation


def _check_conditions(conds, where, out: list[Diagnostic]) -> None:
    seen = set()
    for pair in conds:
        if pair in seen:
            out.append(Diagnostic("duplicate-condition", where, f"condition {pair[0]}={pair[1]} repeated"))
        seen.add(pair)


def _check_u32(value, name, where, out) -> None:
    if not isinstance(value, int) or value < 0 or value > CODON_MAX:
        out.append(Diagnostic("codon-range", where, f"{name}={value!r} is not a 32-bit unsigned integer"))


def _check_genes(genes, strand, out) -> None:
    for i, gene in enumerate(genes):
        where = f"{strand}.genes[{i}]"
        if gene.gene_code == 0:
            out.append(Diagnostic("zero-gene-code", where, "gene code must be positive"))
        else:
            _check_u32(gene.gene_code, "gene_code", where, out)
        _check_conditions(gene.conditions, where, out)


def validate(genome: Genome) -> list[Diagnostic]:
    """Return the list of violated genome invariants (empty if valid)."""
    out: list[Diagnostic] = []
    main = genome.main
    if main.type_code == 0:
        out.append(Diagnostic("zero-type-code", "main.header", "type code must be positive"))
    for name in ("protocol_code", "type_code", "age"):
        _check_u32(getattr(main, name), name, "main.header", out)
    _check_genes(main.genes, "main", out)
    for name in ("neighbor_links", "child_links"):
        for link in getattr(main, name):
            _check_u32(link, name, f"main.{name}", out)

    rules = genome.repro.child_type_rules
    defaults = [i for i, r in enumerate(rules) if r.is_default]
    if not defaults:
        out.append(Diagnostic("missing-default-rule", "repro.rules", "no default child rule"))
    elif len(defaults) > 1:
        out.append(Diagnostic("duplicate-default-rule", f"repro.rules[{defaults[1]}]",
                              "more than one default child rule"))
    elif defaults[0] != len(rules) - 1:
        out.append(Diagnostic("default-rule-not-last", f"repro.rules[{defaults[0]}]",
                              "the default child rule must be last"))
    for i, rule in enumerate(rules):
        where = f"repro.rules[{i}]"
        if rule.child_type == 0:
            out.append(Diagnostic("zero-child-type", where, "child type must be positive"))
        _check_u32(rule.child_type, "child_type", where, out)
        _check_conditions(rule.conditions, where, out)
    _check_genes(genome.repro.gene_template, "repro", out)
    return out


# ---------------------------------------------------------------------------
# Wire format


def _encode_conds(conds, attrs: AttrDict, out: list[int]) -> None:
    out.append(len(conds))
    for k, v in conds:
        out.append(attrs.code(k))
        out.append(attrs.code(v))


def _encode_genes(genes, attrs, out) -> None:
    out.append(TAG_GENES)
    out.append(len(genes))
    for g in genes:
        out.append(g.gene_code)
        out.append(int(g.scope))
        _encode_conds(g.conditions, attrs, out)


def _encode_parts(genome: Genome, attrs: AttrDict) -> tuple[list[int], list[int], list[int]]:
    """Split the encoding into (head, links, tail); static = head+tail minus age/twin."""
    m = genome.main
    head = [MAGIC, VERSION, TAG_MAIN, TAG_HEADER, m.protocol_code, m.type_code, m.age, int(m.twin_flag)]
    _encode_genes(m.genes, attrs, head)
    links = [TAG_NEIGHBORS, len(m.neighbor_links), *m.neighbor_links,
             TAG_CHILDREN, len(m.child_links), *m.child_links]
    tail = [TAG_REPRO, TAG_RULES, len(genome.repro.child_type_rules)]
    for rule in genome.repro.child_type_rules:
        _encode_conds(rule.conditions, attrs, tail)
        tail.append(rule.child_type)
    _encode_genes(genome.repro.gene_template, attrs, tail)
    return head, links, tail


def _static(head: Sequence[int], tail: Sequence[int]) -> list[int]:
    return [*head[:AGE_INDEX], *head[TWIN_INDEX + 1:], *tail]


def encode(genome: Genome, attrs: AttrDict | None = None) -> list[int]:
    """Encode a genome to its codon list, checksum last.

    Without ``attrs`` a dictionary is interned from the genome itself.
    """
    if attrs is None:
        attrs = AttrDict.from_genome(genome)
    head, links, tail = _encode_parts(genome, attrs)
    codons = head + links + tail
    for i, c in enumerate(codons):
        if not isinstance(c, int) or c < 0 or c > CODON_MAX:
            raise DnaError(f"codon {i} value {c!r} does not fit in 32 bits")
    codons.append(checksum(_static(head, tail)))
    return codons


def links_span(genome: Genome) -> tuple[int, int]:
    """Index range of the neighbor+child link segments in ``encode(genome)``."""
    start = 10
    for g in genome.main.genes:
        start += 3 + 2 * len(g.conditions)
    end = start + 4 + len(genome.main.neighbor_links) + len(genome.main.child_links)
    return start, end


def encode_links(neighbor_links: Sequence[int], child_links: Sequence[int]) -> list[int]:
    return [TAG_NEIGHBORS, len(neighbor_links), *neighbor_links,
            TAG_CHILDREN, len(child_links), *child_links]


class _Reader:
    def __init__(self, codons: Sequence[int]):
        self.codons = codons
        self.pos = 0

    def take(self, what: str) -> int:
        if self.pos >= len(self.codons):
            raise DecodeError("truncated", f"sequence ends while reading {what}", self.pos)
        c = self.codons[self.pos]
        self.pos += 1
        return c

    def tag(self, expected: int) -> None:
        at = self.pos
        c = self.take(f"tag {expected}")
        if c != expected:
            kind = "unknown-tag" if c not in _KNOWN_TAGS else "unexpected-tag"
            raise DecodeError(kind, f"expected segment tag {expected}, found {c}", at)


_KNOWN_TAGS = {TAG_MAIN, TAG_HEADER, TAG_GENES, TAG_NEIGHBORS, TAG_CHILDREN, TAG_REPRO, TAG_RULES}


def _decode_conds(r: _Reader, attrs: AttrDict) -> tuple[Condition, ...]:
    n = r.take("condition count")
    if n > len(r.codons):
        raise DecodeError("truncated", f"condition count {n} exceeds sequence", r.pos - 1)
    out = []
    for _ in range(n):
        at = r.pos
        k, v = r.take("condition key"), r.take("condition value")
        try:
            out.append((attrs.string(k), attrs.string(v)))
        except UnknownAttribute as exc:
            raise DecodeError("bad-value", str(exc), at) from None
    return tuple(out)


def _decode_genes(r: _Reader, attrs: AttrDict) -> tuple[GeneSpec, ...]:
    r.tag(TAG_GENES)
    n = r.take("gene count")
    if n > len(r.codons):
        raise DecodeError("truncated", f"gene count {n} exceeds sequence", r.pos - 1)
    genes = []
    for _ in range(n):
        code = r.take("gene code")
        at = r.pos
        scope = r.take("gene scope")
        if scope not in (0, 1, 2):
            raise DecodeError("bad-value", f"scope {scope} is not 0, 1 or 2", at)
        genes.append(GeneSpec(code, Scope(scope), _decode_conds(r, attrs)))
    return tuple(genes)


def _decode_ids(r: _Reader, tag: int) -> tuple[int, ...]:
    r.tag(tag)
    n = r.take("link count")
    if n > len(r.codons):
        raise DecodeError("truncated", f"link count {n} exceeds sequence", r.pos - 1)
    return tuple(r.take("link") for _ in range(n))


def decode(codons: Sequence[int], attrs: AttrDict | None = None) -> Genome:
    """Decode a codon list, verifying structure and checksum.

    Raises:
        DecodeError: ``kind`` names the first structural or checksum
            problem found.
    """
    if attrs is None:
        attrs = _NumericDict()
    codons = list(codons)
    if not codons or codons[0] != MAGIC:
        raise DecodeError("bad-magic", f"sequence must start with {MAGIC}", 0)
    r = _Reader(codons)
    r.take("magic")
    if r.take("version") != VERSION:
        raise DecodeError("bad-version", f"only DNA version {VERSION} is supported", 1)
    r.tag(TAG_MAIN)
    r.tag(TAG_HEADER)
    protocol = r.take("protocol")
    type_code = r.take("type")
    age = r.take("age")
    twin = r.take("twin flag")
    if twin not in (0, 1):
        raise DecodeError("bad-value", f"twin flag {twin} is not 0 or 1", TWIN_INDEX)
    genes = _decode_genes(r, attrs)
    head_end = r.pos
    neighbors = _decode_ids(r, TAG_NEIGHBORS)
    children = _decode_ids(r, TAG_CHILDREN)
    tail_start = r.pos
    r.tag(TAG_REPRO)
    r.tag(TAG_RULES)
    n_rules = r.take("rule count")
    if n_rules > len(codons):
        raise DecodeError("truncated", f"rule count {n_rules} exceeds sequence", r.pos - 1)
    rules = []
    for _ in range(n_rules):
        conds = _decode_conds(r, attrs)
        rules.append(ChildRule(conds, r.take("child type")))
    template = _decode_genes(r, attrs)
    tail_end = r.pos
    stored = r.take("checksum")
    if r.pos != len(codons):
        raise DecodeError("trailing", f"{len(codons) - r.pos} codons after checksum", r.pos)
    expected = checksum(_static(codons[:head_end], codons[tail_start:tail_end]))
    if stored != expected:
        raise DecodeError("checksum-mismatch",
                          f"stored {stored:#010x}, computed {expected:#010x}", tail_end)
    return Genome(
        MainStrand(protocol, type_code, age, TwinFlag(twin), genes, neighbors, children),
        ReproStrand(tuple(rules), template),
    )


def encode_repro(repro: ReproStrand, attrs: AttrDict) -> list[int]:
    """Wire form of a reproductive strand alone (no checksum)."""
    dummy = Genome(MainStrand(0, 1), repro)
    _, _, tail = _encode_parts(dummy, attrs)
    return tail


def decode_repro(codons: Sequence[int], attrs: AttrDict | None = None) -> ReproStrand:
    if attrs is None:
        attrs = _NumericDict()
    r = _Reader(list(codons))
    r.tag(TAG_REPRO)
    r.tag(TAG_RULES)
    n_rules = r.take("rule count")
    if n_rules > len(r.codons):
        raise DecodeError("truncated", f"rule count {n_rules} exceeds sequence", r.pos - 1)
    rules = []
    for _ in range(n_rules):
        conds = _decode_conds(r, attrs)
        rules.append(ChildRule(conds, r.take("child type")))
    template = _decode_genes(r, attrs)
    if r.pos != len(r.codons):
        raise DecodeError("trailing", f"{len(r.codons) - r.pos} codons after strand", r.pos)
    return ReproStrand(tuple(rules), template)


def static_portion(codons: Sequence[int]) -> list[int]:
    """Codons covered by the checksum, recovered from a structurally sound sequence."""
    r = _Reader(list(codons))
    attrs = _NumericDict()
    for _ in range(8):
        r.take("header")
    _decode_genes(r, attrs)
    head_end = r.pos
    _decode_ids(r, TAG_NEIGHBORS)
    _decode_ids(r, TAG_CHILDREN)
    tail_start = r.pos
    r.tag(TAG_REPRO)
    r.tag(TAG_RULES)
    for _ in range(r.take("rule count")):
        _decode_conds(r, attrs)
        r.take("child type")
    _decode_genes(r, attrs)
    return _static(codons[:head_end], codons[tail_start:r.pos])


def to_bytes(codons: Sequence[int]) -> bytes:
    return struct.pack(f">{len(codons)}I", *codons)


def from_bytes(data: bytes) -> list[int]:
    if len(data) % 4:
        raise DecodeError("truncated", f"{len(data)} bytes is not a whole number of codons")
    return list(struct.unpack(f">{len(data) // 4}I", data))


def is_binary(data: bytes) -> bool:
    return data[:4] == struct.pack(">I", MAGIC)


# ---------------------------------------------------------------------------
# Text format


def _parse_pairs(token: str, lineno: int) -> tuple[Condition, ...]:
    pairs = []
    for part in token.split(","):
        k, sep, v = part.partition("=")
        if not sep or not k or not v:
            raise DnaSyntaxError(f"malformed condition {part!r}", lineno)
        pairs.append((k, v))
    return tuple(pairs)


def _parse_uint(token: str, what: str, lineno: int) -> int:
    if not token.isdigit():
        raise DnaSyntaxError(f"{what} must be an unsigned integer, got {token!r}", lineno)
    return int(token)


def _parse_gene(tokens: list[str], lineno: int) -> GeneSpec:
    if len(tokens) < 2:
        raise DnaSyntaxError("GENE needs a code", lineno)
    code = _parse_uint(tokens[1], "gene code", lineno)
    scope = Scope.ANY
    conds: tuple[Condition, ...] = ()
    rest = tokens[2:]
    i = 0
    seen_scope = seen_when = False
    while i < len(rest):
        tok = rest[i]
        if tok.startswith("scope=") and not seen_scope:
            name = tok[len("scope="):]
            try:
                scope = Scope[name.upper()]
            except KeyError:
                raise DnaSyntaxError(f"unknown scope {name!r}", lineno) from None
            seen_scope = True
            i += 1
        elif tok == "when" and not seen_when:
            if i + 1 >= len(rest):
                raise DnaSyntaxError("'when' needs k=v conditions", lineno)
            conds = _parse_pairs(rest[i + 1], lineno)
            seen_when = True
            i += 2
        else:
            raise DnaSyntaxError(f"unexpected token {tok!r}", lineno)
    return GeneSpec(code, scope, conds)


def _parse_ids(tokens: list[str], lineno: int) -> tuple[int, ...]:
    return tuple(_parse_uint(t, "link", lineno) for t in tokens[1:])


def parse_text(source: str) -> Genome:
    """Parse the line-oriented DNA text form.

    ``NEIGHBORS`` and ``CHILDREN`` lines (main strand, optional) carry the
    dynamic link segments so that every genome has a text form.
    """
    lines = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            lines.append((lineno, text.split()))
    if not lines or lines[0][1] != ["DNA", "1"]:
        where = lines[0][0] if lines else 1
        raise DnaSyntaxError("document must start with 'DNA 1'", where)

    section = None
    header = None
    main_genes: list[GeneSpec] = []
    template: list[GeneSpec] = []
    rules: list[ChildRule] = []
    neighbors: tuple[int, ...] = ()
    children: tuple[int, ...] = ()
    ended = False
    for lineno, tokens in lines[1:]:
        word = tokens[0]
        if ended:
            raise DnaSyntaxError("content after END", lineno)
        if word == "MAIN":
            if section is not None:
                raise DnaSyntaxError("MAIN must come first and only once", lineno)
            section = "main"
        elif word == "REPRO":
            if section != "main":
                raise DnaSyntaxError("REPRO must follow the MAIN strand", lineno)
            section = "repro"
        elif word == "END":
            ended = True
        elif word == "HEADER":
            if section != "main":
                raise DnaSyntaxError("HEADER outside MAIN", lineno)
            if header is not None:
                raise DnaSyntaxError("duplicate HEADER", lineno)
            header = _parse_header(tokens, lineno)
        elif word == "GENE":
            if section is None:
                raise DnaSyntaxError("GENE outside a strand", lineno)
            (main_genes if section == "main" else template).append(_parse_gene(tokens, lineno))
        elif word in ("NEIGHBORS", "CHILDREN"):
            if section != "main":
                raise DnaSyntaxError(f"{word} outside MAIN", lineno)
            if word == "NEIGHBORS":
                neighbors = _parse_ids(tokens, lineno)
            else:
                children = _parse_ids(tokens, lineno)
        elif word == "CHILD":
            if section != "repro":
                raise DnaSyntaxError("CHILD outside REPRO", lineno)
            rules.append(_parse_child(tokens, lineno))
        else:
            raise DnaSyntaxError(f"unknown keyword {word!r}", lineno)

    last = lines[-1][0]
    if header is None:
        raise DnaSyntaxError("missing HEADER", last)
    if section != "repro":
        raise DnaSyntaxError("missing REPRO strand", last)
    if not ended:
        raise DnaSyntaxError("missing END", last)
    if not any(r.is_default for r in rules):
        raise DnaSyntaxError("missing default child rule", last)
    main = replace(header, genes=tuple(main_genes), neighbor_links=neighbors, child_links=children)
    return Genome(main, ReproStrand(tuple(rules), tuple(template)))


def _parse_header(tokens: list[str], lineno: int) -> MainStrand:
    fields: dict[str, str] = {}
    for tok in tokens[1:]:
        k, sep, v = tok.partition("=")
        if not sep or k not in ("type", "protocol", "age", "twin"):
            raise DnaSyntaxError(f"bad HEADER field {tok!r}", lineno)
        if k in fields:
            raise DnaSyntaxError(f"HEADER field {k!r} repeated", lineno)
        fields[k] = v
    for required in ("type", "protocol"):
        if required not in fields:
            raise DnaSyntaxError(f"HEADER needs {required}=", lineno)
    twin = fields.get("twin", "primary")
    if twin not in ("primary", "twin"):
        raise DnaSyntaxError(f"twin must be primary or twin, got {twin!r}", lineno)
    return MainStrand(
        protocol_code=_parse_uint(fields["protocol"], "protocol", lineno),
        type_code=_parse_uint(fields["type"], "type", lineno),
        age=_parse_uint(fields.get("age", "0"), "age", lineno),
        twin_flag=TwinFlag.TWIN if twin == "twin" else TwinFlag.PRIMARY,
    )


def _parse_child(tokens: list[str], lineno: int) -> ChildRule:
    if len(tokens) == 4 and tokens[1] == "default" and tokens[2] == "->":
        return ChildRule((), _parse_uint(tokens[3], "child type", lineno))
    if len(tokens) == 5 and tokens[1] == "when" and tokens[3] == "->":
        return ChildRule(_parse_pairs(tokens[2], lineno), _parse_uint(tokens[4], "child type", lineno))
    raise DnaSyntaxError("CHILD must be 'CHILD default -> <type>' or 'CHILD when k=v -> <type>'", lineno)


def _format_gene(g: GeneSpec) -> str:
    parts = ["GENE", str(g.gene_code)]
    if g.scope is not Scope.ANY:
        parts.append(f"scope={g.scope.name.lower()}")
    if g.conditions:
        parts += ["when", ",".join(f"{k}={v}" for k, v in g.conditions)]
    return " ".join(parts)


def format_text(genome: Genome) -> str:
    """Canonical text form; ``parse_text(format_text(g)) == g``."""
    m = genome.main
    header = f"HEADER type={m.type_code} protocol={m.protocol_code}"
    if m.age:
        header += f" age={m.age}"
    if m.twin_flag is TwinFlag.TWIN:
        header += " twin=twin"
    out = ["DNA 1", "MAIN", header]
    out += [_format_gene(g) for g in m.genes]
    if m.neighbor_links:
        out.append("NEIGHBORS " + " ".join(map(str, m.neighbor_links)))
    if m.child_links:
        out.append("CHILDREN " + " ".join(map(str, m.child_links)))
    out.append("REPRO")
    for rule in genome.repro.child_type_rules:
        if rule.is_default:
            out.append(f"CHILD default -> {rule.child_type}")
        else:
            conds = ",".join(f"{k}={v}" for k, v in rule.conditions)
            out.append(f"CHILD when {conds} -> {rule.child_type}")
    out += [_format_gene(g) for g in genome.repro.gene_template]
    out.append("END")
    return "\n".join(out) + "\n"


def first_match(rules: Sequence[ChildRule], attrs: Mapping[str, str]) -> int:
    """Child type chosen by the first rule whose conditions all hold."""
    for rule in rules:
        if all(attrs.get(k) == v for k, v in rule.conditions):
            return rule.child_type
    raise DnaError("no child rule matched; the strand has no default rule")


__all__ = [
    "AGE_INDEX", "TWIN_INDEX", "MAGIC", "VERSION", "AttrDict", "ChildRule", "DecodeError",
    "Diagnostic", "DnaError", "DnaSyntaxError", "GeneSpec", "Genome", "MainStrand",
    "ReproStrand", "Scope", "decode_repro", "encode_repro", "TwinFlag", "UnknownAttribute", "checksum", "decode", "encode",
    "encode_links", "first_match", "fnv1a_32", "format_text", "from_bytes", "is_binary",
    "links_span", "parse_text", "static_portion", "to_bytes", "validate",
]
