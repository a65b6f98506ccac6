"""Gene database backends.

The registry reads manifest entries through :class:`StoreBackend`; a
networked backend would implement the same four members.
"""

from __future__ import annotations

import abc
from importlib import resources
from pathlib import Path
from typing import Iterable

from .registry import DuplicateGene, ManifestEntry, parse_manifest


class GeneNotFound(KeyError):
    def __init__(self, code: int):
        self.code = code
        super().__init__(code)

    def __str__(self) -> str:
        return f"gene {self.code} not found"


class ReadOnlyStore(Exception):
    pass


class StoreBackend(abc.ABC):
    backend_id: str

    @abc.abstractmethod
    def get(self, code: int) -> ManifestEntry: ...

    @abc.abstractmethod
    def list(self) -> list[ManifestEntry]: ...

    @abc.abstractmethod
    def put(self, entry: ManifestEntry) -> None: ...


class MemoryStore(StoreBackend):
    """Mutable in-process store for authoring and tests."""

    def __init__(self, entries: Iterable[ManifestEntry] = (), backend_id: str = "memory"):
        self.backend_id = backend_id
        self._entries: dict[int, ManifestEntry] = {}
        for e in entries:
            if e.code in self._entries:
                raise DuplicateGene(f"gene {e.code} listed twice")
            self._entries[e.code] = e

    def get(self, code: int) -> ManifestEntry:
        try:
            return self._entries[code]
        except KeyError:
            raise GeneNotFound(code) from None

    def list(self) -> list[ManifestEntry]:
        return sorted(self._entries.values(), key=lambda e: e.code)

    def put(self, entry: ManifestEntry) -> None:
        self._entries[entry.code] = entry


class LocalFileStore(MemoryStore):
    """Manifest-file backend; read-only once opened."""

    def __init__(self, path: str | Path):
        path = Path(path)
        super().__init__(parse_manifest(path.read_text(), str(path)), backend_id=f"file:{path}")
        self.path = path

    def put(self, entry: ManifestEntry) -> None:
        raise ReadOnlyStore(f"{self.backend_id} is read-only")


def standard_manifest_path() -> Path:
    return Path(str(resources.files("dnanet") / "data" / "standard.manifest"))


def open_local(path: str | Path | None = None) -> LocalFileStore:
    """Open a manifest file; the shipped standard manifest when ``path`` is None."""
    return LocalFileStore(standard_manifest_path() if path is None else path)


def verify_store(backend: StoreBackend, required: Iterable[int]) -> list[str]:
    missing = []
    for code in sorted(set(required)):
        try:
            backend.get(code)
        except GeneNotFound:
            missing.append(f"missing {code}")
    return missing
