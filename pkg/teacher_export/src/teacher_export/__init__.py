"""Teacher-embedding exporter: runs a language-audio model over a corpus
manifest and writes clip + text-anchor embeddings in SALT format."""

from .backends import Backend, StubBackend, resolve_backend
from .export import ExportJob, export

__all__ = ["Backend", "StubBackend", "resolve_backend", "ExportJob", "export"]
