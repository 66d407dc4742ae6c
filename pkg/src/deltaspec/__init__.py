"""deltaspec: incremental spec-versus-code inconsistency detection.

The package follows the pipeline shape: RFC and source ingestion, chunking
and span mapping, a knowledge graph for retrieval, update-chain evolution
tracking, a differential triplet store, the verifier itself, and a CLI that
strings the stages together into reproducible artifacts.
"""

__version__ = "0.1.0"

from .errors import DeltaSpecError

__all__ = ["DeltaSpecError", "__version__"]
