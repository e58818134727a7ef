"""minetune: mine cross-camera positive pairs from unlabeled data and use
them to refine a lightweight metric embedder.

The package is organised as a core library (``embeddings``, ``mining``,
``synth``, ``model``, ``metrics``, ``pipeline``), an HTTP service wrapping it
(``minetune.service``), and a command-line client (``minetune.cli``).

Submodules are imported explicitly (``from minetune.mining import mine_all``);
the package root stays import-light so the CLI can configure BLAS thread
counts before numpy loads.
"""

__version__ = "0.1.0"
