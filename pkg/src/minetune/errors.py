"""Exception types shared across the package.

Each error carries a short machine-readable ``code`` so the HTTP service and
the CLI can map failures onto stable status and exit codes.
"""


class MineTuneError(Exception):
    """Base class for all domain errors raised by this package."""

    code = "error"


class ZeroVectorError(MineTuneError):
    """A vector with (near-)zero norm cannot be L2-normalized."""

    code = "zero_vector"


class NotNormalizedError(MineTuneError):
    """An operation that requires unit-normalized embeddings got raw ones."""

    code = "not_normalized"


class KTooLargeError(MineTuneError):
    """The neighbor-list size k must satisfy 1 <= k < n."""

    code = "k_too_large"


class BatchTooSmallError(MineTuneError):
    """A triplet batch needs at least two anchors to pick negatives from."""

    code = "batch_too_small"


class NoPairsMinedError(MineTuneError):
    """A fine-tuning epoch mined no positive pairs at all.

    Usually means k is too small for the dataset or the camera structure is
    degenerate (e.g. everything on one camera with cross-camera mining on).
    """

    code = "no_pairs_mined"


class EmptyGalleryError(MineTuneError):
    code = "empty_gallery"


class NoGroundTruthError(MineTuneError):
    """A metric needs identity labels that the dataset does not carry."""

    code = "no_ground_truth"
