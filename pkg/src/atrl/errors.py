"""Exception types raised by the public API.

Everything user-facing derives from :class:`AtrlError` so callers (and the
CLI) can distinguish bad inputs from internal bugs with one except clause.
"""

from __future__ import annotations


class AtrlError(ValueError):
    """Base class for all input-validation failures in this package."""


# --- binary tensor container ---------------------------------------------

class BadMagic(AtrlError):
    """File does not start with the ATN1 magic bytes."""


class DimOverflow(AtrlError):
    """A header dimension is zero or exceeds the 2**20 cap."""


class TruncatedPayload(AtrlError):
    """Payload value count does not match layers*heads*gen_len*ctx_len."""


class NonFiniteValue(AtrlError):
    """Attention values contain NaN or infinity."""


class NegativeValue(AtrlError):
    """Attention values contain entries below zero."""


class RowSumError(AtrlError):
    """Tensor claims row-stochastic rows but a row sum is off by > 1e-4."""


# --- token metadata -------------------------------------------------------

class UnknownModalityLabel(AtrlError):
    """Context modality string contains a character other than 'v' or 'l'."""


class LengthMismatch(AtrlError):
    """Two paired sequences/vectors disagree in length."""


# --- calibration ----------------------------------------------------------

class TopLayersOutOfRange(AtrlError):
    """Requested layer count for aggregation is < 1 or > available layers."""


class EmptyVisualSet(AtrlError):
    """Connectivity requested but the visual index set is empty."""


class IndexOutOfRange(AtrlError):
    """A token or context index lies outside the valid range."""


# --- partitioning ---------------------------------------------------------

class TooManyClusters(AtrlError):
    """Requested more clusters than there are nodes."""


class EmptyCluster(AtrlError):
    """A cluster has no members where at least one is required."""


# --- credit ---------------------------------------------------------------

class GroupTooSmall(AtrlError):
    """Group advantage needs at least two completions."""


class KMismatch(AtrlError):
    """Cluster weight vector length does not match the clustering's K."""


class BadFraction(AtrlError):
    """A fraction argument lies outside (0, 1]."""


class NonPositiveRatio(AtrlError):
    """Probability ratios must be strictly positive."""
