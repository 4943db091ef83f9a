"""Label sources: ground truth, noise-corrupted ground truth, and a human
annotator reached through an annotation session.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from typing import Protocol, Sequence

from .core import IGNORE_LABEL, GroundTruthMask, LabelSource, LabelledPixel, PixelRef
from .seeding import substream

__all__ = [
    "OracleKind",
    "OracleConfig",
    "reveal",
    "reveal_noisy",
    "PartialSessionError",
    "PendingRequest",
    "human_request",
    "human_collect",
]


class OracleKind(enum.Enum):
    SIMULATED = "sim"
    NOISY = "noisy"
    HUMAN = "human"


@dataclass(frozen=True)
class OracleConfig:
    kind: OracleKind = OracleKind.SIMULATED
    error_rate: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind is OracleKind.NOISY:
            if self.error_rate is None or not 0.0 <= self.error_rate <= 1.0:
                raise ValueError("noisy oracle needs error_rate in [0, 1]")
        elif self.error_rate is not None:
            raise ValueError(f"error_rate only applies to the noisy oracle, not {self.kind}")


def _check_query(gt: GroundTruthMask, u: PixelRef) -> int:
    if u.image_id != gt.image_id:
        raise ValueError(f"query {u} does not match mask for {gt.image_id!r}")
    if not (0 <= u.row < gt.height and 0 <= u.col < gt.width):
        raise ValueError(f"query {u} is outside the {gt.height}x{gt.width} mask")
    cls = int(gt.classes[u.row, u.col])
    if cls == IGNORE_LABEL:
        raise ValueError(
            f"query {u} hits an IGNORE pixel; acquisition must filter these out"
        )
    return cls


def reveal(gt: GroundTruthMask, u: PixelRef) -> int:
    """The true class at u, straight from the ground-truth annotations."""
    return _check_query(gt, u)


def reveal_noisy(gt: GroundTruthMask, u: PixelRef, error_rate: float, seed: int) -> int:
    """The true class, except with probability error_rate a uniformly-drawn
    wrong class (a simulated key-slip).

    The decision stream is hashed from (seed, image, row, col), so replays
    are independent of query order.
    """
    if not 0.0 <= error_rate <= 1.0:
        raise ValueError("error_rate must be in [0, 1]")
    true_cls = _check_query(gt, u)
    if gt.num_classes < 2:
        raise ValueError("jitter needs at least 2 classes")
    rng = substream(seed, "noise", u.image_id, u.row, u.col)
    if rng.random() < error_rate:
        offset = int(rng.integers(1, gt.num_classes))
        return (true_cls + offset) % gt.num_classes
    return true_cls


# --- human oracle -------------------------------------------------------------
#
# The human oracle is an asynchronous request/response contract against an
# annotation session: the engine enqueues proposals, the annotation server's
# session collects key-press classifications, and collect() returns them in
# proposal order once all have arrived.


class AnnotationSession(Protocol):
    """The slice of a server session the oracle depends on."""

    def enqueue(self, proposals: Sequence[PixelRef]) -> None: ...

    def queue_length(self) -> int: ...

    def collected_labels(self) -> tuple[LabelledPixel, ...]: ...

    def is_closed(self) -> bool: ...


class PartialSessionError(RuntimeError):
    """Session ended before all proposals were answered; carries what arrived."""

    def __init__(self, message: str, labels: tuple[LabelledPixel, ...]):
        super().__init__(message)
        self.labels = labels


@dataclass
class PendingRequest:
    session: AnnotationSession
    start: int  # queue position of this request's first proposal
    expected: int


def human_request(session: AnnotationSession, proposals: Sequence[PixelRef]) -> PendingRequest:
    """Enqueue proposals on an active session and return a handle to await.

    Labels are matched positionally: the session answers proposals strictly
    in queue order, so this request's labels occupy queue slots
    [start, start + len(proposals)).
    """
    proposals = list(proposals)
    if not proposals:
        raise ValueError("no proposals to request labels for")
    if session.is_closed():
        raise ValueError("annotation session is closed")
    start = session.queue_length()
    session.enqueue(proposals)
    return PendingRequest(session=session, start=start, expected=len(proposals))


def await_session(session: AnnotationSession) -> PendingRequest:
    """A handle over everything already enqueued on the session (e.g. the
    batch the session was created with)."""
    expected = session.queue_length()
    if expected == 0:
        raise ValueError("session has no queued proposals")
    return PendingRequest(session=session, start=0, expected=expected)


def human_collect(
    handle: PendingRequest, poll_seconds: float = 0.05, timeout: float | None = None
) -> list[LabelledPixel]:
    """Block (polling) until every requested proposal has a submitted class.

    Raises PartialSessionError with the labels received so far if the
    session closes (or the timeout lapses) before completion.
    """
    deadline = None if timeout is None else time.monotonic() + timeout
    while True:
        got = handle.session.collected_labels()[handle.start : handle.start + handle.expected]
        if len(got) >= handle.expected:
            labels = list(got)
            if any(lp.source is not LabelSource.HUMAN for lp in labels):
                raise ValueError("human oracle received a non-human label")
            return labels
        if handle.session.is_closed():
            raise PartialSessionError(
                f"session closed after {len(got)} of {handle.expected} labels",
                tuple(got),
            )
        if deadline is not None and time.monotonic() > deadline:
            raise PartialSessionError(
                f"timed out after {len(got)} of {handle.expected} labels",
                tuple(got),
            )
        time.sleep(poll_seconds)
