import logging

import numpy as np

from ..defenses import ReleasedGradient
from ..models import Network

logger = logging.getLogger(__name__)


class AmbiguousLabelError(ValueError):
    def __init__(self, candidates):
        self.candidates = [int(c) for c in candidates]
        super().__init__(
            f"label is ambiguous, negative bias gradient entries at {self.candidates}"
        )


def recover_label(released: ReleasedGradient, net: Network, strict: bool = False) -> int:
    """Class whose last-layer bias gradient is smallest.

    For cross-entropy with a single example that gradient is softmax(logits) - onehot(y),
    negative only at the true label. Zero or several negative entries make the answer
    ambiguous: logged, or raised as :class:`AmbiguousLabelError` when ``strict``.
    """
    segment = net.last_bias
    bias_grad = released.g[segment.offset : segment.stop]
    label = int(np.argmin(bias_grad))
    negative = np.flatnonzero(bias_grad < 0)
    if negative.size != 1:
        if strict:
            raise AmbiguousLabelError(negative)
        logger.debug(
            f"{negative.size} negative bias gradient entries, taking argmin {label}"
        )
    return label
