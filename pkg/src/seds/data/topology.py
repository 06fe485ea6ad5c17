"""Skeleton keypoint groups and their graphs.

The 49 keypoints of a frame are laid out as left hand (0-20), right hand
(21-41) and body (42-48). Both hands use the 21-point hand layout (wrist,
then four joints per finger from thumb to pinky). The body group is nose,
shoulders, elbows and wrists.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_HAND = 21
N_BODY = 7
N_KEYPOINTS = 2 * N_HAND + N_BODY

LEFT_HAND = slice(0, N_HAND)
RIGHT_HAND = slice(N_HAND, 2 * N_HAND)
BODY = slice(2 * N_HAND, N_KEYPOINTS)

HAND_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 4),
    (0, 5), (5, 6), (6, 7), (7, 8),
    (0, 9), (9, 10), (10, 11), (11, 12),
    (0, 13), (13, 14), (14, 15), (15, 16),
    (0, 17), (17, 18), (18, 19), (19, 20),
    (5, 9), (9, 13), (13, 17),
)

# nose, l-shoulder, r-shoulder, l-elbow, r-elbow, l-wrist, r-wrist
BODY_NAMES = ("nose", "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist")
BODY_EDGES = ((0, 1), (0, 2), (1, 3), (3, 5), (2, 4), (4, 6))

# anchors for coordinate normalisation, indices within each group
HAND_ANCHOR = 0
BODY_ANCHOR = 0


def adjacency(n: int, edges) -> np.ndarray:
    a = np.zeros((n, n))
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    return a


def normalized_adjacency(a: np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a_hat = a + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return d[:, None] * a_hat * d[None, :]


def _connected(a: np.ndarray) -> bool:
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in np.flatnonzero(a[i]):
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    return len(seen) == a.shape[0]


@dataclass(frozen=True)
class SkeletonTopology:
    hand_edges: tuple = HAND_EDGES
    body_edges: tuple = BODY_EDGES
    hand_adj: np.ndarray = field(init=False, repr=False, compare=False)
    body_adj: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "hand_adj", adjacency(N_HAND, self.hand_edges))
        object.__setattr__(self, "body_adj", adjacency(N_BODY, self.body_edges))
        for name, a in (("hand", self.hand_adj), ("body", self.body_adj)):
            if not _connected(a):
                raise ValueError(f"{name} graph is not connected")

    @property
    def groups(self) -> dict[str, slice]:
        return {"left": LEFT_HAND, "right": RIGHT_HAND, "body": BODY}

    def group_adjacency(self, group: str) -> np.ndarray:
        return self.body_adj if group == "body" else self.hand_adj
