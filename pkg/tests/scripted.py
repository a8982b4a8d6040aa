"""Hand-built scenes shared by several test modules."""

import numpy as np

from scenemem.world import Scene

# V1..V5 are viewpoints 0..4.  V1 has four neighbours (1, 5, 6, 7) and the
# first route 0-1-2-3-4 touches no chord between stored nodes, so only the
# consecutive edges appear.  The second route enters from unseen nodes and
# finishes on viewpoint 2, which the first route already stored.
WALK_POSITIONS = [
    [0.0, 0.0], [2.0, 0.0], [4.0, 0.0], [4.0, 2.0], [2.0, 3.0],
    [0.0, 2.5], [-2.0, 0.0], [-1.0, -2.0], [3.0, -2.0],
]
WALK_EDGES = [
    (0, 1), (0, 5), (0, 6), (0, 7), (1, 2), (1, 8), (2, 3), (2, 8),
    (3, 4), (4, 5), (6, 7), (7, 8),
]
WALK_ROUTE_1 = [0, 1, 2, 3, 4]
WALK_ROUTE_2 = [6, 7, 8, 2]


def walkthrough_scene() -> Scene:
    return Scene(
        "walk", 17, np.array(WALK_POSITIONS), np.array([0, 1, 2, 3, 0, 1, 2, 3, 0]),
        tuple(sorted(WALK_EDGES)), 4,
    )


def triangle_scene() -> Scene:
    return Scene("tri", 3, np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]]), np.array([0, 1, 2]), ((0, 1), (0, 2), (1, 2)), 4)
