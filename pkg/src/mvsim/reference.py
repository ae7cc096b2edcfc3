"""Reference values the experiments are compared against.

Terminal-law histogram of the 2048-particle system (N = 64, T = 1), pooled over
10^4 replicates: 99 equal bins on [-1, 1]; entries are (bin index, count),
empty bins omitted.  Rate curve: per-d strong and weak coupled errors, N = 64.
"""

import numpy as np

HIST_BINS = 99
HIST_RANGE = (-1.0, 1.0)
HIST_TOTAL = 2048 * 10_000

HIST_COUNTS = (
    (27, 1),
    (28, 3),
    (29, 10),
    (30, 28),
    (31, 55),
    (32, 101),
    (33, 237),
    (34, 462),
    (35, 1002),
    (36, 2083),
    (37, 3798),
    (38, 7036),
    (39, 12040),
    (40, 20021),
    (41, 31524),
    (42, 48467),
    (43, 70273),
    (44, 99427),
    (45, 134615),
    (46, 176555),
    (47, 223535),
    (48, 275481),
    (49, 329887),
    (50, 386849),
    (51, 444491),
    (52, 502518),
    (53, 557578),
    (54, 611385),
    (55, 664406),
    (56, 708716),
    (57, 752342),
    (58, 792155),
    (59, 825524),
    (60, 857536),
    (61, 878474),
    (62, 897440),
    (63, 909211),
    (64, 915119),
    (65, 912796),
    (66, 904826),
    (67, 886796),
    (68, 856777),
    (69, 816593),
    (70, 760073),
    (71, 691448),
    (72, 609969),
    (73, 517059),
    (74, 419616),
    (75, 325117),
    (76, 237651),
    (77, 163137),
    (78, 105664),
    (79, 62943),
    (80, 35223),
    (81, 18123),
    (82, 8866),
    (83, 4084),
    (84, 1693),
    (85, 711),
    (86, 289),
    (87, 105),
    (88, 39),
    (89, 11),
    (90, 6),
)

RATE_D = (16, 32, 64, 128, 256, 512, 1024)
RATE_STRONG = (
    0.012932772916020874,
    0.008022558087718151,
    0.005226210022281428,
    0.0035632286243281654,
    0.0024633436948714835,
    0.001722599750887295,
    0.0012048219869378164,
)
RATE_WEAK = (
    0.013503125,
    0.00643125,
    0.002975,
    0.0015796875,
    0.0008419921875,
    0.000401953125,
    0.000196337890625,
)


def reference_histogram() -> tuple[np.ndarray, np.ndarray]:
    """(edges, mass) on the full 99-bin grid."""
    edges = np.linspace(HIST_RANGE[0], HIST_RANGE[1], HIST_BINS + 1)
    mass = np.zeros(HIST_BINS)
    for k, c in HIST_COUNTS:
        mass[k] = c / HIST_TOTAL
    return edges, mass
