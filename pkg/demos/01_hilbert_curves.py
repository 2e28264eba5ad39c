"""Hilbert curves: indexing, round trips, and the two conjugate frames.

Run with ``python demos/01_hilbert_curves.py``.  Writes ``curve_l4.svg`` to
the working directory.
"""

import numpy as np

from segt import spacecurve as sc
from segt.cli import curve_svg

# %% The level-1 curve in 2D visits the four cells of a square.
for i in range(4):
    print(i, sc.hilbert_decode(i, 1, 2))

# %% Encode and decode are inverse on the whole cube.
level = 4
cells = sc.curve_table(level, 2)
assert np.array_equal(sc.hilbert_encode_array(cells, level), np.arange(len(cells)))

# Consecutive indices are always neighbours.
steps = np.abs(np.diff(cells, axis=0)).sum(axis=1)
print("distinct step lengths:", np.unique(steps))

# %% 3D works the same way.
cube = sc.curve_table(2, 3)
print("3D level 2 starts", cube[:4].tolist(), "and ends at", cube[-1].tolist())

# %% The MINUS strategy turns the XY frame by 90 degrees before indexing, so
# the same voxel lands next to different neighbours in the two orderings.
side = 1 << level
cell = (3, 5, 0)
turned = sc.apply_strategy(cell, sc.Strategy.MINUS, side)
print("cell (3, 5): PLUS index", sc.hilbert_encode(cell[:2], level, 2),
      "MINUS index", sc.hilbert_encode(tuple(turned[:2]), level, 2))

# %% Dump an SVG of the curve for a look.
with open("curve_l4.svg", "w") as fh:
    fh.write(curve_svg(cells.tolist(), level))
print("wrote curve_l4.svg")
