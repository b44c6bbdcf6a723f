# coding: utf-8

# # What each normalizer is invariant to
#
# We perturb a layer's weights or its data in six ways and ask whether the
# normalized outputs move.  A cell counts as invariant when five random
# transforms all leave the output within 1e-9; it counts as broken when some
# transform moves it by at least 1e-3.

# %%

import numpy as np

from normlab.invariance import SCHEMES, TRANSFORMS, default_dataset, full_table

table = full_table(default_dataset(n=32, d=5, seed=0), trials=5, seed=0)

header = "".join(f"{t[:14]:>16}" for t in TRANSFORMS)
print(f"{'':8}{header}")
for scheme in SCHEMES:
    row = "".join(f"{'invariant' if v else '-':>16}" for v in table.matrix[scheme])
    print(f"{scheme:8}{row}")
print("all cells as expected:", table.passed)

# %% [markdown]
# The size of each deviation tells the same story in numbers.

# %%

for v in table.verdicts:
    print(f"{v.scheme:6} {v.transform:24} {v.deviation:10.2e}")
