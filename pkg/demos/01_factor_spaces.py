"""Factor spaces and symbolic relations.

A factor space is a small grid of ground-truth generative factors. Each
combination of factor values gets an integer index, and relations are
partial functions between those indices: "move_right" shifts the x position,
"change_shape" cycles the shape, and the handwritten-formula preset has
binary arithmetic relations over digit symbols.
"""

import numpy as np

from weakdis import (
    apply_relation,
    build_factor_space,
    builtin_relations,
    combination_to_index,
    index_to_combination,
)

# --- the three built-in presets -------------------------------------------

for preset in ("hwf-like", "dsprites", "shapes3d"):
    space = build_factor_space(preset)
    names = [f.name for f in space.factors if not f.is_nuisance]
    print(f"{preset:10s} N={space.N:4d} factors={names}")

# --- walking the dsprites grid ---------------------------------------------

space = build_factor_space("dsprites")
relations = {r.name: r for r in builtin_relations(space)}

state = combination_to_index(space, ("left", "down", "square"))
print("\nstart:", index_to_combination(space, state).values)
for name in ("move_right", "move_up", "change_shape", "move_right"):
    state = apply_relation(relations[name], (state,))
    print(f"after {name:12s} ->", index_to_combination(space, state).values)

# Relations are partial: stepping off the grid is invalid rather than
# clamped, so callers always know the symbolic outcome of a transition.
edge = combination_to_index(space, ("right", "up", "heart"))
try:
    apply_relation(relations["move_right"], (edge,))
except ValueError as exc:
    print("\nboundary:", exc)

# --- digit arithmetic in the hwf-like preset -------------------------------

hwf = build_factor_space("hwf-like")
ops = {r.name: r for r in builtin_relations(hwf)}
for a, b in [(3, 4), (2, 6), (2, 4)]:
    s = apply_relation(ops["sum"], (a, b))
    print(f"{a} + {b} = {s}")

# Multiplication is only defined where the result stays a single digit.
valid = sorted(inp for inp in ops["multiplication"].valid_inputs)
print(f"multiplication has {len(valid)} valid digit pairs, e.g. {valid[:5]}")
