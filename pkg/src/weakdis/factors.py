"""Factor grammars, combination indexing and symbolic relations.

A dataset is described by an ordered list of factors. The non-nuisance
factors span a grid of N combinations (mixed-radix, lexicographic in the
declared factor order); each combination owns one component of the latent
prior. Relations are total functions from valid input index tuples to an
output index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

__all__ = [
    "FactorSpec",
    "FactorSpace",
    "FactorCombination",
    "RelationDef",
    "PRESETS",
    "build_factor_space",
    "combination_to_index",
    "index_to_combination",
    "builtin_relations",
    "apply_relation",
    "hwf_operator_components",
    "save_space_spec",
    "load_space_spec",
]

PRESETS = ("hwf-like", "dsprites", "shapes3d")

HWF_SYMBOLS = tuple(str(d) for d in range(10)) + ("+", "-", "*")


@dataclass(frozen=True)
class FactorSpec:
    """One generative factor: a name and its ordered value alphabet."""

    name: str
    values: tuple[str, ...]
    is_nuisance: bool = False

    def __post_init__(self):
        if not self.values:
            raise ValueError(f"factor {self.name!r} has no values")
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"factor {self.name!r} has duplicate value labels")


@dataclass(frozen=True)
class FactorSpace:
    """Ordered factor list plus the derived combination grid size."""

    factors: tuple[FactorSpec, ...]
    preset: str | None = None

    def __post_init__(self):
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise ValueError("duplicate factor names")

    @property
    def relevant(self) -> tuple[FactorSpec, ...]:
        return tuple(f for f in self.factors if not f.is_nuisance)

    @property
    def nuisance(self) -> tuple[FactorSpec, ...]:
        return tuple(f for f in self.factors if f.is_nuisance)

    @property
    def K(self) -> int:
        return len(self.relevant)

    @property
    def N(self) -> int:
        n = 1
        for f in self.relevant:
            n *= len(f.values)
        return n

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(len(f.values) for f in self.relevant)


@dataclass(frozen=True)
class FactorCombination:
    """One joint assignment of all non-nuisance factor values."""

    values: tuple[str, ...]
    index: int


@dataclass(frozen=True)
class RelationDef:
    """A named relation over combination indices.

    ``transition`` is defined exactly on ``valid_inputs``; boundary
    pre-states (e.g. move_left from the leftmost column) are excluded
    rather than clamped, so the transition stays a well-defined function.
    """

    name: str
    arity: int
    transition: Callable[[tuple[int, ...]], int] = field(compare=False)
    valid_inputs: frozenset[tuple[int, ...]] = field(default_factory=frozenset)


def build_factor_space(preset: str | Sequence[FactorSpec]) -> FactorSpace:
    """Build a FactorSpace from a preset name or a custom FactorSpec list."""
    if isinstance(preset, str):
        if preset == "hwf-like":
            factors = (
                FactorSpec("symbol", HWF_SYMBOLS),
                FactorSpec("thickness", ("free",), is_nuisance=True),
                FactorSpec("jitter", ("free",), is_nuisance=True),
            )
        elif preset == "dsprites":
            factors = (
                FactorSpec("x_position", ("left", "center", "right")),
                FactorSpec("y_position", ("up", "center", "down")),
                FactorSpec("shape", ("ellipse", "square", "heart")),
                FactorSpec("scale", ("free",), is_nuisance=True),
                FactorSpec("orientation", ("free",), is_nuisance=True),
            )
        elif preset == "shapes3d":
            factors = (
                FactorSpec("object_color", tuple(f"hue_{i}" for i in range(10))),
                FactorSpec("shape", ("cube", "sphere", "cylinder", "ellipsoid")),
                FactorSpec("scale", ("small", "medium", "big")),
                FactorSpec("floor_color", ("free",), is_nuisance=True),
                FactorSpec("background_color", ("free",), is_nuisance=True),
                FactorSpec("orientation", ("free",), is_nuisance=True),
            )
        else:
            raise ValueError(f"unknown preset {preset!r}")
        return FactorSpace(factors, preset=preset)
    return FactorSpace(tuple(preset))


def combination_to_index(space: FactorSpace, combo: FactorCombination | Sequence[str]) -> int:
    """Mixed-radix rank of a non-nuisance value tuple, in [0, N)."""
    values = combo.values if isinstance(combo, FactorCombination) else tuple(combo)
    relevant = space.relevant
    if len(values) != len(relevant):
        raise ValueError(
            f"expected {len(relevant)} values (one per non-nuisance factor), got {len(values)}"
        )
    index = 0
    for spec, value in zip(relevant, values):
        try:
            digit = spec.values.index(value)
        except ValueError:
            raise ValueError(f"unknown value {value!r} for factor {spec.name!r}") from None
        index = index * len(spec.values) + digit
    return index


def index_to_combination(space: FactorSpace, index: int) -> FactorCombination:
    """Inverse of combination_to_index."""
    if not 0 <= index < space.N:
        raise ValueError(f"index {index} out of range [0, {space.N})")
    digits = []
    rest = index
    for card in reversed(space.cardinalities):
        digits.append(rest % card)
        rest //= card
    digits.reverse()
    values = tuple(spec.values[d] for spec, d in zip(space.relevant, digits))
    return FactorCombination(values, index)


def index_to_value_indices(space: FactorSpace, index: int) -> tuple[int, ...]:
    """Per-factor value indices (K of them) for a combination index."""
    if not 0 <= index < space.N:
        raise ValueError(f"index {index} out of range [0, {space.N})")
    digits = []
    rest = index
    for card in reversed(space.cardinalities):
        digits.append(rest % card)
        rest //= card
    return tuple(reversed(digits))


def _step_factor(space: FactorSpace, factor_pos: int, delta: int, cyclic: bool):
    """Unary relation stepping one factor's value index by delta.

    Non-cyclic steps exclude the boundary pre-states from valid_inputs.
    """
    card = space.cardinalities[factor_pos]

    def transition(inputs: tuple[int, ...]) -> int:
        digits = list(index_to_value_indices(space, inputs[0]))
        digits[factor_pos] = (digits[factor_pos] + delta) % card
        index = 0
        for c, d in zip(space.cardinalities, digits):
            index = index * c + d
        return index

    valid = []
    for i in range(space.N):
        d = index_to_value_indices(space, i)[factor_pos]
        if cyclic or 0 <= d + delta < card:
            valid.append((i,))
    return transition, frozenset(valid)


def _unary(space, name, factor_name, delta, cyclic=False) -> RelationDef:
    pos = [f.name for f in space.relevant].index(factor_name)
    transition, valid = _step_factor(space, pos, delta, cyclic)
    return RelationDef(name, 1, transition, valid)


def _hwf_binary(name: str, op: Callable[[int, int], int]) -> RelationDef:
    valid = frozenset(
        (i, j)
        for i in range(10)
        for j in range(10)
        if 0 <= op(i, j) <= 9
    )

    def transition(inputs: tuple[int, ...]) -> int:
        return op(inputs[0], inputs[1])

    return RelationDef(name, 2, transition, valid)


def builtin_relations(space: FactorSpace, preset: str | None = None) -> list[RelationDef]:
    """The per-preset relation sets over combination indices."""
    preset = preset or space.preset
    if preset == "hwf-like":
        return [
            _hwf_binary("sum", lambda i, j: i + j),
            _hwf_binary("subtraction", lambda i, j: i - j),
            _hwf_binary("multiplication", lambda i, j: i * j),
        ]
    if preset == "dsprites":
        return [
            _unary(space, "move_left", "x_position", -1),
            _unary(space, "move_right", "x_position", +1),
            _unary(space, "move_up", "y_position", -1),
            _unary(space, "move_down", "y_position", +1),
            _unary(space, "change_shape", "shape", +1, cyclic=True),
        ]
    if preset == "shapes3d":
        return [
            _unary(space, "+_hue", "object_color", +1),
            _unary(space, "-_hue", "object_color", -1),
            _unary(space, "change_shape", "shape", +1, cyclic=True),
            _unary(space, "+_scale", "scale", +1),
            _unary(space, "-_scale", "scale", -1),
        ]
    raise ValueError(f"unknown preset {preset!r}")


def apply_relation(rel: RelationDef, inputs: tuple[int, ...] | Iterable[int]) -> int:
    """Apply a relation's transition; inputs must be a valid pre-state."""
    inputs = tuple(inputs)
    if len(inputs) != rel.arity:
        raise ValueError(f"relation {rel.name!r} has arity {rel.arity}, got {len(inputs)} inputs")
    if inputs not in rel.valid_inputs:
        raise ValueError(f"invalid pre-state {inputs} for relation {rel.name!r}")
    return rel.transition(inputs)


def hwf_operator_components(space: FactorSpace) -> dict[str, int]:
    """Map hwf relation names to the prior component of their operator glyph."""
    symbol = space.relevant[0]
    return {
        "sum": symbol.values.index("+"),
        "subtraction": symbol.values.index("-"),
        "multiplication": symbol.values.index("*"),
    }


def save_space_spec(path, space: FactorSpace, relations: Sequence[RelationDef] = ()) -> None:
    """Write the human-readable factor/relation spec file."""
    with open(path, "w") as fh:
        if space.preset:
            fh.write(f"preset {space.preset}\n")
        for f in space.factors:
            kind = "nuisance" if f.is_nuisance else "factor"
            fh.write(f"{kind} {f.name} {','.join(f.values)}\n")
        for rel in relations:
            table = ";".join(
                f"{','.join(map(str, inp))}->{rel.transition(inp)}"
                for inp in sorted(rel.valid_inputs)
            )
            fh.write(f"relation {rel.name} {rel.arity} {table}\n")


def load_space_spec(path) -> tuple[FactorSpace, list[RelationDef]]:
    """Parse a file written by save_space_spec."""
    factors: list[FactorSpec] = []
    relations: list[RelationDef] = []
    preset = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            kind, rest = line.split(" ", 1)
            if kind == "preset":
                preset = rest
            elif kind in ("factor", "nuisance"):
                name, values = rest.split(" ", 1)
                factors.append(FactorSpec(name, tuple(values.split(",")), kind == "nuisance"))
            elif kind == "relation":
                name, arity, table = rest.split(" ", 2)
                mapping = {}
                for entry in table.split(";"):
                    src, dst = entry.split("->")
                    mapping[tuple(int(v) for v in src.split(","))] = int(dst)
                relations.append(
                    RelationDef(name, int(arity), mapping.__getitem__, frozenset(mapping))
                )
            else:
                raise ValueError(f"unrecognized spec line: {line!r}")
    space = FactorSpace(tuple(factors), preset=preset)
    return space, relations
