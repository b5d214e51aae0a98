"""Reference and target model layouts."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .diffcore import ContractError

DEFAULT_REFERENCE_LAYOUTS = (
    ("ref-a", (64,), "relu"),
    ("ref-b", (128,), "relu"),
    ("ref-c", (64, 64), "relu"),
    ("ref-d", (128, 64), "relu"),
    ("ref-e", (256,), "relu"),
    ("ref-f", (64, 32, 16), "relu"),
)
DEFAULT_TARGET_LAYOUT = ("target", (128, 64), "relu")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    hidden: tuple[int, ...]
    activation: str
    init_seed: int
    input_width: int
    output_width: int

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden:
            raise ContractError(f"{self.name}: at least one hidden layer is required")
        if any(h < 1 for h in self.hidden):
            raise ContractError(f"{self.name}: hidden widths must be positive")
        if self.activation not in ("relu", "tanh"):
            raise ContractError(f"{self.name}: unknown activation {self.activation!r}")
        if self.input_width < 1 or self.output_width < 1:
            raise ContractError(f"{self.name}: input and output widths must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["name"], tuple(d["hidden"]), d["activation"], int(d["init_seed"]),
                   int(d["input_width"]), int(d["output_width"]))

    def with_seed(self, seed: int) -> "ModelSpec":
        return ModelSpec(self.name, self.hidden, self.activation, seed,
                         self.input_width, self.output_width)


@dataclass(frozen=True)
class Zoo:
    references: tuple[ModelSpec, ...]
    target: ModelSpec

    def __post_init__(self):
        if not self.references:
            raise ContractError("a zoo needs at least one reference model")
        names = [s.name for s in self.references] + [self.target.name]
        if len(set(names)) != len(names):
            raise ContractError(f"model names must be unique, got {names}")

    def to_dict(self) -> dict:
        return {"references": [s.to_dict() for s in self.references],
                "target": self.target.to_dict()}


def param_count(spec: ModelSpec) -> int:
    widths = [spec.input_width, *spec.hidden, spec.output_width]
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def default_zoo(D: int, C: int, seed: int = 0) -> Zoo:
    """Six heterogeneous references plus a [128, 64] target."""
    if D < 1 or C < 1:
        raise ContractError("D and C must be positive")
    refs = tuple(
        ModelSpec(name, hidden, act, seed * 1000 + 101 * (i + 1), D, C)
        for i, (name, hidden, act) in enumerate(DEFAULT_REFERENCE_LAYOUTS)
    )
    name, hidden, act = DEFAULT_TARGET_LAYOUT
    return Zoo(refs, ModelSpec(name, hidden, act, seed * 1000 + 7, D, C))


def zoo_from_layouts(D: int, C: int, references, target, seed: int = 0) -> Zoo:
    """Build a zoo from ``(name, hidden, activation)`` triples."""
    refs = tuple(ModelSpec(n, tuple(h), a, seed * 1000 + 101 * (i + 1), D, C)
                 for i, (n, h, a) in enumerate(references))
    n, h, a = target
    return Zoo(refs, ModelSpec(n, tuple(h), a, seed * 1000 + 7, D, C))
