"""Prompt personas and their corruption settings."""

from __future__ import annotations

from dataclasses import dataclass, field

REWARD_VALUES = (-2, -1, 0, 1, 2)
K = 2  # max |reward|
PERSONA_KINDS = ("naive", "icl-1", "icl-2", "icl-3", "cot", "extra")

# prompt kinds used for each supported persona count
KIND_SETS = {
    1: ("cot",),
    3: ("icl-1", "icl-2", "cot"),
    5: ("naive", "icl-1", "icl-2", "icl-3", "cot"),
    7: ("naive", "icl-1", "icl-2", "icl-3", "cot", "extra", "extra"),
}


def clamp_reward(v: int) -> int:
    return max(-K, min(K, int(v)))


@dataclass(frozen=True)
class PersonaSpec:
    id: int
    kind: str = "naive"
    flip_rate: float = 0.0
    bias: int = 0
    misconception: dict[str, str] | None = None  # item -> believed home
    qa_error_rate: float = 0.0
    verify_error_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERSONA_KINDS:
            raise ValueError(f"unknown persona kind {self.kind!r}")
        for name in ("flip_rate", "qa_error_rate", "verify_error_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def __hash__(self):
        return hash((self.id, self.kind, self.seed))

    @property
    def clean(self) -> bool:
        return (self.flip_rate == 0 and self.bias == 0 and not self.misconception
                and self.qa_error_rate == 0 and self.verify_error_rate == 0)

    def to_json(self) -> dict:
        d = {"id": self.id, "kind": self.kind, "flip_rate": self.flip_rate, "bias": self.bias,
             "qa_error_rate": self.qa_error_rate, "verify_error_rate": self.verify_error_rate,
             "seed": self.seed}
        if self.misconception:
            d["misconception"] = dict(sorted(self.misconception.items()))
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PersonaSpec":
        known = {"id", "kind", "flip_rate", "bias", "misconception", "qa_error_rate",
                 "verify_error_rate", "seed"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown persona fields {sorted(extra)}")
        return cls(**d)


def default_personas(n: int = 5, flip_rate: float = 0.0, qa_error_rate: float = 0.0,
                     verify_error_rate: float = 0.0, seed: int = 0,
                     misconception: dict[str, str] | None = None, misinformed: int = 0) -> list[PersonaSpec]:
    """N personas sharing one corruption profile, each with its own random stream.

    The first ``misinformed`` personas additionally hold ``misconception``.
    """
    if n < 1:
        raise ValueError("need at least one persona")
    if not 0 <= misinformed <= n:
        raise ValueError("misinformed must lie in [0, n]")
    if misinformed and not misconception:
        raise ValueError("misinformed personas need a misconception")
    kinds = KIND_SETS.get(n) or tuple(KIND_SETS[5][i % 5] if i < 5 else "extra" for i in range(n))
    return [PersonaSpec(id=i + 1, kind=k, flip_rate=flip_rate, qa_error_rate=qa_error_rate,
                        verify_error_rate=verify_error_rate, seed=seed,
                        misconception=dict(misconception) if i < misinformed else None)
            for i, k in enumerate(kinds)]
