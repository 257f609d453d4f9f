"""Core data model: goals, beliefs, acts, turns, dialogues, generation config."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

from .ontology import GENERAL_DOMAIN, NONE, Ontology, canonical_slot

Triple = tuple[str, str, str]

# provenance tags for dialogues in a corpus
SOURCE_SEED = "seed"
SOURCE_SIMULATED = "simulated"
SOURCE_DST_AUGMENTED = "dst_augmented"
SOURCES = (SOURCE_SEED, SOURCE_SIMULATED, SOURCE_DST_AUGMENTED)

SPECIAL_VALUES = ("dontcare", "yes", "no", NONE)


class ValidationError(ValueError):
    """A triple or dialogue violates the ontology or a structural invariant."""


class TripletMap:
    """Ordered domain -> slot -> value map; the shared shape of goals and beliefs.

    A domain key with an empty slot dict encodes a domain-only mention,
    i.e. the triple (domain, none, none).
    """

    __slots__ = ("entries",)

    def __init__(self, entries: dict[str, dict[str, str]] | None = None):
        self.entries: dict[str, dict[str, str]] = {
            d: dict(slots) for d, slots in (entries or {}).items()
        }

    @classmethod
    def from_triples(cls, triples: Iterable[Triple]):
        obj = cls()
        for domain, slot, value in triples:
            obj.set(domain, slot, value)
        return obj

    @classmethod
    def from_dict(cls, data: dict[str, dict[str, str]]):
        """Build from plain JSON data, folding slot aliases to canonical names."""
        obj = cls()
        for domain, slots in data.items():
            obj.entries.setdefault(domain, {})
            for slot, value in slots.items():
                obj.set(domain, canonical_slot(slot), str(value).lower())
        return obj

    def set(self, domain: str, slot: str, value: str) -> None:
        if slot == NONE:
            self.entries.setdefault(domain, {})
            return
        self.entries.setdefault(domain, {})[slot] = value

    def get(self, domain: str, slot: str) -> str | None:
        return self.entries.get(domain, {}).get(slot)

    def triples(self) -> list[Triple]:
        out: list[Triple] = []
        for domain, slots in self.entries.items():
            if not slots:
                out.append((domain, NONE, NONE))
            for slot, value in slots.items():
                out.append((domain, slot, value))
        return out

    def domains(self) -> list[str]:
        return list(self.entries)

    def task_domains(self) -> list[str]:
        return [d for d in self.entries if d != GENERAL_DOMAIN]

    def qualified_slots(self) -> set[str]:
        """Domain-qualified slot names, e.g. 'hotel.stay'."""
        return {f"{d}.{s}" for d, slots in self.entries.items() for s in slots}

    def slot_count(self) -> int:
        return sum(len(slots) for slots in self.entries.values())

    def is_empty(self) -> bool:
        return not self.entries

    def to_dict(self) -> dict[str, dict[str, str]]:
        return {d: dict(slots) for d, slots in self.entries.items()}

    def copy(self):
        return type(self)(self.entries)

    def validate(self, ontology: Ontology, *, informable_only: bool = True) -> list[str]:
        """Return a list of violation messages (empty when ontology-valid)."""
        problems = []
        for domain, slots in self.entries.items():
            if not ontology.has_domain(domain):
                problems.append(f"unknown domain {domain!r}")
                continue
            for slot in slots:
                if domain == GENERAL_DOMAIN:
                    problems.append(f"general domain carries slot {slot!r}")
                elif informable_only and not ontology.is_informable(domain, slot):
                    problems.append(f"{domain}.{slot} is not an informable slot")
        return problems

    def __iter__(self) -> Iterator[Triple]:
        return iter(self.triples())

    def __len__(self) -> int:
        return len(self.triples())

    def __eq__(self, other) -> bool:
        return type(self) is type(other) and self.entries == other.entries

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.entries!r})"


class UserGoal(TripletMap):
    """The constraint set a simulated user pursues across a dialogue."""


class TurnBelief(TripletMap):
    """The per-turn delta of the user goal expressed in one user utterance."""


class DialogueState(TripletMap):
    """Accumulation of turn beliefs up to some turn."""


def accumulate_state(turn_beliefs: Iterable[TurnBelief]) -> DialogueState:
    """Fold turn deltas into a state; later values overwrite earlier ones.

    Domain-only mentions and `general` entries contribute nothing.
    """
    state = DialogueState()
    for belief in turn_beliefs:
        for domain, slot, value in belief.triples():
            if domain == GENERAL_DOMAIN or slot == NONE:
                continue
            state.set(domain, slot, value)
    return state


@dataclass(frozen=True)
class DialogAct:
    """Ordered (domain, act_type, slot) triples describing a system turn."""

    triples: tuple[Triple, ...] = ()

    @classmethod
    def from_triples(cls, triples: Iterable[Iterable[str]]) -> "DialogAct":
        norm = tuple(
            (d, t, canonical_slot(s) if s and s != NONE else NONE)
            for d, t, s in ((str(a), str(b), str(c) if c is not None else NONE)
                            for a, b, c in triples)
        )
        return cls(norm)

    def domains(self) -> list[str]:
        seen: dict[str, None] = {}
        for d, _, _ in self.triples:
            seen.setdefault(d, None)
        return list(seen)

    def has(self, act_type: str, domain: str | None = None) -> bool:
        return any(
            t == act_type and (domain is None or d == domain)
            for d, t, _ in self.triples
        )

    def slots_of(self, act_type: str) -> list[tuple[str, str]]:
        return [(d, s) for d, t, s in self.triples if t == act_type and s != NONE]

    def is_empty(self) -> bool:
        return not self.triples

    def to_json(self) -> list[list[str]]:
        return [[d, t, s] for d, t, s in self.triples]

    def validate(self, ontology: Ontology) -> list[str]:
        problems = []
        for domain, act_type, slot in self.triples:
            if not ontology.has_domain(domain):
                problems.append(f"unknown domain {domain!r}")
                continue
            if not ontology.act_permitted(domain, act_type):
                problems.append(f"act {act_type!r} not permitted in domain {domain!r}")
            if not ontology.act_slot_permitted(domain, slot):
                problems.append(f"slot {slot!r} not permitted in acts of domain {domain!r}")
        return problems


EMPTY_ACT = DialogAct()

DB_BUCKETS = ("db_0", "db_1", "db_2", "db_3", "db_nores")


@dataclass(frozen=True)
class DbResult:
    """Entity count for the active domain, discretized to a bucket token."""

    domain: str
    count: int
    bucket: str

    def __post_init__(self):
        if self.count < 0:
            raise ValidationError("db count must be nonnegative")
        if self.bucket not in DB_BUCKETS:
            raise ValidationError(f"unknown db bucket {self.bucket!r}")

    def to_json(self) -> dict:
        return {"domain": self.domain, "count": self.count, "bucket": self.bucket}

    @classmethod
    def from_json(cls, data: dict) -> "DbResult":
        return cls(domain=data["domain"], count=int(data["count"]), bucket=data["bucket"])


NO_RESULT = DbResult(GENERAL_DOMAIN, 0, "db_nores")


@dataclass
class Turn:
    """One user/system exchange with raw and revised annotations.

    `gpt_belief`/`gpt_act`/`aux_belief` hold the unrevised annotations when the
    turn was produced by the simulator; they are None for loaded corpora, which
    persist only revised annotations.
    """

    user_utterance: str
    belief: TurnBelief
    db: DbResult
    act: DialogAct
    system_response: str
    gpt_belief: TurnBelief | None = None
    aux_belief: TurnBelief | None = None
    gpt_act: DialogAct | None = None


@dataclass
class Dialogue:
    """A conversation record: goal, turns, provenance."""

    id: str
    initial_goal: UserGoal
    final_goal: UserGoal
    turns: list[Turn] = field(default_factory=list)
    source: str = SOURCE_SEED

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValidationError(f"unknown dialogue source {self.source!r}")

    @property
    def goal(self) -> UserGoal:
        return self.final_goal


@dataclass(frozen=True)
class DecodeConfig:
    """Sampling parameters passed through to the completion backend."""

    temperature: float = 0.7
    top_p: float = 1.0
    frequency_penalty: float = 1.0
    max_tokens: int = 256

    @classmethod
    def nucleus(cls) -> "DecodeConfig":
        """Alternative preset: pure top-p decoding with p=0.7."""
        return cls(temperature=1.0, top_p=0.7, frequency_penalty=1.0)


@dataclass(frozen=True)
class GenConfig:
    """Knobs for goal generation, example selection, and the simulation loop."""

    n_shots: int = 2
    select_temperature: float = 0.2
    max_turns: int = 12
    max_domains: int = 4
    max_slots_per_domain: int = 6
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    retries: int = 2
    rng_seed: int | None = None

    def __post_init__(self):
        if self.select_temperature <= 0:
            raise ValidationError("select_temperature must be > 0")
        if self.n_shots < 1:
            raise ValidationError("n_shots must be >= 1")
        if self.max_turns < 1:
            raise ValidationError("max_turns must be >= 1")

    def with_seed(self, seed: int | None) -> "GenConfig":
        return replace(self, rng_seed=seed)
