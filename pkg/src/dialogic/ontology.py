"""Domain/slot/act schema and its JSON form.

The ontology drives every validity check in the pipeline: which slots a goal
may constrain, which slots may be requested, and which acts a system turn may
carry in each domain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

# the 12 global dialog act types
ACT_TYPES = frozenset({
    "inform", "request", "select", "recommend", "nooffer", "offerbook",
    "offerbooked", "nobook", "welcome", "greet", "bye", "reqmore",
})

GENERAL_DOMAIN = "general"
GENERAL_ACTS = frozenset({"welcome", "greet", "bye", "reqmore"})

# sentinel slot/value for domain-only mentions and slotless acts
NONE = "none"

# slots that are legal in requests/acts without being goal constraints
EXTRA_SLOTS = frozenset({
    "address", "postcode", "phone", "reference", "id", "price", "time",
    "car", "choice",
})

# act lines name the price range as plain "price" in some domains
ACT_ONLY_SLOTS: dict[str, frozenset[str]] = {
    "hotel": frozenset({"choice", "price"}),
    "restaurant": frozenset({"choice", "price"}),
    "attraction": frozenset({"choice"}),
    "train": frozenset({"choice"}),
}

# surface spellings folded to one canonical slot name at parse/load time
SLOT_ALIASES: dict[str, str] = {
    "book stay": "stay",
    "book people": "people",
    "book day": "day",
    "book time": "time",
    "arriveby": "arrive",
    "arrive by": "arrive",
    "leaveat": "leave",
    "leave at": "leave",
    "price range": "pricerange",
    "star": "stars",
}


def canonical_slot(slot: str) -> str:
    slot = slot.strip().lower()
    return SLOT_ALIASES.get(slot, slot)


class OntologyError(ValueError):
    """Raised for schema violations in ontology data."""


@dataclass(frozen=True)
class DomainSchema:
    """Schema of one domain: goal slots, requestable slots, permitted acts."""

    informable: dict[str, tuple[str, ...]]  # slot -> candidate values, () = open-valued
    requestable: frozenset[str]
    acts: frozenset[str]
    queryable: bool

    def slot_universe(self, domain: str) -> frozenset[str]:
        extra = ACT_ONLY_SLOTS.get(domain, frozenset())
        return frozenset(self.informable) | self.requestable | extra


@dataclass(frozen=True)
class Ontology:
    """All domains plus convenience lookups used across the pipeline."""

    domains: dict[str, DomainSchema] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, schema in self.domains.items():
            bad_acts = schema.acts - ACT_TYPES
            if bad_acts:
                raise OntologyError(f"domain {name!r}: unknown act types {sorted(bad_acts)}")
            if name == GENERAL_DOMAIN and not schema.acts <= GENERAL_ACTS:
                raise OntologyError("general domain may only carry welcome/greet/bye/reqmore")
            stray = schema.requestable - frozenset(schema.informable) - EXTRA_SLOTS
            if stray:
                raise OntologyError(f"domain {name!r}: requestable slots {sorted(stray)} "
                                    "outside the slot universe")

    def has_domain(self, domain: str) -> bool:
        return domain in self.domains

    def schema(self, domain: str) -> DomainSchema:
        try:
            return self.domains[domain]
        except KeyError:
            raise OntologyError(f"unknown domain {domain!r}") from None

    def informable_slots(self, domain: str) -> list[str]:
        return list(self.schema(domain).informable)

    def candidates(self, domain: str, slot: str) -> tuple[str, ...]:
        return self.schema(domain).informable.get(slot, ())

    def is_informable(self, domain: str, slot: str) -> bool:
        return slot in self.schema(domain).informable

    def act_permitted(self, domain: str, act_type: str) -> bool:
        return self.has_domain(domain) and act_type in self.domains[domain].acts

    def act_slot_permitted(self, domain: str, slot: str) -> bool:
        if slot == NONE:
            return True
        return slot in self.schema(domain).slot_universe(domain)

    def goal_domains(self) -> list[str]:
        """Domains eligible for generated goals: a task can be pursued in them."""
        return [d for d, s in self.domains.items() if d != GENERAL_DOMAIN and s.informable]

    def queryable(self, domain: str) -> bool:
        return self.has_domain(domain) and self.domains[domain].queryable

    def to_json(self) -> dict:
        return {
            name: {
                "informable": {s: list(v) for s, v in schema.informable.items()},
                "requestable": sorted(schema.requestable),
                "acts": sorted(schema.acts),
                "queryable": schema.queryable,
            }
            for name, schema in self.domains.items()
        }

    @classmethod
    def from_json(cls, data: dict) -> "Ontology":
        if not isinstance(data, dict):
            raise OntologyError("ontology JSON must be an object of domains")
        domains: dict[str, DomainSchema] = {}
        for name, spec in data.items():
            try:
                informable = {
                    canonical_slot(slot): tuple(str(v).lower() for v in values)
                    for slot, values in spec.get("informable", {}).items()
                }
                schema = DomainSchema(
                    informable=informable,
                    requestable=frozenset(canonical_slot(s) for s in spec.get("requestable", [])),
                    acts=frozenset(spec.get("acts", [])),
                    queryable=bool(spec.get("queryable", False)),
                )
            except (TypeError, AttributeError) as exc:
                raise OntologyError(f"domain {name!r}: malformed schema ({exc})") from exc
            domains[str(name)] = schema
        return cls(domains=domains)


def load_ontology(path: str | Path) -> Ontology:
    """Load an ontology JSON file ({domain: {informable, requestable, acts, queryable}})."""
    with open(path, encoding="utf-8") as fh:
        return Ontology.from_json(json.load(fh))


def save_ontology(ontology: Ontology, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ontology.to_json(), fh, indent=2, ensure_ascii=False)
        fh.write("\n")


_DEFAULT: Ontology | None = None


def default_ontology() -> Ontology:
    """The bundled MultiWOZ-style ontology (7 task domains + general)."""
    global _DEFAULT
    if _DEFAULT is None:
        text = resources.files("dialogic").joinpath("data/ontology.json").read_text("utf-8")
        _DEFAULT = Ontology.from_json(json.loads(text))
    return _DEFAULT
