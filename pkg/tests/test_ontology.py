import pytest

from dialogic.ontology import (
    ACT_TYPES,
    DomainSchema,
    Ontology,
    OntologyError,
    canonical_slot,
    default_ontology,
    load_ontology,
    save_ontology,
)


def test_twelve_global_act_types():
    assert len(ACT_TYPES) == 12
    assert {"inform", "request", "offerbook", "offerbooked", "nobook",
            "nooffer", "select", "recommend", "welcome", "greet", "bye",
            "reqmore"} == set(ACT_TYPES)


def test_canonical_slot_aliases():
    assert canonical_slot("book stay") == "stay"
    assert canonical_slot("book people") == "people"
    assert canonical_slot("book day") == "day"
    assert canonical_slot("arriveby") == "arrive"
    assert canonical_slot("leaveat") == "leave"
    assert canonical_slot("star") == "stars"
    assert canonical_slot("area") == "area"


def test_default_ontology_shape(ontology):
    assert set(ontology.domains) == {
        "restaurant", "hotel", "attraction", "taxi", "train",
        "hospital", "police", "general"}
    assert ontology.queryable("hotel")
    assert not ontology.queryable("taxi")
    assert ontology.is_informable("hotel", "stay")
    assert not ontology.is_informable("hotel", "reference")
    assert ontology.act_permitted("hotel", "nobook")
    assert not ontology.act_permitted("taxi", "offerbook")
    assert ontology.act_permitted("general", "bye")
    assert not ontology.act_permitted("general", "inform")


def test_act_slot_universe(ontology):
    assert ontology.act_slot_permitted("hotel", "choice")
    assert ontology.act_slot_permitted("hotel", "price")
    assert ontology.act_slot_permitted("hotel", "reference")
    assert ontology.act_slot_permitted("train", "id")
    assert ontology.act_slot_permitted("hotel", "none")
    assert not ontology.act_slot_permitted("hotel", "frobnicate")


def test_requestable_outside_universe_rejected():
    with pytest.raises(OntologyError, match="requestable"):
        Ontology(domains={"hotel": DomainSchema(
            informable={"area": ("south",)},
            requestable=frozenset({"swimming"}),
            acts=frozenset({"inform"}), queryable=True)})


def test_general_domain_act_restriction():
    with pytest.raises(OntologyError):
        Ontology(domains={"general": DomainSchema(
            informable={}, requestable=frozenset(),
            acts=frozenset({"inform"}), queryable=False)})


def test_unknown_act_type_rejected():
    with pytest.raises(OntologyError, match="unknown act"):
        Ontology(domains={"hotel": DomainSchema(
            informable={}, requestable=frozenset(),
            acts=frozenset({"summon"}), queryable=True)})


def test_ontology_json_round_trip(tmp_path, ontology):
    path = tmp_path / "ont.json"
    save_ontology(ontology, path)
    again = load_ontology(path)
    assert again.to_json() == ontology.to_json()


def test_ontology_loads_aliased_slot_names(tmp_path):
    path = tmp_path / "ont.json"
    path.write_text(
        '{"hotel": {"informable": {"book stay": ["1", "2"]}, "requestable": [],'
        ' "acts": ["inform"], "queryable": true}}', encoding="utf-8")
    ont = load_ontology(path)
    assert ont.is_informable("hotel", "stay")


def test_default_ontology_cached():
    assert default_ontology() is default_ontology()
