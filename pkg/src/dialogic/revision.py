"""Annotation verification and revision.

Two failure modes are repaired on the fly: slots the LLM forgot to annotate
(fixed by an auxiliary belief predictor, merged under LLM priority) and slots
it annotated without expressing (removed by the slot-value match filter).
System acts pass through an ordered, data-driven rule set.
"""

from __future__ import annotations

import json
import subprocess
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

from .database import BOOKING_SLOTS
from .model import (
    DialogAct,
    DialogueState,
    DbResult,
    Triple,
    Turn,
    TurnBelief,
)
from .ontology import GENERAL_DOMAIN, NONE, Ontology
from .textnorm import contains_phrase, find_phrase, match_tokens, parse_time, token_pairs

BOOLEAN_SLOTS = ("parking", "internet")

_BOOLEAN_CUES: dict[str, tuple[str, ...]] = {
    "parking": ("parking",),
    "internet": ("internet", "wifi"),
}

_NEGATIONS = {"no", "not", "n't", "without", "dont", "doesnt", "isnt", "never"}

_DONTCARE_CUES: tuple[tuple[str, ...], ...] = (
    ("dontcare",), ("dont", "care"), ("do", "not", "care"), ("do", "n't", "care"),
    ("does", "not", "matter"), ("does", "n't", "matter"), ("doesnt", "matter"),
    ("not", "matter"), ("no", "preference"), ("any",), ("either",),
    ("not", "picky"), ("not", "important"), ("whatever",),
)


# ---------------------------------------------------------------------------
# value matching
# ---------------------------------------------------------------------------

def _cue_positions(tokens: list[str], cue: str) -> list[int]:
    positions = [i for i, t in enumerate(tokens) if t == cue]
    # tolerate split spellings such as "wi fi"
    positions += [i for i in range(len(tokens) - 1) if tokens[i] + tokens[i + 1] == cue]
    return positions


def _boolean_match(slot: str, value: str, tokens: list[str]) -> bool:
    positions = []
    for cue in _BOOLEAN_CUES[slot]:
        positions.extend(_cue_positions(tokens, cue))
    if not positions:
        return False
    def negated(pos: int) -> bool:
        return any(t in _NEGATIONS for t in tokens[max(0, pos - 3): pos])
    if value == "yes":
        return any(not negated(p) for p in positions)
    if value == "no":
        return any(negated(p) for p in positions)
    return False


def dontcare_expressed(tokens: list[str]) -> bool:
    return any(contains_phrase(tokens, list(cue)) for cue in _DONTCARE_CUES)


def value_expressed(slot: str, value: str, tokens: list[str]) -> bool:
    """True when the slot value is considered expressed by the (tokenized) utterance."""
    if value == "dontcare":
        return dontcare_expressed(tokens)
    if slot in _BOOLEAN_CUES and value in ("yes", "no"):
        return _boolean_match(slot, value, tokens)
    return contains_phrase(tokens, match_tokens(value))


def slot_value_match_filter(belief: TurnBelief, utterance: str,
                            ontology: Ontology) -> TurnBelief:
    """Keep only triples whose value is matched in the utterance.

    Sentinel `none` slots and `general` entries are exempt and pass through.
    """
    return _filter_with_drops(belief, utterance)[0]


def _filter_with_drops(belief: TurnBelief, utterance: str) -> tuple[TurnBelief, list[Triple]]:
    tokens = match_tokens(utterance)
    kept = TurnBelief()
    dropped: list[Triple] = []
    for domain, slot, value in belief.triples():
        if domain == GENERAL_DOMAIN or slot == NONE or value == NONE:
            kept.set(domain, slot, value)
        elif value_expressed(slot, value, tokens):
            kept.set(domain, slot, value)
        else:
            dropped.append((domain, slot, value))
    return kept, dropped


# ---------------------------------------------------------------------------
# belief merge and revision
# ---------------------------------------------------------------------------

def merge_beliefs(gpt: TurnBelief, aux: TurnBelief) -> TurnBelief:
    """Key union with LLM priority on collisions; LLM entries come first."""
    merged = gpt.copy()
    for domain, slot, value in aux.triples():
        if slot == NONE:
            merged.entries.setdefault(domain, {})
            continue
        if merged.get(domain, slot) is None:
            merged.set(domain, slot, value)
    return merged


@dataclass(frozen=True)
class RevisionReport:
    """What the revision step changed for one user turn."""

    de_generation_fixes: tuple[Triple, ...] = ()   # aux-only triples that survived
    over_generation_drops: tuple[Triple, ...] = ()  # filtered-out triples
    aux_belief: TurnBelief | None = None

    @property
    def unchanged(self) -> bool:
        return not self.de_generation_fixes and not self.over_generation_drops


def revise_belief(gpt: TurnBelief, context: list[Turn], utterance: str,
                  aux: "AuxPredictor | None", ontology: Ontology
                  ) -> tuple[TurnBelief, RevisionReport]:
    """B = filter(merge(B_llm, B_aux)); reports fixes and drops."""
    aux_belief = aux.predict_belief(context, utterance) if aux is not None else TurnBelief()
    if aux_belief.validate(ontology):
        cleaned = TurnBelief()
        for domain, slot, value in aux_belief.triples():
            if slot != NONE and ontology.has_domain(domain) and ontology.is_informable(domain, slot):
                cleaned.set(domain, slot, value)
        aux_belief = cleaned
    merged = merge_beliefs(gpt, aux_belief)
    final, dropped = _filter_with_drops(merged, utterance)
    fixes = tuple(
        (d, s, v) for d, s, v in final.triples()
        if s != NONE and gpt.get(d, s) is None
    )
    return final, RevisionReport(
        de_generation_fixes=fixes,
        over_generation_drops=tuple(dropped),
        aux_belief=aux_belief,
    )


# ---------------------------------------------------------------------------
# dialog act rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RuleContext:
    state: DialogueState
    db: DbResult
    ontology: Ontology
    prior_acts: tuple[DialogAct, ...] = ()
    mentioned_domains: frozenset[str] = frozenset()

    def discussed(self, domain: str) -> bool:
        return domain in self.state.entries or domain in self.mentioned_domains


RuleFn = Callable[[tuple[Triple, ...], RuleContext], tuple[tuple[Triple, ...], list[str]]]


@dataclass(frozen=True)
class ActRule:
    name: str
    apply: RuleFn


@dataclass(frozen=True)
class ActRuleSet:
    rules: tuple[ActRule, ...]

    def run(self, act: DialogAct, ctx: RuleContext) -> tuple[tuple[Triple, ...], list[str]]:
        triples = act.triples
        firings: list[str] = []
        for rule in self.rules:
            triples, fired = rule.apply(triples, ctx)
            firings.extend(f"{rule.name}: {msg}" for msg in fired)
        return triples, firings


def _rule_permitted(triples, ctx):
    kept, fired = [], []
    for d, t, s in triples:
        if not ctx.ontology.act_permitted(d, t):
            fired.append(f"dropped ({d}, {t}, {s}); act not permitted for domain")
        elif not ctx.ontology.act_slot_permitted(d, s):
            fired.append(f"dropped ({d}, {t}, {s}); slot not permitted for domain")
        else:
            kept.append((d, t, s))
    return tuple(kept), fired


def _rule_nooffer_on_empty_db(triples, ctx):
    if ctx.db.bucket != "db_0":
        return triples, []
    out, fired = [], []
    for d, t, s in triples:
        if d == ctx.db.domain and t in ("inform", "recommend", "select", "offerbook"):
            out.append((d, "nooffer", NONE))
            fired.append(f"replaced ({d}, {t}, {s}) with nooffer; empty db result")
        else:
            out.append((d, t, s))
    return tuple(out), fired


def booking_slots(domain: str) -> frozenset[str]:
    return BOOKING_SLOTS.get(domain, frozenset({"stay", "day", "people", "time"}))


def _rule_offerbooked_needs_booking(triples, ctx):
    out, fired = [], []
    for d, t, s in triples:
        if t == "offerbooked":
            offered = any(pa.has("offerbook", d) for pa in ctx.prior_acts)
            booked = any(s2 in booking_slots(d) for s2 in ctx.state.entries.get(d, {}))
            if not (offered or booked):
                out.append((d, "inform", s))
                fired.append(f"downgraded ({d}, offerbooked, {s}) to inform; no booking context")
                continue
        out.append((d, t, s))
    return tuple(out), fired


def _rule_drop_undiscussed(triples, ctx):
    kept, fired = [], []
    for d, t, s in triples:
        if d != GENERAL_DOMAIN and not ctx.discussed(d):
            fired.append(f"dropped ({d}, {t}, {s}); domain never discussed")
        else:
            kept.append((d, t, s))
    return tuple(kept), fired


def _rule_dedupe(triples, ctx):
    seen, kept, fired = set(), [], []
    for triple in triples:
        if triple in seen:
            fired.append(f"dropped duplicate {triple}")
        else:
            seen.add(triple)
            kept.append(triple)
    return tuple(kept), fired


def default_act_rules() -> ActRuleSet:
    return ActRuleSet(rules=(
        ActRule("permitted-acts", _rule_permitted),
        ActRule("nooffer-on-empty-db", _rule_nooffer_on_empty_db),
        ActRule("offerbooked-needs-booking", _rule_offerbooked_needs_booking),
        ActRule("drop-undiscussed-domains", _rule_drop_undiscussed),
        ActRule("dedupe", _rule_dedupe),
    ))


FALLBACK_ACT = DialogAct(((GENERAL_DOMAIN, "reqmore", NONE),))


def validate_act(act: DialogAct, belief_state: DialogueState, db: DbResult,
                 ontology: Ontology, rules: ActRuleSet | None = None, *,
                 prior_acts: Sequence[DialogAct] = (),
                 mentioned_domains: frozenset[str] | None = None
                 ) -> tuple[DialogAct, list[str]]:
    """Apply the act rule set; always returns a valid act (never empty)."""
    rules = rules or default_act_rules()
    ctx = RuleContext(
        state=belief_state,
        db=db,
        ontology=ontology,
        prior_acts=tuple(prior_acts),
        mentioned_domains=mentioned_domains
        if mentioned_domains is not None else frozenset(belief_state.domains()),
    )
    triples, firings = rules.run(act, ctx)
    if not triples:
        firings.append("fallback: empty act mapped to (general, reqmore, none)")
        return FALLBACK_ACT, firings
    return DialogAct(triples), firings


def revise_act(gpt_act: DialogAct, *, belief_state: DialogueState, db: DbResult,
               ontology: Ontology, rules: ActRuleSet | None = None,
               prior_acts: Sequence[DialogAct] = (),
               mentioned_domains: frozenset[str] | None = None,
               aux: "AuxPredictor | None" = None,
               context: list[Turn] | None = None,
               utterance: str = "",
               belief: TurnBelief | None = None
               ) -> tuple[DialogAct, list[str], bool]:
    """Rule-validate the LLM act; consult the auxiliary act only on outright failure."""
    revised, firings = validate_act(
        gpt_act, belief_state, db, ontology, rules,
        prior_acts=prior_acts, mentioned_domains=mentioned_domains)
    outright_failure = not gpt_act.is_empty() and revised == FALLBACK_ACT
    if outright_failure and aux is not None:
        aux_act = aux.predict_act(context or [], utterance, belief or TurnBelief(), db)
        revised, aux_firings = validate_act(
            aux_act, belief_state, db, ontology, rules,
            prior_acts=prior_acts, mentioned_domains=mentioned_domains)
        firings.extend("aux " + f for f in aux_firings)
        return revised, firings, True
    return revised, firings, False


# ---------------------------------------------------------------------------
# auxiliary predictors
# ---------------------------------------------------------------------------

class AuxPredictor:
    """Interface for the auxiliary annotation model."""

    def predict_belief(self, context: list[Turn], utterance: str) -> TurnBelief:
        raise NotImplementedError

    def predict_act(self, context: list[Turn], utterance: str, belief: TurnBelief,
                    db: DbResult) -> DialogAct:
        raise NotImplementedError


_DOMAIN_KEYWORDS: dict[str, tuple[str, ...]] = {
    "hotel": ("hotel", "hotels", "guesthouse", "guesthouses", "accommodation", "lodging"),
    "restaurant": ("restaurant", "restaurants", "eat", "dine", "dining", "food"),
    "train": ("train", "trains"),
    "taxi": ("taxi", "cab"),
    "attraction": ("attraction", "attractions", "museum", "college", "park", "nightclub",
                   "theatre", "cinema", "church", "architecture", "boat", "entertainment"),
    "hospital": ("hospital",),
    "police": ("police",),
}

_DAY_NAMES = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")

_NUMBER_UNITS = {
    "people": "people", "person": "people", "guests": "people",
    "night": "stay", "nights": "stay",
    "star": "stars", "stars": "stars",
    "ticket": "people", "tickets": "people",
}

_ARRIVE_CUES = {"arrive", "arrives", "arrival", "arriving", "by"}
_LEAVE_CUES = {"leave", "leaves", "leaving", "depart", "departs", "departing", "after"}
_DEPARTURE_CUES = {"from", "leave", "leaves", "leaving", "depart", "departs", "departing"}
_DESTINATION_CUES = {"to", "arrive", "arrives", "arriving", "reach", "reaches"}


class LexicalAuxPredictor(AuxPredictor):
    """Ontology/seed-driven stand-in for a trained auxiliary model.

    Every emitted triple's value (or cue) is present in the normalized
    utterance, so its output always survives the match filter.
    """

    def __init__(self, ontology: Ontology, seeds=None):
        self.ontology = ontology
        self._lexicon: dict[tuple[str, ...], list[Triple]] = {}
        for domain in ontology.goal_domains():
            for slot in ontology.informable_slots(domain):
                for value in ontology.candidates(domain, slot):
                    self._add_value(domain, slot, value)
        if seeds is not None:
            for (domain, slot), values in seeds.observed_values().items():
                for value in values:
                    if ontology.has_domain(domain) and ontology.is_informable(domain, slot):
                        self._add_value(domain, slot, value)

    def _add_value(self, domain: str, slot: str, value: str) -> None:
        if value in ("yes", "no", "dontcare", NONE):
            return
        tokens = tuple(match_tokens(value))
        # bare digits, day names, and times fire contextually, not lexically
        if not tokens or all(t.isdigit() for t in tokens):
            return
        if len(tokens) == 1 and (tokens[0] in _DAY_NAMES or parse_time(tokens[0]) is not None):
            return
        entry = (domain, slot, value)
        bucket = self._lexicon.setdefault(tokens, [])
        if entry not in bucket:
            bucket.append(entry)

    def _active_domains(self, tokens: list[str], context: list[Turn]) -> list[str]:
        found: dict[str, int] = {}
        for domain, keywords in _DOMAIN_KEYWORDS.items():
            for kw in keywords:
                if kw in tokens:
                    pos = tokens.index(kw)
                    if domain not in found or pos < found[domain]:
                        found[domain] = pos
        ordered = [d for d, _ in sorted(found.items(), key=lambda kv: kv[1])]
        for turn in reversed(context):
            for domain in reversed(turn.belief.task_domains()):
                if domain not in ordered:
                    ordered.append(domain)
                break
        return ordered

    def _first_with_slot(self, domains: list[str], slot: str) -> str | None:
        for domain in domains:
            if self.ontology.has_domain(domain) and self.ontology.is_informable(domain, slot):
                return domain
        return None

    def predict_belief(self, context: list[Turn], utterance: str) -> TurnBelief:
        pairs = token_pairs(utterance)
        tokens = [norm for _, norm in pairs]
        domains = self._active_domains(tokens, context)
        belief = TurnBelief()

        def emit(domain: str, slot: str, value: str) -> None:
            if belief.get(domain, slot) is None:
                belief.set(domain, slot, value)

        # literal values from the lexicon, longest phrases first
        for phrase in sorted(self._lexicon, key=len, reverse=True):
            pos = find_phrase(tokens, list(phrase))
            if pos is None:
                continue
            candidates = self._lexicon[phrase]
            scoped = []
            for domain in domains:
                scoped = [c for c in candidates if c[0] == domain]
                if scoped:
                    break
            if not scoped and len({c[0] for c in candidates}) == 1:
                scoped = list(candidates)
            if not scoped:
                continue
            slots = {c[1] for c in scoped}
            if {"departure", "destination"} <= slots:
                # place names are ambiguous without a direction cue
                window = set(tokens[max(0, pos - 2): pos])
                if window & _DESTINATION_CUES:
                    scoped = [c for c in scoped if c[1] == "destination"]
                elif window & _DEPARTURE_CUES:
                    scoped = [c for c in scoped if c[1] == "departure"]
                else:
                    continue
            emit(*scoped[0])

        # numbers with units: "4 people", "5 nights", "3 star"
        for i, tok in enumerate(tokens[:-1]):
            if tok.isdigit() and tokens[i + 1] in _NUMBER_UNITS:
                slot = _NUMBER_UNITS[tokens[i + 1]]
                domain = self._first_with_slot(domains, slot)
                if domain:
                    emit(domain, slot, tok)

        # day names
        for tok in tokens:
            if tok in _DAY_NAMES:
                domain = self._first_with_slot(domains, "day")
                if domain:
                    emit(domain, "day", tok)

        # clock times with a leave/arrive cue nearby; emit the surface form
        for i, tok in enumerate(tokens):
            if parse_time(tok) is None:
                continue
            window = set(tokens[max(0, i - 3): i])
            slot = None
            if window & _ARRIVE_CUES:
                slot = "arrive"
            elif window & _LEAVE_CUES:
                slot = "leave"
            if slot:
                domain = self._first_with_slot(domains, slot)
                if domain:
                    emit(domain, slot, pairs[i][0])

        # boolean slots via cue phrases
        for slot in BOOLEAN_SLOTS:
            domain = self._first_with_slot(domains, slot)
            if domain is None:
                continue
            for value in ("no", "yes"):
                if _boolean_match(slot, value, tokens):
                    emit(domain, slot, value)
                    break

        # dontcare answers attach to the slots the system just requested
        if dontcare_expressed(tokens) and context:
            for domain, slot in context[-1].act.slots_of("request"):
                if self.ontology.has_domain(domain) and self.ontology.is_informable(domain, slot):
                    emit(domain, slot, "dontcare")
        return belief

    def predict_act(self, context: list[Turn], utterance: str, belief: TurnBelief,
                    db: DbResult) -> DialogAct:
        domain = next(iter(belief.task_domains()), None)
        if domain is None:
            for turn in reversed(context):
                task = turn.belief.task_domains()
                if task:
                    domain = task[-1]
                    break
        if domain is None:
            return FALLBACK_ACT
        if db.bucket == "db_0":
            return DialogAct(((domain, "nooffer", NONE),))
        triples: list[Triple] = []
        if self.ontology.act_permitted(domain, "inform") and db.bucket != "db_nores":
            triples.append((domain, "inform", "choice"))
        if self.ontology.act_permitted(domain, "offerbook"):
            triples.append((domain, "offerbook", NONE))
        if not triples:
            return FALLBACK_ACT
        return DialogAct(tuple(triples))


def _turn_wire(turn: Turn) -> dict:
    return {
        "user": turn.user_utterance,
        "belief": turn.belief.to_dict(),
        "act": turn.act.to_json(),
        "resp": turn.system_response,
    }


class SubprocessAuxPredictor(AuxPredictor):
    """Adapter for an external model speaking newline-delimited JSON on a pipe.

    Belief requests carry {context, utterance}; act requests additionally carry
    {belief, db}. Responses are {"belief": {...}} or {"act": [[...]]}.
    """

    def __init__(self, argv: Sequence[str]):
        self.argv = list(argv)
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
        return self._proc

    def _roundtrip(self, request: dict) -> dict:
        with self._lock:
            proc = self._ensure()
            proc.stdin.write(json.dumps(request, ensure_ascii=False) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        if not line:
            raise RuntimeError(f"aux subprocess {self.argv[0]!r} closed its pipe")
        return json.loads(line)

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)

    def predict_belief(self, context: list[Turn], utterance: str) -> TurnBelief:
        reply = self._roundtrip({
            "context": [_turn_wire(t) for t in context], "utterance": utterance})
        return TurnBelief.from_dict(reply.get("belief", {}))

    def predict_act(self, context, utterance, belief, db) -> DialogAct:
        reply = self._roundtrip({
            "context": [_turn_wire(t) for t in context], "utterance": utterance,
            "belief": belief.to_dict(), "db": db.to_json()})
        return DialogAct.from_triples(reply.get("act", []))


class HttpAuxPredictor(AuxPredictor):
    """Adapter for an external model behind an HTTP POST endpoint."""

    def __init__(self, url: str, timeout: float = 30.0):
        import requests

        self.url = url
        self.timeout = timeout
        self._session = requests.Session()

    def _post(self, request: dict) -> dict:
        response = self._session.post(self.url, json=request, timeout=self.timeout)
        response.raise_for_status()
        return response.json()

    def predict_belief(self, context: list[Turn], utterance: str) -> TurnBelief:
        reply = self._post({
            "context": [_turn_wire(t) for t in context], "utterance": utterance})
        return TurnBelief.from_dict(reply.get("belief", {}))

    def predict_act(self, context, utterance, belief, db) -> DialogAct:
        reply = self._post({
            "context": [_turn_wire(t) for t in context], "utterance": utterance,
            "belief": belief.to_dict(), "db": db.to_json()})
        return DialogAct.from_triples(reply.get("act", []))
