"""Dialogue simulation loop and turn-level augmentation for state tracking.

A simulation alternates completions for `User(` and `Assistant(` lines. Each
parsed annotation is revised (belief filter + act rules) and the prompt is
rewritten with the revised annotation before generation continues, so the LLM
never sees its own uncorrected errors.
"""

from __future__ import annotations

import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

from .backend import BackendError, CompletionBackend, CompletionRequest
from .corpus import SeedDataset
from .database import EntityDb
from .exemplar import (
    DEFAULT_TASK_DESCRIPTION,
    ParseError,
    PromptTooLong,
    build_prompt,
    estimate_tokens,
    format_system_line,
    format_user_line,
    goal_similarity,
    parse_system_line,
    parse_user_line,
    select_examples,
    serialize_act,
    serialize_goal,
)
from .goals import (
    GoalStrategy,
    ObservedValues,
    RsDistribution,
    STRATEGY_RANDOM,
    STRATEGY_SUBSTITUTION,
    generate_goal_combination,
    generate_goal_random,
    generate_goal_substitution,
)
from .model import (
    DialogAct,
    Dialogue,
    DbResult,
    GenConfig,
    NO_RESULT,
    SOURCE_DST_AUGMENTED,
    SOURCE_SIMULATED,
    Turn,
    TurnBelief,
    UserGoal,
    accumulate_state,
)
from .ontology import GENERAL_DOMAIN, NONE, Ontology
from .revision import AuxPredictor, revise_act, revise_belief, slot_value_match_filter
from .textnorm import normalize_text

USER_STOPS = ("\nAssistant",)
SYSTEM_STOPS = ("\nUser", "\nInstruction")

STATUS_ACTIVE = "active"
STATUS_FINISHED_BYE = "finished_bye"
STATUS_FINISHED_MAX_TURNS = "finished_max_turns"
STATUS_FAILED = "failed"

TraceSink = Callable[[dict], None]


class SimulationError(RuntimeError):
    """A run failed; `kind` is one of parse_error/backend_error/prompt_too_long."""

    def __init__(self, message: str, kind: str):
        super().__init__(message)
        self.kind = kind


class UnaugmentableTurn(ValueError):
    """No unmentioned slots or domains are available for this source turn."""


class RejectedSample(RuntimeError):
    """The prescribed belief never survived the filter within the retry budget."""


class SimulationRun:
    """One dialogue simulation: prompt state, revised turns, and status."""

    def __init__(self, goal: UserGoal, seeds: SeedDataset, backend: CompletionBackend,
                 aux: AuxPredictor | None, db: EntityDb, ontology: Ontology,
                 cfg: GenConfig, rng: random.Random, *, dialogue_id: str = "sim_0000",
                 task_description: str = DEFAULT_TASK_DESCRIPTION,
                 trace: TraceSink | None = None):
        self.goal = goal
        self.backend = backend
        self.aux = aux
        self.db = db
        self.ontology = ontology
        self.cfg = cfg
        self.rng = rng
        self.dialogue_id = dialogue_id
        self.trace = trace
        self.turns: list[Turn] = []
        self.status = STATUS_ACTIVE
        self.final_goal = goal.copy()
        self.active_domain: str | None = None
        self._mentioned: set[str] = set()
        examples, self.selection = select_examples(
            goal, seeds, cfg.n_shots, cfg.select_temperature, rng)
        try:
            self.prompt = build_prompt(
                task_description, examples, goal, ontology=ontology,
                context_budget=backend.context_budget)
        except PromptTooLong as exc:
            raise SimulationError(str(exc), kind="prompt_too_long") from exc

    # -- low-level completion ------------------------------------------------

    def _complete(self, prompt: str, stop: tuple[str, ...]) -> str:
        budget = self.backend.context_budget
        if budget is not None and estimate_tokens(prompt) + self.cfg.decode.max_tokens > budget:
            raise SimulationError(
                f"prompt grew past the context budget of {budget} tokens",
                kind="prompt_too_long")
        decode = self.cfg.decode
        request = CompletionRequest(
            prompt=prompt, max_tokens=decode.max_tokens, temperature=decode.temperature,
            top_p=decode.top_p, frequency_penalty=decode.frequency_penalty, stop=stop)
        try:
            return self.backend.complete(request)
        except BackendError as exc:
            raise SimulationError(str(exc), kind="backend_error") from exc

    def _complete_line(self, prefix: str, stop: tuple[str, ...], parser):
        last: Exception | None = None
        for _ in range(self.cfg.retries + 1):
            completion = self._complete(self.prompt + prefix, stop)
            line = prefix + completion.lstrip()
            try:
                annotation, text = parser(line)
            except ParseError as exc:
                last = exc
                continue
            problems = annotation.validate(self.ontology) if hasattr(annotation, "validate") else []
            if isinstance(annotation, TurnBelief) and problems:
                last = ParseError("; ".join(problems))
                continue
            return annotation, normalize_text(text)
        raise SimulationError(
            f"unparseable completion after {self.cfg.retries + 1} attempts: {last}",
            kind="parse_error")

    # -- the turn loop -------------------------------------------------------

    def _update_goal_drift(self, belief: TurnBelief) -> None:
        for domain, slot, value in belief.triples():
            if domain == GENERAL_DOMAIN or slot == NONE:
                continue
            if self.final_goal.get(domain, slot) != value:
                self.final_goal.set(domain, slot, value)

    def _query_db(self, belief: TurnBelief, state) -> DbResult:
        task = belief.task_domains()
        if task:
            self.active_domain = task[-1]
        elif belief.domains():
            # a general-only mention has no task domain to query
            self.active_domain = GENERAL_DOMAIN
        if self.active_domain is None or self.active_domain == GENERAL_DOMAIN:
            return NO_RESULT
        return self.db.query(self.active_domain, state.entries.get(self.active_domain, {}))

    def step(self) -> Turn:
        raw_belief, utterance = self._complete_line("User(", USER_STOPS, parse_user_line)
        belief, report = revise_belief(raw_belief, self.turns, utterance, self.aux, self.ontology)
        self.prompt += format_user_line(belief, utterance) + "\n"
        self._update_goal_drift(belief)
        self._mentioned.update(belief.domains())
        state = accumulate_state([t.belief for t in self.turns] + [belief])
        db_result = self._query_db(belief, state)

        raw_act, response = self._complete_line("Assistant(", SYSTEM_STOPS, parse_system_line)
        act, firings, used_aux = revise_act(
            raw_act, belief_state=state, db=db_result, ontology=self.ontology,
            prior_acts=[t.act for t in self.turns], mentioned_domains=frozenset(self._mentioned),
            aux=self.aux, context=self.turns, utterance=utterance, belief=belief)
        if act != raw_act:
            regenerated = self._complete(
                self.prompt + f"Assistant({serialize_act(act)}): ", SYSTEM_STOPS)
            if regenerated.strip():
                response = normalize_text(regenerated)
        self.prompt += format_system_line(act, response) + "\n"

        turn = Turn(
            user_utterance=utterance, belief=belief, db=db_result, act=act,
            system_response=response, gpt_belief=raw_belief,
            aux_belief=report.aux_belief, gpt_act=raw_act)
        self.turns.append(turn)
        if self.trace is not None:
            self.trace({
                "dialogue": self.dialogue_id,
                "turn": len(self.turns),
                "raw_belief": raw_belief.to_dict(),
                "aux_belief": report.aux_belief.to_dict() if report.aux_belief else {},
                "belief": belief.to_dict(),
                "over_generation_drops": [list(t) for t in report.over_generation_drops],
                "de_generation_fixes": [list(t) for t in report.de_generation_fixes],
                "db": db_result.to_json(),
                "raw_act": raw_act.to_json(),
                "act": act.to_json(),
                "rule_firings": firings,
                "aux_act_used": used_aux,
            })
        return turn

    def run(self) -> Dialogue:
        try:
            while len(self.turns) < self.cfg.max_turns:
                turn = self.step()
                if turn.act.has("bye"):
                    self.status = STATUS_FINISHED_BYE
                    break
            else:
                self.status = STATUS_FINISHED_MAX_TURNS
        except SimulationError:
            self.status = STATUS_FAILED
            raise
        return Dialogue(
            id=self.dialogue_id, initial_goal=self.goal, final_goal=self.final_goal,
            turns=self.turns, source=SOURCE_SIMULATED)


def simulate_dialogue(goal: UserGoal, seeds: SeedDataset, backend: CompletionBackend,
                      aux: AuxPredictor | None, db: EntityDb, ontology: Ontology,
                      cfg: GenConfig, rng: random.Random, **kwargs) -> Dialogue:
    return SimulationRun(goal, seeds, backend, aux, db, ontology, cfg, rng, **kwargs).run()


# ---------------------------------------------------------------------------
# turn-level generation for state-tracking augmentation
# ---------------------------------------------------------------------------

KIND_REQUEST = "request"
KIND_REQMORE = "reqmore"
KIND_OTHER = "other"

DST_STOPS = ("\n",)

# slot glossary lines for the turn-level task description
_SLOT_GLOSSARY: dict[str, str] = {
    "people": "number of people for the {domain} booking",
    "stay": "length of stay at the hotel",
    "day": "day of the {domain} booking",
    "name": "name of the {domain}",
    "stars": "star rating of the hotel",
    "type": "what is the type of the {domain}, {options}",
    "area": "area of town for the {domain}",
    "pricerange": "price range of the {domain}",
    "parking": "whether the hotel has free parking",
    "internet": "whether the hotel has free wifi",
    "food": "type of food served by the restaurant",
    "departure": "place to depart from",
    "destination": "place to travel to",
    "leave": "earliest time to leave",
    "arrive": "latest time to arrive by",
    "time": "time of the {domain} booking",
    "department": "hospital department you need",
}


def _glossary_line(domain: str, slot: str, ontology: Ontology) -> str:
    template = _SLOT_GLOSSARY.get(slot, "the {slot} of the {domain}")
    options = ", ".join(ontology.candidates(domain, slot))
    text = template.format(domain=domain, slot=slot, options=options or "any value")
    return f"{slot}: {text};"


@dataclass(frozen=True)
class DstAugSpec:
    """A prescribed turn-level belief to verbalize in place of a source turn."""

    source: Dialogue
    turn_idx: int
    kind: str
    belief: TurnBelief
    n_shots: int = 2


def _slot_pool(ontology: Ontology, domain: str, exclude: set[str],
               observed: ObservedValues | None) -> list[str]:
    pool = []
    for slot in ontology.informable_slots(domain):
        if slot in exclude:
            continue
        if ontology.candidates(domain, slot) or (observed and observed.get((domain, slot))):
            pool.append(slot)
    return pool


def _sample_value(ontology: Ontology, domain: str, slot: str, rng: random.Random,
                  observed: ObservedValues | None, fallback: str | None = None) -> str:
    candidates = list(ontology.candidates(domain, slot))
    if not candidates and observed:
        candidates = list(observed.get((domain, slot), []))
    if not candidates:
        if fallback is None:
            raise UnaugmentableTurn(f"no values available for {domain}.{slot}")
        return fallback
    return rng.choice(candidates)


def generate_turn_belief(source: Dialogue, turn_idx: int, ontology: Ontology,
                         rng: random.Random, *, cfg: GenConfig = GenConfig(),
                         observed_values: ObservedValues | None = None
                         ) -> tuple[TurnBelief, str]:
    """Pick a new turn-level belief consistent with the last system act.

    Request: answer >=1 requested slot and add >=2 unmentioned same-domain
    slots. Reqmore: open one unmentioned domain with 1-4 slots. Other: drop
    >=1 original slot and add >=1 unmentioned slot in the current domain.
    """
    if not 0 <= turn_idx < len(source.turns):
        raise UnaugmentableTurn(f"turn index {turn_idx} out of range for {source.id}")
    context = source.turns[:turn_idx]
    original = source.turns[turn_idx].belief
    last_act = context[-1].act if context else DialogAct()
    mentioned = {
        (d, s) for t in context for d, s, _ in t.belief.triples() if s != NONE}
    mentioned_domains = {d for t in context for d in t.belief.task_domains()}

    requested = [
        (d, s) for d, s in last_act.slots_of("request") if ontology.is_informable(d, s)]
    belief = TurnBelief()

    if requested:
        kind = KIND_REQUEST
        domain = requested[0][0]
        req_slots = list(dict.fromkeys(s for d, s in requested if d == domain))
        n_req = min(rng.randint(1, len(req_slots)), cfg.max_slots_per_domain - 2)
        chosen = rng.sample(req_slots, max(1, n_req))
        pool = _slot_pool(ontology, domain, set(chosen) | set(req_slots)
                          | {s for d, s in mentioned if d == domain}, observed_values)
        if len(pool) < 2:
            raise UnaugmentableTurn(f"{source.id} turn {turn_idx}: fewer than two "
                                    f"unmentioned slots left in {domain}")
        n_extra = rng.randint(2, min(len(pool), max(2, cfg.max_slots_per_domain - len(chosen))))
        for slot in chosen + rng.sample(pool, n_extra):
            belief.set(domain, slot, _sample_value(ontology, domain, slot, rng, observed_values))
    elif last_act.has("reqmore"):
        kind = KIND_REQMORE
        fresh = [d for d in ontology.goal_domains()
                 if d not in mentioned_domains
                 and _slot_pool(ontology, d, set(), observed_values)]
        if not fresh:
            raise UnaugmentableTurn(f"{source.id} turn {turn_idx}: no unmentioned domain left")
        domain = rng.choice(fresh)
        pool = _slot_pool(ontology, domain, set(), observed_values)
        for slot in rng.sample(pool, rng.randint(1, min(4, len(pool)))):
            belief.set(domain, slot, _sample_value(ontology, domain, slot, rng, observed_values))
    else:
        kind = KIND_OTHER
        domain = next(iter(original.task_domains()), None)
        if domain is None:
            for turn in reversed(context):
                task = turn.belief.task_domains()
                if task:
                    domain = task[-1]
                    break
        if domain is None:
            raise UnaugmentableTurn(f"{source.id} turn {turn_idx}: no current domain")
        original_slots = list(original.entries.get(domain, {}))
        kept: list[str] = []
        if original_slots:
            dropped = rng.sample(original_slots, rng.randint(1, len(original_slots)))
            kept = [s for s in original_slots if s not in dropped]
        pool = _slot_pool(ontology, domain,
                          set(original_slots) | {s for d, s in mentioned if d == domain},
                          observed_values)
        if not pool:
            raise UnaugmentableTurn(f"{source.id} turn {turn_idx}: no unmentioned slot "
                                    f"left in {domain}")
        n_add = rng.randint(1, min(len(pool), max(1, cfg.max_slots_per_domain - len(kept))))
        added = rng.sample(pool, n_add)
        for slot in kept:
            belief.set(domain, slot, _sample_value(
                ontology, domain, slot, rng, observed_values,
                fallback=original.get(domain, slot)))
        for slot in added:
            belief.set(domain, slot, _sample_value(ontology, domain, slot, rng, observed_values))
    return belief, kind


def _belief_similarity(a: TurnBelief, b: TurnBelief) -> float:
    try:
        return goal_similarity(a, b)  # same measure, applied to turn-level maps
    except ValueError:
        return 0.0


def _sample_turn_demos(target: TurnBelief, seeds: SeedDataset, k: int, tau: float,
                       rng: random.Random, exclude: tuple[str, int]
                       ) -> list[tuple[Dialogue, int]]:
    pool = [(d, i) for d, i in seeds.user_turns() if (d.id, i) != exclude]
    if not pool:
        raise UnaugmentableTurn("no seed user turns available as demonstrations")
    k = min(k, len(pool))
    remaining = [((d, i), _belief_similarity(target, d.turns[i].belief)) for d, i in pool]
    chosen = []
    for _ in range(k):
        peak = max(w for _, w in remaining)
        exps = [math.exp((w - peak) / tau) for _, w in remaining]
        total = sum(exps)
        x = rng.random() * total
        acc, idx = 0.0, len(remaining) - 1
        for i, e in enumerate(exps):
            acc += e
            if x < acc:
                idx = i
                break
        chosen.append(remaining.pop(idx)[0])
    return chosen


def build_dst_prompt(spec: DstAugSpec, demos: list[tuple[Dialogue, int]],
                     ontology: Ontology) -> str:
    """Task description with a slot glossary, turn demonstrations, target prefix."""
    domain = next(iter(spec.belief.task_domains()), GENERAL_DOMAIN)
    slots: dict[tuple[str, str], None] = {}
    for d, s, _ in spec.belief.triples():
        if s != NONE:
            slots.setdefault((d, s), None)
    for dlg, i in demos:
        for d, s, _ in dlg.turns[i].belief.triples():
            if s != NONE:
                slots.setdefault((d, s), None)
    header = (
        f"Answer the assistant's question on each feature you require when booking "
        f"{('an ' if domain[:1] in 'aeiou' else 'a ')}{domain}. "
        'Also mention no preference on a feature when your requirement on it is "dontcare".'
    )
    lines = [header, "Features:"]
    lines += [_glossary_line(d, s, ontology) for d, s in slots]
    blocks = ["\n".join(lines)]
    for dlg, i in demos:
        turn = dlg.turns[i]
        asked = [s for _, s, _ in turn.belief.triples() if s != NONE]
        blocks.append(
            f"Assistant: what is your requirement on {', '.join(asked)}?\n"
            f"{format_user_line(turn.belief, turn.user_utterance)}")
    blocks.append(f"User({serialize_goal(spec.belief)}):")
    return "\n\n".join(blocks)


def augment_dst_turn(spec: DstAugSpec, seeds: SeedDataset, backend: CompletionBackend,
                     aux: AuxPredictor | None, ontology: Ontology, cfg: GenConfig,
                     rng: random.Random, *, dialogue_id: str | None = None) -> Dialogue:
    """Generate one alternative user turn expressing a prescribed belief.

    The belief is fixed, so no auxiliary merge happens here: the filter only
    verifies that every prescribed value was actually expressed. Samples whose
    utterance fails that check are rejected after the retry budget.
    """
    demos = _sample_turn_demos(
        spec.belief, seeds, spec.n_shots, cfg.select_temperature, rng,
        exclude=(spec.source.id, spec.turn_idx))
    prompt = build_dst_prompt(spec, demos, ontology)
    decode = cfg.decode
    request = CompletionRequest(
        prompt=prompt, max_tokens=decode.max_tokens, temperature=decode.temperature,
        top_p=decode.top_p, frequency_penalty=decode.frequency_penalty, stop=DST_STOPS)
    for _ in range(cfg.retries + 1):
        try:
            completion = backend.complete(request)
        except BackendError as exc:
            raise SimulationError(str(exc), kind="backend_error") from exc
        utterance = normalize_text(completion)
        if not utterance:
            continue
        if slot_value_match_filter(spec.belief, utterance, ontology) == spec.belief:
            new_turn = Turn(
                user_utterance=utterance, belief=spec.belief, db=NO_RESULT,
                act=DialogAct(), system_response="")
            final_goal = spec.source.final_goal.copy()
            for d, s, v in spec.belief.triples():
                if s != NONE:
                    final_goal.set(d, s, v)
            return Dialogue(
                id=dialogue_id or f"{spec.source.id}-dst{spec.turn_idx}",
                initial_goal=spec.source.initial_goal,
                final_goal=final_goal,
                turns=list(spec.source.turns[: spec.turn_idx]) + [new_turn],
                source=SOURCE_DST_AUGMENTED)
    raise RejectedSample(
        f"{spec.source.id} turn {spec.turn_idx}: prescribed belief "
        f"{serialize_goal(spec.belief)!r} not expressed within "
        f"{cfg.retries + 1} attempts")


# ---------------------------------------------------------------------------
# batch drivers
# ---------------------------------------------------------------------------

@dataclass
class BatchReport:
    requested: int = 0
    succeeded: int = 0
    failures: dict[str, int] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def record_failure(self, kind: str, note: str) -> None:
        self.failures[kind] = self.failures.get(kind, 0) + 1
        self.notes.append(note)

    @property
    def failed(self) -> int:
        return sum(self.failures.values())

    def to_json(self) -> dict:
        return {
            "requested": self.requested,
            "succeeded": self.succeeded,
            "failed": self.failed,
            "failures": dict(self.failures),
            "notes": list(self.notes),
        }


def _make_goal(strategy: GoalStrategy, dist: RsDistribution, seeds: SeedDataset,
               ontology: Ontology, cfg: GenConfig, rng: random.Random,
               observed: ObservedValues | None) -> UserGoal:
    if strategy.kind == STRATEGY_RANDOM:
        return generate_goal_random(ontology, dist, rng, cfg=cfg, observed_values=observed)
    if strategy.kind == STRATEGY_SUBSTITUTION:
        return generate_goal_substitution(rng.choice(list(seeds)), ontology, rng)
    goal, _ = generate_goal_combination(seeds, ontology, strategy, rng, cfg=cfg)
    return goal


def simulate_batch(n: int, strategy: GoalStrategy, seeds: SeedDataset,
                   backend: CompletionBackend, aux: AuxPredictor | None, db: EntityDb,
                   ontology: Ontology, cfg: GenConfig, *,
                   dist: RsDistribution = RsDistribution(), workers: int = 1,
                   trace: TraceSink | None = None) -> tuple[list[Dialogue], BatchReport]:
    """Run n independent simulations on per-dialogue rng substreams."""
    if n < 1:
        raise ValueError("n must be >= 1")
    master = random.Random(cfg.rng_seed)
    run_seeds = [master.randrange(2 ** 63) for _ in range(n)]
    observed = seeds.observed_values()
    report = BatchReport(requested=n)

    def one(index: int) -> Dialogue:
        rng = random.Random(run_seeds[index])
        goal = _make_goal(strategy, dist, seeds, ontology, cfg, rng, observed)
        return simulate_dialogue(
            goal, seeds, backend, aux, db, ontology, cfg, rng,
            dialogue_id=f"sim_{index:04d}", trace=trace)

    results: list[Dialogue | None] = [None] * n
    def run_one(index: int) -> None:
        try:
            results[index] = one(index)
        except SimulationError as exc:
            report.record_failure(exc.kind, f"sim_{index:04d}: {exc}")
        except ValueError as exc:
            report.record_failure("config_error", f"sim_{index:04d}: {exc}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_one, range(n)))
    else:
        for i in range(n):
            run_one(i)

    dialogues = [d for d in results if d is not None]
    report.succeeded = len(dialogues)
    return dialogues, report


def augment_corpus(seeds: SeedDataset, backend: CompletionBackend,
                   aux: AuxPredictor | None, ontology: Ontology, cfg: GenConfig, *,
                   passes: int = 1, observed: ObservedValues | None = None
                   ) -> tuple[list[Dialogue], BatchReport]:
    """Generate one augmented user turn per source turn per pass."""
    if passes < 1:
        raise ValueError("passes must be >= 1")
    master = random.Random(cfg.rng_seed)
    observed = observed if observed is not None else seeds.observed_values()
    out: list[Dialogue] = []
    report = BatchReport()
    for pass_no in range(1, passes + 1):
        for dlg in seeds:
            for turn_idx in range(len(dlg.turns)):
                report.requested += 1
                rng = random.Random(master.randrange(2 ** 63))
                try:
                    belief, kind = generate_turn_belief(
                        dlg, turn_idx, ontology, rng, cfg=cfg, observed_values=observed)
                    spec = DstAugSpec(dlg, turn_idx, kind, belief, n_shots=cfg.n_shots)
                    out.append(augment_dst_turn(
                        spec, seeds, backend, aux, ontology, cfg, rng,
                        dialogue_id=f"{dlg.id}-dst{turn_idx}-p{pass_no}"))
                    report.succeeded += 1
                except UnaugmentableTurn as exc:
                    report.record_failure("unaugmentable", str(exc))
                except RejectedSample as exc:
                    report.record_failure("rejected", str(exc))
                except SimulationError as exc:
                    report.record_failure(exc.kind, str(exc))
    return out, report
