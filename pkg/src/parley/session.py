"""Per-session orchestration: one conversation between a user and a persona.

Each turn runs a fixed phase sequence: the user's words are tokenized and
asserted into context, gist clauses are extracted (and optionally parsed to
a logical form), the plan is advanced until it either exhausts or reaches a
pending user expectation, and every executed output action is rendered to a
system turn. A turn that produces no plan-driven output falls back to a
clarification request or the active schema's default response.

Time is virtual: a session's clock starts at zero and advances a fixed tick
per turn, so identical inputs replay to identical transcripts.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

from .expr import Compound, Expr, Symbol, WordList, is_ground, print_expr
from .facts import CONTEXT, KB, FactStore
from .generate import (
    DEFAULT,
    GeneratorState,
    ResponsePlanItem,
    choose_fallback_mode,
    fallback_response,
    paraphrase,
    select_reaction,
)
from .interpret import GistClause, extract_gist, gist_to_ulf, resolve_references, tokenize
from .pack import PersonaPack
from .plan import (
    ACTION_EXECUTED,
    PLAN_EXHAUSTED,
    REPLAN_TRIGGERED,
    Plan,
    replan_on_failure,
)
from .schema import SectionKind, instantiate


class SessionClosed(Exception):
    pass


class DuplicateName(Exception):
    pass


SAY_TO = Symbol("say-to.v")
PARAPHRASE_TO = Symbol("paraphrase-to.v")
REACT_TO = Symbol("react-to.v")
CONSULT = Symbol("consult.v")
REPLY_TO = Symbol("reply-to.v")
KNOW = Symbol("know.v")
ANSWER_TO = Symbol("answer-to")


@dataclass
class TurnRecord:
    index: int
    speaker: str  # "user" | "system"
    words: list[str]
    text: str
    time: float
    gists: list[dict] = field(default_factory=list)
    ulfs: list[Optional[str]] = field(default_factory=list)
    kind: Optional[str] = None  # system items: reaction/paraphrase/...
    provenance: Optional[str] = None
    trace: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "index": self.index,
            "speaker": self.speaker,
            "words": self.words,
            "text": self.text,
            "time": self.time,
        }
        if self.speaker == "user":
            d["gists"] = self.gists
            d["ulfs"] = self.ulfs
        else:
            d["kind"] = self.kind
            d["provenance"] = self.provenance
            d["trace"] = self.trace
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class Session:
    def __init__(
        self,
        pack: PersonaPack,
        session_id: str = "local",
        seed: int = 0,
        tick: Optional[float] = None,
        base_timeout: Optional[float] = None,
    ):
        self.pack = pack
        self.session_id = session_id
        self.store = FactStore()
        for fact in pack.kb_facts:
            self.store.assert_fact(KB, fact)
        self.clock = 0.0
        self.tick = tick if tick is not None else pack.turn_tick
        self.history: list[TurnRecord] = []
        self.state = GeneratorState(clarification_index=seed)
        self.prev_system_gist: Optional[GistClause] = None
        self.prev_user_gist: Optional[GistClause] = None
        self.reaction_gist: Optional[GistClause] = None
        self.last_system_words: Optional[list[str]] = None
        self.subsystems: dict[str, Callable[[Expr], list[Expr]]] = {}
        self._triggered: set[str] = set()
        self.closed = False
        self._in_turn = False
        self._turn_ids = itertools.count(0)
        top = pack.schema(pack.top_level)
        inst = instantiate(top, [], pack.me, pack.you)
        self.plan = Plan(
            inst,
            pack.schemas,
            base_timeout=base_timeout if base_timeout is not None else pack.base_timeout,
            now=0.0,
        )
        self._absorb_new_instances()

    # ------------------------------------------------------------------

    def register_subsystem(self, name: str, handler: Callable[[Expr], list[Expr]]) -> None:
        key = name.lower()
        if key in self.subsystems:
            raise DuplicateName(f"subsystem {name} already registered")
        self.subsystems[key] = handler

    def open_turns(self) -> list[TurnRecord]:
        """Produce the opening system turn(s) mandated by the plan."""
        return self._drive_plan(events_trace=[])

    def run_turn(self, user_text: str) -> list[TurnRecord]:
        if self.closed:
            raise SessionClosed(f"session {self.session_id} has ended")
        if self._in_turn:
            raise RuntimeError("a turn is already in flight")
        self._in_turn = True
        try:
            return self._run_turn(user_text)
        finally:
            self._in_turn = False

    # ------------------------------------------------------------------

    def _run_turn(self, user_text: str) -> list[TurnRecord]:
        self.clock += self.tick
        now = self.clock
        words = tokenize(user_text)
        user_record = TurnRecord(
            index=next(self._turn_ids),
            speaker="user",
            words=words,
            text=" ".join(words),
            time=now,
        )
        self.history.append(user_record)

        if words:
            self.store.assert_fact(
                CONTEXT, Compound([self.pack.you, SAY_TO, self.pack.me, WordList(words)]), now
            )

        active = self._active_schema()
        gists = extract_gist(
            words, self.prev_system_gist, self.pack, active_topic=active.topic if active else None
        )
        real_gists = [g for g in gists if not g.topic.startswith("#subschema:")]
        splices = [g.topic.split(":", 1)[1] for g in gists if g.topic.startswith("#subschema:")]

        pending_q = self.plan.pending_question(self.store)
        expectation = self.plan.pending_expectation()

        # a doctor question is initiative, not an answer, and an off-topic
        # statement (smalltalk while a question is pending) is not one
        # either: only on-topic statement gists count as replies
        active_topic = active.topic if active else None
        answering = [
            g
            for g in real_gists
            if not g.is_question
            and g.topic != "repeat-request"
            and (active_topic is None or g.topic == active_topic)
        ]
        if real_gists:
            self.state.note_gist_success()
        else:
            self.state.note_gist_failure()
        if answering:
            if expectation is not None:
                reply_pattern = self.plan.resolve(expectation.formula)
                if (
                    isinstance(reply_pattern, Compound)
                    and len(reply_pattern) == 3
                    and reply_pattern[1] == REPLY_TO
                    and isinstance(reply_pattern[2], Symbol)
                ):
                    self.store.assert_fact(CONTEXT, reply_pattern, now)
            for g in answering:
                self.store.assert_fact(
                    CONTEXT,
                    Compound([self.pack.you, PARAPHRASE_TO, self.pack.me, WordList(g.words)]),
                    now,
                )
                if pending_q is not None:
                    _token, question = pending_q
                    self.store.assert_fact(
                        CONTEXT,
                        Compound(
                            [self.pack.me, KNOW, Compound([ANSWER_TO, question, WordList(g.words)])]
                        ),
                        now,
                    )

        ulfs: list[Optional[str]] = []
        for g in real_gists:
            ulf = gist_to_ulf(g, self.pack)
            if ulf is not None:
                ulf = resolve_references(ulf, self.store)
                ulfs.append(print_expr(ulf))
            else:
                ulfs.append(None)
        user_record.gists = [{"words": list(g.words), "topic": g.topic} for g in real_gists]
        user_record.ulfs = ulfs

        # the gist the system reacts to: last question, else first
        chosen: Optional[GistClause] = None
        if real_gists:
            questions = [g for g in real_gists if g.is_question]
            chosen = questions[-1] if questions else real_gists[0]
            self.reaction_gist = chosen
            self.prev_user_gist = chosen

        events_trace: list[dict] = []
        for target in splices:
            if self.pack.schema(target) is not None:
                self.plan.splice_subschema(target, now=now)
                events_trace.append({"event": "topic-splice", "target": target})
        triggered = self._check_triggers(now)
        if triggered is not None:
            events_trace.append({"event": "trigger-splice", "target": triggered})

        records = self._drive_plan(events_trace)

        if not any(r.speaker == "system" for r in records):
            if real_gists and chosen is not None:
                # understood, but the plan is holding (e.g. the doctor asked
                # a question): react directly without advancing the plan
                records.extend(self._direct_reaction(chosen, events_trace))
            if not records or not any(r.speaker == "system" for r in records):
                schema = self._active_schema()
                mode = DEFAULT if real_gists else choose_fallback_mode(self.state, schema)
                item = fallback_response(mode, schema, self.pack, self.state)
                if mode == DEFAULT:
                    skipped = self.plan.force_skip_current(now)
                    events_trace.append(
                        {"event": "fallback", "mode": mode, "skipped_expectation": skipped}
                    )
                else:
                    events_trace.append({"event": "fallback", "mode": mode})
                records.append(self._emit(item, events_trace))
                if mode == DEFAULT:
                    records.extend(self._drive_plan(events_trace))
        return records

    def _direct_reaction(self, gist: GistClause, events_trace: list[dict]) -> list[TurnRecord]:
        self.reaction_gist = None
        if gist.topic == "repeat-request" and self.last_system_words:
            item = ResponsePlanItem(
                kind="reaction", words=list(self.last_system_words), provenance="rule:repeat-last"
            )
            return [self._emit(item, events_trace)]
        result = select_reaction(gist, self.pack)
        if result is None:
            return []
        if result.kind == "subschema":
            self.plan.splice_subschema(result.target, now=self.clock)
            events_trace.append({"event": "reaction-subschema", "target": result.target})
            return self._drive_plan(events_trace)
        item = ResponsePlanItem(
            kind="reaction", words=list(result.words), provenance="/".join(result.path)
        )
        return [self._emit(item, events_trace)]

    # ------------------------------------------------------------------

    def _active_schema(self):
        step = self.plan.current
        if step is not None:
            return step.instance.schema
        return self.pack.schema(self.pack.top_level)

    def _check_triggers(self, now: float):
        """Instantiate the first schema (manifest order) whose trigger
        conditions all hold in context, at most once per schema per
        session; its sub-dialogue is spliced before the current step."""
        if self.plan.current is None:
            return None
        for schema in self.pack.schemas.values():
            triggers = schema.entries(SectionKind.TRIGGER_CONDS)
            if not triggers or schema.name in self._triggered or schema.header_params():
                continue
            probe = instantiate(schema, [], self.pack.me, self.pack.you)
            patterns = [p for _e, p in probe.condition_patterns(SectionKind.TRIGGER_CONDS)]
            if all(self.store.holds(CONTEXT, p) for p in patterns):
                self._triggered.add(schema.name)
                self.plan.splice_subschema(schema.name, now=now)
                return schema.name
        return None

    def _absorb_new_instances(self) -> None:
        """Assume the declared world state of each newly expanded instance:
        types and rigid conditions go to the knowledge base, static
        conditions into context."""
        for inst in self.plan.created_instances:
            for kind, partition in (
                (SectionKind.TYPES, KB),
                (SectionKind.RIGID_CONDS, KB),
                (SectionKind.STATIC_CONDS, CONTEXT),
            ):
                for _entry, pattern in inst.condition_patterns(kind):
                    if is_ground(pattern):
                        self.store.assert_fact(partition, pattern, self.clock)
        self.plan.created_instances.clear()

    def _drive_plan(self, events_trace: list[dict]) -> list[TurnRecord]:
        records: list[TurnRecord] = []
        now = self.clock
        self._absorb_new_instances()
        while True:
            event = self.plan.advance(self.store, now)
            if event is None:
                break
            if event.kind == PLAN_EXHAUSTED:
                self.closed = True
                events_trace.append({"event": PLAN_EXHAUSTED})
                break
            entry = {"event": event.kind, "step": event.step.step_id if event.step else None}
            if event.detail:
                entry["detail"] = event.detail
            events_trace.append(entry)
            self._absorb_new_instances()
            if event.kind == ACTION_EXECUTED:
                item = self._execute_action(event, events_trace)
                if item is not None:
                    records.append(self._emit(item, events_trace))
            elif event.kind == REPLAN_TRIGGERED:
                outcome = replan_on_failure(
                    self.plan, self.pack.registry, self.pack.replan_tree, event.formula
                )
                events_trace.append({"event": "replan-outcome", "kind": outcome.kind})
                self.plan.apply_replan(outcome, now)
                if outcome.kind == "respond" and outcome.words:
                    records.append(
                        self._emit(
                            ResponsePlanItem(
                                kind="reaction", words=outcome.words, provenance=outcome.provenance
                            ),
                            events_trace,
                        )
                    )
        for note in self.plan.trace_notes:
            events_trace.append({"event": "note", "text": note})
        self.plan.trace_notes.clear()
        return records

    def _execute_action(self, event, events_trace) -> Optional[ResponsePlanItem]:
        formula = event.formula
        if not isinstance(formula, Compound) or len(formula) < 2:
            return None
        predicate = formula[1]
        schema = event.step.instance.schema
        topic = schema.topic or "general"
        if predicate == SAY_TO:
            quoted = formula[3] if len(formula) >= 4 and isinstance(formula[3], WordList) else None
            if quoted is None:
                return None
            self.prev_system_gist = GistClause(words=quoted.words, topic=topic)
            return ResponsePlanItem(
                kind="paraphrase",
                words=[w.lower() for w in quoted.words],
                provenance=f"say:{event.step.step_id}",
            )
        if predicate == PARAPHRASE_TO:
            quoted = formula[3] if len(formula) >= 4 and isinstance(formula[3], WordList) else None
            if quoted is None:
                return None
            system_gist = GistClause(words=tuple(w.lower() for w in quoted.words), topic=topic)
            item = paraphrase(system_gist, self.prev_user_gist, self.pack, self.state)
            self.prev_system_gist = system_gist
            return item
        if predicate == REACT_TO:
            gist = self.reaction_gist
            self.reaction_gist = None
            if gist is None:
                events_trace.append({"event": "note", "text": "nothing to react to"})
                return None
            if gist.topic == "repeat-request" and self.last_system_words:
                return ResponsePlanItem(
                    kind="reaction", words=list(self.last_system_words), provenance="rule:repeat-last"
                )
            result = select_reaction(gist, self.pack)
            if result is None:
                events_trace.append({"event": "note", "text": f"no reaction for gist: {gist.text}"})
                return None
            if result.kind == "subschema":
                self.plan.splice_subschema(result.target, now=self.clock)
                events_trace.append({"event": "reaction-subschema", "target": result.target})
                return None
            return ResponsePlanItem(
                kind="reaction", words=list(result.words), provenance="/".join(result.path)
            )
        if predicate == CONSULT:
            self._consult(formula, events_trace)
            return None
        events_trace.append({"event": "note", "text": f"unhandled action {print_expr(formula)}"})
        return None

    def _consult(self, formula, events_trace) -> None:
        if len(formula) < 4 or not isinstance(formula[2], Symbol):
            return
        target = formula[2].name
        query = formula[3]
        handler = self.subsystems.get(target)
        if handler is None:
            events_trace.append({"event": "note", "text": f"no subsystem registered for {target}"})
            return
        replies = handler(query)
        for reply in replies:
            self.store.assert_fact(CONTEXT, reply, self.clock)
        events_trace.append({"event": "consult", "target": target, "replies": len(replies)})

    def _emit(self, item: ResponsePlanItem, events_trace: list[dict]) -> TurnRecord:
        now = self.clock
        if item.kind != "clarification":
            self.state.note_non_clarification()
        self.store.assert_fact(
            CONTEXT, Compound([self.pack.me, SAY_TO, self.pack.you, WordList(item.words)]), now
        )
        self.last_system_words = list(item.words)
        record = TurnRecord(
            index=next(self._turn_ids),
            speaker="system",
            words=list(item.words),
            text=" ".join(item.words),
            time=now,
            kind=item.kind,
            provenance=item.provenance,
            trace={
                "events": list(events_trace),
                "plan": self.plan.snapshot(),
            },
        )
        self.history.append(record)
        return record


def create_session(pack: PersonaPack, session_id: str = "local", seed: int = 0, **kw) -> tuple[Session, list[TurnRecord]]:
    """New session plus its opening system turns."""
    session = Session(pack, session_id=session_id, seed=seed, **kw)
    opening = session.open_turns()
    return session, opening
