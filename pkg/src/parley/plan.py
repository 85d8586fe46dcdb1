"""Hierarchical dialogue planning over schema instances.

A plan is a tree of doubly-linked step chains: one step per expected episode,
with non-primitive steps holding a subplan chain expanded from a sub-schema.
The planner advances a current-step pointer, matching expectation steps
against facts that are currently true in context, executing the agent's own
action steps, skipping sub-schemas whose goals already hold, and waiting on
unmatched expectations until a certainty-scaled timeout elapses.

Waiting behavior: an episode with certainty 1 must be observed before the
plan proceeds; certainty c < 1 yields a finite window base * c / (1 - c)
measured from the last plan modification, after which the step is skipped.

Variables are plan-global: each expanded instance gets its variables renamed
(``?e1`` to ``?e1~3``) so bindings from one sub-dialogue never collide with
another's. Once bound, a variable is never rebound.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

from .expr import (
    Bindings,
    Compound,
    Expr,
    Symbol,
    Variable,
    WordList,
    free_variables,
    is_ground,
    print_expr,
    resolve_indexicals,
    substitute,
    unify,
)
from .facts import CONTEXT, KB, MEMORY, FactStore
from .schema import (
    DialogueSchema,
    SchemaInstance,
    SectionKind,
    episode_order,
    instantiate,
)

PENDING = "pending"
MATCHED = "matched"
EXECUTED = "executed"
SKIPPED = "skipped"
FAILED = "failed"

EXPECTATION_MATCHED = "expectation-matched"
EXPECTATION_TIMED_OUT = "expectation-timed-out"
GOAL_ALREADY_SATISFIED = "goal-already-satisfied"
ACTION_EXECUTED = "action-executed"
SUBSCHEMA_EXPANDED = "subschema-expanded"
REPLAN_TRIGGERED = "replan-triggered"
PLAN_EXHAUSTED = "plan-exhausted"

PRIMITIVE_ACTIONS = {"say-to.v", "paraphrase-to.v", "react-to.v", "consult.v"}

REPEAT_UNTIL = Symbol("repeat-until")
MAX_REPEAT_ITERATIONS = 25


class PlanError(Exception):
    pass


class UnknownSchema(PlanError):
    pass


@dataclass
class PlanStep:
    step_id: str
    episode_var: Variable
    formula: Expr
    certainty: float
    instance: SchemaInstance
    status: str = PENDING
    token: Optional[Symbol] = None
    prev: Optional["PlanStep"] = None
    next: Optional["PlanStep"] = None
    subplan: Optional["PlanStep"] = None
    parent: Optional["PlanStep"] = None
    repeat_iterations: int = 0

    def __repr__(self):
        return f"<step {self.step_id} {self.episode_var!r} {self.status}>"


@dataclass
class PlanEvent:
    kind: str
    step: Optional[PlanStep] = None
    formula: Optional[Expr] = None
    detail: str = ""


@dataclass
class _InstanceInfo:
    instance: SchemaInstance
    goals: list[Expr]  # renamed goal patterns
    goal_checked: bool = False
    replanned: bool = False


class Plan:
    def __init__(
        self,
        instance: SchemaInstance,
        schemas: dict[str, DialogueSchema],
        base_timeout: float = 30.0,
        now: float = 0.0,
    ):
        self.schemas = schemas
        self.me = instance.me
        self.you = instance.you
        self.base_timeout = base_timeout
        self.bindings: Bindings = {}
        self.last_modified = now
        self.trace_notes: list[str] = []
        self.awaiting_replan: Optional[tuple[PlanStep, _InstanceInfo]] = None
        self._step_ids = itertools.count(1)
        self._token_ids = itertools.count(1)
        self._inst_serials = itertools.count(1)
        self.inst_ids = itertools.count(1)
        self._infos: dict[str, _InstanceInfo] = {}
        self.created_instances: list[SchemaInstance] = []
        self.root = self._build_chain(instance, parent=None)
        self.current: Optional[PlanStep] = self.root
        self._exhausted = False

    # ------------------------------------------------------------------
    # construction

    def _build_chain(self, inst: SchemaInstance, parent: Optional[PlanStep]) -> PlanStep:
        serial = next(self._inst_serials)
        rename: Bindings = {}

        def renamed(e: Expr) -> Expr:
            for v in free_variables(e):
                rename.setdefault(v, Variable(f"{v.name}~{serial}"))
            return substitute(e, rename)

        order = episode_order(inst.schema)
        by_label = dict(inst.episode_formulas())
        first: Optional[PlanStep] = None
        last: Optional[PlanStep] = None
        for label in order.chain():
            formula = renamed(by_label[label])
            speaker_is_me = self._speaker_is_me(formula)
            step = PlanStep(
                step_id=f"s{next(self._step_ids)}",
                episode_var=rename.get(label, Variable(f"{label.name}~{serial}")),
                formula=formula,
                certainty=inst.schema.certainty(label, speaker_is_me),
                instance=inst,
                parent=parent,
            )
            if first is None:
                first = step
            if last is not None:
                last.next = step
                step.prev = last
            last = step
        info = _InstanceInfo(instance=inst, goals=[renamed(g) for g in inst.goal_patterns()])
        self._infos[inst.instance_id] = info
        self.created_instances.append(inst)
        return first

    def info(self, inst: SchemaInstance) -> _InstanceInfo:
        return self._infos[inst.instance_id]

    def _speaker_is_me(self, formula: Expr) -> bool:
        body = formula
        if isinstance(body, Compound) and body[0] == REPEAT_UNTIL and len(body) == 3:
            body = body[2]
        return isinstance(body, Compound) and len(body) >= 1 and body[0] == self.me

    def resolve(self, e: Expr) -> Expr:
        return substitute(e, self.bindings)

    def fresh_token(self) -> Symbol:
        return Symbol(f"ep{next(self._token_ids)}")

    def bind(self, var: Variable, value: Expr) -> None:
        old = self.bindings.get(var)
        if old is not None and old != value:
            raise PlanError(f"variable {var!r} already bound to {old!r}")
        self.bindings[var] = value

    # ------------------------------------------------------------------
    # queries

    def steps(self):
        """All steps, depth-first over the chain tree."""

        def walk(step):
            while step is not None:
                yield step
                if step.subplan is not None:
                    yield from walk(step.subplan)
                step = step.next

        yield from walk(self.root)

    def snapshot(self) -> list[dict]:
        def chain(step):
            out = []
            while step is not None:
                node = {
                    "id": step.step_id,
                    "episode": repr(step.episode_var),
                    "formula": print_expr(self.resolve(step.formula)),
                    "status": step.status,
                    "certainty": step.certainty,
                }
                if step.token is not None:
                    node["token"] = step.token.name
                if step.subplan is not None:
                    node["subplan"] = chain(step.subplan)
                if step is self.current:
                    node["current"] = True
                out.append(node)
                step = step.next
            return out

        return chain(self.root)

    def goal_satisfied(self, store: FactStore, goal: Expr) -> bool:
        return store.holds(CONTEXT, self.resolve(goal))

    def unsatisfied_goals(self, store: FactStore, info: _InstanceInfo) -> list[Expr]:
        return [g for g in info.goals if not self.goal_satisfied(store, g)]

    def pending_expectation(self) -> Optional[PlanStep]:
        step = self.current
        if step is not None and step.status == PENDING and not self._speaker_is_me(self.resolve(step.formula)):
            return step
        return None

    def pending_question(self, store: FactStore) -> Optional[tuple[Symbol, WordList]]:
        """The question episode the current expectation replies to, if any."""
        step = self.pending_expectation()
        if step is None:
            return None
        formula = self.resolve(step.formula)
        if not (isinstance(formula, Compound) and len(formula) == 3 and formula[1] == Symbol("reply-to.v")):
            return None
        token = formula[2]
        if not isinstance(token, Symbol):
            return None
        for fact, _ in store.query(MEMORY, Compound([token, Variable("f")])):
            inner = fact[1]
            if isinstance(inner, Compound):
                for part in inner:
                    if isinstance(part, WordList):
                        return token, part
        return None

    # ------------------------------------------------------------------
    # advancing

    def advance(self, store: FactStore, now: float) -> Optional[PlanEvent]:
        if self.awaiting_replan is not None:
            raise PlanError("advance called while a replan decision is pending")
        while True:
            step = self.current
            if step is None:
                return PlanEvent(PLAN_EXHAUSTED)
            if step.status != PENDING:
                ev = self._move_past(step, store, now)
                if ev is not None:
                    return ev
                continue
            formula = self.resolve(step.formula)
            if isinstance(formula, Compound) and formula[0] == REPEAT_UNTIL and len(formula) == 3:
                ev = self._advance_repeat(step, formula, store, now)
            elif self._speaker_is_me(formula):
                ev = self._advance_action(step, formula, store, now)
            else:
                ev = self._advance_expectation(step, formula, store, now)
            return ev

    def _move_past(self, step: PlanStep, store: FactStore, now: float) -> Optional[PlanEvent]:
        if step.next is not None:
            self.current = step.next
            return None
        # only an instance's own chain end triggers its goal check (a
        # repeat-until body shares its parent's instance and is exempt)
        at_instance_end = step.parent is None or step.parent.instance is not step.instance
        if at_instance_end:
            info = self._infos[step.instance.instance_id]
            if not info.goal_checked:
                info.goal_checked = True
                unsat = self.unsatisfied_goals(store, info)
                if info.goals and unsat and not info.replanned:
                    info.replanned = True
                    self.awaiting_replan = (step, info)
                    return PlanEvent(
                        REPLAN_TRIGGERED,
                        step=step,
                        formula=unsat[0],
                        detail="unsatisfied-goal",
                    )
        parent = step.parent
        if parent is None:
            self.current = None
            return None
        if parent.instance is step.instance:
            # repeat-until body finished: hand control back to the wrapper
            self.current = parent
            return None
        self._finish(parent, EXECUTED, store, now)
        self.current = parent
        return None

    def _advance_repeat(self, step, formula, store, now) -> Optional[PlanEvent]:
        condition, body = formula[1], formula[2]
        if store.holds(CONTEXT, condition):
            self._finish(step, EXECUTED, store, now)
            return PlanEvent(ACTION_EXECUTED, step=step, formula=formula, detail="repeat-until-satisfied")
        last = step.subplan
        no_progress = last is not None and any(s.status in (SKIPPED, FAILED) for s in _chain(last))
        if no_progress or step.repeat_iterations >= MAX_REPEAT_ITERATIONS:
            self._finish(step, SKIPPED, store, now)
            return PlanEvent(
                EXPECTATION_TIMED_OUT, step=step, formula=formula, detail="repeat-until-no-progress"
            )
        step.repeat_iterations += 1
        body_step = PlanStep(
            step_id=f"s{next(self._step_ids)}",
            episode_var=Variable(f"{step.episode_var.name}.i{step.repeat_iterations}"),
            formula=body,
            certainty=step.certainty if not self._speaker_is_me(body) else 1.0,
            instance=step.instance,
            parent=step,
        )
        step.subplan = body_step
        self.current = body_step
        self.last_modified = now
        return PlanEvent(SUBSCHEMA_EXPANDED, step=step, formula=body, detail="repeat-iteration")

    def _advance_action(self, step, formula, store, now) -> Optional[PlanEvent]:
        if step.subplan is not None:  # pre-expanded (spliced) sub-dialogue
            self.current = step.subplan
            return PlanEvent(SUBSCHEMA_EXPANDED, step=step, formula=formula, detail="spliced")
        predicate = formula[1] if isinstance(formula, Compound) and len(formula) >= 2 else None
        if isinstance(predicate, Symbol) and predicate.name in PRIMITIVE_ACTIONS:
            self._finish(step, EXECUTED, store, now)
            return PlanEvent(ACTION_EXECUTED, step=step, formula=formula)
        resolved = self._resolve_subschema(formula)
        if resolved is None:
            self.trace_notes.append(f"no action or sub-schema for {print_expr(formula)}")
            self._finish(step, EXECUTED, store, now)
            return PlanEvent(ACTION_EXECUTED, step=step, formula=formula, detail="unknown-action")
        schema, args = resolved
        inst = instantiate(schema, args, self.me, self.you, self.inst_ids)
        blocked = self._blocked_preconds(inst, store)
        if blocked:
            step.status = FAILED
            info = self._infos.setdefault(
                inst.instance_id, _InstanceInfo(instance=inst, goals=[])
            )
            info.replanned = True
            self.awaiting_replan = (step, info)
            self.last_modified = now
            return PlanEvent(
                REPLAN_TRIGGERED, step=step, formula=blocked[0], detail="precondition-blocked"
            )
        goals = inst.goal_patterns()
        if goals and all(store.holds(CONTEXT, g) for g in goals):
            self._finish(step, SKIPPED, store, now)
            return PlanEvent(GOAL_ALREADY_SATISFIED, step=step, formula=goals[0])
        self._install_subplan(step, inst)
        return PlanEvent(SUBSCHEMA_EXPANDED, step=step, formula=formula, detail=schema.name)

    def _advance_expectation(self, step, formula, store, now) -> Optional[PlanEvent]:
        match = self.match_expectation(step, store, now)
        if match is not None:
            token, bindings = match
            return PlanEvent(EXPECTATION_MATCHED, step=step, formula=self.resolve(step.formula))
        window = certainty_timeout(step.certainty, self.base_timeout)
        if now - self.last_modified >= window:
            self._finish(step, SKIPPED, store, now)
            return PlanEvent(EXPECTATION_TIMED_OUT, step=step, formula=formula)
        return None

    def match_expectation(
        self, step: PlanStep, store: FactStore, now: float
    ) -> Optional[tuple[Symbol, Bindings]]:
        """Match a pending expectation against context, binding its variables
        and recording a fresh episode token in memory."""
        pattern = self.resolve(step.formula)
        hits = store.query(CONTEXT, pattern)
        if not hits:
            return None
        fact, bindings = hits[0]
        for var, value in bindings.items():
            self.bind(var, value)
        token = self.fresh_token()
        self.bind(step.episode_var, token)
        step.token = token
        step.status = MATCHED
        store.assert_fact(MEMORY, Compound([token, fact]), now)
        self.last_modified = now
        return token, bindings

    def _finish(self, step: PlanStep, status: str, store: FactStore, now: float) -> None:
        step.status = status
        if status == EXECUTED and step.token is None:
            token = self.fresh_token()
            step.token = token
            if self.bindings.get(step.episode_var) is None:
                self.bind(step.episode_var, token)
            formula = self.resolve(step.formula)
            if is_ground(formula):
                store.assert_fact(MEMORY, Compound([token, formula]), now)
        self.last_modified = now

    # ------------------------------------------------------------------
    # expansion / splicing / replanning

    def _resolve_subschema(self, formula: Expr) -> Optional[tuple[DialogueSchema, list[Expr]]]:
        if not is_ground(formula):
            return None
        for schema in self.schemas.values():
            pattern = resolve_indexicals(schema.header_body, self.me, self.you)
            b = unify(pattern, formula)
            if b is not None:
                params = schema.header_params()
                if not all(p in b for p in params):
                    continue
                return schema, [b[p] for p in params]
        return None

    def _blocked_preconds(self, inst: SchemaInstance, store: FactStore) -> list[Expr]:
        blocked = []
        for entry, pattern in inst.condition_patterns(SectionKind.PRE_CONDS):
            necessity = inst.schema.necessity(entry.label)
            holds = store.holds((CONTEXT, KB), self.resolve(pattern))
            if holds:
                continue
            if necessity >= 1.0:
                blocked.append(pattern)
            else:
                self.trace_notes.append(
                    f"{inst.schema.name}: precondition {print_expr(pattern)} "
                    f"(necessity {necessity}) does not hold"
                )
        return blocked

    def _install_subplan(self, step: PlanStep, inst: SchemaInstance, now: Optional[float] = None) -> None:
        first = self._build_chain(inst, parent=step)
        step.subplan = first
        self.current = first
        if now is not None:
            self.last_modified = now

    def expand_subschema(
        self, step: PlanStep, schema_name: str, args: list[Expr], now: Optional[float] = None
    ) -> SchemaInstance:
        schema = self.schemas.get(schema_name)
        if schema is None:
            raise UnknownSchema(f"no schema named {schema_name}")
        inst = instantiate(schema, args, self.me, self.you, self.inst_ids)
        self._install_subplan(step, inst, now)
        return inst

    def splice_subschema(
        self, schema_name: str, args: Optional[list[Expr]] = None, now: Optional[float] = None
    ) -> SchemaInstance:
        """Insert a sub-dialogue immediately before the current step."""
        schema = self.schemas.get(schema_name)
        if schema is None:
            raise UnknownSchema(f"no schema named {schema_name}")
        at = self.current
        if at is None:
            raise PlanError("cannot splice into an exhausted plan")
        inst = instantiate(schema, args or [], self.me, self.you, self.inst_ids)
        wrapper = PlanStep(
            step_id=f"s{next(self._step_ids)}",
            episode_var=Variable(f"sp{next(self._step_ids)}"),
            formula=inst.ground(inst.schema.header_body),
            certainty=1.0,
            instance=at.instance,
        )
        wrapper.parent = at.parent
        wrapper.prev = at.prev
        wrapper.next = at
        if at.prev is not None:
            at.prev.next = wrapper
        elif at.parent is not None:
            at.parent.subplan = wrapper
        else:
            self.root = wrapper
        at.prev = wrapper
        wrapper.subplan = self._build_chain(inst, parent=wrapper)
        self.current = wrapper
        if now is not None:
            self.last_modified = now
        return inst

    def splice_after(self, step: PlanStep, schema_name: str, now: Optional[float] = None) -> SchemaInstance:
        """Append a fallback sub-dialogue right after a completed step."""
        schema = self.schemas.get(schema_name)
        if schema is None:
            raise UnknownSchema(f"no schema named {schema_name}")
        inst = instantiate(schema, [], self.me, self.you, self.inst_ids)
        first = self._build_chain(inst, parent=step.parent)
        last = first
        while last.next is not None:
            last = last.next
        follow = step.next
        step.next = first
        first.prev = step
        last.next = follow
        if follow is not None:
            follow.prev = last
        self.current = first
        if now is not None:
            self.last_modified = now
        return inst

    def apply_replan(self, outcome: "ReplanOutcome", now: Optional[float] = None) -> None:
        if self.awaiting_replan is None:
            raise PlanError("no replan pending")
        step, _info = self.awaiting_replan
        self.awaiting_replan = None
        if outcome.kind == "activate-subschema":
            self.splice_after(step, outcome.target, now)

    def force_skip_current(self, now: Optional[float] = None) -> bool:
        """Skip the pending expectation so the dialogue can move forward.
        Refused for certainty-1 expectations, which must be observed."""
        step = self.pending_expectation()
        if step is None or step.certainty >= 1.0:
            return False
        step.status = SKIPPED
        if now is not None:
            self.last_modified = now
        return True

    @property
    def exhausted(self) -> bool:
        return self.current is None


def _chain(step: PlanStep):
    while step is not None:
        yield step
        step = step.next


def init_plan(
    instance: SchemaInstance,
    schemas: Optional[dict[str, DialogueSchema]] = None,
    base_timeout: float = 30.0,
    now: float = 0.0,
) -> Plan:
    return Plan(instance, schemas or {}, base_timeout=base_timeout, now=now)


def certainty_timeout(certainty: float, base: float) -> float:
    """Waiting window for an expected episode: infinite at certainty 1,
    zero at certainty 0, base * c / (1 - c) between."""
    if not 0.0 <= certainty <= 1.0:
        raise ValueError(f"certainty {certainty} outside [0,1]")
    if certainty >= 1.0:
        return math.inf
    return base * certainty / (1.0 - certainty)


@dataclass
class ReplanOutcome:
    kind: str  # "respond" | "activate-subschema" | "move-on"
    target: Optional[str] = None  # sub-schema name
    words: Optional[list[str]] = None
    provenance: str = "replan:move-on"


def replan_on_failure(plan: Plan, registry, policy_tree: Optional[str], failed: Optional[Expr]) -> ReplanOutcome:
    """Pick a fallback for an unsatisfied goal or failed step by running a
    policy transduction tree over the goal's quoted words."""
    if policy_tree is None or registry is None or registry.get(policy_tree) is None:
        return ReplanOutcome(kind="move-on")
    words: list[str] = []
    if failed is not None:
        for sub in _wordlists(failed):
            words = [w.lower() for w in sub.words]
            break
        else:
            words = print_expr(failed).replace("(", " ").replace(")", " ").split()
    result = registry.transduce(policy_tree, words)
    if result is None:
        return ReplanOutcome(kind="move-on")
    if result.kind == "say":
        return ReplanOutcome(kind="respond", words=result.words, provenance="replan:" + "/".join(result.path))
    if result.kind == "subschema":
        return ReplanOutcome(
            kind="activate-subschema", target=result.target, provenance="replan:" + "/".join(result.path)
        )
    return ReplanOutcome(kind="move-on")


def _wordlists(e: Expr):
    if isinstance(e, WordList):
        yield e
    elif isinstance(e, Compound):
        for x in e:
            yield from _wordlists(x)
