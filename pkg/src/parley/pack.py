"""Persona pack loading and validation.

A pack directory bundles everything that defines one conversational persona:

- ``pack.json``: manifest naming the participants, the top-level session
  schema, and the schema/tree/lexicon/knowledge files;
- ``*.schema`` files (one schema each);
- ``*.tree`` transduction trees, resolved against one ``*.lex`` lexicon;
- an optional knowledge seed file (one fact per line);
- clarification phrases used by the fallback generator.

Tree lookup follows a naming convention keyed on gist topics:
``interp-<topic>`` / ``interp-general`` for interpretation, ``ulf-<topic>``
/ ``ulf-general`` for logical forms, ``react-<topic>`` / ``react-general``
for reactions, and ``para-<topic>`` for paraphrase variants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .expr import Expr, Symbol, parse_all
from .schema import DialogueSchema, Diagnostic, SchemaError, parse_schema, validate_schema
from .transduction import FeatureLexicon, TreeError, TreeRegistry, parse_tree


class PackError(Exception):
    pass


class PackValidationFailed(PackError):
    def __init__(self, diagnostics: list[Diagnostic]):
        super().__init__("; ".join(str(d) for d in diagnostics))
        self.diagnostics = diagnostics


@dataclass
class PersonaPack:
    name: str
    me: Symbol
    you: Symbol
    top_level: str
    schemas: dict[str, DialogueSchema]
    registry: TreeRegistry
    kb_facts: list[Expr] = field(default_factory=list)
    clarifications: list[list[str]] = field(default_factory=list)
    replan_tree: Optional[str] = None
    base_timeout: float = 30.0
    turn_tick: float = 10.0
    root: Optional[Path] = None

    def schema(self, name: str) -> Optional[DialogueSchema]:
        return self.schemas.get(name.lower())

    def tree_for(self, purpose: str, topic: Optional[str]) -> Optional[str]:
        """Name of the tree serving a purpose for a topic, if loaded."""
        if topic is not None and self.registry.get(f"{purpose}-{topic}") is not None:
            return f"{purpose}-{topic}"
        if self.registry.get(f"{purpose}-general") is not None:
            return f"{purpose}-general"
        return None

    def question_topic(self, words) -> Optional[str]:
        """Topic of the schema whose quoted gist these words are, if any."""
        from .expr import WordList, subexpressions
        from .schema import SectionKind

        try:
            want = WordList(words)
        except ValueError:
            return None
        for schema in self.schemas.values():
            for entry in schema.entries(SectionKind.EPISODES):
                for sub in subexpressions(entry.formula):
                    if isinstance(sub, WordList) and sub == want:
                        return schema.topic
        return None


def load_pack(path) -> PersonaPack:
    """Load and fully validate a pack directory; raises PackValidationFailed."""
    pack, diagnostics = _load(Path(path))
    errors = [d for d in diagnostics if d.severity == "error"]
    if errors:
        raise PackValidationFailed(errors)
    return pack


def validate_pack(path) -> list[Diagnostic]:
    """All diagnostics for a pack directory, empty when clean."""
    _, diagnostics = _load(Path(path))
    return diagnostics


def _load(root: Path) -> tuple[Optional[PersonaPack], list[Diagnostic]]:
    diags: list[Diagnostic] = []

    def err(msg, **kw):
        diags.append(Diagnostic("error", msg, **kw))

    manifest_path = root / "pack.json"
    if not manifest_path.is_file():
        err(f"missing manifest {manifest_path}")
        return None, diags
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        err(f"bad manifest: {exc}")
        return None, diags

    lexicon = FeatureLexicon()
    lex_rel = manifest.get("lexicon")
    if lex_rel:
        try:
            lexicon = FeatureLexicon.parse((root / lex_rel).read_text())
        except (OSError, TreeError) as exc:
            err(f"lexicon {lex_rel}: {exc}")

    registry = TreeRegistry(lexicon)
    tree_files: dict[str, str] = {}
    for rel in manifest.get("trees", []):
        try:
            tree = parse_tree((root / rel).read_text())
            registry.add(tree)
            tree_files[tree.name] = rel
        except (OSError, TreeError) as exc:
            err(f"tree {rel}: {exc}")
    try:
        registry.resolve()
    except TreeError as exc:
        named = next((n for n in tree_files if str(exc).startswith(n + ":")), None)
        where = f"tree {tree_files[named]}: " if named else ""
        err(f"{where}{exc}")

    schemas: dict[str, DialogueSchema] = {}
    for rel in manifest.get("schemas", []):
        try:
            schema = parse_schema((root / rel).read_text())
        except (OSError, SchemaError) as exc:
            err(f"schema {rel}: {exc}")
            continue
        if schema.name in schemas:
            err(f"duplicate schema name {schema.name}", schema=schema.name)
        schemas[schema.name] = schema
        diags.extend(validate_schema(schema))

    kb_facts: list[Expr] = []
    kb_rel = manifest.get("kb")
    if kb_rel:
        try:
            kb_facts = parse_all((root / kb_rel).read_text())
        except Exception as exc:
            err(f"kb {kb_rel}: {exc}")

    top_level = str(manifest.get("top_level", "")).lower()
    if top_level and top_level not in schemas:
        err(f"top_level schema {top_level} not in pack")
    if not top_level:
        err("manifest missing top_level")

    persona = manifest.get("persona", {})
    me = str(persona.get("me", "agent")).lower()
    you = str(persona.get("you", "user")).lower()

    replan_tree = manifest.get("replan_tree")
    if replan_tree and registry.get(replan_tree) is None:
        err(f"replan_tree {replan_tree} not in pack")

    # sub-schema directives in trees must name schemas from this pack
    for tree in registry.trees.values():
        for node, _ in tree.walk():
            d = node.directive
            if d is not None and d.kind == "subschema" and d.target not in schemas:
                err(f"tree {tree.name}: sub-schema directive names unknown schema {d.target}")

    clarifications = [str(c).split() for c in manifest.get("clarifications", [])]

    pack = PersonaPack(
        name=str(manifest.get("name", root.name)),
        me=Symbol(me),
        you=Symbol(you),
        top_level=top_level,
        schemas=schemas,
        registry=registry,
        kb_facts=kb_facts,
        clarifications=clarifications,
        replan_tree=replan_tree,
        base_timeout=float(manifest.get("base_timeout", 30.0)),
        turn_tick=float(manifest.get("turn_tick", 10.0)),
        root=root,
    )
    return pack, diags


def builtin_pack_path(name: str = "eleanor") -> Path:
    """Path of a pack shipped inside the package."""
    return Path(__file__).parent / "packs" / name
