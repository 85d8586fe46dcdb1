"""Operator command line: chat, validate, test-tree, eval, balance, serve.

Exit codes: 0 on success with no error diagnostics, 1 when a command found
errors (failed validations, failed tree cases, format problems), 2 for
usage problems.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .interpret import tokenize
from .pack import builtin_pack_path, load_pack, validate_pack
from .session import Session, SessionClosed
from .stats import (
    RatingItem,
    TurnAnnotation,
    averaged_annotation_metrics,
    balance_hits,
    cohens_kappa,
    mann_whitney_u,
    summarize_ratings,
)
from .transduction import TreeError


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    return args.func(args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parley", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    parser.set_defaults(command=None)

    p_chat = sub.add_parser("chat", help="talk to a persona (interactive or scripted)")
    p_chat.add_argument("--pack", default=None, help="pack directory (default: bundled persona)")
    p_chat.add_argument("--script", default=None, help="file of user turns, one per line")
    p_chat.add_argument("--transcript", default=None, help="write the transcript (JSON lines) here")
    p_chat.add_argument("--show-trace", action="store_true", help="print gist and directive path per turn")
    p_chat.add_argument("--seed", type=int, default=0)
    p_chat.add_argument("--tick", type=float, default=None, help="virtual seconds per turn")
    p_chat.set_defaults(func=cmd_chat)

    p_val = sub.add_parser("validate", help="check a pack's schemas, trees, and lexicon")
    p_val.add_argument("--pack", default=None)
    p_val.set_defaults(func=cmd_validate)

    p_tree = sub.add_parser("test-tree", help="run tab-separated cases through a tree")
    p_tree.add_argument("--pack", default=None)
    p_tree.add_argument("--tree", required=True, help="tree name inside the pack")
    p_tree.add_argument("--cases", required=True, help="file: input<TAB>expected-kind<TAB>expected-output")
    p_tree.set_defaults(func=cmd_test_tree)

    p_eval = sub.add_parser("eval", help="annotation metrics, agreement, and rating summaries")
    p_eval.add_argument("--annotations", nargs="+", default=[], help="one TSV per annotator")
    p_eval.add_argument(
        "--correction-order",
        choices=("before-average", "after-average"),
        default="before-average",
        help="apply the recognition-error correction before or after averaging annotators",
    )
    p_eval.add_argument("--ratings", default=None, help="TSV: item,rater,question,system,rating")
    p_eval.add_argument("--baseline", default=None, help="system treated as the first row")
    p_eval.add_argument("--json", dest="as_json", action="store_true")
    p_eval.set_defaults(func=cmd_eval)

    p_bal = sub.add_parser("balance", help="assign rating items to balanced batches")
    p_bal.add_argument("--items", required=True, help="JSON list of items")
    p_bal.add_argument("--hits", type=int, default=20)
    p_bal.add_argument("--per-hit", type=int, default=16)
    p_bal.add_argument("--out", default=None, help="write the assignment JSON here")
    p_bal.set_defaults(func=cmd_balance)

    p_serve = sub.add_parser("serve", help="run the session service")
    p_serve.add_argument("--config", default=None, help="JSON config; flags override its fields")
    p_serve.add_argument("--pack", default=None)
    p_serve.add_argument("--host", default=None)
    p_serve.add_argument("--port", type=int, default=None)
    p_serve.add_argument("--persist", default=None)
    p_serve.add_argument("--token", default=None)
    p_serve.add_argument("--idle-timeout", type=float, default=None)
    p_serve.add_argument("--seed", type=int, default=None)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def _pack_path(args) -> Path:
    return Path(args.pack) if args.pack else builtin_pack_path()


# ----------------------------------------------------------------------


def cmd_chat(args) -> int:
    try:
        pack = load_pack(_pack_path(args))
    except Exception as exc:
        print(f"pack error: {exc}", file=sys.stderr)
        return 1
    session = Session(pack, seed=args.seed, tick=args.tick)
    records = session.open_turns()
    _print_records(pack, records, args.show_trace)

    if args.script is not None:
        lines = [
            line.strip()
            for line in Path(args.script).read_text().splitlines()
            if line.strip() and not line.strip().startswith("#")
        ]
        for line in lines:
            print(f"{pack.you.name}: {' '.join(tokenize(line))}")
            try:
                records = session.run_turn(line)
            except SessionClosed:
                print("[session closed]")
                break
            _print_records(pack, records, args.show_trace)
    else:
        while not session.closed:
            try:
                line = input(f"{pack.you.name}> ").strip()
            except EOFError:
                break
            if line.lower() in ("exit", "quit"):
                break
            if not line:
                continue
            try:
                records = session.run_turn(line)
            except SessionClosed:
                break
            _print_records(pack, records, args.show_trace)

    if args.transcript is not None:
        text = "".join(r.to_json() + "\n" for r in session.history)
        Path(args.transcript).write_text(text)
    return 0


def _print_records(pack, records, show_trace: bool) -> None:
    for r in records:
        if r.speaker != "system":
            continue
        print(f"{pack.me.name}: {r.text}")
        if show_trace:
            print(f"  [trace kind={r.kind} provenance={r.provenance}]")
            for event in r.trace.get("events", []):
                print(f"  [event {json.dumps(event, sort_keys=True)}]")


def cmd_validate(args) -> int:
    diags = validate_pack(_pack_path(args))
    errors = [d for d in diags if d.severity == "error"]
    for d in diags:
        print(d)
    try:
        pack = load_pack(_pack_path(args)) if not errors else None
    except Exception:
        pack = None
    if pack is not None:
        print(
            f"pack {pack.name}: {len(pack.schemas)} schemas, "
            f"{len(pack.registry.trees)} trees, top level {pack.top_level}"
        )
    print(f"{len(errors)} error(s), {len(diags) - len(errors)} warning(s)")
    return 1 if errors else 0


def cmd_test_tree(args) -> int:
    try:
        pack = load_pack(_pack_path(args))
    except Exception as exc:
        print(f"pack error: {exc}", file=sys.stderr)
        return 1
    if pack.registry.get(args.tree) is None:
        print(f"no tree named {args.tree}", file=sys.stderr)
        return 1
    failures = 0
    total = 0
    for lineno, raw in enumerate(Path(args.cases).read_text().splitlines(), 1):
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) < 2:
            print(f"line {lineno}: expected input<TAB>kind[<TAB>output]")
            failures += 1
            continue
        text, expected_kind = parts[0], parts[1]
        expected_out = parts[2] if len(parts) > 2 else ""
        total += 1
        try:
            result = pack.registry.transduce(args.tree, tokenize(text))
        except TreeError as exc:
            print(f"line {lineno}: FAIL exception {exc}")
            failures += 1
            continue
        got_kind = result.kind if result is not None else "none"
        if result is None:
            got_out = ""
        elif result.kind in ("gist", "say"):
            got_out = " ".join(result.words)
        elif result.kind == "subschema":
            got_out = result.target
        elif result.kind == "ulf":
            got_out = repr(result.ulf)
        else:
            got_out = ""
        ok = got_kind == expected_kind and (not expected_out or got_out == expected_out)
        if ok:
            print(f"line {lineno}: ok ({got_kind})")
        else:
            print(
                f"line {lineno}: FAIL expected {expected_kind} {expected_out!r}, "
                f"got {got_kind} {got_out!r}"
            )
            failures += 1
    print(f"{total - failures}/{total} cases passed")
    return 1 if failures else 0


# ----------------------------------------------------------------------


def _read_annotations(path: str) -> list[TurnAnnotation]:
    out = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise ValueError(f"{path}:{lineno}: expected gist<TAB>response[<TAB>asr]")
        asr = len(parts) > 2 and parts[2].strip() in ("1", "true", "yes")
        out.append(TurnAnnotation(gist=parts[0].strip(), response=parts[1].strip(), asr_error=asr))
    return out


def _read_ratings(path: str) -> list[RatingItem]:
    items: dict[str, RatingItem] = {}
    sides: dict[str, dict[str, str]] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected item<TAB>rater<TAB>question<TAB>system<TAB>rating")
        item_id, rater, question, system, rating = (p.strip() for p in parts)
        item = items.setdefault(item_id, RatingItem(item_id=item_id))
        assignment = sides.setdefault(item_id, {})
        if system not in assignment:
            side = "a" if not assignment else "b"
            assignment[system] = side
            if side == "a":
                item.system_a = system
            else:
                item.system_b = system
        value = None if rating.upper() in ("NA", "N/A") else float(rating)
        item.add_rating(rater, question.lower(), assignment[system], value)
    return list(items.values())


def cmd_eval(args) -> int:
    report: dict = {}
    lines: list[str] = []
    if args.annotations:
        annotator_lists = [_read_annotations(p) for p in args.annotations]
        table = averaged_annotation_metrics(annotator_lists, args.correction_order)
        p = table.percents()
        report["annotation"] = p
        lines.append(f"turns annotated: {table.n} (x{len(annotator_lists)} annotators)")
        lines.append(f"asr errors: {p['asr_errors']}%")
        lines.append(f"correct gist extracted: {p['gist_correct']}%")
        lines.append(f"no gist extracted: {p['gist_none']}%")
        lines.append(f"incorrect gist extracted: {p['gist_incorrect']}%")
        lines.append(f"appropriate response: {p['response_appropriate']}%")
        lines.append(f"clarification request response: {p['response_clarification']}%")
        lines.append(f"inappropriate response: {p['response_inappropriate']}%")
        lines.append(f"appropriate response given gist clause extracted: {p['appropriate_given_gist']}%")
        if len(annotator_lists) == 2:
            a, b = annotator_lists
            if len(a) == len(b):
                kg = cohens_kappa([x.gist for x in a], [x.gist for x in b])
                kr = cohens_kappa([x.response for x in a], [x.response for x in b])
                report["kappa"] = {"gist": kg, "response": kr}
                lines.append(f"kappa (gist annotations): {kg:.2f}")
                lines.append(f"kappa (response annotations): {kr:.2f}")
    if args.ratings:
        items = _read_ratings(args.ratings)
        summary = summarize_ratings(items, baseline=args.baseline)
        first, second = summary.systems
        report["ratings"] = {"systems": summary.systems, "questions": {}}
        lines.append(f"rating systems: {first} vs {second} ({len(items)} items)")
        for q in ("q1", "q2", "q3", "q4"):
            per_item = {}
            for system in summary.systems:
                per_item[system] = [
                    avg
                    for it in items
                    if (side := it.system_side(system)) is not None
                    and (avg := it.item_average(q, side)) is not None
                ]
            n_total = len(per_item[first]) + len(per_item[second])
            mode = "exact" if n_total <= 12 else "normal"
            mw = mann_whitney_u(per_item[first], per_item[second], mode=mode)
            row = {
                "mean": {s: summary.mean[(q, s)] for s in summary.systems},
                "median": {s: summary.median[(q, s)] for s in summary.systems},
                "diff_mean": summary.diff_mean[q],
                "diff_median": summary.diff_median[q],
                "u": mw.u,
                "p": mw.p,
            }
            report["ratings"]["questions"][q] = row
            lines.append(
                f"{q}: {first} mean {row['mean'][first]:.2f} median {row['median'][first]:.2f} | "
                f"{second} mean {row['mean'][second]:.2f} median {row['median'][second]:.2f} | "
                f"diff {row['diff_mean']:+.2f} (median {row['diff_median']:+.2f}) | "
                f"U={mw.u:.1f} p={mw.p:.4f}"
            )
    if not report:
        print("nothing to evaluate: pass --annotations and/or --ratings", file=sys.stderr)
        return 2
    if args.as_json:
        print(json.dumps(report, sort_keys=True, indent=2))
    else:
        print("\n".join(lines))
    return 0


def cmd_balance(args) -> int:
    data = json.loads(Path(args.items).read_text())
    items = [
        RatingItem(
            item_id=str(d["id"]),
            context_text=d.get("context", ""),
            doctor_text=d.get("doctor", ""),
            response_a=d.get("response_a", ""),
            response_b=d.get("response_b", ""),
            quality_a=d.get("quality_a", ""),
            quality_b=d.get("quality_b", ""),
        )
        for d in data
    ]
    report = balance_hits(items, n_hits=args.hits, per_hit=args.per_hit)
    out = {
        "hits": report.hits,
        "exact": report.exact,
        "length_deviation": report.length_deviation,
        "quality_deviation": report.quality_deviation,
        "notes": report.notes,
    }
    text = json.dumps(out, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def build_serve_config(args):
    """Merge the optional JSON config file with flag overrides."""
    from .service import ServiceConfig

    settings = {
        "pack_path": None,
        "persist_dir": "./sessions",
        "host": "127.0.0.1",
        "port": 8140,
        "token": None,
        "idle_timeout": 3600.0,
        "seed": 0,
    }
    if args.config:
        loaded = json.loads(Path(args.config).read_text())
        unknown = set(loaded) - set(settings)
        if unknown:
            raise ValueError(f"unknown config field(s) {sorted(unknown)}")
        settings.update(loaded)
    for flag, key in (
        ("pack", "pack_path"),
        ("persist", "persist_dir"),
        ("host", "host"),
        ("port", "port"),
        ("token", "token"),
        ("idle_timeout", "idle_timeout"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag)
        if value is not None:
            settings[key] = value
    if not settings["pack_path"]:
        settings["pack_path"] = str(builtin_pack_path())
    return ServiceConfig(**settings)


def cmd_serve(args) -> int:
    from .service import serve

    try:
        config = build_serve_config(args)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    serve(config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
