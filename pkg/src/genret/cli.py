"""Command line front end for the full pipeline.

Typical run, start to finish:

    genret gen-world --out run/world --seed 7
    genret build-dataset --scene-graph run/world/scene_graph.json --out run/data
    genret score --instances run/world/instances.jsonl --backend oracle \
        --world run/world/world.json --scenes run/world/scenes.jsonl \
        --method generative --template "{O} is {A}" --out run/gen
    genret calibrate --instances run/world/instances.jsonl \
        --cache run/gen/scores.jsonl --steps 200 --lr 0.05 --out run/cal
    genret evaluate --instances run/world/instances.jsonl \
        --cache run/gen/scores.jsonl --out run/eval
    genret report --instances run/world/instances.jsonl \
        --cache run/gen/scores.jsonl --out run/cmp

Every command takes --out DIR and writes its resolved options there as
config.json.  A single --seed funnels all randomness, files are written
atomically (temp file, then rename), and nothing embeds a timestamp, so a
rerun with equal inputs is byte-identical.

Exit codes: 0 success, 1 pipeline error, 2 usage, 3 I/O, 4 bad input schema.
Failures print one line, `error[category]: detail`, to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .backends import (
    CachedScoreBackend,
    Capabilities,
    OracleBackend,
    RemoteBackend,
    UniformBackend,
)
from .calibration import (
    FitConfig,
    apply_calibration,
    fit,
    read_table,
    write_table,
)
from .core import (
    CANONICAL_TEMPLATE_SPECS,
    AnchorKind,
    Method,
    ScoredInstance,
    Template,
    parse_template,
    read_instances,
    stable_seed,
    tokenize,
    write_instances,
)
from .dataset import build_split, build_stats, parse_scene_graph, write_scene_graph
from .errors import ConfigurationError, GenretError, SchemaError
from .metrics import bucketize, compute_report
from .scoring import batch_rank, rank_instance, write_score_cache
from .world import (
    make_instances,
    random_world,
    read_scenes,
    read_world,
    sample_scenes,
    scenes_to_records,
    write_scenes,
    write_world,
)

ENDPOINT_ENV = "GENRET_REMOTE_ENDPOINT"


# -- plumbing ------------------------------------------------------------


def _atomic(path: Path, writer: Callable[[Path], None]) -> None:
    # write the temp file in the destination directory so the rename
    # cannot cross filesystems
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> None:
    def w(tmp: Path) -> None:
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")

    _atomic(path, w)


def _write_text(path: Path, text: str) -> None:
    def w(tmp: Path) -> None:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)

    _atomic(path, w)


@dataclass(frozen=True)
class RunConfig:
    """Resolved invocation, as persisted next to a command's outputs."""

    command: str
    options: dict

    def to_dict(self) -> dict:
        return {"command": self.command, "options": self.options}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(command=d["command"], options=dict(d["options"]))


def _ensure_out(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _emit_config(out: Path, args: argparse.Namespace, resolved: dict | None = None) -> None:
    options = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    if resolved:
        options.update(resolved)
    _write_json(out / "config.json", RunConfig(args.command, options).to_dict())


def _resolve_combo(
    cache: CachedScoreBackend, method_arg: str | None, template_arg: str | None
) -> tuple[Method, Template]:
    """Pick (method, template) for replaying a cache.

    Omitted flags are inferred when the cache holds exactly one choice.
    """
    combos = cache.combos()
    if not combos:
        raise ConfigurationError("score cache is empty")
    methods = sorted({m.value for m, _ in combos})
    names = sorted({t for _, t in combos})
    if method_arg is None:
        if len(methods) != 1:
            raise ConfigurationError(
                f"cache holds methods {methods}; pass --method"
            )
        method_arg = methods[0]
    if template_arg is None:
        if len(names) != 1:
            raise ConfigurationError(
                f"cache holds templates {names}; pass --template"
            )
        template_arg = names[0]
    return Method(method_arg), parse_template(template_arg)


def _replay(
    instances_path: str, cache_path: str, method_arg: str | None, template_arg: str | None
) -> tuple[list[ScoredInstance], Method, Template]:
    instances = read_instances(instances_path)
    cache = CachedScoreBackend.from_file(cache_path)
    method, template = _resolve_combo(cache, method_arg, template_arg)
    scored = [rank_instance(cache, inst, template, method) for inst in instances]
    return scored, method, template


# -- gen-world -----------------------------------------------------------


def _cmd_gen_world(args: argparse.Namespace) -> int:
    out = _ensure_out(args.out)
    kind = AnchorKind(args.anchor_kind)
    spec = random_world(
        seed=args.seed,
        n_objects=args.objects,
        n_attributes=args.attributes,
        attrs_per_object=args.attrs_per_object,
    )
    rng = np.random.default_rng(stable_seed(args.seed, "entity-counts"))
    counts = [
        int(v)
        for v in rng.integers(args.min_entities, args.max_entities + 1, size=args.scenes)
    ]
    scenes = sample_scenes(spec, counts)
    instances = []
    for scene in scenes:
        instances.extend(make_instances(spec, scene, args.candidates, kind, seed=args.seed))
    _atomic(out / "world.json", lambda p: write_world(p, spec))
    _atomic(out / "scenes.jsonl", lambda p: write_scenes(p, scenes))
    _atomic(
        out / "scene_graph.json",
        lambda p: write_scene_graph(p, scenes_to_records(scenes)),
    )
    _atomic(out / "instances.jsonl", lambda p: write_instances(p, instances))
    _emit_config(out, args)
    print(f"{len(scenes)} scenes, {len(instances)} instances -> {out}")
    return 0


# -- build-dataset -------------------------------------------------------


def _cmd_build_dataset(args: argparse.Namespace) -> int:
    out = _ensure_out(args.out)
    records = parse_scene_graph(args.scene_graph)
    stats = build_stats(records)
    mode = AnchorKind(args.mode)
    instances, manifest = build_split(
        records, stats, mode=mode, seed=args.seed, total=args.total
    )
    counts = (
        stats.attribute_counts if mode is AnchorKind.ATTRIBUTE else stats.object_counts
    )
    _atomic(out / "instances.jsonl", lambda p: write_instances(p, instances))
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "counts.json", counts)
    _emit_config(out, args)
    print(f"{manifest['n_instances']} instances from {manifest['n_images']} images -> {out}")
    return 0


# -- score ---------------------------------------------------------------


def _uniform_vocabulary(instances, template: Template) -> set[str]:
    vocab = {e for e in template.elements if isinstance(e, str)}
    for inst in instances:
        vocab.update(tokenize(inst.anchor))
        for cand in inst.candidates:
            vocab.update(tokenize(cand))
    return vocab


def _cmd_score(args: argparse.Namespace) -> int:
    out = _ensure_out(args.out)
    instances = read_instances(args.instances)
    resolved: dict = {}

    if args.backend == "cached":
        if not args.cache:
            raise ConfigurationError("--backend cached needs --cache")
        cache = CachedScoreBackend.from_file(args.cache)
        method, template = _resolve_combo(cache, args.method, args.template)
        backend = cache
    else:
        method = Method(args.method or Method.GENERATIVE.value)
        template = parse_template(args.template or "{A} {O}")
        if args.backend == "oracle":
            if not (args.world and args.scenes):
                raise ConfigurationError("--backend oracle needs --world and --scenes")
            backend = OracleBackend(
                read_world(args.world),
                read_scenes(args.scenes),
                smoothing=args.smoothing,
            )
        elif args.backend == "uniform":
            backend = UniformBackend(_uniform_vocabulary(instances, template))
        else:  # remote
            endpoint = args.endpoint or os.environ.get(ENDPOINT_ENV)
            if not endpoint:
                raise ConfigurationError(
                    f"--backend remote needs --endpoint or {ENDPOINT_ENV}"
                )
            backend = RemoteBackend(
                endpoint,
                capabilities=Capabilities(
                    has_generative=True,
                    has_contrastive=True,
                    has_terminal_token=args.terminal,
                    concurrent_safe=True,
                ),
            )
            resolved["endpoint"] = endpoint

    scored = batch_rank(
        backend,
        instances,
        template,
        method,
        parallelism=args.parallelism,
        length_normalize=args.length_normalize,
    )
    _atomic(out / "scores.jsonl", lambda p: write_score_cache(p, scored))
    resolved.update({"method": method.value, "template": template.name})
    _emit_config(out, args, resolved)
    print(f"scored {len(scored)} instances [{method.value} / {template.name}] -> {out}")
    return 0


# -- calibrate -----------------------------------------------------------


def _cmd_calibrate(args: argparse.Namespace) -> int:
    out = _ensure_out(args.out)
    scored, method, template = _replay(args.instances, args.cache, args.method, args.template)
    validation = None
    if (args.val_instances is None) != (args.val_cache is None):
        raise ConfigurationError("--val-instances and --val-cache go together")
    if args.val_instances is not None:
        validation, _, _ = _replay(
            args.val_instances, args.val_cache, method.value, template.name
        )
    config = FitConfig(
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        batch_size=None if args.batch_size <= 0 else args.batch_size,
        max_steps=args.steps,
        seed=args.seed,
        init_mu=args.init_mu,
        init_sigma=args.init_sigma,
    )
    table, history = fit(scored, config, validation=validation)
    _atomic(out / "calibration.json", lambda p: write_table(p, table))
    _atomic(out / "loss_curve.csv", lambda p: history.to_csv(p))
    _emit_config(out, args, {"method": method.value, "template": template.name})
    last = history.train_loss[-1] if history.train_loss else float("nan")
    print(
        f"calibrated {len(table.classes)} classes, {args.steps} steps, "
        f"final train loss {last:.6f} -> {out}"
    )
    return 0


# -- evaluate ------------------------------------------------------------


def _cmd_evaluate(args: argparse.Namespace) -> int:
    out = _ensure_out(args.out)
    scored, method, template = _replay(args.instances, args.cache, args.method, args.template)
    probs = None
    thresholds = args.threshold or []
    if args.calibration:
        table = read_table(args.calibration)
        probs = apply_calibration(table, scored)
        # rank by calibrated probability: most probable first
        scored = [
            ScoredInstance(
                instance=s.instance,
                template_name=s.template_name,
                method=s.method,
                scores=tuple(float(-v) for v in pr),
                per_token=None,
            )
            for s, pr in zip(scored, probs)
        ]
        if not thresholds:
            thresholds = [0.5]
    class_meta = None
    if args.class_frequencies:
        with open(args.class_frequencies, "r", encoding="utf-8") as fh:
            freqs = json.load(fh)
        class_meta = bucketize(
            {w: int(c) for w, c in freqs.items()}, args.head_cut, args.tail_cut
        )
    report = compute_report(
        scored,
        ks=tuple(args.k or [15]),
        thresholds=tuple(thresholds),
        probs=probs,
        class_meta=class_meta,
        head_cut=args.head_cut,
        tail_cut=args.tail_cut,
        pooling=args.pooling,
        treat_unlabeled_as_negative=args.unlabeled_negative,
    )
    _write_json(out / "report.json", report.to_dict())
    text = report.render_text()
    _write_text(out / "report.txt", text)
    _emit_config(
        out,
        args,
        {
            "method": method.value,
            "template": template.name,
            "k": list(args.k or [15]),
            "threshold": list(thresholds),
        },
    )
    print(text, end="")
    return 0


# -- report --------------------------------------------------------------


def _combo_key(combo: tuple[Method, str]):
    method, name = combo
    try:
        t_idx = CANONICAL_TEMPLATE_SPECS.index(name)
    except ValueError:
        t_idx = len(CANONICAL_TEMPLATE_SPECS)
    return (0 if method is Method.CONTRASTIVE else 1, t_idx, name)


def _cmd_report(args: argparse.Namespace) -> int:
    out = _ensure_out(args.out)
    instances = read_instances(args.instances)
    cache = CachedScoreBackend.from_file(args.cache)
    combos = cache.combos()
    if not combos:
        raise ConfigurationError("score cache is empty")
    rows = []
    for method, name in sorted(combos, key=_combo_key):
        template = parse_template(name)
        scored = [rank_instance(cache, inst, template, method) for inst in instances]
        rep = compute_report(scored, ks=(args.k,))
        rows.append(
            {
                "method": method.value,
                "template": name,
                "mean_rank": rep.mean_rank,
                f"mR@{args.k}": rep.mean_recall_at_k[args.k],
                "mAP": rep.mean_ap,
            }
        )
    _write_json(out / "comparison.json", {"k": args.k, "rows": rows})

    headers = ["method", "template", "mean_rank", f"mR@{args.k}", "mAP"]
    cells = [
        [
            r["method"],
            r["template"],
            f"{r['mean_rank']:.4f}",
            f"{r[f'mR@{args.k}']:.4f}",
            f"{r['mAP']:.4f}",
        ]
        for r in rows
    ]
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    for c in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(c, widths)).rstrip())
    text = "\n".join(lines) + "\n"
    _write_text(out / "comparison.txt", text)
    _emit_config(out, args)
    print(text, end="")
    return 0


# -- parser --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genret",
        description="Generative ranking of region descriptions: data, scoring, "
        "calibration, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gen-world", help="sample a synthetic world, its scenes, and instances")
    common(p)
    p.add_argument("--objects", type=int, default=20)
    p.add_argument("--attributes", type=int, default=60)
    p.add_argument("--attrs-per-object", type=int, default=5)
    p.add_argument("--scenes", type=int, default=40)
    p.add_argument("--min-entities", type=int, default=2)
    p.add_argument("--max-entities", type=int, default=4)
    p.add_argument(
        "--candidates",
        type=int,
        default=50,
        help="candidate list length; must not exceed the ranked vocabulary",
    )
    p.add_argument(
        "--anchor-kind",
        choices=[k.value for k in AnchorKind],
        default=AnchorKind.OBJECT.value,
        help="object anchors rank attributes; attribute anchors rank objects",
    )
    p.set_defaults(func=_cmd_gen_world)

    p = sub.add_parser("build-dataset", help="build ranking instances from a scene graph")
    common(p)
    p.add_argument("--scene-graph", required=True, help="scene-graph JSON file")
    p.add_argument(
        "--mode",
        choices=[k.value for k in AnchorKind],
        default=AnchorKind.ATTRIBUTE.value,
        help="the ranked kind: attribute ranks attributes per object box",
    )
    p.add_argument("--total", type=int, default=50, help="candidates per instance")
    p.set_defaults(func=_cmd_build_dataset)

    p = sub.add_parser("score", help="score instances with a chosen backend")
    common(p)
    p.add_argument("--instances", required=True)
    p.add_argument(
        "--backend", required=True, choices=["oracle", "uniform", "cached", "remote"]
    )
    p.add_argument("--method", choices=[m.value for m in Method], default=None)
    p.add_argument("--template", default=None, help='template spec, e.g. "{O} is {A}"')
    p.add_argument("--length-normalize", action="store_true")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--world", help="world JSON (oracle)")
    p.add_argument("--scenes", help="scenes JSONL (oracle)")
    p.add_argument("--smoothing", type=float, default=1e-6, help="oracle smoothing")
    p.add_argument("--cache", help="scores JSONL to replay (cached)")
    p.add_argument("--endpoint", help=f"scoring service URL (remote; or {ENDPOINT_ENV})")
    p.add_argument(
        "--terminal",
        action="store_true",
        help="remote service models an end-of-sentence token; its terminal "
        "probabilities enter the loss",
    )
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("calibrate", help="fit per-class probability calibration")
    common(p)
    p.add_argument("--instances", required=True)
    p.add_argument("--cache", required=True, help="scores JSONL to fit on")
    p.add_argument("--method", choices=[m.value for m in Method], default=None)
    p.add_argument("--template", default=None)
    p.add_argument("--val-instances", default=None)
    p.add_argument("--val-cache", default=None)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=4, help="0 or less: full batch")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--init-mu", type=float, default=-15.0)
    p.add_argument("--init-sigma", type=float, default=0.5)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("evaluate", help="compute the metric report for one cache")
    common(p)
    p.add_argument("--instances", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--method", choices=[m.value for m in Method], default=None)
    p.add_argument("--template", default=None)
    p.add_argument("--k", type=int, action="append", help="recall cutoff, repeatable")
    p.add_argument(
        "--threshold", type=float, action="append", help="probability cutoff, repeatable"
    )
    p.add_argument("--head-cut", type=int, default=5000)
    p.add_argument("--tail-cut", type=int, default=500)
    p.add_argument("--calibration", help="calibration JSON; ranks by probability")
    p.add_argument("--class-frequencies", help="counts JSON for bucket breakdowns")
    p.add_argument("--pooling", choices=["class", "instance"], default="class")
    p.add_argument("--unlabeled-negative", action="store_true")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="side-by-side table over every cached combo")
    common(p)
    p.add_argument("--instances", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--k", type=int, default=15)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"error[schema]: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 3
    except GenretError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    raise SystemExit(main(sys.argv[1:]))
