"""Batch command-line interface: prepare | learn | eval | explain | scenario.

Every run writes into a timestamped directory under the configured output
root; each artifact embeds the config, its hash, and the seed.  Exit codes:
0 success, 2 parse error, 3 contract violation, 4 training divergence,
1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from .config import ExperimentConfig
from .datasets import load_dataset, validate_counts
from .errors import TkgError
from .estimator import TemporalRuleRanker
from .ranking import metrics
from .scenarios import plot_rows, run_biased, run_few_samples, run_time_shift, write_rows


def _load_config(args) -> ExperimentConfig:
    config = (
        ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    )
    for name in ("seed", "workers", "max_rule_len", "output"):
        value = getattr(args, name, None)
        if value is None:
            continue
        if name == "max_rule_len":
            config.max_rule_length = value
        elif name == "output":
            config.output_dir = value
        else:
            setattr(config, name, value)
    return config


def _run_dir(config: ExperimentConfig, command: str) -> Path:
    stamp = time.strftime("%Y%m%d_%H%M%S")
    base = Path(config.output_dir) / f"{command}_{stamp}"
    d = base
    suffix = 1
    while d.exists():
        d = base.with_name(f"{base.name}_{suffix}")
        suffix += 1
    d.mkdir(parents=True)
    (d / "config.json").write_text(json.dumps(config.stamp(), indent=1))
    return d


def _load_split(config: ExperimentConfig):
    if not (config.train_path and config.valid_path and config.test_path):
        raise TkgError("config must set train_path, valid_path, and test_path")
    split = load_dataset(config.train_path, config.valid_path, config.test_path)
    if config.dataset:
        validate_counts(split, config.dataset, strict=config.strict_counts)
    return split


def cmd_prepare(args) -> int:
    config = _load_config(args)
    run = _run_dir(config, "prepare")
    split = _load_split(config)
    graph = split.build_train_graph()
    graph.save(run / "graph.npz")
    meta = split.metadata()
    meta.update(config.stamp())
    (run / "metadata.json").write_text(json.dumps(meta, indent=1))
    print(
        f"prepared {config.dataset}: "
        f"|train|={len(split.train)} |valid|={len(split.valid)} |test|={len(split.test)} "
        f"|E|={split.num_entities} |R|={split.num_base_relations}"
    )
    print(f"artifacts in {run}")
    return 0


def _stamp_comment(config: ExperimentConfig) -> str:
    return f"# config_hash={config.hash()} seed={config.seed}"


def _write_trace(path, trace, config):
    with open(path, "w", newline="") as fh:
        fh.write(_stamp_comment(config) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(trace):
            writer.writerow([i, loss])


def cmd_learn(args) -> int:
    config = _load_config(args)
    run = _run_dir(config, "learn")
    split = _load_split(config)
    est = config.make_estimator()
    est.fit(split)
    est.save(run / "checkpoint")
    _write_trace(run / "loss_phase1.csv", est.fit_report_["phase1_trace"], config)
    _write_trace(run / "loss_phase2.csv", est.fit_report_["phase2_trace"], config)
    report = dict(est.fit_report_)
    report.update(config.stamp())
    (run / "fit_report.json").write_text(json.dumps(report, indent=1))
    print(
        f"learned {report['num_rules']} rules from {report['num_examples']} examples "
        f"({report['skipped_examples']} skipped)"
    )
    print(f"checkpoint in {run / 'checkpoint'}")
    return 0


def _checkpoint(args, config) -> TemporalRuleRanker:
    if not args.checkpoint:
        raise TkgError("--checkpoint is required")
    est = TemporalRuleRanker.load(args.checkpoint)
    est.set_params(workers=config.workers)
    return est


def cmd_eval(args) -> int:
    config = _load_config(args)
    run = _run_dir(config, "eval")
    split = _load_split(config)
    est = _checkpoint(args, config)
    facts = {"train": split.train, "valid": split.valid, "test": split.test}[
        args.split or config.eval_split
    ]
    known = (
        split.build_full_graph().resolve(seed=config.seed) if config.filter_known else None
    )
    report, answers = est.evaluate(
        facts,
        known_graph=known,
        both_directions=config.both_directions,
        explanations=False,
    )
    payload = dict(report)
    payload.update(config.stamp())
    (run / "metrics.json").write_text(json.dumps(payload, indent=1))
    with open(run / "rankings.jsonl", "w") as fh:
        fh.write(json.dumps({"provenance": config.stamp()}) + "\n")
        for a in answers:
            fh.write(a.to_json() + "\n")
    print(
        f"{args.split or config.eval_split}: "
        f"MRR={report['mrr']:.4f} hit@1={report['hit1']:.4f} hit@10={report['hit10']:.4f} "
        f"({report['count']} queries)"
    )
    print(f"artifacts in {run}")
    return 0


def cmd_explain(args) -> int:
    config = _load_config(args)
    run = _run_dir(config, "explain")
    split = _load_split(config)
    est = _checkpoint(args, config)
    ent_index = {name: i for i, name in enumerate(split.entities)}
    rel_index = {name: i for i, name in enumerate(split.relations)}

    def entity_id(token):
        return ent_index[token] if token in ent_index else int(token)

    def relation_id(token):
        return rel_index[token] if token in rel_index else int(token)

    subject = entity_id(args.subject)
    relation = relation_id(args.relation)
    interval = est._resolve_query_interval(relation, float(args.start), float(args.end))
    from .ranking import Query

    answer = est._answer(
        Query(subject, relation, interval),
        truth=-1,
        explanations=True,
        entity_names=split.entities,
        relation_names=_relation_names(split),
    )
    lines = [
        f"query: {split.relations[relation]}({split.entities[subject]}, ?, "
        f"[{interval[0]:.0f}, {interval[1]:.0f}])",
        "",
    ]
    for c, s in answer.candidates[: args.top]:
        lines.append(f"candidate {split.entities[c]}  score={s:.6f}")
    lines.append("")
    for block in answer.explanations:
        lines.append(f"candidate {split.entities[block['candidate']]}:")
        for rule_info in block["rules"]:
            lines.append(f"  rule: {rule_info['rule']}")
            if "grounding" in rule_info:
                lines.append(f"  grounding: {rule_info['grounding']}")
            lines.append(
                f"  arriving_rate={rule_info['arriving_rate']:.4f} "
                f"rule_score={rule_info['rule_score']:.6f}"
            )
        lines.append("")
    doc = "\n".join(lines)
    (run / "explanation.txt").write_text(
        doc + f"\n\nconfig_hash={config.hash()} seed={config.seed}\n"
    )
    print(doc)
    return 0


def _relation_names(split):
    base = list(split.relations)
    return base + [f"{r}^-1" for r in base]


def cmd_scenario(args) -> int:
    config = _load_config(args)
    run = _run_dir(config, f"scenario_{args.which}")
    split = _load_split(config)
    factory = config.make_estimator
    if args.which == "few":
        rows = run_few_samples(
            split,
            factory,
            fractions=config.scenario_fractions,
            rounds=config.scenario_rounds,
            seed=config.seed,
            filter_known=config.filter_known,
        )
    elif args.which == "biased":
        rel_ids = config.scenario_relations
        if rel_ids is not None:
            rel_ids = [
                split.relations.index(r) if isinstance(r, str) else int(r)
                for r in rel_ids
            ]
        rows = run_biased(
            split,
            factory,
            relations=rel_ids,
            rounds=config.scenario_rounds,
            seed=config.seed,
            filter_known=config.filter_known,
        )
    elif args.which == "shift":
        if not config.scenario_boundaries:
            raise TkgError("config must set scenario_boundaries for the shift scenario")
        rows, report = run_time_shift(
            split,
            factory,
            tuple(config.scenario_boundaries),
            seed=config.seed,
            filter_known=config.filter_known,
        )
        (run / "shift_report.json").write_text(
            json.dumps(
                {
                    "boundaries": list(report.boundaries),
                    "ranges": report.ranges(),
                    "sizes": list(report.sizes),
                    **config.stamp(),
                },
                indent=1,
            )
        )
        print(f"shift ranges: {report.ranges()} sizes: {report.sizes}")
    else:
        raise TkgError(f"unknown scenario {args.which!r}")
    write_rows(rows, run / "scenario.csv", header_comment=_stamp_comment(config))
    plot_rows(rows, run / "scenario.png", title=f"{config.dataset}: {args.which}")
    for row in rows:
        print(
            f"{row.setting} round={row.round} "
            f"MRR={row.mrr:.4f} hit@1={row.hit1:.4f} hit@10={row.hit10:.4f}"
        )
    print(f"artifacts in {run}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tkgrules",
        description="Temporal rule learning and link prediction on interval knowledge graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="path to an experiment config JSON")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--max-rule-len", dest="max_rule_len", type=int, default=None)
        p.add_argument("--output", default=None, help="output root directory")

    p = sub.add_parser("prepare", help="load, validate, and snapshot a dataset")
    common(p)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("learn", help="discover rules and run both training phases")
    common(p)
    p.set_defaults(fn=cmd_learn)

    p = sub.add_parser("eval", help="rank held-out queries and report metrics")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "valid", "test"], default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("explain", help="explain the ranking of one query")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--relation", required=True)
    p.add_argument("--start", required=True)
    p.add_argument("--end", required=True)
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("scenario", help="run a hard-setting protocol")
    common(p)
    p.add_argument("which", choices=["few", "biased", "shift"])
    p.set_defaults(fn=cmd_scenario)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except TkgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
