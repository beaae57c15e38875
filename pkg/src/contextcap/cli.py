"""Command-line surface: train, generate, evaluate, tokenize, validate, repl.

Exit codes: 0 ok, 1 usage, 2 data error, 3 runtime error.  Errors go to
stderr, data to stdout, and every run logs its fully resolved configuration.
"""

import argparse
import dataclasses
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import bpe
from . import model as modelmod
from .context import (ENTITY_TYPES, NerDictionary, build_context,
                      load_ner_records)
from .errors import (ContextcapError, DataError, InputError, ParseError,
                     SchemaError, VocabularyError)
from .metrics import EvalItem, evaluate_corpus, read_eval_file, write_eval_report
from .model import AblationFlags, ModelConfig
from .training import TrainConfig, build_dataset, train, write_loss_log
from .visual import load_features

_DATA_ERRORS = (ParseError, SchemaError, DataError, VocabularyError, InputError,
                FileNotFoundError, IsADirectoryError)

ABLATIONS = {
    "none": {},
    "w/o visual": {"use_visual": False},
    "w/o textual": {"use_textual": False},
    "w/o net": {"use_entity_types": False},
    "w/o relational graph": {"use_graph": False},
    "w/o edge features": {"use_edge_feats": False},
    "w/o object features": {"use_object_feats": False},
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse would sys.exit(2); route usage problems to exit code 1 instead
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def parse_ablation(name):
    """Normalize a table-style ablation name; returns (flags, canonical name)."""
    if name is None:
        return AblationFlags(), "none"
    key = name.strip().lower().replace("_", " ").replace("-", " ")
    key = re.sub(r"^(w[ /]?o|without)\s+", "w/o ", key)
    key = re.sub(r"\s+", " ", key)
    if key not in ABLATIONS:
        raise InputError(
            f"unknown ablation {name!r}; valid: {', '.join(sorted(ABLATIONS))}"
        )
    return AblationFlags(**ABLATIONS[key]), key


def parse_tokens(text):
    """\"GPE=Delhi,India;DATE=Friday\" -> NerDictionary."""
    entries = {}
    if text:
        for part in text.split(";"):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise InputError(
                    f"bad token group {part!r}; expected TYPE=value[,value...]"
                )
            label, _, values = part.partition("=")
            label = label.strip()
            if label not in ENTITY_TYPES:
                raise InputError(
                    f"unknown entity type {label!r}; valid: {', '.join(ENTITY_TYPES)}"
                )
            tokens = [v.strip() for v in values.split(",") if v.strip()]
            if not tokens:
                raise InputError(f"entity type {label!r} has no values")
            entries.setdefault(label, []).extend(tokens)
    return NerDictionary(entries=entries)


def _parse_mode(text):
    if text == "greedy":
        return "greedy", 1
    if text == "beam":
        return "beam", 3
    m = re.fullmatch(r"beam:(\d+)", text)
    if m and int(m.group(1)) >= 1:
        return "beam", int(m.group(1))
    raise argparse.ArgumentTypeError(
        f"bad mode {text!r}; expected greedy, beam, or beam:K"
    )


def _load_config_file(path):
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError as exc:
            raise InputError("TOML config files need Python 3.11+") from exc
        return tomllib.loads(text)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config file {path}: {exc}") from exc


def _split_config(obj):
    """Config files carry {model: ..., train: ...} sections; a bare model
    config dump (the checkpoint/to_json format) is accepted whole."""
    if not isinstance(obj, dict):
        raise SchemaError("config file must hold a JSON/TOML object")
    if "model" in obj or "train" in obj:
        extra = set(obj) - {"model", "train"}
        if extra:
            raise SchemaError(f"unknown config sections: {', '.join(sorted(extra))}")
        return dict(obj.get("model") or {}), dict(obj.get("train") or {})
    model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
    if set(obj) <= model_fields:
        return dict(obj), {}
    return {}, dict(obj)


def _log_config(resolved):
    print("resolved config: " + json.dumps(resolved, sort_keys=True), file=sys.stderr)


def _resolve(flag_value, section, key, default):
    if flag_value is not None:
        return flag_value
    return section.get(key, default)


def cmd_train(args):
    vocab = bpe.BpeVocab.from_gpt2_files(args.vocab, args.merges)
    model_section, train_section = ({}, {})
    if args.config:
        model_section, train_section = _split_config(_load_config_file(args.config))
    n_obj = int(model_section.get("n_obj", 10))
    records = load_features(args.features, n_obj=n_obj)
    ner = load_ner_records(args.ner)
    flags, ablation = parse_ablation(args.ablation)

    model_kwargs = {
        k: v for k, v in model_section.items()
        if k not in ("vocab_size", "start_id", "end_id", "pad_id")
    }
    model_kwargs.setdefault("d_vis", records[0].d_vis if records else 1024)
    model_kwargs["n_obj"] = n_obj
    config = ModelConfig(
        vocab_size=vocab.vocab_size, start_id=vocab.start_id,
        end_id=vocab.end_id, pad_id=vocab.pad_id, **model_kwargs,
    )

    train_config = TrainConfig(
        lr=float(_resolve(args.lr, train_section, "lr", 3e-3)),
        epochs=int(_resolve(args.epochs, train_section, "epochs", 100)),
        batch_size=int(_resolve(args.batch_size, train_section, "batch_size", 8)),
        loss_kind=_resolve(args.loss, train_section, "loss_kind", "ce"),
        focal_gamma=float(_resolve(args.focal_gamma, train_section, "focal_gamma", 2.0)),
        seed=int(_resolve(args.seed, train_section, "seed", 0)),
        data_fraction=float(_resolve(args.data_fraction, train_section, "data_fraction", 1.0)),
        target_loss=_resolve(args.target_loss, train_section, "target_loss", None),
        flags=flags,
    )

    resolved = {
        "command": "train",
        "features": str(args.features),
        "ner": str(args.ner),
        "vocab": str(args.vocab),
        "merges": str(args.merges),
        "out": str(args.out),
        "ablation": ablation,
        "model": dataclasses.asdict(config),
        "train": {
            "lr": train_config.lr, "epochs": train_config.epochs,
            "batch_size": train_config.batch_size,
            "loss_kind": train_config.loss_kind,
            "focal_gamma": train_config.focal_gamma, "seed": train_config.seed,
            "data_fraction": train_config.data_fraction,
            "target_loss": train_config.target_loss,
            "flags": dataclasses.asdict(flags),
        },
    }
    _log_config(resolved)

    dataset = build_dataset(records, ner, vocab, config,
                            include_types=flags.use_entity_types)
    params, log = train(dataset, train_config, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(resolved, indent=2) + "\n",
                                     encoding="utf-8")
    modelmod.save_checkpoint(out / "checkpoint.bin", params, config, vocab)
    write_loss_log(log, out / "loss_log.csv")
    final_epoch, final_loss, _ = log[-1]
    kept = int(np.ceil(train_config.data_fraction * len(dataset)))
    print(f"trained {final_epoch} epochs on {kept} of {len(dataset)} samples, "
          f"final loss {final_loss:.6f}; wrote {out / 'checkpoint.bin'}")
    return 0


def _load_generation_state(checkpoint, features_path):
    params, config, vocab = modelmod.load_checkpoint(checkpoint)
    records = load_features(features_path, n_obj=config.n_obj)
    if records and records[0].d_vis != config.d_vis:
        raise DataError(
            f"feature dims {records[0].d_vis} do not match checkpoint d_vis {config.d_vis}"
        )
    return params, config, vocab, {r.sample_id: r for r in records}


def _generate_caption(params, config, vocab, record, entities, mode, width,
                      max_len=None):
    ctx = build_context(entities, vocab, config.l_text)
    enc_in = modelmod.assemble_encoder_input([record], [ctx], params, config)
    memory, mask = modelmod.encode(enc_in, params, config)
    ids = modelmod.generate(memory, mask, params, config, mode=mode,
                            beam_width=width, max_len=max_len)
    return bpe.decode(ids, vocab)


def cmd_generate(args):
    params, config, vocab, by_id = _load_generation_state(args.checkpoint, args.features)
    if args.id not in by_id:
        raise InputError(
            f"unknown sample id {args.id!r}; file has {len(by_id)} records "
            f"(e.g. {', '.join(list(by_id)[:3])})"
        )
    entities = parse_tokens(args.tokens)
    mode, width = args.mode
    _log_config({
        "command": "generate", "checkpoint": str(args.checkpoint),
        "features": str(args.features), "id": args.id,
        "tokens": args.tokens or "", "mode": mode, "beam_width": width,
        "max_len": args.max_len,
    })
    print(_generate_caption(params, config, vocab, by_id[args.id], entities,
                            mode, width, max_len=args.max_len))
    return 0


def _items_from_files(hyp_path, refs_path):
    if refs_path is None:
        return read_eval_file(hyp_path)
    refs_by_id = {}
    with open(refs_path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", line_no=line_no) from exc
            refs_by_id[str(obj.get("id"))] = [str(r) for r in obj.get("refs", [])]
    items = []
    with open(hyp_path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", line_no=line_no) from exc
            sid = str(obj.get("id"))
            refs = obj.get("refs") or refs_by_id.get(sid)
            if not refs:
                raise InputError(f"no references for id {sid!r}")
            items.append(EvalItem(sample_id=sid, hyp=str(obj.get("hyp", "")),
                                  refs=[str(r) for r in refs]))
    return items


def _items_from_checkpoint(args):
    params, config, vocab, by_id = _load_generation_state(args.checkpoint, args.features)
    ner = load_ner_records(args.ner)
    mode, width = args.mode
    items = []
    seen = {}
    for rec in ner:
        if rec.caption is None:
            raise InputError(f"NER record {rec.sample_id!r} has no caption to evaluate against")
        if rec.sample_id not in by_id:
            raise InputError(f"NER id {rec.sample_id!r} has no feature record")
        hyp = _generate_caption(params, config, vocab, by_id[rec.sample_id],
                                rec.entities, mode, width)
        n = seen.get(rec.sample_id, 0)
        seen[rec.sample_id] = n + 1
        sid = rec.sample_id if n == 0 else f"{rec.sample_id}#{n}"
        items.append(EvalItem(sample_id=sid, hyp=hyp, refs=[rec.caption]))
    return items


def cmd_evaluate(args):
    if args.hyp and args.checkpoint:
        raise _UsageError("evaluate: pass either --hyp or --checkpoint, not both")
    if args.hyp:
        items = _items_from_files(args.hyp, args.refs)
        source = {"hyp": str(args.hyp), "refs": str(args.refs) if args.refs else None}
    elif args.checkpoint:
        if not (args.features and args.ner):
            raise _UsageError("evaluate --checkpoint needs --features and --ner")
        items = _items_from_checkpoint(args)
        source = {"checkpoint": str(args.checkpoint), "features": str(args.features),
                  "ner": str(args.ner)}
    else:
        raise _UsageError("evaluate: pass --hyp FILE or --checkpoint FILE")
    _log_config({"command": "evaluate", **source,
                 "out_json": str(args.out_json) if args.out_json else None,
                 "out_csv": str(args.out_csv) if args.out_csv else None})
    summary, per_item = evaluate_corpus(items)
    if args.out_json or args.out_csv:
        write_eval_report(summary, per_item, args.out_json, args.out_csv)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_tokenize(args):
    vocab = bpe.BpeVocab.from_gpt2_files(args.vocab, args.merges)
    _log_config({"command": "tokenize", "vocab": str(args.vocab),
                 "merges": str(args.merges)})
    if args.ids is not None:
        try:
            ids = [int(t) for t in args.ids.replace(",", " ").split()]
        except ValueError as exc:
            raise InputError(f"--ids must be integers: {exc}") from exc
        print(bpe.decode(ids, vocab))
    else:
        print(" ".join(str(i) for i in bpe.encode(args.text, vocab)))
    return 0


def cmd_validate_features(args):
    records = load_features(args.features, n_obj=args.n_obj)
    _log_config({"command": "validate-features", "features": str(args.features),
                 "n_obj": args.n_obj})
    d_vis = records[0].d_vis if records else 0
    print(f"ok: {len(records)} records, {d_vis} feature dims, "
          f"{args.n_obj} object slots")
    return 0


def cmd_repl(args):
    params, config, vocab, by_id = _load_generation_state(args.checkpoint, args.features)
    _log_config({"command": "repl", "checkpoint": str(args.checkpoint),
                 "features": str(args.features)})

    def err(msg):
        print(msg, file=sys.stderr)

    if args.id is not None and args.id not in by_id:
        err(f"unknown id {args.id!r}; pick one with: id X")
    state = {"id": args.id if args.id in by_id else None,
             "tokens": {}, "mode": ("greedy", 1)}

    print("commands: id X | set TYPE=v1,v2 | unset TYPE | clear | "
          "mode greedy|beam:K | show | gen | quit", file=sys.stderr)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        cmd, _, rest = line.partition(" ")
        rest = rest.strip()
        try:
            if cmd == "quit":
                break
            elif cmd == "id":
                if rest not in by_id:
                    err(f"unknown id {rest!r}")
                else:
                    state["id"] = rest
            elif cmd == "set":
                # accept both "set GPE Delhi,India" and "set GPE=Delhi,India"
                spec = rest if "=" in rest else rest.replace(" ", "=", 1)
                parsed = parse_tokens(spec)
                state["tokens"].update(parsed.entries)
            elif cmd == "unset":
                state["tokens"].pop(rest, None)
            elif cmd == "clear":
                state["tokens"] = {}
            elif cmd == "mode":
                state["mode"] = _parse_mode(rest)
            elif cmd == "show":
                err(json.dumps({"id": state["id"], "tokens": state["tokens"],
                                "mode": state["mode"][0], "beam_width": state["mode"][1]}))
            elif cmd == "gen":
                if state["id"] is None:
                    err("no sample id set; use: id X")
                    continue
                mode, width = state["mode"]
                print(_generate_caption(
                    params, config, vocab, by_id[state["id"]],
                    NerDictionary(entries=dict(state["tokens"])), mode, width,
                ))
            else:
                err(f"unknown command {cmd!r}")
        except (InputError, SchemaError, argparse.ArgumentTypeError) as exc:
            err(str(exc))
    return 0


def build_parser():
    parser = _Parser(prog="contextcap",
                     description="Context-conditioned caption generation toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", help="train a model from feature + NER files")
    p.add_argument("--features", required=True)
    p.add_argument("--ner", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--merges", required=True)
    p.add_argument("--config", default=None,
                   help="JSON/TOML with model and/or train settings; flags win")
    p.add_argument("--out", required=True)
    p.add_argument("--ablation", default=None,
                   help="e.g. 'w/o visual', 'w/o textual', 'w/o NET', "
                        "'w/o relational graph', 'w/o edge features', "
                        "'w/o object features'")
    p.add_argument("--data-fraction", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--loss", choices=("ce", "weighted_ce", "focal"), default=None)
    p.add_argument("--focal-gamma", type=float, default=None)
    p.add_argument("--target-loss", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate a caption for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--tokens", default="",
                   help='entity tokens, e.g. "GPE=Delhi,India;DATE=Friday"')
    p.add_argument("--mode", type=_parse_mode, default=("greedy", 1),
                   help="greedy (default), beam, or beam:K")
    p.add_argument("--max-len", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score captions with all four metrics")
    p.add_argument("--hyp", default=None,
                   help='JSONL: {"id","hyp"[,"refs"]} per line')
    p.add_argument("--refs", default=None, help='JSONL: {"id","refs"} per line')
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--features", default=None)
    p.add_argument("--ner", default=None)
    p.add_argument("--mode", type=_parse_mode, default=("greedy", 1))
    p.add_argument("--out-json", default=None)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tokenize", help="encode text to ids or decode ids")
    p.add_argument("--vocab", required=True)
    p.add_argument("--merges", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--text", default=None)
    group.add_argument("--ids", default=None)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("validate-features", help="check a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--n-obj", type=int, default=10)
    p.set_defaults(func=cmd_validate_features)

    p = sub.add_parser("repl", help="interactive what-if caption loop")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--id", default=None)
    p.set_defaults(func=cmd_repl)

    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ContextcapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
