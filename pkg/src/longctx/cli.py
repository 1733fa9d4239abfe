"""Single executable exposing the pipelines as subcommands.

Every subcommand takes `--config file.json` plus `--key value` flag
overrides mirroring the config keys; unknown config keys are rejected. The
effective (defaults-materialized) config is echoed to a JSON file next to
the primary output, so re-running with that file reproduces the output
byte for byte.

Exit codes: 0 success, 2 configuration, 3 I/O or format, 4 endpoint
failure, 5 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, evalgen, formats, harness, packer, rope, toylab
from .errors import ConfigurationError, FormatError, LongCtxError

EXIT_CONFIG = 2
EXIT_IO = 3


def _load_config(path, defaults: dict) -> dict:
    cfg = dict(defaults)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise FormatError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise FormatError(f"config {path} is not valid JSON: {exc}") from exc
        unknown = set(doc) - set(defaults)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(doc)
    return cfg


def _apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _echo_config(cfg: dict, primary_output: str | None, explicit: str | None) -> None:
    path = explicit or (str(primary_output) + ".effective.json" if primary_output else None)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(cfg, fh, indent=2, sort_keys=True)


def _add_flags(sub, defaults: dict) -> None:
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--echo-config", dest="echo_config_path",
                     help="where to write the effective config")
    for key, val in defaults.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(val, bool):
            sub.add_argument(flag, type=lambda s: s.lower() in ("1", "true", "yes"),
                             default=None, metavar="BOOL")
        elif isinstance(val, int):
            sub.add_argument(flag, type=int, default=None)
        elif isinstance(val, float):
            sub.add_argument(flag, type=float, default=None)
        else:
            sub.add_argument(flag, type=str, default=None)


# --- rope-table -------------------------------------------------------------

ROPE_DEFAULTS = {
    "method": "yarn",
    "head_dim": 128,
    "theta": rope.DEFAULT_BASE_THETA,
    "base_context": rope.DEFAULT_ORIGINAL_CONTEXT,
    "target": 0,  # 0 = not set
    "s": 0.0,  # 0 = not set
    "alpha": 1.0,
    "beta": 4.0,
    "explicit_theta": 0.0,
    "mscale": True,
    "round_pow2": False,
    "out": "",
}


def cmd_rope_table(args) -> int:
    cfg = _apply_overrides(_load_config(args.config, ROPE_DEFAULTS), args)
    if cfg["s"] and cfg["target"]:
        raise ConfigurationError("give either --s or --target, not both")
    spec = rope.RopeSpec(
        head_dim=cfg["head_dim"], base_theta=cfg["theta"],
        original_context=cfg["base_context"],
    )
    if cfg["target"]:
        s = rope.scale_factor_for_target(cfg["target"], cfg["base_context"],
                                         round_up_pow2=cfg["round_pow2"])
    else:
        s = cfg["s"] or 1.0
    cfg["s"] = s
    method = cfg["method"]
    params = {"s": s}
    if method == "yarn":
        table = rope.yarn_frequencies(spec, s, cfg["alpha"], cfg["beta"], cfg["mscale"])
        params.update(alpha=cfg["alpha"], beta=cfg["beta"], mscale=cfg["mscale"])
    elif method == "pi":
        table = rope.pi_frequencies(spec, s)
    elif method == "ntk":
        if cfg["explicit_theta"]:
            table = rope.ntk_frequencies(spec, cfg["explicit_theta"], mode="explicit")
            params = {"explicit_theta": cfg["explicit_theta"]}
        else:
            table = rope.ntk_frequencies(spec, s, mode="factor")
    elif method == "none":
        table = rope.base_frequencies(spec)
        params = {}
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    export = rope.TableExport(spec=spec, method=method, params=params, table=table)
    text = export.to_json()
    if cfg["out"]:
        Path(cfg["out"]).write_text(text, encoding="utf-8")
    _echo_config(cfg, cfg["out"] or None, args.echo_config_path)
    print(f"method={method} s={s} freqs[0]={table.freqs[0]!r} "
          f"freqs[-1]={table.freqs[-1]!r} attention_scale={table.attention_scale!r}")
    return 0


# --- pack --------------------------------------------------------------------

PACK_DEFAULTS = {
    "corpus": "",
    "out": "",
    "target_len": 4096,
    "separator_id": 0,
    "bucket_bounds": "4096,8192",
    "bucket_weights": "0.5,1.0,3.0",
    "target_total_tokens": 0,  # 0 = corpus size
    "tail_policy": "drop",
    "pad_id": 0,
    "seed": 0,
    "jobs": 1,
    "stats_out": "",
}


def _parse_list(text, cast):
    return tuple(cast(x) for x in str(text).split(",") if x != "")


def cmd_pack(args) -> int:
    cfg = _apply_overrides(_load_config(args.config, PACK_DEFAULTS), args)
    if not cfg["corpus"] or not cfg["out"]:
        raise ConfigurationError("pack requires --corpus and --out")
    corpus = formats.load_corpus(cfg["corpus"])
    bounds = _parse_list(cfg["bucket_bounds"], int)
    weights = _parse_list(cfg["bucket_weights"], float)
    plan = packer.plan(
        corpus, weights=weights,
        target_total_tokens=cfg["target_total_tokens"] or None,
        seed=cfg["seed"], bounds=bounds, jobs=cfg["jobs"],
    )
    stream = list(packer.resample(corpus, plan))
    seqs, stats = packer.pack_to_list(
        stream, cfg["target_len"], separator_ids=cfg["separator_id"],
        tail_policy=cfg["tail_policy"], pad_id=cfg["pad_id"],
    )
    formats.write_upkd(cfg["out"], seqs, cfg["target_len"], cfg["separator_id"])
    packer.verify(seqs, stream, cfg["target_len"], separator_ids=cfg["separator_id"],
                  tail_policy=cfg["tail_policy"], pad_id=cfg["pad_id"])
    stats.input_total_tokens = sum(d.length for d in corpus)
    stats.per_bucket_realized_tokens = plan.realized_bucket_tokens
    stats_doc = stats.as_dict()
    stats_doc["accounting_identity_holds"] = stats.accounting_holds(cfg["target_len"])
    if cfg["stats_out"]:
        Path(cfg["stats_out"]).write_text(json.dumps(stats_doc, indent=2), encoding="utf-8")
    _echo_config(cfg, cfg["out"], args.echo_config_path)
    print(json.dumps(stats_doc, indent=2))
    return 0


# --- gen-niah / gen-ruler -----------------------------------------------------

GEN_DEFAULTS = {
    "min_length": 1000,
    "max_length": 128_000,
    "num_lengths": evalgen.DEFAULT_NUM_LENGTHS,
    "num_depths": evalgen.DEFAULT_NUM_DEPTHS,
    "passkey_digits": evalgen.DEFAULT_PASSKEY_DIGITS,
    "spacing": "linear",
    "filler": "",
    "seed": 0,
    "out": "",
    "task": "passkey_single",
    "num_needles": 4,
}


def _niah_config(cfg) -> evalgen.NiahConfig:
    return evalgen.NiahConfig(
        min_length=cfg["min_length"], max_length=cfg["max_length"],
        num_lengths=cfg["num_lengths"], num_depths=cfg["num_depths"],
        passkey_digits=cfg["passkey_digits"], spacing=cfg["spacing"],
        filler_path=cfg["filler"] or None, seed=cfg["seed"],
    )


def cmd_gen_niah(args) -> int:
    cfg = _apply_overrides(_load_config(args.config, GEN_DEFAULTS), args)
    if not cfg["out"]:
        raise ConfigurationError("gen-niah requires --out")
    n = evalgen.emit(evalgen.gen_niah_grid(_niah_config(cfg)), cfg["out"])
    _echo_config(cfg, cfg["out"], args.echo_config_path)
    print(f"wrote {n} cases to {cfg['out']}")
    return 0


def cmd_gen_ruler(args) -> int:
    cfg = _apply_overrides(_load_config(args.config, GEN_DEFAULTS), args)
    if not cfg["out"]:
        raise ConfigurationError("gen-ruler requires --out")
    task = evalgen.Task(cfg["task"])
    n = evalgen.emit(
        evalgen.gen_ruler_grid(_niah_config(cfg), task, num_needles=cfg["num_needles"]),
        cfg["out"],
    )
    _echo_config(cfg, cfg["out"], args.echo_config_path)
    print(f"wrote {n} {task.value} cases to {cfg['out']}")
    return 0


# --- run / score / report ------------------------------------------------------

RUN_DEFAULTS = {
    "cases": "",
    "out": "",
    "base_url": "",
    "model_id": "",
    "auth_env_var": "",
    "max_output_tokens": 64,
    "temperature": 0.0,
    "request_timeout": 120.0,
    "max_concurrency": 4,
    "retries": 2,
    "resume": False,
}


def cmd_run(args) -> int:
    cfg = _apply_overrides(_load_config(args.config, RUN_DEFAULTS), args)
    if not (cfg["cases"] and cfg["out"] and cfg["base_url"] and cfg["model_id"]):
        raise ConfigurationError("run requires --cases, --out, --base-url, --model-id")
    endpoint = harness.EndpointConfig(
        base_url=cfg["base_url"], model_id=cfg["model_id"],
        auth_env_var=cfg["auth_env_var"] or None,
        max_output_tokens=cfg["max_output_tokens"], temperature=cfg["temperature"],
        request_timeout=cfg["request_timeout"], max_concurrency=cfg["max_concurrency"],
        retries=cfg["retries"],
    )
    summary = harness.run(cfg["cases"], endpoint, cfg["out"], resume=cfg["resume"])
    _echo_config(cfg, cfg["out"], args.echo_config_path)
    print(json.dumps(summary))
    return 0


SCORE_DEFAULTS = {
    "cases": "",
    "responses": "",
    "out": "",
    "thresholds": ",".join(str(t) for t in harness.DEFAULT_BUCKET_THRESHOLDS),
}


def cmd_score(args) -> int:
    cfg = _apply_overrides(_load_config(args.config, SCORE_DEFAULTS), args)
    if not (cfg["cases"] and cfg["responses"] and cfg["out"]):
        raise ConfigurationError("score requires --cases, --responses, --out")
    cases = list(evalgen.read_cases(cfg["cases"]))
    responses = harness.read_responses(cfg["responses"])
    per_case = harness.score_all(cases, responses)
    report = harness.aggregate(per_case, thresholds=_parse_list(cfg["thresholds"], int))
    Path(cfg["out"]).write_text(json.dumps(report.as_dict(), indent=2), encoding="utf-8")
    _echo_config(cfg, cfg["out"], args.echo_config_path)
    print(json.dumps({"overall": float(report.overall),
                      "buckets": {str(k): float(v) for k, v in report.bucket_averages.items()}}))
    return 0


REPORT_DEFAULTS = {
    "cases": "",
    "responses": "",
    "heatmap_out": "",
    "thresholds": ",".join(str(t) for t in harness.DEFAULT_BUCKET_THRESHOLDS),
}


def cmd_report(args) -> int:
    cfg = _apply_overrides(_load_config(args.config, REPORT_DEFAULTS), args)
    if not (cfg["cases"] and cfg["responses"] and cfg["heatmap_out"]):
        raise ConfigurationError("report requires --cases, --responses, --heatmap-out")
    cases = list(evalgen.read_cases(cfg["cases"]))
    responses = harness.read_responses(cfg["responses"])
    report = harness.aggregate(harness.score_all(cases, responses),
                               thresholds=_parse_list(cfg["thresholds"], int))
    harness.heatmap_export(report, cfg["heatmap_out"])
    _echo_config(cfg, cfg["heatmap_out"], args.echo_config_path)
    print(f"wrote heatmap to {cfg['heatmap_out']}")
    return 0


# --- toylab ---------------------------------------------------------------------

TOY_TRAIN_DEFAULTS = {
    "layers": 2, "d_model": 64, "heads": 4, "vocab_size": 128,
    "context_length": 256, "steps": 3000, "learning_rate": 1.5e-3,
    "batch_size": 8, "grad_clip": 0.0, "seed": 0,
    "num_documents": 20000, "fact_every": 20, "separator_mode": "separator",
    "init_from": "", "out": "", "loss_out": "",
}


def cmd_toy_train(args) -> int:
    cfg = _apply_overrides(_load_config(args.config, TOY_TRAIN_DEFAULTS), args)
    if not cfg["out"]:
        raise ConfigurationError("toylab train requires --out")
    if cfg["init_from"]:
        model = toylab.load_checkpoint(cfg["init_from"])
    else:
        mc = toylab.ToyModelConfig(
            layers=cfg["layers"], d_model=cfg["d_model"], heads=cfg["heads"],
            vocab_size=cfg["vocab_size"], context_length=cfg["context_length"],
            seed=cfg["seed"],
        )
        model = toylab.init_model(mc)
    corpus = toylab.make_toy_corpus(toylab.ToyCorpusSpec(
        vocab_size=model.config.vocab_size, num_documents=cfg["num_documents"],
        fact_every=cfg["fact_every"] or None,
        target_len=model.context_length, separator_mode=cfg["separator_mode"],
        seed=cfg["seed"],
    ))
    tc = toylab.TrainConfig(learning_rate=cfg["learning_rate"], steps=cfg["steps"],
                            batch_size=cfg["batch_size"], grad_clip=cfg["grad_clip"],
                            seed=cfg["seed"])
    _, losses, _ = toylab.train(model, corpus, tc)
    toylab.save_checkpoint(model, cfg["out"])
    if cfg["loss_out"]:
        with open(cfg["loss_out"], "w", encoding="utf-8") as fh:
            for i, l in enumerate(losses):
                fh.write(json.dumps({"step": i, "loss": l}) + "\n")
    _echo_config(cfg, cfg["out"], args.echo_config_path)
    print(f"final_loss={losses[-1]:.4f} digest={toylab.parameter_digest(model.params)}")
    return 0


TOY_EXTEND_DEFAULTS = {
    "checkpoint": "", "out": "", "method": "yarn", "s": 1.0,
    "new_context": 0, "explicit_theta": 0.0, "mscale": True,
}


def cmd_toy_extend(args) -> int:
    cfg = _apply_overrides(_load_config(args.config, TOY_EXTEND_DEFAULTS), args)
    if not (cfg["checkpoint"] and cfg["out"]):
        raise ConfigurationError("toylab extend requires --checkpoint and --out")
    model = toylab.load_checkpoint(cfg["checkpoint"])
    new_context = cfg["new_context"] or round(cfg["s"] * model.config.context_length)
    toylab.extend(model, cfg["method"], cfg["s"], new_context,
                  explicit_theta=cfg["explicit_theta"] or None,
                  mscale_enabled=cfg["mscale"])
    toylab.save_checkpoint(model, cfg["out"])
    _echo_config(cfg, cfg["out"], args.echo_config_path)
    print(f"context={model.context_length} digest={toylab.parameter_digest(model.params)}")
    return 0


TOY_EVAL_DEFAULTS = {
    "checkpoint": "", "out": "", "lengths": "128,256,512,768,1024",
    "depths": "0,0.5,1", "cases_per_cell": 8, "seed": 0, "allow_overlength": False,
}


def cmd_toy_eval(args) -> int:
    cfg = _apply_overrides(_load_config(args.config, TOY_EVAL_DEFAULTS), args)
    if not cfg["checkpoint"]:
        raise ConfigurationError("toylab eval requires --checkpoint")
    model = toylab.load_checkpoint(cfg["checkpoint"])
    lengths = _parse_list(cfg["lengths"], int)
    depths = _parse_list(cfg["depths"], float)
    if cfg["allow_overlength"]:
        model = toylab.widen(model, max(lengths) + 8)
    result = toylab.toy_niah_eval(model, lengths, depths, seed=cfg["seed"],
                                  cases_per_cell=cfg["cases_per_cell"])
    doc = {
        "by_length": {str(k): v for k, v in result["by_length"].items()},
        "grid": {f"{L}:{d:.4f}": v for (L, d), v in sorted(result["grid"].items())},
    }
    if cfg["out"]:
        Path(cfg["out"]).write_text(json.dumps(doc, indent=2), encoding="utf-8")
    _echo_config(cfg, cfg["out"] or None, args.echo_config_path)
    print(json.dumps(doc["by_length"]))
    return 0


TOY_ABLATE_DEFAULTS = {
    "arms": "one_step_yarn_sep,two_step_yarn_sep",
    "seeds": "0,1,2",
    "base_steps": 3000,
    "stage_steps": 150,
    "target_context": 1024,
    "out": "",
}


def cmd_toy_ablate(args) -> int:
    cfg = _apply_overrides(_load_config(args.config, TOY_ABLATE_DEFAULTS), args)
    if not cfg["out"]:
        raise ConfigurationError("toylab ablate requires --out")
    base = toylab.ExperimentSpec(base_steps=cfg["base_steps"])
    arms = toylab.standard_arms(base, total_steps=cfg["stage_steps"],
                                target_context=cfg["target_context"])
    wanted = _parse_list(cfg["arms"], str)
    unknown = set(wanted) - set(arms)
    if unknown:
        raise ConfigurationError(f"unknown arms {sorted(unknown)}; available: {sorted(arms)}")
    report = toylab.ablation_run({k: arms[k] for k in wanted},
                                 _parse_list(cfg["seeds"], int),
                                 report_path=cfg["out"])
    _echo_config(cfg, cfg["out"], args.echo_config_path)
    print(json.dumps(report["summary"]["mean_extended_range_accuracy"], indent=2))
    return 0


# --- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="longctx")
    parser.add_argument("--version", action="version", version=f"longctx {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    for name, defaults, fn in [
        ("rope-table", ROPE_DEFAULTS, cmd_rope_table),
        ("pack", PACK_DEFAULTS, cmd_pack),
        ("gen-niah", GEN_DEFAULTS, cmd_gen_niah),
        ("gen-ruler", GEN_DEFAULTS, cmd_gen_ruler),
        ("run", RUN_DEFAULTS, cmd_run),
        ("score", SCORE_DEFAULTS, cmd_score),
        ("report", REPORT_DEFAULTS, cmd_report),
    ]:
        sub = subs.add_parser(name)
        _add_flags(sub, defaults)
        sub.set_defaults(func=fn)

    toy = subs.add_parser("toylab")
    toysubs = toy.add_subparsers(dest="toy_command", required=True)
    for name, defaults, fn in [
        ("train", TOY_TRAIN_DEFAULTS, cmd_toy_train),
        ("extend", TOY_EXTEND_DEFAULTS, cmd_toy_extend),
        ("eval", TOY_EVAL_DEFAULTS, cmd_toy_eval),
        ("ablate", TOY_ABLATE_DEFAULTS, cmd_toy_ablate),
    ]:
        sub = toysubs.add_parser(name)
        _add_flags(sub, defaults)
        sub.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LongCtxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
