"""Multi-stage extension recipes and ablation arms.

An ExperimentSpec is a declarative recipe: shared base training at the
native context, then one or more extension stages (scale the rotary table,
continue training on packed data at the new length). Ablation arms vary
one choice at a time — one-step vs. two-step staging, separator mode,
scaling method — under an exactly equal continued-training token budget,
and are compared by toy needle-retrieval accuracy.

Adam moments are reset at every stage boundary; the report records this.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigurationError
from ..seeding import derive_seed
from .corpus import ToyCorpusSpec, make_toy_corpus
from .extend import extend, widen
from .model import ToyModel, ToyModelConfig, init_model
from .niah import mean_accuracy, toy_niah_eval
from .train import TrainConfig, train


@dataclass
class Stage:
    context_length: int
    method: str = "yarn"  # yarn | ntk | pi
    s: float = 1.0
    separator_mode: str = "separator"
    steps: int = 300
    learning_rate: float = 5e-4

    def token_budget(self, batch_size: int) -> int:
        # tokens fed per step: batch rows of context_length tokens
        return self.steps * batch_size * self.context_length


@dataclass
class ExperimentSpec:
    model: ToyModelConfig = field(default_factory=ToyModelConfig)
    base_steps: int = 3000  # minimum base training before the formation gate
    base_lr: float = 1.5e-3
    # in-context retrieval emerges abruptly at an initialization-dependent
    # step count; base training repeats one fixed batch order in epochs and
    # stops at the first epoch boundary past base_steps where accuracy at
    # the native context clears the threshold (None trains base_steps flat)
    formation_threshold: float | None = 0.5
    base_epoch_steps: int = 500
    base_max_steps: int | None = None  # per-attempt cap; defaults to 3x base_steps
    base_attempts: int = 3
    batch_size: int = 8
    stages: list = field(default_factory=list)
    corpus_documents: int = 20000
    # one fact per this many tokens keeps the retrieval-signal density
    # constant across document lengths; None reverts to fixed repeats
    corpus_fact_every: int | None = 20
    eval_lengths: tuple = (128, 256, 512, 768, 1024)
    eval_depths: tuple = (0.0, 0.5, 1.0)
    eval_cases_per_cell: int = 8

    def __post_init__(self):
        if self.base_max_steps is None:
            self.base_max_steps = 3 * self.base_steps
        prev = self.model.context_length
        for st in self.stages:
            if st.context_length < prev:
                raise ConfigurationError("stage context lengths must be nondecreasing")
            if round(st.s * self.model.context_length) != st.context_length:
                raise ConfigurationError(
                    f"stage s={st.s} inconsistent with context "
                    f"{st.context_length} / base {self.model.context_length}"
                )
            prev = st.context_length

    def stage_budget(self) -> int:
        return sum(st.token_budget(self.batch_size) for st in self.stages)


def _corpus_for(spec: ExperimentSpec, context_length: int, separator_mode: str,
                seed: int) -> np.ndarray:
    cs = ToyCorpusSpec(
        vocab_size=spec.model.vocab_size,
        num_documents=spec.corpus_documents,
        fact_every=spec.corpus_fact_every,
        target_len=context_length,
        separator_mode=separator_mode,
        seed=seed,
    )
    return make_toy_corpus(cs)


def _retrieval_formed(spec: ExperimentSpec, model: ToyModel, seed: int) -> bool:
    if spec.formation_threshold is None:
        return True
    ctx = spec.model.context_length
    result = toy_niah_eval(model, (ctx // 2, ctx - 2), (0.1, 0.5, 0.9),
                           seed=derive_seed(seed, "formation"), cases_per_cell=10)
    return mean_accuracy(result, (0, ctx)) >= spec.formation_threshold


def train_base(spec: ExperimentSpec, seed: int) -> ToyModel:
    """Shared starting point for every arm: base-context training.

    Training runs in epochs that repeat one fixed batch order; once the
    minimum step budget is spent, each epoch boundary measures needle
    retrieval at the native context and stops when it clears the formation
    threshold. An attempt that reaches the step cap without forming is
    discarded and restarted from a reseeded initialization; the final
    attempt's model is returned regardless, so a persistent failure shows
    up as near-zero accuracy in the report rather than an exception.
    """
    corpus = _corpus_for(spec, spec.model.context_length, "separator",
                         derive_seed(seed, "base_corpus"))
    epoch_steps = max(1, min(spec.base_epoch_steps, spec.base_steps))
    model = None
    for attempt in range(spec.base_attempts):
        cfg = replace(spec.model, seed=derive_seed(seed, "init", attempt))
        model = init_model(cfg)
        state = None
        done = 0
        while done < spec.base_max_steps:
            tc = TrainConfig(learning_rate=spec.base_lr, steps=epoch_steps,
                             batch_size=spec.batch_size,
                             seed=derive_seed(seed, "base_train", attempt))
            model, _, state = train(model, corpus, tc, optimizer_state=state)
            done += epoch_steps
            if done >= spec.base_steps and _retrieval_formed(spec, model, seed):
                return model
    return model


def run_stages(spec: ExperimentSpec, base_model: ToyModel, seed: int) -> ToyModel:
    """Apply each stage to a copy of the base model: extend, then continue
    training with fresh optimizer state."""
    model = ToyModel(
        config=base_model.config,
        params={k: v.copy() for k, v in base_model.params.items()},
        context_length=base_model.context_length,
        scaling=base_model.scaling,
        freq_table=base_model.freq_table,
    )
    for si, st in enumerate(spec.stages):
        extend(model, st.method, st.s, st.context_length)
        corpus = _corpus_for(spec, st.context_length, st.separator_mode,
                             derive_seed(seed, "stage_corpus", si))
        tc = TrainConfig(learning_rate=st.learning_rate, steps=st.steps,
                         batch_size=spec.batch_size,
                         seed=derive_seed(seed, "stage_train", si))
        train(model, corpus, tc)  # fresh AdamState per stage
    return model


def evaluate(spec: ExperimentSpec, model: ToyModel, seed: int) -> dict:
    # widen for decode headroom at the longest prompt; frequencies are
    # position-independent so this changes no computation at seen lengths
    top = max(spec.eval_lengths)
    probe = model if top + 4 <= model.context_length else widen(model, top + 8)
    return toy_niah_eval(probe, spec.eval_lengths, spec.eval_depths,
                         seed=derive_seed(seed, "eval"),
                         cases_per_cell=spec.eval_cases_per_cell)


def standard_arms(base: ExperimentSpec, total_steps: int = 300,
                  target_context: int = 1024) -> dict:
    """The ablation grid: one-step vs. two-step, separator modes, methods.

    Every arm consumes the same continued-training token budget. The
    two-step arm splits the budget across a half-target stage and the
    target stage; its step count at the smaller context is inflated so
    token counts match exactly.
    """
    base_ctx = base.model.context_length
    s_full = target_context / base_ctx
    mid_context = target_context // 2
    s_mid = mid_context / base_ctx
    lr = 5e-4

    def one_stage(method, sep_mode):
        return [Stage(context_length=target_context, method=method, s=s_full,
                      separator_mode=sep_mode, steps=total_steps, learning_rate=lr)]

    arms = {
        "one_step_yarn_sep": replace(base, stages=one_stage("yarn", "separator")),
        "one_step_yarn_begin_end": replace(base, stages=one_stage("yarn", "begin_end")),
        "one_step_ntk_sep": replace(base, stages=one_stage("ntk", "separator")),
        "one_step_pi_sep": replace(base, stages=one_stage("pi", "separator")),
    }

    # split the token budget in half; solve the small-stage step count so
    # steps_mid*mid + steps_full*target == total_steps*target
    steps_full = total_steps // 2
    remaining = (total_steps - steps_full) * target_context
    if remaining % mid_context != 0:
        raise ConfigurationError(
            "two-step budget does not divide evenly; adjust total_steps or contexts"
        )
    steps_mid = remaining // mid_context
    arms["two_step_yarn_sep"] = replace(base, stages=[
        Stage(context_length=mid_context, method="yarn", s=s_mid,
              separator_mode="separator", steps=steps_mid, learning_rate=lr),
        Stage(context_length=target_context, method="yarn", s=s_full,
              separator_mode="separator", steps=steps_full, learning_rate=lr),
    ])
    return arms


def ablation_run(arms: dict, seeds, report_path=None) -> dict:
    """Run every (arm, seed), assert budget parity, and report bucketed
    needle accuracies with per-arm means.

    Arms must share their base-training configuration so the base model can
    be trained once per seed and reused.
    """
    arm_names = sorted(arms)
    if not arm_names:
        raise ConfigurationError("no ablation arms given")
    budgets = {name: arms[name].stage_budget() for name in arm_names}
    if len(set(budgets.values())) != 1:
        raise ConfigurationError(f"unequal continued-training budgets: {budgets}")

    seeds = [int(s) for s in seeds]
    rows = []
    first = arms[arm_names[0]]
    for seed in seeds:
        base_model = train_base(first, seed)
        top = max(spec.stages[-1].context_length for spec in arms.values())
        base_eval = evaluate(first, widen(base_model, top + 8), seed)
        for name in arm_names:
            spec = arms[name]
            final = run_stages(spec, base_model, seed)
            result = evaluate(spec, final, seed)
            base_ctx = spec.model.context_length
            top_ctx = spec.stages[-1].context_length
            rows.append({
                "arm": name,
                "seed": seed,
                "by_length": {str(k): v for k, v in result["by_length"].items()},
                "extended_range_accuracy": mean_accuracy(result, (base_ctx, top_ctx)),
                "base_range_accuracy": mean_accuracy(result, (0, base_ctx)),
                "base_model_extended_range_accuracy": _base_beyond(base_eval, base_ctx),
                "token_budget": spec.stage_budget(),
            })

    summary = {
        "arms": arm_names,
        "seeds": seeds,
        "token_budget": budgets[arm_names[0]],
        "optimizer_state": "adam moments reset at each stage boundary",
        "mean_extended_range_accuracy": {
            name: float(np.mean([r["extended_range_accuracy"] for r in rows if r["arm"] == name]))
            for name in arm_names
        },
    }
    report = {"rows": rows, "summary": summary}
    if report_path is not None:
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
    return report


def _base_beyond(base_eval: dict, base_ctx: int) -> float | None:
    vals = [a for L, a in base_eval["by_length"].items() if L > base_ctx]
    return float(np.mean(vals)) if vals else None
