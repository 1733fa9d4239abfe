"""Synthetic long-context evaluation cases.

Generates the passkey needle-in-a-haystack grid (lengths x depths) and a
small family of multi-needle retrieval tasks at configurable lengths.
Lengths are controlled by a pluggable token counter; the default counts
whitespace words so the generator carries no tokenizer dependency, and an
external adapter can shell out to an exact counting command.

Prompts at multi-million-token scale are built as sentence lists and only
joined at emission, and the JSONL writer streams line by line.
"""

from __future__ import annotations

import json
import shlex
import subprocess
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError, FormatError, VerificationError
from .seeding import derive_seed

DEFAULT_NUM_LENGTHS = 40
DEFAULT_NUM_DEPTHS = 10
DEFAULT_PASSKEY_DIGITS = 6

# Neutral filler vocabulary, cycled with seeded variation.
_FILLER_SUBJECTS = [
    "The grass", "The sky", "The river", "The mountain", "The forest",
    "The meadow", "The valley", "The ocean", "The desert", "The garden",
]
_FILLER_PREDICATES = [
    "is green", "is blue", "flows gently", "stands tall", "grows quietly",
    "stretches far", "rests calmly", "shimmers brightly", "waits patiently",
    "breathes slowly",
]
_FILLER_TAILS = [
    "and the sun shines", "while the wind blows", "as the day passes",
    "and time moves on", "under the open air", "through every season",
    "beside the old road", "beyond the low hills", "near the quiet town",
    "under the pale moon",
]

PREAMBLE = (
    "There is important information hidden inside the following text. "
    "Read it carefully and remember the details."
)
PASSKEY_NEEDLE_TEMPLATE = "The pass key is {key}. Remember it. {key} is the pass key."
PASSKEY_QUESTION = "What is the pass key?"
KV_NEEDLE_TEMPLATE = "One of the special magic numbers for {key} is: {value}."
KV_QUESTION_ONE = "What is the special magic number for {key} mentioned in the text?"
KV_QUESTION_ALL = (
    "What are all the special magic numbers for {keys} mentioned in the text? "
    "List every number."
)


class Task(str, Enum):
    PASSKEY = "passkey_single"
    MULTI_KEY = "niah_multi_key"
    MULTI_VALUE = "niah_multi_value"
    MULTI_QUERY = "niah_multi_query"


@dataclass
class TokenCounter:
    """Deterministic prompt-length measure.

    mode "words" approximates one token per whitespace word; mode
    "external" pipes text to a user command that prints a token count.
    """

    mode: str = "words"
    command: str | None = None

    def count(self, text: str) -> int:
        if self.mode == "words":
            return len(text.split())
        if self.mode == "external":
            if not self.command:
                raise ConfigurationError("external token counter needs a command")
            proc = subprocess.run(
                shlex.split(self.command), input=text.encode("utf-8"),
                capture_output=True, check=True,
            )
            return int(proc.stdout.strip())
        raise ConfigurationError(f"unknown token counter mode {self.mode!r}")


@dataclass
class NiahConfig:
    min_length: int = 1000
    max_length: int = 128_000
    num_lengths: int = DEFAULT_NUM_LENGTHS
    num_depths: int = DEFAULT_NUM_DEPTHS
    passkey_digits: int = DEFAULT_PASSKEY_DIGITS
    spacing: str = "linear"  # or "geometric"
    filler_path: str | None = None  # one sentence per line; None = built-in
    seed: int = 0
    counter: TokenCounter = field(default_factory=TokenCounter)

    def __post_init__(self):
        if self.min_length > self.max_length:
            raise ConfigurationError(
                f"min_length {self.min_length} > max_length {self.max_length}"
            )
        if self.num_lengths < 1 or self.num_depths < 1:
            raise ConfigurationError("num_lengths and num_depths must be >= 1")
        if self.passkey_digits < 1:
            raise ConfigurationError("passkey_digits must be >= 1")
        if self.spacing not in ("linear", "geometric"):
            raise ConfigurationError(f"unknown spacing {self.spacing!r}")


@dataclass
class EvalCase:
    case_id: str
    task: str
    target_length: int
    depth_fractions: list
    needles: list  # [{"key":…, "value":…}]
    prompt: str
    gold: list

    def to_json_line(self) -> str:
        # stable field order for byte-identical re-emission
        doc = {
            "case_id": self.case_id,
            "task": self.task,
            "target_length": self.target_length,
            "depth_fractions": self.depth_fractions,
            "needles": self.needles,
            "prompt": self.prompt,
            "gold": self.gold,
        }
        return json.dumps(doc, separators=(",", ":"), ensure_ascii=False)


def length_grid(config: NiahConfig) -> list[int]:
    """num_lengths values from min to max inclusive, deduplicated ascending."""
    if config.spacing == "linear":
        vals = np.linspace(config.min_length, config.max_length, config.num_lengths)
    else:
        vals = np.geomspace(max(config.min_length, 1), config.max_length, config.num_lengths)
    out = sorted(set(int(round(v)) for v in vals))
    return out


def depth_grid(num_depths: int) -> list[float]:
    """Uniform fractions including both endpoints; midpoint when n = 1."""
    if num_depths < 1:
        raise ConfigurationError("num_depths must be >= 1")
    if num_depths == 1:
        return [0.5]
    return [k / (num_depths - 1) for k in range(num_depths)]


def load_filler_sentences(path: str | None) -> list[str]:
    if path is None:
        return [
            f"{s} {p} {t}."
            for s in _FILLER_SUBJECTS
            for p in _FILLER_PREDICATES
            for t in _FILLER_TAILS
        ]
    with open(path, encoding="utf-8") as fh:
        sentences = [line.strip() for line in fh if line.strip()]
    if not sentences:
        raise FormatError(f"{path}: filler file has no sentences")
    return sentences


def _filler_stream(sentences: list[str], rng: np.random.Generator):
    """Endless seeded cycle over the filler sentences."""
    order = rng.permutation(len(sentences))
    i = 0
    while True:
        yield sentences[order[i % len(sentences)]]
        i += 1


def random_passkey(rng: np.random.Generator, digits: int) -> str:
    lo = 10 ** (digits - 1)
    hi = 10**digits - 1
    return str(int(rng.integers(lo, hi + 1)))


def _build_prompt(target_length, depth_fractions, needle_sentences, question,
                  sentences, rng, counter: TokenCounter) -> tuple[str, list[int]]:
    """Assemble preamble + filler with needles inserted at depth + question.

    Returns the prompt and the word-offset of each needle. Filler is added
    sentence by sentence until the budget is met; each needle starts within
    one filler sentence of fraction f of the filler body.
    """
    fixed = counter.count(PREAMBLE) + counter.count(question)
    needle_counts = [counter.count(s) for s in needle_sentences]
    budget = target_length - fixed - sum(needle_counts)
    if budget < len(needle_sentences) + 1:
        raise ConfigurationError(
            f"target_length {target_length} too small for the needle templates"
        )

    filler = _filler_stream(sentences, rng)
    parts: list[str] = []
    filled = 0
    while filled < budget:
        s = next(filler)
        parts.append(s)
        filled += counter.count(s)

    # desired needle start offsets inside the filler body, in filler tokens
    body_len = filled
    targets = sorted(
        (round(f * body_len), i) for i, f in enumerate(depth_fractions)
    )
    pieces: list[str] = [PREAMBLE]
    offsets = [0] * len(needle_sentences)
    pos = 0  # filler tokens consumed so far
    running = counter.count(PREAMBLE)
    ti = 0
    for s in parts:
        while ti < len(targets) and pos >= targets[ti][0]:
            idx = targets[ti][1]
            offsets[idx] = running
            pieces.append(needle_sentences[idx])
            running += needle_counts[idx]
            ti += 1
        pieces.append(s)
        pos += counter.count(s)
        running += counter.count(s)
    while ti < len(targets):
        idx = targets[ti][1]
        offsets[idx] = running
        pieces.append(needle_sentences[idx])
        running += needle_counts[idx]
        ti += 1
    pieces.append(question)
    return " ".join(pieces), offsets


def gen_passkey_case(config: NiahConfig, length: int, depth_fraction: float,
                     case_seed: int) -> EvalCase:
    """One passkey retrieval case at a given length and depth."""
    rng = np.random.default_rng(case_seed)
    sentences = load_filler_sentences(config.filler_path)
    key = random_passkey(rng, config.passkey_digits)
    needle = PASSKEY_NEEDLE_TEMPLATE.format(key=key)
    prompt, _ = _build_prompt(
        length, [depth_fraction], [needle], PASSKEY_QUESTION,
        sentences, rng, config.counter,
    )
    return EvalCase(
        case_id=f"passkey_L{length}_D{depth_fraction:.4f}",
        task=Task.PASSKEY.value,
        target_length=length,
        depth_fractions=[depth_fraction],
        needles=[{"key": "pass key", "value": key}],
        prompt=prompt,
        gold=[key],
    )


def _distinct_words(rng: np.random.Generator, n: int) -> list[str]:
    """n distinct adjective-noun key phrases drawn without replacement."""
    adjectives = ["amber", "crimson", "cobalt", "ivory", "jade", "onyx",
                  "scarlet", "silver", "teal", "violet", "golden", "copper"]
    nouns = ["falcon", "harbor", "lantern", "meadow", "obelisk", "pylon",
             "quarry", "saddle", "tundra", "willow", "anchor", "beacon"]
    combos = [f"{a} {b}" for a in adjectives for b in nouns]
    if n > len(combos):
        raise ConfigurationError(f"cannot draw {n} distinct keys (max {len(combos)})")
    picks = rng.choice(len(combos), size=n, replace=False)
    return [combos[i] for i in picks]


def _distinct_values(rng: np.random.Generator, n: int, digits: int) -> list[str]:
    lo, hi = 10 ** (digits - 1), 10**digits
    if n > hi - lo:
        raise ConfigurationError(f"cannot draw {n} distinct {digits}-digit values")
    vals = rng.choice(hi - lo, size=n, replace=False) + lo
    return [str(int(v)) for v in vals]


def gen_ruler_case(config: NiahConfig, task: Task, length: int,
                   depth_fractions: list[float], case_seed: int,
                   num_needles: int = 4) -> EvalCase:
    """Multi-needle retrieval case (multi-key, multi-value, or multi-query)."""
    task = Task(task)
    if task is Task.PASSKEY:
        return gen_passkey_case(config, length, depth_fractions[0], case_seed)
    rng = np.random.default_rng(case_seed)
    sentences = load_filler_sentences(config.filler_path)

    if task is Task.MULTI_KEY:
        keys = _distinct_words(rng, num_needles)
        values = _distinct_values(rng, num_needles, config.passkey_digits)
        queried = int(rng.integers(num_needles))
        question = KV_QUESTION_ONE.format(key=keys[queried])
        gold = [values[queried]]
    elif task is Task.MULTI_VALUE:
        keys = [_distinct_words(rng, 1)[0]] * num_needles
        values = _distinct_values(rng, num_needles, config.passkey_digits)
        question = KV_QUESTION_ALL.format(keys=keys[0])
        gold = list(values)
    elif task is Task.MULTI_QUERY:
        keys = _distinct_words(rng, num_needles)
        values = _distinct_values(rng, num_needles, config.passkey_digits)
        question = KV_QUESTION_ALL.format(keys=", ".join(keys))
        gold = list(values)
    else:
        raise ConfigurationError(f"unsupported task {task!r}")

    if len(depth_fractions) != num_needles:
        raise ConfigurationError(
            f"{task.value} needs {num_needles} depth fractions, got {len(depth_fractions)}"
        )
    needles = [KV_NEEDLE_TEMPLATE.format(key=k, value=v) for k, v in zip(keys, values)]
    prompt, _ = _build_prompt(
        length, depth_fractions, needles, question, sentences, rng, config.counter
    )
    depth_tag = "_".join(f"{f:.3f}" for f in depth_fractions)
    return EvalCase(
        case_id=f"{task.value}_L{length}_D{depth_tag}",
        task=task.value,
        target_length=length,
        depth_fractions=list(depth_fractions),
        needles=[{"key": k, "value": v} for k, v in zip(keys, values)],
        prompt=prompt,
        gold=gold,
    )


def gen_niah_grid(config: NiahConfig):
    """Passkey cases over the full length x depth grid, canonically ordered
    by length then depth. Each cell's seed derives from the master seed."""
    for length in length_grid(config):
        for depth in depth_grid(config.num_depths):
            case_seed = derive_seed(config.seed, "niah", length, f"{depth:.6f}")
            yield gen_passkey_case(config, length, depth, case_seed)


def gen_ruler_grid(config: NiahConfig, task: Task, num_needles: int = 4):
    """Multi-needle cases over the grid; the grid depth positions the first
    needle and the remaining needles draw seeded uniform depths."""
    for length in length_grid(config):
        for depth in depth_grid(config.num_depths):
            case_seed = derive_seed(config.seed, task.value, length, f"{depth:.6f}")
            rng = np.random.default_rng(derive_seed(case_seed, "depths"))
            extra = sorted(float(f) for f in rng.uniform(0, 1, size=num_needles - 1))
            yield gen_ruler_case(config, task, length, [depth] + extra, case_seed,
                                 num_needles=num_needles)


def emit(cases, path) -> int:
    """Stream cases to JSON Lines; returns the number of lines written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for case in cases:
            fh.write(case.to_json_line() + "\n")
            n += 1
    return n


def read_cases(path):
    """Stream cases back from a JSONL case file."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                yield EvalCase(
                    case_id=doc["case_id"],
                    task=doc["task"],
                    target_length=doc["target_length"],
                    depth_fractions=doc["depth_fractions"],
                    needles=doc["needles"],
                    prompt=doc["prompt"],
                    gold=doc["gold"],
                )
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{path}: bad case at line {lineno}: {exc}") from exc


def _question_text(case: EvalCase) -> str:
    """Reconstruct the closing question from the case metadata."""
    task = Task(case.task)
    if task is Task.PASSKEY:
        return PASSKEY_QUESTION
    if task is Task.MULTI_KEY:
        key = next(n["key"] for n in case.needles if n["value"] == case.gold[0])
        return KV_QUESTION_ONE.format(key=key)
    if task is Task.MULTI_VALUE:
        return KV_QUESTION_ALL.format(keys=case.needles[0]["key"])
    return KV_QUESTION_ALL.format(keys=", ".join(n["key"] for n in case.needles))


def _rendered_needle(case: EvalCase, needle: dict) -> str:
    if Task(case.task) is Task.PASSKEY:
        return PASSKEY_NEEDLE_TEMPLATE.format(key=needle["value"])
    return KV_NEEDLE_TEMPLATE.format(key=needle["key"], value=needle["value"])


def measure_depth(case: EvalCase, counter: TokenCounter | None = None) -> float:
    """Measured depth fraction of the first gold needle within the filler
    body — preamble, closing question, and needle-internal words excluded —
    in whitespace-word units; independent check used by placement tests."""
    words = case.prompt.split()

    def value_index(value: str) -> int:
        for i, w in enumerate(words):
            if value in w:
                return i
        raise VerificationError(f"{case.case_id}: value {value!r} not found in prompt")

    gold_needle = next(n for n in case.needles if n["value"] == case.gold[0])
    rendered = _rendered_needle(case, gold_needle)
    prefix = next(
        i for i, w in enumerate(rendered.split()) if gold_needle["value"] in w
    )
    target = value_index(gold_needle["value"])

    preamble_words = len(PREAMBLE.split())
    question_words = len(_question_text(case).split())
    needle_words = {n["value"]: len(_rendered_needle(case, n).split()) for n in case.needles}
    body_words = len(words) - preamble_words - question_words - sum(needle_words.values())
    # filler consumed before this needle: strip the preamble and the words
    # of any needle that was inserted earlier in the prompt
    earlier = sum(
        needle_words[n["value"]]
        for n in case.needles
        if n["value"] != gold_needle["value"]
        and value_index(n["value"]) < target
    )
    start_in_filler = target - prefix - preamble_words - earlier
    return min(max(start_in_filler / max(body_words, 1), 0.0), 1.0)
