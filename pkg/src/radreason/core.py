"""Domain types, corpus schema, partitioning, and instruction rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional


class TaskType(str, Enum):
    BINARY_DIAGNOSIS = "binary_diagnosis"
    SINGLE_DIAGNOSIS = "single_diagnosis"
    MULTI_DIAGNOSIS = "multi_diagnosis"
    ANOMALY_DETECTION = "anomaly_detection"
    TEMPORAL_COMPARISON = "temporal_comparison"


CLOSE_ENDED_TASKS = frozenset(
    {
        TaskType.BINARY_DIAGNOSIS,
        TaskType.SINGLE_DIAGNOSIS,
        TaskType.MULTI_DIAGNOSIS,
        TaskType.TEMPORAL_COMPARISON,
    }
)


class PartitionTag(str, Enum):
    REASONING_AUGMENTED = "reasoning_augmented"
    ANSWER_ONLY = "answer_only"


class PromptMode(str, Enum):
    COT = "cot"
    DIRECT = "direct"


class CorpusError(ValueError):
    """Raised on malformed corpus records or invariant violations."""


class PartitionError(ValueError):
    """Raised when a sample fits neither partition (report xor reasoning)."""

    def __init__(self, ids: list[str]):
        self.ids = list(ids)
        super().__init__(
            "samples have a report without reasoning (or vice versa): "
            + ", ".join(self.ids)
        )


@dataclass(frozen=True)
class Option:
    label: str  # single token, e.g. "A"
    text: str


@dataclass(frozen=True)
class VqaSample:
    id: str
    task: TaskType
    images: tuple[str, ...]  # opaque references, never decoded
    question: str
    options: tuple[Option, ...]  # empty for anomaly_detection
    answer: str  # option label for close-ended tasks, free text otherwise
    report: str = ""
    reasoning: str = ""
    source: str = ""
    split: str = "train"

    def validate(self) -> None:
        if not self.id:
            raise CorpusError("sample id must be non-empty")
        if self.split not in ("train", "test"):
            raise CorpusError(f"sample {self.id}: split must be train|test")
        min_images = 2 if self.task is TaskType.TEMPORAL_COMPARISON else 1
        if len(self.images) < min_images:
            raise CorpusError(
                f"sample {self.id}: task {self.task.value} needs >= {min_images} images"
            )
        if self.task in CLOSE_ENDED_TASKS:
            if not self.options:
                raise CorpusError(
                    f"sample {self.id}: field 'options' must be non-empty for "
                    f"close-ended task {self.task.value}"
                )
            labels = [o.label for o in self.options]
            if len(set(labels)) != len(labels):
                raise CorpusError(f"sample {self.id}: duplicate option labels")
            if self.answer not in labels:
                raise CorpusError(
                    f"sample {self.id}: answer {self.answer!r} is not an option label"
                )
        else:
            if self.options:
                raise CorpusError(
                    f"sample {self.id}: anomaly_detection takes no options"
                )
            if not self.answer:
                raise CorpusError(f"sample {self.id}: free-text answer is empty")
        if self.reasoning and not self.report:
            raise CorpusError(
                f"sample {self.id}: reasoning present without its report"
            )

    @property
    def partition(self) -> Optional[PartitionTag]:
        """Partition tag, or None for the undefined mixed case."""
        if self.report and self.reasoning:
            return PartitionTag.REASONING_AUGMENTED
        if not self.report and not self.reasoning:
            return PartitionTag.ANSWER_ONLY
        return None

    def answer_text(self) -> str:
        """Ground-truth answer as display text (option text for close-ended)."""
        for o in self.options:
            if o.label == self.answer:
                return o.text
        return self.answer


@dataclass(frozen=True)
class Corpus:
    samples: tuple[VqaSample, ...]
    provenance: str = ""

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                raise CorpusError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            s.validate()

    def __len__(self) -> int:
        return len(self.samples)

    def by_id(self, sample_id: str) -> VqaSample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)


def sample_to_record(sample: VqaSample) -> dict:
    rec = asdict(sample)
    rec["task"] = sample.task.value
    rec["images"] = list(sample.images)
    rec["options"] = [{"label": o.label, "text": o.text} for o in sample.options]
    return rec


def sample_from_record(rec: dict) -> VqaSample:
    try:
        task = TaskType(rec["task"])
    except (KeyError, ValueError):
        raise CorpusError(f"field 'task' missing or unknown: {rec.get('task')!r}")
    options = tuple(
        Option(label=str(o["label"]), text=str(o["text"]))
        for o in rec.get("options") or []
    )
    try:
        sample = VqaSample(
            id=str(rec["id"]),
            task=task,
            images=tuple(str(x) for x in rec["images"]),
            question=str(rec["question"]),
            options=options,
            answer=str(rec["answer"]),
            report=str(rec.get("report") or ""),
            reasoning=str(rec.get("reasoning") or ""),
            source=str(rec.get("source") or ""),
            split=str(rec.get("split") or "train"),
        )
    except KeyError as e:
        raise CorpusError(f"missing field {e.args[0]!r}")
    sample.validate()
    return sample


def load_corpus(path: str | Path, provenance: str = "") -> Corpus:
    """Load a line-delimited corpus file, validating every record.

    Validation failures report the 1-based line number and offending field.
    """
    path = Path(path)
    samples: list[VqaSample] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: malformed record: {e}")
            try:
                sample = sample_from_record(rec)
            except CorpusError as e:
                raise CorpusError(f"{path}:{lineno}: {e}")
            if sample.id in seen:
                raise CorpusError(
                    f"{path}:{lineno}: duplicate sample id {sample.id!r}"
                )
            seen.add(sample.id)
            samples.append(sample)
    return Corpus(samples=tuple(samples), provenance=provenance or str(path))


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in corpus.samples:
            fh.write(json.dumps(sample_to_record(s), sort_keys=True) + "\n")


def partition(corpus: Corpus) -> tuple[Corpus, Corpus]:
    """Split into (reasoning-augmented, answer-only) sub-corpora.

    Samples with a report but no reasoning (or vice versa) fit neither side
    and are rejected rather than coerced.
    """
    augmented: list[VqaSample] = []
    answer_only: list[VqaSample] = []
    bad: list[str] = []
    for s in corpus.samples:
        tag = s.partition
        if tag is PartitionTag.REASONING_AUGMENTED:
            augmented.append(s)
        elif tag is PartitionTag.ANSWER_ONLY:
            answer_only.append(s)
        else:
            bad.append(s.id)
    if bad:
        raise PartitionError(bad)
    return (
        Corpus(tuple(augmented), provenance=corpus.provenance),
        Corpus(tuple(answer_only), provenance=corpus.provenance),
    )


IMAGE_TOKEN = "<image>"

_SYSTEM_LINE = "System: You are a helpful AI assistant."
_DIRECT_SUFFIX = " Please enclose the answer within <answer></answer>"
_COT_SUFFIX = (
    " Please think step by step, and enclose the answer within "
    "<answer></answer> and the reasoning processes within <think></think>."
)


def _options_text(sample: VqaSample) -> str:
    if not sample.options:
        return ""
    parts = " ".join(f"{o.label}) {o.text}" for o in sample.options)
    return f" Options: {parts}"


def render_instruction(sample: VqaSample, mode: PromptMode) -> str:
    """Render the two-line instruction prompt for a sample.

    One image placeholder per image reference precedes the question;
    deterministic for identical inputs.
    """
    placeholders = IMAGE_TOKEN * len(sample.images)
    suffix = _COT_SUFFIX if mode is PromptMode.COT else _DIRECT_SUFFIX
    user = f"User: {placeholders}{sample.question}{_options_text(sample)}{suffix}"
    return f"{_SYSTEM_LINE}\n{user}"


def label_by_answer(sample: VqaSample) -> str:
    """Default disease label for balancing: the answer's option text for
    close-ended tasks, the raw answer otherwise."""
    return sample.answer_text()


LabelFn = Callable[[VqaSample], str]


def count_labels(samples: Iterable[VqaSample], label_of: LabelFn) -> dict[str, int]:
    counts: dict[str, int] = {}
    for s in samples:
        counts[label_of(s)] = counts.get(label_of(s), 0) + 1
    return counts
