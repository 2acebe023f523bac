"""Desk-scale two-stage training: SFT cold start, then GRPO with the
composite reward, over the tabular toy policy.

Ablation presets select which data partitions and reward components each
stage uses, mirroring the training-strategy comparison grid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    Corpus,
    PartitionTag,
    PromptMode,
    TaskType,
    VqaSample,
    partition,
    render_instruction,
)
from .policy import (
    GrpoConfig,
    GroupBatch,
    SftBatch,
    ToyPolicy,
    advantages,
    grpo_objective,
    sample_group,
    sft_loss,
)
from .rewards import RewardBreakdown, RewardConfig, process_reward, total_reward

TAG_TOKENS = ("<think>", "</think>", "<answer>", "</answer>")
EOS_TOKEN = "<eos>"


class PresetError(ValueError):
    pass


def toy_tokens(text: str) -> tuple[str, ...]:
    return tuple(text.split())


def detokenize(tokens: tuple[str, ...], eos_token: str = EOS_TOKEN) -> str:
    return " ".join(t for t in tokens if t != eos_token)


def prompt_mode_for(sample: VqaSample) -> PromptMode:
    if sample.partition is PartitionTag.REASONING_AUGMENTED:
        return PromptMode.COT
    return PromptMode.DIRECT


def target_tokens(sample: VqaSample) -> tuple[str, ...]:
    """Expected output token sequence: reasoning wrapped in think tags plus
    the answer for reasoning-augmented samples, the answer alone otherwise."""
    answer = toy_tokens(sample.answer)
    if sample.partition is PartitionTag.REASONING_AUGMENTED:
        return (
            ("<think>",)
            + toy_tokens(sample.reasoning)
            + ("</think>", "<answer>")
            + answer
            + ("</answer>", EOS_TOKEN)
        )
    return ("<answer>",) + answer + ("</answer>", EOS_TOKEN)


def build_vocab(corpus: Corpus) -> tuple[str, ...]:
    tokens: set[str] = set(TAG_TOKENS) | {EOS_TOKEN}
    for s in corpus.samples:
        tokens.update(target_tokens(s))
    return tuple(sorted(tokens))


def make_sft_batches(corpus: Corpus) -> list[SftBatch]:
    batches = []
    for s in corpus.samples:
        prompt = render_instruction(s, prompt_mode_for(s))
        batches.append(SftBatch(prompt_key=prompt, target=target_tokens(s)))
    return batches


@dataclass
class SftConfig:
    learning_rate: float = 0.5  # tabular-regime rescale of the nominal 2e-6
    steps: int = 25
    seed: int = 0


def toy_sft_config(seed: int = 0, steps: int = 25) -> SftConfig:
    return SftConfig(learning_rate=0.5, steps=steps, seed=seed)


def toy_grpo_config(seed: int = 0, steps: int = 200) -> "GrpoConfig":
    """GrpoConfig rescaled for the tabular regime (the nominal defaults
    target a large neural policy)."""
    return GrpoConfig(
        learning_rate=3.0, entropy_coef=0.01, seed=seed, steps=steps
    )


@dataclass
class StepStats:
    step: int
    stage: str
    loss: Optional[float] = None
    mean_reward: Optional[float] = None
    mean_format: Optional[float] = None
    mean_outcome: Optional[float] = None
    mean_process: Optional[float] = None
    mean_kl: Optional[float] = None
    process_factuality: Optional[float] = None  # probe on reasoning-augmented prompts

    def as_record(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def train_sft(
    policy: ToyPolicy, corpus: Corpus, cfg: SftConfig
) -> tuple[ToyPolicy, list[StepStats]]:
    """Full-batch gradient descent on the mean SFT loss."""
    if len(corpus) == 0:
        raise PresetError("sft stage: empty corpus")
    batches = make_sft_batches(corpus)
    policy = policy.copy()
    stats = []
    for step in range(cfg.steps):
        total_loss = 0.0
        grad = np.zeros_like(policy.theta)
        for b in batches:
            loss, g = sft_loss(policy, b)
            total_loss += loss
            grad += g
        total_loss /= len(batches)
        grad /= len(batches)
        policy.theta = policy.theta - cfg.learning_rate * grad
        stats.append(StepStats(step=step, stage="sft", loss=total_loss))
    return policy, stats


def _group_rewards(
    batch: GroupBatch,
    sample: VqaSample,
    part: PartitionTag,
    reward_cfg: RewardConfig,
    eos_token: str,
) -> list[RewardBreakdown]:
    return [
        total_reward(detokenize(o, eos_token), sample, part, reward_cfg)
        for o in batch.outputs
    ]


def _probe_factuality(
    policy: ToyPolicy,
    probe_samples: list[VqaSample],
    matcher,
    group_size: int,
    seed: int,
) -> Optional[float]:
    """Diagnostic mean process factuality of fresh samples on reasoning-
    augmented prompts; measured for every preset, rewarded only by some."""
    if not probe_samples:
        return None
    values = []
    for j, s in enumerate(probe_samples):
        prompt = render_instruction(s, PromptMode.COT)
        for i in range(group_size):
            rng = np.random.default_rng([seed, j, i])
            text = detokenize(policy.sample(prompt, rng), policy.eos_token)
            values.append(process_reward(text, s, matcher))
    return float(np.mean(values))


def train_grpo(
    policy: ToyPolicy,
    corpus: Corpus,
    reward_cfg: RewardConfig,
    cfg: GrpoConfig,
    probe_every: int = 25,
) -> tuple[ToyPolicy, list[StepStats]]:
    """Full-batch updates: every step samples one group per prompt from the
    frozen old policy, then applies one averaged optimizer step. The old
    policy is refreshed each step. Fully deterministic given (corpus,
    config, seed)."""
    if len(corpus) == 0:
        raise PresetError("grpo stage: empty corpus")
    samples = sorted(corpus.samples, key=lambda s: s.id)
    probe_samples = [
        s for s in samples if s.partition is PartitionTag.REASONING_AUGMENTED
    ]
    policy = policy.copy()
    stats = []
    for step in range(cfg.steps):
        policy_old = policy.copy()
        grad = np.zeros_like(policy.theta)
        all_breakdowns = []
        all_rewards = []
        kl_batches = []
        for j, sample in enumerate(samples):
            part = sample.partition
            prompt = render_instruction(sample, prompt_mode_for(sample))
            batch = sample_group(
                policy_old,
                prompt,
                cfg.group_size,
                seed=cfg.seed * 1_000_003 + step * 1_009 + j,
            )
            breakdowns = _group_rewards(
                batch, sample, part, reward_cfg, policy.eos_token
            )
            batch.rewards = np.array([b.total for b in breakdowns])
            batch.advantages = advantages(batch.rewards)
            _, g = grpo_objective(policy, policy_old, batch, cfg)
            grad += g
            all_breakdowns.extend(breakdowns)
            all_rewards.append(batch.rewards)
            kl_batches.append((prompt, batch))
        grad /= len(samples)
        policy.theta = policy.theta + cfg.learning_rate * grad

        probe = None
        if step == 0 or step == cfg.steps - 1 or (step + 1) % probe_every == 0:
            probe = _probe_factuality(
                policy,
                probe_samples,
                reward_cfg.matcher,
                cfg.group_size,
                seed=cfg.seed * 7_368_787 + step,
            )
        kl_new = [
            b.logp_old[i] - policy.log_prob(prompt, o)
            for prompt, b in kl_batches
            for i, o in enumerate(b.outputs)
        ]
        stats.append(
            StepStats(
                step=step,
                stage="grpo",
                mean_reward=float(np.concatenate(all_rewards).mean()),
                mean_format=float(np.mean([b.format for b in all_breakdowns])),
                mean_outcome=float(np.mean([b.outcome for b in all_breakdowns])),
                mean_process=float(np.mean([b.process for b in all_breakdowns])),
                mean_kl=float(np.mean(kl_new)),
                process_factuality=probe,
            )
        )
    return policy, stats


# ---------------------------------------------------------------------------
# ablation presets

@dataclass(frozen=True)
class StageSpec:
    kind: str  # "sft" | "grpo"
    data: str  # "R" | "A" | "both"
    use_process_reward: bool = False


@dataclass(frozen=True)
class Preset:
    name: str
    stages: tuple[StageSpec, ...]


PRESETS: dict[str, Preset] = {
    "sft_ro": Preset("sft_ro", (StageSpec("sft", "R"),)),
    "sft_both": Preset("sft_both", (StageSpec("sft", "both"),)),
    "rl_o": Preset("rl_o", (StageSpec("grpo", "A"),)),
    "sft_ro_rl_o": Preset(
        "sft_ro_rl_o", (StageSpec("sft", "R"), StageSpec("grpo", "A"))
    ),
    "no_process_reward": Preset(
        "no_process_reward",
        (StageSpec("sft", "both"), StageSpec("grpo", "both")),
    ),
    "full": Preset(
        "full",
        (
            StageSpec("sft", "both"),
            StageSpec("grpo", "both", use_process_reward=True),
        ),
    ),
}


def _select_data(corpus: Corpus, which: str) -> Corpus:
    if which == "both":
        return corpus
    d_r, d_a = partition(corpus)
    selected = d_r if which == "R" else d_a
    if len(selected) == 0:
        raise PresetError(f"preset stage needs partition {which!r}, which is empty")
    return selected


def run_preset(
    preset_name: str,
    corpus: Corpus,
    policy: ToyPolicy,
    sft_cfg: SftConfig,
    grpo_cfg: GrpoConfig,
    reward_cfg: Optional[RewardConfig] = None,
) -> tuple[ToyPolicy, list[StepStats]]:
    if preset_name not in PRESETS:
        raise PresetError(
            f"unknown preset {preset_name!r}; expected one of {sorted(PRESETS)}"
        )
    reward_cfg = reward_cfg or RewardConfig()
    preset = PRESETS[preset_name]
    all_stats: list[StepStats] = []
    for spec in preset.stages:
        data = _select_data(corpus, spec.data)
        if spec.kind == "sft":
            policy, stats = train_sft(policy, data, sft_cfg)
        else:
            stage_reward_cfg = replace(
                reward_cfg, use_process_reward=spec.use_process_reward
            )
            policy, stats = train_grpo(policy, data, stage_reward_cfg, grpo_cfg)
        all_stats.extend(stats)
    return policy, all_stats


def train(
    policy: ToyPolicy,
    corpus: Corpus,
    stage: str,
    reward_cfg: Optional[RewardConfig] = None,
    sft_cfg: Optional[SftConfig] = None,
    grpo_cfg: Optional[GrpoConfig] = None,
) -> tuple[ToyPolicy, list[StepStats]]:
    """Run a single training stage ('sft' or 'grpo') on the given corpus."""
    if stage == "sft":
        return train_sft(policy, corpus, sft_cfg or SftConfig())
    if stage == "grpo":
        return train_grpo(
            policy, corpus, reward_cfg or RewardConfig(), grpo_cfg or GrpoConfig()
        )
    raise ValueError(f"unknown stage {stage!r}")


# ---------------------------------------------------------------------------
# synthetic factual-grammar task

_TOY_FINDINGS = (
    "pleural_effusion",
    "cardiomegaly",
    "pneumothorax",
    "consolidation",
)


def make_toy_corpus(
    n_reasoning: int = 4, n_answer_only: int = 4, seed: int = 0
) -> Corpus:
    """Tiny synthetic diagnosis corpus: single-finding reports paired with
    yes/no questions, plus answer-only twins."""
    from .core import Option

    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_reasoning):
        finding = _TOY_FINDINGS[i % len(_TOY_FINDINGS)]
        readable = finding.replace("_", " ")
        samples.append(
            VqaSample(
                id=f"toy_r{i:03d}",
                task=TaskType.BINARY_DIAGNOSIS,
                images=(f"img/toy_r{i:03d}.png",),
                question=f"Does this chest X-ray show {readable}?",
                options=(Option("A", "yes"), Option("B", "no")),
                answer="A",
                report=f"{readable}.",
                reasoning=finding,
                source="toy",
                split="train",
            )
        )
    for i in range(n_answer_only):
        finding = _TOY_FINDINGS[int(rng.integers(len(_TOY_FINDINGS)))]
        readable = finding.replace("_", " ")
        samples.append(
            VqaSample(
                id=f"toy_a{i:03d}",
                task=TaskType.BINARY_DIAGNOSIS,
                images=(f"img/toy_a{i:03d}.png",),
                question=f"Does this chest X-ray show {readable}?",
                options=(Option("A", "yes"), Option("B", "no")),
                answer="A" if i % 2 == 0 else "B",
                source="toy",
                split="train",
            )
        )
    return Corpus(tuple(samples), provenance="synthetic factual-grammar task")


def make_toy_policy(corpus: Corpus, n_contexts: int = 64, max_length: int = 10) -> ToyPolicy:
    return ToyPolicy.uniform(
        build_vocab(corpus),
        n_contexts=n_contexts,
        context_size=2,
        max_length=max_length,
        eos_token=EOS_TOKEN,
    )


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(policy: ToyPolicy, path: str | Path, config_hash: str = "") -> None:
    path = Path(path)
    np.savez(
        path,
        theta=policy.theta,
        vocab=np.array(policy.vocab),
        context_size=policy.context_size,
        max_length=policy.max_length,
        eos_token=policy.eos_token,
        config_hash=config_hash,
    )


def load_checkpoint(path: str | Path) -> ToyPolicy:
    data = np.load(Path(path), allow_pickle=False)
    return ToyPolicy(
        vocab=tuple(str(t) for t in data["vocab"]),
        theta=data["theta"],
        context_size=int(data["context_size"]),
        max_length=int(data["max_length"]),
        eos_token=str(data["eos_token"]),
    )
