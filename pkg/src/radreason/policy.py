"""Tabular softmax sequence policy with exact log-probs and analytic gradients.

Contexts (prompt key + recent output tokens) are hashed into a fixed number
of logit-table rows, so every objective here admits closed-form gradients
checkable against finite differences, and output spaces stay enumerable.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


@dataclass
class ToyPolicy:
    vocab: tuple[str, ...]
    theta: np.ndarray  # (n_contexts, V) logit table
    context_size: int = 2
    max_length: int = 16
    eos_token: str = "<eos>"
    _index: dict = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.eos_token not in self.vocab:
            raise ValueError("vocabulary must contain the end token")
        if self.theta.shape[1] != len(self.vocab):
            raise ValueError("theta width must equal vocabulary size")
        self._index = {tok: i for i, tok in enumerate(self.vocab)}

    @classmethod
    def uniform(
        cls,
        vocab: Sequence[str],
        n_contexts: int = 64,
        context_size: int = 2,
        max_length: int = 16,
        eos_token: str = "<eos>",
    ) -> "ToyPolicy":
        return cls(
            vocab=tuple(vocab),
            theta=np.zeros((n_contexts, len(vocab))),
            context_size=context_size,
            max_length=max_length,
            eos_token=eos_token,
        )

    @property
    def n_contexts(self) -> int:
        return self.theta.shape[0]

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(
            vocab=self.vocab,
            theta=self.theta.copy(),
            context_size=self.context_size,
            max_length=self.max_length,
            eos_token=self.eos_token,
        )

    def token_index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise ValueError(f"token {token!r} is outside the vocabulary")

    def bucket(self, prompt_key: str, prev_tokens: Sequence[str]) -> int:
        window = tuple(prev_tokens)[-self.context_size:]
        key = prompt_key + "\x1f" + "\x1f".join(window)
        return zlib.crc32(key.encode("utf-8")) % self.n_contexts

    def log_probs_at(self, bucket: int) -> np.ndarray:
        return _log_softmax(self.theta[bucket])

    def probs_at(self, bucket: int) -> np.ndarray:
        return np.exp(self.log_probs_at(bucket))

    def log_prob(self, prompt_key: str, tokens: Sequence[str]) -> float:
        logp = 0.0
        for t, token in enumerate(tokens):
            b = self.bucket(prompt_key, tokens[:t])
            logp += self.log_probs_at(b)[self.token_index(token)]
        return float(logp)

    def log_prob_with_grad(
        self, prompt_key: str, tokens: Sequence[str]
    ) -> tuple[float, np.ndarray, tuple[int, ...]]:
        """Exact log-prob, its gradient in theta, and the visited buckets."""
        grad = np.zeros_like(self.theta)
        logp = 0.0
        visited = []
        for t, token in enumerate(tokens):
            b = self.bucket(prompt_key, tokens[:t])
            visited.append(b)
            lp = self.log_probs_at(b)
            idx = self.token_index(token)
            logp += lp[idx]
            grad[b] -= np.exp(lp)
            grad[b, idx] += 1.0
        return float(logp), grad, tuple(visited)

    def sample(self, prompt_key: str, rng: np.random.Generator) -> tuple[str, ...]:
        """Seeded ancestral sampling, terminated by the end token or max_length."""
        tokens: list[str] = []
        for _ in range(self.max_length):
            b = self.bucket(prompt_key, tokens)
            idx = int(rng.choice(len(self.vocab), p=self.probs_at(b)))
            tokens.append(self.vocab[idx])
            if tokens[-1] == self.eos_token:
                break
        return tuple(tokens)

    def entropy_at(self, bucket: int) -> float:
        lp = self.log_probs_at(bucket)
        return float(-(np.exp(lp) * lp).sum())

    def entropy_with_grad(self, bucket: int) -> tuple[float, np.ndarray]:
        lp = self.log_probs_at(bucket)
        p = np.exp(lp)
        h = float(-(p * lp).sum())
        grad = np.zeros_like(self.theta)
        grad[bucket] = -p * (lp + h)
        return h, grad


@dataclass(frozen=True)
class SftBatch:
    prompt_key: str
    target: tuple[str, ...]
    mask: Optional[tuple[bool, ...]] = None  # defaults to all target tokens

    def __post_init__(self) -> None:
        if not self.target:
            raise ValueError("sft target must be non-empty")
        if self.mask is not None and len(self.mask) != len(self.target):
            raise ValueError("mask length must equal target length")


def sft_loss(policy: ToyPolicy, batch: SftBatch) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of the masked target tokens, with exact gradient."""
    mask = batch.mask or tuple(True for _ in batch.target)
    loss = 0.0
    grad = np.zeros_like(policy.theta)
    for t, token in enumerate(batch.target):
        if not mask[t]:
            continue
        b = policy.bucket(batch.prompt_key, batch.target[:t])
        lp = policy.log_probs_at(b)
        idx = policy.token_index(token)
        loss -= lp[idx]
        grad[b] += np.exp(lp)
        grad[b, idx] -= 1.0
    return float(loss), grad


@dataclass
class GrpoConfig:
    group_size: int = 8
    clip_eps: float = 0.2
    kl_coef: float = 1e-4
    entropy_coef: float = 1e-4
    learning_rate: float = 5e-7  # nominal; presets rescale for the tabular regime
    steps: int = 200
    seed: int = 0
    clip_mode: str = "standard"  # "standard" | "literal" (objective as typeset)
    kl_estimator: str = "log_ratio"  # "log_ratio" | "k3"

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.kl_coef < 0:
            raise ValueError("kl_coef must be non-negative")
        if self.clip_mode not in ("standard", "literal"):
            raise ValueError(f"unknown clip_mode {self.clip_mode!r}")
        if self.kl_estimator not in ("log_ratio", "k3"):
            raise ValueError(f"unknown kl_estimator {self.kl_estimator!r}")


@dataclass
class GroupBatch:
    prompt_key: str
    outputs: tuple[tuple[str, ...], ...]
    logp_old: np.ndarray
    rewards: Optional[np.ndarray] = None
    advantages: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if len(self.outputs) != len(self.logp_old):
            raise ValueError("outputs and logp_old must have equal length")


def sample_group(
    policy_old: ToyPolicy, prompt_key: str, group_size: int, seed: int
) -> GroupBatch:
    """G independent seeded samples from the frozen policy, with their
    old-policy log-probs recorded for the importance ratio."""
    if group_size < 2:
        raise ValueError("group_size must be >= 2")
    outputs = []
    logp_old = []
    for i in range(group_size):
        rng = np.random.default_rng([seed, i])
        tokens = policy_old.sample(prompt_key, rng)
        outputs.append(tokens)
        logp_old.append(policy_old.log_prob(prompt_key, tokens))
    return GroupBatch(
        prompt_key=prompt_key,
        outputs=tuple(outputs),
        logp_old=np.array(logp_old),
    )


def advantages(rewards: Sequence[float]) -> np.ndarray:
    """Group-normalized advantages: (r - mean) / population std; an all-equal
    group yields all zeros rather than dividing by zero."""
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        raise ValueError("advantages need a group of at least 2 rewards")
    std = r.std()
    if std == 0.0:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def kl_penalty(
    logp_old: float, logp_new: float, estimator: str = "log_ratio"
) -> float:
    """Single-sample KL(old || new) estimator. The default is the plain log
    ratio; "k3" selects the non-negative variant q - 1 - log q."""
    if estimator == "log_ratio":
        return logp_old - logp_new
    if estimator == "k3":
        log_q = logp_new - logp_old
        return float(np.expm1(log_q) - log_q)
    raise ValueError(f"unknown kl estimator {estimator!r}")


def grpo_objective(
    policy: ToyPolicy,
    policy_old: ToyPolicy,
    batch: GroupBatch,
    cfg: GrpoConfig,
) -> tuple[float, np.ndarray]:
    """Clipped-surrogate group objective with KL penalty and entropy bonus;
    returns the value and its exact gradient in theta."""
    if batch.rewards is None or batch.advantages is None:
        raise ValueError("batch must have rewards and advantages filled")
    if len(batch.outputs) != len(batch.advantages):
        raise ValueError("mismatched group size")
    G = len(batch.outputs)
    eps = cfg.clip_eps
    value = 0.0
    grad = np.zeros_like(policy.theta)
    visited: set[int] = set()
    for i, output in enumerate(batch.outputs):
        a = float(batch.advantages[i])
        logp_new, glogp, buckets = policy.log_prob_with_grad(batch.prompt_key, output)
        visited.update(buckets)
        rho = float(np.exp(logp_new - batch.logp_old[i]))
        if cfg.clip_mode == "standard":
            unclipped = rho * a
            clipped = float(np.clip(rho, 1 - eps, 1 + eps)) * a
            surr = min(unclipped, clipped)
            # gradient flows through whichever branch attains the min; the
            # clipped branch has zero slope outside the trust region
            if unclipped <= clipped or (1 - eps < rho < 1 + eps):
                gsurr = a * rho * glogp
            else:
                gsurr = np.zeros_like(glogp)
        else:  # literal: min over the three scalars, then times A
            m = min(rho, 1 - eps)  # min(rho, 1-eps, 1+eps)
            surr = m * a
            gsurr = a * rho * glogp if rho < 1 - eps else np.zeros_like(glogp)
        kl = kl_penalty(batch.logp_old[i], logp_new, cfg.kl_estimator)
        if cfg.kl_estimator == "log_ratio":
            gkl = -glogp
        else:
            gkl = (np.exp(logp_new - batch.logp_old[i]) - 1.0) * glogp
        value += surr - cfg.kl_coef * kl
        grad += gsurr - cfg.kl_coef * gkl
    value /= G
    grad /= G
    if cfg.entropy_coef > 0 and visited:
        buckets = sorted(visited)
        for b in buckets:
            h, gh = policy.entropy_with_grad(b)
            value += cfg.entropy_coef * h / len(buckets)
            grad += cfg.entropy_coef * gh / len(buckets)
    return float(value), grad
