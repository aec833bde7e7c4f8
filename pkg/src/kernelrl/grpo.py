"""Group-relative policy optimization objective and its gradient verification.

The objective per token is min(rho * A, clip(rho, 1-eps_low, 1+eps_high) * A)
with rho the new/old probability ratio, minus an optional KL penalty against a
reference policy. Token terms are normalized per sample (by sequence length or
by a fixed constant) and averaged over the batch. A tiny tabular policy with
per-position softmax heads makes the analytic gradient checkable against
central finite differences.

Summation order is fixed (sample order, then token order) so results are
bitwise reproducible.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Sequence

from .errors import ContractViolation

NORM_MODES = ("per_sequence", "constant")


@dataclass(frozen=True)
class GrpoConfig:
    eps_low: float = 0.2
    eps_high: float = 0.28
    beta: float = 0.0
    norm_mode: str = "per_sequence"
    # Used when norm_mode == "constant"; defaults to the stock max response length.
    norm_constant: int = 16384
    max_grad_norm: float = 0.05
    temperature: float = 0.9

    def __post_init__(self) -> None:
        if not (0.0 < self.eps_low <= self.eps_high < 1.0):
            raise ContractViolation("require 0 < eps_low <= eps_high < 1")
        if self.beta < 0:
            raise ContractViolation("beta must be nonnegative")
        if self.norm_mode not in NORM_MODES:
            raise ContractViolation(f"unknown norm_mode {self.norm_mode!r}")
        if self.norm_constant < 1:
            raise ContractViolation("norm_constant must be a positive integer")
        if self.max_grad_norm <= 0:
            raise ContractViolation("max_grad_norm must be positive")
        if self.temperature <= 0:
            raise ContractViolation("temperature must be positive")


@dataclass(frozen=True)
class SampleLogProbs:
    """Per-token log probabilities of one sample under new/old/ref policies.

    The advantage is a scalar; it applies to every token of the sample.
    """

    logp_new: tuple[float, ...]
    logp_old: tuple[float, ...]
    logp_ref: tuple[float, ...]
    advantage: float

    def __post_init__(self) -> None:
        n = len(self.logp_new)
        if n < 1:
            raise ContractViolation("a sample needs at least one token")
        if len(self.logp_old) != n or len(self.logp_ref) != n:
            raise ContractViolation("logp lists must have equal length")
        for seq in (self.logp_new, self.logp_old, self.logp_ref):
            if any(lp > 0 or not math.isfinite(lp) for lp in seq):
                raise ContractViolation("log probabilities must be finite and <= 0")


def token_term(logp_new: float, logp_old: float, adv: float, cfg: GrpoConfig) -> float:
    """Clipped surrogate contribution of one token."""
    rho = math.exp(logp_new - logp_old)
    clipped = min(max(rho, 1.0 - cfg.eps_low), 1.0 + cfg.eps_high)
    return min(rho * adv, clipped * adv)


def kl_estimate(logp_new: float, logp_ref: float) -> float:
    """Nonnegative per-token KL estimate of the new policy from the reference."""
    delta = logp_ref - logp_new
    return math.exp(delta) - delta - 1.0


def _sample_weight(n_tokens: int, cfg: GrpoConfig) -> float:
    if cfg.norm_mode == "per_sequence":
        return 1.0 / n_tokens
    return 1.0 / cfg.norm_constant


def batch_objective(samples: Sequence[SampleLogProbs], cfg: GrpoConfig) -> tuple[float, list[float]]:
    """Objective over a batch: mean over samples of normalized token-term sums.

    Each sample contributes weight * sum_t (token_term_t - beta * kl_t), where
    the weight is 1/len for per_sequence normalization or 1/norm_constant for
    the constant-length variant.
    """
    if not samples:
        raise ContractViolation("batch must be nonempty")
    per_sample: list[float] = []
    for s in samples:
        total = 0.0
        for lp_new, lp_old, lp_ref in zip(s.logp_new, s.logp_old, s.logp_ref):
            term = token_term(lp_new, lp_old, s.advantage, cfg)
            if cfg.beta != 0.0:
                term -= cfg.beta * kl_estimate(lp_new, lp_ref)
            total += term
        per_sample.append(total * _sample_weight(len(s.logp_new), cfg))
    return math.fsum(per_sample) / len(per_sample), per_sample


def clip_grad_norm(grads: Sequence[float], max_norm: float) -> list[float]:
    """Rescale the vector to L2 norm max_norm when it exceeds it; else identity."""
    norm = math.sqrt(math.fsum(g * g for g in grads))
    if norm <= max_norm or norm == 0.0:
        return list(grads)
    scale = max_norm / norm
    return [g * scale for g in grads]


class ToyPolicy:
    """Tabular policy: independent softmax over the vocabulary at each position.

    Stands in for the language model in gradient checks. log_prob of a symbol
    at a position depends only on that position's logits row.
    """

    def __init__(self, logits: list[list[float]]):
        if not logits or not logits[0]:
            raise ContractViolation("logits table must be nonempty")
        width = len(logits[0])
        if any(len(row) != width for row in logits):
            raise ContractViolation("all logits rows must have the same width")
        for row in logits:
            if any(not math.isfinite(x) for x in row):
                raise ContractViolation("logits must be finite")
        self.logits = [list(row) for row in logits]
        self.seq_len = len(logits)
        self.vocab_size = width

    @classmethod
    def random(cls, seed: int, vocab_size: int = 6, seq_len: int = 4,
               scale: float = 1.0) -> "ToyPolicy":
        rng = random.Random(seed)
        return cls([[rng.uniform(-scale, scale) for _ in range(vocab_size)]
                    for _ in range(seq_len)])

    def copy(self) -> "ToyPolicy":
        return ToyPolicy([list(row) for row in self.logits])

    def _log_z(self, pos: int) -> float:
        row = self.logits[pos]
        m = max(row)
        return m + math.log(math.fsum(math.exp(x - m) for x in row))

    def log_prob(self, pos: int, symbol: int) -> float:
        return self.logits[pos][symbol] - self._log_z(pos)

    def probs(self, pos: int) -> list[float]:
        row = self.logits[pos]
        m = max(row)
        exps = [math.exp(x - m) for x in row]
        z = math.fsum(exps)
        return [e / z for e in exps]

    def sequence_log_probs(self, sequence: Sequence[int]) -> list[float]:
        if len(sequence) > self.seq_len:
            raise ContractViolation("sequence longer than the policy table")
        return [self.log_prob(t, s) for t, s in enumerate(sequence)]


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    n_params: int
    worst_param: tuple[int, int]


def random_check_case(seed: int) -> tuple["ToyPolicy", list[tuple[tuple[int, ...], float]],
                                          "ToyPolicy", "ToyPolicy"]:
    """A reproducible (policy, batch, old, ref) quadruple for gradient checks.

    old and ref are perturbed copies of the policy, so the ratio leaves 1 in
    both directions (clip active and inactive) and the KL term is nonzero.
    """
    rng = random.Random(seed)
    vocab_size = rng.randint(2, 8)
    seq_len = rng.randint(1, 6)
    policy = ToyPolicy.random(rng.randrange(2**31), vocab_size, seq_len)
    old = policy.copy()
    ref = policy.copy()
    for table in (old, ref):
        for row in table.logits:
            for v in range(vocab_size):
                row[v] += rng.uniform(-0.25, 0.25)
    batch = []
    for _ in range(rng.randint(1, 4)):
        length = rng.randint(1, seq_len)
        sequence = tuple(rng.randrange(vocab_size) for _ in range(length))
        batch.append((sequence, rng.uniform(-2.0, 2.0)))
    return policy, batch, old, ref


def _objective_for(policy: ToyPolicy, batch: Sequence[tuple[Sequence[int], float]],
                   old: ToyPolicy, ref: ToyPolicy, cfg: GrpoConfig) -> float:
    samples = []
    for sequence, adv in batch:
        samples.append(SampleLogProbs(
            logp_new=tuple(policy.sequence_log_probs(sequence)),
            logp_old=tuple(old.sequence_log_probs(sequence)),
            logp_ref=tuple(ref.sequence_log_probs(sequence)),
            advantage=adv,
        ))
    objective, _ = batch_objective(samples, cfg)
    return objective


def analytic_gradient(policy: ToyPolicy, batch: Sequence[tuple[Sequence[int], float]],
                      old: ToyPolicy, ref: ToyPolicy, cfg: GrpoConfig) -> list[list[float]]:
    """d(batch objective)/d(logit[pos][v]) in closed form."""
    grad = [[0.0] * policy.vocab_size for _ in range(policy.seq_len)]
    g_batch = 1.0 / len(batch)
    for sequence, adv in batch:
        weight = _sample_weight(len(sequence), cfg) * g_batch
        for t, symbol in enumerate(sequence):
            lp_new = policy.log_prob(t, symbol)
            lp_old = old.log_prob(t, symbol)
            lp_ref = ref.log_prob(t, symbol)
            rho = math.exp(lp_new - lp_old)
            # Piecewise slope of min(rho*A, clip(rho)*A) with respect to logp_new.
            if adv >= 0:
                d_term = adv * rho if rho <= 1.0 + cfg.eps_high else 0.0
            else:
                d_term = adv * rho if rho >= 1.0 - cfg.eps_low else 0.0
            if cfg.beta != 0.0:
                d_term -= cfg.beta * (1.0 - math.exp(lp_ref - lp_new))
            probs = policy.probs(t)
            coeff = d_term * weight
            for v in range(policy.vocab_size):
                indicator = 1.0 if v == symbol else 0.0
                grad[t][v] += coeff * (indicator - probs[v])
    return grad


def grad_check(policy: ToyPolicy, batch: Sequence[tuple[Sequence[int], float]],
               cfg: GrpoConfig, h: float = 1e-5, *,
               old: ToyPolicy | None = None, ref: ToyPolicy | None = None) -> GradCheckReport:
    """Compare the analytic gradient with central finite differences.

    old and ref default to frozen copies of the current policy (the on-policy,
    zero-KL configuration). Relative error uses max(|analytic|, |numeric|) as
    the denominator, falling back to the absolute difference for near-zero pairs.
    """
    old = old if old is not None else policy.copy()
    ref = ref if ref is not None else policy.copy()
    analytic = analytic_gradient(policy, batch, old, ref, cfg)
    worst = 0.0
    worst_param = (0, 0)
    n_params = policy.seq_len * policy.vocab_size
    for t in range(policy.seq_len):
        for v in range(policy.vocab_size):
            base = policy.logits[t][v]
            policy.logits[t][v] = base + h
            plus = _objective_for(policy, batch, old, ref, cfg)
            policy.logits[t][v] = base - h
            minus = _objective_for(policy, batch, old, ref, cfg)
            policy.logits[t][v] = base
            numeric = (plus - minus) / (2.0 * h)
            a = analytic[t][v]
            if not math.isfinite(a) or not math.isfinite(numeric):
                raise ContractViolation(f"non-finite gradient at logit {(t, v)}")
            denom = max(abs(a), abs(numeric))
            err = abs(a - numeric) if denom < 1e-8 else abs(a - numeric) / denom
            if err > worst:
                worst = err
                worst_param = (t, v)
    return GradCheckReport(max_rel_error=worst, n_params=n_params, worst_param=worst_param)
