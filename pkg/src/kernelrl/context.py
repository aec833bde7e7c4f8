"""Per-turn prompt construction under a token budget.

The prompt is: base block (task + instructions), optionally a one-shot format
example on the very first turn, then one block per prior turn (kernel, change
summary, categorized feedback) in chronological order, closed by a restart
instruction. When the assembly exceeds the budget, whole turns are dropped
earliest-first until it fits.

Template strings are versioned resources; golden tests pin their exact bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .errors import BudgetError, ContractViolation
from .scoring import EvalResult, EvalStatus

TEMPLATE_VERSION = "1"

FEEDBACK_PARSE_ERROR = (
    "Your previous answer failed to be parsed due to not adhering to the desired "
    "formatting. Here is the error message: {error_message}"
)
FEEDBACK_COMPILE_ERROR = (
    "Your previous answer failed to compile. Here is the error message: {error_message}"
)
FEEDBACK_RUNTIME_ERROR = (
    "Your previous answer compiled successfully but had runtime errors. "
    "Here is the error message: {error_message}"
)
FEEDBACK_INCORRECT = (
    "Your previous answer was incorrect. Here is the error message: {error_message}"
)
FEEDBACK_CORRECT = (
    "Your previous answer was correct but can be made faster. Here is the speedup "
    "you achieved relative to the baseline: {speedup}"
)

# Guard rejections surface as incorrectness; there is no dedicated wording.
FEEDBACK_TEMPLATES: dict[EvalStatus, str] = {
    EvalStatus.parse_error: FEEDBACK_PARSE_ERROR,
    EvalStatus.compile_error: FEEDBACK_COMPILE_ERROR,
    EvalStatus.runtime_error: FEEDBACK_RUNTIME_ERROR,
    EvalStatus.incorrect: FEEDBACK_INCORRECT,
    EvalStatus.guard_rejected: FEEDBACK_INCORRECT,
    EvalStatus.correct: FEEDBACK_CORRECT,
}

TASK_HEADER = "You are given the following architecture:"

BASE_INSTRUCTIONS = (
    "Replace pytorch operators in the given architecture with raw CUDA kernels, "
    "optimizing for performance on NVIDIA H100 (e.g. shared memory, kernel fusion, "
    "warp primitives, vectorization,...). Use torch.utils.cpp_extension.load_inline "
    "and name your optimized output architecture ModelNew. You are not allowed to "
    "use torch.nn (except for Parameter, containers, and init). The input and output "
    "have to be on CUDA device. Your answer must be the complete new architecture "
    "(no testing code, no other code): it will be evaluated and you will be given "
    "feedback on its correctness and speedup so you can keep iterating, trying to "
    "maximize the speedup. After your answer, summarize your changes in a few "
    "sentences."
)

EXAMPLE_HEADER = "Here is an example:"

FORMAT_EXAMPLE = '''import torch.nn as nn
from torch.utils.cpp_extension import load_inline

# Define the custom CUDA kernel for element-wise addition
elementwise_add_source = """
#include <torch/extension.h>
#include <cuda_runtime.h>

__global__ void elementwise_add_kernel(const float* a, const float* b, float* out, int size) {
    int idx = blockIdx.x * blockDim.x + threadIdx.x;
    if (idx < size) {
        out[idx] = a[idx] + b[idx];
    }
}

torch::Tensor elementwise_add_cuda(torch::Tensor a, torch::Tensor b) {
    auto size = a.numel();
    auto out = torch::zeros_like(a);

    const int block_size = 256;
    const int num_blocks = (size + block_size - 1) / block_size;

    elementwise_add_kernel<<<num_blocks, block_size>>>(a.data_ptr<float>(), b.data_ptr<float>(), out.data_ptr<float>(), size);

    return out;
}
"""

elementwise_add_cpp_source = (
    "torch::Tensor elementwise_add_cuda(torch::Tensor a, torch::Tensor b);"
)

# Compile the inline CUDA code for element-wise addition
elementwise_add = load_inline(
    name="elementwise_add",
    cpp_sources=elementwise_add_cpp_source,
    cuda_sources=elementwise_add_source,
    functions=["elementwise_add_cuda"],
    verbose=True,
    extra_cflags=[""],
    extra_ldflags=[""],
)


class ModelNew(nn.Module):
    def __init__(self) -> None:
        super().__init__()
        self.elementwise_add = elementwise_add

    def forward(self, a, b):
        return self.elementwise_add.elementwise_add_cuda(a, b)'''

PREVIOUS_ATTEMPTS_HEADER = "Here are your previous attempts: "

RESTART_FOOTER = "Restart your reasoning process and generate new, complete code."


def render_speedup(speedup: float) -> str:
    """Speedup as shown to the policy, e.g. 1.06 or 2.0."""
    return str(round(speedup, 2))


def feedback_block(result: EvalResult) -> str:
    """The feedback paragraph matching the evaluation outcome, byte-stable."""
    template = FEEDBACK_TEMPLATES[result.status]
    if result.status == EvalStatus.correct:
        speedup = result.speedup
        assert speedup is not None
        return template.format(speedup=render_speedup(speedup))
    return template.format(error_message=result.error_message)


@dataclass(frozen=True)
class TurnRecord:
    """One completed refinement turn, as seen by later prompts.

    cot_full, response_tokens and truncated ride along for persistence and
    monitors; they never enter prompt text.
    """

    kernel_source: str
    cot_summary: str
    eval: EvalResult
    turn_index: int
    cot_full: str = ""
    response_tokens: int = 0
    truncated: bool = False


# --- token counting -----------------------------------------------------------

# Default heuristic: whitespace-delimited words times 1.3, rounded up. Real
# deployments register an exact tokenizer under their own counter_id.
def words_x13(text: str) -> int:
    return math.ceil(len(text.split()) * 1.3)


_COUNTERS: dict[str, Callable[[str], int]] = {"words_x1.3": words_x13}


def register_counter(counter_id: str, fn: Callable[[str], int]) -> None:
    _COUNTERS[counter_id] = fn


def get_counter(counter_id: str) -> Callable[[str], int]:
    try:
        return _COUNTERS[counter_id]
    except KeyError:
        raise ContractViolation(f"unknown token counter {counter_id!r}") from None


@dataclass(frozen=True)
class PromptBudget:
    max_tokens: int
    counter_id: str = "words_x1.3"

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ContractViolation("max_tokens must be positive")

    def count(self, text: str) -> int:
        return get_counter(self.counter_id)(text)


@dataclass(frozen=True)
class Prompt:
    text: str
    included_turns: tuple[int, ...]


def _turn_block(turn: TurnRecord) -> str:
    return f"{turn.kernel_source}\n\n{turn.cot_summary}\n\n{feedback_block(turn.eval)}"


def _assemble(base: str, turns: Sequence[TurnRecord]) -> str:
    if not turns:
        return base
    blocks = "\n\n".join(_turn_block(t) for t in turns)
    return f"{base}\n\n{PREVIOUS_ATTEMPTS_HEADER}\n\n{blocks}\n\n{RESTART_FOOTER}"


def build_context(task_text: str, history: Sequence[TurnRecord], budget: PromptBudget,
                  first_turn_example: bool = True) -> Prompt:
    """Assemble the prompt for the next turn, dropping earliest turns to fit.

    history must be sorted by turn_index. The one-shot format example appears
    only when requested and the history is empty. Raises BudgetError when even
    the irreducible base block exceeds the budget.
    """
    indices = [t.turn_index for t in history]
    if indices != sorted(indices):
        raise ContractViolation("history must be sorted by turn_index")

    base = f"{TASK_HEADER}\n\n{task_text}\n\n{BASE_INSTRUCTIONS}"
    if first_turn_example and not history:
        base = f"{base}\n\n{EXAMPLE_HEADER}\n\n{FORMAT_EXAMPLE}"

    kept = list(history)
    text = _assemble(base, kept)
    while budget.count(text) > budget.max_tokens and kept:
        kept.pop(0)  # drop whole earliest turns, never interior ones
        text = _assemble(base, kept)
    if budget.count(text) > budget.max_tokens:
        raise BudgetError(
            f"base prompt needs {budget.count(text)} tokens, budget is {budget.max_tokens}"
        )
    return Prompt(text=text, included_turns=tuple(t.turn_index for t in kept))
