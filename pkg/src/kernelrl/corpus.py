"""Bundled candidate-program corpus: known hack patterns and known-clean kernels.

The hack fixtures reproduce the three documented reward-hack shapes (calling
the stock operator, try/except fallback to it, and inheriting the reference
with a bare `pass` body). The clean fixtures are real inline-CUDA candidates
that legitimately use the allowlisted torch.nn escape hatches.
"""

from __future__ import annotations

from importlib import resources

HACK_NAMES = (
    "hack_torch_module_call",
    "hack_try_except_fallback",
    "hack_pass_inheritance",
)

CLEAN_NAMES = (
    "clean_conv3d_fused",
    "clean_conv3d_unrolled",
)


def load_fixture(name: str) -> str:
    path = resources.files("kernelrl").joinpath("fixtures", f"{name}.txt")
    return path.read_text(encoding="utf-8")


def hack_fixtures() -> dict[str, str]:
    return {name: load_fixture(name) for name in HACK_NAMES}


def clean_fixtures() -> dict[str, str]:
    return {name: load_fixture(name) for name in CLEAN_NAMES}
