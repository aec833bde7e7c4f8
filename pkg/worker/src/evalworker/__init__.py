"""Out-of-process evaluator for candidate programs.

Speaks newline-delimited JSON over stdio (or TCP), evaluates each candidate in
a fresh sandboxed child process with a hard timeout, checks correctness against
the reference implementation on randomized inputs (candidate always runs
first), and reports median wall-clock timings.
"""

__version__ = "0.1.0"
