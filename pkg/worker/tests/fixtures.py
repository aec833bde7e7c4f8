"""Reference/candidate source pairs used across the worker tests.

The reference exposes the benchmark conventions: a Model class plus
get_inputs() / get_init_inputs() generators. Arrays are large enough that
median timings are stable on a busy CPU.
"""

REF_SCALE = '''
import numpy as np


class Model:
    """Scales the input elementwise."""

    def __init__(self, scale):
        self.scale = scale

    def forward(self, x):
        return x * self.scale


def get_init_inputs():
    return [2.0]


def get_inputs():
    return [np.random.rand(200000).astype(np.float64)]
'''

CAND_CORRECT = '''
class ModelNew:
    def __init__(self, scale):
        self.scale = scale

    def forward(self, x):
        return x * self.scale
'''

CAND_WRONG_VALUES = '''
class ModelNew:
    def __init__(self, scale):
        self.scale = scale

    def forward(self, x):
        return x * self.scale + 0.01
'''

CAND_HALF_OUTPUT = '''
import numpy as np


class ModelNew:
    """Computes only the first half of the output; the rest stays zero."""

    def __init__(self, scale):
        self.scale = scale

    def forward(self, x):
        out = np.zeros_like(x)
        half = x.shape[0] // 2
        out[:half] = x[:half] * self.scale
        return out
'''

CAND_SYNTAX_ERROR = '''
class ModelNew(
    def forward(self, x):
        return x
'''

CAND_IMPORT_ERROR = '''
import a_module_that_does_not_exist


class ModelNew:
    def __init__(self, scale):
        pass

    def forward(self, x):
        return x
'''

CAND_RAISES = '''
class ModelNew:
    def __init__(self, scale):
        self.scale = scale

    def forward(self, x):
        raise RuntimeError("boom at call time")
'''

CAND_BAD_INIT = '''
class ModelNew:
    def __init__(self, scale):
        raise ValueError("cannot construct")

    def forward(self, x):
        return x
'''

CAND_SLEEPS = '''
import time


class ModelNew:
    def __init__(self, scale):
        self.scale = scale

    def forward(self, x):
        time.sleep(60)
        return x * self.scale
'''

CAND_CRASHES = '''
import os


class ModelNew:
    def __init__(self, scale):
        self.scale = scale

    def forward(self, x):
        os._exit(13)
'''

REF_NO_GENERATORS = '''
class Model:
    def __init__(self):
        pass

    def forward(self, x):
        return x
'''

# Both sides append an event line to the file named by EVAL_ORDER_LOG, so a
# test can assert the candidate's outputs were materialized first.
REF_ORDER_PROBE = '''
import os

import numpy as np


class Model:
    def __init__(self):
        pass

    def forward(self, x):
        with open(os.environ["EVAL_ORDER_LOG"], "a") as fh:
            fh.write("reference\\n")
        return x + 1.0


def get_init_inputs():
    return []


def get_inputs():
    return [np.random.rand(64)]
'''

CAND_ORDER_PROBE = '''
import os


class ModelNew:
    def __init__(self):
        pass

    def forward(self, x):
        with open(os.environ["EVAL_ORDER_LOG"], "a") as fh:
            fh.write("candidate\\n")
        return x + 1.0
'''
