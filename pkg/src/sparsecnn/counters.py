from dataclasses import dataclass


@dataclass
class OpCounter:
    """Caller-owned tally of arithmetic work done by a kernel.

    ``mults`` counts multiplications actually formed, ``compares`` counts
    combiner/threshold evaluations, ``max_depth`` is the deepest reduction tree
    seen (input reduction only).
    """

    mults: int = 0
    adds: int = 0
    compares: int = 0
    max_depth: int = 0

    def reset(self):
        self.mults = self.adds = self.compares = self.max_depth = 0
