import itertools

from adaptbt.core import (
    Fallback,
    NodeStatus,
    ReactiveFallback,
    ReactiveSequence,
    Sequence,
    TreeNode,
)

STATUS_BY_LETTER = {
    "S": NodeStatus.SUCCESS,
    "F": NodeStatus.FAILURE,
    "R": NodeStatus.RUNNING,
}

ENGINE_KINDS = {
    "seq": Sequence,
    "fall": Fallback,
    "rseq": ReactiveSequence,
    "rfall": ReactiveFallback,
}


class ScriptedLeaf(TreeNode):
    """Leaf whose k-th tick returns schedule[k] (last entry repeats).

    The tick count is global and survives halts on purpose: the schedule
    models the environment changing over time.
    """

    kind = "scripted"

    def __init__(self, schedule, name=None):
        super().__init__(name or f"leaf[{schedule}]")
        self.schedule = schedule
        self.ticks = 0

    def _tick(self, trace):
        k = min(self.ticks, len(self.schedule) - 1)
        self.ticks += 1
        return STATUS_BY_LETTER[self.schedule[k]]


def build_engine_tree(shape, schedules, counter=None):
    """Build an engine tree from a btref-style shape tuple."""
    if counter is None:
        counter = itertools.count()
    if shape[0] == "leaf":
        return ScriptedLeaf(schedules[shape[1]], name=f"L{shape[1]}")
    cls = ENGINE_KINDS[shape[0]]
    children = [build_engine_tree(child, schedules, counter) for child in shape[1]]
    return cls(name=f"{shape[0]}{next(counter)}", children=children)
