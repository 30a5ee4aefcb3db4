"""Per-frame learning-rate and resolution schedules.

Both schedules are functions of a frame's own age, so a frame that arrives
late starts from the initial learning rate and the coarsest resolution just
like the first one did.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidArgument

WALL = "wall"
SAMPLED = "sampled"


@dataclass(frozen=True)
class FrameSchedule:
    lr_init: float = 0.1
    lr_final: float = 1e-3
    lr_decay_span: int = 2000
    res_start_divisor: int = 4
    res_stage_len: int = 150
    age_mode: str = SAMPLED

    def __post_init__(self):
        if not self.lr_init >= self.lr_final > 0:
            raise InvalidArgument("need lr_init >= lr_final > 0")
        if self.lr_decay_span < 1:
            raise InvalidArgument("lr_decay_span must be >= 1")
        if self.res_start_divisor not in (1, 2, 4, 8):
            raise InvalidArgument("res_start_divisor must be one of 1, 2, 4, 8")
        if self.res_stage_len < 1:
            raise InvalidArgument("res_stage_len must be >= 1")
        if self.age_mode not in (WALL, SAMPLED):
            raise InvalidArgument(f"unknown age mode {self.age_mode!r}")


def lr_at(age: float, s: FrameSchedule) -> float:
    if age < 0:
        raise InvalidArgument("age must be non-negative")
    if age == 0:
        return s.lr_init
    if age >= s.lr_decay_span:
        return s.lr_final
    return s.lr_init * (s.lr_final / s.lr_init) ** (age / s.lr_decay_span)


def resolution_at(age: int, s: FrameSchedule) -> int:
    if age < 0:
        raise InvalidArgument("age must be non-negative")
    stage = int(age) // s.res_stage_len
    if stage >= 3:
        return 1
    return max(1, s.res_start_divisor >> stage)
