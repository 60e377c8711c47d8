"""Deterministic execution-replay virtual machine.

Record a guest run — every interrupt and device input stamped with the
corrected retired-instruction count — then replay it instruction for
instruction, with a time-travel debugger that inspects tasks inside the
guest during replay.
"""

__version__ = "0.1.0"
