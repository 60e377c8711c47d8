"""Modeled hardware retired-instruction counter.

Three architecture profiles:
  EXACT       - ideal counter, counts exactly the admitted retires.
  PPC_MPC7441 - overcounts by one on each admitted privilege-mode switch;
                deterministic, so subtracting the switch count recovers the
                exact value.
  X86_FLAKY   - adds seed-dependent spurious increments; deliberately not
                correctable, to demonstrate why replay needs a compensable
                counter.
"""

import random
from dataclasses import dataclass

PROFILE_EXACT = "exact"
PROFILE_PPC = "ppc_mpc7441"
PROFILE_X86_FLAKY = "x86_flaky"
PROFILES = (PROFILE_EXACT, PROFILE_PPC, PROFILE_X86_FLAKY)

# Invented spurious-increment rates for the flaky profile; the point is
# non-reproducibility, not fidelity to any real part.
FLAKY_RETIRE_P = 1.0 / 256.0
FLAKY_SWITCH_P = 0.5


class UnusableCounter(Exception):
    """Raised when a corrected count is requested from a profile whose
    miscounts cannot be compensated."""


class PmiTargetInPast(ValueError):
    """Arming a PMI below the current corrected count is a caller bug."""


@dataclass
class CounterConfig:
    profile: str = PROFILE_EXACT
    count_user: bool = True
    count_supervisor: bool = True
    marked_only: bool = False
    seed: int = 0  # only meaningful for X86_FLAKY

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError("unknown counter profile: %r" % (self.profile,))
        if not (self.count_user or self.count_supervisor):
            raise ValueError("counter must count at least one privilege mode")

    def to_dict(self):
        return {
            "profile": self.profile,
            "count_user": self.count_user,
            "count_supervisor": self.count_supervisor,
            "marked_only": self.marked_only,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(profile=d["profile"], count_user=d["count_user"],
                   count_supervisor=d["count_supervisor"],
                   marked_only=d["marked_only"], seed=d.get("seed", 0))


class Counter:
    """Counter state plus its transition rules.

    `raw` is what the modeled hardware reports; `mode_switch_snapshot` is
    the number of admitted mode switches observed while counting, the
    subtrahend for PPC compensation.
    """

    __slots__ = ("config", "raw", "mode_switch_snapshot", "pmi_target",
                 "fired", "count_user", "count_supervisor", "marked_only",
                 "is_ppc", "is_flaky", "_rng")

    def __init__(self, config):
        self.config = config
        self.raw = 0
        self.mode_switch_snapshot = 0
        self.pmi_target = None
        self.fired = False
        # cached flags, read on the per-instruction hot path
        self.count_user = config.count_user
        self.count_supervisor = config.count_supervisor
        self.marked_only = config.marked_only
        self.is_ppc = config.profile == PROFILE_PPC
        self.is_flaky = config.profile == PROFILE_X86_FLAKY
        self._rng = random.Random(config.seed) if self.is_flaky else None

    def _admits(self, is_user, mark):
        if is_user:
            if not self.count_user:
                return False
        elif not self.count_supervisor:
            return False
        return (not self.marked_only) or bool(mark)

    def retire(self, is_user, mark):
        """Account one retired instruction executed in the given mode."""
        if not self._admits(is_user, mark):
            return
        self.raw += 1
        if self.is_flaky:
            if self._rng.random() < FLAKY_RETIRE_P:
                self.raw += 1
            return
        t = self.pmi_target
        if t is not None:
            corrected = self.raw - self.mode_switch_snapshot if self.is_ppc else self.raw
            if corrected == t:
                self.fired = True

    def mode_switch(self, from_user, mark):
        """Account one user<->supervisor transition.

        The switch is admitted (and thus overcounted plus snapshotted on
        PPC) iff the filter would have admitted a retire in the outgoing
        mode; keeping raw and snapshot gated identically is what makes the
        compensation exact under partial-mode filters.
        """
        if not self._admits(from_user, mark):
            return
        if self.is_ppc:
            self.raw += 1
            self.mode_switch_snapshot += 1
        elif self.is_flaky:
            if self._rng.random() < FLAKY_SWITCH_P:
                self.raw += 1

    def corrected(self):
        if self.is_flaky:
            raise UnusableCounter(
                "x86_flaky miscounts are not deterministic; no corrected value exists")
        if self.is_ppc:
            return self.raw - self.mode_switch_snapshot
        return self.raw

    def arm_pmi(self, target):
        cur = self.corrected()
        if target < cur:
            raise PmiTargetInPast(
                "PMI target %d is below current corrected count %d" % (target, cur))
        self.pmi_target = target
        # arming at the current value fires before the next retire
        if target == cur:
            self.fired = True

    def pmi_fired(self):
        return self.fired

    def clear_pmi(self):
        self.pmi_target = None
        self.fired = False
