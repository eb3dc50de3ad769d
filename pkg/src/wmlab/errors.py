"""Exception types raised across the package.

Every error carries a short machine-readable ``code`` so the CLI can emit
it as JSON without string matching.
"""

from __future__ import annotations


class WmlabError(Exception):
    code = "wmlab_error"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict:
        out = {"error": self.code, "message": str(self)}
        out.update({k: _jsonable(v) for k, v in self.details.items()})
        return out


def _jsonable(v):
    if isinstance(v, (str, int, float, bool)) or v is None:
        return v
    try:
        return float(v)
    except (TypeError, ValueError):
        return str(v)


class NearZeroVector(WmlabError):
    code = "near_zero_vector"


class AntipodalPair(WmlabError):
    code = "antipodal_pair"


class UnresolvedCurve(WmlabError):
    code = "unresolved_curve"


class InvalidState(WmlabError):
    code = "invalid_state"


class BlowUp(WmlabError):
    code = "blow_up"

    def __init__(self, message: str, time: float, **details):
        super().__init__(message, time=time, **details)
        self.time = time


class ProfileTooWeak(WmlabError):
    code = "profile_too_weak"


class DegenerateProbe(WmlabError):
    code = "degenerate_probe"


class GramianIllConditioned(WmlabError):
    code = "gramian_ill_conditioned"


class TargetUnreachableZeroMode(WmlabError):
    code = "target_unreachable_zero_mode"


class NoContraction(WmlabError):
    code = "no_contraction"


class ReplayMismatch(WmlabError):
    code = "replay_mismatch"


class StallDetected(WmlabError):
    code = "stall_detected"


class ChainHopFailed(WmlabError):
    code = "chain_hop_failed"

    def __init__(self, message: str, segment: int, **details):
        super().__init__(message, segment=segment, **details)
        self.segment = segment


class WindingMismatch(ChainHopFailed):
    """Endpoints lie in different homotopy classes (k = 1)."""

    code = "winding_mismatch"


class EnergyAboveThreshold(WmlabError):
    code = "energy_above_threshold"


class NonPositiveEnergy(WmlabError):
    code = "non_positive_energy"


class WindowNotCovered(WmlabError):
    code = "window_not_covered"


class ConfigError(WmlabError):
    code = "config_error"

    def __init__(self, message: str, field: str, **details):
        super().__init__(message, field=field, **details)
        self.field = field
