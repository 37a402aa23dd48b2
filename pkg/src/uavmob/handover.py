"""Per-UE connection state machine: handover, RLF and re-establishment."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

from .anr import Nrt, NeighbourRelation
from .rrm import HANDOVER_TRIGGERS, INTER_RAT, EventKind, MobilityEvent, ReportedCell

_EPS = 1e-9


class HoOutcome(str, enum.Enum):
    SUCCESS = "Success"
    FAILURE_CONFUSION = "FailureConfusion"
    FAILURE_BLOCK_LISTED = "FailureBlockListed"
    FAILURE_NO_NRT_ENTRY = "FailureNoNrtEntry"
    CANCELLED = "Cancelled"


class DropCause(str, enum.Enum):
    RLF = "rlf"
    CONFUSION = "confusion"
    DECODE_FAIL = "decode_fail"


class InvalidTransition(RuntimeError):
    pass


@dataclass(frozen=True)
class AdaptiveA3Policy:
    """A3 offset shrinking linearly with altitude, never below ``floor_db``."""

    base_offset_db: float = 3.0
    slope_db_per_100m: float = 1.5
    floor_db: float = 0.5

    def __post_init__(self):
        if self.floor_db > self.base_offset_db:
            raise ValueError("floor_db must not exceed base_offset_db")

    def offset(self, altitude_m: float) -> float:
        return max(self.floor_db, self.base_offset_db - self.slope_db_per_100m * altitude_m / 100.0)


@dataclass(frozen=True)
class HoConfig:
    prep_delay_s: float = 0.05
    exec_delay_s: float = 0.03
    inter_rat_exec_factor: float = 3.0
    t_pingpong_s: float = 2.0
    adaptive_a3: Optional[AdaptiveA3Policy] = None

    def __post_init__(self):
        if self.prep_delay_s < 0 or self.exec_delay_s < 0:
            raise ValueError("handover delays must be >= 0")


@dataclass(frozen=True)
class RlfConfig:
    q_out_db: float = -6.0
    t_rlf_s: float = 0.5
    t_reest_s: float = 1.5

    def __post_init__(self):
        if self.t_rlf_s <= 0 or self.t_reest_s <= 0:
            raise ValueError("t_rlf_s and t_reest_s must be > 0")


def effective_a3_offset(ue_kind: str, altitude_m: float, base_offset_db: float,
                        policy: Optional[AdaptiveA3Policy] = None) -> float:
    if ue_kind != "UAV" or policy is None:
        return base_offset_db
    return policy.offset(altitude_m)


@dataclass(frozen=True)
class HoAttempt:
    ue_id: str
    time_s: float
    source_ecgi: int
    reported_pci: int
    prepared_ecgi: Optional[int]
    true_ecgi: Optional[int]
    outcome: HoOutcome
    interruption_s: float = 0.0
    event: str = "A3"
    ue_kind: str = "UAV"
    target_ecgi: Optional[int] = None  # serving cell after a Success


@dataclass(frozen=True)
class Disconnect:
    ue_id: str
    ue_kind: str
    cause: DropCause
    cell_ecgi: int
    since_s: float
    dropped_at_s: float
    reattached_at_s: Optional[float] = None
    reattach_ecgi: Optional[int] = None

    @property
    def interruption_s(self) -> Optional[float]:
        """From the onset of the failure (``since``) to re-establishment."""
        return None if self.reattached_at_s is None else self.reattached_at_s - self.since_s


# states -------------------------------------------------------------------


@dataclass(frozen=True)
class Connected:
    serving: int


@dataclass(frozen=True)
class HoPrep:
    serving: int
    target: int
    started: float
    attempt: HoAttempt
    exec_delay_s: float


@dataclass(frozen=True)
class HoExec:
    serving: int
    target: int
    started: float
    attempt: HoAttempt
    exec_delay_s: float


@dataclass(frozen=True)
class Rlf:
    serving: int
    since: float
    declared: float
    drop: Optional[Disconnect] = None


@dataclass(frozen=True)
class Reestablishing:
    since: float
    started: float
    previous: Optional[int]
    drop: Optional[Disconnect] = None  # None for the initial cell search


ConnState = Union[Connected, HoPrep, HoExec, Rlf, Reestablishing]


def lookup_relation(nrt: Nrt, table: str, cell: ReportedCell, pci_fallback: bool = True) -> Optional[NeighbourRelation]:
    """Resolve a reported neighbour to a relation: by global id when the UE
    decoded one, by PCI otherwise (unless ``pci_fallback`` is off)."""
    if cell.ecgi is not None:
        return nrt.table(table).get(cell.ecgi)
    return nrt.by_pci(table, cell.pci) if pci_fallback else None


@dataclass
class TickResult:
    attempts: list
    drops: list
    reattach_due: bool = False
    serving_changed: bool = False


class Connection:
    """Connection state of one UE, advanced by the simulation core."""

    def __init__(self, ue_id: str, ue_kind: str, ho: HoConfig = HoConfig(), rlf: RlfConfig = RlfConfig()):
        self.ue_id = ue_id
        self.ue_kind = ue_kind
        self.ho = ho
        self.rlf = rlf
        self.state: ConnState = Reestablishing(since=0.0, started=-math.inf, previous=None)
        self.low_sinr_since: Optional[float] = None

    @property
    def serving(self) -> Optional[int]:
        return getattr(self.state, "serving", None)

    @property
    def is_connected(self) -> bool:
        return isinstance(self.state, (Connected, HoPrep, HoExec))

    def on_mobility_event(self, event: MobilityEvent, nrt: Nrt, table: str, now: float,
                          pci_fallback: bool = True) -> Optional[HoAttempt]:
        """React to one fired event. Returns an attempt record when the
        reaction ends an attempt immediately (failure or cancellation)."""
        st = self.state
        if isinstance(st, (Rlf, Reestablishing)):
            raise InvalidTransition(f"{event.kind} for {self.ue_id} while {type(st).__name__}")
        if isinstance(st, HoExec):
            return None
        kind = EventKind(event.kind)
        if kind is EventKind.A1:
            if isinstance(st, HoPrep):
                self.state = Connected(st.serving)
                return replace(st.attempt, outcome=HoOutcome.CANCELLED)
            return None
        if kind not in HANDOVER_TRIGGERS or event.target is None or isinstance(st, HoPrep):
            return None
        target = event.target
        rel = lookup_relation(nrt, table, target, pci_fallback)
        base = HoAttempt(self.ue_id, now, st.serving, target.pci, None, target.true_ecgi,
                         HoOutcome.FAILURE_NO_NRT_ENTRY, event=kind.value, ue_kind=self.ue_kind)
        if rel is None:
            return base
        if rel.block_listed:
            return replace(base, prepared_ecgi=rel.ecgi, outcome=HoOutcome.FAILURE_BLOCK_LISTED)
        factor = self.ho.inter_rat_exec_factor if kind in INTER_RAT else 1.0
        pending = replace(base, prepared_ecgi=rel.ecgi, outcome=HoOutcome.SUCCESS)
        self.state = HoPrep(st.serving, rel.ecgi, now, pending, self.ho.exec_delay_s * factor)
        return None

    def _drop(self, now: float, since: float, cause: DropCause, cell: int) -> Disconnect:
        d = Disconnect(self.ue_id, self.ue_kind, cause, cell, since, now)
        self.state = Reestablishing(since=since, started=now, previous=cell, drop=d)
        self.low_sinr_since = None
        return d

    def force_drop(self, now: float, cause: DropCause) -> TickResult:
        """Drop from outside the radio link (e.g. a failed global-id decode).
        An attempt in flight is cancelled."""
        st = self.state
        res = TickResult([], [])
        if not self.is_connected:
            return res
        if isinstance(st, (HoPrep, HoExec)):
            res.attempts.append(replace(st.attempt, outcome=HoOutcome.CANCELLED))
        res.drops.append(self._drop(now, now, cause, st.serving))
        return res

    def tick(self, now: float, sinr_db: Optional[float]) -> TickResult:
        """Advance timers. ``sinr_db`` is the serving SINR this tick."""
        res = TickResult([], [])
        st = self.state
        if isinstance(st, HoPrep) and now - st.started >= self.ho.prep_delay_s - _EPS:
            if st.attempt.prepared_ecgi != st.attempt.true_ecgi:
                res.attempts.append(replace(st.attempt, outcome=HoOutcome.FAILURE_CONFUSION))
                res.drops.append(self._drop(now, now, DropCause.CONFUSION, st.serving))
                return res
            self.state = st = HoExec(st.serving, st.target, now, st.attempt, st.exec_delay_s)
        if isinstance(st, HoExec):
            if now - st.started >= st.exec_delay_s - _EPS:
                res.attempts.append(replace(st.attempt, interruption_s=st.exec_delay_s, target_ecgi=st.target))
                self.state = Connected(st.target)
                self.low_sinr_since = None
                res.serving_changed = True
            return res
        if isinstance(st, Rlf):
            self.state = Reestablishing(st.since, st.declared, st.serving, st.drop)
            return res
        if isinstance(st, Reestablishing):
            res.reattach_due = now - st.started >= self.rlf.t_reest_s - _EPS
            return res
        # Connected or HoPrep: radio link monitoring
        if sinr_db is not None and sinr_db < self.rlf.q_out_db:
            if self.low_sinr_since is None:
                self.low_sinr_since = now
            if now - self.low_sinr_since >= self.rlf.t_rlf_s - _EPS:
                if isinstance(st, HoPrep):
                    res.attempts.append(replace(st.attempt, outcome=HoOutcome.CANCELLED))
                d = Disconnect(self.ue_id, self.ue_kind, DropCause.RLF, st.serving, self.low_sinr_since, now)
                self.state = Rlf(st.serving, self.low_sinr_since, now, d)
                self.low_sinr_since = None
                res.drops.append(d)
        else:
            self.low_sinr_since = None
        return res

    def reattach(self, ecgi: int, now: float) -> Optional[Disconnect]:
        """Complete re-establishment (or the initial search) on ``ecgi``."""
        st = self.state
        if not isinstance(st, Reestablishing):
            raise InvalidTransition(f"reattach for {self.ue_id} while {type(st).__name__}")
        self.state = Connected(ecgi)
        self.low_sinr_since = None
        if st.drop is None:
            return None
        return replace(st.drop, reattached_at_s=now, reattach_ecgi=ecgi)


def detect_pingpong(history: Sequence[HoAttempt], t_pingpong: float) -> int:
    """Successful handovers straight back to the previous cell within
    ``t_pingpong`` seconds of the handover that left it."""
    count = 0
    last: dict = {}
    for h in history:
        if h.outcome is not HoOutcome.SUCCESS and h.outcome != HoOutcome.SUCCESS.value:
            continue
        target = h.target_ecgi if h.target_ecgi is not None else h.prepared_ecgi
        prev = last.get(h.ue_id)
        if prev is not None:
            p_src, p_dst, p_time = prev
            if h.source_ecgi == p_dst and target == p_src and h.time_s - p_time <= t_pingpong + _EPS:
                count += 1
        last[h.ue_id] = (h.source_ecgi, target, h.time_s)
    return count
