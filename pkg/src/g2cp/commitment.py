"""Social commitments created by performatives, and their resolution from
audit evidence.

The ledger is driven only by (audit entry, message, execution outcome)
triples, so replaying the audit log rebuilds it exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .audit import AuditEntry, AuditLog, Outcome, ReplayReport
from .errors import WrongState
from .protocol import Error, Message, Performative, Result


class CState(str, Enum):
    PENDING = "Pending"
    DISCHARGED = "Discharged"
    VIOLATED = "Violated"
    CANCELLED = "Cancelled"


class Kind(str, Enum):
    EXECUTE_AND_RETURN = "ExecuteAndReturn"
    GROUNDED = "Grounded"
    TRUTHFUL_RESPONSE = "TruthfulResponse"
    EVALUATE_AND_RESPOND = "EvaluateAndRespond"
    VERIFIED = "Verified"
    VIOLATED = "Violated"
    APPLY_IF_VALID = "ApplyIfValid"


# performative -> (condition, debtor is the sender?)
RULES: dict[Performative, tuple[Kind, bool]] = {
    Performative.REQUEST: (Kind.EXECUTE_AND_RETURN, False),
    Performative.INFORM: (Kind.GROUNDED, True),
    Performative.QUERY: (Kind.TRUTHFUL_RESPONSE, False),
    Performative.PROPOSE: (Kind.EVALUATE_AND_RESPOND, False),
    Performative.CONFIRM: (Kind.VERIFIED, True),
    Performative.REJECT: (Kind.VIOLATED, True),
    Performative.UPDATE: (Kind.APPLY_IF_VALID, False),
}


@dataclass
class Commitment:
    id: str
    debtor: str
    creditor: str
    kind: Kind
    conversation: str
    created_seq: int
    created_by: str  # envelope digest of the creating message
    state: CState = CState.PENDING
    resolved_seq: int | None = None
    note: str = ""
    # facts about the creating entry that later evidence is judged against
    executed_ok: bool = False
    expect_nonempty: bool | None = None

    def record(self) -> dict:
        return {
            "id": self.id, "debtor": self.debtor, "creditor": self.creditor, "kind": self.kind.value,
            "conversation": self.conversation, "created_seq": self.created_seq,
            "created_by": self.created_by, "state": self.state.value,
            "resolved_seq": self.resolved_seq, "note": self.note,
        }


def commitments_of(message: Message, seq: int = 0, digest: str = "") -> list[Commitment]:
    """The single commitment a message creates, per the performative table."""
    kind, sender_owes = RULES[message.performative]
    debtor, creditor = ((message.sender, message.receiver) if sender_owes
                        else (message.receiver, message.sender))
    return [Commitment(f"{seq}:{kind.value}", debtor, creditor, kind,
                       message.context.conversation_id, seq, digest)]


def _nonempty(outcome: Outcome) -> bool | None:
    if isinstance(outcome.payload, Result):
        return not outcome.payload.is_empty()
    return None


class CommitmentLedger:
    def __init__(self):
        self.commitments: dict[str, Commitment] = {}
        self.unusable: set[int] = set()  # entries whose results a REJECT disowned
        self._senders: dict[str, list[tuple[int, str, str]]] = {}  # conv -> (seq, sender, receiver)
        self._outcomes: dict[int, Outcome] = {}

    # -- queries

    def __iter__(self):
        return iter(self.commitments.values())

    def __len__(self) -> int:
        return len(self.commitments)

    def pending(self, agent: str | None = None) -> list[Commitment]:
        return [c for c in self if c.state is CState.PENDING and (agent is None or c.debtor == agent)]

    def counts(self) -> dict[str, int]:
        out = {s.value: 0 for s in CState}
        for c in self:
            out[c.state.value] += 1
        return out

    def dump(self) -> list[dict]:
        return [c.record() for c in self]

    def dump_text(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.dump())

    def digest(self) -> str:
        return hashlib.sha256(self.dump_text().encode()).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, CommitmentLedger) and self.dump() == other.dump()

    __hash__ = None

    # -- transitions

    def resolve(self, cid: str, state: CState, seq: int | None, note: str = "") -> CState:
        c = self.commitments[cid]
        if c.state is not CState.PENDING:
            raise WrongState(f"commitment {cid} is already {c.state.value}")
        if state is CState.PENDING:
            raise WrongState("cannot resolve to Pending")
        c.state, c.resolved_seq, c.note = state, seq, note
        return state

    def discharge(self, cid: str, entry: AuditEntry, message: Message, outcome: Outcome) -> CState:
        """Judge one pending commitment against a piece of evidence.

        Returns the new state, or Pending when the evidence is irrelevant.
        """
        c = self.commitments[cid]
        if c.state is not CState.PENDING:
            raise WrongState(f"commitment {cid} is already {c.state.value}")
        verdict = self._judge(c, entry, message, outcome)
        if verdict is None:
            return CState.PENDING
        state, note = verdict
        return self.resolve(cid, state, entry.seq, note)

    def _judge(self, c: Commitment, entry: AuditEntry, m: Message, o: Outcome):
        if (m.context.conversation_id != c.conversation or entry.seq <= c.created_seq
                or m.sender != c.debtor or m.receiver != c.creditor):
            return None
        perf = m.performative
        reply = perf in (Performative.INFORM, Performative.CONFIRM) and isinstance(m.operation, Result)
        if perf is Performative.REJECT:
            if c.kind is Kind.APPLY_IF_VALID:
                return CState.DISCHARGED, f"rejected with violations at {entry.seq}"
            if c.kind is Kind.EVALUATE_AND_RESPOND:
                return CState.DISCHARGED, f"answered by REJECT at {entry.seq}"
            if c.kind in (Kind.EXECUTE_AND_RETURN, Kind.TRUTHFUL_RESPONSE):
                return CState.CANCELLED, f"operation refused at {entry.seq}"
            return None
        if not reply:
            return None
        if c.kind is Kind.EVALUATE_AND_RESPOND and perf is Performative.CONFIRM:
            return CState.DISCHARGED, f"answered by CONFIRM at {entry.seq}"
        if o.problems:
            return None  # an inconsistent reply is no evidence either way
        if c.kind is Kind.EXECUTE_AND_RETURN:
            return CState.DISCHARGED, f"result returned at {entry.seq}"
        if c.kind is Kind.TRUTHFUL_RESPONSE:
            answered = not m.operation.is_empty()
            if c.expect_nonempty is None or answered == c.expect_nonempty:
                return CState.DISCHARGED, f"truthful answer at {entry.seq}"
            return CState.VIOLATED, f"answer at {entry.seq} contradicts replay"
        return None

    def observe(self, entry: AuditEntry, message: Message | None, outcome: Outcome) -> list[Commitment]:
        """Fold one audit entry into the ledger; returns the commitments it created."""
        self._outcomes[entry.seq] = outcome
        if message is None:
            return []
        conv = message.context.conversation_id
        answered = False  # one reply settles at most one request
        for c in list(self.commitments.values()):
            if c.state is not CState.PENDING or c.conversation != conv:
                continue
            is_request = c.kind in (Kind.EXECUTE_AND_RETURN, Kind.TRUTHFUL_RESPONSE)
            if is_request and answered:
                continue
            if self.discharge(c.id, entry, message, outcome) is not CState.PENDING and is_request:
                answered = True

        created = commitments_of(message, entry.seq, _envelope_digest(entry))
        for c in created:
            self.commitments[c.id] = c
            self._settle_new(c, entry, message, outcome)
        self._senders.setdefault(conv, []).append((entry.seq, message.sender, message.receiver))
        return created

    def _settle_new(self, c: Commitment, entry: AuditEntry, m: Message, o: Outcome) -> None:
        """Commitments whose evidence is the creating entry itself."""
        if c.kind in (Kind.GROUNDED, Kind.VERIFIED):
            if not isinstance(m.operation, Result):
                self.resolve(c.id, CState.DISCHARGED, entry.seq, "error report carries no claim")
            elif o.problems:
                self.resolve(c.id, CState.VIOLATED, entry.seq, "; ".join(o.problems))
            else:
                self.resolve(c.id, CState.DISCHARGED, entry.seq, "result replays")
        elif c.kind is Kind.APPLY_IF_VALID:
            if o.applied:
                self.resolve(c.id, CState.DISCHARGED, entry.seq, f"applied as version {entry.version_after}")
        elif c.kind is Kind.VIOLATED:
            target = self._last_from(c.conversation, c.creditor, c.debtor, entry.seq)
            if target is None:
                self.resolve(c.id, CState.VIOLATED, entry.seq, "nothing to reject")
                return
            self.unusable.add(target)
            prior = self._outcomes[target]
            if isinstance(prior.payload, Error) or prior.problems:
                self.resolve(c.id, CState.DISCHARGED, entry.seq, f"violation at {target} confirmed")
            else:
                self.resolve(c.id, CState.VIOLATED, entry.seq, f"entry {target} shows no violation")
        elif c.kind in (Kind.EXECUTE_AND_RETURN, Kind.TRUTHFUL_RESPONSE):
            c.executed_ok = isinstance(o.payload, Result)
            c.expect_nonempty = _nonempty(o)

    def _last_from(self, conv: str, sender: str, receiver: str, before: int) -> int | None:
        for seq, s, r in reversed(self._senders.get(conv, [])):
            if seq < before and s == sender and r == receiver:
                return seq
        return None

    def close(self, conversation: str | None = None) -> None:
        """End of the scenario horizon: settle or violate whatever is pending.

        A request whose receiver executed it (logged at delivery) and then
        acted on it in the conversation counts as discharged even when the
        answer went to a third agent.
        """
        for c in list(self.commitments.values()):
            if c.state is not CState.PENDING or (conversation and c.conversation != conversation):
                continue
            if c.kind is Kind.EXECUTE_AND_RETURN and c.executed_ok and c.created_seq not in self.unusable:
                later = [seq for seq, s, _ in self._senders.get(c.conversation, [])
                         if s == c.debtor and seq > c.created_seq]
                if later:
                    self.resolve(c.id, CState.DISCHARGED, c.created_seq,
                                 f"execution logged at {c.created_seq}, acted on at {later[0]}")
                    continue
            self.resolve(c.id, CState.VIOLATED, None, "pending at horizon")


def _envelope_digest(entry: AuditEntry) -> str:
    return hashlib.sha256(entry.envelope.encode()).hexdigest()


def rebuild(log: AuditLog | Iterable[AuditEntry], report: ReplayReport, close: bool = True) -> CommitmentLedger:
    """Reconstruct the ledger purely from the log and its replay."""
    ledger = CommitmentLedger()
    for entry in log:
        ledger.observe(entry, report.messages.get(entry.seq), report.outcomes.get(entry.seq, Outcome()))
    if close:
        ledger.close()
    return ledger
