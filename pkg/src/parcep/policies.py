"""Event splitting policies: round-robin, join-the-shortest-queue, least-loaded-server-first."""

from __future__ import annotations

from enum import Enum
from typing import Protocol, Sequence


class PolicyKind(str, Enum):
    RR = "rr"
    JSQ = "jsq"
    LLSF = "llsf"

    def __str__(self) -> str:
        return self.name


# fixed order used to break ties between policies
POLICY_ORDER = (PolicyKind.RR, PolicyKind.JSQ, PolicyKind.LLSF)


class HostLoad(Protocol):
    host_id: int
    queue_len: int
    mem_load: int


class SplittingPolicy:
    """A policy plus its dispatch state (the round-robin cursor).

    The cursor lives here, in the splitter, never on the hosts.
    """

    def __init__(self, kind: PolicyKind | str, m: int = 1):
        self.kind = PolicyKind(kind.lower() if isinstance(kind, str) else kind)
        if m < 1:
            raise ValueError("m must be >= 1")
        self.m = m
        self.rr_cursor = 0

    def __repr__(self) -> str:
        return f"SplittingPolicy({self.kind.name}, m={self.m}, rr_cursor={self.rr_cursor})"

    def rank(self, hosts: Sequence[HostLoad]) -> list[int]:
        """Rank hosts best-first and, for RR, advance the cursor."""
        ranking = rank_hosts(self, hosts)
        if self.kind is PolicyKind.RR:
            self.rr_cursor = (self.rr_cursor + 1) % self.m
        return ranking

    def first_choice(self, hosts: Sequence[HostLoad]) -> int:
        """Best host without building the full ranking (hot path)."""
        if self.kind is PolicyKind.RR:
            h = self.rr_cursor
            self.rr_cursor = (h + 1) % self.m
            return h
        best = hosts[0]
        if self.kind is PolicyKind.JSQ:
            for h in hosts:
                if h.queue_len < best.queue_len:
                    best = h
        else:
            for h in hosts:
                if h.mem_load < best.mem_load:
                    best = h
        return best.host_id


def rank_hosts(policy: SplittingPolicy, hosts: Sequence[HostLoad]) -> list[int]:
    """Permutation of host ids, best first. Ties go to the lowest host id.

    Does not move the RR cursor; see :meth:`SplittingPolicy.rank`.
    """
    if not hosts:
        raise ValueError("no hosts to rank")
    if len(hosts) != policy.m:
        raise ValueError(f"policy built for m={policy.m}, got {len(hosts)} hosts")
    ids = [h.host_id for h in hosts]
    if policy.kind is PolicyKind.RR:
        c = policy.rr_cursor
        return ids[c:] + ids[:c]
    if policy.kind is PolicyKind.JSQ:
        return sorted(ids, key=lambda i: (hosts[i].queue_len, i))
    return sorted(ids, key=lambda i: (hosts[i].mem_load, i))


def fallback_order(policy: SplittingPolicy, hosts: Sequence[HostLoad], first: int) -> list[int]:
    """Hosts to try, in order, when ``first`` is full.

    RR continues the rotation after ``first``; JSQ/LLSF use their ranking.
    """
    ids = [h.host_id for h in hosts]
    if policy.kind is PolicyKind.RR:
        return ids[first + 1:] + ids[:first]
    return [i for i in rank_hosts(policy, hosts) if i != first]
