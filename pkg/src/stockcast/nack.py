"""NACK-reduction request waves.

For the message acknowledged by token ``t`` (sent from ring position ``r``),
the ring is split into ``k_p`` sets.  Members of set ``i`` may ask for a
retransmission once they have seen token ``t + i``; everybody else listens for
the multicast repair and cancels their own pending request when it shows up.
"""
from __future__ import annotations

from .core import AckMessage, SourceMessage


def nack_sets(r: int, m: int, k_p: int) -> list[list[int]]:
    if not 1 <= k_p <= m:
        raise ValueError(f"k_p must be in [1, m]; got k_p={k_p}, m={m}")
    return [
        [(r + i + 1 + j * k_p) % m for j in range((m - i - 1) // k_p + 1)]
        for i in range(k_p)
    ]


def wave_of(position: int, r: int, m: int, k_p: int) -> int:
    """Index of the set containing ``position`` (closed form of ``nack_sets``)."""
    offset = (position - r - 1) % m
    return offset % k_p


def may_request(self_pos: int, missing_token: int, sender_of_t: int, current_token: int,
                m: int, k_p: int) -> bool:
    if current_token < missing_token:
        raise ValueError("current token precedes the missing one")
    return current_token >= missing_token + wave_of(self_pos, sender_of_t, m, k_p)


def recovered_keys(retransmission) -> set:
    """Pending-request keys a retransmission satisfies.

    Keys are token numbers for acknowledgements and (source, seq) labels for
    source messages.  Bundles (lists/tuples of messages) are flattened.
    """
    if isinstance(retransmission, AckMessage):
        return {retransmission.token_num}
    if isinstance(retransmission, SourceMessage):
        return {retransmission.label}
    if isinstance(retransmission, (list, tuple)):
        keys: set = set()
        for item in retransmission:
            keys |= recovered_keys(item)
        return keys
    return {retransmission}


def suppress_on_overheard(pending, retransmission):
    """Drop every pending request the overheard retransmission satisfies."""
    hit = recovered_keys(retransmission)
    if isinstance(pending, dict):
        return {k: v for k, v in pending.items() if k not in hit}
    return type(pending)(k for k in pending if k not in hit)
