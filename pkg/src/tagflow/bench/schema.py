"""Field-level layout of generated ad events.

``key`` carries the ad id (campaign id after the static join). ``value`` packs a
user id and the event type as ``user_id * 3 + type``, so ``value % 3`` is the
type and ``value % world_size`` still spreads events across ranks.
"""
from __future__ import annotations

from ..core import Event

EVENT_TYPES = ("view", "click", "purchase")
VIEW, CLICK, PURCHASE = range(3)


def event_type(e: Event) -> int:
    return e.value % 3


def type_code(name: str) -> int:
    try:
        return EVENT_TYPES.index(name)
    except ValueError:
        raise ValueError(f"unknown event type {name!r}; expected one of {EVENT_TYPES}") from None


def ysb_campaign_table(num_campaigns: int = 100, ads_per_campaign: int = 10) -> dict[int, int]:
    """Ad id -> campaign id; ads spread evenly, ``ads_per_campaign`` per campaign."""
    return {ad: ad // ads_per_campaign for ad in range(num_campaigns * ads_per_campaign)}
