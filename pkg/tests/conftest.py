"""Shared builders for compact in-test datasets."""

from __future__ import annotations

import pytest

from recharness.datamodel import Dataset, InteractionEvent, ItemRecord, UserRecord


def build_dataset(event_rows, item_artists=None, user_meta=None) -> Dataset:
    """Assemble a Dataset from terse tuples.

    ``event_rows``: (user, item, timestamp, playcount) tuples.
    ``item_artists``: optional {item: artist}; items default to artist "ar0".
    ``user_meta``: optional {user: dict of UserRecord field overrides}.
    Catalogs are completed automatically from the events.
    """
    events = [
        InteractionEvent(user_id=u, item_id=i, timestamp=ts, playcount=pc)
        for (u, i, ts, pc) in event_rows
    ]
    item_artists = dict(item_artists or {})
    for e in events:
        item_artists.setdefault(e.item_id, "ar0")
    items = [
        ItemRecord(item_id=item, artist_id=artist, track_name=f"track {item}")
        for item, artist in item_artists.items()
    ]
    user_meta = dict(user_meta or {})
    user_ids = {e.user_id for e in events} | set(user_meta)
    users = []
    for user_id in sorted(user_ids):
        overrides = user_meta.get(user_id, {})
        total = sum(e.playcount for e in events if e.user_id == user_id)
        users.append(UserRecord(user_id=user_id, total_playcount=total, **overrides))
    return Dataset.from_parts(events, items, users)


@pytest.fixture
def toy_dataset() -> Dataset:
    return build_dataset(
        [
            ("u1", "a", 10, 1),
            ("u1", "b", 20, 2),
            ("u2", "a", 5, 1),
            ("u2", "c", 15, 3),
            ("u3", "b", 8, 1),
        ],
        item_artists={"a": "ar1", "b": "ar1", "c": "ar2"},
        user_meta={
            "u1": {"country": "UK", "gender": "f", "age": 30},
            "u2": {"country": "JP", "gender": "m"},
            "u3": {"country": "UK"},
        },
    )
