"""Dataset schema, TSV loading/saving, and a power-law synthetic generator.

The on-disk format is three UTF-8 tab-separated files with mandatory header
rows and no quoting:

* ``events.tsv``: user_id, item_id, timestamp, playcount
* ``items.tsv``:  item_id, artist_id, album_id, track_name
* ``users.tsv``:  user_id, country, age, gender, total_playcount

Missing optional metadata (country, age, gender, album_id) is encoded as the
empty string. After loading, events are held in canonical order
(user_id, timestamp, item_id) so that every seeded downstream computation is
independent of the input file ordering.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DanglingReference, DuplicateId, InvalidParameter, MalformedRow
from .util import make_rng, sha256_hex

EVENT_COLUMNS = ("user_id", "item_id", "timestamp", "playcount")
ITEM_COLUMNS = ("item_id", "artist_id", "album_id", "track_name")
USER_COLUMNS = ("user_id", "country", "age", "gender", "total_playcount")


@dataclass(frozen=True, slots=True)
class InteractionEvent:
    """One aggregated listening event: *playcount* listens of an item."""

    user_id: str
    item_id: str
    timestamp: int
    playcount: int = 1

    def __post_init__(self):
        if self.playcount < 1:
            raise InvalidParameter(f"playcount must be >= 1, got {self.playcount}")
        if self.timestamp < 0:
            raise InvalidParameter(f"timestamp must be >= 0, got {self.timestamp}")


@dataclass(frozen=True, slots=True)
class ItemRecord:
    item_id: str
    artist_id: str
    album_id: str = ""
    track_name: str = ""

    def __post_init__(self):
        if not self.artist_id:
            raise InvalidParameter(f"item {self.item_id!r} has empty artist_id")


@dataclass(frozen=True, slots=True)
class UserRecord:
    user_id: str
    country: str = ""
    age: int | None = None
    gender: str = ""
    total_playcount: int = 0

    def __post_init__(self):
        if self.total_playcount < 0:
            raise InvalidParameter(
                f"user {self.user_id!r} has negative total_playcount"
            )


@dataclass(frozen=True)
class Dataset:
    """Immutable container of events plus item and user catalogs.

    Events are always stored in canonical (user_id, timestamp, item_id)
    order; construct through :meth:`from_parts` to get validation and
    canonicalization.
    """

    events: tuple[InteractionEvent, ...]
    items: dict[str, ItemRecord] = field(repr=False)
    users: dict[str, UserRecord] = field(repr=False)

    @classmethod
    def from_parts(
        cls,
        events: Iterable[InteractionEvent],
        items: Iterable[ItemRecord],
        users: Iterable[UserRecord],
    ) -> "Dataset":
        item_catalog: dict[str, ItemRecord] = {}
        for record in items:
            if record.item_id in item_catalog:
                raise DuplicateId(f"item {record.item_id!r} appears twice in catalog")
            item_catalog[record.item_id] = record
        user_catalog: dict[str, UserRecord] = {}
        for record in users:
            if record.user_id in user_catalog:
                raise DuplicateId(f"user {record.user_id!r} appears twice in catalog")
            user_catalog[record.user_id] = record

        ordered = tuple(
            sorted(events, key=lambda e: (e.user_id, e.timestamp, e.item_id))
        )
        for event in ordered:
            if event.user_id not in user_catalog:
                raise DanglingReference(
                    f"event references unknown user {event.user_id!r}"
                )
            if event.item_id not in item_catalog:
                raise DanglingReference(
                    f"event references unknown item {event.item_id!r}"
                )
        return cls(events=ordered, items=item_catalog, users=user_catalog)

    def digest(self) -> str:
        """Content hash of the canonical serialization; stable across loads."""
        lines = []
        for e in self.events:
            lines.append(f"E\t{e.user_id}\t{e.item_id}\t{e.timestamp}\t{e.playcount}")
        for item_id in sorted(self.items):
            i = self.items[item_id]
            lines.append(f"I\t{i.item_id}\t{i.artist_id}\t{i.album_id}\t{i.track_name}")
        for user_id in sorted(self.users):
            u = self.users[user_id]
            age = "" if u.age is None else str(u.age)
            lines.append(
                f"U\t{u.user_id}\t{u.country}\t{age}\t{u.gender}\t{u.total_playcount}"
            )
        return sha256_hex("\n".join(lines))


def _read_rows(path: str, columns: Sequence[str]):
    """Yield (line_no, fields) for a headered TSV; validates column count."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header_line = fh.readline()
        if not header_line:
            raise MalformedRow(path, 1, "missing header row")
        header = header_line.rstrip("\r\n").split("\t")
        if header != list(columns):
            raise MalformedRow(
                path, 1, f"expected header {list(columns)}, got {header}"
            )
        for line_no, line in enumerate(fh, start=2):
            stripped = line.rstrip("\r\n")
            if stripped == "":
                continue
            fields = stripped.split("\t")
            if len(fields) != len(columns):
                raise MalformedRow(
                    path,
                    line_no,
                    f"expected {len(columns)} tab-separated fields, got {len(fields)}",
                )
            yield line_no, fields


def _parse_int(path: str, line_no: int, name: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise MalformedRow(path, line_no, f"{name} is not an integer: {raw!r}") from None


def load_dataset(events_path: str, items_path: str, users_path: str) -> Dataset:
    """Load and validate a dataset from its three TSV files.

    Raises MalformedRow with file/line context on parse failures,
    DuplicateId on repeated catalog ids, and DanglingReference when an event
    points at a user or item missing from the catalogs.
    """
    items = []
    for line_no, f in _read_rows(items_path, ITEM_COLUMNS):
        if not f[0]:
            raise MalformedRow(items_path, line_no, "empty item_id")
        if not f[1]:
            raise MalformedRow(items_path, line_no, "empty artist_id")
        items.append(ItemRecord(item_id=f[0], artist_id=f[1], album_id=f[2], track_name=f[3]))

    users = []
    for line_no, f in _read_rows(users_path, USER_COLUMNS):
        if not f[0]:
            raise MalformedRow(users_path, line_no, "empty user_id")
        age = None if f[2] == "" else _parse_int(users_path, line_no, "age", f[2])
        total = _parse_int(users_path, line_no, "total_playcount", f[4])
        if total < 0:
            raise MalformedRow(users_path, line_no, "total_playcount must be >= 0")
        users.append(
            UserRecord(user_id=f[0], country=f[1], age=age, gender=f[3], total_playcount=total)
        )

    events = []
    for line_no, f in _read_rows(events_path, EVENT_COLUMNS):
        timestamp = _parse_int(events_path, line_no, "timestamp", f[2])
        playcount = _parse_int(events_path, line_no, "playcount", f[3])
        if timestamp < 0:
            raise MalformedRow(events_path, line_no, "timestamp must be >= 0")
        if playcount < 1:
            raise MalformedRow(events_path, line_no, "playcount must be >= 1")
        events.append(
            InteractionEvent(user_id=f[0], item_id=f[1], timestamp=timestamp, playcount=playcount)
        )

    return Dataset.from_parts(events, items, users)


def write_events_tsv(path: str, events: Iterable[InteractionEvent]) -> None:
    """Write events in the events.tsv wire format, preserving given order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(EVENT_COLUMNS) + "\n")
        for e in events:
            fh.write(f"{e.user_id}\t{e.item_id}\t{e.timestamp}\t{e.playcount}\n")


def save_dataset(dataset: Dataset, events_path: str, items_path: str, users_path: str) -> None:
    """Write the dataset back out in canonical order (round-trip stable)."""
    for path in (events_path, items_path, users_path):
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
    write_events_tsv(events_path, dataset.events)
    with open(items_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(ITEM_COLUMNS) + "\n")
        for item_id in sorted(dataset.items):
            i = dataset.items[item_id]
            fh.write(f"{i.item_id}\t{i.artist_id}\t{i.album_id}\t{i.track_name}\n")
    with open(users_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(USER_COLUMNS) + "\n")
        for user_id in sorted(dataset.users):
            u = dataset.users[user_id]
            age = "" if u.age is None else str(u.age)
            fh.write(f"{u.user_id}\t{u.country}\t{age}\t{u.gender}\t{u.total_playcount}\n")


def zipf_weights(n_items: int, exponent: float) -> np.ndarray:
    """Normalized Zipf probabilities over ranks 1..n_items."""
    ranks = np.arange(1, n_items + 1, dtype=np.float64)
    weights = ranks ** (-float(exponent))
    return weights / weights.sum()


def generate_synthetic(
    n_users: int,
    n_items: int,
    n_events: int,
    zipf_exponent: float,
    n_artists: int,
    countries: Sequence[str],
    seed: int,
) -> Dataset:
    """Generate a dataset whose item popularity follows a Zipf law.

    Item index equals popularity rank minus one: item 0 is the head of the
    distribution. Artists are assigned to items uniformly, countries to
    users uniformly, and each user's timestamps are strictly increasing.
    Fully deterministic for a given seed.
    """
    if n_users < 1 or n_items < 1 or n_events < 1 or n_artists < 1:
        raise InvalidParameter("n_users, n_items, n_events, n_artists must be positive")
    if zipf_exponent <= 0:
        raise InvalidParameter(f"zipf_exponent must be positive, got {zipf_exponent}")
    if n_artists > n_items:
        raise InvalidParameter("n_artists must not exceed n_items")
    if not countries:
        raise InvalidParameter("countries must be non-empty")

    rng = make_rng(seed)
    user_ids = [f"u{i:05d}" for i in range(n_users)]
    item_ids = [f"i{i:05d}" for i in range(n_items)]
    artist_ids = [f"a{i:04d}" for i in range(n_artists)]

    item_artist = rng.integers(0, n_artists, size=n_items)
    has_album = rng.random(n_items) < 0.8
    album_number = rng.integers(0, 3, size=n_items)
    items = [
        ItemRecord(
            item_id=item_ids[i],
            artist_id=artist_ids[item_artist[i]],
            album_id=f"al{item_artist[i]:04d}_{album_number[i]}" if has_album[i] else "",
            track_name=f"Track {i:05d}",
        )
        for i in range(n_items)
    ]

    user_country = rng.integers(0, len(countries), size=n_users)
    gender_draw = rng.random(n_users)
    age_missing = rng.random(n_users) < 0.1
    ages = rng.integers(18, 71, size=n_users)

    event_users = rng.integers(0, n_users, size=n_events)
    event_items = rng.choice(n_items, size=n_events, p=zipf_weights(n_items, zipf_exponent))
    playcounts = rng.geometric(0.6, size=n_events)
    gaps = rng.integers(60, 3600, size=n_events)

    base_ts = 1_600_000_000
    user_clock = [base_ts] * n_users
    events = []
    total_play = [0] * n_users
    for j in range(n_events):
        u = int(event_users[j])
        user_clock[u] += int(gaps[j])
        pc = int(playcounts[j])
        total_play[u] += pc
        events.append(
            InteractionEvent(
                user_id=user_ids[u],
                item_id=item_ids[int(event_items[j])],
                timestamp=user_clock[u],
                playcount=pc,
            )
        )

    users = []
    for i in range(n_users):
        if gender_draw[i] < 0.45:
            gender = "f"
        elif gender_draw[i] < 0.9:
            gender = "m"
        else:
            gender = ""
        users.append(
            UserRecord(
                user_id=user_ids[i],
                country=str(countries[int(user_country[i])]),
                age=None if age_missing[i] else int(ages[i]),
                gender=gender,
                total_playcount=total_play[i],
            )
        )

    return Dataset.from_parts(events, items, users)
