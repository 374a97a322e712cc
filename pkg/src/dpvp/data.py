"""Interaction-log ingestion, time-period bucketing and day-based splits.

Records are held column-wise in numpy arrays; the food lists are stored as a
ragged array (``food_ptr`` offsets into ``food_idx``).  A :class:`Dataset` is
never mutated after construction.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError

SECONDS_PER_DAY = 86400
PERIOD_LABELS = ("Morning", "Noon", "Night", "LateNight")

# (start, end) in minutes after local midnight; end < start wraps midnight.
DEFAULT_PERIODS = ((300, 600), (600, 900), (900, 1200), (1200, 300))

CSV_HEADER = ("user_id", "store_id", "food_ids", "event_time")


def parse_period_table(text: str) -> tuple[tuple[int, int], ...]:
    """Parse ``"5:00-10:00,10:00-15:00,..."`` into minute intervals."""
    out = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            a, b = chunk.split("-")
            out.append((_clock_minutes(a), _clock_minutes(b)))
        except ValueError as exc:
            raise ConfigError(f"bad period interval {chunk!r}") from exc
    validate_period_table(out)
    return tuple(out)


def _clock_minutes(s: str) -> int:
    h, m = s.strip().split(":")
    h, m = int(h), int(m)
    if not (0 <= h <= 24 and 0 <= m < 60) or h * 60 + m > 1440:
        raise ValueError(s)
    return (h * 60 + m) % 1440


def format_period_table(table: Sequence[tuple[int, int]]) -> str:
    return ",".join(f"{a // 60}:{a % 60:02d}-{b // 60}:{b % 60:02d}" for a, b in table)


def validate_period_table(table: Sequence[tuple[int, int]]) -> None:
    """Each minute of the day must be covered by exactly one interval."""
    if len(table) < 1:
        raise ConfigError("period table is empty")
    cover = np.zeros(1440, dtype=np.int64)
    for a, b in table:
        if not (0 <= a < 1440 and 0 <= b < 1440):
            raise ConfigError(f"interval ({a}, {b}) outside the clock")
        if a == b:
            if len(table) != 1:
                raise ConfigError("a full-day interval must be the only period")
            cover[:] += 1
        elif a < b:
            cover[a:b] += 1
        else:
            cover[a:] += 1
            cover[:b] += 1
    if (cover == 0).any():
        raise ConfigError(f"period table leaves a gap at minute {int(np.argmin(cover))}")
    if (cover > 1).any():
        raise ConfigError(f"period table overlaps at minute {int(np.argmax(cover > 1))}")


def _minute_lookup(table: Sequence[tuple[int, int]]) -> np.ndarray:
    lut = np.empty(1440, dtype=np.int64)
    for k, (a, b) in enumerate(table):
        if a == b:
            lut[:] = k
        elif a < b:
            lut[a:b] = k
        else:
            lut[a:] = k
            lut[:b] = k
    return lut


def assign_period(event_time, tz_offset: int = 0, period_table=DEFAULT_PERIODS):
    """Period index of an epoch-second timestamp (scalar or array).

    Intervals are half-open, so exactly 10:00 falls in the interval starting
    at 10:00.  ``tz_offset`` is a fixed offset in minutes.
    """
    validate_period_table(period_table)
    lut = _minute_lookup(period_table)
    t = np.asarray(event_time, dtype=np.int64) + int(tz_offset) * 60
    minute = (t % SECONDS_PER_DAY) // 60
    res = lut[minute]
    return int(res) if np.ndim(res) == 0 else res


def local_day(event_time, tz_offset: int = 0):
    t = np.asarray(event_time, dtype=np.int64) + int(tz_offset) * 60
    return t // SECONDS_PER_DAY


@dataclass(frozen=True)
class IdMap:
    """Dense bidirectional id map.  Indices ``>= n_seen`` are entities the
    training split never saw."""

    ids: tuple
    n_seen: int

    def __post_init__(self):
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.ids)})

    def __len__(self):
        return len(self.ids)

    def index(self, raw) -> int:
        return self._index[raw]

    def get(self, raw, default=None):
        return self._index.get(raw, default)

    def raw(self, i: int):
        return self.ids[i]


@dataclass(frozen=True)
class InteractionRecord:
    user: str
    store: str
    foods: tuple[int, ...]
    period: int
    day: int
    event_time: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-wise interaction records with dense indices.

    ``user``, ``store`` index into ``users`` / ``stores``; ``food_idx`` into
    ``foods``.  ``day`` is relative to ``day0`` (the first local day).
    """

    user: np.ndarray
    store: np.ndarray
    food_ptr: np.ndarray
    food_idx: np.ndarray
    period: np.ndarray
    day: np.ndarray
    event_time: np.ndarray
    users: IdMap
    stores: IdMap
    foods: IdMap
    n_periods: int = 4
    day0: int = 0
    tz_offset: int = 0
    period_table: tuple = DEFAULT_PERIODS
    skipped_rows: int = 0
    row_errors: tuple = field(default=(), compare=False)

    def __len__(self):
        return len(self.user)

    @property
    def n_users(self) -> int:
        return self.users.n_seen

    @property
    def n_stores(self) -> int:
        return self.stores.n_seen

    @property
    def n_foods(self) -> int:
        return self.foods.n_seen

    @property
    def day_span(self) -> int:
        if len(self) == 0:
            return 0
        return int(self.day.max()) + 1

    def foods_of(self, i: int) -> np.ndarray:
        return self.food_idx[self.food_ptr[i]:self.food_ptr[i + 1]]

    def n_foods_per_record(self) -> np.ndarray:
        return np.diff(self.food_ptr)

    def record(self, i: int) -> InteractionRecord:
        return InteractionRecord(
            user=self.users.raw(int(self.user[i])),
            store=self.stores.raw(int(self.store[i])),
            foods=tuple(self.foods.raw(int(f)) for f in self.foods_of(i)),
            period=int(self.period[i]),
            day=int(self.day[i]),
            event_time=int(self.event_time[i]),
        )

    def __iter__(self) -> Iterator[InteractionRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def seen_mask(self) -> np.ndarray:
        """Records whose user, store and every food were seen in training."""
        ok = (self.user < self.users.n_seen) & (self.store < self.stores.n_seen)
        bad_food = self.food_idx >= self.foods.n_seen
        if bad_food.any():
            rec = np.repeat(np.arange(len(self)), np.diff(self.food_ptr))
            ok[np.unique(rec[bad_food])] = False
        return ok

    def subset(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        lens = np.diff(self.food_ptr)[rows]
        ptr = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum(lens, out=ptr[1:])
        if len(rows):
            starts = self.food_ptr[rows]
            gather = np.repeat(starts - ptr[:-1], lens) + np.arange(ptr[-1])
            fidx = self.food_idx[gather]
        else:
            fidx = np.zeros(0, dtype=np.int64)
        return Dataset(
            user=self.user[rows], store=self.store[rows], food_ptr=ptr, food_idx=fidx,
            period=self.period[rows], day=self.day[rows], event_time=self.event_time[rows],
            users=self.users, stores=self.stores, foods=self.foods,
            n_periods=self.n_periods, day0=self.day0, tz_offset=self.tz_offset,
            period_table=self.period_table,
        )


def build_dataset(rows: Iterable[tuple], tz_offset: int = 0, period_table=DEFAULT_PERIODS) -> Dataset:
    """Build from ``(user_id, store_id, foods, event_time)`` tuples.

    Id maps follow first-appearance order.
    """
    validate_period_table(period_table)
    uidx: dict = {}
    sidx: dict = {}
    fidx: dict = {}
    users, stores, ptr, foods, times = [], [], [0], [], []
    for u, s, fl, t in rows:
        if len(fl) == 0:
            raise DataError("empty food set")
        users.append(uidx.setdefault(u, len(uidx)))
        stores.append(sidx.setdefault(s, len(sidx)))
        foods.extend(fidx.setdefault(f, len(fidx)) for f in fl)
        ptr.append(len(foods))
        times.append(int(t))
    t = np.asarray(times, dtype=np.int64)
    days = local_day(t, tz_offset)
    day0 = int(days.min()) if len(days) else 0
    return Dataset(
        user=np.asarray(users, dtype=np.int64),
        store=np.asarray(stores, dtype=np.int64),
        food_ptr=np.asarray(ptr, dtype=np.int64),
        food_idx=np.asarray(foods, dtype=np.int64),
        period=np.asarray(assign_period(t, tz_offset, period_table), dtype=np.int64).reshape(-1),
        day=(days - day0).astype(np.int64),
        event_time=t,
        users=IdMap(tuple(uidx), len(uidx)),
        stores=IdMap(tuple(sidx), len(sidx)),
        foods=IdMap(tuple(fidx), len(fidx)),
        n_periods=len(period_table),
        day0=day0,
        tz_offset=int(tz_offset),
        period_table=tuple(period_table),
    )


def parse_interaction_log(stream, tz_offset: int = 0, period_table=DEFAULT_PERIODS,
                          strict: bool = True) -> Dataset:
    """Parse the ``user_id,store_id,food_ids,event_time`` CSV.

    In strict mode the first bad row raises :class:`DataError` carrying its
    line number; otherwise bad rows are skipped and counted.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty input: missing header", line=1) from None
    header = [h.strip() for h in header]
    missing = [c for c in CSV_HEADER if c not in header]
    if missing:
        raise DataError(f"missing column(s): {', '.join(missing)}", line=1)
    col = {c: header.index(c) for c in CSV_HEADER}

    good, errors = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            good.append(_parse_row(row, col))
        except DataError as exc:
            exc.line = lineno
            if strict:
                raise
            errors.append((lineno, exc.message))
    ds = build_dataset(good, tz_offset=tz_offset, period_table=period_table)
    if errors:
        object.__setattr__(ds, "skipped_rows", len(errors))
        object.__setattr__(ds, "row_errors", tuple(errors))
    return ds


def _parse_row(row, col):
    if len(row) < len(CSV_HEADER):
        raise DataError("missing column value")
    user = row[col["user_id"]].strip()
    store = row[col["store_id"]].strip()
    if not user or not store:
        raise DataError("missing user or store id")
    raw_foods = row[col["food_ids"]].strip()
    if not raw_foods:
        raise DataError("empty food set")
    try:
        foods = [int(f) for f in raw_foods.split(";") if f.strip()]
    except ValueError:
        raise DataError(f"unparsable food id list {raw_foods!r}") from None
    if not foods:
        raise DataError("empty food set")
    try:
        t = int(row[col["event_time"]].strip())
    except ValueError:
        raise DataError(f"unparsable timestamp {row[col['event_time']]!r}") from None
    return user, store, foods, t


def read_interaction_log(path, **kw) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_interaction_log(fh, **kw)


def write_interaction_log(dataset: Dataset, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for i in range(len(dataset)):
        foods = ";".join(str(dataset.foods.raw(int(f))) for f in dataset.foods_of(i))
        w.writerow([dataset.users.raw(int(dataset.user[i])),
                    dataset.stores.raw(int(dataset.store[i])),
                    foods, int(dataset.event_time[i])])


def dumps_interaction_log(dataset: Dataset) -> str:
    buf = io.StringIO()
    write_interaction_log(dataset, buf)
    return buf.getvalue()


@dataclass(frozen=True)
class SplitSpec:
    train_days: int = 6
    val_days: int = 1
    test_days: int = 1

    @classmethod
    def parse(cls, text: str) -> "SplitSpec":
        try:
            a, b, c = (int(x) for x in str(text).split(","))
        except ValueError:
            raise ConfigError(f"split must be 'train,val,test' days, got {text!r}") from None
        return cls(a, b, c)

    @property
    def total(self) -> int:
        return self.train_days + self.val_days + self.test_days


def split_by_day(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Chronological split by local day.

    All three splits share re-densified id maps in which training entities
    come first (``n_seen`` = training count); entities first met in val/test
    are appended after them and therefore flagged unseen.
    """
    if min(spec.train_days, spec.val_days, spec.test_days) < 0 or spec.train_days < 1:
        raise ConfigError(f"invalid split {spec}")
    if spec.total != dataset.day_span:
        raise ConfigError(
            f"split {spec.train_days},{spec.val_days},{spec.test_days} sums to {spec.total} "
            f"days but the data spans {dataset.day_span}")
    day = dataset.day
    tr = np.flatnonzero(day < spec.train_days)
    va = np.flatnonzero((day >= spec.train_days) & (day < spec.train_days + spec.val_days))
    te = np.flatnonzero(day >= spec.train_days + spec.val_days)

    users = _train_first(dataset.user[tr], len(dataset.users))
    stores = _train_first(dataset.store[tr], len(dataset.stores))
    train_food = dataset.subset(tr).food_idx
    foods = _train_first(train_food, len(dataset.foods))

    remapped = Dataset(
        user=users[1][dataset.user], store=stores[1][dataset.store],
        food_ptr=dataset.food_ptr, food_idx=foods[1][dataset.food_idx],
        period=dataset.period, day=dataset.day, event_time=dataset.event_time,
        users=IdMap(tuple(dataset.users.raw(i) for i in users[0]), users[2]),
        stores=IdMap(tuple(dataset.stores.raw(i) for i in stores[0]), stores[2]),
        foods=IdMap(tuple(dataset.foods.raw(i) for i in foods[0]), foods[2]),
        n_periods=dataset.n_periods, day0=dataset.day0, tz_offset=dataset.tz_offset,
        period_table=dataset.period_table,
    )
    return remapped.subset(tr), remapped.subset(va), remapped.subset(te)


def _train_first(train_ids: np.ndarray, n_total: int):
    """Order: training ids in first-appearance order, then the rest."""
    _, first = np.unique(train_ids, return_index=True)
    seen = train_ids[np.sort(first)]
    rest = np.setdiff1d(np.arange(n_total), seen, assume_unique=False)
    order = np.concatenate([seen, rest]).astype(np.int64)
    inv = np.empty(n_total, dtype=np.int64)
    inv[order] = np.arange(n_total)
    return order, inv, len(seen)
