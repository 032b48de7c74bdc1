"""Core data model: costs, abort flags, requests, auctions and the columnar log."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

CPM_CENTS_PER_USD = 100.0 * 1000.0

ContextValue = Union[str, float, None]


class ValidationError(ValueError):
    """Raised when a value violates a domain invariant."""


class UnsupportedLogError(ValueError):
    """Raised when an operation needs counterfactual data the log does not carry."""


def cpm_cents_to_usd(cpm_cents: float) -> float:
    """Per-auction cost in dollars from a price quoted in CPM cents."""
    return float(cpm_cents) / CPM_CENTS_PER_USD


def usd_to_cpm_cents(usd: float) -> float:
    return float(usd) * CPM_CENTS_PER_USD


def _check_money(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    if value < 0:
        raise ValidationError(f"{name} must be non-negative, got {value!r}")
    return value


@dataclass(frozen=True)
class CostModel:
    """Fixed transaction cost of holding one auction, in dollars."""

    cost_per_auction: float

    def __post_init__(self):
        object.__setattr__(
            self, "cost_per_auction", _check_money("cost_per_auction", self.cost_per_auction)
        )

    @classmethod
    def from_cpm_cents(cls, cpm_cents: float) -> "CostModel":
        return cls(cpm_cents_to_usd(cpm_cents))

    @property
    def cpm_cents(self) -> float:
        return usd_to_cpm_cents(self.cost_per_auction)


class AbortFlag(enum.IntEnum):
    KEEP = 0
    ABORT = 1

    @property
    def abort(self) -> bool:
        return self is AbortFlag.ABORT


def net_income(total_payoff: float, total_played_auctions: float, cost: CostModel) -> float:
    """Total payoff minus the transaction cost of every played auction."""
    total_payoff = _check_money("total_payoff", total_payoff)
    played = _check_money("total_played_auctions", total_played_auctions)
    return total_payoff - cost.cost_per_auction * played


@dataclass(frozen=True)
class AuctionObservation:
    request_id: str
    publisher_id: str
    tag_id: str
    position: int
    won: bool
    counterfactual_would_win: Optional[bool] = None
    # payoff the tag would have produced had it been held; simulator logs only
    counterfactual_payoff: Optional[float] = None


def _check_context(context: Mapping[str, ContextValue]) -> dict:
    out = {}
    for name, value in context.items():
        if not isinstance(name, str) or not name:
            raise ValidationError(f"context feature names must be non-empty strings, got {name!r}")
        if value is None or isinstance(value, str):
            out[name] = value
        elif isinstance(value, (int, float, np.floating, np.integer)) and not isinstance(value, bool):
            if not math.isfinite(float(value)):
                raise ValidationError(f"context feature {name!r} is not finite")
            out[name] = float(value)
        else:
            raise ValidationError(f"context feature {name!r} has unsupported value {value!r}")
    return out


@dataclass(frozen=True)
class RequestRecord:
    """One ad request together with the auctions logged for it.

    ``auctions`` holds either the played auctions only (production logs) or
    every waterfall position with counterfactual flags (simulator logs).
    """

    request_id: str
    publisher_id: str
    payoff: float
    num_played: int
    waterfall_length: int
    median_bid: Optional[float]
    context: Mapping[str, ContextValue]
    auctions: Sequence[AuctionObservation] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "auctions", tuple(self.auctions))
        object.__setattr__(self, "context", _check_context(self.context))
        object.__setattr__(self, "payoff", _check_money("payoff", self.payoff))
        if self.median_bid is not None:
            object.__setattr__(self, "median_bid", _check_money("median_bid", self.median_bid))
        self._validate()

    def _validate(self):
        rid = self.request_id
        if not (1 <= self.num_played <= self.waterfall_length):
            raise ValidationError(
                f"request {rid}: need 1 <= num_played ({self.num_played}) "
                f"<= waterfall_length ({self.waterfall_length})"
            )
        n = len(self.auctions)
        has_cf = n > 0 and all(a.counterfactual_would_win is not None for a in self.auctions)
        if n != self.num_played and not (n == self.waterfall_length and has_cf):
            raise ValidationError(
                f"request {rid}: {n} auctions logged but num_played={self.num_played}"
            )
        for expected, a in enumerate(self.auctions, start=1):
            if a.position != expected:
                raise ValidationError(f"request {rid}: positions must be consecutive from 1")
            if a.request_id != rid or a.publisher_id != self.publisher_id:
                raise ValidationError(f"request {rid}: auction row belongs to another request")
            if a.position > self.num_played and a.won:
                raise ValidationError(f"request {rid}: unplayed position {a.position} marked won")
            if (
                a.position <= self.num_played
                and a.counterfactual_would_win is not None
                and a.counterfactual_would_win != a.won
            ):
                raise ValidationError(
                    f"request {rid}: played position {a.position} contradicts its counterfactual flag"
                )
        winners = [a.position for a in self.auctions if a.won]
        if len(winners) > 1:
            raise ValidationError(f"request {rid}: more than one winning auction")
        if winners and winners[0] != self.num_played:
            raise ValidationError(f"request {rid}: the winner must be the last played auction")
        if self.payoff > 0 and not winners:
            raise ValidationError(f"request {rid}: positive payoff without a winning auction")
        if self.payoff == 0 and winners:
            raise ValidationError(f"request {rid}: winning auction with zero payoff")
        if self.payoff == 0 and self.num_played != self.waterfall_length:
            raise ValidationError(f"request {rid}: unsold request must play the whole waterfall")

    @property
    def has_counterfactual(self) -> bool:
        return len(self.auctions) == self.waterfall_length and all(
            a.counterfactual_would_win is not None for a in self.auctions
        )


@dataclass(frozen=True)
class ContextColumn:
    """One context feature stored column-wise at request level.

    Categorical columns keep sorted ``categories`` and int codes (-1 = missing);
    numeric columns keep float values (NaN = missing).
    """

    name: str
    kind: str
    codes: Optional[np.ndarray] = None
    categories: tuple = ()
    values: Optional[np.ndarray] = None

    @classmethod
    def categorical(cls, name: str, tokens: Sequence[Optional[str]]) -> "ContextColumn":
        present = sorted({t for t in tokens if t is not None and t != ""})
        lookup = {t: i for i, t in enumerate(present)}
        codes = np.array([lookup.get(t, -1) if t else -1 for t in tokens], dtype=np.int32)
        return cls(name=name, kind="categorical", codes=codes, categories=tuple(present))

    @classmethod
    def numeric(cls, name: str, values) -> "ContextColumn":
        return cls(name=name, kind="numeric", values=np.asarray(values, dtype=np.float64))

    def take(self, idx: np.ndarray) -> "ContextColumn":
        if self.kind == "categorical":
            return ContextColumn(self.name, self.kind, codes=self.codes[idx], categories=self.categories)
        return ContextColumn(self.name, self.kind, values=self.values[idx])

    def value_at(self, i: int) -> ContextValue:
        if self.kind == "categorical":
            c = int(self.codes[i])
            return None if c < 0 else self.categories[c]
        v = float(self.values[i])
        return None if math.isnan(v) else v

    def __len__(self):
        return len(self.codes if self.kind == "categorical" else self.values)


def _encode(tokens: Sequence[str]) -> tuple[tuple, np.ndarray]:
    uniq, codes = np.unique(np.asarray(tokens, dtype=object).astype(str), return_inverse=True)
    return tuple(str(u) for u in uniq), codes.astype(np.int32)


@dataclass
class AuctionLog:
    """Columnar waterfall log in canonical order (request_id, position).

    Request-level arrays have one entry per request; row-level arrays one
    entry per logged auction, with ``row_request`` pointing back to the request.
    Rows beyond ``num_played`` exist only in counterfactual (simulator) logs.
    """

    request_ids: np.ndarray
    publishers: tuple
    publisher_code: np.ndarray
    payoff: np.ndarray
    num_played: np.ndarray
    waterfall_length: np.ndarray
    median_bid: np.ndarray
    context: dict
    tags: tuple
    row_request: np.ndarray
    row_tag: np.ndarray
    position: np.ndarray
    won: np.ndarray
    cf_would_win: np.ndarray  # int8: -1 absent, 0, 1
    cf_payoff: np.ndarray  # NaN when absent
    row_start: np.ndarray = field(init=False)

    def __post_init__(self):
        counts = np.bincount(self.row_request, minlength=self.n_requests)
        self.row_start = (np.cumsum(counts) - counts).astype(np.int64)

    @property
    def n_requests(self) -> int:
        return len(self.request_ids)

    @property
    def n_rows(self) -> int:
        return len(self.row_request)

    @property
    def rows_per_request(self) -> np.ndarray:
        return np.bincount(self.row_request, minlength=self.n_requests)

    @property
    def played(self) -> np.ndarray:
        """Row mask of auctions that were actually held in the log."""
        return self.position <= self.num_played[self.row_request]

    @property
    def has_counterfactual(self) -> bool:
        return (
            self.n_rows > 0
            and bool(np.all(self.cf_would_win >= 0))
            and bool(np.array_equal(self.rows_per_request, self.waterfall_length))
        )

    @property
    def context_names(self) -> list:
        return list(self.context)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_columns(
        cls,
        *,
        request_id: Sequence[str],
        publisher_id: Sequence[str],
        tag_id: Sequence[str],
        position,
        won,
        request_payoff,
        request_num_played,
        request_waterfall_length,
        median_bid,
        cf_would_win,
        cf_payoff=None,
        context: Optional[Mapping[str, ContextColumn]] = None,
        validate: bool = True,
    ) -> "AuctionLog":
        """Build from denormalized row columns (the CSV layout).

        Context columns are given per row and must be constant within a request.
        """
        rid = np.asarray(request_id, dtype=object).astype(str)
        position = np.asarray(position, dtype=np.int64)
        n = len(rid)
        order = np.lexsort((position, rid)) if n else np.zeros(0, dtype=np.int64)
        rid = rid[order]
        position = position[order]
        if n:
            new_req = np.ones(n, dtype=bool)
            new_req[1:] = rid[1:] != rid[:-1]
        else:
            new_req = np.zeros(0, dtype=bool)
        first = np.flatnonzero(new_req)
        row_request = (np.cumsum(new_req) - 1).astype(np.int64)

        def req_level(values, name, dtype):
            arr = np.asarray(values, dtype=dtype)[order]
            head = arr[first]
            if n and validate:
                spread = head[row_request]
                same = arr == spread
                if arr.dtype.kind == "f":
                    same |= np.isnan(arr) & np.isnan(spread)
                if not np.all(same):
                    bad = int(np.flatnonzero(~same)[0])
                    raise ValidationError(f"request {rid[bad]}: {name} differs between its rows")
            return head

        pubs_row = np.asarray(publisher_id, dtype=object).astype(str)[order]
        if n and validate and not np.all(pubs_row == pubs_row[first][row_request]):
            raise ValidationError("publisher_id differs between rows of one request")
        publishers, pub_codes_row = _encode(pubs_row) if n else ((), np.zeros(0, np.int32))
        tags, tag_codes = _encode(np.asarray(tag_id, dtype=object)[order]) if n else ((), np.zeros(0, np.int32))

        ctx = {}
        for name, col in (context or {}).items():
            col = col.take(order)
            if col.kind == "categorical":
                head = col.codes[first]
                if validate and not np.all(col.codes == head[row_request]):
                    raise ValidationError(f"context feature {name!r} differs between rows of one request")
                ctx[name] = ContextColumn(name, "categorical", codes=head, categories=col.categories)
            else:
                head = col.values[first]
                hv = head[row_request]
                if validate and not np.all((col.values == hv) | (np.isnan(col.values) & np.isnan(hv))):
                    raise ValidationError(f"context feature {name!r} differs between rows of one request")
                ctx[name] = ContextColumn(name, "numeric", values=head)

        cf = np.asarray(cf_would_win, dtype=np.int8)[order]
        cfp = (
            np.full(n, np.nan) if cf_payoff is None else np.asarray(cf_payoff, dtype=np.float64)[order]
        )
        log = cls(
            request_ids=rid[first],
            publishers=publishers,
            publisher_code=pub_codes_row[first] if n else np.zeros(0, np.int32),
            payoff=req_level(request_payoff, "request_payoff_usd", np.float64),
            num_played=req_level(request_num_played, "request_num_played", np.int64),
            waterfall_length=req_level(request_waterfall_length, "request_waterfall_length", np.int64),
            median_bid=req_level(median_bid, "median_bid_usd", np.float64),
            context=ctx,
            tags=tags,
            row_request=row_request,
            row_tag=tag_codes,
            position=position,
            won=np.asarray(won, dtype=bool)[order],
            cf_would_win=cf,
            cf_payoff=cfp,
        )
        if validate:
            log.validate()
        return log

    @classmethod
    def from_records(cls, records: Iterable[RequestRecord]) -> "AuctionLog":
        records = list(records)
        names = list(records[0].context) if records else []
        cols = {k: [] for k in (
            "request_id", "publisher_id", "tag_id", "position", "won", "request_payoff",
            "request_num_played", "request_waterfall_length", "median_bid", "cf_would_win", "cf_payoff",
        )}
        ctx_rows = {name: [] for name in names}
        for r in records:
            if list(r.context) != names:
                raise ValidationError(f"request {r.request_id}: context schema differs from the log")
            for a in r.auctions:
                cols["request_id"].append(r.request_id)
                cols["publisher_id"].append(r.publisher_id)
                cols["tag_id"].append(a.tag_id)
                cols["position"].append(a.position)
                cols["won"].append(a.won)
                cols["request_payoff"].append(r.payoff)
                cols["request_num_played"].append(r.num_played)
                cols["request_waterfall_length"].append(r.waterfall_length)
                cols["median_bid"].append(np.nan if r.median_bid is None else r.median_bid)
                cols["cf_would_win"].append(-1 if a.counterfactual_would_win is None else int(a.counterfactual_would_win))
                cols["cf_payoff"].append(np.nan if a.counterfactual_payoff is None else a.counterfactual_payoff)
                for name in names:
                    ctx_rows[name].append(r.context[name])
        context = {}
        for name, values in ctx_rows.items():
            if any(isinstance(v, str) for v in values):
                context[name] = ContextColumn.categorical(name, [v if isinstance(v, str) else None for v in values])
            else:
                context[name] = ContextColumn.numeric(name, [np.nan if v is None else v for v in values])
        return cls.from_columns(context=context, **cols)

    # -- views ------------------------------------------------------------

    def record(self, i: int) -> RequestRecord:
        lo = self.row_start[i]
        hi = lo + self.rows_per_request[i]
        rid = str(self.request_ids[i])
        pub = self.publishers[self.publisher_code[i]]
        auctions = []
        for j in range(lo, hi):
            cf = int(self.cf_would_win[j])
            cfp = float(self.cf_payoff[j])
            auctions.append(AuctionObservation(
                request_id=rid,
                publisher_id=pub,
                tag_id=self.tags[self.row_tag[j]],
                position=int(self.position[j]),
                won=bool(self.won[j]),
                counterfactual_would_win=None if cf < 0 else bool(cf),
                counterfactual_payoff=None if math.isnan(cfp) else cfp,
            ))
        mb = float(self.median_bid[i])
        return RequestRecord(
            request_id=rid,
            publisher_id=pub,
            payoff=float(self.payoff[i]),
            num_played=int(self.num_played[i]),
            waterfall_length=int(self.waterfall_length[i]),
            median_bid=None if math.isnan(mb) else mb,
            context={name: col.value_at(i) for name, col in self.context.items()},
            auctions=auctions,
        )

    def records(self) -> Iterator[RequestRecord]:
        for i in range(self.n_requests):
            yield self.record(i)

    def observed_only(self) -> "AuctionLog":
        """Production-style copy: played rows only, counterfactual columns cleared."""
        keep = self.played
        return self._subset_rows(keep, clear_counterfactual=True)

    def _subset_rows(self, keep: np.ndarray, clear_counterfactual: bool = False) -> "AuctionLog":
        cf = self.cf_would_win[keep]
        cfp = self.cf_payoff[keep]
        if clear_counterfactual:
            cf = np.full(len(cf), -1, dtype=np.int8)
            cfp = np.full(len(cf), np.nan)
        return AuctionLog(
            request_ids=self.request_ids,
            publishers=self.publishers,
            publisher_code=self.publisher_code,
            payoff=self.payoff,
            num_played=self.num_played,
            waterfall_length=self.waterfall_length,
            median_bid=self.median_bid,
            context=self.context,
            tags=self.tags,
            row_request=self.row_request[keep],
            row_tag=self.row_tag[keep],
            position=self.position[keep],
            won=self.won[keep],
            cf_would_win=cf,
            cf_payoff=cfp,
        )

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        """Vectorized check of every RequestRecord invariant."""
        if self.n_rows == 0:
            return
        req = self.row_request
        rid = self.request_ids

        def fail(mask_req, msg):
            bad = np.flatnonzero(mask_req)
            if len(bad):
                raise ValidationError(f"request {rid[bad[0]]}: {msg}")

        fail(~np.isfinite(self.payoff) | (self.payoff < 0), "payoff must be finite and non-negative")
        mb = self.median_bid
        fail(np.isinf(mb) | (mb < 0), "median_bid must be finite and non-negative")
        fail((self.num_played < 1) | (self.num_played > self.waterfall_length),
             "need 1 <= num_played <= waterfall_length")
        expected_pos = np.arange(self.n_rows) - self.row_start[req] + 1
        bad_rows = self.position != expected_pos
        fail(np.bincount(req[bad_rows], minlength=self.n_requests) > 0,
             "positions must be consecutive from 1")
        n_rows = self.rows_per_request
        cf_missing = np.bincount(req[self.cf_would_win < 0], minlength=self.n_requests)
        full_cf = (n_rows == self.waterfall_length) & (cf_missing == 0)
        fail((n_rows != self.num_played) & ~full_cf, "row count must equal num_played")
        played = self.played
        fail(np.bincount(req[self.won & ~played], minlength=self.n_requests) > 0,
             "unplayed position marked won")
        contradict = played & (self.cf_would_win >= 0) & (self.cf_would_win.astype(bool) != self.won)
        fail(np.bincount(req[contradict], minlength=self.n_requests) > 0,
             "played position contradicts its counterfactual flag")
        n_won = np.bincount(req[self.won], minlength=self.n_requests)
        fail(n_won > 1, "more than one winning auction")
        win_pos = np.zeros(self.n_requests, dtype=np.int64)
        win_pos[req[self.won]] = self.position[self.won]
        fail((n_won == 1) & (win_pos != self.num_played), "the winner must be the last played auction")
        fail((self.payoff > 0) & (n_won == 0), "positive payoff without a winning auction")
        fail((self.payoff == 0) & (n_won > 0), "winning auction with zero payoff")
        fail((self.payoff == 0) & (self.num_played != self.waterfall_length),
             "unsold request must play the whole waterfall")
        fail(np.bincount(self.row_request, minlength=self.n_requests) == 0, "request without auctions")


@dataclass
class Observations:
    """Row-level training table: one played auction with its request fields.

    ``features`` maps feature name to a ContextColumn over rows; it always
    includes ``tag_id`` and one ``ctx_<name>`` entry per context feature.
    """

    won: np.ndarray
    payoff: np.ndarray
    num_played: np.ndarray
    median_bid: np.ndarray
    tag: np.ndarray
    tags: tuple
    features: dict

    def __len__(self):
        return len(self.won)

    @classmethod
    def from_log(cls, log: AuctionLog) -> "Observations":
        rows = np.flatnonzero(log.played)
        req = log.row_request[rows]
        features = {"tag_id": ContextColumn("tag_id", "categorical", codes=log.row_tag[rows], categories=log.tags)}
        for name, col in log.context.items():
            features["ctx_" + name] = ContextColumn(
                "ctx_" + name, col.kind,
                codes=None if col.codes is None else col.codes[req],
                categories=col.categories,
                values=None if col.values is None else col.values[req],
            )
        return cls(
            won=log.won[rows],
            payoff=log.payoff[req],
            num_played=log.num_played[req].astype(np.float64),
            median_bid=log.median_bid[req],
            tag=log.row_tag[rows],
            tags=log.tags,
            features=features,
        )

    @classmethod
    def from_arrays(cls, won, payoff, num_played, tag_id=None, median_bid=None, context=None) -> "Observations":
        """Small hand-built tables (tests, examples). ``context`` maps name -> per-row values."""
        won = np.asarray(won, dtype=bool)
        n = len(won)
        tag_id = ["t"] * n if tag_id is None else list(tag_id)
        tags, codes = _encode(tag_id) if n else ((), np.zeros(0, np.int32))
        features = {"tag_id": ContextColumn("tag_id", "categorical", codes=codes, categories=tags)}
        for name, values in (context or {}).items():
            key = name if name.startswith("ctx_") else "ctx_" + name
            values = list(values)
            if any(isinstance(v, str) for v in values):
                features[key] = ContextColumn.categorical(key, values)
            else:
                features[key] = ContextColumn.numeric(key, [np.nan if v is None else v for v in values])
        mb = np.full(n, np.nan) if median_bid is None else np.array(
            [np.nan if v is None else v for v in median_bid], dtype=np.float64)
        return cls(
            won=won,
            payoff=np.asarray(payoff, dtype=np.float64),
            num_played=np.asarray(num_played, dtype=np.float64),
            median_bid=mb,
            tag=codes,
            tags=tags,
            features=features,
        )

    def take(self, idx: np.ndarray) -> "Observations":
        return Observations(
            won=self.won[idx],
            payoff=self.payoff[idx],
            num_played=self.num_played[idx],
            median_bid=self.median_bid[idx],
            tag=self.tag[idx],
            tags=self.tags,
            features={k: c.take(idx) for k, c in self.features.items()},
        )
