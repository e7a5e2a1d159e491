"""Exchange applications on top of the ordered stream: unified ticker, unified
order stream with credential gating, and the distributed trading floor."""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Literal

from .core import Label, SourceMessage

Side = Literal["Buy", "Sell", "Cancel"]
PriceRule = Literal["BuyerPrice", "SellerPrice", "Midpoint"]
PRICE_RULES = ("BuyerPrice", "SellerPrice", "Midpoint")


@dataclass
class Order:
    trader: str
    side: str
    symbol: str
    price: Decimal = Decimal(0)
    quantity: int = 0
    cancels: Label | None = None
    ref: Label | None = None
    global_seq: int | None = None

    def __post_init__(self):
        self.price = Decimal(self.price)
        if self.side not in ("Buy", "Sell", "Cancel"):
            raise ValueError(f"unknown side {self.side!r}")
        if self.side == "Cancel":
            if self.cancels is None:
                raise ValueError("a cancel must reference an order")
        else:
            if self.price <= 0:
                raise ValueError("price must be positive")
            if self.quantity <= 0:
                raise ValueError("quantity must be positive")

    def encode(self) -> bytes:
        body = {"trader": self.trader, "side": self.side, "symbol": self.symbol,
                "price": str(self.price), "qty": self.quantity}
        if self.cancels is not None:
            body["cancels"] = list(self.cancels)
        return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def decode(cls, payload: bytes, ref: Label | None = None, global_seq: int | None = None) -> "Order":
        body = json.loads(payload)
        cancels = tuple(body["cancels"]) if "cancels" in body else None
        return cls(body["trader"], body["side"], body["symbol"], Decimal(body["price"]), body["qty"],
                   cancels, ref, global_seq)


@dataclass(frozen=True)
class TradeEvent:
    buy_ref: Label
    sell_ref: Label
    symbol: str
    price: Decimal
    quantity: int
    global_seq: int
    tentative_at: int | None = None
    confirmed_at: int | None = None

    @property
    def key(self) -> tuple:
        return (self.buy_ref, self.sell_ref, self.symbol, self.price, self.quantity, self.global_seq)

    def stamped(self, **kw) -> "TradeEvent":
        return replace(self, **kw)


def execution_price(buy: Decimal, sell: Decimal, rule: str) -> Decimal:
    if rule == "BuyerPrice":
        return buy
    if rule == "SellerPrice":
        return sell
    if rule == "Midpoint":
        return (buy + sell) / 2
    raise ValueError(f"unknown price rule {rule!r}")


@dataclass
class _Resting:
    order: Order
    remaining: int


class OrderBook:
    """Price-time priority where time is the global sequence number."""

    def __init__(self) -> None:
        self.buys: dict[str, list] = {}   # symbol -> sorted [(-price, g, ref)]
        self.sells: dict[str, list] = {}  # symbol -> sorted [(price, g, ref)]
        self.resting: dict[Label, _Resting] = {}
        self.noop_cancels = 0

    def _side(self, side: str, symbol: str) -> list:
        book = self.buys if side == "Buy" else self.sells
        return book.setdefault(symbol, [])

    def _key(self, order: Order) -> tuple:
        price = -order.price if order.side == "Buy" else order.price
        return (price, order.global_seq, order.ref)

    def rest(self, order: Order, remaining: int) -> None:
        bisect.insort(self._side(order.side, order.symbol), self._key(order))
        self.resting[order.ref] = _Resting(order, remaining)

    def cancel(self, ref: Label) -> bool:
        entry = self.resting.pop(ref, None)
        if entry is None:
            self.noop_cancels += 1
            return False
        lst = self._side(entry.order.side, entry.order.symbol)
        lst.pop(bisect.bisect_left(lst, self._key(entry.order)))
        return True

    def best(self, side: str, symbol: str) -> _Resting | None:
        lst = self._side(side, symbol)
        return self.resting[lst[0][2]] if lst else None

    def snapshot(self) -> dict:
        return {ref: (r.order.side, r.order.symbol, r.order.price, r.remaining)
                for ref, r in sorted(self.resting.items())}


def match_orders(book: OrderBook, order: Order, price_rule: str = "SellerPrice") -> list[TradeEvent]:
    """Cross a newly committed order against the book; the rest of it rests."""
    if order.side == "Cancel":
        book.cancel(order.cancels)
        return []
    if order.ref is None or order.global_seq is None:
        raise ValueError("only committed orders (with ref and global_seq) can be matched")
    opposite = "Sell" if order.side == "Buy" else "Buy"
    trades: list[TradeEvent] = []
    remaining = order.quantity
    while remaining > 0:
        top = book.best(opposite, order.symbol)
        if top is None:
            break
        if order.side == "Buy":
            crosses = top.order.price <= order.price
            buy, sell = order, top.order
        else:
            crosses = top.order.price >= order.price
            buy, sell = top.order, order
        if not crosses:
            break
        fill = min(remaining, top.remaining)
        trades.append(TradeEvent(buy.ref, sell.ref, order.symbol,
                                 execution_price(buy.price, sell.price, price_rule),
                                 fill, order.global_seq))
        remaining -= fill
        top.remaining -= fill
        if top.remaining == 0:
            book.cancel(top.order.ref)
    if remaining > 0:
        book.rest(order, remaining)
    return trades


def replay_trades(log: dict[int, SourceMessage], price_rule: str = "SellerPrice") -> list[TradeEvent]:
    """Every trade implied by a committed log prefix.  A pure function of the log."""
    book = OrderBook()
    trades: list[TradeEvent] = []
    g = 1
    while g in log:
        msg = log[g]
        trades.extend(match_orders(book, Order.decode(msg.payload, msg.label, g), price_rule))
        g += 1
    return trades


@dataclass
class FloorState:
    """Trading-floor view of one primary receiver."""

    price_rule: str = "SellerPrice"
    book: OrderBook = field(default_factory=OrderBook)
    trades_at: dict[int, list[TradeEvent]] = field(default_factory=dict)  # global_seq -> trades
    tentative: list[TradeEvent] = field(default_factory=list)
    confirmed: list[TradeEvent] = field(default_factory=list)

    def on_commit(self, g: int, msg: SourceMessage) -> list[TradeEvent]:
        trades = match_orders(self.book, Order.decode(msg.payload, msg.label, g), self.price_rule)
        if trades:
            self.trades_at[g] = trades
        return trades


def arbiter_on_token(floor: FloorState, ack, holds_token_role: bool = True) -> list[TradeEvent]:
    """Tentative trades for the batch this node just acknowledged as token site."""
    if not holds_token_role:
        return []
    out = []
    for g in range(ack.base_global_seq, ack.end_global_seq):
        for trade in floor.trades_at.get(g, ()):
            out.append(trade.stamped(tentative_at=ack.token_num))
    floor.tentative.extend(out)
    return out


def confirm_trades(floor: FloorState, current_token: int, m: int) -> list[TradeEvent]:
    """Confirm this node's tentatives once a full ring cycle has passed."""
    ready = [tr for tr in floor.tentative if tr.tentative_at <= current_token - m]
    floor.tentative = [tr for tr in floor.tentative if tr.tentative_at > current_token - m]
    done = [tr.stamped(confirmed_at=current_token) for tr in ready]
    floor.confirmed.extend(done)
    return done


# -- credential gate ------------------------------------------------------------

@dataclass
class Account:
    funds: Decimal = Decimal(0)
    positions: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class Accepted:
    pass


@dataclass(frozen=True)
class Rejected:
    reason: str


def gate_order(sp: str, order: Order, accounts: dict[str, Account]) -> Accepted | Rejected:
    acct = accounts.get(order.trader)
    if acct is None:
        return Rejected("UnknownTrader")
    if order.side == "Sell" and acct.positions.get(order.symbol, 0) < order.quantity:
        return Rejected("InsufficientPosition")
    if order.side == "Buy" and acct.funds < order.price * order.quantity:
        return Rejected("InsufficientFunds")
    return Accepted()


# -- output lines ---------------------------------------------------------------

def fmt_time(us: int) -> str:
    return f"{us // 1_000_000}.{us % 1_000_000:06d}"


def ticker_line(release_us: int, g: int, source: str, payload: bytes) -> str:
    return f"{fmt_time(release_us)}\t{g}\t{source}\t{payload.decode(errors='replace')}"


def trade_line(trade: TradeEvent) -> str:
    confirmed = "-" if trade.confirmed_at is None else str(trade.confirmed_at)
    return (f"{trade.symbol}\t{trade.buy_ref[0]}:{trade.buy_ref[1]}\t{trade.sell_ref[0]}:{trade.sell_ref[1]}"
            f"\t{trade.price}\t{trade.quantity}\t{trade.global_seq}\t{trade.tentative_at}\t{confirmed}")
