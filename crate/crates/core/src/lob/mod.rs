//! Order-flow event stream parsing and per-stock order-book replay.
//!
//! The event schema is a flat text/CSV layout (plus an equivalent binary
//! framing, see [`codec`]) carrying add/cancel/delete/execute messages.
//! Replaying a stream reconstructs each stock's book and emits the
//! derived best-quote and trade series used by the rest of the pipeline.

pub mod book;
pub mod codec;

pub use book::{Execution, OrderBookState, RestingOrder};
pub use codec::{
    detect_format, parse_events, parse_events_bin, parse_events_csv, serialize_events_bin,
    serialize_events_csv, EventFileFormat,
};

use crate::error::{Error, Result};
use crate::par;
use crate::symbols::SymbolId;

/// Message kind of an order-flow event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// Place a new resting order.
    Add,
    /// Partially cancel a resting order (reduce its volume).
    Cancel,
    /// Remove a resting order entirely.
    Delete,
    /// Execute shares against a resting order (a trade).
    Execute,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Add => "add",
            EventKind::Cancel => "cancel",
            EventKind::Delete => "delete",
            EventKind::Execute => "execute",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "add" => Some(EventKind::Add),
            "cancel" => Some(EventKind::Cancel),
            "delete" => Some(EventKind::Delete),
            "execute" => Some(EventKind::Execute),
            _ => None,
        }
    }
}

/// Book side of an order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Bid => "bid",
            Side::Ask => "ask",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bid" => Some(Side::Bid),
            "ask" => Some(Side::Ask),
            _ => None,
        }
    }
}

/// One order-flow message.
///
/// `timestamp` is in milliseconds since session open, `price` in integer
/// ticks (> 0), `volume` in shares (> 0). For `delete` the volume records
/// the shares being removed; replay removes the full remainder regardless.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderEvent {
    pub timestamp: i64,
    pub stock: SymbolId,
    pub kind: EventKind,
    pub side: Side,
    pub price: i64,
    pub volume: u64,
    pub order_id: u64,
}

/// Sign of a trade: +1 buyer-initiated, -1 seller-initiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TradeSign {
    Buy,
    Sell,
}

impl TradeSign {
    pub fn value(self) -> f64 {
        match self {
            TradeSign::Buy => 1.0,
            TradeSign::Sell => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            TradeSign::Buy => 1,
            TradeSign::Sell => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            1 => Some(TradeSign::Buy),
            -1 => Some(TradeSign::Sell),
            _ => None,
        }
    }
}

/// Best-quote snapshot emitted whenever the (bid, ask) pair changes while
/// both sides of the book are non-empty.
///
/// The midpoint may sit on a half tick, so it is carried exactly as
/// `mid_twice = bid + ask`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuoteEvent {
    pub timestamp: i64,
    pub stock: SymbolId,
    pub best_bid: i64,
    pub best_ask: i64,
}

impl QuoteEvent {
    /// Twice the midpoint, in ticks. Exact (no floating point).
    pub fn mid_twice(&self) -> i64 {
        self.best_bid + self.best_ask
    }

    /// Midpoint in ticks as a float (may be a half tick).
    pub fn midpoint(&self) -> f64 {
        self.mid_twice() as f64 / 2.0
    }

    /// Bid-ask spread in ticks, always > 0.
    pub fn spread(&self) -> i64 {
        self.best_ask - self.best_bid
    }
}

/// A trade derived from an execute message. The sign is inferred from the
/// resting side: an execution against the ask is buyer-initiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TradeEvent {
    pub timestamp: i64,
    pub stock: SymbolId,
    pub sign: TradeSign,
    pub volume: u64,
    pub price: i64,
}

/// Quote and trade series of one stock, both non-decreasing in time.
#[derive(Debug, Clone, Default)]
pub struct StockSeries {
    pub quotes: Vec<QuoteEvent>,
    pub trades: Vec<TradeEvent>,
}

/// Replay options. The session window is a half-open `[start, end)`
/// filter on the emitted series; `None` keeps the full input.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReplayConfig {
    pub window: Option<(i64, i64)>,
}

impl ReplayConfig {
    fn keep(&self, ts: i64) -> bool {
        match self.window {
            Some((t0, t1)) => ts >= t0 && ts < t1,
            None => true,
        }
    }
}

/// Replay an event stream into per-stock quote and trade series.
///
/// Distinct stocks replay independently (in parallel when the `parallel`
/// feature is on); a single stock's stream is strictly sequential.
pub fn replay(
    events: &[OrderEvent],
    n_stocks: usize,
    config: &ReplayConfig,
) -> Result<Vec<StockSeries>> {
    let mut last_ts = i64::MIN;
    for e in events {
        if e.timestamp < last_ts {
            return Err(Error::Ordering {
                previous: last_ts,
                found: e.timestamp,
                context: "replay input".into(),
            });
        }
        last_ts = e.timestamp;
        if e.stock.index() >= n_stocks {
            return Err(Error::Integrity(format!(
                "event references stock index {} outside universe of {n_stocks}",
                e.stock.index()
            )));
        }
    }

    let mut by_stock: Vec<Vec<&OrderEvent>> = vec![Vec::new(); n_stocks];
    for e in events {
        by_stock[e.stock.index()].push(e);
    }

    let results = par::map_indexed(n_stocks, |i| replay_single(&by_stock[i], config));
    results.into_iter().collect()
}

/// Replay one stock's events against a fresh book.
fn replay_single(events: &[&OrderEvent], config: &ReplayConfig) -> Result<StockSeries> {
    let mut book = OrderBookState::new();
    let mut series = StockSeries::default();
    let mut last_quote: Option<(i64, i64)> = None;

    for e in events {
        let applied = book.apply(e)?;
        if let Some(exec) = applied {
            let sign = match exec.resting_side {
                Side::Ask => TradeSign::Buy,
                Side::Bid => TradeSign::Sell,
            };
            if config.keep(e.timestamp) {
                series.trades.push(TradeEvent {
                    timestamp: e.timestamp,
                    stock: e.stock,
                    sign,
                    volume: exec.volume,
                    price: exec.price,
                });
            }
        }
        if let (Some(bid), Some(ask)) = (book.best_bid(), book.best_ask()) {
            if last_quote != Some((bid, ask)) {
                last_quote = Some((bid, ask));
                if config.keep(e.timestamp) {
                    series.quotes.push(QuoteEvent {
                        timestamp: e.timestamp,
                        stock: e.stock,
                        best_bid: bid,
                        best_ask: ask,
                    });
                }
            }
        }
    }
    Ok(series)
}
