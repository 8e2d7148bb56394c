//! Price-level order book state.
//!
//! The book is a decoder, not a matching engine: an add that would cross
//! the opposite side is rejected as an integrity error instead of being
//! matched.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::lob::{EventKind, OrderEvent, Side};

/// A live order tracked by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RestingOrder {
    pub side: Side,
    pub price: i64,
    pub remaining: u64,
}

/// Volume executed against a resting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Execution {
    pub resting_side: Side,
    pub price: i64,
    pub volume: u64,
}

/// Per-stock book: sorted price levels per side plus an order-id index.
#[derive(Debug, Clone, Default)]
pub struct OrderBookState {
    bids: BTreeMap<i64, u64>,
    asks: BTreeMap<i64, u64>,
    orders: HashMap<u64, RestingOrder>,
}

impl OrderBookState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn best_bid(&self) -> Option<i64> {
        self.bids.last_key_value().map(|(p, _)| *p)
    }

    pub fn best_ask(&self) -> Option<i64> {
        self.asks.first_key_value().map(|(p, _)| *p)
    }

    /// Resting volume at a given price level.
    pub fn level_volume(&self, side: Side, price: i64) -> u64 {
        match side {
            Side::Bid => self.bids.get(&price).copied().unwrap_or(0),
            Side::Ask => self.asks.get(&price).copied().unwrap_or(0),
        }
    }

    pub fn order(&self, order_id: u64) -> Option<&RestingOrder> {
        self.orders.get(&order_id)
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty() && self.asks.is_empty() && self.orders.is_empty()
    }

    pub fn open_orders(&self) -> usize {
        self.orders.len()
    }

    /// Apply one event. Returns the execution details for `execute`
    /// events, `None` otherwise.
    pub fn apply(&mut self, event: &OrderEvent) -> Result<Option<Execution>> {
        if event.volume == 0 {
            return Err(Error::Integrity(format!(
                "event with zero volume for order {}",
                event.order_id
            )));
        }
        if event.price <= 0 {
            return Err(Error::Integrity(format!(
                "event with non-positive price {} for order {}",
                event.price, event.order_id
            )));
        }
        match event.kind {
            EventKind::Add => self.apply_add(event).map(|_| None),
            EventKind::Cancel => self.reduce(event, event.volume, false).map(|_| None),
            EventKind::Delete => {
                let remaining = self.lookup(event)?.remaining;
                self.reduce(event, remaining, false).map(|_| None)
            }
            EventKind::Execute => {
                let exec = self.reduce(event, event.volume, true)?;
                Ok(exec)
            }
        }
    }

    fn apply_add(&mut self, event: &OrderEvent) -> Result<()> {
        if self.orders.contains_key(&event.order_id) {
            return Err(Error::Integrity(format!(
                "add with duplicate order id {}",
                event.order_id
            )));
        }
        // Reject crossed input: replay decodes a feed, it does not match.
        match event.side {
            Side::Bid => {
                if let Some(ask) = self.best_ask() {
                    if event.price >= ask {
                        return Err(Error::Integrity(format!(
                            "bid add at {} crosses best ask {ask}",
                            event.price
                        )));
                    }
                }
            }
            Side::Ask => {
                if let Some(bid) = self.best_bid() {
                    if event.price <= bid {
                        return Err(Error::Integrity(format!(
                            "ask add at {} crosses best bid {bid}",
                            event.price
                        )));
                    }
                }
            }
        }
        self.orders.insert(
            event.order_id,
            RestingOrder {
                side: event.side,
                price: event.price,
                remaining: event.volume,
            },
        );
        *self.level_mut(event.side, event.price) += event.volume;
        Ok(())
    }

    fn lookup(&self, event: &OrderEvent) -> Result<RestingOrder> {
        let order = self.orders.get(&event.order_id).copied().ok_or_else(|| {
            Error::Integrity(format!(
                "{} references unknown order id {}",
                event.kind.as_str(),
                event.order_id
            ))
        })?;
        if order.side != event.side || order.price != event.price {
            return Err(Error::Integrity(format!(
                "{} for order {} has side/price {}@{} but the resting order is {}@{}",
                event.kind.as_str(),
                event.order_id,
                event.side.as_str(),
                event.price,
                order.side.as_str(),
                order.price,
            )));
        }
        Ok(order)
    }

    /// Remove `volume` shares of a resting order; the core of cancel,
    /// delete and execute.
    fn reduce(&mut self, event: &OrderEvent, volume: u64, is_exec: bool) -> Result<Option<Execution>> {
        let order = self.lookup(event)?;
        if volume > order.remaining {
            return Err(Error::Integrity(format!(
                "{} of {volume} shares exceeds the {} remaining on order {}",
                event.kind.as_str(),
                order.remaining,
                event.order_id
            )));
        }
        let level = self.level_mut(order.side, order.price);
        *level -= volume;
        if *level == 0 {
            match order.side {
                Side::Bid => self.bids.remove(&order.price),
                Side::Ask => self.asks.remove(&order.price),
            };
        }
        if volume == order.remaining {
            self.orders.remove(&event.order_id);
        } else {
            self.orders.get_mut(&event.order_id).unwrap().remaining -= volume;
        }
        Ok(is_exec.then_some(Execution {
            resting_side: order.side,
            price: order.price,
            volume,
        }))
    }

    fn level_mut(&mut self, side: Side, price: i64) -> &mut u64 {
        match side {
            Side::Bid => self.bids.entry(price).or_insert(0),
            Side::Ask => self.asks.entry(price).or_insert(0),
        }
    }
}
