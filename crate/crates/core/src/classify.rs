//! Trade/quote bracketing and single-vs-multiple trade classification.
//!
//! For a stock pair (i, j), every trade of j is attached to the last
//! quote of i strictly before it and the first quote of i at-or-after it.
//! A quote stamped exactly at the trade's millisecond counts as the
//! *following* quote: the update is regarded as the trade's consequence.
//! Trades sharing both bracket quotes with another trade are `multiple`,
//! the rest are `single`; the weight w_ij is the single fraction.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::lob::{QuoteEvent, TradeEvent};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TradeLabel {
    Single,
    Multiple,
}

/// A trade of stock j bracketed by quotes of stock i. Indices point into
/// the series passed to [`pair_trades`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BracketedTrade {
    pub trade_idx: usize,
    pub prev_idx: usize,
    pub next_idx: usize,
}

/// Bracketing result: paired trades in trade order, plus the count of
/// trades dropped for lacking a quote on one side.
#[derive(Debug, Clone, Default)]
pub struct Pairing {
    pub pairs: Vec<BracketedTrade>,
    pub dropped: usize,
}

/// Labeled pairing with single/multiple tallies.
#[derive(Debug, Clone)]
pub struct LabeledPairing {
    pub pairs: Vec<(BracketedTrade, TradeLabel)>,
    pub dropped: usize,
    pub single: usize,
    pub multiple: usize,
}

impl LabeledPairing {
    /// w_ij = single / (single + multiple); undefined for an empty pairing.
    pub fn weight(&self) -> Option<f64> {
        let total = self.single + self.multiple;
        (total > 0).then(|| self.single as f64 / total as f64)
    }
}

/// Attach previous/following quotes of stock i to each trade of stock j.
///
/// Single merged sweep over both series, O(n + m). Trades at the session
/// edges without a bracketing quote are dropped and counted.
pub fn pair_trades(quotes_i: &[QuoteEvent], trades_j: &[TradeEvent]) -> Result<Pairing> {
    check_sorted(quotes_i.iter().map(|q| q.timestamp), "quote series")?;
    check_sorted(trades_j.iter().map(|t| t.timestamp), "trade series")?;

    let mut pairing = Pairing::default();
    // k = number of quotes strictly before the current trade.
    let mut k = 0usize;
    for (trade_idx, trade) in trades_j.iter().enumerate() {
        while k < quotes_i.len() && quotes_i[k].timestamp < trade.timestamp {
            k += 1;
        }
        if k == 0 || k == quotes_i.len() {
            pairing.dropped += 1;
            continue;
        }
        pairing.pairs.push(BracketedTrade {
            trade_idx,
            prev_idx: k - 1,
            next_idx: k,
        });
    }
    Ok(pairing)
}

/// Label each bracketed trade: `multiple` iff at least one other trade
/// shares both its prev and next quote.
pub fn label_single_multiple(pairing: &Pairing) -> LabeledPairing {
    let mut bracket_counts: HashMap<(usize, usize), u32> = HashMap::new();
    for p in &pairing.pairs {
        *bracket_counts.entry((p.prev_idx, p.next_idx)).or_insert(0) += 1;
    }
    let mut single = 0usize;
    let mut multiple = 0usize;
    let pairs = pairing
        .pairs
        .iter()
        .map(|&p| {
            let label = if bracket_counts[&(p.prev_idx, p.next_idx)] >= 2 {
                multiple += 1;
                TradeLabel::Multiple
            } else {
                single += 1;
                TradeLabel::Single
            };
            (p, label)
        })
        .collect();
    LabeledPairing {
        pairs,
        dropped: pairing.dropped,
        single,
        multiple,
    }
}

/// Bracket and label in one step.
pub fn pair_and_label(quotes_i: &[QuoteEvent], trades_j: &[TradeEvent]) -> Result<LabeledPairing> {
    Ok(label_single_multiple(&pair_trades(quotes_i, trades_j)?))
}

/// N x N single-trade weights w_ij with per-pair tallies. Entries with no
/// paired trades are missing (`None`), not zero.
#[derive(Debug, Clone)]
pub struct PairWeights {
    n: usize,
    weights: Vec<Option<f64>>,
    pub single: Vec<usize>,
    pub multiple: Vec<usize>,
    pub dropped: Vec<usize>,
}

impl PairWeights {
    pub fn from_entries(n: usize, weights: Vec<Option<f64>>) -> Result<Self> {
        if weights.len() != n * n {
            return Err(Error::Incompatible(format!(
                "expected {} weights, got {}",
                n * n,
                weights.len()
            )));
        }
        if weights
            .iter()
            .flatten()
            .any(|w| !(0.0..=1.0).contains(w))
        {
            return Err(Error::Domain("weight outside [0, 1]".into()));
        }
        Ok(Self {
            n,
            weights,
            single: vec![0; n * n],
            multiple: vec![0; n * n],
            dropped: vec![0; n * n],
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.weights[i * self.n + j]
    }

    pub fn entries(&self) -> &[Option<f64>] {
        &self.weights
    }
}

/// Compute the full weight matrix over a universe of replayed series.
/// Each (i, j) pair is an independent task; the grid is filled column by
/// column (one task per trading stock j).
pub fn pair_weights(
    quotes: &[Vec<QuoteEvent>],
    trades: &[Vec<TradeEvent>],
) -> Result<PairWeights> {
    if quotes.len() != trades.len() {
        return Err(Error::Incompatible(
            "quote and trade universes differ in size".into(),
        ));
    }
    let n = quotes.len();
    let columns: Vec<Result<Vec<LabeledPairing>>> = par::map_indexed(n, |j| {
        (0..n)
            .map(|i| pair_and_label(&quotes[i], &trades[j]))
            .collect()
    });

    let mut pw = PairWeights {
        n,
        weights: vec![None; n * n],
        single: vec![0; n * n],
        multiple: vec![0; n * n],
        dropped: vec![0; n * n],
    };
    for (j, column) in columns.into_iter().enumerate() {
        for (i, labeled) in column?.into_iter().enumerate() {
            let idx = i * n + j;
            pw.weights[idx] = labeled.weight();
            pw.single[idx] = labeled.single;
            pw.multiple[idx] = labeled.multiple;
            pw.dropped[idx] = labeled.dropped;
        }
    }
    Ok(pw)
}

fn check_sorted(timestamps: impl Iterator<Item = i64>, context: &str) -> Result<()> {
    let mut last = i64::MIN;
    for ts in timestamps {
        if ts < last {
            return Err(Error::Ordering {
                previous: last,
                found: ts,
                context: context.into(),
            });
        }
        last = ts;
    }
    Ok(())
}
