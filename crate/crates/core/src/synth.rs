//! Seeded synthetic order-flow sessions with planted self- and
//! cross-impact and a controllable single/multiple trade mixture.
//!
//! Mechanism: each stock keeps a mean-reverting reference price. Quote
//! updates arrive on a per-stock Poisson clock and re-post one large bid
//! and one large ask around the reference. Trades arrive on an
//! independent Poisson clock and execute partially against the resting
//! order on their side, so a trade never moves the book by itself; a
//! trade in stock j instead kicks every reference price by
//! `impact[i][j] * impact_ticks_per_unit * sign`, which the next quote
//! update of stock i realizes. Trade signs follow a per-stock AR(1)
//! chain; volumes are log-normal.
//!
//! Generation is single-threaded and draws from one seeded stream in
//! event order, so a seed fully determines the byte-exact output.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, LogNormal, StandardNormal};

use crate::classify;
use crate::error::{Error, Result};
use crate::lob::{EventKind, OrderEvent, Side, StockSeries, TradeEvent};
use crate::matrix::Matrix;
use crate::symbols::SymbolTable;

/// Resting volume of generated quote orders; large enough that partial
/// executions never exhaust a level between quote updates.
const QUOTE_VOLUME: u64 = 1_000_000_000;
/// Hard cap on a single trade's volume.
const MAX_TRADE_VOLUME: u64 = 100_000;
/// Spacing of trades inside a burst, in seconds.
const BURST_SPACING_S: f64 = 0.001;

/// Generator configuration. `impact` entries are response targets in
/// normalized units; `impact_ticks_per_unit` converts them to reference
/// price kicks in ticks.
#[derive(Debug, Clone)]
pub struct MarketConfig {
    pub n_stocks: usize,
    pub session_ms: i64,
    pub seed: u64,
    /// Trades per second per stock (burst members included).
    pub trade_intensity: f64,
    /// Quote updates per second per stock.
    pub quote_intensity: f64,
    /// When set, calibrate_single_fraction adjusts quote_intensity (and
    /// burst_size) to hit this single-trade fraction.
    pub single_fraction_target: Option<f64>,
    /// Lag-1 autocorrelation of the trade-sign chain, in (-1, 1).
    pub sign_autocorr: f64,
    /// Trades per burst; 1 disables bursting.
    pub burst_size: u32,
    pub volume_log_mean: f64,
    pub volume_log_std: f64,
    pub base_price_ticks: i64,
    /// Stationary standard deviation of the reference price, in ticks.
    pub ref_sigma_ticks: f64,
    pub mean_reversion_time_s: f64,
    /// Planted response targets, n x n.
    pub impact: Matrix,
    pub impact_ticks_per_unit: f64,
    /// Calibration bound on quote_intensity.
    pub max_quote_intensity: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            n_stocks: 8,
            session_ms: 600_000,
            seed: 1,
            trade_intensity: 2.0,
            quote_intensity: 8.0,
            single_fraction_target: None,
            sign_autocorr: 0.0,
            burst_size: 1,
            volume_log_mean: 100.0f64.ln(),
            volume_log_std: 1.0,
            base_price_ticks: 10_000,
            ref_sigma_ticks: 15.0,
            mean_reversion_time_s: 60.0,
            impact: Matrix::zeros(8, 8),
            impact_ticks_per_unit: 15.0,
            max_quote_intensity: 50.0,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_stocks == 0 {
            problems.push("n_stocks must be positive".to_string());
        }
        if self.session_ms <= 0 {
            problems.push("session_ms must be positive".to_string());
        }
        if !self.trade_intensity.is_finite() || self.trade_intensity <= 0.0 {
            problems.push("trade_intensity must be > 0".to_string());
        }
        if !self.quote_intensity.is_finite() || self.quote_intensity <= 0.0 {
            problems.push("quote_intensity must be > 0".to_string());
        }
        if let Some(t) = self.single_fraction_target {
            if !(0.0..=1.0).contains(&t) {
                problems.push("single_fraction_target must lie in [0, 1]".to_string());
            }
        }
        if !(-0.95..=0.95).contains(&self.sign_autocorr) {
            problems.push("sign_autocorr must lie in [-0.95, 0.95]".to_string());
        }
        if self.burst_size == 0 {
            problems.push("burst_size must be >= 1".to_string());
        }
        if !self.volume_log_mean.is_finite()
            || !self.volume_log_std.is_finite()
            || self.volume_log_std < 0.0
        {
            problems.push("volume distribution parameters invalid".to_string());
        }
        if self.base_price_ticks < 100 {
            problems.push("base_price_ticks must be at least 100".to_string());
        }
        if !self.ref_sigma_ticks.is_finite() || self.ref_sigma_ticks <= 0.0 {
            problems.push("ref_sigma_ticks must be > 0".to_string());
        }
        if !self.mean_reversion_time_s.is_finite() || self.mean_reversion_time_s <= 0.0 {
            problems.push("mean_reversion_time_s must be > 0".to_string());
        }
        if self.impact.rows() != self.n_stocks || self.impact.cols() != self.n_stocks {
            problems.push(format!(
                "impact matrix is {}x{}, expected {}x{}",
                self.impact.rows(),
                self.impact.cols(),
                self.n_stocks,
                self.n_stocks
            ));
        }
        if !self.impact_ticks_per_unit.is_finite() || self.impact_ticks_per_unit < 0.0 {
            problems.push("impact_ticks_per_unit must be >= 0".to_string());
        }
        if !self.max_quote_intensity.is_finite() || self.max_quote_intensity <= 0.0 {
            problems.push("max_quote_intensity must be > 0".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Parse the plain-text key-value config format. Lines are
    /// `key = value`; `#` starts a comment. The `impact` key accepts
    /// `zero`, `diag:<v>`, `uniform:<v>` or `csv:<path>` (path relative
    /// to `base_dir`).
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<MarketConfig> {
        let mut cfg = MarketConfig::default();
        let mut impact_spec: Option<String> = None;
        let mut errors = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {line_no}: expected `key = value`"));
                continue;
            };
            let key = key.trim();
            let value = value.trim();
            let num = |errors: &mut Vec<String>| -> Option<f64> {
                match value.parse::<f64>() {
                    Ok(v) => Some(v),
                    Err(_) => {
                        errors.push(format!("line {line_no}: invalid number for {key}"));
                        None
                    }
                }
            };
            match key {
                "n_stocks" => {
                    if let Some(v) = num(&mut errors) {
                        cfg.n_stocks = v as usize;
                    }
                }
                "session_ms" => {
                    if let Some(v) = num(&mut errors) {
                        cfg.session_ms = v as i64;
                    }
                }
                "seed" => match value.parse::<u64>() {
                    Ok(v) => cfg.seed = v,
                    Err(_) => errors.push(format!("line {line_no}: invalid seed")),
                },
                "trade_intensity" => {
                    if let Some(v) = num(&mut errors) {
                        cfg.trade_intensity = v;
                    }
                }
                "quote_intensity" => {
                    if let Some(v) = num(&mut errors) {
                        cfg.quote_intensity = v;
                    }
                }
                "single_fraction_target" => {
                    if let Some(v) = num(&mut errors) {
                        cfg.single_fraction_target = Some(v);
                    }
                }
                "sign_autocorr" => {
                    if let Some(v) = num(&mut errors) {
                        cfg.sign_autocorr = v;
                    }
                }
                "burst_size" => {
                    if let Some(v) = num(&mut errors) {
                        cfg.burst_size = v as u32;
                    }
                }
                "volume_log_mean" => {
                    if let Some(v) = num(&mut errors) {
                        cfg.volume_log_mean = v;
                    }
                }
                "volume_log_std" => {
                    if let Some(v) = num(&mut errors) {
                        cfg.volume_log_std = v;
                    }
                }
                "base_price_ticks" => {
                    if let Some(v) = num(&mut errors) {
                        cfg.base_price_ticks = v as i64;
                    }
                }
                "ref_sigma_ticks" => {
                    if let Some(v) = num(&mut errors) {
                        cfg.ref_sigma_ticks = v;
                    }
                }
                "mean_reversion_time_s" => {
                    if let Some(v) = num(&mut errors) {
                        cfg.mean_reversion_time_s = v;
                    }
                }
                "impact_ticks_per_unit" => {
                    if let Some(v) = num(&mut errors) {
                        cfg.impact_ticks_per_unit = v;
                    }
                }
                "max_quote_intensity" => {
                    if let Some(v) = num(&mut errors) {
                        cfg.max_quote_intensity = v;
                    }
                }
                "impact" => impact_spec = Some(value.to_string()),
                other => errors.push(format!("line {line_no}: unknown key {other:?}")),
            }
        }

        if !errors.is_empty() {
            return Err(Error::Config(errors.join("; ")));
        }
        cfg.impact = match impact_spec.as_deref() {
            None | Some("zero") => Matrix::zeros(cfg.n_stocks, cfg.n_stocks),
            Some(spec) => parse_impact_spec(spec, cfg.n_stocks, base_dir)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_impact_spec(spec: &str, n: usize, base_dir: Option<&Path>) -> Result<Matrix> {
    if let Some(v) = spec.strip_prefix("diag:") {
        let v: f64 = v
            .parse()
            .map_err(|_| Error::Config(format!("invalid impact value in {spec:?}")))?;
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = v;
        }
        Ok(m)
    } else if let Some(v) = spec.strip_prefix("uniform:") {
        let v: f64 = v
            .parse()
            .map_err(|_| Error::Config(format!("invalid impact value in {spec:?}")))?;
        Matrix::from_vec(n, n, vec![v; n * n])
    } else if let Some(path) = spec.strip_prefix("csv:") {
        let full = match base_dir {
            Some(dir) => dir.join(path),
            None => Path::new(path).to_path_buf(),
        };
        let bytes = std::fs::read(&full)?;
        let csv = crate::io::read_labeled_csv(&bytes[..])?;
        if csv.rows() != n || csv.cols() != n {
            return Err(Error::Config(format!(
                "impact csv is {}x{}, expected {n}x{n}",
                csv.rows(),
                csv.cols()
            )));
        }
        let (m, imputed) = csv.to_dense(0.0);
        if imputed > 0 {
            return Err(Error::Config("impact csv has missing entries".into()));
        }
        Ok(m)
    } else {
        Err(Error::Config(format!(
            "impact must be zero, diag:<v>, uniform:<v> or csv:<path>, got {spec:?}"
        )))
    }
}

/// Adjust the quote intensity (and for near-zero targets, the burst size)
/// so that the classify-measured single fraction matches the target.
///
/// For Poisson trade arrivals at rate t against an independent quote
/// clock at rate q, a trade is alone in its bracket with probability
/// (q / (q + t))^2, so q = t * sqrt(s) / (1 - sqrt(s)).
pub fn calibrate_single_fraction(config: &MarketConfig) -> Result<MarketConfig> {
    config.validate()?;
    let target = config.single_fraction_target.ok_or_else(|| {
        Error::Calibration("no single_fraction_target set in the config".into())
    })?;
    let mut adjusted = config.clone();

    if target < 0.02 {
        // Bursting packs trades between quote updates; whole bursts share
        // their brackets, so singles only come from rare burst splits.
        adjusted.burst_size = adjusted.burst_size.max(8);
        adjusted.quote_intensity = adjusted.quote_intensity.min(2.0);
        return Ok(adjusted);
    }

    adjusted.burst_size = 1;
    let arrival_rate = config.trade_intensity;
    let root = target.sqrt();
    let required = if target >= 1.0 {
        f64::INFINITY
    } else {
        arrival_rate * root / (1.0 - root)
    };
    if required <= config.max_quote_intensity {
        adjusted.quote_intensity = required;
        return Ok(adjusted);
    }
    // The exact rate is out of bounds; accept the cap when it still lands
    // within the +-2% tolerance (e.g. target 1.0 with sparse trading).
    let at_cap = (config.max_quote_intensity / (config.max_quote_intensity + arrival_rate)).powi(2);
    if (at_cap - target).abs() <= 0.02 {
        adjusted.quote_intensity = config.max_quote_intensity;
        Ok(adjusted)
    } else {
        Err(Error::Calibration(format!(
            "single fraction {target} needs quote intensity {required:.2}/s, above the bound \
             {:.2}/s (best reachable: {at_cap:.3})",
            config.max_quote_intensity
        )))
    }
}

struct StockState {
    ref_price: f64,
    last_ou_time: f64,
    bid_id: u64,
    ask_id: u64,
    bid_price: i64,
    ask_price: i64,
    bid_remaining: u64,
    ask_remaining: u64,
    last_sign: f64,
}

/// Generate a session. The stream replays through [`crate::lob::replay`]
/// with zero integrity errors.
pub fn generate(config: &MarketConfig) -> Result<(SymbolTable, Vec<OrderEvent>)> {
    config.validate()?;
    let n = config.n_stocks;
    let session_s = config.session_ms as f64 / 1000.0;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let exp_quote = Exp::new(config.quote_intensity)
        .map_err(|e| Error::Config(format!("bad quote intensity: {e}")))?;
    let arrival_rate = config.trade_intensity / config.burst_size as f64;
    let exp_trade = Exp::new(arrival_rate)
        .map_err(|e| Error::Config(format!("bad trade intensity: {e}")))?;
    let volume_dist = LogNormal::new(config.volume_log_mean, config.volume_log_std)
        .map_err(|e| Error::Config(format!("bad volume distribution: {e}")))?;
    let keep_prob = (1.0 + config.sign_autocorr) / 2.0;

    let mut table = SymbolTable::new();
    for i in 0..n {
        table.intern(&format!("S{i:02}"))?;
    }

    let mut events: Vec<OrderEvent> = Vec::new();
    let mut next_order_id: u64 = 1;
    let mut last_ms: i64 = 0;
    let mut stocks: Vec<StockState> = Vec::with_capacity(n);

    let emit = |events: &mut Vec<OrderEvent>,
                    last_ms: &mut i64,
                    t: f64,
                    stock: usize,
                    kind: EventKind,
                    side: Side,
                    price: i64,
                    volume: u64,
                    order_id: u64| {
        let ms = ((t * 1000.0).round() as i64).max(*last_ms);
        *last_ms = ms;
        events.push(OrderEvent {
            timestamp: ms,
            stock: crate::symbols::SymbolId(stock as u32),
            kind,
            side,
            price,
            volume,
            order_id,
        });
    };

    // Initial books at t = 0.
    for stock in 0..n {
        let half_spread = draw_half_spread(&mut rng);
        let base = config.base_price_ticks as f64;
        let mid = base.round() as i64;
        let (bid_price, ask_price) = (mid - half_spread, mid + half_spread);
        let bid_id = next_order_id;
        let ask_id = next_order_id + 1;
        next_order_id += 2;
        emit(
            &mut events, &mut last_ms, 0.0, stock, EventKind::Add, Side::Bid, bid_price,
            QUOTE_VOLUME, bid_id,
        );
        emit(
            &mut events, &mut last_ms, 0.0, stock, EventKind::Add, Side::Ask, ask_price,
            QUOTE_VOLUME, ask_id,
        );
        stocks.push(StockState {
            ref_price: base,
            last_ou_time: 0.0,
            bid_id,
            ask_id,
            bid_price,
            ask_price,
            bid_remaining: QUOTE_VOLUME,
            ask_remaining: QUOTE_VOLUME,
            last_sign: 0.0,
        });
    }

    // Task queue keyed by (time bits, sequence); f64 times are
    // non-negative so the bit pattern sorts like the value. Entries are
    // (time_bits, seq, stock, task_tag, burst_left).
    type Task = (u64, u64, usize, u8, u32);
    const TASK_QUOTE: u8 = 0;
    const TASK_TRADE: u8 = 1;
    let mut heap: BinaryHeap<Reverse<Task>> = BinaryHeap::new();
    let mut seq: u64 = 0;
    let push = |heap: &mut BinaryHeap<_>, seq: &mut u64, t: f64, stock: usize, tag: u8, burst: u32| {
        heap.push(Reverse((t.to_bits(), *seq, stock, tag, burst)));
        *seq += 1;
    };
    for stock in 0..n {
        let tq = exp_quote.sample(&mut rng);
        push(&mut heap, &mut seq, tq, stock, TASK_QUOTE, 0);
        let tt = exp_trade.sample(&mut rng);
        push(&mut heap, &mut seq, tt, stock, TASK_TRADE, config.burst_size);
    }

    while let Some(Reverse((bits, _, stock, tag, burst_left))) = heap.pop() {
        let t = f64::from_bits(bits);
        if t >= session_s {
            continue;
        }
        match tag {
            TASK_QUOTE => {
                let tau = config.mean_reversion_time_s;
                let state = &mut stocks[stock];
                let dt = t - state.last_ou_time;
                let phi = (-dt / tau).exp();
                let noise: f64 = <StandardNormal as Distribution<f64>>::sample(
                    &StandardNormal,
                    &mut rng,
                );
                let base = config.base_price_ticks as f64;
                state.ref_price = base
                    + (state.ref_price - base) * phi
                    + config.ref_sigma_ticks * (1.0 - phi * phi).sqrt() * noise;
                // Keep prices safely positive even under extreme kicks.
                state.ref_price = state.ref_price.max(10.0);
                state.last_ou_time = t;

                let half_spread = draw_half_spread(&mut rng);
                let mut mid = state.ref_price.round() as i64;
                if (mid - half_spread, mid + half_spread) == (state.bid_price, state.ask_price) {
                    // Force a visible change; symmetric dither, zero drift.
                    let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    state.ref_price += dir;
                    mid = state.ref_price.round() as i64;
                }
                let (bid_price, ask_price) = (mid - half_spread, mid + half_spread);

                emit(
                    &mut events, &mut last_ms, t, stock, EventKind::Delete, Side::Bid,
                    state.bid_price, state.bid_remaining, state.bid_id,
                );
                emit(
                    &mut events, &mut last_ms, t, stock, EventKind::Delete, Side::Ask,
                    state.ask_price, state.ask_remaining, state.ask_id,
                );
                let bid_id = next_order_id;
                let ask_id = next_order_id + 1;
                next_order_id += 2;
                emit(
                    &mut events, &mut last_ms, t, stock, EventKind::Add, Side::Bid, bid_price,
                    QUOTE_VOLUME, bid_id,
                );
                emit(
                    &mut events, &mut last_ms, t, stock, EventKind::Add, Side::Ask, ask_price,
                    QUOTE_VOLUME, ask_id,
                );
                state.bid_id = bid_id;
                state.ask_id = ask_id;
                state.bid_price = bid_price;
                state.ask_price = ask_price;
                state.bid_remaining = QUOTE_VOLUME;
                state.ask_remaining = QUOTE_VOLUME;

                let gap = exp_quote.sample(&mut rng);
                push(&mut heap, &mut seq, t + gap, stock, TASK_QUOTE, 0);
            }
            TASK_TRADE => {
                let sign = {
                    let state = &mut stocks[stock];
                    let sign = if state.last_sign == 0.0 {
                        if rng.random::<bool>() {
                            1.0
                        } else {
                            -1.0
                        }
                    } else if rng.random::<f64>() < keep_prob {
                        state.last_sign
                    } else {
                        -state.last_sign
                    };
                    state.last_sign = sign;
                    sign
                };
                let raw_volume = volume_dist.sample(&mut rng);
                let state = &mut stocks[stock];
                let mut volume = (raw_volume.round() as u64).clamp(1, MAX_TRADE_VOLUME);
                let (side, price, order_id, remaining) = if sign > 0.0 {
                    (Side::Ask, state.ask_price, state.ask_id, &mut state.ask_remaining)
                } else {
                    (Side::Bid, state.bid_price, state.bid_id, &mut state.bid_remaining)
                };
                volume = volume.min(*remaining / 2).max(1);
                *remaining -= volume;
                emit(
                    &mut events, &mut last_ms, t, stock, EventKind::Execute, side, price, volume,
                    order_id,
                );

                // The planted response: kick every reference price.
                for (i, target) in stocks.iter_mut().enumerate() {
                    let g = config.impact[(i, stock)];
                    if g != 0.0 {
                        target.ref_price += g * config.impact_ticks_per_unit * sign;
                    }
                }

                if burst_left > 1 {
                    push(
                        &mut heap, &mut seq, t + BURST_SPACING_S, stock, TASK_TRADE,
                        burst_left - 1,
                    );
                }
                if burst_left == config.burst_size {
                    let gap = exp_trade.sample(&mut rng);
                    push(&mut heap, &mut seq, t + gap, stock, TASK_TRADE, config.burst_size);
                }
            }
            _ => unreachable!(),
        }
    }

    Ok((table, events))
}

fn draw_half_spread(rng: &mut ChaCha12Rng) -> i64 {
    let u: f64 = rng.random();
    if u < 0.5 {
        1
    } else if u < 0.8 {
        2
    } else {
        3
    }
}

/// Mean single-trade fraction over all stock pairs with any paired
/// trades; the quantity calibration targets.
pub fn measured_single_fraction(series: &[StockSeries]) -> Result<f64> {
    let quotes: Vec<_> = series.iter().map(|s| s.quotes.clone()).collect();
    let trades: Vec<_> = series.iter().map(|s| s.trades.clone()).collect();
    let weights = classify::pair_weights(&quotes, &trades)?;
    let present: Vec<f64> = weights.entries().iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::EmptyResult("no pair had any bracketed trades".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Lag-1 autocorrelation of a trade-sign series.
pub fn sign_autocorrelation(trades: &[TradeEvent]) -> Option<f64> {
    if trades.len() < 3 {
        return None;
    }
    let signs: Vec<f64> = trades.iter().map(|t| t.sign.value()).collect();
    let n = signs.len() as f64;
    let mean = signs.iter().sum::<f64>() / n;
    let var = signs.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        return None;
    }
    let cov = signs
        .windows(2)
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum::<f64>()
        / (n - 1.0);
    Some(cov / var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::{replay, ReplayConfig};

    fn quick_config(seed: u64) -> MarketConfig {
        MarketConfig {
            n_stocks: 3,
            session_ms: 60_000,
            seed,
            trade_intensity: 3.0,
            quote_intensity: 9.0,
            impact: Matrix::zeros(3, 3),
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_gives_identical_streams() {
        let cfg = quick_config(7);
        let (t1, e1) = generate(&cfg).unwrap();
        let (t2, e2) = generate(&cfg).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(t1.names(), t2.names());
        let (_, e3) = generate(&quick_config(8)).unwrap();
        assert_ne!(e1, e3);
    }

    #[test]
    fn generated_stream_replays_without_integrity_errors() {
        let cfg = quick_config(11);
        let (table, events) = generate(&cfg).unwrap();
        let series = replay(&events, table.len(), &ReplayConfig::default()).unwrap();
        for s in &series {
            assert!(s.quotes.len() > 10);
            assert!(s.trades.len() > 10);
            // Quote series deduplicated by construction.
            for w in s.quotes.windows(2) {
                assert_ne!(
                    (w[0].best_bid, w[0].best_ask),
                    (w[1].best_bid, w[1].best_ask)
                );
            }
        }
    }

    #[test]
    fn infeasible_configs_rejected() {
        let mut cfg = quick_config(1);
        cfg.trade_intensity = 0.0;
        assert!(generate(&cfg).is_err());
        let mut cfg = quick_config(1);
        cfg.impact = Matrix::zeros(2, 2);
        assert!(generate(&cfg).is_err());
        let mut cfg = quick_config(1);
        cfg.session_ms = 0;
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn calibration_hits_a_mid_range_target() {
        let mut cfg = MarketConfig {
            n_stocks: 4,
            session_ms: 600_000,
            seed: 21,
            trade_intensity: 2.0,
            impact: Matrix::zeros(4, 4),
            single_fraction_target: Some(0.65),
            ..Default::default()
        };
        cfg = calibrate_single_fraction(&cfg).unwrap();
        let (table, events) = generate(&cfg).unwrap();
        let series = replay(&events, table.len(), &ReplayConfig::default()).unwrap();
        let measured = measured_single_fraction(&series).unwrap();
        assert!(
            (measured - 0.65).abs() <= 0.02,
            "measured single fraction {measured}"
        );
    }

    #[test]
    fn sparse_trading_reaches_target_one() {
        let mut cfg = MarketConfig {
            n_stocks: 2,
            session_ms: 1_200_000,
            seed: 3,
            trade_intensity: 0.05,
            impact: Matrix::zeros(2, 2),
            single_fraction_target: Some(1.0),
            ..Default::default()
        };
        cfg = calibrate_single_fraction(&cfg).unwrap();
        assert_eq!(cfg.quote_intensity, cfg.max_quote_intensity);
        let (table, events) = generate(&cfg).unwrap();
        let series = replay(&events, table.len(), &ReplayConfig::default()).unwrap();
        let measured = measured_single_fraction(&series).unwrap();
        assert!(measured >= 0.97, "measured {measured}");
    }

    #[test]
    fn dense_trading_cannot_reach_target_one() {
        let cfg = MarketConfig {
            n_stocks: 2,
            session_ms: 60_000,
            trade_intensity: 5.0,
            impact: Matrix::zeros(2, 2),
            single_fraction_target: Some(1.0),
            ..Default::default()
        };
        assert!(matches!(
            calibrate_single_fraction(&cfg),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn bursting_drives_the_fraction_to_zero() {
        let mut cfg = MarketConfig {
            n_stocks: 2,
            session_ms: 600_000,
            seed: 5,
            trade_intensity: 4.0,
            impact: Matrix::zeros(2, 2),
            single_fraction_target: Some(0.0),
            ..Default::default()
        };
        cfg = calibrate_single_fraction(&cfg).unwrap();
        assert!(cfg.burst_size >= 8);
        let (table, events) = generate(&cfg).unwrap();
        let series = replay(&events, table.len(), &ReplayConfig::default()).unwrap();
        let measured = measured_single_fraction(&series).unwrap();
        assert!(measured <= 0.05, "measured {measured}");
    }

    #[test]
    fn sign_chain_matches_configured_autocorrelation() {
        let cfg = MarketConfig {
            n_stocks: 4,
            session_ms: 1_200_000,
            seed: 17,
            trade_intensity: 6.0,
            quote_intensity: 6.0,
            sign_autocorr: 0.5,
            impact: Matrix::zeros(4, 4),
            ..Default::default()
        };
        let (table, events) = generate(&cfg).unwrap();
        let series = replay(&events, table.len(), &ReplayConfig::default()).unwrap();
        let mut acs = Vec::new();
        for s in &series {
            acs.push(sign_autocorrelation(&s.trades).unwrap());
        }
        let mean_ac = acs.iter().sum::<f64>() / acs.len() as f64;
        assert!(
            (mean_ac - 0.5).abs() <= 0.02,
            "autocorrelations {acs:?}, mean {mean_ac}"
        );
    }

    #[test]
    fn config_text_round_trip() {
        let text = "\
# synthetic session
n_stocks = 4
session_ms = 120000
seed = 9
trade_intensity = 1.5
quote_intensity = 6.0
single_fraction_target = 0.65
sign_autocorr = 0.25
impact = diag:0.4
";
        let cfg = MarketConfig::parse(text, None).unwrap();
        assert_eq!(cfg.n_stocks, 4);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.single_fraction_target, Some(0.65));
        assert_eq!(cfg.impact[(2, 2)], 0.4);
        assert_eq!(cfg.impact[(0, 1)], 0.0);
    }

    #[test]
    fn config_parse_collects_all_errors() {
        let text = "n_stocks = x\nbogus_key = 1\nseed = -2\n";
        let err = MarketConfig::parse(text, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"));
        assert!(msg.contains("bogus_key"));
        assert!(msg.contains("line 3"));
    }
}
