//! Generalized price/liquidity response matrices over the stock universe.
//!
//! For stocks i, j the response entry is the average over trades of j of
//! the change in a z-scored quantity of i (midpoint or spread) between
//! the trade's bracketing quotes, multiplied by the trade's z-scored
//! signal (sign, volume, or their product). Averages run over all paired
//! trades, the single-trade subset, the multiple-trade subset, or a
//! weighted interpolation of the last two.
//!
//! Normalization is per stock over the whole session: midpoint and spread
//! over that stock's own quote-change series, trade signals over its
//! trade series. Multi-day data is averaged day by day with equal weight.

use serde::{Deserialize, Serialize};

use crate::classify::{self, PairWeights, TradeLabel};
use crate::error::{Error, Result};
use crate::lob::StockSeries;
use crate::matrix::Matrix;
use crate::par;

/// Which per-stock quantity responds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XKind {
    Midpoint,
    Spread,
}

impl XKind {
    pub fn as_str(self) -> &'static str {
        match self {
            XKind::Midpoint => "midpoint",
            XKind::Spread => "spread",
        }
    }
}

/// Which trade signal drives the response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YKind {
    Sign,
    Volume,
    SignedVolume,
}

impl YKind {
    pub fn as_str(self) -> &'static str {
        match self {
            YKind::Sign => "sign",
            YKind::Volume => "volume",
            YKind::SignedVolume => "signed_volume",
        }
    }
}

/// Trade subset the average runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    Single,
    Multiple,
    Weighted,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Single => "single",
            Subset::Multiple => "multiple",
            Subset::Weighted => "weighted",
        }
    }
}

/// A z-scored series with the source moments kept for provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    pub values: Vec<f64>,
    pub source_mean: f64,
    pub source_std: f64,
}

/// Z-score a series: (z - mean) / std with the population (1/n) standard
/// deviation. A constant series has no scale and is rejected.
pub fn normalize(series: &[f64]) -> Result<NormalizedSeries> {
    if series.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 observations to normalize, got {}",
            series.len()
        )));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 || !std.is_finite() {
        return Err(Error::Degenerate(
            "series is constant (zero standard deviation)".into(),
        ));
    }
    Ok(NormalizedSeries {
        values: series.iter().map(|z| (z - mean) / std).collect(),
        source_mean: mean,
        source_std: std,
    })
}

/// Signed traded volume: the elementwise product of the normalized sign
/// and volume series, used as-is (no re-normalization by default).
pub fn signed_volume(sign: &NormalizedSeries, volume: &NormalizedSeries) -> Result<Vec<f64>> {
    if sign.values.len() != volume.values.len() {
        return Err(Error::Alignment {
            left: sign.values.len(),
            right: volume.values.len(),
        });
    }
    Ok(sign
        .values
        .iter()
        .zip(&volume.values)
        .map(|(e, v)| e * v)
        .collect())
}

/// An N x N response matrix with per-entry observation counts. Entries
/// with zero qualifying events are missing, not zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    pub x_kind: XKind,
    pub y_kind: YKind,
    pub subset: Subset,
    n: usize,
    values: Vec<f64>,
    counts: Vec<u64>,
    /// Weighted matrices only: entries where one side was missing and the
    /// present one was used with weight 1.
    pub fallback_entries: usize,
}

impl ResponseMatrix {
    pub fn new(x_kind: XKind, y_kind: YKind, subset: Subset, n: usize) -> Self {
        Self {
            x_kind,
            y_kind,
            subset,
            n,
            values: vec![0.0; n * n],
            counts: vec![0; n * n],
            fallback_entries: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        (self.counts[i * self.n + j] > 0).then(|| self.values[i * self.n + j])
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n + j]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64, count: u64) {
        self.values[i * self.n + j] = if count > 0 { value } else { 0.0 };
        self.counts[i * self.n + j] = count;
    }

    pub fn missing_entries(&self) -> usize {
        self.counts.iter().filter(|&&c| c == 0).count()
    }

    /// Dense matrix with missing entries imputed as zero (the response
    /// scale's null value). Returns the imputation count for metadata.
    pub fn to_dense_imputed(&self) -> (Matrix, usize) {
        let m = Matrix::from_vec(self.n, self.n, self.values.clone())
            .expect("values length is n*n by construction");
        (m, self.missing_entries())
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Option<f64>)> + '_ {
        (0..self.n).flat_map(move |i| (0..self.n).map(move |j| (i, j, self.get(i, j))))
    }
}

/// Per-stock normalized series plus the raw series they were derived
/// from, ready for response accumulation.
pub struct PreparedPanel<'a> {
    pub series: &'a [StockSeries],
    pub mid: Vec<NormalizedSeries>,
    pub spread: Vec<NormalizedSeries>,
    pub sign: Vec<NormalizedSeries>,
    pub volume: Vec<NormalizedSeries>,
    pub signed: Vec<Vec<f64>>,
}

/// Panel preparation options. `renormalize_signed_volume` re-z-scores the
/// sign * volume product instead of using it as-is.
#[derive(Debug, Clone, Copy, Default)]
pub struct PanelOptions {
    pub renormalize_signed_volume: bool,
}

/// Normalize every per-stock series of a replayed session.
pub fn prepare_panel<'a>(series: &'a [StockSeries], opts: PanelOptions) -> Result<PreparedPanel<'a>> {
    let n = series.len();
    let mut mid = Vec::with_capacity(n);
    let mut spread = Vec::with_capacity(n);
    let mut sign = Vec::with_capacity(n);
    let mut volume = Vec::with_capacity(n);
    let mut signed = Vec::with_capacity(n);

    for (idx, s) in series.iter().enumerate() {
        let context = |what: &str, e: Error| -> Error {
            Error::Degenerate(format!("{what} of stock {idx}: {e}"))
        };
        let mids: Vec<f64> = s.quotes.iter().map(|q| q.mid_twice() as f64 / 2.0).collect();
        let spreads: Vec<f64> = s.quotes.iter().map(|q| q.spread() as f64).collect();
        let signs: Vec<f64> = s.trades.iter().map(|t| t.sign.value()).collect();
        let vols: Vec<f64> = s.trades.iter().map(|t| t.volume as f64).collect();

        mid.push(normalize(&mids).map_err(|e| context("midpoint series", e))?);
        spread.push(normalize(&spreads).map_err(|e| context("spread series", e))?);
        let sg = normalize(&signs).map_err(|e| context("sign series", e))?;
        let vl = normalize(&vols).map_err(|e| context("volume series", e))?;
        let mut sv = signed_volume(&sg, &vl)?;
        if opts.renormalize_signed_volume {
            sv = normalize(&sv)
                .map_err(|e| context("signed-volume series", e))?
                .values;
        }
        sign.push(sg);
        volume.push(vl);
        signed.push(sv);
    }

    Ok(PreparedPanel {
        series,
        mid,
        spread,
        sign,
        volume,
        signed,
    })
}

impl PreparedPanel<'_> {
    pub fn n(&self) -> usize {
        self.series.len()
    }

    fn x_values(&self, kind: XKind, i: usize) -> &[f64] {
        match kind {
            XKind::Midpoint => &self.mid[i].values,
            XKind::Spread => &self.spread[i].values,
        }
    }

    fn y_values(&self, kind: YKind, j: usize) -> &[f64] {
        match kind {
            YKind::Sign => &self.sign[j].values,
            YKind::Volume => &self.volume[j].values,
            YKind::SignedVolume => &self.signed[j],
        }
    }
}

/// Sum and count of response terms for one (i, j) pair and one subset.
fn accumulate(
    x: &[f64],
    y: &[f64],
    pairs: &[(classify::BracketedTrade, TradeLabel)],
    subset: Subset,
) -> (f64, u64) {
    let mut sum = 0.0;
    let mut count = 0u64;
    for (bracket, label) in pairs {
        let keep = match subset {
            Subset::All => true,
            Subset::Single => *label == TradeLabel::Single,
            Subset::Multiple => *label == TradeLabel::Multiple,
            Subset::Weighted => false,
        };
        if keep {
            sum += (x[bracket.next_idx] - x[bracket.prev_idx]) * y[bracket.trade_idx];
            count += 1;
        }
    }
    (sum, count)
}

/// A requested (x, y, subset) response; `Weighted` is not computable here
/// and must go through [`weighted_response`].
pub type Selection = (XKind, YKind, Subset);

/// Compute response matrices for every requested selection in one pass
/// over the pairing grid. The grid is parallel over the trading stock j;
/// accumulators are per-task and merged in index order.
pub fn compute_responses(
    panel: &PreparedPanel<'_>,
    selections: &[Selection],
) -> Result<Vec<ResponseMatrix>> {
    if selections.is_empty() {
        return Err(Error::Config("no response selections requested".into()));
    }
    if selections.iter().any(|(_, _, s)| *s == Subset::Weighted) {
        return Err(Error::Incompatible(
            "weighted responses are derived via weighted_response, not accumulated".into(),
        ));
    }
    let n = panel.n();

    // Column j of every selection, one task per j.
    type Column = Vec<Vec<(f64, u64)>>; // [selection][i]
    let columns: Vec<Result<Column>> = par::map_indexed(n, |j| {
        let mut col: Column = vec![Vec::with_capacity(n); selections.len()];
        for i in 0..n {
            let labeled =
                classify::pair_and_label(&panel.series[i].quotes, &panel.series[j].trades)?;
            for (s_idx, (xk, yk, subset)) in selections.iter().enumerate() {
                let x = panel.x_values(*xk, i);
                let y = panel.y_values(*yk, j);
                col[s_idx].push(accumulate(x, y, &labeled.pairs, *subset));
            }
        }
        Ok(col)
    });

    let mut out: Vec<ResponseMatrix> = selections
        .iter()
        .map(|(xk, yk, subset)| ResponseMatrix::new(*xk, *yk, *subset, n))
        .collect();
    for (j, column) in columns.into_iter().enumerate() {
        let column = column?;
        for (s_idx, entries) in column.into_iter().enumerate() {
            for (i, (sum, count)) in entries.into_iter().enumerate() {
                if count > 0 {
                    out[s_idx].set(i, j, sum / count as f64, count);
                }
            }
        }
    }

    for m in &out {
        if m.missing_entries() == n * n {
            return Err(Error::EmptyResult(format!(
                "response {}/{}/{} has no qualifying events for any pair",
                m.x_kind.as_str(),
                m.y_kind.as_str(),
                m.subset.as_str()
            )));
        }
    }
    Ok(out)
}

/// Linear interpolation of single- and multiple-trade responses with the
/// single-trade weight: R_wt = w * R_st + (1 - w) * R_mt.
///
/// If exactly one side is present for an entry, the present one is used
/// with weight 1 and the entry is tallied in `fallback_entries`.
pub fn weighted_response(
    r_st: &ResponseMatrix,
    r_mt: &ResponseMatrix,
    weights: &PairWeights,
) -> Result<ResponseMatrix> {
    if r_st.x_kind != r_mt.x_kind || r_st.y_kind != r_mt.y_kind {
        return Err(Error::Incompatible(format!(
            "cannot weight {}/{} against {}/{}",
            r_st.x_kind.as_str(),
            r_st.y_kind.as_str(),
            r_mt.x_kind.as_str(),
            r_mt.y_kind.as_str()
        )));
    }
    if r_st.subset != Subset::Single || r_mt.subset != Subset::Multiple {
        return Err(Error::Incompatible(
            "weighted_response expects a single-trade and a multiple-trade matrix".into(),
        ));
    }
    let n = r_st.n();
    if r_mt.n() != n || weights.n() != n {
        return Err(Error::Incompatible(format!(
            "dimension mismatch: {} vs {} vs weights {}",
            n,
            r_mt.n(),
            weights.n()
        )));
    }

    let mut out = ResponseMatrix::new(r_st.x_kind, r_st.y_kind, Subset::Weighted, n);
    let mut fallback = 0usize;
    for i in 0..n {
        for j in 0..n {
            let counts = r_st.count(i, j) + r_mt.count(i, j);
            match (r_st.get(i, j), r_mt.get(i, j)) {
                (Some(st), Some(mt)) => {
                    let w = weights.get(i, j).ok_or_else(|| {
                        Error::Incompatible(format!(
                            "weight missing at ({i}, {j}) although both responses are present"
                        ))
                    })?;
                    out.set(i, j, w * st + (1.0 - w) * mt, counts);
                }
                (Some(st), None) => {
                    out.set(i, j, st, counts);
                    fallback += 1;
                }
                (None, Some(mt)) => {
                    out.set(i, j, mt, counts);
                    fallback += 1;
                }
                (None, None) => {}
            }
        }
    }
    out.fallback_entries = fallback;
    Ok(out)
}

/// Equal-weight average of per-day matrices of the same kind. An entry is
/// averaged over the days where it is present; counts are summed.
pub fn average_days(days: &[ResponseMatrix]) -> Result<ResponseMatrix> {
    let first = days
        .first()
        .ok_or_else(|| Error::EmptyResult("no daily matrices to average".into()))?;
    let n = first.n();
    if days.iter().any(|d| {
        d.n() != n || d.x_kind != first.x_kind || d.y_kind != first.y_kind || d.subset != first.subset
    }) {
        return Err(Error::Incompatible(
            "daily matrices differ in shape or kind".into(),
        ));
    }
    let mut out = ResponseMatrix::new(first.x_kind, first.y_kind, first.subset, n);
    for i in 0..n {
        for j in 0..n {
            let mut sum = 0.0;
            let mut present = 0u32;
            let mut counts = 0u64;
            for d in days {
                if let Some(v) = d.get(i, j) {
                    sum += v;
                    present += 1;
                }
                counts += d.count(i, j);
            }
            if present > 0 {
                out.set(i, j, sum / present as f64, counts);
            }
        }
    }
    out.fallback_entries = days.iter().map(|d| d.fallback_entries).sum();
    Ok(out)
}
