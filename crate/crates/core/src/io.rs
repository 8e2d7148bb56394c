//! On-disk formats shared by the CLI stages: labeled matrix CSVs with
//! empty fields for missing entries, per-stock quote/trade series CSVs,
//! density exports, and JSON fit reports. All writers are deterministic:
//! the same values serialize to the same bytes.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::classify::PairWeights;
use crate::error::{Error, Result};
use crate::lob::{QuoteEvent, TradeEvent, TradeSign};
use crate::matrix::Matrix;
use crate::response::{ResponseMatrix, Subset, XKind, YKind};
use crate::statfit::{DensityEstimate, NormalParams, TlsParams};
use crate::symbols::SymbolId;

// ---------------------------------------------------------------------------
// Labeled matrix CSV: header row/column of labels, empty field = missing.
// ---------------------------------------------------------------------------

pub fn write_labeled_csv(
    rows: usize,
    cols: usize,
    entry: impl Fn(usize, usize) -> Option<f64>,
    row_labels: &[String],
    col_labels: &[String],
    mut out: impl Write,
) -> Result<()> {
    if row_labels.len() != rows || col_labels.len() != cols {
        return Err(Error::Incompatible("label count mismatch".into()));
    }
    write!(out, "")?;
    for label in col_labels {
        write!(out, ",{label}")?;
    }
    writeln!(out)?;
    for (i, label) in row_labels.iter().enumerate() {
        write!(out, "{label}")?;
        for j in 0..cols {
            match entry(i, j) {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub struct LabeledCsv {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub entries: Vec<Option<f64>>,
}

impl LabeledCsv {
    pub fn rows(&self) -> usize {
        self.row_labels.len()
    }

    pub fn cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i * self.cols() + j]
    }

    /// Dense matrix; missing entries imputed with `fill`. Returns the
    /// imputation count.
    pub fn to_dense(&self, fill: f64) -> (Matrix, usize) {
        let mut imputed = 0;
        let data: Vec<f64> = self
            .entries
            .iter()
            .map(|e| {
                e.unwrap_or_else(|| {
                    imputed += 1;
                    fill
                })
            })
            .collect();
        (
            Matrix::from_vec(self.rows(), self.cols(), data).expect("consistent shape"),
            imputed,
        )
    }
}

pub fn read_labeled_csv(input: impl BufRead) -> Result<LabeledCsv> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::parse_at_line(1, "empty matrix file"))?;
    let col_labels: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    if col_labels.is_empty() {
        return Err(Error::parse_at_line(1, "matrix header has no columns"));
    }
    let mut row_labels = Vec::new();
    let mut entries = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or_default();
        row_labels.push(label.to_string());
        let mut count = 0;
        for field in fields {
            count += 1;
            if field.is_empty() {
                entries.push(None);
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    Error::parse_at_line(line_no, format!("invalid number {field:?}"))
                })?;
                entries.push(Some(v));
            }
        }
        if count != col_labels.len() {
            return Err(Error::parse_at_line(
                line_no,
                format!("expected {} entries, found {count}", col_labels.len()),
            ));
        }
    }
    Ok(LabeledCsv {
        row_labels,
        col_labels,
        entries,
    })
}

pub fn write_dense_csv(
    m: &Matrix,
    row_labels: &[String],
    col_labels: &[String],
    out: impl Write,
) -> Result<()> {
    write_labeled_csv(
        m.rows(),
        m.cols(),
        |i, j| Some(m[(i, j)]),
        row_labels,
        col_labels,
        out,
    )
}

/// Factor column labels: factor_1 .. factor_n.
pub fn factor_labels(n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("factor_{k}")).collect()
}

// ---------------------------------------------------------------------------
// Response matrix CSV + JSON sidecar.
// ---------------------------------------------------------------------------

pub fn write_response_csv(
    r: &ResponseMatrix,
    symbols: &[String],
    out: impl Write,
) -> Result<()> {
    write_labeled_csv(r.n(), r.n(), |i, j| r.get(i, j), symbols, symbols, out)
}

/// Companion metadata for a response matrix CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseMeta {
    pub x_kind: XKind,
    pub y_kind: YKind,
    pub subset: Subset,
    pub n: usize,
    pub symbols: Vec<String>,
    pub counts: Vec<u64>,
    pub missing_entries: usize,
    pub fallback_entries: usize,
}

impl ResponseMeta {
    pub fn of(r: &ResponseMatrix, symbols: &[String]) -> Self {
        Self {
            x_kind: r.x_kind,
            y_kind: r.y_kind,
            subset: r.subset,
            n: r.n(),
            symbols: symbols.to_vec(),
            counts: r.counts().to_vec(),
            missing_entries: r.missing_entries(),
            fallback_entries: r.fallback_entries,
        }
    }
}

/// Rebuild a response matrix from a labeled CSV and its sidecar counts.
pub fn response_from_parts(csv: &LabeledCsv, meta: &ResponseMeta) -> Result<ResponseMatrix> {
    let n = csv.rows();
    if csv.cols() != n || meta.n != n || meta.counts.len() != n * n {
        return Err(Error::Incompatible(
            "response CSV and sidecar disagree in shape".into(),
        ));
    }
    let mut r = ResponseMatrix::new(meta.x_kind, meta.y_kind, meta.subset, n);
    for i in 0..n {
        for j in 0..n {
            match csv.get(i, j) {
                Some(v) => r.set(i, j, v, meta.counts[i * n + j].max(1)),
                None => r.set(i, j, 0.0, 0),
            }
        }
    }
    r.fallback_entries = meta.fallback_entries;
    Ok(r)
}

// ---------------------------------------------------------------------------
// Per-stock quote and trade series CSVs.
// ---------------------------------------------------------------------------

pub const QUOTES_CSV_HEADER: &str = "ts_ms,best_bid,best_ask,mid_x2,spread";
pub const TRADES_CSV_HEADER: &str = "ts_ms,sign,volume,price";

pub fn write_quotes_csv(quotes: &[QuoteEvent], mut out: impl Write) -> Result<()> {
    writeln!(out, "{QUOTES_CSV_HEADER}")?;
    for q in quotes {
        writeln!(
            out,
            "{},{},{},{},{}",
            q.timestamp,
            q.best_bid,
            q.best_ask,
            q.mid_twice(),
            q.spread()
        )?;
    }
    Ok(())
}

pub fn read_quotes_csv(input: impl BufRead, stock: SymbolId) -> Result<Vec<QuoteEvent>> {
    let mut lines = input.lines();
    expect_header(&mut lines, QUOTES_CSV_HEADER)?;
    let mut quotes = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::parse_at_line(line_no, "expected 5 fields"));
        }
        let parse = |s: &str| -> Result<i64> {
            s.parse()
                .map_err(|_| Error::parse_at_line(line_no, format!("invalid integer {s:?}")))
        };
        let q = QuoteEvent {
            timestamp: parse(f[0])?,
            stock,
            best_bid: parse(f[1])?,
            best_ask: parse(f[2])?,
        };
        if q.spread() <= 0 {
            return Err(Error::Integrity(format!(
                "line {line_no}: quote with non-positive spread"
            )));
        }
        if parse(f[3])? != q.mid_twice() || parse(f[4])? != q.spread() {
            return Err(Error::Integrity(format!(
                "line {line_no}: derived quote columns disagree with bid/ask"
            )));
        }
        quotes.push(q);
    }
    Ok(quotes)
}

pub fn write_trades_csv(trades: &[TradeEvent], mut out: impl Write) -> Result<()> {
    writeln!(out, "{TRADES_CSV_HEADER}")?;
    for t in trades {
        writeln!(
            out,
            "{},{},{},{}",
            t.timestamp,
            t.sign.as_i8(),
            t.volume,
            t.price
        )?;
    }
    Ok(())
}

pub fn read_trades_csv(input: impl BufRead, stock: SymbolId) -> Result<Vec<TradeEvent>> {
    let mut lines = input.lines();
    expect_header(&mut lines, TRADES_CSV_HEADER)?;
    let mut trades = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::parse_at_line(line_no, "expected 4 fields"));
        }
        let ts: i64 = f[0]
            .parse()
            .map_err(|_| Error::parse_at_line(line_no, "invalid timestamp"))?;
        let sign_raw: i8 = f[1]
            .parse()
            .map_err(|_| Error::parse_at_line(line_no, "invalid sign"))?;
        let sign = TradeSign::from_i8(sign_raw)
            .ok_or_else(|| Error::parse_at_line(line_no, "sign must be 1 or -1"))?;
        let volume: u64 = f[2]
            .parse()
            .map_err(|_| Error::parse_at_line(line_no, "invalid volume"))?;
        let price: i64 = f[3]
            .parse()
            .map_err(|_| Error::parse_at_line(line_no, "invalid price"))?;
        if volume == 0 || price <= 0 {
            return Err(Error::Integrity(format!(
                "line {line_no}: trade with zero volume or non-positive price"
            )));
        }
        trades.push(TradeEvent {
            timestamp: ts,
            stock,
            sign,
            volume,
            price,
        });
    }
    Ok(trades)
}

fn expect_header(
    lines: &mut std::io::Lines<impl BufRead>,
    expected: &str,
) -> Result<()> {
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::parse_at_line(1, "empty file, expected header"))?;
    if header.trim_end() != expected {
        return Err(Error::parse_at_line(
            1,
            format!("bad header {header:?}, expected {expected:?}"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Weights CSV.
// ---------------------------------------------------------------------------

pub fn write_weights_csv(w: &PairWeights, symbols: &[String], out: impl Write) -> Result<()> {
    write_labeled_csv(w.n(), w.n(), |i, j| w.get(i, j), symbols, symbols, out)
}

pub fn weights_from_csv(csv: &LabeledCsv) -> Result<PairWeights> {
    if csv.rows() != csv.cols() {
        return Err(Error::Incompatible("weights matrix must be square".into()));
    }
    PairWeights::from_entries(csv.rows(), csv.entries.clone())
}

// ---------------------------------------------------------------------------
// Fit report JSON.
// ---------------------------------------------------------------------------

/// One fitted distribution, as emitted by `impactlab fit`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub dist: String,
    pub mu: f64,
    pub sigma: f64,
    pub beta: Option<f64>,
    pub loglik: Option<f64>,
    pub converged: Option<bool>,
    pub n: usize,
}

impl FitReport {
    pub fn tls(p: &TlsParams, n: usize) -> Self {
        Self {
            dist: "tls".into(),
            mu: p.mu,
            sigma: p.sigma,
            beta: Some(p.beta),
            loglik: Some(p.loglik),
            converged: Some(p.converged),
            n,
        }
    }

    pub fn normal(p: &NormalParams, loglik: f64, n: usize) -> Self {
        Self {
            dist: "normal".into(),
            mu: p.mu,
            sigma: p.sigma,
            beta: None,
            loglik: Some(loglik),
            converged: Some(true),
            n,
        }
    }
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("json serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

// ---------------------------------------------------------------------------
// Density export CSV: bin centers with empirical and fitted curves.
// ---------------------------------------------------------------------------

pub const DENSITY_CSV_HEADER: &str = "bin_center,empirical,normal_fit,tls_fit";

pub fn write_density_csv(
    density: &DensityEstimate,
    normal: &NormalParams,
    tls: &TlsParams,
    mut out: impl Write,
) -> Result<()> {
    writeln!(out, "{DENSITY_CSV_HEADER}")?;
    for (center, d) in density.bin_centers().iter().zip(&density.densities) {
        let nfit = crate::statfit::normal_pdf(*center, normal.mu, normal.sigma);
        let tfit = crate::statfit::tls_pdf(*center, tls)?;
        writeln!(out, "{center},{d},{nfit},{tfit}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Heatmap triples: row, col, value.
// ---------------------------------------------------------------------------

pub fn write_heatmap_csv(m: &Matrix, mut out: impl Write) -> Result<()> {
    writeln!(out, "row,col,value")?;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            writeln!(out, "{},{},{}", i + 1, j + 1, m[(i, j)])?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Universe file: one symbol per line, '#' comments.
// ---------------------------------------------------------------------------

pub fn read_universe(input: impl BufRead) -> Result<Vec<String>> {
    let mut symbols = Vec::new();
    for line in input.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        symbols.push(trimmed.to_string());
    }
    if symbols.is_empty() {
        return Err(Error::Config("universe file lists no symbols".into()));
    }
    Ok(symbols)
}
