//! Fit-parameter report tables: one row per response signal and trade
//! case (or overlap kind), with the t location-scale parameters of the
//! pooled left and right singular-vector entries.

use std::fmt::Write as _;

use impactlab_core::overlap::OverlapKind;
use impactlab_core::response::{Subset, YKind};

/// (mu, sigma, beta) triple of one fitted side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitTriple {
    pub mu: f64,
    pub sigma: f64,
    pub beta: f64,
}

/// One row of a response fit table.
#[derive(Debug, Clone, Copy)]
pub struct ResponseFitRow {
    pub y_kind: YKind,
    pub subset: Subset,
    pub left: FitTriple,
    pub right: FitTriple,
}

pub const RESPONSE_TABLE_HEADER: &str =
    "response_to,case,u_mu,u_sigma,u_beta,v_mu,v_sigma,v_beta";

pub fn response_to_label(y: YKind) -> &'static str {
    match y {
        YKind::Sign => "trade_signs",
        YKind::Volume => "traded_volumes",
        YKind::SignedVolume => "signed_volumes",
    }
}

/// Render a price or liquidity fit table. Rows are ordered signal-major
/// (signs, volumes, signed volumes) with cases all, single, multiple,
/// weighted inside each signal.
pub fn render_response_table(rows: &[ResponseFitRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{RESPONSE_TABLE_HEADER}");
    for row in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            response_to_label(row.y_kind),
            row.subset.as_str(),
            row.left.mu,
            row.left.sigma,
            row.left.beta,
            row.right.mu,
            row.right.sigma,
            row.right.beta,
        );
    }
    s
}

/// One row of the factor-correlation fit table.
#[derive(Debug, Clone, Copy)]
pub struct OverlapFitRow {
    pub kind: OverlapKind,
    pub y_kind: YKind,
    pub left: FitTriple,
    pub right: FitTriple,
}

pub const OVERLAP_TABLE_HEADER: &str =
    "correlation_between,factors_related_to,u_mu,u_sigma,u_beta,v_mu,v_sigma,v_beta";

pub fn correlation_label(kind: OverlapKind) -> &'static str {
    match kind {
        OverlapKind::Mm => "price_factors",
        OverlapKind::Ss => "liquidity_factors",
        OverlapKind::Ms => "price_and_liquidity_factors",
    }
}

/// Render the overlap fit table. Rows are kind-major (mm, ss, ms) with
/// signals signs, volumes, signed volumes inside each kind.
pub fn render_overlap_table(rows: &[OverlapFitRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{OVERLAP_TABLE_HEADER}");
    for row in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            correlation_label(row.kind),
            response_to_label(row.y_kind),
            row.left.mu,
            row.left.sigma,
            row.left.beta,
            row.right.mu,
            row.right.sigma,
            row.right.beta,
        );
    }
    s
}

/// Canonical row order for the response tables.
pub fn response_row_order() -> Vec<(YKind, Subset)> {
    let mut rows = Vec::new();
    for y in [YKind::Sign, YKind::Volume, YKind::SignedVolume] {
        for subset in [Subset::All, Subset::Single, Subset::Multiple, Subset::Weighted] {
            rows.push((y, subset));
        }
    }
    rows
}

/// Canonical row order for the overlap table.
pub fn overlap_row_order() -> Vec<(OverlapKind, YKind)> {
    let mut rows = Vec::new();
    for kind in [OverlapKind::Mm, OverlapKind::Ss, OverlapKind::Ms] {
        for y in [YKind::Sign, YKind::Volume, YKind::SignedVolume] {
            rows.push((kind, y));
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_table_shape() {
        let rows: Vec<ResponseFitRow> = response_row_order()
            .into_iter()
            .map(|(y, subset)| ResponseFitRow {
                y_kind: y,
                subset,
                left: FitTriple { mu: 0.0, sigma: 1.0, beta: 2.0 },
                right: FitTriple { mu: 0.0, sigma: 1.0, beta: 2.0 },
            })
            .collect();
        let text = render_response_table(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 13); // header + 3 signals x 4 cases
        assert_eq!(lines[0], RESPONSE_TABLE_HEADER);
        assert!(lines[1].starts_with("trade_signs,all,"));
        assert!(lines[12].starts_with("signed_volumes,weighted,"));
    }

    #[test]
    fn overlap_table_shape() {
        let rows: Vec<OverlapFitRow> = overlap_row_order()
            .into_iter()
            .map(|(kind, y)| OverlapFitRow {
                kind,
                y_kind: y,
                left: FitTriple { mu: 0.0, sigma: 1.0, beta: 2.0 },
                right: FitTriple { mu: 0.0, sigma: 1.0, beta: 2.0 },
            })
            .collect();
        let text = render_overlap_table(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 10); // header + 3 kinds x 3 signals
        assert_eq!(lines[0], OVERLAP_TABLE_HEADER);
        assert!(lines[1].starts_with("price_factors,trade_signs,"));
        assert!(lines[9].starts_with("price_and_liquidity_factors,signed_volumes,"));
    }
}
