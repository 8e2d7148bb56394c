//! Pipeline configuration: a plain-text key-value file, validated with
//! every problem reported at once rather than first-failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use impactlab_core::response::{Subset, XKind, YKind};
use impactlab_core::statfit::BinRule;
use impactlab_core::overlap::NullDistribution;

/// The 96-symbol sample universe shipped with the tool.
pub const DEFAULT_UNIVERSE: &str = include_str!("../data/universe96.txt");

/// Validated pipeline configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// One event file per trading day, replayed and averaged with equal
    /// weight.
    pub events: Vec<PathBuf>,
    /// None = discover the universe from the first day's events.
    pub universe: Option<PathBuf>,
    /// Half-open [start, end) session window in ms.
    pub window: Option<(i64, i64)>,
    pub x_kinds: Vec<XKind>,
    pub y_kinds: Vec<YKind>,
    pub subsets: Vec<Subset>,
    pub renormalize_svol: bool,
    pub bins: BinRule,
    /// Trade subset feeding the overlap stage.
    pub overlap_subset: Subset,
    pub null_replicates: usize,
    pub null_distribution: NullDistribution,
    pub seed: u64,
    /// 0 = library default / IMPACTLAB_WORKERS.
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            events: Vec::new(),
            universe: None,
            window: None,
            x_kinds: vec![XKind::Midpoint, XKind::Spread],
            y_kinds: vec![YKind::Sign, YKind::Volume, YKind::SignedVolume],
            subsets: vec![Subset::All, Subset::Single, Subset::Multiple, Subset::Weighted],
            renormalize_svol: false,
            bins: BinRule::FreedmanDiaconis,
            overlap_subset: Subset::Single,
            null_replicates: 100,
            null_distribution: NullDistribution::Gaussian,
            seed: 1,
            workers: 0,
            out_dir: PathBuf::from("impactlab-out"),
        }
    }
}

impl PipelineConfig {
    /// Parse and validate a config file's text. Relative paths resolve
    /// against `base_dir`. All problems are reported together.
    pub fn parse(text: &str, base_dir: &Path) -> Result<PipelineConfig, Vec<String>> {
        let mut cfg = PipelineConfig::default();
        let mut errors: Vec<String> = Vec::new();
        let mut saw_out_dir = false;

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
            match key {
                "events" => cfg.events.push(resolve(base_dir, value)),
                "universe" => {
                    if value == "auto" {
                        cfg.universe = None;
                    } else {
                        cfg.universe = Some(resolve(base_dir, value));
                    }
                }
                "window" => match parse_window(value) {
                    Some(w) => cfg.window = Some(w),
                    None => errors.push(format!(
                        "line {line_no}: window must be `t0:t1` in ms with t0 < t1"
                    )),
                },
                "x_kinds" => match parse_list(value, parse_x) {
                    Ok(v) => cfg.x_kinds = v,
                    Err(bad) => errors.push(format!("line {line_no}: unknown x kind {bad:?}")),
                },
                "y_kinds" => match parse_list(value, parse_y) {
                    Ok(v) => cfg.y_kinds = v,
                    Err(bad) => errors.push(format!("line {line_no}: unknown y kind {bad:?}")),
                },
                "subsets" => match parse_list(value, parse_subset) {
                    Ok(v) => cfg.subsets = v,
                    Err(bad) => errors.push(format!("line {line_no}: unknown subset {bad:?}")),
                },
                "renormalize_svol" => match value.parse::<bool>() {
                    Ok(v) => cfg.renormalize_svol = v,
                    Err(_) => errors.push(format!("line {line_no}: expected true/false")),
                },
                "bins" => match value {
                    "fd" => cfg.bins = BinRule::FreedmanDiaconis,
                    "sturges" => cfg.bins = BinRule::Sturges,
                    other => match other.parse::<usize>() {
                        Ok(k) if k > 0 => cfg.bins = BinRule::Count(k),
                        _ => errors.push(format!(
                            "line {line_no}: bins must be fd, sturges or a positive count"
                        )),
                    },
                },
                "overlap_subset" => match parse_subset(value) {
                    Some(s) => cfg.overlap_subset = s,
                    None => errors.push(format!("line {line_no}: unknown subset {value:?}")),
                },
                "null_replicates" => match value.parse::<usize>() {
                    Ok(v) if v > 0 => cfg.null_replicates = v,
                    _ => errors.push(format!("line {line_no}: null_replicates must be >= 1")),
                },
                "null_distribution" => match value {
                    "gaussian" => cfg.null_distribution = NullDistribution::Gaussian,
                    "uniform" => cfg.null_distribution = NullDistribution::Uniform,
                    "permutation" => cfg.null_distribution = NullDistribution::PermuteEntries,
                    other => errors.push(format!(
                        "line {line_no}: unknown null distribution {other:?}"
                    )),
                },
                "seed" => match value.parse::<u64>() {
                    Ok(v) => cfg.seed = v,
                    Err(_) => errors.push(format!("line {line_no}: invalid seed")),
                },
                "workers" => match value.parse::<usize>() {
                    Ok(v) => cfg.workers = v,
                    Err(_) => errors.push(format!("line {line_no}: invalid worker count")),
                },
                "out_dir" => {
                    cfg.out_dir = resolve(base_dir, value);
                    saw_out_dir = true;
                }
                other => errors.push(format!("line {line_no}: unknown key {other:?}")),
            }
        }

        if !saw_out_dir {
            cfg.out_dir = base_dir.join("impactlab-out");
        }
        cfg.collect_semantic_errors(&mut errors);
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(errors)
        }
    }

    fn collect_semantic_errors(&self, errors: &mut Vec<String>) {
        if self.events.is_empty() {
            errors.push("no `events` files listed".to_string());
        }
        for path in &self.events {
            if !path.is_file() {
                errors.push(format!("events file {} does not exist", path.display()));
            }
        }
        if let Some(u) = &self.universe {
            if !u.is_file() {
                errors.push(format!("universe file {} does not exist", u.display()));
            }
        }
        if self.x_kinds.is_empty() {
            errors.push("x_kinds selection is empty".to_string());
        }
        if self.y_kinds.is_empty() {
            errors.push("y_kinds selection is empty".to_string());
        }
        if self.subsets.is_empty() {
            errors.push("subsets selection is empty".to_string());
        }
        if self.overlap_subset == Subset::Weighted {
            errors.push("overlap_subset cannot be weighted".to_string());
        }
    }

    /// Canonical text form; `parse(serialize(c))` revalidates to `c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            let _ = writeln!(s, "events = {}", e.display());
        }
        match &self.universe {
            Some(u) => {
                let _ = writeln!(s, "universe = {}", u.display());
            }
            None => {
                let _ = writeln!(s, "universe = auto");
            }
        }
        if let Some((t0, t1)) = self.window {
            let _ = writeln!(s, "window = {t0}:{t1}");
        }
        let xs: Vec<&str> = self.x_kinds.iter().map(|x| x_short(*x)).collect();
        let _ = writeln!(s, "x_kinds = {}", xs.join(","));
        let ys: Vec<&str> = self.y_kinds.iter().map(|y| y_short(*y)).collect();
        let _ = writeln!(s, "y_kinds = {}", ys.join(","));
        let subs: Vec<&str> = self.subsets.iter().map(|x| x.as_str()).collect();
        let _ = writeln!(s, "subsets = {}", subs.join(","));
        let _ = writeln!(s, "renormalize_svol = {}", self.renormalize_svol);
        let bins = match self.bins {
            BinRule::FreedmanDiaconis => "fd".to_string(),
            BinRule::Sturges => "sturges".to_string(),
            BinRule::Count(k) => k.to_string(),
        };
        let _ = writeln!(s, "bins = {bins}");
        let _ = writeln!(s, "overlap_subset = {}", self.overlap_subset.as_str());
        let _ = writeln!(s, "null_replicates = {}", self.null_replicates);
        let _ = writeln!(s, "null_distribution = {}", self.null_distribution.as_str());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "workers = {}", self.workers);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        s
    }

    /// Only the fields that shape the outputs; hashed into the manifest
    /// for the stage cache. The output directory is excluded so the same
    /// config reproduces the same manifest wherever it lands.
    pub fn cache_key_text(&self) -> String {
        self.serialize()
            .lines()
            .filter(|l| !l.starts_with("out_dir = "))
            .collect::<Vec<_>>()
            .join("
")
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn parse_window(value: &str) -> Option<(i64, i64)> {
    let (a, b) = value.split_once(':')?;
    let t0: i64 = a.parse().ok()?;
    let t1: i64 = b.parse().ok()?;
    (t0 < t1).then_some((t0, t1))
}

fn parse_list<T>(value: &str, one: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, String> {
    let mut out = Vec::new();
    for item in value.split(',') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        match one(item) {
            Some(v) => out.push(v),
            None => return Err(item.to_string()),
        }
    }
    Ok(out)
}

pub fn parse_x(s: &str) -> Option<XKind> {
    match s {
        "m" | "midpoint" => Some(XKind::Midpoint),
        "s" | "spread" => Some(XKind::Spread),
        _ => None,
    }
}

pub fn parse_y(s: &str) -> Option<YKind> {
    match s {
        "sign" => Some(YKind::Sign),
        "vol" | "volume" => Some(YKind::Volume),
        "svol" | "signed_volume" => Some(YKind::SignedVolume),
        _ => None,
    }
}

pub fn parse_subset(s: &str) -> Option<Subset> {
    match s {
        "all" => Some(Subset::All),
        "single" => Some(Subset::Single),
        "multiple" => Some(Subset::Multiple),
        "weighted" => Some(Subset::Weighted),
        _ => None,
    }
}

pub fn x_short(x: XKind) -> &'static str {
    match x {
        XKind::Midpoint => "m",
        XKind::Spread => "s",
    }
}

pub fn y_short(y: YKind) -> &'static str {
    match y {
        YKind::Sign => "sign",
        YKind::Volume => "vol",
        YKind::SignedVolume => "svol",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn minimal_config_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let events = dir.path().join("day0.csv");
        fs::write(&events, "ts_ms,stock,kind,side,price_ticks,volume,order_id\n").unwrap();
        let text = "events = day0.csv\n";
        let cfg = PipelineConfig::parse(text, dir.path()).unwrap();
        assert_eq!(cfg.events, vec![events]);
        assert_eq!(cfg.x_kinds.len(), 2);
        assert_eq!(cfg.y_kinds.len(), 3);
        assert_eq!(cfg.subsets.len(), 4);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.null_replicates, 100);
    }

    #[test]
    fn two_bad_paths_yield_exactly_two_errors() {
        let dir = tempfile::tempdir().unwrap();
        let text = "events = missing_a.csv\nevents = missing_b.csv\n";
        let errors = PipelineConfig::parse(text, dir.path()).unwrap_err();
        assert_eq!(errors.len(), 2, "errors: {errors:?}");
        assert!(errors.iter().all(|e| e.contains("does not exist")));
    }

    #[test]
    fn all_problems_reported_at_once() {
        let dir = tempfile::tempdir().unwrap();
        let text = "bogus = 1\nseed = x\nsubsets = \n";
        let errors = PipelineConfig::parse(text, dir.path()).unwrap_err();
        // Unknown key, bad seed, empty subsets, and no events.
        assert!(errors.len() >= 4, "errors: {errors:?}");
    }

    #[test]
    fn serialize_revalidates_identically() {
        let dir = tempfile::tempdir().unwrap();
        let events = dir.path().join("day0.csv");
        fs::write(&events, "header\n").unwrap();
        let text = format!(
            "events = {}\nseed = 77\nwindow = 1000:5000\nx_kinds = m\ny_kinds = sign,svol\n\
             subsets = all,weighted\nbins = 31\nnull_replicates = 7\n\
             null_distribution = permutation\nworkers = 3\nout_dir = {}\n",
            events.display(),
            dir.path().join("out").display(),
        );
        let cfg = PipelineConfig::parse(&text, dir.path()).unwrap();
        let round = PipelineConfig::parse(&cfg.serialize(), dir.path()).unwrap();
        assert_eq!(cfg, round);
        assert_eq!(cfg.serialize(), round.serialize());
    }

    #[test]
    fn default_universe_lists_96_symbols() {
        let syms = impactlab_core::io::read_universe(DEFAULT_UNIVERSE.as_bytes()).unwrap();
        assert_eq!(syms.len(), 96);
        assert!(syms.contains(&"AAPL".to_string()));
        assert!(syms.contains(&"YHOO".to_string()));
    }
}
