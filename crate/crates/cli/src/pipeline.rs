//! End-to-end pipeline: replay -> classify -> respond -> svd -> fit ->
//! overlap -> null -> report, with every intermediate artifact on disk so
//! any stage can be inspected or rerun in isolation.
//!
//! A stage is skipped when the previous run's manifest matches the
//! current config and all of the stage's files are present. Outputs are
//! deterministic: rerunning a config reproduces every artifact byte for
//! byte (wall-clock timings live in `timings.json`, which is not part of
//! the reproducible bundle).

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use impactlab_core::classify::PairWeights;
use impactlab_core::error::Error as CoreError;
use impactlab_core::io as fio;
use impactlab_core::linalg;
use impactlab_core::lob::{self, OrderEvent, ReplayConfig, StockSeries};
use impactlab_core::matrix::Matrix;
use impactlab_core::overlap::{self, OverlapKind, OverlapMatrix};
use impactlab_core::par;
use impactlab_core::response::{
    self, PanelOptions, ResponseMatrix, Selection, Subset, XKind, YKind,
};
use impactlab_core::statfit::{self, TlsParams, VectorSide};
use impactlab_core::symbols::{SymbolId, SymbolTable};

use crate::config::{x_short, y_short, PipelineConfig};
use crate::tables;

/// A pipeline failure, naming the stage and the artifact being built.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("stage {stage} failed ({context}): {source}")]
    Stage {
        stage: &'static str,
        context: String,
        source: CoreError,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Stage { source, .. } => exit_code_for(source),
        }
    }
}

/// Exit-code policy: 2 config, 3 data integrity, 4 non-convergence.
pub fn exit_code_for(err: &CoreError) -> i32 {
    match err {
        CoreError::Config(_) | CoreError::Calibration(_) => 2,
        CoreError::Parse { .. } | CoreError::Ordering { .. } | CoreError::Integrity(_) => 3,
        CoreError::NonConvergence(_) => 4,
        _ => 1,
    }
}

fn stage_ctx<T>(
    stage: &'static str,
    context: impl Into<String>,
    r: impactlab_core::Result<T>,
) -> Result<T, RunError> {
    r.map_err(|source| RunError::Stage {
        stage,
        context: context.into(),
        source,
    })
}

fn io_ctx<T>(
    stage: &'static str,
    context: impl Into<String>,
    r: std::io::Result<T>,
) -> Result<T, RunError> {
    r.map_err(|e| RunError::Stage {
        stage,
        context: context.into(),
        source: CoreError::Io(e),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub name: &'static str,
    pub seconds: f64,
    pub skipped: bool,
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: String,
    config_hash: String,
    seed: u64,
    stages: BTreeMap<String, Vec<String>>,
    files: BTreeMap<String, String>,
}

const STAGES: [&str; 8] = [
    "replay", "classify", "respond", "svd", "fit", "overlap", "null", "report",
];

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Run the whole pipeline for a validated config.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary, RunError> {
    let out = config.out_dir.clone();
    io_ctx("replay", "creating output directory", fs::create_dir_all(&out))?;
    let config_hash = sha256_hex(config.cache_key_text().as_bytes());
    let cache_valid = match fs::read(out.join("manifest.json")) {
        Ok(bytes) => serde_json::from_slice::<Manifest>(&bytes)
            .map(|m| m.config_hash == config_hash)
            .unwrap_or(false),
        Err(_) => false,
    };

    let mut timings: Vec<StageTiming> = Vec::new();
    let mut stage_files: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let days = config.events.len();

    // ---- replay ------------------------------------------------------
    let universe = run_replay(config, &out, cache_valid, &mut timings, &mut stage_files)?;
    let symbols: Vec<String> = universe.names().to_vec();
    let n = symbols.len();

    // ---- classify ----------------------------------------------------
    {
        let files: Vec<PathBuf> = (0..days)
            .flat_map(|d| {
                [
                    out.join(format!("classify/day_{d:02}.weights.csv")),
                    out.join(format!("classify/day_{d:02}.counts.json")),
                ]
            })
            .collect();
        let cached = stage_cached(cache_valid, &files);
        record_stage(&mut stage_files, "classify", &out, &files);
        let t0 = Instant::now();
        if !cached {
            io_ctx("classify", "creating classify dir", fs::create_dir_all(out.join("classify")))?;
            for d in 0..days {
                let series = load_day_series("classify", &out, d, &universe)?;
                let quotes: Vec<_> = series.iter().map(|s| s.quotes.clone()).collect();
                let trades: Vec<_> = series.iter().map(|s| s.trades.clone()).collect();
                let weights = stage_ctx(
                    "classify",
                    format!("day {d}"),
                    impactlab_core::classify::pair_weights(&quotes, &trades),
                )?;
                let mut buf = Vec::new();
                stage_ctx(
                    "classify",
                    format!("day {d} weights"),
                    fio::write_weights_csv(&weights, &symbols, &mut buf),
                )?;
                write_file(&out.join(format!("classify/day_{d:02}.weights.csv")), &buf)?;
                #[derive(Serialize)]
                struct Counts<'a> {
                    symbols: &'a [String],
                    single: &'a [usize],
                    multiple: &'a [usize],
                    dropped: &'a [usize],
                }
                let json = stage_ctx(
                    "classify",
                    format!("day {d} counts"),
                    fio::to_json_pretty(&Counts {
                        symbols: &symbols,
                        single: &weights.single,
                        multiple: &weights.multiple,
                        dropped: &weights.dropped,
                    }),
                )?;
                write_file(
                    &out.join(format!("classify/day_{d:02}.counts.json")),
                    json.as_bytes(),
                )?;
            }
        }
        timings.push(StageTiming {
            name: "classify",
            seconds: t0.elapsed().as_secs_f64(),
            skipped: cached,
        });
    }

    // ---- respond -----------------------------------------------------
    let written = written_selections(config);
    {
        let files: Vec<PathBuf> = written
            .iter()
            .flat_map(|sel| {
                let id = matrix_id(*sel);
                [
                    out.join(format!("respond/{id}.csv")),
                    out.join(format!("respond/{id}.meta.json")),
                ]
            })
            .collect();
        let cached = stage_cached(cache_valid, &files);
        record_stage(&mut stage_files, "respond", &out, &files);
        let t0 = Instant::now();
        if !cached {
            io_ctx("respond", "creating respond dir", fs::create_dir_all(out.join("respond")))?;
            let averaged = compute_responses_all_days(config, &out, &universe, &written)?;
            for (sel, matrix) in written.iter().zip(&averaged) {
                let id = matrix_id(*sel);
                let mut buf = Vec::new();
                stage_ctx(
                    "respond",
                    format!("matrix {id}"),
                    fio::write_response_csv(matrix, &symbols, &mut buf),
                )?;
                write_file(&out.join(format!("respond/{id}.csv")), &buf)?;
                let meta = fio::ResponseMeta::of(matrix, &symbols);
                let json = stage_ctx("respond", format!("matrix {id} meta"), fio::to_json_pretty(&meta))?;
                write_file(&out.join(format!("respond/{id}.meta.json")), json.as_bytes())?;
            }
        }
        timings.push(StageTiming {
            name: "respond",
            seconds: t0.elapsed().as_secs_f64(),
            skipped: cached,
        });
    }

    // ---- svd ---------------------------------------------------------
    {
        let files: Vec<PathBuf> = written
            .iter()
            .flat_map(|sel| {
                let id = matrix_id(*sel);
                [
                    out.join(format!("svd/{id}.u.csv")),
                    out.join(format!("svd/{id}.s.csv")),
                    out.join(format!("svd/{id}.v.csv")),
                    out.join(format!("svd/{id}.meta.json")),
                ]
            })
            .collect();
        let cached = stage_cached(cache_valid, &files);
        record_stage(&mut stage_files, "svd", &out, &files);
        let t0 = Instant::now();
        if !cached {
            io_ctx("svd", "creating svd dir", fs::create_dir_all(out.join("svd")))?;
            let results: Vec<Result<(), RunError>> = par::map_slice(&written, |sel| {
                let id = matrix_id(*sel);
                let csv = read_labeled("svd", &out.join(format!("respond/{id}.csv")))?;
                let (dense, imputed) = csv.to_dense(0.0);
                let d = stage_ctx("svd", format!("matrix {id}"), linalg::svd(&dense))?;
                write_svd_triple(&out.join("svd"), &id, &d, &symbols, imputed)
            });
            for r in results {
                r?;
            }
        }
        timings.push(StageTiming {
            name: "svd",
            seconds: t0.elapsed().as_secs_f64(),
            skipped: cached,
        });
    }

    // ---- fit ---------------------------------------------------------
    let requested = requested_selections(config);
    {
        let mut files: Vec<PathBuf> = Vec::new();
        for sel in &requested {
            let id = matrix_id(*sel);
            files.push(out.join(format!("fit/params/{id}.json")));
            files.push(out.join(format!("density/{id}.u.csv")));
            files.push(out.join(format!("density/{id}.v.csv")));
        }
        if config.x_kinds.contains(&XKind::Midpoint) {
            files.push(out.join("fit/table_price.csv"));
        }
        if config.x_kinds.contains(&XKind::Spread) {
            files.push(out.join("fit/table_liquidity.csv"));
        }
        let cached = stage_cached(cache_valid, &files);
        record_stage(&mut stage_files, "fit", &out, &files);
        let t0 = Instant::now();
        if !cached {
            for dir in ["fit", "fit/params", "density"] {
                io_ctx("fit", "creating fit dirs", fs::create_dir_all(out.join(dir)))?;
            }
            let fitted: Vec<Result<SideFits, RunError>> = par::map_slice(&requested, |sel| {
                fit_one_matrix(config, &out, *sel)
            });
            let mut by_sel: BTreeMap<String, SideFits> = BTreeMap::new();
            for (sel, f) in requested.iter().zip(fitted) {
                by_sel.insert(matrix_id(*sel), f?);
            }
            for x in &config.x_kinds {
                let table_name = match x {
                    XKind::Midpoint => "fit/table_price.csv",
                    XKind::Spread => "fit/table_liquidity.csv",
                };
                let mut rows = Vec::new();
                for (y, subset) in tables::response_row_order() {
                    if !config.y_kinds.contains(&y) || !config.subsets.contains(&subset) {
                        continue;
                    }
                    let id = matrix_id((*x, y, subset));
                    let fits = &by_sel[&id];
                    rows.push(tables::ResponseFitRow {
                        y_kind: y,
                        subset,
                        left: fits.u_triple(),
                        right: fits.v_triple(),
                    });
                }
                write_file(
                    &out.join(table_name),
                    tables::render_response_table(&rows).as_bytes(),
                )?;
            }
        }
        timings.push(StageTiming {
            name: "fit",
            seconds: t0.elapsed().as_secs_f64(),
            skipped: cached,
        });
    }

    // ---- overlap -----------------------------------------------------
    let overlap_applicable = config.x_kinds.contains(&XKind::Midpoint)
        && config.x_kinds.contains(&XKind::Spread)
        && n >= 2;
    {
        let mut files: Vec<PathBuf> = Vec::new();
        if overlap_applicable {
            for y in &config.y_kinds {
                for kind in [OverlapKind::Mm, OverlapKind::Ss, OverlapKind::Ms] {
                    let id = overlap_id(kind, *y);
                    files.push(out.join(format!("overlap/{id}.csv")));
                    files.push(out.join(format!("overlap/{id}.heat.csv")));
                    files.push(out.join(format!("overlap/svd/{id}.u.csv")));
                    files.push(out.join(format!("overlap/svd/{id}.s.csv")));
                    files.push(out.join(format!("overlap/svd/{id}.v.csv")));
                    files.push(out.join(format!("overlap/params/{id}.json")));
                }
            }
            files.push(out.join("overlap/table_overlap.csv"));
        }
        let cached = !overlap_applicable || stage_cached(cache_valid, &files);
        record_stage(&mut stage_files, "overlap", &out, &files);
        let t0 = Instant::now();
        if overlap_applicable && !stage_cached(cache_valid, &files) {
            run_overlap_stage(config, &out, &symbols)?;
        }
        timings.push(StageTiming {
            name: "overlap",
            seconds: t0.elapsed().as_secs_f64(),
            skipped: cached,
        });
    }

    // ---- null --------------------------------------------------------
    {
        let mut files: Vec<PathBuf> = Vec::new();
        if overlap_applicable {
            for y in &config.y_kinds {
                for kind in [OverlapKind::Mm, OverlapKind::Ss, OverlapKind::Ms] {
                    let id = overlap_id(kind, *y);
                    files.push(out.join(format!("null/{id}.u_density.csv")));
                    files.push(out.join(format!("null/{id}.v_density.csv")));
                    files.push(out.join(format!("null/{id}.fits.json")));
                }
            }
            files.push(out.join("null/comparison.csv"));
        }
        let cached = !overlap_applicable || stage_cached(cache_valid, &files);
        record_stage(&mut stage_files, "null", &out, &files);
        let t0 = Instant::now();
        if overlap_applicable && !stage_cached(cache_valid, &files) {
            run_null_stage(config, &out)?;
        }
        timings.push(StageTiming {
            name: "null",
            seconds: t0.elapsed().as_secs_f64(),
            skipped: cached,
        });
    }

    // ---- report ------------------------------------------------------
    {
        let t0 = Instant::now();
        let mut file_hashes: BTreeMap<String, String> = BTreeMap::new();
        let mut paths: Vec<PathBuf> = Vec::new();
        collect_files(&out, &mut paths)?;
        paths.sort();
        for path in paths {
            let rel = path.strip_prefix(&out).unwrap().to_string_lossy().replace('\\', "/");
            if rel == "manifest.json" || rel == "timings.json" {
                continue;
            }
            let bytes = io_ctx("report", format!("hashing {rel}"), fs::read(&path))?;
            file_hashes.insert(rel, sha256_hex(&bytes));
        }
        let manifest = Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.clone(),
            seed: config.seed,
            stages: stage_files.clone(),
            files: file_hashes,
        };
        let json = stage_ctx("report", "manifest", fio::to_json_pretty(&manifest))?;
        write_file(&out.join("manifest.json"), json.as_bytes())?;
        timings.push(StageTiming {
            name: "report",
            seconds: t0.elapsed().as_secs_f64(),
            skipped: false,
        });
        #[derive(Serialize)]
        struct Timings<'a> {
            stages: &'a [StageTiming],
        }
        let json = stage_ctx(
            "report",
            "timings",
            fio::to_json_pretty(&Timings { stages: &timings }),
        )?;
        write_file(&out.join("timings.json"), json.as_bytes())?;
    }

    debug_assert_eq!(STAGES.len(), timings.len());
    Ok(RunSummary {
        out_dir: out,
        timings,
    })
}

// ---------------------------------------------------------------------
// Stage implementations.
// ---------------------------------------------------------------------

fn run_replay(
    config: &PipelineConfig,
    out: &Path,
    cache_valid: bool,
    timings: &mut Vec<StageTiming>,
    stage_files: &mut BTreeMap<String, Vec<String>>,
) -> Result<SymbolTable, RunError> {
    let t0 = Instant::now();
    let days = config.events.len();

    // Cached iff universe.txt exists and implies a complete file set.
    let universe_path = out.join("replay/universe.txt");
    let cached_universe: Option<Vec<String>> = if cache_valid && universe_path.is_file() {
        fs::read(&universe_path)
            .ok()
            .and_then(|b| fio::read_universe(&b[..]).ok())
    } else {
        None
    };
    if let Some(symbols) = cached_universe {
        let mut files = vec![universe_path.clone()];
        for d in 0..days {
            for sym in &symbols {
                files.push(out.join(format!("replay/day_{d:02}/{sym}.quotes.csv")));
                files.push(out.join(format!("replay/day_{d:02}/{sym}.trades.csv")));
            }
        }
        if files.iter().all(|f| f.is_file()) {
            record_stage(stage_files, "replay", out, &files);
            timings.push(StageTiming {
                name: "replay",
                seconds: t0.elapsed().as_secs_f64(),
                skipped: true,
            });
            let table = stage_ctx(
                "replay",
                "cached universe",
                SymbolTable::from_universe(&symbols),
            )?;
            return Ok(table);
        }
    }

    // Parse all days first so the universe is fixed before writing.
    let mut parsed_days: Vec<(SymbolTable, Vec<OrderEvent>)> = Vec::new();
    for (d, path) in config.events.iter().enumerate() {
        let bytes = io_ctx("replay", format!("reading {}", path.display()), fs::read(path))?;
        let parsed = stage_ctx(
            "replay",
            format!("parsing day {d} ({})", path.display()),
            lob::parse_events(&bytes),
        )?;
        parsed_days.push(parsed);
    }

    let universe: SymbolTable = match &config.universe {
        Some(path) => {
            let bytes = io_ctx("replay", format!("reading {}", path.display()), fs::read(path))?;
            let symbols = stage_ctx("replay", "universe file", fio::read_universe(&bytes[..]))?;
            stage_ctx("replay", "universe file", SymbolTable::from_universe(&symbols))?
        }
        None => parsed_days[0].0.clone(),
    };

    let replay_cfg = ReplayConfig {
        window: config.window,
    };
    let mut files = vec![universe_path.clone()];
    io_ctx("replay", "creating replay dir", fs::create_dir_all(out.join("replay")))?;
    let mut universe_text = String::new();
    for name in universe.names() {
        universe_text.push_str(name);
        universe_text.push('\n');
    }
    write_file(&universe_path, universe_text.as_bytes())?;

    for (d, (day_table, day_events)) in parsed_days.into_iter().enumerate() {
        let remapped = remap_events("replay", d, day_events, &day_table, &universe)?;
        let series = stage_ctx(
            "replay",
            format!("replaying day {d}"),
            lob::replay(&remapped, universe.len(), &replay_cfg),
        )?;
        let day_dir = out.join(format!("replay/day_{d:02}"));
        io_ctx("replay", "creating day dir", fs::create_dir_all(&day_dir))?;
        for (idx, name) in universe.names().iter().enumerate() {
            let mut buf = Vec::new();
            stage_ctx(
                "replay",
                format!("day {d} quotes for {name}"),
                fio::write_quotes_csv(&series[idx].quotes, &mut buf),
            )?;
            let qpath = day_dir.join(format!("{name}.quotes.csv"));
            write_file(&qpath, &buf)?;
            files.push(qpath);
            let mut buf = Vec::new();
            stage_ctx(
                "replay",
                format!("day {d} trades for {name}"),
                fio::write_trades_csv(&series[idx].trades, &mut buf),
            )?;
            let tpath = day_dir.join(format!("{name}.trades.csv"));
            write_file(&tpath, &buf)?;
            files.push(tpath);
        }
    }
    record_stage(stage_files, "replay", out, &files);
    timings.push(StageTiming {
        name: "replay",
        seconds: t0.elapsed().as_secs_f64(),
        skipped: false,
    });
    Ok(universe)
}

/// Remap a day's events from its own symbol table onto the universe.
fn remap_events(
    stage: &'static str,
    day: usize,
    events: Vec<OrderEvent>,
    day_table: &SymbolTable,
    universe: &SymbolTable,
) -> Result<Vec<OrderEvent>, RunError> {
    let mut mapping: Vec<Option<SymbolId>> = Vec::with_capacity(day_table.len());
    for (_, name) in day_table.iter() {
        mapping.push(universe.get(name));
    }
    events
        .into_iter()
        .map(|mut e| {
            match mapping[e.stock.index()] {
                Some(id) => {
                    e.stock = id;
                    Ok(e)
                }
                None => Err(RunError::Stage {
                    stage,
                    context: format!("day {day}"),
                    source: CoreError::Integrity(format!(
                        "event references symbol {:?} outside the configured universe",
                        day_table.name(e.stock)
                    )),
                }),
            }
        })
        .collect()
}

fn load_day_series(
    stage: &'static str,
    out: &Path,
    day: usize,
    universe: &SymbolTable,
) -> Result<Vec<StockSeries>, RunError> {
    let day_dir = out.join(format!("replay/day_{day:02}"));
    let mut series = Vec::with_capacity(universe.len());
    for (id, name) in universe.iter() {
        let qpath = day_dir.join(format!("{name}.quotes.csv"));
        let quotes = stage_ctx(
            stage,
            format!("reading {}", qpath.display()),
            fs::File::open(&qpath)
                .map_err(CoreError::Io)
                .and_then(|f| fio::read_quotes_csv(BufReader::new(f), id)),
        )?;
        let tpath = day_dir.join(format!("{name}.trades.csv"));
        let trades = stage_ctx(
            stage,
            format!("reading {}", tpath.display()),
            fs::File::open(&tpath)
                .map_err(CoreError::Io)
                .and_then(|f| fio::read_trades_csv(BufReader::new(f), id)),
        )?;
        series.push(StockSeries { quotes, trades });
    }
    Ok(series)
}

fn load_day_weights(
    stage: &'static str,
    out: &Path,
    day: usize,
) -> Result<PairWeights, RunError> {
    let path = out.join(format!("classify/day_{day:02}.weights.csv"));
    let csv = read_labeled(stage, &path)?;
    stage_ctx(stage, format!("weights day {day}"), fio::weights_from_csv(&csv))
}

/// The selections the pipeline must write: everything requested plus the
/// single/multiple matrices the overlap stage reads.
pub fn written_selections(config: &PipelineConfig) -> Vec<Selection> {
    let mut out: Vec<Selection> = Vec::new();
    let mut push = |sel: Selection| {
        if !out.contains(&sel) {
            out.push(sel);
        }
    };
    for x in &config.x_kinds {
        for y in &config.y_kinds {
            for subset in &config.subsets {
                push((*x, *y, *subset));
            }
        }
    }
    if config.x_kinds.contains(&XKind::Midpoint) && config.x_kinds.contains(&XKind::Spread) {
        for y in &config.y_kinds {
            push((XKind::Midpoint, *y, config.overlap_subset));
            push((XKind::Spread, *y, config.overlap_subset));
        }
    }
    out
}

pub fn requested_selections(config: &PipelineConfig) -> Vec<Selection> {
    let mut out = Vec::new();
    for x in &config.x_kinds {
        for y in &config.y_kinds {
            for subset in &config.subsets {
                out.push((*x, *y, *subset));
            }
        }
    }
    out
}

pub fn matrix_id((x, y, subset): Selection) -> String {
    format!("{}_{}_{}", x_short(x), y_short(y), subset.as_str())
}

pub fn overlap_id(kind: OverlapKind, y: YKind) -> String {
    format!("C{}_{}", kind.as_str(), y_short(y))
}

/// Compute all written selections, day by day, then average.
fn compute_responses_all_days(
    config: &PipelineConfig,
    out: &Path,
    universe: &SymbolTable,
    written: &[Selection],
) -> Result<Vec<ResponseMatrix>, RunError> {
    // Base (non-weighted) selections to accumulate directly.
    let mut base: Vec<Selection> = Vec::new();
    for (x, y, subset) in written {
        if *subset == Subset::Weighted {
            for s in [Subset::Single, Subset::Multiple] {
                if !base.contains(&(*x, *y, s)) {
                    base.push((*x, *y, s));
                }
            }
        } else if !base.contains(&(*x, *y, *subset)) {
            base.push((*x, *y, *subset));
        }
    }

    let days = config.events.len();
    let mut per_day: Vec<Vec<ResponseMatrix>> = Vec::with_capacity(days);
    for d in 0..days {
        let series = load_day_series("respond", out, d, universe)?;
        let panel = stage_ctx(
            "respond",
            format!("normalizing day {d}"),
            response::prepare_panel(
                &series,
                PanelOptions {
                    renormalize_signed_volume: config.renormalize_svol,
                },
            ),
        )?;
        let base_mats = stage_ctx(
            "respond",
            format!("accumulating day {d}"),
            response::compute_responses(&panel, &base),
        )?;
        let weights = if written.iter().any(|(_, _, s)| *s == Subset::Weighted) {
            Some(load_day_weights("respond", out, d)?)
        } else {
            None
        };
        let mut day_mats: Vec<ResponseMatrix> = Vec::with_capacity(written.len());
        for sel in written {
            let (x, y, subset) = *sel;
            if subset == Subset::Weighted {
                let st = &base_mats[base.iter().position(|s| *s == (x, y, Subset::Single)).unwrap()];
                let mt = &base_mats[base.iter().position(|s| *s == (x, y, Subset::Multiple)).unwrap()];
                let w = weights.as_ref().expect("weights loaded when weighted requested");
                day_mats.push(stage_ctx(
                    "respond",
                    format!("weighting {} day {d}", matrix_id(*sel)),
                    response::weighted_response(st, mt, w),
                )?);
            } else {
                let idx = base.iter().position(|s| *s == (x, y, subset)).unwrap();
                day_mats.push(base_mats[idx].clone());
            }
        }
        per_day.push(day_mats);
    }

    // Equal-weight average across days, per selection.
    let mut averaged = Vec::with_capacity(written.len());
    for (k, sel) in written.iter().enumerate() {
        let days_k: Vec<ResponseMatrix> = per_day.iter().map(|d| d[k].clone()).collect();
        averaged.push(stage_ctx(
            "respond",
            format!("averaging {}", matrix_id(*sel)),
            response::average_days(&days_k),
        )?);
    }
    Ok(averaged)
}

fn write_svd_triple(
    dir: &Path,
    id: &str,
    d: &linalg::SvdResult,
    symbols: &[String],
    imputed: usize,
) -> Result<(), RunError> {
    let factors = fio::factor_labels(d.n());
    let mut buf = Vec::new();
    stage_ctx(
        "svd",
        format!("{id} left vectors"),
        fio::write_dense_csv(&d.u, symbols, &factors, &mut buf),
    )?;
    write_file(&dir.join(format!("{id}.u.csv")), &buf)?;

    let mut s_text = String::from("index,singular_value\n");
    for (i, sv) in d.s.iter().enumerate() {
        s_text.push_str(&format!("{},{sv}\n", i + 1));
    }
    write_file(&dir.join(format!("{id}.s.csv")), s_text.as_bytes())?;

    let mut buf = Vec::new();
    stage_ctx(
        "svd",
        format!("{id} right vectors"),
        fio::write_dense_csv(&d.v, symbols, &factors, &mut buf),
    )?;
    write_file(&dir.join(format!("{id}.v.csv")), &buf)?;

    #[derive(Serialize)]
    struct SvdMeta {
        imputed_entries: usize,
    }
    let json = stage_ctx(
        "svd",
        format!("{id} meta"),
        fio::to_json_pretty(&SvdMeta {
            imputed_entries: imputed,
        }),
    )?;
    write_file(&dir.join(format!("{id}.meta.json")), json.as_bytes())?;
    Ok(())
}

/// Normal and t location-scale fits of both singular-vector sides.
#[derive(Serialize)]
struct SideFits {
    u_normal: impactlab_core::statfit::NormalParams,
    u_tls: TlsParams,
    v_normal: impactlab_core::statfit::NormalParams,
    v_tls: TlsParams,
    n_entries: usize,
}

impl SideFits {
    fn u_triple(&self) -> tables::FitTriple {
        tables::FitTriple {
            mu: self.u_tls.mu,
            sigma: self.u_tls.sigma,
            beta: self.u_tls.beta,
        }
    }

    fn v_triple(&self) -> tables::FitTriple {
        tables::FitTriple {
            mu: self.v_tls.mu,
            sigma: self.v_tls.sigma,
            beta: self.v_tls.beta,
        }
    }
}

fn pooled_entries(stage: &'static str, path: &Path) -> Result<Vec<f64>, RunError> {
    let csv = read_labeled(stage, path)?;
    let (dense, missing) = csv.to_dense(0.0);
    if missing > 0 {
        return Err(RunError::Stage {
            stage,
            context: path.display().to_string(),
            source: CoreError::Incompatible("singular-vector file has missing entries".into()),
        });
    }
    Ok(dense.data().to_vec())
}

fn fit_entries(
    stage: &'static str,
    context: String,
    entries: &[f64],
) -> Result<(impactlab_core::statfit::NormalParams, TlsParams), RunError> {
    let normal = stage_ctx(stage, context.clone(), statfit::fit_normal(entries))?;
    let tls = stage_ctx(stage, context, statfit::fit_tls(entries))?;
    Ok((normal, tls))
}

fn write_density_export(
    stage: &'static str,
    path: &Path,
    entries: &[f64],
    bins: statfit::BinRule,
    normal: &impactlab_core::statfit::NormalParams,
    tls: &TlsParams,
) -> Result<(), RunError> {
    let density = stage_ctx(
        stage,
        format!("binning {}", path.display()),
        statfit::empirical_density(entries, bins),
    )?;
    let mut buf = Vec::new();
    stage_ctx(
        stage,
        format!("writing {}", path.display()),
        fio::write_density_csv(&density, normal, tls, &mut buf),
    )?;
    write_file(path, &buf)
}

fn fit_one_matrix(
    config: &PipelineConfig,
    out: &Path,
    sel: Selection,
) -> Result<SideFits, RunError> {
    let id = matrix_id(sel);
    let u = pooled_entries("fit", &out.join(format!("svd/{id}.u.csv")))?;
    let v = pooled_entries("fit", &out.join(format!("svd/{id}.v.csv")))?;
    let (u_normal, u_tls) = fit_entries("fit", format!("{id} left entries"), &u)?;
    let (v_normal, v_tls) = fit_entries("fit", format!("{id} right entries"), &v)?;
    let fits = SideFits {
        u_normal,
        u_tls: u_tls.clone(),
        v_normal,
        v_tls: v_tls.clone(),
        n_entries: u.len(),
    };
    let json = stage_ctx("fit", format!("{id} params"), fio::to_json_pretty(&fits))?;
    write_file(&out.join(format!("fit/params/{id}.json")), json.as_bytes())?;
    write_density_export(
        "fit",
        &out.join(format!("density/{id}.u.csv")),
        &u,
        config.bins,
        &fits.u_normal,
        &fits.u_tls,
    )?;
    write_density_export(
        "fit",
        &out.join(format!("density/{id}.v.csv")),
        &v,
        config.bins,
        &fits.v_normal,
        &fits.v_tls,
    )?;
    Ok(fits)
}

fn run_overlap_stage(
    config: &PipelineConfig,
    out: &Path,
    _symbols: &[String],
) -> Result<(), RunError> {
    for dir in ["overlap", "overlap/svd", "overlap/params"] {
        io_ctx("overlap", "creating overlap dirs", fs::create_dir_all(out.join(dir)))?;
    }
    let mut table_rows = Vec::new();
    for y in &config.y_kinds {
        // Normalized factors from the svd stage's left vectors.
        let id_m = matrix_id((XKind::Midpoint, *y, config.overlap_subset));
        let id_s = matrix_id((XKind::Spread, *y, config.overlap_subset));
        let u_m = read_dense("overlap", &out.join(format!("svd/{id_m}.u.csv")))?;
        let u_s = read_dense("overlap", &out.join(format!("svd/{id_s}.u.csv")))?;
        let f_m = stage_ctx(
            "overlap",
            format!("normalizing factors of {id_m}"),
            overlap::normalize_factors(&u_m),
        )?;
        let f_s = stage_ctx(
            "overlap",
            format!("normalizing factors of {id_s}"),
            overlap::normalize_factors(&u_s),
        )?;
        for kind in [OverlapKind::Mm, OverlapKind::Ss, OverlapKind::Ms] {
            let (a, b) = match kind {
                OverlapKind::Mm => (&f_m, &f_m),
                OverlapKind::Ss => (&f_s, &f_s),
                OverlapKind::Ms => (&f_m, &f_s),
            };
            let id = overlap_id(kind, *y);
            let c = stage_ctx(
                "overlap",
                format!("building {id}"),
                overlap::overlap_matrix(a, b, kind),
            )?;
            let factors = fio::factor_labels(c.c.rows());
            let mut buf = Vec::new();
            stage_ctx(
                "overlap",
                format!("writing {id}"),
                fio::write_dense_csv(&c.c, &factors, &factors, &mut buf),
            )?;
            write_file(&out.join(format!("overlap/{id}.csv")), &buf)?;
            let mut buf = Vec::new();
            stage_ctx(
                "overlap",
                format!("writing {id} heatmap"),
                fio::write_heatmap_csv(&c.c, &mut buf),
            )?;
            write_file(&out.join(format!("overlap/{id}.heat.csv")), &buf)?;

            let d = stage_ctx(
                "overlap",
                format!("decomposing {id}"),
                overlap::decompose_overlap(&c),
            )?;
            write_overlap_svd(out, &id, &d)?;

            let u_entries = statfit::collect_entries(&d, VectorSide::Left);
            let v_entries = statfit::collect_entries(&d, VectorSide::Right);
            let (u_normal, u_tls) = fit_entries("overlap", format!("{id} left entries"), &u_entries)?;
            let (v_normal, v_tls) = fit_entries("overlap", format!("{id} right entries"), &v_entries)?;
            let fits = SideFits {
                u_normal,
                u_tls: u_tls.clone(),
                v_normal,
                v_tls: v_tls.clone(),
                n_entries: u_entries.len(),
            };
            let json = stage_ctx("overlap", format!("{id} params"), fio::to_json_pretty(&fits))?;
            write_file(&out.join(format!("overlap/params/{id}.json")), json.as_bytes())?;
            table_rows.push(tables::OverlapFitRow {
                kind,
                y_kind: *y,
                left: fits.u_triple(),
                right: fits.v_triple(),
            });
        }
    }
    // Canonical order: kind-major.
    let mut ordered = Vec::new();
    for (kind, y) in tables::overlap_row_order() {
        if let Some(row) = table_rows
            .iter()
            .find(|r| r.kind == kind && r.y_kind == y)
        {
            ordered.push(*row);
        }
    }
    write_file(
        &out.join("overlap/table_overlap.csv"),
        tables::render_overlap_table(&ordered).as_bytes(),
    )?;
    Ok(())
}

fn write_overlap_svd(out: &Path, id: &str, d: &linalg::SvdResult) -> Result<(), RunError> {
    let factors = fio::factor_labels(d.n());
    let mut buf = Vec::new();
    stage_ctx(
        "overlap",
        format!("{id} svd left"),
        fio::write_dense_csv(&d.u, &factors, &factors, &mut buf),
    )?;
    write_file(&out.join(format!("overlap/svd/{id}.u.csv")), &buf)?;
    let mut s_text = String::from("index,singular_value\n");
    for (i, sv) in d.s.iter().enumerate() {
        s_text.push_str(&format!("{},{sv}\n", i + 1));
    }
    write_file(&out.join(format!("overlap/svd/{id}.s.csv")), s_text.as_bytes())?;
    let mut buf = Vec::new();
    stage_ctx(
        "overlap",
        format!("{id} svd right"),
        fio::write_dense_csv(&d.v, &factors, &factors, &mut buf),
    )?;
    write_file(&out.join(format!("overlap/svd/{id}.v.csv")), &buf)?;
    Ok(())
}

fn run_null_stage(config: &PipelineConfig, out: &Path) -> Result<(), RunError> {
    io_ctx("null", "creating null dir", fs::create_dir_all(out.join("null")))?;
    let mut comparison = String::from(
        "kind,factors_related_to,side,empirical_beta,null_beta\n",
    );
    for (y_idx, y) in config.y_kinds.iter().enumerate() {
        let r_m = read_response("null", out, (XKind::Midpoint, *y, config.overlap_subset))?;
        let r_s = read_response("null", out, (XKind::Spread, *y, config.overlap_subset))?;
        let master = overlap::derive_seed(config.seed, 1000 + y_idx as u64);

        // Independent replicates keyed by index; deterministic order.
        let replicate_sets: Vec<impactlab_core::Result<overlap::OverlapSet>> =
            par::map_indexed(config.null_replicates, |rep| {
                overlap::null_overlap_pipeline(
                    &r_m,
                    &r_s,
                    config.null_distribution,
                    overlap::derive_seed(master, rep as u64),
                )
            });

        let mut pooled: BTreeMap<&'static str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for set in replicate_sets {
            let set = stage_ctx("null", format!("replicates for y = {}", y.as_str()), set)?;
            for (kind, c) in [
                (OverlapKind::Mm, &set.c_mm),
                (OverlapKind::Ss, &set.c_ss),
                (OverlapKind::Ms, &set.c_ms),
            ] {
                let d = stage_ctx(
                    "null",
                    format!("decomposing null {}", overlap_id(kind, *y)),
                    decompose(c),
                )?;
                let entry = pooled.entry(kind.as_str()).or_default();
                entry.0.extend(statfit::collect_entries(&d, VectorSide::Left));
                entry.1.extend(statfit::collect_entries(&d, VectorSide::Right));
            }
        }

        for kind in [OverlapKind::Mm, OverlapKind::Ss, OverlapKind::Ms] {
            let id = overlap_id(kind, *y);
            let (u_entries, v_entries) = &pooled[kind.as_str()];
            let (u_normal, u_tls) = fit_entries("null", format!("null {id} left"), u_entries)?;
            let (v_normal, v_tls) = fit_entries("null", format!("null {id} right"), v_entries)?;
            let fits = SideFits {
                u_normal,
                u_tls: u_tls.clone(),
                v_normal,
                v_tls: v_tls.clone(),
                n_entries: u_entries.len(),
            };
            let json = stage_ctx("null", format!("null {id} fits"), fio::to_json_pretty(&fits))?;
            write_file(&out.join(format!("null/{id}.fits.json")), json.as_bytes())?;
            write_density_export(
                "null",
                &out.join(format!("null/{id}.u_density.csv")),
                u_entries,
                config.bins,
                &fits.u_normal,
                &fits.u_tls,
            )?;
            write_density_export(
                "null",
                &out.join(format!("null/{id}.v_density.csv")),
                v_entries,
                config.bins,
                &fits.v_normal,
                &fits.v_tls,
            )?;

            // Side-by-side with the empirical branch fits.
            let emp: serde_json::Value = {
                let path = out.join(format!("overlap/params/{id}.json"));
                let bytes = io_ctx("null", format!("reading {}", path.display()), fs::read(&path))?;
                serde_json::from_slice(&bytes).map_err(|e| RunError::Stage {
                    stage: "null",
                    context: path.display().to_string(),
                    source: CoreError::Config(format!("bad fits json: {e}")),
                })?
            };
            let emp_u = emp["u_tls"]["beta"].as_f64().unwrap_or(f64::NAN);
            let emp_v = emp["v_tls"]["beta"].as_f64().unwrap_or(f64::NAN);
            comparison.push_str(&format!(
                "{},{},u,{},{}\n",
                kind.as_str(),
                tables::response_to_label(*y),
                emp_u,
                fits.u_tls.beta
            ));
            comparison.push_str(&format!(
                "{},{},v,{},{}\n",
                kind.as_str(),
                tables::response_to_label(*y),
                emp_v,
                fits.v_tls.beta
            ));
        }
    }
    write_file(&out.join("null/comparison.csv"), comparison.as_bytes())?;
    Ok(())
}

fn decompose(c: &OverlapMatrix) -> impactlab_core::Result<linalg::SvdResult> {
    overlap::decompose_overlap(c)
}

// ---------------------------------------------------------------------
// Small file helpers.
// ---------------------------------------------------------------------

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        io_ctx("report", format!("creating {}", parent.display()), fs::create_dir_all(parent))?;
    }
    io_ctx("report", format!("writing {}", path.display()), fs::write(path, bytes))
}

fn read_labeled(stage: &'static str, path: &Path) -> Result<fio::LabeledCsv, RunError> {
    let bytes = io_ctx(stage, format!("reading {}", path.display()), fs::read(path))?;
    stage_ctx(stage, path.display().to_string(), fio::read_labeled_csv(&bytes[..]))
}

fn read_dense(stage: &'static str, path: &Path) -> Result<Matrix, RunError> {
    let csv = read_labeled(stage, path)?;
    let (dense, missing) = csv.to_dense(0.0);
    if missing > 0 {
        return Err(RunError::Stage {
            stage,
            context: path.display().to_string(),
            source: CoreError::Incompatible("expected a dense matrix, found missing entries".into()),
        });
    }
    Ok(dense)
}

fn read_response(stage: &'static str, out: &Path, sel: Selection) -> Result<ResponseMatrix, RunError> {
    let id = matrix_id(sel);
    let csv = read_labeled(stage, &out.join(format!("respond/{id}.csv")))?;
    let meta_path = out.join(format!("respond/{id}.meta.json"));
    let bytes = io_ctx(stage, format!("reading {}", meta_path.display()), fs::read(&meta_path))?;
    let meta: fio::ResponseMeta = serde_json::from_slice(&bytes).map_err(|e| RunError::Stage {
        stage,
        context: meta_path.display().to_string(),
        source: CoreError::Config(format!("bad meta json: {e}")),
    })?;
    stage_ctx(stage, format!("rebuilding {id}"), fio::response_from_parts(&csv, &meta))
}

fn stage_cached(cache_valid: bool, files: &[PathBuf]) -> bool {
    cache_valid && !files.is_empty() && files.iter().all(|f| f.is_file())
}

fn record_stage(
    stage_files: &mut BTreeMap<String, Vec<String>>,
    stage: &str,
    out: &Path,
    files: &[PathBuf],
) {
    let mut rels: Vec<String> = files
        .iter()
        .map(|f| {
            f.strip_prefix(out)
                .unwrap_or(f)
                .to_string_lossy()
                .replace('\\', "/")
        })
        .collect();
    rels.sort();
    stage_files.insert(stage.to_string(), rels);
}

fn collect_files(dir: &Path, into: &mut Vec<PathBuf>) -> Result<(), RunError> {
    let entries = io_ctx("report", format!("listing {}", dir.display()), fs::read_dir(dir))?;
    for entry in entries {
        let entry = io_ctx("report", "reading dir entry", entry)?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, into)?;
        } else {
            into.push(path);
        }
    }
    Ok(())
}
