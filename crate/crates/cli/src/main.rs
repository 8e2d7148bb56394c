//! `impactlab`: replay order flow, build cross-response matrices, and
//! characterize their factor structure against random null models.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use impactlab::config::{self, PipelineConfig};
use impactlab::pipeline::{self, RunError};
use impactlab_core::error::Error as CoreError;
use impactlab_core::io as fio;
use impactlab_core::lob::{self, ReplayConfig, StockSeries};
use impactlab_core::overlap::{self, NullDistribution, OverlapKind};
use impactlab_core::response::{self, PanelOptions, Subset, XKind, YKind};
use impactlab_core::statfit::{self, BinRule};
use impactlab_core::symbols::SymbolId;

#[derive(Parser)]
#[command(
    name = "impactlab",
    version,
    about = "Order-book replay, market-wide response matrices and factor analysis"
)]
struct Cli {
    /// Override every configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel stages (default: all cores, or
    /// IMPACTLAB_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum XArg {
    M,
    S,
}

#[derive(Clone, Copy, ValueEnum)]
enum YArg {
    Sign,
    Vol,
    Svol,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    All,
    Single,
    Multiple,
    Weighted,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Mm,
    Ss,
    Ms,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Normal,
    Tls,
}

#[derive(Clone, Copy, ValueEnum)]
enum NullDistArg {
    Gaussian,
    Uniform,
    Permutation,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Bin,
}

#[derive(Subcommand)]
enum Command {
    /// Replay an event file into per-stock quote and trade series.
    Replay {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out_quotes: PathBuf,
        #[arg(long)]
        out_trades: PathBuf,
        /// Session window `t0:t1` in ms, half-open.
        #[arg(long)]
        window: Option<String>,
    },
    /// Single-trade weights w_ij for every stock pair.
    Classify {
        #[arg(long)]
        quotes: PathBuf,
        #[arg(long)]
        trades: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One response matrix for a chosen quantity, signal and subset.
    Respond {
        #[arg(long)]
        quotes: PathBuf,
        #[arg(long)]
        trades: PathBuf,
        /// Weights CSV; required for the weighted subset.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum)]
        x: XArg,
        #[arg(long, value_enum)]
        y: YArg,
        #[arg(long, value_enum)]
        subset: SubsetArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Singular value decomposition of a matrix CSV.
    Svd {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_u: PathBuf,
        #[arg(long)]
        out_s: PathBuf,
        #[arg(long)]
        out_v: PathBuf,
        /// Optional JSON with the zero-imputation count.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Fit a distribution to the pooled entries of a vectors CSV.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        dist: DistArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export binned density plus normal and t location-scale fits.
    Density {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// fd, sturges, or a bin count.
        #[arg(long, default_value = "fd")]
        bins: String,
    },
    /// Factor-overlap matrix from left singular vectors.
    Overlap {
        #[arg(long)]
        um: Option<PathBuf>,
        #[arg(long)]
        us: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        out: PathBuf,
        /// Also export (row, col, value) triples.
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Random overlap matrices with moments matched to the inputs.
    Null {
        #[arg(long)]
        rm: PathBuf,
        #[arg(long)]
        rs: PathBuf,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        #[arg(long, value_enum, default_value = "gaussian")]
        distribution: NullDistArg,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic order-flow session.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// csv or bin; default follows the output extension.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Run the full pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a pipeline config, reporting every problem at once.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_workers(cli.workers);
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

#[cfg(feature = "parallel")]
fn init_workers(cli_workers: Option<usize>) {
    let n = cli_workers.or_else(|| {
        std::env::var("IMPACTLAB_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn init_workers(_cli_workers: Option<usize>) {}

fn dispatch(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Replay {
            events,
            out_quotes,
            out_trades,
            window,
        } => cmd_replay(&events, &out_quotes, &out_trades, window.as_deref()),
        Command::Classify { quotes, trades, out } => cmd_classify(&quotes, &trades, &out),
        Command::Respond {
            quotes,
            trades,
            weights,
            x,
            y,
            subset,
            out,
        } => cmd_respond(&quotes, &trades, weights.as_deref(), x, y, subset, &out),
        Command::Svd {
            input,
            out_u,
            out_s,
            out_v,
            meta,
        } => cmd_svd(&input, &out_u, &out_s, &out_v, meta.as_deref()),
        Command::Fit { input, dist, out } => cmd_fit(&input, dist, &out),
        Command::Density { input, out, bins } => cmd_density(&input, &out, &bins),
        Command::Overlap {
            um,
            us,
            kind,
            out,
            heatmap,
        } => cmd_overlap(um.as_deref(), us.as_deref(), kind, &out, heatmap.as_deref()),
        Command::Null {
            rm,
            rs,
            replicates,
            distribution,
            out_dir,
        } => cmd_null(&rm, &rs, replicates, distribution, cli.seed.unwrap_or(1), &out_dir),
        Command::Synth { config, out, format } => cmd_synth(&config, &out, format, cli.seed),
        Command::Run { config, out } => cmd_run(&config, out, cli.seed),
        Command::Validate { config } => cmd_validate(&config),
    }
}

fn core_err(stage: &'static str, context: impl Into<String>) -> impl FnOnce(CoreError) -> RunError {
    let context = context.into();
    move |source| RunError::Stage {
        stage,
        context,
        source,
    }
}

fn io_err(stage: &'static str, context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let context = context.into();
    move |e| RunError::Stage {
        stage,
        context,
        source: CoreError::Io(e),
    }
}

// ---------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------

fn cmd_replay(
    events: &Path,
    out_quotes: &Path,
    out_trades: &Path,
    window: Option<&str>,
) -> Result<(), RunError> {
    let window = match window {
        Some(w) => Some(config::parse_window(w).ok_or_else(|| {
            RunError::Config(vec![format!("bad --window {w:?}, expected t0:t1 with t0 < t1")])
        })?),
        None => None,
    };
    let bytes = fs::read(events).map_err(io_err("replay", format!("reading {}", events.display())))?;
    let (table, parsed) =
        lob::parse_events(&bytes).map_err(core_err("replay", events.display().to_string()))?;
    let series = lob::replay(&parsed, table.len(), &ReplayConfig { window })
        .map_err(core_err("replay", "replaying"))?;

    for dir in [out_quotes, out_trades] {
        fs::create_dir_all(dir).map_err(io_err("replay", format!("creating {}", dir.display())))?;
    }
    let mut universe_text = String::new();
    for name in table.names() {
        universe_text.push_str(name);
        universe_text.push('\n');
    }
    for dir in [out_quotes, out_trades] {
        fs::write(dir.join("universe.txt"), &universe_text)
            .map_err(io_err("replay", "writing universe.txt"))?;
    }
    for (idx, name) in table.names().iter().enumerate() {
        let mut buf = Vec::new();
        fio::write_quotes_csv(&series[idx].quotes, &mut buf)
            .map_err(core_err("replay", format!("quotes for {name}")))?;
        fs::write(out_quotes.join(format!("{name}.quotes.csv")), &buf)
            .map_err(io_err("replay", format!("writing quotes for {name}")))?;
        let mut buf = Vec::new();
        fio::write_trades_csv(&series[idx].trades, &mut buf)
            .map_err(core_err("replay", format!("trades for {name}")))?;
        fs::write(out_trades.join(format!("{name}.trades.csv")), &buf)
            .map_err(io_err("replay", format!("writing trades for {name}")))?;
    }
    println!(
        "replayed {} events into {} stocks",
        parsed.len(),
        table.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// shared series loading for classify / respond
// ---------------------------------------------------------------------

fn discover_universe(stage: &'static str, quotes_dir: &Path) -> Result<Vec<String>, RunError> {
    let listed = quotes_dir.join("universe.txt");
    if listed.is_file() {
        let bytes = fs::read(&listed).map_err(io_err(stage, "reading universe.txt"))?;
        return fio::read_universe(&bytes[..]).map_err(core_err(stage, "universe.txt"));
    }
    let mut names = Vec::new();
    let entries =
        fs::read_dir(quotes_dir).map_err(io_err(stage, format!("listing {}", quotes_dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(io_err(stage, "reading dir entry"))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(sym) = name.strip_suffix(".quotes.csv") {
            names.push(sym.to_string());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(RunError::Config(vec![format!(
            "no *.quotes.csv files in {}",
            quotes_dir.display()
        )]));
    }
    Ok(names)
}

fn load_series(
    stage: &'static str,
    quotes_dir: &Path,
    trades_dir: &Path,
) -> Result<(Vec<String>, Vec<StockSeries>), RunError> {
    let symbols = discover_universe(stage, quotes_dir)?;
    let mut series = Vec::with_capacity(symbols.len());
    for (idx, name) in symbols.iter().enumerate() {
        let id = SymbolId(idx as u32);
        let qpath = quotes_dir.join(format!("{name}.quotes.csv"));
        let quotes = fs::File::open(&qpath)
            .map_err(CoreError::Io)
            .and_then(|f| fio::read_quotes_csv(BufReader::new(f), id))
            .map_err(core_err(stage, qpath.display().to_string()))?;
        let tpath = trades_dir.join(format!("{name}.trades.csv"));
        let trades = fs::File::open(&tpath)
            .map_err(CoreError::Io)
            .and_then(|f| fio::read_trades_csv(BufReader::new(f), id))
            .map_err(core_err(stage, tpath.display().to_string()))?;
        series.push(StockSeries { quotes, trades });
    }
    Ok((symbols, series))
}

fn cmd_classify(quotes: &Path, trades: &Path, out: &Path) -> Result<(), RunError> {
    let (symbols, series) = load_series("classify", quotes, trades)?;
    let q: Vec<_> = series.iter().map(|s| s.quotes.clone()).collect();
    let t: Vec<_> = series.iter().map(|s| s.trades.clone()).collect();
    let weights = impactlab_core::classify::pair_weights(&q, &t)
        .map_err(core_err("classify", "pairing the universe"))?;
    let mut buf = Vec::new();
    fio::write_weights_csv(&weights, &symbols, &mut buf)
        .map_err(core_err("classify", "serializing weights"))?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err("classify", "creating output dir"))?;
        }
    }
    fs::write(out, &buf).map_err(io_err("classify", format!("writing {}", out.display())))?;
    println!("wrote {}x{} weights to {}", symbols.len(), symbols.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------
// respond
// ---------------------------------------------------------------------

fn cmd_respond(
    quotes: &Path,
    trades: &Path,
    weights: Option<&Path>,
    x: XArg,
    y: YArg,
    subset: SubsetArg,
    out: &Path,
) -> Result<(), RunError> {
    let x = match x {
        XArg::M => XKind::Midpoint,
        XArg::S => XKind::Spread,
    };
    let y = match y {
        YArg::Sign => YKind::Sign,
        YArg::Vol => YKind::Volume,
        YArg::Svol => YKind::SignedVolume,
    };
    let subset = match subset {
        SubsetArg::All => Subset::All,
        SubsetArg::Single => Subset::Single,
        SubsetArg::Multiple => Subset::Multiple,
        SubsetArg::Weighted => Subset::Weighted,
    };
    let (symbols, series) = load_series("respond", quotes, trades)?;
    let panel = response::prepare_panel(&series, PanelOptions::default())
        .map_err(core_err("respond", "normalizing series"))?;

    let matrix = if subset == Subset::Weighted {
        let wpath = weights.ok_or_else(|| {
            RunError::Config(vec!["--weights is required for the weighted subset".into()])
        })?;
        let bytes =
            fs::read(wpath).map_err(io_err("respond", format!("reading {}", wpath.display())))?;
        let csv = fio::read_labeled_csv(&bytes[..])
            .map_err(core_err("respond", wpath.display().to_string()))?;
        let w = fio::weights_from_csv(&csv).map_err(core_err("respond", "weights"))?;
        let mats = response::compute_responses(
            &panel,
            &[(x, y, Subset::Single), (x, y, Subset::Multiple)],
        )
        .map_err(core_err("respond", "accumulating"))?;
        response::weighted_response(&mats[0], &mats[1], &w)
            .map_err(core_err("respond", "weighting"))?
    } else {
        response::compute_responses(&panel, &[(x, y, subset)])
            .map_err(core_err("respond", "accumulating"))?
            .remove(0)
    };

    let mut buf = Vec::new();
    fio::write_response_csv(&matrix, &symbols, &mut buf)
        .map_err(core_err("respond", "serializing matrix"))?;
    fs::write(out, &buf).map_err(io_err("respond", format!("writing {}", out.display())))?;
    let meta = fio::ResponseMeta::of(&matrix, &symbols);
    let json = fio::to_json_pretty(&meta).map_err(core_err("respond", "meta json"))?;
    let meta_path = out.with_extension("meta.json");
    fs::write(&meta_path, json)
        .map_err(io_err("respond", format!("writing {}", meta_path.display())))?;
    println!(
        "wrote {} ({} missing entries) to {}",
        pipeline::matrix_id((x, y, subset)),
        matrix.missing_entries(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// svd / fit / density
// ---------------------------------------------------------------------

fn read_labeled(stage: &'static str, path: &Path) -> Result<fio::LabeledCsv, RunError> {
    let bytes = fs::read(path).map_err(io_err(stage, format!("reading {}", path.display())))?;
    fio::read_labeled_csv(&bytes[..]).map_err(core_err(stage, path.display().to_string()))
}

fn cmd_svd(
    input: &Path,
    out_u: &Path,
    out_s: &Path,
    out_v: &Path,
    meta: Option<&Path>,
) -> Result<(), RunError> {
    let csv = read_labeled("svd", input)?;
    let (dense, imputed) = csv.to_dense(0.0);
    let d = impactlab_core::linalg::svd(&dense).map_err(core_err("svd", input.display().to_string()))?;
    if imputed > 0 {
        eprintln!("note: {imputed} missing entries imputed as 0 before decomposition");
    }

    let factors = fio::factor_labels(d.n());
    let mut buf = Vec::new();
    fio::write_dense_csv(&d.u, &csv.row_labels, &factors, &mut buf)
        .map_err(core_err("svd", "left vectors"))?;
    fs::write(out_u, &buf).map_err(io_err("svd", format!("writing {}", out_u.display())))?;

    let mut s_text = String::from("index,singular_value\n");
    for (i, sv) in d.s.iter().enumerate() {
        s_text.push_str(&format!("{},{sv}\n", i + 1));
    }
    fs::write(out_s, s_text).map_err(io_err("svd", format!("writing {}", out_s.display())))?;

    let mut buf = Vec::new();
    fio::write_dense_csv(&d.v, &csv.col_labels, &factors, &mut buf)
        .map_err(core_err("svd", "right vectors"))?;
    fs::write(out_v, &buf).map_err(io_err("svd", format!("writing {}", out_v.display())))?;

    if let Some(meta_path) = meta {
        #[derive(serde::Serialize)]
        struct SvdMeta {
            imputed_entries: usize,
        }
        let json = fio::to_json_pretty(&SvdMeta {
            imputed_entries: imputed,
        })
        .map_err(core_err("svd", "meta json"))?;
        fs::write(meta_path, json)
            .map_err(io_err("svd", format!("writing {}", meta_path.display())))?;
    }
    Ok(())
}

fn pooled(stage: &'static str, path: &Path) -> Result<Vec<f64>, RunError> {
    let csv = read_labeled(stage, path)?;
    let (dense, _) = csv.to_dense(0.0);
    Ok(dense.data().to_vec())
}

fn cmd_fit(input: &Path, dist: DistArg, out: &Path) -> Result<(), RunError> {
    let entries = pooled("fit", input)?;
    let report = match dist {
        DistArg::Normal => {
            let p = statfit::fit_normal(&entries).map_err(core_err("fit", "normal fit"))?;
            let loglik: f64 = entries
                .iter()
                .map(|&x| statfit::normal_pdf(x, p.mu, p.sigma).ln())
                .sum();
            fio::FitReport::normal(&p, loglik, entries.len())
        }
        DistArg::Tls => {
            let p = statfit::fit_tls(&entries).map_err(core_err("fit", "t location-scale fit"))?;
            let report = fio::FitReport::tls(&p, entries.len());
            if !p.converged {
                let json = fio::to_json_pretty(&report).map_err(core_err("fit", "json"))?;
                fs::write(out, json).map_err(io_err("fit", format!("writing {}", out.display())))?;
                return Err(RunError::Stage {
                    stage: "fit",
                    context: input.display().to_string(),
                    source: CoreError::NonConvergence(
                        "fit written, but the optimizer did not reach tolerance".into(),
                    ),
                });
            }
            report
        }
    };
    let json = fio::to_json_pretty(&report).map_err(core_err("fit", "json"))?;
    fs::write(out, json).map_err(io_err("fit", format!("writing {}", out.display())))?;
    Ok(())
}

fn cmd_density(input: &Path, out: &Path, bins: &str) -> Result<(), RunError> {
    let rule = match bins {
        "fd" => BinRule::FreedmanDiaconis,
        "sturges" => BinRule::Sturges,
        other => match other.parse::<usize>() {
            Ok(k) if k > 0 => BinRule::Count(k),
            _ => {
                return Err(RunError::Config(vec![format!(
                    "--bins must be fd, sturges or a positive count, got {other:?}"
                )]))
            }
        },
    };
    let entries = pooled("density", input)?;
    let normal = statfit::fit_normal(&entries).map_err(core_err("density", "normal fit"))?;
    let tls = statfit::fit_tls(&entries).map_err(core_err("density", "t location-scale fit"))?;
    let density =
        statfit::empirical_density(&entries, rule).map_err(core_err("density", "binning"))?;
    let mut buf = Vec::new();
    fio::write_density_csv(&density, &normal, &tls, &mut buf)
        .map_err(core_err("density", "serializing"))?;
    fs::write(out, &buf).map_err(io_err("density", format!("writing {}", out.display())))?;
    Ok(())
}

// ---------------------------------------------------------------------
// overlap / null
// ---------------------------------------------------------------------

fn cmd_overlap(
    um: Option<&Path>,
    us: Option<&Path>,
    kind: KindArg,
    out: &Path,
    heatmap: Option<&Path>,
) -> Result<(), RunError> {
    let kind = match kind {
        KindArg::Mm => OverlapKind::Mm,
        KindArg::Ss => OverlapKind::Ss,
        KindArg::Ms => OverlapKind::Ms,
    };
    fn need<'a>(path: Option<&'a Path>, flag: &str, kind: OverlapKind) -> Result<&'a Path, RunError> {
        path.ok_or_else(|| {
            RunError::Config(vec![format!("--{flag} is required for kind {}", kind.as_str())])
        })
    }
    let load = |path: &Path| -> Result<_, RunError> {
        let csv = read_labeled("overlap", path)?;
        let (dense, missing) = csv.to_dense(0.0);
        if missing > 0 {
            return Err(RunError::Stage {
                stage: "overlap",
                context: path.display().to_string(),
                source: CoreError::Incompatible("vectors file has missing entries".into()),
            });
        }
        overlap::normalize_factors(&dense).map_err(core_err("overlap", path.display().to_string()))
    };

    let c = match kind {
        OverlapKind::Mm => {
            let a = load(need(um, "um", kind)?)?;
            overlap::overlap_matrix(&a, &a, kind)
        }
        OverlapKind::Ss => {
            let b = load(need(us, "us", kind)?)?;
            overlap::overlap_matrix(&b, &b, kind)
        }
        OverlapKind::Ms => {
            let a = load(need(um, "um", kind)?)?;
            let b = load(need(us, "us", kind)?)?;
            overlap::overlap_matrix(&a, &b, kind)
        }
    }
    .map_err(core_err("overlap", "building overlap"))?;

    let factors = fio::factor_labels(c.c.rows());
    let mut buf = Vec::new();
    fio::write_dense_csv(&c.c, &factors, &factors, &mut buf)
        .map_err(core_err("overlap", "serializing"))?;
    fs::write(out, &buf).map_err(io_err("overlap", format!("writing {}", out.display())))?;
    if let Some(hpath) = heatmap {
        let mut buf = Vec::new();
        fio::write_heatmap_csv(&c.c, &mut buf).map_err(core_err("overlap", "heatmap"))?;
        fs::write(hpath, &buf).map_err(io_err("overlap", format!("writing {}", hpath.display())))?;
    }
    Ok(())
}

fn cmd_null(
    rm: &Path,
    rs: &Path,
    replicates: usize,
    distribution: NullDistArg,
    seed: u64,
    out_dir: &Path,
) -> Result<(), RunError> {
    let dist = match distribution {
        NullDistArg::Gaussian => NullDistribution::Gaussian,
        NullDistArg::Uniform => NullDistribution::Uniform,
        NullDistArg::Permutation => NullDistribution::PermuteEntries,
    };
    let load = |path: &Path| -> Result<response::ResponseMatrix, RunError> {
        let csv = read_labeled("null", path)?;
        if csv.rows() != csv.cols() {
            return Err(RunError::Stage {
                stage: "null",
                context: path.display().to_string(),
                source: CoreError::Incompatible("response matrix must be square".into()),
            });
        }
        let (dense, _) = csv.to_dense(0.0);
        let n = dense.rows();
        let mut r = response::ResponseMatrix::new(XKind::Midpoint, YKind::Sign, Subset::Single, n);
        for i in 0..n {
            for j in 0..n {
                r.set(i, j, dense[(i, j)], 1);
            }
        }
        Ok(r)
    };
    let r_m = load(rm)?;
    let r_s = load(rs)?;
    fs::create_dir_all(out_dir).map_err(io_err("null", "creating out dir"))?;

    for rep in 0..replicates {
        let set = overlap::null_overlap_pipeline(
            &r_m,
            &r_s,
            dist,
            overlap::derive_seed(seed, rep as u64),
        )
        .map_err(core_err("null", format!("replicate {rep}")))?;
        let rep_dir = out_dir.join(format!("rep_{rep:03}"));
        fs::create_dir_all(&rep_dir).map_err(io_err("null", "creating replicate dir"))?;
        for (name, c) in [("Cmm", &set.c_mm), ("Css", &set.c_ss), ("Cms", &set.c_ms)] {
            let factors = fio::factor_labels(c.c.rows());
            let mut buf = Vec::new();
            fio::write_dense_csv(&c.c, &factors, &factors, &mut buf)
                .map_err(core_err("null", format!("replicate {rep} {name}")))?;
            fs::write(rep_dir.join(format!("{name}.csv")), &buf)
                .map_err(io_err("null", format!("writing replicate {rep} {name}")))?;
        }
    }
    println!("wrote {replicates} null replicates to {}", out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------
// synth / run / validate
// ---------------------------------------------------------------------

fn cmd_synth(
    config_path: &Path,
    out: &Path,
    format: Option<FormatArg>,
    seed_override: Option<u64>,
) -> Result<(), RunError> {
    let text = fs::read_to_string(config_path).map_err(|e| {
        RunError::Config(vec![format!("cannot read {}: {e}", config_path.display())])
    })?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let mut cfg = impactlab_core::synth::MarketConfig::parse(&text, Some(base))
        .map_err(core_err("synth", config_path.display().to_string()))?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    if cfg.single_fraction_target.is_some() {
        cfg = impactlab_core::synth::calibrate_single_fraction(&cfg)
            .map_err(core_err("synth", "calibrating single fraction"))?;
    }
    let (table, events) =
        impactlab_core::synth::generate(&cfg).map_err(core_err("synth", "generating"))?;
    let binary = match format {
        Some(FormatArg::Bin) => true,
        Some(FormatArg::Csv) => false,
        None => out.extension().is_some_and(|e| e == "bin"),
    };
    let mut buf = Vec::new();
    if binary {
        lob::serialize_events_bin(&table, &events, &mut buf)
            .map_err(core_err("synth", "serializing"))?;
    } else {
        lob::serialize_events_csv(&table, &events, &mut buf)
            .map_err(core_err("synth", "serializing"))?;
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err("synth", "creating output dir"))?;
        }
    }
    fs::write(out, &buf).map_err(io_err("synth", format!("writing {}", out.display())))?;
    println!(
        "generated {} events for {} stocks (seed {})",
        events.len(),
        table.len(),
        cfg.seed
    );
    Ok(())
}

fn load_pipeline_config(config_path: &Path) -> Result<PipelineConfig, RunError> {
    let text = fs::read_to_string(config_path).map_err(|e| {
        RunError::Config(vec![format!("cannot read {}: {e}", config_path.display())])
    })?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    PipelineConfig::parse(&text, base).map_err(RunError::Config)
}

fn cmd_run(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<(), RunError> {
    let mut cfg = load_pipeline_config(config_path)?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    // --workers and IMPACTLAB_WORKERS were applied at startup and win;
    // otherwise the config's bound takes effect here.
    #[cfg(feature = "parallel")]
    if cfg.workers > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global();
    }
    let summary = pipeline::run_pipeline(&cfg)?;
    for t in &summary.timings {
        println!(
            "{:<10} {:>8.3}s{}",
            t.name,
            t.seconds,
            if t.skipped { "  (cached)" } else { "" }
        );
    }
    println!("bundle written to {}", summary.out_dir.display());
    Ok(())
}

fn cmd_validate(config_path: &Path) -> Result<(), RunError> {
    let cfg = load_pipeline_config(config_path)?;
    println!("config ok: {} day(s), out_dir {}", cfg.events.len(), cfg.out_dir.display());
    Ok(())
}
