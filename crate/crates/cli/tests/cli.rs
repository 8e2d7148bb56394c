//! End-to-end checks of the installed binary: subcommand chaining, format
//! sniffing, caching, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_impactlab"))
}

fn ok(output: &Output) {
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn write_market_config(dir: &Path, seed: u64, n_stocks: usize) -> std::path::PathBuf {
    let path = dir.join("market.conf");
    fs::write(
        &path,
        format!(
            "n_stocks = {n_stocks}\nsession_ms = 120000\nseed = {seed}\ntrade_intensity = 3.0\n\
             quote_intensity = 9.0\nimpact = diag:0.4\n"
        ),
    )
    .unwrap();
    path
}

#[test]
fn subcommand_chain_produces_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let market = write_market_config(dir.path(), 11, 8);
    let events = dir.path().join("day.csv");
    ok(&bin()
        .args(["synth", "--config"])
        .arg(&market)
        .arg("--out")
        .arg(&events)
        .output()
        .unwrap());

    let rq = dir.path().join("quotes");
    let rt = dir.path().join("trades");
    ok(&bin()
        .args(["replay", "--events"])
        .arg(&events)
        .arg("--out-quotes")
        .arg(&rq)
        .arg("--out-trades")
        .arg(&rt)
        .output()
        .unwrap());
    assert!(rq.join("universe.txt").is_file());
    assert!(rq.join("S00.quotes.csv").is_file());
    assert!(rt.join("S07.trades.csv").is_file());

    let weights = dir.path().join("w.csv");
    ok(&bin()
        .args(["classify", "--quotes"])
        .arg(&rq)
        .arg("--trades")
        .arg(&rt)
        .arg("--out")
        .arg(&weights)
        .output()
        .unwrap());
    let wtext = fs::read_to_string(&weights).unwrap();
    assert!(wtext.starts_with(",S00,S01,S02,S03,S04,S05,S06,S07\n"));

    let r_all = dir.path().join("m_sign_all.csv");
    ok(&bin()
        .args(["respond", "--quotes"])
        .arg(&rq)
        .arg("--trades")
        .arg(&rt)
        .args(["--x", "m", "--y", "sign", "--subset", "all", "--out"])
        .arg(&r_all)
        .output()
        .unwrap());
    assert!(r_all.with_extension("meta.json").is_file());

    let r_wt = dir.path().join("m_sign_wt.csv");
    ok(&bin()
        .args(["respond", "--quotes"])
        .arg(&rq)
        .arg("--trades")
        .arg(&rt)
        .args(["--x", "m", "--y", "sign", "--subset", "weighted", "--weights"])
        .arg(&weights)
        .arg("--out")
        .arg(&r_wt)
        .output()
        .unwrap());

    let (u, s, v) = (
        dir.path().join("u.csv"),
        dir.path().join("s.csv"),
        dir.path().join("v.csv"),
    );
    ok(&bin()
        .args(["svd", "--in"])
        .arg(&r_all)
        .arg("--out-u")
        .arg(&u)
        .arg("--out-s")
        .arg(&s)
        .arg("--out-v")
        .arg(&v)
        .output()
        .unwrap());
    let s_text = fs::read_to_string(&s).unwrap();
    assert_eq!(s_text.lines().count(), 9); // header + 8 singular values

    let fit = dir.path().join("fit.json");
    ok(&bin()
        .args(["fit", "--in"])
        .arg(&u)
        .args(["--dist", "normal", "--out"])
        .arg(&fit)
        .output()
        .unwrap());
    let parsed: serde_json::Value = serde_json::from_str(&fs::read_to_string(&fit).unwrap()).unwrap();
    assert_eq!(parsed["dist"], "normal");
    assert_eq!(parsed["n"], 64);
    assert!(parsed["beta"].is_null());

    let dens = dir.path().join("dens.csv");
    ok(&bin()
        .args(["density", "--in"])
        .arg(&u)
        .args(["--bins", "8", "--out"])
        .arg(&dens)
        .output()
        .unwrap());
    let dtext = fs::read_to_string(&dens).unwrap();
    assert!(dtext.starts_with("bin_center,empirical,normal_fit,tls_fit\n"));

    // Overlap of the price factors with themselves, plus heatmap triples.
    let c = dir.path().join("cmm.csv");
    let heat = dir.path().join("cmm.heat.csv");
    ok(&bin()
        .args(["overlap", "--um"])
        .arg(&u)
        .args(["--kind", "mm", "--out"])
        .arg(&c)
        .arg("--heatmap")
        .arg(&heat)
        .output()
        .unwrap());
    assert!(fs::read_to_string(&heat).unwrap().starts_with("row,col,value\n"));

    // Null replicates from two response matrices.
    let r_s = dir.path().join("s_sign_all.csv");
    ok(&bin()
        .args(["respond", "--quotes"])
        .arg(&rq)
        .arg("--trades")
        .arg(&rt)
        .args(["--x", "s", "--y", "sign", "--subset", "all", "--out"])
        .arg(&r_s)
        .output()
        .unwrap());
    let nulls = dir.path().join("nulls");
    ok(&bin()
        .args(["null", "--rm"])
        .arg(&r_all)
        .arg("--rs")
        .arg(&r_s)
        .args(["--replicates", "2", "--seed", "9", "--out-dir"])
        .arg(&nulls)
        .output()
        .unwrap());
    assert!(nulls.join("rep_000/Cms.csv").is_file());
    assert!(nulls.join("rep_001/Cmm.csv").is_file());
}

#[test]
fn synth_binary_format_round_trips_through_replay() {
    let dir = tempfile::tempdir().unwrap();
    let market = write_market_config(dir.path(), 12, 4);
    let events_bin = dir.path().join("day.bin");
    ok(&bin()
        .args(["synth", "--config"])
        .arg(&market)
        .arg("--out")
        .arg(&events_bin)
        .args(["--format", "bin"])
        .output()
        .unwrap());
    // The replay subcommand sniffs the framing.
    let rq = dir.path().join("q");
    let rt = dir.path().join("t");
    ok(&bin()
        .args(["replay", "--events"])
        .arg(&events_bin)
        .arg("--out-quotes")
        .arg(&rq)
        .arg("--out-trades")
        .arg(&rt)
        .output()
        .unwrap());
    assert!(rq.join("S00.quotes.csv").is_file());
}

#[test]
fn seed_override_changes_synth_output() {
    let dir = tempfile::tempdir().unwrap();
    let market = write_market_config(dir.path(), 13, 4);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    for (path, seed) in [(&a, None), (&b, Some("13")), (&c, Some("99"))] {
        let mut cmd = bin();
        cmd.args(["synth", "--config"]).arg(&market).arg("--out").arg(path);
        if let Some(seed) = seed {
            cmd.args(["--seed", seed]);
        }
        ok(&cmd.output().unwrap());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn run_caches_stages_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let market = write_market_config(dir.path(), 14, 4);
    let events = dir.path().join("day.csv");
    ok(&bin()
        .args(["synth", "--config"])
        .arg(&market)
        .arg("--out")
        .arg(&events)
        .output()
        .unwrap());
    // 4 stocks is below the pooled-fit minimum, so restrict to the
    // stages before fitting via a narrow selection; the run must still
    // write respond and svd artifacts.
    let conf = dir.path().join("pipeline.conf");
    fs::write(
        &conf,
        format!(
            "events = {}\nseed = 3\nnull_replicates = 5\nout_dir = {}\n",
            events.display(),
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    // A 4-stock universe pools only 16 entries per side; the fit stage
    // must refuse rather than fabricate a heavy-tail fit.
    let out = bin().args(["run", "--config"]).arg(&conf).output().unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage fit"), "stderr: {stderr}");
}

#[test]
fn full_run_reruns_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let market = dir.path().join("market.conf");
    fs::write(
        &market,
        "n_stocks = 8\nsession_ms = 120000\nseed = 15\ntrade_intensity = 3.0\n\
         quote_intensity = 9.0\nimpact = diag:0.4\n",
    )
    .unwrap();
    let events = dir.path().join("day.csv");
    ok(&bin()
        .args(["synth", "--config"])
        .arg(&market)
        .arg("--out")
        .arg(&events)
        .output()
        .unwrap());
    let conf = dir.path().join("pipeline.conf");
    fs::write(
        &conf,
        format!(
            "events = {}\nseed = 3\nnull_replicates = 4\nout_dir = {}\n",
            events.display(),
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    ok(&bin().args(["run", "--config"]).arg(&conf).output().unwrap());
    let manifest_1 = fs::read(dir.path().join("out/manifest.json")).unwrap();

    let rerun = bin().args(["run", "--config"]).arg(&conf).output().unwrap();
    ok(&rerun);
    let stdout = String::from_utf8_lossy(&rerun.stdout);
    for stage in ["replay", "classify", "respond", "svd", "fit", "overlap", "null"] {
        assert!(
            stdout.lines().any(|l| l.starts_with(stage) && l.contains("(cached)")),
            "stage {stage} not cached on rerun:\n{stdout}"
        );
    }
    let manifest_2 = fs::read(dir.path().join("out/manifest.json")).unwrap();
    assert_eq!(manifest_1, manifest_2);
}

#[test]
fn multi_day_run_averages_days() {
    let dir = tempfile::tempdir().unwrap();
    let mut day_paths = Vec::new();
    for (k, seed) in [(0, 21u64), (1, 22u64)] {
        let market = dir.path().join(format!("market_{k}.conf"));
        fs::write(
            &market,
            format!(
                "n_stocks = 8\nsession_ms = 120000\nseed = {seed}\ntrade_intensity = 3.0\n\
                 quote_intensity = 9.0\nimpact = diag:0.4\n"
            ),
        )
        .unwrap();
        let events = dir.path().join(format!("day{k}.csv"));
        ok(&bin()
            .args(["synth", "--config"])
            .arg(&market)
            .arg("--out")
            .arg(&events)
            .output()
            .unwrap());
        day_paths.push(events);
    }
    let conf = dir.path().join("pipeline.conf");
    fs::write(
        &conf,
        format!(
            "events = {}\nevents = {}\nseed = 3\nnull_replicates = 4\nout_dir = {}\n",
            day_paths[0].display(),
            day_paths[1].display(),
            dir.path().join("out2").display()
        ),
    )
    .unwrap();
    ok(&bin().args(["run", "--config"]).arg(&conf).output().unwrap());
    assert!(dir.path().join("out2/replay/day_00/S00.quotes.csv").is_file());
    assert!(dir.path().join("out2/replay/day_01/S00.quotes.csv").is_file());
    assert!(dir.path().join("out2/classify/day_01.weights.csv").is_file());

    // The averaged matrix differs from the first day alone.
    let conf1 = dir.path().join("pipeline1.conf");
    fs::write(
        &conf1,
        format!(
            "events = {}\nseed = 3\nnull_replicates = 4\nout_dir = {}\n",
            day_paths[0].display(),
            dir.path().join("out1").display()
        ),
    )
    .unwrap();
    ok(&bin().args(["run", "--config"]).arg(&conf1).output().unwrap());
    let avg = fs::read_to_string(dir.path().join("out2/respond/m_sign_all.csv")).unwrap();
    let single = fs::read_to_string(dir.path().join("out1/respond/m_sign_all.csv")).unwrap();
    assert_ne!(avg, single);
    // Counts in the sidecar sum over both days.
    let meta2: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out2/respond/m_sign_all.meta.json")).unwrap(),
    )
    .unwrap();
    let meta1: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out1/respond/m_sign_all.meta.json")).unwrap(),
    )
    .unwrap();
    let c2 = meta2["counts"][0].as_u64().unwrap();
    let c1 = meta1["counts"][0].as_u64().unwrap();
    assert!(c2 > c1, "two-day counts {c2} not above one-day {c1}");
}

#[test]
fn exit_codes_follow_the_policy() {
    let dir = tempfile::tempdir().unwrap();

    // Config error: 2.
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "events = missing.csv\nbogus = 1\n").unwrap();
    let out = bin().args(["validate", "--config"]).arg(&conf).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bogus"));
    assert!(stderr.contains("missing.csv"));

    // Data integrity error: 3.
    let events = dir.path().join("bad_events.csv");
    fs::write(
        &events,
        "ts_ms,stock,kind,side,price_ticks,volume,order_id\n0,AAPL,execute,bid,100,10,99\n",
    )
    .unwrap();
    let out = bin()
        .args(["replay", "--events"])
        .arg(&events)
        .arg("--out-quotes")
        .arg(dir.path().join("q"))
        .arg("--out-trades")
        .arg(dir.path().join("t"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn classify_discovers_universe_without_listing() {
    let dir = tempfile::tempdir().unwrap();
    let market = write_market_config(dir.path(), 17, 4);
    let events = dir.path().join("day.csv");
    ok(&bin()
        .args(["synth", "--config"])
        .arg(&market)
        .arg("--out")
        .arg(&events)
        .output()
        .unwrap());
    let (rq, rt) = (dir.path().join("q"), dir.path().join("t"));
    ok(&bin()
        .args(["replay", "--events"])
        .arg(&events)
        .arg("--out-quotes")
        .arg(&rq)
        .arg("--out-trades")
        .arg(&rt)
        .output()
        .unwrap());
    // Without the listing, the universe falls back to sorted discovery.
    fs::remove_file(rq.join("universe.txt")).unwrap();
    let weights = dir.path().join("w.csv");
    ok(&bin()
        .args(["classify", "--quotes"])
        .arg(&rq)
        .arg("--trades")
        .arg(&rt)
        .arg("--out")
        .arg(&weights)
        .output()
        .unwrap());
    assert!(fs::read_to_string(&weights)
        .unwrap()
        .starts_with(",S00,S01,S02,S03\n"));
}

#[test]
fn worker_env_var_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let market = write_market_config(dir.path(), 18, 4);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&bin()
        .args(["synth", "--config"])
        .arg(&market)
        .arg("--out")
        .arg(&a)
        .output()
        .unwrap());
    let mut cmd = bin();
    cmd.env("IMPACTLAB_WORKERS", "1");
    ok(&cmd
        .args(["synth", "--config"])
        .arg(&market)
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap());
    // Worker count must not change any output byte.
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn replay_window_filters_series() {
    let dir = tempfile::tempdir().unwrap();
    let market = write_market_config(dir.path(), 16, 4);
    let events = dir.path().join("day.csv");
    ok(&bin()
        .args(["synth", "--config"])
        .arg(&market)
        .arg("--out")
        .arg(&events)
        .output()
        .unwrap());
    let (q1, t1) = (dir.path().join("q1"), dir.path().join("t1"));
    let (q2, t2) = (dir.path().join("q2"), dir.path().join("t2"));
    ok(&bin()
        .args(["replay", "--events"])
        .arg(&events)
        .arg("--out-quotes")
        .arg(&q1)
        .arg("--out-trades")
        .arg(&t1)
        .output()
        .unwrap());
    ok(&bin()
        .args(["replay", "--events"])
        .arg(&events)
        .arg("--out-quotes")
        .arg(&q2)
        .arg("--out-trades")
        .arg(&t2)
        .args(["--window", "30000:60000"])
        .output()
        .unwrap());
    let full = fs::read_to_string(q1.join("S00.quotes.csv")).unwrap();
    let windowed = fs::read_to_string(q2.join("S00.quotes.csv")).unwrap();
    assert!(windowed.lines().count() < full.lines().count());
    for line in windowed.lines().skip(1) {
        let ts: i64 = line.split(',').next().unwrap().parse().unwrap();
        assert!((30_000..60_000).contains(&ts));
    }
}
