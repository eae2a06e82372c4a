//! Command-line interface.
//!
//! Every subcommand writes `manifest.json` next to its outputs with the
//! command line, the configuration and its hash, the seed, the crate
//! version and SHA-256 digests of inputs and outputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info, warn};
use nalgebra::DMatrix;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::ConfigFile;
use crate::diagnostics::{column_iacts, group_iacts, snr_table, write_group_iacts, write_snr_table, write_trace_and_acf, DrawStore};
use crate::driver::{load_checkpoint, Chain, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::{preliminary_runs, proposals_from_runs, select_k, templates, write_table, TableRow, TableStat, Varied};
use crate::model::{simulate, Dataset};
use crate::panel::{load_returns_csv, order_series_by_r2, qr_ordering_check, FirstPick, ReturnPanel};
use crate::rjmcmc::{read_proposal_bundle, write_proposal_bundle};

/// Sets the default worker-thread count.
pub const THREADS_ENV: &str = "FACTOR_GARCH_THREADS";

#[derive(Debug, Parser)]
#[command(name = "factor-garch", version, about = "Particle Gibbs inference for latent factor GARCH models")]
struct Cli {
    /// Log progress at debug level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct DataArgs {
    /// Observations CSV, or a directory holding `data.csv`.
    #[arg(long)]
    data: PathBuf,
    /// Read the data as a return panel whose first column holds period labels.
    #[arg(long)]
    panel: bool,
    /// First period label to keep (panel input).
    #[arg(long, requires = "panel")]
    from: Option<String>,
    /// Last period label to keep (panel input).
    #[arg(long, requires = "panel")]
    to: Option<String>,
    /// Comma-separated 1-based series order; unlisted series are dropped.
    #[arg(long, value_delimiter = ',')]
    order: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FirstPickArg {
    Dependent,
    Explanatory,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a panel from the `[simulation]` table of a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Gibbs sampler for a fixed number of factors.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue the chain saved in `<out>/checkpoint.json`.
        #[arg(long)]
        resume: bool,
    },
    /// Choose the number of factors by reversible jump.
    SelectK {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Preliminary runs and the proposal bundle; reused when the bundle exists.
        #[arg(long)]
        prelim_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// IACTs, traces and autocorrelations of a draws CSV.
    Diagnose {
        /// Draws CSV, or a directory holding `draws.csv`.
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        max_lag: usize,
        /// Columns to trace; defaults to `bf[5,1]` when present.
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
    },
    /// Order series by explanatory power.
    OrderSeries {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 8)]
        depth: usize,
        #[arg(long, value_enum, default_value_t = FirstPickArg::Dependent)]
        first_pick: FirstPickArg,
        /// Invariant-run draws to check the ordering against.
        #[arg(long)]
        check_draws: Option<PathBuf>,
        /// Smallest acceptable diagonal of D in the check.
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
        /// Output directory; the ordering is printed either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit status.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let args: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, &args) {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(command: Command, args: &[String]) -> Result<()> {
    match command {
        Command::Simulate { config, out } => cmd_simulate(&config, &out, args),
        Command::Estimate { config, data, out, resume } => cmd_estimate(&config, &data, &out, resume, args),
        Command::SelectK { config, data, prelim_dir, out } => cmd_select_k(&config, &data, &prelim_dir, &out, args),
        Command::Diagnose { draws, out, max_lag, columns } => cmd_diagnose(&draws, &out, max_lag, columns, args),
        Command::OrderSeries { data, depth, first_pick, check_draws, threshold, out } => {
            let first = match first_pick {
                FirstPickArg::Dependent => FirstPick::Dependent,
                FirstPickArg::Explanatory => FirstPick::Explanatory,
            };
            cmd_order_series(&data, depth, first, check_draws.as_deref(), threshold, out.as_deref(), args)
        }
    }
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn write_manifest(out: &Path, args: &[String], config: Option<&ConfigFile>, inputs: &[&Path], outputs: &[&str]) -> Result<()> {
    let digests = |paths: Vec<PathBuf>| -> Result<serde_json::Map<String, serde_json::Value>> {
        paths.into_iter().map(|p| Ok((p.display().to_string(), json!(file_digest(&p)?)))).collect()
    };
    let manifest = json!({
        "command": args,
        "crate": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config.map(|c| c.to_toml()),
        "config_hash": config.map(|c| c.run.hash()),
        "seed": config.map(|c| c.run.seed),
        "simulation_seed": config.and_then(|c| c.simulation.as_ref().map(|s| s.seed)),
        "inputs": digests(inputs.iter().map(|p| p.to_path_buf()).collect())?,
        "outputs": digests(outputs.iter().map(|o| out.join(o)).collect())?,
    });
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn data_file(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("data.csv")
    } else {
        data.to_path_buf()
    }
}

/// Loads observations and series names, applying the date window and order.
fn load_data(args: &DataArgs) -> Result<(Dataset, Vec<String>, PathBuf)> {
    let path = data_file(&args.data);
    let panel = if args.panel {
        let mut p = load_returns_csv(&path)?;
        if args.from.is_some() || args.to.is_some() {
            let from = args.from.clone().unwrap_or_else(|| p.dates[0].clone());
            let to = args.to.clone().unwrap_or_else(|| p.dates[p.n_periods() - 1].clone());
            p = p.slice_dates(&from, &to)?;
        }
        p
    } else {
        let d = Dataset::read_csv(&path)?;
        let n = d.n_series();
        ReturnPanel::new(
            (1..=d.n_periods()).map(|t| t.to_string()).collect(),
            (1..=n).map(|i| format!("series{i}")).collect(),
            d.observations,
        )?
    };
    let panel = match &args.order {
        None => panel,
        Some(order) => {
            if order.iter().any(|&i| i == 0 || i > panel.n_series()) {
                return Err(Error::Config(format!("--order entries must lie in 1..={}", panel.n_series())));
            }
            panel.select(&order.iter().map(|i| i - 1).collect::<Vec<_>>())
        }
    };
    info!("data: {} periods x {} series", panel.n_periods(), panel.n_series());
    Ok((Dataset::new(panel.returns)?, panel.series_names, path))
}

fn cmd_simulate(config_path: &Path, out: &Path, args: &[String]) -> Result<()> {
    let config = ConfigFile::load(config_path)?;
    let sim = config.simulation.clone().ok_or_else(|| Error::Config("the config file has no [simulation] table".into()))?;
    let spec = sim.to_spec()?;
    let data = simulate(&spec, sim.seed)?;
    std::fs::create_dir_all(out)?;
    data.write_csv(out.join("data.csv"), true)?;
    let mut outputs = vec!["data.csv", "true_spec.json"];
    if let Some(f) = &data.true_factors {
        crate::model::write_matrix_csv(out.join("factors.csv"), f, Some("factor"))?;
        outputs.push("factors.csv");
    }
    if let Some(v) = &data.true_factor_variances {
        crate::model::write_matrix_csv(out.join("factor_variances.csv"), v, Some("factor"))?;
        outputs.push("factor_variances.csv");
    }
    std::fs::write(out.join("true_spec.json"), serde_json::to_string_pretty(&spec)?)?;
    write_manifest(out, args, Some(&config), &[config_path], &outputs)?;
    println!("simulated {} periods x {} series into {}", data.n_periods(), data.n_series(), out.display());
    Ok(())
}

/// Draws, IACT tables, the `bf[5,1]` trace and the SNR table of a finished run.
fn write_run_outputs(out: &Path, store: &DrawStore, data: &Dataset, names: &[String], particles: usize) -> Result<Vec<&'static str>> {
    let mut outputs = vec!["draws.csv"];
    store.write_csv(out.join("draws.csv"))?;
    if store.n_draws() >= 100 {
        let groups = group_iacts(store);
        write_group_iacts(out.join("iact_groups.csv"), &groups)?;
        let row = TableRow { setting: particles as f64, particles, groups };
        write_table(out.join("iact_table.csv"), Varied::Particles, std::slice::from_ref(&row), TableStat::Median)?;
        write_table(out.join("iact_table_max.csv"), Varied::Particles, std::slice::from_ref(&row), TableStat::Max)?;
        outputs.extend(["iact_groups.csv", "iact_table.csv", "iact_table_max.csv"]);
    } else {
        warn!("fewer than 100 draws; IACT tables skipped");
    }
    let traced = crate::columns::bf(4, 0);
    if store.column_index(&traced).is_some() && store.n_draws() > 2 {
        let lag = 50.min(store.n_draws() - 1);
        write_trace_and_acf(store, &[traced], lag, out.join("trace.csv"), out.join("acf.csv"))?;
        outputs.extend(["trace.csv", "acf.csv"]);
    }
    match snr_table(&data.observations, store) {
        Ok(rows) => {
            write_snr_table(out.join("snr.csv"), &rows, Some(names))?;
            outputs.push("snr.csv");
        }
        Err(e) => warn!("no SNR table: {e}"),
    }
    Ok(outputs)
}

fn cmd_estimate(config_path: &Path, data_args: &DataArgs, out: &Path, resume: bool, args: &[String]) -> Result<()> {
    let config = ConfigFile::load(config_path)?;
    let run: RunConfig = RunConfig { rj_enabled: false, ..config.run.clone() };
    let (data, names, data_path) = load_data(data_args)?;
    std::fs::create_dir_all(out)?;
    let ck_path = out.join("checkpoint.json");
    let mut chain = if resume {
        Chain::from_checkpoint(&data, load_checkpoint(&ck_path)?, run.clone())?
    } else {
        Chain::new(&data, run.clone(), None)?
    };
    chain.run()?;
    chain.save_checkpoint(&ck_path)?;
    let store = chain.into_store();
    let mut outputs = write_run_outputs(out, &store, &data, &names, run.particles)?;
    outputs.push("checkpoint.json");
    write_manifest(out, args, Some(&config), &[config_path, &data_path], &outputs)?;
    println!("{} draws written to {}", store.n_draws(), out.join("draws.csv").display());
    Ok(())
}

fn cmd_select_k(config_path: &Path, data_args: &DataArgs, prelim: &Path, out: &Path, args: &[String]) -> Result<()> {
    let config = ConfigFile::load(config_path)?;
    let run = RunConfig { rj_enabled: true, ..config.run.clone() };
    run.validate()?;
    let (data, names, data_path) = load_data(data_args)?;
    std::fs::create_dir_all(prelim)?;
    std::fs::create_dir_all(out)?;
    let bundle = prelim.join("proposals.csv");
    let proposals = if bundle.exists() {
        info!("reusing proposals from {}", bundle.display());
        read_proposal_bundle(&bundle, &templates(&data, &run)?)?
    } else {
        let runs = preliminary_runs(&data, &run)?;
        for (k, r) in runs.iter().enumerate() {
            r.store.write_csv(prelim.join(format!("prelim_k{}.csv", k + 1)))?;
        }
        let p = proposals_from_runs(&runs, &run)?;
        write_proposal_bundle(&bundle, &p)?;
        p
    };
    let selection = select_k(&data, &run, Some(proposals))?;
    let mut outputs = write_run_outputs(out, &selection.store, &data, &names, run.particles)?;
    let mut w = csv::Writer::from_path(out.join("k_posterior.csv"))?;
    w.write_record(["k", "frequency"])?;
    for (k, f) in selection.k_frequencies.iter().enumerate() {
        w.write_record([(k + 1).to_string(), f.to_string()])?;
    }
    w.flush()?;
    outputs.push("k_posterior.csv");
    write_manifest(out, args, Some(&config), &[config_path, &data_path, &bundle], &outputs)?;
    println!("modal k = {} ({:.3})", selection.modal_k(), selection.k_frequencies[selection.modal_k() - 1]);
    Ok(())
}

fn cmd_diagnose(draws: &Path, out: &Path, max_lag: usize, columns: Option<Vec<String>>, args: &[String]) -> Result<()> {
    let path = if draws.is_dir() { draws.join("draws.csv") } else { draws.to_path_buf() };
    let store = DrawStore::read_csv(&path)?;
    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("iact_columns.csv"))?;
    w.write_record(["column", "iact"])?;
    for (name, v) in column_iacts(&store) {
        w.write_record([name, v.map(|x| x.to_string()).unwrap_or_else(|e| format!("NA ({e})"))])?;
    }
    w.flush()?;
    write_group_iacts(out.join("iact_groups.csv"), &group_iacts(&store))?;
    let mut outputs = vec!["iact_columns.csv", "iact_groups.csv"];
    let columns = columns.unwrap_or_else(|| {
        let c = crate::columns::bf(4, 0);
        if store.column_index(&c).is_some() {
            vec![c]
        } else {
            store.names.iter().take(1).cloned().collect()
        }
    });
    if !columns.is_empty() && store.n_draws() > 1 {
        write_trace_and_acf(&store, &columns, max_lag.min(store.n_draws() - 1), out.join("trace.csv"), out.join("acf.csv"))?;
        outputs.extend(["trace.csv", "acf.csv"]);
    }
    write_manifest(out, args, None, &[&path], &outputs)?;
    for g in group_iacts(&store) {
        println!("{:<10} columns {:>5}  median IACT {:>8.3}  max {:>8.3}", g.label, g.n_columns, g.median, g.max);
    }
    Ok(())
}

/// Loading matrices from `beta[i,j]` columns of an invariant run.
fn loading_draws(store: &DrawStore, n: usize) -> Result<Vec<DMatrix<f64>>> {
    let mut k = 0;
    while store.column_index(&crate::columns::beta(0, k)).is_some() {
        k += 1;
    }
    if k == 0 {
        return Err(Error::domain("draws contain no beta[1,j] columns"));
    }
    let idx = (0..n)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| {
            let name = crate::columns::beta(i, j);
            store.column_index(&name).ok_or_else(|| Error::domain(format!("draws lack `{name}`; use an invariant run")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(store.rows.iter().map(|row| DMatrix::from_row_iterator(n, k, idx.iter().map(|&c| row[c]))).collect())
}

fn cmd_order_series(
    data_args: &DataArgs,
    depth: usize,
    first: FirstPick,
    check: Option<&Path>,
    threshold: f64,
    out: Option<&Path>,
    args: &[String],
) -> Result<()> {
    let (data, names, data_path) = load_data(data_args)?;
    let panel = ReturnPanel::new((1..=data.n_periods()).map(|t| t.to_string()).collect(), names.clone(), data.observations.clone())?;
    let order = order_series_by_r2(&panel, depth, first)?;
    let listed: Vec<String> = order.iter().map(|i| (i + 1).to_string()).collect();
    println!("order: {}", listed.join(","));
    for (rank, &i) in order.iter().enumerate() {
        println!("{:>3}. {}", rank + 1, names[i]);
    }
    let mut outputs = Vec::new();
    let mut inputs = vec![data_path.clone()];
    let qr = match check {
        None => None,
        Some(p) => {
            let p = if p.is_dir() { p.join("draws.csv") } else { p.to_path_buf() };
            let store = DrawStore::read_csv(&p)?;
            inputs.push(p);
            let check = qr_ordering_check(&loading_draws(&store, data.n_series())?);
            let flagged = check.per_draw.iter().filter(|d| d.rank_deficient).count();
            println!("smallest diagonal of D: {:.3e} ({} rank-deficient draws excluded)", check.min_abs_diag, flagged);
            if !check.passes(threshold) {
                warn!("ordering is close to violating the unit-diagonal identification (threshold {threshold:e})");
            }
            Some(check)
        }
    };
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        let mut w = csv::Writer::from_path(out.join("order.csv"))?;
        w.write_record(["rank", "series", "name"])?;
        for (rank, &i) in order.iter().enumerate() {
            w.write_record([(rank + 1).to_string(), (i + 1).to_string(), names[i].clone()])?;
        }
        w.flush()?;
        outputs.push("order.csv");
        if let Some(check) = &qr {
            let mut w = csv::Writer::from_path(out.join("qr_check.csv"))?;
            w.write_record(["draw", "min_d", "rank_deficient"])?;
            for (r, d) in check.per_draw.iter().enumerate() {
                let min = d.d.iter().copied().fold(f64::INFINITY, f64::min);
                w.write_record([
                    (r + 1).to_string(),
                    if d.rank_deficient { String::new() } else { min.to_string() },
                    d.rank_deficient.to_string(),
                ])?;
            }
            w.flush()?;
            outputs.push("qr_check.csv");
        }
        let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        write_manifest(out, args, None, &input_refs, &outputs)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flags_fail_with_usage() {
        assert_ne!(cli_dispatch(["factor-garch", "simulate", "--bogus"]), 0);
        assert_ne!(cli_dispatch(["factor-garch", "frobnicate"]), 0);
        assert_eq!(cli_dispatch(["factor-garch", "--help"]), 0);
    }

    #[test]
    fn missing_config_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("none.toml");
        let out = dir.path().join("o");
        assert_eq!(
            cli_dispatch([
                "factor-garch".into(),
                "simulate".into(),
                "--config".into(),
                cfg.into_os_string(),
                "--out".into(),
                out.into_os_string()
            ]),
            1
        );
    }
}
