//! Command-line front end.
//!
//! Exit statuses: 0 success, 1 usage or I/O error, 2 infeasible design or
//! numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dco::DcoConfig;
use crate::error::Error;
use crate::fileio::ConstellationFile;
use crate::harness::{analytic_curve, ber_csv, power_gain_at_ber, run_ber, Scheme};
use crate::labeling::{bsa_optimize, lambda_estimate, reference_n0};
use crate::model::{BitLabeling, PowerConvention, SystemConfig};
use crate::optimizer::{scp_design, verify_design, DesignOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dcio", version, about = "DC-informative optical OFDM constellation design and link simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design a constellation, verify it and label it.
    Design(DesignArgs),
    /// Check a constellation file against a configuration.
    Verify(VerifyArgs),
    /// Relabel a constellation with the binary switching algorithm.
    Label(LabelArgs),
    /// Monte-Carlo BER sweep of a constellation file.
    Ber(BerArgs),
    /// Compare a designed constellation with the DCO reference.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// System configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives `constellation.txt` and `report.txt`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub constellation: PathBuf,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub constellation: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reference noise density; defaults to the level giving a closest-pair
    /// error probability of 1e-3.
    #[arg(long)]
    pub n0_ref: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BerArgs {
    #[arg(long)]
    pub constellation: PathBuf,
    /// Configuration supplying mode, channel and power accounting.
    #[arg(long)]
    pub config: PathBuf,
    /// `start:step:stop` or a comma-separated list, in dB.
    #[arg(long, default_value = "0:1:20")]
    pub snr_grid: String,
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Designed constellation file.
    #[arg(long)]
    pub dcio: PathBuf,
    /// Configuration the design was made for.
    #[arg(long)]
    pub config: PathBuf,
    /// DCO reference configuration (JSON).
    #[arg(long)]
    pub dco: PathBuf,
    #[arg(long, default_value_t = 1e-5)]
    pub target_ber: f64,
    #[arg(long, default_value = "0:0.05:35")]
    pub snr_grid: String,
    /// Monte-Carlo symbols per SNR point; 0 skips the simulation.
    #[arg(long, default_value_t = 0)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional report file; the report is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn infeasible(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INFEASIBLE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::usage(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `start:step:stop` (inclusive) or `a,b,c`.
pub fn parse_snr_grid(s: &str) -> CliResult<Vec<f64>> {
    let bad = || Failure::usage(format!("cannot parse SNR grid `{s}`"));
    if s.contains(':') {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let [start, step, stop] = parts[..] else {
            return Err(bad());
        };
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..count)
            .map(|i| {
                let v = start + i as f64 * step;
                (v * 1e9).round() / 1e9
            })
            .collect())
    } else {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect()
    }
}

fn load_config(path: &Path) -> CliResult<SystemConfig> {
    let cfg = SystemConfig::load(path)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    cfg.check()?;
    Ok(cfg)
}

fn load_constellation(path: &Path) -> CliResult<ConstellationFile> {
    ConstellationFile::load(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn provenance(command: &str, config_json: &str, seed: u64) -> Vec<String> {
    vec![
        format!("dcio {} {command}", env!("CARGO_PKG_VERSION")),
        format!("config {config_json}"),
        format!("seed {seed}"),
    ]
}

fn cmd_design(a: &DesignArgs, out: &mut String) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    if a.restarts == 0 {
        return Err(Failure::usage("--restarts must be positive"));
    }
    std::fs::create_dir_all(&a.out)
        .map_err(|e| Failure::usage(format!("{}: {e}", a.out.display())))?;
    let opts = DesignOptions {
        restarts: a.restarts,
        seed: a.seed,
        ..Default::default()
    };
    let res = scp_design(&cfg, &opts)?;
    if !res.feasible {
        return Err(Failure::infeasible(
            "no restart produced a feasible constellation",
        ));
    }
    let report = verify_design(&res.constellation, &cfg)?;
    let (labeling, n0_ref, cost) = if res.degenerate {
        (BitLabeling::identity(cfg.m), f64::NAN, 0.0)
    } else {
        let n0 = reference_n0(&res.constellation);
        let bsa = bsa_optimize(&res.constellation, n0, opts.seed);
        (bsa.labeling, n0, bsa.cost)
    };
    let lambda = if res.degenerate {
        f64::NAN
    } else {
        lambda_estimate(&labeling, &res.constellation, n0_ref)
    };

    let mut file = ConstellationFile::new(cfg.n, cfg.n_b, res.constellation.clone(), labeling)?;
    file.comments = provenance("design", &cfg.to_json(), a.seed);
    file.comments.push(format!("restarts {}", a.restarts));
    file.comments.push(format!("d_min {:.17e}", res.d_min));
    file.save(a.out.join("constellation.txt"))?;

    let mut text = String::new();
    for c in provenance("design", &cfg.to_json(), a.seed) {
        let _ = writeln!(text, "# {c}");
    }
    let _ = writeln!(text, "restarts       {}", a.restarts);
    let _ = writeln!(text, "best_restart   {}", res.best_restart);
    let _ = writeln!(text, "iterations     {}", res.iterations);
    let _ = write!(text, "{report}");
    let _ = writeln!(text, "bsa_cost       {cost:.9e}");
    let _ = writeln!(text, "n0_ref         {n0_ref:.9e}");
    let _ = writeln!(text, "lambda         {lambda:.6}");
    write(&a.out.join("report.txt"), &text)?;
    out.push_str(&text);
    if !report.is_ok() {
        return Err(Failure::infeasible("designed constellation fails verification"));
    }
    Ok(())
}

fn cmd_verify(a: &VerifyArgs, out: &mut String) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let file = load_constellation(&a.constellation)?;
    let report = verify_design(&file.constellation, &cfg)?;
    let _ = write!(out, "{report}");
    if report.is_ok() {
        Ok(())
    } else {
        Err(Failure::infeasible("constellation violates its constraints"))
    }
}

fn cmd_label(a: &LabelArgs, out: &mut String) -> CliResult<()> {
    let mut file = load_constellation(&a.constellation)?;
    let n0 = match a.n0_ref {
        Some(v) if v > 0.0 => v,
        Some(v) => return Err(Failure::usage(format!("--n0-ref must be positive, got {v}"))),
        None => reference_n0(&file.constellation),
    };
    let bsa = bsa_optimize(&file.constellation, n0, a.seed);
    let lambda = lambda_estimate(&bsa.labeling, &file.constellation, n0);
    file.labeling = bsa.labeling;
    file.comments.push(format!("label seed {} n0_ref {n0:.9e}", a.seed));
    file.save(&a.out)?;
    let _ = writeln!(out, "bsa_cost  {:.9e}", bsa.cost);
    let _ = writeln!(out, "swaps     {}", bsa.trace.len() - 1);
    let _ = writeln!(out, "lambda    {lambda:.6}");
    Ok(())
}

fn design_scheme(name: &str, cfg: &SystemConfig, file: &ConstellationFile) -> CliResult<Scheme> {
    if file.n != cfg.n || file.n_j != cfg.n_j || file.constellation.size() != cfg.m {
        return Err(Failure::usage(format!(
            "constellation is for N={} N_J={} M={}, config has N={} N_J={} M={}",
            file.n,
            file.n_j,
            file.constellation.size(),
            cfg.n,
            cfg.n_j,
            cfg.m
        )));
    }
    Ok(Scheme::from_design(
        name,
        cfg,
        file.constellation.clone(),
        file.labeling.clone(),
    )?)
}

fn cmd_ber(a: &BerArgs, out: &mut String) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let file = load_constellation(&a.constellation)?;
    let grid = parse_snr_grid(&a.snr_grid)?;
    let scheme = design_scheme("dcio", &cfg, &file)?;
    let pts = run_ber(&scheme, &grid, a.trials, a.seed);
    let mut comments = provenance("ber", &cfg.to_json(), a.seed);
    comments.push(format!("constellation {}", a.constellation.display()));
    let csv = ber_csv(&[(&scheme, &pts)], &comments);
    write(&a.out, &csv)?;
    out.push_str(&csv);
    Ok(())
}

fn cmd_compare(a: &CompareArgs, out: &mut String) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let file = load_constellation(&a.dcio)?;
    let dco_cfg = DcoConfig::load(&a.dco)
        .map_err(|e| Failure::usage(format!("{}: {e}", a.dco.display())))?;
    dco_cfg.validate()?;
    if !(a.target_ber > 0.0 && a.target_ber < 0.5) {
        return Err(Failure::usage("--target-ber must lie in (0, 0.5)"));
    }
    let grid = parse_snr_grid(&a.snr_grid)?;
    let bias = dco_cfg.resolve_bias()?;
    let dco = Scheme::dco("dco", &dco_cfg, bias, dco_cfg.power_convention)?;
    let dcio = design_scheme("dcio", &cfg, &file)?;
    if (dco.power - dcio.power).abs() > 1e-3 * dco.power {
        return Err(Failure::usage(format!(
            "powers differ: DCO {:.6} vs DCIO {:.6}; design the constellation for P_total = {:.6}",
            dco.power, dcio.power, dco.power
        )));
    }

    let mut text = String::new();
    for c in provenance("compare", &cfg.to_json(), a.seed) {
        let _ = writeln!(text, "# {c}");
    }
    let _ = writeln!(text, "# dco {}", dco_cfg.to_json());
    let _ = writeln!(text, "dco_bias          {bias:.6}");
    for conv in [PowerConvention::BiasSquared, PowerConvention::FdSum] {
        let _ = writeln!(
            text,
            "dco_power[{conv}] {:.6}",
            crate::dco::dco_power(&dco_cfg, bias, conv)
        );
    }
    let _ = writeln!(text, "dcio_power        {:.6}", dcio.power);
    let _ = writeln!(text, "dco_d_min         {:.6}", dco.received_constellation()?.min_distance());
    let _ = writeln!(text, "dcio_d_min        {:.6}", dcio.received_constellation()?.min_distance());

    let curve = |s: &Scheme| -> CliResult<Vec<(f64, f64)>> {
        Ok(analytic_curve(s, &grid)?
            .iter()
            .map(|p| (p.snr_db, p.ber_union))
            .collect())
    };
    let gain = power_gain_at_ber(&curve(&dco)?, &curve(&dcio)?, a.target_ber);
    match gain {
        Ok(g) => {
            let _ = writeln!(text, "analytic_gain_db  {g:.3} at BER {:e}", a.target_ber);
        }
        Err(e) => {
            let _ = writeln!(text, "analytic_gain_db  n/a ({e})");
        }
    }
    if a.trials > 0 {
        let mc = |s: &Scheme| -> Vec<(f64, f64)> {
            run_ber(s, &grid, a.trials, a.seed)
                .iter()
                .map(|p| (p.snr_db, p.ber))
                .collect()
        };
        match power_gain_at_ber(&mc(&dco), &mc(&dcio), a.target_ber) {
            Ok(g) => {
                let _ = writeln!(text, "mc_gain_db        {g:.3} at BER {:e}", a.target_ber);
            }
            Err(e) => {
                let _ = writeln!(text, "mc_gain_db        n/a ({e})");
            }
        }
    }
    if let Some(p) = &a.out {
        write(p, &text)?;
    }
    out.push_str(&text);
    Ok(())
}

/// Runs one command line and returns the exit status together with the
/// text meant for standard output and standard error.
pub fn run<I, T>(args: I) -> (i32, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            return if code == EXIT_OK {
                (code, text, String::new())
            } else {
                (code, String::new(), text)
            };
        }
    };
    let mut out = String::new();
    let res = match &cli.command {
        Command::Design(a) => cmd_design(a, &mut out),
        Command::Verify(a) => cmd_verify(a, &mut out),
        Command::Label(a) => cmd_label(a, &mut out),
        Command::Ber(a) => cmd_ber(a, &mut out),
        Command::Compare(a) => cmd_compare(a, &mut out),
    };
    match res {
        Ok(()) => (EXIT_OK, out, String::new()),
        Err(f) => (f.code, out, format!("error: {}\n", f.message)),
    }
}
