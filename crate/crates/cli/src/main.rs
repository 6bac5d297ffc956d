//! Command-line front end: simulate CHSH trial streams, run the p-value
//! protocols over trial files, and sweep strength and gain rates into CSV.
//!
//! Exit codes: 0 success, 1 usage error, 2 input validation or parse
//! error, 3 numerical non-convergence. Every output starts with comment
//! lines recording the tool version and the full configuration, so a
//! result can be reproduced from its own header.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use belltest_core::chsh::{optimal_angles, quantum_distribution, sample_trials, ChshConfig};
use belltest_core::estimation::{EstimatorOptions, Prior};
use belltest_core::format::{
    parse_distribution_file, parse_functional_file, parse_trial_file, write_distribution_file,
    write_trial_file,
};
use belltest_core::lr::{minimize_kl, DEFAULT_EM_TOL};
use belltest_core::protocols::{
    gain_rates, martingale_run, pbr_run, sd_run, PbrOptions, RunningResult,
};
use belltest_core::scenario::{chsh_functional, BellFunctional, SettingDistribution};
use belltest_core::Error;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "belltest",
    version,
    about = "Bell-test trial simulation and statistical analysis"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a CHSH experiment at optimal angles into a trial file.
    Simulate(SimulateArgs),
    /// Run the hypothesis-test protocols over a trial file, emitting CSV.
    Analyze(AnalyzeArgs),
    /// Project a distribution file onto the local polytope and report its
    /// statistical strength.
    Strength(StrengthArgs),
    /// Sweep asymptotic per-trial gain rates over a parameter grid.
    Gains(GainsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// State parameter in cos(theta)|00> + sin(theta)|11>, degrees.
    #[arg(long, default_value_t = 45.0)]
    theta: f64,
    /// Detection efficiency per party, 0 to 1.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Visibility: weight of the state against white noise, 0 to 1.
    #[arg(long, default_value_t = 1.0)]
    vis: f64,
    /// Number of trials to draw.
    #[arg(long, default_value_t = 5000)]
    trials: usize,
    /// Seed of the deterministic generator.
    #[arg(long)]
    seed: u64,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Protocol {
    Pbr,
    Mart,
    Sd,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trial file to analyze.
    trials: PathBuf,
    /// Protocols to run, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "pbr,mart,sd")]
    protocols: Vec<Protocol>,
    /// PBR block length; derived from the stream length when omitted.
    #[arg(long)]
    block_size: Option<usize>,
    /// Distribution file primed into the PBR estimator as pseudo-counts.
    #[arg(long, requires = "prime_weight")]
    prime: Option<PathBuf>,
    /// Pseudo-count weight of --prime, in trial equivalents.
    #[arg(long, requires = "prime")]
    prime_weight: Option<f64>,
    /// Exponential forgetting half-life of the PBR estimator, in trials.
    #[arg(long)]
    half_life: Option<f64>,
    /// Bell-functional file; the uniform-settings CHSH functional when
    /// omitted.
    #[arg(long)]
    bell: Option<PathBuf>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StrengthArgs {
    /// Distribution file to project onto the local polytope.
    dist: PathBuf,
    /// Write the closest local model found as a distribution file.
    #[arg(long)]
    dump_lr: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("sweep").required(true).args(["sweep_theta", "sweep_eta_vis"])))]
struct GainsArgs {
    /// Sweep the state parameter in degrees at eta = 1, vis = 1.
    #[arg(long, num_args = 3, value_names = ["START", "STOP", "STEP"])]
    sweep_theta: Option<Vec<f64>>,
    /// Sweep efficiency and visibility at theta = 45 degrees.
    #[arg(long, num_args = 6, value_names = ["ETA0", "ETA1", "ETA_STEP", "VIS0", "VIS1", "VIS_STEP"])]
    sweep_eta_vis: Option<Vec<f64>>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Io(PathBuf, std::io::Error),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Io(path, e) => write!(f, "{}: {e}", path.display()),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(..) => 2,
            // Flag-domain failures are usage errors; everything else that
            // validates or parses inputs is 2; solver failures are 3.
            CliError::Core(Error::InvalidConfig(_)) => 1,
            CliError::Core(Error::FitNonConvergence { .. })
            | CliError::Core(Error::LrBoundViolation { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive through the error path; they are
            // not usage errors.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Simulate(args) => cmd_simulate(&args),
        Cmd::Analyze(args) => cmd_analyze(&args),
        Cmd::Strength(args) => cmd_strength(&args),
        Cmd::Gains(args) => cmd_gains(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn read_file(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(path.clone(), e))
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, content).map_err(|e| CliError::Io(path.clone(), e)),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

/// 17-significant-digit rendering used for every real in CSV and headers.
fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_real(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

fn base_name(path: &std::path::Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let theta = args.theta.to_radians();
    let sd = SettingDistribution::uniform(2, 2);
    // Validates the parameter ranges before any heavier work.
    ChshConfig::new(theta, args.eta, args.vis, [0.0; 4], sd.clone())?;
    let best = optimal_angles(theta, args.eta, args.vis, &sd)?;
    let cfg = ChshConfig::new(theta, args.eta, args.vis, best.angles, sd)?;
    let q = quantum_distribution(&cfg)?;
    let trials = sample_trials(&q, args.trials, args.seed);

    let comments = vec![
        format!("belltest {VERSION}"),
        format!(
            "command: simulate --theta {} --eta {} --vis {} --trials {} --seed {}",
            args.theta, args.eta, args.vis, args.trials, args.seed
        ),
        format!(
            "angles-rad: {} {} {} {}",
            real(best.angles[0]),
            real(best.angles[1]),
            real(best.angles[2]),
            real(best.angles[3])
        ),
        format!("chsh: {}", real(best.value)),
    ];
    let text = write_trial_file(q.scenario(), &trials, &comments);
    write_output(&args.out, &text)
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let parsed = parse_trial_file(&read_file(&args.trials)?)?;
    let scenario = parsed.scenario.clone();
    let sd = SettingDistribution::uniform(scenario.alice_settings(), scenario.bob_settings());
    let functional: BellFunctional = match &args.bell {
        Some(path) => {
            let f = parse_functional_file(&read_file(path)?)?;
            if f.scenario() != &scenario {
                return Err(CliError::Usage(format!(
                    "functional file {} does not match the trial file's scenario",
                    path.display()
                )));
            }
            f
        }
        None => chsh_functional(&sd)?,
    };

    let prior = match (&args.prime, args.prime_weight) {
        (Some(path), Some(weight)) => Some(Prior {
            dist: parse_distribution_file(&read_file(path)?)?,
            weight,
        }),
        _ => None,
    };
    let options = PbrOptions {
        block_len: args.block_size,
        estimator: EstimatorOptions {
            enforce_no_signaling: true,
            prior,
            half_life: args.half_life,
        },
        ..PbrOptions::default()
    };

    let mut results: Vec<RunningResult> = Vec::new();
    for p in &args.protocols {
        results.push(match p {
            Protocol::Pbr => pbr_run(&parsed.trials, &scenario, &sd, &options)?,
            Protocol::Mart => martingale_run(&parsed.trials, &functional)?,
            Protocol::Sd => sd_run(&parsed.trials, &functional, &sd)?,
        });
    }
    let refs: Vec<&RunningResult> = results.iter().collect();
    let merged = RunningResult::merge(&refs)?;

    let mut csv = String::new();
    let _ = writeln!(csv, "# belltest {VERSION}");
    let _ = writeln!(csv, "# command: analyze {}", analyze_config(args));
    let _ = writeln!(csv, "# input: {}", base_name(&args.trials));
    let _ = writeln!(csv, "n,log2p_pbr,log2p_mart,log2p_sd,I_hat,I_tilde,sigma");
    for row in &merged.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            row.trial,
            opt_real(row.log2_p_pbr),
            opt_real(row.log2_p_mart),
            opt_real(row.log2_p_sd),
            opt_real(row.i_hat),
            opt_real(row.i_tilde),
            opt_real(row.sigma),
        );
    }
    write_output(&args.out, &csv)
}

/// Canonical flag rendering for the analyze CSV header.
fn analyze_config(args: &AnalyzeArgs) -> String {
    let mut s = String::new();
    let names: Vec<&str> = args
        .protocols
        .iter()
        .map(|p| match p {
            Protocol::Pbr => "pbr",
            Protocol::Mart => "mart",
            Protocol::Sd => "sd",
        })
        .collect();
    let _ = write!(s, "--protocols {}", names.join(","));
    if let Some(h) = args.block_size {
        let _ = write!(s, " --block-size {h}");
    }
    if let (Some(path), Some(w)) = (&args.prime, args.prime_weight) {
        let _ = write!(s, " --prime {} --prime-weight {w}", base_name(path));
    }
    if let Some(h) = args.half_life {
        let _ = write!(s, " --half-life {h}");
    }
    if let Some(path) = &args.bell {
        let _ = write!(s, " --bell {}", base_name(path));
    }
    s
}

fn cmd_strength(args: &StrengthArgs) -> Result<(), CliError> {
    let q = parse_distribution_file(&read_file(&args.dist)?)?;
    let res = minimize_kl(&q, DEFAULT_EM_TOL)?;
    println!("strength-bits-per-trial: {}", real(res.strength_bits));
    println!("epsilon: {}", real(res.epsilon));
    println!("iterations: {}", res.iterations);
    println!("converged: {}", res.converged);
    if let Some(path) = &args.dump_lr {
        let comments = vec![
            format!("belltest {VERSION}"),
            format!(
                "closest local model of {} (strength {})",
                base_name(&args.dist),
                real(res.strength_bits)
            ),
        ];
        let text = write_distribution_file(&res.mixture.induced, &comments);
        std::fs::write(path, text).map_err(|e| CliError::Io(path.clone(), e))?;
    }
    Ok(())
}

/// Inclusive linear grid; rejects empty and non-advancing ranges.
fn grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !start.is_finite() || !stop.is_finite() || !step.is_finite() || step <= 0.0 {
        return Err(CliError::Usage(
            "sweep bounds must be finite with a positive step".into(),
        ));
    }
    if stop < start {
        return Err(CliError::Usage("empty sweep: stop is below start".into()));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + step * k as f64).collect())
}

fn cmd_gains(args: &GainsArgs) -> Result<(), CliError> {
    let sd = SettingDistribution::uniform(2, 2);
    let functional = chsh_functional(&sd)?;

    let mut csv = String::new();
    let _ = writeln!(csv, "# belltest {VERSION}");

    if let Some(bounds) = &args.sweep_theta {
        let thetas = grid(bounds[0], bounds[1], bounds[2])?;
        let _ = writeln!(
            csv,
            "# command: gains --sweep-theta {} {} {}",
            bounds[0], bounds[1], bounds[2]
        );
        let _ = writeln!(csv, "theta_deg,g_sd,g_mart,strength");
        for &theta_deg in &thetas {
            let rates = gain_point(theta_deg.to_radians(), 1.0, 1.0, &sd, &functional)?;
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                theta_deg,
                real(rates.g_sd),
                real(rates.g_mart),
                real(rates.strength)
            );
        }
    } else if let Some(bounds) = &args.sweep_eta_vis {
        let etas = grid(bounds[0], bounds[1], bounds[2])?;
        let visses = grid(bounds[3], bounds[4], bounds[5])?;
        let _ = writeln!(
            csv,
            "# command: gains --sweep-eta-vis {} {} {} {} {} {}",
            bounds[0], bounds[1], bounds[2], bounds[3], bounds[4], bounds[5]
        );
        let _ = writeln!(csv, "eta,vis,g_sd,g_mart,strength");
        let theta = std::f64::consts::FRAC_PI_4;
        for &eta in &etas {
            for &vis in &visses {
                let rates = gain_point(theta, eta, vis, &sd, &functional)?;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    eta,
                    vis,
                    real(rates.g_sd),
                    real(rates.g_mart),
                    real(rates.strength)
                );
            }
        }
    } else {
        unreachable!("clap enforces the sweep group");
    }
    write_output(&args.out, &csv)
}

fn gain_point(
    theta: f64,
    eta: f64,
    vis: f64,
    sd: &SettingDistribution,
    functional: &BellFunctional,
) -> Result<belltest_core::protocols::GainRates, CliError> {
    let best = optimal_angles(theta, eta, vis, sd)?;
    let cfg = ChshConfig::new(theta, eta, vis, best.angles, sd.clone())?;
    let q = quantum_distribution(&cfg)?;
    Ok(gain_rates(&q, functional)?)
}
