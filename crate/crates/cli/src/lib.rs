//! The `anglerig` command line: scenario runs, one-shot rigidity checks,
//! gradient verification, the bearing/angle equivalence Monte-Carlo, and
//! standalone localization runs.

pub mod framework_file;
pub mod localize_file;
pub mod trace_io;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};

use anglerig_core::gradcheck::{run_all, GradcheckOptions};
use anglerig_core::localization::{fit_decay_rate, run_localization, SwitchingSchedule};
use anglerig_core::rigidity::{analyze, check_theorem1, RANK_TOL};
use anglerig_core::simulation::{random_framework, run, ScenarioConfig};

use framework_file::FrameworkFile;
use localize_file::LocalizeFileConfig;

/// Exit code for completed work.
pub const EXIT_OK: i32 = 0;
/// Exit code for configuration, parse, or verification failures.
pub const EXIT_ERROR: i32 = 1;
/// Exit code for a scenario that aborted (e.g. on collision).
pub const EXIT_ABORTED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "anglerig",
    about = "Angle rigidity toolbox: multi-robot sensing simulation, rigidity tests, and localization",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write trace.csv, summary.json, and the resolved config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Analyze one framework file and print its rigidity report as JSON.
    Check {
        #[arg(long)]
        framework: PathBuf,
    },
    /// Verify every analytic gradient against finite differences.
    Gradcheck {
        /// Random states per gradient family and dimension.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Negative control: flips one analytic gradient to prove the
        /// harness catches a broken formula.
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
    /// Monte-Carlo check of the bearing/angle rigidity equivalence.
    Theorem1 {
        /// Ambient dimension, 2 or 3.
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 10000)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run the position estimator against a fixed truth under switching
    /// graphs and fit the error decay rate.
    Localize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Run { config, out, seed } => cmd_run(&config, &out, seed),
        Command::Check { framework } => cmd_check(&framework),
        Command::Gradcheck {
            trials,
            seed,
            inject_sign_flip,
        } => cmd_gradcheck(trials, seed, inject_sign_flip),
        Command::Theorem1 { d, trials, seed } => cmd_theorem1(d, trials, seed),
        Command::Localize { config, out } => cmd_localize(&config, &out),
    };
    match outcome {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            EXIT_ERROR
        }
    }
}

fn read_file(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn write_file(path: &Path, content: &str) -> Result<(), String> {
    fs::write(path, content).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

pub fn cmd_run(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<i32, String> {
    let text = read_file(config_path)?;
    let mut config = ScenarioConfig::from_json(&text).map_err(|e| e.to_string())?;
    if let Some(s) = seed {
        config.seed = s;
    }
    fs::create_dir_all(out_dir).map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
    let trace = run(&config).map_err(|e| e.to_string())?;
    write_file(&out_dir.join("trace.csv"), &trace_io::trace_csv(&trace))?;
    let summary = trace_io::run_summary(&trace, &config);
    write_file(
        &out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    write_file(&out_dir.join("resolved_config.json"), &config.to_json())?;
    if trace.completed() {
        println!(
            "run completed: {} records, lambda8 min {:.6e}",
            trace.records.len(),
            summary["lambda8_min"].as_f64().unwrap_or(f64::NAN)
        );
        Ok(EXIT_OK)
    } else {
        println!(
            "run aborted at t = {}: {}",
            trace.abort.as_ref().unwrap().t,
            trace.abort.as_ref().unwrap().reason
        );
        Ok(EXIT_ABORTED)
    }
}

pub fn cmd_check(framework_path: &Path) -> Result<i32, String> {
    let text = read_file(framework_path)?;
    let framework = FrameworkFile::from_json(&text)
        .and_then(|f| f.to_framework())
        .map_err(|e| e.to_string())?;
    let report = analyze(&framework, RANK_TOL).map_err(|e| e.to_string())?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(EXIT_OK)
}

pub fn cmd_gradcheck(trials: usize, seed: u64, sign_flip: bool) -> Result<i32, String> {
    if trials == 0 {
        return Err("trials must be at least 1".into());
    }
    let reports = run_all(&GradcheckOptions {
        trials,
        seed,
        sign_flip,
    })
    .map_err(|e| e.to_string())?;
    let mut all_passed = true;
    for r in &reports {
        println!(
            "{:<26} worst rel err {:>12.3e}  (threshold {:.0e}, {} trials)  {}",
            r.name,
            r.worst_rel_err,
            r.threshold,
            r.trials,
            if r.passed { "PASS" } else { "FAIL" }
        );
        all_passed &= r.passed;
    }
    Ok(if all_passed { EXIT_OK } else { EXIT_ERROR })
}

pub fn cmd_theorem1(d: usize, trials: usize, seed: u64) -> Result<i32, String> {
    if !(d == 2 || d == 3) {
        return Err(format!("d must be 2 or 3, got {d}"));
    }
    if trials == 0 {
        return Err("trials must be at least 1".into());
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut both = 0usize;
    let mut neither = 0usize;
    let mut ibr_without_rhs = 0usize;
    let mut rhs_without_ibr = 0usize;
    for k in 0..trials {
        let n = 4 + (k % 4);
        let fw = random_framework(rng.random_range(0..u64::MAX / 2), n, d, (2, n - 1))
            .map_err(|e| e.to_string())?;
        let verdict = check_theorem1(&fw, RANK_TOL).map_err(|e| e.to_string())?;
        let rhs = verdict.iar && verdict.min_span_ok;
        match (verdict.ibr, rhs) {
            (true, true) => both += 1,
            (false, false) => neither += 1,
            (true, false) => ibr_without_rhs += 1,
            (false, true) => rhs_without_ibr += 1,
        }
    }
    let inconsistent = ibr_without_rhs + rhs_without_ibr;
    println!("trials: {trials} (d = {d})");
    println!("  bearing rigid and (angle rigid with spans):     {both}");
    println!("  neither:                                        {neither}");
    println!("  bearing rigid without the angle-rigid side:     {ibr_without_rhs}");
    println!("  angle-rigid side without bearing rigidity:      {rhs_without_ibr}");
    println!("  inconsistencies: {inconsistent}");
    Ok(if inconsistent == 0 { EXIT_OK } else { EXIT_ERROR })
}

pub fn cmd_localize(config_path: &Path, out_dir: &Path) -> Result<i32, String> {
    let text = read_file(config_path)?;
    let config = LocalizeFileConfig::from_json(&text).map_err(|e| e.to_string())?;
    fs::create_dir_all(out_dir).map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;

    let truth = config.truth_vectors();
    let graphs = config.graph_family().map_err(|e| e.to_string())?;
    let schedule = SwitchingSchedule::round_robin(graphs, config.dwell, config.integrator.t_end)
        .map_err(|e| e.to_string())?;
    let mut noise_rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let init: Vec<nalgebra::DVector<f64>> = truth
        .iter()
        .map(|p| {
            p + nalgebra::DVector::from_fn(config.dimension, |_, _| {
                let n: f64 = noise_rng.sample(rand_distr::StandardNormal);
                config.init_noise_std * n
            })
        })
        .collect();
    let initial_guess_error = init
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b).norm_squared())
        .sum::<f64>()
        .sqrt();

    let trace = run_localization(
        &truth,
        &schedule,
        init,
        config.gamma_a,
        config.gamma_s,
        config.scale_edge_zero_based(),
        config.integrator.dt,
        config.integrator.t_end,
        config.integrator.method,
    )
    .map_err(|e| e.to_string())?;

    let mut csv = String::from("t,error,active_graph\n");
    for ((t, e), g) in trace
        .times
        .iter()
        .zip(&trace.errors)
        .zip(&trace.active_graph)
    {
        csv.push_str(&format!(
            "{},{},{}\n",
            trace_io::fmt_float(*t),
            trace_io::fmt_float(*e),
            g + 1
        ));
    }
    write_file(&out_dir.join("errors.csv"), &csv)?;

    let fit = fit_decay_rate(&trace.times, &trace.errors);
    let non_rigid_one_based: Vec<usize> =
        trace.non_rigid_graphs.iter().map(|g| g + 1).collect();
    let summary = serde_json::json!({
        "seed": config.seed,
        "robots": truth.len(),
        "dimension": config.dimension,
        "initial_guess_error": initial_guess_error,
        "initial_error": trace.errors.first(),
        "final_error": trace.errors.last(),
        "decay_rate": fit.map(|f| f.0),
        "decay_r2": fit.map(|f| f.1),
        "non_rigid_graphs": non_rigid_one_based,
        "warning": if trace.non_rigid_graphs.is_empty() {
            serde_json::Value::Null
        } else {
            serde_json::json!("some schedule graphs are not infinitesimally angle rigid at this truth")
        },
    });
    write_file(
        &out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    println!(
        "localization finished: final error {:.3e}, decay rate {:?}",
        trace.errors.last().unwrap(),
        fit.map(|f| f.0)
    );
    Ok(EXIT_OK)
}
