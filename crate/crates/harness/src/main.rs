use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hml_harness::emit::{by_arm, emit_outputs, mean_ci, read_outcome, thresholds, Format};
use hml_harness::{run_experiment, ExperimentSpec, HarnessError, Outcome, Preset, Scenario};

/// Simulated motor-learning curriculum experiments.
///
/// Exit codes: 0 all runs complete and self-checks pass; 1 a run failed or
/// a self-check failed; 2 invalid spec or arguments; 3 output not writable.
#[derive(Parser)]
#[command(name = "curriculum", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play single-curriculum runs (default scenario fig2a).
    Simulate(Common),
    /// Compare curricula (default scenario fig2b; also fig6a, fig6bc).
    Compare(Common),
    /// EKF/UKF/PF consistency benchmark.
    Filters(Common),
    /// UCM variance analysis of simulated runs.
    Ucm(Common),
    /// NSGA-II self-fit to a noiseless reference.
    Fit(Common),
    /// Re-emit a previous outcome.json in other formats.
    Emit {
        /// outcome.json written by another subcommand.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
        format: Vec<Format>,
        #[arg(long, default_value_t = 0.2)]
        threshold: f64,
    },
    /// Print a built-in spec as JSON.
    Spec {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long, default_value = "desk")]
        preset: Preset,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment spec; a built-in scenario is used when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Built-in scenario to run when no spec file is given.
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Rescale run counts and sizes.
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
    format: Vec<Format>,
}

fn load(c: &Common, default: Scenario, allowed: &[Scenario]) -> Result<ExperimentSpec, HarnessError> {
    let mut spec = match &c.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::InvalidSpec(format!("{}: {e}", path.display())))?;
            ExperimentSpec::from_json(&text)?
        }
        None => ExperimentSpec::builtin(c.scenario.unwrap_or(default), c.preset.unwrap_or(Preset::Desk)),
    };
    if let Some(sc) = c.scenario {
        if c.spec.is_some() && sc != spec.scenario {
            return Err(HarnessError::InvalidSpec(format!("--scenario {sc} conflicts with spec scenario {}", spec.scenario)));
        }
    }
    if !allowed.contains(&spec.scenario) {
        return Err(HarnessError::InvalidSpec(format!("scenario {} is not valid for this command", spec.scenario)));
    }
    if let Some(p) = c.preset {
        spec.apply_preset(p);
    }
    if let Some(seed) = c.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    Ok(spec)
}

fn report(outcome: &Outcome, threshold: f64) {
    match outcome {
        Outcome::Curriculum { manifests } | Outcome::Ucm { manifests, .. } => {
            for (arm, runs) in by_arm(manifests) {
                let t: Vec<f64> = thresholds(&runs, threshold).iter().map(|(t, _)| *t as f64).collect();
                let fin: Vec<f64> = runs.iter().filter_map(|m| m.rows.last()).map(|r| r.fme_true).collect();
                let (tm, tc) = mean_ci(&t);
                let (fm, fc) = mean_ci(&fin);
                println!("{arm:<24} trials-to-{threshold}: {tm:7.1} +/- {tc:5.1}   final FME: {fm:.3} +/- {fc:.3}");
            }
            if let Outcome::Ucm { phases, .. } = outcome {
                for p in phases {
                    println!("{:<24} phase {}: UCM fraction {:.3} [{:.3}, {:.3}]", p.group, p.phase, p.mean, p.ci_low, p.ci_high);
                }
            }
        }
        Outcome::Filters { bench } => {
            for (name, (m, s)) in [("EKF", bench.ekf_stats()), ("UKF", bench.ukf_stats()), ("PF", bench.pf_stats())] {
                println!("{name:<4} final |W_est - W_hat|_F: mean {m:.4}  std {s:.4}");
            }
        }
        Outcome::Fit { initial_median_re, best_re, result } => {
            for (i, (m, b)) in initial_median_re.iter().zip(best_re).enumerate() {
                println!("restart {i}: initial median f_RE {m:.4e}, best {b:.4e} ({:.1}%)", 100.0 * b / m);
            }
            println!("selected{}: {}", if result.fallback { " (fallback)" } else { "" }, result.selected.params);
        }
    }
}

fn execute(c: &Common, default: Scenario, allowed: &[Scenario]) -> Result<(), HarnessError> {
    let spec = load(c, default, allowed)?;
    std::fs::create_dir_all(&c.out).map_err(|e| HarnessError::Io(format!("{}: {e}", c.out.display())))?;
    write(&c.out.join("spec.json"), &spec.to_json())?;
    let outcome = run_experiment(&spec)?;
    let mut formats = c.format.clone();
    if !formats.contains(&Format::Json) {
        formats.push(Format::Json);
    }
    emit_outputs(&outcome, spec.fme_threshold, &formats, &c.out)?;
    report(&outcome, spec.fme_threshold);
    if !outcome.complete() {
        let bad: Vec<String> = outcome
            .manifests()
            .iter()
            .filter_map(|m| m.check().err().or_else(|| m.error.clone().map(|e| format!("{} run {}: {e}", m.arm, m.run))))
            .collect();
        return Err(HarnessError::SelfCheck(bad.join("; ")));
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    use Scenario::*;
    let result = match &cli.command {
        Command::Simulate(c) => execute(c, Fig2a, &[Fig2a, Fig2b, Fig6a, Fig6bc]),
        Command::Compare(c) => execute(c, Fig2b, &[Fig2b, Fig6a, Fig6bc, Fig2a]),
        Command::Filters(c) => execute(c, Filters, &[Filters]),
        Command::Ucm(c) => execute(c, Ucm, &[Ucm]),
        Command::Fit(c) => execute(c, Fit, &[Fit]),
        Command::Emit { input, out, format, threshold } => read_outcome(input).and_then(|o| {
            emit_outputs(&o, *threshold, format, out)?;
            report(&o, *threshold);
            Ok(())
        }),
        Command::Spec { scenario, preset } => {
            println!("{}", ExperimentSpec::builtin(*scenario, *preset).to_json());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
