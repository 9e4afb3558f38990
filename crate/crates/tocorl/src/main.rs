//! Command-line harness: `run`, `verify`, `compare`, `eval`.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tocorl::config::RunSpec;
use tocorl::conditioning::dump_cache;
use tocorl::env::{dump_tasks, evaluate, make_env, tc_probe, SynthEnv};
use tocorl::plot::{write_svg, Panel, Series};
use tocorl::policy::AutoregressivePolicy;
use tocorl::theory::{
    gradient_equivalence_sweep, surrogate_bound_sweep, tilt_coefficient, tilt_validity_sweep,
    FlatDistribution, SweepReport,
};
use tocorl::trainer::{MetricsRecord, Trainer};
use tocorl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tocorl",
    about = "Token-conditioned reinforcement learning laboratory",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Inline overrides, e.g. `--set train.lambda=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write metrics, checkpoints, a report, and plots.
    Run(ConfigArgs),
    /// Sweep the three analytic guarantees on random flat instances.
    Verify {
        /// Seed for the instance generators.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Instance count per sweep. Defaults: 10000 for the tilt and
        /// gradient sweeps, 100000 for the bound sweep.
        #[arg(long)]
        sweep: Option<usize>,
        /// Also probe a constant-reward instance and require the designated
        /// hypothesis-violation error.
        #[arg(long)]
        adversarial: bool,
    },
    /// Train several configs that share an environment and seed, and merge
    /// their metrics side by side.
    Compare {
        /// Config files, one per run.
        #[arg(long, required = true, num_args = 1..)]
        config: Vec<PathBuf>,
    },
    /// Evaluate a saved checkpoint under normal generation.
    Eval {
        /// Policy checkpoint path.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Also evaluate under token-conditional generation.
        #[arg(long = "tc-probe")]
        tc_probe: bool,
    },
}

fn load_spec(path: &Path, overrides: &[String]) -> Result<RunSpec> {
    let mut spec = RunSpec::load(path)?;
    if let Ok(seed) = std::env::var("TOCORL_SEED") {
        let seed: u64 = seed.parse().map_err(|_| {
            Error::InvalidConfig(format!("TOCORL_SEED = {seed:?} is not an integer"))
        })?;
        spec.train.seed = seed;
        spec.env.seed = seed;
    }
    spec.apply_overrides(overrides)?;
    spec.validate()?;
    Ok(spec)
}

fn metrics_panels(runs: &[(String, Vec<MetricsRecord>)]) -> Vec<Panel> {
    let acc_series = |name: &str, records: &[MetricsRecord]| Series {
        name: name.to_string(),
        points: records
            .iter()
            .map(|r| (r.step as f64, r.eval_accuracy))
            .collect(),
    };
    let mut accuracy = Panel {
        title: "evaluation accuracy".into(),
        x_label: "step".into(),
        y_label: "accuracy".into(),
        series: vec![],
    };
    let mut lengths = Panel {
        title: "evaluation response length".into(),
        x_label: "step".into(),
        y_label: "tokens".into(),
        series: vec![],
    };
    for (name, records) in runs {
        accuracy.series.push(acc_series(name, records));
        lengths.series.push(Series {
            name: format!("{name} mean"),
            points: records
                .iter()
                .map(|r| (r.step as f64, r.eval_mean_len))
                .collect(),
        });
        lengths.series.push(Series {
            name: format!("{name} min"),
            points: records
                .iter()
                .map(|r| (r.step as f64, r.eval_min_len as f64))
                .collect(),
        });
    }
    vec![accuracy, lengths]
}

/// Train one spec inside `out_dir`, writing all run artifacts.
fn run_training(spec: &RunSpec, env: &SynthEnv, out_dir: &Path) -> Result<Vec<MetricsRecord>> {
    std::fs::create_dir_all(out_dir)?;
    // first write proves the directory is usable before any training
    std::fs::write(out_dir.join("resolved_config"), spec.to_config_text())?;
    dump_tasks(&env.tasks, &env.vocab, &out_dir.join("tasks.tsv"))?;

    let mut trainer = Trainer::new(spec.train.clone(), env)?;
    let mut csv = File::create(out_dir.join("metrics.csv"))?;
    writeln!(csv, "{}", MetricsRecord::CSV_HEADER)?;

    let checkpoint_interval = spec.checkpoint_interval;
    let steps = spec.train.steps;
    let out = out_dir.to_path_buf();
    let records = trainer.train(spec.eval_interval, |policy, record| {
        writeln!(csv, "{}", record.to_csv_row())?;
        if record.step % checkpoint_interval == 0 || record.step == steps {
            policy.save(&out.join(format!("checkpoint_{}", record.step)))?;
        }
        Ok(())
    })?;
    csv.flush()?;

    if !trainer.cache().is_empty() {
        dump_cache(trainer.cache(), &out_dir.join("pregenerated.tsv"))?;
    }

    // final full evaluation for the report
    let final_report = trainer.evaluate_now();
    let report_text = format!(
        "algorithm: {}\nsteps run: {}\n\nfinal evaluation (normal generation, {} reps):\n{}",
        spec.train.algorithm.as_str(),
        records.len(),
        env.config.eval_reps,
        final_report.render()
    );
    std::fs::write(out_dir.join("report.txt"), report_text)?;

    let runs = vec![(spec.train.algorithm.as_str().to_string(), records.clone())];
    write_svg(&out_dir.join("curves.svg"), &metrics_panels(&runs))?;
    Ok(records)
}

fn cmd_run(args: &ConfigArgs) -> Result<()> {
    let spec = load_spec(&args.config, &args.set)?;
    let env = make_env(&spec.env)?;
    let records = run_training(&spec, &env, &spec.output_dir)?;
    let last = records.last().expect("at least one step");
    println!(
        "run complete: {} steps, final eval accuracy {:.4}, min length {}",
        records.len(),
        last.eval_accuracy,
        last.eval_min_len
    );
    println!("artifacts in {}", spec.output_dir.display());
    Ok(())
}

fn print_sweep(report: &SweepReport) {
    println!(
        "{:<22} {:>9} {:>9} {:>14.3e}  {}",
        report.name,
        report.instances,
        report.failures,
        report.max_violation,
        if report.passed() { "pass" } else { "FAIL" }
    );
}

fn cmd_verify(seed: u64, sweep: Option<usize>, adversarial: bool) -> Result<bool> {
    if sweep == Some(0) {
        return Err(Error::InvalidConfig("--sweep must be at least 1".into()));
    }
    let (n_tilt, n_grad, n_bound) = match sweep {
        Some(n) => (n, n, n),
        None => (10_000, 10_000, 100_000),
    };
    println!(
        "{:<22} {:>9} {:>9} {:>14}  verdict",
        "check", "instances", "failures", "max_violation"
    );
    let reports = [
        tilt_validity_sweep(n_tilt, seed),
        gradient_equivalence_sweep(n_grad, seed),
        surrogate_bound_sweep(n_bound, seed),
    ];
    let mut all_pass = true;
    for report in &reports {
        print_sweep(report);
        if !report.passed() {
            all_pass = false;
            if let Some(worst) = &report.worst {
                eprintln!("worst instance for {}:\n{}", report.name, worst);
            }
        }
    }
    if adversarial {
        // constant rewards violate the nonzero-advantage hypothesis; the
        // tilt must refuse rather than emit garbage
        let uniform = FlatDistribution::uniform(4);
        match tilt_coefficient(&uniform, &uniform, &[0.3, 0.3, 0.3, 0.3]) {
            Err(Error::AssumptionViolated) => {
                println!("hypothesis-violation probe: rejected as expected");
            }
            other => {
                println!("hypothesis-violation probe: FAIL (got {other:?})");
                all_pass = false;
            }
        }
    }
    Ok(all_pass)
}

fn cmd_compare(configs: &[PathBuf]) -> Result<()> {
    let specs: Vec<RunSpec> = configs
        .iter()
        .map(|p| load_spec(p, &[]))
        .collect::<Result<_>>()?;
    let first = &specs[0];
    for spec in &specs[1..] {
        if spec.env != first.env {
            return Err(Error::InvalidConfig(
                "compared runs must share one environment config".into(),
            ));
        }
        if spec.train.seed != first.train.seed {
            return Err(Error::InvalidConfig(
                "compared runs must share one training seed".into(),
            ));
        }
        if spec.train.steps != first.train.steps {
            return Err(Error::InvalidConfig(
                "compared runs must share one step count".into(),
            ));
        }
    }
    let env = make_env(&first.env)?;
    let out_dir = first.output_dir.clone();
    std::fs::create_dir_all(&out_dir)?;

    let mut runs: Vec<(String, Vec<MetricsRecord>)> = Vec::new();
    for spec in &specs {
        let mut name = spec.train.algorithm.as_str().to_string();
        let copies = runs.iter().filter(|(n, _)| n.starts_with(&name)).count();
        if copies > 0 {
            name = format!("{name}_{}", copies + 1);
        }
        let sub_dir = out_dir.join(format!("compare_{name}"));
        let records = run_training(spec, &env, &sub_dir)?;
        println!(
            "{name}: final eval accuracy {:.4}",
            records.last().map(|r| r.eval_accuracy).unwrap_or(0.0)
        );
        runs.push((name, records));
    }

    // merged CSV: step column plus every metric column suffixed by run name
    let mut csv = File::create(out_dir.join("compare.csv"))?;
    let metric_cols = [
        "train_mean_reward",
        "eval_accuracy",
        "eval_mean_len",
        "eval_min_len",
        "eval_median_len",
        "tc_fraction",
    ];
    let mut header = vec!["step".to_string()];
    for (name, _) in &runs {
        for col in metric_cols {
            header.push(format!("{col}_{name}"));
        }
    }
    writeln!(csv, "{}", header.join(","))?;
    let steps = runs.iter().map(|(_, r)| r.len()).min().unwrap_or(0);
    for i in 0..steps {
        let mut row = vec![runs[0].1[i].step.to_string()];
        for (_, records) in &runs {
            let r = &records[i];
            row.push(r.train_mean_reward.to_string());
            row.push(r.eval_accuracy.to_string());
            row.push(r.eval_mean_len.to_string());
            row.push(r.eval_min_len.to_string());
            row.push(r.eval_median_len.to_string());
            row.push(r.tc_fraction.to_string());
        }
        writeln!(csv, "{}", row.join(","))?;
    }
    csv.flush()?;

    write_svg(&out_dir.join("compare.svg"), &metrics_panels(&runs))?;
    println!("merged artifacts in {}", out_dir.display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, config: &Path, with_probe: bool) -> Result<()> {
    let spec = load_spec(config, &[])?;
    let env = make_env(&spec.env)?;
    let policy = AutoregressivePolicy::load(checkpoint)?;
    if policy.num_prompts() != env.tasks.len() || policy.vocab() != &env.vocab {
        return Err(Error::InvalidConfig(format!(
            "checkpoint shape ({} prompts, {} tokens) does not match the \
             configured environment ({} prompts, {} tokens)",
            policy.num_prompts(),
            policy.vocab().len(),
            env.tasks.len(),
            env.vocab.len()
        )));
    }
    let mut rng = {
        use rand::SeedableRng;
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(spec.train.seed);
        r.set_stream(2);
        r
    };
    let report = evaluate(&policy, &env.tasks, env.config.eval_reps, &mut rng);
    println!("normal generation:\n{}", report.render());
    if with_probe {
        let probed = tc_probe(
            &policy,
            &env.tasks,
            &env.provider,
            spec.train.prefix_len,
            env.config.eval_reps,
            &mut rng,
        )?;
        println!("token-conditional generation (k = {}):\n{}", spec.train.prefix_len, probed.render());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args).map(|()| true),
        Command::Verify {
            seed,
            sweep,
            adversarial,
        } => cmd_verify(*seed, *sweep, *adversarial),
        Command::Compare { config } => cmd_compare(config).map(|()| true),
        Command::Eval {
            checkpoint,
            config,
            tc_probe,
        } => cmd_eval(checkpoint, config, *tc_probe).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
