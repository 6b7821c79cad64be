use std::path::{Path, PathBuf};

use bladdersense_core::eval::{simulate_test, Lab, TrainingSet};
use bladdersense_core::ircal::{ComplementModel, IrModelFile, PiecewiseModel};
use bladdersense_core::mlp::MlpModel;
use bladdersense_core::pipeline::{IrMethod, IrModels};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::artifacts::OutputDir;
use crate::config::{self, RunConfig};
use crate::error::{CliError, Diagnostic};

#[derive(Debug, Parser)]
#[command(name = "bladdersense", version, about = "Simulate, train and evaluate magnet and rangefinder displacement sensing for soft bladders")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run config, or the manifest.json of an earlier run.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Config override such as `sim.gain=20` or `evaluation.tests=[1,2]`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Simulate one evaluation test or named trajectory into a labeled dataset.
    Simulate {
        #[arg(long, conflicts_with = "trajectory")]
        test: Option<u32>,
        /// Named trajectory: spiral, grid-x, grid-y or a custom one.
        #[arg(long)]
        trajectory: Option<String>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        tilt: f64,
    },
    /// Fit the piecewise and log rangefinder regressions and train the rangefinder network.
    FitIr,
    /// Train one magnet-localization network.
    Train {
        /// full, spiral or desensitized.
        #[arg(long = "training-set", default_value_t = TrainingSet::Full)]
        set: TrainingSet,
        /// Hidden neurons; defaults to `training.hidden`.
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed_index: usize,
    },
    /// Evaluate a magnet network, or a rangefinder estimator with --method.
    Evaluate {
        /// Trained network file (magnet network, or the rangefinder network for --method nn).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Rangefinder estimator: piecewise, complement or nn.
        #[arg(long)]
        method: Option<IrMethod>,
        /// Filter length; defaults to `evaluation.buffer_len`.
        #[arg(long)]
        buffer: Option<usize>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        tilt: f64,
        /// Restrict evaluation to these test ids (repeatable).
        #[arg(long = "test")]
        tests: Vec<u32>,
    },
    /// Aggregate error against hidden-layer size.
    SweepNeurons,
    /// Aggregate error against moving-average buffer length.
    SweepFilter,
    /// Spiral-only against full training set.
    CompareTraining,
    /// Tilt-desensitized network against the untilted one.
    Desensitize,
    /// Every study, with tables, curves, models and a manifest.
    ReproduceAll,
    /// Check a config without running anything.
    ValidateConfig {
        /// Config to check; defaults to --config, then the built-in defaults.
        path: Option<PathBuf>,
    },
}

fn progress(msg: &str) {
    eprintln!("bladdersense: {msg}");
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::ValidateConfig { path } = &cli.command {
        return validate_config(path.as_deref().or(cli.global.config.as_deref()), &cli.global.sets);
    }
    let (mut config, diags) = config::load(cli.global.config.as_deref(), &cli.global.sets)?;
    if let Some(seed) = cli.global.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.global.out {
        config.output_dir = Some(out.clone());
    }
    if !diags.is_empty() {
        return Err(CliError::ConfigInvalid(diags));
    }
    if let Command::Evaluate { tests, .. } = &cli.command {
        restrict_tests(&mut config, tests);
        let diags: Vec<_> = config.experiment.diagnostics().into_iter().map(|(path, message)| Diagnostic { path, message }).collect();
        if !diags.is_empty() {
            return Err(CliError::ConfigInvalid(diags));
        }
    }

    let mut lab = Lab::new(config.experiment.clone(), config.seed)?;
    let mut out = OutputDir::create(&config.output_dir())?;
    match &cli.command {
        Command::Simulate { test, trajectory, tilt } => simulate(&lab, &mut out, *test, trajectory.as_deref(), *tilt)?,
        Command::FitIr => fit_ir(&mut lab, &mut out)?,
        Command::Train { set, hidden, seed_index } => {
            let hidden = hidden.unwrap_or(lab.experiment().training.hidden);
            progress(&format!("training {set} network with {hidden} hidden neurons"));
            let model = lab.he_model(*set, hidden, *seed_index)?;
            out.write(&format!("{}.json", model.meta.label), model.to_json()?.as_bytes())?;
        }
        Command::Evaluate { model, method, buffer, tilt, .. } => {
            evaluate(&mut lab, &mut out, model.as_deref(), *method, *buffer, *tilt)?
        }
        Command::SweepNeurons => {
            sweep_neurons(&mut lab, &mut out)?;
            write_models(&lab, &mut out)?;
        }
        Command::SweepFilter => {
            sweep_filter(&mut lab, &mut out)?;
            write_models(&lab, &mut out)?;
        }
        Command::CompareTraining => {
            compare_training(&mut lab, &mut out)?;
            write_models(&lab, &mut out)?;
        }
        Command::Desensitize => {
            desensitize(&mut lab, &mut out)?;
            write_models(&lab, &mut out)?;
        }
        Command::ReproduceAll => {
            fit_ir(&mut lab, &mut out)?;
            ir_table(&mut lab, &mut out)?;
            sweep_neurons(&mut lab, &mut out)?;
            sweep_filter(&mut lab, &mut out)?;
            compare_training(&mut lab, &mut out)?;
            desensitize(&mut lab, &mut out)?;
            write_models(&lab, &mut out)?;
        }
        Command::ValidateConfig { .. } => unreachable!("handled above"),
    }
    let manifest = out.finish(&cli.command, &config, lab.config_digest())?;
    progress(&format!("wrote {}", manifest.display()));
    Ok(())
}

fn validate_config(path: Option<&Path>, sets: &[String]) -> Result<(), CliError> {
    let (_, diags) = config::load(path, sets)?;
    if !diags.is_empty() {
        return Err(CliError::ConfigInvalid(diags));
    }
    println!("ok: {}", path.map_or("<defaults>".into(), |p| p.display().to_string()));
    Ok(())
}

/// Keeps only the requested test ids, built-in or extra.
fn restrict_tests(config: &mut RunConfig, wanted: &[u32]) {
    if wanted.is_empty() {
        return;
    }
    let ev = &mut config.experiment.evaluation;
    let extra_ids: Vec<u32> = ev.extra_tests.iter().map(|e| e.id).collect();
    ev.extra_tests.retain(|e| wanted.contains(&e.id));
    ev.tests = wanted.iter().copied().filter(|id| !extra_ids.contains(id)).collect();
}

fn load_model(path: &Path) -> Result<MlpModel, CliError> {
    MlpModel::load(path).map_err(|source| CliError::Model { path: path.to_path_buf(), source })
}

fn simulate(lab: &Lab, out: &mut OutputDir, test: Option<u32>, trajectory: Option<&str>, tilt: f64) -> Result<(), CliError> {
    let (stem, ds) = match (test, trajectory) {
        (Some(id), None) => {
            let traj = lab.experiment().test_trajectory(id)?;
            (format!("test{id}"), simulate_test(&traj, id, tilt, lab.sim(), lab.seed())?)
        }
        (None, Some(name)) => (name.to_string(), lab.training_dataset(name, tilt)?),
        _ => return Err(CliError::Usage("simulate needs exactly one of --test or --trajectory".into())),
    };
    let stem = if tilt == 0.0 { stem } else { format!("{stem}-tilt{tilt}") };
    out.write_with(&format!("{stem}.csv"), |buf| ds.write_csv(buf))?;
    out.write_json(&format!("{stem}.json"), &ds.manifest)
}

fn fit_ir(lab: &mut Lab, out: &mut OutputDir) -> Result<(), CliError> {
    progress("fitting rangefinder models");
    let (piecewise, log) = lab.fit_ir()?;
    out.write("models/ir_piecewise.json", IrModelFile::new(piecewise.model, Some(piecewise.residual_rmse)).to_json()?.as_bytes())?;
    out.write("models/ir_log.json", IrModelFile::new(log.model, Some(log.residual_rmse)).to_json()?.as_bytes())?;
    let nn = lab.ir_network()?;
    out.write(&format!("models/{}.json", nn.meta.label), nn.to_json()?.as_bytes())
}

fn evaluate(
    lab: &mut Lab,
    out: &mut OutputDir,
    model: Option<&Path>,
    method: Option<IrMethod>,
    buffer: Option<usize>,
    tilt: f64,
) -> Result<(), CliError> {
    match method {
        None => {
            let path = model.ok_or_else(|| CliError::Usage("evaluate needs --model or --method".into()))?;
            let model = load_model(path)?;
            let buffer = buffer.unwrap_or(lab.experiment().evaluation.buffer_len);
            let report = lab.evaluate_model(&model, buffer, tilt)?;
            out.write_with("report.csv", |buf| report.write_csv(buf))?;
            out.write_json("report.json", &report)
        }
        Some(method) => {
            if tilt != 0.0 || buffer.is_some() {
                return Err(CliError::Usage("--tilt and --buffer do not apply to rangefinder evaluation".into()));
            }
            let nn = match (method, model) {
                (IrMethod::Nn, Some(path)) => Some(load_model(path)?),
                (IrMethod::Nn, None) => Some((*lab.ir_network()?).clone()),
                _ => None,
            };
            let models = IrModels {
                piecewise: Some(PiecewiseModel::printed(lab.experiment().evaluation.ir_piecewise_orientation)),
                complement: Some(ComplementModel::printed()),
                nn,
            };
            let study = lab.ir_study_with(&models, &[method])?;
            out.write_with("ir_report.csv", |buf| study.write_csv(buf))?;
            out.write_json("ir_report.json", &study)
        }
    }
}

fn ir_table(lab: &mut Lab, out: &mut OutputDir) -> Result<(), CliError> {
    progress("evaluating rangefinder estimators");
    let study = lab.ir_study()?;
    out.write_with("table1_ir.csv", |buf| study.write_csv(buf))?;
    out.write_json("table1_ir.json", &study)
}

fn sweep_neurons(lab: &mut Lab, out: &mut OutputDir) -> Result<(), CliError> {
    let ev = &lab.experiment().evaluation;
    progress(&format!("neuron sweep: {} sizes x {} seeds", ev.neuron_sizes.len(), ev.seeds_per_size));
    let sweep = lab.sweep_neurons()?;
    out.write_with("fig6_neurons.csv", |buf| sweep.write_csv(buf))?;
    out.write_json("fig6_neurons.json", &sweep)
}

fn sweep_filter(lab: &mut Lab, out: &mut OutputDir) -> Result<(), CliError> {
    progress("filter sweep");
    let curve = lab.sweep_filter()?;
    out.write_with("fig7_filter.csv", |buf| curve.write_csv(buf))?;
    out.write_json("fig7_filter.json", &curve)
}

fn compare_training(lab: &mut Lab, out: &mut OutputDir) -> Result<(), CliError> {
    progress("training set comparison");
    let cmp = lab.compare_training()?;
    out.write_with("table2_training.csv", |buf| cmp.write_csv(buf))?;
    out.write_json("table2_training.json", &cmp)
}

fn desensitize(lab: &mut Lab, out: &mut OutputDir) -> Result<(), CliError> {
    progress("tilt desensitization");
    let study = lab.desensitization()?;
    out.write_with("table3_desensitization.csv", |buf| study.write_csv(buf))?;
    out.write_json("table3_desensitization.json", &study)
}

fn write_models(lab: &Lab, out: &mut OutputDir) -> Result<(), CliError> {
    for model in lab.trained_models() {
        out.write(&format!("models/{}.json", model.meta.label), model.to_json()?.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use bladdersense_core::eval::ExtraTest;

    #[test]
    fn commands_round_trip_through_json() {
        let cmds = [
            Command::Simulate { test: Some(1), trajectory: None, tilt: 5.0 },
            Command::Evaluate {
                model: Some("m.json".into()),
                method: Some(IrMethod::Nn),
                buffer: None,
                tilt: 0.0,
                tests: vec![1, 8],
            },
            Command::Train { set: TrainingSet::Spiral, hidden: Some(10), seed_index: 2 },
            Command::ReproduceAll,
        ];
        for c in cmds {
            let text = serde_json::to_string(&c).unwrap();
            assert_eq!(serde_json::from_str::<Command>(&text).unwrap(), c);
        }
        assert_eq!(serde_json::to_string(&Command::FitIr).unwrap(), r#"{"name":"fit-ir"}"#);
    }

    #[test]
    fn test_restriction_keeps_builtin_and_extra_ids() {
        let mut cfg = RunConfig::default();
        cfg.experiment.evaluation.extra_tests = vec![ExtraTest { id: 8, trajectory: "spiral".into() }, ExtraTest { id: 9, trajectory: "grid-x".into() }];
        restrict_tests(&mut cfg, &[2, 8]);
        assert_eq!(cfg.experiment.evaluation.tests, vec![2]);
        assert_eq!(cfg.experiment.evaluation.extra_tests.iter().map(|e| e.id).collect::<Vec<_>>(), vec![8]);
        let before = cfg.clone();
        restrict_tests(&mut cfg, &[]);
        assert_eq!(cfg, before);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn cli_parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["bladdersense", "simulate", "--test", "1", "--seed", "7", "--set", "sim.gain=20", "--out", "o"]).unwrap();
        assert_eq!(cli.global.seed, Some(7));
        assert_eq!(cli.global.sets, vec!["sim.gain=20"]);
        assert_eq!(cli.command, Command::Simulate { test: Some(1), trajectory: None, tilt: 0.0 });
        let cli = Cli::try_parse_from(["bladdersense", "evaluate", "--method", "complement"]).unwrap();
        assert!(matches!(cli.command, Command::Evaluate { method: Some(IrMethod::Complement), .. }));
        assert!(Cli::try_parse_from(["bladdersense", "evaluate", "--method", "laser"]).is_err());
        assert!(Cli::try_parse_from(["bladdersense", "simulate", "--test", "1", "--trajectory", "spiral"]).is_err());
        assert!(Cli::try_parse_from(["bladdersense", "frobnicate"]).is_err());
        let cli = Cli::try_parse_from(["bladdersense", "train", "--training-set", "spiral", "--set", "seed=1"]).unwrap();
        assert_eq!(cli.command, Command::Train { set: TrainingSet::Spiral, hidden: None, seed_index: 0 });
    }
}
