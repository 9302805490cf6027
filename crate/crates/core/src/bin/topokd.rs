//! Command-line harness: dataset generation, persistence-image extraction,
//! teacher/student training, distillation, evaluation, and scans.
//!
//! Every subcommand reads the same experiment file (`--config`); without
//! one, a small synthetic default is used. Exit code is nonzero on failure
//! with a stage-tagged message on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use topokd::data::write_csv_dataset;
use topokd::distill::Strategy;
use topokd::experiment::{
    build_model, kappa_grid, model_digest, parametric_scan, run_experiment, scan_to_csv,
    DatasetRef, ExperimentConfig, Prepared,
};
use topokd::nn::{count_flops, load_checkpoint, save_checkpoint, Network};

#[derive(Parser)]
#[command(
    name = "topokd",
    about = "Persistence-image knowledge distillation for sensor time series",
    version
)]
struct Cli {
    /// Experiment file (key = value text). Defaults to the built-in
    /// synthetic desk setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override for training commands; defaults to the first seed in
    /// the experiment file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Modality {
    Ts,
    Pi,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Student,
    Teacher1,
    Teacher2,
}

#[derive(Subcommand)]
enum Command {
    /// Print the active experiment configuration.
    ShowConfig,
    /// Generate the configured synthetic dataset as CSV plus manifest.
    GenSynth,
    /// Extract persistence images for the configured dataset into the
    /// cache file under the output directory.
    ExtractPi,
    /// Train one teacher (early-stopped) and save its checkpoint.
    TrainTeacher {
        #[arg(long, value_enum)]
        modality: Modality,
    },
    /// Train the student from scratch (plain cross-entropy).
    TrainScratch,
    /// Distill the student per the configured strategy.
    Distill {
        /// Time-series teacher checkpoint (strategies kd-ts, base,
        /// annealing).
        #[arg(long)]
        t1: Option<PathBuf>,
        /// Persistence-image teacher checkpoint (strategies kd-pi, base,
        /// annealing).
        #[arg(long)]
        t2: Option<PathBuf>,
        /// Scratch checkpoint to initialize from (annealing).
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Evaluate a checkpoint's test accuracy.
    Eval {
        #[arg(long)]
        net: PathBuf,
        #[arg(long, value_enum, default_value = "student")]
        role: Role,
    },
    /// Cluster a checkpoint's penultimate features and report the
    /// V-measure against test labels.
    Vscore {
        #[arg(long)]
        net: PathBuf,
        #[arg(long, value_enum, default_value = "student")]
        role: Role,
    },
    /// Accuracy along the parameter line between two student checkpoints.
    ParamScan {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Grid points over kappa in [-2, 2].
        #[arg(long, default_value_t = 41)]
        points: usize,
    },
    /// Run the full experiment (all seeds) and write the report.
    Run,
    /// Print analytic forward-pass FLOPs for the configured models.
    Flops,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::desk_default(),
    };
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    let seed = cli.seed.or(config.seeds.first().copied()).unwrap_or(0);

    match cli.command {
        Command::ShowConfig => {
            print!("{}", config.to_text());
        }
        Command::GenSynth => {
            let spec = match &config.dataset {
                DatasetRef::Synthetic(spec) => spec.clone(),
                DatasetRef::Csv(_) => {
                    return Err("config does not describe a synthetic dataset".into())
                }
            };
            let set = topokd::data::generate_synthetic(&spec, spec.seed)?;
            std::fs::create_dir_all(&config.out_dir)?;
            let manifest = write_csv_dataset(&set, &config.out_dir, "synth")?;
            println!(
                "wrote {} window(s) ({} class(es)) to {}",
                set.len(),
                set.class_count(),
                manifest.display()
            );
        }
        Command::ExtractPi => {
            let prepared = Prepared::new(&config)?;
            let cache = config.out_dir.join("pi.tdpi");
            println!(
                "extracted {} train + {} test image stack(s) at {}x{} -> {}",
                prepared.train_ts.shape()[0],
                prepared.test_ts.shape()[0],
                config.pi.resolution,
                config.pi.resolution,
                cache.display()
            );
        }
        Command::TrainTeacher { modality } => {
            let prepared = Prepared::new(&config)?;
            std::fs::create_dir_all(&config.out_dir)?;
            let (net, ckpt, record, name) = match modality {
                Modality::Ts => {
                    let (n, c, r) = prepared.train_teacher_ts(seed)?;
                    (n, c, r, "teacher1")
                }
                Modality::Pi => {
                    let (n, c, r) = prepared.train_teacher_pi(seed)?;
                    (n, c, r, "teacher2")
                }
            };
            let path = config.out_dir.join(format!("{name}.tdck"));
            save_checkpoint(&path, &ckpt)?;
            record.write(&config.out_dir.join(format!("{name}.log")))?;
            let inputs = match modality {
                Modality::Ts => (&prepared.test_ts, &prepared.test_labels),
                Modality::Pi => (&prepared.test_pi, &prepared.test_labels),
            };
            let acc = topokd::metrics::evaluate(&net, inputs.0, inputs.1)?;
            println!(
                "{name}: best epoch {} test_acc {acc:.2}% -> {}",
                ckpt.epoch,
                path.display()
            );
        }
        Command::TrainScratch => {
            let prepared = Prepared::new(&config)?;
            std::fs::create_dir_all(&config.out_dir)?;
            let (net, ckpt, record) = prepared.train_scratch(seed)?;
            let path = config.out_dir.join("scratch.tdck");
            save_checkpoint(&path, &ckpt)?;
            record.write(&config.out_dir.join("scratch.log"))?;
            let acc = topokd::metrics::evaluate(&net, &prepared.test_ts, &prepared.test_labels)?;
            println!("scratch: test_acc {acc:.2}% -> {}", path.display());
        }
        Command::Distill { t1, t2, init } => {
            let prepared = Prepared::new(&config)?;
            std::fs::create_dir_all(&config.out_dir)?;
            let strategy = config.distill.strategy;
            let teacher_ts = match (&t1, strategy.needs_ts_teacher()) {
                (Some(path), _) => Some(load_net(&config, &prepared, Role::Teacher1, path)?),
                (None, true) => return Err("strategy needs --t1 <checkpoint>".into()),
                (None, false) => None,
            };
            let teacher_pi = match (&t2, strategy.needs_pi_teacher()) {
                (Some(path), _) => Some(load_net(&config, &prepared, Role::Teacher2, path)?),
                (None, true) => return Err("strategy needs --t2 <checkpoint>".into()),
                (None, false) => None,
            };
            let scratch = match (&init, strategy) {
                (Some(path), _) => {
                    Some(load_net(&config, &prepared, Role::Student, path)?.params().clone())
                }
                (None, Strategy::Annealing) => {
                    return Err("annealing needs --init <scratch checkpoint>".into())
                }
                (None, _) => None,
            };
            let (student, ckpt, record) = prepared.distill(
                seed,
                teacher_ts.as_ref(),
                teacher_pi.as_ref(),
                scratch.as_ref(),
            )?;
            let path = config.out_dir.join("student.tdck");
            save_checkpoint(&path, &ckpt)?;
            record.write(&config.out_dir.join("student.log"))?;
            let acc =
                topokd::metrics::evaluate(&student, &prepared.test_ts, &prepared.test_labels)?;
            println!("distilled ({strategy}): test_acc {acc:.2}% -> {}", path.display());
        }
        Command::Eval { net, role } => {
            let prepared = Prepared::new(&config)?;
            let model = load_net(&config, &prepared, role, &net)?;
            let (inputs, labels) = role_inputs(&prepared, role);
            let acc = topokd::metrics::evaluate(&model, inputs, labels)?;
            println!("accuracy {acc:.4}%");
        }
        Command::Vscore { net, role } => {
            let prepared = Prepared::new(&config)?;
            let model = load_net(&config, &prepared, role, &net)?;
            let (inputs, labels) = role_inputs(&prepared, role);
            let clusters =
                topokd::metrics::cluster_penultimate(&model, inputs, prepared.classes, seed)?;
            let v = topokd::metrics::v_measure(labels, &clusters)?;
            println!("v_measure {v:.6}");
        }
        Command::ParamScan { a, b, points } => {
            let prepared = Prepared::new(&config)?;
            let template =
                build_model(&config.student, &prepared.ts_shape(), prepared.classes, 0)?;
            let pa = load_net(&config, &prepared, Role::Student, &a)?.params().clone();
            let pb = load_net(&config, &prepared, Role::Student, &b)?.params().clone();
            let rows = parametric_scan(
                &template,
                &pa,
                &pb,
                (&prepared.train_ts, &prepared.train_labels),
                (&prepared.test_ts, &prepared.test_labels),
                &kappa_grid(-2.0, 2.0, points),
            )?;
            std::fs::create_dir_all(&config.out_dir)?;
            let path = config.out_dir.join("param-scan.csv");
            std::fs::write(&path, scan_to_csv(&rows))?;
            println!("wrote {} row(s) to {}", rows.len(), path.display());
        }
        Command::Run => {
            let report = run_experiment(&config)?;
            print!("{}", report.to_text());
            println!("report -> {}", config.out_dir.join("report.txt").display());
        }
        Command::Flops => {
            let prepared = Prepared::new(&config)?;
            let ts_shape = prepared.ts_shape();
            let pi_shape = prepared.pi_shape();
            for (name, arch, shape) in [
                ("teacher1", &config.teacher1, &ts_shape),
                ("teacher2", &config.teacher2, &pi_shape),
                ("student", &config.student, &ts_shape),
            ] {
                let flops = count_flops(&arch.build(shape[0], prepared.classes), shape)?;
                println!("{name:<9} {:<12} input {shape:?}: {flops} FLOPs", arch.to_string());
            }
        }
    }
    Ok(())
}

fn role_inputs(prepared: &Prepared, role: Role) -> (&topokd::nn::Tensor, &[usize]) {
    match role {
        Role::Teacher2 => (&prepared.test_pi, &prepared.test_labels),
        _ => (&prepared.test_ts, &prepared.test_labels),
    }
}

fn load_net(
    config: &ExperimentConfig,
    prepared: &Prepared,
    role: Role,
    path: &Path,
) -> Result<Network, Box<dyn std::error::Error>> {
    let (arch, shape) = match role {
        Role::Student => (&config.student, prepared.ts_shape()),
        Role::Teacher1 => (&config.teacher1, prepared.ts_shape()),
        Role::Teacher2 => (&config.teacher2, prepared.pi_shape()),
    };
    let mut net = build_model(arch, &shape, prepared.classes, 0)?;
    let digest = model_digest(arch, &shape, prepared.classes);
    let ckpt = load_checkpoint(path, net.params(), digest)?;
    net.set_params(ckpt.params)?;
    Ok(net)
}
