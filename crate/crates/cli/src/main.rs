//! Command-line front end: train, evaluate, sweep, gradient-check, and dump
//! artifacts from time-to-first-spike networks.

mod settings;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use settings::{load_config_file, Settings};
use std::io::Write;
use std::path::{Path, PathBuf};
use ttfs_snn::circuit::write_conductance_table;
use ttfs_snn::dataset::load_dataset;
use ttfs_snn::forward::forward;
use ttfs_snn::io::{load_model, load_realization};
use ttfs_snn::loss::{cost, output_error};
use ttfs_snn::network::{init_network, Network, SpikeVector};
use ttfs_snn::oracle::{fd_default_step, fd_gradient};
use ttfs_snn::trainer::{
    dump_raster, evaluate, evaluate_fixed, load_resume_state, sweep, sweep_eval_only, train,
    write_sweep_table, EncodedDataset, RunConfig, SweepAxis, SweepRow,
};
use ttfs_snn::variation::VariationMode;
use ttfs_snn::{backprop, Result, SnnError};

#[derive(Parser)]
#[command(
    name = "ttfs",
    version,
    about = "Train and probe spiking networks that code information in first-spike times"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a network; writes metrics, best/final models, and a resume point.
    Train(TrainCmd),
    /// Evaluate a stored model on the test set.
    Eval(EvalCmd),
    /// Compare analytic gradients with finite differences on a random net.
    Gradcheck(GradcheckCmd),
    /// Train or evaluate across one swept parameter axis.
    Sweep(SweepCmd),
    /// Write one sample's spike raster, optionally with membrane traces.
    DumpRaster(RasterCmd),
    /// Write the crossbar conductance pairs of a stored model.
    ExportConductance(ExportCmd),
}

#[derive(Args)]
struct TrainCmd {
    /// Key-value config file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    knobs: Settings,
    /// Output directory for metrics.csv and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from the resume checkpoint inside --out.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    knobs: Settings,
    /// Stored model to evaluate.
    #[arg(long)]
    model_file: PathBuf,
    /// Evaluate on one stored device realization instead of drawing devices.
    #[arg(long)]
    realization: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Architecture defaults to 3-4-2 here; epsilon defaults to 0 so the
    /// analytic gradient is the unbiased one finite differences measure.
    #[command(flatten)]
    knobs: Settings,
    /// Teacher label for the probe cost.
    #[arg(long, default_value_t = 0)]
    teacher: usize,
    /// Relative tolerance for perturbation-stable probes.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AxisArg {
    /// Symmetric circuit pulse rails.
    Vpulse,
    /// Threshold spread (train and test).
    SigmaVth,
    /// Delay spread (train and test).
    SigmaTau,
}

#[derive(Args)]
struct SweepCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    knobs: Settings,
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    values: Vec<f64>,
    /// Fresh runs (or test draws in --eval-only) averaged per value.
    #[arg(long, default_value_t = 3)]
    trials: usize,
    /// Evaluate a stored model across the axis instead of retraining.
    #[arg(long, requires = "model_file")]
    eval_only: bool,
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Directory receiving sweep.txt and sweep.kv next to stdout output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RasterCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    knobs: Settings,
    #[arg(long)]
    model_file: PathBuf,
    /// Test-set sample index to trace.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Append reference-integrator membrane traces of the output layer.
    #[arg(long)]
    membranes: bool,
    /// Integrator step for --membranes (ms).
    #[arg(long, default_value_t = 1e-2)]
    dt: f64,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportCmd {
    #[arg(long)]
    model_file: PathBuf,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn error_category(err: &SnnError) -> (i32, &'static str) {
    use SnnError::*;
    match err {
        BadArchitecture(_) | ArchParse(_) | InputSizeMismatch { .. }
        | TeacherOutOfRange { .. } | NonFiniteParameter { .. } | InvalidParameter { .. }
        | Config { .. } | ConfigUnknownKey(_) => (2, "usage"),
        IdxBadMagic { .. } | IdxFormat { .. } | IdxCountMismatch { .. } | IdxBadLabel { .. } => {
            (3, "data")
        }
        ModelFormat { .. } | ModelTruncated { .. } | ModelTrailingBytes { .. }
        | ResumeState { .. } => (4, "model-file"),
        Diverged { .. } => (5, "diverged"),
        Io(_) => (6, "io"),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        // A reader closing the pipe early (ttfs ... | head) is not our error.
        if let SnnError::Io(e) = &err {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                return;
            }
        }
        let (code, category) = error_category(&err);
        eprintln!("error [{category}]: {err}");
        std::process::exit(code);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train(c) => run_train(c),
        Cmd::Eval(c) => run_eval(c),
        Cmd::Gradcheck(c) => {
            if !run_gradcheck(c)? {
                std::process::exit(1);
            }
            Ok(())
        }
        Cmd::Sweep(c) => run_sweep(c),
        Cmd::DumpRaster(c) => run_raster(c),
        Cmd::ExportConductance(c) => run_export(c),
    }
}

fn resolve(config: Option<&Path>, knobs: Settings) -> Result<Settings> {
    Ok(match config {
        Some(path) => knobs.on_top_of(load_config_file(path)?),
        None => knobs,
    })
}

fn truncate(data: &mut EncodedDataset, limit: Option<usize>) {
    if let Some(n) = limit {
        data.spikes.truncate(n);
        data.labels.truncate(n);
    }
}

fn encode_set(
    raw: &ttfs_snn::dataset::Dataset,
    config: &RunConfig,
    settings: &Settings,
    limit: Option<usize>,
) -> Result<EncodedDataset> {
    let shrink = settings.shrink_inputs();
    if shrink && (raw.rows < 4 || raw.cols < 4) {
        return Err(SnnError::InvalidParameter {
            what: "shrink",
            problem: format!(
                "needs at least 4x4 images, data is {}x{}",
                raw.rows, raw.cols
            ),
        });
    }
    let mut data = EncodedDataset::from_dataset(raw, config.hyper.tau_in, shrink);
    truncate(&mut data, limit);
    Ok(data)
}

fn load_train_set(settings: &Settings, config: &RunConfig) -> Result<EncodedDataset> {
    let (images, labels) = settings.train_paths();
    let raw = load_dataset(&images, &labels)?;
    encode_set(&raw, config, settings, settings.limit_train)
}

fn load_test_set(settings: &Settings, config: &RunConfig) -> Result<EncodedDataset> {
    let (images, labels) = settings.test_paths();
    let raw = load_dataset(&images, &labels)?;
    encode_set(&raw, config, settings, settings.limit_test)
}

fn run_train(cmd: TrainCmd) -> Result<()> {
    let settings = resolve(cmd.config.as_deref(), cmd.knobs)?;
    let config = settings.run_config()?;
    let train_data = load_train_set(&settings, &config)?;
    let test_data = load_test_set(&settings, &config)?;

    let resume = if cmd.resume {
        let dir = cmd.out.as_deref().ok_or(SnnError::InvalidParameter {
            what: "--resume",
            problem: "requires --out to locate the checkpoint".to_string(),
        })?;
        let state = load_resume_state(dir)?.ok_or_else(|| SnnError::ResumeState {
            path: dir.display().to_string(),
            problem: "no resume.state found".to_string(),
        })?;
        println!("resuming after epoch {}", state.epochs_done);
        Some(state)
    } else {
        None
    };

    let outcome = train(&config, &train_data, &test_data, cmd.out.as_deref(), resume)?;
    println!(
        "done: {} epochs, best test accuracy {:.4}",
        outcome.completed_epochs, outcome.best_test_accuracy
    );
    if let Some(out) = &cmd.out {
        println!("wrote metrics and checkpoints to {}", out.display());
    }
    Ok(())
}

fn run_eval(cmd: EvalCmd) -> Result<()> {
    let settings = resolve(cmd.config.as_deref(), cmd.knobs)?;
    let config = settings.run_config()?;
    let net = load_model(&cmd.model_file)?;
    let mut settings = settings;
    // A 169-input model on 28x28 images can only mean shrunk inputs.
    if settings.shrink.is_none() && net.input_size == 169 {
        settings.shrink = Some(true);
    }
    let data = load_test_set(&settings, &config)?;

    if let Some(path) = &cmd.realization {
        let (sizes, realization) = load_realization(path)?;
        if sizes != net.layer_sizes() {
            return Err(SnnError::InvalidParameter {
                what: "realization",
                problem: format!(
                    "drawn for layers {sizes:?}, model has {:?}",
                    net.layer_sizes()
                ),
            });
        }
        let accuracy = evaluate_fixed(&net, &data, &realization, config.hyper.t_max_sentinel)?;
        println!("accuracy_mean = {accuracy}");
        println!("accuracy_std = 0");
        println!("repetitions = 1");
        return Ok(());
    }

    let summary = evaluate(
        &net,
        &data,
        &config.test_variation,
        config.eval_repetitions,
        config.hyper.t_max_sentinel,
    )?;
    println!("accuracy_mean = {}", summary.mean_accuracy);
    println!("accuracy_std = {}", summary.std_accuracy);
    println!("repetitions = {}", summary.per_repetition.len());
    Ok(())
}

fn run_gradcheck(cmd: GradcheckCmd) -> Result<bool> {
    let mut knobs = resolve(cmd.config.as_deref(), cmd.knobs)?;
    if knobs.arch.is_none() {
        knobs.arch = Some("3-4-2".to_string());
    }
    if knobs.epsilon.is_none() {
        knobs.epsilon = Some(0.0);
    }
    let config = knobs.run_config()?;
    let hyper = &config.hyper;

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.rng_seed);
    let net = init_network(&config.arch, config.model, config.circuit, config.init, &mut rng)?;
    let input = SpikeVector::new(
        (0..config.arch[0])
            .map(|_| {
                use rand::Rng;
                (rng.gen::<f64>() < 0.9).then(|| rng.gen_range(0.0..hyper.tau_in))
            })
            .collect(),
    );
    let outputs = *config.arch.last().unwrap();
    if cmd.teacher >= outputs {
        return Err(SnnError::TeacherOutOfRange {
            teacher: cmd.teacher,
            outputs,
        });
    }

    let trace = forward(&net, &input, None)?;
    if trace.output().fired_count() == 0 {
        return Err(SnnError::InvalidParameter {
            what: "probe network",
            problem: "no output neuron fired; try another --seed".to_string(),
        });
    }
    let times = trace.output().sentinelize(hyper.t_max_sentinel);
    let delta = output_error(&times, cmd.teacher, hyper)?;
    let grads = backprop(&trace, &net, &delta, hyper);

    println!("{:>5} {:>4} {:>4} {:>14} {:>14} {:>10} {:>7}", "layer", "i", "j", "analytic", "fd", "rel_err", "stable");
    let mut stable = 0usize;
    let mut total = 0usize;
    let mut violations = 0usize;
    for l in 0..net.layers.len() {
        for i in 0..net.layers[l].fan_out() {
            for j in 0..net.layers[l].fan_in() {
                total += 1;
                let w = net.layers[l].weights[(i, j)];
                let probe = |wv: f64| probe_cost(&net, &input, hyper, cmd.teacher, l, i, j, wv);
                let fd = fd_gradient(probe, w, fd_default_step(w));
                let analytic = grads.layers[l][(i, j)];
                let gap = (analytic - fd.gradient).abs();
                let rel = gap / fd.gradient.abs().max(1e-300);
                let mut bad = false;
                if fd.stable {
                    stable += 1;
                    bad = if fd.gradient.abs() < 1e-3 {
                        gap >= 1e-7
                    } else {
                        rel >= cmd.tolerance
                    };
                    if bad {
                        violations += 1;
                    }
                }
                println!(
                    "{l:>5} {i:>4} {j:>4} {analytic:>14.6e} {:>14.6e} {:>10.2e} {:>7}{}",
                    fd.gradient,
                    rel,
                    if fd.stable { "yes" } else { "no" },
                    if bad { "  <- MISMATCH" } else { "" }
                );
            }
        }
    }
    println!("checked {total} weights ({stable} stable), {violations} mismatches");
    Ok(violations == 0)
}

#[allow(clippy::too_many_arguments)]
fn probe_cost(
    net: &Network,
    input: &SpikeVector,
    hyper: &ttfs_snn::Hyperparameters,
    teacher: usize,
    l: usize,
    i: usize,
    j: usize,
    w: f64,
) -> (f64, (Vec<bool>, Vec<Vec<usize>>)) {
    let mut probe_net = net.clone();
    probe_net.layers[l].weights[(i, j)] = w;
    let trace = forward(&probe_net, input, None).unwrap();
    let signature = (
        trace
            .layers
            .iter()
            .flat_map(|lt| lt.neurons.iter().map(|n| n.spike.is_some()))
            .collect(),
        trace
            .layers
            .iter()
            .flat_map(|lt| lt.neurons.iter().map(|n| n.causal.clone()))
            .collect(),
    );
    let c = cost(
        &trace.output().sentinelize(hyper.t_max_sentinel),
        teacher,
        hyper,
    )
    .unwrap()
    .cost;
    (c, signature)
}

fn axis_of(arg: AxisArg) -> SweepAxis {
    match arg {
        AxisArg::Vpulse => SweepAxis::VPulse,
        AxisArg::SigmaVth => SweepAxis::SigmaVth,
        AxisArg::SigmaTau => SweepAxis::SigmaTau,
    }
}

fn write_sweep_kv(rows: &[SweepRow], axis: SweepAxis, out: &mut impl Write) -> Result<()> {
    writeln!(out, "axis = {}", axis.name())?;
    writeln!(out, "points = {}", rows.len())?;
    for (k, r) in rows.iter().enumerate() {
        writeln!(out, "value[{k}] = {}", r.value)?;
        writeln!(out, "accuracy_mean[{k}] = {}", r.accuracy_mean)?;
        writeln!(out, "accuracy_std[{k}] = {}", r.accuracy_std)?;
        writeln!(out, "trials[{k}] = {}", r.trials)?;
    }
    Ok(())
}

fn run_sweep(cmd: SweepCmd) -> Result<()> {
    let settings = resolve(cmd.config.as_deref(), cmd.knobs)?;
    let config = settings.run_config()?;
    let axis = axis_of(cmd.axis);

    let rows = if cmd.eval_only {
        let net = load_model(cmd.model_file.as_ref().unwrap())?;
        let mut settings = settings.clone();
        if settings.shrink.is_none() && net.input_size == 169 {
            settings.shrink = Some(true);
        }
        let data = load_test_set(&settings, &config)?;
        let mut base = config.test_variation;
        // Sweeping a spread is meaningless without a sampling mode.
        if base.mode == VariationMode::None && settings.test_variation.is_none() {
            base.mode = VariationMode::SampledPerRealization;
        }
        sweep_eval_only(
            &net,
            axis,
            &cmd.values,
            cmd.trials,
            &base,
            &data,
            config.hyper.t_max_sentinel,
        )?
    } else {
        let train_data = load_train_set(&settings, &config)?;
        let test_data = load_test_set(&settings, &config)?;
        sweep(&config, axis, &cmd.values, cmd.trials, &train_data, &test_data)?
    };

    let mut stdout = std::io::stdout().lock();
    write_sweep_table(&rows, axis_of(cmd.axis), &mut stdout)?;
    if let Some(dir) = &cmd.out {
        std::fs::create_dir_all(dir)?;
        let mut table = std::fs::File::create(dir.join("sweep.txt"))?;
        write_sweep_table(&rows, axis_of(cmd.axis), &mut table)?;
        let mut kv = std::fs::File::create(dir.join("sweep.kv"))?;
        write_sweep_kv(&rows, axis, &mut kv)?;
        println!("wrote {} and {}", dir.join("sweep.txt").display(), dir.join("sweep.kv").display());
    }
    Ok(())
}

fn run_raster(cmd: RasterCmd) -> Result<()> {
    let settings = resolve(cmd.config.as_deref(), cmd.knobs)?;
    let config = settings.run_config()?;
    let net = load_model(&cmd.model_file)?;
    let mut settings = settings;
    if settings.shrink.is_none() && net.input_size == 169 {
        settings.shrink = Some(true);
    }
    let data = load_test_set(&settings, &config)?;
    let sample = data.spikes.get(cmd.index).ok_or(SnnError::InvalidParameter {
        what: "--index",
        problem: format!("test set has {} samples", data.len()),
    })?;

    match &cmd.out {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            dump_raster(&net, sample, cmd.membranes, cmd.dt, &mut f)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            dump_raster(&net, sample, cmd.membranes, cmd.dt, &mut out)?;
        }
    }
    Ok(())
}

fn run_export(cmd: ExportCmd) -> Result<()> {
    let net = load_model(&cmd.model_file)?;
    match &cmd.out {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            write_conductance_table(&net, &mut f)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            write_conductance_table(&net, &mut out)?;
        }
    }
    Ok(())
}
