//! Training loop, evaluation, parameter sweeps, and debug dumps.
//!
//! Determinism contract: a run is a pure function of its configuration and
//! seeds. Every random draw comes from a ChaCha stream keyed by purpose and
//! epoch, draws happen serially before any parallel section, and gradient
//! reduction folds fixed-size chunks in index order, so results are
//! bit-identical across thread counts and across checkpoint resumes.

use crate::backprop::{backprop, sgd_step};
use crate::dataset::{jitter, Dataset};
use crate::error::{Result, SnnError};
use crate::forward::{classify, forward};
use crate::loss::{cost, output_error};
use crate::network::{
    init_network, Gradients, Hyperparameters, InitSpec, Network, NeuronModel, SpikeVector,
};
use crate::oracle::{integrate_membrane, ArrivalEvent};
use crate::variation::{Phase, VariationMode, VariationSpec};
use crate::{io as model_io, CircuitParams};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

const STREAM_INIT: u64 = 0x10 << 56;
const STREAM_SHUFFLE: u64 = 0x11 << 56;
const STREAM_JITTER: u64 = 0x12 << 56;

/// Samples per parallel work unit. Fixed so the floating-point reduction
/// order does not depend on the thread count.
const CHUNK: usize = 16;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Parse a dash-separated architecture like `784-800-10`.
pub fn parse_architecture(text: &str) -> Result<Vec<usize>> {
    let sizes: Vec<usize> = text
        .split('-')
        .map(|s| s.trim().parse::<usize>().map_err(|_| ()))
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| SnnError::ArchParse(text.to_string()))?;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(SnnError::BadArchitecture(sizes));
    }
    Ok(sizes)
}

/// A dataset already turned into spike times.
#[derive(Debug, Clone)]
pub struct EncodedDataset {
    pub spikes: Vec<SpikeVector>,
    pub labels: Vec<u8>,
}

impl EncodedDataset {
    pub fn new(spikes: Vec<SpikeVector>, labels: Vec<u8>) -> Self {
        assert_eq!(spikes.len(), labels.len());
        EncodedDataset { spikes, labels }
    }

    /// Encode raw images, optionally box-downscaling them first.
    pub fn from_dataset(data: &Dataset, tau_in: f64, shrink_inputs: bool) -> Self {
        let spikes = data
            .images
            .iter()
            .map(|img| {
                if shrink_inputs {
                    crate::dataset::encode(
                        &crate::dataset::shrink(img, data.rows, data.cols),
                        tau_in,
                    )
                } else {
                    crate::dataset::encode(img, tau_in)
                }
            })
            .collect();
        EncodedDataset {
            spikes,
            labels: data.labels.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.spikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spikes.is_empty()
    }
}

/// Everything one training run needs to know.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub arch: Vec<usize>,
    pub model: NeuronModel,
    pub circuit: CircuitParams,
    pub hyper: Hyperparameters,
    pub init: InitSpec,
    pub train_variation: VariationSpec,
    pub test_variation: VariationSpec,
    /// Evaluate every this many epochs (the final epoch always evaluates).
    pub eval_every: usize,
    /// Test realizations averaged per evaluation when test variation is
    /// sampled per realization.
    pub eval_repetitions: usize,
    /// Stop after this many evaluations without a new best test accuracy;
    /// zero disables early stopping.
    pub patience: usize,
    /// Keep negative jittered times instead of clamping them to zero.
    pub unclamped_jitter: bool,
    pub quiet: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: vec![784, 800, 10],
            model: NeuronModel::Linear,
            circuit: CircuitParams::default(),
            hyper: Hyperparameters::default(),
            init: InitSpec::default(),
            train_variation: VariationSpec::none(),
            test_variation: VariationSpec::none(),
            eval_every: 1,
            eval_repetitions: 10,
            patience: 20,
            unclamped_jitter: false,
            quiet: false,
        }
    }
}

/// One evaluation-cadence row of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_cost: f64,
    pub train_accuracy: f64,
    pub test_accuracy_mean: f64,
    pub test_accuracy_std: f64,
    /// Fraction of hidden neurons that stayed silent, averaged over the
    /// epoch's training samples.
    pub silent_hidden_frac: f64,
    /// Mean spike time of output neurons that fired during training.
    pub mean_output_time: f64,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_cost,train_accuracy,test_accuracy_mean,\
test_accuracy_std,silent_hidden_frac,mean_output_time,wall_seconds";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.train_cost,
            self.train_accuracy,
            self.test_accuracy_mean,
            self.test_accuracy_std,
            self.silent_hidden_frac,
            self.mean_output_time,
            self.wall_seconds
        )
    }
}

/// Accuracy over a dataset, averaged across test-variation realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub per_repetition: Vec<f64>,
}

fn count_correct(
    net: &Network,
    data: &EncodedDataset,
    real: Option<&crate::variation::VariationRealization>,
    t_max_sentinel: f64,
) -> Result<usize> {
    data.spikes
        .par_chunks(64)
        .zip(data.labels.par_chunks(64))
        .map(|(spikes, labels)| {
            let mut c = 0;
            for (s, &l) in spikes.iter().zip(labels) {
                let trace = forward(net, s, real)?;
                if classify(&trace, t_max_sentinel) == l as usize {
                    c += 1;
                }
            }
            Ok::<usize, SnnError>(c)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

/// Accuracy on one explicit device realization.
pub fn evaluate_fixed(
    net: &Network,
    data: &EncodedDataset,
    realization: &crate::variation::VariationRealization,
    t_max_sentinel: f64,
) -> Result<f64> {
    let real = (!realization.is_nominal()).then_some(realization);
    let correct = count_correct(net, data, real, t_max_sentinel)?;
    Ok(correct as f64 / data.len().max(1) as f64)
}

pub fn evaluate(
    net: &Network,
    data: &EncodedDataset,
    variation: &VariationSpec,
    repetitions: usize,
    t_max_sentinel: f64,
) -> Result<EvalSummary> {
    let varied = variation.mode != VariationMode::None
        && (variation.sigma_vth > 0.0 || variation.sigma_tau > 0.0);
    let reps = match variation.mode {
        VariationMode::SampledPerRealization if varied => repetitions.max(1),
        _ => 1,
    };
    let mut per_repetition = Vec::with_capacity(reps);
    for r in 0..reps {
        let realization = variation.realize(net, Phase::Test, r as u64);
        let real = (!realization.is_nominal()).then_some(&realization);
        let correct = count_correct(net, data, real, t_max_sentinel)?;
        per_repetition.push(correct as f64 / data.len().max(1) as f64);
    }
    let mean = per_repetition.iter().sum::<f64>() / reps as f64;
    let std = if reps > 1 {
        let var = per_repetition
            .iter()
            .map(|a| (a - mean) * (a - mean))
            .sum::<f64>()
            / (reps - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    Ok(EvalSummary {
        mean_accuracy: mean,
        std_accuracy: std,
        per_repetition,
    })
}

/// State needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct ResumeState {
    pub epochs_done: usize,
    pub network: Network,
    pub best_test_accuracy: f64,
    pub stagnant_evals: usize,
}

const RESUME_MAGIC: &str = "TTFS-SNN-RESUME v1";

pub fn save_resume_state(dir: &Path, state: &ResumeState) -> Result<()> {
    model_io::save_model(&state.network, dir.join("resume-model.snn"))?;
    let text = format!(
        "{RESUME_MAGIC}\nepochs_done = {}\nbest_test_accuracy = {}\nstagnant_evals = {}\n",
        state.epochs_done, state.best_test_accuracy, state.stagnant_evals
    );
    fs::write(dir.join("resume.state"), text)?;
    Ok(())
}

pub fn load_resume_state(dir: &Path) -> Result<Option<ResumeState>> {
    let path = dir.join("resume.state");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    let mut lines = text.lines();
    let err = |problem: &str| SnnError::ResumeState {
        path: path.display().to_string(),
        problem: problem.to_string(),
    };
    if lines.next() != Some(RESUME_MAGIC) {
        return Err(err("bad magic line"));
    }
    let mut epochs_done = None;
    let mut best = None;
    let mut stagnant = None;
    for line in lines {
        if let Some(v) = line.strip_prefix("epochs_done = ") {
            epochs_done = v.parse::<usize>().ok();
        } else if let Some(v) = line.strip_prefix("best_test_accuracy = ") {
            best = v.parse::<f64>().ok();
        } else if let Some(v) = line.strip_prefix("stagnant_evals = ") {
            stagnant = v.parse::<usize>().ok();
        }
    }
    let network = model_io::load_model(dir.join("resume-model.snn"))?;
    Ok(Some(ResumeState {
        epochs_done: epochs_done.ok_or_else(|| err("missing epochs_done"))?,
        network,
        best_test_accuracy: best.ok_or_else(|| err("missing best_test_accuracy"))?,
        stagnant_evals: stagnant.ok_or_else(|| err("missing stagnant_evals"))?,
    }))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub metrics: Vec<MetricsRow>,
    pub best_test_accuracy: f64,
    pub completed_epochs: usize,
}

#[derive(Default, Clone, Copy)]
struct BatchStats {
    cost_sum: f64,
    samples: usize,
    correct: usize,
    silent_hidden: usize,
    hidden_total: usize,
    output_time_sum: f64,
    output_fired: usize,
}

impl BatchStats {
    fn absorb(&mut self, o: &BatchStats) {
        self.cost_sum += o.cost_sum;
        self.samples += o.samples;
        self.correct += o.correct;
        self.silent_hidden += o.silent_hidden;
        self.hidden_total += o.hidden_total;
        self.output_time_sum += o.output_time_sum;
        self.output_fired += o.output_fired;
    }
}

fn validate_data(arch: &[usize], data: &EncodedDataset, what: &str) -> Result<()> {
    let input = arch[0];
    let outputs = *arch.last().unwrap();
    for s in &data.spikes {
        if s.len() != input {
            return Err(SnnError::InputSizeMismatch {
                got: s.len(),
                want: input,
            });
        }
    }
    if let Some(&l) = data.labels.iter().find(|&&l| (l as usize) >= outputs) {
        return Err(SnnError::TeacherOutOfRange {
            teacher: l as usize,
            outputs,
        });
    }
    if data.is_empty() {
        return Err(SnnError::InvalidParameter {
            what: "dataset",
            problem: format!("{what} dataset is empty"),
        });
    }
    Ok(())
}

/// Train a network with mini-batch gradient descent.
///
/// `out_dir`, when given, receives `metrics.csv`, the best and final models,
/// and a resume checkpoint after every epoch. Passing the loaded checkpoint
/// as `resume` continues a stopped run; the combined run is bit-identical to
/// one that never stopped, because all randomness is keyed by epoch.
pub fn train(
    config: &RunConfig,
    train_data: &EncodedDataset,
    test_data: &EncodedDataset,
    out_dir: Option<&Path>,
    resume: Option<ResumeState>,
) -> Result<TrainOutcome> {
    let hyper = &config.hyper;
    hyper.validate()?;
    validate_data(&config.arch, train_data, "train")?;
    validate_data(&config.arch, test_data, "test")?;
    if hyper.batch_size == 0 {
        return Err(SnnError::InvalidParameter {
            what: "batch_size",
            problem: "must be at least 1".to_string(),
        });
    }

    let (mut net, start_epoch, mut best, mut stagnant) = match resume {
        Some(r) => (
            r.network,
            r.epochs_done,
            r.best_test_accuracy,
            r.stagnant_evals,
        ),
        None => {
            let mut rng = stream_rng(hyper.rng_seed, STREAM_INIT);
            let net = init_network(
                &config.arch,
                config.model,
                config.circuit,
                config.init.clone(),
                &mut rng,
            )?;
            (net, 0, f64::NEG_INFINITY, 0)
        }
    };

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let metrics_path = dir.join("metrics.csv");
        if start_epoch == 0 || !metrics_path.exists() {
            fs::write(&metrics_path, format!("{METRICS_HEADER}\n"))?;
        }
        // A known-fixed device draw is what downstream eval runs need to
        // reproduce this training, so persist it next to the checkpoints.
        let fixed = [&config.train_variation, &config.test_variation]
            .into_iter()
            .find(|s| s.mode == VariationMode::KnownFixed);
        if let Some(spec) = fixed {
            let real = spec.realize(&net, Phase::Train, 0);
            model_io::save_realization(&real, &config.arch, dir.join("realization.dev"))?;
        }
    }

    let n = train_data.len();
    let batches_per_epoch = n.div_ceil(hyper.batch_size);
    let mut metrics = Vec::new();
    let mut completed = start_epoch;

    for epoch in start_epoch..hyper.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(hyper.rng_seed, STREAM_SHUFFLE | epoch as u64));
        let mut jitter_rng = stream_rng(hyper.rng_seed, STREAM_JITTER | epoch as u64);

        let mut epoch_stats = BatchStats::default();
        for b in 0..batches_per_epoch {
            let lo = b * hyper.batch_size;
            let hi = (lo + hyper.batch_size).min(n);
            let idxs = &order[lo..hi];

            let realization = config.train_variation.realize(
                &net,
                Phase::Train,
                (epoch * batches_per_epoch + b) as u64,
            );
            let real = (!realization.is_nominal()).then_some(&realization);

            // Jitter serially so draws are independent of the parallel split.
            let batch: Vec<(SpikeVector, u8)> = idxs
                .iter()
                .map(|&k| {
                    (
                        jitter(
                            &train_data.spikes[k],
                            hyper.sigma_t,
                            !config.unclamped_jitter,
                            &mut jitter_rng,
                        ),
                        train_data.labels[k],
                    )
                })
                .collect();

            let parts: Vec<(Gradients, BatchStats)> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut grads = Gradients::zeros_like(&net);
                    let mut stats = BatchStats::default();
                    for (spikes, label) in chunk {
                        let trace = forward(&net, spikes, real)?;
                        let times = trace.output().sentinelize(hyper.t_max_sentinel);
                        let breakdown = cost(&times, *label as usize, hyper)?;
                        let delta = output_error(&times, *label as usize, hyper)?;
                        grads.add_assign(&backprop(&trace, &net, &delta, hyper));

                        stats.cost_sum += breakdown.cost;
                        stats.samples += 1;
                        if classify(&trace, hyper.t_max_sentinel) == *label as usize {
                            stats.correct += 1;
                        }
                        for lt in &trace.layers[..trace.layers.len() - 1] {
                            stats.hidden_total += lt.neurons.len();
                            stats.silent_hidden +=
                                lt.neurons.iter().filter(|n| n.spike.is_none()).count();
                        }
                        for t in trace.output().times.iter().flatten() {
                            stats.output_time_sum += t;
                            stats.output_fired += 1;
                        }
                    }
                    Ok((grads, stats))
                })
                .collect::<Result<_>>()?;

            let mut grads = Gradients::zeros_like(&net);
            let mut batch_stats = BatchStats::default();
            for (g, s) in &parts {
                grads.add_assign(g);
                batch_stats.absorb(s);
            }
            if !batch_stats.cost_sum.is_finite() || !grads.is_finite() {
                return Err(SnnError::Diverged {
                    epoch,
                    batch: b,
                    max_abs_gradient: grads.max_abs(),
                });
            }
            grads.scale(1.0 / idxs.len() as f64);
            sgd_step(&mut net, &grads, hyper.eta);
            epoch_stats.absorb(&batch_stats);
        }
        completed = epoch + 1;

        let is_eval = config.eval_every > 0 && (completed % config.eval_every == 0)
            || completed == hyper.epochs;
        if is_eval {
            let eval = evaluate(
                &net,
                test_data,
                &config.test_variation,
                config.eval_repetitions,
                hyper.t_max_sentinel,
            )?;
            let row = MetricsRow {
                epoch: completed,
                train_cost: epoch_stats.cost_sum / epoch_stats.samples.max(1) as f64,
                train_accuracy: epoch_stats.correct as f64 / epoch_stats.samples.max(1) as f64,
                test_accuracy_mean: eval.mean_accuracy,
                test_accuracy_std: eval.std_accuracy,
                silent_hidden_frac: epoch_stats.silent_hidden as f64
                    / epoch_stats.hidden_total.max(1) as f64,
                mean_output_time: epoch_stats.output_time_sum
                    / epoch_stats.output_fired.max(1) as f64,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            if !config.quiet {
                println!(
                    "epoch {:>4}  cost {:>9.4}  train {:.4}  test {:.4} ± {:.4}  silent {:.3}  out_t {:.2}  ({:.1}s)",
                    row.epoch,
                    row.train_cost,
                    row.train_accuracy,
                    row.test_accuracy_mean,
                    row.test_accuracy_std,
                    row.silent_hidden_frac,
                    row.mean_output_time,
                    row.wall_seconds
                );
            }
            if let Some(dir) = out_dir {
                let mut f = fs::OpenOptions::new()
                    .append(true)
                    .open(dir.join("metrics.csv"))?;
                writeln!(f, "{}", row.to_csv())?;
            }

            let improved = eval.mean_accuracy > best;
            if improved {
                best = eval.mean_accuracy;
                stagnant = 0;
                if let Some(dir) = out_dir {
                    model_io::save_model(&net, dir.join("model-best.snn"))?;
                }
            } else {
                stagnant += 1;
            }
            metrics.push(row);

            if let Some(dir) = out_dir {
                save_resume_state(
                    dir,
                    &ResumeState {
                        epochs_done: completed,
                        network: net.clone(),
                        best_test_accuracy: best,
                        stagnant_evals: stagnant,
                    },
                )?;
            }
            if config.patience > 0 && stagnant >= config.patience {
                if !config.quiet {
                    println!("early stop: no improvement in {} evaluations", stagnant);
                }
                break;
            }
        } else if let Some(dir) = out_dir {
            save_resume_state(
                dir,
                &ResumeState {
                    epochs_done: completed,
                    network: net.clone(),
                    best_test_accuracy: best,
                    stagnant_evals: stagnant,
                },
            )?;
        }
    }

    if let Some(dir) = out_dir {
        model_io::save_model(&net, dir.join("model-final.snn"))?;
    }
    Ok(TrainOutcome {
        network: net,
        metrics,
        best_test_accuracy: best,
        completed_epochs: completed,
    })
}

/// Which knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Symmetric pulse rails of the circuit model.
    VPulse,
    /// Threshold spread; applied to train and test variation alike.
    SigmaVth,
    /// Delay spread; applied to train and test variation alike.
    SigmaTau,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::VPulse => "vpulse",
            SweepAxis::SigmaVth => "sigma-vth",
            SweepAxis::SigmaTau => "sigma-tau",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub trials: usize,
}

fn apply_axis(config: &mut RunConfig, axis: SweepAxis, value: f64) {
    match axis {
        SweepAxis::VPulse => config.circuit = CircuitParams::symmetric(value),
        SweepAxis::SigmaVth => {
            config.train_variation.sigma_vth = value;
            config.test_variation.sigma_vth = value;
        }
        SweepAxis::SigmaTau => {
            config.train_variation.sigma_tau = value;
            config.test_variation.sigma_tau = value;
        }
    }
}

/// Train `trials` fresh networks per axis value (seeds offset by trial) and
/// summarize final test accuracy.
pub fn sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    trials: usize,
    train_data: &EncodedDataset,
    test_data: &EncodedDataset,
) -> Result<Vec<SweepRow>> {
    let trials = trials.max(1);
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut accs = Vec::with_capacity(trials);
        for trial in 0..trials {
            let mut config = base.clone();
            apply_axis(&mut config, axis, value);
            config.hyper.rng_seed = base.hyper.rng_seed.wrapping_add(trial as u64);
            config.train_variation.rng_seed =
                base.train_variation.rng_seed.wrapping_add(trial as u64);
            config.test_variation.rng_seed =
                base.test_variation.rng_seed.wrapping_add(trial as u64);
            config.quiet = true;
            let outcome = train(&config, train_data, test_data, None, None)?;
            let eval = evaluate(
                &outcome.network,
                test_data,
                &config.test_variation,
                config.eval_repetitions,
                config.hyper.t_max_sentinel,
            )?;
            accs.push(eval.mean_accuracy);
        }
        let mean = accs.iter().sum::<f64>() / trials as f64;
        let std = if trials > 1 {
            (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (trials - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        rows.push(SweepRow {
            value,
            accuracy_mean: mean,
            accuracy_std: std,
            trials,
        });
    }
    Ok(rows)
}

/// Evaluate an already-trained network across test-variation spreads without
/// retraining: per value, `trials` repetitions of the test draw.
pub fn sweep_eval_only(
    net: &Network,
    axis: SweepAxis,
    values: &[f64],
    trials: usize,
    base_test_variation: &VariationSpec,
    test_data: &EncodedDataset,
    t_max_sentinel: f64,
) -> Result<Vec<SweepRow>> {
    let trials = trials.max(1);
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut variation = *base_test_variation;
        let mut net = net.clone();
        match axis {
            SweepAxis::VPulse => net.circuit = CircuitParams::symmetric(value),
            SweepAxis::SigmaVth => variation.sigma_vth = value,
            SweepAxis::SigmaTau => variation.sigma_tau = value,
        }
        let eval = evaluate(&net, test_data, &variation, trials, t_max_sentinel)?;
        let (mean, std) = (eval.mean_accuracy, eval.std_accuracy);
        rows.push(SweepRow {
            value,
            accuracy_mean: mean,
            accuracy_std: std,
            trials: eval.per_repetition.len(),
        });
    }
    Ok(rows)
}

pub fn write_sweep_table(rows: &[SweepRow], axis: SweepAxis, out: &mut impl Write) -> Result<()> {
    writeln!(out, "# sweep axis: {}", axis.name())?;
    writeln!(out, "value accuracy_mean accuracy_std trials")?;
    for r in rows {
        writeln!(
            out,
            "{} {} {} {}",
            r.value, r.accuracy_mean, r.accuracy_std, r.trials
        )?;
    }
    Ok(())
}

/// Write the spike raster for one sample: one line per spike with layer
/// index (0 = input), neuron index, and time. With `include_membranes`, the
/// output neurons' membrane trajectories from the reference integrator are
/// appended as `v layer neuron t v` lines.
pub fn dump_raster(
    net: &Network,
    input: &SpikeVector,
    include_membranes: bool,
    dt: f64,
    out: &mut impl Write,
) -> Result<()> {
    let trace = forward(net, input, None)?;
    writeln!(out, "# spike raster: layer neuron time")?;
    for (j, t) in input.times.iter().enumerate() {
        if let Some(t) = t {
            writeln!(out, "0 {j} {t}")?;
        }
    }
    let mut t_latest: f64 = 0.0;
    for (l, lt) in trace.layers.iter().enumerate() {
        for (i, nt) in lt.neurons.iter().enumerate() {
            if let Some(t) = nt.spike {
                writeln!(out, "{} {i} {t}", l + 1)?;
                t_latest = t_latest.max(t);
            }
        }
    }
    let silent: usize = trace
        .layers
        .iter()
        .map(|lt| lt.neurons.iter().filter(|n| n.spike.is_none()).count())
        .sum();
    writeln!(out, "# silent neurons: {silent}")?;

    if include_membranes {
        let last = net.layers.len() - 1;
        let feeding = trace.layer_input(last);
        let layer = &net.layers[last];
        let horizon = (t_latest * 1.5).max(1.0);
        writeln!(out, "# membranes of output layer: v layer neuron t v")?;
        for i in 0..layer.fan_out() {
            let mut events: Vec<ArrivalEvent> = feeding
                .times
                .iter()
                .enumerate()
                .filter_map(|(j, t)| {
                    t.map(|t| ArrivalEvent::new(j, t + layer.delay(i, j), layer.weights[(i, j)]))
                })
                .collect();
            crate::oracle::sort_events(&mut events);
            let r = integrate_membrane(
                net.model,
                net.circuit,
                &events,
                layer.thresholds[i],
                dt,
                horizon,
            );
            for (t, v) in r.trajectory {
                writeln!(out, "v {} {i} {t} {v}", last + 1)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Penalty;

    /// Two well-separated synthetic spike patterns, one per class.
    fn toy_data(copies: usize) -> EncodedDataset {
        let mut spikes = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..copies {
            spikes.push(SpikeVector::all_fired(&[0.0, 4.0]));
            labels.push(0);
            spikes.push(SpikeVector::all_fired(&[4.0, 0.0]));
            labels.push(1);
        }
        EncodedDataset::new(spikes, labels)
    }

    fn toy_config(epochs: usize) -> RunConfig {
        RunConfig {
            arch: vec![2, 4, 2],
            hyper: Hyperparameters {
                eta: 0.02,
                gamma: 0.1,
                epsilon: 0.5,
                t_ref: 4.0,
                tau_in: 5.0,
                sigma_t: 0.0,
                penalty: Penalty::Quadratic,
                t_max_sentinel: 50.0,
                batch_size: 4,
                epochs,
                rng_seed: 5,
            },
            init: InitSpec::Uniform {
                mean: 0.4,
                std: 0.2,
            },
            eval_every: 1,
            patience: 0,
            quiet: true,
            ..RunConfig::default()
        }
    }

    #[test]
    fn parse_architecture_accepts_and_rejects() {
        assert_eq!(parse_architecture("784-800-10").unwrap(), vec![784, 800, 10]);
        assert_eq!(parse_architecture("2-3").unwrap(), vec![2, 3]);
        assert!(parse_architecture("784").is_err());
        assert!(parse_architecture("a-b").is_err());
        assert!(parse_architecture("10-0-5").is_err());
    }

    #[test]
    fn zero_eta_leaves_weights_unchanged() {
        let data = toy_data(4);
        let mut config = toy_config(3);
        config.hyper.eta = 0.0;
        let init_net = {
            let mut rng = stream_rng(config.hyper.rng_seed, STREAM_INIT);
            init_network(
                &config.arch,
                config.model,
                config.circuit,
                config.init.clone(),
                &mut rng,
            )
            .unwrap()
        };
        let out = train(&config, &data, &data, None, None).unwrap();
        assert_eq!(out.network, init_net);
    }

    // One sample, one batch: the SGD update must equal -eta times the
    // analytically backpropagated gradient of that sample's cost.
    #[test]
    fn single_sample_update_matches_gradient() {
        let data = EncodedDataset::new(vec![SpikeVector::all_fired(&[0.0, 2.0])], vec![0]);
        let mut config = toy_config(1);
        config.hyper.batch_size = 1;
        config.arch = vec![2, 2, 2];

        let net0 = {
            let mut rng = stream_rng(config.hyper.rng_seed, STREAM_INIT);
            init_network(
                &config.arch,
                config.model,
                config.circuit,
                config.init.clone(),
                &mut rng,
            )
            .unwrap()
        };
        let trace = forward(&net0, &data.spikes[0], None).unwrap();
        let times = trace.output().sentinelize(config.hyper.t_max_sentinel);
        let delta = output_error(&times, 0, &config.hyper).unwrap();
        let grads = backprop(&trace, &net0, &delta, &config.hyper);

        let out = train(&config, &data, &data, None, None).unwrap();
        for l in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let want =
                        net0.layers[l].weights[(i, j)] - config.hyper.eta * grads.layers[l][(i, j)];
                    let got = out.network.layers[l].weights[(i, j)];
                    assert!(
                        (want - got).abs() < 1e-15,
                        "layer {l} ({i},{j}): {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let data = toy_data(6);
        let config = toy_config(4);
        let a = train(&config, &data, &data, None, None).unwrap();
        let b = train(&config, &data, &data, None, None).unwrap();
        assert_eq!(a.network, b.network);
        let rows_a: Vec<String> = a.metrics.iter().map(|r| r.to_csv()).collect();
        let rows_b: Vec<String> = b.metrics.iter().map(|r| r.to_csv()).collect();
        // Wall time is the one nondeterministic column; strip it.
        let strip = |rows: &[String]| -> Vec<String> {
            rows.iter()
                .map(|r| r.rsplit_once(',').unwrap().0.to_string())
                .collect()
        };
        assert_eq!(strip(&rows_a), strip(&rows_b));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = toy_data(6);
        let dir = tempfile::tempdir().unwrap();

        let full = train(&toy_config(6), &data, &data, None, None).unwrap();

        let mut first = toy_config(3);
        first.hyper.epochs = 3;
        train(&first, &data, &data, Some(dir.path()), None).unwrap();
        let resume = load_resume_state(dir.path()).unwrap().expect("state saved");
        assert_eq!(resume.epochs_done, 3);
        let second = train(
            &toy_config(6),
            &data,
            &data,
            Some(dir.path()),
            Some(resume),
        )
        .unwrap();

        assert_eq!(full.network, second.network);
        assert_eq!(full.completed_epochs, second.completed_epochs);
    }

    #[test]
    fn learns_to_separate_toy_patterns() {
        let data = toy_data(8);
        let config = toy_config(40);
        let out = train(&config, &data, &data, None, None).unwrap();
        let eval = evaluate(
            &out.network,
            &data,
            &VariationSpec::none(),
            1,
            config.hyper.t_max_sentinel,
        )
        .unwrap();
        assert!(
            eval.mean_accuracy > 0.95,
            "accuracy {} after training",
            eval.mean_accuracy
        );
    }

    #[test]
    fn metrics_and_checkpoints_are_written() {
        let data = toy_data(3);
        let dir = tempfile::tempdir().unwrap();
        let out = train(&toy_config(2), &data, &data, Some(dir.path()), None).unwrap();
        assert_eq!(out.metrics.len(), 2);
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        assert_eq!(lines.count(), 2);
        assert!(dir.path().join("model-best.snn").exists());
        assert!(dir.path().join("model-final.snn").exists());
        assert!(dir.path().join("resume.state").exists());
    }

    #[test]
    fn diverged_training_reports_position() {
        let data = toy_data(2);
        let mut config = toy_config(2);
        // Penalty so heavy the cost overflows on the first batch.
        config.hyper.gamma = f64::MAX;
        config.hyper.t_ref = 1000.0;
        match train(&config, &data, &data, None, None) {
            Err(SnnError::Diverged { epoch: 0, batch: 0, .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn evaluate_counts_correctly_without_variation() {
        let data = toy_data(5);
        let config = toy_config(25);
        let out = train(&config, &data, &data, None, None).unwrap();
        let eval = evaluate(&out.network, &data, &VariationSpec::none(), 7, 50.0).unwrap();
        // Without variation there is exactly one repetition.
        assert_eq!(eval.per_repetition.len(), 1);
        assert_eq!(eval.std_accuracy, 0.0);
    }

    #[test]
    fn untrained_many_class_accuracy_is_near_chance() {
        use rand::Rng;
        // 10 random input patterns per class label, untrained 20-10 net.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut spikes = Vec::new();
        let mut labels = Vec::new();
        for k in 0..2000u32 {
            let times: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..5.0)).collect();
            spikes.push(SpikeVector::all_fired(&times));
            labels.push((k % 10) as u8);
        }
        let data = EncodedDataset::new(spikes, labels);
        let mut init_rng = ChaCha8Rng::seed_from_u64(77);
        let net = init_network(
            &[20, 10],
            NeuronModel::Linear,
            CircuitParams::default(),
            InitSpec::Uniform {
                mean: 0.2,
                std: 0.1,
            },
            &mut init_rng,
        )
        .unwrap();
        let eval = evaluate(&net, &data, &VariationSpec::none(), 1, 50.0).unwrap();
        assert!(
            (eval.mean_accuracy - 0.1).abs() < 0.03,
            "untrained accuracy {}",
            eval.mean_accuracy
        );
    }

    #[test]
    fn raster_lists_spikes_and_membranes() {
        let data = toy_data(1);
        let config = toy_config(1);
        let out = train(&config, &data, &data, None, None).unwrap();
        let mut buf = Vec::new();
        dump_raster(&out.network, &data.spikes[0], true, 1e-3, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().any(|l| l.starts_with("0 0 ")));
        assert!(text.lines().any(|l| l.starts_with("v 2 ")));
    }

    #[test]
    fn sweep_eval_only_covers_all_values() {
        let data = toy_data(3);
        let config = toy_config(10);
        let out = train(&config, &data, &data, None, None).unwrap();
        let rows = sweep_eval_only(
            &out.network,
            SweepAxis::SigmaVth,
            &[0.0, 0.1, 0.5],
            3,
            &VariationSpec {
                sigma_vth: 0.0,
                sigma_tau: 0.0,
                mode: VariationMode::SampledPerRealization,
                rng_seed: 7,
            },
            &data,
            config.hyper.t_max_sentinel,
        )
        .unwrap();
        assert_eq!(rows.len(), 3);
        // Zero spread evaluates once; nonzero spreads use all trials.
        assert_eq!(rows[0].trials, 1);
        assert_eq!(rows[1].trials, 3);
        let mut buf = Vec::new();
        write_sweep_table(&rows, SweepAxis::SigmaVth, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
