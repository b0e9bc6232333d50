//! Run settings from three layers: command-line flags, an optional key-value
//! config file, then built-in defaults. Config keys are the flag names.

use clap::{Args, ValueEnum};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use ttfs_snn::network::{
    CircuitParams, Hyperparameters, InitSpec, NeuronModel, Penalty,
};
use ttfs_snn::trainer::{parse_architecture, RunConfig};
use ttfs_snn::variation::{VariationMode, VariationSpec};
use ttfs_snn::{Result, SnnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Linear,
    Circuit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyArg {
    Quadratic,
    ThreeHalves,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariationArg {
    /// Nominal parameters everywhere.
    None,
    /// Fresh device draw per training batch / per test repetition.
    Sampled,
    /// One frozen device shared by training and test.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    /// Gaussian scaled by fan-in so summed drive crosses threshold early.
    Scaled,
    /// Gaussian with explicit mean and std.
    Uniform,
}

fn enum_parse_err(what: &'static str, value: &str, options: &str) -> SnnError {
    SnnError::InvalidParameter {
        what,
        problem: format!("'{value}' (expected one of: {options})"),
    }
}

impl FromStr for ModelArg {
    type Err = SnnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelArg::Linear),
            "circuit" => Ok(ModelArg::Circuit),
            _ => Err(enum_parse_err("model", s, "linear, circuit")),
        }
    }
}

impl FromStr for PenaltyArg {
    type Err = SnnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(PenaltyArg::Quadratic),
            "three-halves" => Ok(PenaltyArg::ThreeHalves),
            _ => Err(enum_parse_err("penalty", s, "quadratic, three-halves")),
        }
    }
}

impl FromStr for VariationArg {
    type Err = SnnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(VariationArg::None),
            "sampled" => Ok(VariationArg::Sampled),
            "fixed" => Ok(VariationArg::Fixed),
            _ => Err(enum_parse_err("variation mode", s, "none, sampled, fixed")),
        }
    }
}

impl FromStr for InitArg {
    type Err = SnnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled" => Ok(InitArg::Scaled),
            "uniform" => Ok(InitArg::Uniform),
            _ => Err(enum_parse_err("init", s, "scaled, uniform")),
        }
    }
}

impl From<VariationArg> for VariationMode {
    fn from(v: VariationArg) -> Self {
        match v {
            VariationArg::None => VariationMode::None,
            VariationArg::Sampled => VariationMode::SampledPerRealization,
            VariationArg::Fixed => VariationMode::KnownFixed,
        }
    }
}

/// Every tunable knob, each optional so unset values fall through to the
/// config file and then to defaults. Config-file keys equal the flag names.
#[derive(Args, Debug, Clone, Default)]
pub struct Settings {
    /// Layer sizes, dash-separated (e.g. 784-800-10).
    #[arg(long)]
    pub arch: Option<String>,
    /// Neuron membrane model.
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Positive pulse rail of the circuit model.
    #[arg(long)]
    pub vpulse_pos: Option<f64>,
    /// Negative pulse rail; defaults to the mirrored positive rail.
    #[arg(long, allow_negative_numbers = true)]
    pub vpulse_neg: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Weight of the output-time penalty.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Gradient stabilizer added to slope-sum denominators.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Target output spike time of the penalty (ms).
    #[arg(long)]
    pub t_ref: Option<f64>,
    /// Input encoding window (ms).
    #[arg(long)]
    pub tau_in: Option<f64>,
    /// Std of Gaussian input-time jitter during training (ms).
    #[arg(long)]
    pub sigma_t: Option<f64>,
    /// Penalty exponent.
    #[arg(long, value_enum)]
    pub penalty: Option<PenaltyArg>,
    /// Stand-in time for neurons that never fire (ms).
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Master seed for init, shuffling, and jitter.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight initialization family.
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Scale constant of the fan-in initializer: one value for every layer,
    /// or a comma-separated value per weight layer.
    #[arg(long, value_delimiter = ',')]
    pub init_c: Option<Vec<f64>>,
    /// Fan-in initializer scale for the output layer only (default: --init-c).
    /// Values below --init-c start the output spikes later than --t-ref, the
    /// side the time penalty pulls in from without extinguishing neurons.
    #[arg(long)]
    pub init_c_out: Option<f64>,
    /// Mean of the explicit Gaussian initializer.
    #[arg(long, allow_negative_numbers = true)]
    pub init_mean: Option<f64>,
    /// Std of the explicit Gaussian initializer.
    #[arg(long)]
    pub init_std: Option<f64>,
    /// Threshold spread during training.
    #[arg(long)]
    pub train_sigma_vth: Option<f64>,
    /// Delay spread during training.
    #[arg(long)]
    pub train_sigma_tau: Option<f64>,
    /// How training sees device variation.
    #[arg(long, value_enum)]
    pub train_variation: Option<VariationArg>,
    /// Seed of the training-side variation draws; defaults to --seed.
    #[arg(long)]
    pub train_variation_seed: Option<u64>,
    /// Threshold spread at test time.
    #[arg(long)]
    pub test_sigma_vth: Option<f64>,
    /// Delay spread at test time.
    #[arg(long)]
    pub test_sigma_tau: Option<f64>,
    /// How evaluation sees device variation.
    #[arg(long, value_enum)]
    pub test_variation: Option<VariationArg>,
    /// Seed of the test-side variation draws; defaults to --seed.
    #[arg(long)]
    pub test_variation_seed: Option<u64>,
    /// Evaluate every N epochs.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Test realizations averaged per evaluation under sampled variation.
    #[arg(long)]
    pub eval_repetitions: Option<usize>,
    /// Stop after N evaluations without a new best (0 disables).
    #[arg(long)]
    pub patience: Option<usize>,
    /// Keep negative jittered input times instead of clamping at 0.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub unclamped_jitter: Option<bool>,
    /// Suppress per-epoch progress lines.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub quiet: Option<bool>,
    /// Downscale 28x28 images to 13x13 before encoding.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub shrink: Option<bool>,
    /// Directory holding the four IDX files (default: $TTFS_DATA_DIR, else .).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub train_images: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    /// Use only the first N training samples.
    #[arg(long)]
    pub limit_train: Option<usize>,
    /// Use only the first N test samples.
    #[arg(long)]
    pub limit_test: Option<usize>,
}

macro_rules! merge_settings {
    ($cli:expr, $file:expr; $($f:ident),* $(,)?) => {{
        let c = $cli; let f = $file;
        Settings { $($f: c.$f.or(f.$f)),* }
    }};
}

impl Settings {
    /// Flags win over config-file values.
    pub fn on_top_of(self, file: Settings) -> Settings {
        merge_settings!(self, file;
            arch, model, vpulse_pos, vpulse_neg, eta, gamma, epsilon, t_ref,
            tau_in, sigma_t, penalty, t_max, batch_size, epochs, seed, init,
            init_c, init_c_out, init_mean, init_std, train_sigma_vth, train_sigma_tau,
            train_variation, train_variation_seed, test_sigma_vth,
            test_sigma_tau, test_variation, test_variation_seed, eval_every,
            eval_repetitions, patience, unclamped_jitter, quiet, shrink,
            data_dir, train_images, train_labels, test_images, test_labels,
            limit_train, limit_test,
        )
    }

    /// Resolve to a concrete run configuration, filling defaults.
    pub fn run_config(&self) -> Result<RunConfig> {
        let arch = parse_architecture(self.arch.as_deref().unwrap_or("784-800-10"))?;
        let model = match self.model.unwrap_or(ModelArg::Linear) {
            ModelArg::Linear => NeuronModel::Linear,
            ModelArg::Circuit => NeuronModel::Circuit,
        };
        let pos = self.vpulse_pos.unwrap_or(128.0);
        let neg = self.vpulse_neg.unwrap_or(-pos);
        let rails_ok = pos > 0.0 && neg < 0.0;
        if !rails_ok {
            return Err(SnnError::InvalidParameter {
                what: "vpulse rails",
                problem: format!("need positive then negative, got {pos} and {neg}"),
            });
        }
        let defaults = Hyperparameters::default();
        let hyper = Hyperparameters {
            eta: self.eta.unwrap_or(defaults.eta),
            gamma: self.gamma.unwrap_or(defaults.gamma),
            epsilon: self.epsilon.unwrap_or(defaults.epsilon),
            t_ref: self.t_ref.unwrap_or(defaults.t_ref),
            tau_in: self.tau_in.unwrap_or(defaults.tau_in),
            sigma_t: self.sigma_t.unwrap_or(defaults.sigma_t),
            penalty: match self.penalty.unwrap_or(PenaltyArg::Quadratic) {
                PenaltyArg::Quadratic => Penalty::Quadratic,
                PenaltyArg::ThreeHalves => Penalty::ThreeHalves,
            },
            t_max_sentinel: self
                .t_max
                .unwrap_or(10.0 * self.t_ref.unwrap_or(defaults.t_ref)),
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            epochs: self.epochs.unwrap_or(defaults.epochs),
            rng_seed: self.seed.unwrap_or(defaults.rng_seed),
        };
        let init = match self.init.unwrap_or(InitArg::Scaled) {
            InitArg::Scaled => {
                let mut c = self.init_c.clone().unwrap_or_else(|| vec![4.0]);
                if let Some(c_out) = self.init_c_out {
                    if c.len() == 1 {
                        c = vec![c[0]; arch.len() - 1];
                    }
                    *c.last_mut().unwrap() = c_out;
                }
                InitSpec::ScaledFanIn {
                    c,
                    v_th: 1.0,
                    tau_in: hyper.tau_in,
                }
            }
            InitArg::Uniform => {
                let mean = self.init_mean.ok_or(SnnError::InvalidParameter {
                    what: "init-mean",
                    problem: "required when init = uniform".to_string(),
                })?;
                InitSpec::Uniform {
                    mean,
                    std: self.init_std.unwrap_or(mean.abs()),
                }
            }
        };
        let train_variation = VariationSpec {
            sigma_vth: self.train_sigma_vth.unwrap_or(0.0),
            sigma_tau: self.train_sigma_tau.unwrap_or(0.0),
            mode: self.train_variation.unwrap_or(VariationArg::None).into(),
            rng_seed: self.train_variation_seed.unwrap_or(hyper.rng_seed),
        };
        let test_variation = VariationSpec {
            sigma_vth: self.test_sigma_vth.unwrap_or(0.0),
            sigma_tau: self.test_sigma_tau.unwrap_or(0.0),
            mode: self.test_variation.unwrap_or(VariationArg::None).into(),
            rng_seed: self.test_variation_seed.unwrap_or(hyper.rng_seed),
        };
        Ok(RunConfig {
            arch,
            model,
            circuit: CircuitParams {
                v_pulse_pos: pos,
                v_pulse_neg: neg,
            },
            hyper,
            init,
            train_variation,
            test_variation,
            eval_every: self.eval_every.unwrap_or(1),
            eval_repetitions: self.eval_repetitions.unwrap_or(10),
            patience: self.patience.unwrap_or(20),
            unclamped_jitter: self.unclamped_jitter.unwrap_or(false),
            quiet: self.quiet.unwrap_or(false),
        })
    }

    pub fn shrink_inputs(&self) -> bool {
        self.shrink.unwrap_or(false)
    }

    fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| {
            std::env::var_os("TTFS_DATA_DIR")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("."))
        })
    }

    pub fn train_paths(&self) -> (PathBuf, PathBuf) {
        let dir = self.data_dir();
        (
            self.train_images
                .clone()
                .unwrap_or_else(|| dir.join("train-images-idx3-ubyte")),
            self.train_labels
                .clone()
                .unwrap_or_else(|| dir.join("train-labels-idx1-ubyte")),
        )
    }

    pub fn test_paths(&self) -> (PathBuf, PathBuf) {
        let dir = self.data_dir();
        (
            self.test_images
                .clone()
                .unwrap_or_else(|| dir.join("t10k-images-idx3-ubyte")),
            self.test_labels
                .clone()
                .unwrap_or_else(|| dir.join("t10k-labels-idx1-ubyte")),
        )
    }
}

fn config_err(line: usize, problem: impl Into<String>) -> SnnError {
    SnnError::Config {
        line,
        problem: problem.into(),
    }
}

fn parse_as<T: FromStr>(value: &str, line: usize, what: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| config_err(line, format!("cannot parse '{value}' as {what}")))
}

fn parse_enum<T: FromStr<Err = SnnError>>(value: &str, line: usize) -> Result<T> {
    value.parse::<T>().map_err(|e| config_err(line, e.to_string()))
}

fn parse_bool(value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config_err(line, format!("cannot parse '{value}' as bool"))),
    }
}

/// Parse a `key = value` config file. Keys are the command-line flag names;
/// `#` starts a comment.
pub fn load_config_file(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path)?;
    let mut s = Settings::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = raw.split('#').next().unwrap_or("").trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, value) = stripped
            .split_once('=')
            .ok_or_else(|| config_err(line, "expected 'key = value'"))?;
        let written = key.trim();
        let key = written.replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "arch" => s.arch = Some(value.to_string()),
            "model" => s.model = Some(parse_enum(value, line)?),
            "vpulse_pos" => s.vpulse_pos = Some(parse_as(value, line, "a number")?),
            "vpulse_neg" => s.vpulse_neg = Some(parse_as(value, line, "a number")?),
            "eta" => s.eta = Some(parse_as(value, line, "a number")?),
            "gamma" => s.gamma = Some(parse_as(value, line, "a number")?),
            "epsilon" => s.epsilon = Some(parse_as(value, line, "a number")?),
            "t_ref" => s.t_ref = Some(parse_as(value, line, "a number")?),
            "tau_in" => s.tau_in = Some(parse_as(value, line, "a number")?),
            "sigma_t" => s.sigma_t = Some(parse_as(value, line, "a number")?),
            "penalty" => s.penalty = Some(parse_enum(value, line)?),
            "t_max" => s.t_max = Some(parse_as(value, line, "a number")?),
            "batch_size" => s.batch_size = Some(parse_as(value, line, "an integer")?),
            "epochs" => s.epochs = Some(parse_as(value, line, "an integer")?),
            "seed" => s.seed = Some(parse_as(value, line, "an integer")?),
            "init" => s.init = Some(parse_enum(value, line)?),
            "init_c" => {
                s.init_c = Some(
                    value
                        .split(',')
                        .map(|v| parse_as(v.trim(), line, "a number"))
                        .collect::<Result<Vec<f64>>>()?,
                )
            }
            "init_c_out" => s.init_c_out = Some(parse_as(value, line, "a number")?),
            "init_mean" => s.init_mean = Some(parse_as(value, line, "a number")?),
            "init_std" => s.init_std = Some(parse_as(value, line, "a number")?),
            "train_sigma_vth" => s.train_sigma_vth = Some(parse_as(value, line, "a number")?),
            "train_sigma_tau" => s.train_sigma_tau = Some(parse_as(value, line, "a number")?),
            "train_variation" => s.train_variation = Some(parse_enum(value, line)?),
            "train_variation_seed" => {
                s.train_variation_seed = Some(parse_as(value, line, "an integer")?)
            }
            "test_sigma_vth" => s.test_sigma_vth = Some(parse_as(value, line, "a number")?),
            "test_sigma_tau" => s.test_sigma_tau = Some(parse_as(value, line, "a number")?),
            "test_variation" => s.test_variation = Some(parse_enum(value, line)?),
            "test_variation_seed" => {
                s.test_variation_seed = Some(parse_as(value, line, "an integer")?)
            }
            "eval_every" => s.eval_every = Some(parse_as(value, line, "an integer")?),
            "eval_repetitions" => s.eval_repetitions = Some(parse_as(value, line, "an integer")?),
            "patience" => s.patience = Some(parse_as(value, line, "an integer")?),
            "unclamped_jitter" => s.unclamped_jitter = Some(parse_bool(value, line)?),
            "quiet" => s.quiet = Some(parse_bool(value, line)?),
            "shrink" => s.shrink = Some(parse_bool(value, line)?),
            "data_dir" => s.data_dir = Some(PathBuf::from(value)),
            "train_images" => s.train_images = Some(PathBuf::from(value)),
            "train_labels" => s.train_labels = Some(PathBuf::from(value)),
            "test_images" => s.test_images = Some(PathBuf::from(value)),
            "test_labels" => s.test_labels = Some(PathBuf::from(value)),
            "limit_train" => s.limit_train = Some(parse_as(value, line, "an integer")?),
            "limit_test" => s.limit_test = Some(parse_as(value, line, "an integer")?),
            _ => return Err(SnnError::ConfigUnknownKey(written.to_string())),
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_to_standard_run() {
        let config = Settings::default().run_config().unwrap();
        assert_eq!(config.arch, vec![784, 800, 10]);
        assert_eq!(config.model, NeuronModel::Linear);
        assert_eq!(config.hyper.eta, 1500.0);
        assert_eq!(config.hyper.t_ref, 21.0);
        assert_eq!(config.patience, 20);
        assert_eq!(config.train_variation.mode, VariationMode::None);
    }

    #[test]
    fn flags_override_config_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# comment\n\
             arch = 2-3-2\n\
             eta = 10  # trailing comment\n\
             penalty = three-halves\n\
             shrink = true\n",
        )
        .unwrap();
        let file = load_config_file(&path).unwrap();
        let cli = Settings {
            eta: Some(99.0),
            ..Settings::default()
        };
        let merged = cli.on_top_of(file);
        let config = merged.run_config().unwrap();
        assert_eq!(config.arch, vec![2, 3, 2]);
        assert_eq!(config.hyper.eta, 99.0);
        assert_eq!(config.hyper.penalty, Penalty::ThreeHalves);
        assert!(merged.shrink_inputs());
    }

    #[test]
    fn config_file_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");

        std::fs::write(&path, "eta = 10\nbogus-key = 1\n").unwrap();
        match load_config_file(&path) {
            Err(SnnError::ConfigUnknownKey(k)) => assert_eq!(k, "bogus-key"),
            other => panic!("expected unknown key, got {other:?}"),
        }

        std::fs::write(&path, "\neta = fast\n").unwrap();
        match load_config_file(&path) {
            Err(SnnError::Config { line: 2, .. }) => {}
            other => panic!("expected line-2 error, got {other:?}"),
        }

        std::fs::write(&path, "just words\n").unwrap();
        assert!(matches!(
            load_config_file(&path),
            Err(SnnError::Config { line: 1, .. })
        ));
    }

    #[test]
    fn mirrored_rail_default_and_validation() {
        let s = Settings {
            vpulse_pos: Some(64.0),
            ..Settings::default()
        };
        let config = s.run_config().unwrap();
        assert_eq!(config.circuit.v_pulse_neg, -64.0);

        let bad = Settings {
            vpulse_neg: Some(3.0),
            ..Settings::default()
        };
        assert!(matches!(
            bad.run_config(),
            Err(SnnError::InvalidParameter { .. })
        ));
    }

    #[test]
    fn uniform_init_requires_mean() {
        let s = Settings {
            init: Some(InitArg::Uniform),
            ..Settings::default()
        };
        assert!(s.run_config().is_err());
        let ok = Settings {
            init: Some(InitArg::Uniform),
            init_mean: Some(0.2),
            ..Settings::default()
        };
        assert!(matches!(
            ok.run_config().unwrap().init,
            InitSpec::Uniform { mean, std } if mean == 0.2 && std == 0.2
        ));
    }

    #[test]
    fn data_paths_default_to_standard_names() {
        let s = Settings {
            data_dir: Some(PathBuf::from("/data")),
            ..Settings::default()
        };
        let (ti, tl) = s.train_paths();
        assert_eq!(ti, PathBuf::from("/data/train-images-idx3-ubyte"));
        assert_eq!(tl, PathBuf::from("/data/train-labels-idx1-ubyte"));
        let (ei, el) = s.test_paths();
        assert_eq!(ei, PathBuf::from("/data/t10k-images-idx3-ubyte"));
        assert_eq!(el, PathBuf::from("/data/t10k-labels-idx1-ubyte"));
    }
}
