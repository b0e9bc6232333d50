//! Network parameters, spike containers, and the per-sample forward trace.
//!
//! Time is in milliseconds throughout. A spike is a single event per neuron:
//! the first (and only) threshold crossing. `None` means the neuron never
//! fired within the run.

use crate::error::{Result, SnnError};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::ops::{Index, IndexMut};

/// Dense row-major matrix of `f64`. Rows index postsynaptic neurons, columns
/// presynaptic ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c));
        Matrix {
            rows: r,
            cols: c,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Which membrane dynamics a network's neurons follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuronModel {
    /// dv/dt adds a constant `w` per active input: piecewise-linear membrane.
    Linear,
    /// dv/dt adds `w * (1 - v / V_pulse)` per active input: the crossbar
    /// read-out without buffering op-amps, where charging saturates toward
    /// the pulse rail.
    Circuit,
}

/// Pulse rails of the circuit model. `v_pulse_neg` is the negative rail and
/// must be negative; a weight of either sign then saturates toward the rail
/// matching its sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitParams {
    pub v_pulse_pos: f64,
    pub v_pulse_neg: f64,
}

impl CircuitParams {
    pub fn symmetric(v: f64) -> Self {
        CircuitParams {
            v_pulse_pos: v,
            v_pulse_neg: -v,
        }
    }

    /// 1 / V_pulse for the rail selected by the weight's sign. Zero weights
    /// use the positive rail (their contribution vanishes either way).
    pub fn inv_rail(&self, weight: f64) -> f64 {
        if weight >= 0.0 {
            1.0 / self.v_pulse_pos
        } else {
            1.0 / self.v_pulse_neg
        }
    }
}

impl Default for CircuitParams {
    fn default() -> Self {
        CircuitParams::symmetric(128.0)
    }
}

/// One trainable layer: `weights[(i, j)]` connects presynaptic `j` to
/// postsynaptic `i`. `delays` is `None` when every connection has zero delay,
/// which is the common case and skips per-neuron arrival sorting.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub thresholds: Vec<f64>,
    pub delays: Option<Matrix>,
}

impl Layer {
    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn delay(&self, i: usize, j: usize) -> f64 {
        self.delays.as_ref().map_or(0.0, |d| d[(i, j)])
    }
}

/// A feedforward spiking network. `layers[0]` maps the input layer to the
/// first hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input_size: usize,
    pub layers: Vec<Layer>,
    pub model: NeuronModel,
    pub circuit: CircuitParams,
}

impl Network {
    /// Layer sizes from input to output, e.g. `[784, 800, 10]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_size];
        sizes.extend(self.layers.iter().map(|l| l.fan_out()));
        sizes
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(self.input_size, Layer::fan_out)
    }

    pub fn num_weight_layers(&self) -> usize {
        self.layers.len()
    }
}

/// How initial weights are drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    /// Gaussian with mean = c * V_th / (fan_in * tau_in) and std equal to the
    /// mean, so a layer's summed drive crosses threshold within a few input
    /// intervals on average. One entry in `c` applies to every layer; several
    /// give each weight layer its own scale. Staggered scales matter when a
    /// time penalty is active: the last layer should start with its spikes
    /// later than the penalty target, because that side is the stable one (the
    /// penalty then strengthens weights, and spike times approach the target
    /// decelerating). Started early, the penalty weakens weights, and the
    /// spike time's hyperbolic response accelerates each step until the
    /// neurons cross into never firing, where the gradient is zero and
    /// training is stuck.
    ScaledFanIn {
        c: Vec<f64>,
        v_th: f64,
        tau_in: f64,
    },
    /// Explicit mean and std applied to every layer.
    Uniform { mean: f64, std: f64 },
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::ScaledFanIn {
            c: vec![4.0],
            v_th: 1.0,
            tau_in: 5.0,
        }
    }
}

/// Build a network with Gaussian weights, unit thresholds, and zero delays.
/// Deterministic for a fixed seed: weights are drawn layer by layer in
/// row-major order.
pub fn init_network(
    layer_sizes: &[usize],
    model: NeuronModel,
    circuit: CircuitParams,
    init: InitSpec,
    rng: &mut impl Rng,
) -> Result<Network> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(SnnError::BadArchitecture(layer_sizes.to_vec()));
    }
    if let InitSpec::ScaledFanIn { c, .. } = &init {
        let ok = c.len() == 1 || c.len() == layer_sizes.len() - 1;
        if !ok {
            return Err(SnnError::InvalidParameter {
                what: "init scale",
                problem: format!(
                    "{} entries for {} weight layers (give one, or one per layer)",
                    c.len(),
                    layer_sizes.len() - 1
                ),
            });
        }
    }
    let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
    for (li, w) in layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let (mean, std) = match &init {
            InitSpec::ScaledFanIn { c, v_th, tau_in } => {
                let c = if c.len() == 1 { c[0] } else { c[li] };
                let m = c * v_th / (fan_in as f64 * tau_in);
                (m, m)
            }
            InitSpec::Uniform { mean, std } => (*mean, *std),
        };
        let normal = Normal::new(mean, std).map_err(|_| SnnError::NonFiniteParameter {
            what: "init std",
            value: std,
        })?;
        let weights = Matrix::from_fn(fan_out, fan_in, |_, _| normal.sample(rng));
        layers.push(Layer {
            weights,
            thresholds: vec![1.0; fan_out],
            delays: None,
        });
    }
    Ok(Network {
        input_size: layer_sizes[0],
        layers,
        model,
        circuit,
    })
}

/// First-spike times for one layer. `None` marks a neuron that never fired.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeVector {
    pub times: Vec<Option<f64>>,
}

impl SpikeVector {
    pub fn new(times: Vec<Option<f64>>) -> Self {
        SpikeVector { times }
    }

    pub fn all_fired(times: &[f64]) -> Self {
        SpikeVector {
            times: times.iter().map(|&t| Some(t)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn fired_count(&self) -> usize {
        self.times.iter().filter(|t| t.is_some()).count()
    }

    /// Replace absent spikes with `t_max` so downstream dense math (softmax,
    /// penalty, argmin) sees a well-defined late time.
    pub fn sentinelize(&self, t_max: f64) -> Vec<f64> {
        self.times.iter().map(|t| t.unwrap_or(t_max)).collect()
    }
}

/// Per-segment cumulative quantities of a fired circuit neuron, indexed by
/// segment `k = 0..G` in presynaptic arrival order. Segment `k` starts at the
/// `k`-th accepted arrival; `slope_sum` is the summed weight drive, and
/// `decay_sum` the summed weight-over-rail factor multiplying `-v`.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitSegments {
    pub slope_sums: Vec<f64>,
    pub decay_sums: Vec<f64>,
    /// Segment widths; the last entry is the time from the final accepted
    /// arrival to the spike itself.
    pub widths: Vec<f64>,
    /// Membrane at each segment's end; the last entry equals the threshold.
    pub terminals: Vec<f64>,
}

impl CircuitSegments {
    pub fn num_segments(&self) -> usize {
        self.slope_sums.len()
    }
}

/// Everything the backward pass needs about one neuron's forward evaluation.
///
/// `causal` lists the presynaptic indices whose spikes arrived before this
/// neuron fired, sorted by arrival time (ties by index); `causal_arrivals`
/// holds the matching post-delay arrival times. Both are empty when the
/// neuron did not fire.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronTrace {
    pub spike: Option<f64>,
    pub causal: Vec<usize>,
    pub causal_arrivals: Vec<f64>,
    pub segments: Option<CircuitSegments>,
}

impl NeuronTrace {
    pub fn silent() -> Self {
        NeuronTrace {
            spike: None,
            causal: Vec::new(),
            causal_arrivals: Vec::new(),
            segments: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub neurons: Vec<NeuronTrace>,
}

impl LayerTrace {
    pub fn spikes(&self) -> SpikeVector {
        SpikeVector::new(self.neurons.iter().map(|n| n.spike).collect())
    }
}

/// Full record of a forward pass, layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: SpikeVector,
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn output(&self) -> SpikeVector {
        self.layers
            .last()
            .map(LayerTrace::spikes)
            .unwrap_or_else(|| self.input.clone())
    }

    /// Spike times feeding weight layer `l` (0 = the raw input).
    pub fn layer_input(&self, l: usize) -> SpikeVector {
        if l == 0 {
            self.input.clone()
        } else {
            self.layers[l - 1].spikes()
        }
    }
}

/// Exponent of the spike-time regularizer pulling outputs toward `t_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    /// (t - t_ref)^2, gradient 2(t - t_ref).
    Quadratic,
    /// |t - t_ref|^(3/2), gradient (3/2) sign(x) |x|^(1/2); gentler far from
    /// the target, which keeps large-rail circuit runs from over-correcting.
    ThreeHalves,
}

/// Training and inference knobs. Times are milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    /// Learning rate.
    pub eta: f64,
    /// Weight of the spike-time penalty (the cost adds gamma/2 * penalty).
    pub gamma: f64,
    /// Added to every slope-sum denominator in the backward pass so gradients
    /// stay bounded when the net drive at threshold is small.
    pub epsilon: f64,
    /// Target output spike time of the penalty.
    pub t_ref: f64,
    /// Input encoding interval: intensity x in (0, 1] maps to tau_in * (1 - x).
    pub tau_in: f64,
    /// Std of Gaussian jitter added to input spike times during training.
    pub sigma_t: f64,
    pub penalty: Penalty,
    /// Stand-in time for neurons that never fire, used by the loss and the
    /// classifier. Must exceed any plausible real spike time.
    pub t_max_sentinel: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            eta: 1500.0,
            gamma: 100.0,
            epsilon: 4.0,
            t_ref: 21.0,
            tau_in: 5.0,
            sigma_t: 0.0,
            penalty: Penalty::Quadratic,
            t_max_sentinel: 210.0,
            batch_size: 32,
            epochs: 100,
            rng_seed: 1,
        }
    }
}

impl Hyperparameters {
    /// Reject values a run can never recover from. Zero eta, epsilon, and
    /// gamma are legitimate (frozen weights, unstabilized gradients, no time
    /// penalty).
    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, f64, f64); 7] = [
            ("eta", self.eta, 0.0),
            ("gamma", self.gamma, 0.0),
            ("epsilon", self.epsilon, 0.0),
            ("t_ref", self.t_ref, 0.0),
            ("tau_in", self.tau_in, f64::MIN_POSITIVE),
            ("sigma_t", self.sigma_t, 0.0),
            ("t_max_sentinel", self.t_max_sentinel, f64::MIN_POSITIVE),
        ];
        for (what, value, least) in checks {
            if !value.is_finite() {
                return Err(SnnError::NonFiniteParameter { what, value });
            }
            if value < least {
                let kind = if least == 0.0 { "negative" } else { "not positive" };
                return Err(SnnError::InvalidParameter {
                    what,
                    problem: format!("{value} is {kind}"),
                });
            }
        }
        Ok(())
    }
}

/// Cost gradients with the same shapes as the network's weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.fan_out(), l.fan_in()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in &mut self.layers {
            for x in m.as_mut_slice() {
                *x *= s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers.iter().fold(0.0, |m, l| m.max(l.max_abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }
}
