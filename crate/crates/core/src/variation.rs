//! Device-variation modeling: per-neuron threshold spread and per-connection
//! delay spread, drawn once per "realization" of a fabricated network.
//!
//! A realization stores absolute effective values. Applying it swaps the
//! network's nominal thresholds and delays for the realized ones without
//! touching the weights, so the same trained weights can be evaluated across
//! many simulated devices.

use crate::network::{Matrix, Network};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// How variation participates in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariationMode {
    /// No variation: nominal parameters everywhere.
    None,
    /// Fresh draw per training mini-batch; at test time, an independent draw
    /// per evaluation repetition. Models training that has only statistical
    /// knowledge of the device spread.
    SampledPerRealization,
    /// One frozen draw used identically during training and test. Models
    /// training in the loop with one measured device.
    KnownFixed,
}

/// Spread parameters plus the seed that makes draws reproducible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationSpec {
    /// Std of the Gaussian around each nominal threshold. Draws are clipped
    /// at zero from below; a zero threshold fires at the first excitatory
    /// arrival.
    pub sigma_vth: f64,
    /// Std of the Gaussian around each nominal connection delay. Draws may
    /// be negative: only delay differences are observable, and a common
    /// offset is absorbed by shifting the output times.
    pub sigma_tau: f64,
    pub mode: VariationMode,
    pub rng_seed: u64,
}

impl VariationSpec {
    pub fn none() -> Self {
        VariationSpec {
            sigma_vth: 0.0,
            sigma_tau: 0.0,
            mode: VariationMode::None,
            rng_seed: 0,
        }
    }
}

/// Which side of a run is asking for a realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Test,
}

/// Absolute effective thresholds and delays for one simulated device.
/// `None` in a field means "use the network's nominal values", which also
/// keeps the unvaried code path bit-identical to a run without variation.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationRealization {
    pub thresholds: Option<Vec<Vec<f64>>>,
    pub delays: Option<Vec<Matrix>>,
}

impl VariationRealization {
    pub fn nominal() -> Self {
        VariationRealization {
            thresholds: None,
            delays: None,
        }
    }

    pub fn is_nominal(&self) -> bool {
        self.thresholds.is_none() && self.delays.is_none()
    }
}

/// Draw one realization around the network's nominal parameters.
///
/// Draw order is fixed (thresholds layer by layer in neuron order, then
/// delays layer by layer in row-major order) so a seeded RNG reproduces the
/// same device exactly.
pub fn sample_realization(
    spec: &VariationSpec,
    net: &Network,
    rng: &mut impl Rng,
) -> VariationRealization {
    let thresholds = (spec.sigma_vth > 0.0).then(|| {
        let dist = Normal::new(0.0, spec.sigma_vth).expect("sigma_vth must be finite");
        net.layers
            .iter()
            .map(|layer| {
                layer
                    .thresholds
                    .iter()
                    .map(|&nominal| (nominal + dist.sample(rng)).max(0.0))
                    .collect()
            })
            .collect()
    });
    let delays = (spec.sigma_tau > 0.0).then(|| {
        let dist = Normal::new(0.0, spec.sigma_tau).expect("sigma_tau must be finite");
        net.layers
            .iter()
            .map(|layer| {
                Matrix::from_fn(layer.fan_out(), layer.fan_in(), |i, j| {
                    layer.delay(i, j) + dist.sample(rng)
                })
            })
            .collect()
    });
    VariationRealization { thresholds, delays }
}

const STREAM_TRAIN: u64 = 1 << 56;
const STREAM_TEST: u64 = 2 << 56;
const STREAM_FIXED: u64 = 3 << 56;

impl VariationSpec {
    /// The realization a given phase sees for the given draw index (training
    /// batch counter, or evaluation repetition). Deterministic in
    /// (seed, mode, phase, index); `KnownFixed` ignores phase and index so
    /// train and test share one device.
    pub fn realize(&self, net: &Network, phase: Phase, index: u64) -> VariationRealization {
        if self.mode == VariationMode::None || (self.sigma_vth == 0.0 && self.sigma_tau == 0.0) {
            return VariationRealization::nominal();
        }
        let stream = match self.mode {
            VariationMode::None => unreachable!(),
            VariationMode::SampledPerRealization => match phase {
                Phase::Train => STREAM_TRAIN | index,
                Phase::Test => STREAM_TEST | index,
            },
            VariationMode::KnownFixed => STREAM_FIXED,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(stream);
        sample_realization(self, net, &mut rng)
    }
}
