//! Event-driven spiking neural networks with time-to-first-spike coding.
//!
//! Information lives in when each neuron first fires, not how often. The
//! forward pass walks presynaptic arrivals and solves each threshold
//! crossing in closed form; the backward pass differentiates those crossing
//! times analytically. Two membrane models are supported: an idealized
//! linear integrator and a crossbar circuit whose drive saturates toward
//! its pulse rails, plus device-variation modeling on top of either.

pub mod backprop;
pub mod circuit;
pub mod dataset;
pub mod error;
pub mod forward;
pub mod io;
pub mod loss;
pub mod network;
pub mod oracle;
pub mod trainer;
pub mod variation;

pub use backprop::{backprop, sgd_step};
pub use circuit::{export_conductances, fire_time_circuit, segment_terminal, B_TOL};
pub use dataset::{encode, jitter, load_dataset, shrink, Dataset};
pub use error::{Result, SnnError};
pub use forward::{classify, fire_time_linear, forward};
pub use io::{load_model, load_realization, save_model, save_realization};
pub use loss::{cost, output_error, softmax_neg_time, LossBreakdown};
pub use network::{
    init_network, CircuitParams, CircuitSegments, ForwardTrace, Gradients, Hyperparameters,
    InitSpec, Layer, LayerTrace, Matrix, Network, NeuronModel, NeuronTrace, Penalty, SpikeVector,
};
pub use oracle::{
    fd_default_step, fd_gradient, integrate_membrane, sort_events, ArrivalEvent, FdResult,
    IntegrationResult,
};
pub use trainer::{
    dump_raster, evaluate, evaluate_fixed, load_resume_state, parse_architecture,
    save_resume_state, sweep, sweep_eval_only, train, write_sweep_table, EncodedDataset,
    EvalSummary, MetricsRow, ResumeState, RunConfig, SweepAxis, SweepRow, TrainOutcome,
    METRICS_HEADER,
};
pub use variation::{
    sample_realization, Phase, VariationMode, VariationRealization, VariationSpec,
};
