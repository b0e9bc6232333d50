//! Event-driven forward pass.
//!
//! Between presynaptic arrivals the membrane obeys a fixed ODE, so each
//! neuron is evaluated by walking its sorted arrivals segment by segment and
//! solving for the first threshold crossing in closed form. No time grid is
//! involved; results are exact up to floating-point rounding.

use crate::circuit::scan_circuit;
use crate::error::{Result, SnnError};
use crate::network::{ForwardTrace, LayerTrace, Network, NeuronModel, NeuronTrace, SpikeVector};
use crate::oracle::ArrivalEvent;
use crate::variation::VariationRealization;

/// First-spike time of a single linear neuron.
///
/// `events` must be sorted by (time, source). The membrane rises with slope
/// equal to the summed weights of the arrivals seen so far; within the
/// segment following the k-th distinct arrival time the crossing candidate is
/// `(v_th + sum w_j t_j) / (sum w_j)`, accepted iff it falls inside the
/// segment's half-open window. Returns the spike time and the number of
/// leading events that are causal (arrived at or before the spike).
pub fn fire_time_linear(events: &[ArrivalEvent], v_th: f64) -> Option<(f64, usize)> {
    debug_assert!(events.windows(2).all(|w| (w[0].time, w[0].source) <= (w[1].time, w[1].source)));
    let arrivals: Vec<(f64, usize)> = events.iter().enumerate().map(|(k, e)| (e.time, k)).collect();
    scan_linear(&arrivals, |k| events[k].weight, v_th)
}

/// Segment walk shared by [`fire_time_linear`] and the network driver.
/// `arrivals` is sorted by (time, key); `weight_of` maps a key to its weight.
/// Arrivals sharing one time are merged into a single segment.
pub(crate) fn scan_linear(
    arrivals: &[(f64, usize)],
    weight_of: impl Fn(usize) -> f64,
    v_th: f64,
) -> Option<(f64, usize)> {
    let mut slope = 0.0;
    let mut weighted = 0.0;
    let mut k = 0;
    while k < arrivals.len() {
        let t_seg = arrivals[k].0;
        let mut g = k;
        while g < arrivals.len() && arrivals[g].0 == t_seg {
            let w = weight_of(arrivals[g].1);
            slope += w;
            weighted += w * t_seg;
            g += 1;
        }
        if slope > 0.0 {
            // v(t) = slope * t - weighted on this segment.
            let mut t_star = (v_th + weighted) / slope;
            if t_star < t_seg {
                // Rounding pushed a boundary crossing before the segment it
                // belongs to; the spike happens at the arrival instant.
                t_star = t_seg;
            }
            if arrivals.get(g).is_none_or(|&(t_next, _)| t_star < t_next) {
                return Some((t_star, g));
            }
        }
        k = g;
    }
    None
}

/// Predicted class: index of the earliest output spike, absent spikes ranked
/// at the sentinel time, ties broken toward the lowest index.
pub fn classify(trace: &ForwardTrace, t_max_sentinel: f64) -> usize {
    let times = trace.output().sentinelize(t_max_sentinel);
    let mut best = 0;
    for (i, &t) in times.iter().enumerate() {
        if t < times[best] {
            best = i;
        }
    }
    best
}

/// Run the network on one input, layer by layer, recording everything the
/// backward pass needs. `realization` (if any) swaps in per-device thresholds
/// and delays; weights always come from the network.
pub fn forward(
    net: &Network,
    input: &SpikeVector,
    realization: Option<&VariationRealization>,
) -> Result<ForwardTrace> {
    if input.len() != net.input_size {
        return Err(SnnError::InputSizeMismatch {
            got: input.len(),
            want: net.input_size,
        });
    }

    let mut layers = Vec::with_capacity(net.layers.len());
    let mut prev: Vec<Option<f64>> = input.times.clone();

    for (l, layer) in net.layers.iter().enumerate() {
        let fired: Vec<(f64, usize)> = prev
            .iter()
            .enumerate()
            .filter_map(|(j, t)| t.map(|t| (t, j)))
            .collect();

        let real_ths = realization.and_then(|r| r.thresholds.as_ref()).map(|t| &t[l]);
        let real_delays = realization.and_then(|r| r.delays.as_ref()).map(|d| &d[l]);
        // Realized delays are absolute and replace the nominal ones.
        let delays = real_delays.or(layer.delays.as_ref());

        // With no delays all neurons see the same arrival order; sort once.
        let shared: Option<Vec<(f64, usize)>> = if delays.is_none() {
            let mut s = fired.clone();
            s.sort_by(|a, b| a.partial_cmp(b).expect("spike times must not be NaN"));
            Some(s)
        } else {
            None
        };

        let mut neurons = Vec::with_capacity(layer.fan_out());
        let mut buf: Vec<(f64, usize)> = Vec::with_capacity(fired.len());
        for i in 0..layer.fan_out() {
            let v_th = real_ths.map_or(layer.thresholds[i], |t| t[i]);
            let arrivals: &[(f64, usize)] = match &shared {
                Some(s) => s,
                None => {
                    let d = delays.expect("per-neuron path implies delays");
                    buf.clear();
                    buf.extend(fired.iter().map(|&(t, j)| (t + d[(i, j)], j)));
                    buf.sort_by(|a, b| a.partial_cmp(b).expect("arrival times must not be NaN"));
                    &buf
                }
            };
            let row = layer.weights.row(i);
            let trace = match net.model {
                NeuronModel::Linear => match scan_linear(arrivals, |j| row[j], v_th) {
                    Some((t, g)) => NeuronTrace {
                        spike: Some(t),
                        causal: arrivals[..g].iter().map(|&(_, j)| j).collect(),
                        causal_arrivals: arrivals[..g].iter().map(|&(t, _)| t).collect(),
                        segments: None,
                    },
                    None => NeuronTrace::silent(),
                },
                NeuronModel::Circuit => match scan_circuit(arrivals, |j| row[j], v_th, net.circuit)
                {
                    Some((t, segments)) => {
                        let g = segments.num_segments();
                        NeuronTrace {
                            spike: Some(t),
                            causal: arrivals[..g].iter().map(|&(_, j)| j).collect(),
                            causal_arrivals: arrivals[..g].iter().map(|&(t, _)| t).collect(),
                            segments: Some(segments),
                        }
                    }
                    None => NeuronTrace::silent(),
                },
            };
            neurons.push(trace);
        }

        let lt = LayerTrace { neurons };
        prev = lt.spikes().times;
        layers.push(lt);
    }

    Ok(ForwardTrace {
        input: input.clone(),
        layers,
    })
}
