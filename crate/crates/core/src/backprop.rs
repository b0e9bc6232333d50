//! Backward pass over a forward trace.
//!
//! Spike times are differentiable in the weights through the threshold
//! condition, so errors flow backward along the causal sets recorded in the
//! trace. A neuron that never fired has no spike time to differentiate: its
//! weights get zero gradient and nothing propagates through it.

use crate::circuit::circuit_neuron_backward;
use crate::network::{ForwardTrace, Gradients, Hyperparameters, Network};

/// Cost gradients for every weight, given dC/dt of the output spikes.
///
/// For a fired linear neuron i with causal set G and denominator
/// D = eps + sum_{j in G} w_ij:
///   dt_i/dw_ij = -(t_i - t_arr_j) / D,
///   dt_i/dt_j  =  w_ij / D.
/// Entries of `output_delta` for silent outputs are ignored. Circuit neurons
/// use the per-segment chain recorded in their trace.
pub fn backprop(
    trace: &ForwardTrace,
    net: &Network,
    output_delta: &[f64],
    hyper: &Hyperparameters,
) -> Gradients {
    assert_eq!(output_delta.len(), net.output_size());
    assert_eq!(trace.layers.len(), net.layers.len());
    let mut grads = Gradients::zeros_like(net);
    let mut delta = output_delta.to_vec();

    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let mut delta_prev = vec![0.0; layer.fan_in()];
        for (i, nt) in trace.layers[l].neurons.iter().enumerate() {
            let Some(t_i) = nt.spike else { continue };
            let d_i = delta[i];
            if d_i == 0.0 {
                continue;
            }
            let row = layer.weights.row(i);
            match &nt.segments {
                None => {
                    let denom =
                        hyper.epsilon + nt.causal.iter().map(|&j| row[j]).sum::<f64>();
                    let grad_row = grads.layers[l].row_mut(i);
                    for (&j, &t_arr) in nt.causal.iter().zip(&nt.causal_arrivals) {
                        grad_row[j] += -(t_i - t_arr) / denom * d_i;
                        delta_prev[j] += row[j] / denom * d_i;
                    }
                }
                Some(segs) => circuit_neuron_backward(
                    segs,
                    &nt.causal,
                    row,
                    net.circuit,
                    hyper.epsilon,
                    d_i,
                    grads.layers[l].row_mut(i),
                    &mut delta_prev,
                ),
            }
        }
        delta = delta_prev;
    }
    grads
}

/// Plain gradient descent: w <- w - eta * g.
pub fn sgd_step(net: &mut Network, grads: &Gradients, eta: f64) {
    assert_eq!(net.layers.len(), grads.layers.len());
    for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
        for (w, d) in layer.weights.as_mut_slice().iter_mut().zip(g.iter()) {
            *w -= eta * d;
        }
    }
}
