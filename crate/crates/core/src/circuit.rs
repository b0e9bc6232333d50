//! The crossbar circuit neuron: drive saturates toward the pulse rails.
//!
//! Between arrivals the membrane obeys dv/dt = A - Bv, where A is the summed
//! weight drive and B >= 0 collects the saturation factors |w| / |V_rail|.
//! Each segment therefore relaxes exponentially toward A/B, and both the
//! forward crossing and the backward chain have closed forms. As the rails
//! grow, B -> 0 and everything converges to the linear neuron; the helpers
//! below are written to stay accurate through that limit instead of
//! branching on it.

use crate::network::{CircuitParams, CircuitSegments, Matrix, Network};
use crate::oracle::ArrivalEvent;
use std::io::{self, Write};

/// Below this decay sum a segment is treated as exactly linear when solving
/// for the crossing time. The closed forms here are continuous across the
/// switch to well under any tolerance used in tests.
pub const B_TOL: f64 = 1e-12;

/// (1 - e^-x)/x for x >= 0, the mean decay over a segment. Accurate for all
/// magnitudes; equals 1 at x = 0.
fn phi1(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// (1 - (1+x)e^-x)/x^2 for x >= 0, the curvature weight in the terminal
/// potential's weight sensitivity. The direct expression loses all digits
/// near zero, so small arguments use the series
/// 1/2 - x/3 + x^2/8 - x^3/30 + x^4/144.
fn seg_h(x: f64) -> f64 {
    if x < 1e-2 {
        0.5 - x / 3.0 + x * x / 8.0 - x * x * x / 30.0 + x * x * x * x / 144.0
    } else {
        (1.0 - (1.0 + x) * (-x).exp()) / (x * x)
    }
}

/// Membrane at the end of a width-`dt` segment with cumulative drive
/// `slope_sum` (A) and decay `decay_sum` (B), starting from `v_start`:
/// A/B - (A/B - v_start) e^(-B dt), evaluated as
/// v_start + (A - B v_start) dt phi1(B dt) so B = 0 needs no special case.
pub fn segment_terminal(v_start: f64, slope_sum: f64, decay_sum: f64, dt: f64) -> f64 {
    v_start + (slope_sum - decay_sum * v_start) * dt * phi1(decay_sum * dt)
}

/// First-spike time of a single circuit neuron given sorted arrivals.
/// Returns the spike time and the per-segment record the backward pass
/// consumes; `None` when every segment's equilibrium stays below threshold.
pub fn fire_time_circuit(
    events: &[ArrivalEvent],
    v_th: f64,
    rails: CircuitParams,
) -> Option<(f64, CircuitSegments)> {
    debug_assert!(events.windows(2).all(|w| (w[0].time, w[0].source) <= (w[1].time, w[1].source)));
    let arrivals: Vec<(f64, usize)> = events.iter().enumerate().map(|(k, e)| (e.time, k)).collect();
    scan_circuit(&arrivals, |k| events[k].weight, v_th, rails)
}

/// Segment walk for the circuit neuron. Unlike the linear scan, simultaneous
/// arrivals keep their own zero-width segments: the sorted order defines the
/// segment indexing the backward pass relies on, and a zero width makes the
/// extra segment a no-op in every formula.
pub(crate) fn scan_circuit(
    arrivals: &[(f64, usize)],
    weight_of: impl Fn(usize) -> f64,
    v_th: f64,
    rails: CircuitParams,
) -> Option<(f64, CircuitSegments)> {
    debug_assert!(rails.v_pulse_pos > 0.0 && rails.v_pulse_neg < 0.0);
    let mut segs = CircuitSegments {
        slope_sums: Vec::new(),
        decay_sums: Vec::new(),
        widths: Vec::new(),
        terminals: Vec::new(),
    };
    let mut a = 0.0;
    let mut b = 0.0;
    let mut v = 0.0;
    for (k, &(t_k, key)) in arrivals.iter().enumerate() {
        let w = weight_of(key);
        a += w;
        b += w * rails.inv_rail(w);
        let t_next = arrivals.get(k + 1).map(|&(t, _)| t);

        let candidate = if v >= v_th {
            // Rounding in the previous segment put its boundary crossing a
            // hair past the boundary; the spike is at this arrival.
            Some(t_k)
        } else if b > B_TOL {
            // Exponential approach to A/B; crosses iff the equilibrium lies
            // strictly above threshold.
            if a > b * v_th {
                let u = (v_th - v) / (a - b * v);
                Some(t_k - (-b * u).ln_1p() / b)
            } else {
                None
            }
        } else if a > 0.0 {
            Some(t_k + (v_th - v) / a)
        } else {
            None
        };

        if let Some(t_star) = candidate {
            let t_star = t_star.max(t_k);
            if t_next.is_none_or(|tn| t_star < tn) {
                segs.slope_sums.push(a);
                segs.decay_sums.push(b);
                segs.widths.push(t_star - t_k);
                segs.terminals.push(v_th);
                return Some((t_star, segs));
            }
        }

        let tn = t_next?;
        let dt = tn - t_k;
        v = segment_terminal(v, a, b, dt);
        segs.slope_sums.push(a);
        segs.decay_sums.push(b);
        segs.widths.push(dt);
        segs.terminals.push(v);
    }
    None
}

/// Backward pass for one fired circuit neuron.
///
/// The spike time moves with the terminal potential through
/// dt*/dv = -1/(eps + A_G - B_G v_th); terminal sensitivities chain across
/// segments through the decay factors e^(-B dt). Per arrival p the weight
/// sensitivity splits into a rail-independent part and a part multiplied by
/// 1/V_rail, so a single reverse sweep with two suffix accumulators covers
/// every causal weight in O(G).
#[allow(clippy::too_many_arguments)]
pub(crate) fn circuit_neuron_backward(
    segs: &CircuitSegments,
    causal: &[usize],
    weights_row: &[f64],
    rails: CircuitParams,
    epsilon: f64,
    delta_i: f64,
    grad_row: &mut [f64],
    delta_prev: &mut [f64],
) {
    let g = segs.num_segments();
    debug_assert_eq!(causal.len(), g);
    let a = &segs.slope_sums;
    let b = &segs.decay_sums;
    let dt = &segs.widths;
    let vbar = &segs.terminals;
    let v_before = |k: usize| if k == 0 { 0.0 } else { vbar[k - 1] };

    let v_th = vbar[g - 1];
    let dtdv = -1.0 / (epsilon + a[g - 1] - b[g - 1] * v_th);

    let decays: Vec<f64> = (0..g).map(|k| (-b[k] * dt[k]).exp()).collect();

    // prod = product of decay factors of segments strictly after p.
    let mut prod = 1.0;
    let mut plain = 0.0; // suffix sum of rail-independent weight terms
    let mut railed = 0.0; // suffix sum of terms multiplied by 1/V_rail
    for p in (0..g).rev() {
        let x = b[p] * dt[p];
        plain += dt[p] * phi1(x) * prod;
        railed += (-a[p] * dt[p] * dt[p] * seg_h(x) - v_before(p) * dt[p] * decays[p]) * prod;

        let j = causal[p];
        let dv_dw = plain + rails.inv_rail(weights_row[j]) * railed;
        grad_row[j] += dtdv * dv_dw * delta_i;

        // Shifting arrival p widens segment p-1 and narrows segment p.
        let inflow_prev = if p == 0 {
            0.0
        } else {
            (a[p - 1] - b[p - 1] * v_before(p - 1)) * decays[p - 1]
        };
        let dv_dt = decays[p] * (inflow_prev - (a[p] - b[p] * v_before(p)));
        delta_prev[j] += dtdv * dv_dt * prod * delta_i;

        prod *= decays[p];
    }
}

/// Split signed weights into the nonnegative conductance pair programmed on
/// the crossbar: sigma+ drives from the positive rail, sigma- from the
/// negative one, and sigma+ V+ + sigma- V- reconstructs the weight.
pub fn export_conductances(net: &Network) -> Vec<(Matrix, Matrix)> {
    net.layers
        .iter()
        .map(|layer| {
            let w = &layer.weights;
            let pos = Matrix::from_fn(w.rows(), w.cols(), |i, j| {
                if w[(i, j)] >= 0.0 {
                    w[(i, j)] / net.circuit.v_pulse_pos
                } else {
                    0.0
                }
            });
            let neg = Matrix::from_fn(w.rows(), w.cols(), |i, j| {
                if w[(i, j)] < 0.0 {
                    w[(i, j)] / net.circuit.v_pulse_neg
                } else {
                    0.0
                }
            });
            (pos, neg)
        })
        .collect()
}

/// Plain-text conductance table, one row per connection.
pub fn write_conductance_table(net: &Network, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "# conductance pairs per connection")?;
    writeln!(
        out,
        "# v_pulse_pos = {} v_pulse_neg = {}",
        net.circuit.v_pulse_pos, net.circuit.v_pulse_neg
    )?;
    writeln!(out, "# layer i j sigma_pos sigma_neg")?;
    for (l, (pos, neg)) in export_conductances(net).iter().enumerate() {
        for i in 0..pos.rows() {
            for j in 0..pos.cols() {
                writeln!(out, "{} {} {} {} {}", l, i, j, pos[(i, j)], neg[(i, j)])?;
            }
        }
    }
    Ok(())
}
