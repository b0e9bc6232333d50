//! Independent numerical checks: a fixed-step RK4 membrane integrator and a
//! central finite-difference gradient probe.
//!
//! Nothing here shares code with the event-driven forward or backward passes;
//! the point is to disagree loudly if those are wrong. The integrator is slow
//! and meant for tests, gradient audits, and membrane dumps only.

use crate::network::{CircuitParams, NeuronModel};

/// One presynaptic spike as seen by a single neuron: arrival time after any
/// delay, and the connecting weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalEvent {
    pub source: usize,
    pub time: f64,
    pub weight: f64,
}

impl ArrivalEvent {
    pub fn new(source: usize, time: f64, weight: f64) -> Self {
        ArrivalEvent {
            source,
            time,
            weight,
        }
    }
}

/// Sort events the way the membrane experiences them: by arrival time, ties
/// broken by presynaptic index so runs are reproducible.
pub fn sort_events(events: &mut [ArrivalEvent]) {
    events.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .expect("arrival times must not be NaN")
            .then(a.source.cmp(&b.source))
    });
}

/// Output of [`integrate_membrane`].
#[derive(Debug, Clone)]
pub struct IntegrationResult {
    /// First time the membrane reached the threshold, if it did before the
    /// horizon. Located by bisection to absolute precision 1e-10.
    pub crossing: Option<f64>,
    /// Sampled (t, v) pairs, one per integrator step, ending at the crossing
    /// or the horizon.
    pub trajectory: Vec<(f64, f64)>,
}

/// Classical fourth-order Runge-Kutta for the scalar membrane equation, with
/// segment boundaries pinned to the event times so no step straddles an
/// arrival. On the linear model each segment's dynamics is first-order
/// polynomial in t and RK4 is exact up to rounding; on the circuit model the
/// error is O(dt^4) per step.
pub fn integrate_membrane(
    model: NeuronModel,
    circuit: CircuitParams,
    events: &[ArrivalEvent],
    v_th: f64,
    dt: f64,
    horizon: f64,
) -> IntegrationResult {
    assert!(dt > 0.0, "step size must be positive");
    let mut sorted = events.to_vec();
    sort_events(&mut sorted);

    let mut trajectory = Vec::new();
    let mut v = 0.0;
    let mut t = sorted.first().map_or(0.0, |e| e.time.min(0.0));
    trajectory.push((t, v));
    if v >= v_th {
        return IntegrationResult {
            crossing: Some(t),
            trajectory,
        };
    }

    // Boundaries of constant-drive segments: every distinct event time within
    // the horizon, then the horizon itself.
    let mut boundaries: Vec<f64> = Vec::new();
    for e in &sorted {
        if e.time > t && e.time < horizon && boundaries.last() != Some(&e.time) {
            boundaries.push(e.time);
        }
    }
    boundaries.push(horizon);

    let mut active = 0; // events with time <= t
    while active < sorted.len() && sorted[active].time <= t {
        active += 1;
    }

    for &t_end in &boundaries {
        while active < sorted.len() && sorted[active].time <= t {
            active += 1;
        }
        let live = &sorted[..active];
        let rhs = |v: f64| -> f64 {
            match model {
                NeuronModel::Linear => live.iter().map(|e| e.weight).sum(),
                NeuronModel::Circuit => live
                    .iter()
                    .map(|e| e.weight * (1.0 - v * circuit.inv_rail(e.weight)))
                    .sum(),
            }
        };

        let span = t_end - t;
        if span > 0.0 {
            let steps = (span / dt).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for s in 0..steps {
                let v0 = v;
                let v1 = rk4_step(&rhs, v0, h);
                if v1 >= v_th {
                    let t_cross = t + bisect_crossing(&rhs, v0, v_th, h);
                    trajectory.push((t_cross, v_th));
                    return IntegrationResult {
                        crossing: Some(t_cross),
                        trajectory,
                    };
                }
                v = v1;
                t = if s + 1 == steps {
                    t_end
                } else {
                    t + h
                };
                trajectory.push((t, v));
            }
        }
        t = t_end;
    }

    IntegrationResult {
        crossing: None,
        trajectory,
    }
}

fn rk4_step(rhs: &impl Fn(f64) -> f64, v: f64, h: f64) -> f64 {
    let k1 = rhs(v);
    let k2 = rhs(v + 0.5 * h * k1);
    let k3 = rhs(v + 0.5 * h * k2);
    let k4 = rhs(v + h * k3);
    v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// The membrane is monotone within a constant-drive step that reaches v_th
/// from below, so bisection on the step offset is well posed.
fn bisect_crossing(rhs: &impl Fn(f64) -> f64, v0: f64, v_th: f64, h: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = h;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if rk4_step(rhs, v0, mid) >= v_th {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Central finite-difference derivative of `f` at `w`.
///
/// `f` returns the scalar under study plus a discrete signature of the path
/// taken to compute it (which neurons fired, which inputs were causal).
/// `stable` is false when the two probe points disagree on that signature;
/// the difference quotient then mixes two smooth branches and must not be
/// compared against an analytic derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdResult {
    pub gradient: f64,
    pub stable: bool,
}

pub fn fd_gradient<S: PartialEq>(f: impl Fn(f64) -> (f64, S), w: f64, h: f64) -> FdResult {
    assert!(h > 0.0, "finite-difference step must be positive");
    let (up, sig_up) = f(w + h);
    let (down, sig_down) = f(w - h);
    FdResult {
        gradient: (up - down) / (2.0 * h),
        stable: sig_up == sig_down,
    }
}

/// Step size that stays scale-aware for both tiny and large weights.
pub fn fd_default_step(w: f64) -> f64 {
    1e-5 * (w.abs() + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LIN: NeuronModel = NeuronModel::Linear;
    const CIR: NeuronModel = NeuronModel::Circuit;

    fn params(v: f64) -> CircuitParams {
        CircuitParams::symmetric(v)
    }

    #[test]
    fn sort_events_orders_by_time_then_source() {
        let mut ev = vec![
            ArrivalEvent::new(2, 1.0, 0.1),
            ArrivalEvent::new(0, 1.0, 0.2),
            ArrivalEvent::new(1, 0.5, 0.3),
        ];
        sort_events(&mut ev);
        let order: Vec<usize> = ev.iter().map(|e| e.source).collect();
        assert_eq!(order, vec![1, 0, 2]);
    }

    // Hand-checked: two unit-weight inputs at t=0 and t=1, v_th=2. Membrane
    // reaches 1 at t=1, then climbs at slope 2, crossing 2 at t=1.5.
    #[test]
    fn linear_crossing_matches_hand_calculation() {
        let ev = vec![ArrivalEvent::new(0, 0.0, 1.0), ArrivalEvent::new(1, 1.0, 1.0)];
        let r = integrate_membrane(LIN, params(2.0), &ev, 2.0, 1e-4, 10.0);
        let t = r.crossing.expect("must fire");
        assert!((t - 1.5).abs() < 1e-9, "got {t}");
    }

    #[test]
    fn linear_insufficient_drive_never_fires() {
        let ev = vec![ArrivalEvent::new(0, 0.0, -0.5), ArrivalEvent::new(1, 0.2, 0.4)];
        let r = integrate_membrane(LIN, params(2.0), &ev, 1.0, 1e-3, 50.0);
        assert!(r.crossing.is_none());
        // Net drive is negative, so the trajectory must end below threshold.
        let (_, v_end) = *r.trajectory.last().unwrap();
        assert!(v_end < 1.0);
    }

    // Single circuit input: dv/dt = w(1 - v/V), closed form
    // v(t) = V(1 - exp(-w t / V)). With w=1, V=2, v_th=1: t = 2 ln 2.
    #[test]
    fn circuit_crossing_matches_closed_form() {
        let ev = vec![ArrivalEvent::new(0, 0.0, 1.0)];
        let r = integrate_membrane(CIR, params(2.0), &ev, 1.0, 1e-4, 10.0);
        let t = r.crossing.expect("must fire");
        let want = 2.0 * std::f64::consts::LN_2;
        assert!((t - want).abs() < 1e-8, "got {t}, want {want}");
    }

    // Same setup but v_th above the asymptote V: never fires, saturates at V.
    #[test]
    fn circuit_saturates_below_high_threshold() {
        let ev = vec![ArrivalEvent::new(0, 0.0, 1.0)];
        let r = integrate_membrane(CIR, params(2.0), &ev, 2.5, 1e-3, 60.0);
        assert!(r.crossing.is_none());
        let (_, v_end) = *r.trajectory.last().unwrap();
        assert!((v_end - 2.0).abs() < 1e-6, "v_end {v_end}");
    }

    // Mixed-sign circuit drive reaches the equilibrium of dv/dt = A - Bv.
    // w = {1, -0.5}, V = 2: A = 0.5, B = (1 + 0.5)/2 = 0.75, v_inf = 2/3.
    #[test]
    fn circuit_mixed_signs_approach_equilibrium() {
        let ev = vec![ArrivalEvent::new(0, 0.0, 1.0), ArrivalEvent::new(1, 0.0, -0.5)];
        let r = integrate_membrane(CIR, params(2.0), &ev, 1.0, 1e-3, 80.0);
        assert!(r.crossing.is_none());
        let (_, v_end) = *r.trajectory.last().unwrap();
        assert!((v_end - 2.0 / 3.0).abs() < 1e-6, "v_end {v_end}");
    }

    #[test]
    fn integrator_lands_exactly_on_event_boundaries() {
        // An arrival at t=0.15 must be a step boundary even with dt=0.1.
        let ev = vec![ArrivalEvent::new(0, 0.0, 0.3), ArrivalEvent::new(1, 0.15, 5.0)];
        let r = integrate_membrane(LIN, params(2.0), &ev, 1.0, 0.1, 2.0);
        assert!(r
            .trajectory
            .iter()
            .any(|&(t, _)| (t - 0.15).abs() < 1e-15));
        let t = r.crossing.expect("must fire");
        // v(0.15) = 0.045, then slope 5.3: t* = 0.15 + (1 - 0.045)/5.3.
        let want = 0.15 + (1.0 - 0.045) / 5.3;
        assert!((t - want).abs() < 1e-9, "got {t}, want {want}");
    }

    #[test]
    fn fd_gradient_on_smooth_probe() {
        // d/dw of w^3 at 2 is 12; signature constant.
        let r = fd_gradient(|w| (w * w * w, ()), 2.0, 1e-5);
        assert!(r.stable);
        assert!((r.gradient - 12.0).abs() < 1e-6, "got {}", r.gradient);
    }

    #[test]
    fn fd_gradient_flags_branch_changes() {
        // Signature flips when the probe crosses w = 1.
        let f = |w: f64| (w * 2.0, w > 1.0);
        assert!(!fd_gradient(f, 1.0, 1e-5).stable);
        assert!(fd_gradient(f, 2.0, 1e-5).stable);
    }

    #[test]
    fn fd_step_scales_with_weight() {
        assert_eq!(fd_default_step(0.0), 1e-5);
        assert!((fd_default_step(-100.0) - 101.0 * 1e-5).abs() < 1e-18);
    }
}
