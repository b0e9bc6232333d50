//! Cost on the output spike times: softmax cross-entropy over negated times
//! plus a spike-time penalty pulling outputs toward a reference time.
//!
//! Earlier spikes get larger softmax mass, so minimizing the cross-entropy
//! drives the teacher neuron to fire first. All functions here take dense
//! time vectors; absent spikes must already be sentinelized.

use crate::error::{Result, SnnError};
use crate::network::{Hyperparameters, Penalty};

/// Softmax over negated times: S_i = e^(-t_i) / sum_j e^(-t_j), computed
/// against the earliest time so exponents never overflow.
pub fn softmax_neg_time(times: &[f64]) -> Vec<f64> {
    assert!(!times.is_empty());
    let t_min = times.iter().cloned().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = times.iter().map(|&t| (t_min - t).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn penalty_term(x: f64, penalty: Penalty) -> f64 {
    match penalty {
        Penalty::Quadratic => x * x,
        Penalty::ThreeHalves => x.abs() * x.abs().sqrt(),
    }
}

/// d/dt of the penalty term, scaled by gamma/2 like its contribution to the
/// cost. Exactly zero at the reference time for both exponents.
fn penalty_slope(x: f64, gamma: f64, penalty: Penalty) -> f64 {
    match penalty {
        Penalty::Quadratic => gamma * x,
        Penalty::ThreeHalves => {
            if x == 0.0 {
                0.0
            } else {
                0.75 * gamma * x.signum() * x.abs().sqrt()
            }
        }
    }
}

/// Cost of one sample, split into its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// -ln S_teacher.
    pub cross_entropy: f64,
    /// sum_i penalty(t_i - t_ref), before the gamma/2 factor.
    pub penalty: f64,
    /// cross_entropy + gamma/2 * penalty.
    pub cost: f64,
    pub softmax: Vec<f64>,
    pub teacher: usize,
}

pub fn cost(times: &[f64], teacher: usize, hyper: &Hyperparameters) -> Result<LossBreakdown> {
    if teacher >= times.len() {
        return Err(SnnError::TeacherOutOfRange {
            teacher,
            outputs: times.len(),
        });
    }
    let softmax = softmax_neg_time(times);
    let cross_entropy = -softmax[teacher].ln();
    let penalty: f64 = times
        .iter()
        .map(|&t| penalty_term(t - hyper.t_ref, hyper.penalty))
        .sum();
    Ok(LossBreakdown {
        cross_entropy,
        penalty,
        cost: cross_entropy + 0.5 * hyper.gamma * penalty,
        softmax,
        teacher,
    })
}

/// Gradient of the cost in the output spike times:
/// dC/dt_i = kappa_i - S_i + (gamma/2) penalty'(t_i - t_ref).
///
/// The cross-entropy part is kappa - S, not S - kappa: the softmax argument
/// is the negated time, and the extra sign flip lands on the time derivative.
pub fn output_error(times: &[f64], teacher: usize, hyper: &Hyperparameters) -> Result<Vec<f64>> {
    if teacher >= times.len() {
        return Err(SnnError::TeacherOutOfRange {
            teacher,
            outputs: times.len(),
        });
    }
    let softmax = softmax_neg_time(times);
    Ok(times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let kappa = if i == teacher { 1.0 } else { 0.0 };
            kappa - softmax[i] + penalty_slope(t - hyper.t_ref, hyper.gamma, hyper.penalty)
        })
        .collect())
}
