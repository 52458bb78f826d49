//! Sequential linear programming update with a move limit.

use crate::error::{Error, Result};

/// Optional linear constraint Σ wᵢ ρᵢ ≤ bound with non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub weights: Vec<f64>,
    pub bound: f64,
}

/// Maximizes gᵀρ' over the box |ρ' − ρ| ≤ move, 0 ≤ ρ' ≤ 1, and the
/// optional linear constraint. Returns the new design.
pub fn slp_step(rho: &[f64], grad: &[f64], move_limit: f64, constraint: Option<&LinearConstraint>) -> Result<Vec<f64>> {
    slp_step_per_variable(rho, grad, &vec![move_limit; rho.len()], constraint)
}

/// [`slp_step`] with an individual move limit per variable.
pub fn slp_step_per_variable(
    rho: &[f64],
    grad: &[f64],
    move_limits: &[f64],
    constraint: Option<&LinearConstraint>,
) -> Result<Vec<f64>> {
    for (what, v) in [("gradient", grad), ("move limits", move_limits)] {
        if v.len() != rho.len() {
            return Err(Error::SizeMismatch {
                what,
                got: v.len(),
                expected: rho.len(),
            });
        }
    }
    if let Some(&m) = move_limits.iter().find(|m| !(**m > 0.0)) {
        return Err(Error::OutOfRange {
            name: "move_limit",
            value: m,
            reason: "move limit must be positive",
        });
    }
    let lo: Vec<f64> = rho.iter().zip(move_limits).map(|(r, m)| (r - m).max(0.0)).collect();
    let hi: Vec<f64> = rho.iter().zip(move_limits).map(|(r, m)| (r + m).min(1.0)).collect();
    let mut x: Vec<f64> = rho
        .iter()
        .zip(grad)
        .enumerate()
        .map(|(i, (&r, &g))| {
            if g > 0.0 {
                hi[i]
            } else if g < 0.0 {
                lo[i]
            } else {
                r
            }
        })
        .collect();
    let Some(con) = constraint else { return Ok(x) };
    if con.weights.len() != rho.len() {
        return Err(Error::SizeMismatch {
            what: "constraint weights",
            got: con.weights.len(),
            expected: rho.len(),
        });
    }
    let mut used: f64 = con.weights.iter().zip(&x).map(|(w, v)| w * v).sum();
    if used <= con.bound {
        return Ok(x);
    }
    // fractional knapsack: give back the cheapest objective per unit weight first
    let mut order: Vec<usize> = (0..x.len()).filter(|&i| con.weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| (grad[a] / con.weights[a]).total_cmp(&(grad[b] / con.weights[b])));
    for i in order {
        let excess = used - con.bound;
        if excess <= 0.0 {
            break;
        }
        let room = (x[i] - lo[i]) * con.weights[i];
        let take = room.min(excess);
        x[i] -= take / con.weights[i];
        used -= take;
    }
    if used > con.bound * (1.0 + 1e-12) + 1e-300 {
        return Err(Error::Config(format!(
            "linear constraint bound {} is unreachable within the move limit",
            con.bound
        )));
    }
    Ok(x)
}
