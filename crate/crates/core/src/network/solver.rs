//! Backward/forward sweep power flow for radial feeders with constant-power
//! loads.

use num_complex::Complex64;
use thiserror::Error;

use super::{CaseInjection, Network};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("root voltage {0} p.u. outside [0.8, 1.2]")]
    InvalidRootVoltage(f64),
    #[error("injection has {got} entries, network has {expected} buses")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("voltage collapse at bus index {bus} (|V| = {magnitude:.4} p.u.) in iteration {iteration}")]
    Diverged {
        iteration: usize,
        bus: usize,
        magnitude: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on the largest complex voltage change between sweeps.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Any magnitude below this during iteration aborts with `Diverged`.
    pub collapse_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 100,
            collapse_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSolution {
    /// Voltage magnitude per bus (network bus order), p.u.
    pub v_mag: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest voltage change in the final sweep.
    pub residual: f64,
}

pub fn solve_power_flow(
    net: &Network,
    inj: &CaseInjection,
    root_voltage: f64,
) -> Result<VoltageSolution, PowerFlowError> {
    solve_power_flow_with(net, inj, root_voltage, &SolverOptions::default())
}

/// Runs the sweep until the largest voltage change drops below
/// `opts.tolerance`. Non-convergence is not an error: the iterate with the
/// smallest change is returned with `converged = false`.
pub fn solve_power_flow_with(
    net: &Network,
    inj: &CaseInjection,
    root_voltage: f64,
    opts: &SolverOptions,
) -> Result<VoltageSolution, PowerFlowError> {
    if !(0.8..=1.2).contains(&root_voltage) {
        return Err(PowerFlowError::InvalidRootVoltage(root_voltage));
    }
    let n = net.bus_count();
    if inj.p.len() != n || inj.q.len() != n {
        return Err(PowerFlowError::DimensionMismatch {
            expected: n,
            got: inj.p.len().min(inj.q.len()),
        });
    }

    let order = net.sweep_order();
    let slack = net.slack_index();
    let s: Vec<Complex64> = inj
        .p
        .iter()
        .zip(&inj.q)
        .map(|(&p, &q)| Complex64::new(p, q))
        .collect();

    let root = Complex64::new(root_voltage, 0.0);
    let mut v = vec![root; n];
    let mut next = vec![root; n];
    // Current flowing from each bus's parent into the bus.
    let mut branch_i = vec![Complex64::new(0.0, 0.0); n];

    let mut best: Option<(f64, Vec<Complex64>, usize)> = None;
    for iteration in 1..=opts.max_iter {
        // Backward: each bus draws -conj(S/V); subtrees accumulate upward.
        for &bus in order.iter().rev() {
            if bus == slack {
                continue;
            }
            branch_i[bus] -= (s[bus] / v[bus]).conj();
            let parent = net.parent(bus).expect("non-slack bus has a parent");
            if parent != slack {
                let child_current = branch_i[bus];
                branch_i[parent] += child_current;
            }
        }

        // Forward: drop voltage along each branch from the root outward.
        next[slack] = root;
        for &bus in &order[1..] {
            let parent = net.parent(bus).expect("non-slack bus has a parent");
            next[bus] = next[parent] - net.upstream_impedance(bus) * branch_i[bus];
            let magnitude = next[bus].norm();
            if !(magnitude >= opts.collapse_threshold) {
                return Err(PowerFlowError::Diverged {
                    iteration,
                    bus,
                    magnitude,
                });
            }
        }

        let change = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0_f64, f64::max);
        std::mem::swap(&mut v, &mut next);
        branch_i.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));

        if change < opts.tolerance {
            return Ok(VoltageSolution {
                v_mag: v.iter().map(|c| c.norm()).collect(),
                iterations: iteration,
                converged: true,
                residual: change,
            });
        }
        if best.as_ref().is_none_or(|(c, _, _)| change < *c) {
            best = Some((change, v.clone(), iteration));
        }
    }

    let (residual, v, iterations) = best.expect("max_iter >= 1 produces an iterate");
    Ok(VoltageSolution {
        v_mag: v.iter().map(|c| c.norm()).collect(),
        iterations,
        converged: false,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Branch, Bus, BusKind, NetworkDocument};

    fn two_bus(r: f64, x: f64) -> Network {
        let bus = |id, kind| Bus {
            id,
            kind,
            p_load_nom: 0.0,
            q_load_nom: 0.0,
            pv_capacity: 0.0,
            sc: None,
        };
        Network::from_document(NetworkDocument {
            name: "two-bus".into(),
            base_mva: 10.0,
            buses: vec![bus(1, BusKind::Slack), bus(2, BusKind::Load)],
            branches: vec![Branch {
                from_bus: 1,
                to_bus: 2,
                r,
                x,
            }],
        })
        .unwrap()
    }

    #[test]
    fn zero_injection_is_flat_in_one_iteration() {
        let net = Network::feeder_141();
        let sol = solve_power_flow(&net, &CaseInjection::zeros(net.bus_count()), 1.0).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        assert!(sol.v_mag.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn slack_voltage_is_exact() {
        let net = Network::feeder_141();
        let mut inj = CaseInjection::zeros(net.bus_count());
        inj.p.iter_mut().for_each(|p| *p = -0.005);
        let sol = solve_power_flow(&net, &inj, 1.03).unwrap();
        assert_eq!(sol.v_mag[net.slack_index()], 1.03);
        assert!(sol.converged);
    }

    #[test]
    fn root_voltage_range_is_checked() {
        let net = two_bus(0.01, 0.02);
        let inj = CaseInjection::zeros(2);
        assert!(matches!(
            solve_power_flow(&net, &inj, 0.79),
            Err(PowerFlowError::InvalidRootVoltage(_))
        ));
        assert!(solve_power_flow(&net, &inj, 1.2).is_ok());
    }

    #[test]
    fn heavy_load_collapses() {
        let net = two_bus(0.1, 0.2);
        let inj = CaseInjection {
            p: vec![0.0, -5.0],
            q: vec![0.0, -3.0],
        };
        assert!(matches!(
            solve_power_flow(&net, &inj, 1.0),
            Err(PowerFlowError::Diverged { .. })
        ));
    }

    #[test]
    fn iteration_cap_reports_unconverged() {
        let net = two_bus(0.01, 0.02);
        let inj = CaseInjection {
            p: vec![0.0, -0.5],
            q: vec![0.0, -0.2],
        };
        let opts = SolverOptions {
            max_iter: 2,
            ..SolverOptions::default()
        };
        let sol = solve_power_flow_with(&net, &inj, 1.0, &opts).unwrap();
        assert!(!sol.converged);
        assert!(sol.residual > opts.tolerance);
    }

    #[test]
    fn dimension_mismatch() {
        let net = two_bus(0.01, 0.02);
        assert!(matches!(
            solve_power_flow(&net, &CaseInjection::zeros(3), 1.0),
            Err(PowerFlowError::DimensionMismatch { .. })
        ));
    }
}
