//! Dense density-matrix integration of the master equation
//!
//!   d rho / dt = -i [H(t), rho]
//!                + sum_j ( L_j rho L_j^dag - 1/2 {L_j^dag L_j, rho} )
//!
//! with classic RK4. This is the reference that trajectory ensembles are
//! validated against; it scales as dim^2 per step and is capped to small
//! spaces.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::hilbert::{Csr, StateVector};
use crate::model::{SystemModel, RADIANS_PER_PERIOD};
use crate::{Error, Result};

/// Largest Hilbert-space dimension the dense integrator accepts.
pub const MAX_DENSITY_DIM: usize = 400;

fn rhs(
    model: &SystemModel,
    daggers: &[Csr],
    tau: f64,
    rho: &DMatrix<Complex64>,
) -> DMatrix<Complex64> {
    let dim = rho.nrows();
    let h = model.hamiltonian_at(tau);
    let mut left = DMatrix::zeros(dim, dim);
    let mut right = DMatrix::zeros(dim, dim);
    h.csr().apply_dense_left(rho, &mut left);
    h.csr().apply_dense_right(rho, &mut right);
    let mut acc = (left.clone() - &right) * Complex64::new(0.0, -RADIANS_PER_PERIOD);

    let mut tmp = DMatrix::zeros(dim, dim);
    for (lb, dag) in model.lindblads().iter().zip(daggers) {
        lb.op.csr().apply_dense_left(rho, &mut left);
        dag.apply_dense_right(&left, &mut tmp);
        acc += &tmp * Complex64::new(RADIANS_PER_PERIOD, 0.0);

        lb.op_dag_op.csr().apply_dense_left(rho, &mut left);
        lb.op_dag_op.csr().apply_dense_right(rho, &mut right);
        acc -= (&left + &right) * Complex64::new(0.5 * RADIANS_PER_PERIOD, 0.0);
    }
    acc
}

/// Integrate the master equation from `tau0` over `periods` drive periods.
pub fn evolve_density(
    model: &SystemModel,
    rho0: &DMatrix<Complex64>,
    tau0: f64,
    periods: f64,
    steps_per_period: usize,
) -> Result<DMatrix<Complex64>> {
    let dim = model.space().dim();
    if dim > MAX_DENSITY_DIM {
        return Err(Error::ResourceGuard(format!(
            "density integrator limited to dimension {MAX_DENSITY_DIM}, got {dim}"
        )));
    }
    if rho0.nrows() != dim || rho0.ncols() != dim {
        return Err(Error::Dimension(format!(
            "density matrix is {}x{}, space needs {dim}x{dim}",
            rho0.nrows(),
            rho0.ncols()
        )));
    }
    if steps_per_period == 0 || periods < 0.0 {
        return Err(Error::Config(
            "steps_per_period must be positive and periods nonnegative".into(),
        ));
    }
    let n_steps_f = periods * steps_per_period as f64;
    let n_steps = n_steps_f.round() as usize;
    if (n_steps_f - n_steps as f64).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "periods {periods} is not a whole number of steps at {steps_per_period}/period"
        )));
    }
    let daggers: Vec<Csr> = model
        .lindblads()
        .iter()
        .map(|l| l.op.csr().dagger())
        .collect();

    let dtau = 1.0 / steps_per_period as f64;
    let mut rho = rho0.clone();
    for k in 0..n_steps {
        let tau = tau0 + k as f64 * dtau;
        let k1 = rhs(model, &daggers, tau, &rho);
        let k2 = rhs(model, &daggers, tau + 0.5 * dtau, &(&rho + &k1 * Complex64::new(0.5 * dtau, 0.0)));
        let k3 = rhs(model, &daggers, tau + 0.5 * dtau, &(&rho + &k2 * Complex64::new(0.5 * dtau, 0.0)));
        let k4 = rhs(model, &daggers, tau + dtau, &(&rho + &k3 * Complex64::new(dtau, 0.0)));
        rho += (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4)
            * Complex64::new(dtau / 6.0, 0.0);
    }
    Ok(rho)
}

/// 1/2 sum of absolute eigenvalues of (a - b), hermitized first.
pub fn trace_distance(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let diff = a - b;
    let herm = (&diff + diff.adjoint()) * Complex64::new(0.5, 0.0);
    0.5 * herm
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .sum::<f64>()
}

/// Equal-weight ensemble density matrix of pure states.
pub fn density_from_states(states: &[StateVector]) -> DMatrix<Complex64> {
    assert!(!states.is_empty());
    let dim = states[0].space().dim();
    let mut rho = DMatrix::zeros(dim, dim);
    for s in states {
        let a = s.amps();
        for j in 0..dim {
            let w = a[j].conj();
            if w != Complex64::new(0.0, 0.0) {
                for i in 0..dim {
                    rho[(i, j)] += a[i] * w;
                }
            }
        }
    }
    rho / Complex64::new(states.len() as f64, 0.0)
}
