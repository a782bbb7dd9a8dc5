//! Quantum state diffusion unravelling of the master equation. Each
//! trajectory solves the Ito stochastic Schroedinger equation
//!
//!   d psi = -i H psi dt
//!           + sum_j ( <L_j^dag> L_j - 1/2 L_j^dag L_j - 1/2 <L_j^dag><L_j> ) psi dt
//!           + sum_j ( L_j - <L_j> ) psi dxi_j
//!
//! with independent complex Wiener increments dxi_j (each quadrature has
//! variance dt/2), expectations evaluated at the step start.
//!
//! The deterministic drift is far too stiff for an explicit Euler update on
//! a truncated Fock basis: the top of the quartic spectrum puts |lambda| dt
//! near or beyond one at useful step sizes, so Euler amplifies boundary
//! modes until the leakage monitor aborts. The drift is therefore advanced
//! with classic RK4 (whose imaginary-axis stability reaches |lambda| dt =
//! 2 sqrt 2 and damps the boundary), holding the expectation scalars frozen
//! at their step-start values, while the noise stays an explicit
//! Euler-Maruyama increment on the step-start state. This preserves the Ito
//! interpretation and weak first-order convergence, and adds stability, not
//! accuracy: halving dt must still be used to judge discretization error.
//!
//! In a displaced frame every channel operator gains the scalar offset from
//! [`Lindblad::frame_offset`]; the combination (L - <L>) is offset-free, so
//! the noise term is frame-invariant, while the drift picks up the offset
//! cross terms expanded in [`eval_drift`].

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::hilbert::{Csr, Frame, StateVector};
use crate::model::{SystemModel, RADIANS_PER_PERIOD};
use crate::{Error, Result};

/// Per-step diagnostics a stepper reports to the trajectory driver.
#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    /// Total damping probability mass sum_j <L_j^dag L_j> dt for this step.
    pub rate_mass: f64,
    /// Channel that jumped during this step (jump unravelling only).
    pub jump: Option<usize>,
}

/// Stability ceiling for (spectral bound) * dt in radians; the RK4 stability
/// region crosses the imaginary axis at 2 sqrt 2.
pub const STABILITY_LIMIT: f64 = 2.7;

/// Per-step damping probability mass beyond which dt is too coarse for the
/// unravelling to be trusted.
pub const RATE_MASS_LIMIT: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default)]
struct ChannelScalars {
    /// <L_eff> at step start.
    e: Complex64,
    /// Frame offset of the channel operator.
    c: Complex64,
    /// <L_eff^dag L_eff> at step start, radian rate.
    kappa: f64,
}

/// Workspace and per-step state for QSD integration. One instance serves one
/// trajectory at a time; all buffers are preallocated at construction.
#[derive(Clone, Debug)]
pub struct QsdStepper {
    k1: DVector<Complex64>,
    k2: DVector<Complex64>,
    k3: DVector<Complex64>,
    k4: DVector<Complex64>,
    stage: DVector<Complex64>,
    /// L_j psi at step start, one buffer per channel.
    w: Vec<DVector<Complex64>>,
    daggers: Vec<Csr>,
    scal: Vec<ChannelScalars>,
    noise: Vec<Complex64>,
}

impl QsdStepper {
    pub fn new(model: &SystemModel) -> Self {
        let dim = model.space().dim();
        let nch = model.lindblads().len();
        QsdStepper {
            k1: DVector::zeros(dim),
            k2: DVector::zeros(dim),
            k3: DVector::zeros(dim),
            k4: DVector::zeros(dim),
            stage: DVector::zeros(dim),
            w: (0..nch).map(|_| DVector::zeros(dim)).collect(),
            daggers: model
                .lindblads()
                .iter()
                .map(|l| l.op.csr().dagger())
                .collect(),
            scal: vec![ChannelScalars::default(); nch],
            noise: vec![Complex64::new(0.0, 0.0); nch],
        }
    }

    /// Advance one step, drawing the Wiener increments from `rng` (two
    /// normals per channel, real part first).
    pub fn step(
        &mut self,
        model: &SystemModel,
        psi: &mut StateVector,
        frame: Option<&Frame>,
        tau: f64,
        dtau: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepOutcome> {
        let sigma = (dtau * RADIANS_PER_PERIOD / 2.0).sqrt();
        for j in 0..self.noise.len() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            self.noise[j] = Complex64::new(sigma * re, sigma * im);
        }
        let noise = std::mem::take(&mut self.noise);
        let out = self.step_with_noise(model, psi, frame, tau, dtau, &noise);
        self.noise = noise;
        out
    }

    /// Advance one step with caller-supplied Wiener increments, one complex
    /// increment per channel with Var(Re) = Var(Im) = dt/2 in radian time.
    /// Summing the increments of consecutive fine steps yields the coarse
    /// increment, which is how step-halving comparisons share one noise path.
    pub fn step_with_noise(
        &mut self,
        model: &SystemModel,
        psi: &mut StateVector,
        frame: Option<&Frame>,
        tau: f64,
        dtau: f64,
        noise: &[Complex64],
    ) -> Result<StepOutcome> {
        let channels = model.lindblads();
        if noise.len() != channels.len() {
            return Err(Error::Dimension(format!(
                "{} noise increments for {} channels",
                noise.len(),
                channels.len()
            )));
        }
        let dt = dtau * RADIANS_PER_PERIOD;

        for (j, lb) in channels.iter().enumerate() {
            lb.op.csr().apply(psi.amps().as_slice(), self.w[j].as_mut_slice());
            let c = lb.frame_offset(frame);
            let ew = psi.amps().dotc(&self.w[j]);
            let e = ew + c;
            let kappa = self.w[j].norm_squared() + 2.0 * (c.conj() * ew).re + c.norm_sqr();
            self.scal[j] = ChannelScalars { e, c, kappa };
        }
        let rate_mass: f64 = self.scal.iter().map(|s| s.kappa).sum::<f64>() * dt;

        // drift stages, scalars frozen at step start
        self.eval_drift(model, tau, frame, psi.amps().as_slice(), 1);
        self.assemble_stage(psi, 0.5 * dt, 1);
        self.eval_stage(model, tau + 0.5 * dtau, frame, 2);
        self.assemble_stage(psi, 0.5 * dt, 2);
        self.eval_stage(model, tau + 0.5 * dtau, frame, 3);
        self.assemble_stage(psi, dt, 3);
        self.eval_stage(model, tau + dtau, frame, 4);

        // noise on the step-start state: (L_eff - <L_eff>) psi dxi per
        // channel, i.e. xi_j w_j plus a scalar multiple of psi itself
        let mut shrink = Complex64::new(1.0, 0.0);
        for (j, s) in self.scal.iter().enumerate() {
            shrink += noise[j] * (s.c - s.e);
        }
        {
            let amps = psi.amps_mut();
            *amps *= shrink;
            for (j, _) in self.scal.iter().enumerate() {
                amps.axpy(noise[j], &self.w[j], Complex64::new(1.0, 0.0));
            }
            let h6 = Complex64::new(dt / 6.0, 0.0);
            amps.axpy(h6, &self.k1, Complex64::new(1.0, 0.0));
            amps.axpy(h6 * 2.0, &self.k2, Complex64::new(1.0, 0.0));
            amps.axpy(h6 * 2.0, &self.k3, Complex64::new(1.0, 0.0));
            amps.axpy(h6, &self.k4, Complex64::new(1.0, 0.0));
        }
        Ok(StepOutcome {
            rate_mass,
            jump: None,
        })
    }

    fn stage_buf(&mut self, which: usize) -> &mut DVector<Complex64> {
        match which {
            1 => &mut self.k1,
            2 => &mut self.k2,
            3 => &mut self.k3,
            _ => &mut self.k4,
        }
    }

    /// stage = psi + a * k_{which}
    fn assemble_stage(&mut self, psi: &StateVector, a: f64, which: usize) {
        let k = match which {
            1 => &self.k1,
            2 => &self.k2,
            _ => &self.k3,
        };
        self.stage.copy_from(psi.amps());
        self.stage.axpy(Complex64::new(a, 0.0), k, Complex64::new(1.0, 0.0));
    }

    fn eval_stage(&mut self, model: &SystemModel, tau: f64, frame: Option<&Frame>, which: usize) {
        let stage = std::mem::replace(&mut self.stage, DVector::zeros(0));
        self.eval_drift(model, tau, frame, stage.as_slice(), which);
        self.stage = stage;
    }

    /// k_{which} = deterministic QSD drift of x at time tau, radian rate.
    fn eval_drift(
        &mut self,
        model: &SystemModel,
        tau: f64,
        frame: Option<&Frame>,
        x: &[Complex64],
        which: usize,
    ) {
        let scal = std::mem::take(&mut self.scal);
        let daggers = std::mem::take(&mut self.daggers);
        {
            let out = self.stage_buf(which);
            model.apply_hamiltonian_slices(tau, frame, x, out.as_mut_slice());
            *out *= Complex64::new(0.0, -1.0);
            let outs = out.as_mut_slice();
            for (j, lb) in model.lindblads().iter().enumerate() {
                let ChannelScalars { e, c, .. } = scal[j];
                let eb = e.conj();
                lb.op.csr().apply_scaled_add(eb - 0.5 * c.conj(), x, outs);
                if c != Complex64::new(0.0, 0.0) {
                    daggers[j].apply_scaled_add(-0.5 * c, x, outs);
                }
                lb.op_dag_op
                    .csr()
                    .apply_scaled_add(Complex64::new(-0.5, 0.0), x, outs);
                let a_id = eb * c - 0.5 * c.norm_sqr() - 0.5 * eb * e;
                if a_id != Complex64::new(0.0, 0.0) {
                    for (o, xi) in outs.iter_mut().zip(x) {
                        *o += a_id * xi;
                    }
                }
            }
        }
        self.scal = scal;
        self.daggers = daggers;
    }
}
