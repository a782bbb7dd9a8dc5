//! Trajectory driver and ensemble orchestration. A single driver loop serves
//! both unravellings; ensembles fan trajectories out across threads with a
//! per-trajectory seed chain, so results are byte-identical for any worker
//! count.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classical::{attractor_strobes, SingleState, DEFAULT_STEPS_PER_PERIOD};
use crate::hilbert::{
    coherent_state, entanglement_entropy, recenter, Frame, StateVector,
    DEFAULT_LEAKAGE_THRESHOLD,
};
use crate::jumps::{JumpScheme, JumpStepper};
use crate::model::{DuffingParams, SystemModel, RADIANS_PER_PERIOD};
use crate::qsd::{QsdStepper, StepOutcome, RATE_MASS_LIMIT, STABILITY_LIMIT};
use crate::record::{Abort, JumpEvent, Sample, TrajectoryData};
use crate::{Error, Result};

/// Which stochastic unravelling of the master equation to integrate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Unravelling {
    #[default]
    Qsd,
    Jumps,
}

impl Unravelling {
    pub fn as_str(&self) -> &'static str {
        match self {
            Unravelling::Qsd => "qsd",
            Unravelling::Jumps => "jumps",
        }
    }
}

impl std::str::FromStr for Unravelling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qsd" => Ok(Unravelling::Qsd),
            "jumps" => Ok(Unravelling::Jumps),
            other => Err(Error::Config(format!("unknown unravelling '{other}'"))),
        }
    }
}

/// Seed-chain domain tags so the two unravellings never share noise streams.
pub const TAG_QSD: u64 = 0x7153_6444;
pub const TAG_JUMPS: u64 = 0x6a6d_7044;

/// SplitMix64 mixing step; the standard finalizer constants.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trajectory seed: master -> tag -> sweep point -> trajectory index,
/// one mixing round per level.
pub fn derive_trajectory_seed(master: u64, tag: u64, beta_index: u64, traj_index: u64) -> u64 {
    let s = splitmix64(master ^ tag);
    let s = splitmix64(s ^ beta_index);
    splitmix64(s ^ traj_index)
}

enum AnyStepper {
    Qsd(QsdStepper),
    Jumps(JumpStepper),
}

impl AnyStepper {
    fn step(
        &mut self,
        model: &SystemModel,
        psi: &mut StateVector,
        frame: Option<&Frame>,
        tau: f64,
        dtau: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepOutcome> {
        match self {
            AnyStepper::Qsd(s) => s.step(model, psi, frame, tau, dtau, rng),
            AnyStepper::Jumps(s) => s.step(model, psi, frame, tau, dtau, rng),
        }
    }
}

/// Everything a single trajectory integration needs besides the model, the
/// initial state, and the random stream.
#[derive(Clone, Debug)]
pub struct TrajectoryOptions {
    pub unravelling: Unravelling,
    pub jump_scheme: JumpScheme,
    /// Steps per drive period.
    pub spp: usize,
    /// Total integration span in drive periods.
    pub periods: f64,
    /// Sampling stride in steps.
    pub sample_every: usize,
    /// Follow the wavepacket with a displaced frame.
    pub recenter: bool,
    pub recenter_every: usize,
    pub renormalize_every: usize,
    pub leakage_threshold: f64,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        TrajectoryOptions {
            unravelling: Unravelling::Qsd,
            jump_scheme: JumpScheme::Bernoulli,
            spp: 2048,
            periods: 1.0,
            sample_every: 64,
            recenter: false,
            recenter_every: 1,
            renormalize_every: 1,
            leakage_threshold: DEFAULT_LEAKAGE_THRESHOLD,
        }
    }
}

impl TrajectoryOptions {
    fn total_steps(&self) -> Result<usize> {
        let exact = self.periods * self.spp as f64;
        let steps = exact.round();
        // a zero span is legal and yields the initial sample alone
        if (exact - steps).abs() > 1e-9 || steps < 0.0 {
            return Err(Error::Config(format!(
                "span of {} periods is not a whole number of steps at {} steps/period",
                self.periods, self.spp
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spp == 0 || self.sample_every == 0 {
            return Err(Error::Config("step and sample strides must be positive".into()));
        }
        if self.spp % self.sample_every != 0 {
            return Err(Error::Config(format!(
                "sample stride {} does not divide {} steps/period",
                self.sample_every, self.spp
            )));
        }
        if self.recenter_every == 0 || self.renormalize_every == 0 {
            return Err(Error::Config("maintenance strides must be positive".into()));
        }
        self.total_steps().map(|_| ())
    }
}

fn sample_state(
    model: &SystemModel,
    psi: &StateVector,
    frame: Option<&Frame>,
    tau: f64,
) -> Result<Sample> {
    let mut normed = psi.clone();
    normed.renormalize();
    let (q1, p1) = model.physical_qp(&normed, frame, 0);
    let (q2, p2) = if model.space().n_subsystems() > 1 {
        model.physical_qp(&normed, frame, 1)
    } else {
        (0.0, 0.0)
    };
    let entropy = if model.space().n_subsystems() == 2 {
        entanglement_entropy(&normed)?
    } else {
        0.0
    };
    Ok(Sample {
        tau,
        q1,
        p1,
        q2,
        p2,
        entropy,
        leakage: normed.leakage(),
    })
}

/// Integrate one trajectory. Boundary leakage beyond the threshold ends the
/// run early with an abort marker in the returned data (the record is still
/// valid); step-size and arithmetic failures are hard errors.
pub fn run_trajectory(
    model: &SystemModel,
    mut psi: StateVector,
    mut frame: Option<Frame>,
    opts: &TrajectoryOptions,
    rng: &mut ChaCha8Rng,
) -> Result<TrajectoryData> {
    opts.validate()?;
    if opts.recenter && frame.is_none() {
        return Err(Error::Config("recentering requires an initial frame".into()));
    }
    if opts.recenter && !model.supports_frame() {
        return Err(Error::Config(
            "this model was built without displaced-frame support".into(),
        ));
    }
    let total_steps = opts.total_steps()?;
    let dtau = 1.0 / opts.spp as f64;
    let dt_rad = dtau * RADIANS_PER_PERIOD;

    let check_stiffness = |frame: Option<&Frame>| -> Result<()> {
        let bound = model.stiffness_bound(frame) * dt_rad;
        if bound > STABILITY_LIMIT {
            return Err(Error::StepSize(format!(
                "spectral bound times dt is {bound:.2}, limit {STABILITY_LIMIT}; \
                 increase steps per period or reduce levels"
            )));
        }
        Ok(())
    };
    check_stiffness(frame.as_ref())?;

    let mut stepper = match opts.unravelling {
        Unravelling::Qsd => AnyStepper::Qsd(QsdStepper::new(model)),
        Unravelling::Jumps => AnyStepper::Jumps(JumpStepper::new(model, opts.jump_scheme)),
    };

    let mut data = TrajectoryData {
        samples: Vec::with_capacity(total_steps / opts.sample_every + 2),
        jumps: Vec::new(),
        abort: None,
    };
    data.samples
        .push(sample_state(model, &psi, frame.as_ref(), 0.0)?);

    for k in 0..total_steps {
        let tau = k as f64 * dtau;
        let out = stepper.step(model, &mut psi, frame.as_ref(), tau, dtau, rng)?;
        let tau_end = (k + 1) as f64 * dtau;
        if out.rate_mass > RATE_MASS_LIMIT {
            return Err(Error::StepSize(format!(
                "damping probability {:.3} per step at t = {tau_end:.3}, limit {RATE_MASS_LIMIT}",
                out.rate_mass
            )));
        }
        if let Some(channel) = out.jump {
            data.jumps.push(JumpEvent {
                tau: tau_end,
                channel,
            });
        }
        if (k + 1) % opts.renormalize_every == 0 {
            let prev = psi.renormalize();
            if !(0.2..5.0).contains(&prev) {
                return Err(Error::Numerical(format!(
                    "norm drifted to {prev:.3e} at t = {tau_end:.3}"
                )));
            }
        }
        let leak = psi.leakage() / psi.norm_sqr();
        if leak > opts.leakage_threshold {
            data.abort = Some(Abort {
                tau: tau_end,
                reason: format!(
                    "boundary occupation {leak:.2e} exceeded {:.2e}",
                    opts.leakage_threshold
                ),
            });
            return Ok(data);
        }
        if opts.recenter && (k + 1) % opts.recenter_every == 0 {
            let f = frame.as_ref().expect("validated above");
            match recenter(&psi, f, opts.leakage_threshold) {
                Ok((shifted, new_frame)) => {
                    psi = shifted;
                    frame = Some(new_frame);
                    check_stiffness(frame.as_ref())?;
                }
                Err(Error::Truncation { tail, .. }) => {
                    data.abort = Some(Abort {
                        tau: tau_end,
                        reason: format!("recentering displaced {tail:.2e} past the boundary"),
                    });
                    return Ok(data);
                }
                Err(e) => return Err(e),
            }
        }
        if (k + 1) % opts.sample_every == 0 {
            data.samples
                .push(sample_state(model, &psi, frame.as_ref(), tau_end)?);
        }
    }
    Ok(data)
}

/// One sweep point: a full ensemble at a single classicality value.
#[derive(Clone, Debug)]
pub struct EnsemblePlan {
    pub params: DuffingParams,
    pub n_levels: usize,
    pub trajectories: usize,
    pub master_seed: u64,
    /// Position of this plan inside a multi-point sweep; keeps seeds distinct
    /// across sweep points under one master seed.
    pub beta_index: u64,
    pub opts: TrajectoryOptions,
    /// Refuse ensembles with dim * trajectories beyond this.
    pub guard_max_dim_traj: u64,
}

pub const DEFAULT_GUARD_MAX_DIM_TRAJ: u64 = 1_000_000;

/// Outcome of one ensemble member, in trajectory-index order.
#[derive(Clone, Debug)]
pub struct EnsembleMember {
    pub seed: u64,
    pub alphas: [Complex64; 2],
    pub data: TrajectoryData,
}

impl EnsemblePlan {
    pub fn tag(&self) -> u64 {
        match self.opts.unravelling {
            Unravelling::Qsd => TAG_QSD,
            Unravelling::Jumps => TAG_JUMPS,
        }
    }

    pub fn check_guard(&self, trajectories: u64) -> Result<()> {
        let dim = (self.n_levels * self.n_levels) as u64;
        let load = dim.saturating_mul(trajectories);
        if load > self.guard_max_dim_traj {
            return Err(Error::ResourceGuard(format!(
                "dim {} x {} trajectories = {load} exceeds the guard {}; \
                 raise guard_max_dim_traj to confirm",
                dim, trajectories, self.guard_max_dim_traj
            )));
        }
        Ok(())
    }
}

/// Coherent amplitude for one oscillator from a strobe point in scaled
/// classical coordinates: alpha = (x + i y) / (beta sqrt 2).
pub fn amplitude_from_strobe(strobe: SingleState, beta: f64) -> Complex64 {
    Complex64::new(strobe[0], strobe[1]) / (beta * std::f64::consts::SQRT_2)
}

/// Draw the two per-oscillator launch strobes for one trajectory. Consumes
/// exactly two index draws from `rng`.
pub fn draw_initial_strobes(pool: &[SingleState], rng: &mut ChaCha8Rng) -> [SingleState; 2] {
    let a = pool[rng.gen_range(0..pool.len())];
    let b = pool[rng.gen_range(0..pool.len())];
    [a, b]
}

/// Draw the two per-oscillator initial amplitudes for one trajectory.
/// Consumes exactly two index draws from `rng`.
pub fn draw_initial_amplitudes(
    pool: &[SingleState],
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> [Complex64; 2] {
    let [a, b] = draw_initial_strobes(pool, rng);
    [amplitude_from_strobe(a, beta), amplitude_from_strobe(b, beta)]
}

fn initial_state(
    model: &SystemModel,
    alphas: &[Complex64; 2],
    recentered: bool,
) -> Result<(StateVector, Option<Frame>)> {
    if recentered {
        let psi = StateVector::basis_state(model.space(), &[0, 0])?;
        Ok((psi, Some(Frame::new(alphas.to_vec()))))
    } else {
        let psi = coherent_state(model.space(), alphas)?;
        Ok((psi, None))
    }
}

/// The shared launch-point pool of a sweep point. Its size depends only on
/// the trajectory count, so every member of the plan (and a single-member
/// rerun of it) draws from identical strobes.
pub fn ensemble_pool(plan: &EnsemblePlan) -> Vec<SingleState> {
    attractor_strobes(
        &plan.params,
        plan.trajectories.max(256),
        DEFAULT_STEPS_PER_PERIOD,
    )
}

/// Run one member of a sweep point. All randomness comes from the seed chain
/// at (master_seed, unravelling, beta_index, traj_index).
pub fn run_member(
    plan: &EnsemblePlan,
    model: &SystemModel,
    pool: &[SingleState],
    traj_index: usize,
) -> Result<EnsembleMember> {
    let seed = derive_trajectory_seed(
        plan.master_seed,
        plan.tag(),
        plan.beta_index,
        traj_index as u64,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphas = draw_initial_amplitudes(pool, plan.params.beta, &mut rng);
    let (psi, frame) = initial_state(model, &alphas, plan.opts.recenter)?;
    let data = run_trajectory(model, psi, frame, &plan.opts, &mut rng)?;
    Ok(EnsembleMember { seed, alphas, data })
}

/// Run every trajectory of one sweep point. Work is distributed across the
/// rayon pool; members come back in trajectory-index order and each one's
/// randomness is fully determined by (master_seed, unravelling, beta_index,
/// trajectory index), so the output is identical for any worker count.
pub fn run_ensemble(plan: &EnsemblePlan) -> Result<Vec<EnsembleMember>> {
    plan.params.validate()?;
    plan.opts.validate()?;
    plan.check_guard(plan.trajectories as u64)?;
    let model = SystemModel::duffing_pair(plan.params, plan.n_levels)?;
    let pool = ensemble_pool(plan);
    (0..plan.trajectories)
        .into_par_iter()
        .map(|i| run_member(plan, &model, &pool, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan() -> EnsemblePlan {
        // beta = 1 attractor packets shed a boundary tail near 1e-4 while
        // reshaping under the quartic during the first period, then settle
        // around 1e-8 at 32 levels; the threshold only needs to clear the
        // transient. The quartic edge rows need 4096 steps per period at
        // this size to stay inside the integrator stability bound.
        EnsemblePlan {
            params: DuffingParams {
                beta: 1.0,
                ..DuffingParams::default()
            },
            n_levels: 32,
            trajectories: 3,
            master_seed: 42,
            beta_index: 0,
            opts: TrajectoryOptions {
                spp: 4096,
                periods: 0.5,
                sample_every: 256,
                leakage_threshold: 1e-3,
                ..TrajectoryOptions::default()
            },
            guard_max_dim_traj: DEFAULT_GUARD_MAX_DIM_TRAJ,
        }
    }

    #[test]
    fn seed_chain_separates_every_level() {
        let base = derive_trajectory_seed(1, TAG_QSD, 0, 0);
        assert_ne!(base, derive_trajectory_seed(2, TAG_QSD, 0, 0));
        assert_ne!(base, derive_trajectory_seed(1, TAG_JUMPS, 0, 0));
        assert_ne!(base, derive_trajectory_seed(1, TAG_QSD, 1, 0));
        assert_ne!(base, derive_trajectory_seed(1, TAG_QSD, 0, 1));
    }

    #[test]
    fn trajectory_produces_expected_sample_grid() {
        let plan = small_plan();
        let members = run_ensemble(&plan).unwrap();
        assert_eq!(members.len(), 3);
        for m in &members {
            assert!(m.data.abort.is_none(), "abort: {:?}", m.data.abort);
            // 0.5 periods at stride 256 of 4096: samples at k = 0..=8
            assert_eq!(m.data.samples.len(), 9);
            assert_eq!(m.data.samples[0].tau, 0.0);
            assert_eq!(m.data.samples[8].tau, 0.5);
            for s in &m.data.samples {
                assert!(s.entropy >= -1e-12, "entropy {}", s.entropy);
                assert!(s.leakage <= 1e-3, "leakage {}", s.leakage);
            }
        }
    }

    #[test]
    fn zero_span_emits_single_sample() {
        let mut plan = small_plan();
        plan.opts.periods = 0.0;
        plan.trajectories = 2;
        let members = run_ensemble(&plan).unwrap();
        for m in &members {
            assert_eq!(m.data.samples.len(), 1);
            assert_eq!(m.data.samples[0].tau, 0.0);
            assert!(m.data.abort.is_none());
        }
    }

    #[test]
    fn ensembles_are_deterministic_and_seed_sensitive() {
        let plan = small_plan();
        let a = run_ensemble(&plan).unwrap();
        let b = run_ensemble(&plan).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.seed, y.seed);
            assert_eq!(x.data.samples, y.data.samples);
        }
        let mut other = small_plan();
        other.master_seed = 43;
        let c = run_ensemble(&other).unwrap();
        assert_ne!(a[0].data.samples, c[0].data.samples);
    }

    #[test]
    fn jump_ensemble_records_events() {
        let mut plan = small_plan();
        plan.opts.unravelling = Unravelling::Jumps;
        plan.opts.periods = 2.0;
        plan.trajectories = 6;
        let members = run_ensemble(&plan).unwrap();
        let total_jumps: usize = members.iter().map(|m| m.data.jumps.len()).sum();
        // <n> is order one on the attractor at beta = 1, so 2 gamma <n> t
        // over 12 trajectory-periods gives a handful of events
        assert!(total_jumps > 0, "no jumps recorded across the ensemble");
        for m in &members {
            for j in &m.data.jumps {
                assert!(j.tau > 0.0 && j.tau <= 2.0);
                assert!(j.channel < 2);
            }
        }
    }

    #[test]
    fn resource_guard_refuses_oversized_plans() {
        let mut plan = small_plan();
        plan.guard_max_dim_traj = 100;
        match run_ensemble(&plan) {
            Err(Error::ResourceGuard(_)) => {}
            other => panic!("expected resource guard, got {other:?}"),
        }
    }

    #[test]
    fn leakage_gate_aborts_undersized_space() {
        // attractor amplitudes need far more than 6 levels at beta = 1
        let mut plan = small_plan();
        plan.n_levels = 6;
        let err = run_ensemble(&plan).unwrap_err();
        match err {
            // the coherent-state gate fires while building psi0
            Error::Truncation { .. } => {}
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn recentered_run_tracks_fixed_frame_run() {
        // same physical trajectory demands matched noise, which recentering
        // preserves because frame shifts consume no draws; compare observables
        let params = DuffingParams {
            beta: 0.5,
            ..DuffingParams::default()
        };
        let model_fixed = SystemModel::duffing_pair(params, 30).unwrap();
        let model_moving = SystemModel::duffing_pair(params, 30).unwrap();
        let alphas = [
            Complex64::new(0.6, 0.2),
            Complex64::new(-0.4, 0.1),
        ];
        let opts_fixed = TrajectoryOptions {
            spp: 2048,
            periods: 0.25,
            sample_every: 64,
            ..TrajectoryOptions::default()
        };
        let opts_moving = TrajectoryOptions {
            recenter: true,
            ..opts_fixed.clone()
        };
        let mut rng1 = ChaCha8Rng::seed_from_u64(9);
        let mut rng2 = ChaCha8Rng::seed_from_u64(9);
        let psi_fixed = coherent_state(model_fixed.space(), &alphas).unwrap();
        let fixed = run_trajectory(&model_fixed, psi_fixed, None, &opts_fixed, &mut rng1).unwrap();
        let psi0 = StateVector::basis_state(model_moving.space(), &[0, 0]).unwrap();
        let moving = run_trajectory(
            &model_moving,
            psi0,
            Some(Frame::new(alphas.to_vec())),
            &opts_moving,
            &mut rng2,
        )
        .unwrap();
        assert_eq!(fixed.samples.len(), moving.samples.len());
        // residual is the truncated-displacement boundary error of one
        // recenter per step, far below any covariance defect
        for (a, b) in fixed.samples.iter().zip(&moving.samples) {
            assert!((a.q1 - b.q1).abs() < 2e-6, "q1 {} vs {}", a.q1, b.q1);
            assert!((a.p2 - b.p2).abs() < 2e-6, "p2 {} vs {}", a.p2, b.p2);
            assert!((a.entropy - b.entropy).abs() < 2e-6);
        }
    }
}
