//! Classical counterpart of the quantum model in scaled coordinates
//! x = beta <q>, y = beta <p>, where the flow is independent of beta:
//!
//!   dx_i/dt = y_i
//!   dy_i/dt = x_i - x_i^3 - 2 Gamma y_i - g cos(t) - mu x_j
//!
//! with t in radians. The public API takes time in drive periods like the
//! quantum layer. The uncoupled oscillator has a chaotic attractor at the
//! default parameters; its period strobes seed trajectory initial conditions
//! and act as the reference set for quantum phase-space statistics.

use rand::Rng;

use crate::model::{cos_two_pi, DuffingParams, RADIANS_PER_PERIOD};

/// [x, y] of one oscillator.
pub type SingleState = [f64; 2];

/// [x1, y1, x2, y2] of the coupled pair.
pub type TwinState = [f64; 4];

pub const DEFAULT_STEPS_PER_PERIOD: usize = 256;

/// Periods discarded before treating the flow as on-attractor.
pub const ATTRACTOR_TRANSIENT_PERIODS: usize = 50;

/// Launch point for attractor strobes; any generic point works, this one is
/// fixed so strobe sets are reproducible.
pub const ATTRACTOR_SEED_POINT: SingleState = [1.0, 0.0];

pub fn single_rhs(params: &DuffingParams, tau: f64, s: SingleState) -> SingleState {
    let [x, y] = s;
    let drive = params.g * cos_two_pi(tau);
    [
        RADIANS_PER_PERIOD * y,
        RADIANS_PER_PERIOD * (x - x * x * x - 2.0 * params.gamma * y - drive),
    ]
}

pub fn twin_rhs(params: &DuffingParams, tau: f64, s: TwinState) -> TwinState {
    let [x1, y1, x2, y2] = s;
    let drive = params.g * cos_two_pi(tau);
    let f = |x: f64, y: f64, xo: f64| x - x * x * x - 2.0 * params.gamma * y - drive - params.mu * xo;
    [
        RADIANS_PER_PERIOD * y1,
        RADIANS_PER_PERIOD * f(x1, y1, x2),
        RADIANS_PER_PERIOD * y2,
        RADIANS_PER_PERIOD * f(x2, y2, x1),
    ]
}

pub fn rk4_step<const N: usize>(
    f: impl Fn(f64, [f64; N]) -> [f64; N],
    tau: f64,
    dtau: f64,
    s: [f64; N],
) -> [f64; N] {
    let add = |a: [f64; N], b: [f64; N], w: f64| {
        let mut out = a;
        for i in 0..N {
            out[i] += w * b[i];
        }
        out
    };
    let k1 = f(tau, s);
    let k2 = f(tau + 0.5 * dtau, add(s, k1, 0.5 * dtau));
    let k3 = f(tau + 0.5 * dtau, add(s, k2, 0.5 * dtau));
    let k4 = f(tau + dtau, add(s, k3, dtau));
    let mut out = s;
    for i in 0..N {
        out[i] += dtau / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// E = y^2/2 - x^2/2 + x^4/4 of one undriven oscillator; decays as
/// dE/dt = -2 Gamma y^2 when g = 0.
pub fn energy(s: SingleState) -> f64 {
    let [x, y] = s;
    0.5 * y * y - 0.5 * x * x + 0.25 * x * x * x * x
}

/// Drive-period strobes of the uncoupled oscillator after the standard
/// transient. Time is tracked as step_index / steps_per_period, so strobes
/// land exactly on integer periods.
pub fn attractor_strobes(
    params: &DuffingParams,
    count: usize,
    steps_per_period: usize,
) -> Vec<SingleState> {
    let spp = steps_per_period;
    let dtau = 1.0 / spp as f64;
    let mut s = ATTRACTOR_SEED_POINT;
    let mut out = Vec::with_capacity(count);
    let total = (ATTRACTOR_TRANSIENT_PERIODS + count) * spp;
    for k in 0..total {
        let tau = k as f64 / spp as f64;
        s = rk4_step(|t, v| single_rhs(params, t, v), tau, dtau, s);
        if (k + 1) % spp == 0 && (k + 1) / spp > ATTRACTOR_TRANSIENT_PERIODS {
            out.push(s);
        }
    }
    out
}

/// Dense post-transient trace of the uncoupled oscillator, one point per
/// step for `periods` drive periods. Time restarts at zero on the attractor,
/// which preserves the drive phase because the transient is a whole number
/// of periods.
pub fn attractor_trace(
    params: &DuffingParams,
    periods: f64,
    steps_per_period: usize,
) -> Vec<(f64, SingleState)> {
    let spp = steps_per_period;
    let dtau = 1.0 / spp as f64;
    let mut s = ATTRACTOR_SEED_POINT;
    for k in 0..ATTRACTOR_TRANSIENT_PERIODS * spp {
        let tau = k as f64 / spp as f64;
        s = rk4_step(|t, v| single_rhs(params, t, v), tau, dtau, s);
    }
    let steps = (periods * spp as f64).round() as usize;
    let mut out = vec![(0.0, s)];
    for k in 0..steps {
        let tau = k as f64 / spp as f64;
        s = rk4_step(|t, v| single_rhs(params, t, v), tau, dtau, s);
        out.push(((k + 1) as f64 / spp as f64, s));
    }
    out
}

/// Draw per-trajectory initial conditions from the uncoupled attractor
/// strobe set (at least 256 strobes, more if `count` asks for more).
pub fn sample_initial_conditions(
    params: &DuffingParams,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<SingleState> {
    let pool = attractor_strobes(params, count.max(256), DEFAULT_STEPS_PER_PERIOD);
    (0..count).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
}

/// Integrate the coupled pair for `periods`, sampling every `sample_every`
/// steps (the initial state is sample zero).
pub fn integrate_twin(
    params: &DuffingParams,
    s0: TwinState,
    periods: usize,
    steps_per_period: usize,
    sample_every: usize,
) -> Vec<(f64, TwinState)> {
    assert!(sample_every >= 1);
    let spp = steps_per_period;
    let dtau = 1.0 / spp as f64;
    let mut s = s0;
    let mut out = vec![(0.0, s0)];
    for k in 0..periods * spp {
        let tau = k as f64 / spp as f64;
        s = rk4_step(|t, v| twin_rhs(params, t, v), tau, dtau, s);
        if (k + 1) % sample_every == 0 {
            out.push(((k + 1) as f64 / spp as f64, s));
        }
    }
    out
}

/// Fraction of `points` within `radius` of some member of `reference`.
pub fn attractor_overlap(
    points: &[SingleState],
    reference: &[SingleState],
    radius: f64,
) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let r2 = radius * radius;
    let hit = points
        .iter()
        .filter(|p| {
            reference
                .iter()
                .any(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) <= r2)
        })
        .count();
    hit as f64 / points.len() as f64
}
