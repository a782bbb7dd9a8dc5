//! Scratch calibration runs. Not part of the library surface.

use std::time::Instant;

use qduff::analysis::{detect_entrainment, phase_means, default_threshold};
use qduff::classical::{attractor_strobes, integrate_twin, DEFAULT_STEPS_PER_PERIOD};
use qduff::ensemble::{
    draw_initial_strobes, ensemble_pool, run_member, EnsemblePlan, TrajectoryOptions,
    Unravelling, DEFAULT_GUARD_MAX_DIM_TRAJ,
};
use qduff::jumps::JumpScheme;
use qduff::model::{DuffingParams, SystemModel};
use qduff::record::Sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn classical_onsets(n_ics: usize, periods: usize) {
    let params = DuffingParams::default();
    let pool = attractor_strobes(&params, 256, DEFAULT_STEPS_PER_PERIOD);
    let beta = 0.25;
    let spp = 64usize;
    let stride = 2usize;
    for i in 0..n_ics {
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let [a, b] = draw_initial_strobes(&pool, &mut rng);
        let trace = integrate_twin(&params, [a[0], a[1], b[0], b[1]], periods, spp, stride);
        let samples: Vec<Sample> = trace
            .iter()
            .map(|(tau, s)| Sample {
                tau: *tau,
                q1: s[0] / beta,
                p1: s[1] / beta,
                q2: s[2] / beta,
                p2: s[3] / beta,
                entropy: 0.0,
                leakage: 0.0,
            })
            .collect();
        let onset = detect_entrainment(&samples, beta, 8.0, default_threshold());
        println!("ic {i:2}  onset {:?}", onset);
    }
}

#[allow(clippy::too_many_arguments)]
fn quantum(
    beta: f64,
    n_levels: usize,
    spp: usize,
    threshold: f64,
    recenter: bool,
    periods: f64,
    n_traj: usize,
    unravelling: Unravelling,
) {
    let plan = EnsemblePlan {
        params: DuffingParams {
            beta,
            ..DuffingParams::default()
        },
        n_levels,
        trajectories: n_traj,
        master_seed: 7070,
        beta_index: 0,
        opts: TrajectoryOptions {
            unravelling,
            jump_scheme: JumpScheme::Bernoulli,
            spp,
            periods,
            sample_every: spp / 32,
            recenter,
            leakage_threshold: threshold,
            ..TrajectoryOptions::default()
        },
        guard_max_dim_traj: DEFAULT_GUARD_MAX_DIM_TRAJ,
    };
    let model = SystemModel::duffing_pair(plan.params, plan.n_levels).unwrap();
    let pool = ensemble_pool(&plan);
    for i in 0..n_traj {
        let t0 = Instant::now();
        let m = run_member(&plan, &model, &pool, i).unwrap();
        let wall = t0.elapsed().as_secs_f64();
        let max_leak = m
            .data
            .samples
            .iter()
            .map(|s| s.leakage)
            .fold(0.0f64, f64::max);
        let onset = detect_entrainment(&m.data.samples, beta, 8.0, default_threshold());
        let pm = phase_means(&m.data.samples, onset, 2.0);
        for th in [0.2, 0.3, 0.5, 0.8] {
            let o = detect_entrainment(&m.data.samples, beta, 8.0, th);
            println!("  threshold {th}: onset {o:?}");
        }
        println!(
            "traj {i:2}  {:>6.1}s  abort {:?}  max_leak {max_leak:.2e}  onset {:?}  E_c {:?}  E_e {:?}  jumps {}",
            wall,
            m.data.abort.as_ref().map(|a| (a.tau, a.reason.clone())),
            onset,
            pm.chaotic,
            pm.entrained,
            m.data.jumps.len(),
        );
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let f = |k: usize| -> f64 { args[k].parse().unwrap() };
    let u = |k: usize| -> usize { args[k].parse().unwrap() };
    match args[1].as_str() {
        "classical" => classical_onsets(u(2), u(3)),
        "quantum" => {
            let unr = if args.get(9).map(|s| s.as_str()) == Some("jumps") {
                Unravelling::Jumps
            } else {
                Unravelling::Qsd
            };
            quantum(f(2), u(3), u(4), f(5), args[6] == "true", f(7), u(8), unr);
        }
        other => panic!("unknown mode {other}"),
    }
}
