use num_complex::Complex64;
use qduff::ensemble::{run_trajectory, TrajectoryOptions};
use qduff::hilbert::{coherent_state, Frame, StateVector};
use qduff::model::{DuffingParams, SystemModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The moving basis must be a pure change of description: a recentered run
/// and a fixed-frame run in a basis large enough to hold the displaced
/// packet see the same noise stream (frame maintenance draws nothing), so
/// their physical observables agree to truncation accuracy.
#[test]
fn moving_and_fixed_frames_agree_on_observables() {
    let params = DuffingParams {
        beta: 0.25,
        ..DuffingParams::default()
    };
    // packets near the two well bottoms q = +-1/beta, where the local
    // curvature is positive and the recentered residual stays compact
    let alphas = [
        Complex64::new(2.828, 0.212),
        Complex64::new(-2.687, -0.354),
    ];
    let opts_fixed = TrajectoryOptions {
        spp: 2048,
        periods: 2.0,
        sample_every: 128,
        // boundary mass stays orders below the 1e-4 observable tolerance
        leakage_threshold: 1e-4,
        ..TrajectoryOptions::default()
    };
    let opts_moving = TrajectoryOptions {
        recenter: true,
        ..opts_fixed.clone()
    };

    let model_fixed = SystemModel::duffing_pair(params, 48).unwrap();
    let psi_fixed = coherent_state(model_fixed.space(), &alphas).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let fixed = run_trajectory(&model_fixed, psi_fixed, None, &opts_fixed, &mut rng).unwrap();

    let model_moving = SystemModel::duffing_pair(params, 40).unwrap();
    let psi_moving = StateVector::basis_state(model_moving.space(), &[0, 0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let moving = run_trajectory(
        &model_moving,
        psi_moving,
        Some(Frame::new(alphas.to_vec())),
        &opts_moving,
        &mut rng,
    )
    .unwrap();

    assert!(fixed.abort.is_none(), "fixed: {:?}", fixed.abort);
    assert!(moving.abort.is_none(), "moving: {:?}", moving.abort);
    assert_eq!(fixed.samples.len(), moving.samples.len());
    let mut worst_qp = 0.0f64;
    let mut worst_entropy = 0.0f64;
    for (a, b) in fixed.samples.iter().zip(&moving.samples) {
        assert_eq!(a.tau, b.tau);
        for (x, y) in [(a.q1, b.q1), (a.p1, b.p1), (a.q2, b.q2), (a.p2, b.p2)] {
            worst_qp = worst_qp.max((x - y).abs());
        }
        worst_entropy = worst_entropy.max((a.entropy - b.entropy).abs());
    }
    assert!(worst_qp < 1e-4, "phase-space mismatch {worst_qp:.3e}");
    assert!(worst_entropy < 1e-4, "entropy mismatch {worst_entropy:.3e}");
}
