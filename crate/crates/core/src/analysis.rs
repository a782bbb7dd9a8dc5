//! Entrainment detection and phase statistics on sampled trajectories.
//!
//! The coupled pair has two regimes: an extended, erratic phase where the
//! oscillators roam their single-well attractors, and an entrained phase
//! where both lock onto a drive-periodic orbit in opposite wells. The
//! detector works in the amplitude-scaled coordinates x = beta q, y = beta p
//! (where the classical flow and the locked orbit are independent of beta)
//! and flags the lock through two movement measures over a trailing window:
//! strobe-to-strobe drift of each oscillator, and the change of the relative
//! coordinate across one drive period at full sample cadence. Both vanish on
//! a period-one orbit; quantum expectation values keep a small noise floor,
//! which the threshold must sit above.

use crate::record::Sample;

/// Trailing window length over which movement is measured, in drive periods.
pub const ENTRAINMENT_WINDOW_PERIODS: f64 = 8.0;

/// Samples within this margin of the detected onset belong to neither phase.
pub const ENTRAINMENT_GUARD_PERIODS: f64 = 2.0;

/// Bounding-box diagonal of the uncoupled attractor strobe set in scaled
/// coordinates; sets the scale that movement is judged against.
pub const ATTRACTOR_DIAMETER: f64 = 2.93;

/// Movement below this fraction of the attractor diameter counts as locked.
pub const THRESHOLD_FRACTION: f64 = 0.05;

pub fn default_threshold() -> f64 {
    THRESHOLD_FRACTION * ATTRACTOR_DIAMETER
}

/// Movement measure at each integer-period strobe of an evenly sampled
/// record, in scaled coordinates. Returns (strobe period numbers, r values).
fn movement_series(
    samples: &[Sample],
    beta: f64,
    window: f64,
) -> Option<(Vec<usize>, Vec<f64>)> {
    if samples.len() < 2 || !(beta > 0.0) || !(window > 0.0) {
        return None;
    }
    let dt = samples[1].tau - samples[0].tau;
    if !(dt > 0.0) {
        return None;
    }
    let sp = (1.0 / dt).round();
    // need the grid to start at zero, stay even, and resolve one period
    if sp < 1.0 || (sp * dt - 1.0).abs() > 1e-9 || samples[0].tau.abs() > 1e-9 {
        return None;
    }
    for (i, s) in samples.iter().enumerate() {
        if (s.tau - i as f64 * dt).abs() > 1e-9 {
            return None;
        }
    }
    let sp = sp as usize;
    let pts: Vec<[f64; 4]> = samples
        .iter()
        .map(|s| [beta * s.q1, beta * s.p1, beta * s.q2, beta * s.p2])
        .collect();
    let n_strobes = (pts.len() - 1) / sp + 1;
    if n_strobes < 2 {
        return None;
    }
    let wlen = (window * sp as f64).round() as usize;
    let mut periods = Vec::with_capacity(n_strobes);
    let mut rs = Vec::with_capacity(n_strobes);
    for k in 0..n_strobes {
        let b = k * sp;
        let start = b.saturating_sub(wlen);
        let mut acc_strobe = 0.0;
        let mut n_strobe = 0usize;
        let mut j = b;
        while j >= sp + start {
            let (a, c) = (&pts[j - sp], &pts[j]);
            acc_strobe += (c[0] - a[0]).powi(2) + (c[1] - a[1]).powi(2);
            acc_strobe += (c[2] - a[2]).powi(2) + (c[3] - a[3]).powi(2);
            n_strobe += 2;
            j -= sp;
        }
        let mut acc_rel = 0.0;
        let mut n_rel = 0usize;
        for i in (start + 1..=b).rev() {
            if i < sp {
                break;
            }
            let (a, c) = (&pts[i - sp], &pts[i]);
            let dx = (c[0] - c[2]) - (a[0] - a[2]);
            let dy = (c[1] - c[3]) - (a[1] - a[3]);
            acc_rel += 0.5 * (dx * dx + dy * dy);
            n_rel += 1;
        }
        let rms = |acc: f64, n: usize| if n == 0 { 0.0 } else { (acc / n as f64).sqrt() };
        periods.push(k);
        rs.push(rms(acc_strobe, n_strobe).max(rms(acc_rel, n_rel)));
    }
    Some((periods, rs))
}

/// Earliest strobe time from which the movement measure stays at or below
/// `threshold` for the rest of the record. None when the record never locks
/// in view, or is too short or unevenly sampled to assess.
pub fn detect_entrainment(
    samples: &[Sample],
    beta: f64,
    window: f64,
    threshold: f64,
) -> Option<f64> {
    let (periods, rs) = movement_series(samples, beta, window)?;
    let mut onset = None;
    let mut suffix_max = f64::MIN;
    for (&k, &r) in periods.iter().zip(&rs).rev() {
        suffix_max = suffix_max.max(r);
        if suffix_max <= threshold {
            onset = Some(k as f64);
        }
    }
    onset
}

/// Mean entanglement entropy of each phase, keeping a guard band of
/// `guard` periods around the onset out of both. Without an onset the whole
/// record counts as the roaming phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseMeans {
    pub chaotic: Option<f64>,
    pub entrained: Option<f64>,
}

pub fn phase_means(samples: &[Sample], onset: Option<f64>, guard: f64) -> PhaseMeans {
    let mean = |lo: f64, hi: f64| {
        let mut acc = 0.0;
        let mut n = 0usize;
        for s in samples {
            if s.tau >= lo && s.tau <= hi {
                acc += s.entropy;
                n += 1;
            }
        }
        (n > 0).then(|| acc / n as f64)
    };
    match onset {
        Some(t) => PhaseMeans {
            chaotic: mean(f64::MIN, t - guard),
            entrained: mean(t + guard, f64::MAX),
        },
        None => PhaseMeans {
            chaotic: mean(f64::MIN, f64::MAX),
            entrained: None,
        },
    }
}

/// Least-squares fit of E = amplitude * exp(rate * beta) through log-space.
#[derive(Clone, Copy, Debug)]
pub struct ExpFit {
    pub amplitude: f64,
    pub rate: f64,
    pub rms_log_residual: f64,
}

pub fn fit_exponential(points: &[(f64, f64)]) -> Option<ExpFit> {
    if points.len() < 2 || points.iter().any(|&(_, e)| !(e > 0.0)) {
        return None;
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, e) in points {
        let y = e.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let det = n * sxx - sx * sx;
    if det.abs() < 1e-12 * (n * sxx).abs().max(1.0) {
        return None;
    }
    let rate = (n * sxy - sx * sy) / det;
    let intercept = (sy - rate * sx) / n;
    let mut ss = 0.0;
    for &(x, e) in points {
        ss += (e.ln() - intercept - rate * x).powi(2);
    }
    Some(ExpFit {
        amplitude: intercept.exp(),
        rate,
        rms_log_residual: (ss / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{
        attractor_strobes, integrate_twin, TwinState, DEFAULT_STEPS_PER_PERIOD,
    };
    use crate::model::DuffingParams;

    fn samples_from_trace(trace: &[(f64, TwinState)], beta: f64) -> Vec<Sample> {
        trace
            .iter()
            .map(|&(tau, [x1, y1, x2, y2])| Sample {
                tau,
                q1: x1 / beta,
                p1: y1 / beta,
                q2: x2 / beta,
                p2: y2 / beta,
                entropy: 0.0,
                leakage: 0.0,
            })
            .collect()
    }

    fn coupled_trace(mu: f64, periods: usize) -> Vec<(f64, TwinState)> {
        let params = DuffingParams {
            mu,
            ..DuffingParams::default()
        };
        let pool = attractor_strobes(&params, 8, DEFAULT_STEPS_PER_PERIOD);
        let s0 = [pool[0][0], pool[0][1], pool[5][0], pool[5][1]];
        // 8 samples per period
        integrate_twin(&params, s0, periods, DEFAULT_STEPS_PER_PERIOD, 32)
    }

    #[test]
    fn locked_classical_pair_is_detected() {
        let trace = coupled_trace(0.2, 40);
        let samples = samples_from_trace(&trace, 0.25);
        let onset = detect_entrainment(
            &samples,
            0.25,
            ENTRAINMENT_WINDOW_PERIODS,
            default_threshold(),
        )
        .expect("coupled pair locks within 40 periods");
        assert!(
            (1.0..=35.0).contains(&onset),
            "implausible onset {onset}"
        );
    }

    #[test]
    fn detection_is_scale_invariant() {
        let trace = coupled_trace(0.2, 40);
        let a = detect_entrainment(
            &samples_from_trace(&trace, 0.25),
            0.25,
            ENTRAINMENT_WINDOW_PERIODS,
            default_threshold(),
        );
        let b = detect_entrainment(
            &samples_from_trace(&trace, 0.1),
            0.1,
            ENTRAINMENT_WINDOW_PERIODS,
            default_threshold(),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn uncoupled_pair_is_never_detected() {
        let trace = coupled_trace(0.0, 40);
        let samples = samples_from_trace(&trace, 0.25);
        let onset = detect_entrainment(
            &samples,
            0.25,
            ENTRAINMENT_WINDOW_PERIODS,
            default_threshold(),
        );
        assert_eq!(onset, None);
    }

    #[test]
    fn already_locked_record_detects_at_zero() {
        let samples: Vec<Sample> = (0..=48)
            .map(|i| Sample {
                tau: i as f64 * 0.25,
                q1: 4.0,
                p1: -1.0,
                q2: -4.0,
                p2: 1.0,
                entropy: 0.0,
                leakage: 0.0,
            })
            .collect();
        let onset = detect_entrainment(&samples, 0.25, 8.0, 0.1465);
        assert_eq!(onset, Some(0.0));
    }

    #[test]
    fn strobe_cadence_records_are_supported() {
        // one sample per period is the coarsest grid the detector accepts
        let trace = coupled_trace(0.2, 40);
        let strobed: Vec<(f64, TwinState)> = trace
            .into_iter()
            .filter(|(t, _)| (t - t.round()).abs() < 1e-12)
            .collect();
        let samples = samples_from_trace(&strobed, 0.25);
        let onset = detect_entrainment(
            &samples,
            0.25,
            ENTRAINMENT_WINDOW_PERIODS,
            default_threshold(),
        );
        assert!(onset.is_some());
    }

    #[test]
    fn phase_means_respect_guard_band() {
        let samples: Vec<Sample> = (0..=80)
            .map(|i| {
                let tau = i as f64 * 0.25;
                Sample {
                    tau,
                    q1: 0.0,
                    p1: 0.0,
                    q2: 0.0,
                    p2: 0.0,
                    entropy: if tau < 10.0 { 1.0 } else { 0.2 },
                    leakage: 0.0,
                }
            })
            .collect();
        let means = phase_means(&samples, Some(10.0), 2.0);
        assert_eq!(means.chaotic, Some(1.0));
        assert!((means.entrained.unwrap() - 0.2).abs() < 1e-12);

        let whole = phase_means(&samples, None, 2.0);
        assert!(whole.chaotic.is_some());
        assert_eq!(whole.entrained, None);
        let overall = whole.chaotic.unwrap();
        assert!(overall < 1.0 && overall > 0.2);

        // a late onset leaves no entrained samples past the guard
        let clipped = phase_means(&samples, Some(19.5), 2.0);
        assert_eq!(clipped.entrained, None);
    }

    #[test]
    fn exponential_fit_recovers_parameters() {
        let a = 0.13f64;
        let c = 2.1f64;
        let points: Vec<(f64, f64)> = [0.25, 0.5, 1.0]
            .iter()
            .map(|&b| (b, a * (c * b).exp()))
            .collect();
        let fit = fit_exponential(&points).unwrap();
        assert!((fit.amplitude - a).abs() < 1e-12);
        assert!((fit.rate - c).abs() < 1e-12);
        assert!(fit.rms_log_residual < 1e-12);
    }

    #[test]
    fn exponential_fit_rejects_degenerate_input() {
        assert!(fit_exponential(&[(0.5, 1.0)]).is_none());
        assert!(fit_exponential(&[(0.5, 1.0), (0.5, 2.0)]).is_none());
        assert!(fit_exponential(&[(0.25, 0.0), (0.5, 1.0)]).is_none());
    }
}
