//! Command-line front end. One flat config document drives all three
//! subcommands, and for a fixed config every output file is byte-stable,
//! whatever the worker count.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::analysis::{detect_entrainment, phase_means};
use crate::classical::{attractor_trace, DEFAULT_STEPS_PER_PERIOD};
use crate::config::RunConfig;
use crate::ensemble::{
    derive_trajectory_seed, draw_initial_strobes, ensemble_pool, run_ensemble, run_member,
    EnsembleMember,
};
use crate::model::SystemModel;
use crate::record::{SweepRow, SweepSummary, TrajectoryRecord};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser, Debug)]
#[command(
    name = "qduff",
    version,
    about = "Quantum trajectories of two coupled, damped, driven Duffing oscillators"
)]
pub struct Cli {
    /// Worker threads for ensemble runs; 0 keeps the library default.
    /// Outputs are identical for any value.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate one stochastic trajectory and write its record.
    Trajectory { config: PathBuf },
    /// Run ensembles across the beta list and write a summary table.
    Sweep { config: PathBuf },
    /// Write classical reference data: attractor trace, period strobes,
    /// and sampled initial conditions.
    Classical { config: PathBuf },
}

/// Entry point behind `main`; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if cli.workers > 0 {
        // repeat initialization (tests drive run() in-process) keeps the
        // first pool; sizing is best-effort and never affects results
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
    }
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("qduff: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Trajectory { config } => cmd_trajectory(&RunConfig::from_file(config)?),
        Command::Sweep { config } => cmd_sweep(&RunConfig::from_file(config)?),
        Command::Classical { config } => cmd_classical(&RunConfig::from_file(config)?),
    }
}

/// Record header: the config echoed verbatim plus the resolved per-run
/// settings and this trajectory's seed lineage.
fn build_record(
    cfg: &RunConfig,
    beta_index: usize,
    beta: f64,
    traj_index: usize,
    member: &EnsembleMember,
) -> TrajectoryRecord {
    let mut meta: BTreeMap<String, String> = cfg.echo_pairs().into_iter().collect();
    let opts = cfg.options_for(beta);
    meta.insert("beta".into(), beta.to_string());
    meta.insert("beta_index".into(), beta_index.to_string());
    meta.insert("trajectory_index".into(), traj_index.to_string());
    meta.insert("trajectory_seed".into(), member.seed.to_string());
    for (key, a) in [("alpha1", member.alphas[0]), ("alpha2", member.alphas[1])] {
        meta.insert(key.into(), format!("{} {}", a.re, a.im));
    }
    meta.insert("resolved_spp".into(), opts.spp.to_string());
    meta.insert(
        "resolved_sample_every".into(),
        opts.sample_every.to_string(),
    );
    meta.insert(
        "resolved_recenter".into(),
        if opts.recenter { "on" } else { "off" }.into(),
    );
    TrajectoryRecord {
        meta,
        data: member.data.clone(),
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn trajectory_console(
    cfg: &RunConfig,
    beta: f64,
    member: &EnsembleMember,
    w: &mut impl Write,
) -> Result<()> {
    let d = &member.data;
    writeln!(
        w,
        "beta {beta}  seed {}  samples {}  jumps {}",
        member.seed,
        d.samples.len(),
        d.jumps.len()
    )?;
    if let Some(a) = &d.abort {
        writeln!(w, "aborted at t = {} periods: {}", a.tau, a.reason)?;
    }
    let onset = detect_entrainment(&d.samples, beta, cfg.window, cfg.threshold);
    let means = phase_means(&d.samples, onset, cfg.guard);
    match onset {
        Some(t) => writeln!(
            w,
            "entrainment onset at {t} periods; mean E roaming {}, locked {} nats",
            fmt_opt(means.chaotic),
            fmt_opt(means.entrained)
        )?,
        None => writeln!(
            w,
            "no entrainment detected; mean E {} nats",
            fmt_opt(means.chaotic)
        )?,
    }
    Ok(())
}

fn cmd_trajectory(cfg: &RunConfig) -> Result<i32> {
    if cfg.betas.len() != 1 {
        return Err(Error::Config(
            "trajectory runs take a single beta; use the sweep command for lists".into(),
        ));
    }
    let plan = cfg.plan_for(0)?;
    plan.check_guard(1)?;
    let model = SystemModel::duffing_pair(plan.params, plan.n_levels)?;
    let pool = ensemble_pool(&plan);
    let member = run_member(&plan, &model, &pool, 0)?;
    let record = build_record(cfg, 0, plan.params.beta, 0, &member);
    match &cfg.out {
        Some(path) => {
            record.write_to_path(path)?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "wrote {}", path.display())?;
            trajectory_console(cfg, plan.params.beta, &member, &mut out)?;
        }
        None => {
            record.write_to(&mut std::io::stdout().lock())?;
            trajectory_console(cfg, plan.params.beta, &member, &mut std::io::stderr().lock())?;
        }
    }
    Ok(if member.data.abort.is_some() { 3 } else { 0 })
}

fn mean_se(values: &[f64]) -> (Option<f64>, Option<f64>) {
    match values.len() {
        0 => (None, None),
        1 => (Some(values[0]), None),
        n => {
            let n = n as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (Some(mean), Some((var / n).sqrt()))
        }
    }
}

fn summarize(cfg: &RunConfig, beta: f64, members: &[EnsembleMember]) -> SweepRow {
    let mut chaotic = Vec::new();
    let mut entrained = Vec::new();
    let (mut labeled, mut unlabeled, mut aborted) = (0, 0, 0);
    for m in members {
        if m.data.abort.is_some() {
            aborted += 1;
            continue;
        }
        let onset = detect_entrainment(&m.data.samples, beta, cfg.window, cfg.threshold);
        if onset.is_some() {
            labeled += 1;
        } else {
            unlabeled += 1;
        }
        let pm = phase_means(&m.data.samples, onset, cfg.guard);
        chaotic.extend(pm.chaotic);
        entrained.extend(pm.entrained);
    }
    let (c_mean, c_se) = mean_se(&chaotic);
    let (e_mean, e_se) = mean_se(&entrained);
    SweepRow {
        beta,
        unravelling: cfg.unravelling.as_str().into(),
        e_chaotic_mean: c_mean,
        e_chaotic_se: c_se,
        e_entrained_mean: e_mean,
        e_entrained_se: e_se,
        n_labeled: labeled,
        n_unlabeled: unlabeled,
        n_aborted: aborted,
    }
}

fn cmd_sweep(cfg: &RunConfig) -> Result<i32> {
    if let Some(dir) = &cfg.records_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut summary = SweepSummary::default();
    for bi in 0..cfg.betas.len() {
        let plan = cfg.plan_for(bi)?;
        let members = run_ensemble(&plan)?;
        if let Some(dir) = &cfg.records_dir {
            for (ti, m) in members.iter().enumerate() {
                let record = build_record(cfg, bi, plan.params.beta, ti, m);
                record.write_to_path(&dir.join(format!("b{bi:02}_t{ti:04}.txt")))?;
            }
        }
        let row = summarize(cfg, plan.params.beta, &members);
        eprintln!(
            "beta {}: {} trajectories, {} labeled, {} aborted",
            plan.params.beta,
            members.len(),
            row.n_labeled,
            row.n_aborted
        );
        summary.rows.push(row);
    }
    match &cfg.out {
        Some(path) => summary.write_to_path(path)?,
        None => summary.write_to(&mut std::io::stdout().lock())?,
    }
    Ok(0)
}

fn cmd_classical(cfg: &RunConfig) -> Result<i32> {
    let dir = cfg.out.as_ref().ok_or_else(|| {
        Error::Config("classical runs write three files; set 'out' to a directory".into())
    })?;
    std::fs::create_dir_all(dir)?;
    let plan = cfg.plan_for(0)?;
    let params = plan.params;

    let trace = attractor_trace(&params, cfg.t_max, DEFAULT_STEPS_PER_PERIOD);
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("attractor.csv"))?);
    writeln!(w, "# qduff classical attractor v1")?;
    writeln!(w, "t_periods,x,y")?;
    for (tau, [x, y]) in &trace {
        writeln!(w, "{tau},{x},{y}")?;
    }
    w.flush()?;

    let pool = ensemble_pool(&plan);
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("poincare.csv"))?);
    writeln!(w, "# qduff classical poincare v1")?;
    writeln!(w, "index,x,y")?;
    for (i, [x, y]) in pool.iter().enumerate() {
        writeln!(w, "{i},{x},{y}")?;
    }
    w.flush()?;

    let mut w =
        std::io::BufWriter::new(std::fs::File::create(dir.join("initial_conditions.csv"))?);
    writeln!(w, "# qduff classical initial conditions v1")?;
    writeln!(w, "index,seed,x1,y1,x2,y2")?;
    for i in 0..cfg.trajectories {
        let seed = derive_trajectory_seed(cfg.seed, plan.tag(), 0, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [[x1, y1], [x2, y2]] = draw_initial_strobes(&pool, &mut rng);
        writeln!(w, "{i},{seed},{x1},{y1},{x2},{y2}")?;
    }
    w.flush()?;

    eprintln!(
        "wrote attractor.csv ({} points), poincare.csv ({} strobes), \
         initial_conditions.csv ({} rows) to {}",
        trace.len(),
        pool.len(),
        cfg.trajectories,
        dir.display()
    );
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{Abort, Sample, TrajectoryData};
    use num_complex::Complex64;

    #[test]
    fn mean_se_handles_small_samples() {
        assert_eq!(mean_se(&[]), (None, None));
        assert_eq!(mean_se(&[0.7]), (Some(0.7), None));
        let (m, se) = mean_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert!((se.unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    fn flat_member(entropy: f64, aborted: bool) -> EnsembleMember {
        let samples = (0..=48)
            .map(|i| Sample {
                tau: i as f64 * 0.25,
                q1: 2.0,
                p1: 0.0,
                q2: -2.0,
                p2: 0.0,
                entropy,
                leakage: 0.0,
            })
            .collect();
        EnsembleMember {
            seed: 1,
            alphas: [Complex64::new(0.0, 0.0); 2],
            data: TrajectoryData {
                samples,
                jumps: vec![],
                abort: aborted.then(|| Abort {
                    tau: 12.0,
                    reason: "test".into(),
                }),
            },
        }
    }

    #[test]
    fn summary_rows_count_phases_and_aborts() {
        let cfg = RunConfig::parse_str("beta = 0.5\nlevels = 20\nt_max = 2\nseed = 7\n").unwrap();
        // constant records label as entrained from the start
        let members = vec![
            flat_member(0.3, false),
            flat_member(0.5, false),
            flat_member(9.9, true),
        ];
        let row = summarize(&cfg, 0.5, &members);
        assert_eq!(row.n_labeled, 2);
        assert_eq!(row.n_unlabeled, 0);
        assert_eq!(row.n_aborted, 1);
        assert!((row.e_entrained_mean.unwrap() - 0.4).abs() < 1e-12);
        // onset at zero leaves nothing ahead of the guard band
        assert_eq!(row.e_chaotic_mean, None);
    }

    #[test]
    fn record_header_carries_lineage_and_resolution() {
        let cfg = RunConfig::parse_str("beta = 0.1\nlevels = 16\nt_max = 1\nseed = 3\n").unwrap();
        let rec = build_record(&cfg, 0, 0.1, 4, &flat_member(0.0, false));
        assert_eq!(rec.meta["beta"], "0.1");
        assert_eq!(rec.meta["trajectory_index"], "4");
        assert_eq!(rec.meta["resolved_spp"], "4096");
        assert_eq!(rec.meta["resolved_recenter"], "on");
        assert_eq!(rec.meta["recenter"], "auto");
        assert_eq!(rec.meta["seed"], "3");
        assert_eq!(rec.meta["trajectory_seed"], "1");
    }
}
