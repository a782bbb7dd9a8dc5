//! Trajectory records and their versioned text format, plus the sweep
//! summary table.
//!
//! Records round-trip exactly: floats are written with 17 significant
//! digits, and the header echoes every run setting as `# key = value` lines
//! sorted by key, so rewriting a parsed record is byte-identical.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::{Error, Result};

pub const RECORD_MAGIC: &str = "# qduff trajectory record v1";
pub const SUMMARY_MAGIC: &str = "# qduff sweep summary v1";

/// One sampled instant along a trajectory. Positions and momenta are
/// physical (lab-frame) expectations in oscillator units; the entropy is the
/// two-mode entanglement entropy in nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub tau: f64,
    pub q1: f64,
    pub p1: f64,
    pub q2: f64,
    pub p2: f64,
    pub entropy: f64,
    pub leakage: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpEvent {
    pub tau: f64,
    pub channel: usize,
}

/// Why a trajectory stopped early. Aborted trajectories stay in the record
/// (and are counted, but excluded from ensemble means).
#[derive(Clone, Debug, PartialEq)]
pub struct Abort {
    pub tau: f64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryData {
    pub samples: Vec<Sample>,
    pub jumps: Vec<JumpEvent>,
    pub abort: Option<Abort>,
}

/// A trajectory plus the settings that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    /// Run settings echoed into the header, `key = value`.
    pub meta: BTreeMap<String, String>,
    pub data: TrajectoryData,
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

impl TrajectoryRecord {
    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        let raw = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Config(format!("record header lacks '{key}'")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("record header '{key} = {raw}' is not a number")))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{RECORD_MAGIC}")?;
        for (k, v) in &self.meta {
            writeln!(w, "# {k} = {v}")?;
        }
        writeln!(w, "# columns: t_periods q1 p1 q2 p2 entropy leakage")?;
        for s in &self.data.samples {
            writeln!(
                w,
                "{} {} {} {} {} {} {}",
                fmt(s.tau),
                fmt(s.q1),
                fmt(s.p1),
                fmt(s.q2),
                fmt(s.p2),
                fmt(s.entropy),
                fmt(s.leakage)
            )?;
        }
        writeln!(w, "# jumps: t_periods channel")?;
        for j in &self.data.jumps {
            writeln!(w, "{} {}", fmt(j.tau), j.channel)?;
        }
        if let Some(a) = &self.data.abort {
            writeln!(w, "# aborted: {} {}", fmt(a.tau), a.reason)?;
        }
        Ok(())
    }

    pub fn write_to_path(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<TrajectoryRecord> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Config("empty record".into()))??;
        if first.trim_end() != RECORD_MAGIC {
            return Err(Error::Config(format!(
                "not a trajectory record (first line {first:?})"
            )));
        }
        let mut meta = BTreeMap::new();
        let mut data = TrajectoryData::default();
        let mut in_jumps = false;
        for line in lines {
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# ") {
                if rest.starts_with("columns:") {
                    continue;
                }
                if rest.starts_with("jumps:") {
                    in_jumps = true;
                    continue;
                }
                if let Some(ab) = rest.strip_prefix("aborted: ") {
                    let (tau_str, reason) = ab
                        .split_once(' ')
                        .ok_or_else(|| Error::Config("malformed abort line".into()))?;
                    data.abort = Some(Abort {
                        tau: parse_f64(tau_str)?,
                        reason: reason.to_string(),
                    });
                    continue;
                }
                if let Some((k, v)) = rest.split_once(" = ") {
                    meta.insert(k.to_string(), v.to_string());
                    continue;
                }
                return Err(Error::Config(format!("unrecognized header line {line:?}")));
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if in_jumps {
                if fields.len() != 2 {
                    return Err(Error::Config(format!("malformed jump line {line:?}")));
                }
                data.jumps.push(JumpEvent {
                    tau: parse_f64(fields[0])?,
                    channel: fields[1]
                        .parse()
                        .map_err(|_| Error::Config(format!("bad channel in {line:?}")))?,
                });
            } else {
                if fields.len() != 7 {
                    return Err(Error::Config(format!(
                        "expected 7 columns, got {} in {line:?}",
                        fields.len()
                    )));
                }
                let v: Vec<f64> = fields
                    .iter()
                    .map(|s| parse_f64(s))
                    .collect::<Result<_>>()?;
                data.samples.push(Sample {
                    tau: v[0],
                    q1: v[1],
                    p1: v[2],
                    q2: v[3],
                    p2: v[4],
                    entropy: v[5],
                    leakage: v[6],
                });
            }
        }
        Ok(TrajectoryRecord { meta, data })
    }

    pub fn read_from_path(path: &std::path::Path) -> Result<TrajectoryRecord> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Config(format!("bad float {s:?} in record")))
}

/// One sweep point: entanglement entropy means split by dynamical phase.
/// `None` fields mean no trajectories contributed to that phase.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub unravelling: String,
    pub e_chaotic_mean: Option<f64>,
    pub e_chaotic_se: Option<f64>,
    pub e_entrained_mean: Option<f64>,
    pub e_entrained_se: Option<f64>,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_aborted: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
}

fn opt(x: Option<f64>) -> String {
    match x {
        Some(v) => fmt(v),
        None => "-".to_string(),
    }
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == "-" {
        Ok(None)
    } else {
        parse_f64(s).map(Some)
    }
}

impl SweepSummary {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{SUMMARY_MAGIC}")?;
        writeln!(
            w,
            "beta\tunravelling\te_chaotic_mean\te_chaotic_se\te_entrained_mean\te_entrained_se\tn_labeled\tn_unlabeled\tn_aborted"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                fmt(r.beta),
                r.unravelling,
                opt(r.e_chaotic_mean),
                opt(r.e_chaotic_se),
                opt(r.e_entrained_mean),
                opt(r.e_entrained_se),
                r.n_labeled,
                r.n_unlabeled,
                r.n_aborted
            )?;
        }
        Ok(())
    }

    pub fn write_to_path(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<SweepSummary> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Config("empty summary".into()))??;
        if first.trim_end() != SUMMARY_MAGIC {
            return Err(Error::Config("not a sweep summary".into()));
        }
        lines.next(); // column header
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 9 {
                return Err(Error::Config(format!("expected 9 fields, got {}", f.len())));
            }
            let count = |s: &str| -> Result<usize> {
                s.parse()
                    .map_err(|_| Error::Config(format!("bad count {s:?}")))
            };
            rows.push(SweepRow {
                beta: parse_f64(f[0])?,
                unravelling: f[1].to_string(),
                e_chaotic_mean: parse_opt(f[2])?,
                e_chaotic_se: parse_opt(f[3])?,
                e_entrained_mean: parse_opt(f[4])?,
                e_entrained_se: parse_opt(f[5])?,
                n_labeled: count(f[6])?,
                n_unlabeled: count(f[7])?,
                n_aborted: count(f[8])?,
            });
        }
        Ok(SweepSummary { rows })
    }

    pub fn read_from_path(path: &std::path::Path) -> Result<SweepSummary> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }
}
