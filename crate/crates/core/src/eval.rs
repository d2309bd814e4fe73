//! Reproduction metrics, cut scoring and plot-ready exports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dmp::PrimitiveTrack;
use crate::error::{Error, Result};
use crate::trajectory::{estimate_derivatives, Channel, Trajectory};

pub const DEFAULT_TOLERANCE: usize = 3;

/// Absolute deviations of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDeviation {
    pub channel: Channel,
    /// `|y_d - y_l|` per step.
    pub d_pos: Vec<f64>,
    /// `|v_d - v_l|` per step, with `v` the time derivative.
    pub d_vel: Vec<f64>,
    pub rmse_pos: f64,
    pub rmse_vel: f64,
    pub max_pos: f64,
    pub max_vel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub lateral: ChannelDeviation,
    pub longitudinal: ChannelDeviation,
}

fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Linear interpolation of `ys` (uniform on `[0, 1]`) at `n` uniform points.
fn stretch(ys: &[f64], n: usize) -> Vec<f64> {
    if ys.len() == n {
        return ys.to_vec();
    }
    let m = ys.len() - 1;
    (0..n)
        .map(|k| {
            let x = k as f64 / (n - 1) as f64 * m as f64;
            let i = (x.floor() as usize).min(m - 1);
            let f = x - i as f64;
            ys[i] * (1.0 - f) + ys[i + 1] * f
        })
        .collect()
}

fn channel_deviation(
    channel: Channel,
    demonstrated: &PrimitiveTrack,
    learned: &PrimitiveTrack,
) -> Result<ChannelDeviation> {
    let n = demonstrated.len();
    let pos = stretch(learned.position(channel), n);
    let vel = stretch(learned.rate(channel), n);
    if pos.len() != n || vel.len() != n || demonstrated.rate(channel).len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: pos.len() });
    }
    let d_pos: Vec<f64> = demonstrated.position(channel).iter().zip(&pos).map(|(a, b)| (a - b).abs()).collect();
    let d_vel: Vec<f64> = demonstrated.rate(channel).iter().zip(&vel).map(|(a, b)| (a - b).abs()).collect();
    Ok(ChannelDeviation {
        channel,
        rmse_pos: rms(&d_pos),
        rmse_vel: rms(&d_vel),
        max_pos: d_pos.iter().copied().fold(0.0, f64::max),
        max_vel: d_vel.iter().copied().fold(0.0, f64::max),
        d_pos,
        d_vel,
    })
}

/// Pointwise deviations of `learned` from `demonstrated`. Tracks of
/// different length are compared in normalized time on the demonstrated
/// grid.
pub fn deviation_report(demonstrated: &PrimitiveTrack, learned: &PrimitiveTrack) -> Result<DeviationReport> {
    if demonstrated.len() < 2 || learned.len() < 2 {
        return Err(Error::param("deviation needs tracks of at least 2 samples"));
    }
    Ok(DeviationReport {
        lateral: channel_deviation(Channel::Lateral, demonstrated, learned)?,
        longitudinal: channel_deviation(Channel::Longitudinal, demonstrated, learned)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub predicted: usize,
    pub truth: usize,
}

impl CutScore {
    /// Scores from raw counts. An empty prediction has precision 0 unless the
    /// truth is empty too, in which case everything is 1.
    pub fn from_counts(matched: usize, predicted: usize, truth: usize) -> Self {
        let precision = match (predicted, truth) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (p, _) => matched as f64 / p as f64,
        };
        let recall = match (truth, predicted) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (t, _) => matched as f64 / t as f64,
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1, matched, predicted, truth }
    }
}

/// Number of one-to-one matches within `tol` samples, pairing the closest
/// cuts first.
pub fn match_cuts(predicted: &[usize], truth: &[usize], tol: usize) -> usize {
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (i, p) in predicted.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let d = p.abs_diff(*t);
            if d <= tol {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_unstable();
    let mut used_p = vec![false; predicted.len()];
    let mut used_t = vec![false; truth.len()];
    let mut matched = 0;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            matched += 1;
        }
    }
    matched
}

pub fn cut_f1(predicted: &[usize], truth: &[usize], tol: usize) -> CutScore {
    CutScore::from_counts(match_cuts(predicted, truth, tol), predicted.len(), truth.len())
}

/// Cut counts of one method, summed over trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    /// Interior cuts (segment boundaries) produced.
    pub n2: usize,
    pub segments: usize,
    /// Pooled score against the truth, if given.
    pub score: Option<CutScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationComparison {
    /// Interior initial cuts, if known.
    pub n1: Option<usize>,
    pub methods: Vec<MethodSummary>,
}

fn interior(cuts: &[usize]) -> &[usize] {
    if cuts.len() <= 2 {
        &[]
    } else {
        &cuts[1..cuts.len() - 1]
    }
}

/// Builds the comparison table. Every cut list includes both endpoints and
/// lists are aligned by trajectory; interior cuts are pooled across
/// trajectories for scoring.
pub fn compare(
    initial: Option<&[Vec<usize>]>,
    methods: &[(String, Vec<Vec<usize>>)],
    truth: Option<&[Vec<usize>]>,
    tol: usize,
) -> Result<SegmentationComparison> {
    let n_traj = methods.first().map(|m| m.1.len());
    for (name, cuts) in methods {
        if Some(cuts.len()) != n_traj {
            return Err(Error::Schema(format!("method {name} covers a different number of trajectories")));
        }
    }
    if let Some(t) = truth {
        if Some(t.len()) != n_traj {
            return Err(Error::Schema("truth covers a different number of trajectories".into()));
        }
    }
    let n1 = initial.map(|c| c.iter().map(|t| interior(t).len()).sum());
    let methods = methods
        .iter()
        .map(|(name, cuts)| {
            let n2 = cuts.iter().map(|c| interior(c).len()).sum();
            let score = truth.map(|truth| {
                let (mut m, mut p, mut t) = (0, 0, 0);
                for (c, tc) in cuts.iter().zip(truth) {
                    m += match_cuts(interior(c), interior(tc), tol);
                    p += interior(c).len();
                    t += interior(tc).len();
                }
                CutScore::from_counts(m, p, t)
            });
            MethodSummary {
                name: name.clone(),
                n2,
                segments: cuts.iter().map(|c| c.len().saturating_sub(1)).sum(),
                score,
            }
        })
        .collect();
    Ok(SegmentationComparison { n1, methods })
}

impl SegmentationComparison {
    /// Plain-text table, one row per method.
    pub fn to_table(&self) -> String {
        let with_score = self.methods.iter().any(|m| m.score.is_some());
        let mut out = String::from("method,n1,n2,segments");
        if with_score {
            out.push_str(",precision,recall,f1");
        }
        out.push('\n');
        for m in &self.methods {
            let n1 = self.n1.map_or_else(|| "NA".to_string(), |n| n.to_string());
            out.push_str(&format!("{},{},{},{}", m.name, n1, m.n2, m.segments));
            if with_score {
                match m.score {
                    Some(s) => out.push_str(&format!(",{},{},{}", s.precision, s.recall, s.f1)),
                    None => out.push_str(",NA,NA,NA"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Everything [`emit_plot_data`] writes.
#[derive(Debug, Clone, Default)]
pub struct PlotBundle {
    /// Trajectories with a component id per sample (`-1` for unlabeled).
    pub segmentations: Vec<(Trajectory, Vec<i64>)>,
    /// Named primitive rollouts.
    pub primitives: Vec<(String, PrimitiveTrack)>,
    /// Named deviation reports.
    pub deviations: Vec<(String, DeviationReport)>,
    /// Lines written as `# ...` comments at the top of every file.
    pub header: Vec<String>,
}

pub const SEGMENTATION_PLOT: &str = "segmentation_plot.csv";
pub const PRIMITIVE_PLOT: &str = "primitive_tracks.csv";
pub const DEVIATION_PLOT: &str = "deviations.csv";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Per-sample labels from a list of `(start, end, component)` segments.
/// A shared boundary sample takes the label of the segment that starts there.
pub fn labels_from_segments(len: usize, segments: &[(usize, usize, usize)]) -> Vec<i64> {
    let mut labels = vec![-1i64; len];
    for &(s, e, c) in segments {
        for l in labels.iter_mut().take((e + 1).min(len)).skip(s) {
            *l = c as i64;
        }
    }
    for &(s, _, c) in segments {
        if s < len {
            labels[s] = c as i64;
        }
    }
    labels
}

fn write_header(w: &mut impl Write, lines: &[String]) -> std::io::Result<()> {
    for l in lines {
        writeln!(w, "# {l}")?;
    }
    Ok(())
}

/// Observed segment `start..=end` as a track: course and speed deviations
/// from the start sample with central-difference rates.
pub fn observed_track(traj: &Trajectory, start: usize, end: usize) -> Result<PrimitiveTrack> {
    if end <= start || end >= traj.len() || end - start < 4 {
        return Err(Error::param(format!("segment {start}..={end} needs at least 5 samples inside the trajectory")));
    }
    let pts = &traj.points()[start..=end];
    let mut acc = 0.0;
    let theta: Vec<f64> = std::iter::once(0.0)
        .chain(pts[1..].iter().map(|p| {
            acc += p.dtheta;
            acc
        }))
        .collect();
    let speed: Vec<f64> = pts.iter().map(|p| p.v - pts[0].v).collect();
    let dt = traj.dt();
    let lat = estimate_derivatives(&theta, dt, 1, Channel::Lateral)?;
    let lon = estimate_derivatives(&speed, dt, 1, Channel::Longitudinal)?;
    Ok(PrimitiveTrack {
        dt,
        v_init: pts[0].v,
        theta,
        theta_rate: lat.yd,
        speed,
        speed_rate: lon.yd,
    })
}

/// Writes the three plot files into `dir`, which must exist.
pub fn emit_plot_data(bundle: &PlotBundle, dir: &Path) -> Result<()> {
    let path = dir.join(SEGMENTATION_PLOT);
    let mut w = create(&path)?;
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(p.clone(), e)
    };
    write_header(&mut w, &bundle.header).map_err(io(&path))?;
    writeln!(w, "traj,t,dtheta,v,component").map_err(io(&path))?;
    for (k, (traj, labels)) in bundle.segmentations.iter().enumerate() {
        if labels.len() != traj.len() {
            return Err(Error::DimensionMismatch { expected: traj.len(), found: labels.len() });
        }
        for (i, (p, l)) in traj.points().iter().zip(labels).enumerate() {
            writeln!(w, "{k},{},{},{},{l}", i as f64 * traj.dt(), p.dtheta, p.v).map_err(io(&path))?;
        }
    }
    w.flush().map_err(io(&path))?;

    let path = dir.join(PRIMITIVE_PLOT);
    let mut w = create(&path)?;
    write_header(&mut w, &bundle.header).map_err(io(&path))?;
    writeln!(w, "name,t,theta,theta_rate,speed,speed_rate").map_err(io(&path))?;
    for (name, t) in &bundle.primitives {
        for i in 0..t.len() {
            writeln!(
                w,
                "{name},{},{},{},{},{}",
                i as f64 * t.dt,
                t.theta[i],
                t.theta_rate[i],
                t.speed[i],
                t.speed_rate[i]
            )
            .map_err(io(&path))?;
        }
    }
    w.flush().map_err(io(&path))?;

    let path = dir.join(DEVIATION_PLOT);
    let mut w = create(&path)?;
    write_header(&mut w, &bundle.header).map_err(io(&path))?;
    writeln!(w, "name,step,d_pos_theta,d_vel_theta,d_pos_speed,d_vel_speed").map_err(io(&path))?;
    for (name, r) in &bundle.deviations {
        for i in 0..r.lateral.d_pos.len() {
            writeln!(
                w,
                "{name},{i},{},{},{},{}",
                r.lateral.d_pos[i], r.lateral.d_vel[i], r.longitudinal.d_pos[i], r.longitudinal.d_vel[i]
            )
            .map_err(io(&path))?;
        }
    }
    w.flush().map_err(io(&path))
}
