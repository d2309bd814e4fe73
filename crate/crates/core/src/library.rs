//! Mixture library of motion primitives.
//!
//! Each component stores amplitude-free shape weights for both channels, a
//! per-sample noise variance for each channel, and a diagonal Gaussian over
//! the segment context `[v_init, |g_theta|, g_v, ln T]`. A candidate segment
//! is scored by rolling the component's weights out toward the segment's own
//! goal and duration and comparing the result with the observed samples:
//! course increments on the lateral channel and speed deviations on the
//! longitudinal one. Every sample after the start cut is scored exactly once
//! per segmentation.
//!
//! The rollout is linear in the weights, so each candidate is reduced once to
//! least-squares sufficient statistics and never rolled out again.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dmp::{rollout, DmpAdjustment, DmpChannelWeights, DmpConfig, DmpParams, IntegrationStep};
use crate::error::{Error, Result};
use crate::trajectory::{Channel, Trajectory};

pub const LIBRARY_FORMAT: &str = "mpseg-library";
pub const LIBRARY_VERSION: u32 = 2;
pub const DEFAULT_VAR_FLOOR: f64 = 1e-4;
/// Length of the segment context vector.
pub const CONTEXT_DIM: usize = 4;

/// `[v_init, |g_theta|, g_v, ln T]`.
pub fn segment_context(v_init: f64, adj: &DmpAdjustment) -> [f64; CONTEXT_DIM] {
    [v_init, adj.g[0].abs(), adj.g[1], adj.duration.ln()]
}

/// Least-squares summary of one channel of one segment for the affine model
/// `y = a + B w`, stored relative to `r0 = y - a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub samples: usize,
    /// `B^T B`, row-major.
    pub gram: Vec<f64>,
    /// `B^T r0`.
    pub cross: Vec<f64>,
    /// `r0^T r0`.
    pub energy: f64,
}

impl ChannelStats {
    pub fn from_design(design: &DMatrix<f64>, residual: &DVector<f64>) -> Self {
        let gram = design.transpose() * design;
        let cross = design.transpose() * residual;
        let n = gram.nrows();
        Self {
            samples: design.nrows(),
            gram: (0..n * n).map(|k| gram[(k / n, k % n)]).collect(),
            cross: cross.iter().copied().collect(),
            energy: residual.norm_squared(),
        }
    }

    pub fn n_basis(&self) -> usize {
        self.cross.len()
    }

    /// Residual sum of squares at weights `w`.
    pub fn rss(&self, w: &[f64]) -> f64 {
        let n = self.n_basis();
        let mut quad = 0.0;
        for i in 0..n {
            let row = &self.gram[i * n..(i + 1) * n];
            quad += w[i] * row.iter().zip(w).map(|(g, x)| g * x).sum::<f64>();
        }
        let lin: f64 = self.cross.iter().zip(w).map(|(c, x)| c * x).sum();
        (self.energy - 2.0 * lin + quad).max(0.0)
    }
}

/// Everything the mixture needs to know about one candidate segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub context: [f64; CONTEXT_DIM],
    /// Lateral then longitudinal.
    pub channels: [ChannelStats; 2],
}

impl SegmentStats {
    pub fn samples(&self) -> usize {
        self.channels[0].samples
    }
}

fn unit_params(weights: Vec<f64>) -> DmpParams {
    DmpParams {
        v_init: 0.0,
        omega_theta: DmpChannelWeights { channel: Channel::Lateral, weights: weights.clone() },
        omega_v: DmpChannelWeights { channel: Channel::Longitudinal, weights },
    }
}

/// Sufficient statistics of the segment `start..=end`.
///
/// The goal and duration are the segment's own, and rollouts use the sample
/// interval as integration step so that rollout step `k` lines up with sample
/// `start + k`.
pub fn segment_stats(traj: &Trajectory, start: usize, end: usize, cfg: &DmpConfig) -> Result<SegmentStats> {
    if end <= start || end >= traj.len() {
        return Err(Error::param(format!(
            "segment {start}..={end} is outside a trajectory of {} samples",
            traj.len()
        )));
    }
    let pts = &traj.points()[start..=end];
    let n = end - start;
    let dt = traj.dt();
    let lateral: Vec<f64> = pts[1..].iter().map(|p| p.dtheta).collect();
    let speed: Vec<f64> = pts[1..].iter().map(|p| p.v - pts[0].v).collect();
    let adj = DmpAdjustment {
        g: [lateral.iter().sum(), speed[n - 1]],
        duration: n as f64 * dt,
    };
    let cfg = cfg.clone().with_step(IntegrationStep::Seconds(dt));
    let nb = cfg.n_basis;

    let base = rollout(&unit_params(vec![0.0; nb]), &adj, &cfg)?;
    if base.len() != n + 1 {
        return Err(Error::param(format!(
            "rollout of {} samples does not match a segment of {}",
            base.len(),
            n + 1
        )));
    }
    let mut b_lat = DMatrix::zeros(n, nb);
    let mut b_lon = DMatrix::zeros(n, nb);
    for k in 0..nb {
        let mut e = vec![0.0; nb];
        e[k] = 1.0;
        let r = rollout(&unit_params(e), &adj, &cfg)?;
        for i in 1..=n {
            let now = r.theta[i] - base.theta[i];
            let before = r.theta[i - 1] - base.theta[i - 1];
            b_lat[(i - 1, k)] = now - before;
            b_lon[(i - 1, k)] = r.speed[i] - base.speed[i];
        }
    }
    let r_lat = DVector::from_iterator(n, (1..=n).map(|i| lateral[i - 1] - (base.theta[i] - base.theta[i - 1])));
    let r_lon = DVector::from_iterator(n, (1..=n).map(|i| speed[i - 1] - base.speed[i]));
    Ok(SegmentStats {
        context: segment_context(pts[0].v, &adj),
        channels: [
            ChannelStats::from_design(&b_lat, &r_lat),
            ChannelStats::from_design(&b_lon, &r_lon),
        ],
    })
}

/// One library entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryComponent {
    pub lambda: f64,
    pub omega_theta: Vec<f64>,
    pub omega_v: Vec<f64>,
    /// Per-sample residual variance, lateral then longitudinal.
    pub noise: [f64; 2],
    pub context_mean: [f64; CONTEXT_DIM],
    pub context_var: [f64; CONTEXT_DIM],
}

impl LibraryComponent {
    pub fn weights(&self, channel: usize) -> &[f64] {
        if channel == 0 {
            &self.omega_theta
        } else {
            &self.omega_v
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveLibrary {
    pub components: Vec<LibraryComponent>,
    pub cfg: DmpConfig,
    pub var_floor: f64,
}

#[derive(Serialize, Deserialize)]
struct LibraryDocument {
    format: String,
    version: u32,
    cfg_hash: String,
    #[serde(flatten)]
    library: PrimitiveLibrary,
}

impl PrimitiveLibrary {
    pub fn new(components: Vec<LibraryComponent>, cfg: DmpConfig, var_floor: f64) -> Result<Self> {
        let lib = Self { components, cfg, var_floor };
        lib.validate()?;
        Ok(lib)
    }

    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if self.components.is_empty() {
            return Err(Error::param("a library needs at least one component"));
        }
        if !(self.var_floor.is_finite() && self.var_floor > 0.0) {
            return Err(Error::param(format!("var_floor must be > 0, got {}", self.var_floor)));
        }
        let nb = self.cfg.n_basis;
        // Tiny relative slack so that a floor survives a text round trip.
        let floor = self.var_floor * (1.0 - 1e-12);
        let mut total = 0.0;
        for (m, c) in self.components.iter().enumerate() {
            for w in [&c.omega_theta, &c.omega_v] {
                if w.len() != nb {
                    return Err(Error::DimensionMismatch { expected: nb, found: w.len() });
                }
            }
            if !(0.0..=1.0).contains(&c.lambda) {
                return Err(Error::param(format!("component {m} has lambda {}", c.lambda)));
            }
            if c.noise.iter().chain(&c.context_var).any(|&v| !(v >= floor && v.is_finite())) {
                return Err(Error::param(format!("component {m} has a variance below the floor")));
            }
            let finite = c.omega_theta.iter().chain(&c.omega_v).chain(&c.context_mean);
            if finite.into_iter().any(|x| !x.is_finite()) {
                return Err(Error::param(format!("component {m} has a non-finite parameter")));
            }
            total += c.lambda;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Free parameters of the mixture, for information criteria.
    pub fn n_free_parameters(&self) -> usize {
        let per = 2 * self.cfg.n_basis + 2 + 2 * CONTEXT_DIM;
        self.len() * per + self.len() - 1
    }

    pub fn to_json(&self) -> String {
        let doc = LibraryDocument {
            format: LIBRARY_FORMAT.to_string(),
            version: LIBRARY_VERSION,
            cfg_hash: self.cfg.hash(),
            library: self.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("library serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: LibraryDocument =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if doc.format != LIBRARY_FORMAT {
            return Err(Error::Format(format!("expected format {LIBRARY_FORMAT}, got {}", doc.format)));
        }
        if doc.version != LIBRARY_VERSION {
            return Err(Error::Format(format!("unsupported library version {}", doc.version)));
        }
        if doc.cfg_hash != doc.library.cfg.hash() {
            return Err(Error::Format("cfg_hash does not match the embedded configuration".into()));
        }
        doc.library.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(doc.library)
    }
}

/// Log density of a diagonal Gaussian.
pub fn gaussian_loglik(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), mean.len());
    let mut acc = 0.0;
    for ((x, m), v) in x.iter().zip(mean).zip(var) {
        acc += (2.0 * PI * v).ln() + (x - m).powi(2) / v;
    }
    -0.5 * acc
}

/// `log p(segment | component)`: both residual channels plus the context.
pub fn component_loglik(stats: &SegmentStats, comp: &LibraryComponent) -> f64 {
    let mut acc = gaussian_loglik(&stats.context, &comp.context_mean, &comp.context_var);
    for (ch, cs) in stats.channels.iter().enumerate() {
        let var = comp.noise[ch];
        acc -= 0.5 * (cs.samples as f64 * (2.0 * PI * var).ln() + cs.rss(comp.weights(ch)) / var);
    }
    acc
}

/// `log(sum exp(xs))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn joint_logliks(stats: &SegmentStats, lib: &PrimitiveLibrary) -> Vec<f64> {
    lib.components
        .iter()
        .map(|c| c.lambda.ln() + component_loglik(stats, c))
        .collect()
}

/// `log p(s | library)`.
pub fn mixture_loglik(stats: &SegmentStats, lib: &PrimitiveLibrary) -> f64 {
    log_sum_exp(&joint_logliks(stats, lib))
}

/// Posterior component probabilities for one segment.
pub fn responsibilities(stats: &SegmentStats, lib: &PrimitiveLibrary) -> Vec<f64> {
    let joint = joint_logliks(stats, lib);
    let total = log_sum_exp(&joint);
    joint.iter().map(|j| (j - total).exp()).collect()
}

/// Index of the most responsible component; ties go to the lower index.
pub fn best_component(stats: &SegmentStats, lib: &PrimitiveLibrary) -> usize {
    let joint = joint_logliks(stats, lib);
    let mut best = 0;
    for (m, j) in joint.iter().enumerate() {
        if *j > joint[best] {
            best = m;
        }
    }
    best
}

/// Shape parameters of a component, with its mean initial speed.
pub fn extract_primitive(comp: &LibraryComponent) -> DmpParams {
    DmpParams {
        v_init: comp.context_mean[0],
        omega_theta: DmpChannelWeights { channel: Channel::Lateral, weights: comp.omega_theta.clone() },
        omega_v: DmpChannelWeights { channel: Channel::Longitudinal, weights: comp.omega_v.clone() },
    }
}

/// Goal and duration at the component's context mean. The lateral goal is a
/// magnitude, so the prototype always turns toward positive course.
pub fn prototype_adjustment(comp: &LibraryComponent) -> DmpAdjustment {
    DmpAdjustment {
        g: [comp.context_mean[1], comp.context_mean[2]],
        duration: comp.context_mean[3].exp(),
    }
}

/// Minimum-norm solution of `a w = b` through the SVD, ignoring singular
/// values below `1e-12` of the largest.
fn solve_weights(a: DMatrix<f64>, b: DVector<f64>) -> Vec<f64> {
    let n = b.len();
    let svd = a.svd(true, true);
    let top = svd.singular_values.max();
    if !(top > 0.0) {
        return vec![0.0; n];
    }
    match svd.solve(&b, 1e-12 * top) {
        Ok(w) => w.iter().copied().collect(),
        Err(_) => vec![0.0; n],
    }
}

/// Maximum-likelihood refit of a mixture from weighted segments.
///
/// `weights[s][m]` is the mass that segment `s` contributes to component `m`.
/// Components whose total mass falls below `min_mass` are dropped. Returns
/// the surviving components and the indices they came from.
pub fn refit(
    stats: &[&SegmentStats],
    weights: &[Vec<f64>],
    n_components: usize,
    var_floor: f64,
    min_mass: f64,
) -> Result<(Vec<LibraryComponent>, Vec<usize>)> {
    if stats.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: stats.len(), found: weights.len() });
    }
    let nb = stats.first().ok_or(Error::EmptyInput)?.channels[0].n_basis();
    let mass: Vec<f64> = (0..n_components).map(|m| weights.iter().map(|w| w[m]).sum()).collect();
    let total: f64 = mass.iter().filter(|&&x| x >= min_mass).sum();
    if !(total > 0.0) {
        return Err(Error::param("no component retains any mass"));
    }
    let mut comps = Vec::new();
    let mut kept = Vec::new();
    for m in 0..n_components {
        if mass[m] < min_mass {
            log::warn!("component {m} collapsed (mass {:.3e}); removing it", mass[m]);
            continue;
        }
        let mut omega = [Vec::new(), Vec::new()];
        let mut noise = [0.0; 2];
        for ch in 0..2 {
            let mut a = DMatrix::<f64>::zeros(nb, nb);
            let mut b = DVector::<f64>::zeros(nb);
            let mut count = 0.0;
            for (s, w) in stats.iter().zip(weights) {
                let g = w[m];
                if g == 0.0 {
                    continue;
                }
                let cs = &s.channels[ch];
                for i in 0..nb {
                    b[i] += g * cs.cross[i];
                    for j in 0..nb {
                        a[(i, j)] += g * cs.gram[i * nb + j];
                    }
                }
                count += g * cs.samples as f64;
            }
            let w = solve_weights(a, b);
            let rss: f64 = stats
                .iter()
                .zip(weights)
                .filter(|(_, w)| w[m] != 0.0)
                .map(|(s, wt)| wt[m] * s.channels[ch].rss(&w))
                .sum();
            noise[ch] = if count > 0.0 { (rss / count).max(var_floor) } else { var_floor };
            omega[ch] = w;
        }
        let mut mean = [0.0; CONTEXT_DIM];
        for (s, w) in stats.iter().zip(weights) {
            for d in 0..CONTEXT_DIM {
                mean[d] += w[m] * s.context[d];
            }
        }
        mean.iter_mut().for_each(|x| *x /= mass[m]);
        let mut var = [0.0; CONTEXT_DIM];
        for (s, w) in stats.iter().zip(weights) {
            for d in 0..CONTEXT_DIM {
                var[d] += w[m] * (s.context[d] - mean[d]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v = (*v / mass[m]).max(var_floor));
        let [omega_theta, omega_v] = omega;
        comps.push(LibraryComponent {
            lambda: mass[m] / total,
            omega_theta,
            omega_v,
            noise,
            context_mean: mean,
            context_var: var,
        });
        kept.push(m);
    }
    Ok((comps, kept))
}
