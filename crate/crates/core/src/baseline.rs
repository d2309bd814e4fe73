//! Pointwise Gaussian mixture baseline.
//!
//! Every sample `[dtheta, v]` is treated as an independent draw from a
//! full-covariance mixture. Samples are labeled with their most responsible
//! component and a trajectory is cut wherever the label changes. There is no
//! minimum segment length.

use std::f64::consts::PI;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::log_sum_exp;
use crate::seeding::kmeans_pp;
use crate::trajectory::Trajectory;

pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-8;
/// Components with less total responsibility than this are reseeded.
pub const EMPTY_MASS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    /// Row-major, symmetric.
    pub cov: [[f64; 2]; 2],
}

impl GaussianComponent {
    fn cov_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.cov[0][0], self.cov[0][1], self.cov[1][0], self.cov[1][1])
    }

    /// Log density of `x` under this component alone.
    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let c = self.cov_matrix();
        let det = c.determinant();
        let d = Vector2::new(x[0] - self.mean[0], x[1] - self.mean[1]);
        let inv = c.try_inverse().unwrap_or_else(Matrix2::zeros);
        -0.5 * (2.0 * (2.0 * PI).ln() + det.ln() + (d.transpose() * inv * d)[0])
    }
}

/// Per-dimension affine map applied before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointScaling {
    pub mean: [f64; 2],
    pub scale: [f64; 2],
}

impl PointScaling {
    fn fit(points: &[[f64; 2]]) -> Self {
        let n = points.len() as f64;
        let mut mean = [0.0; 2];
        let mut scale = [0.0; 2];
        for d in 0..2 {
            mean[d] = points.iter().map(|p| p[d]).sum::<f64>() / n;
            let var = points.iter().map(|p| (p[d] - mean[d]).powi(2)).sum::<f64>() / n;
            scale[d] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Self { mean, scale }
    }

    fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        [(x[0] - self.mean[0]) / self.scale[0], (x[1] - self.mean[1]) / self.scale[1]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseGmm {
    pub components: Vec<GaussianComponent>,
    /// Present when the mixture was fitted on standardized points.
    pub scaling: Option<PointScaling>,
    pub eigen_floor: f64,
}

impl PointwiseGmm {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    fn prepare(&self, x: [f64; 2]) -> [f64; 2] {
        self.scaling.map_or(x, |s| s.apply(x))
    }

    fn joint(&self, x: [f64; 2]) -> Vec<f64> {
        self.components.iter().map(|c| c.weight.ln() + c.log_density(x)).collect()
    }

    /// Mixture log density of a raw point (in the fitted space).
    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        log_sum_exp(&self.joint(self.prepare(x)))
    }

    pub fn responsibilities(&self, x: [f64; 2]) -> Vec<f64> {
        let j = self.joint(self.prepare(x));
        let z = log_sum_exp(&j);
        j.iter().map(|v| (v - z).exp()).collect()
    }

    /// Most responsible component; ties go to the lower index.
    pub fn label(&self, x: [f64; 2]) -> usize {
        let j = self.joint(self.prepare(x));
        (0..j.len()).fold(0, |b, k| if j[k] > j[b] { k } else { b })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub eigen_floor: f64,
    pub standardize: bool,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k: crate::segmentation::DEFAULT_COMPONENTS,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            eigen_floor: DEFAULT_EIGEN_FLOOR,
            standardize: false,
            seed: 0,
        }
    }
}

impl GmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("the baseline needs at least one component"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::param("tol must be >= 0"));
        }
        if !(self.eigen_floor > 0.0 && self.eigen_floor.is_finite()) {
            return Err(Error::param("eigen_floor must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub model: PointwiseGmm,
    /// Total log-likelihood before each M-step and at the end.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Iterations after which a component was reseeded. The likelihood may
    /// drop across these.
    pub reseeds: Vec<usize>,
}

/// Clamps the eigenvalues of a symmetric matrix from below.
fn floor_eigen(c: Matrix2<f64>, floor: f64) -> Matrix2<f64> {
    let sym = 0.5 * (c + c.transpose());
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let out = eig.eigenvectors * Matrix2::from_diagonal(&vals) * eig.eigenvectors.transpose();
    0.5 * (out + out.transpose())
}

fn to_cov(m: Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

fn weighted_moments(points: &[[f64; 2]], w: impl Fn(usize) -> f64, floor: f64) -> ([f64; 2], [[f64; 2]; 2], f64) {
    let mass: f64 = (0..points.len()).map(&w).sum();
    let mut mean = [0.0; 2];
    for (i, p) in points.iter().enumerate() {
        mean[0] += w(i) * p[0];
        mean[1] += w(i) * p[1];
    }
    mean[0] /= mass;
    mean[1] /= mass;
    let mut c = Matrix2::zeros();
    for (i, p) in points.iter().enumerate() {
        let d = Vector2::new(p[0] - mean[0], p[1] - mean[1]);
        c += w(i) * d * d.transpose();
    }
    (mean, to_cov(floor_eigen(c / mass, floor)), mass)
}

/// Pooled `[dtheta, v]` samples of all trajectories.
pub fn pooled_points(trajs: &[Trajectory]) -> Vec<[f64; 2]> {
    trajs
        .iter()
        .flat_map(|t| t.points().iter().map(|p| [p.dtheta, p.v]))
        .collect()
}

/// Refits every component from responsibilities. An empty component is
/// moved to the point with the lowest mixture likelihood.
fn m_step(
    points: &[[f64; 2]],
    resp: &[Vec<f64>],
    point_ll: &[f64],
    global_cov: [[f64; 2]; 2],
    floor: f64,
) -> (Vec<GaussianComponent>, bool) {
    let n = points.len();
    let k = resp.first().map_or(0, Vec::len);
    let mut comps = Vec::with_capacity(k);
    let mut reseeded = false;
    for m in 0..k {
        let mass: f64 = resp.iter().map(|r| r[m]).sum();
        if mass < EMPTY_MASS {
            let worst = (0..n).fold(0, |b, i| if point_ll[i] < point_ll[b] { i } else { b });
            log::warn!("baseline component {m} is empty; reseeding it at point {worst}");
            comps.push(GaussianComponent { weight: 1.0 / n as f64, mean: points[worst], cov: global_cov });
            reseeded = true;
            continue;
        }
        let (mean, cov, mass) = weighted_moments(points, |i| resp[i][m], floor);
        comps.push(GaussianComponent { weight: mass / n as f64, mean, cov });
    }
    let sum: f64 = comps.iter().map(|c| c.weight).sum();
    comps.iter_mut().for_each(|c| c.weight /= sum);
    (comps, reseeded)
}

/// EM fit of a `cfg.k`-component full-covariance mixture to raw points.
pub fn fit_points(raw: &[[f64; 2]], cfg: &GmmConfig) -> Result<GmmFit> {
    cfg.validate()?;
    if raw.len() < 10 * cfg.k {
        return Err(Error::param(format!(
            "{} points are too few for {} components (need {})",
            raw.len(),
            cfg.k,
            10 * cfg.k
        )));
    }
    let scaling = cfg.standardize.then(|| PointScaling::fit(raw));
    let points: Vec<[f64; 2]> = match scaling {
        Some(s) => raw.iter().map(|&p| s.apply(p)).collect(),
        None => raw.to_vec(),
    };
    let n = points.len();
    let k = cfg.k;
    let floor = cfg.eigen_floor;

    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
    let seeds = kmeans_pp(&rows, k, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let (_, global_cov, _) = weighted_moments(&points, |_| 1.0, floor);
    let mut model = PointwiseGmm {
        components: seeds
            .iter()
            .map(|&s| GaussianComponent { weight: 1.0 / k as f64, mean: points[s], cov: global_cov })
            .collect(),
        scaling: None,
        eigen_floor: floor,
    };

    let mut history = Vec::new();
    let mut reseeds = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut resp = vec![vec![0.0; k]; n];
    loop {
        let mut total = 0.0;
        let mut point_ll = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            let j = model.joint(*p);
            let z = log_sum_exp(&j);
            total += z;
            point_ll[i] = z;
            for (r, v) in resp[i].iter_mut().zip(&j) {
                *r = (v - z).exp();
            }
        }
        if let Some(&prev) = history.last() {
            let gain: f64 = total - prev;
            if gain.abs() <= cfg.tol * f64::abs(prev).max(1.0) {
                history.push(total);
                converged = true;
                break;
            }
        }
        history.push(total);
        if iterations == cfg.max_iter {
            log::warn!("baseline EM stopped after {iterations} iterations without converging");
            break;
        }
        let (comps, reseeded) = m_step(&points, &resp, &point_ll, global_cov, floor);
        model.components = comps;
        iterations += 1;
        if reseeded {
            reseeds.push(iterations);
        }
    }
    model.scaling = scaling;
    Ok(GmmFit { model, history, iterations, converged, reseeds })
}

/// Fits the baseline to the pooled samples of `trajs`.
pub fn fit_pointwise_gmm(trajs: &[Trajectory], cfg: &GmmConfig) -> Result<GmmFit> {
    if trajs.is_empty() {
        return Err(Error::EmptyInput);
    }
    fit_points(&pooled_points(trajs), cfg)
}

/// Labels of one trajectory and the segments they induce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSegmentation {
    pub labels: Vec<usize>,
    /// First sample of every segment after the first.
    pub boundaries: Vec<usize>,
    /// `(start, end, label)` with `end` inclusive; segments do not overlap.
    pub segments: Vec<(usize, usize, usize)>,
}

impl LabelSegmentation {
    /// Cut list with both endpoints, comparable to the probabilistic method's.
    pub fn cuts(&self) -> Vec<usize> {
        let last = self.labels.len().saturating_sub(1);
        let mut c = vec![0];
        c.extend(&self.boundaries);
        c.push(last);
        c
    }
}

/// Segments wherever consecutive labels differ.
pub fn segment_labels(labels: &[usize]) -> LabelSegmentation {
    let mut boundaries = Vec::new();
    let mut segments = Vec::new();
    let mut start = 0;
    for i in 1..labels.len() {
        if labels[i] != labels[i - 1] {
            boundaries.push(i);
            segments.push((start, i - 1, labels[start]));
            start = i;
        }
    }
    if !labels.is_empty() {
        segments.push((start, labels.len() - 1, labels[start]));
    }
    LabelSegmentation { labels: labels.to_vec(), boundaries, segments }
}

pub fn label_and_segment(traj: &Trajectory, model: &PointwiseGmm) -> LabelSegmentation {
    let labels: Vec<usize> = traj.points().iter().map(|p| model.label([p.dtheta, p.v])).collect();
    segment_labels(&labels)
}
