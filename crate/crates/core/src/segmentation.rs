//! Probabilistic merging of candidate cuts.
//!
//! Every pair of candidate cuts at most `k_max` apart defines a candidate
//! segment. A segmentation is a path through this lattice from the first to
//! the last cut, weighted by a geometric prior on the number of skipped cuts
//! and by the mixture likelihood of each segment. The sum over all paths is
//! computed exactly by a forward/backward pass, and the library is refitted
//! from posterior-weighted candidates.
//!
//! The library starts as a single component fitted under the prior alone and
//! grows by splitting its heaviest components, with EM run to convergence
//! after every split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cuts::CutPointSet;
use crate::dmp::{fit_segment, DmpAdjustment, DmpConfig, DmpParams};
use crate::error::{Error, Result};
use crate::library::{
    best_component, log_sum_exp, mixture_loglik, refit, responsibilities, segment_stats,
    LibraryComponent, PrimitiveLibrary, SegmentStats, DEFAULT_VAR_FLOOR,
};
use crate::trajectory::Trajectory;

pub const DEFAULT_P_C: f64 = 0.4;
pub const DEFAULT_K_MAX: usize = 6;
pub const DEFAULT_COMPONENTS: usize = 8;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;
/// Components with less total responsibility than this are removed.
pub const COLLAPSE_MASS: f64 = 1e-8;

/// A candidate segment between cuts `start_cut < end_cut` of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSegment {
    pub start_cut: usize,
    pub end_cut: usize,
    /// Sample index of the start cut.
    pub start: usize,
    /// Sample index of the end cut; the segment covers `start..=end`.
    pub end: usize,
    /// Direct DMP fit of the segment.
    pub params: DmpParams,
    pub adj: DmpAdjustment,
    pub stats: SegmentStats,
}

impl CandidateSegment {
    /// Number of candidate cuts the segment skips.
    pub fn span(&self) -> usize {
        self.end_cut - self.start_cut - 1
    }
}

/// All candidate segments of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    /// Sample indices of the candidate cuts.
    pub cuts: Vec<usize>,
    pub candidates: Vec<CandidateSegment>,
}

impl Lattice {
    pub fn n_cuts(&self) -> usize {
        self.cuts.len()
    }

    /// Samples scored by any complete segmentation.
    pub fn scored_samples(&self) -> usize {
        self.cuts.last().copied().unwrap_or(0) - self.cuts.first().copied().unwrap_or(0)
    }

    /// `(start_cut, end_cut)` of every candidate.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.candidates.iter().map(|c| (c.start_cut, c.end_cut))
    }
}

/// Expected candidate count for `n_cuts` cuts and span bound `k_max`.
pub fn candidate_count(n_cuts: usize, k_max: usize) -> usize {
    (1..=k_max).map(|k| n_cuts.saturating_sub(k)).sum()
}

/// Fits every candidate segment with `1 <= end_cut - start_cut <= k_max`.
/// Candidates whose fit fails are dropped with a warning.
pub fn enumerate_segments(
    traj: &Trajectory,
    cuts: &CutPointSet,
    k_max: usize,
    cfg: &DmpConfig,
) -> Result<Lattice> {
    if k_max == 0 {
        return Err(Error::param("k_max must be at least 1"));
    }
    if cuts.indices().last() != Some(&traj.last_index()) {
        return Err(Error::param("cut set does not belong to this trajectory"));
    }
    let idx = cuts.indices();
    let n = idx.len();
    let mut candidates = Vec::with_capacity(candidate_count(n, k_max));
    for i in 0..n {
        for j in i + 1..=(i + k_max).min(n - 1) {
            let fitted = fit_segment(traj, idx[i], idx[j], cfg)
                .and_then(|(p, a)| Ok((p, a, segment_stats(traj, idx[i], idx[j], cfg)?)));
            match fitted {
                Ok((params, adj, stats)) => candidates.push(CandidateSegment {
                    start_cut: i,
                    end_cut: j,
                    start: idx[i],
                    end: idx[j],
                    params,
                    adj,
                    stats,
                }),
                Err(e) => log::warn!("dropping candidate {}..={}: {e}", idx[i], idx[j]),
            }
        }
    }
    Ok(Lattice { cuts: idx.to_vec(), candidates })
}

/// `p(c_s) = (1 - p_c)^c_s * p_c`.
pub fn segment_prior(span: usize, p_c: f64) -> f64 {
    (1.0 - p_c).powi(span as i32) * p_c
}

pub fn log_segment_prior(span: usize, p_c: f64) -> f64 {
    span as f64 * (1.0 - p_c).ln() + p_c.ln()
}

fn check_p_c(p_c: f64) -> Result<()> {
    if p_c > 0.0 && p_c < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("p_c must lie in (0, 1), got {p_c}")))
    }
}

/// Edge posteriors and log partition function of a lattice with nodes
/// `0..n_nodes` and log-weighted edges `(i, j, log w)`, `i < j`.
pub fn forward_backward(n_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<(Vec<f64>, f64)> {
    if n_nodes < 2 {
        return Err(Error::NoSegmentationPath);
    }
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for (e, &(i, j, _)) in edges.iter().enumerate() {
        if i >= j || j >= n_nodes {
            return Err(Error::param(format!("bad lattice edge ({i}, {j})")));
        }
        incoming[j].push(e);
        outgoing[i].push(e);
    }
    let mut fwd = vec![f64::NEG_INFINITY; n_nodes];
    fwd[0] = 0.0;
    let mut terms = Vec::new();
    for j in 1..n_nodes {
        terms.clear();
        terms.extend(incoming[j].iter().map(|&e| fwd[edges[e].0] + edges[e].2));
        fwd[j] = log_sum_exp(&terms);
    }
    let mut bwd = vec![f64::NEG_INFINITY; n_nodes];
    bwd[n_nodes - 1] = 0.0;
    for i in (0..n_nodes - 1).rev() {
        terms.clear();
        terms.extend(outgoing[i].iter().map(|&e| edges[e].2 + bwd[edges[e].1]));
        bwd[i] = log_sum_exp(&terms);
    }
    let log_z = fwd[n_nodes - 1];
    if !log_z.is_finite() {
        return Err(Error::NoSegmentationPath);
    }
    let alpha = edges
        .iter()
        .map(|&(i, j, w)| (fwd[i] + w + bwd[j] - log_z).exp().clamp(0.0, 1.0))
        .collect();
    Ok((alpha, log_z))
}

/// Highest-weight path as a list of edge indices, and its log weight. Among
/// equal-weight paths the one with fewer edges wins; remaining ties go to
/// the edge listed first.
pub fn max_product_path(n_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<(Vec<usize>, f64)> {
    if n_nodes < 2 {
        return Err(Error::NoSegmentationPath);
    }
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for (e, &(i, j, _)) in edges.iter().enumerate() {
        if i >= j || j >= n_nodes {
            return Err(Error::param(format!("bad lattice edge ({i}, {j})")));
        }
        incoming[j].push(e);
    }
    // (score, segment count, back pointer)
    let mut best: Vec<(f64, usize, Option<usize>)> = vec![(f64::NEG_INFINITY, 0, None); n_nodes];
    best[0] = (0.0, 0, None);
    for j in 1..n_nodes {
        for &e in &incoming[j] {
            let (i, _, w) = edges[e];
            let (s, k, _) = best[i];
            if s == f64::NEG_INFINITY {
                continue;
            }
            let cand = (s + w, k + 1);
            let cur = best[j];
            if cand.0 > cur.0 || (cand.0 == cur.0 && cand.1 < cur.1) {
                best[j] = (cand.0, cand.1, Some(e));
            }
        }
    }
    let (score, _, _) = best[n_nodes - 1];
    if !score.is_finite() {
        return Err(Error::NoSegmentationPath);
    }
    let mut path = Vec::new();
    let mut node = n_nodes - 1;
    while node != 0 {
        let e = best[node].2.expect("reachable node has a back pointer");
        path.push(e);
        node = edges[e].0;
    }
    path.reverse();
    Ok((path, score))
}

fn log_edges(lattice: &Lattice, lib: &PrimitiveLibrary, p_c: f64) -> Vec<(usize, usize, f64)> {
    lattice
        .candidates
        .iter()
        .map(|c| {
            (
                c.start_cut,
                c.end_cut,
                log_segment_prior(c.span(), p_c) + mixture_loglik(&c.stats, lib),
            )
        })
        .collect()
}

/// Segment posteriors and the trajectory's log evidence, including the
/// global `p_c` factor of the segmentation prior.
pub fn e_step(lattice: &Lattice, lib: &PrimitiveLibrary, p_c: f64) -> Result<(Vec<f64>, f64)> {
    check_p_c(p_c)?;
    let edges = log_edges(lattice, lib, p_c);
    let (alpha, log_z) = forward_backward(lattice.n_cuts(), &edges)?;
    Ok((alpha, p_c.ln() + log_z))
}

/// Segment posteriors under the segmentation prior alone.
pub fn prior_posteriors(lattice: &Lattice, p_c: f64) -> Result<Vec<f64>> {
    check_p_c(p_c)?;
    let edges: Vec<_> = lattice
        .candidates
        .iter()
        .map(|c| (c.start_cut, c.end_cut, log_segment_prior(c.span(), p_c)))
        .collect();
    Ok(forward_backward(lattice.n_cuts(), &edges)?.0)
}

fn refit_library(
    lattices: &[Lattice],
    posteriors: &[Vec<f64>],
    resp: impl Fn(&SegmentStats) -> Vec<f64>,
    n_components: usize,
    cfg: &DmpConfig,
    var_floor: f64,
) -> Result<PrimitiveLibrary> {
    let mut stats = Vec::new();
    let mut weights = Vec::new();
    for (lat, post) in lattices.iter().zip(posteriors) {
        for (c, &a) in lat.candidates.iter().zip(post) {
            if a <= 0.0 {
                continue;
            }
            stats.push(&c.stats);
            weights.push(resp(&c.stats).into_iter().map(|r| a * r).collect::<Vec<f64>>());
        }
    }
    if stats.is_empty() {
        return Err(Error::param("no candidate carries posterior mass"));
    }
    let (components, _) = refit(&stats, &weights, n_components, var_floor, COLLAPSE_MASS)?;
    PrimitiveLibrary::new(components, cfg.clone(), var_floor)
}

/// Refits the library from posterior-weighted candidates of all lattices.
pub fn m_step(
    lattices: &[Lattice],
    posteriors: &[Vec<f64>],
    lib: &PrimitiveLibrary,
) -> Result<PrimitiveLibrary> {
    refit_library(
        lattices,
        posteriors,
        |s| responsibilities(s, lib),
        lib.len(),
        &lib.cfg,
        lib.var_floor,
    )
}

/// One surviving segment of the hard segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedSegment {
    pub start: usize,
    pub end: usize,
    pub component: usize,
    /// Posterior probability of this segment.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    /// Selected cut sample indices, endpoints included.
    pub cuts: Vec<usize>,
    pub segments: Vec<AssignedSegment>,
    pub log_evidence: f64,
}

impl SegmentationResult {
    pub fn interior_cuts(&self) -> &[usize] {
        &self.cuts[1..self.cuts.len() - 1]
    }
}

/// Most probable segmentation under `lib`, with each segment assigned to its
/// most responsible component.
pub fn viterbi_segmentation(
    lattice: &Lattice,
    lib: &PrimitiveLibrary,
    p_c: f64,
) -> Result<SegmentationResult> {
    check_p_c(p_c)?;
    let edges = log_edges(lattice, lib, p_c);
    let (alpha, log_z) = forward_backward(lattice.n_cuts(), &edges)?;
    let (path, _) = max_product_path(lattice.n_cuts(), &edges)?;
    let mut cuts = vec![lattice.cuts[0]];
    let segments = path
        .iter()
        .map(|&e| {
            let c = &lattice.candidates[e];
            cuts.push(c.end);
            AssignedSegment {
                start: c.start,
                end: c.end,
                component: best_component(&c.stats, lib),
                alpha: alpha[e],
            }
        })
        .collect();
    Ok(SegmentationResult { cuts, segments, log_evidence: p_c.ln() + log_z })
}

/// Settings for a joint run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub p_c: f64,
    pub k_max: usize,
    /// Target library size.
    pub n_components: usize,
    /// Iteration cap for each growth stage.
    pub max_iter: usize,
    pub tol: f64,
    pub var_floor: f64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            p_c: DEFAULT_P_C,
            k_max: DEFAULT_K_MAX,
            n_components: DEFAULT_COMPONENTS,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            var_floor: DEFAULT_VAR_FLOOR,
            jobs: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        check_p_c(self.p_c)?;
        if self.k_max == 0 {
            return Err(Error::param("k_max must be at least 1"));
        }
        if self.n_components == 0 {
            return Err(Error::param("the library needs at least one component"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::param("tol must be >= 0"));
        }
        if !(self.var_floor > 0.0 && self.var_floor.is_finite()) {
            return Err(Error::param("var_floor must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmState {
    /// Number of M-steps performed over all stages.
    pub iterations: usize,
    /// Total log evidence after each E-step.
    pub history: Vec<f64>,
    /// Index into `history` where each stage begins. Evidence never drops
    /// within a stage; a split may lower it between stages.
    pub stage_starts: Vec<usize>,
    /// Every stage met the tolerance before its iteration cap.
    pub converged: bool,
}

impl EmState {
    /// The history cut into stages.
    pub fn stages(&self) -> Vec<&[f64]> {
        let mut bounds = self.stage_starts.clone();
        bounds.push(self.history.len());
        bounds.windows(2).map(|w| &self.history[w[0]..w[1]]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct EmOutput {
    pub library: PrimitiveLibrary,
    pub results: Vec<SegmentationResult>,
    pub state: EmState,
    pub lattices: Vec<Lattice>,
    /// Final segment posteriors, aligned with each lattice's candidates.
    pub posteriors: Vec<Vec<f64>>,
}

impl EmOutput {
    pub fn log_evidence(&self) -> f64 {
        *self.state.history.last().expect("history is never empty")
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))
}

/// Builds the candidate lattices of all trajectories.
pub fn build_lattices(
    trajs: &[Trajectory],
    cuts: &[CutPointSet],
    k_max: usize,
    dmp: &DmpConfig,
    jobs: usize,
) -> Result<Vec<Lattice>> {
    if trajs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if trajs.len() != cuts.len() {
        return Err(Error::DimensionMismatch { expected: trajs.len(), found: cuts.len() });
    }
    let lattices: Vec<Lattice> = pool(jobs)?.install(|| {
        trajs
            .par_iter()
            .zip(cuts.par_iter())
            .map(|(t, c)| enumerate_segments(t, c, k_max, dmp))
            .collect::<Result<Vec<_>>>()
    })?;
    if lattices.iter().all(|l| l.candidates.is_empty()) {
        return Err(Error::NoSegmentationPath);
    }
    Ok(lattices)
}

/// Single-component library fitted to all candidates weighted by their prior
/// posteriors.
pub fn root_library(lattices: &[Lattice], dmp: &DmpConfig, cfg: &EmConfig) -> Result<PrimitiveLibrary> {
    cfg.validate()?;
    let post = lattices
        .iter()
        .map(|l| prior_posteriors(l, cfg.p_c))
        .collect::<Result<Vec<_>>>()?;
    refit_library(lattices, &post, |_| vec![1.0], 1, dmp, cfg.var_floor)
}

/// Splits the `budget` heaviest components in two along their widest context
/// dimension. Ties in weight go to the lower index. The halves keep the
/// parent's shape and noise, share its weight, and sit half a standard
/// deviation either side of its context mean.
pub fn split_components(lib: &PrimitiveLibrary, budget: usize) -> PrimitiveLibrary {
    let mut order: Vec<usize> = (0..lib.len()).collect();
    order.sort_by(|&a, &b| lib.components[b].lambda.total_cmp(&lib.components[a].lambda));
    let chosen = &order[..budget.min(order.len())];
    let mut components = Vec::with_capacity(lib.len() + chosen.len());
    for (m, c) in lib.components.iter().enumerate() {
        if !chosen.contains(&m) {
            components.push(c.clone());
            continue;
        }
        let d = (0..c.context_var.len()).fold(0, |b, d| if c.context_var[d] > c.context_var[b] { d } else { b });
        let offset = 0.5 * c.context_var[d].sqrt();
        for sign in [-1.0, 1.0] {
            let mut half = LibraryComponent { lambda: c.lambda / 2.0, ..c.clone() };
            half.context_mean[d] += sign * offset;
            components.push(half);
        }
    }
    PrimitiveLibrary { components, ..lib.clone() }
}

fn e_step_all(
    pool: &rayon::ThreadPool,
    lattices: &[Lattice],
    lib: &PrimitiveLibrary,
    p_c: f64,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let per: Vec<(Vec<f64>, f64)> = pool.install(|| {
        lattices
            .par_iter()
            .map(|l| e_step(l, lib, p_c))
            .collect::<Result<Vec<_>>>()
    })?;
    let total = per.iter().map(|(_, e)| e).sum();
    Ok((per.into_iter().map(|(a, _)| a).collect(), total))
}

struct Stage {
    lib: PrimitiveLibrary,
    posteriors: Vec<Vec<f64>>,
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// EM at fixed library size, apart from collapsed components.
fn em_stage(
    pool: &rayon::ThreadPool,
    lattices: &[Lattice],
    mut lib: PrimitiveLibrary,
    cfg: &EmConfig,
) -> Result<Stage> {
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let posteriors = loop {
        let (post, total) = e_step_all(pool, lattices, &lib, cfg.p_c)?;
        if let Some(&prev) = history.last() {
            let gain: f64 = total - prev;
            if gain < -1e-9 * prev.abs().max(1.0) {
                log::warn!("log evidence decreased by {:.3e} at iteration {iterations}", -gain);
            }
            if gain.abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) || gain <= 0.0 {
                history.push(total);
                converged = true;
                break post;
            }
        }
        history.push(total);
        if iterations == cfg.max_iter {
            break post;
        }
        lib = m_step(lattices, &post, &lib)?;
        iterations += 1;
        log::debug!("iteration {iterations}: log evidence {total:.6}, {} components", lib.len());
    };
    if !converged {
        log::warn!("EM stopped after {iterations} iterations without converging");
    }
    Ok(Stage { lib, posteriors, history, iterations, converged })
}

fn finish(
    pool: &rayon::ThreadPool,
    lattices: Vec<Lattice>,
    stage: Stage,
    state: EmState,
    p_c: f64,
) -> Result<EmOutput> {
    let lib = stage.lib;
    let results = pool.install(|| {
        lattices
            .par_iter()
            .map(|l| viterbi_segmentation(l, &lib, p_c))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(EmOutput { library: lib, results, state, lattices, posteriors: stage.posteriors })
}

/// EM over prepared lattices starting from `lib`, without growth.
pub fn run_em_from(lattices: Vec<Lattice>, lib: PrimitiveLibrary, cfg: &EmConfig) -> Result<EmOutput> {
    cfg.validate()?;
    let pool = pool(cfg.jobs)?;
    let stage = em_stage(&pool, &lattices, lib, cfg)?;
    let state = EmState {
        iterations: stage.iterations,
        history: stage.history.clone(),
        stage_starts: vec![0],
        converged: stage.converged,
    };
    finish(&pool, lattices, stage, state, cfg.p_c)
}

/// Grows a library from the root component up to `cfg.n_components`.
/// Growth stops early when a round of splits does not increase the number of
/// surviving components; the better of the last two stages is kept.
pub fn grow_from(lattices: Vec<Lattice>, dmp: &DmpConfig, cfg: &EmConfig) -> Result<EmOutput> {
    cfg.validate()?;
    dmp.validate()?;
    let pool = pool(cfg.jobs)?;
    let root = root_library(&lattices, dmp, cfg)?;
    let mut stage = em_stage(&pool, &lattices, root, cfg)?;
    let mut state = EmState {
        iterations: stage.iterations,
        history: stage.history.clone(),
        stage_starts: vec![0],
        converged: stage.converged,
    };
    while stage.lib.len() < cfg.n_components {
        let before = stage.lib.len();
        let split = split_components(&stage.lib, cfg.n_components - before);
        let next = em_stage(&pool, &lattices, split, cfg)?;
        let grew = next.lib.len() > before;
        let last = |s: &Stage| *s.history.last().expect("history is never empty");
        if grew || last(&next) > last(&stage) {
            state.stage_starts.push(state.history.len());
            state.history.extend_from_slice(&next.history);
            state.iterations += next.iterations;
            state.converged &= next.converged;
            stage = next;
        }
        log::debug!("growth stage: {before} -> {} components", stage.lib.len());
        if !grew {
            break;
        }
    }
    finish(&pool, lattices, stage, state, cfg.p_c)
}

/// Full joint run: candidate fitting, library growth and EM.
pub fn run_em(
    trajs: &[Trajectory],
    cuts: &[CutPointSet],
    dmp: &DmpConfig,
    cfg: &EmConfig,
) -> Result<EmOutput> {
    cfg.validate()?;
    dmp.validate()?;
    let lattices = build_lattices(trajs, cuts, cfg.k_max, dmp, cfg.jobs)?;
    grow_from(lattices, dmp, cfg)
}

/// Bayesian information criterion of a finished run. The sample count is
/// the number of samples every segmentation scores.
pub fn bic(out: &EmOutput) -> f64 {
    let n: usize = out.lattices.iter().map(Lattice::scored_samples).sum();
    -2.0 * out.log_evidence() + out.library.n_free_parameters() as f64 * (n.max(1) as f64).ln()
}

/// Runs EM for each component count in `range` and keeps the lowest BIC;
/// ties go to the smaller count.
pub fn select_components(
    trajs: &[Trajectory],
    cuts: &[CutPointSet],
    dmp: &DmpConfig,
    cfg: &EmConfig,
    range: std::ops::RangeInclusive<usize>,
) -> Result<(EmOutput, Vec<(usize, f64)>)> {
    cfg.validate()?;
    let lattices = build_lattices(trajs, cuts, cfg.k_max, dmp, cfg.jobs)?;
    let mut best: Option<(f64, EmOutput)> = None;
    let mut scores = Vec::new();
    for m in range {
        let c = EmConfig { n_components: m, ..cfg.clone() };
        let out = grow_from(lattices.clone(), dmp, &c)?;
        let score = bic(&out);
        scores.push((m, score));
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, out));
        }
    }
    let (_, out) = best.ok_or_else(|| Error::param("empty component range"))?;
    Ok((out, scores))
}
