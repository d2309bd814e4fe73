//! Discrete (point-to-point) dynamic movement primitives.
//!
//! Both primitive channels, course deviation and speed deviation, share one
//! canonical phase `z` that decays from 1 as `dz/dt = -tau * alpha_z * z`
//! with `tau = 1 / T`. Each channel is a critically damped spring-damper
//!
//! ```text
//! dv/dt = tau * (alpha_y * (beta_y * (g - y) - v)) + tau * eta * f(z)
//! dy/dt = tau * v
//! ```
//!
//! driven by the normalized radial-basis forcing term
//! `f(z) = z * sum(w_n * psi_n(z)) / sum(psi_n(z))`, with amplitude
//! `eta = g - y0`. Weights are learned per basis by locally weighted
//! regression against the forcing a demonstration would have required.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trajectory::{estimate_derivatives, Channel, DerivativeTrack, Trajectory};

pub const DEFAULT_ALPHA_Z: f64 = 4.605;
pub const DEFAULT_ALPHA_Y: f64 = 25.0;
pub const DEFAULT_N_BASIS: usize = 15;
pub const DEFAULT_STEPS: usize = 200;
pub const DEFAULT_ETA_FLOOR: f64 = 1e-3;
pub const DEFAULT_SMOOTH_WINDOW: usize = 1;
/// Basis precision is `gain / spacing^2`; neighbouring bases then overlap at
/// `exp(-gain)`.
pub const DEFAULT_WIDTH_GAIN: f64 = 8.0;

/// Format tag written into serialized primitives.
pub const PRIMITIVE_FORMAT: &str = "mpseg-primitive";
pub const PRIMITIVE_VERSION: u32 = 1;

/// Integration step used for rollouts and canonical-system evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationStep {
    /// A fixed number of steps per primitive, `dt = T / n`.
    PerDuration(usize),
    /// A step in seconds, rounded so that it divides `T`.
    Seconds(f64),
}

impl IntegrationStep {
    /// Number of steps and the step length used for a primitive of `duration`.
    fn resolve(&self, duration: f64) -> Result<(usize, f64)> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::param(format!("duration must be positive, got {duration}")));
        }
        let steps = match *self {
            Self::PerDuration(n) => n,
            Self::Seconds(h) => {
                if duration < 2.0 * h * (1.0 - 1e-9) {
                    return Err(Error::param(format!(
                        "duration {duration} s is shorter than two integration steps of {h} s"
                    )));
                }
                (duration / h).round() as usize
            }
        };
        if steps < 2 {
            return Err(Error::param("a primitive needs at least 2 integration steps"));
        }
        Ok((steps, duration / steps as f64))
    }
}

/// DMP constants, basis layout and fitting options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpConfig {
    pub alpha_z: f64,
    pub alpha_y: f64,
    pub beta_y: f64,
    pub n_basis: usize,
    /// Basis centers in phase, strictly decreasing from 1.
    pub centers: Vec<f64>,
    /// Basis bandwidths.
    pub widths: Vec<f64>,
    pub step: IntegrationStep,
    /// Moving-average window applied before differentiating demonstrations.
    pub smooth_window: usize,
    /// Amplitudes `|g - y0|` below this leave a channel's weights at zero.
    pub eta_floor: f64,
}

impl Default for DmpConfig {
    fn default() -> Self {
        Self::new(DEFAULT_ALPHA_Z, DEFAULT_ALPHA_Y, DEFAULT_N_BASIS)
            .expect("default constants are valid")
    }
}

impl DmpConfig {
    /// Builds a critically damped configuration (`beta_y = alpha_y / 4`) with
    /// basis centers equally spaced in time.
    pub fn new(alpha_z: f64, alpha_y: f64, n_basis: usize) -> Result<Self> {
        if n_basis == 0 {
            return Err(Error::param("n_basis must be at least 1"));
        }
        let centers: Vec<f64> = if n_basis == 1 {
            vec![1.0]
        } else {
            (0..n_basis)
                .map(|n| (-alpha_z * n as f64 / (n_basis - 1) as f64).exp())
                .collect()
        };
        let mut widths: Vec<f64> = centers
            .windows(2)
            .map(|w| DEFAULT_WIDTH_GAIN / (w[1] - w[0]).powi(2))
            .collect();
        widths.push(widths.last().copied().unwrap_or(1.0));

        let cfg = Self {
            alpha_z,
            alpha_y,
            beta_y: alpha_y / 4.0,
            n_basis,
            centers,
            widths,
            step: IntegrationStep::PerDuration(DEFAULT_STEPS),
            smooth_window: DEFAULT_SMOOTH_WINDOW,
            eta_floor: DEFAULT_ETA_FLOOR,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_step(mut self, step: IntegrationStep) -> Self {
        self.step = step;
        self
    }

    pub fn with_smooth_window(mut self, window: usize) -> Self {
        self.smooth_window = window;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be positive, got {v}")))
            }
        };
        positive("alpha_z", self.alpha_z)?;
        positive("alpha_y", self.alpha_y)?;
        positive("beta_y", self.beta_y)?;
        positive("eta_floor", self.eta_floor)?;
        if (self.beta_y - self.alpha_y / 4.0).abs() > 1e-12 * self.alpha_y {
            return Err(Error::param(format!(
                "beta_y ({}) must equal alpha_y / 4 for critical damping",
                self.beta_y
            )));
        }
        if self.n_basis == 0
            || self.centers.len() != self.n_basis
            || self.widths.len() != self.n_basis
        {
            return Err(Error::param("basis centers and widths must have n_basis entries"));
        }
        if self.centers.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
            return Err(Error::param("basis centers must lie in (0, 1]"));
        }
        if self.centers.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::param("basis centers must be strictly decreasing"));
        }
        for &w in &self.widths {
            positive("basis width", w)?;
        }
        match self.step {
            IntegrationStep::PerDuration(n) if n < 2 => {
                return Err(Error::param("need at least 2 integration steps per primitive"))
            }
            IntegrationStep::Seconds(h) => positive("integration step", h)?,
            _ => {}
        }
        if self.smooth_window % 2 == 0 {
            return Err(Error::param("smooth_window must be odd"));
        }
        Ok(())
    }

    /// Short content hash identifying this configuration in output files.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    fn basis(&self, z: f64) -> impl Iterator<Item = f64> + '_ {
        self.centers
            .iter()
            .zip(&self.widths)
            .map(move |(&c, &h)| (-h * (z - c).powi(2)).exp())
    }
}

/// Learned forcing weights for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpChannelWeights {
    pub channel: Channel,
    pub weights: Vec<f64>,
}

impl DmpChannelWeights {
    pub fn zeros(channel: Channel, n: usize) -> Self {
        Self {
            channel,
            weights: vec![0.0; n],
        }
    }
}

/// Shape parameters of a primitive: initial speed and both weight vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpParams {
    pub v_init: f64,
    pub omega_theta: DmpChannelWeights,
    pub omega_v: DmpChannelWeights,
}

impl DmpParams {
    pub fn n_basis(&self) -> usize {
        self.omega_theta.weights.len()
    }

    fn check(&self, cfg: &DmpConfig) -> Result<()> {
        for w in [&self.omega_theta, &self.omega_v] {
            if w.weights.len() != cfg.n_basis {
                return Err(Error::DimensionMismatch {
                    expected: cfg.n_basis,
                    found: w.weights.len(),
                });
            }
        }
        Ok(())
    }
}

/// Goal and duration of a primitive instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmpAdjustment {
    /// Final course deviation (degrees) and speed deviation (m/s).
    pub g: [f64; 2],
    /// Seconds.
    pub duration: f64,
}

/// Sampled primitive: deviations from the segment start and their rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveTrack {
    pub dt: f64,
    pub v_init: f64,
    /// Course deviation from the start, degrees.
    pub theta: Vec<f64>,
    /// Degrees per second.
    pub theta_rate: Vec<f64>,
    /// Speed deviation from the start, m/s.
    pub speed: Vec<f64>,
    /// m/s per second.
    pub speed_rate: Vec<f64>,
}

impl PrimitiveTrack {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn position(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Lateral => &self.theta,
            Channel::Longitudinal => &self.speed,
        }
    }

    pub fn rate(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Lateral => &self.theta_rate,
            Channel::Longitudinal => &self.speed_rate,
        }
    }
}

/// One classical fourth-order Runge-Kutta step of an autonomous system.
fn rk4_step<const D: usize>(x: &[f64; D], h: f64, f: impl Fn(&[f64; D]) -> [f64; D]) -> [f64; D] {
    let axpy = |a: &[f64; D], k: &[f64; D], s: f64| {
        let mut out = *a;
        for (o, k) in out.iter_mut().zip(k) {
            *o += s * k;
        }
        out
    };
    let k1 = f(x);
    let k2 = f(&axpy(x, &k1, 0.5 * h));
    let k3 = f(&axpy(x, &k2, 0.5 * h));
    let k4 = f(&axpy(x, &k3, h));
    let mut out = *x;
    for i in 0..D {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn phase_samples(alpha_z: f64, tau: f64, h: f64, steps: usize) -> Vec<f64> {
    let mut z = [1.0];
    let mut out = Vec::with_capacity(steps + 1);
    out.push(1.0);
    for _ in 0..steps {
        z = rk4_step(&z, h, |s| [-tau * alpha_z * s[0]]);
        out.push(z[0]);
    }
    out
}

/// Integrates the canonical system over `[0, duration]`, starting at `z = 1`.
pub fn integrate_canonical(cfg: &DmpConfig, duration: f64) -> Result<Vec<f64>> {
    let (steps, h) = cfg.step.resolve(duration)?;
    Ok(phase_samples(cfg.alpha_z, 1.0 / duration, h, steps))
}

/// Normalized forcing term at phase `z`; zero at `z = 0` and whenever the
/// basis activations underflow.
pub fn forcing(z: f64, w: &DmpChannelWeights, cfg: &DmpConfig) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (psi, wn) in cfg.basis(z).zip(&w.weights) {
        num += wn * psi;
        den += psi;
    }
    if den < f64::MIN_POSITIVE {
        return 0.0;
    }
    num / den * z
}

/// Learns one channel's weights from a demonstration by per-basis locally
/// weighted regression.
///
/// The demonstrated forcing is divided by the amplitude `g - y0` so that the
/// weights reproduce the demonstration under the amplitude-scaled rollout.
/// Channels whose amplitude falls below `cfg.eta_floor` get zero weights.
pub fn learn_weights(
    track: &DerivativeTrack,
    g: f64,
    duration: f64,
    cfg: &DmpConfig,
) -> Result<DmpChannelWeights> {
    let n = track.len();
    if n < 5 {
        return Err(Error::param(format!("need at least 5 samples to learn, got {n}")));
    }
    if (track.duration() - duration).abs() > 1e-6 * duration.max(1.0) {
        return Err(Error::param(format!(
            "duration {duration} s does not match {} samples at dt {}",
            n, track.dt
        )));
    }
    let eta = g - track.y[0];
    if eta.abs() < cfg.eta_floor {
        return Ok(DmpChannelWeights::zeros(track.channel, cfg.n_basis));
    }

    let tau = 1.0 / duration;
    let z = phase_samples(cfg.alpha_z, tau, track.dt, n - 1);
    let target: Vec<f64> = (0..n)
        .map(|t| {
            let v = track.yd[t] / tau;
            let dev = track.ydd[t] / (tau * tau) - cfg.alpha_y * (cfg.beta_y * (g - track.y[t]) - v);
            dev / eta
        })
        .collect();

    let weights = cfg
        .centers
        .iter()
        .zip(&cfg.widths)
        .map(|(&c, &h)| {
            let (mut num, mut den) = (0.0, 0.0);
            for (&zt, &ft) in z.iter().zip(&target) {
                let psi = (-h * (zt - c).powi(2)).exp();
                num += psi * zt * ft;
                den += psi * zt * zt;
            }
            if den < 1e-12 {
                0.0
            } else {
                num / den
            }
        })
        .collect();
    Ok(DmpChannelWeights {
        channel: track.channel,
        weights,
    })
}

/// Fits both channels of the segment spanning samples `start..=end`.
///
/// Deviations are measured from the start sample: the course deviation is the
/// running sum of `dtheta` after `start`, the speed deviation is `v - v[start]`.
pub fn fit_segment(
    traj: &Trajectory,
    start: usize,
    end: usize,
    cfg: &DmpConfig,
) -> Result<(DmpParams, DmpAdjustment)> {
    if end <= start || end >= traj.len() {
        return Err(Error::param(format!(
            "segment {start}..={end} is outside a trajectory of {} samples",
            traj.len()
        )));
    }
    let len = end - start + 1;
    if len < 5 {
        return Err(Error::param(format!(
            "segment {start}..={end} has {len} samples; at least 5 are needed"
        )));
    }
    let pts = &traj.points()[start..=end];
    let mut theta = Vec::with_capacity(len);
    let mut acc = 0.0;
    theta.push(0.0);
    for p in &pts[1..] {
        acc += p.dtheta;
        theta.push(acc);
    }
    let v0 = pts[0].v;
    let speed: Vec<f64> = pts.iter().map(|p| p.v - v0).collect();

    let mut window = cfg.smooth_window.min(len - 1);
    if window % 2 == 0 {
        window -= 1;
    }
    let dt = traj.dt();
    let duration = (len - 1) as f64 * dt;
    let g = [theta[len - 1], speed[len - 1]];
    let lat = estimate_derivatives(&theta, dt, window, Channel::Lateral)?;
    let lon = estimate_derivatives(&speed, dt, window, Channel::Longitudinal)?;

    let params = DmpParams {
        v_init: v0,
        omega_theta: learn_weights(&lat, g[0], duration, cfg)?,
        omega_v: learn_weights(&lon, g[1], duration, cfg)?,
    };
    Ok((params, DmpAdjustment { g, duration }))
}

/// Integrates both channels from rest at zero deviation.
pub fn rollout(params: &DmpParams, adj: &DmpAdjustment, cfg: &DmpConfig) -> Result<PrimitiveTrack> {
    params.check(cfg)?;
    let (steps, h) = cfg.step.resolve(adj.duration)?;
    let tau = 1.0 / adj.duration;
    let [g_th, g_v] = adj.g;
    // The rollout starts at y0 = 0, so the amplitude equals the goal.
    let (eta_th, eta_v) = (g_th, g_v);
    let (ay, by, az) = (cfg.alpha_y, cfg.beta_y, cfg.alpha_z);
    let (w_th, w_v) = (&params.omega_theta, &params.omega_v);

    let rhs = |s: &[f64; 5]| {
        let [z, y1, v1, y2, v2] = *s;
        [
            -tau * az * z,
            tau * v1,
            tau * (ay * (by * (g_th - y1) - v1)) + tau * eta_th * forcing(z, w_th, cfg),
            tau * v2,
            tau * (ay * (by * (g_v - y2) - v2)) + tau * eta_v * forcing(z, w_v, cfg),
        ]
    };

    let mut track = PrimitiveTrack {
        dt: h,
        v_init: params.v_init,
        theta: Vec::with_capacity(steps + 1),
        theta_rate: Vec::with_capacity(steps + 1),
        speed: Vec::with_capacity(steps + 1),
        speed_rate: Vec::with_capacity(steps + 1),
    };
    let mut state = [1.0, 0.0, 0.0, 0.0, 0.0];
    for k in 0..=steps {
        if k > 0 {
            state = rk4_step(&state, h, rhs);
        }
        track.theta.push(state[1]);
        track.theta_rate.push(tau * state[2]);
        track.speed.push(state[3]);
        track.speed_rate.push(tau * state[4]);
    }
    Ok(track)
}

/// Rolls out the same shape parameters toward a new goal over a new duration.
pub fn retarget(
    params: &DmpParams,
    new_g: [f64; 2],
    new_duration: f64,
    cfg: &DmpConfig,
) -> Result<PrimitiveTrack> {
    rollout(
        params,
        &DmpAdjustment {
            g: new_g,
            duration: new_duration,
        },
        cfg,
    )
}

/// Versioned, self-describing record of one primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveRecord {
    pub format: String,
    pub version: u32,
    pub cfg_hash: String,
    pub v_init: f64,
    pub omega_theta: Vec<f64>,
    pub omega_v: Vec<f64>,
    pub g: [f64; 2],
    pub duration: f64,
}

impl PrimitiveRecord {
    pub fn new(params: &DmpParams, adj: &DmpAdjustment, cfg: &DmpConfig) -> Self {
        Self {
            format: PRIMITIVE_FORMAT.to_owned(),
            version: PRIMITIVE_VERSION,
            cfg_hash: cfg.hash(),
            v_init: params.v_init,
            omega_theta: params.omega_theta.weights.clone(),
            omega_v: params.omega_v.weights.clone(),
            g: adj.g,
            duration: adj.duration,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if rec.format != PRIMITIVE_FORMAT || rec.version != PRIMITIVE_VERSION {
            return Err(Error::Format(format!(
                "unsupported primitive format {} v{}",
                rec.format, rec.version
            )));
        }
        if rec.omega_theta.len() != rec.omega_v.len() {
            return Err(Error::Format("channel weight lengths differ".into()));
        }
        Ok(rec)
    }

    pub fn params(&self) -> DmpParams {
        DmpParams {
            v_init: self.v_init,
            omega_theta: DmpChannelWeights {
                channel: Channel::Lateral,
                weights: self.omega_theta.clone(),
            },
            omega_v: DmpChannelWeights {
                channel: Channel::Longitudinal,
                weights: self.omega_v.clone(),
            },
        }
    }

    pub fn adjustment(&self) -> DmpAdjustment {
        DmpAdjustment {
            g: self.g,
            duration: self.duration,
        }
    }
}

/// Analytic demonstration profiles, normalized to run from 0 to 1 over `s` in
/// `[0, 1]`.
pub mod profiles {
    use super::{learn_weights, DmpChannelWeights, DmpConfig};
    use crate::error::Result;
    use crate::trajectory::{estimate_derivatives, Channel};

    /// Weights reproducing a unit-amplitude `profile` on `[0, 1]`, sampled
    /// at 200 steps. Weights are independent of amplitude and duration.
    pub fn learn(profile: impl Fn(f64) -> f64, channel: Channel, cfg: &DmpConfig) -> Result<DmpChannelWeights> {
        let steps = super::DEFAULT_STEPS;
        let dt = 1.0 / steps as f64;
        let y: Vec<f64> = (0..=steps).map(|k| profile(k as f64 / steps as f64)).collect();
        let track = estimate_derivatives(&y, dt, 1, channel)?;
        learn_weights(&track, 1.0, 1.0, cfg)
    }

    /// Minimum-jerk position profile.
    pub fn min_jerk(s: f64) -> f64 {
        s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }

    /// Logistic step with steepness `k`, rescaled to hit 0 and 1 exactly.
    pub fn sigmoid(s: f64, k: f64) -> f64 {
        let l = |x: f64| 1.0 / (1.0 + (-k * (x - 0.5)).exp());
        (l(s) - l(0.0)) / (l(1.0) - l(0.0))
    }

    /// Minimum-jerk profile under the time warp `s^p`; `p < 1` front-loads
    /// the motion, `p > 1` delays it.
    pub fn warped_min_jerk(s: f64, p: f64) -> f64 {
        min_jerk(s.powf(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::ObservedPoint;
    use proptest::prelude::*;

    fn weights(channel: Channel, w: Vec<f64>) -> DmpChannelWeights {
        DmpChannelWeights { channel, weights: w }
    }

    fn params(wt: Vec<f64>, wv: Vec<f64>) -> DmpParams {
        DmpParams {
            v_init: 10.0,
            omega_theta: weights(Channel::Lateral, wt),
            omega_v: weights(Channel::Longitudinal, wv),
        }
    }

    fn zero_params(n: usize) -> DmpParams {
        params(vec![0.0; n], vec![0.0; n])
    }

    fn learn_profile(profile: impl Fn(f64) -> f64, g: f64, duration: f64, cfg: &DmpConfig) -> DmpChannelWeights {
        let steps = 200;
        let dt = duration / steps as f64;
        let y: Vec<f64> = (0..=steps).map(|k| g * profile(k as f64 / steps as f64)).collect();
        let track = estimate_derivatives(&y, dt, 1, Channel::Lateral).unwrap();
        learn_weights(&track, g, duration, cfg).unwrap()
    }

    fn rmse(a: &[f64], b: &[f64]) -> f64 {
        (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
    }

    #[test]
    fn canonical_starts_at_one_and_matches_closed_form() {
        for &az in &[1.0, DEFAULT_ALPHA_Z, 10.0] {
            let cfg = DmpConfig::new(az, 25.0, 5)
                .unwrap()
                .with_step(IntegrationStep::PerDuration(1000));
            let z = integrate_canonical(&cfg, 3.0).unwrap();
            assert_eq!(z.len(), 1001);
            assert_eq!(z[0], 1.0);
            assert!(z.windows(2).all(|w| w[1] < w[0]));
            assert!((z[1000] - (-az).exp()).abs() < 1e-8);
        }
        let cfg = DmpConfig::new(100f64.ln(), 25.0, 5).unwrap();
        let z = integrate_canonical(&cfg, 2.0).unwrap();
        assert!((z.last().unwrap() - 0.01).abs() < 1e-9);
    }

    #[test]
    fn canonical_length_with_fixed_step() {
        let cfg = DmpConfig::default().with_step(IntegrationStep::Seconds(0.1));
        assert_eq!(integrate_canonical(&cfg, 2.0).unwrap().len(), 21);
        assert!(integrate_canonical(&cfg, 0.15).is_err());
    }

    #[test]
    fn forcing_examples() {
        let cfg = DmpConfig::default();
        let zero = DmpChannelWeights::zeros(Channel::Lateral, cfg.n_basis);
        for z in [0.0, 0.3, 1.0] {
            assert_eq!(forcing(z, &zero, &cfg), 0.0);
        }
        let w = weights(Channel::Lateral, (0..15).map(|i| i as f64 - 3.0).collect());
        assert_eq!(forcing(0.0, &w, &cfg), 0.0);

        let one = DmpConfig::new(DEFAULT_ALPHA_Z, 25.0, 1).unwrap();
        let w1 = weights(Channel::Lateral, vec![2.5]);
        for z in [0.1, 0.5, 0.9] {
            assert!((forcing(z, &w1, &one) - 2.5 * z).abs() < 1e-14);
        }
    }

    #[test]
    fn basis_layout() {
        let cfg = DmpConfig::default();
        assert_eq!(cfg.centers[0], 1.0);
        assert!((cfg.centers[14] - (-DEFAULT_ALPHA_Z).exp()).abs() < 1e-15);
        assert_eq!(cfg.widths[14], cfg.widths[13]);
        assert_eq!(cfg.beta_y, 6.25);
        let mut bad = cfg.clone();
        bad.beta_y = 5.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stationary_demo_learns_zero_weights() {
        let cfg = DmpConfig::default();
        let y = vec![4.0; 50];
        let track = estimate_derivatives(&y, 0.1, 1, Channel::Lateral).unwrap();
        let w = learn_weights(&track, 4.0, 4.9, &cfg).unwrap();
        assert!(w.weights.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn learn_rejects_inconsistent_duration() {
        let cfg = DmpConfig::default();
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let track = estimate_derivatives(&y, 0.1, 1, Channel::Lateral).unwrap();
        assert!(learn_weights(&track, 19.0, 5.0, &cfg).is_err());
    }

    #[test]
    fn fit_rollout_roundtrip_recovers_weights() {
        // Oracle: weights are read back from a rollout they generated.
        let cfg = DmpConfig::default();
        let patterns: [fn(f64) -> f64; 3] = [
            |_| 25.0,
            |n| 20.0 + 30.0 * (std::f64::consts::PI * n / 14.0).sin(),
            |n| -40.0 + 6.0 * n,
        ];
        for pattern in patterns {
            let truth: Vec<f64> = (0..15).map(|n| pattern(n as f64)).collect();
            for &(g, duration) in &[(30.0, 4.0), (-8.0, 2.0)] {
                let p = params(truth.clone(), vec![0.0; 15]);
                let adj = DmpAdjustment { g: [g, 0.0], duration };
                let track = rollout(&p, &adj, &cfg).unwrap();
                let demo = estimate_derivatives(&track.theta, track.dt, 1, Channel::Lateral).unwrap();
                let learned = learn_weights(&demo, g, duration, &cfg).unwrap();
                let worst = learned
                    .weights
                    .iter()
                    .zip(&truth)
                    .map(|(w, t)| (w - t).abs() / (1.0 + t.abs()))
                    .fold(0.0, f64::max);
                assert!(worst < 0.05, "worst relative error {worst} for {truth:?}");
            }
        }
    }

    #[test]
    fn min_jerk_reproduction() {
        let cfg = DmpConfig::default();
        for &(g, duration) in &[(25.0, 3.0), (-60.0, 6.0), (0.8, 1.5)] {
            let w = learn_profile(profiles::min_jerk, g, duration, &cfg);
            let p = DmpParams {
                v_init: 0.0,
                omega_theta: w,
                omega_v: DmpChannelWeights::zeros(Channel::Longitudinal, 15),
            };
            let track = rollout(&p, &DmpAdjustment { g: [g, 0.0], duration }, &cfg).unwrap();
            let demo: Vec<f64> = (0..=200).map(|k| g * profiles::min_jerk(k as f64 / 200.0)).collect();
            let err = rmse(&track.theta, &demo);
            assert!(err < 0.02 * g.abs(), "rmse {err} for g {g}");
        }
    }

    #[test]
    fn fit_segment_examples() {
        let cfg = DmpConfig::default();
        let straight = Trajectory::new(
            0.1,
            vec![ObservedPoint { dtheta: 0.0, v: 12.0 }; 40],
        )
        .unwrap();
        let (p, adj) = fit_segment(&straight, 5, 30, &cfg).unwrap();
        assert_eq!(adj.g, [0.0, 0.0]);
        assert!((adj.duration - 2.5).abs() < 1e-12);
        assert_eq!(p.v_init, 12.0);
        assert!(p.omega_theta.weights.iter().chain(&p.omega_v.weights).all(|&w| w == 0.0));

        // A lane change generated by rollout; g is read straight off the data.
        let gen_cfg = cfg.clone().with_step(IntegrationStep::Seconds(0.1));
        let shape = params(
            learn_profile(|s| profiles::sigmoid(s, 10.0), 1.0, 1.0, &cfg).weights,
            learn_profile(profiles::min_jerk, 1.0, 1.0, &cfg).weights,
        );
        let truth_adj = DmpAdjustment { g: [7.5, 0.8], duration: 3.0 };
        let track = rollout(&shape, &truth_adj, &gen_cfg).unwrap();
        let mut points = vec![ObservedPoint { dtheta: 0.0, v: 9.0 }];
        for k in 1..track.len() {
            points.push(ObservedPoint {
                dtheta: track.theta[k] - track.theta[k - 1],
                v: 9.0 + track.speed[k],
            });
        }
        let traj = Trajectory::new(0.1, points).unwrap();
        let (fitted, adj) = fit_segment(&traj, 0, traj.last_index(), &cfg).unwrap();
        // The generator's realized goal is where its rollout ended.
        assert!((adj.g[0] - track.theta.last().unwrap()).abs() < 1e-9);
        assert!((adj.g[1] - track.speed.last().unwrap()).abs() < 1e-9);
        assert!((adj.g[0] - 7.5).abs() < 1e-3 * 7.5);
        assert!((adj.g[1] - 0.8).abs() < 1e-3 * 0.8);
        assert!((adj.duration - 3.0).abs() < 1e-9);
        assert_eq!(fitted.v_init, traj.points()[0].v);

        assert!(fit_segment(&traj, 3, 5, &cfg).is_err());
        assert!(fit_segment(&traj, 10, 5, &cfg).is_err());
        assert!(fit_segment(&traj, 0, 99, &cfg).is_err());
    }

    #[test]
    fn zero_weight_rollout_converges_monotonically() {
        let cfg = DmpConfig::default();
        let t = rollout(&zero_params(15), &DmpAdjustment { g: [1.0, 0.0], duration: 2.0 }, &cfg).unwrap();
        assert!(t.theta.windows(2).all(|w| w[1] >= w[0]));
        assert!((t.theta.last().unwrap() - 1.0).abs() < 1e-3);
        assert!(t.speed.iter().all(|&s| s == 0.0));

        let rest = rollout(&zero_params(15), &DmpAdjustment { g: [0.0, 0.0], duration: 2.0 }, &cfg).unwrap();
        assert!(rest.theta.iter().chain(&rest.speed).all(|&s| s == 0.0));
    }

    #[test]
    fn retarget_identity_and_scaling() {
        let cfg = DmpConfig::default();
        let w = learn_profile(profiles::min_jerk, 1.0, 1.0, &cfg);
        let p = DmpParams {
            v_init: 5.0,
            omega_theta: w.clone(),
            omega_v: DmpChannelWeights { channel: Channel::Longitudinal, weights: w.weights.clone() },
        };
        let adj = DmpAdjustment { g: [12.0, -1.5], duration: 3.0 };
        let base = rollout(&p, &adj, &cfg).unwrap();
        assert_eq!(retarget(&p, adj.g, adj.duration, &cfg).unwrap(), base);

        let zp = zero_params(15);
        let one = retarget(&zp, [3.0, 1.0], 2.0, &cfg).unwrap();
        let two = retarget(&zp, [6.0, 2.0], 2.0, &cfg).unwrap();
        for k in 0..one.len() {
            assert_eq!(two.theta[k], 2.0 * one.theta[k]);
            assert_eq!(two.speed[k], 2.0 * one.speed[k]);
        }

        let moved = retarget(&p, [-20.0, 2.0], 5.0, &cfg).unwrap();
        assert!((moved.theta.last().unwrap() + 20.0).abs() < 1e-3 * 20.0);
        assert!((moved.speed.last().unwrap() - 2.0).abs() < 1e-3 * 2.0);
        assert_eq!(moved.v_init, 5.0);
    }

    #[test]
    fn primitive_record_roundtrip() {
        let cfg = DmpConfig::default();
        let p = params((0..15).map(|i| i as f64 * 0.1).collect(), vec![1.0; 15]);
        let adj = DmpAdjustment { g: [3.0, -0.5], duration: 2.2 };
        let rec = PrimitiveRecord::new(&p, &adj, &cfg);
        let back = PrimitiveRecord::from_json(&rec.to_json()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.params(), p);
        assert_eq!(back.adjustment(), adj);
        assert!(PrimitiveRecord::from_json("{\"format\":\"x\"}").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn endpoint_converges_to_goal(
            wt in proptest::collection::vec(-100.0..100.0f64, 15),
            wv in proptest::collection::vec(-100.0..100.0f64, 15),
            g in (-90.0..90.0f64, -5.0..5.0f64),
            duration in 0.5..10.0f64,
        ) {
            let cfg = DmpConfig::default();
            let t = rollout(&params(wt, wv), &DmpAdjustment { g: [g.0, g.1], duration }, &cfg).unwrap();
            let tol = |goal: f64| 0.02 * goal.abs().max(1.0);
            prop_assert!((t.theta.last().unwrap() - g.0).abs() <= tol(g.0));
            prop_assert!((t.speed.last().unwrap() - g.1).abs() <= tol(g.1));
        }

        #[test]
        fn zero_weight_rollout_is_linear_in_goal(
            g in (-90.0..90.0f64, -5.0..5.0f64),
            k in -3.0..3.0f64,
        ) {
            let cfg = DmpConfig::default();
            let zp = zero_params(15);
            let a = retarget(&zp, [g.0, g.1], 2.0, &cfg).unwrap();
            let b = retarget(&zp, [k * g.0, k * g.1], 2.0, &cfg).unwrap();
            for i in 0..a.len() {
                prop_assert!((b.theta[i] - k * a.theta[i]).abs() <= 1e-9 * (1.0 + (k * a.theta[i]).abs()));
                prop_assert!((b.speed[i] - k * a.speed[i]).abs() <= 1e-9 * (1.0 + (k * a.speed[i]).abs()));
            }
        }

        #[test]
        fn duration_change_preserves_shape(
            wt in proptest::collection::vec(-50.0..50.0f64, 15),
            duration in 0.5..6.0f64,
            c in 1.2..3.0f64,
        ) {
            let cfg = DmpConfig::default().with_step(IntegrationStep::Seconds(0.01));
            let p = params(wt, vec![0.0; 15]);
            let a = retarget(&p, [10.0, 0.0], duration, &cfg).unwrap();
            let b = retarget(&p, [10.0, 0.0], c * duration, &cfg).unwrap();
            // Compare at matching normalized times by linear interpolation.
            let at = |t: &PrimitiveTrack, s: f64| {
                let x = s * (t.len() - 1) as f64;
                let i = (x.floor() as usize).min(t.len() - 2);
                let f = x - i as f64;
                t.theta[i] * (1.0 - f) + t.theta[i + 1] * f
            };
            for k in 0..=50 {
                let s = k as f64 / 50.0;
                prop_assert!((at(&a, s) - at(&b, s)).abs() < 0.01 * 10.0);
            }
        }
    }
}
