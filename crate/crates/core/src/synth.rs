//! Synthetic ground truth: concatenated primitive rollouts with noise and
//! spurious sign flips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dmp::{profiles, rollout, DmpAdjustment, DmpChannelWeights, DmpConfig, DmpParams, IntegrationStep};
use crate::error::{Error, Result};
use crate::trajectory::{Channel, ObservedPoint, RawSample, Trajectory};

/// A primitive shape with ranges for its adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub name: String,
    /// Shape weights; `v_init` is ignored.
    pub params: DmpParams,
    /// Range of `|g_theta|` in degrees. The sign is chosen by the sequencer.
    pub g_theta: [f64; 2],
    /// Range of `|g_v|` in m/s. The sign steers speed toward the cruise speed.
    pub g_v: [f64; 2],
    pub duration: [f64; 2],
}

impl Prototype {
    /// A prototype with no lateral motion.
    pub fn is_straight(&self) -> bool {
        self.g_theta[1] == 0.0
    }
}

/// The four default shapes: sharp turn, lane change, direction correction and
/// speed-hold straight.
pub fn default_prototypes(cfg: &DmpConfig) -> Result<Vec<Prototype>> {
    let lat = |f: &dyn Fn(f64) -> f64| profiles::learn(f, Channel::Lateral, cfg);
    let lon = |f: &dyn Fn(f64) -> f64| profiles::learn(f, Channel::Longitudinal, cfg);
    let make = |name: &str, wt: DmpChannelWeights, wv: DmpChannelWeights, g_theta, g_v, duration| Prototype {
        name: name.to_string(),
        params: DmpParams { v_init: 0.0, omega_theta: wt, omega_v: wv },
        g_theta,
        g_v,
        duration,
    };
    Ok(vec![
        make(
            "sharp_turn",
            lat(&profiles::min_jerk)?,
            lon(&|s| profiles::sigmoid(s, 8.0))?,
            [60.0, 90.0],
            [1.5, 3.0],
            [5.0, 7.0],
        ),
        make(
            "lane_change",
            lat(&|s| profiles::sigmoid(s, 10.0))?,
            lon(&profiles::min_jerk)?,
            [6.0, 10.0],
            [0.5, 1.0],
            [2.5, 3.5],
        ),
        make(
            "correction",
            lat(&|s| profiles::warped_min_jerk(s, 0.6))?,
            lon(&profiles::min_jerk)?,
            [3.0, 5.0],
            [0.2, 0.4],
            [1.5, 2.5],
        ),
        make(
            "straight",
            DmpChannelWeights::zeros(Channel::Lateral, cfg.n_basis),
            lon(&profiles::min_jerk)?,
            [0.0, 0.0],
            [0.5, 1.5],
            [3.0, 5.0],
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub prototypes: Vec<Prototype>,
    pub n_primitives: usize,
    pub dt: f64,
    /// Half-width of the uniform noise added to every course increment, deg.
    pub noise_deg: f64,
    /// Half-width of the uniform noise added to speed, m/s.
    pub speed_noise: f64,
    /// Expected number of spurious sign flips per primitive.
    pub wiggle_rate: f64,
    /// Smallest course increment magnitude of a turning primitive, deg.
    pub min_step_deg: f64,
    /// Minimum distance between any two sign changes, in samples.
    pub min_gap: usize,
    pub cruise_speed: f64,
    pub initial_course: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(prototypes: Vec<Prototype>, seed: u64) -> Self {
        Self {
            prototypes,
            n_primitives: 5,
            dt: 0.1,
            noise_deg: 0.02,
            speed_noise: 0.02,
            wiggle_rate: 1.0,
            min_step_deg: 0.12,
            min_gap: crate::cuts::DEFAULT_MIN_GAP,
            cruise_speed: 12.0,
            initial_course: 90.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.prototypes.is_empty() {
            return Err(Error::param("a scenario needs at least one prototype"));
        }
        if self.prototypes.iter().all(Prototype::is_straight) && self.n_primitives > 1 {
            return Err(Error::param("consecutive straights cannot be separated; add a turning prototype"));
        }
        if self.n_primitives == 0 || !(self.dt > 0.0) {
            return Err(Error::param("n_primitives and dt must be positive"));
        }
        if !(self.noise_deg >= 0.0 && self.speed_noise >= 0.0 && self.wiggle_rate >= 0.0) {
            return Err(Error::param("noise amplitudes and wiggle rate must be >= 0"));
        }
        for p in &self.prototypes {
            if p.duration[0] < (2 * self.min_gap + 2) as f64 * self.dt || p.duration[1] < p.duration[0] {
                return Err(Error::param(format!("prototype {} is too short for min_gap", p.name)));
            }
        }
        Ok(())
    }
}

/// Output of [`generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub trajectory: Trajectory,
    /// Absolute course and speed samples on the grid `t = k dt`; resampling
    /// them at `dt` yields `trajectory`.
    pub samples: Vec<RawSample>,
    /// True cut indices, endpoints included.
    pub true_cuts: Vec<usize>,
    /// Prototype index of each primitive, in order.
    pub components: Vec<usize>,
    /// Sample indices of injected sign flips.
    pub wiggles: Vec<usize>,
}

impl Scenario {
    pub fn interior_cuts(&self) -> &[usize] {
        &self.true_cuts[1..self.true_cuts.len() - 1]
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Samples a primitive sequence and stitches the rollouts.
///
/// Primitive `k` contributes its course increments at indices
/// `b_k..b_k + L_k`, so the true cut `b_k` is the first increment of the new
/// primitive. Consecutive turning primitives alternate in sign and two
/// straights are never adjacent, so every true cut is a sign change. Turning
/// increments are kept at least `min_step_deg` in magnitude.
pub fn generate(spec: &ScenarioSpec, cfg: &DmpConfig) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let step_cfg = cfg.clone().with_step(IntegrationStep::Seconds(spec.dt));

    let mut dtheta: Vec<f64> = Vec::new();
    let mut speed: Vec<f64> = Vec::new();
    let mut cuts = vec![0usize];
    let mut components = Vec::new();
    let mut wiggles = Vec::new();
    let mut v = spec.cruise_speed;
    let mut prev_sign = 0.0f64;
    let mut prev_straight = false;

    for k in 0..spec.n_primitives {
        let choices: Vec<usize> = (0..spec.prototypes.len())
            .filter(|&i| !(prev_straight && spec.prototypes[i].is_straight()))
            .collect();
        let pi = choices[rng.random_range(0..choices.len())];
        let proto = &spec.prototypes[pi];
        let straight = proto.is_straight();

        let sign = if straight {
            0.0
        } else if prev_sign != 0.0 && !prev_straight {
            -prev_sign
        } else if rng.random_bool(0.5) {
            1.0
        } else {
            -1.0
        };
        let steps = (uniform(&mut rng, proto.duration) / spec.dt).round().max(2.0) as usize;
        let duration = steps as f64 * spec.dt;
        let g_theta = sign * uniform(&mut rng, proto.g_theta);
        let gv_mag = uniform(&mut rng, proto.g_v);
        let g_v = if v > spec.cruise_speed { -gv_mag } else { gv_mag };
        let track = rollout(&proto.params, &DmpAdjustment { g: [g_theta, g_v], duration }, &step_cfg)?;

        let start = dtheta.len();
        for j in 1..=steps {
            let inc = track.theta[j] - track.theta[j - 1];
            dtheta.push(if straight { 0.0 } else { sign * inc.abs().max(spec.min_step_deg) });
            speed.push(v + track.speed[j]);
        }
        v += track.speed[steps];

        // Spurious flips stay clear of both primitive boundaries.
        let lo = start + spec.min_gap + 1;
        let hi = (start + steps).saturating_sub(spec.min_gap + 4);
        let n_wiggles = if spec.wiggle_rate > 0.0 && hi > lo {
            let base = spec.wiggle_rate.floor() as usize;
            base + usize::from(rng.random_bool(spec.wiggle_rate.fract()))
        } else {
            0
        };
        let mut placed: Vec<usize> = Vec::new();
        for _ in 0..n_wiggles {
            let at = rng.random_range(lo..hi);
            if placed.iter().any(|&p| p.abs_diff(at) < spec.min_gap + 4) {
                continue;
            }
            let len = rng.random_range(1..=3usize);
            let flip = if straight {
                if rng.random_bool(0.5) { 1.0 } else { -1.0 }
            } else {
                -sign
            };
            let peak = dtheta[start..start + steps].iter().fold(0.0f64, |m, d| m.max(d.abs()));
            let amp = rng.random_range(2.5 * spec.min_step_deg..(2.5 * spec.min_step_deg).max(0.5 * peak) + 1e-9);
            for d in &mut dtheta[at..at + len] {
                *d = flip * amp;
            }
            placed.push(at);
        }
        placed.sort_unstable();
        wiggles.extend(placed);

        if k > 0 {
            cuts.push(start);
        }
        components.push(pi);
        prev_sign = if straight { prev_sign } else { sign };
        prev_straight = straight;
    }

    for d in &mut dtheta {
        if spec.noise_deg > 0.0 {
            *d += rng.random_range(-spec.noise_deg..spec.noise_deg);
        }
    }
    for s in &mut speed {
        if spec.speed_noise > 0.0 {
            *s += rng.random_range(-spec.speed_noise..spec.speed_noise);
        }
        *s = s.max(0.0);
    }
    let n = dtheta.len();
    cuts.push(n - 1);

    let points = dtheta
        .iter()
        .zip(&speed)
        .map(|(&d, &v)| ObservedPoint { dtheta: d, v })
        .collect();
    let trajectory = Trajectory::new(spec.dt, points)?;

    let mut samples = Vec::with_capacity(n + 1);
    let mut course = spec.initial_course;
    samples.push(RawSample { t: 0.0, course_deg: course.rem_euclid(360.0), speed_mps: spec.cruise_speed });
    for (i, (d, s)) in dtheta.iter().zip(&speed).enumerate() {
        course += d;
        samples.push(RawSample {
            t: (i + 1) as f64 * spec.dt,
            course_deg: course.rem_euclid(360.0),
            speed_mps: *s,
        });
    }

    Ok(Scenario { trajectory, samples, true_cuts: cuts, components, wiggles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cuts::{zero_cross_cuts, DEFAULT_DEADBAND_DEG, DEFAULT_MIN_GAP};
    use crate::trajectory::resample_and_difference;
    use proptest::prelude::*;

    fn spec(seed: u64) -> ScenarioSpec {
        ScenarioSpec::new(default_prototypes(&DmpConfig::default()).unwrap(), seed)
    }

    #[test]
    fn clean_scenario_cuts_are_exact() {
        for seed in 0..30 {
            let mut s = spec(seed);
            s.noise_deg = 0.0;
            s.speed_noise = 0.0;
            s.wiggle_rate = 0.0;
            s.n_primitives = 8;
            let sc = generate(&s, &DmpConfig::default()).unwrap();
            let c = zero_cross_cuts(&sc.trajectory, DEFAULT_MIN_GAP, DEFAULT_DEADBAND_DEG).unwrap();
            assert_eq!(c.indices(), sc.true_cuts.as_slice(), "seed {seed}");
            assert_eq!(sc.components.len(), 8);
        }
    }

    #[test]
    fn same_seed_same_output() {
        let a = generate(&spec(7), &DmpConfig::default()).unwrap();
        let b = generate(&spec(7), &DmpConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = generate(&spec(8), &DmpConfig::default()).unwrap();
        assert_ne!(a.trajectory, c.trajectory);
    }

    #[test]
    fn samples_resample_to_the_trajectory() {
        let sc = generate(&spec(3), &DmpConfig::default()).unwrap();
        let t = resample_and_difference(&sc.samples, 0.1).unwrap();
        assert_eq!(t.len(), sc.trajectory.len());
        for (a, b) in t.points().iter().zip(sc.trajectory.points()) {
            assert!((a.dtheta - b.dtheta).abs() < 1e-9);
            assert!((a.v - b.v).abs() < 1e-9);
        }
    }

    #[test]
    fn wiggles_oversegment() {
        let mut extra = 0;
        let mut truth = 0;
        for seed in 0..20 {
            let sc = generate(&spec(seed), &DmpConfig::default()).unwrap();
            let c = zero_cross_cuts(&sc.trajectory, DEFAULT_MIN_GAP, DEFAULT_DEADBAND_DEG).unwrap();
            extra += c.interior().len() - sc.interior_cuts().len();
            truth += sc.interior_cuts().len() + 1;
        }
        // Roughly one spurious cut per primitive.
        assert!(extra as f64 > 0.6 * truth as f64, "{extra} extra cuts for {truth} primitives");
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = spec(0);
        s.prototypes.clear();
        assert!(generate(&s, &DmpConfig::default()).is_err());
        let mut s = spec(0);
        s.prototypes.retain(Prototype::is_straight);
        assert!(generate(&s, &DmpConfig::default()).is_err());
        let mut s = spec(0);
        s.noise_deg = -1.0;
        assert!(generate(&s, &DmpConfig::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn true_cuts_survive_noise_and_wiggles(seed in 0u64..100_000, rate in 0.0..2.0f64) {
            let mut s = spec(seed);
            s.wiggle_rate = rate;
            let sc = generate(&s, &DmpConfig::default()).unwrap();
            let c = zero_cross_cuts(&sc.trajectory, DEFAULT_MIN_GAP, DEFAULT_DEADBAND_DEG).unwrap();
            for t in &sc.true_cuts {
                prop_assert!(c.indices().iter().any(|x| x.abs_diff(*t) <= 1), "cut {t} lost");
            }
            if sc.wiggles.is_empty() {
                prop_assert_eq!(c.indices(), sc.true_cuts.as_slice());
            } else {
                prop_assert!(c.len() > sc.true_cuts.len());
            }
        }
    }
}
