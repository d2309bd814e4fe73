//! Trajectory ingestion and preprocessing.
//!
//! Raw recordings are `(t, course, speed)` triples. They are resampled onto a
//! uniform grid, the course angle is differenced into the per-step course
//! deviation `dtheta`, and the result is the two-channel observed sequence
//! `[dtheta(t), v(t)]` consumed by the cut heuristic and the primitive fitter.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names of the accepted CSV schema, in order.
pub const CSV_HEADER: [&str; 3] = ["t", "course_deg", "speed_mps"];

/// One sensor reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    /// Seconds.
    pub t: f64,
    /// Course angle in degrees, normalized to `[0, 360)` on ingest.
    pub course_deg: f64,
    /// Horizontal speed in meters per second.
    pub speed_mps: f64,
}

/// Observed trajectory point `[dtheta(t), v(t)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedPoint {
    /// Course change since the previous grid point, degrees in `(-180, 180]`.
    pub dtheta: f64,
    /// Speed, meters per second.
    pub v: f64,
}

/// Uniformly sampled observed trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    dt: f64,
    points: Vec<ObservedPoint>,
}

impl Trajectory {
    pub fn new(dt: f64, points: Vec<ObservedPoint>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::param(format!("dt must be positive, got {dt}")));
        }
        if points.len() < 3 {
            return Err(Error::param(format!(
                "a trajectory needs at least 3 points, got {}",
                points.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.dtheta.is_finite() || p.dtheta <= -180.0 || p.dtheta > 180.0 {
                return Err(Error::param(format!(
                    "point {i}: dtheta {} outside (-180, 180]",
                    p.dtheta
                )));
            }
            if !p.v.is_finite() || p.v < 0.0 {
                return Err(Error::param(format!("point {i}: speed {} is invalid", p.v)));
            }
        }
        Ok(Self { dt, points })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn points(&self) -> &[ObservedPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last_index(&self) -> usize {
        self.points.len() - 1
    }

    pub fn dtheta(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.dtheta).collect()
    }

    pub fn speed(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.v).collect()
    }
}

/// Which primitive channel a signal belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// Course deviation from the segment start, degrees.
    Lateral,
    /// Speed deviation from the segment start, meters per second.
    Longitudinal,
}

/// A position channel with its first and second time derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTrack {
    pub channel: Channel,
    pub dt: f64,
    pub y: Vec<f64>,
    pub yd: Vec<f64>,
    pub ydd: Vec<f64>,
}

impl DerivativeTrack {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Duration spanned by the samples.
    pub fn duration(&self) -> f64 {
        (self.y.len().saturating_sub(1)) as f64 * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputFormat {
    #[default]
    Csv,
}

/// Wraps an angle difference in degrees into `(-180, 180]`.
pub fn wrap_degrees(angle: f64) -> f64 {
    let r = angle.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Reads raw samples from `path`.
pub fn ingest(path: &Path, format: InputFormat) -> Result<Vec<RawSample>> {
    match format {
        InputFormat::Csv => {
            let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            parse_samples(file)
        }
    }
}

/// Parses the `t,course_deg,speed_mps` CSV schema. Lines starting with `#`
/// are skipped.
///
/// Rows are returned sorted by time; a repeated timestamp keeps its first
/// occurrence. Errors name the 1-based line of the offending row.
pub fn parse_samples<R: Read>(reader: R) -> Result<Vec<RawSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse {
        row: 1,
        message: e.to_string(),
    })?;
    if headers.is_empty() {
        return Err(Error::EmptyInput);
    }
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Schema(format!(
            "expected header `{}`, found `{}`",
            CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: e.position().map_or(i + 2, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(Error::Parse {
                row: line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let field = |k: usize| -> Result<f64> {
            record[k].parse::<f64>().map_err(|e| Error::Parse {
                row: line,
                message: format!("{}: {e}", CSV_HEADER[k]),
            })
        };
        let (t, course, speed) = (field(0)?, field(1)?, field(2)?);
        if !t.is_finite() {
            return Err(Error::Parse {
                row: line,
                message: format!("timestamp {t} is not finite"),
            });
        }
        if !course.is_finite() {
            return Err(Error::Parse {
                row: line,
                message: format!("course angle {course} is not finite"),
            });
        }
        if !speed.is_finite() || speed < 0.0 {
            return Err(Error::Parse {
                row: line,
                message: format!("speed {speed} must be finite and non-negative"),
            });
        }
        samples.push(RawSample {
            t,
            course_deg: course.rem_euclid(360.0),
            speed_mps: speed,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }

    samples.sort_by(|a, b| a.t.total_cmp(&b.t));
    samples.dedup_by(|later, earlier| later.t == earlier.t);
    Ok(samples)
}

/// Writes samples in the ingest schema.
pub fn write_samples<W: Write>(writer: W, samples: &[RawSample]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Format(e.to_string());
    wtr.write_record(CSV_HEADER).map_err(io)?;
    for s in samples {
        wtr.write_record([
            s.t.to_string(),
            s.course_deg.to_string(),
            s.speed_mps.to_string(),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Resamples onto a uniform `dt` grid and differences the course angle.
///
/// The course is unwrapped before linear interpolation so that a crossing of
/// north interpolates through 0 degrees rather than around the circle. Point
/// `i` of the output holds the wrapped course change between grid nodes `i`
/// and `i + 1` and the speed at node `i + 1`, giving `floor(duration / dt)`
/// points.
pub fn resample_and_difference(samples: &[RawSample], dt: f64) -> Result<Trajectory> {
    if samples.len() < 2 {
        return Err(Error::param(format!(
            "resampling needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::param(format!("dt must be positive, got {dt}")));
    }
    let t0 = samples[0].t;
    let duration = samples[samples.len() - 1].t - t0;
    if duration < 2.0 * dt {
        return Err(Error::param(format!(
            "dt {dt} s is too large for a recording of {duration} s"
        )));
    }
    let n = (duration / dt + 1e-9).floor() as usize;
    if n < 3 {
        return Err(Error::param(format!(
            "recording of {duration} s yields only {n} points at dt {dt} s"
        )));
    }

    let mut unwrapped = Vec::with_capacity(samples.len());
    unwrapped.push(samples[0].course_deg);
    for w in samples.windows(2) {
        let prev = *unwrapped.last().expect("seeded above");
        unwrapped.push(prev + wrap_degrees(w[1].course_deg - w[0].course_deg));
    }

    let mut course = Vec::with_capacity(n + 1);
    let mut speed = Vec::with_capacity(n + 1);
    let mut seg = 0usize;
    for k in 0..=n {
        let tg = t0 + k as f64 * dt;
        while seg + 1 < samples.len() && samples[seg + 1].t <= tg {
            seg += 1;
        }
        if seg + 1 >= samples.len() {
            course.push(unwrapped[seg]);
            speed.push(samples[seg].speed_mps);
            continue;
        }
        let (a, b) = (&samples[seg], &samples[seg + 1]);
        let w = (tg - a.t) / (b.t - a.t);
        course.push(unwrapped[seg] + (unwrapped[seg + 1] - unwrapped[seg]) * w);
        speed.push(a.speed_mps + (b.speed_mps - a.speed_mps) * w);
    }

    let points = (0..n)
        .map(|i| ObservedPoint {
            dtheta: wrap_degrees(course[i + 1] - course[i]),
            v: speed[i + 1],
        })
        .collect();
    Trajectory::new(dt, points)
}

/// Centered moving average; the window shrinks symmetrically at the ends.
fn moving_average(y: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = y.len();
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let slice = &y[i - h..=i + h];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// Smooths `y` and estimates its first and second derivatives.
///
/// Interior points use second-order central differences, the two ends use
/// second-order one-sided stencils. `smooth_window = 1` disables smoothing.
pub fn estimate_derivatives(
    y: &[f64],
    dt: f64,
    smooth_window: usize,
    channel: Channel,
) -> Result<DerivativeTrack> {
    let n = y.len();
    if n < 5 {
        return Err(Error::param(format!(
            "derivative estimation needs at least 5 samples, got {n}"
        )));
    }
    if smooth_window % 2 == 0 || smooth_window >= n {
        return Err(Error::param(format!(
            "smoothing window must be odd and shorter than the signal ({n}), got {smooth_window}"
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::param(format!("dt must be positive, got {dt}")));
    }

    let y = if smooth_window > 1 {
        moving_average(y, smooth_window)
    } else {
        y.to_vec()
    };
    let dt2 = dt * dt;
    let mut yd = vec![0.0; n];
    let mut ydd = vec![0.0; n];
    for i in 1..n - 1 {
        yd[i] = (y[i + 1] - y[i - 1]) / (2.0 * dt);
        ydd[i] = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / dt2;
    }
    yd[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * dt);
    yd[n - 1] = (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * dt);
    ydd[0] = (2.0 * y[0] - 5.0 * y[1] + 4.0 * y[2] - y[3]) / dt2;
    ydd[n - 1] = (2.0 * y[n - 1] - 5.0 * y[n - 2] + 4.0 * y[n - 3] - y[n - 4]) / dt2;

    Ok(DerivativeTrack {
        channel,
        dt,
        y,
        yd,
        ydd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn csv(body: &str) -> Result<Vec<RawSample>> {
        parse_samples(body.as_bytes())
    }

    fn ramp(course: impl Fn(f64) -> f64, duration: f64, step: f64) -> Vec<RawSample> {
        let n = (duration / step).round() as usize;
        (0..=n)
            .map(|k| {
                let t = k as f64 * step;
                RawSample {
                    t,
                    course_deg: course(t).rem_euclid(360.0),
                    speed_mps: 10.0,
                }
            })
            .collect()
    }

    #[test]
    fn ingest_well_formed() {
        let s = csv("t,course_deg,speed_mps\n0,10,5\n0.1,11,5.5\n0.2,12,6\n").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1].course_deg, 11.0);
        assert_eq!(s[2].speed_mps, 6.0);
    }

    #[test]
    fn ingest_drops_duplicate_timestamp() {
        let s = csv("t,course_deg,speed_mps\n0,10,5\n0.1,11,5\n0.1,99,7\n0.2,12,5\n").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1].course_deg, 11.0);
    }

    #[test]
    fn ingest_rejects_negative_speed() {
        let err = csv("t,course_deg,speed_mps\n0,10,5\n0.1,11,-1\n").unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_skips_comment_lines() {
        let s = csv("# made by synth\nt,course_deg,speed_mps\n# note\n0,10,5\n0.1,11,5\n").unwrap();
        assert_eq!(s.len(), 2);
        let err = csv("# a\n# b\nt,course_deg,speed_mps\n0,10,5\n0.1,11,-1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 5, .. }), "{err:?}");
    }

    #[test]
    fn ingest_errors() {
        assert!(matches!(csv(""), Err(Error::EmptyInput)));
        assert!(matches!(csv("t,course_deg,speed_mps\n"), Err(Error::EmptyInput)));
        assert!(matches!(csv("a,b,c\n1,2,3\n"), Err(Error::Schema(_))));
        assert!(matches!(
            csv("t,course_deg,speed_mps\n0,1,x\n"),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_degrees(2.0), 2.0);
        assert_eq!(wrap_degrees(-358.0), 2.0);
        assert_eq!(wrap_degrees(180.0), 180.0);
        assert_eq!(wrap_degrees(-180.0), 180.0);
        assert_eq!(wrap_degrees(181.0), -179.0);
    }

    #[test]
    fn constant_course_has_zero_deviation() {
        let s = ramp(|_| 90.0, 5.0, 0.1);
        let traj = resample_and_difference(&s, 0.5).unwrap();
        assert!(traj.points().iter().all(|p| p.dtheta == 0.0));
    }

    #[test]
    fn crossing_north_differences_positively() {
        let s = vec![
            RawSample { t: 0.0, course_deg: 357.0, speed_mps: 1.0 },
            RawSample { t: 1.0, course_deg: 359.0, speed_mps: 1.0 },
            RawSample { t: 2.0, course_deg: 1.0, speed_mps: 1.0 },
            RawSample { t: 3.0, course_deg: 3.0, speed_mps: 1.0 },
        ];
        let traj = resample_and_difference(&s, 1.0).unwrap();
        assert_eq!(traj.len(), 3);
        assert!((traj.points()[1].dtheta - 2.0).abs() < 1e-12);
    }

    #[test]
    fn linear_ramp_differences_to_rate() {
        // 0..10 degrees over 10 s, sampled every 0.25 s, regridded at 1 s.
        let s = ramp(|t| t, 10.0, 0.25);
        let traj = resample_and_difference(&s, 1.0).unwrap();
        assert_eq!(traj.len(), 10);
        for p in traj.points() {
            assert!((p.dtheta - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dt_longer_than_recording_fails() {
        let s = ramp(|t| t, 1.0, 0.5);
        assert!(resample_and_difference(&s, 2.0).is_err());
        assert!(resample_and_difference(&s[..1], 0.1).is_err());
    }

    #[test]
    fn derivative_of_constant_and_line() {
        let c = vec![3.5; 12];
        let d = estimate_derivatives(&c, 0.1, 3, Channel::Lateral).unwrap();
        assert!(d.yd.iter().chain(&d.ydd).all(|v| v.abs() < 1e-12));

        let line: Vec<f64> = (0..12).map(|i| 2.0 * i as f64 * 0.1).collect();
        let d = estimate_derivatives(&line, 0.1, 1, Channel::Lateral).unwrap();
        for i in 1..11 {
            assert!((d.yd[i] - 2.0).abs() < 1e-12);
            assert!(d.ydd[i].abs() < 1e-9);
        }
    }

    #[test]
    fn derivative_of_sine() {
        let dt = 0.01;
        let y: Vec<f64> = (0..700).map(|i| (i as f64 * dt).sin()).collect();
        let d = estimate_derivatives(&y, dt, 1, Channel::Longitudinal).unwrap();
        let worst = (1..y.len() - 1)
            .map(|i| (d.yd[i] - (i as f64 * dt).cos()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-3, "max error {worst}");
    }

    #[test]
    fn derivative_window_must_be_odd() {
        let y = vec![0.0; 10];
        assert!(estimate_derivatives(&y, 0.1, 2, Channel::Lateral).is_err());
        assert!(estimate_derivatives(&y, 0.1, 11, Channel::Lateral).is_err());
        assert!(estimate_derivatives(&y[..4], 0.1, 1, Channel::Lateral).is_err());
    }

    proptest! {
        #[test]
        fn wrapped_difference_is_minimal(a in 0.0..360.0f64, b in 0.0..360.0f64) {
            let d = wrap_degrees(b - a);
            prop_assert!(d > -180.0 && d <= 180.0);
            prop_assert!(((a + d).rem_euclid(360.0) - b).abs() < 1e-9
                || ((a + d).rem_euclid(360.0) - b).abs() > 360.0 - 1e-9);
            for k in -2..=2 {
                let alt = d + 360.0 * k as f64;
                prop_assert!(alt.abs() >= d.abs() - 1e-12);
            }
        }

        #[test]
        fn affine_signals_are_differentiated_exactly(a in -5.0..5.0f64, b in -5.0..5.0f64) {
            let y: Vec<f64> = (0..20).map(|i| a * i as f64 * 0.05 + b).collect();
            let d = estimate_derivatives(&y, 0.05, 1, Channel::Lateral).unwrap();
            for i in 1..19 {
                prop_assert!((d.yd[i] - a).abs() < 1e-9);
            }
        }

        #[test]
        fn resampling_on_grid_reproduces_points(
            steps in proptest::collection::vec((-20.0..20.0f64, 0.0..30.0f64), 4..40),
            start in 0.0..360.0f64,
        ) {
            let dt = 0.1;
            let mut course = start;
            let mut samples = vec![RawSample { t: 0.0, course_deg: course, speed_mps: 5.0 }];
            for (k, (dc, v)) in steps.iter().enumerate() {
                course = (course + dc).rem_euclid(360.0);
                samples.push(RawSample { t: (k + 1) as f64 * dt, course_deg: course, speed_mps: *v });
            }
            let traj = resample_and_difference(&samples, dt).unwrap();
            prop_assert!(traj.len() >= steps.len() - 1 && traj.len() <= steps.len());
            for (p, (dc, v)) in traj.points().iter().zip(&steps) {
                prop_assert!((p.dtheta - dc).abs() < 1e-9);
                prop_assert_eq!(p.v, *v);
            }
        }
    }
}
