//! Initial over-segmentation by zero crossings of the course deviation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

pub const DEFAULT_MIN_GAP: usize = 5;
pub const DEFAULT_DEADBAND_DEG: f64 = 0.05;

/// Candidate cut indices into a trajectory.
///
/// Always starts at 0 and ends at the last sample index. A cut index is the
/// inclusive start of the segment to its right and the exclusive end of the
/// segment to its left.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutPointSet {
    indices: Vec<usize>,
}

impl CutPointSet {
    /// Validates `indices` against a trajectory of `len` samples.
    pub fn new(indices: Vec<usize>, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::param("cut set needs a trajectory of at least 2 samples"));
        }
        if indices.first() != Some(&0) || indices.last() != Some(&(len - 1)) {
            return Err(Error::param(format!(
                "cut set must start at 0 and end at {}, got {indices:?}",
                len - 1
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param(format!(
                "cut indices must be strictly increasing, got {indices:?}"
            )));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Cuts excluding the two endpoints.
    pub fn interior(&self) -> &[usize] {
        &self.indices[1..self.indices.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn clamped_sign(x: f64, deadband: f64) -> i8 {
    if x.abs() < deadband || x == 0.0 {
        0
    } else if x > 0.0 {
        1
    } else {
        -1
    }
}

/// Places a cut at the first index of every change of the deadband-clamped
/// sign of `dtheta`.
///
/// Entering a run of clamped zeros yields one cut at the start of the run;
/// leaving it yields another at the first signed sample. Cuts closer than
/// `min_gap` samples to the previously accepted cut are discarded, as is a
/// final interior cut closer than `min_gap` to the end of the trajectory.
pub fn zero_cross_cuts(traj: &Trajectory, min_gap: usize, deadband: f64) -> Result<CutPointSet> {
    if min_gap == 0 {
        return Err(Error::param("min_gap must be at least 1"));
    }
    if !(deadband.is_finite() && deadband >= 0.0) {
        return Err(Error::param(format!("deadband must be >= 0, got {deadband}")));
    }
    let n = traj.len();
    let signs: Vec<i8> = traj
        .points()
        .iter()
        .map(|p| clamped_sign(p.dtheta, deadband))
        .collect();

    let mut cuts = vec![0usize];
    for i in 1..n - 1 {
        if signs[i] != signs[i - 1] && i - cuts[cuts.len() - 1] >= min_gap {
            cuts.push(i);
        }
    }
    while cuts.len() > 1 && n - 1 - cuts[cuts.len() - 1] < min_gap {
        cuts.pop();
    }
    cuts.push(n - 1);
    CutPointSet::new(cuts, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::ObservedPoint;
    use proptest::prelude::*;

    fn traj(dtheta: &[f64]) -> Trajectory {
        let points = dtheta
            .iter()
            .map(|&d| ObservedPoint { dtheta: d, v: 10.0 })
            .collect();
        Trajectory::new(0.1, points).unwrap()
    }

    /// Independent scan: list every sign change, then thin greedily.
    fn brute_cuts(dtheta: &[f64], min_gap: usize, deadband: f64) -> Vec<usize> {
        let sign = |x: f64| {
            if x.abs() < deadband || x == 0.0 {
                0
            } else {
                x.signum() as i8
            }
        };
        let n = dtheta.len();
        let changes: Vec<usize> = (1..n - 1)
            .filter(|&i| sign(dtheta[i]) != sign(dtheta[i - 1]))
            .collect();
        let mut out = vec![0];
        for c in changes {
            if c - out.last().unwrap() >= min_gap {
                out.push(c);
            }
        }
        while out.len() > 1 && n - 1 - out.last().unwrap() < min_gap {
            out.pop();
        }
        out.push(n - 1);
        out
    }

    #[test]
    fn sign_change_positions() {
        let t = traj(&[0.1, 0.05, -0.02, -0.1, 0.03]);
        let c = zero_cross_cuts(&t, 1, 0.0).unwrap();
        assert_eq!(c.indices(), &[0, 2, 4]);
    }

    #[test]
    fn no_crossing_keeps_endpoints() {
        let t = traj(&[0.3; 12]);
        let c = zero_cross_cuts(&t, 1, 0.0).unwrap();
        assert_eq!(c.indices(), &[0, 11]);
    }

    #[test]
    fn zero_run_yields_single_cut() {
        let t = traj(&[0.5, 0.5, 0.5, 0.01, 0.0, -0.01, 0.02, 0.5, 0.5, 0.5]);
        let c = zero_cross_cuts(&t, 1, 0.05).unwrap();
        assert_eq!(c.indices(), &[0, 3, 7, 9]);
    }

    #[test]
    fn alternating_signs_with_gap_filter() {
        let d: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let t = traj(&d);
        let c = zero_cross_cuts(&t, 3, 0.0).unwrap();
        assert_eq!(c.indices(), brute_cuts(&d, 3, 0.0).as_slice());
        assert!(c.indices().windows(2).all(|w| w[1] - w[0] >= 3));
        assert_eq!(c.interior(), &[3, 6, 9, 12, 15, 18, 21, 24, 27, 30, 33, 36]);
    }

    #[test]
    fn rejects_bad_parameters() {
        let t = traj(&[0.1, 0.2, 0.3]);
        assert!(zero_cross_cuts(&t, 0, 0.0).is_err());
        assert!(zero_cross_cuts(&t, 1, -1.0).is_err());
    }

    #[test]
    fn cut_set_validation() {
        assert!(CutPointSet::new(vec![0, 3, 9], 10).is_ok());
        assert!(CutPointSet::new(vec![1, 9], 10).is_err());
        assert!(CutPointSet::new(vec![0, 5, 5, 9], 10).is_err());
        assert!(CutPointSet::new(vec![0, 8], 10).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_scan(
            d in proptest::collection::vec(-1.0..1.0f64, 3..80),
            gap in 1usize..8,
            deadband in 0.0..0.5f64,
        ) {
            let c = zero_cross_cuts(&traj(&d), gap, deadband).unwrap();
            let expected = brute_cuts(&d, gap, deadband);
            prop_assert_eq!(c.indices(), expected.as_slice());
            prop_assert!(c.indices().windows(2).all(|w| w[1] - w[0] >= gap)
                || c.len() == 2);
        }

        #[test]
        fn larger_gap_never_increases_cut_count(
            d in proptest::collection::vec(-1.0..1.0f64, 3..80),
            gap in 1usize..6,
            extra in 1usize..4,
        ) {
            let t = traj(&d);
            let a = zero_cross_cuts(&t, gap, 0.0).unwrap();
            let b = zero_cross_cuts(&t, gap + extra, 0.0).unwrap();
            prop_assert!(b.len() <= a.len());
        }

        #[test]
        fn every_clean_reversal_is_cut(
            blocks in proptest::collection::vec((5usize..15, 0.1..3.0f64), 1..8),
            gap in 1usize..5,
        ) {
            // Blocks of constant sign, alternating, all above the deadband.
            let deadband = 0.05;
            let mut d = Vec::new();
            let mut starts = Vec::new();
            for (k, (len, mag)) in blocks.iter().enumerate() {
                starts.push(d.len());
                let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                d.extend(std::iter::repeat(s * mag).take(*len));
            }
            let c = zero_cross_cuts(&traj(&d), gap, deadband).unwrap();
            let mut expected = starts.clone();
            expected.push(d.len() - 1);
            prop_assert_eq!(c.indices(), expected.as_slice());
        }
    }
}
