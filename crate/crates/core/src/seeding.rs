//! k-means++ style seeding shared by both mixture fits.

use rand::Rng;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Picks `k` distinct row indices. The first is uniform, later ones are drawn
/// with probability proportional to the squared distance to the nearest
/// chosen seed. When every remaining point coincides with a seed the lowest
/// unused index is taken.
pub fn kmeans_pp<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.len();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 && total.is_finite() {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total implies a positive entry")
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seeds_are_distinct_and_spread() {
        let mut pts: Vec<Vec<f64>> = (0..50).map(|i| vec![0.001 * i as f64, 0.0]).collect();
        pts.extend((0..50).map(|i| vec![100.0 + 0.001 * i as f64, 0.0]));
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = kmeans_pp(&pts, 2, &mut rng);
            assert_eq!(s.len(), 2);
            // The second seed lands in the other blob with overwhelming probability.
            assert_ne!(s[0] < 50, s[1] < 50);
        }
    }

    #[test]
    fn duplicates_fall_back_to_unused_indices() {
        let pts = vec![vec![1.0]; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = kmeans_pp(&pts, 3, &mut rng);
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 3);
        assert_eq!(kmeans_pp(&pts, 9, &mut rng).len(), 4);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let pts: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64).sin(), (i as f64).cos()]).collect();
        let a = kmeans_pp(&pts, 5, &mut ChaCha8Rng::seed_from_u64(9));
        let b = kmeans_pp(&pts, 5, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
