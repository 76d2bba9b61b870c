//! Two-way k-means used to split full leaves.

use rand::Rng;

use crate::types::RngSeed;

fn sq_dist(a: &[f64], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y as f64;
            d * d
        })
        .sum()
}

fn centroid_shift(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoMeans {
    /// Cluster (0 or 1) of each input point.
    pub assignment: Vec<u8>,
    pub iterations: usize,
    /// All points were bitwise identical and the split was made by order.
    pub degenerate: bool,
}

impl TwoMeans {
    pub fn sizes(&self) -> (usize, usize) {
        let ones = self.assignment.iter().filter(|&&a| a == 1).count();
        (self.assignment.len() - ones, ones)
    }
}

/// Partitions `points` (at least two) into two non-empty clusters.
///
/// k-means++ seeding, then Lloyd iterations until the largest centroid move
/// drops below `tolerance` or `max_iters` is reached. An emptied cluster takes
/// the point farthest from the surviving centroid.
pub fn two_means(points: &[&[f32]], max_iters: usize, tolerance: f64, seed: RngSeed) -> TwoMeans {
    let n = points.len();
    assert!(n >= 2, "two_means needs at least two points");
    let dim = points[0].len();

    let identical = points
        .iter()
        .all(|p| p.iter().zip(points[0]).all(|(a, b)| a.to_bits() == b.to_bits()));
    if identical {
        return order_split(n);
    }

    let mut rng = seed.rng();
    let first = rng.gen_range(0..n);
    let c0: Vec<f64> = points[first].iter().map(|&x| x as f64).collect();
    let d2: Vec<f64> = points.iter().map(|p| sq_dist(&c0, p)).collect();
    let total: f64 = d2.iter().sum();
    if total <= 0.0 {
        // distinct bit patterns but equal values, e.g. 0.0 and -0.0
        return order_split(n);
    }
    let mut target = rng.gen::<f64>() * total;
    let mut second = n - 1;
    for (i, &d) in d2.iter().enumerate() {
        if d > 0.0 && target < d {
            second = i;
            break;
        }
        target -= d;
    }
    if d2[second] <= 0.0 {
        second = d2
            .iter()
            .enumerate()
            .fold(0, |best, (i, &d)| if d > d2[best] { i } else { best });
    }
    let c1: Vec<f64> = points[second].iter().map(|&x| x as f64).collect();
    let mut centers = [c0, c1];

    let mut assignment = vec![0u8; n];
    let mut iterations = 0;
    while iterations < max_iters.max(1) {
        iterations += 1;
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = u8::from(sq_dist(&centers[1], p) < sq_dist(&centers[0], p));
        }
        repair_empty(&mut assignment, points, &centers);

        let mut sums = [vec![0.0f64; dim], vec![0.0f64; dim]];
        let mut counts = [0usize; 2];
        for (&a, p) in assignment.iter().zip(points) {
            let a = a as usize;
            counts[a] += 1;
            for (s, &x) in sums[a].iter_mut().zip(p.iter()) {
                *s += x as f64;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..2 {
            let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(centroid_shift(&mean, &centers[c]));
            centers[c] = mean;
        }
        if shift < tolerance {
            break;
        }
    }

    TwoMeans {
        assignment,
        iterations,
        degenerate: false,
    }
}

fn order_split(n: usize) -> TwoMeans {
    let left = n.div_ceil(2);
    TwoMeans {
        assignment: (0..n).map(|i| u8::from(i >= left)).collect(),
        iterations: 0,
        degenerate: true,
    }
}

fn repair_empty(assignment: &mut [u8], points: &[&[f32]], centers: &[Vec<f64>; 2]) {
    let ones = assignment.iter().filter(|&&a| a == 1).count();
    let empty = if ones == 0 {
        1u8
    } else if ones == assignment.len() {
        0u8
    } else {
        return;
    };
    let full = &centers[(1 - empty) as usize];
    let mut far = 0;
    let mut far_d = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = sq_dist(full, p);
        if d > far_d {
            far = i;
            far_d = d;
        }
    }
    assignment[far] = empty;
}
