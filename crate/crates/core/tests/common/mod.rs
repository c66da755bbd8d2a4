#![allow(dead_code)]

use echoaware::geometry::{EchoAnnotation, Vec3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn range_cost(anchors: &[Vec3<f64>], d: &[f64], x: &Vec3<f64>) -> f64 {
    anchors.iter().zip(d).map(|(a, di)| ((x - a).norm() - di).powi(2)).sum()
}

/// Smallest possible `sum (|x - a| - d)^2` over the axis-aligned box `[lo, hi]`.
fn lower_bound(anchors: &[Vec3<f64>], d: &[f64], lo: &Vec3<f64>, hi: &Vec3<f64>) -> f64 {
    anchors
        .iter()
        .zip(d)
        .map(|(a, di)| {
            let near = Vec3::from_fn(|k, _| a[k].clamp(lo[k], hi[k]));
            let far = Vec3::from_fn(|k, _| if (a[k] - lo[k]).abs() > (a[k] - hi[k]).abs() { lo[k] } else { hi[k] });
            let (rmin, rmax) = ((near - a).norm(), (far - a).norm());
            if *di < rmin {
                (rmin - di).powi(2)
            } else if *di > rmax {
                (di - rmax).powi(2)
            } else {
                0.0
            }
        })
        .sum()
}

struct Lattice<'a> {
    anchors: &'a [Vec3<f64>],
    d: &'a [f64],
    origin: Vec3<f64>,
    step: f64,
}

impl Lattice<'_> {
    fn point(&self, idx: [usize; 3]) -> Vec3<f64> {
        self.origin + Vec3::new(idx[0] as f64, idx[1] as f64, idx[2] as f64) * self.step
    }

    fn search(&self, lo: [usize; 3], hi: [usize; 3], best: &mut (f64, Vec3<f64>)) {
        let count: usize = (0..3).map(|k| hi[k] - lo[k] + 1).product();
        if count <= 64 {
            for i in lo[0]..=hi[0] {
                for j in lo[1]..=hi[1] {
                    for k in lo[2]..=hi[2] {
                        let x = self.point([i, j, k]);
                        let c = range_cost(self.anchors, self.d, &x);
                        if c < best.0 {
                            *best = (c, x);
                        }
                    }
                }
            }
            return;
        }
        if lower_bound(self.anchors, self.d, &self.point(lo), &self.point(hi)) >= best.0 {
            return;
        }
        let axis = (0..3).max_by_key(|&k| hi[k] - lo[k]).unwrap();
        let mid = (lo[axis] + hi[axis]) / 2;
        let mut left_hi = hi;
        left_hi[axis] = mid;
        let mut right_lo = lo;
        right_lo[axis] = mid + 1;
        let left_c = self.point(lo) + (self.point(left_hi) - self.point(lo)) * 0.5;
        let right_c = self.point(right_lo) + (self.point(hi) - self.point(right_lo)) * 0.5;
        if range_cost(self.anchors, self.d, &left_c) <= range_cost(self.anchors, self.d, &right_c) {
            self.search(lo, left_hi, best);
            self.search(right_lo, hi, best);
        } else {
            self.search(right_lo, hi, best);
            self.search(lo, left_hi, best);
        }
    }
}

/// Exhaustive least-squares range fit over every node of the 1 cm lattice
/// spanning `[lo, hi]`, pruned by exact per-box lower bounds.
pub fn grid_oracle(anchors: &[Vec3<f64>], d: &[f64], lo: Vec3<f64>, hi: Vec3<f64>) -> Vec3<f64> {
    let step = 0.01;
    let lattice = Lattice { anchors, d, origin: lo, step };
    let n = |k: usize| ((hi[k] - lo[k]) / step).round() as usize;
    let mut best = (f64::INFINITY, lo);
    lattice.search([0, 0, 0], [n(0), n(1), n(2)], &mut best);
    best.1
}

/// Adds zero-mean Gaussian noise of `sigma` seconds to every TOA.
pub fn jitter_toas<R: Rng>(ann: &EchoAnnotation<f64>, sigma: f64, rng: &mut R) -> EchoAnnotation<f64> {
    let n = Normal::new(0.0, sigma).unwrap();
    let mut out = ann.clone();
    for echoes in out.entries.values_mut() {
        for e in echoes.iter_mut() {
            e.toa += n.sample(rng);
        }
    }
    out
}
