//! Shared helpers: a seeded uniform source, random conic instances and
//! brute-force oracles.
#![allow(dead_code)]

use mssmpc::socp::ConicProblem;
use mssmpc::socp::SecondOrderCone;
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub struct Uniform(ChaCha8Rng);

impl Uniform {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
    pub fn next(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next()
    }
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as usize
    }
    pub fn vector(&mut self, n: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.range(-scale, scale))
    }
    pub fn matrix(&mut self, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| self.range(-scale, scale))
    }
}

/// A bounded instance whose origin is strictly feasible: one ball around a
/// random center plus one random cone, sometimes a halfspace.
pub fn random_instance(rng: &mut Uniform, nu: usize) -> ConicProblem {
    let rank = rng.int(1, nu);
    let m = rng.matrix(rank, nu, 1.0);
    let qhat = m.transpose() * &m;
    let chat = rng.vector(nu, 3.0);
    let mut p = ConicProblem::new(qhat, chat).unwrap();

    let radius = rng.range(1.0, 3.0);
    let center = rng.vector(nu, radius / (2.0 * (nu as f64).sqrt()));
    p.add_cone(SecondOrderCone::new(DMatrix::identity(nu, nu), -center, DVector::zeros(nu), radius).unwrap())
        .unwrap();

    let k = rng.int(1, 3);
    let a = rng.matrix(k, nu, 1.0);
    let b = rng.vector(k, 0.5);
    let c = rng.vector(nu, 0.5);
    let d = b.norm() + rng.range(0.1, 1.0);
    p.add_cone(SecondOrderCone::new(a, b, c, d).unwrap()).unwrap();

    if rng.next() < 0.5 {
        let row = rng.vector(nu, 1.0);
        p.add_linear(&row, rng.range(0.05, 1.0)).unwrap();
    }
    p
}

pub fn feasible(p: &ConicProblem, y: &DVector<f64>) -> bool {
    p.max_violation(y) <= 0.0
}

/// No feasible point along random rays from `y` improves the objective.
pub fn ray_search_improvement(p: &ConicProblem, y: &DVector<f64>, rng: &mut Uniform) -> f64 {
    let f0 = p.objective(y);
    let mut best_gain: f64 = 0.0;
    for _ in 0..2000 {
        let mut d = rng.vector(y.len(), 1.0);
        let n = d.norm();
        if n == 0.0 {
            continue;
        }
        d /= n;
        for step in [1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0] {
            let cand = y + &d * step;
            if feasible(p, &cand) {
                best_gain = best_gain.max(f0 - p.objective(&cand));
            }
        }
    }
    best_gain
}

/// Minimum over a grid covering the bounding ball, `ν ≤ 2`.
pub fn grid_minimum(p: &ConicProblem, lo: f64, hi: f64, steps: usize) -> f64 {
    let nu = p.dim();
    let h = (hi - lo) / steps as f64;
    let mut best = f64::INFINITY;
    let count = if nu == 1 { steps + 1 } else { (steps + 1) * (steps + 1) };
    for idx in 0..count {
        let y = if nu == 1 {
            DVector::from_element(1, lo + h * idx as f64)
        } else {
            DVector::from_column_slice(&[lo + h * (idx % (steps + 1)) as f64, lo + h * (idx / (steps + 1)) as f64])
        };
        if feasible(p, &y) {
            best = best.min(p.objective(&y));
        }
    }
    best
}

/// Duality gap `Σ zᵢᵀsᵢ + Σ λⱼ slackⱼ` implied by the returned multipliers.
pub fn duality_gap(p: &ConicProblem, y: &DVector<f64>, sol: &mssmpc::socp::ConicSolution) -> f64 {
    let mut gap = 0.0;
    for (cone, (z0, z1)) in p.cones.iter().zip(sol.duals.cones.iter()) {
        let u0 = cone.c.dot(y) + cone.d;
        let u = &cone.a * y + &cone.b;
        gap += z0 * u0 + z1.dot(&u);
    }
    let slack = &p.g_vec - &p.g_mat * y;
    gap + sol.duals.linear.dot(&slack)
}
