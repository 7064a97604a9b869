//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exhaustive active-set oracle: for every free set solve the KKT system of
/// the equality-constrained subproblem by pseudo-inverse and keep the best
/// feasible stationary point.
pub fn enumerate_qp(q: &DMatrix<f64>, c: &DVector<f64>, sets: &[Vec<usize>]) -> (f64, DVector<f64>) {
    let n = c.len();
    let k = sets.len();
    let mut best = (f64::INFINITY, DVector::zeros(n));
    for mask in 0u32..(1 << n) {
        let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let m = free.len();
        let dim = m + k;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                kkt[(a, b)] = q[(i, j)];
            }
            rhs[a] = c[i];
            for (s, set) in sets.iter().enumerate() {
                if set.contains(&i) {
                    kkt[(a, m + s)] = 1.0;
                    kkt[(m + s, a)] = 1.0;
                }
            }
        }
        for (s, set) in sets.iter().enumerate() {
            rhs[m + s] = set.len() as f64;
        }
        let sol = if dim == 0 {
            DVector::zeros(0)
        } else {
            let svd = kkt.clone().svd(true, true);
            match svd.solve(&rhs, 1e-11 * kkt.amax().max(1.0)) {
                Ok(s) => s,
                Err(_) => continue,
            }
        };
        if dim > 0 && (&kkt * &sol - &rhs).amax() > 1e-8 * (1.0 + rhs.amax()) {
            continue;
        }
        let mut w = DVector::zeros(n);
        for (a, &i) in free.iter().enumerate() {
            w[i] = sol[a];
        }
        if w.iter().any(|&x| x < -1e-10) {
            continue;
        }
        let w = w.map(|x| x.max(0.0));
        let obj = 0.5 * w.dot(&(q * &w)) - c.dot(&w);
        if obj < best.0 {
            best = (obj, w);
        }
    }
    best
}

/// Random PSD matrix `B B'` with `rank` columns.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Ordinary least squares through a QR factorization.
pub fn qr_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r().solve_upper_triangular(&qty).expect("full rank design")
}

/// Uncensored final-outcome panel from unit-major arrays.
pub fn simple_panel(n: usize, periods: usize, p: usize, x: Vec<f64>, a: Vec<u8>, y: Vec<f64>) -> kow::panel::LongitudinalPanel {
    kow::panel::LongitudinalPanel::from_parts(kow::panel::PanelParts {
        unit_ids: (0..n).map(|i| i.to_string()).collect(),
        periods,
        confounder_names: (0..p).map(|k| format!("x{k}")).collect(),
        treatment: a,
        censored: vec![0; n * periods],
        confounders: x,
        outcome_mode: kow::panel::OutcomeMode::Final,
        outcome: y,
        outcome_observed: vec![true; n],
    })
    .expect("valid panel")
}

/// Random panel with standard normal confounders, fair-coin treatments and
/// the given outcomes.
pub fn noise_panel(rng: &mut ChaCha8Rng, periods: usize, p: usize, y: Vec<f64>) -> kow::panel::LongitudinalPanel {
    use rand_distr::{Distribution, StandardNormal};
    let n = y.len();
    let x = (0..n * periods * p).map(|_| StandardNormal.sample(rng)).collect();
    let a = (0..n * periods).map(|_| u8::from(rng.random_bool(0.5))).collect();
    simple_panel(n, periods, p, x, a, y)
}
