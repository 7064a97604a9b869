//! Primal active-set solver for `min 1/2 w'Qw - c'w` subject to `w >= 0` and
//! sum constraints `sum_{i in S_k} w_i = |S_k|`.
//!
//! The free-set Hessian is kept as an updatable Cholesky factor; equality
//! constraints are eliminated with the range-space (Schur complement) method.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::balance::BalanceProblem;
use crate::error::{KowError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Relative KKT tolerance, scaled by `1 + |c|_inf`.
    pub tol: f64,
    /// Active-set iterations; `None` means `10 n`.
    pub max_iter: Option<usize>,
    /// Projected-gradient iterations used to guess the support.
    pub warm_start_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
            warm_start_iter: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    /// Active set converged but the KKT residuals exceed the tolerance.
    Inaccurate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    /// Multipliers of the sum constraints.
    pub equality_multipliers: Vec<f64>,
    /// Coordinates with an all-zero row and no penalty, fixed at 1.
    pub fixed_at_one: Vec<usize>,
    /// Ridge added to the diagonal when a singular Hessian met equality constraints.
    pub ridge: f64,
}

/// Cholesky factor of the free-set Hessian supporting append and delete.
struct UpdatableCholesky {
    cap: usize,
    m: usize,
    l: Vec<f64>,
}

impl UpdatableCholesky {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            m: 0,
            l: vec![0.0; cap * cap],
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.cap + j]
    }

    /// Replace the factor by a blocked factorization of `a`. Returns false,
    /// leaving the factor empty, when a squared pivot is not above `min_pivot`.
    fn factor(&mut self, a: nalgebra::DMatrix<f64>, min_pivot: f64) -> bool {
        let m = a.nrows();
        self.m = 0;
        let Some(c) = a.cholesky() else {
            return false;
        };
        let l = c.l_dirty();
        if (0..m).any(|i| !(l[(i, i)] * l[(i, i)] > min_pivot)) {
            return false;
        }
        for i in 0..m {
            for j in 0..=i {
                self.l[i * self.cap + j] = l[(i, j)];
            }
        }
        self.m = m;
        true
    }

    fn forward(&self, b: &mut [f64]) {
        for i in 0..self.m {
            let row = &self.l[i * self.cap..i * self.cap + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - s) / self.at(i, i);
        }
    }

    fn backward(&self, b: &mut [f64]) {
        for i in (0..self.m).rev() {
            let mut s = b[i];
            for k in i + 1..self.m {
                s -= self.at(k, i) * b[k];
            }
            b[i] = s / self.at(i, i);
        }
    }

    fn solve(&self, b: &mut [f64]) {
        self.forward(b);
        self.backward(b);
    }

    /// Try to append a row/column; returns the squared pivot when it is not
    /// above `min_pivot` and leaves the factor untouched.
    fn append(&mut self, col: &[f64], diag: f64, min_pivot: f64) -> std::result::Result<(), f64> {
        let m = self.m;
        let mut v = col.to_vec();
        self.forward(&mut v);
        let p2 = diag - v.iter().map(|x| x * x).sum::<f64>();
        if !(p2 > min_pivot) {
            return Err(p2);
        }
        let row = &mut self.l[m * self.cap..m * self.cap + m + 1];
        row[..m].copy_from_slice(&v);
        row[m] = p2.sqrt();
        self.m += 1;
        Ok(())
    }

    fn remove(&mut self, k: usize) {
        let cap = self.cap;
        let m = self.m;
        for i in k..m - 1 {
            for j in 0..=i + 1 {
                self.l[i * cap + j] = self.l[(i + 1) * cap + j];
            }
        }
        for j in 0..m {
            self.l[(m - 1) * cap + j] = 0.0;
        }
        for i in k..m - 1 {
            let a = self.l[i * cap + i];
            let b = self.l[i * cap + i + 1];
            let r = a.hypot(b);
            let (c, s) = if r == 0.0 { (1.0, 0.0) } else { (a / r, b / r) };
            for row in i..m - 1 {
                let x = self.l[row * cap + i];
                let y = self.l[row * cap + i + 1];
                self.l[row * cap + i] = c * x + s * y;
                self.l[row * cap + i + 1] = -s * x + c * y;
            }
            self.l[i * cap + i + 1] = 0.0;
            if self.l[i * cap + i] < 0.0 {
                for row in i..m - 1 {
                    self.l[row * cap + i] = -self.l[row * cap + i];
                }
            }
        }
        self.m -= 1;
    }
}

struct Solver<'a> {
    q: &'a nalgebra::DMatrix<f64>,
    c: &'a DVector<f64>,
    ridge: f64,
    sets: Vec<Vec<usize>>,
    rhs: Vec<f64>,
    /// `membership[i]` lists the constraint indices containing `i`.
    membership: Vec<Vec<usize>>,
    min_pivot: f64,
    neg_tol: f64,
    /// Set once a full factorization has confirmed `Q` is PSD.
    psd_checked: std::cell::Cell<bool>,
}

enum Append {
    Done,
    Singular,
}

impl<'a> Solver<'a> {
    fn qij(&self, i: usize, j: usize) -> f64 {
        let v = self.q[(i, j)];
        if i == j {
            v + self.ridge
        } else {
            v
        }
    }

    /// Updated factors of a rank-deficient `Q` can report pivots well below
    /// zero; a jittered Cholesky of the whole matrix decides.
    fn confirm_psd(&self) -> bool {
        if self.psd_checked.get() {
            return true;
        }
        let n = self.q.nrows();
        let jitter = 1e-8 * self.q.norm().max(f64::MIN_POSITIVE);
        let mut m = self.q.clone();
        for i in 0..n {
            m[(i, i)] += self.ridge + jitter;
        }
        let ok = m.cholesky().is_some();
        self.psd_checked.set(ok);
        ok
    }

    fn append(&self, chol: &mut UpdatableCholesky, free: &[usize], j: usize) -> Result<Append> {
        let col: Vec<f64> = free.iter().map(|&i| self.qij(i, j)).collect();
        match chol.append(&col, self.qij(j, j), self.min_pivot) {
            Ok(()) => Ok(Append::Done),
            Err(p2) if p2 < -self.neg_tol && !self.confirm_psd() => Err(KowError::IndefiniteHessian { pivot: p2 }),
            Err(_) => Ok(Append::Singular),
        }
    }

    /// Minimizer over the free set with bound variables at zero, plus the
    /// equality multipliers.
    fn subproblem(&self, chol: &UpdatableCholesky, free: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = free.len();
        let k = self.sets.len();
        let cf: Vec<f64> = free.iter().map(|&i| self.c[i]).collect();
        if k == 0 {
            let mut x = cf;
            chol.solve(&mut x);
            return Ok((x, Vec::new()));
        }
        // Y = Q_FF^{-1} E_F^T, S = E_F Y.
        let mut ys = Vec::with_capacity(k);
        for s in 0..k {
            let mut col: Vec<f64> = free
                .iter()
                .map(|&i| f64::from(u8::from(self.membership[i].contains(&s))))
                .collect();
            chol.solve(&mut col);
            ys.push(col);
        }
        let mut smat = nalgebra::DMatrix::zeros(k, k);
        for a in 0..k {
            for (p, &i) in free.iter().enumerate() {
                if self.membership[i].contains(&a) {
                    for b in 0..k {
                        smat[(a, b)] += ys[b][p];
                    }
                }
            }
        }
        let lu = smat.lu();
        // Solves [Q_FF E_F'; E_F 0] [x; nu] = [b; r].
        let kkt_solve = |mut x: Vec<f64>, r: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
            chol.solve(&mut x);
            let mut t = -DVector::from_column_slice(r);
            for (p, &i) in free.iter().enumerate() {
                for &a in &self.membership[i] {
                    t[a] += x[p];
                }
            }
            let nu = lu
                .solve(&t)
                .filter(|v: &DVector<f64>| v.iter().all(|x| x.is_finite()))
                .ok_or_else(|| KowError::Infeasible("sum constraints are inconsistent on the free set".into()))?;
            for p in 0..m {
                for b in 0..k {
                    x[p] -= ys[b][p] * nu[b];
                }
            }
            Ok((x, nu.iter().copied().collect()))
        };
        let (mut x, mut nu) = kkt_solve(cf.clone(), &self.rhs)?;
        // A nearly singular Q_FF (ridge fallback) leaves visible residuals;
        // iterative refinement removes most of them.
        for _ in 0..3 {
            let mut r1 = cf.clone();
            for (p, &i) in free.iter().enumerate() {
                for (pp, &j) in free.iter().enumerate() {
                    r1[p] -= self.qij(i, j) * x[pp];
                }
                for &a in &self.membership[i] {
                    r1[p] -= nu[a];
                }
            }
            let mut r2 = self.rhs.clone();
            for (p, &i) in free.iter().enumerate() {
                for &a in &self.membership[i] {
                    r2[a] -= x[p];
                }
            }
            let scale = 1.0 + cf.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let worst = r1.iter().chain(&r2).fold(0.0f64, |a, v| a.max(v.abs()));
            if worst <= 1e-14 * scale {
                break;
            }
            let (dx, dnu) = kkt_solve(r1, &r2)?;
            x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            nu.iter_mut().zip(&dnu).for_each(|(a, b)| *a += b);
        }
        Ok((x, nu))
    }

    /// Gradient of the Lagrangian `Qw - c + E'nu` at coordinate `i`.
    fn lagrangian_grad(&self, w: &[f64], nu: &[f64], i: usize) -> f64 {
        let col = self.q.column(i);
        let mut g = -self.c[i] + self.ridge * w[i];
        for (j, &wj) in w.iter().enumerate() {
            if wj != 0.0 {
                g += col[j] * wj;
            }
        }
        for &s in &self.membership[i] {
            g += nu[s];
        }
        g
    }
}

/// Projected-gradient iterations with an unchanged support before stopping.
const SUPPORT_PATIENCE: usize = 10;

/// Accelerated projected gradient on `w >= 0`, used only to guess the support.
fn projected_gradient(q: &nalgebra::DMatrix<f64>, c: &DVector<f64>, start: DVector<f64>, iters: usize) -> DVector<f64> {
    // Frobenius norm bounds the largest eigenvalue of the PSD Q.
    let lip = q.norm();
    if lip <= 0.0 || iters == 0 {
        return start;
    }
    let mut w = start;
    let mut prev = w.clone();
    let mut tk = 1.0f64;
    let mut stable = 0;
    for _ in 0..iters {
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let beta = (tk - 1.0) / tn;
        let y = &w + (&w - &prev) * beta;
        let grad = q * &y - c;
        let next = (y - grad / lip).map(|x| x.max(0.0));
        prev = std::mem::replace(&mut w, next);
        tk = tn;
        if (&w - &prev).amax() <= 1e-12 * (1.0 + w.amax()) {
            break;
        }
        // Only the support is used; stop once it has settled.
        let same_support = w.iter().zip(prev.iter()).all(|(a, b)| (*a > 0.0) == (*b > 0.0));
        stable = if same_support { stable + 1 } else { 0 };
        if stable >= SUPPORT_PATIENCE {
            break;
        }
    }
    w
}

pub fn solve(problem: &BalanceProblem, opts: &SolveOptions) -> Result<QpSolution> {
    solve_from(problem, None, opts)
}

/// Solve starting from `start` (e.g. the solution at a neighbouring lambda).
/// Starts violating the sum constraints are replaced by `e`.
pub fn solve_from(problem: &BalanceProblem, start: Option<&[f64]>, opts: &SolveOptions) -> Result<QpSolution> {
    let n = problem.n();
    if problem.q.shape() != (n, n) {
        return Err(KowError::DimensionMismatch(format!(
            "Q is {:?} but c has {n} entries",
            problem.q.shape()
        )));
    }
    if let Some(s) = start {
        if s.len() != n {
            return Err(KowError::DimensionMismatch(format!("start has {} entries, expected {n}", s.len())));
        }
    }
    if !(opts.tol > 0.0) {
        return Err(KowError::Config(format!("qp tolerance must be positive, got {}", opts.tol)));
    }
    let first = attempt(problem, start, opts, 0.0)?;
    match first {
        Some(sol) => Ok(sol),
        None => {
            // Singular Hessian with sum constraints: add a tiny ridge.
            let scale = (0..n).map(|i| problem.q[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
            let ridge = 1e-10 * scale;
            attempt(problem, start, opts, ridge)?
                .ok_or_else(|| KowError::Factorization("free-set Hessian stayed singular after ridge".into()))
        }
    }
}

fn attempt(problem: &BalanceProblem, start: Option<&[f64]>, opts: &SolveOptions, ridge: f64) -> Result<Option<QpSolution>> {
    let n = problem.n();
    let q = &problem.q;
    let c = &problem.c;
    let cinf = c.amax();
    let gtol = opts.tol * (1.0 + cinf);
    let diag_max = (0..n).map(|i| q[(i, i)].abs()).fold(0.0, f64::max);
    let min_pivot = 1e-12 * diag_max.max(f64::MIN_POSITIVE);

    // Coordinates with an all-zero row: W_i only enters through -c_i W_i.
    let mut fixed_at_one = Vec::new();
    let mut pinned_zero = vec![false; n];
    let mut fixed = vec![false; n];
    for i in 0..n {
        if q.column(i).iter().all(|&v| v == 0.0) {
            if c[i] > 0.0 {
                return Err(KowError::Unbounded(i));
            }
            fixed[i] = true;
            if c[i] < 0.0 {
                pinned_zero[i] = true;
            } else {
                fixed_at_one.push(i);
            }
        }
    }

    let mut sets = Vec::new();
    let mut rhs = Vec::new();
    let mut membership = vec![Vec::new(); n];
    for set in &problem.equalities {
        let k = sets.len();
        let mut free_members = Vec::new();
        let mut r = set.len() as f64;
        for &i in set {
            if fixed[i] {
                if !pinned_zero[i] {
                    r -= 1.0;
                }
            } else {
                free_members.push(i);
            }
        }
        if free_members.is_empty() {
            if r.abs() > 1e-12 {
                return Err(KowError::Infeasible("constraint set has no adjustable weights".into()));
            }
            continue;
        }
        if r < 0.0 {
            return Err(KowError::Infeasible("fixed weights exceed a constraint total".into()));
        }
        for &i in &free_members {
            membership[i].push(k);
        }
        sets.push(free_members);
        rhs.push(r);
    }
    let has_eq = !sets.is_empty();

    let solver = Solver {
        q,
        c,
        ridge,
        sets,
        rhs,
        membership,
        min_pivot,
        neg_tol: 1e-8 * diag_max,
        psd_checked: std::cell::Cell::new(false),
    };

    // Feasible start.
    let e_start = || -> Vec<f64> {
        let mut w = vec![1.0; n];
        for i in 0..n {
            if pinned_zero[i] {
                w[i] = 0.0;
            }
        }
        if has_eq {
            // Scale each set so the free part matches its total.
            for (k, set) in solver.sets.iter().enumerate() {
                let s: f64 = set.iter().map(|&i| w[i]).sum();
                if s > 0.0 && (s - solver.rhs[k]).abs() > 0.0 {
                    for &i in set {
                        w[i] *= solver.rhs[k] / s;
                    }
                }
            }
        }
        w
    };
    let mut w: Vec<f64> = if has_eq {
        match start {
            Some(s) if equality_violation(&solver, s) <= 1e-12 * (1.0 + n as f64) && s.iter().all(|&x| x >= 0.0) => {
                s.to_vec()
            }
            _ => e_start(),
        }
    } else {
        let init = match start {
            Some(s) => DVector::from_iterator(n, s.iter().map(|&x| x.max(0.0))),
            None => DVector::from_iterator(n, e_start()),
        };
        let guess = if start.is_some() {
            init
        } else {
            projected_gradient(q, c, init, opts.warm_start_iter)
        };
        guess.iter().copied().collect()
    };
    for i in 0..n {
        if fixed[i] {
            w[i] = if pinned_zero[i] { 0.0 } else { 1.0 };
        }
    }

    let mut chol = UpdatableCholesky::new(n);
    for i in 0..n {
        if !fixed[i] && w[i] < 0.0 {
            w[i] = 0.0;
        }
    }
    let support: Vec<usize> = (0..n).filter(|&i| !fixed[i] && w[i] > 0.0).collect();
    let block = nalgebra::DMatrix::from_fn(support.len(), support.len(), |a, b| solver.qij(support[a], support[b]));
    let mut free: Vec<usize> = Vec::new();
    let pending: &[usize] = if chol.factor(block, min_pivot) {
        free.clone_from(&support);
        &[]
    } else {
        &support
    };
    for &i in pending {
        match solver.append(&mut chol, &free, i)? {
            Append::Done => free.push(i),
            Append::Singular => {
                if has_eq {
                    return Ok(None);
                }
                w[i] = 0.0;
            }
        }
    }

    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let mut iterations = 0;
    let mut nu: Vec<f64> = vec![0.0; solver.sets.len()];
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let (x, nu_new) = solver.subproblem(&chol, &free)?;
        // Ratio test toward the free-set minimizer.
        let mut alpha = 1.0;
        let mut blocking = None;
        for (p, &i) in free.iter().enumerate() {
            let d = x[p] - w[i];
            if x[p] < 0.0 && d < 0.0 {
                let a = w[i] / -d;
                if a < alpha {
                    alpha = a;
                    blocking = Some(p);
                }
            }
        }
        if let Some(p) = blocking {
            for (pp, &i) in free.iter().enumerate() {
                w[i] += alpha * (x[pp] - w[i]);
            }
            let i = free.remove(p);
            chol.remove(p);
            w[i] = 0.0;
            for &j in &free {
                if w[j] < 0.0 {
                    w[j] = 0.0;
                }
            }
            continue;
        }
        for (p, &i) in free.iter().enumerate() {
            w[i] = x[p];
        }
        nu = nu_new;
        // Most negative bound multiplier.
        let mut best: Option<(usize, f64)> = None;
        let in_free = {
            let mut mask = vec![false; n];
            for &i in &free {
                mask[i] = true;
            }
            mask
        };
        for i in 0..n {
            if fixed[i] || in_free[i] {
                continue;
            }
            let g = solver.lagrangian_grad(&w, &nu, i);
            if g < -gtol && best.is_none_or(|(_, bg)| g < bg) {
                best = Some((i, g));
            }
        }
        let Some((j, _)) = best else {
            converged = true;
            break;
        };
        match solver.append(&mut chol, &free, j)? {
            Append::Done => free.push(j),
            Append::Singular => {
                if has_eq {
                    return Ok(None);
                }
                // Zero-curvature direction: d_F = -Q_FF^{-1} Q_Fj, d_j = 1,
                // slope g_j < 0. Move until a free coordinate hits zero.
                let mut d: Vec<f64> = free.iter().map(|&i| solver.qij(i, j)).collect();
                chol.solve(&mut d);
                let mut step = f64::INFINITY;
                let mut blocker = None;
                for (p, &i) in free.iter().enumerate() {
                    if d[p] > 0.0 {
                        let a = w[i] / d[p];
                        if a < step {
                            step = a;
                            blocker = Some(p);
                        }
                    }
                }
                let Some(p) = blocker else {
                    return Err(KowError::Unbounded(j));
                };
                for (pp, &i) in free.iter().enumerate() {
                    w[i] = (w[i] - step * d[pp]).max(0.0);
                }
                w[j] = step;
                let i = free.remove(p);
                chol.remove(p);
                w[i] = 0.0;
                match solver.append(&mut chol, &free, j)? {
                    Append::Done => free.push(j),
                    Append::Singular => {
                        return Err(KowError::Factorization(format!(
                            "coordinate {j} stays dependent after a zero-curvature step"
                        )))
                    }
                }
            }
        }
    }

    let wv = DVector::from_column_slice(&w);
    let kkt = residuals(&solver, &w, &nu, &fixed);
    let status = if !converged {
        QpStatus::MaxIter
    } else if kkt.stationarity <= gtol && kkt.primal <= gtol && kkt.complementarity <= gtol {
        QpStatus::Optimal
    } else {
        QpStatus::Inaccurate
    };
    Ok(Some(QpSolution {
        objective: problem.objective(&wv),
        weights: w,
        iterations,
        status,
        kkt,
        equality_multipliers: nu,
        fixed_at_one,
        ridge,
    }))
}

fn equality_violation(solver: &Solver<'_>, w: &[f64]) -> f64 {
    solver
        .sets
        .iter()
        .zip(&solver.rhs)
        .map(|(set, r)| (set.iter().map(|&i| w[i]).sum::<f64>() - r).abs())
        .fold(0.0, f64::max)
}

fn residuals(solver: &Solver<'_>, w: &[f64], nu: &[f64], fixed: &[bool]) -> KktResiduals {
    let mut stationarity: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    let mut primal: f64 = 0.0;
    for i in 0..w.len() {
        if fixed[i] {
            continue;
        }
        let g = solver.lagrangian_grad(w, nu, i);
        let mu = if w[i] == 0.0 { g.max(0.0) } else { 0.0 };
        stationarity = stationarity.max((g - mu).abs());
        complementarity = complementarity.max(mu * w[i]);
        primal = primal.max(-w[i]);
    }
    primal = primal.max(equality_violation(solver, w));
    KktResiduals {
        stationarity,
        primal,
        complementarity,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformLimitPoint {
    pub lambda: f64,
    /// `max_i |W_i - 1|`
    pub max_deviation: f64,
    /// `|W - e|_2`
    pub l2_deviation: f64,
}

/// Solve along an ascending lambda grid (warm-started) and report the
/// distance of the weights from uniform at each point.
pub fn uniform_limit_check(problem: &BalanceProblem, lambdas: &[f64], opts: &SolveOptions) -> Result<Vec<UniformLimitPoint>> {
    if lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(KowError::Config("lambda grid must be ascending".into()));
    }
    let mut out = Vec::with_capacity(lambdas.len());
    let mut prev: Option<Vec<f64>> = None;
    for &lambda in lambdas {
        let sol = solve_from(&problem.with_lambda(lambda), prev.as_deref(), opts)?;
        let dev: Vec<f64> = sol.weights.iter().map(|w| w - 1.0).collect();
        out.push(UniformLimitPoint {
            lambda,
            max_deviation: dev.iter().fold(0.0, |m, d| m.max(d.abs())),
            l2_deviation: dev.iter().map(|d| d * d).sum::<f64>().sqrt(),
        });
        prev = Some(sol.weights);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn problem(q: DMatrix<f64>, c: DVector<f64>, eq: Vec<Vec<usize>>) -> BalanceProblem {
        BalanceProblem {
            q,
            c,
            lambda: 0.0,
            equalities: eq,
            offset: 0.0,
        }
    }

    #[test]
    fn identity_problem() {
        let n = 5;
        let p = problem(DMatrix::identity(n, n) * 2.0, DVector::from_element(n, 2.0), vec![]);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        for w in &s.weights {
            assert!((w - 1.0).abs() < 1e-12);
        }
        assert!((s.objective + n as f64).abs() < 1e-12);
    }

    #[test]
    fn bound_active() {
        let p = problem(DMatrix::identity(2, 2) * 2.0, DVector::from_vec(vec![-2.0, 2.0]), vec![]);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.weights[0], 0.0);
        assert!((s.weights[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_append_remove_matches_fresh() {
        let a = DMatrix::from_fn(5, 5, |i, j| 1.0 / (1.0 + i as f64 + j as f64) + if i == j { 1.0 } else { 0.0 });
        let mut ch = UpdatableCholesky::new(5);
        for j in 0..5 {
            let col: Vec<f64> = (0..j).map(|i| a[(i, j)]).collect();
            ch.append(&col, a[(j, j)], 0.0).unwrap();
        }
        ch.remove(1);
        let keep = [0usize, 2, 3, 4];
        let sub = DMatrix::from_fn(4, 4, |i, j| a[(keep[i], keep[j])]);
        let fresh = sub.cholesky().unwrap().l();
        for i in 0..4 {
            for j in 0..=i {
                assert!((ch.at(i, j) - fresh[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_hessian_without_penalty() {
        // Rank-one Q with c in its range; many minimizers.
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let q = &v * v.transpose();
        let c = &v * 2.0;
        let s = solve(&problem(q.clone(), c.clone(), vec![]), &SolveOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        // Optimum: v'w = 2 attained, objective -2.
        assert!((s.objective + 2.0).abs() < 1e-10, "{}", s.objective);
    }

    #[test]
    fn zero_rows_are_fixed_at_one() {
        let mut q = DMatrix::zeros(3, 3);
        q[(0, 0)] = 2.0;
        q[(2, 2)] = 2.0;
        let c = DVector::from_vec(vec![2.0, 0.0, 4.0]);
        let s = solve(&problem(q, c, vec![]), &SolveOptions::default()).unwrap();
        assert_eq!(s.fixed_at_one, vec![1]);
        assert_eq!(s.weights[1], 1.0);
        assert!((s.weights[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn equality_constraint_holds() {
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 3.0]);
        let c = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let s = solve(&problem(q, c, vec![vec![0, 1, 2]]), &SolveOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.weights.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let q = DMatrix::from_fn(8, 8, |i, j| ((i * 3 + j * 5) % 7) as f64);
        let q = &q * q.transpose();
        let c = DVector::from_fn(8, |i, _| (i as f64 - 3.5) * 4.0);
        let p = problem(q, c, vec![]);
        let a = solve(&p, &SolveOptions::default()).unwrap();
        let b = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(a.weights, b.weights);
    }
}
