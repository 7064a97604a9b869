//! Empirical and worst-case discrepancies and assembly of the weighting QP.
//!
//! Every discrepancy is written as `(1/n) sum_i z_i h_i` with a per-unit
//! coefficient vector `z`:
//!
//! * period 1: `z_i = W_i D_i - R_i` (the reference moment is unweighted),
//! * period t >= 2: `z_i = W_i (D_i - R_i)`,
//!
//! where `D` marks units in the arm (and, with censoring, still uncensored at
//! `t`) and `R` marks the reference population (everyone, or with censoring
//! the units uncensored at `t - 1`). In an RKHS the supremum over unit-norm
//! `h` is `sqrt(z' K z) / n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KowError, Result};
use crate::kernels::GramMatrix;
use crate::panel::LongitudinalPanel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BalanceMode {
    #[default]
    Uncensored,
    Censored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentIndicator {
    pub period: usize,
    pub arm: u8,
    /// `D_i`: in arm `arm` at `period` (and uncensored at `period` in censored mode).
    pub treated: Vec<f64>,
    /// `R_i`: reference population (uncensored at `period - 1` in censored mode).
    pub reference: Vec<f64>,
}

impl TreatmentIndicator {
    pub fn new(panel: &LongitudinalPanel, period: usize, arm: u8, mode: BalanceMode) -> Result<Self> {
        panel.check_period(period)?;
        let n = panel.n_units();
        let (treated, reference) = match mode {
            BalanceMode::Uncensored => (
                (0..n)
                    .map(|i| f64::from(u8::from(panel.treatment_or_zero(i, period) == f64::from(arm))))
                    .collect(),
                vec![1.0; n],
            ),
            BalanceMode::Censored => (
                (0..n)
                    .map(|i| f64::from(u8::from(panel.treatment(i, period) == Some(arm))))
                    .collect(),
                (0..n).map(|i| f64::from(u8::from(panel.at_risk(i, period)))).collect(),
            ),
        };
        Ok(Self {
            period,
            arm,
            treated,
            reference,
        })
    }

    pub fn n(&self) -> usize {
        self.treated.len()
    }

    /// Coefficients `z` of the discrepancy for weights `w`.
    pub fn coefficients(&self, w: &[f64]) -> Vec<f64> {
        let first = self.period == 1;
        w.iter()
            .zip(self.treated.iter().zip(&self.reference))
            .map(|(&wi, (&d, &r))| if first { wi * d - r } else { wi * (d - r) })
            .collect()
    }

    /// Diagonal `m` of the quadratic part: `z = diag(m) W - r`.
    fn multiplier(&self) -> Vec<f64> {
        if self.period == 1 {
            self.treated.clone()
        } else {
            self.treated.iter().zip(&self.reference).map(|(d, r)| d - r).collect()
        }
    }
}

/// Both arms at every period `1..=horizon`.
pub fn indicators(panel: &LongitudinalPanel, horizon: usize, mode: BalanceMode) -> Result<Vec<[TreatmentIndicator; 2]>> {
    panel.check_period(horizon)?;
    (1..=horizon)
        .map(|t| {
            Ok([
                TreatmentIndicator::new(panel, t, 0, mode)?,
                TreatmentIndicator::new(panel, t, 1, mode)?,
            ])
        })
        .collect()
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(KowError::DimensionMismatch(format!("{} weights for {n} units", w.len())));
    }
    if let Some((index, &value)) = w.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(KowError::NegativeWeight { index, value });
    }
    Ok(())
}

/// Sample discrepancy `(1/n) sum_i z_i h_i` for explicit function values `h`.
pub fn empirical_discrepancy(weights: &[f64], indicator: &TreatmentIndicator, h: &[f64]) -> Result<f64> {
    let n = indicator.n();
    check_weights(weights, n)?;
    if h.len() != n {
        return Err(KowError::DimensionMismatch(format!("{} function values for {n} units", h.len())));
    }
    let z = indicator.coefficients(weights);
    Ok(z.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / n as f64)
}

/// Tolerance below zero for a quadratic form before it counts as an assembly error.
pub const QUADRATIC_FORM_TOL: f64 = 1e-10;

fn quad_form(k: &DMatrix<f64>, z: &[f64]) -> f64 {
    let n = z.len();
    let mut total = 0.0;
    for j in 0..n {
        if z[j] == 0.0 {
            continue;
        }
        let col = k.column(j);
        let mut s = 0.0;
        for i in 0..n {
            s += col[i] * z[i];
        }
        total += s * z[j];
    }
    total
}

/// Worst-case discrepancy `sqrt(z' K_t z) / n` over the unit ball of the RKHS.
pub fn worst_case_discrepancy(weights: &[f64], gram: &GramMatrix, indicator: &TreatmentIndicator) -> Result<f64> {
    let n = indicator.n();
    check_weights(weights, n)?;
    if gram.period != indicator.period || gram.n() != n {
        return Err(KowError::DimensionMismatch(format!(
            "gram for period {} ({} units) paired with indicator for period {} ({} units)",
            gram.period,
            gram.n(),
            indicator.period,
            n
        )));
    }
    let z = indicator.coefficients(weights);
    let value = quad_form(&gram.matrix, &z) / (n as f64 * n as f64);
    if value < -QUADRATIC_FORM_TOL {
        return Err(KowError::NegativeQuadraticForm { value });
    }
    Ok(value.max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceTerm {
    pub period: usize,
    pub arm: u8,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceReport {
    pub terms: Vec<ImbalanceTerm>,
    /// `1/2 sum_t (Delta_0^2 + Delta_1^2)`
    pub b2: f64,
}

pub fn imbalance_report(
    weights: &[f64],
    grams: &[GramMatrix],
    indicators: &[[TreatmentIndicator; 2]],
) -> Result<ImbalanceReport> {
    if grams.len() != indicators.len() {
        return Err(KowError::DimensionMismatch(format!(
            "{} grams for {} indicator periods",
            grams.len(),
            indicators.len()
        )));
    }
    let mut terms = Vec::with_capacity(2 * grams.len());
    for (g, pair) in grams.iter().zip(indicators) {
        for ind in pair {
            terms.push(ImbalanceTerm {
                period: ind.period,
                arm: ind.arm,
                delta: worst_case_discrepancy(weights, g, ind)?,
            });
        }
    }
    let b2 = 0.5 * terms.iter().map(|t| t.delta * t.delta).sum::<f64>();
    Ok(ImbalanceReport { terms, b2 })
}

/// Data of `min 1/2 W'QW - c'W` over `W >= 0` with optional sum constraints
/// `sum_{i in S} W_i = |S|`.
///
/// Unscaled convention: `1/2 W'QW - c'W + offset + lambda n` equals
/// `n^2 B^2(W) + lambda |W - e|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub lambda: f64,
    pub equalities: Vec<Vec<usize>>,
    /// Dropped constant `R' K_1 R` (`e' K_1 e` without censoring).
    pub offset: f64,
}

impl BalanceProblem {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.q * w)) - self.c.dot(w)
    }

    /// `B^2(W) + lambda |W - e|^2 / n^2`, i.e. the objective on the `1/n^2` scale.
    pub fn scaled_objective(&self, w: &DVector<f64>) -> f64 {
        let n = self.n() as f64;
        (self.objective(w) + self.offset + self.lambda * n) / (n * n)
    }

    /// Same problem with a different penalty.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        let shift = 2.0 * (lambda - self.lambda);
        for i in 0..self.n() {
            out.q[(i, i)] += shift;
            out.c[i] += shift;
        }
        out.lambda = lambda;
        out
    }

    /// `K°` with the penalty removed.
    pub fn balance_matrix(&self) -> DMatrix<f64> {
        let mut k = self.q.clone();
        for i in 0..self.n() {
            k[(i, i)] -= 2.0 * self.lambda;
        }
        k
    }

    /// Diagnostic JSON. Matrices are included only when requested and `n <= 200`.
    pub fn diagnostic(&self, with_matrices: bool) -> serde_json::Value {
        let mut v = serde_json::json!({
            "n": self.n(),
            "lambda": self.lambda,
            "offset": self.offset,
            "equalities": self.equalities.iter().map(Vec::len).collect::<Vec<_>>(),
            "q_frobenius": self.q.norm(),
            "c_norm": self.c.norm(),
        });
        if with_matrices && self.n() <= 200 {
            let rows: Vec<Vec<f64>> = self.q.row_iter().map(|r| r.iter().copied().collect()).collect();
            v["q"] = serde_json::json!(rows);
            v["c"] = serde_json::json!(self.c.as_slice());
        }
        v
    }
}

/// Build the KOW problem from per-period grams and indicator pairs.
pub fn assemble_problem(
    grams: &[GramMatrix],
    indicators: &[[TreatmentIndicator; 2]],
    lambda: f64,
    equalities: Option<&[Vec<usize>]>,
) -> Result<BalanceProblem> {
    if grams.is_empty() || grams.len() != indicators.len() {
        return Err(KowError::DimensionMismatch(format!(
            "{} grams for {} indicator periods",
            grams.len(),
            indicators.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(KowError::Config(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let n = grams[0].n();
    let mut q = DMatrix::zeros(n, n);
    for (g, pair) in grams.iter().zip(indicators) {
        for ind in pair {
            if ind.period != g.period || ind.n() != n || g.n() != n {
                return Err(KowError::DimensionMismatch(format!(
                    "gram for period {} paired with indicator for period {}",
                    g.period, ind.period
                )));
            }
        }
        let m: Vec<Vec<f64>> = pair.iter().map(TreatmentIndicator::multiplier).collect();
        for j in 0..n {
            let col = g.matrix.column(j);
            for i in 0..n {
                let s = m[0][i] * m[0][j] + m[1][i] * m[1][j];
                if s != 0.0 {
                    q[(i, j)] += s * col[i];
                }
            }
        }
    }
    let k1 = &grams[0].matrix;
    let first = &indicators[0];
    let reference = DVector::from_column_slice(&first[0].reference);
    let k1r = k1 * &reference;
    let mut c = DVector::zeros(n);
    for ind in first {
        for i in 0..n {
            c[i] += ind.treated[i] * k1r[i];
        }
    }
    let offset = reference.dot(&k1r);
    for i in 0..n {
        q[(i, i)] += 2.0 * lambda;
        c[i] += 2.0 * lambda;
    }
    let mut sets: Vec<Vec<usize>> = Vec::new();
    for set in equalities.unwrap_or_default() {
        if set.is_empty() {
            return Err(KowError::Infeasible("empty mean-one constraint set".into()));
        }
        if let Some(&bad) = set.iter().find(|&&i| i >= n) {
            return Err(KowError::DimensionMismatch(format!("constraint index {bad} out of range")));
        }
        let mut s = set.clone();
        s.sort_unstable();
        s.dedup();
        if !sets.contains(&s) {
            sets.push(s);
        }
    }
    Ok(BalanceProblem {
        q,
        c,
        lambda,
        equalities: sets,
        offset,
    })
}

/// Per-period mean-one sets over units uncensored at each period `1..=horizon`
/// (identical sets collapse to one constraint).
pub fn mean_one_sets(panel: &LongitudinalPanel, horizon: usize) -> Vec<Vec<usize>> {
    let mut sets: Vec<Vec<usize>> = Vec::new();
    for t in 1..=horizon {
        let s: Vec<usize> = (0..panel.n_units()).filter(|&i| !panel.is_censored(i, t)).collect();
        if !s.is_empty() && !sets.contains(&s) {
            sets.push(s);
        }
    }
    sets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;

    fn indicator(period: usize, treated: &[f64]) -> TreatmentIndicator {
        TreatmentIndicator {
            period,
            arm: 1,
            treated: treated.to_vec(),
            reference: vec![1.0; treated.len()],
        }
    }

    fn gram(period: usize, k: DMatrix<f64>) -> GramMatrix {
        GramMatrix {
            period,
            matrix: k,
            spec: KernelSpec::linear(),
        }
    }

    #[test]
    fn half_treated_discrepancy() {
        let ind = indicator(2, &[1.0, 1.0, 0.0, 0.0]);
        let d = empirical_discrepancy(&[1.0; 4], &ind, &[1.0; 4]).unwrap();
        assert!((d + 0.5).abs() < 1e-15);
    }

    #[test]
    fn untreated_boundary() {
        let ind = indicator(3, &[0.0; 3]);
        let w = [0.5, 2.0, 1.0];
        let h = [1.0, -1.0, 3.0];
        let d = empirical_discrepancy(&w, &ind, &h).unwrap();
        assert!((d - (-(0.5 - 2.0 + 3.0) / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn stratum_inverse_frequency_weights_balance_period_one() {
        // Stratum A: units 0..4 with 1 of 4 treated; stratum B: 4..6 with 1 of 2 treated.
        let treated = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let w = [4.0, 0.0, 0.0, 0.0, 2.0, 0.0];
        let ind = indicator(1, &treated);
        for h in [[1.0, 1.0, 1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 1.0, 1.0]] {
            assert!(empirical_discrepancy(&w, &ind, &h).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn length_mismatch_errors() {
        let ind = indicator(2, &[1.0, 0.0]);
        assert!(empirical_discrepancy(&[1.0], &ind, &[1.0, 1.0]).is_err());
        assert!(matches!(
            empirical_discrepancy(&[1.0, -1.0], &ind, &[1.0, 1.0]),
            Err(KowError::NegativeWeight { index: 1, .. })
        ));
    }

    #[test]
    fn all_in_arm_gives_zero() {
        let k = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0]);
        let ind = indicator(2, &[1.0; 3]);
        assert_eq!(worst_case_discrepancy(&[3.0, 1.0, 0.5], &gram(2, k.clone()), &ind).unwrap(), 0.0);
        let ind = indicator(1, &[1.0; 3]);
        assert!(worst_case_discrepancy(&[1.0; 3], &gram(1, k), &ind).unwrap() < 1e-12);
    }

    #[test]
    fn broken_gram_is_an_error() {
        let k = -DMatrix::<f64>::identity(2, 2);
        let ind = indicator(2, &[0.0, 0.0]);
        assert!(matches!(
            worst_case_discrepancy(&[1.0, 1.0], &gram(2, k), &ind),
            Err(KowError::NegativeQuadraticForm { .. })
        ));
    }

    #[test]
    fn identity_grams_give_t_times_identity() {
        let n = 4;
        let t = 3;
        let grams: Vec<_> = (1..=t).map(|p| gram(p, DMatrix::identity(n, n))).collect();
        let inds: Vec<_> = (1..=t)
            .map(|p| {
                let a = [1.0, 0.0, 1.0, 0.0];
                let mut i0 = indicator(p, &a.map(|x| 1.0 - x));
                i0.arm = 0;
                [i0, indicator(p, &a)]
            })
            .collect();
        let prob = assemble_problem(&grams, &inds, 0.0, None).unwrap();
        assert!((&prob.q - DMatrix::identity(n, n) * t as f64).amax() < 1e-15);
        assert!((&prob.c - DVector::from_element(n, 1.0)).amax() < 1e-15);
        assert_eq!(prob.offset, n as f64);
    }

    #[test]
    fn lambda_shift_matches_direct_assembly() {
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let mut i0 = indicator(1, &[0.0, 1.0]);
        i0.arm = 0;
        let inds = [[i0, indicator(1, &[1.0, 0.0])]];
        let grams = [gram(1, k)];
        let a = assemble_problem(&grams, &inds, 0.0, None).unwrap().with_lambda(3.0);
        let b = assemble_problem(&grams, &inds, 3.0, None).unwrap();
        assert!((&a.q - &b.q).amax() < 1e-15 && (&a.c - &b.c).amax() < 1e-15);
    }
}
