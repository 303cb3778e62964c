//! Factorial exposure coding, the multinomial-logit exposure model and
//! inverse-probability weights.
//!
//! Levels are 1-based. A unit with binary exposures `(A_1, …, A_K)` sits at
//! level `1 + Σ_k A_k 2^(k-1)`, so the all-zero pattern is level 1 and the
//! all-one pattern is level `L = 2^K`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::tensor::{Dims, Tensor3};

pub const DEFAULT_RIDGE: f64 = 1e-4;
pub const DEFAULT_FLOOR: f64 = 0.01;
/// Ridge applied when the fitted coefficients indicate separation.
pub const SEPARATION_RIDGE: f64 = 1e-2;
/// Coefficient magnitude (on standardized features) treated as divergence.
const SEPARATION_COEF: f64 = 25.0;
const MAX_ITER: usize = 1000;
const GRAD_TOL: f64 = 1e-8;
const MAX_EXPOSURES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureDesign {
    n_exposures: usize,
    levels: Vec<usize>,
    reference_level: usize,
}

impl ExposureDesign {
    /// Build from 1-based level indices.
    pub fn from_levels(n_exposures: usize, levels: Vec<usize>) -> Result<Self> {
        if n_exposures == 0 || n_exposures > MAX_EXPOSURES {
            return Err(Error::contract(format!(
                "number of exposures must be in 1..={MAX_EXPOSURES}, got {n_exposures}"
            )));
        }
        let n_levels = 1usize << n_exposures;
        if let Some((i, &l)) = levels.iter().enumerate().find(|(_, &l)| l == 0 || l > n_levels) {
            return Err(Error::contract(format!(
                "unit {i} has level {l}, outside 1..={n_levels}"
            )));
        }
        if levels.is_empty() {
            return Err(Error::contract("exposure design needs at least one unit"));
        }
        Ok(ExposureDesign {
            n_exposures,
            levels,
            reference_level: 1,
        })
    }

    pub fn with_reference(mut self, level: usize) -> Result<Self> {
        if level == 0 || level > self.n_levels() {
            return Err(Error::contract(format!(
                "reference level {level} outside 1..={}",
                self.n_levels()
            )));
        }
        self.reference_level = level;
        Ok(self)
    }

    pub fn n_exposures(&self) -> usize {
        self.n_exposures
    }

    pub fn n_levels(&self) -> usize {
        1 << self.n_exposures
    }

    pub fn n_units(&self) -> usize {
        self.levels.len()
    }

    /// 1-based level of every unit.
    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn level(&self, unit: usize) -> usize {
        self.levels[unit]
    }

    pub fn reference_level(&self) -> usize {
        self.reference_level
    }

    /// Binary exposure pattern `(A_1, …, A_K)` of a 1-based level.
    pub fn pattern(&self, level: usize) -> Vec<u8> {
        decode_level(level, self.n_exposures)
    }

    /// Pattern rendered as a bit string `A_1 A_2 … A_K`, e.g. `"10"`.
    pub fn pattern_label(&self, level: usize) -> String {
        self.pattern(level).iter().map(|b| char::from(b'0' + b)).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_levels()];
        for &l in &self.levels {
            c[l - 1] += 1;
        }
        c
    }

    /// Assignment tensor: 1 at `(i, level_i, o)` for every outcome, else 0.
    pub fn mask(&self, n_outcomes: usize) -> Result<Tensor3> {
        let dims = Dims::new(self.n_units(), self.n_levels(), n_outcomes);
        Tensor3::from_fn(dims, |i, l, _| if self.levels[i] == l + 1 { 1.0 } else { 0.0 })
    }

    pub fn subset(&self, units: &[usize]) -> ExposureDesign {
        ExposureDesign {
            n_exposures: self.n_exposures,
            levels: units.iter().map(|&i| self.levels[i]).collect(),
            reference_level: self.reference_level,
        }
    }
}

pub fn decode_level(level: usize, n_exposures: usize) -> Vec<u8> {
    let bits = level - 1;
    (0..n_exposures).map(|k| ((bits >> k) & 1) as u8).collect()
}

/// Map binary exposure rows to factorial levels.
pub fn encode_levels<R: AsRef<[u8]>>(rows: &[R]) -> Result<ExposureDesign> {
    let Some(first) = rows.first() else {
        return Err(Error::contract("exposure matrix has no rows"));
    };
    let k = first.as_ref().len();
    let mut levels = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != k {
            return Err(Error::contract(format!(
                "row {i} has {} exposures, expected {k}",
                row.len()
            )));
        }
        let mut level = 1usize;
        for (j, &a) in row.iter().enumerate() {
            match a {
                0 => {}
                1 => level += 1 << j,
                other => {
                    return Err(Error::contract(format!(
                        "exposure ({i}, {j}) = {other} is not binary"
                    )))
                }
            }
        }
        levels.push(level);
    }
    ExposureDesign::from_levels(k, levels)
}

/// Multinomial-logit exposure model. Level 1 is the baseline with scores
/// pinned at zero; row `ℓ - 2` of `coefficients` holds level `ℓ`'s
/// intercept followed by one slope per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub coefficients: DMatrix<f64>,
    pub baseline_level: usize,
    pub ridge: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Mean penalized log-likelihood at the solution.
    pub objective: f64,
    /// Objective after every accepted iteration.
    pub trace: Vec<f64>,
    pub separation_warning: bool,
}

impl PropensityModel {
    pub fn n_levels(&self) -> usize {
        self.coefficients.nrows() + 1
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.ncols() - 1
    }

    /// `N × L` probabilities; column `ℓ - 1` is level `ℓ`.
    pub fn predict_probs(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if features.ncols() != self.n_features() {
            return Err(Error::contract(format!(
                "propensity model expects {} features, got {}",
                self.n_features(),
                features.ncols()
            )));
        }
        Ok(softmax_probs(&self.coefficients, features))
    }
}

fn scores(coef: &DMatrix<f64>, features: &DMatrix<f64>) -> DMatrix<f64> {
    let n = features.nrows();
    let l = coef.nrows() + 1;
    let mut s = DMatrix::zeros(n, l);
    for lvl in 1..l {
        let row = coef.row(lvl - 1);
        for i in 0..n {
            let mut v = row[0];
            for j in 0..features.ncols() {
                v += row[j + 1] * features[(i, j)];
            }
            s[(i, lvl)] = v;
        }
    }
    s
}

fn softmax_probs(coef: &DMatrix<f64>, features: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = scores(coef, features);
    for mut row in s.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = (*v / total).max(f64::MIN_POSITIVE);
        }
    }
    s
}

/// Mean penalized log-likelihood and its gradient.
///
/// The intercepts are not penalized.
pub fn penalized_loglik(
    coef: &DMatrix<f64>,
    features: &DMatrix<f64>,
    levels: &[usize],
    ridge: f64,
) -> (f64, DMatrix<f64>) {
    let n = features.nrows();
    let s = scores(coef, features);
    let mut ll = 0.0;
    let mut grad = DMatrix::zeros(coef.nrows(), coef.ncols());
    let mut p = vec![0.0; s.ncols()];
    for i in 0..n {
        let row = s.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (k, v) in row.iter().enumerate() {
            p[k] = (v - max).exp();
            total += p[k];
        }
        let lse = max + total.ln();
        ll += row[levels[i] - 1] - lse;
        for lvl in 1..s.ncols() {
            let resid = f64::from(u8::from(levels[i] == lvl + 1)) - p[lvl] / total;
            let mut g = grad.row_mut(lvl - 1);
            g[0] += resid;
            for j in 0..features.ncols() {
                g[j + 1] += resid * features[(i, j)];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    ll *= inv_n;
    grad *= inv_n;
    let mut penalty = 0.0;
    for r in 0..coef.nrows() {
        for c in 1..coef.ncols() {
            penalty += coef[(r, c)] * coef[(r, c)];
            grad[(r, c)] -= ridge * coef[(r, c)];
        }
    }
    (ll - 0.5 * ridge * penalty, grad)
}

/// Ridge-penalized multinomial logit by gradient ascent with a
/// Barzilai–Borwein trial step and Armijo backtracking.
pub fn fit_multinomial(
    features: &DMatrix<f64>,
    design: &ExposureDesign,
    ridge: f64,
) -> Result<PropensityModel> {
    let model = fit_once(features, design, ridge)?;
    let diverged = model.coefficients.iter().any(|c| c.abs() > SEPARATION_COEF);
    if diverged && ridge < SEPARATION_RIDGE {
        log::warn!(
            "propensity coefficients diverged (|coef| > {SEPARATION_COEF}); likely separation, refitting with ridge {SEPARATION_RIDGE}"
        );
        let mut refit = fit_once(features, design, SEPARATION_RIDGE)?;
        refit.separation_warning = true;
        return Ok(refit);
    }
    Ok(model)
}

fn fit_once(features: &DMatrix<f64>, design: &ExposureDesign, ridge: f64) -> Result<PropensityModel> {
    let n = features.nrows();
    let l = design.n_levels();
    if n != design.n_units() {
        return Err(Error::contract(format!(
            "{} feature rows for {} units",
            n,
            design.n_units()
        )));
    }
    if n <= l {
        return Err(Error::contract(format!("propensity fit needs N > L ({n} <= {l})")));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::contract(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("propensity features must be finite"));
    }
    let levels = design.levels();
    let mut coef = DMatrix::zeros(l - 1, features.ncols() + 1);
    // Start the intercepts at the log frequency ratios.
    let counts = design.counts();
    let base = (counts[0].max(1)) as f64;
    for lvl in 1..l {
        coef[(lvl - 1, 0)] = ((counts[lvl].max(1)) as f64 / base).ln();
    }
    let (mut f, mut g) = penalized_loglik(&coef, features, levels, ridge);
    let mut trace = vec![f];
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..MAX_ITER {
        if !f.is_finite() {
            return Err(Error::PropensityOverflow { iteration: iter, ridge });
        }
        if g.amax() <= GRAD_TOL {
            converged = true;
            break;
        }
        iterations = iter + 1;
        let g_sq = g.norm_squared();
        let mut t = step;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &coef + &g * t;
            let (ft, gt) = penalized_loglik(&trial, features, levels, ridge);
            if ft.is_finite() && ft >= f + 1e-4 * t * g_sq {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((new_coef, fnew, gnew)) = accepted else {
            // No ascent possible at machine precision.
            converged = g.amax() <= 1e-6;
            break;
        };
        debug_assert!(fnew >= f);
        let s = &new_coef - &coef;
        let y = &g - &gnew;
        let sy = s.dot(&y);
        step = if sy > 0.0 { (s.norm_squared() / sy).clamp(1e-8, 1e8) } else { t * 2.0 };
        coef = new_coef;
        f = fnew;
        g = gnew;
        trace.push(f);
    }
    if !f.is_finite() {
        return Err(Error::PropensityOverflow { iteration: iterations, ridge });
    }
    if !converged {
        log::warn!("propensity fit stopped after {iterations} iterations (|grad|max = {:e})", g.amax());
    }
    Ok(PropensityModel {
        coefficients: coef,
        baseline_level: 1,
        ridge,
        converged,
        iterations,
        objective: f,
        trace,
        separation_warning: false,
    })
}

pub fn predict_probs(model: &PropensityModel, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    model.predict_probs(features)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpwWeights {
    pub weights: Tensor3,
    /// Units whose own-level propensity was raised to the floor.
    pub truncated_units: Vec<usize>,
}

/// `W[i, ℓ, o] = 1{level_i = ℓ} / max(π̂(ℓ | ·), floor)`, replicated over outcomes.
pub fn ipw_weights(
    probs: &DMatrix<f64>,
    design: &ExposureDesign,
    floor: f64,
    n_outcomes: usize,
) -> Result<IpwWeights> {
    if !(floor > 0.0 && floor < 0.5) {
        return Err(Error::contract(format!("propensity floor must lie in (0, 0.5), got {floor}")));
    }
    check_probs(probs, design)?;
    let mut truncated_units = Vec::new();
    let per_unit: Vec<f64> = (0..design.n_units())
        .map(|i| {
            let p = probs[(i, design.level(i) - 1)];
            if p < floor {
                truncated_units.push(i);
            }
            1.0 / p.max(floor)
        })
        .collect();
    let dims = Dims::new(design.n_units(), design.n_levels(), n_outcomes);
    let weights = Tensor3::from_fn(dims, |i, l, _| {
        if design.level(i) == l + 1 {
            per_unit[i]
        } else {
            0.0
        }
    })?;
    Ok(IpwWeights { weights, truncated_units })
}

/// Apply the truncation floor to every propensity (used by AIPW).
pub fn floor_probs(probs: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    probs.map(|p| p.max(floor))
}

fn check_probs(probs: &DMatrix<f64>, design: &ExposureDesign) -> Result<()> {
    if probs.shape() != (design.n_units(), design.n_levels()) {
        return Err(Error::contract(format!(
            "probability matrix is {}x{}, expected {}x{}",
            probs.nrows(),
            probs.ncols(),
            design.n_units(),
            design.n_levels()
        )));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0 && *p <= 1.0)) {
        return Err(Error::contract("probabilities must lie in [0, 1]"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub level: usize,
    pub pattern: String,
    pub n_at_level: usize,
    pub min: f64,
    pub median: f64,
    pub thresholds: Vec<f64>,
    /// Share of units at this level whose own-level propensity falls below
    /// each threshold.
    pub fraction_below: Vec<f64>,
}

pub const DEFAULT_OVERLAP_THRESHOLDS: [f64; 2] = [0.01, 0.05];

/// Positivity diagnostics per level, over the units assigned to that level.
pub fn overlap_diagnostics(
    probs: &DMatrix<f64>,
    design: &ExposureDesign,
    thresholds: &[f64],
) -> Result<Vec<OverlapRow>> {
    check_probs(probs, design)?;
    if thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::contract("overlap thresholds must be ascending values in (0, 1)"));
    }
    Ok((1..=design.n_levels())
        .map(|level| {
            let own: Vec<f64> = (0..design.n_units())
                .filter(|&i| design.level(i) == level)
                .map(|i| probs[(i, level - 1)])
                .collect();
            let n = own.len();
            let fraction_below = thresholds
                .iter()
                .map(|&t| {
                    if n == 0 {
                        0.0
                    } else {
                        own.iter().filter(|&&p| p < t).count() as f64 / n as f64
                    }
                })
                .collect();
            OverlapRow {
                level,
                pattern: design.pattern_label(level),
                n_at_level: n,
                min: own.iter().copied().fold(f64::INFINITY, f64::min),
                median: stats::median(&own),
                thresholds: thresholds.to_vec(),
                fraction_below,
            }
        })
        .collect())
}

/// Center and scale every column to zero mean and unit (population)
/// variance; constant columns are only centered.
pub fn standardize_columns(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<(f64, f64)>) {
    let mut out = x.clone();
    let mut record = Vec::with_capacity(x.ncols());
    for mut col in out.column_iter_mut() {
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for v in col.iter_mut() {
            *v = (*v - mean) / sd;
        }
        record.push((mean, sd));
    }
    (out, record)
}

pub fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn encode_endpoints_and_paper_mapping() {
        let d = encode_levels(&[[0u8, 0], [1, 1], [1, 0], [0, 1]]).unwrap();
        assert_eq!(d.levels(), &[1, 4, 2, 3]);
        // ℓ = A1 + 2 A2, shifted to start at 1.
        for (a1, a2) in [(0u8, 0u8), (1, 0), (0, 1), (1, 1)] {
            let d = encode_levels(&[[a1, a2]]).unwrap();
            assert_eq!(d.level(0), 1 + a1 as usize + 2 * a2 as usize);
        }
    }

    #[test]
    fn encode_rejects_non_binary() {
        assert!(encode_levels(&[[0u8, 2]]).is_err());
        assert!(encode_levels(&[vec![0u8, 1], vec![1]]).is_err());
    }

    #[test]
    fn encode_decode_exhaustive() {
        for k in 1..=6 {
            let patterns: Vec<Vec<u8>> = (0..(1usize << k))
                .map(|bits| (0..k).map(|j| ((bits >> j) & 1) as u8).collect())
                .collect();
            let d = encode_levels(&patterns).unwrap();
            for (i, p) in patterns.iter().enumerate() {
                assert_eq!(&d.pattern(d.level(i)), p);
            }
            let mut seen = d.levels().to_vec();
            seen.sort_unstable();
            assert_eq!(seen, (1..=(1usize << k)).collect::<Vec<_>>());
        }
    }

    #[test]
    fn mask_has_one_level_per_unit() {
        let d = ExposureDesign::from_levels(2, vec![1, 3, 4]).unwrap();
        let m = d.mask(2).unwrap();
        for i in 0..3 {
            for o in 0..2 {
                let s: f64 = (0..4).map(|l| m.get(i, l, o)).sum();
                assert_eq!(s, 1.0);
            }
        }
    }

    #[test]
    fn zero_coefficients_give_uniform_rows() {
        let model = PropensityModel {
            coefficients: DMatrix::zeros(3, 3),
            baseline_level: 1,
            ridge: 0.0,
            converged: true,
            iterations: 0,
            objective: 0.0,
            trace: vec![],
            separation_warning: false,
        };
        let x = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let p = model.predict_probs(&x).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(model.predict_probs(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn softmax_matches_hand_computation() {
        let coef = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, -0.25, 2.0]);
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, -1.5]);
        let p = softmax_probs(&coef, &x);
        for i in 0..3 {
            let xi = x[(i, 0)];
            let e = [1.0, (0.5 + xi).exp(), (-0.25 + 2.0 * xi).exp()];
            let tot: f64 = e.iter().sum();
            for l in 0..3 {
                assert!((p[(i, l)] - e[l] / tot).abs() < 1e-15);
            }
            assert!((p.row(i).sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        // Adding a constant to every class score (baseline included) is
        // the same as leaving all the non-baseline rows unchanged.
        let coef = DMatrix::from_row_slice(2, 2, &[0.3, -0.4, 1.1, 0.2]);
        let x = DMatrix::from_column_slice(2, 1, &[0.7, -0.2]);
        let s = scores(&coef, &x);
        for i in 0..2 {
            let shifted: Vec<f64> = s.row(i).iter().map(|v| v + 3.7).collect();
            let tot: f64 = shifted.iter().map(|v| v.exp()).sum();
            let p = softmax_probs(&coef, &x);
            for l in 0..3 {
                assert!((p[(i, l)] - shifted[l].exp() / tot).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn intercept_only_balanced() {
        let design = ExposureDesign::from_levels(1, (0..40).map(|i| 1 + i % 2).collect()).unwrap();
        let x = DMatrix::zeros(40, 0);
        let m = fit_multinomial(&x, &design, DEFAULT_RIDGE).unwrap();
        let p = m.predict_probs(&x).unwrap();
        assert!(p.iter().all(|&v| (v - 0.5).abs() < 1e-10));
        assert!(m.converged);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let levels: Vec<usize> = (0..n).map(|_| rng.random_range(1..=4)).collect();
        let coef = DMatrix::from_fn(3, 4, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
        let ridge = 0.3;
        let (_, g) = penalized_loglik(&coef, &x, &levels, ridge);
        let h = 1e-5;
        let mut fd = DMatrix::zeros(3, 4);
        for r in 0..3 {
            for c in 0..4 {
                let mut p = coef.clone();
                p[(r, c)] += h;
                let mut m = coef.clone();
                m[(r, c)] -= h;
                fd[(r, c)] = (penalized_loglik(&p, &x, &levels, ridge).0
                    - penalized_loglik(&m, &x, &levels, ridge).0)
                    / (2.0 * h);
            }
        }
        let rel = (&g - &fd).norm() / fd.norm();
        assert!(rel <= 1e-6, "relative gradient error {rel:e}");
    }

    #[test]
    fn ipw_uniform_and_floor() {
        let design = ExposureDesign::from_levels(2, vec![1, 2, 4]).unwrap();
        let p = DMatrix::from_element(3, 4, 0.25);
        let w = ipw_weights(&p, &design, 0.01, 2).unwrap();
        for i in 0..3 {
            for l in 0..4 {
                let want = if design.level(i) == l + 1 { 4.0 } else { 0.0 };
                assert_eq!(w.weights.get(i, l, 1), want);
            }
        }
        assert!(w.truncated_units.is_empty());

        let mut p = DMatrix::from_element(3, 4, 0.25);
        p[(1, 1)] = 0.002;
        let w = ipw_weights(&p, &design, 0.01, 1).unwrap();
        assert!((w.weights.get(1, 1, 0) - 100.0).abs() < 1e-12);
        assert_eq!(w.truncated_units, vec![1]);

        assert!(ipw_weights(&p, &design, 0.5, 1).is_err());
        assert!(ipw_weights(&p, &design, 0.0, 1).is_err());
    }

    #[test]
    fn overlap_counts() {
        let design = ExposureDesign::from_levels(2, vec![1; 10]).unwrap();
        let p = DMatrix::from_element(10, 4, 0.25);
        let rows = overlap_diagnostics(&p, &design, &DEFAULT_OVERLAP_THRESHOLDS).unwrap();
        assert!(rows.iter().all(|r| r.fraction_below.iter().all(|&f| f == 0.0)));

        let mut p = p;
        p[(3, 0)] = 0.005;
        let rows = overlap_diagnostics(&p, &design, &DEFAULT_OVERLAP_THRESHOLDS).unwrap();
        assert_eq!(rows[0].fraction_below[0], 1.0 / 10.0);
        assert_eq!(rows[0].min, 0.005);
        assert!(overlap_diagnostics(&p, &design, &[0.05, 0.01]).is_err());
    }
}
