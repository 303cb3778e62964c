//! Masked, weighted Tucker loss with a covariate-parameterized unit factor.
//!
//! Parameters are kept in matrix form: the core as its mode-1 unfolding
//! `r1 × (r2·r3)` (column `b + r2·c`), the unit-factor coefficients
//! `B = [η; β]` stacked over the feature matrix `F = [Z | Φ_sel]`, and the
//! level and outcome factors. The unit factor is `U1 = F B`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{Dims, Ranks, Tensor3};

#[derive(Debug, Clone, Copy)]
struct Cell {
    unit: usize,
    /// Column `ℓ + L·o` of the `(ℓ, o)` grid.
    col: usize,
    level: usize,
    outcome: usize,
    y: f64,
    w: f64,
}

/// Observed cells of a tensor with their loss weights.
#[derive(Debug, Clone)]
pub struct Observations {
    dims: Dims,
    cells: Vec<Cell>,
    /// `cells[unit_start[i]..unit_start[i + 1]]` belong to unit `i`.
    unit_start: Vec<usize>,
    n_obs: usize,
}

impl Observations {
    /// Cells with `mask == 1`; the weight of a cell is its entry in
    /// `weights` (1 when absent). Zero-weight cells are dropped from the loss
    /// but still count as observed.
    pub fn new(y: &Tensor3, mask: &Tensor3, weights: Option<&Tensor3>) -> Result<Self> {
        let dims = y.dims();
        if mask.dims() != dims {
            return Err(Error::contract(format!(
                "mask dims {:?} differ from data dims {:?}",
                mask.dims(),
                dims
            )));
        }
        if let Some(w) = weights {
            if w.dims() != dims {
                return Err(Error::contract(format!(
                    "weight dims {:?} differ from data dims {:?}",
                    w.dims(),
                    dims
                )));
            }
        }
        let mut cells = Vec::new();
        let mut unit_start = Vec::with_capacity(dims.units + 1);
        let mut n_obs = 0;
        for i in 0..dims.units {
            unit_start.push(cells.len());
            for o in 0..dims.outcomes {
                for l in 0..dims.levels {
                    let m = mask.get(i, l, o);
                    let w = weights.map_or(1.0, |w| w.get(i, l, o));
                    if m != 0.0 && m != 1.0 {
                        return Err(Error::contract(format!("mask entry ({i}, {l}, {o}) = {m} is not 0/1")));
                    }
                    if w < 0.0 {
                        return Err(Error::contract(format!("negative weight at ({i}, {l}, {o})")));
                    }
                    if m == 0.0 {
                        if w != 0.0 && weights.is_some() {
                            return Err(Error::contract(format!(
                                "weight at unobserved cell ({i}, {l}, {o}) must be 0"
                            )));
                        }
                        continue;
                    }
                    n_obs += 1;
                    if w > 0.0 {
                        cells.push(Cell {
                            unit: i,
                            col: l + dims.levels * o,
                            level: l,
                            outcome: o,
                            y: y.get(i, l, o),
                            w,
                        });
                    }
                }
            }
        }
        unit_start.push(cells.len());
        if n_obs == 0 || cells.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(Observations { dims, cells, unit_start, n_obs })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Number of observed cells (mask == 1).
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// `Σ w y²`, the loss of the all-zero model.
    pub fn weighted_energy(&self) -> f64 {
        self.cells.iter().map(|c| c.w * c.y * c.y).sum()
    }

    fn unit_cells(&self, i: usize) -> &[Cell] {
        &self.cells[self.unit_start[i]..self.unit_start[i + 1]]
    }
}

/// Free parameters of the spatial Tucker model.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// Mode-1 unfolding of the core, `r1 × (r2·r3)`.
    pub core: DMatrix<f64>,
    /// `[η; β]`, one row per feature column.
    pub coef: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub u3: DMatrix<f64>,
}

impl Params {
    pub fn ranks(&self) -> Ranks {
        Ranks::new(self.core.nrows(), self.u2.ncols(), self.u3.ncols())
    }

    pub fn core_tensor(&self) -> Result<Tensor3> {
        let r = self.ranks();
        Tensor3::refold(&self.core, crate::tensor::Mode::Unit, r.as_dims())
    }

    fn check(&self, obs: &Observations, features: &DMatrix<f64>) -> Result<()> {
        let r = self.ranks();
        let d = obs.dims();
        let ok = self.core.ncols() == r.level * r.outcome
            && self.coef.nrows() == features.ncols()
            && self.coef.ncols() == r.unit
            && features.nrows() == d.units
            && self.u2.nrows() == d.levels
            && self.u3.nrows() == d.outcomes;
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "parameter shapes inconsistent with {}x{}x{} data and {} feature columns",
                d.units,
                d.levels,
                d.outcomes,
                features.ncols()
            )))
        }
    }
}

/// `V[ℓ + L·o, b + r2·c] = U2[ℓ, b] · U3[o, c]`.
fn level_outcome_design(u2: &DMatrix<f64>, u3: &DMatrix<f64>) -> DMatrix<f64> {
    u3.kronecker(u2)
}

struct Eval {
    u1: DMatrix<f64>,
    /// `M = G₁ Vᵀ`, `r1 × (L·O)`: the unit-factor loadings of each cell column.
    m: DMatrix<f64>,
}

impl Eval {
    fn new(features: &DMatrix<f64>, p: &Params) -> Self {
        let u1 = features * &p.coef;
        let v = level_outcome_design(&p.u2, &p.u3);
        let m = &p.core * v.transpose();
        Eval { u1, m }
    }

    #[inline]
    fn predict(&self, unit: usize, col: usize) -> f64 {
        self.u1.row(unit).transpose().dot(&self.m.column(col))
    }
}

/// `Σ w (y − ŷ)²` over the observed cells.
pub fn objective(obs: &Observations, features: &DMatrix<f64>, p: &Params) -> Result<f64> {
    p.check(obs, features)?;
    Ok(objective_unchecked(obs, features, p))
}

fn objective_unchecked(obs: &Observations, features: &DMatrix<f64>, p: &Params) -> f64 {
    let e = Eval::new(features, p);
    obs.cells
        .iter()
        .map(|c| {
            let r = c.y - e.predict(c.unit, c.col);
            c.w * r * r
        })
        .sum()
}

/// Gradient of [`objective`] with respect to every parameter block.
pub fn gradient(obs: &Observations, features: &DMatrix<f64>, p: &Params) -> Result<Params> {
    p.check(obs, features)?;
    let r = p.ranks();
    let d = obs.dims();
    let e = Eval::new(features, p);
    let q = &e.u1 * &p.core; // N × (r2·r3)
    let mut a = DMatrix::<f64>::zeros(r.unit, d.levels * d.outcomes);
    let mut gu1 = DMatrix::zeros(d.units, r.unit);
    let mut gu2 = DMatrix::zeros(d.levels, r.level);
    let mut gu3 = DMatrix::zeros(d.outcomes, r.outcome);
    for c in &obs.cells {
        let g = -2.0 * c.w * (c.y - e.predict(c.unit, c.col));
        for k in 0..r.unit {
            a[(k, c.col)] += g * e.u1[(c.unit, k)];
            gu1[(c.unit, k)] += g * e.m[(k, c.col)];
        }
        for b in 0..r.level {
            for cc in 0..r.outcome {
                let qv = q[(c.unit, b + r.level * cc)];
                gu2[(c.level, b)] += g * qv * p.u3[(c.outcome, cc)];
                gu3[(c.outcome, cc)] += g * qv * p.u2[(c.level, b)];
            }
        }
    }
    let v = level_outcome_design(&p.u2, &p.u3);
    Ok(Params {
        core: a * v,
        coef: features.transpose() * gu1,
        u2: gu2,
        u3: gu3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Block {
    Core,
    Coef,
    Level,
    Outcome,
}

pub(crate) const BLOCKS: [Block; 4] = [Block::Core, Block::Coef, Block::Level, Block::Outcome];

/// Minimizer of the loss over one block with the others held fixed
/// (the loss is quadratic in each block).
pub(crate) fn block_minimizer(
    obs: &Observations,
    features: &DMatrix<f64>,
    p: &Params,
    block: Block,
    damping: f64,
) -> Option<DMatrix<f64>> {
    let r = p.ranks();
    let d = obs.dims();
    let e = Eval::new(features, p);
    match block {
        Block::Core => {
            let cols = d.levels * d.outcomes;
            let r23 = r.level * r.outcome;
            let mut s = vec![DMatrix::<f64>::zeros(r.unit, r.unit); cols];
            let mut rhs_cols = DMatrix::zeros(r.unit, cols);
            for c in &obs.cells {
                let u = e.u1.row(c.unit);
                let sc = &mut s[c.col];
                for a in 0..r.unit {
                    rhs_cols[(a, c.col)] += c.w * c.y * u[a];
                    for b in 0..r.unit {
                        sc[(a, b)] += c.w * u[a] * u[b];
                    }
                }
            }
            let v = level_outcome_design(&p.u2, &p.u3);
            let rhs = rhs_cols * &v;
            let n = r.unit * r23;
            let mut h = DMatrix::zeros(n, n);
            for (col, sc) in s.iter().enumerate() {
                for j in 0..r23 {
                    for jj in 0..r23 {
                        let vv = v[(col, j)] * v[(col, jj)];
                        if vv == 0.0 {
                            continue;
                        }
                        for a in 0..r.unit {
                            for b in 0..r.unit {
                                h[(a + r.unit * j, b + r.unit * jj)] += vv * sc[(a, b)];
                            }
                        }
                    }
                }
            }
            let g = DMatrix::from_column_slice(n, 1, rhs.as_slice());
            let x = linalg::solve_psd(&h, &g, damping)?;
            Some(DMatrix::from_column_slice(r.unit, r23, x.as_slice()))
        }
        Block::Coef => {
            let nf = features.ncols();
            // Per-unit r1 × r1 curvature and right-hand side.
            let mut t = vec![DMatrix::<f64>::zeros(r.unit, r.unit); d.units];
            let mut rhs_u = DMatrix::zeros(d.units, r.unit);
            for i in 0..d.units {
                for c in obs.unit_cells(i) {
                    let mc = e.m.column(c.col);
                    for a in 0..r.unit {
                        rhs_u[(i, a)] += c.w * c.y * mc[a];
                        for b in 0..r.unit {
                            t[i][(a, b)] += c.w * mc[a] * mc[b];
                        }
                    }
                }
            }
            let rhs = features.transpose() * rhs_u;
            let n = nf * r.unit;
            let mut h = DMatrix::zeros(n, n);
            for a in 0..r.unit {
                for b in a..r.unit {
                    let mut scaled = features.clone();
                    for (i, mut row) in scaled.row_iter_mut().enumerate() {
                        row *= t[i][(a, b)];
                    }
                    let blk = features.transpose() * scaled;
                    h.view_mut((a * nf, b * nf), (nf, nf)).copy_from(&blk);
                    if a != b {
                        h.view_mut((b * nf, a * nf), (nf, nf)).copy_from(&blk.transpose());
                    }
                }
            }
            let g = DMatrix::from_column_slice(n, 1, rhs.as_slice());
            let x = linalg::solve_psd(&h, &g, damping)?;
            Some(DMatrix::from_column_slice(nf, r.unit, x.as_slice()))
        }
        Block::Level | Block::Outcome => {
            let level = block == Block::Level;
            let (rows, rank) = if level { (d.levels, r.level) } else { (d.outcomes, r.outcome) };
            let q = &e.u1 * &p.core;
            let mut hs = vec![DMatrix::<f64>::zeros(rank, rank); rows];
            let mut gs = vec![DMatrix::<f64>::zeros(rank, 1); rows];
            let mut z = DVector::zeros(rank);
            for c in &obs.cells {
                // Loading of this cell on the free factor row.
                z.fill(0.0);
                for b in 0..r.level {
                    for cc in 0..r.outcome {
                        let qv = q[(c.unit, b + r.level * cc)];
                        if level {
                            z[b] += qv * p.u3[(c.outcome, cc)];
                        } else {
                            z[cc] += qv * p.u2[(c.level, b)];
                        }
                    }
                }
                let row = if level { c.level } else { c.outcome };
                hs[row].ger(c.w, &z, &z, 1.0);
                for k in 0..rank {
                    gs[row][(k, 0)] += c.w * c.y * z[k];
                }
            }
            let mut out = DMatrix::zeros(rows, rank);
            for row in 0..rows {
                let x = linalg::solve_psd(&hs[row], &gs[row], damping)?;
                for k in 0..rank {
                    out[(row, k)] = x[(k, 0)];
                }
            }
            Some(out)
        }
    }
}

fn with_block(p: &Params, block: Block, value: DMatrix<f64>) -> Params {
    let mut out = p.clone();
    match block {
        Block::Core => out.core = value,
        Block::Coef => out.coef = value,
        Block::Level => out.u2 = value,
        Block::Outcome => out.u3 = value,
    }
    out
}

fn block_of(p: &Params, block: Block) -> &DMatrix<f64> {
    match block {
        Block::Core => &p.core,
        Block::Coef => &p.coef,
        Block::Level => &p.u2,
        Block::Outcome => &p.u3,
    }
}

/// Re-orthonormalize `U2` (or `U3`) by QR and absorb the triangular factor
/// into the core, leaving every prediction unchanged.
pub(crate) fn retract(p: &mut Params, block: Block) {
    let r = p.ranks();
    match block {
        Block::Level => {
            let (q, rr) = linalg::thin_qr(&p.u2);
            let mut core = DMatrix::zeros(r.unit, r.level * r.outcome);
            for c in 0..r.outcome {
                let src = p.core.columns(r.level * c, r.level);
                core.columns_mut(r.level * c, r.level).copy_from(&(src * rr.transpose()));
            }
            p.u2 = q;
            p.core = core;
        }
        Block::Outcome => {
            let (q, rr) = linalg::thin_qr(&p.u3);
            let mut core = DMatrix::zeros(r.unit, r.level * r.outcome);
            for c in 0..r.outcome {
                for cp in 0..r.outcome {
                    let f = rr[(c, cp)];
                    if f == 0.0 {
                        continue;
                    }
                    for b in 0..r.level {
                        let src = p.core.column(b + r.level * cp) * f;
                        let mut dst = core.column_mut(b + r.level * c);
                        dst += src;
                    }
                }
            }
            p.u3 = q;
            p.core = core;
        }
        Block::Core | Block::Coef => {}
    }
}

/// How each block step is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Newton step on the block (its exact minimizer), guarded by backtracking.
    Preconditioned,
    /// Plain gradient step with Barzilai–Borwein-style adaptive length and
    /// Armijo backtracking.
    Gradient,
}

#[derive(Debug, Clone)]
pub(crate) struct InnerConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub rule: StepRule,
    pub damping: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct InnerFit {
    pub params: Params,
    pub objective: f64,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

const MAX_HALVINGS: usize = 40;

/// Block-coordinate descent to a relative objective change of `cfg.tol`.
pub(crate) fn descend(
    obs: &Observations,
    features: &DMatrix<f64>,
    init: Params,
    cfg: &InnerConfig,
) -> Result<InnerFit> {
    init.check(obs, features)?;
    let mut p = init;
    let mut f = objective_unchecked(obs, features, &p);
    if !f.is_finite() {
        return Err(Error::NonFinite { iteration: 0, context: "initial spgd objective".into() });
    }
    let energy = obs.weighted_energy().max(f64::MIN_POSITIVE);
    let floor = 1e-28 * energy;
    // Round-off in a sum of squares is relative to the data energy.
    let slack = 1e-12 * energy;
    let mut trace = vec![f];
    let mut steps = [1.0f64; 4];
    let mut converged = f <= floor;
    let mut iterations = 0;
    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let f_prev = f;
        for (bi, &block) in BLOCKS.iter().enumerate() {
            let (np, nf) = block_step(obs, features, &p, f, block, cfg, &mut steps[bi]);
            p = np;
            f = nf;
            if matches!(block, Block::Level | Block::Outcome) {
                retract(&mut p, block);
            }
        }
        f = objective_unchecked(obs, features, &p);
        if !f.is_finite() {
            return Err(Error::NonFinite { iteration: iterations, context: "spgd block update".into() });
        }
        debug_assert!(
            f <= f_prev * (1.0 + 1e-10) + slack,
            "objective increased from {f_prev} to {f} at iteration {iterations}"
        );
        trace.push(f);
        let rel = (f_prev - f) / f_prev.max(f64::MIN_POSITIVE);
        converged = f <= floor || rel.abs() <= cfg.tol;
    }
    Ok(InnerFit { params: p, objective: f, trace, converged, iterations })
}

fn block_step(
    obs: &Observations,
    features: &DMatrix<f64>,
    p: &Params,
    f: f64,
    block: Block,
    cfg: &InnerConfig,
    step: &mut f64,
) -> (Params, f64) {
    let current = block_of(p, block);
    match cfg.rule {
        StepRule::Preconditioned => {
            let Some(target) = block_minimizer(obs, features, p, block, cfg.damping) else {
                return (p.clone(), f);
            };
            let dir = target - current;
            let mut t = 1.0;
            for _ in 0..MAX_HALVINGS {
                let trial = with_block(p, block, current + &dir * t);
                let ft = objective_unchecked(obs, features, &trial);
                if ft <= f {
                    return (trial, ft);
                }
                t *= 0.5;
            }
            (p.clone(), f)
        }
        StepRule::Gradient => {
            let Ok(g) = gradient(obs, features, p) else {
                return (p.clone(), f);
            };
            let g = block_of(&g, block).clone();
            let g2 = g.norm_squared();
            if g2 == 0.0 {
                return (p.clone(), f);
            }
            let mut t = *step;
            for _ in 0..MAX_HALVINGS {
                let trial = with_block(p, block, current - &g * t);
                let ft = objective_unchecked(obs, features, &trial);
                if ft <= f - 1e-4 * t * g2 {
                    *step = t * 2.0;
                    return (trial, ft);
                }
                t *= 0.5;
            }
            *step = t;
            (p.clone(), f)
        }
    }
}

/// Prediction `ŷ` for every `(ℓ, o)` of the given unit-factor rows.
pub(crate) fn predict_rows(u1: &DMatrix<f64>, p: &Params, levels: usize, outcomes: usize) -> Result<Tensor3> {
    let v = level_outcome_design(&p.u2, &p.u3);
    let m = &p.core * v.transpose();
    let full = u1 * m; // N × (L·O), column ℓ + L·o
    Tensor3::from_vec(Dims::new(u1.nrows(), levels, outcomes), full.as_slice().to_vec())
}

/// Mean-filled copy of `y`: unobserved cells take the observed mean of
/// their `(ℓ, o)` column, or the global observed mean if the column is empty.
pub(crate) fn mean_fill(y: &Tensor3, mask: &Tensor3) -> Result<Tensor3> {
    let d = y.dims();
    let mut sums = vec![(0.0, 0usize); d.levels * d.outcomes];
    let (mut gs, mut gn) = (0.0, 0usize);
    for o in 0..d.outcomes {
        for l in 0..d.levels {
            for i in 0..d.units {
                if mask.get(i, l, o) != 0.0 {
                    let v = y.get(i, l, o);
                    sums[l + d.levels * o].0 += v;
                    sums[l + d.levels * o].1 += 1;
                    gs += v;
                    gn += 1;
                }
            }
        }
    }
    let global = if gn > 0 { gs / gn as f64 } else { 0.0 };
    Tensor3::from_fn(d, |i, l, o| {
        if mask.get(i, l, o) != 0.0 {
            y.get(i, l, o)
        } else {
            let (s, n) = sums[l + d.levels * o];
            if n > 0 {
                s / n as f64
            } else {
                global
            }
        }
    })
}
