//! Dense three-way tensors and the Tucker algebra built on them.
//!
//! A [`Tensor3`] of dims `(N, L, O)` stores its entries in one flat buffer
//! with the first (unit) index varying fastest, then the level index, then
//! the outcome index:
//!
//! ```text
//! offset(i, l, o) = i + N * (l + L * o)
//! ```
//!
//! Unfoldings follow the same convention. The mode-k unfolding places the
//! mode-k fibers as columns and orders the columns by the two remaining
//! indices with the earlier index varying fastest:
//!
//! | mode | shape       | column of entry (i, l, o) |
//! |------|-------------|---------------------------|
//! | 1    | N × (L·O)   | `l + L * o`               |
//! | 2    | L × (N·O)   | `i + N * o`               |
//! | 3    | O × (N·L)   | `i + N * l`               |
//!
//! so that `refold(unfold(t, k), k, t.dims())` reproduces `t` exactly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Tensor mode; `Unit` = mode 1, `Level` = mode 2, `Outcome` = mode 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Unit,
    Level,
    Outcome,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Unit, Mode::Level, Mode::Outcome];

    pub fn index(self) -> usize {
        match self {
            Mode::Unit => 1,
            Mode::Level => 2,
            Mode::Outcome => 3,
        }
    }
}

impl TryFrom<usize> for Mode {
    type Error = Error;

    fn try_from(k: usize) -> Result<Self> {
        match k {
            1 => Ok(Mode::Unit),
            2 => Ok(Mode::Level),
            3 => Ok(Mode::Outcome),
            _ => Err(Error::contract(format!("tensor mode must be 1, 2 or 3, got {k}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub units: usize,
    pub levels: usize,
    pub outcomes: usize,
}

impl Dims {
    pub fn new(units: usize, levels: usize, outcomes: usize) -> Self {
        Dims { units, levels, outcomes }
    }

    pub fn len(&self) -> usize {
        self.units * self.levels * self.outcomes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, mode: Mode) -> usize {
        match mode {
            Mode::Unit => self.units,
            Mode::Level => self.levels,
            Mode::Outcome => self.outcomes,
        }
    }

    fn with(mut self, mode: Mode, size: usize) -> Self {
        match mode {
            Mode::Unit => self.units = size,
            Mode::Level => self.levels = size,
            Mode::Outcome => self.outcomes = size,
        }
        self
    }

    fn validate(&self) -> Result<()> {
        if self.units == 0 || self.levels == 0 || self.outcomes == 0 {
            return Err(Error::contract(format!(
                "tensor dims must all be >= 1, got ({}, {}, {})",
                self.units, self.levels, self.outcomes
            )));
        }
        Ok(())
    }
}

/// Dense real tensor over (unit × exposure level × outcome).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: Dims) -> Result<Self> {
        dims.validate()?;
        Ok(Tensor3 { data: vec![0.0; dims.len()], dims })
    }

    pub fn filled(dims: Dims, value: f64) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        t.data.iter_mut().for_each(|v| *v = value);
        t.check_finite()?;
        Ok(t)
    }

    /// Wrap a buffer laid out in canonical (unit-fastest) order.
    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::contract(format!(
                "buffer of length {} does not match dims {}x{}x{}",
                data.len(),
                dims.units,
                dims.levels,
                dims.outcomes
            )));
        }
        let t = Tensor3 { dims, data };
        t.check_finite()?;
        Ok(t)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        for o in 0..dims.outcomes {
            for l in 0..dims.levels {
                for i in 0..dims.units {
                    let idx = t.offset(i, l, o);
                    t.data[idx] = f(i, l, o);
                }
            }
        }
        t.check_finite()?;
        Ok(t)
    }

    fn check_finite(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite tensor entry at offset {pos}")));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, l: usize, o: usize) -> usize {
        i + self.dims.units * (l + self.dims.levels * o)
    }

    #[inline]
    pub fn get(&self, i: usize, l: usize, o: usize) -> f64 {
        self.data[self.offset(i, l, o)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, l: usize, o: usize, v: f64) {
        let idx = self.offset(i, l, o);
        self.data[idx] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Tensor3> {
        Tensor3::from_vec(self.dims, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: f64) -> Result<Tensor3> {
        self.map(|v| v * c)
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        self.same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Tensor3::from_vec(self.dims, data)
    }

    fn same_dims(&self, other: &Tensor3) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::contract(format!(
                "tensor dims differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Mode-k unfolding; see the module docs for the column order.
    pub fn unfold(&self, mode: Mode) -> DMatrix<f64> {
        let Dims { units: n, levels: l, outcomes: o } = self.dims;
        match mode {
            // Column-major storage of the mode-1 unfolding is the raw buffer.
            Mode::Unit => DMatrix::from_column_slice(n, l * o, &self.data),
            Mode::Level => DMatrix::from_fn(l, n * o, |row, col| {
                let (i, oo) = (col % n, col / n);
                self.get(i, row, oo)
            }),
            Mode::Outcome => DMatrix::from_fn(o, n * l, |row, col| {
                let (i, ll) = (col % n, col / n);
                self.get(i, ll, row)
            }),
        }
    }

    pub fn unfold_k(&self, mode: usize) -> Result<DMatrix<f64>> {
        Ok(self.unfold(Mode::try_from(mode)?))
    }

    /// Inverse of [`Tensor3::unfold`].
    pub fn refold(m: &DMatrix<f64>, mode: Mode, dims: Dims) -> Result<Tensor3> {
        dims.validate()?;
        let rows = dims.get(mode);
        let cols = dims.len() / rows;
        if m.shape() != (rows, cols) {
            return Err(Error::contract(format!(
                "cannot refold a {}x{} matrix along mode {} into dims ({}, {}, {}); expected {}x{}",
                m.nrows(),
                m.ncols(),
                mode.index(),
                dims.units,
                dims.levels,
                dims.outcomes,
                rows,
                cols
            )));
        }
        let n = dims.units;
        let t = match mode {
            Mode::Unit => Tensor3::from_vec(dims, m.as_slice().to_vec())?,
            Mode::Level => Tensor3::from_fn(dims, |i, ll, oo| m[(ll, i + n * oo)])?,
            Mode::Outcome => Tensor3::from_fn(dims, |i, ll, oo| m[(oo, i + n * ll)])?,
        };
        Ok(t)
    }

    /// `self ×_k m`: replaces mode k (size `m.ncols()`) by `m.nrows()`.
    pub fn mode_product(&self, m: &DMatrix<f64>, mode: Mode) -> Result<Tensor3> {
        let size = self.dims.get(mode);
        if m.ncols() != size {
            return Err(Error::contract(format!(
                "mode-{} product needs a matrix with {} columns, got {}x{}",
                mode.index(),
                size,
                m.nrows(),
                m.ncols()
            )));
        }
        let out_dims = self.dims.with(mode, m.nrows());
        let prod = m * self.unfold(mode);
        Tensor3::refold(&prod, mode, out_dims)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn inner_product(&self, other: &Tensor3) -> Result<f64> {
        self.same_dims(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Frobenius norm of `self - other` relative to the norm of `other`.
    pub fn relative_error(&self, other: &Tensor3) -> Result<f64> {
        let diff = self.sub(other)?.frobenius_norm();
        let base = other.frobenius_norm();
        Ok(if base == 0.0 { diff } else { diff / base })
    }
}

pub fn frobenius_norm(t: &Tensor3) -> f64 {
    t.frobenius_norm()
}

pub fn inner_product(a: &Tensor3, b: &Tensor3) -> Result<f64> {
    a.inner_product(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ranks {
    pub unit: usize,
    pub level: usize,
    pub outcome: usize,
}

impl Ranks {
    pub fn new(unit: usize, level: usize, outcome: usize) -> Self {
        Ranks { unit, level, outcome }
    }

    pub fn core_size(&self) -> usize {
        self.unit * self.level * self.outcome
    }

    pub fn total(&self) -> usize {
        self.unit + self.level + self.outcome
    }

    pub fn as_dims(&self) -> Dims {
        Dims::new(self.unit, self.level, self.outcome)
    }

    pub fn validate_within(&self, dims: Dims) -> Result<()> {
        let ok = (1..=dims.units).contains(&self.unit)
            && (1..=dims.levels).contains(&self.level)
            && (1..=dims.outcomes).contains(&self.outcome);
        if !ok {
            return Err(Error::contract(format!(
                "ranks ({}, {}, {}) must lie within dims ({}, {}, {}) and be >= 1",
                self.unit, self.level, self.outcome, dims.units, dims.levels, dims.outcomes
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Ranks {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.unit, self.level, self.outcome)
    }
}

/// Core tensor and the three factor matrices of a Tucker model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuckerFactors {
    pub core: Tensor3,
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub u3: DMatrix<f64>,
}

impl TuckerFactors {
    pub fn new(core: Tensor3, u1: DMatrix<f64>, u2: DMatrix<f64>, u3: DMatrix<f64>) -> Result<Self> {
        let f = TuckerFactors { core, u1, u2, u3 };
        f.validate()?;
        Ok(f)
    }

    pub fn ranks(&self) -> Ranks {
        let d = self.core.dims();
        Ranks::new(d.units, d.levels, d.outcomes)
    }

    pub fn output_dims(&self) -> Dims {
        Dims::new(self.u1.nrows(), self.u2.nrows(), self.u3.nrows())
    }

    fn validate(&self) -> Result<()> {
        let r = self.ranks();
        let dims = self.output_dims();
        if self.u1.ncols() != r.unit || self.u2.ncols() != r.level || self.u3.ncols() != r.outcome {
            return Err(Error::contract(format!(
                "factor column counts ({}, {}, {}) do not match core dims {}",
                self.u1.ncols(),
                self.u2.ncols(),
                self.u3.ncols(),
                r
            )));
        }
        dims.validate()?;
        r.validate_within(dims)
    }

    /// `core ×₁ U1 ×₂ U2 ×₃ U3`.
    pub fn reconstruct(&self) -> Result<Tensor3> {
        self.validate()?;
        self.core
            .mode_product(&self.u1, Mode::Unit)?
            .mode_product(&self.u2, Mode::Level)?
            .mode_product(&self.u3, Mode::Outcome)
    }
}

pub fn tucker_reconstruct(f: &TuckerFactors) -> Result<Tensor3> {
    f.reconstruct()
}

/// Truncated higher-order SVD.
///
/// Each factor holds the leading left singular vectors of the matching
/// unfolding; the core is the projection of `t` onto them.
pub fn hosvd(t: &Tensor3, ranks: Ranks) -> Result<TuckerFactors> {
    ranks.validate_within(t.dims())?;
    let u1 = linalg::leading_left_singular_vectors(&t.unfold(Mode::Unit), ranks.unit);
    let u2 = linalg::leading_left_singular_vectors(&t.unfold(Mode::Level), ranks.level);
    let u3 = linalg::leading_left_singular_vectors(&t.unfold(Mode::Outcome), ranks.outcome);
    let core = t
        .mode_product(&u1.transpose(), Mode::Unit)?
        .mode_product(&u2.transpose(), Mode::Level)?
        .mode_product(&u3.transpose(), Mode::Outcome)?;
    TuckerFactors::new(core, u1, u2, u3)
}
