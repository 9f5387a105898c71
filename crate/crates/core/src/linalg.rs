//! Dense row-major matrices and the batched SKAN edge kernels.
//!
//! A SKAN layer with parameters `K[out × in]` maps a batch `X[batch × in]` to
//! `Y[b][j] = Σ_i f(K[j][i], X[b][i])`. Every reduction runs in ascending
//! index order, so repeated calls give bit-identical results and the kernels
//! agree exactly with a naive triple loop.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SkanError};
use crate::sfunc::SFuncKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = SkanError;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SkanError::dim(
                "Matrix::from_vec",
                format!("{} elements ({rows}x{cols})", rows * cols),
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(SkanError::dim("Matrix::from_rows", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).take(self.rows).map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &r in indices {
            data.extend_from_slice(self.row(r));
        }
        Matrix { rows: indices.len(), cols: self.cols, data }
    }

    pub(crate) fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }
}

fn debug_check_finite(op: &str, m: &Matrix) {
    debug_assert!(m.is_finite(), "{op} produced a non-finite value");
}

fn check_layer_shapes(op: &'static str, k: &Matrix, x: &Matrix) -> Result<()> {
    if k.cols != x.cols {
        return Err(SkanError::dim(op, format!("input width {}", k.cols), format!("input width {}", x.cols)));
    }
    Ok(())
}

/// Per-sample precomputation shared by all output units of a layer.
///
/// For LSin/LCos the basis value `sin(x)` / `cos(x)` does not depend on `k`,
/// so it is computed once per input. For LSin and LArctan `f(k, 0) = ±0` and
/// `∂f/∂k(k, 0) = ±0`; those inputs contribute nothing to `Y` or `dK` and are
/// left out of `active`. Adding `±0` to an accumulator that started at `+0`
/// never changes it, so the result stays bit-identical to the dense loop.
struct RowPrep {
    basis: Vec<f64>,
    active: Vec<usize>,
}

impl RowPrep {
    fn new() -> Self {
        RowPrep { basis: Vec::new(), active: Vec::new() }
    }

    fn load(&mut self, kind: SFuncKind, x: &[f64]) {
        self.basis.clear();
        self.active.clear();
        match kind {
            SFuncKind::LSin => {
                self.basis.extend(x.iter().map(|v| v.sin()));
                self.active.extend((0..x.len()).filter(|&i| x[i] != 0.0));
            }
            SFuncKind::LCos => {
                self.basis.extend(x.iter().map(|v| v.cos()));
                self.active.extend(0..x.len());
            }
            SFuncKind::LArctan => {
                self.basis.extend_from_slice(x);
                self.active.extend((0..x.len()).filter(|&i| x[i] != 0.0));
            }
        }
    }
}

/// `Y[b][j] = Σ_i f(K[j][i], X[b][i])`, ascending `i`.
pub fn skan_forward_kernel(kind: SFuncKind, k: &Matrix, x: &Matrix) -> Result<Matrix> {
    check_layer_shapes("skan_forward_kernel", k, x)?;
    let mut y = Matrix::zeros(x.rows, k.rows);
    let mut prep = RowPrep::new();
    for b in 0..x.rows {
        prep.load(kind, x.row(b));
        let y_row = y.row_mut(b);
        for (j, out) in y_row.iter_mut().enumerate() {
            let k_row = k.row(j);
            let mut acc = 0.0;
            match kind {
                SFuncKind::LSin | SFuncKind::LCos => {
                    for &i in &prep.active {
                        acc += k_row[i] * prep.basis[i];
                    }
                }
                SFuncKind::LArctan => {
                    for &i in &prep.active {
                        acc += (k_row[i] * prep.basis[i]).atan();
                    }
                }
            }
            *out = acc;
        }
    }
    debug_check_finite("skan_forward_kernel", &y);
    Ok(y)
}

/// Gradients of a layer given `G = ∂Loss/∂Y`.
///
/// `dK[j][i] = Σ_b G[b][j] · ∂f/∂k(K[j][i], X[b][i])` (ascending `b`) and
/// `dX[b][i] = Σ_j G[b][j] · ∂f/∂x(K[j][i], X[b][i])` (ascending `j`).
pub fn skan_backward_kernel(kind: SFuncKind, k: &Matrix, x: &Matrix, g: &Matrix) -> Result<(Matrix, Matrix)> {
    let mut dx = Matrix::zeros(x.rows, x.cols);
    let dk = backward_into(kind, k, x, g, Some(&mut dx))?;
    Ok((dk, dx))
}

/// Parameter gradient only; skips the input gradient entirely.
pub fn skan_param_grad_kernel(kind: SFuncKind, k: &Matrix, x: &Matrix, g: &Matrix) -> Result<Matrix> {
    backward_into(kind, k, x, g, None)
}

fn backward_into(kind: SFuncKind, k: &Matrix, x: &Matrix, g: &Matrix, mut dx: Option<&mut Matrix>) -> Result<Matrix> {
    const OP: &str = "skan_backward_kernel";
    check_layer_shapes(OP, k, x)?;
    if g.shape() != (x.rows, k.rows) {
        return Err(SkanError::dim(
            OP,
            format!("upstream gradient {}x{}", x.rows, k.rows),
            format!("{}x{}", g.rows, g.cols),
        ));
    }
    let n_in = k.cols;
    let mut dk = Matrix::zeros(k.rows, k.cols);
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(0.0);
    }
    let mut prep = RowPrep::new();
    for b in 0..x.rows {
        let x_row = x.row(b);
        let g_row = g.row(b);
        prep.load(kind, x_row);
        match (kind, dx.as_deref_mut()) {
            (SFuncKind::LSin | SFuncKind::LCos, dx) => {
                for (j, &gj) in g_row.iter().enumerate() {
                    let dk_row = &mut dk.data[j * n_in..(j + 1) * n_in];
                    for &i in &prep.active {
                        dk_row[i] += gj * prep.basis[i];
                    }
                }
                if let Some(dx) = dx {
                    let dx_row = dx.row_mut(b);
                    for (j, &gj) in g_row.iter().enumerate() {
                        let k_row = k.row(j);
                        for i in 0..n_in {
                            dx_row[i] += gj * kind.grad_unchecked(k_row[i], x_row[i]).1;
                        }
                    }
                }
            }
            (SFuncKind::LArctan, None) => {
                for (j, &gj) in g_row.iter().enumerate() {
                    let k_row = k.row(j);
                    let dk_row = &mut dk.data[j * n_in..(j + 1) * n_in];
                    for &i in &prep.active {
                        dk_row[i] += gj * kind.grad_unchecked(k_row[i], x_row[i]).0;
                    }
                }
            }
            (SFuncKind::LArctan, Some(dx)) => {
                let dx_row = dx.row_mut(b);
                for (j, &gj) in g_row.iter().enumerate() {
                    let k_row = k.row(j);
                    let dk_row = &mut dk.data[j * n_in..(j + 1) * n_in];
                    for i in 0..n_in {
                        let (gk, gx) = kind.grad_unchecked(k_row[i], x_row[i]);
                        dk_row[i] += gj * gk;
                        dx_row[i] += gj * gx;
                    }
                }
            }
        }
    }
    debug_check_finite(OP, &dk);
    if let Some(dx) = dx {
        debug_check_finite(OP, dx);
    }
    Ok(dk)
}
