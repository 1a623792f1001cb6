//! Dense row-major f64 matrices and deterministic matrix products.
//!
//! Every matrix product partitions the *output* rows into fixed-size blocks
//! and computes each block with a single `dgemm` call. Blocks have disjoint
//! outputs, so results are bit-identical no matter how many worker threads
//! execute them — the block layout depends only on the shapes.

use super::AdError;
use rayon::prelude::*;

/// Rows per GEMM block. Fixed: changing it would change rounding.
const ROW_BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor, AdError> {
        if data.len() != rows * cols {
            return Err(AdError::DataLength {
                got: data.len(),
                rows,
                cols,
            });
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single entry of a 1x1 tensor.
    pub fn scalar_value(&self) -> f64 {
        assert!(
            self.rows == 1 && self.cols == 1,
            "scalar_value on {}x{} tensor",
            self.rows,
            self.cols
        );
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise combine; shapes must already agree.
    pub fn zip_map(&self, o: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape(), o.shape());
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&o.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_in_place(&mut self, o: &Tensor) {
        debug_assert_eq!(self.shape(), o.shape());
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Same data, new shape (row-major order preserved).
    pub fn reshaped(&self, rows: usize, cols: usize) -> Result<Tensor, AdError> {
        if rows * cols != self.data.len() {
            return Err(AdError::DataLength {
                got: self.data.len(),
                rows,
                cols,
            });
        }
        Ok(Tensor {
            rows,
            cols,
            data: self.data.clone(),
        })
    }

    pub fn transposed(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Which operand gets transposed in `gemm`.
#[derive(Clone, Copy)]
pub enum GemmKind {
    /// C = A·B with A: M×K, B: K×N.
    Plain,
    /// C = Aᵀ·B with A: K×M, B: K×N.
    TransA,
    /// C = A·Bᵀ with A: M×K, B: N×K.
    TransB,
}

/// Deterministic blocked matrix product; see the module docs.
pub fn gemm(kind: GemmKind, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
    let (m, k, n, name) = match kind {
        GemmKind::Plain => (a.rows, a.cols, b.cols, "matmul"),
        GemmKind::TransA => (a.cols, a.rows, b.cols, "matmul_at_b"),
        GemmKind::TransB => (a.rows, a.cols, b.rows, "matmul_a_bt"),
    };
    let k_b = match kind {
        GemmKind::Plain | GemmKind::TransA => b.rows,
        GemmKind::TransB => b.cols,
    };
    if k != k_b {
        return Err(AdError::Shape {
            op: name,
            shapes: format!("{}x{} vs {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    // Logical strides of the (possibly transposed) A operand and of B.
    let (rsa, csa) = match kind {
        GemmKind::Plain | GemmKind::TransB => (a.cols as isize, 1),
        GemmKind::TransA => (1, a.cols as isize),
    };
    let (rsb, csb) = match kind {
        GemmKind::Plain | GemmKind::TransA => (b.cols as isize, 1),
        GemmKind::TransB => (1, b.cols as isize),
    };

    let mut c = Tensor::zeros(m, n);
    if m == 0 || n == 0 {
        return Ok(c);
    }
    if k == 0 {
        return Ok(c); // zero-initialized product over an empty sum
    }
    let a_ptr = a.data.as_ptr() as usize;
    let b_ptr = b.data.as_ptr() as usize;
    c.data
        .par_chunks_mut(ROW_BLOCK * n)
        .enumerate()
        .for_each(|(blk, chunk)| {
            let r0 = blk * ROW_BLOCK;
            let rows_here = chunk.len() / n;
            // SAFETY: each block writes only its own output chunk; the A/B
            // reads are shared immutable data reconstructed from raw parts
            // to cross the closure boundary.
            unsafe {
                matrixmultiply::dgemm(
                    rows_here,
                    k,
                    n,
                    1.0,
                    (a_ptr as *const f64).offset(r0 as isize * rsa),
                    rsa,
                    csa,
                    b_ptr as *const f64,
                    rsb,
                    csb,
                    0.0,
                    chunk.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
    Ok(c)
}
