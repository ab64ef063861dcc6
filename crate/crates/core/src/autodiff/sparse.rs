//! Compressed sparse row matrices.

use std::sync::Arc;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Structure of a CSR matrix without its values; shared between matrices
/// whose values change but whose sparsity does not.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsePattern {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
}

impl SparsePattern {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.indptr[r]..self.indptr[r + 1]
    }

    /// Position of entry `(r, c)` in the value array, if stored.
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row_range(r);
        self.indices[range.clone()]
            .binary_search(&c)
            .ok()
            .map(|p| range.start + p)
    }
}

#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub pattern: Arc<SparsePattern>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(pattern: Arc<SparsePattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::shape(
                "csr",
                format!("{} values for {} stored entries", values.len(), pattern.nnz()),
            ));
        }
        Ok(CsrMatrix { pattern, values })
    }

    pub fn identity(n: usize) -> Self {
        let pattern = SparsePattern {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
        };
        CsrMatrix {
            pattern: Arc::new(pattern),
            values: vec![1.0; n],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.pattern.n_rows, self.pattern.n_cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pattern.find(r, c).map_or(0.0, |k| self.values[k])
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.pattern.n_rows, self.pattern.n_cols);
        for r in 0..self.pattern.n_rows {
            for k in self.pattern.row_range(r) {
                t.set(r, self.pattern.indices[k], self.values[k]);
            }
        }
        t
    }

    pub fn spmm(&self, t: &Tensor) -> Result<Tensor> {
        spmm_values(&self.pattern, &self.values, t)
    }
}

pub(crate) fn spmm_values(p: &SparsePattern, values: &[f64], t: &Tensor) -> Result<Tensor> {
    if p.n_cols != t.rows() {
        return Err(Error::shape(
            "spmm",
            format!("sparse {}x{} times {:?}", p.n_rows, p.n_cols, t.shape()),
        ));
    }
    let c = t.cols();
    let mut out = Tensor::zeros(p.n_rows, c);
    for r in 0..p.n_rows {
        let o = out.row_mut(r);
        for k in p.row_range(r) {
            let v = values[k];
            if v == 0.0 {
                continue;
            }
            for (ov, &tv) in o.iter_mut().zip(t.row(p.indices[k])) {
                *ov += v * tv;
            }
        }
    }
    Ok(out)
}

/// `S^T * g` for a CSR matrix.
pub(crate) fn spmm_transpose(p: &SparsePattern, values: &[f64], g: &Tensor) -> Tensor {
    let c = g.cols();
    let mut out = Tensor::zeros(p.n_cols, c);
    for r in 0..p.n_rows {
        let g_row = g.row(r);
        for k in p.row_range(r) {
            let v = values[k];
            if v == 0.0 {
                continue;
            }
            let o = out.row_mut(p.indices[k]);
            for (ov, &gv) in o.iter_mut().zip(g_row) {
                *ov += v * gv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_tensor_is_tensor() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(CsrMatrix::identity(3).spmm(&t).unwrap(), t);
    }

    #[test]
    fn half_matrix_product() {
        let p = SparsePattern {
            n_rows: 2,
            n_cols: 2,
            indptr: vec![0, 2, 4],
            indices: vec![0, 1, 0, 1],
        };
        let s = CsrMatrix::new(Arc::new(p), vec![0.5; 4]).unwrap();
        let t = Tensor::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(s.spmm(&t).unwrap().data(), &[2.0, 2.0]);
        assert!(s.spmm(&Tensor::zeros(3, 1)).is_err());
        assert_eq!(s.get(1, 0), 0.5);
    }
}
