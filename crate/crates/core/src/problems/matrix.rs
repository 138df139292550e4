use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// A matrix in a config file: either a scalar multiple of the identity or
/// explicit rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn identity(scale: f64) -> Self {
        MatrixSpec::Scalar(scale)
    }

    pub fn resolve(&self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let m = match self {
            MatrixSpec::Scalar(s) => {
                if rows != cols {
                    return Err(Error::Config(format!(
                        "`{name}` is {rows}x{cols} and cannot be given as a scalar"
                    )));
                }
                DMatrix::identity(rows, cols) * *s
            }
            MatrixSpec::Rows(r) => {
                if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                    return Err(Error::Config(format!("`{name}` must be a {rows}x{cols} matrix")));
                }
                DMatrix::from_fn(rows, cols, |i, j| r[i][j])
            }
        };
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("`{name}` has non-finite entries")));
        }
        Ok(m)
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixSpec::Rows((0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
    }
}

pub(crate) fn to_tensor(m: &DMatrix<f64>) -> Tensor {
    let data = (0..m.nrows())
        .flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>())
        .collect();
    Tensor::new([m.nrows(), m.ncols()], data).expect("nonempty matrix")
}

pub(crate) fn to_tensor_t(m: &DMatrix<f64>) -> Tensor {
    to_tensor(&m.transpose())
}

pub(crate) fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::Config(format!("`{name}` must be symmetric")));
    }
    Ok(())
}
