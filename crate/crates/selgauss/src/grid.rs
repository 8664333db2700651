use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular grid with unit spacing per axis.
///
/// Node ordering is row-major with axis 0 fastest; every module shares this
/// ordering, and it is fixed for the life of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: Vec<usize>,
}

impl GridSpec {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::ParamDomain(format!(
                "grid must have 1 to 3 axes, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::ParamDomain("grid axis of size zero".into()));
        }
        Ok(Self { dims })
    }

    pub fn line(n: usize) -> Result<Self> {
        Self::new(vec![n])
    }

    /// Total node count n_r.
    pub fn n_nodes(&self) -> usize {
        self.dims.iter().product()
    }

    /// Coordinates of node `idx` in node units (axis 0 fastest).
    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let mut rem = idx;
        self.dims
            .iter()
            .map(|&d| {
                let c = rem % d;
                rem /= d;
                c as f64
            })
            .collect()
    }

    /// Flat index of the node with the given per-axis coordinates.
    pub fn index(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (c, &d) in coords.iter().zip(&self.dims) {
            idx += c * stride;
            stride *= d;
        }
        idx
    }
}
