use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `n × dim` array of points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize) -> Self {
        PointSet {
            dim,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        PointSet {
            dim,
            data: Vec::with_capacity(dim * n),
        }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} values do not split into rows of length {dim}",
                data.len()
            )));
        }
        Ok(PointSet { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::Shape("no rows".into()))?;
        let mut out = PointSet::with_capacity(dim, rows.len());
        for r in rows {
            out.push(r.as_ref())?;
        }
        Ok(out)
    }

    /// One-dimensional point set from scalar values.
    pub fn from_scalars(values: &[f64]) -> Self {
        PointSet {
            dim: 1,
            data: values.to_vec(),
        }
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Shape(format!(
                "row of length {} pushed into point set of dimension {}",
                row.len(),
                self.dim
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn extend(&mut self, other: &PointSet) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::Shape("dimension mismatch in extend".into()));
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> PointSet {
        let mut out = PointSet::with_capacity(self.dim, indices.len());
        for &i in indices {
            out.data.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Per-column standard deviation with divisor `n - 1`.
    pub fn column_sds(&self) -> Vec<f64> {
        let n = self.len();
        let means = self.column_means();
        let mut ss = vec![0.0; self.dim];
        for r in self.rows() {
            for j in 0..self.dim {
                let d = r[j] - means[j];
                ss[j] += d * d;
            }
        }
        let denom = (n.max(2) - 1) as f64;
        ss.into_iter().map(|s| (s / denom).sqrt()).collect()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}
