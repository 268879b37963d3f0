//! Prediction grids: `T x K` matrices of logits or per-timestep class
//! probabilities, stored row-major with the class axis contiguous.
//!
//! A grid may carry 2D provenance (`H x W`). In that case its rows are the
//! cells in raster order, so cell `(h, w)` lives at row `h * W + w`.
//! [`flatten_2d`] turns such a grid into a plain sequence by reading columns
//! left to right, each column top to bottom.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Row-sum tolerance for [`ProbGrid`].
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape2d {
    pub height: usize,
    pub width: usize,
}

impl Shape2d {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("2D shape {height}x{width} has an empty side")));
        }
        Ok(Self { height, width })
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Raster row of the cell emitted at flattened position `t`.
    #[inline]
    pub fn raster_of_flat(&self, t: usize) -> usize {
        let (w, h) = (t / self.height, t % self.height);
        h * self.width + w
    }

    /// Raster row index for every flattened position, in flattened order.
    pub fn flatten_order(&self) -> Vec<usize> {
        (0..self.cells()).map(|t| self.raster_of_flat(t)).collect()
    }
}

fn check_shape(rows: usize, shape: Option<Shape2d>) -> Result<()> {
    if let Some(s) = shape {
        if s.height == 0 || s.width == 0 || s.cells() != rows {
            return Err(invalid(format!(
                "2D provenance {}x{} does not match {rows} rows",
                s.height, s.width
            )));
        }
    }
    Ok(())
}

fn standard(values: Array2<f64>) -> Array2<f64> {
    if values.is_standard_layout() {
        values
    } else {
        values.as_standard_layout().into_owned()
    }
}

/// Pre-softmax activations `a_k^t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitGrid {
    values: Array2<f64>,
    shape: Option<Shape2d>,
}

impl LogitGrid {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        Self::with_shape(values, None)
    }

    pub fn with_shape(values: Array2<f64>, shape: Option<Shape2d>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() < 2 {
            return Err(invalid(format!(
                "logit grid must be at least 1x2, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let values = standard(values);
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(invalid(format!("non-finite logit {v} at flat index {i}")));
        }
        check_shape(values.nrows(), shape)?;
        Ok(Self { values, shape })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn shape2d(&self) -> Option<Shape2d> {
        self.shape
    }

    pub fn timesteps(&self) -> usize {
        self.values.nrows()
    }

    pub fn classes(&self) -> usize {
        self.values.ncols()
    }
}

/// Row-stochastic per-timestep probabilities `y_k^t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbGrid {
    values: Array2<f64>,
    shape: Option<Shape2d>,
}

impl ProbGrid {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        Self::with_shape(values, None)
    }

    pub fn with_shape(values: Array2<f64>, shape: Option<Shape2d>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() < 2 {
            return Err(invalid(format!(
                "probability grid must be at least 1x2, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let values = standard(values);
        for (t, row) in values.axis_iter(Axis(0)).enumerate() {
            let mut sum = 0.0;
            for &v in row {
                if !(0.0..=1.0).contains(&v) {
                    return Err(invalid(format!("probability {v} at row {t} outside [0, 1]")));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(invalid(format!("row {t} sums to {sum}, not 1")));
            }
        }
        check_shape(values.nrows(), shape)?;
        Ok(Self { values, shape })
    }

    /// Trusted constructor for kernels that produce normalized rows.
    pub(crate) fn from_normalized(values: Array2<f64>, shape: Option<Shape2d>) -> Self {
        debug_assert!(check_shape(values.nrows(), shape).is_ok());
        Self { values, shape }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.values.row(t)
    }

    pub fn shape2d(&self) -> Option<Shape2d> {
        self.shape
    }

    pub fn timesteps(&self) -> usize {
        self.values.nrows()
    }

    pub fn classes(&self) -> usize {
        self.values.ncols()
    }

    /// Same rows, different (or no) 2D interpretation.
    pub fn reshaped(self, shape: Option<Shape2d>) -> Result<Self> {
        check_shape(self.values.nrows(), shape)?;
        Ok(Self { values: self.values, shape })
    }
}

/// Flatten a 2D grid column-major: output row `w * H + h` is cell `(h, w)`.
pub fn flatten_2d(grid: &ProbGrid) -> Result<ProbGrid> {
    let shape = grid
        .shape2d()
        .ok_or_else(|| invalid("flatten_2d needs a grid with 2D provenance"))?;
    let order = shape.flatten_order();
    Ok(ProbGrid::from_normalized(grid.values.select(Axis(0), &order), None))
}

/// Move rows of a flattened-order matrix back to raster order.
pub fn unflatten_rows(flat: &Array2<f64>, shape: Shape2d) -> Result<Array2<f64>> {
    check_shape(flat.nrows(), Some(shape))?;
    let mut out = Array2::zeros(flat.raw_dim());
    for (t, row) in flat.axis_iter(Axis(0)).enumerate() {
        out.row_mut(shape.raster_of_flat(t)).assign(&row);
    }
    Ok(out)
}
