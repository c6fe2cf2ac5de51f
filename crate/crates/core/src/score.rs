//! The score-source abstraction consumed by the sampler.
//!
//! Both the trained network and the closed-form analytic scores of the
//! synthetic benchmarks implement [`ScoreModel`], so every sampling path
//! can be exercised with an exact oracle substituted for the network.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::diffusion::NoiseSchedule;
use crate::element::Element;
use crate::error::{Error, Result};

/// A conditional score field `s(x, t, c)` evaluated on row batches.
pub trait ScoreModel<T: Element> {
    /// Model vector length.
    fn dim(&self) -> usize;

    /// Condition vector length (zero for unconditional score sources).
    fn cond_dim(&self) -> usize;

    /// Evaluates the score for each row of `x` at per-row times `t`.
    ///
    /// `c` must have `cond_dim()` columns; unconditional sources accept
    /// any column count and ignore the payload.
    fn score_batch(
        &self,
        x: ArrayView2<T>,
        t: ArrayView1<T>,
        c: ArrayView2<T>,
    ) -> Result<Array2<T>>;
}

/// Exact score of a standard-normal data distribution diffused by `sched`:
/// the marginal at time `t` is `N(0, (alpha^2 + sigma^2) I)`, so the score
/// is `-x / (alpha^2 + sigma^2)`.
#[derive(Debug, Clone)]
pub struct StdNormalScore {
    pub dim: usize,
    pub sched: NoiseSchedule,
}

impl<T: Element> ScoreModel<T> for StdNormalScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn cond_dim(&self) -> usize {
        0
    }

    fn score_batch(
        &self,
        x: ArrayView2<T>,
        t: ArrayView1<T>,
        _c: ArrayView2<T>,
    ) -> Result<Array2<T>> {
        if x.ncols() != self.dim {
            return Err(Error::shape("std-normal score", self.dim, x.ncols()));
        }
        if t.len() != x.nrows() {
            return Err(Error::shape("std-normal score times", x.nrows(), t.len()));
        }
        let mut out = x.to_owned();
        for (mut row, &ti) in out.rows_mut().into_iter().zip(t.iter()) {
            let c = self.sched.perturb_coeffs(ti.to_f64())?;
            let inv = T::from_f64(-1.0 / (c.alpha * c.alpha + c.sigma * c.sigma));
            row.mapv_inplace(|v| v * inv);
        }
        Ok(out)
    }
}
