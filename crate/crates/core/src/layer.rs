use ndarray::{Array2, ArrayView2, Axis};

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::params::RbmParams;

/// The linear part of an RBM layer: how visible values drive hidden
/// pre-activations and back. Rows of every batch are samples, flattened.
pub trait RbmLayer {
    fn visible_spec(&self) -> &ActivationSpec;
    fn hidden_spec(&self) -> &ActivationSpec;
    fn n_visible(&self) -> usize;
    fn n_hidden(&self) -> usize;

    /// `x = b + v·W` for every row of `v`.
    fn hidden_input(&self, v: ArrayView2<'_, f64>) -> Result<Array2<f64>>;

    /// `a + h·Wᵀ` for every row of `h`.
    fn visible_input(&self, h: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

pub(crate) fn check_cols(what: &str, batch: &ArrayView2<'_, f64>, expected: usize) -> Result<()> {
    if batch.ncols() != expected {
        return Err(Error::Shape(format!(
            "{what} has {} columns, layer expects {expected}",
            batch.ncols()
        )));
    }
    Ok(())
}

impl RbmLayer for RbmParams {
    fn visible_spec(&self) -> &ActivationSpec {
        &self.visible_spec
    }

    fn hidden_spec(&self) -> &ActivationSpec {
        &self.hidden_spec
    }

    fn n_visible(&self) -> usize {
        RbmParams::n_visible(self)
    }

    fn n_hidden(&self) -> usize {
        RbmParams::n_hidden(self)
    }

    fn hidden_input(&self, v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_cols("visible batch", &v, self.n_visible())?;
        Ok(v.dot(&self.weights) + self.hidden_bias.view().insert_axis(Axis(0)))
    }

    fn visible_input(&self, h: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_cols("hidden batch", &h, self.n_hidden())?;
        Ok(h.dot(&self.weights.t()) + self.visible_bias.view().insert_axis(Axis(0)))
    }
}
