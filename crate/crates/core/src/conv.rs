//! Strided convolutional RBM layers.
//!
//! A layer sees images of shape `C_in × H × W`, flattened channel-major into
//! batch rows. Hidden feature maps are `C_out × OH × OW` with "valid"
//! geometry and no padding: `OH = ⌊(H − K)/stride⌋ + 1`. Each hidden unit is
//! an ordinary multinary unit whose pre-activation is the strided
//! cross-correlation of the image with its channel's filter plus that
//! channel's bias; visible units get the transposed convolution of the hidden
//! maps plus a per-channel visible bias.
//!
//! Internally both directions go through an im2col patch matrix, so the
//! layer is a dense RBM with tied weights over spatial positions.

use ndarray::{s, Array1, Array2, Array4, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::layer::{check_cols, RbmLayer};
use crate::loss::{check_pair, ContrastiveLayer, LossBatchResult, ReconMode};
use crate::params::{finiteness, init_weight_std, Violation};
use crate::sampler::{hidden_mean, RngStream};

/// Default filter side.
pub const DEFAULT_KERNEL: usize = 4;
/// Default stride.
pub const DEFAULT_STRIDE: usize = 2;

/// `C × H × W` image geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        ImageShape { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Output side length of a valid strided convolution, or `None` if the
/// kernel does not fit.
pub fn conv_output_side(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || input < kernel {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

/// A convolutional RBM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvRbmParams {
    /// `C_out × C_in × K × K`.
    pub filters: Array4<f64>,
    /// One per output channel.
    pub hidden_bias: Array1<f64>,
    /// One per input channel, shared over pixels.
    pub visible_bias: Array1<f64>,
    pub stride: usize,
    /// Spatial size of the images this layer sees.
    pub input_height: usize,
    pub input_width: usize,
    pub visible_spec: ActivationSpec,
    pub hidden_spec: ActivationSpec,
}

/// Gradients for a [`ConvRbmParams`] layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradientSet {
    pub d_visible_bias: Array1<f64>,
    pub d_hidden_bias: Array1<f64>,
    pub d_filters: Array4<f64>,
}

impl ConvGradientSet {
    /// All entries in the flat order `a`, `b`, filters (row-major).
    pub fn to_flat(&self) -> Vec<f64> {
        self.d_visible_bias
            .iter()
            .chain(self.d_hidden_bias.iter())
            .chain(self.d_filters.iter())
            .copied()
            .collect()
    }

    pub fn scale(&mut self, factor: f64) {
        self.d_visible_bias *= factor;
        self.d_hidden_bias *= factor;
        self.d_filters *= factor;
    }
}

impl ConvRbmParams {
    #[allow(clippy::too_many_arguments)]
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        input_height: usize,
        input_width: usize,
        visible_spec: ActivationSpec,
        hidden_spec: ActivationSpec,
    ) -> Self {
        ConvRbmParams {
            filters: Array4::zeros((out_channels, in_channels, kernel, kernel)),
            hidden_bias: Array1::zeros(out_channels),
            visible_bias: Array1::zeros(in_channels),
            stride,
            input_height,
            input_width,
            visible_spec,
            hidden_spec,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.filters.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.filters.dim().0
    }

    pub fn kernel(&self) -> usize {
        self.filters.dim().2
    }

    pub fn input_shape(&self) -> ImageShape {
        ImageShape::new(self.in_channels(), self.input_height, self.input_width)
    }

    /// Hidden feature-map geometry.
    pub fn output_shape(&self) -> Result<ImageShape> {
        let k = self.kernel();
        match (
            conv_output_side(self.input_height, k, self.stride),
            conv_output_side(self.input_width, k, self.stride),
        ) {
            (Some(h), Some(w)) => Ok(ImageShape::new(self.out_channels(), h, w)),
            _ => Err(Error::Shape(format!(
                "input {}×{} is smaller than the {k}×{k} kernel (stride {})",
                self.input_height, self.input_width, self.stride
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.visible_bias.len() + self.hidden_bias.len() + self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter `index` in the flat order `a`, `b`, filters.
    pub fn get_flat(&self, index: usize) -> f64 {
        let (na, nb) = (self.visible_bias.len(), self.hidden_bias.len());
        if index < na {
            self.visible_bias[index]
        } else if index < na + nb {
            self.hidden_bias[index - na]
        } else {
            self.filters.as_slice().expect("standard layout")[index - na - nb]
        }
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let (na, nb) = (self.visible_bias.len(), self.hidden_bias.len());
        if index < na {
            self.visible_bias[index] = value;
        } else if index < na + nb {
            self.hidden_bias[index - na] = value;
        } else {
            self.filters.as_slice_mut().expect("standard layout")[index - na - nb] = value;
        }
    }

    /// `C_out × (C_in·K·K)` view of the filters.
    fn filter_matrix(&self) -> ArrayView2<'_, f64> {
        let (o, c, k, _) = self.filters.dim();
        self.filters
            .view()
            .into_shape_with_order((o, c * k * k))
            .expect("filters are in standard layout")
    }

    /// `P × (C_in·K·K)` patch matrix of one image row.
    fn patches(&self, image: ndarray::ArrayView1<'_, f64>, out: &ImageShape) -> Array2<f64> {
        let (c_in, k, s) = (self.in_channels(), self.kernel(), self.stride);
        let (h, w) = (self.input_height, self.input_width);
        let mut cols = Array2::zeros((out.pixels(), c_in * k * k));
        for py in 0..out.height {
            for px in 0..out.width {
                let mut dst = cols.row_mut(py * out.width + px);
                let mut idx = 0;
                for c in 0..c_in {
                    for ky in 0..k {
                        let base = c * h * w + (py * s + ky) * w + px * s;
                        for kx in 0..k {
                            dst[idx] = image[base + kx];
                            idx += 1;
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-adds a `P × (C_in·K·K)` column matrix back onto an image.
    fn col2im(&self, cols: &Array2<f64>, out: &ImageShape, mut image: ndarray::ArrayViewMut1<'_, f64>) {
        let (c_in, k, s) = (self.in_channels(), self.kernel(), self.stride);
        let (h, w) = (self.input_height, self.input_width);
        for py in 0..out.height {
            for px in 0..out.width {
                let src = cols.row(py * out.width + px);
                let mut idx = 0;
                for c in 0..c_in {
                    for ky in 0..k {
                        let base = c * h * w + (py * s + ky) * w + px * s;
                        for kx in 0..k {
                            image[base + kx] += src[idx];
                            idx += 1;
                        }
                    }
                }
            }
        }
    }

    /// Per-row, per-input-channel pixel sums.
    fn channel_sums(&self, v: &ArrayView2<'_, f64>) -> Array2<f64> {
        let pixels = self.input_height * self.input_width;
        let mut out = Array2::zeros((v.nrows(), self.in_channels()));
        for (row, mut dst) in v.rows().into_iter().zip(out.rows_mut()) {
            for c in 0..self.in_channels() {
                dst[c] = row.slice(s![c * pixels..(c + 1) * pixels]).sum();
            }
        }
        out
    }

    /// Hidden activations `f(x)` reshaped per row to `P × C_out`, paired with
    /// the row's patch matrix.
    fn positive_statistics(&self, v: &ArrayView2<'_, f64>, out: &ImageShape) -> Result<Array2<f64>> {
        let x = self.hidden_input(v.view())?;
        let spec = self.hidden_spec;
        let mut d_filters = Array2::zeros((self.out_channels(), self.in_channels() * self.kernel().pow(2)));
        for (image, xr) in v.rows().into_iter().zip(x.rows()) {
            let f = xr.mapv(|x| spec.mean(x)).into_shape_with_order((out.channels, out.pixels())).expect("row length");
            let cols = self.patches(image, out);
            d_filters += &f.dot(&cols);
        }
        Ok(d_filters)
    }
}

impl RbmLayer for ConvRbmParams {
    fn visible_spec(&self) -> &ActivationSpec {
        &self.visible_spec
    }

    fn hidden_spec(&self) -> &ActivationSpec {
        &self.hidden_spec
    }

    fn n_visible(&self) -> usize {
        self.input_shape().len()
    }

    fn n_hidden(&self) -> usize {
        self.output_shape().map(|s| s.len()).unwrap_or(0)
    }

    fn hidden_input(&self, v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_cols("visible batch", &v, self.n_visible())?;
        let out = self.output_shape()?;
        let wm = self.filter_matrix();
        let mut x = Array2::zeros((v.nrows(), out.len()));
        for (image, mut dst) in v.rows().into_iter().zip(x.rows_mut()) {
            // (C_out × CKK)·(CKK × P) lands directly in channel-major order.
            let maps = wm.dot(&self.patches(image, &out).t());
            for (o, (map, &b)) in maps.rows().into_iter().zip(&self.hidden_bias).enumerate() {
                dst.slice_mut(s![o * out.pixels()..(o + 1) * out.pixels()])
                    .assign(&map.mapv(|x| x + b));
            }
        }
        Ok(x)
    }

    fn visible_input(&self, h: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let out = self.output_shape()?;
        check_cols("hidden batch", &h, out.len())?;
        let wm = self.filter_matrix();
        let pixels = self.input_height * self.input_width;
        let mut v = Array2::zeros((h.nrows(), self.n_visible()));
        for (maps, mut dst) in h.rows().into_iter().zip(v.rows_mut()) {
            let maps = maps.into_shape_with_order((out.channels, out.pixels())).expect("row length");
            let cols = maps.t().dot(&wm);
            self.col2im(&cols, &out, dst.view_mut());
            for (c, &a) in self.visible_bias.iter().enumerate() {
                dst.slice_mut(s![c * pixels..(c + 1) * pixels]).mapv_inplace(|x| x + a);
            }
        }
        Ok(v)
    }
}

impl ContrastiveLayer for ConvRbmParams {
    type Gradient = ConvGradientSet;

    fn contrastive_loss(&self, v: ArrayView2<'_, f64>, v_recon: ArrayView2<'_, f64>) -> Result<f64> {
        check_pair(&v, &v_recon)?;
        let spec = &self.hidden_spec;
        let x = self.hidden_input(v)?;
        let x_recon = self.hidden_input(v_recon)?;
        let visible_term = (self.channel_sums(&v_recon) - self.channel_sums(&v)).dot(&self.visible_bias).sum();
        let hidden_term = Zip::from(&x_recon)
            .and(&x)
            .fold(0.0, |acc, &xr, &x| acc + (spec.integral(xr) - spec.integral(x)));
        Ok(visible_term + hidden_term)
    }

    fn loss_gradient(&self, v: ArrayView2<'_, f64>, v_recon: ArrayView2<'_, f64>) -> Result<ConvGradientSet> {
        check_pair(&v, &v_recon)?;
        let out = self.output_shape()?;
        let spec = self.hidden_spec;
        let map_sums = |x: Array2<f64>| {
            let per_channel = x
                .mapv_into(|x| spec.mean(x))
                .into_shape_with_order((v.nrows(), out.channels, out.pixels()))
                .expect("row length");
            per_channel.sum_axis(Axis(2)).sum_axis(Axis(0))
        };
        let d_hidden_bias = map_sums(self.hidden_input(v_recon)?) - map_sums(self.hidden_input(v)?);
        let d_visible_bias = (self.channel_sums(&v_recon) - self.channel_sums(&v)).sum_axis(Axis(0));
        let d_filters = self.positive_statistics(&v_recon, &out)? - self.positive_statistics(&v, &out)?;
        Ok(ConvGradientSet {
            d_visible_bias,
            d_hidden_bias,
            d_filters: d_filters.into_shape_with_order(self.filters.dim()).expect("filter shape"),
        })
    }
}

/// `f_h` of the strided cross-correlation plus bias, per row.
pub fn conv_hidden_mean(params: &ConvRbmParams, v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    hidden_mean(params, v)
}

/// Reconstruction, loss and gradient of a convolutional layer.
pub fn conv_loss_and_grad(
    params: &ConvRbmParams,
    v: ArrayView2<'_, f64>,
    mode: ReconMode,
    rng: &RngStream,
) -> Result<LossBatchResult<ConvGradientSet>> {
    crate::loss::loss_and_grad(params, v, mode, rng)
}

/// Reports every structural, shape and finiteness problem.
pub fn validate_conv(params: &ConvRbmParams) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let (o, c, k1, k2) = params.filters.dim();
    if k1 != k2 {
        out.push(Violation::Shape {
            tensor: "filters",
            other: "filters",
            detail: format!("kernel must be square, got {k1}×{k2}"),
        });
    }
    if k1 == 0 {
        out.push(Violation::Range { what: "kernel", detail: "K must be at least 1".into() });
    }
    if params.stride == 0 {
        out.push(Violation::Range { what: "stride", detail: "stride must be at least 1".into() });
    }
    if o == 0 || c == 0 {
        out.push(Violation::Empty { tensor: "filters" });
    }
    if params.hidden_bias.len() != o {
        out.push(Violation::Shape {
            tensor: "hidden_bias",
            other: "filters",
            detail: format!("{} entries for {o} output channels", params.hidden_bias.len()),
        });
    }
    if params.visible_bias.len() != c {
        out.push(Violation::Shape {
            tensor: "visible_bias",
            other: "filters",
            detail: format!("{} entries for {c} input channels", params.visible_bias.len()),
        });
    }
    if k1 > 0 && params.stride > 0 && params.output_shape().is_err() {
        out.push(Violation::Range {
            what: "input size",
            detail: format!(
                "{}×{} input is smaller than the {k1}×{k1} kernel",
                params.input_height, params.input_width
            ),
        });
    }
    finiteness("visible_bias", params.visible_bias.iter(), &mut out);
    finiteness("hidden_bias", params.hidden_bias.iter(), &mut out);
    finiteness("filters", params.filters.iter(), &mut out);
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Zero biases and Gaussian filters with the same scale rule as dense layers.
#[allow(clippy::too_many_arguments)]
pub fn init_conv_params(
    input: ImageShape,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    visible_spec: ActivationSpec,
    hidden_spec: ActivationSpec,
    seed: u64,
) -> Result<ConvRbmParams> {
    let mut p = ConvRbmParams::zeros(
        input.channels,
        out_channels,
        kernel,
        stride,
        input.height,
        input.width,
        visible_spec,
        hidden_spec,
    );
    if let Err(v) = validate_conv(&p) {
        return Err(Error::Invalid(v));
    }
    let normal = Normal::new(0.0, init_weight_std(&visible_spec, &hidden_spec)).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    p.filters.mapv_inplace(|_| normal.sample(&mut rng));
    Ok(p)
}
