//! Feed-forward layers. Every layer reads its weights from a slice of the
//! network's flat parameter vector and accumulates gradients into the
//! matching slice of the flat gradient vector.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array3, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::rng::StreamRng;

/// Per-sample tensor shape: (timesteps, channels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub steps: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(steps: usize, channels: usize) -> Self {
        Self { steps, channels }
    }

    pub fn size(&self) -> usize {
        self.steps * self.channels
    }
}

/// Whether a forward pass is for training (with its dropout stream) or inference.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut StreamRng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

pub trait Layer: Send {
    fn kind(&self) -> &'static str;

    fn param_count(&self) -> usize {
        0
    }

    fn output_shape(&self) -> Shape;

    fn init_params(&self, _params: &mut [f64], _rng: &mut StreamRng) {}

    /// `x` is batch × steps × channels.
    fn forward(&mut self, params: &[f64], x: Array3<f64>, mode: &mut Mode<'_>) -> Result<Array3<f64>>;

    /// Consumes the upstream gradient, accumulates into `grads`, and returns
    /// the gradient with respect to the layer input.
    fn backward(&mut self, params: &[f64], grad: Array3<f64>, grads: &mut [f64]) -> Array3<f64>;

    /// Parameter gradients only, for a layer whose input needs no gradient.
    fn backward_params(&mut self, params: &[f64], grad: Array3<f64>, grads: &mut [f64]) {
        self.backward(params, grad, grads);
    }
}

pub(crate) fn check_input(kind: &str, expected: Shape, x: &Array3<f64>) -> Result<()> {
    let (_, t, c) = x.dim();
    if t != expected.steps || c != expected.channels {
        return Err(Error::Shape(format!(
            "{kind} expects {}x{} per sample, got {t}x{c}",
            expected.steps, expected.channels
        )));
    }
    Ok(())
}

pub(crate) fn glorot(params: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut StreamRng) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for p in params {
        *p = rng.random_range(-limit..limit);
    }
}

fn flatten_rows(x: &Array3<f64>) -> ArrayView2<'_, f64> {
    let (b, t, c) = x.dim();
    x.view().into_shape_with_order((b * t, c)).expect("contiguous tensor")
}

fn standard(x: Array3<f64>) -> Array3<f64> {
    if x.is_standard_layout() {
        x
    } else {
        x.as_standard_layout().into_owned()
    }
}

/// Valid (unpadded) 1-D convolution, kernel laid out as [tap][in][out].
pub struct Conv1d {
    input: Shape,
    filters: usize,
    kernel: usize,
    cols: Option<Array2<f64>>,
    batch: usize,
}

impl Conv1d {
    pub fn new(input: Shape, filters: usize, kernel: usize) -> Result<Self> {
        if kernel == 0 || kernel > input.steps || filters == 0 {
            return Err(Error::Shape(format!("conv kernel {kernel} / filters {filters} invalid for {} steps", input.steps)));
        }
        Ok(Self { input, filters, kernel, cols: None, batch: 0 })
    }

    fn out_steps(&self) -> usize {
        self.input.steps - self.kernel + 1
    }

    fn kernel_rows(&self) -> usize {
        self.kernel * self.input.channels
    }

    fn param_grads(&self, grad: &Array3<f64>, grads: &mut [f64]) {
        let cols = self.cols.as_ref().expect("forward before backward");
        let kr = self.kernel_rows();
        let g2 = flatten_rows(grad);
        let (gw, gb) = grads.split_at_mut(kr * self.filters);
        let mut gw = ArrayViewMut2::from_shape((kr, self.filters), gw).unwrap();
        general_mat_mul(1.0, &cols.t(), &g2, 1.0, &mut gw);
        for row in g2.rows() {
            gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
    }
}

impl Layer for Conv1d {
    fn kind(&self) -> &'static str {
        "conv1d"
    }

    fn param_count(&self) -> usize {
        self.kernel_rows() * self.filters + self.filters
    }

    fn output_shape(&self) -> Shape {
        Shape::new(self.out_steps(), self.filters)
    }

    fn init_params(&self, params: &mut [f64], rng: &mut StreamRng) {
        let kr = self.kernel_rows();
        glorot(&mut params[..kr * self.filters], kr, self.kernel * self.filters, rng);
        params[kr * self.filters..].fill(0.0);
    }

    fn forward(&mut self, params: &[f64], x: Array3<f64>, _mode: &mut Mode<'_>) -> Result<Array3<f64>> {
        check_input("conv1d", self.input, &x)?;
        let x = standard(x);
        let b = x.dim().0;
        let (t_out, kr, c) = (self.out_steps(), self.kernel_rows(), self.input.channels);
        let data = x.as_slice().expect("standard layout");
        let mut cols = Array2::zeros((b * t_out, kr));
        for (r, mut row) in cols.rows_mut().into_iter().enumerate() {
            let (bi, t) = (r / t_out, r % t_out);
            let start = (bi * self.input.steps + t) * c;
            row.as_slice_mut().unwrap().copy_from_slice(&data[start..start + kr]);
        }
        let w = ArrayView2::from_shape((kr, self.filters), &params[..kr * self.filters]).unwrap();
        let bias = &params[kr * self.filters..];
        let mut out = cols.dot(&w);
        for mut row in out.rows_mut() {
            row.iter_mut().zip(bias).for_each(|(o, b)| *o += b);
        }
        self.cols = Some(cols);
        self.batch = b;
        Ok(out.into_shape_with_order((b, t_out, self.filters)).unwrap())
    }

    fn backward(&mut self, params: &[f64], grad: Array3<f64>, grads: &mut [f64]) -> Array3<f64> {
        let grad = standard(grad);
        self.param_grads(&grad, grads);
        let (kr, t_out, c) = (self.kernel_rows(), self.out_steps(), self.input.channels);
        let w = ArrayView2::from_shape((kr, self.filters), &params[..kr * self.filters]).unwrap();
        let dcols = flatten_rows(&grad).dot(&w.t());
        let mut dx = Array3::<f64>::zeros((self.batch, self.input.steps, c));
        let dxs = dx.as_slice_mut().unwrap();
        for (r, row) in dcols.rows().into_iter().enumerate() {
            let (bi, t) = (r / t_out, r % t_out);
            let start = (bi * self.input.steps + t) * c;
            dxs[start..start + kr].iter_mut().zip(row).for_each(|(d, v)| *d += v);
        }
        dx
    }

    fn backward_params(&mut self, _params: &[f64], grad: Array3<f64>, grads: &mut [f64]) {
        self.param_grads(&standard(grad), grads);
    }
}

/// Fully connected layer applied to the channel axis of every timestep.
pub struct Dense {
    input: Shape,
    units: usize,
    x: Option<Array3<f64>>,
}

impl Dense {
    pub fn new(input: Shape, units: usize) -> Result<Self> {
        if units == 0 {
            return param_err("dense layer needs at least one unit");
        }
        Ok(Self { input, units, x: None })
    }
}

impl Layer for Dense {
    fn kind(&self) -> &'static str {
        "dense"
    }

    fn param_count(&self) -> usize {
        self.input.channels * self.units + self.units
    }

    fn output_shape(&self) -> Shape {
        Shape::new(self.input.steps, self.units)
    }

    fn init_params(&self, params: &mut [f64], rng: &mut StreamRng) {
        let n = self.input.channels * self.units;
        glorot(&mut params[..n], self.input.channels, self.units, rng);
        params[n..].fill(0.0);
    }

    fn forward(&mut self, params: &[f64], x: Array3<f64>, _mode: &mut Mode<'_>) -> Result<Array3<f64>> {
        check_input("dense", self.input, &x)?;
        let x = standard(x);
        let (b, t, c) = x.dim();
        let n = c * self.units;
        let w = ArrayView2::from_shape((c, self.units), &params[..n]).unwrap();
        let mut out = flatten_rows(&x).dot(&w);
        for mut row in out.rows_mut() {
            row.iter_mut().zip(&params[n..]).for_each(|(o, b)| *o += b);
        }
        self.x = Some(x);
        Ok(out.into_shape_with_order((b, t, self.units)).unwrap())
    }

    fn backward(&mut self, params: &[f64], grad: Array3<f64>, grads: &mut [f64]) -> Array3<f64> {
        let grad = standard(grad);
        let x = self.x.as_ref().expect("forward before backward");
        let (b, t, c) = x.dim();
        let n = c * self.units;
        let g2 = flatten_rows(&grad);
        let dw = flatten_rows(x).t().dot(&g2);
        let (gw, gb) = grads.split_at_mut(n);
        gw.iter_mut().zip(dw.iter()).for_each(|(g, d)| *g += d);
        for row in g2.rows() {
            gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        let w = ArrayView2::from_shape((c, self.units), &params[..n]).unwrap();
        g2.dot(&w.t()).into_shape_with_order((b, t, c)).unwrap()
    }
}

pub struct Relu {
    shape: Shape,
    mask: Option<Array3<bool>>,
}

impl Relu {
    pub fn new(shape: Shape) -> Self {
        Self { shape, mask: None }
    }
}

impl Layer for Relu {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn output_shape(&self) -> Shape {
        self.shape
    }

    fn forward(&mut self, _params: &[f64], mut x: Array3<f64>, _mode: &mut Mode<'_>) -> Result<Array3<f64>> {
        check_input("relu", self.shape, &x)?;
        self.mask = Some(x.mapv(|v| v > 0.0));
        x.mapv_inplace(|v| v.max(0.0));
        Ok(x)
    }

    fn backward(&mut self, _params: &[f64], mut grad: Array3<f64>, _grads: &mut [f64]) -> Array3<f64> {
        let mask = self.mask.as_ref().expect("forward before backward");
        Zip::from(&mut grad).and(mask).for_each(|g, &m| {
            if !m {
                *g = 0.0;
            }
        });
        grad
    }
}

/// Non-overlapping max pooling over time; trailing steps that do not fill a
/// pool are dropped.
pub struct MaxPool1d {
    input: Shape,
    size: usize,
    /// Flat input index of each pooled maximum.
    argmax: Option<Vec<usize>>,
}

impl MaxPool1d {
    pub fn new(input: Shape, size: usize) -> Result<Self> {
        if size == 0 || size > input.steps {
            return Err(Error::Shape(format!("pool size {size} invalid for {} steps", input.steps)));
        }
        Ok(Self { input, size, argmax: None })
    }
}

impl Layer for MaxPool1d {
    fn kind(&self) -> &'static str {
        "maxpool1d"
    }

    fn output_shape(&self) -> Shape {
        Shape::new(self.input.steps / self.size, self.input.channels)
    }

    fn forward(&mut self, _params: &[f64], x: Array3<f64>, _mode: &mut Mode<'_>) -> Result<Array3<f64>> {
        check_input("maxpool1d", self.input, &x)?;
        let x = standard(x);
        let (b, t_in, c) = x.dim();
        let t_out = t_in / self.size;
        let xs = x.as_slice().unwrap();
        let mut out = Vec::with_capacity(b * t_out * c);
        let mut arg = Vec::with_capacity(b * t_out * c);
        for bi in 0..b {
            for t in 0..t_out {
                let first = (bi * t_in + t * self.size) * c;
                out.extend_from_slice(&xs[first..first + c]);
                arg.extend(first..first + c);
                let o = out.len() - c;
                for j in 1..self.size {
                    let row = first + j * c;
                    for ch in 0..c {
                        if xs[row + ch] > out[o + ch] {
                            out[o + ch] = xs[row + ch];
                            arg[o + ch] = row + ch;
                        }
                    }
                }
            }
        }
        self.argmax = Some(arg);
        Ok(Array3::from_shape_vec((b, t_out, c), out).unwrap())
    }

    fn backward(&mut self, _params: &[f64], grad: Array3<f64>, _grads: &mut [f64]) -> Array3<f64> {
        let arg = self.argmax.as_ref().expect("forward before backward");
        let grad = standard(grad);
        let (b, _, c) = grad.dim();
        let mut dx = Array3::<f64>::zeros((b, self.input.steps, c));
        let dxs = dx.as_slice_mut().unwrap();
        for (&i, &g) in arg.iter().zip(grad.as_slice().unwrap()) {
            dxs[i] += g;
        }
        dx
    }
}

/// Reinterprets each sample with a new (steps, channels) of equal size.
pub struct Reshape {
    input: Shape,
    output: Shape,
}

impl Reshape {
    pub fn new(input: Shape, output: Shape) -> Result<Self> {
        if input.size() != output.size() {
            return Err(Error::Shape(format!(
                "cannot reshape {}x{} into {}x{}",
                input.steps, input.channels, output.steps, output.channels
            )));
        }
        Ok(Self { input, output })
    }

    /// Collapses every sample into a single timestep.
    pub fn flatten(input: Shape) -> Self {
        Self { input, output: Shape::new(1, input.size()) }
    }
}

impl Layer for Reshape {
    fn kind(&self) -> &'static str {
        if self.output.steps == 1 {
            "flatten"
        } else {
            "reshape"
        }
    }

    fn output_shape(&self) -> Shape {
        self.output
    }

    fn forward(&mut self, _params: &[f64], x: Array3<f64>, _mode: &mut Mode<'_>) -> Result<Array3<f64>> {
        check_input("reshape", self.input, &x)?;
        let b = x.dim().0;
        Ok(standard(x).into_shape_with_order((b, self.output.steps, self.output.channels)).unwrap())
    }

    fn backward(&mut self, _params: &[f64], grad: Array3<f64>, _grads: &mut [f64]) -> Array3<f64> {
        let b = grad.dim().0;
        standard(grad).into_shape_with_order((b, self.input.steps, self.input.channels)).unwrap()
    }
}

/// Inverted dropout: in training, kept units are scaled by 1/(1 - rate).
pub struct Dropout {
    shape: Shape,
    rate: f64,
    mask: Option<Array3<f64>>,
}

impl Dropout {
    pub fn new(shape: Shape, rate: f64) -> Result<Self> {
        validate_rate(rate)?;
        Ok(Self { shape, rate, mask: None })
    }
}

pub(crate) fn validate_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return param_err(format!("dropout rate {rate} outside [0, 1)"));
    }
    Ok(())
}

/// Samples an inverted-dropout mask: each entry is 0 with probability `rate`
/// and 1/(1 - rate) otherwise.
pub fn dropout_mask(dim: (usize, usize, usize), rate: f64, rng: &mut StreamRng) -> Array3<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Array3::from_shape_simple_fn(dim, || if rng.random::<f64>() < keep { scale } else { 0.0 })
}

/// Functional dropout over a tensor.
pub fn dropout(x: &Array3<f64>, rate: f64, mode: &mut Mode<'_>) -> Result<Array3<f64>> {
    validate_rate(rate)?;
    match mode {
        Mode::Train(rng) if rate > 0.0 => Ok(x * &dropout_mask(x.dim(), rate, rng)),
        _ => Ok(x.clone()),
    }
}

impl Layer for Dropout {
    fn kind(&self) -> &'static str {
        "dropout"
    }

    fn output_shape(&self) -> Shape {
        self.shape
    }

    fn forward(&mut self, _params: &[f64], x: Array3<f64>, mode: &mut Mode<'_>) -> Result<Array3<f64>> {
        check_input("dropout", self.shape, &x)?;
        match mode {
            Mode::Train(rng) if self.rate > 0.0 => {
                let mask = dropout_mask(x.dim(), self.rate, rng);
                let out = &x * &mask;
                self.mask = Some(mask);
                Ok(out)
            }
            _ => {
                self.mask = None;
                Ok(x)
            }
        }
    }

    fn backward(&mut self, _params: &[f64], grad: Array3<f64>, _grads: &mut [f64]) -> Array3<f64> {
        match &self.mask {
            Some(mask) => grad * mask,
            None => grad,
        }
    }
}

/// Copies `src` rows selected by `indices` into a batch × steps × channels tensor.
pub fn gather_batch(src: &Array2<f64>, indices: &[usize], shape: Shape) -> Array3<f64> {
    let rows = src.select(Axis(0), indices);
    rows.into_shape_with_order((indices.len(), shape.steps, shape.channels)).unwrap()
}
