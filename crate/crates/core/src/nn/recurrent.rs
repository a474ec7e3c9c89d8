//! GRU and LSTM cells and the bidirectional recurrent layer.
//!
//! Per direction the flat parameters are `W` (input × G·H), `U` (H × G·H)
//! and `b` (G·H), all row-major, with gate blocks ordered z, r, h̃ for the
//! GRU and i, f, g, o for the LSTM. Recurrent dropout multiplies the state
//! fed to `U` by one mask drawn per sequence.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayViewMut2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::layers::{check_input, dropout_mask, glorot, validate_rate, Layer, Mode, Shape};
use crate::error::{param_err, Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    pub fn param_count(self, input: usize, hidden: usize) -> usize {
        self.gates() * hidden * (input + hidden + 1)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Borrowed view of one direction's weights.
#[derive(Debug, Clone, Copy)]
pub struct CellParams<'a> {
    pub kind: CellKind,
    pub input: usize,
    pub hidden: usize,
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: &'a [f64],
}

impl<'a> CellParams<'a> {
    pub fn from_flat(kind: CellKind, input: usize, hidden: usize, flat: &'a [f64]) -> Result<Self> {
        if flat.len() != kind.param_count(input, hidden) {
            return Err(Error::Shape(format!(
                "{kind:?} {input}->{hidden} needs {} parameters, got {}",
                kind.param_count(input, hidden),
                flat.len()
            )));
        }
        let gh = kind.gates() * hidden;
        let (w, rest) = flat.split_at(input * gh);
        let (u, b) = rest.split_at(hidden * gh);
        Ok(Self { kind, input, hidden, w, u, b })
    }

    /// Pre-activation of gate column `j`: b_j + Σ x_i W_ij + Σ h_k U_kj.
    fn preact(&self, j: usize, x: &[f64], h: &[f64]) -> f64 {
        let gh = self.kind.gates() * self.hidden;
        let mut acc = self.b[j];
        for (i, xi) in x.iter().enumerate() {
            acc += xi * self.w[i * gh + j];
        }
        for (k, hk) in h.iter().enumerate() {
            acc += hk * self.u[k * gh + j];
        }
        acc
    }

    fn check(&self, x: &[f64], h: &[f64]) -> Result<()> {
        if x.len() != self.input || h.len() != self.hidden {
            return Err(Error::Shape(format!(
                "cell expects x[{}], h[{}]; got x[{}], h[{}]",
                self.input,
                self.hidden,
                x.len(),
                h.len()
            )));
        }
        Ok(())
    }
}

/// h_t = (1 - z)⊙h + z⊙tanh(W_h x + U_h(r⊙h) + b_h).
pub fn gru_cell(x: &[f64], h_prev: &[f64], p: &CellParams<'_>) -> Result<Vec<f64>> {
    if p.kind != CellKind::Gru {
        return param_err("gru_cell needs GRU parameters");
    }
    p.check(x, h_prev)?;
    let hd = p.hidden;
    let z: Vec<f64> = (0..hd).map(|j| sigmoid(p.preact(j, x, h_prev))).collect();
    let r: Vec<f64> = (0..hd).map(|j| sigmoid(p.preact(hd + j, x, h_prev))).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let zeros = vec![0.0; hd];
    Ok((0..hd)
        .map(|j| {
            // x-part and bias from preact with h = 0, then U_h applied to r⊙h
            let mut a = p.preact(2 * hd + j, x, &zeros);
            for (k, v) in rh.iter().enumerate() {
                a += v * p.u[k * 3 * hd + 2 * hd + j];
            }
            (1.0 - z[j]) * h_prev[j] + z[j] * a.tanh()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// c_t = f⊙c + i⊙g, h_t = o⊙tanh(c_t).
pub fn lstm_cell(x: &[f64], state: &LstmState, p: &CellParams<'_>) -> Result<LstmState> {
    if p.kind != CellKind::Lstm {
        return param_err("lstm_cell needs LSTM parameters");
    }
    p.check(x, &state.h)?;
    if state.c.len() != p.hidden {
        return Err(Error::Shape("cell state width mismatch".into()));
    }
    let hd = p.hidden;
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    for j in 0..hd {
        let i = sigmoid(p.preact(j, x, &state.h));
        let f = sigmoid(p.preact(hd + j, x, &state.h));
        let g = p.preact(2 * hd + j, x, &state.h).tanh();
        let o = sigmoid(p.preact(3 * hd + j, x, &state.h));
        c[j] = f * state.c[j] + i * g;
        h[j] = o * c[j].tanh();
    }
    Ok(LstmState { h, c })
}

/// Single-sample recurrent step, used by [`bidirectional`].
pub trait RecurrentCell {
    fn hidden(&self) -> usize;
    /// Advances `(h, c)`; GRU cells ignore `c`.
    fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl RecurrentCell for CellParams<'_> {
    fn hidden(&self) -> usize {
        self.hidden
    }

    fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        match self.kind {
            CellKind::Gru => Ok((gru_cell(x, h, self)?, Vec::new())),
            CellKind::Lstm => {
                let s = lstm_cell(x, &LstmState { h: h.to_vec(), c: c.to_vec() }, self)?;
                Ok((s.h, s.c))
            }
        }
    }
}

/// Runs `forward` over t = 1..T and `backward` over t = T..1. With
/// `return_sequences` the two hidden states are concatenated per timestep
/// (backward outputs realigned to their input time); otherwise a single
/// vector holds the two final states.
pub fn bidirectional(
    forward: &dyn RecurrentCell,
    backward: &dyn RecurrentCell,
    sequence: &[Vec<f64>],
    return_sequences: bool,
) -> Result<Vec<Vec<f64>>> {
    if sequence.is_empty() {
        return param_err("bidirectional layer needs a non-empty sequence");
    }
    let run = |cell: &dyn RecurrentCell, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::new(); sequence.len()];
        let mut h = vec![0.0; cell.hidden()];
        let mut c = vec![0.0; cell.hidden()];
        for t in order {
            let (nh, nc) = cell.step(&sequence[t], &h, &c)?;
            h = nh;
            c = nc;
            out[t] = h.clone();
        }
        Ok(out)
    };
    let fwd = run(forward, &mut (0..sequence.len()))?;
    let bwd = run(backward, &mut (0..sequence.len()).rev())?;
    if return_sequences {
        Ok(fwd.into_iter().zip(bwd).map(|(mut a, b)| {
            a.extend(b);
            a
        }).collect())
    } else {
        let mut last = fwd[sequence.len() - 1].clone();
        last.extend_from_slice(&bwd[0]);
        Ok(vec![last])
    }
}

fn flat_states(a: &Array3<f64>) -> ArrayView2<'_, f64> {
    let (t, b, h) = a.dim();
    a.view().into_shape_with_order((t * b, h)).unwrap()
}

struct DirectionCache {
    /// Activated gates, time-major: [T, B, G·H].
    gates: Array3<f64>,
    /// State entering each step: [T, B, H].
    h_prev: Array3<f64>,
    /// State fed to the recurrent kernel (h_prev times the dropout mask).
    h_masked: Array3<f64>,
    /// GRU only: r ⊙ h_masked, the input of the candidate's recurrent product.
    rh: Array3<f64>,
    /// LSTM only.
    c_prev: Array3<f64>,
    tanh_c: Array3<f64>,
    /// Output state of each step: [T, B, H].
    h: Array3<f64>,
    mask: Option<Array2<f64>>,
}

/// Batched bidirectional GRU/LSTM layer.
pub struct BiRecurrent {
    kind: CellKind,
    input: Shape,
    hidden: usize,
    return_sequences: bool,
    recurrent_dropout: f64,
    /// Time-major input rows, [T·B, in].
    x_tm: Option<Array2<f64>>,
    caches: Vec<DirectionCache>,
}

impl BiRecurrent {
    pub fn new(kind: CellKind, input: Shape, hidden: usize, return_sequences: bool, recurrent_dropout: f64) -> Result<Self> {
        validate_rate(recurrent_dropout)?;
        if hidden == 0 || input.steps == 0 {
            return param_err("recurrent layer needs hidden units and a non-empty sequence");
        }
        Ok(Self { kind, input, hidden, return_sequences, recurrent_dropout, x_tm: None, caches: Vec::new() })
    }

    fn direction_params(&self) -> usize {
        self.kind.param_count(self.input.channels, self.hidden)
    }

    fn split<'p>(&self, params: &'p [f64]) -> (CellParams<'p>, CellParams<'p>) {
        let n = self.direction_params();
        let f = CellParams::from_flat(self.kind, self.input.channels, self.hidden, &params[..n]).unwrap();
        let b = CellParams::from_flat(self.kind, self.input.channels, self.hidden, &params[n..]).unwrap();
        (f, b)
    }

    fn time_order(&self, reverse: bool) -> Vec<usize> {
        if reverse {
            (0..self.input.steps).rev().collect()
        } else {
            (0..self.input.steps).collect()
        }
    }

    fn run_direction(&self, p: &CellParams<'_>, x_tm: &Array2<f64>, batch: usize, reverse: bool, mask: Option<Array2<f64>>) -> DirectionCache {
        let (t_len, hd, g) = (self.input.steps, self.hidden, self.kind.gates());
        let gh = g * hd;
        let w = ArrayView2::from_shape((p.input, gh), p.w).unwrap();
        let u = ArrayView2::from_shape((hd, gh), p.u).unwrap();
        let mut xw = x_tm.dot(&w);
        for mut row in xw.rows_mut() {
            row.iter_mut().zip(p.b).for_each(|(a, b)| *a += b);
        }
        let mut gates = xw.into_shape_with_order((t_len, batch, gh)).unwrap();
        let lstm = self.kind == CellKind::Lstm;
        let state = |on: bool| if on { Array3::zeros((t_len, batch, hd)) } else { Array3::zeros((0, 0, 0)) };
        let mut cache = DirectionCache {
            gates: Array3::zeros((0, 0, 0)),
            h_prev: state(true),
            h_masked: state(true),
            rh: state(!lstm),
            c_prev: state(lstm),
            tanh_c: state(lstm),
            h: state(true),
            mask: None,
        };
        let mut h = Array2::<f64>::zeros((batch, hd));
        let mut c = Array2::<f64>::zeros((batch, hd));
        for t in self.time_order(reverse) {
            cache.h_prev.index_axis_mut(Axis(0), t).assign(&h);
            let mut hm = cache.h_masked.index_axis_mut(Axis(0), t);
            match &mask {
                Some(m) => Zip::from(&mut hm).and(&h).and(m).for_each(|o, &a, &b| *o = a * b),
                None => hm.assign(&h),
            }
            let hm = cache.h_masked.index_axis(Axis(0), t);
            let mut a = gates.index_axis_mut(Axis(0), t);
            if lstm {
                general_mat_mul(1.0, &hm, &u, 1.0, &mut a);
                let (a, cs) = (a.as_slice_mut().unwrap(), c.as_slice_mut().unwrap());
                let mut c_prev = cache.c_prev.index_axis_mut(Axis(0), t);
                let mut tanh_c = cache.tanh_c.index_axis_mut(Axis(0), t);
                let (cp, tc) = (c_prev.as_slice_mut().unwrap(), tanh_c.as_slice_mut().unwrap());
                let hs = h.as_slice_mut().unwrap();
                for j in 0..batch {
                    let row = &mut a[j * gh..(j + 1) * gh];
                    for k in 0..hd {
                        let i = sigmoid(row[k]);
                        let f = sigmoid(row[hd + k]);
                        let gg = row[2 * hd + k].tanh();
                        let o = sigmoid(row[3 * hd + k]);
                        row[k] = i;
                        row[hd + k] = f;
                        row[2 * hd + k] = gg;
                        row[3 * hd + k] = o;
                        let idx = j * hd + k;
                        cp[idx] = cs[idx];
                        cs[idx] = f * cs[idx] + i * gg;
                        tc[idx] = cs[idx].tanh();
                        hs[idx] = o * tc[idx];
                    }
                }
            } else {
                general_mat_mul(1.0, &hm, &u.slice(s![.., ..2 * hd]), 1.0, &mut a.slice_mut(s![.., ..2 * hd]));
                let mut rh = cache.rh.index_axis_mut(Axis(0), t);
                {
                    let (a, rh, hm) = (a.as_slice_mut().unwrap(), rh.as_slice_mut().unwrap(), hm.as_slice().unwrap());
                    for j in 0..batch {
                        let row = &mut a[j * gh..(j + 1) * gh];
                        row[..2 * hd].iter_mut().for_each(|v| *v = sigmoid(*v));
                        for k in 0..hd {
                            rh[j * hd + k] = row[hd + k] * hm[j * hd + k];
                        }
                    }
                }
                general_mat_mul(1.0, &rh, &u.slice(s![.., 2 * hd..]), 1.0, &mut a.slice_mut(s![.., 2 * hd..]));
                let (a, hs) = (a.as_slice_mut().unwrap(), h.as_slice_mut().unwrap());
                for j in 0..batch {
                    let row = &mut a[j * gh..(j + 1) * gh];
                    for k in 0..hd {
                        let hh = row[2 * hd + k].tanh();
                        row[2 * hd + k] = hh;
                        let hv = &mut hs[j * hd + k];
                        *hv += row[k] * (hh - *hv);
                    }
                }
            }
            cache.h.index_axis_mut(Axis(0), t).assign(&h);
        }
        cache.gates = gates;
        cache.mask = mask;
        cache
    }

    /// Backpropagates one direction given d(output state) per step,
    /// time-major [T, B, H]. Returns d(input) as time-major [T·B, in] when
    /// asked for.
    #[allow(clippy::too_many_arguments)]
    fn backprop_direction(
        &self,
        p: &CellParams<'_>,
        cache: &DirectionCache,
        x_tm: &Array2<f64>,
        dout: &Array3<f64>,
        reverse: bool,
        grads: &mut [f64],
        input_grad: bool,
    ) -> Option<Array2<f64>> {
        let (t_len, hd, g) = (self.input.steps, self.hidden, self.kind.gates());
        let gh = g * hd;
        let batch = dout.dim().1;
        let lstm = self.kind == CellKind::Lstm;
        let u = ArrayView2::from_shape((hd, gh), p.u).unwrap();
        let w = ArrayView2::from_shape((p.input, gh), p.w).unwrap();
        let mut d_a = Array3::<f64>::zeros((t_len, batch, gh));
        let mut dh = Array2::<f64>::zeros((batch, hd));
        let mut dc = Array2::<f64>::zeros((batch, hd));
        let mut dhm = Array2::<f64>::zeros((batch, hd));
        let mut order = self.time_order(reverse);
        order.reverse();
        for t in order {
            dh += &dout.index_axis(Axis(0), t);
            let gates = cache.gates.index_axis(Axis(0), t);
            let gs = gates.as_slice().unwrap();
            let mut da = d_a.index_axis_mut(Axis(0), t);
            if lstm {
                let tc = cache.tanh_c.index_axis(Axis(0), t);
                let cp = cache.c_prev.index_axis(Axis(0), t);
                let (tc, cp) = (tc.as_slice().unwrap(), cp.as_slice().unwrap());
                let (das, dcs, dhs) = (da.as_slice_mut().unwrap(), dc.as_slice_mut().unwrap(), dh.as_slice().unwrap());
                for j in 0..batch {
                    let (row, drow) = (&gs[j * gh..(j + 1) * gh], &mut das[j * gh..(j + 1) * gh]);
                    for k in 0..hd {
                        let idx = j * hd + k;
                        let (i, f, gg, o) = (row[k], row[hd + k], row[2 * hd + k], row[3 * hd + k]);
                        let dcv = dcs[idx] + dhs[idx] * o * (1.0 - tc[idx] * tc[idx]);
                        drow[k] = dcv * gg * i * (1.0 - i);
                        drow[hd + k] = dcv * cp[idx] * f * (1.0 - f);
                        drow[2 * hd + k] = dcv * i * (1.0 - gg * gg);
                        drow[3 * hd + k] = dhs[idx] * tc[idx] * o * (1.0 - o);
                        dcs[idx] = dcv * f;
                    }
                }
                general_mat_mul(1.0, &da, &u.t(), 0.0, &mut dhm);
                dh.fill(0.0);
            } else {
                let hp = cache.h_prev.index_axis(Axis(0), t);
                let hm = cache.h_masked.index_axis(Axis(0), t);
                let (hp, hms) = (hp.as_slice().unwrap(), hm.as_slice().unwrap());
                {
                    let (das, dhs) = (da.as_slice_mut().unwrap(), dh.as_slice_mut().unwrap());
                    for j in 0..batch {
                        let (row, drow) = (&gs[j * gh..(j + 1) * gh], &mut das[j * gh..(j + 1) * gh]);
                        for k in 0..hd {
                            let idx = j * hd + k;
                            let (d, z, hh) = (dhs[idx], row[k], row[2 * hd + k]);
                            drow[k] = d * (hh - hp[idx]) * z * (1.0 - z);
                            drow[2 * hd + k] = d * z * (1.0 - hh * hh);
                            dhs[idx] = d * (1.0 - z);
                        }
                    }
                }
                // d(r ⊙ h_masked) from the candidate's recurrent product
                general_mat_mul(1.0, &da.slice(s![.., 2 * hd..]), &u.slice(s![.., 2 * hd..]).t(), 0.0, &mut dhm);
                {
                    let (das, dhms) = (da.as_slice_mut().unwrap(), dhm.as_slice_mut().unwrap());
                    for j in 0..batch {
                        let (row, drow) = (&gs[j * gh..(j + 1) * gh], &mut das[j * gh..(j + 1) * gh]);
                        for k in 0..hd {
                            let idx = j * hd + k;
                            let (drh, r) = (dhms[idx], row[hd + k]);
                            drow[hd + k] = drh * hms[idx] * r * (1.0 - r);
                            dhms[idx] = drh * r;
                        }
                    }
                }
                general_mat_mul(1.0, &da.slice(s![.., ..2 * hd]), &u.slice(s![.., ..2 * hd]).t(), 1.0, &mut dhm);
            }
            match &cache.mask {
                Some(m) => Zip::from(&mut dh).and(&dhm).and(m).for_each(|d, &a, &b| *d += a * b),
                None => dh += &dhm,
            }
        }
        let d_a2 = d_a.into_shape_with_order((t_len * batch, gh)).unwrap();
        let (gw, rest) = grads.split_at_mut(p.input * gh);
        let (gu, gb) = rest.split_at_mut(hd * gh);
        let mut gw = ArrayViewMut2::from_shape((p.input, gh), gw).unwrap();
        general_mat_mul(1.0, &x_tm.t(), &d_a2, 1.0, &mut gw);
        let mut gu = ArrayViewMut2::from_shape((hd, gh), gu).unwrap();
        if lstm {
            general_mat_mul(1.0, &flat_states(&cache.h_masked).t(), &d_a2, 1.0, &mut gu);
        } else {
            general_mat_mul(1.0, &flat_states(&cache.h_masked).t(), &d_a2.slice(s![.., ..2 * hd]), 1.0, &mut gu.slice_mut(s![.., ..2 * hd]));
            general_mat_mul(1.0, &flat_states(&cache.rh).t(), &d_a2.slice(s![.., 2 * hd..]), 1.0, &mut gu.slice_mut(s![.., 2 * hd..]));
        }
        for row in d_a2.rows() {
            gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        input_grad.then(|| d_a2.dot(&w.t()))
    }

    fn backward_impl(&mut self, params: &[f64], grad: Array3<f64>, grads: &mut [f64], input_grad: bool) -> Option<Array3<f64>> {
        let (t_len, hd, c) = (self.input.steps, self.hidden, self.input.channels);
        let batch = grad.dim().0;
        let mut df = Array3::zeros((t_len, batch, hd));
        let mut db = Array3::zeros((t_len, batch, hd));
        if self.return_sequences {
            df.assign(&grad.slice(s![.., .., ..hd]).permuted_axes([1, 0, 2]));
            db.assign(&grad.slice(s![.., .., hd..]).permuted_axes([1, 0, 2]));
        } else {
            df.index_axis_mut(Axis(0), t_len - 1).assign(&grad.slice(s![.., 0, ..hd]));
            db.index_axis_mut(Axis(0), 0).assign(&grad.slice(s![.., 0, hd..]));
        }
        let x_tm = self.x_tm.take().expect("forward before backward");
        let caches = std::mem::take(&mut self.caches);
        let n = self.direction_params();
        let (pf, pb) = self.split(params);
        let (gf, gb) = grads.split_at_mut(n);
        let dxf = self.backprop_direction(&pf, &caches[0], &x_tm, &df, false, gf, input_grad);
        let dxb = self.backprop_direction(&pb, &caches[1], &x_tm, &db, true, gb, input_grad);
        let dx = dxf? + dxb?;
        let dx = dx.into_shape_with_order((t_len, batch, c)).unwrap();
        Some(dx.permuted_axes([1, 0, 2]).as_standard_layout().into_owned())
    }
}

impl Layer for BiRecurrent {
    fn kind(&self) -> &'static str {
        match self.kind {
            CellKind::Gru => "bigru",
            CellKind::Lstm => "bilstm",
        }
    }

    fn param_count(&self) -> usize {
        2 * self.direction_params()
    }

    fn output_shape(&self) -> Shape {
        if self.return_sequences {
            Shape::new(self.input.steps, 2 * self.hidden)
        } else {
            Shape::new(1, 2 * self.hidden)
        }
    }

    fn init_params(&self, params: &mut [f64], rng: &mut StreamRng) {
        let (inp, hd) = (self.input.channels, self.hidden);
        let gh = self.kind.gates() * hd;
        for dir in params.chunks_mut(self.direction_params()) {
            let (w, rest) = dir.split_at_mut(inp * gh);
            let (u, b) = rest.split_at_mut(hd * gh);
            glorot(w, inp, gh, rng);
            glorot(u, hd, gh, rng);
            b.fill(0.0);
            if self.kind == CellKind::Lstm {
                b[hd..2 * hd].fill(1.0);
            }
        }
    }

    fn forward(&mut self, params: &[f64], x: Array3<f64>, mode: &mut Mode<'_>) -> Result<Array3<f64>> {
        check_input(self.kind(), self.input, &x)?;
        let (batch, t_len, c) = x.dim();
        let x_tm = x.permuted_axes([1, 0, 2]).as_standard_layout().into_owned().into_shape_with_order((t_len * batch, c)).unwrap();
        let (pf, pb) = self.split(params);
        let (mf, mb) = match mode {
            Mode::Train(rng) if self.recurrent_dropout > 0.0 => {
                let hd = self.hidden;
                let mut draw = || {
                    dropout_mask((1, batch, hd), self.recurrent_dropout, rng).into_shape_with_order((batch, hd)).unwrap()
                };
                (Some(draw()), Some(draw()))
            }
            _ => (None, None),
        };
        let cf = self.run_direction(&pf, &x_tm, batch, false, mf);
        let cb = self.run_direction(&pb, &x_tm, batch, true, mb);
        let hd = self.hidden;
        let out = if self.return_sequences {
            let mut out = Array3::zeros((batch, t_len, 2 * hd));
            out.slice_mut(s![.., .., ..hd]).assign(&cf.h.view().permuted_axes([1, 0, 2]));
            out.slice_mut(s![.., .., hd..]).assign(&cb.h.view().permuted_axes([1, 0, 2]));
            out
        } else {
            let mut out = Array3::zeros((batch, 1, 2 * hd));
            out.slice_mut(s![.., 0, ..hd]).assign(&cf.h.index_axis(Axis(0), t_len - 1));
            out.slice_mut(s![.., 0, hd..]).assign(&cb.h.index_axis(Axis(0), 0));
            out
        };
        self.caches = vec![cf, cb];
        self.x_tm = Some(x_tm);
        Ok(out)
    }

    fn backward(&mut self, params: &[f64], grad: Array3<f64>, grads: &mut [f64]) -> Array3<f64> {
        self.backward_impl(params, grad, grads, true).expect("input gradient requested")
    }

    fn backward_params(&mut self, params: &[f64], grad: Array3<f64>, grads: &mut [f64]) {
        self.backward_impl(params, grad, grads, false);
    }
}
