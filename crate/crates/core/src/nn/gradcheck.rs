//! Finite-difference verification of analytic gradients.

use ndarray::{Array2, Array3};

use super::layers::Mode;
use super::loss::softmax_ce;
use super::model::{ModelConfig, Network};
use crate::error::Result;

/// Max over parameters of |a − n| / max(|a|, |n|, 1e-12), where `a` is the
/// backpropagated gradient and `n` the central difference with step `h`.
/// Runs in eval mode so dropout is off; a model without parameters gives 0.
pub fn grad_check(config: &ModelConfig, batch: &Array3<f64>, labels: &[usize], h: f64) -> Result<f64> {
    let mut net = Network::build(config)?;
    let mut params = net.init_params(config.seed);
    grad_check_at(&mut net, &mut params, batch, labels, h)
}

pub fn grad_check_at(
    net: &mut Network,
    params: &mut [f64],
    batch: &Array3<f64>,
    labels: &[usize],
    h: f64,
) -> Result<f64> {
    let (_, analytic) = net.loss_and_grad(params, batch.clone(), labels, &mut Mode::Eval)?;
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + h;
        let plus = net.forward(params, batch.clone(), &mut Mode::Eval)?;
        params[i] = orig - h;
        let minus = net.forward(params, batch.clone(), &mut Mode::Eval)?;
        params[i] = orig;
        let n = loss_difference(&plus, &minus, labels)? / (2.0 * h);
        let a = analytic[i];
        worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-12));
    }
    Ok(worst)
}

/// ce(plus) − ce(minus), formed from logit differences so that gradients far
/// below the loss's own rounding step stay resolvable.
pub fn loss_difference(plus: &Array2<f64>, minus: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    // validates shapes and labels
    softmax_ce(plus, labels)?;
    softmax_ce(minus, labels)?;
    let mut total = 0.0;
    for ((p, m), &y) in plus.rows().into_iter().zip(minus.rows()).zip(labels) {
        let shift = m.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        // log Σe^{p} − log Σe^{m} = log1p(Σ e^{m−shift}·expm1(p−m) / Σ e^{m−shift})
        let mut base = 0.0;
        let mut delta = 0.0;
        for (&pj, &mj) in p.iter().zip(m.iter()) {
            let w = (mj - shift).exp();
            base += w;
            delta += w * (pj - mj).exp_m1();
        }
        total += (delta / base).ln_1p() - (p[y] - m[y]);
    }
    Ok(total / labels.len() as f64)
}
