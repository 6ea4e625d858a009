use rand::Rng;

use super::{bce_from_logit, sigmoid, Layout, ParamVector};
use crate::error::{Error, Result};
use crate::schema::{LabeledMatrix, N_FEATURES};

/// Feed-forward network with ReLU hidden layers and a sigmoid output unit,
/// stored as its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    params: ParamVector,
    dims: Vec<(usize, usize)>,
}

/// Post-activation values of every layer for one input; the last entry is
/// the output logit.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    pub activations: Vec<Vec<f64>>,
    pub logit: f64,
}

impl MlpModel {
    pub fn from_params(params: ParamVector) -> Result<Self> {
        match &params.layout {
            Layout::Mlp { .. } if params.values.len() == params.layout.len() => {}
            other => {
                return Err(Error::LayoutMismatch {
                    expected: "mlp layout".into(),
                    found: other.to_string(),
                })
            }
        }
        let dims = params.layout.layers();
        Ok(MlpModel { params, dims })
    }

    pub fn zeros(hidden: &[usize]) -> Self {
        MlpModel::from_params(ParamVector::zeros(Layout::mlp(hidden))).expect("zeros match their layout")
    }

    pub fn flatten(&self) -> ParamVector {
        self.params.clone()
    }

    pub fn unflatten(pv: &ParamVector, layout: &Layout) -> Result<Self> {
        pv.ensure_layout(layout)?;
        MlpModel::from_params(pv.clone())
    }

    pub fn layout(&self) -> &Layout {
        &self.params.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params.values
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params.values
    }

    pub fn predict_batch(&self, rows: &[[f64; N_FEATURES]]) -> Vec<f64> {
        let x: Vec<f64> = rows.iter().flatten().copied().collect();
        let acts = forward(&self.params.values, &self.dims, &x, rows.len());
        acts.last().map(|z| z.iter().map(|&z| sigmoid(z)).collect()).unwrap_or_default()
    }
}

pub(crate) fn layer_offsets(dims: &[(usize, usize)]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(dims.len());
    let mut off = 0;
    for &(i, o) in dims {
        offsets.push(off);
        off += i * o + o;
    }
    offsets
}

/// `c = a * b + beta * c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserted index bounds keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Row-major activations per layer for a `rows x inputs` batch. Entry 0 is
/// the input, hidden entries are post-ReLU, the last is the output logit.
fn forward(params: &[f64], dims: &[(usize, usize)], x: &[f64], rows: usize) -> Vec<Vec<f64>> {
    let offsets = layer_offsets(dims);
    let mut acts = Vec::with_capacity(dims.len() + 1);
    acts.push(x.to_vec());
    for (l, (&(fin, fout), &off)) in dims.iter().zip(&offsets).enumerate() {
        let w = &params[off..off + fin * fout];
        let bias = &params[off + fin * fout..off + fin * fout + fout];
        let mut z = Vec::with_capacity(rows * fout);
        for _ in 0..rows {
            z.extend_from_slice(bias);
        }
        // z (rows x fout) += prev (rows x fin) * W^T, W stored fout x fin
        gemm((rows, fin, fout), &acts[l], (fin, 1), w, (1, fin), 1.0, &mut z, (fout, 1));
        if l + 1 < dims.len() {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        acts.push(z);
    }
    acts
}

pub fn mlp_forward(model: &MlpModel, x: &[f64; N_FEATURES]) -> Result<(f64, MlpCache)> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mut acts = forward(model.params(), &model.dims, x, 1);
    let logit = acts.pop().map(|z| z[0]).unwrap_or(0.0);
    Ok((sigmoid(logit), MlpCache { activations: acts, logit }))
}

/// Mean BCE plus `alpha / (2 * batch)` times the squared weights (biases
/// excluded), with its backpropagated gradient.
pub fn mlp_loss_and_grad(model: &MlpModel, batch: &LabeledMatrix, l2_alpha: f64) -> Result<(f64, ParamVector)> {
    let (loss, grad) = loss_and_grad_raw(model.params(), &model.dims, batch, l2_alpha)?;
    Ok((
        loss,
        ParamVector {
            values: grad,
            layout: model.layout().clone(),
        },
    ))
}

pub(crate) fn loss_and_grad_raw(
    params: &[f64],
    dims: &[(usize, usize)],
    batch: &LabeledMatrix,
    l2_alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let rows = batch.len();
    let nb = rows as f64;
    let x = batch.flat_rows();
    let acts = forward(params, dims, &x, rows);
    let offsets = layer_offsets(dims);

    let logits = acts.last().expect("at least one layer");
    let mut loss = 0.0;
    let mut delta = Vec::with_capacity(rows);
    for (&z, &y) in logits.iter().zip(&batch.labels) {
        loss += bce_from_logit(z, y);
        delta.push((sigmoid(z) - if y { 1.0 } else { 0.0 }) / nb);
    }
    loss /= nb;

    let mut penalty = 0.0;
    for (&(fin, fout), &off) in dims.iter().zip(&offsets) {
        penalty += params[off..off + fin * fout].iter().map(|w| w * w).sum::<f64>();
    }
    loss += l2_alpha / (2.0 * nb) * penalty;

    let mut grad = vec![0.0; params.len()];
    for l in (0..dims.len()).rev() {
        let (fin, fout) = dims[l];
        let off = offsets[l];
        let w = &params[off..off + fin * fout];
        let prev = &acts[l];
        {
            let (gw, gb) = grad[off..off + fin * fout + fout].split_at_mut(fin * fout);
            // dW (fout x fin) = delta^T (fout x rows) * prev (rows x fin)
            gemm((fout, rows, fin), &delta, (1, fout), prev, (fin, 1), 0.0, gw, (fin, 1));
            for (g, wv) in gw.iter_mut().zip(w) {
                *g += l2_alpha / nb * wv;
            }
            for r in 0..rows {
                for (g, d) in gb.iter_mut().zip(&delta[r * fout..(r + 1) * fout]) {
                    *g += d;
                }
            }
        }
        if l > 0 {
            // d prev (rows x fin) = delta (rows x fout) * W (fout x fin), masked by ReLU
            let mut back = vec![0.0; rows * fin];
            gemm((rows, fout, fin), &delta, (fout, 1), w, (fin, 1), 0.0, &mut back, (fin, 1));
            for (b, a) in back.iter_mut().zip(prev) {
                if *a <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = back;
        }
    }
    Ok((loss, grad))
}

/// Glorot-uniform weights, zero biases.
pub fn glorot_init<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> MlpModel {
    let mut model = MlpModel::zeros(hidden);
    let dims = model.dims.clone();
    let offsets = layer_offsets(&dims);
    for (&(fin, fout), &off) in dims.iter().zip(&offsets) {
        let bound = (6.0 / (fin + fout) as f64).sqrt();
        for w in &mut model.params_mut()[off..off + fin * fout] {
            *w = rng.random_range(-bound..bound);
        }
    }
    model
}
