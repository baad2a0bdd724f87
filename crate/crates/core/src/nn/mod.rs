//! Minimal batched neural-network engine.
//!
//! Everything in this crate that trains or differentiates a network goes
//! through this module: plain feed-forward nets built from a fixed layer set
//! (convolution, dense, tanh, sigmoid, nearest-neighbour upsampling, flatten).
//!
//! Layout conventions:
//! - a batch is an `Array2<f64>` with one sample per row;
//! - image features are flattened channels-last, index `(y * w + x) * c + ch`;
//! - parameters of a whole network live in one flat `Vec<f64>` with a layer
//!   map, so checkpoints, optimizers and per-sample gradient norms all see a
//!   single vector.
//!
//! Besides ordinary reverse-mode backpropagation the engine exposes a dual
//! (tangent-in-parameters) pass: [`Network::forward_dual`] propagates a
//! directional perturbation of the parameters alongside the primal values,
//! and [`Network::backward_dual_input`] differentiates a scalar of the
//! (primal, tangent) outputs with respect to the input. Composing the two
//! yields exact input gradients of parameter-gradient functionals, which the
//! inversion losses need.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

mod adam;
mod head;

pub use adam::Adam;
pub use head::{
    batch_cross_entropy, cosine_similarity, cosine_similarity_grads, softmax, softmax_ce_grad,
};

/// Feature shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feat {
    /// Channels-last image.
    Image { h: usize, w: usize, c: usize },
    /// Flat vector.
    Vec(usize),
}

impl Feat {
    pub fn len(&self) -> usize {
        match *self {
            Feat::Image { h, w, c } => h * w * c,
            Feat::Vec(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Layer description, before shape resolution.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum LayerSpec {
    Conv {
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Dense {
        out: usize,
    },
    Tanh,
    Sigmoid,
    Upsample2x,
    Flatten,
    Unflatten {
        h: usize,
        w: usize,
        c: usize,
    },
}

#[derive(Debug, Clone)]
struct Layer {
    spec: LayerSpec,
    input: Feat,
    output: Feat,
    /// Range of this layer's parameters in the flat vector; empty for
    /// parameter-free layers. Weights come first, then biases.
    params: std::ops::Range<usize>,
}

/// A shape-resolved feed-forward network.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    input: Feat,
    output: Feat,
    param_count: usize,
}

fn conv_out(h: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = h + 2 * pad;
    if padded < k {
        return Err(Error::ShapeMismatch {
            expected: format!("spatial size >= kernel {k}"),
            got: format!("{h} with pad {pad}"),
        });
    }
    Ok((padded - k) / stride + 1)
}

impl Network {
    pub fn new(input: Feat, specs: &[LayerSpec]) -> Result<Network> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut cur = input;
        let mut offset = 0usize;
        for spec in specs {
            let (output, n_params) = match *spec {
                LayerSpec::Conv {
                    out_ch,
                    k,
                    stride,
                    pad,
                } => {
                    let Feat::Image { h, w, c } = cur else {
                        return Err(Error::ShapeMismatch {
                            expected: "image input for conv".into(),
                            got: format!("{cur:?}"),
                        });
                    };
                    let oh = conv_out(h, k, stride, pad)?;
                    let ow = conv_out(w, k, stride, pad)?;
                    (
                        Feat::Image {
                            h: oh,
                            w: ow,
                            c: out_ch,
                        },
                        out_ch * k * k * c + out_ch,
                    )
                }
                LayerSpec::Dense { out } => {
                    let n = cur.len();
                    (Feat::Vec(out), out * n + out)
                }
                LayerSpec::Tanh | LayerSpec::Sigmoid => (cur, 0),
                LayerSpec::Upsample2x => {
                    let Feat::Image { h, w, c } = cur else {
                        return Err(Error::ShapeMismatch {
                            expected: "image input for upsample".into(),
                            got: format!("{cur:?}"),
                        });
                    };
                    (Feat::Image { h: h * 2, w: w * 2, c }, 0)
                }
                LayerSpec::Flatten => (Feat::Vec(cur.len()), 0),
                LayerSpec::Unflatten { h, w, c } => {
                    if h * w * c != cur.len() {
                        return Err(Error::ShapeMismatch {
                            expected: format!("vector of length {}", h * w * c),
                            got: format!("{}", cur.len()),
                        });
                    }
                    (Feat::Image { h, w, c }, 0)
                }
            };
            layers.push(Layer {
                spec: *spec,
                input: cur,
                output,
                params: offset..offset + n_params,
            });
            cur = output;
            offset += n_params;
        }
        Ok(Network {
            layers,
            input,
            output: cur,
            param_count: offset,
        })
    }

    pub fn input_feat(&self) -> Feat {
        self.input
    }

    pub fn output_feat(&self) -> Feat {
        self.output
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Feature shape entering layer `idx` (so `feat_at(0)` is the input and
    /// `feat_at(layer_count())` the output).
    pub fn feat_at(&self, idx: usize) -> Feat {
        if idx == self.layers.len() {
            self.output
        } else {
            self.layers[idx].input
        }
    }

    /// Xavier-style initialization, deterministic in the RNG stream.
    pub fn init_params(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        use rand_distr::{Distribution, Normal};
        let mut params = vec![0.0; self.param_count];
        for layer in &self.layers {
            let (fan_in, n_weights) = match layer.spec {
                LayerSpec::Conv { out_ch, k, .. } => {
                    let Feat::Image { c, .. } = layer.input else { unreachable!() };
                    (k * k * c, out_ch * k * k * c)
                }
                LayerSpec::Dense { out } => {
                    let n = layer.input.len();
                    (n, out * n)
                }
                _ => continue,
            };
            let std = (1.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("valid std");
            for p in &mut params[layer.params.start..layer.params.start + n_weights] {
                *p = normal.sample(rng);
            }
            // biases stay zero
        }
        params
    }

    fn check_params(&self, params: &[f64]) {
        assert_eq!(
            params.len(),
            self.param_count,
            "parameter vector length mismatch"
        );
    }

    /// Forward pass; returns all boundary activations,
    /// `acts[0]` = input, `acts[layer_count()]` = output.
    pub fn forward(&self, params: &[f64], x: &Array2<f64>) -> Vec<Array2<f64>> {
        self.check_params(params);
        assert_eq!(x.ncols(), self.input.len(), "input feature length mismatch");
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let y = layer_forward(layer, params, acts.last().unwrap());
            acts.push(y);
        }
        acts
    }

    /// Backward pass from an output-gradient. Optionally accumulates the
    /// (batch-summed) parameter gradient and/or the input gradient.
    pub fn backward(
        &self,
        params: &[f64],
        acts: &[Array2<f64>],
        d_out: &Array2<f64>,
        want_params: bool,
        want_input: bool,
    ) -> (Option<Vec<f64>>, Option<Array2<f64>>) {
        self.backward_from(params, acts, self.layers.len(), d_out, want_params, want_input)
    }

    /// Backward pass seeded at the boundary *entering* layer `from`
    /// (`from == layer_count()` seeds at the output). Used by losses that
    /// differentiate an intermediate feature map.
    pub fn backward_from(
        &self,
        params: &[f64],
        acts: &[Array2<f64>],
        from: usize,
        d_at: &Array2<f64>,
        want_params: bool,
        want_input: bool,
    ) -> (Option<Vec<f64>>, Option<Array2<f64>>) {
        self.check_params(params);
        assert_eq!(acts.len(), self.layers.len() + 1);
        assert!(from <= self.layers.len());
        let mut grad_params = if want_params {
            Some(vec![0.0; self.param_count])
        } else {
            None
        };
        let mut d = d_at.clone();
        for idx in (0..from).rev() {
            let layer = &self.layers[idx];
            let need_input = want_input || idx > 0;
            let (dw, dx) = layer_backward(
                layer,
                params,
                &acts[idx],
                &acts[idx + 1],
                &d,
                grad_params.is_some(),
                need_input,
            );
            if let (Some(gp), Some(dw)) = (grad_params.as_mut(), dw) {
                for (slot, v) in gp[layer.params.clone()].iter_mut().zip(dw) {
                    *slot += v;
                }
            }
            match dx {
                Some(dx) => d = dx,
                None => break,
            }
        }
        let d_input = if want_input { Some(d) } else { None };
        (grad_params, d_input)
    }

    /// Dual forward pass: propagate the primal activations together with the
    /// directional derivative of every activation along a parameter tangent
    /// `s` (i.e. d/dε of the activation at params `θ + ε·s`).
    pub fn forward_dual(
        &self,
        params: &[f64],
        tangent: &[f64],
        x: &Array2<f64>,
    ) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        self.check_params(params);
        self.check_params(tangent);
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut tacts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        tacts.push(Array2::zeros(x.raw_dim()));
        for layer in &self.layers {
            let (y, ty) = layer_forward_dual(
                layer,
                params,
                tangent,
                acts.last().unwrap(),
                tacts.last().unwrap(),
            );
            acts.push(y);
            tacts.push(ty);
        }
        (acts, tacts)
    }

    /// Input gradient of the scalar
    /// `φ = Σ_batch ⟨d_out, out⟩ + ⟨d_tout, tangent_out⟩`
    /// where `out`/`tangent_out` come from [`Network::forward_dual`].
    ///
    /// `d_out` may be a function of the primal output (it is treated as a
    /// constant seed here; the caller is responsible for including any
    /// dependence of the seed on the output, as in a softmax head).
    pub fn backward_dual_input(
        &self,
        params: &[f64],
        tangent: &[f64],
        acts: &[Array2<f64>],
        tacts: &[Array2<f64>],
        d_out: &Array2<f64>,
        d_tout: &Array2<f64>,
    ) -> Array2<f64> {
        self.check_params(params);
        self.check_params(tangent);
        let mut g = d_out.clone();
        let mut gt = d_tout.clone();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let (ng, ngt) = layer_backward_dual(
                layer,
                params,
                tangent,
                &acts[idx],
                &tacts[idx],
                &acts[idx + 1],
                &g,
                &gt,
            );
            g = ng;
            gt = ngt;
        }
        g
    }
}

// ---------------------------------------------------------------------------
// layer kernels
// ---------------------------------------------------------------------------

fn conv_geometry(layer: &Layer) -> (usize, usize, usize, usize, usize, usize, usize, usize, usize) {
    let LayerSpec::Conv { out_ch, k, stride, pad } = layer.spec else {
        unreachable!()
    };
    let Feat::Image { h, w, c } = layer.input else { unreachable!() };
    let Feat::Image { h: oh, w: ow, .. } = layer.output else { unreachable!() };
    (h, w, c, oh, ow, out_ch, k, stride, pad)
}

/// Gather conv patches: rows ordered (batch, oy, ox), columns (ky, kx, c).
fn im2col(layer: &Layer, x: &Array2<f64>) -> Array2<f64> {
    let (h, w, c, oh, ow, _oc, k, stride, pad) = conv_geometry(layer);
    let batch = x.nrows();
    let patch = k * k * c;
    let mut cols = Array2::<f64>::zeros((batch * oh * ow, patch));
    let xs = x.as_slice().expect("contiguous");
    let cs = cols.as_slice_mut().expect("contiguous");
    for b in 0..batch {
        let xb = &xs[b * h * w * c..(b + 1) * h * w * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * patch;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let ix = ix as usize;
                        let src = (iy * w + ix) * c;
                        let dst = row + (ky * k + kx) * c;
                        cs[dst..dst + c].copy_from_slice(&xb[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of column gradients back onto the input image.
fn col2im(layer: &Layer, dcols: &Array2<f64>, batch: usize) -> Array2<f64> {
    let (h, w, c, oh, ow, _oc, k, stride, pad) = conv_geometry(layer);
    let patch = k * k * c;
    let mut dx = Array2::<f64>::zeros((batch, h * w * c));
    let ds = dcols.as_slice().expect("contiguous");
    let xs = dx.as_slice_mut().expect("contiguous");
    for b in 0..batch {
        let xb = &mut xs[b * h * w * c..(b + 1) * h * w * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * patch;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let ix = ix as usize;
                        let dst = (iy * w + ix) * c;
                        let src = row + (ky * k + kx) * c;
                        for ch in 0..c {
                            xb[dst + ch] += ds[src + ch];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn conv_weights<'a>(layer: &Layer, params: &'a [f64]) -> (ArrayView2<'a, f64>, &'a [f64]) {
    let (_, _, c, _, _, oc, k, _, _) = conv_geometry(layer);
    let patch = k * k * c;
    let p = &params[layer.params.clone()];
    let w = ArrayView2::from_shape((oc, patch), &p[..oc * patch]).expect("weight shape");
    (w, &p[oc * patch..])
}

fn dense_weights<'a>(layer: &Layer, params: &'a [f64]) -> (ArrayView2<'a, f64>, &'a [f64]) {
    let LayerSpec::Dense { out } = layer.spec else { unreachable!() };
    let n = layer.input.len();
    let p = &params[layer.params.clone()];
    let w = ArrayView2::from_shape((out, n), &p[..out * n]).expect("weight shape");
    (w, &p[out * n..])
}

fn add_bias(mut y: Array2<f64>, bias: &[f64]) -> Array2<f64> {
    let nc = bias.len();
    for row in y.rows_mut() {
        let row = row.into_slice().expect("contiguous");
        for (i, v) in row.iter_mut().enumerate() {
            *v += bias[i % nc];
        }
    }
    y
}

fn layer_forward(layer: &Layer, params: &[f64], x: &Array2<f64>) -> Array2<f64> {
    match layer.spec {
        LayerSpec::Conv { .. } => {
            let batch = x.nrows();
            let (w, b) = conv_weights(layer, params);
            let cols = im2col(layer, x);
            let y = cols.dot(&w.t());
            let y = add_bias(y, b);
            let out_len = layer.output.len();
            y.into_shape_with_order((batch, out_len)).expect("reshape")
        }
        LayerSpec::Dense { .. } => {
            let (w, b) = dense_weights(layer, params);
            add_bias(x.dot(&w.t()), b)
        }
        LayerSpec::Tanh => x.mapv(f64::tanh),
        LayerSpec::Sigmoid => x.mapv(|v| 1.0 / (1.0 + (-v).exp())),
        LayerSpec::Upsample2x => {
            let Feat::Image { h, w, c } = layer.input else { unreachable!() };
            let batch = x.nrows();
            let mut y = Array2::<f64>::zeros((batch, 4 * h * w * c));
            let xs = x.as_slice().expect("contiguous");
            let ys = y.as_slice_mut().expect("contiguous");
            let (h2, w2) = (2 * h, 2 * w);
            for b in 0..batch {
                let xb = &xs[b * h * w * c..(b + 1) * h * w * c];
                let yb = &mut ys[b * h2 * w2 * c..(b + 1) * h2 * w2 * c];
                for y0 in 0..h {
                    for x0 in 0..w {
                        let src = (y0 * w + x0) * c;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let dst = ((2 * y0 + dy) * w2 + (2 * x0 + dx)) * c;
                                yb[dst..dst + c].copy_from_slice(&xb[src..src + c]);
                            }
                        }
                    }
                }
            }
            y
        }
        LayerSpec::Flatten | LayerSpec::Unflatten { .. } => x.clone(),
    }
}

/// Returns (param grad, input grad); either may be skipped.
fn layer_backward(
    layer: &Layer,
    params: &[f64],
    x: &Array2<f64>,
    y: &Array2<f64>,
    dy: &Array2<f64>,
    want_params: bool,
    want_input: bool,
) -> (Option<Vec<f64>>, Option<Array2<f64>>) {
    match layer.spec {
        LayerSpec::Conv { out_ch, .. } => {
            let batch = x.nrows();
            let Feat::Image { h: oh, w: ow, .. } = layer.output else { unreachable!() };
            let rows = batch * oh * ow;
            let dy_mat = dy
                .view()
                .into_shape_with_order((rows, out_ch))
                .expect("reshape");
            let (w, _) = conv_weights(layer, params);
            let dw = if want_params {
                let cols = im2col(layer, x);
                let dwm = dy_mat.t().dot(&cols);
                let mut g: Vec<f64> = dwm.into_iter().collect();
                // bias grads
                for ch in 0..out_ch {
                    let s = dy_mat.column(ch).sum();
                    g.push(s);
                }
                Some(g)
            } else {
                None
            };
            let dx = if want_input {
                let dcols = dy_mat.dot(&w);
                Some(col2im(layer, &dcols, batch))
            } else {
                None
            };
            (dw, dx)
        }
        LayerSpec::Dense { .. } => {
            let (w, _) = dense_weights(layer, params);
            let dw = if want_params {
                let dwm = dy.t().dot(x);
                let mut g: Vec<f64> = dwm.into_iter().collect();
                for ch in 0..dy.ncols() {
                    g.push(dy.column(ch).sum());
                }
                Some(g)
            } else {
                None
            };
            let dx = want_input.then(|| dy.dot(&w));
            (dw, dx)
        }
        LayerSpec::Tanh => {
            let dx = want_input.then(|| {
                let mut d = dy.clone();
                d.zip_mut_with(y, |g, &yv| *g *= 1.0 - yv * yv);
                d
            });
            (None, dx)
        }
        LayerSpec::Sigmoid => {
            let dx = want_input.then(|| {
                let mut d = dy.clone();
                d.zip_mut_with(y, |g, &yv| *g *= yv * (1.0 - yv));
                d
            });
            (None, dx)
        }
        LayerSpec::Upsample2x => {
            let dx = want_input.then(|| {
                let Feat::Image { h, w, c } = layer.input else { unreachable!() };
                let batch = x.nrows();
                let mut dxa = Array2::<f64>::zeros((batch, h * w * c));
                let ds = dy.as_slice().expect("contiguous");
                let xs = dxa.as_slice_mut().expect("contiguous");
                let (h2, w2) = (2 * h, 2 * w);
                for b in 0..batch {
                    let db = &ds[b * h2 * w2 * c..(b + 1) * h2 * w2 * c];
                    let xb = &mut xs[b * h * w * c..(b + 1) * h * w * c];
                    for y0 in 0..h {
                        for x0 in 0..w {
                            let dst = (y0 * w + x0) * c;
                            for dy0 in 0..2 {
                                for dx0 in 0..2 {
                                    let src = ((2 * y0 + dy0) * w2 + (2 * x0 + dx0)) * c;
                                    for ch in 0..c {
                                        xb[dst + ch] += db[src + ch];
                                    }
                                }
                            }
                        }
                    }
                }
                dxa
            });
            (None, dx)
        }
        LayerSpec::Flatten | LayerSpec::Unflatten { .. } => {
            (None, want_input.then(|| dy.clone()))
        }
    }
}

fn layer_forward_dual(
    layer: &Layer,
    params: &[f64],
    tangent: &[f64],
    x: &Array2<f64>,
    tx: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    match layer.spec {
        LayerSpec::Conv { .. } => {
            let batch = x.nrows();
            let (w, b) = conv_weights(layer, params);
            let (tw, tb) = conv_weights(layer, tangent);
            let cols = im2col(layer, x);
            let tcols = im2col(layer, tx);
            let y = add_bias(cols.dot(&w.t()), b);
            let ty = add_bias(tcols.dot(&w.t()) + cols.dot(&tw.t()), tb);
            let out_len = layer.output.len();
            (
                y.into_shape_with_order((batch, out_len)).expect("reshape"),
                ty.into_shape_with_order((batch, out_len)).expect("reshape"),
            )
        }
        LayerSpec::Dense { .. } => {
            let (w, b) = dense_weights(layer, params);
            let (tw, tb) = dense_weights(layer, tangent);
            let y = add_bias(x.dot(&w.t()), b);
            let ty = add_bias(tx.dot(&w.t()) + x.dot(&tw.t()), tb);
            (y, ty)
        }
        LayerSpec::Tanh => {
            let y = x.mapv(f64::tanh);
            let mut ty = tx.clone();
            ty.zip_mut_with(&y, |t, &yv| *t *= 1.0 - yv * yv);
            (y, ty)
        }
        LayerSpec::Sigmoid => {
            let y = x.mapv(|v| 1.0 / (1.0 + (-v).exp()));
            let mut ty = tx.clone();
            ty.zip_mut_with(&y, |t, &yv| *t *= yv * (1.0 - yv));
            (y, ty)
        }
        LayerSpec::Upsample2x => (
            layer_forward(layer, params, x),
            layer_forward(layer, params, tx),
        ),
        LayerSpec::Flatten | LayerSpec::Unflatten { .. } => (x.clone(), tx.clone()),
    }
}

/// Backward through the dual system: given gradients of a scalar w.r.t. this
/// layer's primal and tangent outputs, return gradients w.r.t. its primal and
/// tangent inputs.
#[allow(clippy::too_many_arguments)]
fn layer_backward_dual(
    layer: &Layer,
    params: &[f64],
    tangent: &[f64],
    x: &Array2<f64>,
    tx: &Array2<f64>,
    y: &Array2<f64>,
    gy: &Array2<f64>,
    gty: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    match layer.spec {
        LayerSpec::Conv { out_ch, .. } => {
            let batch = x.nrows();
            let Feat::Image { h: oh, w: ow, .. } = layer.output else { unreachable!() };
            let rows = batch * oh * ow;
            let (w, _) = conv_weights(layer, params);
            let (tw, _) = conv_weights(layer, tangent);
            let gy_mat = gy.view().into_shape_with_order((rows, out_ch)).expect("reshape");
            let gty_mat = gty
                .view()
                .into_shape_with_order((rows, out_ch))
                .expect("reshape");
            // y = C(x)Wᵀ, ty = C(tx)Wᵀ + C(x)TWᵀ
            let gx = col2im(layer, &(gy_mat.dot(&w) + gty_mat.dot(&tw)), batch);
            let gtx = col2im(layer, &gty_mat.dot(&w), batch);
            (gx, gtx)
        }
        LayerSpec::Dense { .. } => {
            let (w, _) = dense_weights(layer, params);
            let (tw, _) = dense_weights(layer, tangent);
            let gx = gy.dot(&w) + gty.dot(&tw);
            let gtx = gty.dot(&w);
            (gx, gtx)
        }
        LayerSpec::Tanh => {
            // y = tanh(x), ty = (1 - y²)·tx
            // ∂/∂x: (1 - y²)·gy - 2·y·(1 - y²)·tx·gty ; ∂/∂tx: (1 - y²)·gty
            let mut gx = Array2::zeros(x.raw_dim());
            let mut gtx = Array2::zeros(x.raw_dim());
            let (ys, txs) = (y.as_slice().unwrap(), tx.as_slice().unwrap());
            let (gys, gtys) = (gy.as_slice().unwrap(), gty.as_slice().unwrap());
            {
                let gxs = gx.as_slice_mut().unwrap();
                let gtxs = gtx.as_slice_mut().unwrap();
                for i in 0..ys.len() {
                    let d = 1.0 - ys[i] * ys[i];
                    gxs[i] = d * gys[i] - 2.0 * ys[i] * d * txs[i] * gtys[i];
                    gtxs[i] = d * gtys[i];
                }
            }
            (gx, gtx)
        }
        LayerSpec::Sigmoid => {
            // y = σ(x), ty = y(1-y)·tx ; σ'' = y(1-y)(1-2y)
            let mut gx = Array2::zeros(x.raw_dim());
            let mut gtx = Array2::zeros(x.raw_dim());
            let (ys, txs) = (y.as_slice().unwrap(), tx.as_slice().unwrap());
            let (gys, gtys) = (gy.as_slice().unwrap(), gty.as_slice().unwrap());
            {
                let gxs = gx.as_slice_mut().unwrap();
                let gtxs = gtx.as_slice_mut().unwrap();
                for i in 0..ys.len() {
                    let d = ys[i] * (1.0 - ys[i]);
                    gxs[i] = d * gys[i] + d * (1.0 - 2.0 * ys[i]) * txs[i] * gtys[i];
                    gtxs[i] = d * gtys[i];
                }
            }
            (gx, gtx)
        }
        LayerSpec::Upsample2x => {
            let (_, gx) = layer_backward(layer, params, x, y, gy, false, true);
            let (_, gtx) = layer_backward(layer, params, x, y, gty, false, true);
            (gx.unwrap(), gtx.unwrap())
        }
        LayerSpec::Flatten | LayerSpec::Unflatten { .. } => (gy.clone(), gty.clone()),
    }
}

/// L1 norm of a flat gradient.
pub fn l1_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v.abs()).sum()
}

/// Elementwise sign with sign(0) = 0.
pub fn sign_vec(g: &[f64]) -> Vec<f64> {
    g.iter()
        .map(|&v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

pub fn batch_from_rows(rows: &[Vec<f64>]) -> Array1<f64> {
    Array1::from_vec(rows.concat())
}
