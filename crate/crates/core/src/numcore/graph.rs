//! Reverse-mode tape over [`SequenceTensor`] values.
//!
//! Every op appends a node holding its forward value and a pullback that
//! maps the node's output gradient to contributions for its parents.
//! Nodes are topologically ordered by construction, so the backward sweep
//! is a single reverse pass.

use std::collections::HashMap;

use super::ops::{self, Activation};
use super::params::{ParamId, ParamStore};
use super::tensor::SequenceTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type Contribs = Vec<(Var, SequenceTensor)>;
type Pullback = Box<dyn Fn(&SequenceTensor, &SequenceTensor, &[Node]) -> Contribs + Send + Sync>;

pub struct Node {
    value: SequenceTensor,
    pullback: Option<Pullback>,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients of every node after [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<SequenceTensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&SequenceTensor> {
        self.grads[v.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &SequenceTensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: SequenceTensor, pullback: Option<Pullback>) -> Var {
        self.nodes.push(Node {
            value,
            pullback,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn op<F>(&mut self, value: SequenceTensor, f: F) -> Var
    where
        F: Fn(&SequenceTensor, &SequenceTensor, &[Node]) -> Contribs + Send + Sync + 'static,
    {
        self.push(value, Some(Box::new(f)))
    }

    pub fn constant(&mut self, value: SequenceTensor) -> Var {
        self.push(value, None)
    }

    /// Leaf bound to a stored parameter; one node per parameter per graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), None);
        self.nodes[v.0].param = Some(id);
        self.param_vars.insert(id, v);
        v
    }

    /// Reverse sweep from the scalar `loss`; parameter gradients are added
    /// into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Gradients {
        let (r, c) = self.shape(loss);
        let grads = self.backward_seeded(loss, SequenceTensor::filled(r, c, 1.0));
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, grads.grads[i].as_ref()) {
                store.accumulate_grad(id, g);
            }
        }
        grads
    }

    pub fn backward_seeded(&self, out: Var, seed: SequenceTensor) -> Gradients {
        let mut grads: Vec<Option<SequenceTensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(pb) = &self.nodes[i].pullback else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            for (p, contrib) in pb(&g, &self.nodes[i].value, &self.nodes[..i]) {
                debug_assert!(p.0 < i);
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.ensure_same_shape(vb, "add")?;
        let out = va.zip_map(vb, |x, y| x + y);
        Ok(self.op(out, move |g, _, _| vec![(a, g.clone()), (b, g.clone())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.ensure_same_shape(vb, "sub")?;
        let out = va.zip_map(vb, |x, y| x - y);
        Ok(self.op(out, move |g, _, _| vec![(a, g.clone()), (b, g.scale(-1.0))]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.ensure_same_shape(vb, "mul")?;
        let out = va.zip_map(vb, |x, y| x * y);
        Ok(self.op(out, move |g, _, n| {
            vec![
                (a, g.zip_map(&n[b.0].value, |x, y| x * y)),
                (b, g.zip_map(&n[a.0].value, |x, y| x * y)),
            ]
        }))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.op(out, move |g, _, _| vec![(a, g.scale(s))])
    }

    /// Multiplication by a fixed tensor (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: SequenceTensor) -> Result<Var> {
        self.value(a).ensure_same_shape(&mask, "mul_const")?;
        let out = self.value(a).zip_map(&mask, |x, m| x * m);
        Ok(self.op(out, move |g, _, _| vec![(a, g.zip_map(&mask, |x, m| x * m))]))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let out = ops::activation(self.value(a), kind);
        self.op(out, move |g, y, n| {
            let d = match kind {
                Activation::Sigmoid => g.zip_map(y, |gv, s| gv * s * (1.0 - s)),
                Activation::Gelu => g.zip_map(&n[a.0].value, |gv, z| gv * ops::gelu_derivative(z)),
            };
            vec![(a, d)]
        })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Gelu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    /// `x[c, t] * scale[c]` for a `C × 1` scale.
    pub fn scale_channels(&mut self, x: Var, scale: Var) -> Result<Var> {
        let (vx, vs) = (self.value(x), self.value(scale));
        if vs.len() != vx.channels() {
            return Err(Error::shape("scale_channels", vx.shape_str(), vs.shape_str()));
        }
        let mut out = vx.clone();
        for c in 0..vx.channels() {
            let s = vs.data()[c];
            out.row_mut(c).iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.op(out, move |g, _, n| {
            let (vx, vs) = (&n[x.0].value, &n[scale.0].value);
            let mut gx = g.clone();
            let mut gs = SequenceTensor::zeros(vs.channels(), vs.time());
            for c in 0..vx.channels() {
                let s = vs.data()[c];
                gx.row_mut(c).iter_mut().for_each(|v| *v *= s);
                gs.data_mut()[c] = g.row(c).iter().zip(vx.row(c)).map(|(a, b)| a * b).sum();
            }
            vec![(x, gx), (scale, gs)]
        }))
    }

    /// `σ_t · a[c, t] + (1 − σ_t) · b[c, t]` with `σ` of shape `1 × T`.
    pub fn gate_mix(&mut self, a: Var, b: Var, sigma: Var) -> Result<Var> {
        let (va, vb, vs) = (self.value(a), self.value(b), self.value(sigma));
        va.ensure_same_shape(vb, "gate_mix")?;
        if vs.channels() != 1 || vs.time() != va.time() {
            return Err(Error::shape(
                "gate_mix",
                format!("branches {}", va.shape_str()),
                format!("gate {}", vs.shape_str()),
            ));
        }
        let s = vs.row(0);
        let mut out = va.clone();
        for c in 0..va.channels() {
            for (t, o) in out.row_mut(c).iter_mut().enumerate() {
                *o = s[t] * va.get(c, t) + (1.0 - s[t]) * vb.get(c, t);
            }
        }
        Ok(self.op(out, move |g, _, n| {
            let (va, vb, vs) = (&n[a.0].value, &n[b.0].value, &n[sigma.0].value);
            let s = vs.row(0);
            let (ch, tt) = va.shape();
            let mut ga = g.clone();
            let mut gb = g.clone();
            let mut gs = SequenceTensor::zeros(1, tt);
            for c in 0..ch {
                for t in 0..tt {
                    let gv = g.get(c, t);
                    ga.set(c, t, gv * s[t]);
                    gb.set(c, t, gv * (1.0 - s[t]));
                    gs.data_mut()[t] += gv * (va.get(c, t) - vb.get(c, t));
                }
            }
            vec![(a, ga), (b, gb), (sigma, gs)]
        }))
    }

    // ---- layers ----

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = ops::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.op(out, move |g, _, n| {
            let (gx, gw, gb) = ops::linear_backward(&n[x.0].value, &n[w.0].value, g);
            let mut v = vec![(x, gx), (w, gw)];
            if let Some(b) = b {
                v.push((b, gb));
            }
            v
        }))
    }

    pub fn dwconv1d(&mut self, x: Var, k: Var) -> Result<Var> {
        let out = ops::dwconv1d(self.value(x), self.value(k))?;
        Ok(self.op(out, move |g, _, n| {
            let (gx, gk) = ops::dwconv1d_backward(&n[x.0].value, &n[k.0].value, g);
            vec![(x, gx), (k, gk)]
        }))
    }

    pub fn layernorm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let out = ops::layernorm(self.value(x), self.value(gain), self.value(shift), ops::LAYERNORM_EPS)?;
        Ok(self.op(out, move |g, _, n| {
            let (xhat, inv_std) = ops::layernorm_normalize(&n[x.0].value, ops::LAYERNORM_EPS);
            let (gx, gg, gb) = ops::layernorm_backward(&xhat, &inv_std, &n[gain.0].value, g);
            vec![(x, gx), (gain, gg), (shift, gb)]
        }))
    }

    /// Batch-statistics normalization of every column of `x`; returns the
    /// output and the batch `(mean, biased var)` for running-stat updates.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gain: Var,
        shift: Var,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let vx = self.value(x);
        let c = vx.channels();
        if vx.time() < 2 {
            return Err(Error::InvalidArgument(
                "batchnorm train mode needs at least 2 positions per channel".into(),
            ));
        }
        if self.value(gain).len() != c || self.value(shift).len() != c {
            return Err(Error::shape("batchnorm", vx.shape_str(), self.value(gain).shape_str()));
        }
        let (mean, var) = ops::channel_moments(vx);
        let out = ops::normalize_channels(vx, &mean, &var, self.value(gain).data(), self.value(shift).data());
        let (m2, v2) = (mean.clone(), var.clone());
        let node = self.op(out, move |g, _, n| {
            let vx = &n[x.0].value;
            let gain_v = &n[gain.0].value;
            let (c, nn) = vx.shape();
            let mut gx = SequenceTensor::zeros(c, nn);
            let mut gg = SequenceTensor::zeros(c, 1);
            let mut gb = SequenceTensor::zeros(c, 1);
            for ch in 0..c {
                let is = 1.0 / (v2[ch] + ops::BATCHNORM_EPS).sqrt();
                let xr = vx.row(ch);
                let gr = g.row(ch);
                let xhat: Vec<f64> = xr.iter().map(|v| (v - m2[ch]) * is).collect();
                let sum_g: f64 = gr.iter().sum();
                let sum_gx: f64 = gr.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                gg.data_mut()[ch] = sum_gx;
                gb.data_mut()[ch] = sum_g;
                let k = gain_v.data()[ch] * is / nn as f64;
                for (i, o) in gx.row_mut(ch).iter_mut().enumerate() {
                    *o = k * (nn as f64 * gr[i] - sum_g - xhat[i] * sum_gx);
                }
            }
            vec![(x, gx), (gain, gg), (shift, gb)]
        });
        Ok((node, mean, var))
    }

    /// Normalization with fixed statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gain: Var,
        shift: Var,
        mean: Vec<f64>,
        var: Vec<f64>,
    ) -> Result<Var> {
        let vx = self.value(x);
        if self.value(gain).len() != vx.channels() || mean.len() != vx.channels() {
            return Err(Error::shape("batchnorm", vx.shape_str(), self.value(gain).shape_str()));
        }
        let out = ops::normalize_channels(vx, &mean, &var, self.value(gain).data(), self.value(shift).data());
        Ok(self.op(out, move |g, _, n| {
            let vx = &n[x.0].value;
            let gain_v = &n[gain.0].value;
            let (c, _) = vx.shape();
            let mut gx = g.clone();
            let mut gg = SequenceTensor::zeros(c, 1);
            let mut gb = SequenceTensor::zeros(c, 1);
            for ch in 0..c {
                let is = 1.0 / (var[ch] + ops::BATCHNORM_EPS).sqrt();
                let gr = g.row(ch);
                gb.data_mut()[ch] = gr.iter().sum();
                gg.data_mut()[ch] = gr.iter().zip(vx.row(ch)).map(|(a, b)| a * (b - mean[ch]) * is).sum();
                let k = gain_v.data()[ch] * is;
                gx.row_mut(ch).iter_mut().for_each(|v| *v *= k);
            }
            vec![(x, gx), (gain, gg), (shift, gb)]
        }))
    }

    // ---- structural ----

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&SequenceTensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = SequenceTensor::concat_channels(&refs)?;
        let parts = parts.to_vec();
        Ok(self.op(out, move |g, _, n| {
            let mut start = 0;
            parts
                .iter()
                .map(|&p| {
                    let c = n[p.0].value.channels();
                    let piece = g.slice_channels(start, c);
                    start += c;
                    (p, piece)
                })
                .collect()
        }))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        if start + len > vx.channels() {
            return Err(Error::shape(
                "slice_channels",
                vx.shape_str(),
                format!("[{start}, {})", start + len),
            ));
        }
        let out = vx.slice_channels(start, len);
        Ok(self.op(out, move |g, _, n| {
            let (c, t) = n[x.0].value.shape();
            let mut gx = SequenceTensor::zeros(c, t);
            gx.data_mut()[start * t..(start + len) * t].copy_from_slice(g.data());
            vec![(x, gx)]
        }))
    }

    pub fn concat_time(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&SequenceTensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = SequenceTensor::concat_time(&refs)?;
        let parts = parts.to_vec();
        Ok(self.op(out, move |g, _, n| {
            let mut start = 0;
            parts
                .iter()
                .map(|&p| {
                    let t = n[p.0].value.time();
                    let piece = g.slice_time(start, t);
                    start += t;
                    (p, piece)
                })
                .collect()
        }))
    }

    pub fn slice_time(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        if start + len > vx.time() {
            return Err(Error::shape(
                "slice_time",
                vx.shape_str(),
                format!("[{start}, {})", start + len),
            ));
        }
        let out = vx.slice_time(start, len);
        Ok(self.op(out, move |g, _, n| {
            let (c, t) = n[x.0].value.shape();
            let mut gx = SequenceTensor::zeros(c, t);
            for ch in 0..c {
                gx.row_mut(ch)[start..start + len].copy_from_slice(g.row(ch));
            }
            vec![(x, gx)]
        }))
    }

    /// Temporal reversal.
    pub fn flip(&mut self, x: Var) -> Var {
        let out = flip_time(self.value(x));
        self.op(out, move |g, _, _| vec![(x, flip_time(g))])
    }

    pub fn temporal_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = ops::temporal_avg_pool(self.value(x))?;
        Ok(self.op(out, move |g, _, n| {
            let (c, t) = n[x.0].value.shape();
            let mut gx = SequenceTensor::zeros(c, t);
            for ch in 0..c {
                let gr = g.row(ch);
                let o = gx.row_mut(ch);
                for (i, gv) in gr.iter().enumerate() {
                    if 2 * i + 1 < t {
                        o[2 * i] = 0.5 * gv;
                        o[2 * i + 1] = 0.5 * gv;
                    } else {
                        o[2 * i] = *gv;
                    }
                }
            }
            vec![(x, gx)]
        }))
    }

    /// `C × T → C × 1` temporal mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = SequenceTensor::vector(ops::global_avg_pool(self.value(x))?);
        Ok(self.op(out, move |g, _, n| {
            let (c, t) = n[x.0].value.shape();
            let mut gx = SequenceTensor::zeros(c, t);
            for ch in 0..c {
                let v = g.data()[ch] / t as f64;
                gx.row_mut(ch).fill(v);
            }
            vec![(x, gx)]
        }))
    }

    /// Mean squared error between `1 × 1` predictions and fixed targets.
    pub fn mse(&mut self, preds: &[Var], targets: &[f64]) -> Result<Var> {
        if preds.is_empty() || preds.len() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "mse needs equal non-empty batches, got {} predictions and {} targets",
                preds.len(),
                targets.len()
            )));
        }
        let yhat: Vec<f64> = preds.iter().map(|&p| self.value(p).data()[0]).collect();
        let loss = crate::model::mse_loss(&yhat, targets)?;
        let preds = preds.to_vec();
        let targets = targets.to_vec();
        let n = preds.len() as f64;
        Ok(self.op(SequenceTensor::scalar(loss), move |g, _, nodes| {
            let gv = g.data()[0];
            preds
                .iter()
                .zip(&targets)
                .map(|(&p, &y)| {
                    let d = 2.0 * (nodes[p.0].value.data()[0] - y) / n;
                    (p, SequenceTensor::scalar(gv * d))
                })
                .collect()
        }))
    }

    /// Registers a custom differentiable op. `pullback(gout, out, nodes)`
    /// must return contributions only for `inputs`.
    pub fn custom<F>(&mut self, value: SequenceTensor, pullback: F) -> Var
    where
        F: Fn(&SequenceTensor, &SequenceTensor, &[Node]) -> Contribs + Send + Sync + 'static,
    {
        self.op(value, pullback)
    }
}

impl Node {
    pub fn value(&self) -> &SequenceTensor {
        &self.value
    }
}

pub(crate) fn flip_time(x: &SequenceTensor) -> SequenceTensor {
    let mut out = x.clone();
    for c in 0..x.channels() {
        out.row_mut(c).reverse();
    }
    out
}
