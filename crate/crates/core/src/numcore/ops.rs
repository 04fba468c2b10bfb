//! Forward kernels on [`SequenceTensor`] and the matching hand-derived
//! adjoints used by the tape.
//!
//! Convolution convention: cross-correlation, zero padding of `(k - 1) / 2`
//! on each side, same-length output. No kernel flip anywhere.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::rng::RngState;
use super::tensor::SequenceTensor;
use crate::error::{Error, Result};

pub const LAYERNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Gelu,
}

/// `weight · x + bias` per time step.
pub fn linear(
    x: &SequenceTensor,
    weight: &SequenceTensor,
    bias: Option<&SequenceTensor>,
) -> Result<SequenceTensor> {
    let (c_out, c_in) = weight.shape();
    if c_in != x.channels() {
        return Err(Error::shape(
            "linear",
            format!("weight {}", weight.shape_str()),
            format!("input {}", x.shape_str()),
        ));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::shape(
                "linear",
                format!("weight {}", weight.shape_str()),
                format!("bias {}", b.shape_str()),
            ));
        }
    }
    let t = x.time();
    let mut out = SequenceTensor::zeros(c_out, t);
    let w = weight.data();
    let xd = x.data();
    let od = out.data_mut();
    for o in 0..c_out {
        let orow = &mut od[o * t..(o + 1) * t];
        if let Some(b) = bias {
            orow.fill(b.data()[o]);
        }
        for i in 0..c_in {
            let wv = w[o * c_in + i];
            if wv == 0.0 {
                continue;
            }
            let xrow = &xd[i * t..(i + 1) * t];
            for (ov, xv) in orow.iter_mut().zip(xrow) {
                *ov += wv * xv;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`linear`]: returns `(dx, dW, db)`.
pub fn linear_backward(
    x: &SequenceTensor,
    weight: &SequenceTensor,
    gout: &SequenceTensor,
) -> (SequenceTensor, SequenceTensor, SequenceTensor) {
    let (c_out, c_in) = weight.shape();
    let t = x.time();
    let mut gx = SequenceTensor::zeros(c_in, t);
    let mut gw = SequenceTensor::zeros(c_out, c_in);
    let mut gb = SequenceTensor::zeros(c_out, 1);
    let xd = x.data();
    let gd = gout.data();
    let w = weight.data();
    for o in 0..c_out {
        let grow = &gd[o * t..(o + 1) * t];
        gb.data_mut()[o] = grow.iter().sum();
        for i in 0..c_in {
            let xrow = &xd[i * t..(i + 1) * t];
            gw.data_mut()[o * c_in + i] = grow.iter().zip(xrow).map(|(a, b)| a * b).sum();
            let wv = w[o * c_in + i];
            if wv != 0.0 {
                let gxrow = &mut gx.data_mut()[i * t..(i + 1) * t];
                for (gxv, gv) in gxrow.iter_mut().zip(grow) {
                    *gxv += wv * gv;
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Depthwise "same" cross-correlation with an odd kernel per channel.
pub fn dwconv1d(x: &SequenceTensor, kernels: &SequenceTensor) -> Result<SequenceTensor> {
    let k = kernels.time();
    if k % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "dwconv1d kernel size must be odd, got {k}"
        )));
    }
    if kernels.channels() != x.channels() {
        return Err(Error::shape(
            "dwconv1d",
            format!("kernels {}", kernels.shape_str()),
            format!("input {}", x.shape_str()),
        ));
    }
    let pad = (k / 2) as isize;
    let t = x.time() as isize;
    let mut out = SequenceTensor::zeros(x.channels(), x.time());
    for c in 0..x.channels() {
        let xr = x.row(c);
        let kr = kernels.row(c);
        let or = out.row_mut(c);
        for (tt, ov) in or.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, kv) in kr.iter().enumerate() {
                let src = tt as isize + j as isize - pad;
                if (0..t).contains(&src) {
                    acc += kv * xr[src as usize];
                }
            }
            *ov = acc;
        }
    }
    Ok(out)
}

/// Adjoint of [`dwconv1d`]: returns `(dx, dkernels)`.
pub fn dwconv1d_backward(
    x: &SequenceTensor,
    kernels: &SequenceTensor,
    gout: &SequenceTensor,
) -> (SequenceTensor, SequenceTensor) {
    let k = kernels.time();
    let pad = (k / 2) as isize;
    let t = x.time() as isize;
    let mut gx = SequenceTensor::zeros(x.channels(), x.time());
    let mut gk = SequenceTensor::zeros(kernels.channels(), k);
    for c in 0..x.channels() {
        let xr = x.row(c);
        let kr = kernels.row(c).to_vec();
        let gr = gout.row(c);
        let mut gkr = vec![0.0; k];
        let gxr = gx.row_mut(c);
        for (tt, gv) in gr.iter().enumerate() {
            for j in 0..k {
                let src = tt as isize + j as isize - pad;
                if (0..t).contains(&src) {
                    gkr[j] += gv * xr[src as usize];
                    gxr[src as usize] += gv * kr[j];
                }
            }
        }
        gk.row_mut(c).copy_from_slice(&gkr);
    }
    (gx, gk)
}

pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Exact GELU, `0.5 z (1 + erf(z / √2))`.
#[inline]
pub fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + libm::erf(z * FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_derivative(z: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(z * FRAC_1_SQRT_2));
    let pdf = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    cdf + z * pdf
}

pub fn activation(x: &SequenceTensor, kind: Activation) -> SequenceTensor {
    match kind {
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Gelu => x.map(gelu),
    }
}

/// Per-time-step normalization across channels (biased variance).
pub fn layernorm(
    x: &SequenceTensor,
    gain: &SequenceTensor,
    shift: &SequenceTensor,
    eps: f64,
) -> Result<SequenceTensor> {
    let c = x.channels();
    if c < 1 {
        return Err(Error::InvalidArgument("layernorm needs at least one channel".into()));
    }
    if gain.len() != c || shift.len() != c {
        return Err(Error::shape(
            "layernorm",
            format!("input {}", x.shape_str()),
            format!("gain {} shift {}", gain.shape_str(), shift.shape_str()),
        ));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("layernorm eps must be > 0, got {eps}")));
    }
    let (xhat, _) = layernorm_normalize(x, eps);
    let mut out = xhat;
    for ch in 0..c {
        let (g, b) = (gain.data()[ch], shift.data()[ch]);
        for v in out.row_mut(ch) {
            *v = g * *v + b;
        }
    }
    Ok(out)
}

/// Returns normalized values and the per-step inverse standard deviation.
pub(crate) fn layernorm_normalize(x: &SequenceTensor, eps: f64) -> (SequenceTensor, Vec<f64>) {
    let (c, t) = x.shape();
    let mut xhat = SequenceTensor::zeros(c, t);
    let mut inv_std = vec![0.0; t];
    for tt in 0..t {
        let mean = (0..c).map(|ch| x.get(ch, tt)).sum::<f64>() / c as f64;
        let var = (0..c).map(|ch| (x.get(ch, tt) - mean).powi(2)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[tt] = is;
        for ch in 0..c {
            xhat.set(ch, tt, (x.get(ch, tt) - mean) * is);
        }
    }
    (xhat, inv_std)
}

/// Adjoint of layer norm: returns `(dx, dgain, dshift)`.
pub(crate) fn layernorm_backward(
    xhat: &SequenceTensor,
    inv_std: &[f64],
    gain: &SequenceTensor,
    gout: &SequenceTensor,
) -> (SequenceTensor, SequenceTensor, SequenceTensor) {
    let (c, t) = xhat.shape();
    let mut gx = SequenceTensor::zeros(c, t);
    let mut gg = SequenceTensor::zeros(c, 1);
    let mut gb = SequenceTensor::zeros(c, 1);
    for tt in 0..t {
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for ch in 0..c {
            let go = gout.get(ch, tt);
            gg.data_mut()[ch] += go * xhat.get(ch, tt);
            gb.data_mut()[ch] += go;
            let d = go * gain.data()[ch];
            sum_d += d;
            sum_dx += d * xhat.get(ch, tt);
        }
        let n = c as f64;
        for ch in 0..c {
            let d = gout.get(ch, tt) * gain.data()[ch];
            let v = inv_std[tt] / n * (n * d - sum_d - xhat.get(ch, tt) * sum_dx);
            gx.set(ch, tt, v);
        }
    }
    (gx, gg, gb)
}

/// Running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormStats {
    /// Initial statistics: mean 0, variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Per-channel mean and biased variance over every column of `x`.
pub(crate) fn channel_moments(x: &SequenceTensor) -> (Vec<f64>, Vec<f64>) {
    let n = x.time() as f64;
    let mut mean = Vec::with_capacity(x.channels());
    let mut var = Vec::with_capacity(x.channels());
    for c in 0..x.channels() {
        let r = x.row(c);
        let m = r.iter().sum::<f64>() / n;
        mean.push(m);
        var.push(r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n);
    }
    (mean, var)
}

/// Batch normalization over a batch of `C × T` tensors.
///
/// Train mode normalizes each channel over all `(sample, time)` positions
/// and updates `stats` with momentum 0.1 (running variance uses the
/// unbiased estimate). Eval mode reads `stats` only.
pub fn batchnorm(
    batch: &[SequenceTensor],
    gain: &SequenceTensor,
    shift: &SequenceTensor,
    stats: &mut BatchNormStats,
    mode: Mode,
) -> Result<Vec<SequenceTensor>> {
    let refs: Vec<&SequenceTensor> = batch.iter().collect();
    let joined = SequenceTensor::concat_time(&refs)?;
    let c = joined.channels();
    if gain.len() != c || shift.len() != c || stats.mean.len() != c {
        return Err(Error::shape(
            "batchnorm",
            format!("input {}", joined.shape_str()),
            format!("gain {}", gain.shape_str()),
        ));
    }
    let (mean, var) = match mode {
        Mode::Train => {
            if joined.time() < 2 {
                return Err(Error::InvalidArgument(
                    "batchnorm train mode needs at least 2 positions per channel".into(),
                ));
            }
            let (m, v) = channel_moments(&joined);
            update_running_stats(stats, &m, &v, joined.time());
            (m, v)
        }
        Mode::Eval => (stats.mean.clone(), stats.var.clone()),
    };
    let normalized = normalize_channels(&joined, &mean, &var, gain.data(), shift.data());
    let mut out = Vec::with_capacity(batch.len());
    let mut start = 0;
    for b in batch {
        out.push(normalized.slice_time(start, b.time()));
        start += b.time();
    }
    Ok(out)
}

pub(crate) fn update_running_stats(stats: &mut BatchNormStats, mean: &[f64], var: &[f64], n: usize) {
    let unbias = n as f64 / (n as f64 - 1.0);
    for c in 0..mean.len() {
        stats.mean[c] = (1.0 - BATCHNORM_MOMENTUM) * stats.mean[c] + BATCHNORM_MOMENTUM * mean[c];
        stats.var[c] = (1.0 - BATCHNORM_MOMENTUM) * stats.var[c] + BATCHNORM_MOMENTUM * var[c] * unbias;
    }
}

pub(crate) fn normalize_channels(
    x: &SequenceTensor,
    mean: &[f64],
    var: &[f64],
    gain: &[f64],
    shift: &[f64],
) -> SequenceTensor {
    let mut out = x.clone();
    for c in 0..x.channels() {
        let is = 1.0 / (var[c] + BATCHNORM_EPS).sqrt();
        for v in out.row_mut(c) {
            *v = gain[c] * (*v - mean[c]) * is + shift[c];
        }
    }
    out
}

/// Inverted-dropout keep mask: entries are `0` or `1 / (1 - rate)`.
pub fn dropout_mask(
    channels: usize,
    time: usize,
    rate: f64,
    rng: &mut RngState,
) -> Result<SequenceTensor> {
    check_dropout_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    let data = (0..channels * time)
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect();
    SequenceTensor::from_vec(channels, time, data)
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

pub fn dropout(x: &SequenceTensor, rate: f64, mode: Mode, rng: &mut RngState) -> Result<SequenceTensor> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.channels(), x.time(), rate, rng)?;
    Ok(x.zip_map(&mask, |a, m| a * m))
}

/// Stride-2 average of adjacent pairs; an odd trailing step passes through.
pub fn temporal_avg_pool(x: &SequenceTensor) -> Result<SequenceTensor> {
    if x.time() < 1 {
        return Err(Error::InvalidArgument("temporal_avg_pool of an empty sequence".into()));
    }
    let t = x.time();
    let out_t = t.div_ceil(2);
    let mut out = SequenceTensor::zeros(x.channels(), out_t);
    for c in 0..x.channels() {
        let r = x.row(c);
        let o = out.row_mut(c);
        for (i, ov) in o.iter_mut().enumerate() {
            *ov = if 2 * i + 1 < t {
                0.5 * (r[2 * i] + r[2 * i + 1])
            } else {
                r[2 * i]
            };
        }
    }
    Ok(out)
}

pub fn global_avg_pool(x: &SequenceTensor) -> Result<Vec<f64>> {
    if x.time() == 0 {
        return Err(Error::InvalidArgument("global_avg_pool of an empty sequence".into()));
    }
    let n = x.time() as f64;
    Ok((0..x.channels()).map(|c| x.row(c).iter().sum::<f64>() / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> SequenceTensor {
        SequenceTensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn triple_loop(x: &SequenceTensor, w: &SequenceTensor, b: &[f64]) -> SequenceTensor {
        let mut out = SequenceTensor::zeros(w.channels(), x.time());
        for c in 0..w.channels() {
            for tt in 0..x.time() {
                let mut acc = b[c];
                for i in 0..w.time() {
                    acc += w.get(c, i) * x.get(i, tt);
                }
                out.set(c, tt, acc);
            }
        }
        out
    }

    #[test]
    fn linear_examples() {
        let x = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let w = t(&[&[1.0, 1.0], &[0.0, 2.0]]);
        let b = SequenceTensor::vector(vec![0.0, 1.0]);
        let out = linear(&x, &w, Some(&b)).unwrap();
        let expected = triple_loop(&x, &w, &[0.0, 1.0]);
        assert_eq!(expected, t(&[&[4.0, 6.0], &[7.0, 9.0]]));
        assert_eq!(out, expected);

        let id = linear(&x, &SequenceTensor::identity(2), None).unwrap();
        assert_eq!(id, x);
        let zero = linear(&x, &SequenceTensor::zeros(2, 2), Some(&SequenceTensor::zeros(2, 1))).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn linear_shape_error_names_both_shapes() {
        let x = SequenceTensor::zeros(3, 4);
        let w = SequenceTensor::zeros(2, 5);
        let msg = linear(&x, &w, None).unwrap_err().to_string();
        assert!(msg.contains("2x5") && msg.contains("3x4"), "{msg}");
    }

    #[test]
    fn dwconv_examples() {
        let x = t(&[&[1.0, 2.0, 3.0, 4.0]]);
        let k = t(&[&[1.0 / 3.0; 3]]);
        let out = dwconv1d(&x, &k).unwrap();
        // brute-force sliding window over the explicitly padded signal
        let padded = [0.0, 1.0, 2.0, 3.0, 4.0, 0.0];
        let oracle: Vec<f64> = (0..4).map(|i| padded[i..i + 3].iter().sum::<f64>() / 3.0).collect();
        for (a, b) in out.row(0).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((out.get(0, 3) - 7.0 / 3.0).abs() < 1e-15);

        let delta = t(&[&[0.0, 0.0, 1.0, 0.0, 0.0]]);
        assert_eq!(dwconv1d(&x, &delta).unwrap(), x);
        assert_eq!(dwconv1d(&x, &SequenceTensor::zeros(1, 3)).unwrap().max_abs(), 0.0);
        assert!(dwconv1d(&x, &SequenceTensor::zeros(1, 2)).is_err());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&[2.0, 2.0, 2.0]).unwrap();
        assert!(s.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let s = softmax(&[0.0, 2f64.ln()]).unwrap();
        assert!((s[0] - 1.0 / 3.0).abs() < 1e-15 && (s[1] - 2.0 / 3.0).abs() < 1e-15);
        let a = softmax(&[0.3, -1.2, 4.0]).unwrap();
        let b = softmax(&[100.3, 98.8, 104.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn activation_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(gelu(0.0), 0.0);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        // central-difference check of the GELU derivative
        for z in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(z + h) - gelu(z - h)) / (2.0 * h);
            assert!((fd - gelu_derivative(z)).abs() < 1e-8);
        }
    }

    #[test]
    fn layernorm_examples() {
        let ones = SequenceTensor::filled(2, 1, 1.0);
        let zeros = SequenceTensor::zeros(2, 1);
        let x = t(&[&[3.0, 1.0], &[3.0, -1.0]]);
        let out = layernorm(&x, &ones, &zeros, 1e-5).unwrap();
        assert_eq!(out.get(0, 0), 0.0);
        assert_eq!(out.get(1, 0), 0.0);
        let out = layernorm(&x, &ones, &zeros, 1e-14).unwrap();
        assert!((out.get(0, 1) - 1.0).abs() < 1e-6 && (out.get(1, 1) + 1.0).abs() < 1e-6);

        let shift = SequenceTensor::vector(vec![0.5, -2.0]);
        let out = layernorm(&x, &zeros, &shift, 1e-5).unwrap();
        assert_eq!(out, t(&[&[0.5, 0.5], &[-2.0, -2.0]]));
    }

    #[test]
    fn batchnorm_examples() {
        let g = SequenceTensor::filled(1, 1, 1.0);
        let b = SequenceTensor::zeros(1, 1);
        let mut stats = BatchNormStats::new(1);
        let out = batchnorm(&[t(&[&[-1.0, 1.0]])], &g, &b, &mut stats, Mode::Train).unwrap();
        let e = 1.0 / (1.0 + BATCHNORM_EPS).sqrt();
        assert!((out[0].get(0, 0) + e).abs() < 1e-15 && (out[0].get(0, 1) - e).abs() < 1e-15);
        // running stats moved toward (0, 2) with momentum 0.1
        assert!((stats.mean[0] - 0.0).abs() < 1e-15);
        assert!((stats.var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-15);

        let x = vec![t(&[&[0.3, -0.2, 1.1]])];
        let a = batchnorm(&x, &g, &b, &mut stats, Mode::Eval).unwrap();
        let c = batchnorm(&x, &g, &b, &mut stats, Mode::Eval).unwrap();
        assert_eq!(a, c);

        // eval before any update uses (0, 1)
        let mut fresh = BatchNormStats::new(1);
        let out = batchnorm(&x, &g, &b, &mut fresh, Mode::Eval).unwrap();
        assert!(out[0].max_abs_diff(&x[0]) < 1e-5);

        assert!(batchnorm(&[t(&[&[1.0]])], &g, &b, &mut fresh, Mode::Train).is_err());
    }

    #[test]
    fn dropout_examples() {
        let mut rng = RngState::new(9);
        let x = SequenceTensor::filled(3, 4, 1.7);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, Mode::Eval, &mut rng).unwrap(), x);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());

        let mask = dropout_mask(1000, 1000, 0.1, &mut RngState::new(0)).unwrap();
        let kept = mask.data().iter().filter(|&&m| m != 0.0).count() as f64 / 1e6;
        assert!((kept - 0.9).abs() < 0.003, "survivor fraction {kept}");
        let again = dropout_mask(1000, 1000, 0.1, &mut RngState::new(0)).unwrap();
        assert_eq!(mask, again);
    }

    #[test]
    fn pooling_examples() {
        let x = t(&[&[1.0, 3.0, 5.0, 7.0]]);
        assert_eq!(temporal_avg_pool(&x).unwrap(), t(&[&[2.0, 6.0]]));
        let c = SequenceTensor::filled(2, 6, 1.5);
        assert_eq!(temporal_avg_pool(&c).unwrap(), SequenceTensor::filled(2, 3, 1.5));
        let one = t(&[&[4.0]]);
        assert_eq!(temporal_avg_pool(&one).unwrap(), one);
        assert_eq!(temporal_avg_pool(&t(&[&[1.0, 3.0, 5.0]])).unwrap(), t(&[&[2.0, 5.0]]));

        assert_eq!(global_avg_pool(&t(&[&[1.0, 2.0, 3.0]])).unwrap(), vec![2.0]);
        assert_eq!(global_avg_pool(&c).unwrap(), vec![1.5, 1.5]);
        assert_eq!(
            global_avg_pool(&t(&[&[3.0, 1.0, 2.0]])).unwrap(),
            global_avg_pool(&t(&[&[1.0, 2.0, 3.0]])).unwrap()
        );
        assert!(global_avg_pool(&SequenceTensor::zeros(2, 0)).is_err());
    }
}
