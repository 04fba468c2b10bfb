//! Temporal discrete wavelet analysis/synthesis and the learned
//! frequency branch.
//!
//! Analysis is pair-aligned with periodic extension:
//! `L_i = Σ_j f_L[j] · x[(2i + j) mod T']`, `H_i = Σ_j f_H[j] · x[(2i + j) mod T']`
//! where `T'` is `T` rounded up to even (one zero tail sample for odd `T`).
//! Synthesis scatters each coefficient back through the same taps, which is
//! the exact inverse for the orthonormal bases supported here; the trailing
//! pad is stripped afterwards.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamId, ParamStore, SequenceTensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WaveletBasis {
    #[default]
    Haar,
    Db2,
}

impl fmt::Display for WaveletBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WaveletBasis::Haar => "haar",
            WaveletBasis::Db2 => "db2",
        })
    }
}

impl FromStr for WaveletBasis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(WaveletBasis::Haar),
            "db2" => Ok(WaveletBasis::Db2),
            other => Err(Error::InvalidArgument(format!(
                "unknown wavelet basis {other:?} (expected haar or db2)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletFilters {
    pub basis: WaveletBasis,
    /// Analysis low-pass taps.
    pub f_low: Vec<f64>,
    /// Analysis high-pass taps.
    pub f_high: Vec<f64>,
    /// Synthesis taps, in the scatter orientation used by [`idwt1`].
    pub g_low: Vec<f64>,
    pub g_high: Vec<f64>,
}

impl WaveletFilters {
    pub fn new(basis: WaveletBasis) -> Self {
        let (low, high) = match basis {
            WaveletBasis::Haar => (
                vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2],
                vec![FRAC_1_SQRT_2, -FRAC_1_SQRT_2],
            ),
            WaveletBasis::Db2 => {
                let s3 = 3f64.sqrt();
                let d = 4.0 * 2f64.sqrt();
                let h = [(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d];
                // quadrature mirror: g[k] = (-1)^k h[3 - k]
                let g = vec![h[3], -h[2], h[1], -h[0]];
                (h.to_vec(), g)
            }
        };
        Self {
            basis,
            g_low: low.clone(),
            g_high: high.clone(),
            f_low: low,
            f_high: high,
        }
    }

    pub fn haar() -> Self {
        Self::new(WaveletBasis::Haar)
    }
}

/// Low/high subbands of one decomposition level.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandPair {
    pub low: SequenceTensor,
    pub high: SequenceTensor,
    pub level: usize,
    /// Length of the signal this pair was computed from.
    pub original_len: usize,
}

fn analysis(x: &SequenceTensor, f: &WaveletFilters) -> (SequenceTensor, SequenceTensor) {
    let (c, t) = x.shape();
    let tp = t + t % 2;
    let n = tp / 2;
    let mut low = SequenceTensor::zeros(c, n);
    let mut high = SequenceTensor::zeros(c, n);
    for ch in 0..c {
        let xr = x.row(ch);
        let at = |k: usize| if k < t { xr[k] } else { 0.0 };
        for i in 0..n {
            let (mut l, mut h) = (0.0, 0.0);
            for (j, (fl, fh)) in f.f_low.iter().zip(&f.f_high).enumerate() {
                let v = at((2 * i + j) % tp);
                l += fl * v;
                h += fh * v;
            }
            low.set(ch, i, l);
            high.set(ch, i, h);
        }
    }
    (low, high)
}

fn synthesis(
    low: &SequenceTensor,
    high: &SequenceTensor,
    f: &WaveletFilters,
    original_len: usize,
) -> SequenceTensor {
    let (c, n) = low.shape();
    let tp = 2 * n;
    let mut out = SequenceTensor::zeros(c, original_len);
    let mut buf = vec![0.0; tp];
    for ch in 0..c {
        buf.fill(0.0);
        let (lr, hr) = (low.row(ch), high.row(ch));
        for i in 0..n {
            for (j, (gl, gh)) in f.g_low.iter().zip(&f.g_high).enumerate() {
                buf[(2 * i + j) % tp] += gl * lr[i] + gh * hr[i];
            }
        }
        out.row_mut(ch).copy_from_slice(&buf[..original_len]);
    }
    out
}

pub fn dwt1(x: &SequenceTensor, filters: &WaveletFilters) -> Result<SubbandPair> {
    if x.time() < 2 {
        return Err(Error::InvalidArgument(format!(
            "dwt1 needs at least 2 time steps, got {}",
            x.time()
        )));
    }
    let (low, high) = analysis(x, filters);
    Ok(SubbandPair {
        low,
        high,
        level: 1,
        original_len: x.time(),
    })
}

fn check_synthesis_shapes(low: &SequenceTensor, high: &SequenceTensor, original_len: usize) -> Result<()> {
    low.ensure_same_shape(high, "idwt1")?;
    let n = low.time();
    if n == 0 || (original_len != 2 * n && original_len + 1 != 2 * n) {
        return Err(Error::shape(
            "idwt1",
            format!("subbands {}", low.shape_str()),
            format!("original length {original_len}"),
        ));
    }
    Ok(())
}

pub fn idwt1(pair: &SubbandPair, filters: &WaveletFilters, original_len: usize) -> Result<SequenceTensor> {
    check_synthesis_shapes(&pair.low, &pair.high, original_len)?;
    Ok(synthesis(&pair.low, &pair.high, filters, original_len))
}

/// Graph op: `C × T → 2C × ⌈T/2⌉`, low band on the first `C` channels.
pub fn dwt_var(g: &mut Graph, x: Var, filters: &WaveletFilters) -> Result<Var> {
    let vx = g.value(x);
    if vx.time() < 2 {
        return Err(Error::InvalidArgument(format!(
            "dwt1 needs at least 2 time steps, got {}",
            vx.time()
        )));
    }
    let (c, t) = vx.shape();
    let (low, high) = analysis(vx, filters);
    let out = SequenceTensor::concat_channels(&[&low, &high])?;
    let f = filters.clone();
    Ok(g.custom(out, move |gout, _, _| {
        let gl = gout.slice_channels(0, c);
        let gh = gout.slice_channels(c, c);
        vec![(x, synthesis(&gl, &gh, &f, t))]
    }))
}

/// Graph op: inverse of [`dwt_var`] on a stacked `[L; H]` input.
pub fn idwt_var(g: &mut Graph, lh: Var, filters: &WaveletFilters, original_len: usize) -> Result<Var> {
    let v = g.value(lh);
    if v.channels() % 2 != 0 {
        return Err(Error::shape("idwt1", v.shape_str(), "even channel count"));
    }
    let c = v.channels() / 2;
    let low = v.slice_channels(0, c);
    let high = v.slice_channels(c, c);
    check_synthesis_shapes(&low, &high, original_len)?;
    let out = synthesis(&low, &high, filters, original_len);
    let f = filters.clone();
    Ok(g.custom(out, move |gout, _, _| {
        let (gl, gh) = analysis(gout, &f);
        let stacked = SequenceTensor::concat_channels(&[&gl, &gh]).expect("equal lengths");
        vec![(lh, stacked)]
    }))
}

/// Learnable subband enhancement for one level: depthwise size-3 kernels
/// and a per-channel scale over the `2·C` stacked subband channels.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhanceParams {
    pub kernels: SequenceTensor,
    pub gamma: SequenceTensor,
}

impl EnhanceParams {
    /// Delta kernels and unit scale: enhancement starts as the identity.
    pub fn identity(channels: usize) -> Self {
        let mut kernels = SequenceTensor::zeros(2 * channels, 3);
        for c in 0..2 * channels {
            kernels.set(c, 1, 1.0);
        }
        Self {
            kernels,
            gamma: SequenceTensor::filled(2 * channels, 1, 1.0),
        }
    }
}

fn enhance_var(g: &mut Graph, lh: Var, kernels: Var, gamma: Var) -> Result<Var> {
    let conv = g.dwconv1d(lh, kernels)?;
    g.scale_channels(conv, gamma)
}

pub fn subband_enhance(pair: &SubbandPair, params: &EnhanceParams) -> Result<SubbandPair> {
    let mut g = Graph::new();
    let stacked = SequenceTensor::concat_channels(&[&pair.low, &pair.high])?;
    let lh = g.constant(stacked);
    let k = g.constant(params.kernels.clone());
    let gm = g.constant(params.gamma.clone());
    let out = enhance_var(&mut g, lh, k, gm)?;
    let c = pair.low.channels();
    let v = g.value(out);
    Ok(SubbandPair {
        low: v.slice_channels(0, c),
        high: v.slice_channels(c, c),
        level: pair.level,
        original_len: pair.original_len,
    })
}

/// Smallest sequence length that supports `levels` decompositions.
pub fn min_length_for_levels(levels: usize) -> usize {
    (2..)
        .find(|&t| levels_fit(t, levels))
        .expect("some length always fits")
}

fn levels_fit(mut t: usize, levels: usize) -> bool {
    for _ in 0..levels {
        if t < 2 {
            return false;
        }
        t = t.div_ceil(2);
    }
    true
}

/// Multi-level frequency branch on the graph.
///
/// Analysis cascades on the low band; each level is enhanced; synthesis
/// runs bottom-up, adding the reconstruction of level `q + 1` to the
/// enhanced low band of level `q` before inverting it.
pub fn wavelet_branch_var(
    g: &mut Graph,
    x: Var,
    filters: &WaveletFilters,
    levels: &[(Var, Var)],
) -> Result<Var> {
    let q = levels.len();
    if q < 1 {
        return Err(Error::InvalidArgument("wavelet branch needs at least one level".into()));
    }
    let (c, t) = g.shape(x);
    if !levels_fit(t, q) {
        return Err(Error::InvalidArgument(format!(
            "sequence length {t} too short for {q} wavelet levels (minimum {})",
            min_length_for_levels(q)
        )));
    }
    let mut enhanced = Vec::with_capacity(q);
    let mut lens = Vec::with_capacity(q);
    let mut current = x;
    for &(kernels, gamma) in levels {
        lens.push(g.shape(current).1);
        let lh = dwt_var(g, current, filters)?;
        current = g.slice_channels(lh, 0, c)?;
        enhanced.push(enhance_var(g, lh, kernels, gamma)?);
    }
    let mut residual: Option<Var> = None;
    for level in (0..q).rev() {
        let mut lh = enhanced[level];
        if let Some(r) = residual {
            let low = g.slice_channels(lh, 0, c)?;
            let high = g.slice_channels(lh, c, c)?;
            let injected = g.add(low, r)?;
            lh = g.concat_channels(&[injected, high])?;
        }
        residual = Some(idwt_var(g, lh, filters, lens[level])?);
    }
    Ok(residual.expect("q >= 1"))
}

pub fn wavelet_branch(
    x: &SequenceTensor,
    filters: &WaveletFilters,
    levels: &[EnhanceParams],
) -> Result<SequenceTensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let vars: Vec<(Var, Var)> = levels
        .iter()
        .map(|p| (g.constant(p.kernels.clone()), g.constant(p.gamma.clone())))
        .collect();
    let out = wavelet_branch_var(&mut g, xv, filters, &vars)?;
    Ok(g.value(out).clone())
}

/// Parameter handles of a frequency branch.
#[derive(Clone, Debug)]
pub struct WaveletLayer {
    pub filters: WaveletFilters,
    pub levels: Vec<(ParamId, ParamId)>,
}

impl WaveletLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, levels: usize, basis: WaveletBasis) -> Self {
        let levels = (0..levels)
            .map(|q| {
                let init = EnhanceParams::identity(channels);
                let k = store.add(&format!("{prefix}.level{q}.kernels"), "wavelet", init.kernels);
                let gm = store.add(&format!("{prefix}.level{q}.gamma"), "wavelet", init.gamma);
                (k, gm)
            })
            .collect();
        Self {
            filters: WaveletFilters::new(basis),
            levels,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let vars: Vec<(Var, Var)> = self
            .levels
            .iter()
            .map(|&(k, gm)| (g.param(store, k), g.param(store, gm)))
            .collect();
        wavelet_branch_var(g, x, &self.filters, &vars)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngState;

    fn random(c: usize, t: usize, seed: u64) -> SequenceTensor {
        let mut r = RngState::new(seed);
        SequenceTensor::from_vec(c, t, (0..c * t).map(|_| r.normal()).collect()).unwrap()
    }

    #[test]
    fn haar_constant_kills_detail() {
        let x = SequenceTensor::filled(1, 6, 2.5);
        let p = dwt1(&x, &WaveletFilters::haar()).unwrap();
        assert!(p.high.max_abs() < 1e-15);
        assert!(p.low.data().iter().all(|v| (v - 2.5 * 2f64.sqrt()).abs() < 1e-14));
    }

    #[test]
    fn haar_pairwise_example() {
        let x = SequenceTensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let p = dwt1(&x, &WaveletFilters::haar()).unwrap();
        // direct pairwise formula
        let s = FRAC_1_SQRT_2;
        let low = [(1.0 + 2.0) * s, (3.0 + 4.0) * s];
        let high = [(1.0 - 2.0) * s, (3.0 - 4.0) * s];
        for i in 0..2 {
            assert!((p.low.get(0, i) - low[i]).abs() < 1e-15);
            assert!((p.high.get(0, i) - high[i]).abs() < 1e-15);
        }
        assert!((p.low.get(0, 0) - 2.1213).abs() < 1e-4);
        assert!((p.high.get(0, 1) + 0.7071).abs() < 1e-4);
    }

    #[test]
    fn parseval_and_reconstruction() {
        for basis in [WaveletBasis::Haar, WaveletBasis::Db2] {
            let f = WaveletFilters::new(basis);
            for (seed, t) in [(1, 2), (2, 4), (3, 8), (4, 70)] {
                let x = random(3, t, seed);
                let p = dwt1(&x, &f).unwrap();
                let energy = p.low.sum_squares() + p.high.sum_squares();
                assert!((energy - x.sum_squares()).abs() < 1e-10, "{basis} T={t}");
                let back = idwt1(&p, &f, t).unwrap();
                assert!(back.max_abs_diff(&x) < 1e-10);
            }
            let x = random(2, 7, 9);
            let back = idwt1(&dwt1(&x, &f).unwrap(), &f, 7).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-10);
        }
    }

    #[test]
    fn synthesis_of_low_only_is_pair_constant() {
        let low = SequenceTensor::from_rows(&[vec![2.0, -1.0, 0.5]]).unwrap();
        let pair = SubbandPair {
            high: SequenceTensor::zeros(1, 3),
            low: low.clone(),
            level: 1,
            original_len: 6,
        };
        let x = idwt1(&pair, &WaveletFilters::haar(), 6).unwrap();
        // brute force: x[2i] = x[2i+1] = L_i / √2
        for i in 0..3 {
            let v = low.get(0, i) * FRAC_1_SQRT_2;
            assert!((x.get(0, 2 * i) - v).abs() < 1e-15);
            assert!((x.get(0, 2 * i + 1) - v).abs() < 1e-15);
        }
        let zero = SubbandPair {
            low: SequenceTensor::zeros(2, 4),
            high: SequenceTensor::zeros(2, 4),
            level: 1,
            original_len: 8,
        };
        assert_eq!(idwt1(&zero, &WaveletFilters::haar(), 8).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn shape_errors() {
        let f = WaveletFilters::haar();
        assert!(dwt1(&SequenceTensor::zeros(1, 1), &f).is_err());
        let bad = SubbandPair {
            low: SequenceTensor::zeros(1, 3),
            high: SequenceTensor::zeros(1, 2),
            level: 1,
            original_len: 6,
        };
        assert!(idwt1(&bad, &f, 6).is_err());
        let ok = SubbandPair {
            high: SequenceTensor::zeros(1, 3),
            ..bad
        };
        assert!(idwt1(&ok, &f, 4).is_err());
    }

    #[test]
    fn enhancement_examples() {
        let x = random(2, 8, 5);
        let p = dwt1(&x, &WaveletFilters::haar()).unwrap();
        let id = EnhanceParams::identity(2);
        let e = subband_enhance(&p, &id).unwrap();
        assert_eq!(e.low, p.low);
        assert_eq!(e.high, p.high);

        let zero = EnhanceParams {
            gamma: SequenceTensor::zeros(4, 1),
            ..id.clone()
        };
        let e = subband_enhance(&p, &zero).unwrap();
        assert_eq!(e.low.max_abs() + e.high.max_abs(), 0.0);

        let double = EnhanceParams {
            gamma: SequenceTensor::filled(4, 1, 2.0),
            ..id
        };
        let e = subband_enhance(&p, &double).unwrap();
        assert!(e.low.max_abs_diff(&p.low.scale(2.0)) < 1e-15);
        assert!(e.high.max_abs_diff(&p.high.scale(2.0)) < 1e-15);
    }

    #[test]
    fn branch_examples() {
        let f = WaveletFilters::haar();
        let x = random(3, 10, 2);
        let y = wavelet_branch(&x, &f, &[EnhanceParams::identity(3)]).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-10);

        // zero the detail band: Haar local averages remain
        let x = SequenceTensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let mut p = EnhanceParams::identity(1);
        p.gamma.data_mut()[1] = 0.0;
        let y = wavelet_branch(&x, &f, &[p]).unwrap();
        let expected = [1.5, 1.5, 3.5, 3.5];
        for (a, b) in y.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }

        let x = SequenceTensor::filled(2, 8, 0.7);
        let mut levels = vec![EnhanceParams::identity(2), EnhanceParams::identity(2)];
        for l in &mut levels {
            l.gamma.data_mut()[2] = 3.0;
            l.gamma.data_mut()[3] = -0.4;
        }
        let y = wavelet_branch(&x, &f, &levels).unwrap();
        for c in 0..2 {
            let r = y.row(c);
            assert!(r.iter().all(|v| (v - r[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn branch_rejects_short_sequences() {
        assert_eq!(min_length_for_levels(1), 2);
        assert_eq!(min_length_for_levels(2), 3);
        assert_eq!(min_length_for_levels(3), 5);
        let x = SequenceTensor::zeros(1, 2);
        let levels = vec![EnhanceParams::identity(1); 2];
        let msg = wavelet_branch(&x, &WaveletFilters::haar(), &levels)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("minimum 3"), "{msg}");
    }

    #[test]
    fn branch_preserves_shape_for_odd_lengths() {
        for basis in [WaveletBasis::Haar, WaveletBasis::Db2] {
            let f = WaveletFilters::new(basis);
            for t in [3, 5, 7, 9, 35] {
                for q in 1..=3 {
                    if t < min_length_for_levels(q) {
                        continue;
                    }
                    let x = random(2, t, t as u64);
                    let y = wavelet_branch(&x, &f, &vec![EnhanceParams::identity(2); q]).unwrap();
                    assert_eq!(y.shape(), x.shape());
                }
            }
        }
    }
}
