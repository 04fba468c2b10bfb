//! Synthetic corpus with a planted score rule shared by all modalities.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use super::{format::write_sample, Manifest, ManifestEntry, ManifestHeader, Split};
use crate::error::{Error, Result};
use crate::model::ModalityBundle;
use crate::numcore::{RngState, SequenceTensor};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

const NOISE: f64 = 0.1;
const SCORE_NOISE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub n: usize,
    pub seed: u64,
    pub dims: [usize; 3],
    /// Inclusive range of native sequence lengths.
    pub len_range: (usize, usize),
    /// Fraction of samples (the last ones) assigned to the val split.
    pub val_frac: f64,
    pub align_length: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            n: 64,
            seed: 0,
            dims: [32, 32, 24],
            len_range: (12, 24),
            val_frac: 0.25,
            align_length: 16,
        }
    }
}

fn noise(d: usize, t: usize, rng: &mut RngState) -> SequenceTensor {
    let data = (0..d * t).map(|_| rng.normal_with(0.0, NOISE)).collect();
    SequenceTensor::from_vec(d, t, data).expect("shape")
}

/// Number of flow bursts for latent quality `s`.
pub fn burst_count(s: f64) -> usize {
    (s * 8.0).floor() as usize + 1
}

/// Draws one sample: `(latent s, features, raw score)`.
pub fn synth_sample(rng: &mut RngState, dims: [usize; 3], len_range: (usize, usize)) -> (f64, ModalityBundle, f64) {
    let s = rng.uniform();
    let t = rng.int_range(len_range.0, len_range.1);
    let tf = t as f64;

    let mut rgb = noise(dims[0], t, rng);
    for (i, v) in rgb.row_mut(0).iter_mut().enumerate() {
        *v = s * i as f64 / tf;
    }

    let mut flow = noise(dims[1], t, rng);
    let bursts = burst_count(s);
    for j in 0..bursts {
        let at = (((j as f64 + 0.5) * tf / bursts as f64).floor() as usize).min(t - 1);
        flow.row_mut(0)[at] += 1.0;
    }

    let mut audio = noise(dims[2], t, rng);
    let freq = 1.0 + 4.0 * s;
    for (i, v) in audio.row_mut(0).iter_mut().enumerate() {
        *v += (2.0 * PI * freq * i as f64 / tf).sin();
    }

    let score = 10.0 * s + rng.normal_with(0.0, SCORE_NOISE);
    (s, ModalityBundle::new(rgb, flow, audio), score)
}

/// Writes `n` feature files and then the manifest into `out`.
pub fn gen_synth(opts: &SynthOptions, out: &Path) -> Result<Manifest> {
    if opts.n < 4 {
        return Err(Error::InvalidArgument(format!("n must be ≥ 4, got {}", opts.n)));
    }
    let (lo, hi) = opts.len_range;
    if lo < 1 || lo > hi {
        return Err(Error::InvalidArgument(format!("invalid length range {lo}..{hi}")));
    }
    if opts.dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("dims must be positive, got {:?}", opts.dims)));
    }
    if !(0.0..1.0).contains(&opts.val_frac) {
        return Err(Error::InvalidArgument(format!("val fraction must be in [0, 1), got {}", opts.val_frac)));
    }
    let n_val = (opts.n as f64 * opts.val_frac).round() as usize;
    let n_train = opts.n - n_val;
    if n_train < 2 {
        return Err(Error::InvalidArgument("at least two training samples are needed".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut entries = Vec::with_capacity(opts.n);
    for i in 0..opts.n {
        let mut rng = RngState::derive(opts.seed, &[i as u64]);
        let (_, bundle, score) = synth_sample(&mut rng, opts.dims, opts.len_range);
        let name = format!("sample_{i:04}.pidf");
        write_sample(&out.join(&name), &bundle)?;
        entries.push(ManifestEntry {
            id: format!("s{i:04}"),
            path: name,
            score,
            split: if i < n_train { Split::Train } else { Split::Val },
            category: None,
        });
    }
    let train: Vec<f64> = entries[..n_train].iter().map(|e| e.score).collect();
    let score_min = train.iter().copied().fold(f64::INFINITY, f64::min);
    let score_max = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(score_min < score_max) {
        return Err(Error::InvalidArgument("training scores are constant".into()));
    }
    let manifest = Manifest {
        header: ManifestHeader {
            dims: opts.dims,
            score_min,
            score_max,
            align_length: opts.align_length,
        },
        entries,
        root: out.to_path_buf(),
    };
    manifest.write(&out.join(MANIFEST_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::spearman;

    #[test]
    fn burst_counts() {
        assert_eq!(burst_count(0.0), 1);
        assert_eq!(burst_count(1.0 - 1e-12), 8);
        assert_eq!(burst_count(0.5), 5);
    }

    #[test]
    fn flow_bursts_planted() {
        for seed in 0..20 {
            let mut rng = RngState::new(seed);
            let (s, b, _) = synth_sample(&mut rng, [3, 3, 3], (40, 60));
            let peaks = b.flow.row(0).iter().filter(|&&v| v > 0.6).count();
            assert_eq!(peaks, burst_count(s), "seed {seed}");
        }
    }

    #[test]
    fn score_tracks_latent() {
        let mut rng = RngState::new(11);
        let (mut s, mut y) = (Vec::new(), Vec::new());
        for _ in 0..1000 {
            let (a, _, b) = synth_sample(&mut rng, [1, 1, 1], (4, 4));
            s.push(a);
            y.push(b);
        }
        assert!(spearman(&s, &y).unwrap().unwrap() > 0.99);
    }

    #[test]
    fn rejects_small_n() {
        let dir = std::env::temp_dir();
        let opts = SynthOptions { n: 2, ..SynthOptions::default() };
        let err = gen_synth(&opts, &dir).unwrap_err();
        assert!(err.to_string().contains("n must be ≥ 4"));
    }
}
