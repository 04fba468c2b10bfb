//! iMambaWave block: identity/enhancement channel split, Bi-Mamba and
//! wavelet branches on the enhancement part, a per-step scalar gate, and
//! dropout + layer norm before re-concatenation with the identity part.

use crate::bimamba::BiMambaLayer;
use crate::config::{Ablation, FusionStrategy, TrainConfig};
use crate::error::{Error, Result};
use crate::numcore::{ops, Graph, Mode, ParamId, ParamStore, RngState, SequenceTensor, Var};
use crate::wavelet::WaveletLayer;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub alpha: f64,
    pub channels: usize,
    pub c_id: usize,
    pub c_en: usize,
}

impl SplitSpec {
    pub fn new(alpha: f64, channels: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("split ratio must be in (0, 1], got {alpha}")));
        }
        let c_id = (alpha * channels as f64).floor() as usize;
        Ok(Self {
            alpha,
            channels,
            c_id,
            c_en: channels - c_id,
        })
    }

    /// Every channel enhanced (`C_Id = 0`).
    pub fn no_split(channels: usize) -> Self {
        Self {
            alpha: 0.0,
            channels,
            c_id: 0,
            c_en: channels,
        }
    }
}

/// `(F_Id, F_En)`: channels `[0, C_Id)` and `[C_Id, C)`.
pub fn split(f: &SequenceTensor, spec: &SplitSpec) -> Result<(SequenceTensor, SequenceTensor)> {
    if f.channels() != spec.channels {
        return Err(Error::shape(
            "split",
            format!("input {}", f.shape_str()),
            format!("spec with {} channels", spec.channels),
        ));
    }
    Ok((
        f.slice_channels(0, spec.c_id),
        f.slice_channels(spec.c_id, spec.c_en),
    ))
}

/// Gate MLP weights: `C_En → ⌈C_En/2⌉ (GELU) → 1`, then sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct GateNet {
    pub w1: SequenceTensor,
    pub b1: SequenceTensor,
    pub w2: SequenceTensor,
    pub b2: SequenceTensor,
}

impl GateNet {
    pub fn hidden_width(c_en: usize) -> usize {
        c_en.div_ceil(2)
    }

    pub fn zeros(c_en: usize) -> Self {
        let h = Self::hidden_width(c_en);
        Self {
            w1: SequenceTensor::zeros(h, c_en),
            b1: SequenceTensor::zeros(h, 1),
            w2: SequenceTensor::zeros(1, h),
            b2: SequenceTensor::zeros(1, 1),
        }
    }
}

fn gate_var(g: &mut Graph, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = g.linear(x, w1, Some(b1))?;
    let h = g.gelu(h);
    let z = g.linear(h, w2, Some(b2))?;
    Ok(g.sigmoid(z))
}

/// One gate value per time step, from that step's channel vector only.
pub fn gate(f_en: &SequenceTensor, net: &GateNet) -> Result<Vec<f64>> {
    if f_en.channels() == 0 {
        return Err(Error::InvalidArgument(
            "gate is undefined for an empty enhancement branch".into(),
        ));
    }
    let mut g = Graph::new();
    let x = g.constant(f_en.clone());
    let w1 = g.constant(net.w1.clone());
    let b1 = g.constant(net.b1.clone());
    let w2 = g.constant(net.w2.clone());
    let b2 = g.constant(net.b2.clone());
    let s = gate_var(&mut g, x, w1, b1, w2, b2)?;
    Ok(g.value(s).row(0).to_vec())
}

/// `LN(Drop(σ ⊙ Y_M + (1 − σ) ⊙ Y_W))`.
#[allow(clippy::too_many_arguments)]
pub fn gated_fuse(
    y_m: &SequenceTensor,
    y_w: &SequenceTensor,
    sigma: &[f64],
    drop_rate: f64,
    mode: Mode,
    ln_gain: &SequenceTensor,
    ln_shift: &SequenceTensor,
    rng: &mut RngState,
) -> Result<SequenceTensor> {
    let mixed = gate_mix(y_m, y_w, sigma)?;
    let dropped = ops::dropout(&mixed, drop_rate, mode, rng)?;
    ops::layernorm(&dropped, ln_gain, ln_shift, ops::LAYERNORM_EPS)
}

/// Pre-normalization convex combination `σ_t · Y_M + (1 − σ_t) · Y_W`.
pub fn gate_mix(y_m: &SequenceTensor, y_w: &SequenceTensor, sigma: &[f64]) -> Result<SequenceTensor> {
    if sigma.len() != y_m.time() {
        return Err(Error::shape(
            "gated_fuse",
            format!("branches {}", y_m.shape_str()),
            format!("gate of length {}", sigma.len()),
        ));
    }
    let mut g = Graph::new();
    let a = g.constant(y_m.clone());
    let b = g.constant(y_w.clone());
    let s = g.constant(SequenceTensor::from_vec(1, sigma.len(), sigma.to_vec())?);
    let out = g.gate_mix(a, b, s)?;
    Ok(g.value(out).clone())
}

#[derive(Clone, Debug)]
pub struct GateLayer {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl GateLayer {
    fn new(store: &mut ParamStore, prefix: &str, c_en: usize, rng: &mut RngState) -> Self {
        let h = GateNet::hidden_width(c_en);
        Self {
            w1: store.add_weight(&format!("{prefix}.w1"), "gate", h, c_en, rng),
            b1: store.add_bias(&format!("{prefix}.b1"), "gate", h, c_en, rng),
            w2: store.add_weight(&format!("{prefix}.w2"), "gate", 1, h, rng),
            b2: store.add_const(&format!("{prefix}.b2"), "gate", 1, 0.0),
        }
    }

    pub fn net(&self, store: &ParamStore) -> GateNet {
        GateNet {
            w1: store.value(self.w1).clone(),
            b1: store.value(self.b1).clone(),
            w2: store.value(self.w2).clone(),
            b2: store.value(self.b2).clone(),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (w1, b1) = (g.param(store, self.w1), g.param(store, self.b1));
        let (w2, b2) = (g.param(store, self.w2), g.param(store, self.b2));
        gate_var(g, x, w1, b1, w2, b2)
    }
}

#[derive(Clone, Debug)]
pub enum Fusion {
    Gated(GateLayer),
    /// Gate pinned to a constant (1 = state-space only, 0 = wavelet only).
    Forced(f64),
    Sum,
    Concat { w: ParamId, b: ParamId },
}

#[derive(Clone, Debug)]
pub struct Enhancement {
    pub bimamba: BiMambaLayer,
    pub wavelet: WaveletLayer,
    pub fusion: Fusion,
    pub ln_gain: ParamId,
    pub ln_shift: ParamId,
}

/// Parameter handles of one iMambaWave block.
#[derive(Clone, Debug)]
pub struct ImwLayer {
    pub split: SplitSpec,
    /// `None` when the block degenerates to the identity.
    pub enhancement: Option<Enhancement>,
}

/// Output of one block forward.
pub struct ImwOutput {
    pub out: Var,
    /// Per-step gate `1 × T` when the block mixes branches with a gate.
    pub gate: Option<Var>,
}

impl ImwLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &TrainConfig,
        tied_scans: bool,
        rng: &mut RngState,
    ) -> Result<Self> {
        let c = cfg.channels;
        let split = match cfg.ablation {
            Ablation::NoSplit => SplitSpec::no_split(c),
            _ => SplitSpec::new(cfg.split_ratio, c)?,
        };
        if split.c_en == 0 || cfg.ablation == Ablation::IdentityOnly {
            return Ok(Self {
                split,
                enhancement: None,
            });
        }
        let ce = split.c_en;
        let bimamba = BiMambaLayer::new(store, &format!("{prefix}.bimamba"), ce, cfg.bimamba_depth, tied_scans, rng)?;
        let wavelet = WaveletLayer::new(store, &format!("{prefix}.wavelet"), ce, cfg.wavelet_levels, cfg.wavelet_basis);
        let fusion = match (cfg.ablation, cfg.fusion_strategy) {
            (Ablation::SplitBimamba, _) => Fusion::Forced(1.0),
            (Ablation::SplitWavelet, _) => Fusion::Forced(0.0),
            (_, FusionStrategy::Gated) => Fusion::Gated(GateLayer::new(store, &format!("{prefix}.gate"), ce, rng)),
            (_, FusionStrategy::Sum) => Fusion::Sum,
            (_, FusionStrategy::Concat) => Fusion::Concat {
                w: store.add_weight(&format!("{prefix}.fuse.w"), "fuse", ce, 2 * ce, rng),
                b: store.add_bias(&format!("{prefix}.fuse.b"), "fuse", ce, 2 * ce, rng),
            },
        };
        Ok(Self {
            split,
            enhancement: Some(Enhancement {
                bimamba,
                wavelet,
                fusion,
                ln_gain: store.add_const(&format!("{prefix}.ln.gain"), "imw_norm", ce, 1.0),
                ln_shift: store.add_const(&format!("{prefix}.ln.shift"), "imw_norm", ce, 0.0),
            }),
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        mode: Mode,
        dropout: f64,
        rng: &mut RngState,
    ) -> Result<ImwOutput> {
        let (c, t) = g.shape(x);
        if c != self.split.channels {
            return Err(Error::shape(
                "imw_forward",
                format!("input {c}x{t}"),
                format!("block with {} channels", self.split.channels),
            ));
        }
        let Some(enh) = &self.enhancement else {
            return Ok(ImwOutput { out: x, gate: None });
        };
        let (c_id, c_en) = (self.split.c_id, self.split.c_en);
        let f_en = g.slice_channels(x, c_id, c_en)?;
        let y_m = enh.bimamba.forward(g, store, f_en)?;
        let y_w = enh.wavelet.forward(g, store, f_en)?;
        let (fused, gate) = match &enh.fusion {
            Fusion::Gated(net) => {
                let s = net.forward(g, store, f_en)?;
                (g.gate_mix(y_m, y_w, s)?, Some(s))
            }
            Fusion::Forced(v) => {
                let s = g.constant(SequenceTensor::filled(1, t, *v));
                (g.gate_mix(y_m, y_w, s)?, Some(s))
            }
            Fusion::Sum => {
                let s = g.add(y_m, y_w)?;
                (g.scale(s, 0.5), None)
            }
            Fusion::Concat { w, b } => {
                let cat = g.concat_channels(&[y_m, y_w])?;
                let (w, b) = (g.param(store, *w), g.param(store, *b));
                (g.linear(cat, w, Some(b))?, None)
            }
        };
        let dropped = if mode == Mode::Train && dropout > 0.0 {
            let mask = ops::dropout_mask(c_en, t, dropout, rng)?;
            g.mul_const(fused, mask)?
        } else {
            fused
        };
        let (lg, ls) = (g.param(store, enh.ln_gain), g.param(store, enh.ln_shift));
        let normed = g.layernorm(dropped, lg, ls)?;
        let out = if c_id > 0 {
            let f_id = g.slice_channels(x, 0, c_id)?;
            g.concat_channels(&[f_id, normed])?
        } else {
            normed
        };
        Ok(ImwOutput { out, gate })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bimamba::{bimamba_stack, ScanParams};
    use crate::wavelet::{wavelet_branch, EnhanceParams};

    fn random(c: usize, t: usize, seed: u64) -> SequenceTensor {
        let mut r = RngState::new(seed);
        SequenceTensor::from_vec(c, t, (0..c * t).map(|_| r.normal()).collect()).unwrap()
    }

    fn cfg(channels: usize) -> TrainConfig {
        TrainConfig {
            channels,
            heads: 1,
            ..TrainConfig::test_profile()
        }
    }

    fn perturb_all(store: &mut ParamStore, seed: u64) {
        let mut r = RngState::new(seed);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            for v in store.value_mut(id).data_mut() {
                *v += 0.3 * r.normal();
            }
        }
    }

    #[test]
    fn split_examples() {
        let s = SplitSpec::new(0.25, 8).unwrap();
        assert_eq!((s.c_id, s.c_en), (2, 6));
        let f = random(8, 5, 1);
        let (id, en) = split(&f, &s).unwrap();
        assert_eq!(SequenceTensor::concat_channels(&[&id, &en]).unwrap(), f);

        let s = SplitSpec::new(1.0, 8).unwrap();
        let (id, en) = split(&f, &s).unwrap();
        assert_eq!(id, f);
        assert_eq!(en.channels(), 0);

        assert!(split(&random(4, 5, 2), &SplitSpec::new(0.25, 8).unwrap()).is_err());
        assert!(SplitSpec::new(0.0, 8).is_err());
    }

    #[test]
    fn gate_examples() {
        let x = random(4, 6, 3);
        let s = gate(&x, &GateNet::zeros(4)).unwrap();
        assert!(s.iter().all(|&v| v == 0.5));

        // hidden h = gelu(x), out = h / gelu(1) * ln 3 : sigmoid → 0.75 at x = 1
        let k = 3f64.ln() / ops::gelu(1.0);
        let net = GateNet {
            w1: SequenceTensor::from_rows(&[vec![1.0]]).unwrap(),
            b1: SequenceTensor::zeros(1, 1),
            w2: SequenceTensor::from_rows(&[vec![k]]).unwrap(),
            b2: SequenceTensor::zeros(1, 1),
        };
        let s = gate(&SequenceTensor::from_rows(&[vec![0.0, 1.0]]).unwrap(), &net).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-15);
        assert!((s[1] - 0.75).abs() < 1e-12);

        let mut rng = RngState::new(5);
        let net = GateNet {
            w1: random(2, 4, 6),
            b1: random(2, 1, 7),
            w2: random(1, 2, 8),
            b2: random(1, 1, 9),
        };
        let s = gate(&x, &net).unwrap();
        let mut perm: Vec<usize> = (0..6).collect();
        rng.shuffle(&mut perm);
        let mut xp = x.clone();
        for (new_t, &old_t) in perm.iter().enumerate() {
            for c in 0..4 {
                xp.set(c, new_t, x.get(c, old_t));
            }
        }
        let sp = gate(&xp, &net).unwrap();
        for (new_t, &old_t) in perm.iter().enumerate() {
            assert_eq!(sp[new_t], s[old_t]);
        }
        assert!(gate(&SequenceTensor::zeros(0, 3), &GateNet::zeros(1)).is_err());
    }

    #[test]
    fn gate_mix_endpoints() {
        let (a, b) = (random(3, 4, 10), random(3, 4, 11));
        assert_eq!(gate_mix(&a, &b, &[1.0; 4]).unwrap(), a);
        assert_eq!(gate_mix(&a, &b, &[0.0; 4]).unwrap(), b);
        let same = gate_mix(&a, &a, &[0.3, 0.9, 0.1, 0.5]).unwrap();
        assert!(same.max_abs_diff(&a) < 1e-15);
        assert!(gate_mix(&a, &b, &[0.5; 3]).is_err());
    }

    #[test]
    fn alpha_one_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(0);
        let c = TrainConfig {
            split_ratio: 1.0,
            ..cfg(8)
        };
        let layer = ImwLayer::new(&mut store, "imw", &c, false, &mut rng).unwrap();
        assert!(layer.enhancement.is_none());
        let mut g = Graph::new();
        let x = g.constant(random(8, 6, 1));
        let out = layer.forward(&mut g, &store, x, Mode::Train, 0.1, &mut rng).unwrap();
        assert_eq!(g.value(out.out), g.value(x));
    }

    #[test]
    fn identity_channels_pass_untouched() {
        for seed in 0..5 {
            let mut store = ParamStore::new();
            let mut rng = RngState::new(seed);
            let layer = ImwLayer::new(&mut store, "imw", &cfg(8), false, &mut rng).unwrap();
            perturb_all(&mut store, seed + 50);
            let input = random(8, 6, seed + 7);
            let mut g = Graph::new();
            let x = g.constant(input.clone());
            let out = layer.forward(&mut g, &store, x, Mode::Eval, 0.1, &mut rng).unwrap();
            let y = g.value(out.out);
            assert_eq!(y.shape(), (8, 6));
            assert_eq!(y.slice_channels(0, 2), input.slice_channels(0, 2));
        }
    }

    #[test]
    fn block_matches_straight_line_composition() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(3);
        let layer = ImwLayer::new(&mut store, "imw", &cfg(8), false, &mut rng).unwrap();
        perturb_all(&mut store, 77);
        let input = random(8, 6, 4);
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let out = layer.forward(&mut g, &store, x, Mode::Eval, 0.1, &mut rng).unwrap();

        let enh = layer.enhancement.as_ref().unwrap();
        let (f_id, f_en) = split(&input, &layer.split).unwrap();
        let units: Vec<(ScanParams, ScanParams)> = enh
            .bimamba
            .units
            .iter()
            .map(|(f, b)| {
                let get = |l: &crate::bimamba::ScanLayer| ScanParams {
                    a: store.value(l.a).clone(),
                    w_in: store.value(l.w_in).clone(),
                    w_out: store.value(l.w_out).clone(),
                    d: store.value(l.d).clone(),
                };
                (get(f), get(b))
            })
            .collect();
        let y_m = bimamba_stack(&f_en, &units).unwrap();
        let levels: Vec<EnhanceParams> = enh
            .wavelet
            .levels
            .iter()
            .map(|&(k, gm)| EnhanceParams {
                kernels: store.value(k).clone(),
                gamma: store.value(gm).clone(),
            })
            .collect();
        let y_w = wavelet_branch(&f_en, &enh.wavelet.filters, &levels).unwrap();
        let Fusion::Gated(net) = &enh.fusion else { panic!() };
        let sigma = gate(&f_en, &net.net(&store)).unwrap();
        let fused = gated_fuse(
            &y_m,
            &y_w,
            &sigma,
            0.1,
            Mode::Eval,
            store.value(enh.ln_gain),
            store.value(enh.ln_shift),
            &mut rng,
        )
        .unwrap();
        let expected = SequenceTensor::concat_channels(&[&f_id, &fused]).unwrap();
        assert!(g.value(out.out).max_abs_diff(&expected) < 1e-12);
        assert_eq!(g.value(out.gate.unwrap()).row(0), sigma.as_slice());
    }

    #[test]
    fn gate_is_local_in_time() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(8);
        let layer = GateLayer::new(&mut store, "g", 5, &mut rng);
        let net = layer.net(&store);
        let x = random(5, 7, 9);
        let mut xp = x.clone();
        xp.set(2, 4, 10.0);
        let (s, sp) = (gate(&x, &net).unwrap(), gate(&xp, &net).unwrap());
        for t in 0..7 {
            if t != 4 {
                assert_eq!(s[t], sp[t]);
            }
        }
    }
}
