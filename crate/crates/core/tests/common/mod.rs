//! Seeded structural checks shared by the property tests and the
//! acceptance report. Each returns `Err` with a description on violation.

#![allow(dead_code)]

use pidnet::bimamba::{bimamba_stack, flip, ssm_scan, ScanParams};
use pidnet::group3m::{complement_weights, kernel_sizes, mkconv, moca_weights, MkConvParams, MocaParams};
use pidnet::imambawave::{gate, gate_mix, GateNet, ImwLayer};
use pidnet::model::{ModalityBundle, PidnetModel};
use pidnet::numcore::{Graph, Mode, ParamStore, RngState, SequenceTensor};
use pidnet::wavelet::{dwt1, idwt1, wavelet_branch, EnhanceParams, WaveletBasis, WaveletFilters};
use pidnet::{Ablation, FusionStrategy, TrainConfig};

pub type Check = std::result::Result<(), String>;

pub fn random(c: usize, t: usize, rng: &mut RngState) -> SequenceTensor {
    SequenceTensor::from_vec(c, t, (0..c * t).map(|_| rng.normal()).collect()).unwrap()
}

pub fn perturb(store: &mut ParamStore, rng: &mut RngState, scale: f64) {
    for id in store.ids().collect::<Vec<_>>() {
        if store.entry(id).trainable {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v += scale * rng.normal());
        }
    }
}

pub fn small_cfg(channels: usize) -> TrainConfig {
    TrainConfig {
        channels,
        heads: 2,
        align_length: 16,
        ..TrainConfig::test_profile()
    }
}

pub fn reconstruction(basis: WaveletBasis, t: usize, seed: u64) -> Check {
    let f = WaveletFilters::new(basis);
    let x = random(3, t, &mut RngState::new(seed));
    let back = idwt1(&dwt1(&x, &f).map_err(|e| e.to_string())?, &f, t).map_err(|e| e.to_string())?;
    let err = back.max_abs_diff(&x);
    if err <= 1e-10 {
        Ok(())
    } else {
        Err(format!("{basis:?} T={t} seed {seed}: error {err:.3e}"))
    }
}

pub fn identity_branch(seed: u64, alpha: f64, depth: usize, levels: usize, ablation: Ablation) -> Check {
    let mut rng = RngState::new(seed);
    let cfg = TrainConfig {
        split_ratio: alpha,
        bimamba_depth: depth,
        wavelet_levels: levels,
        ablation,
        ..small_cfg(8)
    };
    let mut store = ParamStore::new();
    let layer = ImwLayer::new(&mut store, "imw", &cfg, false, &mut rng).map_err(|e| e.to_string())?;
    perturb(&mut store, &mut rng, 0.5);
    let x = random(8, 16, &mut rng);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = layer
        .forward(&mut g, &store, xv, Mode::Eval, cfg.dropout, &mut rng)
        .map_err(|e| e.to_string())?;
    let y = g.value(out.out);
    if y.shape() != x.shape() {
        return Err(format!("output {} for input {}", y.shape_str(), x.shape_str()));
    }
    let c_id = layer.split.c_id;
    if y.slice_channels(0, c_id) != x.slice_channels(0, c_id) {
        return Err(format!("alpha {alpha}: identity channels [0, {c_id}) changed"));
    }
    Ok(())
}

fn random_scan(c: usize, rng: &mut RngState) -> ScanParams {
    ScanParams::random(c, rng)
}

fn random_gate(c: usize, rng: &mut RngState) -> GateNet {
    let z = GateNet::zeros(c);
    let r = |t: &SequenceTensor, rng: &mut RngState| random(t.channels(), t.time(), rng);
    GateNet {
        w1: r(&z.w1, rng),
        b1: r(&z.b1, rng),
        w2: r(&z.w2, rng),
        b2: r(&z.b2, rng),
    }
}

pub fn gate_convex_hull(seed: u64) -> Check {
    let mut rng = RngState::new(seed);
    let (c, t) = (4, 10);
    let x = random(c, t, &mut rng);
    let units = vec![(random_scan(c, &mut rng), random_scan(c, &mut rng))];
    let y_m = bimamba_stack(&x, &units).map_err(|e| e.to_string())?;
    let enh = EnhanceParams {
        kernels: random(2 * c, 3, &mut rng),
        gamma: random(2 * c, 1, &mut rng),
    };
    let y_w = wavelet_branch(&x, &WaveletFilters::new(WaveletBasis::Db2), &[enh]).map_err(|e| e.to_string())?;
    let sigma = gate(&x, &random_gate(c, &mut rng)).map_err(|e| e.to_string())?;
    if sigma.iter().any(|&s| !(s > 0.0 && s < 1.0)) {
        return Err(format!("gate outside (0, 1): {sigma:?}"));
    }
    let mixed = gate_mix(&y_m, &y_w, &sigma).map_err(|e| e.to_string())?;
    for i in 0..mixed.len() {
        let (a, b, m) = (y_m.data()[i], y_w.data()[i], mixed.data()[i]);
        let slack = 1e-12 * a.abs().max(b.abs()).max(1.0);
        if m < a.min(b) - slack || m > a.max(b) + slack {
            return Err(format!("element {i}: {m} outside [{a}, {b}]"));
        }
    }
    Ok(())
}

/// Changing one step of the enhancement input moves the gate only there.
pub fn gate_locality(seed: u64) -> Check {
    let mut rng = RngState::new(seed);
    let x = random(5, 9, &mut rng);
    let net = random_gate(5, &mut rng);
    let base = gate(&x, &net).map_err(|e| e.to_string())?;
    let at = rng.int_range(0, 8);
    let mut y = x.clone();
    y.set(rng.int_range(0, 4), at, 3.0 + rng.normal());
    let moved = gate(&y, &net).map_err(|e| e.to_string())?;
    for t in (0..9).filter(|&t| t != at) {
        if moved[t] != base[t] {
            return Err(format!("perturbing step {at} changed gate at {t}"));
        }
    }
    Ok(())
}

fn random_moca(c: usize, heads: usize, rng: &mut RngState) -> MocaParams {
    MocaParams {
        heads,
        w_q: random(c, c, rng),
        w_k: random(c, c, rng),
        w_v: random(c, c, rng),
        w_o: random(c, c, rng),
        b_o: random(c, 1, rng),
    }
}

pub fn moca_simplex(seed: u64) -> Check {
    let mut rng = RngState::new(seed);
    let p = scaled_down(random_moca(8, 4, &mut rng));
    let q = random(8, 6, &mut rng);
    let m: Vec<SequenceTensor> = (0..3).map(|_| random(8, 6, &mut rng)).collect();
    let w = moca_weights(&q, [&m[0], &m[1], &m[2]], &p).map_err(|e| e.to_string())?;
    for (t, heads) in w.iter().enumerate() {
        for (h, w) in heads.iter().enumerate() {
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() >= 1e-12 {
                return Err(format!("t={t} head={h}: weights {w:?} sum {sum}"));
            }
        }
    }
    Ok(())
}

fn scaled_down(mut p: MocaParams) -> MocaParams {
    let s = 1.0 / (p.w_q.channels() as f64).sqrt();
    for w in [&mut p.w_q, &mut p.w_k, &mut p.w_v, &mut p.w_o] {
        *w = w.scale(s);
    }
    p
}

/// Raising `q·k_m` with the other keys fixed strictly lowers `w_m`.
pub fn moca_anti_similarity(seed: u64) -> Check {
    let mut rng = RngState::new(seed);
    let d = 4;
    let q: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let keys: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
    let m = rng.int_range(0, 2);
    let base = complement_weights(&q, [&keys[0], &keys[1], &keys[2]]);
    let qq: f64 = q.iter().map(|v| v * v).sum();
    let step = 0.05 + rng.uniform();
    let mut bumped = keys.clone();
    // moving k_m along q raises q·k_m by step·|q|²
    bumped[m].iter_mut().zip(&q).for_each(|(k, qi)| *k += step * qi / qq.max(1e-12));
    let after = complement_weights(&q, [&bumped[0], &bumped[1], &bumped[2]]);
    if after[m] < base[m] {
        Ok(())
    } else {
        Err(format!("w_{m} went from {} to {} after raising q.k", base[m], after[m]))
    }
}

pub fn flip_equivariance(seed: u64, depth: usize) -> Check {
    let mut rng = RngState::new(seed);
    let c = 4;
    let x = random(c, 11, &mut rng);
    let units: Vec<(ScanParams, ScanParams)> = (0..depth)
        .map(|_| {
            let p = random_scan(c, &mut rng);
            (p.clone(), p)
        })
        .collect();
    let a = bimamba_stack(&flip(&x), &units).map_err(|e| e.to_string())?;
    let b = flip(&bimamba_stack(&x, &units).map_err(|e| e.to_string())?);
    if a == b {
        Ok(())
    } else {
        Err(format!("depth {depth}: max deviation {:.3e}", a.max_abs_diff(&b)))
    }
}

pub fn scan_causality(seed: u64) -> Check {
    let mut rng = RngState::new(seed);
    let t = 12;
    let x = random(3, t, &mut rng);
    let p = random_scan(3, &mut rng);
    let at = rng.int_range(0, t - 1);
    let mut x2 = x.clone();
    x2.set(rng.int_range(0, 2), at, 5.0);
    let (y, y2) = (
        ssm_scan(&x, &p).map_err(|e| e.to_string())?,
        ssm_scan(&x2, &p).map_err(|e| e.to_string())?,
    );
    if at > 0 && y.slice_time(0, at) != y2.slice_time(0, at) {
        return Err(format!("perturbation at {at} leaked into earlier steps"));
    }
    if y.slice_time(at, t - at) == y2.slice_time(at, t - at) {
        return Err(format!("perturbation at {at} had no effect"));
    }
    Ok(())
}

pub fn bundle(dims: [usize; 3], t: usize, rng: &mut RngState) -> ModalityBundle {
    ModalityBundle::new(random(dims[0], t, rng), random(dims[1], t, rng), random(dims[2], t, rng))
}

/// One configuration of the ablation grids: block and MKConv shapes plus
/// a finite prediction per sample from the full model.
pub fn shape_contract(cfg: &TrainConfig) -> Check {
    let label = format!(
        "alpha={} K={} N={} Q={} fusion={:?} ablation={:?}",
        cfg.split_ratio, cfg.mkconv_k, cfg.bimamba_depth, cfg.wavelet_levels, cfg.fusion_strategy, cfg.ablation
    );
    let fail = |e: pidnet::Error| format!("{label}: {e}");
    let mut rng = RngState::new(cfg.seed);
    let c = cfg.channels;
    let mut mk = MkConvParams::zeros(c, cfg.mkconv_k);
    if mk.kernels.len() != kernel_sizes(cfg.mkconv_k).len() {
        return Err(format!("{label}: kernel bank size"));
    }
    mk.proj_w = random(mk.proj_w.channels(), mk.proj_w.time(), &mut rng);
    let x = random(c, cfg.align_length, &mut rng);
    let y = mkconv(&x, &mk).map_err(fail)?;
    if y.shape() != x.shape() {
        return Err(format!("{label}: mkconv output {}", y.shape_str()));
    }
    let mut store = ParamStore::new();
    let layer = ImwLayer::new(&mut store, "imw", cfg, false, &mut rng).map_err(fail)?;
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = layer.forward(&mut g, &store, xv, Mode::Eval, 0.0, &mut rng).map_err(fail)?;
    if g.value(out.out).shape() != x.shape() {
        return Err(format!("{label}: block output {}", g.value(out.out).shape_str()));
    }
    let dims = [5, 4, 3];
    let model = PidnetModel::new(cfg, dims).map_err(fail)?;
    let batch: Vec<ModalityBundle> = (0..2).map(|_| bundle(dims, cfg.align_length, &mut rng)).collect();
    let preds = model.predict(&batch).map_err(fail)?;
    if preds.len() != 2 || preds.iter().any(|p| !p.is_finite()) {
        return Err(format!("{label}: predictions {preds:?}"));
    }
    Ok(())
}

/// The one-axis-at-a-time grids swept by the ablation tables.
pub fn ablation_grid() -> Vec<TrainConfig> {
    let base = TrainConfig {
        channels: 8,
        heads: 2,
        align_length: 32,
        ..TrainConfig::test_profile()
    };
    let mut out = Vec::new();
    for alpha in [0.05, 0.25, 0.5, 0.75, 0.95] {
        out.push(TrainConfig { split_ratio: alpha, ..base.clone() });
    }
    for k in 1..=5 {
        out.push(TrainConfig { mkconv_k: k, ..base.clone() });
    }
    for n in 1..=5 {
        out.push(TrainConfig { bimamba_depth: n, ..base.clone() });
    }
    for q in 1..=3 {
        for basis in [WaveletBasis::Haar, WaveletBasis::Db2] {
            out.push(TrainConfig { wavelet_levels: q, wavelet_basis: basis, ..base.clone() });
        }
    }
    for f in [FusionStrategy::Gated, FusionStrategy::Sum, FusionStrategy::Concat] {
        out.push(TrainConfig { fusion_strategy: f, ..base.clone() });
    }
    for a in [
        Ablation::Full,
        Ablation::NoSplit,
        Ablation::IdentityOnly,
        Ablation::SplitBimamba,
        Ablation::SplitWavelet,
    ] {
        out.push(TrainConfig { ablation: a, ..base.clone() });
    }
    out
}
