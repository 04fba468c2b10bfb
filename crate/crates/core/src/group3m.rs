//! Group3M fusion stage: multi-kernel refinement of the fused feature,
//! complementary cross-modal attention, iMambaWave on every stream, then
//! concatenation, projection, batch norm, GELU and stride-2 pooling.

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::imambawave::ImwLayer;
use crate::numcore::{ops, Graph, Mode, ParamId, ParamStore, RngState, SequenceTensor, Var};

pub const MODALITIES: [&str; 3] = ["rgb", "flow", "audio"];

/// Kernel sizes `{3, 5, …, 2K + 1}`.
pub fn kernel_sizes(k: usize) -> Vec<usize> {
    (1..=k).map(|j| 2 * j + 1).collect()
}

// ---------------------------------------------------------------- MKConv

#[derive(Clone, Debug, PartialEq)]
pub struct MkConvParams {
    /// One `C × (2j+1)` bank per kernel size.
    pub kernels: Vec<SequenceTensor>,
    pub proj_w: SequenceTensor,
    pub proj_b: SequenceTensor,
    pub ffn_w1: SequenceTensor,
    pub ffn_b1: SequenceTensor,
    pub ffn_w2: SequenceTensor,
    pub ffn_b2: SequenceTensor,
}

impl MkConvParams {
    pub fn zeros(channels: usize, k: usize) -> Self {
        let c = channels;
        Self {
            kernels: kernel_sizes(k).into_iter().map(|s| SequenceTensor::zeros(c, s)).collect(),
            proj_w: SequenceTensor::zeros(c, k * c),
            proj_b: SequenceTensor::zeros(c, 1),
            ffn_w1: SequenceTensor::zeros(2 * c, c),
            ffn_b1: SequenceTensor::zeros(2 * c, 1),
            ffn_w2: SequenceTensor::zeros(c, 2 * c),
            ffn_b2: SequenceTensor::zeros(c, 1),
        }
    }
}

struct MkConvVars {
    kernels: Vec<Var>,
    proj_w: Var,
    proj_b: Var,
    ffn_w1: Var,
    ffn_b1: Var,
    ffn_w2: Var,
    ffn_b2: Var,
}

fn mkconv_var(g: &mut Graph, x: Var, p: &MkConvVars) -> Result<Var> {
    let banks = p
        .kernels
        .iter()
        .map(|&k| g.dwconv1d(x, k))
        .collect::<Result<Vec<_>>>()?;
    let cat = g.concat_channels(&banks)?;
    let u = g.linear(cat, p.proj_w, Some(p.proj_b))?;
    let r = g.add(x, u)?;
    let h = g.linear(r, p.ffn_w1, Some(p.ffn_b1))?;
    let h = g.gelu(h);
    let ffn = g.linear(h, p.ffn_w2, Some(p.ffn_b2))?;
    let sum = g.add(r, ffn)?;
    Ok(g.gelu(sum))
}

/// `φ(F + U + FFN(F + U))` with `U` the 1×1 fusion of the kernel banks.
pub fn mkconv(x: &SequenceTensor, p: &MkConvParams) -> Result<SequenceTensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let vars = MkConvVars {
        kernels: p.kernels.iter().map(|k| g.constant(k.clone())).collect(),
        proj_w: g.constant(p.proj_w.clone()),
        proj_b: g.constant(p.proj_b.clone()),
        ffn_w1: g.constant(p.ffn_w1.clone()),
        ffn_b1: g.constant(p.ffn_b1.clone()),
        ffn_w2: g.constant(p.ffn_w2.clone()),
        ffn_b2: g.constant(p.ffn_b2.clone()),
    };
    let out = mkconv_var(&mut g, xv, &vars)?;
    Ok(g.value(out).clone())
}

#[derive(Clone, Debug)]
pub struct MkConvLayer {
    pub kernels: Vec<ParamId>,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
}

impl MkConvLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, c: usize, k: usize, rng: &mut RngState) -> Self {
        let m = "mkconv";
        let kernels = kernel_sizes(k)
            .into_iter()
            .map(|s| store.add_weight(&format!("{prefix}.dw{s}"), m, c, s, rng))
            .collect();
        Self {
            kernels,
            proj_w: store.add_weight(&format!("{prefix}.proj.w"), m, c, k * c, rng),
            proj_b: store.add_bias(&format!("{prefix}.proj.b"), m, c, k * c, rng),
            ffn_w1: store.add_weight(&format!("{prefix}.ffn.w1"), m, 2 * c, c, rng),
            ffn_b1: store.add_bias(&format!("{prefix}.ffn.b1"), m, 2 * c, c, rng),
            ffn_w2: store.add_weight(&format!("{prefix}.ffn.w2"), m, c, 2 * c, rng),
            ffn_b2: store.add_bias(&format!("{prefix}.ffn.b2"), m, c, 2 * c, rng),
        }
    }

    pub fn params(&self, store: &ParamStore) -> MkConvParams {
        let v = |id| store.value(id).clone();
        MkConvParams {
            kernels: self.kernels.iter().map(|&k| v(k)).collect(),
            proj_w: v(self.proj_w),
            proj_b: v(self.proj_b),
            ffn_w1: v(self.ffn_w1),
            ffn_b1: v(self.ffn_b1),
            ffn_w2: v(self.ffn_w2),
            ffn_b2: v(self.ffn_b2),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let vars = MkConvVars {
            kernels: self.kernels.iter().map(|&k| g.param(store, k)).collect(),
            proj_w: g.param(store, self.proj_w),
            proj_b: g.param(store, self.proj_b),
            ffn_w1: g.param(store, self.ffn_w1),
            ffn_b1: g.param(store, self.ffn_b1),
            ffn_w2: g.param(store, self.ffn_w2),
            ffn_b2: g.param(store, self.ffn_b2),
        };
        mkconv_var(g, x, &vars)
    }
}

// ------------------------------------------------------------------ MoCA

#[derive(Clone, Debug, PartialEq)]
pub struct MocaParams {
    pub heads: usize,
    pub w_q: SequenceTensor,
    pub w_k: SequenceTensor,
    pub w_v: SequenceTensor,
    pub w_o: SequenceTensor,
    pub b_o: SequenceTensor,
}

/// Attention weights over the three modalities for one `(t, head)`,
/// from negated scaled dot products.
pub fn complement_weights(q: &[f64], keys: [&[f64]; 3]) -> [f64; 3] {
    let scale = 1.0 / (q.len() as f64).sqrt();
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| -q.iter().zip(k.iter()).map(|(a, b)| a * b).sum::<f64>() * scale)
        .collect();
    let w = ops::softmax(&scores).expect("three scores");
    [w[0], w[1], w[2]]
}

/// Per-step, per-head attention of projected queries over projected
/// modality keys/values. Inputs are already projected (`C × T`).
fn attend_var(g: &mut Graph, q: Var, keys: [Var; 3], values: [Var; 3], heads: usize) -> Result<Var> {
    let (c, t) = g.shape(q);
    for &v in keys.iter().chain(values.iter()) {
        if g.shape(v) != (c, t) {
            return Err(Error::shape("moca", g.value(q).shape_str(), g.value(v).shape_str()));
        }
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::InvalidArgument(format!("heads ({heads}) must divide channels ({c})")));
    }
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = SequenceTensor::zeros(c, t);
    let mut weights = vec![[0.0; 3]; heads * t];
    {
        let qv = g.value(q);
        let kv: Vec<&SequenceTensor> = keys.iter().map(|&k| g.value(k)).collect();
        let vv: Vec<&SequenceTensor> = values.iter().map(|&v| g.value(v)).collect();
        for tt in 0..t {
            for h in 0..heads {
                let rows = h * dh..(h + 1) * dh;
                let qh: Vec<f64> = rows.clone().map(|r| qv.get(r, tt)).collect();
                let k0: Vec<f64> = rows.clone().map(|r| kv[0].get(r, tt)).collect();
                let k1: Vec<f64> = rows.clone().map(|r| kv[1].get(r, tt)).collect();
                let k2: Vec<f64> = rows.clone().map(|r| kv[2].get(r, tt)).collect();
                let w = complement_weights(&qh, [&k0, &k1, &k2]);
                weights[tt * heads + h] = w;
                for r in rows {
                    let o = (0..3).map(|m| w[m] * vv[m].get(r, tt)).sum();
                    out.set(r, tt, o);
                }
            }
        }
    }
    Ok(g.custom(out, move |gout, _, nodes| {
        let qv = nodes[q.index()].value();
        let kv: Vec<&SequenceTensor> = keys.iter().map(|&k| nodes[k.index()].value()).collect();
        let vv: Vec<&SequenceTensor> = values.iter().map(|&v| nodes[v.index()].value()).collect();
        let mut gq = SequenceTensor::zeros(c, t);
        let mut gk = vec![SequenceTensor::zeros(c, t); 3];
        let mut gv = vec![SequenceTensor::zeros(c, t); 3];
        for tt in 0..t {
            for h in 0..heads {
                let w = weights[tt * heads + h];
                let rows = h * dh..(h + 1) * dh;
                // dL/dw_m = go · v_m
                let mut gw = [0.0; 3];
                for r in rows.clone() {
                    let go = gout.get(r, tt);
                    for m in 0..3 {
                        gw[m] += go * vv[m].get(r, tt);
                        gv[m].set(r, tt, w[m] * go);
                    }
                }
                let dot: f64 = (0..3).map(|m| w[m] * gw[m]).sum();
                let gs: Vec<f64> = (0..3).map(|m| w[m] * (gw[m] - dot)).collect();
                // s_m = −scale · q·k_m
                for r in rows {
                    let mut acc = 0.0;
                    for m in 0..3 {
                        acc -= gs[m] * scale * kv[m].get(r, tt);
                        gk[m].set(r, tt, -gs[m] * scale * qv.get(r, tt));
                    }
                    gq.set(r, tt, acc);
                }
            }
        }
        let mut contribs = vec![(q, gq)];
        for (m, gkm) in gk.into_iter().enumerate() {
            contribs.push((keys[m], gkm));
        }
        for (m, gvm) in gv.into_iter().enumerate() {
            contribs.push((values[m], gvm));
        }
        contribs
    }))
}

struct MocaVars {
    w_q: Var,
    w_k: Var,
    w_v: Var,
    w_o: Var,
    b_o: Var,
}

fn moca_var(g: &mut Graph, query: Var, modal: [Var; 3], p: &MocaVars, heads: usize) -> Result<Var> {
    let q = g.linear(query, p.w_q, None)?;
    let mut keys = [q; 3];
    let mut values = [q; 3];
    for m in 0..3 {
        keys[m] = g.linear(modal[m], p.w_k, None)?;
        values[m] = g.linear(modal[m], p.w_v, None)?;
    }
    let att = attend_var(g, q, keys, values, heads)?;
    g.linear(att, p.w_o, Some(p.b_o))
}

pub fn moca(query: &SequenceTensor, modal: [&SequenceTensor; 3], p: &MocaParams) -> Result<SequenceTensor> {
    for m in modal {
        query.ensure_same_shape(m, "moca")?;
    }
    let mut g = Graph::new();
    let qv = g.constant(query.clone());
    let mv = [
        g.constant(modal[0].clone()),
        g.constant(modal[1].clone()),
        g.constant(modal[2].clone()),
    ];
    let vars = MocaVars {
        w_q: g.constant(p.w_q.clone()),
        w_k: g.constant(p.w_k.clone()),
        w_v: g.constant(p.w_v.clone()),
        w_o: g.constant(p.w_o.clone()),
        b_o: g.constant(p.b_o.clone()),
    };
    let out = moca_var(&mut g, qv, mv, &vars, p.heads)?;
    Ok(g.value(out).clone())
}

/// Attention weights `[t][head][modality]` the block would use.
pub fn moca_weights(
    query: &SequenceTensor,
    modal: [&SequenceTensor; 3],
    p: &MocaParams,
) -> Result<Vec<Vec<[f64; 3]>>> {
    let q = ops::linear(query, &p.w_q, None)?;
    let keys = modal
        .iter()
        .map(|m| ops::linear(m, &p.w_k, None))
        .collect::<Result<Vec<_>>>()?;
    let c = q.channels();
    if p.heads == 0 || c % p.heads != 0 {
        return Err(Error::InvalidArgument(format!("heads ({}) must divide channels ({c})", p.heads)));
    }
    let dh = c / p.heads;
    Ok((0..q.time())
        .map(|t| {
            (0..p.heads)
                .map(|h| {
                    let col = |x: &SequenceTensor| (h * dh..(h + 1) * dh).map(|r| x.get(r, t)).collect::<Vec<_>>();
                    let (k0, k1, k2) = (col(&keys[0]), col(&keys[1]), col(&keys[2]));
                    complement_weights(&col(&q), [&k0, &k1, &k2])
                })
                .collect()
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct MocaLayer {
    pub heads: usize,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
}

impl MocaLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, c: usize, heads: usize, rng: &mut RngState) -> Self {
        let m = "moca";
        Self {
            heads,
            w_q: store.add_weight(&format!("{prefix}.w_q"), m, c, c, rng),
            w_k: store.add_weight(&format!("{prefix}.w_k"), m, c, c, rng),
            w_v: store.add_weight(&format!("{prefix}.w_v"), m, c, c, rng),
            w_o: store.add_weight(&format!("{prefix}.w_o"), m, c, c, rng),
            b_o: store.add_bias(&format!("{prefix}.b_o"), m, c, c, rng),
        }
    }

    pub fn params(&self, store: &ParamStore) -> MocaParams {
        MocaParams {
            heads: self.heads,
            w_q: store.value(self.w_q).clone(),
            w_k: store.value(self.w_k).clone(),
            w_v: store.value(self.w_v).clone(),
            w_o: store.value(self.w_o).clone(),
            b_o: store.value(self.b_o).clone(),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, query: Var, modal: [Var; 3]) -> Result<Var> {
        let vars = MocaVars {
            w_q: g.param(store, self.w_q),
            w_k: g.param(store, self.w_k),
            w_v: g.param(store, self.w_v),
            w_o: g.param(store, self.w_o),
            b_o: g.param(store, self.b_o),
        };
        moca_var(g, query, modal, &vars, self.heads)
    }
}

// --------------------------------------------------------------- Group3M

/// Streams threaded between stages for one sample.
#[derive(Clone, Copy, Debug)]
pub struct StageState {
    pub fused: Var,
    /// rgb, flow, audio.
    pub modal: [Var; 3],
}

/// Block roles in gate traces: the three modalities, then the fused stream.
pub const BLOCK_ROLES: [&str; 4] = ["rgb", "flow", "audio", "fused"];

#[derive(Clone, Debug, PartialEq)]
pub struct GateRecord {
    pub stage: usize,
    pub role: &'static str,
    pub sample: usize,
    pub sigma: Vec<f64>,
}

/// Mutable per-forward state: mode, dropout streams, collected traces and
/// pending batch-norm running-stat updates.
pub struct ForwardCtx {
    pub mode: Mode,
    pub dropout: f64,
    /// One dropout stream per batch sample.
    pub rngs: Vec<RngState>,
    pub trace: Option<Vec<GateRecord>>,
    /// `(mean id, var id, batch mean, batch var, positions)`.
    pub bn_updates: Vec<(ParamId, ParamId, Vec<f64>, Vec<f64>, usize)>,
}

impl ForwardCtx {
    pub fn new(mode: Mode, dropout: f64, rngs: Vec<RngState>) -> Self {
        Self {
            mode,
            dropout,
            rngs,
            trace: None,
            bn_updates: Vec::new(),
        }
    }

    pub fn eval(batch: usize) -> Self {
        Self::new(Mode::Eval, 0.0, vec![RngState::new(0); batch])
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Folds pending running-stat updates into `store`.
    pub fn apply_bn_updates(&mut self, store: &mut ParamStore) {
        for (mid, vid, mean, var, n) in self.bn_updates.drain(..) {
            let mut stats = ops::BatchNormStats {
                mean: store.value(mid).data().to_vec(),
                var: store.value(vid).data().to_vec(),
            };
            ops::update_running_stats(&mut stats, &mean, &var, n);
            store.value_mut(mid).data_mut().copy_from_slice(&stats.mean);
            store.value_mut(vid).data_mut().copy_from_slice(&stats.var);
        }
    }
}

#[derive(Clone, Debug)]
pub struct Group3mLayer {
    pub stage: usize,
    pub mkconv: MkConvLayer,
    pub moca: MocaLayer,
    /// rgb, flow, audio, fused.
    pub imw: [ImwLayer; 4],
    pub proj_w: ParamId,
    pub bn_gain: ParamId,
    pub bn_shift: ParamId,
    pub bn_mean: ParamId,
    pub bn_var: ParamId,
}

impl Group3mLayer {
    pub fn new(store: &mut ParamStore, stage: usize, cfg: &TrainConfig, rng: &mut RngState) -> Result<Self> {
        let c = cfg.channels;
        let p = format!("stage{stage}");
        let mkconv = MkConvLayer::new(store, &format!("{p}.mkconv"), c, cfg.mkconv_k, rng);
        let moca = MocaLayer::new(store, &format!("{p}.moca"), c, cfg.heads, rng);
        let mut imw = Vec::with_capacity(4);
        for role in BLOCK_ROLES {
            imw.push(ImwLayer::new(store, &format!("{p}.imw_{role}"), cfg, false, rng)?);
        }
        let imw: [ImwLayer; 4] = imw.try_into().expect("four roles");
        Ok(Self {
            stage,
            mkconv,
            moca,
            imw,
            proj_w: store.add_weight(&format!("{p}.proj.w"), "proj", c, 3 * c, rng),
            bn_gain: store.add_const(&format!("{p}.bn.gain"), "proj", c, 1.0),
            bn_shift: store.add_const(&format!("{p}.bn.shift"), "proj", c, 0.0),
            bn_mean: store.add_buffer(&format!("{p}.bn.running_mean"), "proj", SequenceTensor::zeros(c, 1)),
            bn_var: store.add_buffer(&format!("{p}.bn.running_var"), "proj", SequenceTensor::filled(c, 1, 1.0)),
        })
    }

    /// Runs steps 1–4 (refine, enhance, attend, concatenate) for one sample
    /// and returns `(Z, enhanced modal features)`.
    pub fn aggregate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        state: StageState,
        sample: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<(Var, [Var; 3])> {
        let (c, t) = g.shape(state.fused);
        for &m in &state.modal {
            if g.shape(m) != (c, t) {
                return Err(Error::shape(
                    "group3m",
                    g.value(state.fused).shape_str(),
                    g.value(m).shape_str(),
                ));
            }
        }
        let refined = self.mkconv.forward(g, store, state.fused)?;
        let mut enhanced = state.modal;
        for m in 0..3 {
            enhanced[m] = self.run_imw(g, store, m, state.modal[m], sample, ctx)?;
        }
        let n = self.moca.forward(g, store, refined, enhanced)?;
        let imw_fused = self.run_imw(g, store, 3, refined, sample, ctx)?;
        let z = g.concat_channels(&[refined, n, imw_fused])?;
        Ok((z, enhanced))
    }

    fn run_imw(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        block: usize,
        x: Var,
        sample: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let out = self.imw[block].forward(g, store, x, ctx.mode, ctx.dropout, &mut ctx.rngs[sample])?;
        if let (Some(trace), Some(s)) = (ctx.trace.as_mut(), out.gate) {
            trace.push(GateRecord {
                stage: self.stage,
                role: BLOCK_ROLES[block],
                sample,
                sigma: g.value(s).row(0).to_vec(),
            });
        }
        Ok(out.out)
    }

    /// One stage over a batch; batch norm couples the samples in train mode.
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        states: &[StageState],
        ctx: &mut ForwardCtx,
    ) -> Result<Vec<StageState>> {
        let mut projected = Vec::with_capacity(states.len());
        let mut modal_out = Vec::with_capacity(states.len());
        let w = g.param(store, self.proj_w);
        for (i, &st) in states.iter().enumerate() {
            let (z, enhanced) = self.aggregate(g, store, st, i, ctx)?;
            projected.push(g.linear(z, w, None)?);
            modal_out.push(enhanced);
        }
        let normed = self.batchnorm(g, store, &projected, ctx)?;
        let mut next = Vec::with_capacity(states.len());
        for (y, enhanced) in normed.into_iter().zip(modal_out) {
            let y = g.gelu(y);
            let fused = g.temporal_avg_pool(y)?;
            let mut modal = enhanced;
            for m in &mut modal {
                *m = g.temporal_avg_pool(*m)?;
            }
            next.push(StageState { fused, modal });
        }
        Ok(next)
    }

    fn batchnorm(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        xs: &[Var],
        ctx: &mut ForwardCtx,
    ) -> Result<Vec<Var>> {
        let gain = g.param(store, self.bn_gain);
        let shift = g.param(store, self.bn_shift);
        match ctx.mode {
            Mode::Train => {
                let joined = g.concat_time(xs)?;
                let (normed, mean, var) = g.batchnorm_train(joined, gain, shift)?;
                ctx.bn_updates
                    .push((self.bn_mean, self.bn_var, mean, var, g.shape(joined).1));
                let mut out = Vec::with_capacity(xs.len());
                let mut start = 0;
                for &x in xs {
                    let t = g.shape(x).1;
                    out.push(g.slice_time(normed, start, t)?);
                    start += t;
                }
                Ok(out)
            }
            Mode::Eval => {
                let mean = store.value(self.bn_mean).data().to_vec();
                let var = store.value(self.bn_var).data().to_vec();
                xs.iter()
                    .map(|&x| g.batchnorm_eval(x, gain, shift, mean.clone(), var.clone()))
                    .collect()
            }
        }
    }
}
