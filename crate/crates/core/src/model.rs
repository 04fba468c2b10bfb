//! End-to-end assembly: embeddings, three fusion stages, pooling and the
//! regression head.

use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::group3m::{ForwardCtx, GateRecord, Group3mLayer, StageState, MODALITIES};
use crate::numcore::{
    grad_check_with, ops, GradCheckOptions, GradCheckReport, Graph, Mode, ParamId, ParamStore, RngState,
    SequenceTensor, Var,
};

pub const NUM_STAGES: usize = 3;

/// Backbone dims of the reference setup (rgb, flow, audio).
pub const DEFAULT_DIMS: [usize; 3] = [1024, 1024, 768];

/// The three modality sequences of one sample, each stored channel-major
/// as `d_m × T` (feature dims as rows).
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBundle {
    pub rgb: SequenceTensor,
    pub flow: SequenceTensor,
    pub audio: SequenceTensor,
}

impl ModalityBundle {
    pub fn new(rgb: SequenceTensor, flow: SequenceTensor, audio: SequenceTensor) -> Self {
        Self { rgb, flow, audio }
    }

    pub fn get(&self, m: usize) -> &SequenceTensor {
        match m {
            0 => &self.rgb,
            1 => &self.flow,
            2 => &self.audio,
            _ => panic!("modality index {m} out of range"),
        }
    }

    pub fn get_mut(&mut self, m: usize) -> &mut SequenceTensor {
        match m {
            0 => &mut self.rgb,
            1 => &mut self.flow,
            _ => &mut self.audio,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.rgb.channels(), self.flow.channels(), self.audio.channels()]
    }

    pub fn lengths(&self) -> [usize; 3] {
        [self.rgb.time(), self.flow.time(), self.audio.time()]
    }
}

/// `(1/n) Σ (ŷ_i − y_i)²`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("mse of an empty batch".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "mse length mismatch: {} predictions, {} targets",
            pred.len(),
            target.len()
        )));
    }
    let s: f64 = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / pred.len() as f64)
}

/// Linear `d_m → C` per time step followed by layernorm across channels.
/// `x` is `d_m × T`; output is `C × T`.
pub fn embed(
    x: &SequenceTensor,
    w: &SequenceTensor,
    b: &SequenceTensor,
    ln_gain: &SequenceTensor,
    ln_shift: &SequenceTensor,
) -> Result<SequenceTensor> {
    let y = ops::linear(x, w, Some(b))?;
    ops::layernorm(&y, ln_gain, ln_shift, ops::LAYERNORM_EPS)
}

#[derive(Clone, Debug)]
pub struct EmbedLayer {
    pub dim: usize,
    pub w: ParamId,
    pub b: ParamId,
    pub ln_gain: ParamId,
    pub ln_shift: ParamId,
}

impl EmbedLayer {
    fn new(store: &mut ParamStore, name: &str, dim: usize, c: usize, rng: &mut RngState) -> Self {
        let p = format!("embed.{name}");
        Self {
            dim,
            w: store.add_weight(&format!("{p}.w"), "embed", c, dim, rng),
            b: store.add_bias(&format!("{p}.b"), "embed", c, dim, rng),
            ln_gain: store.add_const(&format!("{p}.ln.gain"), "embed", c, 1.0),
            ln_shift: store.add_const(&format!("{p}.ln.shift"), "embed", c, 0.0),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        let y = g.linear(x, w, Some(b))?;
        let (lg, ls) = (g.param(store, self.ln_gain), g.param(store, self.ln_shift));
        g.layernorm(y, lg, ls)
    }
}

#[derive(Clone, Debug)]
pub struct PidnetModel {
    pub config: TrainConfig,
    pub dims: [usize; 3],
    pub store: ParamStore,
    pub embed: [EmbedLayer; 3],
    pub stages: Vec<Group3mLayer>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl PidnetModel {
    /// Builds a freshly initialized model. Initialization is a pure function
    /// of `(config, dims)`.
    pub fn new(config: &TrainConfig, dims: [usize; 3]) -> Result<Self> {
        config.validate()?;
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("modality dims must be positive, got {dims:?}")));
        }
        let c = config.channels;
        let mut rng = RngState::derive(config.seed, &[0x1417]);
        let mut store = ParamStore::new();
        let embed = [
            EmbedLayer::new(&mut store, MODALITIES[0], dims[0], c, &mut rng),
            EmbedLayer::new(&mut store, MODALITIES[1], dims[1], c, &mut rng),
            EmbedLayer::new(&mut store, MODALITIES[2], dims[2], c, &mut rng),
        ];
        let stages = (1..=NUM_STAGES)
            .map(|s| Group3mLayer::new(&mut store, s, config, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head_w = store.add_weight("head.w", "head", 1, c, &mut rng);
        let head_b = store.add_bias("head.b", "head", 1, c, &mut rng);
        Ok(Self {
            config: config.clone(),
            dims,
            store,
            embed,
            stages,
            head_w,
            head_b,
        })
    }

    pub fn check_bundle(&self, b: &ModalityBundle) -> Result<usize> {
        let dims = b.dims();
        if dims != self.dims {
            return Err(Error::InvalidArgument(format!(
                "modality dims {dims:?} do not match model dims {:?}",
                self.dims
            )));
        }
        let lens = b.lengths();
        if lens[0] != lens[1] || lens[0] != lens[2] || lens[0] == 0 {
            return Err(Error::InvalidArgument(format!(
                "modalities must be aligned to one non-zero length, got {lens:?}"
            )));
        }
        Ok(lens[0])
    }

    /// Records the whole batch on `g` and returns one `1 × 1` prediction
    /// per sample. Uses `store` rather than `self.store` so callers can
    /// evaluate perturbed copies.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &[&ModalityBundle],
        ctx: &mut ForwardCtx,
    ) -> Result<Vec<Var>> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if ctx.rngs.len() < batch.len() {
            return Err(Error::InvalidArgument(format!(
                "{} dropout streams for a batch of {}",
                ctx.rngs.len(),
                batch.len()
            )));
        }
        let c = self.config.channels;
        let mut states = Vec::with_capacity(batch.len());
        for b in batch {
            let t = self.check_bundle(b)?;
            let mut feats = Vec::with_capacity(3);
            for m in 0..3 {
                let x = g.constant(b.get(m).clone());
                feats.push(self.embed[m].forward(g, store, x)?);
            }
            let modal = [feats[0], feats[1], feats[2]];
            let fused = g.constant(SequenceTensor::zeros(c, t));
            assert!(g.value(fused).data().iter().all(|&v| v == 0.0));
            states.push(StageState { fused, modal });
        }
        for stage in &self.stages {
            states = stage.forward_batch(g, store, &states, ctx)?;
        }
        let (w, b) = (g.param(store, self.head_w), g.param(store, self.head_b));
        states
            .into_iter()
            .map(|st| {
                let pooled = g.global_avg_pool(st.fused)?;
                g.linear(pooled, w, Some(b))
            })
            .collect()
    }

    /// Eval-mode prediction of one aligned sample.
    pub fn predict_one(&self, b: &ModalityBundle) -> Result<f64> {
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::eval(1);
        let out = self.forward_graph(&mut g, &self.store, &[b], &mut ctx)?;
        Ok(g.value(out[0]).data()[0])
    }

    /// Eval-mode predictions, sharded across the rayon pool; results come
    /// back in input order.
    pub fn predict(&self, batch: &[ModalityBundle]) -> Result<Vec<f64>> {
        batch.par_iter().map(|b| self.predict_one(b)).collect()
    }

    /// Eval-mode forward with gate sinks enabled.
    pub fn gate_trace(&self, b: &ModalityBundle) -> Result<(f64, Vec<GateRecord>)> {
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::eval(1).with_trace();
        let out = self.forward_graph(&mut g, &self.store, &[b], &mut ctx)?;
        Ok((g.value(out[0]).data()[0], ctx.trace.unwrap_or_default()))
    }

    /// Temporal length entering each stage and after the last one.
    pub fn stage_lengths(&self) -> Vec<usize> {
        let mut t = self.config.align_length;
        let mut out = vec![t];
        for _ in 0..NUM_STAGES {
            t = t.div_ceil(2);
            out.push(t);
        }
        out
    }

    /// Checks every trainable parameter's gradient of the batch MSE with
    /// eval-mode stochastic layers (running-stat batch norm, no dropout).
    pub fn grad_check(
        &self,
        batch: &[ModalityBundle],
        targets: &[f64],
        opts: &GradCheckOptions,
    ) -> Result<GradCheckReport> {
        let refs: Vec<&ModalityBundle> = batch.iter().collect();
        let mut store = self.store.clone();
        grad_check_with(&mut store, opts, |g, st| {
            let mut ctx = ForwardCtx::eval(refs.len());
            let preds = self.forward_graph(g, st, &refs, &mut ctx)?;
            g.mse(&preds, targets)
        })
    }

    pub fn mode_ctx(&self, mode: Mode, rngs: Vec<RngState>) -> ForwardCtx {
        let rate = if mode == Mode::Train { self.config.dropout } else { 0.0 };
        ForwardCtx::new(mode, rate, rngs)
    }
}

/// Fixed two-sample batch used by gradient checks: modality dims, aligned
/// inputs of length `align_length`, and targets.
pub fn grad_check_fixture(cfg: &TrainConfig) -> ([usize; 3], Vec<ModalityBundle>, Vec<f64>) {
    let dims = [6, 5, 4];
    let t = cfg.align_length;
    let mut rng = RngState::derive(0x6C, &[cfg.seed]);
    let batch = (0..2)
        .map(|_| {
            let mut mk = |d: usize| {
                SequenceTensor::from_vec(d, t, (0..d * t).map(|_| rng.normal()).collect()).expect("shape")
            };
            let (r, f) = (mk(dims[0]), mk(dims[1]));
            ModalityBundle::new(r, f, mk(dims[2]))
        })
        .collect();
    (dims, batch, vec![0.25, 0.75])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(dims: [usize; 3], t: usize, seed: u64) -> ModalityBundle {
        let mut r = RngState::new(seed);
        let mut mk = |d: usize| SequenceTensor::from_vec(d, t, (0..d * t).map(|_| r.normal()).collect()).unwrap();
        ModalityBundle::new(mk(dims[0]), mk(dims[1]), mk(dims[2]))
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(mse_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(
            mse_loss(&[0.1, 0.5, 0.9], &[0.0, 1.0, 0.2]).unwrap(),
            mse_loss(&[0.9, 0.1, 0.5], &[0.2, 0.0, 1.0]).unwrap()
        );
        assert!(mse_loss(&[], &[]).is_err());
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn embed_identity_is_layernorm_of_input() {
        let x = bundle([4, 4, 4], 5, 1).rgb;
        let y = embed(
            &x,
            &SequenceTensor::identity(4),
            &SequenceTensor::zeros(4, 1),
            &SequenceTensor::filled(4, 1, 1.0),
            &SequenceTensor::zeros(4, 1),
        )
        .unwrap();
        let expect = ops::layernorm(&x, &SequenceTensor::filled(4, 1, 1.0), &SequenceTensor::zeros(4, 1), ops::LAYERNORM_EPS).unwrap();
        assert_eq!(y, expect);
    }

    #[test]
    fn zero_rows_embed_to_constant_columns() {
        let mut r = RngState::new(2);
        let w = SequenceTensor::from_vec(4, 3, (0..12).map(|_| r.normal()).collect()).unwrap();
        let b = SequenceTensor::from_vec(4, 1, vec![0.1, -0.4, 0.9, 0.2]).unwrap();
        let y = embed(
            &SequenceTensor::zeros(3, 6),
            &w,
            &b,
            &SequenceTensor::filled(4, 1, 1.0),
            &SequenceTensor::zeros(4, 1),
        )
        .unwrap();
        for t in 1..6 {
            assert_eq!(y.column(t), y.column(0));
        }
    }

    #[test]
    fn zero_model_predicts_head_bias() {
        let cfg = TrainConfig::micro();
        let mut model = PidnetModel::new(&cfg, [5, 6, 7]).unwrap();
        for id in model.store.ids().collect::<Vec<_>>() {
            if model.store.entry(id).trainable {
                let z = model.store.value(id).map(|_| 0.0);
                model.store.set_value(id, z).unwrap();
            }
        }
        model.store.value_mut(model.head_b).data_mut()[0] = 0.37;
        for seed in 0..3 {
            let y = model.predict_one(&bundle([5, 6, 7], 8, seed)).unwrap();
            assert_eq!(y, 0.37);
        }
    }

    #[test]
    fn stage_lengths_halve() {
        let cfg = TrainConfig {
            align_length: 70,
            ..TrainConfig::micro()
        };
        let model = PidnetModel::new(&cfg, [3, 3, 3]).unwrap();
        assert_eq!(model.stage_lengths(), vec![70, 35, 18, 9]);
    }

    #[test]
    fn rejects_wrong_dims_and_unaligned() {
        let model = PidnetModel::new(&TrainConfig::micro(), [3, 3, 3]).unwrap();
        assert!(model.predict_one(&bundle([3, 3, 4], 8, 0)).is_err());
        let mut b = bundle([3, 3, 3], 8, 0);
        b.audio = b.audio.slice_time(0, 7);
        assert!(model.predict_one(&b).is_err());
    }
}
