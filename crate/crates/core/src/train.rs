//! Optimization loop, early stopping and evaluation helpers.

use crate::config::TrainConfig;
use crate::dataio::{align, Manifest, Sample, Split};
use crate::error::{Error, Result};
use crate::metrics::{mse_original, EvalReport, LabelNorm};
use crate::model::{ModalityBundle, PidnetModel};
use crate::numcore::{clip_grad_norm, AdamW, Graph, Mode, ParamStore, RngState};

// stream tags for RngState::derive
const TAG_SHUFFLE: u64 = 1;
const TAG_CROP: u64 = 2;
const TAG_DROPOUT: u64 = 3;

pub fn optimizer_for(model: &PidnetModel) -> AdamW {
    AdamW {
        lr: model.config.lr,
        weight_decay: model.config.weight_decay,
        ..AdamW::default()
    }
}

fn nonfinite_report(store: &ParamStore, loss: f64) -> Error {
    let mut worst: Option<(&str, f64)> = None;
    for e in store.entries().iter().filter(|e| e.trainable) {
        let m = e.grad.data().iter().fold(0.0_f64, |a, &g| if g.is_finite() { a.max(g.abs()) } else { f64::INFINITY });
        if worst.is_none_or(|(_, w)| m > w || (m.is_nan() && !w.is_nan())) {
            worst = Some((&e.name, m));
        }
    }
    let (name, g) = worst.unwrap_or(("<none>", 0.0));
    Error::NonFinite {
        context: "train_step".into(),
        detail: format!("loss = {loss}, parameter {name} has max |grad| = {g}"),
    }
}

/// Forward in train mode, MSE, backward, clip, AdamW, zero grads.
/// `rngs` carries one dropout stream per sample.
pub fn train_step(
    model: &mut PidnetModel,
    opt: &AdamW,
    batch: &[&ModalityBundle],
    targets: &[f64],
    rngs: Vec<RngState>,
) -> Result<f64> {
    let mut g = Graph::new();
    let mut ctx = model.mode_ctx(Mode::Train, rngs);
    let preds = model.forward_graph(&mut g, &model.store, batch, &mut ctx)?;
    let loss = g.mse(&preds, targets)?;
    let value = g.value(loss).data()[0];
    g.backward(loss, &mut model.store);
    let grads_ok = model
        .store
        .entries()
        .iter()
        .all(|e| e.grad.is_finite());
    if !value.is_finite() || !grads_ok {
        let err = nonfinite_report(&model.store, value);
        model.store.zero_grads();
        return Err(err);
    }
    ctx.apply_bn_updates(&mut model.store);
    clip_grad_norm(&mut model.store, model.config.clip_norm);
    opt.step(&mut model.store);
    model.store.zero_grads();
    Ok(value)
}

/// Eval alignment (centred crop or tail padding) to the model's length.
pub fn align_eval(model: &PidnetModel, samples: &[Sample]) -> Result<Vec<ModalityBundle>> {
    let l = model.config.align_length;
    let mut unused = RngState::new(0);
    samples
        .iter()
        .map(|s| align(&s.bundle, l, false, false, &mut unused))
        .collect()
}

/// Normalized predictions for `samples`, in order.
pub fn predict_samples(model: &PidnetModel, samples: &[Sample]) -> Result<Vec<f64>> {
    model.predict(&align_eval(model, samples)?)
}

pub fn evaluate(model: &PidnetModel, samples: &[Sample], norm: &LabelNorm) -> Result<EvalReport> {
    let preds = predict_samples(model, samples)?;
    let rows: Vec<(String, f64, f64)> = samples
        .iter()
        .zip(&preds)
        .map(|(s, &p)| (s.category.clone(), p, s.score))
        .collect();
    let mut report = EvalReport::build(&rows, norm)?;
    report.config = config_pairs(model);
    Ok(report)
}

pub fn config_pairs(model: &PidnetModel) -> Vec<(String, String)> {
    crate::config::KEYS
        .iter()
        .map(|&k| (k.to_string(), model.config.get(k).expect("known key")))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the correlation is undefined.
    pub val_rho: Option<f64>,
    /// Raw score units.
    pub val_mse: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FitResult {
    pub history: Vec<HistoryRow>,
    pub best_epoch: Option<usize>,
    pub best_rho: Option<f64>,
}

fn better(candidate: Option<f64>, best: Option<f64>) -> bool {
    match (candidate, best) {
        (Some(c), Some(b)) => c > b,
        (Some(_), None) => true,
        (None, _) => false,
    }
}

pub fn fit(model: &mut PidnetModel, train: &[Sample], val: &[Sample], norm: &LabelNorm) -> Result<FitResult> {
    fit_with(model, train, val, norm, |_| {})
}

/// Epoch loop with seeded shuffling and per-sample crop/dropout streams.
/// After each epoch the val split is scored by Spearman ρ (the train split
/// when `val` is empty); the best epoch's parameters are restored at the end.
pub fn fit_with(
    model: &mut PidnetModel,
    train: &[Sample],
    val: &[Sample],
    norm: &LabelNorm,
    mut on_epoch: impl FnMut(&HistoryRow),
) -> Result<FitResult> {
    let cfg = model.config.clone();
    let mut result = FitResult::default();
    if cfg.max_epochs == 0 {
        return Ok(result);
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let opt = optimizer_for(model);
    let val = if val.is_empty() { train } else { val };
    let val_aligned = align_eval(model, val)?;
    let val_raw: Vec<f64> = val.iter().map(|s| s.score).collect();
    let targets: Vec<f64> = train.iter().map(|s| norm.normalize(s.score)).collect();

    let mut best_store: Option<ParamStore> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        RngState::derive(cfg.seed, &[TAG_SHUFFLE, epoch as u64]).shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            let mut rngs = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let key = [epoch as u64, i as u64];
                let mut crop = RngState::derive(cfg.seed, &[TAG_CROP, key[0], key[1]]);
                batch.push(align(&train[i].bundle, cfg.align_length, true, cfg.sync_crop, &mut crop)?);
                rngs.push(RngState::derive(cfg.seed, &[TAG_DROPOUT, key[0], key[1]]));
            }
            let refs: Vec<&ModalityBundle> = batch.iter().collect();
            let t: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            total += train_step(model, &opt, &refs, &t, rngs)? * chunk.len() as f64;
        }
        let preds: Vec<f64> = model.predict(&val_aligned)?.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        let val_rho = if preds.len() >= 2 {
            crate::metrics::spearman(&preds, &val_raw)?
        } else {
            None
        };
        let row = HistoryRow {
            epoch,
            train_loss: total / train.len() as f64,
            val_rho,
            val_mse: mse_original(&preds, &val_raw, norm)?,
        };
        on_epoch(&row);
        if epoch == 1 || better(val_rho, result.best_rho) {
            result.best_epoch = Some(epoch);
            result.best_rho = val_rho;
            best_store = Some(model.store.clone());
            stale = 0;
        } else {
            stale += 1;
        }
        result.history.push(row);
        if stale >= cfg.patience {
            break;
        }
    }
    if let Some(store) = best_store {
        model.store = store;
    }
    Ok(result)
}

/// Everything one `train` invocation produces.
pub struct TrainRun {
    pub model: PidnetModel,
    pub fit: FitResult,
    pub history_csv: String,
    /// Report on the val split (the train split when val is empty).
    pub report: EvalReport,
}

/// Trains on the manifest's train split with early stopping on val.
/// The manifest's alignment length replaces the config's.
pub fn train_manifest(cfg: &TrainConfig, manifest: &Manifest) -> Result<TrainRun> {
    let cfg = TrainConfig {
        align_length: manifest.header.align_length,
        ..cfg.clone()
    };
    let norm = manifest.norm()?;
    let train = manifest.load_split(Split::Train)?;
    let val = manifest.load_split(Split::Val)?;
    let mut model = PidnetModel::new(&cfg, manifest.header.dims)?;
    let fit = fit(&mut model, &train, &val, &norm)?;
    let report = evaluate(&model, if val.is_empty() { &train } else { &val }, &norm)?;
    Ok(TrainRun {
        history_csv: history_csv(&model, &fit.history),
        model,
        fit,
        report,
    })
}

fn fmt_rho(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

/// History CSV with the config echoed as leading `#` lines.
pub fn history_csv(model: &PidnetModel, rows: &[HistoryRow]) -> String {
    let mut s = config_comment(model);
    s.push_str("epoch,train_loss,val_rho,val_mse\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, fmt_rho(r.val_rho), r.val_mse));
    }
    s
}

pub fn config_comment(model: &PidnetModel) -> String {
    model
        .config
        .to_text()
        .lines()
        .map(|l| format!("# {l}\n"))
        .collect()
}

pub fn format_rho(r: Option<f64>) -> String {
    fmt_rho(r)
}
