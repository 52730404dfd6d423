//! Per-fold fine-tuning with best-checkpoint retention, cross-validation and grid search.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{ClassifierModel, ModelSpec};
use super::{class_weights, cross_entropy_pair, lr_at, weighted_ce_grad, ClassWeights, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluate::aggregate::mean_std_f64;
use crate::evaluate::export::ReportHeader;
use crate::evaluate::{confusion, evaluate_predictions, roc_auc, Metric, MetricsReport, ScoredPrediction};
use crate::image::UltrasoundImage;
use crate::ingest::{FoldAssignment, Label};
use crate::nn::params::{clip_grad_norm, l2_norm};
use crate::nn::{derive_seed, seeded_rng, AdamW, NamedTensor};
use crate::scalar::Scalar;
use crate::standardize::{augment, normalize_channels, ModelTensor};

pub const FOLD_CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// A cleaned image already resized to the model input size.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub id: String,
    pub image: UltrasoundImage,
    pub label: Label,
}

impl LabeledSample {
    pub fn tensor<T: Scalar>(&self) -> ModelTensor<T> {
        normalize_channels(&self.image, &self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_auc: Option<f64>,
    /// Largest global gradient norm of the epoch, before and after clipping.
    pub max_grad_norm: f64,
    pub max_clipped_norm: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldCheckpoint {
    pub schema_version: u32,
    pub fold: usize,
    pub best_val_accuracy: f64,
    pub epoch_of_best: usize,
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub val_metrics: MetricsReport,
    pub weights: Vec<NamedTensor>,
}

impl FoldCheckpoint {
    pub fn to_model<T: Scalar>(&self) -> Result<ClassifierModel<T>> {
        let mut m = ClassifierModel::from_spec(&self.spec, 0)?;
        m.load_weights(&self.weights)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(d) = path.parent() {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_reader(std::io::BufReader::new(f))?;
        if ck.schema_version != FOLD_CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Config(format!("{}: unsupported checkpoint schema {}", path.display(), ck.schema_version)));
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub checkpoint: FoldCheckpoint,
    pub epochs: Vec<EpochRecord>,
}

/// Epoch (1-based) the strict-improvement rule selects from a log.
pub fn best_epoch_from_log(log: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for r in log {
        if best.is_none_or(|(a, _)| r.val_accuracy > a) {
            best = Some((r.val_accuracy, r.epoch));
        }
    }
    best.map(|b| b.1)
}

/// Deterministic class-VM scores; `batch_size` only chunks the work.
pub fn predict<T: Scalar>(model: &ClassifierModel<T>, items: &[(ModelTensor<T>, Label)], batch_size: usize) -> Result<Vec<ScoredPrediction>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch_size.max(1)) {
        for (t, label) in chunk {
            out.push(ScoredPrediction { id: t.id.clone(), score: model.predict_proba(t)?, label: *label });
        }
    }
    Ok(out)
}

fn validation_pass<T: Scalar>(model: &ClassifierModel<T>, val: &[(ModelTensor<T>, Label)]) -> Result<(Vec<ScoredPrediction>, f64)> {
    let mut preds = Vec::with_capacity(val.len());
    let mut loss = 0.0;
    for (t, label) in val {
        let [z0, z1] = model.logits(&t.values)?;
        loss += cross_entropy_pair(z0, z1, label.index()).as_f64();
        let p = super::softmax2(z0, z1)[1].as_f64();
        preds.push(ScoredPrediction { id: t.id.clone(), score: p, label: *label });
    }
    Ok((preds, loss / val.len() as f64))
}

fn class_counts(samples: &[LabeledSample]) -> [usize; 2] {
    let mut c = [0; 2];
    for s in samples {
        c[s.label.index()] += 1;
    }
    c
}

/// Fine-tunes `model` for `cfg.epochs` and returns the best-validation-accuracy state.
///
/// The returned model carries the best weights.
pub fn finetune_fold<T: Scalar>(
    mut model: ClassifierModel<T>,
    train: &[LabeledSample],
    val: &[LabeledSample],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<(FoldResult, ClassifierModel<T>)> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::Data(format!("fold {fold}: validation set is empty")));
    }
    if train.is_empty() {
        return Err(Error::Data(format!("fold {fold}: training set is empty")));
    }
    {
        let ids: std::collections::BTreeSet<&str> = train.iter().map(|s| s.id.as_str()).collect();
        if let Some(s) = val.iter().find(|s| ids.contains(s.id.as_str())) {
            return Err(Error::Data(format!("fold {fold}: {} is in both training and validation sets", s.id)));
        }
    }
    let weights = if cfg.class_weighted { class_weights(&class_counts(train))? } else { ClassWeights::uniform(2) };
    let val_t: Vec<(ModelTensor<T>, Label)> = val.iter().map(|s| (s.tensor(), s.label)).collect();
    let mut opt = AdamW::new(&model.store, cfg.weight_decay);
    let mut grads = model.store.zeros_like();
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut step = 0;
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_weights = model.store.data.clone();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seeded_rng(derive_seed(cfg.seed, &[fold as u64, epoch as u64, 1])));
        let (mut loss_num, mut loss_den) = (0.0, 0.0);
        let (mut max_norm, mut max_clipped) = (0.0f64, 0.0f64);
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = T::zero());
            let wsum: f64 = batch.iter().map(|&i| weights.w[train[i].label.index()]).sum();
            for &i in batch {
                let s = &train[i];
                let img = augment(&s.image, &cfg.augment, derive_seed(cfg.seed, &[fold as u64, epoch as u64, i as u64, 2]));
                let x: ModelTensor<T> = normalize_channels(&img, &s.id);
                let (z, cache) = model.forward(&x.values)?;
                let y = s.label.index();
                let (z0, z1) = (z[[0, 0]], z[[0, 1]]);
                let l = cross_entropy_pair(z0, z1, y).as_f64();
                if !l.is_finite() {
                    return Err(Error::Numeric(format!(
                        "fold {fold}: training loss became {l} at epoch {}, step {step} (image {}); lower the learning rate",
                        epoch + 1,
                        s.id
                    )));
                }
                let wy = weights.w[y];
                loss_num += wy * l;
                loss_den += wy;
                let g = weighted_ce_grad(z0, z1, y, wy, wsum);
                let dz = Array2::from_shape_vec((1, 2), g.to_vec()).expect("1x2");
                model.backward(&cache, dz.view(), &mut grads);
            }
            let pre = clip_grad_norm(&mut grads, T::lit(cfg.grad_clip_norm)).as_f64();
            max_norm = max_norm.max(pre);
            max_clipped = max_clipped.max(l2_norm(&grads).as_f64());
            lr = lr_at(step, total, cfg);
            opt.update(&mut model.store.data, &grads, lr);
            step += 1;
        }
        let (preds, val_loss) = validation_pass(&model, &val_t)?;
        let cm = confusion(&preds, cfg.threshold);
        let acc = (cm.tp + cm.tn) as f64 / cm.total() as f64;
        let improved = acc > best_acc;
        if improved {
            best_acc = acc;
            best_epoch = epoch + 1;
            best_weights.clone_from(&model.store.data);
        }
        let rec = EpochRecord {
            epoch: epoch + 1,
            learning_rate: lr,
            train_loss: loss_num / loss_den,
            val_loss,
            val_accuracy: acc,
            val_auc: roc_auc(&preds).ok().map(|c| c.auc),
            max_grad_norm: max_norm,
            max_clipped_norm: max_clipped,
            improved,
        };
        log::info!(
            "fold {fold} epoch {} train_loss {:.4} val_acc {:.4} val_auc {}",
            rec.epoch,
            rec.train_loss,
            acc,
            rec.val_auc.map_or("n/a".into(), |a| format!("{a:.4}"))
        );
        log.push(rec);
    }
    model.store.data = best_weights;
    let (preds, _) = validation_pass(&model, &val_t)?;
    let val_metrics = evaluate_predictions(&preds, cfg.threshold)?;
    let checkpoint = FoldCheckpoint {
        schema_version: FOLD_CHECKPOINT_SCHEMA_VERSION,
        fold,
        best_val_accuracy: best_acc,
        epoch_of_best: best_epoch,
        spec: model.spec.clone(),
        config: cfg.clone(),
        val_metrics,
        weights: model.store.export(),
    };
    Ok((FoldResult { checkpoint, epochs: log }, model))
}

fn with_fold(e: Error, k: usize) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("fold {k}: {m}")),
        Error::Data(m) => Error::Data(format!("fold {k}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("fold {k}: {m}")),
        Error::Shape(m) => Error::Shape(format!("fold {k}: {m}")),
        other => other,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    /// Unweighted mean and population std of the per-fold validation metrics.
    pub mean: MetricsReport,
    pub std: MetricsReport,
}

/// Mean and std of each metric over reports (undefined if any fold is undefined).
pub fn summarize(reports: &[&MetricsReport]) -> (MetricsReport, MetricsReport) {
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for i in 0..6 {
        let vals: Option<Vec<f64>> = reports.iter().map(|r| r.values()[i].value()).collect();
        match vals {
            Some(v) if !v.is_empty() => {
                let (m, s) = mean_std_f64(&v);
                means.push(Metric::Value(m));
                stds.push(Metric::Value(s));
            }
            _ => {
                means.push(Metric::undefined("undefined in at least one fold"));
                stds.push(Metric::undefined("undefined in at least one fold"));
            }
        }
    }
    (
        MetricsReport::from_values(means.try_into().expect("six")),
        MetricsReport::from_values(stds.try_into().expect("six")),
    )
}

/// Fine-tunes one freshly initialized model per fold.
///
/// `init(k)` must build an independent model for fold `k` (for example by
/// re-attaching a head to the same pretrained encoder). `on_fold` sees each
/// result as soon as it is available.
pub fn run_cv<T: Scalar>(
    pool: &[LabeledSample],
    folds: &FoldAssignment,
    mut init: impl FnMut(usize) -> Result<ClassifierModel<T>>,
    cfg: &TrainConfig,
    mut on_fold: impl FnMut(&FoldResult) -> Result<()>,
) -> Result<CvResult> {
    if folds.k < 2 {
        return Err(Error::Config(format!("cross-validation needs k >= 2, got {}", folds.k)));
    }
    let mut results = Vec::with_capacity(folds.k);
    for k in 0..folds.k {
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for s in pool {
            match folds.fold_of.get(&s.id) {
                Some(&f) if f == k => val.push(s.clone()),
                Some(_) => train.push(s.clone()),
                None => return Err(Error::Data(format!("{} has no fold assignment", s.id))),
            }
        }
        let model = init(k).map_err(|e| with_fold(e, k))?;
        let (res, _) = finetune_fold(model, &train, &val, cfg, k).map_err(|e| with_fold(e, k))?;
        on_fold(&res)?;
        results.push(res);
    }
    let reports: Vec<&MetricsReport> = results.iter().map(|r| &r.checkpoint.val_metrics).collect();
    let (mean, std) = summarize(&reports);
    Ok(CvResult { folds: results, mean, std })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpace {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
}

impl Default for GridSpace {
    fn default() -> Self {
        Self::paper()
    }
}

impl GridSpace {
    /// The 3 x 4 x 4 search space of the reference study.
    pub fn paper() -> Self {
        Self {
            batch_sizes: vec![32, 64, 128],
            learning_rates: vec![1e-3, 5e-4, 3e-4, 1e-5],
            weight_decays: vec![0.01, 0.05, 0.001, 0.0001],
        }
    }

    /// Every combination as (batch, lr, wd), batch-major.
    pub fn combinations(&self) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::new();
        for &b in &self.batch_sizes {
            for &lr in &self.learning_rates {
                for &wd in &self.weight_decays {
                    out.push((b, lr, wd));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub mean: MetricsReport,
    pub std: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub best_index: usize,
    pub best: TrainConfig,
}

/// Evaluates every combination and keeps the highest mean validation accuracy.
///
/// Ties go to the lower learning rate, then the smaller batch size.
/// `evaluate` returns the (mean, std) validation metrics of one cross-validation run.
pub fn grid_search(
    space: &GridSpace,
    base: &TrainConfig,
    mut evaluate: impl FnMut(&TrainConfig) -> Result<(MetricsReport, MetricsReport)>,
) -> Result<GridResult> {
    let combos = space.combinations();
    if combos.is_empty() {
        return Err(Error::Config("grid search space is empty".into()));
    }
    let mut rows = Vec::with_capacity(combos.len());
    for (batch_size, learning_rate, weight_decay) in combos {
        let cfg = TrainConfig { batch_size, learning_rate, weight_decay, ..base.clone() };
        let (mean, std) = evaluate(&cfg)?;
        rows.push(GridRow { batch_size, learning_rate, weight_decay, mean, std });
    }
    let acc = |r: &GridRow| r.mean.accuracy.value().unwrap_or(f64::NEG_INFINITY);
    let mut best_index = 0;
    for (i, r) in rows.iter().enumerate().skip(1) {
        let b = &rows[best_index];
        let better = acc(r) > acc(b)
            || (acc(r) == acc(b)
                && (r.learning_rate < b.learning_rate || (r.learning_rate == b.learning_rate && r.batch_size < b.batch_size)));
        if better {
            best_index = i;
        }
    }
    let b = &rows[best_index];
    let best = TrainConfig { batch_size: b.batch_size, learning_rate: b.learning_rate, weight_decay: b.weight_decay, ..base.clone() };
    Ok(GridResult { rows, best_index, best })
}

fn csv_metric(m: &Metric) -> String {
    m.value().map_or("NA".into(), |v| format!("{v:.6}"))
}

pub fn write_grid_csv(path: &Path, header: &ReportHeader, grid: &GridResult) -> Result<()> {
    let io = |e| Error::io(path, e);
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "# tool_version: {}", header.tool_version).map_err(io)?;
    writeln!(w, "# config_sha256: {}", header.config_sha256).map_err(io)?;
    let names = crate::evaluate::metrics::METRIC_NAMES;
    let cols: Vec<String> = names.iter().flat_map(|n| [format!("mean_{n}"), format!("std_{n}")]).collect();
    writeln!(w, "batch_size,learning_rate,weight_decay,{},selected", cols.join(",")).map_err(io)?;
    for (i, r) in grid.rows.iter().enumerate() {
        let cells: Vec<String> =
            r.mean.values().iter().zip(r.std.values()).flat_map(|(m, s)| [csv_metric(m), csv_metric(s)]).collect();
        writeln!(w, "{},{},{},{},{}", r.batch_size, r.learning_rate, r.weight_decay, cells.join(","), i == grid.best_index)
            .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_epochs_csv(path: &Path, header: &ReportHeader, log: &[EpochRecord]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "# tool_version: {}", header.tool_version).map_err(io)?;
    writeln!(w, "# config_sha256: {}", header.config_sha256).map_err(io)?;
    writeln!(w, "epoch,learning_rate,train_loss,val_loss,val_accuracy,val_auc,max_grad_norm,max_clipped_norm,improved").map_err(io)?;
    for r in log {
        writeln!(
            w,
            "{},{:.8e},{:.6},{:.6},{:.6},{},{:.6},{:.6},{}",
            r.epoch,
            r.learning_rate,
            r.train_loss,
            r.val_loss,
            r.val_accuracy,
            r.val_auc.map_or("NA".into(), |a| format!("{a:.6}")),
            r.max_grad_norm,
            r.max_clipped_norm,
            r.improved
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes `<run_dir>/fold<i>/{checkpoint.json, epochs.csv, config.json}`.
pub fn write_fold_dir(run_dir: &Path, header: &ReportHeader, res: &FoldResult) -> Result<()> {
    let dir = run_dir.join(format!("fold{}", res.checkpoint.fold));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    res.checkpoint.save(&dir.join("checkpoint.json"))?;
    write_epochs_csv(&dir.join("epochs.csv"), header, &res.epochs)?;
    let cfg = serde_json::json!({ "header": header, "spec": res.checkpoint.spec, "train": res.checkpoint.config });
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(&cfg)?).map_err(|e| Error::io(&p, e))?;
    Ok(())
}
