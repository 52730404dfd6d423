use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ventri::classify::train::{write_fold_dir, write_grid_csv};
use ventri::classify::{
    attach_head, finetune_fold, grid_search, BaselineName, ClassifierModel, FoldCheckpoint, LabeledSample, ModelSpec,
    TrainConfig,
};
use ventri::evaluate::export::{
    read_predictions_csv, write_curve_csv, write_metrics_csv, write_metric_rows, write_predictions_csv, write_summary_json,
    ReportHeader,
};
use ventri::evaluate::plot::{plot_band, plot_confusion};
use ventri::evaluate::{aggregate_folds, predict, EnsembleReport, MetricsReport, METRIC_NAMES};
use ventri::ingest::{
    load_manifest, make_stratified_folds, read_assignments, stratified_holdout_split, synthesize_phantom_dataset,
    write_assignments, write_phantom_set, Dataset, FoldAssignment,
};
use ventri::mae::{pretrain, EncoderCheckpoint};
use ventri::nn::params::derive_seed;
use ventri::scrub::scrub_image;
use ventri::standardize::{normalize_channels, resize_nearest};
use ventri::{Error, Result, UltrasoundImage};

use crate::config::{BackboneChoice, RunConfig};
use crate::{Cli, Command, DataArgs};

/// Scalar type used by all command-line training.
type T = f32;

struct Ctx {
    cfg: RunConfig,
    header: ReportHeader,
    run_dir: PathBuf,
    run_root: Option<PathBuf>,
}

impl Ctx {
    fn new(cli: &Cli, seed: Option<u64>) -> Result<Self> {
        let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?.with_seed(seed);
        cfg.validate()?;
        let header = ReportHeader::new(cfg.sha256()?);
        let run_dir = cfg.run_dir(cli.run_root.as_deref());
        Ok(Self {
            cfg,
            header,
            run_dir,
            run_root: cli.run_root.clone(),
        })
    }

    fn path(&self, flag: &Option<PathBuf>, default: &str) -> PathBuf {
        flag.clone().unwrap_or_else(|| self.run_dir.join(default))
    }

    /// Resolved-config snapshot and version stamp for the artifacts in `dir`.
    fn snapshot(&self, dir: &Path, command: &str) -> Result<()> {
        mkdir(dir)?;
        let p = dir.join("resolved_config.toml");
        let text = format!(
            "# tool_version: {}\n# config_sha256: {}\n{}",
            self.header.tool_version,
            self.header.config_sha256,
            self.cfg.canonical()?
        );
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        let stamp = serde_json::json!({
            "command": command,
            "tool_version": self.header.tool_version,
            "config_sha256": self.header.config_sha256,
            "seed": self.cfg.seed,
        });
        let p = dir.join("version.json");
        std::fs::write(&p, serde_json::to_string_pretty(&stamp)?).map_err(|e| Error::io(&p, e))
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize, Deserialize)]
struct Completion {
    config_sha256: String,
}

/// A stage directory counts as done when its stamp records the same config hash.
fn is_complete(dir: &Path, hash: &str) -> bool {
    std::fs::read_to_string(dir.join(".complete.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<Completion>(&t).ok())
        .is_some_and(|c| c.config_sha256 == hash)
}

fn mark_complete(dir: &Path, hash: &str) -> Result<()> {
    let p = dir.join(".complete.json");
    std::fs::write(&p, serde_json::to_string(&Completion { config_sha256: hash.into() })?).map_err(|e| Error::io(&p, e))
}

/// A directory with a `manifest.csv` is read through it; otherwise by class subdirectory.
fn resolve_manifest(p: &Path) -> PathBuf {
    let m = p.join("manifest.csv");
    if p.is_dir() && m.is_file() {
        m
    } else {
        p.to_path_buf()
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { seed, out, force } => synth(&Ctx::new(&cli, Some(seed.seed))?, out, *force),
        Command::Scrub { input, out, masks, force } => scrub(&Ctx::new(&cli, None)?, input, out, *masks, *force),
        Command::Split { seed, manifest, out } => split(&Ctx::new(&cli, Some(seed.seed))?, manifest, out),
        Command::Pretrain { seed, data, published, out, force } => {
            pretrain_cmd(&Ctx::new(&cli, Some(seed.seed))?, data, published, out, *force)
        }
        Command::Finetune { seed, data, encoder, out, force } => {
            let ctx = Ctx::new(&cli, Some(seed.seed))?;
            let out = ctx.path(out, "finetune");
            let inputs = Inputs::load(&ctx, data, encoder)?;
            finetune(&ctx, &inputs, &out, *force).map(|_| ())
        }
        Command::Grid { seed, data, encoder, out, max_parallel, force } => {
            grid(&Ctx::new(&cli, Some(seed.seed))?, data, encoder, out, *max_parallel, *force)
        }
        Command::Evaluate { predictions, out, threshold } => evaluate(&Ctx::new(&cli, None)?, predictions, out, *threshold),
        Command::Explain { checkpoint, image, layer, alpha, scrub, out } => {
            explain(&Ctx::new(&cli, None)?, checkpoint, image, *layer, *alpha, *scrub, out)
        }
        Command::Report { predictions, finetune, out, threshold } => {
            report(&Ctx::new(&cli, None)?, predictions, finetune, out, *threshold)
        }
    }
}

fn synth(ctx: &Ctx, out: &Option<PathBuf>, force: bool) -> Result<()> {
    let out = ctx.path(out, "data/raw");
    if !force && is_complete(&out, &ctx.header.config_sha256) {
        log::info!("synth: {} is up to date", out.display());
        return Ok(());
    }
    let set = synthesize_phantom_dataset(&ctx.cfg.synth)?;
    mkdir(&out)?;
    let ds = write_phantom_set(&set, &out)?;
    ctx.snapshot(&out, "synth")?;
    mark_complete(&out, &ctx.header.config_sha256)?;
    let [n, v] = ds.class_counts();
    println!("synth: {} images ({n} normal, {v} vm) in {}", ds.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct ScrubRow<'a> {
    id: &'a str,
    masked_pixels: usize,
    inpaint_iterations: usize,
    converged: bool,
}

fn scrub(ctx: &Ctx, input: &Option<PathBuf>, out: &Option<PathBuf>, masks: bool, force: bool) -> Result<()> {
    let input = resolve_manifest(&ctx.path(input, "data/raw"));
    let out = ctx.path(out, "data/clean");
    if !force && is_complete(&out, &ctx.header.config_sha256) {
        log::info!("scrub: {} is up to date", out.display());
        return Ok(());
    }
    let ds = load_manifest(&input)?;
    mkdir(&out)?;
    let mut items = Vec::with_capacity(ds.len());
    let report_path = out.join("scrub_report.csv");
    let mut report = csv::Writer::from_path(&report_path).map_err(Error::from)?;
    for it in ds.items() {
        let img = UltrasoundImage::load(&it.path)?;
        let res = scrub_image(&img, &ctx.cfg.scrub).map_err(|e| Error::Data(format!("{}: {e}", it.id)))?;
        let path = out.join(format!("{}.png", it.id));
        res.image.save_png(&path)?;
        if masks {
            res.mask.save_png(&out.join("masks").join(format!("{}.png", it.id)))?;
        }
        let r = res.inpaint.as_ref().map(|r| r.report());
        report.serialize(ScrubRow {
            id: &it.id,
            masked_pixels: res.mask.count(),
            inpaint_iterations: r.as_ref().map_or(0, |r| r.iterations),
            converged: r.as_ref().is_none_or(|r| r.converged),
        })?;
        items.push(ventri::ingest::LabeledImage { path, ..it.clone() });
    }
    report.flush().map_err(|e| Error::io(&report_path, e))?;
    let cleaned = Dataset::new(items)?;
    write_relative_manifest(&cleaned, &out)?;
    ctx.snapshot(&out, "scrub")?;
    mark_complete(&out, &ctx.header.config_sha256)?;
    println!("scrub: {} images -> {}", cleaned.len(), out.display());
    Ok(())
}

/// `manifest.csv` with paths relative to `dir`, so the directory can be moved.
fn write_relative_manifest(d: &Dataset, dir: &Path) -> Result<()> {
    let rel: Vec<_> = d
        .items()
        .iter()
        .map(|it| ventri::ingest::LabeledImage {
            path: it.path.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| it.path.clone()),
            ..it.clone()
        })
        .collect();
    ventri::ingest::write_manifest(&Dataset::new(rel)?, &dir.join("manifest.csv"))
}

fn split(ctx: &Ctx, manifest: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<()> {
    let manifest = resolve_manifest(&ctx.path(manifest, "data/clean"));
    let out = ctx.path(out, "split");
    let ds = load_manifest(&manifest)?;
    let spec = ctx.cfg.split_spec()?;
    let k = ctx.cfg.folds()?;
    let (trainval, test) = stratified_holdout_split(&ds, &spec)?;
    let folds = make_stratified_folds(&trainval, k, spec.seed)?;
    mkdir(&out)?;
    write_assignments(&folds, &test, &out.join("assignments.csv"))?;
    let counts_path = out.join("split_counts.csv");
    let io = |e| Error::io(&counts_path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(&counts_path).map_err(io)?);
    writeln!(w, "# tool_version: {}", ctx.header.tool_version).map_err(io)?;
    writeln!(w, "# config_sha256: {}", ctx.header.config_sha256).map_err(io)?;
    writeln!(w, "subset,normal,vm,total").map_err(io)?;
    let mut row = |name: String, d: &Dataset| {
        let [n, v] = d.class_counts();
        writeln!(w, "{name},{n},{v},{}", n + v)
    };
    for f in 0..k {
        let (tr, va) = folds.split(&trainval, f)?;
        row(format!("fold{f}_train"), &tr).map_err(io)?;
        row(format!("fold{f}_val"), &va).map_err(io)?;
    }
    row("test".into(), &test).map_err(io)?;
    drop(row);
    w.flush().map_err(io)?;
    ctx.snapshot(&out, "split")?;
    let (tr, va) = folds.split(&trainval, 0)?;
    println!("split: train {} / val {} / test {} (fold 0 of {k})", tr.len(), va.len(), test.len());
    Ok(())
}

/// Cleaned images for the train+val pool and the test set, resized to the model input.
struct Inputs {
    pool: Vec<LabeledSample>,
    test: Vec<LabeledSample>,
    folds: FoldAssignment,
    encoder: Option<EncoderCheckpoint>,
    manifest: PathBuf,
    assignments: PathBuf,
    encoder_path: Option<PathBuf>,
}

fn load_samples(ds: &Dataset, ids: impl IntoIterator<Item = String>, size: usize) -> Result<Vec<LabeledSample>> {
    ids.into_iter()
        .map(|id| {
            let it = ds.get(&id).ok_or_else(|| Error::Data(format!("assigned id {id} is not in the manifest")))?;
            let img = UltrasoundImage::load(&it.path)?;
            Ok(LabeledSample { id, image: resize_nearest(&img, size), label: it.label })
        })
        .collect()
}

impl Inputs {
    fn load_data(ctx: &Ctx, data: &DataArgs) -> Result<Self> {
        let manifest = resolve_manifest(&ctx.path(&data.manifest, "data/clean"));
        let assignments = ctx.path(&data.assignments, "split/assignments.csv");
        let ds = load_manifest(&manifest)?;
        let (folds, test_ids) = read_assignments(&assignments)?;
        let size = ctx.cfg.image_size;
        let pool = load_samples(&ds, folds.fold_of.keys().cloned(), size)?;
        let test = load_samples(&ds, test_ids, size)?;
        Ok(Self { pool, test, folds, encoder: None, manifest, assignments, encoder_path: None })
    }

    fn load(ctx: &Ctx, data: &DataArgs, encoder: &Option<PathBuf>) -> Result<Self> {
        let mut inputs = Self::load_data(ctx, data)?;
        if ctx.cfg.model.backbone == BackboneChoice::UsfMae {
            let p = ctx.path(encoder, "pretrain/encoder.json");
            if !p.is_file() {
                return Err(Error::Data(format!(
                    "backbone usf_mae needs a pretrained encoder; {} does not exist (run `pretrain` or pass --encoder)",
                    p.display()
                )));
            }
            inputs.encoder = Some(EncoderCheckpoint::load(&p)?);
            inputs.encoder_path = Some(p);
        }
        Ok(inputs)
    }
}

fn pretrain_cmd(ctx: &Ctx, data: &DataArgs, published: &Option<PathBuf>, out: &Option<PathBuf>, force: bool) -> Result<()> {
    let out = ctx.path(out, "pretrain");
    if !force && is_complete(&out, &ctx.header.config_sha256) {
        log::info!("pretrain: {} is up to date", out.display());
        return Ok(());
    }
    let ck = match published {
        Some(p) => EncoderCheckpoint::from_published(p, &ctx.cfg.pretrain.vit)?,
        None => {
            let inputs = Inputs::load_data(ctx, data)?;
            let corpus: Vec<_> = inputs.pool.iter().map(|s| s.tensor::<T>()).collect();
            log::info!("pretrain: {} images from the train+val pool", corpus.len());
            pretrain(&corpus, &ctx.cfg.pretrain)?
        }
    };
    mkdir(&out)?;
    ck.save(&out.join("encoder.json"))?;
    let p = out.join("loss.csv");
    let mut text = format!("# tool_version: {}\n# config_sha256: {}\nepoch,loss\n", ctx.header.tool_version, ctx.header.config_sha256);
    for (i, l) in ck.loss_trace.iter().enumerate() {
        text.push_str(&format!("{},{l:.8}\n", i + 1));
    }
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    ctx.snapshot(&out, "pretrain")?;
    mark_complete(&out, &ctx.header.config_sha256)?;
    println!("pretrain: final loss {:?} -> {}", ck.final_loss(), out.join("encoder.json").display());
    Ok(())
}

fn build_model(cfg: &RunConfig, encoder: Option<&EncoderCheckpoint>, fold: usize) -> Result<ClassifierModel<T>> {
    let seed = derive_seed(cfg.train.seed, &[0x68656164, fold as u64]);
    let fm = cfg.model.feature_mode;
    match cfg.model.backbone {
        BackboneChoice::UsfMae => {
            let enc = encoder.ok_or_else(|| Error::Config("backbone usf_mae needs an encoder".into()))?;
            attach_head(enc, &cfg.pretrain.vit, fm, seed)
        }
        BackboneChoice::VitScratch => {
            ClassifierModel::from_spec(&ModelSpec::Vit { vit: cfg.pretrain.vit.clone(), feature_mode: fm }, seed)
        }
        BackboneChoice::Vgg19 | BackboneChoice::Resnet50 | BackboneChoice::VitB16 => {
            let name = match cfg.model.backbone {
                BackboneChoice::Vgg19 => BaselineName::Vgg19,
                BackboneChoice::Resnet50 => BaselineName::Resnet50,
                _ => BaselineName::VitB16,
            };
            ClassifierModel::from_spec(&name.spec(cfg.model.toy, cfg.image_size), seed)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CvSummary {
    config_sha256: String,
    per_fold: Vec<MetricsReport>,
    mean: MetricsReport,
    std: MetricsReport,
}

fn finetune(ctx: &Ctx, inputs: &Inputs, out: &Path, force: bool) -> Result<CvSummary> {
    let cfg = &ctx.cfg;
    let hash = &ctx.header.config_sha256;
    mkdir(out)?;
    ctx.snapshot(out, "finetune")?;
    let test_items: Vec<_> = inputs.test.iter().map(|s| (s.tensor::<T>(), s.label)).collect();
    let mut per_fold = Vec::with_capacity(inputs.folds.k);
    for k in 0..inputs.folds.k {
        let dir = out.join(format!("fold{k}"));
        let model = if !force && is_complete(&dir, hash) {
            log::info!("finetune: fold {k} restored from {}", dir.display());
            let ck = FoldCheckpoint::load(&dir.join("checkpoint.json"))?;
            per_fold.push(ck.val_metrics.clone());
            ck.to_model::<T>()?
        } else {
            let (train, val): (Vec<_>, Vec<_>) =
                inputs.pool.iter().cloned().partition(|s| inputs.folds.fold_of.get(&s.id) != Some(&k));
            let model = build_model(cfg, inputs.encoder.as_ref(), k)?;
            log::info!("finetune: fold {k}: {} train / {} val", train.len(), val.len());
            let (res, best) = finetune_fold(model, &train, &val, &cfg.train, k)?;
            write_fold_dir(out, &ctx.header, &res)?;
            mark_complete(&dir, hash)?;
            per_fold.push(res.checkpoint.val_metrics.clone());
            best
        };
        let preds = predict(&model, &test_items, cfg.train.batch_size)?;
        write_predictions_csv(&out.join("test_predictions").join(format!("fold{k}.csv")), &ctx.header, &preds)?;
    }
    let refs: Vec<&MetricsReport> = per_fold.iter().collect();
    let (mean, std) = ventri::classify::train::summarize(&refs);
    let mut rows: Vec<(String, &MetricsReport)> = per_fold.iter().enumerate().map(|(i, r)| (format!("fold{i}"), r)).collect();
    rows.push(("mean".into(), &mean));
    rows.push(("std".into(), &std));
    write_metric_rows(&out.join("cv_metrics.csv"), &ctx.header, &rows)?;
    let summary = CvSummary { config_sha256: hash.clone(), per_fold, mean, std };
    let p = out.join("cv_summary.json");
    std::fs::write(&p, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&p, e))?;
    println!("finetune: validation accuracy {} ± {}", summary.mean.accuracy.percent(), summary.std.accuracy.percent());
    Ok(summary)
}

fn combo_config(base: &RunConfig, (b, lr, wd): (usize, f64, f64)) -> RunConfig {
    RunConfig { train: TrainConfig { batch_size: b, learning_rate: lr, weight_decay: wd, ..base.train.clone() }, ..base.clone() }
}

fn grid(
    ctx: &Ctx,
    data: &DataArgs,
    encoder: &Option<PathBuf>,
    out: &Option<PathBuf>,
    max_parallel: usize,
    force: bool,
) -> Result<()> {
    let out = ctx.path(out, "grid");
    mkdir(&out)?;
    ctx.snapshot(&out, "grid")?;
    let combos = ctx.cfg.grid.combinations();
    if combos.is_empty() {
        return Err(Error::Config("[grid] search space is empty".into()));
    }
    let dirs: Vec<PathBuf> = (0..combos.len()).map(|i| out.join(format!("combo{i:02}"))).collect();
    let inputs = Inputs::load(ctx, data, encoder)?;
    let mut summaries: BTreeMap<usize, CvSummary> = BTreeMap::new();
    if max_parallel <= 1 {
        for (i, &c) in combos.iter().enumerate() {
            let cfg = combo_config(&ctx.cfg, c);
            let sub = Ctx {
                header: ReportHeader::new(cfg.sha256()?),
                cfg,
                run_dir: ctx.run_dir.clone(),
                run_root: None,
            };
            log::info!("grid: combination {}/{} (batch {}, lr {}, wd {})", i + 1, combos.len(), c.0, c.1, c.2);
            summaries.insert(i, finetune(&sub, &inputs, &dirs[i], force)?);
        }
    } else {
        run_parallel(ctx, &inputs, &combos, &dirs, max_parallel, force)?;
        for (i, d) in dirs.iter().enumerate() {
            let p = d.join("cv_summary.json");
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            summaries.insert(i, serde_json::from_str(&text)?);
        }
    }
    let mut next = 0;
    let result = grid_search(&ctx.cfg.grid, &ctx.cfg.train, |_| {
        let s = &summaries[&next];
        next += 1;
        Ok((s.mean.clone(), s.std.clone()))
    })?;
    write_grid_csv(&out.join("grid.csv"), &ctx.header, &result)?;
    let best = RunConfig { train: result.best.clone(), ..ctx.cfg.clone() };
    let p = out.join("best_config.toml");
    std::fs::write(&p, best.canonical()?).map_err(|e| Error::io(&p, e))?;
    let b = &result.rows[result.best_index];
    println!(
        "grid: best batch {} lr {} wd {} (mean val accuracy {}) -> {}",
        b.batch_size,
        b.learning_rate,
        b.weight_decay,
        b.mean.accuracy.percent(),
        p.display()
    );
    Ok(())
}

/// Fans combinations out as `ventri finetune` subprocesses, at most `max_parallel` at a time.
fn run_parallel(
    ctx: &Ctx,
    inputs: &Inputs,
    combos: &[(usize, f64, f64)],
    dirs: &[PathBuf],
    max_parallel: usize,
    force: bool,
) -> Result<()> {
    let exe = std::env::current_exe().map_err(|e| Error::io("current executable", e))?;
    let seed = ctx.cfg.seed.expect("grid runs with a seed").to_string();
    let mut pending: Vec<(usize, std::process::Child)> = Vec::new();
    let wait = |(i, mut child): (usize, std::process::Child)| -> Result<()> {
        let status = child.wait().map_err(|e| Error::io(&dirs[i], e))?;
        if status.success() {
            Ok(())
        } else {
            let msg = format!("grid combination {i} failed with {status}; see {}", dirs[i].display());
            Err(match status.code() {
                Some(2) => Error::Config(msg),
                Some(4) => Error::Numeric(msg),
                _ => Error::Data(msg),
            })
        }
    };
    for (i, &c) in combos.iter().enumerate() {
        mkdir(&dirs[i])?;
        let combo_cfg = dirs[i].join("combo_config.toml");
        let cfg = combo_config(&ctx.cfg, c);
        std::fs::write(&combo_cfg, cfg.canonical()?).map_err(|e| Error::io(&combo_cfg, e))?;
        let mut cmd = std::process::Command::new(&exe);
        cmd.arg("--quiet").arg("--config").arg(&combo_cfg);
        if let Some(r) = &ctx.run_root {
            cmd.arg("--run-root").arg(r);
        }
        cmd.args(["finetune", "--seed", &seed])
            .arg("--manifest")
            .arg(&inputs.manifest)
            .arg("--assignments")
            .arg(&inputs.assignments)
            .arg("--out")
            .arg(&dirs[i])
            .stdout(std::process::Stdio::null());
        if let Some(e) = &inputs.encoder_path {
            cmd.arg("--encoder").arg(e);
        }
        if force {
            cmd.arg("--force");
        }
        if pending.len() >= max_parallel {
            wait(pending.remove(0))?;
        }
        log::info!("grid: launching combination {}/{}", i + 1, combos.len());
        pending.push((i, cmd.spawn().map_err(|e| Error::io(&exe, e))?));
    }
    for p in pending {
        wait(p)?;
    }
    Ok(())
}

fn read_fold_predictions(dir: &Path) -> Result<Vec<Vec<ventri::evaluate::ScoredPrediction>>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(usize, PathBuf)> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let stem = p.file_stem()?.to_str()?;
            let k = stem.strip_prefix("fold")?.parse().ok()?;
            (p.extension()? == "csv").then_some((k, p))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no fold<i>.csv prediction files in {}", dir.display())));
    }
    files.iter().map(|(_, p)| read_predictions_csv(p)).collect()
}

fn ensemble(ctx: &Ctx, predictions: &Option<PathBuf>, threshold: Option<f64>) -> Result<EnsembleReport> {
    let dir = ctx.path(predictions, "finetune/test_predictions");
    let per_fold = read_fold_predictions(&dir)?;
    let thr = threshold.unwrap_or(ctx.cfg.train.threshold);
    if !(0.0..=1.0).contains(&thr) {
        return Err(Error::Config(format!("threshold must be in [0, 1], got {thr}")));
    }
    aggregate_folds(&per_fold, thr)
}

fn evaluate(ctx: &Ctx, predictions: &Option<PathBuf>, out: &Option<PathBuf>, threshold: Option<f64>) -> Result<()> {
    let out = ctx.path(out, "eval");
    let rep = ensemble(ctx, predictions, threshold)?;
    mkdir(&out)?;
    write_metrics_csv(&out.join("metrics.csv"), &ctx.header, &rep)?;
    if let Some(b) = &rep.mean_roc {
        write_curve_csv(&out.join("roc.csv"), &ctx.header, "fpr", b)?;
    }
    if let Some(b) = &rep.mean_pr {
        write_curve_csv(&out.join("pr.csv"), &ctx.header, "recall", b)?;
    }
    write_summary_json(&out.join("summary.json"), &ctx.header, &rep)?;
    ctx.snapshot(&out, "evaluate")?;
    let cm = &rep.pooled_confusion;
    println!(
        "evaluate: pooled TP {} FN {} TN {} FP {}; accuracy {} recall {} specificity {} AUC {}",
        cm.tp,
        cm.fn_,
        cm.tn,
        cm.fp,
        rep.pooled.accuracy.percent(),
        rep.pooled.recall.percent(),
        rep.pooled.specificity.percent(),
        rep.pooled.auc.percent()
    );
    Ok(())
}

fn explain(
    ctx: &Ctx,
    checkpoint: &Path,
    image: &Path,
    layer: Option<usize>,
    alpha: Option<f64>,
    scrub: bool,
    out: &Option<PathBuf>,
) -> Result<()> {
    let out = ctx.path(out, "explain");
    let alpha = alpha.unwrap_or(ctx.cfg.explain.alpha);
    let layer = layer.or(ctx.cfg.explain.layer);
    let ck = FoldCheckpoint::load(checkpoint)?;
    let model = ck.to_model::<T>()?;
    let size = model.input_size().unwrap_or(ctx.cfg.image_size);
    let mut img = UltrasoundImage::load(image)?;
    if scrub {
        img = scrub_image(&img, &ctx.cfg.scrub)?.image;
    }
    let img = resize_nearest(&img, size);
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
    let tensor = normalize_channels::<T>(&img, &stem);
    let heat = ventri::explain::eigencam(&model, &tensor, layer)?;
    if heat.degenerate {
        log::warn!("explain: activations of {} carry no spatial contrast; the heatmap is all zeros", image.display());
    }
    let over = ventri::explain::overlay(&img, &heat.values, alpha)?;
    ventri::explain::write_explanation(&out, &stem, &ctx.header, &heat, &over, alpha)?;
    ctx.snapshot(&out, "explain")?;
    let p = model.predict_proba(&tensor)?;
    println!("explain: p(vm) = {p:.4}, peak at {:?} -> {}", heat.peak(), out.display());
    Ok(())
}

fn pm(mean: &ventri::evaluate::Metric, std: &ventri::evaluate::Metric) -> String {
    match (mean.value(), std.value()) {
        (Some(m), Some(s)) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s),
        _ => "n/a".into(),
    }
}

fn table(out: &mut String, rows: &[(String, Vec<String>)]) {
    out.push_str(&format!("| | {} |\n|---|{}\n", METRIC_NAMES.join(" | "), "---|".repeat(METRIC_NAMES.len())));
    for (name, cells) in rows {
        out.push_str(&format!("| {name} | {} |\n", cells.join(" | ")));
    }
    out.push('\n');
}

fn report_rows(per_fold: &[MetricsReport], mean: &MetricsReport, std: &MetricsReport) -> Vec<(String, Vec<String>)> {
    let mut rows: Vec<(String, Vec<String>)> = per_fold
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("fold {i}"), r.values().iter().map(|m| m.percent()).collect()))
        .collect();
    rows.push(("mean ± std".into(), mean.values().iter().zip(std.values()).map(|(m, s)| pm(m, s)).collect()));
    rows
}

fn report(
    ctx: &Ctx,
    predictions: &Option<PathBuf>,
    finetune: &Option<PathBuf>,
    out: &Option<PathBuf>,
    threshold: Option<f64>,
) -> Result<()> {
    let out = ctx.path(out, "report");
    mkdir(&out)?;
    let rep = ensemble(ctx, predictions, threshold)?;
    let mut md = format!(
        "# Run report\n\ntool_version: {}  \nconfig_sha256: {}  \nthreshold: {}\n\n",
        ctx.header.tool_version, ctx.header.config_sha256, rep.threshold
    );
    let cv_path = ctx.path(finetune, "finetune").join("cv_summary.json");
    if let Ok(text) = std::fs::read_to_string(&cv_path) {
        let cv: CvSummary = serde_json::from_str(&text)?;
        md.push_str("## Cross-validation (validation folds)\n\n");
        table(&mut md, &report_rows(&cv.per_fold, &cv.mean, &cv.std));
    }
    md.push_str("## Held-out test set\n\n");
    let mut rows = report_rows(&rep.per_fold, &rep.fold_mean, &rep.fold_std);
    rows.push(("pooled".into(), rep.pooled.values().iter().map(|m| m.percent()).collect()));
    table(&mut md, &rows);
    let cm = &rep.pooled_confusion;
    md.push_str(&format!(
        "Pooled confusion matrix over {} folds: TP {}, FN {}, TN {}, FP {}.\n\n\
         Pooled metrics come from the summed confusion matrix; the mean row averages per-fold metrics, \
         so the two can legitimately differ (most visibly for precision).\n",
        rep.per_fold.len(),
        cm.tp,
        cm.fn_,
        cm.tn,
        cm.fp
    ));
    let p = out.join("tables.md");
    std::fs::write(&p, md).map_err(|e| Error::io(&p, e))?;
    if let Some(b) = &rep.mean_roc {
        plot_band(&out.join("roc.png"), b, "Mean ROC (± 1 std)", "False positive rate", "True positive rate", true)?;
    }
    if let Some(b) = &rep.mean_pr {
        plot_band(&out.join("pr.png"), b, "Mean precision-recall (± 1 std)", "Recall", "Precision", false)?;
    }
    plot_confusion(&out.join("confusion.png"), cm, "Pooled confusion matrix")?;
    ctx.snapshot(&out, "report")?;
    println!("report: {}", out.display());
    Ok(())
}
