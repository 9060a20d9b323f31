use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use stepalign::classifier::{read_classifier, write_classifier, TrainedClassifier};
use stepalign::dataset::{
    agreement_tiou, cohens_kappa, make_group_kfold, pair_labels, read_annotation, read_folds,
    write_folds, FoldSpec,
};
use stepalign::features::{synth_corpus, Dataset};
use stepalign::model::{read_checkpoint, write_checkpoint, CheckpointHeader, ModelParams};
use stepalign::pipeline::{
    evaluate_fold, run_experiment, train_fold_aligner, train_fold_classifier, Arm, ArmReport,
    ExperimentConfig, ExperimentReport, FoldSummary, FoldView, Seeds,
};
use stepalign::report::write_report;
use stepalign::{Error, Result};

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::InvalidInput(format!("json: {e}")))
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => read_json(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

fn fold_dir(ckpts: &Path, fold: &FoldSpec) -> PathBuf {
    ckpts.join(format!("fold{}", fold.fold_id))
}

fn align_path(ckpts: &Path, fold: &FoldSpec) -> PathBuf {
    fold_dir(ckpts, fold).join("align.ckpt")
}

fn classifier_path(ckpts: &Path, fold: &FoldSpec, arm: Arm) -> PathBuf {
    fold_dir(ckpts, fold).join(format!("classifier_{arm}.ckpt"))
}

fn load_aligner(
    ckpts: &Path,
    fold: &FoldSpec,
    arm: Arm,
) -> Result<Option<(CheckpointHeader, ModelParams)>> {
    if arm.uses_aligner() {
        read_checkpoint(&align_path(ckpts, fold)).map(Some)
    } else {
        Ok(None)
    }
}

/// Runs `f` on every fold on a pool of `jobs` threads; results stay in fold
/// order.
fn per_fold<T: Send>(
    folds: &[FoldSpec],
    jobs: usize,
    f: impl Fn(&FoldSpec) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    pool(jobs)?.install(|| {
        folds
            .par_iter()
            .map(|fold| f(fold).map_err(|e| e.in_fold(fold.fold_id)))
            .collect()
    })
}

pub fn synth(config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?.synth;
    cfg.seed = seed;
    let synth = synth_corpus(&cfg)?;
    synth.dataset.save(out)?;
    write_text(&out.join("synth_config.json"), &to_json(&cfg)?)?;
    write_text(&out.join("traces.json"), &to_json(&synth.traces)?)?;
    println!(
        "wrote {} videos over {} tasks to {}",
        synth.dataset.corpus.videos.len(),
        synth.dataset.corpus.texts.len(),
        out.display()
    );
    Ok(())
}

pub fn split(corpus: &Path, k: usize, seed: u64, out: &Path) -> Result<()> {
    let corpus = stepalign::dataset::load_corpus(corpus)?;
    let folds = make_group_kfold(&corpus.videos, k, seed)?;
    write_folds(out, &folds)?;
    for f in &folds {
        println!(
            "fold {}: {} train, {} val, {} test",
            f.fold_id,
            f.train.len(),
            f.val.len(),
            f.test.len()
        );
    }
    Ok(())
}

pub fn train_align(
    corpus: &Path,
    folds: &Path,
    config: Option<&Path>,
    seed: u64,
    out: &Path,
    jobs: usize,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.model.seed = seed;
    cfg.model.validate()?;
    let dataset = Dataset::load(corpus)?;
    let folds = read_folds(folds)?;
    let lines = per_fold(&folds, jobs, |fold| {
        let view = FoldView::new(&dataset, fold)?;
        let trained = train_fold_aligner(&view, &cfg.model)?;
        let path = align_path(out, fold);
        write_dir(&path)?;
        write_checkpoint(&path, &trained.params, seed, trained.epoch, trained.val_f1)?;
        Ok(format!(
            "fold {}: epoch {}, val F1 {:.4} -> {}",
            fold.fold_id,
            trained.epoch,
            trained.val_f1,
            path.display()
        ))
    })?;
    lines.iter().for_each(|l| println!("{l}"));
    Ok(())
}

fn write_dir(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        }),
        None => Ok(()),
    }
}

pub fn train_detect(
    corpus: &Path,
    folds: &Path,
    ckpts: &Path,
    arm: Arm,
    config: Option<&Path>,
    seed: u64,
    jobs: usize,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.classifier.seed = seed;
    cfg.classifier.validate()?;
    let dataset = Dataset::load(corpus)?;
    let folds = read_folds(folds)?;
    let lines = per_fold(&folds, jobs, |fold| {
        let view = FoldView::new(&dataset, fold)?;
        let aligner = load_aligner(ckpts, fold, arm)?;
        let params = aligner.as_ref().map(|(_, p)| p);
        let trained =
            train_fold_classifier(&view, arm, params, cfg.model.drop_pct, &cfg.classifier)?;
        let path = classifier_path(ckpts, fold, arm);
        write_dir(&path)?;
        write_classifier(&path, &trained, seed)?;
        Ok(format!(
            "fold {}: epoch {}, val mAP {} -> {}",
            fold.fold_id,
            trained.epoch,
            trained
                .val_score
                .map_or("n/a".into(), |v| format!("{v:.4}")),
            path.display()
        ))
    })?;
    lines.iter().for_each(|l| println!("{l}"));
    Ok(())
}

pub fn eval(
    corpus: &Path,
    folds_path: &Path,
    ckpts: &Path,
    arm: Arm,
    config: Option<&Path>,
    out: &Path,
    jobs: usize,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    let dataset = Dataset::load(corpus)?;
    let folds = read_folds(folds_path)?;
    let runs = per_fold(&folds, jobs, |fold| {
        let aligner = load_aligner(ckpts, fold, arm)?;
        let (header, params) = read_classifier(&classifier_path(ckpts, fold, arm))?;
        let classifier = TrainedClassifier {
            params,
            epoch: header.epoch,
            val_score: header.val_score,
            balance: header.balance,
            log: Vec::new(),
        };
        let view = FoldView::new(&dataset, fold)?;
        let scored = evaluate_fold(
            &view,
            arm,
            aligner.as_ref().map(|(_, p)| p),
            cfg.model.drop_pct,
            &classifier,
        )?;
        let summary = FoldSummary {
            fold_id: fold.fold_id,
            align_epoch: aligner.as_ref().map(|(h, _)| h.epoch),
            align_val_f1: aligner.as_ref().map(|(h, _)| h.val_f1),
            access: view.accesses(),
        };
        let seeds = (aligner.map(|(h, _)| h.seed), header.seed);
        Ok((summary, scored, seeds))
    })?;

    // Echo what this evaluation actually used.
    cfg.corpus = Some(corpus.to_path_buf());
    cfg.folds = folds.len();
    cfg.arms = vec![arm];
    let (model_seed, classifier_seed) = runs[0].2;
    cfg.model.seed = model_seed.unwrap_or(cfg.model.seed);
    cfg.classifier.seed = classifier_seed;
    let mut summaries = Vec::with_capacity(runs.len());
    let mut per_fold = Vec::with_capacity(runs.len());
    for (summary, scored, _) in runs {
        summaries.push(summary);
        per_fold.push(scored);
    }
    let arm_report = ArmReport::new(per_fold);
    print_arm(arm, &arm_report);
    let report = ExperimentReport {
        seeds: Seeds {
            synth: None,
            split: None,
            model: cfg.model.seed,
            classifier: cfg.classifier.seed,
        },
        config: cfg,
        folds: summaries,
        arms: [(arm, arm_report)].into_iter().collect(),
    };
    write_text(out, &(report.to_json()? + "\n"))
}

fn print_arm(arm: Arm, rep: &ArmReport) {
    let m = &rep.mean;
    println!(
        "{arm}: frame F1 {:.4}, MoF {:.4}, mAP {}",
        m.mean_frame.f1,
        m.mean_frame.mof,
        m.mean_map.map_or("n/a".into(), |v| format!("{v:.4}"))
    );
}

pub fn run(config: Option<&Path>, seed: u64, out: &Path, jobs: usize) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.synth.seed = seed;
    cfg.split_seed = seed;
    cfg.model.seed = seed;
    cfg.classifier.seed = seed;
    cfg.jobs = jobs;
    let report = run_experiment(&cfg)?;
    for (arm, rep) in &report.arms {
        print_arm(*arm, rep);
    }
    write_text(out, &(report.to_json()? + "\n"))
}

pub fn agreement(a: &Path, b: &Path) -> Result<()> {
    let a = read_annotation(a)?;
    let b = read_annotation(b)?;
    let tiou = agreement_tiou(&a, &b)?;
    let (la, lb): (Vec<_>, Vec<_>) = pair_labels(&a, &b)?.into_iter().unzip();
    let kappa = cohens_kappa(&la, &lb)?;
    println!("tIoU {tiou}");
    println!("kappa {kappa}");
    Ok(())
}

pub fn report(input: &Path, out: &Path) -> Result<()> {
    let report: ExperimentReport = read_json(input)?;
    let written = write_report(&report, out)?;
    for (arm, rep) in &report.arms {
        print_arm(*arm, rep);
    }
    println!("wrote {} files under {}", written.len(), out.display());
    Ok(())
}
