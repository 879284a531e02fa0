use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::blocks::write_checkpoint;
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::matrix::ExperimentMatrix;
use crate::harness::synth::{generate_dataset, CLASS_NAMES};
use crate::harness::train::{train, RunResult, TrainConfig};
use crate::patching::{estimate_flops, PatchConfig};

#[derive(Debug, Clone)]
pub struct MatrixOptions {
    pub seeds: Vec<u64>,
    /// Concurrent runs; `0` uses the global thread pool.
    pub workers: usize,
    /// When set, each trained model is written to `<dir>/<label>_seed<k>.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
}

/// Outcome of one `(strategy, seed)` run; failures carry their message.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub label: String,
    pub seed: u64,
    pub result: std::result::Result<RunResult, String>,
}

/// Aggregate over the successful seeds of one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRow {
    pub label: String,
    pub directions: String,
    pub runs: usize,
    pub miou_mean: f64,
    pub miou_min: f64,
    pub miou_max: f64,
    pub per_class_mean: Vec<Option<f64>>,
    pub param_count: u64,
    pub flops: u64,
}

#[derive(Debug, Clone)]
pub struct MatrixReport {
    pub class_names: Vec<String>,
    pub runs: Vec<RunOutcome>,
    pub rows: Vec<StrategyRow>,
    /// Max minus min of the per-strategy mean mIoU.
    pub across_strategy_spread: f64,
    /// Mean over strategies of the max-minus-min mIoU across seeds.
    pub within_strategy_spread: f64,
}

fn class_names(k: usize) -> Vec<String> {
    (0..k).map(|c| CLASS_NAMES.get(c).map_or_else(|| format!("class{c}"), |s| s.to_string())).collect()
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn aggregate(matrix: &ExperimentMatrix, runs: &[RunOutcome], k: usize) -> Vec<StrategyRow> {
    matrix
        .specs()
        .iter()
        .filter_map(|spec| {
            let ok: Vec<&RunResult> = runs
                .iter()
                .filter(|r| r.label == spec.label())
                .filter_map(|r| r.result.as_ref().ok())
                .filter(|r| r.miou.is_finite())
                .collect();
            let first = ok.first()?;
            let mious: Vec<f64> = ok.iter().map(|r| r.miou).collect();
            let per_class_mean = (0..k).map(|c| mean(ok.iter().filter_map(|r| r.per_class_iou[c]))).collect();
            Some(StrategyRow {
                label: spec.label().to_string(),
                directions: spec.directions().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("+"),
                runs: ok.len(),
                miou_mean: mean(mious.iter().copied()).expect("at least one run"),
                miou_min: mious.iter().copied().fold(f64::INFINITY, f64::min),
                miou_max: mious.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                per_class_mean,
                param_count: first.param_count,
                flops: first.flops,
            })
        })
        .collect()
}

/// Trains and evaluates every `(strategy, seed)` pair on one shared synthetic
/// dataset. A failing run is recorded and the rest of the matrix continues.
pub fn run_matrix(matrix: &ExperimentMatrix, cfg: &ExperimentConfig, opts: &MatrixOptions) -> Result<MatrixReport> {
    cfg.validate()?;
    if opts.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let base = cfg.model.to_config()?;
    let data = generate_dataset(&cfg.data.scene, cfg.data.n_train, cfg.data.n_val)?;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let jobs: Vec<_> = matrix.specs().iter().flat_map(|s| opts.seeds.iter().map(move |&seed| (s, seed))).collect();

    let run_one = |&(spec, seed): &(&crate::grid_scan::StrategySpec, u64)| {
        let label = spec.label().to_string();
        log::info!("starting {label} seed {seed}");
        let model_cfg = base.clone().with_strategy(spec.clone());
        let outcome = train(&model_cfg, &data, &TrainConfig::from_experiment(cfg, seed)).and_then(|(model, result)| {
            if let Some(dir) = &opts.checkpoint_dir {
                let file = std::fs::File::create(dir.join(format!("{label}_seed{seed}.ckpt")))?;
                write_checkpoint(&model, std::io::BufWriter::new(file))?;
            }
            Ok(result)
        });
        if let Err(e) = &outcome {
            log::warn!("{label} seed {seed} failed: {e}");
        }
        RunOutcome { label, seed, result: outcome.map_err(|e| e.to_string()) }
    };
    let runs: Vec<RunOutcome> = if opts.workers == 0 {
        jobs.par_iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run_one).collect())
    };

    let k = base.num_classes;
    let rows = aggregate(matrix, &runs, k);
    let across =
        match (rows.iter().map(|r| r.miou_mean).reduce(f64::max), rows.iter().map(|r| r.miou_mean).reduce(f64::min)) {
            (Some(hi), Some(lo)) => hi - lo,
            _ => f64::NAN,
        };
    let within = mean(rows.iter().map(|r| r.miou_max - r.miou_min)).unwrap_or(f64::NAN);
    Ok(MatrixReport {
        class_names: class_names(k),
        runs,
        rows,
        across_strategy_spread: across,
        within_strategy_spread: within,
    })
}

fn pct(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

impl MatrixReport {
    /// Spread summary in mIoU points.
    pub fn summary(&self) -> String {
        format!(
            "across-strategy spread: {} mIoU points\nwithin-strategy seed spread: {} mIoU points\n",
            pct(Some(self.across_strategy_spread)),
            pct(Some(self.within_strategy_spread))
        )
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "| Strategy | Directions | mIoU |");
        for c in &self.class_names {
            let _ = write!(s, " {c} |");
        }
        s.push_str(" Params | FLOPs | Seeds |\n|---|---|---:|");
        s.push_str(&"---:|".repeat(self.class_names.len()));
        s.push_str("---:|---:|---:|\n");
        for r in &self.rows {
            let _ = write!(s, "| {} | {} | {} |", r.label, r.directions, pct(Some(r.miou_mean)));
            for v in &r.per_class_mean {
                let _ = write!(s, " {} |", pct(*v));
            }
            let _ = writeln!(s, " {} | {} | {} |", r.param_count, r.flops, r.runs);
        }
        let failed: Vec<_> = self.runs.iter().filter(|r| r.result.is_err()).collect();
        s.push('\n');
        s.push_str(&self.summary().replace('\n', "  \n"));
        for f in failed {
            let _ = writeln!(s, "\nfailed: {} seed {}: {}", f.label, f.seed, f.result.as_ref().unwrap_err());
        }
        s
    }

    /// Writes `runs/<label>_seed<k>.csv` loss curves, `runs.csv`, `strategies.csv`,
    /// `strategies.md` and `summary.txt` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let runs_dir = dir.join("runs");
        std::fs::create_dir_all(&runs_dir)?;

        let mut all = csv::Writer::from_path(dir.join("runs.csv"))?;
        let mut header = vec!["label".to_string(), "seed".into(), "status".into(), "miou".into()];
        header.extend(self.class_names.iter().cloned());
        header.extend(["pixel_accuracy", "param_count", "flops", "wall_time_s", "error"].map(String::from));
        all.write_record(&header)?;
        for run in &self.runs {
            let mut rec = vec![run.label.clone(), run.seed.to_string()];
            match &run.result {
                Ok(r) => {
                    rec.push("ok".into());
                    rec.push(format!("{:.6}", r.miou));
                    rec.extend(r.per_class_iou.iter().map(|v| v.map_or(String::new(), |x| format!("{x:.6}"))));
                    rec.push(format!("{:.6}", r.pixel_accuracy));
                    rec.push(r.param_count.to_string());
                    rec.push(r.flops.to_string());
                    rec.push(format!("{:.3}", r.wall_time_s));
                    rec.push(String::new());

                    let mut curve =
                        csv::Writer::from_path(runs_dir.join(format!("{}_seed{}.csv", run.label, run.seed)))?;
                    curve.write_record(["step", "loss"])?;
                    for (step, loss) in &r.loss_curve {
                        curve.write_record([step.to_string(), format!("{loss:.6}")])?;
                    }
                    curve.flush()?;
                }
                Err(e) => {
                    rec.push("failed".into());
                    rec.extend(std::iter::repeat_n(String::new(), self.class_names.len() + 5));
                    rec.push(e.clone());
                }
            }
            all.write_record(&rec)?;
        }
        all.flush()?;

        let mut table = csv::Writer::from_path(dir.join("strategies.csv"))?;
        let mut header = vec!["strategy".to_string(), "directions".into(), "miou".into()];
        header.extend(self.class_names.iter().cloned());
        header.extend(["miou_min", "miou_max", "seeds", "param_count", "flops"].map(String::from));
        table.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.label.clone(), r.directions.clone(), format!("{:.6}", r.miou_mean)];
            rec.extend(r.per_class_mean.iter().map(|v| v.map_or(String::new(), |x| format!("{x:.6}"))));
            rec.push(format!("{:.6}", r.miou_min));
            rec.push(format!("{:.6}", r.miou_max));
            rec.push(r.runs.to_string());
            rec.push(r.param_count.to_string());
            rec.push(r.flops.to_string());
            table.write_record(&rec)?;
        }
        table.flush()?;

        std::fs::write(dir.join("strategies.md"), self.to_markdown())?;
        std::fs::write(dir.join("summary.txt"), self.summary())?;
        Ok(())
    }
}

/// One row of the patch-size/stride ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub patch: usize,
    pub stride: usize,
    pub flops: Option<u64>,
    pub params: Option<u64>,
    pub miou: Option<f64>,
    pub note: Option<String>,
}

/// Varies `(patch, stride)` with the strategy fixed to a single D1 scan.
///
/// FLOPs are measured on a square input of side `cfg.ablation.flops_input`;
/// mIoU comes from training on the synthetic data when `train_models` is set.
/// Pairs that cannot be built are kept in place with a note.
pub fn ablate_patching(
    cfg: &ExperimentConfig,
    pairs: &[(usize, usize)],
    seed: u64,
    train_models: bool,
) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let mut base = cfg.model.clone();
    base.strategy = "D1".into();
    let data =
        if train_models { Some(generate_dataset(&cfg.data.scene, cfg.data.n_train, cfg.data.n_val)?) } else { None };
    let side = cfg.ablation.flops_input;
    let mut rows = Vec::with_capacity(pairs.len());
    for &(patch, stride) in pairs {
        let mut row = AblationRow { patch, stride, flops: None, params: None, miou: None, note: None };
        let mut section = base.clone();
        section.patch_size = patch;
        section.stride = stride;
        let model_cfg = match section.to_config() {
            Ok(c) => c,
            Err(e) => {
                log::warn!("skipping patch {patch} stride {stride}: {e}");
                row.note = Some(format!("skipped: {e}"));
                rows.push(row);
                continue;
            }
        };
        row.note = PatchConfig::new(patch, stride, model_cfg.patch.embed_dim)?.note();
        match estimate_flops(&model_cfg, side, side) {
            Ok(r) => {
                row.flops = Some(r.total_flops);
                row.params = Some(r.param_count);
            }
            Err(e) => row.note = Some(format!("skipped: {e}")),
        }
        if let Some(data) = &data {
            match train(&model_cfg, data, &TrainConfig::from_experiment(cfg, seed)) {
                Ok((_, r)) => row.miou = Some(r.miou),
                Err(e) => {
                    log::warn!("patch {patch} stride {stride} failed: {e}");
                    row.note = Some(format!("training failed: {e}"));
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut s = String::from("| Patch size | Stride | FLOPs | Params | mIoU | Note |\n|---|---:|---:|---:|---:|---|\n");
    let opt = |v: Option<u64>| v.map_or("-".to_string(), |x| x.to_string());
    for r in rows {
        let _ = writeln!(
            s,
            "| {p}x{p} | {} | {} | {} | {} | {} |",
            r.stride,
            opt(r.flops),
            opt(r.params),
            pct(r.miou),
            r.note.as_deref().unwrap_or(""),
            p = r.patch
        );
    }
    s
}

/// Writes `ablation.csv` and `ablation.md` under `dir`.
pub fn write_ablation(rows: &[AblationRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
    w.write_record(["patch_size", "stride", "flops", "params", "miou", "note"])?;
    for r in rows {
        w.write_record([
            r.patch.to_string(),
            r.stride.to_string(),
            r.flops.map_or(String::new(), |v| v.to_string()),
            r.params.map_or(String::new(), |v| v.to_string()),
            r.miou.map_or(String::new(), |v| format!("{v:.6}")),
            r.note.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    std::fs::write(dir.join("ablation.md"), ablation_markdown(rows))?;
    Ok(())
}
