use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scanlab::blocks::{read_checkpoint, write_checkpoint, ModelSection};
use scanlab::grid_scan::{generate_path, GridShape, ScanDirection};
use scanlab::harness::{
    ablate_patching, ablation_markdown, build_experiment_matrix, evaluate, generate_dataset, strategy_from_str, train,
    write_ablation, write_dataset, ExperimentConfig, MatrixOptions, TrainConfig, CLASS_NAMES,
};
use scanlab::patching::estimate_flops;
use scanlab::ssm_core::{selective_scan_chunked, selective_scan_forward, SelectiveScanParams};

#[derive(Parser)]
#[command(name = "scanlab", version, about = "Scan-order experiments for vision state-space models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the row-major cell indices of one scan direction in visiting order.
    ScanPaths {
        #[arg(long, default_value = "D1")]
        direction: ScanDirection,
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
        /// Print the grid of visiting steps instead.
        #[arg(long)]
        grid: bool,
    },
    /// Analytic FLOPs and parameters as CSV, one row per ablation (patch, stride) pair.
    Flops {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Square input side; defaults to the config's `ablation.flops_input`.
        #[arg(long)]
        size: Option<usize>,
        /// Per-component table for the configured patching instead.
        #[arg(long)]
        breakdown: bool,
    },
    /// Time the sequential and chunked selective scans, CSV `length,mode,seconds`.
    BenchScan {
        #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 2048, 4096, 8192, 16384])]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long, default_value_t = 8)]
        state: usize,
        #[arg(long, default_value_t = 256)]
        chunk: usize,
    },
    /// Write the synthetic dataset as PPM images and PGM masks.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every (strategy, seed) pair.
    RunMatrix {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        subset: Option<Vec<String>>,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long, default_value = "results/matrix")]
        out: PathBuf,
        /// Also save one checkpoint per run under `<out>/checkpoints`.
        #[arg(long)]
        checkpoints: bool,
    },
    /// Patch size / stride ablation with a single D1 scan.
    AblatePatching {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "results/ablation")]
        out: PathBuf,
        /// Report costs only.
        #[arg(long)]
        no_train: bool,
    },
    /// Train one model.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `Exp<k>` or a direction list; overrides the config file.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    })
}

fn print_ious(ious: &[Option<f64>]) {
    for (c, v) in ious.iter().enumerate() {
        let name = CLASS_NAMES.get(c).copied().unwrap_or("?");
        match v {
            Some(v) => println!("  {name:<12} {:.2}", 100.0 * v),
            None => println!("  {name:<12} -"),
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::ScanPaths { direction, rows, cols, grid } => {
            let path = generate_path(direction, GridShape::new(rows, cols)?);
            if !grid {
                let order: Vec<String> = path.order().iter().map(|i| i.to_string()).collect();
                println!("{}", order.join(","));
                return Ok(());
            }
            let mut step = vec![0; rows * cols];
            for (k, &cell) in path.order().iter().enumerate() {
                step[cell] = k;
            }
            let width = (rows * cols).to_string().len();
            for r in 0..rows {
                let line: Vec<String> = (0..cols).map(|c| format!("{:>width$}", step[r * cols + c])).collect();
                println!("{}", line.join(" "));
            }
        }
        Command::Flops { config, size, breakdown } => {
            let cfg = load_config(&config)?;
            let size = size.unwrap_or(cfg.ablation.flops_input);
            let model = cfg.model.to_config()?;
            if breakdown {
                let report = estimate_flops(&model, size, size)?;
                for (name, flops, params) in &report.per_stage {
                    println!("{name:<12} {flops:>16} FLOPs {params:>10} params");
                }
                println!("{:<12} {:>16} FLOPs {:>10} params", "total", report.total_flops, report.param_count);
                return Ok(());
            }
            let mut out = csv::Writer::from_writer(std::io::stdout());
            out.write_record(["patch_size", "stride", "gflops", "params_m"])?;
            for &(patch, stride) in &cfg.ablation.pairs {
                let section = ModelSection { patch_size: patch, stride, ..cfg.model.clone() };
                let report = section.to_config().and_then(|m| estimate_flops(&m, size, size));
                match report {
                    Ok(r) => out.write_record([
                        patch.to_string(),
                        stride.to_string(),
                        format!("{:.4}", r.total_flops as f64 / 1e9),
                        format!("{:.4}", r.param_count as f64 / 1e6),
                    ])?,
                    Err(e) => log::warn!("skipping ({patch}, {stride}): {e}"),
                }
            }
            out.flush()?;
        }
        Command::BenchScan { lengths, channels, state, chunk } => {
            let p = SelectiveScanParams::s4d_real(channels, state, -2.0);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut out = csv::Writer::from_writer(std::io::stdout());
            out.write_record(["length", "mode", "seconds"])?;
            for len in lengths {
                let x: Vec<f64> = (0..len * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let t = Instant::now();
                let (seq, _) = selective_scan_forward(&x, len, &p)?;
                let t_seq = t.elapsed().as_secs_f64();
                let t = Instant::now();
                let par = selective_scan_chunked(&x, len, &p, chunk)?;
                let t_par = t.elapsed().as_secs_f64();
                let diff = seq.iter().zip(&par).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                log::info!("length {len}: max |sequential - chunked| = {diff:.3e}");
                out.write_record([len.to_string(), "sequential".into(), format!("{t_seq:.6}")])?;
                out.write_record([len.to_string(), format!("chunked{chunk}"), format!("{t_par:.6}")])?;
            }
            out.flush()?;
        }
        Command::GenData { config, out } => {
            let cfg = load_config(&config)?;
            let ds = generate_dataset(&cfg.data.scene, cfg.data.n_train, cfg.data.n_val)?;
            write_dataset(&ds, &out)?;
            println!("wrote {} train and {} val scenes to {}", ds.train.len(), ds.val.len(), out.display());
        }
        Command::RunMatrix { config, seeds, subset, workers, out, checkpoints } => {
            let cfg = load_config(&config)?;
            let mut matrix = build_experiment_matrix();
            if let Some(labels) = &subset {
                let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
                matrix = matrix.subset(&labels)?;
            }
            let opts = MatrixOptions { seeds, workers, checkpoint_dir: checkpoints.then(|| out.join("checkpoints")) };
            let report = scanlab::harness::run_matrix(&matrix, &cfg, &opts)?;
            report.write(&out)?;
            println!("{}", report.to_markdown());
            println!("results written to {}", out.display());
        }
        Command::AblatePatching { config, seed, out, no_train } => {
            let cfg = load_config(&config)?;
            let rows = ablate_patching(&cfg, &cfg.ablation.pairs, seed, !no_train)?;
            write_ablation(&rows, &out)?;
            println!("{}", ablation_markdown(&rows));
        }
        Command::Train { config, strategy, seed, checkpoint } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = strategy {
                strategy_from_str(&s)?;
                cfg.model.strategy = s;
            }
            let model_cfg = cfg.model.to_config()?;
            let data = generate_dataset(&cfg.data.scene, cfg.data.n_train, cfg.data.n_val)?;
            let (model, result) = train(&model_cfg, &data, &TrainConfig::from_experiment(&cfg, seed))?;
            println!(
                "{} seed {}: mIoU {:.2}, pixel accuracy {:.2}, {} params, {} FLOPs, {:.1} s",
                result.label,
                result.seed,
                100.0 * result.miou,
                100.0 * result.pixel_accuracy,
                result.param_count,
                result.flops,
                result.wall_time_s
            );
            print_ious(&result.per_class_iou);
            if let Some(path) = checkpoint {
                let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_checkpoint(&model, std::io::BufWriter::new(file))?;
            }
        }
        Command::Eval { checkpoint, config } => {
            let file = std::fs::File::open(&checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?;
            let model = read_checkpoint(std::io::BufReader::new(file))?;
            let cfg = load_config(&config)?;
            if cfg.data.scene.num_classes != model.cfg.num_classes {
                bail!("checkpoint predicts {} classes, data has {}", model.cfg.num_classes, cfg.data.scene.num_classes);
            }
            let data = generate_dataset(&cfg.data.scene, cfg.data.n_train, cfg.data.n_val)?;
            let cm = evaluate(&model, &data.val, cfg.data.excluded_classes.first().copied())?;
            println!(
                "{}: mIoU {:.2}, pixel accuracy {:.2}",
                model.cfg.strategy.label(),
                100.0 * cm.miou().unwrap_or(f64::NAN),
                100.0 * cm.pixel_accuracy()
            );
            print_ious(&cm.iou_per_class());
        }
    }
    Ok(())
}
