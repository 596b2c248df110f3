mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use stpp_core::checkpoint::Checkpoint;
use stpp_core::dataset::{write_atomic, Dataset};
use stpp_core::evaluation::{
    evaluate, heatmap_csv, intensity_curve_csv, kernel_matrix_rank, predict_next_event, uniform, Fitted, Predictor,
    RankParam, RankReport,
};
use stpp_core::simulator::{generate_dataset, SimConfig, TrueKernel, TrueModel};
use stpp_core::trainer::{train_test_split, train_with, TrainState};
use stpp_core::{EventSequence, GridSpec, KernelModel, TemporalParam};

use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "stpp", version, about = "Fit, simulate and evaluate spatio-temporal point processes")]
struct Cli {
    /// TOML experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Param {
    Displacement,
    HistoryTime,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Test,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset by thinning.
    Simulate {
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        lambda_bar: Option<f64>,
    },
    /// Train a model on the training split of a dataset.
    Fit {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        temporal_rank: Option<usize>,
        #[arg(long)]
        spatial_rank: Option<usize>,
        #[arg(long)]
        tau_max: Option<f64>,
        #[arg(long)]
        a_max: Option<f64>,
        #[arg(long, value_enum)]
        param: Option<Param>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint (or `truth`) on the test split.
    Eval {
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Also predict the last event of every test sequence.
        #[arg(long)]
        predict: bool,
    },
    /// Numerical rank of a temporal kernel in both parameterizations.
    Rank {
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        extent: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Predict the next event after every sequence of a prefix file.
    Predict {
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        prefix: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.train.seed = cfg.seed;
    match cli.command {
        Command::Simulate { kernel, sequences, mu, horizon, lambda_bar } => {
            if let Some(k) = kernel {
                cfg.dataset.kernel = k;
            }
            if let Some(n) = sequences {
                cfg.dataset.sequences = n;
            }
            cfg.dataset.mu = mu.or(cfg.dataset.mu);
            cfg.dataset.horizon = horizon.or(cfg.dataset.horizon);
            cfg.dataset.lambda_bar = lambda_bar.or(cfg.dataset.lambda_bar);
            cmd_simulate(&mut cfg)
        }
        Command::Fit {
            data,
            epochs,
            batch_size,
            lr,
            temporal_rank,
            spatial_rank,
            tau_max,
            a_max,
            param,
            resume,
        } => {
            cfg.dataset.path = data.or(cfg.dataset.path.take());
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(l) = lr {
                cfg.train.learning_rate = l;
            }
            if let Some(l) = temporal_rank {
                cfg.model.temporal_rank = l;
            }
            if let Some(r) = spatial_rank {
                cfg.model.spatial_rank = r;
            }
            if let Some(t) = tau_max {
                cfg.model.tau_max = t;
            }
            if let Some(a) = a_max {
                cfg.model.a_max = a;
            }
            if let Some(p) = param {
                cfg.model.parameterization = match p {
                    Param::Displacement => TemporalParam::Displacement,
                    Param::HistoryTime => TemporalParam::HistoryTime,
                };
            }
            cmd_fit(&mut cfg, resume.as_deref())
        }
        Command::Eval { checkpoint, data, split, predict } => {
            cfg.dataset.path = data.or(cfg.dataset.path.take());
            cfg.eval.predict |= predict;
            cmd_eval(&cfg, &checkpoint, split)
        }
        Command::Rank { kernel, grid, extent, tolerance } => {
            if let Some(k) = kernel {
                cfg.rank.kernel = k;
            }
            if let Some(g) = grid {
                cfg.rank.grid = g;
            }
            if let Some(e) = extent {
                cfg.rank.extent = e;
            }
            if let Some(t) = tolerance {
                cfg.rank.tolerance = t;
            }
            cmd_rank(&cfg)
        }
        Command::Predict { checkpoint, prefix } => cmd_predict(&cfg, &checkpoint, &prefix),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn write_config(cfg: &ExperimentConfig) -> Result<()> {
    write_atomic(&cfg.out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    Ok(())
}

fn cmd_simulate(cfg: &mut ExperimentConfig) -> Result<()> {
    let kernel: TrueKernel = cfg.dataset.kernel.parse()?;
    let (mu0, t0, b0) = kernel.defaults();
    let mu = *cfg.dataset.mu.get_or_insert(mu0);
    let horizon = *cfg.dataset.horizon.get_or_insert(t0);
    let bounds = cfg.dataset.bounds.get_or_insert(b0).clone();
    let sim = SimConfig {
        horizon,
        bounds,
        lambda_bar: cfg.dataset.lambda_bar,
        sequences: cfg.dataset.sequences,
        seed: cfg.seed,
        pilot_sequences: cfg.dataset.pilot_sequences,
    };
    let ds = generate_dataset(&TrueModel::new(kernel, mu), &sim)?;
    let path = cfg.out.join("dataset.jsonl");
    ds.write(&path)?;
    cfg.dataset.path = Some(path.clone());
    write_config(cfg)?;
    println!(
        "wrote {} sequences ({} events, lambda_bar {:.4}) to {}",
        ds.len(),
        ds.total_events(),
        ds.meta.lambda_bar.unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let path = cfg
        .dataset
        .path
        .as_ref()
        .ok_or_else(|| anyhow!("no dataset given (use --data or dataset.path)"))?;
    Dataset::read(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn split(cfg: &ExperimentConfig, ds: &Dataset) -> Result<(Vec<EventSequence>, Vec<EventSequence>)> {
    Ok(train_test_split(&ds.sequences, cfg.dataset.train_fraction, cfg.seed)?)
}

fn cmd_fit(cfg: &mut ExperimentConfig, resume: Option<&Path>) -> Result<()> {
    let ds = load_dataset(cfg)?;
    cfg.model.spatial_dim = ds.meta.spatial_dim;
    if cfg.model.mark_rank > 0 {
        cfg.model.num_marks = ds.meta.num_marks;
    }
    let extent = ds.sequences.iter().map(|s| s.horizon).fold(ds.meta.horizon, f64::max);
    cfg.model.time_extent = extent;
    let reach = ds.meta.bounds.iter().map(|b| b[0].abs().max(b[1].abs())).fold(0.0, f64::max);
    if reach > 0.0 {
        cfg.model.space_scale = reach;
    }
    let (train, _) = split(cfg, &ds)?;
    if train.is_empty() {
        bail!("the training split of {} sequences is empty", ds.len());
    }
    let (mut model, state) = match resume {
        Some(p) => {
            let c = Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            let m = c.model()?;
            cfg.model = m.spec.clone();
            (m, c.state)
        }
        None => (KernelModel::new(cfg.model.clone(), cfg.seed)?, None),
    };
    fs::create_dir_all(&cfg.out)?;
    write_config(cfg)?;
    let ckpt = cfg.out.join("checkpoint.json");
    let curve = cfg.out.join("train_curve.csv");
    let tc = cfg.train.clone();
    let save = |m: &KernelModel, st: &TrainState| -> stpp_core::Result<()> {
        Checkpoint::from_model(m, Some(&tc), Some(st))?.save(&ckpt)?;
        write_atomic(&curve, st.curve_csv().as_bytes())
    };
    let initial = state.clone().unwrap_or_else(|| TrainState::new(&model, &tc));
    save(&model, &initial)?;
    let st = train_with(&train, &mut model, &tc, state, save).map_err(|e| match e {
        stpp_core::Error::Infeasible { .. } | stpp_core::Error::Numerical(_) => {
            anyhow!("training stopped, barrier could not be kept feasible: {e}")
        }
        other => anyhow!(other),
    })?;
    if let Some(last) = st.history.last() {
        println!(
            "trained {} epochs ({} batches): -loglik {:.4}, w {:.4e}, mu {:.5}",
            st.epoch, st.batches, last.neg_loglik, st.w, model.mu
        );
    } else {
        println!("no epochs run; checkpoint holds the initialization");
    }
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

enum Loaded {
    Truth(TrueModel),
    Model(Box<KernelModel>, Option<GridSpec>),
}

fn load_model(spec: &str, ds: Option<&Dataset>) -> Result<Loaded> {
    if spec == "truth" {
        let ds = ds.ok_or_else(|| anyhow!("`truth` needs a dataset with kernel metadata"))?;
        let kernel: TrueKernel = ds
            .meta
            .kernel
            .as_deref()
            .ok_or_else(|| anyhow!("dataset records no ground-truth kernel"))?
            .parse()?;
        let mu = ds.meta.mu.ok_or_else(|| anyhow!("dataset records no background rate"))?;
        return Ok(Loaded::Truth(TrueModel::new(kernel, mu)));
    }
    let p = Path::new(spec);
    let c = Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
    let grids = c.train_config.as_ref().map(|t| t.grids.clone());
    Ok(Loaded::Model(Box::new(c.model()?), grids))
}

fn truth_of(ds: &Dataset) -> Option<TrueModel> {
    let k: TrueKernel = ds.meta.kernel.as_deref()?.parse().ok()?;
    Some(TrueModel::new(k, ds.meta.mu?))
}

fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &str, which: Split) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let loaded = load_model(checkpoint, Some(&ds))?;
    let test = match which {
        Split::Test => split(cfg, &ds)?.1,
        Split::All => ds.sequences.clone(),
    };
    if test.is_empty() {
        bail!("the evaluation split is empty");
    }
    let truth = truth_of(&ds);
    let predict = cfg.eval.predict.then_some(&cfg.eval.predict_options);
    let fitted;
    let model: &dyn Predictor = match &loaded {
        Loaded::Truth(t) => t,
        Loaded::Model(m, g) => {
            fitted = Fitted::new(m, g.as_ref().unwrap_or(&cfg.train.grids))?;
            &fitted
        }
    };
    let report = evaluate(model, truth.as_ref(), &test, &cfg.eval.grid, predict)?;

    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("report.json"), &report)?;
    let horizon = ds.meta.horizon;
    if ds.meta.spatial_dim == 0 {
        let n = cfg.eval.heatmap_points.max(2);
        let t_primes = uniform(0.0, horizon, n);
        let tau_max = match &loaded {
            Loaded::Model(m, _) => m.spec.tau_max,
            Loaded::Truth(_) => cfg.model.tau_max,
        };
        let taus = uniform(0.0, tau_max, n);
        if let Some(t) = &truth {
            let z = [0.0; 2];
            let csv = heatmap_csv(|a, b| t.kernel.eval(a, a + b, &z, &z), &t_primes, &taus);
            write_atomic(&cfg.out.join("heatmap_true.csv"), csv.as_bytes())?;
        }
        if let Loaded::Model(m, _) = &loaded {
            if !m.is_marked() {
                let z = [0.0; 2];
                let csv = heatmap_csv(|a, b| m.kernel_eval(a, a + b, &z, &z, None, None).unwrap_or(f64::NAN), &t_primes, &taus);
                write_atomic(&cfg.out.join("heatmap_fitted.csv"), csv.as_bytes())?;
            }
        }
        let curve = intensity_curve_csv(truth.as_ref(), model, &test[0], cfg.eval.curve_points.max(1));
        write_atomic(&cfg.out.join("intensity_curve.csv"), curve.as_bytes())?;
    }
    write_config(cfg)?;
    println!("test loglik per event: {:.6}", report.test_loglik_per_event);
    if let Some(t) = report.truth_loglik_per_event {
        println!("truth loglik per event: {t:.6}");
    }
    if let Some(m) = report.mre {
        println!("MRE: {m:.6}");
    }
    if let Some(p) = &report.prediction {
        println!("time MAE {:.6}, time RMSE {:.6}", p.time_mae, p.time_rmse);
    }
    println!("report: {}", cfg.out.join("report.json").display());
    Ok(())
}

fn cmd_rank(cfg: &ExperimentConfig) -> Result<()> {
    let kernel: TrueKernel = cfg.rank.kernel.parse()?;
    if kernel.spatial_dim() != 0 {
        bail!("rank analysis needs a temporal kernel, {kernel} is spatial");
    }
    let z = [0.0; 2];
    let k = |tp: f64, tau: f64| kernel.eval(tp, tp + tau, &z, &z);
    let r = &cfg.rank;
    let report = RankReport {
        kernel: kernel.id().to_string(),
        grid: r.grid,
        extent: r.extent,
        tolerance: r.tolerance,
        history_time_rank: kernel_matrix_rank(k, RankParam::HistoryTime, r.grid, r.extent, r.tolerance)?,
        displacement_rank: kernel_matrix_rank(k, RankParam::HistoryDisplacement, r.grid, r.extent, r.tolerance)?,
    };
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("rank.json"), &report)?;
    write_config(cfg)?;
    println!(
        "{}: rank {} in (t', t), {} in (t', t - t')",
        report.kernel, report.history_time_rank, report.displacement_rank
    );
    Ok(())
}

fn cmd_predict(cfg: &ExperimentConfig, checkpoint: &str, prefix: &Path) -> Result<()> {
    let ds = Dataset::read(prefix).with_context(|| format!("reading {}", prefix.display()))?;
    let loaded = load_model(checkpoint, Some(&ds))?;
    let fitted;
    let model: &dyn Predictor = match &loaded {
        Loaded::Truth(t) => t,
        Loaded::Model(m, g) => {
            fitted = Fitted::new(m, g.as_ref().unwrap_or(&cfg.train.grids))?;
            &fitted
        }
    };
    let preds = ds
        .sequences
        .iter()
        .map(|s| predict_next_event(model, &s.events, &s.bounds, &cfg.eval.predict_options))
        .collect::<stpp_core::Result<Vec<_>>>()?;
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("predictions.json"), &preds)?;
    write_config(cfg)?;
    for (i, p) in preds.iter().enumerate() {
        let loc: Vec<String> = p.location.iter().map(|x| format!("{x:.6}")).collect();
        println!("{i}: t = {:.6} s = [{}]{}", p.time, loc.join(", "), if p.converged { "" } else { " (not converged)" });
    }
    Ok(())
}
