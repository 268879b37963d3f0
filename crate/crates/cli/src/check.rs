use std::io::Write;
use std::path::PathBuf;

use ace_core::bench::{run_bench, write_csv, write_table, BenchSpec};
use ace_core::gradcheck::{
    ace_ce_numeric_gradient, ace_regression_numeric_gradient, compare_gradients, ctc_enumerated_numeric_gradient,
    GradComparison, FD_STEP,
};
use ace_core::tasks::{apply_shuffle, gen_sequences, SequenceTaskParams, ShuffleSpec};
use ace_core::train::{train, write_metrics_jsonl, LossKind, ToyModel, TrainConfig};
use ace_core::{
    ace_ce_loss, ace_ce_loss_2d, ace_regression_loss, ctc_brute_force, ctc_loss, flatten_2d, softmax, CountAnnotation,
    CtcTarget, Error, LogitGrid, Shape2d,
};
use anyhow::{Context, Result};
use clap::Args;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::header;

fn random_logits(rng: &mut ChaCha8Rng, t: usize, k: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((t, k), || scale * rng.gen_range(-1.0..1.0))
}

fn parse_labels(s: &str) -> Result<Vec<usize>, Error> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse().map_err(|_| Error::InvalidInput(format!("label {p:?} is not a class index"))))
        .collect()
}

#[derive(Args, Serialize)]
pub struct LossArgs {
    #[arg(long)]
    loss: LossKind,
    #[arg(long, default_value_t = 20)]
    timesteps: usize,
    #[arg(long, default_value_t = 11)]
    classes: usize,
    /// Comma-separated class indices in `1..K`; random when omitted.
    #[arg(long)]
    labels: Option<String>,
    /// Treat the prediction as an `H x W` grid (overrides --timesteps).
    #[arg(long, requires = "width")]
    height: Option<usize>,
    #[arg(long, requires = "height")]
    width: Option<usize>,
    /// Logits are drawn uniformly from `[-scale, scale]`.
    #[arg(long, default_value_t = 3.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct LossReport {
    loss: f64,
    grad_l1: f64,
    max_abs_row_sum: f64,
}

pub fn loss(args: &LossArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let shape = match (args.height, args.width) {
        (Some(h), Some(w)) => Some(Shape2d::new(h, w)?),
        _ => None,
    };
    let t = shape.map_or(args.timesteps, |s| s.cells());
    let k = args.classes;
    if k < 2 || t == 0 {
        return Err(Error::InvalidInput("need at least 2 classes and 1 timestep".into()).into());
    }
    let labels = match &args.labels {
        Some(s) => parse_labels(s)?,
        None => {
            let n = rng.gen_range(0..=t / 2);
            (0..n).map(|_| rng.gen_range(1..k)).collect()
        }
    };
    let logits = LogitGrid::with_shape(random_logits(&mut rng, t, k, args.scale), shape)?;
    let probs = softmax(&logits);
    let lg = match args.loss {
        LossKind::AceCe => {
            let ann = CountAnnotation::from_labels(&labels, k, t)?;
            if shape.is_some() {
                ace_ce_loss_2d(&probs, &ann)?
            } else {
                ace_ce_loss(&probs, &ann)?
            }
        }
        LossKind::AceRegression => ace_regression_loss(&probs, &CountAnnotation::from_labels(&labels, k, t)?)?,
        LossKind::Ctc => {
            let flat = if shape.is_some() { flatten_2d(&probs)? } else { probs };
            ctc_loss(&flat, &CtcTarget::new(labels)?)?
        }
    };
    let g = lg.grad_logits.expect("every loss returns logit gradients");
    let report = LossReport {
        loss: lg.loss,
        grad_l1: g.iter().map(|v| v.abs()).sum(),
        max_abs_row_sum: g.rows().into_iter().map(|r| r.sum().abs()).fold(0.0, f64::max),
    };
    println!("{}", header("loss", args)?);
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[derive(Args, Serialize)]
pub struct GradCheckArgs {
    #[arg(long)]
    loss: LossKind,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Maximum relative error for entries of magnitude >= 1e-8.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 30)]
    max_timesteps: usize,
    #[arg(long, default_value_t = 100)]
    max_classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Test hook: add this to one analytic gradient entry per trial.
    #[arg(long, hide = true)]
    perturb_gradient: Option<f64>,
}

/// Random CTC instance small enough for path enumeration.
fn small_ctc_instance(rng: &mut ChaCha8Rng) -> (LogitGrid, CtcTarget) {
    loop {
        let (t, k) = (rng.gen_range(1..=6), rng.gen_range(2..=5));
        let s = rng.gen_range(0..=3usize.min(t));
        let target = CtcTarget::new((0..s).map(|_| rng.gen_range(1..k)).collect()).expect("labels in range");
        if target.min_timesteps() <= t {
            return (LogitGrid::new(random_logits(rng, t, k, 3.0)).expect("finite"), target);
        }
    }
}

pub fn grad_check(args: &GradCheckArgs) -> Result<bool> {
    if args.trials == 0 || args.max_timesteps == 0 || args.max_classes < 2 {
        return Err(Error::InvalidInput("need trials >= 1, max-timesteps >= 1, max-classes >= 2".into()).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst = GradComparison::default();
    for _ in 0..args.trials {
        let (mut analytic, numeric) = match args.loss {
            LossKind::Ctc => {
                let (logits, target) = small_ctc_instance(&mut rng);
                let analytic = ctc_loss(&softmax(&logits), &target)?.grad_logits;
                (analytic, ctc_enumerated_numeric_gradient(&logits, &target, FD_STEP)?)
            }
            kind => {
                let (t, k) = (rng.gen_range(1..=args.max_timesteps), rng.gen_range(2..=args.max_classes));
                let logits = LogitGrid::new(random_logits(&mut rng, t, k, 3.0))?;
                let n = rng.gen_range(0..=t);
                let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(1..k)).collect();
                let ann = CountAnnotation::from_labels(&labels, k, t)?;
                let probs = softmax(&logits);
                if kind == LossKind::AceCe {
                    (ace_ce_loss(&probs, &ann)?.grad_logits, ace_ce_numeric_gradient(&logits, &ann, FD_STEP)?)
                } else {
                    (ace_regression_loss(&probs, &ann)?.grad_logits, ace_regression_numeric_gradient(&logits, &ann, FD_STEP)?)
                }
            }
        };
        let analytic = analytic.as_mut().expect("every loss returns logit gradients");
        if let Some(eps) = args.perturb_gradient {
            analytic[[0, 0]] += eps;
        }
        worst = worst.merge(compare_gradients(analytic, &numeric)?);
    }
    let grad_ok = worst.passes(args.tol);

    // Forward-backward against path enumeration, reported for every loss.
    let mut oracle_rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x5eed);
    let mut ctc_worst = 0.0f64;
    for _ in 0..100 {
        let (logits, target) = small_ctc_instance(&mut oracle_rng);
        let probs = softmax(&logits);
        ctc_worst = ctc_worst.max((ctc_loss(&probs, &target)?.loss - ctc_brute_force(&probs, &target)?).abs());
    }
    let ctc_ok = ctc_worst < 1e-10;

    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    println!("{}", header("grad-check", args)?);
    println!(
        "{} {}: {} trials, {} entries, max rel error {:.3e}, max abs error on tiny entries {:.3e}, tol {:e}",
        verdict(grad_ok),
        args.loss,
        args.trials,
        worst.entries,
        worst.max_rel_error,
        worst.max_abs_error_tiny,
        args.tol
    );
    println!(
        "{} ctc enumeration oracle: 100 instances (T <= 6, |S| <= 3, K <= 5), max |loss difference| {ctc_worst:.3e}",
        verdict(ctc_ok)
    );
    Ok(grad_ok && ctc_ok)
}

#[derive(Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 144)]
    timesteps: usize,
    #[arg(long, default_value_t = 37)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    seq_len: usize,
    #[arg(long, default_value_t = 9)]
    repeats: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    /// Run each batch on the rayon pool.
    #[arg(long)]
    parallel: bool,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let mut spec = BenchSpec::new(args.timesteps, args.classes, args.batch, args.seq_len);
    spec.repeats = args.repeats;
    spec.warmup = args.warmup;
    spec.parallel = args.parallel;
    spec.seed = args.seed;
    let results = run_bench(&spec)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "# {}", header("bench", args)?)?;
    write_table(&mut out, &results)?;
    if let Some(path) = &args.csv {
        let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_csv(file, &results)?;
    }
    Ok(())
}

#[derive(Args, Serialize)]
pub struct ShuffleArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1.0")]
    ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "ace-ce,ctc")]
    losses: Vec<LossKind>,
    /// Number of seeds, counted up from --seed.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    train_size: usize,
    #[arg(long, default_value_t = 200)]
    eval_size: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    timesteps: usize,
    #[arg(long, default_value_t = 8)]
    max_len: usize,
    /// Feature noise. With clean one-hot features a context-free model can
    /// still read the order off the inputs, so CTC would not suffer.
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    /// Write the table as CSV instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ShuffleRow {
    loss: String,
    ratio: f64,
    seed: u64,
    final_loss: f64,
    cer: f64,
    seq_acc: f64,
    count_acc: f64,
    /// Whether the full metrics log equals, byte for byte, the log of the
    /// first ratio for the same loss and seed.
    log_matches_first_ratio: bool,
}

pub fn shuffle_exp(args: &ShuffleArgs) -> Result<()> {
    let specs: Vec<ShuffleSpec> = args.ratios.iter().map(|&r| ShuffleSpec::new(r)).collect::<Result<_, _>>()?;
    if args.seeds == 0 || args.losses.is_empty() || specs.is_empty() {
        return Err(Error::InvalidInput("need at least one seed, loss and ratio".into()).into());
    }
    let alphabet = ace_core::Alphabet::digits();
    let mut rows = Vec::new();
    for seed in args.seed..args.seed + args.seeds {
        let params = |seed, count| SequenceTaskParams {
            seed,
            count,
            timesteps: args.timesteps,
            max_len: args.max_len,
            noise_sigma: args.noise,
        };
        let train_set = gen_sequences(&params(seed, args.train_size), &alphabet)?;
        let eval_set = gen_sequences(&params(seed.wrapping_add(1000), args.eval_size), &alphabet)?;
        let model = ToyModel::new(alphabet.len(), alphabet.len(), None, 0.1, seed)?;
        for &loss in &args.losses {
            let mut first_log: Option<Vec<u8>> = None;
            for spec in &specs {
                let shuffled = apply_shuffle(&train_set, *spec, seed);
                let config = TrainConfig { epochs: args.epochs, seed, ..TrainConfig::new(loss) };
                let run = train(&config, &shuffled, Some(&eval_set), &alphabet, model.clone())?;
                let mut log = Vec::new();
                write_metrics_jsonl(&mut log, &run.log)?;
                let last = run.log.last().expect("at least one epoch");
                let matches = first_log.get_or_insert_with(|| log.clone()) == &log;
                rows.push(ShuffleRow {
                    loss: loss.to_string(),
                    ratio: spec.ratio(),
                    seed,
                    final_loss: last.loss,
                    cer: last.cer.expect("last epoch is evaluated"),
                    seq_acc: last.seq_acc.expect("last epoch is evaluated"),
                    count_acc: last.count_acc.expect("last epoch is evaluated"),
                    log_matches_first_ratio: matches,
                });
            }
        }
    }

    let out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "# {}", header("shuffle-exp", args)?)?;
    {
        let mut csv = csv::Writer::from_writer(&mut out);
        for row in &rows {
            csv.serialize(row)?;
        }
        csv.flush()?;
    }
    out.flush()?;
    drop(out);

    // Summary on stderr keeps the table machine-readable.
    for &loss in &args.losses {
        let mine: Vec<&ShuffleRow> = rows.iter().filter(|r| r.loss == loss.name()).collect();
        let identical = mine.iter().all(|r| r.log_matches_first_ratio);
        let means: Vec<String> = args
            .ratios
            .iter()
            .map(|&ratio| {
                let cers: Vec<f64> = mine.iter().filter(|r| r.ratio == ratio).map(|r| r.cer).collect();
                format!("{ratio}: {:.4}", cers.iter().sum::<f64>() / cers.len() as f64)
            })
            .collect();
        eprintln!("{loss}: logs identical across ratios: {identical}; mean CER by ratio {{{}}}", means.join(", "));
    }
    Ok(())
}
