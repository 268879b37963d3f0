use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use ace_core::tasks::{
    gen_grids, gen_sequences, read_dataset, write_dataset, Dataset, DatasetHeader, GridTaskParams, Layout,
    Sample, Samples, TaskKind,
};
use ace_core::train::{
    evaluate, modal_counts, predicted_counts, rmse_metrics, train as fit, write_metrics_jsonl, LossKind, ToyModel,
    TrainConfig,
};
use ace_core::{softmax, Alphabet, Error};
use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use crate::header;

/// `digits`, `alnum` or `large:N`.
pub(crate) fn parse_alphabet(s: &str) -> Result<Alphabet, Error> {
    match s {
        "digits" => Ok(Alphabet::digits()),
        "alnum" => Ok(Alphabet::alphanumeric()),
        _ => match s.strip_prefix("large:").map(str::parse::<usize>) {
            Some(Ok(n)) => Alphabet::large(n),
            _ => Err(Error::InvalidInput(format!("unknown alphabet {s:?} (digits, alnum, large:N)"))),
        },
    }
}

#[derive(Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long)]
    task: TaskKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    count: usize,
    /// digits, alnum or large:N
    #[arg(long, default_value = "digits")]
    alphabet: String,
    #[arg(long, default_value_t = 20)]
    timesteps: usize,
    #[arg(long, default_value_t = 8)]
    max_len: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 4)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    max_objects: usize,
    #[arg(long, default_value = "random")]
    layout: Layout,
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let alphabet = parse_alphabet(&args.alphabet)?;
    let dataset = match args.task {
        TaskKind::Seq1d => {
            let params = ace_core::tasks::SequenceTaskParams {
                seed: args.seed,
                count: args.count,
                timesteps: args.timesteps,
                max_len: args.max_len,
                noise_sigma: args.noise,
            };
            let samples = gen_sequences(&params, &alphabet)?;
            Dataset { header: DatasetHeader::new(args.task, alphabet, &params)?, samples: Samples::Sequences(samples) }
        }
        TaskKind::Grid2d | TaskKind::Count => {
            let params = GridTaskParams {
                seed: args.seed,
                count: args.count,
                height: args.height,
                width: args.width,
                max_objects: args.max_objects,
                layout: args.layout,
                noise_sigma: args.noise,
            };
            let samples = gen_grids(&params, &alphabet)?;
            Dataset { header: DatasetHeader::new(args.task, alphabet, &params)?, samples: Samples::Grids(samples) }
        }
    };
    write_dataset(&args.out, &dataset).with_context(|| format!("writing {}", args.out.display()))?;
    println!("{}", header("gen-data", args)?);
    println!("wrote {} samples to {}", dataset.samples.len(), args.out.display());
    Ok(())
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    /// Training set written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Held-out set evaluated after each epoch.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    loss: LossKind,
    /// Defaults to 0.1 for ace-ce and ctc, 0.01 for ace-reg.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Width of an optional tanh hidden layer.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    init_scale: f64,
    #[arg(long)]
    model_out: PathBuf,
    /// Metrics log (JSONL); stdout when omitted.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

fn load(path: &PathBuf) -> Result<Dataset> {
    read_dataset(path).with_context(|| format!("reading {}", path.display()))
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let data = load(&args.data)?;
    let eval = args.eval.as_ref().map(load).transpose()?;
    if let Some(e) = &eval {
        if e.header.alphabet != data.header.alphabet {
            return Err(Error::InvalidInput("training and evaluation alphabets differ".into()).into());
        }
    }
    let alphabet = &data.header.alphabet;
    let config = TrainConfig {
        learning_rate: args.lr.unwrap_or(args.loss.default_learning_rate()),
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        ..TrainConfig::new(args.loss)
    };
    let classes = alphabet.len();
    let model = ToyModel::new(classes, classes, args.hidden, args.init_scale, args.seed)?;
    let outcome = match (&data.samples, eval.as_ref().map(|e| &e.samples)) {
        (Samples::Sequences(s), None) => fit(&config, s, None, alphabet, model)?,
        (Samples::Sequences(s), Some(Samples::Sequences(e))) => fit(&config, s, Some(e), alphabet, model)?,
        (Samples::Grids(s), None) => fit(&config, s, None, alphabet, model)?,
        (Samples::Grids(s), Some(Samples::Grids(e))) => fit(&config, s, Some(e), alphabet, model)?,
        _ => bail!(Error::InvalidInput("training and evaluation sets hold different task kinds".into())),
    };
    outcome.model.save(&args.model_out).with_context(|| format!("writing {}", args.model_out.display()))?;

    let mut out: Box<dyn Write> = match &args.metrics_out {
        Some(path) => Box::new(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?)),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "{}", header("train", args)?)?;
    write_metrics_jsonl(&mut out, &outcome.log)?;
    out.flush()?;
    Ok(())
}

#[derive(Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Accepted for uniformity; evaluation is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct CountReport {
    m_rmse: f64,
    m_rel_rmse: f64,
    baseline_m_rmse: f64,
    baseline_m_rel_rmse: f64,
}

fn count_report<S: Sample>(model: &ToyModel, samples: &[S], alphabet: &Alphabet) -> Result<CountReport> {
    let mut predicted = Vec::with_capacity(samples.len());
    let mut truth = Vec::with_capacity(samples.len());
    for s in samples {
        let probs = softmax(&model.forward(s.features(), s.grid_shape())?);
        predicted.push(predicted_counts(&probs));
        truth.push(s.counts(alphabet)?.counts()[1..].to_vec());
    }
    let ours = rmse_metrics(&predicted, &truth)?;
    let baseline = rmse_metrics(&vec![modal_counts(&truth); truth.len()], &truth)?;
    Ok(CountReport {
        m_rmse: ours.m_rmse,
        m_rel_rmse: ours.m_rel_rmse,
        baseline_m_rmse: baseline.m_rmse,
        baseline_m_rel_rmse: baseline.m_rel_rmse,
    })
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let data = load(&args.data)?;
    let model = ToyModel::load(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let alphabet = &data.header.alphabet;
    if model.classes() != alphabet.len() {
        bail!(Error::InvalidInput(format!(
            "model predicts {} classes but the dataset alphabet has {}",
            model.classes(),
            alphabet.len()
        )));
    }
    let (report, counting) = match &data.samples {
        Samples::Sequences(s) => (evaluate(&model, s, alphabet)?, None),
        Samples::Grids(s) => (evaluate(&model, s, alphabet)?, Some(count_report(&model, s, alphabet)?)),
    };
    println!("{}", header("eval", args)?);
    println!("{}", serde_json::json!({ "recognition": report, "counting": counting }));
    Ok(())
}
