//! Timing and workspace comparison of the ACE losses against CTC.
//!
//! Each loss is timed on the same seeded probability grids (softmax excluded,
//! since it is shared). Auxiliary memory is the workspace a loss allocates
//! beyond its inputs and gradient outputs. It is reported from the analytic
//! accounting and, when [`CountingAlloc`] is the global allocator, from
//! measured peak allocations.

use std::alloc::{GlobalAlloc, Layout, System};
use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ace::{ace_ce_loss, ace_ce_workspace_bytes, ace_regression_loss, CountAnnotation, LossGrad};
use crate::ctc::{ctc_loss, ctc_workspace_bytes, CtcTarget};
use crate::error::{invalid, Error, Result};
use crate::grid::{LogitGrid, ProbGrid};
use crate::softmax::softmax;
use crate::train::LossKind;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static INSTALLED: AtomicBool = AtomicBool::new(false);

/// System allocator that tracks live and peak heap bytes.
///
/// Install with `#[global_allocator] static A: CountingAlloc = CountingAlloc;`.
pub struct CountingAlloc;

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            INSTALLED.store(true, Ordering::Relaxed);
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            INSTALLED.store(true, Ordering::Relaxed);
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            if new_size >= layout.size() {
                let grow = new_size - layout.size();
                let now = CURRENT.fetch_add(grow, Ordering::Relaxed) + grow;
                PEAK.fetch_max(now, Ordering::Relaxed);
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

/// True once [`CountingAlloc`] has served an allocation in this process.
pub fn allocation_tracking_active() -> bool {
    INSTALLED.load(Ordering::Relaxed)
}

/// Run `f` and return its result with the peak number of heap bytes it held
/// above the level at entry. Only meaningful on a single thread.
pub fn measure_peak<R>(f: impl FnOnce() -> R) -> (R, usize) {
    let base = CURRENT.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    let r = f();
    (r, PEAK.load(Ordering::Relaxed).saturating_sub(base))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub timesteps: usize,
    pub classes: usize,
    pub batch: usize,
    pub repeats: usize,
    pub seq_len: usize,
    pub warmup: usize,
    /// Spread each batch over the rayon pool.
    pub parallel: bool,
    /// Distinct input grids, cycled through the batch.
    pub pool: usize,
    pub seed: u64,
}

impl BenchSpec {
    pub fn new(timesteps: usize, classes: usize, batch: usize, seq_len: usize) -> Self {
        Self { timesteps, classes, batch, repeats: 9, seq_len, warmup: 2, parallel: false, pool: 8, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 || self.batch == 0 || self.repeats == 0 || self.seq_len == 0 || self.pool == 0 {
            return Err(invalid("timesteps, batch, repeats, seq_len and pool must be positive"));
        }
        if self.classes < 2 {
            return Err(invalid("need at least one class besides the blank"));
        }
        // Targets avoid adjacent repeats unless only one symbol exists.
        let needed = if self.classes == 2 { 2 * self.seq_len - 1 } else { self.seq_len };
        if needed > self.timesteps {
            return Err(Error::Capacity(format!(
                "a {}-label target needs {needed} timesteps, spec has {}",
                self.seq_len, self.timesteps
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub loss: String,
    #[serde(rename = "T")]
    pub timesteps: usize,
    #[serde(rename = "K")]
    pub classes: usize,
    pub batch: usize,
    /// Median wall time of one batch of loss + gradient evaluations.
    pub median_ms: f64,
    /// Analytic workspace summed over the batch.
    pub aux_bytes: usize,
    /// Measured peak workspace summed over the batch, when tracking is active.
    pub measured_aux_bytes: Option<usize>,
    /// Both losses are parameter-free.
    pub params: usize,
    pub repeats: usize,
}

/// Seeded inputs shared by every loss.
pub struct BenchInputs {
    pub probs: Vec<ProbGrid>,
    pub counts: Vec<CountAnnotation>,
    pub targets: Vec<CtcTarget>,
}

pub fn make_inputs(spec: &BenchSpec) -> Result<BenchInputs> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.pool.min(spec.batch);
    let (t, k) = (spec.timesteps, spec.classes);
    let mut inputs = BenchInputs { probs: Vec::with_capacity(n), counts: Vec::new(), targets: Vec::new() };
    for _ in 0..n {
        let logits = Array2::from_shape_simple_fn((t, k), || rng.sample::<f64, _>(StandardNormal));
        inputs.probs.push(softmax(&LogitGrid::new(logits)?));
        let mut labels = Vec::with_capacity(spec.seq_len);
        while labels.len() < spec.seq_len {
            let c = rng.gen_range(1..k);
            if k == 2 || labels.last() != Some(&c) {
                labels.push(c);
            }
        }
        inputs.counts.push(CountAnnotation::from_labels(&labels, k, t)?);
        inputs.targets.push(CtcTarget::new(labels)?);
    }
    Ok(inputs)
}

fn run_one(kind: LossKind, inputs: &BenchInputs, i: usize) -> Result<LossGrad> {
    let j = i % inputs.probs.len();
    match kind {
        LossKind::AceCe => ace_ce_loss(&inputs.probs[j], &inputs.counts[j]),
        LossKind::AceRegression => ace_regression_loss(&inputs.probs[j], &inputs.counts[j]),
        LossKind::Ctc => ctc_loss(&inputs.probs[j], &inputs.targets[j]),
    }
}

fn run_batch(kind: LossKind, inputs: &BenchInputs, spec: &BenchSpec) -> Result<f64> {
    let sink = if spec.parallel {
        (0..spec.batch)
            .into_par_iter()
            .map(|i| run_one(kind, inputs, i).map(|lg| lg.loss))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .sum()
    } else {
        let mut s = 0.0;
        for i in 0..spec.batch {
            s += run_one(kind, inputs, i)?.loss;
        }
        s
    };
    Ok(std::hint::black_box(sink))
}

/// Analytic workspace of one sample's loss evaluation.
pub fn analytic_aux_bytes(kind: LossKind, inputs: &BenchInputs, i: usize) -> usize {
    let j = i % inputs.probs.len();
    let k = inputs.probs[j].classes();
    match kind {
        LossKind::AceCe => {
            let present = inputs.counts[j].counts().iter().filter(|&&n| n > 0).count();
            ace_ce_workspace_bytes(k, present)
        }
        // Column sums plus the residual vector.
        LossKind::AceRegression => 2 * k * std::mem::size_of::<f64>(),
        LossKind::Ctc => ctc_workspace_bytes(inputs.probs[j].timesteps(), inputs.targets[j].labels().len()),
    }
}

fn output_bytes(lg: &LossGrad) -> usize {
    let size = |a: &Option<Array2<f64>>| a.as_ref().map_or(0, |a| a.len() * std::mem::size_of::<f64>());
    size(&lg.grad_logits) + size(&lg.grad_probs)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Time one loss over the spec's batch.
pub fn bench_loss(kind: LossKind, spec: &BenchSpec, inputs: &BenchInputs) -> Result<BenchResult> {
    for _ in 0..spec.warmup {
        run_batch(kind, inputs, spec)?;
    }
    let mut times = Vec::with_capacity(spec.repeats);
    for _ in 0..spec.repeats {
        let start = Instant::now();
        run_batch(kind, inputs, spec)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let aux_bytes = (0..spec.batch).map(|i| analytic_aux_bytes(kind, inputs, i)).sum();
    let measured_aux_bytes = if allocation_tracking_active() {
        let mut total = 0;
        for i in 0..spec.batch.min(inputs.probs.len()) {
            let (lg, peak) = measure_peak(|| run_one(kind, inputs, i));
            let lg = lg?;
            total += peak.saturating_sub(output_bytes(&lg)) * per_pool_slot(spec.batch, inputs.probs.len(), i);
        }
        Some(total)
    } else {
        None
    };
    Ok(BenchResult {
        loss: kind.name().to_string(),
        timesteps: spec.timesteps,
        classes: spec.classes,
        batch: spec.batch,
        median_ms: median(&mut times),
        aux_bytes,
        measured_aux_bytes,
        params: 0,
        repeats: spec.repeats,
    })
}

/// How many batch entries reuse pool slot `i`.
fn per_pool_slot(batch: usize, pool: usize, i: usize) -> usize {
    batch / pool + usize::from(i < batch % pool)
}

/// ACE-CE, ACE-regression and CTC on identical inputs.
pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchResult>> {
    let inputs = make_inputs(spec)?;
    [LossKind::AceCe, LossKind::AceRegression, LossKind::Ctc]
        .into_iter()
        .map(|k| bench_loss(k, spec, &inputs))
        .collect()
}

const COLUMNS: [&str; 8] = ["loss", "T", "K", "batch", "median_ms", "aux_bytes", "measured_aux_bytes", "params"];

fn cells(r: &BenchResult) -> [String; 8] {
    [
        r.loss.clone(),
        r.timesteps.to_string(),
        r.classes.to_string(),
        r.batch.to_string(),
        format!("{:.3}", r.median_ms),
        r.aux_bytes.to_string(),
        r.measured_aux_bytes.map_or_else(|| "-".to_string(), |b| b.to_string()),
        r.params.to_string(),
    ]
}

pub fn write_table(mut out: impl Write, results: &[BenchResult]) -> Result<()> {
    let rows: Vec<[String; 8]> = results.iter().map(cells).collect();
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([COLUMNS[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |out: &mut dyn Write, vals: &[&str]| -> std::io::Result<()> {
        let padded: Vec<String> = vals.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
        writeln!(out, "{}", padded.join("  ").trim_end())
    };
    line(&mut out, &COLUMNS)?;
    for r in &rows {
        line(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>())?;
    }
    Ok(())
}

pub fn write_csv(out: impl Write, results: &[BenchResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in results {
        w.write_record(cells(r))?;
    }
    w.flush()?;
    Ok(())
}
