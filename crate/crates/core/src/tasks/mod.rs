//! Seeded synthetic recognition tasks.
//!
//! Features stand in for an encoder's output: each timestep (or grid cell)
//! carries the one-hot prototype of its class in `D = K` dimensions, with
//! optional Gaussian noise. Unoccupied positions carry the blank prototype.
//! Every generator is a pure function of its parameters and seed.

mod io;

pub use io::{read_dataset, write_dataset, Dataset, DatasetHeader, Samples, TaskKind, SCHEMA};

use ndarray::Array2;
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ace::{counts_from_sequence, CountAnnotation};
use crate::alphabet::{Alphabet, BLANK};
use crate::error::{invalid, Error, Result};
use crate::grid::Shape2d;

/// Anything the trainer can consume: per-position features plus an annotation.
pub trait Sample: Clone + Send + Sync {
    /// `T x D` features, one row per timestep (raster order for grids).
    fn features(&self) -> &Array2<f64>;
    fn annotation(&self) -> &str;
    /// 2D provenance of the rows, if any.
    fn grid_shape(&self) -> Option<Shape2d>;
    fn with_annotation(&self, annotation: String) -> Self;

    fn timesteps(&self) -> usize {
        self.features().nrows()
    }

    fn counts(&self, alphabet: &Alphabet) -> Result<CountAnnotation> {
        counts_from_sequence(self.annotation(), alphabet, self.timesteps())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub features: Array2<f64>,
    pub annotation: String,
}

impl Sample for SequenceSample {
    fn features(&self) -> &Array2<f64> {
        &self.features
    }

    fn annotation(&self) -> &str {
        &self.annotation
    }

    fn grid_shape(&self) -> Option<Shape2d> {
        None
    }

    fn with_annotation(&self, annotation: String) -> Self {
        Self { features: self.features.clone(), annotation }
    }
}

/// A class occupying grid cell `(h, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub class: usize,
    pub h: usize,
    pub w: usize,
}

/// A 2D scene. The annotation lists the placed symbols in column-major order
/// (columns left to right, each top to bottom), matching [`crate::flatten_2d`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridSample {
    pub shape: Shape2d,
    pub features: Array2<f64>,
    pub placements: Vec<Placement>,
    pub annotation: String,
}

impl GridSample {
    /// Per-class object counts, blank included (`H·W - objects`).
    pub fn placement_counts(&self, classes: usize) -> Result<CountAnnotation> {
        let labels: Vec<usize> = self.placements.iter().map(|p| p.class).collect();
        CountAnnotation::from_labels(&labels, classes, self.shape.cells())
    }
}

impl Sample for GridSample {
    fn features(&self) -> &Array2<f64> {
        &self.features
    }

    fn annotation(&self) -> &str {
        &self.annotation
    }

    fn grid_shape(&self) -> Option<Shape2d> {
        Some(self.shape)
    }

    fn with_annotation(&self, annotation: String) -> Self {
        Self { annotation, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceTaskParams {
    pub seed: u64,
    pub count: usize,
    pub timesteps: usize,
    pub max_len: usize,
    pub noise_sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Objects fill consecutive cells in reading order, so every row holds
    /// one contiguous run.
    Lines,
    /// Objects follow a contiguous stretch of an anti-diagonal sweep.
    Curve,
    /// Objects land on uniformly random distinct cells.
    Random,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lines" => Ok(Self::Lines),
            "curve" => Ok(Self::Curve),
            "random" => Ok(Self::Random),
            other => Err(invalid(format!("unknown layout {other:?} (lines, curve, random)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridTaskParams {
    pub seed: u64,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub max_objects: usize,
    pub layout: Layout,
    pub noise_sigma: f64,
}

fn noise(sigma: f64) -> Result<Option<Normal<f64>>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("noise sigma {sigma} must be finite and >= 0")));
    }
    Ok((sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("valid sigma")))
}

/// One-hot prototype rows for `classes`, plus noise.
fn prototype_features(
    classes: &[usize],
    dim: usize,
    noise: Option<&Normal<f64>>,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let mut f = Array2::zeros((classes.len(), dim));
    for (t, &c) in classes.iter().enumerate() {
        f[[t, c]] = 1.0;
    }
    if let Some(n) = noise {
        f.mapv_inplace(|v| v + n.sample(rng));
    }
    f
}

/// Random 1D recognition samples.
///
/// Each sample has `1..=max_len` symbols placed at increasing timesteps. Two
/// equal neighbouring symbols always have a blank timestep between them, so a
/// per-timestep classifier can emit the sequence under greedy decoding.
pub fn gen_sequences(params: &SequenceTaskParams, alphabet: &Alphabet) -> Result<Vec<SequenceSample>> {
    let t_len = params.timesteps;
    if t_len == 0 {
        return Err(invalid("timesteps must be positive"));
    }
    if params.max_len > t_len {
        return Err(Error::Capacity(format!(
            "max_len {} exceeds {t_len} timesteps",
            params.max_len
        )));
    }
    let noise = noise(params.noise_sigma)?;
    let symbols = alphabet.len() - 1;
    // A single-symbol alphabet forces a blank between every pair.
    let max_len = if symbols == 1 { params.max_len.min(t_len.div_ceil(2)) } else { params.max_len };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Vec::with_capacity(params.count);
    for _ in 0..params.count {
        let len = if max_len == 0 { 0 } else { rng.gen_range(1..=max_len) };
        let mut labels: Vec<usize> = Vec::with_capacity(len);
        let mut repeats = 0;
        for i in 0..len {
            let mut c = rng.gen_range(1..=symbols);
            if i > 0 && c == labels[i - 1] {
                if len + repeats < t_len {
                    repeats += 1;
                } else {
                    // No room for another separator: pick a different symbol.
                    c = 1 + (c - 1 + rng.gen_range(1..symbols)) % symbols;
                }
            }
            labels.push(c);
        }
        let free = t_len - repeats;
        let mut slots = index::sample(&mut rng, free, len).into_vec();
        slots.sort_unstable();
        let mut frame = vec![BLANK; t_len];
        let mut shift = 0;
        for (i, (&slot, &c)) in slots.iter().zip(&labels).enumerate() {
            if i > 0 && labels[i - 1] == c {
                shift += 1;
            }
            frame[slot + shift] = c;
        }
        let features = prototype_features(&frame, alphabet.len(), noise.as_ref(), &mut rng);
        out.push(SequenceSample { features, annotation: alphabet.decode(&labels) });
    }
    Ok(out)
}

fn layout_cells(layout: Layout, shape: Shape2d, n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let cells = shape.cells();
    let raster = |i: usize| (i / shape.width, i % shape.width);
    match layout {
        Layout::Lines => {
            let start = rng.gen_range(0..=cells - n);
            (start..start + n).map(raster).collect()
        }
        Layout::Curve => {
            let mut sweep: Vec<(usize, usize)> = (0..cells).map(raster).collect();
            sweep.sort_by_key(|&(h, w)| (h + w, h));
            let start = rng.gen_range(0..=cells - n);
            sweep[start..start + n].to_vec()
        }
        Layout::Random => index::sample(rng, cells, n).into_iter().map(raster).collect(),
    }
}

/// Random 2D scenes with non-overlapping objects.
///
/// Each scene holds `0..=max_objects` objects of uniformly random classes.
pub fn gen_grids(params: &GridTaskParams, alphabet: &Alphabet) -> Result<Vec<GridSample>> {
    let shape = Shape2d::new(params.height, params.width)?;
    if params.max_objects > shape.cells() {
        return Err(Error::Capacity(format!(
            "{} objects do not fit on a {}x{} grid",
            params.max_objects, params.height, params.width
        )));
    }
    let noise = noise(params.noise_sigma)?;
    let symbols = alphabet.len() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Vec::with_capacity(params.count);
    for _ in 0..params.count {
        let n = rng.gen_range(0..=params.max_objects);
        let mut placements: Vec<Placement> = layout_cells(params.layout, shape, n, &mut rng)
            .into_iter()
            .map(|(h, w)| Placement { class: rng.gen_range(1..=symbols), h, w })
            .collect();
        placements.sort_by_key(|p| (p.w, p.h));
        let mut frame = vec![BLANK; shape.cells()];
        for p in &placements {
            frame[p.h * shape.width + p.w] = p.class;
        }
        let features = prototype_features(&frame, alphabet.len(), noise.as_ref(), &mut rng);
        let labels: Vec<usize> = placements.iter().map(|p| p.class).collect();
        out.push(GridSample { shape, features, placements, annotation: alphabet.decode(&labels) });
    }
    Ok(out)
}

/// Fraction of samples whose annotation order gets scrambled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffleSpec {
    ratio: f64,
}

impl ShuffleSpec {
    pub fn new(ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(invalid(format!("shuffle ratio {ratio} outside [0, 1]")));
        }
        Ok(Self { ratio })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }
}

/// Permute the annotation of `round(ratio · N)` seeded-random samples.
/// Features are untouched, so count annotations are unchanged.
pub fn apply_shuffle<S: Sample>(dataset: &[S], spec: ShuffleSpec, seed: u64) -> Vec<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dataset.len();
    let picked = (spec.ratio * n as f64).round() as usize;
    let mut chosen = vec![false; n];
    for i in index::sample(&mut rng, n, picked.min(n)) {
        chosen[i] = true;
    }
    dataset
        .iter()
        .zip(chosen)
        .map(|(s, pick)| {
            if pick {
                let mut chars: Vec<char> = s.annotation().chars().collect();
                chars.shuffle(&mut rng);
                s.with_annotation(chars.into_iter().collect())
            } else {
                s.clone()
            }
        })
        .collect()
}
