use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{LogitGrid, Shape2d};

pub const CHECKPOINT_FORMAT: &str = "ace-toy-model/1";

/// Optional tanh layer between features and logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Hidden {
    /// `D x H`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-timestep classifier: `logits = φ(x) W + b`, with `φ` either the
/// identity or `tanh(x W1 + b1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub hidden: Option<Hidden>,
    /// `D x K` (or `H x K` with a hidden layer).
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter gradients, laid out like [`ToyModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrad {
    pub hidden: Option<Hidden>,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Activations kept from the forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub logits: LogitGrid,
    hidden: Option<Array2<f64>>,
}

impl ToyModel {
    /// All-zero linear model; its predictions are uniform.
    pub fn zeros(input_dim: usize, classes: usize) -> Self {
        Self { hidden: None, weights: Array2::zeros((input_dim, classes)), bias: Array1::zeros(classes) }
    }

    /// Gaussian initialization with standard deviation `scale / sqrt(fan_in)`.
    pub fn new(input_dim: usize, classes: usize, hidden: Option<usize>, scale: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || classes < 2 || hidden == Some(0) {
            return Err(invalid(format!(
                "model needs D >= 1, K >= 2 and a non-empty hidden layer; got D={input_dim}, K={classes}, hidden={hidden:?}"
            )));
        }
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(invalid(format!("init scale {scale} must be finite and non-negative")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            let normal = Normal::new(0.0, scale / (rows as f64).sqrt()).expect("finite std");
            Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
        };
        let (hidden, top_in) = match hidden {
            Some(h) => (Some(Hidden { weights: draw(input_dim, h), bias: Array1::zeros(h) }), h),
            None => (None, input_dim),
        };
        let weights = draw(top_in, classes);
        Ok(Self { hidden, weights, bias: Array1::zeros(classes) })
    }

    pub fn input_dim(&self) -> usize {
        match &self.hidden {
            Some(h) => h.weights.nrows(),
            None => self.weights.nrows(),
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.ncols()
    }

    pub fn param_count(&self) -> usize {
        let top = self.weights.len() + self.bias.len();
        top + self.hidden.as_ref().map_or(0, |h| h.weights.len() + h.bias.len())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    pub fn forward(&self, features: &Array2<f64>, shape: Option<Shape2d>) -> Result<LogitGrid> {
        Ok(self.forward_cached(features, shape)?.logits)
    }

    pub fn forward_cached(&self, features: &Array2<f64>, shape: Option<Shape2d>) -> Result<ForwardCache> {
        if features.ncols() != self.input_dim() {
            return Err(invalid(format!(
                "features have dimension {} but the model expects {}",
                features.ncols(),
                self.input_dim()
            )));
        }
        let hidden = self.hidden.as_ref().map(|h| {
            let mut z = features.dot(&h.weights) + &h.bias;
            z.mapv_inplace(f64::tanh);
            z
        });
        let top_in = hidden.as_ref().unwrap_or(features);
        let logits = top_in.dot(&self.weights) + &self.bias;
        Ok(ForwardCache { logits: LogitGrid::with_shape(logits, shape)?, hidden })
    }

    /// Backpropagate `∂L/∂logits` to the parameters.
    pub fn backward(&self, features: &Array2<f64>, cache: &ForwardCache, grad_logits: &Array2<f64>) -> Result<ModelGrad> {
        if grad_logits.dim() != cache.logits.values().dim() {
            return Err(invalid("logit gradient does not match the forward pass"));
        }
        let top_in = cache.hidden.as_ref().unwrap_or(features);
        let weights = top_in.t().dot(grad_logits);
        let bias = grad_logits.sum_axis(Axis(0));
        let hidden = match (&self.hidden, &cache.hidden) {
            (Some(_), Some(act)) => {
                let mut dz = grad_logits.dot(&self.weights.t());
                dz.zip_mut_with(act, |g, &a| *g *= 1.0 - a * a);
                Some(Hidden { weights: features.t().dot(&dz), bias: dz.sum_axis(Axis(0)) })
            }
            _ => None,
        };
        Ok(ModelGrad { hidden, weights, bias })
    }

    /// `θ ← θ - lr · g`.
    pub fn sgd_step(&mut self, grad: &ModelGrad, learning_rate: f64) {
        self.weights.scaled_add(-learning_rate, &grad.weights);
        self.bias.scaled_add(-learning_rate, &grad.bias);
        if let (Some(h), Some(gh)) = (self.hidden.as_mut(), grad.hidden.as_ref()) {
            h.weights.scaled_add(-learning_rate, &gh.weights);
            h.bias.scaled_add(-learning_rate, &gh.bias);
        }
    }

    /// Parameters flattened as `[W1, b1,] W, b`, each row-major.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        if let Some(h) = &self.hidden {
            out.extend(h.weights.iter());
            out.extend(h.bias.iter());
        }
        out.extend(self.weights.iter());
        out.extend(self.bias.iter());
        out
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(invalid(format!("expected {} parameters, got {}", self.param_count(), values.len())));
        }
        let mut it = values.iter().copied();
        let mut fill = |dst: &mut dyn Iterator<Item = &mut f64>| {
            for d in dst {
                *d = it.next().expect("length checked");
            }
        };
        if let Some(h) = self.hidden.as_mut() {
            fill(&mut h.weights.iter_mut());
            fill(&mut h.bias.iter_mut());
        }
        fill(&mut self.weights.iter_mut());
        fill(&mut self.bias.iter_mut());
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &Checkpoint::from(self))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(file)?;
        ck.into_model()
    }
}

impl ModelGrad {
    pub fn zeros_like(model: &ToyModel) -> Self {
        Self {
            hidden: model.hidden.as_ref().map(|h| Hidden {
                weights: Array2::zeros(h.weights.raw_dim()),
                bias: Array1::zeros(h.bias.raw_dim()),
            }),
            weights: Array2::zeros(model.weights.raw_dim()),
            bias: Array1::zeros(model.bias.raw_dim()),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrad) {
        self.weights += &other.weights;
        self.bias += &other.bias;
        if let (Some(h), Some(o)) = (self.hidden.as_mut(), other.hidden.as_ref()) {
            h.weights += &o.weights;
            h.bias += &o.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights *= factor;
        self.bias *= factor;
        if let Some(h) = self.hidden.as_mut() {
            h.weights *= factor;
            h.bias *= factor;
        }
    }

    /// Same order as [`ToyModel::params`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(h) = &self.hidden {
            out.extend(h.weights.iter());
            out.extend(h.bias.iter());
        }
        out.extend(self.weights.iter());
        out.extend(self.bias.iter());
        out
    }
}

/// Central differences of `loss` over every model parameter.
pub fn numeric_param_gradient(model: &ToyModel, h: f64, loss: impl Fn(&ToyModel) -> Result<f64>) -> Result<Vec<f64>> {
    let base = model.params();
    let mut work = model.clone();
    let mut probe = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        work.set_params(&probe)?;
        let plus = loss(&work)?;
        probe[i] = base[i] - h;
        work.set_params(&probe)?;
        let minus = loss(&work)?;
        probe[i] = base[i];
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct LayerDump {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

/// On-disk checkpoint: `{"format", "hidden": null | layer, "output": layer}`
/// with weight matrices as arrays of rows.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    hidden: Option<LayerDump>,
    output: LayerDump,
}

impl LayerDump {
    fn new(weights: &Array2<f64>, bias: &Array1<f64>) -> Self {
        Self { weights: weights.rows().into_iter().map(|r| r.to_vec()).collect(), bias: bias.to_vec() }
    }

    fn into_arrays(self) -> Result<(Array2<f64>, Array1<f64>)> {
        let rows = self.weights.len();
        let cols = self.weights.first().map_or(0, Vec::len);
        if rows == 0 || self.weights.iter().any(|r| r.len() != cols) || self.bias.len() != cols {
            return Err(Error::Format("checkpoint layer is not a consistent matrix".into()));
        }
        let w = Array2::from_shape_vec((rows, cols), self.weights.into_iter().flatten().collect()).expect("rectangular");
        Ok((w, Array1::from(self.bias)))
    }
}

impl From<&ToyModel> for Checkpoint {
    fn from(m: &ToyModel) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            hidden: m.hidden.as_ref().map(|h| LayerDump::new(&h.weights, &h.bias)),
            output: LayerDump::new(&m.weights, &m.bias),
        }
    }
}

impl Checkpoint {
    fn into_model(self) -> Result<ToyModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format {:?}", self.format)));
        }
        let hidden = match self.hidden {
            Some(layer) => {
                let (weights, bias) = layer.into_arrays()?;
                Some(Hidden { weights, bias })
            }
            None => None,
        };
        let (weights, bias) = self.output.into_arrays()?;
        if let Some(h) = &hidden {
            if h.weights.ncols() != weights.nrows() {
                return Err(Error::Format("hidden and output layers do not chain".into()));
            }
        }
        let model = ToyModel { hidden, weights, bias };
        if !model.is_finite() {
            return Err(Error::Format("checkpoint holds non-finite parameters".into()));
        }
        Ok(model)
    }
}
