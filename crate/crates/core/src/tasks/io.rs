//! Line-delimited JSON datasets.
//!
//! Line 1 is a header `{"schema", "task", "alphabet", "params"}`. Every
//! following line is one sample:
//!
//! ```text
//! {"features":[[..D..],..],"annotation":"0412","shape":[T]}
//! {"features":[[..D..],..],"annotation":"73","shape":[H,W],"placements":[[class,h,w],..]}
//! ```
//!
//! Grid features are listed in raster order (row `h * W + w`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{GridSample, Placement, SequenceSample};
use crate::alphabet::Alphabet;
use crate::error::{Error, Result};
use crate::grid::Shape2d;

pub const SCHEMA: &str = "ace-dataset/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Seq1d,
    Grid2d,
    Count,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq1d" => Ok(Self::Seq1d),
            "grid2d" => Ok(Self::Grid2d),
            "count" => Ok(Self::Count),
            other => Err(Error::InvalidInput(format!("unknown task {other:?} (seq1d, grid2d, count)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema: String,
    pub task: TaskKind,
    pub alphabet: Alphabet,
    /// Generator parameters, echoed verbatim.
    pub params: serde_json::Value,
}

impl DatasetHeader {
    pub fn new(task: TaskKind, alphabet: Alphabet, params: impl Serialize) -> Result<Self> {
        Ok(Self { schema: SCHEMA.to_string(), task, alphabet, params: serde_json::to_value(params)? })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Samples {
    Sequences(Vec<SequenceSample>),
    Grids(Vec<GridSample>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Sequences(s) => s.len(),
            Samples::Grids(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Samples,
}

#[derive(Serialize, Deserialize)]
struct Record {
    features: Vec<Vec<f64>>,
    annotation: String,
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    placements: Vec<[usize; 3]>,
}

fn rows_of(features: &Array2<f64>) -> Vec<Vec<f64>> {
    features.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix_of(rows: Vec<Vec<f64>>, line: usize) -> Result<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Format(format!("line {line}: features must be a non-empty rectangular matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!("line {line}: non-finite feature")));
    }
    Ok(Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).expect("rectangular"))
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(&mut w, dataset)?;
    w.flush()?;
    Ok(())
}

fn write_to(w: &mut impl Write, dataset: &Dataset) -> Result<()> {
    serde_json::to_writer(&mut *w, &dataset.header)?;
    writeln!(w)?;
    let mut emit = |rec: Record| -> Result<()> {
        serde_json::to_writer(&mut *w, &rec)?;
        writeln!(w)?;
        Ok(())
    };
    match &dataset.samples {
        Samples::Sequences(seqs) => {
            for s in seqs {
                emit(Record {
                    features: rows_of(&s.features),
                    annotation: s.annotation.clone(),
                    shape: vec![s.features.nrows()],
                    placements: Vec::new(),
                })?;
            }
        }
        Samples::Grids(grids) => {
            for g in grids {
                emit(Record {
                    features: rows_of(&g.features),
                    annotation: g.annotation.clone(),
                    shape: vec![g.shape.height, g.shape.width],
                    placements: g.placements.iter().map(|p| [p.class, p.h, p.w]).collect(),
                })?;
            }
        }
    }
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header_line = lines.next().ok_or_else(|| Error::Format("empty dataset file".into()))??;
    let header: DatasetHeader = serde_json::from_str(&header_line)?;
    if header.schema != SCHEMA {
        return Err(Error::Format(format!("unsupported schema {:?}", header.schema)));
    }
    let classes = header.alphabet.len();
    let mut seqs = Vec::new();
    let mut grids = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)?;
        header.alphabet.encode(&rec.annotation)?;
        let features = matrix_of(rec.features, line_no)?;
        if features.ncols() != classes {
            return Err(Error::Format(format!(
                "line {line_no}: feature dimension {} does not match {classes} classes",
                features.ncols()
            )));
        }
        match rec.shape.as_slice() {
            [t] if *t == features.nrows() && header.task == TaskKind::Seq1d => {
                seqs.push(SequenceSample { features, annotation: rec.annotation });
            }
            [h, w] if h * w == features.nrows() && header.task != TaskKind::Seq1d => {
                let shape = Shape2d::new(*h, *w)?;
                let placements: Vec<Placement> = rec
                    .placements
                    .iter()
                    .map(|&[class, h, w]| Placement { class, h, w })
                    .collect();
                if placements.iter().any(|p| p.h >= shape.height || p.w >= shape.width || p.class >= classes) {
                    return Err(Error::Format(format!("line {line_no}: placement out of bounds")));
                }
                grids.push(GridSample { shape, features, placements, annotation: rec.annotation });
            }
            other => {
                return Err(Error::Format(format!(
                    "line {line_no}: shape {other:?} does not fit {} rows of a {:?} task",
                    features.nrows(),
                    header.task
                )))
            }
        }
    }
    let samples = match header.task {
        TaskKind::Seq1d => Samples::Sequences(seqs),
        _ => Samples::Grids(grids),
    };
    Ok(Dataset { header, samples })
}
