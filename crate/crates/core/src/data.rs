//! Labeled datasets and the synthetic generators used by the experiments.
//!
//! All generators draw from [`rand_pcg::Pcg32`] (PCG-XSH-RR, 64-bit state)
//! seeded with `seed_from_u64`, so outputs are a pure function of the seed
//! and the generator spec.

use std::f64::consts::PI;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points with |f_teacher(x)| below this are redrawn.
pub const BOUNDARY_EPS: f64 = 1e-9;
/// Maximum redraws per point before generation fails.
pub const MAX_RESAMPLES: usize = 10_000;

/// Stream offset so the dataset draw never shares a stream with the teacher
/// draw when both use the same user seed.
const DATA_STREAM: u64 = 0x5851_f42d_4c95_7f2d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherNeuron {
    pub a: f64,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub n_neurons: usize,
    pub dim: usize,
    pub seed: u64,
    pub weights: Vec<TeacherNeuron>,
}

impl TeacherSpec {
    /// f_t(x) = Σ_j a_j relu(⟨w_j, x⟩), with relu'(0) = 0 like the students.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.weights
            .iter()
            .map(|n| n.a * n.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>().max(0.0))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: Option<u64>,
    pub teacher: Option<TeacherSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<f64>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(d) = inputs.first().map(Vec::len) {
            if let Some(i) = inputs.iter().position(|x| x.len() != d) {
                return Err(Error::Shape(format!("row {i} has dimension {}", inputs[i].len())));
            }
        }
        if let Some(i) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::parse(format!("row {i}"), format!("label {} is not ±1", labels[i])));
        }
        if let Some(i) = inputs.iter().position(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(Error::parse(format!("row {i}"), "non-finite input"));
        }
        Ok(Dataset {
            inputs,
            labels,
            provenance: Provenance::default(),
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.inputs.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("x_{i}")).collect();
        header.push("y".into());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for (x, y) in self.iter() {
            let mut rec: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
            rec.push(format!("{}", y as i64));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
        let ctx = path.display().to_string();
        let d = header.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
            Error::parse(&ctx, "header must be x_0,…,x_{d-1},y with d >= 1")
        })?;
        for (i, name) in header.iter().enumerate() {
            let expected = if i == d { "y".to_string() } else { format!("x_{i}") };
            if name.trim() != expected {
                return Err(Error::parse(&ctx, format!("header column {i} is '{name}', expected '{expected}'")));
            }
        }
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(format!("{ctx} row {row}"), e.to_string()))?;
            if rec.len() != d + 1 {
                return Err(Error::parse(
                    format!("{ctx} row {row}"),
                    format!("expected {} fields, got {}", d + 1, rec.len()),
                ));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(format!("{ctx} row {row}"), format!("'{s}': {e}")))
            };
            let x = (0..d).map(|j| parse(&rec[j])).collect::<Result<Vec<_>>>()?;
            let y = parse(&rec[d])?;
            if y != 1.0 && y != -1.0 {
                return Err(Error::parse(
                    format!("{ctx} row {row}"),
                    format!("label {y} is not -1 or 1"),
                ));
            }
            inputs.push(x);
            labels.push(y);
        }
        if labels.is_empty() {
            return Err(Error::parse(&ctx, "no data rows after header"));
        }
        Dataset::new(inputs, labels)
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::parse(path.display().to_string(), e.to_string())
    }
}

fn gaussian_vec(rng: &mut Pcg32, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Samples a teacher with |a_j|·‖w_j‖₂ = 1 for every neuron.
pub fn gen_teacher(seed: u64, n_neurons: usize, dim: usize) -> Result<TeacherSpec> {
    if n_neurons == 0 || dim == 0 {
        return Err(Error::Generation(format!(
            "teacher needs n_neurons >= 1 and dim >= 1, got {n_neurons} and {dim}"
        )));
    }
    let mut rng = Pcg32::seed_from_u64(seed);
    let weights = (0..n_neurons)
        .map(|_| {
            let mut w = gaussian_vec(&mut rng, dim);
            while w.iter().all(|&v| v == 0.0) {
                w = gaussian_vec(&mut rng, dim);
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            TeacherNeuron { a: sign / norm, w }
        })
        .collect();
    Ok(TeacherSpec {
        n_neurons,
        dim,
        seed,
        weights,
    })
}

/// K points uniform on the unit circle labeled by the teacher's sign.
pub fn gen_circle_dataset(teacher: &TeacherSpec, seed: u64, k: usize) -> Result<Dataset> {
    if teacher.dim != 2 {
        return Err(Error::Generation(format!(
            "circle data needs a 2-d teacher, got dim {}",
            teacher.dim
        )));
    }
    if k == 0 {
        return Err(Error::Generation("K must be at least 1".into()));
    }
    let mut rng = Pcg32::seed_from_u64(seed ^ DATA_STREAM);
    let mut inputs = Vec::with_capacity(k);
    let mut labels = Vec::with_capacity(k);
    for _ in 0..k {
        let mut attempts = 0;
        loop {
            let angle = 2.0 * PI * rng.random::<f64>();
            let x = vec![angle.cos(), angle.sin()];
            let f = teacher.eval(&x);
            if f.abs() >= BOUNDARY_EPS {
                labels.push(if f > 0.0 { 1.0 } else { -1.0 });
                inputs.push(x);
                break;
            }
            attempts += 1;
            if attempts > MAX_RESAMPLES {
                return Err(Error::Generation(
                    "teacher output vanishes on the circle; cannot label points".into(),
                ));
            }
        }
    }
    Ok(Dataset::new(inputs, labels)?.with_provenance(Provenance {
        generator: "circle".into(),
        seed: Some(seed),
        teacher: Some(teacher.clone()),
    }))
}

/// Gaussian points labeled by a random hyperplane through the origin, with
/// points closer than `margin` to the plane redrawn.
pub fn gen_linear_separable(seed: u64, dim: usize, k: usize, margin: f64) -> Result<Dataset> {
    if dim == 0 || k == 0 {
        return Err(Error::Generation("linear data needs dim >= 1 and K >= 1".into()));
    }
    let mut rng = Pcg32::seed_from_u64(seed ^ DATA_STREAM);
    let mut u = gaussian_vec(&mut rng, dim);
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    u.iter_mut().for_each(|v| *v /= norm);
    let mut inputs = Vec::with_capacity(k);
    let mut labels = Vec::with_capacity(k);
    for _ in 0..k {
        let mut attempts = 0;
        loop {
            let x = gaussian_vec(&mut rng, dim);
            let s: f64 = x.iter().zip(&u).map(|(a, b)| a * b).sum();
            if s.abs() >= margin.max(BOUNDARY_EPS) {
                labels.push(if s > 0.0 { 1.0 } else { -1.0 });
                inputs.push(x);
                break;
            }
            attempts += 1;
            if attempts > MAX_RESAMPLES {
                return Err(Error::Generation(format!(
                    "margin {margin} rejects every sample"
                )));
            }
        }
    }
    Ok(Dataset::new(inputs, labels)?.with_provenance(Provenance {
        generator: "linear".into(),
        seed: Some(seed),
        teacher: None,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Circle,
    Linear,
}

/// Generator parameters, shared by `gen-data` spec files and the `data`
/// section of run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub generator: Generator,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_teacher_neurons")]
    pub teacher_neurons: usize,
    /// Defaults to `seed`.
    #[serde(default)]
    pub teacher_seed: Option<u64>,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Minimum distance to the hyperplane for the linear generator.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_k() -> usize {
    200
}
fn default_teacher_neurons() -> usize {
    3
}
fn default_dim() -> usize {
    2
}
fn default_margin() -> f64 {
    0.1
}

impl DataSpec {
    pub fn circle(seed: u64, k: usize) -> Self {
        DataSpec {
            generator: Generator::Circle,
            seed,
            k,
            teacher_neurons: 3,
            teacher_seed: None,
            dim: 2,
            margin: default_margin(),
        }
    }

    /// The teacher behind the circle generator; `None` for linear data.
    pub fn teacher(&self) -> Result<Option<TeacherSpec>> {
        match self.generator {
            Generator::Circle => Ok(Some(gen_teacher(
                self.teacher_seed.unwrap_or(self.seed),
                self.teacher_neurons,
                2,
            )?)),
            Generator::Linear => Ok(None),
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        match self.teacher()? {
            Some(teacher) => gen_circle_dataset(&teacher, self.seed, self.k),
            None => gen_linear_separable(self.seed, self.dim, self.k, self.margin),
        }
    }
}
