//! Deterministic synthetic tasks: teacher-network regression, the two-spiral
//! classification problem, and a CSV loader. Generators are pure functions
//! of their seed and reproduce bit-identically.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{LabError, Result};
use crate::model::{Activation, InitScheme, Model, ModelSpec};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// [N, d_out] regression targets.
    Regression(Tensor),
    /// Class indices, one per row.
    Classes(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(t) => t.rows(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Regression(t) => Targets::Regression(t.gather_rows(indices)),
            Targets::Classes(c) => Targets::Classes(indices.iter().map(|&i| c[i]).collect()),
        }
    }

    /// Output dimensionality the model head must produce.
    pub fn d_out(&self) -> usize {
        match self {
            Targets::Regression(t) => t.cols(),
            Targets::Classes(c) => c.iter().copied().max().map_or(2, |m| (m + 1).max(2)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Targets,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_in(&self) -> usize {
        self.inputs.cols()
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Targets) {
        (self.inputs.gather_rows(indices), self.targets.gather(indices))
    }
}

/// Frozen random teacher used to label regression inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSpec {
    pub depth: usize,
    pub width: usize,
    pub d_out: usize,
    /// Weight init gain; 0.0 yields the all-zero teacher.
    pub gain: f64,
}

impl Default for TeacherSpec {
    fn default() -> Self {
        TeacherSpec {
            depth: 2,
            width: 16,
            d_out: 4,
            // Variance-preserving uniform init keeps teacher outputs healthy.
            gain: 1.7320508075688772,
        }
    }
}

/// Standard-normal inputs labeled by a frozen random residual tanh teacher.
/// The teacher is never trained.
pub fn gen_teacher_regression(
    seed: u64,
    n: usize,
    d_in: usize,
    teacher: &TeacherSpec,
) -> Result<Dataset> {
    if n == 0 {
        return Err(LabError::InvalidArgument("dataset needs n >= 1".into()));
    }
    let root = Rng::new(seed);
    let mut input_rng = root.derive("inputs", 0);
    let inputs = Tensor::normal(&[n, d_in], 1.0, &mut input_rng);

    let teacher_spec = ModelSpec {
        depth: teacher.depth,
        width: teacher.width,
        activation: Activation::Tanh,
        residual: true,
        layerscale: None,
        normalization: false,
        d_in,
        d_out: teacher.d_out,
        init: InitScheme::UniformScaled,
        init_gain: teacher.gain,
        bias_init: 0.0,
        head_gain: 1.0,
    };
    let teacher_model = Model::build(&teacher_spec, root.derive("teacher", 0).next_u64())?;
    let targets = teacher_model.eval(&inputs)?;
    Ok(Dataset {
        inputs,
        targets: Targets::Regression(targets),
        seed,
    })
}

/// Two interleaved spirals, one per class, with exactly n/2 points each.
/// Coordinates are standardized to zero mean and unit variance; `noise` is
/// the std of Gaussian jitter added before standardization.
pub fn gen_two_spirals(seed: u64, n: usize, noise: f64) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(LabError::InvalidArgument(format!(
            "two spirals need an even n >= 2, got {n}"
        )));
    }
    let half = n / 2;
    let root = Rng::new(seed);
    let mut noise_rng = root.derive("noise", 0);
    let mut coords = Vec::with_capacity(n * 2);
    let mut classes = Vec::with_capacity(n);
    for i in 0..half {
        let t = i as f64 / half as f64;
        let r = 0.25 + 0.75 * t;
        let angle = t * 3.5 * std::f64::consts::PI;
        let (x, y) = (r * angle.cos(), r * angle.sin());
        for (sign, class) in [(1.0, 0usize), (-1.0, 1usize)] {
            coords.push(sign * x + noise * noise_rng.normal());
            coords.push(sign * y + noise * noise_rng.normal());
            classes.push(class);
        }
    }

    // Standardize each coordinate.
    for j in 0..2 {
        let mut mean = 0.0;
        for i in 0..n {
            mean += coords[i * 2 + j];
        }
        mean /= n as f64;
        let mut var = 0.0;
        for i in 0..n {
            let d = coords[i * 2 + j] - mean;
            var += d * d;
        }
        var /= n as f64;
        let std = var.sqrt().max(1e-12);
        for i in 0..n {
            coords[i * 2 + j] = (coords[i * 2 + j] - mean) / std;
        }
    }

    // Deterministic shuffle so minibatches mix both classes.
    let mut order: Vec<usize> = (0..n).collect();
    root.derive("order", 0).shuffle(&mut order);
    let mut inputs = Vec::with_capacity(n * 2);
    let mut shuffled_classes = Vec::with_capacity(n);
    for &i in &order {
        inputs.push(coords[i * 2]);
        inputs.push(coords[i * 2 + 1]);
        shuffled_classes.push(classes[i]);
    }

    Ok(Dataset {
        inputs: Tensor::new(vec![n, 2], inputs)?,
        targets: Targets::Classes(shuffled_classes),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Regression,
    Classification,
}

/// Write a dataset as comma-separated rows, features first, target last.
/// Floats use the shortest round-trip representation, so a reload is
/// bit-exact. Only single-target regression fits the format.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let d = ds.d_in();
    for i in 0..ds.len() {
        for j in 0..d {
            let _ = write!(out, "{}", ds.inputs.row(i)[j]);
            out.push(',');
        }
        match &ds.targets {
            Targets::Regression(t) => {
                if t.cols() != 1 {
                    return Err(LabError::Data(format!(
                        "csv holds a single target column, dataset has d_out={}",
                        t.cols()
                    )));
                }
                let _ = write!(out, "{}", t.row(i)[0]);
            }
            Targets::Classes(c) => {
                let _ = write!(out, "{}", c[i]);
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse a CSV dataset: `d_in` feature columns plus one target column.
/// Row order is preserved and no normalization is applied.
pub fn load_csv(path: &Path, d_in: usize, kind: TargetKind, skip_header: bool) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut inputs = Vec::new();
    let mut reg_targets = Vec::new();
    let mut classes = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if skip_header && lineno == 0 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let row_no = lineno + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d_in + 1 {
            return Err(LabError::Data(format!(
                "row {row_no}: expected {} columns, found {}",
                d_in + 1,
                fields.len()
            )));
        }
        for f in &fields[..d_in] {
            let v: f64 = f.trim().parse().map_err(|_| {
                LabError::Data(format!("row {row_no}: malformed number '{f}'"))
            })?;
            inputs.push(v);
        }
        let target = fields[d_in].trim();
        match kind {
            TargetKind::Regression => {
                let v: f64 = target.parse().map_err(|_| {
                    LabError::Data(format!("row {row_no}: malformed target '{target}'"))
                })?;
                reg_targets.push(v);
            }
            TargetKind::Classification => {
                let v: usize = target.parse().map_err(|_| {
                    LabError::Data(format!(
                        "row {row_no}: class index must be a non-negative integer, got '{target}'"
                    ))
                })?;
                classes.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(LabError::Data("no rows".into()));
    }
    let inputs = Tensor::new(vec![rows, d_in], inputs)?;
    let targets = match kind {
        TargetKind::Regression => Targets::Regression(Tensor::new(vec![rows, 1], reg_targets)?),
        TargetKind::Classification => Targets::Classes(classes),
    };
    Ok(Dataset {
        inputs,
        targets,
        seed: 0,
    })
}

/// Fraction of rows whose argmax logit matches the class label.
pub fn classification_accuracy(model: &Model, ds: &Dataset) -> Result<f64> {
    let Targets::Classes(classes) = &ds.targets else {
        return Err(LabError::InvalidArgument(
            "accuracy needs a classification dataset".into(),
        ));
    };
    let logits = model.eval(&ds.inputs)?;
    let mut hits = 0usize;
    for (i, &label) in classes.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0usize;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / classes.len() as f64)
}
