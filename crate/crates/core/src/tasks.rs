//! Seeded generators for the four long-range dependency problems, and the
//! success test applied to a network's outputs.
//!
//! Definitions (window positions are 0-based step indices, windows are
//! inclusive `[⌊aT⌋, ⌊bT⌋]`; a window whose start would not lie after the
//! previous window's end is pushed forward so relevant positions never
//! collide):
//!
//! * Temporal order: alphabet `{a, b, c, d, X, Y}` (indices 0..6). Distractors
//!   uniform over `{a, b, c, d}`. Relevant symbols `∈ {X, Y}` at one position
//!   in `[0.1T, 0.2T]` and one in `[0.5T, 0.6T]`. Class `2·s₁ + s₂` with
//!   `X = 0, Y = 1`, i.e. `XX, XY, YX, YY → 0, 1, 2, 3`.
//! * 3-bit temporal order: as above with windows `[0.1T, 0.2T]`,
//!   `[0.3T, 0.4T]`, `[0.6T, 0.7T]` and class `4·s₁ + 2·s₂ + s₃`.
//! * Adding: two channels; channel 0 uniform in `[0, 1)`, channel 1 a marker
//!   that is 1 at exactly one position in `[0, T/2)` and one in `[T/2, T)`.
//!   Target `(v₁ + v₂) / 2`.
//! * Random permutation: alphabet of 100 symbols. Step 0 carries symbol 0 or
//!   1, which is the target class; the other steps are uniform over 2..100.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TemporalOrder,
    TemporalOrder3Bit,
    Adding,
    RandomPermutation,
    MnistSequence,
    MnistFlat,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::TemporalOrder => "temporal_order",
            TaskKind::TemporalOrder3Bit => "temporal_order_3bit",
            TaskKind::Adding => "adding",
            TaskKind::RandomPermutation => "random_permutation",
            TaskKind::MnistSequence => "mnist_sequence",
            TaskKind::MnistFlat => "mnist_flat",
        }
    }

    /// Width of one input vector.
    pub fn input_size(self) -> usize {
        match self {
            TaskKind::TemporalOrder | TaskKind::TemporalOrder3Bit => TEMPORAL_ALPHABET,
            TaskKind::Adding => 2,
            TaskKind::RandomPermutation => PERMUTATION_ALPHABET,
            TaskKind::MnistSequence => 1,
            TaskKind::MnistFlat => 784,
        }
    }

    /// Number of output units.
    pub fn output_size(self) -> usize {
        match self {
            TaskKind::TemporalOrder => 4,
            TaskKind::TemporalOrder3Bit => 8,
            TaskKind::Adding => 1,
            TaskKind::RandomPermutation => 2,
            TaskKind::MnistSequence | TaskKind::MnistFlat => 10,
        }
    }

    pub fn is_regression(self) -> bool {
        self == TaskKind::Adding
    }

    pub fn is_synthetic(self) -> bool {
        !matches!(self, TaskKind::MnistSequence | TaskKind::MnistFlat)
    }

    pub fn min_len(self) -> usize {
        match self {
            TaskKind::TemporalOrder => 4,
            TaskKind::TemporalOrder3Bit => 6,
            TaskKind::Adding | TaskKind::RandomPermutation => 2,
            TaskKind::MnistSequence => 784,
            TaskKind::MnistFlat => 1,
        }
    }

    /// Relevant-symbol windows as fractions of `T`.
    pub fn windows(self) -> &'static [(f64, f64)] {
        match self {
            TaskKind::TemporalOrder => &[(0.1, 0.2), (0.5, 0.6)],
            TaskKind::TemporalOrder3Bit => &[(0.1, 0.2), (0.3, 0.4), (0.6, 0.7)],
            TaskKind::Adding => &[(0.0, 0.5), (0.5, 1.0)],
            _ => &[],
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const TEMPORAL_ALPHABET: usize = 6;
pub const SYMBOL_X: usize = 4;
pub const SYMBOL_Y: usize = 5;
pub const PERMUTATION_ALPHABET: usize = 100;

/// One mini-batch: `inputs[t]` is `batch x features`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch {
    pub kind: TaskKind,
    pub inputs: Vec<Matrix>,
    /// One-hot `batch x classes`, or `batch x 1` for regression.
    pub targets: Matrix,
}

impl TaskBatch {
    pub fn seq_len(&self) -> usize {
        self.inputs.len()
    }

    pub fn batch_size(&self) -> usize {
        self.targets.rows()
    }
}

/// Inclusive step ranges of the relevant positions for a sequence of
/// length `t`, after collision avoidance.
pub fn relevant_windows(kind: TaskKind, t: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &(a, b) in kind.windows() {
        let mut lo = (a * t as f64).floor() as usize;
        if let Some(&(_, prev_hi)) = out.last() {
            lo = lo.max(prev_hi + 1);
        }
        let hi = ((b * t as f64).floor() as usize).max(lo).min(t - 1);
        out.push((lo, hi));
    }
    out
}

fn check_len(kind: TaskKind, t: usize, batch: usize) -> Result<()> {
    if t < kind.min_len() {
        return Err(Error::param(format!("{kind} needs T >= {} (got {t})", kind.min_len())));
    }
    if batch == 0 {
        return Err(Error::param("batch size must be positive"));
    }
    Ok(())
}

fn one_hot_sequence(symbols: &[Vec<usize>], alphabet: usize) -> Vec<Matrix> {
    // symbols[b][t] -> inputs[t] (batch x alphabet)
    let batch = symbols.len();
    let t = symbols.first().map_or(0, Vec::len);
    (0..t)
        .map(|step| {
            let mut m = Matrix::zeros(batch, alphabet);
            for (b, seq) in symbols.iter().enumerate() {
                m[(b, seq[step])] = 1.0;
            }
            m
        })
        .collect()
}

fn one_hot_targets(classes: &[usize], n: usize) -> Matrix {
    let mut m = Matrix::zeros(classes.len(), n);
    for (b, &c) in classes.iter().enumerate() {
        m[(b, c)] = 1.0;
    }
    m
}

fn temporal(kind: TaskKind, t: usize, batch: usize, rng: &mut RngStream) -> Result<TaskBatch> {
    check_len(kind, t, batch)?;
    let windows = relevant_windows(kind, t);
    let mut symbols = Vec::with_capacity(batch);
    let mut classes = Vec::with_capacity(batch);
    for _ in 0..batch {
        let mut seq: Vec<usize> = (0..t).map(|_| rng.below(4)).collect();
        let mut class = 0;
        for &(lo, hi) in &windows {
            let pos = rng.between(lo, hi);
            let bit = rng.coin() as usize;
            seq[pos] = SYMBOL_X + bit;
            class = 2 * class + bit;
        }
        symbols.push(seq);
        classes.push(class);
    }
    Ok(TaskBatch {
        kind,
        inputs: one_hot_sequence(&symbols, TEMPORAL_ALPHABET),
        targets: one_hot_targets(&classes, kind.output_size()),
    })
}

pub fn gen_temporal_order(t: usize, batch: usize, rng: &mut RngStream) -> Result<TaskBatch> {
    temporal(TaskKind::TemporalOrder, t, batch, rng)
}

pub fn gen_temporal_order_3bit(t: usize, batch: usize, rng: &mut RngStream) -> Result<TaskBatch> {
    temporal(TaskKind::TemporalOrder3Bit, t, batch, rng)
}

pub fn gen_adding(t: usize, batch: usize, rng: &mut RngStream) -> Result<TaskBatch> {
    check_len(TaskKind::Adding, t, batch)?;
    let half = t / 2;
    let mut inputs = vec![Matrix::zeros(batch, 2); t];
    let mut targets = Matrix::zeros(batch, 1);
    for b in 0..batch {
        for x in inputs.iter_mut() {
            x[(b, 0)] = rng.uniform();
        }
        let first = rng.below(half);
        let second = half + rng.below(t - half);
        inputs[first][(b, 1)] = 1.0;
        inputs[second][(b, 1)] = 1.0;
        targets[(b, 0)] = (inputs[first][(b, 0)] + inputs[second][(b, 0)]) / 2.0;
    }
    Ok(TaskBatch {
        kind: TaskKind::Adding,
        inputs,
        targets,
    })
}

pub fn gen_random_permutation(t: usize, batch: usize, rng: &mut RngStream) -> Result<TaskBatch> {
    check_len(TaskKind::RandomPermutation, t, batch)?;
    let mut symbols = Vec::with_capacity(batch);
    let mut classes = Vec::with_capacity(batch);
    for _ in 0..batch {
        let first = rng.coin() as usize;
        let mut seq = Vec::with_capacity(t);
        seq.push(first);
        seq.extend((1..t).map(|_| 2 + rng.below(PERMUTATION_ALPHABET - 2)));
        symbols.push(seq);
        classes.push(first);
    }
    Ok(TaskBatch {
        kind: TaskKind::RandomPermutation,
        inputs: one_hot_sequence(&symbols, PERMUTATION_ALPHABET),
        targets: one_hot_targets(&classes, 2),
    })
}

/// Dispatches to the generator for a synthetic `kind`.
pub fn generate(kind: TaskKind, t: usize, batch: usize, rng: &mut RngStream) -> Result<TaskBatch> {
    match kind {
        TaskKind::TemporalOrder => gen_temporal_order(t, batch, rng),
        TaskKind::TemporalOrder3Bit => gen_temporal_order_3bit(t, batch, rng),
        TaskKind::Adding => gen_adding(t, batch, rng),
        TaskKind::RandomPermutation => gen_random_permutation(t, batch, rng),
        other => Err(Error::param(format!("{other} is not a synthetic task"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuccessCriterion {
    /// Solved when argmax accuracy reaches `threshold`.
    Classification { threshold: f64 },
    /// A prediction hits when `|output - target| < tolerance`; solved when
    /// every prediction hits.
    Regression { tolerance: f64 },
}

impl SuccessCriterion {
    pub const DEFAULT_THRESHOLD: f64 = 0.98;
    pub const DEFAULT_TOLERANCE: f64 = 1e-4;

    pub fn for_task(kind: TaskKind) -> Self {
        if kind.is_regression() {
            SuccessCriterion::Regression {
                tolerance: Self::DEFAULT_TOLERANCE,
            }
        } else {
            SuccessCriterion::Classification {
                threshold: Self::DEFAULT_THRESHOLD,
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SuccessCriterion::Classification { threshold } => threshold > 0.0 && threshold <= 1.0,
            SuccessCriterion::Regression { tolerance } => tolerance > 0.0,
        };
        if !ok {
            return Err(Error::param(format!("invalid success criterion {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Accuracy, or hit rate for regression.
    pub value: f64,
    pub success: bool,
}

/// Scores `outputs` against `targets` (both `batch x k`).
pub fn evaluate(outputs: &Matrix, targets: &Matrix, criterion: &SuccessCriterion) -> Result<Evaluation> {
    criterion.validate()?;
    if outputs.shape() != targets.shape() {
        return Err(Error::shape(
            "evaluate",
            format!("outputs {:?} vs targets {:?}", outputs.shape(), targets.shape()),
        ));
    }
    if outputs.rows() == 0 {
        return Err(Error::param("cannot evaluate an empty batch"));
    }
    let n = outputs.rows() as f64;
    Ok(match *criterion {
        SuccessCriterion::Classification { threshold } => {
            let hits = outputs
                .argmax_rows()
                .iter()
                .zip(targets.argmax_rows())
                .filter(|(a, b)| *a == b)
                .count();
            let value = hits as f64 / n;
            Evaluation {
                value,
                success: value >= threshold,
            }
        }
        SuccessCriterion::Regression { tolerance } => {
            let mut hits = 0;
            for r in 0..outputs.rows() {
                let close = outputs
                    .row(r)
                    .iter()
                    .zip(targets.row(r))
                    .all(|(o, t)| (o - t).abs() < tolerance);
                hits += close as usize;
            }
            Evaluation {
                value: hits as f64 / n,
                success: hits == outputs.rows(),
            }
        }
    })
}

/// Text manifest describing a task instance, embedded in run logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub name: String,
    pub seq_len: usize,
    pub alphabet: usize,
    pub classes: usize,
    pub windows: Vec<(usize, usize)>,
    pub seed: u64,
}

impl TaskManifest {
    pub fn new(kind: TaskKind, seq_len: usize, seed: u64) -> Self {
        TaskManifest {
            name: kind.name().into(),
            seq_len,
            alphabet: kind.input_size(),
            classes: kind.output_size(),
            windows: if kind.is_synthetic() {
                relevant_windows(kind, seq_len)
            } else {
                Vec::new()
            },
            seed,
        }
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let windows: Vec<String> = self.windows.iter().map(|(a, b)| format!("[{a},{b}]")).collect();
        format!(
            "name = {}\nT = {}\nalphabet = {}\nclasses = {}\nwindows = {}\nseed = {}\n",
            self.name,
            self.seq_len,
            self.alphabet,
            self.classes,
            windows.join(" "),
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symbols_at(batch: &TaskBatch, b: usize) -> Vec<usize> {
        batch
            .inputs
            .iter()
            .map(|x| x.row(b).iter().position(|&v| v == 1.0).unwrap())
            .collect()
    }

    #[test]
    fn xy_is_class_one() {
        // find a generated XY sample and check its label
        let mut rng = RngStream::new(0);
        let batch = gen_temporal_order(20, 200, &mut rng).unwrap();
        let mut seen = false;
        for b in 0..200 {
            let rel: Vec<usize> = symbols_at(&batch, b).into_iter().filter(|&s| s >= SYMBOL_X).collect();
            if rel == [SYMBOL_X, SYMBOL_Y] {
                assert_eq!(batch.targets.argmax_rows()[b], 1);
                seen = true;
            }
        }
        assert!(seen);
    }

    #[test]
    fn xxx_is_class_zero() {
        let mut rng = RngStream::new(1);
        let batch = gen_temporal_order_3bit(30, 300, &mut rng).unwrap();
        for b in 0..300 {
            let rel: Vec<usize> = symbols_at(&batch, b).into_iter().filter(|&s| s >= SYMBOL_X).collect();
            assert_eq!(rel.len(), 3);
            let class = rel.iter().fold(0, |c, &s| 2 * c + (s - SYMBOL_X));
            assert_eq!(batch.targets.argmax_rows()[b], class);
        }
    }

    #[test]
    fn windows_are_disjoint_at_minimum_length() {
        assert_eq!(relevant_windows(TaskKind::TemporalOrder, 4), vec![(0, 0), (2, 2)]);
        assert_eq!(
            relevant_windows(TaskKind::TemporalOrder3Bit, 6),
            vec![(0, 1), (2, 2), (3, 4)]
        );
        assert_eq!(relevant_windows(TaskKind::TemporalOrder, 100), vec![(10, 20), (50, 60)]);
    }

    #[test]
    fn too_short_is_rejected() {
        let mut rng = RngStream::new(0);
        assert!(gen_temporal_order(3, 1, &mut rng).is_err());
        assert!(gen_temporal_order_3bit(5, 1, &mut rng).is_err());
        assert!(gen_adding(1, 1, &mut rng).is_err());
        assert!(gen_random_permutation(1, 1, &mut rng).is_err());
    }

    #[test]
    fn adding_target_rescan() {
        let mut rng = RngStream::new(2);
        let batch = gen_adding(15, 50, &mut rng).unwrap();
        for b in 0..50 {
            let marked: Vec<f64> = batch
                .inputs
                .iter()
                .filter(|x| x[(b, 1)] == 1.0)
                .map(|x| x[(b, 0)])
                .collect();
            assert_eq!(marked.len(), 2);
            assert_eq!(batch.targets[(b, 0)], (marked[0] + marked[1]) / 2.0);
        }
    }

    #[test]
    fn permutation_first_symbol_is_target() {
        let mut rng = RngStream::new(3);
        let batch = gen_random_permutation(12, 100, &mut rng).unwrap();
        for b in 0..100 {
            let s = symbols_at(&batch, b);
            assert_eq!(batch.targets.argmax_rows()[b], s[0]);
            assert!(s[1..].iter().all(|&x| x >= 2));
        }
    }

    #[test]
    fn evaluate_examples() {
        let t = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let e = evaluate(&t, &t, &SuccessCriterion::for_task(TaskKind::RandomPermutation)).unwrap();
        assert_eq!(e.value, 1.0);
        assert!(e.success);

        let reg = SuccessCriterion::Regression { tolerance: 1e-4 };
        let out = Matrix::from_rows(&[[0.50005], [0.5002]]);
        let tgt = Matrix::from_rows(&[[0.5], [0.5]]);
        let e = evaluate(&out, &tgt, &reg).unwrap();
        assert_eq!(e.value, 0.5);
        assert!(!e.success);

        let empty = Matrix::zeros(0, 2);
        assert!(matches!(
            evaluate(&empty, &empty, &SuccessCriterion::Classification { threshold: 0.9 }),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            evaluate(&t, &Matrix::zeros(2, 3), &reg),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn manifest_text() {
        let m = TaskManifest::new(TaskKind::TemporalOrder, 50, 9);
        let text = m.to_text();
        assert!(text.contains("name = temporal_order"));
        assert!(text.contains("windows = [5,10] [25,30]"));
    }
}
