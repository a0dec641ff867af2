//! 2:4 structured sparsification of activations.
//!
//! Every aligned group of 4 consecutive elements along a row keeps at most
//! 2 nonzeros. The default sparsifier keeps the two largest-magnitude
//! entries per group; two soft-thresholding variants exist for ablations.
//! The backward rule is a straight-through estimator: gradients pass
//! through the sparsifier unchanged.

mod packed;

pub use packed::{pack, spmm, unpack, Packed24Tensor};

use crate::error::{ElasError, Result};
use crate::numerics::{Matrix, Scalar};

/// Binary keep-mask with exactly 2 set bits per aligned group of 4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask24 {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask24 {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_kept(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    /// Checks the exactly-2-per-group invariant.
    pub fn is_valid(&self) -> bool {
        self.bits
            .chunks_exact(4)
            .all(|g| g.iter().filter(|&&b| b).count() == 2)
    }
}

/// Sparsifier strategy selector for the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SparsifierKind {
    /// Keep the two largest-magnitude entries per group.
    Naive,
    /// Soft-threshold by the third-largest magnitude, rescale per tensor.
    SoftWeights,
    /// Soft-threshold with a scale fitted once on a calibration batch.
    SoftActivation,
}

impl SparsifierKind {
    pub fn name(self) -> &'static str {
        match self {
            SparsifierKind::Naive => "naive",
            SparsifierKind::SoftWeights => "soft_weights",
            SparsifierKind::SoftActivation => "soft_activation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(SparsifierKind::Naive),
            "soft_weights" => Ok(SparsifierKind::SoftWeights),
            "soft_activation" => Ok(SparsifierKind::SoftActivation),
            other => Err(ElasError::Config(format!("unknown sparsifier '{other}'"))),
        }
    }
}

/// A sparsifier variant plus its per-layer parameters.
#[derive(Debug, Clone)]
pub struct SparsifierVariant {
    pub kind: SparsifierKind,
    /// Calibrated per-layer scale; required by `SoftActivation`.
    pub scale: Option<f64>,
}

impl SparsifierVariant {
    pub fn naive() -> Self {
        SparsifierVariant {
            kind: SparsifierKind::Naive,
            scale: None,
        }
    }

    pub fn soft_weights() -> Self {
        SparsifierVariant {
            kind: SparsifierKind::SoftWeights,
            scale: None,
        }
    }

    pub fn soft_activation_uncalibrated() -> Self {
        SparsifierVariant {
            kind: SparsifierKind::SoftActivation,
            scale: None,
        }
    }

    pub fn of_kind(kind: SparsifierKind) -> Self {
        SparsifierVariant { kind, scale: None }
    }

    /// Fit the soft-activation scale from a calibration batch.
    pub fn calibrate<T: Scalar>(&mut self, batch: &Matrix<T>) -> Result<Calibration> {
        let cal = calibrate_soft_scale(batch)?;
        self.scale = Some(cal.beta);
        Ok(cal)
    }
}

/// Result of fitting the soft-activation scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub beta: f64,
    /// Set when the soft-thresholded batch was all zero and beta fell back to 1.
    pub degenerate: bool,
}

fn check_group_shape<T: Scalar>(z: &Matrix<T>, op: &'static str) -> Result<()> {
    if z.cols() % 4 != 0 {
        return Err(ElasError::ShapeMismatch {
            op,
            detail: format!("cols = {} not divisible by 4 (no implicit padding)", z.cols()),
        });
    }
    Ok(())
}

/// Per aligned group of 4, mark the two largest-magnitude positions.
/// Ties break toward the lower index.
pub fn mask_top2<T: Scalar>(z: &Matrix<T>) -> Result<Mask24> {
    check_group_shape(z, "mask_top2")?;
    let mut bits = vec![false; z.rows() * z.cols()];
    for i in 0..z.rows() {
        let row = z.row(i);
        for g in 0..z.cols() / 4 {
            let group = &row[g * 4..g * 4 + 4];
            let (a, b) = top2_indices(group);
            bits[i * z.cols() + g * 4 + a] = true;
            bits[i * z.cols() + g * 4 + b] = true;
        }
    }
    Ok(Mask24 {
        rows: z.rows(),
        cols: z.cols(),
        bits,
    })
}

/// Indices of the two largest magnitudes in a group of 4, lower index wins ties.
#[inline]
fn top2_indices<T: Scalar>(group: &[T]) -> (usize, usize) {
    debug_assert_eq!(group.len(), 4);
    let mut best = 0usize;
    for j in 1..4 {
        if group[j].abs() > group[best].abs() {
            best = j;
        }
    }
    let mut second = usize::MAX;
    for j in 0..4 {
        if j == best {
            continue;
        }
        if second == usize::MAX || group[j].abs() > group[second].abs() {
            second = j;
        }
    }
    if best < second {
        (best, second)
    } else {
        (second, best)
    }
}

/// `mask_top2(z) ⊙ z`: the paper's default magnitude-based sparsifier.
pub fn sparsify_naive<T: Scalar>(z: &Matrix<T>) -> Result<Matrix<T>> {
    let mask = mask_top2(z)?;
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        for j in 0..z.cols() {
            if mask.is_kept(i, j) {
                out[(i, j)] = z[(i, j)];
            }
        }
    }
    Ok(out)
}

/// Soft-threshold each group by its third-largest magnitude.
fn soft_threshold<T: Scalar>(z: &Matrix<T>) -> Result<Matrix<T>> {
    check_group_shape(z, "soft_threshold")?;
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        for g in 0..z.cols() / 4 {
            let base = g * 4;
            let mut mags = [T::zero(); 4];
            for j in 0..4 {
                mags[j] = z[(i, base + j)].abs();
            }
            mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let theta = mags[2];
            for j in 0..4 {
                let v = z[(i, base + j)];
                let shrunk = v.abs() - theta;
                if shrunk > T::zero() {
                    out[(i, base + j)] = shrunk * v.signum();
                }
            }
        }
    }
    Ok(out)
}

fn least_squares_scale<T: Scalar>(thresholded: &Matrix<T>, z: &Matrix<T>) -> (f64, bool) {
    let denom = thresholded.dot(thresholded);
    if denom == 0.0 {
        (1.0, true)
    } else {
        (thresholded.dot(z) / denom, false)
    }
}

/// S-STE-style soft sparsifier with a per-tensor least-squares scale.
pub fn sparsify_soft_weights<T: Scalar>(z: &Matrix<T>) -> Result<Matrix<T>> {
    let s = soft_threshold(z)?;
    let (beta, _) = least_squares_scale(&s, z);
    Ok(s.scale(T::from_f64(beta)))
}

/// Soft sparsifier with the scale taken from a prior calibration fit.
pub fn sparsify_soft_activation<T: Scalar>(
    z: &Matrix<T>,
    variant: &SparsifierVariant,
) -> Result<Matrix<T>> {
    if variant.kind != SparsifierKind::SoftActivation {
        return Err(ElasError::Config(
            "sparsify_soft_activation called with a non-soft_activation variant".into(),
        ));
    }
    let beta = variant.scale.ok_or_else(|| {
        ElasError::Config("soft_activation sparsifier used before calibration".into())
    })?;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(ElasError::Config(format!(
            "calibrated scale must be finite and positive, got {beta}"
        )));
    }
    let s = soft_threshold(z)?;
    Ok(s.scale(T::from_f64(beta)))
}

/// Fit the soft-activation scale on a calibration batch:
/// `beta = <S(z), z> / <S(z), S(z)>` with a fallback of 1 for an all-zero S.
pub fn calibrate_soft_scale<T: Scalar>(batch: &Matrix<T>) -> Result<Calibration> {
    if batch.rows() == 0 || batch.cols() == 0 {
        return Err(ElasError::Config("empty calibration batch".into()));
    }
    let s = soft_threshold(batch)?;
    let (beta, degenerate) = least_squares_scale(&s, batch);
    Ok(Calibration { beta, degenerate })
}

/// Dispatch on the variant. `SoftActivation` requires a calibrated scale.
pub fn sparsify<T: Scalar>(z: &Matrix<T>, variant: &SparsifierVariant) -> Result<Matrix<T>> {
    match variant.kind {
        SparsifierKind::Naive => sparsify_naive(z),
        SparsifierKind::SoftWeights => sparsify_soft_weights(z),
        SparsifierKind::SoftActivation => sparsify_soft_activation(z, variant),
    }
}

/// Straight-through estimator: the sparsifier is an identity for gradients.
pub fn ste_backward<T: Scalar>(grad_out: &Matrix<T>) -> Matrix<T> {
    grad_out.clone()
}

/// True when every aligned group of 4 has at most 2 nonzeros.
pub fn satisfies_24_pattern<T: Scalar>(z: &Matrix<T>) -> bool {
    if z.cols() % 4 != 0 {
        return false;
    }
    (0..z.rows()).all(|i| {
        z.row(i)
            .chunks_exact(4)
            .all(|g| g.iter().filter(|&&v| v != T::zero()).count() <= 2)
    })
}
