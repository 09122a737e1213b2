//! Geometry on the unit hypersphere.
//!
//! Raw (unnormalized) vectors are what optimizers update; unit vectors are what
//! every similarity is computed on. The cosine gradient is taken with respect
//! to the raw inputs so that the chain through normalization is exact.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero and cannot be normalized.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

/// Tolerance on `| ‖v‖ − 1 |` accepted by [`UnitVector::try_from_unit`].
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// An unnormalized embedding coordinate vector of dimension `d ≥ 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RawVector(Vec<f64>);

impl RawVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidVector(format!(
                "dimension {} is below 2",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVector(format!("entry {i} is not finite")));
        }
        Ok(RawVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

impl From<UnitVector> for RawVector {
    fn from(u: UnitVector) -> Self {
        RawVector(u.0)
    }
}

/// A point on the unit hypersphere.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps values that are already unit norm (within [`UNIT_TOLERANCE`]).
    pub fn try_from_unit(values: Vec<f64>) -> Result<Self> {
        let raw = RawVector::new(values)?;
        let n = raw.norm();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidVector(format!("norm {n} is not unit")));
        }
        Ok(UnitVector(raw.0))
    }

    /// Standard basis vector `e_axis` in dimension `dim`.
    pub fn basis(dim: usize, axis: usize) -> Result<Self> {
        if axis >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: axis + 1,
            });
        }
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Self::try_from_unit(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_raw(&self) -> RawVector {
        RawVector(self.0.clone())
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for RawVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// An angle in `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Angle(f64);

impl Angle {
    pub fn new(radians: f64) -> Result<Self> {
        if !(0.0..=PI).contains(&radians) {
            return Err(Error::InvalidVector(format!(
                "angle {radians} outside [0, pi]"
            )));
        }
        Ok(Angle(radians))
    }

    /// Angle whose cosine is `c`; `c` is clamped to `[-1, 1]` first.
    pub fn from_cos(c: f64) -> Self {
        Angle(c.clamp(-1.0, 1.0).acos())
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

pub fn normalize(v: &RawVector) -> Result<UnitVector> {
    let n = v.norm();
    if n < ZERO_NORM_THRESHOLD {
        return Err(Error::ZeroNorm { norm: n });
    }
    Ok(UnitVector(v.0.iter().map(|x| x / n).collect()))
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cos_sim(a: &UnitVector, b: &UnitVector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(dot(&a.0, &b.0).clamp(-1.0, 1.0))
}

pub fn angle(a: &UnitVector, b: &UnitVector) -> Result<Angle> {
    Ok(Angle::from_cos(cos_sim(a, b)?))
}

/// Gradient of `cos_sim(normalize(a), normalize(b))` with respect to the raw
/// inputs `a` and `b`.
pub fn cos_sim_grad(a: &RawVector, b: &RawVector) -> Result<(RawVector, RawVector)> {
    check_dims(a.dim(), b.dim())?;
    let na = a.norm();
    let nb = b.norm();
    if na < ZERO_NORM_THRESHOLD {
        return Err(Error::ZeroNorm { norm: na });
    }
    if nb < ZERO_NORM_THRESHOLD {
        return Err(Error::ZeroNorm { norm: nb });
    }
    let (ga, gb) = cos_grad_parts(&a.0, na, &b.0, nb);
    Ok((RawVector(ga), RawVector(gb)))
}

/// Unchecked kernel shared with the loss backward pass. Returns the gradients
/// of the unclamped cosine with respect to `a` and `b`.
pub(crate) fn cos_grad_parts(a: &[f64], na: f64, b: &[f64], nb: f64) -> (Vec<f64>, Vec<f64>) {
    let c = dot(a, b) / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (y / nb - c * x / na) / na)
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x / na - c * y / nb) / nb)
        .collect();
    (ga, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(v: &[f64]) -> RawVector {
        RawVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let u = normalize(&raw(&[3.0, 4.0])).unwrap();
        assert!((u.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((u.as_slice()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_axis_vector() {
        let u = normalize(&raw(&[0.0, 0.0, 0.0, 5.0])).unwrap();
        assert_eq!(u.as_slice(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn normalize_rejects_tiny_norm() {
        assert!(matches!(
            normalize(&raw(&[1e-13, 0.0])),
            Err(Error::ZeroNorm { .. })
        ));
    }

    #[test]
    fn raw_vector_rejects_bad_input() {
        assert!(RawVector::new(vec![1.0]).is_err());
        assert!(RawVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(RawVector::new(vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn cos_sim_examples() {
        let e1 = UnitVector::basis(2, 0).unwrap();
        let e2 = UnitVector::basis(2, 1).unwrap();
        assert_eq!(cos_sim(&e1, &e1).unwrap(), 1.0);
        assert_eq!(cos_sim(&e1, &e2).unwrap(), 0.0);
        let diag = normalize(&raw(&[1.0, 1.0])).unwrap();
        assert!((cos_sim(&e1, &diag).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn cos_sim_dimension_mismatch() {
        let a = UnitVector::basis(2, 0).unwrap();
        let b = UnitVector::basis(3, 0).unwrap();
        assert!(matches!(
            cos_sim(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(angle(&a, &b).is_err());
    }

    #[test]
    fn angle_examples() {
        let e1 = UnitVector::basis(3, 0).unwrap();
        let e2 = UnitVector::basis(3, 1).unwrap();
        let neg = normalize(&raw(&[-1.0, 0.0, 0.0])).unwrap();
        assert_eq!(angle(&e1, &e1).unwrap().radians(), 0.0);
        assert_eq!(angle(&e1, &neg).unwrap().radians(), PI);
        assert!((angle(&e1, &e2).unwrap().radians() - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn angle_validation() {
        assert!(Angle::new(-0.1).is_err());
        assert!(Angle::new(PI + 1e-9).is_err());
        assert_eq!(Angle::from_cos(1.5).radians(), 0.0);
    }

    #[test]
    fn grad_at_coincident_unit_vectors_is_zero() {
        let a = raw(&[0.6, 0.8]);
        let (ga, gb) = cos_sim_grad(&a, &a).unwrap();
        assert!(ga.as_slice().iter().all(|g| g.abs() < 1e-15));
        assert!(gb.as_slice().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn grad_orthogonal_basis() {
        // Central differences with h = 1e-6 give (0, 1) to ~1e-12.
        let (ga, gb) = cos_sim_grad(&raw(&[1.0, 0.0]), &raw(&[0.0, 1.0])).unwrap();
        assert_eq!(ga.as_slice(), &[0.0, 1.0]);
        assert_eq!(gb.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn grad_rejects_zero_norm() {
        assert!(cos_sim_grad(&raw(&[0.0, 0.0]), &raw(&[1.0, 0.0])).is_err());
    }
}
