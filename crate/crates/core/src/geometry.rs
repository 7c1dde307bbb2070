//! Orthonormal subspaces of `R^d`, projections and principal angles.
//!
//! Every subspace carries an explicit `d x r` basis with orthonormal columns.
//! Distances and angles are computed from that basis directly; projectors are
//! never formed.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

pub type Vector = DVector<f64>;

/// Residuals below this (relative to `max(1, |v|)`) are treated as linearly dependent.
pub const DROP_TOL: f64 = 1e-10;
/// Orthonormality tolerance accepted by [`Subspace::from_orthonormal`].
pub const ORTHO_TOL: f64 = 1e-8;
/// How far from 1 a norm may be for a vector to count as a unit vector.
pub const UNIT_TOL: f64 = 1e-9;

/// The `i`-th standard basis vector of `R^d`.
pub fn basis_vector(d: usize, i: usize) -> Vector {
    let mut e = Vector::zeros(d);
    e[i] = 1.0;
    e
}

pub fn normalize(v: &Vector) -> Result<Vector> {
    let n = v.norm();
    if !n.is_finite() || n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(v / n)
}

pub fn is_unit(v: &Vector) -> bool {
    (v.norm() - 1.0).abs() <= UNIT_TOL
}

pub(crate) fn check_unit(v: &Vector, name: &'static str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(name, "non-finite entry"));
    }
    if !is_unit(v) {
        return Err(invalid(
            name,
            format!("expected a unit vector, norm = {}", v.norm()),
        ));
    }
    Ok(())
}

/// Angle in `[0, pi]` between two nonzero vectors.
///
/// Uses `2 atan2(|u - v|, |u + v|)` on the normalized inputs, which keeps full
/// relative precision near both 0 and pi.
pub fn angle_between(u: &Vector, v: &Vector) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let u = normalize(u)?;
    let v = normalize(v)?;
    Ok(2.0 * (&u - &v).norm().atan2((&u + &v).norm()))
}

/// A linear subspace given by an orthonormal basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// The zero subspace of `R^d`.
    pub fn empty(ambient_dim: usize) -> Self {
        Self {
            basis: DMatrix::zeros(ambient_dim, 0),
        }
    }

    /// Wraps a basis after checking `basis^T basis = I` within [`ORTHO_TOL`].
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Result<Self> {
        let r = basis.ncols();
        if r > basis.nrows() {
            return Err(Error::InvalidDimensions(format!(
                "{} columns in R^{}",
                r,
                basis.nrows()
            )));
        }
        let gram = basis.transpose() * &basis;
        let err = (gram - DMatrix::<f64>::identity(r, r)).amax();
        if !(err <= ORTHO_TOL) {
            return Err(invalid(
                "basis",
                format!("columns not orthonormal (error {err:e})"),
            ));
        }
        Ok(Self { basis })
    }

    /// Span of `vectors`; see [`orthonormalize`].
    pub fn span(vectors: &[Vector]) -> Result<Self> {
        orthonormalize(vectors)
    }

    /// Span of the first `r` coordinate axes of `R^d`.
    pub fn coordinate(ambient_dim: usize, axes: &[usize]) -> Result<Self> {
        let vs: Vec<Vector> = axes
            .iter()
            .map(|&i| {
                if i < ambient_dim {
                    Ok(basis_vector(ambient_dim, i))
                } else {
                    Err(invalid("axes", format!("axis {i} outside R^{ambient_dim}")))
                }
            })
            .collect::<Result<_>>()?;
        if vs.is_empty() {
            return Ok(Self::empty(ambient_dim));
        }
        orthonormalize(&vs)
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn into_basis(self) -> DMatrix<f64> {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.dim() == 0
    }

    fn check_dim(&self, x: &Vector) -> Result<()> {
        if x.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Coordinates `basis^T x` of the projection of `x`.
    pub fn coordinates(&self, x: &Vector) -> Result<Vector> {
        self.check_dim(x)?;
        Ok(self.basis.tr_mul(x))
    }

    /// Maps coordinates back to `R^d`.
    pub fn embed(&self, coords: &Vector) -> Result<Vector> {
        if coords.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: coords.len(),
            });
        }
        Ok(&self.basis * coords)
    }

    pub fn project(&self, x: &Vector) -> Result<Vector> {
        let c = self.coordinates(x)?;
        Ok(&self.basis * c)
    }

    /// `x - P x`, computed with one re-orthogonalization pass.
    pub fn residual(&self, x: &Vector) -> Result<Vector> {
        self.check_dim(x)?;
        let mut r = x.clone();
        for _ in 0..2 {
            let c = self.basis.tr_mul(&r);
            r -= &self.basis * c;
        }
        Ok(r)
    }

    pub fn dist(&self, x: &Vector) -> Result<f64> {
        Ok(self.residual(x)?.norm())
    }

    /// Returns a subspace with `v`'s new direction appended, keeping existing
    /// columns untouched. `None` in the second slot means `v` was dependent.
    pub fn extend(&self, v: &Vector) -> Result<(Subspace, Option<Vector>)> {
        let r = self.residual(v)?;
        let n = r.norm();
        if n <= DROP_TOL * v.norm().max(1.0) {
            return Ok((self.clone(), None));
        }
        let q = r / n;
        let mut basis = self.basis.clone().insert_column(self.dim(), 0.0);
        basis.set_column(self.dim(), &q);
        Ok((Subspace { basis }, Some(q)))
    }

    /// The projector `basis basis^T`, for callers that need it densely.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

/// Rank-revealing Gram-Schmidt with one full re-orthogonalization pass.
///
/// Directions whose residual falls below `DROP_TOL * max(1, |v|)` are dropped,
/// so the column count equals the numerical rank of the input.
pub fn orthonormalize(vectors: &[Vector]) -> Result<Subspace> {
    let first = vectors.first().ok_or(Error::EmptyInput("orthonormalize"))?;
    let d = first.len();
    let mut cols: Vec<Vector> = Vec::new();
    for v in vectors {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(invalid("vectors", "non-finite entry"));
        }
        let mut r = v.clone();
        for _ in 0..2 {
            for q in &cols {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let n = r.norm();
        if n > DROP_TOL * v.norm().max(1.0) && cols.len() < d {
            cols.push(r / n);
        }
    }
    let basis = if cols.is_empty() {
        DMatrix::zeros(d, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    Ok(Subspace { basis })
}

pub fn project(x: &Vector, s: &Subspace) -> Result<Vector> {
    s.project(x)
}

pub fn dist_to_subspace(x: &Vector, s: &Subspace) -> Result<f64> {
    s.dist(x)
}

/// Principal angles in radians, sorted descending.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleSpectrum {
    angles: Vec<f64>,
}

impl AngleSpectrum {
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// The largest principal angle, or `None` when either subspace is trivial.
    pub fn max(&self) -> Option<f64> {
        self.angles.first().copied()
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect()
}

/// Principal angles between `f` and `g`.
///
/// Cosines come from the SVD of `F^T G`; for angles below pi/4 the sines from
/// the SVD of `(I - F F^T) G` are used instead, since `acos` is ill-conditioned
/// there. Both sets of singular values are clamped to `[0, 1]`.
pub fn principal_angles(f: &Subspace, g: &Subspace) -> Result<AngleSpectrum> {
    if f.ambient_dim() != g.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: f.ambient_dim(),
            found: g.ambient_dim(),
        });
    }
    if f.is_empty() || g.is_empty() {
        return Ok(AngleSpectrum { angles: Vec::new() });
    }
    // Keep the larger subspace on the left so the residual has min(p, q) columns.
    let (big, small) = if f.dim() >= g.dim() { (f, g) } else { (g, f) };
    let cross = big.basis.tr_mul(&small.basis);
    let residual = &small.basis - &big.basis * &cross;

    let mut cos = singular_values(&cross);
    cos.sort_by(|a, b| a.total_cmp(b));
    let mut sin = singular_values(&residual);
    sin.sort_by(|a, b| b.total_cmp(a));

    let r = small.dim();
    let mut angles: Vec<f64> = (0..r)
        .map(|i| {
            let c = cos.get(i).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            let s = sin.get(i).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            if c * c < 0.5 {
                c.acos()
            } else {
                s.asin()
            }
        })
        .collect();
    angles.sort_by(|a, b| b.total_cmp(a));
    Ok(AngleSpectrum { angles })
}

/// The largest principal angle, with trivial subspaces reported as pi/2.
pub fn max_principal_angle(f: &Subspace, g: &Subspace) -> Result<f64> {
    Ok(principal_angles(f, g)?.max().unwrap_or(FRAC_PI_2))
}

/// `min_{u in S} angle(x, u)`, in `[0, pi/2]`.
pub fn angle_vec_to_subspace(x: &Vector, s: &Subspace) -> Result<f64> {
    if x.norm() == 0.0 {
        return Err(Error::ZeroVector);
    }
    let r = s.residual(x)?;
    let p = x - &r;
    Ok(r.norm().atan2(p.norm()))
}

/// Length of the greedy gamma-separated subsequence of `vectors`.
///
/// Scans in order and keeps a vector iff it adds a new direction and its angle
/// to the span of the kept vectors is at least `gamma`. With `gamma = 0` this
/// is the rank of the set.
pub fn gamma_effective_dimension(vectors: &[Vector], gamma: f64) -> Result<usize> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(invalid(
            "gamma",
            format!("must be finite and >= 0, got {gamma}"),
        ));
    }
    let Some(first) = vectors.first() else {
        return Ok(0);
    };
    let mut span = Subspace::empty(first.len());
    for v in vectors {
        check_unit(v, "vectors")?;
        let r = span.residual(v)?;
        if r.norm() <= DROP_TOL {
            continue;
        }
        let angle = r.norm().atan2((v - &r).norm());
        if angle >= gamma {
            span = span.extend(v)?.0;
        }
    }
    Ok(span.dim())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn orthonormalize_examples() {
        let e1 = basis_vector(3, 0);
        let e2 = basis_vector(3, 1);
        let s = orthonormalize(&[e1.clone(), e2.clone()]).unwrap();
        assert_eq!(s.dim(), 2);
        assert!(s.dist(&e1).unwrap() < 1e-12 && s.dist(&e2).unwrap() < 1e-12);

        let s = orthonormalize(&[e1.clone(), 2.0 * &e1]).unwrap();
        assert_eq!(s.dim(), 1);

        // Hand Gram-Schmidt: e1 + e2 minus its e1 component leaves e2.
        let s = orthonormalize(&[e1.clone(), &e1 + &e2]).unwrap();
        assert_eq!(s.dim(), 2);
        let c = s.basis().column(1).into_owned();
        assert!((c.dot(&e2).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthonormalize_errors() {
        assert_eq!(
            orthonormalize(&[]),
            Err(Error::EmptyInput("orthonormalize"))
        );
        assert!(matches!(
            orthonormalize(&[v(&[1.0, 0.0]), v(&[1.0, 0.0, 0.0])]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        let s1 = Subspace::coordinate(3, &[0]).unwrap();
        let s2 = Subspace::coordinate(3, &[1]).unwrap();
        let e1 = basis_vector(3, 0);
        assert!((project(&e1, &s1).unwrap() - &e1).norm() < 1e-15);
        assert!(project(&e1, &s2).unwrap().norm() < 1e-15);
        let p = project(&v(&[1.0, 1.0, 0.0]), &s1).unwrap();
        assert!((p - v(&[1.0, 0.0, 0.0])).norm() < 1e-15);
        assert!(project(&v(&[1.0, 1.0]), &s1).is_err());
    }

    #[test]
    fn distance_examples() {
        let s1 = Subspace::coordinate(3, &[0]).unwrap();
        assert!(dist_to_subspace(&basis_vector(3, 0), &s1).unwrap() < 1e-15);
        assert!((dist_to_subspace(&basis_vector(3, 1), &s1).unwrap() - 1.0).abs() < 1e-15);
        let x = v(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0]);
        assert!((dist_to_subspace(&x, &s1).unwrap() - FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn principal_angle_examples() {
        let s1 = Subspace::coordinate(3, &[0]).unwrap();
        let s2 = Subspace::coordinate(3, &[1]).unwrap();
        let a = principal_angles(&s1, &s1).unwrap();
        assert_eq!(a.len(), 1);
        assert!(a.max().unwrap().abs() < 1e-12);
        let a = principal_angles(&s1, &s2).unwrap();
        assert!((a.max().unwrap() - FRAC_PI_2).abs() < 1e-12);
        let diag = Subspace::span(&[v(&[1.0, 1.0, 0.0])]).unwrap();
        let a = principal_angles(&s1, &diag).unwrap();
        assert!((a.max().unwrap() - FRAC_PI_4).abs() < 1e-12);
        assert!(principal_angles(&s1, &Subspace::empty(3))
            .unwrap()
            .is_empty());
        assert!(principal_angles(&s1, &Subspace::empty(4)).is_err());
    }

    #[test]
    fn principal_angles_unequal_dims_descending() {
        let plane = Subspace::coordinate(3, &[0, 1]).unwrap();
        let all = Subspace::coordinate(3, &[0, 1, 2]).unwrap();
        let a = principal_angles(&plane, &all).unwrap();
        assert_eq!(a.len(), 2);
        assert!(a.angles().iter().all(|x| x.abs() < 1e-12));
        let tilted = Subspace::span(&[v(&[1.0, 0.0, 0.0]), v(&[0.0, 1.0, 1.0])]).unwrap();
        let a = principal_angles(&plane, &tilted).unwrap();
        assert!((a.angles()[0] - FRAC_PI_4).abs() < 1e-12);
        assert!(a.angles()[1].abs() < 1e-12);
    }

    #[test]
    fn vec_to_subspace_angles() {
        let s1 = Subspace::coordinate(3, &[0]).unwrap();
        assert!(
            angle_vec_to_subspace(&basis_vector(3, 0), &s1)
                .unwrap()
                .abs()
                < 1e-15
        );
        assert!(
            (angle_vec_to_subspace(&basis_vector(3, 1), &s1).unwrap() - FRAC_PI_2).abs() < 1e-15
        );
        assert!(
            (angle_vec_to_subspace(&v(&[1.0, 1.0, 0.0]), &s1).unwrap() - FRAC_PI_4).abs() < 1e-15
        );
        assert_eq!(
            angle_vec_to_subspace(&Vector::zeros(3), &s1),
            Err(Error::ZeroVector)
        );
    }

    #[test]
    fn gamma_dimension_examples() {
        let e: Vec<Vector> = (0..3).map(|i| basis_vector(3, i)).collect();
        assert_eq!(gamma_effective_dimension(&e, 0.1).unwrap(), 3);
        let diag = normalize(&v(&[1.0, 1.0, 0.0])).unwrap();
        let set = vec![e[0].clone(), e[1].clone(), diag.clone()];
        assert_eq!(gamma_effective_dimension(&set, 0.3).unwrap(), 2);
        assert_eq!(gamma_effective_dimension(&set, 0.0).unwrap(), 2);
        // A small tilt passes at gamma = 0 but not at a large gamma.
        let tilt = normalize(&v(&[1.0, 0.0, 0.05])).unwrap();
        assert_eq!(
            gamma_effective_dimension(&[e[0].clone(), tilt.clone()], 0.0).unwrap(),
            2
        );
        assert_eq!(
            gamma_effective_dimension(&[e[0].clone(), tilt], 0.2).unwrap(),
            1
        );
        assert!(gamma_effective_dimension(&set, -1.0).is_err());
        assert!(gamma_effective_dimension(&[v(&[2.0, 0.0])], 0.1).is_err());
    }

    #[test]
    fn extend_keeps_existing_columns() {
        let s = Subspace::coordinate(3, &[0]).unwrap();
        let (t, q) = s.extend(&v(&[1.0, 1.0, 0.0])).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.basis().column(0), s.basis().column(0));
        assert!(q.is_some());
        let (u, q) = t.extend(&v(&[3.0, -1.0, 0.0])).unwrap();
        assert_eq!(u.dim(), 2);
        assert!(q.is_none());
    }

    #[test]
    fn from_orthonormal_rejects_bad_basis() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(Subspace::from_orthonormal(m).is_err());
        assert!(Subspace::from_orthonormal(DMatrix::identity(3, 2)).is_ok());
    }
}
