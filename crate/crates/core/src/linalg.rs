//! Symmetric positive-definite matrices, spectral decompositions, and
//! Mahalanobis norms shared by every other module.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

/// Relative tolerance for the symmetry check.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues below this are treated as negative in PSD checks.
pub const PSD_EIGENVALUE_SLACK: f64 = -1e-10;

/// A validated symmetric positive-definite matrix.
///
/// Inputs are symmetrized as `(S + Sᵀ)/2` to absorb round-off before any
/// check; asymmetry beyond [`SYMMETRY_TOL`] (relative) is an error.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validate a strictly positive-definite matrix.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let entries = symmetrized(&entries)?;
        if Cholesky::new(entries.clone()).is_none() {
            let min = min_eigenvalue(&entries);
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
        Ok(Self { entries })
    }

    /// Shorthand for small literal matrices in tests and presets.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let d = rows.len();
        let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        Self::new(m)
    }

    /// 1×1 matrix holding a positive scalar.
    pub fn scalar(v: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, v))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Scale by a positive factor, staying positive definite.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.entries * factor)
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.entries.clone()).ok_or(Error::SingularMatrix)
    }

    /// `ln det` computed from the Cholesky factor.
    pub fn ln_det(&self) -> Result<f64> {
        let chol = self.cholesky()?;
        Ok(2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>())
    }

    pub fn spectral(&self) -> Result<SpectralDecomposition> {
        spectral_decompose(&self.entries)
    }

    /// Row-major nested representation, convenient for emission layers.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.entries[(i, j)]).collect())
            .collect()
    }
}

/// Orthogonal eigenbasis `Q` and descending positive eigenvalues of a
/// symmetric PSD matrix, with a deterministic sign convention.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    /// Columns are eigenvectors, ordered to match `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    /// Sorted descending.
    pub eigenvalues: DVector<f64>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// i-th eigenvector (matching the descending eigenvalue order).
    pub fn eigenvector(&self, i: usize) -> DVector<f64> {
        self.eigenvectors.column(i).into_owned()
    }

    /// Rebuild `Q diag(Λ) Qᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let q = &self.eigenvectors;
        q * DMatrix::from_diagonal(&self.eigenvalues) * q.transpose()
    }

    /// Rebuild with the eigenvalues replaced (same eigenbasis).
    pub fn reconstruct_with(&self, eigenvalues: &DVector<f64>) -> DMatrix<f64> {
        let q = &self.eigenvectors;
        q * DMatrix::from_diagonal(eigenvalues) * q.transpose()
    }
}

/// Spectral decomposition of a symmetric PSD matrix.
///
/// Eigenvalues come back sorted descending (stable among ties) and each
/// eigenvector is flipped so its first nonzero entry is positive, which makes
/// downstream argmax indices deterministic.
pub fn spectral_decompose(matrix: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    let sym = symmetrized(matrix)?;
    let d = sym.nrows();
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues of a real symmetric matrix are finite")
    });

    let mut eigenvalues = DVector::zeros(d);
    let mut eigenvectors = DMatrix::zeros(d, d);
    for (slot, &src) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[src];
        if lambda < PSD_EIGENVALUE_SLACK {
            return Err(Error::NotPsd {
                min_eigenvalue: lambda,
            });
        }
        eigenvalues[slot] = lambda;
        let mut col = eig.eigenvectors.column(src).into_owned();
        let scale = col.amax();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12 * scale) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        eigenvectors.set_column(slot, &col);
    }

    Ok(SpectralDecomposition {
        eigenvectors,
        eigenvalues,
    })
}

/// Squared Mahalanobis distance `(x−m)ᵀ S⁻¹ (x−m)`.
pub fn mahalanobis_sq(x: &DVector<f64>, m: &DVector<f64>, s: &SpdMatrix) -> Result<f64> {
    if x.len() != m.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: m.len(),
        });
    }
    if x.len() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            got: x.len(),
        });
    }
    let diff = x - m;
    let solved = s.cholesky()?.solve(&diff);
    Ok(diff.dot(&solved).max(0.0))
}

/// Smallest eigenvalue of a symmetric matrix (diagnostics and PSD checks).
pub fn min_eigenvalue(matrix: &DMatrix<f64>) -> f64 {
    let sym = (matrix + matrix.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn symmetrized(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::DimensionMismatch {
            expected: matrix.nrows(),
            got: matrix.ncols(),
        });
    }
    // NaN compares false everywhere, so it would sail through the symmetry
    // check and blow up in the eigen sort instead
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "matrix",
            message: "entries must be finite".into(),
        });
    }
    let scale = matrix.amax().max(1.0);
    let max_asymmetry = (matrix - matrix.transpose()).amax();
    if max_asymmetry > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { max_asymmetry });
    }
    Ok((matrix + matrix.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    pub(crate) fn preset_sigma() -> SpdMatrix {
        SpdMatrix::from_rows(&[&[1.0, 0.5], &[0.5, 1.5]]).unwrap()
    }

    #[test]
    fn identity_decomposition() {
        let s = SpdMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let dec = s.spectral().unwrap();
        assert_eq!(dec.eigenvalues, DVector::from_vec(vec![1.0, 1.0]));
        assert_relative_eq!(dec.reconstruct(), DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn preset_covariance_eigenvalues() {
        // characteristic-polynomial roots (2.5 ± √1.25)/2
        let dec = preset_sigma().spectral().unwrap();
        assert_relative_eq!(dec.eigenvalues[0], 1.8090169943749475, epsilon = 1e-9);
        assert_relative_eq!(dec.eigenvalues[1], 0.6909830056250525, epsilon = 1e-9);
        let rebuilt = dec.reconstruct();
        assert_relative_eq!(rebuilt, *preset_sigma().matrix(), epsilon = 1e-10);
    }

    #[test]
    fn diagonal_reorders_descending() {
        let s = SpdMatrix::from_rows(&[&[4.0, 0.0], &[0.0, 9.0]]).unwrap();
        let dec = s.spectral().unwrap();
        assert_eq!(dec.eigenvalues[0], 9.0);
        assert_eq!(dec.eigenvalues[1], 4.0);
        // coordinate axes, sign convention makes the leading entries positive
        assert_relative_eq!(
            dec.eigenvector(0),
            DVector::from_vec(vec![0.0, 1.0]),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            dec.eigenvector(1),
            DVector::from_vec(vec![1.0, 0.0]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn orthonormal_basis() {
        let dec = preset_sigma().spectral().unwrap();
        let q = &dec.eigenvectors;
        let gram = q.transpose() * q;
        assert!((gram - DMatrix::identity(2, 2)).norm() <= 1e-10);
    }

    #[test]
    fn non_finite_input_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(matches!(
            spectral_decompose(&m),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]);
        assert!(matches!(
            spectral_decompose(&m),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(matches!(SpdMatrix::new(m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn indefinite_input_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(spectral_decompose(&m), Err(Error::NotPsd { .. })));
        assert!(matches!(SpdMatrix::new(m), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn psd_boundary_allowed_in_decompose() {
        // rank-one PSD matrix decomposes fine even though SpdMatrix::new rejects it
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let dec = spectral_decompose(&m).unwrap();
        assert_relative_eq!(dec.eigenvalues[0], 2.0, epsilon = 1e-12);
        assert!(dec.eigenvalues[1].abs() <= 1e-12);
    }

    #[test]
    fn mahalanobis_examples() {
        let s = preset_sigma();
        let zero = DVector::zeros(2);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(mahalanobis_sq(&zero, &zero, &s).unwrap(), 0.0);

        let id = SpdMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_relative_eq!(
            mahalanobis_sq(&e1, &zero, &id).unwrap(),
            1.0,
            epsilon = 1e-12
        );

        // explicit 2×2 inverse gives 1.2
        assert_relative_eq!(mahalanobis_sq(&x, &zero, &s).unwrap(), 1.2, epsilon = 1e-12);
    }

    #[test]
    fn mahalanobis_dimension_mismatch() {
        let s = preset_sigma();
        let x = DVector::zeros(3);
        let m = DVector::zeros(3);
        assert!(matches!(
            mahalanobis_sq(&x, &m, &s),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn random_spd(d: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        m.transpose() * &m + DMatrix::identity(d, d) * 0.05
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reconstruction_matches_source(seed in 0u64..1_000, d in 1usize..=8) {
            let s = random_spd(d, seed);
            let dec = spectral_decompose(&s).unwrap();
            let err = (dec.reconstruct() - &s).norm();
            prop_assert!(err <= 1e-10 * (1.0 + s.norm()));
            for i in 1..d {
                prop_assert!(dec.eigenvalues[i - 1] >= dec.eigenvalues[i]);
            }
        }

        #[test]
        fn mahalanobis_equals_whitened_norm(seed in 0u64..1_000, d in 1usize..=6) {
            use rand::{Rng, SeedableRng};
            let s = SpdMatrix::new(random_spd(d, seed)).unwrap();
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0xabcd);
            let x = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
            let m = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
            // whiten through the Cholesky factor: ‖L⁻¹(x−m)‖²
            let chol = s.cholesky().unwrap();
            let diff = &x - &m;
            let whitened = chol.l_dirty().solve_lower_triangular(&diff).unwrap();
            let direct = mahalanobis_sq(&x, &m, &s).unwrap();
            prop_assert!((direct - whitened.norm_squared()).abs() <= 1e-10 * (1.0 + direct));
        }
    }
}
