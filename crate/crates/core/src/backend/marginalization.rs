//! Gaussian priors left behind by eliminating variables.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::backend::state::{VarKey, VarValue};
use crate::manifold::right_jacobian_inv;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RELATIVE_EIGEN_FLOOR: f64 = 1e-12;

/// Schur complement of the quadratic `½xᵀHx + bᵀx` after minimizing over
/// the indices in `marg`. Returns `(H*, b*)` over `keep` in the given order.
pub fn schur_complement(
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    marg: &[usize],
    keep: &[usize],
) -> (DMatrix<f64>, DVector<f64>) {
    let hmm = h.select_rows(marg).select_columns(marg);
    let hkm = h.select_rows(keep).select_columns(marg);
    let hkk = h.select_rows(keep).select_columns(keep);
    let bm = b.select_rows(marg);
    let bk = b.select_rows(keep);
    let inv = pseudo_inverse_sym(&hmm);
    let hkm_inv = &hkm * inv;
    let mut hs = hkk - &hkm_inv * hkm.transpose();
    hs = (&hs + hs.transpose()) * 0.5;
    let bs = bk - hkm_inv * bm;
    (hs, bs)
}

/// Pseudo-inverse of a symmetric PSD matrix.
pub fn pseudo_inverse_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let floor = max * RELATIVE_EIGEN_FLOOR;
    let inv = eig.eigenvalues.map(|v| if v > floor { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Prior `½‖r₀ + J (x ⊟ x₀)‖²` over a set of variables, linearized at `x₀`.
#[derive(Clone, Debug)]
pub struct MarginalizationPrior {
    pub keys: Vec<VarKey>,
    pub linearization: Vec<VarValue>,
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
    /// Negative eigenvalues clipped when this prior was formed.
    pub clipped: usize,
}

impl MarginalizationPrior {
    /// Builds the square-root form of the quadratic `(H, b)` (gradient `b`
    /// at the linearization point).
    pub fn from_information(
        keys: Vec<VarKey>,
        linearization: Vec<VarValue>,
        h: &DMatrix<f64>,
        b: &DVector<f64>,
    ) -> Self {
        let n = h.nrows();
        debug_assert_eq!(n, keys.iter().map(|k| k.dim()).sum::<usize>());
        let sym = (h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let floor = (max * RELATIVE_EIGEN_FLOOR).max(1e-300);
        let clipped = eig.eigenvalues.iter().filter(|&&v| v < -1e-9).count();
        let kept: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > floor).collect();
        let mut jacobian = DMatrix::zeros(kept.len(), n);
        let mut residual = DVector::zeros(kept.len());
        for (row, &i) in kept.iter().enumerate() {
            let s = eig.eigenvalues[i].sqrt();
            let v = eig.eigenvectors.column(i);
            jacobian.row_mut(row).copy_from(&(v.transpose() * s));
            residual[row] = v.dot(b) / s;
        }
        Self {
            keys,
            linearization,
            jacobian,
            residual,
            clipped,
        }
    }

    pub fn dim(&self) -> usize {
        self.jacobian.ncols()
    }

    pub fn contains(&self, key: &VarKey) -> bool {
        self.keys.contains(key)
    }

    /// Information matrix `JᵀJ` and gradient `Jᵀr₀` at the linearization point.
    pub fn information(&self) -> (DMatrix<f64>, DVector<f64>) {
        let jt = self.jacobian.transpose();
        (&jt * &self.jacobian, jt * &self.residual)
    }

    /// Residual and Jacobian (w.r.t. right perturbations of `values`) at the
    /// given variable values, which must follow `self.keys`.
    pub fn evaluate(&self, values: &[VarValue]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim();
        let mut dx = vec![0.0; n];
        let mut jac = self.jacobian.clone();
        let mut off = 0;
        for (v, lin) in values.iter().zip(&self.linearization) {
            let d = v.dim();
            if let Some((rot, phi)) = v.minus_into(lin, &mut dx[off..off + d]) {
                let jr = right_jacobian_inv(&phi);
                let cols = self.jacobian.columns(off + rot, 3) * jr;
                jac.columns_mut(off + rot, 3).copy_from(&cols);
            }
            off += d;
        }
        let r = &self.residual + &self.jacobian * DVector::from_vec(dx);
        (r, jac)
    }

    pub fn cost(&self, values: &[VarValue]) -> f64 {
        self.evaluate(values).0.norm_squared()
    }

    /// Marginalizes `key` out of this prior alone.
    pub fn eliminate(&self, key: &VarKey) -> Option<MarginalizationPrior> {
        let pos = self.keys.iter().position(|k| k == key)?;
        let mut off = 0;
        let mut marg = Vec::new();
        let mut keep = Vec::new();
        for (i, k) in self.keys.iter().enumerate() {
            let range = off..off + k.dim();
            if i == pos {
                marg.extend(range);
            } else {
                keep.extend(range);
            }
            off += k.dim();
        }
        let (h, b) = self.information();
        let (hs, bs) = schur_complement(&h, &b, &marg, &keep);
        let mut keys = self.keys.clone();
        let mut lin = self.linearization.clone();
        keys.remove(pos);
        lin.remove(pos);
        if keys.is_empty() {
            return None;
        }
        Some(Self::from_information(keys, lin, &hs, &bs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schur_of_block_diagonal_is_trivial() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 4.0]));
        let b = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let (hs, bs) = schur_complement(&h, &b, &[0], &[1, 2]);
        assert_eq!(hs, DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0])));
        assert_eq!(bs, DVector::from_vec(vec![1.0, 1.0]));
    }

    #[test]
    fn sqrt_form_reproduces_information() {
        let a = DMatrix::from_fn(8, 7, |i, j| ((i * 7 + j) as f64 * 0.37).sin());
        let h = a.transpose() * &a;
        let b = a.transpose() * DVector::from_fn(8, |i, _| i as f64 * 0.1);
        let keys = vec![VarKey::TimeOffset(0); 7];
        let lin = vec![VarValue::TimeOffset(0.0); 7];
        let p = MarginalizationPrior::from_information(keys, lin, &h, &b);
        let (h2, b2) = p.information();
        assert!((h2 - h).norm() < 1e-9);
        assert!((b2 - b).norm() < 1e-9);
        assert_eq!(p.clipped, 0);
    }
}
