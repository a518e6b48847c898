//! Voigt algebra for nonsymmetric second-order tensors.
//!
//! A 3x3 tensor is flattened row-major into a 9-vector with the fixed
//! component ordering `[11, 12, 13, 21, 22, 23, 31, 32, 33]`. Every
//! 9-vector (deformation gradients, stresses) and every 9x9 matrix
//! (nominal stiffnesses) in this crate follows that ordering.

use nalgebra::{SMatrix, SVector};

/// Nonsymmetric second-order tensor in Voigt form.
pub type VoigtVec9 = SVector<f64, 9>;
/// Fourth-order (nominal stiffness) tensor in Voigt form.
pub type VoigtMat9 = SMatrix<f64, 9, 9>;
/// Plain 3x3 tensor.
pub type Tensor3 = SMatrix<f64, 3, 3>;

/// Flatten a 3x3 tensor into Voigt ordering.
pub fn voigt_encode(t: &Tensor3) -> VoigtVec9 {
    VoigtVec9::from_fn(|idx, _| t[(idx / 3, idx % 3)])
}

/// Rebuild the 3x3 tensor from its Voigt form.
pub fn voigt_decode(v: &VoigtVec9) -> Tensor3 {
    Tensor3::from_fn(|i, j| v[3 * i + j])
}

/// Voigt index of tensor component (i, j), 0-based.
#[inline]
pub fn voigt_index(i: usize, j: usize) -> usize {
    3 * i + j
}

/// Identity tensor in Voigt form.
pub fn voigt_identity() -> VoigtVec9 {
    voigt_encode(&Tensor3::identity())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_encodes_to_unit_diagonal() {
        let v = voigt_identity();
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn single_off_diagonal_entry_lands_at_fixed_index() {
        let mut t = Tensor3::identity();
        t[(0, 1)] = 0.3;
        let v = voigt_encode(&t);
        assert_eq!(v[1], 0.3);
        assert_eq!(v[voigt_index(0, 1)], 0.3);
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(entries in proptest::array::uniform9(-1e3f64..1e3)) {
            let v = VoigtVec9::from_column_slice(&entries);
            let back = voigt_encode(&voigt_decode(&v));
            prop_assert_eq!(v, back);
        }
    }
}
