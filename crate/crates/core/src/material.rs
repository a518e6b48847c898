//! Hyperelastic material kernels: first Piola-Kirchhoff stress and the
//! nominal tangent `A = dP/dF`, both in Voigt form.
//!
//! Two laws are provided. The compressible neo-Hooke model
//! `W = mu/2 (tr(F^T F) - 3) - mu ln J + lambda/2 (ln J)^2` is the working
//! model; the linear-elastic law `P = C : (F - I)` is exactly affine in F
//! and serves as an exactness oracle for the reduced solvers.

use crate::error::{Error, Result};
use crate::voigt::{voigt_decode, voigt_encode, voigt_index, Tensor3, VoigtMat9, VoigtVec9};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaterialKind {
    NeoHooke,
    LinearElastic,
}

/// Isotropic material with Young's modulus `E` (N mm^-2) and Poisson ratio `nu`.
#[derive(Debug, Clone, Copy)]
pub struct Material {
    pub kind: MaterialKind,
    pub e: f64,
    pub nu: f64,
}

impl Material {
    pub fn new(kind: MaterialKind, e: f64, nu: f64) -> Result<Self> {
        if !(e > 0.0) {
            return Err(Error::Config(format!(
                "Young's modulus must be positive, got {e}"
            )));
        }
        if !(nu > -1.0 && nu < 0.5) {
            return Err(Error::Config(format!(
                "Poisson ratio must lie in (-1, 0.5), got {nu}"
            )));
        }
        Ok(Self { kind, e, nu })
    }

    pub fn neo_hooke(e: f64, nu: f64) -> Result<Self> {
        Self::new(MaterialKind::NeoHooke, e, nu)
    }

    pub fn linear_elastic(e: f64, nu: f64) -> Result<Self> {
        Self::new(MaterialKind::LinearElastic, e, nu)
    }

    /// Lame constants (lambda, mu).
    pub fn lame(&self) -> (f64, f64) {
        let lambda = self.e * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu));
        let mu = self.e / (2.0 * (1.0 + self.nu));
        (lambda, mu)
    }

    /// Stored energy density W(F).
    pub fn stored_energy(&self, f: &VoigtVec9) -> Result<f64> {
        let (lambda, mu) = self.lame();
        let t = voigt_decode(f);
        let det = checked_det(&t)?;
        match self.kind {
            MaterialKind::NeoHooke => {
                let ln_j = det.ln();
                let i1 = t.norm_squared();
                Ok(0.5 * mu * (i1 - 3.0) - mu * ln_j + 0.5 * lambda * ln_j * ln_j)
            }
            MaterialKind::LinearElastic => {
                let eps = t - Tensor3::identity();
                let tr = eps.trace();
                let sym = 0.5 * (eps + eps.transpose());
                // W = lambda/2 tr(eps)^2 + mu eps : sym(eps)
                Ok(0.5 * lambda * tr * tr + mu * eps.dot(&sym))
            }
        }
    }
}

fn checked_det(t: &Tensor3) -> Result<f64> {
    let det = t.determinant();
    if det <= 0.0 {
        return Err(Error::NonPositiveJacobian { det });
    }
    Ok(det)
}

/// Constant isotropic stiffness in Voigt form:
/// `C[(iJ),(kL)] = lambda d_iJ d_kL + mu (d_ik d_JL + d_iL d_Jk)`.
fn isotropic_stiffness(lambda: f64, mu: f64) -> VoigtMat9 {
    let mut c = VoigtMat9::zeros();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let mut v = 0.0;
                    if i == j && k == l {
                        v += lambda;
                    }
                    if i == k && j == l {
                        v += mu;
                    }
                    if i == l && j == k {
                        v += mu;
                    }
                    c[(voigt_index(i, j), voigt_index(k, l))] = v;
                }
            }
        }
    }
    c
}

fn neo_hooke_pk1(lambda: f64, mu: f64, t: &Tensor3, det: f64) -> Tensor3 {
    let f_inv_t = t.try_inverse().expect("det > 0 checked").transpose();
    t * mu + f_inv_t * (lambda * det.ln() - mu)
}

fn neo_hooke_tangent(lambda: f64, mu: f64, t: &Tensor3, det: f64) -> VoigtMat9 {
    let f_inv = t.try_inverse().expect("det > 0 checked");
    let ln_j = det.ln();
    let mut a = VoigtMat9::zeros();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let mut v = lambda * f_inv[(j, i)] * f_inv[(l, k)]
                        + (mu - lambda * ln_j) * f_inv[(j, k)] * f_inv[(l, i)];
                    if i == k && j == l {
                        v += mu;
                    }
                    a[(voigt_index(i, j), voigt_index(k, l))] = v;
                }
            }
        }
    }
    a
}

/// Access to stress and tangent evaluations. The reduced solvers are generic
/// over this trait so call counts and substitute laws can be injected.
pub trait Constitutive {
    fn pk1(&self, f: &VoigtVec9) -> Result<VoigtVec9>;
    fn tangent(&self, f: &VoigtVec9) -> Result<VoigtMat9>;
    /// One kernel invocation yielding both stress and tangent.
    fn pk1_and_tangent(&self, f: &VoigtVec9) -> Result<(VoigtVec9, VoigtMat9)>;
    /// Stiffness scale used for absolute solver tolerances.
    fn stiffness_scale(&self) -> f64;
}

impl Constitutive for Material {
    fn pk1(&self, f: &VoigtVec9) -> Result<VoigtVec9> {
        let (lambda, mu) = self.lame();
        let t = voigt_decode(f);
        let det = checked_det(&t)?;
        match self.kind {
            MaterialKind::NeoHooke => Ok(voigt_encode(&neo_hooke_pk1(lambda, mu, &t, det))),
            MaterialKind::LinearElastic => {
                let c = isotropic_stiffness(lambda, mu);
                Ok(c * (f - crate::voigt::voigt_identity()))
            }
        }
    }

    fn tangent(&self, f: &VoigtVec9) -> Result<VoigtMat9> {
        let (lambda, mu) = self.lame();
        let t = voigt_decode(f);
        let det = checked_det(&t)?;
        match self.kind {
            MaterialKind::NeoHooke => Ok(neo_hooke_tangent(lambda, mu, &t, det)),
            MaterialKind::LinearElastic => Ok(isotropic_stiffness(lambda, mu)),
        }
    }

    fn pk1_and_tangent(&self, f: &VoigtVec9) -> Result<(VoigtVec9, VoigtMat9)> {
        let (lambda, mu) = self.lame();
        let t = voigt_decode(f);
        let det = checked_det(&t)?;
        match self.kind {
            MaterialKind::NeoHooke => Ok((
                voigt_encode(&neo_hooke_pk1(lambda, mu, &t, det)),
                neo_hooke_tangent(lambda, mu, &t, det),
            )),
            MaterialKind::LinearElastic => {
                let c = isotropic_stiffness(lambda, mu);
                Ok((c * (f - crate::voigt::voigt_identity()), c))
            }
        }
    }

    fn stiffness_scale(&self) -> f64 {
        self.e
    }
}

/// Wrapper counting kernel invocations, used to verify the offline/online
/// work split of the reduced solvers.
pub struct CountingMaterial<'a, M: Constitutive> {
    inner: &'a M,
    count: std::cell::Cell<u64>,
}

impl<'a, M: Constitutive> CountingMaterial<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            count: std::cell::Cell::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.count.get()
    }

    pub fn reset(&self) {
        self.count.set(0);
    }

    fn bump(&self) {
        self.count.set(self.count.get() + 1);
    }
}

impl<M: Constitutive> Constitutive for CountingMaterial<'_, M> {
    fn pk1(&self, f: &VoigtVec9) -> Result<VoigtVec9> {
        self.bump();
        self.inner.pk1(f)
    }

    fn tangent(&self, f: &VoigtVec9) -> Result<VoigtMat9> {
        self.bump();
        self.inner.tangent(f)
    }

    fn pk1_and_tangent(&self, f: &VoigtVec9) -> Result<(VoigtVec9, VoigtMat9)> {
        self.bump();
        self.inner.pk1_and_tangent(f)
    }

    fn stiffness_scale(&self) -> f64 {
        self.inner.stiffness_scale()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voigt::voigt_identity;
    use nalgebra::SMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_admissible_f(rng: &mut ChaCha12Rng, scale: f64) -> VoigtVec9 {
        loop {
            let mut f = voigt_identity();
            for k in 0..9 {
                f[k] += scale * (rng.random::<f64>() * 2.0 - 1.0);
            }
            if voigt_decode(&f).determinant() > 0.3 {
                return f;
            }
        }
    }

    /// Central finite differences of the stored energy.
    fn fd_stress(mat: &Material, f: &VoigtVec9, h: f64) -> VoigtVec9 {
        VoigtVec9::from_fn(|k, _| {
            let mut fp = *f;
            let mut fm = *f;
            fp[k] += h;
            fm[k] -= h;
            (mat.stored_energy(&fp).unwrap() - mat.stored_energy(&fm).unwrap()) / (2.0 * h)
        })
    }

    /// Central finite differences of the stress.
    fn fd_tangent(mat: &Material, f: &VoigtVec9, h: f64) -> VoigtMat9 {
        let mut a = VoigtMat9::zeros();
        for l in 0..9 {
            let mut fp = *f;
            let mut fm = *f;
            fp[l] += h;
            fm[l] -= h;
            let dp = (mat.pk1(&fp).unwrap() - mat.pk1(&fm).unwrap()) / (2.0 * h);
            a.set_column(l, &dp);
        }
        a
    }

    #[test]
    fn neo_hooke_is_stress_free_at_identity() {
        let mat = Material::neo_hooke(1000.0, 0.25).unwrap();
        let p = mat.pk1(&voigt_identity()).unwrap();
        assert_eq!(p.norm(), 0.0);
    }

    #[test]
    fn linear_elastic_is_stress_free_at_identity() {
        let mat = Material::linear_elastic(1000.0, 0.25).unwrap();
        let p = mat.pk1(&voigt_identity()).unwrap();
        assert_eq!(p.norm(), 0.0);
    }

    #[test]
    fn lame_constants_for_reference_parameters() {
        let mat = Material::neo_hooke(1000.0, 0.25).unwrap();
        let (lambda, mu) = mat.lame();
        assert!((lambda - 400.0).abs() < 1e-12);
        assert!((mu - 400.0).abs() < 1e-12);
    }

    #[test]
    fn neo_hooke_uniaxial_stretch_matches_frozen_oracle() {
        // Frozen from P = mu (F - F^-T) + lambda ln J F^-T at
        // E = 1000, nu = 0.25, F = diag(1.1, 1, 1), cross-checked below
        // against finite differences of the stored energy.
        let mat = Material::neo_hooke(1000.0, 0.25).unwrap();
        let mut f = voigt_identity();
        f[0] = 1.1;
        let p = mat.pk1(&f).unwrap();
        assert!((p[0] - 111.02188356520905).abs() < 1e-8);
        assert!((p[4] - 38.124071921729944).abs() < 1e-8);
        assert!((p[8] - 38.124071921729944).abs() < 1e-8);
        for k in [1, 2, 3, 5, 6, 7] {
            assert_eq!(p[k], 0.0);
        }
        let p_fd = fd_stress(&mat, &f, 1e-6);
        assert!((p - p_fd).norm() / p.norm() < 1e-7);
    }

    #[test]
    fn non_positive_jacobian_is_rejected() {
        let mat = Material::neo_hooke(1000.0, 0.25).unwrap();
        let mut f = voigt_identity();
        f[0] = -1.0;
        assert!(matches!(
            mat.pk1(&f),
            Err(Error::NonPositiveJacobian { .. })
        ));
        assert!(matches!(
            mat.tangent(&f),
            Err(Error::NonPositiveJacobian { .. })
        ));
    }

    #[test]
    fn linear_tangent_is_constant() {
        let mat = Material::linear_elastic(1000.0, 0.25).unwrap();
        let a0 = mat.tangent(&voigt_identity()).unwrap();
        let mut f = voigt_identity();
        f[1] += 0.1;
        let a1 = mat.tangent(&f).unwrap();
        assert_eq!(a0, a1);
    }

    #[test]
    fn neo_hooke_tangent_at_identity_is_isotropic() {
        let mat = Material::neo_hooke(1000.0, 0.25).unwrap();
        let a = mat.tangent(&voigt_identity()).unwrap();
        let (lambda, mu) = mat.lame();
        let c = isotropic_stiffness(lambda, mu);
        assert!((a - c).norm() < 1e-12);
        let a_fd = fd_tangent(&mat, &voigt_identity(), 1e-6);
        assert!((a - a_fd).norm() / a_fd.norm() < 1e-6);
    }

    #[test]
    fn tangent_matches_finite_differences_at_random_states() {
        let mat = Material::neo_hooke(1000.0, 0.25).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..20 {
            let f = random_admissible_f(&mut rng, 0.2);
            let a = mat.tangent(&f).unwrap();
            let a_fd = fd_tangent(&mat, &f, 1e-6);
            assert!((a - a_fd).norm() / a_fd.norm() < 1e-6);
        }
    }

    #[test]
    fn tangent_has_major_symmetry() {
        let mat = Material::neo_hooke(1000.0, 0.25).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..10 {
            let f = random_admissible_f(&mut rng, 0.2);
            let a = mat.tangent(&f).unwrap();
            assert!((a - a.transpose()).norm() / a.norm() < 1e-10);
        }
    }

    #[test]
    fn closed_strain_loop_does_no_net_work() {
        let mat = Material::neo_hooke(1000.0, 0.25).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let d1 = random_admissible_f(&mut rng, 1.0) - voigt_identity();
        let d2 = random_admissible_f(&mut rng, 1.0) - voigt_identity();
        let (d1, d2) = (d1.normalize() * 0.05, d2.normalize() * 0.05);
        let n = 1000;
        let f_at = |k: usize| {
            let t = 2.0 * std::f64::consts::PI * (k as f64) / (n as f64);
            voigt_identity() + d1 * t.cos() + d2 * t.sin() - d1
        };
        let mut work = 0.0;
        let mut path_len = 0.0;
        for k in 0..n {
            let fa = f_at(k);
            let fb = f_at(k + 1);
            let pm = mat.pk1(&((fa + fb) * 0.5)).unwrap();
            work += pm.dot(&(fb - fa));
            path_len += (fb - fa).norm();
        }
        assert!(work.abs() < 1e-6 * path_len * mat.e);
    }

    #[test]
    fn linear_law_is_exactly_affine() {
        let mat = Material::linear_elastic(700.0, 0.3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let f1 = random_admissible_f(&mut rng, 0.3);
        let f2 = random_admissible_f(&mut rng, 0.3);
        let i = voigt_identity();
        let lhs = mat.pk1(&f1).unwrap() + mat.pk1(&f2).unwrap() - mat.pk1(&i).unwrap();
        let rhs = mat.pk1(&(f1 + f2 - i)).unwrap();
        assert!((lhs - rhs).norm() <= 1e-12 * mat.e);
    }

    #[test]
    fn counting_material_counts_each_invocation() {
        let mat = Material::neo_hooke(1000.0, 0.25).unwrap();
        let counting = CountingMaterial::new(&mat);
        let f = voigt_identity();
        counting.pk1(&f).unwrap();
        counting.pk1_and_tangent(&f).unwrap();
        assert_eq!(counting.calls(), 2);
        counting.reset();
        assert_eq!(counting.calls(), 0);
    }

    #[test]
    fn stiffness_matrix_has_expected_block_values() {
        // Spot-check C entries against the closed isotropic form.
        let c = isotropic_stiffness(400.0, 400.0);
        assert_eq!(c[(0, 0)], 1200.0); // lambda + 2 mu
        assert_eq!(c[(0, 4)], 400.0); // lambda
        assert_eq!(c[(1, 1)], 400.0); // mu
        assert_eq!(c[(1, 3)], 400.0); // mu (coupling 12-21)
        let sym: SMatrix<f64, 9, 9> = c - c.transpose();
        assert_eq!(sym.norm(), 0.0);
    }
}
