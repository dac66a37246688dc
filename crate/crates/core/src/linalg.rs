//! Dense complex linear algebra for small unitary matrices: exponential,
//! principal logarithm with a branch-cut guard at -1, operator norms, and
//! seeded random anti-Hermitian generators.

use crate::error::KareaError;
use crate::scalar::{sc, Scalar};
use nalgebra::{Complex, DMatrix, Schur, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Square complex matrix with generic real scalar.
pub type CMat<S> = DMatrix<Complex<S>>;

/// |z| without requiring `Float` on the scalar.
fn cnorm<S: Scalar>(z: Complex<S>) -> S {
    (z.re * z.re + z.im * z.im).sqrt()
}

pub fn identity<S: Scalar>(r: usize) -> CMat<S> {
    DMatrix::identity(r, r)
}

pub fn fro_norm<S: Scalar>(a: &CMat<S>) -> S {
    let mut acc = S::zero();
    for z in a.iter() {
        acc += z.norm_sqr();
    }
    acc.sqrt()
}

/// Operator (spectral) norm via the Hermitian eigenvalues of `A^H A`.
pub fn op_norm<S: Scalar>(a: &CMat<S>) -> S {
    let r = a.nrows();
    if r == 0 {
        return S::zero();
    }
    if r == 1 {
        return cnorm(a[(0, 0)]);
    }
    let gram = a.adjoint() * a;
    let eig = SymmetricEigen::new(gram);
    let mut max = S::zero();
    for &v in eig.eigenvalues.iter() {
        if v > max {
            max = v;
        }
    }
    max.sqrt()
}

/// `‖U^H U − I‖` as a unitarity defect measure.
pub fn unitarity_defect<S: Scalar>(u: &CMat<S>) -> S {
    let r = u.nrows();
    op_norm(&(u.adjoint() * u - identity::<S>(r)))
}

/// Anti-Hermitian projection `(A − A^H)/2`.
pub fn antiherm_project<S: Scalar>(a: &CMat<S>) -> CMat<S> {
    let h = a.adjoint();
    (a - h).scale(sc(0.5))
}

/// Matrix exponential by scaling-and-squaring with a Taylor kernel.
/// Accurate to machine precision for the small norms used here.
pub fn expm<S: Scalar>(a: &CMat<S>) -> CMat<S> {
    let r = a.nrows();
    let norm = fro_norm(a);
    let mut squarings = 0u32;
    let mut scaled = a.clone();
    let quarter: S = sc(0.25);
    if norm > quarter {
        let ratio = norm / quarter;
        squarings = ratio.log2().ceil().to_u32().unwrap_or(0).min(60);
        let factor = sc::<S>(0.5).powi(squarings as i32);
        scaled.scale_mut(factor);
    }
    let mut term = identity::<S>(r);
    let mut sum = identity::<S>(r);
    for k in 1..=24 {
        term = (&term * &scaled).scale(S::one() / sc(k as f64));
        sum += &term;
        if fro_norm(&term) < sc(1e-20) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Exponential of an anti-Hermitian matrix, re-unitarized to suppress
/// rounding drift.
pub fn expm_antiherm<S: Scalar>(a: &CMat<S>) -> CMat<S> {
    reunitarize(&expm(a))
}

/// Nearest unitary by a few Newton polar iterations `X <- (X + X^{-H})/2`.
pub fn reunitarize<S: Scalar>(u: &CMat<S>) -> CMat<S> {
    let mut x = u.clone();
    for _ in 0..4 {
        let inv_h = match x.clone().try_inverse() {
            Some(inv) => inv.adjoint(),
            None => return x,
        };
        x = (&x + inv_h).scale(sc(0.5));
        if unitarity_defect(&x) < sc(1e-15) {
            break;
        }
    }
    x
}

/// Spectral decomposition of a unitary matrix: unit-modulus eigenvalues and
/// an orthonormal eigenbasis.
///
/// The complex Schur form of a normal matrix is diagonal, so the Schur
/// vectors are an orthonormal eigenbasis.
pub fn unitary_eigen<S: Scalar>(u: &CMat<S>) -> (Vec<Complex<S>>, CMat<S>) {
    let r = u.nrows();
    if r == 1 {
        let z = u[(0, 0)];
        let z = z / Complex::new(cnorm(z), S::zero());
        return (vec![z], identity::<S>(1));
    }
    let (q, _) = Schur::new(u.clone()).unpack();
    let mut values = Vec::with_capacity(r);
    for k in 0..r {
        let v = q.column(k);
        // Rayleigh quotient instead of t[(k,k)]: quadratic accuracy in any
        // residual Schur off-diagonal.
        let lambda = (v.adjoint() * u * v)[(0, 0)];
        let n = cnorm(lambda);
        let lambda = if n > S::zero() {
            lambda / Complex::new(n, S::zero())
        } else {
            Complex::new(S::one(), S::zero())
        };
        values.push(lambda);
    }
    (values, q)
}

/// Smallest distance from an eigenvalue of the unitary `u` to -1.
pub fn branch_cut_distance<S: Scalar>(u: &CMat<S>) -> S {
    let (values, _) = unitary_eigen(u);
    let mut min = sc::<S>(f64::MAX);
    for z in values {
        let d = cnorm(z + Complex::new(S::one(), S::zero()));
        if d < min {
            min = d;
        }
    }
    min
}

/// Principal logarithm of a unitary matrix; anti-Hermitian by construction.
///
/// Errors when an eigenvalue sits within `guard` of the branch cut at -1.
pub fn unitary_log<S: Scalar>(u: &CMat<S>, guard: S) -> Result<CMat<S>, KareaError> {
    let r = u.nrows();
    if r == 1 {
        let z = u[(0, 0)];
        let dist = cnorm(z + Complex::new(S::one(), S::zero()));
        if dist < guard {
            return Err(KareaError::BranchCut {
                distance: dist.to_f64().unwrap_or(0.0),
            });
        }
        let theta = z.im.atan2(z.re);
        let mut out = CMat::<S>::zeros(1, 1);
        out[(0, 0)] = Complex::new(S::zero(), theta);
        return Ok(out);
    }
    let (values, vectors) = unitary_eigen(u);
    let mut log_diag = CMat::<S>::zeros(r, r);
    for (k, z) in values.iter().enumerate() {
        let dist = cnorm(*z + Complex::new(S::one(), S::zero()));
        if dist < guard {
            return Err(KareaError::BranchCut {
                distance: dist.to_f64().unwrap_or(0.0),
            });
        }
        let theta = z.im.atan2(z.re);
        log_diag[(k, k)] = Complex::new(S::zero(), theta);
    }
    let log = &vectors * log_diag * vectors.adjoint();
    Ok(antiherm_project(&log))
}

/// Seeded Gaussian anti-Hermitian matrix with operator norm capped at
/// `amplitude`.
pub fn random_antihermitian<S: Scalar, R: Rng>(rng: &mut R, rank: usize, amplitude: S) -> CMat<S> {
    let mut a = CMat::<S>::zeros(rank, rank);
    let normal = StandardNormal;
    for i in 0..rank {
        for j in 0..rank {
            let re: f64 = normal.sample(rng);
            let im: f64 = normal.sample(rng);
            a[(i, j)] = Complex::new(sc(re), sc(im));
        }
    }
    let mut a = antiherm_project(&a);
    if amplitude <= S::zero() {
        return CMat::<S>::zeros(rank, rank);
    }
    let n = op_norm(&a);
    if n > amplitude {
        a.scale_mut(amplitude / n);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_unitary(rng: &mut ChaCha8Rng, r: usize, amp: f64) -> CMat<f64> {
        expm_antiherm(&random_antihermitian(rng, r, amp))
    }

    #[test]
    fn expm_matches_scalar_exponential() {
        let mut a = CMat::<f64>::zeros(1, 1);
        a[(0, 0)] = Complex::new(0.0, 0.7);
        let e = expm(&a);
        assert!((e[(0, 0)].re - 0.7f64.cos()).abs() < 1e-14);
        assert!((e[(0, 0)].im - 0.7f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn log_inverts_exp_on_random_antihermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for r in 1..=4 {
            for _ in 0..20 {
                let a = random_antihermitian(&mut rng, r, 1.2);
                let u = expm_antiherm(&a);
                let l = unitary_log(&u, 1e-6).unwrap();
                assert!(
                    op_norm(&(l - a)) < 1e-10,
                    "log(exp(A)) != A at rank {}",
                    r
                );
            }
        }
    }

    #[test]
    fn exp_of_log_recovers_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for r in 1..=4 {
            for _ in 0..20 {
                let u = rand_unitary(&mut rng, r, 2.0);
                if branch_cut_distance(&u) < 1e-3 {
                    continue;
                }
                let l = unitary_log(&u, 1e-6).unwrap();
                let back = expm_antiherm(&l);
                assert!(op_norm(&(back - u)) < 1e-10);
            }
        }
    }

    #[test]
    fn log_rejects_branch_cut() {
        let mut u = identity::<f64>(2);
        u[(1, 1)] = Complex::new(-1.0, 1e-9);
        let u = reunitarize(&u);
        assert!(unitary_log(&u, 1e-6).is_err());
    }

    #[test]
    fn degenerate_cosine_pair_is_split() {
        // diag(e^{i t}, e^{-i t}): equal cosines, opposite sines.
        let t = 0.9f64;
        let mut u = CMat::<f64>::zeros(2, 2);
        u[(0, 0)] = Complex::new(t.cos(), t.sin());
        u[(1, 1)] = Complex::new(t.cos(), -t.sin());
        let l = unitary_log(&u, 1e-6).unwrap();
        let back = expm_antiherm(&l);
        assert!(op_norm(&(back - u)) < 1e-12);
    }

    #[test]
    fn random_antihermitian_is_deterministic_and_capped() {
        let a = random_antihermitian::<f64, _>(&mut ChaCha8Rng::seed_from_u64(3), 3, 0.01);
        let b = random_antihermitian::<f64, _>(&mut ChaCha8Rng::seed_from_u64(3), 3, 0.01);
        assert_eq!(a, b);
        assert!(op_norm(&a) <= 0.01 + 1e-15);
        assert!(op_norm(&(a.adjoint() + &a)) < 1e-15);
    }

    #[test]
    fn op_norm_of_diagonal() {
        let mut a = CMat::<f64>::zeros(2, 2);
        a[(0, 0)] = Complex::new(0.0, -3.0);
        a[(1, 1)] = Complex::new(2.0, 0.0);
        assert!((op_norm(&a) - 3.0).abs() < 1e-12);
    }
}
