//! Synthetic strongly-convex local objectives with a closed-form optimum.
//!
//! Client `i` holds `f_i(x) = ½ (x - b_i)ᵀ Q_i (x - b_i)` with
//! `μ I ⪯ Q_i ⪯ L I`. The global objective is the plain average, whose
//! minimizer is `x* = (Σ Q_i)⁻¹ Σ Q_i b_i`. Stochastic gradients add
//! isotropic Gaussian noise with `E‖ξ‖² = σ²` exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{axpy, cholesky_solve, dist_sq, dot, matvec, norm_sq, random_orthogonal, symmetric_eigenvalues};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("strong-convexity constant must be positive, got {0}")]
    NonpositiveMu(f64),
    #[error("mu = {mu} exceeds smoothness constant L = {l}")]
    MuExceedsSmoothness { mu: f64, l: f64 },
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("ensemble needs at least one client")]
    ZeroClients,
    #[error("heterogeneity must be nonnegative, got {0}")]
    NegativeHeterogeneity(f64),
    #[error("noise level must be nonnegative, got {0}")]
    NegativeSigma(f64),
    #[error("client {client}: {what}")]
    Shape { client: usize, what: String },
    #[error("client {client}: spectrum [{min}, {max}] not inside [mu, L]")]
    SpectrumOutOfBounds { client: usize, min: f64, max: f64 },
    #[error("summed curvature is not positive definite")]
    SingularAverage,
}

/// Parameters for [`make_quadratic_ensemble`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec<T> {
    pub n: usize,
    pub d: usize,
    pub mu: T,
    pub l_smooth: T,
    /// Spread of local minimizers around a shared center; 0 is IID.
    pub heterogeneity: T,
    pub sigma: T,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEnsemble<T> {
    d: usize,
    curvature: Vec<Vec<T>>,
    targets: Vec<Vec<T>>,
    mu: T,
    l_smooth: T,
    sigma: T,
    optimum: Vec<T>,
}

fn validate_constants<T: Scalar>(mu: T, l_smooth: T, sigma: T) -> Result<(), ObjectiveError> {
    if !(mu > T::zero()) {
        return Err(ObjectiveError::NonpositiveMu(mu.as_f64()));
    }
    if !(mu <= l_smooth) {
        return Err(ObjectiveError::MuExceedsSmoothness { mu: mu.as_f64(), l: l_smooth.as_f64() });
    }
    if !(sigma >= T::zero()) {
        return Err(ObjectiveError::NegativeSigma(sigma.as_f64()));
    }
    Ok(())
}

/// Draws a quadratic ensemble. Deterministic in `spec.seed`.
///
/// Each `Q_i` has eigenvalues uniform in `[μ, L]` in a random orthonormal
/// basis; `b_i = b₀ + heterogeneity · u_i` with `u_i` a random unit vector.
pub fn make_quadratic_ensemble<T: Scalar>(spec: &EnsembleSpec<T>) -> Result<ObjectiveEnsemble<T>, ObjectiveError> {
    validate_constants(spec.mu, spec.l_smooth, spec.sigma)?;
    if spec.d == 0 {
        return Err(ObjectiveError::ZeroDimension);
    }
    if spec.n == 0 {
        return Err(ObjectiveError::ZeroClients);
    }
    if !(spec.heterogeneity >= T::zero()) {
        return Err(ObjectiveError::NegativeHeterogeneity(spec.heterogeneity.as_f64()));
    }
    let d = spec.d;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let center: Vec<T> = (0..d).map(|_| T::sample_standard_normal(&mut rng)).collect();

    let mut curvature = Vec::with_capacity(spec.n);
    let mut targets = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let basis: Vec<T> = random_orthogonal(d, &mut rng);
        let spectrum: Vec<T> = (0..d)
            .map(|_| spec.mu + (spec.l_smooth - spec.mu) * T::sample_unit(&mut rng))
            .collect();
        let mut q = vec![T::zero(); d * d];
        for r in 0..d {
            for c in r..d {
                let v: T = (0..d).map(|k| basis[k * d + r] * spectrum[k] * basis[k * d + c]).sum();
                q[r * d + c] = v;
                q[c * d + r] = v;
            }
        }
        curvature.push(q);

        let direction = random_unit(d, &mut rng);
        let mut b = center.clone();
        axpy(spec.heterogeneity, &direction, &mut b);
        targets.push(b);
    }
    // generated spectra lie in [mu, L] by construction; skip the eigen check
    ObjectiveEnsemble::assemble(d, curvature, targets, spec.mu, spec.l_smooth, spec.sigma)
}

fn random_unit<T: Scalar, R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<T> {
    loop {
        let v: Vec<T> = (0..d).map(|_| T::sample_standard_normal(rng)).collect();
        let norm = norm_sq(&v).sqrt();
        if norm > T::lit(1e-8) {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl<T: Scalar> ObjectiveEnsemble<T> {
    /// Builds from explicit row-major `d x d` curvatures and targets after
    /// checking symmetry and `μ I ⪯ Q_i ⪯ L I`.
    pub fn from_parts(
        curvature: Vec<Vec<T>>,
        targets: Vec<Vec<T>>,
        mu: T,
        l_smooth: T,
        sigma: T,
    ) -> Result<Self, ObjectiveError> {
        validate_constants(mu, l_smooth, sigma)?;
        if curvature.is_empty() {
            return Err(ObjectiveError::ZeroClients);
        }
        if curvature.len() != targets.len() {
            return Err(ObjectiveError::Shape {
                client: curvature.len().min(targets.len()),
                what: format!("{} curvatures but {} targets", curvature.len(), targets.len()),
            });
        }
        let d = targets[0].len();
        if d == 0 {
            return Err(ObjectiveError::ZeroDimension);
        }
        let slack = T::lit(1e-9) * l_smooth;
        for (client, (q, b)) in curvature.iter().zip(&targets).enumerate() {
            if b.len() != d || q.len() != d * d {
                return Err(ObjectiveError::Shape { client, what: format!("expected d = {d}") });
            }
            for r in 0..d {
                for c in 0..r {
                    if (q[r * d + c] - q[c * d + r]).abs() > slack {
                        return Err(ObjectiveError::Shape { client, what: "curvature not symmetric".into() });
                    }
                }
            }
            let ev = symmetric_eigenvalues(q, d);
            let (min, max) = (ev[0], ev[d - 1]);
            if min < mu - slack || max > l_smooth + slack {
                return Err(ObjectiveError::SpectrumOutOfBounds { client, min: min.as_f64(), max: max.as_f64() });
            }
        }
        Self::assemble(d, curvature, targets, mu, l_smooth, sigma)
    }

    fn assemble(
        d: usize,
        curvature: Vec<Vec<T>>,
        targets: Vec<Vec<T>>,
        mu: T,
        l_smooth: T,
        sigma: T,
    ) -> Result<Self, ObjectiveError> {
        let mut q_sum = vec![T::zero(); d * d];
        let mut rhs = vec![T::zero(); d];
        let mut qb = vec![T::zero(); d];
        for (q, b) in curvature.iter().zip(&targets) {
            for (s, &v) in q_sum.iter_mut().zip(q) {
                *s += v;
            }
            matvec(q, b, &mut qb);
            axpy(T::one(), &qb, &mut rhs);
        }
        let optimum = cholesky_solve(&q_sum, &rhs).ok_or(ObjectiveError::SingularAverage)?;
        Ok(Self { d, curvature, targets, mu, l_smooth, sigma, optimum })
    }

    pub fn n(&self) -> usize {
        self.curvature.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn l_smooth(&self) -> T {
        self.l_smooth
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    /// `x*`, the minimizer of the average objective.
    pub fn optimum(&self) -> &[T] {
        &self.optimum
    }

    pub fn curvature(&self, i: usize) -> &[T] {
        &self.curvature[i]
    }

    pub fn target(&self, i: usize) -> &[T] {
        &self.targets[i]
    }

    /// `f_i(x)`.
    pub fn value(&self, i: usize, x: &[T]) -> T {
        let e: Vec<T> = x.iter().zip(&self.targets[i]).map(|(&a, &b)| a - b).collect();
        let mut qe = vec![T::zero(); self.d];
        matvec(&self.curvature[i], &e, &mut qe);
        T::lit(0.5) * dot(&e, &qe)
    }

    /// `f(x) = (1/n) Σ f_i(x)`.
    pub fn global_value(&self, x: &[T]) -> T {
        let total: T = (0..self.n()).map(|i| self.value(i, x)).sum();
        total / T::from_count(self.n())
    }

    /// Writes `∇f_i(x) = Q_i (x - b_i)` into `out`.
    pub fn gradient_into(&self, i: usize, x: &[T], out: &mut [T]) {
        assert_eq!(x.len(), self.d, "model dimension");
        let q = &self.curvature[i];
        let b = &self.targets[i];
        let d = self.d;
        for (r, o) in out.iter_mut().enumerate() {
            let row = &q[r * d..(r + 1) * d];
            *o = row.iter().zip(x).zip(b).map(|((&m, &xv), &bv)| m * (xv - bv)).sum();
        }
    }

    pub fn gradient(&self, i: usize, x: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); self.d];
        self.gradient_into(i, x, &mut g);
        g
    }

    /// `∇f(x)` of the average objective.
    pub fn global_gradient(&self, x: &[T]) -> Vec<T> {
        let mut total = vec![T::zero(); self.d];
        let mut g = vec![T::zero(); self.d];
        for i in 0..self.n() {
            self.gradient_into(i, x, &mut g);
            axpy(T::one(), &g, &mut total);
        }
        let inv = T::one() / T::from_count(self.n());
        total.iter_mut().for_each(|v| *v *= inv);
        total
    }

    /// Exact gradient plus `N(0, σ²/d · I)` noise.
    pub fn stochastic_gradient_into<R: Rng + ?Sized>(&self, i: usize, x: &[T], rng: &mut R, out: &mut [T]) {
        self.gradient_into(i, x, out);
        if self.sigma > T::zero() {
            let scale = self.sigma / T::from_count(self.d).sqrt();
            for o in out.iter_mut() {
                *o += scale * T::sample_standard_normal(rng);
            }
        }
    }

    pub fn stochastic_gradient<R: Rng + ?Sized>(&self, i: usize, x: &[T], rng: &mut R) -> Vec<T> {
        let mut g = vec![T::zero(); self.d];
        self.stochastic_gradient_into(i, x, rng, &mut g);
        g
    }

    /// `‖x - x*‖²`.
    pub fn suboptimality(&self, x: &[T]) -> T {
        assert_eq!(x.len(), self.d, "model dimension");
        dist_sq(x, &self.optimum)
    }
}
