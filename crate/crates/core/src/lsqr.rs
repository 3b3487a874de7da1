//! Matrix-free LSQR (Paige & Saunders bidiagonalization) for `min ‖A x − b‖₂`.
//!
//! The operator is only touched through `A x` and `Aᵀ y` products. A warm start
//! `x0` is handled by solving for the correction against `b − A x0`; the residual
//! norm then decreases monotonically from `‖b − A x0‖`.

/// A real linear map available only through products with itself and its transpose.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `y += A x`
    fn apply_add(&self, x: &[f64], y: &mut [f64]);
    /// `x += Aᵀ y`
    fn adjoint_add(&self, y: &[f64], x: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqrOptions {
    pub max_iterations: usize,
    /// Relative tolerance on `‖Aᵀ r‖ / (‖A‖ ‖r‖)`.
    pub atol: f64,
    /// Relative tolerance on `‖r‖ / ‖b‖`.
    pub btol: f64,
}

impl Default for LsqrOptions {
    fn default() -> Self {
        LsqrOptions {
            max_iterations: 20,
            atol: 1e-14,
            btol: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsqrStop {
    /// The starting point already solved the system.
    ExactStart,
    /// `‖r‖` fell below tolerance.
    ResidualSmall,
    /// The normal-equation residual fell below tolerance.
    LeastSquaresConverged,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LsqrOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub initial_residual_norm: f64,
    pub residual_norm: f64,
    pub normal_residual_norm: f64,
    pub stop: LsqrStop,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn scale(v: &mut [f64], s: f64) {
    v.iter_mut().for_each(|x| *x *= s);
}

pub fn lsqr<A: LinearOperator + ?Sized>(op: &A, b: &[f64], x0: Option<&[f64]>, opts: &LsqrOptions) -> LsqrOutcome {
    let (m, n) = (op.nrows(), op.ncols());
    assert_eq!(b.len(), m, "right-hand side length must match operator rows");

    let mut x = match x0 {
        Some(x0) => {
            assert_eq!(x0.len(), n, "initial guess length must match operator columns");
            x0.to_vec()
        }
        None => vec![0.0; n],
    };

    // u = b - A x0
    let mut u = b.to_vec();
    if x0.is_some() {
        let mut ax = vec![0.0; m];
        op.apply_add(&x, &mut ax);
        u.iter_mut().zip(&ax).for_each(|(ui, ai)| *ui -= ai);
    }
    let bnorm = norm(b);
    let mut beta = norm(&u);
    let initial_residual_norm = beta;

    let mut v = vec![0.0; n];
    let mut alpha = 0.0;
    if beta > 0.0 {
        scale(&mut u, 1.0 / beta);
        op.adjoint_add(&u, &mut v);
        alpha = norm(&v);
    }
    if alpha > 0.0 {
        scale(&mut v, 1.0 / alpha);
    }
    if beta == 0.0 || alpha == 0.0 {
        return LsqrOutcome {
            x,
            iterations: 0,
            initial_residual_norm,
            residual_norm: beta,
            normal_residual_norm: 0.0,
            stop: LsqrStop::ExactStart,
        };
    }

    let mut w = v.clone();
    let mut phibar = beta;
    let mut rhobar = alpha;
    let mut anorm_sq = 0.0;
    let mut xnorm;
    let mut normal_residual = alpha * beta;
    let mut stop = LsqrStop::IterationLimit;
    let mut iterations = 0;

    let mut av = vec![0.0; m];
    let mut atu = vec![0.0; n];
    while iterations < opts.max_iterations {
        iterations += 1;

        // beta u = A v - alpha u
        av.iter_mut().for_each(|a| *a = 0.0);
        op.apply_add(&v, &mut av);
        u.iter_mut().zip(&av).for_each(|(ui, ai)| *ui = ai - alpha * *ui);
        beta = norm(&u);
        anorm_sq += alpha * alpha + beta * beta;
        if beta > 0.0 {
            scale(&mut u, 1.0 / beta);
            // alpha v = Aᵀ u - beta v
            atu.iter_mut().for_each(|a| *a = 0.0);
            op.adjoint_add(&u, &mut atu);
            v.iter_mut().zip(&atu).for_each(|(vi, ai)| *vi = ai - beta * *vi);
            alpha = norm(&v);
            if alpha > 0.0 {
                scale(&mut v, 1.0 / alpha);
            }
        } else {
            alpha = 0.0;
        }

        // plane rotation eliminating beta from the lower bidiagonal
        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;

        let t1 = phi / rho;
        let t2 = -theta / rho;
        for ((xi, wi), vi) in x.iter_mut().zip(w.iter_mut()).zip(&v) {
            *xi += t1 * *wi;
            *wi = vi + t2 * *wi;
        }

        normal_residual = phibar * alpha * c.abs();
        xnorm = norm(&x);
        let anorm = anorm_sq.sqrt();
        if phibar <= opts.btol * bnorm + opts.atol * anorm * xnorm {
            stop = LsqrStop::ResidualSmall;
            break;
        }
        if phibar > 0.0 && normal_residual <= opts.atol * anorm * phibar {
            stop = LsqrStop::LeastSquaresConverged;
            break;
        }
        if alpha == 0.0 || beta == 0.0 {
            stop = LsqrStop::LeastSquaresConverged;
            break;
        }
    }

    LsqrOutcome {
        x,
        iterations,
        initial_residual_norm,
        residual_norm: phibar,
        normal_residual_norm: normal_residual,
        stop,
    }
}

/// Dense column-major-agnostic matrix wrapper, mostly for tests and small problems.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl LinearOperator for DenseOperator {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply_add(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *yr += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn adjoint_add(&self, y: &[f64], x: &mut [f64]) {
        for (r, &yr) in y.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            x.iter_mut().zip(row).for_each(|(xi, a)| *xi += a * yr);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dense(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseOperator {
        DenseOperator {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let op = random_dense(30, 8, &mut rng);
        let b: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = lsqr(
            &op,
            &b,
            None,
            &LsqrOptions {
                max_iterations: 100,
                atol: 1e-15,
                btol: 1e-15,
            },
        );
        let a = DMatrix::from_row_slice(30, 8, &op.data);
        let bv = DVector::from_vec(b);
        let ata = a.transpose() * &a;
        let atb = a.transpose() * bv;
        let exact = ata.lu().solve(&atb).unwrap();
        for (xi, ei) in out.x.iter().zip(exact.iter()) {
            assert!((xi - ei).abs() < 1e-10, "{xi} vs {ei}");
        }
    }

    #[test]
    fn exact_warm_start_stops_immediately() {
        let op = DenseOperator {
            rows: 2,
            cols: 2,
            data: vec![2.0, 0.0, 0.0, 3.0],
        };
        let out = lsqr(&op, &[4.0, 9.0], Some(&[2.0, 3.0]), &LsqrOptions::default());
        assert_eq!(out.stop, LsqrStop::ExactStart);
        assert_eq!(out.x, vec![2.0, 3.0]);
    }

    #[test]
    fn residual_never_exceeds_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let op = random_dense(20, 12, &mut rng);
            let b: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x0: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            for iters in 1..6 {
                let out = lsqr(
                    &op,
                    &b,
                    Some(&x0),
                    &LsqrOptions {
                        max_iterations: iters,
                        ..Default::default()
                    },
                );
                let mut r = b.clone();
                let mut ax = vec![0.0; 20];
                op.apply_add(&out.x, &mut ax);
                r.iter_mut().zip(&ax).for_each(|(a, b)| *a -= b);
                let rn = norm(&r);
                assert!(rn <= out.initial_residual_norm * (1.0 + 1e-12));
                assert!((rn - out.residual_norm).abs() < 1e-9);
            }
        }
    }
}
