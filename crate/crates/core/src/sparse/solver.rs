use super::{dot, norm2, CsrMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Preconditioner {
    None,
    #[default]
    Ilu0,
    /// One forward Gauss-Seidel sweep, `(D + L)^{-1}`.
    GaussSeidel,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Relative residual target `|b - Ax| / |b|`.
    pub tol: f64,
    /// Defaults to `10 n`.
    pub max_iterations: Option<usize>,
    pub preconditioner: Preconditioner,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-12,
            max_iterations: None,
            preconditioner: Preconditioner::Ilu0,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions {
            tol,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    /// True relative residual of the returned solution.
    pub final_residual: f64,
    /// `false` when the iteration stopped at the rounding floor above `tol`.
    pub converged: bool,
}

/// Stagnating checks required before accepting a rounding-limited residual.
const STALL_CHECKS: usize = 8;
/// Residuals below `ROUNDING_FACTOR * eps * (|A| |x| + |b|)` are at the level of
/// floating-point noise in `b - Ax`.
const ROUNDING_FACTOR: f64 = 1e3;

enum Check {
    Converged,
    RoundingLimited,
    Continue,
}

/// Watches true-residual evaluations for convergence or stagnation.
struct Monitor {
    target: f64,
    a_norm: f64,
    b_norm: f64,
    best: f64,
    stalled: usize,
}

impl Monitor {
    fn new(a: &CsrMatrix, b_norm: f64, tol: f64) -> Self {
        let a_norm = (0..a.rows())
            .map(|r| a.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        Monitor {
            target: tol * b_norm,
            a_norm,
            b_norm,
            best: f64::INFINITY,
            stalled: 0,
        }
    }

    fn check(&mut self, residual: f64, x: &[f64]) -> Check {
        if residual <= self.target {
            return Check::Converged;
        }
        if residual < 0.9 * self.best {
            self.stalled = 0;
        } else {
            self.stalled += 1;
        }
        self.best = self.best.min(residual);
        let floor = ROUNDING_FACTOR * f64::EPSILON * (self.a_norm * norm2(x) + self.b_norm);
        if self.stalled >= STALL_CHECKS && residual <= floor {
            Check::RoundingLimited
        } else {
            Check::Continue
        }
    }
}

fn finish(
    a: &CsrMatrix,
    b: &[f64],
    x: Vec<f64>,
    it: usize,
    opts: &SolverOptions,
    limited: bool,
) -> Result<(Vec<f64>, SolverReport)> {
    let mut work = vec![0.0; b.len()];
    let final_residual = true_residual(a, &x, b, &mut work) / norm2(b);
    let converged = final_residual <= opts.tol;
    if !converged && !limited {
        return Err(Error::MaxIterations {
            iterations: it,
            residual: final_residual,
        });
    }
    Ok((
        x,
        SolverReport {
            iterations: it,
            final_residual,
            converged,
        },
    ))
}

enum Factor {
    Identity,
    Ilu0 {
        lu: Vec<f64>,
        diag: Vec<usize>,
        inv_diag: Vec<f64>,
    },
    GaussSeidel {
        diag: Vec<usize>,
    },
}

struct Precond<'a> {
    a: &'a CsrMatrix,
    factor: Factor,
}

fn diagonal_positions(a: &CsrMatrix) -> Result<Vec<usize>> {
    (0..a.rows())
        .map(|r| {
            let (cols, _) = a.row(r);
            cols.binary_search(&r)
                .map(|k| a.row_offsets()[r] + k)
                .map_err(|_| Error::ZeroPivot(r))
        })
        .collect()
}

impl<'a> Precond<'a> {
    fn new(a: &'a CsrMatrix, kind: Preconditioner) -> Result<Self> {
        let factor = match kind {
            Preconditioner::None => Factor::Identity,
            Preconditioner::GaussSeidel => {
                let diag = diagonal_positions(a)?;
                if let Some(r) = diag.iter().position(|&k| a.values()[k] == 0.0) {
                    return Err(Error::ZeroPivot(r));
                }
                Factor::GaussSeidel { diag }
            }
            Preconditioner::Ilu0 => {
                let (lu, diag) = ilu0(a)?;
                let inv_diag = diag.iter().map(|&k| 1.0 / lu[k]).collect();
                Factor::Ilu0 { lu, diag, inv_diag }
            }
        };
        Ok(Precond { a, factor })
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let a = self.a;
        let off = a.row_offsets();
        let cols = a.col_indices();
        match &self.factor {
            Factor::Identity => z.copy_from_slice(r),
            Factor::GaussSeidel { diag } => {
                let vals = a.values();
                for i in 0..a.rows() {
                    let mut s = r[i];
                    for k in off[i]..diag[i] {
                        s -= vals[k] * z[cols[k]];
                    }
                    z[i] = s / vals[diag[i]];
                }
            }
            Factor::Ilu0 { lu, diag, inv_diag } => {
                for i in 0..a.rows() {
                    let (c, v) = (&cols[off[i]..diag[i]], &lu[off[i]..diag[i]]);
                    let s: f64 = c.iter().zip(v).map(|(&j, &l)| l * z[j]).sum();
                    z[i] = r[i] - s;
                }
                for i in (0..a.rows()).rev() {
                    let (c, v) = (&cols[diag[i] + 1..off[i + 1]], &lu[diag[i] + 1..off[i + 1]]);
                    let s: f64 = c.iter().zip(v).map(|(&j, &u)| u * z[j]).sum();
                    z[i] = (z[i] - s) * inv_diag[i];
                }
            }
        }
    }
}

/// Incomplete LU factorisation with zero fill-in, stored on the pattern of `a`.
/// Returns the combined factors (unit-lower `L` below the diagonal, `U` on
/// and above) and the diagonal positions.
pub(crate) fn ilu0(a: &CsrMatrix) -> Result<(Vec<f64>, Vec<usize>)> {
    let n = a.rows();
    let diag = diagonal_positions(a)?;
    let off = a.row_offsets();
    let cols = a.col_indices();
    let mut lu = a.values().to_vec();
    let mut pos = vec![usize::MAX; a.cols()];
    for i in 0..n {
        for k in off[i]..off[i + 1] {
            pos[cols[k]] = k;
        }
        for kk in off[i]..diag[i] {
            let k = cols[kk];
            let pivot = lu[diag[k]];
            let lik = lu[kk] / pivot;
            lu[kk] = lik;
            for jj in diag[k] + 1..off[k + 1] {
                let p = pos[cols[jj]];
                if p != usize::MAX {
                    lu[p] -= lik * lu[jj];
                }
            }
        }
        for k in off[i]..off[i + 1] {
            pos[cols[k]] = usize::MAX;
        }
        let d = lu[diag[i]];
        if d == 0.0 || !d.is_finite() {
            return Err(Error::ZeroPivot(i));
        }
    }
    Ok((lu, diag))
}

fn check_square(a: &CsrMatrix, b: &[f64]) -> Result<()> {
    if a.rows() != a.cols() || b.len() != a.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} system with rhs of length {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    Ok(())
}

fn true_residual(a: &CsrMatrix, x: &[f64], b: &[f64], r: &mut [f64]) -> f64 {
    a.mul_vec_into(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    norm2(r)
}

/// Right-preconditioned BiCGStab.
///
/// Convergence is declared on the true residual: whenever the recursive
/// residual reaches the tolerance the true residual is recomputed and, if it
/// has drifted above the target, the iteration restarts from the current
/// iterate. If the true residual stagnates at the floating-point floor above
/// `tol`, the solution is returned with `converged == false`.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolverReport)> {
    check_square(a, b)?;
    let n = a.rows();
    let maxit = opts.max_iterations.unwrap_or(10 * n.max(1));
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            SolverReport {
                iterations: 0,
                final_residual: 0.0,
                converged: true,
            },
        ));
    }
    let m = Precond::new(a, opts.preconditioner)?;
    let target = opts.tol * bnorm;
    let mut monitor = Monitor::new(a, bnorm, opts.tol);
    let mut limited = false;

    let mut r = b.to_vec();
    let mut r_hat = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let (mut rho, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);
    let mut restarts_without_progress = 0;
    let mut it = 0;

    let restart =
        |x: &[f64], r: &mut Vec<f64>, r_hat: &mut Vec<f64>, p: &mut Vec<f64>, v: &mut Vec<f64>| {
            let res = true_residual(a, x, b, r);
            r_hat.copy_from_slice(r);
            p.iter_mut().for_each(|e| *e = 0.0);
            v.iter_mut().for_each(|e| *e = 0.0);
            res
        };

    while it < maxit {
        it += 1;
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < f64::MIN_POSITIVE || !rho_new.is_finite() {
            restarts_without_progress += 1;
            if restarts_without_progress > 2 {
                return Err(Error::Breakdown {
                    iterations: it,
                    reason: "rho vanished",
                });
            }
            let res = restart(&x, &mut r, &mut r_hat, &mut p, &mut v);
            match monitor.check(res, &x) {
                Check::Converged => break,
                Check::RoundingLimited => {
                    limited = true;
                    break;
                }
                Check::Continue => {}
            }
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        m.apply(&p, &mut p_hat);
        a.mul_vec_into(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 || !rv.is_finite() {
            return Err(Error::Breakdown {
                iterations: it,
                reason: "r_hat orthogonal to A p",
            });
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) <= target {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            let res = restart(&x, &mut r, &mut r_hat, &mut p, &mut v);
            match monitor.check(res, &x) {
                Check::Converged => break,
                Check::RoundingLimited => {
                    limited = true;
                    break;
                }
                Check::Continue => {}
            }
            restarts_without_progress += 1;
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            continue;
        }
        m.apply(&s, &mut s_hat);
        a.mul_vec_into(&s_hat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        if omega == 0.0 {
            return Err(Error::Breakdown {
                iterations: it,
                reason: "stabilisation parameter vanished",
            });
        }
        if norm2(&r) <= target {
            let res = restart(&x, &mut r, &mut r_hat, &mut p, &mut v);
            match monitor.check(res, &x) {
                Check::Converged => break,
                Check::RoundingLimited => {
                    limited = true;
                    break;
                }
                Check::Continue => {}
            }
            restarts_without_progress += 1;
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
        }
    }
    finish(a, b, x, it, opts, limited)
}

/// Preconditioned conjugate gradients for symmetric positive definite systems,
/// with the same true-residual acceptance as [`bicgstab`].
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolverReport)> {
    check_square(a, b)?;
    let n = a.rows();
    let maxit = opts.max_iterations.unwrap_or(10 * n.max(1));
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            SolverReport {
                iterations: 0,
                final_residual: 0.0,
                converged: true,
            },
        ));
    }
    let m = Precond::new(a, opts.preconditioner)?;
    let target = opts.tol * bnorm;
    let mut monitor = Monitor::new(a, bnorm, opts.tol);
    let mut limited = false;
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    m.apply(&r, &mut z);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut it = 0;
    while it < maxit {
        it += 1;
        a.mul_vec_into(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            return Err(Error::Breakdown {
                iterations: it,
                reason: "matrix is not positive definite",
            });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        if norm2(&r) <= target {
            let res = true_residual(a, &x, b, &mut r);
            match monitor.check(res, &x) {
                Check::Converged => break,
                Check::RoundingLimited => {
                    limited = true;
                    break;
                }
                Check::Continue => {
                    // Restart from the true residual.
                    m.apply(&r, &mut z);
                    p.copy_from_slice(&z);
                    rz = dot(&r, &z);
                    continue;
                }
            }
        }
        m.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    finish(a, b, x, it, opts, limited)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{dense_solve_oracle, CsrMatrix};
    use rand::{Rng, SeedableRng};

    fn random_sdd(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        let mut diag = vec![0.0; n];
        for i in 0..n {
            for _ in 0..4 {
                let j = rng.gen_range(0..n);
                if j != i {
                    let v = rng.gen_range(-1.0..0.0);
                    t.push((i, j, v));
                    t.push((j, i, v));
                    diag[i] -= v;
                    diag[j] -= v;
                }
            }
        }
        for (i, d) in diag.into_iter().enumerate() {
            t.push((i, i, d + 0.01));
        }
        CsrMatrix::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn identity_in_one_iteration() {
        let id = CsrMatrix::identity(7);
        let b: Vec<f64> = (0..7).map(|i| i as f64 - 3.0).collect();
        for pc in [
            Preconditioner::None,
            Preconditioner::Ilu0,
            Preconditioner::GaussSeidel,
        ] {
            let opts = SolverOptions {
                preconditioner: pc,
                ..Default::default()
            };
            let (x, rep) = bicgstab(&id, &b, &opts).unwrap();
            assert_eq!(x, b);
            assert!(rep.iterations <= 1);
            assert!(rep.converged);
        }
    }

    #[test]
    fn zero_rhs() {
        let (x, rep) = bicgstab(&random_sdd(10, 1), &[0.0; 10], &SolverOptions::default()).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn ilu_beats_plain_on_random_sdd() {
        let a = random_sdd(50, 11);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).cos()).collect();
        let plain = bicgstab(
            &a,
            &b,
            &SolverOptions {
                preconditioner: Preconditioner::None,
                ..Default::default()
            },
        )
        .unwrap();
        let ilu = bicgstab(&a, &b, &SolverOptions::default()).unwrap();
        assert!(
            ilu.1.iterations < plain.1.iterations,
            "{:?} vs {:?}",
            ilu.1,
            plain.1
        );
        let exact = dense_solve_oracle(&a.to_dense(), &b).unwrap();
        for (p, q) in ilu.0.iter().zip(&exact) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn gauss_seidel_and_cg_agree_with_oracle() {
        let a = random_sdd(40, 5);
        let b: Vec<f64> = (0..40).map(|i| 1.0 + i as f64).collect();
        let exact = dense_solve_oracle(&a.to_dense(), &b).unwrap();
        let gs = bicgstab(
            &a,
            &b,
            &SolverOptions {
                preconditioner: Preconditioner::GaussSeidel,
                ..Default::default()
            },
        )
        .unwrap();
        let cg = conjugate_gradient(&a, &b, &SolverOptions::default()).unwrap();
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..40 {
            assert!((gs.0[i] - exact[i]).abs() < 1e-8 * scale);
            assert!((cg.0[i] - exact[i]).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn iteration_cap_reported() {
        let a = random_sdd(60, 2);
        let b = vec![1.0; 60];
        let opts = SolverOptions {
            tol: 1e-14,
            max_iterations: Some(2),
            preconditioner: Preconditioner::None,
        };
        assert!(matches!(
            bicgstab(&a, &b, &opts),
            Err(Error::MaxIterations { .. })
        ));
    }

    #[test]
    fn unreachable_tolerance_stops_at_the_rounding_floor() {
        let a = random_sdd(80, 4);
        let b: Vec<f64> = (0..80).map(|i| (i as f64).sin() + 2.0).collect();
        let opts = SolverOptions {
            tol: 1e-20,
            max_iterations: Some(100_000),
            preconditioner: Preconditioner::Ilu0,
        };
        let exact = dense_solve_oracle(&a.to_dense(), &b).unwrap();
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bicg = bicgstab(&a, &b, &opts).unwrap();
        let cg = conjugate_gradient(&a, &b, &opts).unwrap();
        for (x, rep) in [bicg, cg] {
            assert!(!rep.converged);
            assert!(rep.final_residual > 1e-20 && rep.final_residual < 1e-12);
            assert!(rep.iterations < 1000, "{rep:?}");
            for (p, q) in x.iter().zip(&exact) {
                assert!((p - q).abs() < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn missing_diagonal_is_a_zero_pivot() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert!(matches!(
            bicgstab(&a, &[1.0, 1.0], &SolverOptions::default()),
            Err(Error::ZeroPivot(0))
        ));
    }
}
