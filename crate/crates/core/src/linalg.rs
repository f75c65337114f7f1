//! Dense real linear-algebra kernels.
//!
//! Matrices are `nalgebra::DMatrix<f64>` stored column-major, which makes
//! [`vec`] (column stacking) a plain copy of the storage buffer.

use nalgebra::{DMatrix, DVector, Schur};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("matrix exponential overflow (1-norm {norm:.3e}, {squarings} squarings)")]
    ExpOverflow { norm: f64, squarings: u32 },
    #[error("non-finite entries produced by {op}")]
    NonFinite { op: &'static str },
    #[error("singular matrix in {op}")]
    Singular { op: &'static str },
    #[error("eigenvalue iteration did not converge for a {dim}x{dim} matrix (1-norm {norm:.3e}) after {iterations} sweeps")]
    NoConvergence {
        dim: usize,
        norm: f64,
        iterations: usize,
    },
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

fn require_square(op: &'static str, m: &Matrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::Dimension {
            op,
            detail: format!("expected square matrix, got {}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(m.nrows())
}

/// Column-stacking vectorization of a square matrix.
pub fn vec(m: &Matrix) -> Result<Vector> {
    require_square("vec", m)?;
    Ok(Vector::from_column_slice(m.as_slice()))
}

/// Inverse of [`vec`]: rebuild an `n x n` matrix from its stacked columns.
pub fn unvec(v: &Vector, n: usize) -> Result<Matrix> {
    if v.len() != n * n {
        return Err(LinalgError::Dimension {
            op: "unvec",
            detail: format!("vector of length {} cannot hold a {n}x{n} matrix", v.len()),
        });
    }
    Ok(Matrix::from_column_slice(n, n, v.as_slice()))
}

/// Kronecker product; block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc))
                .zip_apply(b, |o, v| *o = s * v);
        }
    }
    out
}

/// Kronecker product of a matrix with a column vector (or vice versa),
/// with the vector treated as an `n x 1` matrix.
pub fn kron_mv(a: &Matrix, v: &Vector) -> Matrix {
    kron(a, &Matrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn kron_vm(v: &Vector, a: &Matrix) -> Matrix {
    kron(&Matrix::from_column_slice(v.len(), 1, v.as_slice()), a)
}

pub fn norm1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

// Padé coefficients and 1-norm thresholds from Higham (2005),
// "The scaling and squaring method for the matrix exponential revisited".
const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152e0;
const MAX_SQUARINGS: u32 = 1100;

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant of degree 3, 5, 7, 9 or 13 (Higham 2005, Algorithm 2.3).
///
/// The degree is chosen from the 1-norm; for `||M||_1 > theta_13` the matrix
/// is scaled by `2^-s` and the approximant squared `s` times. Any non-finite
/// entry in the result is reported as overflow instead of being returned.
pub fn expm(m: &Matrix) -> Result<Matrix> {
    let n = require_square("expm", m)?;
    if m.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite { op: "expm input" });
    }
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    if n == 1 {
        let e = m[(0, 0)].exp();
        if !e.is_finite() {
            return Err(LinalgError::ExpOverflow {
                norm: m[(0, 0)].abs(),
                squarings: 0,
            });
        }
        return Ok(Matrix::from_element(1, 1, e));
    }
    let norm = norm1(m);
    let ident = Matrix::identity(n, n);
    let a2 = m * m;

    for &(order, theta) in THETA.iter() {
        if norm <= theta {
            let coeffs: &[f64] = match order {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            // U = A * sum_k b_{2k+1} A^{2k}, V = sum_k b_{2k} A^{2k}
            let mut u = ident.clone() * coeffs[1];
            let mut v = ident.clone() * coeffs[0];
            let mut power = ident.clone();
            for k in 1..=order / 2 {
                power = &power * &a2;
                u += &power * coeffs[2 * k + 1];
                v += &power * coeffs[2 * k];
            }
            let u = m * u;
            return pade_quotient(&u, &v, norm, 0);
        }
    }

    let mut s = 0u32;
    if norm > THETA13 {
        s = (norm / THETA13).log2().ceil().max(0.0) as u32;
    }
    if s > MAX_SQUARINGS {
        return Err(LinalgError::ExpOverflow { norm, squarings: s });
    }
    let scale = 0.5f64.powi(s as i32);
    let a = m * scale;
    let a2 = &a2 * (scale * scale);
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &B13;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (u_inner + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let v_inner = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_inner + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    pade_quotient(&u, &v, norm, s)
}

fn pade_quotient(u: &Matrix, v: &Matrix, norm: f64, squarings: u32) -> Result<Matrix> {
    let q = v - u;
    let p = v + u;
    let lu = q.lu();
    let mut r = lu.solve(&p).ok_or(LinalgError::Singular {
        op: "expm Padé denominator",
    })?;
    for _ in 0..squarings {
        r = &r * &r;
        if r.iter().any(|x| !x.is_finite()) {
            return Err(LinalgError::ExpOverflow { norm, squarings });
        }
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::ExpOverflow { norm, squarings });
    }
    Ok(r)
}

/// Returns `(e^{At}, \int_0^t e^{As} a ds)`.
///
/// Both come out of one exponential of the augmented matrix `[[A, a], [0, 0]]`,
/// so `A` is never inverted and singular generators are fine.
pub fn flow_with_integral(a: &Matrix, forcing: &Vector, t: f64) -> Result<(Matrix, Vector)> {
    let n = require_square("flow_with_integral", a)?;
    if forcing.len() != n {
        return Err(LinalgError::Dimension {
            op: "flow_with_integral",
            detail: format!("forcing has length {}, generator is {n}x{n}", forcing.len()),
        });
    }
    if t < 0.0 || t.is_nan() {
        return Err(LinalgError::NegativeTime(t));
    }
    if n == 1 {
        let (e, i) = scalar_flow(a[(0, 0)], forcing[0], t);
        if !e.is_finite() || !i.is_finite() {
            return Err(LinalgError::ExpOverflow {
                norm: (a[(0, 0)] * t).abs(),
                squarings: 0,
            });
        }
        return Ok((Matrix::from_element(1, 1, e), Vector::from_element(1, i)));
    }
    let mut aug = Matrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * t));
    aug.view_mut((0, n), (n, 1)).copy_from(&(forcing * t));
    let e = expm(&aug)?;
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, 1)).column(0).into_owned(),
    ))
}

/// Scalar flow `x' = rate * x + c` from zero: `(e^{rate t}, c (e^{rate t}-1)/rate)`.
#[inline]
pub fn scalar_flow(rate: f64, c: f64, t: f64) -> (f64, f64) {
    let z = rate * t;
    let e = z.exp();
    let integral = if z.abs() < 1e-8 {
        c * t * (1.0 + 0.5 * z + z * z / 6.0)
    } else {
        c * t * (z.exp_m1() / z)
    };
    (e, integral)
}

fn schur_eigenvalues(op: &'static str, m: &Matrix) -> Result<Vec<(f64, f64)>> {
    let n = require_square(op, m)?;
    if m.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite { op });
    }
    match n {
        0 => return Ok(Vec::new()),
        1 => return Ok(vec![(m[(0, 0)], 0.0)]),
        _ => {}
    }
    const SWEEPS: usize = 10_000;
    let schur =
        Schur::try_new(m.clone(), f64::EPSILON, SWEEPS).ok_or(LinalgError::NoConvergence {
            dim: n,
            norm: norm1(m),
            iterations: SWEEPS,
        })?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect())
}

/// Largest eigenvalue modulus, from the eigenvalues of a real Schur form
/// (Francis double-shift QR). Accurate to roughly `eps * ||M||` for
/// non-defective matrices.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    Ok(schur_eigenvalues("spectral_radius", m)?
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .fold(0.0, f64::max))
}

/// Largest real part among the eigenvalues.
pub fn spectral_abscissa(m: &Matrix) -> Result<f64> {
    Ok(schur_eigenvalues("spectral_abscissa", m)?
        .into_iter()
        .map(|(re, _)| re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Result of a factorized linear solve together with the 1-norm condition
/// number of the coefficient matrix.
#[derive(Clone, Debug)]
pub struct Solved {
    pub solution: Matrix,
    pub condition: f64,
}

/// Solves `M X = B` by LU with partial pivoting. The condition number is
/// computed from an explicit inverse, which is fine at the sizes this crate
/// works with (at most a few dozen rows).
pub fn solve(m: &Matrix, rhs: &Matrix) -> Result<Solved> {
    let n = require_square("solve", m)?;
    if rhs.nrows() != n {
        return Err(LinalgError::Dimension {
            op: "solve",
            detail: format!("rhs has {} rows, matrix is {n}x{n}", rhs.nrows()),
        });
    }
    let lu = m.clone().lu();
    let solution = lu.solve(rhs).ok_or(LinalgError::Singular { op: "solve" })?;
    let inverse = lu
        .try_inverse()
        .ok_or(LinalgError::Singular { op: "solve" })?;
    if solution.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::Singular { op: "solve" });
    }
    Ok(Solved {
        solution,
        condition: norm1(m) * norm1(&inverse),
    })
}

/// `M^k` by repeated squaring.
pub fn matrix_power(m: &Matrix, mut k: u64) -> Result<Matrix> {
    let n = require_square("matrix_power", m)?;
    let mut result = Matrix::identity(n, n);
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    if result.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite { op: "matrix_power" });
    }
    Ok(result)
}

pub fn is_symmetric(m: &Matrix, rel: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = max_abs(m.as_slice()).max(f64::MIN_POSITIVE);
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= rel * scale))
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
