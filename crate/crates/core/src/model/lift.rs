//! Second-order lift: the state `mu = [x; vec(x x^T)]` has linear dynamics and
//! affine resets, so the first-order machinery applied to it yields second
//! moments.

use super::PdmpModel;
use crate::linalg::{kron, kron_mv, kron_vm, vec, Matrix, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct LiftedPoissonFamily {
    pub rate: f64,
    pub j_mu: Matrix,
    pub r_mu: Vector,
}

/// The `(n + n^2)`-dimensional system for `[x; vec(x x^T)]` (column stacking).
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedModel {
    /// Dimension `n` of the original state.
    pub base_dim: usize,
    pub a_mu: Matrix,
    pub a_hat_mu: Vector,
    pub poisson: Vec<LiftedPoissonFamily>,
    pub j_mu2: Matrix,
    pub r_mu2: Vector,
}

impl LiftedModel {
    pub fn dim(&self) -> usize {
        self.a_mu.nrows()
    }

    /// `A_mu + sum h (J_mu1 - I)` and `a_mu + sum h R_mu1`.
    pub fn effective_matrices(&self) -> (Matrix, Vector) {
        let m = self.dim();
        let mut a = self.a_mu.clone();
        let mut a_hat = self.a_hat_mu.clone();
        for p in &self.poisson {
            a += (&p.j_mu - Matrix::identity(m, m)) * p.rate;
            a_hat += &p.r_mu * p.rate;
        }
        (a, a_hat)
    }

    /// Stacks `[x; vec(x x^T)]`.
    pub fn embed(x: &Vector) -> Vector {
        let n = x.len();
        let mut mu = Vector::zeros(n + n * n);
        mu.rows_mut(0, n).copy_from(x);
        let outer = x * x.transpose();
        mu.rows_mut(n, n * n).copy_from_slice(outer.as_slice());
        mu
    }
}

fn block_lower(top_left: &Matrix, bottom_left: &Matrix, bottom_right: &Matrix) -> Matrix {
    let n = top_left.nrows();
    let m = bottom_right.nrows();
    let mut out = Matrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(top_left);
    out.view_mut((n, 0), (m, n)).copy_from(bottom_left);
    out.view_mut((n, n), (m, m)).copy_from(bottom_right);
    out
}

fn stack(top: &Vector, bottom: &Vector) -> Vector {
    let mut out = Vector::zeros(top.len() + bottom.len());
    out.rows_mut(0, top.len()).copy_from(top);
    out.rows_mut(top.len(), bottom.len()).copy_from(bottom);
    out
}

/// Builds the lifted system. Expects a validated model.
pub fn lift_second_order(m: &PdmpModel) -> LiftedModel {
    let n = m.dim();
    let id = Matrix::identity(n, n);
    let a = &m.dynamics.a;
    let a_hat = &m.dynamics.a_hat;
    let vec_sq = |s: &Matrix| vec(s).expect("square by validation");

    let a_mu = block_lower(
        a,
        &(kron_mv(&id, a_hat) + kron_vm(a_hat, &id)),
        &(kron(&id, a) + kron(a, &id)),
    );
    let a_hat_mu = stack(a_hat, &Vector::zeros(n * n));

    let poisson = m
        .poisson
        .iter()
        .map(|p| LiftedPoissonFamily {
            rate: p.rate,
            j_mu: block_lower(
                &p.j,
                &(kron_mv(&p.j, &p.r_mean) + kron_vm(&p.r_mean, &p.j)),
                &kron(&p.j, &p.j),
            ),
            r_mu: stack(&p.r_mean, &vec_sq(&p.r_second)),
        })
        .collect();

    let g = &m.general;
    let j_mu2 = block_lower(
        &g.j,
        &(kron_vm(&g.c, &g.b) + kron_mv(&g.j, &g.r) + kron_mv(&g.b, &g.c) + kron_vm(&g.r, &g.j)),
        &(kron(&g.j, &g.j) + kron(&g.q, &g.q)),
    );
    // vec of the reset second moment's constant part, D + R R^T
    let r_mu2 = stack(&g.r, &vec_sq(&(&g.d + &g.r * g.r.transpose())));

    LiftedModel {
        base_dim: n,
        a_mu,
        a_hat_mu,
        poisson,
        j_mu2,
        r_mu2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::InterEventDistribution;
    use crate::model::{GeneralResetFamily, LinearDynamics, PoissonResetFamily};

    fn one(x: f64) -> Matrix {
        Matrix::from_element(1, 1, x)
    }

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn protein_lift_matches_closed_form() {
        let (k, u, u2, gamma, b) = (7.0, 2.0, 5.0, 0.4, 0.3);
        let m = PdmpModel {
            dynamics: LinearDynamics {
                a_hat: v1(0.0),
                a: one(-gamma),
            },
            poisson: vec![PoissonResetFamily {
                rate: k,
                j: one(1.0),
                r_mean: v1(u),
                r_second: one(u2),
            }],
            general: GeneralResetFamily {
                dist: InterEventDistribution::exponential(1.0).unwrap(),
                j: one(0.5),
                r: v1(0.0),
                q: one(0.0),
                b: one(b / 2.0),
                c: v1(1.0),
                d: one(0.0),
            },
        };
        let l = lift_second_order(&m);
        let (a, a_hat) = l.effective_matrices();
        let expected_a = Matrix::from_row_slice(2, 2, &[-gamma, 0.0, 2.0 * k * u, -2.0 * gamma]);
        assert!((a - expected_a).amax() < 1e-14);
        assert!((a_hat - Vector::from_vec(vec![k * u, k * u2])).amax() < 1e-14);
        assert_eq!(l.j_mu2, Matrix::from_row_slice(2, 2, &[0.5, 0.0, b, 0.25]));
        assert_eq!(l.r_mu2, Vector::zeros(2));
    }

    #[test]
    fn deterministic_burst_lift() {
        let u = 3.0;
        let m = PdmpModel {
            dynamics: LinearDynamics {
                a_hat: v1(0.0),
                a: one(-1.0),
            },
            poisson: vec![PoissonResetFamily::deterministic(1.0, one(1.0), v1(u))],
            general: GeneralResetFamily::affine(
                InterEventDistribution::exponential(1.0).unwrap(),
                one(0.0),
                v1(0.0),
            ),
        };
        let l = lift_second_order(&m);
        assert_eq!(
            l.poisson[0].j_mu,
            Matrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0 * u, 1.0])
        );
        assert_eq!(l.poisson[0].r_mu, Vector::from_vec(vec![u, u * u]));
        assert_eq!(l.j_mu2, Matrix::zeros(2, 2));
        assert_eq!(l.r_mu2, Vector::zeros(2));
    }
}
