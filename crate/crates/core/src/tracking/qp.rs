//! Dense convex QP solver for box-and-equality constrained problems:
//!
//! ```text
//!     minimize    1/2 x' H x + f' x
//!     subject to  A_eq x = b_eq,  lower <= x <= upper
//! ```
//!
//! Equalities are eliminated through a null-space basis; the reduced problem
//! (strictly convex on the feasible subspace) is solved with a dual
//! active-set method that starts from the unconstrained minimizer and adds
//! violated bounds one at a time.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, thiserror::Error)]
pub enum QpError {
    #[error("QP is infeasible")]
    Infeasible,
    #[error("QP active-set iteration limit reached")]
    MaxIterations { best: Box<DVector<f64>> },
    #[error("QP numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
}

const TOL: f64 = 1e-10;

/// Solve the box-and-equality constrained QP. `h` must be positive definite
/// on the null space of `a_eq`.
pub fn qp_solve(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<QpSolution, QpError> {
    let n = h.nrows();
    assert_eq!(h.ncols(), n);
    assert_eq!(f.len(), n);
    assert_eq!(lower.len(), n);
    assert_eq!(upper.len(), n);

    for i in 0..n {
        if lower[i] > upper[i] {
            return Err(QpError::Infeasible);
        }
    }

    let (x_p, z) = eliminate_equalities(a_eq, b_eq, n)?;
    let m = z.ncols();
    if m == 0 {
        return Ok(QpSolution { x: check_bounds(x_p, lower, upper)?, iterations: 0 });
    }

    let h_r = z.transpose() * h * &z;
    let f_r = z.transpose() * (h * &x_p + f);

    // inequality rows G v <= r from the finite bounds
    let mut g_rows: Vec<DVector<f64>> = Vec::new();
    let mut r_vals: Vec<f64> = Vec::new();
    for i in 0..n {
        let zi = z.row(i).transpose();
        if upper[i].is_finite() {
            g_rows.push(zi.clone());
            r_vals.push(upper[i] - x_p[i]);
        }
        if lower[i].is_finite() {
            g_rows.push(-zi);
            r_vals.push(x_p[i] - lower[i]);
        }
    }

    let chol = h_r
        .clone()
        .cholesky()
        .ok_or_else(|| QpError::Numerical("reduced Hessian not positive definite".into()))?;
    let mut v = chol.solve(&(-&f_r));

    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let max_iter = 50 * (m + g_rows.len()).max(4);
    let mut iterations = 0;

    loop {
        // most violated inactive bound
        let mut worst = None;
        let mut worst_s = TOL;
        for (c, (gr, &rv)) in g_rows.iter().zip(&r_vals).enumerate() {
            if active.contains(&c) {
                continue;
            }
            let s = gr.dot(&v) - rv;
            if s > worst_s {
                worst_s = s;
                worst = Some(c);
            }
        }
        let Some(p) = worst else {
            let x = &x_p + &z * &v;
            return Ok(QpSolution { x, iterations });
        };

        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                let x = &x_p + &z * &v;
                return Err(QpError::MaxIterations { best: Box::new(clamp_to_bounds(x, lower, upper)) });
            }

            // step direction from the active-set KKT system
            let na = active.len();
            let mut kkt = DMatrix::zeros(m + na, m + na);
            kkt.view_mut((0, 0), (m, m)).copy_from(&h_r);
            for (j, &c) in active.iter().enumerate() {
                let gc = &g_rows[c];
                for i in 0..m {
                    kkt[(i, m + j)] = gc[i];
                    kkt[(m + j, i)] = gc[i];
                }
            }
            let mut rhs = DVector::zeros(m + na);
            rhs.rows_mut(0, m).copy_from(&(-&g_rows[p]));
            let sol = kkt
                .lu()
                .solve(&rhs)
                .ok_or_else(|| QpError::Numerical("singular active-set KKT system".into()))?;
            let dv = sol.rows(0, m).into_owned();
            let du: Vec<f64> = (0..na).map(|j| sol[m + j]).collect();

            let s_p = g_rows[p].dot(&v) - r_vals[p];
            let descent = g_rows[p].dot(&dv);

            let t2 = if descent < -TOL { -s_p / descent } else { f64::INFINITY };
            let mut t1 = f64::INFINITY;
            let mut drop_j = None;
            for (j, &duj) in du.iter().enumerate() {
                if duj < -TOL {
                    let t = -mult[j] / duj;
                    if t < t1 {
                        t1 = t;
                        drop_j = Some(j);
                    }
                }
            }

            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }

            v += t * &dv;
            for (j, &duj) in du.iter().enumerate() {
                mult[j] += t * duj;
            }
            u_p += t;

            if t2 <= t1 {
                active.push(p);
                mult.push(u_p);
                break;
            }
            let j = drop_j.expect("partial step requires a blocking constraint");
            active.remove(j);
            mult.remove(j);
        }
    }
}

/// Min-norm particular solution and an orthonormal null-space basis of the
/// equality constraints.
fn eliminate_equalities(
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    n: usize,
) -> Result<(DVector<f64>, DMatrix<f64>), QpError> {
    if a_eq.nrows() == 0 {
        return Ok((DVector::zeros(n), DMatrix::identity(n, n)));
    }
    assert_eq!(a_eq.ncols(), n);

    // orthonormalize the constraint rows (modified Gram-Schmidt), carrying
    // the right-hand side along so redundant-but-consistent rows are fine
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for r in 0..a_eq.nrows() {
        let mut row = a_eq.row(r).transpose();
        let mut b = b_eq[r];
        for (u, &ub) in basis.iter().zip(&rhs) {
            let proj = u.dot(&row);
            row -= proj * u;
            b -= proj * ub;
        }
        let norm = row.norm();
        if norm > TOL {
            basis.push(row / norm);
            rhs.push(b / norm);
        } else if b.abs() > 1e-8 {
            return Err(QpError::Infeasible);
        }
    }

    // x_p = sum of u_i * b_i is the min-norm solution
    let mut x_p = DVector::zeros(n);
    for (u, &b) in basis.iter().zip(&rhs) {
        x_p += b * u;
    }

    // complete the basis to span R^n; leftovers form the null space
    let mut z_cols: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        let mut cand = DVector::zeros(n);
        cand[i] = 1.0;
        for u in basis.iter().chain(z_cols.iter()) {
            let proj = u.dot(&cand);
            cand -= proj * u;
        }
        let norm = cand.norm();
        if norm > 1e-8 {
            z_cols.push(cand / norm);
        }
        if basis.len() + z_cols.len() == n {
            break;
        }
    }

    let mut z = DMatrix::zeros(n, z_cols.len());
    for (c, col) in z_cols.iter().enumerate() {
        z.column_mut(c).copy_from(col);
    }
    Ok((x_p, z))
}

fn check_bounds(
    x: DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<DVector<f64>, QpError> {
    for i in 0..x.len() {
        if x[i] < lower[i] - 1e-8 || x[i] > upper[i] + 1e-8 {
            return Err(QpError::Infeasible);
        }
    }
    Ok(x)
}

fn clamp_to_bounds(mut x: DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn free_bounds(n: usize) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_element(n, f64::NEG_INFINITY),
            DVector::from_element(n, f64::INFINITY),
        )
    }

    #[test]
    fn unconstrained_matches_linear_solve() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = DVector::from_vec(vec![1.0, -2.0]);
        let (lo, hi) = free_bounds(2);
        let sol = qp_solve(&h, &f, &DMatrix::zeros(0, 2), &DVector::zeros(0), &lo, &hi).unwrap();
        let expect = h.clone().lu().solve(&(-&f)).unwrap();
        assert_abs_diff_eq!(sol.x, expect, epsilon = 1e-10);
    }

    #[test]
    fn single_active_bound_matches_hand_kkt() {
        // min 1/2(x1^2 + x2^2) - x1 - x2  s.t. x1 <= 0.25
        // unconstrained min (1,1); bound active: x1 = 0.25, x2 = 1
        let h = DMatrix::identity(2, 2);
        let f = DVector::from_vec(vec![-1.0, -1.0]);
        let lo = DVector::from_element(2, f64::NEG_INFINITY);
        let hi = DVector::from_vec(vec![0.25, f64::INFINITY]);
        let sol = qp_solve(&h, &f, &DMatrix::zeros(0, 2), &DVector::zeros(0), &lo, &hi).unwrap();
        assert_abs_diff_eq!(sol.x[0], 0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn equality_only_reduces_to_projection() {
        // min 1/2 |x|^2 s.t. x1 + x2 = 2 -> (1, 1)
        let h = DMatrix::identity(2, 2);
        let f = DVector::zeros(2);
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        let (lo, hi) = free_bounds(2);
        let sol = qp_solve(&h, &f, &a, &b, &lo, &hi).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn infeasible_bounds_detected() {
        let h = DMatrix::identity(1, 1);
        let f = DVector::zeros(1);
        let lo = DVector::from_vec(vec![1.0]);
        let hi = DVector::from_vec(vec![0.0]);
        assert!(matches!(
            qp_solve(&h, &f, &DMatrix::zeros(0, 1), &DVector::zeros(0), &lo, &hi),
            Err(QpError::Infeasible)
        ));
    }

    /// Brute-force oracle: enumerate every combination of bound fixings,
    /// solve the equality-constrained subproblem, and keep the feasible
    /// candidate with the lowest objective.
    fn enumerate_oracle(
        h: &DMatrix<f64>,
        f: &DVector<f64>,
        a_eq: &DMatrix<f64>,
        b_eq: &DVector<f64>,
        lo: &DVector<f64>,
        hi: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        let n = h.nrows();
        let mut best: Option<(f64, DVector<f64>)> = None;
        let combos = 3usize.pow(n as u32);
        'combo: for code in 0..combos {
            let mut c = code;
            let mut fixed = Vec::new();
            for i in 0..n {
                match c % 3 {
                    1 if lo[i].is_finite() => fixed.push((i, lo[i])),
                    2 if hi[i].is_finite() => fixed.push((i, hi[i])),
                    1 | 2 => continue 'combo,
                    _ => {}
                }
                c /= 3;
            }
            let rows = a_eq.nrows() + fixed.len();
            let mut a = DMatrix::zeros(rows, n);
            let mut b = DVector::zeros(rows);
            a.view_mut((0, 0), (a_eq.nrows(), n)).copy_from(a_eq);
            b.rows_mut(0, a_eq.nrows()).copy_from(b_eq);
            for (j, &(i, val)) in fixed.iter().enumerate() {
                a[(a_eq.nrows() + j, i)] = 1.0;
                b[a_eq.nrows() + j] = val;
            }
            // stationary point of the Lagrangian
            let mut kkt = DMatrix::zeros(n + rows, n + rows);
            kkt.view_mut((0, 0), (n, n)).copy_from(h);
            kkt.view_mut((0, n), (n, rows)).copy_from(&a.transpose());
            kkt.view_mut((n, 0), (rows, n)).copy_from(&a);
            let mut rhs = DVector::zeros(n + rows);
            rhs.rows_mut(0, n).copy_from(&(-f));
            rhs.rows_mut(n, rows).copy_from(&b);
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x = sol.rows(0, n).into_owned();
            let feasible = (0..n).all(|i| x[i] >= lo[i] - 1e-8 && x[i] <= hi[i] + 1e-8)
                && ((a_eq * &x) - b_eq).norm() < 1e-7;
            if !feasible || x.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let obj = 0.5 * (&x.transpose() * h * &x)[(0, 0)] + f.dot(&x);
            if best.as_ref().is_none_or(|(bo, _)| obj < bo - 1e-12) {
                best = Some((obj, x));
            }
        }
        best.map(|(_, x)| x)
    }

    #[test]
    fn random_qps_match_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..200 {
            let n = rng.random_range(2..=5);
            let neq = rng.random_range(0..n.min(2));
            // SPD Hessian from a random square root
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let h = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
            let f = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let a_eq = DMatrix::from_fn(neq, n, |_, _| rng.random_range(-1.0..1.0));
            let b_eq = DVector::from_fn(neq, |_, _| rng.random_range(-1.0..1.0));
            let mut lo = DVector::from_element(n, f64::NEG_INFINITY);
            let mut hi = DVector::from_element(n, f64::INFINITY);
            for i in 0..n {
                if rng.random_bool(0.7) {
                    lo[i] = rng.random_range(-1.5..0.0);
                }
                if rng.random_bool(0.7) {
                    hi[i] = rng.random_range(0.0..1.5);
                }
            }
            let oracle = enumerate_oracle(&h, &f, &a_eq, &b_eq, &lo, &hi);
            let mine = qp_solve(&h, &f, &a_eq, &b_eq, &lo, &hi);
            match (oracle, mine) {
                (Some(ox), Ok(sol)) => {
                    assert_abs_diff_eq!(sol.x, ox, epsilon = 1e-6);
                }
                (None, Err(_)) => {}
                (o, m) => panic!("case {case}: oracle {o:?} vs solver {m:?}"),
            }
        }
    }

    #[test]
    fn solutions_satisfy_constraints_tightly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = 6;
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let h = &a * a.transpose() + DMatrix::identity(n, n);
            let f = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let a_eq = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
            let b_eq = DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
            let lo = DVector::from_element(n, -1.0);
            let hi = DVector::from_element(n, 1.0);
            if let Ok(sol) = qp_solve(&h, &f, &a_eq, &b_eq, &lo, &hi) {
                assert!(((&a_eq * &sol.x) - &b_eq).norm() < 1e-9);
                for i in 0..n {
                    assert!(sol.x[i] >= lo[i] - 1e-9 && sol.x[i] <= hi[i] + 1e-9);
                }
            }
        }
    }
}
