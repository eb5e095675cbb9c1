//! Reference solvers used by the verification suites and the `check`
//! subcommand. These deliberately take different algorithmic routes from the
//! production code so agreement between the two is meaningful.

use nalgebra::{Complex, DMatrix};

/// Solve the standard CARE A'P + P A - P S P + Q = 0 by eigendecomposition
/// of the Hamiltonian matrix: collect the eigenvectors of the stable
/// eigenvalues and read P off the invariant subspace.
///
/// Assumes distinct stable eigenvalues, which holds almost surely for the
/// random systems the test suites draw.
pub fn solve_care_eigen(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>, String> {
    let n = a.nrows();
    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let eigs = h.clone().complex_eigenvalues();
    let stable: Vec<Complex<f64>> = eigs.iter().copied().filter(|e| e.re < 0.0).collect();
    if stable.len() != n {
        return Err(format!(
            "expected {n} stable Hamiltonian eigenvalues, found {}",
            stable.len()
        ));
    }

    // kernel vector of (H - lambda I) for each stable eigenvalue, via SVD
    let hc = h.map(|v| Complex::new(v, 0.0));
    let mut basis = DMatrix::<Complex<f64>>::zeros(2 * n, n);
    for (k, lambda) in stable.iter().enumerate() {
        let mut m = hc.clone();
        for i in 0..2 * n {
            m[(i, i)] -= *lambda;
        }
        let svd = m.svd(false, true);
        let v_t = svd.v_t.ok_or("svd failed")?;
        let last = v_t.nrows() - 1;
        for i in 0..2 * n {
            basis[(i, k)] = v_t[(last, i)].conj();
        }
    }

    let x1 = basis.rows(0, n).into_owned();
    let x2 = basis.rows(n, n).into_owned();
    let x1_inv = x1.try_inverse().ok_or("X1 block singular")?;
    let p_c = x2 * x1_inv;
    let p = DMatrix::from_fn(n, n, |i, j| p_c[(i, j)].re);
    let max_im = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .fold(0.0f64, |m, (i, j)| m.max(p_c[(i, j)].im.abs()));
    if max_im > 1e-8 * (1.0 + p.norm()) {
        return Err(format!("solution has imaginary residue {max_im:.3e}"));
    }
    let p = 0.5 * (&p + &p.transpose());
    let resid = (a.transpose() * &p + &p * a - &p * s * &p + q).norm() / (1.0 + p.norm());
    if resid > 1e-8 {
        return Err(format!("oracle residual {resid:.3e}"));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_care_by_hand() {
        // A = -1, S = 1, Q = 3: -2P - P^2 + 3 = 0, stabilizing root P = 1
        let a = DMatrix::from_element(1, 1, -1.0);
        let s = DMatrix::from_element(1, 1, 1.0);
        let q = DMatrix::from_element(1, 1, 3.0);
        let p = solve_care_eigen(&a, &s, &q).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12);
    }
}
