//! Graph transition matrices for diffusion convolution and the scaled
//! Laplacian machinery for the Chebyshev reference operator.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Forward and backward random-walk transition matrices
/// `[D_O^{-1} A, D_I^{-1} A^T]`. Rows with zero degree map to zero rows.
pub fn build_supports<F: Scalar>(adjacency: &Array2<F>) -> Result<Vec<Array2<F>>> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n {
        return Err(Error::shape(format!(
            "adjacency shape mismatch: {}x{}",
            n,
            adjacency.ncols()
        )));
    }
    if adjacency.iter().any(|v| *v < F::zero()) {
        return Err(Error::data("adjacency has negative entries"));
    }
    let normalize_rows = |m: Array2<F>| -> Array2<F> {
        let mut out = m;
        for i in 0..n {
            let s: F = out.row(i).iter().cloned().sum();
            if s > F::zero() {
                out.row_mut(i).mapv_inplace(|v| v / s);
            }
        }
        out
    };
    let fwd = normalize_rows(adjacency.clone());
    let bwd = normalize_rows(adjacency.t().to_owned());
    Ok(vec![fwd, bwd])
}

/// Identity supports for datasets without a graph: diffusion degenerates to a
/// per-node linear map.
pub fn identity_supports<F: Scalar>(n: usize) -> Vec<Array2<F>> {
    vec![Array2::eye(n), Array2::eye(n)]
}

/// Symmetric-normalized Laplacian `I - D^{-1/2} A D^{-1/2}` with the
/// zero-degree rule applied to the normalization (isolated nodes keep the
/// identity row).
pub fn normalized_laplacian<F: Scalar>(adjacency: &Array2<F>) -> Result<Array2<F>> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n {
        return Err(Error::shape("adjacency must be square"));
    }
    if adjacency.iter().any(|v| *v < F::zero()) {
        return Err(Error::data("adjacency has negative entries"));
    }
    let deg: Vec<F> = (0..n)
        .map(|i| adjacency.row(i).iter().cloned().sum())
        .collect();
    let dinv_sqrt: Vec<F> = deg
        .iter()
        .map(|&d| {
            if d > F::zero() {
                F::one() / d.sqrt()
            } else {
                F::zero()
            }
        })
        .collect();
    let mut lap = Array2::<F>::eye(n);
    for i in 0..n {
        for j in 0..n {
            let v = dinv_sqrt[i] * adjacency[(i, j)] * dinv_sqrt[j];
            lap[(i, j)] = lap[(i, j)] - v;
        }
    }
    Ok(lap)
}

/// Largest eigenvalue by power iteration (absolute tolerance, iteration cap).
pub fn power_iteration_lambda_max<F: Scalar>(m: &Array2<F>, tol: F, cap: usize) -> F {
    let n = m.nrows();
    let mut v = Array1::<F>::from_shape_fn(n, |i| {
        F::one() + F::from_f64(0.01).unwrap() * F::from_usize(i).unwrap()
    });
    let norm = |x: &Array1<F>| -> F { x.iter().map(|e| *e * *e).sum::<F>().sqrt() };
    let nv = norm(&v);
    v.mapv_inplace(|e| e / nv);
    let mut lambda = F::zero();
    for _ in 0..cap {
        let mv = m.dot(&v);
        let mv_norm = norm(&mv);
        if !(mv_norm > F::zero()) {
            return F::zero();
        }
        let next = mv.mapv(|e| e / mv_norm);
        let new_lambda = next.dot(&m.dot(&next));
        let done = (new_lambda - lambda).abs() <= tol;
        lambda = new_lambda;
        v = next;
        if done {
            break;
        }
    }
    lambda
}

/// Scaled Laplacian `2 L / lambda_max - I`; falls back to `lambda_max = 2`
/// when the estimate degenerates.
pub fn scaled_laplacian<F: Scalar>(adjacency: &Array2<F>) -> Result<Array2<F>> {
    let lap = normalized_laplacian(adjacency)?;
    let tol = F::from_f64(1e-4).unwrap();
    let mut lambda = power_iteration_lambda_max(&lap, tol, 100);
    if !(lambda > tol) {
        lambda = F::from_f64(2.0).unwrap();
    }
    let n = lap.nrows();
    let two = F::from_f64(2.0).unwrap();
    let mut out = lap.mapv(|v| two * v / lambda);
    for i in 0..n {
        out[(i, i)] = out[(i, i)] - F::one();
    }
    Ok(out)
}

/// Chebyshev polynomials `T_0..T_{k-1}` of the scaled Laplacian:
/// `T_0 = I`, `T_1 = Lt`, `T_k = 2 Lt T_{k-1} - T_{k-2}`.
pub fn chebyshev_polynomials<F: Scalar>(lt: &Array2<F>, k: usize) -> Vec<Array2<F>> {
    assert!(k >= 1);
    let n = lt.nrows();
    let mut polys = Vec::with_capacity(k);
    polys.push(Array2::<F>::eye(n));
    if k >= 2 {
        polys.push(lt.clone());
    }
    let two = F::from_f64(2.0).unwrap();
    for i in 2..k {
        let next = lt.dot(&polys[i - 1]).mapv(|v| v * two) - &polys[i - 2];
        polys.push(next);
    }
    polys
}
