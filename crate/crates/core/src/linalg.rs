//! Dense symmetric eigendecomposition and compensated accumulation.

use nalgebra::{DMatrix, SymmetricEigen};

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
///
/// Column `i` of `vectors` belongs to `values[i]`. Each eigenvector is sign
/// normalized so that its largest-magnitude entry is positive, which makes the
/// output a deterministic function of the input matrix.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn symmetric_eigen(matrix: &DMatrix<f64>) -> SortedEigen {
    let n = matrix.nrows();
    debug_assert_eq!(n, matrix.ncols());
    let eig = SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for r in 1..n {
            if col[r].abs() > col[pivot].abs() + 1e-12 {
                pivot = r;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[(r, dst)] = sign * col[r];
        }
    }
    SortedEigen { values, vectors }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(matrix: &DMatrix<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = SymmetricEigen::new(matrix.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Neumaier-compensated dot product.
pub fn dot_compensated(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let term = x * y;
        let t = sum + term;
        if sum.abs() >= term.abs() {
            carry += (sum - t) + term;
        } else {
            carry += (term - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenpairs_reconstruct_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        let e = symmetric_eigen(&m);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        for i in 0..3 {
            let v = e.vectors.column(i);
            let mv = &m * v;
            for r in 0..3 {
                assert!((mv[r] - e.values[i] * v[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn compensated_dot_recovers_cancellation() {
        let a = [1e16, 1.0, -1e16];
        let b = [1.0, 1.0, 1.0];
        assert_eq!(dot_compensated(&a, &b), 1.0);
    }
}
