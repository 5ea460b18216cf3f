use crate::rng::RngStream;

/// Row-major `rows x cols` matrix with orthonormal rows (or columns, whichever
/// is fewer), scaled by `gain`. Modified Gram-Schmidt on a Gaussian draw.
pub(crate) fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut RngStream) -> Vec<f64> {
    let (long, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // `short` vectors of length `long`
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.normal::<f64>()).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-10 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut w = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            w[r * cols + c] = gain
                * if rows >= cols {
                    basis[c][r]
                } else {
                    basis[r][c]
                };
        }
    }
    w
}
