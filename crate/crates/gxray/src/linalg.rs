//! Small fixed-size linear algebra on stack arrays.
//!
//! The chart dimension is 2 or 3 at runtime, so everything works on `[f64; 3]`
//! and `[[f64; 3]; 3]` with an explicit `n`, leaving unused slots at zero.
//! This keeps the flow integrator allocation-free.

pub const MAX_DIM: usize = 3;

pub type Vector = [f64; MAX_DIM];
pub type Matrix = [[f64; MAX_DIM]; MAX_DIM];

pub const ZERO_VEC: Vector = [0.0; MAX_DIM];
pub const ZERO_MAT: Matrix = [[0.0; MAX_DIM]; MAX_DIM];

pub fn identity(n: usize) -> Matrix {
    let mut m = ZERO_MAT;
    for i in 0..n {
        m[i][i] = 1.0;
    }
    m
}

pub fn mat_vec(m: &Matrix, v: &Vector, n: usize) -> Vector {
    let mut out = ZERO_VEC;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += m[i][j] * v[j];
        }
        out[i] = s;
    }
    out
}

pub fn mat_mul(a: &Matrix, b: &Matrix, n: usize) -> Matrix {
    let mut out = ZERO_MAT;
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Matrix, n: usize) -> Matrix {
    let mut out = ZERO_MAT;
    for i in 0..n {
        for j in 0..n {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn dot(a: &Vector, b: &Vector, n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        s += a[i] * b[i];
    }
    s
}

/// Inner product `aᵀ g b` for a symmetric metric matrix.
pub fn dot_g(g: &Matrix, a: &Vector, b: &Vector, n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += g[i][j] * a[i] * b[j];
        }
    }
    s
}

pub fn norm_g(g: &Matrix, a: &Vector, n: usize) -> f64 {
    dot_g(g, a, a, n).max(0.0).sqrt()
}

pub fn scale(a: &Vector, c: f64, n: usize) -> Vector {
    let mut out = ZERO_VEC;
    for i in 0..n {
        out[i] = a[i] * c;
    }
    out
}

pub fn axpy(y: &mut Vector, alpha: f64, x: &Vector, n: usize) {
    for i in 0..n {
        y[i] += alpha * x[i];
    }
}

pub fn sub(a: &Vector, b: &Vector, n: usize) -> Vector {
    let mut out = ZERO_VEC;
    for i in 0..n {
        out[i] = a[i] - b[i];
    }
    out
}

pub fn add(a: &Vector, b: &Vector, n: usize) -> Vector {
    let mut out = ZERO_VEC;
    for i in 0..n {
        out[i] = a[i] + b[i];
    }
    out
}

pub fn det(m: &Matrix, n: usize) -> f64 {
    match n {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => panic!("unsupported dimension {n}"),
    }
}

/// Inverse of a 2x2 or 3x3 matrix (not necessarily symmetric).
pub fn inverse(m: &Matrix, n: usize) -> Option<Matrix> {
    let d = det(m, n);
    if d.abs() < 1e-300 {
        return None;
    }
    let inv_d = 1.0 / d;
    let mut out = ZERO_MAT;
    match n {
        2 => {
            out[0][0] = m[1][1] * inv_d;
            out[0][1] = -m[0][1] * inv_d;
            out[1][0] = -m[1][0] * inv_d;
            out[1][1] = m[0][0] * inv_d;
        }
        3 => {
            out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_d;
            out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_d;
            out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_d;
            out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_d;
            out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_d;
            out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_d;
            out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_d;
            out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_d;
            out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_d;
        }
        _ => return None,
    }
    Some(out)
}

/// Eigenvalues and eigenvectors of a symmetric 2x2/3x3 matrix by cyclic Jacobi sweeps.
///
/// Returns (eigenvalues, column eigenvectors). Deterministic and accurate to
/// machine precision for the well-conditioned metrics used here.
pub fn sym_eigen(m: &Matrix, n: usize) -> (Vector, Matrix) {
    let mut a = *m;
    let mut v = identity(n);
    for _sweep in 0..32 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut eig = ZERO_VEC;
    for i in 0..n {
        eig[i] = a[i][i];
    }
    (eig, v)
}

/// Symmetric square root of an SPD matrix.
pub fn sym_sqrt(m: &Matrix, n: usize) -> Matrix {
    let (eig, v) = sym_eigen(m, n);
    let mut out = ZERO_MAT;
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += v[i][k] * eig[k].max(0.0).sqrt() * v[j][k];
            }
            out[i][j] = s;
        }
    }
    out
}

/// Check symmetric positive definiteness via eigenvalues.
pub fn is_spd(m: &Matrix, n: usize) -> bool {
    let (eig, _) = sym_eigen(m, n);
    (0..n).all(|i| eig[i] > 0.0)
}

/// Gram-Schmidt a seed basis into a g-orthonormal frame.
///
/// `seeds` must be linearly independent; columns of the result satisfy
/// `e_iᵀ g e_j = δ_ij`. Frame vectors are returned as rows.
pub fn gram_schmidt_g(seeds: &[Vector], g: &Matrix, n: usize) -> Vec<Vector> {
    let mut frame: Vec<Vector> = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let mut e = *seed;
        for prev in &frame {
            let c = dot_g(g, &e, prev, n);
            axpy(&mut e, -c, prev, n);
        }
        let nrm = norm_g(g, &e, n);
        assert!(nrm > 1e-12, "degenerate seed set in gram_schmidt_g");
        frame.push(scale(&e, 1.0 / nrm, n));
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip_3x3() {
        let m: Matrix = [[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 1.1]];
        let inv = inverse(&m, 3).unwrap();
        let prod = mat_mul(&m, &inv, 3);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i][j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sym_sqrt_squares_back() {
        let m: Matrix = [[1.3, 0.2, 0.0], [0.2, 0.9, -0.1], [0.0, -0.1, 2.0]];
        let r = sym_sqrt(&m, 3);
        let sq = mat_mul(&r, &r, 3);
        for i in 0..3 {
            for j in 0..3 {
                assert!((sq[i][j] - m[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_schmidt_orthonormal_in_g() {
        let g: Matrix = [[0.25, 0.0, 0.0], [0.0, 0.25, 0.0], [0.0, 0.0, 0.25]];
        let seeds = [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]];
        let frame = gram_schmidt_g(&seeds, &g, 3);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot_g(&g, &frame[i], &frame[j], 3) - expect).abs() < 1e-12);
            }
        }
    }
}
