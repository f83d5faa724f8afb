#![allow(dead_code)]

pub type Mat = Vec<Vec<f64>>;

/// Dense matrix of a linear map from its action on unit vectors.
pub fn dense(n: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Mat {
    let mut a = vec![vec![0.0; n]; n];
    let mut e = vec![0.0; n];
    for c in 0..n {
        e[c] = 1.0;
        for (r, v) in f(&e).into_iter().enumerate() {
            a[r][c] = v;
        }
        e[c] = 0.0;
    }
    a
}

pub fn matvec(a: &Mat, x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

/// `I - c a + diag(d)`.
pub fn shifted(a: &Mat, c: f64, d: Option<&[f64]>) -> Mat {
    let n = a.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = -c * a[i][j];
        }
        m[i][i] += 1.0 + d.map_or(0.0, |d| d[i]);
    }
    m
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Mat, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&x, &y| a[x][k].abs().total_cmp(&a[y][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let l = a[i][k] / a[k][k];
            if l == 0.0 {
                continue;
            }
            for j in k..n {
                a[i][j] -= l * a[k][j];
            }
            b[i] -= l * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

pub fn lin(terms: &[(f64, &[f64])]) -> Vec<f64> {
    let n = terms[0].1.len();
    let mut out = vec![0.0; n];
    for (c, v) in terms {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += c * x;
        }
    }
    out
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
