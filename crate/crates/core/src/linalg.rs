//! Dense Hermitian Cholesky and preconditioned conjugate gradients.

use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Failure of the factorization at a given pivot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotFailure {
    pub index: usize,
    pub pivot: f64,
}

/// Lower factor `L` with `A = L L^H`, stored as split real/imaginary
/// row-major squares (only the lower triangle is meaningful).
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

#[inline]
fn dot_conj(ar: &[f64], ai: &[f64], br: &[f64], bi: &[f64]) -> (f64, f64) {
    // sum a * conj(b), four independent lanes so the loop vectorizes
    let mut sr = [0.0f64; 4];
    let mut si = [0.0f64; 4];
    let n = ar.len();
    let chunks = n / 4;
    for c in 0..chunks {
        let o = 4 * c;
        for l in 0..4 {
            let (xr, xi, yr, yi) = (ar[o + l], ai[o + l], br[o + l], bi[o + l]);
            sr[l] += xr * yr + xi * yi;
            si[l] += xi * yr - xr * yi;
        }
    }
    let (mut tr, mut ti) = (sr.iter().sum::<f64>(), si.iter().sum::<f64>());
    for k in 4 * chunks..n {
        tr += ar[k] * br[k] + ai[k] * bi[k];
        ti += ai[k] * br[k] - ar[k] * bi[k];
    }
    (tr, ti)
}

impl Cholesky {
    /// Factor a Hermitian matrix given by `entry(row, col)` (lower triangle
    /// is read). A pivot at or below `rel_tol * max diagonal` fails.
    pub fn factor(
        n: usize,
        entry: impl Fn(usize, usize) -> Complex64,
        rel_tol: f64,
    ) -> Result<Self, PivotFailure> {
        let mut re = vec![0.0; n * n];
        let mut im = vec![0.0; n * n];
        let mut max_diag: f64 = 0.0;
        for i in 0..n {
            for j in 0..=i {
                let a = entry(i, j);
                re[i * n + j] = a.re;
                im[i * n + j] = a.im;
            }
            max_diag = max_diag.max(re[i * n + i]);
        }
        if !(max_diag > 0.0) {
            return Err(PivotFailure {
                index: 0,
                pivot: max_diag,
            });
        }
        let floor = rel_tol * max_diag;
        // Rows are processed in small blocks so each earlier row is streamed
        // once per block instead of once per row.
        const BLOCK: usize = 8;
        let mut i0 = 0;
        while i0 < n {
            let i1 = (i0 + BLOCK).min(n);
            for j in 0..i1 {
                let (head, tail) = (j * n, j * n + j);
                for i in i0.max(j)..i1 {
                    let row = i * n;
                    let (sr, si) = if j == 0 {
                        (0.0, 0.0)
                    } else {
                        dot_conj(
                            &re[row..row + j],
                            &im[row..row + j],
                            &re[head..tail],
                            &im[head..tail],
                        )
                    };
                    let (vr, vi) = (re[row + j] - sr, im[row + j] - si);
                    if i == j {
                        if !(vr > floor) {
                            return Err(PivotFailure { index: j, pivot: vr });
                        }
                        re[row + j] = vr.sqrt();
                        im[row + j] = 0.0;
                    } else {
                        let d = re[tail];
                        re[row + j] = vr / d;
                        im[row + j] = vi / d;
                    }
                }
            }
            i0 = i1;
        }
        Ok(Self { n, re, im })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re[i * self.n + j], self.im[i * self.n + j])
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l(i, k) * y[k];
            }
            y[i] = s / self.re[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l(k, i).conj() * y[k];
            }
            y[i] = s / self.re[i * n + i];
        }
        y
    }

    /// `A x` reconstructed from the factor.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        // t = L^H x
        let mut t = vec![ZERO; n];
        for i in 0..n {
            let xi = x[i];
            for (j, tj) in t.iter_mut().enumerate().take(i + 1) {
                *tj += self.l(i, j).conj() * xi;
            }
        }
        (0..n)
            .map(|i| (0..=i).map(|j| self.l(i, j) * t[j]).sum())
            .collect()
    }

    /// Ratio of extreme eigenvalues, estimated by power and inverse
    /// iteration. Returns `(condition, index of the largest component of the
    /// weakest eigenvector)`.
    pub fn condition_estimate(&self, iterations: usize) -> (f64, usize) {
        let n = self.n;
        let start: Vec<Complex64> = (0..n)
            .map(|i| {
                let s = ((i as f64 + 1.0) * 0.754_877_666).fract();
                Complex64::new(0.5 + s, 0.25 - 0.5 * s)
            })
            .collect();
        let normalize = |v: &mut Vec<Complex64>| {
            let s = norm(v);
            if s > 0.0 {
                v.iter_mut().for_each(|z| *z /= s);
            }
            s
        };
        let mut v = start.clone();
        normalize(&mut v);
        let mut lmax = 0.0;
        for _ in 0..iterations {
            v = self.apply(&v);
            lmax = normalize(&mut v);
        }
        let mut u = start;
        normalize(&mut u);
        let mut inv_min = 0.0;
        for _ in 0..iterations {
            u = self.solve(&u);
            inv_min = normalize(&mut u);
        }
        let weakest = u
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        (lmax * inv_min, weakest)
    }
}

pub fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Outcome of [`pcg`].
#[derive(Debug, Clone)]
pub struct PcgResult {
    pub x: Vec<Complex64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Jacobi-preconditioned conjugate gradients for a Hermitian positive
/// semi-definite operator. `residual` is relative to `|b|`; on failure the
/// best iterate seen is returned.
pub fn pcg(
    apply: impl Fn(&[Complex64]) -> Vec<Complex64>,
    diag: &[f64],
    b: &[Complex64],
    tol: f64,
    max_iter: usize,
) -> PcgResult {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![ZERO; n];
    if bnorm == 0.0 {
        return PcgResult {
            x,
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let precondition = |r: &[Complex64]| -> Vec<Complex64> {
        r.iter().zip(diag).map(|(z, d)| z / *d).collect()
    };
    let mut r = b.to_vec();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = inner(&r, &z).re;
    let mut best = (x.clone(), 1.0);
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = inner(&p, &ap).re;
        if !(pap > 0.0) {
            break;
        }
        let step = rz / pap;
        for k in 0..n {
            x[k] += p[k] * step;
            r[k] -= ap[k] * step;
        }
        let res = norm(&r) / bnorm;
        if res < best.1 {
            best = (x.clone(), res);
        }
        if res <= tol {
            return PcgResult {
                x,
                iterations: it,
                residual: res,
                converged: true,
            };
        }
        z = precondition(&r);
        let rz_new = inner(&r, &z).re;
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + p[k] * beta;
        }
        if it == max_iter {
            break;
        }
    }
    PcgResult {
        x: best.0,
        iterations: max_iter,
        residual: best.1,
        converged: false,
    }
}
