//! Normal equations of the spectral least-squares fit.
//!
//! Differentiating the merit function with respect to `alpha(k,l)` and
//! `beta(k,l)` gives, for every retained mode `(k, l)`,
//!
//! ```text
//! sum_ij alpha(i,j) Pxx(k+i, l+j) + beta(i,j) Pxy(k+i, l+j) = -Ptx(k, l)
//! sum_ij alpha(i,j) Pxy(k+i, l+j) + beta(i,j) Pyy(k+i, l+j) = -Pty(k, l)
//! ```
//!
//! where `P..(m, n)` is the DFT of a time-accumulated derivative product at
//! frequency `(m, n)`. Entries depend only on index sums, so the blocks are
//! Hankel-like; reversing the unknown order turns them into two-level
//! Toeplitz blocks, which is what the FFT matvec exploits.

use ndarray::Array2;
use num_complex::Complex64;

use crate::deriv::DerivativeProducts;
use crate::error::{arg_err, Result};
use crate::fft::{fast_len, fft2_real, wrap, Fft2};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// DFT tables of the five product fields at frequencies
/// `[-2n_x..2n_x] x [-2n_y..2n_y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductSpectra {
    pub n_x: usize,
    pub n_y: usize,
    pub width: usize,
    pub height: usize,
    pub pxx: Array2<Complex64>,
    pub pxy: Array2<Complex64>,
    pub pyy: Array2<Complex64>,
    pub ptx: Array2<Complex64>,
    pub pty: Array2<Complex64>,
}

impl ProductSpectra {
    pub fn zeros(n_x: usize, n_y: usize, width: usize, height: usize) -> Self {
        let z = Array2::from_elem((4 * n_y + 1, 4 * n_x + 1), ZERO);
        Self {
            n_x,
            n_y,
            width,
            height,
            pxx: z.clone(),
            pxy: z.clone(),
            pyy: z.clone(),
            ptx: z.clone(),
            pty: z,
        }
    }

    /// Accumulate another set of tables; the transform is linear, so this
    /// equals the spectra of the summed products.
    pub fn add(&mut self, other: &ProductSpectra) {
        debug_assert_eq!((self.n_x, self.n_y), (other.n_x, other.n_y));
        self.pxx += &other.pxx;
        self.pxy += &other.pxy;
        self.pyy += &other.pyy;
        self.ptx += &other.ptx;
        self.pty += &other.pty;
    }

    /// Entry of a table at signed frequency `(m, n)`.
    #[inline]
    pub fn at(&self, table: &Array2<Complex64>, m: i64, n: i64) -> Complex64 {
        table[[(n + 2 * self.n_y as i64) as usize, (m + 2 * self.n_x as i64) as usize]]
    }

    /// Unknowns per velocity component.
    pub fn modes(&self) -> usize {
        (2 * self.n_x + 1) * (2 * self.n_y + 1)
    }
}

fn check_resolution(n_x: usize, n_y: usize, height: usize, width: usize) -> Result<()> {
    if 4 * n_x >= width || 4 * n_y >= height {
        return arg_err(format!(
            "{n_x}x{n_y} modes need 4n < grid size, grid is {height}x{width}"
        ));
    }
    Ok(())
}

/// DFT of one real field at signed frequencies `[-2n_x..2n_x] x [-2n_y..2n_y]`.
pub fn field_spectrum(field: &Array2<f64>, n_x: usize, n_y: usize) -> Result<Array2<Complex64>> {
    let (h, w) = field.dim();
    check_resolution(n_x, n_y, h, w)?;
    let full = fft2_real(field);
    let (rx, ry) = (2 * n_x as i64, 2 * n_y as i64);
    Ok(Array2::from_shape_fn(
        (4 * n_y + 1, 4 * n_x + 1),
        |(r, c)| full[[wrap(r as i64 - ry, h), wrap(c as i64 - rx, w)]],
    ))
}

pub fn product_spectra(
    products: &DerivativeProducts,
    n_x: usize,
    n_y: usize,
) -> Result<ProductSpectra> {
    let (h, w) = (products.height(), products.width());
    check_resolution(n_x, n_y, h, w)?;
    Ok(ProductSpectra {
        n_x,
        n_y,
        width: w,
        height: h,
        pxx: field_spectrum(&products.sxx, n_x, n_y)?,
        pxy: field_spectrum(&products.sxy, n_x, n_y)?,
        pyy: field_spectrum(&products.syy, n_x, n_y)?,
        ptx: field_spectrum(&products.stx, n_x, n_y)?,
        pty: field_spectrum(&products.sty, n_x, n_y)?,
    })
}

/// Position of mode `(i, j)` inside one component block.
#[inline]
pub fn mode_index(n_x: usize, n_y: usize, i: i64, j: i64) -> usize {
    (j + n_y as i64) as usize * (2 * n_x + 1) + (i + n_x as i64) as usize
}

/// Map every mode `(i, j)` to `(-i, -j)` within each component block.
/// With `j`-major ordering this is a reversal of each block.
pub fn flip_modes(v: &[Complex64]) -> Vec<Complex64> {
    let m = v.len() / 2;
    v[..m]
        .iter()
        .rev()
        .chain(v[m..].iter().rev())
        .copied()
        .collect()
}

/// FFT-based product with the implicit coefficient matrix.
pub struct StructuredOperator {
    n_x: usize,
    n_y: usize,
    lx: usize,
    ly: usize,
    fxx: Array2<Complex64>,
    fxy: Array2<Complex64>,
    fyy: Array2<Complex64>,
    forward: Fft2,
    inverse: Fft2,
}

impl std::fmt::Debug for StructuredOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StructuredOperator")
            .field("n_x", &self.n_x)
            .field("n_y", &self.n_y)
            .field("grid", &(self.ly, self.lx))
            .finish()
    }
}

impl StructuredOperator {
    pub fn new(spectra: &ProductSpectra) -> Self {
        let (n_x, n_y) = (spectra.n_x, spectra.n_y);
        // Outputs live at |k| <= n while the linear convolution spans |k| <= 3n,
        // so any period above 4n keeps the wanted outputs alias-free.
        let lx = fast_len(4 * n_x + 1);
        let ly = fast_len(4 * n_y + 1);
        let forward = Fft2::forward(ly, lx);
        let inverse = Fft2::inverse(ly, lx);
        let embed = |table: &Array2<Complex64>| {
            let mut g = Array2::from_elem((ly, lx), ZERO);
            for ((r, c), p) in table.indexed_iter() {
                let m = c as i64 - 2 * n_x as i64;
                let n = r as i64 - 2 * n_y as i64;
                g[[wrap(n, ly), wrap(m, lx)]] = *p;
            }
            forward.process(&mut g);
            g
        };
        Self {
            n_x,
            n_y,
            lx,
            ly,
            fxx: embed(&spectra.pxx),
            fxy: embed(&spectra.pxy),
            fyy: embed(&spectra.pyy),
            forward,
            inverse,
        }
    }

    pub fn dim(&self) -> usize {
        2 * (2 * self.n_x + 1) * (2 * self.n_y + 1)
    }

    /// `matrix * v` without forming the matrix.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim(), "vector length does not match system");
        let (nx, ny) = (self.n_x as i64, self.n_y as i64);
        let m = v.len() / 2;
        // Sum indexing becomes a convolution after reflecting the input.
        let load = |block: &[Complex64]| {
            let mut g = Array2::from_elem((self.ly, self.lx), ZERO);
            for j in -ny..=ny {
                for i in -nx..=nx {
                    g[[wrap(-j, self.ly), wrap(-i, self.lx)]] =
                        block[mode_index(self.n_x, self.n_y, i, j)];
                }
            }
            self.forward.process(&mut g);
            g
        };
        let ua = load(&v[..m]);
        let ub = load(&v[m..]);
        let mut oa = &self.fxx * &ua + &self.fxy * &ub;
        let mut ob = &self.fxy * &ua + &self.fyy * &ub;
        self.inverse.process(&mut oa);
        self.inverse.process(&mut ob);
        let norm = 1.0 / (self.lx * self.ly) as f64;
        let mut out = vec![ZERO; v.len()];
        for j in -ny..=ny {
            for i in -nx..=nx {
                let idx = mode_index(self.n_x, self.n_y, i, j);
                let slot = [wrap(j, self.ly), wrap(i, self.lx)];
                out[idx] = oa[slot] * norm;
                out[m + idx] = ob[slot] * norm;
            }
        }
        out
    }
}

/// The complex linear system for `[alpha; beta]`.
#[derive(Debug)]
pub struct NormalSystem {
    pub spectra: ProductSpectra,
    /// Materialized matrix, present only for the dense path.
    pub dense: Option<Array2<Complex64>>,
    pub rhs: Vec<Complex64>,
    operator: StructuredOperator,
}

impl NormalSystem {
    pub fn from_spectra(spectra: ProductSpectra, materialize: bool) -> Self {
        let (n_x, n_y) = (spectra.n_x, spectra.n_y);
        let m = spectra.modes();
        let mut rhs = vec![ZERO; 2 * m];
        for l in -(n_y as i64)..=n_y as i64 {
            for k in -(n_x as i64)..=n_x as i64 {
                let idx = mode_index(n_x, n_y, k, l);
                rhs[idx] = -spectra.at(&spectra.ptx, k, l);
                rhs[m + idx] = -spectra.at(&spectra.pty, k, l);
            }
        }
        let dense = materialize.then(|| dense_matrix(&spectra));
        let operator = StructuredOperator::new(&spectra);
        Self {
            spectra,
            dense,
            rhs,
            operator,
        }
    }

    pub fn n_x(&self) -> usize {
        self.spectra.n_x
    }

    pub fn n_y(&self) -> usize {
        self.spectra.n_y
    }

    pub fn width(&self) -> usize {
        self.spectra.width
    }

    pub fn height(&self) -> usize {
        self.spectra.height
    }

    pub fn dim(&self) -> usize {
        2 * self.spectra.modes()
    }

    pub fn operator(&self) -> &StructuredOperator {
        &self.operator
    }

    /// Dense product, when the matrix has been materialized.
    pub fn dense_matvec(&self, v: &[Complex64]) -> Option<Vec<Complex64>> {
        let a = self.dense.as_ref()?;
        Some(
            a.rows()
                .into_iter()
                .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
                .collect(),
        )
    }
}

fn dense_matrix(spectra: &ProductSpectra) -> Array2<Complex64> {
    let (n_x, n_y) = (spectra.n_x as i64, spectra.n_y as i64);
    let m = spectra.modes();
    let mut a = Array2::from_elem((2 * m, 2 * m), ZERO);
    for l in -n_y..=n_y {
        for k in -n_x..=n_x {
            let row = mode_index(spectra.n_x, spectra.n_y, k, l);
            for j in -n_y..=n_y {
                for i in -n_x..=n_x {
                    let col = mode_index(spectra.n_x, spectra.n_y, i, j);
                    let (s, t) = (k + i, l + j);
                    let xy = spectra.at(&spectra.pxy, s, t);
                    a[[row, col]] = spectra.at(&spectra.pxx, s, t);
                    a[[row, m + col]] = xy;
                    a[[m + row, col]] = xy;
                    a[[m + row, m + col]] = spectra.at(&spectra.pyy, s, t);
                }
            }
        }
    }
    a
}

/// Dense system: matrix materialized.
pub fn assemble_dense(products: &DerivativeProducts, n_x: usize, n_y: usize) -> Result<NormalSystem> {
    Ok(NormalSystem::from_spectra(product_spectra(products, n_x, n_y)?, true))
}

/// Implicit system: spectra only.
pub fn assemble_implicit(
    products: &DerivativeProducts,
    n_x: usize,
    n_y: usize,
) -> Result<NormalSystem> {
    Ok(NormalSystem::from_spectra(product_spectra(products, n_x, n_y)?, false))
}

pub fn matvec_structured(system: &NormalSystem, v: &[Complex64]) -> Vec<Complex64> {
    system.operator.apply(v)
}
