//! Finite-difference derivatives of consecutive frame pairs and their
//! time-accumulated products.
//!
//! For a pair `(a, b)` the time derivative is `b - a` (counts/frame) and the
//! spatial gradient is taken on the pair average with the centered
//! fourth-order stencil `(-m[+2] + 8 m[+1] - 8 m[-1] + m[-2]) / 12`. The
//! two-pixel rim where the stencil does not fit is excluded: gradients are
//! zero there and the rim carries zero weight.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::cube::ImageCube;
use crate::error::{arg_err, FlowError, Result};

/// Width of the excluded border.
pub const BORDER: usize = 2;

/// How frames flagged invalid are treated when forming pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    /// Drop every pair that touches an invalid frame.
    #[default]
    Skip,
    /// Use the raw frame data regardless of flags.
    Include,
}

pub fn temporal_derivative(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.dim() != b.dim() {
        return arg_err(format!("frame shapes differ: {:?} vs {:?}", a.dim(), b.dim()));
    }
    Ok(&b - &a)
}

/// Gradient `(d/dx, d/dy)` of the average of two frames.
pub fn spatial_gradient(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if a.dim() != b.dim() {
        return arg_err(format!("frame shapes differ: {:?} vs {:?}", a.dim(), b.dim()));
    }
    let (h, w) = a.dim();
    if h < 5 || w < 5 {
        return arg_err(format!("frames must be at least 5x5 for the stencil, got {h}x{w}"));
    }
    let mean = (&a + &b) * 0.5;
    Ok(stencil_gradient(&mean))
}

/// Fourth-order centered gradient of one field, zero on the rim.
pub fn stencil_gradient(m: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = m.dim();
    let mut gx = Array2::zeros((h, w));
    let mut gy = Array2::zeros((h, w));
    if h < 5 || w < 5 {
        return (gx, gy);
    }
    let m = m.as_standard_layout();
    let src = m.as_slice().unwrap();
    let (gxs, gys) = (gx.as_slice_mut().unwrap(), gy.as_slice_mut().unwrap());
    const C: f64 = 1.0 / 12.0;
    for y in BORDER..h - BORDER {
        let row = y * w;
        for x in BORDER..w - BORDER {
            let i = row + x;
            gxs[i] = (-src[i + 2] + 8.0 * src[i + 1] - 8.0 * src[i - 1] + src[i - 2]) * C;
            gys[i] = (-src[i + 2 * w] + 8.0 * src[i + w] - 8.0 * src[i - w] + src[i - 2 * w]) * C;
        }
    }
    (gx, gy)
}

/// Time derivative and gradients for one frame pair.
pub struct PairDerivatives {
    pub it: Array2<f64>,
    pub gx: Array2<f64>,
    pub gy: Array2<f64>,
}

pub fn pair_derivatives(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<PairDerivatives> {
    let it = temporal_derivative(a, b)?;
    let (gx, gy) = spatial_gradient(a, b)?;
    Ok(PairDerivatives { it, gx, gy })
}

/// Indices `t` of the pairs `(t, t + 1)` that enter the sums.
pub fn used_pairs(cube: &ImageCube, policy: MissingPolicy) -> Vec<usize> {
    (0..cube.n_frames().saturating_sub(1))
        .filter(|&t| match policy {
            MissingPolicy::Skip => cube.is_valid(t) && cube.is_valid(t + 1),
            MissingPolicy::Include => true,
        })
        .collect()
}

/// Time-accumulated derivative products over all used frame pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeProducts {
    pub sxx: Array2<f64>,
    pub sxy: Array2<f64>,
    pub syy: Array2<f64>,
    pub stx: Array2<f64>,
    pub sty: Array2<f64>,
    /// Number of pair contributions per pixel; zero on the excluded rim.
    pub weight: Array2<f64>,
    pub pair_count: usize,
}

impl DerivativeProducts {
    pub fn zeros(height: usize, width: usize) -> Self {
        let z = Array2::zeros((height, width));
        Self {
            sxx: z.clone(),
            sxy: z.clone(),
            syy: z.clone(),
            stx: z.clone(),
            sty: z.clone(),
            weight: z,
            pair_count: 0,
        }
    }

    pub fn height(&self) -> usize {
        self.sxx.dim().0
    }

    pub fn width(&self) -> usize {
        self.sxx.dim().1
    }

    /// Add one pair's products.
    pub fn add_pair(&mut self, d: &PairDerivatives) {
        let (h, w) = self.sxx.dim();
        Zip::from(&mut self.sxx)
            .and(&mut self.sxy)
            .and(&mut self.syy)
            .and(&d.gx)
            .and(&d.gy)
            .for_each(|sxx, sxy, syy, &gx, &gy| {
                *sxx += gx * gx;
                *sxy += gx * gy;
                *syy += gy * gy;
            });
        Zip::from(&mut self.stx)
            .and(&mut self.sty)
            .and(&d.it)
            .and(&d.gx)
            .and(&d.gy)
            .for_each(|stx, sty, &it, &gx, &gy| {
                *stx += it * gx;
                *sty += it * gy;
            });
        if h > 2 * BORDER && w > 2 * BORDER {
            self.weight
                .slice_mut(ndarray::s![BORDER..h - BORDER, BORDER..w - BORDER])
                .mapv_inplace(|v| v + 1.0);
        }
        self.pair_count += 1;
    }

    /// Merge partial sums (reduction step).
    pub fn merge(&mut self, other: &DerivativeProducts) {
        self.sxx += &other.sxx;
        self.sxy += &other.sxy;
        self.syy += &other.syy;
        self.stx += &other.stx;
        self.sty += &other.sty;
        self.weight += &other.weight;
        self.pair_count += other.pair_count;
    }

    /// Multiply every product field by `factor` (weights untouched).
    pub fn scale(&mut self, factor: f64) {
        for f in [
            &mut self.sxx,
            &mut self.sxy,
            &mut self.syy,
            &mut self.stx,
            &mut self.sty,
        ] {
            f.mapv_inplace(|v| v * factor);
        }
    }
}

/// Accumulate over consecutive valid pairs, skipping missing frames.
pub fn accumulate_products(cube: &ImageCube) -> Result<DerivativeProducts> {
    accumulate_products_with(cube, MissingPolicy::Skip)
}

pub fn accumulate_products_with(
    cube: &ImageCube,
    policy: MissingPolicy,
) -> Result<DerivativeProducts> {
    let (h, w) = (cube.height(), cube.width());
    if h < 8 || w < 8 {
        return arg_err(format!("frames must be at least 8x8, got {h}x{w}"));
    }
    let pairs = used_pairs(cube, policy);
    if pairs.is_empty() {
        return Err(FlowError::EstimationInput(format!(
            "no consecutive pair of valid frames among {} frames",
            cube.n_frames()
        )));
    }
    let mut acc = DerivativeProducts::zeros(h, w);
    for t in pairs {
        acc.add_pair(&pair_derivatives(cube.frame(t), cube.frame(t + 1))?);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
    }

    #[test]
    fn temporal_derivative_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_field(8, 9, &mut rng);
        assert!(temporal_derivative(a.view(), a.view())
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let b = &a + 5.0;
        for v in temporal_derivative(a.view(), b.view()).unwrap().iter() {
            assert!((v - 5.0).abs() < 1e-14);
        }
        let c = random_field(8, 9, &mut rng);
        let d = temporal_derivative(a.view(), c.view()).unwrap();
        for ((y, x), v) in d.indexed_iter() {
            assert_eq!(*v, c[[y, x]] - a[[y, x]]);
        }
        assert!(temporal_derivative(a.view(), random_field(8, 8, &mut rng).view()).is_err());
    }

    #[test]
    fn gradient_of_constant_and_ramp() {
        let c = Array2::from_elem((9, 9), 3.0);
        let (gx, gy) = spatial_gradient(c.view(), c.view()).unwrap();
        assert!(gx.iter().chain(gy.iter()).all(|v| *v == 0.0));

        let ramp = Array2::from_shape_fn((10, 12), |(_, x)| x as f64);
        let (gx, gy) = spatial_gradient(ramp.view(), ramp.view()).unwrap();
        for y in BORDER..10 - BORDER {
            for x in BORDER..12 - BORDER {
                assert!((gx[[y, x]] - 1.0).abs() < 1e-13);
                assert!(gy[[y, x]].abs() < 1e-13);
            }
        }
        assert_eq!(gx[[0, 5]], 0.0);
        assert_eq!(gx[[5, 1]], 0.0);
        assert!(spatial_gradient(Array2::zeros((4, 9)).view(), Array2::zeros((4, 9)).view()).is_err());
    }

    #[test]
    fn stencil_is_exact_on_quartics() {
        let f = |x: f64| 0.3 * x.powi(4) - x.powi(3) + 2.0 * x - 1.0;
        let df = |x: f64| 1.2 * x.powi(3) - 3.0 * x.powi(2) + 2.0;
        let m = Array2::from_shape_fn((8, 11), |(_, x)| f(x as f64));
        let (gx, _) = stencil_gradient(&m);
        for x in BORDER..11 - BORDER {
            assert!((gx[[4, x]] - df(x as f64)).abs() < 1e-9 * df(x as f64).abs().max(1.0));
        }
    }

    fn sine_error(w: usize) -> f64 {
        let k = 2.0 * PI / w as f64;
        let m = Array2::from_shape_fn((8, w), |(_, x)| (k * x as f64).sin());
        let (gx, _) = stencil_gradient(&m);
        (BORDER..w - BORDER)
            .map(|x| (gx[[4, x]] / k - (k * x as f64).cos()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn stencil_converges_at_fourth_order() {
        let order = (sine_error(32) / sine_error(64)).log2();
        assert!((order - 4.0).abs() < 0.15, "observed order {order}");
    }

    #[test]
    fn static_cube_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_field(12, 12, &mut rng);
        let cube = ImageCube::from_frames(&[f.clone(), f.clone(), f.clone(), f.clone()]).unwrap();
        let p = accumulate_products(&cube).unwrap();
        assert_eq!(p.pair_count, 3);
        assert!(p.stx.iter().chain(p.sty.iter()).all(|v| *v == 0.0));
        let (gx, gy) = spatial_gradient(f.view(), f.view()).unwrap();
        for ((y, x), v) in p.sxx.indexed_iter() {
            assert!((v - 3.0 * gx[[y, x]].powi(2)).abs() <= 1e-12 * v.abs().max(1.0));
            assert!((p.syy[[y, x]] - 3.0 * gy[[y, x]].powi(2)).abs() <= 1e-12 * v.abs().max(1.0));
        }
        assert_eq!(p.weight[[5, 5]], 3.0);
        assert_eq!(p.weight[[1, 5]], 0.0);
    }

    #[test]
    fn middle_frame_missing_leaves_no_pairs() {
        let cube = ImageCube::new(Array3::from_elem((3, 8, 8), 1.0))
            .unwrap()
            .mark_missing(&[1])
            .unwrap();
        assert!(matches!(
            accumulate_products(&cube),
            Err(FlowError::EstimationInput(_))
        ));
        assert_eq!(
            accumulate_products_with(&cube, MissingPolicy::Include)
                .unwrap()
                .pair_count,
            2
        );
    }

    #[test]
    fn ten_frames_with_one_missing_uses_seven_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cube = ImageCube::new(Array3::from_shape_fn((10, 8, 8), |_| rng.random::<f64>()))
            .unwrap()
            .mark_missing(&[5])
            .unwrap();
        // brute-force enumeration of consecutive valid pairs
        let expected = (0..9)
            .filter(|&t| cube.is_valid(t) && cube.is_valid(t + 1))
            .count();
        assert_eq!(expected, 7);
        let p = accumulate_products(&cube).unwrap();
        assert_eq!(p.pair_count, expected);
        assert!(!used_pairs(&cube, MissingPolicy::Skip).contains(&4));
        assert!(!used_pairs(&cube, MissingPolicy::Skip).contains(&5));
        assert_eq!(p.weight[[4, 4]], 7.0);
    }

    #[test]
    fn two_frame_products_match_composed_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_field(10, 11, &mut rng);
        let b = random_field(10, 11, &mut rng);
        let cube = ImageCube::from_frames(&[a.clone(), b.clone()]).unwrap();
        let p = accumulate_products(&cube).unwrap();
        let it = temporal_derivative(a.view(), b.view()).unwrap();
        let (gx, gy) = spatial_gradient(a.view(), b.view()).unwrap();
        for y in 0..10 {
            for x in 0..11 {
                assert_eq!(p.sxx[[y, x]], gx[[y, x]] * gx[[y, x]]);
                assert_eq!(p.sxy[[y, x]], gx[[y, x]] * gy[[y, x]]);
                assert_eq!(p.syy[[y, x]], gy[[y, x]] * gy[[y, x]]);
                assert_eq!(p.stx[[y, x]], it[[y, x]] * gx[[y, x]]);
                assert_eq!(p.sty[[y, x]], it[[y, x]] * gy[[y, x]]);
            }
        }
    }

    #[test]
    fn palindromic_cube_cancels_time_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f: Vec<_> = (0..3).map(|_| random_field(10, 10, &mut rng)).collect();
        let order = [0, 1, 2, 1, 0];
        let frames: Vec<_> = order.iter().map(|&i| f[i].clone()).collect();
        let p = accumulate_products(&ImageCube::from_frames(&frames).unwrap()).unwrap();
        assert!(p.stx.iter().chain(p.sty.iter()).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn shifted_frames_shift_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (h, w) = (16, 16);
        let a = random_field(h, w, &mut rng);
        let b = random_field(h, w, &mut rng);
        let shift = |f: &Array2<f64>| Array2::from_shape_fn((h, w), |(y, x)| f[[(y + h - 1) % h, (x + w - 2) % w]]);
        let p = accumulate_products(&ImageCube::from_frames(&[a.clone(), b.clone()]).unwrap()).unwrap();
        let q = accumulate_products(&ImageCube::from_frames(&[shift(&a), shift(&b)]).unwrap()).unwrap();
        for y in 3..h - 3 {
            for x in 4..w - 2 {
                assert!((q.stx[[y, x]] - p.stx[[y - 1, x - 2]]).abs() < 1e-12);
                assert!((q.sxy[[y, x]] - p.sxy[[y - 1, x - 2]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reduction_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frames: Vec<_> = (0..6).map(|_| random_field(10, 10, &mut rng)).collect();
        let cube = ImageCube::from_frames(&frames).unwrap();
        let whole = accumulate_products(&cube).unwrap();
        let mut left = accumulate_products(&cube.window(3, 3).unwrap()).unwrap();
        let right = accumulate_products(&cube.window(0, 4).unwrap()).unwrap();
        left.merge(&right);
        assert_eq!(left.pair_count, whole.pair_count);
        for (a, b) in left.sxx.iter().zip(whole.sxx.iter()) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn products_satisfy_cauchy_schwarz(seed in any::<u64>(), t in 2usize..5) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let frames: Vec<_> = (0..t).map(|_| random_field(9, 10, &mut rng)).collect();
                let p = accumulate_products(&ImageCube::from_frames(&frames).unwrap()).unwrap();
                for ((sxx, syy), sxy) in p.sxx.iter().zip(p.syy.iter()).zip(p.sxy.iter()) {
                    prop_assert!(*sxx >= 0.0 && *syy >= 0.0);
                    prop_assert!(sxy * sxy <= sxx * syy * (1.0 + 1e-9) + 1e-300);
                }
                prop_assert_eq!(p.pair_count, t - 1);
            }
        }
    }
}
