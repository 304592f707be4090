#![allow(dead_code)]

use kernelmix::kernel::normalize_kernel;
use kernelmix::{ImagePlane, KernelGrid};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn random_plane(rng: &mut impl Rng, w: usize, h: usize) -> ImagePlane {
    ImagePlane::from_fn(w, h, |_, _| rng.random::<f64>()).unwrap()
}

pub fn random_kernel(rng: &mut impl Rng, size: usize) -> KernelGrid {
    let raw = (0..size * size)
        .map(|_| rng.random::<f64>() + 1e-3)
        .collect();
    normalize_kernel(size, raw).unwrap()
}

/// Direct circular convolution with the kernel center at the origin.
pub fn brute_convolve(img: &ImagePlane, k: &KernelGrid) -> Vec<f64> {
    let (w, h) = img.dims();
    let s = k.size();
    let c = (s / 2) as isize;
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for i in 0..s {
                for j in 0..s {
                    let rr = (r as isize - (i as isize - c)).rem_euclid(h as isize) as usize;
                    let cc = (col as isize - (j as isize - c)).rem_euclid(w as isize) as usize;
                    acc += k.get(i, j) * img.get(rr, cc);
                }
            }
            out[r * w + col] = acc;
        }
    }
    out
}

/// Dense matrix of circular convolution by `k` acting on row-major `w × h` vectors.
pub fn convolution_matrix(k: &KernelGrid, w: usize, h: usize) -> DMatrix<f64> {
    let n = w * h;
    let mut m = DMatrix::zeros(n, n);
    for idx in 0..n {
        let mut data = vec![0.0; n];
        data[idx] = 1.0;
        let unit = ImagePlane::new(w, h, data).unwrap();
        for (row, v) in brute_convolve(&unit, k).into_iter().enumerate() {
            m[(row, idx)] = v;
        }
    }
    m
}

/// Forward circular differences along x and y.
pub fn difference_matrices(w: usize, h: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = w * h;
    let mut dx = DMatrix::zeros(n, n);
    let mut dy = DMatrix::zeros(n, n);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            dx[(i, i)] -= 1.0;
            dx[(i, r * w + (c + 1) % w)] += 1.0;
            dy[(i, i)] -= 1.0;
            dy[(i, ((r + 1) % h) * w + c)] += 1.0;
        }
    }
    (dx, dy)
}

pub struct DenseLatentProblem {
    pub conv: DMatrix<f64>,
    pub dx: DMatrix<f64>,
    pub dy: DMatrix<f64>,
    pub blurred: DVector<f64>,
    pub lambda3: f64,
}

impl DenseLatentProblem {
    pub fn new(blurred: &ImagePlane, k: &KernelGrid, lambda3: f64) -> Self {
        let (w, h) = blurred.dims();
        let (dx, dy) = difference_matrices(w, h);
        Self {
            conv: convolution_matrix(k, w, h),
            dx,
            dy,
            blurred: DVector::from_row_slice(blurred.data()),
            lambda3,
        }
    }

    pub fn solve(&self) -> DVector<f64> {
        let n = self.blurred.len();
        let lhs = self.conv.transpose() * &self.conv
            + (self.dx.transpose() * &self.dx
                + self.dy.transpose() * &self.dy
                + DMatrix::identity(n, n))
                * self.lambda3;
        let rhs = self.conv.transpose() * &self.blurred;
        lhs.cholesky()
            .expect("normal matrix is positive definite")
            .solve(&rhs)
    }

    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        let data = (&self.conv * x - &self.blurred).norm_squared();
        let prior =
            (&self.dx * x).norm_squared() + (&self.dy * x).norm_squared() + x.norm_squared();
        data + self.lambda3 * prior
    }
}
