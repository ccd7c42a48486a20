//! Radix-2 Cooley-Tukey FFT, its literal DFT oracle, and FFT convolution.
//!
//! Forward transforms use the `exp(-2*pi*i*k*n/N)` kernel with no scaling.
//! Inverse transforms use `exp(+2*pi*i*k*n/N)` and carry the whole `1/N`
//! (`1/(M*N)` in 2D) normalization, so `inverse(forward(x)) == x`.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, Plane};
use crate::scalar::Scalar;

/// Precomputed twiddles and bit-reversal permutation for one transform length.
#[derive(Debug, Clone)]
pub struct FftPlan<T> {
    len: usize,
    twiddles: Vec<Complex<T>>,
    bitrev: Vec<usize>,
}

impl<T: Scalar> FftPlan<T> {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::UnsupportedLength(len));
        }
        let bits = len.trailing_zeros();
        let bitrev = (0..len)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        // Twiddles are evaluated in f64 and rounded once, which keeps f32
        // transforms close to the best achievable accuracy.
        let twiddles = (0..len / 2)
            .map(|k| {
                let angle = -std::f64::consts::TAU * k as f64 / len as f64;
                Complex::new(T::lit(angle.cos()), T::lit(angle.sin()))
            })
            .collect();
        Ok(Self { len, twiddles, bitrev })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place transform of `buf` (length must equal the plan length).
    pub fn process(&self, buf: &mut [Complex<T>], inverse: bool) {
        let n = self.len;
        assert_eq!(buf.len(), n, "buffer length does not match plan");
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let step = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let mut w = self.twiddles[k * step];
                    if inverse {
                        w = w.conj();
                    }
                    let u = buf[start + k];
                    let v = buf[start + k + half] * w;
                    buf[start + k] = u + v;
                    buf[start + k + half] = u - v;
                }
            }
            size *= 2;
        }
        if inverse {
            let scale = T::one() / T::lit(n as f64);
            for v in buf.iter_mut() {
                *v *= scale;
            }
        }
    }
}

/// One-dimensional FFT of a power-of-two length signal.
pub fn fft1d<T: Scalar>(x: &[Complex<T>], inverse: bool) -> Result<Vec<Complex<T>>> {
    let plan = FftPlan::new(x.len())?;
    let mut buf = x.to_vec();
    plan.process(&mut buf, inverse);
    Ok(buf)
}

/// Literal double-sum DFT over any rectangular shape, `O((MN)^2)`.
pub fn naive_dft2<T: Scalar>(img: &ComplexGrid<T>, inverse: bool) -> ComplexGrid<T> {
    let (m, n) = (img.height, img.width);
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out = ComplexGrid::zeros(m, n);
    for x in 0..m {
        for y in 0..n {
            let mut acc = Complex::new(0.0f64, 0.0);
            for a in 0..m {
                for b in 0..n {
                    // Reduce the phase exactly before scaling to keep large grids accurate.
                    let turns = ((x * a) % m) as f64 / m as f64 + ((y * b) % n) as f64 / n as f64;
                    let angle = sign * std::f64::consts::TAU * turns;
                    let v = Complex::new(img.re[a * n + b].to_f64().unwrap(), img.im[a * n + b].to_f64().unwrap());
                    acc += v * Complex::new(angle.cos(), angle.sin());
                }
            }
            if inverse {
                acc /= (m * n) as f64;
            }
            out.re[x * n + y] = T::lit(acc.re);
            out.im[x * n + y] = T::lit(acc.im);
        }
    }
    out
}

/// Row/column plans for repeated 2D transforms of one shape.
#[derive(Debug, Clone)]
pub struct Fft2dPlan<T> {
    rows: FftPlan<T>,
    cols: FftPlan<T>,
}

impl<T: Scalar> Fft2dPlan<T> {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        Ok(Self { rows: FftPlan::new(width)?, cols: FftPlan::new(height)? })
    }

    pub fn height(&self) -> usize {
        self.cols.len()
    }

    pub fn width(&self) -> usize {
        self.rows.len()
    }

    /// In-place separable transform of a row-major `height x width` buffer.
    pub fn process(&self, buf: &mut [Complex<T>], inverse: bool) {
        let (h, w) = (self.height(), self.width());
        assert_eq!(buf.len(), h * w);
        for row in buf.chunks_exact_mut(w) {
            self.rows.process(row, inverse);
        }
        let mut col = vec![Complex::new(T::zero(), T::zero()); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            self.cols.process(&mut col, inverse);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
    }

    pub fn transform(&self, img: &ComplexGrid<T>, inverse: bool) -> Result<ComplexGrid<T>> {
        if (img.height, img.width) != (self.height(), self.width()) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} grid for a {}x{} plan",
                img.height,
                img.width,
                self.height(),
                self.width()
            )));
        }
        let mut buf = to_interleaved(img);
        self.process(&mut buf, inverse);
        Ok(from_interleaved(img.height, img.width, &buf))
    }
}

/// Separable 2D FFT; both dimensions must be powers of two.
pub fn fft2d<T: Scalar>(img: &ComplexGrid<T>, inverse: bool) -> Result<ComplexGrid<T>> {
    Fft2dPlan::new(img.height, img.width)?.transform(img, inverse)
}

pub(crate) fn to_interleaved<T: Scalar>(img: &ComplexGrid<T>) -> Vec<Complex<T>> {
    img.re.iter().zip(&img.im).map(|(&re, &im)| Complex::new(re, im)).collect()
}

pub(crate) fn from_interleaved<T: Scalar>(height: usize, width: usize, buf: &[Complex<T>]) -> ComplexGrid<T> {
    ComplexGrid {
        height,
        width,
        re: buf.iter().map(|c| c.re).collect(),
        im: buf.iter().map(|c| c.im).collect(),
    }
}

/// Linear convolution of `img` with `kernel` through the convolution theorem.
///
/// Both operands are zero padded to a power-of-two size covering the full
/// linear convolution, multiplied in the frequency domain, and the result is
/// cropped back to the image size. The crop keeps full-output offset
/// `((kh - 1) / 2, (kw - 1) / 2)`, so an odd kernel is centered.
pub fn fft_conv2d<T: Scalar>(img: &Plane<T>, kernel: &Plane<T>) -> Result<Plane<T>> {
    if kernel.height == 0 || kernel.width == 0 || kernel.data.is_empty() {
        return Err(Error::InvalidArgument("empty convolution kernel".into()));
    }
    if img.height == 0 || img.width == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let ph = (img.height + kernel.height - 1).next_power_of_two();
    let pw = (img.width + kernel.width - 1).next_power_of_two();
    let plan = Fft2dPlan::new(ph, pw)?;

    let zero = Complex::new(T::zero(), T::zero());
    let mut a = vec![zero; ph * pw];
    for y in 0..img.height {
        for x in 0..img.width {
            a[y * pw + x].re = img.get(y, x);
        }
    }
    let mut k = vec![zero; ph * pw];
    for y in 0..kernel.height {
        for x in 0..kernel.width {
            k[y * pw + x].re = kernel.get(y, x);
        }
    }
    plan.process(&mut a, false);
    plan.process(&mut k, false);
    for (av, kv) in a.iter_mut().zip(&k) {
        *av *= *kv;
    }
    plan.process(&mut a, true);

    let (oy, ox) = ((kernel.height - 1) / 2, (kernel.width - 1) / 2);
    Ok(Plane::from_fn(img.height, img.width, |y, x| a[(y + oy) * pw + x + ox].re))
}

/// Direct nested-loop convolution with the same "same"-crop convention as
/// [`fft_conv2d`]. Used as the non-FFT baseline in benchmarks.
pub fn direct_conv2d<T: Scalar>(img: &Plane<T>, kernel: &Plane<T>) -> Result<Plane<T>> {
    if kernel.height == 0 || kernel.width == 0 || kernel.data.is_empty() {
        return Err(Error::InvalidArgument("empty convolution kernel".into()));
    }
    let (h, w) = (img.height as isize, img.width as isize);
    let (kh, kw) = (kernel.height as isize, kernel.width as isize);
    let (oy, ox) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut out = Plane::new(img.height, img.width, T::zero());
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for u in 0..kh {
                let sy = y + oy - u;
                if sy < 0 || sy >= h {
                    continue;
                }
                let img_row = &img.data[(sy * w) as usize..((sy + 1) * w) as usize];
                let k_row = &kernel.data[(u * kw) as usize..((u + 1) * kw) as usize];
                for v in 0..kw {
                    let sx = x + ox - v;
                    if sx >= 0 && sx < w {
                        acc += k_row[v as usize] * img_row[sx as usize];
                    }
                }
            }
            out.data[(y * w + x) as usize] = acc;
        }
    }
    Ok(out)
}
