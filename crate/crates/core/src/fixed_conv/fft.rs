//! Frequency-domain evaluation of strided "same" convolutions.
//!
//! Used for layers with large kernels, where the direct method costs
//! `k²` multiply-adds per output and the im2col buffer no longer fits in
//! cache. The result equals [`super::conv2d`] up to floating-point rounding.
//!
//! The input is zero-padded into an `n × n` grid with the leading "same"
//! padding applied, so the strided correlation becomes a valid correlation
//! on that grid; `n ≥ (out - 1)·stride + k` guarantees no circular wrap at
//! the sampled positions. Spectra are kept transposed (rows FFT, transpose,
//! rows FFT) and output channels are evaluated two at a time by packing the
//! second one into the imaginary part.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{same_leading_pad, same_output_len, Kernel, Tensor3};

type C64 = Complex<f64>;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

fn transpose(src: &[C64], dst: &mut [C64], n: usize) {
    const B: usize = 16;
    for r0 in (0..n).step_by(B) {
        for c0 in (0..n).step_by(B) {
            for r in r0..(r0 + B).min(n) {
                for c in c0..(c0 + B).min(n) {
                    dst[c * n + r] = src[r * n + c];
                }
            }
        }
    }
}

/// Transposed 2-D forward transform, in place (`scratch` has `n²` slots).
fn fft2_t(buf: &mut [C64], scratch: &mut [C64], n: usize, fwd: &dyn Fft<f64>) {
    fwd.process(buf);
    transpose(buf, scratch, n);
    fwd.process(scratch);
    buf.copy_from_slice(scratch);
}

/// Precomputed conjugate kernel spectra for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FftConvPlan {
    n: usize,
    stride: usize,
    kernel_size: usize,
    in_channels: usize,
    out_channels: usize,
    in_height: usize,
    in_width: usize,
    /// `[out][in]` blocks of `n²` transposed spectra.
    spectra: Vec<C64>,
}

impl FftConvPlan {
    pub fn new(kernel: &Kernel, stride: usize, in_height: usize, in_width: usize) -> Self {
        let k = kernel.size;
        let out_h = same_output_len(in_height, stride);
        let out_w = same_output_len(in_width, stride);
        let need = ((out_h.max(out_w) - 1) * stride + k).max(in_height.max(in_width));
        let n = fft_friendly(need);
        let (fwd, _) = plans(n);
        let nn = n * n;
        let mut spectra = vec![C64::default(); kernel.out_channels * kernel.in_channels * nn];
        let mut scratch = vec![C64::default(); nn];
        for o in 0..kernel.out_channels {
            for c in 0..kernel.in_channels {
                let block = &mut spectra[(o * kernel.in_channels + c) * nn..][..nn];
                for ky in 0..k {
                    for kx in 0..k {
                        block[ky * n + kx] = C64::new(kernel.at(o, c, ky, kx), 0.0);
                    }
                }
                fft2_t(block, &mut scratch, n, fwd.as_ref());
                block.iter_mut().for_each(|z| *z = z.conj());
            }
        }
        FftConvPlan {
            n,
            stride,
            kernel_size: k,
            in_channels: kernel.in_channels,
            out_channels: kernel.out_channels,
            in_height,
            in_width,
            spectra,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.n
    }

    pub fn apply(&self, input: &Tensor3) -> Tensor3 {
        assert_eq!(
            (input.channels, input.height, input.width),
            (self.in_channels, self.in_height, self.in_width),
            "input shape differs from the planned shape"
        );
        let n = self.n;
        let nn = n * n;
        let s = self.stride;
        let (fwd, inv) = plans(n);
        let pad_y = same_leading_pad(input.height, self.kernel_size, s);
        let pad_x = same_leading_pad(input.width, self.kernel_size, s);
        let out_h = same_output_len(input.height, s);
        let out_w = same_output_len(input.width, s);

        let mut scratch = vec![C64::default(); nn];
        let mut in_spectra = vec![C64::default(); self.in_channels * nn];
        for c in 0..self.in_channels {
            let block = &mut in_spectra[c * nn..(c + 1) * nn];
            let plane = input.channel(c);
            for y in 0..input.height {
                let row = &plane[y * input.width..(y + 1) * input.width];
                let dst = &mut block[(y + pad_y) * n + pad_x..][..input.width];
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d = C64::new(v, 0.0);
                }
            }
            fft2_t(block, &mut scratch, n, fwd.as_ref());
        }

        let mut out = Tensor3::zeros(self.out_channels, out_h, out_w);
        let plane_len = out_h * out_w;
        let scale = 1.0 / nn as f64;
        let mut acc = vec![C64::default(); nn];
        let mut o = 0;
        while o < self.out_channels {
            let paired = o + 1 < self.out_channels;
            acc.iter_mut().for_each(|z| *z = C64::default());
            for c in 0..self.in_channels {
                let x = &in_spectra[c * nn..(c + 1) * nn];
                let k1 = &self.spectra[(o * self.in_channels + c) * nn..][..nn];
                if paired {
                    let k2 = &self.spectra[((o + 1) * self.in_channels + c) * nn..][..nn];
                    for (((a, &xv), &p), &q) in acc.iter_mut().zip(x).zip(k1).zip(k2) {
                        // x·(p + i·q)
                        *a += xv * C64::new(p.re - q.im, p.im + q.re);
                    }
                } else {
                    for ((a, &xv), &p) in acc.iter_mut().zip(x).zip(k1) {
                        *a += xv * p;
                    }
                }
            }
            // Undo the transposed layout: column inverse, transpose, then
            // row inverse only on the rows the stride keeps.
            inv.process(&mut acc);
            transpose(&acc, &mut scratch, n);
            for oy in 0..out_h {
                let row = &mut scratch[oy * s * n..(oy * s + 1) * n];
                inv.process(row);
                for ox in 0..out_w {
                    let z = row[ox * s] * scale;
                    out.data[o * plane_len + oy * out_w + ox] = z.re;
                    if paired {
                        out.data[(o + 1) * plane_len + oy * out_w + ox] = z.im;
                    }
                }
            }
            o += 2;
        }
        out
    }
}

/// Smallest size `≥ n` of the form `2^a·3^b`.
fn fft_friendly(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p3 = 1;
    while p3 < best {
        let mut m = p3;
        while m < n {
            m *= 2;
        }
        best = best.min(m);
        p3 *= 3;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed_conv::conv2d;
    use crate::rng::Rng;

    #[test]
    fn friendly_sizes() {
        assert_eq!(fft_friendly(93), 96);
        assert_eq!(fft_friendly(64), 64);
        assert_eq!(fft_friendly(45), 48);
        assert_eq!(fft_friendly(5), 6);
        assert_eq!(fft_friendly(1), 1);
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = Rng::new(11);
        for &(cin, cout, h, k, s) in &[(3, 5, 20, 9, 2), (2, 2, 13, 13, 1), (1, 1, 7, 3, 3), (3, 4, 16, 31, 2)] {
            let x = Tensor3::from_vec(cin, h, h, (0..cin * h * h).map(|_| rng.uniform()).collect()).unwrap();
            let kern = Kernel::from_vec(
                cout,
                cin,
                k,
                (0..cout * cin * k * k).map(|_| rng.standard_normal()).collect(),
            )
            .unwrap();
            let plan = FftConvPlan::new(&kern, s, h, h);
            let a = plan.apply(&x);
            let b = conv2d(&x, &kern, s).unwrap();
            assert_eq!((a.channels, a.height, a.width), (b.channels, b.height, b.width));
            let err = a.data.iter().zip(&b.data).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "max error {err} for {:?}", (cin, cout, h, k, s));
        }
    }
}
