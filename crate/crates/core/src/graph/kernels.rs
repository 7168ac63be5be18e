//! Raw NHWC convolution and pooling kernels used by the graph ops.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }

    /// Rows of the patch matrix: one per output pixel.
    pub fn patches(&self) -> usize {
        self.batch * self.out_height() * self.out_width()
    }

    /// Columns of the patch matrix: `kernel * kernel * in_channels`, ordered (ky, kx, c).
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }
}

pub fn im2col(input: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.patch_len();
    let c = g.in_channels;
    let mut cols = vec![0.0; g.patches() * k];
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * k;
                for ky in 0..g.kernel {
                    let iy = oy * g.stride + ky;
                    let src = ((b * g.height + iy) * g.width + ox * g.stride) * c;
                    let dst = row + ky * g.kernel * c;
                    let len = g.kernel * c;
                    cols[dst..dst + len].copy_from_slice(&input[src..src + len]);
                }
            }
        }
    }
    cols
}

pub fn col2im(cols: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.patch_len();
    let c = g.in_channels;
    let mut out = vec![0.0; g.batch * g.height * g.width * c];
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * k;
                for ky in 0..g.kernel {
                    let iy = oy * g.stride + ky;
                    let dst = ((b * g.height + iy) * g.width + ox * g.stride) * c;
                    let src = row + ky * g.kernel * c;
                    let len = g.kernel * c;
                    for (o, v) in out[dst..dst + len].iter_mut().zip(&cols[src..src + len]) {
                        *o += *v;
                    }
                }
            }
        }
    }
    out
}

/// Non-overlapping max pooling with floor semantics. Returns values and argmax input offsets.
pub fn max_pool(
    input: &[f32],
    shape: [usize; 4],
    window: usize,
) -> (Vec<f32>, Vec<u32>, [usize; 4]) {
    let [n, h, w, c] = shape;
    let (oh, ow) = (h / window, w / window);
    let mut values = vec![f32::NEG_INFINITY; n * oh * ow * c];
    let mut argmax = vec![0u32; values.len()];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = ((b * oh + oy) * ow + ox) * c;
                for dy in 0..window {
                    for dx in 0..window {
                        let i = ((b * h + oy * window + dy) * w + ox * window + dx) * c;
                        for ch in 0..c {
                            let v = input[i + ch];
                            if v > values[o + ch] {
                                values[o + ch] = v;
                                argmax[o + ch] = (i + ch) as u32;
                            }
                        }
                    }
                }
            }
        }
    }
    (values, argmax, [n, oh, ow, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &[f32], kernel: &[f32], g: &ConvGeometry) -> Vec<f32> {
        let (oh, ow) = (g.out_height(), g.out_width());
        let mut out = vec![0.0; g.batch * oh * ow * g.out_channels];
        for b in 0..g.batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..g.out_channels {
                        let mut acc = 0.0;
                        for ky in 0..g.kernel {
                            for kx in 0..g.kernel {
                                for ci in 0..g.in_channels {
                                    let x = input[((b * g.height + oy * g.stride + ky) * g.width
                                        + ox * g.stride
                                        + kx)
                                        * g.in_channels
                                        + ci];
                                    let w = kernel[((ky * g.kernel + kx) * g.in_channels + ci)
                                        * g.out_channels
                                        + co];
                                    acc += x * w;
                                }
                            }
                        }
                        out[((b * oh + oy) * ow + ox) * g.out_channels + co] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_direct_convolution() {
        let g = ConvGeometry {
            batch: 2,
            height: 7,
            width: 6,
            in_channels: 3,
            kernel: 3,
            stride: 2,
            out_channels: 4,
        };
        let input: Vec<f32> = (0..2 * 7 * 6 * 3).map(|i| ((i * 37) % 11) as f32 - 5.0).collect();
        let kernel: Vec<f32> = (0..g.patch_len() * 4).map(|i| ((i * 13) % 7) as f32 * 0.1).collect();
        let cols = im2col(&input, &g);
        let mut out = vec![0.0; g.patches() * 4];
        crate::tensor::gemm(g.patches(), g.patch_len(), 4, &cols, false, &kernel, false, 0.0, &mut out);
        let expected = naive_conv(&input, &kernel, &g);
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeometry {
            batch: 1,
            height: 5,
            width: 5,
            in_channels: 2,
            kernel: 3,
            stride: 1,
            out_channels: 1,
        };
        let x: Vec<f32> = (0..50).map(|i| (i as f32 * 0.3).sin()).collect();
        let y: Vec<f32> = (0..g.patches() * g.patch_len())
            .map(|i| (i as f32 * 0.7).cos())
            .collect();
        let lhs: f32 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.iter().zip(&col2im(&y, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-3);
    }

    #[test]
    fn max_pool_floors_odd_sizes() {
        let input: Vec<f32> = (0..5 * 5).map(|i| i as f32).collect();
        let (values, argmax, shape) = max_pool(&input, [1, 5, 5, 1], 2);
        assert_eq!(shape, [1, 2, 2, 1]);
        assert_eq!(values, vec![6.0, 8.0, 16.0, 18.0]);
        assert_eq!(argmax, vec![6, 8, 16, 18]);
    }
}
