//! Convolution lowering: every receptive field becomes one input vector for
//! the crossbar holding the flattened kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Output spatial size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 || self.kh == 0 || self.kw == 0 {
            return Err(Error::Shape(
                "convolution needs non-zero kernel and stride".into(),
            ));
        }
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kh || pw < self.kw {
            return Err(Error::Shape(format!(
                "{}x{} kernel does not fit a padded {ph}x{pw} input",
                self.kh, self.kw
            )));
        }
        Ok((
            (ph - self.kh) / self.stride + 1,
            (pw - self.kw) / self.stride + 1,
        ))
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }
}

/// One row per output position (row-major over the output map); each row is
/// a receptive field flattened as `(channel, ky, kx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    pub positions: usize,
    pub patch_len: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub data: Vec<f32>,
}

impl PatchMatrix {
    pub fn patch(&self, p: usize) -> &[f32] {
        &self.data[p * self.patch_len..(p + 1) * self.patch_len]
    }
}

/// Lowers a `[in_ch, h, w]` input into patches. Padding is zero.
pub fn im2col(input: &Tensor, geom: &ConvGeometry) -> Result<PatchMatrix> {
    let shape = input.shape();
    if shape.len() != 3 || shape[0] != geom.in_ch {
        return Err(Error::Shape(format!(
            "convolution expects [{}, h, w], got {shape:?}",
            geom.in_ch
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let (out_h, out_w) = geom.output_hw(h, w)?;
    let patch_len = geom.patch_len();
    let x = input.data();
    let pad = geom.padding as isize;
    let mut data = Vec::with_capacity(out_h * out_w * patch_len);
    for oy in 0..out_h {
        for ox in 0..out_w {
            for c in 0..geom.in_ch {
                for ky in 0..geom.kh {
                    let iy = (oy * geom.stride + ky) as isize - pad;
                    for kx in 0..geom.kw {
                        let ix = (ox * geom.stride + kx) as isize - pad;
                        let v = if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            0.0
                        } else {
                            x[(c * h + iy as usize) * w + ix as usize]
                        };
                        data.push(v);
                    }
                }
            }
        }
    }
    Ok(PatchMatrix {
        positions: out_h * out_w,
        patch_len,
        out_h,
        out_w,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_kernel_is_reshape() {
        let input = Tensor::new(vec![2, 2, 3], (0..12).map(|v| v as f32).collect()).unwrap();
        let geom = ConvGeometry {
            in_ch: 2,
            kh: 1,
            kw: 1,
            stride: 1,
            padding: 0,
        };
        let p = im2col(&input, &geom).unwrap();
        assert_eq!((p.positions, p.patch_len), (6, 2));
        // Position (y, x) holds channel 0 then channel 1.
        for pos in 0..6 {
            assert_eq!(p.patch(pos), &[pos as f32, (pos + 6) as f32]);
        }
    }

    #[test]
    fn three_by_three_on_four_by_four() {
        let input = Tensor::new(vec![1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        let geom = ConvGeometry {
            in_ch: 1,
            kh: 3,
            kw: 3,
            stride: 1,
            padding: 0,
        };
        let p = im2col(&input, &geom).unwrap();
        assert_eq!((p.positions, p.patch_len, p.out_h, p.out_w), (4, 9, 2, 2));
        assert_eq!(p.patch(0), &[0., 1., 2., 4., 5., 6., 8., 9., 10.]);
        assert_eq!(p.patch(1), &[1., 2., 3., 5., 6., 7., 9., 10., 11.]);
        assert_eq!(p.patch(2), &[4., 5., 6., 8., 9., 10., 12., 13., 14.]);
        assert_eq!(p.patch(3), &[5., 6., 7., 9., 10., 11., 13., 14., 15.]);
    }

    #[test]
    fn padding_and_stride() {
        let input = Tensor::new(vec![1, 3, 3], vec![1.0; 9]).unwrap();
        let geom = ConvGeometry {
            in_ch: 1,
            kh: 3,
            kw: 3,
            stride: 2,
            padding: 1,
        };
        let p = im2col(&input, &geom).unwrap();
        assert_eq!((p.out_h, p.out_w), (2, 2));
        // Top-left window sees the padded corner: 4 real pixels.
        assert_eq!(p.patch(0).iter().sum::<f32>(), 4.0);
    }

    #[test]
    fn shape_errors() {
        let geom = ConvGeometry {
            in_ch: 2,
            kh: 3,
            kw: 3,
            stride: 1,
            padding: 0,
        };
        assert!(im2col(&Tensor::zeros(vec![1, 4, 4]), &geom).is_err());
        assert!(im2col(&Tensor::zeros(vec![2, 2, 2]), &geom).is_err());
        assert!(im2col(&Tensor::zeros(vec![32]), &geom).is_err());
        let zero_stride = ConvGeometry { stride: 0, ..geom };
        assert!(im2col(&Tensor::zeros(vec![2, 4, 4]), &zero_stride).is_err());
    }
}
