//! Planar feature maps and the convolution/upsample primitives the network
//! and the fusion convolution are built from.
//!
//! Activations use channel-planar layout (`[c][y][x]`), which keeps the inner
//! convolution loops contiguous; rasters at the API boundary stay
//! pixel-interleaved and are converted on entry/exit.

use crate::raster::Image;
use crate::scalar::Real;

/// Channel-planar activation tensor: value `(c, y, x)` at `(c * h + y) * w + x`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Feat<R> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<R>,
}

impl<R: Real> Feat<R> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Feat { channels, height, width, data: vec![R::zero(); channels * height * width] }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[R] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    pub fn from_image(img: &Image<R>) -> Self {
        let (h, w, c) = (img.height(), img.width(), img.channels());
        let mut out = Feat::zeros(c, h, w);
        let src = img.data();
        for y in 0..h {
            for x in 0..w {
                let base = (y * w + x) * c;
                for ch in 0..c {
                    out.data[(ch * h + y) * w + x] = src[base + ch];
                }
            }
        }
        out
    }

    pub fn to_image(&self) -> Image<R> {
        let (c, h, w) = (self.channels, self.height, self.width);
        let mut data = vec![R::zero(); h * w * c];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data[(y * w + x) * c + ch] = self.data[(ch * h + y) * w + x];
                }
            }
        }
        Image::from_vec(h, w, c, data).expect("planar->interleaved length")
    }
}

/// Spatial size of a same-padded convolution output.
#[inline]
pub(crate) fn conv_out_dim(dim: usize, k: usize, stride: usize, pad: usize) -> usize {
    (dim + 2 * pad - k) / stride + 1
}

/// Convolution forward. Weights are `[c_out][c_in][kh][kw]`, zero padding.
pub(crate) fn conv_forward<R: Real>(
    inp: &Feat<R>,
    weight: &[R],
    bias: &[R],
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Feat<R> {
    let (c_in, h, w) = (inp.channels, inp.height, inp.width);
    debug_assert_eq!(weight.len(), c_out * c_in * k * k);
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    let mut out = Feat::zeros(c_out, oh, ow);

    for co in 0..c_out {
        let out_plane = &mut out.data[co * oh * ow..(co + 1) * oh * ow];
        out_plane.fill(bias[co]);
        for ci in 0..c_in {
            let in_plane = inp.plane(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((co * c_in + ci) * k + ky) * k + kx];
                    if stride == 1 {
                        // ix = x + kx - pad must land in [0, w)
                        let x0 = pad.saturating_sub(kx);
                        let x1 = ow.min(w + pad - kx);
                        if x0 >= x1 {
                            continue;
                        }
                        for y in 0..oh {
                            let iy = y + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            let in_row = &in_plane[(iy - pad) * w + x0 + kx - pad..];
                            let out_row = &mut out_plane[y * ow + x0..y * ow + x1];
                            for (o, &i) in out_row.iter_mut().zip(in_row) {
                                *o += wv * i;
                            }
                        }
                    } else {
                        for y in 0..oh {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            let in_row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                            let out_row = &mut out_plane[y * ow..(y + 1) * ow];
                            for (x, o) in out_row.iter_mut().enumerate() {
                                let ix = (x * stride + kx) as isize - pad as isize;
                                if ix >= 0 && (ix as usize) < w {
                                    *o += wv * in_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a convolution: fills `grad_weight`/`grad_bias` and returns
/// the gradient with respect to the input.
pub(crate) fn conv_backward<R: Real>(
    inp: &Feat<R>,
    weight: &[R],
    grad_out: &Feat<R>,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    grad_weight: &mut [R],
    grad_bias: &mut [R],
) -> Feat<R> {
    let (c_in, h, w) = (inp.channels, inp.height, inp.width);
    let (oh, ow) = (grad_out.height, grad_out.width);
    debug_assert_eq!(grad_out.channels, c_out);
    let mut grad_in = Feat::zeros(c_in, h, w);

    for co in 0..c_out {
        let go_plane = grad_out.plane(co);
        grad_bias[co] += go_plane.iter().copied().sum();
        for ci in 0..c_in {
            let in_plane = inp.plane(ci);
            let gi_plane = &mut grad_in.data[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((co * c_in + ci) * k + ky) * k + kx;
                    let wv = weight[widx];
                    let mut gw = R::zero();
                    if stride == 1 {
                        let x0 = pad.saturating_sub(kx);
                        let x1 = ow.min(w + pad - kx);
                        if x0 >= x1 {
                            continue;
                        }
                        for y in 0..oh {
                            let iy = y + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            let in_off = (iy - pad) * w + x0 + kx - pad;
                            let go_row = &go_plane[y * ow + x0..y * ow + x1];
                            let in_row = &in_plane[in_off..in_off + (x1 - x0)];
                            for (&g, &i) in go_row.iter().zip(in_row) {
                                gw += g * i;
                            }
                            let gi_row = &mut gi_plane[in_off..in_off + (x1 - x0)];
                            for (gi, &g) in gi_row.iter_mut().zip(go_row) {
                                *gi += wv * g;
                            }
                        }
                    } else {
                        for y in 0..oh {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            let row = iy as usize * w;
                            for x in 0..ow {
                                let ix = (x * stride + kx) as isize - pad as isize;
                                if ix >= 0 && (ix as usize) < w {
                                    let g = go_plane[y * ow + x];
                                    gw += g * in_plane[row + ix as usize];
                                    gi_plane[row + ix as usize] += wv * g;
                                }
                            }
                        }
                    }
                    grad_weight[widx] += gw;
                }
            }
        }
    }
    grad_in
}

/// Nearest-neighbor 2x upsample, cropped to `(th, tw)` so odd pre-downsample
/// sizes round-trip exactly.
pub(crate) fn upsample2x_forward<R: Real>(inp: &Feat<R>, th: usize, tw: usize) -> Feat<R> {
    debug_assert!(th <= 2 * inp.height && tw <= 2 * inp.width);
    let c = inp.channels;
    let mut out = Feat::zeros(c, th, tw);
    for ch in 0..c {
        let in_plane = inp.plane(ch);
        let out_plane = &mut out.data[ch * th * tw..(ch + 1) * th * tw];
        for y in 0..th {
            let in_row = &in_plane[(y / 2) * inp.width..];
            let out_row = &mut out_plane[y * tw..(y + 1) * tw];
            for (x, o) in out_row.iter_mut().enumerate() {
                *o = in_row[x / 2];
            }
        }
    }
    out
}

/// Backward of the cropped nearest upsample: each input cell accumulates the
/// gradients of its (up to) 2x2 children.
pub(crate) fn upsample2x_backward<R: Real>(grad_out: &Feat<R>, ih: usize, iw: usize) -> Feat<R> {
    let c = grad_out.channels;
    let (th, tw) = (grad_out.height, grad_out.width);
    let mut grad_in = Feat::zeros(c, ih, iw);
    for ch in 0..c {
        let go_plane = grad_out.plane(ch);
        let gi_plane = &mut grad_in.data[ch * ih * iw..(ch + 1) * ih * iw];
        for y in 0..th {
            for x in 0..tw {
                gi_plane[(y / 2) * iw + x / 2] += go_plane[y * tw + x];
            }
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_feat(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Feat<f64> {
        let mut f = Feat::zeros(c, h, w);
        for v in &mut f.data {
            *v = rng.random_range(-1.0..1.0);
        }
        f
    }

    #[test]
    fn planar_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Image::from_vec(3, 4, 2, (0..24).map(|_| rng.random_range(0.0..1.0)).collect())
            .unwrap();
        assert_eq!(Feat::from_image(&img).to_image(), img);
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inp = random_feat(1, 5, 5, &mut rng);
        // 3x3 kernel with only the center tap set
        let mut weight = vec![0.0; 9];
        weight[4] = 1.0;
        let out = conv_forward(&inp, &weight, &[0.0], 1, 3, 1, 1);
        assert_eq!(out.data, inp.data);
    }

    #[test]
    fn conv_stride2_halves_dims() {
        let inp = Feat::<f64>::zeros(2, 9, 8);
        let weight = vec![0.0; 3 * 2 * 9];
        let out = conv_forward(&inp, &weight, &[0.0; 3], 3, 3, 2, 1);
        assert_eq!((out.channels, out.height, out.width), (3, 5, 4));
    }

    #[test]
    fn conv_is_shift_equivariant_in_the_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inp = random_feat(2, 8, 8, &mut rng);
        let weight: Vec<f64> = (0..2 * 2 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = vec![0.1, -0.2];

        // shift input right/down by one pixel
        let mut shifted = Feat::zeros(2, 8, 8);
        for c in 0..2 {
            for y in 1..8 {
                for x in 1..8 {
                    shifted.data[(c * 8 + y) * 8 + x] = inp.data[(c * 8 + y - 1) * 8 + x - 1];
                }
            }
        }
        let out = conv_forward(&inp, &weight, &bias, 2, 3, 1, 1);
        let out_shifted = conv_forward(&shifted, &weight, &bias, 2, 3, 1, 1);
        for c in 0..2 {
            for y in 2..7 {
                for x in 2..7 {
                    let a = out.data[(c * 8 + y - 1) * 8 + x - 1];
                    let b = out_shifted.data[(c * 8 + y) * 8 + x];
                    assert!((a - b).abs() < 1e-12, "not equivariant at ({c},{y},{x})");
                }
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (c_in, c_out, k, h, w) = (2, 3, 3, 6, 5);
        for &(stride, pad) in &[(1usize, 1usize), (2, 1)] {
            let inp = random_feat(c_in, h, w, &mut rng);
            let mut weight: Vec<f64> =
                (0..c_out * c_in * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bias: Vec<f64> = (0..c_out).map(|_| rng.random_range(-0.5..0.5)).collect();
            let out = conv_forward(&inp, &weight, &bias, c_out, k, stride, pad);
            // scalar objective: weighted sum of outputs
            let obj_w: Vec<f64> = (0..out.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let grad_out = Feat { channels: c_out, height: out.height, width: out.width, data: obj_w.clone() };

            let mut gw = vec![0.0; weight.len()];
            let mut gb = vec![0.0; c_out];
            let gi = conv_backward(&inp, &weight, &grad_out, c_out, k, stride, pad, &mut gw, &mut gb);

            let objective = |inp: &Feat<f64>, weight: &[f64], bias: &[f64]| -> f64 {
                let o = conv_forward(inp, weight, bias, c_out, k, stride, pad);
                o.data.iter().zip(&obj_w).map(|(a, b)| a * b).sum()
            };
            let step = 1e-6;
            for idx in (0..weight.len()).step_by(7) {
                let orig = weight[idx];
                weight[idx] = orig + step;
                let fp = objective(&inp, &weight, &bias);
                weight[idx] = orig - step;
                let fm = objective(&inp, &weight, &bias);
                weight[idx] = orig;
                let numeric = (fp - fm) / (2.0 * step);
                assert!((gw[idx] - numeric).abs() < 1e-7, "weight grad idx {idx} stride {stride}");
            }
            let mut inp2 = inp.clone();
            for idx in (0..inp2.data.len()).step_by(11) {
                let orig = inp2.data[idx];
                inp2.data[idx] = orig + step;
                let fp = objective(&inp2, &weight, &bias);
                inp2.data[idx] = orig - step;
                let fm = objective(&inp2, &weight, &bias);
                inp2.data[idx] = orig;
                let numeric = (fp - fm) / (2.0 * step);
                assert!((gi.data[idx] - numeric).abs() < 1e-7, "input grad idx {idx} stride {stride}");
            }
        }
    }

    #[test]
    fn upsample_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut inp = random_feat(2, 3, 4, &mut rng);
        let obj_w: Vec<f64> = (0..2 * 5 * 7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |inp: &Feat<f64>| -> f64 {
            let out = upsample2x_forward(inp, 5, 7);
            out.data.iter().zip(&obj_w).map(|(a, b)| a * b).sum()
        };
        let grad_out = Feat { channels: 2, height: 5, width: 7, data: obj_w.clone() };
        let analytic = upsample2x_backward(&grad_out, 3, 4);
        let step = 1e-6;
        for idx in 0..inp.data.len() {
            let orig = inp.data[idx];
            inp.data[idx] = orig + step;
            let fp = objective(&inp);
            inp.data[idx] = orig - step;
            let fm = objective(&inp);
            inp.data[idx] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            assert!((analytic.data[idx] - numeric).abs() < 1e-8, "idx {idx}");
        }
    }

    #[test]
    fn upsample_round_trips_odd_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inp = random_feat(2, 3, 4, &mut rng);
        let up = upsample2x_forward(&inp, 5, 7);
        assert_eq!((up.height, up.width), (5, 7));
        for c in 0..2 {
            for y in 0..5 {
                for x in 0..7 {
                    assert_eq!(up.data[(c * 5 + y) * 7 + x], inp.data[(c * 3 + y / 2) * 4 + x / 2]);
                }
            }
        }
        // backward conserves mass: every child credited exactly once
        let ones = Feat { channels: 2, height: 5, width: 7, data: vec![1.0; 70] };
        let back = upsample2x_backward(&ones, 3, 4);
        let total: f64 = back.data.iter().sum();
        assert_eq!(total, 70.0);
    }
}
