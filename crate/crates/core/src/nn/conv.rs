//! Strided 2-D convolution and its transpose, lowered to GEMM via im2col.

use super::real::{gemm, Mat};
use super::{Real, Tensor};

/// Kernel geometry shared by a convolution and its transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Spatial size after a forward convolution.
    pub fn conv_out(&self, size: usize) -> usize {
        (size + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Spatial size after a transposed convolution.
    pub fn transposed_out(&self, size: usize) -> usize {
        (size - 1) * self.stride + self.k - 2 * self.pad
    }

    pub fn weight_len(&self) -> usize {
        self.cin * self.cout * self.k * self.k
    }
}

/// Unfolds `img` (`c×h×w`) into `cols` (`c·k·k × oh·ow`).
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let plane = oh * ow;
    for ch in 0..c {
        let src = &img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds `cols` back into `img`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    img: &mut [T],
) {
    let plane = oh * ow;
    for ch in 0..c {
        let dst = &mut img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            drow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Saved state for a convolution backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<Vec<T>>,
    in_h: usize,
    in_w: usize,
}

/// `weight` is `cout × (cin·k·k)`.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    bias: Option<&[T]>,
    g: ConvGeom,
) -> (Tensor<T>, ConvCache<T>) {
    assert_eq!(x.c, g.cin, "conv input channels");
    let (oh, ow) = (g.conv_out(x.h), g.conv_out(x.w));
    let kk = g.cin * g.k * g.k;
    let mut y = Tensor::zeros(x.n, g.cout, oh, ow);
    let mut cache = ConvCache {
        cols: Vec::with_capacity(x.n),
        in_h: x.h,
        in_w: x.w,
    };
    for i in 0..x.n {
        let mut cols = vec![T::zero(); kk * oh * ow];
        im2col(x.item(i), g.cin, x.h, x.w, g.k, g.stride, g.pad, oh, ow, &mut cols);
        let out = y.item_mut(i);
        gemm(
            Mat::new(weight, g.cout, kk),
            Mat::new(&cols, kk, oh * ow),
            T::zero(),
            out,
        );
        if let Some(b) = bias {
            add_channel_bias(out, b, oh * ow);
        }
        cache.cols.push(cols);
    }
    (y, cache)
}

/// Returns `dx`; accumulates into `dweight` / `dbias`.
pub fn conv2d_backward<T: Real>(
    dy: &Tensor<T>,
    cache: &ConvCache<T>,
    weight: &[T],
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
    g: ConvGeom,
) -> Tensor<T> {
    let kk = g.cin * g.k * g.k;
    let plane = dy.h * dy.w;
    let mut dx = Tensor::zeros(dy.n, g.cin, cache.in_h, cache.in_w);
    let mut dcols = vec![T::zero(); kk * plane];
    for i in 0..dy.n {
        let dyi = dy.item(i);
        gemm(
            Mat::new(dyi, g.cout, plane),
            Mat::new(&cache.cols[i], kk, plane).t(),
            T::one(),
            dweight,
        );
        gemm(
            Mat::new(weight, g.cout, kk).t(),
            Mat::new(dyi, g.cout, plane),
            T::zero(),
            &mut dcols,
        );
        col2im(
            &dcols,
            g.cin,
            cache.in_h,
            cache.in_w,
            g.k,
            g.stride,
            g.pad,
            dy.h,
            dy.w,
            dx.item_mut(i),
        );
    }
    if let Some(db) = dbias {
        accumulate_channel_sums(dy, db);
    }
    dx
}

/// Saved state for a transposed-convolution backward pass.
#[derive(Debug, Clone)]
pub struct ConvTransposeCache<T> {
    x: Tensor<T>,
}

/// `weight` is `cin × (cout·k·k)`.
pub fn conv_transpose2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    bias: Option<&[T]>,
    g: ConvGeom,
) -> (Tensor<T>, ConvTransposeCache<T>) {
    assert_eq!(x.c, g.cin, "transposed conv input channels");
    let (oh, ow) = (g.transposed_out(x.h), g.transposed_out(x.w));
    let kk = g.cout * g.k * g.k;
    let plane = x.h * x.w;
    let mut y = Tensor::zeros(x.n, g.cout, oh, ow);
    let mut cols = vec![T::zero(); kk * plane];
    for i in 0..x.n {
        gemm(
            Mat::new(weight, g.cin, kk).t(),
            Mat::new(x.item(i), g.cin, plane),
            T::zero(),
            &mut cols,
        );
        let out = y.item_mut(i);
        col2im(&cols, g.cout, oh, ow, g.k, g.stride, g.pad, x.h, x.w, out);
        if let Some(b) = bias {
            add_channel_bias(out, b, oh * ow);
        }
    }
    (y, ConvTransposeCache { x: x.clone() })
}

pub fn conv_transpose2d_backward<T: Real>(
    dy: &Tensor<T>,
    cache: &ConvTransposeCache<T>,
    weight: &[T],
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
    g: ConvGeom,
) -> Tensor<T> {
    let x = &cache.x;
    let kk = g.cout * g.k * g.k;
    let plane = x.h * x.w;
    let mut dx = Tensor::zeros(x.n, g.cin, x.h, x.w);
    let mut dcols = vec![T::zero(); kk * plane];
    for i in 0..x.n {
        im2col(
            dy.item(i),
            g.cout,
            dy.h,
            dy.w,
            g.k,
            g.stride,
            g.pad,
            x.h,
            x.w,
            &mut dcols,
        );
        gemm(
            Mat::new(weight, g.cin, kk),
            Mat::new(&dcols, kk, plane),
            T::zero(),
            dx.item_mut(i),
        );
        gemm(
            Mat::new(x.item(i), g.cin, plane),
            Mat::new(&dcols, kk, plane).t(),
            T::one(),
            dweight,
        );
    }
    if let Some(db) = dbias {
        accumulate_channel_sums(dy, db);
    }
    dx
}

fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (ch, &b) in bias.iter().enumerate() {
        for v in &mut out[ch * plane..(ch + 1) * plane] {
            *v += b;
        }
    }
}

fn accumulate_channel_sums<T: Real>(dy: &Tensor<T>, db: &mut [T]) {
    let plane = dy.h * dy.w;
    for i in 0..dy.n {
        let item = dy.item(i);
        for (ch, acc) in db.iter_mut().enumerate() {
            *acc += item[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct six-loop convolution.
    fn naive_conv(x: &Tensor<f64>, w: &[f64], g: ConvGeom) -> Tensor<f64> {
        let (oh, ow) = (g.conv_out(x.h), g.conv_out(x.w));
        let mut y = Tensor::zeros(x.n, g.cout, oh, ow);
        for n in 0..x.n {
            for co in 0..g.cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..g.cin {
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    let xv = x.data[((n * g.cin + ci) * x.h + iy as usize) * x.w
                                        + ix as usize];
                                    acc += xv * w[((co * g.cin + ci) * g.k + ky) * g.k + kx];
                                }
                            }
                        }
                        y.data[((n * g.cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    /// Scatter definition of the transposed convolution.
    fn naive_conv_t(x: &Tensor<f64>, w: &[f64], g: ConvGeom) -> Tensor<f64> {
        let (oh, ow) = (g.transposed_out(x.h), g.transposed_out(x.w));
        let mut y = Tensor::zeros(x.n, g.cout, oh, ow);
        for n in 0..x.n {
            for ci in 0..g.cin {
                for iy in 0..x.h {
                    for ix in 0..x.w {
                        let xv = x.data[((n * g.cin + ci) * x.h + iy) * x.w + ix];
                        for co in 0..g.cout {
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let oy = (iy * g.stride + ky) as isize - g.pad as isize;
                                    let ox = (ix * g.stride + kx) as isize - g.pad as isize;
                                    if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                        continue;
                                    }
                                    y.data[((n * g.cout + co) * oh + oy as usize) * ow
                                        + ox as usize] +=
                                        xv * w[((ci * g.cout + co) * g.k + ky) * g.k + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    const G: ConvGeom = ConvGeom {
        cin: 3,
        cout: 5,
        k: 4,
        stride: 2,
        pad: 1,
    };

    #[test]
    fn stride_two_halves_and_doubles() {
        assert_eq!(G.conv_out(128), 64);
        assert_eq!(G.conv_out(2), 1);
        assert_eq!(G.transposed_out(1), 2);
        assert_eq!(G.transposed_out(64), 128);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_vec(2, 3, 8, 6, random(2 * 3 * 48, &mut rng));
        let w = random(G.weight_len(), &mut rng);
        let (y, _) = conv2d_forward(&x, &w, None, G);
        let want = naive_conv(&x, &w, G);
        assert_eq!(y.shape(), want.shape());
        for (a, b) in y.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_conv_matches_scatter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_vec(2, 3, 4, 5, random(2 * 3 * 20, &mut rng));
        let w = random(G.weight_len(), &mut rng);
        let (y, _) = conv_transpose2d_forward(&x, &w, None, G);
        let want = naive_conv_t(&x, &w, G);
        assert_eq!(y.shape(), [2, 5, 8, 10]);
        for (a, b) in y.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    // Both layers are linear, so backward must be the exact adjoint:
    // <dy, J dx> == <J^T dy, dx>, and likewise for the weights.
    #[test]
    fn conv_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_vec(1, 3, 8, 8, random(3 * 64, &mut rng));
        let w = random(G.weight_len(), &mut rng);
        let b = random(G.cout, &mut rng);
        let (y, cache) = conv2d_forward(&x, &w, Some(&b), G);
        let dy = y.with_data(random(y.len(), &mut rng));
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; b.len()];
        let dx = conv2d_backward(&dy, &cache, &w, &mut dw, Some(&mut db), G);

        let (y0, _) = conv2d_forward(&x, &w, None, G);
        let (yx, _) = conv2d_forward(&dx, &w, None, G);
        // <dy, conv(x)> via input adjoint and via weight adjoint.
        assert!((dot(&dy.data, &y0.data) - dot(&dx.data, &x.data)).abs() < 1e-9);
        assert!((dot(&dy.data, &y0.data) - dot(&dw, &w)).abs() < 1e-9);
        let sum_dy: f64 = dy.data[..16].iter().sum();
        assert!((db[0] - sum_dy).abs() < 1e-12);
        assert!(dot(&yx.data, &yx.data) > 0.0);
    }

    #[test]
    fn conv_transpose_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::from_vec(2, 3, 4, 4, random(2 * 3 * 16, &mut rng));
        let w = random(G.weight_len(), &mut rng);
        let (y, cache) = conv_transpose2d_forward(&x, &w, None, G);
        let dy = y.with_data(random(y.len(), &mut rng));
        let mut dw = vec![0.0; w.len()];
        let dx = conv_transpose2d_backward(&dy, &cache, &w, &mut dw, None, G);
        let lhs = dot(&dy.data, &y.data);
        assert!((lhs - dot(&dx.data, &x.data)).abs() < 1e-9);
        assert!((lhs - dot(&dw, &w)).abs() < 1e-9);
    }
}
