//! Layer kernels on `N × H × W × C` activations.

use rand::Rng;

use super::real::Real;

/// An activation tensor in NHWC layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Real> Act<T> {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self { n, h, w, c, data: vec![T::zero(); n * h * w * c] }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * h * w * c, "activation size");
        Self { n, h, w, c, data }
    }

    pub fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }

    fn image(&self, i: usize) -> &[T] {
        let len = self.h * self.w * self.c;
        &self.data[i * len..(i + 1) * len]
    }
}

/// Square convolution with stride 1 and same padding (kernel 1 or 3).
///
/// Weights are stored as a `(ksize·ksize·cin) × cout` matrix whose rows are
/// ordered `(ky, kx, ci)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub ksize: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradient buffers of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    /// Fan-in scaled uniform initialisation, `U(−√(6/fan_in), √(6/fan_in))`, zero bias.
    pub fn init<R: Rng>(cin: usize, cout: usize, ksize: usize, rng: &mut R) -> Self {
        assert!(ksize == 1 || ksize == 3, "only 1x1 and 3x3 kernels");
        let fan_in = ksize * ksize * cin;
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = (0..fan_in * cout)
            .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
            .collect();
        Self { cin, cout, ksize, weight, bias: vec![T::zero(); cout] }
    }

    pub fn patch_len(&self) -> usize {
        self.ksize * self.ksize * self.cin
    }

    pub fn zero_grad(&self) -> ConvGrad<T> {
        ConvGrad { weight: vec![T::zero(); self.weight.len()], bias: vec![T::zero(); self.cout] }
    }

    /// Gathers the receptive fields of image `img` into `cols` (`H·W × patch_len`).
    fn im2col(&self, x: &Act<T>, img: usize, cols: &mut Vec<T>) {
        let (h, w, c) = (x.h, x.w, x.c);
        let src = x.image(img);
        let kl = self.patch_len();
        cols.clear();
        cols.resize(h * w * kl, T::zero());
        let r = (self.ksize / 2) as isize;
        for y in 0..h {
            for xx in 0..w {
                let row = &mut cols[(y * w + xx) * kl..(y * w + xx + 1) * kl];
                let mut off = 0;
                for ky in -r..=r {
                    let sy = y as isize + ky;
                    for kx in -r..=r {
                        let sx = xx as isize + kx;
                        if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            let s = (sy as usize * w + sx as usize) * c;
                            row[off..off + c].copy_from_slice(&src[s..s + c]);
                        }
                        off += c;
                    }
                }
            }
        }
    }

    /// Scatter-adds column gradients back onto the image gradient.
    fn col2im(&self, dcols: &[T], h: usize, w: usize, dst: &mut [T]) {
        let c = self.cin;
        let kl = self.patch_len();
        let r = (self.ksize / 2) as isize;
        for y in 0..h {
            for xx in 0..w {
                let row = &dcols[(y * w + xx) * kl..(y * w + xx + 1) * kl];
                let mut off = 0;
                for ky in -r..=r {
                    let sy = y as isize + ky;
                    for kx in -r..=r {
                        let sx = xx as isize + kx;
                        if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            let s = (sy as usize * w + sx as usize) * c;
                            for (d, &g) in dst[s..s + c].iter_mut().zip(&row[off..off + c]) {
                                *d += g;
                            }
                        }
                        off += c;
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Act<T>) -> Act<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let hw = x.h * x.w;
        let kl = self.patch_len();
        let mut out = Act::zeros(x.n, x.h, x.w, self.cout);
        let mut cols = Vec::new();
        for img in 0..x.n {
            let dst = &mut out.data[img * hw * self.cout..(img + 1) * hw * self.cout];
            for row in dst.chunks_mut(self.cout) {
                row.copy_from_slice(&self.bias);
            }
            let src: &[T] = if self.ksize == 1 {
                x.image(img)
            } else {
                self.im2col(x, img, &mut cols);
                &cols
            };
            T::gemm(
                hw, kl, self.cout, T::one(), src, kl as isize, 1, &self.weight,
                self.cout as isize, 1, T::one(), dst, self.cout as isize, 1,
            );
        }
        out
    }

    /// Accumulates parameter gradients into `grad`; returns the input gradient when `need_input`.
    pub fn backward(
        &self,
        x: &Act<T>,
        dy: &Act<T>,
        grad: &mut ConvGrad<T>,
        need_input: bool,
    ) -> Option<Act<T>> {
        let hw = x.h * x.w;
        let kl = self.patch_len();
        let co = self.cout;
        for row in dy.data.chunks(co) {
            for (b, &g) in grad.bias.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = need_input.then(|| Act::zeros(x.n, x.h, x.w, x.c));
        let mut cols = Vec::new();
        let mut dcols = Vec::new();
        for img in 0..x.n {
            let g = &dy.data[img * hw * co..(img + 1) * hw * co];
            let src: &[T] = if self.ksize == 1 {
                x.image(img)
            } else {
                self.im2col(x, img, &mut cols);
                &cols
            };
            // dW += colsᵀ · dY
            T::gemm(
                kl, hw, co, T::one(), src, 1, kl as isize, g, co as isize, 1, T::one(),
                &mut grad.weight, co as isize, 1,
            );
            if let Some(dx) = dx.as_mut() {
                let img_len = hw * self.cin;
                let dst = &mut dx.data[img * img_len..(img + 1) * img_len];
                if self.ksize == 1 {
                    // dX = dY · Wᵀ directly.
                    T::gemm(
                        hw, co, kl, T::one(), g, co as isize, 1, &self.weight, 1, co as isize,
                        T::zero(), dst, kl as isize, 1,
                    );
                } else {
                    dcols.clear();
                    dcols.resize(hw * kl, T::zero());
                    T::gemm(
                        hw, co, kl, T::one(), g, co as isize, 1, &self.weight, 1, co as isize,
                        T::zero(), &mut dcols, kl as isize, 1,
                    );
                    self.col2im(&dcols, x.h, x.w, dst);
                }
            }
        }
        dx
    }
}

pub fn relu_inplace<T: Real>(x: &mut Act<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward_inplace<T: Real>(out: &Act<T>, grad: &mut Act<T>) {
    for (g, &o) in grad.data.iter_mut().zip(&out.data) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2 max pooling with stride 2; also returns the winning offset (0..4) per output.
pub fn maxpool2<T: Real>(x: &Act<T>) -> (Act<T>, Vec<u8>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Act::zeros(x.n, oh, ow, x.c);
    let mut arg = vec![0u8; out.data.len()];
    let c = x.c;
    for n in 0..x.n {
        for y in 0..oh {
            for xx in 0..ow {
                let o = ((n * oh + y) * ow + xx) * c;
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut which = 0u8;
                    for (q, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                        let i = ((n * x.h + 2 * y + dy) * x.w + 2 * xx + dx) * c + ch;
                        if x.data[i] > best {
                            best = x.data[i];
                            which = q as u8;
                        }
                    }
                    out.data[o + ch] = best;
                    arg[o + ch] = which;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<T: Real>(dy: &Act<T>, arg: &[u8], h: usize, w: usize) -> Act<T> {
    let mut dx = Act::zeros(dy.n, h, w, dy.c);
    let c = dy.c;
    for n in 0..dy.n {
        for y in 0..dy.h {
            for xx in 0..dy.w {
                let o = ((n * dy.h + y) * dy.w + xx) * c;
                for ch in 0..c {
                    let q = arg[o + ch] as usize;
                    let i = ((n * h + 2 * y + q / 2) * w + 2 * xx + q % 2) * c + ch;
                    dx.data[i] += dy.data[o + ch];
                }
            }
        }
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2<T: Real>(x: &Act<T>) -> Act<T> {
    let (oh, ow) = (x.h * 2, x.w * 2);
    let mut out = Act::zeros(x.n, oh, ow, x.c);
    let c = x.c;
    for n in 0..x.n {
        for y in 0..oh {
            for xx in 0..ow {
                let s = ((n * x.h + y / 2) * x.w + xx / 2) * c;
                let d = ((n * oh + y) * ow + xx) * c;
                out.data[d..d + c].copy_from_slice(&x.data[s..s + c]);
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dy: &Act<T>) -> Act<T> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Act::zeros(dy.n, h, w, dy.c);
    let c = dy.c;
    for n in 0..dy.n {
        for y in 0..dy.h {
            for xx in 0..dy.w {
                let s = ((n * dy.h + y) * dy.w + xx) * c;
                let d = ((n * h + y / 2) * w + xx / 2) * c;
                for ch in 0..c {
                    dx.data[d + ch] += dy.data[s + ch];
                }
            }
        }
    }
    dx
}

/// Channel concatenation `[a, b]`.
pub fn concat<T: Real>(a: &Act<T>, b: &Act<T>) -> Act<T> {
    assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat spatial shape");
    let c = a.c + b.c;
    let mut data = Vec::with_capacity(a.pixels() * c);
    for (ra, rb) in a.data.chunks(a.c).zip(b.data.chunks(b.c)) {
        data.extend_from_slice(ra);
        data.extend_from_slice(rb);
    }
    Act::from_vec(a.n, a.h, a.w, c, data)
}

pub fn split_channels<T: Real>(d: &Act<T>, ca: usize) -> (Act<T>, Act<T>) {
    let cb = d.c - ca;
    let mut a = Vec::with_capacity(d.pixels() * ca);
    let mut b = Vec::with_capacity(d.pixels() * cb);
    for row in d.data.chunks(d.c) {
        a.extend_from_slice(&row[..ca]);
        b.extend_from_slice(&row[ca..]);
    }
    (Act::from_vec(d.n, d.h, d.w, ca, a), Act::from_vec(d.n, d.h, d.w, cb, b))
}
