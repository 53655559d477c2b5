use super::real::Real;

/// Activation batch in channel-major `(C, N, H, W)` layout, so a channel's
/// values over the whole batch are contiguous and convolution outputs come
/// straight out of one matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Act<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self { c, n, h, w, data: vec![T::zero(); c * n * h * w] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.c, self.n, self.h, self.w) == (other.c, other.n, other.h, other.w)
    }

    #[inline]
    pub fn at(&self, c: usize, b: usize, y: usize, x: usize) -> T {
        self.data[((c * self.n + b) * self.h + y) * self.w + x]
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "activation shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Pack per-sample `(C, H, W)` planar images into a batch.
    pub fn from_images(images: &[&[T]], c: usize, h: usize, w: usize) -> Self {
        let n = images.len();
        let mut out = Self::zeros(c, n, h, w);
        let hw = h * w;
        for (b, img) in images.iter().enumerate() {
            assert_eq!(img.len(), c * hw, "image size");
            for ch in 0..c {
                let dst = (ch * n + b) * hw;
                out.data[dst..dst + hw].copy_from_slice(&img[ch * hw..(ch + 1) * hw]);
            }
        }
        out
    }

    /// Sample `b` as a flat `(C, H, W)` vector.
    pub fn sample(&self, b: usize) -> Vec<T> {
        let hw = self.h * self.w;
        let mut out = Vec::with_capacity(self.c * hw);
        for ch in 0..self.c {
            let src = (ch * self.n + b) * hw;
            out.extend_from_slice(&self.data[src..src + hw]);
        }
        out
    }

    /// Channel concatenation `[self; other]`.
    pub fn concat_channels(&self, other: &Self) -> Self {
        assert_eq!((self.n, self.h, self.w), (other.n, other.h, other.w), "concat shapes");
        let mut data = Vec::with_capacity(self.len() + other.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Self { c: self.c + other.c, n: self.n, h: self.h, w: self.w, data }
    }

    /// Split channels at `c0`.
    pub fn split_channels(mut self, c0: usize) -> (Self, Self) {
        let cut = c0 * self.plane();
        let tail = self.data.split_off(cut);
        let (n, h, w, c) = (self.n, self.h, self.w, self.c);
        (Self { c: c0, n, h, w, data: self.data }, Self { c: c - c0, n, h, w, data: tail })
    }
}
