use super::real::{gemm, Real};
use super::tensor::Act;
use super::weights::{EntryKind, WeightVector};
use super::TensorError;
use crate::rng::SplitMix64;
use rayon::prelude::*;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-call switches shared by every node.
#[derive(Debug, Clone, Copy)]
pub struct Ctx<'a> {
    /// Training mode: batch statistics in batch norm (unless its affine
    /// parameters are frozen) and caches kept for a backward pass.
    pub train: bool,
    /// Entry-indexed mask; gradients are produced only where it is `true`.
    pub trainable: &'a [bool],
    /// Force batch norm onto running statistics even in training mode
    /// (per-sample gradients).
    pub bn_running: bool,
}

impl<'a> Ctx<'a> {
    pub fn eval() -> Ctx<'static> {
        Ctx { train: false, trainable: &[], bn_running: true }
    }

    pub fn train(trainable: &'a [bool]) -> Self {
        Self { train: true, trainable, bn_running: false }
    }

    #[inline]
    pub fn grad(&self, i: usize) -> bool {
        self.trainable.get(i).copied().unwrap_or(false)
    }
}

fn uniform_init<T: Real>(seed: u64, name: &str, n: usize, bound: f64) -> Vec<T> {
    let mut rng = SplitMix64::stream(seed, 0, name);
    (0..n).map(|_| T::of(rng.uniform(-bound, bound))).collect()
}

#[derive(Debug, Clone)]
pub struct Conv<T> {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub zero_init: bool,
    w: usize,
    col: Vec<T>,
    in_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl<T: Real> Conv<T> {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }

    fn register(&mut self, wv: &mut WeightVector<T>, seed: u64) -> Result<(), TensorError> {
        let name = format!("{}.weight", self.name);
        let fan_in = self.cin * self.k * self.k;
        let n = self.cout * fan_in;
        let data = if self.zero_init { vec![T::zero(); n] } else { uniform_init(seed, &name, n, (6.0 / fan_in as f64).sqrt()) };
        self.w = wv.push(&name, &[self.cout, self.cin, self.k, self.k], EntryKind::Param, data)?;
        Ok(())
    }

    fn im2col(&self, x: &Act<T>, ho: usize, wo: usize) -> Vec<T> {
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        let cols = x.n * ho * wo;
        let mut col = vec![T::zero(); x.c * k * k * cols];
        col.par_chunks_mut(cols).enumerate().for_each(|(r, dst)| {
            let (ci, ky, kx) = (r / (k * k), (r / k) % k, r % k);
            for b in 0..x.n {
                let src = &x.data[(ci * x.n + b) * x.h * x.w..(ci * x.n + b + 1) * x.h * x.w];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    let row = &src[iy as usize * x.w..(iy as usize + 1) * x.w];
                    let d = &mut dst[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                    for (ox, dv) in d.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < x.w as isize {
                            *dv = row[ix as usize];
                        }
                    }
                }
            }
        });
        col
    }

    fn col2im(&self, dcol: &[T]) -> Act<T> {
        let (c, n, h, w) = self.in_shape;
        let (ho, wo) = self.out_hw;
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        let cols = n * ho * wo;
        let mut dx = Act::zeros(c, n, h, w);
        dx.data.par_chunks_mut(n * h * w).enumerate().for_each(|(ci, plane)| {
            for ky in 0..k {
                for kx in 0..k {
                    let r = (ci * k + ky) * k + kx;
                    let src = &dcol[r * cols..(r + 1) * cols];
                    for b in 0..n {
                        for oy in 0..ho {
                            let iy = (oy * s + ky) as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = (b * h + iy as usize) * w;
                            let srow = &src[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                            for (ox, &v) in srow.iter().enumerate() {
                                let ix = (ox * s + kx) as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    plane[base + ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        });
        dx
    }

    fn forward(&mut self, x: Act<T>, wv: &WeightVector<T>, ctx: &Ctx) -> Act<T> {
        assert_eq!(x.c, self.cin, "{}: input channels", self.name);
        let (ho, wo) = self.out_size(x.h, x.w);
        let cols = x.n * ho * wo;
        let rows = self.cin * self.k * self.k;
        self.in_shape = (x.c, x.n, x.h, x.w);
        self.out_hw = (ho, wo);
        let col = if self.is_pointwise() { x.data } else { self.im2col(&x, ho, wo) };
        let mut out = Act::zeros(self.cout, x.n, ho, wo);
        gemm(false, false, self.cout, cols, rows, T::one(), wv.data(self.w), &col, T::zero(), &mut out.data);
        self.col = if ctx.train { col } else { Vec::new() };
        out
    }

    fn backward(&mut self, dy: Act<T>, wv: &WeightVector<T>, g: &mut WeightVector<T>, ctx: &Ctx) -> Act<T> {
        let (c, n, h, w) = self.in_shape;
        let cols = dy.plane();
        let rows = self.cin * self.k * self.k;
        assert_eq!(self.col.len(), rows * cols, "{}: backward without cached forward", self.name);
        if ctx.grad(self.w) {
            gemm(false, true, self.cout, rows, cols, T::one(), &dy.data, &self.col, T::one(), g.data_mut(self.w));
        }
        let mut dcol = vec![T::zero(); rows * cols];
        gemm(true, false, rows, cols, self.cout, T::one(), wv.data(self.w), &dy.data, T::zero(), &mut dcol);
        self.col = Vec::new();
        if self.is_pointwise() {
            Act { c, n, h, w, data: dcol }
        } else {
            self.col2im(&dcol)
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub name: String,
    pub c: usize,
    pub zero_init: bool,
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

impl<T: Real> BatchNorm<T> {
    fn register(&mut self, wv: &mut WeightVector<T>) -> Result<(), TensorError> {
        let c = self.c;
        let g0 = if self.zero_init { T::zero() } else { T::one() };
        self.gamma = wv.push(&format!("{}.gamma", self.name), &[c], EntryKind::Param, vec![g0; c])?;
        self.beta = wv.push(&format!("{}.beta", self.name), &[c], EntryKind::Param, vec![T::zero(); c])?;
        self.mean = wv.push(&format!("{}.running_mean", self.name), &[c], EntryKind::Buffer, vec![T::zero(); c])?;
        self.var = wv.push(&format!("{}.running_var", self.name), &[c], EntryKind::Buffer, vec![T::one(); c])?;
        Ok(())
    }

    fn forward(&mut self, x: Act<T>, wv: &mut WeightVector<T>, ctx: &Ctx) -> Act<T> {
        assert_eq!(x.c, self.c, "{}: channels", self.name);
        let m = x.plane();
        let eps = T::of(BN_EPS);
        // Frozen affine parameters mean the layer is treated as fixed, running
        // statistics included.
        let batch = ctx.train && !ctx.bn_running && (ctx.grad(self.gamma) || ctx.grad(self.beta));
        let stats: Vec<(T, T)> = if batch {
            x.data
                .par_chunks(m)
                .map(|ch| {
                    let mean = ch.iter().copied().sum::<T>() / T::of(m as f64);
                    let var = ch.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::of(m as f64);
                    (mean, var)
                })
                .collect()
        } else {
            wv.data(self.mean).iter().zip(wv.data(self.var)).map(|(&a, &b)| (a, b)).collect()
        };
        if batch {
            let mom = T::of(BN_MOMENTUM);
            let unbias = if m > 1 { T::of(m as f64 / (m as f64 - 1.0)) } else { T::one() };
            for (i, &(mu, var)) in stats.iter().enumerate() {
                let rm = &mut wv.data_mut(self.mean)[i];
                *rm = (T::one() - mom) * *rm + mom * mu;
                let rv = &mut wv.data_mut(self.var)[i];
                *rv = (T::one() - mom) * *rv + mom * var * unbias;
            }
        }
        let inv: Vec<T> = stats.iter().map(|&(_, v)| T::one() / (v + eps).sqrt()).collect();
        let gamma = wv.data(self.gamma);
        let beta = wv.data(self.beta);
        let mut xhat = x.data;
        let mut out = vec![T::zero(); xhat.len()];
        xhat.par_chunks_mut(m).zip(out.par_chunks_mut(m)).enumerate().for_each(|(ci, (xh, o))| {
            let (mu, is) = (stats[ci].0, inv[ci]);
            for (a, b) in xh.iter_mut().zip(o.iter_mut()) {
                *a = (*a - mu) * is;
                *b = gamma[ci] * *a + beta[ci];
            }
        });
        if ctx.train {
            self.xhat = xhat;
            self.inv_std = inv;
            self.batch_stats = batch;
        }
        Act { c: x.c, n: x.n, h: x.h, w: x.w, data: out }
    }

    fn backward(&mut self, dy: Act<T>, wv: &WeightVector<T>, g: &mut WeightVector<T>, ctx: &Ctx) -> Act<T> {
        let m = dy.plane();
        assert_eq!(self.xhat.len(), dy.len(), "{}: backward without cached forward", self.name);
        let gamma = wv.data(self.gamma);
        let sums: Vec<(T, T)> = dy
            .data
            .par_chunks(m)
            .zip(self.xhat.par_chunks(m))
            .map(|(d, xh)| {
                let sd = d.iter().copied().sum::<T>();
                let sdx = d.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
                (sd, sdx)
            })
            .collect();
        if ctx.grad(self.gamma) {
            for (v, s) in g.data_mut(self.gamma).iter_mut().zip(&sums) {
                *v += s.1;
            }
        }
        if ctx.grad(self.beta) {
            for (v, s) in g.data_mut(self.beta).iter_mut().zip(&sums) {
                *v += s.0;
            }
        }
        let mut dx = dy.data;
        let mf = T::of(m as f64);
        let batch = self.batch_stats;
        let inv = &self.inv_std;
        dx.par_chunks_mut(m).zip(self.xhat.par_chunks(m)).enumerate().for_each(|(ci, (d, xh))| {
            let scale = gamma[ci] * inv[ci];
            if batch {
                let (sd, sdx) = sums[ci];
                for (dv, &x) in d.iter_mut().zip(xh) {
                    *dv = scale / mf * (mf * *dv - sd - x * sdx);
                }
            } else {
                d.iter_mut().for_each(|dv| *dv *= scale);
            }
        });
        self.xhat = Vec::new();
        Act { c: dy.c, n: dy.n, h: dy.h, w: dy.w, data: dx }
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub name: String,
    pub fin: usize,
    pub fout: usize,
    pub zero_init: bool,
    w: usize,
    b: usize,
    x: Vec<T>,
}

impl<T: Real> Linear<T> {
    fn register(&mut self, wv: &mut WeightVector<T>, seed: u64) -> Result<(), TensorError> {
        let (wn, bn) = (format!("{}.weight", self.name), format!("{}.bias", self.name));
        let bound = 1.0 / (self.fin as f64).sqrt();
        let (wd, bd) = if self.zero_init {
            (vec![T::zero(); self.fout * self.fin], vec![T::zero(); self.fout])
        } else {
            (uniform_init(seed, &wn, self.fout * self.fin, bound), uniform_init(seed, &bn, self.fout, bound))
        };
        self.w = wv.push(&wn, &[self.fout, self.fin], EntryKind::Param, wd)?;
        self.b = wv.push(&bn, &[self.fout], EntryKind::Param, bd)?;
        Ok(())
    }

    fn forward(&mut self, x: Act<T>, wv: &WeightVector<T>, ctx: &Ctx) -> Act<T> {
        assert_eq!(x.c * x.h * x.w, self.fin, "{}: input features", self.name);
        assert!(x.h == 1 && x.w == 1, "{}: expects pooled features", self.name);
        let n = x.n;
        let mut out = Act::zeros(self.fout, n, 1, 1);
        for (o, &bv) in out.data.chunks_mut(n).zip(wv.data(self.b)) {
            o.iter_mut().for_each(|v| *v = bv);
        }
        gemm(false, false, self.fout, n, self.fin, T::one(), wv.data(self.w), &x.data, T::one(), &mut out.data);
        if ctx.train {
            self.x = x.data;
        }
        out
    }

    fn backward(&mut self, dy: Act<T>, wv: &WeightVector<T>, g: &mut WeightVector<T>, ctx: &Ctx) -> Act<T> {
        let n = dy.n;
        assert_eq!(self.x.len(), self.fin * n, "{}: backward without cached forward", self.name);
        if ctx.grad(self.w) {
            gemm(false, true, self.fout, self.fin, n, T::one(), &dy.data, &self.x, T::one(), g.data_mut(self.w));
        }
        if ctx.grad(self.b) {
            for (gv, row) in g.data_mut(self.b).iter_mut().zip(dy.data.chunks(n)) {
                *gv += row.iter().copied().sum::<T>();
            }
        }
        let mut dx = Act::zeros(self.fin, n, 1, 1);
        gemm(true, false, self.fin, n, self.fout, T::one(), wv.data(self.w), &dy.data, T::zero(), &mut dx.data);
        self.x = Vec::new();
        dx
    }
}

#[derive(Debug, Clone)]
pub struct Residual<T> {
    pub body: Node<T>,
    /// Projection shortcut; identity when `None`.
    pub shortcut: Option<Node<T>>,
    pub post_relu: bool,
    mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct DenseConcat<T> {
    pub body: Node<T>,
    c0: usize,
}

/// A differentiable module tree.
#[derive(Debug, Clone)]
pub enum Node<T> {
    Conv(Conv<T>),
    Bn(BatchNorm<T>),
    Relu(Vec<bool>),
    AvgPool2((usize, usize)),
    GlobalAvgPool((usize, usize)),
    Linear(Linear<T>),
    Seq(Vec<Node<T>>),
    Residual(Box<Residual<T>>),
    /// Output is the input with the body's output appended along channels.
    Dense(Box<DenseConcat<T>>),
}

impl<T: Real> Node<T> {
    pub fn conv(name: impl Into<String>, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        Node::Conv(Conv {
            name: name.into(),
            cin,
            cout,
            k,
            stride,
            pad,
            zero_init: false,
            w: usize::MAX,
            col: Vec::new(),
            in_shape: (0, 0, 0, 0),
            out_hw: (0, 0),
        })
    }

    pub fn bn(name: impl Into<String>, c: usize) -> Self {
        Node::Bn(BatchNorm {
            name: name.into(),
            c,
            zero_init: false,
            gamma: usize::MAX,
            beta: usize::MAX,
            mean: usize::MAX,
            var: usize::MAX,
            xhat: Vec::new(),
            inv_std: Vec::new(),
            batch_stats: false,
        })
    }

    pub fn relu() -> Self {
        Node::Relu(Vec::new())
    }

    pub fn avg_pool2() -> Self {
        Node::AvgPool2((0, 0))
    }

    pub fn global_avg_pool() -> Self {
        Node::GlobalAvgPool((0, 0))
    }

    pub fn linear(name: impl Into<String>, fin: usize, fout: usize) -> Self {
        Node::Linear(Linear { name: name.into(), fin, fout, zero_init: false, w: usize::MAX, b: usize::MAX, x: Vec::new() })
    }

    pub fn residual(body: Node<T>, shortcut: Option<Node<T>>, post_relu: bool) -> Self {
        Node::Residual(Box::new(Residual { body, shortcut, post_relu, mask: Vec::new() }))
    }

    pub fn dense(body: Node<T>) -> Self {
        Node::Dense(Box::new(DenseConcat { body, c0: 0 }))
    }

    /// Make the last parameterized layer on the output path start at zero
    /// (batch-norm scale and shift, or convolution / linear weights).
    /// Returns `false` when the tree has no such layer.
    pub fn zero_last(&mut self) -> bool {
        match self {
            Node::Conv(c) => {
                c.zero_init = true;
                true
            }
            Node::Bn(b) => {
                b.zero_init = true;
                true
            }
            Node::Linear(l) => {
                l.zero_init = true;
                true
            }
            Node::Seq(items) => items.iter_mut().rev().any(|n| n.zero_last()),
            Node::Residual(r) => r.body.zero_last(),
            Node::Dense(d) => d.body.zero_last(),
            _ => false,
        }
    }

    /// Append this tree's entries to `wv`, recording their indices.
    pub fn register(&mut self, wv: &mut WeightVector<T>, seed: u64) -> Result<(), TensorError> {
        match self {
            Node::Conv(c) => c.register(wv, seed),
            Node::Bn(b) => b.register(wv),
            Node::Linear(l) => l.register(wv, seed),
            Node::Seq(items) => items.iter_mut().try_for_each(|n| n.register(wv, seed)),
            Node::Residual(r) => {
                r.body.register(wv, seed)?;
                if let Some(s) = &mut r.shortcut {
                    s.register(wv, seed)?;
                }
                Ok(())
            }
            Node::Dense(d) => d.body.register(wv, seed),
            _ => Ok(()),
        }
    }

    pub fn forward(&mut self, x: Act<T>, wv: &mut WeightVector<T>, ctx: &Ctx) -> Act<T> {
        match self {
            Node::Conv(c) => c.forward(x, wv, ctx),
            Node::Bn(b) => b.forward(x, wv, ctx),
            Node::Relu(mask) => {
                let mut x = x;
                if ctx.train {
                    *mask = x.data.iter().map(|&v| v > T::zero()).collect();
                }
                x.data.iter_mut().for_each(|v| {
                    if *v <= T::zero() {
                        *v = T::zero()
                    }
                });
                x
            }
            Node::AvgPool2(hw) => {
                *hw = (x.h, x.w);
                let (ho, wo) = (x.h / 2, x.w / 2);
                let mut out = Act::zeros(x.c, x.n, ho, wo);
                let quarter = T::of(0.25);
                for cb in 0..x.c * x.n {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let base = cb * x.h * x.w;
                            let s = x.data[base + 2 * oy * x.w + 2 * ox]
                                + x.data[base + 2 * oy * x.w + 2 * ox + 1]
                                + x.data[base + (2 * oy + 1) * x.w + 2 * ox]
                                + x.data[base + (2 * oy + 1) * x.w + 2 * ox + 1];
                            out.data[(cb * ho + oy) * wo + ox] = s * quarter;
                        }
                    }
                }
                out
            }
            Node::GlobalAvgPool(hw) => {
                *hw = (x.h, x.w);
                let area = x.h * x.w;
                let inv = T::one() / T::of(area as f64);
                let data = x.data.chunks(area).map(|c| c.iter().copied().sum::<T>() * inv).collect();
                Act { c: x.c, n: x.n, h: 1, w: 1, data }
            }
            Node::Linear(l) => l.forward(x, wv, ctx),
            Node::Seq(items) => items.iter_mut().fold(x, |a, n| n.forward(a, wv, ctx)),
            Node::Residual(r) => {
                let skip = match &mut r.shortcut {
                    Some(s) => s.forward(x.clone(), wv, ctx),
                    None => x.clone(),
                };
                let mut y = r.body.forward(x, wv, ctx);
                y.add_assign(&skip);
                if r.post_relu {
                    if ctx.train {
                        r.mask = y.data.iter().map(|&v| v > T::zero()).collect();
                    }
                    y.data.iter_mut().for_each(|v| {
                        if *v <= T::zero() {
                            *v = T::zero()
                        }
                    });
                }
                y
            }
            Node::Dense(d) => {
                d.c0 = x.c;
                let f = d.body.forward(x.clone(), wv, ctx);
                x.concat_channels(&f)
            }
        }
    }

    pub fn backward(&mut self, dy: Act<T>, wv: &WeightVector<T>, g: &mut WeightVector<T>, ctx: &Ctx) -> Act<T> {
        match self {
            Node::Conv(c) => c.backward(dy, wv, g, ctx),
            Node::Bn(b) => b.backward(dy, wv, g, ctx),
            Node::Relu(mask) => {
                let mut dy = dy;
                assert_eq!(mask.len(), dy.len(), "relu backward without cached forward");
                dy.data.iter_mut().zip(mask.iter()).for_each(|(d, &m)| {
                    if !m {
                        *d = T::zero()
                    }
                });
                mask.clear();
                dy
            }
            Node::AvgPool2((h, w)) => {
                let (h, w) = (*h, *w);
                let (ho, wo) = (dy.h, dy.w);
                let mut dx = Act::zeros(dy.c, dy.n, h, w);
                let quarter = T::of(0.25);
                for cb in 0..dy.c * dy.n {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let v = dy.data[(cb * ho + oy) * wo + ox] * quarter;
                            let base = cb * h * w;
                            for (yy, xx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                dx.data[base + (2 * oy + yy) * w + 2 * ox + xx] = v;
                            }
                        }
                    }
                }
                dx
            }
            Node::GlobalAvgPool((h, w)) => {
                let area = *h * *w;
                let inv = T::one() / T::of(area as f64);
                let data = dy.data.iter().flat_map(|&v| std::iter::repeat_n(v * inv, area)).collect();
                Act { c: dy.c, n: dy.n, h: *h, w: *w, data }
            }
            Node::Linear(l) => l.backward(dy, wv, g, ctx),
            Node::Seq(items) => items.iter_mut().rev().fold(dy, |d, n| n.backward(d, wv, g, ctx)),
            Node::Residual(r) => {
                let mut dy = dy;
                if r.post_relu {
                    assert_eq!(r.mask.len(), dy.len(), "residual backward without cached forward");
                    dy.data.iter_mut().zip(&r.mask).for_each(|(d, &m)| {
                        if !m {
                            *d = T::zero()
                        }
                    });
                    r.mask.clear();
                }
                let dskip = match &mut r.shortcut {
                    Some(s) => s.backward(dy.clone(), wv, g, ctx),
                    None => dy.clone(),
                };
                let mut dx = r.body.backward(dy, wv, g, ctx);
                dx.add_assign(&dskip);
                dx
            }
            Node::Dense(d) => {
                let (mut pass, dbody) = dy.split_channels(d.c0);
                let dx = d.body.backward(dbody, wv, g, ctx);
                pass.add_assign(&dx);
                pass
            }
        }
    }

    /// Number of output channels given `cin` input channels.
    pub fn out_channels(&self, cin: usize) -> usize {
        match self {
            Node::Conv(c) => c.cout,
            Node::Linear(l) => l.fout,
            Node::Seq(items) => items.iter().fold(cin, |c, n| n.out_channels(c)),
            Node::Residual(r) => r.body.out_channels(cin),
            Node::Dense(d) => cin + d.body.out_channels(cin),
            _ => cin,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_direct_loop() {
        let mut node: Node<f64> = Node::conv("c", 2, 3, 3, 2, 1);
        let mut wv = WeightVector::new();
        node.register(&mut wv, 7).unwrap();
        let x = Act { c: 2, n: 2, h: 5, w: 5, data: (0..100).map(|i| (i as f64 * 0.37).sin()).collect() };
        let y = node.forward(x.clone(), &mut wv, &Ctx::eval());
        assert_eq!((y.c, y.n, y.h, y.w), (3, 2, 3, 3));
        let w = wv.data(0);
        for co in 0..3 {
            for b in 0..2 {
                for oy in 0..3 {
                    for ox in 0..3 {
                        let mut s = 0.0;
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * 2 + ky) as isize - 1;
                                    let ix = (ox * 2 + kx) as isize - 1;
                                    if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                        s += w[((co * 2 + ci) * 3 + ky) * 3 + kx] * x.at(ci, b, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        assert!((s - y.at(co, b, oy, ox)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn batch_norm_normalizes_and_tracks_running_stats() {
        let mut node: Node<f64> = Node::bn("bn", 2);
        let mut wv = WeightVector::new();
        node.register(&mut wv, 0).unwrap();
        let trainable = vec![true; wv.len()];
        let x = Act { c: 2, n: 4, h: 1, w: 1, data: vec![1.0, 2.0, 3.0, 4.0, 10.0, 10.0, 10.0, 10.0] };
        let y = node.forward(x, &mut wv, &Ctx::train(&trainable));
        let mean: f64 = y.data[..4].iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!(y.data[4..].iter().all(|v| v.abs() < 1e-12));
        assert!((wv.get("bn.running_mean").unwrap().data[0] - 0.25).abs() < 1e-12);
        // unbiased batch variance 5/3, blended with 1.0
        assert!((wv.get("bn.running_var").unwrap().data[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_last_silences_output() {
        let mut node: Node<f64> =
            Node::Seq(vec![Node::conv("a", 1, 2, 3, 1, 1), Node::bn("b", 2), Node::relu(), Node::conv("c", 2, 2, 3, 1, 1), Node::bn("d", 2)]);
        assert!(node.zero_last());
        let mut wv = WeightVector::new();
        node.register(&mut wv, 1).unwrap();
        let x = Act { c: 1, n: 2, h: 4, w: 4, data: (0..32).map(|i| i as f64).collect() };
        let y = node.forward(x, &mut wv, &Ctx::eval());
        assert!(y.data.iter().all(|&v| v == 0.0));
    }
}

#[cfg(test)]
mod grad_tests {
    use super::*;

    fn fd_check(mut node: Node<f64>, x: Act<f64>) -> f64 {
        let mut wv = WeightVector::new();
        node.register(&mut wv, 3).unwrap();
        let mask = vec![true; wv.len()];
        let ctx = Ctx::train(&mask);
        let y = node.forward(x.clone(), &mut wv, &ctx);
        let r: Vec<f64> = (0..y.len()).map(|i| ((i * 7) as f64).sin()).collect();
        let mut g = wv.zeros_like();
        let dx = node.backward(Act { data: r.clone(), ..y }, &wv, &mut g, &ctx);
        let f = |node: &mut Node<f64>, wv: &mut WeightVector<f64>, x: Act<f64>| {
            node.forward(x, wv, &ctx).data.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut worst = 0.0f64;
        for i in 0..x.len() {
            let mut up = x.clone();
            up.data[i] += 1e-5;
            let mut dn = x.clone();
            dn.data[i] -= 1e-5;
            let fd = (f(&mut node, &mut wv, up) - f(&mut node, &mut wv, dn)) / 2e-5;
            worst = worst.max((fd - dx.data[i]).abs());
        }
        for e in 0..wv.len() {
            if !wv.is_param(e) {
                continue;
            }
            for j in 0..wv.data(e).len() {
                let o = wv.data(e)[j];
                wv.data_mut(e)[j] = o + 1e-5;
                let a = f(&mut node, &mut wv, x.clone());
                wv.data_mut(e)[j] = o - 1e-5;
                let b = f(&mut node, &mut wv, x.clone());
                wv.data_mut(e)[j] = o;
                worst = worst.max(((a - b) / 2e-5 - g.data(e)[j]).abs());
            }
        }
        worst
    }

    fn input(c: usize, n: usize, h: usize) -> Act<f64> {
        Act { c, n, h, w: h, data: (0..c * n * h * h).map(|i| ((i * 13 % 17) as f64 * 0.31).cos()).collect() }
    }

    #[test]
    fn strided_and_pointwise_conv_gradients() {
        assert!(fd_check(Node::conv("c", 2, 3, 3, 2, 1), input(2, 2, 6)) < 1e-7);
        assert!(fd_check(Node::conv("c", 2, 3, 1, 2, 0), input(2, 2, 6)) < 1e-7);
        assert!(fd_check(Node::conv("c", 2, 3, 1, 1, 0), input(2, 2, 5)) < 1e-7);
    }

    #[test]
    fn batch_norm_and_pool_gradients() {
        assert!(fd_check(Node::bn("b", 3), input(3, 2, 3)) < 1e-7);
        assert!(fd_check(Node::Seq(vec![Node::avg_pool2(), Node::global_avg_pool()]), input(2, 2, 4)) < 1e-7);
        assert!(fd_check(Node::Seq(vec![Node::global_avg_pool(), Node::linear("l", 2, 3)]), input(2, 3, 2)) < 1e-7);
    }
}
