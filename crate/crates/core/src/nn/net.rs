use std::ops::Range;

use rand::Rng;

use super::arch::{Arch, ConvSpec, ParamBlock};
use super::input::ObsBatch;
use super::scalar::{gemm, Mat, Scalar};
use super::NetError;

#[derive(Clone, Debug)]
struct Offsets {
    conv_w: [Range<usize>; 3],
    conv_b: [Range<usize>; 3],
    fc_w: Range<usize>,
    fc_b: Range<usize>,
    pi_w: Range<usize>,
    pi_b: Range<usize>,
    v_w: Range<usize>,
    v_b: Range<usize>,
}

impl Offsets {
    fn new(layout: &[ParamBlock]) -> Self {
        let r = |i: usize| layout[i].range();
        Offsets {
            conv_w: [r(0), r(2), r(4)],
            conv_b: [r(1), r(3), r(5)],
            fc_w: r(6),
            fc_b: r(7),
            pi_w: r(8),
            pi_b: r(9),
            v_w: r(10),
            v_b: r(11),
        }
    }
}

/// Shared actor-critic: three conv layers, one hidden layer, a
/// `channels x options` logit head and a scalar value head. Parameters live
/// in one flat buffer laid out by [`Arch::layout`].
#[derive(Clone, Debug)]
pub struct PolicyNet<T: Scalar> {
    arch: Arch,
    layout: Vec<ParamBlock>,
    off: Offsets,
    params: Vec<T>,
}

impl<T: Scalar> PartialEq for PolicyNet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.params == other.params
    }
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    n: usize,
    cols: [Vec<T>; 3],
    acts: [Vec<T>; 3],
    feat: Vec<T>,
    hidden: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Forward<T> {
    /// `n x channels x options`, row-major.
    pub logits: Vec<T>,
    pub values: Vec<T>,
    pub cache: ForwardCache<T>,
}

impl<T: Scalar> PolicyNet<T> {
    pub fn zeros(arch: Arch) -> Self {
        let layout = arch.layout();
        let n = arch.param_count();
        PolicyNet {
            off: Offsets::new(&layout),
            layout,
            arch,
            params: vec![T::zero(); n],
        }
    }

    pub fn from_params(arch: Arch, params: Vec<T>) -> Result<Self, NetError> {
        let mut net = Self::zeros(arch);
        if params.len() != net.params.len() {
            return Err(NetError::Shape(format!(
                "{} parameters for an architecture with {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    /// Orthogonal weights (gain sqrt 2 for ReLU layers, 0.01 for the heads),
    /// zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch);
        for block in net.layout.clone() {
            if block.is_bias() {
                continue;
            }
            let rows = block.shape[0];
            let cols = block.len() / rows;
            let gain = if block.name.starts_with("policy") || block.name.starts_with("value") {
                0.01
            } else {
                std::f64::consts::SQRT_2
            };
            let w = orthogonal(rows, cols, gain, rng);
            for (dst, v) in net.params[block.range()].iter_mut().zip(w) {
                *dst = T::of(v);
            }
        }
        net
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn layout(&self) -> &[ParamBlock] {
        &self.layout
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.layout.iter().find(|b| b.name == name)
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Scalar>(&self) -> PolicyNet<U> {
        let mut net = PolicyNet::<U>::zeros(self.arch.clone());
        for (d, s) in net.params.iter_mut().zip(&self.params) {
            *d = U::of(s.f64());
        }
        net
    }

    fn check_params(&self) -> Result<(), NetError> {
        if let Some(i) = self.params.iter().position(|v| !v.is_finite()) {
            let name = self
                .layout
                .iter()
                .find(|b| b.range().contains(&i))
                .map_or("?", |b| b.name.as_str());
            return Err(NetError::NonFinite(format!("parameter {i} ({name})")));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &ObsBatch<T>) -> Result<Forward<T>, NetError> {
        let a = &self.arch;
        if batch.side() != a.input || batch.proprio_len() != a.proprio {
            return Err(NetError::Shape(format!(
                "batch of {}x{} maps / {} proprio for a {}x{} / {} network",
                batch.side(),
                batch.side(),
                batch.proprio_len(),
                a.input,
                a.input,
                a.proprio
            )));
        }
        if let Some(i) = batch.maps().iter().position(|v| !v.is_finite()) {
            return Err(NetError::NonFinite(format!("input map value {i}")));
        }
        if let Some(i) = batch.proprio().iter().position(|v| !v.is_finite()) {
            return Err(NetError::NonFinite(format!("input proprio value {i}")));
        }
        self.check_params()?;
        let n = batch.len();
        let p = &self.params;
        let sizes = a.sizes();

        let mut cols: [Vec<T>; 3] = Default::default();
        let mut acts: [Vec<T>; 3] = Default::default();
        for l in 0..3 {
            let spec = &a.convs[l];
            let (input, side_in) = if l == 0 {
                (batch.maps(), a.input)
            } else {
                (acts[l - 1].as_slice(), sizes[l - 1])
            };
            let so = sizes[l];
            let c_in = a.in_channels(l);
            let mut col = Vec::new();
            im2col(input, c_in, n, side_in, spec, so, &mut col);
            let k = c_in * spec.kernel * spec.kernel;
            let ncols = n * so * so;
            let f = spec.out_channels;
            let mut out = vec![T::zero(); f * ncols];
            gemm(
                f,
                k,
                ncols,
                T::one(),
                Mat::rows(&p[self.off.conv_w[l].clone()], k),
                Mat::rows(&col, ncols),
                T::zero(),
                &mut out,
                ncols,
            );
            let bias = &p[self.off.conv_b[l].clone()];
            for (row, &b) in out.chunks_exact_mut(ncols).zip(bias) {
                for v in row {
                    *v = (*v + b).max(T::zero());
                }
            }
            cols[l] = col;
            acts[l] = out;
        }

        let flat = a.flat_len();
        let d = a.feature_len();
        let p3 = sizes[2] * sizes[2];
        let f3 = a.convs[2].out_channels;
        let mut feat = vec![T::zero(); n * d];
        for b in 0..n {
            let row = &mut feat[b * d..(b + 1) * d];
            for f in 0..f3 {
                row[f * p3..(f + 1) * p3]
                    .copy_from_slice(&acts[2][f * n * p3 + b * p3..f * n * p3 + (b + 1) * p3]);
            }
            row[flat..].copy_from_slice(&batch.proprio()[b * a.proprio..(b + 1) * a.proprio]);
        }

        let h = a.hidden;
        let mut hidden = vec![T::zero(); n * h];
        gemm(
            n,
            d,
            h,
            T::one(),
            Mat::rows(&feat, d),
            Mat::t(&p[self.off.fc_w.clone()], d),
            T::zero(),
            &mut hidden,
            h,
        );
        let fc_b = &p[self.off.fc_b.clone()];
        for row in hidden.chunks_exact_mut(h) {
            for (v, &b) in row.iter_mut().zip(fc_b) {
                *v = (*v + b).max(T::zero());
            }
        }

        let lo = a.logits_len();
        let mut logits = vec![T::zero(); n * lo];
        gemm(
            n,
            h,
            lo,
            T::one(),
            Mat::rows(&hidden, h),
            Mat::t(&p[self.off.pi_w.clone()], h),
            T::zero(),
            &mut logits,
            lo,
        );
        let pi_b = &p[self.off.pi_b.clone()];
        for row in logits.chunks_exact_mut(lo) {
            for (v, &b) in row.iter_mut().zip(pi_b) {
                *v += b;
            }
        }
        let v_w = &p[self.off.v_w.clone()];
        let v_b = p[self.off.v_b.start];
        let values: Vec<T> = hidden
            .chunks_exact(h)
            .map(|row| row.iter().zip(v_w).map(|(&x, &w)| x * w).sum::<T>() + v_b)
            .collect();

        if logits.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite("network output".into()));
        }
        Ok(Forward {
            logits,
            values,
            cache: ForwardCache {
                n,
                cols,
                acts,
                feat,
                hidden,
            },
        })
    }

    /// Accumulates into `grads` the gradient of a scalar loss whose partial
    /// derivatives w.r.t. the logits and values of `fwd` are given.
    pub fn backward(
        &self,
        fwd: &Forward<T>,
        dlogits: &[T],
        dvalues: &[T],
        grads: &mut [T],
    ) -> Result<(), NetError> {
        let a = &self.arch;
        let c = &fwd.cache;
        let n = c.n;
        let lo = a.logits_len();
        let h = a.hidden;
        let d = a.feature_len();
        if dlogits.len() != n * lo || dvalues.len() != n || grads.len() != self.params.len() {
            return Err(NetError::Shape(format!(
                "backward got {} logit grads, {} value grads, {} param slots for batch {n}",
                dlogits.len(),
                dvalues.len(),
                grads.len()
            )));
        }
        let p = &self.params;
        let o = &self.off;

        // Heads.
        gemm(
            lo,
            n,
            h,
            T::one(),
            Mat::t(dlogits, lo),
            Mat::rows(&c.hidden, h),
            T::one(),
            &mut grads[o.pi_w.clone()],
            h,
        );
        accumulate_col_sums(dlogits, lo, &mut grads[o.pi_b.clone()]);
        {
            let g_vw = &mut grads[o.v_w.clone()];
            for (row, &dv) in c.hidden.chunks_exact(h).zip(dvalues) {
                for (g, &x) in g_vw.iter_mut().zip(row) {
                    *g += dv * x;
                }
            }
        }
        grads[o.v_b.start] += dvalues.iter().copied().sum::<T>();

        let mut dhidden = vec![T::zero(); n * h];
        gemm(
            n,
            lo,
            h,
            T::one(),
            Mat::rows(dlogits, lo),
            Mat::rows(&p[o.pi_w.clone()], h),
            T::zero(),
            &mut dhidden,
            h,
        );
        let v_w = &p[o.v_w.clone()];
        for ((drow, hrow), &dv) in dhidden
            .chunks_exact_mut(h)
            .zip(c.hidden.chunks_exact(h))
            .zip(dvalues)
        {
            for ((g, &x), &w) in drow.iter_mut().zip(hrow).zip(v_w) {
                *g = if x > T::zero() { *g + dv * w } else { T::zero() };
            }
        }

        // Hidden layer.
        gemm(
            h,
            n,
            d,
            T::one(),
            Mat::t(&dhidden, h),
            Mat::rows(&c.feat, d),
            T::one(),
            &mut grads[o.fc_w.clone()],
            d,
        );
        accumulate_col_sums(&dhidden, h, &mut grads[o.fc_b.clone()]);
        let mut dfeat = vec![T::zero(); n * d];
        gemm(
            n,
            h,
            d,
            T::one(),
            Mat::rows(&dhidden, h),
            Mat::rows(&p[o.fc_w.clone()], d),
            T::zero(),
            &mut dfeat,
            d,
        );

        // Back to conv3 activations, channel-major.
        let sizes = a.sizes();
        let p3 = sizes[2] * sizes[2];
        let f3 = a.convs[2].out_channels;
        let mut dact = vec![T::zero(); f3 * n * p3];
        for b in 0..n {
            let row = &dfeat[b * d..b * d + f3 * p3];
            for f in 0..f3 {
                dact[f * n * p3 + b * p3..f * n * p3 + (b + 1) * p3]
                    .copy_from_slice(&row[f * p3..(f + 1) * p3]);
            }
        }

        for l in (0..3).rev() {
            let spec = &a.convs[l];
            let so = sizes[l];
            let ncols = n * so * so;
            let c_in = a.in_channels(l);
            let k = c_in * spec.kernel * spec.kernel;
            let f = spec.out_channels;
            for (g, &x) in dact.iter_mut().zip(&c.acts[l]) {
                if x <= T::zero() {
                    *g = T::zero();
                }
            }
            gemm(
                f,
                ncols,
                k,
                T::one(),
                Mat::rows(&dact, ncols),
                Mat::t(&c.cols[l], ncols),
                T::one(),
                &mut grads[o.conv_w[l].clone()],
                k,
            );
            {
                let gb = &mut grads[o.conv_b[l].clone()];
                for (g, row) in gb.iter_mut().zip(dact.chunks_exact(ncols)) {
                    *g += row.iter().copied().sum::<T>();
                }
            }
            if l == 0 {
                break;
            }
            let mut dcol = vec![T::zero(); k * ncols];
            gemm(
                k,
                f,
                ncols,
                T::one(),
                Mat::t(&p[o.conv_w[l].clone()], k),
                Mat::rows(&dact, ncols),
                T::zero(),
                &mut dcol,
                ncols,
            );
            let side_in = sizes[l - 1];
            let mut dprev = vec![T::zero(); c_in * n * side_in * side_in];
            col2im(&dcol, c_in, n, side_in, spec, so, &mut dprev);
            dact = dprev;
        }
        Ok(())
    }
}

fn accumulate_col_sums<T: Scalar>(m: &[T], cols: usize, out: &mut [T]) {
    for row in m.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Unfolds a channel-major `[c][n][side][side]` tensor into a
/// `(c k k) x (n so so)` patch matrix.
fn im2col<T: Scalar>(
    input: &[T],
    c: usize,
    n: usize,
    side: usize,
    spec: &ConvSpec,
    so: usize,
    col: &mut Vec<T>,
) {
    let k = spec.kernel;
    let p = so * so;
    let ncols = n * p;
    col.clear();
    col.resize(c * k * k * ncols, T::zero());
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * ncols..(row + 1) * ncols];
                for b in 0..n {
                    let src = &input[(ci * n + b) * side * side..(ci * n + b + 1) * side * side];
                    for oy in 0..so {
                        let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                        if iy < 0 || iy >= side as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * side..(iy as usize + 1) * side];
                        let drow = &mut dst[b * p + oy * so..b * p + (oy + 1) * so];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                            if ix >= 0 && ix < side as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients into `out`.
fn col2im<T: Scalar>(
    col: &[T],
    c: usize,
    n: usize,
    side: usize,
    spec: &ConvSpec,
    so: usize,
    out: &mut [T],
) {
    let k = spec.kernel;
    let p = so * so;
    let ncols = n * p;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * ncols..(row + 1) * ncols];
                for b in 0..n {
                    let dst =
                        &mut out[(ci * n + b) * side * side..(ci * n + b + 1) * side * side];
                    for oy in 0..so {
                        let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                        if iy < 0 || iy >= side as isize {
                            continue;
                        }
                        let srow = &src[b * p + oy * so..b * p + (oy + 1) * so];
                        for (ox, &g) in srow.iter().enumerate() {
                            let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                            if ix >= 0 && ix < side as isize {
                                dst[iy as usize * side + ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `rows x cols` matrix with orthonormal rows (or columns, whichever is
/// shorter), scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let long = rows.max(cols);
    let short = rows.min(cols);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(short);
    for _ in 0..short {
        let mut v: Vec<f64> = (0..long).map(|_| gaussian(rng)).collect();
        for _ in 0..2 {
            for u in &q {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        q.push(v);
    }
    let mut m = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            m[r * cols + c] = gain * if rows <= cols { q[r][c] } else { q[c][r] };
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = orthogonal(4, 9, 1.0, &mut rng);
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = (0..9).map(|c| m[i * 9 + c] * m[j * 9 + c]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        let tall = orthogonal(9, 4, 2.0, &mut rng);
        for i in 0..4 {
            let dot: f64 = (0..9).map(|r| tall[r * 4 + i] * tall[r * 4 + i]).sum();
            assert!((dot - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ConvSpec {
            out_channels: 1,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let (c, n, side) = (2, 3, 5);
        let so = spec.out_size(side);
        let x: Vec<f64> = (0..c * n * side * side).map(|_| rng.gen()).collect();
        let mut col = Vec::new();
        im2col(&x, c, n, side, &spec, so, &mut col);
        let y: Vec<f64> = (0..col.len()).map(|_| rng.gen()).collect();
        let mut back = vec![0.0; x.len()];
        col2im(&y, c, n, side, &spec, so, &mut back);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
