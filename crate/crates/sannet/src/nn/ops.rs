//! Forward primitives and their analytic gradients.
//!
//! Everything here is shaped for NCHW image tensors and built from a handful
//! of dense kernels: convolutions and fully connected layers lower to a
//! single `f64` matrix multiply (im2col), pooling and resampling are direct
//! index maps. Each op registers a [`GradFn`] so [`Var::backward`] can replay
//! the chain rule exactly.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::nn::graph::{GradFn, Var};
use crate::nn::tensor::Tensor;

/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the
/// cross-entropy ops so the log never sees 0.
pub const BCE_EPS: f64 = 1e-7;

// ---------------------------------------------------------------------------
// dense matmul helper
// ---------------------------------------------------------------------------

fn mm(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Vec<f64> {
    a.dot(&b).into_raw_vec_and_offset().0
}

fn view(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("contiguous row-major buffer")
}

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

fn check_same_shape(op: &'static str, a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("lhs shape {:?} vs rhs shape {:?}", a.shape(), b.shape()),
        });
    }
    Ok(())
}

struct AddGrad;
impl GradFn for AddGrad {
    fn grads(&self, g: &Tensor, _p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![
            needs[0].then(|| g.clone()),
            needs[1].then(|| g.clone()),
        ]
    }
}

pub fn add(a: &Var, b: &Var) -> Result<Var> {
    check_same_shape("add", a, b)?;
    let data = a
        .value()
        .data()
        .iter()
        .zip(b.value().data())
        .map(|(x, y)| x + y)
        .collect();
    let value = Tensor::from_vec(a.shape(), data)?;
    Ok(Var::from_op(value, vec![a.clone(), b.clone()], Box::new(AddGrad)))
}

struct SubGrad;
impl GradFn for SubGrad {
    fn grads(&self, g: &Tensor, _p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![
            needs[0].then(|| g.clone()),
            needs[1].then(|| g.map(|x| -x)),
        ]
    }
}

pub fn sub(a: &Var, b: &Var) -> Result<Var> {
    check_same_shape("sub", a, b)?;
    let data = a
        .value()
        .data()
        .iter()
        .zip(b.value().data())
        .map(|(x, y)| x - y)
        .collect();
    let value = Tensor::from_vec(a.shape(), data)?;
    Ok(Var::from_op(value, vec![a.clone(), b.clone()], Box::new(SubGrad)))
}

struct MulGrad;
impl GradFn for MulGrad {
    fn grads(&self, g: &Tensor, p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let da = needs[0].then(|| {
            let mut out = g.clone();
            for (o, b) in out.data_mut().iter_mut().zip(p[1].value().data()) {
                *o *= b;
            }
            out
        });
        let db = needs[1].then(|| {
            let mut out = g.clone();
            for (o, a) in out.data_mut().iter_mut().zip(p[0].value().data()) {
                *o *= a;
            }
            out
        });
        vec![da, db]
    }
}

/// Elementwise (Hadamard) product.
pub fn mul(a: &Var, b: &Var) -> Result<Var> {
    check_same_shape("mul", a, b)?;
    let data = a
        .value()
        .data()
        .iter()
        .zip(b.value().data())
        .map(|(x, y)| x * y)
        .collect();
    let value = Tensor::from_vec(a.shape(), data)?;
    Ok(Var::from_op(value, vec![a.clone(), b.clone()], Box::new(MulGrad)))
}

struct ScaleGrad(f64);
impl GradFn for ScaleGrad {
    fn grads(&self, g: &Tensor, _p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let c = self.0;
        vec![needs[0].then(|| g.map(|x| c * x))]
    }
}

pub fn scale(a: &Var, c: f64) -> Var {
    let value = a.value().map(|x| c * x);
    Var::from_op(value, vec![a.clone()], Box::new(ScaleGrad(c)))
}

/// Elementwise product with a fixed mask (dropout and ablations).
struct MaskGrad(Tensor);
impl GradFn for MaskGrad {
    fn grads(&self, g: &Tensor, _p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| {
            let mut out = g.clone();
            for (o, m) in out.data_mut().iter_mut().zip(self.0.data()) {
                *o *= m;
            }
            out
        })]
    }
}

pub fn mul_mask(a: &Var, mask: &Tensor) -> Result<Var> {
    if a.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            op: "mul_mask",
            detail: format!("input shape {:?} vs mask shape {:?}", a.shape(), mask.shape()),
        });
    }
    let data = a
        .value()
        .data()
        .iter()
        .zip(mask.data())
        .map(|(x, m)| x * m)
        .collect();
    let value = Tensor::from_vec(a.shape(), data)?;
    Ok(Var::from_op(value, vec![a.clone()], Box::new(MaskGrad(mask.clone()))))
}

// ---------------------------------------------------------------------------
// reductions and shape ops
// ---------------------------------------------------------------------------

struct SumGrad;
impl GradFn for SumGrad {
    fn grads(&self, g: &Tensor, p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| Tensor::full(p[0].shape(), g.item()))]
    }
}

pub fn sum(a: &Var) -> Var {
    let total: f64 = a.value().data().iter().sum();
    Var::from_op(Tensor::scalar(total), vec![a.clone()], Box::new(SumGrad))
}

/// Mean over all elements.
pub fn mean(a: &Var) -> Var {
    let n = a.value().numel() as f64;
    scale(&sum(a), 1.0 / n)
}

struct ReshapeGrad(Vec<usize>);
impl GradFn for ReshapeGrad {
    fn grads(&self, g: &Tensor, _p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| g.reshape(&self.0).expect("same element count"))]
    }
}

pub fn reshape(a: &Var, shape: &[usize]) -> Result<Var> {
    let value = a.value().reshape(shape)?;
    Ok(Var::from_op(
        value,
        vec![a.clone()],
        Box::new(ReshapeGrad(a.shape().to_vec())),
    ))
}

/// Collapse an `[N, ...]` tensor to `[N, rest]`.
pub fn flatten(a: &Var) -> Result<Var> {
    let shape = a.shape();
    if shape.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "flatten",
            detail: "cannot flatten a rank-0 tensor".into(),
        });
    }
    let n = shape[0];
    let rest: usize = shape[1..].iter().product();
    reshape(a, &[n, rest])
}

struct ConcatChannelsGrad {
    channels: Vec<usize>,
}
impl GradFn for ConcatChannelsGrad {
    fn grads(&self, g: &Tensor, p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (n, _c, h, w) = g.dims4("concat_channels").expect("rank checked in forward");
        let plane = h * w;
        let total_c: usize = self.channels.iter().sum();
        let mut offset = 0usize;
        let mut out = Vec::with_capacity(p.len());
        for (i, &ci) in self.channels.iter().enumerate() {
            if needs[i] {
                let mut data = vec![0.0; n * ci * plane];
                for bn in 0..n {
                    let src = (bn * total_c + offset) * plane;
                    let dst = bn * ci * plane;
                    data[dst..dst + ci * plane]
                        .copy_from_slice(&g.data()[src..src + ci * plane]);
                }
                out.push(Some(
                    Tensor::from_vec(&[n, ci, h, w], data).expect("sizes agree"),
                ));
            } else {
                out.push(None);
            }
            offset += ci;
        }
        out
    }
}

/// Concatenate NCHW tensors along the channel axis.
pub fn concat_channels(xs: &[&Var]) -> Result<Var> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("concat_channels of zero tensors".into()));
    }
    let (n, _, h, w) = xs[0].value().dims4("concat_channels")?;
    let mut channels = Vec::with_capacity(xs.len());
    for x in xs {
        let (xn, xc, xh, xw) = x.value().dims4("concat_channels")?;
        if (xn, xh, xw) != (n, h, w) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                detail: format!(
                    "non-channel dims differ: [{},_,{},{}] vs [{},_,{},{}]",
                    n, h, w, xn, xh, xw
                ),
            });
        }
        channels.push(xc);
    }
    let total_c: usize = channels.iter().sum();
    let plane = h * w;
    let mut data = vec![0.0; n * total_c * plane];
    for bn in 0..n {
        let mut offset = 0usize;
        for (x, &ci) in xs.iter().zip(&channels) {
            let src = bn * ci * plane;
            let dst = (bn * total_c + offset) * plane;
            data[dst..dst + ci * plane].copy_from_slice(&x.value().data()[src..src + ci * plane]);
            offset += ci;
        }
    }
    let value = Tensor::from_vec(&[n, total_c, h, w], data)?;
    let parents = xs.iter().map(|x| (*x).clone()).collect();
    Ok(Var::from_op(
        value,
        parents,
        Box::new(ConcatChannelsGrad { channels }),
    ))
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

struct LeakyReluGrad(f64);
impl GradFn for LeakyReluGrad {
    fn grads(&self, g: &Tensor, p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let slope = self.0;
        vec![needs[0].then(|| {
            let mut out = g.clone();
            for (o, &x) in out.data_mut().iter_mut().zip(p[0].value().data()) {
                if x < 0.0 {
                    *o *= slope;
                }
            }
            out
        })]
    }
}

pub fn leaky_relu(a: &Var, slope: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&slope) || slope == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "leaky_relu slope must be in (0,1), got {slope}"
        )));
    }
    let value = a.value().map(|x| if x >= 0.0 { x } else { slope * x });
    Ok(Var::from_op(
        value,
        vec![a.clone()],
        Box::new(LeakyReluGrad(slope)),
    ))
}

struct SigmoidGrad;
impl GradFn for SigmoidGrad {
    fn grads(&self, g: &Tensor, _p: &[Var], v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| {
            let mut out = g.clone();
            for (o, &y) in out.data_mut().iter_mut().zip(v.data()) {
                *o *= y * (1.0 - y);
            }
            out
        })]
    }
}

pub fn sigmoid(a: &Var) -> Var {
    // Saturated tails are nudged to the nearest representable values inside
    // (0,1) so downstream logs stay finite even for extreme pre-activations.
    const FLOOR: f64 = 1e-300;
    const CEIL: f64 = 1.0 - f64::EPSILON;
    let value = a.value().map(|x| {
        let y = if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        };
        y.clamp(FLOOR, CEIL)
    });
    Var::from_op(value, vec![a.clone()], Box::new(SigmoidGrad))
}

// ---------------------------------------------------------------------------
// dense (fully connected)
// ---------------------------------------------------------------------------

struct DenseGrad;
impl GradFn for DenseGrad {
    fn grads(&self, g: &Tensor, p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (n, d) = p[0].value().dims2("dense").expect("checked in forward");
        let (_, m) = p[1].value().dims2("dense").expect("checked in forward");
        let gv = view(g.data(), n, m);
        let dx = needs[0].then(|| {
            let w = view(p[1].value().data(), d, m);
            Tensor::from_vec(&[n, d], mm(gv, w.t())).expect("sizes agree")
        });
        let dw = needs[1].then(|| {
            let x = view(p[0].value().data(), n, d);
            Tensor::from_vec(&[d, m], mm(x.t(), gv)).expect("sizes agree")
        });
        let db = needs[2].then(|| {
            let mut acc = vec![0.0; m];
            for row in 0..n {
                for (a, &gi) in acc.iter_mut().zip(&g.data()[row * m..(row + 1) * m]) {
                    *a += gi;
                }
            }
            Tensor::from_vec(&[m], acc).expect("sizes agree")
        });
        vec![dx, dw, db]
    }
}

/// Affine map `x·w + b` for `x: [N,D]`, `w: [D,M]`, `b: [M]`.
pub fn dense(x: &Var, w: &Var, b: &Var) -> Result<Var> {
    let (n, d) = x.value().dims2("dense")?;
    let (dw, m) = w.value().dims2("dense")?;
    if d != dw {
        return Err(Error::ShapeMismatch {
            op: "dense",
            detail: format!("input inner dim {} vs weight inner dim {}", d, dw),
        });
    }
    if b.shape() != [m] {
        return Err(Error::ShapeMismatch {
            op: "dense",
            detail: format!("bias shape {:?}, expected [{}]", b.shape(), m),
        });
    }
    let mut out = mm(
        view(x.value().data(), n, d),
        view(w.value().data(), d, m),
    );
    for row in 0..n {
        for (o, &bi) in out[row * m..(row + 1) * m].iter_mut().zip(b.value().data()) {
            *o += bi;
        }
    }
    let value = Tensor::from_vec(&[n, m], out)?;
    Ok(Var::from_op(
        value,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(DenseGrad),
    ))
}

// ---------------------------------------------------------------------------
// conv2d, stride 1, zero-padded "same"
// ---------------------------------------------------------------------------

/// Patch matrices are materialized in chunks of at most this many `f64`s so
/// a 224x224 forward pass never allocates a multi-hundred-MB buffer.
const CONV_CHUNK_ELEMS: usize = 1 << 21;

/// Flattened output-row range helper: a conv output position is indexed by
/// `r = (n*H + oh)*W + ow`; chunks iterate contiguous ranges of `r`.
fn conv_chunks(rows: usize, cols: usize) -> impl Iterator<Item = (usize, usize)> {
    let chunk = (CONV_CHUNK_ELEMS / cols).max(1);
    (0..rows.div_ceil(chunk)).map(move |i| {
        let start = i * chunk;
        (start, (start + chunk).min(rows))
    })
}

/// Fill `col` with patch rows `[row0, row1)` of the zero-padded stride-1
/// convolution of `x`; each row is the flattened `C*kh*kw` receptive field.
fn im2col_chunk(x: &Tensor, kh: usize, kw: usize, row0: usize, row1: usize, col: &mut [f64]) {
    let (_n, c, h, w) = x.dims4("im2col").expect("rank checked by caller");
    let (ph, pw) = (kh / 2, kw / 2);
    let cols = c * kh * kw;
    col[..(row1 - row0) * cols].fill(0.0);
    let xd = x.data();
    for r in row0..row1 {
        let ow = r % w;
        let oh = (r / w) % h;
        let bn = r / (h * w);
        let row = (r - row0) * cols;
        let mut ci = 0usize;
        for ch in 0..c {
            let plane = (bn * c + ch) * h * w;
            for di in 0..kh {
                let ih = oh as isize + di as isize - ph as isize;
                if ih < 0 || ih >= h as isize {
                    ci += kw;
                    continue;
                }
                let src = plane + ih as usize * w;
                for dj in 0..kw {
                    let iw = ow as isize + dj as isize - pw as isize;
                    if iw >= 0 && iw < w as isize {
                        col[row + ci] = xd[src + iw as usize];
                    }
                    ci += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col_chunk`]: scatter patch-row gradients back onto `dx`.
fn col2im_chunk(
    dcol: &[f64],
    kh: usize,
    kw: usize,
    row0: usize,
    row1: usize,
    c: usize,
    h: usize,
    w: usize,
    dx: &mut [f64],
) {
    let (ph, pw) = (kh / 2, kw / 2);
    let cols = c * kh * kw;
    for r in row0..row1 {
        let ow = r % w;
        let oh = (r / w) % h;
        let bn = r / (h * w);
        let row = (r - row0) * cols;
        let mut ci = 0usize;
        for ch in 0..c {
            let plane = (bn * c + ch) * h * w;
            for di in 0..kh {
                let ih = oh as isize + di as isize - ph as isize;
                if ih < 0 || ih >= h as isize {
                    ci += kw;
                    continue;
                }
                let dst = plane + ih as usize * w;
                for dj in 0..kw {
                    let iw = ow as isize + dj as isize - pw as isize;
                    if iw >= 0 && iw < w as isize {
                        dx[dst + iw as usize] += dcol[row + ci];
                    }
                    ci += 1;
                }
            }
        }
    }
}

struct Conv2dGrad {
    kh: usize,
    kw: usize,
}
impl GradFn for Conv2dGrad {
    fn grads(&self, g: &Tensor, p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (n, c, h, w) = p[0].value().dims4("conv2d").expect("checked in forward");
        let k = p[1].value().shape()[0];
        let (kh, kw) = (self.kh, self.kw);
        let cols = c * kh * kw;
        let rows = n * h * w;
        let gd = g.data();

        let mut dk_flat = needs[1].then(|| vec![0.0f64; k * cols]);
        let mut dx = needs[0].then(|| Tensor::zeros(&[n, c, h, w]));
        if needs[0] || needs[1] {
            let chunk_rows = (CONV_CHUNK_ELEMS / cols).max(1);
            let mut colbuf = vec![0.0f64; chunk_rows * cols];
            let mut gbuf = vec![0.0f64; chunk_rows * k];
            for (r0, r1) in conv_chunks(rows, cols) {
                let nr = r1 - r0;
                // this chunk's output gradient as an [nr, K] matrix
                for r in r0..r1 {
                    let pix = r % (h * w);
                    let bn = r / (h * w);
                    for kk in 0..k {
                        gbuf[(r - r0) * k + kk] = gd[(bn * k + kk) * h * w + pix];
                    }
                }
                im2col_chunk(p[0].value(), kh, kw, r0, r1, &mut colbuf);
                if let Some(dk) = dk_flat.as_mut() {
                    let part = mm(
                        view(&gbuf[..nr * k], nr, k).t(),
                        view(&colbuf[..nr * cols], nr, cols),
                    );
                    for (a, b) in dk.iter_mut().zip(&part) {
                        *a += b;
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    let kmat = view(p[1].value().data(), k, cols);
                    let dcol = mm(view(&gbuf[..nr * k], nr, k), kmat);
                    col2im_chunk(&dcol, kh, kw, r0, r1, c, h, w, dx.data_mut());
                }
            }
        }

        let dk = dk_flat.map(|d| Tensor::from_vec(&[k, c, kh, kw], d).expect("sizes agree"));
        let db = needs[2].then(|| {
            let mut acc = vec![0.0; k];
            for bn in 0..n {
                for kk in 0..k {
                    let src = (bn * k + kk) * h * w;
                    acc[kk] += gd[src..src + h * w].iter().sum::<f64>();
                }
            }
            Tensor::from_vec(&[k], acc).expect("sizes agree")
        });
        vec![dx, dk, db]
    }
}

/// 2-D convolution, stride 1, zero-padded so output spatial dims equal input
/// spatial dims. `x: [N,C,H,W]`, `kernel: [K,C,kh,kw]` with odd `kh`, `kw`,
/// `bias: [K]`.
pub fn conv2d(x: &Var, kernel: &Var, bias: &Var) -> Result<Var> {
    let (n, c, h, w) = x.value().dims4("conv2d")?;
    let ks = kernel.value().shape();
    if ks.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!("kernel must be rank-4 [K,C,kh,kw], got {:?}", ks),
        });
    }
    let (k, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    if kc != c {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!("input has {} channels but kernel expects {}", c, kc),
        });
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "conv2d kernel spatial dims must be odd, got {}x{}",
            kh, kw
        )));
    }
    if bias.shape() != [k] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!("bias shape {:?}, expected [{}]", bias.shape(), k),
        });
    }

    let cols = c * kh * kw;
    let rows = n * h * w;
    let kmat = view(kernel.value().data(), k, cols);
    let bd = bias.value().data();
    let mut data = vec![0.0; n * k * h * w];
    let chunk_rows = (CONV_CHUNK_ELEMS / cols).max(1);
    let mut colbuf = vec![0.0f64; chunk_rows * cols];
    for (r0, r1) in conv_chunks(rows, cols) {
        let nr = r1 - r0;
        im2col_chunk(x.value(), kh, kw, r0, r1, &mut colbuf);
        let outmat = mm(view(&colbuf[..nr * cols], nr, cols), kmat.t()); // [nr, K]
        for r in r0..r1 {
            let pix = r % (h * w);
            let bn = r / (h * w);
            for kk in 0..k {
                data[(bn * k + kk) * h * w + pix] = outmat[(r - r0) * k + kk] + bd[kk];
            }
        }
    }
    let value = Tensor::from_vec(&[n, k, h, w], data)?;
    Ok(Var::from_op(
        value,
        vec![x.clone(), kernel.clone(), bias.clone()],
        Box::new(Conv2dGrad { kh, kw }),
    ))
}

// ---------------------------------------------------------------------------
// pooling and upsampling (window 2, stride 2)
// ---------------------------------------------------------------------------

struct AvgPoolGrad;
impl GradFn for AvgPoolGrad {
    fn grads(&self, g: &Tensor, p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (n, c, h, w) = p[0].value().dims4("avg_pool2d").expect("checked in forward");
        let (oh, ow) = (h / 2, w / 2);
        vec![needs[0].then(|| {
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            let dd = dx.data_mut();
            let gd = g.data();
            for plane in 0..n * c {
                let src = plane * oh * ow;
                let dst = plane * h * w;
                for i in 0..oh {
                    for j in 0..ow {
                        let q = gd[src + i * ow + j] * 0.25;
                        dd[dst + 2 * i * w + 2 * j] += q;
                        dd[dst + 2 * i * w + 2 * j + 1] += q;
                        dd[dst + (2 * i + 1) * w + 2 * j] += q;
                        dd[dst + (2 * i + 1) * w + 2 * j + 1] += q;
                    }
                }
            }
            dx
        })]
    }
}

/// 2x2 average pooling with stride 2. Odd trailing rows/cols are dropped.
pub fn avg_pool2d(x: &Var) -> Result<Var> {
    let (n, c, h, w) = x.value().dims4("avg_pool2d")?;
    if h < 2 || w < 2 {
        return Err(Error::ShapeMismatch {
            op: "avg_pool2d",
            detail: format!("spatial dims must be >= 2, got {}x{}", h, w),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut data = vec![0.0; n * c * oh * ow];
    let xd = x.value().data();
    for plane in 0..n * c {
        let src = plane * h * w;
        let dst = plane * oh * ow;
        for i in 0..oh {
            for j in 0..ow {
                let base = src + 2 * i * w + 2 * j;
                data[dst + i * ow + j] =
                    (xd[base] + xd[base + 1] + xd[base + w] + xd[base + w + 1]) * 0.25;
            }
        }
    }
    let value = Tensor::from_vec(&[n, c, oh, ow], data)?;
    Ok(Var::from_op(value, vec![x.clone()], Box::new(AvgPoolGrad)))
}

struct MaxPoolGrad {
    argmax: Vec<usize>,
    in_shape: [usize; 4],
}
impl GradFn for MaxPoolGrad {
    fn grads(&self, g: &Tensor, _p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| {
            let mut dx = Tensor::zeros(&self.in_shape);
            let dd = dx.data_mut();
            for (cell, &src) in g.data().iter().zip(&self.argmax) {
                dd[src] += cell;
            }
            dx
        })]
    }
}

/// 2x2 max pooling with stride 2. With `ceil_mode`, odd trailing edges are
/// padded by replicating the border so the output rounds up.
pub fn max_pool2d(x: &Var, ceil_mode: bool) -> Result<Var> {
    let (n, c, h, w) = x.value().dims4("max_pool2d")?;
    if h < 2 || w < 2 {
        return Err(Error::ShapeMismatch {
            op: "max_pool2d",
            detail: format!("spatial dims must be >= 2, got {}x{}", h, w),
        });
    }
    let (oh, ow) = if ceil_mode {
        (h.div_ceil(2), w.div_ceil(2))
    } else {
        (h / 2, w / 2)
    };
    let mut data = vec![0.0; n * c * oh * ow];
    let mut argmax = vec![0usize; n * c * oh * ow];
    let xd = x.value().data();
    for plane in 0..n * c {
        let src = plane * h * w;
        let dst = plane * oh * ow;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for di in 0..2 {
                    let ih = (2 * i + di).min(h - 1);
                    for dj in 0..2 {
                        let iw = (2 * j + dj).min(w - 1);
                        let idx = src + ih * w + iw;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                data[dst + i * ow + j] = best;
                argmax[dst + i * ow + j] = best_idx;
            }
        }
    }
    let value = Tensor::from_vec(&[n, c, oh, ow], data)?;
    Ok(Var::from_op(
        value,
        vec![x.clone()],
        Box::new(MaxPoolGrad {
            argmax,
            in_shape: [n, c, h, w],
        }),
    ))
}

struct UpsampleGrad;
impl GradFn for UpsampleGrad {
    fn grads(&self, g: &Tensor, p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (n, c, h, w) = p[0].value().dims4("upsample").expect("checked in forward");
        vec![needs[0].then(|| {
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            let dd = dx.data_mut();
            let gd = g.data();
            let (gh, gw) = (2 * h, 2 * w);
            for plane in 0..n * c {
                let src = plane * gh * gw;
                let dst = plane * h * w;
                for i in 0..h {
                    for j in 0..w {
                        let base = src + 2 * i * gw + 2 * j;
                        dd[dst + i * w + j] =
                            gd[base] + gd[base + 1] + gd[base + gw] + gd[base + gw + 1];
                    }
                }
            }
            dx
        })]
    }
}

/// Nearest-neighbor 2x upsampling: each pixel becomes a 2x2 block.
pub fn upsample_nearest2d(x: &Var) -> Result<Var> {
    let (n, c, h, w) = x.value().dims4("upsample_nearest2d")?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut data = vec![0.0; n * c * oh * ow];
    let xd = x.value().data();
    for plane in 0..n * c {
        let src = plane * h * w;
        let dst = plane * oh * ow;
        for i in 0..h {
            for j in 0..w {
                let v = xd[src + i * w + j];
                let base = dst + 2 * i * ow + 2 * j;
                data[base] = v;
                data[base + 1] = v;
                data[base + ow] = v;
                data[base + ow + 1] = v;
            }
        }
    }
    let value = Tensor::from_vec(&[n, c, oh, ow], data)?;
    Ok(Var::from_op(value, vec![x.clone()], Box::new(UpsampleGrad)))
}

// ---------------------------------------------------------------------------
// cross-entropy losses
// ---------------------------------------------------------------------------

#[inline]
fn clamp_pred(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

struct BceGrad;
impl GradFn for BceGrad {
    fn grads(&self, g: &Tensor, p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let go = g.item();
        let targets = p[0].value().data();
        let preds = p[1].value().data();
        let dt = needs[0].then(|| {
            let data = preds
                .iter()
                .map(|&pr| {
                    let pc = clamp_pred(pr);
                    go * ((1.0 - pc).ln() - pc.ln())
                })
                .collect();
            Tensor::from_vec(p[0].shape(), data).expect("sizes agree")
        });
        let dp = needs[1].then(|| {
            let data = targets
                .iter()
                .zip(preds)
                .map(|(&t, &pr)| {
                    if (BCE_EPS..=1.0 - BCE_EPS).contains(&pr) {
                        go * ((1.0 - t) / (1.0 - pr) - t / pr)
                    } else {
                        0.0 // clamped region is flat
                    }
                })
                .collect();
            Tensor::from_vec(p[1].shape(), data).expect("sizes agree")
        });
        vec![dt, dp]
    }
}

/// Binary cross-entropy `-t·ln p - (1-t)·ln(1-p)`, summed over all elements.
/// Predictions are clamped to `[BCE_EPS, 1-BCE_EPS]`.
pub fn binary_cross_entropy(target: &Var, prediction: &Var) -> Result<Var> {
    check_same_shape("binary_cross_entropy", target, prediction)?;
    let total: f64 = target
        .value()
        .data()
        .iter()
        .zip(prediction.value().data())
        .map(|(&t, &p)| {
            let pc = clamp_pred(p);
            -t * pc.ln() - (1.0 - t) * (1.0 - pc).ln()
        })
        .sum();
    Ok(Var::from_op(
        Tensor::scalar(total),
        vec![target.clone(), prediction.clone()],
        Box::new(BceGrad),
    ))
}

struct SoftmaxCeGrad {
    labels: Vec<usize>,
}
impl GradFn for SoftmaxCeGrad {
    fn grads(&self, g: &Tensor, p: &[Var], _v: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let go = g.item();
        let (n, c) = p[0].value().dims2("softmax_cross_entropy").expect("checked");
        vec![needs[0].then(|| {
            let z = p[0].value().data();
            let mut d = vec![0.0; n * c];
            for row in 0..n {
                let zr = &z[row * c..(row + 1) * c];
                let m = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = zr.iter().map(|&v| (v - m).exp()).sum();
                for col in 0..c {
                    let soft = (zr[col] - m).exp() / denom;
                    let hot = if col == self.labels[row] { 1.0 } else { 0.0 };
                    d[row * c + col] = go * (soft - hot);
                }
            }
            Tensor::from_vec(&[n, c], d).expect("sizes agree")
        })]
    }
}

/// Multi-class cross-entropy over logits `[N,C]` with integer labels,
/// summed over the batch.
pub fn softmax_cross_entropy(logits: &Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = logits.value().dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            detail: format!("{} rows of logits but {} labels", n, labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let z = logits.value().data();
    let mut total = 0.0;
    for row in 0..n {
        let zr = &z[row * c..(row + 1) * c];
        let m = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + zr.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        total += lse - zr[labels[row]];
    }
    Ok(Var::from_op(
        Tensor::scalar(total),
        vec![logits.clone()],
        Box::new(SoftmaxCeGrad {
            labels: labels.to_vec(),
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::{finite_diff_check, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force zero-padded stride-1 correlation, written independently of
    /// the im2col path: slide the kernel, sum overlapping products.
    fn conv2d_oracle(x: &Tensor, k: &Tensor, b: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4("oracle").unwrap();
        let ks = k.shape();
        let (ko, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        assert_eq!(c, kc);
        let mut out = Tensor::zeros(&[n, ko, h, w]);
        for bn in 0..n {
            for oc in 0..ko {
                for oh in 0..h {
                    for ow in 0..w {
                        let mut acc = b.data()[oc];
                        for ic in 0..c {
                            for di in 0..kh {
                                for dj in 0..kw {
                                    let ih = oh as isize + di as isize - (kh / 2) as isize;
                                    let iw = ow as isize + dj as isize - (kw / 2) as isize;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < w
                                    {
                                        let xi = x.data()
                                            [((bn * c + ic) * h + ih as usize) * w + iw as usize];
                                        let ki = k.data()[((oc * c + ic) * kh + di) * kw + dj];
                                        acc += xi * ki;
                                    }
                                }
                            }
                        }
                        let idx = ((bn * ko + oc) * h + oh) * w + ow;
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_zero_input_yields_bias() {
        let x = Var::constant(Tensor::zeros(&[1, 1, 3, 3]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let k = Var::constant(random_tensor(&[2, 1, 3, 3], -1.0, 1.0, &mut rng));
        let b = Var::constant(Tensor::from_vec(&[2], vec![0.7, -0.3]).unwrap());
        let y = conv2d(&x, &k, &b).unwrap();
        for (i, v) in y.value().data().iter().enumerate() {
            let expect = if i < 9 { 0.7 } else { -0.3 };
            assert_eq!(*v, expect);
        }
    }

    #[test]
    fn conv2d_identity_kernel_preserves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[1, 1, 3, 3], 0.0, 1.0, &mut rng);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0; // center tap
        let y = conv2d(
            &Var::constant(x.clone()),
            &Var::constant(k),
            &Var::constant(Tensor::zeros(&[1])),
        )
        .unwrap();
        assert_eq!(y.value().data(), x.data());
    }

    #[test]
    fn conv2d_two_by_two_all_ones_kernel() {
        // Every output position's 3x3 window covers the full 2x2 input.
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let oracle = conv2d_oracle(&x, &k, &b);
        assert_eq!(oracle.data(), &[10.0, 10.0, 10.0, 10.0]);
        let y = conv2d(&Var::constant(x), &Var::constant(k), &Var::constant(b)).unwrap();
        assert_eq!(y.value().data(), oracle.data());
    }

    #[test]
    fn conv2d_matches_sliding_window_oracle_on_random_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&[2, 3, 5, 4], -1.0, 1.0, &mut rng);
        let k = random_tensor(&[4, 3, 3, 3], -1.0, 1.0, &mut rng);
        let b = random_tensor(&[4], -1.0, 1.0, &mut rng);
        let oracle = conv2d_oracle(&x, &k, &b);
        let y = conv2d(
            &Var::constant(x),
            &Var::constant(k),
            &Var::constant(b),
        )
        .unwrap();
        assert!(y.value().max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn conv2d_shape_errors_name_the_dimension() {
        let x = Var::constant(Tensor::zeros(&[1, 2, 4, 4]));
        let k = Var::constant(Tensor::zeros(&[3, 1, 3, 3]));
        let b = Var::constant(Tensor::zeros(&[3]));
        match conv2d(&x, &k, &b) {
            Err(Error::ShapeMismatch { detail, .. }) => {
                assert!(detail.contains("2 channels") && detail.contains("expects"), "{detail}");
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
        let k_even = Var::constant(Tensor::zeros(&[3, 2, 2, 2]));
        assert!(conv2d(&x, &k_even, &b).is_err());
    }

    #[test]
    fn conv2d_is_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xa = random_tensor(&[1, 2, 4, 4], -1.0, 1.0, &mut rng);
        let xb = random_tensor(&[1, 2, 4, 4], -1.0, 1.0, &mut rng);
        let k = Var::constant(random_tensor(&[3, 2, 3, 3], -1.0, 1.0, &mut rng));
        let b = Var::constant(Tensor::zeros(&[3]));
        let (alpha, beta) = (0.7, -1.3);

        let mixed: Vec<f64> = xa
            .data()
            .iter()
            .zip(xb.data())
            .map(|(a, bb)| alpha * a + beta * bb)
            .collect();
        let lhs = conv2d(
            &Var::constant(Tensor::from_vec(&[1, 2, 4, 4], mixed).unwrap()),
            &k,
            &b,
        )
        .unwrap();
        let ya = conv2d(&Var::constant(xa), &k, &b).unwrap();
        let yb = conv2d(&Var::constant(xb), &k, &b).unwrap();
        let rhs: Vec<f64> = ya
            .value()
            .data()
            .iter()
            .zip(yb.value().data())
            .map(|(a, bb)| alpha * a + beta * bb)
            .collect();
        let rhs = Tensor::from_vec(&[1, 3, 4, 4], rhs).unwrap();
        assert!(lhs.value().max_abs_diff(&rhs) < 1e-6);
    }

    #[test]
    fn leaky_relu_definition() {
        let x = Var::constant(Tensor::from_vec(&[3], vec![2.0, 0.0, -3.0]).unwrap());
        let y = leaky_relu(&x, 0.2).unwrap();
        assert_eq!(y.value().data()[0], 2.0);
        assert_eq!(y.value().data()[1], 0.0);
        assert!((y.value().data()[2] - -0.6).abs() < 1e-12);
        assert!(leaky_relu(&x, 0.0).is_err());
        assert!(leaky_relu(&x, 1.0).is_err());
    }

    #[test]
    fn pool_examples() {
        let x = Var::constant(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        assert_eq!(avg_pool2d(&x).unwrap().value().data(), &[4.0]);
        assert_eq!(max_pool2d(&x, false).unwrap().value().data(), &[7.0]);
    }

    #[test]
    fn six_ceil_maxpools_take_224_to_4() {
        let mut x = Var::constant(Tensor::zeros(&[1, 1, 224, 224]));
        let mut sizes = Vec::new();
        for _ in 0..6 {
            x = max_pool2d(&x, true).unwrap();
            sizes.push(x.shape()[2]);
        }
        assert_eq!(sizes, vec![112, 56, 28, 14, 7, 4]);
    }

    #[test]
    fn ceil_mode_replicates_border() {
        // 3x3 plane: the bottom-right ceil window sees only the corner value.
        let x = Var::constant(
            Tensor::from_vec(
                &[1, 1, 3, 3],
                vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, -9.0],
            )
            .unwrap(),
        );
        let y = max_pool2d(&x, true).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.value().data(), &[5.0, 6.0, 8.0, -9.0]);
    }

    #[test]
    fn upsample_examples_and_roundtrip() {
        let x = Var::constant(Tensor::from_vec(&[1, 1, 1, 1], vec![5.0]).unwrap());
        let y = upsample_nearest2d(&x).unwrap();
        assert_eq!(y.value().data(), &[5.0, 5.0, 5.0, 5.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_tensor(&[2, 3, 8, 8], -10.0, 10.0, &mut rng);
        let up = upsample_nearest2d(&Var::constant(t.clone())).unwrap();
        assert_eq!(up.shape(), &[2, 3, 16, 16]);
        let back = avg_pool2d(&up).unwrap();
        assert_eq!(back.value().data(), t.data(), "avg_pool(upsample(x)) must equal x exactly");
    }

    #[test]
    fn dense_examples_and_triple_loop_oracle() {
        // identity weights, zero bias
        let x = Var::constant(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        let eye = Var::constant(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let zero_b = Var::constant(Tensor::zeros(&[2]));
        assert_eq!(dense(&x, &eye, &zero_b).unwrap().value().data(), &[1.0, 2.0]);

        // [1,2]·I + [3,3] = [4,5]
        let b = Var::constant(Tensor::from_vec(&[2], vec![3.0, 3.0]).unwrap());
        assert_eq!(dense(&x, &eye, &b).unwrap().value().data(), &[4.0, 5.0]);

        // random case against a naive triple loop
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xt = random_tensor(&[2, 3], -1.0, 1.0, &mut rng);
        let wt = random_tensor(&[3, 4], -1.0, 1.0, &mut rng);
        let bt = random_tensor(&[4], -1.0, 1.0, &mut rng);
        let mut expect = vec![0.0; 2 * 4];
        for i in 0..2 {
            for j in 0..4 {
                let mut acc = bt.data()[j];
                for kk in 0..3 {
                    acc += xt.data()[i * 3 + kk] * wt.data()[kk * 4 + j];
                }
                expect[i * 4 + j] = acc;
            }
        }
        let y = dense(
            &Var::constant(xt),
            &Var::constant(wt),
            &Var::constant(bt),
        )
        .unwrap();
        let expect = Tensor::from_vec(&[2, 4], expect).unwrap();
        assert!(y.value().max_abs_diff(&expect) < 1e-12);

        // inner-dim mismatch
        let bad_w = Var::constant(Tensor::zeros(&[5, 4]));
        assert!(dense(&x, &bad_w, &zero_b).is_err());
    }

    #[test]
    fn sigmoid_examples() {
        let x = Var::constant(Tensor::from_vec(&[3], vec![0.0, 40.0, 1.0]).unwrap());
        let y = sigmoid(&x);
        let d = y.value().data();
        assert_eq!(d[0], 0.5);
        assert!((d[1] - 1.0).abs() < 1e-6 && d[1] < 1.0);
        assert!((d[2] - 0.7310585786300049).abs() < 1e-12);
        assert!(d.iter().all(|v| 0.0 < *v && *v < 1.0));
    }

    #[test]
    fn bce_examples() {
        let s = |t: f64, p: f64| {
            binary_cross_entropy(
                &Var::constant(Tensor::scalar(t)),
                &Var::constant(Tensor::scalar(p)),
            )
            .unwrap()
            .value()
            .item()
        };
        assert!(s(1.0, 1.0 - BCE_EPS) < 1e-6);
        assert!((s(0.5, 0.5) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((s(1.0, 0.9) - 0.10536051565782628).abs() < 1e-12);
        // clamping keeps the loss finite at the endpoints
        assert!(s(1.0, 0.0).is_finite());
        assert!(s(0.0, 1.0).is_finite());
    }

    #[test]
    fn softmax_cross_entropy_examples() {
        let uniform = Var::constant(Tensor::zeros(&[2, 4]));
        let loss = softmax_cross_entropy(&uniform, &[0, 3]).unwrap();
        assert!((loss.value().item() - 2.0 * 4.0f64.ln()).abs() < 1e-12);

        let mut peaked = Tensor::zeros(&[1, 3]);
        peaked.data_mut()[1] = 50.0;
        let loss = softmax_cross_entropy(&Var::constant(peaked), &[1]).unwrap();
        assert!(loss.value().item() < 1e-9);

        assert!(softmax_cross_entropy(&uniform, &[0]).is_err());
        assert!(softmax_cross_entropy(&uniform, &[0, 4]).is_err());
    }

    #[test]
    fn concat_channels_layout_and_errors() {
        let a = Var::constant(Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        let b = Var::constant(
            Tensor::from_vec(&[1, 2, 1, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap(),
        );
        let y = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), &[1, 3, 1, 2]);
        assert_eq!(y.value().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

        let bad = Var::constant(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(concat_channels(&[&a, &bad]).is_err());
    }

    // ---- gradient checks: every primitive against central differences ----

    const FD_H: f64 = 1e-4;
    const FD_TOL: f64 = 1e-4;

    fn assert_fd(inputs: &[Tensor], build: &dyn Fn(&[Var]) -> Result<Var>) {
        let report = finite_diff_check(inputs, FD_H, build).unwrap();
        assert!(
            report.max_rel_err < FD_TOL,
            "finite-difference mismatch: rel err {} over {} coords",
            report.max_rel_err,
            report.checked
        );
    }

    #[test]
    fn grad_elementwise_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_tensor(&[4, 4], -1.0, 1.0, &mut rng);
        let b = random_tensor(&[4, 4], -1.0, 1.0, &mut rng);
        assert_fd(&[a.clone(), b.clone()], &|v| Ok(sum(&add(&v[0], &v[1])?)));
        assert_fd(&[a.clone(), b.clone()], &|v| Ok(sum(&sub(&v[0], &v[1])?)));
        assert_fd(&[a.clone(), b.clone()], &|v| Ok(sum(&mul(&v[0], &v[1])?)));
        assert_fd(&[a.clone()], &|v| Ok(sum(&scale(&v[0], -2.5))));
        assert_fd(&[a.clone()], &|v| Ok(mean(&v[0])));
        let mask = random_tensor(&[4, 4], 0.0, 2.0, &mut rng);
        assert_fd(&[a], &|v| Ok(sum(&mul_mask(&v[0], &mask)?)));
    }

    #[test]
    fn grad_activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // keep values away from the kink at 0
        let mut x = random_tensor(&[4, 4], 0.01, 1.0, &mut rng);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            if i % 2 == 0 {
                *v = -*v;
            }
        }
        assert_fd(&[x.clone()], &|v| Ok(sum(&leaky_relu(&v[0], 0.2)?)));
        assert_fd(&[x], &|v| Ok(sum(&sigmoid(&v[0]))));
    }

    #[test]
    fn grad_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_tensor(&[3, 4], -1.0, 1.0, &mut rng);
        let w = random_tensor(&[4, 2], -1.0, 1.0, &mut rng);
        let b = random_tensor(&[2], -1.0, 1.0, &mut rng);
        // square the output so grads depend on values, not just structure
        assert_fd(&[x, w, b], &|v| {
            let y = dense(&v[0], &v[1], &v[2])?;
            Ok(sum(&mul(&y, &y)?))
        });
    }

    #[test]
    fn grad_conv2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_tensor(&[2, 2, 4, 4], -1.0, 1.0, &mut rng);
        let k = random_tensor(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let b = random_tensor(&[3], -1.0, 1.0, &mut rng);
        assert_fd(&[x, k, b], &|v| {
            let y = conv2d(&v[0], &v[1], &v[2])?;
            Ok(sum(&mul(&y, &y)?))
        });
    }

    #[test]
    fn grad_pooling_and_upsample() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_tensor(&[1, 2, 4, 4], -1.0, 1.0, &mut rng);
        assert_fd(&[x.clone()], &|v| {
            let y = avg_pool2d(&v[0])?;
            Ok(sum(&mul(&y, &y)?))
        });
        assert_fd(&[x.clone()], &|v| {
            let y = max_pool2d(&v[0], false)?;
            Ok(sum(&mul(&y, &y)?))
        });
        let odd = random_tensor(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
        assert_fd(&[odd], &|v| {
            let y = max_pool2d(&v[0], true)?;
            Ok(sum(&mul(&y, &y)?))
        });
        assert_fd(&[x], &|v| {
            let y = upsample_nearest2d(&v[0])?;
            Ok(sum(&mul(&y, &y)?))
        });
    }

    #[test]
    fn grad_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        // stay inside the unclamped region
        let t = random_tensor(&[4, 4], 0.1, 0.9, &mut rng);
        let p = random_tensor(&[4, 4], 0.1, 0.9, &mut rng);
        assert_fd(&[t, p], &|v| binary_cross_entropy(&v[0], &v[1]));

        let logits = random_tensor(&[3, 5], -1.0, 1.0, &mut rng);
        assert_fd(&[logits], &|v| softmax_cross_entropy(&v[0], &[0, 2, 4]));
    }

    #[test]
    fn grad_concat_and_reshape() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let a = random_tensor(&[1, 2, 3, 3], -1.0, 1.0, &mut rng);
        let b = random_tensor(&[1, 1, 3, 3], -1.0, 1.0, &mut rng);
        assert_fd(&[a.clone(), b], &|v| {
            let y = concat_channels(&[&v[0], &v[1]])?;
            Ok(sum(&mul(&y, &y)?))
        });
        assert_fd(&[a], &|v| {
            let y = flatten(&v[0])?;
            Ok(sum(&mul(&y, &y)?))
        });
    }
}
