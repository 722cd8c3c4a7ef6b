//! Layer implementations with exact reverse-mode gradients.
//!
//! Each layer caches what its backward pass needs during forward. Batch
//! parallelism only ever splits work along dimensions whose reductions
//! stay inside one task (samples for data gradients, output units for
//! weight gradients), so results are independent of thread count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Mode, NnError, Scalar, Shape, Tensor};

fn shape_err(op: &'static str, expected: String, got: Shape) -> NnError {
    NnError::ShapeMismatch {
        op,
        expected,
        got: got.to_string(),
    }
}

/// Draw a standard normal via Box-Muller; deterministic given the stream.
fn standard_normal<T: Scalar, R: Rng>(rng: &mut R) -> T {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    T::from_f64((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos())
}

/// 2D cross-correlation, stride 1, zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub filters: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub weights: Vec<T>, // [filters][in_channels][kernel][kernel]
    pub bias: Vec<T>,
    pub grad_weights: Vec<T>,
    pub grad_bias: Vec<T>,
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_channels: usize, filters: usize, kernel: usize, padding: usize) -> Self {
        let wlen = filters * in_channels * kernel * kernel;
        Self {
            filters,
            in_channels,
            kernel,
            padding,
            weights: vec![T::zero(); wlen],
            bias: vec![T::zero(); filters],
            grad_weights: vec![T::zero(); wlen],
            grad_bias: vec![T::zero(); filters],
            cached_input: None,
        }
    }

    pub fn init_kaiming(&mut self, rng: &mut ChaCha8Rng) {
        let fan_in = (self.in_channels * self.kernel * self.kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        for w in &mut self.weights {
            *w = T::from_f64(rng.gen_range(-bound..bound));
        }
        for b in &mut self.bias {
            *b = T::zero();
        }
    }

    pub fn out_shape(&self, input: Shape) -> Shape {
        let h = input.h + 2 * self.padding + 1 - self.kernel;
        let w = input.w + 2 * self.padding + 1 - self.kernel;
        Shape::new(input.n, self.filters, h, w)
    }

    pub fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NnError> {
        let ishape = input.shape();
        if ishape.c != self.in_channels {
            return Err(shape_err(
                "conv2d",
                format!("{} input channels", self.in_channels),
                ishape,
            ));
        }
        if ishape.h + 2 * self.padding < self.kernel || ishape.w + 2 * self.padding < self.kernel {
            return Err(shape_err("conv2d", "input at least kernel-sized".into(), ishape));
        }
        let oshape = self.out_shape(ishape);
        let mut out = Tensor::zeros(oshape);

        let (k, p) = (self.kernel, self.padding);
        let (ih, iw) = (ishape.h, ishape.w);
        let (oh, ow) = (oshape.h, oshape.w);
        let in_feat = ishape.features();
        let out_feat = oshape.features();
        let idata = input.data();
        let weights = &self.weights;
        let bias = &self.bias;
        let fil = self.filters;
        let cin = self.in_channels;

        out.data_mut()
            .par_chunks_mut(out_feat)
            .enumerate()
            .for_each(|(n, osample)| {
                let isample = &idata[n * in_feat..(n + 1) * in_feat];
                for fo in 0..fil {
                    let oplane = &mut osample[fo * oh * ow..(fo + 1) * oh * ow];
                    for v in oplane.iter_mut() {
                        *v = bias[fo];
                    }
                    for ci in 0..cin {
                        let iplane = &isample[ci * ih * iw..(ci + 1) * ih * iw];
                        let wbase = ((fo * cin) + ci) * k * k;
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = weights[wbase + ky * k + kx];
                                if wv == T::zero() {
                                    continue;
                                }
                                // out[y][x] += wv * in[y+ky-p][x+kx-p]
                                let y0 = p.saturating_sub(ky);
                                let y1 = oh.min(ih + p - ky);
                                let x0 = p.saturating_sub(kx);
                                let x1 = ow.min(iw + p - kx);
                                for y in y0..y1 {
                                    let iy = y + ky - p;
                                    let orow = &mut oplane[y * ow + x0..y * ow + x1];
                                    let irow =
                                        &iplane[iy * iw + x0 + kx - p..iy * iw + x1 + kx - p];
                                    for (o, &i) in orow.iter_mut().zip(irow) {
                                        *o += wv * i;
                                    }
                                }
                            }
                        }
                    }
                }
            });

        self.cached_input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or(NnError::BackwardBeforeForward("conv2d"))?;
        let ishape = input.shape();
        let oshape = self.out_shape(ishape);
        if grad_out.shape() != oshape {
            return Err(shape_err("conv2d backward", oshape.to_string(), grad_out.shape()));
        }

        let (k, p) = (self.kernel, self.padding);
        let (ih, iw) = (ishape.h, ishape.w);
        let (oh, ow) = (oshape.h, oshape.w);
        let in_feat = ishape.features();
        let out_feat = oshape.features();
        let idata = input.data();
        let gdata = grad_out.data();
        let weights = &self.weights;
        let fil = self.filters;
        let cin = self.in_channels;
        let n_batch = ishape.n;

        // Input gradient: parallel over samples.
        let mut grad_in = Tensor::zeros(ishape);
        grad_in
            .data_mut()
            .par_chunks_mut(in_feat)
            .enumerate()
            .for_each(|(n, gisample)| {
                let gosample = &gdata[n * out_feat..(n + 1) * out_feat];
                for fo in 0..fil {
                    let goplane = &gosample[fo * oh * ow..(fo + 1) * oh * ow];
                    for ci in 0..cin {
                        let giplane = &mut gisample[ci * ih * iw..(ci + 1) * ih * iw];
                        let wbase = ((fo * cin) + ci) * k * k;
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = weights[wbase + ky * k + kx];
                                if wv == T::zero() {
                                    continue;
                                }
                                let y0 = p.saturating_sub(ky);
                                let y1 = oh.min(ih + p - ky);
                                let x0 = p.saturating_sub(kx);
                                let x1 = ow.min(iw + p - kx);
                                for y in y0..y1 {
                                    let iy = y + ky - p;
                                    let gorow = &goplane[y * ow + x0..y * ow + x1];
                                    let girow = &mut giplane
                                        [iy * iw + x0 + kx - p..iy * iw + x1 + kx - p];
                                    for (gi, &go) in girow.iter_mut().zip(gorow) {
                                        *gi += wv * go;
                                    }
                                }
                            }
                        }
                    }
                }
            });

        // Weight and bias gradients: parallel over filters; each filter
        // reduces over samples and pixels in fixed order.
        let kk = k * k;
        self.grad_weights
            .par_chunks_mut(cin * kk)
            .zip(self.grad_bias.par_iter_mut())
            .enumerate()
            .for_each(|(fo, (gw_filter, gb))| {
                for n in 0..n_batch {
                    let isample = &idata[n * in_feat..(n + 1) * in_feat];
                    let goplane =
                        &gdata[n * out_feat + fo * oh * ow..n * out_feat + (fo + 1) * oh * ow];
                    for v in goplane {
                        *gb += *v;
                    }
                    for ci in 0..cin {
                        let iplane = &isample[ci * ih * iw..(ci + 1) * ih * iw];
                        for ky in 0..k {
                            for kx in 0..k {
                                let mut acc = T::zero();
                                let y0 = p.saturating_sub(ky);
                                let y1 = oh.min(ih + p - ky);
                                let x0 = p.saturating_sub(kx);
                                let x1 = ow.min(iw + p - kx);
                                for y in y0..y1 {
                                    let iy = y + ky - p;
                                    let gorow = &goplane[y * ow + x0..y * ow + x1];
                                    let irow =
                                        &iplane[iy * iw + x0 + kx - p..iy * iw + x1 + kx - p];
                                    for (&go, &iv) in gorow.iter().zip(irow) {
                                        acc += go * iv;
                                    }
                                }
                                gw_filter[ci * kk + ky * k + kx] += acc;
                            }
                        }
                    }
                }
            });

        Ok(grad_in)
    }
}

/// Non-overlapping max pooling.
#[derive(Debug, Clone)]
pub struct MaxPool<T> {
    pub size: usize,
    argmax: Option<(Shape, Vec<usize>)>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> MaxPool<T> {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            argmax: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NnError> {
        let s = self.size;
        let ishape = input.shape();
        if ishape.h % s != 0 || ishape.w % s != 0 {
            return Err(NnError::OddSpatialDims {
                op: "maxpool",
                h: ishape.h,
                w: ishape.w,
            });
        }
        let oshape = Shape::new(ishape.n, ishape.c, ishape.h / s, ishape.w / s);
        let mut out = Tensor::zeros(oshape);
        let mut argmax = vec![0usize; oshape.numel()];
        let (ih, iw) = (ishape.h, ishape.w);
        let (oh, ow) = (oshape.h, oshape.w);
        let idata = input.data();
        let odata = out.data_mut();
        for plane in 0..ishape.n * ishape.c {
            let ibase = plane * ih * iw;
            let obase = plane * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0;
                    for dy in 0..s {
                        for dx in 0..s {
                            let idx = ibase + (oy * s + dy) * iw + ox * s + dx;
                            if idata[idx] > best {
                                best = idata[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    odata[obase + oy * ow + ox] = best;
                    argmax[obase + oy * ow + ox] = best_idx;
                }
            }
        }
        self.argmax = Some((ishape, argmax));
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (ishape, argmax) = self
            .argmax
            .as_ref()
            .ok_or(NnError::BackwardBeforeForward("maxpool"))?;
        let mut grad_in = Tensor::zeros(*ishape);
        let gi = grad_in.data_mut();
        for (i, &src) in argmax.iter().enumerate() {
            gi[src] += grad_out.data()[i];
        }
        Ok(grad_in)
    }
}

#[derive(Debug, Clone)]
pub struct Relu<T> {
    mask: Option<(Shape, Vec<bool>)>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self {
            mask: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut out = input.clone();
        let mask = out
            .data_mut()
            .iter_mut()
            .map(|v| {
                let pass = *v > T::zero();
                if !pass {
                    *v = T::zero();
                }
                pass
            })
            .collect();
        self.mask = Some((input.shape(), mask));
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (shape, mask) = self
            .mask
            .as_ref()
            .ok_or(NnError::BackwardBeforeForward("relu"))?;
        let mut grad_in = Tensor::zeros(*shape);
        for ((gi, &go), &pass) in grad_in
            .data_mut()
            .iter_mut()
            .zip(grad_out.data())
            .zip(mask.iter())
        {
            if pass {
                *gi = go;
            }
        }
        Ok(grad_in)
    }
}

impl<T: Scalar> Default for Relu<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Fully connected layer; flattens whatever spatial shape it receives.
#[derive(Debug, Clone)]
pub struct Fc<T> {
    pub input: usize,
    pub output: usize,
    pub weights: Vec<T>, // [output][input]
    pub bias: Vec<T>,
    pub grad_weights: Vec<T>,
    pub grad_bias: Vec<T>,
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Fc<T> {
    pub fn new(input: usize, output: usize) -> Self {
        Self {
            input,
            output,
            weights: vec![T::zero(); input * output],
            bias: vec![T::zero(); output],
            grad_weights: vec![T::zero(); input * output],
            grad_bias: vec![T::zero(); output],
            cached_input: None,
        }
    }

    pub fn init_kaiming(&mut self, rng: &mut ChaCha8Rng) {
        let bound = (6.0 / self.input as f64).sqrt();
        for w in &mut self.weights {
            *w = T::from_f64(rng.gen_range(-bound..bound));
        }
        for b in &mut self.bias {
            *b = T::zero();
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NnError> {
        let ishape = input.shape();
        if ishape.features() != self.input {
            return Err(shape_err(
                "fc",
                format!("{} features", self.input),
                ishape,
            ));
        }
        let oshape = Shape::new(ishape.n, self.output, 1, 1);
        let mut out = Tensor::zeros(oshape);
        let weights = &self.weights;
        let bias = &self.bias;
        let input_len = self.input;
        let idata = input.data();
        out.data_mut()
            .par_chunks_mut(self.output)
            .enumerate()
            .for_each(|(n, orow)| {
                let x = &idata[n * input_len..(n + 1) * input_len];
                for (o, out_v) in orow.iter_mut().enumerate() {
                    let wrow = &weights[o * input_len..(o + 1) * input_len];
                    let mut acc = bias[o];
                    for (&w, &xi) in wrow.iter().zip(x) {
                        acc += w * xi;
                    }
                    *out_v = acc;
                }
            });
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or(NnError::BackwardBeforeForward("fc"))?;
        let ishape = input.shape();
        let n_batch = ishape.n;
        if grad_out.shape().n != n_batch || grad_out.shape().features() != self.output {
            return Err(shape_err(
                "fc backward",
                format!("({n_batch}, {}, 1, 1)", self.output),
                grad_out.shape(),
            ));
        }
        let input_len = self.input;
        let output_len = self.output;
        let idata = input.data();
        let gdata = grad_out.data();
        let weights = &self.weights;

        let mut grad_in = Tensor::zeros(ishape);
        grad_in
            .data_mut()
            .par_chunks_mut(input_len)
            .enumerate()
            .for_each(|(n, gx)| {
                let grow = &gdata[n * output_len..(n + 1) * output_len];
                for (o, &go) in grow.iter().enumerate() {
                    if go == T::zero() {
                        continue;
                    }
                    let wrow = &weights[o * input_len..(o + 1) * input_len];
                    for (gxi, &w) in gx.iter_mut().zip(wrow) {
                        *gxi += go * w;
                    }
                }
            });

        self.grad_weights
            .par_chunks_mut(input_len)
            .zip(self.grad_bias.par_iter_mut())
            .enumerate()
            .for_each(|(o, (gwrow, gb))| {
                for n in 0..n_batch {
                    let go = gdata[n * output_len + o];
                    *gb += go;
                    if go == T::zero() {
                        continue;
                    }
                    let x = &idata[n * input_len..(n + 1) * input_len];
                    for (gw, &xi) in gwrow.iter_mut().zip(x) {
                        *gw += go * xi;
                    }
                }
            });

        Ok(grad_in)
    }
}

/// Per-channel batch normalization with running statistics for inference.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    shape: Shape,
    normalized: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            momentum: 0.9,
            eps: 1e-5,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let shape = input.shape();
        if shape.c != self.channels {
            return Err(shape_err(
                "batchnorm",
                format!("{} channels", self.channels),
                shape,
            ));
        }
        let plane = shape.h * shape.w;
        let feat = shape.features();
        let m = (shape.n * plane) as f64;
        let mut out = Tensor::zeros(shape);
        let mut normalized = vec![T::zero(); shape.numel()];
        let mut inv_std_c = vec![T::zero(); self.channels];

        for c in 0..self.channels {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0f64;
                    let mut sq = 0.0f64;
                    for n in 0..shape.n {
                        let base = n * feat + c * plane;
                        for &v in &input.data()[base..base + plane] {
                            let v = v.to_f64();
                            sum += v;
                            sq += v * v;
                        }
                    }
                    let mean = sum / m;
                    let var = (sq / m - mean * mean).max(0.0);
                    let mom = self.momentum;
                    self.running_mean[c] = T::from_f64(
                        mom * self.running_mean[c].to_f64() + (1.0 - mom) * mean,
                    );
                    self.running_var[c] =
                        T::from_f64(mom * self.running_var[c].to_f64() + (1.0 - mom) * var);
                    (mean, var)
                }
                Mode::Infer => (self.running_mean[c].to_f64(), self.running_var[c].to_f64()),
            };
            let inv_std = 1.0 / (var + self.eps).sqrt();
            inv_std_c[c] = T::from_f64(inv_std);
            let g = self.gamma[c];
            let b = self.beta[c];
            for n in 0..shape.n {
                let base = n * feat + c * plane;
                for i in base..base + plane {
                    let xhat = T::from_f64((input.data()[i].to_f64() - mean) * inv_std);
                    normalized[i] = xhat;
                    out.data_mut()[i] = g * xhat + b;
                }
            }
        }

        self.cache = Some(BnCache {
            shape,
            normalized,
            inv_std: inv_std_c,
            mode,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(NnError::BackwardBeforeForward("batchnorm"))?;
        let shape = cache.shape;
        if grad_out.shape() != shape {
            return Err(shape_err("batchnorm backward", shape.to_string(), grad_out.shape()));
        }
        let plane = shape.h * shape.w;
        let feat = shape.features();
        let m = T::from_f64((shape.n * plane) as f64);
        let mut grad_in = Tensor::zeros(shape);

        for c in 0..self.channels {
            let g = self.gamma[c];
            let inv_std = cache.inv_std[c];
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for n in 0..shape.n {
                let base = n * feat + c * plane;
                for i in base..base + plane {
                    let dy = grad_out.data()[i];
                    sum_dy += dy;
                    sum_dy_xhat += dy * cache.normalized[i];
                }
            }
            self.grad_beta[c] += sum_dy;
            self.grad_gamma[c] += sum_dy_xhat;

            match cache.mode {
                Mode::Train => {
                    for n in 0..shape.n {
                        let base = n * feat + c * plane;
                        for i in base..base + plane {
                            let dy = grad_out.data()[i];
                            let xhat = cache.normalized[i];
                            grad_in.data_mut()[i] = g * inv_std
                                * (dy - sum_dy / m - xhat * sum_dy_xhat / m);
                        }
                    }
                }
                Mode::Infer => {
                    for n in 0..shape.n {
                        let base = n * feat + c * plane;
                        for i in base..base + plane {
                            grad_in.data_mut()[i] = grad_out.data()[i] * g * inv_std;
                        }
                    }
                }
            }
        }
        Ok(grad_in)
    }
}

/// Inverted dropout; active only in training mode. The last drawn mask is
/// kept so a caller may replay the exact same forward pass (used by the
/// finite-difference gradient checker).
#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub rate: f64,
    mask: Option<(Shape, Vec<T>)>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Self {
        Self { rate, mask: None }
    }

    pub fn forward(
        &mut self,
        input: &Tensor<T>,
        mode: Mode,
        noise: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor<T>, NnError> {
        if mode == Mode::Infer || self.rate == 0.0 {
            self.mask = None;
            return Ok(input.clone());
        }
        let shape = input.shape();
        let mask = match noise {
            Some(rng) => {
                let keep = T::from_f64(1.0 / (1.0 - self.rate));
                let mask: Vec<T> = (0..shape.numel())
                    .map(|_| {
                        if rng.gen::<f64>() < self.rate {
                            T::zero()
                        } else {
                            keep
                        }
                    })
                    .collect();
                self.mask = Some((shape, mask));
                &self.mask.as_ref().unwrap().1
            }
            None => match &self.mask {
                Some((s, m)) if *s == shape => m,
                _ => return Err(NnError::MissingNoiseSource),
            },
        };
        let data = input.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
        Tensor::from_vec(shape, data)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match &self.mask {
            None => Ok(grad_out.clone()),
            Some((shape, mask)) => {
                if grad_out.shape() != *shape {
                    return Err(shape_err("dropout backward", shape.to_string(), grad_out.shape()));
                }
                let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                Tensor::from_vec(*shape, data)
            }
        }
    }
}

/// Numerically stabilized softmax over the feature axis.
#[derive(Debug, Clone)]
pub struct Softmax<T> {
    cached_output: Option<Tensor<T>>,
}

impl<T: Scalar> Softmax<T> {
    pub fn new() -> Self {
        Self {
            cached_output: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NnError> {
        let shape = input.shape();
        let mut out = input.clone();
        let f = shape.features();
        for n in 0..shape.n {
            softmax_row(&mut out.data_mut()[n * f..(n + 1) * f]);
        }
        self.cached_output = Some(out.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let out = self
            .cached_output
            .as_ref()
            .ok_or(NnError::BackwardBeforeForward("softmax"))?;
        let shape = out.shape();
        if grad_out.shape() != shape {
            return Err(shape_err("softmax backward", shape.to_string(), grad_out.shape()));
        }
        let f = shape.features();
        let mut grad_in = Tensor::zeros(shape);
        for n in 0..shape.n {
            let p = &out.data()[n * f..(n + 1) * f];
            let g = &grad_out.data()[n * f..(n + 1) * f];
            let dot: T = p.iter().zip(g).map(|(&pi, &gi)| pi * gi).sum();
            for (i, gi) in grad_in.data_mut()[n * f..(n + 1) * f].iter_mut().enumerate() {
                *gi = p[i] * (g[i] - dot);
            }
        }
        Ok(grad_in)
    }
}

/// In-place stable softmax of one row.
pub fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Variational latent block: two parallel fully connected heads produce
/// the posterior mean and log-variance; the output is a reparameterized
/// sample in training mode and the mean in inference mode.
#[derive(Debug, Clone)]
pub struct VaeLatent<T> {
    pub mean_head: Fc<T>,
    pub logvar_head: Fc<T>,
    /// Stability clamp applied to the log-variance; `None` disables.
    pub logvar_clamp: Option<f64>,
    cache: Option<VaeCache<T>>,
    pending_kl_grad: Option<(Vec<T>, Vec<T>)>,
}

#[derive(Debug, Clone)]
struct VaeCache<T> {
    mean: Tensor<T>,
    logvar: Tensor<T>,
    eps: Vec<T>,
    sampled: bool,
}

impl<T: Scalar> VaeLatent<T> {
    pub fn new(input: usize, latent: usize) -> Self {
        Self {
            mean_head: Fc::new(input, latent),
            logvar_head: Fc::new(input, latent),
            logvar_clamp: Some(10.0),
            cache: None,
            pending_kl_grad: None,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.mean_head.output
    }

    pub fn init_kaiming(&mut self, rng: &mut ChaCha8Rng) {
        self.mean_head.init_kaiming(rng);
        self.logvar_head.init_kaiming(rng);
    }

    /// Posterior statistics from the last forward pass.
    pub fn posterior(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.cache.as_ref().map(|c| (&c.mean, &c.logvar))
    }

    /// Inject the KL term's gradients with respect to (mean, logvar); they
    /// are added to the data-path gradients at the next backward call.
    pub fn set_kl_grad(&mut self, d_mean: Vec<T>, d_logvar: Vec<T>) {
        self.pending_kl_grad = Some((d_mean, d_logvar));
    }

    pub fn forward(
        &mut self,
        input: &Tensor<T>,
        mode: Mode,
        noise: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor<T>, NnError> {
        let mean = self.mean_head.forward(input, mode)?;
        let mut logvar = self.logvar_head.forward(input, mode)?;
        if let Some(c) = self.logvar_clamp {
            let (lo, hi) = (T::from_f64(-c), T::from_f64(c));
            for v in logvar.data_mut() {
                *v = v.max(lo).min(hi);
            }
        }

        let (out, eps, sampled) = match mode {
            Mode::Infer => (mean.clone(), vec![T::zero(); mean.numel()], false),
            Mode::Train => {
                let eps: Vec<T> = match noise {
                    Some(rng) => (0..mean.numel()).map(|_| standard_normal(rng)).collect(),
                    None => match &self.cache {
                        Some(c) if c.sampled && c.eps.len() == mean.numel() => c.eps.clone(),
                        _ => return Err(NnError::MissingNoiseSource),
                    },
                };
                let mut out = mean.clone();
                let half = T::from_f64(0.5);
                for ((o, &lv), &e) in out.data_mut().iter_mut().zip(logvar.data()).zip(&eps) {
                    *o += (lv * half).exp() * e;
                }
                (out, eps, true)
            }
        };
        self.cache = Some(VaeCache {
            mean,
            logvar,
            eps,
            sampled,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(NnError::BackwardBeforeForward("vae_latent"))?;
        let shape = cache.mean.shape();
        if grad_out.shape() != shape {
            return Err(shape_err("vae backward", shape.to_string(), grad_out.shape()));
        }

        let half = T::from_f64(0.5);
        let mut d_mean = grad_out.clone();
        let mut d_logvar = Tensor::zeros(shape);
        if cache.sampled {
            for ((dl, &go), (&lv, &e)) in d_logvar
                .data_mut()
                .iter_mut()
                .zip(grad_out.data())
                .zip(cache.logvar.data().iter().zip(&cache.eps))
            {
                // dz/dlogvar = 0.5 * exp(logvar/2) * eps
                *dl = go * half * (lv * half).exp() * e;
            }
        }
        if let Some((kl_mean, kl_logvar)) = self.pending_kl_grad.take() {
            for (d, k) in d_mean.data_mut().iter_mut().zip(kl_mean) {
                *d += k;
            }
            for (d, k) in d_logvar.data_mut().iter_mut().zip(kl_logvar) {
                *d += k;
            }
        }

        let gx_mean = self.mean_head.backward(&d_mean)?;
        let gx_logvar = self.logvar_head.backward(&d_logvar)?;
        let mut grad_in = gx_mean;
        for (a, &b) in grad_in.data_mut().iter_mut().zip(gx_logvar.data()) {
            *a += b;
        }
        Ok(grad_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn tensor(shape: Shape, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv_with_centered_delta_kernel_is_identity() {
        let mut conv = Conv2d::<f64>::new(1, 1, 5, 2);
        conv.weights[2 * 5 + 2] = 1.0;
        let input = tensor(
            Shape::new(1, 1, 4, 4),
            (0..16).map(|v| v as f64 * 0.3 - 1.0).collect(),
        );
        let out = conv.forward(&input, Mode::Train).unwrap();
        assert_eq!(out.shape(), input.shape());
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv_box_kernel_sums_interior_to_25() {
        let mut conv = Conv2d::<f64>::new(1, 1, 5, 2);
        for w in &mut conv.weights {
            *w = 1.0;
        }
        let input = tensor(Shape::new(1, 1, 8, 8), vec![1.0; 64]);
        let out = conv.forward(&input, Mode::Train).unwrap();
        for y in 2..6 {
            for x in 2..6 {
                assert_eq!(out.data()[y * 8 + x], 25.0);
            }
        }
        // Border pixels see fewer taps.
        assert_eq!(out.data()[0], 9.0);
    }

    /// Brute-force reference with the same accumulation order as the
    /// production path (filter, channel, ky, kx, rows).
    fn conv_reference(
        input: &Tensor<f64>,
        weights: &[f64],
        bias: &[f64],
        cin: usize,
        fil: usize,
        k: usize,
        p: usize,
    ) -> Tensor<f64> {
        let s = input.shape();
        let (h, w) = (s.h, s.w);
        let mut out = Tensor::zeros(Shape::new(s.n, fil, h, w));
        for n in 0..s.n {
            for fo in 0..fil {
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = bias[fo];
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = y as isize + ky as isize - p as isize;
                                    let ix = x as isize + kx as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let iv = input.data()
                                        [((n * cin + ci) * h + iy as usize) * w + ix as usize];
                                    let wv = weights[((fo * cin + ci) * k + ky) * k + kx];
                                    acc += wv * iv;
                                }
                            }
                        }
                        out.data_mut()[((n * fil + fo) * h + y) * w + x] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_six_loop_reference() {
        let mut rng = stream(3, Domain::Test, 10);
        let mut conv = Conv2d::<f64>::new(1, 2, 5, 2);
        conv.init_kaiming(&mut rng);
        for b in &mut conv.bias {
            *b = 0.123;
        }
        let input = tensor(
            Shape::new(1, 1, 8, 8),
            (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let got = conv.forward(&input, Mode::Train).unwrap();
        let want = conv_reference(&input, &conv.weights, &conv.bias, 1, 2, 5, 2);
        for (g, w) in got.data().iter().zip(want.data()) {
            let diff = (g - w).abs();
            assert!(diff < 1e-12, "conv mismatch {g} vs {w}");
        }
    }

    #[test]
    fn maxpool_of_constant_is_constant_at_half_resolution() {
        let mut pool = MaxPool::<f64>::new(2);
        let input = tensor(Shape::new(1, 1, 4, 4), vec![2.5; 16]);
        let out = pool.forward(&input, Mode::Train).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 2, 2));
        assert!(out.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let mut pool = MaxPool::<f64>::new(2);
        let input = tensor(Shape::new(1, 1, 3, 4), vec![0.0; 12]);
        assert!(matches!(
            pool.forward(&input, Mode::Train),
            Err(NnError::OddSpatialDims { .. })
        ));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut sm = Softmax::<f64>::new();
        let input = tensor(Shape::new(1, 3, 1, 1), vec![0.0; 3]);
        let out = sm.forward(&input, Mode::Infer).unwrap();
        for &v in out.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_normalizes_batch_statistics() {
        // Two samples with per-channel mean 3 and biased variance 4.
        let mut bn = BatchNorm::<f64>::new(1);
        let input = tensor(Shape::new(2, 1, 1, 1), vec![1.0, 5.0]);
        let out = bn.forward(&input, Mode::Train).unwrap();
        let mean: f64 = out.data().iter().sum::<f64>() / 2.0;
        let var: f64 = out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0;
        assert!(mean.abs() < 1e-9, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
    }

    #[test]
    fn dropout_is_identity_in_inference() {
        let mut drop = Dropout::<f64>::new(0.5);
        let input = tensor(Shape::new(1, 4, 1, 1), vec![1.0, -2.0, 3.0, 0.5]);
        let out = drop.forward(&input, Mode::Infer, None).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn dropout_train_mode_scales_survivors() {
        let mut drop = Dropout::<f64>::new(0.5);
        let input = tensor(Shape::new(1, 1000, 1, 1), vec![1.0; 1000]);
        let mut rng = stream(1, Domain::Test, 2);
        let out = drop.forward(&input, Mode::Train, Some(&mut rng)).unwrap();
        let kept = out.data().iter().filter(|&&v| v != 0.0).count();
        assert!((300..700).contains(&kept), "kept {kept}");
        for &v in out.data() {
            assert!(v == 0.0 || (v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vae_latent_mean_mode_is_deterministic() {
        let mut rng = stream(9, Domain::Test, 3);
        let mut vae = VaeLatent::<f64>::new(6, 2);
        vae.init_kaiming(&mut rng);
        let input = tensor(Shape::new(1, 6, 1, 1), (0..6).map(|v| v as f64 * 0.1).collect());
        let a = vae.forward(&input, Mode::Infer, None).unwrap();
        let b = vae.forward(&input, Mode::Infer, None).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn reparameterized_samples_match_posterior_moments() {
        // Fixed mean and logvar; over many draws the sample mean/std must
        // approach (mean, exp(logvar/2)) within 5 percent.
        let mut vae = VaeLatent::<f64>::new(1, 1);
        vae.logvar_clamp = None;
        // mean head: w=0, b=0.8 ; logvar head: w=0, b=-0.4
        vae.mean_head.bias[0] = 0.8;
        vae.logvar_head.bias[0] = -0.4;
        let input = tensor(Shape::new(1, 1, 1, 1), vec![0.0]);
        let mut rng = stream(4, Domain::Test, 4);
        let n = 10_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let z = vae.forward(&input, Mode::Train, Some(&mut rng)).unwrap().data()[0];
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).sqrt();
        let want_std = (-0.4f64 / 2.0).exp();
        assert!((mean - 0.8).abs() / 0.8 < 0.05, "mean {mean}");
        assert!((std - want_std).abs() / want_std < 0.05, "std {std}");
    }
}
