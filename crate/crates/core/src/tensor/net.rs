use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conv::{col2im_accumulate, forward_cols, gemm, im2col};
use super::{Grads, ParamSet, Tensor4};
use crate::error::{Error, Result};
use crate::noise::gaussian_fill;
use crate::par;

/// Shape of a plain conv stack: `layers` convolutions with ReLU between them,
/// optionally adding a slice of the input to the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub hidden: usize,
    pub layers: usize,
    pub kernel: usize,
    /// First input channel of the slice added to the output, if residual.
    pub residual_from: Option<usize>,
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.kernel % 2 == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidParam(format!("bad network spec {self:?}")));
        }
        if self.layers > 1 && self.hidden == 0 {
            return Err(Error::InvalidParam("hidden width must be positive".into()));
        }
        if let Some(r) = self.residual_from {
            if r + self.out_channels > self.in_channels {
                return Err(Error::InvalidParam(format!(
                    "residual slice {r}..{} exceeds {} input channels",
                    r + self.out_channels,
                    self.in_channels
                )));
            }
        }
        Ok(())
    }

    fn layer_io(&self, l: usize) -> (usize, usize) {
        let cin = if l == 0 { self.in_channels } else { self.hidden };
        let cout = if l + 1 == self.layers { self.out_channels } else { self.hidden };
        (cin, cout)
    }

    pub fn weight_name(l: usize) -> String {
        format!("conv{l:02}.weight")
    }

    pub fn bias_name(l: usize) -> String {
        format!("conv{l:02}.bias")
    }

    /// Recovers the layout from checkpointed parameter shapes.
    pub fn infer(params: &ParamSet, residual_from: Option<usize>) -> Result<Self> {
        let mut layers = 0;
        while params.get(&Self::weight_name(layers)).is_some() {
            layers += 1;
        }
        if layers == 0 {
            return Err(Error::InvalidParam("checkpoint has no conv00.weight".into()));
        }
        let first = params.expect(&Self::weight_name(0))?.shape();
        let last = params.expect(&Self::weight_name(layers - 1))?.shape();
        let spec = Self {
            in_channels: first[1],
            out_channels: last[0],
            hidden: if layers > 1 { first[0] } else { 0 },
            layers,
            kernel: first[2],
            residual_from,
        };
        spec.validate()?;
        for l in 0..layers {
            let (cin, cout) = spec.layer_io(l);
            let w = params.expect(&Self::weight_name(l))?;
            let b = params.expect(&Self::bias_name(l))?;
            if w.shape() != [cout, cin, spec.kernel, spec.kernel] || b.shape() != [cout, 1, 1, 1] {
                return Err(Error::shape("NetSpec::infer", format!("layer {l} [{cout}, {cin}, k, k]"), format!("{:?}", w.shape())));
            }
        }
        Ok(spec)
    }
}

/// A conv stack with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNet {
    spec: NetSpec,
    params: ParamSet,
}

/// Per-sample layer inputs saved by [`ConvNet::forward_train`].
pub struct NetCache {
    shape: [usize; 4],
    samples: Vec<Vec<Vec<f64>>>,
}

impl ConvNet {
    /// He-normal initialization; the last layer of a residual net starts at
    /// zero so the untrained net is the identity on its residual slice.
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for l in 0..spec.layers {
            let (cin, cout) = spec.layer_io(l);
            let shape = [cout, cin, spec.kernel, spec.kernel];
            let mut w = Tensor4::zeros(shape);
            let last_residual = l + 1 == spec.layers && spec.residual_from.is_some();
            if !last_residual {
                let std = (2.0 / (cin * spec.kernel * spec.kernel) as f64).sqrt();
                gaussian_fill(&mut rng, w.data_mut(), std);
            }
            params.insert(NetSpec::weight_name(l), w);
            params.insert(NetSpec::bias_name(l), Tensor4::zeros([cout, 1, 1, 1]));
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(params: ParamSet, residual_from: Option<usize>) -> Result<Self> {
        let spec = NetSpec::infer(&params, residual_from)?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Sets every weight and bias of the body to zero.
    pub fn zero_body(&mut self) {
        let names: Vec<String> = self.params.names().map(str::to_owned).collect();
        for n in names {
            if let Some(t) = self.params.get_mut(&n) {
                t.data_mut().fill(0.0);
            }
        }
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.shape()[1] != self.spec.in_channels {
            return Err(Error::shape(
                "ConvNet",
                format!("{} input channels", self.spec.in_channels),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let [n, _, h, w] = x.shape();
        let outs = par::map_range(n, |i| self.forward_sample(x.sample(i), h, w, None));
        Tensor4::from_vec([n, self.spec.out_channels, h, w], outs.concat())
    }

    /// Forward pass that keeps what [`ConvNet::backward`] needs.
    pub fn forward_train(&self, x: &Tensor4) -> Result<(Tensor4, NetCache)> {
        self.check_input(x)?;
        let [n, _, h, w] = x.shape();
        let results = par::map_range(n, |i| {
            let mut cache = Vec::with_capacity(self.spec.layers);
            let out = self.forward_sample(x.sample(i), h, w, Some(&mut cache));
            (out, cache)
        });
        let mut outs = Vec::with_capacity(n * self.spec.out_channels * h * w);
        let mut samples = Vec::with_capacity(n);
        for (o, c) in results {
            outs.extend_from_slice(&o);
            samples.push(c);
        }
        Ok((
            Tensor4::from_vec([n, self.spec.out_channels, h, w], outs)?,
            NetCache { shape: x.shape(), samples },
        ))
    }

    fn forward_sample(&self, x: &[f64], h: usize, w: usize, mut cache: Option<&mut Vec<Vec<f64>>>) -> Vec<f64> {
        let hw = h * w;
        let k = self.spec.kernel;
        let mut cur = x.to_vec();
        for l in 0..self.spec.layers {
            let (cin, cout) = self.spec.layer_io(l);
            let wt = self.params.get(&NetSpec::weight_name(l)).expect("validated");
            let b = self.params.get(&NetSpec::bias_name(l)).expect("validated");
            let cols = im2col(&cur, cin, h, w, k);
            let mut out = vec![0.0; cout * hw];
            forward_cols(&cols, cin * k * k, hw, wt.data(), Some(b.data()), &mut out);
            if l + 1 < self.spec.layers {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let prev = std::mem::replace(&mut cur, out);
            if let Some(c) = cache.as_deref_mut() {
                c.push(prev);
            }
        }
        if let Some(r) = self.spec.residual_from {
            let src = &x[r * hw..(r + self.spec.out_channels) * hw];
            cur.iter_mut().zip(src).for_each(|(o, s)| *o += s);
        }
        cur
    }

    /// Parameter gradients for the batch, summed over samples in order.
    pub fn backward(&self, cache: &NetCache, grad_out: &Tensor4) -> Result<Grads> {
        let [n, _, h, w] = cache.shape;
        if grad_out.shape() != [n, self.spec.out_channels, h, w] {
            return Err(Error::shape(
                "ConvNet::backward",
                format!("{:?}", [n, self.spec.out_channels, h, w]),
                format!("{:?}", grad_out.shape()),
            ));
        }
        let per = par::map_range(n, |i| self.backward_sample(&cache.samples[i], grad_out.sample(i), h, w));
        let mut total = Grads::zeros_like(&self.params);
        for g in &per {
            total.accumulate(g)?;
        }
        Ok(total)
    }

    fn backward_sample(&self, inputs: &[Vec<f64>], grad_out: &[f64], h: usize, w: usize) -> Grads {
        let hw = h * w;
        let k = self.spec.kernel;
        let mut grads = Grads::new();
        let mut g = grad_out.to_vec();
        for l in (0..self.spec.layers).rev() {
            let (cin, cout) = self.spec.layer_io(l);
            if l + 1 < self.spec.layers {
                // inputs[l + 1] is this layer's post-ReLU output.
                g.iter_mut()
                    .zip(&inputs[l + 1])
                    .for_each(|(gv, &a)| if a <= 0.0 { *gv = 0.0 });
            }
            let ckk = cin * k * k;
            let cols = im2col(&inputs[l], cin, h, w, k);
            let mut dw = vec![0.0; cout * ckk];
            gemm(cout, hw, ckk, 1.0, &g, false, &cols, true, 0.0, &mut dw);
            let db: Vec<f64> = (0..cout).map(|o| g[o * hw..(o + 1) * hw].iter().sum()).collect();
            if l > 0 {
                let wt = self.params.get(&NetSpec::weight_name(l)).expect("validated");
                let mut dcols = cols;
                gemm(ckk, cout, hw, 1.0, wt.data(), true, &g, false, 0.0, &mut dcols);
                let mut dx = vec![0.0; cin * hw];
                col2im_accumulate(&dcols, cin, h, w, k, &mut dx);
                g = dx;
            }
            grads.insert(
                NetSpec::weight_name(l),
                Tensor4::from_vec([cout, cin, k, k], dw).expect("sized"),
            );
            grads.insert(NetSpec::bias_name(l), Tensor4::from_vec([cout, 1, 1, 1], db).expect("sized"));
        }
        grads
    }
}
