//! The multi-frame residual denoiser `g_θ`, its training loops, and
//! sequence inference.

mod train;

pub use train::{finetune, pretrain, train_step, FinetuneConfig, FinetuneOutcome, PretrainConfig};

use std::path::Path;

use crate::error::{Error, Result};
use crate::frame_io::{Frame, FrameSequence};
use crate::par;
use crate::tensor::{read_checkpoint, write_checkpoint, ConvNet, NetSpec, ParamSet, Tensor4};

/// Anything that maps a temporal stack of noisy frames to a clean estimate
/// of its center frame.
pub trait Denoise: Sync {
    fn window(&self) -> usize;
    fn denoise_stack(&self, stack: &[&Frame]) -> Result<Frame>;
}

/// Returns the center frame unchanged.
#[derive(Clone, Copy, Debug)]
pub struct IdentityDenoiser {
    window: usize,
}

impl IdentityDenoiser {
    pub fn new(window: usize) -> Self {
        Self { window }
    }
}

impl Denoise for IdentityDenoiser {
    fn window(&self) -> usize {
        self.window
    }

    fn denoise_stack(&self, stack: &[&Frame]) -> Result<Frame> {
        check_window(stack, self.window)?;
        Ok(stack[stack.len() / 2].clone())
    }
}

fn check_window(stack: &[&Frame], window: usize) -> Result<()> {
    if stack.len() != window {
        return Err(Error::shape("denoise_stack", format!("{window} frames"), stack.len()));
    }
    if let Some(f) = stack.iter().find(|f| !f.same_shape(stack[0])) {
        return Err(Error::shape("denoise_stack", format!("{:?}", stack[0].dims()), format!("{:?}", f.dims())));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiserArch {
    /// Temporal window, odd.
    pub window: usize,
    /// Channels per frame.
    pub channels: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        Self {
            window: 5,
            channels: 1,
            hidden: 32,
            layers: 6,
        }
    }
}

impl DenoiserArch {
    fn net_spec(&self) -> NetSpec {
        NetSpec {
            in_channels: self.window * self.channels,
            out_channels: self.channels,
            hidden: self.hidden,
            layers: self.layers,
            kernel: 3,
            residual_from: Some(self.window / 2 * self.channels),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 || self.channels == 0 {
            return Err(Error::InvalidParam(format!("bad denoiser architecture {self:?}")));
        }
        self.net_spec().validate()
    }
}

/// `g_θ(Y) = y_center + f_θ(Y)` on the `[0, 1]` scale.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    arch: DenoiserArch,
    net: ConvNet,
    /// Training loss per optimizer step, in order.
    pub log: Vec<f64>,
}

impl DenoiserModel {
    /// He-initialized body with a zero last layer, so the fresh model
    /// returns its center frame.
    pub fn new(arch: DenoiserArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            net: ConvNet::new(arch.net_spec(), seed)?,
            log: Vec::new(),
        })
    }

    /// Rebuilds a model from checkpointed parameters; the window is the
    /// ratio of input to output channels.
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let spec = NetSpec::infer(&params, None)?;
        if spec.in_channels % spec.out_channels != 0 || (spec.in_channels / spec.out_channels) % 2 == 0 {
            return Err(Error::InvalidParam(format!(
                "{} input / {} output channels is not an odd temporal window",
                spec.in_channels, spec.out_channels
            )));
        }
        let arch = DenoiserArch {
            window: spec.in_channels / spec.out_channels,
            channels: spec.out_channels,
            hidden: spec.hidden,
            layers: spec.layers,
        };
        Ok(Self {
            arch,
            net: ConvNet::from_params(params, arch.net_spec().residual_from)?,
            log: Vec::new(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_params(read_checkpoint(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(path, self.net.params())
    }

    pub fn arch(&self) -> &DenoiserArch {
        &self.arch
    }

    pub fn net(&self) -> &ConvNet {
        &self.net
    }

    pub fn params(&self) -> &ParamSet {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.net.params_mut()
    }

    /// Zeroes the convolutional body; the model becomes the identity.
    pub fn zero_body(&mut self) {
        self.net.zero_body();
    }

    /// `[1, window·C, H, W]` on the `[0, 1]` scale.
    pub fn stack_tensor(&self, stack: &[&Frame]) -> Result<Tensor4> {
        check_window(stack, self.arch.window)?;
        let (c, h, w) = stack[0].dims();
        if c != self.arch.channels {
            return Err(Error::shape("denoise_stack", format!("{} channels", self.arch.channels), c));
        }
        let mut data = Vec::with_capacity(self.arch.window * c * h * w);
        for f in stack {
            data.extend(f.data().iter().map(|v| v / 255.0));
        }
        Tensor4::from_vec([1, self.arch.window * c, h, w], data)
    }
}

impl Denoise for DenoiserModel {
    fn window(&self) -> usize {
        self.arch.window
    }

    /// Forward pass on the `/255` stack, rescaled to `[0, 255]` and clipped.
    fn denoise_stack(&self, stack: &[&Frame]) -> Result<Frame> {
        let x = self.stack_tensor(stack)?;
        let y = self.net.forward(&x)?;
        let [_, c, h, w] = y.shape();
        Frame::new(c, h, w, y.data().iter().map(|v| (v * 255.0).clamp(0.0, 255.0)).collect())
    }
}

/// Denoises every frame with its edge-replicated window.
pub fn denoise_sequence<D: Denoise + ?Sized>(model: &D, seq: &FrameSequence) -> Result<FrameSequence> {
    let frames = par::map_range(seq.len(), |i| model.denoise_stack(&seq.window(i, model.window())));
    let mut out = FrameSequence::new(frames.into_iter().collect::<Result<_>>()?)?;
    out.frame_rate = seq.frame_rate;
    Ok(out)
}
