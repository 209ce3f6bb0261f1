use candle_core::{Tensor, Var, D};

use super::depthwise::depthwise_conv2d;
use super::params::{Init, ParamKind, ParamStore};
use super::ModelError;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// How batch normalization treats statistics on a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Use running statistics.
    Eval,
    /// Normalize with batch statistics and update running ones by momentum.
    Train,
    /// Normalize with batch statistics and store them as the running ones.
    Calibrate,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    weight: Var,
    bias: Var,
    running_mean: Var,
    running_var: Var,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, init: &Init, prefix: &str, c: usize) -> Result<Self, ModelError> {
        Ok(BatchNorm {
            weight: store.insert(&format!("{prefix}.weight"), init.constant(&[c], 1.0)?, ParamKind::Weight)?,
            bias: store.insert(&format!("{prefix}.bias"), init.constant(&[c], 0.0)?, ParamKind::Weight)?,
            running_mean: store.insert(&format!("{prefix}.running_mean"), init.constant(&[c], 0.0)?, ParamKind::Buffer)?,
            running_var: store.insert(&format!("{prefix}.running_var"), init.constant(&[c], 1.0)?, ParamKind::Buffer)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: BnMode, grad: bool) -> Result<Tensor, ModelError> {
        let c = x.dim(1)?;
        let (w, b) = if grad {
            (self.weight.as_tensor().clone(), self.bias.as_tensor().clone())
        } else {
            (self.weight.as_detached_tensor(), self.bias.as_detached_tensor())
        };
        let (mean, var) = match mode {
            BnMode::Eval => (self.running_mean.as_detached_tensor(), self.running_var.as_detached_tensor()),
            BnMode::Train | BnMode::Calibrate => {
                let flat = x.transpose(0, 1)?.flatten_from(1)?;
                let m = flat.dim(1)?;
                let mean = flat.mean(D::Minus1)?;
                let centered = flat.broadcast_sub(&mean.unsqueeze(1)?)?;
                let var = centered.sqr()?.mean(D::Minus1)?;
                let unbiased = (var.detach() * (m as f64 / (m.max(2) - 1) as f64))?;
                if mode == BnMode::Train {
                    let rm = ((self.running_mean.as_tensor() * (1.0 - BN_MOMENTUM))? + (mean.detach() * BN_MOMENTUM)?)?;
                    let rv = ((self.running_var.as_tensor() * (1.0 - BN_MOMENTUM))? + (unbiased * BN_MOMENTUM)?)?;
                    self.running_mean.set(&rm)?;
                    self.running_var.set(&rv)?;
                } else {
                    self.running_mean.set(&mean.detach())?;
                    self.running_var.set(&unbiased)?;
                }
                (mean, var)
            }
        };
        let scale = (w / (var + BN_EPS)?.sqrt()?)?;
        let shift = (b - (&mean * &scale)?)?;
        let scale = scale.reshape((1, c, 1, 1))?;
        let shift = shift.reshape((1, c, 1, 1))?;
        Ok(x.broadcast_mul(&scale)?.broadcast_add(&shift)?)
    }
}

/// Convolution followed by batch norm and optional ReLU6.
#[derive(Debug, Clone)]
pub struct ConvBn {
    weight: Var,
    bn: BatchNorm,
    stride: usize,
    padding: usize,
    depthwise: bool,
    relu6: bool,
}

pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub depthwise: bool,
    pub relu6: bool,
}

impl ConvBn {
    /// `conv_name` and `bn_name` are full tensor prefixes, since torchvision
    /// nests them differently in stems, blocks and projections.
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        conv_name: &str,
        bn_name: &str,
        spec: ConvSpec,
    ) -> Result<Self, ModelError> {
        let shape = if spec.depthwise {
            vec![spec.c_out, 1, spec.kernel, spec.kernel]
        } else {
            vec![spec.c_out, spec.c_in, spec.kernel, spec.kernel]
        };
        let weight = store.insert(&format!("{conv_name}.weight"), init.kaiming_fan_out(&shape)?, ParamKind::Weight)?;
        let bn = BatchNorm::new(store, init, bn_name, spec.c_out)?;
        Ok(ConvBn {
            weight,
            bn,
            stride: spec.stride,
            padding: spec.kernel / 2,
            depthwise: spec.depthwise,
            relu6: spec.relu6,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: BnMode, grad: bool) -> Result<Tensor, ModelError> {
        let w = if grad { self.weight.as_tensor().clone() } else { self.weight.as_detached_tensor() };
        let y = if self.depthwise {
            depthwise_conv2d(x, &w, self.stride, self.padding)?
        } else {
            x.conv2d(&w, self.padding, self.stride, 1, 1)?
        };
        let y = self.bn.forward(&y, mode, grad)?;
        Ok(if self.relu6 { y.clamp(0f32, 6f32)? } else { y })
    }
}

/// Expand (1x1), depthwise (3x3), linear projection (1x1), with a skip
/// connection when input and output shapes agree.
#[derive(Debug, Clone)]
pub struct InvertedResidual {
    expand: Option<ConvBn>,
    depthwise: ConvBn,
    project: ConvBn,
    residual: bool,
}

impl InvertedResidual {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        expand_ratio: usize,
    ) -> Result<Self, ModelError> {
        let hidden = c_in * expand_ratio;
        let mut idx = 0;
        let expand = if expand_ratio != 1 {
            let conv = ConvBn::new(
                store,
                init,
                &format!("{prefix}.conv.0.0"),
                &format!("{prefix}.conv.0.1"),
                ConvSpec { c_in, c_out: hidden, kernel: 1, stride: 1, depthwise: false, relu6: true },
            )?;
            idx += 1;
            Some(conv)
        } else {
            None
        };
        let depthwise = ConvBn::new(
            store,
            init,
            &format!("{prefix}.conv.{idx}.0"),
            &format!("{prefix}.conv.{idx}.1"),
            ConvSpec { c_in: hidden, c_out: hidden, kernel: 3, stride, depthwise: true, relu6: true },
        )?;
        let project = ConvBn::new(
            store,
            init,
            &format!("{prefix}.conv.{}", idx + 1),
            &format!("{prefix}.conv.{}", idx + 2),
            ConvSpec { c_in: hidden, c_out, kernel: 1, stride: 1, depthwise: false, relu6: false },
        )?;
        Ok(InvertedResidual { expand, depthwise, project, residual: stride == 1 && c_in == c_out })
    }

    pub fn forward(&self, x: &Tensor, mode: BnMode, grad: bool) -> Result<Tensor, ModelError> {
        let mut y = match &self.expand {
            Some(e) => e.forward(x, mode, grad)?,
            None => x.clone(),
        };
        y = self.depthwise.forward(&y, mode, grad)?;
        y = self.project.forward(&y, mode, grad)?;
        Ok(if self.residual { (y + x)? } else { y })
    }
}

/// Fully connected layer stored as (out, in) like torch.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, c_in: usize, c_out: usize) -> Result<Self, ModelError> {
        let weight = init.uniform_fan_in(&[c_out, c_in], c_in)?;
        let bias = init.uniform_fan_in(&[c_out], c_in)?;
        Ok(Linear {
            weight: store.insert(&format!("{prefix}.weight"), weight, ParamKind::Weight)?,
            bias: store.insert(&format!("{prefix}.bias"), bias, ParamKind::Weight)?,
        })
    }

    pub fn forward(&self, x: &Tensor, grad: bool) -> Result<Tensor, ModelError> {
        let (w, b) = if grad {
            (self.weight.as_tensor().clone(), self.bias.as_tensor().clone())
        } else {
            (self.weight.as_detached_tensor(), self.bias.as_detached_tensor())
        };
        Ok(x.matmul(&w.t()?)?.broadcast_add(&b)?)
    }
}
