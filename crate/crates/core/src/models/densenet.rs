//! 3-D DenseNet121-style local feature extractor.

use crate::error::{Error, Result};
use crate::models::layers::{BatchNorm, Builder, Conv, Ctx, Linear};
use crate::models::profile::ScaleProfile;
use crate::ndcore::{ConvGeom, PoolGeom, Var};

/// Tap name of the final 3x3x3 convolution of the last dense layer.
pub const LAST_CONV_TAP: &str = "mri.dense.last_conv";
/// Tap name of the final normalised feature map (before global pooling).
pub const FEATURE_MAP_TAP: &str = "mri.dense.features";

pub struct DenseLayer {
    bn1: BatchNorm,
    conv1: Conv,
    bn2: BatchNorm,
    conv2: Conv,
}

impl DenseLayer {
    fn new(b: &mut Builder, name: &str, cin: usize, k: usize) -> Result<Self> {
        Ok(DenseLayer {
            bn1: b.batch_norm(&format!("{name}.norm1"), cin)?,
            conv1: b.conv(&format!("{name}.conv1"), cin, 4 * k, ConvGeom::cubic(3, 1, 1, 0), false)?,
            bn2: b.batch_norm(&format!("{name}.norm2"), 4 * k)?,
            conv2: b.conv(&format!("{name}.conv2"), 4 * k, k, ConvGeom::cubic(3, 3, 1, 1), false)?,
        })
    }

    /// BN-ReLU-conv1x1-BN-ReLU-conv3x3; returns the k new feature maps.
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.bn1.relu(cx, x)?;
        let h = self.conv1.forward(cx, h)?;
        let h = self.bn2.relu(cx, h)?;
        self.conv2.forward(cx, h)
    }
}

pub struct DenseBlock {
    layers: Vec<DenseLayer>,
}

impl DenseBlock {
    pub fn new(b: &mut Builder, name: &str, cin: usize, layers: usize, k: usize) -> Result<Self> {
        let layers = (0..layers)
            .map(|i| DenseLayer::new(b, &format!("{name}.layer{}", i + 1), cin + i * k, k))
            .collect::<Result<_>>()?;
        Ok(DenseBlock { layers })
    }

    /// Each layer sees the concatenation of the block input and all earlier
    /// layer outputs; the block returns that full concatenation. The last
    /// layer's new maps are returned as well.
    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<(Var, Option<Var>)> {
        let mut features = x;
        let mut last = None;
        for layer in &self.layers {
            let new = layer.forward(cx, features)?;
            features = cx.tape.concat(&[features, new], 1)?;
            last = Some(new);
        }
        Ok((features, last))
    }
}

pub struct Transition {
    bn: BatchNorm,
    conv: Conv,
}

impl Transition {
    pub fn new(b: &mut Builder, name: &str, cin: usize) -> Result<Self> {
        if cin % 2 != 0 {
            return Err(Error::invalid("transition", format!("odd channel count {cin}")));
        }
        Ok(Transition {
            bn: b.batch_norm(&format!("{name}.norm"), cin)?,
            conv: b.conv(&format!("{name}.conv"), cin, cin / 2, ConvGeom::cubic(3, 1, 1, 0), false)?,
        })
    }

    /// BN-ReLU-conv1x1 (halving channels) then 2x2x2 average pool, stride 2.
    ///
    /// The pool uses ceil mode so that a unit extent survives at small
    /// scales; for even extents this equals the usual floor rule.
    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.bn.relu(cx, x)?;
        let h = self.conv.forward(cx, h)?;
        cx.tape.avgpool(h, PoolGeom::cubic(3, 2, 2, 0).with_ceil_mode(true))
    }
}

pub struct DenseNet3d {
    stem: Conv,
    stem_bn: BatchNorm,
    blocks: Vec<DenseBlock>,
    transitions: Vec<Transition>,
    final_bn: BatchNorm,
    fc: Linear,
}

impl DenseNet3d {
    pub fn new(b: &mut Builder, name: &str, p: &ScaleProfile) -> Result<Self> {
        let k = p.growth_rate;
        let mut c = p.stem_channels;
        let stem = b.conv(&format!("{name}.stem.conv"), 1, c, ConvGeom::cubic(3, 7, 2, 3), false)?;
        let stem_bn = b.batch_norm(&format!("{name}.stem.norm"), c)?;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        let n = p.dense_block_layers.len();
        for (i, &layers) in p.dense_block_layers.iter().enumerate() {
            blocks.push(DenseBlock::new(b, &format!("{name}.block{}", i + 1), c, layers, k)?);
            c += layers * k;
            if i + 1 < n {
                transitions.push(Transition::new(b, &format!("{name}.transition{}", i + 1), c)?);
                c /= 2;
            }
        }
        let final_bn = b.batch_norm(&format!("{name}.final_norm"), c)?;
        let fc = b.linear(&format!("{name}.fc"), c, p.dense_feature_dim)?;
        Ok(DenseNet3d { stem, stem_bn, blocks, transitions, final_bn, fc })
    }

    /// Stem: conv 7 (stride 2, pad 3) - BN - ReLU - max pool 3 (stride 2, pad 1).
    pub fn stem(&self, cx: &mut Ctx, volume: Var) -> Result<Var> {
        let h = self.stem.forward(cx, volume)?;
        let h = self.stem_bn.relu(cx, h)?;
        cx.tape.maxpool(h, PoolGeom::cubic(3, 3, 2, 1))
    }

    /// `[B, 1, H, W, D]` volume to `[B, dense_feature_dim]` local features.
    pub fn forward(&self, cx: &mut Ctx, volume: Var) -> Result<Var> {
        let mut h = self.stem(cx, volume)?;
        cx.tap("mri.dense.stem", h);
        for (i, block) in self.blocks.iter().enumerate() {
            let (out, last) = block.forward(cx, h)?;
            cx.tap(format!("mri.dense.block{}", i + 1), out);
            h = out;
            if i + 1 == self.blocks.len() {
                if let Some(last) = last {
                    cx.tap(LAST_CONV_TAP, last);
                }
            } else {
                h = self.transitions[i].forward(cx, h)?;
            }
        }
        let h = self.final_bn.relu(cx, h)?;
        cx.tap(FEATURE_MAP_TAP, h);
        let pooled = cx.tape.global_avgpool(h)?;
        let f = self.fc.forward(cx, pooled)?;
        Ok(cx.tape.relu(f))
    }
}
