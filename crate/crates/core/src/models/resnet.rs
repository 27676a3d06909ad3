//! 2-D ResNet50-style image feature extractor.

use crate::error::{Error, Result};
use crate::models::layers::{BatchNorm, Builder, Conv, Ctx};
use crate::models::profile::ScaleProfile;
use crate::ndcore::{ConvGeom, PoolGeom, Var};

/// Tap name of the last convolution of the final stage.
pub const LAST_CONV_TAP: &str = "us.last_conv";
/// Tap name of the final stage output (before global pooling).
pub const FEATURE_MAP_TAP: &str = "us.features";

pub struct Bottleneck {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    conv3: Conv,
    bn3: BatchNorm,
    projection: Option<(Conv, BatchNorm)>,
}

impl Bottleneck {
    /// `projection` adds the 1x1 shortcut h(x) used by downsampling blocks.
    pub fn new(b: &mut Builder, name: &str, cin: usize, mid: usize, cout: usize, stride: usize, projection: bool) -> Result<Self> {
        let projection = if projection {
            Some((
                b.conv(&format!("{name}.downsample.conv"), cin, cout, ConvGeom::cubic(2, 1, stride, 0), false)?,
                b.batch_norm(&format!("{name}.downsample.norm"), cout)?,
            ))
        } else {
            None
        };
        if projection.is_none() && (cin != cout || stride != 1) {
            return Err(Error::invalid("bottleneck", "identity shortcut needs matching shape"));
        }
        Ok(Bottleneck {
            conv1: b.conv(&format!("{name}.conv1"), cin, mid, ConvGeom::cubic(2, 1, 1, 0), false)?,
            bn1: b.batch_norm(&format!("{name}.norm1"), mid)?,
            conv2: b.conv(&format!("{name}.conv2"), mid, mid, ConvGeom::cubic(2, 3, stride, 1), false)?,
            bn2: b.batch_norm(&format!("{name}.norm2"), mid)?,
            conv3: b.conv(&format!("{name}.conv3"), mid, cout, ConvGeom::cubic(2, 1, 1, 0), false)?,
            bn3: b.batch_norm(&format!("{name}.norm3"), cout)?,
            projection,
        })
    }

    /// `ReLU(F(x) + h(x))`; also returns the conv3 output for Grad-CAM.
    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<(Var, Var)> {
        let h = self.conv1.forward(cx, x)?;
        let h = self.bn1.relu(cx, h)?;
        let h = self.conv2.forward(cx, h)?;
        let h = self.bn2.relu(cx, h)?;
        let last_conv = self.conv3.forward(cx, h)?;
        let h = self.bn3.forward(cx, last_conv)?;
        let shortcut = match &self.projection {
            Some((conv, bn)) => {
                let s = conv.forward(cx, x)?;
                bn.forward(cx, s)?
            }
            None => x,
        };
        let y = cx.tape.add(h, shortcut)?;
        Ok((cx.tape.relu(y), last_conv))
    }
}

pub struct ResNet50 {
    stem: Conv,
    stem_bn: BatchNorm,
    stages: Vec<Vec<Bottleneck>>,
}

impl ResNet50 {
    pub fn new(b: &mut Builder, name: &str, p: &ScaleProfile) -> Result<Self> {
        let mut c = p.resnet_stem_channels;
        let stem = b.conv(&format!("{name}.stem.conv"), 3, c, ConvGeom::cubic(2, 7, 2, 3), false)?;
        let stem_bn = b.batch_norm(&format!("{name}.stem.norm"), c)?;
        let mut stages = Vec::new();
        for (s, &count) in p.resnet_block_counts.iter().enumerate() {
            let mid = p.resnet_base_width << s;
            let out = mid * p.resnet_expansion;
            // Stage 1 keeps resolution (projection only changes channels).
            let stride = if s == 0 { 1 } else { 2 };
            let mut blocks = Vec::with_capacity(count);
            for i in 0..count {
                let bname = format!("{name}.stage{}.block{i}", s + 1);
                blocks.push(if i == 0 {
                    Bottleneck::new(b, &bname, c, mid, out, stride, true)?
                } else {
                    Bottleneck::new(b, &bname, out, mid, out, 1, false)?
                });
            }
            c = out;
            stages.push(blocks);
        }
        Ok(ResNet50 { stem, stem_bn, stages })
    }

    /// `[B, 3, H, W]` image to the final stage map `[B, C, H/32, W/32]`.
    pub fn feature_map(&self, cx: &mut Ctx, image: Var) -> Result<Var> {
        let h = self.stem.forward(cx, image)?;
        let h = self.stem_bn.relu(cx, h)?;
        let mut h = cx.tape.maxpool(h, PoolGeom::cubic(2, 3, 2, 1))?;
        let mut last_conv = None;
        for (s, stage) in self.stages.iter().enumerate() {
            for block in stage {
                let (out, lc) = block.forward(cx, h)?;
                h = out;
                last_conv = Some(lc);
            }
            cx.tap(format!("us.stage{}", s + 1), h);
        }
        if let Some(lc) = last_conv {
            cx.tap(LAST_CONV_TAP, lc);
        }
        cx.tap(FEATURE_MAP_TAP, h);
        Ok(h)
    }

    /// `[B, 3, H, W]` image to `[B, C]` pooled features.
    pub fn forward(&self, cx: &mut Ctx, image: Var) -> Result<Var> {
        let h = self.feature_map(cx, image)?;
        cx.tape.global_avgpool(h)
    }
}
