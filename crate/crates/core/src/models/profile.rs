use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every architectural hyperparameter of the three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleProfile {
    pub name: String,
    /// MRI volume extents (H, W, D).
    pub mri_input: [usize; 3],
    /// US image extents (H, W); images carry 3 channels.
    pub us_input: [usize; 2],

    pub stem_channels: usize,
    pub growth_rate: usize,
    pub dense_block_layers: Vec<usize>,
    /// Width of the DenseNet branch output `f_dense`.
    pub dense_feature_dim: usize,

    pub patch_size: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub vit_mlp_hidden: usize,

    pub mri_head_hidden: usize,
    pub mri_dropout: f64,

    pub resnet_stem_channels: usize,
    /// Bottleneck (inner) width of stage 1; doubles each stage.
    pub resnet_base_width: usize,
    pub resnet_expansion: usize,
    pub resnet_block_counts: Vec<usize>,

    pub fusion_hidden: usize,
    pub fusion_dropout: f64,
}

impl ScaleProfile {
    pub fn paper() -> Self {
        ScaleProfile {
            name: "paper".into(),
            mri_input: [128, 128, 64],
            us_input: [224, 224],
            stem_channels: 64,
            growth_rate: 32,
            dense_block_layers: vec![6, 12, 24, 16],
            dense_feature_dim: 128,
            patch_size: 16,
            embed_dim: 768,
            heads: 12,
            encoder_blocks: 12,
            vit_mlp_hidden: 3072,
            mri_head_hidden: 256,
            mri_dropout: 0.5,
            resnet_stem_channels: 64,
            resnet_base_width: 64,
            resnet_expansion: 4,
            resnet_block_counts: vec![3, 4, 6, 3],
            fusion_hidden: 128,
            fusion_dropout: 0.3,
        }
    }

    pub fn micro() -> Self {
        ScaleProfile {
            name: "micro".into(),
            mri_input: [32, 32, 16],
            us_input: [56, 56],
            stem_channels: 8,
            growth_rate: 8,
            dense_block_layers: vec![2, 2, 2, 2],
            dense_feature_dim: 32,
            patch_size: 8,
            embed_dim: 64,
            heads: 4,
            encoder_blocks: 2,
            vit_mlp_hidden: 256,
            mri_head_hidden: 32,
            mri_dropout: 0.5,
            resnet_stem_channels: 8,
            resnet_base_width: 8,
            resnet_expansion: 4,
            resnet_block_counts: vec![1, 1, 1, 1],
            fusion_hidden: 32,
            fusion_dropout: 0.3,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "micro" => Ok(Self::micro()),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected paper or micro)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || self.mri_input.iter().any(|&e| e == 0 || e % p != 0) {
            return Err(Error::Config(format!(
                "MRI extents {:?} must be positive multiples of patch size {p}",
                self.mri_input
            )));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.dense_block_layers.is_empty() || self.resnet_block_counts.is_empty() {
            return Err(Error::Config("block lists must be non-empty".into()));
        }
        if self.resnet_block_counts.contains(&0) {
            return Err(Error::Config("every ResNet stage needs at least one block".into()));
        }
        for (name, p) in [("mri_dropout", self.mri_dropout), ("fusion_dropout", self.fusion_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Number of ViT tokens, `prod(extent / P)`.
    pub fn vit_tokens(&self) -> usize {
        self.mri_input.iter().map(|e| e / self.patch_size).product()
    }

    /// Length of the MRI hybrid feature `[f_dense, f_vit]`.
    pub fn mri_feature_dim(&self) -> usize {
        self.dense_feature_dim + self.embed_dim
    }

    /// Channel count after the final dense block.
    pub fn dense_final_channels(&self) -> usize {
        let mut c = self.stem_channels;
        let n = self.dense_block_layers.len();
        for (i, &l) in self.dense_block_layers.iter().enumerate() {
            c += l * self.growth_rate;
            if i + 1 < n {
                c /= 2;
            }
        }
        c
    }

    /// Length of the ResNet global-pooled feature.
    pub fn us_feature_dim(&self) -> usize {
        (self.resnet_base_width << (self.resnet_block_counts.len() - 1)) * self.resnet_expansion
    }

    pub fn fused_dim(&self) -> usize {
        self.mri_feature_dim() + self.us_feature_dim()
    }
}

/// Serde adapter accepting either a profile name (`"micro"`) or a full
/// inline profile object. Serialises the full profile.
pub mod named_or_inline {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::ScaleProfile;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Name(String),
        Inline(Box<ScaleProfile>),
    }

    pub fn serialize<S: Serializer>(p: &ScaleProfile, s: S) -> Result<S::Ok, S::Error> {
        p.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ScaleProfile, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Name(n) => ScaleProfile::by_name(&n).map_err(serde::de::Error::custom),
            Repr::Inline(p) => Ok(*p),
        }
    }
}
