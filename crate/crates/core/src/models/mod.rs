//! The MRI hybrid (3-D DenseNet + 3-D ViT), the US ResNet50 and the
//! intermediate-fusion network, all parameterised by a [`ScaleProfile`].

pub mod checkpoint;
pub mod densenet;
pub mod layers;
pub mod profile;
pub mod resnet;
pub mod vit;

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{ParamStore, Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use densenet::DenseNet3d;
pub use layers::{Builder, Ctx, Linear, Mode, PendingStats};
pub use profile::ScaleProfile;
pub use resnet::ResNet50;
pub use vit::Vit3d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mri,
    Us,
    Fusion,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Mri, ModelKind::Us, ModelKind::Fusion];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mri => "mri",
            ModelKind::Us => "us",
            ModelKind::Fusion => "fusion",
        }
    }

    pub fn needs_mri(self) -> bool {
        self != ModelKind::Us
    }

    pub fn needs_us(self) -> bool {
        self != ModelKind::Mri
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mri" => Ok(ModelKind::Mri),
            "us" => Ok(ModelKind::Us),
            "fusion" => Ok(ModelKind::Fusion),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// DenseNet and ViT branches side by side; features are `[f_dense, f_vit]`.
pub struct MriBackbone {
    pub dense: DenseNet3d,
    pub vit: Vit3d,
}

impl MriBackbone {
    fn new(b: &mut Builder, p: &ScaleProfile) -> Result<Self> {
        Ok(MriBackbone {
            dense: DenseNet3d::new(b, "mri.dense", p)?,
            vit: Vit3d::new(b, "mri.vit", p)?,
        })
    }

    pub fn forward(&self, cx: &mut Ctx, volume: Var) -> Result<Var> {
        let f_dense = self.dense.forward(cx, volume)?;
        cx.tap("mri.f_dense", f_dense);
        let f_vit = self.vit.forward(cx, volume)?;
        cx.tap("mri.f_vit", f_vit);
        let f = cx.tape.concat(&[f_dense, f_vit], 1)?;
        cx.tap("mri.f_combined", f);
        Ok(f)
    }
}

/// Linear - ReLU - dropout - linear.
pub struct MlpHead {
    pub fc1: Linear,
    pub fc2: Linear,
    pub dropout: f64,
}

impl MlpHead {
    fn new(b: &mut Builder, name: &str, fin: usize, hidden: usize, fout: usize, dropout: f64) -> Result<Self> {
        Ok(MlpHead {
            fc1: b.linear(&format!("{name}.fc1"), fin, hidden)?,
            fc2: b.linear(&format!("{name}.fc2"), hidden, fout)?,
            dropout,
        })
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.fc1.forward(cx, x)?;
        let h = cx.tape.relu(h);
        let h = cx.dropout(h, self.dropout)?;
        self.fc2.forward(cx, h)
    }
}

pub enum Arch {
    Mri { backbone: MriBackbone, head: MlpHead },
    Us { resnet: ResNet50, fc: Linear },
    Fusion { mri: MriBackbone, us: ResNet50, head: MlpHead },
}

/// Inputs for one batch: `[B, 1, H, W, D]` volumes and/or `[B, 3, H, W]` images.
#[derive(Debug, Clone, Default)]
pub struct Input {
    pub mri: Option<Tensor>,
    pub us: Option<Tensor>,
}

/// Tape handles produced by one forward pass.
pub struct Output {
    pub features: Var,
    /// `[B, 2]` class logits (unimodal) or `[B, 1]` pre-sigmoid score (fusion).
    pub logits: Var,
    /// Softmax over the logits, or the sigmoid of the fusion score.
    pub probability: Var,
    pub pending: PendingStats,
    pub taps: Vec<(String, Var)>,
}

impl Output {
    pub fn tap(&self, name: &str) -> Option<Var> {
        self.taps.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

pub struct Model {
    pub kind: ModelKind,
    pub profile: ScaleProfile,
    pub seed: u64,
    pub params: ParamStore<f32>,
    /// Non-trainable state (batch-norm running statistics).
    pub buffers: ParamStore<f32>,
    pub arch: Arch,
}

impl Model {
    /// Build and initialise a model; identical seeds give identical bytes.
    pub fn new(kind: ModelKind, profile: ScaleProfile, seed: u64) -> Result<Self> {
        profile.validate()?;
        let mut b = Builder::new(seed);
        let p = &profile;
        let arch = match kind {
            ModelKind::Mri => Arch::Mri {
                backbone: MriBackbone::new(&mut b, p)?,
                head: MlpHead::new(&mut b, "mri.head", p.mri_feature_dim(), p.mri_head_hidden, 2, p.mri_dropout)?,
            },
            ModelKind::Us => Arch::Us {
                resnet: ResNet50::new(&mut b, "us.resnet", p)?,
                fc: b.linear("us.head.fc", p.us_feature_dim(), 2)?,
            },
            ModelKind::Fusion => Arch::Fusion {
                mri: MriBackbone::new(&mut b, p)?,
                us: ResNet50::new(&mut b, "us.resnet", p)?,
                head: MlpHead::new(&mut b, "fusion.head", p.fused_dim(), p.fusion_hidden, 1, p.fusion_dropout)?,
            },
        };
        Ok(Model {
            kind,
            profile,
            seed,
            params: b.params,
            buffers: b.buffers,
            arch,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.numel()
    }

    fn check_input(&self, t: &Tensor, name: &str, channels: usize, extents: &[usize]) -> Result<()> {
        let s = t.shape();
        let ok = s.len() == 2 + extents.len() && s[0] > 0 && s[1] == channels && &s[2..] == extents;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "model",
                format!("{name} input {s:?}, expected [B, {channels}, {extents:?}]"),
            ))
        }
    }

    /// Run the network on a tape that borrows this model's parameters.
    pub fn forward<'p>(&'p self, tape: &mut Tape<'p, f32>, input: Input, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Output> {
        let p = &self.profile;
        let mri = match (self.kind.needs_mri(), input.mri) {
            (true, Some(t)) => {
                self.check_input(&t, "MRI", 1, &p.mri_input)?;
                Some(tape.constant(t))
            }
            (true, None) => return Err(Error::invalid("model", "MRI volume required")),
            (false, _) => None,
        };
        let us = match (self.kind.needs_us(), input.us) {
            (true, Some(t)) => {
                self.check_input(&t, "US", 3, &p.us_input)?;
                Some(tape.constant(t))
            }
            (true, None) => return Err(Error::invalid("model", "US image required")),
            (false, _) => None,
        };
        let mut cx = Ctx::new(tape, &self.buffers, mode, rng);
        let (features, logits, probability) = match &self.arch {
            Arch::Mri { backbone, head } => {
                let f = backbone.forward(&mut cx, mri.expect("checked"))?;
                let z = head.forward(&mut cx, f)?;
                (f, z, cx.tape.softmax(z))
            }
            Arch::Us { resnet, fc } => {
                let f = resnet.forward(&mut cx, us.expect("checked"))?;
                cx.tap("us.f_us", f);
                let z = fc.forward(&mut cx, f)?;
                (f, z, cx.tape.softmax(z))
            }
            Arch::Fusion { mri: mb, us: ub, head } => {
                let f_mri = mb.forward(&mut cx, mri.expect("checked"))?;
                let f_us = ub.forward(&mut cx, us.expect("checked"))?;
                cx.tap("us.f_us", f_us);
                let f = cx.tape.concat(&[f_mri, f_us], 1)?;
                let z = head.forward(&mut cx, f)?;
                (f, z, cx.tape.sigmoid(z))
            }
        };
        Ok(Output {
            features,
            logits,
            probability,
            pending: PendingStats(std::mem::take(&mut cx.stats)),
            taps: std::mem::take(&mut cx.taps),
        })
    }

    /// Eval-mode probability of the positive class for each sample.
    pub fn predict(&self, input: Input) -> Result<Vec<f32>> {
        let mut tape = Tape::with_params(&self.params).no_grad();
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let out = self.forward(&mut tape, input, Mode::Eval, &mut rng)?;
        let prob = tape.value(out.probability);
        Ok(match self.kind {
            ModelKind::Fusion => prob.data().to_vec(),
            _ => prob.data().chunks(2).map(|r| r[1]).collect(),
        })
    }

    /// Copy every parameter and buffer whose name and shape match `other`
    /// (warm start of the fusion branches from unimodal models).
    pub fn load_matching(&mut self, other: &Model) -> Result<usize> {
        let mut copied = 0;
        for (src, dst) in [(&other.params, &mut self.params), (&other.buffers, &mut self.buffers)] {
            for (_, p) in src.iter() {
                if let Some(t) = dst.by_name(&p.name) {
                    if t.shape() == p.tensor.shape() {
                        dst.assign(&p.name, &p.tensor)?;
                        copied += 1;
                    }
                }
            }
        }
        Ok(copied)
    }

    /// Fusion classifier head applied to an arbitrary fused feature batch.
    pub fn fusion_head<'p>(&'p self, tape: &mut Tape<'p, f32>, fused: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
        match &self.arch {
            Arch::Fusion { head, .. } => {
                let mut cx = Ctx::new(tape, &self.buffers, Mode::Eval, rng);
                let z = head.forward(&mut cx, fused)?;
                Ok(cx.tape.sigmoid(z))
            }
            _ => Err(Error::invalid("model", "not a fusion model")),
        }
    }
}
