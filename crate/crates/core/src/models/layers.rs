//! Parameterised layers and the forward-pass context they run in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::ndcore::{BatchStats, ConvGeom, MhsaVars, ParamId, ParamStore, Tape, Tensor, Var};

pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Shared state threaded through one forward pass.
pub struct Ctx<'t, 'p> {
    pub tape: &'t mut Tape<'p, f32>,
    pub mode: Mode,
    buffers: &'p ParamStore<f32>,
    rng: &'t mut ChaCha8Rng,
    /// Batch statistics to fold into running estimates after the step.
    pub(crate) stats: Vec<(BatchNorm, BatchStats<f32>)>,
    /// Named intermediate activations (Grad-CAM targets and feature maps).
    pub(crate) taps: Vec<(String, Var)>,
}

impl<'t, 'p> Ctx<'t, 'p> {
    pub fn new(tape: &'t mut Tape<'p, f32>, buffers: &'p ParamStore<f32>, mode: Mode, rng: &'t mut ChaCha8Rng) -> Self {
        Ctx {
            tape,
            mode,
            buffers,
            rng,
            stats: Vec::new(),
            taps: Vec::new(),
        }
    }

    pub fn train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn tap(&mut self, name: impl Into<String>, v: Var) {
        self.taps.push((name.into(), v));
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        let train = self.train();
        self.tape.dropout(x, p, train, self.rng)
    }
}

/// Running statistics gathered in training mode, to be applied to the
/// buffer store once the tape (which borrows the model) is gone.
#[derive(Debug, Clone, Default)]
pub struct PendingStats(pub(crate) Vec<(BatchNorm, BatchStats<f32>)>);

impl PendingStats {
    pub fn apply(self, buffers: &mut ParamStore<f32>) {
        for (bn, stats) in self.0 {
            let m = BN_MOMENTUM;
            for (r, &b) in buffers.get_mut(bn.running_mean).data_mut().iter_mut().zip(&stats.mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, &b) in buffers.get_mut(bn.running_var).data_mut().iter_mut().zip(&stats.var_unbiased) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
}

impl Conv {
    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let w = cx.tape.param(self.weight);
        let b = self.bias.map(|b| cx.tape.param(b));
        cx.tape.conv(x, w, b, self.geom)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let g = cx.tape.param(self.scale);
        let b = cx.tape.param(self.shift);
        match cx.mode {
            Mode::Train => {
                let (y, stats) = cx.tape.batch_norm_train(x, g, b)?;
                cx.stats.push((*self, stats));
                Ok(y)
            }
            Mode::Eval => {
                let mean = cx.buffers.get(self.running_mean).data();
                let var = cx.buffers.get(self.running_var).data();
                cx.tape.batch_norm_eval(x, g, b, mean, var)
            }
        }
    }

    /// BN followed by ReLU.
    pub fn relu(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.forward(cx, x)?;
        Ok(cx.tape.relu(y))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let w = cx.tape.param(self.weight);
        let b = cx.tape.param(self.bias);
        cx.tape.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let g = cx.tape.param(self.scale);
        let b = cx.tape.param(self.shift);
        cx.tape.layer_norm(x, g, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn forward(&self, cx: &mut Ctx, tokens: Var) -> Result<Var> {
        let mut p = |l: Linear| (cx.tape.param(l.weight), cx.tape.param(l.bias));
        let (wq, bq) = p(self.q);
        let (wk, bk) = p(self.k);
        let (wv, bv) = p(self.v);
        let (wo, bo) = p(self.o);
        let vars = MhsaVars { wq, bq, wk, bk, wv, bv, wo, bo };
        cx.tape.mhsa(tokens, self.heads, &vars)
    }
}

/// Creates named, initialised parameters in a fixed order so that the
/// same seed always yields the same bytes.
pub struct Builder {
    pub params: ParamStore<f32>,
    pub buffers: ParamStore<f32>,
    rng: ChaCha8Rng,
}

impl Builder {
    pub fn new(seed: u64) -> Self {
        Builder {
            params: ParamStore::new(),
            buffers: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Kaiming-uniform (ReLU gain) in fan-in mode: U(-b, b), b = sqrt(6 / fan_in).
    pub fn kaiming_uniform(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> Result<ParamId> {
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
        self.params.insert(name, t)
    }

    pub fn normal(&mut self, name: &str, shape: Vec<usize>, std: f32) -> Result<ParamId> {
        let dist = Normal::new(0.0f32, std).expect("positive std");
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| dist.sample(rng));
        self.params.insert(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: Vec<usize>, value: f32) -> Result<ParamId> {
        self.params.insert(name, Tensor::full(shape, value))
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, geom: ConvGeom, bias: bool) -> Result<Conv> {
        let mut shape = vec![cout, cin];
        shape.extend_from_slice(&geom.kernel[..geom.dims]);
        let fan_in = cin * geom.kernel[..geom.dims].iter().product::<usize>();
        let weight = self.kaiming_uniform(&format!("{name}.weight"), shape, fan_in)?;
        let bias = if bias { Some(self.constant(&format!("{name}.bias"), vec![cout], 0.0)?) } else { None };
        Ok(Conv { weight, bias, geom })
    }

    pub fn batch_norm(&mut self, name: &str, c: usize) -> Result<BatchNorm> {
        Ok(BatchNorm {
            scale: self.constant(&format!("{name}.weight"), vec![c], 1.0)?,
            shift: self.constant(&format!("{name}.bias"), vec![c], 0.0)?,
            running_mean: self.buffers.insert(format!("{name}.running_mean"), Tensor::zeros([c]))?,
            running_var: self.buffers.insert(format!("{name}.running_var"), Tensor::ones([c]))?,
        })
    }

    pub fn linear(&mut self, name: &str, fin: usize, fout: usize) -> Result<Linear> {
        Ok(Linear {
            weight: self.kaiming_uniform(&format!("{name}.weight"), vec![fout, fin], fin)?,
            bias: self.constant(&format!("{name}.bias"), vec![fout], 0.0)?,
        })
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            scale: self.constant(&format!("{name}.weight"), vec![d], 1.0)?,
            shift: self.constant(&format!("{name}.bias"), vec![d], 0.0)?,
        })
    }

    pub fn attention(&mut self, name: &str, d: usize, heads: usize) -> Result<Attention> {
        Ok(Attention {
            q: self.linear(&format!("{name}.q"), d, d)?,
            k: self.linear(&format!("{name}.k"), d, d)?,
            v: self.linear(&format!("{name}.v"), d, d)?,
            o: self.linear(&format!("{name}.out"), d, d)?,
            heads,
        })
    }
}
