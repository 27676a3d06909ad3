//! One eval forward pass of the fusion model at paper scale, printing the
//! main feature shapes and the elapsed time.

use std::time::Instant;

use mmfuse_core::models::{Input, Mode, Model, ModelKind, ScaleProfile};
use mmfuse_core::ndcore::{Tape, Tensor};
use rand::SeedableRng;

fn main() -> mmfuse_core::Result<()> {
    let t0 = Instant::now();
    let p = ScaleProfile::paper();
    let model = Model::new(ModelKind::Fusion, p.clone(), 0)?;
    println!("built {} parameters in {:.1?}", model.num_parameters(), t0.elapsed());
    let [h, w, d] = p.mri_input;
    let [uh, uw] = p.us_input;
    let input = Input {
        mri: Some(Tensor::full([1, 1, h, w, d], 0.5)),
        us: Some(Tensor::full([1, 3, uh, uw], 0.5)),
    };
    let t1 = Instant::now();
    let mut tape = Tape::with_params(&model.params).no_grad();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(&mut tape, input, Mode::Eval, &mut rng)?;
    for name in ["mri.dense.stem", "mri.vit.tokens", "mri.f_dense", "mri.f_vit", "mri.f_combined", "us.features", "us.f_us"] {
        println!("{name}: {:?}", tape.shape(out.tap(name).unwrap()));
    }
    println!("fused: {:?} output: {:?}", tape.shape(out.features), tape.shape(out.probability));
    println!("forward {:.1?}", t1.elapsed());
    Ok(())
}
