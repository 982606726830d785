//! Shapes through the encoder at full scale, and the parameter count.
//!
//!     cargo run --example encoder_shapes

use sculpt::encoder::{cnn_frontend, encode, transformer_backend, EncoderConfig, EncoderParams, Mode};
use sculpt::ndiff::{Tape, Tensor};

fn main() -> sculpt::Result<()> {
    let cfg = EncoderConfig::default();
    let params = EncoderParams::init(cfg.clone(), 42)?;
    let x = Tensor::new(&[4, cfg.input_dim], (0..4 * cfg.input_dim).map(|i| (i as f64 * 0.1).cos()).collect())?;

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let feat = cnn_frontend(&mut tape, &params, xv, &mut Mode::Eval)?;
    println!("input          {:?}", x.shape());
    println!("conv + pool    {:?}", tape.shape(feat));
    let h = transformer_backend(&mut tape, &params, feat, &mut Mode::Eval)?;
    println!("transformer    {:?}", tape.shape(h));
    let z = encode(&x, &params, Mode::Eval)?;
    println!("latent         {:?}", z.shape());
    println!("parameters     {}", params.num_parameters());
    Ok(())
}
