//! Parameter counts of the published decoder variants and the channel
//! averaging used to reuse a 3-channel patch-embedding kernel.
//!
//! Usage: `cargo run --example model_shapes`

use act_core::model::{
    adapt_pretrained_patch_embedding, ActModel, DecoderConfig, DecoderVariant, EncoderConfig, ModelConfig,
};
use act_core::numerics::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> act_core::Result<()> {
    for v in [DecoderVariant::Small, DecoderVariant::Medium, DecoderVariant::Large] {
        let cfg = ModelConfig::new(EncoderConfig::full_scale(), DecoderConfig::variant(v), 5277, 527);
        let total: usize = ActModel::param_shapes(&cfg).iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        println!(
            "{v:?}: decoder {} parameters, whole model {total}",
            cfg.decoder_param_count()
        );
    }

    let cfg = ModelConfig::new(EncoderConfig::default(), DecoderConfig::default(), 40, 3);
    for (name, shape) in ActModel::param_shapes(&cfg).iter().take(6) {
        println!("{name}: {shape:?}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let kernel = Tensor::randn(&[3, 16, 16, 8], 0.02, &mut rng);
    let adapted = adapt_pretrained_patch_embedding(&kernel)?;
    println!("kernel {:?} -> {:?}", kernel.shape(), adapted.shape());
    Ok(())
}
