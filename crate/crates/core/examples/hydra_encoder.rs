//! Builds a bidirectional encoder, runs it, shows that every output position
//! sees the whole sequence, prints the parameter accounting at desk and
//! ablation scale, and round-trips a checkpoint.
//!
//! `cargo run --release --example hydra_encoder`

use mixerkit::hydra::{
    encoder_forward, load_checkpoint, ablation_scale_config, parameter_count_report, save_checkpoint, Encoder, EncoderConfig,
    Mixing,
};
use mixerkit::RngState;

/// Positions whose logits move when only the last token changes.
fn reach(enc: &Encoder, tokens: &[usize]) -> mixerkit::Result<usize> {
    let base = encoder_forward(enc, tokens)?;
    let mut edited = tokens.to_vec();
    *edited.last_mut().unwrap() = (tokens[tokens.len() - 1] + 1) % enc.cfg.vocab;
    let moved = encoder_forward(enc, &edited)?;
    Ok((0..tokens.len()).filter(|&t| base.row(t) != moved.row(t)).count())
}

fn main() -> mixerkit::Result<()> {
    let mut rng = RngState::new(0);
    let cfg = EncoderConfig {
        n_layers: 2,
        ..EncoderConfig::default()
    };
    let hydra = Encoder::new(cfg.clone(), &mut rng)?;
    let causal = Encoder::new(EncoderConfig { mixing: Mixing::Causal, ..cfg.clone() }, &mut rng)?;
    let tokens: Vec<usize> = (0..24).map(|_| rng.below(cfg.vocab)).collect();
    let logits = encoder_forward(&hydra, &tokens)?;
    println!("logits {:?}, {} parameters", logits.shape(), hydra.parameter_count());
    println!(
        "positions affected by the last token: bidirectional {} / {}, causal {} / {}",
        reach(&hydra, &tokens)?,
        tokens.len(),
        reach(&causal, &tokens)?,
        tokens.len()
    );

    println!("\ndesk scale, per layer\n{}", parameter_count_report(&cfg));
    println!("\nablation scale, per layer\n{}", parameter_count_report(&ablation_scale_config()));

    let path = std::env::temp_dir().join(format!("mixerkit-example-{}.ckpt", std::process::id()));
    save_checkpoint(&hydra, &path)?;
    let back = load_checkpoint(&path)?;
    std::fs::remove_file(&path)?;
    println!(
        "\ncheckpoint round trip: parameters equal {}, logits equal {}",
        back == hydra,
        encoder_forward(&back, &tokens)? == logits
    );
    Ok(())
}
