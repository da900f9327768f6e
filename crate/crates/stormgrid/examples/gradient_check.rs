//! Verify the hand-built reverse-mode engine end to end: the analytic
//! gradient of the full model loss against central finite differences on a
//! small configuration.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stormgrid::model::{forward_loss_gradients, init_params, loss_for_params, ModelConfig};
use stormgrid::nn::Tensor;

fn main() {
    let config = ModelConfig {
        d_model: 8,
        n_heads: 2,
        ffn_hidden: 16,
        seed: 17,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let windows: Vec<Tensor> = (0..4)
        .map(|_| {
            let data = (0..config.seq_len * config.in_features)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            Tensor::from_vec(config.seq_len, config.in_features, data).unwrap()
        })
        .collect();
    let targets: Vec<f64> = (0..4).map(|_| rng.random_range(-0.9..0.9)).collect();

    let params = init_params(&config).unwrap();
    let (loss, analytic) = forward_loss_gradients(&params, &config, &windows, &targets).unwrap();
    println!(
        "batch loss {loss:.6} over {} windows, {} trainable tensors",
        windows.len(),
        analytic.len()
    );

    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let names = params.trainable_names();
    for (t_idx, name) in names.iter().enumerate() {
        let tensor_len = analytic[t_idx].len();
        // probe a few entries of every tensor
        for i in (0..tensor_len).step_by(tensor_len.div_ceil(4).max(1)) {
            let perturb = |delta: f64| {
                let mut p = params.clone();
                let mut tensors = p.named_tensors_mut();
                tensors.retain(|(n, _)| n != "positional");
                tensors[t_idx].1.data_mut()[i] += delta;
                drop(tensors);
                loss_for_params(&p, &config, &windows, &targets).unwrap()
            };
            let fd = (perturb(eps) - perturb(-eps)) / (2.0 * eps);
            let a = analytic[t_idx].data()[i];
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
                println!("  new worst: {name}[{i}] fd {fd:+.3e} analytic {a:+.3e} rel {rel:.2e}");
            }
            checked += 1;
        }
    }
    println!("checked {checked} entries, max relative error {worst:.3e} (tolerance 1e-4)");
    assert!(worst < 1e-4);
    println!("gradient check passed");
}
