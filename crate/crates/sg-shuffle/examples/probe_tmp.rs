use sg_shuffle::data::{generate_synthetic, PredicateCatalog, SyntheticConfig};

fn main() {
    let cat = PredicateCatalog::default_catalog();
    for seed in 0..6u64 {
        for zipf in [0.0, 1.5] {
            let (_, freqs) = generate_synthetic(
                &SyntheticConfig { n_scenes: 500, zipf_exponent: zipf, seed, ..Default::default() },
                &cat,
            ).unwrap();
            let max = *freqs.iter().max().unwrap() as f64;
            let min = *freqs.iter().min().unwrap() as f64;
            println!("seed {seed} zipf {zipf}: max {max} min {min} ratio {:.1}", max / min.max(1.0));
        }
    }
}
