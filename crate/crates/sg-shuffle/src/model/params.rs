use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{PredicateCatalog, CATEGORIES, PAIR_GEOMETRY_DIM};
use crate::tensor::{read_container, write_container, ParamSet, Tensor};

use super::{ModelConfig, ModelError, Result};

pub const CATEGORY_KEYS: [&str; 4] = ["geometric", "possessive", "semantic", "misc"];

/// Expected name -> shape map for every learned tensor. Initialization,
/// checkpoint validation and the optimizer all walk this.
pub fn expected_shapes(
    config: &ModelConfig,
    catalog: &PredicateCatalog,
) -> Result<BTreeMap<String, Vec<usize>>> {
    if catalog.len() != config.n_predicates {
        return Err(ModelError::Config(format!(
            "catalog has {} predicates, config says {}",
            catalog.len(),
            config.n_predicates
        )));
    }
    let d = config.d_model;
    let mut shapes = BTreeMap::new();

    shapes.insert("input.w".into(), vec![config.input_width(), d]);
    shapes.insert("input.b".into(), vec![d]);

    let block = |shapes: &mut BTreeMap<String, Vec<usize>>, prefix: &str| {
        let entries: [(&str, Vec<usize>); 15] = [
            ("attn.wq", vec![d, d]),
            ("attn.bq", vec![d]),
            ("attn.wk", vec![d, d]),
            ("attn.wv", vec![d, d]),
            ("attn.bv", vec![d]),
            ("attn.wo", vec![d, d]),
            ("attn.bo", vec![d]),
            ("norm1.g", vec![d]),
            ("norm1.b", vec![d]),
            ("ffn.w1", vec![d, config.ffn_hidden]),
            ("ffn.b1", vec![config.ffn_hidden]),
            ("ffn.w2", vec![config.ffn_hidden, d]),
            ("ffn.b2", vec![d]),
            ("norm2.g", vec![d]),
            ("norm2.b", vec![d]),
        ];
        for (suffix, shape) in entries {
            shapes.insert(format!("{prefix}.{suffix}"), shape);
        }
    };

    for (key, category) in CATEGORY_KEYS.iter().zip(CATEGORIES) {
        for layer in 0..config.n_encoder_layers {
            block(&mut shapes, &format!("enc.{key}.{layer}"));
        }
        let head_in = 2 * d + PAIR_GEOMETRY_DIM;
        let head_out = catalog.category_size(category) + 1;
        shapes.insert(format!("head.{key}.w"), vec![head_in, head_out]);
        shapes.insert(format!("head.{key}.b"), vec![head_out]);
    }

    for pathway in 0..4 {
        for layer in 0..config.n_shuffle_layers {
            block(&mut shapes, &format!("shuf.{pathway}.{layer}"));
        }
    }

    put("fuse.w".into(), vec![4 * d, 4 * d]);
    put("fuse.b".into(), vec![4 * d]);

    let final_in = 2 * 4 * d + PAIR_GEOMETRY_DIM;
    put("final.w".into(), vec![final_in, config.n_predicates + 1]);
    put("final.b".into(), vec![config.n_predicates + 1]);

    Ok(shapes)
}

/// Fresh parameters, seeded from `config.seed`. Weights are scaled-uniform
/// by fan-in, biases zero, norm gains one.
pub fn init_params(config: &ModelConfig, catalog: &PredicateCatalog) -> Result<ParamSet> {
    config.validate()?;
    let shapes = expected_shapes(config, catalog)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamSet::new();
    // BTreeMap order is deterministic, so the rng stream assignment is too.
    for (name, shape) in shapes {
        let tensor = if name.ends_with(".g") {
            Tensor::full(shape, 1.0)
        } else if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2")
            || name.ends_with(".bq") || name.ends_with(".bv") || name.ends_with(".bo")
        {
            Tensor::zeros(shape)
        } else {
            let fan_in = shape[0];
            let bound = (3.0 / fan_in as f64).sqrt();
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::from_vec(shape, data).expect("generated weights are finite")
        };
        params.insert(name, tensor);
    }
    Ok(params)
}

/// Write parameters with the model config embedded as container metadata.
pub fn save_checkpoint(path: &Path, params: &ParamSet, config: &ModelConfig) -> Result<()> {
    let meta = serde_json::to_string(config).expect("config serializes");
    write_container(path, params, &meta)?;
    Ok(())
}

/// Load a checkpoint and validate that every tensor matches the shape the
/// embedded config implies.
pub fn load_checkpoint(path: &Path, catalog: &PredicateCatalog) -> Result<(ParamSet, ModelConfig)> {
    let (params, meta) = read_container(path)?;
    let config: ModelConfig = serde_json::from_str(&meta)
        .map_err(|e| ModelError::Config(format!("checkpoint metadata: {e}")))?;
    config.validate()?;
    let shapes = expected_shapes(&config, catalog)?;
    if params.len() != shapes.len() {
        return Err(ModelError::Config(format!(
            "checkpoint has {} tensors, config implies {}",
            params.len(),
            shapes.len()
        )));
    }
    for (name, shape) in &shapes {
        match params.get(name) {
            Some(tensor) if tensor.shape() == shape.as_slice() => {}
            Some(tensor) => {
                return Err(ModelError::Config(format!(
                    "checkpoint tensor {name} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    shape
                )))
            }
            None => {
                return Err(ModelError::Config(format!(
                    "checkpoint is missing tensor {name}"
                )))
            }
        }
    }
    Ok((params, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_encoder_layers: 1,
            n_heads: 2,
            n_shuffle_layers: 1,
            ffn_hidden: 16,
            d_v: 4,
            d_e: 4,
            ..Default::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_shape_complete() {
        let catalog = PredicateCatalog::default_catalog();
        let config = small_config();
        let a = init_params(&config, &catalog).unwrap();
        let b = init_params(&config, &catalog).unwrap();
        assert_eq!(a, b);
        let shapes = expected_shapes(&config, &catalog).unwrap();
        assert_eq!(a.len(), shapes.len());
        for (name, shape) in &shapes {
            assert_eq!(a.get(name).unwrap().shape(), shape.as_slice(), "{name}");
        }
    }

    #[test]
    fn head_widths_follow_category_sizes() {
        let catalog = PredicateCatalog::default_catalog();
        let shapes = expected_shapes(&small_config(), &catalog).unwrap();
        // Misc has 3 predicates, so its head is 3 + 1 wide.
        assert_eq!(shapes["head.misc.w"][1], 4);
        assert_eq!(shapes["head.geometric.w"][1], 16);
        assert_eq!(shapes["final.w"][1], 51);
    }

    #[test]
    fn checkpoint_round_trip_validates() {
        let catalog = PredicateCatalog::default_catalog();
        let config = small_config();
        let params = init_params(&config, &catalog).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sgtc");
        save_checkpoint(&path, &params, &config).unwrap();
        let (loaded, loaded_config) = load_checkpoint(&path, &catalog).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(loaded_config, config);
    }

    #[test]
    fn checkpoint_shape_disagreement_rejected() {
        let catalog = PredicateCatalog::default_catalog();
        let config = small_config();
        let mut params = init_params(&config, &catalog).unwrap();
        params.insert("input.w", Tensor::zeros(vec![2, 2]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sgtc");
        save_checkpoint(&path, &params, &config).unwrap();
        assert!(load_checkpoint(&path, &catalog).is_err());
    }
}
