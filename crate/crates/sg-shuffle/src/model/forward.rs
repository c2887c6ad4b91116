use crate::data::{
    pair_geometry_features, EmbeddingProvider, ObjectInstance, ObjectVocab, PredicateCatalog,
    SceneRecord, PAIR_GEOMETRY_DIM,
};
use crate::tensor::{BoundParams, Tape, Tensor, Var};

use super::encoder::encoder_stack;
use super::params::CATEGORY_KEYS;
use super::shuffle::shuffle_stage;
use super::{ModelConfig, ModelError, Protocol, Result};

/// Everything the forward pass needs besides the scene itself.
pub struct ModelContext<'a> {
    pub config: &'a ModelConfig,
    pub catalog: &'a PredicateCatalog,
    pub vocab: &'a ObjectVocab,
    pub provider: &'a EmbeddingProvider,
}

/// Per-scene forward results: logits stay on the tape so losses can extend
/// the graph.
pub struct SceneForward {
    /// Ordered pairs (s, o) indexing the logit rows.
    pub pairs: Vec<(usize, usize)>,
    /// Per-category logits, `n_pairs x (|category| + 1)`; the extra column
    /// is the in-category "none" class.
    pub category_logits: [Var; 4],
    /// Final logits, `n_pairs x (n_predicates + 1)`; the extra column is
    /// the background class.
    pub final_logits: Var,
}

/// The object list a protocol runs on: ground truth for PredCls/SGCls,
/// detector output for SGDet.
pub fn active_objects<'s>(
    scene: &'s SceneRecord,
    protocol: Protocol,
) -> Result<&'s [ObjectInstance]> {
    match protocol {
        Protocol::PredCls | Protocol::SgCls => Ok(&scene.objects),
        Protocol::SgDet => scene
            .detected_objects
            .as_deref()
            .ok_or(ModelError::MissingDetections),
    }
}

/// Per-object input encoding: concat(position features, visual feature,
/// label embedding) projected to `d_model` by the shared input projection.
pub fn encode_inputs(
    tape: &mut Tape,
    bound: &BoundParams,
    ctx: &ModelContext,
    objects: &[ObjectInstance],
    image_size: (f64, f64),
) -> Result<Var> {
    if objects.is_empty() {
        return Err(ModelError::EmptyScene);
    }
    if ctx.provider.dimension() != ctx.config.d_e {
        return Err(ModelError::Config(format!(
            "embedding provider dimension {} != configured d_e {}",
            ctx.provider.dimension(),
            ctx.config.d_e
        )));
    }
    let width = ctx.config.input_width();
    let mut rows = Vec::with_capacity(objects.len() * width);
    for obj in objects {
        if obj.visual.len() != ctx.config.d_v {
            return Err(ModelError::Config(format!(
                "object visual length {} != configured d_v {}",
                obj.visual.len(),
                ctx.config.d_v
            )));
        }
        rows.extend_from_slice(&obj.bbox.pos_features(image_size.0, image_size.1));
        rows.extend_from_slice(&obj.visual);
        rows.extend_from_slice(&ctx.provider.embed(ctx.vocab.label(obj.label_id)));
    }
    let input = Tensor::matrix(objects.len(), width, rows)
        .map_err(ModelError::Tensor)?;
    let x = tape.constant(input);
    Ok(tape.linear(x, bound.var("input.w"), bound.var("input.b"))?)
}

/// The constant `n_pairs x 18` geometry feature block shared by every
/// pair head and the final classifier.
pub fn pair_geometry_matrix(
    objects: &[ObjectInstance],
    image_size: (f64, f64),
    pairs: &[(usize, usize)],
) -> Tensor {
    let mut data = Vec::with_capacity(pairs.len() * PAIR_GEOMETRY_DIM);
    for &(s, o) in pairs {
        data.extend_from_slice(&pair_geometry_features(
            &objects[s].bbox,
            &objects[o].bbox,
            image_size.0,
            image_size.1,
        ));
    }
    Tensor::matrix(pairs.len(), PAIR_GEOMETRY_DIM, data).expect("geometry features are finite")
}

/// Per-pair classifier: concat(subject row, object row, pair geometry)
/// through one learned projection. Softmax is applied at loss/eval time.
fn pair_logits(
    tape: &mut Tape,
    features: Var,
    geometry: Var,
    pairs: &[(usize, usize)],
    w: Var,
    b: Var,
) -> Result<Var> {
    let subject_idx: Vec<usize> = pairs.iter().map(|&(s, _)| s).collect();
    let object_idx: Vec<usize> = pairs.iter().map(|&(_, o)| o).collect();
    let subjects = tape.gather_rows(features, &subject_idx)?;
    let objects = tape.gather_rows(features, &object_idx)?;
    let joined = tape.concat(&[subjects, objects, geometry], 1)?;
    Ok(tape.linear(joined, w, b)?)
}

/// Full pipeline for one scene: input encoding, four category encoders and
/// heads, the shuffle fusion stage, and the final classifier.
pub fn forward_scene(
    tape: &mut Tape,
    bound: &BoundParams,
    ctx: &ModelContext,
    scene: &SceneRecord,
    protocol: Protocol,
) -> Result<SceneForward> {
    let objects = active_objects(scene, protocol)?;
    let encoded = encode_inputs(tape, bound, ctx, objects, scene.image_size)?;

    let pairs = crate::data::ordered_pairs(objects.len());
    let geometry = tape.constant(pair_geometry_matrix(objects, scene.image_size, &pairs));

    let mut category_feats = Vec::with_capacity(4);
    let mut category_logits = Vec::with_capacity(4);
    for key in CATEGORY_KEYS {
        let feats = encoder_stack(
            tape,
            encoded,
            bound,
            &format!("enc.{key}"),
            ctx.config.n_encoder_layers,
            ctx.config.n_heads,
        )?;
        let logits = pair_logits(
            tape,
            feats,
            geometry,
            &pairs,
            bound.var(&format!("head.{key}.w")),
            bound.var(&format!("head.{key}.b")),
        )?;
        category_feats.push(feats);
        category_logits.push(logits);
    }

    let fused = shuffle_stage(
        tape,
        [
            category_feats[0],
            category_feats[1],
            category_feats[2],
            category_feats[3],
        ],
        bound,
        ctx.config.shuffle_mode,
        ctx.config.n_shuffle_layers,
        ctx.config.n_heads,
    )?;

    let final_logits = pair_logits(
        tape,
        fused,
        geometry,
        &pairs,
        bound.var("final.w"),
        bound.var("final.b"),
    )?;

    Ok(SceneForward {
        pairs,
        category_logits: [
            category_logits[0],
            category_logits[1],
            category_logits[2],
            category_logits[3],
        ],
        final_logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BoundingBox, SceneDataset};
    use crate::model::{init_params, ShuffleMode};
    use crate::tensor::ParamSet;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_encoder_layers: 1,
            n_heads: 2,
            n_shuffle_layers: 2,
            ffn_hidden: 8,
            d_v: 4,
            d_e: 4,
            ..Default::default()
        }
    }

    fn fixture(n_objects: usize, seed: u64) -> (SceneDataset, ModelConfig, ParamSet) {
        let config = tiny_config();
        let catalog = PredicateCatalog::default_catalog();
        let (dataset, _) = crate::data::generate_synthetic(
            &crate::data::SyntheticConfig {
                n_scenes: 1,
                n_objects_range: (n_objects, n_objects),
                seed,
                d_v: config.d_v,
                d_e: config.d_e,
                ..Default::default()
            },
            &catalog,
        )
        .unwrap();
        let params = init_params(&config, &catalog).unwrap();
        (dataset, config, params)
    }

    fn run(
        dataset: &SceneDataset,
        config: &ModelConfig,
        params: &ParamSet,
        scene: &SceneRecord,
    ) -> (Vec<(usize, usize)>, Vec<f64>, Vec<Vec<f64>>) {
        let catalog = PredicateCatalog::default_catalog();
        let provider = EmbeddingProvider::deterministic(config.d_e, config.seed);
        let ctx = ModelContext {
            config,
            catalog: &catalog,
            vocab: &dataset.vocab,
            provider: &provider,
        };
        let mut tape = Tape::new();
        let bound = tape.bind(params);
        let out = forward_scene(&mut tape, &bound, &ctx, scene, Protocol::PredCls).unwrap();
        let final_logits = tape.value(out.final_logits).data().to_vec();
        let cat_logits = out
            .category_logits
            .iter()
            .map(|v| tape.value(*v).data().to_vec())
            .collect();
        (out.pairs, final_logits, cat_logits)
    }

    #[test]
    fn shape_contract_across_object_counts() {
        let catalog = PredicateCatalog::default_catalog();
        for n in [1usize, 2, 4] {
            let (dataset, config, params) = fixture(n, 7);
            let scene = &dataset.scenes[0];
            let provider = EmbeddingProvider::deterministic(config.d_e, 0);
            let ctx = ModelContext {
                config: &config,
                catalog: &catalog,
                vocab: &dataset.vocab,
                provider: &provider,
            };
            let mut tape = Tape::new();
            let bound = tape.bind(&params);
            let out = forward_scene(&mut tape, &bound, &ctx, scene, Protocol::PredCls).unwrap();
            let n_pairs = n * (n - 1);
            assert_eq!(tape.value(out.final_logits).shape(), &[n_pairs, 51]);
            let expected_widths = [16, 9, 25, 4];
            for (logits, width) in out.category_logits.iter().zip(expected_widths) {
                assert_eq!(tape.value(*logits).shape(), &[n_pairs, width]);
            }
        }
    }

    #[test]
    fn identical_scenes_identical_logits() {
        let (dataset, config, params) = fixture(3, 11);
        let scene = &dataset.scenes[0];
        let (_, a, _) = run(&dataset, &config, &params, scene);
        let (_, b, _) = run(&dataset, &config, &params, scene);
        assert_eq!(a, b);
    }

    #[test]
    fn identical_objects_encode_identically() {
        let config = tiny_config();
        let catalog = PredicateCatalog::default_catalog();
        let params = init_params(&config, &catalog).unwrap();
        let vocab = ObjectVocab::default_vocab();
        let provider = EmbeddingProvider::deterministic(config.d_e, 0);
        let obj = ObjectInstance {
            bbox: BoundingBox::new(10.0, 10.0, 50.0, 60.0),
            label_id: 2,
            visual: vec![0.5, -0.5, 1.0, 0.25],
            label_score: None,
        };
        let ctx = ModelContext {
            config: &config,
            catalog: &catalog,
            vocab: &vocab,
            provider: &provider,
        };
        let mut tape = Tape::new();
        let bound = tape.bind(&params);
        let encoded = encode_inputs(
            &mut tape,
            &bound,
            &ctx,
            &[obj.clone(), obj],
            (640.0, 480.0),
        )
        .unwrap();
        let data = tape.value(encoded).data();
        let d = config.d_model;
        assert_eq!(&data[..d], &data[d..]);
    }

    #[test]
    fn encode_matches_direct_projection_oracle() {
        // Zero visual feature: the row must equal W_o applied to
        // (pos, 0...0, embedding) plus bias, computed here with plain loops.
        let config = tiny_config();
        let catalog = PredicateCatalog::default_catalog();
        let params = init_params(&config, &catalog).unwrap();
        let vocab = ObjectVocab::default_vocab();
        let provider = EmbeddingProvider::deterministic(config.d_e, 0);
        let obj = ObjectInstance {
            bbox: BoundingBox::new(64.0, 48.0, 320.0, 240.0),
            label_id: 5,
            visual: vec![0.0; config.d_v],
            label_score: None,
        };

        let mut row = Vec::new();
        row.extend_from_slice(&obj.bbox.pos_features(640.0, 480.0));
        row.extend_from_slice(&obj.visual);
        row.extend_from_slice(&provider.embed(vocab.label(5)));
        let w = params.get("input.w").unwrap();
        let b = params.get("input.b").unwrap();
        let d = config.d_model;
        let mut expected = vec![0.0; d];
        for (i, x) in row.iter().enumerate() {
            for j in 0..d {
                expected[j] += x * w.data()[i * d + j];
            }
        }
        for j in 0..d {
            expected[j] += b.data()[j];
        }

        let ctx = ModelContext {
            config: &config,
            catalog: &catalog,
            vocab: &vocab,
            provider: &provider,
        };
        let mut tape = Tape::new();
        let bound = tape.bind(&params);
        let encoded = encode_inputs(&mut tape, &bound, &ctx, &[obj], (640.0, 480.0)).unwrap();
        for (got, want) in tape.value(encoded).data().iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn head_logits_match_dense_layer_oracle() {
        let (dataset, config, params) = fixture(3, 13);
        let scene = &dataset.scenes[0];
        let catalog = PredicateCatalog::default_catalog();
        let provider = EmbeddingProvider::deterministic(config.d_e, 0);
        let ctx = ModelContext {
            config: &config,
            catalog: &catalog,
            vocab: &dataset.vocab,
            provider: &provider,
        };
        let mut tape = Tape::new();
        let bound = tape.bind(&params);
        let out = forward_scene(&mut tape, &bound, &ctx, scene, Protocol::PredCls).unwrap();

        // Misc head, recomputed densely from the misc encoder output.
        let encoded = encode_inputs(&mut tape, &bound, &ctx, &scene.objects, scene.image_size)
            .unwrap();
        let feats = encoder_stack(&mut tape, encoded, &bound, "enc.misc", 1, config.n_heads)
            .unwrap();
        let feats_data = tape.value(feats).data().to_vec();
        let w = params.get("head.misc.w").unwrap();
        let b = params.get("head.misc.b").unwrap();
        let d = config.d_model;
        let width = 2 * d + PAIR_GEOMETRY_DIM;
        let out_w = b.numel();
        let got = tape.value(out.category_logits[3]).data();
        for (pi, &(s, o)) in out.pairs.iter().enumerate() {
            let mut input = Vec::with_capacity(width);
            input.extend_from_slice(&feats_data[s * d..(s + 1) * d]);
            input.extend_from_slice(&feats_data[o * d..(o + 1) * d]);
            input.extend_from_slice(&pair_geometry_features(
                &scene.objects[s].bbox,
                &scene.objects[o].bbox,
                scene.image_size.0,
                scene.image_size.1,
            ));
            for j in 0..out_w {
                let mut acc = b.data()[j];
                for (i, x) in input.iter().enumerate() {
                    acc += x * w.data()[i * out_w + j];
                }
                let diff = (acc - got[pi * out_w + j]).abs();
                assert!(diff < 1e-10, "pair {pi} logit {j}: {diff}");
            }
        }
    }

    #[test]
    fn permuting_objects_permutes_pair_logits() {
        let (dataset, config, params) = fixture(4, 29);
        let scene = &dataset.scenes[0];
        let perm = [2usize, 0, 3, 1]; // new_index -> old_index
        let mut permuted = scene.clone();
        permuted.objects = perm.iter().map(|&old| scene.objects[old].clone()).collect();
        let old_to_new: Vec<usize> = {
            let mut v = vec![0; 4];
            for (new, &old) in perm.iter().enumerate() {
                v[old] = new;
            }
            v
        };
        permuted.gt_triplets = scene
            .gt_triplets
            .iter()
            .map(|&(s, o, p)| (old_to_new[s], old_to_new[o], p))
            .collect();

        let (pairs_a, logits_a, _) = run(&dataset, &config, &params, scene);
        let (pairs_b, logits_b, _) = run(&dataset, &config, &params, &permuted);
        let width = 51;
        for (ai, &(s, o)) in pairs_a.iter().enumerate() {
            let mapped = (old_to_new[s], old_to_new[o]);
            let bi = pairs_b.iter().position(|&p| p == mapped).unwrap();
            for j in 0..width {
                let diff = (logits_a[ai * width + j] - logits_b[bi * width + j]).abs();
                assert!(diff < 1e-9, "pair {ai}->{bi} logit {j} differs by {diff}");
            }
        }
    }

    #[test]
    fn sgdet_requires_detections() {
        let (dataset, config, params) = fixture(3, 31);
        let mut scene = dataset.scenes[0].clone();
        scene.detected_objects = None;
        let catalog = PredicateCatalog::default_catalog();
        let provider = EmbeddingProvider::deterministic(config.d_e, 0);
        let ctx = ModelContext {
            config: &config,
            catalog: &catalog,
            vocab: &dataset.vocab,
            provider: &provider,
        };
        let mut tape = Tape::new();
        let bound = tape.bind(&params);
        let result = forward_scene(&mut tape, &bound, &ctx, &scene, Protocol::SgDet);
        assert!(matches!(result, Err(ModelError::MissingDetections)));
    }
}
