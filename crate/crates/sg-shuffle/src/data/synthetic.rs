use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::catalog::PredicateCatalog;
use super::embedding::EmbeddingProvider;
use super::geometry::BoundingBox;
use super::scene::{ObjectInstance, ObjectVocab, SceneDataset, SceneRecord};
use super::{DataError, Result};

/// Synthetic corpus settings. The generator is a pure function of this
/// struct: identical configs produce byte-identical datasets.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_scenes: usize,
    /// Inclusive object-count range per scene.
    pub n_objects_range: (usize, usize),
    /// Zipf exponent of the predicate class prior; 0 is uniform.
    pub zipf_exponent: f64,
    pub seed: u64,
    /// Visual feature length.
    pub d_v: usize,
    /// Embedding dimension of the internal deterministic provider.
    pub d_e: usize,
    pub n_object_classes: usize,
    /// Target ground-truth triplets per object.
    pub triplets_per_object: f64,
    /// Emit jittered detector output alongside ground truth.
    pub with_detections: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_scenes: 100,
            n_objects_range: (3, 7),
            zipf_exponent: 1.5,
            seed: 0,
            d_v: 64,
            d_e: 50,
            n_object_classes: 30,
            triplets_per_object: 1.5,
            with_detections: true,
        }
    }
}

const IMAGE_W: f64 = 640.0;
const IMAGE_H: f64 = 480.0;
/// Chance that a new box is sampled strictly inside an earlier one, which
/// keeps containment-style predicates reachable.
const NEST_PROB: f64 = 0.45;
const PREDICATE_RETRIES: usize = 12;

/// Predicates whose 2-D meaning is checkable from boxes. The remaining
/// geometric labels (behind, in front of, between, ...) describe depth or
/// multi-object layouts that two boxes cannot witness, so any geometry is
/// consistent with them.
pub fn has_geometric_constraint(label: &str) -> bool {
    matches!(label, "above" | "under" | "over" | "on" | "in" | "near" | "at")
}

/// Geometry constraint for predicates whose 2-D meaning is checkable.
/// `None` means any box pair is consistent.
pub fn geometric_constraint(
    label: &str,
    subject: &BoundingBox,
    object: &BoundingBox,
) -> Option<bool> {
    let (scx, scy) = subject.center();
    let (ocx, ocy) = object.center();
    let overlap = super::geometry::box_geometry(subject, object)
        .intersection_box
        .is_some();
    match label {
        "above" => Some(scy < ocy),
        "under" => Some(scy > ocy),
        "over" => Some(scy < ocy && subject.x1 < object.x2 && object.x1 < subject.x2),
        "on" => Some(scy < ocy && overlap),
        "in" => Some(subject.inside(object)),
        "near" | "at" => {
            let dist = ((scx - ocx).powi(2) + (scy - ocy).powi(2)).sqrt();
            let diag = (IMAGE_W * IMAGE_W + IMAGE_H * IMAGE_H).sqrt();
            Some(dist <= 0.35 * diag)
        }
        _ => None,
    }
}

// Fixed projection matrices mapping label embedding and box position into
// visual-feature space; derived from the dimensions only so loaders and
// generators agree without sharing state.
fn visual_projections(d_e: usize, d_v: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7669_7375_616c_0000 ^ ((d_e as u64) << 16) ^ d_v as u64);
    let emb_scale = 1.0 / (d_e as f64).sqrt();
    let emb: Vec<f64> = (0..d_e * d_v)
        .map(|_| rng.gen_range(-1.0..1.0) * emb_scale)
        .collect();
    let geo: Vec<f64> = (0..8 * d_v).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (emb, geo)
}

/// Deterministic visual feature for an object: label embedding and box
/// position pushed through fixed projections. No noise; the generator adds
/// its own seeded noise on top.
pub fn synthesize_visual(
    provider: &EmbeddingProvider,
    label: &str,
    bbox: &BoundingBox,
    image: (f64, f64),
    d_v: usize,
) -> Vec<f64> {
    let d_e = provider.dimension();
    let (emb_proj, geo_proj) = visual_projections(d_e, d_v);
    let embedding = provider.embed(label);
    let pos = bbox.pos_features(image.0, image.1);
    let mut out = vec![0.0; d_v];
    for (i, e) in embedding.iter().enumerate() {
        for j in 0..d_v {
            out[j] += e * emb_proj[i * d_v + j];
        }
    }
    for (i, p) in pos.iter().enumerate() {
        for j in 0..d_v {
            out[j] += p * geo_proj[i * d_v + j];
        }
    }
    out
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = rng.gen_range(40.0..200.0);
    let h = rng.gen_range(30.0..160.0);
    let x1 = rng.gen_range(0.0..IMAGE_W - w);
    let y1 = rng.gen_range(0.0..IMAGE_H - h);
    BoundingBox::new(x1, y1, x1 + w, y1 + h)
}

fn nested_box(rng: &mut ChaCha8Rng, parent: &BoundingBox) -> BoundingBox {
    let margin_x = parent.width() * 0.3;
    let margin_y = parent.height() * 0.3;
    let x1 = parent.x1 + rng.gen_range(0.05..1.0) * margin_x;
    let x2 = parent.x2 - rng.gen_range(0.05..1.0) * margin_x;
    let y1 = parent.y1 + rng.gen_range(0.05..1.0) * margin_y;
    let y2 = parent.y2 - rng.gen_range(0.05..1.0) * margin_y;
    BoundingBox::new(x1, y1, x2, y2)
}

// Label-conditional preference used when a predicate has no geometry
// constraint: some (predicate, label) combinations are boosted so the
// corpus carries a learnable label signal.
fn affinity(predicate: usize, label: usize) -> f64 {
    let mut h = 0x9e3779b97f4a7c15u64
        .wrapping_mul(predicate as u64 + 1)
        .wrapping_add(0x2545f4914f6cdd1du64.wrapping_mul(label as u64 + 1));
    h ^= h >> 33;
    if h % 3 == 0 {
        3.0
    } else {
        1.0
    }
}

/// Generate a long-tailed synthetic corpus plus its predicate frequency
/// counts. Geometric predicates with a checkable 2-D rule are only emitted
/// on pairs whose boxes satisfy the rule; everything else follows a
/// Zipf(zipf_exponent) class prior with label-conditional pair choice.
pub fn generate_synthetic(
    config: &SyntheticConfig,
    catalog: &PredicateCatalog,
) -> Result<(SceneDataset, Vec<u64>)> {
    if config.n_objects_range.0 == 0 || config.n_objects_range.0 > config.n_objects_range.1 {
        return Err(DataError::InvalidConfig(format!(
            "object range {:?} must be non-empty and start at 1 or more",
            config.n_objects_range
        )));
    }
    if config.zipf_exponent < 0.0 || !config.zipf_exponent.is_finite() {
        return Err(DataError::InvalidConfig(format!(
            "zipf exponent {} must be finite and non-negative",
            config.zipf_exponent
        )));
    }
    if config.d_v == 0 || config.d_e == 0 || config.n_object_classes == 0 {
        return Err(DataError::InvalidConfig(
            "d_v, d_e and n_object_classes must be positive".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab = ObjectVocab::with_classes(config.n_object_classes);
    let provider = EmbeddingProvider::deterministic(config.d_e, config.seed);

    // Zipf weights over a seeded rank permutation so head/tail predicates
    // span all four categories.
    let mut ranks: Vec<usize> = (0..catalog.len()).collect();
    ranks.shuffle(&mut rng);
    let zipf_weights: Vec<f64> = (0..catalog.len())
        .map(|p| 1.0 / ((ranks[p] + 1) as f64).powf(config.zipf_exponent))
        .collect();
    let predicate_dist =
        WeightedIndex::new(&zipf_weights).map_err(|e| DataError::InvalidConfig(e.to_string()))?;

    let mut frequencies = vec![0u64; catalog.len()];
    let mut scenes = Vec::with_capacity(config.n_scenes);
    for _ in 0..config.n_scenes {
        let n_objects = rng.gen_range(config.n_objects_range.0..=config.n_objects_range.1);
        let mut objects: Vec<ObjectInstance> = Vec::with_capacity(n_objects);
        for _ in 0..n_objects {
            let bbox = if !objects.is_empty() && rng.gen_bool(NEST_PROB) {
                let parent_box = objects.choose(&mut rng).unwrap().bbox;
                nested_box(&mut rng, &parent_box)
            } else {
                random_box(&mut rng)
            };
            let label_id = rng.gen_range(0..config.n_object_classes);
            let mut visual = synthesize_visual(
                &provider,
                vocab.label(label_id),
                &bbox,
                (IMAGE_W, IMAGE_H),
                config.d_v,
            );
            for v in &mut visual {
                *v += rng.gen_range(-0.1..0.1);
            }
            objects.push(ObjectInstance {
                bbox,
                label_id,
                visual,
                label_score: None,
            });
        }

        let all_pairs = super::scene::ordered_pairs(n_objects);
        let target = ((n_objects as f64 * config.triplets_per_object).round() as usize)
            .min(all_pairs.len());
        let mut unused: Vec<(usize, usize)> = all_pairs;
        let mut triplets = Vec::with_capacity(target);
        'slots: for _ in 0..target {
            if unused.is_empty() {
                break;
            }
            for _ in 0..PREDICATE_RETRIES {
                let predicate = predicate_dist.sample(&mut rng);
                let label = catalog.label(predicate);
                let choice = if has_geometric_constraint(label) {
                    // Constrained: uniform among pairs satisfying the rule.
                    let candidates: Vec<usize> = (0..unused.len())
                        .filter(|&i| {
                            let (s, o) = unused[i];
                            geometric_constraint(label, &objects[s].bbox, &objects[o].bbox)
                                == Some(true)
                        })
                        .collect();
                    candidates.choose(&mut rng).copied()
                } else {
                    // Unconstrained: label-affinity-weighted pair choice.
                    let weights: Vec<f64> = unused
                        .iter()
                        .map(|&(s, o)| {
                            affinity(predicate, objects[s].label_id)
                                * affinity(predicate.wrapping_add(97), objects[o].label_id)
                        })
                        .collect();
                    WeightedIndex::new(&weights)
                        .ok()
                        .map(|d| d.sample(&mut rng))
                };
                if let Some(i) = choice {
                    let (s, o) = unused.swap_remove(i);
                    triplets.push((s, o, predicate));
                    frequencies[predicate] += 1;
                    continue 'slots;
                }
            }
        }
        triplets.sort_unstable();

        let detected = if config.with_detections {
            Some(jittered_detections(&mut rng, &objects, &vocab, &provider, config))
        } else {
            None
        };

        scenes.push(SceneRecord {
            image_size: (IMAGE_W, IMAGE_H),
            objects,
            gt_triplets: triplets,
            detected_objects: detected,
        });
    }

    Ok((SceneDataset { scenes, vocab }, frequencies))
}

// Detector stand-in: ground-truth boxes jittered, labels kept with
// probability 0.8, confidence reflecting correctness.
fn jittered_detections(
    rng: &mut ChaCha8Rng,
    objects: &[ObjectInstance],
    vocab: &ObjectVocab,
    provider: &EmbeddingProvider,
    config: &SyntheticConfig,
) -> Vec<ObjectInstance> {
    objects
        .iter()
        .map(|obj| {
            let w = obj.bbox.width();
            let h = obj.bbox.height();
            let jitter = |rng: &mut ChaCha8Rng, extent: f64| rng.gen_range(-0.08..0.08) * extent;
            let mut x1 = obj.bbox.x1 + jitter(rng, w);
            let mut x2 = obj.bbox.x2 + jitter(rng, w);
            let mut y1 = obj.bbox.y1 + jitter(rng, h);
            let mut y2 = obj.bbox.y2 + jitter(rng, h);
            x1 = x1.clamp(0.0, IMAGE_W - 2.0);
            y1 = y1.clamp(0.0, IMAGE_H - 2.0);
            x2 = x2.clamp(x1 + 1.0, IMAGE_W);
            y2 = y2.clamp(y1 + 1.0, IMAGE_H);
            let bbox = BoundingBox::new(x1, y1, x2, y2);
            let correct = rng.gen_bool(0.8);
            let label_id = if correct {
                obj.label_id
            } else {
                rng.gen_range(0..config.n_object_classes)
            };
            let score = if label_id == obj.label_id {
                rng.gen_range(0.7..0.99)
            } else {
                rng.gen_range(0.5..0.8)
            };
            let mut visual = synthesize_visual(
                provider,
                vocab.label(label_id),
                &bbox,
                (IMAGE_W, IMAGE_H),
                config.d_v,
            );
            for v in &mut visual {
                *v += rng.gen_range(-0.1..0.1);
            }
            ObjectInstance {
                bbox,
                label_id,
                visual,
                label_score: Some(score),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> PredicateCatalog {
        PredicateCatalog::default_catalog()
    }

    #[test]
    fn identical_seeds_identical_datasets() {
        let config = SyntheticConfig {
            n_scenes: 20,
            seed: 7,
            ..Default::default()
        };
        let cat = catalog();
        let (a, fa) = generate_synthetic(&config, &cat).unwrap();
        let (b, fb) = generate_synthetic(&config, &cat).unwrap();
        assert_eq!(a, b);
        assert_eq!(fa, fb);
    }

    #[test]
    fn constrained_geometric_triplets_hold_post_hoc() {
        let config = SyntheticConfig {
            n_scenes: 60,
            seed: 3,
            ..Default::default()
        };
        let cat = catalog();
        let (ds, _) = generate_synthetic(&config, &cat).unwrap();
        let mut constrained_seen = 0usize;
        for scene in &ds.scenes {
            for &(s, o, p) in &scene.gt_triplets {
                let label = cat.label(p);
                if let Some(ok) = geometric_constraint(
                    label,
                    &scene.objects[s].bbox,
                    &scene.objects[o].bbox,
                ) {
                    constrained_seen += 1;
                    assert!(ok, "triplet ({s},{o},{label}) violates its geometry rule");
                }
            }
        }
        assert!(constrained_seen > 0, "no constrained triplets generated");
    }

    #[test]
    fn zipf_head_tail_ratio() {
        let cat = catalog();
        let (_, freqs) = generate_synthetic(
            &SyntheticConfig {
                n_scenes: 500,
                zipf_exponent: 1.5,
                seed: 0,
                ..Default::default()
            },
            &cat,
        )
        .unwrap();
        let max = *freqs.iter().max().unwrap() as f64;
        let min = *freqs.iter().min().unwrap() as f64;
        assert!(
            max / min.max(1.0) >= 20.0,
            "head/tail ratio {} too small",
            max / min.max(1.0)
        );
    }

    #[test]
    fn zipf_zero_is_near_uniform() {
        let cat = catalog();
        let (_, freqs) = generate_synthetic(
            &SyntheticConfig {
                n_scenes: 500,
                zipf_exponent: 0.0,
                seed: 0,
                ..Default::default()
            },
            &cat,
        )
        .unwrap();
        let max = *freqs.iter().max().unwrap() as f64;
        let min = *freqs.iter().min().unwrap() as f64;
        assert!(min > 0.0, "some predicate never generated");
        assert!(max / min < 3.0, "ratio {} not near-uniform", max / min);
    }

    #[test]
    fn zero_objects_rejected() {
        let cat = catalog();
        let err = generate_synthetic(
            &SyntheticConfig {
                n_objects_range: (0, 3),
                ..Default::default()
            },
            &cat,
        );
        assert!(err.is_err());
    }

    #[test]
    fn zero_scenes_is_valid_empty() {
        let cat = catalog();
        let (ds, freqs) = generate_synthetic(
            &SyntheticConfig {
                n_scenes: 0,
                ..Default::default()
            },
            &cat,
        )
        .unwrap();
        assert!(ds.is_empty());
        assert!(freqs.iter().all(|&f| f == 0));
    }

    #[test]
    fn no_duplicate_triplets_and_indices_in_range() {
        let cat = catalog();
        let (ds, _) = generate_synthetic(
            &SyntheticConfig {
                n_scenes: 30,
                seed: 11,
                ..Default::default()
            },
            &cat,
        )
        .unwrap();
        for scene in &ds.scenes {
            let mut seen = std::collections::BTreeSet::new();
            for &(s, o, p) in &scene.gt_triplets {
                assert!(s < scene.objects.len() && o < scene.objects.len());
                assert_ne!(s, o);
                assert!(seen.insert((s, o, p)), "duplicate triplet");
            }
        }
    }
}
