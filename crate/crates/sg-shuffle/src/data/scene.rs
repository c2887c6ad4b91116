use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::catalog::PredicateCatalog;
use super::embedding::EmbeddingProvider;
use super::geometry::BoundingBox;
use super::synthetic::synthesize_visual;
use super::{DataError, Result};

/// One detected or ground-truth object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub bbox: BoundingBox,
    pub label_id: usize,
    /// Visual feature of length `d_v`.
    pub visual: Vec<f64>,
    /// Detector confidence in [0, 1]; `None` for ground truth.
    pub label_score: Option<f64>,
}

/// One image: objects, ground-truth triplets, and (optionally) detector
/// output for the SGCls/SGDet evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub image_size: (f64, f64),
    pub objects: Vec<ObjectInstance>,
    /// (subject index, object index, predicate id).
    pub gt_triplets: Vec<(usize, usize, usize)>,
    pub detected_objects: Option<Vec<ObjectInstance>>,
}

impl SceneRecord {
    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    /// All ordered pairs (s, o) with s != o, in row-major order. Every
    /// per-pair tensor in the model and the evaluator follows this order.
    pub fn ordered_pairs(&self) -> Vec<(usize, usize)> {
        ordered_pairs(self.objects.len())
    }
}

pub fn ordered_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n.saturating_sub(1) * n);
    for s in 0..n {
        for o in 0..n {
            if s != o {
                out.push((s, o));
            }
        }
    }
    out
}

/// Ordered object-class label list; index = object label id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectVocab {
    labels: Vec<String>,
}

pub const DEFAULT_OBJECT_LABELS: [&str; 30] = [
    "person", "tree", "car", "dog", "cat", "building", "shirt", "table", "chair", "horse",
    "plate", "window", "glass", "bus", "hat", "bird", "boy", "girl", "man", "woman", "bottle",
    "cup", "fence", "flower", "food", "grass", "jacket", "kite", "lamp", "leaf",
];

impl ObjectVocab {
    pub fn default_vocab() -> Self {
        Self {
            labels: DEFAULT_OBJECT_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn with_classes(n: usize) -> Self {
        let mut labels: Vec<String> = DEFAULT_OBJECT_LABELS
            .iter()
            .take(n)
            .map(|s| s.to_string())
            .collect();
        for k in labels.len()..n {
            labels.push(format!("object_{k}"));
        }
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn id_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Id of `label`, appending it when unseen.
    pub fn intern(&mut self, label: &str) -> usize {
        match self.id_of(label) {
            Some(id) => id,
            None => {
                self.labels.push(label.to_string());
                self.labels.len() - 1
            }
        }
    }
}

/// Scenes plus the object vocabulary their label ids refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub scenes: Vec<SceneRecord>,
    pub vocab: ObjectVocab,
}

impl SceneDataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Predicate occurrence counts over all ground-truth triplets.
    pub fn count_frequencies(&self, catalog: &mut PredicateCatalog) {
        for scene in &self.scenes {
            catalog.count_triplets(&scene.gt_triplets);
        }
    }
}

// ---- JSON schema -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ObjectJson {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    visual: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ImageJson {
    width: f64,
    height: f64,
    objects: Vec<ObjectJson>,
    triplets: Vec<(usize, usize, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detected_objects: Option<Vec<ObjectJson>>,
}

#[derive(Serialize, Deserialize)]
struct SceneFileJson {
    images: Vec<ImageJson>,
}

fn validate_object(
    path: &str,
    obj: &ObjectJson,
    d_v: usize,
    image: (f64, f64),
    vocab: &mut ObjectVocab,
    provider: &EmbeddingProvider,
) -> Result<ObjectInstance> {
    let bbox = BoundingBox::new(obj.bbox[0], obj.bbox[1], obj.bbox[2], obj.bbox[3]);
    if !bbox.is_valid() {
        return Err(DataError::Validation {
            path: format!("{path}.box"),
            message: format!("invalid box {:?} (need x1 < x2, y1 < y2, finite)", obj.bbox),
        });
    }
    if let Some(score) = obj.score {
        if !(0.0..=1.0).contains(&score) {
            return Err(DataError::Validation {
                path: format!("{path}.score"),
                message: format!("score {score} outside [0, 1]"),
            });
        }
    }
    let label_id = vocab.intern(&obj.label);
    let visual = match &obj.visual {
        Some(v) => {
            if v.len() != d_v {
                return Err(DataError::Validation {
                    path: format!("{path}.visual"),
                    message: format!("visual length {} != configured d_v {}", v.len(), d_v),
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(DataError::Validation {
                    path: format!("{path}.visual"),
                    message: "non-finite visual feature".into(),
                });
            }
            v.clone()
        }
        // Omitted visuals are synthesized from the label embedding and the
        // box geometry, deterministically.
        None => synthesize_visual(provider, &obj.label, &bbox, image, d_v),
    };
    Ok(ObjectInstance {
        bbox,
        label_id,
        visual,
        label_score: obj.score,
    })
}

/// Parse and validate a scene JSON file. `d_v` is the expected visual
/// feature length; objects without a stored `visual` get a deterministic
/// synthesized one.
pub fn load_scenes_json(
    path: &Path,
    catalog: &PredicateCatalog,
    d_v: usize,
    provider: &EmbeddingProvider,
) -> Result<SceneDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_scenes_json(&text, catalog, d_v, provider)
}

pub fn parse_scenes_json(
    text: &str,
    catalog: &PredicateCatalog,
    d_v: usize,
    provider: &EmbeddingProvider,
) -> Result<SceneDataset> {
    let file: SceneFileJson =
        serde_json::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
    let mut vocab = ObjectVocab::default_vocab();
    let mut scenes = Vec::with_capacity(file.images.len());
    for (i, image) in file.images.iter().enumerate() {
        let image_path = format!("images[{i}]");
        if !(image.width > 0.0 && image.height > 0.0) {
            return Err(DataError::Validation {
                path: image_path,
                message: format!("image size {}x{} not positive", image.width, image.height),
            });
        }
        let size = (image.width, image.height);
        let mut objects = Vec::with_capacity(image.objects.len());
        for (j, obj) in image.objects.iter().enumerate() {
            objects.push(validate_object(
                &format!("{image_path}.objects[{j}]"),
                obj,
                d_v,
                size,
                &mut vocab,
                provider,
            )?);
        }
        let mut triplets = Vec::with_capacity(image.triplets.len());
        let mut seen = BTreeSet::new();
        for (k, (s, o, pred)) in image.triplets.iter().enumerate() {
            let t_path = format!("{image_path}.triplets[{k}]");
            if *s >= objects.len() || *o >= objects.len() {
                return Err(DataError::Validation {
                    path: t_path,
                    message: format!("object index out of range ({} objects)", objects.len()),
                });
            }
            if s == o {
                return Err(DataError::Validation {
                    path: t_path,
                    message: "subject and object must differ".into(),
                });
            }
            let pred_id = catalog
                .id_of(pred)
                .ok_or_else(|| DataError::Validation {
                    path: t_path.clone(),
                    message: format!("unknown predicate {pred:?}"),
                })?;
            if !seen.insert((*s, *o, pred_id)) {
                return Err(DataError::Validation {
                    path: t_path,
                    message: format!("duplicate triplet ({s}, {o}, {pred:?})"),
                });
            }
            triplets.push((*s, *o, pred_id));
        }
        let detected = match &image.detected_objects {
            Some(list) => {
                let mut out = Vec::with_capacity(list.len());
                for (j, obj) in list.iter().enumerate() {
                    out.push(validate_object(
                        &format!("{image_path}.detected_objects[{j}]"),
                        obj,
                        d_v,
                        size,
                        &mut vocab,
                        provider,
                    )?);
                }
                Some(out)
            }
            None => None,
        };
        scenes.push(SceneRecord {
            image_size: size,
            objects,
            gt_triplets: triplets,
            detected_objects: detected,
        });
    }
    Ok(SceneDataset { scenes, vocab })
}

pub fn save_scenes_json(
    path: &Path,
    dataset: &SceneDataset,
    catalog: &PredicateCatalog,
) -> Result<()> {
    let text = scenes_to_json(dataset, catalog);
    std::fs::write(path, text)?;
    Ok(())
}

pub fn scenes_to_json(dataset: &SceneDataset, catalog: &PredicateCatalog) -> String {
    let to_object_json = |obj: &ObjectInstance| ObjectJson {
        bbox: [obj.bbox.x1, obj.bbox.y1, obj.bbox.x2, obj.bbox.y2],
        label: dataset.vocab.label(obj.label_id).to_string(),
        visual: Some(obj.visual.clone()),
        score: obj.label_score,
    };
    let file = SceneFileJson {
        images: dataset
            .scenes
            .iter()
            .map(|scene| ImageJson {
                width: scene.image_size.0,
                height: scene.image_size.1,
                objects: scene.objects.iter().map(to_object_json).collect(),
                triplets: scene
                    .gt_triplets
                    .iter()
                    .map(|&(s, o, p)| (s, o, catalog.label(p).to_string()))
                    .collect(),
                detected_objects: scene
                    .detected_objects
                    .as_ref()
                    .map(|list| list.iter().map(to_object_json).collect()),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("scene file serializes")
}
