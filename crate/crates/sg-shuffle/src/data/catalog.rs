use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Result};

/// The four predicate super-types. Order is fixed and used everywhere a
/// per-category list appears (encoder stacks, heads, reports).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Geometric,
    Possessive,
    Semantic,
    Misc,
}

pub const CATEGORIES: [Category; 4] = [
    Category::Geometric,
    Category::Possessive,
    Category::Semantic,
    Category::Misc,
];

impl Category {
    pub fn index(self) -> usize {
        CATEGORIES.iter().position(|c| *c == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Geometric => "Geometric",
            Category::Possessive => "Possessive",
            Category::Semantic => "Semantic",
            Category::Misc => "Misc",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Deserialize, Serialize)]
struct CatalogFileEntry {
    label: String,
    category: Category,
}

#[derive(Deserialize, Serialize)]
struct CatalogFile {
    predicates: Vec<CatalogFileEntry>,
}

/// Predicate labels (index = class id), their category assignment, and
/// corpus frequencies. Categories partition the label set.
#[derive(Debug, Clone)]
pub struct PredicateCatalog {
    labels: Vec<String>,
    categories: Vec<Category>,
    frequencies: Vec<u64>,
}

const DEFAULT_CATALOG_JSON: &str = include_str!("../../data/predicate_catalog.json");

impl PredicateCatalog {
    /// The bundled 50-predicate catalog (15 Geometric / 8 Possessive /
    /// 24 Semantic / 3 Misc).
    pub fn default_catalog() -> Self {
        Self::from_json(DEFAULT_CATALOG_JSON).expect("bundled catalog is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CatalogFile =
            serde_json::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
        let mut labels = Vec::with_capacity(file.predicates.len());
        let mut categories = Vec::with_capacity(file.predicates.len());
        for entry in file.predicates {
            if labels.contains(&entry.label) {
                return Err(DataError::Schema(format!(
                    "duplicate predicate label {:?}",
                    entry.label
                )));
            }
            labels.push(entry.label);
            categories.push(entry.category);
        }
        let frequencies = vec![0; labels.len()];
        Ok(Self {
            labels,
            categories,
            frequencies,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CatalogFile {
            predicates: self
                .labels
                .iter()
                .zip(&self.categories)
                .map(|(label, category)| CatalogFileEntry {
                    label: label.clone(),
                    category: *category,
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&file).expect("catalog serializes");
        std::fs::write(path, text)?;
        Ok(())
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

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn category_of(&self, id: usize) -> Category {
        self.categories[id]
    }

    /// Class ids belonging to `category`, in ascending order.
    pub fn ids_in_category(&self, category: Category) -> Vec<usize> {
        (0..self.len())
            .filter(|&id| self.categories[id] == category)
            .collect()
    }

    pub fn category_size(&self, category: Category) -> usize {
        self.categories.iter().filter(|c| **c == category).count()
    }

    /// Position of predicate `id` within its own category's id list.
    pub fn within_category_index(&self, id: usize) -> usize {
        self.ids_in_category(self.categories[id])
            .iter()
            .position(|&p| p == id)
            .unwrap()
    }

    pub fn frequency(&self, id: usize) -> u64 {
        self.frequencies[id]
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequencies
    }

    pub fn set_frequencies(&mut self, freqs: Vec<u64>) -> Result<()> {
        if freqs.len() != self.len() {
            return Err(DataError::Schema(format!(
                "{} frequencies for {} predicates",
                freqs.len(),
                self.len()
            )));
        }
        self.frequencies = freqs;
        Ok(())
    }

    /// Add every ground-truth predicate occurrence in `triplets` to the
    /// frequency table.
    pub fn count_triplets<'a, I: IntoIterator<Item = &'a (usize, usize, usize)>>(
        &mut self,
        triplets: I,
    ) {
        for &(_, _, predicate) in triplets {
            self.frequencies[predicate] += 1;
        }
    }

    pub fn load_frequencies(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        let map: BTreeMap<String, u64> =
            serde_json::from_str(&text).map_err(|e| DataError::Schema(e.to_string()))?;
        let mut freqs = vec![0; self.len()];
        for (label, count) in map {
            let id = self
                .id_of(&label)
                .ok_or_else(|| DataError::UnknownPredicate(label.clone()))?;
            freqs[id] = count;
        }
        self.frequencies = freqs;
        Ok(())
    }

    pub fn save_frequencies(&self, path: &Path) -> Result<()> {
        let map: BTreeMap<&str, u64> = self
            .labels
            .iter()
            .map(String::as_str)
            .zip(self.frequencies.iter().copied())
            .collect();
        std::fs::write(path, serde_json::to_string_pretty(&map).unwrap())?;
        Ok(())
    }
}
