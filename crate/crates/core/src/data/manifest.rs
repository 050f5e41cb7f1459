use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::load_cloud;
use super::normalize::{normalize, resample};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// One sample: a cloud per structure plus optional supervision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub subject: String,
    /// Cloud files, one per structure, relative to the manifest.
    pub clouds: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Vec<f64>>,
    /// Euler angles applied when the sample was synthesized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[f64; 3]>,
}

/// JSON description of a dataset. All paths are relative to the manifest
/// file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub structures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    /// Optional reference cloud per structure for alignment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub references: Option<Vec<String>>,
    /// Ground-truth deformed vertex ids per structure, shared by all
    /// samples whose clouds use a common vertex ordering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deformed_vertices: Option<Vec<Vec<usize>>>,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn from_json(text: &str, label: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: label.to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.structures == 0 {
            return Err(Error::data("manifest declares zero structures"));
        }
        for s in &self.samples {
            if s.clouds.len() != self.structures {
                return Err(Error::data(format!(
                    "sample {} lists {} clouds but the manifest declares {} structures",
                    s.id,
                    s.clouds.len(),
                    self.structures
                )));
            }
            if let (Some(c), Some(k)) = (s.class, self.classes) {
                if c >= k {
                    return Err(Error::Label(format!(
                        "sample {} has class {c} but the manifest declares {k} classes",
                        s.id
                    )));
                }
            }
        }
        if let Some(r) = &self.references {
            if r.len() != self.structures {
                return Err(Error::data("one reference cloud per structure is required"));
            }
        }
        Ok(())
    }

    /// Subjects in order of first appearance.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for s in &self.samples {
            if !seen.contains(&s.subject) {
                seen.push(s.subject.clone());
            }
        }
        seen
    }

    fn with_samples(&self, samples: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            samples,
            ..self.clone()
        }
    }

    /// Partitions subjects (not samples) into train/validation/test by the
    /// given ratios after a seeded shuffle.
    pub fn split(&self, ratios: [f64; 3], seed: u64) -> Result<[DatasetManifest; 3]> {
        let sum: f64 = ratios.iter().sum();
        if ratios.iter().any(|r| *r < 0.0 || !r.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split ratios must be non-negative and sum to 1, got {ratios:?}"
            )));
        }
        let mut subjects = self.subjects();
        let needed = ratios.iter().filter(|r| **r > 0.0).count();
        if subjects.len() < needed {
            return Err(Error::data(format!(
                "{} subject(s) cannot fill {needed} splits",
                subjects.len()
            )));
        }
        subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = subjects.len();
        let mut counts = [0usize; 3];
        counts[0] = (ratios[0] * n as f64).round() as usize;
        counts[1] = (ratios[1] * n as f64).round() as usize;
        for (i, r) in ratios.iter().enumerate().take(2) {
            if *r > 0.0 {
                counts[i] = counts[i].max(1);
            }
        }
        counts[1] = counts[1].min(n - counts[0].min(n));
        counts[2] = n - counts[0].min(n) - counts[1];
        if ratios[2] > 0.0 && counts[2] == 0 {
            if counts[0] > counts[1] && counts[0] > 1 {
                counts[0] -= 1;
            } else {
                counts[1] -= 1;
            }
            counts[2] = 1;
        }
        let mut assignment: BTreeMap<&str, usize> = BTreeMap::new();
        let mut start = 0;
        for (part, &c) in counts.iter().enumerate() {
            for s in &subjects[start..start + c] {
                assignment.insert(s.as_str(), part);
            }
            start += c;
        }
        let mut parts: [Vec<ManifestEntry>; 3] = Default::default();
        for s in &self.samples {
            parts[assignment[s.subject.as_str()]].push(s.clone());
        }
        let [a, b, c] = parts;
        Ok([
            self.with_samples(a),
            self.with_samples(b),
            self.with_samples(c),
        ])
    }
}

/// In-memory sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub subject: String,
    pub clouds: Vec<PointCloud>,
    pub class: Option<usize>,
    pub target: Option<f64>,
    pub condition: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub normalize: bool,
    /// Resample every cloud to this many points when set.
    pub points: Option<usize>,
    pub seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            normalize: true,
            points: None,
            seed: 0,
        }
    }
}

/// Samples and reference clouds held in memory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub structures: usize,
    pub classes: Option<usize>,
    pub samples: Vec<Sample>,
    pub references: Option<Vec<PointCloud>>,
    pub deformed_vertices: Option<Vec<Vec<usize>>>,
}

/// Resamples and normalizes one cloud as the dataset loader does; `salt`
/// separates the resampling streams of different clouds.
pub fn prepare_cloud(cloud: PointCloud, opts: &LoadOptions, salt: u64) -> Result<PointCloud> {
    let cloud = match opts.points {
        Some(n) if n != cloud.len() => resample(&cloud, n, opts.seed ^ salt)?,
        _ => cloud,
    };
    if opts.normalize {
        normalize(&cloud)
    } else {
        Ok(cloud)
    }
}

impl Dataset {
    /// Reads every cloud referenced by `manifest`, resolving paths against
    /// `base`.
    pub fn from_manifest(
        manifest: &DatasetManifest,
        base: &Path,
        opts: &LoadOptions,
    ) -> Result<Self> {
        manifest.validate()?;
        let resolve = |rel: &str| -> PathBuf { base.join(rel) };
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for (i, e) in manifest.samples.iter().enumerate() {
            let clouds = e
                .clouds
                .iter()
                .enumerate()
                .map(|(s, rel)| {
                    let salt = ((i as u64) << 8) | s as u64;
                    prepare_cloud(load_cloud(&resolve(rel))?, opts, salt)
                })
                .collect::<Result<Vec<_>>>()?;
            samples.push(Sample {
                id: e.id.clone(),
                subject: e.subject.clone(),
                clouds,
                class: e.class,
                target: e.target,
                condition: e.condition.clone(),
            });
        }
        let references = manifest
            .references
            .as_ref()
            .map(|refs| {
                refs.iter()
                    .enumerate()
                    .map(|(s, rel)| {
                        prepare_cloud(load_cloud(&resolve(rel))?, opts, u64::MAX - s as u64)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        Ok(Dataset {
            structures: manifest.structures,
            classes: manifest.classes,
            samples,
            references,
            deformed_vertices: manifest.deformed_vertices.clone(),
        })
    }

    pub fn load(manifest_path: &Path, opts: &LoadOptions) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_manifest(&manifest, base, opts)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_samples(&self, samples: Vec<Sample>) -> Dataset {
        Dataset {
            samples,
            ..self.clone()
        }
    }

    /// Alignment references: the declared ones, otherwise the first sample.
    pub fn reference_clouds(&self) -> Result<Vec<PointCloud>> {
        if let Some(refs) = &self.references {
            return Ok(refs.clone());
        }
        self.samples
            .first()
            .map(|s| s.clouds.clone())
            .ok_or_else(|| Error::data("dataset is empty; no reference cloud available"))
    }

    /// The single-structure dataset made of structure `s` of every sample.
    pub fn select_structure(&self, s: usize) -> Result<Dataset> {
        if s >= self.structures {
            return Err(Error::config(format!(
                "structure {s} requested but the dataset has {}",
                self.structures
            )));
        }
        Ok(Dataset {
            structures: 1,
            classes: self.classes,
            samples: self
                .samples
                .iter()
                .map(|x| Sample {
                    clouds: vec![x.clouds[s].clone()],
                    ..x.clone()
                })
                .collect(),
            references: self.references.as_ref().map(|r| vec![r[s].clone()]),
            deformed_vertices: self
                .deformed_vertices
                .as_ref()
                .and_then(|d| d.get(s).map(|v| vec![v.clone()])),
        })
    }

    /// Number of points per structure, if constant across the dataset.
    pub fn points(&self) -> Option<usize> {
        let n = self.samples.first()?.clouds.first()?.len();
        self.samples
            .iter()
            .all(|s| s.clouds.iter().all(|c| c.len() == n))
            .then_some(n)
    }

    /// Same subject-level partition as [`DatasetManifest::split`].
    pub fn split(&self, ratios: [f64; 3], seed: u64) -> Result<[Dataset; 3]> {
        let manifest = DatasetManifest {
            structures: self.structures,
            samples: self
                .samples
                .iter()
                .map(|s| ManifestEntry {
                    id: s.id.clone(),
                    subject: s.subject.clone(),
                    clouds: vec![String::new(); self.structures],
                    class: None,
                    target: None,
                    condition: None,
                    rotation: None,
                })
                .collect(),
            ..DatasetManifest::default()
        };
        let parts = manifest.split(ratios, seed)?;
        let pick = |m: &DatasetManifest| {
            let ids: Vec<&str> = m.samples.iter().map(|e| e.id.as_str()).collect();
            self.with_samples(
                self.samples
                    .iter()
                    .filter(|s| ids.contains(&s.id.as_str()))
                    .cloned()
                    .collect(),
            )
        };
        Ok([pick(&parts[0]), pick(&parts[1]), pick(&parts[2])])
    }
}
