//! Seeded synthetic shape dataset: deformed ellipsoids (and optionally tori)
//! with a class-dependent bump and a continuous per-subject deformation.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::io::write_ply;
use super::manifest::{Dataset, DatasetManifest, ManifestEntry, Sample};
use crate::autodiff::euler_matrix;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Fibonacci lattice shared by every sample: vertex `i` is the same
    /// surface location across the dataset.
    #[default]
    Lattice,
    /// Independent uniform parameter draws per sample.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    /// Ellipsoid semi-axes `(a, b, c)`.
    pub radii: [f64; 3],
    /// Direction of the bump center (normalized on use).
    pub bump_center: [f64; 3],
    /// Angular radius of the bump cap in degrees.
    pub bump_radius_deg: f64,
    /// Bump amplitude for each class; the class count is this length.
    pub amplitudes: Vec<f64>,
    /// Per-subject taper magnitude is drawn from `U(0, deformation_max)`.
    pub deformation_max: f64,
    /// Per-subject harmonic bend amplitude is drawn from `U(-h, h)`.
    pub harmonic_max: f64,
    /// Euler angles are drawn from `U(-r, r)` degrees per axis.
    pub rotation_deg: f64,
    pub jitter: f64,
    pub points: usize,
    pub per_class: usize,
    /// 1 for the ellipsoid alone, 2 to add a torus.
    pub structures: usize,
    pub samples_per_subject: usize,
    pub sampling: Sampling,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            radii: [1.0, 0.75, 0.55],
            bump_center: [0.0, 0.0, 1.0],
            bump_radius_deg: 30.0,
            amplitudes: vec![0.0, 0.25],
            deformation_max: 0.4,
            harmonic_max: 0.05,
            rotation_deg: 0.0,
            jitter: 0.005,
            points: 512,
            per_class: 100,
            structures: 1,
            samples_per_subject: 1,
            sampling: Sampling::Lattice,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn classes(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn total(&self) -> usize {
        self.classes() * self.per_class
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("phantom spec: {m}")));
        if self.radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("radii must be positive");
        }
        if self.points == 0 {
            return bad("points must be at least 1");
        }
        if self.amplitudes.is_empty() || self.amplitudes.iter().any(|a| !a.is_finite()) {
            return bad("amplitudes must be a nonempty list of finite values");
        }
        let c = self.bump_center;
        if (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt() == 0.0 {
            return bad("bump_center must be nonzero");
        }
        if !(1..=2).contains(&self.structures) {
            return bad("structures must be 1 or 2");
        }
        if self.samples_per_subject == 0 || !self.total().is_multiple_of(self.samples_per_subject) {
            return bad("samples_per_subject must divide the sample count");
        }
        for (name, v) in [
            ("bump_radius_deg", self.bump_radius_deg),
            ("deformation_max", self.deformation_max),
            ("harmonic_max", self.harmonic_max),
            ("rotation_deg", self.rotation_deg),
            ("jitter", self.jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    fn center(&self) -> [f64; 3] {
        let c = self.bump_center;
        let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        [c[0] / n, c[1] / n, c[2] / n]
    }
}

/// A surface point before deformation: position and outward unit direction
/// used for the bump.
#[derive(Clone, Copy)]
struct Site {
    pos: [f64; 3],
    dir: [f64; 3],
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

fn ellipsoid_sites(spec: &PhantomSpec, params: &[(f64, f64)]) -> Vec<Site> {
    let [a, b, c] = spec.radii;
    params
        .iter()
        .map(|&(cos_t, phi)| {
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            let u = [sin_t * phi.cos(), sin_t * phi.sin(), cos_t];
            Site {
                pos: [a * u[0], b * u[1], c * u[2]],
                dir: u,
            }
        })
        .collect()
}

fn torus_sites(spec: &PhantomSpec, params: &[(f64, f64)]) -> Vec<Site> {
    let big = 0.7 * spec.radii[0];
    let small = 0.3 * spec.radii[0];
    params
        .iter()
        .map(|&(s, t)| {
            let (u, v) = (2.0 * PI * s, 2.0 * PI * t);
            let n = [v.cos() * u.cos(), v.cos() * u.sin(), v.sin()];
            Site {
                pos: [
                    (big + small * v.cos()) * u.cos(),
                    (big + small * v.cos()) * u.sin(),
                    small * v.sin(),
                ],
                dir: n,
            }
        })
        .collect()
}

/// Surface parameters for `n` points: lattice or uniform random.
fn surface_params(
    structure: usize,
    n: usize,
    sampling: Sampling,
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| match (structure, sampling) {
            (0, Sampling::Lattice) => {
                let cos_t = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                (cos_t, 2.0 * PI * (i as f64 * GOLDEN).fract())
            }
            (0, Sampling::Random) => (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI)),
            (_, Sampling::Lattice) => ((i as f64 + 0.5) / n as f64, (i as f64 * GOLDEN).fract()),
            (_, Sampling::Random) => (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)),
        })
        .collect()
}

fn sites(spec: &PhantomSpec, structure: usize, rng: &mut ChaCha8Rng) -> Vec<Site> {
    let params = surface_params(structure, spec.points, spec.sampling, rng);
    if structure == 0 {
        ellipsoid_sites(spec, &params)
    } else {
        torus_sites(spec, &params)
    }
}

/// Raised-cosine weight of a site inside the bump cap, 0 outside.
fn bump_weight(dir: [f64; 3], center: [f64; 3], cap: f64) -> f64 {
    let dot = (dir[0] * center[0] + dir[1] * center[1] + dir[2] * center[2]).clamp(-1.0, 1.0);
    let angle = dot.acos();
    if angle < cap {
        0.5 * (1.0 + (PI * angle / cap).cos())
    } else {
        0.0
    }
}

struct SubjectShape {
    class: usize,
    taper: f64,
    harmonic: f64,
}

fn deform(spec: &PhantomSpec, sites: &[Site], shape: &SubjectShape) -> Vec<[f64; 3]> {
    let center = spec.center();
    let cap = spec.bump_radius_deg.to_radians();
    let amp = spec.amplitudes[shape.class];
    let a = spec.radii[0];
    sites
        .iter()
        .map(|s| {
            let w = amp * bump_weight(s.dir, center, cap);
            let p = [
                s.pos[0] + w * s.dir[0],
                s.pos[1] + w * s.dir[1],
                s.pos[2] + w * s.dir[2],
            ];
            let t = 1.0 + shape.taper * p[0] / a;
            [
                p[0],
                p[1] * t,
                p[2] * t + shape.harmonic * (PI * p[0] / a).sin(),
            ]
        })
        .collect()
}

/// A generated dataset held in memory (clouds are not normalized).
#[derive(Clone, Debug)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub dataset: Dataset,
    /// Euler angles applied to each sample, in sample order.
    pub rotations: Vec<[f64; 3]>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SUBJECT_STREAM: u64 = 1 << 40;
const SAMPLE_STREAM: u64 = 2 << 40;

impl Phantom {
    pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
        spec.validate()?;
        let classes = spec.classes();
        let total = spec.total();
        let subjects = total / spec.samples_per_subject;
        let jitter = Normal::new(0.0, spec.jitter).map_err(|e| Error::config(e.to_string()))?;
        let center = spec.center();
        let cap = spec.bump_radius_deg.to_radians();

        let mut lattice_rng = rng_for(spec.seed, 0);
        let shared: Option<Vec<Vec<Site>>> = (spec.sampling == Sampling::Lattice).then(|| {
            (0..spec.structures)
                .map(|s| sites(spec, s, &mut lattice_rng))
                .collect()
        });

        let shapes: Vec<SubjectShape> = (0..subjects)
            .map(|j| {
                let mut rng = rng_for(spec.seed, SUBJECT_STREAM + j as u64);
                SubjectShape {
                    class: j % classes,
                    taper: rng.gen_range(0.0..=spec.deformation_max),
                    harmonic: rng.gen_range(-spec.harmonic_max..=spec.harmonic_max),
                }
            })
            .collect();

        let mut samples = Vec::with_capacity(total);
        let mut rotations = Vec::with_capacity(total);
        for i in 0..total {
            let j = i / spec.samples_per_subject;
            let shape = &shapes[j];
            let mut rng = rng_for(spec.seed, SAMPLE_STREAM + i as u64);
            let r = spec.rotation_deg.to_radians();
            let theta = if r > 0.0 {
                [
                    rng.gen_range(-r..=r),
                    rng.gen_range(-r..=r),
                    rng.gen_range(-r..=r),
                ]
            } else {
                [0.0; 3]
            };
            let rot = euler_matrix(theta);
            let clouds = (0..spec.structures)
                .map(|s| {
                    let own;
                    let base = match &shared {
                        Some(sh) => &sh[s],
                        None => {
                            own = sites(spec, s, &mut rng);
                            &own
                        }
                    };
                    let pts = deform(spec, base, shape);
                    let mut cloud = PointCloud::new(pts).transformed(&rot);
                    if spec.jitter > 0.0 {
                        for p in cloud.points_mut() {
                            for v in p.iter_mut() {
                                *v += jitter.sample(&mut rng);
                            }
                        }
                    }
                    cloud
                })
                .collect();
            samples.push(Sample {
                id: format!("p{i:04}"),
                subject: format!("sub{j:04}"),
                clouds,
                class: Some(shape.class),
                target: Some(shape.taper),
                condition: None,
            });
            rotations.push(theta);
        }

        let template = SubjectShape {
            class: 0,
            taper: 0.0,
            harmonic: 0.0,
        };
        let mut ref_rng = rng_for(spec.seed, 1);
        let (references, deformed_vertices) = {
            let per_structure: Vec<Vec<Site>> = match &shared {
                Some(sh) => sh.clone(),
                None => (0..spec.structures)
                    .map(|s| sites(spec, s, &mut ref_rng))
                    .collect(),
            };
            let refs = per_structure
                .iter()
                .map(|st| {
                    let neutral = PhantomSpec {
                        amplitudes: vec![0.0],
                        ..spec.clone()
                    };
                    PointCloud::new(deform(&neutral, st, &template))
                })
                .collect::<Vec<_>>();
            let deformed = shared.as_ref().map(|sh| {
                sh.iter()
                    .map(|st| {
                        st.iter()
                            .enumerate()
                            .filter(|(_, s)| bump_weight(s.dir, center, cap) > 0.0)
                            .map(|(i, _)| i)
                            .collect::<Vec<usize>>()
                    })
                    .collect::<Vec<_>>()
            });
            (refs, deformed)
        };

        Ok(Phantom {
            spec: spec.clone(),
            dataset: Dataset {
                structures: spec.structures,
                classes: Some(classes),
                samples,
                references: Some(references),
                deformed_vertices,
            },
            rotations,
        })
    }

    /// Writes `manifest.json`, `references/` and `clouds/` under `out`.
    pub fn write(&self, out: &Path) -> Result<DatasetManifest> {
        let clouds_dir = out.join("clouds");
        let refs_dir = out.join("references");
        for d in [&clouds_dir, &refs_dir] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let mut entries = Vec::with_capacity(self.dataset.samples.len());
        for (sample, rot) in self.dataset.samples.iter().zip(&self.rotations) {
            let mut files = Vec::with_capacity(sample.clouds.len());
            for (s, cloud) in sample.clouds.iter().enumerate() {
                let rel = format!("clouds/{}_s{s}.ply", sample.id);
                write_ply(&out.join(&rel), cloud, None)?;
                files.push(rel);
            }
            entries.push(ManifestEntry {
                id: sample.id.clone(),
                subject: sample.subject.clone(),
                clouds: files,
                class: sample.class,
                target: sample.target,
                condition: None,
                rotation: Some(*rot),
            });
        }
        let mut refs = Vec::new();
        for (s, cloud) in self.dataset.references.iter().flatten().enumerate() {
            let rel = format!("references/reference_s{s}.ply");
            write_ply(&out.join(&rel), cloud, None)?;
            refs.push(rel);
        }
        let manifest = DatasetManifest {
            structures: self.dataset.structures,
            classes: self.dataset.classes,
            references: Some(refs),
            deformed_vertices: self.dataset.deformed_vertices.clone(),
            samples: entries,
        };
        manifest.save(&out.join("manifest.json"))?;
        Ok(manifest)
    }
}

/// Generates the dataset described by `spec` and writes it under `out`.
pub fn make_phantom_dataset(spec: &PhantomSpec, out: &Path) -> Result<DatasetManifest> {
    Phantom::generate(spec)?.write(out)
}
