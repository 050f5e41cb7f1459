//! Point-cloud files, normalization, dataset manifests and the synthetic
//! phantom generator.

mod io;
mod manifest;
mod normalize;
mod phantom;

pub use io::{load_cloud, parse_csv, parse_ply, ply_string, write_csv, write_ply};
pub use manifest::{prepare_cloud, Dataset, DatasetManifest, LoadOptions, ManifestEntry, Sample};
pub use normalize::{normalize, resample};
pub use phantom::{make_phantom_dataset, Phantom, PhantomSpec, Sampling};
