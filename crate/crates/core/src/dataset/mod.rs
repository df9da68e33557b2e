//! Record schema, synthetic objects and grasps, and the on-disk format.

mod candidates;
mod generate;
mod io;
mod object;
mod record;

pub use candidates::{flattest_candidate, random_candidate, synthesize_candidates, synthesize_ranking_scene, RankingScene};
pub use generate::{generate_dataset, synthesize_records, DatasetConfig, GeneratedDataset};
pub use io::{write_dataset, Dataset, RecordIter, MANIFEST_FILE, RECORDS_FILE};
pub use object::{load_point_cloud_text, synthesize_object, ClassParams, ObjectSpec, TextureClass};
pub use record::{DatasetManifest, GraspCandidate, GraspRecord, ObjectEntry, Sensor};
