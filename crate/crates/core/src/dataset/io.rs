//! Dataset directory: `manifest.toml` plus `records.bin`.
//!
//! `records.bin` is the `PHYT` header, `u32 rows`, `u32 cols`, then one CRC
//! framed record per entry. A record payload holds, in order: object, grasp
//! and frame indices (`u32`), the object id (`u32` length + UTF-8), command
//! and feedback apertures, window width/height and grasp-center height
//! (`f32`), the patch point count (`u32`) and points (`3 × f32` each), the
//! depth map, the current imprint and the optimal imprint (`rows × cols`
//! `f32` each, row-major).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::container::{self, Decoder, Encoder, FORMAT_VERSION};
use crate::dataset::{DatasetManifest, GraspRecord};
use crate::error::{Error, Result};
use crate::geometry::{ContactPatch, DepthMap};
use crate::image::ImprintImage;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const RECORDS_FILE: &str = "records.bin";

const HEADER_LEN: u64 = 16;

fn encode_record(r: &GraspRecord) -> Vec<u8> {
    let mut e = Encoder::new();
    e.u32(r.object_index as u32)
        .u32(r.grasp_index as u32)
        .u32(r.frame_index as u32)
        .str(&r.object_id)
        .f32(r.command_u)
        .f32(r.feedback_u)
        .f32(r.patch.window_w)
        .f32(r.patch.window_h)
        .f32(r.patch.center_z)
        .u32(r.patch.points.len() as u32);
    for p in &r.patch.points {
        e.f32s(p);
    }
    e.f32s(&r.patch.depth_map.data)
        .f32s(r.imprint_current.pixels())
        .f32s(r.imprint_optimal.pixels());
    e.into_bytes()
}

fn decode_record(bytes: &[u8], rows: usize, cols: usize) -> Result<GraspRecord> {
    let mut d = Decoder::new(bytes, "record");
    let object_index = d.u32()? as usize;
    let grasp_index = d.u32()? as usize;
    let frame_index = d.u32()? as usize;
    let object_id = d.str()?;
    let command_u = d.f32()?;
    let feedback_u = d.f32()?;
    let window_w = d.f32()?;
    let window_h = d.f32()?;
    let center_z = d.f32()?;
    let n = d.u32()? as usize;
    let flat = d.f32s(3 * n)?;
    let points = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let cells = rows * cols;
    let depth = d.f32s(cells)?;
    let current = ImprintImage::new(rows, cols, d.f32s(cells)?)?;
    let optimal = ImprintImage::new(rows, cols, d.f32s(cells)?)?;
    if !d.finished() {
        return Err(Error::Format("trailing bytes in record payload".into()));
    }
    Ok(GraspRecord {
        object_id,
        object_index,
        grasp_index,
        frame_index,
        patch: ContactPatch {
            points,
            window_w,
            window_h,
            center_z,
            depth_map: DepthMap { rows, cols, data: depth },
        },
        command_u,
        feedback_u,
        imprint_current: current,
        imprint_optimal: optimal,
    })
}

/// Writes both files; returns the manifest with record offsets filled in.
pub fn write_dataset(dir: &Path, mut manifest: DatasetManifest, records: &[GraspRecord]) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bin_path = dir.join(RECORDS_FILE);
    let file = File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&bin_path, e);
    container::write_header(&mut w).map_err(io)?;
    w.write_all(&(manifest.sensor.rows as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(manifest.sensor.cols as u32).to_le_bytes()).map_err(io)?;
    let mut offset = HEADER_LEN;
    manifest.offsets.clear();
    for r in records {
        let payload = encode_record(r);
        manifest.offsets.push(offset);
        container::write_frame(&mut w, &payload).map_err(io)?;
        offset += payload.len() as u64 + 8;
    }
    w.flush().map_err(io)?;
    manifest.record_count = records.len();
    manifest.format_version = FORMAT_VERSION;
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let man_path = dir.join(MANIFEST_FILE);
    std::fs::write(&man_path, text).map_err(|e| Error::io(&man_path, e))?;
    Ok(manifest)
}

/// Opened dataset directory; records are streamed, never loaded wholesale.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    records_path: PathBuf,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Dataset> {
        let man_path = dir.join(MANIFEST_FILE);
        if !man_path.exists() {
            return Err(Error::MissingArtifact {
                path: man_path,
                stage: "gen-data",
            });
        }
        let text = std::fs::read_to_string(&man_path).map_err(|e| Error::io(&man_path, e))?;
        let manifest: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", man_path.display())))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if manifest.offsets.len() != manifest.record_count {
            return Err(Error::Format(format!(
                "manifest lists {} offsets for {} records",
                manifest.offsets.len(),
                manifest.record_count
            )));
        }
        let records_path = dir.join(RECORDS_FILE);
        let ds = Dataset { manifest, records_path };
        // Validate the header eagerly so a bad file fails at open.
        ds.open_stream()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.manifest.record_count
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.record_count == 0
    }

    fn open_stream(&self) -> Result<BufReader<File>> {
        let file = File::open(&self.records_path).map_err(|e| Error::io(&self.records_path, e))?;
        let mut r = BufReader::new(file);
        let name = self.records_path.display().to_string();
        container::read_header(&mut r, &name)?;
        let mut dims = [0u8; 8];
        r.read_exact(&mut dims).map_err(|_| Error::Truncated(format!("{name}: grid header")))?;
        let rows = u32::from_le_bytes(dims[..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(dims[4..].try_into().unwrap()) as usize;
        if (rows, cols) != (self.manifest.sensor.rows, self.manifest.sensor.cols) {
            return Err(Error::Format(format!(
                "{name}: grid {rows}x{cols} does not match manifest {}x{}",
                self.manifest.sensor.rows, self.manifest.sensor.cols
            )));
        }
        Ok(r)
    }

    pub fn records(&self) -> Result<RecordIter> {
        Ok(RecordIter {
            reader: self.open_stream()?,
            manifest: self.manifest.clone(),
            next: 0,
            failed: false,
        })
    }

    /// Random access through the manifest offsets.
    pub fn read(&self, index: usize) -> Result<GraspRecord> {
        let offset = *self
            .manifest
            .offsets
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("record {index} out of range ({} records)", self.len())))?;
        let mut r = self.open_stream()?;
        r.seek(SeekFrom::Start(offset)).map_err(|e| Error::io(&self.records_path, e))?;
        let payload = container::read_frame(&mut r, index)?
            .ok_or_else(|| Error::Truncated(format!("record {index} missing")))?;
        let rec = decode_record(&payload, self.manifest.sensor.rows, self.manifest.sensor.cols)?;
        self.check(index, &rec)?;
        Ok(rec)
    }

    pub fn load_all(&self) -> Result<Vec<GraspRecord>> {
        self.records()?.collect()
    }

    fn check(&self, index: usize, rec: &GraspRecord) -> Result<()> {
        check_record(&self.manifest, index, rec)
    }
}

fn check_record(manifest: &DatasetManifest, index: usize, rec: &GraspRecord) -> Result<()> {
    rec.validate(index, &manifest.sensor, manifest.aperture_max)?;
    let obj = manifest.object(rec.object_index)?;
    if obj.id != rec.object_id {
        return Err(Error::InvalidRecord {
            index,
            reason: format!("object id {} does not match manifest entry {}", rec.object_id, obj.id),
        });
    }
    Ok(())
}

pub struct RecordIter {
    reader: BufReader<File>,
    manifest: DatasetManifest,
    next: usize,
    failed: bool,
}

impl Iterator for RecordIter {
    type Item = Result<GraspRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let index = self.next;
        let out = match container::read_frame(&mut self.reader, index) {
            Ok(None) if index == self.manifest.record_count => return None,
            Ok(None) => Err(Error::Truncated(format!(
                "records file ends after {index} of {} records",
                self.manifest.record_count
            ))),
            Ok(Some(_)) if index >= self.manifest.record_count => {
                Err(Error::Format(format!("records file holds more than {} records", self.manifest.record_count)))
            }
            Ok(Some(payload)) => decode_record(&payload, self.manifest.sensor.rows, self.manifest.sensor.cols)
                .and_then(|rec| check_record(&self.manifest, index, &rec).map(|_| rec)),
            Err(e) => Err(e),
        };
        self.next += 1;
        if out.is_err() {
            self.failed = true;
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize_records, DatasetConfig};
    use crate::plant::PlantConfig;

    fn tiny() -> DatasetConfig {
        DatasetConfig {
            objects: 1,
            grasps_per_object: 2,
            frames_per_grasp: 3,
            surface_points: 8000,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let g = synthesize_records(&tiny(), &PlantConfig::default(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path(), g.manifest.clone(), &g.records).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.manifest, m);
        let loaded = ds.load_all().unwrap();
        assert_eq!(loaded, g.records);
        assert_eq!(ds.read(4).unwrap(), g.records[4]);
    }

    #[test]
    fn empty_dataset() {
        let mut g = synthesize_records(&tiny(), &PlantConfig::default(), 3).unwrap();
        g.records.clear();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), g.manifest, &[]).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.records().unwrap().count(), 0);
    }

    #[test]
    fn corruption_is_detected() {
        let g = synthesize_records(&tiny(), &PlantConfig::default(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), g.manifest.clone(), &g.records).unwrap();
        let bin = dir.path().join(RECORDS_FILE);
        let clean = std::fs::read(&bin).unwrap();

        let mut bad_magic = clean.clone();
        bad_magic[0] = b'X';
        std::fs::write(&bin, &bad_magic).unwrap();
        assert!(matches!(Dataset::open(dir.path()), Err(Error::BadMagic(_))));

        let mut flipped = clean.clone();
        let mid = HEADER_LEN as usize + 40;
        flipped[mid] ^= 0x55;
        std::fs::write(&bin, &flipped).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let first = ds.records().unwrap().next().unwrap();
        assert!(matches!(first, Err(Error::Checksum { index: 0 })));

        let mut version = clean.clone();
        version[4] = 2;
        std::fs::write(&bin, &version).unwrap();
        assert!(matches!(Dataset::open(dir.path()), Err(Error::VersionMismatch { found: 2, .. })));

        std::fs::write(&bin, &clean[..clean.len() - 100]).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let results: Vec<_> = ds.records().unwrap().collect();
        assert!(matches!(results.last().unwrap(), Err(Error::Truncated(_))));
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        crate::dataset::generate_dataset(&tiny(), &PlantConfig::default(), 11, a.path()).unwrap();
        crate::dataset::generate_dataset(&tiny(), &PlantConfig::default(), 11, b.path()).unwrap();
        for f in [MANIFEST_FILE, RECORDS_FILE] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
    }

    #[test]
    fn missing_manifest_names_stage() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Dataset::open(dir.path()), Err(Error::MissingArtifact { stage: "gen-data", .. })));
    }
}
