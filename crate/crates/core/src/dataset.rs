//! Dataset files: a length-prefixed JSON header line followed by fixed-size
//! little-endian records.
//!
//! Record layout for an `E`-element array:
//! `E·E·2` f32 feature values in `(i, j, channel)` order, `n_S`, `n_M`,
//! `n_P`, `class18` as u8, SNR as f32, five `(elevation, azimuth)` f32 pairs
//! padded with NaN, overloaded flag as u8, record seed as u64.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{mix, sample_scenario, synthesize_blocks, Scenario, ScenarioConfig, Snapshot};
use crate::covariance::{estimate_covariance, to_feature};
use crate::error::{Error, Result};
use crate::label::ModelOrderLabel;
use crate::manifold::{ArrayGeometry, DirectionPair};

pub const MAGIC: &str = "MOEDATA1";
pub const VERSION: u32 = 1;
pub const STORED_DIRECTIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    /// Preset name the array was selected by.
    pub array: String,
    pub geometry: ArrayGeometry,
    pub elements: usize,
    pub samples_per_block: usize,
    pub count: usize,
    pub seed: u64,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// `(i, j, channel)` order, channel 0 real, 1 imaginary.
    pub feature: Vec<f32>,
    pub n_s: u8,
    pub n_m: u8,
    pub n_p: u8,
    pub class18: u8,
    pub snr_db: f32,
    /// `(elevation, azimuth)` radians; NaN past the stored paths.
    pub directions: [(f32, f32); STORED_DIRECTIONS],
    pub overloaded: bool,
    pub seed: u64,
}

impl Record {
    pub fn label(&self) -> ModelOrderLabel {
        ModelOrderLabel {
            n_s: self.n_s,
            n_m: self.n_m,
            n_p: self.n_p,
            class18: self.class18,
        }
    }

    pub fn byte_len(elements: usize) -> usize {
        elements * elements * 2 * 4 + 4 + 4 + STORED_DIRECTIONS * 8 + 1 + 8
    }

    fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        for v in &self.feature {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&[self.n_s, self.n_m, self.n_p, self.class18])?;
        out.write_all(&self.snr_db.to_le_bytes())?;
        for (el, az) in &self.directions {
            out.write_all(&el.to_le_bytes())?;
            out.write_all(&az.to_le_bytes())?;
        }
        out.write_all(&[self.overloaded as u8])?;
        out.write_all(&self.seed.to_le_bytes())
    }

    fn parse(bytes: &[u8], elements: usize) -> Result<Self> {
        let mut pos = 0;
        let f32_at = |pos: &mut usize| {
            let v = f32::from_le_bytes(bytes[*pos..*pos + 4].try_into().expect("4 bytes"));
            *pos += 4;
            v
        };
        let n_feat = elements * elements * 2;
        let feature: Vec<f32> = (0..n_feat).map(|_| f32_at(&mut pos)).collect();
        let (n_s, n_m, n_p, class18) = (bytes[pos], bytes[pos + 1], bytes[pos + 2], bytes[pos + 3]);
        pos += 4;
        let snr_db = f32_at(&mut pos);
        let mut directions = [(f32::NAN, f32::NAN); STORED_DIRECTIONS];
        for d in directions.iter_mut() {
            let el = f32_at(&mut pos);
            let az = f32_at(&mut pos);
            *d = (el, az);
        }
        let overloaded = match bytes[pos] {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("overloaded flag {other}"))),
        };
        pos += 1;
        let seed = u64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8 bytes"));
        Ok(Self {
            feature,
            n_s,
            n_m,
            n_p,
            class18,
            snr_db,
            directions,
            overloaded,
            seed,
        })
    }
}

/// Seed of record `k` in a dataset seeded with `seed`.
pub fn record_seed(seed: u64, k: usize) -> u64 {
    mix(seed, k as u64)
}

/// Scenario of the record with seed `rec_seed`.
pub fn record_scenario(config: &ScenarioConfig, rec_seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(rec_seed);
    sample_scenario(&mut rng, config, None)
}

/// Blocks `0..count` of the record with seed `rec_seed`; block 0 is the one
/// whose feature the record stores.
pub fn record_blocks(
    config: &ScenarioConfig,
    geom: &ArrayGeometry,
    rec_seed: u64,
    count: usize,
) -> Result<(Scenario, Vec<Snapshot>)> {
    let scenario = record_scenario(config, rec_seed)?;
    let blocks = synthesize_blocks(&scenario, geom, count, mix(rec_seed, u64::MAX))?;
    Ok((scenario, blocks))
}

pub fn make_record(scenario: &Scenario, block: &Snapshot, rec_seed: u64) -> Result<Record> {
    let feature = to_feature(&estimate_covariance(block)?);
    let mut directions = [(f32::NAN, f32::NAN); STORED_DIRECTIONS];
    for (slot, d) in directions.iter_mut().zip(scenario.directions()) {
        *slot = (d.elevation() as f32, d.azimuth() as f32);
    }
    let l = scenario.label;
    Ok(Record {
        feature: feature.values().iter().map(|&v| v as f32).collect(),
        n_s: l.n_s,
        n_m: l.n_m,
        n_p: l.n_p,
        class18: l.class18,
        snr_db: scenario.los_snr_db as f32,
        directions,
        overloaded: l.is_overloaded(),
        seed: rec_seed,
    })
}

pub fn generate_records(
    config: &ScenarioConfig,
    geom: &ArrayGeometry,
    count: usize,
    seed: u64,
) -> Result<Vec<Record>> {
    config.validate(geom.elements())?;
    (0..count)
        .map(|k| {
            let rs = record_seed(seed, k);
            let (scenario, blocks) = record_blocks(config, geom, rs, 1)?;
            make_record(&scenario, &blocks[0], rs)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSummary {
    pub count: usize,
    pub bytes: u64,
    /// Records per class, index `c − 1` for class `c` in 1..=19.
    pub class_counts: [usize; 19],
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, records: &[Record]) -> Result<DatasetSummary> {
    if header.count != records.len() {
        return Err(Error::InvalidInput(format!(
            "header announces {} records, got {}",
            header.count,
            records.len()
        )));
    }
    let json = serde_json::to_string(header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{MAGIC} {} {json}", json.len())?;
    let mut class_counts = [0usize; 19];
    for r in records {
        if r.feature.len() != header.elements * header.elements * 2 {
            return Err(Error::InvalidInput("record feature size disagrees with header".into()));
        }
        r.write_to(&mut out)?;
        if (1..=19).contains(&r.class18) {
            class_counts[r.class18 as usize - 1] += 1;
        }
    }
    out.flush()?;
    let bytes = std::fs::metadata(path)?.len();
    Ok(DatasetSummary {
        count: records.len(),
        bytes,
        class_counts,
    })
}

/// Generates `count` records and writes them to `path`.
pub fn generate_dataset(
    config: &ScenarioConfig,
    geom: &ArrayGeometry,
    array: &str,
    count: usize,
    seed: u64,
    path: &Path,
) -> Result<DatasetSummary> {
    if count == 0 {
        return Err(Error::EmptyInput("record count"));
    }
    let records = generate_records(config, geom, count, seed)?;
    let header = DatasetHeader {
        version: VERSION,
        array: array.to_string(),
        geometry: *geom,
        elements: geom.elements(),
        samples_per_block: config.samples_per_block,
        count,
        seed,
        config: config.clone(),
    };
    write_dataset(path, &header, &records)
}

pub fn read_header(reader: &mut impl BufRead) -> Result<DatasetHeader> {
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    let text = std::str::from_utf8(&line).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let text = text
        .strip_suffix('\n')
        .ok_or_else(|| Error::Format("unterminated header".into()))?;
    let rest = text
        .strip_prefix(MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::Format("missing dataset magic".into()))?;
    let (len, json) = rest
        .split_once(' ')
        .ok_or_else(|| Error::Format("missing header length".into()))?;
    let len: usize = len.parse().map_err(|_| Error::Format(format!("bad header length {len:?}")))?;
    if json.len() != len {
        return Err(Error::Format(format!("header length {len} but {} bytes follow", json.len())));
    }
    let header: DatasetHeader = serde_json::from_str(json).map_err(|e| Error::Format(e.to_string()))?;
    if header.version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {}", header.version)));
    }
    if header.elements != header.geometry.elements() {
        return Err(Error::Format("element count disagrees with geometry".into()));
    }
    Ok(header)
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Record>)> {
    let mut reader = BufReader::new(File::open(path)?);
    let header = read_header(&mut reader)?;
    let size = Record::byte_len(header.elements);
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    if body.len() != size * header.count {
        return Err(Error::Format(format!(
            "expected {} record bytes, found {}",
            size * header.count,
            body.len()
        )));
    }
    let records = body
        .chunks_exact(size)
        .map(|c| Record::parse(c, header.elements))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

/// Stored directions of a record, NaN padding dropped.
pub fn record_directions(record: &Record) -> Vec<DirectionPair> {
    record
        .directions
        .iter()
        .filter(|(el, az)| el.is_finite() && az.is_finite())
        .map(|&(el, az)| DirectionPair::wrapped(el as f64, az as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};
    use std::io::Cursor;

    fn digest(path: &Path) -> Vec<u8> {
        Sha256::digest(std::fs::read(path).unwrap()).to_vec()
    }

    #[test]
    fn record_size_for_six_elements() {
        assert_eq!(Record::byte_len(6), 345);
    }

    #[test]
    fn identical_inputs_give_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let geom = ArrayGeometry::default_uca();
        let cfg = ScenarioConfig::default();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        let sa = generate_dataset(&cfg, &geom, "uca6", 10, 77, &a).unwrap();
        generate_dataset(&cfg, &geom, "uca6", 10, 77, &b).unwrap();
        assert_eq!(digest(&a), digest(&b));
        assert_eq!(sa.count, 10);
        let c = dir.path().join("c.bin");
        generate_dataset(&cfg, &geom, "uca6", 10, 78, &c).unwrap();
        assert_ne!(digest(&a), digest(&c));
    }

    #[test]
    fn header_and_records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let geom = ArrayGeometry::default_vector_sensor();
        let cfg = ScenarioConfig {
            overloaded_fraction: 0.3,
            snr_range: (0.0, 10.0),
            ..ScenarioConfig::default()
        };
        let path = dir.path().join("d.bin");
        let summary = generate_dataset(&cfg, &geom, "vs", 40, 5, &path).unwrap();
        let header_len = std::fs::read(&path).unwrap().iter().position(|&b| b == b'\n').unwrap() + 1;
        assert_eq!(summary.bytes as usize, header_len + 40 * 345);
        let (header, records) = read_dataset(&path).unwrap();
        assert_eq!(header.config, cfg);
        assert_eq!((header.count, header.seed, header.elements), (40, 5, 6));
        assert_eq!(header.geometry, geom);
        let fresh = generate_records(&cfg, &geom, 40, 5).unwrap();
        for (r, f) in records.iter().zip(&fresh) {
            assert_eq!(r.feature, f.feature);
            assert_eq!(r.label(), f.label());
            assert_eq!(r.seed, f.seed);
            assert_eq!(r.snr_db, f.snr_db);
            assert_eq!(format!("{:?}", r.directions), format!("{:?}", f.directions));
            assert_eq!(r.overloaded, r.class18 == 19);
            let stored = record_directions(r).len();
            assert_eq!(stored, (r.n_m as usize).min(STORED_DIRECTIONS));
        }
        assert!(records.iter().any(|r| r.overloaded));
    }

    #[test]
    fn stored_feature_regenerates_from_seed() {
        let geom = ArrayGeometry::default_uca();
        let cfg = ScenarioConfig::default();
        let records = generate_records(&cfg, &geom, 5, 9).unwrap();
        for r in &records {
            let (s, blocks) = record_blocks(&cfg, &geom, r.seed, 3).unwrap();
            assert_eq!(s.label, r.label());
            let again = make_record(&s, &blocks[0], r.seed).unwrap();
            assert_eq!(again.feature, r.feature);
            assert_ne!(blocks[1].samples(), blocks[0].samples());
        }
    }

    #[test]
    fn class_counts_are_uniform() {
        let geom = ArrayGeometry::default_uca();
        let cfg = ScenarioConfig {
            samples_per_block: 8,
            ..ScenarioConfig::default()
        };
        let records = generate_records(&cfg, &geom, 10_000, 3).unwrap();
        let mut counts = [0usize; 18];
        for r in &records {
            counts[r.class18 as usize - 1] += 1;
        }
        let expect = 10_000.0 / 18.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        assert!(chi2 < 40.79, "chi2 {chi2}");
    }

    #[test]
    fn malformed_headers_rejected() {
        for bad in ["NOPE 2 {}\n", "MOEDATA1 5 {}\n", "MOEDATA1 2 {}", "MOEDATA1 x {}\n"] {
            assert!(matches!(read_header(&mut Cursor::new(bad.as_bytes())), Err(Error::Format(_))), "{bad}");
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        generate_dataset(&ScenarioConfig::default(), &ArrayGeometry::default_uca(), "uca6", 2, 1, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format(_))));
        assert!(matches!(read_dataset(&dir.path().join("missing")), Err(Error::Io(_))));
    }
}
