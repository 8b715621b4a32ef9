//! Population files, error ingestion and the surrogate error source.
//!
//! # Population file format (version 1)
//!
//! Line-delimited JSON. Line one is the header:
//!
//! ```text
//! {"format":"designspace-population","version":1,"design_space":"anynetx-a",
//!  "master_seed":7,"sampler":{...},"manifest":{...}}
//! ```
//!
//! Every following line is one sample:
//!
//! | field           | meaning                                              |
//! |-----------------|------------------------------------------------------|
//! | `spec_hash`     | [`spec_hash`] of `spec`                              |
//! | `spec`          | canonical network spec                               |
//! | `regnet_params` | generator for RegNet spaces, else `null`             |
//! | `complexity`    | `{flops, params, acts}`, flops in raw multiply-adds  |
//! | `error`         | top-1 error fraction, `null` while pending           |
//! | `source`        | `"ingested"`, `"surrogate"` or `null` while pending  |
//! | `epochs`        | training epochs of an ingested error, or `null`      |
//!
//! # Error files
//!
//! Either the same line-delimited JSON with
//! `{"spec_hash", "error", "epochs", "metadata"}` per line, or a two-column
//! CSV `spec_hash,error` with an optional header row.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::complexity::ComplexityReport;
use crate::netspec::{AnyNetSpec, RegNetParams};
use crate::quantlin::fit_linear;
use crate::sampler::{sample_population, splitmix64, SampledModel, SamplerConfig};
use crate::{Error, Result};

pub const FORMAT_NAME: &str = "designspace-population";
pub const FORMAT_VERSION: u32 = 1;

/// First 16 hex digits (64 bits) of the SHA-256 of the canonical spec JSON.
pub fn spec_hash(spec: &AnyNetSpec) -> String {
    let digest = Sha256::digest(spec.canonical_json().as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSource {
    Ingested,
    Surrogate,
}

/// Provenance of a command run, embedded in every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub master_seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        RunManifest {
            command: command.into(),
            config_path: None,
            master_seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationHeader {
    pub format: String,
    pub version: u32,
    pub design_space: String,
    pub master_seed: u64,
    pub sampler: Option<SamplerConfig>,
    pub manifest: Option<RunManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSample {
    pub spec_hash: String,
    pub spec: AnyNetSpec,
    pub regnet_params: Option<RegNetParams>,
    pub complexity: ComplexityReport,
    pub error: Option<f64>,
    pub source: Option<ErrorSource>,
    pub epochs: Option<u32>,
}

impl PopulationSample {
    pub fn pending(model: SampledModel) -> Self {
        PopulationSample {
            spec_hash: spec_hash(&model.spec),
            spec: model.spec,
            regnet_params: model.params,
            complexity: model.complexity,
            error: None,
            source: None,
            epochs: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationFile {
    pub header: PopulationHeader,
    pub records: Vec<PopulationSample>,
}

impl PopulationFile {
    /// Sample a fresh population; every record starts pending.
    pub fn sample(cfg: &SamplerConfig, manifest: Option<RunManifest>) -> Result<Self> {
        let models = sample_population(cfg)?;
        Ok(PopulationFile {
            header: PopulationHeader {
                format: FORMAT_NAME.into(),
                version: FORMAT_VERSION,
                design_space: cfg.design_space.name.clone(),
                master_seed: cfg.master_seed,
                sampler: Some(cfg.clone()),
                manifest,
            },
            records: models.into_iter().map(PopulationSample::pending).collect(),
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| match l {
            Ok(l) => !l.trim().is_empty(),
            Err(_) => true,
        });
        let fmt = |line: usize, message: String| Error::Format { line, message };
        let (_, first) = lines.next().ok_or_else(|| fmt(1, "empty file".into()))?;
        let header: PopulationHeader =
            serde_json::from_str(&first?).map_err(|e| fmt(1, format!("header: {e}")))?;
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(fmt(
                1,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let rec: PopulationSample =
                serde_json::from_str(&line?).map_err(|e| fmt(i + 1, e.to_string()))?;
            if spec_hash(&rec.spec) != rec.spec_hash {
                return Err(fmt(i + 1, format!("spec_hash {} does not match spec", rec.spec_hash)));
            }
            if let Some(e) = rec.error {
                if !(0.0..=1.0).contains(&e) {
                    return Err(fmt(i + 1, format!("error {e} outside [0, 1]")));
                }
            }
            records.push(rec);
        }
        Ok(PopulationFile { header, records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn complete(&self) -> impl Iterator<Item = &PopulationSample> {
        self.records.iter().filter(|r| r.is_complete())
    }

    pub fn pending_count(&self) -> usize {
        self.records.iter().filter(|r| !r.is_complete()).count()
    }

    /// Sources present among completed records.
    pub fn sources(&self) -> Vec<ErrorSource> {
        let mut s: Vec<ErrorSource> = self.complete().filter_map(|r| r.source).collect();
        s.sort_by_key(|s| *s as u8);
        s.dedup();
        s
    }

    /// Whether resampling with the header's sampler config reproduces the
    /// spec list.
    pub fn verify_reproducible(&self) -> Result<bool> {
        let Some(cfg) = &self.header.sampler else {
            return Ok(false);
        };
        let models = sample_population(cfg)?;
        Ok(models.len() == self.records.len()
            && models.iter().zip(&self.records).all(|(m, r)| m.spec == r.spec))
    }

    /// Write one canonical spec JSON per distinct model into `dir`, named
    /// `<spec_hash>.json`. Returns the written paths.
    pub fn export_specs(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if !seen.insert(r.spec_hash.clone()) {
                continue;
            }
            let path = dir.join(format!("{}.json", r.spec_hash));
            std::fs::write(&path, r.spec.canonical_json())?;
            out.push(path);
        }
        Ok(out)
    }
}

/// Externally produced training result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub spec_hash: String,
    pub error: f64,
    #[serde(default)]
    pub epochs: Option<u32>,
    #[serde(default)]
    pub metadata: Option<serde_json::Value>,
}

pub fn read_error_jsonl<R: BufRead>(r: R) -> Result<Vec<ErrorRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ErrorRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        check_error_value(&rec, i + 1)?;
        out.push(rec);
    }
    Ok(out)
}

/// Two-column `spec_hash,error` CSV; a non-numeric first row is a header.
pub fn read_error_csv<R: std::io::Read>(r: R) -> Result<Vec<ErrorRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        if row.len() < 2 {
            return Err(Error::Format {
                line: i + 1,
                message: "expected `spec_hash,error`".into(),
            });
        }
        let error = match row[1].parse::<f64>() {
            Ok(e) => e,
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Format {
                    line: i + 1,
                    message: format!("error column: {e}"),
                })
            }
        };
        let rec = ErrorRecord {
            spec_hash: row[0].to_string(),
            error,
            epochs: None,
            metadata: None,
        };
        check_error_value(&rec, i + 1)?;
        out.push(rec);
    }
    Ok(out)
}

/// Read an error file, choosing CSV by the `.csv` extension.
pub fn read_error_file(path: &Path) -> Result<Vec<ErrorRecord>> {
    let f = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_error_csv(f)
    } else {
        read_error_jsonl(std::io::BufReader::new(f))
    }
}

fn check_error_value(rec: &ErrorRecord, line: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&rec.error) {
        return Err(Error::Format {
            line,
            message: format!("error {} outside [0, 1]", rec.error),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conflict {
    pub spec_hash: String,
    pub kept: f64,
    pub rejected: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestReport {
    /// Samples that received an error.
    pub matched: usize,
    /// Records whose hash matches no sample.
    pub orphans: Vec<ErrorRecord>,
    pub conflicts: Vec<Conflict>,
    /// Samples still without an error.
    pub pending: usize,
}

/// Join error records into the population by spec hash.
///
/// The first record seen for a hash wins. Later records with a different
/// error, or records disagreeing with an error already present, are reported
/// as conflicts and not applied. Identical duplicates are ignored.
pub fn ingest_errors(pop: &mut PopulationFile, records: &[ErrorRecord]) -> IngestReport {
    let mut report = IngestReport::default();
    let mut first: HashMap<&str, &ErrorRecord> = HashMap::new();
    let mut conflicts: Vec<Conflict> = Vec::new();
    let mut conflict_idx: HashMap<&str, usize> = HashMap::new();
    let known: std::collections::HashSet<&str> =
        pop.records.iter().map(|r| r.spec_hash.as_str()).collect();

    for rec in records {
        if !known.contains(rec.spec_hash.as_str()) {
            report.orphans.push(rec.clone());
            continue;
        }
        match first.get(rec.spec_hash.as_str()) {
            None => {
                first.insert(&rec.spec_hash, rec);
            }
            Some(kept) if kept.error == rec.error => {}
            Some(kept) => {
                let idx = *conflict_idx.entry(&rec.spec_hash).or_insert_with(|| {
                    conflicts.push(Conflict {
                        spec_hash: rec.spec_hash.clone(),
                        kept: kept.error,
                        rejected: Vec::new(),
                    });
                    conflicts.len() - 1
                });
                conflicts[idx].rejected.push(rec.error);
            }
        }
    }

    for sample in &mut pop.records {
        let Some(rec) = first.get(sample.spec_hash.as_str()) else {
            continue;
        };
        match sample.error {
            Some(existing) if existing != rec.error => {
                conflicts.push(Conflict {
                    spec_hash: sample.spec_hash.clone(),
                    kept: existing,
                    rejected: vec![rec.error],
                });
            }
            Some(_) => {}
            None => {
                sample.error = Some(rec.error);
                sample.source = Some(ErrorSource::Ingested);
                sample.epochs = rec.epochs;
                report.matched += 1;
            }
        }
    }
    report.conflicts = conflicts;
    report.pending = pop.pending_count();
    report
}

/// Coefficients of the surrogate error.
///
/// ```text
/// error = clip(base - flops_slope * ln(flops / ref_flops)
///              + efit_weight * e_fit(block widths)
///              + bottleneck_weight * mean_i |log2 b_i|
///              + width_order_weight * #{i : w_{i+1} < w_i}
///              + depth_order_weight * #{i : d_{i+1} < d_i}
///              + noise * u,  lo, hi)
/// ```
///
/// with `u` uniform in `[-1, 1]`, derived from the spec hash and the noise
/// seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub base: f64,
    pub ref_flops: f64,
    pub flops_slope: f64,
    pub efit_weight: f64,
    pub bottleneck_weight: f64,
    pub width_order_weight: f64,
    pub depth_order_weight: f64,
    pub noise: f64,
    pub clip: (f64, f64),
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            base: 0.40,
            ref_flops: 4e8,
            flops_slope: 0.04,
            efit_weight: 0.25,
            bottleneck_weight: 0.02,
            width_order_weight: 0.03,
            depth_order_weight: 0.02,
            noise: 0.02,
            clip: (0.05, 0.95),
        }
    }
}

impl SurrogateConfig {
    fn penalized(&self) -> bool {
        self.efit_weight != 0.0
            || self.bottleneck_weight != 0.0
            || self.width_order_weight != 0.0
            || self.depth_order_weight != 0.0
    }
}

fn unit_noise(hash: &str, seed: u64) -> f64 {
    let h = u64::from_str_radix(hash, 16).unwrap_or_else(|_| {
        let d = Sha256::digest(hash.as_bytes());
        u64::from_be_bytes(d[..8].try_into().unwrap())
    });
    let z = splitmix64(h ^ splitmix64(seed));
    // 53 random bits mapped to [-1, 1]
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Deterministic stand-in for a trained error. Not a model of real
/// training; it exists so the statistics pipeline can run end to end.
pub fn surrogate_error(spec: &AnyNetSpec, noise_seed: u64, cfg: &SurrogateConfig) -> Result<f64> {
    let cx = crate::complexity::network_metrics(spec)?;
    let mut e = cfg.base - cfg.flops_slope * (cx.flops as f64 / cfg.ref_flops).ln();
    if cfg.penalized() {
        let st = &spec.stages;
        if cfg.efit_weight != 0.0 {
            e += cfg.efit_weight * fit_linear(&spec.block_widths())?.e_fit;
        }
        if spec.block_type.uses_bottleneck() && !st.is_empty() {
            let mean_b = st.iter().map(|s| s.bottleneck.log2().abs()).sum::<f64>() / st.len() as f64;
            e += cfg.bottleneck_weight * mean_b;
        }
        let drops_w = st.windows(2).filter(|w| w[1].width < w[0].width).count();
        let drops_d = st.windows(2).filter(|w| w[1].depth < w[0].depth).count();
        e += cfg.width_order_weight * drops_w as f64 + cfg.depth_order_weight * drops_d as f64;
    }
    e += cfg.noise * unit_noise(&spec_hash(spec), noise_seed);
    Ok(e.clamp(cfg.clip.0, cfg.clip.1))
}

/// Fill every record with a surrogate error. Refuses populations that
/// already hold ingested errors so sources never mix.
pub fn apply_surrogate(pop: &mut PopulationFile, noise_seed: u64, cfg: &SurrogateConfig) -> Result<()> {
    use rayon::prelude::*;
    if pop.records.iter().any(|r| r.source == Some(ErrorSource::Ingested)) {
        return Err(Error::invalid(
            "population holds ingested errors; refusing to mix in surrogate errors",
        ));
    }
    let errors = pop
        .records
        .par_iter()
        .map(|r| surrogate_error(&r.spec, noise_seed, cfg))
        .collect::<Result<Vec<_>>>()?;
    for (r, e) in pop.records.iter_mut().zip(errors) {
        r.error = Some(e);
        r.source = Some(ErrorSource::Surrogate);
        r.epochs = None;
    }
    Ok(())
}
