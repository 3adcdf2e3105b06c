//! Suite directory layout:
//!
//! ```text
//! suite.jsonl     one record per accepted input, in acceptance order
//! seeds.jsonl     the verified seeds lineages start from
//! images/         <id>.png, 8-bit lossless
//! coverage.json   final coverage snapshot
//! report.json     run counters and timings
//! trace.csv       iteration,cdc,kcdc,accepts
//! manifest.json   SHA-256 of every file above
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::png::{decode_png, encode_png};
use crate::coverage::CoverageSnapshot;
use crate::error::{Error, Result};
use crate::fuzzer::{FuzzConfig, FuzzReport, TestInput, TestSuite, TracePoint};
use crate::mutation::MutationRecord;
use crate::oracle::Prediction;
use crate::tensor::Shape;

pub const MANIFEST_VERSION: u32 = 1;

/// One line of `suite.jsonl` / `seeds.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRecord {
    pub id: u64,
    pub image: String,
    pub shape: Shape,
    pub ground_truth: usize,
    pub seed_root_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted_iteration: Option<u64>,
    pub prediction: Prediction,
    pub lineage: Vec<MutationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCounts {
    pub inputs: usize,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub version: u32,
    pub n_classes: usize,
    /// SHA-256 of the run config in TOML form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<FuzzConfig>,
    pub oracle: String,
    pub counts: SuiteCounts,
    /// Relative path -> lowercase hex SHA-256.
    pub digests: BTreeMap<String, String>,
}

pub struct LoadedSuite {
    pub suite: TestSuite,
    pub manifest: SuiteManifest,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn trace_csv(trace: &[TracePoint]) -> String {
    let mut s = String::from("iteration,cdc,kcdc,accepts\n");
    for t in trace {
        s.push_str(&format!(
            "{},{},{},{}\n",
            t.iteration, t.cdc, t.kcdc, t.accepts
        ));
    }
    s
}

struct DigestingWriter<'a> {
    dir: &'a Path,
    digests: BTreeMap<String, String>,
}

impl DigestingWriter<'_> {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.digests.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes JSON lines, flushing after each record.
    fn write_records(&mut self, rel: &str, inputs: &[TestInput]) -> Result<()> {
        let path = self.dir.join(rel);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let mut hasher = Sha256::new();
        for input in inputs {
            let image = format!("images/{:06}.png", input.id);
            self.write(&image, &encode_png(&input.image)?)?;
            let record = SuiteRecord {
                id: input.id,
                image,
                shape: input.image.shape(),
                ground_truth: input.ground_truth,
                seed_root_id: input.seed_root_id,
                parent_id: input.parent_id(),
                accepted_iteration: input.accepted_iteration,
                prediction: input
                    .prediction
                    .clone()
                    .ok_or_else(|| Error::Data(format!("input {} has no prediction", input.id)))?,
                lineage: input.lineage.clone(),
            };
            let mut line = serde_json::to_vec(&record).expect("record serializes");
            line.push(b'\n');
            hasher.update(&line);
            out.write_all(&line).map_err(|e| Error::io(&path, e))?;
            out.flush().map_err(|e| Error::io(&path, e))?;
        }
        self.digests.insert(
            rel.to_string(),
            hasher
                .finalize()
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect(),
        );
        Ok(())
    }
}

/// Writes a suite directory and returns its manifest.
pub fn save_suite(
    dir: &Path,
    suite: &TestSuite,
    config: Option<&FuzzConfig>,
    report: Option<&FuzzReport>,
    oracle: &str,
) -> Result<SuiteManifest> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut w = DigestingWriter {
        dir,
        digests: BTreeMap::new(),
    };
    w.write_records("seeds.jsonl", &suite.seeds)?;
    w.write_records("suite.jsonl", &suite.inputs)?;
    w.write(
        "coverage.json",
        &serde_json::to_vec_pretty(&suite.coverage).expect("snapshot serializes"),
    )?;
    if let Some(report) = report {
        w.write(
            "report.json",
            &serde_json::to_vec_pretty(report).expect("report serializes"),
        )?;
        w.write("trace.csv", trace_csv(&report.trace).as_bytes())?;
    }
    let manifest = SuiteManifest {
        version: MANIFEST_VERSION,
        n_classes: suite.n_classes,
        config_hash: config.map(|c| sha256_hex(c.to_toml().as_bytes())),
        config: config.cloned(),
        oracle: oracle.to_string(),
        counts: SuiteCounts {
            inputs: suite.inputs.len(),
            seeds: suite.seeds.len(),
        },
        digests: w.digests,
    };
    let path = dir.join("manifest.json");
    fs::write(
        &path,
        serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn read_verified(dir: &Path, rel: &str, manifest: &SuiteManifest) -> Result<Vec<u8>> {
    let path = dir.join(rel);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    match manifest.digests.get(rel) {
        Some(expected) if *expected == sha256_hex(&bytes) => Ok(bytes),
        Some(_) => Err(Error::Corruption {
            path,
            message: "SHA-256 digest does not match the manifest".into(),
        }),
        None => Err(Error::Corruption {
            path,
            message: "file is not listed in the manifest".into(),
        }),
    }
}

fn parse_records(dir: &Path, rel: &str, manifest: &SuiteManifest) -> Result<Vec<TestInput>> {
    let bytes = read_verified(dir, rel, manifest)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Corruption {
        path: dir.join(rel),
        message: e.to_string(),
    })?;
    let mut offset = 0u64;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        let here = offset;
        offset += line.len() as u64;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SuiteRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: dir.join(rel),
            offset: here,
            message: e.to_string(),
        })?;
        let image_bytes = read_verified(dir, &rec.image, manifest)?;
        let image = decode_png(&dir.join(&rec.image), &image_bytes)?;
        if image.shape() != rec.shape {
            return Err(Error::Corruption {
                path: dir.join(&rec.image),
                message: format!("image is {}, record says {}", image.shape(), rec.shape),
            });
        }
        out.push(TestInput {
            id: rec.id,
            image,
            ground_truth: rec.ground_truth,
            seed_root_id: rec.seed_root_id,
            lineage: rec.lineage,
            prediction: Some(rec.prediction),
            accepted_iteration: rec.accepted_iteration,
        });
    }
    Ok(out)
}

/// Loads a suite directory, verifying every digest in the manifest.
pub fn load_suite(dir: &Path) -> Result<LoadedSuite> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SuiteManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        offset: 0,
        message: e.to_string(),
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Data(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    for rel in manifest.digests.keys() {
        read_verified(dir, rel, &manifest)?;
    }
    let seeds = parse_records(dir, "seeds.jsonl", &manifest)?;
    let inputs = parse_records(dir, "suite.jsonl", &manifest)?;
    let coverage: CoverageSnapshot =
        serde_json::from_slice(&read_verified(dir, "coverage.json", &manifest)?).map_err(|e| {
            Error::Parse {
                path: dir.join("coverage.json"),
                offset: 0,
                message: e.to_string(),
            }
        })?;
    if inputs.len() != manifest.counts.inputs || seeds.len() != manifest.counts.seeds {
        return Err(Error::Corruption {
            path,
            message: "record counts disagree with the manifest".into(),
        });
    }
    Ok(LoadedSuite {
        suite: TestSuite {
            n_classes: manifest.n_classes,
            inputs,
            seeds,
            coverage,
        },
        manifest,
    })
}
