//! Corpus directories: a JSON manifest plus one raw little-endian f32 image
//! block per split.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use setconv_core::data::{
    gen_attributes, gen_classification, AttrCorpus, AttrSpec, ClassificationSpec, LabeledCorpus, ATTRIBUTES,
};
use setconv_core::Tensor;

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSpec {
    Classification {
        spec: ClassificationSpec,
        /// Largest set size the corpus must support.
        n_max: usize,
        val_per_class: usize,
        test_per_class: usize,
    },
    Attributes {
        spec: AttrSpec,
        val_count: usize,
        test_count: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Seed offset from the corpus seed.
    fn offset(self) -> u64 {
        self as u64
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Split::ALL
            .into_iter()
            .find(|split| split.name() == s)
            .ok_or_else(|| format!("unknown split {s:?} (train, val, test)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitEntry {
    split: Split,
    seed: u64,
    count: usize,
    file: String,
    sha256: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    cue_rendered: Vec<bool>,
    /// One `01` string of length eight per image.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    corpus: CorpusSpec,
    image_shape: [usize; 3],
    splits: Vec<SplitEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Corpus {
    Classification {
        spec: CorpusSpec,
        splits: [LabeledCorpus; 3],
    },
    Attributes {
        spec: CorpusSpec,
        splits: [AttrCorpus; 3],
    },
}

impl Corpus {
    pub fn spec(&self) -> &CorpusSpec {
        match self {
            Corpus::Classification { spec, .. } | Corpus::Attributes { spec, .. } => spec,
        }
    }

    pub fn classification(&self, split: Split) -> Option<&LabeledCorpus> {
        match self {
            Corpus::Classification { splits, .. } => Some(&splits[split as usize]),
            Corpus::Attributes { .. } => None,
        }
    }

    pub fn attributes(&self, split: Split) -> Option<&AttrCorpus> {
        match self {
            Corpus::Attributes { splits, .. } => Some(&splits[split as usize]),
            Corpus::Classification { .. } => None,
        }
    }
}

/// Generates all three splits; split `s` uses seed `spec.seed + s`.
pub fn generate(spec: &CorpusSpec) -> Result<Corpus> {
    match spec {
        CorpusSpec::Classification {
            spec: base,
            n_max,
            val_per_class,
            test_per_class,
        } => {
            let make = |split: Split| {
                let per_class = match split {
                    Split::Train => base.per_class,
                    Split::Val => *val_per_class,
                    Split::Test => *test_per_class,
                };
                let s = ClassificationSpec {
                    per_class,
                    seed: base.seed + split.offset(),
                    ..base.clone()
                };
                gen_classification(&s, *n_max)
            };
            Ok(Corpus::Classification {
                spec: spec.clone(),
                splits: [make(Split::Train)?, make(Split::Val)?, make(Split::Test)?],
            })
        }
        CorpusSpec::Attributes {
            spec: base,
            val_count,
            test_count,
        } => {
            let make = |split: Split| {
                let count = match split {
                    Split::Train => base.count,
                    Split::Val => *val_count,
                    Split::Test => *test_count,
                };
                gen_attributes(&AttrSpec {
                    count,
                    seed: base.seed + split.offset(),
                    ..base.clone()
                })
            };
            Ok(Corpus::Attributes {
                spec: spec.clone(),
                splits: [make(Split::Train)?, make(Split::Val)?, make(Split::Test)?],
            })
        }
    }
}

fn image_bytes(images: &Tensor<f32>) -> Vec<u8> {
    images.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn bits(a: &[bool; ATTRIBUTES]) -> String {
    a.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn manifest_and_blocks(corpus: &Corpus) -> (Manifest, Vec<(String, Vec<u8>)>) {
    let mut blocks = Vec::new();
    let mut splits = Vec::new();
    let mut image_shape = [0; 3];
    for split in Split::ALL {
        let file = format!("{}.f32", split.name());
        let (images, mut entry) = match corpus {
            Corpus::Classification { splits, .. } => {
                let c = &splits[split as usize];
                let entry = SplitEntry {
                    split,
                    seed: 0,
                    count: c.len(),
                    file: file.clone(),
                    sha256: String::new(),
                    labels: c.labels.clone(),
                    cue_rendered: c.cue_rendered.clone(),
                    attributes: Vec::new(),
                };
                (&c.images, entry)
            }
            Corpus::Attributes { splits, .. } => {
                let c = &splits[split as usize];
                let entry = SplitEntry {
                    split,
                    seed: 0,
                    count: c.len(),
                    file: file.clone(),
                    sha256: String::new(),
                    labels: Vec::new(),
                    cue_rendered: Vec::new(),
                    attributes: c.attributes.iter().map(bits).collect(),
                };
                (&c.images, entry)
            }
        };
        let s = images.shape();
        image_shape = [s[1], s[2], s[3]];
        let bytes = image_bytes(images);
        entry.seed = match corpus.spec() {
            CorpusSpec::Classification { spec, .. } => spec.seed,
            CorpusSpec::Attributes { spec, .. } => spec.seed,
        } + split.offset();
        entry.sha256 = hex::encode(Sha256::digest(&bytes));
        splits.push(entry);
        blocks.push((file, bytes));
    }
    let manifest = Manifest {
        format: FORMAT,
        corpus: corpus.spec().clone(),
        image_shape,
        splits,
    };
    (manifest, blocks)
}

fn is_nonempty_dir(path: &Path) -> bool {
    fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Writes `corpus` to `dir`. The files are staged in a sibling temporary
/// directory and moved into place, so a failure leaves nothing behind.
pub fn save(corpus: &Corpus, dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && !dir.is_dir() {
        return Err(Error::corpus(dir, "exists and is not a directory"));
    }
    if is_nonempty_dir(dir) && !force {
        return Err(Error::corpus(dir, "directory is not empty (use --force to replace it)"));
    }
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".setconv-synth-")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    let (manifest, blocks) = manifest_and_blocks(corpus);
    for (file, bytes) in blocks {
        let path = staging.path().join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = staging.path().join(MANIFEST);
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let staged = staging.keep();
    fs::rename(&staged, dir).map_err(|e| {
        let _ = fs::remove_dir_all(&staged);
        Error::io(dir, e)
    })
}

fn read_block(dir: &Path, entry: &SplitEntry, shape: [usize; 3]) -> Result<Tensor<f32>> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
        return Err(Error::corpus(&path, "checksum mismatch"));
    }
    let expected = entry.count * shape.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(Error::corpus(&path, format!("{} bytes, expected {expected}", bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Tensor::new(&[entry.count, shape[0], shape[1], shape[2]], data).map_err(|e| Error::corpus(&path, e.to_string()))
}

fn parse_bits(path: &Path, s: &str) -> Result<[bool; ATTRIBUTES]> {
    let mut out = [false; ATTRIBUTES];
    if s.len() != ATTRIBUTES {
        return Err(Error::corpus(path, format!("attribute string {s:?} is not {ATTRIBUTES} bits")));
    }
    for (o, c) in out.iter_mut().zip(s.chars()) {
        *o = match c {
            '0' => false,
            '1' => true,
            _ => return Err(Error::corpus(path, format!("attribute string {s:?} is not binary"))),
        };
    }
    Ok(out)
}

pub fn load(dir: &Path) -> Result<Corpus> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::corpus(&path, e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(Error::corpus(&path, format!("unsupported format {}", manifest.format)));
    }
    let entry = |split: Split| {
        manifest
            .splits
            .iter()
            .find(|e| e.split == split)
            .ok_or_else(|| Error::corpus(&path, format!("missing split {}", split.name())))
    };
    match &manifest.corpus {
        CorpusSpec::Classification { spec, .. } => {
            let mut splits = Vec::new();
            for split in Split::ALL {
                let e = entry(split)?;
                if e.labels.len() != e.count || e.cue_rendered.len() != e.count {
                    return Err(Error::corpus(&path, format!("{} labels do not match its count", split.name())));
                }
                if let Some(&bad) = e.labels.iter().find(|&&l| l >= spec.num_classes) {
                    return Err(Error::corpus(&path, format!("label {bad} out of range")));
                }
                splits.push(LabeledCorpus {
                    images: read_block(dir, e, manifest.image_shape)?,
                    labels: e.labels.clone(),
                    num_classes: spec.num_classes,
                    cue_rendered: e.cue_rendered.clone(),
                });
            }
            Ok(Corpus::Classification {
                spec: manifest.corpus.clone(),
                splits: splits.try_into().expect("three splits"),
            })
        }
        CorpusSpec::Attributes { .. } => {
            let mut splits = Vec::new();
            for split in Split::ALL {
                let e = entry(split)?;
                if e.attributes.len() != e.count {
                    return Err(Error::corpus(&path, format!("{} attributes do not match its count", split.name())));
                }
                splits.push(AttrCorpus {
                    images: read_block(dir, e, manifest.image_shape)?,
                    attributes: e.attributes.iter().map(|s| parse_bits(&path, s)).collect::<Result<_>>()?,
                });
            }
            Ok(Corpus::Attributes {
                spec: manifest.corpus.clone(),
                splits: splits.try_into().expect("three splits"),
            })
        }
    }
}
