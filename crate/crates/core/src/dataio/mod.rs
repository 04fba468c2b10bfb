//! Feature files, manifests, temporal alignment and the synthetic corpus.

mod format;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use format::{decode, encode, encode_entries, read_sample, write_sample, MAGIC, VERSION};
pub use synth::{gen_synth, synth_sample, SynthOptions, MANIFEST_NAME};

use crate::error::{Error, Result};
use crate::metrics::LabelNorm;
use crate::model::ModalityBundle;
use crate::numcore::{RngState, SequenceTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?} (train, val, test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub dims: [usize; 3],
    pub score_min: f64,
    pub score_max: f64,
    pub align_length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub score: f64,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths resolve against.
    pub root: PathBuf,
}

/// One labelled sample before alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub category: String,
    pub bundle: ModalityBundle,
    pub score: f64,
}

impl Manifest {
    pub fn norm(&self) -> Result<LabelNorm> {
        LabelNorm::new(self.header.score_min, self.header.score_max)
    }

    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string(&self.header).expect("header serializes");
        s.push('\n');
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e).expect("entry serializes"));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::Manifest("empty manifest".into()))?;
        let header: ManifestHeader = serde_json::from_str(first)
            .map_err(|e| Error::Manifest(format!("line 1: bad header: {e}")))?;
        if !(header.score_min < header.score_max) {
            return Err(Error::Manifest(format!(
                "score_min {} must be below score_max {}",
                header.score_min, header.score_max
            )));
        }
        if header.dims.contains(&0) || header.align_length == 0 {
            return Err(Error::Manifest("dims and align_length must be positive".into()));
        }
        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for (i, line) in lines {
            let e: ManifestEntry = serde_json::from_str(line)
                .map_err(|err| Error::Manifest(format!("line {}: {err}", i + 1)))?;
            if !ids.insert(e.id.clone()) {
                return Err(Error::Manifest(format!("line {}: duplicate id {:?}", i + 1, e.id)));
            }
            entries.push(e);
        }
        Ok(Self {
            header,
            entries,
            root: root.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &root)
    }

    pub fn resolve(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.path)
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Reads one entry and checks its dims against the header.
    pub fn load_entry(&self, e: &ManifestEntry) -> Result<Sample> {
        let bundle = read_sample(&self.resolve(e))?;
        if bundle.dims() != self.header.dims {
            return Err(Error::Manifest(format!(
                "sample {}: dims {:?} differ from declared {:?}",
                e.id,
                bundle.dims(),
                self.header.dims
            )));
        }
        Ok(Sample {
            id: e.id.clone(),
            category: e.category.clone().unwrap_or_else(|| "all".into()),
            bundle,
            score: e.score,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| self.load_entry(e))
            .collect()
    }
}

/// Crop start of a length-`t` sequence to `l` steps.
fn crop_start(t: usize, l: usize, train: bool, rng: &mut RngState) -> usize {
    if train {
        rng.int_range(0, t - l)
    } else {
        (t - l) / 2
    }
}

fn fit_length(x: &SequenceTensor, l: usize, start: usize) -> SequenceTensor {
    let (d, t) = x.shape();
    if t >= l {
        return x.slice_time(start, l);
    }
    let mut out = SequenceTensor::zeros(d, l);
    for ch in 0..d {
        out.row_mut(ch)[..t].copy_from_slice(x.row(ch));
    }
    out
}

/// Brings every modality to exactly `l` steps: longer sequences are
/// cropped (random start when `train`, centred otherwise), shorter ones
/// are zero-padded at the tail. With `sync`, one uniform draw positions
/// every train-mode crop at the same relative offset.
pub fn align(b: &ModalityBundle, l: usize, train: bool, sync: bool, rng: &mut RngState) -> Result<ModalityBundle> {
    if l == 0 {
        return Err(Error::InvalidArgument("alignment length must be >= 1".into()));
    }
    let shared = if sync && train { Some(rng.uniform()) } else { None };
    let mut out = b.clone();
    for m in 0..3 {
        let x = b.get(m);
        let t = x.time();
        let start = if t > l {
            match shared {
                Some(u) => ((u * (t - l + 1) as f64) as usize).min(t - l),
                None => crop_start(t, l, train, rng),
            }
        } else {
            0
        };
        *out.get_mut(m) = fit_length(x, l, start);
    }
    Ok(out)
}
