use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scene::{render_image, render_radar, sample_scene, Class, SimConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"XMCD";
pub const DATASET_VERSION: u16 = 1;

const MAX_RESAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub heatmap: Vec<f64>,
    pub image: Vec<f64>,
    /// Hidden label. Pre-training never reads it.
    pub class: Class,
    pub t: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub range_bins: usize,
    pub azimuth_bins: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub samples: Vec<PairedSample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Generates the sample with global index `t`. Its stream depends only on
/// `(seed, t)`, so generation order is irrelevant.
pub fn generate_sample(cfg: &SimConfig, seed: u64, t: u64, class: Class) -> Result<PairedSample> {
    let mut r = rng::stream(seed, "sample", t);
    for _ in 0..MAX_RESAMPLES {
        let scene = sample_scene(class, &mut r);
        match render_image(&scene, cfg, &mut r) {
            Ok(image) => {
                let heatmap = render_radar(&scene, cfg, &mut r);
                return Ok(PairedSample {
                    heatmap,
                    image,
                    class,
                    t,
                });
            }
            Err(Error::Resample) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Config(format!(
        "sample {t}: no in-frame scene after {MAX_RESAMPLES} draws"
    )))
}

/// `n` samples with global indices `first_index..first_index + n`, classes
/// cycling so counts differ by at most one, and a stratified 80/20 split.
pub fn make_dataset_at(cfg: &SimConfig, n: usize, seed: u64, first_index: u64) -> Result<Dataset> {
    cfg.validate()?;
    if n < 8 {
        return Err(Error::Config(format!("dataset needs at least 8 samples, got {n}")));
    }
    let samples = (0..n)
        .into_par_iter()
        .map(|i| generate_sample(cfg, seed, first_index + i as u64, Class::ALL[i % Class::COUNT]))
        .collect::<Result<Vec<_>>>()?;

    let mut split_rng = rng::stream(seed, "split", first_index);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in Class::ALL {
        let mut members: Vec<usize> = (0..n).filter(|&i| samples[i].class == class).collect();
        rand::seq::SliceRandom::shuffle(members.as_mut_slice(), &mut split_rng);
        let n_train = (4 * members.len() + 2) / 5;
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Dataset {
        range_bins: cfg.range_bins,
        azimuth_bins: cfg.azimuth_bins,
        image_height: cfg.image_height,
        image_width: cfg.image_width,
        samples,
        train,
        test,
    })
}

pub fn make_dataset(cfg: &SimConfig, n: usize, seed: u64) -> Result<Dataset> {
    make_dataset_at(cfg, n, seed, 0)
}

/// Held-out set for teacher pre-training: `ceil(n / 4)` samples indexed after
/// the main dataset, i.e. 20% of everything generated.
pub fn make_vision_dataset(cfg: &SimConfig, n_main: usize, seed: u64) -> Result<Dataset> {
    make_dataset_at(cfg, n_main.div_ceil(4).max(8), seed, n_main as u64)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn heatmap_len(&self) -> usize {
        self.range_bins * self.azimuth_bins
    }

    pub fn image_len(&self) -> usize {
        self.image_height * self.image_width
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn first_index(&self) -> u64 {
        self.samples.first().map_or(0, |s| s.t)
    }

    /// Global sample indices covered by this dataset.
    pub fn index_range(&self) -> std::ops::Range<u64> {
        let first = self.first_index();
        first..first + self.samples.len() as u64
    }

    pub fn overlaps(&self, other: &Dataset) -> bool {
        let (a, b) = (self.index_range(), other.index_range());
        a.start < b.end && b.start < a.end
    }

    pub fn heatmaps(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.heatmap_len());
        for &i in idx {
            data.extend_from_slice(&self.samples[i].heatmap);
        }
        Tensor::new(vec![idx.len(), self.heatmap_len()], data).expect("consistent sample sizes")
    }

    pub fn images(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.image_len());
        for &i in idx {
            data.extend_from_slice(&self.samples[i].image);
        }
        Tensor::new(vec![idx.len(), self.image_len()], data).expect("consistent sample sizes")
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.samples[i].class as usize).collect()
    }

    pub fn class_counts(&self, idx: &[usize]) -> [usize; Class::COUNT] {
        let mut c = [0; Class::COUNT];
        for &i in idx {
            c[self.samples[i].class as usize] += 1;
        }
        c
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            26 + self.samples.len() * (1 + 8 * (self.heatmap_len() + self.image_len())),
        );
        out.extend_from_slice(DATASET_MAGIC);
        out.write_u16::<LittleEndian>(DATASET_VERSION).unwrap();
        for d in [
            self.range_bins,
            self.azimuth_bins,
            self.image_height,
            self.image_width,
            self.samples.len(),
        ] {
            out.write_u32::<LittleEndian>(d as u32).unwrap();
        }
        for s in &self.samples {
            out.push(s.class.id());
            for v in s.heatmap.iter().chain(&s.image) {
                out.write_f64::<LittleEndian>(*v).unwrap();
            }
        }
        out
    }

    /// SHA-256 of the binary encoding plus the split, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.encode());
        h.update(serde_json::to_vec(&self.split_file()).unwrap());
        hex::encode(h.finalize())
    }

    pub fn split_file(&self) -> SplitFile {
        SplitFile {
            first_index: self.first_index(),
            train: self.train.clone(),
            test: self.test.clone(),
        }
    }

    /// Bytes of the sidecar split file.
    pub fn encode_split(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&self.split_file()).unwrap()
    }

    /// Writes `path` (binary records) and its sidecar split file.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())?;
        write_file(&split_path(path), &self.encode_split())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rd = BufReader::new(file);
        let sp = split_path(path);
        let split: SplitFile = serde_json::from_slice(&std::fs::read(&sp).map_err(|e| Error::io(&sp, e))?)
            .map_err(|e| format_err(&sp, e.to_string()))?;
        decode(&mut rd, path, split)
    }
}

/// Sidecar JSON holding split membership and the global index of sample 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub first_index: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".split.json");
    PathBuf::from(p)
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn decode(rd: &mut impl Read, path: &Path, split: SplitFile) -> Result<Dataset> {
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 4];
    rd.read_exact(&mut magic).map_err(io)?;
    if &magic != DATASET_MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    let version = rd.read_u16::<LittleEndian>().map_err(io)?;
    if version != DATASET_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = rd.read_u32::<LittleEndian>().map_err(io)? as usize;
    }
    let [range_bins, azimuth_bins, image_height, image_width, n] = dims;
    let (hl, il) = (range_bins * azimuth_bins, image_height * image_width);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let id = rd.read_u8().map_err(io)?;
        let class = Class::from_id(id).ok_or_else(|| format_err(path, format!("bad class id {id}")))?;
        let mut heatmap = vec![0.0; hl];
        rd.read_f64_into::<LittleEndian>(&mut heatmap).map_err(io)?;
        let mut image = vec![0.0; il];
        rd.read_f64_into::<LittleEndian>(&mut image).map_err(io)?;
        samples.push(PairedSample {
            heatmap,
            image,
            class,
            t: split.first_index + i as u64,
        });
    }
    let mut trailing = [0u8; 1];
    if rd.read(&mut trailing).map_err(io)? != 0 {
        return Err(format_err(path, "trailing bytes"));
    }
    let mut seen = vec![false; n];
    for &i in split.train.iter().chain(&split.test) {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(format_err(path, format!("split index {i} out of range or repeated")));
        }
    }
    Ok(Dataset {
        range_bins,
        azimuth_bins,
        image_height,
        image_width,
        samples,
        train: split.train,
        test: split.test,
    })
}
