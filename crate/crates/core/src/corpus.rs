//! On-disk corpora: a `manifest.txt` index plus one directory per pair.
//!
//! Manifest lines are either `key value` settings of the generator or
//! `pair <split> <seed> <relative dir>` entries; `#` starts a comment.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{io_err, Error, Result};
use crate::io::{read_dten, read_keypoints, read_labels, write_dten, write_keypoints, write_labels};
use crate::registration::{DisplacementField, Image2D};
use crate::synth::{generate_pair, SynthConfig, SyntheticPair};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Train/val/test sizes in the 200:20:40 proportion; every split gets at
/// least one pair when `n >= 3`.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    if n < 3 {
        return (n, 0, 0);
    }
    let val = ((n as f64 / 13.0).round() as usize).max(1);
    let test = ((2.0 * n as f64 / 13.0).round() as usize).max(1);
    (n - val - test, val, test)
}

/// Split of pair `index` out of `n`; pairs are ordered train, val, test.
pub fn split_of(index: usize, n: usize) -> Split {
    let (train, val, _) = split_counts(n);
    if index < train {
        Split::Train
    } else if index < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub split: Split,
    pub seed: u64,
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub config: SynthConfig,
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "# synthetic registration corpus\nheight {}\nwidth {}\namp {}\nblur {}\nlabels {}\nkeypoints {}\n",
            c.height, c.width, c.amp, c.blur, c.n_labels, c.n_keypoints
        );
        for e in &self.entries {
            out.push_str(&format!("pair {} {} {}\n", e.split, e.seed, e.dir.display()));
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut config = SynthConfig::default();
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail,
            };
            let words: Vec<&str> = line.split_whitespace().collect();
            fn num<V: FromStr>(s: &str) -> std::result::Result<V, String> {
                s.parse().map_err(|_| format!("bad number {s:?}"))
            }
            match words.as_slice() {
                ["pair", split, seed, dir] => entries.push(Entry {
                    split: split.parse().map_err(err)?,
                    seed: num(seed).map_err(err)?,
                    dir: PathBuf::from(dir),
                }),
                ["height", v] => config.height = num(v).map_err(err)?,
                ["width", v] => config.width = num(v).map_err(err)?,
                ["amp", v] => config.amp = num(v).map_err(err)?,
                ["blur", v] => config.blur = num(v).map_err(err)?,
                ["labels", v] => config.n_labels = num(v).map_err(err)?,
                ["keypoints", v] => config.n_keypoints = num(v).map_err(err)?,
                _ => return Err(err(format!("unrecognized line {line:?}"))),
            }
        }
        Ok(Manifest { config, entries })
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Manifest::parse(&text, &path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// `n` pairs with seeds `base_seed, base_seed + 1, …` and their splits.
pub fn generate_corpus(n: usize, base_seed: u64, cfg: &SynthConfig) -> Result<Vec<(Split, SyntheticPair)>> {
    (0..n)
        .map(|i| Ok((split_of(i, n), generate_pair(base_seed.wrapping_add(i as u64), cfg)?)))
        .collect()
}

pub fn save_pair(dir: &Path, pair: &SyntheticPair) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_dten(dir.join("fixed.dten"), pair.fixed.tensor())?;
    write_dten(dir.join("moving.dten"), pair.moving.tensor())?;
    write_dten(dir.join("gt_field.dten"), pair.gt_field.tensor())?;
    write_labels(dir.join("labels_fixed.dten"), &pair.labels_fixed)?;
    write_labels(dir.join("labels_moving.dten"), &pair.labels_moving)?;
    write_keypoints(dir.join("keypoints_fixed.csv"), &pair.keypoints_fixed)?;
    write_keypoints(dir.join("keypoints_moving.csv"), &pair.keypoints_moving)
}

pub fn load_pair(dir: &Path, seed: u64) -> Result<SyntheticPair> {
    Ok(SyntheticPair {
        seed,
        fixed: Image2D::from_tensor(read_dten(dir.join("fixed.dten"))?)?,
        moving: Image2D::from_tensor(read_dten(dir.join("moving.dten"))?)?,
        gt_field: DisplacementField::from_tensor(read_dten(dir.join("gt_field.dten"))?)?,
        labels_fixed: read_labels(dir.join("labels_fixed.dten"))?,
        labels_moving: read_labels(dir.join("labels_moving.dten"))?,
        keypoints_fixed: read_keypoints(dir.join("keypoints_fixed.csv"))?,
        keypoints_moving: read_keypoints(dir.join("keypoints_moving.csv"))?,
    })
}

/// Generates and writes a corpus under `root`, returning its manifest.
pub fn write_corpus(root: &Path, n: usize, base_seed: u64, cfg: &SynthConfig) -> Result<Manifest> {
    let mut entries = Vec::with_capacity(n);
    for (i, (split, pair)) in generate_corpus(n, base_seed, cfg)?.into_iter().enumerate() {
        let rel = PathBuf::from(format!("pairs/{i:05}"));
        save_pair(&root.join(&rel), &pair)?;
        entries.push(Entry {
            split,
            seed: pair.seed,
            dir: rel,
        });
    }
    let manifest = Manifest { config: *cfg, entries };
    let path = root.join(MANIFEST);
    fs::write(&path, manifest.render()).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Loads every pair of `split` listed in the manifest under `root`.
pub fn load_split(root: &Path, manifest: &Manifest, split: Split) -> Result<Vec<SyntheticPair>> {
    manifest.split(split).map(|e| load_pair(&root.join(&e.dir), e.seed)).collect()
}
