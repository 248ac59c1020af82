//! Non-overlapping HR tiles paired with their bicubic-downsampled LR versions.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{bicubic_resize, read_hsi, write_hsi, HsiCube};
use crate::error::{invalid, Error, Result};
use crate::tensor::Element;

const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => invalid(format!("unknown split {other:?}")),
        }
    }
}

/// How patch indices are assigned to the held-out set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitRule {
    /// Every patch is used for training.
    AllTrain,
    /// Patch `i` (0-based, counted across all cubes) is held out when `(i + 1) % n == 0`.
    EveryNth(usize),
}

impl SplitRule {
    fn is_test(self, i: usize) -> bool {
        match self {
            SplitRule::AllTrain => false,
            SplitRule::EveryNth(n) => n > 0 && (i + 1) % n == 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pair<T: Element = f32> {
    pub lr: HsiCube<T>,
    pub hr: HsiCube<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSet<T: Element = f32> {
    pub scale: usize,
    pub split: Split,
    pub pairs: Vec<Pair<T>>,
}

impl<T: Element> PairSet<T> {
    pub fn new(scale: usize, split: Split, pairs: Vec<Pair<T>>) -> Result<Self> {
        for (i, p) in pairs.iter().enumerate() {
            if p.hr.height() != scale * p.lr.height()
                || p.hr.width() != scale * p.lr.width()
                || p.hr.bands() != p.lr.bands()
            {
                return invalid(format!(
                    "pair {i}: HR {}x{}x{} is not x{scale} of LR {}x{}x{}",
                    p.hr.height(),
                    p.hr.width(),
                    p.hr.bands(),
                    p.lr.height(),
                    p.lr.width(),
                    p.lr.bands()
                ));
            }
        }
        Ok(Self {
            scale,
            split,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

impl PairSet<f32> {
    /// Writes `manifest.txt` plus `NNNN_lr.hsi` / `NNNN_hr.hsi` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let manifest = format!(
            "scale={}\nsplit={}\ncount={}\n",
            self.scale,
            self.split,
            self.pairs.len()
        );
        fs::write(dir.join(MANIFEST), manifest)?;
        for (i, p) in self.pairs.iter().enumerate() {
            write_hsi(dir.join(format!("{i:04}_lr.hsi")), &p.lr)?;
            write_hsi(dir.join(format!("{i:04}_hr.hsi")), &p.hr)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        let (mut scale, mut split, mut count) = (None, None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Corrupt(format!("manifest line {line:?}")))?;
            let bad = |_| Error::Corrupt(format!("manifest value {line:?}"));
            match k {
                "scale" => scale = Some(v.parse::<usize>().map_err(bad)?),
                "count" => count = Some(v.parse::<usize>().map_err(bad)?),
                "split" => {
                    split = Some(
                        v.parse::<Split>()
                            .map_err(|e| Error::Corrupt(e.to_string()))?,
                    )
                }
                other => return Err(Error::Corrupt(format!("unknown manifest key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::Corrupt(format!("manifest lacks {k}"));
        let scale = scale.ok_or_else(|| missing("scale"))?;
        let split = split.ok_or_else(|| missing("split"))?;
        let count = count.ok_or_else(|| missing("count"))?;
        let mut pairs = Vec::with_capacity(count);
        for i in 0..count {
            pairs.push(Pair {
                lr: read_hsi(dir.join(format!("{i:04}_lr.hsi")))?,
                hr: read_hsi(dir.join(format!("{i:04}_hr.hsi")))?,
            });
        }
        PairSet::new(scale, split, pairs).map_err(|e| Error::Corrupt(e.to_string()))
    }
}

/// Tiles each cube into `patch × patch` HR crops (row-major, non-overlapping)
/// and pairs each with its `1/scale` bicubic downsample. Returns `(train, test)`.
pub fn make_pairs<T: Element>(
    cubes: &[HsiCube<T>],
    scale: usize,
    patch: usize,
    rule: SplitRule,
) -> Result<(PairSet<T>, PairSet<T>)> {
    if scale == 0 || patch == 0 || patch % scale != 0 {
        return invalid(format!(
            "patch {patch} must be a positive multiple of scale {scale}"
        ));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut index = 0;
    for cube in cubes {
        if patch > cube.height() || patch > cube.width() {
            return invalid(format!(
                "patch {patch} is larger than the {}x{} cube",
                cube.height(),
                cube.width()
            ));
        }
        for ty in 0..cube.height() / patch {
            for tx in 0..cube.width() / patch {
                let hr = cube.crop(ty * patch, tx * patch, patch, patch)?;
                let lr = bicubic_resize(&hr, 1.0 / scale as f64)?;
                let pair = Pair { lr, hr };
                if rule.is_test(index) {
                    test.push(pair);
                } else {
                    train.push(pair);
                }
                index += 1;
            }
        }
    }
    Ok((
        PairSet::new(scale, Split::Train, train)?,
        PairSet::new(scale, Split::Test, test)?,
    ))
}
