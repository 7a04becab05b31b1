//! Dataset manifests, disparity sidecars and on-disk synthetic datasets.
//!
//! Manifest lines are `<split>\t<left_path>\t<right_path>`; relative paths
//! resolve against the manifest's directory. A leading `# seed <n>` comment
//! records the generator seed. Disparity sidecars sit next to the left image
//! with a `.disp` extension: `H:u32 W:u32` then `H·W` little-endian `f32`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::image_io::{load_image, save_image};
use super::sample::StereoSample;
use super::synth::{mix_seed, synth_stereo, SynthConfig};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Generator seed family. The test split uses its own family, like a
    /// separately recorded video.
    fn family(self) -> u64 {
        match self {
            Split::Train | Split::Val => 0xA11CE,
            Split::Test => 0xB0B5EED,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Seed of frame `index` in `split`. Train and val share a family but use
/// disjoint index ranges via the split tag.
pub fn frame_seed(base: u64, split: Split, index: usize) -> u64 {
    mix_seed(&[base, split.family(), split as u64, index as u64])
}

/// In-memory synthetic frames for one split.
pub fn synth_split(base: u64, split: Split, count: usize, cfg: &SynthConfig, exec: Execution) -> Result<Vec<StereoSample>> {
    try_map_indexed(exec, count, |i| synth_stereo(frame_seed(base, split, i), cfg))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub left: PathBuf,
    pub right: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut m = DatasetManifest::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(seed) = rest.trim().strip_prefix("seed ") {
                    m.seed = seed
                        .trim()
                        .parse()
                        .map_err(|_| Error::format(origin, format!("line {}: bad seed", no + 1)))?;
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::format(
                    origin,
                    format!("line {}: expected 3 tab-separated fields, got {}", no + 1, fields.len()),
                ));
            }
            m.entries.push(ManifestEntry {
                split: fields[0]
                    .parse()
                    .map_err(|e: Error| Error::format(origin, format!("line {}: {e}", no + 1)))?,
                left: fields[1].into(),
                right: fields[2].into(),
            });
        }
        Ok(m)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# seed {}\n", self.seed);
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.split, e.left.display(), e.right.display()));
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// No file may appear in two splits.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut owner = std::collections::HashMap::new();
        for e in &self.entries {
            for p in [&e.left, &e.right] {
                if let Some(prev) = owner.insert(p.clone(), e.split) {
                    if prev != e.split {
                        return Err(Error::Invalid(format!(
                            "{} appears in both {prev} and {}",
                            p.display(),
                            e.split
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn sidecar_path(left: &Path) -> PathBuf {
    left.with_extension("disp")
}

pub fn write_disparity(path: impl AsRef<Path>, d: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    if d.rank() != 2 {
        return Err(Error::format(path, format!("disparity must be [H,W], got {:?}", d.shape())));
    }
    let mut bytes = Vec::with_capacity(8 + 4 * d.len());
    bytes.extend((d.shape()[0] as u32).to_le_bytes());
    bytes.extend((d.shape()[1] as u32).to_le_bytes());
    for v in d.data() {
        bytes.extend(v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_disparity(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::format(path, "truncated disparity header"));
    }
    let h = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 4 * h * w {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes for {h}x{w}, found {}", 4 * h * w, bytes.len() - 8),
        ));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new([h, w], data)
}

/// Frame counts per split for [`generate_dataset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    fn get(&self, s: Split) -> usize {
        match s {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Writes HR frames, disparity sidecars and `manifest.tsv` into `dir`.
pub fn generate_dataset(
    dir: impl AsRef<Path>,
    seed: u64,
    counts: SplitCounts,
    cfg: &SynthConfig,
    exec: Execution,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = if cfg.channels == 1 { "pgm" } else { "ppm" };
    let mut manifest = DatasetManifest {
        seed,
        entries: Vec::new(),
    };
    for split in Split::ALL {
        let entries = try_map_indexed(exec, counts.get(split), |i| -> Result<ManifestEntry> {
            let s = synth_stereo(frame_seed(seed, split, i), cfg)?;
            let left = PathBuf::from(format!("{split}_{i:05}_L.{ext}"));
            let right = PathBuf::from(format!("{split}_{i:05}_R.{ext}"));
            save_image(dir.join(&left), &s.hr_left)?;
            save_image(dir.join(&right), &s.hr_right)?;
            if let Some(d) = &s.disparity {
                write_disparity(sidecar_path(&dir.join(&left)), d)?;
            }
            Ok(ManifestEntry { split, left, right })
        })?;
        manifest.entries.extend(entries);
    }
    manifest.write(dir.join("manifest.tsv"))?;
    Ok(manifest)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads the full-frame samples of one split, deriving LR by bicubic downscale.
pub fn load_split(manifest_path: impl AsRef<Path>, split: Split, scale: usize, exec: Execution) -> Result<Vec<StereoSample>> {
    let manifest_path = manifest_path.as_ref();
    let manifest = DatasetManifest::read(manifest_path)?;
    manifest.check_disjoint()?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    try_map_indexed(exec, entries.len(), |i| {
        let e = entries[i];
        let left = resolve(base, &e.left);
        let hr_l = load_image(&left)?;
        let hr_r = load_image(resolve(base, &e.right))?;
        let mut s = StereoSample::from_hr(hr_l, hr_r, scale)?;
        let side = sidecar_path(&left);
        if side.exists() {
            s.disparity = Some(read_disparity(side)?);
        }
        Ok(s)
    })
}

/// Unique seeds across splits, for sanity checks.
pub fn distinct_seeds(base: u64, counts: SplitCounts) -> bool {
    let mut seen = HashSet::new();
    Split::ALL
        .iter()
        .all(|&s| (0..counts.get(s)).all(|i| seen.insert(frame_seed(base, s, i))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_text_roundtrip() {
        let m = DatasetManifest {
            seed: 42,
            entries: vec![
                ManifestEntry { split: Split::Train, left: "a_L.pgm".into(), right: "a_R.pgm".into() },
                ManifestEntry { split: Split::Test, left: "b_L.pgm".into(), right: "b_R.pgm".into() },
            ],
        };
        let text = m.to_text();
        assert!(text.contains("train\ta_L.pgm\ta_R.pgm\n"));
        assert_eq!(DatasetManifest::parse(&text, Path::new("m")).unwrap(), m);
        assert!(DatasetManifest::parse("train\tonly_two", Path::new("m")).is_err());
        assert!(DatasetManifest::parse("bogus\ta\tb", Path::new("m")).is_err());
    }

    #[test]
    fn overlapping_splits_rejected() {
        let text = "train\tx.pgm\ty.pgm\ntest\tx.pgm\tz.pgm\n";
        let m = DatasetManifest::parse(text, Path::new("m")).unwrap();
        assert!(m.check_disjoint().is_err());
    }

    #[test]
    fn disparity_sidecar_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.disp");
        let d = Tensor::from_fn([3, 5], |i| i as f32 * 0.5);
        write_disparity(&p, &d).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[0..8], &[3, 0, 0, 0, 5, 0, 0, 0]);
        assert_eq!(bytes.len(), 8 + 60);
        assert_eq!(read_disparity(&p).unwrap(), d);
        fs::write(&p, &bytes[..20]).unwrap();
        assert!(read_disparity(&p).is_err());
    }

    #[test]
    fn generated_dataset_is_valid_and_disjoint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { height: 32, width: 64, ..SynthConfig::default() };
        let counts = SplitCounts { train: 3, val: 1, test: 2 };
        let m = generate_dataset(dir.path(), 9, counts, &cfg, Execution::Parallel).unwrap();
        assert_eq!(m.entries.len(), 6);
        m.check_disjoint().unwrap();
        assert!(distinct_seeds(9, counts));
        let test = load_split(dir.path().join("manifest.tsv"), Split::Test, 2, Execution::Sequential).unwrap();
        assert_eq!(test.len(), 2);
        for s in &test {
            s.validate().unwrap();
            assert_eq!(s.lr_size(), (16, 32));
            assert!(s.disparity.is_some());
        }
        let train = load_split(dir.path().join("manifest.tsv"), Split::Train, 2, Execution::Parallel).unwrap();
        assert!(train.iter().all(|t| test.iter().all(|u| t.hr_left != u.hr_left)));
    }
}
