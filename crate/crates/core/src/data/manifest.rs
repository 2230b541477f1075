//! Dataset manifests and disjoint split assignment.
//!
//! A manifest is a UTF-8 text file with one tab-separated record per line:
//!
//! ```text
//! meta       <key>          <value>        (num_classes, patch_size, stride)
//! <split>    <image path>   <mask path or ->
//! skipped    <image path>   <reason>
//! ```
//!
//! `<split>` is one of `unlabeled`, `train`, `val`, `test`. Paths are
//! relative to the directory holding the manifest. Lines starting with `#`
//! are comments.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{load_image, load_mask, save_mask, save_png, RAW_MAGIC};
use super::synth::{synth_generate, SYNTH_CLASSES};
use super::{extract_patches, Patch};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitTag {
    Unlabeled,
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn is_labeled(self) -> bool {
        self != SplitTag::Unlabeled
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Unlabeled => "unlabeled",
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        })
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unlabeled" => Ok(SplitTag::Unlabeled),
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::Data(format!("unknown split tag `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: SplitTag,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub num_classes: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub entries: Vec<ManifestEntry>,
    /// Images left out, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Fractions of the files assigned to each split; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub unlabeled: f64,
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(unlabeled: f64, train: f64, test: f64) -> Self {
        Self { unlabeled, train, val: 0.0, test }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.unlabeled, self.train, self.val, self.test];
        if parts.iter().any(|&f| !(f >= 0.0)) || ((parts.iter().sum::<f64>() - 1.0).abs() > 1e-9) {
            return Err(Error::Config(format!("split fractions must be non-negative and sum to 1, got {parts:?}")));
        }
        Ok(())
    }

    /// Counts for `n` files in the order unlabeled, train, val, test; the
    /// test split absorbs rounding.
    pub fn counts(&self, n: usize) -> [usize; 4] {
        let r = |f: f64| ((f * n as f64).round() as usize).min(n);
        let u = r(self.unlabeled);
        let tr = r(self.train).min(n - u);
        let v = r(self.val).min(n - u - tr);
        [u, tr, v, n - u - tr - v]
    }
}

impl DatasetManifest {
    pub fn entries_in(&self, split: SplitTag) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: SplitTag) -> usize {
        self.entries_in(split).count()
    }

    /// Checks split exclusivity and that labeled entries carry masks.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.image) {
                return Err(Error::Data(format!("{} appears in more than one entry", e.image.display())));
            }
            if e.split.is_labeled() && e.mask.is_none() {
                return Err(Error::Data(format!("{} entry {} has no mask", e.split, e.image.display())));
            }
        }
        if self.num_classes < 2 || self.patch_size == 0 || self.stride == 0 {
            return Err(Error::Data("manifest needs num_classes >= 2 and positive patch size and stride".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# dataset manifest\n");
        s += &format!("meta\tnum_classes\t{}\n", self.num_classes);
        s += &format!("meta\tpatch_size\t{}\n", self.patch_size);
        s += &format!("meta\tstride\t{}\n", self.stride);
        for e in &self.entries {
            let mask = e.mask.as_ref().map_or("-".to_string(), |m| m.display().to_string());
            s += &format!("{}\t{}\t{mask}\n", e.split, e.image.display());
        }
        for (p, why) in &self.skipped {
            s += &format!("skipped\t{}\t{why}\n", p.display());
        }
        s
    }

    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut m = DatasetManifest {
            root: root.to_path_buf(),
            num_classes: 0,
            patch_size: 0,
            stride: 0,
            entries: Vec::new(),
            skipped: Vec::new(),
        };
        for (no, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |d: &str| Error::Data(format!("manifest line {}: {d}", no + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            let [tag, a, b] = fields[..] else {
                return Err(bad("expected three tab-separated fields"));
            };
            match tag {
                "meta" => {
                    let v: usize = b.parse().map_err(|_| bad(&format!("`{b}` is not an integer")))?;
                    match a {
                        "num_classes" => m.num_classes = v,
                        "patch_size" => m.patch_size = v,
                        "stride" => m.stride = v,
                        other => return Err(bad(&format!("unknown meta key `{other}`"))),
                    }
                }
                "skipped" => m.skipped.push((PathBuf::from(a), b.to_string())),
                split => m.entries.push(ManifestEntry {
                    split: split.parse().map_err(|_| bad(&format!("unknown tag `{split}`")))?,
                    image: PathBuf::from(a),
                    mask: (b != "-").then(|| PathBuf::from(b)),
                }),
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text())?;
        Ok(path)
    }

    /// Reads a manifest file; paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

fn image_size(path: &Path) -> Result<(usize, usize)> {
    let mut head = [0u8; 24];
    let n = {
        use std::io::Read;
        std::fs::File::open(path)?.read(&mut head)?
    };
    if n == 24 && &head[..8] == RAW_MAGIC {
        let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap()) as usize;
        return Ok((word(16), word(20)));
    }
    let (w, h) = image::image_dimensions(path)?;
    Ok((h as usize, w as usize))
}

/// Scans `root/images`, pairs each file with `root/masks/<same name>` when
/// present, shuffles with `rng` and assigns splits by `fractions`. Images
/// smaller than `patch_size` are recorded as skipped. The manifest is
/// written to `root/manifest.tsv`.
pub fn build_manifest(
    root: &Path,
    fractions: SplitFractions,
    num_classes: usize,
    patch_size: usize,
    stride: usize,
    rng: &mut impl Rng,
) -> Result<DatasetManifest> {
    fractions.validate()?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(root.join("images"))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file());
    files.sort();

    let mut skipped = Vec::new();
    let mut usable = Vec::new();
    for f in files {
        let rel = f.strip_prefix(root).expect("inside root").to_path_buf();
        let (h, w) = image_size(&f)?;
        if h < patch_size || w < patch_size {
            log::warn!("{}: {h}x{w} is smaller than patch size {patch_size}; skipped", rel.display());
            skipped.push((rel, format!("{h}x{w} smaller than patch {patch_size}")));
        } else {
            usable.push(rel);
        }
    }
    usable.shuffle(rng);

    let counts = fractions.counts(usable.len());
    let tags = [SplitTag::Unlabeled, SplitTag::Train, SplitTag::Val, SplitTag::Test];
    let mut entries = Vec::with_capacity(usable.len());
    let mut it = usable.into_iter();
    for (tag, count) in tags.into_iter().zip(counts) {
        for image in it.by_ref().take(count) {
            let mask = if tag.is_labeled() {
                let rel = PathBuf::from("masks").join(image.file_name().expect("file"));
                if !root.join(&rel).is_file() {
                    return Err(Error::Data(format!(
                        "{} is assigned to {tag} but has no mask at {}",
                        image.display(),
                        rel.display()
                    )));
                }
                Some(rel)
            } else {
                None
            };
            entries.push(ManifestEntry { split: tag, image, mask });
        }
    }
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        num_classes,
        patch_size,
        stride,
        entries,
        skipped,
    };
    manifest.validate()?;
    manifest.save()?;
    Ok(manifest)
}

/// Loads every patch of `split`. Labeled splits validate mask classes.
/// Evaluation splits (val, test) use a stride equal to the patch size.
pub fn load_split(manifest: &DatasetManifest, split: SplitTag) -> Result<Vec<Patch>> {
    let stride = match split {
        SplitTag::Val | SplitTag::Test => manifest.patch_size,
        _ => manifest.stride,
    };
    let mut out = Vec::new();
    for e in manifest.entries_in(split) {
        let image = load_image(&manifest.root.join(&e.image))?;
        let mask = match (&e.mask, split.is_labeled()) {
            (Some(m), true) => {
                let mask = load_mask(&manifest.root.join(m))?;
                mask.check_classes(manifest.num_classes)
                    .map_err(|err| Error::Data(format!("{}: {err}", m.display())))?;
                Some(mask)
            }
            _ => None,
        };
        out.extend(extract_patches(&image, mask.as_ref(), manifest.patch_size, stride, &e.image.display().to_string())?);
    }
    Ok(out)
}

/// Generates `n` synthetic image/mask pairs under `out/images` and
/// `out/masks` and builds the manifest.
pub fn write_synth_dataset(
    out: &Path,
    n: usize,
    side: usize,
    seed: u64,
    fractions: SplitFractions,
    patch_size: usize,
    stride: usize,
) -> Result<DatasetManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = synth_generate(n, side, SYNTH_CLASSES, &mut rng)?;
    std::fs::create_dir_all(out.join("images"))?;
    std::fs::create_dir_all(out.join("masks"))?;
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{i:05}.png");
        save_png(&out.join("images").join(&name), &s.image)?;
        save_mask(&out.join("masks").join(&name), &s.mask)?;
    }
    build_manifest(out, fractions, SYNTH_CLASSES, patch_size, stride, &mut rng)
}
