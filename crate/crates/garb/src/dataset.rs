//! On-disk FlatShop datasets: PNG images plus tab-separated manifests.
//!
//! A manifest row is `reference_file\tgarment_file\tclass_name\tseed`, paths
//! relative to the manifest's directory. Upper- and lower-body entries of one
//! person share the same reference image.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use garb_core::flatshop::{pair_across_persons, persons_in_split, render_pair, split_plan, GarmentClass, OutfitKind, PersonParams};
use garb_core::RgbImage;

use crate::config::DataConfig;
use crate::error::{Error, IoContext, Result};

pub const MANIFEST_HEADER: &str = "reference_file\tgarment_file\tclass_name\tseed";
pub const PAIRING_HEADER: &str = "source_person_file\tgarment_owner_file\tclass";

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::from_raw(w as usize, h as usize, img.into_raw())?)
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    image::save_buffer(path, img.as_raw(), img.width() as u32, img.height() as u32, image::ColorType::Rgb8)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub reference_file: String,
    pub garment_file: String,
    pub class: GarmentClass,
    pub seed: u64,
}

impl ManifestEntry {
    /// The synthetic person behind the reference image.
    pub fn person(&self) -> PersonParams {
        PersonParams::from_seed(self.seed, PersonParams::outfit_for(self.class))
    }

    /// Stable identifier used for prediction file names.
    pub fn pair_id(&self, index: usize) -> String {
        format!("{index:05}_{}", self.class.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory the relative paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn reference_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.reference_file)
    }

    pub fn garment_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.garment_file)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", e.reference_file, e.garment_file, e.class.name(), e.seed);
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).at(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let bad = |line: usize, msg: String| Error::Manifest { path: path.to_path_buf(), msg: format!("line {line}: {msg}") };
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || (i == 0 && line == MANIFEST_HEADER) {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(i + 1, format!("expected 4 columns, found {}", cols.len())));
            }
            let class: GarmentClass = cols[2].parse().map_err(|_| bad(i + 1, format!("unknown class {}", cols[2])))?;
            let seed = cols[3].parse().map_err(|_| bad(i + 1, format!("bad seed {}", cols[3])))?;
            entries.push(ManifestEntry {
                reference_file: cols[0].to_string(),
                garment_file: cols[1].to_string(),
                class,
                seed,
            });
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, entries })
    }

    pub fn load_reference(&self, e: &ManifestEntry) -> Result<RgbImage> {
        load_png(&self.reference_path(e))
    }

    pub fn load_garment(&self, e: &ManifestEntry) -> Result<RgbImage> {
        load_png(&self.garment_path(e))
    }
}

fn outfit_tag(class: GarmentClass) -> &'static str {
    match PersonParams::outfit_for(class) {
        OutfitKind::Separates => "separates",
        OutfitKind::Dress => "dress",
    }
}

/// Render `n` entries starting at person seed `first_seed` into `root/split/`.
pub fn generate_split(root: &Path, split: &str, n: usize, first_seed: u64, size: usize) -> Result<DatasetManifest> {
    let mut entries = Vec::with_capacity(n);
    for (seed, class) in split_plan(n, first_seed) {
        let pair = render_pair(seed, class, size)?;
        let reference_file = format!("{split}/person_{seed:06}_{}.png", outfit_tag(class));
        let garment_file = format!("{split}/garment_{seed:06}_{}.png", class.name());
        let rpath = root.join(&reference_file);
        if !rpath.exists() {
            save_png(&rpath, &pair.reference)?;
        }
        save_png(&root.join(&garment_file), &pair.garment)?;
        entries.push(ManifestEntry { reference_file, garment_file, class, seed });
    }
    Ok(DatasetManifest { root: root.to_path_buf(), entries })
}

/// Generate train and test splits with disjoint person seeds and write
/// `train.tsv` / `test.tsv` into `cfg.root`.
pub fn generate_dataset(cfg: &DataConfig) -> Result<(DatasetManifest, DatasetManifest)> {
    std::fs::create_dir_all(&cfg.root).at(&cfg.root)?;
    let train = generate_split(&cfg.root, "train", cfg.n_train, cfg.seed, cfg.image_size)?;
    let test_seed = cfg.seed + persons_in_split(cfg.n_train);
    let test = generate_split(&cfg.root, "test", cfg.n_test, test_seed, cfg.image_size)?;
    train.write(&cfg.root.join("train.tsv"))?;
    test.write(&cfg.root.join("test.tsv"))?;
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairingLine {
    pub source: String,
    pub owner: String,
    pub class: GarmentClass,
}

/// One line per distinct person: that person receives a garment worn by a
/// different person, drawn uniformly with `seed`.
pub fn make_pairing(manifest: &DatasetManifest, seed: u64) -> Result<Vec<PairingLine>> {
    let persons: Vec<u64> = manifest.entries.iter().map(|e| e.seed).collect();
    Ok(pair_across_persons(&persons, seed)?
        .into_iter()
        .map(|(s, o)| {
            let (src, own) = (&manifest.entries[s], &manifest.entries[o]);
            PairingLine { source: src.reference_file.clone(), owner: own.reference_file.clone(), class: own.class }
        })
        .collect())
}

pub fn write_pairing(path: &Path, lines: &[PairingLine]) -> Result<()> {
    let mut s = String::from(PAIRING_HEADER);
    s.push('\n');
    for l in lines {
        let _ = writeln!(s, "{}\t{}\t{}", l.source, l.owner, l.class.name());
    }
    std::fs::write(path, s).at(path)
}

pub fn read_pairing(path: &Path) -> Result<Vec<PairingLine>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line == PAIRING_HEADER) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |msg: &str| Error::Manifest { path: path.to_path_buf(), msg: format!("line {}: {msg}", i + 1) };
        if cols.len() != 3 {
            return Err(bad("expected 3 columns"));
        }
        let class = cols[2].parse().map_err(|_| bad("unknown class"))?;
        out.push(PairingLine { source: cols[0].to_string(), owner: cols[1].to_string(), class });
    }
    Ok(out)
}
