//! Person-to-person transfer: take a garment off one person (by try-off or
//! ground truth) and dress another synthetic person in it.

use std::path::Path;

use garb_core::flatshop::{GarmentClass, PersonParams};
use garb_core::RgbImage;

use crate::config::SamplerSettings;
use crate::dataset::{save_png, DatasetManifest, PairingLine};
use crate::error::{Error, Result};
use crate::pipeline::Pipeline;

/// Where the transferred garment comes from.
pub enum GarmentSource<'a> {
    /// Reconstructed from the owner's photo by the diffusion pipeline.
    Model { pipeline: &'a Pipeline, sampler: SamplerSettings },
    /// The owner's true flat garment.
    GroundTruth,
}

pub struct Transfer {
    pub line: PairingLine,
    pub source_image: RgbImage,
    pub owner_image: RgbImage,
    pub garment: RgbImage,
    pub result: RgbImage,
}

impl Transfer {
    /// Source, owner, garment and result side by side.
    pub fn composite(&self) -> RgbImage {
        let tiles = [&self.source_image, &self.owner_image, &self.garment, &self.result];
        let s = self.result.height();
        let mut out = RgbImage::new(4 * s, s, [255, 255, 255]);
        for (k, t) in tiles.iter().enumerate() {
            for y in 0..s.min(t.height()) {
                for x in 0..s.min(t.width()) {
                    out.put(k * s + x, y, t.get(x, y));
                }
            }
        }
        out
    }
}

/// Dress `person` in each `(class, flat garment)` in order.
pub fn dress_sequentially(person: &PersonParams, size: usize, garments: &[(GarmentClass, RgbImage)]) -> Result<RgbImage> {
    let mut dressing = person.dressing(size);
    for (class, g) in garments {
        dressing = dressing.try_on(*class, g.clone())?;
    }
    Ok(dressing.render(size)?.0)
}

/// Run every pairing line. Lines whose source image has no synthetic person
/// parameters in `manifest` are skipped with a warning.
pub fn run_p2p(
    manifest: &DatasetManifest,
    lines: &[PairingLine],
    source: &GarmentSource<'_>,
    size: usize,
    base_seed: u64,
) -> Result<Vec<Transfer>> {
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let Some(src) = manifest.entries.iter().find(|e| e.reference_file == line.source) else {
            log::warn!("skipping {}: no synthetic person parameters", line.source);
            continue;
        };
        let owner = manifest
            .entries
            .iter()
            .find(|e| e.reference_file == line.owner && e.class == line.class)
            .ok_or_else(|| Error::Config(format!("owner {} with class {} not in manifest", line.owner, line.class)))?;
        let owner_image = manifest.load_reference(owner)?;
        let garment = match source {
            GarmentSource::Model { pipeline, sampler } => {
                pipeline.try_off(&owner_image, line.class, base_seed + i as u64, sampler)?
            }
            GarmentSource::GroundTruth => owner.person().spec(line.class).render_flat(size),
        };
        let result = dress_sequentially(&src.person(), size, &[(line.class, garment.clone())])?;
        out.push(Transfer { line: line.clone(), source_image: manifest.load_reference(src)?, owner_image, garment, result });
    }
    Ok(out)
}

/// Write `<k>_composite.png` and `<k>_garment.png` per transfer.
pub fn write_p2p(out_dir: &Path, transfers: &[Transfer]) -> Result<()> {
    for (k, t) in transfers.iter().enumerate() {
        save_png(&out_dir.join(format!("{k:05}_composite.png")), &t.composite())?;
        save_png(&out_dir.join(format!("{k:05}_garment.png")), &t.garment)?;
    }
    Ok(())
}
