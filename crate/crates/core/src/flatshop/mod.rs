//! FlatShop: a layered 2D rasterizer producing paired person / flat-garment
//! images with garment-class labels.
//!
//! A person is drawn on a portrait canvas (height `size`, width `3·size/4`)
//! and padded to a square with white, exactly like the real-photo
//! preprocessing. Garments are first rendered as flat catalog images on
//! white; the person render then samples those flat images through each
//! slot's geometry, so feeding a flat image back through [`Dressing`]
//! reproduces the person render pixel for pixel.

mod font;
pub mod geometry;
mod pairing;
mod preprocess;

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::color::{hsv_to_rgb, Hsv};
use crate::error::{config_err, contract, Error, Result};
use crate::image::RgbImage;
use geometry::{Cut, Pose, SlotFrame, PORTRAIT_ASPECT_DEN, PORTRAIT_ASPECT_NUM};

pub use pairing::pair_across_persons;
pub use preprocess::{crop_center, pad_to_square, resize_bilinear, WHITE};

/// Garment category, numbered as in the class-embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GarmentClass {
    UpperBody = 1,
    LowerBody = 2,
    Dresses = 3,
}

impl GarmentClass {
    pub const ALL: [GarmentClass; 3] = [
        GarmentClass::UpperBody,
        GarmentClass::LowerBody,
        GarmentClass::Dresses,
    ];

    /// 1-based class id.
    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        match id {
            1 => Ok(Self::UpperBody),
            2 => Ok(Self::LowerBody),
            3 => Ok(Self::Dresses),
            _ => Err(contract!("garment class id {} outside 1..=3", id)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::UpperBody => "upper_body",
            Self::LowerBody => "lower_body",
            Self::Dresses => "dresses",
        }
    }
}

impl fmt::Display for GarmentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GarmentClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| config_err!("unknown garment class {:?}", s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    Solid,
    /// Horizontal bands; `period` in garment-square units.
    Stripes { period: f64 },
    Checker { period: f64 },
}

/// Everything needed to draw one flat garment.
#[derive(Debug, Clone, PartialEq)]
pub struct GarmentSpec {
    pub cut: Cut,
    /// Nominal hue in degrees.
    pub hue: f64,
    pub base: [u8; 3],
    pub tint: [u8; 3],
    pub ink: [u8; 3],
    pub pattern: Pattern,
    pub logo: Option<[u8; 2]>,
}

impl GarmentSpec {
    pub fn class(&self) -> GarmentClass {
        self.cut.class()
    }

    fn colour_at(&self, q: geometry::Point) -> [u8; 3] {
        if let (Some(letters), Some(anchor)) = (self.logo, self.cut.logo_anchor()) {
            const CELL: f64 = 0.03;
            let col = libm::floor((q.0 - anchor.0) / CELL);
            let row = libm::floor((q.1 - anchor.1) / CELL);
            if col >= 0.0 && row >= 0.0 {
                let (col, row) = (col as usize, row as usize);
                let letter = col / (font::GLYPH_W + 1);
                let gx = col % (font::GLYPH_W + 1);
                if letter < 2 && font::inked(letters[letter], gx, row) {
                    return self.ink;
                }
            }
        }
        let band = |v: f64, period: f64| libm::floor(v / (period / 2.0)) as i64;
        let alternate = match self.pattern {
            Pattern::Solid => false,
            Pattern::Stripes { period } => band(q.1, period) % 2 != 0,
            Pattern::Checker { period } => (band(q.0, period) + band(q.1, period)) % 2 != 0,
        };
        if alternate {
            self.tint
        } else {
            self.base
        }
    }

    /// Flat catalog image: the garment centred on white, filling the square.
    pub fn render_flat(&self, size: usize) -> RgbImage {
        let outline = self.cut.outline();
        let mut img = RgbImage::new(size, size, WHITE);
        let s = size as f64;
        for y in 0..size {
            for x in 0..size {
                let q = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
                if geometry::point_in_polygon(q, &outline) {
                    img.put(x, y, self.colour_at(q));
                }
            }
        }
        img
    }

    /// Plain grey filler used when a try-on removes a dress and leaves one
    /// slot of a two-piece outfit empty.
    pub fn neutral(class: GarmentClass) -> Self {
        let cut = match class {
            GarmentClass::UpperBody => Cut::Shirt { long_sleeves: false },
            GarmentClass::LowerBody => Cut::Trousers { long_legs: true },
            GarmentClass::Dresses => Cut::Dress { flare: 0.4 },
        };
        GarmentSpec {
            cut,
            hue: 0.0,
            base: [128, 128, 128],
            tint: [128, 128, 128],
            ink: [128, 128, 128],
            pattern: Pattern::Solid,
            logo: None,
        }
    }
}

/// A pixel of a flat garment image counts as garment unless it is near white.
pub const NEAR_WHITE: u8 = 240;

#[inline]
pub fn is_garment_pixel(px: [u8; 3]) -> bool {
    px.iter().any(|&c| c < NEAR_WHITE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutfitKind {
    /// Upper and lower garment worn together.
    Separates,
    Dress,
}

/// Generator record for one rendered person.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonParams {
    pub seed: u64,
    pub pose: Pose,
    pub skin: [u8; 3],
    pub background: [u8; 3],
    pub upper: GarmentSpec,
    pub lower: GarmentSpec,
    pub dress: GarmentSpec,
    pub outfit: OutfitKind,
}

const SKIN_TONES: [[u8; 3]; 5] = [
    [241, 206, 180],
    [224, 172, 138],
    [198, 134, 96],
    [141, 85, 54],
    [96, 60, 40],
];

fn draw_spec(rng: &mut ChaCha8Rng, cut: Cut, hue_index: u32, logo_allowed: bool) -> GarmentSpec {
    let jitter: f64 = rng.random_range(-3.0..3.0);
    let hue = f64::from(hue_index % 12) * 30.0 + 7.5 + jitter;
    let s: f64 = rng.random_range(0.65..0.9);
    let v: f64 = rng.random_range(0.7..0.92);
    let base = hsv_to_rgb(Hsv { h: hue, s, v });
    let tint = hsv_to_rgb(Hsv {
        h: hue,
        s: s * 0.45,
        v: (v + 0.08).min(1.0),
    });
    let ink = hsv_to_rgb(Hsv { h: hue, s, v: v * 0.5 });
    let periods = [0.10, 0.125, 0.16];
    let pattern = match rng.random_range(0..3u32) {
        0 => Pattern::Solid,
        1 => Pattern::Stripes {
            period: periods[rng.random_range(0..periods.len())],
        },
        _ => Pattern::Checker {
            period: periods[rng.random_range(0..periods.len())],
        },
    };
    let logo = if logo_allowed && rng.random_bool(0.4) {
        let n = font::LETTERS.len();
        Some([rng.random_range(0..n) as u8, rng.random_range(0..n) as u8])
    } else {
        None
    };
    GarmentSpec {
        cut,
        hue,
        base,
        tint,
        ink,
        pattern,
        logo,
    }
}

impl PersonParams {
    /// Deterministic person for `seed`. The draws do not depend on
    /// `outfit`, so the two-piece and dress variants of a seed share pose,
    /// skin and background.
    pub fn from_seed(seed: u64, outfit: OutfitKind) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = Pose {
            scale: rng.random_range(0.90..1.02),
            dx: rng.random_range(-0.04..0.04),
            dy: rng.random_range(0.0..0.04),
        };
        let skin = SKIN_TONES[rng.random_range(0..SKIN_TONES.len())];
        let grey: u8 = rng.random_range(215..=240);
        let upper_hue = rng.random_range(0..12u32);
        // Upper and lower hues sit at least 90° apart.
        let lower_hue = upper_hue + rng.random_range(3..=9u32);
        let dress_hue = rng.random_range(0..12u32);
        let long_sleeves = rng.random_bool(0.5);
        let long_legs = rng.random_bool(0.6);
        let flare = rng.random_range(0.34..0.48);
        let upper = draw_spec(&mut rng, Cut::Shirt { long_sleeves }, upper_hue, true);
        let lower = draw_spec(&mut rng, Cut::Trousers { long_legs }, lower_hue, false);
        let dress = draw_spec(&mut rng, Cut::Dress { flare }, dress_hue, true);
        Self {
            seed,
            pose,
            skin,
            background: [grey; 3],
            upper,
            lower,
            dress,
            outfit,
        }
    }

    /// Outfit kind worn when the pair targets `class`.
    pub fn outfit_for(class: GarmentClass) -> OutfitKind {
        match class {
            GarmentClass::Dresses => OutfitKind::Dress,
            _ => OutfitKind::Separates,
        }
    }

    pub fn spec(&self, class: GarmentClass) -> &GarmentSpec {
        match class {
            GarmentClass::UpperBody => &self.upper,
            GarmentClass::LowerBody => &self.lower,
            GarmentClass::Dresses => &self.dress,
        }
    }

    /// Whether the person visibly wears a garment of `class`.
    pub fn wears(&self, class: GarmentClass) -> bool {
        matches!(
            (self.outfit, class),
            (OutfitKind::Dress, GarmentClass::Dresses)
                | (OutfitKind::Separates, GarmentClass::UpperBody | GarmentClass::LowerBody)
        )
    }

    /// Ground-truth dressing with flats rendered at `size`.
    pub fn dressing(&self, size: usize) -> Dressing {
        let layers = match self.outfit {
            OutfitKind::Separates => Layers::Separates {
                upper: self.upper.render_flat(size),
                lower: self.lower.render_flat(size),
            },
            OutfitKind::Dress => Layers::Dress(self.dress.render_flat(size)),
        };
        Dressing {
            pose: self.pose,
            skin: self.skin,
            background: self.background,
            layers,
        }
    }
}

/// What occupies each pixel of a person render.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Owner {
    Background,
    Skin,
    Garment(GarmentClass),
}

/// Per-pixel owners of a person render, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnerMap {
    pub width: usize,
    pub height: usize,
    pub owners: Vec<Owner>,
}

impl OwnerMap {
    pub fn count(&self, owner: Owner) -> usize {
        self.owners.iter().filter(|&&o| o == owner).count()
    }

    /// Pixels of `image` owned by `owner`.
    pub fn select<'a>(
        &'a self,
        image: &'a RgbImage,
        owner: Owner,
    ) -> impl Iterator<Item = [u8; 3]> + 'a {
        self.owners
            .iter()
            .enumerate()
            .filter(move |(_, &o)| o == owner)
            .map(move |(i, _)| image.get(i % self.width, i / self.width))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layers {
    Separates { upper: RgbImage, lower: RgbImage },
    Dress(RgbImage),
}

/// A person with concrete flat garment images per worn slot; the toy
/// try-on stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Dressing {
    pub pose: Pose,
    pub skin: [u8; 3],
    pub background: [u8; 3],
    pub layers: Layers,
}

impl Dressing {
    /// Puts `garment` (a flat catalog image) on the person. Dresses replace
    /// a two-piece outfit; a top or bottom replaces the dress and the other
    /// slot gets [`GarmentSpec::neutral`].
    pub fn try_on(mut self, class: GarmentClass, garment: RgbImage) -> Result<Self> {
        if !garment.is_square() {
            return Err(contract!(
                "flat garment must be square, got {}x{}",
                garment.width(),
                garment.height()
            ));
        }
        let size = garment.width();
        self.layers = match (self.layers, class) {
            (_, GarmentClass::Dresses) => Layers::Dress(garment),
            (Layers::Separates { lower, .. }, GarmentClass::UpperBody) => Layers::Separates {
                upper: garment,
                lower,
            },
            (Layers::Separates { upper, .. }, GarmentClass::LowerBody) => Layers::Separates {
                upper,
                lower: garment,
            },
            (Layers::Dress(_), GarmentClass::UpperBody) => Layers::Separates {
                upper: garment,
                lower: GarmentSpec::neutral(GarmentClass::LowerBody).render_flat(size),
            },
            (Layers::Dress(_), GarmentClass::LowerBody) => Layers::Separates {
                upper: GarmentSpec::neutral(GarmentClass::UpperBody).render_flat(size),
                lower: garment,
            },
        };
        Ok(self)
    }

    /// Person render on the `size`-high portrait canvas, padded to a white
    /// `size × size` square, with the matching owner map.
    pub fn render(&self, size: usize) -> Result<(RgbImage, OwnerMap)> {
        check_size(size)?;
        let height = size;
        let width = size * PORTRAIT_ASPECT_NUM / PORTRAIT_ASPECT_DEN;
        let garments: Vec<(GarmentClass, &RgbImage)> = match &self.layers {
            Layers::Separates { upper, lower } => alloc::vec![
                (GarmentClass::UpperBody, upper),
                (GarmentClass::LowerBody, lower),
            ],
            Layers::Dress(d) => alloc::vec![(GarmentClass::Dresses, d)],
        };
        let mut canvas = RgbImage::new(width, height, self.background);
        let mut owners = alloc::vec![Owner::Background; width * height];
        let h = height as f64;
        for y in 0..height {
            for x in 0..width {
                let p = self
                    .pose
                    .to_body(((x as f64 + 0.5) / h, (y as f64 + 0.5) / h));
                let mut hit = None;
                for &(class, flat) in &garments {
                    let (a, b) = SlotFrame::for_class(class).to_garment(p);
                    if (0.0..1.0).contains(&a) && (0.0..1.0).contains(&b) {
                        let n = flat.width() as f64;
                        let px = flat.get((a * n) as usize, (b * n) as usize);
                        if is_garment_pixel(px) {
                            hit = Some((class, px));
                            break;
                        }
                    }
                }
                let (owner, px) = match hit {
                    Some((class, px)) => (Owner::Garment(class), px),
                    None if geometry::in_silhouette(p) => (Owner::Skin, self.skin),
                    None => (Owner::Background, self.background),
                };
                canvas.put(x, y, px);
                owners[y * width + x] = owner;
            }
        }
        let padded = pad_to_square(&canvas, WHITE);
        let left = (size - width) / 2;
        let mut padded_owners = alloc::vec![Owner::Background; size * size];
        for y in 0..height {
            padded_owners[y * size + left..y * size + left + width]
                .copy_from_slice(&owners[y * width..(y + 1) * width]);
        }
        Ok((
            padded,
            OwnerMap {
                width: size,
                height: size,
                owners: padded_owners,
            },
        ))
    }
}

/// The supervised unit: a person image, the flat garment it wears in the
/// slot named by `garment_class`, and the generator record behind both.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub reference: RgbImage,
    pub garment: RgbImage,
    pub garment_class: GarmentClass,
    pub seed: u64,
    pub person: PersonParams,
}

fn check_size(size: usize) -> Result<()> {
    if size < 32 || size % 16 != 0 {
        return Err(config_err!(
            "image size must be >= 32 and divisible by 16, got {}",
            size
        ));
    }
    Ok(())
}

/// Renders the pair for `(seed, class)` at `size × size`. Pure and bitwise
/// reproducible.
pub fn render_pair(seed: u64, class: GarmentClass, size: usize) -> Result<ImagePair> {
    check_size(size)?;
    let person = PersonParams::from_seed(seed, PersonParams::outfit_for(class));
    let (reference, _) = person.dressing(size).render(size)?;
    let garment = person.spec(class).render_flat(size);
    Ok(ImagePair {
        reference,
        garment,
        garment_class: class,
        seed,
        person,
    })
}

/// `(person seed, class)` for each of `n` entries: classes cycle
/// upper/lower/dress, and consecutive upper/lower entries share a person.
pub fn split_plan(n: usize, first_seed: u64) -> Vec<(u64, GarmentClass)> {
    (0..n)
        .map(|i| (first_seed + (i / 3) as u64, GarmentClass::ALL[i % 3]))
        .collect()
}

/// Number of distinct person seeds consumed by a split of `n` entries.
pub fn persons_in_split(n: usize) -> u64 {
    n.div_ceil(3) as u64
}
