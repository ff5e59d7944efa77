//! HSV helpers and hue histograms used to check garment colours.

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

pub fn rgb_to_hsv(px: [u8; 3]) -> Hsv {
    let r = f64::from(px[0]) / 255.0;
    let g = f64::from(px[1]) / 255.0;
    let b = f64::from(px[2]) / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * libm::fmod((g - b) / delta, 6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let h = if h < 0.0 { h + 360.0 } else { h };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    Hsv { h, s, v: max }
}

pub fn hsv_to_rgb(hsv: Hsv) -> [u8; 3] {
    let c = hsv.v * hsv.s;
    let hp = libm::fmod(hsv.h, 360.0) / 60.0;
    let x = c * (1.0 - libm::fabs(libm::fmod(hp, 2.0) - 1.0));
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = hsv.v - c;
    let q = |u: f64| libm::round((u + m) * 255.0).clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Shortest angular distance between two hues, in degrees.
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = libm::fabs(a - b) % 360.0;
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

/// Pixels below these thresholds carry no usable hue (white, grey, black).
pub const MIN_SATURATION: f64 = 0.25;
pub const MIN_VALUE: f64 = 0.2;

/// Number of bins in hue histograms (15° each).
pub const HUE_BINS: usize = 24;

/// Hue histogram over chromatic pixels accepted by `mask`.
pub fn hue_histogram<I>(pixels: I) -> [u32; HUE_BINS]
where
    I: IntoIterator<Item = [u8; 3]>,
{
    let mut hist = [0u32; HUE_BINS];
    for px in pixels {
        let hsv = rgb_to_hsv(px);
        if hsv.s < MIN_SATURATION || hsv.v < MIN_VALUE {
            continue;
        }
        let bin = ((hsv.h / 360.0) * HUE_BINS as f64) as usize % HUE_BINS;
        hist[bin] += 1;
    }
    hist
}

/// Centre (in degrees) of the most populated hue bin, or `None` when no
/// chromatic pixel was seen. Ties resolve to the lowest bin.
pub fn dominant_hue<I>(pixels: I) -> Option<f64>
where
    I: IntoIterator<Item = [u8; 3]>,
{
    let hist = hue_histogram(pixels);
    let (bin, count) = hist
        .iter()
        .enumerate()
        .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best });
    (count > 0).then(|| (bin as f64 + 0.5) * 360.0 / HUE_BINS as f64)
}
