//! 3×5 bitmap glyphs for the two-letter garment logos.

pub const GLYPH_W: usize = 3;
pub const GLYPH_H: usize = 5;

pub const LETTERS: [u8; 12] = *b"AEFHKLMNOTXZ";

// One row per byte, most significant of the low three bits is the left column.
const GLYPHS: [[u8; GLYPH_H]; 12] = [
    [0b010, 0b101, 0b111, 0b101, 0b101], // A
    [0b111, 0b100, 0b110, 0b100, 0b111], // E
    [0b111, 0b100, 0b110, 0b100, 0b100], // F
    [0b101, 0b101, 0b111, 0b101, 0b101], // H
    [0b101, 0b110, 0b100, 0b110, 0b101], // K
    [0b100, 0b100, 0b100, 0b100, 0b111], // L
    [0b101, 0b111, 0b111, 0b101, 0b101], // M
    [0b110, 0b101, 0b101, 0b101, 0b101], // N
    [0b111, 0b101, 0b101, 0b101, 0b111], // O
    [0b111, 0b010, 0b010, 0b010, 0b010], // T
    [0b101, 0b101, 0b010, 0b101, 0b101], // X
    [0b111, 0b001, 0b010, 0b100, 0b111], // Z
];

/// Whether cell `(col, row)` of letter `index` is inked.
pub fn inked(index: u8, col: usize, row: usize) -> bool {
    let rows = GLYPHS[usize::from(index) % GLYPHS.len()];
    col < GLYPH_W && row < GLYPH_H && (rows[row] >> (GLYPH_W - 1 - col)) & 1 == 1
}
