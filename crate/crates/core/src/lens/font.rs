//! 5x7 bitmap digits for lens labels.

pub const GLYPH_W: u32 = 5;
pub const GLYPH_H: u32 = 7;

// one byte per row, low five bits, MSB on the left
const DIGITS: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
];

/// Whether glyph cell `(col, row)` is inked. Non-digits render blank.
pub fn ink(ch: char, col: u32, row: u32) -> bool {
    let Some(d) = ch.to_digit(10) else {
        return false;
    };
    if col >= GLYPH_W || row >= GLYPH_H {
        return false;
    }
    DIGITS[d as usize][row as usize] & (1 << (GLYPH_W - 1 - col)) != 0
}
