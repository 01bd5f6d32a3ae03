//! Masks as single-channel indexed PNGs with a fixed palette.

use crate::segmentation::{IndexMask, SegClass};

/// RGB colour of each class slot.
pub const PALETTE: [[u8; 3]; SegClass::COUNT] = [
    [0, 0, 0],
    [255, 200, 0],
    [0, 170, 255],
    [230, 25, 25],
    [150, 80, 255],
    [0, 220, 120],
    [200, 200, 200],
    [255, 0, 255],
];

/// Encodes raw indices. `palette_len` slots are emitted; the class palette
/// fills the first ones and any extra slots are grey.
pub fn encode_indexed(width: u32, height: u32, pixels: &[u8], palette_len: usize) -> Result<Vec<u8>, png::EncodingError> {
    let mut palette = Vec::with_capacity(palette_len * 3);
    for i in 0..palette_len {
        palette.extend_from_slice(PALETTE.get(i).unwrap_or(&[128, 128, 128]));
    }
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width, height);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(palette);
    enc.set_compression(png::Compression::Balanced);
    let mut w = enc.write_header()?;
    w.write_image_data(pixels)?;
    w.finish()?;
    Ok(out)
}

pub fn encode_mask(mask: &IndexMask) -> Vec<u8> {
    encode_indexed(mask.width, mask.height, &mask.pixels, SegClass::COUNT)
        .expect("encoding an in-memory mask cannot fail")
}

/// A decoded mask file as found in an archive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskFile {
    pub width: u32,
    pub height: u32,
    pub indexed: bool,
    pub palette_matches: bool,
    pub pixels: Vec<u8>,
}

/// Reads 8-bit indexed or grayscale PNGs without palette expansion.
pub fn decode_mask(bytes: &[u8]) -> Result<MaskFile, String> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let info = reader.info();
    let (width, height) = (info.width, info.height);
    let indexed = match (info.color_type, info.bit_depth) {
        (png::ColorType::Indexed, png::BitDepth::Eight) => true,
        (png::ColorType::Grayscale, png::BitDepth::Eight) => false,
        (c, d) => return Err(format!("unsupported mask format {c:?}/{d:?}")),
    };
    let palette_matches = indexed
        && info.palette.as_ref().is_some_and(|p| {
            p.len() >= SegClass::COUNT * 3
                && p.chunks(3).zip(PALETTE.iter()).all(|(got, want)| got == want)
        });
    let size = reader.output_buffer_size().ok_or("mask too large")?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    buf.truncate(frame.buffer_size());
    Ok(MaskFile {
        width,
        height,
        indexed,
        palette_matches,
        pixels: buf,
    })
}
