//! Class maps as binary PPM (P6) images.

/// Colour of label 0 (unlabelled).
pub const BACKGROUND: [u8; 3] = [0, 0, 0];

/// Colours of classes 1 to 16; higher classes reuse them cyclically.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

pub fn color(label: u16) -> [u8; 3] {
    match label {
        0 => BACKGROUND,
        l => PALETTE[(l as usize - 1) % PALETTE.len()],
    }
}

/// Row-major labels to a P6 image.
pub fn render_ppm(height: usize, width: usize, labels: &[u16]) -> Vec<u8> {
    assert_eq!(labels.len(), height * width, "label count must match the image size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for &l in labels {
        out.extend_from_slice(&color(l));
    }
    out
}

/// Width, height and pixel bytes of a P6 image written by [`render_ppm`].
pub fn parse_ppm(bytes: &[u8]) -> Option<(usize, usize, &[u8])> {
    let mut fields = Vec::new();
    let mut at = 0;
    while fields.len() < 4 {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..at]).ok()?);
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return None;
    }
    let (w, h) = (fields[1].parse().ok()?, fields[2].parse().ok()?);
    let pixels = bytes.get(at + 1..)?;
    (pixels.len() == w * h * 3).then_some((w, h, pixels))
}
