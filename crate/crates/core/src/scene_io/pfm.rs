//! Single-channel PFM rasters (`Pf`), written little-endian with scale `-1.0`.
//!
//! PFM stores rows bottom-to-top; rasters in memory are top-to-bottom.

use crate::raster::Raster;

pub fn encode(raster: &Raster<f32>) -> Vec<u8> {
    let (w, h) = raster.dims();
    let header = format!("Pf\n{w} {h}\n-1.0\n");
    let mut out = Vec::with_capacity(header.len() + 4 * w * h);
    out.extend_from_slice(header.as_bytes());
    for row in raster.rows().rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Raster<f32>, String> {
    let mut pos = 0usize;
    let mut token = || -> Result<&str, String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PFM header".into());
        }
        std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII PFM header".to_string())
    };
    let magic = token()?;
    if magic != "Pf" {
        return Err(format!("expected single-channel PFM magic 'Pf', found '{magic}'"));
    }
    let w: usize = token()?.parse().map_err(|_| "bad PFM width")?;
    let h: usize = token()?.parse().map_err(|_| "bad PFM height")?;
    let scale: f32 = token()?.parse().map_err(|_| "bad PFM scale")?;
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    let little = scale < 0.0;
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or("PFM size overflow")?;
    let data = bytes.get(pos..).ok_or("truncated PFM data")?;
    if data.len() != need {
        return Err(format!(
            "PFM data has {} bytes, expected {need} for {w}x{h}",
            data.len()
        ));
    }
    let mut values = vec![0f32; w * h];
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row_from_bottom, x) = (i / w, i % w);
        values[(h - 1 - row_from_bottom) * w + x] = v;
    }
    Ok(Raster::from_vec(w, h, values).expect("length checked"))
}
