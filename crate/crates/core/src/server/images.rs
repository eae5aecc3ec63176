//! `/images/<id>.pgm` and its PNG alias.

use crate::device_sim::SimImage;
use crate::store::Store;

pub const PGM_TYPE: &str = "image/x-portable-graymap";
pub const PNG_TYPE: &str = "image/png";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageResponse {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl ImageResponse {
    fn not_found() -> ImageResponse {
        ImageResponse {
            status: 404,
            content_type: "text/plain; charset=utf-8",
            body: b"not found\n".to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

/// Parse `/images/<decimal id>.pgm|.png`.
pub fn parse_image_path(path: &str) -> Option<(u64, ImageFormat)> {
    let name = path.strip_prefix("/images/")?;
    let (id, ext) = name.split_once('.')?;
    if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let format = match ext {
        "pgm" => ImageFormat::Pgm,
        "png" => ImageFormat::Png,
        _ => return None,
    };
    Some((id.parse().ok()?, format))
}

pub fn serve_image(store: &Store, path: &str) -> ImageResponse {
    let Some((id, format)) = parse_image_path(path) else {
        return ImageResponse::not_found();
    };
    let Some(pgm) = store.image(id) else {
        return ImageResponse::not_found();
    };
    match format {
        ImageFormat::Pgm => ImageResponse {
            status: 200,
            content_type: PGM_TYPE,
            body: pgm,
        },
        ImageFormat::Png => match SimImage::from_pgm(&pgm).map(|img| pgm_to_png(&img)) {
            Ok(body) => ImageResponse {
                status: 200,
                content_type: PNG_TYPE,
                body,
            },
            Err(e) => {
                log::warn!("stored image {id} unreadable: {e}");
                ImageResponse::not_found()
            }
        },
    }
}

/// Lossless 8-bit grayscale PNG.
pub fn pgm_to_png(img: &SimImage) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("png header to memory");
        writer
            .write_image_data(&img.pixels)
            .expect("png data to memory");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths() {
        assert_eq!(
            parse_image_path("/images/1.pgm"),
            Some((1, ImageFormat::Pgm))
        );
        assert_eq!(
            parse_image_path("/images/42.png"),
            Some((42, ImageFormat::Png))
        );
        for bad in [
            "/images/.pgm",
            "/images/1.jpg",
            "/images/-1.pgm",
            "/images/1.pgm.png",
            "/images/../1.pgm",
            "/img/1.pgm",
            "/images/99999999999999999999999.pgm",
        ] {
            assert_eq!(parse_image_path(bad), None, "{bad}");
        }
    }

    #[test]
    fn png_decodes_to_same_pixels() {
        let img = SimImage::render(3, 9);
        let png_bytes = pgm_to_png(&img);
        let decoder = png::Decoder::new(std::io::Cursor::new(png_bytes));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (64, 64));
        assert_eq!(info.color_type, png::ColorType::Grayscale);
        assert_eq!(&buf[..info.buffer_size()], &img.pixels[..]);
    }
}
