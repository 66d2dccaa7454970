use crate::image::Image;

use super::Session;

const BOUNDARY: [f64; 3] = [1.0, 1.0, 1.0];
const HIGHLIGHT: [f64; 3] = [1.0, 0.85, 0.0];

/// The image with superpixel boundaries, the suggested region outlined and
/// every stroke painted in its class colour (F red, B blue, U green).
pub fn render_overlay(s: &Session) -> Image {
    let img = s.image();
    let sp = s.superpixels();
    let (w, h) = img.dims();
    let mut px: Vec<[f64; 3]> = (0..w * h).map(|p| img.rgb_at(p)).collect();
    for (p, c) in px.iter_mut().enumerate() {
        if sp.is_boundary(p) {
            *c = std::array::from_fn(|k| 0.5 * c[k] + 0.5 * BOUNDARY[k]);
        }
    }
    for r in s.suggested_rects() {
        for y in r.y..r.y + r.height {
            for x in r.x..r.x + r.width {
                let edge = x < r.x + 2 || y < r.y + 2 || x + 2 >= r.x + r.width || y + 2 >= r.y + r.height;
                if edge {
                    px[y * w + x] = HIGHLIGHT;
                }
            }
        }
    }
    for st in s.strokes() {
        let c = st.class.stroke_rgb().map(|v| v as f64 / 255.0);
        for p in st.rasterize(w, h) {
            px[p] = c;
        }
    }
    Image::new(w, h, px.into_iter().flatten().collect()).expect("same dimensions")
}
