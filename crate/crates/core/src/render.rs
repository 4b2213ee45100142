//! Flat-shaded painter's-algorithm renderer for the images shown to a VLM.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};

use crate::geom::{
    project_camera_point, to_camera_frame, CameraIntrinsics, PixelCoord, Pose, Vec3,
};
use crate::grid::OverlayPrimitiveSet;
use crate::scene::SceneSpec;

pub type RasterImage = RgbImage;

const BACKGROUND: Rgb<u8> = Rgb([38, 40, 48]);
const TABLE: Rgb<u8> = Rgb([156, 124, 92]);
const GRID: Rgb<u8> = Rgb([0, 230, 118]);
const LABEL: Rgb<u8> = Rgb([255, 255, 255]);
const LABEL_SHADOW: Rgb<u8> = Rgb([0, 0, 0]);
const NEAR: f64 = 0.01;

/// FNV-1a: a stable per-id color independent of process or platform.
pub fn color_for_id(id: &str) -> Rgb<u8> {
    let mut h: u32 = 0x811c_9dc5;
    for b in id.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    // Keep colors away from the background and the grid green.
    Rgb([
        64 + (h & 0x7f) as u8,
        48 + ((h >> 8) & 0x7f) as u8,
        96 + ((h >> 16) & 0x7f) as u8,
    ])
}

pub fn render(
    scene: &SceneSpec,
    camera_pose: &Pose,
    k: &CameraIntrinsics,
    overlay: &OverlayPrimitiveSet,
) -> RasterImage {
    let mut img = RgbImage::from_pixel(k.width, k.height, BACKGROUND);

    let table: Vec<Vec3> = scene
        .table
        .corners()
        .iter()
        .map(|c| to_camera_frame(camera_pose, c))
        .collect();
    let clipped = clip_near(&table);
    if clipped.len() >= 3 {
        let poly: Vec<PixelCoord> = clipped
            .iter()
            .filter_map(|p| project_camera_point(k, p).ok())
            .collect();
        fill_convex(&mut img, &poly, TABLE);
    }

    let mut order: Vec<(f64, usize)> = scene
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| (to_camera_frame(camera_pose, &o.centroid()).z, i))
        .filter(|(z, _)| *z > NEAR)
        .collect();
    // Farthest first; index breaks ties so the order is total.
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in order {
        let obj = &scene.objects[i];
        let pts: Vec<PixelCoord> = obj
            .hull_points()
            .iter()
            .map(|p| to_camera_frame(camera_pose, p))
            .filter(|p| p.z > NEAR)
            .filter_map(|p| project_camera_point(k, &p).ok())
            .collect();
        let hull = convex_hull(pts);
        fill_convex(&mut img, &hull, color_for_id(&obj.id));
    }

    draw_overlay(&mut img, overlay);
    img
}

pub fn draw_overlay(img: &mut RasterImage, overlay: &OverlayPrimitiveSet) {
    for s in &overlay.segments {
        draw_line(img, s.from, s.to, GRID);
    }
    for l in &overlay.labels {
        let x = l.anchor.u.round() as i64 + 3;
        let y = l.anchor.v.round() as i64 - 10;
        draw_text(img, x + 1, y + 1, &l.text, LABEL_SHADOW);
        draw_text(img, x, y, &l.text, LABEL);
    }
}

pub fn encode_png(img: &RasterImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("in-memory png encoding");
    buf.into_inner()
}

/// Sutherland–Hodgman clip of a camera-frame polygon against `z ≥ NEAR`.
fn clip_near(poly: &[Vec3]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for (i, a) in poly.iter().enumerate() {
        let b = &poly[(i + 1) % poly.len()];
        let (ina, inb) = (a.z >= NEAR, b.z >= NEAR);
        if ina {
            out.push(*a);
        }
        if ina != inb {
            let t = (NEAR - a.z) / (b.z - a.z);
            out.push(a + (b - a) * t);
        }
    }
    out
}

fn cross(o: &PixelCoord, a: &PixelCoord, b: &PixelCoord) -> f64 {
    (a.u - o.u) * (b.v - o.v) - (a.v - o.v) * (b.u - o.u)
}

/// Andrew's monotone chain.
pub fn convex_hull(mut pts: Vec<PixelCoord>) -> Vec<PixelCoord> {
    pts.sort_by(|a, b| a.u.total_cmp(&b.u).then(a.v.total_cmp(&b.v)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<PixelCoord> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &PixelCoord>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2
                && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Scanline fill of a convex polygon, sampling at pixel centers.
fn fill_convex(img: &mut RasterImage, poly: &[PixelCoord], color: Rgb<u8>) {
    if poly.len() < 3 {
        return;
    }
    let (w, h) = (img.width() as i64, img.height() as i64);
    let min_v = poly.iter().map(|p| p.v).fold(f64::INFINITY, f64::min);
    let max_v = poly.iter().map(|p| p.v).fold(f64::NEG_INFINITY, f64::max);
    let y0 = (min_v.floor() as i64).max(0);
    let y1 = (max_v.ceil() as i64).min(h - 1);
    for y in y0..=y1 {
        let yc = y as f64 + 0.5;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, a) in poly.iter().enumerate() {
            let b = &poly[(i + 1) % poly.len()];
            if (a.v <= yc && b.v > yc) || (b.v <= yc && a.v > yc) {
                let x = a.u + (yc - a.v) / (b.v - a.v) * (b.u - a.u);
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        if lo > hi {
            continue;
        }
        let x0 = ((lo - 0.5).ceil() as i64).max(0);
        let x1 = ((hi - 0.5).floor() as i64).min(w - 1);
        for x in x0..=x1 {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

fn put(img: &mut RasterImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && x < img.width() as i64 && y < img.height() as i64 {
        img.put_pixel(x as u32, y as u32, color);
    }
}

/// Bresenham line.
fn draw_line(img: &mut RasterImage, a: PixelCoord, b: PixelCoord, color: Rgb<u8>) {
    let (mut x0, mut y0) = (a.u.round() as i64, a.v.round() as i64);
    let (x1, y1) = (b.u.round() as i64, b.v.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, color);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// 5×7 glyphs for the characters that appear in vertex labels.
fn glyph(c: char) -> Option<[u8; 7]> {
    Some(match c {
        '0' => [0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e],
        '1' => [0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e],
        '2' => [0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f],
        '3' => [0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e],
        '4' => [0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02],
        '5' => [0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e],
        '6' => [0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e],
        '7' => [0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e],
        '9' => [0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c],
        '-' => [0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        ';' => [0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x04, 0x08],
        ' ' => [0; 7],
        _ => return None,
    })
}

pub fn draw_text(img: &mut RasterImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (dy, row) in rows.iter().enumerate() {
                for dx in 0..5 {
                    if row & (0x10 >> dx) != 0 {
                        put(img, cx + dx, y + dy as i64, color);
                    }
                }
            }
        }
        cx += 6;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{top_down, UnitQuaternion};
    use crate::grid::project_grid;
    use crate::scene::{perpendicular_scene, ObjectSpec, Shape};

    fn empty_scene() -> SceneSpec {
        let mut s = perpendicular_scene();
        s.objects.retain(|o| o.id == "tin");
        s
    }

    #[test]
    fn facing_away_is_uniform_background() {
        let s = empty_scene();
        let pose = Pose::new(Vec3::new(0.0, 0.4, 0.8), UnitQuaternion::identity()).unwrap();
        let img = render(&s, &pose, &s.camera, &OverlayPrimitiveSet::default());
        assert!(img.pixels().all(|p| *p == BACKGROUND));
    }

    #[test]
    fn nearer_box_occludes_cylinder() {
        let mut s = empty_scene();
        s.objects.clear();
        let cyl = ObjectSpec {
            id: "cyl".into(),
            shape: Shape::Cylinder {
                radius: 0.12,
                height: 0.1,
            },
            pose: Pose::new(Vec3::new(0.0, 0.4, 0.05), UnitQuaternion::identity()).unwrap(),
            surface_attributes: vec![],
        };
        let bx = ObjectSpec {
            id: "box".into(),
            shape: Shape::Box {
                dims: Vec3::new(0.1, 0.1, 0.02),
            },
            pose: Pose::new(Vec3::new(0.0, 0.4, 0.3), UnitQuaternion::identity()).unwrap(),
            surface_attributes: vec![],
        };
        // listed nearest-first to make sure sorting, not input order, decides
        s.objects = vec![bx, cyl];
        let pose = Pose::new(Vec3::new(0.0, 0.4, 0.8), top_down()).unwrap();
        let img = render(&s, &pose, &s.camera, &OverlayPrimitiveSet::default());
        let center = img.get_pixel(s.camera.cx as u32, s.camera.cy as u32);
        assert_eq!(*center, color_for_id("box"));
        assert!(img.pixels().any(|p| *p == color_for_id("cyl")));
    }

    #[test]
    fn deterministic_with_overlay() {
        let s = perpendicular_scene();
        let overlay = project_grid(&s.grid, &s.camera, &s.home_pose);
        let a = encode_png(&render(&s, &s.home_pose, &s.camera, &overlay));
        let b = encode_png(&render(&s, &s.home_pose, &s.camera, &overlay));
        assert_eq!(a, b);
        let img = render(&s, &s.home_pose, &s.camera, &overlay);
        assert!(img.pixels().any(|p| *p == GRID));
        assert!(img.pixels().any(|p| *p == LABEL));
        assert!(img.pixels().any(|p| *p == TABLE));
    }

    #[test]
    fn hull_of_square_with_interior_point() {
        let p = |u, v| PixelCoord { u, v };
        let hull = convex_hull(vec![
            p(0.0, 0.0),
            p(1.0, 0.0),
            p(0.5, 0.5),
            p(1.0, 1.0),
            p(0.0, 1.0),
        ]);
        assert_eq!(hull.len(), 4);
        assert!(!hull.contains(&p(0.5, 0.5)));
    }

    #[test]
    fn near_plane_clipping() {
        let quad = [
            Vec3::new(-1.0, 0.0, -1.0),
            Vec3::new(1.0, 0.0, -1.0),
            Vec3::new(1.0, 0.0, 1.0),
            Vec3::new(-1.0, 0.0, 1.0),
        ];
        let c = clip_near(&quad);
        assert_eq!(c.len(), 4);
        assert!(c.iter().all(|p| p.z >= NEAR - 1e-12));
    }
}
