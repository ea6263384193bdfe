//! Top-down schematic frames of the workspace at 640×480.

use std::io::Cursor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robot::{RobotCalibration, RobotState, LEG_COUNT, WORKSPACE_MM};

pub const FRAME_WIDTH: u32 = 640;
pub const FRAME_HEIGHT: u32 = 480;
pub const PX_PER_MM: f64 = 9.6;
/// Left edge of the active square, px.
pub const ACTIVE_OFFSET_U: f64 = 80.0;

const BODY_RADIUS_MM: f64 = 6.0;
/// Extra silhouette radius per mm of squat depth; the body spreads when compressed.
const SQUAT_SPREAD: f64 = 0.2;
const FOOT_RADIUS_MM: f64 = 0.9;
const FOOT_RING_MM: f64 = 0.3;
const MARKER_RADIUS_MM: f64 = 1.2;

const BORDER: [u8; 3] = [40, 40, 40];
const GRID_BACKGROUND: [u8; 3] = [250, 250, 250];
const GRID_LINE: [u8; 3] = [200, 200, 210];
const FOOT_COLOR: [u8; 3] = [30, 60, 160];
const LESION_WHITE: [u8; 3] = [245, 240, 230];
const LESION_YELLOW: [u8; 3] = [230, 200, 40];

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("scene entity {0} lies outside the workspace")]
    OutOfWorkspace(String),
    #[error("png encoding failed: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decoding failed: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("frame must be {FRAME_WIDTH}x{FRAME_HEIGHT} RGB8, got {0}")]
    BadFrame(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    #[default]
    WhiteGrid,
    IntestinalTexture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub label: String,
    pub position: [f64; 2],
    pub color: [u8; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionColor {
    White,
    Yellow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub position: [f64; 2],
    pub color: LesionColor,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub background: Background,
    pub markers: Vec<Marker>,
    pub lesions: Vec<Lesion>,
}

fn in_workspace(p: [f64; 2]) -> bool {
    p.iter().all(|c| c.is_finite() && (0.0..=WORKSPACE_MM).contains(c))
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), RenderError> {
        for m in &self.markers {
            if !in_workspace(m.position) {
                return Err(RenderError::OutOfWorkspace(format!("marker {}", m.label)));
            }
        }
        for (i, l) in self.lesions.iter().enumerate() {
            if !in_workspace(l.position) || !(l.radius.is_finite() && l.radius > 0.0) {
                return Err(RenderError::OutOfWorkspace(format!("lesion {i}")));
            }
        }
        Ok(())
    }
}

/// RGB8 frame buffer, row-major from the top-left pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct FrameImage {
    pixels: Vec<u8>,
}

impl std::fmt::Debug for FrameImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FrameImage({FRAME_WIDTH}x{FRAME_HEIGHT})")
    }
}

impl FrameImage {
    fn filled(color: [u8; 3]) -> Self {
        Self { pixels: color.repeat((FRAME_WIDTH * FRAME_HEIGHT) as usize) }
    }

    pub fn width(&self) -> u32 {
        FRAME_WIDTH
    }

    pub fn height(&self) -> u32 {
        FRAME_HEIGHT
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, u: u32, v: u32) -> [u8; 3] {
        let i = ((v * FRAME_WIDTH + u) * 3) as usize;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, u: u32, v: u32, c: [u8; 3]) {
        let i = ((v * FRAME_WIDTH + u) * 3) as usize;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    pub fn to_png(&self) -> Result<Vec<u8>, RenderError> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, FRAME_WIDTH, FRAME_HEIGHT);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.pixels)?;
        writer.finish()?;
        Ok(out)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, RenderError> {
        let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info()?;
        let size = reader.output_buffer_size().ok_or_else(|| RenderError::BadFrame("oversized image".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf)?;
        if info.width != FRAME_WIDTH
            || info.height != FRAME_HEIGHT
            || info.color_type != png::ColorType::Rgb
            || info.bit_depth != png::BitDepth::Eight
        {
            return Err(RenderError::BadFrame(format!("{}x{} {:?}/{:?}", info.width, info.height, info.color_type, info.bit_depth)));
        }
        buf.truncate(info.buffer_size());
        Ok(Self { pixels: buf })
    }
}

/// Maps workspace millimetres to pixel coordinates, clamping to the workspace.
pub fn world_to_pixel(p: [f64; 2]) -> [f64; 2] {
    let x = p[0].clamp(0.0, WORKSPACE_MM);
    let y = p[1].clamp(0.0, WORKSPACE_MM);
    [ACTIVE_OFFSET_U + x * PX_PER_MM, f64::from(FRAME_HEIGHT) - y * PX_PER_MM]
}

/// Rendering parameters taken from the robot calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Renderer {
    z0: f64,
    z_min: f64,
    z_max: f64,
    contact_eps: f64,
    leg_angles_deg: [f64; LEG_COUNT],
}

impl Default for Renderer {
    fn default() -> Self {
        Self::new(&RobotCalibration::default())
    }
}

impl Renderer {
    pub fn new(cal: &RobotCalibration) -> Self {
        Self {
            z0: cal.z0,
            z_min: cal.z_min(),
            z_max: cal.z_max(),
            contact_eps: cal.contact_eps,
            leg_angles_deg: cal.geometry.leg_angles_deg,
        }
    }

    /// Silhouette radius in mm; grows with squat depth.
    pub fn body_radius(&self, z: f64) -> f64 {
        BODY_RADIUS_MM + SQUAT_SPREAD * (self.z0 - z).max(0.0)
    }

    /// Leg-tip triangle in pixel coordinates.
    pub fn robot_outline(&self, state: &RobotState) -> [[f64; 2]; LEG_COUNT] {
        let r = self.body_radius(state.z);
        std::array::from_fn(|leg| {
            let (s, c) = (state.psi + self.leg_angles_deg[leg].to_radians()).sin_cos();
            let [u, v] = world_to_pixel(state.p);
            [u + r * PX_PER_MM * c, v - r * PX_PER_MM * s]
        })
    }

    /// Pixel count of the body triangle.
    pub fn silhouette_area(&self, state: &RobotState) -> usize {
        let tri = self.robot_outline(state);
        let mut n = 0;
        for_each_in_triangle(&tri, |_, _| n += 1);
        n
    }

    fn body_color(&self, z: f64) -> [u8; 3] {
        // deeper squat, darker body
        let span = (self.z_max - self.z_min).max(f64::EPSILON);
        let k = ((z - self.z_min) / span).clamp(0.0, 1.0);
        let shade = |lo: f64, hi: f64| (lo + (hi - lo) * k).round() as u8;
        [shade(90.0, 230.0), shade(20.0, 110.0), shade(20.0, 90.0)]
    }

    pub fn render(&self, state: &RobotState, scene: &SceneSpec) -> FrameImage {
        let mut img = FrameImage::filled(BORDER);
        paint_background(&mut img, scene.background);
        for lesion in &scene.lesions {
            let color = match lesion.color {
                LesionColor::White => LESION_WHITE,
                LesionColor::Yellow => LESION_YELLOW,
            };
            fill_disc(&mut img, world_to_pixel(lesion.position), lesion.radius * PX_PER_MM, color);
        }
        for marker in &scene.markers {
            fill_disc(&mut img, world_to_pixel(marker.position), MARKER_RADIUS_MM * PX_PER_MM, marker.color);
        }

        let tri = self.robot_outline(state);
        let body = self.body_color(state.z);
        for_each_in_triangle(&tri, |u, v| img.put(u, v, body));
        for (leg, tip) in tri.iter().enumerate() {
            let r = FOOT_RADIUS_MM * PX_PER_MM;
            if state.h[leg] > self.contact_eps {
                ring(&mut img, *tip, r, FOOT_RING_MM * PX_PER_MM, FOOT_COLOR);
            } else {
                fill_disc(&mut img, *tip, r, FOOT_COLOR);
            }
        }
        img
    }
}

/// Renders with the default calibration.
pub fn render(state: &RobotState, scene: &SceneSpec) -> FrameImage {
    Renderer::default().render(state, scene)
}

fn paint_background(img: &mut FrameImage, bg: Background) {
    let u0 = ACTIVE_OFFSET_U as u32;
    let side = (WORKSPACE_MM * PX_PER_MM) as u32;
    let grid_px = 5.0 * PX_PER_MM;
    for v in 0..FRAME_HEIGHT {
        for u in u0..u0 + side {
            let (x, y) = (f64::from(u - u0), f64::from(FRAME_HEIGHT - 1 - v));
            let c = match bg {
                Background::WhiteGrid => {
                    if x % grid_px < 1.0 || y % grid_px < 1.0 {
                        GRID_LINE
                    } else {
                        GRID_BACKGROUND
                    }
                }
                Background::IntestinalTexture => {
                    let fold = (x * 0.045 + (y * 0.021).sin() * 3.0).sin() * (y * 0.033 + (x * 0.017).cos() * 2.0).cos();
                    let vessel = ((x * 0.11).sin() * (y * 0.07).cos()).abs() < 0.03;
                    let base = 170.0 + 45.0 * fold;
                    if vessel {
                        [150, 40, 50]
                    } else {
                        [base as u8, (base * 0.52) as u8, (base * 0.5) as u8]
                    }
                }
            };
            img.put(u, v, c);
        }
    }
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Visits pixels whose centre lies inside the triangle, winding-agnostic.
fn for_each_in_triangle(tri: &[[f64; 2]; 3], mut f: impl FnMut(u32, u32)) {
    let area = edge(tri[0], tri[1], tri[2]);
    if area == 0.0 {
        return;
    }
    let s = area.signum();
    let (lo_u, hi_u) = bounds(tri.iter().map(|p| p[0]), FRAME_WIDTH);
    let (lo_v, hi_v) = bounds(tri.iter().map(|p| p[1]), FRAME_HEIGHT);
    for v in lo_v..hi_v {
        for u in lo_u..hi_u {
            let p = [f64::from(u) + 0.5, f64::from(v) + 0.5];
            if s * edge(tri[0], tri[1], p) >= 0.0 && s * edge(tri[1], tri[2], p) >= 0.0 && s * edge(tri[2], tri[0], p) >= 0.0 {
                f(u, v);
            }
        }
    }
}

fn bounds(coords: impl Iterator<Item = f64> + Clone, limit: u32) -> (u32, u32) {
    let lo = coords.clone().fold(f64::INFINITY, f64::min).floor().max(0.0);
    let hi = coords.fold(f64::NEG_INFINITY, f64::max).ceil().min(f64::from(limit));
    (lo as u32, (hi as u32).max(lo as u32))
}

fn for_each_in_annulus(c: [f64; 2], r_in: f64, r_out: f64, mut f: impl FnMut(u32, u32)) {
    let (lo_u, hi_u) = bounds([c[0] - r_out, c[0] + r_out].into_iter(), FRAME_WIDTH);
    let (lo_v, hi_v) = bounds([c[1] - r_out, c[1] + r_out].into_iter(), FRAME_HEIGHT);
    for v in lo_v..hi_v {
        for u in lo_u..hi_u {
            let du = f64::from(u) + 0.5 - c[0];
            let dv = f64::from(v) + 0.5 - c[1];
            let d2 = du * du + dv * dv;
            if d2 <= r_out * r_out && d2 >= r_in * r_in {
                f(u, v);
            }
        }
    }
}

fn fill_disc(img: &mut FrameImage, c: [f64; 2], r: f64, color: [u8; 3]) {
    for_each_in_annulus(c, 0.0, r, |u, v| img.put(u, v, color));
}

fn ring(img: &mut FrameImage, c: [f64; 2], r: f64, width: f64, color: [u8; 3]) {
    for_each_in_annulus(c, (r - width).max(0.0), r, |u, v| img.put(u, v, color));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rest() -> RobotState {
        RobotState::rest(&RobotCalibration::default())
    }

    fn robot_mask(img: &FrameImage, bg: &FrameImage) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for v in 0..FRAME_HEIGHT {
            for u in 0..FRAME_WIDTH {
                if img.pixel(u, v) != bg.pixel(u, v) {
                    out.push((u, v));
                }
            }
        }
        out
    }

    fn background_only() -> FrameImage {
        let mut img = FrameImage::filled(BORDER);
        paint_background(&mut img, Background::WhiteGrid);
        img
    }

    #[test]
    fn world_to_pixel_examples() {
        assert_eq!(world_to_pixel([25.0, 25.0]), [320.0, 240.0]);
        assert_eq!(world_to_pixel([0.0, 0.0]), [80.0, 480.0]);
        assert_eq!(world_to_pixel([50.0, 25.0]), [560.0, 240.0]);
        assert_eq!(world_to_pixel([-3.0, 70.0]), [80.0, 0.0]);
    }

    #[test]
    fn centroid_preserved() {
        let img = render(&rest(), &SceneSpec::default());
        let mask = robot_mask(&img, &background_only());
        let n = mask.len() as f64;
        let cu = mask.iter().map(|&(u, _)| f64::from(u) + 0.5).sum::<f64>() / n;
        let cv = mask.iter().map(|&(_, v)| f64::from(v) + 0.5).sum::<f64>() / n;
        assert!((cu - 320.0).abs() <= 1.0 && (cv - 240.0).abs() <= 1.0, "({cu}, {cv})");
    }

    #[test]
    fn deterministic() {
        let scene = SceneSpec { background: Background::IntestinalTexture, ..Default::default() };
        assert_eq!(render(&rest(), &scene), render(&rest(), &scene));
    }

    #[test]
    fn rotation_by_120_permutes_vertices() {
        let r = Renderer::default();
        let s0 = rest();
        let mut s1 = rest();
        s1.psi = 120f64.to_radians();
        let a = r.robot_outline(&s0);
        let b = r.robot_outline(&s1);
        let [cu, cv] = world_to_pixel(s0.p);
        let (sn, cs) = 120f64.to_radians().sin_cos();
        for (i, p) in a.iter().enumerate() {
            // rotate about the centroid; v grows downward
            let (du, dv) = (p[0] - cu, p[1] - cv);
            let q = [cu + cs * du + sn * dv, cv - sn * du + cs * dv];
            let t = b[i];
            assert!((q[0] - t[0]).abs() <= 1.0 && (q[1] - t[1]).abs() <= 1.0, "{q:?} vs {t:?}");
        }
        let bg = background_only();
        let m0: std::collections::HashSet<_> = robot_mask(&r.render(&s0, &SceneSpec::default()), &bg).into_iter().collect();
        let m1: std::collections::HashSet<_> = robot_mask(&r.render(&s1, &SceneSpec::default()), &bg).into_iter().collect();
        let inter = m0.intersection(&m1).count() as f64;
        let union = m0.union(&m1).count() as f64;
        assert!(inter / union > 0.97, "{}", inter / union);
    }

    #[test]
    fn lifted_foot_is_hollow() {
        let r = Renderer::default();
        let mut s = rest();
        s.h[0] = 3.0;
        let img = r.render(&s, &SceneSpec::default());
        let tip = r.robot_outline(&s)[0];
        assert_ne!(img.pixel(tip[0] as u32, tip[1] as u32), FOOT_COLOR);
        let img = r.render(&rest(), &SceneSpec::default());
        assert_eq!(img.pixel(tip[0] as u32, tip[1] as u32), FOOT_COLOR);
    }

    #[test]
    fn squat_darkens_and_spreads() {
        let r = Renderer::default();
        let mut squat = rest();
        squat.z = r.z_min;
        let (c0, c1) = (r.body_color(rest().z), r.body_color(squat.z));
        assert!(c1.iter().zip(c0).all(|(a, b)| *a < b));
        let ratio = r.silhouette_area(&squat) as f64 / r.silhouette_area(&rest()) as f64;
        assert!(ratio > 1.1, "{ratio}");
    }

    #[test]
    fn png_roundtrip() {
        let scene = SceneSpec {
            background: Background::IntestinalTexture,
            markers: vec![Marker { label: "A".into(), position: [5.0, 5.0], color: [0, 200, 0] }],
            lesions: vec![Lesion { position: [40.0, 40.0], color: LesionColor::Yellow, radius: 2.0 }],
        };
        scene.validate().unwrap();
        let img = render(&rest(), &scene);
        assert_eq!(FrameImage::from_png(&img.to_png().unwrap()).unwrap(), img);
    }

    #[test]
    fn scene_outside_workspace_rejected() {
        let scene =
            SceneSpec { markers: vec![Marker { label: "B".into(), position: [51.0, 5.0], color: [0, 0, 0] }], ..Default::default() };
        assert!(scene.validate().is_err());
    }
}
