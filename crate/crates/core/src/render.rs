//! Z-buffered software rasterizer and image comparison.

use nalgebra::{Isometry3, Perspective3};
use thiserror::Error;

use crate::geom::{Point3, SolidScene, Vector3};

pub const DEFAULT_FOV_DEG: f64 = 40.0;
pub const BACKGROUND: f32 = 1.0;
const Z_NEAR: f64 = 0.1;
const Z_FAR: f64 = 1000.0;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("camera eye coincides with target")]
    EyeAtTarget,
    #[error("camera up vector is parallel to the view direction")]
    UpParallel,
    #[error("invalid field of view {0} degrees")]
    BadFov(f64),
    #[error("image dimensions must be positive, got {0}x{1}")]
    BadSize(usize, usize),
    #[error("image sizes differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("malformed PGM: {0}")]
    Pgm(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub eye: Point3,
    pub target: Point3,
    pub up: Vector3,
    pub fov_deg: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            eye: Point3::new(20.0, 20.0, 20.0),
            target: Point3::origin(),
            up: Vector3::z(),
            fov_deg: DEFAULT_FOV_DEG,
        }
    }
}

impl Camera {
    pub fn with_eye(eye: Point3) -> Camera {
        Camera {
            eye,
            ..Camera::default()
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let dir = self.target - self.eye;
        if dir.norm() < 1e-12 {
            return Err(RenderError::EyeAtTarget);
        }
        if dir.normalize().cross(&self.up).norm() < 1e-9 {
            return Err(RenderError::UpParallel);
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(RenderError::BadFov(self.fov_deg));
        }
        Ok(())
    }

    pub fn view_dir(&self) -> Vector3 {
        (self.target - self.eye).normalize()
    }
}

/// Grayscale raster, row-major from the top-left corner, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: f32) -> Result<Image, RenderError> {
        if width == 0 || height == 0 {
            return Err(RenderError::BadSize(width, height));
        }
        Ok(Image {
            width,
            height,
            pixels: vec![value; width * height],
        })
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Fraction of pixels that differ from the background.
    pub fn coverage(&self) -> f64 {
        self.pixels.iter().filter(|&&p| p != BACKGROUND).count() as f64 / self.pixels.len() as f64
    }

    /// Binary 8-bit PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(
            self.pixels
                .iter()
                .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Image, RenderError> {
        let bad = |m: &str| RenderError::Pgm(m.to_string());
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(
                std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?,
            );
        }
        if fields[0] != "P5" {
            return Err(bad("not a binary graymap"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(bad("only 8-bit maxval is supported"));
        }
        let data = &bytes[pos + 1..];
        if w == 0 || h == 0 || data.len() != w * h {
            return Err(bad("pixel data length mismatch"));
        }
        Ok(Image {
            width: w,
            height: h,
            pixels: data.iter().map(|&b| b as f32 / maxval as f32).collect(),
        })
    }
}

/// Mean squared pixel difference.
pub fn image_mse(a: &Image, b: &Image) -> Result<f64, RenderError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(RenderError::DimensionMismatch(
            (a.width, a.height),
            (b.width, b.height),
        ));
    }
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
        .sum();
    Ok(sum / a.pixels.len() as f64)
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Renders every mesh in the scene. An empty scene yields a white image.
pub fn render(
    scene: &SolidScene,
    camera: &Camera,
    width: usize,
    height: usize,
) -> Result<Image, RenderError> {
    camera.validate()?;
    let mut img = Image::filled(width, height, BACKGROUND)?;
    let mut depth = vec![f64::INFINITY; width * height];
    let view = Isometry3::look_at_rh(&camera.eye, &camera.target, &camera.up);
    let proj = Perspective3::new(
        width as f64 / height as f64,
        camera.fov_deg.to_radians(),
        Z_NEAR,
        Z_FAR,
    );
    let light = camera.view_dir();
    let (wf, hf) = (width as f64, height as f64);

    for tri in scene.mesh().triangles {
        let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
        if n.norm() == 0.0 {
            continue;
        }
        let shade = (0.1 + 0.8 * n.normalize().dot(&light).abs()) as f32;
        let mut screen = [(0.0, 0.0); 3];
        let mut z = [0.0; 3];
        let mut visible = true;
        for (k, v) in tri.iter().enumerate() {
            let cam = view.transform_point(v);
            if -cam.z <= Z_NEAR {
                visible = false;
                break;
            }
            let ndc = proj.project_point(&cam);
            screen[k] = ((ndc.x + 1.0) * 0.5 * wf, (1.0 - ndc.y) * 0.5 * hf);
            z[k] = ndc.z;
        }
        if !visible {
            continue;
        }
        let area = edge(screen[0], screen[1], screen[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let xs = screen.map(|s| s.0);
        let ys = screen.map(|s| s.1);
        let x0 = xs
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .floor()
            .max(0.0) as usize;
        let x1 = (xs
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            .ceil()
            .min(wf) as usize)
            .min(width);
        let y0 = ys
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .floor()
            .max(0.0) as usize;
        let y1 = (ys
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            .ceil()
            .min(hf) as usize)
            .min(height);
        for py in y0..y1 {
            for px in x0..x1 {
                let p = (px as f64 + 0.5, py as f64 + 0.5);
                let w0 = edge(screen[1], screen[2], p) / area;
                let w1 = edge(screen[2], screen[0], p) / area;
                let w2 = edge(screen[0], screen[1], p) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let d = w0 * z[0] + w1 * z[1] + w2 * z[2];
                let idx = py * width + px;
                if d < depth[idx] {
                    depth[idx] = d;
                    img.pixels[idx] = shade;
                }
            }
        }
    }
    Ok(img)
}
