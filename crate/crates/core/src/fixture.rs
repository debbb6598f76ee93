//! Seeded synthetic sequences with known color and instance ground truth.

use std::f64::consts::TAU;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{save_sequence, Frame, FramePattern, VideoSequence};

pub const FIXTURE_NAMES: [&str; 3] = ["two-objects", "translating-squares", "static"];

/// Motion unit: objects move by whole multiples of this many pixels.
pub const FIXTURE_CELL: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
}

impl FixtureSpec {
    /// Default size for a named fixture.
    pub fn named(name: &str) -> Result<Self> {
        let (width, height) = match name {
            "two-objects" => (96, 96),
            "translating-squares" | "static" => (128, 96),
            _ => return Err(unknown(name)),
        };
        Ok(Self {
            name: name.to_string(),
            width,
            height,
            frames: 30,
            seed: 7,
        })
    }
}

fn unknown(name: &str) -> Error {
    Error::Configuration(format!(
        "unknown fixture `{name}` (expected one of {})",
        FIXTURE_NAMES.join(", ")
    ))
}

/// Axis-aligned object placement in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectBox {
    pub id: u16,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl ObjectBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub spec: FixtureSpec,
    pub gray: VideoSequence,
    pub color: VideoSequence,
    /// Per-frame pixel instance labels, 0 = background.
    pub labels: Vec<Vec<u16>>,
    /// Per-frame object placements.
    pub boxes: Vec<Vec<ObjectBox>>,
}

/// Position along `0..=span` bouncing by one step per frame.
pub fn triangle(t: usize, span: usize) -> usize {
    if span == 0 {
        return 0;
    }
    let k = t % (2 * span);
    if k <= span {
        k
    } else {
        2 * span - k
    }
}

#[derive(Debug, Clone, Copy)]
struct Texture {
    freq: [(f64, f64); 2],
    phase: [f64; 2],
    base: f64,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut f = || (rng.gen_range(0.03..0.09), rng.gen_range(0.03..0.09));
        let freq = [f(), f()];
        Self {
            freq,
            phase: [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)],
            base: rng.gen_range(50.0..62.0),
        }
    }

    fn at(&self, u: usize, v: usize) -> f64 {
        let (u, v) = (u as f64, v as f64);
        let [(f1, g1), (f2, g2)] = self.freq;
        self.base
            + 14.0 * (TAU * (f1 * u + g1 * v) + self.phase[0]).sin()
            + 9.0 * (TAU * (f2 * u - g2 * v) + self.phase[1]).cos()
    }
}

struct Painted {
    texture: Texture,
    ab: [f64; 2],
}

fn render(
    spec: &FixtureSpec,
    objects: &[Painted],
    background: impl Fn(usize, usize) -> (f64, f64, f64),
    place: impl Fn(usize) -> Vec<ObjectBox>,
) -> Result<Fixture> {
    let (w, h) = (spec.width, spec.height);
    let mut gray = Vec::with_capacity(spec.frames);
    let mut color = Vec::with_capacity(spec.frames);
    let mut labels = Vec::with_capacity(spec.frames);
    let mut boxes = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let placed = place(t);
        let (mut l, mut a, mut b) = (vec![0f32; w * h], vec![0f32; w * h], vec![0f32; w * h]);
        let mut lab = vec![0u16; w * h];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let (mut lv, mut av, mut bv) = background(x, y);
                // Later objects paint over earlier ones.
                for bx in &placed {
                    if bx.contains(x, y) {
                        let obj = &objects[bx.id as usize - 1];
                        lv = obj.texture.at(x - bx.x, y - bx.y);
                        [av, bv] = obj.ab;
                        lab[p] = bx.id;
                    }
                }
                l[p] = lv.clamp(0.0, 100.0) as f32;
                a[p] = av as f32;
                b[p] = bv as f32;
            }
        }
        let c = Frame::new(w, h, l, Some((a, b)), t + 1)?;
        gray.push(c.to_gray());
        color.push(c);
        labels.push(lab);
        boxes.push(placed);
    }
    Ok(Fixture {
        spec: spec.clone(),
        gray: VideoSequence::new(gray)?,
        color: VideoSequence::new(color)?,
        labels,
        boxes,
    })
}

pub fn generate_fixture(spec: &FixtureSpec) -> Result<Fixture> {
    if !FIXTURE_NAMES.contains(&spec.name.as_str()) {
        return Err(unknown(&spec.name));
    }
    if spec.frames == 0 {
        return Err(Error::Configuration("fixture needs at least one frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = FIXTURE_CELL;
    let (gw, gh) = (spec.width / c, spec.height / c);
    match spec.name.as_str() {
        "two-objects" => {
            // Two objects of identical shape and texture, six cells square,
            // far enough apart horizontally that a tracking window never
            // spans both; one moves down while the other moves up.
            let side = 6;
            if gw < 2 * side + 11 || gh < side + 2 {
                return Err(Error::Configuration(format!(
                    "two-objects needs at least {}x{} pixels",
                    (2 * side + 11) * c,
                    (side + 2) * c
                )));
            }
            let texture = Texture::random(&mut rng);
            let objects = [
                Painted { texture, ab: [45.0, 30.0] },
                Painted { texture, ab: [-35.0, 35.0] },
            ];
            let span = gh - side - 2;
            let (left, right) = (1, gw - side - 1);
            render(
                spec,
                &objects,
                |_, _| (35.0, 0.0, 0.0),
                |t| {
                    let down = 1 + triangle(t, span);
                    let up = 1 + span - triangle(t, span);
                    vec![
                        ObjectBox { id: 1, x: left * c, y: down * c, w: side * c, h: side * c },
                        ObjectBox { id: 2, x: right * c, y: up * c, w: side * c, h: side * c },
                    ]
                },
            )
        }
        name => {
            // Three squares with distinct textures and colors, each in its
            // own horizontal band, over a smooth colored gradient.
            let moving = name == "translating-squares";
            let side = (gh / 4).clamp(2, 8);
            if gw < side + 2 || gh < 3 * side {
                return Err(Error::Configuration(format!("{name} needs a larger frame")));
            }
            let palette = [[50.0, 20.0], [-30.0, 40.0], [10.0, -45.0]];
            let objects: Vec<Painted> = palette
                .iter()
                .map(|&ab| Painted {
                    texture: Texture::random(&mut rng),
                    ab,
                })
                .collect();
            let offsets: Vec<usize> = (0..3).map(|_| rng.gen_range(0..=gw - side)).collect();
            let band = gh / 3;
            let (w, h) = (spec.width as f64, spec.height as f64);
            render(
                spec,
                &objects,
                move |x, y| {
                    let (u, v) = (x as f64 / w, y as f64 / h);
                    (30.0 + 25.0 * u + 10.0 * v, 12.0 * v - 6.0, 10.0 * u - 5.0)
                },
                |t| {
                    (0..3)
                        .map(|k| {
                            let span = gw - side;
                            let col = if moving { triangle(offsets[k] + t, span) } else { offsets[k] };
                            let row = k * band + (band - side) / 2;
                            ObjectBox {
                                id: k as u16 + 1,
                                x: col * c,
                                y: row * c,
                                w: side * c,
                                h: side * c,
                            }
                        })
                        .collect()
                },
            )
        }
    }
}

impl Fixture {
    /// Writes `gray/`, `color/`, `labels/` (16-bit instance ids) and
    /// `masks/` (binary union of instances) under `dir`.
    pub fn write(&self, dir: &Path, pattern: &FramePattern) -> Result<()> {
        save_sequence(&self.gray, &dir.join("gray"), pattern)?;
        save_sequence(&self.color, &dir.join("color"), pattern)?;
        let (w, h) = (self.spec.width as u32, self.spec.height as u32);
        for sub in ["labels", "masks"] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        for (k, lab) in self.labels.iter().enumerate() {
            let name = pattern.format(k + 1);
            let ids: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_raw(w, h, lab.clone()).expect("label buffer matches frame size");
            let p = dir.join("labels").join(&name);
            ids.save(&p).map_err(|e| Error::image(&p, e))?;
            let union = GrayImage::from_fn(w, h, |x, y| Luma([if lab[(y * w + x) as usize] != 0 { 255 } else { 0 }]));
            let p = dir.join("masks").join(&name);
            union.save(&p).map_err(|e| Error::image(&p, e))?;
        }
        Ok(())
    }
}
