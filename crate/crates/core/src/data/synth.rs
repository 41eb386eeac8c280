use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Pair;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Circle,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Rectangle, ShapeKind::Circle, ShapeKind::Triangle];
}

/// Parameters of the scene generator. Scene `i` of a dataset is fully
/// determined by `(spec, i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub size: usize,
    pub classes: usize,
    pub shapes: usize,
    pub min_px: usize,
    pub max_px: usize,
    pub seed: u64,
    /// Shape kinds to draw from; all three by default.
    pub kinds: Vec<ShapeKind>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            size: 64,
            classes: 4,
            shapes: 5,
            min_px: 6,
            max_px: 48,
            seed: 0,
            kinds: ShapeKind::ALL.to_vec(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shapes == 0 {
            return Err(Error::EmptyScene);
        }
        if self.classes < 2 || self.classes > 255 {
            return Err(Error::Config(format!(
                "class count must be in 2..=255, got {}",
                self.classes
            )));
        }
        if self.size == 0 || self.min_px == 0 || self.max_px < 4 * self.min_px {
            return Err(Error::Config(format!(
                "size range {}..{} px must span at least 4x on a nonempty canvas",
                self.min_px, self.max_px
            )));
        }
        if self.kinds.is_empty() {
            return Err(Error::Config("no shape kinds to draw".into()));
        }
        Ok(())
    }
}

const BACKGROUND: [f32; 3] = [70.0, 70.0, 70.0];
const PALETTE: [[f32; 3]; 8] = [
    [220.0, 60.0, 50.0],
    [60.0, 190.0, 80.0],
    [60.0, 90.0, 220.0],
    [230.0, 200.0, 60.0],
    [190.0, 70.0, 200.0],
    [60.0, 200.0, 210.0],
    [240.0, 140.0, 40.0],
    [150.0, 150.0, 240.0],
];
const COLOR_JITTER: f32 = 25.0;
const PIXEL_NOISE: f32 = 20.0;

fn base_color(class: usize) -> [f32; 3] {
    if class == 0 {
        return BACKGROUND;
    }
    let c = PALETTE[(class - 1) % PALETTE.len()];
    // Classes beyond the palette reuse it with a brightness shift.
    let shift = ((class - 1) / PALETTE.len()) as f32 * 37.0;
    c.map(|v| (v + shift) % 256.0)
}

fn inside(kind: ShapeKind, y: f32, x: f32, cy: f32, cx: f32, w: f32, h: f32) -> bool {
    let (dy, dx) = (y - cy, x - cx);
    match kind {
        ShapeKind::Rectangle => dy.abs() <= h / 2.0 && dx.abs() <= w / 2.0,
        ShapeKind::Circle => dy * dy + dx * dx <= (w / 2.0) * (w / 2.0),
        // Apex up, base at the bottom of an h-tall box.
        ShapeKind::Triangle => {
            let t = (dy + h / 2.0) / h;
            (0.0..=1.0).contains(&t) && dx.abs() <= t * w / 2.0
        }
    }
}

/// Generates scene `index` of the dataset described by `spec`.
///
/// Shapes of classes `1..K` are painted in order, later ones occluding
/// earlier ones, over a class-0 background. Fill colors follow the class
/// with per-shape jitter and per-pixel noise.
pub fn generate(spec: &SceneSpec, index: u64) -> Result<Pair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let (n, plane) = (spec.size, spec.size * spec.size);
    let mut label = vec![0u8; plane];
    let mut color = vec![BACKGROUND; plane];

    for _ in 0..spec.shapes {
        let class = rng.random_range(1..spec.classes);
        let kind = spec.kinds[rng.random_range(0..spec.kinds.len())];
        let w = rng.random_range(spec.min_px..=spec.max_px) as f32;
        let h = match kind {
            ShapeKind::Circle => w,
            _ => rng.random_range(spec.min_px..=spec.max_px) as f32,
        };
        let cy = rng.random_range(0..n) as f32 + 0.5;
        let cx = rng.random_range(0..n) as f32 + 0.5;
        let jitter: [f32; 3] = std::array::from_fn(|_| rng.random_range(-COLOR_JITTER..=COLOR_JITTER));
        let base = base_color(class);
        let fill: [f32; 3] = std::array::from_fn(|i| base[i] + jitter[i]);
        for y in 0..n {
            for x in 0..n {
                if inside(kind, y as f32 + 0.5, x as f32 + 0.5, cy, cx, w, h) {
                    label[y * n + x] = class as u8;
                    color[y * n + x] = fill;
                }
            }
        }
    }

    let mut rgb = Vec::with_capacity(3 * plane);
    for c in &color {
        for &v in c {
            let noisy = v + rng.random_range(-PIXEL_NOISE..=PIXEL_NOISE);
            rgb.push(noisy.round().clamp(0.0, 255.0) as u8);
        }
    }
    Pair::new(n, n, rgb, label)
}
