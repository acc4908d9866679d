//! Procedurally rendered 2D point navigation.
//!
//! Positions live in the unit square; the reachable workspace is the centered
//! square of side `workspace_scale`. Actions are bounded displacements. Walls
//! are axis-aligned segments that stop motion one pixel short of contact.
//! Observations are `3 × H × W` images: dark background, gray walls and the
//! point drawn as a 2×2 block in its color.

use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Image, ImageShape};
use crate::scalar::Scalar;

pub const WALL_GRAY: f64 = 0.5;
pub const WALL_LIBRARY_SIZE: usize = 15;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("image shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(ImageShape, ImageShape),
    #[error("empty curriculum")]
    EmptyCurriculum,
    #[error("malformed golden fixture: {0}")]
    Fixture(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavVariant {
    NoWall,
    /// One wall configuration from the library per episode.
    MultiWall,
    /// Multi-wall plus a uniformly random point color per episode.
    MultiColor,
}

impl NavVariant {
    pub fn has_walls(self) -> bool {
        !matches!(self, NavVariant::NoWall)
    }

    pub fn random_color(self) -> bool {
        matches!(self, NavVariant::MultiColor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavEnvConfig {
    pub variant: NavVariant,
    pub height: usize,
    pub width: usize,
    /// Side of the reachable square as a fraction of the canvas, in `(0, 1]`.
    pub workspace_scale: f64,
    pub max_path_length: usize,
    /// Number of library wall configurations in use, at most 15.
    pub wall_set_size: usize,
    /// Largest per-step displacement along each axis.
    pub action_scale: f64,
}

impl Default for NavEnvConfig {
    fn default() -> Self {
        Self {
            variant: NavVariant::NoWall,
            height: 16,
            width: 16,
            workspace_scale: 1.0,
            max_path_length: 50,
            wall_set_size: WALL_LIBRARY_SIZE,
            action_scale: 0.15,
        }
    }
}

impl NavEnvConfig {
    pub fn with_variant(self, variant: NavVariant) -> Self {
        Self { variant, ..self }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.height < 8 || self.width < 8 {
            return Err(EnvError::Config(format!(
                "image must be at least 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.workspace_scale > 0.0 && self.workspace_scale <= 1.0) {
            return Err(EnvError::Config(format!(
                "workspace_scale must lie in (0, 1], got {}",
                self.workspace_scale
            )));
        }
        if self.max_path_length < 1 {
            return Err(EnvError::Config("max_path_length must be >= 1".into()));
        }
        if self.wall_set_size < 1 || self.wall_set_size > WALL_LIBRARY_SIZE {
            return Err(EnvError::Config(format!(
                "wall_set_size must lie in 1..={WALL_LIBRARY_SIZE}, got {}",
                self.wall_set_size
            )));
        }
        if !(self.action_scale > 0.0) || !self.action_scale.is_finite() {
            return Err(EnvError::Config("action_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn image_shape(&self) -> ImageShape {
        ImageShape::new(3, self.height, self.width)
    }

    /// `(low, high)` of the workspace along both axes.
    pub fn workspace(&self) -> (f64, f64) {
        let lo = 0.5 * (1.0 - self.workspace_scale);
        (lo, lo + self.workspace_scale)
    }

    /// Position units covered by one pixel step of the point.
    pub fn pixel_size(&self) -> f64 {
        1.0 / (self.width.min(self.height) - 2) as f64
    }
}

/// Axis-aligned segment in canvas coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Wall {
    const fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        Self { a, b }
    }

    pub fn is_vertical(&self) -> bool {
        self.a[0] == self.b[0]
    }

    fn mapped(&self, lo: f64, scale: f64) -> Wall {
        let m = |p: [f64; 2]| [lo + scale * p[0], lo + scale * p[1]];
        Wall::new(m(self.a), m(self.b))
    }

    /// Smallest `t ∈ [0, 1]` at which `p + t·d` touches the segment.
    fn first_contact(&self, p: [f64; 2], d: [f64; 2]) -> Option<f64> {
        // axis 0 is the wall's fixed coordinate
        let (fixed, free) = if self.is_vertical() { (0, 1) } else { (1, 0) };
        let w = self.a[fixed];
        let (s0, s1) = (self.a[free].min(self.b[free]), self.a[free].max(self.b[free]));
        if d[fixed] != 0.0 {
            let t = (w - p[fixed]) / d[fixed];
            if (0.0..=1.0).contains(&t) {
                let s = p[free] + t * d[free];
                if s >= s0 && s <= s1 {
                    return Some(t);
                }
            }
            None
        } else if p[fixed] == w && d[free] != 0.0 {
            // moving along the wall's own line
            let entry = if d[free] > 0.0 { s0 } else { s1 };
            if p[free] >= s0 && p[free] <= s1 {
                return Some(0.0);
            }
            let t = (entry - p[free]) / d[free];
            (0.0..=1.0).contains(&t).then_some(t)
        } else {
            None
        }
    }

    /// Distance from `p` to the segment.
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        let (fixed, free) = if self.is_vertical() { (0, 1) } else { (1, 0) };
        let (s0, s1) = (self.a[free].min(self.b[free]), self.a[free].max(self.b[free]));
        let along = p[free].clamp(s0, s1);
        let df = p[fixed] - self.a[fixed];
        let ds = p[free] - along;
        (df * df + ds * ds).sqrt()
    }
}

/// The fixed library of wall configurations, in workspace-relative coordinates.
pub const WALL_LIBRARY: [&[Wall]; WALL_LIBRARY_SIZE] = [
    &[Wall::new([0.5, 0.2], [0.5, 0.8])],
    &[Wall::new([0.2, 0.5], [0.8, 0.5])],
    &[
        Wall::new([0.5, 0.2], [0.5, 0.8]),
        Wall::new([0.2, 0.5], [0.8, 0.5]),
    ],
    &[Wall::new([0.33, 0.0], [0.33, 0.6])],
    &[Wall::new([0.67, 0.4], [0.67, 1.0])],
    &[
        Wall::new([0.33, 0.0], [0.33, 0.6]),
        Wall::new([0.67, 0.4], [0.67, 1.0]),
    ],
    &[Wall::new([0.0, 0.33], [0.6, 0.33])],
    &[Wall::new([0.4, 0.67], [1.0, 0.67])],
    &[
        Wall::new([0.0, 0.33], [0.6, 0.33]),
        Wall::new([0.4, 0.67], [1.0, 0.67]),
    ],
    &[
        Wall::new([0.3, 0.3], [0.3, 0.7]),
        Wall::new([0.7, 0.3], [0.7, 0.7]),
        Wall::new([0.3, 0.7], [0.7, 0.7]),
    ],
    &[
        Wall::new([0.3, 0.3], [0.3, 0.7]),
        Wall::new([0.7, 0.3], [0.7, 0.7]),
        Wall::new([0.3, 0.3], [0.7, 0.3]),
    ],
    &[
        Wall::new([0.5, 0.5], [0.5, 1.0]),
        Wall::new([0.5, 0.5], [1.0, 0.5]),
    ],
    &[
        Wall::new([0.2, 0.3], [0.8, 0.3]),
        Wall::new([0.5, 0.3], [0.5, 0.8]),
    ],
    &[
        Wall::new([0.0, 0.25], [0.5, 0.25]),
        Wall::new([0.5, 0.5], [1.0, 0.5]),
        Wall::new([0.0, 0.75], [0.5, 0.75]),
    ],
    &[
        Wall::new([0.25, 0.25], [0.25, 0.75]),
        Wall::new([0.25, 0.75], [0.75, 0.75]),
    ],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub position: [f64; 2],
    pub point_color: [f64; 3],
    /// Walls in canvas coordinates.
    pub active_walls: Vec<Wall>,
}

pub const RED: [f64; 3] = [1.0, 0.0, 0.0];

fn near_any_wall(p: [f64; 2], walls: &[Wall], clearance: f64) -> bool {
    walls.iter().any(|w| w.distance_to(p) < clearance)
}

fn sample_position<R: Rng + ?Sized>(config: &NavEnvConfig, walls: &[Wall], rng: &mut R) -> [f64; 2] {
    let (lo, hi) = config.workspace();
    let clearance = 0.5 * config.pixel_size();
    loop {
        let p = [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
        if !near_any_wall(p, walls, clearance) {
            return p;
        }
    }
}

/// Fresh episode state: walls and color resampled per the variant, position
/// uniform over the workspace.
pub fn reset_state<R: Rng + ?Sized>(config: &NavEnvConfig, rng: &mut R) -> NavState {
    let (lo, _) = config.workspace();
    let active_walls = if config.variant.has_walls() {
        let pick = rng.random_range(0..config.wall_set_size);
        WALL_LIBRARY[pick]
            .iter()
            .map(|w| w.mapped(lo, config.workspace_scale))
            .collect()
    } else {
        Vec::new()
    };
    let point_color = if config.variant.random_color() {
        [rng.random(), rng.random(), rng.random()]
    } else {
        RED
    };
    let position = sample_position(config, &active_walls, rng);
    NavState {
        position,
        point_color,
        active_walls,
    }
}

/// Applies a clipped displacement: the target is clamped to the workspace
/// and motion through a wall stops one pixel before it.
pub fn step_state(config: &NavEnvConfig, state: &NavState, action: [f64; 2]) -> NavState {
    let (lo, hi) = config.workspace();
    let s = config.action_scale;
    let p = state.position;
    let a = [action[0].clamp(-s, s), action[1].clamp(-s, s)];
    let target = [(p[0] + a[0]).clamp(lo, hi), (p[1] + a[1]).clamp(lo, hi)];
    let d = [target[0] - p[0], target[1] - p[1]];
    let hit = state
        .active_walls
        .iter()
        .filter_map(|w| w.first_contact(p, d))
        .fold(f64::INFINITY, f64::min);
    let position = if hit.is_finite() {
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let t = (hit - config.pixel_size() / len).max(0.0);
        [p[0] + t * d[0], p[1] + t * d[1]]
    } else {
        target
    };
    NavState {
        position,
        ..state.clone()
    }
}

/// Overlap of the point's 2-pixel span centered at `coord·(extent − 2) + 1`
/// with each pixel, as `(first pixel, coverages)`.
fn block_coverage(coord: f64, extent: usize) -> (usize, [f64; 3]) {
    let center = coord * (extent - 2) as f64 + 1.0;
    let lo = center - 1.0;
    let first = (lo.floor().max(0.0) as usize).min(extent - 3);
    let mut cov = [0.0; 3];
    for (k, c) in cov.iter_mut().enumerate() {
        let p = (first + k) as f64;
        *c = ((p + 1.0).min(lo + 2.0) - p.max(lo)).max(0.0);
    }
    (first, cov)
}

fn wall_pixel(coord: f64, extent: usize) -> usize {
    ((coord * (extent - 2) as f64 + 1.0).floor() as usize).min(extent - 1)
}

pub fn render<T: Scalar>(state: &NavState, config: &NavEnvConfig) -> Image<T> {
    let shape = config.image_shape();
    let mut img = Image::zeros(shape);
    let gray = T::c(WALL_GRAY);
    for w in &state.active_walls {
        let (c0, c1) = (
            wall_pixel(w.a[0].min(w.b[0]), config.width),
            wall_pixel(w.a[0].max(w.b[0]), config.width),
        );
        let (r0, r1) = (
            wall_pixel(w.a[1].min(w.b[1]), config.height),
            wall_pixel(w.a[1].max(w.b[1]), config.height),
        );
        for r in r0..=r1 {
            for c in c0..=c1 {
                for ch in 0..3 {
                    img.set(ch, r, c, gray);
                }
            }
        }
    }
    let (col, cx) = block_coverage(state.position[0], config.width);
    let (row, cy) = block_coverage(state.position[1], config.height);
    for (dr, wy) in cy.iter().enumerate() {
        for (dc, wx) in cx.iter().enumerate() {
            let w = wy * wx;
            if w == 0.0 {
                continue;
            }
            let (r, c) = (row + dr, col + dc);
            for ch in 0..3 {
                let under = img.get(ch, r, c).as_f64();
                img.set(ch, r, c, T::c((1.0 - w) * under + w * state.point_color[ch]));
            }
        }
    }
    img
}

/// Goal image at a uniformly sampled reachable position, sharing the walls
/// and color of `context`.
pub fn sample_eval_goal<T: Scalar, R: Rng + ?Sized>(
    config: &NavEnvConfig,
    context: &NavState,
    rng: &mut R,
) -> (Image<T>, [f64; 2]) {
    let position = sample_position(config, &context.active_walls, rng);
    let goal = NavState {
        position,
        ..context.clone()
    };
    (render(&goal, config), position)
}

/// Euclidean norm of the pixel difference.
pub fn image_distance<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<T, EnvError> {
    if a.shape() != b.shape() {
        return Err(EnvError::ShapeMismatch(a.shape(), b.shape()));
    }
    Ok(crate::scalar::l2_distance(a.pixels(), b.pixels()))
}

/// Stateful environment with a step counter.
#[derive(Debug, Clone)]
pub struct NavEnv {
    config: NavEnvConfig,
    state: NavState,
    steps_taken: u64,
}

impl NavEnv {
    pub fn new(config: NavEnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let (lo, hi) = config.workspace();
        let c = 0.5 * (lo + hi);
        Ok(Self {
            config,
            state: NavState {
                position: [c, c],
                point_color: RED,
                active_walls: Vec::new(),
            },
            steps_taken: 0,
        })
    }

    /// Starts from an existing state, e.g. a sampled evaluation context.
    pub fn with_state(config: NavEnvConfig, state: NavState) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            config,
            state,
            steps_taken: 0,
        })
    }

    pub fn config(&self) -> &NavEnvConfig {
        &self.config
    }

    /// Takes effect at the next reset.
    pub fn set_config(&mut self, config: NavEnvConfig) -> Result<(), EnvError> {
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn state(&self) -> &NavState {
        &self.state
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    pub fn reset<T: Scalar, R: Rng + ?Sized>(&mut self, rng: &mut R) -> Image<T> {
        self.state = reset_state(&self.config, rng);
        render(&self.state, &self.config)
    }

    pub fn step<T: Scalar>(&mut self, action: [f64; 2]) -> Image<T> {
        self.state = step_state(&self.config, &self.state, action);
        self.steps_taken += 1;
        render(&self.state, &self.config)
    }
}

/// Environment stages keyed by their first epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    stages: Vec<(usize, NavEnvConfig)>,
}

impl Curriculum {
    pub fn new(stages: Vec<(usize, NavEnvConfig)>) -> Result<Self, EnvError> {
        if stages.is_empty() {
            return Err(EnvError::EmptyCurriculum);
        }
        if stages[0].0 != 0 {
            return Err(EnvError::Config("curriculum must start at epoch 0".into()));
        }
        if stages.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(EnvError::Config("curriculum epochs must be strictly increasing".into()));
        }
        for (_, c) in &stages {
            c.validate()?;
        }
        Ok(Self { stages })
    }

    pub fn constant(config: NavEnvConfig) -> Result<Self, EnvError> {
        Self::new(vec![(0, config)])
    }

    /// no-wall at 0, multi-wall at `wall_epoch`, multi-color at `color_epoch`.
    pub fn navigation(base: NavEnvConfig, wall_epoch: usize, color_epoch: usize) -> Result<Self, EnvError> {
        Self::new(vec![
            (0, base.with_variant(NavVariant::NoWall)),
            (wall_epoch, base.with_variant(NavVariant::MultiWall)),
            (color_epoch, base.with_variant(NavVariant::MultiColor)),
        ])
    }

    pub fn stages(&self) -> &[(usize, NavEnvConfig)] {
        &self.stages
    }

    /// Config of the latest stage starting at or before `epoch`.
    pub fn at(&self, epoch: usize) -> &NavEnvConfig {
        let i = self
            .stages
            .iter()
            .rposition(|(start, _)| *start <= epoch)
            .expect("first stage starts at 0");
        &self.stages[i].1
    }
}

pub fn curriculum_advance(schedule: &[(usize, NavEnvConfig)], epoch: usize) -> Result<NavEnvConfig, EnvError> {
    if schedule.is_empty() {
        return Err(EnvError::EmptyCurriculum);
    }
    Ok(*Curriculum::new(schedule.to_vec())?.at(epoch))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenMeta {
    pub shape: ImageShape,
    pub variant: NavVariant,
    pub position: [f64; 2],
}

/// Writes `<stem>.f64` (raw little-endian pixels) and `<stem>.json`.
pub fn write_golden(dir: &Path, stem: &str, image: &Image<f64>, variant: NavVariant, position: [f64; 2]) -> Result<(), EnvError> {
    let bytes: Vec<u8> = image.pixels().iter().flat_map(|p| p.to_le_bytes()).collect();
    fs::write(dir.join(format!("{stem}.f64")), bytes)?;
    let meta = GoldenMeta {
        shape: image.shape(),
        variant,
        position,
    };
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&meta).expect("serializable") + "\n",
    )?;
    Ok(())
}

pub fn read_golden(dir: &Path, stem: &str) -> Result<(Image<f64>, GoldenMeta), EnvError> {
    let meta: GoldenMeta = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)
        .map_err(|e| EnvError::Fixture(e.to_string()))?;
    let bytes = fs::read(dir.join(format!("{stem}.f64")))?;
    if bytes.len() != 8 * meta.shape.len() {
        return Err(EnvError::Fixture(format!(
            "expected {} bytes, found {}",
            8 * meta.shape.len(),
            bytes.len()
        )));
    }
    let pixels = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Image::from_pixels(meta.shape, pixels), meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn cfg(variant: NavVariant) -> NavEnvConfig {
        NavEnvConfig::default().with_variant(variant)
    }

    #[test]
    fn no_wall_reset_has_no_walls_and_red_point() {
        let s = reset_state(&cfg(NavVariant::NoWall), &mut rng(1));
        assert!(s.active_walls.is_empty());
        assert_eq!(s.point_color, RED);
    }

    #[test]
    fn multi_wall_reset_draws_from_library() {
        let c = cfg(NavVariant::MultiWall);
        let library: Vec<Vec<Wall>> = WALL_LIBRARY.iter().map(|w| w.to_vec()).collect();
        let mut seen = std::collections::HashSet::new();
        let mut r = rng(2);
        for _ in 0..500 {
            let s = reset_state(&c, &mut r);
            let idx = library.iter().position(|w| *w == s.active_walls).expect("library member");
            seen.insert(idx);
            assert_eq!(s.point_color, RED);
        }
        assert_eq!(seen.len(), WALL_LIBRARY_SIZE);
    }

    #[test]
    fn multi_color_resamples_color() {
        let c = cfg(NavVariant::MultiColor);
        let mut r = rng(3);
        let a = reset_state(&c, &mut r);
        let b = reset_state(&c, &mut r);
        assert_ne!(a.point_color, b.point_color);
        assert!(!a.active_walls.is_empty());
    }

    #[test]
    fn reset_is_seed_deterministic() {
        let c = cfg(NavVariant::MultiColor);
        assert_eq!(reset_state(&c, &mut rng(4)), reset_state(&c, &mut rng(4)));
    }

    #[test]
    fn zero_action_keeps_position() {
        let c = cfg(NavVariant::MultiWall);
        let s = reset_state(&c, &mut rng(5));
        assert_eq!(step_state(&c, &s, [0.0, 0.0]).position, s.position);
    }

    #[test]
    fn pushing_past_boundary_stops_on_boundary() {
        let c = NavEnvConfig {
            workspace_scale: 0.5,
            ..cfg(NavVariant::NoWall)
        };
        let mut s = reset_state(&c, &mut rng(6));
        for _ in 0..20 {
            s = step_state(&c, &s, [1.0, -1.0]);
        }
        assert_eq!(s.position, [0.75, 0.25]);
    }

    #[test]
    fn crossing_a_wall_stops_at_margin() {
        let c = cfg(NavVariant::MultiWall);
        let s = NavState {
            position: [0.38, 0.5],
            point_color: RED,
            active_walls: vec![Wall::new([0.5, 0.2], [0.5, 0.8])],
        };
        let next = step_state(&c, &s, [0.15, 0.0]);
        assert!((next.position[0] - (0.5 - c.pixel_size())).abs() < 1e-12);
        assert_eq!(next.position[1], 0.5);
        // going around the end is allowed
        let s2 = NavState {
            position: [0.38, 0.9],
            ..s.clone()
        };
        assert!((step_state(&c, &s2, [0.15, 0.0]).position[0] - 0.53).abs() < 1e-12);
    }

    #[test]
    fn render_is_deterministic_and_position_sensitive() {
        let c = cfg(NavVariant::MultiWall);
        let s = reset_state(&c, &mut rng(7));
        let a: Image<f64> = render(&s, &c);
        assert_eq!(a, render(&s, &c));
        assert_eq!(a.pixels().len(), 3 * 16 * 16);
        assert!(a.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));
        let moved = NavState {
            position: [0.1, 0.1],
            active_walls: vec![],
            ..s.clone()
        };
        let far = NavState {
            position: [0.1 + 2.0 / 14.0, 0.1],
            ..moved.clone()
        };
        assert_ne!(render::<f64>(&moved, &c), render::<f64>(&far, &c));
    }

    #[test]
    fn point_block_has_four_pixels() {
        let c = cfg(NavVariant::NoWall);
        let s = NavState {
            position: [0.5, 0.5],
            point_color: RED,
            active_walls: vec![],
        };
        let img: Image<f64> = render(&s, &c);
        assert_eq!(img.pixels().iter().filter(|&&p| p > 0.0).count(), 4);
        assert_eq!(img.get(0, 7, 7), 1.0);
        assert_eq!(img.get(0, 8, 8), 1.0);
        assert_eq!(img.get(1, 8, 8), 0.0);
    }

    #[test]
    fn image_distance_properties() {
        let shape = ImageShape::new(3, 4, 4);
        let zeros = Image::<f64>::zeros(shape);
        let ones = Image::from_pixels(shape, vec![1.0; 48]);
        assert_eq!(image_distance(&zeros, &zeros).unwrap(), 0.0);
        assert!((image_distance(&zeros, &ones).unwrap() - 48f64.sqrt()).abs() < 1e-12);
        assert_eq!(
            image_distance(&zeros, &ones).unwrap(),
            image_distance(&ones, &zeros).unwrap()
        );
        let other = Image::<f64>::zeros(ImageShape::new(1, 4, 4));
        assert!(image_distance(&zeros, &other).is_err());
    }

    #[test]
    fn eval_goal_shares_context() {
        let c = cfg(NavVariant::MultiColor);
        let mut r = rng(8);
        let s = reset_state(&c, &mut r);
        let (img, pos) = sample_eval_goal::<f64, _>(&c, &s, &mut r);
        let (lo, hi) = c.workspace();
        assert!(pos.iter().all(|v| (lo..=hi).contains(v)));
        let expect = render(
            &NavState {
                position: pos,
                ..s.clone()
            },
            &c,
        );
        assert_eq!(img, expect);
        let (again, pos2) = sample_eval_goal::<f64, _>(&c, &s, &mut rng(8));
        let (again2, _) = sample_eval_goal::<f64, _>(&c, &s, &mut rng(8));
        assert_eq!(again, again2);
        assert_ne!(pos, pos2);
    }

    #[test]
    fn curriculum_boundaries() {
        let cur = Curriculum::navigation(NavEnvConfig::default(), 50, 100).unwrap();
        assert_eq!(cur.at(0).variant, NavVariant::NoWall);
        assert_eq!(cur.at(49).variant, NavVariant::NoWall);
        assert_eq!(cur.at(50).variant, NavVariant::MultiWall);
        assert_eq!(cur.at(100).variant, NavVariant::MultiColor);
        assert_eq!(cur.at(1000).variant, NavVariant::MultiColor);
        assert!(matches!(curriculum_advance(&[], 3), Err(EnvError::EmptyCurriculum)));
        assert_eq!(
            curriculum_advance(cur.stages(), 50).unwrap().variant,
            NavVariant::MultiWall
        );
        assert!(Curriculum::new(vec![(3, NavEnvConfig::default())]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(NavEnvConfig { height: 4, ..NavEnvConfig::default() }.validate().is_err());
        assert!(NavEnvConfig { workspace_scale: 0.0, ..NavEnvConfig::default() }.validate().is_err());
        assert!(NavEnvConfig { max_path_length: 0, ..NavEnvConfig::default() }.validate().is_err());
        assert!(NavEnvConfig { wall_set_size: 16, ..NavEnvConfig::default() }.validate().is_err());
        assert!(NavEnvConfig::default().validate().is_ok());
    }

    #[test]
    fn env_counts_steps() {
        let mut env = NavEnv::new(cfg(NavVariant::NoWall)).unwrap();
        let mut r = rng(9);
        let _: Image<f64> = env.reset(&mut r);
        for _ in 0..7 {
            let _: Image<f64> = env.step([0.01, 0.0]);
        }
        assert_eq!(env.steps_taken(), 7);
    }
}
