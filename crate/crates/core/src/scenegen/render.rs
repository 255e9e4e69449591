//! Deterministic attribute-to-pixel rendering.
//!
//! Every dimension has a measurable photometric effect: background picks a
//! base texture family, illumination scales a luminance curve (midnight
//! darkest, noon brightest), weather desaturates and adds seeded noise,
//! viewpoint shears and narrows the figure, identity-level flags recolor or
//! reshape figure parts, and identity selects the figure palette.

use super::{mix_seed, AttrKind, AttributeConfig, AttributeSchema, DomainTag, Provenance, SceneImage};
use crate::error::{Error, Result};

/// Default portrait crop size.
pub const DEFAULT_WIDTH: u32 = 64;
pub const DEFAULT_HEIGHT: u32 = 128;

const SKIN_TONES: [[f64; 3]; 4] = [
    [244.0, 214.0, 186.0],
    [224.0, 186.0, 148.0],
    [188.0, 142.0, 102.0],
    [142.0, 98.0, 66.0],
];
const HAIR_COLORS: [[f64; 3]; 5] = [
    [40.0, 32.0, 28.0],
    [72.0, 50.0, 30.0],
    [120.0, 85.0, 40.0],
    [160.0, 130.0, 60.0],
    [30.0, 30.0, 34.0],
];
const UPPER_COLORS: [[f64; 3]; 8] = [
    [180.0, 40.0, 44.0],
    [44.0, 80.0, 170.0],
    [40.0, 140.0, 70.0],
    [210.0, 180.0, 40.0],
    [130.0, 60.0, 160.0],
    [230.0, 120.0, 30.0],
    [70.0, 70.0, 75.0],
    [235.0, 230.0, 225.0],
];
const LOWER_COLORS: [[f64; 3]; 8] = [
    [40.0, 45.0, 65.0],
    [90.0, 90.0, 95.0],
    [30.0, 30.0, 32.0],
    [140.0, 110.0, 80.0],
    [60.0, 90.0, 140.0],
    [150.0, 40.0, 45.0],
    [200.0, 195.0, 190.0],
    [80.0, 110.0, 60.0],
];
const ACCENT_COLORS: [[f64; 3]; 6] = [
    [200.0, 30.0, 30.0],
    [30.0, 110.0, 200.0],
    [240.0, 200.0, 40.0],
    [20.0, 150.0, 130.0],
    [240.0, 240.0, 240.0],
    [25.0, 25.0, 25.0],
];

/// (luminance factor, rgb tint); index order follows the time of day:
/// midnight, dawn, forenoon, noon, afternoon, dusk, night.
const ILLUMINATION: [(f64, [f64; 3]); 7] = [
    (0.22, [0.85, 0.90, 1.15]),
    (0.55, [1.10, 0.95, 0.95]),
    (0.86, [1.02, 1.00, 0.98]),
    (1.00, [1.00, 1.00, 1.00]),
    (0.93, [1.05, 1.00, 0.94]),
    (0.60, [1.15, 0.92, 0.82]),
    (0.33, [0.88, 0.92, 1.12]),
];

/// (desaturation, fog blend, fog gray, noise amplitude, brightness, tint);
/// index order: sunny, clouds, overcast, foggy, neutral, blizzard, snowlight.
/// Blends stay light enough that backgrounds remain identifiable under
/// every condition.
const WEATHER: [(f64, f64, f64, f64, f64, [f64; 3]); 7] = [
    (0.00, 0.00, 0.0, 0.0, 1.02, [1.06, 1.00, 0.96]),
    (0.12, 0.04, 205.0, 2.0, 0.98, [1.00, 1.00, 1.00]),
    (0.25, 0.10, 190.0, 2.5, 0.92, [0.97, 0.98, 1.02]),
    (0.20, 0.35, 208.0, 3.0, 0.97, [1.00, 1.00, 1.00]),
    (0.00, 0.00, 0.0, 0.0, 1.00, [1.00, 1.00, 1.00]),
    (0.25, 0.18, 225.0, 10.0, 0.96, [0.98, 0.99, 1.03]),
    (0.10, 0.08, 235.0, 4.0, 1.10, [1.00, 1.00, 1.04]),
];

const BACKGROUND_FAMILIES: usize = 9;

fn hash3(key: u64, a: u64, b: u64, c: u64) -> u64 {
    mix_seed(
        key ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
            ^ c.wrapping_mul(0x1656_67B1_9E37_79F9),
    )
}

/// Uniform value in [0, 1) from a position hash.
fn hash01(key: u64, a: u64, b: u64, c: u64) -> f64 {
    (hash3(key, a, b, c) >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, Copy, Default)]
struct FlagSet {
    female: bool,
    long_hair: bool,
    hat: bool,
    glasses: bool,
    backpack: bool,
    shoulder_bag: bool,
    handbag: bool,
    short_sleeves: bool,
    long_lower: bool,
    dress: bool,
    jacket: bool,
    shorts: bool,
    boots: bool,
}

impl FlagSet {
    fn set(&mut self, ordinal: usize, on: bool) {
        match ordinal {
            0 => self.female = on,
            1 => self.long_hair = on,
            2 => self.hat = on,
            3 => self.glasses = on,
            4 => self.backpack = on,
            5 => self.shoulder_bag = on,
            6 => self.handbag = on,
            7 => self.short_sleeves = on,
            8 => self.long_lower = on,
            9 => self.dress = on,
            10 => self.jacket = on,
            11 => self.shorts = on,
            _ => self.boots = on,
        }
    }
}

/// Renders scene images for one schema at a fixed canvas size.
pub struct SceneRenderer {
    schema: AttributeSchema,
    width: u32,
    height: u32,
    viewpoint_dim: Option<usize>,
    weather_dim: Option<usize>,
    illumination_dim: Option<usize>,
    background_dim: Option<usize>,
    /// (schema dimension, effect ordinal in [`FlagSet`])
    flag_dims: Vec<(usize, usize)>,
    /// Categorical dims with no dedicated effect; they get a tint effect.
    generic_dims: Vec<usize>,
}

impl SceneRenderer {
    pub fn new(schema: AttributeSchema, width: u32, height: u32) -> Result<Self> {
        if width < 16 || height < 16 {
            return Err(Error::InvalidArgument(format!(
                "canvas {width}x{height} too small, minimum 16x16"
            )));
        }
        let mut viewpoint_dim = None;
        let mut weather_dim = None;
        let mut illumination_dim = None;
        let mut background_dim = None;
        let mut flag_dims = Vec::new();
        let mut generic_dims = Vec::new();
        let mut flag_ordinal = 0usize;
        for (i, d) in schema.dimensions().iter().enumerate() {
            match d.kind {
                AttrKind::Circular => {
                    if viewpoint_dim.is_none() {
                        viewpoint_dim = Some(i);
                    } else {
                        generic_dims.push(i);
                    }
                }
                AttrKind::BinaryFlag => {
                    let ordinal = super::ID_FLAG_NAMES
                        .iter()
                        .position(|n| *n == d.name)
                        .unwrap_or(flag_ordinal % 13);
                    flag_dims.push((i, ordinal));
                    flag_ordinal += 1;
                }
                AttrKind::Categorical => match d.name.as_str() {
                    "weather" => weather_dim = Some(i),
                    "illumination" => illumination_dim = Some(i),
                    "background" => background_dim = Some(i),
                    _ => generic_dims.push(i),
                },
            }
        }
        Ok(SceneRenderer {
            schema,
            width,
            height,
            viewpoint_dim,
            weather_dim,
            illumination_dim,
            background_dim,
            flag_dims,
            generic_dims,
        })
    }

    pub fn with_default_size(schema: AttributeSchema) -> Result<Self> {
        Self::new(schema, DEFAULT_WIDTH, DEFAULT_HEIGHT)
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Renders one image as a pure function of (config, identity, seed).
    pub fn render(&self, config: &AttributeConfig, identity: u32, seed: u64) -> Result<SceneImage> {
        self.schema.validate_config(config)?;

        let w = self.width as usize;
        let h = self.height as usize;
        let wf = w as f64;
        let hf = h as f64;

        // identity seeds the figure palette and nothing else; colors are
        // pulled toward a common mid-tone so identity stays a mild nuisance
        // next to the environment attributes
        let pal = mix_seed(identity as u64 ^ 0xA11C_E5ED);
        let soften = |c: [f64; 3]| -> [f64; 3] {
            [
                128.0 + 0.45 * (c[0] - 128.0),
                128.0 + 0.45 * (c[1] - 128.0),
                128.0 + 0.45 * (c[2] - 128.0),
            ]
        };
        let skin = soften(SKIN_TONES[(pal % 4) as usize]);
        let hair = soften(HAIR_COLORS[((pal >> 8) % 5) as usize]);
        let upper = soften(UPPER_COLORS[((pal >> 16) % 8) as usize]);
        let lower = soften(LOWER_COLORS[((pal >> 24) % 8) as usize]);
        let accent = soften(ACCENT_COLORS[((pal >> 32) % 6) as usize]);
        let accent2 = soften(ACCENT_COLORS[((pal >> 40) % 6) as usize]);

        let theta = match self.viewpoint_dim {
            Some(d) => {
                let card = self.schema.dimensions()[d].cardinality as f64;
                (config.value(d) as f64) * 360.0 / card
            }
            None => 0.0,
        };
        let rad = theta.to_radians();
        let (sin_t, cos_t) = (rad.sin(), rad.cos());
        let width_scale = 0.55 + 0.45 * cos_t.abs();
        let shear = 0.12 * sin_t * wf;
        let facing = cos_t > 0.05;

        let mut flags = FlagSet::default();
        for (dim, ordinal) in &self.flag_dims {
            flags.set(*ordinal, config.value(*dim) == 1);
        }

        let bg_value = self.background_dim.map(|d| config.value(d) as usize).unwrap_or(0);
        let bg_family = bg_value % BACKGROUND_FAMILIES;
        let wx_value = self.weather_dim.map(|d| config.value(d) as usize).unwrap_or(4);
        let wx = WEATHER[wx_value % WEATHER.len()];
        let il_value = self
            .illumination_dim
            .map(|d| config.value(d) as usize)
            .unwrap_or(3);
        let il = ILLUMINATION[il_value % ILLUMINATION.len()];

        // overflow values past the effect tables, and generic dims, fold in a
        // per-value tint so no attribute value is photometrically dead
        let mut tint = [1.0f64; 3];
        let mut fold_tint = |dim: usize, value: u32| {
            let g = hash3(0x7157_u64, dim as u64, value as u64, 0);
            for (c, t) in tint.iter_mut().enumerate() {
                *t *= 0.94 + 0.12 * ((g >> (c * 16)) & 0xFFFF) as f64 / 65535.0;
            }
        };
        for &dim in &self.generic_dims {
            fold_tint(dim, config.value(dim));
        }
        if bg_value >= BACKGROUND_FAMILIES {
            fold_tint(self.background_dim.unwrap_or(0), bg_value as u32);
        }
        if wx_value >= WEATHER.len() {
            fold_tint(self.weather_dim.unwrap_or(0), wx_value as u32);
        }
        if il_value >= ILLUMINATION.len() {
            fold_tint(self.illumination_dim.unwrap_or(0), il_value as u32);
        }

        let noise_key = mix_seed(seed ^ hash3(0x5EED_u64, wx_value as u64, bg_family as u64, 0));
        let geo = Geometry {
            wf,
            hf,
            cx: wf / 2.0,
            width_scale,
            shear,
            sin_t,
            facing,
            skin,
            hair,
            upper,
            lower,
            accent,
            accent2,
            flags,
        };

        let mut rgb = vec![0u8; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                let base = background_pixel(bg_family, x, y, wf, hf, noise_key);
                let mut px = geo.figure_pixel(x as f64 + 0.5, y as f64 + 0.5).unwrap_or(base);

                for (c, v) in px.iter_mut().enumerate() {
                    // illumination then weather, matching outdoor capture order
                    *v *= il.0 * il.1[c] * tint[c];
                }
                let (desat, fog, fog_gray, noise_amp, bright, wx_tint) = wx;
                if desat > 0.0 || fog > 0.0 || bright != 1.0 {
                    let gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
                    for (c, v) in px.iter_mut().enumerate() {
                        let mut t = *v + desat * (gray - *v);
                        t += fog * (fog_gray - t);
                        *v = t * bright * wx_tint[c];
                    }
                }
                if noise_amp > 0.0 {
                    let n = (hash01(noise_key, x as u64, y as u64, 1) - 0.5) * 2.0 * noise_amp;
                    for v in px.iter_mut() {
                        *v += n;
                    }
                    // blizzard-style speckle: sparse bright flecks
                    if noise_amp >= 10.0 && hash01(noise_key, x as u64, y as u64, 2) < 0.04 {
                        px = [235.0, 238.0, 242.0];
                    }
                }

                let o = (y * w + x) * 3;
                for c in 0..3 {
                    rgb[o + c] = px[c].round().clamp(0.0, 255.0) as u8;
                }
            }
        }

        SceneImage::new(
            self.width,
            self.height,
            rgb,
            Provenance {
                config: Some(config.clone()),
                identity,
                domain: DomainTag::Synthetic,
            },
        )
    }
}

struct Geometry {
    wf: f64,
    hf: f64,
    cx: f64,
    width_scale: f64,
    shear: f64,
    sin_t: f64,
    facing: bool,
    skin: [f64; 3],
    hair: [f64; 3],
    upper: [f64; 3],
    lower: [f64; 3],
    accent: [f64; 3],
    accent2: [f64; 3],
    flags: FlagSet,
}

impl Geometry {
    /// Figure color at canvas position, or `None` where background shows.
    /// Tests run in sheared, width-normalized figure space.
    fn figure_pixel(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        let f = &self.flags;
        let hf = self.hf;
        let yn = y / hf;
        // inverse shear (pivot at shoulder line) and width normalization
        let u = (x - self.cx - self.shear * (yn - 0.20)) / self.width_scale;
        let ua = u.abs();

        let head_cy = 0.14 * hf;
        let head_r = 0.060 * hf;
        let du_head = u;
        let dy_head = y - head_cy;

        // hat sits above the head
        if f.hat && ua <= 1.35 * head_r && (head_cy - 1.7 * head_r..=head_cy - 0.8 * head_r).contains(&y) {
            return Some(self.accent);
        }
        // gaze tick marks the facing direction on the head rim
        let tick_u = 0.95 * head_r * self.sin_t;
        let tick_y = head_cy - 0.55 * head_r * if self.facing { 1.0 } else { -1.0 };
        if (u - tick_u).abs() < 0.015 * hf && (y - tick_y).abs() < 0.015 * hf {
            return Some([15.0, 15.0, 15.0]);
        }
        if f.glasses && self.facing && ua <= 0.95 * head_r && (head_cy - 0.15 * head_r..=head_cy + 0.35 * head_r).contains(&y)
        {
            return Some([20.0, 22.0, 26.0]);
        }
        // hair cap over the top half of the head
        if (du_head / (1.18 * head_r)).powi(2) + (dy_head / (1.18 * head_r)).powi(2) <= 1.0 && y < head_cy - 0.15 * head_r
        {
            return Some(self.hair);
        }
        if f.long_hair && (0.55 * head_r..=1.45 * head_r).contains(&ua) && (head_cy..=0.30 * hf).contains(&y) {
            return Some(self.hair);
        }
        if (du_head / head_r).powi(2) + (dy_head / head_r).powi(2) <= 1.0 {
            return Some(self.skin);
        }

        let shoulder_y = 0.22 * hf;
        let waist_y = 0.52 * hf;
        let waist_hw = if f.female { 0.10 } else { 0.125 } * self.wf;
        let shoulder_hw = 0.16 * self.wf;
        let arm_w = 0.045 * self.wf;

        // torso halfwidth tapers linearly shoulder -> waist
        let torso_hw = |yy: f64| -> f64 {
            let t = ((yy - shoulder_y) / (waist_y - shoulder_y)).clamp(0.0, 1.0);
            shoulder_hw + t * (waist_hw - shoulder_hw)
        };

        if f.shoulder_bag && (shoulder_y..=0.54 * hf).contains(&y) {
            // strap runs left shoulder to right hip
            let t = (y - shoulder_y) / (0.54 * hf - shoulder_y);
            let strap_u = -0.6 * shoulder_hw + t * 1.3 * shoulder_hw;
            if (u - strap_u).abs() < 0.016 * self.wf {
                return Some(self.accent2);
            }
        }
        if f.handbag {
            let bag_u = torso_hw(0.54 * hf) + 0.07 * self.wf;
            let r = 0.040 * self.wf;
            if (u - bag_u).powi(2) + (y - 0.55 * hf).powi(2) <= r * r {
                return Some(self.accent);
            }
        }
        if f.backpack && (0.24 * hf..=0.46 * hf).contains(&y) {
            // worn on the side away from the lean
            let side = if self.sin_t > 0.0 { -1.0 } else { 1.0 };
            let hw = torso_hw(y);
            let pack_u = side * (hw + 0.05 * self.wf);
            if (u - pack_u).abs() < 0.05 * self.wf {
                return Some(self.accent2);
            }
        }

        if (shoulder_y..=waist_y).contains(&y) {
            let hw = torso_hw(y);
            if ua <= hw {
                if f.jacket && ua >= 0.62 * hw {
                    return Some(self.accent2);
                }
                return Some(self.upper);
            }
            // arms hug the torso
            if (0.24 * hf..=0.50 * hf).contains(&y) && ua <= hw + arm_w {
                let bare = f.short_sleeves && y > 0.37 * hf;
                return Some(if bare { self.skin } else { self.upper });
            }
        }

        if f.dress && (0.48 * hf..=0.72 * hf).contains(&y) {
            let t = (y - 0.48 * hf) / (0.24 * hf);
            let hem_hw = waist_hw + t * 0.09 * self.wf;
            if ua <= hem_hw {
                return Some(self.upper);
            }
        }

        let leg_top = waist_y;
        let leg_bot = 0.92 * hf;
        if (leg_top..=leg_bot).contains(&y) {
            let leg_c = 0.062 * self.wf;
            let leg_hw = 0.047 * self.wf;
            let on_leg = (ua - leg_c).abs() <= leg_hw;
            if on_leg {
                if f.boots && y >= 0.84 * hf {
                    return Some([30.0, 26.0, 24.0]);
                }
                let cover_end = if f.long_lower {
                    0.90
                } else if f.shorts {
                    0.62
                } else {
                    0.76
                } * hf;
                return Some(if y <= cover_end { self.lower } else { self.skin });
            }
        }
        // shoes
        if !f.boots && (0.92 * hf..=0.955 * hf).contains(&y) && (ua - 0.062 * self.wf).abs() <= 0.055 * self.wf {
            return Some([45.0, 42.0, 40.0]);
        }

        None
    }
}

fn background_pixel(family: usize, x: usize, y: usize, wf: f64, hf: f64, key: u64) -> [f64; 3] {
    let xf = x as f64;
    let yf = y as f64;
    let n = (hash01(key, x as u64, y as u64, 0) - 0.5) * 2.0;
    // low-frequency blotch shared by the organic families
    let blotch = (hash01(key, (x / 8) as u64, (y / 8) as u64, 3) - 0.5) * 2.0;
    let mut px = match family {
        0 => {
            // asphalt with a curb line
            let mut p = [95.0 + 10.0 * n, 95.0 + 10.0 * n, 100.0 + 10.0 * n];
            if (yf - 0.78 * hf).abs() < 0.015 * hf {
                p = [185.0, 180.0, 75.0];
            }
            p
        }
        1 => {
            // mall tiling
            if x % 12 == 0 || y % 12 == 0 {
                [160.0, 150.0, 140.0]
            } else {
                [205.0 + 6.0 * n, 195.0 + 6.0 * n, 185.0 + 6.0 * n]
            }
        }
        2 => {
            // brick rows with offset courses
            let row = y / 7;
            let off = if row % 2 == 0 { 0 } else { 7 };
            if y % 7 == 0 || (x + off) % 14 == 0 {
                [200.0, 195.0, 190.0]
            } else {
                [150.0 + 12.0 * blotch, 75.0 + 8.0 * blotch, 60.0 + 6.0 * blotch]
            }
        }
        3 => [70.0 + 25.0 * blotch, 130.0 + 25.0 * blotch, 65.0 + 18.0 * blotch],
        4 => {
            // slate gradient with a ridge
            let t = yf / hf;
            let mut p = [
                120.0 - 40.0 * t + 8.0 * n,
                130.0 - 45.0 * t + 8.0 * n,
                150.0 - 50.0 * t + 8.0 * n,
            ];
            if ((xf + yf * 0.6) / wf).fract() < 0.04 {
                p = [70.0, 72.0, 80.0];
            }
            p
        }
        5 => {
            // sky over sand with a wavy shoreline
            let boundary = 0.45 * hf + 0.02 * hf * ((xf / wf) * 12.566_370_614_359_172).sin();
            if yf < boundary {
                [150.0 + 5.0 * n, 190.0 + 5.0 * n, 230.0 + 5.0 * n]
            } else {
                [210.0 + 9.0 * n, 185.0 + 9.0 * n, 140.0 + 9.0 * n]
            }
        }
        6 => {
            if (x / 8 + y / 8) % 2 == 0 {
                [180.0 + 5.0 * n, 170.0 + 5.0 * n, 155.0 + 5.0 * n]
            } else {
                [140.0 + 5.0 * n, 130.0 + 5.0 * n, 120.0 + 5.0 * n]
            }
        }
        7 => {
            // forest streaks and trunks
            let streak = (hash01(key, (x / 3) as u64, 0, 4) - 0.5) * 40.0;
            if x % 21 < 3 {
                [70.0, 50.0, 35.0]
            } else {
                [40.0 + streak * 0.4, 80.0 + streak, 45.0 + streak * 0.4]
            }
        }
        _ => {
            // station pillars and a signage band
            if x % 16 < 3 {
                [90.0, 95.0, 105.0]
            } else if (yf - 0.25 * hf).abs() < 0.02 * hf {
                [175.0, 170.0, 60.0]
            } else {
                [140.0 + 7.0 * n, 145.0 + 7.0 * n, 155.0 + 7.0 * n]
            }
        }
    };
    for v in px.iter_mut() {
        *v = v.clamp(0.0, 255.0);
    }
    px
}
