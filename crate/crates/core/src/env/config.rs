use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which family of scenes a domain is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainClass {
    Train,
    /// Unseen scenes from the training distribution.
    Interpolation,
    /// Training scene plus 4 distractors coloured from the held-out palette.
    Ext4,
    /// Training scene plus 8 distractors coloured from the held-out palette.
    Ext8,
}

impl DomainClass {
    pub const ALL: [DomainClass; 4] = [
        DomainClass::Train,
        DomainClass::Interpolation,
        DomainClass::Ext4,
        DomainClass::Ext8,
    ];

    pub fn extra_distractors(self) -> usize {
        match self {
            DomainClass::Train | DomainClass::Interpolation => 0,
            DomainClass::Ext4 => 4,
            DomainClass::Ext8 => 8,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DomainClass::Train => "train",
            DomainClass::Interpolation => "interp",
            DomainClass::Ext4 => "ext4",
            DomainClass::Ext8 => "ext8",
        }
    }

    fn tag(self) -> u64 {
        match self {
            DomainClass::Train => 0,
            DomainClass::Interpolation => 1,
            DomainClass::Ext4 => 2,
            DomainClass::Ext8 => 3,
        }
    }
}

impl std::str::FromStr for DomainClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(DomainClass::Train),
            "interp" | "interpolation" => Ok(DomainClass::Interpolation),
            "ext4" | "ext-4" => Ok(DomainClass::Ext4),
            "ext8" | "ext-8" => Ok(DomainClass::Ext8),
            other => Err(Error::Config(format!("unknown domain class {other:?}"))),
        }
    }
}

/// Hue band an object colour is drawn from. The bands are disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Palette {
    Training,
    HeldOut,
}

impl Palette {
    /// Hue range in degrees. The held-out band is the training band rotated
    /// by 180 degrees.
    pub fn hue_range(self) -> (f64, f64) {
        match self {
            Palette::Training => (0.0, 170.0),
            Palette::HeldOut => (180.0, 350.0),
        }
    }

    pub fn contains_hue(self, hue: f64) -> bool {
        let (lo, hi) = self.hue_range();
        hue >= lo && hue <= hi
    }
}

/// Everything needed to generate NavWorld scenes for one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub class: DomainClass,
    /// Distractors coloured from the training palette.
    pub distractors: usize,
    /// Additional distractors coloured from the held-out palette.
    pub extra_distractors: usize,
    /// Image side length in pixels.
    pub resolution: usize,
    /// Success radius around the target centre, world units.
    pub goal_radius: f64,
    /// Per-axis velocity bound, world units per step.
    pub max_speed: f64,
    pub max_steps: usize,
    pub agent_radius: f64,
    /// Circumradius range for the target and distractors.
    pub size_min: f64,
    pub size_max: f64,
    /// Brightness (HSV value) range of the background colour.
    pub background_value_min: f64,
    pub background_value_max: f64,
    pub seed: u64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            class: DomainClass::Train,
            distractors: 3,
            extra_distractors: 0,
            resolution: 60,
            goal_radius: 0.12,
            max_speed: 0.15,
            max_steps: 20,
            agent_radius: 0.15,
            size_min: 0.15,
            size_max: 0.22,
            background_value_min: 0.0,
            background_value_max: 0.35,
            seed: 0,
        }
    }
}

impl DomainConfig {
    /// Training configuration at the given image resolution.
    pub fn training(resolution: usize) -> Self {
        Self {
            resolution,
            ..Self::default()
        }
    }

    pub fn object_count(&self) -> usize {
        2 + self.distractors + self.extra_distractors
    }

    pub fn state_dim(&self) -> usize {
        2 * self.object_count()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("domain config: {m}")));
        if self.resolution < 4 {
            return bad("resolution must be at least 4");
        }
        if self.goal_radius <= 0.0 || self.max_speed <= 0.0 || self.max_steps == 0 {
            return bad("goal radius, speed and episode length must be positive");
        }
        if !(self.size_min > 0.0 && self.size_min <= self.size_max && self.size_max < 1.0) {
            return bad("object size range must satisfy 0 < min <= max < 1");
        }
        if self.agent_radius <= 0.0 || self.agent_radius >= 1.0 {
            return bad("agent radius must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.background_value_min)
            || !(0.0..=1.0).contains(&self.background_value_max)
            || self.background_value_min > self.background_value_max
        {
            return bad("background value range must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("domain config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Number of domains in each held-out evaluation set.
pub const DOMAIN_SET_SIZE: usize = 100;

/// Domain `index` of `class`, derived from the training configuration `base`.
///
/// Interpolation domains keep the training distractor count and palette with
/// fresh seeds; extrapolation domains add 4 or 8 held-out-palette distractors.
pub fn make_domain(base: &DomainConfig, class: DomainClass, index: usize) -> Result<DomainConfig> {
    if class != DomainClass::Train && index >= DOMAIN_SET_SIZE {
        return Err(Error::Config(format!(
            "domain index {index} out of range for {} (size {DOMAIN_SET_SIZE})",
            class.label()
        )));
    }
    Ok(DomainConfig {
        class,
        extra_distractors: class.extra_distractors(),
        seed: splitmix64(base.seed ^ splitmix64(class.tag() << 32 | index as u64)),
        ..base.clone()
    })
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
