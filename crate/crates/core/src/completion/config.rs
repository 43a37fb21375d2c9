//! Pipeline constants and their flat `key = value` file format.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{BackgroundFill, Image};
use crate::mask::{Connectivity, StructuringElement};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    /// Termination threshold as a fraction of canvas pixels.
    pub epsilon_frac: f64,
    pub max_iterations: usize,
    pub morph_radius: usize,
    pub boundary_radius: usize,
    pub band_width: usize,
    pub max_boundary_rounds: usize,
    pub transition_width: usize,
    pub min_bg_area_frac: f64,
    pub background: BackgroundFill,
    pub keep_expanded_canvas: bool,
    pub self_overlap_iou: f64,
    pub inpaint_seed: u64,
    /// Max per-channel deviation from a solid fill still counted as background.
    pub amodal_tolerance: u8,
    /// Re-segment each inpainted canvas with the grounder instead of
    /// thresholding against the fill.
    pub amodal_from_provider: bool,
    /// `{descriptor}` is replaced by the selected prompt.
    pub prompt_template: String,
    pub connectivity: Connectivity,
    /// Bound on concurrent provider calls within one run.
    pub parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            epsilon_frac: 0.001,
            max_iterations: 3,
            morph_radius: 2,
            boundary_radius: 8,
            band_width: 8,
            max_boundary_rounds: 4,
            transition_width: 7,
            min_bg_area_frac: 0.005,
            background: BackgroundFill::default(),
            keep_expanded_canvas: true,
            self_overlap_iou: 0.9,
            inpaint_seed: 0,
            amodal_tolerance: 12,
            amodal_from_provider: false,
            prompt_template: "a complete photo of {descriptor}".into(),
            connectivity: Connectivity::Eight,
            parallelism: 4,
        }
    }
}

pub const KEYS: [&str; 17] = [
    "epsilon_frac",
    "max_iterations",
    "morph_radius",
    "boundary_radius",
    "band_width",
    "max_boundary_rounds",
    "transition_width",
    "min_bg_area_frac",
    "background",
    "keep_expanded_canvas",
    "self_overlap_iou",
    "inpaint_seed",
    "amodal_tolerance",
    "amodal_from_provider",
    "prompt_template",
    "connectivity",
    "parallelism",
];

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| invalid(format!("{key}: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(invalid(format!("{key}: expected true/false, got `{v}`"))),
    }
}

/// `solid:R,G,B`, bare `R,G,B`, or `image:PATH`.
pub fn parse_background(v: &str) -> Result<BackgroundFill> {
    if let Some(path) = v.strip_prefix("image:") {
        return Ok(BackgroundFill::Image(Image::load_png(path.trim())?));
    }
    let rgb = v.strip_prefix("solid:").unwrap_or(v);
    let parts: Vec<&str> = rgb.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(invalid(format!("background: expected R,G,B, got `{v}`")));
    }
    let mut c = [0u8; 3];
    for (slot, p) in c.iter_mut().zip(parts) {
        *slot = num("background", p)?;
    }
    Ok(BackgroundFill::Solid(c))
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_frac > 0.0 && self.epsilon_frac < 1.0) {
            return Err(invalid(format!("epsilon_frac must lie in (0,1), got {}", self.epsilon_frac)));
        }
        if self.max_iterations < 1 {
            return Err(invalid("max_iterations must be >= 1"));
        }
        for (k, v) in [
            ("morph_radius", self.morph_radius),
            ("boundary_radius", self.boundary_radius),
            ("band_width", self.band_width),
            ("max_boundary_rounds", self.max_boundary_rounds),
            ("transition_width", self.transition_width),
        ] {
            if v < 1 {
                return Err(invalid(format!("{k} must be >= 1")));
            }
        }
        if !(0.0..1.0).contains(&self.min_bg_area_frac) {
            return Err(invalid("min_bg_area_frac must lie in [0,1)"));
        }
        if !(self.self_overlap_iou > 0.0 && self.self_overlap_iou <= 1.0) {
            return Err(invalid("self_overlap_iou must lie in (0,1]"));
        }
        if !self.prompt_template.contains("{descriptor}") {
            return Err(invalid("prompt_template must contain {descriptor}"));
        }
        Ok(())
    }

    /// Absolute termination threshold for a canvas of `pixels` pixels.
    pub fn epsilon_pixels(&self, pixels: usize) -> usize {
        (self.epsilon_frac * pixels as f64).ceil() as usize
    }

    pub fn min_bg_area(&self, pixels: usize) -> usize {
        (self.min_bg_area_frac * pixels as f64).ceil() as usize
    }

    pub fn morph_se(&self) -> StructuringElement {
        StructuringElement::square(self.morph_radius)
    }

    pub fn boundary_se(&self) -> StructuringElement {
        StructuringElement::square(self.boundary_radius)
    }

    pub fn render_prompt(&self, descriptor: &str) -> String {
        self.prompt_template.replace("{descriptor}", descriptor)
    }

    /// Set one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "epsilon_frac" => self.epsilon_frac = num(key, v)?,
            "max_iterations" => self.max_iterations = num(key, v)?,
            "morph_radius" => self.morph_radius = num(key, v)?,
            "boundary_radius" => self.boundary_radius = num(key, v)?,
            "band_width" => self.band_width = num(key, v)?,
            "max_boundary_rounds" => self.max_boundary_rounds = num(key, v)?,
            "transition_width" => self.transition_width = num(key, v)?,
            "min_bg_area_frac" => self.min_bg_area_frac = num(key, v)?,
            "background" => self.background = parse_background(v)?,
            "keep_expanded_canvas" => self.keep_expanded_canvas = parse_bool(key, v)?,
            "self_overlap_iou" => self.self_overlap_iou = num(key, v)?,
            "inpaint_seed" => self.inpaint_seed = num(key, v)?,
            "amodal_tolerance" => self.amodal_tolerance = num(key, v)?,
            "amodal_from_provider" => self.amodal_from_provider = parse_bool(key, v)?,
            "prompt_template" => self.prompt_template = v.to_string(),
            "connectivity" => {
                self.connectivity = match v {
                    "four" | "4" => Connectivity::Four,
                    "eight" | "8" => Connectivity::Eight,
                    _ => return Err(invalid(format!("connectivity: expected four|eight, got `{v}`"))),
                }
            }
            "parallelism" => self.parallelism = num(key, v)?,
            other => return Err(invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v).map_err(|e| invalid(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        cfg.apply_kv(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }

    /// Inverse of [`PipelineConfig::from_kv`] for solid fills.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let conn = match self.connectivity {
            Connectivity::Four => "four",
            Connectivity::Eight => "eight",
        };
        let _ = writeln!(s, "epsilon_frac = {}", self.epsilon_frac);
        let _ = writeln!(s, "max_iterations = {}", self.max_iterations);
        let _ = writeln!(s, "morph_radius = {}", self.morph_radius);
        let _ = writeln!(s, "boundary_radius = {}", self.boundary_radius);
        let _ = writeln!(s, "band_width = {}", self.band_width);
        let _ = writeln!(s, "max_boundary_rounds = {}", self.max_boundary_rounds);
        let _ = writeln!(s, "transition_width = {}", self.transition_width);
        let _ = writeln!(s, "min_bg_area_frac = {}", self.min_bg_area_frac);
        let _ = writeln!(s, "background = {}", self.background.describe());
        let _ = writeln!(s, "keep_expanded_canvas = {}", self.keep_expanded_canvas);
        let _ = writeln!(s, "self_overlap_iou = {}", self.self_overlap_iou);
        let _ = writeln!(s, "inpaint_seed = {}", self.inpaint_seed);
        let _ = writeln!(s, "amodal_tolerance = {}", self.amodal_tolerance);
        let _ = writeln!(s, "amodal_from_provider = {}", self.amodal_from_provider);
        let _ = writeln!(s, "prompt_template = {}", self.prompt_template);
        let _ = writeln!(s, "connectivity = {conn}");
        let _ = writeln!(s, "parallelism = {}", self.parallelism);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.epsilon_pixels(256 * 256), 66);
        assert_eq!(c.min_bg_area(256 * 256), 328);
        assert_eq!(c.render_prompt("book"), "a complete photo of book");
    }

    #[test]
    fn kv_roundtrip_and_overrides() {
        let mut c = PipelineConfig::default();
        c.max_iterations = 5;
        c.background = BackgroundFill::Solid([1, 2, 3]);
        c.connectivity = Connectivity::Four;
        c.keep_expanded_canvas = false;
        assert_eq!(PipelineConfig::from_kv(&c.to_kv()).unwrap(), c);
        let parsed = PipelineConfig::from_kv("# comment\n\nmax_iterations = 7\nbackground = 10, 20, 30\n").unwrap();
        assert_eq!(parsed.max_iterations, 7);
        assert_eq!(parsed.background, BackgroundFill::Solid([10, 20, 30]));
        assert_eq!(parsed.morph_radius, 2);
        assert_eq!(KEYS.len(), c.to_kv().lines().count());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PipelineConfig::from_kv("nonsense = 1").is_err());
        assert!(PipelineConfig::from_kv("max_iterations").is_err());
        assert!(PipelineConfig::from_kv("max_iterations = 0").is_err());
        assert!(PipelineConfig::from_kv("epsilon_frac = 1.5").is_err());
        assert!(PipelineConfig::from_kv("morph_radius = -1").is_err());
        assert!(PipelineConfig::from_kv("background = 1,2").is_err());
        assert!(PipelineConfig::from_kv("prompt_template = no placeholder").is_err());
    }
}
