use crate::error::{Error, Result};

/// Per-point input channels: normals (3), colors (3), height (1), coords (3).
pub const INPUT_CHANNELS: usize = 10;
pub const NUM_BUILDING_TYPES: usize = 15;
/// Segmentation logits cover part labels 1..=31; label 0 is never predicted.
pub const NUM_PART_CLASSES: usize = 31;

/// Which heads sit on top of the shared encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Classification,
    Segmentation,
    Multitask,
    /// Encoder and global pooling only (contrastive pretraining).
    Backbone,
}

impl HeadKind {
    pub fn has_classifier(self) -> bool {
        matches!(self, HeadKind::Classification | HeadKind::Multitask)
    }

    pub fn has_decoder(self) -> bool {
        matches!(self, HeadKind::Segmentation | HeadKind::Multitask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadiusPolicy {
    /// Stage `t` (from 0) uses `r * 2^t`.
    DoublePerStage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub stride: usize,
    pub radius: f64,
    pub neighbors: usize,
    pub blocks: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub stem_width: usize,
    pub stages: Vec<StageConfig>,
    pub expansion: usize,
    pub head: HeadKind,
    pub num_classes: usize,
    pub num_parts: usize,
    pub fc_widths: Vec<usize>,
    pub dropout: f64,
    pub interp_neighbors: usize,
    pub radius_policy: RadiusPolicy,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

/// Stride profile of a preset: classification models downsample gently,
/// segmentation models aggressively.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrideProfile {
    Cls,
    Seg,
}

struct Preset {
    stem: usize,
    widths: &'static [usize],
    blocks: &'static [usize],
    neighbors: usize,
    cls_stride: usize,
    seg_stride: usize,
}

const TINY: Preset = Preset { stem: 16, widths: &[16, 32], blocks: &[1, 1], neighbors: 16, cls_stride: 4, seg_stride: 4 };
const S: Preset = Preset { stem: 32, widths: &[64, 128, 256, 512], blocks: &[1, 1, 1, 1], neighbors: 32, cls_stride: 2, seg_stride: 4 };
const XL: Preset = Preset { stem: 64, widths: &[128, 256, 512, 1024], blocks: &[3, 6, 3, 3], neighbors: 32, cls_stride: 2, seg_stride: 4 };

pub const PRESET_NAMES: [&str; 3] = ["tiny", "s", "xl"];

impl ModelConfig {
    /// Named preset with stage radii `radius, 2 radius, 4 radius, ...`.
    /// Multitask and segmentation models use the segmentation stride profile.
    pub fn preset(name: &str, head: HeadKind, radius: f64) -> Result<Self> {
        let p = match name {
            "tiny" => &TINY,
            "s" => &S,
            "xl" => &XL,
            _ => return Err(Error::invalid(format!("unknown preset {name:?}; expected one of tiny, s, xl"))),
        };
        let profile = if head.has_decoder() { StrideProfile::Seg } else { StrideProfile::Cls };
        let stride = match profile {
            StrideProfile::Cls => p.cls_stride,
            StrideProfile::Seg => p.seg_stride,
        };
        let stages = p
            .widths
            .iter()
            .zip(p.blocks)
            .map(|(&width, &blocks)| StageConfig { stride, radius, neighbors: p.neighbors, blocks, width })
            .collect();
        let mut cfg = ModelConfig {
            input_channels: INPUT_CHANNELS,
            stem_width: p.stem,
            stages,
            expansion: 4,
            head,
            num_classes: NUM_BUILDING_TYPES,
            num_parts: NUM_PART_CLASSES,
            fc_widths: vec![512, 256],
            dropout: 0.5,
            interp_neighbors: 3,
            radius_policy: RadiusPolicy::DoublePerStage,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        };
        cfg.set_base_radius(radius)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reassigns stage radii from a new base radius.
    pub fn set_base_radius(&mut self, radius: f64) -> Result<()> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!("radius must be positive, got {radius}")));
        }
        match self.radius_policy {
            RadiusPolicy::DoublePerStage => {
                for (t, s) in self.stages.iter_mut().enumerate() {
                    s.radius = radius * f64::powi(2.0, t as i32);
                }
            }
        }
        Ok(())
    }

    pub fn radii(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.radius).collect()
    }

    /// Output width of the encoder level `t` (0 = stem).
    pub fn level_width(&self, t: usize) -> usize {
        if t == 0 {
            self.stem_width
        } else {
            self.stages[t - 1].width
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_channels == 0 || self.stem_width == 0 || self.expansion == 0 {
            return bad("input_channels, stem_width and expansion must be positive".into());
        }
        if self.stages.is_empty() {
            return bad("at least one encoder stage is required".into());
        }
        let mut prev = 0.0;
        for (t, s) in self.stages.iter().enumerate() {
            if s.stride == 0 || s.neighbors == 0 || s.width == 0 {
                return bad(format!("stage {t}: stride, neighbors and width must be positive"));
            }
            if !(s.radius > 0.0) || s.radius < prev {
                return bad(format!("stage {t}: radii must be positive and non-decreasing"));
            }
            prev = s.radius;
        }
        if self.fc_widths.contains(&0) || self.num_classes == 0 || self.num_parts == 0 || self.interp_neighbors == 0 {
            return bad("head widths and class counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}
