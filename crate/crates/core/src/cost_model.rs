//! Analytic resource costs and hardware feasibility.
//!
//! Each residual block is a bottleneck: 1x1 reduce to `mid` channels, 3x3
//! at `mid`, 1x1 expand back. Parameter counts are bias-free and exclude
//! normalization and shortcut projections. A block maps to three primal
//! layers on the accelerator; the backbone adds one stem layer and every
//! detection output adds one more.

use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::ModuleKind;
use crate::search_space::{Genome, HeadRole, SearchSpace};

pub const MAX_CHANNELS: &str = "max_channels";
pub const MAX_PRIMAL_LAYERS: &str = "max_primal_layers";
pub const MAX_ACTIVATION_BYTES: &str = "max_activation_bytes";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    pub max_channels: u64,
    pub max_primal_layers: u64,
    pub max_activation_bytes: u64,
    pub activation_bytes_per_element: u64,
    /// Exempts first-stage feature maps from the activation limit.
    pub streaming_mode: bool,
}

impl HardwareProfile {
    /// MAX78002 CNN accelerator limits: 2048 channels per layer, 128 primal
    /// layers, 80 KiB of activation memory, 8-bit activations.
    pub fn max78002() -> Self {
        HardwareProfile {
            max_channels: 2048,
            max_primal_layers: 128,
            max_activation_bytes: 81_920,
            activation_bytes_per_element: 1,
            streaming_mode: true,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "max78002" => Some(Self::max78002()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_channels == 0
            || self.max_primal_layers == 0
            || self.max_activation_bytes == 0
            || self.activation_bytes_per_element == 0
        {
            return Err(Error::InvalidHardware("all limits must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CostVector {
    pub params: u64,
    #[serde(rename = "act_bytes", alias = "activation_bytes")]
    pub activation_bytes: u64,
    #[serde(rename = "layers", alias = "primal_layers")]
    pub primal_layers: u64,
}

impl CostVector {
    pub fn new(params: u64, activation_bytes: u64, primal_layers: u64) -> Self {
        CostVector {
            params,
            activation_bytes,
            primal_layers,
        }
    }

    /// Componentwise `self <= limit`.
    pub fn fits_within(&self, limit: &CostVector) -> bool {
        self.params <= limit.params
            && self.activation_bytes <= limit.activation_bytes
            && self.primal_layers <= limit.primal_layers
    }
}

impl Add for CostVector {
    type Output = CostVector;

    fn add(self, rhs: CostVector) -> CostVector {
        CostVector {
            params: self.params + rhs.params,
            activation_bytes: self.activation_bytes + rhs.activation_bytes,
            primal_layers: self.primal_layers + rhs.primal_layers,
        }
    }
}

impl fmt::Display for CostVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "params={} act_bytes={} layers={}",
            self.params, self.activation_bytes, self.primal_layers
        )
    }
}

/// Total and per-module budgets. Requires `backbone + head <= total`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostProfile {
    pub tau_total: CostVector,
    pub tau_backbone: CostVector,
    pub tau_head: CostVector,
}

impl CostProfile {
    pub fn validate(&self) -> Result<()> {
        let (b, h, t) = (&self.tau_backbone, &self.tau_head, &self.tau_total);
        let checks = [
            ("params", b.params, h.params, t.params),
            ("act_bytes", b.activation_bytes, h.activation_bytes, t.activation_bytes),
            ("layers", b.primal_layers, h.primal_layers, t.primal_layers),
        ];
        for (component, backbone, head, total) in checks {
            if backbone.saturating_add(head) > total {
                return Err(Error::BudgetInconsistency {
                    component,
                    backbone,
                    head,
                    total,
                });
            }
        }
        Ok(())
    }

    /// Budgets that never bind.
    pub fn unbounded() -> Self {
        let half = CostVector::new(u64::MAX / 2, u64::MAX / 2, u64::MAX / 2);
        CostProfile {
            tau_total: half + half,
            tau_backbone: half,
            tau_head: half,
        }
    }

    pub fn for_module(&self, module: ModuleKind) -> &CostVector {
        match module {
            ModuleKind::Backbone => &self.tau_backbone,
            ModuleKind::Head => &self.tau_head,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    pub limit: u64,
    pub measured: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub backbone: CostVector,
    pub head: CostVector,
    pub total: CostVector,
    /// Widest layer (input or output channels) anywhere in the network.
    pub max_channels: u64,
    /// Largest single feature map subject to the activation limit.
    pub peak_activation_bytes: u64,
    pub violations: Vec<Violation>,
}

impl CostReport {
    pub fn module(&self, module: ModuleKind) -> &CostVector {
        match module {
            ModuleKind::Backbone => &self.backbone,
            ModuleKind::Head => &self.head,
        }
    }

    pub fn violates(&self, constraint: &str) -> bool {
        self.violations.iter().any(|v| v.constraint == constraint)
    }
}

/// Which budget [`is_feasible`] checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Backbone,
    Head,
    Both,
}

impl From<ModuleKind> for Scope {
    fn from(m: ModuleKind) -> Self {
        match m {
            ModuleKind::Backbone => Scope::Backbone,
            ModuleKind::Head => Scope::Head,
        }
    }
}

pub fn bottleneck_mid(in_channels: u64, expansion: f64) -> u64 {
    ((in_channels as f64 * expansion).round() as u64).max(1)
}

pub fn block_params(in_channels: u64, expansion: f64) -> u64 {
    let mid = bottleneck_mid(in_channels, expansion);
    in_channels * mid + 9 * mid * mid + mid * in_channels
}

pub fn scaled_channels(base: u32, multiplier: f64) -> u64 {
    (base as f64 * multiplier).round() as u64
}

/// Spatial side of stage `s`: halved at every stage transition.
pub fn stage_side(input_resolution: u32, stage: usize) -> u64 {
    let shift = stage.min(63) as u32;
    (input_resolution as u64 >> shift).max(1)
}

pub fn genome_cost(genome: &Genome, space: &SearchSpace, hw: &HardwareProfile) -> CostReport {
    let bpe = hw.activation_bytes_per_element;
    let mut max_channels = 0u64;

    let mut backbone = CostVector::new(0, 0, 1); // stem
    let mut last_side = stage_side(space.input_resolution, 0);
    for (s, stage) in genome.backbone.iter().enumerate() {
        let channels = scaled_channels(space.stage_base_widths[s], space.width_multipliers[stage.width_index]);
        max_channels = max_channels.max(channels);
        for &e in &stage.expansion_indices {
            backbone.params += block_params(channels, space.expansion_ratios[e]);
        }
        backbone.primal_layers += 3 * stage.depth as u64;
        let side = stage_side(space.input_resolution, s);
        last_side = side;
        let exempt = hw.streaming_mode && s == 0;
        if !exempt {
            backbone.activation_bytes = backbone.activation_bytes.max(side * side * channels * bpe);
        }
    }

    let mut head = CostVector::default();
    for (slot, gene) in space.head_blocks.iter().zip(&genome.head) {
        let channels = scaled_channels(slot.base_width, space.width_multipliers[gene.width_index]);
        max_channels = max_channels.max(channels);
        head.params += block_params(channels, space.expansion_ratios[gene.expansion_index]);
        head.primal_layers += 3;
        if slot.role == HeadRole::YoloHead {
            head.primal_layers += 1;
        }
        // head maps live at the deepest backbone resolution
        head.activation_bytes = head.activation_bytes.max(last_side * last_side * channels * bpe);
    }

    let total = backbone + head;
    let peak_activation_bytes = backbone.activation_bytes.max(head.activation_bytes);

    let mut violations = Vec::new();
    if max_channels > hw.max_channels {
        violations.push(Violation {
            constraint: MAX_CHANNELS.into(),
            limit: hw.max_channels,
            measured: max_channels,
        });
    }
    if total.primal_layers > hw.max_primal_layers {
        violations.push(Violation {
            constraint: MAX_PRIMAL_LAYERS.into(),
            limit: hw.max_primal_layers,
            measured: total.primal_layers,
        });
    }
    if peak_activation_bytes > hw.max_activation_bytes {
        violations.push(Violation {
            constraint: MAX_ACTIVATION_BYTES.into(),
            limit: hw.max_activation_bytes,
            measured: peak_activation_bytes,
        });
    }

    CostReport {
        backbone,
        head,
        total,
        max_channels,
        peak_activation_bytes,
        violations,
    }
}

pub fn is_feasible(report: &CostReport, profile: &CostProfile, scope: Scope) -> bool {
    if !report.violations.is_empty() {
        return false;
    }
    match scope {
        Scope::Backbone => report.backbone.fits_within(&profile.tau_backbone),
        Scope::Head => report.head.fits_within(&profile.tau_head),
        Scope::Both => report.total.fits_within(&profile.tau_total),
    }
}
