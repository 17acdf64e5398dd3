//! Architecture genome, its legal value sets, feature encoding, and the
//! canonical text form used for logging and deduplication.
//!
//! The backbone is a sequence of stages. Each stage has a depth (number of
//! active residual blocks), one width multiplier shared by all of its
//! blocks, and one expansion ratio per active block. The head is a fixed
//! list of residual blocks (neck and detection head) whose width and
//! expansion are searched but whose count is not.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::ModuleKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadRole {
    Fpn,
    Pan,
    YoloHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadBlockSlot {
    pub slot_id: usize,
    pub role: HeadRole,
    pub base_width: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub num_stages: usize,
    pub depth_min: usize,
    pub depth_max: usize,
    pub width_multipliers: Vec<f64>,
    pub expansion_ratios: Vec<f64>,
    pub stage_base_widths: Vec<u32>,
    pub head_blocks: Vec<HeadBlockSlot>,
    pub input_resolution: u32,
}

impl Default for SearchSpace {
    fn default() -> Self {
        default_space()
    }
}

/// Depth range 2..=8, W = {0.8, 1.0, 1.25, 1.5}, E = {0.20, 0.25, 0.35,
/// 0.45, 0.55}. The skeleton (4 stages with base widths 64/128/256/512,
/// five head blocks, 32 px input) is a convention and can be overridden.
pub fn default_space() -> SearchSpace {
    SearchSpace {
        num_stages: 4,
        depth_min: 2,
        depth_max: 8,
        width_multipliers: vec![0.8, 1.0, 1.25, 1.5],
        expansion_ratios: vec![0.20, 0.25, 0.35, 0.45, 0.55],
        stage_base_widths: vec![64, 128, 256, 512],
        head_blocks: vec![
            HeadBlockSlot { slot_id: 0, role: HeadRole::Fpn, base_width: 256 },
            HeadBlockSlot { slot_id: 1, role: HeadRole::Fpn, base_width: 128 },
            HeadBlockSlot { slot_id: 2, role: HeadRole::Pan, base_width: 128 },
            HeadBlockSlot { slot_id: 3, role: HeadRole::Pan, base_width: 256 },
            HeadBlockSlot { slot_id: 4, role: HeadRole::YoloHead, base_width: 256 },
        ],
        input_resolution: 32,
    }
}

fn strictly_increasing(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite() && *v > 0.0) && values.windows(2).all(|w| w[0] < w[1])
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpace(msg));
        if self.depth_min < 1 || self.depth_min > self.depth_max {
            return fail(format!(
                "depth range [{}, {}] must satisfy 1 <= min <= max",
                self.depth_min, self.depth_max
            ));
        }
        if self.width_multipliers.is_empty() || !strictly_increasing(&self.width_multipliers) {
            return fail("width_multipliers must be non-empty, positive, strictly increasing".into());
        }
        if self.expansion_ratios.is_empty() || !strictly_increasing(&self.expansion_ratios) {
            return fail("expansion_ratios must be non-empty, positive, strictly increasing".into());
        }
        if self.stage_base_widths.len() != self.num_stages {
            return fail(format!(
                "{} stage base widths for {} stages",
                self.stage_base_widths.len(),
                self.num_stages
            ));
        }
        if self.stage_base_widths.iter().any(|&w| w == 0) {
            return fail("stage base widths must be > 0".into());
        }
        let mut ids: Vec<usize> = self.head_blocks.iter().map(|s| s.slot_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return fail("head slot ids must be unique".into());
        }
        if self.head_blocks.iter().any(|s| s.base_width == 0) {
            return fail("head base widths must be > 0".into());
        }
        if self.input_resolution == 0 {
            return fail("input_resolution must be > 0".into());
        }
        Ok(())
    }

    /// Length of [`encode`] output; depends only on the space.
    pub fn feature_len(&self) -> usize {
        self.num_stages * (3 + self.width_multipliers.len()) + self.head_blocks.len() * 2
    }

    /// Number of distinct genomes, saturating at `u128::MAX`.
    pub fn cardinality(&self) -> u128 {
        let e = self.expansion_ratios.len() as u128;
        let w = self.width_multipliers.len() as u128;
        let per_stage: u128 = (self.depth_min..=self.depth_max)
            .map(|d| e.saturating_pow(d as u32))
            .fold(0u128, |acc, x| acc.saturating_add(x))
            .saturating_mul(w);
        let per_slot = w * e;
        let backbone = (0..self.num_stages).fold(1u128, |acc, _| acc.saturating_mul(per_stage));
        let head = (0..self.head_blocks.len()).fold(1u128, |acc, _| acc.saturating_mul(per_slot));
        backbone.saturating_mul(head)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StageGene {
    pub depth: usize,
    pub width_index: usize,
    /// One entry per active block; inactive blocks are not stored.
    pub expansion_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadGene {
    pub width_index: usize,
    pub expansion_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Genome {
    pub backbone: Vec<StageGene>,
    pub head: Vec<HeadGene>,
}

impl Genome {
    /// The smallest genome: minimum depth and the first width/expansion
    /// choice everywhere.
    pub fn minimal(space: &SearchSpace) -> Self {
        Genome {
            backbone: (0..space.num_stages)
                .map(|_| StageGene {
                    depth: space.depth_min,
                    width_index: 0,
                    expansion_indices: vec![0; space.depth_min],
                })
                .collect(),
            head: vec![HeadGene { width_index: 0, expansion_index: 0 }; space.head_blocks.len()],
        }
    }

    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        if self.backbone.len() != space.num_stages {
            return Err(Error::GenomeMismatch(format!(
                "{} stages, space has {}",
                self.backbone.len(),
                space.num_stages
            )));
        }
        if self.head.len() != space.head_blocks.len() {
            return Err(Error::GenomeMismatch(format!(
                "{} head genes, space has {} slots",
                self.head.len(),
                space.head_blocks.len()
            )));
        }
        let nw = space.width_multipliers.len();
        let ne = space.expansion_ratios.len();
        for (s, stage) in self.backbone.iter().enumerate() {
            if stage.depth < space.depth_min || stage.depth > space.depth_max {
                return Err(Error::GenomeMismatch(format!(
                    "stage.{s}.depth={} outside [{}, {}]",
                    stage.depth, space.depth_min, space.depth_max
                )));
            }
            if stage.expansion_indices.len() != stage.depth {
                return Err(Error::GenomeMismatch(format!(
                    "stage.{s}.exp has {} entries for depth {}",
                    stage.expansion_indices.len(),
                    stage.depth
                )));
            }
            check_index(format!("stage.{s}.width"), stage.width_index, nw)?;
            for &e in &stage.expansion_indices {
                check_index(format!("stage.{s}.exp"), e, ne)?;
            }
        }
        for (h, gene) in self.head.iter().enumerate() {
            check_index(format!("head.{h}.width"), gene.width_index, nw)?;
            check_index(format!("head.{h}.exp"), gene.expansion_index, ne)?;
        }
        Ok(())
    }

    /// Copy of `self` whose `module` genes are taken from `donor`.
    pub fn with_module_from(&self, donor: &Genome, module: ModuleKind) -> Genome {
        let mut out = self.clone();
        match module {
            ModuleKind::Backbone => out.backbone = donor.backbone.clone(),
            ModuleKind::Head => out.head = donor.head.clone(),
        }
        out
    }

    pub fn same_module(&self, other: &Genome, module: ModuleKind) -> bool {
        match module {
            ModuleKind::Backbone => self.backbone == other.backbone,
            ModuleKind::Head => self.head == other.head,
        }
    }

    pub fn to_canonical_text(&self) -> String {
        let mut lines: Vec<String> = Vec::with_capacity(self.backbone.len() * 3 + self.head.len() * 2);
        self.push_module_lines(ModuleKind::Backbone, &mut lines);
        self.push_module_lines(ModuleKind::Head, &mut lines);
        join_sorted(lines)
    }

    /// Canonical text restricted to one module's genes.
    pub fn module_canonical_text(&self, module: ModuleKind) -> String {
        let mut lines = Vec::new();
        self.push_module_lines(module, &mut lines);
        join_sorted(lines)
    }

    fn push_module_lines(&self, module: ModuleKind, lines: &mut Vec<String>) {
        match module {
            ModuleKind::Backbone => {
                for (s, stage) in self.backbone.iter().enumerate() {
                    lines.push(format!("stage.{s}.depth={}", stage.depth));
                    lines.push(format!("stage.{s}.width={}", stage.width_index));
                    let exp: Vec<String> =
                        stage.expansion_indices.iter().map(|e| e.to_string()).collect();
                    lines.push(format!("stage.{s}.exp={}", exp.join(",")));
                }
            }
            ModuleKind::Head => {
                for (h, gene) in self.head.iter().enumerate() {
                    lines.push(format!("head.{h}.width={}", gene.width_index));
                    lines.push(format!("head.{h}.exp={}", gene.expansion_index));
                }
            }
        }
    }

    pub fn from_canonical_text(text: &str, space: &SearchSpace) -> Result<Genome> {
        parse_canonical(text, space)
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical_text())
    }
}

fn join_sorted(mut lines: Vec<String>) -> String {
    lines.sort();
    let mut out = String::new();
    for line in lines {
        out.push_str(&line);
        out.push('\n');
    }
    out
}

fn check_index(field: String, index: usize, len: usize) -> Result<()> {
    if index >= len {
        Err(Error::IndexOutOfRange { field, index, len })
    } else {
        Ok(())
    }
}

#[derive(Debug)]
enum Value {
    Scalar(usize),
    List(Vec<usize>),
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn parse_usize(token: &str, line: usize, column: usize) -> Result<usize> {
    token
        .parse::<usize>()
        .map_err(|_| parse_err(line, column, format!("expected a non-negative integer, found {token:?}")))
}

fn parse_canonical(text: &str, space: &SearchSpace) -> Result<Genome> {
    // (section, index, field) -> value
    let mut entries: BTreeMap<(String, usize, String), (Value, usize)> = BTreeMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some(eq) = raw.find('=') else {
            let col = raw.len() - raw.trim_start().len() + 1;
            return Err(parse_err(line_no, col, "expected `key=value`"));
        };
        let key: String = raw[..eq].chars().filter(|c| !c.is_whitespace()).collect();
        let key_col = raw.len() - raw.trim_start().len() + 1;
        let parts: Vec<&str> = key.split('.').collect();
        if parts.len() != 3 {
            return Err(parse_err(line_no, key_col, format!("malformed key {key:?}")));
        }
        let section = parts[0];
        let index = parse_usize(parts[1], line_no, key_col)?;
        let field = parts[2];
        let list_allowed = match (section, field) {
            ("stage", "depth") | ("stage", "width") => false,
            ("stage", "exp") => true,
            ("head", "width") | ("head", "exp") => false,
            _ => return Err(parse_err(line_no, key_col, format!("unknown key {key:?}"))),
        };

        let value_str = &raw[eq + 1..];
        let mut tokens = Vec::new();
        let mut offset = eq + 1;
        for piece in value_str.split(',') {
            let lead = piece.len() - piece.trim_start().len();
            let col = offset + lead + 1;
            tokens.push(parse_usize(piece.trim(), line_no, col)?);
            offset += piece.len() + 1;
        }
        let value = if list_allowed {
            Value::List(tokens)
        } else if tokens.len() == 1 {
            Value::Scalar(tokens[0])
        } else {
            return Err(parse_err(line_no, eq + 2, format!("`{key}` takes a single value")));
        };

        let k = (section.to_string(), index, field.to_string());
        if entries.insert(k, (value, line_no)).is_some() {
            return Err(parse_err(line_no, key_col, format!("duplicate key {key:?}")));
        }
    }

    for (section, index, _) in entries.keys() {
        let len = if section == "stage" { space.num_stages } else { space.head_blocks.len() };
        check_index(section.clone(), *index, len)?;
    }

    let mut take = |section: &str, index: usize, field: &str| -> Result<Value> {
        entries
            .remove(&(section.to_string(), index, field.to_string()))
            .map(|(v, _)| v)
            .ok_or_else(|| Error::GenomeMismatch(format!("missing key {section}.{index}.{field}")))
    };
    let scalar = |v: Value| match v {
        Value::Scalar(x) => x,
        Value::List(_) => unreachable!("scalar keys are parsed as scalars"),
    };

    let mut backbone = Vec::with_capacity(space.num_stages);
    for s in 0..space.num_stages {
        let depth = scalar(take("stage", s, "depth")?);
        let width_index = scalar(take("stage", s, "width")?);
        let expansion_indices = match take("stage", s, "exp")? {
            Value::List(v) => v,
            Value::Scalar(x) => vec![x],
        };
        backbone.push(StageGene {
            depth,
            width_index,
            expansion_indices,
        });
    }
    let mut head = Vec::with_capacity(space.head_blocks.len());
    for h in 0..space.head_blocks.len() {
        let width_index = scalar(take("head", h, "width")?);
        let expansion_index = scalar(take("head", h, "exp")?);
        head.push(HeadGene {
            width_index,
            expansion_index,
        });
    }
    let genome = Genome { backbone, head };
    genome.validate(space)?;
    Ok(genome)
}

pub fn genome_to_canonical_text(genome: &Genome) -> String {
    genome.to_canonical_text()
}

pub fn genome_from_canonical_text(text: &str, space: &SearchSpace) -> Result<Genome> {
    parse_canonical(text, space)
}

fn sample_stage<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> StageGene {
    let depth = rng.random_range(space.depth_min..=space.depth_max);
    let width_index = rng.random_range(0..space.width_multipliers.len());
    let ne = space.expansion_ratios.len();
    let expansion_indices = (0..depth).map(|_| rng.random_range(0..ne)).collect();
    StageGene {
        depth,
        width_index,
        expansion_indices,
    }
}

fn sample_head_gene<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> HeadGene {
    HeadGene {
        width_index: rng.random_range(0..space.width_multipliers.len()),
        expansion_index: rng.random_range(0..space.expansion_ratios.len()),
    }
}

/// Draws every dimension independently and uniformly from its legal set.
pub fn sample_uniform<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Genome {
    let backbone = (0..space.num_stages).map(|_| sample_stage(space, rng)).collect();
    let head = (0..space.head_blocks.len()).map(|_| sample_head_gene(space, rng)).collect();
    Genome { backbone, head }
}

/// Resamples only `module`'s genes of `base`, uniformly.
pub fn sample_module<R: Rng + ?Sized>(
    space: &SearchSpace,
    base: &Genome,
    module: ModuleKind,
    rng: &mut R,
) -> Genome {
    let mut out = base.clone();
    match module {
        ModuleKind::Backbone => {
            out.backbone = (0..space.num_stages).map(|_| sample_stage(space, rng)).collect();
        }
        ModuleKind::Head => {
            out.head = (0..space.head_blocks.len()).map(|_| sample_head_gene(space, rng)).collect();
        }
    }
    out
}

/// Fixed-length feature vector.
///
/// Per stage: `[normalized depth, width value, mean expansion, one-hot width]`;
/// per head slot: `[width value, expansion value]`.
pub fn encode(genome: &Genome, space: &SearchSpace) -> Result<Vec<f64>> {
    genome.validate(space)?;
    Ok(encode_valid(genome, space))
}

pub(crate) fn encode_valid(genome: &Genome, space: &SearchSpace) -> Vec<f64> {
    let nw = space.width_multipliers.len();
    let span = (space.depth_max - space.depth_min) as f64;
    let mut out = Vec::with_capacity(space.feature_len());
    for stage in &genome.backbone {
        let depth = if span > 0.0 {
            (stage.depth - space.depth_min) as f64 / span
        } else {
            0.0
        };
        let mean_exp = stage
            .expansion_indices
            .iter()
            .map(|&e| space.expansion_ratios[e])
            .sum::<f64>()
            / stage.depth as f64;
        out.push(depth);
        out.push(space.width_multipliers[stage.width_index]);
        out.push(mean_exp);
        out.extend((0..nw).map(|i| if i == stage.width_index { 1.0 } else { 0.0 }));
    }
    for gene in &genome.head {
        out.push(space.width_multipliers[gene.width_index]);
        out.push(space.expansion_ratios[gene.expansion_index]);
    }
    out
}

/// Every genome of a small space, in a fixed order. Refuses spaces larger
/// than `limit`.
pub fn enumerate_genomes(space: &SearchSpace, limit: usize) -> Result<Vec<Genome>> {
    let card = space.cardinality();
    if card > limit as u128 {
        return Err(Error::InvalidSpace(format!(
            "space has {card} genomes, enumeration limit is {limit}"
        )));
    }
    let nw = space.width_multipliers.len();
    let ne = space.expansion_ratios.len();

    let mut stage_options = Vec::new();
    for depth in space.depth_min..=space.depth_max {
        for width_index in 0..nw {
            let total = ne.pow(depth as u32);
            for code in 0..total {
                let mut c = code;
                let exps = (0..depth)
                    .map(|_| {
                        let e = c % ne;
                        c /= ne;
                        e
                    })
                    .collect();
                stage_options.push(StageGene {
                    depth,
                    width_index,
                    expansion_indices: exps,
                });
            }
        }
    }
    let slot_options: Vec<HeadGene> = (0..nw)
        .flat_map(|w| (0..ne).map(move |e| HeadGene { width_index: w, expansion_index: e }))
        .collect();

    let backbones = product(&stage_options, space.num_stages);
    let heads = product(&slot_options, space.head_blocks.len());
    let mut out = Vec::with_capacity(card as usize);
    for b in &backbones {
        for h in &heads {
            out.push(Genome {
                backbone: b.clone(),
                head: h.clone(),
            });
        }
    }
    Ok(out)
}

fn product<T: Clone>(options: &[T], n: usize) -> Vec<Vec<T>> {
    let mut acc: Vec<Vec<T>> = vec![Vec::new()];
    for _ in 0..n {
        acc = acc
            .into_iter()
            .flat_map(|prefix| {
                options.iter().map(move |o| {
                    let mut p = prefix.clone();
                    p.push(o.clone());
                    p
                })
            })
            .collect();
    }
    acc
}
