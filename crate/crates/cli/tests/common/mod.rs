#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use iternas::search_space::{HeadRole, SearchSpace};
use iternas::{Genome, Problem, Scope};
use iternas_cli::config::RunConfig;

/// 2 stages x depth {1,2} x 2 widths x 2 expansions with two head slots
/// (2,304 genomes). Parameter budgets sit at the 60th (backbone) and 80th
/// (head) percentiles; activation and layer budgets never bind.
pub const TOY_CONFIG: &str = r#"
hardware = "max78002"

[space]
num_stages = 2
depth_min = 1
depth_max = 2
width_multipliers = [1.0, 1.5]
expansion_ratios = [0.25, 0.55]
stage_base_widths = [16, 32]
input_resolution = 32
head_blocks = [
  { slot_id = 0, role = "fpn", base_width = 32 },
  { slot_id = 1, role = "yolo_head", base_width = 32 },
]

[budgets]
tau_backbone = { params = 9153, act_bytes = 1000000000, layers = 1000 }
tau_head = { params = 11028, act_bytes = 1000000000, layers = 1000 }
tau_total = { params = 20181, act_bytes = 2000000000, layers = 2000 }

[search]
max_module_swaps = 10

[oracle]
kind = "synthetic_rugged"

[oracle.params]
weight_seed = 0
interaction_scale = 1.0
coupling_scale = 0.1
"#;

pub fn toy_config() -> RunConfig {
    RunConfig::parse(TOY_CONFIG).unwrap()
}

pub fn toy_problem() -> Problem {
    toy_config().problem().unwrap()
}

/// Writes `text` plus an `output_dir` line into `dir/config.toml`.
pub fn write_config(dir: &Path, text: &str, output_dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    let body = format!("output_dir = {:?}\n{text}", output_dir.to_str().unwrap());
    std::fs::write(&path, body).unwrap();
    path
}

pub fn iternas(args: &[&str]) -> Output {
    iternas_with_env(args, &[])
}

pub fn iternas_with_env(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_iternas"));
    cmd.args(args).env_remove(iternas_cli::config::OUTPUT_DIR_ENV);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

pub fn fully_feasible(problem: &Problem, g: &Genome) -> bool {
    let c = problem.cost(g);
    [Scope::Backbone, Scope::Head, Scope::Both]
        .into_iter()
        .all(|s| problem.is_feasible(&c, s))
}

pub struct Flat {
    pub params: u64,
    pub layers: u64,
    pub peak_map: u64,
    pub max_channels: u64,
}

/// Cost by listing every convolution of the network one by one.
pub fn flat_count(g: &Genome, space: &SearchSpace, streaming: bool) -> Flat {
    // (kernel side, in channels, out channels)
    let mut convs: Vec<(u64, u64, u64)> = Vec::new();
    let mut layers = 1;
    let mut peak_map = 0;
    let mut max_channels = 0;
    let mut side = space.input_resolution as u64;
    let block = |convs: &mut Vec<(u64, u64, u64)>, c: u64, ratio: f64| {
        let mid = ((c as f64 * ratio).round() as u64).max(1);
        convs.extend([(1, c, mid), (3, mid, mid), (1, mid, c)]);
    };
    for (s, stage) in g.backbone.iter().enumerate() {
        if s > 0 {
            side = (side / 2).max(1);
        }
        let c = (space.stage_base_widths[s] as f64 * space.width_multipliers[stage.width_index]).round() as u64;
        max_channels = max_channels.max(c);
        for &e in &stage.expansion_indices {
            block(&mut convs, c, space.expansion_ratios[e]);
            layers += 3;
        }
        if !(streaming && s == 0) {
            peak_map = peak_map.max(side * side * c);
        }
    }
    for (slot, gene) in space.head_blocks.iter().zip(&g.head) {
        let c = (slot.base_width as f64 * space.width_multipliers[gene.width_index]).round() as u64;
        max_channels = max_channels.max(c);
        block(&mut convs, c, space.expansion_ratios[gene.expansion_index]);
        layers += 3 + u64::from(slot.role == HeadRole::YoloHead);
        peak_map = peak_map.max(side * side * c);
    }
    Flat {
        params: convs.iter().map(|&(k, i, o)| k * k * i * o).sum(),
        layers,
        peak_map,
        max_channels,
    }
}

/// Spearman correlation from first principles: average ranks, then Pearson.
pub fn naive_spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|x| {
                let below = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
