#![allow(dead_code)]

use iternas::cost_model::{CostProfile, CostVector, HardwareProfile};
use iternas::evaluator::{OracleKind, OracleParams, OracleSpec};
use iternas::search_space::{enumerate_genomes, HeadBlockSlot, HeadRole, SearchSpace};
use iternas::{Genome, Problem, Scope};

/// 2 stages x depth {1,2} x 2 widths x 2 expansions, two head slots:
/// 144 backbones x 16 heads = 2,304 genomes.
pub fn toy_space() -> SearchSpace {
    SearchSpace {
        num_stages: 2,
        depth_min: 1,
        depth_max: 2,
        width_multipliers: vec![1.0, 1.5],
        expansion_ratios: vec![0.25, 0.55],
        stage_base_widths: vec![16, 32],
        head_blocks: vec![
            HeadBlockSlot { slot_id: 0, role: HeadRole::Fpn, base_width: 32 },
            HeadBlockSlot { slot_id: 1, role: HeadRole::YoloHead, base_width: 32 },
        ],
        input_resolution: 32,
    }
}

fn percentile(mut v: Vec<u64>, num: usize, den: usize) -> u64 {
    v.sort_unstable();
    v[v.len() * num / den]
}

/// Parameter budgets at the 60th (backbone) and 80th (head) percentiles
/// of the toy space; other components never bind.
pub fn toy_problem() -> Problem {
    let space = toy_space();
    let hw = HardwareProfile::max78002();
    let all = enumerate_genomes(&space, 4096).unwrap();
    let costs: Vec<_> = all.iter().map(|g| iternas::cost_model::genome_cost(g, &space, &hw)).collect();
    let tb = percentile(costs.iter().map(|c| c.backbone.params).collect(), 6, 10);
    let th = percentile(costs.iter().map(|c| c.head.params).collect(), 8, 10);
    let big = u64::MAX / 4;
    let budgets = CostProfile {
        tau_total: CostVector::new(tb + th, 2 * big, 2 * big),
        tau_backbone: CostVector::new(tb, big, big),
        tau_head: CostVector::new(th, big, big),
    };
    Problem::new(space, hw, budgets).unwrap()
}

pub fn fully_feasible(problem: &Problem, g: &Genome) -> bool {
    let c = problem.cost(g);
    [Scope::Backbone, Scope::Head, Scope::Both]
        .into_iter()
        .all(|s| problem.is_feasible(&c, s))
}

pub fn rugged(weight_seed: u64, interaction: f64, coupling: f64) -> OracleSpec {
    OracleSpec {
        kind: OracleKind::SyntheticRugged,
        params: OracleParams {
            weight_seed,
            interaction_scale: interaction,
            coupling_scale: coupling,
            ..Default::default()
        },
        noise_std: 0.0,
        noise_seed: 0,
    }
}
