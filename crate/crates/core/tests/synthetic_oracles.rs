mod common;

use iternas::cost_model::{CostProfile, HardwareProfile};
use iternas::evaluator::{build_oracle, LinearLandscape, OracleKind};
use iternas::evolution::rank_order;
use iternas::search_space::{enumerate_genomes, SearchSpace};
use iternas::{Genome, OracleSpec, Problem, Scope, StageGene};

/// Two stages, depth {2, 3}, two widths, two expansions, no head.
fn small_space() -> SearchSpace {
    SearchSpace {
        num_stages: 2,
        depth_min: 2,
        depth_max: 3,
        width_multipliers: vec![1.0, 1.5],
        expansion_ratios: vec![0.25, 0.55],
        stage_base_widths: vec![16, 32],
        head_blocks: vec![],
        input_resolution: 32,
    }
}

/// Per-stage argmax of the linear form. Features are
/// `[normalized depth, width, mean expansion, one-hot width]`, so for a given
/// depth and width the mean-expansion term is maximized by using the same
/// extreme ratio in every block.
fn analytic_argmax(space: &SearchSpace, w: &[f64]) -> Genome {
    let stride = 3 + space.width_multipliers.len();
    let span = (space.depth_max - space.depth_min) as f64;
    let backbone = (0..space.num_stages)
        .map(|s| {
            let ws = &w[s * stride..(s + 1) * stride];
            let exp = if ws[2] >= 0.0 { space.expansion_ratios.len() - 1 } else { 0 };
            let mut best = (f64::NEG_INFINITY, 0, 0);
            for depth in space.depth_min..=space.depth_max {
                for (wi, &wv) in space.width_multipliers.iter().enumerate() {
                    let v = ws[0] * (depth - space.depth_min) as f64 / span
                        + ws[1] * wv
                        + ws[2] * space.expansion_ratios[exp]
                        + ws[3 + wi];
                    if v > best.0 {
                        best = (v, depth, wi);
                    }
                }
            }
            StageGene {
                depth: best.1,
                width_index: best.2,
                expansion_indices: vec![exp; best.1],
            }
        })
        .collect();
    Genome { backbone, head: vec![] }
}

#[test]
fn enumeration_agrees_with_analytic_argmax() {
    let space = small_space();
    let problem = Problem::new(space.clone(), HardwareProfile::max78002(), CostProfile::unbounded()).unwrap();
    let all = enumerate_genomes(&space, 4096).unwrap();
    for seed in 0..25 {
        let landscape = LinearLandscape::new(&OracleSpec::synthetic_linear(seed), &space);
        let brute = all
            .iter()
            .filter(|g| problem.is_feasible(&problem.cost(g), Scope::Both))
            .max_by(|a, b| {
                landscape
                    .fitness(a, &a.to_canonical_text(), 0)
                    .total_cmp(&landscape.fitness(b, &b.to_canonical_text(), 0))
            })
            .unwrap();
        assert_eq!(brute, &analytic_argmax(&space, landscape.weights()), "seed {seed}");
    }
}

#[test]
fn rugged_optimum_is_unique_under_the_tie_break() {
    let problem = common::toy_problem();
    for seed in 0..10 {
        let spec = common::rugged(seed, 1.0, 0.1);
        let oracle = build_oracle(&spec, &problem.space).unwrap();
        let mut scored: Vec<_> = enumerate_genomes(&problem.space, 4096)
            .unwrap()
            .into_iter()
            .filter(|g| common::fully_feasible(&problem, g))
            .map(|g| {
                let c = iternas::evolution::Candidate::new(g, &problem);
                let f = oracle.evaluate(&c.genome, &c.canonical, &c.cost).unwrap();
                c.scored(
                    iternas::evolution::Score {
                        fitness: f,
                        source: iternas::FitnessSource::Oracle,
                    },
                    "",
                )
            })
            .collect();
        scored.sort_by(rank_order);
        assert!(rank_order(&scored[0], &scored[1]).is_lt());
    }
}

#[test]
fn rugged_with_zero_scales_is_the_linear_landscape() {
    let problem = common::toy_problem();
    let mut lin = OracleSpec::synthetic_linear(9);
    lin.params.cost_penalty = 0.3;
    lin.noise_std = 0.2;
    let mut rug = lin.clone();
    rug.kind = OracleKind::SyntheticRugged;
    let (a, b) = (build_oracle(&lin, &problem.space).unwrap(), build_oracle(&rug, &problem.space).unwrap());
    for g in enumerate_genomes(&problem.space, 4096).unwrap() {
        let (t, c) = (g.to_canonical_text(), problem.cost(&g));
        assert_eq!(a.evaluate(&g, &t, &c).unwrap().to_bits(), b.evaluate(&g, &t, &c).unwrap().to_bits());
    }
}
