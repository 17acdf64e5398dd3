mod common;

use iternas::controller::{passthrough_candidates, HistoryLine};
use iternas::evolution::context_hash;
use iternas::predictor::PredictorPolicy;
use iternas::search_space::{enumerate_genomes, sample_uniform};
use iternas::{
    run_iterative_search, Evaluator, FitnessSource, MemoryBuffer, ModuleKind, NoopObserver, Problem,
    Result, ScoredGenome, SearchConfig, SearchObserver, SwapRecord,
};

fn brute_force_best(problem: &Problem, spec: &iternas::OracleSpec) -> f64 {
    let oracle = iternas::evaluator::build_oracle(spec, &problem.space).unwrap();
    enumerate_genomes(&problem.space, 4096)
        .unwrap()
        .iter()
        .filter(|g| common::fully_feasible(problem, g))
        .map(|g| oracle.evaluate(g, &g.to_canonical_text(), &problem.cost(g)).unwrap())
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Default)]
struct Audit {
    starts: Vec<(usize, ModuleKind, usize, usize)>,
    generations: Vec<usize>,
    violations: Vec<String>,
}

impl SearchObserver for Audit {
    fn swap_started(&mut self, swap: usize, population: &[ScoredGenome], elites: usize, buffer: &MemoryBuffer) {
        let module = buffer.module();
        self.starts.push((swap, module, elites, population.len()));
        let ctx = &population[0].context_hash;
        let fixed = population[0].genome.module_canonical_text(module.other());
        for m in population {
            if &m.context_hash != ctx || m.genome.module_canonical_text(module.other()) != fixed {
                self.violations.push(format!("swap {swap}: mixed context"));
            }
            if context_hash(&m.genome, module) != m.context_hash {
                self.violations.push(format!("swap {swap}: stale context hash"));
            }
        }
    }

    fn generation_finished(&mut self, swap: usize, _generation: usize, _population: &[ScoredGenome]) {
        self.generations.push(swap);
    }

    fn swap_finished(&mut self, record: &SwapRecord) -> Result<()> {
        if record.best.source != FitnessSource::Oracle {
            self.violations.push(format!("swap {}: unverified best", record.swap_index));
        }
        Ok(())
    }
}

#[test]
fn linear_toy_search_recovers_the_feasible_optimum() {
    let problem = common::toy_problem();
    let mut hits = 0;
    for seed in 0..20 {
        let spec = iternas::OracleSpec::synthetic_linear(seed);
        let best = brute_force_best(&problem, &spec);
        let config = SearchConfig {
            seed,
            max_module_swaps: 10,
            ..Default::default()
        };
        let mut ev = Evaluator::from_spec(&spec, &problem.space, seed).unwrap();
        let out = run_iterative_search(&problem, &config, &mut ev, &mut NoopObserver).unwrap();
        assert!(out.history.len() <= 10);
        assert!(common::fully_feasible(&problem, &out.best.genome));
        if out.best.fitness == best {
            hits += 1;
        }
    }
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn history_is_monotone_budgeted_and_audited() {
    let problem = common::toy_problem();
    let config = SearchConfig {
        seed: 4,
        max_module_swaps: 8,
        patience: 100,
        ..Default::default()
    };
    let mut ev = Evaluator::from_spec(&common::rugged(4, 1.0, 0.3), &problem.space, 4).unwrap();
    let mut audit = Audit::default();
    let out = run_iterative_search(&problem, &config, &mut ev, &mut audit).unwrap();
    assert!(audit.violations.is_empty(), "{:?}", audit.violations);
    assert_eq!(out.history.len(), 8);
    assert_eq!(audit.generations.len(), 8 * 10);
    let modules: Vec<ModuleKind> = out.history.iter().map(|r| r.module).collect();
    assert_eq!(modules[..3], [ModuleKind::Backbone, ModuleKind::Head, ModuleKind::Backbone]);
    for w in out.history.windows(2) {
        assert!(w[1].best.fitness >= w[0].best.fitness);
    }
    for r in &out.history {
        assert!(common::fully_feasible(&problem, &r.best.genome));
        assert_eq!(r.generations_run, 10);
        let line: HistoryLine = serde_json::from_str(&serde_json::to_string(&r.history_line()).unwrap()).unwrap();
        assert_eq!(line, r.history_line());
    }
    for buf in [&out.backbone_buffer, &out.head_buffer] {
        assert!(buf.len() <= 200);
        assert!(buf.entries().iter().all(|e| e.source == FitnessSource::Oracle));
        assert!(buf.entries().iter().all(|e| common::fully_feasible(&problem, &e.genome)));
    }
    assert_eq!(out.best, out.history.last().unwrap().best);
}

#[test]
fn swap_count_respects_the_cap_and_patience() {
    let problem = common::toy_problem();
    let spec = iternas::OracleSpec::synthetic_linear(2);
    for (cap, patience) in [(50, 6), (3, 6), (50, 1)] {
        let config = SearchConfig {
            seed: 2,
            max_module_swaps: cap,
            patience,
            ..Default::default()
        };
        let mut ev = Evaluator::from_spec(&spec, &problem.space, 2).unwrap();
        let out = run_iterative_search(&problem, &config, &mut ev, &mut NoopObserver).unwrap();
        assert!(out.history.len() <= cap);
        if out.history.len() < cap {
            assert!(out.converged);
        }
    }
}

#[test]
fn passthrough_takes_elites_then_fresh_samples() {
    let problem = common::toy_problem();
    let mut r = iternas::rng::stream(8, iternas::rng::Purpose::Init, &[]);
    let fixed = loop {
        let g = sample_uniform(&problem.space, &mut r);
        if common::fully_feasible(&problem, &g) {
            break g;
        }
    };
    let members: Vec<ScoredGenome> = enumerate_genomes(&problem.space, 4096)
        .unwrap()
        .into_iter()
        .filter(|g| g.same_module(&fixed, ModuleKind::Head) && common::fully_feasible(&problem, g))
        .enumerate()
        .map(|(i, g)| {
            iternas::evolution::Candidate::new(g, &problem).scored(
                iternas::evolution::Score {
                    fitness: i as f64,
                    source: FitnessSource::Oracle,
                },
                "old",
            )
        })
        .collect();
    let mut full = MemoryBuffer::new(ModuleKind::Backbone, 200);
    full.merge(members.clone());
    assert!(full.len() >= 50);
    let mut three = MemoryBuffer::new(ModuleKind::Backbone, 3);
    three.merge(members);

    for (buffer, rho, want) in [(&full, 0.5, 50), (&full, 0.0, 0), (&three, 0.5, 3), (&full, 0.25, 25)] {
        let config = SearchConfig {
            passthrough_ratio: rho,
            ..Default::default()
        };
        let (c, elites) = passthrough_candidates(buffer, &fixed, &problem, &config, 3).unwrap();
        assert_eq!((elites, c.len()), (want, 100));
        for (i, cand) in c.iter().take(elites).enumerate() {
            assert!(cand.genome.same_module(&buffer.entries()[i].genome, ModuleKind::Backbone));
        }
        assert!(c.iter().all(|cand| cand.genome.same_module(&fixed, ModuleKind::Head)));
    }
}

#[test]
fn elites_are_rescored_under_the_new_context() {
    let problem = common::toy_problem();
    let spec = common::rugged(6, 1.0, 0.5);
    let oracle = iternas::evaluator::build_oracle(&spec, &problem.space).unwrap();

    struct Check<'a> {
        oracle: &'a dyn iternas::Oracle,
        problem: &'a Problem,
        checked: usize,
    }
    impl SearchObserver for Check<'_> {
        fn swap_started(&mut self, _swap: usize, population: &[ScoredGenome], _elites: usize, _buffer: &MemoryBuffer) {
            for m in population {
                let truth = self.oracle.evaluate(&m.genome, &m.canonical, &self.problem.cost(&m.genome)).unwrap();
                assert_eq!(m.fitness, truth, "stale fitness for {}", m.canonical);
                self.checked += 1;
            }
        }
    }
    let mut check = Check {
        oracle: oracle.as_ref(),
        problem: &problem,
        checked: 0,
    };
    let config = SearchConfig {
        seed: 6,
        max_module_swaps: 5,
        patience: 100,
        ..Default::default()
    };
    let mut ev = Evaluator::from_spec(&spec, &problem.space, 6).unwrap();
    run_iterative_search(&problem, &config, &mut ev, &mut check).unwrap();
    assert_eq!(check.checked, 500);
}

#[test]
fn oracle_fraction_one_matches_oracle_only_exactly() {
    let problem = common::toy_problem();
    let spec = common::rugged(3, 1.0, 0.1);
    let config = SearchConfig {
        seed: 3,
        max_module_swaps: 6,
        ..Default::default()
    };
    let mut plain = Evaluator::from_spec(&spec, &problem.space, 3).unwrap();
    let a = run_iterative_search(&problem, &config, &mut plain, &mut NoopObserver).unwrap();
    let policy = PredictorPolicy {
        oracle_fraction: 1.0,
        min_training_records: 10,
        ..Default::default()
    };
    let mut hybrid = Evaluator::from_spec(&spec, &problem.space, 3)
        .unwrap()
        .with_predictor(policy)
        .unwrap();
    let b = run_iterative_search(&problem, &config, &mut hybrid, &mut NoopObserver).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.oracle_calls, b.oracle_calls);
}

#[test]
fn hybrid_warm_up_and_verification() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("evals.jsonl");
    let problem = common::toy_problem();
    let spec = common::rugged(5, 1.0, 0.1);
    let policy = PredictorPolicy {
        oracle_fraction: 0.25,
        min_training_records: 40,
        ..Default::default()
    };
    let config = SearchConfig {
        seed: 5,
        max_module_swaps: 6,
        ..Default::default()
    };
    let mut ev = Evaluator::from_spec(&spec, &problem.space, 5)
        .unwrap()
        .with_log(iternas::evaluator::RecordWriter::create(&log).unwrap())
        .with_predictor(policy)
        .unwrap();
    let out = run_iterative_search(&problem, &config, &mut ev, &mut NoopObserver).unwrap();
    ev.flush().unwrap();
    let records = iternas::evaluator::load_records(&log).unwrap().records;
    assert!(records[..40].iter().all(|r| r.source == FitnessSource::Oracle));
    assert!(records.iter().any(|r| r.source == FitnessSource::Predictor));
    assert!(!ev.calibration().is_empty());
    for r in &out.history {
        assert_eq!(r.best.source, FitnessSource::Oracle);
    }
    let oracle_entries = records.iter().filter(|r| r.source == FitnessSource::Oracle).count() as u64;
    assert_eq!(oracle_entries, out.oracle_calls);
}

#[test]
fn inconsistent_budgets_are_rejected() {
    let mut problem = common::toy_problem();
    problem.budgets.tau_total.params = problem.budgets.tau_backbone.params;
    let config = SearchConfig::default();
    let mut ev = Evaluator::from_spec(&iternas::OracleSpec::synthetic_linear(1), &problem.space, 0).unwrap();
    assert!(matches!(
        run_iterative_search(&problem, &config, &mut ev, &mut NoopObserver),
        Err(iternas::Error::BudgetInconsistency { component: "params", .. })
    ));
}

#[test]
fn unreachable_budget_is_an_infeasible_space_error() {
    let mut problem = common::toy_problem();
    problem.budgets.tau_backbone.params = 1;
    let config = SearchConfig::default();
    let mut ev = Evaluator::from_spec(&iternas::OracleSpec::synthetic_linear(1), &problem.space, 0).unwrap();
    assert!(matches!(
        run_iterative_search(&problem, &config, &mut ev, &mut NoopObserver),
        Err(iternas::Error::InfeasibleSpace { .. })
    ));
}
