//! Size/fitness Pareto front over logged evaluations.

use std::cmp::Ordering;

use iternas::{EvalRecord, FitnessSource};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontPoint {
    pub params: u64,
    pub fitness: f64,
    pub genome: String,
}

/// Distinct oracle-scored points, deduplicated on the full triple.
pub fn oracle_points(records: &[EvalRecord]) -> Vec<FrontPoint> {
    let mut points: Vec<FrontPoint> = records
        .iter()
        .filter(|r| r.source == FitnessSource::Oracle)
        .map(|r| FrontPoint {
            params: r.cost.params,
            fitness: r.fitness,
            genome: r.canonical_genome.clone(),
        })
        .collect();
    points.sort_by(front_order);
    points.dedup();
    points
}

/// Params ascending, fitness descending, genome text ascending.
fn front_order(a: &FrontPoint, b: &FrontPoint) -> Ordering {
    a.params
        .cmp(&b.params)
        .then_with(|| b.fitness.total_cmp(&a.fitness))
        .then_with(|| a.genome.cmp(&b.genome))
}

/// Points not dominated under (maximize fitness, minimize params). Points
/// with identical params and fitness do not dominate each other.
pub fn pareto_front(points: &[FrontPoint]) -> Vec<FrontPoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(front_order);
    let mut front = Vec::new();
    let mut best_smaller = f64::NEG_INFINITY;
    let mut i = 0;
    while i < sorted.len() {
        let params = sorted[i].params;
        let top = sorted[i].fitness;
        let mut j = i;
        while j < sorted.len() && sorted[j].params == params {
            if sorted[j].fitness == top && top > best_smaller {
                front.push(sorted[j].clone());
            }
            j += 1;
        }
        best_smaller = best_smaller.max(top);
        i = j;
    }
    front
}

pub fn write_csv<W: std::io::Write>(front: &[FrontPoint], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in front {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(params: u64, fitness: f64) -> FrontPoint {
        FrontPoint {
            params,
            fitness,
            genome: format!("g{params}"),
        }
    }

    #[test]
    fn dominated_point_is_dropped() {
        assert_eq!(pareto_front(&[pt(10, 1.0), pt(20, 0.9)]), vec![pt(10, 1.0)]);
    }

    #[test]
    fn mutually_non_dominated() {
        let pts = vec![pt(10, 0.5), pt(20, 0.8), pt(30, 0.9)];
        assert_eq!(pareto_front(&pts), pts);
    }

    #[test]
    fn equal_fitness_larger_model_is_dominated() {
        assert_eq!(pareto_front(&[pt(20, 1.0), pt(10, 1.0)]), vec![pt(10, 1.0)]);
    }

    #[test]
    fn csv_layout() {
        let mut out = Vec::new();
        write_csv(&[pt(10, 0.5)], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "params,fitness,genome\n10,0.5,g10\n");
    }
}
