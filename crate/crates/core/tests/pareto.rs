mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use axdse_core::dse::{pareto_indices, Objective, ObjectiveField, ObjectiveValues};

use common::pareto_oracle;

#[derive(Clone)]
struct P(Vec<f64>);

const FIELDS: [ObjectiveField; 3] = [
    ObjectiveField::AreaProxy,
    ObjectiveField::FiDrop,
    ObjectiveField::ApproxDrop,
];

impl ObjectiveValues for P {
    fn objective_value(&self, field: ObjectiveField) -> f64 {
        self.0[FIELDS.iter().position(|&f| f == field).unwrap()]
    }
}

fn check(points: &[P], objectives: &[Objective]) {
    let raw: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            objectives
                .iter()
                .map(|o| p.objective_value(o.field))
                .collect()
        })
        .collect();
    let mut got = pareto_indices(points, objectives, false).unwrap();
    got.sort();
    assert_eq!(got, pareto_oracle(&raw, objectives));
}

#[test]
fn matches_oracle_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for round in 0..40 {
        let n = rng.random_range(1..=300);
        // coarse grids force ties and duplicates
        let grid = if round % 2 == 0 { 8.0 } else { 1e6 };
        let points: Vec<P> = (0..n)
            .map(|_| {
                P((0..3)
                    .map(|_| (rng.random::<f64>() * grid).floor())
                    .collect())
            })
            .collect();
        let objectives = match round % 3 {
            0 => vec![
                Objective::minimize(FIELDS[0]),
                Objective::minimize(FIELDS[1]),
            ],
            1 => vec![
                Objective::minimize(FIELDS[0]),
                Objective::maximize(FIELDS[1]),
            ],
            _ => vec![
                Objective::minimize(FIELDS[0]),
                Objective::minimize(FIELDS[1]),
                Objective::maximize(FIELDS[2]),
            ],
        };
        check(&points, &objectives);
    }
}

#[test]
fn ordered_by_first_objective_and_dedup() {
    let pts = vec![
        P(vec![3.0, 3.0, 0.0]),
        P(vec![1.0, 5.0, 0.0]),
        P(vec![2.0, 4.0, 0.0]),
        P(vec![1.0, 5.0, 0.0]),
    ];
    let obj = [
        Objective::minimize(FIELDS[0]),
        Objective::minimize(FIELDS[1]),
    ];
    assert_eq!(pareto_indices(&pts, &obj, false).unwrap(), vec![1, 3, 2, 0]);
    assert_eq!(pareto_indices(&pts, &obj, true).unwrap(), vec![1, 2, 0]);
}
