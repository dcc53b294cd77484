//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use transport_core::data::{Mode, Observation, StudyDataset};
use transport_core::nuisance::NuisanceTable;

/// The four covariate cells of the discrete toy population.
pub const CELLS: [[f64; 2]; 4] = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
/// Target rows per cell.
pub const N_TARGET: [usize; 4] = [3, 1, 2, 2];

/// Source rows per cell, trial (0-based) and arm. Trial 2 only enrols
/// x₁ = 1, so the toy also exercises varying trial support.
pub fn n_source(cell: usize, k: usize, a: usize) -> usize {
    const T1: [[usize; 2]; 4] = [[2, 2], [3, 1], [1, 2], [1, 1]];
    const T2: [[usize; 2]; 4] = [[0, 0], [0, 0], [1, 3], [3, 1]];
    [T1, T2][k][cell][a]
}

/// Zero-sum offsets so each cell's empirical mean is exact.
fn offsets(c: usize) -> Vec<f64> {
    match c {
        0 => vec![],
        1 => vec![0.0],
        2 => vec![-0.5, 0.5],
        3 => vec![-1.0, 0.0, 1.0],
        _ => unreachable!("toy cells hold at most 3 rows"),
    }
}

pub struct Toy {
    pub data: StudyDataset,
    pub table: NuisanceTable,
    /// Hand-enumerated target parameter.
    pub psi: f64,
    pub cell_of_row: Vec<usize>,
}

fn n_s(cell: usize, k: usize) -> usize {
    n_source(cell, k, 0) + n_source(cell, k, 1)
}

fn build(mode: Mode, m: usize, q0: impl Fn(&[f64], usize) -> f64, effect: impl Fn(&[f64]) -> f64, target_y: &[Vec<f64>]) -> (StudyDataset, NuisanceTable, Vec<usize>) {
    let mut rows = Vec::new();
    let mut cell_of_row = Vec::new();
    for (c, x) in CELLS.iter().enumerate() {
        for y in &target_y[c] {
            let y = (mode == Mode::Ratio).then_some(*y);
            rows.push(Observation::target(y, x.to_vec(), mode));
            cell_of_row.push(c);
        }
        for k in 0..m {
            for a in 0..2u8 {
                let q = match (mode, a) {
                    (_, 0) => q0(x, k + 1),
                    (Mode::Difference, _) => q0(x, k + 1) + effect(x),
                    (Mode::Ratio, _) => q0(x, k + 1) * effect(x),
                };
                for d in offsets(n_source(c, k, a as usize)) {
                    rows.push(Observation::source(k + 1, a, q + d, x.to_vec()));
                    cell_of_row.push(c);
                }
            }
        }
    }
    let data = StudyDataset::new(rows, mode).unwrap();
    let mut t = NuisanceTable::empty(mode, m, data.n(), 1e-3);
    for (r, &c) in data.rows().iter().zip(&cell_of_row) {
        let x = r.x.as_slice();
        let ns: usize = (0..m).map(|k| n_s(c, k)).sum();
        t.pi.push(N_TARGET[c] as f64 / (N_TARGET[c] + ns) as f64);
        t.eta.push((0..m).map(|k| n_s(c, k) as f64 / ns as f64).collect());
        t.e1.push(
            (0..m)
                .map(|k| if n_s(c, k) == 0 { 0.5 } else { n_source(c, k, 1) as f64 / n_s(c, k) as f64 })
                .collect(),
        );
        t.q0.push((1..=m).map(|s| q0(x, s)).collect());
        t.effect.push(effect(x));
        t.v0.push((1..=m).map(|s| 1.0 + s as f64).collect());
        t.v1.push((1..=m).map(|s| 2.0 + x[1] + s as f64).collect());
    }
    if mode == Mode::Ratio {
        let q: Vec<f64> = target_y.iter().map(|ys| ys.iter().sum::<f64>() / ys.len() as f64).collect();
        t.target_q = Some(cell_of_row.iter().map(|&c| q[c]).collect());
    }
    (data, t, cell_of_row)
}

/// Difference toy: Q(0,x,s) = 1 + s + x₁ − 2x₂ + s·x₂, D(x) = ½ + x₁ + 2x₁x₂.
/// ψ = (3·½ + 1·½ + 2·3/2 + 2·7/2)/8 = 3/2.
pub fn difference_toy(m: usize) -> Toy {
    let target_y: Vec<Vec<f64>> = N_TARGET.iter().map(|&c| vec![0.0; c]).collect();
    let (data, table, cell_of_row) = build(
        Mode::Difference,
        m,
        |x, s| 1.0 + s as f64 + x[0] - 2.0 * x[1] + s as f64 * x[1],
        |x| 0.5 + x[0] + 2.0 * x[0] * x[1],
        &target_y,
    );
    Toy { data, table, psi: 1.5, cell_of_row }
}

/// Ratio toy: Q(0,x,s) = 1 + s + x₁ + x₂, R(x) = 1 + x₁ + ½x₂, target cell
/// means Q(x) = (2,3,3,4). ψ = Σ n·R·Q / Σ n·Q = 42.5/23.
pub fn ratio_toy(m: usize) -> Toy {
    let target_y = vec![vec![1.0, 2.0, 3.0], vec![3.0], vec![2.5, 3.5], vec![3.5, 4.5]];
    let (data, table, cell_of_row) = build(
        Mode::Ratio,
        m,
        |x, s| 1.0 + s as f64 + x[0] + x[1],
        |x| 1.0 + x[0] + 0.5 * x[1],
        &target_y,
    );
    Toy { data, table, psi: 42.5 / 23.0, cell_of_row }
}
