//! Two-sample comparison used by the path-law checks.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::mc;
use crate::operators::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTest {
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
}

impl EnergyTest {
    /// Two-sided 3-sigma level.
    pub fn passes(&self) -> bool {
        self.p_value > 0.0027
    }
}

/// Energy-distance statistic `2 E|X-Y| - E|X-X'| - E|Y-Y'|` (V-statistic
/// form) with a permutation p-value.
pub fn energy_test(a: &[Vector], b: &[Vector], permutations: usize, seed: u64) -> EnergyTest {
    let na = a.len();
    let all: Vec<&Vector> = a.iter().chain(b.iter()).collect();
    let m = all.len();
    let mut dist = vec![0.0; m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let d = (all[i] - all[j]).norm();
            dist[i * m + j] = d;
            dist[j * m + i] = d;
        }
    }
    let stat = |labels: &[usize]| -> f64 {
        let (xa, xb) = labels.split_at(na);
        let mean = |u: &[usize], v: &[usize]| -> f64 {
            let mut s = 0.0;
            for &i in u {
                for &j in v {
                    s += dist[i * m + j];
                }
            }
            s / (u.len() * v.len()) as f64
        };
        2.0 * mean(xa, xb) - mean(xa, xa) - mean(xb, xb)
    };
    let mut labels: Vec<usize> = (0..m).collect();
    let observed = stat(&labels);
    let mut rng = mc::stream(seed, u64::MAX);
    let mut exceed = 0usize;
    for _ in 0..permutations {
        labels.shuffle(&mut rng);
        if stat(&labels) >= observed {
            exceed += 1;
        }
    }
    EnergyTest {
        statistic: observed,
        p_value: (exceed + 1) as f64 / (permutations + 1) as f64,
        permutations,
    }
}
