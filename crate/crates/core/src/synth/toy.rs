//! Small random graphs for gradient and invariance checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::CandidateTable;
use crate::model::{EdgeSet, GraphInputs};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ToyGraph {
    pub inputs: GraphInputs,
    pub candidates: CandidateTable,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// Symmetric random edge set without self loops.
fn symmetric(rng: &mut ChaCha8Rng, n: usize, pairs: usize, d_attr: usize) -> EdgeSet {
    let mut all: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
    all.shuffle(rng);
    let (mut src, mut dst) = (Vec::new(), Vec::new());
    let mut attrs = Vec::new();
    for &(u, v) in all.iter().take(pairs) {
        let a: Vec<f64> = (0..d_attr).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for (s, d) in [(u, v), (v, u)] {
            src.push(s);
            dst.push(d);
            attrs.extend_from_slice(&a);
        }
    }
    let m = src.len();
    let attrs = (d_attr > 0).then(|| Tensor::matrix(m, d_attr, attrs).expect("shape"));
    EdgeSet::new(src, dst, attrs).expect("aligned")
}

/// Random inputs and a `k`-slot candidate table. The last POI gets one
/// padded slot when `k > 1`, and one POI is left without cross edges.
pub fn random_toy(seed: u64, n_poi: usize, n_cbg: usize, k: usize, d_poi: usize, d_cbg: usize) -> ToyGraph {
    assert!(n_poi >= 2 && n_cbg >= k && k >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poi_x = uniform(&mut rng, n_poi, d_poi);
    let cbg_x = uniform(&mut rng, n_cbg, d_cbg);
    let cbg_adj = symmetric(&mut rng, n_cbg, n_cbg, 0);
    let geo_knn = symmetric(&mut rng, n_poi, n_poi, 2);
    let time_sim = symmetric(&mut rng, n_poi, n_poi, 1);
    let brand = symmetric(&mut rng, n_poi, n_poi / 2, 1);

    let mut belong = (Vec::new(), Vec::new());
    let mut knn = (Vec::new(), Vec::new(), Vec::new());
    for p in 0..n_poi - 1 {
        belong.0.push(p);
        belong.1.push(rng.gen_range(0..n_cbg));
        let mut cs: Vec<usize> = (0..n_cbg).collect();
        cs.shuffle(&mut rng);
        for &c in cs.iter().take(2.min(n_cbg)) {
            knn.0.push(p);
            knn.1.push(c);
            knn.2.push(rng.gen_range(-1.0..1.0));
        }
    }
    let n_knn = knn.0.len();
    let inputs = GraphInputs {
        poi_x,
        cbg_x,
        cbg_adj,
        geo_knn,
        time_sim,
        brand,
        belong: EdgeSet::new(belong.0, belong.1, None).expect("aligned"),
        knn: EdgeSet::new(knn.0, knn.1, Some(Tensor::matrix(n_knn, 1, knn.2).expect("shape"))).expect("aligned"),
    };

    let mut table = CandidateTable {
        k,
        cbg: Vec::new(),
        dist_m: Vec::new(),
        mask: Vec::new(),
        target: Vec::new(),
        labeled: vec![true; n_poi],
        captured_mass: vec![1.0; n_poi],
    };
    for p in 0..n_poi {
        let mut cs: Vec<usize> = (0..n_cbg).collect();
        cs.shuffle(&mut rng);
        let valid = if p == n_poi - 1 && k > 1 { k - 1 } else { k };
        let raw: Vec<f64> = (0..valid).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut d = 0.0;
        for j in 0..k {
            d += rng.gen_range(10.0..500.0);
            table.cbg.push(cs[j]);
            table.dist_m.push(d);
            table.mask.push(j < valid);
            table.target.push(if j < valid { raw[j] / total } else { 0.0 });
        }
    }
    ToyGraph { inputs, candidates: table }
}
