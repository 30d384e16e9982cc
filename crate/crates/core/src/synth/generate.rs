//! Gravity-with-affinity synthetic county.
//!
//! CBGs sit on a jittered grid with a spatially smooth latent income field
//! and lognormal population. Each POI has a latent archetype that sets its
//! income affinity and its weekly visit rhythm; the observed category is a
//! noisy copy of the archetype. The true origin distribution is
//! `pop^β · exp(-d/λ) · exp(s · γ_a · income)`, optionally perturbed by a
//! Dirichlet draw, and visit counts are multinomial samples from it.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::dwell::DWELL_BINS;
use crate::features::hours::WEEKDAYS;
use crate::graph::geo::{euclid, LocalProjection};
use crate::graph::input::{CbgRecord, CbgTable, PoiRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_cbg: usize,
    pub n_poi: usize,
    pub extent_km: f64,
    pub seed: u64,
    /// Distance-decay scale of the true process, metres.
    pub lambda_g_m: f64,
    pub pop_exponent: f64,
    /// Overall scale of the archetype-income affinity; 0 turns it off.
    pub affinity_strength: f64,
    /// Income loading per archetype; its length sets the archetype count.
    pub archetype_loadings: Vec<f64>,
    /// Probability that the observed category equals the archetype.
    pub category_accuracy: f64,
    /// Dirichlet concentration of per-POI deviations from the gravity rule.
    pub dirichlet_concentration: Option<f64>,
    pub mean_visits: f64,
    /// Log-scale spread of per-POI visit totals.
    pub visit_dispersion: f64,
    /// Independent co-visit sample size as a share of visits.
    pub covisit_fraction: f64,
    pub n_brands: usize,
    pub branded_fraction: f64,
    /// Correlation length of the income field, km.
    pub income_corr_km: f64,
    /// Per-CBG noise shared by every demographic column.
    pub income_noise: f64,
    /// Opening-hour and dwell templates, independent of archetype.
    pub n_hour_templates: usize,
    pub center_lat: f64,
    pub center_lon: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_cbg: 200,
            n_poi: 1000,
            extent_km: 14.0,
            seed: 0,
            lambda_g_m: 2500.0,
            pop_exponent: 1.0,
            affinity_strength: 1.0,
            archetype_loadings: vec![-1.2, -0.7, -0.25, 0.25, 0.7, 1.2],
            category_accuracy: 0.6,
            dirichlet_concentration: Some(5000.0),
            mean_visits: 400.0,
            visit_dispersion: 0.5,
            covisit_fraction: 0.25,
            n_brands: 30,
            branded_fraction: 0.4,
            income_corr_km: 2.0,
            income_noise: 0.7,
            n_hour_templates: 3,
            center_lat: 33.75,
            center_lon: -84.39,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cbg == 0 || self.n_poi == 0 {
            return Err(Error::param("n_cbg/n_poi", "counts must be at least 1"));
        }
        if !(self.lambda_g_m > 0.0) {
            return Err(Error::param("lambda_g_m", "must be positive"));
        }
        if !(self.extent_km > 0.0) || !(self.mean_visits >= 1.0) {
            return Err(Error::param("extent_km/mean_visits", "must be positive"));
        }
        if self.archetype_loadings.is_empty() {
            return Err(Error::param("archetype_loadings", "need at least one archetype"));
        }
        if !(0.0..=1.0).contains(&self.category_accuracy) || !(0.0..=1.0).contains(&self.branded_fraction) {
            return Err(Error::param("category_accuracy/branded_fraction", "must lie in [0, 1]"));
        }
        if self.dirichlet_concentration.is_some_and(|k| !(k > 0.0)) {
            return Err(Error::param("dirichlet_concentration", "must be positive"));
        }
        if self.n_hour_templates == 0 {
            return Err(Error::param("n_hour_templates", "must be at least 1"));
        }
        Ok(())
    }

    pub fn n_archetypes(&self) -> usize {
        self.archetype_loadings.len()
    }
}

/// Exact generative origin distribution per POI over every CBG.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTruth {
    pub poi_ids: Vec<String>,
    pub cbg_ids: Vec<String>,
    /// `n_poi x n_cbg`, rows sum to 1.
    pub probs: Vec<f64>,
    pub archetype: Vec<usize>,
}

impl SynthTruth {
    pub fn row(&self, p: usize) -> &[f64] {
        let n = self.cbg_ids.len();
        &self.probs[p * n..(p + 1) * n]
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["poi_id", "archetype", "cbg_id", "prob"])?;
        for (p, pid) in self.poi_ids.iter().enumerate() {
            let arch = self.archetype[p].to_string();
            for (c, cid) in self.cbg_ids.iter().enumerate() {
                w.write_record([pid.as_str(), &arch, cid.as_str(), &self.row(p)[c].to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &std::path::Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut entries: Vec<(String, String, f64)> = Vec::new();
        let mut archetype = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let bad = |what: &str| Error::Parse(format!("bad {what} in truth row {:?}", rec.position().map(|p| p.line())));
            let v: f64 = rec[3].parse().map_err(|_| bad("probability"))?;
            let a: usize = rec[1].parse().map_err(|_| bad("archetype"))?;
            if entries.last().is_none_or(|(p, _, _): &(String, String, f64)| *p != rec[0]) {
                archetype.push(a);
            }
            entries.push((rec[0].to_string(), rec[2].to_string(), v));
        }
        let mut poi_ids: Vec<String> = Vec::new();
        let mut cbg_ids: Vec<String> = Vec::new();
        let mut pi = BTreeMap::new();
        let mut ci = BTreeMap::new();
        for (p, c, _) in &entries {
            if !pi.contains_key(p) {
                pi.insert(p.clone(), poi_ids.len());
                poi_ids.push(p.clone());
            }
            if !ci.contains_key(c) {
                ci.insert(c.clone(), cbg_ids.len());
                cbg_ids.push(c.clone());
            }
        }
        let n = cbg_ids.len();
        let mut probs = vec![0.0; poi_ids.len() * n];
        for (p, c, v) in entries {
            probs[pi[&p] * n + ci[&c]] = v;
        }
        if archetype.len() != poi_ids.len() {
            return Err(Error::Parse("truth rows for one POI must be contiguous".into()));
        }
        Ok(SynthTruth {
            archetype,
            poi_ids,
            cbg_ids,
            probs,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SynthCounty {
    pub config: SynthConfig,
    pub pois: Vec<PoiRecord>,
    pub cbgs: CbgTable,
    pub truth: SynthTruth,
}

const CATEGORIES: [(&str, &str); 6] = [
    ("Restaurants and Other Eating Places", "722511"),
    ("Grocery Stores", "445110"),
    ("Gasoline Stations", "447110"),
    ("Clothing Stores", "448140"),
    ("Fitness and Recreational Sports Centers", "713940"),
    ("Depository Credit Intermediation", "522110"),
];

fn category(a: usize) -> (String, String) {
    match CATEGORIES.get(a) {
        Some((n, c)) => (n.to_string(), c.to_string()),
        None => (format!("Category {a}"), format!("{}", 900_000 + a)),
    }
}

/// Multinomial draw through sequential conditional binomials.
pub fn sample_counts<R: Rng>(probs: &[f64], n: u64, rng: &mut R) -> Vec<u64> {
    let mut out = vec![0; probs.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (i, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if mass <= 0.0 {
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = if i + 1 == probs.len() || q >= 1.0 {
            left
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(left, q).expect("valid binomial").sample(rng)
        };
        out[i] = k;
        left -= k;
        mass -= p;
    }
    out
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x = (*x - m) / s);
}

fn hhmm(h: u32) -> String {
    format!("{h:02}:00")
}

/// Builds CBG and POI tables plus the exact origin distributions.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCounty> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let proj = LocalProjection {
        lat0: cfg.center_lat,
        lon0: cfg.center_lon,
    };

    // CBG grid
    let nx = (cfg.n_cbg as f64).sqrt().ceil() as usize;
    let ny = cfg.n_cbg.div_ceil(nx);
    let spacing = cfg.extent_km * 1000.0 / nx as f64;
    let mut cbg_xy = Vec::with_capacity(cfg.n_cbg);
    let mut grid_pos = Vec::with_capacity(cfg.n_cbg);
    for i in 0..cfg.n_cbg {
        let (gx, gy) = (i % nx, i / nx);
        let jx = rng.gen_range(-0.25..0.25) * spacing;
        let jy = rng.gen_range(-0.25..0.25) * spacing;
        cbg_xy.push([
            (gx as f64 - (nx as f64 - 1.0) / 2.0) * spacing + jx,
            (gy as f64 - (ny as f64 - 1.0) / 2.0) * spacing + jy,
        ]);
        grid_pos.push((gx, gy));
    }
    let cbg_ids: Vec<String> = (0..cfg.n_cbg).map(|i| format!("cbg{i:04}")).collect();

    // smooth income field: Gaussian-kernel average of white noise
    let white: Vec<f64> = (0..cfg.n_cbg).map(|_| normal.sample(&mut rng)).collect();
    let ell = cfg.income_corr_km * 1000.0;
    let mut income: Vec<f64> = (0..cfg.n_cbg)
        .map(|i| {
            (0..cfg.n_cbg)
                .map(|j| (-euclid(cbg_xy[i], cbg_xy[j]).powi(2) / (2.0 * ell * ell)).exp() * white[j])
                .sum()
        })
        .collect();
    standardize(&mut income);
    let pop: Vec<f64> = (0..cfg.n_cbg)
        .map(|i| (1500f64.ln() + 0.45 * normal.sample(&mut rng) + 0.15 * income[i]).exp().round().max(50.0))
        .collect();
    let age: Vec<f64> = (0..cfg.n_cbg).map(|_| normal.sample(&mut rng)).collect();

    // 72 demographic columns: noisy mixtures of income, log-population and an unrelated factor
    let mut columns = vec!["total_population".to_string(), "median_household_income".to_string()];
    columns.extend((2..72).map(|j| format!("demo_{j:02}")));
    let loadings: Vec<[f64; 3]> = (0..72)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-1.0..1.0)])
        .collect();
    let mut cbg_rows = Vec::with_capacity(cfg.n_cbg);
    for i in 0..cfg.n_cbg {
        let observed_income = income[i] + cfg.income_noise * normal.sample(&mut rng);
        let lp = (pop[i].ln() - 1500f64.ln()) / 0.45;
        let mut f = Vec::with_capacity(72);
        f.push(pop[i]);
        f.push((60_000.0 * (0.35 * observed_income).exp()).round());
        for l in &loadings[2..] {
            f.push(l[0] * observed_income + l[1] * lp + l[2] * age[i] + 0.3 * normal.sample(&mut rng));
        }
        let (gx, gy) = grid_pos[i];
        let mut neighbors = Vec::new();
        for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (x, y) = (gx as i64 + dx, gy as i64 + dy);
            if x >= 0 && y >= 0 && (x as usize) < nx {
                let j = y as usize * nx + x as usize;
                if j < cfg.n_cbg {
                    neighbors.push(cbg_ids[j].clone());
                }
            }
        }
        let g = proj.unproject(cbg_xy[i]);
        cbg_rows.push(CbgRecord {
            id: cbg_ids[i].clone(),
            lat: g.lat,
            lon: g.lon,
            features: f,
            neighbors: Some(neighbors),
            polygon: None,
        });
    }

    // brands each carry one archetype
    let n_arch = cfg.n_archetypes();
    let brand_arch: Vec<usize> = (0..cfg.n_brands).map(|_| rng.gen_range(0..n_arch)).collect();
    let arch_peak: Vec<f64> = (0..n_arch).map(|a| 6.0 + 15.0 * a as f64 / n_arch.max(2) as f64).collect();
    let arch_weekend: Vec<f64> = (0..n_arch).map(|a| 0.4 + 1.2 * ((a * 7) % n_arch) as f64 / n_arch as f64).collect();

    let pop_total: f64 = pop.iter().sum();
    let visit_ln = LogNormal::new(cfg.mean_visits.ln() - cfg.visit_dispersion.powi(2) / 2.0, cfg.visit_dispersion)
        .map_err(|e| Error::param("visit_dispersion", e.to_string()))?;
    let mut pois = Vec::with_capacity(cfg.n_poi);
    let mut probs = Vec::with_capacity(cfg.n_poi * cfg.n_cbg);
    let mut archetypes = Vec::with_capacity(cfg.n_poi);
    let words = ["Corner", "Main Street", "Uptown", "Riverside", "Oak", "Central", "Park", "Station"];
    for p in 0..cfg.n_poi {
        // host CBG drawn by population, location jittered inside its cell
        let mut u = rng.gen_range(0.0..pop_total);
        let mut host = 0;
        while host + 1 < cfg.n_cbg && u >= pop[host] {
            u -= pop[host];
            host += 1;
        }
        let xy = [
            cbg_xy[host][0] + rng.gen_range(-0.5..0.5) * spacing,
            cbg_xy[host][1] + rng.gen_range(-0.5..0.5) * spacing,
        ];
        let home = (0..cfg.n_cbg)
            .min_by(|&a, &b| euclid(xy, cbg_xy[a]).total_cmp(&euclid(xy, cbg_xy[b])).then(a.cmp(&b)))
            .expect("at least one CBG");

        let brand = (cfg.n_brands > 0 && rng.gen_bool(cfg.branded_fraction)).then(|| rng.gen_range(0..cfg.n_brands));
        let arch = match brand {
            Some(b) => brand_arch[b],
            None => rng.gen_range(0..n_arch),
        };
        let shown = if rng.gen_bool(cfg.category_accuracy) { arch } else { rng.gen_range(0..n_arch) };
        archetypes.push(arch);

        // truth
        let gamma = cfg.affinity_strength * cfg.archetype_loadings[arch];
        let logw: Vec<f64> = (0..cfg.n_cbg)
            .map(|c| cfg.pop_exponent * pop[c].ln() - euclid(xy, cbg_xy[c]) / cfg.lambda_g_m + gamma * income[c])
            .collect();
        let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut y: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = y.iter().sum();
        y.iter_mut().for_each(|v| *v /= s);
        if let Some(kappa) = cfg.dirichlet_concentration {
            let mut z: Vec<f64> = y
                .iter()
                .map(|&v| {
                    let shape = kappa * v;
                    if shape > 1e-300 {
                        Gamma::new(shape, 1.0).map(|g| g.sample(&mut rng)).unwrap_or(0.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let zs: f64 = z.iter().sum();
            if zs > 0.0 {
                z.iter_mut().for_each(|v| *v /= zs);
                y = z;
            }
        }

        let n_visits = visit_ln.sample(&mut rng).round().max(1.0) as u64;
        let counts = sample_counts(&y, n_visits, &mut rng);
        let visits: BTreeMap<String, f64> = counts
            .iter()
            .enumerate()
            .filter(|(_, &k)| k > 0)
            .map(|(c, &k)| (cbg_ids[c].clone(), k as f64))
            .collect();
        let covisits = brand.map(|_| {
            let n = ((n_visits as f64) * cfg.covisit_fraction).round().max(1.0) as u64;
            sample_counts(&y, n, &mut rng)
                .iter()
                .enumerate()
                .filter(|(_, &k)| k > 0)
                .map(|(c, &k)| (cbg_ids[c].clone(), k as f64))
                .collect::<BTreeMap<_, _>>()
        });
        let median_km = {
            let mut ds: Vec<(f64, u64)> = counts
                .iter()
                .enumerate()
                .filter(|(_, &k)| k > 0)
                .map(|(c, &k)| (euclid(xy, cbg_xy[c]), k))
                .collect();
            ds.sort_by(|a, b| a.0.total_cmp(&b.0));
            let half = (n_visits as f64) / 2.0;
            let mut acc = 0.0;
            ds.iter().find(|(_, k)| {
                acc += *k as f64;
                acc >= half
            }).map_or(0.0, |d| d.0)
        };

        // weekly rhythm follows the archetype; hours and dwell do not
        let peak = arch_peak[arch];
        let mut profile = Vec::with_capacity(168);
        for day in 0..7 {
            let weekend = if day >= 5 { arch_weekend[arch] } else { 1.0 };
            for h in 0..24 {
                let base = (-(h as f64 - peak).powi(2) / 8.0).exp() * weekend + 0.05;
                let noise = (0.35 * normal.sample(&mut rng)).exp();
                profile.push((base * noise * n_visits as f64 / 20.0).round());
            }
        }
        let template = rng.gen_range(0..cfg.n_hour_templates);
        let (open, close, days) = match template % 3 {
            0 => (6, 22, 7),
            1 => (9, 21, 6),
            _ => (0, 24, 7),
        };
        let open_hours: BTreeMap<String, Vec<(String, String)>> = WEEKDAYS
            .iter()
            .take(days)
            .map(|d| (d.to_string(), vec![(hhmm(open), hhmm(close))]))
            .collect();
        let dwell_shape: Vec<f64> = (0..DWELL_BINS.len())
            .map(|b| ((b + template) % DWELL_BINS.len()) as f64 + 1.0)
            .collect();
        let bucketed_dwell: BTreeMap<String, f64> = DWELL_BINS
            .iter()
            .zip(&dwell_shape)
            .map(|(b, &w)| (b.to_string(), (w * n_visits as f64 / 28.0 * rng.gen_range(0.6..1.4)).round()))
            .collect();

        let (cat_name, naics) = category(shown);
        let brand_name = brand.map_or(String::new(), |b| format!("Chain {b:02}"));
        let name = match brand {
            Some(_) => brand_name.clone(),
            None => format!("{} {}", words.choose(&mut rng).expect("non-empty"), cat_name.split(' ').next().unwrap_or("Shop")),
        };
        let n_vis = n_visits as f64;
        let numeric: BTreeMap<String, f64> = [
            ("wkt_area_sq_meters", (6.5 + 0.8 * normal.sample(&mut rng)).exp().round()),
            ("raw_visit_counts", n_vis),
            ("raw_visitor_counts", (0.7 * n_vis).round()),
            ("distance_from_home", median_km.round()),
            ("median_dwell", 10.0 + 8.0 * template as f64 + rng.gen_range(0.0..5.0)),
            ("normalized_visits_by_state_scaling", n_vis * 12.5),
            ("normalized_visits_by_region_naics_visits", n_vis / cfg.mean_visits),
            ("normalized_visits_by_region_naics_visitors", 0.7 * n_vis / cfg.mean_visits),
            ("normalized_visits_by_total_visits", n_vis / (cfg.mean_visits * cfg.n_poi as f64)),
            ("normalized_visits_by_total_visitors", 0.7 * n_vis / (cfg.mean_visits * cfg.n_poi as f64)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let g = proj.unproject(xy);
        pois.push(PoiRecord {
            id: format!("poi{p:05}"),
            lat: g.lat,
            lon: g.lon,
            home_cbg: Some(cbg_ids[home].clone()),
            name,
            brand: brand_name,
            top_category: cat_name,
            naics_code: naics,
            region: "GA".into(),
            website_tags: String::new(),
            numeric,
            open_hours,
            bucketed_dwell,
            hourly_profile: profile,
            visits,
            covisits,
            text_embedding: None,
        });
        probs.extend_from_slice(&y);
    }
    Ok(SynthCounty {
        config: cfg.clone(),
        truth: SynthTruth {
            poi_ids: pois.iter().map(|p| p.id.clone()).collect(),
            cbg_ids: cbg_ids.clone(),
            probs,
            archetype: archetypes,
        },
        pois,
        cbgs: CbgTable {
            feature_columns: columns,
            rows: cbg_rows,
        },
    })
}
