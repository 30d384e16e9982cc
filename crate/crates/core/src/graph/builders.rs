//! Builders for every message-passing relation family.
//!
//! All builders are pure functions of their inputs. Degree-K selections
//! break ties by ascending node index.

use std::collections::{BTreeMap, BTreeSet};

use super::geo::{bearing_deg, euclid, haversine_km, GeoPoint};
use super::{EdgeAttrs, NodeSet, Relation, RelationKind};
use crate::error::{Error, Result};

/// Indices of the `k` smallest keys, ordered by `(key, index)`.
fn k_smallest(keys: impl Iterator<Item = (usize, f64)>, k: usize) -> Vec<usize> {
    let mut v: Vec<(usize, f64)> = keys.collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    v.truncate(k);
    v.into_iter().map(|(i, _)| i).collect()
}

fn symmetrize(directed: impl IntoIterator<Item = (usize, usize)>) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    for (u, v) in directed {
        if u != v {
            set.insert((u, v));
            set.insert((v, u));
        }
    }
    set.into_iter().collect()
}

/// Per-POI outgoing geo-KNN lists before symmetrization.
pub fn geo_knn_directed(points: &[GeoPoint], k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::param("k_pp", "must be positive"));
    }
    if k >= points.len() {
        return Err(Error::param("k_pp", format!("{k} must be below the POI count {}", points.len())));
    }
    Ok((0..points.len())
        .map(|i| {
            let keys = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| (j, haversine_km(points[i], points[j])));
            k_smallest(keys, k)
        })
        .collect())
}

/// POI-POI proximity relation with `[dist_km, bearing_deg]` attributes.
pub fn build_poi_geo_knn(points: &[GeoPoint], k: usize) -> Result<Relation> {
    let lists = geo_knn_directed(points, k)?;
    let directed = lists.iter().enumerate().flat_map(|(i, l)| l.iter().map(move |&j| (i, j)));
    let edges = symmetrize(directed);
    let mut values = Vec::with_capacity(edges.len() * 2);
    for &(u, v) in &edges {
        values.push(haversine_km(points[u], points[v]));
        // distinct POIs sharing a location get bearing 0
        values.push(bearing_deg(points[u], points[v]).unwrap_or(0.0));
    }
    Relation::new(
        RelationKind::PoiGeoKnnPoi,
        edges,
        Some(EdgeAttrs {
            columns: vec!["dist_km".into(), "bearing_deg".into()],
            values,
        }),
    )
}

/// Rows scaled to unit L1 norm; all-zero rows stay zero.
pub fn l1_normalize_rows(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            if s > 0.0 {
                r.iter().map(|v| v / s).collect()
            } else {
                r.clone()
            }
        })
        .collect()
}

/// Temporal co-activity relation from hourly visit profiles, `[cosine_sim]` attribute.
pub fn build_poi_time_sim(profiles: &[Vec<f64>], k: usize) -> Result<Relation> {
    if k == 0 {
        return Err(Error::param("k_time", "must be positive"));
    }
    for (i, p) in profiles.iter().enumerate() {
        if let Some(v) = p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::validation(format!("poi {i}: invalid hourly profile entry {v}")));
        }
    }
    let normed = l1_normalize_rows(profiles);
    let norms: Vec<f64> = normed.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let active: Vec<usize> = (0..normed.len()).filter(|&i| norms[i] > 0.0).collect();
    let cos = |a: usize, b: usize| -> f64 {
        let dot: f64 = normed[a].iter().zip(&normed[b]).map(|(x, y)| x * y).sum();
        (dot / (norms[a] * norms[b])).min(1.0)
    };
    let mut directed = Vec::new();
    for &i in &active {
        let keys = active.iter().filter(|&&j| j != i).map(|&j| (j, -cos(i, j)));
        for j in k_smallest(keys, k) {
            directed.push((i, j));
        }
    }
    let edges = symmetrize(directed);
    let values = edges.iter().map(|&(u, v)| cos(u, v)).collect();
    Relation::new(
        RelationKind::PoiTimeSimPoi,
        edges,
        Some(EdgeAttrs {
            columns: vec!["cosine_sim".into()],
            values,
        }),
    )
}

/// Co-visit observation: visits to a branded POI from one origin CBG.
#[derive(Clone, Debug, PartialEq)]
pub struct CovisitRecord {
    pub poi: usize,
    pub origin_cbg: usize,
    pub brand: String,
    pub count: f64,
}

/// Brand co-occurrence relation, `[weight]` attribute.
///
/// For every origin CBG, each pair of distinct branded POIs visited from it
/// adds `min(count_a, count_b)`; weights are summed across CBGs.
pub fn build_poi_brand(records: &[CovisitRecord]) -> Result<Relation> {
    // origin -> poi -> count
    let mut by_origin: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in records {
        if r.brand.trim().is_empty() || r.count <= 0.0 {
            continue;
        }
        *by_origin.entry(r.origin_cbg).or_default().entry(r.poi).or_default() += r.count;
    }
    let mut weight: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for pois in by_origin.values() {
        let list: Vec<(usize, f64)> = pois.iter().map(|(&p, &c)| (p, c)).collect();
        for (i, &(a, ca)) in list.iter().enumerate() {
            for &(b, cb) in &list[i + 1..] {
                *weight.entry((a, b)).or_default() += ca.min(cb);
            }
        }
    }
    let mut edges = BTreeMap::new();
    for (&(a, b), &w) in &weight {
        if w > 0.0 {
            edges.insert((a, b), w);
            edges.insert((b, a), w);
        }
    }
    let values = edges.values().copied().collect();
    Relation::new(
        RelationKind::PoiBrandPoi,
        edges.into_keys().collect(),
        Some(EdgeAttrs {
            columns: vec!["weight".into()],
            values,
        }),
    )
}

/// Keeps each node's `k` heaviest links (ties by index); an edge survives if
/// either endpoint keeps it. Attribute column 0 is the weight.
pub fn keep_top_k_by_weight(rel: &Relation, k: usize) -> Result<Relation> {
    let attrs = rel
        .attrs
        .as_ref()
        .ok_or_else(|| Error::validation(format!("{}: pruning needs a weight attribute", rel.kind.name())))?;
    let d = attrs.dim();
    let mut out: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for (e, (u, v)) in rel.edges().enumerate() {
        out.entry(u).or_default().push((v, -attrs.values[e * d]));
    }
    let kept = out
        .iter()
        .flat_map(|(&u, list)| k_smallest(list.iter().copied(), k).into_iter().map(move |v| (u, v)));
    let keep: BTreeSet<(usize, usize)> = symmetrize(kept).into_iter().collect();
    let mut edges = Vec::new();
    let mut values = Vec::new();
    for (e, uv) in rel.edges().enumerate() {
        if keep.contains(&uv) {
            edges.push(uv);
            values.extend_from_slice(attrs.row(e));
        }
    }
    Relation::new(
        rel.kind,
        edges,
        Some(EdgeAttrs {
            columns: attrs.columns.clone(),
            values,
        }),
    )
}

/// CBG contiguity source.
#[derive(Clone, Debug)]
pub enum AdjacencyInput {
    /// Neighbor pairs by external id.
    Pairs(Vec<(String, String)>),
    /// One closed or open ring of `[x, y]` vertices per CBG, in node order.
    Polygons(Vec<Vec<[f64; 2]>>),
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Length of the collinear overlap of two segments (0 when not collinear).
fn shared_length(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2], tol: f64) -> f64 {
    let len = euclid(p1, p2);
    if len <= tol {
        return 0.0;
    }
    if cross(p1, p2, q1).abs() / len > tol || cross(p1, p2, q2).abs() / len > tol {
        return 0.0;
    }
    let dir = [(p2[0] - p1[0]) / len, (p2[1] - p1[1]) / len];
    let t = |q: [f64; 2]| (q[0] - p1[0]) * dir[0] + (q[1] - p1[1]) * dir[1];
    let (a, b) = (t(q1), t(q2));
    let lo = a.min(b).max(0.0);
    let hi = a.max(b).min(len);
    (hi - lo).max(0.0)
}

fn ring_segments(ring: &[[f64; 2]]) -> Vec<([f64; 2], [f64; 2])> {
    let n = ring.len();
    if n < 2 {
        return Vec::new();
    }
    let closed = ring[0] == ring[n - 1];
    let m = if closed { n - 1 } else { n };
    (0..m).map(|i| (ring[i], ring[(i + 1) % n.max(1)])).filter(|(a, b)| a != b).collect()
}

/// Rook contiguity: polygons sharing a boundary segment of positive length.
/// Touching at a single point does not count.
pub fn rook_adjacency(rings: &[Vec<[f64; 2]>]) -> Vec<(usize, usize)> {
    let segs: Vec<_> = rings.iter().map(|r| ring_segments(r)).collect();
    let bbox: Vec<[f64; 4]> = rings
        .iter()
        .map(|r| {
            r.iter().fold(
                [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
                |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
            )
        })
        .collect();
    let scale = bbox
        .iter()
        .flat_map(|b| b.iter().copied())
        .filter(|v| v.is_finite())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let mut pairs = Vec::new();
    for i in 0..rings.len() {
        for j in i + 1..rings.len() {
            let (a, b) = (bbox[i], bbox[j]);
            if a[0] > b[2] + tol || b[0] > a[2] + tol || a[1] > b[3] + tol || b[1] > a[3] + tol {
                continue;
            }
            let touches = segs[i].iter().any(|&(p1, p2)| {
                segs[j].iter().any(|&(q1, q2)| shared_length(p1, p2, q1, q2, tol) > tol)
            });
            if touches {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Unweighted, symmetric CBG-CBG relation.
pub fn build_cbg_adjacency(cbgs: &NodeSet, input: &AdjacencyInput) -> Result<Relation> {
    let pairs = match input {
        AdjacencyInput::Pairs(p) => p
            .iter()
            .map(|(a, b)| Ok((cbgs.resolve(a)?, cbgs.resolve(b)?)))
            .collect::<Result<Vec<_>>>()?,
        AdjacencyInput::Polygons(rings) => {
            if rings.len() != cbgs.count() {
                return Err(Error::validation(format!(
                    "{} polygons for {} CBGs",
                    rings.len(),
                    cbgs.count()
                )));
            }
            rook_adjacency(rings)
        }
    };
    Relation::new(RelationKind::CbgAdjacentCbg, symmetrize(pairs), None)
}

/// Structural `belong` edges and distance-based POI -> CBG KNN edges
/// (`[dist_m]` attribute, projected Euclidean metres).
pub fn build_cross_edges(
    poi_xy: &[[f64; 2]],
    cbg_xy: &[[f64; 2]],
    home: &[Option<usize>],
    k: usize,
) -> Result<(Relation, Relation)> {
    if k == 0 {
        return Err(Error::param("k_cross", "must be positive"));
    }
    if home.len() != poi_xy.len() {
        return Err(Error::validation("home assignment length differs from POI count"));
    }
    let mut belong = Vec::with_capacity(home.len());
    for (p, h) in home.iter().enumerate() {
        match h {
            Some(c) if *c < cbg_xy.len() => belong.push((p, *c)),
            _ => return Err(Error::validation(format!("poi {p} has no home CBG"))),
        }
    }
    let mut knn = Vec::new();
    let mut dist = Vec::new();
    for (p, &xy) in poi_xy.iter().enumerate() {
        let keys = cbg_xy.iter().enumerate().map(|(c, &cxy)| (c, euclid(xy, cxy)));
        for c in k_smallest(keys, k) {
            knn.push((p, c));
            dist.push(euclid(xy, cbg_xy[c]));
        }
    }
    Ok((
        Relation::new(RelationKind::PoiBelongCbg, belong, None)?,
        Relation::new(
            RelationKind::PoiKnnCbg,
            knn,
            Some(EdgeAttrs {
                columns: vec!["dist_m".into()],
                values: dist,
            }),
        )?,
    ))
}

/// All CBGs ordered by distance from a point, ties by index.
pub fn cbgs_by_distance(xy: [f64; 2], cbg_xy: &[[f64; 2]]) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = cbg_xy.iter().enumerate().map(|(c, &cxy)| (c, euclid(xy, cxy))).collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeType;
    use proptest::prelude::*;

    fn line(n: usize) -> Vec<GeoPoint> {
        (0..n).map(|i| GeoPoint { lat: 0.0, lon: i as f64 }).collect()
    }

    #[test]
    fn geo_knn_tie_goes_to_lower_index() {
        let lists = geo_knn_directed(&line(3), 1).unwrap();
        assert_eq!(lists[1], vec![0]);
        assert_eq!(lists[0], vec![1]);
        assert_eq!(lists[2], vec![1]);
    }

    #[test]
    fn geo_knn_complete_graph_at_n_minus_one() {
        let pts = line(4);
        let rel = build_poi_geo_knn(&pts, 3).unwrap();
        assert_eq!(rel.num_edges(), 12);
        assert!(rel.is_symmetric());
        let attrs = rel.attrs.as_ref().unwrap();
        for e in 0..rel.num_edges() {
            assert!(attrs.row(e)[0] > 0.0);
        }
        assert!(build_poi_geo_knn(&pts, 0).is_err());
        assert!(build_poi_geo_knn(&pts, 4).is_err());
    }

    #[test]
    fn geo_knn_attributes_follow_direction() {
        let rel = build_poi_geo_knn(&line(2), 1).unwrap();
        let attrs = rel.attrs.as_ref().unwrap();
        let e01 = rel.edges().position(|e| e == (0, 1)).unwrap();
        let e10 = rel.edges().position(|e| e == (1, 0)).unwrap();
        assert!((attrs.row(e01)[1] - 90.0).abs() < 1e-9);
        assert!((attrs.row(e10)[1] - 270.0).abs() < 1e-9);
    }

    #[test]
    fn time_sim_examples() {
        let mut a = vec![0.0; 168];
        a[0] = 2.0;
        let mut b = vec![0.0; 168];
        b[0] = 1.0;
        let mut c = vec![0.0; 168];
        c[5] = 3.0;
        let zero = vec![0.0; 168];
        let rel = build_poi_time_sim(&[a.clone(), b, c, zero], 2).unwrap();
        let attrs = rel.attrs.as_ref().unwrap();
        for (e, (u, v)) in rel.edges().enumerate() {
            assert_ne!(u, 3);
            assert_ne!(v, 3);
            let want = if (u, v) == (0, 1) || (u, v) == (1, 0) { 1.0 } else { 0.0 };
            assert!((attrs.row(e)[0] - want).abs() < 1e-12, "{u}->{v}");
        }
        // disjoint-support peers still fill the top-K
        assert!(rel.edges().any(|e| e == (2, 0)));
        let mut neg = a;
        neg[3] = -1.0;
        assert!(build_poi_time_sim(&[neg], 1).is_err());
    }

    fn rec(poi: usize, origin: usize, count: f64) -> CovisitRecord {
        CovisitRecord {
            poi,
            origin_cbg: origin,
            brand: "acme".into(),
            count,
        }
    }

    #[test]
    fn brand_weight_is_min_count() {
        let rel = build_poi_brand(&[rec(0, 0, 3.0), rec(1, 0, 2.0)]).unwrap();
        assert_eq!(rel.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 0)]);
        assert_eq!(rel.attrs.unwrap().values, vec![2.0, 2.0]);

        let lonely = build_poi_brand(&[rec(0, 0, 3.0), rec(1, 1, 2.0)]).unwrap();
        assert_eq!(lonely.num_edges(), 0);

        let summed = build_poi_brand(&[rec(0, 0, 3.0), rec(1, 0, 2.0), rec(0, 1, 1.0), rec(1, 1, 5.0)]).unwrap();
        assert_eq!(summed.attrs.unwrap().values, vec![3.0, 3.0]);
    }

    fn square(x: f64, y: f64) -> Vec<[f64; 2]> {
        vec![[x, y], [x + 1.0, y], [x + 1.0, y + 1.0], [x, y + 1.0], [x, y]]
    }

    #[test]
    fn rook_contiguity_on_grid() {
        let rings = vec![square(0.0, 0.0), square(1.0, 0.0), square(0.0, 1.0), square(1.0, 1.0)];
        let pairs = rook_adjacency(&rings);
        // diagonals only touch at a point
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
        let ids = NodeSet::new(NodeType::Cbg, (0..4).map(|i| i.to_string()).collect()).unwrap();
        let rel = build_cbg_adjacency(&ids, &AdjacencyInput::Polygons(rings)).unwrap();
        assert_eq!(rel.num_edges(), 8);

        let iso = vec![square(0.0, 0.0), square(5.0, 5.0)];
        assert!(rook_adjacency(&iso).is_empty());
    }

    #[test]
    fn adjacency_pairs_are_symmetrized_and_deduplicated() {
        let ids = NodeSet::new(NodeType::Cbg, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let input = AdjacencyInput::Pairs(vec![
            ("a".into(), "b".into()),
            ("b".into(), "a".into()),
            ("b".into(), "c".into()),
        ]);
        let rel = build_cbg_adjacency(&ids, &input).unwrap();
        assert_eq!(rel.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
        let bad = AdjacencyInput::Pairs(vec![("a".into(), "zz".into())]);
        assert!(matches!(build_cbg_adjacency(&ids, &bad), Err(Error::Validation(_))));
    }

    #[test]
    fn cross_edges_examples() {
        let cbg = [[0.0, 0.0], [100.0, 0.0], [300.0, 0.0]];
        let poi = [[10.0, 0.0], [290.0, 5.0]];
        let (belong, knn) = build_cross_edges(&poi, &cbg, &[Some(0), Some(2)], 3).unwrap();
        assert_eq!(belong.edges().collect::<Vec<_>>(), vec![(0, 0), (1, 2)]);
        assert_eq!(knn.num_edges(), 6);
        // home CBG is the nearest centroid here, so it ranks first
        assert_eq!(knn.dst[0], 0);
        assert_eq!(knn.dst[3], 2);
        assert!(knn.attrs.as_ref().unwrap().values.iter().all(|&d| d >= 0.0));
        assert!(build_cross_edges(&poi, &cbg, &[Some(0), None], 1).is_err());
    }

    proptest! {
        #[test]
        fn geo_knn_distances_nondecreasing(coords in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 4..20), k in 1usize..4) {
            let pts: Vec<GeoPoint> = coords.iter().map(|&(a, b)| GeoPoint { lat: a, lon: b }).collect();
            let lists = geo_knn_directed(&pts, k).unwrap();
            for (i, l) in lists.iter().enumerate() {
                prop_assert_eq!(l.len(), k);
                let d: Vec<f64> = l.iter().map(|&j| haversine_km(pts[i], pts[j])).collect();
                prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
            }
            let rel = build_poi_geo_knn(&pts, k).unwrap();
            prop_assert!(rel.is_symmetric());
            prop_assert!(!rel.has_self_loops());
        }
    }
}
