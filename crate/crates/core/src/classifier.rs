//! Resident subtype assignment from crime-site geometry.

use serde::{Deserialize, Serialize};

use crate::dataset::CrimeSeries;
use crate::error::{Error, Result};
use crate::geodesy::UtmPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subtype {
    /// No buffer zone, compact sites.
    M1,
    /// Buffer zone, irregularly spaced sites.
    M2,
    /// Two or more clusters of sites.
    M3,
}

impl std::fmt::Display for Subtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Subtype::M1 => "M1",
            Subtype::M2 => "M2",
            Subtype::M3 => "M3",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtypeLabel {
    pub kind: Subtype,
    /// Site-index sets, nonempty only for `M3`.
    pub clusters: Vec<Vec<usize>>,
}

impl SubtypeLabel {
    pub fn simple(kind: Subtype) -> Self {
        Self {
            kind,
            clusters: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Linkage and nearest-neighbour threshold in km.
    pub cutoff_km: f64,
    /// Minimum share of sites a single cluster must cover for `M1`.
    pub m1_coverage: f64,
    /// Minimum share of sites two or more clusters must cover for `M3`.
    pub m3_coverage: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            cutoff_km: 2.0,
            m1_coverage: 0.8,
            m3_coverage: 0.6,
        }
    }
}

/// Resident or non-resident, known only when the anchor is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Residency {
    Resident,
    NonResident,
}

pub const NON_RESIDENT_DISTANCE_KM: f64 = 10.0;

/// Non-resident when every crime lies more than 10 km from the anchor.
/// Reads the ground-truth anchor, so it is only used for donor partitioning
/// and evaluation scope, never inside a method surface.
pub fn ground_truth_residency(series: &CrimeSeries) -> Option<Residency> {
    let anchor = series.anchor?;
    let nearest = series
        .sites
        .iter()
        .map(|s| s.distance(&anchor))
        .fold(f64::INFINITY, f64::min);
    Some(if nearest > NON_RESIDENT_DISTANCE_KM {
        Residency::NonResident
    } else {
        Residency::Resident
    })
}

/// Distance from each site to its nearest other site under `metric`.
pub fn nn_distances_with<F>(sites: &[UtmPoint], metric: F) -> Result<Vec<f64>>
where
    F: Fn(&UtmPoint, &UtmPoint) -> f64,
{
    if sites.len() < 2 {
        return Err(Error::InsufficientData(
            "nearest-neighbour distances need at least 2 sites".into(),
        ));
    }
    Ok(sites
        .iter()
        .enumerate()
        .map(|(i, a)| {
            sites
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| metric(a, b))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Euclidean nearest-neighbour distances.
pub fn nn_distances(sites: &[UtmPoint]) -> Result<Vec<f64>> {
    nn_distances_with(sites, UtmPoint::distance)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage components under `distance <= cutoff`. Singletons are
/// dropped; clusters are ordered by their smallest site index.
pub fn detect_clusters(sites: &[UtmPoint], cutoff: f64) -> Vec<Vec<usize>> {
    let n = sites.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if sites[i].distance(&sites[j]) <= cutoff {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(i);
    }
    groups.retain(|g| g.len() >= 2);
    groups
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn classify(sites: &[UtmPoint], config: &ClassifierConfig) -> Result<SubtypeLabel> {
    if sites.len() < 3 {
        return Err(Error::InsufficientData("classification needs at least 3 sites".into()));
    }
    let n = sites.len() as f64;
    let mut nn = nn_distances(sites)?;
    let median_nn = median(&mut nn);
    let clusters = detect_clusters(sites, config.cutoff_km);
    let covered = clusters.iter().map(Vec::len).sum::<usize>() as f64;

    if median_nn <= config.cutoff_km && clusters.len() <= 1 && covered >= config.m1_coverage * n {
        return Ok(SubtypeLabel::simple(Subtype::M1));
    }
    if clusters.len() >= 2 && covered >= config.m3_coverage * n {
        return Ok(SubtypeLabel {
            kind: Subtype::M3,
            clusters,
        });
    }
    Ok(SubtypeLabel::simple(Subtype::M2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(e: f64, n: f64) -> UtmPoint {
        UtmPoint::new(18, e, n)
    }

    #[test]
    fn nn_collinear() {
        let s = [pt(0.0, 0.0), pt(1.0, 0.0), pt(3.0, 0.0)];
        assert_eq!(nn_distances(&s).unwrap(), vec![1.0, 1.0, 2.0]);
        let s = [pt(5.0, 5.0), pt(5.0, 5.0)];
        assert_eq!(nn_distances(&s).unwrap(), vec![0.0, 0.0]);
        assert!(nn_distances(&s[..1]).is_err());
    }

    #[test]
    fn nn_matches_pairwise_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s: Vec<_> = (0..10)
            .map(|_| pt(rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0)))
            .collect();
        let got = nn_distances(&s).unwrap();
        for i in 0..s.len() {
            let mut best = f64::INFINITY;
            for j in 0..s.len() {
                if i != j {
                    let d = ((s[i].easting - s[j].easting).powi(2) + (s[i].northing - s[j].northing).powi(2)).sqrt();
                    best = best.min(d);
                }
            }
            assert!((got[i] - best).abs() < 1e-12);
        }
    }

    #[test]
    fn clusters_by_construction() {
        let mut s = Vec::new();
        for i in 0..3 {
            s.push(pt(0.5 * i as f64, 0.0));
        }
        for i in 0..3 {
            s.push(pt(10.0 + 0.5 * i as f64, 0.0));
        }
        let c = detect_clusters(&s, 2.0);
        assert_eq!(c, vec![vec![0, 1, 2], vec![3, 4, 5]]);

        let tight: Vec<_> = (0..5).map(|i| pt(0.1 * i as f64, 0.05 * i as f64)).collect();
        assert_eq!(detect_clusters(&tight, 2.0).len(), 1);

        let chain: Vec<_> = (0..6).map(|i| pt(1.9 * i as f64, 0.0)).collect();
        let c = detect_clusters(&chain, 2.0);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].len(), 6);

        let isolated = [pt(0.0, 0.0), pt(5.0, 0.0), pt(10.0, 0.0)];
        assert!(detect_clusters(&isolated, 2.0).is_empty());
    }

    #[test]
    fn classify_examples() {
        let cfg = ClassifierConfig::default();
        let disc: Vec<_> = (0..8)
            .map(|k| {
                let a = k as f64 * 0.8;
                pt(0.7 * a.cos(), 0.7 * a.sin())
            })
            .collect();
        assert_eq!(classify(&disc, &cfg).unwrap().kind, Subtype::M1);

        let spread = [
            pt(0.0, 0.0),
            pt(3.5, 1.0),
            pt(9.0, -2.0),
            pt(4.0, 8.0),
            pt(-5.0, 6.0),
            pt(-4.0, -5.0),
            pt(11.5, 7.0),
            pt(2.0, -9.0),
        ];
        let nn = nn_distances(&spread).unwrap();
        assert!(nn.iter().all(|d| (3.0..=8.0).contains(d)), "{nn:?}");
        assert_eq!(classify(&spread, &cfg).unwrap().kind, Subtype::M2);

        let mut two = Vec::new();
        for i in 0..4 {
            two.push(pt(0.3 * i as f64, 0.2));
        }
        for i in 0..5 {
            two.push(pt(12.0 + 0.3 * i as f64, 0.0));
        }
        let label = classify(&two, &cfg).unwrap();
        assert_eq!(label.kind, Subtype::M3);
        assert_eq!(label.clusters.len(), 2);
        assert!(classify(&two[..2], &cfg).is_err());
    }

    proptest! {
        #[test]
        fn classify_invariant_under_rigid_motion(
            pts in proptest::collection::vec((0.0f64..15.0, 0.0f64..15.0), 3..12),
            rot in 0.0f64..6.28, tx in -100.0f64..100.0, ty in -100.0f64..100.0, shift in 0usize..12,
        ) {
            let sites: Vec<_> = pts.iter().map(|&(x, y)| pt(x, y)).collect();
            // Skip configurations with pairwise distances within rounding of the cutoff.
            for a in &sites {
                for b in &sites {
                    prop_assume!((a.distance(b) - 2.0).abs() > 1e-6);
                }
            }
            let cfg = ClassifierConfig::default();
            let base = classify(&sites, &cfg).unwrap();
            let (c, s) = (rot.cos(), rot.sin());
            let mut moved: Vec<_> = sites
                .iter()
                .map(|p| pt(c * p.easting - s * p.northing + tx, s * p.easting + c * p.northing + ty))
                .collect();
            moved.rotate_left(shift % sites.len());
            let other = classify(&moved, &cfg).unwrap();
            prop_assert_eq!(base.kind, other.kind);
            let mut a: Vec<_> = base.clusters.iter().map(Vec::len).collect();
            let mut b: Vec<_> = other.clusters.iter().map(Vec::len).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            prop_assert_eq!(classify(&sites, &cfg).unwrap(), base);
        }

        #[test]
        fn clusters_partition_sites(
            pts in proptest::collection::vec((0.0f64..20.0, 0.0f64..20.0), 2..30),
            cutoff in 0.5f64..5.0,
        ) {
            let sites: Vec<_> = pts.iter().map(|&(x, y)| pt(x, y)).collect();
            let clusters = detect_clusters(&sites, cutoff);
            let mut seen = vec![false; sites.len()];
            for c in &clusters {
                prop_assert!(c.len() >= 2);
                for &i in c {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
            }
        }
    }
}
