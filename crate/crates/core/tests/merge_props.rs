use nebpeak::merge::{build_groups, merge_all, merge_peaks, regions_adjacent, spectral_similarity};
use nebpeak::{Peak, PeakRegion, ShapeFamily, Spectrum};
use proptest::prelude::*;

fn arb_spectrum() -> impl Strategy<Value = Spectrum> {
    prop::collection::btree_map(40u32..80, 0.1..100.0f64, 1..8)
        .prop_map(|m| Spectrum::new(m.into_iter().map(|(mz, x)| (mz as f64, x)).collect()))
}

fn arb_region() -> impl Strategy<Value = (usize, usize, usize)> {
    (0usize..4, 0usize..20, 1usize..6)
}

fn peak(id: usize, region_id: usize, height: f64, area: f64, spectrum: Spectrum) -> Peak {
    Peak {
        id,
        row: 0,
        apex_col: 0,
        rt1: 0.0,
        rt2: 0.0,
        height,
        area,
        abundance: 1.0,
        region_id,
        component: 0,
        family: ShapeFamily::Gmm,
        weight: 1.0,
        spectrum,
    }
}

fn arb_case() -> impl Strategy<Value = (Vec<PeakRegion>, Vec<Peak>)> {
    prop::collection::vec(arb_region(), 1..6).prop_flat_map(|shape| {
        let n = shape.len();
        let regions: Vec<PeakRegion> = shape
            .iter()
            .enumerate()
            .map(|(i, &(row, start, len))| PeakRegion {
                id: i,
                row,
                region_index: i,
                col_start: start,
                col_end: start + len - 1,
                values: vec![1.0; len],
            })
            .collect();
        let peaks = prop::collection::vec((0..n, 1u32..1000, 1u32..4096, arb_spectrum()), 1..10).prop_map(|ps| {
            ps.into_iter()
                .enumerate()
                .map(|(i, (r, h, a, s))| peak(i, r, h as f64, a as f64 / 1024.0, s))
                .collect::<Vec<_>>()
        });
        (Just(regions), peaks)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn similarity_is_symmetric_and_scale_invariant(a in arb_spectrum(), b in arb_spectrum(), c in 0.01..100.0f64) {
        let ab = spectral_similarity(&a, &b).unwrap();
        prop_assert!((ab - spectral_similarity(&b, &a).unwrap()).abs() <= 1e-12);
        let scaled = Spectrum::new(b.peaks.iter().map(|&(mz, x)| (mz, c * x)).collect());
        prop_assert!((ab - spectral_similarity(&a, &scaled).unwrap()).abs() <= 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&ab));
        prop_assert!((spectral_similarity(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn groups_partition_peaks_and_follow_adjacency((regions, peaks) in arb_case()) {
        for a in &regions {
            for b in &regions {
                prop_assert_eq!(regions_adjacent(a, b), regions_adjacent(b, a));
            }
        }
        let groups = build_groups(&peaks, &regions).unwrap();
        let mut seen: Vec<usize> = groups.iter().flat_map(|g| g.peak_ids.clone()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..peaks.len()).collect::<Vec<_>>());
        // peaks in adjacent regions never land in different groups
        let group_of = |pid: usize| groups.iter().position(|g| g.peak_ids.contains(&pid)).unwrap();
        for p in &peaks {
            for q in &peaks {
                if regions_adjacent(&regions[p.region_id], &regions[q.region_id]) || p.region_id == q.region_id {
                    prop_assert_eq!(group_of(p.id), group_of(q.id));
                }
            }
        }
    }

    #[test]
    fn merging_conserves_area_and_never_adds_peaks((regions, peaks) in arb_case(), cutoff in 0.5..1.0f64) {
        let table = merge_all(&peaks, &regions, cutoff).unwrap();
        prop_assert!(table.len() <= peaks.len());
        let before: f64 = peaks.iter().map(|p| p.area).sum();
        prop_assert_eq!(table.total_area(), before);
        for (p, members) in table.peaks.iter().zip(&table.provenance) {
            let top = members.iter().map(|&m| peaks[m].height).fold(f64::MIN, f64::max);
            prop_assert_eq!(p.height, top);
            prop_assert!(members.contains(&p.id));
        }
    }
}

#[test]
fn all_similar_group_collapses_to_one() {
    let s = Spectrum::new(vec![(41.0, 10.0), (43.0, 50.0), (57.0, 20.0)]);
    let members: Vec<Peak> = (0..6)
        .map(|i| {
            let scaled = Spectrum::new(s.peaks.iter().map(|&(mz, x)| (mz, x * (i + 1) as f64)).collect());
            peak(i, 0, 10.0 + i as f64, 0.25, scaled)
        })
        .collect();
    let merged = merge_peaks(&members, 0.95);
    assert_eq!(merged.len(), 1);
    assert_eq!(merged[0].peak.height, 15.0);
    assert_eq!(merged[0].peak.area, 1.5);
    assert_eq!(merged[0].members.len(), 6);
}
