//! Grouping of unlabeled instance masks into hierarchical channels whose
//! members have pairwise non-overlapping convex hulls.
//!
//! Masks are sorted by decreasing area and assigned first-fit: each mask
//! joins the earliest existing set none of whose hulls it overlaps, else it
//! founds a new set. If more than the requested number of sets emerge, the
//! surplus sets are merged into the last kept one. The heuristic is known
//! to be imprecise across views; only per-image determinism is promised.

mod hull;

pub use hull::{convex_hull, hull_of_raster, hulls_overlap, point_in_hull, Point};

use crate::error::{Error, Result};
use crate::math::Grid2;

/// Masks smaller than this many pixels are treated as sensor speckle.
pub const DEFAULT_MIN_AREA: usize = 16;

#[derive(Clone, Debug)]
pub struct InstanceMask {
    pub raster: Grid2<bool>,
    pub area: usize,
    pub hull: Vec<Point>,
}

impl InstanceMask {
    pub fn from_raster(raster: Grid2<bool>) -> Result<InstanceMask> {
        let area = raster.data.iter().filter(|&&b| b).count();
        if area == 0 {
            return Err(Error::domain("instance mask has no on-pixels"));
        }
        let hull = hull_of_raster(&raster);
        Ok(InstanceMask { raster, area, hull })
    }
}

#[derive(Clone, Debug)]
pub struct MaskHierarchy {
    /// Masks that survived the speckle filter, original order.
    pub masks: Vec<InstanceMask>,
    /// Ordered sets of indices into `masks`; at most `channels` sets.
    pub sets: Vec<Vec<usize>>,
    pub channels: usize,
    /// True when surplus sets were folded into the last one; that set is
    /// then exempt from the intra-set disjointness guarantee.
    pub merged_overflow: bool,
}

/// Groups masks into at most `c` intra-disjoint sets. Ties in area break by
/// ascending mask index, making the result independent of input order up to
/// the identity of equal-area masks.
pub fn build_hierarchy(
    masks: Vec<InstanceMask>,
    c: usize,
    min_area: usize,
) -> Result<MaskHierarchy> {
    if c < 1 {
        return Err(Error::domain("at least one channel is required"));
    }
    let masks: Vec<InstanceMask> = masks.into_iter().filter(|m| m.area >= min_area).collect();
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&a, &b| masks[b].area.cmp(&masks[a].area).then(a.cmp(&b)));

    let mut sets: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        let mut placed = false;
        for set in sets.iter_mut() {
            let conflict = set.iter().any(|&j| hulls_overlap(&masks[i].hull, &masks[j].hull));
            if !conflict {
                set.push(i);
                placed = true;
                break;
            }
        }
        if !placed {
            sets.push(vec![i]);
        }
    }
    let merged_overflow = sets.len() > c;
    if merged_overflow {
        let overflow: Vec<Vec<usize>> = sets.split_off(c);
        let last = sets.last_mut().expect("c >= 1");
        for set in overflow {
            last.extend(set);
        }
    }
    Ok(MaskHierarchy { masks, sets, channels: c, merged_overflow })
}

/// Channel k is the pixelwise OR of set k's masks; always `channels`
/// rasters, trailing ones empty when fewer sets exist.
pub fn rasterize_channels(
    h: &MaskHierarchy,
    width: usize,
    height: usize,
) -> Result<Vec<Grid2<f64>>> {
    for m in &h.masks {
        if m.raster.width != width || m.raster.height != height {
            return Err(Error::domain(format!(
                "mask is {}x{}, channels requested at {width}x{height}",
                m.raster.width, m.raster.height
            )));
        }
    }
    let mut channels = vec![Grid2::filled(width, height, 0.0); h.channels];
    for (k, set) in h.sets.iter().enumerate() {
        for &i in set {
            for (dst, &on) in channels[k].data.iter_mut().zip(h.masks[i].raster.data.iter()) {
                if on {
                    *dst = 1.0;
                }
            }
        }
    }
    Ok(channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rect_mask(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> InstanceMask {
        let mut g = Grid2::filled(w, h, false);
        for y in y0..y1 {
            for x in x0..x1 {
                g.set(x, y, true);
            }
        }
        InstanceMask::from_raster(g).unwrap()
    }

    /// Direct transcription of the grouping pseudocode, used as the oracle:
    /// sort by area (stable on index), first compatible set wins, overflow
    /// sets merge into the last kept set.
    fn algorithm_oracle(masks: &[InstanceMask], c: usize) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..masks.len()).collect();
        idx.sort_by(|&a, &b| masks[b].area.cmp(&masks[a].area).then(a.cmp(&b)));
        let mut sets: Vec<Vec<usize>> = Vec::new();
        for &i in idx.iter() {
            let mut assigned = false;
            for s in sets.iter_mut() {
                let mut conflict = false;
                for &j in s.iter() {
                    if hulls_overlap(&masks[i].hull, &masks[j].hull) {
                        conflict = true;
                        break;
                    }
                }
                if !conflict {
                    s.push(i);
                    assigned = true;
                    break;
                }
            }
            if !assigned {
                sets.push(vec![i]);
            }
        }
        if sets.len() > c {
            let tail: Vec<usize> = sets[c..].iter().flatten().copied().collect();
            sets.truncate(c);
            sets[c - 1].extend(tail);
        }
        sets
    }

    fn random_instance(rng: &mut ChaCha8Rng, n_masks: usize, size: usize) -> Vec<InstanceMask> {
        let mut masks = Vec::new();
        while masks.len() < n_masks {
            let x0 = rng.gen_range(0..size - 8);
            let y0 = rng.gen_range(0..size - 8);
            let w = rng.gen_range(4..(size - x0).min(40));
            let h = rng.gen_range(4..(size - y0).min(40));
            let mut g = Grid2::filled(size, size, false);
            for y in y0..(y0 + h).min(size) {
                for x in x0..(x0 + w).min(size) {
                    // carve some pixels out so blobs are not plain rects
                    if rng.gen_bool(0.9) {
                        g.set(x, y, true);
                    }
                }
            }
            if let Ok(m) = InstanceMask::from_raster(g) {
                if m.area >= DEFAULT_MIN_AREA {
                    masks.push(m);
                }
            }
        }
        masks
    }

    #[test]
    fn empty_mask_is_domain_error() {
        let g = Grid2::filled(4, 4, false);
        assert!(matches!(InstanceMask::from_raster(g), Err(Error::Domain(_))));
    }

    #[test]
    fn two_disjoint_masks_share_a_set() {
        let a = rect_mask(32, 32, 1, 1, 6, 6);
        let b = rect_mask(32, 32, 20, 20, 28, 28);
        let h = build_hierarchy(vec![a, b], 3, 1).unwrap();
        assert_eq!(h.sets.len(), 1);
        assert_eq!(h.sets[0].len(), 2);
        let chans = rasterize_channels(&h, 32, 32).unwrap();
        assert_eq!(chans.len(), 3);
        let on: f64 = chans[0].data.iter().sum();
        assert_eq!(on, (5.0 * 5.0) + (8.0 * 8.0));
        assert!(chans[1].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cup_on_table_splits_into_two_sets() {
        // table occupies most of the frame; the cup sits inside its hull
        let table = rect_mask(64, 64, 2, 2, 62, 62);
        let cup = rect_mask(64, 64, 20, 20, 32, 32);
        let h = build_hierarchy(vec![cup, table], 3, 1).unwrap();
        assert_eq!(h.sets.len(), 2);
        // table has the larger area so it is placed first
        assert_eq!(h.sets[0], vec![1]);
        assert_eq!(h.sets[1], vec![0]);
    }

    #[test]
    fn overflow_sets_merge_into_last_channel() {
        // five mutually overlapping masks (common center) force five sets
        let masks: Vec<InstanceMask> = (0..5)
            .map(|i| rect_mask(64, 64, 20 - i, 20 - i, 44 + i, 44 + i))
            .collect();
        let h = build_hierarchy(masks, 2, 1).unwrap();
        assert_eq!(h.sets.len(), 2);
        assert_eq!(h.sets[0].len(), 1);
        assert_eq!(h.sets[1].len(), 4);
        let total: usize = h.sets.iter().map(|s| s.len()).sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn speckle_filter_drops_tiny_masks() {
        let big = rect_mask(32, 32, 0, 0, 10, 10);
        let speck = rect_mask(32, 32, 20, 20, 22, 22); // 4 px
        let h = build_hierarchy(vec![big, speck], 2, DEFAULT_MIN_AREA).unwrap();
        assert_eq!(h.masks.len(), 1);
    }

    #[test]
    fn permutation_of_inputs_does_not_change_grouping() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let masks = random_instance(&mut rng, 5, 64);
            let base = build_hierarchy(masks.clone(), 3, 1).unwrap();
            // reverse the input order; compare set contents by mask identity
            let rev: Vec<InstanceMask> = masks.iter().rev().cloned().collect();
            let flipped = build_hierarchy(rev, 3, 1).unwrap();
            let n = masks.len();
            let remap =
                |sets: &[Vec<usize>]| -> Vec<Vec<usize>> {
                    sets.iter()
                        .map(|s| {
                            let mut v: Vec<usize> = s.iter().map(|&i| n - 1 - i).collect();
                            v.sort_unstable();
                            v
                        })
                        .collect()
                };
            let base_sets: Vec<Vec<usize>> = base
                .sets
                .iter()
                .map(|s| {
                    let mut v = s.clone();
                    v.sort_unstable();
                    v
                })
                .collect();
            // areas are distinct with overwhelming probability here; when
            // they are, order-independence must hold exactly
            let areas: std::collections::HashSet<usize> =
                masks.iter().map(|m| m.area).collect();
            if areas.len() == n {
                assert_eq!(base_sets, remap(&flipped.sets));
            }
        }
    }

    #[test]
    fn matches_algorithm_transcription_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..200 {
            let n = rng.gen_range(1..=8);
            let c = rng.gen_range(1..=4);
            let masks = random_instance(&mut rng, n, 96);
            let got = build_hierarchy(masks.clone(), c, 1).unwrap();
            let want = algorithm_oracle(&masks, c);
            assert_eq!(got.sets, want, "trial {trial}");
            // totality
            let assigned: usize = got.sets.iter().map(|s| s.len()).sum();
            assert_eq!(assigned, masks.len());
            // intra-set hull disjointness holds for non-merged sets
            for (k, set) in got.sets.iter().enumerate() {
                if got.merged_overflow && k + 1 == got.sets.len() {
                    continue; // the overflow set may conflict internally
                }
                for (ai, &a) in set.iter().enumerate() {
                    for &b in &set[ai + 1..] {
                        assert!(
                            !hulls_overlap(&got.masks[a].hull, &got.masks[b].hull),
                            "trial {trial}: set {k} holds overlapping hulls"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn zero_channels_rejected() {
        assert!(matches!(build_hierarchy(vec![], 0, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = rect_mask(16, 16, 0, 0, 4, 4);
        let h = build_hierarchy(vec![m], 1, 1).unwrap();
        assert!(matches!(rasterize_channels(&h, 32, 32), Err(Error::Domain(_))));
    }
}
