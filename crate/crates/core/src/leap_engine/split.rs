//! Adaptive area splitting.

use super::area::AreaState;

/// A contiguous migration unit as seen from outside the engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Area {
    pub voffset: usize,
    pub length: usize,
    pub retries: u32,
    pub state: AreaState,
}

impl Area {
    pub fn new(voffset: usize, length: usize) -> Self {
        Area {
            voffset,
            length,
            retries: 0,
            state: AreaState::Idle,
        }
    }

    pub fn end(&self) -> usize {
        self.voffset + self.length
    }
}

/// Child page counts when `pages` are split `factor` ways: `min(factor,
/// pages)` children, the first `pages % k` of them one page longer.
pub fn child_pages(pages: usize, factor: usize) -> impl Iterator<Item = usize> {
    assert!(factor >= 2, "reduction factor must be at least 2");
    let k = factor.min(pages).max(1);
    let base = pages / k;
    let rem = pages % k;
    (0..k).map(move |i| base + usize::from(i < rem))
}

/// Index of the child holding relative page `page` of a parent of `pages`
/// pages split `factor` ways.
pub fn child_containing(pages: usize, factor: usize, page: usize) -> usize {
    debug_assert!(page < pages);
    let k = factor.min(pages);
    let base = pages / k;
    let rem = pages % k;
    let long_span = rem * (base + 1);
    if page < long_span {
        page / (base + 1)
    } else {
        rem + (page - long_span) / base
    }
}

/// Splits a dirty area for its retry. Areas longer than one page are cut into
/// `min(factor, pages)` near-equal children; a one-page area comes back
/// unchanged. Every returned area is `Idle` with one more retry than the
/// parent.
pub fn split_area(area: &Area, factor: usize, page_size: usize) -> Vec<Area> {
    assert!(factor >= 2, "reduction factor must be at least 2");
    debug_assert!(area.length.is_multiple_of(page_size) && area.length >= page_size);
    let retries = area.retries + 1;
    let pages = area.length / page_size;
    if pages == 1 {
        return vec![Area {
            retries,
            state: AreaState::Idle,
            ..*area
        }];
    }
    let mut voffset = area.voffset;
    child_pages(pages, factor)
        .map(|p| {
            let child = Area {
                voffset,
                length: p * page_size,
                retries,
                state: AreaState::Idle,
            };
            voffset += child.length;
            child
        })
        .collect()
}

/// Partitions `[0, length)` into areas of `initial` bytes, the last one
/// possibly shorter.
pub fn initial_areas(length: usize, initial: usize) -> Vec<Area> {
    (0..length)
        .step_by(initial.max(1))
        .map(|o| Area::new(o, initial.min(length - o)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: usize = 4096;
    const MIB: usize = 1024 * 1024;

    #[test]
    fn halves_a_16_mib_area() {
        let parts = split_area(&Area::new(0, 16 * MIB), 2, P);
        assert_eq!(parts.len(), 2);
        assert!(parts.iter().all(|a| a.length == 8 * MIB && a.retries == 1));
        assert_eq!(parts[1].voffset, 8 * MIB);
    }

    #[test]
    fn remainder_goes_to_the_first_child() {
        let parts = split_area(&Area::new(P, 3 * P), 2, P);
        assert_eq!(
            parts.iter().map(|a| (a.voffset, a.length)).collect::<Vec<_>>(),
            vec![(P, 2 * P), (3 * P, P)]
        );
    }

    #[test]
    fn single_page_floor() {
        let mut a = Area::new(5 * P, P);
        a.retries = 3;
        a.state = AreaState::Dirty;
        let parts = split_area(&a, 2, P);
        assert_eq!(
            parts,
            vec![Area {
                retries: 4,
                state: AreaState::Idle,
                ..a
            }]
        );
    }

    #[test]
    fn initial_partition() {
        let areas = initial_areas(4 * 1024 * MIB, 16 * MIB);
        assert_eq!(areas.len(), 256);
        let areas = initial_areas(10 * P, 4 * P);
        assert_eq!(
            areas.iter().map(|a| a.length).collect::<Vec<_>>(),
            vec![4 * P, 4 * P, 2 * P]
        );
        assert!(initial_areas(0, 16 * MIB).is_empty());
    }

    #[test]
    fn child_lookup_matches_split() {
        for pages in 1..40 {
            for factor in 2..9 {
                let parent = Area::new(0, pages * P);
                let kids = if pages == 1 {
                    vec![parent]
                } else {
                    split_area(&parent, factor, P)
                };
                for page in 0..pages {
                    let idx = child_containing(pages, factor, page);
                    let kid = kids[idx];
                    assert!(kid.voffset <= page * P && page * P < kid.end());
                }
            }
        }
    }
}
