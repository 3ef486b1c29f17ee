use serde::{Deserialize, Serialize};

use super::LinkParams;
use crate::segment2d::{overlap_fraction_with, Plane2DObject};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkKind {
    /// Best forward successor of `from`.
    Primary,
    /// `to` had no incoming link and was attached to its best predecessor.
    Adopted,
    /// Competitor within `delta1` of the best; evidence only, not a join.
    Ambiguous,
    /// Skips one plane.
    Bridged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    pub overlap: f64,
    pub kind: LinkKind,
}

impl Link {
    pub fn joins(&self) -> bool {
        self.kind != LinkKind::Ambiguous
    }
}

/// Objects indexed by id, plus the links between them.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGraph {
    pub objects: Vec<Plane2DObject>,
    /// Start of each plane's objects in `objects`; one extra entry at the end.
    pub plane_start: Vec<usize>,
    pub links: Vec<Link>,
}

impl LinkGraph {
    pub fn plane(&self, z: usize) -> &[Plane2DObject] {
        &self.objects[self.plane_start[z]..self.plane_start[z + 1]]
    }

    pub fn nz(&self) -> usize {
        self.plane_start.len() - 1
    }
}

fn best_of(candidates: &[(usize, f64)]) -> Option<(usize, f64)> {
    // Highest overlap; lower id on ties.
    candidates
        .iter()
        .copied()
        .fold(None, |acc: Option<(usize, f64)>, c| match acc {
            Some(a) if a.1 >= c.1 => Some(a),
            _ => Some(c),
        })
}

/// Links objects on consecutive planes. `objects_by_plane[z]` holds plane z's
/// objects; ids are reassigned to `0..N` in plane order.
pub fn link_planes(objects_by_plane: Vec<Vec<Plane2DObject>>, params: &LinkParams) -> LinkGraph {
    let mut plane_start = Vec::with_capacity(objects_by_plane.len() + 1);
    let mut objects = Vec::new();
    for (z, plane) in objects_by_plane.into_iter().enumerate() {
        plane_start.push(objects.len());
        for mut o in plane {
            o.z = z;
            o.id = objects.len();
            objects.push(o);
        }
    }
    plane_start.push(objects.len());
    let mut graph = LinkGraph {
        objects,
        plane_start,
        links: Vec::new(),
    };
    let nz = graph.nz();
    let overlaps = |a: &Plane2DObject, plane: &[Plane2DObject]| -> Vec<(usize, f64)> {
        plane
            .iter()
            .filter_map(|b| {
                let f = overlap_fraction_with(a, b, params.overlap_mode);
                (f > 0.0 && f >= params.delta2).then_some((b.id, f))
            })
            .collect()
    };

    let mut has_pred = vec![false; graph.objects.len()];
    let mut has_succ = vec![false; graph.objects.len()];
    let mut links = Vec::new();
    for z in 0..nz.saturating_sub(1) {
        let next = graph.plane(z + 1);
        for a in graph.plane(z) {
            let cands = overlaps(a, next);
            let Some((best, fbest)) = best_of(&cands) else {
                continue;
            };
            links.push(Link {
                from: a.id,
                to: best,
                overlap: fbest,
                kind: LinkKind::Primary,
            });
            has_pred[best] = true;
            has_succ[a.id] = true;
            for &(b, f) in &cands {
                if b != best && fbest - f <= params.delta1 + 1e-12 {
                    links.push(Link {
                        from: a.id,
                        to: b,
                        overlap: f,
                        kind: LinkKind::Ambiguous,
                    });
                }
            }
        }
        // Objects that nobody chose attach to their best predecessor.
        let prev = graph.plane(z);
        for b in next {
            if has_pred[b.id] {
                continue;
            }
            if let Some((a, f)) = best_of(&overlaps(b, prev)) {
                links.retain(|l| !(l.kind == LinkKind::Ambiguous && l.from == a && l.to == b.id));
                links.push(Link {
                    from: a,
                    to: b.id,
                    overlap: f,
                    kind: LinkKind::Adopted,
                });
                has_pred[b.id] = true;
                has_succ[a] = true;
            }
        }
    }

    if params.bridge_gaps {
        for z in 0..nz.saturating_sub(2) {
            let skip = graph.plane(z + 2);
            for a in graph.plane(z) {
                if has_succ[a.id] {
                    continue;
                }
                let cands: Vec<_> = overlaps(a, skip).into_iter().filter(|&(b, _)| !has_pred[b]).collect();
                if let Some((b, f)) = best_of(&cands) {
                    links.push(Link {
                        from: a.id,
                        to: b,
                        overlap: f,
                        kind: LinkKind::Bridged,
                    });
                    has_pred[b] = true;
                    has_succ[a.id] = true;
                }
            }
        }
    }
    graph.links = links;
    graph
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruct::tests::square;

    fn rect(x0: usize, y0: usize, w: usize, h: usize) -> Plane2DObject {
        let px = (y0..y0 + h).flat_map(|y| (x0..x0 + w).map(move |x| (x + 100 * y) as u32)).collect();
        Plane2DObject::from_pixels(0, 0, 100, px)
    }

    fn kinds(g: &LinkGraph) -> Vec<(usize, usize, LinkKind)> {
        g.links.iter().map(|l| (l.from, l.to, l.kind)).collect()
    }

    #[test]
    fn weak_overlap_terminates() {
        // 10x10 squares sharing a 1x10 strip: overlap 0.1 < 0.2.
        let g = link_planes(vec![vec![rect(0, 0, 10, 10)], vec![rect(9, 0, 10, 10)]], &LinkParams::default());
        assert!(g.links.is_empty());
    }

    #[test]
    fn single_strong_successor() {
        let g = link_planes(vec![vec![rect(0, 0, 10, 10)], vec![rect(1, 0, 10, 10)]], &LinkParams::default());
        assert_eq!(kinds(&g), vec![(0, 1, LinkKind::Primary)]);
        assert!((g.links[0].overlap - 0.9).abs() < 1e-12);
    }

    #[test]
    fn near_competitor_is_ambiguous() {
        // a = 20x10 block. b covers 60% of a 10x10 square inside a, c 50%.
        let a = rect(0, 0, 20, 10);
        // b: 10x10 at x 0..10, of which rows 0..6 lie in a (6 rows of 10).
        let b = rect(0, 4, 10, 10);
        // c: 10x10 at x 10..20, rows 5..15, of which 5 rows lie in a.
        let c = rect(10, 5, 10, 10);
        assert_eq!(a.intersection(&b), 60);
        assert_eq!(a.intersection(&c), 50);
        let g = link_planes(vec![vec![a], vec![b, c]], &LinkParams::default());
        assert_eq!(
            kinds(&g),
            vec![(0, 1, LinkKind::Primary), (0, 2, LinkKind::Adopted)],
            "orphan c is adopted by its only predecessor"
        );
        // Without adoption pressure (c has its own predecessor) the edge stays ambiguous.
        let a2 = rect(0, 0, 20, 10);
        let d = rect(10, 12, 10, 10);
        let g = link_planes(
            vec![vec![a2, d], vec![rect(0, 4, 10, 10), rect(10, 5, 10, 10)]],
            &LinkParams::default(),
        );
        let k = kinds(&g);
        assert!(k.contains(&(0, 2, LinkKind::Primary)));
        assert!(k.contains(&(0, 3, LinkKind::Ambiguous)));
        assert!(k.contains(&(1, 3, LinkKind::Primary)));
    }

    #[test]
    fn ambiguity_window_is_delta1() {
        let a = rect(0, 0, 20, 10);
        let b = rect(0, 4, 10, 10); // 0.6
        let c = rect(10, 7, 10, 10); // 0.3
        let d = rect(10, 14, 10, 10);
        let g = link_planes(vec![vec![a, d], vec![b, c]], &LinkParams::default());
        assert!(!kinds(&g).iter().any(|k| k.2 == LinkKind::Ambiguous));
    }

    #[test]
    fn bridging_skips_one_plane() {
        let planes = vec![vec![square(0, 0, 0, 0, 5, 100)], vec![], vec![square(0, 0, 0, 0, 5, 100)]];
        assert!(link_planes(planes.clone(), &LinkParams::default()).links.is_empty());
        let p = LinkParams {
            bridge_gaps: true,
            ..LinkParams::default()
        };
        assert_eq!(kinds(&link_planes(planes, &p)), vec![(0, 1, LinkKind::Bridged)]);
    }
}
