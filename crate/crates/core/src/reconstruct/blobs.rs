use serde::{Deserialize, Serialize};

use super::{Blob3D, LinkGraph, SplitParams};
use crate::segment2d::Plane2DObject;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SliceDecision {
    Split,
    Continue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    /// Several objects join into one on the next plane.
    Merge,
    /// One object continues as several on the next plane.
    Branch,
}

/// A place where a blob has more than one piece on a plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEvent {
    pub kind: EventKind,
    /// Plane holding the pieces.
    pub z: usize,
    /// Member index of the single object on the other side.
    pub member: usize,
    /// Member indices of the pieces.
    pub pieces: Vec<usize>,
    pub decision: SliceDecision,
}

/// Split only if every piece is at least `beta` times the largest.
pub fn split_decision(areas: &[usize], beta: f64) -> SliceDecision {
    let Some(&largest) = areas.iter().max() else {
        return SliceDecision::Continue;
    };
    if areas.len() < 2 {
        return SliceDecision::Continue;
    }
    if areas.iter().all(|&a| a as f64 >= beta * largest as f64 - 1e-9) {
        SliceDecision::Split
    } else {
        SliceDecision::Continue
    }
}

pub fn maybe_split_at_slice(pieces: &[&Plane2DObject], params: &SplitParams) -> SliceDecision {
    let areas: Vec<usize> = pieces.iter().map(|p| p.area()).collect();
    split_decision(&areas, params.beta)
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

/// Groups linked objects into blobs, ordered by their first object; labels
/// are 1..K in that order. Merge and branch events are recorded with their
/// split decision.
pub fn build_blobs(graph: LinkGraph, params: &SplitParams) -> Vec<Blob3D> {
    let n = graph.objects.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for l in graph.links.iter().filter(|l| l.joins()) {
        let (a, b) = (find(&mut parent, l.from), find(&mut parent, l.to));
        if a != b {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            parent[hi] = lo;
        }
    }
    // Roots are the smallest id of each group, so root order is first-object order.
    let mut slot = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    let mut local = vec![usize::MAX; n];
    let mut blob_links: Vec<Vec<(usize, usize)>> = vec![Vec::new(); groups.len()];
    for g in &groups {
        for (k, &id) in g.iter().enumerate() {
            local[id] = k;
        }
    }
    for l in graph.links.iter().filter(|l| l.joins()) {
        let b = slot[find(&mut parent, l.from)];
        blob_links[b].push((local[l.from], local[l.to]));
    }

    let mut objects: Vec<Option<Plane2DObject>> = graph.objects.into_iter().map(Some).collect();
    groups
        .into_iter()
        .zip(blob_links)
        .enumerate()
        .map(|(i, (ids, mut links))| {
            links.sort_unstable();
            let members: Vec<Plane2DObject> = ids.iter().map(|&id| objects[id].take().expect("once")).collect();
            let events = find_events(&members, &links, params);
            Blob3D {
                label: i as u32 + 1,
                members,
                links,
                events,
            }
        })
        .collect()
}

pub(crate) fn find_events(members: &[Plane2DObject], links: &[(usize, usize)], params: &SplitParams) -> Vec<SliceEvent> {
    let (preds, succs) = adjacency(members.len(), links);
    let mut events = Vec::new();
    for i in 0..members.len() {
        for (kind, pieces) in [(EventKind::Merge, &preds[i]), (EventKind::Branch, &succs[i])] {
            if pieces.len() < 2 {
                continue;
            }
            let objs: Vec<&Plane2DObject> = pieces.iter().map(|&p| &members[p]).collect();
            events.push(SliceEvent {
                kind,
                z: objs[0].z,
                member: i,
                pieces: pieces.clone(),
                decision: maybe_split_at_slice(&objs, params),
            });
        }
    }
    events
}

pub(crate) fn adjacency(n: usize, links: &[(usize, usize)]) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut preds = vec![Vec::new(); n];
    let mut succs = vec![Vec::new(); n];
    for &(a, b) in links {
        succs[a].push(b);
        preds[b].push(a);
    }
    for v in preds.iter_mut().chain(succs.iter_mut()) {
        v.sort_unstable();
    }
    (preds, succs)
}
