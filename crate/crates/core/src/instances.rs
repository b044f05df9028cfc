//! Persistent object instances: connected components of same-class stable
//! surfels, matched across extractions by shared surfel ids.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::Vector3;

use crate::surfel_map::{InstanceId, SurfelId, SurfelMap};

/// Two stable surfels of the same class closer than this are linked.
pub const LINK_DISTANCE: f64 = 0.1;
pub const MIN_INSTANCE_SIZE: usize = 30;
/// Minimum shared fraction of the smaller instance for a match.
pub const MIN_OVERLAP: f64 = 0.25;
pub const DORMANT_CAPACITY: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    /// `None` until assigned by an [`InstanceRegistry`].
    pub id: Option<InstanceId>,
    pub class: usize,
    /// Ascending.
    pub members: Vec<SurfelId>,
    pub centroid: Vector3<f64>,
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub first_seen: usize,
    pub last_seen: usize,
}

impl ObjectInstance {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    fn from_members(map: &SurfelMap, class: usize, members: Vec<SurfelId>, frame: usize) -> Self {
        let mut sum = Vector3::zeros();
        let mut min = Vector3::repeat(f64::INFINITY);
        let mut max = Vector3::repeat(f64::NEG_INFINITY);
        for &id in &members {
            let p = map.get(id).expect("member is live").position;
            sum += p;
            min = min.inf(&p);
            max = max.sup(&p);
        }
        ObjectInstance {
            id: None,
            class,
            centroid: sum / members.len() as f64,
            members,
            min,
            max,
            first_seen: frame,
            last_seen: frame,
        }
    }
}

/// Union-find with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    pub fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }
}

/// Groups stable surfels into same-class connected components within
/// `link` meters, dropping components below `min_size`.
///
/// Components are ordered by descending size, then by smallest member id.
pub fn extract_instances_with(map: &SurfelMap, min_size: usize, link: f64) -> Vec<ObjectInstance> {
    let cfg = *map.config();
    let stable: Vec<(SurfelId, usize)> = map
        .iter()
        .filter(|s| s.is_stable(&cfg))
        .map(|s| (s.id, s.classes.argmax().0))
        .collect();
    let slot: HashMap<SurfelId, usize> = stable.iter().enumerate().map(|(i, &(id, _))| (id, i)).collect();
    let positions: Vec<Vector3<f64>> = stable.iter().map(|&(id, _)| map.get(id).expect("live").position).collect();
    // Any two points in a cell of side link/sqrt(3) are within `link`.
    let side = link / 3f64.sqrt();
    let reach = (link / side).ceil() as i64;
    let mut cells: BTreeMap<(i64, i64, i64, usize), Vec<usize>> = BTreeMap::new();
    for (i, p) in positions.iter().enumerate() {
        let k = p.map(|c| (c / side).floor() as i64);
        cells.entry((k.x, k.y, k.z, stable[i].1)).or_default().push(i);
    }
    let mut sets = DisjointSets::new(stable.len());
    for members in cells.values() {
        for &j in &members[1..] {
            sets.union(members[0], j);
        }
    }
    let link2 = link * link;
    for (&(x, y, z, class), members) in &cells {
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if (dx, dy, dz) <= (0, 0, 0) {
                        continue;
                    }
                    let Some(others) = cells.get(&(x + dx, y + dy, z + dz, class)) else {
                        continue;
                    };
                    if sets.find(members[0]) == sets.find(others[0]) {
                        continue;
                    }
                    let linked = members
                        .iter()
                        .any(|&i| others.iter().any(|&j| (positions[i] - positions[j]).norm_squared() <= link2));
                    if linked {
                        sets.union(members[0], others[0]);
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<SurfelId>> = BTreeMap::new();
    for (i, &(id, _)) in stable.iter().enumerate() {
        groups.entry(sets.find(i)).or_default().push(id);
    }
    let mut out: Vec<ObjectInstance> = groups
        .into_values()
        .filter(|m| m.len() >= min_size)
        .map(|members| {
            let class = stable[slot[&members[0]]].1;
            ObjectInstance::from_members(map, class, members, map.frame)
        })
        .collect();
    out.sort_by(|a, b| b.size().cmp(&a.size()).then(a.members[0].cmp(&b.members[0])));
    out
}

pub fn extract_instances(map: &SurfelMap, min_size: usize) -> Vec<ObjectInstance> {
    extract_instances_with(map, min_size, LINK_DISTANCE)
}

/// Result of matching one extraction against the registry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    /// `(index into current, inherited id)`.
    pub inherited: Vec<(usize, InstanceId)>,
    /// `(index into current, fresh id)`.
    pub fresh: Vec<(usize, InstanceId)>,
}

/// Keeps instance identity across extractions, including for objects that
/// are currently out of view.
#[derive(Debug, Clone)]
pub struct InstanceRegistry {
    known: BTreeMap<InstanceId, ObjectInstance>,
    active: BTreeSet<InstanceId>,
    next_id: u32,
    capacity: usize,
    min_overlap: f64,
}

impl Default for InstanceRegistry {
    fn default() -> Self {
        Self::new(DORMANT_CAPACITY)
    }
}

impl InstanceRegistry {
    pub fn new(capacity: usize) -> Self {
        InstanceRegistry {
            known: BTreeMap::new(),
            active: BTreeSet::new(),
            next_id: 1,
            capacity,
            min_overlap: MIN_OVERLAP,
        }
    }

    pub fn active(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.active.iter().map(|id| &self.known[id])
    }

    pub fn dormant(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.known.iter().filter(|(id, _)| !self.active.contains(id)).map(|(_, i)| i)
    }

    /// All instances ever seen that are still remembered, by id.
    pub fn all(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.known.values()
    }

    pub fn get(&self, id: InstanceId) -> Option<&ObjectInstance> {
        self.known.get(&id)
    }

    /// Assigns ids to `current` in place, updates the registry, and returns
    /// the assignment.
    pub fn update(&mut self, current: &mut [ObjectInstance], frame: usize) -> Assignment {
        let previous: Vec<&ObjectInstance> = self.known.values().collect();
        let assignment = match_instances_with(&previous, current, &mut self.next_id, self.min_overlap);
        for &(i, id) in &assignment.inherited {
            let first = self.known[&id].first_seen;
            current[i].id = Some(id);
            current[i].first_seen = first;
            current[i].last_seen = frame;
        }
        for &(i, id) in &assignment.fresh {
            current[i].id = Some(id);
            current[i].first_seen = frame;
            current[i].last_seen = frame;
        }
        self.active.clear();
        for inst in current.iter() {
            let id = inst.id.expect("assigned");
            self.known.insert(id, inst.clone());
            self.active.insert(id);
        }
        self.evict();
        assignment
    }

    fn evict(&mut self) {
        let dormant = self.known.len() - self.active.len();
        if dormant <= self.capacity {
            return;
        }
        let mut candidates: Vec<(usize, InstanceId)> = self
            .dormant()
            .map(|i| (i.last_seen, i.id.expect("assigned")))
            .collect();
        candidates.sort();
        for (_, id) in candidates.into_iter().take(dormant - self.capacity) {
            self.known.remove(&id);
        }
    }

    /// Writes instance ids into member surfels; clears stale ones.
    pub fn label_map(&self, map: &mut SurfelMap) {
        for s in map.iter_mut() {
            s.instance = None;
        }
        for inst in self.active() {
            for &m in &inst.members {
                if let Some(s) = map.get_mut(m) {
                    s.instance = inst.id;
                }
            }
        }
    }
}

fn overlap(a: &[SurfelId], b: &[SurfelId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Greedy one-to-one matching by descending shared-surfel count.
///
/// Ties go to the smaller previous id, then to the current instance whose
/// centroid is lexicographically smaller. Previous instances must carry ids.
pub fn match_instances(previous: &[ObjectInstance], current: &[ObjectInstance], next_id: &mut u32) -> Assignment {
    let prev: Vec<&ObjectInstance> = previous.iter().collect();
    match_instances_with(&prev, current, next_id, MIN_OVERLAP)
}

fn match_instances_with(
    previous: &[&ObjectInstance],
    current: &[ObjectInstance],
    next_id: &mut u32,
    min_overlap: f64,
) -> Assignment {
    let mut candidates = Vec::new();
    for (pi, p) in previous.iter().enumerate() {
        let pid = p.id.expect("previous instances carry ids");
        for (ci, c) in current.iter().enumerate() {
            if p.class != c.class {
                continue;
            }
            let shared = overlap(&p.members, &c.members);
            if shared == 0 {
                continue;
            }
            let smaller = p.size().min(c.size()) as f64;
            if (shared as f64) >= min_overlap * smaller {
                candidates.push((shared, pid, pi, ci));
            }
        }
    }
    let lex = |v: &Vector3<f64>, w: &Vector3<f64>| {
        v.x.total_cmp(&w.x).then(v.y.total_cmp(&w.y)).then(v.z.total_cmp(&w.z))
    };
    candidates.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then_with(|| lex(&current[a.3].centroid, &current[b.3].centroid))
            .then(a.3.cmp(&b.3))
    });
    let mut used_prev = vec![false; previous.len()];
    let mut used_cur = vec![false; current.len()];
    let mut out = Assignment::default();
    for (_, pid, pi, ci) in candidates {
        if used_prev[pi] || used_cur[ci] {
            continue;
        }
        used_prev[pi] = true;
        used_cur[ci] = true;
        out.inherited.push((ci, pid));
    }
    for (ci, used) in used_cur.iter().enumerate() {
        if !used {
            out.fresh.push((ci, InstanceId(*next_id)));
            *next_id += 1;
        }
    }
    out.inherited.sort();
    out
}
