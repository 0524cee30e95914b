//! Kagome lattices with periodic or open boundaries and optional defects.
//!
//! Unit cells are numbered row-major (`cell = y * lx + x`). Within a cell the
//! three sites are ordered top, left, right, so the raw site id of position `k`
//! in cell `(x, y)` is `3 * cell + k`. Geometrically the left site sits at the
//! cell origin, the right site one bond to its right and the top site above the
//! midpoint, with lattice vectors `a1 = (2, 0)` and `a2 = (1, sqrt 3)`.
//!
//! Removed sites are dropped and the survivors renumbered densely in raw order;
//! [`KagomeLattice::raw_ids`] maps back.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOP: usize = 0;
pub const LEFT: usize = 1;
pub const RIGHT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Boundary {
    Periodic,
    Open,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KagomeSpec {
    pub lx: usize,
    pub ly: usize,
    pub boundary: Boundary,
    #[serde(default)]
    pub removed_sites: BTreeSet<usize>,
    #[serde(default)]
    pub removed_bonds: BTreeSet<(usize, usize)>,
}

impl KagomeSpec {
    pub fn periodic(lx: usize, ly: usize) -> Self {
        Self::new(lx, ly, Boundary::Periodic)
    }

    pub fn open(lx: usize, ly: usize) -> Self {
        Self::new(lx, ly, Boundary::Open)
    }

    pub fn new(lx: usize, ly: usize, boundary: Boundary) -> Self {
        KagomeSpec { lx, ly, boundary, removed_sites: BTreeSet::new(), removed_bonds: BTreeSet::new() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("lattice spec serializes")
    }

    pub fn raw_site_count(&self) -> usize {
        3 * self.lx * self.ly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Orientation {
    Up,
    Down,
}

/// A triangle position on the lattice. Every bond belongs to exactly one slot
/// (two only for duplicated wrap bonds); a slot is a full triangle when all
/// three of its bonds survive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slot {
    pub orientation: Orientation,
    pub cell: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    /// 2 when a one-cell periodic wrap produces the same pair twice.
    pub multiplicity: u32,
    pub slot: Slot,
}

/// Corners are stored in canonical label order. Up: top, bottom-left,
/// bottom-right. Down: top-left, top-right, bottom.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triangle {
    pub slot: Slot,
    pub corners: [usize; 3],
    pub bonds: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KagomeLattice {
    pub spec: KagomeSpec,
    pub n_sites: usize,
    pub raw_ids: Vec<usize>,
    pub positions: Vec<[f64; 2]>,
    pub bonds: Vec<Bond>,
    pub up_triangles: Vec<Triangle>,
    pub down_triangles: Vec<Triangle>,
    pub coordination: Vec<u32>,
    pub bulk_sites: BTreeSet<usize>,
}

fn raw_site(spec: &KagomeSpec, x: i64, y: i64, k: usize) -> Option<usize> {
    let (lx, ly) = (spec.lx as i64, spec.ly as i64);
    let (x, y) = match spec.boundary {
        Boundary::Periodic => (x.rem_euclid(lx), y.rem_euclid(ly)),
        Boundary::Open => {
            if x < 0 || y < 0 || x >= lx || y >= ly {
                return None;
            }
            (x, y)
        }
    };
    Some(3 * (y * lx + x) as usize + k)
}

fn raw_position(spec: &KagomeSpec, raw: usize) -> [f64; 2] {
    let cell = raw / 3;
    let (x, y) = ((cell % spec.lx) as f64, (cell / spec.lx) as f64);
    let h = 3f64.sqrt();
    let origin = [2.0 * x + y, h * y];
    match raw % 3 {
        TOP => [origin[0] + 0.5, origin[1] + h / 2.0],
        LEFT => origin,
        _ => [origin[0] + 1.0, origin[1]],
    }
}

/// Raw corner ids of a slot in canonical label order, `None` where the corner
/// falls outside an open lattice.
fn slot_corners(spec: &KagomeSpec, slot: Slot) -> [Option<usize>; 3] {
    let x = (slot.cell % spec.lx) as i64;
    let y = (slot.cell / spec.lx) as i64;
    match slot.orientation {
        Orientation::Up => [raw_site(spec, x, y, TOP), raw_site(spec, x, y, LEFT), raw_site(spec, x, y, RIGHT)],
        Orientation::Down => {
            [raw_site(spec, x - 1, y, RIGHT), raw_site(spec, x, y, LEFT), raw_site(spec, x, y - 1, TOP)]
        }
    }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn build_kagome(spec: &KagomeSpec) -> Result<KagomeLattice> {
    if spec.lx == 0 || spec.ly == 0 {
        return Err(Error::InvalidLattice("lx and ly must be at least 1".into()));
    }
    let n_raw = spec.raw_site_count();
    if let Some(&s) = spec.removed_sites.iter().find(|&&s| s >= n_raw) {
        return Err(Error::InvalidLattice(format!("removed site {s} does not exist")));
    }
    let n_cells = spec.lx * spec.ly;

    // Raw bonds keyed by ordered pair, with every slot that claims them.
    let mut raw_bonds: BTreeMap<(usize, usize), (u32, Slot)> = BTreeMap::new();
    for cell in 0..n_cells {
        for orientation in [Orientation::Up, Orientation::Down] {
            let slot = Slot { orientation, cell };
            let c = slot_corners(spec, slot);
            for (i, j) in [(0, 1), (1, 2), (0, 2)] {
                let (Some(a), Some(b)) = (c[i], c[j]) else { continue };
                raw_bonds.entry(ordered(a, b)).or_insert((0, slot)).0 += 1;
            }
        }
    }
    for &(a, b) in &spec.removed_bonds {
        if !raw_bonds.contains_key(&ordered(a, b)) {
            return Err(Error::InvalidLattice(format!("removed bond ({a}, {b}) does not exist")));
        }
    }

    let raw_ids: Vec<usize> = (0..n_raw).filter(|s| !spec.removed_sites.contains(s)).collect();
    if raw_ids.is_empty() {
        return Err(Error::InvalidLattice("defects remove every site".into()));
    }
    let mut compact = vec![usize::MAX; n_raw];
    for (i, &r) in raw_ids.iter().enumerate() {
        compact[r] = i;
    }
    let removed_bonds: BTreeSet<(usize, usize)> = spec.removed_bonds.iter().map(|&(a, b)| ordered(a, b)).collect();

    let mut bonds = Vec::new();
    let mut bond_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&(ra, rb), &(count, slot)) in &raw_bonds {
        if compact[ra] == usize::MAX || compact[rb] == usize::MAX || removed_bonds.contains(&(ra, rb)) {
            continue;
        }
        let (a, b) = (compact[ra], compact[rb]);
        bond_index.insert((a, b), bonds.len());
        bonds.push(Bond { a, b, multiplicity: count, slot });
    }

    let mut up_triangles = Vec::new();
    let mut down_triangles = Vec::new();
    for orientation in [Orientation::Up, Orientation::Down] {
        for cell in 0..n_cells {
            let slot = Slot { orientation, cell };
            let c = slot_corners(spec, slot);
            let Some(corners) = c
                .iter()
                .map(|r| r.and_then(|r| (compact[r] != usize::MAX).then_some(compact[r])))
                .collect::<Option<Vec<_>>>()
            else {
                continue;
            };
            let corners = [corners[0], corners[1], corners[2]];
            let found: Option<Vec<usize>> = [(0, 1), (1, 2), (0, 2)]
                .iter()
                .map(|&(i, j)| bond_index.get(&ordered(corners[i], corners[j])).copied())
                .collect();
            let Some(found) = found else { continue };
            let tri = Triangle { slot, corners, bonds: [found[0], found[1], found[2]] };
            match orientation {
                Orientation::Up => up_triangles.push(tri),
                Orientation::Down => down_triangles.push(tri),
            }
        }
    }

    let n_sites = raw_ids.len();
    let mut coordination = vec![0u32; n_sites];
    for b in &bonds {
        coordination[b.a] += b.multiplicity;
        coordination[b.b] += b.multiplicity;
    }
    let bulk_sites = (0..n_sites).filter(|&s| coordination[s] == 4).collect();
    let positions = raw_ids.iter().map(|&r| raw_position(spec, r)).collect();

    Ok(KagomeLattice {
        spec: spec.clone(),
        n_sites,
        raw_ids,
        positions,
        bonds,
        up_triangles,
        down_triangles,
        coordination,
        bulk_sites,
    })
}

/// Bond indices split into the two Trotter layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkPartition {
    pub down: Vec<usize>,
    pub up: Vec<usize>,
}

pub fn partition_links(lat: &KagomeLattice) -> LinkPartition {
    let mut owner: Vec<Option<Orientation>> = vec![None; lat.bonds.len()];
    for (tris, o) in [(&lat.down_triangles, Orientation::Down), (&lat.up_triangles, Orientation::Up)] {
        for t in tris.iter() {
            for &b in &t.bonds {
                owner[b].get_or_insert(o);
            }
        }
    }
    let mut touched = [vec![false; lat.n_sites], vec![false; lat.n_sites]];
    for (bi, o) in owner.iter().enumerate() {
        if let Some(o) = o {
            let side = (*o == Orientation::Up) as usize;
            touched[side][lat.bonds[bi].a] = true;
            touched[side][lat.bonds[bi].b] = true;
        }
    }
    // Orphan links go where they collide with nothing, down set first.
    for bi in 0..lat.bonds.len() {
        if owner[bi].is_some() {
            continue;
        }
        let (a, b) = (lat.bonds[bi].a, lat.bonds[bi].b);
        let clashes = |side: usize| touched[side][a] as u8 + touched[side][b] as u8;
        let side = if clashes(1) < clashes(0) { 1 } else { 0 };
        touched[side][a] = true;
        touched[side][b] = true;
        owner[bi] = Some(if side == 0 { Orientation::Down } else { Orientation::Up });
    }
    let mut part = LinkPartition { down: Vec::new(), up: Vec::new() };
    for (bi, o) in owner.iter().enumerate() {
        match o.expect("assigned") {
            Orientation::Down => part.down.push(bi),
            Orientation::Up => part.up.push(bi),
        }
    }
    part
}

pub fn bulk_sites(lat: &KagomeLattice) -> BTreeSet<usize> {
    lat.bulk_sites.clone()
}

#[derive(Serialize)]
struct AdjacencyExport<'a> {
    n_sites: usize,
    raw_ids: &'a [usize],
    positions: &'a [[f64; 2]],
    bonds: Vec<[usize; 3]>,
    up_triangles: Vec<[usize; 3]>,
    down_triangles: Vec<[usize; 3]>,
    partition: LinkPartition,
}

impl KagomeLattice {
    pub fn n_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn neighbors(&self, site: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .bonds
            .iter()
            .filter_map(|b| {
                if b.a == site {
                    Some(b.b)
                } else if b.b == site {
                    Some(b.a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn triangles(&self) -> impl Iterator<Item = &Triangle> {
        self.up_triangles.iter().chain(self.down_triangles.iter())
    }

    /// JSON adjacency consumed by the compiler.
    pub fn to_adjacency_json(&self) -> String {
        let export = AdjacencyExport {
            n_sites: self.n_sites,
            raw_ids: &self.raw_ids,
            positions: &self.positions,
            bonds: self.bonds.iter().map(|b| [b.a, b.b, b.multiplicity as usize]).collect(),
            up_triangles: self.up_triangles.iter().map(|t| t.corners).collect(),
            down_triangles: self.down_triangles.iter().map(|t| t.corners).collect(),
            partition: partition_links(self),
        };
        serde_json::to_string_pretty(&export).expect("adjacency serializes")
    }

    /// All slots with at least one surviving bond, in slot order.
    pub fn occupied_slots(&self) -> Vec<Slot> {
        let slots: BTreeSet<Slot> = self.bonds.iter().map(|b| b.slot).collect();
        slots.into_iter().collect()
    }

    /// Surviving corners of a slot in canonical label order.
    pub fn slot_sites(&self, slot: Slot) -> [Option<usize>; 3] {
        let raw = slot_corners(&self.spec, slot);
        raw.map(|r| r.and_then(|r| self.raw_ids.binary_search(&r).ok()))
    }
}

/// Nearest-neighbour pairs of an `n`-site chain.
pub fn chain_bonds(n: usize, periodic: bool) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
    if periodic && n > 2 {
        out.push((0, n - 1));
    }
    out
}
