use crate::error::{Error, Result};
use crate::renderer::TextureDims;

pub const LEAF_SIZE: usize = 16;

/// Integer texel coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TexelCoord {
    pub col: u32,
    pub row: u32,
}

impl TexelCoord {
    pub fn new(col: u32, row: u32) -> Self {
        Self { col, row }
    }

    #[inline]
    pub fn dist_sq(self, other: TexelCoord) -> u64 {
        let dx = self.col as i64 - other.col as i64;
        let dy = self.row as i64 - other.row as i64;
        (dx * dx + dy * dy) as u64
    }

    #[inline]
    fn axis(self, dim: usize) -> i64 {
        if dim == 0 {
            self.col as i64
        } else {
            self.row as i64
        }
    }
}

/// Result of a nearest-neighbour query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    /// Row-major texel id.
    pub id: usize,
    pub coord: TexelCoord,
    pub dist_sq: u64,
}

impl Neighbor {
    pub fn dist(&self) -> f64 {
        (self.dist_sq as f64).sqrt()
    }
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    coord: TexelCoord,
    id: usize,
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: i64, left: usize, right: usize },
}

/// Balanced 2-d tree over sampled texel coordinates. Queries are exact and
/// break distance ties toward the smaller row-major id.
#[derive(Clone, Debug)]
pub struct TexelIndex {
    entries: Vec<Entry>,
    nodes: Vec<Node>,
}

impl TexelIndex {
    /// Builds the tree; points must lie inside `dims`.
    pub fn build(points: &[TexelCoord], dims: TextureDims) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let mut entries = Vec::with_capacity(points.len());
        for &coord in points {
            if coord.col as usize >= dims.width || coord.row as usize >= dims.height {
                return Err(Error::InvalidTexture(format!(
                    "point {coord:?} outside {}x{} texture",
                    dims.width, dims.height
                )));
            }
            entries.push(Entry {
                coord,
                id: dims.id(coord.col as usize, coord.row as usize),
            });
        }
        let mut index = Self {
            entries,
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        let n = index.entries.len();
        index.build_node(0, n);
        Ok(index)
    }

    /// Builds from row-major texel ids.
    pub fn from_ids(ids: &[usize], dims: TextureDims) -> Result<Self> {
        let points: Vec<TexelCoord> = ids
            .iter()
            .map(|&id| {
                let (c, r) = dims.coord(id);
                TexelCoord::new(c as u32, r as u32)
            })
            .collect();
        Self::build(&points, dims)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let pts = &mut self.entries[start..end];
        let spread = |dim: usize| {
            let lo = pts.iter().map(|e| e.coord.axis(dim)).min().unwrap();
            let hi = pts.iter().map(|e| e.coord.axis(dim)).max().unwrap();
            hi - lo
        };
        let dim = if spread(0) >= spread(1) { 0 } else { 1 };
        let mid = pts.len() / 2;
        pts.select_nth_unstable_by_key(mid, |e| e.coord.axis(dim));
        let value = pts[mid].coord.axis(dim);

        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, start + mid);
        let right = self.build_node(start + mid, end);
        self.nodes[slot] = Node::Split { dim, value, left, right };
        slot
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact nearest stored point to `p`.
    pub fn nearest(&self, p: TexelCoord) -> Neighbor {
        let mut best = (u64::MAX, usize::MAX, 0usize);
        self.search(0, p, &mut best);
        let e = self.entries[best.2];
        Neighbor {
            id: e.id,
            coord: e.coord,
            dist_sq: best.0,
        }
    }

    // best = (dist_sq, id, entry slot); lexicographic on (dist_sq, id)
    fn search(&self, node: usize, p: TexelCoord, best: &mut (u64, usize, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for (slot, e) in self.entries[start..end].iter().enumerate() {
                    let d = p.dist_sq(e.coord);
                    if (d, e.id) < (best.0, best.1) {
                        *best = (d, e.id, start + slot);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = p.axis(dim) - value;
                let (near, far) = if diff < 0 { (left, right) } else { (right, left) };
                self.search(near, p, best);
                // `<=` keeps equal-distance candidates with smaller ids reachable
                if ((diff * diff) as u64) <= best.0 {
                    self.search(far, p, best);
                }
            }
        }
    }
}
