//! Quadtree meshes of axis-aligned square cells.
//!
//! The mesh is a forest of quadtrees rooted at a uniform grid of side `h0`.
//! Cells are addressed by `(level, i, j)` where `(i, j)` is the integer
//! position of the cell on the uniform grid of side `h0 * 2^-level`, counted
//! from the lower-left corner of the domain's bounding box. Refinement keeps
//! the active tiling 1-irregular across faces; a coarse face shared with two
//! finer cells is represented by two half-edges flagged `hanging`.

use std::collections::HashMap;

use crate::error::MeshError;
use crate::geometry::Point2;

pub type CellId = usize;

/// Deepest refinement level supported relative to the initial grid.
pub const MAX_LEVEL: u32 = 40;

const GEOM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainShape {
    /// `(0,1)^2`
    UnitSquare,
    /// `(-1,1)^2` minus the closed first-quadrant unit square.
    LShape,
}

impl DomainShape {
    /// Lower-left corner of the bounding box.
    pub fn origin(self) -> Point2 {
        match self {
            DomainShape::UnitSquare => Point2::new(0.0, 0.0),
            DomainShape::LShape => Point2::new(-1.0, -1.0),
        }
    }

    /// Side length of the (square) bounding box.
    pub fn extent(self) -> f64 {
        match self {
            DomainShape::UnitSquare => 1.0,
            DomainShape::LShape => 2.0,
        }
    }

    pub fn area(self) -> f64 {
        match self {
            DomainShape::UnitSquare => 1.0,
            DomainShape::LShape => 3.0,
        }
    }

    /// Whether the root cell `(ri, rj)` of an `n x n` root grid lies in the domain.
    fn root_in_shape(self, ri: i64, rj: i64, n: i64) -> bool {
        if ri < 0 || rj < 0 || ri >= n || rj >= n {
            return false;
        }
        match self {
            DomainShape::UnitSquare => true,
            DomainShape::LShape => !(ri >= n / 2 && rj >= n / 2),
        }
    }

    /// The straight faces making up the domain boundary.
    pub fn faces(self) -> Vec<BoundaryFace> {
        let p = Point2::new;
        match self {
            DomainShape::UnitSquare => vec![
                BoundaryFace::new(p(0.0, 0.0), p(1.0, 0.0)),
                BoundaryFace::new(p(1.0, 0.0), p(1.0, 1.0)),
                BoundaryFace::new(p(0.0, 1.0), p(1.0, 1.0)),
                BoundaryFace::new(p(0.0, 0.0), p(0.0, 1.0)),
            ],
            DomainShape::LShape => vec![
                BoundaryFace::new(p(-1.0, -1.0), p(1.0, -1.0)),
                BoundaryFace::new(p(1.0, -1.0), p(1.0, 0.0)),
                BoundaryFace::new(p(0.0, 0.0), p(1.0, 0.0)),
                BoundaryFace::new(p(0.0, 0.0), p(0.0, 1.0)),
                BoundaryFace::new(p(-1.0, 1.0), p(0.0, 1.0)),
                BoundaryFace::new(p(-1.0, -1.0), p(-1.0, 1.0)),
            ],
        }
    }
}

/// An axis-aligned straight piece of the domain boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub start: Point2,
    pub end: Point2,
}

impl BoundaryFace {
    pub fn new(start: Point2, end: Point2) -> Self {
        Self { start, end }
    }

    fn contains_point(&self, p: Point2) -> bool {
        let (lo_x, hi_x) = (self.start.x.min(self.end.x), self.start.x.max(self.end.x));
        let (lo_y, hi_y) = (self.start.y.min(self.end.y), self.start.y.max(self.end.y));
        p.x >= lo_x - GEOM_TOL
            && p.x <= hi_x + GEOM_TOL
            && p.y >= lo_y - GEOM_TOL
            && p.y <= hi_y + GEOM_TOL
    }

    pub fn contains_segment(&self, a: Point2, b: Point2) -> bool {
        self.contains_point(a) && self.contains_point(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

/// Assignment of every boundary face to a boundary-condition type.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPartition {
    faces: Vec<(BoundaryFace, BoundaryKind)>,
}

impl BoundaryPartition {
    pub fn new(faces: Vec<(BoundaryFace, BoundaryKind)>) -> Self {
        Self { faces }
    }

    pub fn all_dirichlet(shape: DomainShape) -> Self {
        Self::new(
            shape
                .faces()
                .into_iter()
                .map(|f| (f, BoundaryKind::Dirichlet))
                .collect(),
        )
    }

    /// Uses `select` to pick the condition of each face of `shape`.
    pub fn by_face(shape: DomainShape, select: impl Fn(&BoundaryFace) -> BoundaryKind) -> Self {
        Self::new(shape.faces().into_iter().map(|f| (f, select(&f))).collect())
    }

    pub fn faces(&self) -> &[(BoundaryFace, BoundaryKind)] {
        &self.faces
    }

    /// Condition of the face containing the segment `a`-`b`, if any.
    pub fn kind_of(&self, a: Point2, b: Point2) -> Option<BoundaryKind> {
        self.faces
            .iter()
            .find(|(face, _)| face.contains_segment(a, b))
            .map(|(_, kind)| *kind)
    }
}

/// Faces of a square cell, in the order edges are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    South,
    East,
    North,
    West,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::South, Face::East, Face::North, Face::West];

    fn offset(self) -> (i64, i64) {
        match self {
            Face::South => (0, -1),
            Face::East => (1, 0),
            Face::North => (0, 1),
            Face::West => (-1, 0),
        }
    }

    pub fn outward_normal(self) -> [f64; 2] {
        let (dx, dy) = self.offset();
        [dx as f64, dy as f64]
    }

    /// Child slots (`b * 2 + a`) of a cell touching this face.
    fn child_slots(self) -> [usize; 2] {
        match self {
            Face::South => [0, 1],
            Face::East => [1, 3],
            Face::North => [2, 3],
            Face::West => [0, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: CellId,
    pub level: u32,
    /// Position on the level grid, counted from the bounding-box corner.
    pub index: (i64, i64),
    /// Lower-left corner.
    pub origin: Point2,
    pub side: f64,
    pub parent: Option<CellId>,
    /// Children in slot order `b * 2 + a` for sub-square `(a, b)`.
    pub children: Option<[CellId; 4]>,
    alive: bool,
}

impl Cell {
    pub fn is_active(&self) -> bool {
        self.alive && self.children.is_none()
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    /// Corners counter-clockwise from the lower-left one.
    pub fn corners(&self) -> [Point2; 4] {
        let (x0, y0) = (self.origin.x, self.origin.y);
        let (x1, y1) = (x0 + self.side, y0 + self.side);
        [
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
        ]
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.origin.x + 0.5 * self.side, self.origin.y + 0.5 * self.side)
    }

    pub fn area(&self) -> f64 {
        self.side * self.side
    }

    /// Cell diameter `h_T`.
    pub fn diameter(&self) -> f64 {
        self.side * std::f64::consts::SQRT_2
    }

    pub fn to_physical(&self, reference: Point2) -> Point2 {
        Point2::new(
            self.origin.x + self.side * reference.x,
            self.origin.y + self.side * reference.y,
        )
    }

    pub fn to_reference(&self, p: Point2) -> Point2 {
        Point2::new((p.x - self.origin.x) / self.side, (p.y - self.origin.y) / self.side)
    }

    /// End points of one face, ordered by increasing coordinate.
    pub fn face_endpoints(&self, face: Face) -> (Point2, Point2) {
        let [sw, se, ne, nw] = self.corners();
        match face {
            Face::South => (sw, se),
            Face::East => (se, ne),
            Face::North => (nw, ne),
            Face::West => (sw, nw),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Interior,
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: usize,
    pub start: Point2,
    pub end: Point2,
    pub length: f64,
    pub kind: EdgeKind,
    pub minus_cell: CellId,
    pub plus_cell: Option<CellId>,
    /// Unit normal pointing out of `minus_cell`.
    pub normal: [f64; 2],
    /// Set when this edge is half of a face of the coarser `plus_cell`.
    pub hanging: bool,
}

impl Edge {
    pub fn point_at(&self, t: f64) -> Point2 {
        self.start + (self.end - self.start) * t
    }

    pub fn is_boundary(&self) -> bool {
        self.plus_cell.is_none()
    }
}

/// What lies across one face of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbor {
    Boundary,
    Same(CellId),
    Coarser(CellId),
    /// The two children of the same-level neighbor that touch the face.
    Finer([CellId; 2]),
}

#[derive(Debug, Clone)]
pub struct Mesh {
    shape: DomainShape,
    h0: f64,
    roots_per_side: i64,
    cells: Vec<Cell>,
    lookup: HashMap<(u32, i64, i64), CellId>,
    active: Vec<CellId>,
    active_pos: Vec<usize>,
    edges: Vec<Edge>,
    cell_edges: Vec<Vec<usize>>,
    partition: BoundaryPartition,
    h_min: f64,
}

impl Mesh {
    /// Uniform mesh of square cells of side `h0`, all boundary Dirichlet.
    pub fn build_initial(shape: DomainShape, h0: f64) -> Result<Mesh, MeshError> {
        Self::build_with_partition(shape, h0, BoundaryPartition::all_dirichlet(shape))
    }

    pub fn build_with_partition(
        shape: DomainShape,
        h0: f64,
        partition: BoundaryPartition,
    ) -> Result<Mesh, MeshError> {
        if !(h0.is_finite() && h0 > 0.0) {
            return Err(MeshError::InvalidCellSize(h0));
        }
        let exponent = h0.log2();
        if (exponent - exponent.round()).abs() > 1e-12 || exponent.round() > 0.0 || exponent < -20.0
        {
            return Err(MeshError::InvalidCellSize(h0));
        }
        let h0 = 2f64.powi(exponent.round() as i32);
        let n = (shape.extent() / h0).round() as i64;

        let mut mesh = Mesh {
            shape,
            h0,
            roots_per_side: n,
            cells: Vec::new(),
            lookup: HashMap::new(),
            active: Vec::new(),
            active_pos: Vec::new(),
            edges: Vec::new(),
            cell_edges: Vec::new(),
            partition,
            h_min: h0,
        };
        for j in 0..n {
            for i in 0..n {
                if shape.root_in_shape(i, j, n) {
                    mesh.push_cell(0, i, j, None);
                }
            }
        }
        mesh.rebuild()?;
        Ok(mesh)
    }

    pub fn shape(&self) -> DomainShape {
        self.shape
    }

    pub fn h0(&self) -> f64 {
        self.h0
    }

    /// Smallest active-cell side.
    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    pub fn partition(&self) -> &BoundaryPartition {
        &self.partition
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id]
    }

    /// Every cell ever created, including inactive parents and removed cells.
    pub fn all_cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Active cell ids in increasing order.
    pub fn active_cells(&self) -> &[CellId] {
        &self.active
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    /// Position of an active cell in [`Mesh::active_cells`].
    pub fn active_position(&self, id: CellId) -> Option<usize> {
        match self.active_pos.get(id) {
            Some(&p) if p != usize::MAX => Some(p),
            _ => None,
        }
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edges on the boundary of the active cell at `position`.
    pub fn edges_of(&self, position: usize) -> &[usize] {
        &self.cell_edges[position]
    }

    pub fn total_active_area(&self) -> f64 {
        self.active.iter().map(|&c| self.cells[c].area()).sum()
    }

    fn push_cell(&mut self, level: u32, i: i64, j: i64, parent: Option<CellId>) -> CellId {
        let id = self.cells.len();
        let side = self.h0 / 2f64.powi(level as i32);
        let o = self.shape.origin();
        self.cells.push(Cell {
            id,
            level,
            index: (i, j),
            origin: Point2::new(o.x + i as f64 * side, o.y + j as f64 * side),
            side,
            parent,
            children: None,
            alive: true,
        });
        self.lookup.insert((level, i, j), id);
        id
    }

    fn in_domain(&self, level: u32, i: i64, j: i64) -> bool {
        if i < 0 || j < 0 {
            return false;
        }
        self.shape
            .root_in_shape(i >> level, j >> level, self.roots_per_side)
    }

    /// What lies across `face` of any live cell (active or not).
    pub fn face_neighbor(&self, id: CellId, face: Face) -> Neighbor {
        let cell = &self.cells[id];
        let (dx, dy) = face.offset();
        let (ni, nj) = (cell.index.0 + dx, cell.index.1 + dy);
        if !self.in_domain(cell.level, ni, nj) {
            return Neighbor::Boundary;
        }
        if let Some(&nid) = self.lookup.get(&(cell.level, ni, nj)) {
            let n = &self.cells[nid];
            return match n.children {
                None => Neighbor::Same(nid),
                Some(ch) => {
                    let opposite = match face {
                        Face::South => Face::North,
                        Face::North => Face::South,
                        Face::East => Face::West,
                        Face::West => Face::East,
                    };
                    let [s0, s1] = opposite.child_slots();
                    Neighbor::Finer([ch[s0], ch[s1]])
                }
            };
        }
        for up in 1..=cell.level {
            let key = (cell.level - up, ni >> up, nj >> up);
            if let Some(&nid) = self.lookup.get(&key) {
                return Neighbor::Coarser(nid);
            }
        }
        // every in-domain position has a live root
        unreachable!("in-domain neighbor position without a root cell")
    }

    /// Refines every marked active cell, refining neighbors as needed to keep
    /// the tiling 1-irregular. Ids that are not active are ignored.
    pub fn refine(&mut self, marked: &[CellId]) -> Result<(), MeshError> {
        let mut ids: Vec<CellId> = marked.to_vec();
        ids.sort_unstable();
        ids.dedup();
        for id in ids {
            if id < self.cells.len() && self.cells[id].is_active() {
                self.refine_with_closure(id)?;
            }
        }
        self.rebuild()
    }

    fn refine_with_closure(&mut self, id: CellId) -> Result<(), MeshError> {
        if !self.cells[id].is_active() {
            return Ok(());
        }
        for face in Face::ALL {
            if let Neighbor::Coarser(nid) = self.face_neighbor(id, face) {
                self.refine_with_closure(nid)?;
            }
        }
        self.split(id)
    }

    fn split(&mut self, id: CellId) -> Result<(), MeshError> {
        let (level, (i, j)) = (self.cells[id].level, self.cells[id].index);
        if level >= MAX_LEVEL {
            return Err(MeshError::MaxLevelExceeded(MAX_LEVEL));
        }
        let mut children = [0; 4];
        for b in 0..2 {
            for a in 0..2 {
                children[b * 2 + a] = self.push_cell(level + 1, 2 * i + a as i64, 2 * j + b as i64, Some(id));
            }
        }
        self.cells[id].children = Some(children);
        Ok(())
    }

    /// Replaces complete, fully marked sibling quadruples by their parent where
    /// the result stays 1-irregular. Returns the number of marks not honored.
    pub fn coarsen(&mut self, marked: &[CellId]) -> Result<usize, MeshError> {
        let mut ids: Vec<CellId> = marked
            .iter()
            .copied()
            .filter(|&id| id < self.cells.len() && self.cells[id].is_active())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        let n_marked = ids.len();

        let mut per_parent: HashMap<CellId, usize> = HashMap::new();
        for &id in &ids {
            if let Some(p) = self.cells[id].parent {
                *per_parent.entry(p).or_default() += 1;
            }
        }
        let mut parents: Vec<CellId> = per_parent
            .into_iter()
            .filter(|&(p, count)| {
                count == 4
                    && self.cells[p]
                        .children
                        .is_some_and(|ch| ch.iter().all(|&c| self.cells[c].is_active()))
            })
            .map(|(p, _)| p)
            .collect();
        parents.sort_unstable_by_key(|&p| (std::cmp::Reverse(self.cells[p].level), p));

        let mut honored = 0;
        for p in parents {
            if self.can_coarsen(p) {
                let children = self.cells[p].children.take().expect("parent has children");
                for c in children {
                    let cell = &mut self.cells[c];
                    cell.alive = false;
                    let key = (cell.level, cell.index.0, cell.index.1);
                    self.lookup.remove(&key);
                }
                honored += 4;
            }
        }
        self.rebuild()?;
        Ok(n_marked - honored)
    }

    /// Whether merging the children of `parent` keeps face neighbors within one level.
    fn can_coarsen(&self, parent: CellId) -> bool {
        Face::ALL.iter().all(|&face| match self.face_neighbor(parent, face) {
            Neighbor::Finer(pair) => pair.iter().all(|&c| self.cells[c].is_active()),
            _ => true,
        })
    }

    /// Reclassifies boundary edges with a new partition.
    pub fn classify_edges(&mut self, partition: BoundaryPartition) -> Result<(), MeshError> {
        self.partition = partition;
        self.rebuild()
    }

    /// Active cell containing `p` and the reference coordinates of `p` in it.
    pub fn locate(&self, p: Point2) -> Option<(CellId, Point2)> {
        let o = self.shape.origin();
        let n = self.roots_per_side;
        let fx = (p.x - o.x) / self.h0;
        let fy = (p.y - o.y) / self.h0;
        let tol = 1e-10;
        if !(fx > -tol && fy > -tol && fx < n as f64 + tol && fy < n as f64 + tol) {
            return None;
        }
        let candidates = |f: f64| {
            let base = (f.floor() as i64).clamp(0, n - 1);
            let alt = if (f - f.round()).abs() < tol {
                (f.round() as i64 - 1).clamp(0, n - 1)
            } else {
                base
            };
            [base, alt]
        };
        let root = candidates(fx)
            .into_iter()
            .flat_map(|ri| candidates(fy).into_iter().map(move |rj| (ri, rj)))
            .find_map(|(ri, rj)| self.lookup.get(&(0, ri, rj)).copied())?;

        let mut id = root;
        while let Some(children) = self.cells[id].children {
            let r = self.cells[id].to_reference(p);
            let a = usize::from(r.x >= 0.5);
            let b = usize::from(r.y >= 0.5);
            id = children[b * 2 + a];
        }
        Some((id, self.cells[id].to_reference(p)))
    }

    fn rebuild(&mut self) -> Result<(), MeshError> {
        self.active = (0..self.cells.len())
            .filter(|&c| self.cells[c].is_active())
            .collect();
        self.active_pos = vec![usize::MAX; self.cells.len()];
        for (pos, &c) in self.active.iter().enumerate() {
            self.active_pos[c] = pos;
        }
        self.h_min = self
            .active
            .iter()
            .map(|&c| self.cells[c].side)
            .fold(f64::INFINITY, f64::min);

        let mut edges = Vec::new();
        for &c in &self.active {
            for face in Face::ALL {
                let (start, end) = self.cells[c].face_endpoints(face);
                let (plus, hanging) = match self.face_neighbor(c, face) {
                    Neighbor::Boundary => (None, false),
                    Neighbor::Same(n) => {
                        if matches!(face, Face::East | Face::North) {
                            (Some(n), false)
                        } else {
                            continue;
                        }
                    }
                    Neighbor::Coarser(n) => (Some(n), true),
                    Neighbor::Finer(_) => continue,
                };
                let kind = match plus {
                    Some(_) => EdgeKind::Interior,
                    None => match self.partition.kind_of(start, end) {
                        Some(BoundaryKind::Dirichlet) => EdgeKind::Dirichlet,
                        Some(BoundaryKind::Neumann) => EdgeKind::Neumann,
                        None => return Err(MeshError::UnclassifiedEdge { start, end }),
                    },
                };
                edges.push(Edge {
                    id: edges.len(),
                    start,
                    end,
                    length: (end - start).norm(),
                    kind,
                    minus_cell: c,
                    plus_cell: plus,
                    normal: face.outward_normal(),
                    hanging,
                });
            }
        }
        let mut cell_edges = vec![Vec::new(); self.active.len()];
        for e in &edges {
            cell_edges[self.active_pos[e.minus_cell]].push(e.id);
            if let Some(p) = e.plus_cell {
                cell_edges[self.active_pos[p]].push(e.id);
            }
        }
        self.edges = edges;
        self.cell_edges = cell_edges;
        Ok(())
    }

    /// Largest level difference across any interior edge.
    pub fn max_level_jump(&self) -> u32 {
        self.edges
            .iter()
            .filter_map(|e| {
                let p = e.plus_cell?;
                Some(self.cells[e.minus_cell].level.abs_diff(self.cells[p].level))
            })
            .max()
            .unwrap_or(0)
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn active_keys(mesh: &Mesh) -> Vec<(u32, i64, i64)> {
        let mut keys: Vec<_> = mesh
            .active_cells()
            .iter()
            .map(|&c| {
                let cell = mesh.cell(c);
                (cell.level, cell.index.0, cell.index.1)
            })
            .collect();
        keys.sort_unstable();
        keys
    }

    #[test]
    fn initial_lshape_counts() {
        let m = Mesh::build_initial(DomainShape::LShape, 1.0).unwrap();
        assert_eq!(m.n_active(), 3);
        assert_eq!(m.count_edges(EdgeKind::Interior), 2);
        assert_eq!(m.count_edges(EdgeKind::Dirichlet), 8);
        assert_eq!(m.count_edges(EdgeKind::Neumann), 0);

        let m = Mesh::build_initial(DomainShape::LShape, 0.5).unwrap();
        assert_eq!(m.n_active(), 12);
        assert!((m.total_active_area() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn initial_unit_square_counts() {
        let m = Mesh::build_initial(DomainShape::UnitSquare, 0.25).unwrap();
        assert_eq!(m.n_active(), 16);
        assert_eq!(m.count_edges(EdgeKind::Interior), 24);
        assert_eq!(m.count_edges(EdgeKind::Dirichlet), 16);
    }

    #[test]
    fn rejects_bad_cell_sizes() {
        for h0 in [0.3, 0.0, -0.5, 2.0, f64::NAN] {
            assert!(Mesh::build_initial(DomainShape::UnitSquare, h0).is_err(), "{h0}");
        }
    }

    #[test]
    fn refine_one_cell_of_lshape() {
        let mut m = Mesh::build_initial(DomainShape::LShape, 1.0).unwrap();
        let first = m.active_cells()[0];
        m.refine(&[first]).unwrap();
        assert_eq!(m.n_active(), 6);
        assert_eq!(m.max_level_jump(), 1);
        let hanging = m.edges().iter().filter(|e| e.hanging).count();
        assert_eq!(hanging, 4);
    }

    #[test]
    fn refine_twice_along_one_branch() {
        let mut m = Mesh::build_initial(DomainShape::UnitSquare, 1.0).unwrap();
        m.refine(&[0]).unwrap();
        let child = m.cell(0).children.unwrap()[0];
        m.refine(&[child]).unwrap();
        assert_eq!(m.n_active(), 7);
    }

    #[test]
    fn refine_forces_closure_of_coarser_neighbor() {
        // (0,0) at level 2 next to level-1 cells; refining the level-2 cell at
        // the east side of the refined block must split its level-1 neighbor.
        let mut m = Mesh::build_initial(DomainShape::UnitSquare, 1.0).unwrap();
        m.refine(&[0]).unwrap();
        let ch = m.cell(0).children.unwrap();
        m.refine(&[ch[0]]).unwrap();
        let fine = m.cell(ch[0]).children.unwrap()[1];
        assert_eq!(m.cell(fine).level, 2);
        assert!(m.cell(ch[1]).is_active());
        m.refine(&[fine]).unwrap();
        assert!(!m.cell(ch[1]).is_active(), "level-1 neighbor must be refined");
        assert_eq!(m.max_level_jump(), 1);
    }

    #[test]
    fn coarsen_full_quadruple() {
        let mut m = Mesh::build_initial(DomainShape::UnitSquare, 0.5).unwrap();
        let before = active_keys(&m);
        let target = m.active_cells()[0];
        m.refine(&[target]).unwrap();
        let children = m.cell(target).children.unwrap();
        assert_eq!(m.coarsen(&children).unwrap(), 0);
        assert_eq!(m.n_active(), 4);
        assert_eq!(active_keys(&m), before);
    }

    #[test]
    fn coarsen_ignores_partial_quadruple() {
        let mut m = Mesh::build_initial(DomainShape::UnitSquare, 1.0).unwrap();
        m.refine(&[0]).unwrap();
        let ch = m.cell(0).children.unwrap();
        let dropped = m.coarsen(&ch[..3]).unwrap();
        assert_eq!(dropped, 3);
        assert_eq!(m.n_active(), 4);
    }

    #[test]
    fn coarsen_checks_neighbor_levels() {
        // Refine the east half deeper so that merging the west quadruple would
        // leave a level-0 cell next to level-2 cells.
        let mut m = Mesh::build_initial(DomainShape::UnitSquare, 0.5).unwrap();
        let west = m.active_cells()[0];
        let east = m.active_cells()[1];
        m.refine(&[west]).unwrap();
        let wch = m.cell(west).children.unwrap();
        m.refine(&[east]).unwrap();
        let ech = m.cell(east).children.unwrap();
        // ech[0] touches the west cell's east face
        m.refine(&[ech[0]]).unwrap();
        assert!(!m.cell(ech[0]).is_active());
        let n_before = m.n_active();
        let dropped = m.coarsen(&wch).unwrap();
        assert_eq!(dropped, 4);
        assert_eq!(m.n_active(), n_before);
    }

    #[test]
    fn neumann_face_classification() {
        let partition = BoundaryPartition::by_face(DomainShape::UnitSquare, |f| {
            if f.start.y == 0.0 && f.end.y == 0.0 {
                BoundaryKind::Neumann
            } else {
                BoundaryKind::Dirichlet
            }
        });
        let m = Mesh::build_with_partition(DomainShape::UnitSquare, 0.5, partition).unwrap();
        assert_eq!(m.count_edges(EdgeKind::Neumann), 2);
        assert_eq!(m.count_edges(EdgeKind::Dirichlet), 6);
    }

    #[test]
    fn unclassified_boundary_is_an_error() {
        let partition = BoundaryPartition::new(vec![]);
        let err = Mesh::build_with_partition(DomainShape::UnitSquare, 0.5, partition);
        assert!(matches!(err, Err(MeshError::UnclassifiedEdge { .. })));
    }

    #[test]
    fn refining_dirichlet_cell_splits_boundary_edge() {
        let mut m = Mesh::build_initial(DomainShape::LShape, 1.0).unwrap();
        let before = m.count_edges(EdgeKind::Dirichlet);
        let corner = m.active_cells()[0]; // lower-left cell: two boundary faces
        m.refine(&[corner]).unwrap();
        assert_eq!(m.count_edges(EdgeKind::Dirichlet), before + 2);
    }

    #[test]
    fn locate_descends_tree() {
        let mut m = Mesh::build_initial(DomainShape::LShape, 1.0).unwrap();
        let c = m.active_cells()[0];
        m.refine(&[c]).unwrap();
        let (id, r) = m.locate(Point2::new(-0.9, -0.1)).unwrap();
        let cell = m.cell(id);
        assert!(cell.is_active());
        assert_eq!(cell.level, 1);
        assert!((cell.to_physical(r) - Point2::new(-0.9, -0.1)).norm() < 1e-14);
        assert!(m.locate(Point2::new(0.5, 0.5)).is_none());
        assert!(m.locate(Point2::new(1.5, 0.0)).is_none());
    }

    #[test]
    fn normals_point_from_minus_to_plus() {
        let mut m = Mesh::build_initial(DomainShape::LShape, 0.5).unwrap();
        let c = m.active_cells()[3];
        m.refine(&[c]).unwrap();
        for e in m.edges() {
            if let Some(p) = e.plus_cell {
                let d = m.cell(p).center() - m.cell(e.minus_cell).center();
                assert!(d.dot(Point2::new(e.normal[0], e.normal[1])) > 0.0);
            }
        }
    }
}
