//! Uniform Cartesian quadrilateral background mesh.
//!
//! Elements are numbered lexicographically with x running fastest:
//! element `(i, j)` has id `j * nx + i`. Faces come in two families:
//! vertical faces (normal `(1, 0)`) with id `j * (nx + 1) + i`, followed by
//! horizontal faces (normal `(0, 1)`) with id `n_vertical + j * nx + i`.
//! A face normal always points from its first element to its second.

use crate::error::{Error, Result};

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    pub fn unit() -> Self {
        Self::new(0.0, 1.0, 0.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Axis-aligned cell used by the quadrature routines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Rect {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Self { lo, hi }
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn area(&self) -> f64 {
        self.side(0) * self.side(1)
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.lo[0] + self.hi[0]), 0.5 * (self.lo[1] + self.hi[1])]
    }

    pub fn contains(&self, x: [f64; 2], slack: f64) -> bool {
        (0..2).all(|a| x[a] >= self.lo[a] - slack && x[a] <= self.hi[a] + slack)
    }

    /// Splits along `axis` at the midpoint.
    pub fn bisect(&self, axis: usize) -> (Rect, Rect) {
        let mid = 0.5 * (self.lo[axis] + self.hi[axis]);
        let mut a = *self;
        let mut b = *self;
        a.hi[axis] = mid;
        b.lo[axis] = mid;
        (a, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceOrientation {
    /// Face lies on a line `x = const`; normal is `(1, 0)`.
    Vertical,
    /// Face lies on a line `y = const`; normal is `(0, 1)`.
    Horizontal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Face {
    pub id: usize,
    /// First element and, for interior faces, the second one.
    pub elements: (usize, Option<usize>),
    pub orientation: FaceOrientation,
    /// Unit normal pointing from `elements.0` towards `elements.1`.
    pub normal: [f64; 2],
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Face {
    pub fn is_interior(&self) -> bool {
        self.elements.1.is_some()
    }

    /// Index of the coordinate along the face normal.
    pub fn normal_axis(&self) -> usize {
        match self.orientation {
            FaceOrientation::Vertical => 0,
            FaceOrientation::Horizontal => 1,
        }
    }

    pub fn length(&self) -> f64 {
        ((self.b[0] - self.a[0]).powi(2) + (self.b[1] - self.a[1]).powi(2)).sqrt()
    }
}

/// Uniform quadrilateral mesh of a rectangle with square elements of size `h`.
#[derive(Clone, Debug)]
pub struct BackgroundMesh {
    bbox: BBox,
    nx: usize,
    ny: usize,
    h: f64,
    faces: Vec<Face>,
    /// `[left, right, bottom, top]` face ids per element.
    element_faces: Vec<[usize; 4]>,
    interior_faces: Vec<usize>,
}

impl BackgroundMesh {
    pub fn new(bbox: BBox, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Config(format!("mesh needs nx, ny >= 1 (got {nx}x{ny})")));
        }
        if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
            return Err(Error::Config(format!("degenerate bounding box {bbox:?}")));
        }
        let hx = bbox.width() / nx as f64;
        let hy = bbox.height() / ny as f64;
        if (hx - hy).abs() > 1e-10 * hx.max(hy) {
            return Err(Error::Config(format!(
                "elements must be square: hx = {hx}, hy = {hy}"
            )));
        }
        let h = hx;
        let nv = (nx + 1) * ny;
        let mut faces = Vec::with_capacity(nv + nx * (ny + 1));
        let elem = |i: usize, j: usize| j * nx + i;
        for j in 0..ny {
            for i in 0..=nx {
                let x = bbox.x_min + i as f64 * h;
                let elements = match (i, i == nx) {
                    (0, _) => (elem(0, j), None),
                    (_, true) => (elem(nx - 1, j), None),
                    _ => (elem(i - 1, j), Some(elem(i, j))),
                };
                faces.push(Face {
                    id: faces.len(),
                    elements,
                    orientation: FaceOrientation::Vertical,
                    normal: [1.0, 0.0],
                    a: [x, bbox.y_min + j as f64 * h],
                    b: [x, bbox.y_min + (j + 1) as f64 * h],
                });
            }
        }
        for j in 0..=ny {
            for i in 0..nx {
                let y = bbox.y_min + j as f64 * h;
                let elements = match (j, j == ny) {
                    (0, _) => (elem(i, 0), None),
                    (_, true) => (elem(i, ny - 1), None),
                    _ => (elem(i, j - 1), Some(elem(i, j))),
                };
                faces.push(Face {
                    id: faces.len(),
                    elements,
                    orientation: FaceOrientation::Horizontal,
                    normal: [0.0, 1.0],
                    a: [bbox.x_min + i as f64 * h, y],
                    b: [bbox.x_min + (i + 1) as f64 * h, y],
                });
            }
        }
        let element_faces = (0..nx * ny)
            .map(|e| {
                let (i, j) = (e % nx, e / nx);
                [
                    j * (nx + 1) + i,
                    j * (nx + 1) + i + 1,
                    nv + j * nx + i,
                    nv + (j + 1) * nx + i,
                ]
            })
            .collect();
        let interior_faces = faces.iter().filter(|f| f.is_interior()).map(|f| f.id).collect();
        Ok(Self { bbox, nx, ny, h, faces, element_faces, interior_faces })
    }

    /// Smallest mesh with element size `h` whose box contains `bbox`,
    /// anchored at the lower-left corner.
    pub fn covering(bbox: BBox, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Config(format!("mesh size must be positive, got {h}")));
        }
        let count = |len: f64| ((len / h) - 1e-9).ceil().max(1.0) as usize;
        let nx = count(bbox.width());
        let ny = count(bbox.height());
        let grown = BBox::new(
            bbox.x_min,
            bbox.x_min + nx as f64 * h,
            bbox.y_min,
            bbox.y_min + ny as f64 * h,
        );
        Self::new(grown, nx, ny)
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, id: usize) -> &Face {
        &self.faces[id]
    }

    pub fn interior_faces(&self) -> &[usize] {
        &self.interior_faces
    }

    pub fn element_faces(&self, e: usize) -> [usize; 4] {
        self.element_faces[e]
    }

    /// `(i, j)` grid position of element `e`.
    pub fn element_ij(&self, e: usize) -> (usize, usize) {
        (e % self.nx, e / self.nx)
    }

    pub fn element_rect(&self, e: usize) -> Rect {
        let (i, j) = self.element_ij(e);
        let x0 = self.bbox.x_min + i as f64 * self.h;
        let y0 = self.bbox.y_min + j as f64 * self.h;
        Rect::new([x0, y0], [x0 + self.h, y0 + self.h])
    }

    pub fn element_area(&self) -> f64 {
        self.h * self.h
    }

    /// Corner vertices, counter-clockwise from the lower-left one.
    pub fn element_vertices(&self, e: usize) -> [[f64; 2]; 4] {
        let r = self.element_rect(e);
        [r.lo, [r.hi[0], r.lo[1]], r.hi, [r.lo[0], r.hi[1]]]
    }

    /// Face-adjacent elements (up to four).
    pub fn neighbors(&self, e: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.element_faces[e].into_iter().filter_map(move |f| {
            let face = &self.faces[f];
            match face.elements {
                (a, Some(b)) if a == e => Some((b, f)),
                (a, Some(b)) if b == e => Some((a, f)),
                _ => None,
            }
        })
    }

    /// The two elements sharing an interior face.
    pub fn element_patch(&self, face: usize) -> Result<(usize, usize)> {
        match self.faces.get(face) {
            Some(Face { elements: (a, Some(b)), .. }) => Ok((*a, *b)),
            Some(_) => Err(Error::BoundaryFace(face)),
            None => Err(Error::OutOfRange(format!("face id {face}"))),
        }
    }

    /// Element containing `x`; points on shared edges go to the upper/right one.
    pub fn locate(&self, x: [f64; 2]) -> Option<usize> {
        let slack = 1e-12 * self.h;
        if x[0] < self.bbox.x_min - slack
            || x[0] > self.bbox.x_max + slack
            || x[1] < self.bbox.y_min - slack
            || x[1] > self.bbox.y_max + slack
        {
            return None;
        }
        let fi = ((x[0] - self.bbox.x_min) / self.h).floor().max(0.0) as usize;
        let fj = ((x[1] - self.bbox.y_min) / self.h).floor().max(0.0) as usize;
        Some(fj.min(self.ny - 1) * self.nx + fi.min(self.nx - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_small_meshes() {
        let m = BackgroundMesh::new(BBox::unit(), 2, 2).unwrap();
        assert_eq!(m.n_elements(), 4);
        assert_eq!(m.interior_faces().len(), 4);
        let m = BackgroundMesh::new(BBox::unit(), 1, 1).unwrap();
        assert_eq!(m.n_elements(), 1);
        assert!(m.interior_faces().is_empty());
    }

    #[test]
    fn twenty_by_twenty() {
        let m = BackgroundMesh::new(BBox::unit(), 20, 20).unwrap();
        assert!((m.h() - 0.05).abs() < 1e-15);
        assert_eq!(m.interior_faces().len(), 20 * 19 + 20 * 19);
    }

    #[test]
    fn rejects_non_square() {
        assert!(matches!(BackgroundMesh::new(BBox::unit(), 2, 3), Err(Error::Config(_))));
        assert!(BackgroundMesh::new(BBox::unit(), 0, 1).is_err());
    }

    #[test]
    fn patches() {
        let m = BackgroundMesh::new(BBox::unit(), 2, 2).unwrap();
        // vertical face between the two bottom elements: j = 0, i = 1
        assert_eq!(m.element_patch(1).unwrap(), (0, 1));
        assert!(matches!(m.element_patch(0), Err(Error::BoundaryFace(0))));

        let m = BackgroundMesh::new(BBox::new(0.0, 1.0, 0.0, 2.0), 1, 2).unwrap();
        let f = m.interior_faces()[0];
        let (a, b) = m.element_patch(f).unwrap();
        assert_eq!((a, b), (0, 1));
        for &f in m.interior_faces() {
            let (a, b) = m.element_patch(f).unwrap();
            assert_ne!(a, b);
        }
    }

    #[test]
    fn topology_is_consistent() {
        let m = BackgroundMesh::new(BBox::new(-1.0, 2.0, 0.0, 1.0), 6, 2).unwrap();
        let mut area = 0.0;
        for e in 0..m.n_elements() {
            area += m.element_area();
            for f in m.element_faces(e) {
                let face = m.face(f);
                assert!(face.elements.0 == e || face.elements.1 == Some(e));
            }
        }
        assert!((area - m.bbox().area()).abs() < 1e-12);
        for face in m.faces() {
            let mut owners = vec![face.elements.0];
            owners.extend(face.elements.1);
            for e in owners {
                assert!(m.element_faces(e).contains(&face.id));
            }
            let n = face.normal;
            assert!((n[0] * n[0] + n[1] * n[1] - 1.0).abs() < 1e-15);
            // normal points from the first element's center to the second
            if let (a, Some(b)) = face.elements {
                let (ca, cb) = (m.element_rect(a).center(), m.element_rect(b).center());
                let d = [cb[0] - ca[0], cb[1] - ca[1]];
                assert!((d[0] * n[0] + d[1] * n[1] - m.h()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covering_grows_box() {
        let m = BackgroundMesh::covering(BBox::new(-1.0, 1.0, -1.0, 1.0), 0.3).unwrap();
        assert_eq!(m.nx(), 7);
        assert!(m.bbox().x_max >= 1.0);
        let m = BackgroundMesh::covering(BBox::unit(), 0.1).unwrap();
        assert_eq!((m.nx(), m.ny()), (10, 10));
    }

    #[test]
    fn locate_points() {
        let m = BackgroundMesh::new(BBox::unit(), 4, 4).unwrap();
        assert_eq!(m.locate([0.1, 0.1]), Some(0));
        assert_eq!(m.locate([0.9, 0.3]), Some(7));
        assert_eq!(m.locate([1.0, 1.0]), Some(15));
        assert_eq!(m.locate([1.5, 0.0]), None);
    }
}
