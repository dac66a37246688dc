//! Mesh generators: cubical box complexes (tori, cylinders, grids), the
//! cubed sphere, cones (disks and balls), shells, and product handles.

use super::extract::extract_boundary_complex;
use super::product::product;
use super::{Cell4Planes, Collar, CollarLayer, Generator, Mesh, SignedCell, SliceTopology};
use crate::error::{KareaError, Result};
use crate::scalar::{sc, Scalar};

/// Cell addressing for a cubical box complex, valid for meshes produced by
/// `build_box`. Cells are grouped by dimension, then by the lexicographic
/// axis subset, then enumerated with axis 0 fastest.
#[derive(Clone, Debug)]
pub(crate) struct BoxIndexer {
    pub sizes: Vec<usize>,
    pub periodic: Vec<bool>,
}

impl BoxIndexer {
    pub fn new(sizes: Vec<usize>, periodic: Vec<bool>) -> Self {
        assert_eq!(sizes.len(), periodic.len());
        BoxIndexer { sizes, periodic }
    }

    pub fn rank(&self) -> usize {
        self.sizes.len()
    }

    pub fn vcount(&self, axis: usize) -> usize {
        self.sizes[axis] + if self.periodic[axis] { 0 } else { 1 }
    }

    pub fn num_vertices(&self) -> usize {
        (0..self.rank()).map(|d| self.vcount(d)).product()
    }

    pub fn vid(&self, c: &[usize]) -> usize {
        let mut id = 0;
        for d in (0..self.rank()).rev() {
            id = id * self.vcount(d) + c[d];
        }
        id
    }

    pub fn vertex_coords(&self, mut id: usize) -> Vec<usize> {
        let mut c = vec![0; self.rank()];
        for (d, slot) in c.iter_mut().enumerate() {
            let n = self.vcount(d);
            *slot = id % n;
            id /= n;
        }
        c
    }

    /// Coordinate ranges of a cell class (axes in `mask` span a unit cell).
    fn class_ranges(&self, mask: &[usize]) -> Vec<usize> {
        (0..self.rank())
            .map(|d| {
                if mask.contains(&d) {
                    self.sizes[d]
                } else {
                    self.vcount(d)
                }
            })
            .collect()
    }

    fn class_count(&self, mask: &[usize]) -> usize {
        self.class_ranges(mask).iter().product()
    }

    fn index_in_class(&self, mask: &[usize], c: &[usize]) -> usize {
        let ranges = self.class_ranges(mask);
        let mut id = 0;
        for d in (0..self.rank()).rev() {
            id = id * ranges[d] + c[d];
        }
        id
    }

    /// All axis subsets of the given size, lexicographic.
    pub fn masks(&self, dim: usize) -> Vec<Vec<usize>> {
        let k = self.rank();
        let mut out = Vec::new();
        let mut pick = vec![0usize; dim];
        fn rec(k: usize, dim: usize, start: usize, pick: &mut Vec<usize>, depth: usize, out: &mut Vec<Vec<usize>>) {
            if depth == dim {
                out.push(pick.clone());
                return;
            }
            for a in start..k {
                pick[depth] = a;
                rec(k, dim, a + 1, pick, depth + 1, out);
            }
        }
        rec(k, dim, 0, &mut pick, 0, &mut out);
        out
    }

    pub fn cell_id(&self, dim: usize, mask: &[usize], c: &[usize]) -> usize {
        let mut offset = 0;
        for m in self.masks(dim) {
            if m == mask {
                return offset + self.index_in_class(mask, c);
            }
            offset += self.class_count(&m);
        }
        panic!("invalid axis mask");
    }

    pub fn eid(&self, axis: usize, c: &[usize]) -> usize {
        self.cell_id(1, &[axis], c)
    }

    pub fn pid(&self, a: usize, b: usize, c: &[usize]) -> usize {
        self.cell_id(2, &[a.min(b), a.max(b)], c)
    }

    /// Coordinates stepped by +1 along an axis, wrapping if periodic.
    pub fn step(&self, c: &[usize], axis: usize) -> Vec<usize> {
        let mut out = c.to_vec();
        out[axis] += 1;
        if self.periodic[axis] && out[axis] == self.sizes[axis] {
            out[axis] = 0;
        }
        out
    }

    /// Coordinates stepped by -1 along an axis, wrapping if periodic.
    pub fn step_back(&self, c: &[usize], axis: usize) -> Vec<usize> {
        let mut out = c.to_vec();
        if out[axis] == 0 {
            debug_assert!(self.periodic[axis]);
            out[axis] = self.sizes[axis] - 1;
        } else {
            out[axis] -= 1;
        }
        out
    }

    fn for_each_in_class(&self, mask: &[usize], mut f: impl FnMut(&[usize])) {
        let ranges = self.class_ranges(mask);
        let total: usize = ranges.iter().product();
        let mut c = vec![0usize; self.rank()];
        for _ in 0..total {
            f(&c);
            for d in 0..self.rank() {
                c[d] += 1;
                if c[d] < ranges[d] {
                    break;
                }
                c[d] = 0;
            }
        }
    }
}

/// Builds the full cubical complex of a (possibly periodic) box.
pub(crate) fn build_box<S: Scalar>(
    sizes: &[usize],
    periodic: &[bool],
    spacing: &[S],
    with_planes: bool,
) -> Result<Mesh<S>> {
    let k = sizes.len();
    if k == 0 || k > 4 {
        return Err(KareaError::Config("box rank must be 1..=4".into()));
    }
    for d in 0..k {
        if periodic[d] && sizes[d] < 3 {
            return Err(KareaError::Config(format!(
                "periodic direction {} needs resolution >= 3",
                d
            )));
        }
        if sizes[d] == 0 {
            return Err(KareaError::Config("empty box direction".into()));
        }
        if spacing[d] <= S::zero() {
            return Err(KareaError::Config("non-positive spacing".into()));
        }
    }
    let ix = BoxIndexer::new(sizes.to_vec(), periodic.to_vec());
    let mut mesh = Mesh::empty(k);
    mesh.num_vertices = ix.num_vertices();

    // Edges.
    for mask in ix.masks(1) {
        let a = mask[0];
        ix.for_each_in_class(&mask, |c| {
            mesh.edges.push([ix.vid(c), ix.vid(&ix.step(c, a))]);
            mesh.edge_length.push(spacing[a]);
        });
    }
    // Plaquettes.
    if k >= 2 {
        for mask in ix.masks(2) {
            let (a, b) = (mask[0], mask[1]);
            ix.for_each_in_class(&mask, |c| {
                let ca = ix.step(c, a);
                let cb = ix.step(c, b);
                mesh.plaquettes.push(vec![
                    SignedCell::new(ix.eid(a, c), 1),
                    SignedCell::new(ix.eid(b, &ca), 1),
                    SignedCell::new(ix.eid(a, &cb), -1),
                    SignedCell::new(ix.eid(b, c), -1),
                ]);
                mesh.plaquette_area.push(spacing[a] * spacing[b]);
            });
        }
    }
    // 3-cells.
    if k >= 3 {
        for mask in ix.masks(3) {
            ix.for_each_in_class(&mask, |c| {
                let mut faces = Vec::with_capacity(6);
                for (pos, &ax) in mask.iter().enumerate() {
                    let others: Vec<usize> =
                        mask.iter().copied().filter(|&d| d != ax).collect();
                    let sgn: i8 = if pos % 2 == 0 { 1 } else { -1 };
                    let far = ix.pid(others[0], others[1], &ix.step(c, ax));
                    let near = ix.pid(others[0], others[1], c);
                    faces.push(SignedCell::new(far, sgn));
                    faces.push(SignedCell::new(near, -sgn));
                }
                mesh.cells3.push(faces);
                mesh.cell3_volume
                    .push(mask.iter().map(|&d| spacing[d]).fold(S::one(), |x, y| x * y));
            });
        }
    }
    // 4-cells.
    if k == 4 {
        let mask = vec![0usize, 1, 2, 3];
        ix.for_each_in_class(&mask, |c| {
            let mut faces = Vec::with_capacity(8);
            for ax in 0..4usize {
                let others: Vec<usize> = (0..4).filter(|&d| d != ax).collect();
                let sgn: i8 = if ax % 2 == 0 { 1 } else { -1 };
                let far = ix.cell_id(3, &others, &ix.step(c, ax));
                let near = ix.cell_id(3, &others, c);
                faces.push(SignedCell::new(far, sgn));
                faces.push(SignedCell::new(near, -sgn));
            }
            mesh.cells4.push(faces);
            mesh.cell4_volume
                .push((0..4).map(|d| spacing[d]).fold(S::one(), |x, y| x * y));
        });
        if with_planes {
            if !periodic.iter().all(|&p| p) {
                return Err(KareaError::Config(
                    "clover metadata requires a periodic box".into(),
                ));
            }
            ix.for_each_in_class(&mask, |c| {
                mesh.cell4_planes.push(Some(clover_planes(&ix, c)));
            });
        }
    }
    mesh.boundary = mesh.compute_boundary();
    Ok(mesh)
}

/// The four same-sense clover loops around a base vertex in each of the six
/// coordinate planes.
fn clover_planes(ix: &BoxIndexer, c: &[usize]) -> Cell4Planes {
    let mut planes: [[Vec<SignedCell>; 4]; 6] = Default::default();
    let pairs = [(0usize, 1usize), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    for (slot, &(a, b)) in pairs.iter().enumerate() {
        let v = c.to_vec();
        let va = ix.step(&v, a);
        let vb = ix.step(&v, b);
        let ma = ix.step_back(&v, a);
        let mb = ix.step_back(&v, b);
        let mab = ix.step_back(&ma, b);
        let ma_pb = ix.step(&ma, b);
        let pa_mb = ix.step(&mb, a);
        // Quadrant (+a,+b): v -> +a -> +b -> -a -> -b.
        planes[slot][0] = vec![
            SignedCell::new(ix.eid(a, &v), 1),
            SignedCell::new(ix.eid(b, &va), 1),
            SignedCell::new(ix.eid(a, &vb), -1),
            SignedCell::new(ix.eid(b, &v), -1),
        ];
        // Quadrant (-a,+b): v -> +b -> -a -> -b -> +a.
        planes[slot][1] = vec![
            SignedCell::new(ix.eid(b, &v), 1),
            SignedCell::new(ix.eid(a, &ma_pb), -1),
            SignedCell::new(ix.eid(b, &ma), -1),
            SignedCell::new(ix.eid(a, &ma), 1),
        ];
        // Quadrant (-a,-b): v -> -a -> -b -> +a -> +b.
        planes[slot][2] = vec![
            SignedCell::new(ix.eid(a, &ma), -1),
            SignedCell::new(ix.eid(b, &mab), -1),
            SignedCell::new(ix.eid(a, &mab), 1),
            SignedCell::new(ix.eid(b, &mb), 1),
        ];
        // Quadrant (+a,-b): v -> -b -> +a -> +b -> -a.
        planes[slot][3] = vec![
            SignedCell::new(ix.eid(b, &mb), -1),
            SignedCell::new(ix.eid(a, &mb), 1),
            SignedCell::new(ix.eid(b, &pa_mb), 1),
            SignedCell::new(ix.eid(a, &v), -1),
        ];
    }
    Cell4Planes {
        base_vertex: ix.vid(c),
        planes,
    }
}

/// Cone over a mesh: adds an apex and a (d+1)-cell over every d-cell.
/// Spokes get length `h`; cone measures use the pyramid rule.
pub(crate) fn cone<S: Scalar>(base: &Mesh<S>, h: S) -> Result<Mesh<S>> {
    if base.dim > 3 {
        return Err(KareaError::Config("cone would exceed dimension 4".into()));
    }
    if h <= S::zero() {
        return Err(KareaError::Config("cone height must be positive".into()));
    }
    let mut out = base.clone();
    out.dim = base.dim + 1;
    out.regions.clear();
    out.collar = None;
    out.generator = None;
    out.involution = None;
    out.cell4_planes = Vec::new();
    let apex = out.num_vertices;
    out.num_vertices += 1;
    // Spokes: cone over each vertex, edge vertex -> apex.
    let spoke_base = out.edges.len();
    for v in 0..base.num_vertices {
        out.edges.push([v, apex]);
        out.edge_length.push(h);
    }
    let spoke = |v: usize| spoke_base + v;
    // Cone plaquettes over edges: cycle e, spoke(head), -spoke(tail).
    let cone_plaq_base = out.plaquettes.len();
    for (e, [t, hd]) in base.edges.iter().enumerate() {
        out.plaquettes.push(vec![
            SignedCell::new(e, 1),
            SignedCell::new(spoke(*hd), 1),
            SignedCell::new(spoke(*t), -1),
        ]);
        out.plaquette_area
            .push(base.edge_length[e] * h / sc::<S>(2.0));
    }
    let cone_plaq = |e: usize| cone_plaq_base + e;
    // Cone 3-cells over plaquettes: d(CP) = C(dP) - P.
    let cone3_base = out.cells3.len();
    for (p, cycle) in base.plaquettes.iter().enumerate() {
        let mut faces: Vec<SignedCell> = cycle
            .iter()
            .map(|f| SignedCell::new(cone_plaq(f.id), f.sign))
            .collect();
        faces.push(SignedCell::new(p, -1));
        out.cells3.push(faces);
        out.cell3_volume
            .push(base.plaquette_area[p] * h / sc::<S>(3.0));
    }
    let cone3 = |p: usize| cone3_base + p;
    // Cone 4-cells over 3-cells: d(Cc) = C(dc) + c.
    for (c, shell) in base.cells3.iter().enumerate() {
        let mut faces: Vec<SignedCell> = shell
            .iter()
            .map(|f| SignedCell::new(cone3(f.id), f.sign))
            .collect();
        faces.push(SignedCell::new(c, 1));
        out.cells4.push(faces);
        out.cell4_volume
            .push(base.cell3_volume[c] * h / sc::<S>(4.0));
    }
    out.boundary = out.compute_boundary();
    Ok(out)
}

/// A circle with `n` edges of the given total circumference.
pub(crate) fn circle<S: Scalar>(n: usize, circumference: S) -> Result<Mesh<S>> {
    build_box(&[n], &[true], &[circumference / sc::<S>(n as f64)], false)
}

/// A path with `n` segments of the given total length.
pub(crate) fn path<S: Scalar>(n: usize, length: S) -> Result<Mesh<S>> {
    build_box(&[n], &[false], &[length / sc::<S>(n as f64)], false)
}

/// Two points (S^0), no edges.
pub(crate) fn two_points<S: Scalar>() -> Mesh<S> {
    let mut m = Mesh::empty(0);
    m.num_vertices = 2;
    m
}

/// Cubical sphere shell: boundary of an n-subdivided cube (dim 2) or
/// hypercube (dim 3), with flat cubical metric of the given spacing.
pub(crate) fn shell<S: Scalar>(dim: usize, n: usize, spacing: S) -> Result<Mesh<S>> {
    let solid = match dim {
        2 => build_box(&[n, n, n], &[false; 3], &[spacing; 3], false)?,
        3 => build_box(&[n, n, n, n], &[false; 4], &[spacing; 4], false)?,
        _ => return Err(KareaError::Config("shell dim must be 2 or 3".into())),
    };
    let (mesh, _, _) = extract_boundary_complex(&solid)?;
    mesh.validate()?;
    Ok(mesh)
}

fn cubed_sphere<S: Scalar>(n: usize, radius: S) -> Result<Mesh<S>> {
    if n < 2 {
        return Err(KareaError::Config("cubed sphere needs n >= 2".into()));
    }
    if radius <= S::zero() {
        return Err(KareaError::Config("radius must be positive".into()));
    }
    let spacing = sc::<S>(2.0) / sc::<S>(n as f64);
    let solid = build_box(&[n, n, n], &[false; 3], &[spacing; 3], false)?;
    let ix = BoxIndexer::new(vec![n, n, n], vec![false; 3]);
    let (mut surf, maps, _) = extract_boundary_complex(&solid)?;
    // Project surface vertices onto the sphere.
    let mut pos: Vec<[S; 3]> = Vec::with_capacity(surf.num_vertices);
    for v in 0..surf.num_vertices {
        let c = ix.vertex_coords(maps.back[0][v]);
        let x: Vec<S> = c
            .iter()
            .map(|&ci| sc::<S>(-1.0) + spacing * sc::<S>(ci as f64))
            .collect();
        let norm = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        pos.push([
            radius * x[0] / norm,
            radius * x[1] / norm,
            radius * x[2] / norm,
        ]);
    }
    let sub = |a: &[S; 3], b: &[S; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let norm3 = |a: &[S; 3]| (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    for (e, [t, h]) in surf.edges.iter().enumerate() {
        surf.edge_length[e] = norm3(&sub(&pos[*h], &pos[*t]));
    }
    // Flat-quad area: half the cross product of the diagonals.
    for p in 0..surf.plaquettes.len() {
        let vs = surf.plaquette_vertices(p);
        let d1 = sub(&pos[vs[2]], &pos[vs[0]]);
        let d2 = sub(&pos[vs[3]], &pos[vs[1]]);
        let cross = [
            d1[1] * d2[2] - d1[2] * d2[1],
            d1[2] * d2[0] - d1[0] * d2[2],
            d1[0] * d2[1] - d1[1] * d2[0],
        ];
        surf.plaquette_area[p] = norm3(&cross) / sc::<S>(2.0);
    }
    surf.generator = Some(Generator::CubedSphere { n, radius });
    Ok(surf)
}

fn cylinder<S: Scalar>(n: usize, radius: S, t0: S, t1: S, levels: usize) -> Result<Mesh<S>> {
    if levels == 0 {
        return Err(KareaError::Config("cylinder needs at least one level".into()));
    }
    if t1 <= t0 {
        return Err(KareaError::Config("cylinder needs t1 > t0".into()));
    }
    let tau = sc::<S>(std::f64::consts::TAU);
    let dx = tau * radius / sc::<S>(n as f64);
    let dt = (t1 - t0) / sc::<S>(levels as f64);
    let mut mesh = build_box(&[n, levels], &[true, false], &[dx, dt], false)?;
    let ix = BoxIndexer::new(vec![n, levels], vec![true, false]);
    let slice = SliceTopology {
        dim: 1,
        num_vertices: n,
        edges: (0..n).map(|x| [x, (x + 1) % n]).collect(),
        plaquettes: Vec::new(),
        cells3: Vec::new(),
        edge_length: vec![dx; n],
        plaquette_area: Vec::new(),
        cell3_volume: Vec::new(),
    };
    let mut layers = Vec::with_capacity(levels + 1);
    for i in 0..=levels {
        let mut cells: [Vec<usize>; 4] = Default::default();
        let mut vertical: [Vec<usize>; 4] = Default::default();
        for x in 0..n {
            cells[0].push(ix.vid(&[x, i]));
            cells[1].push(ix.eid(0, &[x, i]));
            if i < levels {
                vertical[0].push(ix.eid(1, &[x, i]));
                vertical[1].push(ix.pid(0, 1, &[x, i]));
            }
        }
        layers.push(CollarLayer {
            t: t0 + dt * sc::<S>(i as f64),
            cells,
            vertical,
        });
    }
    mesh.collar = Some(Collar {
        slice,
        layers,
        t_range: [t0, t1],
    });
    Ok(mesh)
}

/// Generator specification accepted by `gen_mesh`.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub enum GeneratorSpec<S: Scalar> {
    /// Square torus T^2 with nx*ny plaquettes and side lengths lx, ly.
    Torus2 { nx: usize, ny: usize, lx: S, ly: S },
    /// Hypercubic torus T^4, n^4 cells, equal side length per direction.
    Torus4 { n: usize, length: S },
    /// Six projected faces of an n-subdivided cube on a sphere.
    CubedSphere { n: usize, radius: S },
    /// S^1 x [t0, t1] with a product collar.
    Cylinder { n: usize, radius: S, t0: S, t1: S, levels: usize },
    /// Triangle-fan disk D^2 of the given radius.
    Disk { n: usize, radius: S },
    /// Cubical sphere shell S^2 (dim 2) or S^3 (dim 3).
    Sphere { dim: usize, n: usize, spacing: S },
    /// Cone ball D^2/D^3/D^4 over the matching shell.
    Ball { dim: usize, n: usize, scale: S },
    /// S^p x D^q, p + q in {2, 4}.
    Handle { p: usize, q: usize, n: usize, scale: S },
    /// D^{p+1} x S^{q-1}, p + q in {2, 4}.
    HandleDual { p: usize, q: usize, n: usize, scale: S },
    /// T^2 x S^2 (equivalently S^1 x S^1 x S^2).
    ProductT2S2 { n_torus: usize, side: S, n_sphere: usize, radius: S },
}

pub(crate) fn sphere_mesh<S: Scalar>(p: usize, n: usize, scale: S) -> Result<Mesh<S>> {
    match p {
        0 => Ok(two_points()),
        1 => circle(n, scale * sc::<S>(n as f64)),
        2 | 3 => shell(p, n, scale),
        _ => Err(KareaError::Config(format!("unsupported sphere dim {}", p))),
    }
}

pub(crate) fn ball_mesh<S: Scalar>(q: usize, n: usize, scale: S) -> Result<Mesh<S>> {
    match q {
        1 => path(2, scale * sc::<S>(2.0)),
        2 => {
            let rim = circle(n, scale * sc::<S>(n as f64))?;
            cone(&rim, scale * sc::<S>(n as f64) / sc::<S>(std::f64::consts::TAU))
        }
        3 => cone(&shell(2, n, scale)?, scale * sc::<S>(n as f64)),
        4 => cone(&shell(3, n, scale)?, scale * sc::<S>(n as f64)),
        _ => Err(KareaError::Config(format!("unsupported ball dim {}", q))),
    }
}

/// Builds a mesh from a generator specification and validates it.
pub fn gen_mesh<S: Scalar>(spec: &GeneratorSpec<S>) -> Result<Mesh<S>> {
    let mesh = match spec {
        GeneratorSpec::Torus2 { nx, ny, lx, ly } => {
            let mut m = build_box(
                &[*nx, *ny],
                &[true, true],
                &[*lx / sc::<S>(*nx as f64), *ly / sc::<S>(*ny as f64)],
                false,
            )?;
            m.generator = Some(Generator::Torus {
                dims: vec![*nx, *ny],
                lengths: vec![*lx, *ly],
            });
            m
        }
        GeneratorSpec::Torus4 { n, length } => {
            let sp = *length / sc::<S>(*n as f64);
            let mut m = build_box(&[*n; 4], &[true; 4], &[sp; 4], true)?;
            m.generator = Some(Generator::Torus {
                dims: vec![*n; 4],
                lengths: vec![*length; 4],
            });
            m
        }
        GeneratorSpec::CubedSphere { n, radius } => cubed_sphere(*n, *radius)?,
        GeneratorSpec::Cylinder { n, radius, t0, t1, levels } => {
            cylinder(*n, *radius, *t0, *t1, *levels)?
        }
        GeneratorSpec::Disk { n, radius } => {
            if *n < 3 {
                return Err(KareaError::Config("disk needs n >= 3".into()));
            }
            let tau = sc::<S>(std::f64::consts::TAU);
            let rim = circle(*n, tau * *radius)?;
            cone(&rim, *radius)?
        }
        GeneratorSpec::Sphere { dim, n, spacing } => sphere_mesh(*dim, *n, *spacing)?,
        GeneratorSpec::Ball { dim, n, scale } => ball_mesh(*dim, *n, *scale)?,
        GeneratorSpec::Handle { p, q, n, scale } => {
            check_handle_dims(*p, *q)?;
            let (m, _) = product(&sphere_mesh(*p, *n, *scale)?, &ball_mesh(*q, *n, *scale)?)?;
            m
        }
        GeneratorSpec::HandleDual { p, q, n, scale } => {
            check_handle_dims(*p, *q)?;
            let (m, _) = product(&ball_mesh(p + 1, *n, *scale)?, &sphere_mesh(q - 1, *n, *scale)?)?;
            m
        }
        GeneratorSpec::ProductT2S2 { n_torus, side, n_sphere, radius } => {
            let t2 = gen_mesh(&GeneratorSpec::Torus2 {
                nx: *n_torus,
                ny: *n_torus,
                lx: *side,
                ly: *side,
            })?;
            let s2 = cubed_sphere(*n_sphere, *radius)?;
            let (m, _) = product(&t2, &s2)?;
            m
        }
    };
    mesh.validate()?;
    Ok(mesh)
}

fn check_handle_dims(p: usize, q: usize) -> Result<()> {
    if q == 0 || p + q != 2 && p + q != 4 {
        return Err(KareaError::Config(format!(
            "handle dimensions p={}, q={} unsupported (p+q must be 2 or 4)",
            p, q
        )));
    }
    Ok(())
}
