//! P1 finite elements for `I(u) = ½∫|∇u|² − ∫F(u)` on a triangle mesh.
//!
//! Dirichlet nodes are eliminated: matrices act on the free nodes only, while
//! [`Field`] stores a value for every node with exact zeros on the boundary.

mod sparse;

pub use sparse::{conjugate_gradient, inverse_iteration, minres, minres_with, solve_spd, CgOutcome, CsrMatrix, EigenPair, SparseSpd, CG_TOL};

use crate::error::{Error, Result};
use crate::geometry::{DiskMesh, Point, TriMesh};
use crate::nonlinearity::Nonlinearity;
use crate::quadrature::TriangleRule;

/// Nodal values of a P1 function; Dirichlet nodes hold exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, t: f64) -> Field {
        Field {
            values: self.values.iter().map(|v| t * v).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Map between mesh nodes and free degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeDofs {
    pub node_to_dof: Vec<Option<usize>>,
    pub dof_to_node: Vec<usize>,
}

impl FreeDofs {
    pub fn new(mesh: &TriMesh) -> Self {
        let mut node_to_dof = vec![None; mesh.nodes.len()];
        let mut dof_to_node = Vec::new();
        for (i, &b) in mesh.boundary.iter().enumerate() {
            if !b {
                node_to_dof[i] = Some(dof_to_node.len());
                dof_to_node.push(i);
            }
        }
        Self {
            node_to_dof,
            dof_to_node,
        }
    }

    pub fn len(&self) -> usize {
        self.dof_to_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dof_to_node.is_empty()
    }
}

/// Per-triangle geometry: area and the constant gradients of the three hat functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub area: f64,
    pub grads: [Point; 3],
}

pub fn element_geometry(mesh: &TriMesh, t: usize) -> Result<ElementGeometry> {
    let [a, b, c] = mesh.triangles[t];
    let (p, q, r) = (mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]);
    let twice = (q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]);
    let area = 0.5 * twice;
    // shape-relative test, plus a floor for coordinate round-off
    let edge = |u: Point, v: Point| (u[0] - v[0]).hypot(u[1] - v[1]);
    let longest = edge(p, q).max(edge(q, r)).max(edge(r, p));
    let scale = p[0].abs().max(p[1].abs()).max(1.0);
    if !(area > (1e-10 * longest * longest).max(64.0 * f64::EPSILON * scale * longest)) {
        return Err(Error::DegenerateTriangle { triangle: t, area });
    }
    let grads = [
        [(q[1] - r[1]) / twice, (r[0] - q[0]) / twice],
        [(r[1] - p[1]) / twice, (p[0] - r[0]) / twice],
        [(p[1] - q[1]) / twice, (q[0] - p[0]) / twice],
    ];
    Ok(ElementGeometry { area, grads })
}

fn stiffness_triplets(mesh: &TriMesh, map: impl Fn(usize) -> Option<usize>) -> Result<Vec<(usize, usize, f64)>> {
    let mut triplets = Vec::with_capacity(9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let geo = element_geometry(mesh, t)?;
        for i in 0..3 {
            let Some(di) = map(tri[i]) else { continue };
            for j in 0..3 {
                let Some(dj) = map(tri[j]) else { continue };
                let g = (geo.grads[i], geo.grads[j]);
                triplets.push((di, dj, geo.area * (g.0[0] * g.1[0] + g.0[1] * g.1[1])));
            }
        }
    }
    Ok(triplets)
}

/// Stiffness matrix on all nodes, before Dirichlet elimination (singular).
pub fn assemble_stiffness_full(mesh: &TriMesh) -> Result<CsrMatrix> {
    let triplets = stiffness_triplets(mesh, Some)?;
    Ok(CsrMatrix::from_triplets(mesh.nodes.len(), triplets))
}

/// Stiffness matrix with Dirichlet rows and columns eliminated.
pub fn assemble_stiffness(mesh: &TriMesh) -> Result<SparseSpd> {
    let dofs = FreeDofs::new(mesh);
    if dofs.is_empty() {
        return Err(Error::Mesh("mesh has no free nodes".into()));
    }
    let triplets = stiffness_triplets(mesh, |i| dofs.node_to_dof[i])?;
    SparseSpd::new(CsrMatrix::from_triplets(dofs.len(), triplets))
}

/// Consistent P1 mass matrix on the free nodes.
pub fn assemble_mass(mesh: &TriMesh) -> Result<CsrMatrix> {
    let dofs = FreeDofs::new(mesh);
    let mut triplets = Vec::with_capacity(9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let geo = element_geometry(mesh, t)?;
        for i in 0..3 {
            let Some(di) = dofs.node_to_dof[tri[i]] else { continue };
            for j in 0..3 {
                let Some(dj) = dofs.node_to_dof[tri[j]] else { continue };
                let w = if i == j { 2.0 } else { 1.0 };
                triplets.push((di, dj, geo.area * w / 12.0));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(dofs.len(), triplets))
}

/// Smallest Dirichlet eigenvalue of `−Δ` on the mesh.
pub fn lambda1(mesh: &TriMesh) -> Result<f64> {
    let k = assemble_stiffness(mesh)?;
    let mass = assemble_mass(mesh)?;
    inverse_iteration(&k, &mass, 1e-9, 500).map(|pair| pair.value)
}

/// A mesh with its stiffness matrix, dof map and nonlinear quadrature rule.
#[derive(Debug, Clone)]
pub struct FemSpace {
    pub mesh: TriMesh,
    pub dofs: FreeDofs,
    pub stiffness: SparseSpd,
    pub rule: TriangleRule,
    elements: Vec<ElementGeometry>,
}

impl FemSpace {
    pub fn new(mesh: TriMesh) -> Result<Self> {
        Self::with_rule(mesh, TriangleRule::degree5())
    }

    pub fn with_rule(mesh: TriMesh, rule: TriangleRule) -> Result<Self> {
        mesh.validate()?;
        let elements = (0..mesh.triangles.len())
            .map(|t| element_geometry(&mesh, t))
            .collect::<Result<Vec<_>>>()?;
        let stiffness = assemble_stiffness(&mesh)?;
        Ok(Self {
            dofs: FreeDofs::new(&mesh),
            mesh,
            stiffness,
            rule,
            elements,
        })
    }

    pub fn elements(&self) -> &[ElementGeometry] {
        &self.elements
    }

    pub fn zero_field(&self) -> Field {
        Field {
            values: vec![0.0; self.mesh.nodes.len()],
        }
    }

    /// Wraps nodal values, forcing Dirichlet entries to 0.
    pub fn field(&self, mut values: Vec<f64>) -> Result<Field> {
        if values.len() != self.mesh.nodes.len() {
            return Err(Error::InvalidInput(format!(
                "field has {} values for {} nodes",
                values.len(),
                self.mesh.nodes.len()
            )));
        }
        for (v, &b) in values.iter_mut().zip(&self.mesh.boundary) {
            if b {
                *v = 0.0;
            }
        }
        Ok(Field { values })
    }

    pub fn interpolate<G: Fn(Point) -> f64>(&self, g: G) -> Field {
        let values = self
            .mesh
            .nodes
            .iter()
            .zip(&self.mesh.boundary)
            .map(|(&x, &b)| if b { 0.0 } else { g(x) })
            .collect();
        Field { values }
    }

    pub fn reduce(&self, u: &Field) -> Vec<f64> {
        self.dofs.dof_to_node.iter().map(|&i| u.values[i]).collect()
    }

    pub fn extend(&self, free: &[f64]) -> Field {
        let mut values = vec![0.0; self.mesh.nodes.len()];
        for (&i, &v) in self.dofs.dof_to_node.iter().zip(free) {
            values[i] = v;
        }
        Field { values }
    }

    fn check(&self, u: &Field) -> Result<()> {
        if u.len() == self.mesh.nodes.len() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "field has {} values for {} nodes",
                u.len(),
                self.mesh.nodes.len()
            )))
        }
    }

    /// `∫∇u·∇v`.
    pub fn stiffness_form(&self, u: &Field, v: &Field) -> f64 {
        let ku = self.stiffness.matvec(&self.reduce(u));
        ku.iter().zip(self.reduce(v)).map(|(a, b)| a * b).sum()
    }

    pub fn h1_norm(&self, u: &Field) -> f64 {
        self.stiffness.matrix.quadratic_form(&self.reduce(u)).max(0.0).sqrt()
    }

    /// `Σ_T |T| Σ_q w_q F(u_h(x_q))`.
    pub fn nonlinear_integral(&self, nl: &Nonlinearity, u: &Field) -> Result<f64> {
        self.check(u)?;
        let mut total = 0.0;
        for (tri, geo) in self.mesh.triangles.iter().zip(&self.elements) {
            let nodal = tri.map(|i| u.values[i]);
            if nodal == [0.0; 3] {
                continue;
            }
            let mut local = 0.0;
            for (p, w) in self.rule.points.iter().zip(&self.rule.weights) {
                let uh = p[0] * nodal[0] + p[1] * nodal[1] + p[2] * nodal[2];
                local += w * nl.primitive(uh)?;
            }
            total += geo.area * local;
        }
        Ok(total)
    }

    /// Load vector `b(u)_i = ∫ f(u_h) φ_i` on the free nodes.
    pub fn load(&self, nl: &Nonlinearity, u: &Field) -> Result<Vec<f64>> {
        self.check(u)?;
        let mut b = vec![0.0; self.dofs.len()];
        for (tri, geo) in self.mesh.triangles.iter().zip(&self.elements) {
            let nodal = tri.map(|i| u.values[i]);
            if nodal == [0.0; 3] && nl.even_perturbation == 0.0 {
                continue;
            }
            let mut local = [0.0; 3];
            for (p, w) in self.rule.points.iter().zip(&self.rule.weights) {
                let uh = p[0] * nodal[0] + p[1] * nodal[1] + p[2] * nodal[2];
                let fw = w * nl.f(uh)?;
                for k in 0..3 {
                    local[k] += fw * p[k];
                }
            }
            for k in 0..3 {
                if let Some(d) = self.dofs.node_to_dof[tri[k]] {
                    b[d] += geo.area * local[k];
                }
            }
        }
        Ok(b)
    }

    /// `∫ f(u_h) v_h`.
    pub fn directional_load(&self, nl: &Nonlinearity, u: &Field, v: &Field) -> Result<f64> {
        let b = self.load(nl, u)?;
        Ok(b.iter().zip(self.reduce(v)).map(|(a, b)| a * b).sum())
    }

    /// Discrete energy `I_h(u) = ½uᵀKu − ∫F(u_h)`.
    pub fn energy(&self, nl: &Nonlinearity, u: &Field) -> Result<f64> {
        let quad = 0.5 * self.stiffness.matrix.quadratic_form(&self.reduce(u));
        Ok(quad - self.nonlinear_integral(nl, u)?)
    }

    /// Gradient `Ku − b(u)` on the free nodes.
    pub fn grad_free(&self, nl: &Nonlinearity, u: &Field) -> Result<Vec<f64>> {
        let mut g = self.stiffness.matvec(&self.reduce(u));
        for (gi, bi) in g.iter_mut().zip(self.load(nl, u)?) {
            *gi -= bi;
        }
        Ok(g)
    }

    pub fn grad_energy(&self, nl: &Nonlinearity, u: &Field) -> Result<Field> {
        Ok(self.extend(&self.grad_free(nl, u)?))
    }

    /// Hessian `K − B(u)` with `B_ij = ∫ f'(u_h) φ_i φ_j`, on the free nodes.
    pub fn tangent_matrix(&self, nl: &Nonlinearity, u: &Field) -> Result<CsrMatrix> {
        self.check(u)?;
        let mut triplets = stiffness_triplets(&self.mesh, |i| self.dofs.node_to_dof[i])?;
        for (tri, geo) in self.mesh.triangles.iter().zip(&self.elements) {
            let nodal = tri.map(|i| u.values[i]);
            let mut local = [[0.0; 3]; 3];
            for (p, w) in self.rule.points.iter().zip(&self.rule.weights) {
                let uh = p[0] * nodal[0] + p[1] * nodal[1] + p[2] * nodal[2];
                let dfw = w * nl.df(uh)?;
                if dfw == 0.0 {
                    continue;
                }
                for i in 0..3 {
                    for j in 0..3 {
                        local[i][j] += dfw * p[i] * p[j];
                    }
                }
            }
            for i in 0..3 {
                let Some(di) = self.dofs.node_to_dof[tri[i]] else { continue };
                for j in 0..3 {
                    let Some(dj) = self.dofs.node_to_dof[tri[j]] else { continue };
                    if local[i][j] != 0.0 {
                        triplets.push((di, dj, -geo.area * local[i][j]));
                    }
                }
            }
        }
        Ok(CsrMatrix::from_triplets(self.dofs.len(), triplets))
    }

    /// Solves `K w = rhs` on the free nodes.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        solve_spd(&self.stiffness, rhs)
    }

    /// Longest triangle edge touching `B(center, radius)`.
    pub fn local_h(&self, center: Point, radius: f64) -> Option<f64> {
        self.mesh.local_max_edge(center, radius)
    }
}

/// Embeds a field on the sector mesh into the disk mesh, zero outside the sector.
pub fn zero_extension(disk: &DiskMesh, u: &Field) -> Result<Field> {
    let map = &disk.copies[0];
    if u.len() != map.len() {
        return Err(Error::InvalidInput(format!(
            "sector field has {} values, sector mesh has {} nodes",
            u.len(),
            map.len()
        )));
    }
    let mut values = vec![0.0; disk.mesh.nodes.len()];
    for (p, &i) in map.iter().enumerate() {
        values[i] = u.values[p];
    }
    Ok(Field { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_disk_mesh, mesh_sector, Sector};
    use crate::nonlinearity::Model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn half_disk(h: f64) -> FemSpace {
        let s = Sector::new(1).unwrap();
        FemSpace::new(mesh_sector(&s, h, 2.0).unwrap()).unwrap()
    }

    fn random_field(space: &FemSpace, rng: &mut ChaCha8Rng, amp: f64) -> Field {
        let values = (0..space.mesh.nodes.len()).map(|_| amp * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        space.field(values).unwrap()
    }

    #[test]
    fn stiffness_symmetric_with_zero_row_sums() {
        let space = half_disk(0.1);
        assert_eq!(space.stiffness.matrix.max_asymmetry(), 0.0);
        let full = assemble_stiffness_full(&space.mesh).unwrap();
        assert_eq!(full.max_asymmetry(), 0.0);
        let scale = full.diagonal().iter().fold(0.0, |m: f64, v| m.max(*v));
        assert!(full.row_sums().iter().all(|s| s.abs() < 1e-12 * scale));
    }

    #[test]
    fn degenerate_triangle_is_named() {
        let mut mesh = half_disk(0.2).mesh;
        let [a, b, _] = mesh.triangles[5];
        let mid = [
            0.5 * (mesh.nodes[a][0] + mesh.nodes[b][0]),
            0.5 * (mesh.nodes[a][1] + mesh.nodes[b][1]),
        ];
        mesh.nodes.push(mid);
        mesh.boundary.push(false);
        mesh.triangles[5][2] = mesh.nodes.len() - 1;
        match assemble_stiffness(&mesh) {
            Err(Error::DegenerateTriangle { triangle, .. }) => assert_eq!(triangle, 5),
            other => panic!("expected degenerate triangle error, got {other:?}"),
        }
    }

    #[test]
    fn patch_test_reproduces_boundary_flux() {
        // K·u for linear u vanishes at interior nodes and equals ∮ ∂ₙu φᵢ on the boundary
        let mesh = half_disk(0.1).mesh;
        let full = assemble_stiffness_full(&mesh).unwrap();
        let g = [0.7, -1.3];
        let u: Vec<f64> = mesh.nodes.iter().map(|x| 2.0 + g[0] * x[0] + g[1] * x[1]).collect();
        let ku = full.matvec(&u);
        let mut flux = vec![0.0; mesh.nodes.len()];
        for ((a, b), n) in mesh.edge_counts() {
            if n != 1 {
                continue;
            }
            // boundary edges carry the outward normal of their unique ccw triangle
            let tri = mesh
                .triangles
                .iter()
                .find(|t| t.contains(&a) && t.contains(&b))
                .unwrap();
            let pos = |v: usize| tri.iter().position(|&w| w == v).unwrap();
            let (s, e) = if (pos(a) + 1) % 3 == pos(b) { (a, b) } else { (b, a) };
            let d = [mesh.nodes[e][0] - mesh.nodes[s][0], mesh.nodes[e][1] - mesh.nodes[s][1]];
            let normal_len = [d[1], -d[0]];
            let q = 0.5 * (g[0] * normal_len[0] + g[1] * normal_len[1]);
            flux[a] += q;
            flux[b] += q;
        }
        for i in 0..mesh.nodes.len() {
            assert!((ku[i] - flux[i]).abs() < 1e-12, "node {i}: {} vs {}", ku[i], flux[i]);
        }
    }

    #[test]
    fn energy_basics() {
        let space = half_disk(0.1);
        let nl = Nonlinearity::canonical(1.0).unwrap();
        let zero = space.zero_field();
        assert_eq!(space.energy(&nl, &zero).unwrap(), 0.0);
        assert!(space.grad_energy(&nl, &zero).unwrap().values.iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_field(&space, &mut rng, 0.6);
        let norm = space.h1_norm(&u);
        let zm = Nonlinearity::zero();
        let quad = space.stiffness.matrix.quadratic_form(&space.reduce(&u));
        assert_eq!(space.energy(&zm, &u).unwrap(), 0.5 * quad);
        let ku = space.stiffness.matvec(&space.reduce(&u));
        assert_eq!(space.grad_free(&zm, &u).unwrap(), ku);
        // energy split
        let split = space.energy(&nl, &u).unwrap() + space.nonlinear_integral(&nl, &u).unwrap();
        assert!((split - 0.5 * norm * norm).abs() < 1e-12 * norm * norm);
    }

    #[test]
    fn out_of_range_values_are_errors() {
        let space = half_disk(0.2);
        let nl = Nonlinearity::canonical(1.0).unwrap();
        let u = space.interpolate(|_| 9.0);
        assert!(matches!(space.energy(&nl, &u), Err(Error::Range { .. })));
        assert!(matches!(space.grad_energy(&nl, &u), Err(Error::Range { .. })));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let space = half_disk(0.1);
        let nl = Nonlinearity::new(Model::Canonical, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for pair in 0..20 {
            let u = random_field(&space, &mut rng, 0.8);
            let v = random_field(&space, &mut rng, 0.8);
            let exact: f64 = space
                .grad_free(&nl, &u)
                .unwrap()
                .iter()
                .zip(space.reduce(&v))
                .map(|(a, b)| a * b)
                .sum();
            let fd = |h: f64| {
                let plus = Field {
                    values: u.values.iter().zip(&v.values).map(|(a, b)| a + h * b).collect(),
                };
                let minus = Field {
                    values: u.values.iter().zip(&v.values).map(|(a, b)| a - h * b).collect(),
                };
                (space.energy(&nl, &plus).unwrap() - space.energy(&nl, &minus).unwrap()) / (2.0 * h)
            };
            let e1 = (fd(2e-3) - exact).abs();
            let e2 = (fd(1e-3) - exact).abs();
            let order = (e1 / e2).log2();
            assert!(order >= 1.9, "pair {pair}: order {order} ({e1:e}, {e2:e})");
        }
    }

    #[test]
    fn tangent_matrix_is_the_gradient_jacobian() {
        let space = half_disk(0.1);
        let nl = Nonlinearity::canonical(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_field(&space, &mut rng, 0.7);
        let v = random_field(&space, &mut rng, 1.0);
        let h = 1e-6;
        let shift = |s: f64| Field {
            values: u.values.iter().zip(&v.values).map(|(a, b)| a + s * b).collect(),
        };
        let gp = space.grad_free(&nl, &shift(h)).unwrap();
        let gm = space.grad_free(&nl, &shift(-h)).unwrap();
        let hv = space.tangent_matrix(&nl, &u).unwrap().matvec(&space.reduce(&v));
        let scale = hv.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
        for i in 0..hv.len() {
            let fd = (gp[i] - gm[i]) / (2.0 * h);
            assert!((fd - hv[i]).abs() < 1e-6 * scale, "dof {i}: {fd} vs {}", hv[i]);
        }
    }

    #[test]
    fn zero_extension_is_an_isometry() {
        for m in 1..=3 {
            let s = Sector::new(m).unwrap();
            let sector_mesh = mesh_sector(&s, 0.08, 2.0).unwrap();
            let disk = build_disk_mesh(m, &sector_mesh).unwrap();
            let sector_space = FemSpace::new(sector_mesh).unwrap();
            let disk_space = FemSpace::new(disk.mesh.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(u64::from(m));
            let u = random_field(&sector_space, &mut rng, 1.0);
            let ext = zero_extension(&disk, &u).unwrap();
            let (a, b) = (sector_space.h1_norm(&u), disk_space.h1_norm(&ext));
            assert!((a - b).abs() < 1e-12 * a.max(1.0), "m={m}: {a} vs {b}");
            assert_eq!(space_zero_norm(&sector_space), 0.0);
        }
    }

    fn space_zero_norm(space: &FemSpace) -> f64 {
        space.h1_norm(&space.zero_field())
    }

    #[test]
    fn field_forces_dirichlet_zeros() {
        let space = half_disk(0.2);
        let f = space.field(vec![1.0; space.mesh.nodes.len()]).unwrap();
        for (v, b) in f.values.iter().zip(&space.mesh.boundary) {
            assert_eq!(*v, if *b { 0.0 } else { 1.0 });
        }
        assert!(space.field(vec![1.0; 3]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn seminorm_is_positive_off_zero(seed in any::<u64>(), amp in 1e-3f64..10.0) {
                let space = half_disk(0.2);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let u = random_field(&space, &mut rng, amp);
                prop_assume!(u.max_abs() > 0.0);
                prop_assert!(space.h1_norm(&u) > 0.0);
            }

            #[test]
            fn energy_split_holds(seed in any::<u64>(), amp in 0.0f64..1.5) {
                let space = half_disk(0.2);
                let nl = Nonlinearity::canonical(1.0).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let u = random_field(&space, &mut rng, amp);
                let n = space.h1_norm(&u);
                let lhs = space.energy(&nl, &u).unwrap() + space.nonlinear_integral(&nl, &u).unwrap();
                prop_assert!((lhs - 0.5 * n * n).abs() <= 1e-12 * (1.0 + n * n + lhs.abs()));
            }
        }
    }
}
