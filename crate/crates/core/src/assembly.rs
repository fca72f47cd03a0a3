//! Sign-changing disk solutions from one positive sector solution.
//!
//! The `k`-th copy of `A_m` carries `(−1)^k u`, the sign being the
//! determinant of the dihedral element that maps `A_m` onto it. Values are
//! copied, never recomputed, so antisymmetry across every interface holds
//! exactly.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{Field, FemSpace};
use crate::geometry::{interface_lines, node_permutation, reflect_point, DiskMesh, Line, Point, TriMesh, MERGE_TOL};
use crate::mpa::{nodal_residuals, residual_check};
use crate::nonlinearity::Nonlinearity;
use crate::quadrature::TriangleRule;

/// Largest sector boundary value accepted as a zero trace.
pub const TRACE_TOL: f64 = 1e-10;

/// Relative sign threshold for nodal-domain counting.
pub const DOMAIN_EPS: f64 = 1e-9;

/// Odd extension across `line`: `ũ = u` on the side containing `keep`,
/// `ũ(x) = −u(Rx)` on the other side and `ũ = 0` on the line.
pub fn reflect_antisymmetric(mesh: &TriMesh, u: &Field, line: &Line, keep: Point) -> Result<Field> {
    if u.len() != mesh.nodes.len() {
        return Err(Error::InvalidInput("field does not match the mesh".into()));
    }
    let d = line.direction;
    let side = |x: Point| d[0] * x[1] - d[1] * x[0];
    let orientation = side(keep);
    if line.distance(keep) <= MERGE_TOL {
        return Err(Error::InvalidInput("reference point lies on the reflection line".into()));
    }
    let map = node_permutation(mesh, |x| reflect_point(x, line))?;
    let values = mesh
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if line.distance(x) <= MERGE_TOL {
                0.0
            } else if side(x) * orientation > 0.0 {
                u.values[i]
            } else {
                -u.values[map[i]]
            }
        })
        .collect();
    Ok(Field { values })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssembledSolution {
    #[serde(skip)]
    pub u: Field,
    pub m: u32,
    pub parity_sign: Vec<i8>,
    pub nodal_domains: usize,
    pub interface_max: f64,
    /// Independent residual on the disk with the untruncated `f`.
    pub residual: f64,
    pub sector_residual: f64,
    /// Reflections (one per interface line) under which `u_m ∘ R = −u_m` fails somewhere.
    pub antisymmetry_failures: usize,
    pub energy_disk: f64,
    pub energy_sector: f64,
    pub max_abs: f64,
}

impl AssembledSolution {
    pub fn energy_ratio(&self) -> f64 {
        self.energy_disk / (f64::from(1u32 << self.m) * self.energy_sector)
    }
}

fn disk_values(disk: &DiskMesh, sector_mesh: &TriMesh, u_sector: &Field) -> Result<Vec<f64>> {
    if u_sector.len() != sector_mesh.nodes.len() || disk.copies.first().map(Vec::len) != Some(u_sector.len()) {
        return Err(Error::InvalidInput("sector field does not match the disk's sector mesh".into()));
    }
    for (p, &v) in u_sector.values.iter().enumerate() {
        if sector_mesh.boundary[p] && v.abs() > TRACE_TOL {
            return Err(Error::InvalidInput(format!(
                "sector solution has nonzero boundary trace {v:e} at node {p}"
            )));
        }
    }
    let mut values = vec![0.0; disk.mesh.nodes.len()];
    for (k, map) in disk.copies.iter().enumerate() {
        let flip = k % 2 == 1;
        for (p, &id) in map.iter().enumerate() {
            values[id] = if sector_mesh.boundary[p] {
                0.0
            } else if flip {
                -u_sector.values[p]
            } else {
                u_sector.values[p]
            };
        }
    }
    Ok(values)
}

/// Tiles the disk with signed copies of `u_sector` and verifies the result.
pub fn assemble_disk_solution(
    disk: &DiskMesh,
    sector_mesh: &TriMesh,
    u_sector: &Field,
    nl: &Nonlinearity,
    rule: &TriangleRule,
) -> Result<AssembledSolution> {
    let odd = nl.clone().untruncated();
    let u = Field {
        values: disk_values(disk, sector_mesh, u_sector)?,
    };
    let interface_max = u
        .values
        .iter()
        .zip(&disk.interface)
        .filter(|(_, &on)| on)
        .map(|(v, _)| v.abs())
        .fold(0.0, f64::max);

    let mut antisymmetry_failures = 0;
    for line in interface_lines(disk.m) {
        let map = disk.node_map(|x| reflect_point(x, &line))?;
        if (0..u.len()).any(|i| u.values[map[i]] != -u.values[i]) {
            antisymmetry_failures += 1;
        }
    }

    let max_abs = u.max_abs();
    let nodal_domains = count_nodal_domains(&disk.mesh, &u, DOMAIN_EPS * max_abs);
    let residual = residual_check(&odd, &disk.mesh, rule, &u)?;
    let sector_residual = residual_check(nl, sector_mesh, rule, u_sector)?;
    let energy_disk = FemSpace::with_rule(disk.mesh.clone(), rule.clone())?.energy(&odd, &u)?;
    let energy_sector = FemSpace::with_rule(sector_mesh.clone(), rule.clone())?.energy(nl, u_sector)?;
    Ok(AssembledSolution {
        m: disk.m,
        parity_sign: (0..disk.copies.len()).map(|k| if k % 2 == 0 { 1 } else { -1 }).collect(),
        nodal_domains,
        interface_max,
        residual,
        sector_residual,
        antisymmetry_failures,
        energy_disk,
        energy_sector,
        max_abs,
        u,
    })
}

/// Connected components of strictly signed triangles (all three nodal values
/// beyond `eps` with one sign), joined across shared edges.
pub fn count_nodal_domains(mesh: &TriMesh, u: &Field, eps: f64) -> usize {
    let sign_of = |tri: &[usize; 3]| -> i8 {
        let s = tri.map(|i| u.values[i]);
        if s.iter().all(|&v| v > eps) {
            1
        } else if s.iter().all(|&v| v < -eps) {
            -1
        } else {
            0
        }
    };
    let signs: Vec<i8> = mesh.triangles.iter().map(sign_of).collect();
    let mut parent: Vec<usize> = (0..mesh.triangles.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut edges: Vec<((usize, usize), usize)> = Vec::with_capacity(3 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if signs[t] == 0 {
            continue;
        }
        for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
            edges.push(((a.min(b), a.max(b)), t));
        }
    }
    edges.sort_unstable();
    for pair in edges.windows(2) {
        let ((e1, t1), (e2, t2)) = (pair[0], pair[1]);
        if e1 == e2 && signs[t1] == signs[t2] {
            let (r1, r2) = (find(&mut parent, t1), find(&mut parent, t2));
            if r1 != r2 {
                parent[r1.max(r2)] = r1.min(r2);
            }
        }
    }
    (0..mesh.triangles.len())
        .filter(|&t| signs[t] != 0 && find(&mut parent, t) == t)
        .count()
}

/// Interface nodes and their one-ring, restricted to free nodes.
pub fn interface_band(disk: &DiskMesh) -> Vec<bool> {
    let mut band = disk.interface.clone();
    for tri in &disk.mesh.triangles {
        if tri.iter().any(|&i| disk.interface[i]) {
            for &i in tri {
                band[i] = true;
            }
        }
    }
    for (b, &dirichlet) in band.iter_mut().zip(&disk.mesh.boundary) {
        *b &= !dirichlet;
    }
    band
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ablation {
    pub residual: f64,
    pub band_residual: f64,
}

/// Disk residual of the assembled solution under a possibly non-odd `nl`,
/// globally and over the interface band.
pub fn oddness_ablation(
    disk: &DiskMesh,
    sector_mesh: &TriMesh,
    u_sector: &Field,
    nl: &Nonlinearity,
    rule: &TriangleRule,
) -> Result<Ablation> {
    let nl = nl.clone().untruncated();
    let u = Field {
        values: disk_values(disk, sector_mesh, u_sector)?,
    };
    let nodal = nodal_residuals(&nl, &disk.mesh, rule, &u)?;
    let band = interface_band(disk);
    let band_residual = nodal
        .iter()
        .zip(&band)
        .filter_map(|(r, &b)| if b { *r } else { None })
        .fold(0.0, f64::max);
    Ok(Ablation {
        residual: nodal.iter().flatten().copied().fold(0.0, f64::max),
        band_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_disk_mesh, mesh_sector, Sector};

    fn disk(m: u32, h: f64) -> (TriMesh, DiskMesh) {
        let s = Sector::new(m).unwrap();
        let sector = mesh_sector(&s, h, 2.0).unwrap();
        let disk = build_disk_mesh(m, &sector).unwrap();
        (sector, disk)
    }

    // smooth positive field vanishing on the sector boundary
    fn sector_field(m: u32, mesh: &TriMesh) -> Field {
        let s = Sector::new(m).unwrap();
        let values = mesh
            .nodes
            .iter()
            .zip(&mesh.boundary)
            .map(|(&x, &b)| if b { 0.0 } else { s.boundary_distance(x) * (1.0 + x[0]) })
            .collect();
        Field { values }
    }

    #[test]
    fn constant_sign_field_has_one_domain() {
        let (_, d) = disk(2, 0.1);
        let u = Field {
            values: vec![1.0; d.mesh.nodes.len()],
        };
        assert_eq!(count_nodal_domains(&d.mesh, &u, 0.0), 1);
        let zero = Field {
            values: vec![0.0; d.mesh.nodes.len()],
        };
        assert_eq!(count_nodal_domains(&d.mesh, &zero, 0.0), 0);
    }

    #[test]
    fn checkerboard_has_four_domains() {
        let (_, d) = disk(2, 0.08);
        // quadrant signs of x₁x₂ after rotating by π/4 to align with the sectors
        let values = d
            .mesh
            .nodes
            .iter()
            .map(|x| {
                let (a, b) = (x[0] + x[1], x[1] - x[0]);
                let v = a * b;
                if v.abs() < 1e-12 {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        let u = Field { values };
        assert_eq!(count_nodal_domains(&d.mesh, &u, 1e-12), 4);
    }

    #[test]
    fn assembled_field_is_exactly_antisymmetric() {
        for m in 1..=3 {
            let (sector, d) = disk(m, 0.08);
            let u = sector_field(m, &sector);
            let nl = Nonlinearity::zero();
            let a = assemble_disk_solution(&d, &sector, &u, &nl, &TriangleRule::degree5()).unwrap();
            assert_eq!(a.antisymmetry_failures, 0);
            assert_eq!(a.nodal_domains, 1 << m);
            assert_eq!(a.interface_max, 0.0);
            assert!(a.parity_sign.windows(2).all(|w| w[0] == -w[1]));
            // F ≡ 0: energy is exactly additive up to round-off
            assert!((a.energy_ratio() - 1.0).abs() < 1e-12);
            for (&v, &b) in a.u.values.iter().zip(&d.mesh.boundary) {
                if b {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn upper_half_is_positive_for_the_half_disk() {
        let (sector, d) = disk(1, 0.08);
        let u = sector_field(1, &sector);
        let a = assemble_disk_solution(&d, &sector, &u, &Nonlinearity::zero(), &TriangleRule::degree5()).unwrap();
        for (x, &v) in d.mesh.nodes.iter().zip(&a.u.values) {
            if x[1] > 1e-9 {
                assert!(v >= 0.0);
            } else if x[1] < -1e-9 {
                assert!(v <= 0.0);
            }
        }
    }

    #[test]
    fn single_reflection_matches_tiling_and_doubles_energy() {
        let (sector, d) = disk(1, 0.08);
        let u = sector_field(1, &sector);
        let nl = Nonlinearity::canonical(1.0).unwrap();
        let a = assemble_disk_solution(&d, &sector, &u, &nl, &TriangleRule::degree5()).unwrap();
        // zero out the lower half, then reflect across the x₁-axis
        let upper = Field {
            values: d
                .mesh
                .nodes
                .iter()
                .zip(&a.u.values)
                .map(|(x, &v)| if x[1] > 0.0 { v } else { 0.0 })
                .collect(),
        };
        let line = interface_lines(1)[0];
        let r = reflect_antisymmetric(&d.mesh, &upper, &line, [0.0, 0.5]).unwrap();
        assert_eq!(r.values, a.u.values);
        let space = FemSpace::new(d.mesh.clone()).unwrap();
        let half = space.energy(&nl, &upper).unwrap();
        let full = space.energy(&nl, &r).unwrap();
        assert!((full / (2.0 * half) - 1.0).abs() < 1e-10);
        let zero = Field {
            values: vec![0.0; d.mesh.nodes.len()],
        };
        assert_eq!(reflect_antisymmetric(&d.mesh, &zero, &line, [0.0, 0.5]).unwrap().values, zero.values);
        assert!(reflect_antisymmetric(&d.mesh, &zero, &line, [0.3, 0.0]).is_err());
    }

    #[test]
    fn nonzero_trace_is_rejected() {
        let (sector, d) = disk(2, 0.1);
        let mut u = sector_field(2, &sector);
        let i = sector.boundary.iter().position(|&b| b).unwrap();
        u.values[i] = 1e-6;
        let err = assemble_disk_solution(&d, &sector, &u, &Nonlinearity::zero(), &TriangleRule::degree5());
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_perturbation_ablation_matches_assembly() {
        let (sector, d) = disk(2, 0.08);
        let u = sector_field(2, &sector);
        let nl = Nonlinearity::canonical(1.0).unwrap();
        let rule = TriangleRule::degree5();
        let a = assemble_disk_solution(&d, &sector, &u, &nl, &rule).unwrap();
        let abl = oddness_ablation(&d, &sector, &u, &nl.clone().with_even_perturbation(0.0), &rule).unwrap();
        assert_eq!(abl.residual, a.residual);
        assert!(abl.band_residual <= abl.residual);
    }

    #[test]
    fn band_contains_interfaces_and_neighbours() {
        let (_, d) = disk(2, 0.1);
        let band = interface_band(&d);
        for i in 0..band.len() {
            if d.interface[i] && !d.mesh.boundary[i] {
                assert!(band[i]);
            }
        }
        assert!(band.iter().filter(|&&b| b).count() > d.interface.iter().filter(|&&b| b).count());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            // arbitrary interior values: copying with signs is exact whatever the field
            #[test]
            fn tiling_is_bitwise_odd_and_vanishes_on_the_boundary(
                m in 1u32..=3,
                seed in proptest::collection::vec(-10.0f64..10.0, 64),
            ) {
                let (sector, d) = disk(m, 0.2);
                let values = (0..sector.nodes.len())
                    .map(|p| if sector.boundary[p] { 0.0 } else { seed[p % seed.len()] })
                    .collect();
                let u = Field { values: disk_values(&d, &sector, &Field { values }).unwrap() };
                for line in interface_lines(m) {
                    let map = d.node_map(|x| reflect_point(x, &line)).unwrap();
                    for i in 0..u.len() {
                        prop_assert_eq!(u.values[map[i]], -u.values[i]);
                    }
                }
                for (i, &b) in d.mesh.boundary.iter().enumerate() {
                    if b || d.interface[i] {
                        prop_assert_eq!(u.values[i], 0.0);
                    }
                }
            }
        }
    }
}
