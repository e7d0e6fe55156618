//! Point sets: the 60-microphone spherical design, the 26-node Lebedev
//! direction grid, uniform ball sampling, and box/plane lattices.
//!
//! The static tables are embedded so the geometry is bit-reproducible with no
//! runtime dependency.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::special::UnitDirection;

/// 60 nodes on the unit sphere whose equal-weight quadrature integrates all
/// spherical polynomials of degree <= 10 exactly (a spherical 10-design), so
/// spherical harmonics are orthonormal through degree 5 under the weights
/// 4*pi/60. Obtained by solving the degree-1..10 moment equations to machine
/// precision (max residual below 1e-14) and frozen here to 17 significant
/// digits.
#[allow(clippy::excessive_precision)]
pub const TDESIGN_60: [[f64; 3]; 60] = [
    [-5.08832047590179054e-02, -7.29640497713188868e-02, 9.96035715682133782e-01],
    [1.63704568357103786e-01, 3.17473721105737905e-01, 9.34029576997586597e-01],
    [2.90756548966560890e-01, -3.40893599006118930e-01, 8.94009051066996352e-01],
    [-4.51887251528049483e-01, 3.67078590512809680e-02, 8.91319496583742765e-01],
    [5.31817191310888449e-01, 6.87921357112112331e-02, 8.44060493738741591e-01],
    [-2.12804525673645856e-01, 5.06382161736459779e-01, 8.35638283067455245e-01],
    [-4.45752269664457190e-01, -4.02320236129901310e-01, 7.99652012871452378e-01],
    [-4.12490066251003928e-02, -6.05235844919728705e-01, 7.94976786753389786e-01],
    [-6.06300529948349265e-01, 4.35386036056220171e-01, 6.65461243793808443e-01],
    [2.54246745832505505e-01, 7.11791993134692769e-01, 6.54760071127525989e-01],
    [6.18190836534539989e-01, 4.73682343535759276e-01, 6.27267986627084828e-01],
    [7.44365028285619346e-01, -2.40733192658704492e-01, 6.22870961450039173e-01],
    [4.91941502382772233e-01, -6.48674569256042721e-01, 5.80702041871619667e-01],
    [-8.19660223698200130e-01, 3.74556567219225993e-03, 5.72837750523489619e-01],
    [-1.94924446674947793e-01, 8.38410125804844308e-01, 5.08992063824545982e-01],
    [-3.77164730128732029e-01, -7.80886386725050619e-01, 4.97959051905290384e-01],
    [-7.76899787049618484e-01, -4.16768118315768543e-01, 4.71943912385562048e-01],
    [1.48731631671810749e-01, -8.81844324959491499e-01, 4.47470097634445063e-01],
    [8.91388995150248942e-01, 1.80228310151224619e-01, 4.15864660130027763e-01],
    [-5.82478430818030635e-01, 7.55940665824236024e-01, 2.98785186019948634e-01],
    [-8.85587892616168326e-01, 3.80624616818641015e-01, 2.66193511422267159e-01],
    [7.90695731300107285e-01, -5.57376681209818092e-01, 2.53241970745999356e-01],
    [1.57781073768595320e-01, 9.55157574259976716e-01, 2.50557660218613754e-01],
    [6.00168509971329756e-01, 7.61155106485239097e-01, 2.45846829367877467e-01],
    [-7.07605912330295017e-01, -6.91547055562895419e-01, 1.45108727433951035e-01],
    [9.78829438106832761e-01, -1.45037757696999947e-01, 1.44419458307004145e-01],
    [-2.08759576763486387e-01, -9.67598552664679312e-01, 1.42029855983690750e-01],
    [-9.89074897763926764e-01, -7.50655308565757184e-02, 1.26870062231002473e-01],
    [4.04462849462998320e-01, -9.10760336385922020e-01, 8.32190667483964641e-02],
    [8.82550941728593608e-01, 4.65273069878193002e-01, 6.80059240073602467e-02],
    [-3.47586622503438358e-01, 9.37589628751146154e-01, -1.04512159550988731e-02],
    [-8.23148579503961475e-01, 5.53287170930553018e-01, -1.27670366742934416e-01],
    [-9.05183784825670856e-01, -4.02304287551071726e-01, -1.37089663748578700e-01],
    [6.91856058185740697e-01, -7.04345746475078971e-01, -1.58846668753716808e-01],
    [6.47750151559275539e-02, 9.82558323687517055e-01, -1.74308169527208040e-01],
    [5.24114526796145119e-01, 8.33010099758508260e-01, -1.77195193223668196e-01],
    [7.23673278210777565e-02, -9.74269678212607682e-01, -2.13451549489664494e-01],
    [-4.83624015601850421e-01, -8.48072287362891974e-01, -2.16520684786035228e-01],
    [9.45550092922278429e-01, 1.96159639544052439e-01, -2.59723733202451235e-01],
    [9.21383022016876052e-01, -2.86757325068049906e-01, -2.62342454167955652e-01],
    [-9.53898431239731504e-01, 1.29402381180780623e-01, -2.70800307649609773e-01],
    [-5.34213340050296637e-01, 7.56410612093105339e-01, -3.77437535527721357e-01],
    [7.16822262030167079e-01, 5.30187650432714319e-01, -4.52843129556574631e-01],
    [-6.85129533164223870e-01, -5.24777725491791025e-01, -5.05179039167140354e-01],
    [3.15700327681041282e-01, -7.92657435734848481e-01, -5.21562549150471177e-01],
    [-2.24067948948848988e-01, -7.95755023484464696e-01, -5.62643312279720531e-01],
    [-1.29406203636502848e-01, 8.08081139585988706e-01, -5.74681569485047783e-01],
    [6.29958984691585844e-01, -5.01208260888211909e-01, -5.93246961074189061e-01],
    [3.01325557225924689e-01, 7.45112013998234901e-01, -5.94988231108801169e-01],
    [-7.82659615117826779e-01, -1.13689538994468334e-01, -6.11979260748957588e-01],
    [-6.98704652266468496e-01, 3.60470595735292831e-01, -6.17958541094333125e-01],
    [7.60206639554253272e-01, -3.17906325907937118e-02, -6.48903090497423229e-01],
    [5.18323126439349746e-01, 2.94793979080599566e-01, -8.02768737866619397e-01],
    [-3.28218231843584118e-01, 4.65115221194614403e-01, -8.22156082078431272e-01],
    [-3.49928481204587694e-01, -4.20567720848239512e-01, -8.37062034870993177e-01],
    [8.70571542488544764e-02, -5.38303240078621625e-01, -8.38242610235813035e-01],
    [3.86034429001985202e-01, -2.09396887087919620e-01, -8.98404342878528439e-01],
    [1.14358361052162877e-01, 4.11704090425435987e-01, -9.04113879544179766e-01],
    [-4.19302172601400291e-01, 3.80221928464993244e-03, -9.07838769374968324e-01],
    [1.66398208965388185e-02, -1.68340249210274760e-02, -9.99719826734215222e-01],
];

/// Rigid-sphere microphone array: radius and flush-mounted microphone
/// positions, all at distance `radius_m` from the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct MicArray {
    radius_m: f64,
    positions: Vec<Vector3<f64>>,
}

impl MicArray {
    /// Validates that every position sits on the sphere within 1e-9 relative.
    pub fn new(radius_m: f64, positions: Vec<Vector3<f64>>) -> Result<Self> {
        if radius_m <= 0.0 {
            return Err(Error::validation("array radius must be positive"));
        }
        if positions.is_empty() {
            return Err(Error::validation("array needs at least one microphone"));
        }
        for (i, p) in positions.iter().enumerate() {
            if ((p.norm() - radius_m) / radius_m).abs() > 1e-9 {
                return Err(Error::validation(format!(
                    "microphone {i} at distance {} is off the sphere of radius {radius_m}",
                    p.norm()
                )));
            }
        }
        Ok(MicArray {
            radius_m,
            positions,
        })
    }

    /// Same layout scaled to a different sphere radius.
    pub fn scaled(&self, radius_m: f64) -> Result<MicArray> {
        let f = radius_m / self.radius_m;
        MicArray::new(radius_m, self.positions.iter().map(|p| p * f).collect())
    }

    pub fn radius_m(&self) -> f64 {
        self.radius_m
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Loads a layout of unit vectors from CSV (columns x,y,z; header row
    /// required) and scales it by `radius_m`.
    pub fn from_layout_csv(path: &Path, radius_m: f64) -> Result<MicArray> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut positions = Vec::new();
        let mut saw_header = false;
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if !saw_header {
                let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
                if cols.len() != 3
                    || !cols[0].eq_ignore_ascii_case("x")
                    || !cols[1].eq_ignore_ascii_case("y")
                    || !cols[2].eq_ignore_ascii_case("z")
                {
                    return Err(Error::parse(
                        lineno,
                        "layout CSV must start with the header row 'x,y,z'",
                    ));
                }
                saw_header = true;
                continue;
            }
            let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(Error::parse(
                    lineno,
                    format!("expected 3 columns, got {}", cols.len()),
                ));
            }
            let mut v = [0.0; 3];
            for (k, c) in cols.iter().enumerate() {
                v[k] = c
                    .parse::<f64>()
                    .map_err(|e| Error::parse(lineno, format!("bad number {c:?}: {e}")))?;
            }
            let p = Vector3::new(v[0], v[1], v[2]);
            if (p.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::parse(
                    lineno,
                    format!("layout rows must be unit vectors, norm was {}", p.norm()),
                ));
            }
            positions.push(p.normalize() * radius_m);
        }
        if !saw_header {
            return Err(Error::parse(1, "empty layout CSV (missing header)"));
        }
        MicArray::new(radius_m, positions)
    }
}

/// The 60-node spherical design on the unit sphere.
pub fn tdesign_60() -> MicArray {
    MicArray {
        radius_m: 1.0,
        positions: TDESIGN_60
            .iter()
            .map(|p| Vector3::new(p[0], p[1], p[2]))
            .collect(),
    }
}

/// A set of distinct unit directions used as kernel bias directions.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionGrid {
    directions: Vec<UnitDirection>,
}

impl DirectionGrid {
    pub fn new(directions: Vec<UnitDirection>) -> Result<Self> {
        for i in 0..directions.len() {
            for j in (i + 1)..directions.len() {
                if directions[i].dot(&directions[j]) > 1.0 - 1e-12 {
                    return Err(Error::validation(format!(
                        "directions {i} and {j} are duplicates"
                    )));
                }
            }
        }
        Ok(DirectionGrid { directions })
    }

    pub fn directions(&self) -> &[UnitDirection] {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// The 26-node Lebedev rule of algebraic precision 7: octahedron vertices,
/// edge-midpoint directions, and cube vertices, with weights 1/21, 4/105,
/// and 9/280 (normalized to sum to one).
pub fn lebedev_order7_rule() -> (Vec<UnitDirection>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(26);
    let mut weights = Vec::with_capacity(26);
    let mut push = |v: [f64; 3], w: f64| {
        nodes.push(UnitDirection::new(v).expect("static node"));
        weights.push(w);
    };

    // 6 axis directions
    for k in 0..3 {
        for s in [1.0, -1.0] {
            let mut v = [0.0; 3];
            v[k] = s;
            push(v, 1.0 / 21.0);
        }
    }
    // 12 edge-midpoint directions (+-1/sqrt2, +-1/sqrt2, 0) and permutations
    let a = 1.0 / 2.0_f64.sqrt();
    for (i, j) in [(0usize, 1usize), (0, 2), (1, 2)] {
        for si in [1.0, -1.0] {
            for sj in [1.0, -1.0] {
                let mut v = [0.0; 3];
                v[i] = si * a;
                v[j] = sj * a;
                push(v, 4.0 / 105.0);
            }
        }
    }
    // 8 cube vertices (+-1/sqrt3, +-1/sqrt3, +-1/sqrt3)
    let b = 1.0 / 3.0_f64.sqrt();
    for sx in [1.0, -1.0] {
        for sy in [1.0, -1.0] {
            for sz in [1.0, -1.0] {
                push([sx * b, sy * b, sz * b], 9.0 / 280.0);
            }
        }
    }
    (nodes, weights)
}

/// The Lebedev nodes as a direction grid (weights dropped; only the nodes
/// serve as bias directions).
pub fn lebedev_order7() -> DirectionGrid {
    let (nodes, _) = lebedev_order7_rule();
    DirectionGrid { directions: nodes }
}

/// Uniform samples in a ball: Marsaglia's rejection method for the direction
/// and a cube-root radial CDF for the radius, driven by a seeded ChaCha8
/// stream so results are reproducible across platforms.
pub fn sample_ball(radius_m: f64, n_points: usize, rng_seed: u64) -> Vec<Vector3<f64>> {
    assert!(radius_m > 0.0 && n_points >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(n_points);
    while out.len() < n_points {
        let (v1, v2, s) = loop {
            let v1 = 2.0 * rng.gen::<f64>() - 1.0;
            let v2 = 2.0 * rng.gen::<f64>() - 1.0;
            let s = v1 * v1 + v2 * v2;
            if s < 1.0 && s > 0.0 {
                break (v1, v2, s);
            }
        };
        let root = (1.0 - s).sqrt();
        let dir = Vector3::new(2.0 * v1 * root, 2.0 * v2 * root, 1.0 - 2.0 * s);
        let r = radius_m * rng.gen::<f64>().cbrt();
        out.push(dir * r);
    }
    out
}

/// Tolerance used to decide whether an extent is an exact multiple of the
/// spacing (then both endpoints are included).
const GRID_SNAP: f64 = 1e-9;

fn axis_offsets(extent: f64, spacing: f64) -> Vec<f64> {
    let n = (extent / spacing + GRID_SNAP).floor() as usize + 1;
    let half = (n - 1) as f64 / 2.0;
    (0..n).map(|j| (j as f64 - half) * spacing).collect()
}

/// Lattice in a box, symmetric about `center`, inclusive of both extremes
/// when the extent is an exact multiple of the spacing.
pub fn grid_box(extents_m: [f64; 3], spacing_m: f64, center: Vector3<f64>) -> Vec<Vector3<f64>> {
    assert!(spacing_m > 0.0);
    let xs = axis_offsets(extents_m[0], spacing_m);
    let ys = axis_offsets(extents_m[1], spacing_m);
    let zs = axis_offsets(extents_m[2], spacing_m);
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &x in &xs {
        for &y in &ys {
            for &z in &zs {
                out.push(center + Vector3::new(x, y, z));
            }
        }
    }
    out
}

/// Coordinate plane selector for planar grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneAxes {
    Xy,
    Xz,
    Yz,
}

/// A regular grid on a coordinate plane; `offset_m` fixes the remaining
/// coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSpec {
    pub axes: PlaneAxes,
    pub extent_m: [f64; 2],
    pub spacing_m: f64,
    pub offset_m: f64,
}

/// Lattice on a coordinate plane, centered on the plane's origin.
pub fn grid_plane(spec: &PlaneSpec) -> Vec<Vector3<f64>> {
    assert!(spec.spacing_m > 0.0);
    let us = axis_offsets(spec.extent_m[0], spec.spacing_m);
    let vs = axis_offsets(spec.extent_m[1], spec.spacing_m);
    let mut out = Vec::with_capacity(us.len() * vs.len());
    for &u in &us {
        for &v in &vs {
            out.push(match spec.axes {
                PlaneAxes::Xy => Vector3::new(u, v, spec.offset_m),
                PlaneAxes::Xz => Vector3::new(u, spec.offset_m, v),
                PlaneAxes::Yz => Vector3::new(spec.offset_m, u, v),
            });
        }
    }
    out
}

/// Where the reconstructed field is scored.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalRegion {
    Ball {
        radius_m: f64,
        n_points: usize,
        rng_seed: u64,
    },
    BoxGrid {
        extents_m: [f64; 3],
        spacing_m: f64,
        center: [f64; 3],
    },
    PlaneGrid(PlaneSpec),
}

impl EvalRegion {
    pub fn points(&self) -> Vec<Vector3<f64>> {
        match self {
            EvalRegion::Ball {
                radius_m,
                n_points,
                rng_seed,
            } => sample_ball(*radius_m, *n_points, *rng_seed),
            EvalRegion::BoxGrid {
                extents_m,
                spacing_m,
                center,
            } => grid_box(
                *extents_m,
                *spacing_m,
                Vector3::new(center[0], center[1], center[2]),
            ),
            EvalRegion::PlaneGrid(spec) => grid_plane(spec),
        }
    }
}

/// Drops points inside or on the scatterer (`norm <= radius`); returns the
/// surviving points and how many were filtered.
pub fn filter_exterior(
    points: Vec<Vector3<f64>>,
    scatterer_radius_m: f64,
) -> (Vec<Vector3<f64>>, usize) {
    let before = points.len();
    let kept: Vec<_> = points
        .into_iter()
        .filter(|p| p.norm() > scatterer_radius_m)
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}
