//! Nested space-filling designs: scrambled Faure nets, prefix nesting and the
//! separation / fill distances of a point set.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{default_cell, PointGrid};

/// Distinct points in `[0,1]^d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    points: Vec<f64>,
    d: usize,
}

impl Design {
    /// Validates dimension, unit-cube membership and pairwise distinctness.
    pub fn new(points: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::arg("design dimension must be positive"));
        }
        if points.len() % d != 0 {
            return Err(Error::arg(format!("{} coordinates do not form rows of dimension {d}", points.len())));
        }
        if let Some(pos) = points.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg(format!(
                "point {} has coordinate {} outside [0, 1]",
                pos / d,
                points[pos]
            )));
        }
        let design = Self { points, d };
        if design.len() >= 2 {
            let grid = PointGrid::new(&design.points, d, default_cell(design.len(), d));
            for i in 0..design.len() {
                if grid.nearest_distance(design.point(i), Some(i)) == 0.0 {
                    return Err(Error::arg(format!("point {i} duplicates another design point")));
                }
            }
        }
        Ok(design)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::arg("design rows have differing lengths"));
        }
        Self::new(rows.concat(), d)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    /// Row-major coordinates.
    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    /// The first `n` points.
    pub fn prefix(&self, n: usize) -> &[f64] {
        &self.points[..n * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    /// Reads the `x1,...,xd` CSV format.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let (rows, _) = read_numeric_csv(path.as_ref(), None)?;
        Self::from_rows(&rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let header: Vec<String> = (1..=self.d).map(|k| format!("x{k}")).collect();
        let rows: Vec<Vec<f64>> = self.rows().map(|r| r.to_vec()).collect();
        write_numeric_csv(path.as_ref(), &header, &rows)
    }
}

/// `X_1 ⊂ ... ⊂ X_J`, each `X_j` the first `n_j` points of one design.
#[derive(Clone, Debug, PartialEq)]
pub struct NestedDesign {
    design: Design,
    stage_sizes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct StageSidecar {
    stage_sizes: Vec<usize>,
}

impl NestedDesign {
    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn stage_sizes(&self) -> &[usize] {
        &self.stage_sizes
    }

    pub fn stages(&self) -> usize {
        self.stage_sizes.len()
    }

    /// Coordinates of `X_j` (0-based stage index).
    pub fn stage_points(&self, j: usize) -> &[f64] {
        self.design.prefix(self.stage_sizes[j])
    }

    pub fn dim(&self) -> usize {
        self.design.dim()
    }

    /// Writes the design CSV and its `<path>.stages.json` sidecar.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.design.write_csv(path)?;
        let sidecar = serde_json::to_string(&StageSidecar {
            stage_sizes: self.stage_sizes.clone(),
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(sidecar_path(path), sidecar)?;
        Ok(())
    }

    /// Reads a design CSV and, when present, its stage sidecar (single stage otherwise).
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let design = Design::read_csv(path)?;
        let side = sidecar_path(path);
        let sizes = if side.exists() {
            let text = std::fs::read_to_string(&side)?;
            let s: StageSidecar = serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
            s.stage_sizes
        } else {
            vec![design.len()]
        };
        nest(design, &sizes)
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".stages.json");
    s.into()
}

/// Slices `design` into nested prefixes of the given strictly increasing sizes.
pub fn nest(design: Design, stage_sizes: &[usize]) -> Result<NestedDesign> {
    if stage_sizes.is_empty() {
        return Err(Error::arg("at least one stage size is required"));
    }
    if stage_sizes[0] == 0 {
        return Err(Error::arg("stage sizes must be positive"));
    }
    if let Some(w) = stage_sizes.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::arg(format!(
            "stage sizes must be strictly increasing, found {} then {}",
            w[0], w[1]
        )));
    }
    let last = *stage_sizes.last().unwrap();
    if last != design.len() {
        return Err(Error::arg(format!(
            "last stage size {last} must equal the design size {}",
            design.len()
        )));
    }
    Ok(NestedDesign {
        design,
        stage_sizes: stage_sizes.to_vec(),
    })
}

/// Randomization applied to a digital net.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scramble {
    /// Raw net points (lower-left corners of their cells).
    None,
    /// Nested uniform digit scrambling to depth `m` plus uniform jitter in the final cell.
    Owen { seed: u64 },
}

fn is_prime(b: u32) -> bool {
    b >= 2 && (2..).take_while(|k| k * k <= b).all(|k| b % k != 0)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator matrices of the Faure `(0, s)`-sequence: upper-triangular Pascal
/// powers `C_j[r][c] = binom(c, r) j^{c-r} mod b`, `j = 0..s`.
fn faure_generators(b: u32, m: usize, s: usize) -> Vec<Vec<Vec<u32>>> {
    let b64 = b as u64;
    let mut binom = vec![vec![0_u64; m]; m];
    for c in 0..m {
        binom[0][c] = 1;
        for r in 1..=c {
            binom[r][c] = (binom[r - 1][c - 1] + if r <= c - 1 { binom[r][c - 1] } else { 0 }) % b64;
        }
    }
    (0..s)
        .map(|j| {
            let mut mat = vec![vec![0_u32; m]; m];
            for r in 0..m {
                for c in r..m {
                    let mut pow = 1_u64;
                    for _ in 0..(c - r) {
                        pow = pow * j as u64 % b64;
                    }
                    mat[r][c] = (binom[r][c] * pow % b64) as u32;
                }
            }
            mat
        })
        .collect()
}

/// First `b^m` points of a (scrambled) Faure sequence in base `b`: a
/// `(0, m, s)`-net whose every prefix of size `b^{m'}` is a `(0, m', s)`-net.
pub fn generate_net(b: u32, m: u32, s: usize, scramble: Scramble) -> Result<Design> {
    if !is_prime(b) {
        return Err(Error::arg(format!("net base {b} is not prime")));
    }
    if s == 0 || s > b as usize {
        return Err(Error::arg(format!("net dimension {s} must lie in 1..={b}")));
    }
    let m = m as usize;
    let n = (b as usize)
        .checked_pow(m as u32)
        .filter(|&n| n <= 1 << 28)
        .ok_or_else(|| Error::arg("net size b^m too large"))?;
    let gens = faure_generators(b, m, s);
    let inv_b = 1.0 / b as f64;
    let cell = (b as f64).powi(-(m as i32));
    let mut jitter_rng = match scramble {
        Scramble::Owen { seed } => Some(ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xA5A5_5A5A))),
        Scramble::None => None,
    };
    let mut perm: Vec<u32> = (0..b).collect();
    let mut points = Vec::with_capacity(n * s);
    let mut digits = vec![0_u32; m];
    let mut out = vec![0_u32; m];
    for i in 0..n {
        let mut idx = i;
        for a in digits.iter_mut() {
            *a = (idx % b as usize) as u32;
            idx /= b as usize;
        }
        for (j, gen) in gens.iter().enumerate() {
            for r in 0..m {
                let mut acc = 0_u64;
                for c in r..m {
                    acc += gen[r][c] as u64 * digits[c] as u64;
                }
                out[r] = (acc % b as u64) as u32;
            }
            if let Scramble::Owen { seed } = scramble {
                // Permutation at level r depends on the original leading digits.
                let mut prefix = 0_u64;
                for r in 0..m {
                    let h = splitmix64(
                        seed ^ splitmix64((j as u64) << 40 ^ (r as u64) << 32 ^ 0x1234_5678)
                            ^ splitmix64(prefix.wrapping_mul(0x100_0000_01B3)),
                    );
                    let mut prng = ChaCha8Rng::seed_from_u64(h);
                    perm.iter_mut().enumerate().for_each(|(k, p)| *p = k as u32);
                    perm.shuffle(&mut prng);
                    prefix = prefix * b as u64 + out[r] as u64 + 1;
                    out[r] = perm[out[r] as usize];
                }
            }
            let mut x = 0.0;
            let mut scale = inv_b;
            for &y in out.iter() {
                x += y as f64 * scale;
                scale *= inv_b;
            }
            if let Some(rng) = jitter_rng.as_mut() {
                let u: f64 = rng.gen::<f64>() * (1.0 - 1e-12);
                x += u * cell;
            }
            points.push(x.min(1.0));
        }
    }
    Design::new(points, s)
}

/// All compositions of `total` into `parts` nonnegative integers.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// True iff every base-`b` elementary interval of volume `b^{-m}` holds exactly one point.
pub fn verify_net(points: &[f64], s: usize, b: u32, m: u32) -> Result<bool> {
    if s == 0 || points.len() % s != 0 {
        return Err(Error::arg("point buffer does not match dimension"));
    }
    let n = points.len() / s;
    let expected = (b as usize).pow(m);
    if n != expected {
        return Err(Error::arg(format!("net check needs b^m = {expected} points, got {n}")));
    }
    let bf = b as f64;
    for shape in compositions(m as usize, s) {
        let mut seen = vec![false; expected];
        for i in 0..n {
            let mut cell = 0_usize;
            for (k, &dk) in shape.iter().enumerate() {
                let per_axis = (b as usize).pow(dk as u32);
                let v = points[i * s + k];
                let c = ((v * bf.powi(dk as i32)).floor() as usize).min(per_axis - 1);
                cell = cell * per_axis + c;
            }
            if std::mem::replace(&mut seen[cell], true) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// `q_X`: half the smallest pairwise distance.
pub fn separation_distance(points: &[f64], d: usize) -> Result<f64> {
    let n = points.len() / d;
    if n < 2 {
        return Err(Error::arg("separation distance needs at least two points"));
    }
    let grid = PointGrid::new(points, d, default_cell(n, d));
    let min = (0..n)
        .map(|i| grid.nearest_distance(&points[i * d..(i + 1) * d], Some(i)))
        .fold(f64::INFINITY, f64::min);
    Ok(0.5 * min)
}

/// Default candidate resolution per axis for [`fill_distance`].
pub fn default_fill_resolution(d: usize) -> usize {
    match d {
        1 | 2 => 1 << 10,
        _ => 47,
    }
}

/// Number of low-discrepancy candidates used when `d > 3`.
pub const FILL_CANDIDATES_HIGH_DIM: usize = 100_000;

/// Estimate of the fill distance `h_X` over `[0,1]^d`.
///
/// Searches an `r^d` grid (mesh `1/(r-1)`, boundary included) when `d <= 3`,
/// or unscrambled Faure points plus the cube corners otherwise. The result
/// never exceeds `h_X` and undershoots it by at most half the candidate mesh.
pub fn fill_distance(points: &[f64], d: usize, resolution: usize) -> Result<f64> {
    let n = points.len() / d.max(1);
    if n == 0 {
        return Err(Error::arg("fill distance of an empty design"));
    }
    if resolution < 2 {
        return Err(Error::arg("fill distance resolution must be at least 2"));
    }
    let grid = PointGrid::new(points, d, default_cell(n, d));
    let mut worst = 0.0_f64;
    let mut probe = vec![0.0; d];
    if d <= 3 {
        let total = resolution.pow(d as u32);
        let step = 1.0 / (resolution - 1) as f64;
        for idx in 0..total {
            let mut rem = idx;
            for p in probe.iter_mut() {
                *p = (rem % resolution) as f64 * step;
                rem /= resolution;
            }
            worst = worst.max(grid.nearest_distance(&probe, None));
        }
    } else {
        let base = (d as u32..).find(|&b| is_prime(b)).unwrap();
        let m = ((FILL_CANDIDATES_HIGH_DIM as f64).ln() / (base as f64).ln()).ceil() as u32;
        let cands = generate_net(base, m, d, Scramble::None)?;
        for x in cands.rows().take(FILL_CANDIDATES_HIGH_DIM) {
            worst = worst.max(grid.nearest_distance(x, None));
        }
        for corner in 0..(1_usize << d) {
            for (k, p) in probe.iter_mut().enumerate() {
                *p = ((corner >> k) & 1) as f64;
            }
            worst = worst.max(grid.nearest_distance(&probe, None));
        }
    }
    Ok(worst)
}

/// Reads a header-led numeric CSV. Returns rows and the header.
pub fn read_numeric_csv(path: &Path, expect_cols: Option<usize>) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{}: {e}", path.display()),
            )),
            _ => Error::Format(format!("{}: {e}", path.display())),
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let cols = expect_cols.unwrap_or(header.len());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Format(format!("{} line {line}: {e}", path.display())))?;
        if rec.len() != cols {
            return Err(Error::Format(format!(
                "{} line {line}: expected {cols} fields, found {}",
                path.display(),
                rec.len()
            )));
        }
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Format(format!("{} line {line}: '{f}' is not a number", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((rows, header))
}

/// Writes a header-led numeric CSV with shortest round-trip formatting.
pub fn write_numeric_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_separation(points: &[f64], d: usize) -> f64 {
        let n = points.len() / d;
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in 0..i {
                let s: f64 = (0..d).map(|k| (points[i * d + k] - points[j * d + k]).powi(2)).sum();
                best = best.min(s.sqrt());
            }
        }
        0.5 * best
    }

    #[test]
    fn base_two_net_stratifies_halves() {
        let net = generate_net(2, 1, 1, Scramble::None).unwrap();
        assert_eq!(net.as_slice(), &[0.0, 0.5]);
        let scrambled = generate_net(2, 1, 1, Scramble::Owen { seed: 3 }).unwrap();
        let mut halves: Vec<usize> = scrambled.as_slice().iter().map(|x| (x * 2.0) as usize).collect();
        halves.sort();
        assert_eq!(halves, vec![0, 1]);
    }

    #[test]
    fn five_by_five_grid_cells() {
        let net = generate_net(5, 2, 2, Scramble::Owen { seed: 11 }).unwrap();
        assert_eq!(net.len(), 25);
        let mut cells = vec![0; 25];
        for p in net.rows() {
            cells[(p[0] * 5.0) as usize * 5 + (p[1] * 5.0) as usize] += 1;
        }
        assert!(cells.iter().all(|&c| c == 1));
        assert!(verify_net(net.as_slice(), 2, 5, 2).unwrap());
    }

    #[test]
    fn franke_sized_net() {
        let net = generate_net(5, 4, 2, Scramble::Owen { seed: 1 }).unwrap();
        assert_eq!(net.len(), 625);
        assert!(verify_net(net.as_slice(), 2, 5, 4).unwrap());
    }

    #[test]
    fn iid_points_fail_net_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
        assert!(!verify_net(&pts, 2, 5, 2).unwrap());
    }

    #[test]
    fn trivial_net() {
        assert!(verify_net(&[0.3, 0.7], 2, 5, 0).unwrap());
        assert!(verify_net(&[0.3, 0.7, 0.1, 0.2], 2, 5, 0).is_err());
    }

    #[test]
    fn net_argument_errors() {
        assert!(generate_net(4, 2, 2, Scramble::None).is_err());
        assert!(generate_net(3, 2, 4, Scramble::None).is_err());
    }

    #[test]
    fn separation_examples() {
        assert_eq!(separation_distance(&[0.0, 1.0], 1).unwrap(), 0.5);
        let q = separation_distance(&[0.0, 0.0, 0.0, 0.2, 1.0, 1.0], 2).unwrap();
        assert!((q - 0.1).abs() < 1e-15);
        assert!(separation_distance(&[0.5], 1).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<f64> = (0..100).map(|_| rng.gen()).collect();
        assert_eq!(separation_distance(&pts, 2).unwrap(), brute_separation(&pts, 2));
    }

    #[test]
    fn fill_examples() {
        assert_eq!(fill_distance(&[0.5], 1, 1025).unwrap(), 0.5);
        assert_eq!(fill_distance(&[0.0, 1.0], 1, 1025).unwrap(), 0.5);
        let mut grid = vec![];
        for i in 0..4 {
            for j in 0..4 {
                grid.push(i as f64 / 3.0);
                grid.push(j as f64 / 3.0);
            }
        }
        let exact = 2.0_f64.sqrt() / 6.0;
        let coarse = fill_distance(&grid, 2, 7).unwrap();
        assert!((coarse - exact).abs() < 1e-12);
        let fine = fill_distance(&grid, 2, 1024).unwrap();
        assert!(fine <= exact + 1e-12 && exact - fine <= 0.5 / 1023.0 * 2.0_f64.sqrt());
        assert!(fill_distance(&[], 2, 10).is_err());
    }

    #[test]
    fn nest_rules() {
        let net = generate_net(5, 4, 2, Scramble::Owen { seed: 2 }).unwrap();
        let nd = nest(net.clone(), &[250, 375, 500, 625]).unwrap();
        assert_eq!(nd.stages(), 4);
        assert_eq!(nd.stage_points(1).len(), 375 * 2);
        assert_eq!(nest(net.clone(), &[625]).unwrap().stages(), 1);
        assert!(nest(net.clone(), &[10, 5]).is_err());
        assert!(nest(net, &[100, 600]).is_err());
    }

    #[test]
    fn design_validation() {
        assert!(Design::new(vec![0.1, 0.2, 0.1, 0.2], 2).is_err());
        assert!(Design::new(vec![1.5], 1).is_err());
        assert!(Design::new(vec![0.1, 0.2, 0.3], 2).is_err());
    }

    #[test]
    fn csv_roundtrip_with_sidecar() {
        let dir = std::env::temp_dir().join(format!("msdesign-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("design.csv");
        let net = generate_net(3, 2, 2, Scramble::Owen { seed: 4 }).unwrap();
        let nd = nest(net, &[3, 9]).unwrap();
        nd.write(&path).unwrap();
        let back = NestedDesign::read(&path).unwrap();
        assert_eq!(back, nd);
        std::fs::write(&path, "x1,x2\n0.1,0.2\n0.3\n").unwrap();
        let err = Design::read_csv(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
