//! Goal-point vocabulary: clustered trajectory endpoints with an exact
//! nearest-neighbour index.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::kmeans;
use crate::scene::Point;

/// Vocabulary size used at desk scale (a scaled-down 8192).
pub const DEFAULT_VOCAB_SIZE: usize = 256;
const MAGIC: &[u8; 4] = b"GVC1";

#[derive(Clone, Debug, PartialEq)]
pub struct GoalVocabulary {
    candidates: Vec<Point>,
    index: GridIndex,
}

impl GoalVocabulary {
    pub fn new(candidates: Vec<Point>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::invalid("vocabulary needs at least one candidate"));
        }
        if candidates.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vocabulary candidate".into()));
        }
        let mut sorted = candidates.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("vocabulary contains duplicate candidates"));
        }
        let index = GridIndex::build(&candidates);
        Ok(Self { candidates, index })
    }

    pub fn candidates(&self) -> &[Point] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn get(&self, i: usize) -> Point {
        self.candidates[i]
    }

    /// Closest candidate by Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, q: Point) -> (usize, Point) {
        let i = self.index.nearest(&self.candidates, q);
        (i, self.candidates[i])
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.candidates.len() as u64).to_le_bytes())?;
        for p in &self.candidates {
            w.write_all(&p[0].to_le_bytes())?;
            w.write_all(&p[1].to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a vocabulary file (bad magic)".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        if n > 1 << 24 {
            return Err(Error::Format(format!("implausible vocabulary size {n}")));
        }
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            let x = f64::from_le_bytes(b8);
            r.read_exact(&mut b8)?;
            pts.push([x, f64::from_le_bytes(b8)]);
        }
        Self::new(pts)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Clusters endpoints into `n` candidates with k-means.
pub fn build_vocabulary(endpoints: &[Point], n: usize, seed: u64) -> Result<GoalVocabulary> {
    if n > endpoints.len() {
        return Err(Error::invalid(format!(
            "vocabulary size {n} exceeds {} endpoints",
            endpoints.len()
        )));
    }
    let pts: Vec<Vec<f64>> = endpoints.iter().map(|p| p.to_vec()).collect();
    let km = kmeans(&pts, n, seed)?;
    GoalVocabulary::new(km.centroids.iter().map(|c| [c[0], c[1]]).collect())
}

/// Exhaustive scan with the same tie rule as [`GoalVocabulary::nearest`].
pub fn nearest_brute_force(candidates: &[Point], q: Point) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in candidates.iter().enumerate() {
        let d2 = (c[0] - q[0]).powi(2) + (c[1] - q[1]).powi(2);
        if d2 < best.0 {
            best = (d2, i);
        }
    }
    best.1
}

/// Uniform bucket grid over the candidates' bounding box, searched in
/// growing square rings until no unvisited cell can hold a closer point.
#[derive(Clone, Debug, PartialEq)]
struct GridIndex {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl GridIndex {
    fn build(pts: &[Point]) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pts {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let side = ((pts.len() as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        let cell = span / side as f64 * (1.0 + 1e-9);
        let nx = (((hi[0] - lo[0]) / cell).floor() as usize + 1).max(1);
        let ny = (((hi[1] - lo[1]) / cell).floor() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let mut index = GridIndex {
            origin: lo,
            cell,
            nx,
            ny,
            buckets: Vec::new(),
        };
        for (i, p) in pts.iter().enumerate() {
            let (cx, cy) = index.cell_of(*p);
            buckets[cy * nx + cx].push(i);
        }
        index.buckets = buckets;
        index
    }

    fn cell_of(&self, p: Point) -> (usize, usize) {
        let f = |v: f64, o: f64, n: usize| -> usize {
            let c = ((v - o) / self.cell).floor();
            if c < 0.0 {
                0
            } else {
                (c as usize).min(n - 1)
            }
        };
        (f(p[0], self.origin[0], self.nx), f(p[1], self.origin[1], self.ny))
    }

    fn nearest(&self, pts: &[Point], q: Point) -> usize {
        let (cx, cy) = self.cell_of(q);
        let (cx, cy) = (cx as i64, cy as i64);
        let mut best = (f64::INFINITY, usize::MAX);
        let max_r = self.nx.max(self.ny) as i64;
        for r in 0..=max_r {
            for y in (cy - r)..=(cy + r) {
                if y < 0 || y >= self.ny as i64 {
                    continue;
                }
                for x in (cx - r)..=(cx + r) {
                    if x < 0 || x >= self.nx as i64 {
                        continue;
                    }
                    // only the ring's boundary cells are new
                    if (y - cy).abs() != r && (x - cx).abs() != r {
                        continue;
                    }
                    for &i in &self.buckets[(y * self.nx as i64 + x) as usize] {
                        let p = pts[i];
                        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                        if d2 < best.0 || (d2 == best.0 && i < best.1) {
                            best = (d2, i);
                        }
                    }
                }
            }
            // distance from q to the outside of the visited square
            let left = self.origin[0] + (cx - r) as f64 * self.cell;
            let right = self.origin[0] + (cx + r + 1) as f64 * self.cell;
            let bottom = self.origin[1] + (cy - r) as f64 * self.cell;
            let top = self.origin[1] + (cy + r + 1) as f64 * self.cell;
            let margin = (q[0] - left).min(right - q[0]).min(q[1] - bottom).min(top - q[1]);
            let covers_all = cx - r <= 0
                && cy - r <= 0
                && cx + r >= self.nx as i64 - 1
                && cy + r >= self.ny as i64 - 1;
            if covers_all || (margin > 0.0 && margin * margin > best.0) {
                break;
            }
        }
        best.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn single_candidate_is_mean() {
        let pts = vec![[0.0, 0.0], [2.0, 0.0], [4.0, 6.0]];
        let v = build_vocabulary(&pts, 1, 0).unwrap();
        assert!((v.get(0)[0] - 2.0).abs() < 1e-12 && (v.get(0)[1] - 2.0).abs() < 1e-12);
        assert!(build_vocabulary(&pts, 4, 0).is_err());
    }

    #[test]
    fn nearest_small_cases() {
        let v = GoalVocabulary::new(vec![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(v.nearest([0.4, 0.0]), (0, [0.0, 0.0]));
        assert_eq!(v.nearest([1.0, 0.0]).0, 1);
        // equidistant: lowest index
        assert_eq!(v.nearest([0.5, 3.0]).0, 0);
        assert!(GoalVocabulary::new(vec![[1.0, 1.0], [1.0, 1.0]]).is_err());
    }

    #[test]
    fn index_matches_brute_force() {
        let mut rng = crate::math::rng::seeded(5);
        for trial in 0..20 {
            let n = 1 + trial * 13;
            let mut pts: Vec<Point> = (0..n)
                .map(|_| [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)])
                .collect();
            // integer lattice points produce exact ties
            if trial % 2 == 0 {
                for p in &mut pts {
                    *p = [p[0].round(), p[1].round()];
                }
                pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                pts.dedup();
            }
            let v = GoalVocabulary::new(pts.clone()).unwrap();
            for _ in 0..200 {
                let q: Point = [rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0)];
                let q = if trial % 2 == 0 { [q[0].round() + 0.5, q[1].round()] } else { q };
                assert_eq!(v.nearest(q).0, nearest_brute_force(&pts, q), "q={q:?}");
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let v = GoalVocabulary::new(vec![[1.5, -2.0], [3.0, 4.25]]).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"GVC1");
        assert_eq!(buf.len(), 4 + 8 + 2 * 16);
        assert_eq!(GoalVocabulary::read_from(&buf[..]).unwrap(), v);
        buf[0] = b'X';
        assert!(GoalVocabulary::read_from(&buf[..]).is_err());
    }
}
