//! Multi-view tracks built from pairwise correspondences.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::fmt_f64;
use crate::matching::Correspondence;
use crate::rpc::{GroundPoint, ImagePoint};

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    /// `(image_id, position)`, sorted by image id, at most one per image.
    pub observations: Vec<(usize, ImagePoint)>,
    /// Current ground estimate; NaN until triangulated.
    pub ground: GroundPoint,
    pub gcp_ground: Option<GroundPoint>,
}

impl Track {
    pub fn new(mut observations: Vec<(usize, ImagePoint)>) -> Self {
        observations.sort_by_key(|o| o.0);
        Track { observations, ground: GroundPoint::new(f64::NAN, f64::NAN, f64::NAN), gcp_ground: None }
    }

    pub fn degree(&self) -> usize {
        self.observations.len()
    }

    pub fn is_gcp(&self) -> bool {
        self.gcp_ground.is_some()
    }

    pub fn observation(&self, image: usize) -> Option<&ImagePoint> {
        self.observations.iter().find(|o| o.0 == image).map(|o| &o.1)
    }
}

/// Feature identity: image id plus the exact bit pattern of the position.
type FeatureKey = (usize, u64, u64);

fn key(image: usize, p: &ImagePoint) -> FeatureKey {
    // +0.0 and -0.0 are the same pixel
    (image, (p.row + 0.0).to_bits(), (p.col + 0.0).to_bits())
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        match self.rank[a].cmp(&self.rank[b]) {
            std::cmp::Ordering::Less => self.parent[a] = b,
            std::cmp::Ordering::Greater => self.parent[b] = a,
            std::cmp::Ordering::Equal => {
                self.parent[b] = a;
                self.rank[a] += 1;
            }
        }
    }
}

/// Connected components of features linked by correspondences. Components
/// holding two distinct features of one image are discarded. The output is
/// sorted by each track's smallest feature and does not depend on the input
/// order.
pub fn build_tracks(correspondences: &[Correspondence]) -> Vec<Track> {
    let mut ids: BTreeMap<FeatureKey, ImagePoint> = BTreeMap::new();
    for c in correspondences {
        ids.insert(key(c.pair.left, &c.left.position), c.left.position);
        ids.insert(key(c.pair.right, &c.right.position), c.right.position);
    }
    let keys: Vec<(FeatureKey, ImagePoint)> = ids.into_iter().collect();
    let index: HashMap<FeatureKey, usize> = keys.iter().enumerate().map(|(i, (k, _))| (*k, i)).collect();

    let mut uf = UnionFind::new(keys.len());
    for c in correspondences {
        let a = index[&key(c.pair.left, &c.left.position)];
        let b = index[&key(c.pair.right, &c.right.position)];
        uf.union(a, b);
    }

    // keys are sorted, so components are discovered in order of their smallest feature
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..keys.len() {
        let root = uf.find(i);
        let s = *slot.entry(root).or_insert_with(|| {
            components.push(Vec::new());
            components.len() - 1
        });
        components[s].push(i);
    }

    components
        .into_iter()
        .filter_map(|members| {
            let obs: Vec<(usize, ImagePoint)> = members.iter().map(|&i| (keys[i].0 .0, keys[i].1)).collect();
            let mut images: Vec<usize> = obs.iter().map(|o| o.0).collect();
            images.dedup();
            (images.len() == obs.len() && obs.len() >= 2).then(|| Track::new(obs))
        })
        .collect()
}

/// Number of tracks per degree.
pub fn track_stats(tracks: &[Track]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for t in tracks {
        *h.entry(t.degree()).or_insert(0) += 1;
    }
    h
}

/// Attaches GCP coordinates by track id; the ground estimate becomes the GCP.
pub fn apply_gcps(tracks: &mut [Track], gcps: &BTreeMap<usize, GroundPoint>) -> Result<()> {
    for (&id, g) in gcps {
        let t = tracks.get_mut(id).ok_or_else(|| Error::ConfigInvalid(format!("GCP refers to unknown track {id}")))?;
        if !(g.lat.is_finite() && g.lon.is_finite() && g.hei.is_finite()) {
            return Err(Error::ConfigInvalid(format!("GCP of track {id} is not finite")));
        }
        t.gcp_ground = Some(*g);
        t.ground = *g;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// files

pub fn tracks_to_text(tracks: &[Track], header: &[(&str, String)]) -> String {
    let mut out = String::from("#");
    for (k, v) in header {
        let _ = write!(out, " {k}={v}");
    }
    out.push_str("\n# track_id image_id row col\n");
    for (id, t) in tracks.iter().enumerate() {
        for (img, p) in &t.observations {
            let _ = writeln!(out, "{id} {img} {} {}", fmt_f64(p.row), fmt_f64(p.col));
        }
    }
    out
}

pub fn write_tracks(path: impl AsRef<Path>, tracks: &[Track], header: &[(&str, String)]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, tracks_to_text(tracks, header)).map_err(|e| Error::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(n, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#')).then(|| (n + 1, l.split_whitespace().collect()))
    })
}

/// Reads a track file. Track ids must be `0..n` without gaps.
pub fn read_tracks(path: impl AsRef<Path>) -> Result<Vec<Track>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut by_id: BTreeMap<usize, Vec<(usize, ImagePoint)>> = BTreeMap::new();
    for (n, f) in data_lines(&text) {
        let bad = |m: String| Error::parse(path, format!("line {n}: {m}"));
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("invalid id {s:?}")));
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("invalid number {s:?}")));
        by_id.entry(int(f[0])?).or_default().push((int(f[1])?, ImagePoint::new(num(f[2])?, num(f[3])?)));
    }
    let mut out = Vec::with_capacity(by_id.len());
    for (expected, (id, obs)) in by_id.into_iter().enumerate() {
        if id != expected {
            return Err(Error::parse(path, format!("track ids must be consecutive; missing {expected}")));
        }
        let t = Track::new(obs);
        if t.observations.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::parse(path, format!("track {id} observes one image twice")));
        }
        if t.degree() < 2 {
            return Err(Error::parse(path, format!("track {id} has fewer than two observations")));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn write_gcps(path: impl AsRef<Path>, gcps: &BTreeMap<usize, GroundPoint>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("# track_id lat lon hei\n");
    for (id, g) in gcps {
        let _ = writeln!(out, "{id} {} {} {}", fmt_f64(g.lat), fmt_f64(g.lon), fmt_f64(g.hei));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_gcps(path: impl AsRef<Path>) -> Result<BTreeMap<usize, GroundPoint>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, f) in data_lines(&text) {
        let bad = |m: String| Error::parse(path, format!("line {n}: {m}"));
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", f.len())));
        }
        let id = f[0].parse::<usize>().map_err(|_| bad(format!("invalid id {:?}", f[0])))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("invalid number {s:?}")));
        out.insert(id, GroundPoint::new(num(f[1])?, num(f[2])?, num(f[3])?));
    }
    Ok(out)
}
