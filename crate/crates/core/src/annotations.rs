//! Sparse supervision: ordinal reflectance judgments, shading annotations,
//! point dilation, judgment augmentation and superpixel-based pair sampling.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::{intensity, LinearImage, Mask};

/// Dilation radius applied to shadow and discontinuity points.
pub const POINT_DILATION_RADIUS: f64 = 5.0;

/// Ratio tolerance separating "equal" from "darker" when deriving relations.
pub const DEFAULT_EQUAL_DELTA: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Point {
    pub x: usize,
    pub y: usize,
}

impl Point {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn index(&self, width: usize) -> usize {
        self.y * width + self.x
    }

    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.x < width && self.y < height
    }
}

impl From<[usize; 2]> for Point {
    fn from([x, y]: [usize; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [usize; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// `JDarker` (+1): point j is darker; `IDarker` (-1): point i is darker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Relation {
    IDarker,
    Equal,
    JDarker,
}

impl Relation {
    pub fn flipped(self) -> Self {
        match self {
            Relation::IDarker => Relation::JDarker,
            Relation::Equal => Relation::Equal,
            Relation::JDarker => Relation::IDarker,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Relation::IDarker => -1,
            Relation::Equal => 0,
            Relation::JDarker => 1,
        }
    }
}

impl TryFrom<i8> for Relation {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            -1 => Ok(Relation::IDarker),
            0 => Ok(Relation::Equal),
            1 => Ok(Relation::JDarker),
            other => Err(format!("relation must be -1, 0 or 1, got {other}")),
        }
    }
}

impl From<Relation> for i8 {
    fn from(r: Relation) -> i8 {
        r.as_i8()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrdinalJudgment {
    pub i: Point,
    pub j: Point,
    pub rel: Relation,
    pub w: f64,
}

impl OrdinalJudgment {
    pub fn new(i: Point, j: Point, rel: Relation, w: f64) -> Self {
        Self { i, j, rel, w }
    }
}

/// On-disk ordinal judgment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrdinalFile {
    pub image: String,
    pub pairs: Vec<OrdinalJudgment>,
}

impl OrdinalFile {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        for (k, p) in self.pairs.iter().enumerate() {
            if !p.i.in_bounds(width, height) || !p.j.in_bounds(width, height) {
                return Err(Error::Annotation(format!("pair {k} is out of bounds")));
            }
            if !(p.w >= 0.0 && p.w.is_finite()) {
                return Err(Error::Annotation(format!("pair {k} has a bad weight")));
            }
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Smooth-shading regions (row-major pixel indices) plus non-smooth points.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SawAnnotationSet {
    #[serde(default)]
    pub smooth_regions: Vec<Vec<usize>>,
    #[serde(default)]
    pub shadow_points: Vec<Point>,
    #[serde(default)]
    pub discontinuity_points: Vec<Point>,
}

impl SawAnnotationSet {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let n = width * height;
        for (k, r) in self.smooth_regions.iter().enumerate() {
            if r.is_empty() {
                return Err(Error::Annotation(format!("smooth region {k} is empty")));
            }
            if r.iter().any(|&i| i >= n) {
                return Err(Error::Annotation(format!("smooth region {k} is out of bounds")));
            }
        }
        let all = self.shadow_points.iter().chain(&self.discontinuity_points);
        if all.into_iter().any(|p| !p.in_bounds(width, height)) {
            return Err(Error::Annotation("point out of bounds".into()));
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Connected regions of the dilated shadow points.
    pub fn shadow_regions(&self, width: usize, height: usize) -> Vec<Vec<usize>> {
        connected_components(&dilate_points(
            &self.shadow_points,
            POINT_DILATION_RADIUS,
            width,
            height,
        ))
    }

    pub fn discontinuity_mask(&self, width: usize, height: usize) -> Mask {
        dilate_points(&self.discontinuity_points, POINT_DILATION_RADIUS, width, height)
    }
}

/// Union of closed Euclidean disks of `radius` around `points`, clipped to the grid.
pub fn dilate_points(points: &[Point], radius: f64, width: usize, height: usize) -> Mask {
    let mut mask = Mask::filled(width, height, false);
    let r = radius.max(0.0);
    let reach = r.floor() as usize;
    for p in points {
        let (x0, x1) = (p.x.saturating_sub(reach), (p.x + reach).min(width.saturating_sub(1)));
        let (y0, y1) = (p.y.saturating_sub(reach), (p.y + reach).min(height.saturating_sub(1)));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 - p.x as f64;
                let dy = y as f64 - p.y as f64;
                if x < width && y < height && dx * dx + dy * dy <= r * r {
                    mask.set(x, y, true);
                }
            }
        }
    }
    mask
}

/// 4-connected components of a mask, each as sorted row-major indices,
/// ordered by their first pixel.
pub fn connected_components(mask: &Mask) -> Vec<Vec<usize>> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if !mask.at(start) || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.at(j) && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

// ---------------------------------------------------------------------------
// Judgment augmentation

/// Relation between two points from the first point's side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Fact {
    FirstDarker,
    Equal,
    SecondDarker,
}

impl Fact {
    fn of(rel: Relation) -> Self {
        match rel {
            Relation::IDarker => Fact::FirstDarker,
            Relation::Equal => Fact::Equal,
            Relation::JDarker => Fact::SecondDarker,
        }
    }

    fn flipped(self) -> Self {
        match self {
            Fact::FirstDarker => Fact::SecondDarker,
            Fact::Equal => Fact::Equal,
            Fact::SecondDarker => Fact::FirstDarker,
        }
    }

    fn relation(self) -> Relation {
        match self {
            Fact::FirstDarker => Relation::IDarker,
            Fact::Equal => Relation::Equal,
            Fact::SecondDarker => Relation::JDarker,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Widest(f64, usize, u8);

impl Eq for Widest {}

impl PartialOrd for Widest {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Widest {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .total_cmp(&other.0)
            .then_with(|| other.1.cmp(&self.1))
            .then_with(|| other.2.cmp(&self.2))
    }
}

/// Closes a judgment set under symmetry and transitivity.
///
/// Equal relations chain into equal relations; a chain holding at least one
/// "darker" step implies "darker". Each inferred judgment carries the
/// largest achievable minimum weight along its supporting chain. Pairs whose
/// originals disagree do not take part in inference, and pairs for which
/// contradictory relations can be inferred receive no new judgment. The
/// input judgments are returned first, unchanged and in order; added
/// judgments follow sorted by `(i, j)`.
pub fn augment_judgments(judgments: &[OrdinalJudgment]) -> Vec<OrdinalJudgment> {
    let points: Vec<Point> = judgments
        .iter()
        .flat_map(|j| [j.i, j.j])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let id = |p: Point| points.binary_search(&p).expect("collected above");

    // canonical pair (lo < hi) -> (fact from lo's side, weight), None = contradictory originals
    let mut originals: BTreeMap<(usize, usize), Option<(Fact, f64)>> = BTreeMap::new();
    let mut oriented: BTreeSet<(Point, Point)> = BTreeSet::new();
    for j in judgments {
        oriented.insert((j.i, j.j));
        let (a, b) = (id(j.i), id(j.j));
        if a == b {
            continue;
        }
        let (key, fact) = if a < b {
            ((a, b), Fact::of(j.rel))
        } else {
            ((b, a), Fact::of(j.rel).flipped())
        };
        originals
            .entry(key)
            .and_modify(|slot| {
                *slot = match *slot {
                    Some((f, w)) if f == fact => Some((f, w.max(j.w))),
                    _ => None,
                }
            })
            .or_insert(Some((fact, j.w)));
    }

    // adjacency: (neighbour, weight, is_darker_step) from the node's side
    let n = points.len();
    let mut adj: Vec<Vec<(usize, f64, bool)>> = vec![Vec::new(); n];
    for (&(a, b), slot) in &originals {
        match slot {
            Some((Fact::Equal, w)) => {
                adj[a].push((b, *w, false));
                adj[b].push((a, *w, false));
            }
            Some((Fact::FirstDarker, w)) => adj[a].push((b, *w, true)),
            Some((Fact::SecondDarker, w)) => adj[b].push((a, *w, true)),
            None => {}
        }
    }

    // reach[s][t] = (widest equal-only chain, widest chain with a darker step)
    let reach: Vec<Vec<[Option<f64>; 2]>> = (0..n).map(|s| widest_paths(&adj, s)).collect();

    let mut added = Vec::new();
    for s in 0..n {
        for t in s + 1..n {
            if matches!(originals.get(&(s, t)), Some(None)) {
                continue;
            }
            let eq = reach[s][t][0];
            let st = reach[s][t][1];
            let ts = reach[t][s][1];
            let found: Vec<(Fact, f64)> = [
                eq.map(|w| (Fact::Equal, w)),
                st.map(|w| (Fact::FirstDarker, w)),
                ts.map(|w| (Fact::SecondDarker, w)),
            ]
            .into_iter()
            .flatten()
            .collect();
            let [(fact, path_w)] = found[..] else {
                continue;
            };
            let w = match originals.get(&(s, t)) {
                Some(Some((_, w))) => *w,
                _ => path_w,
            };
            let (ps, pt) = (points[s], points[t]);
            if !oriented.contains(&(ps, pt)) {
                added.push(OrdinalJudgment::new(ps, pt, fact.relation(), w));
            }
            if !oriented.contains(&(pt, ps)) {
                added.push(OrdinalJudgment::new(pt, ps, fact.flipped().relation(), w));
            }
        }
    }
    added.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));

    let mut out = judgments.to_vec();
    out.extend(added);
    out
}

/// Bottleneck-maximising search over (node, has-darker-step) states.
fn widest_paths(adj: &[Vec<(usize, f64, bool)>], source: usize) -> Vec<[Option<f64>; 2]> {
    let mut best: Vec<[Option<f64>; 2]> = vec![[None, None]; adj.len()];
    let mut done = vec![[false; 2]; adj.len()];
    let mut heap = BinaryHeap::new();
    best[source][0] = Some(f64::INFINITY);
    heap.push(Widest(f64::INFINITY, source, 0));
    while let Some(Widest(w, node, phase)) = heap.pop() {
        if done[node][phase as usize] {
            continue;
        }
        done[node][phase as usize] = true;
        for &(next, ew, darker) in &adj[node] {
            let nph = if darker { 1 } else { phase };
            let nw = w.min(ew);
            let slot = &mut best[next][nph as usize];
            if !done[next][nph as usize] && slot.map_or(true, |b| nw > b) {
                *slot = Some(nw);
                heap.push(Widest(nw, next, nph));
            }
        }
    }
    // a chain from the source back to itself says nothing about other pairs
    best[source] = [None, None];
    best
}

// ---------------------------------------------------------------------------
// Superpixels

/// Per-pixel segment ids `0..count`, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SuperpixelLabels {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl SuperpixelLabels {
    /// Pixel indices of each segment, in label order.
    pub fn segments(&self) -> Vec<Vec<usize>> {
        let mut segs = vec![Vec::new(); self.count];
        for (i, &l) in self.labels.iter().enumerate() {
            segs[l as usize].push(i);
        }
        segs
    }

    /// Every label used, and every segment 4-connected.
    pub fn is_connected_partition(&self) -> bool {
        if self.labels.len() != self.width * self.height {
            return false;
        }
        self.segments().iter().all(|seg| {
            if seg.is_empty() {
                return false;
            }
            let mut m = Mask::filled(self.width, self.height, false);
            seg.iter().for_each(|&i| m.set_index(i, true));
            connected_components(&m).len() == 1
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlicParams {
    /// Target segment count.
    pub k: usize,
    /// Weight of spatial distance against color distance.
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            k: 64,
            compactness: 0.05,
            iterations: 10,
        }
    }
}

impl SlicParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        if !(self.compactness >= 0.0 && self.compactness.is_finite()) {
            return Err(invalid("compactness", "must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Center {
    x: f64,
    y: f64,
    color: Vec<f64>,
}

/// SLIC: k-means over `(color, x, y)` with distance
/// `sqrt(d_color^2 + (m / G)^2 d_xy^2)`, `G = sqrt(HW / K)`, seeded on a
/// regular grid, followed by merging of disconnected fragments into their
/// largest neighbouring segment.
pub fn slic_superpixels(img: &LinearImage, params: &SlicParams) -> Result<SuperpixelLabels> {
    params.validate()?;
    if img.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let n = w * h;
    let k = params.k.min(n);
    let step = ((n as f64) / k as f64).sqrt();
    let ny = ((k as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h);
    let nx = ((k as f64 / ny as f64).round() as usize).clamp(1, w);

    let mut centers: Vec<Center> = Vec::with_capacity(nx * ny);
    for gy in 0..ny {
        for gx in 0..nx {
            let x = (gx as f64 + 0.5) * w as f64 / nx as f64 - 0.5;
            let y = (gy as f64 + 0.5) * h as f64 / ny as f64 - 0.5;
            let px = ((x + 0.5).floor() as usize).min(w - 1);
            let py = ((y + 0.5).floor() as usize).min(h - 1);
            centers.push(Center {
                x,
                y,
                color: img.pixel(py * w + px).to_vec(),
            });
        }
    }

    let spatial = (params.compactness / step).powi(2);
    let window = 2.0 * step;
    let mut labels = vec![0u32; n];
    let mut dist = vec![f64::INFINITY; n];
    for _ in 0..params.iterations.max(1) {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let x0 = (c.x - window).floor().max(0.0) as usize;
            let x1 = ((c.x + window).ceil() as usize).min(w - 1);
            let y0 = (c.y - window).floor().max(0.0) as usize;
            let y1 = ((c.y + window).ceil() as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let d = slic_distance(img.pixel(i), x, y, c, spatial);
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = ci as u32;
                    }
                }
            }
        }
        for i in 0..n {
            if dist[i].is_infinite() {
                let (x, y) = (i % w, i / w);
                let mut best = (f64::INFINITY, 0u32);
                for (ci, c) in centers.iter().enumerate() {
                    let d = slic_distance(img.pixel(i), x, y, c, spatial);
                    if d < best.0 {
                        best = (d, ci as u32);
                    }
                }
                labels[i] = best.1;
            }
        }
        let mut sums = vec![(0.0, 0.0, vec![0.0; ch], 0usize); centers.len()];
        for i in 0..n {
            let s = &mut sums[labels[i] as usize];
            s.0 += (i % w) as f64;
            s.1 += (i / w) as f64;
            for (acc, v) in s.2.iter_mut().zip(img.pixel(i)) {
                *acc += v;
            }
            s.3 += 1;
        }
        for (c, (sx, sy, sc, cnt)) in centers.iter_mut().zip(sums) {
            if cnt > 0 {
                let m = cnt as f64;
                c.x = sx / m;
                c.y = sy / m;
                c.color = sc.into_iter().map(|v| v / m).collect();
            }
        }
    }
    Ok(enforce_connectivity(w, h, &labels))
}

fn slic_distance(px: &[f64], x: usize, y: usize, c: &Center, spatial: f64) -> f64 {
    let dc: f64 = px.iter().zip(&c.color).map(|(a, b)| (a - b) * (a - b)).sum();
    let dx = x as f64 - c.x;
    let dy = y as f64 - c.y;
    dc + spatial * (dx * dx + dy * dy)
}

/// Keeps the largest fragment of each label; other fragments are merged into
/// the largest adjacent group. Labels are renumbered in scan order.
fn enforce_connectivity(w: usize, h: usize, labels: &[u32]) -> SuperpixelLabels {
    let n = w * h;
    // fragments: 4-connected runs of one label
    let mut frag = vec![usize::MAX; n];
    let mut frag_label = Vec::new();
    let mut frag_size = Vec::new();
    for start in 0..n {
        if frag[start] != usize::MAX {
            continue;
        }
        let id = frag_label.len();
        let lab = labels[start];
        let mut stack = vec![start];
        frag[start] = id;
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            for (ok, j) in [
                (x > 0, i.wrapping_sub(1)),
                (x + 1 < w, i + 1),
                (y > 0, i.wrapping_sub(w)),
                (y + 1 < h, i + w),
            ] {
                if ok && frag[j] == usize::MAX && labels[j] == lab {
                    frag[j] = id;
                    stack.push(j);
                }
            }
        }
        frag_label.push(lab);
        frag_size.push(size);
    }

    let nf = frag_label.len();
    let mut main_of_label: BTreeMap<u32, usize> = BTreeMap::new();
    for f in 0..nf {
        main_of_label
            .entry(frag_label[f])
            .and_modify(|m| {
                if frag_size[f] > frag_size[*m] {
                    *m = f;
                }
            })
            .or_insert(f);
    }

    let mut neighbours: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nf];
    for i in 0..n {
        let (x, y) = (i % w, i / w);
        if x + 1 < w && frag[i] != frag[i + 1] {
            neighbours[frag[i]].insert(frag[i + 1]);
            neighbours[frag[i + 1]].insert(frag[i]);
        }
        if y + 1 < h && frag[i] != frag[i + w] {
            neighbours[frag[i]].insert(frag[i + w]);
            neighbours[frag[i + w]].insert(frag[i]);
        }
    }

    // union-find over fragments; group size tracked at the root
    let mut parent: Vec<usize> = (0..nf).collect();
    let mut size = frag_size.clone();
    fn find(parent: &mut [usize], mut a: usize) -> usize {
        while parent[a] != a {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        a
    }
    let mut orphans: Vec<usize> = (0..nf)
        .filter(|&f| main_of_label[&frag_label[f]] != f)
        .collect();
    orphans.sort_by_key(|&f| (frag_size[f], f));
    for f in orphans {
        let root = find(&mut parent, f);
        let mut best: Option<(usize, usize)> = None;
        for &nb in &neighbours[f] {
            let r = find(&mut parent, nb);
            if r == root {
                continue;
            }
            if best.map_or(true, |(bs, br)| size[r] > bs || (size[r] == bs && r < br)) {
                best = Some((size[r], r));
            }
        }
        if let Some((_, r)) = best {
            parent[root] = r;
            size[r] += size[root];
        }
    }

    let mut relabel: BTreeMap<usize, u32> = BTreeMap::new();
    let mut out = vec![0u32; n];
    for i in 0..n {
        let root = find(&mut parent, frag[i]);
        let next = relabel.len() as u32;
        out[i] = *relabel.entry(root).or_insert(next);
    }
    SuperpixelLabels {
        width: w,
        height: h,
        labels: out,
        count: relabel.len(),
    }
}

/// One random valid pixel per segment, then a judgment for every pair of
/// picks derived from ground-truth reflectance intensity, weight 1.
pub fn sample_cgi_ordinals(
    gt_reflectance: &LinearImage,
    labels: &SuperpixelLabels,
    seed: u64,
    equal_delta: f64,
) -> Result<Vec<OrdinalJudgment>> {
    if labels.width != gt_reflectance.width() || labels.height != gt_reflectance.height() {
        return Err(Error::DimensionMismatch("labels vs reflectance".into()));
    }
    if !(equal_delta >= 0.0) {
        return Err(invalid("equal_delta", "must be non-negative"));
    }
    let w = labels.width;
    let gray = intensity(gt_reflectance);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = Vec::new();
    for seg in labels.segments() {
        let valid: Vec<usize> = seg.into_iter().filter(|&i| gray.mask().at(i)).collect();
        if valid.is_empty() {
            continue;
        }
        let i = valid[rng.gen_range(0..valid.len())];
        picks.push((Point::new(i % w, i / w), gray.data()[i]));
    }
    let mut out = Vec::with_capacity(picks.len() * picks.len().saturating_sub(1) / 2);
    for a in 0..picks.len() {
        for b in a + 1..picks.len() {
            let (pi, ri) = picks[a];
            let (pj, rj) = picks[b];
            out.push(OrdinalJudgment::new(pi, pj, relation_from_ratio(ri, rj, equal_delta), 1.0));
        }
    }
    Ok(out)
}

/// Equal if `max / min < 1 + delta`, otherwise the smaller side is darker.
pub fn relation_from_ratio(ri: f64, rj: f64, delta: f64) -> Relation {
    let (lo, hi) = if ri <= rj { (ri, rj) } else { (rj, ri) };
    if hi == lo || hi < (1.0 + delta) * lo {
        Relation::Equal
    } else if ri < rj {
        Relation::IDarker
    } else {
        Relation::JDarker
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: usize, y: usize) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn dilation_radius_zero_is_identity() {
        let pts = [p(1, 2), p(4, 4)];
        let m = dilate_points(&pts, 0.0, 6, 6);
        assert_eq!(m.indices(), vec![2 * 6 + 1, 4 * 6 + 4]);
    }

    #[test]
    fn dilation_radius_five_has_81_pixels() {
        let m = dilate_points(&[p(10, 10)], 5.0, 30, 30);
        assert_eq!(m.count(), 81);
    }

    #[test]
    fn dilation_clips_at_corner() {
        let m = dilate_points(&[p(0, 0)], 5.0, 30, 30);
        let expect = (0..=5i32)
            .flat_map(|x| (0..=5i32).map(move |y| (x, y)))
            .filter(|(x, y)| x * x + y * y <= 25)
            .count();
        assert_eq!(m.count(), expect);
    }

    #[test]
    fn symmetric_equality() {
        let (a, b) = (p(0, 0), p(1, 0));
        let out = augment_judgments(&[OrdinalJudgment::new(a, b, Relation::Equal, 0.7)]);
        assert_eq!(out.len(), 2);
        assert_eq!(out[1], OrdinalJudgment::new(b, a, Relation::Equal, 0.7));
    }

    #[test]
    fn transitive_darker() {
        let (a, b, c) = (p(0, 0), p(1, 0), p(2, 0));
        let input = [
            OrdinalJudgment::new(a, b, Relation::IDarker, 0.9),
            OrdinalJudgment::new(b, c, Relation::IDarker, 0.4),
        ];
        let out = augment_judgments(&input);
        assert_eq!(&out[..2], &input);
        assert!(out.contains(&OrdinalJudgment::new(a, c, Relation::IDarker, 0.4)));
        assert!(out.contains(&OrdinalJudgment::new(c, a, Relation::JDarker, 0.4)));
        assert!(out.contains(&OrdinalJudgment::new(b, a, Relation::JDarker, 0.9)));
        assert_eq!(out.len(), 6);
    }

    #[test]
    fn contradictory_pair_gets_nothing() {
        let (a, b) = (p(0, 0), p(1, 0));
        let input = [
            OrdinalJudgment::new(a, b, Relation::IDarker, 0.3),
            OrdinalJudgment::new(b, a, Relation::IDarker, 0.9),
        ];
        assert_eq!(augment_judgments(&input), input.to_vec());
    }

    #[test]
    fn equality_carries_darker() {
        let (a, b, c) = (p(0, 0), p(1, 0), p(2, 0));
        let out = augment_judgments(&[
            OrdinalJudgment::new(a, b, Relation::Equal, 1.0),
            OrdinalJudgment::new(b, c, Relation::JDarker, 0.5),
        ]);
        assert!(out.contains(&OrdinalJudgment::new(a, c, Relation::JDarker, 0.5)));
    }

    #[test]
    fn augmentation_is_idempotent() {
        let pts: Vec<Point> = (0..6).map(|k| p(k, 0)).collect();
        let input = vec![
            OrdinalJudgment::new(pts[0], pts[1], Relation::IDarker, 1.0),
            OrdinalJudgment::new(pts[1], pts[2], Relation::Equal, 0.5),
            OrdinalJudgment::new(pts[3], pts[2], Relation::JDarker, 0.8),
            OrdinalJudgment::new(pts[4], pts[5], Relation::IDarker, 0.2),
            OrdinalJudgment::new(pts[5], pts[4], Relation::IDarker, 0.2),
        ];
        let once = augment_judgments(&input);
        assert_eq!(augment_judgments(&once), once);
    }

    #[test]
    fn json_schema() {
        let text = r#"{"image":"a.png","pairs":[{"i":[1,2],"j":[3,4],"rel":-1,"w":0.5}]}"#;
        let f: OrdinalFile = serde_json::from_str(text).unwrap();
        assert_eq!(f.pairs[0], OrdinalJudgment::new(p(1, 2), p(3, 4), Relation::IDarker, 0.5));
        assert_eq!(serde_json::to_string(&f).unwrap(), text);
        assert!(serde_json::from_str::<OrdinalFile>(r#"{"image":"a","pairs":[{"i":[0,0],"j":[0,1],"rel":2,"w":1}]}"#).is_err());
        let saw: SawAnnotationSet = serde_json::from_str(
            r#"{"smooth_regions":[[0,1,2]],"shadow_points":[[3,3]],"discontinuity_points":[]}"#,
        )
        .unwrap();
        assert_eq!(saw.shadow_points, vec![p(3, 3)]);
        assert!(saw.validate(2, 2).is_err());
        assert!(saw.validate(4, 4).is_ok());
    }

    #[test]
    fn slic_constant_image_gives_blocks() {
        let img = LinearImage::filled(8, 8, 3, 0.5);
        let l = slic_superpixels(&img, &SlicParams { k: 4, ..Default::default() }).unwrap();
        assert_eq!(l.count, 4);
        for seg in l.segments() {
            assert_eq!(seg.len(), 16);
            let xs: BTreeSet<usize> = seg.iter().map(|i| i % 8 / 4).collect();
            let ys: BTreeSet<usize> = seg.iter().map(|i| i / 8 / 4).collect();
            assert_eq!((xs.len(), ys.len()), (1, 1));
        }
    }

    #[test]
    fn slic_single_segment() {
        let img = LinearImage::from_fn(7, 5, 1, |x, y, _| (x * y) as f64 * 0.1);
        let l = slic_superpixels(&img, &SlicParams { k: 1, ..Default::default() }).unwrap();
        assert_eq!(l.count, 1);
        assert!(l.labels.iter().all(|&v| v == 0));
    }

    #[test]
    fn slic_follows_color_edge() {
        let img = LinearImage::from_fn(8, 8, 3, |x, _, c| if x < 4 { 0.1 } else { 0.9 - 0.1 * c as f64 });
        let l = slic_superpixels(&img, &SlicParams { k: 2, compactness: 1e-6, iterations: 10 }).unwrap();
        assert_eq!(l.count, 2);
        for i in 0..64 {
            assert_eq!(l.labels[i], l.labels[if i % 8 < 4 { 0 } else { 7 }]);
        }
    }

    #[test]
    fn ordinal_sampling_counts_and_relations() {
        let labels = SuperpixelLabels {
            width: 4,
            height: 1,
            labels: vec![0, 0, 1, 1],
            count: 2,
        };
        let r = LinearImage::from_fn(4, 1, 1, |x, _, _| if x < 2 { 0.2 } else { 0.8 });
        let pairs = sample_cgi_ordinals(&r, &labels, 3, 0.1).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].rel, Relation::IDarker);
        assert_eq!(pairs[0].w, 1.0);

        let flat = LinearImage::filled(4, 1, 1, 0.4);
        let five = SuperpixelLabels { width: 4, height: 1, labels: vec![0, 1, 2, 3], count: 4 };
        let pairs = sample_cgi_ordinals(&flat, &five, 9, 0.1).unwrap();
        assert_eq!(pairs.len(), 6);
        assert!(pairs.iter().all(|p| p.rel == Relation::Equal));
        assert_eq!(pairs, sample_cgi_ordinals(&flat, &five, 9, 0.1).unwrap());
    }
}
