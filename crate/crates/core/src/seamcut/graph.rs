use super::maxflow::{Graph, Segment};
use super::{BandMask, Constraints, Keyframe, Label, LabelVolume, MotionLinks, SeamParams};
use crate::error::{Error, Result};
use crate::video::DifferenceVolume;

const NO_NODE: u32 = u32::MAX;

/// The flow network for one cut, with the pixel/node correspondence.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    width: usize,
    height: usize,
    frames: usize,
    graph: Graph,
    node_of: Vec<u32>,
    pixel_of: Vec<u32>,
    /// Labels of pixels that are not graph nodes.
    fixed: Option<LabelVolume>,
    spatial_edges: usize,
    temporal_edges: usize,
    boundary_links: usize,
    infinity: f64,
}

impl FlowNetwork {
    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Pixel-to-pixel edges (spatial plus temporal).
    pub fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    pub fn spatial_edge_count(&self) -> usize {
        self.spatial_edges
    }

    pub fn temporal_edge_count(&self) -> usize {
        self.temporal_edges
    }

    /// Terminal links standing in for edges to fixed pixels outside the band.
    pub fn boundary_link_count(&self) -> usize {
        self.boundary_links
    }

    /// Capacity used for hard constraints.
    pub fn infinity(&self) -> f64 {
        self.infinity
    }

    pub fn memory_bytes(&self) -> usize {
        self.graph.memory_bytes()
    }

    /// Pixels connected to pixel `(x, y, t)` by graph edges, as `(x, y, t)`
    /// triples, or `None` if the pixel is not a node.
    pub fn neighbors(&self, x: usize, y: usize, t: usize) -> Option<Vec<(usize, usize, usize)>> {
        let p = (t * self.height + y) * self.width + x;
        let n = self.node_of[p];
        if n == NO_NODE {
            return None;
        }
        let mut out: Vec<_> = self
            .graph
            .neighbors(n)
            .into_iter()
            .map(|m| {
                let q = self.pixel_of[m as usize] as usize;
                let wh = self.width * self.height;
                (q % self.width, (q % wh) / self.width, q / wh)
            })
            .collect();
        out.sort_unstable();
        Some(out)
    }
}

/// Labeling produced by [`min_cut`] and the max-flow value. The flow equals
/// the seam energy minus the energy of edges between two fixed pixels.
#[derive(Debug, Clone)]
pub struct Cut {
    pub labels: LabelVolume,
    pub flow: f64,
}

#[inline]
fn link_weight(d: &DifferenceVolume, p: (usize, usize, usize), q: (usize, usize, usize)) -> f64 {
    (d.get(p.0, p.1, p.2) as f64 + d.get(q.0, q.1, q.2) as f64) * 0.5
}

/// Builds the cut graph over the difference volume.
///
/// Without a band every pixel is a node. With `band = Some((mask, labels))`
/// only masked pixels are nodes; an edge from a node to a fixed pixel
/// becomes a terminal link of the same weight toward the fixed label, so the
/// cut value still equals the seam energy. Constrained nodes are tied to
/// their terminal with a capacity exceeding all other weights combined.
pub fn build_graph(
    d: &DifferenceVolume,
    constraints: &Constraints,
    params: &SeamParams,
    motion: &MotionLinks,
    band: Option<(&BandMask, &LabelVolume)>,
) -> Result<FlowNetwork> {
    params.validate()?;
    let (w, h, frames) = (d.width(), d.height(), d.len());
    if constraints.dims() != (w, h, frames) {
        return Err(Error::Structural(format!(
            "constraints are {:?}, difference volume is {:?}",
            constraints.dims(),
            (w, h, frames)
        )));
    }
    if motion.len() != frames.saturating_sub(1) {
        return Err(Error::Structural(format!(
            "{} frames need {} motion links, got {}",
            frames,
            frames.saturating_sub(1),
            motion.len()
        )));
    }
    if let Some((mask, labels)) = band {
        if mask.dims() != (w, h, frames) || labels.dims() != (w, h, frames) {
            return Err(Error::Structural("band or boundary labels differ from volume size".into()));
        }
    }

    let total = w * h * frames;
    let mut node_of = vec![NO_NODE; total];
    let mut pixel_of = Vec::new();
    match band {
        None => {
            pixel_of = (0..total as u32).collect();
            node_of.iter_mut().enumerate().for_each(|(p, n)| *n = p as u32);
        }
        Some((mask, _)) => {
            for (p, &inside) in mask.data().iter().enumerate() {
                if inside {
                    node_of[p] = pixel_of.len() as u32;
                    pixel_of.push(p as u32);
                }
            }
        }
    }
    let n_nodes = pixel_of.len();
    let mut graph = Graph::with_capacity(n_nodes, 3 * n_nodes);
    graph.add_nodes(n_nodes);
    let fixed = band.map(|(_, labels)| labels);

    let mut finite_total = 0.0;
    let mut spatial_edges = 0;
    let mut temporal_edges = 0;
    let mut boundary_links = 0;
    let idx = |x: usize, y: usize, t: usize| (t * h + y) * w + x;
    let banded = band.is_some();

    // Each node owns its right, down and forward-temporal edges. With a band,
    // links to fixed pixels in the other directions are also collected so
    // every node-to-fixed pair becomes exactly one terminal link.
    struct Link {
        pixel: usize,
        weight: f64,
        owned: bool,
        temporal: bool,
    }
    let mut links: Vec<Link> = Vec::with_capacity(8);
    for (node, &pix) in pixel_of.iter().enumerate() {
        let node = node as u32;
        let p = pix as usize;
        let (x, y, t) = (p % w, (p / w) % h, p / (w * h));
        links.clear();
        let spatial = |q: (usize, usize), owned: bool| Link {
            pixel: idx(q.0, q.1, t),
            weight: link_weight(d, (x, y, t), (q.0, q.1, t)),
            owned,
            temporal: false,
        };
        if x + 1 < w {
            links.push(spatial((x + 1, y), true));
        }
        if y + 1 < h {
            links.push(spatial((x, y + 1), true));
        }
        if banded && x > 0 {
            links.push(spatial((x - 1, y), false));
        }
        if banded && y > 0 {
            links.push(spatial((x, y - 1), false));
        }
        if t + 1 < frames {
            if let Some((u, v)) = motion.target(t, x, y, w, h) {
                links.push(Link {
                    pixel: idx(u, v, t + 1),
                    weight: params.lambda * link_weight(d, (x, y, t), (u, v, t + 1)),
                    owned: true,
                    temporal: true,
                });
            }
        }
        if banded && t > 0 {
            for (sx, sy) in motion.sources(t - 1, x, y, w, h) {
                links.push(Link {
                    pixel: idx(sx, sy, t - 1),
                    weight: params.lambda * link_weight(d, (sx, sy, t - 1), (x, y, t)),
                    owned: false,
                    temporal: true,
                });
            }
        }

        for l in &links {
            let other = node_of[l.pixel];
            if other == NO_NODE {
                match fixed.map_or(Label::A, |f| f.data()[l.pixel]) {
                    Label::A => graph.add_tweights(node, l.weight, 0.0),
                    Label::B => graph.add_tweights(node, 0.0, l.weight),
                }
                finite_total += l.weight;
                boundary_links += 1;
            } else if l.owned {
                graph.add_edge(node, other, l.weight, l.weight);
                finite_total += l.weight;
                if l.temporal {
                    temporal_edges += 1;
                } else {
                    spatial_edges += 1;
                }
            }
        }
    }

    let infinity = finite_total + 1.0;
    for (node, &p) in pixel_of.iter().enumerate() {
        match constraints.data()[p as usize] {
            Some(Label::A) => graph.add_tweights(node as u32, infinity, 0.0),
            Some(Label::B) => graph.add_tweights(node as u32, 0.0, infinity),
            None => {}
        }
    }

    Ok(FlowNetwork {
        width: w,
        height: h,
        frames,
        graph,
        node_of,
        pixel_of,
        fixed: fixed.cloned(),
        spatial_edges,
        temporal_edges,
        boundary_links,
        infinity,
    })
}

/// Solves the network. Nodes on the source side take label A; nodes tied to
/// neither terminal take B.
pub fn min_cut(mut net: FlowNetwork) -> Cut {
    let flow = net.graph.maxflow();
    let mut labels = match net.fixed.take() {
        Some(l) => l,
        None => LabelVolume::filled(net.width, net.height, net.frames, Label::B),
    };
    let data = labels.data_mut();
    for (node, &p) in net.pixel_of.iter().enumerate() {
        data[p as usize] = match net.graph.segment(node as u32) {
            Segment::Source => Label::A,
            Segment::Sink => Label::B,
        };
    }
    Cut { labels, flow }
}

/// Cost of a labeling: the mean-difference weight of every spatial neighbor
/// pair with different labels, plus `lambda` times the same for temporal
/// links.
pub fn seam_energy(d: &DifferenceVolume, labels: &LabelVolume, motion: &MotionLinks, lambda: f64) -> f64 {
    let (w, h, frames) = labels.dims();
    let mut spatial = 0.0;
    let mut temporal = 0.0;
    for t in 0..frames {
        for y in 0..h {
            for x in 0..w {
                let l = labels.get(x, y, t);
                if x + 1 < w && labels.get(x + 1, y, t) != l {
                    spatial += link_weight(d, (x, y, t), (x + 1, y, t));
                }
                if y + 1 < h && labels.get(x, y + 1, t) != l {
                    spatial += link_weight(d, (x, y, t), (x, y + 1, t));
                }
                if t + 1 < frames {
                    if let Some((u, v)) = motion.target(t, x, y, w, h) {
                        if labels.get(u, v, t + 1) != l {
                            temporal += link_weight(d, (x, y, t), (u, v, t + 1));
                        }
                    }
                }
            }
        }
    }
    spatial + lambda * temporal
}

/// Adds complete keyframe labelings to the hard constraints.
pub fn apply_keyframes(constraints: &mut Constraints, keyframes: &[Keyframe]) -> Result<()> {
    let (w, h, frames) = constraints.dims();
    for k in keyframes {
        if k.frame >= frames {
            return Err(Error::Config(format!(
                "keyframe {} outside the {frames}-frame volume",
                k.frame
            )));
        }
        if k.labels.len() != w * h {
            return Err(Error::Structural(format!(
                "keyframe {} has {} labels for a {w}x{h} frame",
                k.frame,
                k.labels.len()
            )));
        }
        for (i, &l) in k.labels.iter().enumerate() {
            constraints.constrain(i % w, i / w, k.frame, l, "keyframe disagrees with a stroke")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homography::Homography;
    use crate::seamcut::StrokeSet;
    use proptest::prelude::*;

    fn volume(w: usize, h: usize, frames: Vec<Vec<f32>>) -> DifferenceVolume {
        DifferenceVolume::new(w, h, frames).unwrap()
    }

    fn strokes(list: &[(usize, usize, usize, Label)]) -> StrokeSet {
        let mut s = StrokeSet::new();
        for &(t, x, y, l) in list {
            s.push(t, x, y, l);
        }
        s
    }

    #[test]
    fn structure_of_small_grid() {
        let d = volume(2, 2, vec![vec![0.0; 4]]);
        let c = Constraints::filled(2, 2, 1, None);
        let net = build_graph(&d, &c, &SeamParams::default(), &MotionLinks::identity(1), None).unwrap();
        assert_eq!(net.node_count(), 4);
        assert_eq!(net.spatial_edge_count(), 4);
        assert_eq!(net.temporal_edge_count(), 0);
    }

    #[test]
    fn single_temporal_edge_weight() {
        let d = volume(1, 1, vec![vec![3.0], vec![5.0]]);
        let mut c = Constraints::filled(1, 1, 2, None);
        c.set(0, 0, 0, Some(Label::A));
        c.set(0, 0, 1, Some(Label::B));
        let p = SeamParams {
            lambda: 2.5,
            ..SeamParams::default()
        };
        let net = build_graph(&d, &c, &p, &MotionLinks::identity(2), None).unwrap();
        assert_eq!(net.temporal_edge_count(), 1);
        assert_eq!(net.spatial_edge_count(), 0);
        // Forced to cut the only edge: lambda * (3 + 5) / 2.
        assert_eq!(min_cut(net).flow, 10.0);
    }

    #[test]
    fn translated_links_drop_out_of_bounds_targets() {
        let d = volume(3, 1, vec![vec![0.0; 3]; 2]);
        let c = Constraints::filled(3, 1, 2, None);
        let m = MotionLinks::new(vec![Homography::translation(1.0, 0.0)]).unwrap();
        let net = build_graph(&d, &c, &SeamParams::default(), &m, None).unwrap();
        assert_eq!(net.temporal_edge_count(), 2);
        assert!(net.neighbors(0, 0, 0).unwrap().contains(&(1, 0, 1)));
        assert!(!net.neighbors(2, 0, 0).unwrap().iter().any(|q| q.2 == 1));
    }

    #[test]
    fn cut_in_four_pixel_row() {
        let d = volume(4, 1, vec![vec![0.0, 9.0, 1.0, 0.0]]);
        let s = strokes(&[(0, 0, 0, Label::A), (0, 3, 0, Label::B)]);
        let c = Constraints::from_strokes(&s, 4, 1, 1).unwrap();
        let m = MotionLinks::identity(1);
        let cut = min_cut(build_graph(&d, &c, &SeamParams::default(), &m, None).unwrap());
        assert_eq!(cut.labels.data(), &[Label::A, Label::A, Label::A, Label::B]);
        assert_eq!(cut.flow, 0.5);
        assert_eq!(seam_energy(&d, &cut.labels, &m, 1.0), 0.5);
    }

    #[test]
    fn zero_volume_costs_nothing() {
        let d = volume(5, 4, vec![vec![0.0; 20]; 3]);
        let s = strokes(&[(0, 0, 0, Label::A), (2, 4, 3, Label::B)]);
        let c = Constraints::from_strokes(&s, 5, 4, 3).unwrap();
        let m = MotionLinks::identity(3);
        let cut = min_cut(build_graph(&d, &c, &SeamParams::default(), &m, None).unwrap());
        assert_eq!(cut.flow, 0.0);
        assert_eq!(seam_energy(&d, &cut.labels, &m, 1.0), 0.0);
        assert_eq!(cut.labels.get(0, 0, 0), Label::A);
        assert_eq!(cut.labels.get(4, 3, 2), Label::B);
    }

    #[test]
    fn identity_motion_gives_plain_grid() {
        let (w, h, f) = (3, 3, 3);
        let d = volume(w, h, vec![vec![1.0; w * h]; f]);
        let c = Constraints::filled(w, h, f, None);
        let net = build_graph(&d, &c, &SeamParams::default(), &MotionLinks::identity(f), None).unwrap();
        for t in 0..f {
            for y in 0..h {
                for x in 0..w {
                    let mut expect = Vec::new();
                    let (xi, yi, ti) = (x as i64, y as i64, t as i64);
                    for (dx, dy, dt) in [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)] {
                        let (u, v, s) = (xi + dx, yi + dy, ti + dt);
                        if u >= 0 && v >= 0 && s >= 0 && u < w as i64 && v < h as i64 && s < f as i64 {
                            expect.push((u as usize, v as usize, s as usize));
                        }
                    }
                    expect.sort_unstable();
                    assert_eq!(net.neighbors(x, y, t).unwrap(), expect);
                }
            }
        }
    }

    #[test]
    fn keyframe_dominates() {
        let d = volume(4, 4, vec![vec![1.0; 16]; 3]);
        let s = strokes(&[(0, 3, 3, Label::B), (2, 3, 3, Label::B), (0, 0, 0, Label::A)]);
        let mut c = Constraints::from_strokes(&s, 4, 4, 3).unwrap();
        let mut labels = vec![Label::A; 16];
        labels[15] = Label::B;
        apply_keyframes(&mut c, &[Keyframe { frame: 1, labels }]).unwrap();
        let cut = min_cut(build_graph(&d, &c, &SeamParams::default(), &MotionLinks::identity(3), None).unwrap());
        for i in 0..15 {
            assert_eq!(cut.labels.frame(1)[i], Label::A);
        }
    }

    #[test]
    fn keyframe_conflicting_with_stroke_fails() {
        let s = strokes(&[(1, 1, 0, Label::B)]);
        let mut c = Constraints::from_strokes(&s, 2, 2, 2).unwrap();
        let err = apply_keyframes(&mut c, &[Keyframe { frame: 1, labels: vec![Label::A; 4] }]).unwrap_err();
        assert!(matches!(err, Error::ConstraintConflict { frame: 1, x: 1, y: 0, .. }));
    }

    #[test]
    fn no_keyframes_changes_nothing() {
        let s = strokes(&[(0, 0, 0, Label::A)]);
        let mut c = Constraints::from_strokes(&s, 2, 2, 1).unwrap();
        let before = c.clone();
        apply_keyframes(&mut c, &[]).unwrap();
        assert_eq!(c, before);
    }

    /// Minimum energy over all labelings that respect `c`.
    fn brute_force(d: &DifferenceVolume, c: &Constraints, m: &MotionLinks, lambda: f64) -> f64 {
        let free: Vec<usize> = (0..c.data().len()).filter(|&i| c.data()[i].is_none()).collect();
        let (w, h, f) = c.dims();
        let base: Vec<Label> = c.data().iter().map(|l| l.unwrap_or(Label::A)).collect();
        let mut best = f64::INFINITY;
        for bits in 0u32..(1 << free.len()) {
            let mut data = base.clone();
            for (k, &i) in free.iter().enumerate() {
                if bits >> k & 1 == 1 {
                    data[i] = Label::B;
                }
            }
            let l = LabelVolume::from_vec(w, h, f, data).unwrap();
            best = best.min(seam_energy(d, &l, m, lambda));
        }
        best
    }

    fn random_case() -> impl Strategy<Value = (Vec<f32>, Vec<Option<Label>>, f64, i8)> {
        let n = 5 * 5 * 3;
        (
            prop::collection::vec(0.0f32..50.0, n),
            // Every pixel constrained except a random subset of at most 14.
            prop::collection::vec(prop::bool::ANY, n),
            prop::sample::subsequence((0..n).collect::<Vec<_>>(), 0..=14),
            0.0f64..3.0,
            -1i8..=1,
        )
            .prop_map(move |(d, side, free, lambda, shift)| {
                let mut c: Vec<Option<Label>> = side
                    .iter()
                    .map(|&b| Some(if b { Label::A } else { Label::B }))
                    .collect();
                for i in free {
                    c[i] = None;
                }
                (d, c, lambda, shift)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn min_cut_matches_exhaustive_search((d, c, lambda, shift) in random_case()) {
            let dv = volume(5, 5, d.chunks(25).map(|f| f.to_vec()).collect());
            let c = Constraints::from_vec(5, 5, 3, c).unwrap();
            let m = MotionLinks::new(vec![Homography::translation(shift as f64, 0.0); 2]).unwrap();
            let p = SeamParams { lambda, ..SeamParams::default() };
            let cut = min_cut(build_graph(&dv, &c, &p, &m, None).unwrap());
            let e = seam_energy(&dv, &cut.labels, &m, lambda);
            let best = brute_force(&dv, &c, &m, lambda);
            prop_assert!((e - best).abs() <= 1e-6 * best.max(1.0), "{} vs {}", e, best);
            prop_assert!((cut.flow - e).abs() <= 1e-6 * e.max(1.0));
            for (l, k) in cut.labels.data().iter().zip(c.data()) {
                if let Some(k) = k {
                    prop_assert_eq!(l, k);
                }
            }
        }
    }

    #[test]
    fn twenty_free_pixels_match_exhaustive_search() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
        let n = 75;
        let d: Vec<f32> = (0..n).map(|_| rng.random_range(0.0..30.0)).collect();
        let dv = volume(5, 5, d.chunks(25).map(|f| f.to_vec()).collect());
        let mut c: Vec<Option<Label>> = (0..n)
            .map(|i| Some(if (i % 5) < 2 { Label::A } else { Label::B }))
            .collect();
        let free = rand::seq::index::sample(&mut rng, n, 20);
        for i in free.iter() {
            c[i] = None;
        }
        let c = Constraints::from_vec(5, 5, 3, c).unwrap();
        let m = MotionLinks::identity(3);
        let cut = min_cut(build_graph(&dv, &c, &SeamParams::default(), &m, None).unwrap());
        let best = brute_force(&dv, &c, &m, 1.0);
        assert!((seam_energy(&dv, &cut.labels, &m, 1.0) - best).abs() < 1e-6 * best.max(1.0));
    }

    #[test]
    fn band_cut_keeps_fixed_pixels_and_energy() {
        // 6x1 row: fixed A on the left two, fixed B on the right two, band in
        // the middle. The cheapest edge is between pixels 3 and 4.
        let d = volume(6, 1, vec![vec![5.0, 5.0, 4.0, 1.0, 0.0, 5.0]]);
        let c = Constraints::filled(6, 1, 1, None);
        let fixed = LabelVolume::from_vec(6, 1, 1, vec![Label::A, Label::A, Label::B, Label::B, Label::B, Label::B]).unwrap();
        let band = BandMask::from_vec(6, 1, 1, vec![false, false, true, true, true, false]).unwrap();
        let m = MotionLinks::identity(1);
        let net = build_graph(&d, &c, &SeamParams::default(), &m, Some((&band, &fixed))).unwrap();
        assert_eq!(net.node_count(), 3);
        assert_eq!(net.boundary_link_count(), 2);
        let cut = min_cut(net);
        assert_eq!(
            cut.labels.data(),
            &[Label::A, Label::A, Label::A, Label::A, Label::B, Label::B]
        );
        assert_eq!(cut.flow, seam_energy(&d, &cut.labels, &m, 1.0));
    }
}
