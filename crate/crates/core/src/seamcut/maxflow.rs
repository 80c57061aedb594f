//! Boykov-Kolmogorov augmenting-path max-flow on a sparse graph.
//!
//! Search trees grow from both terminals and are reused between
//! augmentations; orphaned subtrees are re-adopted using the timestamp and
//! distance heuristics from the original implementation. Arcs are stored in
//! pairs so the reverse of arc `a` is `a ^ 1`.

use std::collections::VecDeque;
use std::mem::size_of;

const NONE: u32 = u32::MAX;
const TERMINAL: u32 = u32::MAX - 1;
const ORPHAN: u32 = u32::MAX - 2;
const INFINITE_D: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    first: u32,
    /// Arc from this node toward its parent, or one of the sentinels.
    parent: u32,
    ts: u32,
    dist: u32,
    is_sink: bool,
    active: bool,
    /// Residual terminal capacity: positive toward the source, negative
    /// toward the sink.
    tr_cap: f64,
}

#[derive(Debug, Clone)]
struct Arc {
    head: u32,
    next: u32,
    r_cap: f64,
}

/// Which side of the minimum cut a node ends up on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Source,
    Sink,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    flow: f64,
    time: u32,
    queue: VecDeque<u32>,
    orphans: VecDeque<u32>,
    solved: bool,
}

#[inline]
fn sister(a: u32) -> u32 {
    a ^ 1
}

impl Graph {
    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(nodes),
            arcs: Vec::with_capacity(edges * 2),
            ..Self::default()
        }
    }

    pub fn add_nodes(&mut self, n: usize) -> u32 {
        let first = self.nodes.len() as u32;
        self.nodes.extend((0..n).map(|_| Node {
            first: NONE,
            parent: NONE,
            ts: 0,
            dist: 0,
            is_sink: false,
            active: false,
            tr_cap: 0.0,
        }));
        first
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.arcs.len() / 2
    }

    /// Bytes held by node and arc storage.
    pub fn memory_bytes(&self) -> usize {
        self.nodes.capacity() * size_of::<Node>() + self.arcs.capacity() * size_of::<Arc>()
    }

    /// Adds capacity from the source to `i` and from `i` to the sink.
    pub fn add_tweights(&mut self, i: u32, cap_source: f64, cap_sink: f64) {
        let n = &mut self.nodes[i as usize];
        let delta = n.tr_cap;
        let (cs, ct) = if delta > 0.0 {
            (cap_source + delta, cap_sink)
        } else {
            (cap_source, cap_sink - delta)
        };
        self.flow += cs.min(ct);
        n.tr_cap = cs - ct;
    }

    /// Adds an edge with capacity `cap` from `i` to `j` and `rev_cap` back.
    pub fn add_edge(&mut self, i: u32, j: u32, cap: f64, rev_cap: f64) {
        debug_assert_ne!(i, j);
        let a = self.arcs.len() as u32;
        self.arcs.push(Arc {
            head: j,
            next: self.nodes[i as usize].first,
            r_cap: cap,
        });
        self.arcs.push(Arc {
            head: i,
            next: self.nodes[j as usize].first,
            r_cap: rev_cap,
        });
        self.nodes[i as usize].first = a;
        self.nodes[j as usize].first = a + 1;
    }

    /// Heads of the arcs leaving `i`.
    pub fn neighbors(&self, i: u32) -> Vec<u32> {
        let mut out = Vec::new();
        let mut a = self.nodes[i as usize].first;
        while a != NONE {
            out.push(self.arcs[a as usize].head);
            a = self.arcs[a as usize].next;
        }
        out
    }

    pub fn flow(&self) -> f64 {
        self.flow
    }

    /// Segment of `i` after [`Graph::maxflow`]. Nodes reachable from neither
    /// terminal are reported on the sink side.
    pub fn segment(&self, i: u32) -> Segment {
        let n = &self.nodes[i as usize];
        if n.parent != NONE && !n.is_sink {
            Segment::Source
        } else {
            Segment::Sink
        }
    }

    fn set_active(&mut self, i: u32) {
        let n = &mut self.nodes[i as usize];
        if !n.active {
            n.active = true;
            self.queue.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<u32> {
        while let Some(i) = self.queue.pop_front() {
            let n = &mut self.nodes[i as usize];
            n.active = false;
            if n.parent != NONE {
                return Some(i);
            }
        }
        None
    }

    fn set_orphan_front(&mut self, i: u32) {
        self.nodes[i as usize].parent = ORPHAN;
        self.orphans.push_front(i);
    }

    fn set_orphan_rear(&mut self, i: u32) {
        self.nodes[i as usize].parent = ORPHAN;
        self.orphans.push_back(i);
    }

    /// Computes the maximum flow; afterwards [`Graph::segment`] reports the
    /// minimum cut.
    pub fn maxflow(&mut self) -> f64 {
        if self.solved {
            return self.flow;
        }
        self.init();
        while let Some(i) = self.next_active() {
            let found = self.grow(i);
            self.time = self.time.wrapping_add(1);
            if found != NONE {
                self.augment(found);
                self.adopt_orphans();
                let n = &mut self.nodes[i as usize];
                if n.parent != NONE && !n.active {
                    n.active = true;
                    self.queue.push_front(i);
                }
            }
        }
        self.solved = true;
        self.flow
    }

    fn init(&mut self) {
        self.queue.clear();
        self.orphans.clear();
        self.time = 0;
        for i in 0..self.nodes.len() as u32 {
            let n = &mut self.nodes[i as usize];
            n.ts = 0;
            n.active = false;
            if n.tr_cap > 0.0 {
                n.is_sink = false;
                n.parent = TERMINAL;
                n.dist = 1;
            } else if n.tr_cap < 0.0 {
                n.is_sink = true;
                n.parent = TERMINAL;
                n.dist = 1;
            } else {
                n.parent = NONE;
                continue;
            }
            self.set_active(i);
        }
    }

    /// Expands the tree containing `i`; returns an arc from the source tree
    /// into the sink tree when the trees touch.
    fn grow(&mut self, i: u32) -> u32 {
        let (i_sink, i_ts, i_dist) = {
            let n = &self.nodes[i as usize];
            (n.is_sink, n.ts, n.dist)
        };
        let mut a = self.nodes[i as usize].first;
        while a != NONE {
            let arc = &self.arcs[a as usize];
            let next = arc.next;
            let j = arc.head;
            let cap = if i_sink {
                self.arcs[sister(a) as usize].r_cap
            } else {
                arc.r_cap
            };
            if cap > 0.0 {
                let nj = &self.nodes[j as usize];
                if nj.parent == NONE {
                    let nj = &mut self.nodes[j as usize];
                    nj.is_sink = i_sink;
                    nj.parent = sister(a);
                    nj.ts = i_ts;
                    nj.dist = i_dist + 1;
                    self.set_active(j);
                } else if nj.is_sink != i_sink {
                    return if i_sink { sister(a) } else { a };
                } else if nj.ts <= i_ts && nj.dist > i_dist {
                    let nj = &mut self.nodes[j as usize];
                    nj.parent = sister(a);
                    nj.ts = i_ts;
                    nj.dist = i_dist + 1;
                }
            }
            a = next;
        }
        NONE
    }

    fn augment(&mut self, middle: u32) {
        let mut bottleneck = self.arcs[middle as usize].r_cap;

        let mut i = self.arcs[sister(middle) as usize].head;
        loop {
            let a = self.nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.arcs[sister(a) as usize].r_cap);
            i = self.arcs[a as usize].head;
        }
        bottleneck = bottleneck.min(self.nodes[i as usize].tr_cap);

        let mut i = self.arcs[middle as usize].head;
        loop {
            let a = self.nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.arcs[a as usize].r_cap);
            i = self.arcs[a as usize].head;
        }
        bottleneck = bottleneck.min(-self.nodes[i as usize].tr_cap);

        self.arcs[middle as usize].r_cap -= bottleneck;
        self.arcs[sister(middle) as usize].r_cap += bottleneck;

        let mut i = self.arcs[sister(middle) as usize].head;
        loop {
            let a = self.nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            self.arcs[a as usize].r_cap += bottleneck;
            let s = &mut self.arcs[sister(a) as usize];
            s.r_cap -= bottleneck;
            if s.r_cap <= 0.0 {
                s.r_cap = 0.0;
                self.set_orphan_front(i);
            }
            i = self.arcs[a as usize].head;
        }
        let n = &mut self.nodes[i as usize];
        n.tr_cap -= bottleneck;
        if n.tr_cap <= 0.0 {
            n.tr_cap = 0.0;
            self.set_orphan_front(i);
        }

        let mut i = self.arcs[middle as usize].head;
        loop {
            let a = self.nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            self.arcs[sister(a) as usize].r_cap += bottleneck;
            let s = &mut self.arcs[a as usize];
            s.r_cap -= bottleneck;
            if s.r_cap <= 0.0 {
                s.r_cap = 0.0;
                self.set_orphan_front(i);
            }
            i = self.arcs[a as usize].head;
        }
        let n = &mut self.nodes[i as usize];
        n.tr_cap += bottleneck;
        if n.tr_cap >= 0.0 {
            n.tr_cap = 0.0;
            self.set_orphan_front(i);
        }

        self.flow += bottleneck;
    }

    fn adopt_orphans(&mut self) {
        while let Some(i) = self.orphans.pop_front() {
            self.process_orphan(i);
        }
    }

    /// Distance from `j` to its terminal, or `INFINITE_D` when the path runs
    /// into an orphan. Marks the path with the current timestamp.
    fn origin_distance(&mut self, start: u32) -> u32 {
        let mut j = start;
        let mut d: u32 = 0;
        loop {
            let n = &self.nodes[j as usize];
            if n.ts == self.time {
                d += n.dist;
                break;
            }
            let a = n.parent;
            d += 1;
            if a == TERMINAL {
                let n = &mut self.nodes[j as usize];
                n.ts = self.time;
                n.dist = 1;
                break;
            }
            if a == ORPHAN {
                return INFINITE_D;
            }
            j = self.arcs[a as usize].head;
        }
        let mut j = start;
        while self.nodes[j as usize].ts != self.time {
            let n = &mut self.nodes[j as usize];
            n.ts = self.time;
            n.dist = d;
            d -= 1;
            j = self.arcs[n.parent as usize].head;
        }
        self.nodes[start as usize].dist
    }

    fn process_orphan(&mut self, i: u32) {
        let i_sink = self.nodes[i as usize].is_sink;
        let mut best_arc = NONE;
        let mut best_d = INFINITE_D;

        let mut a0 = self.nodes[i as usize].first;
        while a0 != NONE {
            let arc = &self.arcs[a0 as usize];
            let next = arc.next;
            let j = arc.head;
            // Residual capacity along the tree direction between j and i.
            let cap = if i_sink {
                arc.r_cap
            } else {
                self.arcs[sister(a0) as usize].r_cap
            };
            let nj = &self.nodes[j as usize];
            if cap > 0.0 && nj.is_sink == i_sink && nj.parent != NONE {
                let d = self.origin_distance(j);
                if d < best_d {
                    best_d = d;
                    best_arc = a0;
                }
            }
            a0 = next;
        }

        if best_arc != NONE {
            let n = &mut self.nodes[i as usize];
            n.parent = best_arc;
            n.ts = self.time;
            n.dist = best_d + 1;
            return;
        }

        let mut a0 = self.nodes[i as usize].first;
        while a0 != NONE {
            let arc = &self.arcs[a0 as usize];
            let next = arc.next;
            let j = arc.head;
            let nj = &self.nodes[j as usize];
            if nj.is_sink == i_sink && nj.parent != NONE {
                let cap = if i_sink {
                    arc.r_cap
                } else {
                    self.arcs[sister(a0) as usize].r_cap
                };
                let pj = nj.parent;
                if cap > 0.0 {
                    self.set_active(j);
                }
                if pj != TERMINAL && pj != ORPHAN && self.arcs[pj as usize].head == i {
                    self.set_orphan_rear(j);
                }
            }
            a0 = next;
        }
        self.nodes[i as usize].parent = NONE;
    }
}
