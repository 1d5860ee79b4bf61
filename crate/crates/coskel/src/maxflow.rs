//! Max-flow/min-cut on sparse graphs with terminal capacities.
//!
//! Augmenting-path solver that keeps the source and sink search trees alive
//! between augmentations (grow / augment / adopt), which is what makes
//! repeated cuts on grid graphs cheap. Terminal edges are folded into a
//! single net capacity per node; the constant part of the cut is tracked
//! separately so the returned flow equals the true minimum cut value.

use std::collections::VecDeque;

const EPS: f64 = 1e-12;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Tree {
    Free,
    Source,
    Sink,
}

/// Parent marker: attached straight to a terminal.
const TERMINAL: i64 = -2;
/// Parent marker: no parent (orphan or free).
const NONE: i64 = -1;

pub struct MaxFlow {
    // Edge arrays; edges 2k and 2k+1 are mutual reverses.
    to: Vec<u32>,
    cap: Vec<f64>,
    next: Vec<i64>,
    head: Vec<i64>,
    /// Net terminal capacity: positive is residual from the source,
    /// negative is residual towards the sink.
    tcap: Vec<f64>,
    /// Cut value contributed by cancelled source/sink pairs.
    constant: f64,

    label: Vec<Tree>,
    parent: Vec<i64>,
    ts: Vec<u64>,
    dist: Vec<u64>,
    time: u64,
}

impl MaxFlow {
    pub fn new(nodes: usize) -> Self {
        MaxFlow {
            to: Vec::new(),
            cap: Vec::new(),
            next: Vec::new(),
            head: vec![NONE; nodes],
            tcap: vec![0.0; nodes],
            constant: 0.0,
            label: vec![Tree::Free; nodes],
            parent: vec![NONE; nodes],
            ts: vec![0; nodes],
            dist: vec![0; nodes],
            time: 0,
        }
    }

    pub fn nodes(&self) -> usize {
        self.head.len()
    }

    /// Adds terminal capacities `source -> v` and `v -> sink`; the common
    /// part is paid by any cut and lands in the constant term.
    pub fn add_terminal(&mut self, v: usize, source_cap: f64, sink_cap: f64) {
        debug_assert!(source_cap >= 0.0 && sink_cap >= 0.0);
        self.constant += source_cap.min(sink_cap);
        self.tcap[v] += source_cap - sink_cap;
    }

    /// Adds the edge pair `u -> v` / `v -> u` with the given capacities.
    pub fn add_edge(&mut self, u: usize, v: usize, cap_uv: f64, cap_vu: f64) {
        debug_assert!(u != v && cap_uv >= 0.0 && cap_vu >= 0.0);
        let e = self.cap.len();
        self.to.push(v as u32);
        self.cap.push(cap_uv);
        self.next.push(self.head[u]);
        self.head[u] = e as i64;
        self.to.push(u as u32);
        self.cap.push(cap_vu);
        self.next.push(self.head[v]);
        self.head[v] = (e + 1) as i64;
    }

    fn parent_node(&self, v: usize) -> usize {
        let pe = self.parent[v] as usize;
        match self.label[v] {
            // Source tree stores the edge parent -> v.
            Tree::Source => self.to[pe ^ 1] as usize,
            // Sink tree stores the edge v -> parent.
            Tree::Sink => self.to[pe] as usize,
            Tree::Free => unreachable!(),
        }
    }

    /// Walks to the root; returns the distance when the path is rooted at a
    /// terminal, patching timestamps along the way.
    fn root_distance(&mut self, v: usize) -> Option<u64> {
        let mut path = Vec::new();
        let mut cur = v;
        loop {
            if self.ts[cur] == self.time {
                break;
            }
            match self.parent[cur] {
                TERMINAL => {
                    self.ts[cur] = self.time;
                    self.dist[cur] = 0;
                    break;
                }
                NONE => return None,
                _ => {
                    path.push(cur);
                    cur = self.parent_node(cur);
                }
            }
        }
        let mut d = self.dist[cur];
        for &n in path.iter().rev() {
            d += 1;
            self.ts[n] = self.time;
            self.dist[n] = d;
        }
        Some(self.dist[v])
    }

    /// Runs max-flow to completion and returns the minimum cut value.
    pub fn run(&mut self) -> f64 {
        let n = self.nodes();
        let mut flow = self.constant;
        let mut active: VecDeque<usize> = VecDeque::new();
        let mut orphans: VecDeque<usize> = VecDeque::new();

        for v in 0..n {
            if self.tcap[v] > EPS {
                self.label[v] = Tree::Source;
                self.parent[v] = TERMINAL;
                active.push_back(v);
            } else if self.tcap[v] < -EPS {
                self.label[v] = Tree::Sink;
                self.parent[v] = TERMINAL;
                active.push_back(v);
            }
        }

        loop {
            // Grow until the trees touch.
            let mut bridge: Option<usize> = None;
            'grow: while let Some(&p) = active.front() {
                if self.label[p] == Tree::Free {
                    active.pop_front();
                    continue;
                }
                let p_label = self.label[p];
                let mut e = self.head[p];
                while e >= 0 {
                    let eu = e as usize;
                    let q = self.to[eu] as usize;
                    let residual = match p_label {
                        Tree::Source => self.cap[eu],
                        Tree::Sink => self.cap[eu ^ 1],
                        Tree::Free => unreachable!(),
                    };
                    if residual > EPS {
                        if self.label[q] == Tree::Free {
                            self.label[q] = p_label;
                            self.parent[q] = match p_label {
                                Tree::Source => eu as i64,
                                Tree::Sink => (eu ^ 1) as i64,
                                Tree::Free => unreachable!(),
                            };
                            self.ts[q] = self.ts[p];
                            self.dist[q] = self.dist[p] + 1;
                            active.push_back(q);
                        } else if self.label[q] != p_label {
                            bridge = Some(match p_label {
                                // Bridge edge always runs source side -> sink side.
                                Tree::Source => eu,
                                Tree::Sink => eu ^ 1,
                                Tree::Free => unreachable!(),
                            });
                            break 'grow;
                        }
                    }
                    e = self.next[eu];
                }
                active.pop_front();
            }
            let Some(bridge) = bridge else { break };

            // Augment along terminal -> ... -> bridge -> ... -> terminal.
            let u = self.to[bridge ^ 1] as usize;
            let v = self.to[bridge] as usize;
            let mut bottleneck = self.cap[bridge];
            let mut x = u;
            while self.parent[x] != TERMINAL {
                bottleneck = bottleneck.min(self.cap[self.parent[x] as usize]);
                x = self.parent_node(x);
            }
            bottleneck = bottleneck.min(self.tcap[x]);
            let mut y = v;
            while self.parent[y] != TERMINAL {
                bottleneck = bottleneck.min(self.cap[self.parent[y] as usize]);
                y = self.parent_node(y);
            }
            bottleneck = bottleneck.min(-self.tcap[y]);
            debug_assert!(bottleneck > 0.0);

            self.cap[bridge] -= bottleneck;
            self.cap[bridge ^ 1] += bottleneck;
            let mut x = u;
            while self.parent[x] != TERMINAL {
                let pe = self.parent[x] as usize;
                self.cap[pe] -= bottleneck;
                self.cap[pe ^ 1] += bottleneck;
                let next = self.parent_node(x);
                if self.cap[pe] <= EPS {
                    self.parent[x] = NONE;
                    orphans.push_back(x);
                }
                x = next;
            }
            self.tcap[x] -= bottleneck;
            if self.tcap[x] <= EPS {
                self.parent[x] = NONE;
                orphans.push_back(x);
            }
            let mut y = v;
            while self.parent[y] != TERMINAL {
                let pe = self.parent[y] as usize;
                self.cap[pe] -= bottleneck;
                self.cap[pe ^ 1] += bottleneck;
                let next = self.parent_node(y);
                if self.cap[pe] <= EPS {
                    self.parent[y] = NONE;
                    orphans.push_back(y);
                }
                y = next;
            }
            self.tcap[y] += bottleneck;
            if self.tcap[y] >= -EPS {
                self.parent[y] = NONE;
                orphans.push_back(y);
            }
            flow += bottleneck;

            // Adopt orphans or free them.
            self.time += 1;
            while let Some(o) = orphans.pop_front() {
                let o_label = self.label[o];
                let mut best: Option<(u64, usize)> = None;
                let mut e = self.head[o];
                while e >= 0 {
                    let eu = e as usize;
                    let q = self.to[eu] as usize;
                    if self.label[q] == o_label {
                        let residual = match o_label {
                            // A new parent must be able to feed o.
                            Tree::Source => self.cap[eu ^ 1],
                            Tree::Sink => self.cap[eu],
                            Tree::Free => unreachable!(),
                        };
                        if residual > EPS {
                            if let Some(d) = self.root_distance(q) {
                                let pe = match o_label {
                                    Tree::Source => eu ^ 1,
                                    Tree::Sink => eu,
                                    Tree::Free => unreachable!(),
                                };
                                if best.map_or(true, |(bd, _)| d < bd) {
                                    best = Some((d, pe));
                                }
                            }
                        }
                    }
                    e = self.next[eu];
                }
                match best {
                    Some((d, pe)) => {
                        self.parent[o] = pe as i64;
                        self.ts[o] = self.time;
                        self.dist[o] = d + 1;
                    }
                    None => {
                        // No valid parent: o leaves the tree; neighbors that
                        // hung off it become orphans, touching neighbors with
                        // residual edges may regrow towards it later.
                        let mut e = self.head[o];
                        while e >= 0 {
                            let eu = e as usize;
                            let q = self.to[eu] as usize;
                            if self.label[q] == o_label {
                                let feeds = match o_label {
                                    Tree::Source => self.cap[eu ^ 1],
                                    Tree::Sink => self.cap[eu],
                                    Tree::Free => unreachable!(),
                                };
                                if feeds > EPS {
                                    active.push_back(q);
                                }
                                if self.parent[q] >= 0 && self.parent_node(q) == o {
                                    self.parent[q] = NONE;
                                    orphans.push_back(q);
                                }
                            }
                            e = self.next[eu];
                        }
                        self.label[o] = Tree::Free;
                    }
                }
            }
        }
        flow
    }

    /// Minimum-cut source side, computed by residual reachability from every
    /// node that still has source capacity. Call after `run`.
    pub fn source_side(&self) -> Vec<bool> {
        let n = self.nodes();
        let mut side = vec![false; n];
        let mut queue = VecDeque::new();
        for v in 0..n {
            if self.tcap[v] > EPS {
                side[v] = true;
                queue.push_back(v);
            }
        }
        while let Some(v) = queue.pop_front() {
            let mut e = self.head[v];
            while e >= 0 {
                let eu = e as usize;
                let q = self.to[eu] as usize;
                if !side[q] && self.cap[eu] > EPS {
                    side[q] = true;
                    queue.push_back(q);
                }
                e = self.next[eu];
            }
        }
        side
    }
}
