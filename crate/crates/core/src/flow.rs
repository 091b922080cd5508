//! Centralized scheduler: stripe requests matched to holders by max-flow.
//!
//! Node layout of a [`FlowNetwork`]: source `0`, sink `1`, then one node per
//! stripe request, then one node per distinct holder box.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use thiserror::Error;

use crate::allocation::AllocationMap;
use crate::maxflow::Dinic;
use crate::model::{BoxId, Rate, StripeId};
use crate::state::{ConnKind, PlaybackId, SimState};

pub const SOURCE: usize = 0;
pub const SINK: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowRequest {
    pub downloader: BoxId,
    pub playback: PlaybackId,
    pub stripe: StripeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowArc {
    pub from: usize,
    pub to: usize,
    pub capacity: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowNetwork {
    pub requests: Vec<FlowRequest>,
    /// Distinct holder boxes, one node each.
    pub boxes: Vec<BoxId>,
    /// Upload slots per entry of `boxes`.
    pub box_capacity: Vec<i64>,
    pub arcs: Vec<FlowArc>,
    /// Holder box nodes per request, as indices into `boxes`.
    neighbors: Vec<Vec<usize>>,
}

impl FlowNetwork {
    /// Bipartite network from per-request holder lists.
    pub fn bipartite(
        requests: Vec<FlowRequest>,
        holders: &[Vec<BoxId>],
        capacity: impl Fn(BoxId) -> i64,
    ) -> Self {
        assert_eq!(requests.len(), holders.len());
        let mut boxes: Vec<BoxId> = holders.iter().flatten().copied().collect();
        boxes.sort_unstable();
        boxes.dedup();
        let pos: BTreeMap<BoxId, usize> = boxes.iter().enumerate().map(|(i, b)| (*b, i)).collect();
        let r = requests.len();
        let mut arcs = Vec::new();
        let mut neighbors = Vec::with_capacity(r);
        for (i, hs) in holders.iter().enumerate() {
            arcs.push(FlowArc {
                from: SOURCE,
                to: 2 + i,
                capacity: 1,
            });
            let mut nb: Vec<usize> = hs.iter().map(|b| pos[b]).collect();
            nb.sort_unstable();
            nb.dedup();
            for &j in &nb {
                arcs.push(FlowArc {
                    from: 2 + i,
                    to: 2 + r + j,
                    capacity: 1,
                });
            }
            neighbors.push(nb);
        }
        let box_capacity: Vec<i64> = boxes.iter().map(|b| capacity(*b)).collect();
        for (j, c) in box_capacity.iter().enumerate() {
            arcs.push(FlowArc {
                from: 2 + r + j,
                to: SINK,
                capacity: *c,
            });
        }
        Self {
            requests,
            boxes,
            box_capacity,
            arcs,
            neighbors,
        }
    }

    pub fn node_count(&self) -> usize {
        2 + self.requests.len() + self.boxes.len()
    }

    pub fn request_node(&self, i: usize) -> usize {
        2 + i
    }

    pub fn box_node(&self, j: usize) -> usize {
        2 + self.requests.len() + j
    }

    /// Holder boxes of request `i`.
    pub fn holders_of(&self, i: usize) -> impl Iterator<Item = BoxId> + '_ {
        self.neighbors[i].iter().map(|&j| self.boxes[j])
    }

    /// One arc per line: `from to capacity flow`.
    pub fn to_text(&self, flow: Option<&FlowResult>) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# source=0 sink=1 requests=2..{} boxes={}..{}",
            2 + self.requests.len(),
            2 + self.requests.len(),
            self.node_count()
        );
        for (i, a) in self.arcs.iter().enumerate() {
            let f = flow.map_or(0, |f| f.arc_flow[i]);
            let _ = writeln!(out, "{} {} {} {}", a.from, a.to, a.capacity, f);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowResult {
    pub value: i64,
    /// Flow per entry of `FlowNetwork::arcs`.
    pub arc_flow: Vec<i64>,
    /// Source side of a minimum cut.
    pub source_side: Vec<bool>,
}

pub fn max_flow(net: &FlowNetwork) -> FlowResult {
    let mut d = Dinic::new(net.node_count());
    let handles: Vec<usize> = net
        .arcs
        .iter()
        .map(|a| d.add_edge(a.from, a.to, a.capacity))
        .collect();
    let value = d.max_flow(SOURCE, SINK);
    FlowResult {
        value,
        arc_flow: handles.iter().map(|&h| d.flow(h)).collect(),
        source_side: d.reachable(SOURCE),
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("stripe {stripe} requested by box {downloader} has no holder")]
pub struct Unschedulable {
    pub stripe: StripeId,
    pub downloader: BoxId,
}

/// Request graph over every stripe of every playback in progress.
pub fn build_request_graph(
    state: &SimState,
    alloc: &AllocationMap,
) -> Result<FlowNetwork, Unschedulable> {
    let net = request_graph_where(state, alloc, |_, _| true);
    for (i, r) in net.requests.iter().enumerate() {
        if net.neighbors[i].is_empty() {
            return Err(Unschedulable {
                stripe: r.stripe,
                downloader: r.downloader,
            });
        }
    }
    Ok(net)
}

/// Holders of `stripe` for `b` at `position`: active allocation holders plus
/// active caches far enough ahead, never `b` itself.
pub fn holders_for(
    state: &SimState,
    alloc: &AllocationMap,
    b: BoxId,
    stripe: StripeId,
    position: u64,
) -> Vec<BoxId> {
    let mut hs: Vec<BoxId> = alloc
        .holders(stripe)
        .iter()
        .copied()
        .filter(|&h| h != b && state.is_active(h))
        .collect();
    hs.extend(
        state
            .index
            .cache_holders(stripe.video)
            .filter(|&h| h != b && state.is_active(h))
            .filter(|&h| state.has_data_ahead(h, stripe.video, position)),
    );
    hs.sort_unstable();
    hs.dedup();
    hs
}

/// Request graph restricted to playbacks accepted by `include`.
pub fn request_graph_where(
    state: &SimState,
    alloc: &AllocationMap,
    include: impl Fn(BoxId, PlaybackId) -> bool,
) -> FlowNetwork {
    let mut requests = Vec::new();
    let mut holders = Vec::new();
    for (b, bx) in state.boxes().iter().enumerate() {
        if !bx.is_active() {
            continue;
        }
        for p in &bx.playbacks {
            if !include(b, p.id) {
                continue;
            }
            let pos = state.position(p);
            for stripe in 0..state.s() {
                let st = StripeId::new(p.video, stripe);
                requests.push(FlowRequest {
                    downloader: b,
                    playback: p.id,
                    stripe: st,
                });
                holders.push(holders_for(state, alloc, b, st, pos));
            }
        }
    }
    FlowNetwork::bipartite(requests, &holders, |b| state.upload_slots(b) as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub downloader: BoxId,
    pub playback: PlaybackId,
    pub uploader: BoxId,
    pub stripe: StripeId,
    pub kind: ConnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConnectionAssignment {
    pub links: Vec<Link>,
}

impl ConnectionAssignment {
    /// Every link carries one stripe, i.e. rate `1/s`.
    pub fn rate(s: u32) -> Rate {
        Ratio::new(1, s as i64)
    }

    pub fn per_uploader(&self) -> BTreeMap<BoxId, usize> {
        let mut m = BTreeMap::new();
        for l in &self.links {
            *m.entry(l.uploader).or_default() += 1;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("only {flow} of {demand} stripe requests can be served")]
pub struct Infeasible {
    pub flow: i64,
    pub demand: i64,
    /// Requests whose holders together have fewer than `|S|` slots.
    pub witness: Option<Vec<FlowRequest>>,
}

/// Decodes unit flows from request to box nodes into links.
pub fn decode(net: &FlowNetwork, flow: &FlowResult, alloc: &AllocationMap) -> ConnectionAssignment {
    let r = net.requests.len();
    let mut links = Vec::new();
    for (i, a) in net.arcs.iter().enumerate() {
        if flow.arc_flow[i] > 0 && a.from >= 2 && a.from < 2 + r && a.to >= 2 + r {
            let req = net.requests[a.from - 2];
            let uploader = net.boxes[a.to - 2 - r];
            let kind = if alloc.holds(uploader, req.stripe) {
                ConnKind::Seed
            } else {
                ConnKind::Cache
            };
            links.push(Link {
                downloader: req.downloader,
                playback: req.playback,
                uploader,
                stripe: req.stripe,
                kind,
            });
        }
    }
    ConnectionAssignment { links }
}

/// Requests on the source side of the min cut; a Hall obstruction whenever
/// the flow does not saturate.
pub fn cut_witness(net: &FlowNetwork, flow: &FlowResult) -> Option<Vec<usize>> {
    let side: Vec<usize> = (0..net.requests.len())
        .filter(|&i| flow.source_side[net.request_node(i)])
        .collect();
    let mut nb: Vec<usize> = side.iter().flat_map(|&i| net.neighbors[i].iter().copied()).collect();
    nb.sort_unstable();
    nb.dedup();
    let cap: i64 = nb.iter().map(|&j| net.box_capacity[j]).sum();
    (!side.is_empty() && cap < side.len() as i64).then_some(side)
}

/// Runs max-flow on an already built network.
pub fn schedule_network(
    net: &FlowNetwork,
    alloc: &AllocationMap,
) -> Result<ConnectionAssignment, Infeasible> {
    let flow = max_flow(net);
    let demand = net.requests.len() as i64;
    if flow.value == demand {
        return Ok(decode(net, &flow, alloc));
    }
    let witness = cut_witness(net, &flow).map(|w| w.iter().map(|&i| net.requests[i]).collect());
    Err(Infeasible {
        flow: flow.value,
        demand,
        witness,
    })
}

/// Serves every stripe request in progress, or reports an obstruction.
pub fn schedule_maxflow(
    state: &SimState,
    alloc: &AllocationMap,
) -> Result<ConnectionAssignment, Infeasible> {
    let net = request_graph_where(state, alloc, |_, _| true);
    schedule_network(&net, alloc)
}

pub const EXPANDER_LIMIT: usize = 20;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{0} requests exceed the exhaustive limit of {EXPANDER_LIMIT}")]
pub struct TooLarge(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpanderCheck {
    pub holds: bool,
    /// Smallest request subset whose neighborhood has fewer than `|U'|`
    /// slots, as indices into `FlowNetwork::requests`.
    pub violating: Option<Vec<usize>>,
}

/// Exhaustive Hall check: every subset `U'` of requests must see at least
/// `|U'|` upload slots among its neighbors. `capacity` gives the per-box
/// slot count.
pub fn check_expander(
    net: &FlowNetwork,
    capacity: impl Fn(BoxId) -> i64,
) -> Result<ExpanderCheck, TooLarge> {
    let r = net.requests.len();
    if r > EXPANDER_LIMIT {
        return Err(TooLarge(r));
    }
    let words = net.boxes.len().div_ceil(64).max(1);
    let caps: Vec<i64> = net.boxes.iter().map(|b| capacity(*b)).collect();
    let mut single = vec![0u64; r * words];
    for i in 0..r {
        for &j in &net.neighbors[i] {
            single[i * words + j / 64] |= 1 << (j % 64);
        }
    }
    let subsets = 1usize << r;
    let mut masks = vec![0u64; subsets * words];
    let mut best: Option<(u32, usize)> = None;
    for set in 1..subsets {
        let low = set.trailing_zeros() as usize;
        let prev = set & (set - 1);
        for w in 0..words {
            masks[set * words + w] = masks[prev * words + w] | single[low * words + w];
        }
        let mut cap = 0i64;
        for w in 0..words {
            let mut bits = masks[set * words + w];
            while bits != 0 {
                let j = w * 64 + bits.trailing_zeros() as usize;
                cap += caps[j];
                bits &= bits - 1;
            }
        }
        let size = set.count_ones();
        if cap < size as i64 && best.is_none_or(|(s, _)| size < s) {
            best = Some((size, set));
        }
    }
    Ok(match best {
        None => ExpanderCheck {
            holds: true,
            violating: None,
        },
        Some((_, set)) => ExpanderCheck {
            holds: false,
            violating: Some((0..r).filter(|i| set >> i & 1 == 1).collect()),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::allocate_regular;
    use crate::model::{EventKind, SimEvent, SystemConfig};

    fn reqs(n: usize) -> Vec<FlowRequest> {
        (0..n)
            .map(|i| FlowRequest {
                downloader: 100 + i,
                playback: PlaybackId(i as u64),
                stripe: StripeId::new(0, i as u32),
            })
            .collect()
    }

    #[test]
    fn one_request_one_holder_has_three_arcs() {
        let net = FlowNetwork::bipartite(reqs(1), &[vec![4]], |_| 1);
        assert_eq!(net.arcs.len(), 3);
        assert_eq!(max_flow(&net).value, 1);
    }

    #[test]
    fn shared_holder_capacity() {
        let net = FlowNetwork::bipartite(reqs(2), &[vec![0], vec![0]], |_| 1);
        assert_eq!(max_flow(&net).value, 1);
        let c = check_expander(&net, |_| 1).unwrap();
        assert!(!c.holds);
        assert_eq!(c.violating, Some(vec![0, 1]));

        let net = FlowNetwork::bipartite(reqs(2), &[vec![0], vec![0]], |_| 2);
        assert_eq!(max_flow(&net).value, 2);
        assert!(check_expander(&net, |_| 2).unwrap().holds);
    }

    #[test]
    fn expander_size_guard() {
        let hs: Vec<Vec<BoxId>> = (0..21).map(|_| vec![0]).collect();
        let net = FlowNetwork::bipartite(reqs(21), &hs, |_| 30);
        assert_eq!(check_expander(&net, |_| 30), Err(TooLarge(21)));
    }

    #[test]
    fn witness_is_minimal() {
        // request 2 alone has no holder
        let net = FlowNetwork::bipartite(reqs(3), &[vec![0], vec![1], vec![]], |_| 1);
        let c = check_expander(&net, |_| 1).unwrap();
        assert_eq!(c.violating, Some(vec![2]));
    }

    #[test]
    fn cut_witness_is_an_obstruction() {
        let net = FlowNetwork::bipartite(
            reqs(4),
            &[vec![0], vec![0, 1], vec![1], vec![2]],
            |_| 1,
        );
        let f = max_flow(&net);
        assert_eq!(f.value, 3);
        let w = cut_witness(&net, &f).unwrap();
        let nb: std::collections::BTreeSet<_> =
            w.iter().flat_map(|&i| net.holders_of(i)).collect();
        assert!(nb.len() < w.len());
    }

    #[test]
    fn text_dump_lists_arcs() {
        let net = FlowNetwork::bipartite(reqs(1), &[vec![4]], |_| 2);
        let f = max_flow(&net);
        let text = net.to_text(Some(&f));
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("\n0 2 1 1\n"));
        assert!(text.ends_with("3 1 2 1\n"));
    }

    fn playing_state(n: usize, s: u32) -> (SystemConfig, SimState) {
        let u = crate::model::Rate::new(s as i64 + 1, s as i64);
        let cfg = SystemConfig::homogeneous(n, u, crate::model::Rate::from_integer(1), s, 1, n as u32);
        let st = SimState::new(&cfg);
        (cfg, st)
    }

    #[test]
    fn request_nodes_per_playing_box() {
        let (cfg, mut st) = playing_state(100, 15);
        let alloc = allocate_regular(&cfg, 3).unwrap();
        for b in 0..100 {
            st.apply_event(&SimEvent::new(0, b, EventKind::Start(b as u32))).unwrap();
        }
        let net = request_graph_where(&st, &alloc, |_, _| true);
        assert_eq!(net.requests.len(), 1500);
    }

    #[test]
    fn sole_holder_cannot_serve_itself() {
        // one box holds everything; it requests its own video
        let mut cfg = SystemConfig::homogeneous(
            2,
            crate::model::Rate::from_integer(1),
            crate::model::Rate::from_integer(1),
            1,
            1,
            2,
        );
        cfg.storage = vec![crate::model::Rate::from_integer(2), crate::model::Rate::from_integer(0)];
        let alloc = allocate_regular(&cfg, 0).unwrap();
        let mut st = SimState::new(&cfg);
        st.apply_event(&SimEvent::new(0, 0, EventKind::Start(0))).unwrap();
        assert_eq!(
            build_request_graph(&st, &alloc),
            Err(Unschedulable {
                stripe: StripeId::new(0, 0),
                downloader: 0
            })
        );
        let err = schedule_maxflow(&st, &alloc).unwrap_err();
        assert_eq!(err.witness.unwrap().len(), 1);
    }
}
