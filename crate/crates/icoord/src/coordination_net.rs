//! Communication accounting for the semi-distributed solve.
//!
//! The three node tiers (vehicles, lane centers, intersection center) run the
//! same arithmetic as the monolithic solver; what distinguishes a distributed
//! run is which floats must cross a radio link and when. This module models
//! that: every cross-node data dependency of an iteration is recorded as a
//! message with its exact payload size, grouped into the three phases of an
//! iteration (search direction, step size, control), and priced with the
//! 802.11p airtime formula. Because the arithmetic is shared with the
//! monolithic path, the iterate sequence of a distributed run is identical by
//! construction; the ledger is a faithful byte count of what a real deployment
//! would transmit.

use crate::hier_linalg::{l_to_c_floats, v_to_c_floats, v_to_l_floats};
use crate::kkt_core::{Iterate, Problem, RecaMode};
use crate::pdip_solver::{solve, LinSolver, SolveObserver, SolveReport, SolverConfig, TraceRow};
use crate::reca_param::Q;
use crate::Result;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;

/// Node tier in the coordination hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tier {
    Vehicle,
    Lane,
    Central,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tier::Vehicle => write!(f, "vehicle"),
            Tier::Lane => write!(f, "lane"),
            Tier::Central => write!(f, "central"),
        }
    }
}

/// A node address. The central node has index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub tier: Tier,
    pub index: usize,
}

impl NodeId {
    pub fn vehicle(i: usize) -> Self {
        NodeId { tier: Tier::Vehicle, index: i }
    }
    pub fn lane(l: usize) -> Self {
        NodeId { tier: Tier::Lane, index: l }
    }
    pub fn central() -> Self {
        NodeId { tier: Tier::Central, index: 0 }
    }
}

/// Phase of an iteration a message belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    /// Condensed blocks up the tree, directions back down.
    Direction,
    /// Merit bounds and scalars for the backtracking line search.
    StepSize,
    /// Barrier/penalty bookkeeping and residual norms for termination.
    Control,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Direction => write!(f, "direction"),
            Phase::StepSize => write!(f, "step_size"),
            Phase::Control => write!(f, "control"),
        }
    }
}

/// Directed link kinds with closed-form search-direction payload sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Link {
    VehicleToLane,
    VehicleToCentral,
    LaneToCentral,
    CentralToLane,
    CentralToVehicle,
    LaneToVehicle,
}

/// Closed-form float count of the search-direction payload on a link, for a
/// vehicle crossing `n_t / 2` conflict zones over a horizon of `big_k` steps
/// (exact rear-end constraints). `n_t` is the crossing-time count of the
/// sender for vehicle links and the stacked count over the lane for lane
/// links.
///
/// The vehicle condenses its KKT block to a symmetric `(K+1) x (K+1)` core
/// over the positions, a `(K+1) x n_t` cross block, and two `(K+1)` vectors:
/// `(K+1)(K+2)/2 + (K+1) n_t + 2(K+1)` floats, which expands to
/// `K^2/2 + (n_t + 7/2) K + n_t + 3`. The lane-to-vehicle return carries the
/// lane-multiplier direction for every rear-end row the vehicle appears in:
/// `2 (K+1)` floats (both sides of one separator), not the `2 K` a node-count
/// argument would give, because the constraints hold at all `K+1` nodes.
pub fn expected_direction_floats(link: Link, big_k: usize, n_t: usize) -> usize {
    match link {
        Link::VehicleToLane => v_to_l_floats(big_k + 1, n_t),
        Link::VehicleToCentral => v_to_c_floats(n_t),
        Link::LaneToCentral => l_to_c_floats(n_t),
        Link::CentralToLane => n_t,
        Link::CentralToVehicle => n_t,
        Link::LaneToVehicle => 2 * (big_k + 1),
    }
}

/// On-air duration of one 802.11p transmission carrying `n_bits` of payload:
/// 50 us of overhead plus 8 us per 48-bit OFDM symbol, with 22 service/tail
/// bits added to the payload.
pub fn airtime_microseconds(n_bits: u64) -> u64 {
    50 + 8 * (n_bits + 22).div_ceil(48)
}

/// One recorded transmission.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MessageRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub src: NodeId,
    pub dst: NodeId,
    pub floats: usize,
}

impl MessageRecord {
    /// Payload bits at double precision.
    pub fn bits(&self) -> u64 {
        64 * self.floats as u64
    }
    pub fn airtime_us(&self) -> u64 {
        airtime_microseconds(self.bits())
    }
}

/// Ledger of every transmission of a solve, in send order.
#[derive(Debug, Clone, Default)]
pub struct CommLedger {
    pub records: Vec<MessageRecord>,
}

impl CommLedger {
    pub fn push(&mut self, iteration: usize, phase: Phase, src: NodeId, dst: NodeId, floats: usize) {
        if floats > 0 {
            self.records.push(MessageRecord { iteration, phase, src, dst, floats });
        }
    }

    pub fn total_floats(&self) -> usize {
        self.records.iter().map(|r| r.floats).sum()
    }

    pub fn total_messages(&self) -> usize {
        self.records.len()
    }

    /// Total floats sent in `phase` from tier `src` to tier `dst`.
    pub fn floats_between(&self, phase: Phase, src: Tier, dst: Tier) -> usize {
        self.records
            .iter()
            .filter(|r| r.phase == phase && r.src.tier == src && r.dst.tier == dst)
            .map(|r| r.floats)
            .sum()
    }

    /// Floats sent in `phase` from tier `src` to tier `dst` during one
    /// iteration.
    pub fn iteration_floats_between(
        &self,
        iteration: usize,
        phase: Phase,
        src: Tier,
        dst: Tier,
    ) -> usize {
        self.records
            .iter()
            .filter(|r| {
                r.iteration == iteration
                    && r.phase == phase
                    && r.src.tier == src
                    && r.dst.tier == dst
            })
            .map(|r| r.floats)
            .sum()
    }

    /// Number of recorded iterations. The solver numbers iterations from 1.
    pub fn iterations(&self) -> usize {
        self.records.iter().map(|r| r.iteration).max().unwrap_or(0)
    }

    /// Modeled time on air for one iteration assuming fully parallel links: a
    /// lower bound where each (phase, src-tier, dst-tier) leg costs its
    /// largest single transmission and the legs run back-to-back in send
    /// order.
    pub fn iteration_airtime_us(&self, iteration: usize) -> u64 {
        let mut total = 0u64;
        let mut current: Option<(Phase, Tier, Tier)> = None;
        let mut leg_max = 0u64;
        for r in self.records.iter().filter(|r| r.iteration == iteration) {
            let key = (r.phase, r.src.tier, r.dst.tier);
            if current != Some(key) {
                total += leg_max;
                leg_max = 0;
                current = Some(key);
            }
            leg_max = leg_max.max(r.airtime_us());
        }
        total + leg_max
    }

    pub fn total_airtime_us(&self) -> u64 {
        (1..=self.iterations()).map(|i| self.iteration_airtime_us(i)).sum()
    }

    /// CSV dump, one row per transmission.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "iteration,phase,src_tier,src_idx,dst_tier,dst_idx,floats,bits,airtime_us")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.iteration,
                r.phase,
                r.src.tier,
                r.src.index,
                r.dst.tier,
                r.dst.index,
                r.floats,
                r.bits(),
                r.airtime_us()
            )?;
        }
        Ok(())
    }
}

/// Shape facts the ledger needs to size the step-size and control payloads.
struct NetShape {
    /// Lane index per vehicle.
    lane_of: Vec<usize>,
    /// Crossing-time count per vehicle.
    n_t: Vec<usize>,
    /// Step-size upload size per vehicle to its lane center: the components
    /// of the primal direction the lane's merit rows read. Exact and primal
    /// rear-end constraints read the position trajectory (`K+1` floats);
    /// the dual consensus rows read the vehicle's separator-knot copies
    /// (`q` per owned copy).
    step_up_to_lane: Vec<usize>,
    /// Lanes that own constraint rows (and therefore a merit share).
    active_lanes: Vec<usize>,
}

impl NetShape {
    fn new(prob: &Problem) -> Self {
        let n = prob.n_vehicles();
        let mut lane_of = Vec::with_capacity(n);
        let mut n_t = Vec::with_capacity(n);
        let mut step_up_to_lane = Vec::with_capacity(n);
        for vb in &prob.vehicles {
            lane_of.push(vb.lane);
            n_t.push(vb.tr.n_t());
            let floats = match prob.mode {
                RecaMode::Exact | RecaMode::Primal => {
                    if vb.rear_sep.is_some() || vb.front_sep.is_some() {
                        prob.big_k() + 1
                    } else {
                        0
                    }
                }
                RecaMode::Dual => {
                    Q * (vb.rear_sep.is_some() as usize + vb.front_sep.is_some() as usize)
                }
            };
            step_up_to_lane.push(floats);
        }
        let active_lanes = (0..prob.lanes.len()).filter(|&l| prob.lanes[l].n_z > 0).collect();
        NetShape { lane_of, n_t, step_up_to_lane, active_lanes }
    }
}

/// Observer that turns the solver's data-flow callbacks into ledger rows.
pub struct LedgerObserver {
    shape: NetShape,
    pub ledger: CommLedger,
    iteration: usize,
}

impl LedgerObserver {
    pub fn new(prob: &Problem) -> Self {
        LedgerObserver { shape: NetShape::new(prob), ledger: CommLedger::default(), iteration: 0 }
    }

    pub fn into_ledger(self) -> CommLedger {
        self.ledger
    }
}

impl crate::hier_linalg::DirRecorder for LedgerObserver {
    fn v_to_l(&mut self, vehicle: usize, lane: usize, floats: usize) {
        self.ledger.push(
            self.iteration,
            Phase::Direction,
            NodeId::vehicle(vehicle),
            NodeId::lane(lane),
            floats,
        );
    }
    fn v_to_c(&mut self, vehicle: usize, floats: usize) {
        self.ledger.push(
            self.iteration,
            Phase::Direction,
            NodeId::vehicle(vehicle),
            NodeId::central(),
            floats,
        );
    }
    fn l_to_c(&mut self, lane: usize, floats: usize) {
        self.ledger.push(
            self.iteration,
            Phase::Direction,
            NodeId::lane(lane),
            NodeId::central(),
            floats,
        );
    }
    fn c_to_l(&mut self, lane: usize, floats: usize) {
        self.ledger.push(
            self.iteration,
            Phase::Direction,
            NodeId::central(),
            NodeId::lane(lane),
            floats,
        );
    }
    fn c_to_v(&mut self, vehicle: usize, floats: usize) {
        self.ledger.push(
            self.iteration,
            Phase::Direction,
            NodeId::central(),
            NodeId::vehicle(vehicle),
            floats,
        );
    }
    fn l_to_v(&mut self, lane: usize, vehicle: usize, floats: usize) {
        self.ledger.push(
            self.iteration,
            Phase::Direction,
            NodeId::lane(lane),
            NodeId::vehicle(vehicle),
            floats,
        );
    }
}

impl SolveObserver for LedgerObserver {
    fn begin_iteration(&mut self, iter: usize) {
        self.iteration = iter;
    }

    fn step_trial(&mut self, trial: usize) {
        let it = self.iteration;
        if trial == 0 {
            // One-time uploads before the backtracking loop: each vehicle
            // sends the direction components its lane's merit rows read, and
            // every merit owner sends its step bound, merit value and merit
            // slope; vehicles add their crossing-time direction so the
            // center can evaluate the scheduling rows at trial points.
            for (v, &floats) in self.shape.step_up_to_lane.iter().enumerate() {
                self.ledger.push(
                    it,
                    Phase::StepSize,
                    NodeId::vehicle(v),
                    NodeId::lane(self.shape.lane_of[v]),
                    floats,
                );
            }
            for (v, &n_t) in self.shape.n_t.iter().enumerate() {
                self.ledger.push(it, Phase::StepSize, NodeId::vehicle(v), NodeId::central(), 3 + n_t);
            }
            for &l in &self.shape.active_lanes {
                self.ledger.push(it, Phase::StepSize, NodeId::lane(l), NodeId::central(), 3);
            }
        }
        // Each trial: the center broadcasts the candidate step size, every
        // merit owner answers with its merit value at that step.
        for v in 0..self.shape.n_t.len() {
            self.ledger.push(it, Phase::StepSize, NodeId::central(), NodeId::vehicle(v), 1);
            self.ledger.push(it, Phase::StepSize, NodeId::vehicle(v), NodeId::central(), 1);
        }
        for &l in &self.shape.active_lanes {
            self.ledger.push(it, Phase::StepSize, NodeId::central(), NodeId::lane(l), 1);
            self.ledger.push(it, Phase::StepSize, NodeId::lane(l), NodeId::central(), 1);
        }
    }

    fn end_iteration(&mut self, _row: &TraceRow) {
        // Termination and penalty bookkeeping: residual and multiplier norms
        // up, accepted step / barrier / penalty parameters down. These ride
        // along with the two main phases in a deployment but are counted
        // separately since the closed forms above cover only those phases.
        let it = self.iteration;
        for v in 0..self.shape.n_t.len() {
            self.ledger.push(it, Phase::Control, NodeId::vehicle(v), NodeId::central(), 2);
        }
        for &l in &self.shape.active_lanes {
            self.ledger.push(it, Phase::Control, NodeId::lane(l), NodeId::central(), 2);
        }
        for v in 0..self.shape.n_t.len() {
            self.ledger.push(it, Phase::Control, NodeId::central(), NodeId::vehicle(v), 3);
        }
        for &l in &self.shape.active_lanes {
            self.ledger.push(it, Phase::Control, NodeId::central(), NodeId::lane(l), 3);
        }
    }
}

/// Run the solver with every cross-node dependency recorded in a ledger. The
/// iterate sequence is identical to [`solve`] with a null observer because
/// both run the same arithmetic in the same order; the observer only counts.
pub fn run_distributed_solve(
    prob: &Problem,
    cfg: &SolverConfig,
) -> Result<(Iterate, SolveReport, CommLedger)> {
    cfg.validate()?;
    let mut obs = LedgerObserver::new(prob);
    let (it, report) = solve(prob, cfg, LinSolver::Hierarchical, &mut obs);
    Ok((it, report, obs.into_ledger()))
}
